import numpy as np
import pytest
from hypothesis import given, strategies as st

from qnas.errors import SpecError
from qnas.grad import TrainConfig, train
from qnas.qstate import GateKind
from qnas.space import (SubCircuitSpec, block_lower_bound, build_supercircuit, check_spec, design_space, instantiate,
                        layer_diff, sample_front, sample_restricted, space_cardinality, train_supercircuit)
from qnas.tasks import ENCODERS, QMLTask, VQETask, bundled_hamiltonian, qml_scores, synthetic_dataset

SPACES = ["U3+CU3", "ZZ+RY", "RXYZ", "ZX+XX", "RXYZ+U1+CU3", "IBMQ-Basis"]


def front_legal(sc, spec):
    check_spec(sc.space, spec)
    ids = instantiate(sc, spec).gate_ids
    # every kept gate's predecessors in its layer are kept too, and inactive blocks emit nothing
    kept = set(ids)
    for (b, li, p), gi in sc.index.items():
        if gi in kept and b >= 0:
            assert b < spec.n_blocks
            assert all(sc.index[(b, li, q)] in kept for q in range(p))
    return True


def test_u3cu3_counts():
    sc = build_supercircuit(design_space("U3+CU3", 4, 8))
    assert len(sc.circuit) == 64 and sc.n_params == 192


def test_zzry_one_block():
    sc = build_supercircuit(design_space("ZZ+RY", 4, 1))
    kinds = [g.kind for g in sc.circuit.gates]
    assert kinds == [GateKind.RZZ] * 4 + [GateKind.RY] * 4


def test_rxyz_prefix():
    sc = build_supercircuit(design_space("RXYZ", 4, 2))
    assert [g.kind for g in sc.circuit.gates[:4]] == [GateKind.SH] * 4
    assert sum(g.kind is GateKind.SH for g in sc.circuit.gates) == 4


def test_space_defaults_and_templates():
    assert design_space("RXYZ+U1+CU3", 4).n_blocks == 4
    assert design_space("IBMQ-Basis", 4).n_blocks == 20
    assert not design_space("IBMQ-Basis", 4).front_sampling
    assert design_space("ZX+XX", 4).layers == (GateKind.RZX, GateKind.RXX)
    assert design_space("rxyz+u1+cu3", 4).n_layers == 11
    with pytest.raises(SpecError):
        design_space("nope", 4)


def test_cardinality():
    assert space_cardinality(design_space("RXYZ+U1+CU3", 4, 4)) == 4 ** 44
    one = design_space("U3+CU3", 4, 1)
    assert space_cardinality(type(one)("t", 4, 1, (GateKind.RY,))) == 4
    assert space_cardinality(type(one)("t", 2, 2, (GateKind.RY, GateKind.RX))) == 16


def test_gate_order_is_block_layer_qubit_major():
    sc = build_supercircuit(design_space("U3+CU3", 3, 2))
    keys = sorted(sc.index, key=sc.index.get)
    assert keys == sorted(keys)


def test_spec_text_round_trip():
    spec = SubCircuitSpec(2, ((4, 3), (1, 2), (4, 4)))
    assert str(spec) == "blocks=2; widths=4:3,1:2,4:4"
    assert SubCircuitSpec.parse(str(spec)) == spec
    with pytest.raises(SpecError):
        SubCircuitSpec.parse("blocks=2")


def test_check_spec_rejects():
    space = design_space("U3+CU3", 4, 2)
    with pytest.raises(SpecError):
        check_spec(space, SubCircuitSpec(3, ((1, 1), (1, 1))))
    with pytest.raises(SpecError):
        check_spec(space, SubCircuitSpec(1, ((5, 1), (1, 1))))


def test_instantiate_full_is_supercircuit():
    sc = build_supercircuit(design_space("U3+CU3", 4, 3))
    view = instantiate(sc, SubCircuitSpec.full(sc.space))
    assert view.circuit == sc.circuit
    np.testing.assert_array_equal(view.slots, np.arange(sc.n_params))


def test_cu3_width_two_keeps_front_pairs():
    sc = build_supercircuit(design_space("U3+CU3", 4, 1))
    view = instantiate(sc, SubCircuitSpec(1, ((4, 2),)))
    cu3 = [g.wires for g in view.circuit.gates if g.kind is GateKind.CU3]
    assert cu3 == [(0, 1), (1, 2)]


def test_inactive_blocks_emit_nothing():
    sc = build_supercircuit(design_space("U3+CU3", 4, 3))
    view = instantiate(sc, SubCircuitSpec(1, ((4, 4),) * 3))
    assert len(view.circuit) == 8


def test_views_alias_shared_storage():
    sc = build_supercircuit(design_space("U3+CU3", 4, 2))
    a = instantiate(sc, SubCircuitSpec(1, ((2, 1), (4, 4))))
    b = instantiate(sc, SubCircuitSpec(2, ((3, 3), (1, 1))))
    new = a.params.copy()
    new[0] = 1.234
    a.set_params(new)
    assert b.params[0] == 1.234 and sc.params[a.slots[0]] == 1.234


def test_layer_diff_counts_inactive_blocks():
    a = SubCircuitSpec(2, ((4, 4), (4, 4), (4, 4)))
    b = SubCircuitSpec(3, ((4, 3), (4, 4), (1, 1)))
    assert layer_diff(a, b) == 1 + 2
    assert layer_diff(a, a) == 0


@pytest.mark.parametrize("name", SPACES[:5])
def test_front_samples_are_legal(name, rng):
    sc = build_supercircuit(design_space(name, 4, 3))
    for _ in range(30):
        assert front_legal(sc, sample_front(sc, rng))


def test_front_sampling_coverage_and_bounds():
    sc = build_supercircuit(design_space("U3+CU3", 4, 3))
    rng = np.random.default_rng(0)
    widths = np.array([sample_front(sc, rng).widths for _ in range(10_000)])
    for b in range(3):
        for li in range(2):
            assert set(widths[:, b, li]) == {1, 2, 3, 4}
    assert all(sample_front(sc, rng, lower_bound=3).n_blocks == 3 for _ in range(50))
    a = sample_front(sc, np.random.default_rng(5))
    assert a == sample_front(sc, np.random.default_rng(5))


def test_restricted_zero_limit_returns_prev(rng):
    sc = build_supercircuit(design_space("U3+CU3", 4, 4))
    prev = sample_front(sc, rng)
    assert sample_restricted(sc, prev, rng, max_layer_diff=0) is prev


@pytest.mark.parametrize("name,limit", [("U3+CU3", 7), ("RXYZ+U1+CU3", 7), ("U3+CU3", 1)])
def test_restricted_bound_holds(name, limit):
    sc = build_supercircuit(design_space(name, 4), max_layer_diff=limit)
    rng = np.random.default_rng(0)
    prev = SubCircuitSpec.full(sc.space)
    depths = set()
    for _ in range(500):
        spec = sample_restricted(sc, prev, rng)
        assert layer_diff(prev, spec) <= limit
        check_spec(sc.space, spec)
        depths.add(spec.n_blocks)
        prev = spec
    # a depth step costs a whole block of layers
    if sc.space.n_layers <= limit:
        assert len(depths) > 1
    else:
        assert depths == {sc.space.n_blocks}


def test_restricted_respects_lower_bound():
    sc = build_supercircuit(design_space("U3+CU3", 4, 8))
    rng = np.random.default_rng(1)
    prev = SubCircuitSpec.full(sc.space)
    for _ in range(200):
        prev = sample_restricted(sc, prev, rng, lower_bound=6)
        assert prev.n_blocks >= 6


@given(st.integers(1, 1000), st.integers(1, 20))
def test_block_lower_bound_schedule(total, n_blocks):
    assert block_lower_bound(0, total, n_blocks) == n_blocks or total < 2
    assert block_lower_bound(total, total, n_blocks) == 1
    vals = [block_lower_bound(s, total, n_blocks) for s in range(total + 1)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))
    assert all(1 <= v <= n_blocks for v in vals)


def small_task(seed=0, n=80):
    return QMLTask(synthetic_dataset(n, 2, 16, seed=seed), ENCODERS["4x4_ryzxy"])


def test_training_updates_only_sampled_slots():
    sc = build_supercircuit(design_space("U3+CU3", 4, 3))
    before = sc.params.copy()
    task = small_task()
    _, hist = train_supercircuit(sc, task, TrainConfig(lr0=0.05, steps=1, batch_size=16))
    view = instantiate(sc, SubCircuitSpec.parse(hist[0]["spec"]))
    untouched = np.setdiff1d(np.arange(sc.n_params), view.slots)
    np.testing.assert_array_equal(sc.params[untouched], before[untouched])
    assert np.any(sc.params[view.slots] != before[view.slots])


def test_full_circuit_training_equals_plain_train():
    sc = build_supercircuit(design_space("IBMQ-Basis", 2, 2), seed=3)
    task = VQETask(bundled_hamiltonian("h2"))
    cfg = TrainConfig(lr0=0.05, steps=20, seed=3)
    p0 = sc.params.copy()
    train_supercircuit(sc, task, cfg)
    ref, _ = train(sc.circuit, task, cfg, p0)
    np.testing.assert_array_equal(sc.params, ref)


def test_training_log_respects_restriction():
    sc = build_supercircuit(design_space("U3+CU3", 4, 4), max_layer_diff=3)
    _, hist = train_supercircuit(sc, small_task(), TrainConfig(lr0=0.05, epochs=3, batch_size=8))
    assert max(r["layer_diff"] for r in hist) <= 3
    specs = [SubCircuitSpec.parse(r["spec"]) for r in hist]
    assert specs[0].n_blocks == 4


def test_training_improves_inherited_loss():
    task = small_task(n=150)
    sc = build_supercircuit(design_space("U3+CU3", 4, 2), seed=0)
    rng = np.random.default_rng(9)
    specs = [sample_front(sc, rng) for _ in range(20)]

    def median_loss():
        return np.median([qml_scores(instantiate(sc, s).circuit, instantiate(sc, s).params, task)["loss"]
                          for s in specs])

    before = median_loss()
    train_supercircuit(sc, task, TrainConfig(lr0=0.05, epochs=15, batch_size=32))
    assert median_loss() < before
