import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qnas.grad import TrainConfig, evaluate, train
from qnas.noise import bundled_device
from qnas.prune import PruneMask, PruneSchedule, prune_finetune, prune_ratio, select_mask, sweep_ratios
from qnas.qcompile import QubitMapping, circuit_stats, route
from qnas.qstate import Circuit, Gate, GateKind, PauliString
from qnas.space import SubCircuitSpec, build_supercircuit, design_space, instantiate
from qnas.tasks import ENCODERS, Hamiltonian, QMLTask, VQETask, qml_scores, synthetic_dataset


def toy():
    """RY(t0) then RZ(t1) measured in Z: the RZ angle cannot matter."""
    c = Circuit(1, [Gate(GateKind.RY, (0,), (0.0,), (0,)), Gate(GateKind.RZ, (0,), (0.0,), (1,))], 2)
    return c, VQETask(Hamiltonian((PauliString({0: "Z"}),), 1))


def test_schedule_endpoints_and_midpoint():
    s = PruneSchedule(total=200, r_final=0.5, r_initial=0.05)
    assert s.s_end == 100
    assert prune_ratio(0, s) == 0.05
    assert prune_ratio(100, s) == 0.5
    assert prune_ratio(150, s) == 0.5
    assert prune_ratio(50, s) == pytest.approx(0.443750, abs=1e-12)


@given(st.floats(0, 1), st.floats(0, 1), st.integers(2, 500))
def test_schedule_monotone(a, b, total):
    lo, hi = sorted((a, b))
    s = PruneSchedule(total, hi, lo)
    vals = [prune_ratio(t, s) for t in range(total + 1)]
    assert all(x <= y + 1e-15 for x, y in zip(vals, vals[1:]))


def test_schedule_validation():
    with pytest.raises(ValueError):
        PruneSchedule(100, r_final=0.1, r_initial=0.2)
    with pytest.raises(ValueError):
        PruneSchedule(100, s_begin=50, s_end=40)


def test_select_mask_examples():
    params = np.array([0.01, -3.0, 2 * math.pi + 0.005, 1.5])
    assert select_mask(params, 0.5).pruned.tolist() == [True, False, True, False]
    prev = PruneMask(np.array([False, True, False, False]))
    assert select_mask(params, 0.0, prev).pruned.tolist() == prev.pruned.tolist()
    assert select_mask(params, 1.0).count == 4
    assert select_mask(params, 0.5, prev).pruned.tolist() == [False, True, True, False]


def test_select_mask_ties_to_lower_slot():
    assert select_mask(np.array([0.2, 0.1, 0.1, 0.1]), 0.5).pruned.tolist() == [False, True, True, False]


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=30), st.floats(0, 1), st.floats(0, 1))
def test_select_mask_properties(params, r1, r2):
    params = np.array(params)
    lo, hi = sorted((r1, r2))
    a = select_mask(params, lo)
    b = select_mask(params, hi, a)
    assert a.count == math.floor(lo * len(params) + 1e-9)
    assert b.count == math.floor(hi * len(params) + 1e-9)
    assert np.all(b.pruned[a.pruned])


def test_mask_bits_round_trip():
    m = PruneMask(np.array([True, False, False, True]))
    assert m.to_bits() == "1001"
    assert PruneMask.from_bits("1001").pruned.tolist() == m.pruned.tolist()


def test_zero_ratio_is_plain_finetune():
    c, task = toy()
    cfg = TrainConfig(lr0=0.1, steps=30, weight_decay=0.0)
    p0 = np.array([0.3, 0.7])
    pruned, mask, _ = prune_finetune(c, task, PruneSchedule(30, 0.0, 0.0), cfg, p0)
    plain, _ = train(c, task, cfg, p0)
    assert mask.count == 0
    np.testing.assert_array_equal(pruned, plain)


def test_toy_prunes_redundant_slot():
    c, task = toy()
    cfg = TrainConfig(lr0=0.1, steps=200, weight_decay=0.0)
    trained, _ = train(c, task, cfg, np.array([0.3, 0.7]))
    base = evaluate(c, task.objective, trained, None)
    pruned, mask, hist = prune_finetune(c, task, PruneSchedule.for_ratio(60, 0.5), TrainConfig(lr0=0.05, steps=60),
                                        trained)
    assert mask.pruned.tolist() == [False, True]
    assert pruned[1] == 0.0
    assert evaluate(c, task.objective, pruned, None) == pytest.approx(base, abs=1e-3)
    assert len(hist) == 60


@pytest.fixture(scope="module")
def qml_case():
    task = QMLTask(synthetic_dataset(120, 2, 16, seed=0), ENCODERS["4x4_ryzxy"])
    sc = build_supercircuit(design_space("U3+CU3", 4, 2))
    c = instantiate(sc, SubCircuitSpec.full(sc.space)).circuit
    p, _ = train(c, task, TrainConfig(lr0=0.05, epochs=5, batch_size=32))
    return c, task, p


def test_pruned_slots_are_exact_zeros(qml_case):
    c, task, p = qml_case
    sched = PruneSchedule.for_ratio(4 * 4, 0.3)
    out, mask, hist = prune_finetune(c, task, sched, TrainConfig(lr0=0.01, epochs=4, batch_size=32), p)
    assert mask.count == math.floor(0.3 * c.n_params)
    assert np.all(out[mask.pruned] == 0.0)
    assert np.all(out[~mask.pruned] != 0.0)
    counts = [r["pruned"] for r in hist]
    assert all(a <= b for a, b in zip(counts, counts[1:]))


def test_pruning_shrinks_compiled_circuit(qml_case):
    c, task, p = qml_case
    dev = bundled_device("t5")
    out, _, _ = prune_finetune(c, task, PruneSchedule.for_ratio(16, 0.5), TrainConfig(lr0=0.01, epochs=4,
                                                                                      batch_size=32), p)
    m = QubitMapping((0, 1, 3, 4))
    assert circuit_stats(route(c, m, dev, out))["n_1q"] < circuit_stats(route(c, m, dev, p))["n_1q"]


def test_sweep_on_toy():
    c, task = toy()
    trained, _ = train(c, task, TrainConfig(lr0=0.1, steps=200, weight_decay=0.0), np.array([0.3, 0.7]))
    energy = lambda q: evaluate(c, task.objective, q, None)
    cfg = TrainConfig(lr0=0.05, steps=60)
    res = sweep_ratios(c, task, [0.1, 0.2, 0.3, 0.4, 0.5], cfg, trained, energy, energy)
    assert res.ratio == 0.5 and res.mask.count == 1
    assert energy(res.params) <= energy(trained) + 1e-3
    assert len(res.rows) == 5
    again = sweep_ratios(c, task, [0.1, 0.2, 0.3, 0.4, 0.5], cfg, trained, energy, energy)
    assert again.ratio == res.ratio
    np.testing.assert_array_equal(again.params, res.params)


def test_sweep_single_zero_ratio_is_unpruned():
    c, task = toy()
    p = np.array([0.3, 0.7])
    f = lambda q: evaluate(c, task.objective, q, None)
    res = sweep_ratios(c, task, [0.0], TrainConfig(lr0=0.05, steps=5), p, f, f)
    assert res.ratio == 0.0 and res.mask.count == 0


def test_sweep_falls_back_when_nothing_admissible(qml_case):
    c, task, p = qml_case
    res = sweep_ratios(c, task, [0.5], TrainConfig(lr0=0.01, epochs=1, batch_size=32), p,
                       lambda q: float(np.count_nonzero(q == 0)), lambda q: 0.0)
    assert res.ratio == 0.0
    np.testing.assert_array_equal(res.params, p)
    assert res.rows[0]["admissible"] is False


def test_sweep_requires_ratios(qml_case):
    c, task, p = qml_case
    with pytest.raises(ValueError):
        sweep_ratios(c, task, [], TrainConfig(), p, lambda q: 0.0, lambda q: 0.0)
