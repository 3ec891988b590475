import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import noisy_run, random_ops
from qnas.errors import CapacityError, NumericError, RoutingError, ValidationError
from qnas.noise import (DeviceModel, apply_readout_error, augmented_loss, bundled_device, depolarizing_kraus,
                        dm_run, format_device_model, parse_device_model, scale_noise, success_rate,
                        thermal_relaxation_kraus)
from qnas.qcompile import QubitMapping, route
from qnas.qstate import Circuit, Gate, GateKind, run_circuit

T_FILE = """
[device]
name tee
qubits 5
[topology]
0 1
1 2
1 3
3 4
[errors_1q]
{e1}
[errors_2q]
0 1 0.01
1 2 0.01
1 3 0.01
3 4 0.01
[relaxation]
{relax}
[readout]
0 0.0 0.0
"""


def t_file(relax="0 50e-6 60e-6"):
    e1 = "\n".join(f"{q} {k} 0.001" for q in range(5) for k in ("sx", "x"))
    return T_FILE.format(e1=e1, relax=relax)


def cptp_error(ch):
    return np.abs(sum(k.conj().T @ k for k in ch.kraus) - np.eye(ch.dim)).max()


def basis_circuit(rng, n, n_gates, edges):
    gates = []
    for _ in range(n_gates):
        r = rng.random()
        if r < 0.3:
            a, b = edges[rng.integers(len(edges))]
            gates.append(Gate(GateKind.CNOT, (a, b) if rng.random() < 0.5 else (b, a)))
        elif r < 0.6:
            gates.append(Gate(GateKind.RZ, (int(rng.integers(n)),), (float(rng.uniform(-3, 3)),)))
        elif r < 0.9:
            gates.append(Gate(GateKind.SX, (int(rng.integers(n)),)))
        else:
            gates.append(Gate(GateKind.X, (int(rng.integers(n)),)))
    return Circuit(n, gates, 0)


def test_load_t_device():
    dev = parse_device_model(t_file())
    assert len(dev.coupling) == 4 and dev.n_physical == 5
    assert dev.gate_error(GateKind.SX, (2,)) == 0.001


def test_readout_rows_must_sum_to_one():
    with pytest.raises(ValidationError) as exc:
        DeviceModel(1, frozenset(), readout=np.array([[[0.9, 0.2], [0.0, 1.0]]]))
    assert "readout" in str(exc.value)


def test_t2_bound_names_field():
    with pytest.raises(ValidationError) as exc:
        parse_device_model(t_file("0 50e-6 120e-6"))
    assert "t2" in str(exc.value)


def test_device_file_round_trip():
    dev = bundled_device("t5")
    back = parse_device_model(format_device_model(dev))
    assert back.coupling == dev.coupling and back.err_1q == dev.err_1q and back.err_2q == dev.err_2q
    np.testing.assert_array_equal(back.readout, dev.readout)
    assert back.t1 == dev.t1 and back.gate_time == dev.gate_time


def test_depolarizing_examples():
    assert len(depolarizing_kraus(0.0).kraus) == 1
    ch = depolarizing_kraus(0.75)
    out = ch.apply(np.diag([1.0, 0.0]).astype(complex))
    assert np.abs(out - np.eye(2) / 2).max() < 1e-9
    with pytest.raises(ValueError):
        depolarizing_kraus(1.2)


@given(st.floats(0, 1), st.sampled_from([1, 2]))
def test_depolarizing_is_cptp(p, k):
    assert cptp_error(depolarizing_kraus(p, k)) < 1e-9


@given(st.floats(1e-6, 1e-3), st.floats(0.01, 2.0), st.floats(0, 1e-3))
def test_relaxation_is_cptp(t1, ratio, t):
    assert cptp_error(thermal_relaxation_kraus(t1, ratio * t1, t)) < 1e-9


def test_relaxation_examples():
    ident = thermal_relaxation_kraus(50e-6, 60e-6, 0.0)
    rho = np.array([[0.3, 0.2 - 0.1j], [0.2 + 0.1j, 0.7]])
    np.testing.assert_allclose(ident.apply(rho), rho, atol=1e-15)
    inf = thermal_relaxation_kraus(math.inf, math.inf, 1e-6)
    np.testing.assert_allclose(inf.apply(rho), rho, atol=1e-15)
    ch = thermal_relaxation_kraus(1e-4, 2e-4, 1e-4)
    out = ch.apply(np.diag([0.0, 1.0]).astype(complex))
    assert out[1, 1].real == pytest.approx(math.exp(-1), abs=1e-12)
    with pytest.raises(ValueError):
        thermal_relaxation_kraus(1e-4, 3e-4, 1e-6)


def test_relaxation_coherence_decay():
    ch = thermal_relaxation_kraus(80e-6, 50e-6, 20e-6)
    out = ch.apply(np.full((2, 2), 0.5, dtype=complex))
    assert abs(out[0, 1]) == pytest.approx(0.5 * math.exp(-20 / 50), rel=1e-12)


def test_zero_noise_matches_pure_state(rng):
    dev = bundled_device("t5_ideal")
    c = basis_circuit(rng, 5, 40, [(0, 1), (1, 2), (1, 3), (3, 4)])
    dm = dm_run(c, dev, keep=range(5))
    psi = run_circuit(c).amps
    assert np.abs(dm.rho - np.outer(psi, psi.conj())).max() < 1e-9


@pytest.mark.parametrize("seed", range(4))
def test_dm_run_matches_kraus_oracle(seed):
    rng = np.random.default_rng(seed)
    dev = bundled_device("t5")
    edges = [(0, 1), (1, 2), (1, 3)]
    c = basis_circuit(rng, 4, 25, edges)
    dm = dm_run(c, dev, keep=range(4))
    names = {"SX": "sx", "X": "x", "RZ": "rz", "CNOT": "cx"}
    ops = [(g.kind.label, g.wires, g.params) for g in c.gates]
    ref = noisy_run(ops, 4, lambda k, w: dev.gate_error(GateKind.parse(k), w), dev.t1, dev.t2,
                    {k: dev.gate_time[v] for k, v in names.items()})
    assert np.abs(dm.rho - ref).max() < 1e-10


@pytest.mark.parametrize("seed", range(3))
def test_density_matrix_invariants(seed):
    rng = np.random.default_rng(seed)
    dev = scale_noise(bundled_device("t5"), 5.0)
    c = basis_circuit(rng, 5, 50, [(0, 1), (1, 2), (1, 3), (3, 4)])
    rho = dm_run(c, dev).rho
    assert abs(np.trace(rho) - 1) < 1e-9
    assert np.abs(rho - rho.conj().T).max() < 1e-9
    assert np.linalg.eigvalsh(rho).min() > -1e-8


def test_single_x_with_depolarizing():
    p = 0.03
    dev = DeviceModel.uniform(1, [], err_1q=p)
    dm = dm_run(Circuit(1, [Gate(GateKind.X, (0,))], 0), dev)
    z = dm.rho[0, 0].real - dm.rho[1, 1].real
    assert z == pytest.approx(-(1 - 4 * p / 3), abs=1e-12)


def test_dm_capacity_and_wires():
    dev = DeviceModel.uniform(12, [(i, i + 1) for i in range(11)])
    c = Circuit(12, [Gate(GateKind.X, (q,)) for q in range(11)], 0)
    with pytest.raises(CapacityError):
        dm_run(c, dev)
    with pytest.raises(RoutingError):
        dm_run(Circuit(6, [Gate(GateKind.X, (5,))], 0), bundled_device("t5"))


def test_batched_dm_matches_single():
    dev = bundled_device("t5")
    t = np.array([0.2, 1.3])
    batch = dm_run(Circuit(2, [Gate(GateKind.RZ, (0,), (t,)), Gate(GateKind.SX, (0,)),
                               Gate(GateKind.CNOT, (0, 1))], 0), dev)
    for i, a in enumerate(t):
        single = dm_run(Circuit(2, [Gate(GateKind.RZ, (0,), (a,)), Gate(GateKind.SX, (0,)),
                                    Gate(GateKind.CNOT, (0, 1))], 0), dev)
        np.testing.assert_allclose(batch.rho[i], single.rho, atol=1e-14)


def test_readout_examples():
    ideal = DeviceModel.uniform(2, [(0, 1)])
    assert apply_readout_error({"00": 0.25, "11": 0.75}, ideal) == {"00": 0.25, "11": 0.75}
    one = DeviceModel.uniform(1, [], p10=0.1)
    out = apply_readout_error({"0": 1.0}, one)
    assert out["0"] == pytest.approx(0.9) and out["1"] == pytest.approx(0.1)


def test_readout_is_product_of_marginals():
    ro = np.array([[[0.9, 0.1], [0.2, 0.8]], [[0.95, 0.05], [0.3, 0.7]]])
    dev = DeviceModel(2, frozenset({(0, 1)}), readout=ro)
    out = apply_readout_error({"00": 1.0}, dev)
    # qubit 0 is the rightmost character
    for bits, p in out.items():
        q1, q0 = int(bits[0]), int(bits[1])
        assert p == pytest.approx(ro[0][0, q0] * ro[1][0, q1], abs=1e-15)


@given(st.lists(st.floats(0, 1), min_size=8, max_size=8).filter(lambda v: sum(v) > 0.1))
def test_readout_is_stochastic(vals):
    probs = np.array(vals) / sum(vals)
    out = apply_readout_error(probs, bundled_device("t5"), [0, 2, 4])
    assert out.min() >= 0 and out.sum() == pytest.approx(1.0, abs=1e-9)


def test_success_rate_examples():
    dev = DeviceModel.uniform(2, [(0, 1)], err_1q=0.01, err_2q=0.02)
    assert success_rate(Circuit(2), dev) == 1.0
    two = Circuit(2, [Gate(GateKind.SX, (0,)), Gate(GateKind.CNOT, (0, 1))], 0)
    assert success_rate(two, dev) == pytest.approx(0.99 * 0.98)
    ten = Circuit(2, [Gate(GateKind.CNOT, (0, 1))] * 10, 0)
    assert success_rate(ten, DeviceModel.uniform(2, [(0, 1)], err_2q=0.01)) == pytest.approx(0.99 ** 10)
    with pytest.raises(RoutingError):
        success_rate(Circuit(3, [Gate(GateKind.CNOT, (0, 2))], 0), DeviceModel.uniform(3, [(0, 1), (1, 2)]))


def test_rz_is_error_free():
    dev = bundled_device("t5")
    assert success_rate(Circuit(1, [Gate(GateKind.RZ, (0,), (0.4,))], 0), dev) == 1.0


@given(st.integers(0, 2 ** 31 - 1))
def test_success_rate_is_multiplicative(seed):
    rng = np.random.default_rng(seed)
    dev = bundled_device("t5")
    edges = [(0, 1), (1, 2), (1, 3), (3, 4)]
    a, b = basis_circuit(rng, 5, 10, edges), basis_circuit(rng, 5, 10, edges)
    joined = Circuit(5, a.gates + b.gates, 0)
    assert success_rate(joined, dev) == pytest.approx(success_rate(a, dev) * success_rate(b, dev), rel=1e-12)


def test_augmented_loss():
    assert augmented_loss(0.5, 1.0) == 0.5
    assert augmented_loss(0.5, 0.9702) == pytest.approx(0.51536, abs=1e-5)
    assert augmented_loss(0.5, 0.8) > augmented_loss(0.5, 0.9)
    with pytest.raises(NumericError):
        augmented_loss(0.5, 0.0)


def test_scale_noise():
    dev = bundled_device("t5")
    s = scale_noise(dev, 2.0)
    assert s.err_2q[(1, 2)] == pytest.approx(0.12)
    assert s.t1[0] == pytest.approx(45e-6)
    assert s.readout[2][1, 0] == pytest.approx(0.18)
