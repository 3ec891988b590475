import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import circuit_unitary, pauli_matrix
from qnas.cli import random_circuit
from qnas.errors import CapacityError, FormatError
from qnas.noise import bundled_device
from qnas.qcompile import QubitMapping
from qnas.qstate import Circuit, Gate, GateKind, PauliString, Statevector, new_zero_state, run_circuit
from qnas.tasks import (DATA_ENV, ENCODERS, Hamiltonian, QMLTask, bundled_hamiltonian, data_dir, encode,
                        exact_ground_energy, format_hamiltonian, load_mnist_idx, parse_hamiltonian, preprocess,
                        qml_readout, qml_scores, read_idx, synthetic_dataset, vqe_expectation, write_idx)

MNIST4 = ENCODERS["4x4_ryzxy"]


def test_encoder_layout():
    gates = encode(np.arange(16) / 10, MNIST4)
    assert len(gates) == 16
    assert [g.kind for g in gates[::4]] == [GateKind.RY, GateKind.RZ, GateKind.RX, GateKind.RY]
    assert [g.wires[0] for g in gates[4:8]] == [0, 1, 2, 3]
    assert gates[5].params == (0.5,)


def test_zero_features_are_identity():
    c = Circuit(4, encode(np.zeros(16), MNIST4), 0)
    np.testing.assert_allclose(run_circuit(c).amps, new_zero_state(4).amps, atol=1e-15)


def test_encoder_dimension_check():
    with pytest.raises(ValueError):
        encode(np.zeros(15), MNIST4)


def test_batched_encoding_matches_single(rng):
    x = rng.normal(size=(3, 16))
    batch = encode(x, MNIST4)
    amps = run_circuit(Circuit(4, batch, 0), initial=new_zero_state(4, batch=3)).amps
    for i in range(3):
        np.testing.assert_allclose(amps[i], run_circuit(Circuit(4, encode(x[i], MNIST4), 0)).amps, atol=1e-14)


def test_idx_round_trip_and_errors(tmp_path, rng):
    imgs = rng.integers(0, 256, size=(5, 28, 28), dtype=np.uint8)
    labels = np.array([3, 6, 3, 1, 0], dtype=np.uint8)
    write_idx(tmp_path / "img", imgs)
    write_idx(tmp_path / "lab", labels)
    raw = (tmp_path / "img").read_bytes()
    assert raw[:4] == bytes([0, 0, 8, 3])
    assert (tmp_path / "lab").read_bytes()[:4] == bytes([0, 0, 8, 1])
    ds = load_mnist_idx(tmp_path / "img", tmp_path / "lab")
    assert ds.features.shape == (5, 28, 28) and ds.features.max() <= 1.0
    np.testing.assert_array_equal(read_idx(tmp_path / "img"), imgs)
    write_idx(tmp_path / "again", read_idx(tmp_path / "img")[:3])
    assert (tmp_path / "again").read_bytes()[16:] == raw[16:16 + 3 * 784]
    (tmp_path / "trunc").write_bytes(raw[:-10])
    with pytest.raises(FormatError):
        read_idx(tmp_path / "trunc")
    (tmp_path / "bad").write_bytes(b"\x01\x02\x08\x01" + raw[4:])
    with pytest.raises(FormatError):
        read_idx(tmp_path / "bad")


def test_preprocess_pooling():
    np.testing.assert_allclose(preprocess(np.full((28, 28), 0.3)), 0.3)
    img = np.random.default_rng(0).random((28, 28))
    for target in (4, 6):
        f = preprocess(img, target)
        assert f.shape == (target * target,)
        assert f.mean() == pytest.approx(img[2:26, 2:26].mean(), abs=1e-12)
    # top-left 6x6 block of the crop is feature 0
    assert preprocess(img)[0] == pytest.approx(img[2:8, 2:8].mean())


def test_data_dir_env(monkeypatch, tmp_path):
    monkeypatch.setenv(DATA_ENV, str(tmp_path))
    assert data_dir() == tmp_path


def test_synthetic_dataset():
    a = synthetic_dataset(300, 2, 16, seed=4)
    b = synthetic_dataset(300, 2, 16, seed=4)
    np.testing.assert_array_equal(a.train.features, b.train.features)
    assert (len(a.train), len(a.valid), len(a.test)) == (180, 60, 60)
    labels = np.concatenate([a.train.labels, a.valid.labels, a.test.labels])
    assert np.sum(labels == 0) == np.sum(labels == 1) == 150
    # the bisector of the empirical class means separates the data
    x = np.concatenate([a.train.features, a.valid.features, a.test.features])
    c0, c1 = x[labels == 0].mean(0), x[labels == 1].mean(0)
    normal = (c1 - c0) / np.linalg.norm(c1 - c0)
    proj = (x - (c0 + c1) / 2) @ normal
    assert np.all(np.sign(proj) == np.where(labels == 1, 1, -1))


def test_readout_examples():
    probs = qml_readout(new_zero_state(4), 4)
    np.testing.assert_allclose(probs, 0.25)
    # |0011>: qubits 0 and 1 set
    amps = np.zeros(16, dtype=complex)
    amps[0b0011] = 1
    p = qml_readout(Statevector(4, amps), 2)
    assert p[0, 1] == pytest.approx(1 / (1 + math.exp(-4)), abs=1e-12)


@given(st.integers(0, 2 ** 31 - 1), st.sampled_from([2, 4]))
def test_readout_is_distribution(seed, k):
    rng = np.random.default_rng(seed)
    c = random_circuit(4, 12, rng)
    s = run_circuit(c, rng.normal(size=c.n_params))
    p = qml_readout(s, k)
    assert p.min() >= 0 and p.sum() == pytest.approx(1.0)


def test_hamiltonian_parsing():
    h = parse_hamiltonian("1.0 Z")
    assert h.n_qubits == 1 and len(h.terms) == 1
    h2 = parse_hamiltonian("0.5 XX\n0.5 YY\n")
    assert h2.n_qubits == 2 and len(h2.terms) == 2
    with pytest.raises(FormatError):
        parse_hamiltonian("1.0 ZZ\n0.5 X")
    with pytest.raises(FormatError):
        parse_hamiltonian("1.0 ZQ")
    word = parse_hamiltonian("-0.48 ZIX")
    assert word.terms[0].ops == {0: "X", 2: "Z"}


@given(st.lists(st.tuples(st.floats(-5, 5, allow_nan=False), st.text("IXYZ", min_size=3, max_size=3)),
                min_size=1, max_size=6))
def test_hamiltonian_round_trip(terms):
    text = "".join(f"{c!r} {w}\n" for c, w in terms)
    h = parse_hamiltonian(text)
    assert parse_hamiltonian(format_hamiltonian(h)) == h


def test_exact_energies():
    assert exact_ground_energy(parse_hamiltonian("1.0 Z")) == pytest.approx(-1.0)
    assert exact_ground_energy(parse_hamiltonian("0.5 XX\n0.5 YY")) == pytest.approx(-1.0)
    assert exact_ground_energy(bundled_hamiltonian("h2")) == pytest.approx(-1.85, abs=0.01)
    with pytest.raises(CapacityError):
        exact_ground_energy(Hamiltonian((PauliString({12: "Z"}),), 13))


def test_vqe_expectation_examples():
    empty = Circuit(1)
    assert vqe_expectation(empty, None, parse_hamiltonian("1.0 Z")) == pytest.approx(1.0)
    c = random_circuit(2, 6, np.random.default_rng(0))
    p = np.random.default_rng(1).normal(size=c.n_params)
    assert vqe_expectation(c, p, parse_hamiltonian("-0.7 II")) == pytest.approx(-0.7)


def _dense_energy(c, p, words):
    ops = [(g.kind.label, g.wires, g.params) for g in c.bind(p).gates]
    psi = circuit_unitary(ops, c.n_qubits)[:, 0]
    hm = sum(coef * pauli_matrix(w) for coef, w in words)
    return float(np.vdot(psi, hm @ psi).real)


@pytest.mark.parametrize("seed", range(5))
def test_vqe_expectation_matches_dense(seed):
    rng = np.random.default_rng(seed)
    words = [(float(rng.normal()), "".join(rng.choice(list("IXYZ"), 3))) for _ in range(6)]
    h = parse_hamiltonian("".join(f"{c!r} {w}\n" for c, w in words))
    c = random_circuit(3, 15, rng)
    p = rng.uniform(-3, 3, c.n_params)
    assert abs(vqe_expectation(c, p, h) - _dense_energy(c, p, words)) < 1e-9


def test_variational_principle():
    h = bundled_hamiltonian("h2")
    e0 = exact_ground_energy(h)
    rng = np.random.default_rng(0)
    c = random_circuit(2, 10, rng)
    for _ in range(100):
        assert vqe_expectation(c, rng.uniform(-math.pi, math.pi, c.n_params), h) >= e0 - 1e-12


def test_noisy_vqe_ideal_device_matches_pure(rng):
    h = bundled_hamiltonian("h2")
    c = random_circuit(2, 8, rng)
    p = rng.normal(size=c.n_params)
    ideal = bundled_device("t5_ideal")
    assert vqe_expectation(c, p, h, ideal, QubitMapping((3, 1))) == pytest.approx(vqe_expectation(c, p, h),
                                                                                   abs=1e-9)
    noisy = vqe_expectation(c, p, h, bundled_device("t5"), QubitMapping((3, 1)))
    assert noisy != pytest.approx(vqe_expectation(c, p, h), abs=1e-6)


def test_qml_scores_ideal_device_matches_noise_free(rng):
    task = QMLTask(synthetic_dataset(60, 2, 16, seed=0), MNIST4)
    c = random_circuit(4, 10, rng)
    p = rng.normal(size=c.n_params)
    clean = qml_scores(c, p, task)
    ideal = qml_scores(c, p, task, "valid", bundled_device("t5_ideal"), QubitMapping((4, 3, 1, 0)))
    assert ideal["loss"] == pytest.approx(clean["loss"], abs=1e-9)
    assert ideal["accuracy"] == clean["accuracy"]
    limited = qml_scores(c, p, task, "valid", limit=5)
    assert limited["loss"] != clean["loss"]
