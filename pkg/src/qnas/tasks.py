"""Benchmarks: encoders, datasets, QML readout, Hamiltonians and VQE objectives."""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import CapacityError, FormatError
from .noise import DeviceModel, DensityMatrix, apply_readout_error, dm_run
from .qcompile import QubitMapping, route
from .qstate import (PAULI, Circuit, Gate, GateKind, PauliString, Statevector, _apply_matrix,
                     apply_pauli, evolve, new_zero_state, z_signs)

DATA_ENV = "QNAS_DATA_DIR"


# ---------------------------------------------------------------------------
# encoders


@dataclass(frozen=True)
class EncoderSpec:
    """Ordered rotation layers; layer ``(RY, 4)`` consumes four features."""

    n_qubits: int
    layers: tuple[tuple[GateKind, int], ...]

    @property
    def capacity(self) -> int:
        return sum(c for _, c in self.layers)


ENCODERS = {
    "4x4_ryzxy": EncoderSpec(4, ((GateKind.RY, 4), (GateKind.RZ, 4), (GateKind.RX, 4), (GateKind.RY, 4))),
    "6x6_ryzxy": EncoderSpec(10, ((GateKind.RY, 10), (GateKind.RZ, 10), (GateKind.RX, 10), (GateKind.RY, 6))),
    "4_ry": EncoderSpec(4, ((GateKind.RY, 4),)),
    "8_ryz": EncoderSpec(4, ((GateKind.RY, 4), (GateKind.RZ, 4))),
}


def encode(features: np.ndarray, spec: EncoderSpec) -> list[Gate]:
    """Fixed rotation gates whose angles are the feature values.

    ``features`` of shape ``(dim,)`` gives scalar angles; ``(B, dim)`` gives
    per-sample angle arrays.  Feature ``i`` of a layer lands on qubit
    ``i mod n_qubits``.
    """
    x = np.asarray(features, dtype=float)
    if x.shape[-1] != spec.capacity:
        raise ValueError(f"encoder takes {spec.capacity} features, got {x.shape[-1]}")
    gates = []
    pos = 0
    for kind, count in spec.layers:
        for i in range(count):
            angle = float(x[pos]) if x.ndim == 1 else x[:, pos].copy()
            gates.append(Gate(kind, (i % spec.n_qubits,), (angle,)))
            pos += 1
    return gates


def encoder_circuit(features: np.ndarray, spec: EncoderSpec) -> Circuit:
    return Circuit(spec.n_qubits, encode(features, spec), 0)


# ---------------------------------------------------------------------------
# datasets


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    split: str = "train"

    def __post_init__(self):
        if len(self.features) != len(self.labels):
            raise ValueError("features and labels differ in length")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError("label outside class range")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx, split: str | None = None) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], self.n_classes, split or self.split)


@dataclass(frozen=True)
class Splits:
    train: Dataset
    valid: Dataset
    test: Dataset


def _split(x: np.ndarray, y: np.ndarray, n_classes: int, fractions, rng) -> Splits:
    order = rng.permutation(len(y))
    n_tr = int(round(fractions[0] * len(y)))
    n_va = int(round(fractions[1] * len(y)))
    parts = order[:n_tr], order[n_tr:n_tr + n_va], order[n_tr + n_va:]
    full = Dataset(x, y, n_classes)
    return Splits(*(full.subset(np.sort(p), s) for p, s in zip(parts, ("train", "valid", "test"))))


def synthetic_dataset(n: int, n_classes: int, dim: int, seed: int = 0, radius: float = 1.0,
                      spread: float = 0.3, max_offset: float = 0.5) -> Splits:
    """Gaussian blobs whose centres sit evenly on a circle in a random plane.

    Offsets from the centre are clipped to norm ``max_offset``; with two
    classes every point is then at least ``radius - max_offset`` from the
    separating hyperplane.  Split 60/20/20.
    """
    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.normal(size=(dim, 2)))
    u, v = basis[:, 0], basis[:, 1]
    labels = np.arange(n) % n_classes
    rng.shuffle(labels)
    angles = 2 * math.pi * labels / n_classes
    centres = radius * (np.cos(angles)[:, None] * u + np.sin(angles)[:, None] * v)
    offsets = rng.normal(scale=spread, size=(n, dim))
    norms = np.linalg.norm(offsets, axis=1, keepdims=True)
    offsets *= np.minimum(1.0, max_offset / np.maximum(norms, 1e-300))
    return _split(centres + offsets, labels, n_classes, (0.6, 0.2), rng)


# ---------------------------------------------------------------------------
# MNIST / IDX

_IDX_TYPES = {0x08: np.uint8, 0x09: np.int8, 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}


def read_idx(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0 or raw[2] not in _IDX_TYPES:
        raise FormatError(f"{path}: bad IDX magic")
    ndim = raw[3]
    if len(raw) < 4 + 4 * ndim:
        raise FormatError(f"{path}: truncated IDX header")
    shape = struct.unpack(f">{ndim}I", raw[4:4 + 4 * ndim])
    dtype = np.dtype(_IDX_TYPES[raw[2]])
    body = raw[4 + 4 * ndim:]
    if len(body) != int(np.prod(shape)) * dtype.itemsize:
        raise FormatError(f"{path}: expected {np.prod(shape)} items, file holds {len(body) // dtype.itemsize}")
    return np.frombuffer(body, dtype=dtype).reshape(shape)


def write_idx(path: str | Path, array: np.ndarray) -> None:
    codes = {np.dtype(v).str: k for k, v in _IDX_TYPES.items()}
    arr = np.asarray(array)
    if arr.dtype == np.uint8:
        code = 0x08
    else:
        arr = arr.astype(arr.dtype.newbyteorder(">"))
        code = codes[arr.dtype.str]
    header = bytes([0, 0, code, arr.ndim]) + struct.pack(f">{arr.ndim}I", *arr.shape)
    Path(path).write_bytes(header + arr.tobytes())


def load_mnist_idx(images_path: str | Path, labels_path: str | Path, n_classes: int = 10) -> Dataset:
    """Images (magic 0x00000803) and labels (0x00000801), pixels scaled to [0, 1]."""
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim != 3 or labels.ndim != 1:
        raise FormatError("expected 3-D image and 1-D label files")
    if len(images) != len(labels):
        raise FormatError(f"{len(images)} images but {len(labels)} labels")
    return Dataset(images.astype(float) / 255.0, labels.astype(int), n_classes)


def preprocess(image: np.ndarray, target: int = 4) -> np.ndarray:
    """Centre-crop 28x28 to 24x24, average-pool to target x target, flatten."""
    if target not in (4, 6):
        raise ValueError("target must be 4 or 6")
    img = np.asarray(image, dtype=float)
    top = (img.shape[-2] - 24) // 2
    left = (img.shape[-1] - 24) // 2
    crop = img[..., top:top + 24, left:left + 24]
    k = 24 // target
    pooled = crop.reshape(crop.shape[:-2] + (target, k, target, k)).mean(axis=(-3, -1))
    return pooled.reshape(pooled.shape[:-2] + (target * target,))


def standardize(features: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    """Zero-mean, unit-variance per feature, then scaled by pi."""
    return math.pi * (features - mean) / np.where(std > 0, std, 1.0)


def data_dir() -> Path:
    return Path(os.environ.get(DATA_ENV, Path.home() / ".cache" / "qnas"))


def mnist_splits(digits: Sequence[int] = (3, 6), target: int = 4, root: str | Path | None = None,
                 seed: int = 0, n_test: int = 300, limit: int | None = None) -> Splits:
    """95/5 train/valid split of the MNIST train file and a seeded test sample."""
    root = Path(root) if root else data_dir()
    train = load_mnist_idx(root / "train-images-idx3-ubyte", root / "train-labels-idx1-ubyte")
    test = load_mnist_idx(root / "t10k-images-idx3-ubyte", root / "t10k-labels-idx1-ubyte")
    rng = np.random.default_rng(seed)
    relabel = {d: i for i, d in enumerate(digits)}

    def pick(ds: Dataset):
        keep = np.isin(ds.labels, digits)
        return preprocess(ds.features[keep], target), np.array([relabel[v] for v in ds.labels[keep]])

    x, y = pick(train)
    if limit:
        idx = rng.permutation(len(y))[:limit]
        x, y = x[idx], y[idx]
    order = rng.permutation(len(y))
    n_va = max(1, int(round(0.05 * len(y))))
    va, tr = order[:n_va], order[n_va:]
    mean, std = x[tr].mean(axis=0), x[tr].std(axis=0)
    xt, yt = pick(test)
    te = rng.choice(len(yt), size=min(n_test, len(yt)), replace=False)
    k = len(digits)
    return Splits(Dataset(standardize(x[tr], mean, std), y[tr], k, "train"),
                  Dataset(standardize(x[va], mean, std), y[va], k, "valid"),
                  Dataset(standardize(xt[te], mean, std), yt[te], k, "test"))


# ---------------------------------------------------------------------------
# QML readout


def _logits_from_z(z: np.ndarray, n_classes: int) -> np.ndarray:
    if n_classes == 2:
        return np.stack([z[:, 0] + z[:, 1], z[:, 2] + z[:, 3]], axis=1)
    if n_classes == 4:
        return z[:, :4]
    raise ValueError("readout supports 2 or 4 classes")


def _softmax(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def z_from_probs(probs: np.ndarray, n: int, qubits: Sequence[int]) -> np.ndarray:
    """``<Z_q>`` for each requested local qubit, from ``(B, 2**n)`` outcome probabilities."""
    signs = np.stack([z_signs(n, q) for q in qubits])
    return probs @ signs.T


def qml_readout(state: Statevector | DensityMatrix, n_classes: int, device: DeviceModel | None = None,
                qubits: Sequence[int] | None = None) -> np.ndarray:
    """Class probabilities from Pauli-Z expectations.

    Two classes use logits ``(<Z0>+<Z1>, <Z2>+<Z3>)``; four classes use
    ``<Z0>..<Z3>``.  ``qubits`` names the local qubits holding logical 0..3
    (default 0..3); with a ``device`` its readout error is applied first.
    """
    probs = state.probabilities()
    if probs.ndim == 1:
        probs = probs[None]
    n = state.n_qubits
    if n < 4:
        raise ValueError("QML readout needs at least four qubits")
    qubits = list(range(4)) if qubits is None else list(qubits)
    if device is not None:
        wires = getattr(state, "wires", ()) or tuple(range(n))
        probs = apply_readout_error(probs, device, wires)
    return _softmax(_logits_from_z(z_from_probs(probs, n, qubits[:4]), n_classes))


def nll(probs: np.ndarray, labels: np.ndarray) -> float:
    return float(-np.mean(np.log(np.maximum(probs[np.arange(len(labels)), labels], 1e-300))))


@dataclass
class QMLLoss:
    """Mean negative log-likelihood of the softmax readout."""

    encoder: EncoderSpec
    n_classes: int
    kind: str = "qml-nll"

    @property
    def n_qubits(self) -> int:
        return self.encoder.n_qubits

    def prepare(self, batch) -> np.ndarray:
        x, _ = batch
        zero = new_zero_state(self.n_qubits, batch=len(x)).amps
        return evolve(zero, self.n_qubits, encode(x, self.encoder))

    def loss_from_amps(self, amps: np.ndarray, batch) -> tuple[float, np.ndarray]:
        _, y = batch
        n = self.n_qubits
        signs = np.stack([z_signs(n, q) for q in range(4)])
        z = (np.abs(amps) ** 2) @ signs.T
        p = _softmax(_logits_from_z(z, self.n_classes))
        loss = nll(p, y)
        dlogits = p.copy()
        dlogits[np.arange(len(y)), y] -= 1.0
        dlogits /= len(y)
        if self.n_classes == 2:
            dz = np.repeat(dlogits, 2, axis=1)
        else:
            dz = dlogits
        lam = amps * (dz @ signs)
        return loss, lam


@dataclass
class QMLTask:
    splits: Splits
    encoder: EncoderSpec
    kind: str = "qml"
    objective: QMLLoss = field(init=False)

    def __post_init__(self):
        self.objective = QMLLoss(self.encoder, self.splits.train.n_classes)

    @property
    def n_qubits(self) -> int:
        return self.encoder.n_qubits

    @property
    def n_classes(self) -> int:
        return self.splits.train.n_classes

    def steps_per_epoch(self, batch_size: int) -> int:
        return math.ceil(len(self.splits.train) / batch_size)

    def train_batches(self, rng: np.random.Generator, batch_size: int) -> Iterator:
        tr = self.splits.train
        order = rng.permutation(len(tr))
        for i in range(0, len(tr), batch_size):
            idx = order[i:i + batch_size]
            yield tr.features[idx], tr.labels[idx]

    def batch(self, split: str = "valid"):
        ds = getattr(self.splits, split)
        return ds.features, ds.labels

    def validation_batch(self):
        return self.batch("valid")


# ---------------------------------------------------------------------------
# Hamiltonians and VQE


@dataclass(frozen=True)
class Hamiltonian:
    terms: tuple[PauliString, ...]
    n_qubits: int

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        for t in self.terms:
            if any(q >= self.n_qubits for q in t.ops):
                raise FormatError("Pauli term outside the register")

    def matrix(self) -> np.ndarray:
        return sum(t.matrix(self.n_qubits) for t in self.terms)

    def __eq__(self, other):
        if not isinstance(other, Hamiltonian):
            return NotImplemented
        return self.n_qubits == other.n_qubits and [(dict(t.ops), t.coefficient) for t in self.terms] == \
            [(dict(t.ops), t.coefficient) for t in other.terms]


def pauli_word(term: PauliString, n: int) -> str:
    # rightmost character is qubit 0, matching bitstring order
    return "".join(term.ops.get(q, "I") for q in reversed(range(n)))


def parse_hamiltonian(text: str) -> Hamiltonian:
    """Lines ``coefficient WORD``; the rightmost letter of WORD acts on qubit 0."""
    terms, n = [], None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) != 2:
            raise FormatError(f"line {lineno}: expected 'coefficient pauli-word'")
        try:
            coeff = float(fields[0])
        except ValueError:
            raise FormatError(f"line {lineno}: bad coefficient {fields[0]!r}") from None
        word = fields[1].upper()
        if set(word) - set("IXYZ"):
            raise FormatError(f"line {lineno}: bad Pauli word {fields[1]!r}")
        if n is None:
            n = len(word)
        elif len(word) != n:
            raise FormatError(f"line {lineno}: word length {len(word)} != {n}")
        ops = {q: c for q, c in enumerate(reversed(word)) if c != "I"}
        terms.append(PauliString(ops, coeff))
    if n is None:
        raise FormatError("empty Hamiltonian")
    return Hamiltonian(tuple(terms), n)


def format_hamiltonian(h: Hamiltonian) -> str:
    return "".join(f"{t.coefficient!r} {pauli_word(t, h.n_qubits)}\n" for t in h.terms)


def load_hamiltonian(path: str | Path) -> Hamiltonian:
    return parse_hamiltonian(Path(path).read_text())


def bundled_hamiltonian(name: str = "h2") -> Hamiltonian:
    return parse_hamiltonian(resources.files("qnas.data").joinpath(f"{name}.txt").read_text())


def exact_ground_energy(h: Hamiltonian) -> float:
    if h.n_qubits > 12:
        raise CapacityError(f"exact diagonalization supports 12 qubits, got {h.n_qubits}")
    return float(np.linalg.eigvalsh(h.matrix()).min())


@dataclass
class VQELoss:
    hamiltonian: Hamiltonian
    kind: str = "vqe-expectation"

    @property
    def n_qubits(self) -> int:
        return self.hamiltonian.n_qubits

    def prepare(self, batch=None) -> np.ndarray:
        return new_zero_state(self.n_qubits, batch=1).amps

    def loss_from_amps(self, amps: np.ndarray, batch=None) -> tuple[float, np.ndarray]:
        h_psi = np.zeros_like(amps)
        for t in self.hamiltonian.terms:
            h_psi += t.coefficient * apply_pauli(amps, self.n_qubits, t)
        value = float(np.vdot(amps, h_psi).real) / len(amps)
        return value, h_psi / len(amps)


@dataclass
class VQETask:
    hamiltonian: Hamiltonian
    kind: str = "vqe"
    objective: VQELoss = field(init=False)

    def __post_init__(self):
        self.objective = VQELoss(self.hamiltonian)

    @property
    def n_qubits(self) -> int:
        return self.hamiltonian.n_qubits

    def steps_per_epoch(self, batch_size: int) -> int:
        return 1

    def train_batches(self, rng, batch_size):
        yield None

    def batch(self, split: str = "valid"):
        return None

    def validation_batch(self):
        return None


_BASIS_CHANGE = {
    "X": np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2),
    # H S^dagger maps the Y eigenbasis onto the computational basis
    "Y": np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2) @ np.diag([1, -1j]),
}


def noisy_pauli_expectation(dm: DensityMatrix, term: PauliString, local: Sequence[int],
                            device: DeviceModel | None) -> np.ndarray:
    """Measure ``term`` on ``dm`` after an ideal basis change, with readout error.

    ``local[q]`` is the local index of the qubit carrying logical ``q``.
    """
    m = dm.n_qubits
    rho = dm.rho if dm.batched else dm.rho[None]
    t = rho.reshape((len(rho),) + (2,) * (2 * m))
    for q, p in term.ops.items():
        if p in _BASIS_CHANGE:
            u = _BASIS_CHANGE[p]
            lq = local[q]
            t = _apply_matrix(t, u, [m - lq])
            t = _apply_matrix(t, u.conj(), [2 * m - lq])
    probs = np.diagonal(t.reshape(len(rho), 2 ** m, 2 ** m), axis1=1, axis2=2).real
    if device is not None:
        probs = apply_readout_error(probs, device, dm.wires)
    signs = np.ones(2 ** m)
    for q in term.ops:
        signs = signs * z_signs(m, local[q])
    return term.coefficient * (probs @ signs)


def vqe_expectation(circuit: Circuit, params: np.ndarray | None, h: Hamiltonian,
                    device: DeviceModel | None = None, mapping: QubitMapping | None = None) -> float:
    """Energy of the prepared state: pure statevector, or noisy when ``device`` is given."""
    if circuit.n_qubits != h.n_qubits:
        raise ValueError(f"circuit has {circuit.n_qubits} qubits, Hamiltonian {h.n_qubits}")
    if device is None:
        loss = VQELoss(h)
        amps = evolve(loss.prepare(), circuit.n_qubits, circuit.gates,
                      circuit.default_params() if params is None else np.asarray(params, dtype=float))
        return loss.loss_from_amps(amps)[0]
    mapping = mapping or QubitMapping.identity(h.n_qubits)
    compiled = route(circuit, mapping, device, params)
    dm = dm_run(compiled.circuit, device, keep=compiled.output_wires)
    local = [dm.wires.index(w) for w in compiled.output_wires]
    return float(sum(noisy_pauli_expectation(dm, t, local, device)[0] for t in h.terms))


# ---------------------------------------------------------------------------
# scoring shared by search, pruning and evaluation


def accuracy(probs: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(probs, axis=1) == labels))


def qml_scores(circuit: Circuit, params: np.ndarray | None, task: QMLTask, split: str = "valid",
               device: DeviceModel | None = None, mapping: QubitMapping | None = None,
               limit: int | None = None) -> dict[str, float]:
    """Loss and accuracy on a split; noisy (compiled, density matrix) when ``device`` is given."""
    x, y = task.batch(split)
    if limit is not None:
        x, y = x[:limit], y[:limit]
    params = circuit.default_params() if params is None else np.asarray(params, dtype=float)
    n = task.n_qubits
    if device is None:
        amps = evolve(task.objective.prepare((x, y)), n, circuit.gates, params)
        signs = np.stack([z_signs(n, q) for q in range(4)])
        probs = _softmax(_logits_from_z((np.abs(amps) ** 2) @ signs.T, task.n_classes))
    else:
        full = Circuit(n, encode(x, task.encoder) + list(circuit.bind(params).gates), 0)
        compiled = route(full, mapping or QubitMapping.identity(n), device)
        dm = dm_run(compiled.circuit, device, keep=compiled.output_wires)
        local = [dm.wires.index(w) for w in compiled.output_wires]
        probs = qml_readout(dm, task.n_classes, device, qubits=local)
    return {"loss": nll(probs, y), "accuracy": accuracy(probs, y)}
