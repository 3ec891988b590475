"""Noise-free statevector simulation.

Basis ordering: qubit 0 is the least-significant bit of the basis index, so
the bitstring ``"01"`` means qubit 0 is 1 and qubit 1 is 0.  Two-qubit gate
matrices are written with the first listed wire as the most-significant local
bit (``CNOT 0,1`` has control 0).

Angles may be plain floats or 1-D arrays of per-sample values; a gate with an
array angle yields a stack of matrices and acts sample-wise on a batched
state.  This is how data encoders run a whole minibatch in one pass.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from .errors import ArityError, CapacityError, FormatError, WireError

Angle = Union[float, np.ndarray]

MAX_QUBITS = 24


class GateKind(enum.Enum):
    RX = ("RX", 1, 1)
    RY = ("RY", 1, 1)
    RZ = ("RZ", 1, 1)
    RXX = ("RXX", 2, 1)
    RZX = ("RZX", 2, 1)
    RZZ = ("RZZ", 2, 1)
    U1 = ("U1", 1, 1)
    U3 = ("U3", 1, 3)
    CU3 = ("CU3", 2, 3)
    CZ = ("CZ", 2, 0)
    CNOT = ("CNOT", 2, 0)
    H = ("H", 1, 0)
    SH = ("SH", 1, 0)
    SX = ("SX", 1, 0)
    X = ("X", 1, 0)
    S = ("S", 1, 0)
    T = ("T", 1, 0)
    SWAP = ("SWAP", 2, 0)
    SQSWAP = ("SQSWAP", 2, 0)

    def __init__(self, label: str, arity: int, n_params: int):
        self.label = label
        self.arity = arity
        self.n_params = n_params

    @classmethod
    def parse(cls, name: str) -> "GateKind":
        key = name.strip().upper()
        key = _ALIASES.get(key, key)
        try:
            return cls[key]
        except KeyError:
            raise FormatError(f"unknown gate kind {name!r}") from None


_ALIASES = {"XX": "RXX", "ZX": "RZX", "ZZ": "RZZ", "CX": "CNOT",
            "√H": "SH", "SQRTH": "SH", "√SWAP": "SQSWAP", "SQRTSWAP": "SQSWAP"}


# ---------------------------------------------------------------------------
# gate matrices

_I2 = np.eye(2, dtype=complex)
_X = np.array([[0, 1], [1, 0]], dtype=complex)
_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
_Z = np.array([[1, 0], [0, -1]], dtype=complex)
_H = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)
_SWAP = np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex)

PAULI = {"I": _I2, "X": _X, "Y": _Y, "Z": _Z}


def _principal_sqrt_involution(m: np.ndarray) -> np.ndarray:
    # for M with M @ M = I: eigenvalue +1 -> 1, -1 -> i
    eye = np.eye(len(m), dtype=complex)
    return ((1 + 1j) * eye + (1 - 1j) * m) / 2


_FIXED = {
    GateKind.CZ: np.diag([1, 1, 1, -1]).astype(complex),
    GateKind.CNOT: np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex),
    GateKind.H: _H,
    GateKind.SH: _principal_sqrt_involution(_H),
    GateKind.SX: _principal_sqrt_involution(_X),
    GateKind.X: _X,
    GateKind.S: np.diag([1, 1j]).astype(complex),
    GateKind.T: np.diag([1, np.exp(1j * math.pi / 4)]).astype(complex),
    GateKind.SWAP: _SWAP,
    GateKind.SQSWAP: _principal_sqrt_involution(_SWAP),
}

# generators G with U(t) = exp(-i t G / 2)
_GENERATORS = {
    GateKind.RX: _X,
    GateKind.RY: _Y,
    GateKind.RZ: _Z,
    GateKind.RXX: np.kron(_X, _X),
    GateKind.RZX: np.kron(_Z, _X),
    GateKind.RZZ: np.kron(_Z, _Z),
}


def _stack(rows: Sequence[Sequence[Angle]]) -> np.ndarray:
    flat = np.broadcast_arrays(*[np.asarray(x, dtype=complex) for row in rows for x in row])
    out = np.stack(flat, axis=-1)
    return out.reshape(flat[0].shape + (len(rows), len(rows[0])))


def _as_angles(kind: GateKind, params: Sequence[Angle]) -> list:
    if len(params) != kind.n_params:
        raise ArityError(f"{kind.label} takes {kind.n_params} angle(s), got {len(params)}")
    return [np.asarray(p, dtype=float) for p in params]


def _pauli_rotation(gen: np.ndarray, t: np.ndarray) -> np.ndarray:
    # gen squares to identity, so exp(-i t G/2) = cos(t/2) I - i sin(t/2) G
    c = np.cos(t / 2)[..., None, None]
    s = np.sin(t / 2)[..., None, None]
    return c * np.eye(len(gen)) - 1j * s * gen


def _u3(t, p, l) -> np.ndarray:
    c, s = np.cos(t / 2), np.sin(t / 2)
    return _stack([[c, -np.exp(1j * l) * s],
                   [np.exp(1j * p) * s, np.exp(1j * (p + l)) * c]])


def _controlled(u: np.ndarray) -> np.ndarray:
    out = np.zeros(u.shape[:-2] + (4, 4), dtype=complex)
    out[..., 0, 0] = 1
    out[..., 1, 1] = 1
    out[..., 2:, 2:] = u
    return out


def gate_unitary(kind: GateKind, params: Sequence[Angle] = ()) -> np.ndarray:
    """Matrix of ``kind`` at the given angles.

    Returns a ``(d, d)`` array, or ``(B, d, d)`` when any angle is an array of
    length ``B``.  U3 follows ``[[cos(t/2), -e^{il} sin(t/2)],
    [e^{ip} sin(t/2), e^{i(p+l)} cos(t/2)]]``; CU3 is U3 controlled on the
    first wire.
    """
    angles = _as_angles(kind, params)
    if kind in _FIXED:
        return _FIXED[kind].copy()
    if kind in _GENERATORS:
        return _pauli_rotation(_GENERATORS[kind], angles[0])
    if kind is GateKind.U1:
        lam = angles[0]
        return _stack([[1.0, 0.0], [0.0, np.exp(1j * lam)]])
    if kind is GateKind.U3:
        return _u3(*angles)
    if kind is GateKind.CU3:
        return _controlled(_u3(*angles))
    raise ArityError(f"no matrix for {kind}")  # pragma: no cover


def gate_derivative(kind: GateKind, params: Sequence[Angle], index: int) -> np.ndarray:
    """Partial derivative of ``gate_unitary(kind, params)`` in angle ``index``."""
    angles = _as_angles(kind, params)
    if not 0 <= index < kind.n_params:
        raise ArityError(f"{kind.label} has no angle {index}")
    if kind in _GENERATORS:
        gen = _GENERATORS[kind]
        return -0.5j * gen @ _pauli_rotation(gen, angles[0])
    if kind is GateKind.U1:
        lam = angles[0]
        return _stack([[0.0, 0.0], [0.0, 1j * np.exp(1j * lam)]])
    t, p, l = angles
    c, s = np.cos(t / 2), np.sin(t / 2)
    zero = np.zeros_like(c)
    if index == 0:
        du = _stack([[-s / 2, -np.exp(1j * l) * c / 2],
                     [np.exp(1j * p) * c / 2, -np.exp(1j * (p + l)) * s / 2]])
    elif index == 1:
        du = _stack([[zero, zero],
                     [1j * np.exp(1j * p) * s, 1j * np.exp(1j * (p + l)) * c]])
    else:
        du = _stack([[zero, -1j * np.exp(1j * l) * s],
                     [zero, 1j * np.exp(1j * (p + l)) * c]])
    if kind is GateKind.CU3:
        out = np.zeros(du.shape[:-2] + (4, 4), dtype=complex)
        out[..., 2:, 2:] = du
        return out
    return du


# ---------------------------------------------------------------------------
# data types


@dataclass(frozen=True)
class Gate:
    """One gate application.

    ``params`` always holds concrete angles.  ``param_ids[j]`` is the trainable
    slot feeding angle ``j`` (its stored value is then only a default) or
    ``None`` for a fixed angle.
    """

    kind: GateKind
    wires: tuple[int, ...]
    params: tuple[Angle, ...] = ()
    param_ids: tuple[int | None, ...] = ()

    def __post_init__(self):
        wires = tuple(int(w) for w in self.wires)
        object.__setattr__(self, "wires", wires)
        object.__setattr__(self, "params", tuple(self.params))
        if len(wires) != self.kind.arity:
            raise ArityError(f"{self.kind.label} acts on {self.kind.arity} wire(s), got {wires}")
        if len(set(wires)) != len(wires):
            raise WireError(f"repeated wire in {wires}")
        if min(wires) < 0:
            raise WireError(f"negative wire in {wires}")
        if len(self.params) != self.kind.n_params:
            raise ArityError(f"{self.kind.label} takes {self.kind.n_params} angle(s), got {len(self.params)}")
        ids = tuple(self.param_ids) if self.param_ids else (None,) * self.kind.n_params
        if len(ids) != self.kind.n_params:
            raise ArityError(f"{self.kind.label}: param_ids length {len(ids)}")
        object.__setattr__(self, "param_ids", ids)

    @property
    def trainable(self) -> bool:
        return any(i is not None for i in self.param_ids)

    def angles(self, params: np.ndarray | None = None) -> tuple[Angle, ...]:
        if params is None:
            return self.params
        return tuple(self.params[j] if pid is None else params[pid]
                     for j, pid in enumerate(self.param_ids))

    def unitary(self, params: np.ndarray | None = None) -> np.ndarray:
        return gate_unitary(self.kind, self.angles(params))

    def bind(self, params: np.ndarray | None) -> "Gate":
        """Same gate with every angle fixed at its current value."""
        return Gate(self.kind, self.wires, self.angles(params))


@dataclass(frozen=True)
class Circuit:
    n_qubits: int
    gates: tuple[Gate, ...] = ()
    n_params: int = 0

    def __post_init__(self):
        object.__setattr__(self, "gates", tuple(self.gates))
        if not 1 <= self.n_qubits:
            raise CapacityError(f"n_qubits must be positive, got {self.n_qubits}")
        seen = set()
        for g in self.gates:
            if max(g.wires) >= self.n_qubits:
                raise WireError(f"{g.kind.label} on {g.wires} outside {self.n_qubits} qubits")
            for pid in g.param_ids:
                if pid is None:
                    continue
                if not 0 <= pid < self.n_params:
                    raise ArityError(f"param slot {pid} outside {self.n_params} slots")
                seen.add(pid)
        if len(seen) != self.n_params:
            missing = sorted(set(range(self.n_params)) - seen)
            raise ArityError(f"unreferenced param slots {missing[:5]}")

    def __len__(self) -> int:
        return len(self.gates)

    def bind(self, params: np.ndarray | None) -> "Circuit":
        return Circuit(self.n_qubits, [g.bind(params) for g in self.gates], 0)

    def default_params(self) -> np.ndarray:
        out = np.zeros(self.n_params)
        for g in self.gates:
            for j, pid in enumerate(g.param_ids):
                if pid is not None:
                    out[pid] = g.params[j]
        return out

    def __add__(self, other: "Circuit") -> "Circuit":
        if other.n_params:
            raise ValueError("right operand of + must have no trainable slots")
        return Circuit(max(self.n_qubits, other.n_qubits), self.gates + other.gates, self.n_params)


@dataclass(frozen=True)
class Statevector:
    """Amplitudes of shape ``(2**n,)``, or ``(B, 2**n)`` for a batch of states."""

    n_qubits: int
    amps: np.ndarray

    @property
    def batched(self) -> bool:
        return self.amps.ndim == 2

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amps) ** 2

    def norm(self):
        return np.sqrt(self.probabilities().sum(axis=-1))


@dataclass(frozen=True)
class PauliString:
    ops: Mapping[int, str] = field(default_factory=dict)
    coefficient: float = 1.0

    def __post_init__(self):
        ops = {int(q): p.upper() for q, p in dict(self.ops).items() if p.upper() != "I"}
        for q, p in ops.items():
            if p not in "XYZ" or q < 0:
                raise FormatError(f"bad Pauli factor {p!r} on qubit {q}")
        object.__setattr__(self, "ops", ops)

    def matrix(self, n_qubits: int) -> np.ndarray:
        out = np.array([[1.0 + 0j]])
        for q in reversed(range(n_qubits)):
            out = np.kron(out, PAULI[self.ops.get(q, "I")])
        return self.coefficient * out


# ---------------------------------------------------------------------------
# kernels


def _apply_matrix(t: np.ndarray, m: np.ndarray, axes: Sequence[int]) -> np.ndarray:
    """Contract ``m`` (``(d, d)`` or ``(B, d, d)``) into tensor axes ``axes``.

    ``t`` has a leading batch axis followed by qubit axes of size 2.
    """
    k = len(axes)
    if m.ndim == 2:
        # shared matrix: fold the batch into one GEMM
        front = list(range(k))
        t = np.moveaxis(t, axes, front)
        shape = t.shape
        t = (m @ t.reshape(2 ** k, -1)).reshape(shape)
        return np.moveaxis(t, front, axes)
    front = list(range(1, k + 1))
    t = np.moveaxis(t, axes, front)
    shape = t.shape
    t = np.matmul(m, t.reshape(shape[0], 2 ** k, -1))
    return np.moveaxis(t.reshape(shape), front, axes)


def _axes(n: int, wires: Iterable[int]) -> list[int]:
    return [n - w for w in wires]


def _check_n(n: int):
    if not 1 <= n <= MAX_QUBITS:
        raise CapacityError(f"statevector supports 1..{MAX_QUBITS} qubits, got {n}")


def new_zero_state(n: int, batch: int | None = None) -> Statevector:
    _check_n(n)
    shape = (2 ** n,) if batch is None else (batch, 2 ** n)
    amps = np.zeros(shape, dtype=complex)
    amps[..., 0] = 1.0
    return Statevector(n, amps)


def _as_tensor(state: Statevector) -> np.ndarray:
    amps = state.amps if state.batched else state.amps[None]
    return amps.reshape((amps.shape[0],) + (2,) * state.n_qubits)


def _from_tensor(state: Statevector, t: np.ndarray) -> Statevector:
    amps = t.reshape(t.shape[0], -1)
    return Statevector(state.n_qubits, amps if state.batched else amps[0])


def apply_gate(state: Statevector, gate: Gate, params: np.ndarray | None = None) -> Statevector:
    if max(gate.wires) >= state.n_qubits:
        raise WireError(f"{gate.kind.label} on {gate.wires} outside {state.n_qubits} qubits")
    t = _apply_matrix(_as_tensor(state), gate.unitary(params), _axes(state.n_qubits, gate.wires))
    return _from_tensor(state, t)


def _embed(m: np.ndarray, wires: Sequence[int], group: Sequence[int]) -> np.ndarray:
    """Lift a matrix on ``wires`` to the ordered wire set ``group``."""
    d = 2 ** len(group)
    eye = np.eye(d, dtype=complex).reshape((d,) + (2,) * len(group))
    out = _apply_matrix(eye, m, [1 + list(group).index(w) for w in wires])
    return out.reshape(d, d).T


def fuse_gates(gates: Sequence[Gate], params: np.ndarray | None, fuse_width: int = 2):
    """Group consecutive gates into blocks acting on at most ``fuse_width`` wires.

    Yields ``(wires, matrix)`` pairs.  Gates with per-sample angles are emitted
    on their own since their matrices differ across the batch.
    """
    group: list[int] = []
    mat = None
    for g in gates:
        u = g.unitary(params)
        if u.ndim == 3:
            if mat is not None:
                yield tuple(group), mat
                group, mat = [], None
            yield g.wires, u
            continue
        union = group + [w for w in g.wires if w not in group]
        if mat is not None and len(union) <= fuse_width:
            if len(union) > len(group):
                mat = np.kron(mat, np.eye(2 ** (len(union) - len(group))))
                group = union
            mat = _embed(u, g.wires, group) @ mat
        else:
            if mat is not None:
                yield tuple(group), mat
            group, mat = list(g.wires), u
    if mat is not None:
        yield tuple(group), mat


def evolve(amps: np.ndarray, n: int, gates: Sequence[Gate], params: np.ndarray | None = None,
           mode: str = "dynamic", fuse_width: int = 2) -> np.ndarray:
    """Run ``gates`` on a ``(B, 2**n)`` amplitude array and return the result."""
    t = amps.reshape((amps.shape[0],) + (2,) * n)
    if mode == "dynamic":
        for g in gates:
            t = _apply_matrix(t, g.unitary(params), _axes(n, g.wires))
    elif mode == "static":
        for wires, m in fuse_gates(gates, params, fuse_width):
            t = _apply_matrix(t, m, _axes(n, wires))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return t.reshape(amps.shape[0], -1)


def run_circuit(circuit: Circuit, params: np.ndarray | None = None, mode: str = "dynamic",
                fuse_width: int = 2, initial: Statevector | None = None) -> Statevector:
    """Simulate ``circuit`` from ``initial`` (default ``|0...0>``).

    ``mode="static"`` fuses runs of gates spanning at most ``fuse_width`` wires
    into one matrix before applying it; the result matches dynamic mode.
    """
    if params is None:
        params = circuit.default_params()
    params = np.asarray(params, dtype=float)
    if params.shape != (circuit.n_params,):
        raise ArityError(f"expected {circuit.n_params} params, got shape {params.shape}")
    state = initial if initial is not None else new_zero_state(circuit.n_qubits)
    if state.n_qubits != circuit.n_qubits:
        raise WireError(f"state has {state.n_qubits} qubits, circuit {circuit.n_qubits}")
    amps = state.amps if state.batched else state.amps[None]
    out = evolve(amps, circuit.n_qubits, circuit.gates, params, mode, fuse_width)
    return Statevector(circuit.n_qubits, out if state.batched else out[0])


def apply_pauli(amps: np.ndarray, n: int, obs: PauliString) -> np.ndarray:
    """``P |psi>`` without the coefficient, for ``(B, 2**n)`` amplitudes."""
    t = amps.reshape((amps.shape[0],) + (2,) * n)
    for q, p in obs.ops.items():
        if q >= n:
            raise WireError(f"Pauli on qubit {q} outside {n} qubits")
        t = _apply_matrix(t, PAULI[p], [n - q])
    return t.reshape(amps.shape)


def z_signs(n: int, qubit: int) -> np.ndarray:
    """Eigenvalue of Z on ``qubit`` for every basis index."""
    return 1.0 - 2.0 * ((np.arange(2 ** n) >> qubit) & 1)


def expectation(state: Statevector, obs: PauliString):
    """``coefficient * <psi|P|psi>``; an array for batched states."""
    amps = state.amps if state.batched else state.amps[None]
    if all(p == "Z" for p in obs.ops.values()):
        signs = np.ones(2 ** state.n_qubits)
        for q in obs.ops:
            if q >= state.n_qubits:
                raise WireError(f"Pauli on qubit {q} outside {state.n_qubits} qubits")
            signs = signs * z_signs(state.n_qubits, q)
        val = (np.abs(amps) ** 2) @ signs
    else:
        val = np.einsum("bi,bi->b", amps.conj(), apply_pauli(amps, state.n_qubits, obs)).real
    val = obs.coefficient * val
    return val if state.batched else float(val[0])


def format_bits(index: int, n: int) -> str:
    return format(index, f"0{n}b")


def sample_counts(state: Statevector, shots: int, rng: np.random.Generator) -> dict[str, int]:
    if shots < 1:
        raise ValueError("shots must be >= 1")
    if state.batched:
        raise ValueError("sample_counts takes a single state")
    p = state.probabilities()
    counts = rng.multinomial(shots, p / p.sum())
    return {format_bits(i, state.n_qubits): int(c) for i, c in enumerate(counts) if c}


# ---------------------------------------------------------------------------
# text format


def _fmt_angle(a: Angle) -> str:
    if np.ndim(a):
        raise FormatError("per-sample angles cannot be serialized")
    return repr(float(a))


def format_circuit(circuit: Circuit) -> str:
    lines = [f"# n_qubits={circuit.n_qubits}"]
    for g in circuit.gates:
        parts = [g.kind.label, ",".join(map(str, g.wires))]
        if g.params:
            parts.append(",".join(_fmt_angle(a) if pid is None else f"@{pid}"
                                  for a, pid in zip(g.params, g.param_ids)))
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def parse_circuit(text: str, n_qubits: int | None = None) -> Circuit:
    gates = []
    declared = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("n_qubits="):
                declared = int(body.split("=", 1)[1])
            continue
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) not in (2, 3):
            raise FormatError(f"line {lineno}: expected 'KIND wires [angles]'")
        try:
            kind = GateKind.parse(fields[0])
            wires = tuple(int(w) for w in fields[1].split(","))
            params, ids = [], []
            if len(fields) == 3:
                for tok in fields[2].split(","):
                    if tok.startswith("@"):
                        ids.append(int(tok[1:]))
                        params.append(0.0)
                    else:
                        ids.append(None)
                        params.append(float(tok))
            gates.append(Gate(kind, wires, tuple(params), tuple(ids)))
        except (ValueError, ArityError, WireError) as exc:
            raise FormatError(f"line {lineno}: {exc}") from None
    n = n_qubits or declared or (max((max(g.wires) for g in gates), default=0) + 1)
    slots = {pid for g in gates for pid in g.param_ids if pid is not None}
    return Circuit(n, gates, max(slots, default=-1) + 1)
