"""Device noise models and density-matrix simulation.

Each compiled gate is applied as a unitary conjugation followed by a
depolarizing channel at the gate's calibrated error rate and thermal
relaxation for the gate's duration on each of its wires.  For speed the three
steps are folded into one superoperator, and consecutive superoperators on at
most two wires are fused before touching the density matrix.
"""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import CapacityError, FormatError, NumericError, RoutingError, ValidationError
from .qstate import PAULI, Circuit, GateKind, PauliString, _apply_matrix, _embed

MAX_DM_QUBITS = 10
CPTP_TOL = 1e-9

BASIS_NAMES = {GateKind.SX: "sx", GateKind.X: "x", GateKind.RZ: "rz", GateKind.CNOT: "cx"}
DEFAULT_DURATIONS = {"sx": 35e-9, "x": 35e-9, "rz": 0.0, "cx": 300e-9}


def _pair(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a < b else (b, a)


@dataclass(frozen=True)
class DeviceModel:
    """Calibration snapshot of a device.

    ``readout[q]`` is the 2x2 confusion matrix of qubit ``q`` with rows indexed
    by the true state and columns by the reported one.
    """

    n_physical: int
    coupling: frozenset
    err_1q: Mapping[tuple[int, str], float] = field(default_factory=dict)
    err_2q: Mapping[tuple[int, int], float] = field(default_factory=dict)
    t1: tuple[float, ...] = ()
    t2: tuple[float, ...] = ()
    gate_time: Mapping[str, float] = field(default_factory=dict)
    readout: np.ndarray | None = None
    name: str = "device"

    def __post_init__(self):
        n = self.n_physical
        if n < 1:
            raise ValidationError("qubits", f"need at least one qubit, got {n}")
        coupling = frozenset(_pair(int(a), int(b)) for a, b in self.coupling)
        for a, b in coupling:
            if a == b or not (0 <= a < n and 0 <= b < n):
                raise ValidationError("topology", f"edge ({a}, {b}) invalid for {n} qubits")
        object.__setattr__(self, "coupling", coupling)
        err_2q = {_pair(*k): float(v) for k, v in dict(self.err_2q).items()}
        for (a, b), p in err_2q.items():
            if (a, b) not in coupling:
                raise ValidationError("errors_2q", f"pair ({a}, {b}) is not coupled")
            if not 0 <= p <= 1:
                raise ValidationError("errors_2q", f"probability {p} outside [0, 1]")
        object.__setattr__(self, "err_2q", err_2q)
        err_1q = {(int(q), k.lower()): float(v) for (q, k), v in dict(self.err_1q).items()}
        for (q, k), p in err_1q.items():
            if not 0 <= q < n:
                raise ValidationError("errors_1q", f"qubit {q} outside device")
            if not 0 <= p <= 1:
                raise ValidationError("errors_1q", f"probability {p} outside [0, 1]")
        object.__setattr__(self, "err_1q", err_1q)
        t1 = tuple(float(x) for x in self.t1) or (math.inf,) * n
        t2 = tuple(float(x) for x in self.t2) or (math.inf,) * n
        if len(t1) != n or len(t2) != n:
            raise ValidationError("relaxation", "need t1 and t2 for every qubit")
        for q, (a, b) in enumerate(zip(t1, t2)):
            if a <= 0 or b <= 0:
                raise ValidationError(f"relaxation[{q}]", "t1 and t2 must be positive")
            if b > 2 * a:
                raise ValidationError(f"relaxation[{q}].t2", f"t2={b} exceeds 2*t1={2 * a}")
        object.__setattr__(self, "t1", t1)
        object.__setattr__(self, "t2", t2)
        times = dict(DEFAULT_DURATIONS)
        times.update({k.lower(): float(v) for k, v in dict(self.gate_time).items()})
        for k, v in times.items():
            if v < 0:
                raise ValidationError("durations", f"{k} has negative duration")
        object.__setattr__(self, "gate_time", times)
        ro = np.tile(np.eye(2), (n, 1, 1)) if self.readout is None else np.asarray(self.readout, dtype=float)
        if ro.shape != (n, 2, 2):
            raise ValidationError("readout", f"expected shape ({n}, 2, 2), got {ro.shape}")
        if np.any(ro < 0) or np.any(np.abs(ro.sum(axis=2) - 1) > 1e-9):
            bad = int(np.argmax(np.abs(ro.sum(axis=2) - 1).max(axis=1)))
            raise ValidationError(f"readout[{bad}]", "confusion rows must be probabilities summing to 1")
        ro.setflags(write=False)
        object.__setattr__(self, "readout", ro)

    def coupled(self, a: int, b: int) -> bool:
        return _pair(a, b) in self.coupling

    def neighbors(self, q: int) -> list[int]:
        return sorted(b if a == q else a for a, b in self.coupling if q in (a, b))

    def gate_error(self, kind: GateKind, wires: Sequence[int]) -> float:
        name = BASIS_NAMES.get(kind, kind.label.lower())
        if len(wires) == 2:
            if not self.coupled(*wires):
                raise RoutingError(f"{kind.label} on uncoupled pair {tuple(wires)}")
            return self.err_2q.get(_pair(*wires), 0.0)
        return self.err_1q.get((wires[0], name), 0.0)

    def duration(self, kind: GateKind) -> float:
        name = BASIS_NAMES.get(kind, kind.label.lower())
        default = DEFAULT_DURATIONS["cx"] if kind.arity == 2 else DEFAULT_DURATIONS["sx"]
        return self.gate_time.get(name, default)

    @classmethod
    def uniform(cls, n: int, edges, err_1q: float = 0.0, err_2q: float = 0.0,
                t1: float = math.inf, t2: float = math.inf, p10: float = 0.0, p01: float = 0.0,
                name: str = "uniform") -> "DeviceModel":
        edges = [_pair(*e) for e in edges]
        e1 = {(q, k): err_1q for q in range(n) for k in ("sx", "x")}
        e2 = {e: err_2q for e in edges}
        ro = np.array([[[1 - p10, p10], [p01, 1 - p01]]] * n)
        return cls(n, frozenset(edges), e1, e2, (t1,) * n, (t2,) * n, {}, ro, name)

    @property
    def noiseless(self) -> bool:
        return (not any(self.err_1q.values()) and not any(self.err_2q.values())
                and all(math.isinf(t) for t in self.t1 + self.t2)
                and np.allclose(self.readout, np.eye(2)))


# ---------------------------------------------------------------------------
# device file format

_SECTIONS = ("device", "topology", "errors_1q", "errors_2q", "relaxation", "readout", "durations")


def _num(tok: str, where: str) -> float:
    try:
        return float(tok)
    except ValueError:
        raise FormatError(f"{where}: {tok!r} is not a number") from None


def parse_device_model(text: str) -> DeviceModel:
    rows: dict[str, list[list[str]]] = {s: [] for s in _SECTIONS}
    section = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            section = line.strip("[]").strip().lower()
            if section not in rows:
                raise FormatError(f"line {lineno}: unknown section [{section}]")
            continue
        if section is None:
            raise FormatError(f"line {lineno}: entry outside any section")
        rows[section].append(line.split() + [f"line {lineno}"])

    meta = {r[0].lower(): r[1] for r in rows["device"] if len(r) >= 3}
    if "qubits" not in meta:
        raise ValidationError("qubits", "missing 'qubits' entry in [device]")
    n = int(meta["qubits"])

    def expect(r, k, name):
        if len(r) - 1 != k:
            raise FormatError(f"{r[-1]}: [{name}] rows take {k} fields")

    edges = []
    for r in rows["topology"]:
        expect(r, 2, "topology")
        edges.append((int(r[0]), int(r[1])))
    e1 = {}
    for r in rows["errors_1q"]:
        expect(r, 3, "errors_1q")
        e1[(int(r[0]), r[1].lower())] = _num(r[2], r[-1])
    e2 = {}
    for r in rows["errors_2q"]:
        expect(r, 3, "errors_2q")
        e2[(int(r[0]), int(r[1]))] = _num(r[2], r[-1])
    t1, t2 = [math.inf] * n, [math.inf] * n
    for r in rows["relaxation"]:
        expect(r, 3, "relaxation")
        q = int(r[0])
        if not 0 <= q < n:
            raise ValidationError("relaxation", f"qubit {q} outside device")
        t1[q], t2[q] = _num(r[1], r[-1]), _num(r[2], r[-1])
    ro = np.tile(np.eye(2), (n, 1, 1))
    for r in rows["readout"]:
        expect(r, 3, "readout")
        q = int(r[0])
        if not 0 <= q < n:
            raise ValidationError("readout", f"qubit {q} outside device")
        p10, p01 = _num(r[1], r[-1]), _num(r[2], r[-1])
        ro[q] = [[1 - p10, p10], [p01, 1 - p01]]
    durations = {}
    for r in rows["durations"]:
        expect(r, 2, "durations")
        durations[r[0].lower()] = _num(r[1], r[-1])
    return DeviceModel(n, frozenset(edges), e1, e2, tuple(t1), tuple(t2), durations, ro,
                       meta.get("name", "device"))


def load_device_model(path: str | Path) -> DeviceModel:
    return parse_device_model(Path(path).read_text())


def format_device_model(dev: DeviceModel) -> str:
    out = ["[device]", f"name {dev.name}", f"qubits {dev.n_physical}", "", "[topology]"]
    out += [f"{a} {b}" for a, b in sorted(dev.coupling)]
    out += ["", "[errors_1q]"] + [f"{q} {k} {p!r}" for (q, k), p in sorted(dev.err_1q.items())]
    out += ["", "[errors_2q]"] + [f"{a} {b} {p!r}" for (a, b), p in sorted(dev.err_2q.items())]
    out += ["", "[relaxation]"] + [f"{q} {a!r} {b!r}" for q, (a, b) in enumerate(zip(dev.t1, dev.t2))]
    out += ["", "[readout]"] + [f"{q} {float(m[0, 1])!r} {float(m[1, 0])!r}" for q, m in enumerate(dev.readout)]
    out += ["", "[durations]"] + [f"{k} {v!r}" for k, v in sorted(dev.gate_time.items())]
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# channels


@dataclass(frozen=True)
class NoiseChannel:
    kraus: tuple[np.ndarray, ...]
    wires: tuple[int, ...] = ()

    def __post_init__(self):
        ks = tuple(np.asarray(k, dtype=complex) for k in self.kraus)
        object.__setattr__(self, "kraus", ks)
        d = ks[0].shape[0]
        total = sum(k.conj().T @ k for k in ks)
        if np.abs(total - np.eye(d)).max() > CPTP_TOL:
            raise NumericError("Kraus operators are not trace preserving")

    @property
    def dim(self) -> int:
        return self.kraus[0].shape[0]

    def superop(self) -> np.ndarray:
        """Matrix acting on the row-major vectorisation of rho."""
        return sum(np.kron(k, k.conj()) for k in self.kraus)

    def apply(self, rho: np.ndarray) -> np.ndarray:
        return sum(k @ rho @ k.conj().T for k in self.kraus)

    def compose(self, other: "NoiseChannel") -> "NoiseChannel":
        """``other`` applied after ``self``."""
        return NoiseChannel(tuple(b @ a for a in self.kraus for b in other.kraus), self.wires)


def depolarizing_kraus(p: float, n_wires: int = 1) -> NoiseChannel:
    if not 0 <= p <= 1:
        raise ValueError(f"depolarizing probability {p} outside [0, 1]")
    if n_wires not in (1, 2):
        raise ValueError("depolarizing channel defined on 1 or 2 wires")
    paulis = [PAULI[c] for c in "IXYZ"]
    if n_wires == 2:
        paulis = [np.kron(a, b) for a, b in itertools.product(paulis, repeat=2)]
    if p == 0:
        return NoiseChannel((paulis[0],))
    w = p / (len(paulis) - 1)
    ks = [math.sqrt(1 - p) * paulis[0]] + [math.sqrt(w) * m for m in paulis[1:]]
    return NoiseChannel(tuple(ks))


def thermal_relaxation_kraus(t1: float, t2: float, t_gate: float) -> NoiseChannel:
    """Amplitude damping followed by pure dephasing.

    Off-diagonal elements decay by ``exp(-t_gate/t2)`` overall and the excited
    population by ``exp(-t_gate/t1)``.
    """
    if t1 <= 0 or t2 <= 0:
        raise ValueError("t1 and t2 must be positive")
    if t2 > 2 * t1:
        raise ValueError(f"t2={t2} exceeds 2*t1={2 * t1}")
    if t_gate < 0:
        raise ValueError("gate time must be non-negative")
    gamma = 1 - math.exp(-t_gate / t1)
    rate_phi = 1 / t2 - 1 / (2 * t1)
    lam = 1 - math.exp(-t_gate * rate_phi) if rate_phi > 0 else 0.0
    damp = [np.array([[1, 0], [0, math.sqrt(1 - gamma)]]), np.array([[0, math.sqrt(gamma)], [0, 0]])]
    dephase = [math.sqrt(1 - lam / 2) * PAULI["I"], math.sqrt(lam / 2) * PAULI["Z"]]
    ks = [d @ a for a in damp for d in dephase]
    return NoiseChannel(tuple(k for k in ks if np.abs(k).max() > 0))


# ---------------------------------------------------------------------------
# density matrices


@dataclass(frozen=True)
class DensityMatrix:
    """``rho`` of shape ``(d, d)`` or ``(B, d, d)`` over physical ``wires``.

    Local qubit ``i`` of the matrix is physical qubit ``wires[i]``.
    """

    n_qubits: int
    rho: np.ndarray
    wires: tuple[int, ...] = ()

    @property
    def batched(self) -> bool:
        return self.rho.ndim == 3

    def trace(self):
        return np.trace(self.rho, axis1=-2, axis2=-1).real

    def probabilities(self) -> np.ndarray:
        return np.diagonal(self.rho, axis1=-2, axis2=-1).real.copy()


@functools.lru_cache(maxsize=4096)
def _depolarizing_superop(p: float, n_wires: int) -> np.ndarray:
    s = depolarizing_kraus(p, n_wires).superop()
    s.setflags(write=False)
    return s


def _gate_superop(gate, device: DeviceModel, relax_cache: dict) -> np.ndarray:
    u = gate.unitary()
    d = u.shape[-1]
    # kron(u, conj(u)), batched over a leading axis when present
    sup = (u[..., :, None, :, None] * u.conj()[..., None, :, None, :]).reshape(u.shape[:-2] + (d * d, d * d))
    k = len(gate.wires)
    p = device.gate_error(gate.kind, gate.wires)
    if p > 0:
        sup = _depolarizing_superop(p, k) @ sup
    dur = device.duration(gate.kind)
    if dur > 0:
        key = (gate.wires, dur)
        if key not in relax_cache:
            chans = [thermal_relaxation_kraus(device.t1[w], device.t2[w], dur) for w in gate.wires]
            ks = [m for m in chans[0].kraus]
            if k == 2:
                ks = [np.kron(a, b) for a in chans[0].kraus for b in chans[1].kraus]
            relax_cache[key] = NoiseChannel(tuple(ks)).superop()
        sup = relax_cache[key] @ sup
    return sup


def _fuse_superops(items):
    """Fuse consecutive ``(wires, S)`` superoperators spanning at most two wires."""
    group, mat = [], None
    for wires, s in items:
        if s.ndim == 3:
            if mat is not None:
                yield tuple(group), mat
                group, mat = [], None
            yield wires, s
            continue
        union = group + [w for w in wires if w not in group]
        if mat is not None and len(union) <= 2:
            if len(union) > len(group):
                labels = [("r", w) for w in group] + [("c", w) for w in group]
                full = [("r", w) for w in union] + [("c", w) for w in union]
                mat = _embed(mat, labels, full)
                group = union
            labels = [("r", w) for w in wires] + [("c", w) for w in wires]
            full = [("r", w) for w in group] + [("c", w) for w in group]
            mat = _embed(s, labels, full) @ mat
        else:
            if mat is not None:
                yield tuple(group), mat
            group, mat = list(wires), s
    if mat is not None:
        yield tuple(group), mat


def dm_run(circuit: Circuit, device: DeviceModel, keep: Sequence[int] = ()) -> DensityMatrix:
    """Noisy simulation of a compiled circuit over physical wires.

    Only qubits touched by a gate, plus ``keep``, are simulated; untouched
    qubits stay in ``|0>`` and carry no noise.  Gates with per-sample angles
    produce a batched density matrix.
    """
    if circuit.n_params:
        raise ValueError("bind trainable parameters before dm_run")
    used = sorted({w for g in circuit.gates for w in g.wires} | set(keep))
    if not used:
        used = [0]
    if max(used) >= device.n_physical:
        raise RoutingError(f"wire {max(used)} outside device of {device.n_physical} qubits")
    m = len(used)
    if m > MAX_DM_QUBITS:
        raise CapacityError(f"density-matrix mode supports {MAX_DM_QUBITS} qubits, circuit needs {m}; "
                            "use the success-rate estimator")
    local = {w: i for i, w in enumerate(used)}
    batch = max((np.size(a) for g in circuit.gates for a in g.params if np.ndim(a)), default=1)
    d = 2 ** m
    rho = np.zeros((batch, d, d), dtype=complex)
    rho[:, 0, 0] = 1.0
    t = rho.reshape((batch,) + (2,) * (2 * m))
    cache: dict = {}
    items = ((g.wires, _gate_superop(g, device, cache)) for g in circuit.gates)
    for wires, s in _fuse_superops(items):
        loc = [local[w] for w in wires]
        axes = [m - q for q in loc] + [2 * m - q for q in loc]
        t = _apply_matrix(t, s, axes)
    rho = t.reshape(batch, d, d)
    batched = any(np.ndim(a) for g in circuit.gates for a in g.params)
    return DensityMatrix(m, rho if batched else rho[0], tuple(used))


def dm_expectation(dm: DensityMatrix, obs: PauliString):
    """``coefficient * tr(rho P)`` with the Pauli indexed by local qubit."""
    mat = obs.matrix(dm.n_qubits)
    val = np.einsum("...ij,ji->...", dm.rho, mat).real
    return val if dm.batched else float(val)


# ---------------------------------------------------------------------------
# readout and success-rate estimation


def _dist_from_dict(probs: Mapping[str, float]) -> tuple[np.ndarray, int]:
    n = len(next(iter(probs)))
    out = np.zeros(2 ** n)
    for bits, p in probs.items():
        if len(bits) != n:
            raise FormatError("bitstrings of unequal length")
        out[int(bits, 2)] += p
    return out, n


def apply_readout_error(probs, device: DeviceModel, wires: Sequence[int] | None = None):
    """Push an outcome distribution through per-qubit confusion matrices.

    ``probs`` is a ``{bitstring: p}`` mapping or an array ``(..., 2**m)`` whose
    local qubit ``i`` was measured on physical qubit ``wires[i]`` (default
    ``i``).  The return type follows the input.
    """
    as_dict = isinstance(probs, Mapping)
    if as_dict:
        arr, m = _dist_from_dict(probs)
    else:
        arr = np.asarray(probs, dtype=float)
        m = int(round(math.log2(arr.shape[-1])))
    wires = list(range(m)) if wires is None else list(wires)
    lead = arr.shape[:-1]
    flat = arr.reshape((-1,) + (2,) * m)
    for i, w in enumerate(wires):
        flat = _apply_matrix(flat, device.readout[w].T, [m - i])
    out = flat.reshape(lead + (2 ** m,))
    if as_dict:
        return {format(i, f"0{m}b"): float(p) for i, p in enumerate(out) if p > 0}
    return out


def success_rate(circuit: Circuit, device: DeviceModel) -> float:
    """Product of per-gate success probabilities ``1 - error``."""
    r = 1.0
    for g in circuit.gates:
        if g.kind not in BASIS_NAMES:
            raise RoutingError(f"{g.kind.label} is not a basis gate; compile first")
        r *= 1.0 - device.gate_error(g.kind, g.wires)
    return r


def augmented_loss(l_noise_free: float, r_overall: float) -> float:
    if not r_overall > 0:
        raise NumericError(f"success rate must be positive, got {r_overall}")
    return l_noise_free / r_overall


def bundled_device(name: str = "t5") -> DeviceModel:
    """Device files shipped with the package: ``t5`` (noisy T shape) and ``t5_ideal``."""
    from importlib import resources

    return parse_device_model(resources.files("qnas.data").joinpath(f"{name}.txt").read_text())


def scale_noise(device: DeviceModel, factor: float) -> DeviceModel:
    """Same device with gate and readout error rates times ``factor`` and
    relaxation times divided by it (probabilities capped at 1/2)."""
    if factor <= 0:
        raise ValueError("factor must be positive")

    def p(x):
        return min(0.5, x * factor)

    ro = device.readout.copy()
    flip = np.minimum(0.5, np.stack([ro[:, 0, 1], ro[:, 1, 0]], axis=1) * factor)
    ro = np.stack([np.stack([1 - flip[:, 0], flip[:, 0]], 1), np.stack([flip[:, 1], 1 - flip[:, 1]], 1)], 1)
    return DeviceModel(device.n_physical, device.coupling, {k: p(v) for k, v in device.err_1q.items()},
                       {k: p(v) for k, v in device.err_2q.items()}, tuple(t / factor for t in device.t1),
                       tuple(t / factor for t in device.t2), device.gate_time, ro, f"{device.name}x{factor:g}")
