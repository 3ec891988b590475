"""Compilation to the device basis {CNOT, SX, RZ, X} with SWAP routing.

Routing is greedy: a two-qubit gate on an uncoupled pair walks its first
operand along a BFS shortest path (lower physical index wins ties) until the
operands are adjacent.  After decomposition, adjacent RZ gates on a wire are
merged and RZ gates with zero angle are dropped.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InfeasibleError, RoutingError, UnsupportedGateError
from .noise import BASIS_NAMES, DeviceModel
from .qstate import Angle, Circuit, Gate, GateKind

ZERO_TOL = 1e-12
PI = math.pi


def normalize_angle(a: Angle) -> Angle:
    """Wrap into [-pi, pi)."""
    out = np.mod(np.asarray(a, dtype=float) + PI, 2 * PI) - PI
    return float(out) if np.ndim(out) == 0 else out


def is_zero(a: Angle) -> bool:
    # per-sample angles never take the zero-pattern shortcuts
    if np.ndim(a):
        return False
    return abs(normalize_angle(a)) < ZERO_TOL


def _rz(a: Angle, w: int) -> Gate:
    return Gate(GateKind.RZ, (w,), (normalize_angle(a),))


def _sx(w: int) -> Gate:
    return Gate(GateKind.SX, (w,))


def _cx(a: int, b: int) -> Gate:
    return Gate(GateKind.CNOT, (a, b))


def decompose_u3(theta: Angle, phi: Angle, lam: Angle, wire: int = 0) -> list[Gate]:
    """Basis sequence for U3, shortest form for exact-zero angle patterns.

    Gate counts: generic 5; theta = 0 gives a single RZ; lambda = 0 or
    phi = 0 (theta nonzero) gives 4.
    """
    zt, zp, zl = is_zero(theta), is_zero(phi), is_zero(lam)
    if zt:
        if zp and zl:
            return []
        return [_rz(np.add(phi, lam), wire)]
    if zl:
        # RZ(phi + pi) SX RZ(theta + pi) SX
        return [_sx(wire), _rz(np.add(theta, PI), wire), _sx(wire), _rz(np.add(phi, PI), wire)]
    if zp:
        # SX RZ(pi - theta) SX RZ(lambda + pi)
        return [_rz(np.add(lam, PI), wire), _sx(wire), _rz(np.subtract(PI, theta), wire), _sx(wire)]
    return [_rz(lam, wire), _sx(wire), _rz(np.add(theta, PI), wire), _sx(wire), _rz(np.add(phi, PI), wire)]


def u3_angles(u: np.ndarray) -> tuple[float, float, float]:
    """(theta, phi, lambda) with ``u`` equal to U3 of them up to global phase."""
    a, b, c, d = u[0, 0], u[0, 1], u[1, 0], u[1, 1]
    theta = 2 * math.atan2(abs(c), abs(a))
    if abs(c) < ZERO_TOL:
        return 0.0, 0.0, float(np.angle(d / a))
    if abs(a) < ZERO_TOL:
        return PI, float(np.angle(c / -b)), 0.0
    return theta, float(np.angle(c / a)), float(np.angle(-b / a))


def _h(w: int) -> list[Gate]:
    return decompose_u3(PI / 2, 0.0, PI, w)


def _rx(t: Angle, w: int) -> list[Gate]:
    return decompose_u3(t, -PI / 2, PI / 2, w)


def _rzz(t: Angle, a: int, b: int) -> list[Gate]:
    return [_cx(a, b), _rz(t, b), _cx(a, b)]


def decompose_gate(gate: Gate) -> list[Gate]:
    """Basis-gate sequence equal to ``gate`` up to global phase (angles as stored)."""
    k, w, p = gate.kind, gate.wires, gate.params
    if k in (GateKind.CNOT, GateKind.X, GateKind.SX):
        return [Gate(k, w)]
    if k in (GateKind.RZ, GateKind.U1):
        return [] if is_zero(p[0]) else [_rz(p[0], w[0])]
    if k is GateKind.U3:
        return decompose_u3(*p, wire=w[0])
    if k is GateKind.RX:
        return _rx(p[0], w[0])
    if k is GateKind.RY:
        return decompose_u3(p[0], 0.0, 0.0, w[0])
    if k in (GateKind.H, GateKind.SH, GateKind.S, GateKind.T):
        return decompose_u3(*u3_angles(gate.unitary()), wire=w[0])
    if k is GateKind.CZ:
        a, b = w
        return _h(b) + [_cx(a, b)] + _h(b)
    if k is GateKind.RZZ:
        return _rzz(p[0], *w)
    if k is GateKind.RXX:
        a, b = w
        return _h(a) + _h(b) + _rzz(p[0], a, b) + _h(a) + _h(b)
    if k is GateKind.RZX:
        a, b = w
        return _h(b) + _rzz(p[0], a, b) + _h(b)
    if k is GateKind.SWAP:
        a, b = w
        return [_cx(a, b), _cx(b, a), _cx(a, b)]
    if k is GateKind.SQSWAP:
        # sqrt(SWAP) = exp(-i pi/8 (XX + YY + ZZ)) up to phase; the terms commute
        a, b = w
        t = PI / 4
        ryy = _rx(PI / 2, a) + _rx(PI / 2, b) + _rzz(t, a, b) + _rx(-PI / 2, a) + _rx(-PI / 2, b)
        rxx = _h(a) + _h(b) + _rzz(t, a, b) + _h(a) + _h(b)
        return rxx + ryy + _rzz(t, a, b)
    if k is GateKind.CU3:
        theta, phi, lam = p
        c, t = w
        out = []
        out += decompose_gate(Gate(GateKind.U1, (c,), (np.add(lam, phi) / 2,)))
        out += decompose_gate(Gate(GateKind.U1, (t,), (np.subtract(lam, phi) / 2,)))
        out.append(_cx(c, t))
        out += decompose_u3(np.negative(theta) / 2, 0.0, np.negative(np.add(phi, lam)) / 2, t)
        out.append(_cx(c, t))
        out += decompose_u3(np.divide(theta, 2), phi, 0.0, t)
        return out
    raise UnsupportedGateError(f"cannot decompose {k.label}")


@dataclass(frozen=True)
class QubitMapping:
    """``assignment[logical] = physical``."""

    assignment: tuple[int, ...]

    def __post_init__(self):
        a = tuple(int(x) for x in self.assignment)
        object.__setattr__(self, "assignment", a)
        if len(set(a)) != len(a):
            raise InfeasibleError(f"mapping {a} is not injective")
        if any(x < 0 for x in a):
            raise InfeasibleError(f"negative physical index in {a}")

    def __len__(self) -> int:
        return len(self.assignment)

    @classmethod
    def identity(cls, n: int) -> "QubitMapping":
        return cls(tuple(range(n)))

    def check(self, device: DeviceModel):
        if max(self.assignment, default=-1) >= device.n_physical:
            raise InfeasibleError(f"mapping {self.assignment} exceeds {device.n_physical} physical qubits")


@dataclass(frozen=True)
class CompiledCircuit:
    """Basis-gate circuit over physical wires.

    ``provenance[i]`` is the index of the source gate that produced compiled
    gate ``i``.  ``initial_layout``/``final_layout`` map every logical index
    (ancillas included, numbered after the circuit's qubits) to its physical
    qubit before and after the circuit.
    """

    circuit: Circuit
    provenance: tuple[int, ...]
    initial_layout: tuple[int, ...]
    final_layout: tuple[int, ...]
    n_logical: int
    n_swaps: int = 0

    @property
    def gates(self) -> tuple[Gate, ...]:
        return self.circuit.gates

    @property
    def output_wires(self) -> tuple[int, ...]:
        """Physical qubit holding each logical qubit at the end."""
        return self.final_layout[: self.n_logical]


def shortest_path(device: DeviceModel, src: int, dst: int) -> list[int]:
    parent = {src: None}
    queue = deque([src])
    while queue:
        q = queue.popleft()
        if q == dst:
            break
        for nb in device.neighbors(q):
            if nb not in parent:
                parent[nb] = q
                queue.append(nb)
    if dst not in parent:
        raise RoutingError(f"physical qubits {src} and {dst} are not connected")
    path = [dst]
    while path[-1] != src:
        path.append(parent[path[-1]])
    return path[::-1]


def _merge_rz(gates: list[Gate], prov: list[int]) -> tuple[list[Gate], list[int]]:
    out: list[Gate] = []
    out_prov: list[int] = []
    last: dict[int, int] = {}  # wire -> index in out of the last gate touching it
    for g, src in zip(gates, prov):
        if g.kind is GateKind.RZ:
            w = g.wires[0]
            j = last.get(w)
            if j is not None and out[j] is not None and out[j].kind is GateKind.RZ:
                merged = normalize_angle(np.add(out[j].params[0], g.params[0]))
                out[j] = Gate(GateKind.RZ, (w,), (merged,))
                continue
        out.append(g)
        out_prov.append(src)
        for w in g.wires:
            last[w] = len(out) - 1
    keep = [i for i, g in enumerate(out) if not (g.kind is GateKind.RZ and is_zero(g.params[0]))]
    return [out[i] for i in keep], [out_prov[i] for i in keep]


def route(circuit: Circuit, mapping: QubitMapping, device: DeviceModel,
          params: np.ndarray | None = None, optimize: bool = True) -> CompiledCircuit:
    """Map, route and decompose ``circuit`` onto ``device``."""
    if circuit.n_qubits > len(mapping):
        raise InfeasibleError(f"mapping covers {len(mapping)} qubits, circuit has {circuit.n_qubits}")
    mapping.check(device)
    src = circuit.bind(params if circuit.n_params else None)
    spare = [q for q in range(device.n_physical) if q not in mapping.assignment]
    l2p = list(mapping.assignment) + spare
    p2l = {p: l for l, p in enumerate(l2p)}
    initial = tuple(l2p)
    gates: list[Gate] = []
    prov: list[int] = []
    n_swaps = 0
    for i, g in enumerate(src.gates):
        if len(g.wires) == 2:
            a, b = l2p[g.wires[0]], l2p[g.wires[1]]
            if not device.coupled(a, b):
                path = shortest_path(device, a, b)
                for x, y in zip(path[:-2], path[1:-1]):
                    gates += decompose_gate(Gate(GateKind.SWAP, (x, y)))
                    prov += [i] * 3
                    n_swaps += 1
                    lx, ly = p2l[x], p2l[y]
                    l2p[lx], l2p[ly] = y, x
                    p2l[x], p2l[y] = ly, lx
        phys = Gate(g.kind, tuple(l2p[w] for w in g.wires), g.params)
        seq = decompose_gate(phys)
        gates += seq
        prov += [i] * len(seq)
    if optimize:
        gates, prov = _merge_rz(gates, prov)
    out = Circuit(device.n_physical, gates, 0)
    return CompiledCircuit(out, tuple(prov), initial, tuple(l2p), circuit.n_qubits, n_swaps)


def circuit_stats(compiled: CompiledCircuit | Circuit) -> dict[str, int]:
    gates = compiled.gates
    level: dict[int, int] = {}
    depth = 0
    n_1q = n_cnot = 0
    for g in gates:
        d = 1 + max((level.get(w, 0) for w in g.wires), default=0)
        for w in g.wires:
            level[w] = d
        depth = max(depth, d)
        if len(g.wires) == 1:
            n_1q += 1
        elif g.kind is GateKind.CNOT:
            n_cnot += 1
    return {"depth": depth, "n_gates": len(gates), "n_1q": n_1q, "n_cnot": n_cnot}


def is_basis(circuit: Circuit) -> bool:
    return all(g.kind in BASIS_NAMES for g in circuit.gates)
