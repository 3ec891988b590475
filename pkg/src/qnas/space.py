"""Design spaces, the weight-sharing SuperCircuit and SubCircuit sampling.

A SubCircuit is described by how many leading blocks are active and, per
(block, layer), how many leading gates of that layer are kept.  Every view
shares the SuperCircuit's parameter vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import SpecError
from .grad import (OptimizerState, Task, TrainConfig, adam_step, init_params, lr_schedule, total_steps,
                   value_and_grad)
from .qstate import Circuit, Gate, GateKind

K = GateKind

# name -> (prefix layers, block layers, default blocks, front sampling)
_TEMPLATES: dict[str, tuple[tuple[GateKind, ...], tuple[GateKind, ...], int, bool]] = {
    "u3cu3": ((), (K.U3, K.CU3), 8, True),
    "zzry": ((), (K.RZZ, K.RY), 8, True),
    "rxyz": ((K.SH,), (K.RX, K.RY, K.RZ, K.CZ), 8, True),
    "zxxx": ((), (K.RZX, K.RXX), 8, True),
    "rxyzu1cu3": ((), (K.RX, K.S, K.CNOT, K.RY, K.T, K.SWAP, K.RZ, K.H, K.SQSWAP, K.U1, K.CU3), 4, True),
    "ibmqbasis": ((), (K.RZ, K.X, K.RZ, K.SX, K.RZ, K.CNOT), 20, False),
}

DISPLAY_NAMES = {"u3cu3": "U3+CU3", "zzry": "ZZ+RY", "rxyz": "RXYZ", "zxxx": "ZX+XX",
                 "rxyzu1cu3": "RXYZ+U1+CU3", "ibmqbasis": "IBMQ-Basis"}


def _key(name: str) -> str:
    k = "".join(c for c in name.lower() if c.isalnum())
    if k not in _TEMPLATES:
        raise SpecError(f"unknown design space {name!r}; choose from {sorted(DISPLAY_NAMES.values())}")
    return k


@dataclass(frozen=True)
class DesignSpace:
    name: str
    n_qubits: int
    n_blocks: int
    layers: tuple[GateKind, ...]
    prefix: tuple[GateKind, ...] = ()
    front_sampling: bool = True

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def layer_wires(self, kind: GateKind) -> list[tuple[int, ...]]:
        """Gate positions of one layer: one per qubit, or a ring of pairs."""
        n = self.n_qubits
        if kind.arity == 1:
            return [(q,) for q in range(n)]
        if n < 2:
            return []
        return [(i, (i + 1) % n) for i in range(n)]

    def capacity(self, layer: int) -> int:
        return len(self.layer_wires(self.layers[layer]))

    @property
    def capacities(self) -> np.ndarray:
        return np.array([self.capacity(i) for i in range(self.n_layers)], dtype=int)


def design_space(name: str, n_qubits: int, n_blocks: int | None = None) -> DesignSpace:
    prefix, layers, default_blocks, front = _TEMPLATES[_key(name)]
    if n_qubits < 1:
        raise SpecError("n_qubits must be positive")
    n_blocks = default_blocks if n_blocks is None else n_blocks
    if n_blocks < 1:
        raise SpecError("n_blocks must be positive")
    return DesignSpace(DISPLAY_NAMES[_key(name)], n_qubits, n_blocks, layers, prefix, front)


def space_cardinality(space: DesignSpace) -> int:
    """Number of front-legal SubCircuits at full depth, widths in 1..capacity."""
    return math.prod(int(c) for c in space.capacities) ** space.n_blocks


# ---------------------------------------------------------------------------
# SubCircuit specs


@dataclass(frozen=True)
class SubCircuitSpec:
    """``widths[b][l]`` gates kept in layer ``l`` of block ``b``; blocks past
    ``n_blocks`` are inactive whatever their widths say."""

    n_blocks: int
    widths: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(tuple(int(w) for w in row) for row in self.widths))
        object.__setattr__(self, "n_blocks", int(self.n_blocks))

    def effective(self) -> np.ndarray:
        w = np.array(self.widths, dtype=int)
        w[self.n_blocks:] = 0
        return w

    def __str__(self) -> str:
        rows = ",".join(":".join(str(w) for w in row) for row in self.widths)
        return f"blocks={self.n_blocks}; widths={rows}"

    @classmethod
    def parse(cls, text: str) -> "SubCircuitSpec":
        try:
            fields = dict(part.strip().split("=", 1) for part in text.strip().split(";"))
            rows = tuple(tuple(int(w) for w in row.split(":")) for row in fields["widths"].split(","))
            return cls(int(fields["blocks"]), rows)
        except (KeyError, ValueError) as exc:
            raise SpecError(f"bad SubCircuit spec {text!r}") from exc

    @classmethod
    def full(cls, space: DesignSpace) -> "SubCircuitSpec":
        return cls(space.n_blocks, tuple(tuple(space.capacities) for _ in range(space.n_blocks)))


def check_spec(space: DesignSpace, spec: SubCircuitSpec):
    if not 1 <= spec.n_blocks <= space.n_blocks:
        raise SpecError(f"active blocks {spec.n_blocks} outside 1..{space.n_blocks}")
    w = np.array(spec.widths, dtype=int)
    if w.shape != (space.n_blocks, space.n_layers):
        raise SpecError(f"widths shape {w.shape} != {(space.n_blocks, space.n_layers)}")
    if np.any(w < 0) or np.any(w > space.capacities):
        raise SpecError("layer width outside [0, capacity]")


def layer_diff(a: SubCircuitSpec, b: SubCircuitSpec) -> int:
    """Layers whose kept width differs; a block active in only one spec counts all its layers."""
    return int(_diff_counts(np.array(a.widths)[None], np.array([a.n_blocks]), b)[0])


def _diff_counts(widths: np.ndarray, blocks: np.ndarray, prev: SubCircuitSpec) -> np.ndarray:
    n_b = widths.shape[1]
    idx = np.arange(n_b)
    act = idx[None, :] < blocks[:, None]
    prev_act = idx < prev.n_blocks
    pw = np.array(prev.widths)
    both = act & prev_act[None]
    one = act ^ prev_act[None]
    return (one[..., None] | (both[..., None] & (widths != pw[None]))).sum(axis=(1, 2))


# ---------------------------------------------------------------------------
# SuperCircuit


@dataclass
class SuperCircuit:
    space: DesignSpace
    circuit: Circuit
    params: np.ndarray
    # (block, layer, position) -> gate index in ``circuit``; prefix gates use block -1
    index: dict[tuple[int, int, int], int]
    max_layer_diff: int = 7
    n_prefix: int = 0

    @property
    def n_params(self) -> int:
        return self.circuit.n_params


def build_supercircuit(space: DesignSpace, seed: int = 0, max_layer_diff: int = 7) -> SuperCircuit:
    """Every gate of every block; block-, then layer-, then qubit-major."""
    gates: list[Gate] = []
    index: dict[tuple[int, int, int], int] = {}
    n_slots = 0

    def add(kind, wires, key):
        nonlocal n_slots
        ids = tuple(range(n_slots, n_slots + kind.n_params))
        n_slots += kind.n_params
        index[key] = len(gates)
        gates.append(Gate(kind, wires, (0.0,) * kind.n_params, ids))

    for li, kind in enumerate(space.prefix):
        for p, wires in enumerate(space.layer_wires(kind)):
            add(kind, wires, (-1, li, p))
    n_prefix = len(gates)
    for b in range(space.n_blocks):
        for li, kind in enumerate(space.layers):
            for p, wires in enumerate(space.layer_wires(kind)):
                add(kind, wires, (b, li, p))
    circuit = Circuit(space.n_qubits, gates, n_slots)
    params = init_params(n_slots, np.random.default_rng([seed, 1]))
    return SuperCircuit(space, circuit, params, index, max_layer_diff, n_prefix)


# ---------------------------------------------------------------------------
# sampling

REJECTION_ATTEMPTS = 1000


def sample_front(sc: SuperCircuit, rng: np.random.Generator, lower_bound: int = 1) -> SubCircuitSpec:
    """Uniform active depth in [lower_bound, n_blocks], uniform widths in [1, capacity]."""
    space = sc.space
    lower_bound = min(max(1, lower_bound), space.n_blocks)
    blocks = int(rng.integers(lower_bound, space.n_blocks + 1))
    widths = rng.integers(1, space.capacities + 1, size=(space.n_blocks, space.n_layers))
    return SubCircuitSpec(blocks, tuple(map(tuple, widths)))


def sample_restricted(sc: SuperCircuit, prev: SubCircuitSpec, rng: np.random.Generator,
                      lower_bound: int = 1, max_layer_diff: int | None = None) -> SubCircuitSpec:
    """A front sample differing from ``prev`` in at most ``max_layer_diff`` layers.

    Draws the rejection candidates as one array; if none qualifies, perturbs
    randomly chosen active layers of ``prev`` instead.
    """
    limit = sc.max_layer_diff if max_layer_diff is None else max_layer_diff
    if limit <= 0:
        return prev
    space = sc.space
    lower_bound = min(max(1, lower_bound), space.n_blocks)
    k = REJECTION_ATTEMPTS
    blocks = rng.integers(lower_bound, space.n_blocks + 1, size=k)
    widths = rng.integers(1, space.capacities + 1, size=(k, space.n_blocks, space.n_layers))
    ok = np.flatnonzero(_diff_counts(widths, blocks, prev) <= limit)
    if ok.size:
        i = ok[0]
        return SubCircuitSpec(int(blocks[i]), tuple(map(tuple, widths[i])))
    # fallback: step the depth within budget, then re-draw a few shared layers
    n_l = space.n_layers
    depths = [d for d in range(lower_bound, space.n_blocks + 1) if abs(d - prev.n_blocks) * n_l <= limit]
    depth = int(rng.choice(depths)) if depths else lower_bound
    budget = max(0, limit - abs(depth - prev.n_blocks) * n_l)
    w = np.array(prev.widths)
    shared = [(b, li) for b in range(min(depth, prev.n_blocks)) for li in range(n_l)]
    n_change = int(rng.integers(0, min(budget, len(shared)) + 1))
    for j in rng.choice(len(shared), size=n_change, replace=False):
        b, li = shared[j]
        w[b, li] = rng.integers(1, space.capacity(li) + 1)
    return SubCircuitSpec(depth, tuple(map(tuple, w)))


def block_lower_bound(step: int, total: int, n_blocks: int) -> int:
    """n_blocks at step 0, shrinking linearly to 1 at mid-training."""
    half = total / 2
    if half <= 0 or step >= half:
        return 1
    return max(1, int(round(n_blocks - (n_blocks - 1) * step / half)))


# ---------------------------------------------------------------------------
# views


@dataclass
class SubCircuit:
    """Compact-slot circuit whose slot ``i`` is SuperCircuit slot ``slots[i]``."""

    parent: SuperCircuit
    spec: SubCircuitSpec
    circuit: Circuit
    slots: np.ndarray
    gate_ids: tuple[int, ...] = field(default=())

    @property
    def params(self) -> np.ndarray:
        return self.parent.params[self.slots]

    def set_params(self, values: Sequence[float]):
        self.parent.params[self.slots] = np.asarray(values, dtype=float)

    def bound(self) -> Circuit:
        return self.circuit.bind(self.params)


def spec_gate_ids(sc: SuperCircuit, spec: SubCircuitSpec) -> list[int]:
    check_spec(sc.space, spec)
    ids = list(range(sc.n_prefix))
    for b in range(spec.n_blocks):
        for li in range(sc.space.n_layers):
            ids += [sc.index[(b, li, p)] for p in range(spec.widths[b][li])]
    return ids


def instantiate(sc: SuperCircuit, spec: SubCircuitSpec) -> SubCircuit:
    gate_ids = spec_gate_ids(sc, spec)
    slots: list[int] = []
    local: dict[int, int] = {}
    gates = []
    for gi in gate_ids:
        g = sc.circuit.gates[gi]
        ids = []
        for pid in g.param_ids:
            if pid is None:
                ids.append(None)
                continue
            if pid not in local:
                local[pid] = len(slots)
                slots.append(pid)
            ids.append(local[pid])
        gates.append(Gate(g.kind, g.wires, g.params, tuple(ids)))
    circuit = Circuit(sc.space.n_qubits, gates, len(slots))
    return SubCircuit(sc, spec, circuit, np.array(slots, dtype=int), tuple(gate_ids))


# ---------------------------------------------------------------------------
# training


def train_supercircuit(sc: SuperCircuit, task: Task, cfg: TrainConfig) -> tuple[SuperCircuit, list[dict]]:
    """Sampled-subset training of the shared parameters, in place.

    Each step draws a restricted sample, takes the gradient through that
    SubCircuit only and updates only its slots.  Spaces without front
    sampling train the full circuit every step.
    """
    data_rng = np.random.default_rng(cfg.seed)
    sample_rng = np.random.default_rng([cfg.seed, 2])
    total = total_steps(task, cfg)
    opt = OptimizerState.zeros(sc.n_params)
    history: list[dict] = []
    full = SubCircuitSpec.full(sc.space)
    prev: SubCircuitSpec | None = None
    step = epoch = 0
    while step < total:
        for batch in task.train_batches(data_rng, cfg.batch_size):
            if step >= total:
                break
            if not sc.space.front_sampling:
                spec = full
            else:
                lb = block_lower_bound(step, total, sc.space.n_blocks)
                spec = sample_front(sc, sample_rng, lb) if prev is None else \
                    sample_restricted(sc, prev, sample_rng, lb)
            view = instantiate(sc, spec)
            value, g = value_and_grad(view.circuit, task.objective, view.params, batch, cfg.grad_method)
            grads = np.zeros(sc.n_params)
            grads[view.slots] = g
            sc.params[:] = adam_step(opt, sc.params, grads, cfg, step, total, view.slots)
            history.append({"step": step, "epoch": epoch, "lr": lr_schedule(step, cfg, total), "loss": value,
                            "layer_diff": 0 if prev is None else layer_diff(prev, spec), "spec": str(spec)})
            prev = spec
            step += 1
        epoch += 1
    return sc, history
