"""Gradients and the Adam / cosine-schedule training loop.

Two gradient routes are provided: the parameter-shift rule (exact, usable on
shot-based backends) and an adjoint sweep over the statevector, which is what
training uses for speed.  ``finite_diff_grad`` is the independent check for
both.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Iterator, Protocol

import numpy as np

from .errors import NumericError, UnsupportedGateError
from .qstate import (Circuit, Gate, GateKind, _apply_matrix, _axes, evolve, format_circuit,
                     gate_derivative, parse_circuit)

INIT_SCALE = math.pi / 36


class LossFn(Protocol):
    """Pure map from (circuit, params, batch) to a scalar loss.

    ``prepare`` builds the per-sample input states and ``loss_from_amps``
    returns the loss together with its Wirtinger derivative dL/d(psi*), which
    the adjoint sweep consumes.
    """

    kind: str
    n_qubits: int

    def prepare(self, batch: Any) -> np.ndarray: ...

    def loss_from_amps(self, amps: np.ndarray, batch: Any) -> tuple[float, np.ndarray]: ...


def evaluate(circuit: Circuit, loss: LossFn, params: np.ndarray, batch: Any) -> float:
    amps = evolve(loss.prepare(batch), circuit.n_qubits, circuit.gates, params)
    return loss.loss_from_amps(amps, batch)[0]


@dataclass
class TrainConfig:
    lr0: float = 5e-3
    weight_decay: float = 1e-4
    epochs: int = 200
    steps: int | None = None
    batch_size: int = 256
    warmup_steps: int = 0
    seed: int = 0
    grad_method: str = "adjoint"
    eval_every: int = 1

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")


@dataclass
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n: int) -> "OptimizerState":
        return cls(np.zeros(n), np.zeros(n), 0)


def init_params(n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(-INIT_SCALE, INIT_SCALE, size=n)


# ---------------------------------------------------------------------------
# gradients

_HALF_PI = math.pi / 2
_TWO_TERM = ((0.5, _HALF_PI), (-0.5, -_HALF_PI))
_D1 = (math.sqrt(2) + 1) / (4 * math.sqrt(2))
_D2 = (math.sqrt(2) - 1) / (4 * math.sqrt(2))
# generator spectrum {0, +-1/2}: frequencies 1/2 and 1 need four evaluations
_FOUR_TERM = ((_D1, _HALF_PI), (-_D1, -_HALF_PI), (-_D2, 3 * _HALF_PI), (_D2, -3 * _HALF_PI))

SHIFT_RULES: dict[tuple[GateKind, int], tuple[tuple[float, float], ...]] = {
    (GateKind.RX, 0): _TWO_TERM,
    (GateKind.RY, 0): _TWO_TERM,
    (GateKind.RZ, 0): _TWO_TERM,
    (GateKind.RXX, 0): _TWO_TERM,
    (GateKind.RZX, 0): _TWO_TERM,
    (GateKind.RZZ, 0): _TWO_TERM,
    (GateKind.U1, 0): _TWO_TERM,
    (GateKind.U3, 0): _TWO_TERM,
    (GateKind.U3, 1): _TWO_TERM,
    (GateKind.U3, 2): _TWO_TERM,
    (GateKind.CU3, 0): _FOUR_TERM,
    (GateKind.CU3, 1): _TWO_TERM,
    (GateKind.CU3, 2): _TWO_TERM,
}


def _expand_occurrences(circuit: Circuit) -> tuple[Circuit, list[int]]:
    """Give every trainable angle occurrence its own slot."""
    gates, owner = [], []
    for g in circuit.gates:
        ids = []
        for pid in g.param_ids:
            if pid is None:
                ids.append(None)
            else:
                ids.append(len(owner))
                owner.append(pid)
        gates.append(Gate(g.kind, g.wires, g.params, tuple(ids)))
    return Circuit(circuit.n_qubits, gates, len(owner)), owner


def param_shift_grad(circuit: Circuit, loss: LossFn, params: np.ndarray, batch: Any = None) -> np.ndarray:
    params = np.asarray(params, dtype=float)
    expanded, owner = _expand_occurrences(circuit)
    occ_params = params[owner] if owner else np.zeros(0)
    rules = []
    for g in expanded.gates:
        for j, pid in enumerate(g.param_ids):
            if pid is None:
                continue
            rule = SHIFT_RULES.get((g.kind, j))
            if rule is None:
                raise UnsupportedGateError(f"no shift rule for angle {j} of {g.kind.label}")
            rules.append((pid, rule))
    grad = np.zeros(circuit.n_params)
    for pid, rule in rules:
        total = 0.0
        for coeff, shift in rule:
            shifted = occ_params.copy()
            shifted[pid] += shift
            total += coeff * evaluate(expanded, loss, shifted, batch)
        grad[owner[pid]] += total
    return grad


def finite_diff_grad(circuit: Circuit, loss: LossFn, params: np.ndarray, batch: Any = None,
                     h: float = 1e-4) -> np.ndarray:
    if h <= 0:
        raise ValueError("h must be positive")
    params = np.asarray(params, dtype=float)
    grad = np.zeros(circuit.n_params)
    for i in range(circuit.n_params):
        up, dn = params.copy(), params.copy()
        up[i] += h
        dn[i] -= h
        grad[i] = (evaluate(circuit, loss, up, batch) - evaluate(circuit, loss, dn, batch)) / (2 * h)
    return grad


def adjoint_grad(circuit: Circuit, loss: LossFn, params: np.ndarray, batch: Any = None) -> tuple[float, np.ndarray]:
    """Loss and gradient from one forward and one reverse statevector sweep."""
    params = np.asarray(params, dtype=float)
    n = circuit.n_qubits
    psi = evolve(loss.prepare(batch), n, circuit.gates, params)
    value, lam = loss.loss_from_amps(psi, batch)
    shape = (psi.shape[0],) + (2,) * n
    psi, lam = psi.reshape(shape), lam.reshape(shape)
    grad = np.zeros(circuit.n_params)
    for g in reversed(circuit.gates):
        axes = _axes(n, g.wires)
        u = g.unitary(params)
        udag = np.conj(np.swapaxes(u, -1, -2))
        psi = _apply_matrix(psi, udag, axes)
        if g.trainable:
            angles = g.angles(params)
            for j, pid in enumerate(g.param_ids):
                if pid is None:
                    continue
                d = _apply_matrix(psi, gate_derivative(g.kind, angles, j), axes)
                grad[pid] += 2.0 * np.vdot(lam, d).real
        lam = _apply_matrix(lam, udag, axes)
    return value, grad


def value_and_grad(circuit: Circuit, loss: LossFn, params: np.ndarray, batch: Any = None,
                   method: str = "adjoint") -> tuple[float, np.ndarray]:
    if method == "adjoint":
        return adjoint_grad(circuit, loss, params, batch)
    if method == "param_shift":
        return evaluate(circuit, loss, params, batch), param_shift_grad(circuit, loss, params, batch)
    raise ValueError(f"unknown gradient method {method!r}")


# ---------------------------------------------------------------------------
# optimizer


def lr_schedule(step: int, cfg: TrainConfig, total: int | None = None) -> float:
    """Linear warm-up from 0 to ``lr0``, then cosine decay to 0 at ``total``."""
    total = cfg.steps if total is None else total
    if total is None:
        raise ValueError("total step count unknown")
    warm = cfg.warmup_steps
    if warm and step < warm:
        return cfg.lr0 * step / warm
    if total <= warm:
        return cfg.lr0
    progress = min(max((step - warm) / (total - warm), 0.0), 1.0)
    return cfg.lr0 * 0.5 * (1.0 + math.cos(math.pi * progress))


BETA1, BETA2, EPS = 0.9, 0.999, 1e-8


def adam_step(opt: OptimizerState, params: np.ndarray, grads: np.ndarray, cfg: TrainConfig,
              step: int, total: int | None = None, mask: np.ndarray | None = None) -> np.ndarray:
    """One AdamW update at the scheduled rate of ``step``.

    Only slots selected by ``mask`` (index array or boolean mask) are touched;
    their moments advance, all others are left as they were.
    """
    grads = np.asarray(grads, dtype=float)
    if grads.shape != params.shape:
        raise ValueError(f"grad shape {grads.shape} != param shape {params.shape}")
    if not np.all(np.isfinite(grads)):
        raise NumericError("non-finite gradient")
    idx = slice(None) if mask is None else mask
    lr = lr_schedule(step, cfg, total)
    t = opt.step + 1
    m = BETA1 * opt.m[idx] + (1 - BETA1) * grads[idx]
    v = BETA2 * opt.v[idx] + (1 - BETA2) * grads[idx] ** 2
    m_hat = m / (1 - BETA1 ** t)
    v_hat = v / (1 - BETA2 ** t)
    new = params.copy()
    new[idx] = params[idx] - lr * (m_hat / (np.sqrt(v_hat) + EPS) + cfg.weight_decay * params[idx])
    opt.m[idx] = m
    opt.v[idx] = v
    opt.step = t
    return new


# ---------------------------------------------------------------------------
# training


class Task(Protocol):
    kind: str
    objective: LossFn

    def train_batches(self, rng: np.random.Generator, batch_size: int) -> Iterator[Any]: ...

    def steps_per_epoch(self, batch_size: int) -> int: ...

    def validation_batch(self) -> Any: ...


def total_steps(task: Task, cfg: TrainConfig) -> int:
    if cfg.steps is not None:
        return cfg.steps
    return cfg.epochs * task.steps_per_epoch(cfg.batch_size)


def train(circuit: Circuit, task: Task, cfg: TrainConfig, params: np.ndarray | None = None,
          trainable: np.ndarray | None = None) -> tuple[np.ndarray, list[dict]]:
    """Train ``circuit`` on ``task``.

    QML tasks run ``cfg.epochs`` epochs and return the parameters with the best
    validation loss; VQE tasks run ``cfg.steps`` steps and return the last
    parameters.  ``trainable`` restricts updates to a subset of slots.
    """
    rng = np.random.default_rng(cfg.seed)
    if params is None:
        params = init_params(circuit.n_params, np.random.default_rng([cfg.seed, 1]))
    params = np.array(params, dtype=float)
    total = total_steps(task, cfg)
    opt = OptimizerState.zeros(circuit.n_params)
    history: list[dict] = []
    if total == 0:
        return params, history
    step = 0
    best, best_val = params.copy(), math.inf
    objective = task.objective
    if task.kind == "vqe":
        for step in range(total):
            value, g = value_and_grad(circuit, objective, params, None, cfg.grad_method)
            history.append({"step": step, "lr": lr_schedule(step, cfg, total), "loss": value})
            params = adam_step(opt, params, g, cfg, step, total, trainable)
        return params, history
    valid = task.validation_batch()
    epoch = 0
    while step < total:
        for batch in task.train_batches(rng, cfg.batch_size):
            if step >= total:
                break
            value, g = value_and_grad(circuit, objective, params, batch, cfg.grad_method)
            history.append({"step": step, "epoch": epoch, "lr": lr_schedule(step, cfg, total), "loss": value})
            params = adam_step(opt, params, g, cfg, step, total, trainable)
            step += 1
        epoch += 1
        if epoch % cfg.eval_every == 0 or step >= total:
            val = evaluate(circuit, objective, params, valid)
            history[-1]["valid_loss"] = val
            if val < best_val:
                best_val, best = val, params.copy()
    return best, history


# ---------------------------------------------------------------------------
# checkpoints


def _arr(x) -> list[float]:
    return [float(v) for v in np.asarray(x, dtype=float).ravel()]


def save_checkpoint(path: str | Path, circuit: Circuit, params: np.ndarray,
                    opt: OptimizerState | None = None, step: int = 0, **extra) -> Path:
    """Write a JSON checkpoint; floats use shortest round-trip repr."""
    record = {
        "circuit": format_circuit(circuit),
        "n_qubits": circuit.n_qubits,
        "params": _arr(params),
        "optimizer": None if opt is None else {"m": _arr(opt.m), "v": _arr(opt.v), "step": opt.step},
        "step": int(step),
    }
    record.update(extra)
    path = Path(path)
    path.write_text(json.dumps(record, indent=1) + "\n")
    return path


def load_checkpoint(path: str | Path) -> dict:
    record = json.loads(Path(path).read_text())
    record["circuit"] = parse_circuit(record["circuit"], record["n_qubits"])
    record["params"] = np.array(record["params"], dtype=float)
    if record.get("optimizer"):
        o = record["optimizer"]
        record["optimizer"] = OptimizerState(np.array(o["m"]), np.array(o["v"]), int(o["step"]))
    return record
