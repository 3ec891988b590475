"""Magnitude pruning of rotation angles with a cubic ratio ramp and interleaved finetuning."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .grad import OptimizerState, Task, TrainConfig, adam_step, evaluate, lr_schedule, total_steps, value_and_grad
from .qcompile import normalize_angle
from .qstate import Circuit

# keeps floor(ratio * n) stable against products like 0.29 * 100 = 28.999...
_COUNT_EPS = 1e-9
_SCORE_TIE = 1e-9


@dataclass(frozen=True)
class PruneSchedule:
    total: int
    r_final: float = 0.5
    r_initial: float = 0.05
    s_begin: int = 0
    s_end: int | None = None

    def __post_init__(self):
        if self.s_end is None:
            object.__setattr__(self, "s_end", max(self.s_begin + 1, self.total // 2))
        if not 0.0 <= self.r_initial <= self.r_final <= 1.0:
            raise ValueError("need 0 <= r_initial <= r_final <= 1")
        if not self.s_begin < self.s_end <= max(self.total, self.s_begin + 1):
            raise ValueError("need s_begin < s_end <= total")

    @classmethod
    def for_ratio(cls, total: int, r_final: float, r_initial: float = 0.05) -> "PruneSchedule":
        """Default schedule; the initial ratio is clipped to the final one."""
        return cls(total, r_final, min(r_initial, r_final))


def prune_ratio(s_now: int, sched: PruneSchedule) -> float:
    s = min(max(s_now, sched.s_begin), sched.s_end)
    w = (1.0 - (s - sched.s_begin) / (sched.s_end - sched.s_begin)) ** 3
    # convex form of r_f + (r_i - r_f) w; exact at both endpoints
    return sched.r_initial * w + sched.r_final * (1.0 - w)


@dataclass(frozen=True)
class PruneMask:
    pruned: np.ndarray

    @classmethod
    def empty(cls, n: int) -> "PruneMask":
        return cls(np.zeros(n, dtype=bool))

    @property
    def count(self) -> int:
        return int(self.pruned.sum())

    @property
    def fraction(self) -> float:
        return self.count / len(self.pruned) if len(self.pruned) else 0.0

    def to_bits(self) -> str:
        return "".join("1" if b else "0" for b in self.pruned)

    @classmethod
    def from_bits(cls, bits: str) -> "PruneMask":
        return cls(np.array([c == "1" for c in bits], dtype=bool))


def select_mask(params: np.ndarray, ratio: float, prev: PruneMask | None = None) -> PruneMask:
    """Extend ``prev`` with the smallest-magnitude wrapped angles up to floor(ratio * n)."""
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"ratio {ratio} outside [0, 1]")
    params = np.asarray(params, dtype=float)
    n = len(params)
    pruned = np.zeros(n, dtype=bool) if prev is None else prev.pruned.copy()
    target = int(math.floor(ratio * n + _COUNT_EPS))
    extra = target - int(pruned.sum())
    if extra > 0:
        mag = np.abs(normalize_angle(params)) if n else np.zeros(0)
        mag = np.where(pruned, np.inf, mag)
        order = np.lexsort((np.arange(n), mag))
        pruned[order[:extra]] = True
    return PruneMask(pruned)


def prune_finetune(circuit: Circuit, task: Task, sched: PruneSchedule, cfg: TrainConfig,
                   params: np.ndarray) -> tuple[np.ndarray, PruneMask, list[dict]]:
    """Finetune ``params`` while pruning on schedule; pruned slots stay exactly 0.0.

    QML runs return the best-validation parameters among epochs whose mask
    has reached the final ratio; VQE runs return the last parameters.
    """
    params = np.array(params, dtype=float)
    n = circuit.n_params
    total = total_steps(task, cfg)
    rng = np.random.default_rng(cfg.seed)
    opt = OptimizerState.zeros(n)
    mask = PruneMask.empty(n)
    final_count = int(math.floor(sched.r_final * n + _COUNT_EPS))
    history: list[dict] = []
    best, best_val = None, math.inf
    valid = task.validation_batch()
    step = epoch = 0
    while step < total:
        for batch in task.train_batches(rng, cfg.batch_size):
            if step >= total:
                break
            ratio = prune_ratio(step, sched)
            mask = select_mask(params, ratio, mask)
            params[mask.pruned] = 0.0
            value, g = value_and_grad(circuit, task.objective, params, batch, cfg.grad_method)
            active = np.flatnonzero(~mask.pruned)
            params = adam_step(opt, params, g, cfg, step, total, active)
            params[mask.pruned] = 0.0
            history.append({"step": step, "epoch": epoch, "lr": lr_schedule(step, cfg, total),
                            "ratio": ratio, "pruned": mask.count, "loss": value})
            step += 1
        epoch += 1
        if task.kind != "vqe" and mask.count == final_count:
            val = evaluate(circuit, task.objective, params, valid)
            history[-1]["valid_loss"] = val
            if val < best_val:
                best_val, best = val, params.copy()
    # the last steps may still have been below the final count on very short runs
    mask = select_mask(params, sched.r_final, mask)
    params[mask.pruned] = 0.0
    if best is not None:
        params = best
    return params, mask, history


@dataclass
class SweepResult:
    ratio: float
    params: np.ndarray
    mask: PruneMask
    rows: list[dict]


def sweep_ratios(circuit: Circuit, task: Task, ratios: Sequence[float], cfg: TrainConfig, params: np.ndarray,
                 clean_metric: Callable[[np.ndarray], float], noisy_score: Callable[[np.ndarray], float],
                 tolerance: float = 1e-3, r_initial: float = 0.05) -> SweepResult:
    """Prune at each final ratio and keep the best noise-aware score.

    Both callables map parameters to a lower-is-better number.  A ratio is
    admissible only if ``clean_metric`` stays within ``tolerance`` of the
    unpruned parameters; if none is, the unpruned parameters are returned.
    """
    if not len(ratios):
        raise ValueError("ratios must be non-empty")
    params = np.asarray(params, dtype=float)
    base_clean = clean_metric(params)
    total = total_steps(task, cfg)
    rows = []
    best: SweepResult | None = None
    best_score = math.inf
    for r in ratios:
        sched = PruneSchedule.for_ratio(total, r, r_initial)
        p, mask, _ = prune_finetune(circuit, task, sched, cfg, params)
        clean = clean_metric(p)
        score = noisy_score(p)
        ok = clean <= base_clean + tolerance
        rows.append({"ratio": r, "pruned": mask.count, "clean_metric": clean, "noisy_score": score,
                     "admissible": ok})
        # ties (to rounding) go to the larger ratio: fewer gates for the same score
        tied = best is not None and abs(score - best_score) <= _SCORE_TIE and r > best.ratio
        if ok and (score < best_score - _SCORE_TIE or best is None or tied):
            best, best_score = SweepResult(r, p, mask, rows), score
    if best is None:
        return SweepResult(0.0, params.copy(), PruneMask.empty(len(params)), rows)
    best.rows = rows
    return best
