"""Evolutionary co-search of SubCircuit and qubit mapping.

A gene is the flat integer vector ``[widths..., n_blocks, mapping...]``.
Scores are losses (lower is better) produced by an estimator that inherits
SuperCircuit parameters, compiles for the device and simulates it.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import CapacityError, InfeasibleError, NumericError, RoutingError, SpecError
from .grad import Task
from .noise import MAX_DM_QUBITS, DeviceModel, augmented_loss, success_rate
from .qcompile import QubitMapping, route
from .qstate import Circuit
from .space import DesignSpace, SubCircuitSpec, SuperCircuit, instantiate
from .tasks import QMLTask, encode, qml_scores, vqe_expectation

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Gene:
    spec: SubCircuitSpec
    mapping: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "mapping", tuple(int(m) for m in self.mapping))

    def __str__(self) -> str:
        return f"{self.spec}; mapping={','.join(map(str, self.mapping))}"

    @classmethod
    def parse(cls, text: str) -> "Gene":
        head, sep, tail = text.strip().rpartition(";")
        key, _, value = tail.strip().partition("=")
        if not sep or key != "mapping":
            raise SpecError(f"bad gene {text!r}")
        return cls(SubCircuitSpec.parse(head), tuple(int(v) for v in value.split(",")))


@dataclass(frozen=True)
class GeneDomain:
    """Value ranges of every gene element for a space on a device."""

    space: DesignSpace
    n_physical: int

    def __post_init__(self):
        if self.space.n_qubits > self.n_physical:
            raise InfeasibleError(f"{self.space.n_qubits} logical qubits on {self.n_physical} physical")

    @property
    def n_width(self) -> int:
        return self.space.n_blocks * self.space.n_layers

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        s = self.space
        lo = np.concatenate([np.ones(self.n_width, int), [1], np.zeros(s.n_qubits, int)])
        hi = np.concatenate([np.tile(s.capacities, s.n_blocks), [s.n_blocks],
                             np.full(s.n_qubits, self.n_physical - 1)])
        return lo, hi

    def encode(self, g: Gene) -> np.ndarray:
        return np.concatenate([np.ravel(g.spec.widths), [g.spec.n_blocks], g.mapping]).astype(int)

    def decode(self, flat: np.ndarray) -> Gene:
        s = self.space
        w = np.asarray(flat[: self.n_width]).reshape(s.n_blocks, s.n_layers)
        spec = SubCircuitSpec(int(flat[self.n_width]), tuple(map(tuple, w)))
        mapping = repair_mapping(flat[self.n_width + 1:], self.n_physical)
        return Gene(spec, tuple(mapping))

    def random(self, rng: np.random.Generator) -> Gene:
        lo, hi = self.bounds
        flat = rng.integers(lo, hi + 1)
        flat[self.n_width + 1:] = rng.choice(self.n_physical, self.space.n_qubits, replace=False)
        return self.decode(flat)


@dataclass
class EvoConfig:
    iterations: int = 40
    population: int = 40
    parents: int = 10
    mutation_count: int = 20
    mutation_prob: float = 0.4
    crossover_count: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.parents + self.mutation_count + self.crossover_count != self.population:
            raise ValueError("parents + mutation_count + crossover_count must equal population")
        if self.parents < 1 or self.iterations < 0:
            raise ValueError("need at least one parent and non-negative iterations")
        if self.crossover_count and self.parents < 2:
            raise ValueError("crossover needs two parents")
        if not 0.0 <= self.mutation_prob <= 1.0:
            raise ValueError("mutation_prob must lie in [0, 1]")


def repair_mapping(mapping: Sequence[int], n_physical: int) -> list[int]:
    """Replace each repeated qubit, left to right, by the smallest unused one."""
    out = [int(m) for m in mapping]
    if len(out) > n_physical:
        raise InfeasibleError(f"{len(out)} logical qubits cannot map onto {n_physical} physical")
    if any(not 0 <= m < n_physical for m in out):
        raise InfeasibleError(f"mapping {out} has qubits outside 0..{n_physical - 1}")
    seen: set[int] = set()
    for i, m in enumerate(out):
        if m in seen:
            m = min(set(range(n_physical)) - set(out))
            out[i] = m
        seen.add(m)
    return out


def mutate(g: Gene, cfg: EvoConfig, rng: np.random.Generator, domain: GeneDomain) -> Gene:
    flat = domain.encode(g)
    lo, hi = domain.bounds
    hit = rng.random(flat.size) < cfg.mutation_prob
    draws = rng.integers(lo, hi + 1)
    flat[hit] = draws[hit]
    return domain.decode(flat)


def crossover(a: Gene, b: Gene, rng: np.random.Generator, domain: GeneDomain) -> Gene:
    fa, fb = domain.encode(a), domain.encode(b)
    pick = rng.random(fa.size) < 0.5
    return domain.decode(np.where(pick, fb, fa))


# ---------------------------------------------------------------------------
# estimation


@dataclass(frozen=True)
class EstimatorMode:
    """``noisy_sim`` runs the density-matrix simulator, ``success_rate`` inflates the
    noise-free loss, ``noise_free`` ignores the device (noise-unaware baseline).
    ``limit`` caps the validation samples used by QML estimates."""

    kind: str
    device: DeviceModel | None = None
    limit: int | None = None

    def __post_init__(self):
        if self.kind not in ("noisy_sim", "success_rate", "noise_free"):
            raise ValueError(f"unknown estimator {self.kind!r}")
        if self.kind != "noise_free" and self.device is None:
            raise ValueError(f"{self.kind} estimator needs a device")

    @classmethod
    def auto(cls, device: DeviceModel, n_qubits: int, limit: int | None = None) -> "EstimatorMode":
        return cls("noisy_sim" if n_qubits <= MAX_DM_QUBITS else "success_rate", device, limit)


def _compiled_success_rate(circuit: Circuit, task: Task, mapping: QubitMapping, device: DeviceModel) -> float:
    if isinstance(task, QMLTask):
        x, _ = task.batch("valid")
        circuit = Circuit(circuit.n_qubits, encode(x[0], task.encoder) + list(circuit.gates), 0)
    return success_rate(route(circuit, mapping, device).circuit, device)


def estimate(g: Gene, sc: SuperCircuit, mode: EstimatorMode, task: Task) -> float:
    """Score of a gene with inherited parameters; +inf when it cannot run."""
    try:
        view = instantiate(sc, g.spec)
        bound = view.bound()
        mapping = QubitMapping(g.mapping)
        if mode.device is not None:
            mapping.check(mode.device)
        if isinstance(task, QMLTask):
            if mode.kind == "noisy_sim":
                return qml_scores(bound, None, task, "valid", mode.device, mapping, mode.limit)["loss"]
            clean = qml_scores(bound, None, task, "valid", limit=mode.limit)["loss"]
            if mode.kind == "noise_free":
                return clean
            return augmented_loss(clean, _compiled_success_rate(bound, task, mapping, mode.device))
        h = task.hamiltonian
        if mode.kind == "noisy_sim":
            return vqe_expectation(bound, None, h, mode.device, mapping)
        clean = vqe_expectation(bound, None, h)
        if mode.kind == "noise_free":
            return clean
        # energies can be negative, so inflate towards the fully mixed value instead of dividing
        r = _compiled_success_rate(bound, task, mapping, mode.device)
        mixed = sum(t.coefficient for t in h.terms if not t.ops)
        return r * clean + (1 - r) * mixed
    except (RoutingError, CapacityError, InfeasibleError, SpecError, NumericError) as exc:
        log.warning("gene %s culled: %s", g, exc)
        return math.inf


class Scorer:
    """Caching wrapper around ``estimate``; ``evaluations`` counts scoring requests."""

    def __init__(self, sc: SuperCircuit, mode: EstimatorMode, task: Task, jobs: int = 1):
        self.sc, self.mode, self.task, self.jobs = sc, mode, task, max(1, jobs)
        self.cache: dict[Gene, float] = {}
        self.evaluations = 0

    def __call__(self, genes: Sequence[Gene]) -> list[float]:
        self.evaluations += len(genes)
        todo = list(dict.fromkeys(g for g in genes if g not in self.cache))
        if self.jobs > 1 and len(todo) > 1:
            with ThreadPoolExecutor(self.jobs) as pool:
                scores = list(pool.map(lambda g: estimate(g, self.sc, self.mode, self.task), todo))
        else:
            scores = [estimate(g, self.sc, self.mode, self.task) for g in todo]
        self.cache.update(zip(todo, scores))
        return [self.cache[g] for g in genes]


# ---------------------------------------------------------------------------
# search loops


def _row(iteration: int, scores: list[float], best: Gene, best_score: float, evaluations: int) -> dict:
    finite = [s for s in scores if math.isfinite(s)]
    return {"iteration": iteration, "best_score": best_score,
            "mean_score": float(np.mean(finite)) if finite else math.inf,
            "evaluations": evaluations, "best_gene": str(best)}


def evolve(sc: SuperCircuit, device: DeviceModel, task: Task, cfg: EvoConfig,
           mode: EstimatorMode | None = None, jobs: int = 1,
           scorer: Scorer | None = None) -> tuple[Gene, list[dict]]:
    """Returns the best gene ever scored and one history row per iteration."""
    mode = mode or EstimatorMode.auto(device, sc.space.n_qubits)
    scorer = scorer or Scorer(sc, mode, task, jobs)
    domain = GeneDomain(sc.space, device.n_physical)
    rng = np.random.default_rng(cfg.seed)
    population = [domain.random(rng) for _ in range(cfg.population)]
    best, best_score = population[0], math.inf
    history = []
    for it in range(cfg.iterations + 1):
        scores = scorer(population)
        order = np.argsort(scores, kind="stable")
        if scores[order[0]] < best_score:
            best, best_score = population[order[0]], scores[order[0]]
        history.append(_row(it, scores, best, best_score, scorer.evaluations))
        if it == cfg.iterations:
            break
        parents = [population[i] for i in order[: cfg.parents]]
        children = [mutate(parents[rng.integers(len(parents))], cfg, rng, domain)
                    for _ in range(cfg.mutation_count)]
        for _ in range(cfg.crossover_count):
            i, j = rng.choice(len(parents), size=2, replace=False)
            children.append(crossover(parents[i], parents[j], rng, domain))
        population = parents + children
    return best, history


def random_search(sc: SuperCircuit, device: DeviceModel, task: Task, budget: int, seed: int = 0,
                  mode: EstimatorMode | None = None, chunk: int = 40, jobs: int = 1) -> tuple[Gene, list[dict]]:
    """Budget-matched baseline: uniform random genes, scored ``chunk`` at a time."""
    mode = mode or EstimatorMode.auto(device, sc.space.n_qubits)
    scorer = Scorer(sc, mode, task, jobs)
    domain = GeneDomain(sc.space, device.n_physical)
    rng = np.random.default_rng(seed)
    best, best_score = None, math.inf
    history = []
    for it in range(math.ceil(budget / chunk)):
        genes = [domain.random(rng) for _ in range(min(chunk, budget - it * chunk))]
        scores = scorer(genes)
        for g, s in zip(genes, scores):
            if s < best_score or best is None:
                best, best_score = g, s
        history.append(_row(it, scores, best, best_score, scorer.evaluations))
    return best, history


def search_cost(n_train: int, n_eval: int, n_device: int, n_search: int) -> dict[str, float]:
    """Circuit-run bookkeeping: train every candidate vs train one SuperCircuit."""
    naive = n_device * n_search * (n_train + n_eval)
    shared = n_train + n_device * n_search * n_eval
    return {"n_train": n_train, "n_eval": n_eval, "n_device": n_device, "n_search": n_search,
            "naive_runs": naive, "supercircuit_runs": shared, "speedup": naive / shared if shared else math.inf}


def write_history(path: str | Path, rows: list[dict]) -> Path:
    """CSV with floats in shortest round-trip form."""
    path = Path(path)
    fields = list(dict.fromkeys(k for row in rows for k in row)) or ["iteration"]
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, restval="", lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return path
