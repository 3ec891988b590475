"""Seeded desk-scale experiments shared by ``scripts/`` and the acceptance suite.

Each function runs one experiment for one seed and returns a flat dict of
the numbers it measured.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .evo import EstimatorMode, EvoConfig, Gene, evolve, random_search
from .grad import TrainConfig, train
from .noise import DeviceModel, bundled_device, scale_noise
from .prune import sweep_ratios
from .qcompile import QubitMapping, circuit_stats, route
from .space import (SubCircuitSpec, SuperCircuit, build_supercircuit, design_space, instantiate, sample_front,
                    train_supercircuit)
from .tasks import (ENCODERS, QMLTask, VQETask, bundled_hamiltonian, exact_ground_energy, qml_scores,
                    synthetic_dataset, vqe_expectation)


@dataclass(frozen=True)
class QMLSetup:
    """Synthetic 2-class task on four qubits with a U3+CU3 SuperCircuit."""

    n_samples: int = 300
    radius: float = 1.0
    spread: float = 0.3
    max_offset: float = 0.5
    n_blocks: int = 3
    noise_scale: float = 1.0
    super_epochs: int = 50
    sub_epochs: int = 30
    lr0: float = 0.05
    batch_size: int = 32
    estimator_limit: int | None = 40

    def task(self, seed: int) -> QMLTask:
        splits = synthetic_dataset(self.n_samples, 2, 16, seed=seed, radius=self.radius, spread=self.spread,
                                   max_offset=self.max_offset)
        return QMLTask(splits, ENCODERS["4x4_ryzxy"])

    def device(self) -> DeviceModel:
        dev = bundled_device("t5")
        return dev if self.noise_scale == 1.0 else scale_noise(dev, self.noise_scale)

    def train_cfg(self, seed: int, epochs: int) -> TrainConfig:
        return TrainConfig(lr0=self.lr0, epochs=epochs, batch_size=self.batch_size, seed=seed)

    def supercircuit(self, task: QMLTask, seed: int) -> SuperCircuit:
        sc = build_supercircuit(design_space("U3+CU3", 4, self.n_blocks), seed=seed)
        train_supercircuit(sc, task, self.train_cfg(seed, self.super_epochs))
        return sc


# harder margin and a noisier device, so that noise decides some test labels
NOISY_QML = QMLSetup(n_samples=600, radius=0.8, spread=0.4, max_offset=0.7, noise_scale=3.0, estimator_limit=60)


def _inherited_loss(sc: SuperCircuit, spec: SubCircuitSpec, task: QMLTask) -> float:
    view = instantiate(sc, spec)
    return qml_scores(view.circuit, view.params, task)["loss"]


def ranking_fidelity(seed: int, n_specs: int = 20, scratch_epochs: int = 50,
                     setup: QMLSetup = QMLSetup()) -> dict:
    """Inherited vs from-scratch validation loss over random front samples."""
    from scipy.stats import spearmanr

    task = setup.task(seed)
    sc = setup.supercircuit(task, seed)
    rng = np.random.default_rng([seed, 7])
    specs = [sample_front(sc, rng) for _ in range(n_specs)]
    inherited = [_inherited_loss(sc, s, task) for s in specs]
    scratch = []
    for s in specs:
        c = instantiate(sc, s).circuit
        p, _ = train(c, task, setup.train_cfg(seed, scratch_epochs))
        scratch.append(qml_scores(c, p, task)["loss"])
    rho = float(spearmanr(inherited, scratch)[0])
    return {"seed": seed, "spearman": rho, "inherited": inherited, "scratch": scratch,
            "specs": [str(s) for s in specs]}


def search_vs_random(seed: int, setup: QMLSetup = QMLSetup(), cfg: EvoConfig | None = None) -> dict:
    """Best noisy estimate of evolution vs random search at the same number of scoring passes."""
    cfg = cfg or EvoConfig(seed=seed)
    task = setup.task(seed)
    device = setup.device()
    sc = setup.supercircuit(task, seed)
    mode = EstimatorMode("noisy_sim", device, setup.estimator_limit)
    best, hist = evolve(sc, device, task, cfg, mode)
    budget = cfg.population * (cfg.iterations + 1)
    rbest, rhist = random_search(sc, device, task, budget, seed=seed, mode=mode)
    return {"seed": seed, "evo_best": hist[-1]["best_score"], "random_best": rhist[-1]["best_score"],
            "evaluations": hist[-1]["evaluations"], "random_evaluations": rhist[-1]["evaluations"],
            "evo_gene": str(best), "random_gene": str(rbest), "evo_history": hist, "random_history": rhist,
            "supercircuit": sc, "task": task, "device": device}


def _qml_final(sc: SuperCircuit, gene: Gene, task: QMLTask, device: DeviceModel, setup: QMLSetup,
               seed: int) -> dict:
    c = instantiate(sc, gene.spec).circuit
    m = QubitMapping(gene.mapping)
    p, _ = train(c, task, setup.train_cfg(seed, setup.sub_epochs))
    clean = qml_scores(c, p, task, "test")
    noisy = qml_scores(c, p, task, "test", device, m)
    return {"circuit": c, "mapping": m, "params": p, "clean_accuracy": clean["accuracy"],
            "noisy_accuracy": noisy["accuracy"], "noisy_loss": noisy["loss"]}


def pruning_payoff(seed: int, setup: QMLSetup = QMLSetup(), gene: Gene | None = None,
                   sc: SuperCircuit | None = None, ratios=(0.1, 0.2, 0.3, 0.4, 0.5),
                   finetune_epochs: int = 5) -> dict:
    """Prune the searched circuit and compare it with the unpruned one."""
    task = setup.task(seed)
    device = setup.device()
    if gene is None or sc is None:
        sc = setup.supercircuit(task, seed)
        gene, _ = evolve(sc, device, task, EvoConfig(seed=seed),
                         EstimatorMode("noisy_sim", device, setup.estimator_limit))
    base = _qml_final(sc, gene, task, device, setup, seed)
    c, m, p = base["circuit"], base["mapping"], base["params"]
    res = sweep_ratios(c, task, ratios, TrainConfig(lr0=0.01, epochs=finetune_epochs, batch_size=setup.batch_size,
                                                    seed=seed), p,
                       lambda q: -qml_scores(c, q, task, "valid")["accuracy"],
                       lambda q: qml_scores(c, q, task, "valid", device, m, setup.estimator_limit)["loss"])
    before = circuit_stats(route(c, m, device, p))
    after = circuit_stats(route(c, m, device, res.params))
    clean_before = qml_scores(c, p, task, "valid")["accuracy"]
    clean_after = qml_scores(c, res.params, task, "valid")["accuracy"]
    noisy_before = qml_scores(c, p, task, "test", device, m)
    noisy_after = qml_scores(c, res.params, task, "test", device, m)
    return {"seed": seed, "ratio": res.ratio, "gene": str(gene), "gates_before": before["n_gates"],
            "gates_after": after["n_gates"], "n_1q_before": before["n_1q"], "n_1q_after": after["n_1q"],
            "clean_acc_before": clean_before, "clean_acc_after": clean_after,
            "noisy_loss_before": noisy_before["loss"], "noisy_loss_after": noisy_after["loss"],
            "noisy_acc_before": noisy_before["accuracy"], "noisy_acc_after": noisy_after["accuracy"],
            "sweep": res.rows}


def noise_adaptive_gain(seed: int, setup: QMLSetup = NOISY_QML, cfg: EvoConfig | None = None) -> dict:
    """Noisy test accuracy of circuits found with and without the noisy estimator."""
    cfg = cfg or EvoConfig(seed=seed)
    task = setup.task(seed)
    device = setup.device()
    sc = setup.supercircuit(task, seed)
    aware, _ = evolve(sc, device, task, cfg, EstimatorMode("noisy_sim", device, setup.estimator_limit))
    unaware, _ = evolve(sc, device, task, cfg, EstimatorMode("noise_free", None, setup.estimator_limit))
    a = _qml_final(sc, aware, task, device, setup, seed)
    u = _qml_final(sc, unaware, task, device, setup, seed)
    return {"seed": seed, "aware_gene": str(aware), "unaware_gene": str(unaware),
            "aware_clean": a["clean_accuracy"], "aware_noisy": a["noisy_accuracy"],
            "unaware_clean": u["clean_accuracy"], "unaware_noisy": u["noisy_accuracy"],
            "aware_noisy_loss": a["noisy_loss"], "unaware_noisy_loss": u["noisy_loss"]}


def vqe_h2(seed: int, n_blocks: int = 4, steps: int = 300, lr0: float = 0.05,
           cfg: EvoConfig | None = None) -> dict:
    """Searched vs full-depth U3+CU3 ansatz for H2 on the noisy T device."""
    cfg = cfg or EvoConfig(seed=seed)
    h = bundled_hamiltonian("h2")
    task = VQETask(h)
    device = bundled_device("t5")
    tcfg = TrainConfig(lr0=lr0, steps=steps, seed=seed)
    sc = build_supercircuit(design_space("U3+CU3", 2, n_blocks), seed=seed)
    train_supercircuit(sc, task, tcfg)
    gene, _ = evolve(sc, device, task, cfg, EstimatorMode("noisy_sim", device))
    c = instantiate(sc, gene.spec).circuit
    p, _ = train(c, task, tcfg)
    full = sc.circuit
    pf, _ = train(full, task, tcfg)
    return {"seed": seed, "exact": exact_ground_energy(h), "gene": str(gene),
            "searched_clean": vqe_expectation(c, p, h),
            "searched_noisy": vqe_expectation(c, p, h, device, QubitMapping(gene.mapping)),
            "baseline_clean": vqe_expectation(full, pf, h),
            "baseline_noisy": vqe_expectation(full, pf, h, device, QubitMapping.identity(2))}
