"""Command-line pipeline: train-super, search, train-sub, prune, eval, plus grad-check and cost-report.

Configuration precedence, lowest first: built-in defaults, the JSON config
file, ``--set section.key=value`` overrides, then the dedicated flags
(``--seed``, ``--run-dir``).  Each stage reads its inputs from the run
directory and writes its outputs there:

    config.json          resolved configuration
    super.json           SuperCircuit checkpoint      super_history.csv
    gene.txt             best gene                    search_history.csv
    sub.json             trained SubCircuit           sub_history.csv
    pruned.json          pruned SubCircuit + mask     prune_sweep.csv
    eval_<ckpt>.csv      metrics                      eval_<ckpt>.txt
    log.txt
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import math
import sys
from dataclasses import fields
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import CapacityError, ConfigError, FormatError, InfeasibleError, NumericError, SpecError
from .evo import EstimatorMode, EvoConfig, Gene, evolve, search_cost, write_history
from .grad import (TrainConfig, finite_diff_grad, load_checkpoint, param_shift_grad, adjoint_grad,
                   save_checkpoint, total_steps, train)
from .noise import DeviceModel, bundled_device, load_device_model, scale_noise, success_rate
from .prune import sweep_ratios
from .qcompile import QubitMapping, circuit_stats, route
from .qstate import Circuit, Gate, GateKind, PauliString, parse_circuit
from .space import SubCircuitSpec, build_supercircuit, design_space, instantiate, train_supercircuit
from .tasks import (ENCODERS, QMLTask, VQETask, bundled_hamiltonian, load_hamiltonian, mnist_splits,
                    qml_scores, synthetic_dataset, vqe_expectation)

log = logging.getLogger("qnas")

EXIT_CONFIG, EXIT_NUMERIC, EXIT_CAPACITY = 2, 3, 4

_TRAIN = {f.name: f.default for f in fields(TrainConfig)}
_EVO = {f.name: f.default for f in fields(EvoConfig)}

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "run_dir": "runs/default",
    "task": {"kind": "qml", "dataset": "synthetic", "n_samples": 300, "n_classes": 2, "encoder": "4x4_ryzxy",
             "radius": 1.0, "spread": 0.3, "max_offset": 0.5, "digits": [3, 6], "data_dir": None, "limit": None,
             "hamiltonian": "h2"},
    "space": {"name": "U3+CU3", "n_blocks": None, "max_layer_diff": 7},
    "device": "t5",
    "noise_scale": 1.0,
    "circuit": None,
    "mapping": None,
    "train_super": dict(_TRAIN),
    "search": dict(_EVO, estimator="auto", limit=None),
    "train_sub": dict(_TRAIN),
    "prune": {"ratios": [0.1, 0.2, 0.3, 0.4, 0.5], "r_initial": 0.05, "tolerance": 1e-3, "train": dict(_TRAIN)},
    "eval": {"split": "test", "limit": None},
}
_SEEDED = (("train_super",), ("search",), ("train_sub",), ("prune", "train"))


def _merge(base: dict, update: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in update.items():
        name = f"{where}{k}"
        if k not in out:
            raise ConfigError(f"{name}: unknown config field")
        if isinstance(out[k], dict) and v is not None:
            if not isinstance(v, dict):
                raise ConfigError(f"{name}: expected a mapping")
            out[k] = _merge(out[k], v, name + ".")
        else:
            out[k] = v
    return out


def _set(cfg: dict, assignment: str):
    key, eq, raw = assignment.partition("=")
    if not eq:
        raise ConfigError(f"--set expects key=value, got {assignment!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = {}
    cur = node
    parts = key.strip().split(".")
    for p in parts[:-1]:
        cur[p] = {}
        cur = cur[p]
    cur[parts[-1]] = value
    return _merge(cfg, node)


def load_config(path: str | Path | None = None, overrides: Sequence[str] = (), seed: int | None = None,
                run_dir: str | Path | None = None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config: file {p} not found")
        try:
            cfg = _merge(cfg, json.loads(p.read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: {exc}") from None
    for a in overrides:
        cfg = _set(cfg, a)
    if seed is not None:
        cfg["seed"] = seed
    if run_dir is not None:
        cfg["run_dir"] = str(run_dir)
    for sect in _SEEDED:
        node = cfg
        for s in sect:
            node = node[s]
        if node.get("seed") in (None, 0) and cfg["seed"]:
            node["seed"] = cfg["seed"]
    return cfg


def _train_cfg(section: dict, where: str) -> TrainConfig:
    try:
        return TrainConfig(**section)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _evo_cfg(section: dict) -> EvoConfig:
    try:
        return EvoConfig(**{k: v for k, v in section.items() if k in _EVO})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"search: {exc}") from None


def build_task(cfg: dict):
    t = cfg["task"]
    if t["kind"] == "vqe":
        name = t["hamiltonian"]
        try:
            h = load_hamiltonian(name) if Path(name).suffix else bundled_hamiltonian(name)
        except (FileNotFoundError, ModuleNotFoundError):
            raise ConfigError(f"task.hamiltonian: {name!r} not found") from None
        return VQETask(h)
    if t["kind"] != "qml":
        raise ConfigError(f"task.kind: expected 'qml' or 'vqe', got {t['kind']!r}")
    if t["encoder"] not in ENCODERS:
        raise ConfigError(f"task.encoder: unknown encoder {t['encoder']!r}")
    enc = ENCODERS[t["encoder"]]
    if t["dataset"] == "synthetic":
        splits = synthetic_dataset(t["n_samples"], t["n_classes"], enc.capacity, seed=cfg["seed"],
                                   radius=t["radius"], spread=t["spread"], max_offset=t["max_offset"])
    elif t["dataset"] == "mnist":
        try:
            splits = mnist_splits(t["digits"], root=t["data_dir"], seed=cfg["seed"], limit=t["limit"])
        except FileNotFoundError as exc:
            raise ConfigError(f"task.data_dir: {exc}") from None
    else:
        raise ConfigError(f"task.dataset: unknown dataset {t['dataset']!r}")
    return QMLTask(splits, enc)


def build_device(cfg: dict) -> DeviceModel:
    name = cfg["device"]
    try:
        dev = load_device_model(name) if Path(name).suffix or "/" in name else bundled_device(name)
    except FileNotFoundError:
        raise ConfigError(f"device: file {name!r} not found") from None
    scale = cfg["noise_scale"]
    if not isinstance(scale, (int, float)) or scale <= 0:
        raise ConfigError(f"noise_scale: expected a positive number, got {scale!r}")
    return dev if scale == 1 else scale_noise(dev, scale)


def space_descriptor(cfg: dict, n_qubits: int) -> dict:
    s = cfg["space"]
    try:
        space = design_space(s["name"], n_qubits, s["n_blocks"])
    except SpecError as exc:
        raise ConfigError(f"space.name: {exc}") from None
    return {"name": space.name, "n_qubits": n_qubits, "n_blocks": space.n_blocks,
            "max_layer_diff": s["max_layer_diff"]}


def _run_dir(cfg: dict) -> Path:
    d = Path(cfg["run_dir"])
    d.mkdir(parents=True, exist_ok=True)
    (d / "config.json").write_text(json.dumps(cfg, indent=1, sort_keys=True) + "\n")
    return d


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise ConfigError(f"{what}: {path} not found")
    return path


def _check_fit(task, device: DeviceModel):
    if task.n_qubits > device.n_physical:
        raise ConfigError(f"device: {device.n_physical} qubits cannot hold a {task.n_qubits}-qubit task")


# ---------------------------------------------------------------------------
# stages


def cmd_train_super(cfg: dict) -> Path:
    run = _run_dir(cfg)
    task = build_task(cfg)
    desc = space_descriptor(cfg, task.n_qubits)
    tcfg = _train_cfg(cfg["train_super"], "train_super")
    sc = build_supercircuit(design_space(desc["name"], desc["n_qubits"], desc["n_blocks"]), seed=tcfg.seed,
                            max_layer_diff=desc["max_layer_diff"])
    sc, history = train_supercircuit(sc, task, tcfg)
    write_history(run / "super_history.csv", history)
    out = save_checkpoint(run / "super.json", sc.circuit, sc.params, step=len(history), stage="super", space=desc)
    log.info("SuperCircuit trained for %d steps -> %s", len(history), out)
    return out


def _load_super(cfg: dict, task, path: Path | None):
    path = _require(path or Path(cfg["run_dir"]) / "super.json", "super checkpoint")
    ck = load_checkpoint(path)
    desc = space_descriptor(cfg, task.n_qubits)
    if ck.get("space") != desc:
        raise ConfigError(f"space: checkpoint space {ck.get('space')} does not match config {desc}")
    sc = build_supercircuit(design_space(desc["name"], desc["n_qubits"], desc["n_blocks"]),
                            max_layer_diff=desc["max_layer_diff"])
    sc.params[:] = ck["params"]
    return sc


def _estimator(cfg: dict, device: DeviceModel, n_qubits: int) -> EstimatorMode:
    s = cfg["search"]
    kind = s["estimator"]
    if kind == "auto":
        return EstimatorMode.auto(device, n_qubits, s["limit"])
    try:
        return EstimatorMode(kind, device, s["limit"])
    except ValueError as exc:
        raise ConfigError(f"search.estimator: {exc}") from None


def cmd_search(cfg: dict, super_ckpt: Path | None = None, jobs: int = 1) -> Path:
    run = _run_dir(cfg)
    task = build_task(cfg)
    device = build_device(cfg)
    _check_fit(task, device)
    sc = _load_super(cfg, task, super_ckpt)
    best, history = evolve(sc, device, task, _evo_cfg(cfg["search"]), _estimator(cfg, device, task.n_qubits),
                           jobs=jobs)
    write_history(run / "search_history.csv", history)
    out = run / "gene.txt"
    out.write_text(str(best) + "\n")
    log.info("search finished after %d evaluations, best %s", history[-1]["evaluations"], best)
    return out


def _sub_circuit(cfg: dict, task, gene_path: Path | None) -> tuple[Circuit, QubitMapping, str]:
    """The circuit to train: from a gene file, or a fixed circuit file when configured."""
    n = task.n_qubits
    if cfg["circuit"]:
        src = str(cfg["circuit"])
        path = _require(Path(src[5:] if src.startswith("file:") else src), "circuit")
        circuit = parse_circuit(path.read_text(), n)
        mapping = QubitMapping(tuple(cfg["mapping"] or range(n)))
        return circuit, mapping, f"file:{path}"
    gene_path = _require(gene_path or Path(cfg["run_dir"]) / "gene.txt", "gene")
    gene = Gene.parse(gene_path.read_text())
    desc = space_descriptor(cfg, n)
    sc = build_supercircuit(design_space(desc["name"], n, desc["n_blocks"]))
    try:
        view = instantiate(sc, gene.spec)
    except SpecError as exc:
        raise ConfigError(f"gene: {exc}") from None
    return view.circuit, QubitMapping(gene.mapping), str(gene)


def cmd_train_sub(cfg: dict, gene_path: Path | None = None) -> Path:
    run = _run_dir(cfg)
    task = build_task(cfg)
    circuit, mapping, origin = _sub_circuit(cfg, task, gene_path)
    tcfg = _train_cfg(cfg["train_sub"], "train_sub")
    params, history = train(circuit, task, tcfg)
    write_history(run / "sub_history.csv", history)
    return save_checkpoint(run / "sub.json", circuit, params, step=len(history), stage="sub",
                           origin=origin, mapping=list(mapping.assignment))


def _clean_metric(task, circuit: Circuit):
    if isinstance(task, QMLTask):
        return lambda p: -qml_scores(circuit, p, task, "valid")["accuracy"]
    return lambda p: vqe_expectation(circuit, p, task.hamiltonian)


def _noisy_score(task, circuit: Circuit, device: DeviceModel, mapping: QubitMapping, limit: int | None):
    if isinstance(task, QMLTask):
        return lambda p: qml_scores(circuit, p, task, "valid", device, mapping, limit)["loss"]
    return lambda p: vqe_expectation(circuit, p, task.hamiltonian, device, mapping)


def cmd_prune(cfg: dict, sub_ckpt: Path | None = None) -> Path:
    run = _run_dir(cfg)
    task = build_task(cfg)
    device = build_device(cfg)
    ck = load_checkpoint(_require(sub_ckpt or run / "sub.json", "sub checkpoint"))
    circuit, mapping = ck["circuit"], QubitMapping(tuple(ck["mapping"]))
    pc = cfg["prune"]
    res = sweep_ratios(circuit, task, pc["ratios"], _train_cfg(pc["train"], "prune.train"), ck["params"],
                       _clean_metric(task, circuit),
                       _noisy_score(task, circuit, device, mapping, cfg["search"]["limit"]),
                       tolerance=pc["tolerance"], r_initial=pc["r_initial"])
    write_history(run / "prune_sweep.csv", res.rows)
    return save_checkpoint(run / "pruned.json", circuit, res.params, stage="pruned", origin=ck.get("origin"),
                           mapping=list(mapping.assignment), ratio=res.ratio, mask=res.mask.to_bits())


def evaluate_checkpoint(cfg: dict, ckpt: Path, device: DeviceModel | None = None) -> dict:
    task = build_task(cfg)
    device = device or build_device(cfg)
    ck = load_checkpoint(_require(ckpt, "checkpoint"))
    circuit, params = ck["circuit"], ck["params"]
    mapping = QubitMapping(tuple(ck.get("mapping") or range(task.n_qubits)))
    split, limit = cfg["eval"]["split"], cfg["eval"]["limit"]
    row: dict[str, Any] = {"checkpoint": Path(ckpt).name, "device": device.name}
    if isinstance(task, QMLTask):
        clean = qml_scores(circuit, params, task, split, limit=limit)
        noisy = qml_scores(circuit, params, task, split, device, mapping, limit)
        row.update(clean_accuracy=clean["accuracy"], clean_loss=clean["loss"],
                   noisy_accuracy=noisy["accuracy"], noisy_loss=noisy["loss"])
    else:
        row.update(clean_energy=vqe_expectation(circuit, params, task.hamiltonian),
                   noisy_energy=vqe_expectation(circuit, params, task.hamiltonian, device, mapping))
    compiled = route(circuit, mapping, device, params)
    row.update(circuit_stats(compiled))
    row["success_rate"] = success_rate(compiled.circuit, device)
    return row


def cmd_eval(cfg: dict, ckpt: Path | None = None) -> Path:
    run = _run_dir(cfg)
    ckpt = ckpt or run / "pruned.json"
    row = evaluate_checkpoint(cfg, ckpt)
    stem = Path(ckpt).stem
    write_history(run / f"eval_{stem}.csv", [row])
    text = "\n".join(f"{k:>16}: {v}" for k, v in row.items()) + "\n"
    (run / f"eval_{stem}.txt").write_text(text)
    print(text, end="")
    return run / f"eval_{stem}.csv"


# ---------------------------------------------------------------------------
# diagnostics

_ROTATIONS = (GateKind.RX, GateKind.RY, GateKind.RZ, GateKind.U1, GateKind.U3, GateKind.RXX, GateKind.RZZ,
              GateKind.RZX, GateKind.CU3)
_FIXED = (GateKind.H, GateKind.CNOT, GateKind.CZ, GateKind.SX, GateKind.S)


def random_circuit(n: int, n_gates: int, rng: np.random.Generator) -> Circuit:
    gates, slot = [], 0
    for _ in range(n_gates):
        pool = _ROTATIONS if rng.random() < 0.7 else _FIXED
        kind = pool[rng.integers(len(pool))]
        if kind.arity > n:
            kind = GateKind.RY
        wires = tuple(int(w) for w in rng.choice(n, kind.arity, replace=False))
        ids = tuple(range(slot, slot + kind.n_params))
        slot += kind.n_params
        gates.append(Gate(kind, wires, (0.0,) * kind.n_params, ids))
    return Circuit(n, gates, slot)


class _RandomObservable:
    """Weighted sum of single-qubit Z and X expectations on one fixed state."""

    kind = "observable"

    def __init__(self, n: int, rng: np.random.Generator):
        self.n_qubits = n
        self.terms = [PauliString({q: p}, float(rng.normal())) for q in range(n) for p in "ZX"]

    def prepare(self, batch=None):
        from .qstate import new_zero_state

        return new_zero_state(self.n_qubits, batch=1).amps

    def loss_from_amps(self, amps, batch=None):
        from .qstate import apply_pauli

        h = sum(t.coefficient * apply_pauli(amps, self.n_qubits, t) for t in self.terms)
        return float(np.vdot(amps, h).real), h


def grad_check(cases: int = 50, n_qubits: int = 3, max_gates: int = 20, seed: int = 0) -> dict[str, float]:
    """Largest relative error of parameter-shift and adjoint gradients against finite differences."""
    rng = np.random.default_rng(seed)
    worst = {"param_shift": 0.0, "adjoint": 0.0}
    for _ in range(cases):
        c = random_circuit(n_qubits, int(rng.integers(1, max_gates + 1)), rng)
        obs = _RandomObservable(n_qubits, rng)
        p = rng.uniform(-math.pi, math.pi, c.n_params)
        ref = finite_diff_grad(c, obs, p, h=1e-5)
        scale = max(1.0, float(np.abs(ref).max(initial=0.0)))
        for name, g in (("param_shift", param_shift_grad(c, obs, p)), ("adjoint", adjoint_grad(c, obs, p)[1])):
            worst[name] = max(worst[name], float(np.abs(g - ref).max(initial=0.0)) / scale)
    return worst


def cmd_cost_report(cfg: dict, n_device: int = 1) -> dict:
    task = build_task(cfg)
    evo = _evo_cfg(cfg["search"])
    n_train = total_steps(task, _train_cfg(cfg["train_super"], "train_super"))
    report = search_cost(n_train, 1, n_device, evo.population * (evo.iterations + 1))
    for k, v in report.items():
        print(f"{k:>18}: {v}")
    return report


# ---------------------------------------------------------------------------
# entry point


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qnas", description="Noise-adaptive circuit search pipeline.")
    sub = ap.add_subparsers(dest="command", required=True)

    def stage(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", type=Path, help="JSON run configuration")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config field, e.g. train_super.epochs=5")
        p.add_argument("--seed", type=int)
        p.add_argument("--run-dir", type=Path)
        return p

    stage("train-super", "train the weight-sharing SuperCircuit")
    p = stage("search", "evolutionary co-search of SubCircuit and mapping")
    p.add_argument("--super", dest="super_ckpt", type=Path)
    p.add_argument("--jobs", type=int, default=1, help="concurrent estimator evaluations")
    p = stage("train-sub", "train the searched SubCircuit from scratch")
    p.add_argument("--gene", type=Path)
    p = stage("prune", "prune and finetune over a ratio sweep")
    p.add_argument("--sub", dest="sub_ckpt", type=Path)
    p = stage("eval", "noise-free and noisy metrics plus compiled statistics")
    p.add_argument("--ckpt", type=Path)
    p.add_argument("--device", dest="device_override")
    p = sub.add_parser("grad-check", help="compare gradient routes against finite differences")
    p.add_argument("--cases", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-5)
    p = stage("cost-report", "circuit-run bookkeeping of the search")
    p.add_argument("--devices", type=int, default=1)
    return ap


def _setup_logging(run_dir: Path | None):
    log.setLevel(logging.INFO)
    for h in list(log.handlers):
        log.removeHandler(h)
        h.close()
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        fh = logging.FileHandler(run_dir / "log.txt")
        fh.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
        log.addHandler(fh)


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "grad-check":
            worst = grad_check(args.cases, seed=args.seed)
            for k, v in worst.items():
                print(f"{k}: max relative error {v:.3e}")
            if max(worst.values()) >= args.tol:
                raise NumericError(f"gradient mismatch above {args.tol}")
            return 0
        cfg = load_config(args.config, args.overrides, args.seed, args.run_dir)
        if getattr(args, "device_override", None):
            cfg["device"] = args.device_override
        _setup_logging(Path(cfg["run_dir"]))
        if args.command == "train-super":
            print(cmd_train_super(cfg))
        elif args.command == "search":
            print(cmd_search(cfg, args.super_ckpt, args.jobs))
        elif args.command == "train-sub":
            print(cmd_train_sub(cfg, args.gene))
        elif args.command == "prune":
            print(cmd_prune(cfg, args.sub_ckpt))
        elif args.command == "eval":
            cmd_eval(cfg, args.ckpt)
        elif args.command == "cost-report":
            cmd_cost_report(cfg, args.devices)
        return 0
    except (ConfigError, FormatError, SpecError, InfeasibleError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except CapacityError as exc:
        print(f"capacity error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY


if __name__ == "__main__":
    sys.exit(main())
