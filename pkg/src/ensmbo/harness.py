"""End-to-end experiment runner and command-line interface.

The pipeline mirrors the evaluation protocol: build the offline MBO
dataset as the bottom-K fraction of the task's total dataset, train an
ensemble of proxies on complementary folds, take the top-128 MBO inputs
as starting designs, run every configured algorithm's update loop, then
score the hardened finals with the exact oracle and report max /
50th-percentile / mean metrics (normalized against the total dataset's
extremes).

Hyperparameter tuning is offline by construction: the ``tune`` command
records proxy-prediction trajectories and never touches the oracle, and
an instrumented call counter proves it.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .ascent import AscentConfig, Combiner, ascend_batch, write_trajectory_csv
from .core import (
    Dataset,
    ScoreSummary,
    normalize_design,
    normalize_score,
    read_dataset_csv,
    select_bottom_fraction,
    select_top_n,
    stats_from_designs,
    summarize_scores,
    write_dataset_csv,
)
from .nn import Ensemble, TrainConfig, load_ensemble, save_ensemble, train_ensemble
from .tasks import TASK_REGISTRY, TaskSpec, evaluate_oracle, export_task_csv, get_task, ingest_csv

ALGORITHMS = ("single", "mean", "min", "mgda", "cagrad")

DISPLAY_NAMES = {
    "single": "single model",
    "mean": "ensemble, mean",
    "min": "ensemble, min",
    "mgda": "ensemble, MGDA",
    "cagrad": "ensemble, CAGrad",
}

# Offline-tuned step sizes and CAGrad c per task (picked from tune-command
# trajectory plots, never from oracle scores).
TASK_DEFAULTS = {
    "minibind": {"alpha": 2.0, "cagrad_c": 0.5},
    "ridge": {"alpha": 0.05, "cagrad_c": 0.3},
    "bowl": {"alpha": 0.05, "cagrad_c": 0.3},
}

DEFAULT_OUT_ENV = "ENSMBO_OUT"


@dataclass(frozen=True)
class ExperimentConfig:
    task: str = "bowl"
    task_seed: int = 0
    k_fraction: float = 0.5
    ensemble_size: int = 6
    n_candidates: int = 128
    steps: int = 200
    alpha: float | None = None  # None -> per-task default
    cagrad_c: float | None = None
    algorithms: tuple = ALGORITHMS
    run_seeds: tuple = ()  # empty -> (task_seed,)
    train: TrainConfig = field(default_factory=TrainConfig)
    out_dir: str | None = None

    def __post_init__(self):
        bad = [a for a in self.algorithms if a not in ALGORITHMS]
        if bad:
            raise ValueError(f"unknown algorithms {bad}; choose from {list(ALGORITHMS)}")
        if not self.algorithms:
            raise ValueError("need at least one algorithm")
        if self.n_candidates < 1:
            raise ValueError("n_candidates must be positive")

    def resolved_seeds(self) -> tuple:
        return tuple(self.run_seeds) if self.run_seeds else (self.task_seed,)

    def resolved_alpha(self) -> float:
        if self.alpha is not None:
            return self.alpha
        return TASK_DEFAULTS.get(self.task, {}).get("alpha", 0.05)

    def resolved_cagrad_c(self) -> float:
        if self.cagrad_c is not None:
            return self.cagrad_c
        return TASK_DEFAULTS.get(self.task, {}).get("cagrad_c", 0.5)

    def to_dict(self) -> dict:
        d = {
            "task": self.task,
            "task_seed": self.task_seed,
            "k_fraction": self.k_fraction,
            "ensemble_size": self.ensemble_size,
            "n_candidates": self.n_candidates,
            "steps": self.steps,
            "alpha": self.alpha,
            "cagrad_c": self.cagrad_c,
            "algorithms": list(self.algorithms),
            "run_seeds": list(self.run_seeds),
            "train": {
                "epochs": self.train.epochs,
                "batch_size": self.train.batch_size,
                "learning_rate": self.train.learning_rate,
                "weight_decay": self.train.weight_decay,
                "seed": self.train.seed,
                "patience": self.train.patience,
                "hidden": list(self.train.hidden),
            },
            "out_dir": self.out_dir,
        }
        return d

    @staticmethod
    def from_dict(d: dict) -> "ExperimentConfig":
        d = dict(d)
        train = d.pop("train", {})
        if isinstance(train, dict):
            train = dict(train)
            train["hidden"] = tuple(train.get("hidden", TrainConfig().hidden))
            train = TrainConfig(**train)
        d["algorithms"] = tuple(d.get("algorithms", ALGORITHMS))
        d["run_seeds"] = tuple(d.get("run_seeds", ()))
        return ExperimentConfig(train=train, **d)


@dataclass(eq=False)
class AlgoResult:
    algorithm: str
    run_seed: int
    summary: ScoreSummary
    scores: np.ndarray
    finals_raw: np.ndarray  # raw task units (tokens or coordinates)
    wall_clock: float


@dataclass(eq=False)
class RunReport:
    task_name: str
    task_seed: int
    k_fraction: float
    ensemble_size: int
    n_candidates: int
    steps: int
    alpha: float
    cagrad_c: float
    algorithms: tuple
    run_seeds: tuple
    y_min: float
    y_max: float
    baseline_norm: float
    proxy_only: bool
    results: list
    val_metrics: dict
    oracle_calls: dict
    train_seconds: dict
    ensembles: dict = field(default_factory=dict, repr=False)

    def result(self, algorithm: str, run_seed: int) -> AlgoResult:
        for r in self.results:
            if r.algorithm == algorithm and r.run_seed == run_seed:
                return r
        raise KeyError((algorithm, run_seed))

    def aggregate(self) -> dict:
        """Per-algorithm mean/std over run seeds for each metric."""
        out = {}
        for alg in self.algorithms:
            rows = [r.summary for r in self.results if r.algorithm == alg]
            metrics = {}
            for name in ("max", "p50", "mean", "max_norm", "p50_norm", "mean_norm"):
                vals = np.array([getattr(s, name) for s in rows], dtype=np.float64)
                metrics[name] = (float(vals.mean()), float(vals.std()))
            out[alg] = metrics
        return out


def _resolve_task(name: str, seed: int) -> TaskSpec:
    if name in TASK_REGISTRY:
        return get_task(name, seed)
    p = Path(name)
    if p.suffix == ".csv" and p.exists():
        task, _ = ingest_csv(p)
        return task
    raise ValueError(f"unknown task '{name}' (not a registry name or CSV path)")


def _with_run_stats(mbo: Dataset, task: TaskSpec):
    """Continuous runs normalize with MBO-dataset statistics (offline data only)."""
    if task.space.is_discrete:
        return mbo, task.space
    mean, std = stats_from_designs(mbo.designs)
    space_run = task.space.with_stats(mean, std)
    return Dataset(space=space_run, designs=mbo.designs, scores=mbo.scores), space_run


def _finals_to_raw(finals, space) -> np.ndarray:
    from .core import onehot_to_tokens

    if space.is_discrete:
        return np.array([onehot_to_tokens(f, space) for f in finals])
    return np.asarray(finals)


def _proxy_scores(finals, space, ens: Ensemble) -> list[float]:
    scores = []
    for f in finals:
        x = np.asarray(f, dtype=np.float64) if space.is_discrete else normalize_design(f, space)
        scores.append(float(np.mean([m.forward(x) for m in ens.models])))
    return scores


def run_experiment(cfg: ExperimentConfig) -> RunReport:
    """Full pipeline for one task over one or more run seeds."""
    task = _resolve_task(cfg.task, cfg.task_seed)
    if task.oracle is not None:
        task.oracle.reset_calls()
    total = task.total_dataset()
    mbo = select_bottom_fraction(total, cfg.k_fraction)
    if cfg.n_candidates > len(mbo):
        raise ValueError("n_candidates exceeds the MBO dataset size")
    mbo, space_run = _with_run_stats(mbo, task)
    baseline_norm = normalize_score(float(mbo.scores.max()), task.y_min, task.y_max)
    alpha = cfg.resolved_alpha()
    cagrad_c = cfg.resolved_cagrad_c()

    results: list[AlgoResult] = []
    val_metrics: dict = {}
    train_seconds: dict = {}
    ensembles: dict = {}
    for rs in cfg.resolved_seeds():
        t0 = time.perf_counter()
        ens = train_ensemble(mbo, cfg.ensemble_size, replace(cfg.train, seed=rs))
        train_seconds[rs] = time.perf_counter() - t0
        ensembles[rs] = ens
        val_metrics[rs] = ens.validation_metrics()
        starts = select_top_n(mbo, cfg.n_candidates)
        for alg in cfg.algorithms:
            a0 = time.perf_counter()
            acfg = AscentConfig(
                steps=cfg.steps, alpha=alpha, combiner=Combiner(alg), cagrad_c=cagrad_c
            )
            trajs = ascend_batch(list(starts.designs), space_run, ens, acfg)
            finals = [t.final for t in trajs]
            if task.oracle is not None:
                if task.oracle.calls != _eval_calls_so_far(results):
                    raise RuntimeError("oracle was touched outside the evaluation stage")
                scores = np.asarray(evaluate_oracle(task, finals))
            else:
                scores = np.asarray(_proxy_scores(finals, space_run, ens))
            summary = summarize_scores(scores).with_normalized(task.y_min, task.y_max)
            results.append(
                AlgoResult(
                    algorithm=alg,
                    run_seed=rs,
                    summary=summary,
                    scores=scores,
                    finals_raw=_finals_to_raw(finals, space_run),
                    wall_clock=time.perf_counter() - a0,
                )
            )

    eval_calls = task.oracle.calls if task.oracle is not None else 0
    expected = cfg.n_candidates * len(cfg.algorithms) * len(cfg.resolved_seeds())
    if task.oracle is not None and eval_calls != expected:
        raise RuntimeError(f"oracle accounting mismatch: {eval_calls} != {expected}")
    return RunReport(
        task_name=task.name,
        task_seed=cfg.task_seed,
        k_fraction=cfg.k_fraction,
        ensemble_size=cfg.ensemble_size,
        n_candidates=cfg.n_candidates,
        steps=cfg.steps,
        alpha=alpha,
        cagrad_c=cagrad_c,
        algorithms=tuple(cfg.algorithms),
        run_seeds=cfg.resolved_seeds(),
        y_min=task.y_min,
        y_max=task.y_max,
        baseline_norm=baseline_norm,
        proxy_only=task.oracle is None,
        results=results,
        val_metrics=val_metrics,
        oracle_calls={"training_and_ascent": 0, "evaluation": eval_calls},
        train_seconds=train_seconds,
        ensembles=ensembles,
    )


def _eval_calls_so_far(results) -> int:
    return sum(r.scores.shape[0] for r in results)


# ---------------------------------------------------------------------------
# Markdown report
# ---------------------------------------------------------------------------

def _fmt(v: float) -> str:
    return f"{v + 0.0:.6f}"  # +0.0 folds negative zero


def _fmt_pair(mean: float, std: float, multi: bool) -> str:
    if multi:
        return f"{_fmt(mean)} ± {_fmt(std)}"
    return _fmt(mean)


def _mark(rows: list) -> list:
    """Bold the best value, italicize the second best (ties to earlier rows)."""
    order = sorted(range(len(rows)), key=lambda i: (-rows[i][1], i))
    marked = []
    for i, (label, value, text) in enumerate(rows):
        if order and i == order[0]:
            text = f"**{text}**"
        elif len(order) > 1 and i == order[1]:
            text = f"*{text}*"
        marked.append((label, text))
    return marked


def _table(title: str, header: str, rows: list, extra_rows=()) -> list:
    lines = [f"## {title}", "", "| algorithm | " + header + " |", "| --- | --- |"]
    for label, text in extra_rows:
        lines.append(f"| {label} | {text} |")
    for label, text in _mark(rows):
        lines.append(f"| {label} | {text} |")
    lines.append("")
    return lines


def report_markdown(report: RunReport) -> str:
    agg = report.aggregate()
    multi = len(report.run_seeds) > 1
    lines = [
        f"# Offline MBO report: {report.task_name}",
        "",
        f"- task seed: {report.task_seed}",
        f"- MBO dataset: bottom {_fmt(report.k_fraction * 100)}% of the total dataset",
        f"- ensemble size: {report.ensemble_size}",
        f"- candidates per algorithm: {report.n_candidates}",
        f"- update steps: {report.steps}, step size: {_fmt(report.alpha)}, CAGrad c: {_fmt(report.cagrad_c)}",
        f"- run seeds: {', '.join(str(s) for s in report.run_seeds)}",
        f"- score normalization range: [{_fmt(report.y_min)}, {_fmt(report.y_max)}]",
        "",
    ]
    if report.proxy_only:
        lines += [
            "**WARNING: no exact oracle for this task; scores below are",
            "proxy-predicted and UNVERIFIED.**",
            "",
        ]

    def rows_for(metric: str) -> list:
        out = []
        for alg in report.algorithms:
            mean, std = agg[alg][metric]
            out.append((DISPLAY_NAMES[alg], mean, _fmt_pair(mean, std, multi)))
        return out

    baseline = [("dataset", _fmt(report.baseline_norm))]
    lines += _table(
        f"Max (normalized) ground-truth score of the top {report.n_candidates} designs",
        "max (normalized)", rows_for("max_norm"), extra_rows=baseline,
    )
    lines += _table(
        f"50th percentile (normalized) ground-truth score of the top {report.n_candidates} designs",
        "p50 (normalized)", rows_for("p50_norm"),
    )
    lines += _table(
        f"Average (raw) ground-truth score of the top {report.n_candidates} designs",
        "mean (raw)", rows_for("mean"),
    )
    lines += _table(
        "Average (normalized) ground-truth score (supplementary)",
        "mean (normalized)", rows_for("mean_norm"),
    )

    lines += [
        "Markers: **best**, *second best* per column; ties break toward the",
        "earlier row. The dataset row is the normalized best score in the",
        "starting offline MBO dataset.",
        "",
    ]
    if multi:
        lines.insert(-2, "Values are mean ± standard deviation over run seeds.")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def run_dir_for(cfg: ExperimentConfig, out_base: str | None = None) -> Path:
    base = out_base or cfg.out_dir or os.environ.get(DEFAULT_OUT_ENV, "runs")
    name = Path(cfg.task).stem if cfg.task.endswith(".csv") else cfg.task
    return Path(base) / f"{name}-s{cfg.task_seed}"


def persist_report(report: RunReport, cfg: ExperimentConfig, run_dir: Path) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    space = _resolve_task(cfg.task, cfg.task_seed).space
    for r in report.results:
        path = run_dir / f"designs_{r.algorithm}_seed{r.run_seed}.csv"
        ds = Dataset(space=space, designs=r.finals_raw, scores=r.scores)
        write_dataset_csv(ds, path, report.y_min, report.y_max)
    for rs, ens in report.ensembles.items():
        save_ensemble(ens, run_dir / f"ensemble_seed{rs}.bin")
    payload = {
        "config": cfg.to_dict(),
        "task_name": report.task_name,
        "y_min": report.y_min,
        "y_max": report.y_max,
        "baseline_norm": report.baseline_norm,
        "proxy_only": report.proxy_only,
        "algorithms": list(report.algorithms),
        "run_seeds": list(report.run_seeds),
        "alpha": report.alpha,
        "cagrad_c": report.cagrad_c,
        "oracle_calls": report.oracle_calls,
        "val_metrics": {
            str(rs): [[None if v is None else float(v) for v in pair] for pair in pairs]
            for rs, pairs in report.val_metrics.items()
        },
        "summaries": {
            f"{r.algorithm}/seed{r.run_seed}": {
                "max": r.summary.max,
                "p50": r.summary.p50,
                "mean": r.summary.mean,
                "max_norm": r.summary.max_norm,
                "p50_norm": r.summary.p50_norm,
                "mean_norm": r.summary.mean_norm,
            }
            for r in report.results
        },
    }
    (run_dir / "results.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    (run_dir / "report.md").write_text(report_markdown(report), encoding="utf-8")
    timings = {"train_seconds": {str(k): v for k, v in report.train_seconds.items()},
               "algo_seconds": {f"{r.algorithm}/seed{r.run_seed}": r.wall_clock for r in report.results}}
    (run_dir / "timings.json").write_text(json.dumps(timings, indent=2, sort_keys=True) + "\n",
                                          encoding="utf-8")


def load_report(run_dir) -> RunReport:
    """Rebuild a report from persisted raw per-design scores."""
    run_dir = Path(run_dir)
    payload = json.loads((run_dir / "results.json").read_text(encoding="utf-8"))
    cfg = ExperimentConfig.from_dict(payload["config"])
    results = []
    for alg in payload["algorithms"]:
        for rs in payload["run_seeds"]:
            ds, _meta = read_dataset_csv(run_dir / f"designs_{alg}_seed{rs}.csv")
            summary = summarize_scores(ds.scores).with_normalized(payload["y_min"], payload["y_max"])
            results.append(
                AlgoResult(
                    algorithm=alg,
                    run_seed=rs,
                    summary=summary,
                    scores=ds.scores,
                    finals_raw=ds.designs,
                    wall_clock=0.0,
                )
            )
    return RunReport(
        task_name=payload["task_name"],
        task_seed=cfg.task_seed,
        k_fraction=cfg.k_fraction,
        ensemble_size=cfg.ensemble_size,
        n_candidates=cfg.n_candidates,
        steps=cfg.steps,
        alpha=payload["alpha"],
        cagrad_c=payload["cagrad_c"],
        algorithms=tuple(payload["algorithms"]),
        run_seeds=tuple(payload["run_seeds"]),
        y_min=payload["y_min"],
        y_max=payload["y_max"],
        baseline_norm=payload["baseline_norm"],
        proxy_only=payload["proxy_only"],
        results=results,
        val_metrics={int(k): v for k, v in payload["val_metrics"].items()},
        oracle_calls=payload["oracle_calls"],
        train_seconds={},
    )


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--task", default="bowl", help="task name (minibind|ridge|bowl) or dataset CSV path")
    p.add_argument("--seed", type=int, default=0, help="task seed")
    p.add_argument("--k", type=float, default=0.5, help="bottom-K fraction for the MBO dataset")
    p.add_argument("--out", default=None, help="output directory (default $ENSMBO_OUT or ./runs)")
    p.add_argument("--m", type=int, default=6, help="ensemble size")
    p.add_argument("--epochs", type=int, default=None, help="training epochs override")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ensmbo", description="Ensemble-based offline model-based optimization"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-task", help="materialize task dataset CSVs")
    _add_common(gen)

    tr = sub.add_parser("train", help="train and serialize a proxy ensemble")
    _add_common(tr)

    tune = sub.add_parser("tune", help="emit offline tuning trajectories (no oracle access)")
    _add_common(tune)
    tune.add_argument("--alpha", type=float, default=None, help="step size")
    tune.add_argument("--steps", type=int, default=200)
    tune.add_argument("--combiner", default="mean", choices=[c.value for c in Combiner])
    tune.add_argument("--cagrad-c", type=float, default=None)
    tune.add_argument("--n-trajectories", type=int, default=4)

    run = sub.add_parser("run", help="full experiment")
    _add_common(run)
    run.add_argument("--alpha", type=float, default=None)
    run.add_argument("--steps", type=int, default=200)
    run.add_argument("--combiner", default=None,
                     help="comma-separated algorithm subset (default: all five)")
    run.add_argument("--cagrad-c", type=float, default=None)
    run.add_argument("--n-candidates", type=int, default=128)
    run.add_argument("--run-seeds", default=None, help="comma-separated run seeds")
    run.add_argument("--config", default=None, help="JSON config file mirroring ExperimentConfig")

    rep = sub.add_parser("report", help="re-render a stored run report")
    rep.add_argument("--run-dir", required=True)
    return parser


def _experiment_config(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        cfg = ExperimentConfig.from_dict(json.loads(Path(args.config).read_text(encoding="utf-8")))
    else:
        cfg = ExperimentConfig()
    algorithms = cfg.algorithms
    if getattr(args, "combiner", None):
        algorithms = tuple(s.strip() for s in args.combiner.split(",") if s.strip())
    run_seeds = cfg.run_seeds
    if getattr(args, "run_seeds", None):
        run_seeds = tuple(int(s) for s in args.run_seeds.split(","))
    train = cfg.train
    if args.epochs is not None:
        train = replace(train, epochs=args.epochs)
    return replace(
        cfg,
        task=args.task,
        task_seed=args.seed,
        k_fraction=args.k,
        ensemble_size=args.m,
        n_candidates=getattr(args, "n_candidates", cfg.n_candidates),
        steps=getattr(args, "steps", cfg.steps),
        alpha=getattr(args, "alpha", None) if getattr(args, "alpha", None) is not None else cfg.alpha,
        cagrad_c=getattr(args, "cagrad_c", None) if getattr(args, "cagrad_c", None) is not None else cfg.cagrad_c,
        algorithms=algorithms,
        run_seeds=run_seeds,
        out_dir=args.out or cfg.out_dir,
    )


def _mbo_for(args):
    task = _resolve_task(args.task, args.seed)
    mbo = select_bottom_fraction(task.total_dataset(), args.k)
    mbo, space_run = _with_run_stats(mbo, task)
    return task, mbo, space_run


def _train_config(args) -> TrainConfig:
    cfg = TrainConfig(seed=args.seed)
    if args.epochs is not None:
        cfg = replace(cfg, epochs=args.epochs)
    return cfg


def _out_base(args) -> Path:
    return Path(args.out or os.environ.get(DEFAULT_OUT_ENV, "runs"))


def cmd_gen_task(args) -> int:
    task = _resolve_task(args.task, args.seed)
    out = _out_base(args)
    out.mkdir(parents=True, exist_ok=True)
    total_path = out / f"{args.task}_total.csv"
    export_task_csv(task, total_path)
    mbo = select_bottom_fraction(task.total_dataset(), args.k)
    mbo_path = out / f"{args.task}_mbo.csv"
    write_dataset_csv(mbo, mbo_path, task.y_min, task.y_max)
    print(f"wrote {total_path} ({task.total_size} rows) and {mbo_path} ({len(mbo)} rows)")
    return 0


def cmd_train(args) -> int:
    task, mbo, _space = _mbo_for(args)
    ens = train_ensemble(mbo, args.m, _train_config(args))
    out = _out_base(args)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{Path(args.task).stem}_ensemble_seed{args.seed}.bin"
    save_ensemble(ens, path)
    for i, (rho, mse) in enumerate(ens.validation_metrics()):
        print(f"model {i}: val_spearman={rho:.4f} val_mse={mse:.6f}")
    print(f"saved ensemble to {path}")
    return 0


def cmd_tune(args) -> int:
    task, mbo, space_run = _mbo_for(args)
    calls_before = task.oracle.calls if task.oracle is not None else 0
    ens = train_ensemble(mbo, args.m, _train_config(args))
    defaults = TASK_DEFAULTS.get(args.task, {})
    alpha = args.alpha if args.alpha is not None else defaults.get("alpha", 0.05)
    cagrad_c = args.cagrad_c if args.cagrad_c is not None else defaults.get("cagrad_c", 0.5)
    acfg = AscentConfig(
        steps=args.steps,
        alpha=alpha,
        combiner=Combiner(args.combiner),
        cagrad_c=cagrad_c,
        record_trajectory=True,
    )
    starts = select_top_n(mbo, min(args.n_trajectories, len(mbo)))
    trajs = ascend_batch(list(starts.designs), space_run, ens, acfg)
    out = _out_base(args)
    out.mkdir(parents=True, exist_ok=True)
    for i, traj in enumerate(trajs):
        path = out / f"trajectory_{args.combiner}_{i}.csv"
        write_trajectory_csv(traj, path)
        print(f"wrote {path}")
    calls_after = task.oracle.calls if task.oracle is not None else 0
    if calls_after != calls_before:
        raise RuntimeError("tuning touched the oracle; offline protocol violated")
    print("oracle calls during tuning: 0")
    return 0


def cmd_run(args) -> int:
    cfg = _experiment_config(args)
    report = run_experiment(cfg)
    run_dir = run_dir_for(cfg, args.out)
    persist_report(report, cfg, run_dir)
    print(report_markdown(report))
    print(f"artifacts in {run_dir}")
    return 0


def cmd_report(args) -> int:
    report = load_report(args.run_dir)
    text = report_markdown(report)
    (Path(args.run_dir) / "report.md").write_text(text, encoding="utf-8")
    print(text)
    return 0


def cli_main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse prints usage itself
        return int(exc.code) if exc.code else 0
    handlers = {
        "gen-task": cmd_gen_task,
        "train": cmd_train,
        "tune": cmd_tune,
        "run": cmd_run,
        "report": cmd_report,
    }
    try:
        return handlers[args.command](args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_main(sys.argv[1:]))
