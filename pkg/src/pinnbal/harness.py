"""Experiment manifests, multi-seed runs, grid sweeps and report emission.

Everything emitted is plain CSV or JSON; column meanings are listed in the
shipped ``schema/csv_columns.json``.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import subprocess
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from itertools import product
from pathlib import Path

import numpy as np

from . import __version__
from .balancing import METHODS
from .errors import ConfigurationError, NumericError
from .network import forward, load_checkpoint, save_checkpoint
from .problems import PROBLEMS, export_measurements, make_problem
from .training import RunRecord, TrainConfig, train

OUTPUT_ROOT_ENV = "PINNBAL_OUTPUT_ROOT"
SCHEMA_PATH = Path(__file__).with_name("schema") / "csv_columns.json"

# tuned architecture and balancing settings per problem
PRESETS = {
    "burgers": {"initial_lr": 1e-3, "hidden_layers": 4, "width": 256, "alpha": 0.999,
                "temperature": 1e-1, "expected_saudade": 0.9999, "activation": "tanh"},
    "kirchhoff": {"initial_lr": 1e-3, "hidden_layers": 4, "width": 360, "alpha": 0.999,
                  "temperature": 1e-2, "expected_saudade": 0.9999, "activation": "tanh"},
    "helmholtz": {"initial_lr": 1e-3, "hidden_layers": 2, "width": 256, "alpha": 0.99,
                  "temperature": 1e-5, "expected_saudade": 0.99, "activation": "tanh"},
}

# search ranges: (low, high, log-scaled) or a tuple of choices
SEARCH_SPACE = {
    "initial_lr": (1e-6, 1e-2, True),
    "hidden_layers": (2, 4, False),
    "width": (32, 512, False),
    "alpha": (0.0, 1.0, False),
    "temperature": (1e-6, 1e2, True),
    "expected_saudade": (0.0, 1.0, False),
    "activation": ("tanh", "sigmoid"),
}
SAUDADE_LEVELS = (0.0, 0.5, 0.9, 0.99, 0.999, 0.9999, 1.0)

AGGREGATED_METRICS = ("val_u", "rel_max_err", "val_mu", "mu", "train_loss", "best_train_loss",
                      "steps", "sweeps_per_step")
TIMING_METRICS = ("seconds_per_1000", "steps_per_second", "total_time")


def axis_values(name: str, n: int) -> list:
    """``n`` grid values spanning the search range of ``name`` (log-spaced where flagged)."""
    spec = SEARCH_SPACE.get(name)
    if spec is None:
        raise ConfigurationError(f"no search range for {name!r}")
    if isinstance(spec[0], str):
        return list(spec)
    lo, hi, log = spec
    if n < 1:
        raise ConfigurationError("need at least one axis value")
    vals = np.logspace(np.log10(lo), np.log10(hi), n) if log else np.linspace(lo, hi, n)
    if isinstance(lo, int) and isinstance(hi, int):
        return sorted({int(round(v)) for v in vals})
    return [float(v) for v in vals]


def version_stamp() -> str:
    try:
        rev = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True,
                             text=True, timeout=5, cwd=Path(__file__).parent)
        tail = rev.stdout.strip() if rev.returncode == 0 else "nogit"
    except (OSError, subprocess.SubprocessError):
        tail = "nogit"
    return f"pinnbal-{__version__}+{tail}"


def resolve_output(path) -> Path:
    """Relative output paths are placed under ``$PINNBAL_OUTPUT_ROOT`` when it is set."""
    p = Path(path)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    return p if p.is_absolute() or not root else Path(root) / p


# ---------------------------------------------------------------------------
# Experiment configuration
# ---------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    problem: str
    mode: str = "forward"
    balancer: str = "relobralo"
    train: dict = field(default_factory=dict)
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3])
    output: str = "runs"
    use_preset: bool = True
    workers: int = 1

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise ConfigurationError(f"unknown problem {self.problem!r}; choose from {sorted(PROBLEMS)}")
        if self.mode not in ("forward", "inverse"):
            raise ConfigurationError(f"mode must be forward or inverse, not {self.mode!r}")
        if self.balancer not in METHODS:
            raise ConfigurationError(f"unknown balancer {self.balancer!r}; choose from {METHODS}")
        self.seeds = [int(s) for s in self.seeds]
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise ConfigurationError("seed list must be nonempty and free of duplicates")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")
        for key in ("seed", "balancer"):
            if key in self.train:
                raise ConfigurationError(f"set {key!r} on the experiment, not in train overrides")
        self.train_config(self.seeds[0])

    @property
    def name(self) -> str:
        return f"{self.problem}-{self.mode}-{self.balancer}"

    def train_config(self, seed: int) -> TrainConfig:
        base = dict(PRESETS[self.problem]) if self.use_preset else {}
        return TrainConfig.from_dict({**base, **self.train, "balancer": self.balancer, "seed": int(seed)})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown experiment options: {sorted(unknown)}")
        if "problem" not in d:
            raise ConfigurationError("experiment needs a problem")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read experiment config {path}: {exc}") from None
        return cls.from_dict(data)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))


def _prepare_dir(path) -> Path:
    out = resolve_output(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigurationError(f"output directory {out} is not writable: {exc}") from None
    if not os.access(out, os.W_OK):
        raise ConfigurationError(f"output directory {out} is not writable")
    return out


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------


def aggregate(values) -> dict:
    """Median and population std over finite values; order of ``values`` does not matter."""
    vals = sorted(float(v) for v in values if v is not None and np.isfinite(float(v)))
    if not vals:
        return {"median": float("nan"), "std": float("nan"), "n": 0}
    arr = np.array(vals)
    with np.errstate(over="ignore"):
        std = float(np.std(arr))
    return {"median": float(np.median(arr)), "std": std, "n": len(vals)}


def aggregate_runs(run_metrics: list[dict], names=AGGREGATED_METRICS) -> dict:
    return {m: aggregate([r.get(m) for r in run_metrics]) for m in names}


def write_aggregate_csv(path, agg: dict):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "median", "std", "n"])
        for name, a in agg.items():
            w.writerow([name, repr(a["median"]), repr(a["std"]), a["n"]])
    return Path(path)


def read_aggregate_csv(path) -> dict:
    with Path(path).open() as fh:
        reader = csv.DictReader(fh)
        return {r["metric"]: {"median": float(r["median"]), "std": float(r["std"]), "n": int(r["n"])}
                for r in reader}


# ---------------------------------------------------------------------------
# Runs
# ---------------------------------------------------------------------------


def _run_seed(cfg_dict: dict, seed: int, out: str) -> dict:
    cfg = ExperimentConfig.from_dict(cfg_dict)
    tc = cfg.train_config(seed)
    record = train(make_problem(cfg.problem, cfg.mode), tc)
    out = Path(out)
    record.write_csv(out / f"run_seed{seed}.csv", tc.thinning)
    record.write_json(out / f"run_seed{seed}.json")
    extra = {"mu": record.metrics["mu"]} if cfg.mode == "inverse" else {}
    save_checkpoint(out / f"run_seed{seed}.ckpt", record.network, record.theta, extra)
    return {"seed": seed, "metrics": record.metrics}


@dataclass
class ExperimentResult:
    directory: Path
    status: str
    summary: dict

    @property
    def exit_code(self) -> int:
        return 0 if self.status == "ok" else 1


def run_experiment(cfg: ExperimentConfig, output=None) -> ExperimentResult:
    """Train every seed of ``cfg`` and write per-run files plus aggregate summaries."""
    out = _prepare_dir(output if output is not None else cfg.output)
    cfg_dict = cfg.to_dict()
    (out / "config.json").write_text(json.dumps(
        {"experiment": cfg_dict, "train_config": cfg.train_config(cfg.seeds[0]).to_dict()},
        indent=2, sort_keys=True))
    if cfg.workers > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.workers, len(cfg.seeds))) as pool:
            runs = list(pool.map(_run_seed, [cfg_dict] * len(cfg.seeds), cfg.seeds,
                                 [str(out)] * len(cfg.seeds)))
    else:
        runs = [_run_seed(cfg_dict, s, str(out)) for s in cfg.seeds]
    runs.sort(key=lambda r: r["seed"])
    if cfg.mode == "inverse":
        export_measurements(make_problem(cfg.problem, cfg.mode), out / "measurements.csv")
    metrics = [r["metrics"] for r in runs]
    failures = [{"seed": r["seed"], "failure": r["metrics"]["failure"]}
                for r in runs if r["metrics"]["failed"]]
    status = "ok" if not failures else "partial"
    summary = {
        "name": cfg.name,
        "problem": cfg.problem,
        "mode": cfg.mode,
        "balancer": cfg.balancer,
        "seeds": cfg.seeds,
        "experiment": cfg_dict,
        "train_config": cfg.train_config(cfg.seeds[0]).to_dict(),
        "version": version_stamp(),
        "config_id": hashlib.sha256(json.dumps(cfg_dict, sort_keys=True).encode()).hexdigest()[:12],
        "status": status,
        "failures": failures,
        "aggregate": aggregate_runs(metrics),
        "timing": aggregate_runs(metrics, TIMING_METRICS),
        "runs": runs,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    write_aggregate_csv(out / "summary.csv", summary["aggregate"])
    write_aggregate_csv(out / "timing.csv", summary["timing"])
    return ExperimentResult(out, status, summary)


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------


@dataclass
class SweepSpec:
    axes: dict
    runs_per_cell: int = 3
    budget: int = 500

    def __post_init__(self):
        if not self.axes:
            raise ConfigurationError("a sweep needs at least one axis")
        allowed = {f.name for f in fields(TrainConfig)} | {"balancer"}
        for name, values in self.axes.items():
            if name not in allowed or name == "seed":
                raise ConfigurationError(f"cannot sweep over {name!r}")
            if not isinstance(values, (list, tuple)) or not values:
                raise ConfigurationError(f"axis {name!r} needs a nonempty value list")
        if self.runs_per_cell < 1:
            raise ConfigurationError("runs_per_cell must be >= 1")
        if self.n_runs > self.budget:
            raise ConfigurationError(f"sweep needs {self.n_runs} runs, budget is {self.budget}")

    @property
    def cells(self) -> list[dict]:
        names = list(self.axes)
        return [dict(zip(names, combo)) for combo in product(*(self.axes[n] for n in names))]

    @property
    def n_runs(self) -> int:
        return math.prod(len(v) for v in self.axes.values()) * self.runs_per_cell

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _cell_name(cell: dict) -> str:
    return "_".join(f"{k}={v}" for k, v in cell.items())


@dataclass
class SweepResult:
    directory: Path
    cells: list
    status: str

    @property
    def exit_code(self) -> int:
        return 0 if self.status == "ok" else 1


def sweep(spec: SweepSpec, base: ExperimentConfig, output=None) -> SweepResult:
    """Run every grid cell and emit the median final natural-log validation loss per cell."""
    out = _prepare_dir(output if output is not None else base.output)
    seeds = list(base.seeds[: spec.runs_per_cell])
    while len(seeds) < spec.runs_per_cell:
        seeds.append(max(seeds) + 1)
    (out / "sweep.json").write_text(json.dumps({"spec": spec.to_dict(), "base": base.to_dict()},
                                               indent=2, sort_keys=True))
    cells = []
    for cell in spec.cells:
        overrides = {k: v for k, v in cell.items() if k != "balancer"}
        try:
            cfg = replace(base, train={**base.train, **overrides}, seeds=seeds,
                          balancer=cell.get("balancer", base.balancer))
            res = run_experiment(cfg, out / _cell_name(cell))
            logs = [math.log(r["metrics"]["val_u"]) if r["metrics"]["val_u"] > 0 else float("-inf")
                    for r in res.summary["runs"]]
            value, status = float(np.median(logs)), res.status
        except (ConfigurationError, NumericError, ArithmeticError) as exc:
            value, status = float("nan"), f"failed: {exc}"
        cells.append({**cell, "median_log_val_u": value, "status": status})
    _write_sweep_tables(out, spec, cells)
    overall = "ok" if all(c["status"] == "ok" for c in cells) else "partial"
    return SweepResult(out, cells, overall)


def _write_sweep_tables(out: Path, spec: SweepSpec, cells: list):
    names = list(spec.axes)
    with (out / "sweep.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names + ["median_log_val_u", "status"])
        for c in cells:
            w.writerow([c[n] for n in names] + [repr(c["median_log_val_u"]), c["status"]])
    if len(names) > 2:
        return
    lookup = {tuple(c[n] for n in names): c["median_log_val_u"] for c in cells}
    with (out / "matrix.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        if len(names) == 1:
            w.writerow([names[0], "median_log_val_u"])
            for v in spec.axes[names[0]]:
                w.writerow([v, repr(lookup[(v,)])])
        else:
            rows, cols = spec.axes[names[0]], spec.axes[names[1]]
            w.writerow([f"{names[0]}\\{names[1]}"] + list(cols))
            for r in rows:
                w.writerow([r] + [repr(lookup[(r, c)]) for c in cols])


def read_matrix(path) -> tuple[list, list, np.ndarray]:
    """``(row values, column values, matrix)`` from a two-axis ``matrix.csv``."""
    with Path(path).open() as fh:
        rows = list(csv.reader(fh))
    cols = rows[0][1:]
    return [r[0] for r in rows[1:]], cols, np.array([[float(v) for v in r[1:]] for r in rows[1:]])


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def _load_experiment(directory: Path):
    summary = json.loads((directory / "summary.json").read_text())
    records, gaps = {}, []
    for seed in summary["seeds"]:
        csv_path = directory / f"run_seed{seed}.csv"
        if csv_path.exists():
            records[seed] = RunRecord.read(csv_path, directory / f"run_seed{seed}.json")
        else:
            gaps.append(f"{directory.name}: missing series for seed {seed}")
    return summary, records, gaps


def _aligned(records: dict, getter):
    """Union of recorded steps and a ``(steps, seeds)`` array with NaN where a seed has no row."""
    steps = sorted({s for rec in records.values() for s in rec.step})
    index = {s: i for i, s in enumerate(steps)}
    cols = []
    for rec in records.values():
        col = np.full(len(steps), np.nan)
        for i, s in enumerate(rec.step):
            col[index[s]] = getter(rec, i)
        cols.append(col)
    return np.array(steps), np.stack(cols, axis=1) if cols else np.empty((0, 0))


def _nan_stat(fn, arr):
    out = np.full(arr.shape[0], np.nan)
    ok = ~np.all(np.isnan(arr), axis=1)
    out[ok] = fn(arr[ok], axis=1)
    return out


def _write_table(path, header, columns):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([v if isinstance(v, (int, np.integer, str)) else repr(float(v)) for v in row])
    return Path(path)


@dataclass
class ReportResult:
    directory: Path
    files: list
    gaps: list

    @property
    def exit_code(self) -> int:
        return 0 if not self.gaps else 1


def report(directories, output, field_grid: int = 128) -> ReportResult:
    """Comparison tables, loss curves, scaling bands, parameter trajectories and field grids."""
    out = _prepare_dir(output)
    files, gaps = [], []
    tables: dict = {}
    for d in map(Path, directories):
        if not (d / "summary.json").exists():
            gaps.append(f"{d}: no summary.json")
            continue
        summary, records, missing = _load_experiment(d)
        gaps += missing
        name = summary["name"]
        tables.setdefault((summary["problem"], summary["mode"]), []).append(summary)
        if not records:
            continue
        labels = next(iter(records.values())).labels

        steps, total = _aligned(records, lambda r, i: math.log(max(float(np.sum(r.losses[i])), 1e-300)))
        cols = [steps, _nan_stat(np.median, total)]
        header = ["step", "median_log_loss"]
        for k, t in enumerate(labels):
            _, term = _aligned(records, lambda r, i, k=k: math.log(max(float(r.losses[i][k]), 1e-300)))
            cols.append(_nan_stat(np.median, term))
            header.append(f"median_log_loss_{t}")
        files.append(_write_table(out / f"curves_{name}.csv", header, cols))

        cols, header = [steps], ["step"]
        for k, t in enumerate(labels):
            _, lam = _aligned(records, lambda r, i, k=k: r.lambdas[i][k])
            cols += [_nan_stat(np.mean, lam), _nan_stat(np.std, lam)]
            header += [f"mean_lambda_{t}", f"std_lambda_{t}"]
        files.append(_write_table(out / f"lambda_{name}.csv", header, cols))

        if summary["mode"] == "inverse":
            _, mu = _aligned(records, lambda r, i: r.mu[i])
            files.append(_write_table(out / f"mu_{name}.csv", ["step", "mean_mu", "std_mu"],
                                      [steps, _nan_stat(np.mean, mu), _nan_stat(np.std, mu)]))

        field_file = _write_field(d, summary, out / f"field_{name}.csv", field_grid)
        if field_file is None:
            gaps.append(f"{d.name}: no checkpoint for the field grid")
        else:
            files.append(field_file)

    for (problem, mode), summaries in sorted(tables.items()):
        metrics = ("val_u", "rel_max_err", "val_mu", "train_loss")
        header = ["balancer"] + [f"{m}_{s}" for m in metrics for s in ("median", "std")]
        header += ["seconds_per_1000_median", "seconds_per_1000_std", "runs", "status"]
        rows = []
        for s in sorted(summaries, key=lambda s: METHODS.index(s["balancer"])):
            row = [s["balancer"]]
            for m in metrics:
                row += [s["aggregate"][m]["median"], s["aggregate"][m]["std"]]
            row += [s["timing"]["seconds_per_1000"]["median"], s["timing"]["seconds_per_1000"]["std"],
                    len(s["seeds"]), s["status"]]
            rows.append(row)
        files.append(_write_table(out / f"comparison_{problem}_{mode}.csv", header, list(zip(*rows))))
    (out / "report.json").write_text(json.dumps({"files": [str(f) for f in files], "gaps": gaps},
                                                indent=2))
    return ReportResult(out, files, gaps)


def field_grids(problem, predict, n: int = 128):
    """Grid points, prediction, reference and squared error for heatmaps."""
    from .problems.base import grid
    pts = grid(problem.bounds, n)
    pred = np.asarray(predict(pts), dtype=float)
    ref = problem.reference(pts)
    return pts, pred, ref, (pred - ref) ** 2


def _write_field(directory: Path, summary: dict, path: Path, n: int):
    runs = [r for r in summary["runs"] if np.isfinite(r["metrics"]["val_u"])]
    if not runs:
        return None
    ordered = sorted(runs, key=lambda r: r["metrics"]["val_u"])
    median_run = ordered[(len(ordered) - 1) // 2]
    ckpt = directory / f"run_seed{median_run['seed']}.ckpt"
    if not ckpt.exists():
        return None
    config, theta, _ = load_checkpoint(ckpt)
    problem = make_problem(summary["problem"], summary["mode"])
    pts, pred, ref, err = field_grids(problem, lambda p: forward(config, theta, p), n)
    labels = list(problem.labels)
    return _write_table(path, labels + ["u_pred", "u_ref", "sq_err"],
                        [pts[:, 0], pts[:, 1], pred, ref, err])


__all__ = [
    "PRESETS", "SEARCH_SPACE", "SAUDADE_LEVELS", "OUTPUT_ROOT_ENV", "ExperimentConfig",
    "ExperimentResult", "SweepSpec", "SweepResult", "ReportResult", "axis_values",
    "aggregate", "aggregate_runs", "write_aggregate_csv", "read_aggregate_csv",
    "run_experiment", "sweep", "read_matrix", "report", "field_grids", "resolve_output",
    "version_stamp",
]
