"""End-to-end pipeline, single trials, sweeps and the false-discovery bound table."""

from __future__ import annotations

import csv
import itertools
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from mdcr.graph import MdcrModel, mixing_matrix
from mdcr.ica import IcaError, IcaOptions, IcaResult, oracle_ica, run_domain_ica
from mdcr.matching import (
    MatchTable,
    SharedAssembly,
    SharedTuple,
    assemble_joint,
    discover_shared,
    false_discovery_bound,
    kolmogorov_critical,
    match_domains,
)
from mdcr.metrics import score_A, score_B
from mdcr.recovery import RecoveredLatentModel, RecoveryError, recover_shared_graph
from mdcr.synthesis import ConfigError, GenConfig, GenerationError, PRESETS, make_rng, sample_data, sample_model

STAGES = ("generate", "ica", "matching", "assembly", "recovery", "scoring")


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` is one of :data:`STAGES`."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class PipelineOptions:
    gamma: float = 0.2
    alpha: float = 0.05
    correction: str = "bonferroni"
    edge_threshold: float | None = None
    rank_matrix: str = "cov"
    ica_restarts: int = 5
    ica_tol: float = 1e-6
    ica_max_iter: int = 200
    oracle: bool = False

    def __post_init__(self):
        if self.gamma <= 0:
            raise ConfigError("gamma must be positive", "gamma")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)", "alpha")
        if self.correction not in ("bonferroni", "none"):
            raise ConfigError("correction must be 'bonferroni' or 'none'", "correction")
        if self.rank_matrix not in ("cov", "gram"):
            raise ConfigError("rank_matrix must be 'cov' or 'gram'", "rank_matrix")
        if self.ica_restarts < 1 or self.ica_max_iter < 1 or self.ica_tol <= 0:
            raise ConfigError("ICA restarts and iterations must be positive", "ica_restarts")

    def ica_options(self, seed: int) -> IcaOptions:
        return IcaOptions(self.gamma, self.ica_restarts, self.ica_tol, self.ica_max_iter, seed, self.rank_matrix)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineOptions":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            key = sorted(unknown)[0]
            raise ConfigError(f"unknown option {key!r}", key)
        return cls(**d)


@dataclass
class PipelineOutput:
    results: list[IcaResult]
    table: MatchTable
    tuples: list[SharedTuple]
    assembly: SharedAssembly
    recovered: RecoveredLatentModel | None
    recovery_error: StageError | None = None

    @property
    def ell_hat(self) -> int:
        return self.assembly.ell_hat

    def row_domains(self) -> np.ndarray:
        return np.concatenate([np.full(r.B_hat.shape[0], e) for e, r in enumerate(self.results)])


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (IcaError, RecoveryError, GenerationError, ValueError, np.linalg.LinAlgError, ArithmeticError) as exc:
        raise StageError(name, exc) from exc


def run_pipeline_from_results(results: Sequence[IcaResult], opts: PipelineOptions, exact: bool = False,
                              strict: bool = True) -> PipelineOutput:
    """Matching, assembly and graph recovery on per-domain ICA output.

    With ``strict=False`` a recovery failure is stored on the output instead of
    raised, so the assembled ``B_hat`` stays available.
    """
    results = list(results)
    table = _stage("matching", match_domains, results, opts.alpha, opts.correction)
    tuples = _stage("matching", discover_shared, table)
    assembly = _stage("assembly", assemble_joint, results, tuples)
    out = PipelineOutput(results, table, tuples, assembly, None)
    if assembly.ell_hat > 0:
        try:
            out.recovered = _stage("recovery", recover_shared_graph, assembly.B_shared, opts.gamma, exact,
                                   opts.edge_threshold, out.row_domains())
        except StageError as exc:
            if strict:
                raise
            out.recovery_error = exc
    return out


def run_pipeline(X: Sequence[np.ndarray], opts: PipelineOptions, seed: int = 0, strict: bool = True) -> PipelineOutput:
    """Per-domain ICA followed by :func:`run_pipeline_from_results`."""
    results = [_stage("ica", run_domain_ica, x, opts.ica_options(int(make_rng(seed, e).integers(2**32))))
               for e, x in enumerate(X)]
    return run_pipeline_from_results(results, opts, strict=strict)


def run_oracle_pipeline(model: MdcrModel, opts: PipelineOptions, rng: np.random.Generator | None = None,
                        strict: bool = True) -> PipelineOutput:
    """Pipeline on exact per-domain mixing matrices, using the noiseless recovery path."""
    streams = rng.spawn(model.graph.num_domains) if rng is not None else [None] * model.graph.num_domains
    results = [oracle_ica(model, e, s) for e, s in enumerate(streams)]
    return run_pipeline_from_results(results, opts, exact=True, strict=strict)


# -- trials -------------------------------------------------------------------

@dataclass
class TrialResult:
    """One simulated model and its scores; ``score_A`` is ``None`` unless ``ell_hat == ell``.

    Failed trials keep ``failed_stage`` and ``error``; unknown quantities are
    ``None`` (``ell_hat``) or NaN (``score_B``).
    """

    cell: int
    trial: int
    seed: int
    n: int
    m: int
    ell: int
    ell_hat: int | None
    score_B: float
    score_A: float | None
    failed_stage: str = ""
    error: str = ""
    wall_time: float = 0.0
    config: dict = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return bool(self.failed_stage)


def trial_seeds(master: int, trial: int) -> int:
    """Per-trial seed, independent of the cell so models are shared across sample sizes."""
    return int(make_rng(master, trial).integers(2**63))


def run_trial(cfg: GenConfig, n: int, seed: int, opts: PipelineOptions = PipelineOptions(),
              cell: int = 0, trial: int = 0) -> TrialResult:
    """Sample a model and data, run the pipeline and score it. Never raises on stage failure."""
    start = time.perf_counter()
    out = TrialResult(cell, trial, seed, n, cfg.m, cfg.ell, None, math.nan, None, config=cfg.to_dict())
    try:
        model = _stage("generate", sample_model, cfg, make_rng(seed, 0))
        if opts.oracle:
            res = run_oracle_pipeline(model, opts, make_rng(seed, 1), strict=False)
        else:
            data = _stage("generate", sample_data, model, n, make_rng(seed, 1, n))
            res = run_pipeline(data.X, opts, seed=int(make_rng(seed, 2, n).integers(2**32)), strict=False)
        out.ell_hat = res.ell_hat
        g = model.graph
        if res.ell_hat > 0 and cfg.ell > 0:
            B_L = mixing_matrix(model)[:, list(g.shared)]
            out.score_B = _stage("scoring", score_B, res.assembly.B_shared, B_L)
        if res.ell_hat == cfg.ell and res.recovered is not None:
            A_LL = model.A[: cfg.ell, : cfg.ell]
            out.score_A = _stage("scoring", score_A, res.recovered.A_hat, A_LL, g.shared_subgraph_edges())
        if res.recovery_error is not None:
            raise res.recovery_error
    except StageError as exc:
        out.failed_stage = exc.stage
        out.error = f"{type(exc.cause).__name__}: {exc.cause}"
    out.wall_time = time.perf_counter() - start
    return out


# -- sweeps -------------------------------------------------------------------

TRIAL_COLUMNS = ["cell", "trial", "seed", "n", "m", "ell", "ell_hat", "score_B", "score_A", "failed_stage", "error"]


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def trial_row(r: TrialResult) -> list[str]:
    return [_fmt(getattr(r, c)) for c in TRIAL_COLUMNS]


def trial_from_row(row: dict) -> TrialResult:
    return TrialResult(
        cell=int(row["cell"]), trial=int(row["trial"]), seed=int(row["seed"]), n=int(row["n"]),
        m=int(row["m"]), ell=int(row["ell"]),
        ell_hat=int(row["ell_hat"]) if row["ell_hat"] != "" else None,
        score_B=float(row["score_B"]),
        score_A=float(row["score_A"]) if row["score_A"] != "" else None,
        failed_stage=row["failed_stage"], error=row["error"],
    )


@dataclass(frozen=True)
class SweepSpec:
    """Base config, grid axes (any ``GenConfig`` field or ``n``), trials, master seed and options."""

    base: dict
    grid: dict
    trials: int = 50
    seed: int = 0
    options: PipelineOptions = PipelineOptions()

    def __post_init__(self):
        if not isinstance(self.trials, int) or self.trials < 1:
            raise ConfigError("trials must be a positive integer", "trials")
        for key, values in self.grid.items():
            if not isinstance(values, list) or not values:
                raise ConfigError(f"grid axis {key!r} needs a non-empty list", key)
        self.cells()  # validates every cell config

    def cells(self) -> list[tuple[GenConfig, int]]:
        keys = list(self.grid)
        out = []
        for combo in itertools.product(*(self.grid[k] for k in keys)):
            d = dict(self.base)
            d.update(zip(keys, combo))
            n = d.get("n", GenConfig.n)
            out.append((GenConfig.from_dict(d), int(n)))
        return out

    def to_dict(self) -> dict:
        return {"base": self.base, "grid": self.grid, "trials": self.trials, "seed": self.seed,
                "options": asdict(self.options)}

    @classmethod
    def from_dict(cls, d: dict) -> "SweepSpec":
        known = {"preset", "base", "grid", "trials", "seed", "options"}
        unknown = set(d) - known
        if unknown:
            key = sorted(unknown)[0]
            raise ConfigError(f"unknown sweep key {key!r}", key)
        base = {}
        if "preset" in d:
            if d["preset"] not in PRESETS:
                raise ConfigError(f"unknown preset {d['preset']!r}; choose from {sorted(PRESETS)}", "preset")
            base = PRESETS[d["preset"]].to_dict()
            if "m" in d.get("grid", {}) or "m" in d.get("base", {}):
                base["domain_latent_sizes"] = base["domain_latent_sizes"][0]
        base.update(d.get("base", {}))
        options = PipelineOptions.from_dict(d.get("options", {}))
        return cls(base, dict(d.get("grid", {})), d.get("trials", 50), d.get("seed", 0), options)


def _run_task(args) -> TrialResult:
    cfg, n, seed, opts, cell, trial = args
    return run_trial(cfg, n, seed, opts, cell, trial)


def run_sweep(spec: SweepSpec, threads: int = 1, done: Sequence[TrialResult] = (), on_result=None) -> list[TrialResult]:
    """Run every (cell, trial) not already in ``done``; results come back in grid order.

    ``on_result`` is called for each new result in grid order, which lets the
    caller persist partial progress.
    """
    have = {(r.cell, r.trial) for r in done}
    tasks = []
    for c, (cfg, n) in enumerate(spec.cells()):
        for t in range(spec.trials):
            if (c, t) not in have:
                tasks.append((cfg, n, trial_seeds(spec.seed, t), spec.options, c, t))
    new: list[TrialResult] = []
    if threads <= 1 or len(tasks) <= 1:
        results = map(_run_task, tasks)
        for r in results:
            new.append(r)
            if on_result:
                on_result(r)
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for r in pool.map(_run_task, tasks, chunksize=1):
                new.append(r)
                if on_result:
                    on_result(r)
    return sorted([*done, *new], key=lambda r: (r.cell, r.trial))


def _quantiles(values: list[float]) -> dict:
    if not values:
        return {"median": None, "q1": None, "q3": None, "iqr": None, "count": 0}
    q1, med, q3 = (float(x) for x in np.percentile(np.array(values), [25, 50, 75]))
    return {"median": med, "q1": q1, "q3": q3, "iqr": q3 - q1, "count": len(values)}


def aggregate(results: Sequence[TrialResult], spec: SweepSpec) -> list[dict]:
    """Per-cell summary: ell_hat mean/sd/sem, accuracy, over-discovery, score quantiles, failures."""
    cells = spec.cells()
    rows = []
    for c, (cfg, n) in enumerate(cells):
        rs = sorted((r for r in results if r.cell == c), key=lambda r: r.trial)
        known = [r for r in rs if r.ell_hat is not None]
        ells = np.array([r.ell_hat for r in known], dtype=float)
        row = {"cell": c, "m": cfg.m, "ell": cfg.ell, "n": n, "trials": len(rs),
               "failures": sum(r.failed for r in rs)}
        row["failure_rate"] = row["failures"] / len(rs) if rs else None
        row.update({f"axis_{k}": (n if k == "n" else getattr(cfg, k)) for k in spec.grid})
        if len(ells):
            row["ell_hat_mean"] = float(ells.mean())
            row["ell_hat_sd"] = float(ells.std(ddof=1)) if len(ells) > 1 else 0.0
            row["ell_hat_sem"] = row["ell_hat_sd"] / math.sqrt(len(ells))
            row["frac_exact_ell"] = float(np.mean(ells == cfg.ell))
            row["over_discovery_rate"] = float(np.mean(ells > cfg.ell))
        else:
            row.update(ell_hat_mean=None, ell_hat_sd=None, ell_hat_sem=None, frac_exact_ell=None,
                       over_discovery_rate=None)
        row["score_B"] = _quantiles([r.score_B for r in rs if not math.isnan(r.score_B)])
        row["score_A"] = _quantiles([r.score_A for r in rs if r.score_A is not None and not math.isnan(r.score_A)])
        rows.append(row)
    return rows


AGGREGATE_COLUMNS = ["cell", "m", "ell", "n", "trials", "failures", "failure_rate", "ell_hat_mean", "ell_hat_sd",
                     "ell_hat_sem", "frac_exact_ell", "over_discovery_rate"]


def write_aggregate_csv(rows: Sequence[dict], path: str | Path) -> None:
    cols = AGGREGATE_COLUMNS + [f"score_{s}_{q}" for s in "BA" for q in ("median", "q1", "q3", "iqr", "count")]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in rows:
            flat = dict(row)
            for s in "BA":
                for q, v in row[f"score_{s}"].items():
                    flat[f"score_{s}_{q}"] = v
            w.writerow([_fmt(flat[c]) for c in cols])


def write_trials_csv(results: Sequence[TrialResult], path: str | Path, manifest_sha256: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRIAL_COLUMNS + ["manifest_sha256"])
        for r in results:
            w.writerow(trial_row(r) + [manifest_sha256])


def read_trials_csv(path: str | Path) -> list[TrialResult]:
    with open(path, newline="") as fh:
        return [trial_from_row(row) for row in csv.DictReader(fh)]


# -- bound table and plotting ---------------------------------------------------

def false_discovery_bound_table(n_values: Sequence[int], kappas: Sequence[float], alpha: float,
                         domain_counts: Sequence[int]) -> list[dict]:
    """False-discovery bound with ``n_min = n_max = n`` and ``|E|`` wrongly matched domains."""
    c = kolmogorov_critical(alpha)
    rows = []
    for n, kappa, E in itertools.product(n_values, kappas, domain_counts):
        rows.append({"n": int(n), "kappa": float(kappa), "alpha": float(alpha), "c_alpha": c,
                     "num_wrong": int(E), "bound": false_discovery_bound(n, n, kappa, c, E)})
    return rows


def write_svg_lines(series: dict[str, Sequence[tuple[float, float]]], path: str | Path,
                    title: str = "", xlabel: str = "", ylabel: str = "", log_x: bool = True) -> None:
    """Minimal line chart, one polyline per series, no dependencies."""
    W, H, pad = 480, 320, 50
    pts = [p for s in series.values() for p in s if p[1] is not None and not math.isnan(p[1])]
    if not pts:
        raise ValueError("nothing to plot")
    tx = (lambda x: math.log10(x)) if log_x else (lambda x: x)
    xs = [tx(p[0]) for p in pts]
    ys = [p[1] for p in pts]
    x0, x1 = min(xs), max(xs) if max(xs) > min(xs) else min(xs) + 1
    y0, y1 = min(0.0, min(ys)), max(ys) if max(ys) > min(0.0, min(ys)) else 1.0

    def sx(x):
        return pad + (tx(x) - x0) / (x1 - x0) * (W - 2 * pad)

    def sy(y):
        return H - pad - (y - y0) / (y1 - y0) * (H - 2 * pad)

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"]
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}">',
             f'<rect width="{W}" height="{H}" fill="white"/>',
             f'<line x1="{pad}" y1="{H - pad}" x2="{W - pad}" y2="{H - pad}" stroke="black"/>',
             f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{H - pad}" stroke="black"/>',
             f'<text x="{W / 2}" y="20" text-anchor="middle">{title}</text>',
             f'<text x="{W / 2}" y="{H - 10}" text-anchor="middle">{xlabel}</text>',
             f'<text x="12" y="{H / 2}" transform="rotate(-90 12 {H / 2})" text-anchor="middle">{ylabel}</text>',
             f'<text x="{pad - 4}" y="{H - pad}" text-anchor="end" font-size="10">{y0:.3g}</text>',
             f'<text x="{pad - 4}" y="{pad + 4}" text-anchor="end" font-size="10">{y1:.3g}</text>']
    for k, (name, s) in enumerate(series.items()):
        good = [(x, y) for x, y in s if y is not None and not math.isnan(y)]
        color = colors[k % len(colors)]
        coords = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in good)
        parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>')
        for x, y in good:
            parts.append(f'<circle cx="{sx(x):.1f}" cy="{sy(y):.1f}" r="3" fill="{color}"/>')
        parts.append(f'<text x="{W - pad + 4}" y="{pad + 14 * k}" font-size="10" fill="{color}">{name}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def sweep_series(rows: Sequence[dict], metric: str) -> dict[str, list[tuple[float, float]]]:
    """Group aggregate rows by ``m`` into (n, value) series; ``metric`` is a row key or ``score_B``/``score_A``."""
    series: dict[str, list[tuple[float, float]]] = {}
    for row in rows:
        v = row[metric]["median"] if isinstance(row[metric], dict) else row[metric]
        series.setdefault(f"m={row['m']}", []).append((row["n"], v))
    return {k: sorted(v) for k, v in series.items()}


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True)
