"""Command-line interface: ``mdcr generate | pipeline | sweep | bounds``.

Exit codes: 0 success, 2 usage or configuration error, 3 no shared latent found
with ``--require-shared``, 4 numerical failure in a named pipeline stage.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import re
import sys
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from mdcr import __version__
from mdcr.experiment import (
    PipelineOptions,
    SweepSpec,
    StageError,
    aggregate,
    read_trials_csv,
    run_oracle_pipeline,
    run_pipeline,
    run_sweep,
    sweep_series,
    false_discovery_bound_table,
    trial_row,
    write_aggregate_csv,
    write_svg_lines,
    write_trials_csv,
    TRIAL_COLUMNS,
)
from mdcr.graph import load_model, mixing_matrix, save_model
from mdcr.matching import write_match_table
from mdcr.metrics import score_A, score_B
from mdcr.synthesis import (
    PRESETS,
    ConfigError,
    DataFormatError,
    GenConfig,
    GenerationError,
    domain_csv_paths,
    make_rng,
    read_samples,
    sample_data,
    sample_model,
    write_samples,
)

EXIT_OK, EXIT_USAGE, EXIT_NO_SHARED, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


# -- config loading -----------------------------------------------------------

def _key_line(text: str, key: str | None) -> int | None:
    if not key:
        return None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if re.search(r'"' + re.escape(key) + r'"\s*:', line):
            return lineno
    return None


def load_json_config(path: str | Path) -> tuple[dict, str]:
    """Parse a JSON config; errors carry ``path:line``."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"{path}: cannot read config ({exc.strerror})") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise UsageError(f"{path}:1: config must be a JSON object")
    return data, text


def config_error(path, text: str, exc: ConfigError) -> UsageError:
    line = _key_line(text, exc.key)
    where = f"{path}:{line}" if line else str(path)
    return UsageError(f"{where}: {exc}")


def gen_config_from(data: dict) -> GenConfig:
    data = dict(data)
    preset = data.pop("preset", None)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}", "preset")
        base = PRESETS[preset].to_dict()
        if "m" in data and "domain_latent_sizes" not in data:
            base["domain_latent_sizes"] = base["domain_latent_sizes"][0]
        base.update(data)
        data = base
    return GenConfig.from_dict(data)


# -- manifest -------------------------------------------------------------------

def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class Manifest:
    """Run record written before any output; its hash covers command, config, seed and version only."""

    def __init__(self, out_dir: Path, command: str, config: dict, seed: int):
        self.path = out_dir / "manifest.json"
        self.core = {"command": command, "config": config, "seed": seed, "version": __version__}
        canonical = json.dumps(self.core, sort_keys=True, separators=(",", ":"))
        self.sha256 = hashlib.sha256(canonical.encode()).hexdigest()
        self.outputs: list[str] = []
        self.started = _now()

    def existing_hash(self) -> str | None:
        if not self.path.exists():
            return None
        try:
            return json.loads(self.path.read_text()).get("manifest_sha256")
        except (json.JSONDecodeError, OSError):
            return None

    def write(self, finished: bool = False) -> None:
        record = dict(self.core)
        record.update(manifest_sha256=self.sha256, started=self.started,
                      finished=_now() if finished else None, outputs=sorted(self.outputs))
        self.path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")

    def add(self, *paths: Path) -> None:
        self.outputs += [p.name for p in paths]


def _write_json(path: Path, obj: dict, manifest: Manifest) -> None:
    obj = dict(obj, manifest_sha256=manifest.sha256)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    manifest.add(path)


def _write_matrix(path: Path, M: np.ndarray, prefix: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"{prefix}{j + 1}" for j in range(M.shape[1])])
        for row in M:
            w.writerow([repr(float(x)) for x in row])


def _file_sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _threads(args) -> int:
    if args.threads is not None:
        t = args.threads
    else:
        env = os.environ.get("MDCR_THREADS", "1")
        try:
            t = int(env)
        except ValueError as exc:
            raise UsageError(f"MDCR_THREADS must be an integer, got {env!r}") from exc
    if t < 1:
        raise UsageError("thread count must be at least 1")
    return t


def _pipeline_overrides(args) -> dict:
    mapping = {"gamma": args.gamma, "alpha": args.alpha, "correction": args.correction,
               "edge_threshold": args.edge_threshold, "rank_matrix": args.rank_matrix,
               "ica_restarts": args.ica_restarts, "ica_tol": args.ica_tol, "ica_max_iter": args.ica_max_iter}
    out = {k: v for k, v in mapping.items() if v is not None}
    if getattr(args, "oracle", False):
        out["oracle"] = True
    return out


# -- commands -------------------------------------------------------------------

def cmd_generate(args) -> int:
    if args.config:
        data, text = load_json_config(args.config)
        try:
            cfg = gen_config_from(data)
        except ConfigError as exc:
            raise config_error(args.config, text, exc) from exc
    elif args.preset:
        if args.preset not in PRESETS:
            raise UsageError(f"unknown preset {args.preset!r}; choose from {sorted(PRESETS)}")
        cfg = PRESETS[args.preset]
    else:
        raise UsageError("generate needs --config or --preset")
    try:
        if args.seed is not None:
            cfg = cfg.replace(seed=args.seed)
        if args.n is not None:
            cfg = cfg.replace(n=args.n)
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(out, "generate", cfg.to_dict(), cfg.seed)
    manifest.write()
    try:
        model = sample_model(cfg, make_rng(cfg.seed, 0))
    except GenerationError as exc:
        raise UsageError(f"configuration cannot be realized: {exc}") from exc
    samples = sample_data(model, cfg.n, make_rng(cfg.seed, 1, cfg.n))
    save_model(model, out / "model.json")
    manifest.add(out / "model.json", *write_samples(samples, out))
    manifest.write(finished=True)
    print(f"wrote model.json and {samples.num_domains} domain CSVs to {out}")
    return EXIT_OK


def _collect_inputs(args) -> list[Path]:
    if args.csv:
        paths = [Path(p) for p in args.csv]
    elif args.data:
        paths = domain_csv_paths(args.data)
    else:
        return []
    missing = [str(p) for p in paths if not p.is_file()]
    if missing:
        raise UsageError(f"input files not found: {', '.join(missing)}")
    return paths


def cmd_pipeline(args) -> int:
    try:
        opts = PipelineOptions(**_pipeline_overrides(args))
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc
    paths = _collect_inputs(args)
    model = None
    if args.model:
        try:
            model = load_model(args.model)
        except (OSError, KeyError, ValueError) as exc:
            raise UsageError(f"{args.model}: cannot load model ({exc})") from exc
    if opts.oracle and model is None:
        raise UsageError("--oracle needs --model")
    if not opts.oracle and len(paths) < 2:
        raise UsageError("pipeline needs at least two domain CSVs (--data DIR or --csv FILE FILE ...)")

    seed = 0 if args.seed is None else args.seed
    config = {"options": asdict(opts), "inputs": {p.name: _file_sha256(p) for p in paths},
              "model": _file_sha256(Path(args.model)) if args.model else None, "transpose": args.transpose}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(out, "pipeline", config, seed)
    manifest.write()

    if opts.oracle:
        res = run_oracle_pipeline(model, opts, make_rng(seed, 1))
    else:
        try:
            samples = read_samples(paths, transpose=args.transpose)
        except DataFormatError as exc:
            raise UsageError(str(exc)) from exc
        for p, x in zip(paths, samples.X):
            if x.shape[1] <= x.shape[0]:
                raise UsageError(f"{p}: {x.shape[1]} samples for {x.shape[0]} variables; need more samples than variables")
        res = run_pipeline(samples.X, opts, seed=seed)

    write_match_table(res.table, out / "match_table.csv")
    manifest.add(out / "match_table.csv")
    _write_matrix(out / "B_hat.csv", res.assembly.B_hat, "col")
    manifest.add(out / "B_hat.csv")
    summary = {"ell_hat": res.ell_hat, "A_hat": [], "edges": [], "order_permutation": [],
               "diagnostics": {"num_sources": [r.num_sources for r in res.results],
                               "critical_value": res.table.critical}}
    if res.recovered is not None:
        rec = res.recovered.to_dict()
        rec["diagnostics"] = dict(summary["diagnostics"], **rec["diagnostics"])
        summary = rec
        _write_matrix(out / "A_hat.csv", res.recovered.A_hat, "node")
        with open(out / "edges.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["parent", "child", "weight"])
            for a, b in res.recovered.edges:
                w.writerow([a + 1, b + 1, repr(float(res.recovered.A_hat[b, a]))])
        manifest.add(out / "A_hat.csv", out / "edges.csv")
    _write_json(out / "recovered.json", summary, manifest)

    if model is not None:
        g = model.graph
        scores = {"ell": g.num_shared, "ell_hat": res.ell_hat, "score_B": None, "score_A": None}
        if res.ell_hat > 0 and g.num_shared > 0 and res.assembly.B_hat.shape[0] == g.num_observed:
            scores["score_B"] = score_B(res.assembly.B_shared, mixing_matrix(model)[:, list(g.shared)])
        if res.recovered is not None and res.ell_hat == g.num_shared:
            ell = g.num_shared
            scores["score_A"] = score_A(res.recovered.A_hat, model.A[:ell, :ell], g.shared_subgraph_edges())
        _write_json(out / "scores.json", scores, manifest)

    manifest.write(finished=True)
    print(f"ell_hat = {res.ell_hat}")
    if res.ell_hat == 0 and args.require_shared:
        print("no shared latent variable was found", file=sys.stderr)
        return EXIT_NO_SHARED
    return EXIT_OK


def _load_sweep(args) -> SweepSpec:
    data, text = load_json_config(args.config)
    if args.trials is not None:
        data["trials"] = args.trials
    if args.seed is not None:
        data["seed"] = args.seed
    overrides = _pipeline_overrides(args)
    if overrides:
        data["options"] = dict(data.get("options", {}), **overrides)
    try:
        return SweepSpec.from_dict(data)
    except ConfigError as exc:
        if exc.key == "trials" and args.trials is not None:
            raise UsageError(f"--trials: {exc}") from exc
        raise config_error(args.config, text, exc) from exc
    except (TypeError, ValueError) as exc:
        raise UsageError(f"{args.config}: {exc}") from exc


def cmd_sweep(args) -> int:
    spec = _load_sweep(args)
    threads = _threads(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(out, "sweep", spec.to_dict(), spec.seed)
    trials_path = out / "trials.csv"

    done = []
    if trials_path.exists():
        previous = manifest.existing_hash()
        if previous != manifest.sha256:
            raise UsageError(f"{out} holds results of a different sweep (manifest {previous}); use a fresh --out")
        done = read_trials_csv(trials_path)
    manifest.write()

    fresh = not trials_path.exists()
    with open(trials_path, "a", newline="") as fh, open(out / "timings.csv", "a", newline="") as th:
        w, tw = csv.writer(fh), csv.writer(th)
        if fresh:
            w.writerow(TRIAL_COLUMNS + ["manifest_sha256"])
            tw.writerow(["cell", "trial", "wall_time"])

        def persist(r):
            w.writerow(trial_row(r) + [manifest.sha256])
            tw.writerow([r.cell, r.trial, repr(r.wall_time)])
            fh.flush()
            th.flush()

        results = run_sweep(spec, threads, done, on_result=persist)

    # canonical order, independent of resumption history
    write_trials_csv(results, trials_path, manifest.sha256)
    rows = aggregate(results, spec)
    _write_json(out / "aggregate.json", {"cells": rows, "spec": spec.to_dict()}, manifest)
    write_aggregate_csv(rows, out / "aggregate.csv")
    manifest.add(trials_path, out / "timings.csv", out / "aggregate.csv")
    if args.svg:
        for metric, label in (("score_B", "median score_B"), ("score_A", "median score_A"),
                              ("ell_hat_mean", "mean ell_hat")):
            path = out / f"{metric}.svg"
            try:
                write_svg_lines(sweep_series(rows, metric), path, title=label, xlabel="n", ylabel=label)
                manifest.add(path)
            except ValueError:
                pass
    manifest.write(finished=True)
    failures = sum(r.failed for r in results)
    print(f"{len(results)} trials in {len(rows)} cells ({failures} failed); results in {out}")
    return EXIT_OK


def cmd_bounds(args) -> int:
    if any(k <= 0 for k in args.kappa) or any(e < 2 for e in args.domains) or any(n < 1 for n in args.n):
        raise UsageError("need kappa > 0, n >= 1 and at least two wrongly matched domains")
    if not 0 < args.alpha < 1:
        raise UsageError("alpha must lie in (0, 1)")
    rows = false_discovery_bound_table(args.n, args.kappa, args.alpha, args.domains)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(["n", "kappa", "alpha", "c_alpha", "num_wrong", "bound"])
        for r in rows:
            w.writerow([r["n"], repr(r["kappa"]), repr(r["alpha"]), repr(r["c_alpha"]), r["num_wrong"],
                        repr(r["bound"])])
    finally:
        if args.out:
            fh.close()
    return EXIT_OK


# -- parser -----------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _add_pipeline_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--gamma", type=float, help="rank and zero-row threshold (default 0.2)")
    p.add_argument("--alpha", type=float, help="matching test level (default 0.05)")
    p.add_argument("--correction", choices=["bonferroni", "none"], help="multiple-testing correction")
    p.add_argument("--edge-threshold", type=float, help="|A_hat| cutoff for reported edges (default gamma)")
    p.add_argument("--rank-matrix", choices=["cov", "gram"], help="matrix whose singular values set the source count")
    p.add_argument("--ica-restarts", type=int)
    p.add_argument("--ica-tol", type=float)
    p.add_argument("--ica-max-iter", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mdcr", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"mdcr {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="sample a random model and per-domain data")
    g.add_argument("--config", help="JSON with GenConfig fields, optionally a 'preset' to start from")
    g.add_argument("--preset", help=f"one of {', '.join(sorted(PRESETS))}")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--n", type=int, help="samples per domain")
    g.set_defaults(func=cmd_generate)

    p = sub.add_parser("pipeline", help="recover B_hat and the shared graph from domain CSVs")
    p.add_argument("--data", help="directory with domain_1.csv, domain_2.csv, ...")
    p.add_argument("--csv", nargs="+", help="explicit domain CSV files, in domain order")
    p.add_argument("--model", help="model.json; enables scores.json and --oracle")
    p.add_argument("--oracle", action="store_true", help="use exact per-domain mixing from --model instead of ICA")
    p.add_argument("--transpose", action="store_true", help="CSV rows are samples, columns variables")
    p.add_argument("--require-shared", action="store_true", help="exit 3 when no shared latent is found")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_pipeline)

    s = sub.add_parser("sweep", help="run a grid of simulated trials")
    s.add_argument("--config", required=True, help="sweep JSON: preset/base, grid, trials, seed, options")
    s.add_argument("--out", required=True)
    s.add_argument("--trials", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--threads", type=int, help="worker processes (default MDCR_THREADS or 1)")
    s.add_argument("--oracle", action="store_true")
    s.add_argument("--svg", action="store_true", help="also write line charts")
    _add_pipeline_flags(s)
    s.set_defaults(func=cmd_sweep)

    b = sub.add_parser("bounds", help="tabulate the false-discovery bound")
    b.add_argument("--n", type=int, nargs="+", default=[1000, 2500, 5000, 10000, 25000])
    b.add_argument("--kappa", type=float, nargs="+", default=[0.1, 0.2])
    b.add_argument("--alpha", type=float, default=0.05)
    b.add_argument("--domains", type=int, nargs="+", default=[2, 3, 4])
    b.add_argument("--out", help="CSV path (default stdout)")
    b.set_defaults(func=cmd_bounds)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    raise SystemExit(main())
