"""Command-line entry point: ``starbell {evaluate,sample,optimize,tradeoff}``.

Exit codes: 0 success, 2 config error, 3 validation error, 4 numerical error.
Every output file starts with the run manifest (``# key: value`` lines for CSV,
a ``manifest`` object for JSON). Set ``SOURCE_DATE_EPOCH`` to pin the
manifest timestamp when byte-identical reruns are needed.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .bell import PROJECTIVE_RANGE, SQRT2, bell_value, chsh_pair, closed_form_s, joint_distribution, projective_bound
from .linalg import PhysicalityError
from .network import (
    ConfigError,
    config_to_dict,
    dump_config,
    enumerate_selections,
    format_selection,
    load_config,
    subnetwork,
    validate,
)
from .optimizer import OptimizationProblem, optimize, worst_case_objective
from .sampler import InsufficientData, bilocal_selections, experiment_report, sample_batch, write_run_log

EXIT_OK, EXIT_CONFIG, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, code: int, message: str):
        self.code = code
        super().__init__(message)


@dataclass
class RunManifest:
    command: str
    config: str | None = None
    seed: int | None = None
    shots: int | None = None
    outputs: list[str] = field(default_factory=list)
    version: str = __version__
    timestamp: str = ""

    def __post_init__(self):
        if not self.timestamp:
            epoch = os.environ.get("SOURCE_DATE_EPOCH")
            when = datetime.fromtimestamp(int(epoch), timezone.utc) if epoch else datetime.now(timezone.utc)
            self.timestamp = when.strftime("%Y-%m-%dT%H:%M:%SZ")


def fmt(value) -> str:
    """Decimal notation, 12 significant digits."""
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    v = float(value)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return np.format_float_positional(v, precision=12, unique=False, fractional=False, trim="-")


@dataclass
class Table:
    name: str
    columns: list[str]
    rows: list[list]


def _csv_text(manifest: RunManifest, tables: list[Table], with_manifest: bool = True) -> str:
    buf = io.StringIO()
    if with_manifest:
        for key, value in asdict(manifest).items():
            if isinstance(value, list):
                value = ";".join(value)
            buf.write(f"# {key}: {'' if value is None else value}\n")
    for i, t in enumerate(tables):
        if i:
            buf.write("\n")
        if len(tables) > 1:
            buf.write(f"# table: {t.name}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(t.columns)
        for row in t.rows:
            w.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    return buf.getvalue()


def _json_value(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return None if math.isnan(v) else v
    if isinstance(v, np.integer):
        return int(v)
    return v


def _json_text(manifest: RunManifest, tables: list[Table], extra: dict | None = None) -> str:
    doc = {"manifest": asdict(manifest)}
    for t in tables:
        doc[t.name] = [{c: _json_value(v) for c, v in zip(t.columns, row)} for row in t.rows]
    if extra:
        doc.update(extra)
    return json.dumps(doc, indent=2) + "\n"


def _sibling(path: Path, name: str, fmt_: str) -> Path:
    return path.with_name(f"{path.stem}_{name}.{fmt_}")


def emit(args, manifest: RunManifest, tables: list[Table], extra: dict | None = None) -> None:
    """Write tables: JSON keeps everything in one document; CSV puts extra tables in sibling files."""
    out = Path(args.output) if args.output else None
    if args.format is None:
        args.format = "json" if out is not None and out.suffix.lower() == ".json" else "csv"
    if args.format == "json":
        if out:
            manifest.outputs = [str(out)]
        text = _json_text(manifest, tables, extra)
        if out:
            out.write_text(text)
        else:
            sys.stdout.write(text)
        return
    if out is None:
        sys.stdout.write(_csv_text(manifest, tables))
        return
    paths = [out] + [_sibling(out, t.name, "csv") for t in tables[1:]]
    manifest.outputs = [str(p) for p in paths]
    for p, t in zip(paths, tables):
        p.write_text(_csv_text(manifest, [t]))


def _load(path: str):
    try:
        config = load_config(path)
    except ConfigError as exc:
        raise CliError(EXIT_CONFIG, f"config error in {path}: {exc}") from exc
    except OSError as exc:
        raise CliError(EXIT_CONFIG, f"cannot read config {path}: {exc}") from exc
    problems = validate(config)
    if problems:
        raise CliError(EXIT_VALIDATION, "invalid config:\n  " + "\n  ".join(problems))
    return config


def _map(fn, items, threads: int):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def _label(m: int, report) -> str:
    branches = report.branches if report.branches is not None else tuple(range(m))
    full: list = [None] * m
    for k, s in zip(branches, report.selection):
        full[k] = s
    return format_selection(full)


def _bound_or_nan(c1: float) -> float:
    lo, hi = PROJECTIVE_RANGE
    return projective_bound(c1) if lo <= c1 <= hi else math.nan


# ------------------------------------------------------------------ commands


def cmd_evaluate(args) -> int:
    config = _load(args.config)
    jobs = [("tri-local", tuple(range(config.m)), sel) for sel in enumerate_selections(config)]
    jobs += [("bi-local", pair, sel) for pair, sel in bilocal_selections(config)]

    def row(job):
        kind, branches, sel = job
        sub = config if len(branches) == config.m else subnetwork(config, branches)
        cf = closed_form_s(sub, sel)
        born = bell_value(joint_distribution(sub, sel)).s_value
        full: list = [None] * config.m
        for k, s in zip(branches, sel):
            full[k] = s
        return [kind, format_selection(full), cf, born, born - cf]

    rows = _map(row, jobs, args.threads)
    chsh_rows = []
    for k in range(config.m):
        if len(config.branches[k]) < 2:
            continue
        pair = chsh_pair(config, k)
        bound = _bound_or_nan(pair.chsh1)
        chsh_rows.append([k + 1, pair.chsh1, pair.chsh2, bound, pair.chsh2 - bound])
    manifest = RunManifest("evaluate", config=args.config)
    emit(
        args,
        manifest,
        [
            Table("selections", ["kind", "selection", "S_closed_form", "S_born_rule", "difference"], rows),
            Table("chsh", ["branch", "chsh1", "chsh2", "projective_bound", "margin"], chsh_rows),
        ],
    )
    return EXIT_OK


def cmd_sample(args) -> int:
    config = _load(args.config)
    if args.shots < 1:
        raise CliError(EXIT_VALIDATION, "--shots must be >= 1")
    rep = experiment_report(
        config,
        args.shots,
        args.seed,
        threads=args.threads,
        bootstrap_resamples=args.bootstrap,
        allocation=args.allocation,
        skip_insufficient=True,
    )
    for note in rep.warnings:
        print(f"warning: {note}", file=sys.stderr)
    rows = []
    for kind, reports in (("tri-local", rep.selections), ("bi-local", rep.bilocal)):
        for r in reports:
            z = (r.s_value - 1.0) / r.std_error if r.std_error else math.nan
            rows.append([kind, _label(config.m, r), r.s_value, r.std_error, z])
    chsh_rows = []
    for p in rep.chsh:
        bound = _bound_or_nan(p.chsh1)
        mz = p.margin / p.margin_err if p.margin is not None and p.margin_err else math.nan
        chsh_rows.append(
            [p.branch + 1, p.chsh1, p.chsh1_err, p.chsh2, p.chsh2_err, bound,
             math.nan if p.margin is None else p.margin,
             math.nan if p.margin_err is None else p.margin_err, mz]
        )
    manifest = RunManifest("sample", config=args.config, seed=args.seed, shots=args.shots)
    emit(
        args,
        manifest,
        [
            Table("selections", ["kind", "selection", "S_hat", "std_error", "z_score_vs_1"], rows),
            Table(
                "chsh",
                ["branch", "chsh1", "chsh1_err", "chsh2", "chsh2_err", "projective_bound", "margin", "margin_err", "margin_z"],
                chsh_rows,
            ),
        ],
    )
    if args.log:
        with open(args.log, "w") as fh:
            for start in range(0, args.shots, 65536):
                batch = sample_batch(config, args.seed, start, min(args.shots, start + 65536), allocation=args.allocation)
                write_run_log(config, batch, fh, header=start == 0)
    return EXIT_OK


def cmd_optimize(args) -> int:
    n = args.n[0] if len(args.n) == 1 else tuple(args.n)
    try:
        problem = OptimizationProblem(args.m, n, args.symmetry, args.objective, args.visibility)
    except ValueError as exc:
        raise CliError(EXIT_VALIDATION, str(exc)) from exc
    result = optimize(problem, budget=args.budget, seed=args.seed, threads=args.threads)
    cfg = result.best_config
    rows = [
        ["objective", result.best_objective],
        ["worst_case_s", worst_case_objective(cfg)],
        ["theta_degrees", math.degrees(cfg.theta)],
    ]
    for k, b in enumerate(cfg.branches):
        for j, p in enumerate(b.parties):
            rows.append([f"eta_z[{k + 1},{j + 1}]", p.eta_z])
            rows.append([f"eta_x[{k + 1},{j + 1}]", p.eta_x])
    rows.append(["exploratory", "true" if result.exploratory else "false"])
    manifest = RunManifest("optimize", seed=args.seed)
    config_path = args.config_output
    if config_path is None and args.output:
        config_path = str(_sibling(Path(args.output), "config", "json"))
    extra = {
        "problem": {"m": args.m, "n": list(problem.lengths), "symmetry": args.symmetry, "objective": args.objective},
        "best_config": config_to_dict(cfg),
        "trace": [[i, v] for i, v in result.trace],
    }
    emit(args, manifest, [Table("result", ["parameter", "value"], rows)], extra)
    if config_path:
        dump_config(cfg, config_path)
    if result.exploratory:
        print("note: asymmetric or ragged problem; results are exploratory", file=sys.stderr)
    return EXIT_OK


def tradeoff_tables(points: int) -> Table:
    lo, hi = PROJECTIVE_RANGE
    rows = []
    for i in range(points):
        c1 = lo + (hi - lo) * i / (points - 1)
        rows.append(["projective", c1, c1, projective_bound(c1)])
    top = 2.0 * SQRT2
    for i in range(points):
        t = top * i / (points - 1)
        rows.append(["local_chsh1", t, 2.0, t])
    for i in range(points):
        t = top * i / (points - 1)
        rows.append(["local_chsh2", t, t, 2.0])
    for i in range(points):
        eta = i / (points - 1)
        rows.append(["unsharp", eta, top * eta, top * 0.5 * (1.0 + math.sqrt(max(0.0, 1.0 - eta * eta)))])
    return Table("tradeoff", ["curve", "parameter", "chsh1", "chsh2"], rows)


def cmd_tradeoff(args) -> int:
    if args.points < 2:
        raise CliError(EXIT_VALIDATION, "--points must be >= 2")
    emit(args, RunManifest("tradeoff"), [tradeoff_tables(args.points)])
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="starbell", description="Recycled nonlocality in quantum star networks")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--output", "-o", help="output file (default: stdout)")
        p.add_argument("--format", choices=("csv", "json"), help="default: json for *.json outputs, else csv")
        p.add_argument("--threads", type=int, default=1, help="worker threads; 1 is the reference mode")

    p = sub.add_parser("evaluate", help="exact Bell values for every selection")
    p.add_argument("config")
    common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sample", help="shot-sampled experiment with bootstrap errors")
    p.add_argument("config")
    p.add_argument("--shots", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bootstrap", type=int, default=1000, help="bootstrap resamples")
    p.add_argument("--allocation", choices=("uniform", "fixed"), default="uniform",
                   help="uniform random inputs, or round-robin over all input settings")
    p.add_argument("--log", help="write the per-run record stream to this file")
    common(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("optimize", help="maximise the worst-case Bell value")
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--n", type=int, nargs="+", required=True, help="chain length, or one per branch")
    p.add_argument("--symmetry", choices=("none", "per-depth", "branch", "full"), default="branch")
    p.add_argument("--objective", choices=("worst_case_s", "average_s"), default="worst_case_s")
    p.add_argument("--budget", type=int, default=16, help="number of random starts")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--visibility", type=float, default=1.0)
    p.add_argument("--config-output", help="where to write the optimal network config")
    common(p)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("tradeoff", help="sequential CHSH trade-off curves")
    p.add_argument("--points", type=int, default=101)
    common(p)
    p.set_defaults(func=cmd_tradeoff)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (PhysicalityError, ArithmeticError, InsufficientData, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
