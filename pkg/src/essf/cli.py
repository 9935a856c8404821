"""Command-line entry point: ``essf simulate | diagnose | test``.

Exit codes: 0 success, 1 invalid config, 2 runtime error, ``2 + k`` when
``k`` statistical tests fail.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from . import diagnostics, stat_tests
from .dislocation import (
    Characteristics,
    DislocationMeasure,
    ZElement,
    integrability_value,
    sample_paintbox,
)
from .marked_partition import MarkedPartition
from .simulate import (
    absorption_time,
    simulate_homogeneous,
    simulate_replicates,
    snapshot,
    stream,
    time_change,
    total_length,
    tree_lines,
)

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
DEFAULT_H_GRID = 1e-3
TEST_KINDS = ("split_rate", "consistency", "exchangeability", "martingale")
EXCHANGEABILITY_TAG = 301


class ConfigError(ValueError):
    pass


def _measure(entries) -> DislocationMeasure:
    atoms = []
    for k, atom in enumerate(entries or []):
        try:
            atoms.append((atom["weight"], ZElement(atom["pairs"])))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"lambda[{k}] needs 'weight' and 'pairs'") from exc
    return DislocationMeasure(tuple(atoms))


def characteristics_from_config(doc: dict) -> Characteristics:
    if ("characteristics" in doc) == ("preset" in doc):
        raise ConfigError("give exactly one of 'characteristics' or 'preset'")
    if "characteristics" in doc:
        return Characteristics.from_dict(doc["characteristics"])
    preset = dict(doc["preset"])
    kind = preset.pop("kind", None)
    if kind == "classical":
        return diagnostics.classical_preset(
            _measure(preset.get("lambda")), float(preset.get("c", 0.0)), float(preset.get("alpha", 0.0))
        )
    if kind == "bbm":
        return diagnostics.bbm_preset(float(preset.get("drift", 0.0)))
    if kind == "gf":
        cell = diagnostics.GrowthFragmentationCell(
            alpha=float(preset.get("alpha", 0.0)),
            d=float(preset.get("d", 0.0)),
            beta=float(preset.get("beta", 0.0)),
            jumps=tuple((float(r), float(y)) for r, y in preset.get("jumps", [])),
            k=float(preset.get("k", 0.0)),
        )
        return diagnostics.gf_embedding(cell, preset.get("s1", "default"))
    raise ConfigError(f"unknown preset kind {kind!r}; expected classical, bbm or gf")


@dataclass
class RunConfig:
    characteristics: Characteristics
    seed: int
    level: int = 4
    horizon: float = 1.0
    query_times: tuple[float, ...] = ()
    replicates: int = 1
    h_grid: float | None = None
    thetas: tuple[float, ...] = (0.0, 1.0)
    out: Path = Path("out")
    diagnose: dict = field(default_factory=dict)
    tests: list = field(default_factory=list)
    raw: dict = field(default_factory=dict)

    @property
    def alpha(self) -> float:
        return self.characteristics.alpha

    @property
    def config_hash(self) -> str:
        # the output location does not change results
        doc = {k: v for k, v in self.raw.items() if k != "out"}
        blob = json.dumps(doc, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def header(self) -> str:
        return f"config_hash={self.config_hash} seed={self.seed}"


KNOWN_KEYS = {
    "characteristics", "preset", "seed", "level", "horizon", "query_times", "replicates",
    "h_grid", "thetas", "out", "diagnose", "tests",
}


def load_config(path: str | Path, seed: int | None = None, out: str | None = None,
                h_grid: float | None = None) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML/JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping")
    unknown = set(doc) - KNOWN_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if seed is not None:
        doc["seed"] = seed
    if h_grid is not None:
        doc["h_grid"] = h_grid
    if out is not None:
        doc["out"] = out
    if "seed" not in doc or doc["seed"] is None:
        raise ConfigError("seed is mandatory")
    if not isinstance(doc["seed"], int) or doc["seed"] < 0:
        raise ConfigError("seed must be a nonnegative integer")
    try:
        ch = characteristics_from_config(doc)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    cfg = RunConfig(
        characteristics=ch,
        seed=int(doc["seed"]),
        level=int(doc.get("level", 4)),
        horizon=float(doc.get("horizon", 1.0)),
        query_times=tuple(sorted(float(q) for q in doc.get("query_times", []))),
        replicates=int(doc.get("replicates", 1)),
        h_grid=None if doc.get("h_grid") is None else float(doc["h_grid"]),
        thetas=tuple(float(t) for t in doc.get("thetas", [0.0, 1.0])),
        out=Path(doc.get("out", "out")),
        diagnose=dict(doc.get("diagnose") or {}),
        tests=list(doc.get("tests") or []),
        raw=doc,
    )
    if cfg.level < 1:
        raise ConfigError("level must be >= 1")
    if not (cfg.horizon > 0 and math.isfinite(cfg.horizon)):
        raise ConfigError("horizon must be positive and finite")
    if cfg.replicates < 1:
        raise ConfigError("replicates must be >= 1")
    if cfg.h_grid is not None and not cfg.h_grid > 0:
        raise ConfigError("h_grid must be > 0")
    if any(q < 0 for q in cfg.query_times):
        raise ConfigError("query times must be >= 0")
    if cfg.alpha == 0.0 and any(q > cfg.horizon for q in cfg.query_times):
        raise ConfigError("query times must not exceed the horizon")
    for k, spec in enumerate(cfg.tests):
        if not isinstance(spec, dict) or spec.get("kind") not in TEST_KINDS:
            raise ConfigError(f"tests[{k}] needs kind in {TEST_KINDS}")
    return cfg


def _fmt(v: float) -> str:
    return repr(float(v))


def cmd_simulate(cfg: RunConfig, jobs: int = 1) -> int:
    ch = cfg.characteristics
    h_grid = cfg.h_grid
    if ch.alpha != 0.0 and ch.beta > 0.0 and h_grid is None:
        h_grid = DEFAULT_H_GRID
    homogeneous_queries = cfg.query_times if ch.alpha == 0.0 else ()
    trees = simulate_replicates(
        ch.replace(alpha=0.0), cfg.level, cfg.horizon, homogeneous_queries, cfg.replicates,
        cfg.seed, h_grid=h_grid, jobs=jobs,
    )
    cfg.out.mkdir(parents=True, exist_ok=True)
    header = {"config_hash": cfg.config_hash, "seed": cfg.seed}
    with open(cfg.out / "trees.jsonl", "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for r, tree in enumerate(trees):
            for line in tree_lines(tree, r):
                fh.write(line + "\n")
    with open(cfg.out / "snapshots.csv", "w", newline="") as fh:
        fh.write(f"# {cfg.header()}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["replicate", "t", "block_count", *[f"S_theta_{th:g}" for th in cfg.thetas]])
        for r, tree in enumerate(trees):
            view = time_change(tree, ch.alpha) if ch.alpha != 0.0 else None
            for t in cfg.query_times:
                x = view.snapshot(t) if view is not None else snapshot(tree, t)
                stats_row = [_fmt(diagnostics.additive_statistic(x, th)) for th in cfg.thetas]
                writer.writerow([r, _fmt(t), x.n_blocks, *stats_row])
    with open(cfg.out / "summary.csv", "w", newline="") as fh:
        fh.write(f"# {cfg.header()}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["replicate", "absorption_time", "total_length"])
        for r, tree in enumerate(trees):
            a = absorption_time(tree, ch.alpha)
            length = total_length(tree, ch.alpha)
            writer.writerow([r, "" if a is None else _fmt(a), "" if length is None else _fmt(length)])
    return EXIT_OK


def cmd_diagnose(cfg: RunConfig, thetas: list[float] | None = None) -> int:
    ch = cfg.characteristics
    opts = cfg.diagnose
    grid = thetas or opts.get("thetas") or list(cfg.thetas)
    levels = [int(n) for n in opts.get("levels", [])]
    search = tuple(opts.get("search", (-10.0, 10.0)))
    report = diagnostics.cumulant_report(ch, grid, levels, search)
    mc_level = opts.get("mc_level")
    if mc_level is not None:
        means, ses = [], []
        for k, th in enumerate(report.thetas):
            est = diagnostics.branching_term_mc(
                ch, int(mc_level), th, int(opts.get("mc_replicates", 10000)), stream(cfg.seed, 401, k)
            )
            a = diagnostics.moment_exponent(ch, int(mc_level), th)
            means.append(a + est.value)
            ses.append(est.se)
        report.mc_mean, report.mc_se = means, ses
    cfg.out.mkdir(parents=True, exist_ok=True)
    (cfg.out / "cumulant.csv").write_text(report.to_csv(cfg.header()))
    sign = "negative" if report.has_negative_region else "nonnegative"
    print(f"kappa minimum {report.kappa_min!r} at theta {report.theta_star!r} ({sign})", file=sys.stderr)
    return EXIT_OK


def _corrupt_mark_of_one(x: MarkedPartition) -> MarkedPartition:
    marks = list(x.marks)
    marks[x.assignment[0] - 1] *= 2.0
    return MarkedPartition(x.assignment, tuple(marks))


def run_test(cfg: RunConfig, spec: dict, index: int) -> stat_tests.TestReport:
    ch = cfg.characteristics.replace(alpha=0.0)
    seed = int(spec.get("seed", cfg.seed))
    reps = int(spec.get("replicates", cfg.replicates))
    kind = spec["kind"]
    if kind == "split_rate":
        return stat_tests.split_rate_test(ch, int(spec.get("n", cfg.level)), reps, seed)
    if kind == "consistency":
        scale = float(spec.get("level_n_rate_scale", 1.0))
        other = ch.scaled_rates(scale) if scale != 1.0 else None
        return stat_tests.consistency_test(
            ch, int(spec.get("n", 2)), int(spec.get("m", 4)), float(spec.get("t", 1.0)), reps, seed,
            level_n_characteristics=other,
        )
    if kind == "exchangeability":
        n = int(spec.get("n", 3))
        sigma = spec.get("sigma") or list(range(n, 0, -1))
        t = float(spec.get("t", 1.0))
        samples = []
        for r in range(reps):
            rng = stream(seed, EXCHANGEABILITY_TAG, r)
            if "paintbox" in spec:
                x = sample_paintbox(ZElement(spec["paintbox"]), n, rng)
            else:
                x = snapshot(simulate_homogeneous(ch, n, t, (t,), rng), t)
            if spec.get("corrupt_mark_of_1"):
                x = _corrupt_mark_of_one(x)
            samples.append(x)
        return stat_tests.exchangeability_test(samples, sigma, int(spec.get("bins", 4)))
    theta = float(spec.get("theta", 1.0))
    n = spec.get("n", cfg.level)
    n = None if n in (None, "inf") else int(n)
    kappa = diagnostics.cumulant(ch, theta) if n is None else diagnostics.cumulant_level(ch, n, theta)
    kappa *= float(spec.get("kappa_scale", 1.0))
    times = spec.get("times") or list(cfg.query_times)
    return stat_tests.martingale_flatness_test(ch, theta, times, reps, n, seed, kappa=kappa)


def cmd_test(cfg: RunConfig, select: list[str] | None = None) -> int:
    chosen = [
        (k, spec) for k, spec in enumerate(cfg.tests)
        if select is None or spec["kind"] in select or spec.get("name") in select
    ]
    failures = 0
    cfg.out.mkdir(parents=True, exist_ok=True)
    with open(cfg.out / "tests.jsonl", "w") as fh:
        fh.write(json.dumps({"config_hash": cfg.config_hash, "seed": cfg.seed}) + "\n")
        for k, spec in chosen:
            report = run_test(cfg, spec, k)
            fh.write(report.to_json() + "\n")
            print(report.to_json())
            failures += not report.passed
    return EXIT_RUNTIME + failures if failures else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="YAML or JSON run configuration")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--jobs", type=int, default=1, help="parallel replicate workers")
    common.add_argument("--h-grid", type=float, dest="h_grid", help="Lamperti integration grid step")
    parser = argparse.ArgumentParser(prog="essf", description="Extended self-similar fragmentation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="simulate genealogies and snapshots")
    diag = sub.add_parser("diagnose", parents=[common], help="cumulant report")
    diag.add_argument("--theta", type=float, nargs="+", help="theta grid")
    test = sub.add_parser("test", parents=[common], help="run configured statistical tests")
    test.add_argument("--select", help="comma-separated test kinds or names; empty runs none")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed, args.out, args.h_grid)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(f"integrability value: {integrability_value(cfg.characteristics.lam)!r}", file=sys.stderr)
    try:
        if args.command == "simulate":
            return cmd_simulate(cfg, args.jobs)
        if args.command == "diagnose":
            return cmd_diagnose(cfg, args.theta)
        select = None if args.select is None else [s for s in args.select.split(",") if s]
        return cmd_test(cfg, select)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
