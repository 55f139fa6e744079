"""Command-line entry points.

Subcommands: simulate, ingest, analyze, report, selftest.
Exit codes: 0 success, 1 usage error (or failed selftest), 2 data error,
3 analysis produced only degenerate strata.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from datetime import date
from pathlib import Path

from .config import read_kv
from .domain import ParseError
from .estimators import EstimatorConfig, META_LEARNERS
from .learners import LearnerParams
from .pipeline import PipelineOptions, pipeline_cohorts, run_pipeline
from .report import render_effect_table, render_text_report, report_from_json, \
    write_report_files
from .simulate import SimConfig, generate_world, preset_config, sim_config_from_kv, \
    write_world

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DEGENERATE = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_input_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--reports", required=True, help="reports CSV")
    p.add_argument("--moderations", required=True, help="moderations CSV")
    p.add_argument("--matches", required=True, help="per-player-per-day matches CSV")
    p.add_argument("--from", dest="date_from", required=True, type=date.fromisoformat,
                   help="study window start (ISO date)")
    p.add_argument("--to", dest="date_to", required=True, type=date.fromisoformat,
                   help="study window end (ISO date)")
    p.add_argument("--voice-from", dest="voice_from", type=date.fromisoformat,
                   default=None,
                   help="voice-chat reports before this date are dropped")


def build_parser() -> _Parser:
    parser = _Parser(prog="modfx", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a synthetic world")
    sim.add_argument("--config", help="key=value simulation config file")
    sim.add_argument("--preset", default="confounded",
                     choices=("confounded", "null", "constant",
                              "heterogeneous_kd", "unconfounded"),
                     help="named world used when no config file is given")
    sim.add_argument("--players", type=int, default=2000)
    sim.add_argument("--setup", default="moderation_vs_none",
                     choices=("moderation_vs_none", "quick_vs_delayed"))
    sim.add_argument("--out", required=True, help="output directory")
    sim.add_argument("--seed", type=int, required=True)

    ing = sub.add_parser("ingest", help="load event files and link cases")
    _add_input_flags(ing)
    ing.add_argument("--out", help="directory for linked_cases.csv")

    ana = sub.add_parser("analyze", help="run the full estimation pipeline")
    _add_input_flags(ana)
    ana.add_argument("--out", required=True)
    ana.add_argument("--seed", type=int, required=True,
                     help="master seed; all randomness derives from it")
    ana.add_argument("--setup", default="both",
                     choices=("both", "moderation_vs_none", "quick_vs_delayed"))
    ana.add_argument("--estimator", default="dr",
                     help="comma list of estimators (t,s,x,r,dr)")
    ana.add_argument("--base", default="gbt", choices=("linear", "gbt", "mean"),
                     help="base learner for outcome models")
    ana.add_argument("--effect-learner", dest="effect_learner", default="auto",
                     choices=("auto", "linear", "gbt", "mean"),
                     help="second-stage learner (auto: trees for "
                          "moderation_vs_none, linear for quick_vs_delayed)")
    ana.add_argument("--clip", nargs="+", type=float, default=[0.01, 0.99],
                     help="propensity clip: LO [HI]; one value means (v, 1-v)")
    ana.add_argument("--reps", type=int, default=500, help="bootstrap replicates")
    ana.add_argument("--level", type=float, default=0.95)
    ana.add_argument("--knn-k", dest="knn_k", type=int, default=1)
    ana.add_argument("--jobs", type=int, default=1)
    ana.add_argument("--no-propensity-weighting", dest="x_weighting",
                     action="store_false",
                     help="x-learner combines arms with a constant weight")
    ana.add_argument("--cross-fit", action="store_true",
                     help="2-fold cross-fitting for the DR nuisances")
    ana.add_argument("--trees", type=int, default=200)
    ana.add_argument("--depth", type=int, default=3)
    ana.add_argument("--learning-rate", dest="learning_rate", type=float, default=0.1)
    ana.add_argument("--l2", type=float, default=1e-3)
    ana.add_argument("--config", help="key=value file overriding the flags above")

    rep = sub.add_parser("report", help="re-render a saved report.json")
    rep.add_argument("--json", required=True)
    rep.add_argument("--format", default="text", choices=("text", "table"))

    selftest = sub.add_parser("selftest",
                              help="run the oracle acceptance suite")
    selftest.add_argument("--only", help="comma list of check names")
    selftest.add_argument("--list", action="store_true", dest="list_checks")
    return parser


def _clip_pair(values) -> tuple[float, float]:
    if len(values) == 1:
        return (values[0], 1.0 - values[0])
    if len(values) == 2:
        return (values[0], values[1])
    raise ValueError("--clip takes one or two values")


def _cmd_simulate(args) -> int:
    if args.config:
        cfg = sim_config_from_kv(read_kv(args.config))
        cfg = replace(cfg, seed=args.seed)
    else:
        cfg = preset_config(args.preset, n_players=args.players, seed=args.seed,
                            setup=args.setup)
    raw, truth = generate_world(cfg)
    paths = write_world(args.out, raw, truth)
    print(f"wrote world to {args.out}: {len(raw.reports)} reports, "
          f"{len(raw.moderations)} moderations, {len(raw.match_days)} match-days")
    print(f"range {raw.start} .. {raw.end}; "
          f"true ATE dR={truth.true_ate_r:+.4f} dP={truth.true_ate_p:+.4f}")
    print(f"manifest: {paths['manifest']}")
    return EXIT_OK


def _load_raw(args):
    from .ingest import load_event_log

    return load_event_log(
        args.reports, args.moderations, args.matches,
        (args.date_from, args.date_to), args.voice_from,
    )


def _cmd_ingest(args) -> int:
    from .ingest import link_cases, write_cases_csv

    raw = _load_raw(args)
    cases = link_cases(raw)
    n_cov = sum(1 for c in cases if c.covariates is not None)
    print(f"loaded {len(raw.reports)} reports, {len(raw.moderations)} moderations, "
          f"{len(raw.match_days)} match-days")
    print(f"linked cases: {len(cases)} ({n_cov} with pre-window covariates)")
    if args.out:
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        path = outdir / "linked_cases.csv"
        write_cases_csv(path, cases)
        print(f"wrote {path}")
    return EXIT_OK


def _config_echo(args, opts: PipelineOptions) -> dict[str, str]:
    echo = {
        "reports": args.reports,
        "moderations": args.moderations,
        "matches": args.matches,
        "from": args.date_from.isoformat(),
        "to": args.date_to.isoformat(),
        "voice_from": (args.voice_from or args.date_from).isoformat(),
        "setups": ",".join(opts.setups),
        "estimators": ",".join(opts.estimators),
        "base_learner": opts.estimator_config.base_learner,
        "effect_learner": opts.effect_learner,
        "clip": f"{opts.estimator_config.propensity_clip[0]:g},"
                f"{opts.estimator_config.propensity_clip[1]:g}",
        "reps": str(opts.reps),
        "level": str(opts.level),
        "knn_k": str(opts.knn_k),
        "seed": str(opts.seed),
        "trees": str(opts.estimator_config.learner.trees),
        "depth": str(opts.estimator_config.learner.depth),
        "learning_rate": str(opts.estimator_config.learner.learning_rate),
        "l2": str(opts.estimator_config.learner.l2),
        "cross_fit": str(opts.estimator_config.cross_fit).lower(),
        "propensity_weighting": str(
            opts.estimator_config.use_propensity_weighting).lower(),
    }
    return echo


def _options_from_args(args) -> PipelineOptions:
    overrides = read_kv(args.config) if args.config else {}

    def pick(key, current, cast):
        return cast(overrides[key]) if key in overrides else current

    estimators = tuple(
        s.strip() for s in pick("estimators", args.estimator, str).split(",") if s.strip()
    )
    for e in estimators:
        if e not in META_LEARNERS:
            raise ValueError(f"unknown estimator {e!r}")
    clip = _clip_pair(
        [float(v) for v in overrides["clip"].split(",")]
        if "clip" in overrides
        else args.clip
    )
    params = LearnerParams(
        l2=pick("l2", args.l2, float),
        trees=pick("trees", args.trees, int),
        depth=pick("depth", args.depth, int),
        learning_rate=pick("learning_rate", args.learning_rate, float),
    )
    est_cfg = EstimatorConfig(
        base_learner=pick("base_learner", args.base, str),
        effect_learner="linear",
        propensity_clip=clip,
        use_propensity_weighting=pick(
            "propensity_weighting", args.x_weighting,
            lambda s: s.lower() in ("1", "true", "yes"),
        ),
        cross_fit=pick("cross_fit", args.cross_fit,
                       lambda s: s.lower() in ("1", "true", "yes")),
        learner=params,
    )
    setups = (
        ("moderation_vs_none", "quick_vs_delayed")
        if args.setup == "both"
        else (args.setup,)
    )
    return PipelineOptions(
        setups=setups,
        estimators=estimators,
        reps=pick("reps", args.reps, int),
        level=pick("level", args.level, float),
        seed=args.seed,
        knn_k=pick("knn_k", args.knn_k, int),
        jobs=args.jobs,
        effect_learner=pick("effect_learner", args.effect_learner, str),
        estimator_config=est_cfg,
    )


def _cmd_analyze(args) -> int:
    from .cohort import write_cohort_csv

    opts = _options_from_args(args)
    raw = _load_raw(args)
    report = run_pipeline(raw, opts, config_echo=_config_echo(args, opts))
    outdir = Path(args.out)
    paths = write_report_files(outdir, report, level=opts.level)
    for name, table in pipeline_cohorts(raw, opts.setups).items():
        write_cohort_csv(outdir / f"cohort_{name}.csv", table)
    print(render_text_report(report, opts.level))
    print(f"report files in {outdir}")
    if report.all_degenerate:
        return EXIT_DEGENERATE
    return EXIT_OK


def _cmd_report(args) -> int:
    report = report_from_json(Path(args.json).read_text(encoding="utf-8"))
    if args.format == "table":
        print(render_effect_table(report))
    else:
        print(render_text_report(report))
    return EXIT_OK


def _cmd_selftest(args) -> int:
    from . import selfcheck

    if args.list_checks:
        for name in selfcheck.CHECK_NAMES:
            print(name)
        return EXIT_OK
    only = (
        tuple(s.strip() for s in args.only.split(",") if s.strip())
        if args.only
        else None
    )
    results = selfcheck.run_all(only=only, verbose=True)
    return EXIT_OK if all(r.passed for r in results) else EXIT_USAGE


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "simulate":
            return _cmd_simulate(args)
        if args.command == "ingest":
            return _cmd_ingest(args)
        if args.command == "analyze":
            return _cmd_analyze(args)
        if args.command == "report":
            return _cmd_report(args)
        if args.command == "selftest":
            return _cmd_selftest(args)
        parser.error(f"unknown command {args.command!r}")
    except (ParseError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
