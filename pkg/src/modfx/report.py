"""Rendering of analysis reports as text, CSV and JSON.

Renderers format fields already present in the report; the only arithmetic
here is number formatting, so the text and CSV views always agree.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict
from pathlib import Path

from .pipeline import (
    AnalysisReport,
    BalanceRow,
    EffectRow,
    ExclusionRow,
    HeterogeneityRow,
)

DEGENERATE_CELL = "— (degenerate)"


def format_effect_cell(relative_pct: float, ci_low_pct: float, ci_high_pct: float,
                       level: float = 0.95) -> str:
    """E.g. -70.33% (95% CI: -71.25%, -69.41%)."""
    if not math.isfinite(relative_pct):
        return DEGENERATE_CELL
    pct = f"{relative_pct:.2f}%"
    if math.isfinite(ci_low_pct) and math.isfinite(ci_high_pct):
        return (
            f"{pct} ({level * 100:.0f}% CI: {ci_low_pct:.2f}%, {ci_high_pct:.2f}%)"
        )
    return pct


def _num(value: float) -> str:
    return format(value, ".6g") if math.isfinite(value) else ""


def render_effect_table(report: AnalysisReport, level: float = 0.95) -> str:
    lines = [
        "setup | offense | stratum | outcome | estimator | effect | n_t | n_c"
    ]
    for e in report.effects:
        cell = (
            DEGENERATE_CELL
            if e.status != "ok"
            else format_effect_cell(e.ate_relative, e.ci_low_relative,
                                    e.ci_high_relative, level)
        )
        lines.append(
            f"{e.setup} | {e.offense} | {e.stratum} | {e.outcome} | "
            f"{e.estimator} | {cell} | {e.n_treated} | {e.n_control}"
        )
    return "\n".join(lines)


def effect_csv_rows(report: AnalysisReport) -> list[list[str]]:
    rows = [[
        "setup", "offense", "stratum", "outcome", "estimator", "status", "detail",
        "ate", "ate_relative_pct", "ci_low", "ci_high",
        "ci_low_relative_pct", "ci_high_relative_pct",
        "n_treated", "n_control", "bootstrap_reps", "control_baseline_mean",
    ]]
    for e in report.effects:
        rows.append([
            e.setup, e.offense, e.stratum, e.outcome, e.estimator, e.status,
            e.detail, _num(e.ate), _num(e.ate_relative), _num(e.ci_low),
            _num(e.ci_high), _num(e.ci_low_relative), _num(e.ci_high_relative),
            str(e.n_treated), str(e.n_control), str(e.bootstrap_reps),
            _num(e.control_baseline_mean),
        ])
    return rows


def balance_csv_rows(report: AnalysisReport) -> list[list[str]]:
    rows = [[
        "setup", "offense", "stratum", "feature",
        "mean_treated", "mean_control", "smd_before", "smd_after",
    ]]
    for b in report.balance:
        rows.append([
            b.setup, b.offense, b.stratum, b.feature,
            _num(b.mean_treated), _num(b.mean_control),
            _num(b.smd_before), _num(b.smd_after),
        ])
    return rows


def heterogeneity_csv_rows(report: AnalysisReport) -> list[list[str]]:
    rows = [["setup", "offense", "stratum", "outcome", "indicator",
             "pearson_r", "n_used"]]
    for h in report.heterogeneity:
        rows.append([
            h.setup, h.offense, h.stratum, h.outcome, h.indicator,
            _num(h.pearson_r), str(h.n_used),
        ])
    return rows


def render_text_report(report: AnalysisReport, level: float = 0.95) -> str:
    out = io.StringIO()
    out.write("moderation effect analysis\n")
    out.write("==========================\n\n")
    out.write(f"seed: {report.seed}\n")
    out.write("config:\n")
    for key, value in report.config.items():
        out.write(f"  {key} = {value}\n")
    out.write("input counts:\n")
    for key in sorted(report.counts):
        out.write(f"  {key} = {report.counts[key]}\n")

    out.write("\neffects\n-------\n")
    out.write(render_effect_table(report, level))
    out.write("\n")

    if report.exclusions:
        out.write("\nexclusions\n----------\n")
        for x in report.exclusions:
            out.write(
                f"{x.setup} | {x.offense} | {x.stratum} | {x.reason} = {x.count}\n"
            )

    if report.balance:
        out.write("\ncovariate balance (mean |SMD| before -> after matching)\n")
        out.write("--------------------------------------------------------\n")
        seen = {}
        for b in report.balance:
            key = (b.setup, b.offense, b.stratum)
            before, after, count = seen.get(key, (0.0, 0.0, 0))
            if math.isfinite(b.smd_before) and math.isfinite(b.smd_after):
                seen[key] = (before + abs(b.smd_before), after + abs(b.smd_after),
                             count + 1)
        for key in sorted(seen):
            before, after, count = seen[key]
            if count:
                out.write(
                    f"{key[0]} | {key[1]} | {key[2]} | "
                    f"{before / count:.4f} -> {after / count:.4f}\n"
                )

    if report.heterogeneity:
        out.write("\nheterogeneity (Pearson r of CATE vs skill indicator)\n")
        out.write("----------------------------------------------------\n")
        for h in report.heterogeneity:
            r = f"{h.pearson_r:.3f}" if math.isfinite(h.pearson_r) else "n/a"
            out.write(
                f"{h.setup} | {h.offense} | {h.stratum} | {h.outcome} | "
                f"{h.indicator} | r={r} | n={h.n_used}\n"
            )
    return out.getvalue()


def report_to_json(report: AnalysisReport) -> str:
    payload = {
        "config": report.config,
        "seed": report.seed,
        "counts": report.counts,
        "effects": [asdict(e) for e in report.effects],
        "balance": [asdict(b) for b in report.balance],
        "heterogeneity": [asdict(h) for h in report.heterogeneity],
        "exclusions": [asdict(x) for x in report.exclusions],
    }

    def clean(obj):
        if isinstance(obj, float) and not math.isfinite(obj):
            return None
        if isinstance(obj, dict):
            return {k: clean(v) for k, v in obj.items()}
        if isinstance(obj, list):
            return [clean(v) for v in obj]
        return obj

    return json.dumps(clean(payload), indent=2, sort_keys=True)


def report_from_json(text: str) -> AnalysisReport:
    payload = json.loads(text)

    def restore(cls, items):
        def fix(d):
            return {
                k: (math.nan if v is None and k not in ("detail",) else v)
                for k, v in d.items()
            }

        return tuple(cls(**fix(d)) for d in items)

    return AnalysisReport(
        config=payload["config"],
        seed=payload["seed"],
        counts=payload["counts"],
        effects=restore(EffectRow, payload["effects"]),
        balance=restore(BalanceRow, payload["balance"]),
        heterogeneity=restore(HeterogeneityRow, payload["heterogeneity"]),
        exclusions=restore(ExclusionRow, payload["exclusions"]),
    )


def write_csv(path, rows: list[list[str]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh).writerows(rows)


def write_report_files(outdir, report: AnalysisReport, level: float = 0.95) -> dict:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {
        "text": outdir / "report.txt",
        "csv": outdir / "report.csv",
        "balance": outdir / "balance.csv",
        "heterogeneity": outdir / "heterogeneity.csv",
        "json": outdir / "report.json",
    }
    paths["text"].write_text(render_text_report(report, level), encoding="utf-8")
    write_csv(paths["csv"], effect_csv_rows(report))
    write_csv(paths["balance"], balance_csv_rows(report))
    write_csv(paths["heterogeneity"], heterogeneity_csv_rows(report))
    paths["json"].write_text(report_to_json(report), encoding="utf-8")
    return {k: str(v) for k, v in paths.items()}
