"""CSV tables, line-chart data, figures and a text summary for experiment results."""

from __future__ import annotations

import csv
from pathlib import Path

from ..errors import IoError
from .protocols import REFERENCE_TABLE1, REFERENCE_TABLE2, AgePairSpec, CohortResult, PairResultTable, RunResult

PAIR_FIELDS = ("low_month", "high_month", "pair", "accuracy", "accuracy_pct", "n_runs", "k", "reference_pct")
RUN_FIELDS = ("pair", "run", "fold", "accuracy")
LINE_FIELDS = ("anchor_month", "comparison_month", "accuracy")
COHORT_FIELDS = ("cohort", "n", "fraction_younger", "fraction_correct", "reference_pct")
VERDICT_FIELDS = ("cohort", "path", "month", "predicted_class", "p_older")


def _num(v):
    return "" if v is None else repr(float(v))


def _pct(v):
    return "" if v is None else f"{100.0 * v:.2f}"


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_pair_tables(out: Path, table: PairResultTable, prefix: str = "") -> list:
    pairs = sorted(table.results)
    paths = [out / f"{prefix}pairs.csv", out / f"{prefix}runs.csv", out / f"{prefix}fig7_lines.csv",
             out / f"{prefix}table1.csv"]
    _write_csv(paths[0], PAIR_FIELDS, [
        (p.low_month, p.high_month, p.label, _num(table.results[p].mean), _pct(table.results[p].mean),
         table.results[p].n_runs, table.results[p].k,
         "" if (p.low_month, p.high_month) not in REFERENCE_TABLE1 else f"{REFERENCE_TABLE1[(p.low_month, p.high_month)]:.2f}")
        for p in pairs])
    _write_csv(paths[1], RUN_FIELDS, [
        (p.label, run, fold, _num(acc))
        for p in pairs for (run, fold), acc in sorted(table.results[p].accuracies.items())])
    _write_csv(paths[2], LINE_FIELDS, [(a, b, _num(acc)) for a, b, acc in table.line_data()])
    # wide layout: one row per comparison month, one column per anchor month
    anchors = sorted({p.low_month for p in pairs})
    comps = sorted({p.high_month for p in pairs})
    wide = []
    for b in comps:
        row = [f"{b}-month"]
        for a in anchors:
            r = table.results.get(AgePairSpec(a, b)) if a < b else None
            row.append(_pct(r.mean) if r is not None else "--")
        wide.append(row)
    _write_csv(paths[3], ["comparison"] + [f"{a}-month" for a in anchors], wide)
    return paths


def write_diagnosis_tables(out: Path, cohorts: dict) -> list:
    paths = [out / "table2.csv", out / "verdicts.csv"]
    _write_csv(paths[0], COHORT_FIELDS, [
        (c.name, c.n, _num(c.fraction_younger), _num(c.fraction_correct),
         f"{REFERENCE_TABLE2[c.name]:.2f}" if c.name in REFERENCE_TABLE2 else "")
        for c in cohorts.values()])
    _write_csv(paths[1], VERDICT_FIELDS, [
        (c.name, path, month, pred, _num(p1))
        for c in cohorts.values() for path, month, pred, p1 in c.verdicts])
    return paths


def read_pairs_csv(path) -> PairResultTable:
    """Rebuild a PairResultTable from ``pairs.csv`` and its sibling ``runs.csv``."""
    path = Path(path)
    runs_path = path.with_name(path.name.replace("pairs.csv", "runs.csv"))
    table = PairResultTable()
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            pair = AgePairSpec(int(rec["low_month"]), int(rec["high_month"]))
            table.results[pair] = RunResult(pair.label, {}, int(rec["n_runs"]), int(rec["k"]))
    if runs_path.exists():
        by_label = {p.label: r for p, r in table.results.items()}
        with open(runs_path, newline="") as fh:
            for rec in csv.DictReader(fh):
                by_label[rec["pair"]].accuracies[(int(rec["run"]), int(rec["fold"]))] = float(rec["accuracy"])
    return table


def read_pair_means(path) -> dict:
    with open(path, newline="") as fh:
        return {(int(r["low_month"]), int(r["high_month"])): float(r["accuracy"]) for r in csv.DictReader(fh)}


def read_table2_csv(path) -> dict:
    out = {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            fy = float(r["fraction_younger"]) if r["fraction_younger"] else None
            fc = float(r["fraction_correct"]) if r["fraction_correct"] else None
            out[r["cohort"]] = CohortResult(r["cohort"], int(r["n"]), fy, fc)
    return out


def summary_text(pairs: PairResultTable | None = None, cohorts: dict | None = None, gender=None) -> str:
    lines = []
    if pairs is not None and len(pairs):
        lines.append("Binary age pairs (mean accuracy over runs x folds)")
        for p, r in sorted(pairs.results.items()):
            ref = REFERENCE_TABLE1.get((p.low_month, p.high_month))
            ref_txt = f"   reference {ref:.2f}%" if ref is not None else ""
            lines.append(f"  {p.label}: {100 * r.mean:6.2f}%  ({len(r.accuracies)} folds){ref_txt}")
        lines.append("")
    if gender is not None:
        male, female = gender
        lines.append("Gender split (male / female)")
        for p in sorted(male.results):
            lines.append(f"  {p.label}: {100 * male.results[p].mean:6.2f}% / {100 * female.results[p].mean:6.2f}%")
        lines.append("")
    if cohorts:
        lines.append("Diagnosis cohorts (judged younger than 4 months / judged correctly)")
        for c in cohorts.values():
            if c.n == 0:
                lines.append(f"  {c.name}: no clips")
            else:
                lines.append(f"  {c.name} (n={c.n}): {100 * c.fraction_younger:6.2f}% / {100 * c.fraction_correct:6.2f}%")
        lines.append("")
    return "\n".join(lines)


def emit_report(out_dir, pairs: PairResultTable | None = None, cohorts: dict | None = None,
                gender=None, figures: bool = True) -> list:
    """Write every available table plus ``summary.txt`` (and PNG figures); return the paths."""
    if not ((pairs is not None and len(pairs)) or cohorts or gender is not None):
        raise ValueError("nothing to report")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        written = []
        if pairs is not None and len(pairs):
            written += write_pair_tables(out, pairs)
        if gender is not None:
            written += write_pair_tables(out, gender[0], "male_")
            written += write_pair_tables(out, gender[1], "female_")
        if cohorts:
            written += write_diagnosis_tables(out, cohorts)
        (out / "summary.txt").write_text(summary_text(pairs, cohorts, gender))
        written.append(out / "summary.txt")
        if figures:
            written += render_figures(out, pairs, cohorts, gender)
    except OSError as exc:
        raise IoError(f"cannot write report to {out}: {exc.strerror or exc}") from exc
    return written


def render_figures(out: Path, pairs=None, cohorts=None, gender=None) -> list:
    from . import plotting

    paths = []
    if pairs is not None and len(pairs):
        paths.append(plotting.plot_pair_lines(out / "fig7.png", pairs.line_data()))
    if gender is not None:
        paths.append(plotting.plot_gender_lines(out / "gender.png", gender[0].line_data(), gender[1].line_data()))
    if cohorts:
        paths.append(plotting.plot_diagnosis(
            out / "diagnosis.png", [(c.name, c.n, c.fraction_younger, c.fraction_correct) for c in cohorts.values()]))
    return paths
