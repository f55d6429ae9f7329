"""Command-line entry point: ``cryage <command> [options]``.

Every failure ends with exit status 1 and one ``error: <Kind>: <message>``
line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .errors import ConfigError, CryAgeError

COMMANDS = ("synth", "features", "scatter", "train", "pairs", "diagnose", "report")


def _common(p):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--jobs", type=int, help="worker processes (results do not depend on it)")
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cryage", description="Infant cry age classification toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic cry corpus and its manifest")
    _common(p)
    p.add_argument("--months", help="e.g. 0-6 or 0,4")
    p.add_argument("--per-month", type=int)
    p.add_argument("--acoustic-month", type=int, help="render all clips with this month's acoustics")
    p.add_argument("--pathology", default="healthy")
    p.add_argument("--subject-prefix")

    p = sub.add_parser("features", help="per-clip F0/formant tracks and 64x64 spectrogram images")
    _common(p)
    p.add_argument("--manifest", required=True)

    p = sub.add_parser("scatter", help="F1/F2 group statistics by month")
    _common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--months", help="restrict to these months")

    p = sub.add_parser("train", help="train one classifier and save a checkpoint")
    _common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--pair", help="low,high months; default is the 0-3 vs 4 diagnosis split")

    p = sub.add_parser("pairs", help="binary age-pair cross-validation table")
    _common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--gender-split", action="store_true", help="also run male and female subsets")

    p = sub.add_parser("diagnose", help="train the 0-3 vs 4 month model and score test cohorts")
    _common(p)
    p.add_argument("--train", required=True, help="training manifest")
    p.add_argument("--test", action="append", default=[], metavar="[NAME=]MANIFEST",
                   help="test cohort manifest; repeatable")

    p = sub.add_parser("report", help="re-render figures and summary from report CSVs")
    _common(p)

    sub.add_parser("defaults", help="print the default config file")
    return ap


def _config(args):
    overrides = {"seed": args.seed, "jobs": args.jobs}
    for name in ("months", "per_month"):
        if getattr(args, name, None) is not None:
            overrides[name] = getattr(args, name)
    return cfgmod.load_config(args.config, overrides)


def _out(args, default) -> Path:
    out = Path(args.out if args.out else default)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CryAgeError(f"cannot create {out}: {exc.strerror or exc}") from None
    return out


def _images(cfg, manifest):
    from .experiments.manifest import prepare_images

    return prepare_images(manifest, cfg.cache_dir, cfg.features(), cfg.jobs)


def cmd_synth(args, cfg):
    from .synth import synth_corpus

    out = Path(args.out or cfg.corpus_dir)
    mix = {"male": cfg.male_fraction, "female": 1.0 - cfg.male_fraction}
    manifest = synth_corpus(cfg.month_list(), cfg.per_month, {k: v for k, v in mix.items() if v > 0},
                            cfg.seed, out, cfg.table(), cfg.sample_rate, args.acoustic_month,
                            args.pathology, subject_prefix=args.subject_prefix, jobs=cfg.jobs)
    months = [r.month for r in manifest.rows]
    print(out / "manifest.csv")
    print(f"{len(manifest)} clips: " + ", ".join(f"month {m}: {months.count(m)}" for m in sorted(set(months))))


def cmd_features(args, cfg):
    from .audio_io import load_wav, resample
    from .experiments.manifest import load_manifest
    from .features import (SpectrogramImage, estimate_f0, estimate_formants, write_formant_csv, write_pgm,
                           write_pitch_csv)

    manifest = load_manifest(args.manifest)
    out = _out(args, "features")
    (out / "tracks").mkdir(exist_ok=True)
    (out / "images").mkdir(exist_ok=True)
    data = _images(cfg, manifest)
    rows = []
    for row, px in zip(manifest.rows, data.images):
        stem = Path(row.path).stem
        clip = resample(load_wav(manifest.resolve(row)), cfg.sample_rate)
        pitch = estimate_f0(clip)
        form = estimate_formants(clip)
        write_pitch_csv(out / "tracks" / f"{stem}_f0.csv", pitch)
        write_formant_csv(out / "tracks" / f"{stem}_formants.csv", form)
        write_pgm(out / "images" / f"{stem}.pgm", SpectrogramImage(px))
        f1, f2 = form.median()
        rows.append((row.path, row.month, row.gender, f"{pitch.median_f0():.3f}", f"{np.mean(pitch.voiced):.4f}",
                     f"{f1:.3f}", f"{f2:.3f}"))
    with open(out / "features.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "month", "gender", "median_f0_hz", "voiced_fraction", "median_f1_hz", "median_f2_hz"])
        w.writerows(rows)
    print(out / "features.csv")
    print(f"{len(rows)} clips ({data.computed} images computed, {data.cached} from cache)")


def cmd_scatter(args, cfg):
    from .audio_io import load_wav, resample
    from .experiments.manifest import load_manifest
    from .features import estimate_formants, scatter_stats

    manifest = load_manifest(args.manifest)
    if args.months:
        keep = set(cfgmod.parse_months(args.months))
        manifest = manifest.subset(lambda r: r.month in keep)
    out = _out(args, cfg.report_dir)
    tracks = []
    for row in sorted(manifest.rows, key=lambda r: r.month):
        clip = resample(load_wav(manifest.resolve(row)), cfg.sample_rate)
        tracks.append((row.month, estimate_formants(clip)))
    stats = scatter_stats(tracks)
    with open(out / "scatter.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["month", "n_frames", "f1_mean", "f1_sd", "f2_mean", "f2_sd"])
        for month, st in stats.items():
            w.writerow([month, st.n, f"{st.f1_mean:.3f}", f"{st.f1_sd:.3f}", f"{st.f2_mean:.3f}", f"{st.f2_sd:.3f}"])
    with open(out / "scatter_points.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["month", "f1_hz", "f2_hz"])
        for month, st in stats.items():
            w.writerows((month, f"{a:.3f}", f"{b:.3f}") for a, b in st.points)
    print(out / "scatter.csv")
    if cfg.figures:
        from .experiments.plotting import plot_scatter

        print(plot_scatter(out / "scatter.png", {f"month {m}": st for m, st in stats.items()}))


def cmd_train(args, cfg):
    from .cnn.checkpoint import save_checkpoint
    from .cnn.model import cry_cnn
    from .cnn.training import train, write_history_csv
    from .experiments.manifest import load_manifest
    from .experiments.protocols import AgePairSpec, pair_data, train_diagnosis_model

    data = _images(cfg, load_manifest(args.manifest))
    out = _out(args, cfg.report_dir)
    if args.pair:
        try:
            lo, hi = (int(x) for x in args.pair.replace("-", ",").split(","))
        except ValueError:
            raise ConfigError(f"--pair needs two months like 0,4, got {args.pair!r}") from None
        sub, labels = pair_data(AgePairSpec(lo, hi), data)
        model = cry_cnn(2, rng_seed=cfg.seed, dtype=np.float32)
        history = train(model, sub.images[..., None], labels, cfg.train_config()).history
    else:
        dm = train_diagnosis_model(data, cfg.protocol())
        model, history = dm.model, dm.history
    save_checkpoint(out / "model.npz", model)
    write_history_csv(out / "history.csv", history)
    print(out / "model.npz")
    print(f"{len(history)} epochs, final loss {history[-1].loss:.4f}, train accuracy {history[-1].train_acc:.4f}")
    if cfg.figures:
        from .experiments.plotting import plot_history

        print(plot_history(out / "history.png", history))


def cmd_pairs(args, cfg):
    from .experiments.manifest import load_manifest
    from .experiments.protocols import make_pairs, run_gender_split, run_pair_table
    from .experiments.report import emit_report

    data = _images(cfg, load_manifest(args.manifest))
    present = sorted(set(data.months.tolist()))
    pairs = make_pairs(present, cfg.pair_mode)
    table = run_pair_table(pairs, data, cfg.protocol())
    gender = run_gender_split(pairs, data, cfg.protocol()) if args.gender_split else None
    out = _out(args, cfg.report_dir)
    for path in emit_report(out, table, gender=gender, figures=cfg.figures):
        print(path)


def _cohort_arg(text):
    name, sep, path = text.partition("=")
    return (name, path) if sep else (None, text)


def cmd_diagnose(args, cfg):
    from .experiments.manifest import load_manifest
    from .experiments.protocols import run_diagnosis, train_diagnosis_model
    from .experiments.report import emit_report

    if not args.test:
        raise ConfigError("diagnose needs at least one --test manifest")
    train_data = _images(cfg, load_manifest(args.train))
    cohorts = {}
    for text in args.test:
        name, path = _cohort_arg(text)
        manifest = load_manifest(path)
        if name is None:
            kinds = sorted({r.pathology for r in manifest.rows}) or ["empty"]
            name = "+".join(kinds)
        cohorts[name] = _images(cfg, manifest)
    dm = train_diagnosis_model(train_data, cfg.protocol())
    result = run_diagnosis(dm, cohorts)
    out = _out(args, cfg.report_dir)
    for path in emit_report(out, cohorts=result, figures=cfg.figures):
        print(path)


def cmd_report(args, cfg):
    from .experiments.report import read_pairs_csv, read_table2_csv, render_figures, summary_text

    out = Path(args.out or cfg.report_dir)
    pairs = read_pairs_csv(out / "pairs.csv") if (out / "pairs.csv").exists() else None
    cohorts = read_table2_csv(out / "table2.csv") if (out / "table2.csv").exists() else None
    gender = None
    if (out / "male_pairs.csv").exists() and (out / "female_pairs.csv").exists():
        gender = (read_pairs_csv(out / "male_pairs.csv"), read_pairs_csv(out / "female_pairs.csv"))
    if pairs is None and cohorts is None and gender is None:
        raise CryAgeError(f"no pairs.csv or table2.csv in {out}")
    text = summary_text(pairs, cohorts, gender)
    (out / "summary.txt").write_text(text)
    print(text, end="")
    if cfg.figures:
        for path in render_figures(out, pairs, cohorts, gender):
            print(path)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "defaults":
        print(cfgmod.render_defaults(), end="")
        return 0
    try:
        cfg = _config(args)
        globals()[f"cmd_{args.command}"](args, cfg)
    except (CryAgeError, OSError, ValueError) as exc:
        msg = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
