import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cryage.errors import ClassTooSmall, MalformedManifest, MissingFile, MissingGender, MissingMonth, SubjectLeakage
from cryage.experiments.manifest import DatasetManifest, ImageSet, ManifestRow, load_manifest, prepare_images
from cryage.experiments.protocols import (REFERENCE_TABLE1, REFERENCE_TABLE2, AgePairSpec, CohortResult, DiagnosisModel,
                                          PairResultTable, ProtocolConfig, RunResult, diagnosis_training_set,
                                          kfold_split, make_pairs, run_cv, run_diagnosis, run_gender_split,
                                          stratified_counts)
from cryage.experiments.report import emit_report, read_pair_means, read_pairs_csv, read_table2_csv
from cryage.cnn.model import cry_cnn
from cryage.cnn.training import TrainConfig
from cryage.synth import synth_corpus

HEADER = "path,month,gender,reason,pathology,subject_id,f0_hz,f1_hz,f2_hz\n"


def fake_set(months, genders=None, prefix="s"):
    genders = genders or ["female"] * len(months)
    rows = [ManifestRow(f"{prefix}{i}.wav", m, g, "synthetic", "healthy", f"{prefix}-{i // 5}")
            for i, (m, g) in enumerate(zip(months, genders))]
    return ImageSet(np.zeros((len(rows), 64, 64), np.float32), rows)


# manifests and image cache

@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    synth_corpus(range(7), 100, rng_seed=3, out_dir=out)
    return out


def test_700_rows_cached(corpus, tmp_path):
    m = load_manifest(corpus / "manifest.csv")
    assert len(m) == 700
    first = prepare_images(m, tmp_path / "cache")
    assert first.images.shape == (700, 64, 64) and first.computed == 700
    assert len(list((tmp_path / "cache").glob("*.bin"))) == 700
    again = prepare_images(m, tmp_path / "cache")
    assert again.computed == 0 and again.cached == 700
    assert np.array_equal(first.images, again.images)


def test_manifest_month_out_of_range(tmp_path):
    (tmp_path / "a.wav").write_bytes(b"")
    (tmp_path / "m.csv").write_text(HEADER + "a.wav,2,male,hungry,healthy,s1,,,\na.wav,9,male,hungry,healthy,s1,,,\n")
    with pytest.raises(MalformedManifest, match="line 3"):
        load_manifest(tmp_path / "m.csv")


@pytest.mark.parametrize("row,needle", [
    ("a.wav,2,other,hungry,healthy,s1,,,", "gender"),
    ("a.wav,2,male,bored,healthy,s1,,,", "reason"),
    ("a.wav,x,male,hungry,healthy,s1,,,", "month"),
    ("a.wav,2,male,hungry,healthy,s1,abc,,", "f0_hz"),
])
def test_manifest_bad_fields(tmp_path, row, needle):
    (tmp_path / "m.csv").write_text(HEADER + row + "\n")
    with pytest.raises(MalformedManifest, match=needle):
        load_manifest(tmp_path / "m.csv", check_files=False)


def test_manifest_duplicate_and_missing(tmp_path):
    (tmp_path / "m.csv").write_text(HEADER + "a.wav,1,male,hungry,healthy,s,,,\na.wav,1,male,hungry,healthy,s,,,\n")
    with pytest.raises(MalformedManifest, match="duplicate"):
        load_manifest(tmp_path / "m.csv", check_files=False)
    (tmp_path / "m.csv").write_text(HEADER + "a.wav,1,male,hungry,healthy,s,,,\nb.wav,1,male,hungry,healthy,s,,,\n")
    with pytest.raises(MissingFile) as info:
        load_manifest(tmp_path / "m.csv")
    assert "a.wav" in str(info.value) and "b.wav" in str(info.value)
    with pytest.raises(MissingFile):
        load_manifest(tmp_path / "nothing.csv")


def test_manifest_save_round_trip(tmp_path):
    rows = [ManifestRow("x.wav", 3, "female", "pain", "deaf", "k1", 441.5, None, 2000.25)]
    DatasetManifest(rows).save(tmp_path / "m.csv")
    assert load_manifest(tmp_path / "m.csv", check_files=False).rows == rows


# pairs and folds

def test_anchored_pairs():
    labels = [p.label for p in make_pairs(range(7))]
    assert labels == ["01", "02", "03", "04", "05", "06", "12", "13", "14", "15", "16", "23", "24", "25", "26"]
    assert make_pairs([0, 1]) == [AgePairSpec(0, 1)]
    assert len(make_pairs(range(7), "full")) == 21


def test_pair_spec_validation():
    with pytest.raises(ValueError):
        AgePairSpec(3, 3)
    with pytest.raises(ValueError):
        AgePairSpec(2, 8)


def test_kfold_3000_clips():
    y = np.repeat([0, 1], 1500)
    folds = kfold_split(y, 5, 0)
    for f in range(5):
        _, te = folds.split(f)
        assert len(te) == 600 and np.sum(y[te] == 0) == 300


def test_kfold_small_and_too_small():
    assert kfold_split(np.zeros(10), 5, 1).sizes().tolist() == [2] * 5
    with pytest.raises(ClassTooSmall):
        kfold_split(np.array([0] * 10 + [1] * 3), 5, 0)


@given(st.lists(st.integers(1, 300), min_size=1, max_size=6), st.integers(2, 10), st.integers(0, 2 ** 31))
def test_stratified_counts_margins_and_rounding(class_sizes, k, seed):
    n_c = np.array(class_sizes)
    counts = stratified_counts(n_c, k, np.random.default_rng(seed))
    sizes = counts.sum(0)
    assert np.array_equal(counts.sum(1), n_c) and sizes.max() - sizes.min() <= 1
    assert np.all(np.abs(counts - np.outer(n_c, sizes) / n_c.sum()) < 1)
    assert np.all(np.abs(counts - n_c[:, None] / k) < 1)


def test_kfold_deterministic():
    y = np.random.default_rng(0).integers(0, 3, 100)
    assert np.array_equal(kfold_split(y, 5, 4).fold, kfold_split(y, 5, 4).fold)
    assert not np.array_equal(kfold_split(y, 5, 4).fold, kfold_split(y, 5, 5).fold)


def test_kfold_groups_keep_subjects_together():
    y = np.repeat([0, 1], 50)
    groups = np.array([f"g{i // 5}" for i in range(100)])
    folds = kfold_split(y, 5, 0, groups)
    for g in np.unique(groups):
        assert len(set(folds.fold[groups == g])) == 1
    assert folds.sizes().tolist() == [20] * 5


def test_run_result_mean():
    r = RunResult("x", {(0, 0): 0.5, (0, 1): 0.75, (1, 0): 1.0, (1, 1): 0.25}, 2, 2)
    assert abs(r.mean - 0.625) <= 1e-12
    assert r.run_means().tolist() == [0.625, 0.625]


def test_run_cv_cardinality():
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 1, (20, 64, 64)).astype(np.float32)
    y = np.arange(20) % 2
    cfg = ProtocolConfig(TrainConfig(epochs=1), n_runs=1, k=5)
    r = run_cv(x, y, cfg)
    assert sorted(r.accuracies) == [(0, f) for f in range(5)]
    assert all(0 <= a <= 1 for a in r.accuracies.values())


def test_empty_pair_table():
    from cryage.experiments.protocols import run_pair_table

    assert len(run_pair_table([], fake_set([0, 1]))) == 0


def test_gender_split_requires_both():
    data = fake_set([0] * 10 + [4] * 10)
    with pytest.raises(MissingGender):
        run_gender_split([AgePairSpec(0, 4)], data)


# diagnosis

def test_diagnosis_balancing_full_and_desk():
    months = sum(([m] * 375 for m in range(4)), []) + [4] * 1500
    _, labels = diagnosis_training_set(fake_set(months))
    assert np.sum(labels == 0) == np.sum(labels == 1) == 1500
    months = sum(([m] * 60 for m in range(4)), []) + [4] * 240
    idx, labels = diagnosis_training_set(fake_set(months))
    assert np.sum(labels == 0) == np.sum(labels == 1) == 240
    assert len(set(idx.tolist())) == 480
    picked = np.array(months)[idx[labels == 0]]
    assert np.bincount(picked).tolist() == [60, 60, 60, 60]


def test_diagnosis_missing_month():
    months = [0] * 10 + [1] * 10 + [2] * 10 + [4] * 40
    with pytest.raises(MissingMonth, match="3"):
        diagnosis_training_set(fake_set(months))


def test_diagnosis_leakage_and_empty_cohort():
    dm = DiagnosisModel(cry_cnn(2, 0, np.float32), frozenset({"s-0"}), 1)
    with pytest.raises(SubjectLeakage):
        run_diagnosis(dm, {"healthy": fake_set([4, 4])})
    res = run_diagnosis(dm, {"empty": fake_set([], prefix="t"), "ok": fake_set([4, 0], prefix="t")})
    assert res["empty"].n == 0 and res["empty"].fraction_younger is None
    assert res["ok"].n == 2 and 0 <= res["ok"].fraction_younger <= 1


# reports

def test_reference_fixtures():
    assert REFERENCE_TABLE1[(0, 1)] == 88.69 and REFERENCE_TABLE1[(0, 4)] == 96.27 and REFERENCE_TABLE1[(2, 6)] == 90.22
    assert len(REFERENCE_TABLE1) == 15
    assert REFERENCE_TABLE2 == {"healthy": 79.20, "asphyxia": 84.80, "deaf": 91.21}


def fake_table():
    rng = np.random.default_rng(1)
    table = PairResultTable()
    for p in make_pairs(range(7)):
        table.results[p] = RunResult(p.label, {(r, f): float(rng.uniform(0.5, 1)) for r in range(2) for f in range(3)},
                                     2, 3)
    return table


def test_report_pairs_round_trip(tmp_path):
    table = fake_table()
    paths = emit_report(tmp_path, table)
    with open(tmp_path / "pairs.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 15
    back = read_pairs_csv(tmp_path / "pairs.csv")
    for p, r in table.results.items():
        assert back.results[p].accuracies == r.accuracies
        assert read_pair_means(tmp_path / "pairs.csv")[(p.low_month, p.high_month)] == r.mean
    assert (tmp_path / "fig7.png").exists() and tmp_path / "summary.txt" in paths
    wide = (tmp_path / "table1.csv").read_text().splitlines()
    assert wide[0] == "comparison,0-month,1-month,2-month"
    assert wide[1].startswith("1-month,") and wide[1].endswith(",--,--")
    assert len((tmp_path / "fig7_lines.csv").read_text().splitlines()) == 16


def test_report_cohorts(tmp_path):
    cohorts = {
        "healthy": CohortResult("healthy", 10, 0.3, 0.8, [("a.wav", 4, 1, 0.9)] * 10),
        "synthetic-delayed": CohortResult("synthetic-delayed", 5, 0.8, 0.8),
        "deaf": CohortResult("deaf", 0, None, None),
    }
    emit_report(tmp_path, cohorts=cohorts, figures=False)
    back = read_table2_csv(tmp_path / "table2.csv")
    assert len(back) == 3
    assert back["healthy"].fraction_correct == 0.8 and back["deaf"].fraction_younger is None
    assert "deaf: no clips" in (tmp_path / "summary.txt").read_text()


def test_report_needs_content(tmp_path):
    with pytest.raises(ValueError):
        emit_report(tmp_path)


def test_report_figures_deterministic(tmp_path):
    table = fake_table()
    emit_report(tmp_path / "a", table)
    emit_report(tmp_path / "b", table)
    for name in ("pairs.csv", "runs.csv", "fig7.png", "summary.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
