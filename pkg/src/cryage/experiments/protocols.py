"""Binary age-pair cross-validation, gender-split runs and the 0-3 vs 4 month diagnosis model."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from itertools import combinations

import numpy as np

from ..cnn.model import Model, cry_cnn
from ..cnn.training import TrainConfig, predict_proba, train
from ..errors import ClassTooSmall, MissingGender, MissingMonth, SubjectLeakage
from ..synth import derive_seed
from .manifest import ImageSet

ANCHOR_MONTHS = (0, 1, 2)
DIAGNOSIS_YOUNGER = (0, 1, 2, 3)
DIAGNOSIS_OLDER = 4

# published reference values, kept for report formatting checks only
REFERENCE_TABLE1 = {
    (0, 1): 88.69, (0, 2): 93.47, (0, 3): 95.91, (0, 4): 96.27, (0, 5): 96.07, (0, 6): 95.70,
    (1, 2): 88.16, (1, 3): 89.98, (1, 4): 92.33, (1, 5): 93.68, (1, 6): 92.58,
    (2, 3): 85.16, (2, 4): 90.14, (2, 5): 90.01, (2, 6): 90.22,
}
REFERENCE_TABLE2 = {"healthy": 79.20, "asphyxia": 84.80, "deaf": 91.21}
REFERENCE_TABLE2_N = {"healthy": 1100, "asphyxia": 879, "deaf": 340}


@dataclass(frozen=True, order=True)
class AgePairSpec:
    low_month: int
    high_month: int

    def __post_init__(self):
        if not (0 <= self.low_month <= 6 and 0 <= self.high_month <= 6):
            raise ValueError(f"pair months must lie in [0, 6], got {self.low_month}, {self.high_month}")
        if self.low_month >= self.high_month:
            raise ValueError(f"low month must be below high month, got {self.low_month}, {self.high_month}")

    @property
    def label(self) -> str:
        return f"{self.low_month}{self.high_month}"


def make_pairs(months, mode: str = "anchored"):
    """All (a, b) with a < b; ``anchored`` mode keeps only anchors 0, 1 and 2."""
    months = sorted(set(int(m) for m in months))
    if mode not in ("anchored", "full"):
        raise ValueError(f"unknown pair mode {mode!r}")
    pairs = [AgePairSpec(a, b) for a, b in combinations(months, 2)]
    if mode == "anchored":
        pairs = [p for p in pairs if p.low_month in ANCHOR_MONTHS]
    return pairs


@dataclass
class FoldAssignment:
    k: int
    fold: np.ndarray  # fold index per sample

    def split(self, f: int):
        """(train indices, test indices) for held-out fold ``f``."""
        return np.flatnonzero(self.fold != f), np.flatnonzero(self.fold == f)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.fold, minlength=self.k)


def _round_cells(lo, hi, row_sums, col_sums, rng):
    """Integer matrix with lo <= a <= hi (hi - lo in {0, 1}) and the given margins, or None."""
    from scipy.sparse import csr_matrix
    from scipy.sparse.csgraph import maximum_flow

    row_need, col_need = row_sums - lo.sum(1), col_sums - lo.sum(0)
    if row_need.min() < 0 or col_need.min() < 0 or row_need.sum() != col_need.sum():
        return None
    m, k = lo.shape
    # random node order so ties in the flow solution are not biased to low indices
    rows, cols = rng.permutation(m), rng.permutation(k)
    sink = m + k + 1
    cap = np.zeros((sink + 1, sink + 1), dtype=np.int32)
    cap[0, 1 : m + 1] = row_need[rows]
    cap[1 : m + 1, m + 1 : m + k + 1] = (hi - lo)[np.ix_(rows, cols)]
    cap[m + 1 : m + k + 1, sink] = col_need[cols]
    res = maximum_flow(csr_matrix(cap), 0, sink)
    if res.flow_value != row_need.sum():
        return None
    up = np.zeros_like(lo)
    up[np.ix_(rows, cols)] = res.flow.toarray()[1 : m + 1, m + 1 : m + k + 1]
    return lo + up


def stratified_counts(class_sizes, k: int, rng) -> np.ndarray:
    """[n_classes, k] test-fold counts with fixed row sums (class sizes).

    Fold sizes differ by at most one (which folds get the extra sample is
    random) and every cell is floor or ceil of fold_size * n_c / n. Choosing
    which cells round up is a 0/1 transport problem with an integral
    fractional solution, so a bipartite max-flow always finds one. Where
    possible cells are also kept to floor/ceil of n_c / k, so each class is
    spread over folds as evenly as in a per-class deal.
    """
    n_c = np.asarray(class_sizes, dtype=np.int64)
    n = int(n_c.sum())
    sizes = np.full(k, n // k, dtype=np.int64)
    sizes[rng.permutation(k)[: n % k]] += 1
    prod = np.outer(n_c, sizes)
    lo, hi = prod // n, -(-prod // n)
    per_class = np.repeat(n_c[:, None], k, axis=1)
    both = _round_cells(np.maximum(lo, per_class // k), np.minimum(hi, -(-per_class // k)), n_c, sizes, rng)
    if both is not None:
        return both
    counts = _round_cells(lo, hi, n_c, sizes, rng)
    if counts is None:
        raise RuntimeError("stratified rounding found no feasible assignment")
    return counts


def kfold_split(labels, k: int = 5, seed: int = 0, groups=None) -> FoldAssignment:
    """Stratified k-fold assignment, deterministic per seed.

    Fold sizes differ by at most one and each class's count in a fold is the
    floor or ceiling of fold_size * class_share (see ``stratified_counts``).
    With ``groups`` the unit dealt is a whole group (all of a subject's clips
    land in one fold); groups must not straddle classes, and balance then
    holds only up to group granularity.
    """
    labels = np.asarray(labels)
    if k < 2:
        raise ValueError("k must be >= 2")
    rng = np.random.default_rng(seed)
    fold = np.full(len(labels), -1, dtype=int)
    classes = np.unique(labels)
    if groups is None:
        members = [np.flatnonzero(labels == c) for c in classes]
        for c, idx in zip(classes, members):
            if len(idx) < k:
                raise ClassTooSmall(f"class {c!r} has {len(idx)} samples, fewer than k={k}")
        counts = stratified_counts([len(idx) for idx in members], k, rng)
        for idx, row in zip(members, counts):
            fold[rng.permutation(idx)] = np.repeat(np.arange(k), row)
        return FoldAssignment(k, fold)
    offset = int(rng.integers(k))
    groups = np.asarray(groups)
    for c in classes:
        members = np.flatnonzero(labels == c)
        units = np.unique(groups[members])
        if len(units) < k:
            raise ClassTooSmall(f"class {c!r} has {len(units)} groups, fewer than k={k}")
        # deal larger groups first to keep fold sizes level
        units = rng.permutation(units)
        counts = np.array([np.sum(groups[members] == u) for u in units])
        units = units[np.argsort(-counts, kind="stable")]
        load = np.zeros(k, dtype=int)
        for u in units:
            rows = members[groups[members] == u]
            f = int(np.argmin(np.roll(load, -offset))) + offset
            fold[rows] = f % k
            load[f % k] += len(rows)
        offset = (offset + len(units)) % k
    if np.any(fold < 0):
        raise ValueError("groups span more than one class")
    return FoldAssignment(k, fold)


@dataclass
class RunResult:
    experiment_id: str
    accuracies: dict = field(default_factory=dict)  # (run, fold) -> accuracy
    n_runs: int = 0
    k: int = 0

    @property
    def mean(self) -> float:
        vals = [self.accuracies[key] for key in sorted(self.accuracies)]
        return float(np.mean(vals)) if vals else float("nan")

    def run_means(self) -> np.ndarray:
        return np.array([np.mean([a for (r, _), a in self.accuracies.items() if r == run])
                         for run in range(self.n_runs)])


@dataclass
class PairResultTable:
    results: dict = field(default_factory=dict)  # AgePairSpec -> RunResult

    def __len__(self):
        return len(self.results)

    def accuracy(self, low: int, high: int) -> float:
        return self.results[AgePairSpec(low, high)].mean

    def line_data(self):
        """(anchor month, comparison month, mean accuracy) rows, sorted."""
        return [(p.low_month, p.high_month, r.mean) for p, r in sorted(self.results.items())]


@dataclass(frozen=True)
class ProtocolConfig:
    train: TrainConfig = TrainConfig()
    n_runs: int = 10
    k: int = 5
    base_seed: int = 0
    jobs: int = 1
    dtype: str = "float32"


def _fold_job(job):
    images, labels, train_idx, test_idx, cfg, init_seed, dtype = job
    model = cry_cnn(2, rng_seed=init_seed, dtype=np.dtype(dtype))
    train(model, images[train_idx], labels[train_idx], cfg)
    pred = np.argmax(predict_proba(model, images[test_idx]), axis=1)
    return float(np.mean(pred == labels[test_idx]))


def run_cv(images, labels, config: ProtocolConfig = ProtocolConfig(), experiment_id: str = "cv",
           groups=None) -> RunResult:
    """Repeated stratified k-fold evaluation of a freshly initialized age-classifier CNN.

    Run ``r`` derives one seed from (base seed, r) that reshuffles the folds
    and, per fold, seeds both weight init and batch order.
    """
    images = np.asarray(images, dtype=np.dtype(config.dtype))
    if images.ndim == 3:
        images = images[..., None]
    labels = np.asarray(labels, dtype=int)
    jobs, keys = [], []
    for run in range(config.n_runs):
        run_seed = derive_seed(config.base_seed, run)
        folds = kfold_split(labels, config.k, run_seed, groups)
        for f in range(config.k):
            tr, te = folds.split(f)
            cfg = replace(config.train, rng_seed=derive_seed(run_seed, f, 2))
            jobs.append((images, labels, tr, te, cfg, derive_seed(run_seed, f, 1), config.dtype))
            keys.append((run, f))
    if config.jobs > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(config.jobs) as pool:
            accs = list(pool.map(_fold_job, jobs))
    else:
        accs = [_fold_job(j) for j in jobs]
    return RunResult(experiment_id, dict(zip(keys, accs)), config.n_runs, config.k)


def pair_data(pair: AgePairSpec, data: ImageSet):
    months = data.months
    for m in (pair.low_month, pair.high_month):
        if not np.any(months == m):
            raise MissingMonth(f"month {m} has no clips")
    keep = (months == pair.low_month) | (months == pair.high_month)
    sub = data.where(keep)
    return sub, (sub.months == pair.high_month).astype(int)


def run_binary_pair(pair: AgePairSpec, data: ImageSet, config: ProtocolConfig = ProtocolConfig(),
                    groups: bool = False) -> RunResult:
    """Label the low month 0 and the high month 1, then run repeated k-fold CV."""
    sub, labels = pair_data(pair, data)
    return run_cv(sub.images, labels, config, pair.label, sub.subjects if groups else None)


def run_pair_table(pairs, data: ImageSet, config: ProtocolConfig = ProtocolConfig()) -> PairResultTable:
    table = PairResultTable()
    for pair in pairs:
        table.results[pair] = run_binary_pair(pair, data, config)
    return table


def run_gender_split(pairs, data: ImageSet, config: ProtocolConfig = ProtocolConfig()):
    """(male table, female table) under the same protocol on each gender's subset."""
    pairs = list(pairs)
    months = sorted({m for p in pairs for m in (p.low_month, p.high_month)})
    genders = data.genders
    for g in ("male", "female"):
        for m in months:
            if not np.any((genders == g) & (data.months == m)):
                raise MissingGender(f"no {g} clips for month {m}")
    return tuple(run_pair_table(pairs, data.where(genders == g), config) for g in ("male", "female"))


@dataclass
class DiagnosisModel:
    model: Model
    train_subjects: frozenset
    n_per_class: int
    history: list = field(default_factory=list)


def diagnosis_training_set(data: ImageSet, seed: int = 0):
    """Balanced (indices, labels): months 0-3 drawn equally as class 0, month 4 as class 1.

    With m clips in the scarcest younger month and M at month 4, each class
    gets 4 * min(m, M // 4) clips.
    """
    months = data.months
    counts = {m: int(np.sum(months == m)) for m in (*DIAGNOSIS_YOUNGER, DIAGNOSIS_OLDER)}
    absent = [m for m, c in counts.items() if c == 0]
    if absent:
        raise MissingMonth(f"diagnosis training needs months 0-4; missing month {', '.join(map(str, absent))}")
    each = min(min(counts[m] for m in DIAGNOSIS_YOUNGER), counts[DIAGNOSIS_OLDER] // len(DIAGNOSIS_YOUNGER))
    if each < 1:
        raise MissingMonth(f"month {DIAGNOSIS_OLDER} has too few clips to balance the classes")
    rng = np.random.default_rng(seed)
    idx = [np.sort(rng.choice(np.flatnonzero(months == m), each, replace=False)) for m in DIAGNOSIS_YOUNGER]
    older = np.sort(rng.choice(np.flatnonzero(months == DIAGNOSIS_OLDER), each * len(DIAGNOSIS_YOUNGER),
                               replace=False))
    idx = np.concatenate(idx + [older])
    labels = np.concatenate([np.zeros(each * len(DIAGNOSIS_YOUNGER), int), np.ones(len(older), int)])
    return idx, labels


def train_diagnosis_model(data: ImageSet, config: ProtocolConfig = ProtocolConfig()) -> DiagnosisModel:
    idx, labels = diagnosis_training_set(data, derive_seed(config.base_seed, 0))
    model = cry_cnn(2, rng_seed=derive_seed(config.base_seed, 1), dtype=np.dtype(config.dtype))
    cfg = replace(config.train, rng_seed=derive_seed(config.base_seed, 2))
    images = data.images[idx].astype(config.dtype)[..., None]
    result = train(model, images, labels, cfg)
    subjects = frozenset(data.rows[i].subject_id for i in idx)
    return DiagnosisModel(model, subjects, len(labels) // 2, result.history)


@dataclass
class CohortResult:
    name: str
    n: int
    fraction_younger: float | None
    fraction_correct: float | None
    verdicts: list = field(default_factory=list)  # (path, nominal month, predicted class, p_older)


def _is_correct(row, predicted: int) -> bool:
    # pathological cohorts count as detected when judged younger than they are
    if row.pathology != "healthy":
        return predicted == 0
    return predicted == int(row.month >= DIAGNOSIS_OLDER)


def run_diagnosis(dmodel: DiagnosisModel, cohorts: dict, batch_size: int = 128) -> dict:
    """Per cohort: share judged "younger than 4 months" and share judged correctly.

    Healthy clips are correct when the verdict matches their nominal month
    group; clips from any other pathology are correct when judged younger.
    Empty cohorts report ``None`` fractions.
    """
    for name, cohort in cohorts.items():
        leaked = sorted(set(cohort.subjects) & dmodel.train_subjects)
        if leaked:
            raise SubjectLeakage(f"cohort {name!r} shares {len(leaked)} subject(s) with training, e.g. {leaked[0]}")
    out = {}
    for name, cohort in cohorts.items():
        if len(cohort) == 0:
            out[name] = CohortResult(name, 0, None, None)
            continue
        probs = predict_proba(dmodel.model, cohort.images.astype(dmodel.model.dtype)[..., None], batch_size)
        pred = np.argmax(probs, axis=1)
        correct = [_is_correct(r, int(p)) for r, p in zip(cohort.rows, pred)]
        verdicts = [(r.path, r.month, int(p), float(pr[1])) for r, p, pr in zip(cohort.rows, pred, probs)]
        out[name] = CohortResult(name, len(cohort), float(np.mean(pred == 0)), float(np.mean(correct)), verdicts)
    return out
