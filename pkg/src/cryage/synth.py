"""Source-filter synthetic infant cries with month-dependent acoustics.

The generator produces corpora with known ground truth: each clip records the
F0/F1/F2 it was rendered with. Parameter anchors follow the single-infant
measurements at one and four months (F0 442/457 Hz, F1 1470/1921 Hz,
F2 2339/4423 Hz); everything about the spread of those values is synthetic.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .audio_io import CANONICAL_RATE, AudioClip, encode_wav
from .errors import CryAgeError, MonthOutOfRange, UnstableFilter

MONTHS = tuple(range(7))
GENDERS = ("male", "female", "unspecified")
F0_RANGE = (250.0, 700.0)
MALE_MONTH_LAG = 0.5
PEAK_LEVEL = 0.9
SOURCE_TILT = 0.97  # one-pole low-pass: net -6 dB/octave glottal source + lip radiation
DEFAULT_JITTER_PCT = 2.0
DC_BLOCK = 0.995  # pole of the DC-blocking high-pass (about 13 Hz at 16 kHz)


@dataclass(frozen=True)
class SynthProfile:
    age_months: int
    f0_hz: float
    formants_hz: tuple  # ((center, bandwidth), ...)
    duration_s: float
    jitter_pct: float = 1.0
    gap_events: tuple = ()  # ((start_s, length_s), ...)
    creak_tail: bool = False
    gender: str = "unspecified"

    def validate(self, sample_rate: int = CANONICAL_RATE) -> None:
        if not F0_RANGE[0] <= self.f0_hz <= F0_RANGE[1]:
            raise ValueError(f"f0 {self.f0_hz} Hz outside infant band {F0_RANGE}")
        centers = [c for c, _ in self.formants_hz]
        if any(b >= a for a, b in zip(centers[1:], centers[:-1])):
            raise ValueError("formant centers must be strictly increasing")
        if any(c >= sample_rate / 2 for c in centers):
            raise ValueError("formant above nyquist")
        if self.duration_s <= 0:
            raise ValueError("duration must be positive")
        end = 0.0
        for start, length in sorted(self.gap_events):
            if start < end or length <= 0 or start + length > self.duration_s:
                raise ValueError(f"gap event ({start}, {length}) overlaps or leaves the clip")
            end = start + length
        if self.gender not in GENDERS:
            raise ValueError(f"unknown gender {self.gender!r}")


def _lerp_months(anchors: dict) -> np.ndarray:
    m = sorted(anchors)
    return np.interp(MONTHS, m, [anchors[k] for k in m])


@dataclass
class AgeParameterTable:
    """Per-month Gaussian parameters (index = month 0..6)."""

    f0_mean: np.ndarray = field(default_factory=lambda: _lerp_months({0: 442, 1: 442, 4: 457, 6: 457}))
    f0_sd: np.ndarray = field(default_factory=lambda: _lerp_months({0: 80, 4: 120, 6: 120}))
    f1_mean: np.ndarray = field(default_factory=lambda: _lerp_months({0: 1470, 1: 1470, 4: 1921, 6: 1921}))
    f1_sd: np.ndarray = field(default_factory=lambda: _lerp_months({0: 150, 4: 300, 6: 300}))
    f2_mean: np.ndarray = field(default_factory=lambda: _lerp_months({0: 2339, 1: 2339, 4: 4423, 6: 4423}))
    f2_sd: np.ndarray = field(default_factory=lambda: _lerp_months({0: 250, 4: 500, 6: 500}))
    gap_prob: np.ndarray = field(default_factory=lambda: np.array([0, 0, 0, 0.3, 0.7, 0.7, 0.7]))
    creak_prob: np.ndarray = field(default_factory=lambda: np.full(7, 0.3))

    COLUMNS = ("f0_mean", "f0_sd", "f1_mean", "f1_sd", "f2_mean", "f2_sd", "gap_prob", "creak_prob")

    def __post_init__(self):
        for name in self.COLUMNS:
            col = np.asarray(getattr(self, name), dtype=np.float64)
            if col.shape != (7,):
                raise ValueError(f"{name} needs 7 monthly values")
            setattr(self, name, col)

    def check(self) -> None:
        """Raise if the table breaks the developmental-trend invariants."""
        for name in ("f1_mean", "f2_mean", "f1_sd", "f2_sd"):
            if np.any(np.diff(getattr(self, name)) < 0):
                raise ValueError(f"{name} must be non-decreasing in month")
        f0 = self.f0_mean[:5]
        if (f0.max() - f0.min()) / f0.min() >= 0.10:
            raise ValueError("F0 mean must vary by less than 10% across months 0-4")

    def at(self, month: float) -> dict:
        """Linearly interpolated parameters at a (possibly fractional) month."""
        m = float(np.clip(month, 0, 6))
        return {name: float(np.interp(m, MONTHS, getattr(self, name))) for name in self.COLUMNS}


DEFAULT_TABLE = AgeParameterTable()


def effective_month(month: float, gender: str) -> float:
    return max(0.0, month - MALE_MONTH_LAG) if gender == "male" else float(month)


def formant_bandwidths(f1: float, f2: float):
    return 80.0 + 0.04 * f1, 100.0 + 0.04 * f2


def _draw_gaps(rng, duration_s, gap_prob):
    if rng.random() >= gap_prob or duration_s < 0.8:
        return ()
    n_gaps = 1 if duration_s < 3.0 else int(rng.integers(1, 3))
    gaps = []
    # gaps sit in disjoint slots away from the clip edges
    slot = (duration_s - 0.5) / n_gaps
    for i in range(n_gaps):
        length = float(rng.uniform(0.1, min(0.25, 0.5 * slot)))
        lo = 0.25 + i * slot
        start = float(rng.uniform(lo, lo + slot - length))
        gaps.append((round(start, 4), round(length, 4)))
    return tuple(gaps)


def age_profile(month: int, gender: str = "unspecified", rng_seed: int = 0,
                table: AgeParameterTable = DEFAULT_TABLE, duration_s: float | None = None,
                sample_rate: int = CANONICAL_RATE) -> SynthProfile:
    """Sample one cry's acoustic parameters for an infant of ``month`` months.

    Male profiles are drawn as if ``MALE_MONTH_LAG`` months younger.
    """
    if not isinstance(month, (int, np.integer)) or not 0 <= month <= 6:
        raise MonthOutOfRange(f"month must be an integer in [0, 6], got {month!r}")
    if gender not in GENDERS:
        raise ValueError(f"unknown gender {gender!r}")
    rng = np.random.default_rng([int(rng_seed), int(month), GENDERS.index(gender)])
    p = table.at(effective_month(month, gender))
    nyq = sample_rate / 2
    f0 = float(np.clip(rng.normal(p["f0_mean"], p["f0_sd"]), *F0_RANGE))
    f1 = float(np.clip(rng.normal(p["f1_mean"], p["f1_sd"]), 500.0, 0.35 * nyq))
    f2 = float(np.clip(rng.normal(p["f2_mean"], p["f2_sd"]), 1.3 * f1, 0.8 * nyq))
    dur = float(rng.uniform(1.0, 7.0)) if duration_s is None else float(duration_s)
    b1, b2 = formant_bandwidths(f1, f2)
    prof = SynthProfile(
        age_months=int(month),
        f0_hz=round(f0, 3),
        formants_hz=((round(f1, 3), round(b1, 3)), (round(f2, 3), round(b2, 3))),
        duration_s=round(dur, 4),
        jitter_pct=DEFAULT_JITTER_PCT,
        gap_events=_draw_gaps(rng, dur, p["gap_prob"]),
        creak_tail=bool(rng.random() < p["creak_prob"]),
        gender=gender,
    )
    prof.validate(sample_rate)
    return prof


# ---------------------------------------------------------------------------
# signal chain


def pulse_times(f0_hz: float, duration_s: float, jitter_pct: float, rng) -> np.ndarray:
    """Glottal closure instants; each period is T0 * (1 + jitter * N(0, 1))."""
    period = 1.0 / f0_hz
    n_max = int(duration_s / period * 1.2) + 4
    periods = period * (1.0 + 0.01 * jitter_pct * rng.standard_normal(n_max))
    periods = np.maximum(periods, 0.25 * period)
    t = np.concatenate(([0.0], np.cumsum(periods)))
    return t[t < duration_s]


def _place_impulses(times_s: np.ndarray, amps, n: int, rate: int) -> np.ndarray:
    # fractional positions are shared linearly between neighbouring samples
    x = np.zeros(n + 2)
    pos = np.asarray(times_s) * rate
    amps = np.broadcast_to(amps, pos.shape)
    keep = pos < n
    pos, amps = pos[keep], amps[keep]
    i = np.floor(pos).astype(int)
    frac = pos - i
    np.add.at(x, i, amps * (1.0 - frac))
    np.add.at(x, i + 1, amps * frac)
    return x[:n]


def glottal_source(f0_hz: float, duration_s: float, jitter_pct: float = 0.0,
                   sample_rate: int = CANONICAL_RATE, rng_seed: int = 0) -> AudioClip:
    """Quasi-periodic unit impulse train, one excitation per glottal cycle."""
    if not 0 < f0_hz < sample_rate / 2:
        raise ValueError("f0 must lie in (0, nyquist)")
    n = int(round(duration_s * sample_rate))
    rng = np.random.default_rng(rng_seed)
    times = pulse_times(f0_hz, duration_s, jitter_pct, rng)
    return AudioClip(_place_impulses(times, 1.0, n, sample_rate), sample_rate)


def resonator_coeffs(center_hz: float, bandwidth_hz: float, sample_rate: int):
    """Two-pole resonator with unity gain at DC: y = A x + B y[-1] + C y[-2]."""
    radius = np.exp(-np.pi * bandwidth_hz / sample_rate)
    if bandwidth_hz <= 0 or radius >= 1.0:
        raise UnstableFilter(f"resonator at {center_hz} Hz has pole radius {radius:.6f} >= 1")
    if not 0 < center_hz < sample_rate / 2:
        raise ValueError(f"resonator center {center_hz} Hz outside (0, nyquist)")
    c = -radius * radius
    b = 2.0 * radius * np.cos(2.0 * np.pi * center_hz / sample_rate)
    a = 1.0 - b - c
    return np.array([a]), np.array([1.0, -b, -c])


def apply_formants(source: AudioClip, formants_hz) -> AudioClip:
    """Cascade of two-pole resonators, one per ``(center, bandwidth)`` pair."""
    y = source.samples
    for center, bw in formants_hz:
        num, den = resonator_coeffs(center, bw, source.sample_rate)
        y = lfilter(num, den, y)
    return AudioClip(y, source.sample_rate)


def _burst_envelope(mask: np.ndarray, rate: int, attack_s=0.02, decay_s=0.05) -> np.ndarray:
    env = np.zeros(len(mask))
    padded = np.concatenate(([False], mask, [False])).astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    na, nd = int(attack_s * rate), int(decay_s * rate)
    for s, e in zip(edges[::2], edges[1::2]):
        seg = np.ones(e - s)
        a = min(na, len(seg) // 2)
        d = min(nd, len(seg) // 2)
        if a:
            seg[:a] = np.linspace(0.0, 1.0, a, endpoint=False)
        if d:
            seg[len(seg) - d:] = np.linspace(1.0, 0.0, d)
        env[s:e] = seg
    return env


def creak_tail_len(duration_s: float) -> float:
    return min(0.3, 0.1 * duration_s)


def synth_cry(profile: SynthProfile, sample_rate: int = CANONICAL_RATE, rng_seed: int = 0) -> AudioClip:
    """Render one cry: tilted pulse source, formant cascade, burst envelopes, peak 0.9.

    Gap events silence the excitation; a creak tail replaces the last part of
    the cry with sparse, irregular, low-level pulses.
    """
    profile.validate(sample_rate)
    rng = np.random.default_rng(rng_seed)
    n = int(round(profile.duration_s * sample_rate))
    times = pulse_times(profile.f0_hz, profile.duration_s, profile.jitter_pct, rng)
    excitation = _place_impulses(times, 1.0, n, sample_rate)

    voiced = np.ones(n, dtype=bool)
    for start, length in profile.gap_events:
        voiced[int(start * sample_rate):int(round((start + length) * sample_rate))] = False
    tail = np.zeros(n, dtype=bool)
    if profile.creak_tail:
        tail[n - int(creak_tail_len(profile.duration_s) * sample_rate):] = True
        voiced &= ~tail
        t0 = (n - tail.sum()) / sample_rate
        span = profile.duration_s - t0
        # aperiodic: uniformly scattered instants at a lower average rate
        k = max(1, int(span * profile.f0_hz * 0.3))
        ct = np.sort(t0 + rng.uniform(0, span, k))
        excitation[tail] = 0.0
        excitation += _place_impulses(ct, 0.3 * rng.uniform(0.3, 1.0, k), n, sample_rate)

    excitation[~voiced & ~tail] = 0.0
    excitation = lfilter([1.0], [1.0, -SOURCE_TILT], excitation)
    # the tilt has a DC gain of 1 / (1 - SOURCE_TILT); without a zero at DC the
    # sparse creak pulses turn into a loud low-frequency swell
    excitation = lfilter([1.0, -1.0], [1.0, -DC_BLOCK], excitation)
    y = apply_formants(AudioClip(excitation, sample_rate), profile.formants_hz).samples
    y = y - np.mean(y)
    env = _burst_envelope(voiced, sample_rate)
    if tail.any():
        env[tail] = _burst_envelope(tail, sample_rate, 0.005, 0.05)[tail]
    y = y * env
    peak = np.max(np.abs(y))
    if peak > 0:
        y = y * (PEAK_LEVEL / peak)
    return AudioClip(y, sample_rate)


# ---------------------------------------------------------------------------
# corpora


MANIFEST_FIELDS = ("path", "month", "gender", "reason", "pathology", "subject_id", "f0_hz", "f1_hz", "f2_hz")


def derive_seed(*parts: int) -> int:
    """Stable 63-bit seed from a tuple of integers."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(2, np.uint64)[0] >> np.uint64(1))


def _gender_schedule(per_month: int, gender_mix: dict) -> list:
    names = sorted(gender_mix)
    weights = np.array([gender_mix[g] for g in names], dtype=float)
    if np.any(weights < 0) or weights.sum() <= 0:
        raise ValueError("gender_mix needs non-negative weights with a positive sum")
    weights /= weights.sum()
    # largest-remainder apportionment, then interleave
    raw = weights * per_month
    counts = np.floor(raw).astype(int)
    for i in np.argsort(-(raw - counts), kind="stable")[: per_month - counts.sum()]:
        counts[i] += 1
    order = []
    used = np.zeros(len(names))
    for _ in range(per_month):
        i = int(np.argmin((used + 0.5) / np.maximum(counts, 1e-12) + (counts == 0) * 1e9))
        order.append(names[i])
        used[i] += 1
    return order


def _render_one(job):
    path, profile, rate, seed = job
    clip = synth_cry(profile, rate, seed)
    Path(path).write_bytes(encode_wav(clip))


def synth_corpus(months, per_month: int, gender_mix=None, rng_seed: int = 0, out_dir=".",
                 table: AgeParameterTable = DEFAULT_TABLE, sample_rate: int = CANONICAL_RATE,
                 acoustic_month: int | None = None, pathology: str = "healthy",
                 clips_per_subject: int = 5, subject_prefix: str | None = None, jobs: int = 1):
    """Write ``per_month`` WAVs for every month plus ``manifest.csv``; return the manifest.

    ``acoustic_month`` renders every clip with that month's acoustics while
    keeping the nominal month label (used for delayed-development cohorts).
    """
    from .experiments.manifest import DatasetManifest, ManifestRow

    if per_month < 1:
        raise ValueError("per_month must be >= 1")
    gender_mix = gender_mix or {"male": 0.5, "female": 0.5}
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise CryAgeError(f"cannot write to {out}: {exc.strerror or exc}") from exc
    prefix = subject_prefix if subject_prefix is not None else f"c{rng_seed}"
    rows, jobs_list = [], []
    index = 0
    for month in months:
        genders = _gender_schedule(per_month, gender_mix)
        for i in range(per_month):
            seed = derive_seed(rng_seed, index)
            gender = genders[i]
            src_month = month if acoustic_month is None else acoustic_month
            profile = age_profile(src_month, gender, seed, table, sample_rate=sample_rate)
            profile = replace(profile, age_months=month)
            name = f"m{month}_{i:05d}.wav"
            subject = f"{prefix}-m{month}-{gender[0]}{i // clips_per_subject:04d}"
            rows.append(ManifestRow(
                path=name, month=month, gender=gender, reason="synthetic", pathology=pathology,
                subject_id=subject, f0_hz=profile.f0_hz, f1_hz=profile.formants_hz[0][0],
                f2_hz=profile.formants_hz[1][0]))
            jobs_list.append((out / name, profile, sample_rate, seed))
            index += 1
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(jobs) as pool:
            list(pool.map(_render_one, jobs_list, chunksize=8))
    else:
        for job in jobs_list:
            _render_one(job)
    manifest = DatasetManifest(rows, base_dir=out)
    manifest.save(out / "manifest.csv")
    return manifest
