"""Spectrograms, 64x64 classifier images, autocorrelation F0 and LPC formant tracking."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio_io import AudioClip
from .errors import ClipTooShort, DegenerateFrame, EmptyGroup

IMAGE_SIZE = 64
INFANT_F0_BAND = (250.0, 700.0)
VOICING_THRESHOLD = 0.5
PRE_EMPHASIS = 0.97
ROOT_RADIUS_MIN = 0.9


@dataclass(frozen=True)
class StftParams:
    window_len: int = 512
    hop: int = 256
    fft_len: int = 512
    window: str = "hann"

    def __post_init__(self):
        if not 0 < self.hop <= self.window_len <= self.fft_len:
            raise ValueError("need 0 < hop <= window_len <= fft_len")
        if self.window != "hann":
            raise ValueError(f"unsupported window {self.window!r}")


@dataclass(frozen=True, eq=False)
class Spectrogram:
    mags: np.ndarray  # [n_frames, fft_len // 2 + 1]
    params: StftParams
    sample_rate: int

    @property
    def bin_hz(self) -> float:
        return self.sample_rate / self.params.fft_len


@dataclass(frozen=True, eq=False)
class SpectrogramImage:
    pixels: np.ndarray  # [64 time, 64 frequency], values in [0, 1]

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.shape != (IMAGE_SIZE, IMAGE_SIZE):
            raise ValueError(f"image must be {IMAGE_SIZE}x{IMAGE_SIZE}, got {px.shape}")
        object.__setattr__(self, "pixels", px)


@dataclass
class PitchTrack:
    times: np.ndarray
    f0_hz: np.ndarray  # NaN marks unvoiced frames
    confidence: np.ndarray

    @property
    def voiced(self) -> np.ndarray:
        return np.isfinite(self.f0_hz)

    def median_f0(self) -> float:
        v = self.f0_hz[self.voiced]
        return float(np.median(v)) if v.size else float("nan")


@dataclass
class FormantTrack:
    times: np.ndarray
    f1_hz: np.ndarray
    f2_hz: np.ndarray
    valid: np.ndarray

    def median(self):
        if not self.valid.any():
            return float("nan"), float("nan")
        return float(np.median(self.f1_hz[self.valid])), float(np.median(self.f2_hz[self.valid]))


@dataclass
class GroupStats:
    n: int
    f1_mean: float
    f1_sd: float
    f2_mean: float
    f2_sd: float
    points: np.ndarray = field(repr=False)  # [n, 2] raw (F1, F2)


@dataclass
class LpcResult:
    a: np.ndarray  # prediction polynomial [1, a1, ..., ap]
    gain: float  # final residual energy
    reflection: np.ndarray


# ---------------------------------------------------------------------------
# framing / STFT


def hann(n: int) -> np.ndarray:
    """Periodic Hann window (the DFT-even form used for spectral analysis)."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def frame_signal(x: np.ndarray, frame_len: int, hop: int) -> np.ndarray:
    """Hop-spaced frames; the final partial frame is zero-padded."""
    n_frames = 1 + int(np.ceil(max(0, len(x) - frame_len) / hop))
    need = (n_frames - 1) * hop + frame_len
    padded = np.zeros(need)
    padded[: len(x)] = x
    idx = np.arange(frame_len)[None, :] + hop * np.arange(n_frames)[:, None]
    return padded[idx]


def stft(clip: AudioClip, params: StftParams = StftParams()) -> Spectrogram:
    if len(clip) < params.window_len:
        raise ClipTooShort(f"clip has {len(clip)} samples, window needs {params.window_len}")
    frames = frame_signal(clip.samples, params.window_len, params.hop) * hann(params.window_len)
    mags = np.abs(np.fft.rfft(frames, n=params.fft_len, axis=1))
    return Spectrogram(mags, params, clip.sample_rate)


def _resize_axis(a: np.ndarray, size: int, axis: int) -> np.ndarray:
    n = a.shape[axis]
    if n == size:
        return a
    # pixel-centre sampling, edges clamped
    pos = np.clip((np.arange(size) + 0.5) * n / size - 0.5, 0, n - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n - 1)
    w = pos - lo
    shape = [1] * a.ndim
    shape[axis] = size
    w = w.reshape(shape)
    return np.take(a, lo, axis=axis) * (1 - w) + np.take(a, hi, axis=axis) * w


def bilinear_resize(a: np.ndarray, shape) -> np.ndarray:
    return _resize_axis(_resize_axis(a, shape[0], 0), shape[1], 1)


def render_image(spec: Spectrogram, db_floor: float = -80.0) -> SpectrogramImage:
    """dB-scale, clamp ``db_floor`` below the maximum, min-max normalize, resize to 64x64.

    A spectrogram with no dynamic range (e.g. all zeros) renders as uniform 0.5 gray.
    """
    mags = spec.mags
    if mags.size == 0:
        raise ValueError("empty spectrogram")
    top = mags.max()
    if top <= 0:
        return SpectrogramImage(np.full((IMAGE_SIZE, IMAGE_SIZE), 0.5))
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(mags / top)
    db = np.maximum(db, db_floor)
    lo = db.min()
    if lo == 0.0:
        return SpectrogramImage(np.full((IMAGE_SIZE, IMAGE_SIZE), 0.5))
    norm = (db - lo) / -lo
    img = bilinear_resize(norm, (IMAGE_SIZE, IMAGE_SIZE))
    return SpectrogramImage(np.clip(img, 0.0, 1.0))


def clip_to_image(clip: AudioClip, params: StftParams = StftParams(), db_floor: float = -80.0) -> SpectrogramImage:
    if len(clip) < params.window_len:
        padded = np.zeros(params.window_len)
        padded[: len(clip)] = clip.samples
        clip = AudioClip(padded, clip.sample_rate)
    return render_image(stft(clip, params), db_floor)


# image serialization: PGM is drawn with frequency rising upwards, time to the right


def write_pgm(path, image: SpectrogramImage) -> None:
    px = np.round(np.flipud(image.pixels.T) * 255).astype(np.uint8)
    header = f"P5\n{IMAGE_SIZE} {IMAGE_SIZE}\n255\n".encode("ascii")
    Path(path).write_bytes(header + px.tobytes())


def read_pgm(path) -> SpectrogramImage:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    px = np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w) / maxval
    return SpectrogramImage(np.flipud(px).T)


def image_to_bytes(image: SpectrogramImage) -> bytes:
    return image.pixels.astype("<f4").tobytes()


def image_from_bytes(raw: bytes) -> SpectrogramImage:
    px = np.frombuffer(raw, dtype="<f4")
    if px.size != IMAGE_SIZE * IMAGE_SIZE:
        raise ValueError(f"expected {IMAGE_SIZE * IMAGE_SIZE} values, got {px.size}")
    return SpectrogramImage(px.reshape(IMAGE_SIZE, IMAGE_SIZE).astype(np.float64))


# ---------------------------------------------------------------------------
# pitch


def _frame_times(n_frames, frame_len, hop, rate):
    return (np.arange(n_frames) * hop + frame_len / 2) / rate


def estimate_f0(clip: AudioClip, band=INFANT_F0_BAND, frame_len: int = 1024, hop: int = 256,
                threshold: float = VOICING_THRESHOLD) -> PitchTrack:
    """Frame-wise autocorrelation pitch tracker.

    The per-frame autocorrelation is normalized by its zero-lag value, so the
    peak over the lag range ``[rate/high, rate/low]`` doubles as a
    periodicity confidence. Frames whose peak is below ``threshold`` are
    unvoiced (``f0 = NaN``).
    """
    low, high = band
    rate = clip.sample_rate
    if not 0 < low < high < rate / 2:
        raise ValueError("need 0 < low < high < nyquist")
    lag_min = max(1, int(np.floor(rate / high)))
    lag_max = int(np.ceil(rate / low))
    if lag_max + 1 >= frame_len:
        raise ValueError("frame too short for the lowest pitch in band")

    frames = frame_signal(clip.samples, frame_len, hop)
    frames = frames - frames.mean(axis=1, keepdims=True)
    spec = np.fft.rfft(frames, n=2 * frame_len, axis=1)
    ac = np.fft.irfft(np.abs(spec) ** 2, axis=1)[:, : lag_max + 2]
    energy = ac[:, 0]
    ok = energy > 1e-12 * max(1.0, energy.max(initial=0.0))
    r = np.zeros_like(ac)
    r[ok] = ac[ok] / energy[ok, None]

    n = len(frames)
    f0 = np.full(n, np.nan)
    conf = np.zeros(n)
    lags = np.arange(lag_min, lag_max + 1)
    seg = r[:, lag_min:lag_max + 1]
    best = np.argmax(seg, axis=1)
    for i in np.flatnonzero(ok):
        k = lags[best[i]]
        peak = r[i, k]
        conf[i] = min(max(peak, 0.0), 1.0)
        if peak < threshold:
            continue
        a, b, c = r[i, k - 1], r[i, k], r[i, k + 1]
        denom = a - 2 * b + c
        shift = 0.5 * (a - c) / denom if denom < 0 else 0.0
        f0[i] = np.clip(rate / (k + np.clip(shift, -0.5, 0.5)), low, high)
    return PitchTrack(_frame_times(n, frame_len, hop, rate), f0, conf)


# ---------------------------------------------------------------------------
# linear prediction / formants


def autocorrelation(frame: np.ndarray, order: int) -> np.ndarray:
    n = len(frame)
    return np.array([np.dot(frame[: n - k], frame[k:]) for k in range(order + 1)])


def levinson_durbin(r: np.ndarray, order: int) -> LpcResult:
    """Solve the autocorrelation normal equations for A(z) = 1 + sum a_k z^-k."""
    if not np.all(np.isfinite(r[: order + 1])) or r[0] <= 0:
        raise DegenerateFrame("autocorrelation is zero or non-finite")
    a = np.zeros(order + 1)
    a[0] = 1.0
    k = np.zeros(order)
    err = r[0]
    for i in range(1, order + 1):
        acc = r[i] + np.dot(a[1:i], r[i - 1:0:-1])
        ki = -acc / err
        a[1:i] = a[1:i] + ki * a[i - 1:0:-1]
        a[i] = ki
        k[i - 1] = ki
        err *= 1.0 - ki * ki
        if err <= 0:
            # numerically singular: the remaining coefficients stay zero
            err = 0.0
            break
    return LpcResult(a, float(err), k)


def lpc_coeffs(frame, order: int) -> LpcResult:
    frame = np.asarray(frame, dtype=np.float64)
    if order >= len(frame):
        raise ValueError("order must be smaller than the frame length")
    if not np.all(np.isfinite(frame)) or not np.any(frame):
        raise DegenerateFrame("frame is all-zero or non-finite")
    return levinson_durbin(autocorrelation(frame, order), order)


def default_lpc_order(sample_rate: int, tract_length_cm: float = 8.0) -> int:
    """Two poles per expected formant below nyquist, plus two for spectral tilt.

    Formants of a uniform tube closed at one end are spaced c / 2L apart; an
    8 cm infant tract gives about 2.2 kHz, i.e. four formants below 8 kHz and
    order 10 at 16 kHz.
    """
    spacing = 35000.0 / (2.0 * tract_length_cm)
    return 2 * int(np.ceil(sample_rate / 2 / spacing)) + 2


def formants_from_lpc(a: np.ndarray, sample_rate: int, min_radius: float = ROOT_RADIUS_MIN) -> np.ndarray:
    """Resonance frequencies (Hz, ascending) of sharp LPC poles in the upper half-plane."""
    roots = np.roots(a)
    ang = np.angle(roots)
    keep = (np.abs(roots) > min_radius) & (ang > 0) & (ang < np.pi)
    return np.sort(ang[keep] * sample_rate / (2 * np.pi))


def envelope_autocorrelation(frame: np.ndarray, f0_hz: float, sample_rate: int, order: int,
                             nfft: int = 2048) -> np.ndarray:
    """Autocorrelation of a pitch-smoothed power spectrum.

    The log power spectrum is liftered below 0.8 pitch periods, which removes
    the harmonic comb. Plain frame autocorrelation of a high-pitched voice
    samples the envelope only at a few harmonics, and the fitted poles lock
    onto the strongest harmonic instead of the resonance.
    """
    power = np.abs(np.fft.rfft(frame, nfft)) ** 2
    top = power.max()
    if not np.isfinite(top) or top <= 0:
        raise DegenerateFrame("frame has no energy")
    ceps = np.fft.irfft(np.log(power + 1e-12 * top))
    cut = max(order + 1, int(0.8 * sample_rate / f0_hz))
    ceps[cut:nfft - cut + 1] = 0.0
    smooth = np.exp(np.fft.rfft(ceps).real)
    return np.fft.irfft(smooth)[: order + 1]


def estimate_formants(clip: AudioClip, order: int | None = None, frame_len: int = 512, hop: int = 256,
                      energy_floor_db: float = -40.0, pitch_adaptive: bool = True) -> FormantTrack:
    """F1/F2 per frame from the roots of a pre-emphasized, Hamming-windowed LPC fit.

    Voiced frames (per ``estimate_f0`` on the same frame grid) are fitted to
    a pitch-smoothed envelope when ``pitch_adaptive`` is set; other frames use
    the frame autocorrelation directly. Frames whose RMS is more than
    ``energy_floor_db`` below the loudest frame are invalid, as are frames
    with fewer than two qualifying roots.
    """
    rate = clip.sample_rate
    order = default_lpc_order(rate) if order is None else order
    x = clip.samples
    if len(x):
        x = np.append(x[0], x[1:] - PRE_EMPHASIS * x[:-1])
    frames = frame_signal(x, frame_len, hop)
    n = len(frames)
    f1 = np.full(n, np.nan)
    f2 = np.full(n, np.nan)
    valid = np.zeros(n, dtype=bool)
    rms = np.sqrt(np.mean(frame_signal(clip.samples, frame_len, hop) ** 2, axis=1))
    top = rms.max(initial=0.0)
    if top > 0:
        f0 = np.full(n, np.nan)
        if pitch_adaptive:
            f0 = estimate_f0(clip, frame_len=frame_len, hop=hop).f0_hz
        win = np.hamming(frame_len)
        loud = rms >= top * 10 ** (energy_floor_db / 20)
        for i in np.flatnonzero(loud):
            frame = frames[i] * win
            try:
                if np.isfinite(f0[i]):
                    a = levinson_durbin(envelope_autocorrelation(frame, f0[i], rate, order), order).a
                else:
                    a = lpc_coeffs(frame, order).a
            except DegenerateFrame:
                continue
            freqs = formants_from_lpc(a, rate)
            if len(freqs) >= 2:
                f1[i], f2[i] = freqs[0], freqs[1]
                valid[i] = True
    return FormantTrack(_frame_times(n, frame_len, hop, rate), f1, f2, valid)


def scatter_stats(tracks) -> dict:
    """Per-group F1/F2 mean and standard deviation over valid frames.

    ``tracks`` is an iterable of ``(label, FormantTrack)``; several tracks may
    share a label. Returns ``{label: GroupStats}`` in first-seen label order.
    """
    pooled: dict = {}
    for label, tr in tracks:
        pts = np.column_stack([tr.f1_hz[tr.valid], tr.f2_hz[tr.valid]])
        pooled.setdefault(label, []).append(pts)
    out = {}
    for label, parts in pooled.items():
        pts = np.concatenate(parts) if parts else np.zeros((0, 2))
        if len(pts) == 0:
            raise EmptyGroup(f"group {label!r} has no valid formant frames")
        out[label] = GroupStats(
            n=len(pts),
            f1_mean=float(pts[:, 0].mean()),
            f1_sd=float(pts[:, 0].std()),
            f2_mean=float(pts[:, 1].mean()),
            f2_sd=float(pts[:, 1].std()),
            points=pts,
        )
    return out


# ---------------------------------------------------------------------------
# track CSV export


def write_pitch_csv(path, track: PitchTrack) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_s", "f0_hz", "confidence"])
        for t, f, c in zip(track.times, track.f0_hz, track.confidence):
            w.writerow([f"{t:.6f}", "" if np.isnan(f) else f"{f:.3f}", f"{c:.6f}"])


def write_formant_csv(path, track: FormantTrack) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_s", "f1_hz", "f2_hz", "valid"])
        for t, a, b, v in zip(track.times, track.f1_hz, track.f2_hz, track.valid):
            w.writerow([f"{t:.6f}", "" if not v else f"{a:.3f}", "" if not v else f"{b:.3f}", int(v)])
