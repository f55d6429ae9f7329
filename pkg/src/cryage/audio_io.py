"""WAV reading/writing, resampling and energy-based segmentation of cry recordings."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.signal import resample_poly

from .errors import MalformedWav, UnsupportedEncoding

CANONICAL_RATE = 16000

_WAVE_FORMAT_PCM = 0x0001
_WAVE_FORMAT_IEEE_FLOAT = 0x0003
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE


@dataclass(frozen=True, eq=False)
class AudioClip:
    """Mono waveform with its sample rate.

    ``samples`` is stored as a read-only float64 array so clips can be
    shared between threads without copying.
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        arr = np.array(self.samples, dtype=np.float64).reshape(-1)
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration_seconds(self) -> float:
        return len(self) / self.sample_rate

    def normalized(self, peak: float = 1.0) -> "AudioClip":
        """Return a copy with non-finite samples zeroed and the peak scaled to ``peak``."""
        x = np.where(np.isfinite(self.samples), self.samples, 0.0)
        top = np.max(np.abs(x)) if x.size else 0.0
        if top > 0:
            x = x * (peak / top)
        return AudioClip(np.clip(x, -1.0, 1.0), self.sample_rate)


@dataclass(frozen=True)
class SegmentSpec:
    min_len_s: float = 1.0
    max_len_s: float = 7.0
    silence_db_floor: float = -40.0
    min_silence_s: float = 0.2

    def __post_init__(self):
        if not 0 < self.min_len_s < self.max_len_s:
            raise ValueError("need 0 < min_len_s < max_len_s")
        if self.silence_db_floor >= 0:
            raise ValueError("silence_db_floor must be negative")
        if self.min_silence_s < 0:
            raise ValueError("min_silence_s must be non-negative")


# ---------------------------------------------------------------------------
# WAV container


def _decode_pcm(raw: bytes, bits: int, fmt_tag: int) -> np.ndarray:
    if fmt_tag == _WAVE_FORMAT_IEEE_FLOAT:
        if bits == 32:
            return np.frombuffer(raw, dtype="<f4").astype(np.float64)
        if bits == 64:
            return np.frombuffer(raw, dtype="<f8").copy()
        raise UnsupportedEncoding(f"{bits}-bit float samples")
    if bits == 8:
        return (np.frombuffer(raw, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
    if bits == 16:
        return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if bits == 24:
        b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        v = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        v = np.where(v >= 1 << 23, v - (1 << 24), v)
        return v.astype(np.float64) / float(1 << 23)
    if bits == 32:
        return np.frombuffer(raw, dtype="<i4").astype(np.float64) / float(1 << 31)
    raise UnsupportedEncoding(f"{bits}-bit integer PCM")


def parse_wav(data: bytes) -> AudioClip:
    """Decode an in-memory RIFF/WAVE file into a mono clip."""
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedWav("missing RIFF/WAVE header")
    pos = 12
    fmt = None
    payload = None
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        (size,) = struct.unpack("<I", data[pos + 4:pos + 8])
        body = data[pos + 8:pos + 8 + size]
        if cid == b"fmt ":
            if len(body) < 16:
                raise MalformedWav("fmt chunk too short")
            fmt = body
        elif cid == b"data":
            if len(body) < size:
                raise MalformedWav(f"data chunk truncated: declared {size} bytes, found {len(body)}")
            payload = body
            break
        pos += 8 + size + (size & 1)
    if fmt is None:
        raise MalformedWav("no fmt chunk")
    if payload is None:
        raise MalformedWav("no data chunk")

    fmt_tag, channels, rate, _, block_align, bits = struct.unpack("<HHIIHH", fmt[:16])
    if fmt_tag == _WAVE_FORMAT_EXTENSIBLE:
        if len(fmt) < 26:
            raise MalformedWav("extensible fmt chunk too short")
        (fmt_tag,) = struct.unpack("<H", fmt[24:26])
    if fmt_tag not in (_WAVE_FORMAT_PCM, _WAVE_FORMAT_IEEE_FLOAT):
        raise UnsupportedEncoding(f"WAV format tag 0x{fmt_tag:04x} is not linear PCM or IEEE float")
    if channels not in (1, 2):
        raise UnsupportedEncoding(f"{channels} channels")
    if rate <= 0 or bits == 0 or block_align != channels * bits // 8:
        raise MalformedWav("inconsistent fmt fields")
    usable = len(payload) - len(payload) % block_align
    x = _decode_pcm(payload[:usable], bits, fmt_tag)
    x = x.reshape(-1, channels).mean(axis=1)
    x = np.clip(np.nan_to_num(x, nan=0.0, posinf=1.0, neginf=-1.0), -1.0, 1.0)
    return AudioClip(x, rate)


def load_wav(path) -> AudioClip:
    """Read a PCM/float WAV file; stereo is averaged down to mono."""
    return parse_wav(Path(path).read_bytes())


def encode_wav(clip: AudioClip) -> bytes:
    """Serialize as 16-bit PCM mono at the canonical rate."""
    if clip.sample_rate != CANONICAL_RATE:
        clip = resample(clip, CANONICAL_RATE)
    q = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2")
    raw = q.tobytes()
    header = b"RIFF" + struct.pack("<I", 36 + len(raw)) + b"WAVE"
    fmt = struct.pack("<HHIIHH", _WAVE_FORMAT_PCM, 1, CANONICAL_RATE, CANONICAL_RATE * 2, 2, 16)
    return header + b"fmt " + struct.pack("<I", 16) + fmt + b"data" + struct.pack("<I", len(raw)) + raw


def save_wav(path, clip: AudioClip) -> None:
    Path(path).write_bytes(encode_wav(clip))


# ---------------------------------------------------------------------------
# resampling


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Band-limited rate conversion (polyphase, Kaiser-windowed sinc)."""
    target_rate = int(target_rate)
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    if target_rate == clip.sample_rate:
        return clip
    ratio = Fraction(target_rate, clip.sample_rate)
    y = resample_poly(clip.samples, ratio.numerator, ratio.denominator)
    return AudioClip(np.clip(y, -1.0, 1.0), target_rate)


# ---------------------------------------------------------------------------
# segmentation


def frame_rms_db(clip: AudioClip, frame_s: float = 0.01) -> np.ndarray:
    """RMS of consecutive non-overlapping frames in dB relative to the clip's peak sample."""
    n = max(1, int(round(frame_s * clip.sample_rate)))
    x = clip.samples
    n_frames = len(x) // n
    if n_frames == 0:
        return np.zeros(0)
    rms = np.sqrt(np.mean(x[: n_frames * n].reshape(n_frames, n) ** 2, axis=1))
    peak = np.max(np.abs(x))
    if peak == 0:
        return np.full(n_frames, -np.inf)
    with np.errstate(divide="ignore"):
        return 20.0 * np.log10(rms / peak)


def _runs(mask: np.ndarray):
    """(start, stop) index pairs of consecutive True runs."""
    padded = np.concatenate(([False], mask, [False])).astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    return list(zip(edges[::2], edges[1::2]))


def active_frames(clip: AudioClip, spec: SegmentSpec, frame_s: float = 0.01) -> np.ndarray:
    """Frame activity mask after bridging silences shorter than ``spec.min_silence_s``."""
    active = frame_rms_db(clip, frame_s) >= spec.silence_db_floor
    min_gap = int(round(spec.min_silence_s / frame_s))
    for start, stop in _runs(~active):
        # leading/trailing silence is never bridged
        if start > 0 and stop < len(active) and stop - start < min_gap:
            active[start:stop] = True
    return active


def segment_clip(clip: AudioClip, spec: SegmentSpec = SegmentSpec(), frame_s: float = 0.01):
    """Split a recording into energy-active segments whose lengths respect ``spec``.

    Active regions longer than ``max_len_s`` are cut into ``max_len_s`` pieces;
    pieces (or whole regions) shorter than ``min_len_s`` are dropped.
    """
    if len(clip) == 0:
        raise ValueError("cannot segment an empty clip")
    hop = max(1, int(round(frame_s * clip.sample_rate)))
    max_frames = int(np.floor(spec.max_len_s / frame_s + 1e-9))
    min_frames = int(np.ceil(spec.min_len_s / frame_s - 1e-9))
    out = []
    for start, stop in _runs(active_frames(clip, spec, frame_s)):
        for s in range(start, stop, max_frames):
            e = min(s + max_frames, stop)
            if e - s >= min_frames:
                out.append(AudioClip(clip.samples[s * hop:e * hop], clip.sample_rate))
    return out
