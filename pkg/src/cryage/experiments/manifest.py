"""Dataset manifests and cached spectrogram-image materialization."""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..audio_io import CANONICAL_RATE, parse_wav, resample
from ..errors import MalformedManifest, MissingFile
from ..features import IMAGE_SIZE, StftParams, clip_to_image, image_from_bytes

FIELDS = ("path", "month", "gender", "reason", "pathology", "subject_id", "f0_hz", "f1_hz", "f2_hz")
GENDERS = ("male", "female", "unspecified")
REASONS = ("hungry", "sleepy", "unhappy", "wakeup", "attention", "uncomfortable", "temper", "pain", "synthetic")
PATHOLOGIES = ("healthy", "asphyxia", "deaf", "synthetic-delayed")


@dataclass(frozen=True)
class ManifestRow:
    path: str
    month: int
    gender: str
    reason: str
    pathology: str
    subject_id: str
    f0_hz: float | None = None
    f1_hz: float | None = None
    f2_hz: float | None = None


@dataclass
class DatasetManifest:
    rows: list
    base_dir: Path = Path(".")

    def __len__(self):
        return len(self.rows)

    def resolve(self, row: ManifestRow) -> Path:
        p = Path(row.path)
        return p if p.is_absolute() else self.base_dir / p

    def subset(self, keep) -> "DatasetManifest":
        return DatasetManifest([r for r in self.rows if keep(r)], self.base_dir)

    def save(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(FIELDS)
            for r in self.rows:
                w.writerow([r.path, r.month, r.gender, r.reason, r.pathology, r.subject_id,
                            *("" if v is None else repr(float(v)) for v in (r.f0_hz, r.f1_hz, r.f2_hz))])


def _opt_float(text, line, name):
    if text is None or text.strip() == "":
        return None
    try:
        return float(text)
    except ValueError:
        raise MalformedManifest(f"{name} is not a number: {text!r}", line) from None


def load_manifest(path, check_files: bool = True) -> DatasetManifest:
    """Parse and validate a manifest CSV; relative clip paths resolve against its directory."""
    path = Path(path)
    if not path.exists():
        raise MissingFile([path])
    rows = []
    seen = set()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:6]] != list(FIELDS[:6]):
            raise MalformedManifest(f"header must start with {','.join(FIELDS[:6])}", 1)
        cols = {h.strip(): i for i, h in enumerate(header)}
        for line, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) < 6:
                raise MalformedManifest("too few columns", line)
            get = lambda name: rec[cols[name]] if name in cols and cols[name] < len(rec) else None
            try:
                month = int(get("month"))
            except ValueError:
                raise MalformedManifest(f"month is not an integer: {get('month')!r}", line) from None
            if not 0 <= month <= 6:
                raise MalformedManifest(f"month {month} outside [0, 6]", line)
            gender, reason, pathology = get("gender"), get("reason"), get("pathology")
            if gender not in GENDERS:
                raise MalformedManifest(f"unknown gender {gender!r}", line)
            if reason not in REASONS:
                raise MalformedManifest(f"unknown reason {reason!r}", line)
            if pathology not in PATHOLOGIES:
                raise MalformedManifest(f"unknown pathology {pathology!r}", line)
            clip_path = get("path")
            if clip_path in seen:
                raise MalformedManifest(f"duplicate path {clip_path!r}", line)
            seen.add(clip_path)
            rows.append(ManifestRow(
                clip_path, month, gender, reason, pathology, get("subject_id"),
                _opt_float(get("f0_hz"), line, "f0_hz"),
                _opt_float(get("f1_hz"), line, "f1_hz"),
                _opt_float(get("f2_hz"), line, "f2_hz"),
            ))
    manifest = DatasetManifest(rows, path.parent)
    if check_files:
        missing = [manifest.resolve(r) for r in rows if not manifest.resolve(r).exists()]
        if missing:
            raise MissingFile(missing)
    return manifest


@dataclass
class ImageSet:
    """Stacked 64x64 images aligned with manifest rows."""

    images: np.ndarray  # [n, 64, 64] float32
    rows: list
    computed: int = 0
    cached: int = 0

    def __len__(self):
        return len(self.rows)

    @property
    def months(self) -> np.ndarray:
        return np.array([r.month for r in self.rows], dtype=int)

    @property
    def genders(self) -> np.ndarray:
        return np.array([r.gender for r in self.rows])

    @property
    def subjects(self) -> np.ndarray:
        return np.array([r.subject_id for r in self.rows])

    def take(self, idx) -> "ImageSet":
        idx = np.asarray(idx, dtype=int)
        return ImageSet(self.images[idx], [self.rows[i] for i in idx])

    def where(self, mask) -> "ImageSet":
        return self.take(np.flatnonzero(mask))


@dataclass(frozen=True)
class FeatureSettings:
    stft: StftParams = field(default_factory=StftParams)
    sample_rate: int = CANONICAL_RATE
    db_floor: float = -80.0

    def key(self) -> str:
        s = self.stft
        return f"v1|{s.window}|{s.window_len}|{s.hop}|{s.fft_len}|{self.sample_rate}|{self.db_floor!r}"


def _image_for_bytes(raw: bytes, settings: FeatureSettings) -> np.ndarray:
    clip = resample(parse_wav(raw), settings.sample_rate)
    return clip_to_image(clip, settings.stft, settings.db_floor).pixels.astype(np.float32)


def _compute_job(args):
    raw, settings = args
    return _image_for_bytes(raw, settings)


def prepare_images(manifest: DatasetManifest, cache_dir=None, settings: FeatureSettings = FeatureSettings(),
                   jobs: int = 1) -> ImageSet:
    """Render one 64x64 spectrogram image per manifest row.

    With ``cache_dir`` set, images are stored as flat float32 files named by
    the SHA-256 of the WAV bytes and feature settings, so reruns skip work.
    """
    missing = [manifest.resolve(r) for r in manifest.rows if not manifest.resolve(r).exists()]
    if missing:
        raise MissingFile(missing)
    cache = Path(cache_dir) if cache_dir is not None else None
    if cache is not None:
        cache.mkdir(parents=True, exist_ok=True)
    images = np.zeros((len(manifest), IMAGE_SIZE, IMAGE_SIZE), dtype=np.float32)
    todo = []
    hits = 0
    for i, row in enumerate(manifest.rows):
        raw = manifest.resolve(row).read_bytes()
        key = hashlib.sha256(settings.key().encode() + b"\0" + raw).hexdigest()
        entry = cache / f"{key}.bin" if cache is not None else None
        if entry is not None and entry.exists():
            images[i] = image_from_bytes(entry.read_bytes()).pixels
            hits += 1
        else:
            todo.append((i, raw, entry))
    if jobs > 1 and len(todo) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(jobs) as pool:
            results = list(pool.map(_compute_job, [(raw, settings) for _, raw, _ in todo], chunksize=8))
    else:
        results = [_image_for_bytes(raw, settings) for _, raw, _ in todo]
    for (i, _, entry), px in zip(todo, results):
        images[i] = px
        if entry is not None:
            entry.write_bytes(px.astype("<f4").tobytes())
    return ImageSet(images, list(manifest.rows), computed=len(todo), cached=hits)
