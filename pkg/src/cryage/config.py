"""Flat ``key = value`` run configuration with a documented default for every key.

Example file::

    # desk-scale run
    seed = 7
    per_month = 150
    epochs = 30
    target_loss = 0.01
    f1_mean = 1470, 1470, 1620, 1770, 1921, 1921, 1921

Blank lines and ``#`` comments are ignored. Keys not listed in ``DEFAULTS``
are rejected so typos surface immediately. Monthly synthesis overrides take
seven comma-separated values (months 0..6).
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .cnn.training import TrainConfig
from .errors import ConfigError
from .experiments.manifest import FeatureSettings
from .experiments.protocols import ProtocolConfig
from .features import StftParams
from .synth import AgeParameterTable


@dataclass(frozen=True)
class CliConfig:
    seed: int = 0  # base seed for synthesis, fold shuffles and weight init
    sample_rate: int = 16000
    stft_window_len: int = 512
    stft_hop: int = 256
    stft_fft_len: int = 512
    db_floor: float = -80.0
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-3
    target_loss: float | None = None  # stop training once the epoch loss falls to this
    n_runs: int = 10
    k_folds: int = 5
    pair_mode: str = "anchored"  # "anchored" (anchors 0-2, 15 pairs) or "full" (all pairs)
    months: str = "0-6"
    per_month: int = 150
    male_fraction: float = 0.5
    jobs: int = 1
    corpus_dir: str = "corpus"
    cache_dir: str = "cache"
    report_dir: str = "report"
    figures: bool = True
    table_overrides: dict = field(default_factory=dict)

    def stft(self) -> StftParams:
        return StftParams(self.stft_window_len, self.stft_hop, self.stft_fft_len)

    def features(self) -> FeatureSettings:
        return FeatureSettings(self.stft(), self.sample_rate, self.db_floor)

    def train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, learning_rate=self.learning_rate,
                           rng_seed=self.seed, target_loss=self.target_loss)

    def protocol(self) -> ProtocolConfig:
        return ProtocolConfig(self.train_config(), self.n_runs, self.k_folds, self.seed, self.jobs)

    def table(self) -> AgeParameterTable:
        table = AgeParameterTable(**{k: np.array(v) for k, v in self.table_overrides.items()})
        table.check()
        return table

    def month_list(self):
        return parse_months(self.months)


DEFAULTS = {f.name: f.default for f in fields(CliConfig) if f.name != "table_overrides"}
TABLE_KEYS = AgeParameterTable.COLUMNS


def parse_months(text: str):
    """``"0-6"`` or ``"0,1,4"`` (or a mix such as ``"0-2,4"``) -> sorted month list."""
    months = set()
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if "-" in part:
                lo, hi = (int(x) for x in part.split("-", 1))
                months.update(range(lo, hi + 1))
            else:
                months.add(int(part))
        except ValueError:
            raise ConfigError(f"cannot parse months {text!r}") from None
    if not months or min(months) < 0 or max(months) > 6:
        raise ConfigError(f"months must lie in [0, 6], got {text!r}")
    return sorted(months)


def _coerce(key: str, raw: str):
    default = DEFAULTS[key]
    raw = raw.strip()
    try:
        if key == "target_loss":
            return None if raw.lower() in ("", "none") else float(raw)
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def _table_values(key: str, raw: str):
    try:
        vals = [float(x) for x in raw.split(",")]
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    if len(vals) != 7:
        raise ConfigError(f"{key} needs 7 comma-separated monthly values, got {len(vals)}")
    return vals


def from_mapping(values: dict, base: CliConfig | None = None) -> CliConfig:
    cfg = base or CliConfig()
    updates, table = {}, dict(cfg.table_overrides)
    for key, raw in values.items():
        key = key.strip().lower()
        if key in TABLE_KEYS:
            table[key] = _table_values(key, str(raw))
        elif key in DEFAULTS:
            updates[key] = _coerce(key, str(raw))
        else:
            raise ConfigError(f"unknown config key {key!r}")
    cfg = replace(cfg, **updates, table_overrides=table)
    validate(cfg)
    return cfg


def validate(cfg: CliConfig) -> None:
    if cfg.pair_mode not in ("anchored", "full"):
        raise ConfigError(f"pair_mode must be 'anchored' or 'full', got {cfg.pair_mode!r}")
    if not 0.0 <= cfg.male_fraction <= 1.0:
        raise ConfigError("male_fraction must lie in [0, 1]")
    for name in ("epochs", "batch_size", "n_runs", "per_month", "jobs", "sample_rate"):
        if getattr(cfg, name) < 1:
            raise ConfigError(f"{name} must be >= 1")
    if cfg.k_folds < 2:
        raise ConfigError("k_folds must be >= 2")
    parse_months(cfg.months)
    try:
        cfg.stft()
        cfg.table()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path=None, overrides: dict | None = None) -> CliConfig:
    """Defaults, then the file at ``path`` (if any), then ``overrides``."""
    cfg = CliConfig()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#",),
                                           inline_comment_prefixes=("#",))
        try:
            parser.read_string("[cryage]\n" + path.read_text())
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc.message.splitlines()[0]}") from None
        cfg = from_mapping(dict(parser["cryage"]), cfg)
    if overrides:
        cfg = from_mapping({k: v for k, v in overrides.items() if v is not None}, cfg)
    validate(cfg)
    return cfg


def render_defaults() -> str:
    """The default configuration as a commented file."""
    lines = ["# cryage configuration; every key shown with its default"]
    for key, value in DEFAULTS.items():
        lines.append(f"{key} = {'none' if value is None else str(value).lower() if isinstance(value, bool) else value}")
    table = AgeParameterTable()
    for key in TABLE_KEYS:
        lines.append(f"# {key} = " + ", ".join(f"{v:g}" for v in getattr(table, key)))
    return "\n".join(lines) + "\n"
