"""Run configuration: one plain-text ``key = value`` file holding every tunable.

Blank lines and lines starting with ``#`` are ignored. Unknown keys and values that do
not parse as the key's type are rejected before any work starts.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields
from pathlib import Path

from .features import CATALOG_VERSION
from .model import GBMConfig, PipelineConfig
from .signals import PeakConfig

__version__ = "0.1.0"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # boosting
    learning_rate: float = 0.01313
    n_estimators: int = 611
    max_depth: int = 3
    subsample: float = 0.8
    min_leaf: int = 5
    seed: int = 42
    # pipeline
    n_top: int = 22
    prune_threshold: float = 0.85
    use_feature_selection: bool = True
    use_smote: bool = False
    smote_k: int = 5
    # signal
    score_threshold: float = 0.9
    peak_min_period_s: float = 0.133
    peak_floor_percentile: float = 25.0
    peak_drop_fraction: float = 0.25
    # reports
    correlation_alpha: float = 0.01
    icc_variant: str = "ICC(2,1)"

    def validate(self):
        try:
            self.gbm().validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.n_top < 1:
            raise ConfigError("n_top must be at least 1")
        if not 0 < self.prune_threshold <= 1:
            raise ConfigError("prune_threshold must lie in (0, 1]")
        if self.smote_k < 1:
            raise ConfigError("smote_k must be at least 1")
        if not 0 <= self.score_threshold < 1:
            raise ConfigError("score_threshold must lie in [0, 1)")
        if not self.peak_min_period_s > 0:
            raise ConfigError("peak_min_period_s must be positive")
        if not 0 <= self.peak_floor_percentile <= 100:
            raise ConfigError("peak_floor_percentile must lie in [0, 100]")
        if not self.peak_drop_fraction >= 0:
            raise ConfigError("peak_drop_fraction must be nonnegative")
        if not 0 < self.correlation_alpha < 1:
            raise ConfigError("correlation_alpha must lie in (0, 1)")
        if self.icc_variant not in ("ICC(1,1)", "ICC(2,1)", "ICC(3,1)"):
            raise ConfigError(f"unknown icc_variant {self.icc_variant!r}")
        return self

    def gbm(self) -> GBMConfig:
        return GBMConfig(self.learning_rate, self.n_estimators, self.max_depth,
                         self.subsample, self.min_leaf, self.seed)

    def pipeline(self) -> PipelineConfig:
        return PipelineConfig(self.gbm(), self.n_top, self.prune_threshold,
                              self.use_feature_selection, self.use_smote, self.smote_k)

    def peaks(self) -> PeakConfig:
        return PeakConfig(self.peak_min_period_s, self.peak_floor_percentile, self.peak_drop_fraction)

    def items(self):
        return [(f.name, getattr(self, f.name)) for f in fields(self)]

    def canonical_text(self):
        return "".join(f"{k}={_format(v)}\n" for k, v in self.items())

    def hash(self):
        return hashlib.sha256(self.canonical_text().encode("utf-8")).hexdigest()[:16]

    def provenance(self):
        return {"tool_version": __version__, "catalog_version": CATALOG_VERSION,
                "config_hash": self.hash()}


def _format(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(key, text, kind):
    try:
        if kind is bool:
            t = text.lower()
            if t in ("true", "1", "yes"):
                return True
            if t in ("false", "0", "no"):
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot read {text!r} as {kind.__name__}") from None


def parse_config(text: str) -> RunConfig:
    kinds = {f.name: type(f.default) for f in fields(RunConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key = value")
        key, _, raw = line.partition("=")
        key = key.strip()
        if key not in kinds:
            raise ConfigError(f"unknown config key {key!r} (line {lineno})")
        if key in values:
            raise ConfigError(f"config key {key!r} given twice")
        values[key] = _parse_value(key, raw.strip(), kinds[key])
    return RunConfig(**values).validate()


def load_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig().validate()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text)
