"""
Configuration records for the cascade, the training objective and sample harvesting.

All three are pydantic models so that values read from TOML/JSON files or HTTP
requests are validated against the same constraints.
"""
import json
import sys
from pathlib import Path
from typing import Any, Dict, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from backend.domain.errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

Alpha = Tuple[float, float, float]

STAGE_KINDS = ("pnet", "rnet", "onet")


def _check_alpha(value: Alpha) -> Alpha:
    if any(a < 0 for a in value):
        raise ValueError("task weights must be non-negative")
    return value


class CascadeConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    min_face: float = Field(20.0, ge=12.0)
    pyramid_factor: float = Field(0.709, gt=0.0, lt=1.0)
    t1: float = Field(0.6, ge=0.0, le=1.0)
    t2: float = Field(0.7, ge=0.0, le=1.0)
    t3: float = Field(0.7, ge=0.0, le=1.0)
    n1_intra: float = Field(0.5, gt=0.0, le=1.0)
    n1_inter: float = Field(0.7, gt=0.0, le=1.0)
    n2: float = Field(0.7, gt=0.0, le=1.0)
    n3: float = Field(0.7, gt=0.0, le=1.0)
    pnet_alpha: Alpha = (1.0, 0.5, 0.5)
    rnet_alpha: Alpha = (1.0, 0.5, 0.5)
    onet_alpha: Alpha = (1.0, 0.5, 1.0)

    @field_validator("pnet_alpha", "rnet_alpha", "onet_alpha")
    @classmethod
    def check_alpha(cls, value: Alpha) -> Alpha:
        return _check_alpha(value)

    def alpha_for(self, kind: str) -> Alpha:
        return getattr(self, f"{kind}_alpha")


class LossWeights(BaseModel):
    """Task weights α plus the SGD knobs of one training stage."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    alpha_det: float = Field(1.0, ge=0.0)
    alpha_box: float = Field(0.5, ge=0.0)
    alpha_landmark: float = Field(0.5, ge=0.0)
    # Step size applied to the batch-mean gradient.
    lr: float = Field(0.01, gt=0.0)
    # Global L2 cap on the batch-mean gradient.
    clip_norm: float = Field(5.0, gt=0.0)
    batch_size: int = Field(64, ge=1)
    ohem_ratio: float = Field(0.7, gt=0.0, le=1.0)
    # Negative : Positive : Part : Landmark
    batch_ratio: Tuple[int, int, int, int] = (3, 1, 1, 2)

    @field_validator("batch_ratio")
    @classmethod
    def check_ratio(cls, value: Tuple[int, int, int, int]) -> Tuple[int, int, int, int]:
        if any(r < 0 for r in value) or sum(value) == 0:
            raise ValueError("batch ratio must be non-negative with a positive sum")
        return value

    @classmethod
    def for_stage(cls, kind: str, cascade: "CascadeConfig | None" = None, **overrides: Any) -> "LossWeights":
        cascade = cascade or CascadeConfig()
        det, box, landmark = cascade.alpha_for(kind)
        values: Dict[str, Any] = {"alpha_det": det, "alpha_box": box, "alpha_landmark": landmark}
        values.update(overrides)
        return cls(**values)


class HarvestConfig(BaseModel):
    """Per-image sample quotas and the attempt budget for random cropping."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    negatives: int = Field(24, ge=0)
    positives: int = Field(8, ge=0)
    parts: int = Field(8, ge=0)
    landmarks: int = Field(8, ge=0)
    attempts_per_sample: int = Field(40, ge=1)
    max_negatives_per_image: int = Field(32, ge=0)


class Settings(BaseModel):
    model_config = ConfigDict(frozen=True)

    cascade: CascadeConfig = CascadeConfig()
    loss: LossWeights = LossWeights()
    harvest: HarvestConfig = HarvestConfig()

    def loss_for(self, kind: str) -> LossWeights:
        """Stage α from the cascade record, optimizer knobs from the loss record."""
        knobs = self.loss.model_dump(include={"lr", "clip_norm", "batch_size", "ohem_ratio", "batch_ratio"})
        return LossWeights.for_stage(kind, self.cascade, **knobs)


def _read_mapping(path: Path) -> Dict[str, Any]:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        if path.suffix.lower() == ".toml":
            data = tomllib.loads(text)
        else:
            data = json.loads(text)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a flat table of fields")
    return data


def settings_from_mapping(data: Dict[str, Any]) -> Settings:
    """
    Split a flat mapping of fields between the three records.
    Unknown keys are rejected so typos do not silently fall back to defaults.
    """
    buckets: Dict[str, Dict[str, Any]] = {"cascade": {}, "loss": {}, "harvest": {}}
    owners = {
        "cascade": CascadeConfig.model_fields,
        "loss": LossWeights.model_fields,
        "harvest": HarvestConfig.model_fields,
    }
    for key, value in data.items():
        for bucket, fields in owners.items():
            if key in fields:
                buckets[bucket][key] = value
                break
        else:
            raise ConfigError(f"unknown config field {key!r}")
    try:
        return Settings(
            cascade=CascadeConfig(**buckets["cascade"]),
            loss=LossWeights(**buckets["loss"]),
            harvest=HarvestConfig(**buckets["harvest"]),
        )
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: Path | None) -> Settings:
    if path is None:
        return Settings()
    return settings_from_mapping(_read_mapping(Path(path)))


def flat_config(settings: Settings) -> Dict[str, Any]:
    """Flat, JSON-ready echo of every configuration field."""
    out: Dict[str, Any] = {}
    for record in (settings.cascade, settings.loss, settings.harvest):
        out.update(record.model_dump(mode="json"))
    return out


def override_cascade(settings: Settings, **values: Any) -> Settings:
    """Copy of `settings` with some CascadeConfig fields replaced and re-validated."""
    try:
        cascade = CascadeConfig(**{**settings.cascade.model_dump(), **values})
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc
    return settings.model_copy(update={"cascade": cascade})
