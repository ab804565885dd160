"""Pipeline configuration and the flat ``key = value`` config file format."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .types import EPS_SIGMA, ValidationError

METRICS = ("mahalanobis", "euclidean")


@dataclass
class PipelineConfig:
    r_match: float = 0.10
    k: int = 20
    r_sem: float = 0.04
    eta: float = 0.7
    background_ids: frozenset[int] = field(default_factory=lambda: frozenset({0, 1}))
    lambda_b: float = 0.9
    lambda_d: float = 0.4
    eps_sigma: float = EPS_SIGMA
    distance_metric: str = "mahalanobis"
    max_doublings: int = 5

    def __post_init__(self):
        self.background_ids = frozenset(int(i) for i in self.background_ids)
        self.validate()

    def validate(self) -> None:
        if not 0 < self.eta < 1:
            raise ValidationError(f"eta must lie in (0, 1), got {self.eta}")
        if self.k < 1:
            raise ValidationError(f"k must be >= 1, got {self.k}")
        if not self.r_match > 0:
            raise ValidationError(f"r_match must be positive, got {self.r_match}")
        if not self.r_sem > 0:
            raise ValidationError(f"r_sem must be positive, got {self.r_sem}")
        if self.lambda_b < 0 or self.lambda_d < 0:
            raise ValidationError("loss weights must be non-negative")
        if not self.eps_sigma > 0:
            raise ValidationError("eps_sigma must be positive")
        if self.distance_metric not in METRICS:
            raise ValidationError(f"distance_metric must be one of {METRICS}")

    def replace(self, **changes) -> "PipelineConfig":
        values = asdict(self)
        values.update({k: v for k, v in changes.items() if v is not None})
        return PipelineConfig(**values)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["background_ids"] = sorted(self.background_ids)
        return d


def _coerce(name: str, raw: str):
    types = {f.name: f.type for f in fields(PipelineConfig)}
    if name not in types:
        raise ValidationError(f"unknown config key {name!r}")
    raw = raw.strip()
    if name == "background_ids":
        return frozenset(int(t) for t in raw.replace(",", " ").split())
    if name == "distance_metric":
        return raw
    if name in ("k", "max_doublings"):
        return int(raw)
    return float(raw)


def parse_config(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"config line {lineno}: expected key = value")
        key, raw = line.split("=", 1)
        try:
            values[key.strip()] = _coerce(key.strip(), raw)
        except ValueError as exc:
            raise ValidationError(f"config line {lineno}: {exc}") from exc
    return values


def load_config(path: str | Path | None, **overrides) -> PipelineConfig:
    values = parse_config(Path(path).read_text()) if path else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    return PipelineConfig(**values)


def dump_config(cfg: PipelineConfig) -> str:
    lines = []
    for key, value in cfg.to_dict().items():
        if key == "background_ids":
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
