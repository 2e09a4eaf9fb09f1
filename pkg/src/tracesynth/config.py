"""Run configuration."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

import yaml

from .errors import ConfigError
from .model import CF_BOUNDS, Gas
from .temporal import Month, format_month, parse_month

REQUIRED_INPUTS = ("assets", "subsectors", "country_totals", "proxy", "profiles", "boundaries")
OPTIONAL_INPUTS = (
    "reported",
    "country_activity",
    "gwp",
    "rubric",
    "reference_ghg",
    "reference_pollutants",
    "reference_ghg_secondary",
    "reference_pollutants_secondary",
)
DEFAULT_WINDOW = ((2021, 1), (2021, 12))


def parse_window(text: str) -> tuple[Month, Month]:
    """``"2021-01:2023-12"`` -> ((2021, 1), (2023, 12))."""
    try:
        first, last = text.split(":")
        window = (parse_month(first), parse_month(last))
    except (ValueError, TypeError):
        raise ConfigError(f"window {text!r} is not YYYY-MM:YYYY-MM") from None
    if window[1] < window[0]:
        raise ConfigError(f"window {text!r} ends before it starts")
    return window


@dataclass(frozen=True)
class RunConfig:
    inputs: Mapping[str, Path]
    window: tuple[Month, Month] = DEFAULT_WINDOW
    horizon: int = 100
    cf_mode: str = "strict"
    formats: tuple[str, ...] = ("csv",)
    jobs: int = 1
    change_threshold: float = 0.01
    integral: bool = False
    emitting_ratio: float | None = None
    pollutants: tuple[Gas, ...] | None = None
    source: Path | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        missing = [k for k in REQUIRED_INPUTS if k not in self.inputs]
        if missing:
            raise ConfigError(f"config lacks input(s): {', '.join(missing)}")
        unknown = [k for k in self.inputs if k not in REQUIRED_INPUTS + OPTIONAL_INPUTS]
        if unknown:
            raise ConfigError(f"unknown input(s): {', '.join(unknown)}")
        if self.horizon not in (100, 20):
            raise ConfigError(f"horizon must be 100 or 20, got {self.horizon}")
        if self.cf_mode not in CF_BOUNDS:
            raise ConfigError(f"cf_mode must be one of {sorted(CF_BOUNDS)}")
        bad = [f for f in self.formats if f not in ("csv", "geojson")]
        if bad or not self.formats:
            raise ConfigError(f"formats must be csv and/or geojson, got {list(self.formats)}")
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")
        if self.change_threshold < 0:
            raise ConfigError("change_threshold must be non-negative")
        if self.emitting_ratio is not None and not 0 <= self.emitting_ratio <= 1:
            raise ConfigError("emitting_ratio must lie in [0, 1]")
        if self.pollutants and any(not g.is_pollutant for g in self.pollutants):
            raise ConfigError("pollutants must be non-GHG gases")
        if self.window[1] < self.window[0]:
            raise ConfigError("window ends before it starts")

    @property
    def cf_max(self) -> float:
        return CF_BOUNDS[self.cf_mode]

    @property
    def years(self) -> list[int]:
        return list(range(self.window[0][0], self.window[1][0] + 1))

    def path(self, name: str) -> Path | None:
        return self.inputs.get(name)

    def check_files(self) -> None:
        absent = [str(p) for p in self.inputs.values() if not Path(p).is_file()]
        if absent:
            raise ConfigError(f"input file(s) not found: {', '.join(absent)}")

    def with_overrides(self, **changes: Any) -> "RunConfig":
        changes = {k: v for k, v in changes.items() if v is not None}
        return replace(self, **changes)

    def to_metadata(self) -> dict[str, Any]:
        """Settings that determine outputs, safe to embed in exports.

        Input files are named by basename only so relocating a fixture does
        not change the bytes written; ``jobs`` is left out because it never
        changes results.
        """
        return {
            "inputs": {k: Path(v).name for k, v in sorted(self.inputs.items())},
            "window": f"{format_month(self.window[0])}:{format_month(self.window[1])}",
            "horizon": self.horizon,
            "cf_mode": self.cf_mode,
            "integral": self.integral,
            "emitting_ratio": self.emitting_ratio,
            "pollutants": [g.value for g in self.pollutants] if self.pollutants else None,
        }

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any], base_dir: Path | None = None) -> "RunConfig":
        base = Path(base_dir) if base_dir is not None else Path.cwd()
        raw_inputs = data.get("inputs") or {}
        if not isinstance(raw_inputs, Mapping):
            raise ConfigError("inputs must be a mapping of name -> path")
        inputs = {k: (base / str(v)).resolve() for k, v in raw_inputs.items()}
        kwargs: dict[str, Any] = {"inputs": inputs}
        if "window" in data:
            kwargs["window"] = parse_window(str(data["window"]))
        for key, conv in (
            ("horizon", int),
            ("cf_mode", str),
            ("jobs", int),
            ("change_threshold", float),
            ("integral", bool),
        ):
            if key in data:
                try:
                    kwargs[key] = conv(data[key])
                except (TypeError, ValueError):
                    raise ConfigError(f"{key}={data[key]!r} is invalid") from None
        if "formats" in data:
            fmts = data["formats"]
            kwargs["formats"] = (fmts,) if isinstance(fmts, str) else tuple(fmts)
        if data.get("emitting_ratio") is not None:
            kwargs["emitting_ratio"] = float(data["emitting_ratio"])
        if data.get("pollutants"):
            kwargs["pollutants"] = tuple(Gas.parse(g) for g in data["pollutants"])
        unknown = set(data) - {
            "inputs", "window", "horizon", "cf_mode", "jobs", "change_threshold",
            "integral", "formats", "emitting_ratio", "pollutants",
        }
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        try:
            data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, Mapping):
            raise ConfigError(f"{path}: top level must be a mapping")
        return replace(cls.from_mapping(data, path.parent), source=path)
