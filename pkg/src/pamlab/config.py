"""Run configuration: one JSON-serializable object drives every
subcommand, and an identical config plus seed reproduces identical
outputs."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .errors import ConfigError
from .field_solver import ModelParams

__all__ = ["RunConfig", "parse_beta_grid"]

KNOWN_TESTS = ("martingale", "qv", "logz", "free-energy", "localization")


def parse_beta_grid(text: str) -> list[float]:
    """Inclusive arithmetic grid from a string "start:stop:step"."""
    parts = text.split(":")
    if len(parts) != 3:
        raise ConfigError(f"beta grid {text!r} must look like start:stop:step")
    try:
        a, b, step = (float(p) for p in parts)
    except ValueError as exc:
        raise ConfigError(f"beta grid {text!r} has a non-numeric part") from exc
    if step <= 0 or b < a:
        raise ConfigError(f"beta grid {text!r} needs step > 0 and stop >= start")
    out = []
    k = 0
    while True:
        v = a + k * step
        if v > b + 1e-12:
            break
        out.append(round(v, 12))
        k += 1
    return out


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs.  Model fields mirror ModelParams; the rest
    configure which tests run and how the scan/window subcommands sample.
    Defaults finish in well under five minutes on one core."""

    # model
    d: int = 1
    kappa: float = 1.0
    beta: float = 0.5
    dt: float = 0.01
    T: float = 5.0
    box_radius: int | None = None
    master_seed: int = 20260814
    replicas: int = 200
    checkpoint_stride: int = 10
    exact_diffusion: bool = False
    # verification
    tests: tuple[str, ...] = KNOWN_TESTS
    window: float = 2.0
    # window decomposition
    t0: float | None = None
    eps0: float = 1.0 / 32.0
    ito_stride: int = 2
    # second-moment and scans
    pairs: int = 2000
    beta_grid: str = "0.25:1.25:0.25"
    slope_threshold: float = 0.02
    windowmax_threshold: float = 0.05
    # plumbing
    out_dir: str = "pamlab-out"
    workers: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "tests", tuple(self.tests))
        for name in self.tests:
            if name not in KNOWN_TESTS:
                raise ConfigError(
                    f"unknown test {name!r}; known: {', '.join(KNOWN_TESTS)}"
                )
        if self.window <= 0:
            raise ConfigError(f"window must be positive, got {self.window!r}")
        if self.t0 is not None and self.t0 < 0:
            raise ConfigError(f"t0 must be nonnegative, got {self.t0!r}")
        if self.ito_stride < 1:
            raise ConfigError(f"ito_stride must be >= 1, got {self.ito_stride!r}")
        if self.pairs < 2:
            raise ConfigError(f"pairs must be >= 2, got {self.pairs!r}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers!r}")
        if self.slope_threshold < 0 or self.windowmax_threshold < 0:
            raise ConfigError("classification thresholds must be nonnegative")
        parse_beta_grid(self.beta_grid)
        self.model_params()  # surface model-field violations now

    def model_params(self, **overrides) -> ModelParams:
        kw = {
            "d": self.d,
            "kappa": self.kappa,
            "beta": self.beta,
            "dt": self.dt,
            "T": self.T,
            "box_radius": self.box_radius,
            "master_seed": self.master_seed,
            "replicas": self.replicas,
            "checkpoint_stride": self.checkpoint_stride,
        }
        kw.update(overrides)
        return ModelParams(**kw)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["tests"] = list(self.tests)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**data)

    @classmethod
    def from_json(cls, path: str | Path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        return cls.from_dict(data)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
