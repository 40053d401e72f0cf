import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from .errors import ConfigError

EXPERIMENTS = (
    "solve",
    "planar_sweep",
    "spaceform_sweep",
    "conformal_experiment",
    "cylinder_crosscheck",
    "large_sigma",
    "comparison_product",
    "convergence_study",
)


class Config:
    """Per-user defaults kept in ``~/.steklab/config.json``."""

    def __init__(self):
        self.config_dir = Path.home() / ".steklab"
        self.config_file = self.config_dir / "config.json"
        self.config = self._load_config()

    def _load_config(self) -> Dict[str, Any]:
        config = self._default_config()
        if self.config_file.exists():
            try:
                with open(self.config_file, "r") as f:
                    config.update(json.load(f))
            except (json.JSONDecodeError, OSError, TypeError, ValueError):
                return self._default_config()
        return config

    def _default_config(self) -> Dict[str, Any]:
        return {
            "refinement": 4,
            "k": 10,
            "seed": 42,
            "tolerance": 0.01,
            "solver": "auto",
            "workers": 1,
        }

    def save_config(self):
        self.config_dir.mkdir(exist_ok=True)
        with open(self.config_file, "w") as f:
            json.dump(self.config, f, indent=2)

    def get(self, key: str, default: Any = None) -> Any:
        return self.config.get(key, default)

    def set(self, key: str, value: Any):
        self.config[key] = value
        self.save_config()


def _require(condition: bool, message: str):
    if not condition:
        raise ConfigError(message)


def _is_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


@dataclass
class ExperimentConfig:
    """Validated experiment description.

    Optional parameters left as None fall back to per-experiment defaults
    in the harness.
    """

    experiment: str
    domains: List[Dict] = field(default_factory=list)
    metric: Dict = field(default_factory=lambda: {"kind": "euclidean"})
    density: Dict = field(default_factory=lambda: {"kind": "uniform", "value": 1.0})
    k: int = 10
    seed: int = 42
    refinement: Optional[int] = None
    count: Optional[int] = None
    levels: Optional[List[int]] = None
    decay_values: Optional[List[float]] = None
    lambda2_values: Optional[List[float]] = None
    circumference: Optional[float] = None
    length: Optional[float] = None
    tolerance: float = 0.01
    workers: int = 1
    solver: str = "auto"
    profile: str = "linear"
    gain: Optional[float] = None
    r0: Optional[float] = None
    suites: Optional[List[str]] = None

    def __post_init__(self):
        _require(self.experiment in EXPERIMENTS, f"unknown experiment {self.experiment!r}; choose from {', '.join(EXPERIMENTS)}")
        _require(isinstance(self.domains, list) and all(isinstance(d, dict) for d in self.domains), "'domains' must be a list of objects")
        _require(isinstance(self.metric, dict) and "kind" in self.metric, "'metric' must be an object with a 'kind'")
        _require(isinstance(self.density, dict) and "kind" in self.density, "'density' must be an object with a 'kind'")
        _require(_is_int(self.k) and self.k >= 1, f"'k' must be a positive integer, got {self.k!r}")
        _require(_is_int(self.seed), f"'seed' must be an integer, got {self.seed!r}")
        for name in ("refinement", "count"):
            value = getattr(self, name)
            _require(value is None or (_is_int(value) and value >= 0), f"'{name}' must be a non-negative integer")
        _require(self.count is None or self.count >= 1, "'count' must be at least 1")
        _require(_is_int(self.workers) and self.workers >= 1, "'workers' must be a positive integer")
        _require(_is_number(self.tolerance) and self.tolerance >= 0, "'tolerance' must be a non-negative number")
        for name in ("levels", "decay_values", "lambda2_values"):
            value = getattr(self, name)
            _require(
                value is None or (isinstance(value, list) and value and all(_is_number(v) for v in value)),
                f"'{name}' must be a non-empty list of numbers",
            )
        _require(self.levels is None or all(_is_int(v) and v >= 0 for v in self.levels), "'levels' must be non-negative integers")
        for name in ("circumference", "length", "gain", "r0"):
            value = getattr(self, name)
            _require(value is None or (_is_number(value) and value > 0), f"'{name}' must be a positive number")
        _require(self.profile in ("linear", "quadratic"), f"unknown profile {self.profile!r}")
        _require(self.solver in ("auto", "splu", "cholmod", "cg"), f"unknown solver {self.solver!r}")
        _require(self.suites is None or isinstance(self.suites, list), "'suites' must be a list")

    @classmethod
    def from_dict(cls, data: Dict, defaults: Optional[Config] = None) -> "ExperimentConfig":
        _require(isinstance(data, dict), "experiment config must be a JSON object")
        _require("experiment" in data, "experiment config needs an 'experiment' field")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        _require(not unknown, f"unknown config field(s): {', '.join(unknown)}")
        values = dict(data)
        if defaults is not None:
            for key in ("k", "seed", "tolerance", "solver", "workers"):
                values.setdefault(key, defaults.get(key))
        try:
            return cls(**values)
        except TypeError as e:
            raise ConfigError(str(e)) from e

    @classmethod
    def from_file(cls, path, defaults: Optional[Config] = None) -> "ExperimentConfig":
        path = Path(path)
        try:
            with open(path, "r") as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        return cls.from_dict(data, defaults)

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        """Copy with every non-None override applied (CLI flags win)."""
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update({key: value for key, value in overrides.items() if value is not None})
        return ExperimentConfig(**values)

    def to_dict(self) -> Dict:
        return {f.name: getattr(self, f.name) for f in fields(self) if getattr(self, f.name) is not None}

    def levels_or(self, default: Tuple[int, ...]) -> List[int]:
        return list(self.levels) if self.levels else list(default)
