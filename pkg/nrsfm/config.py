"""
Run configuration and logging setup.

Configuration is a set of frozen dataclasses parsed strictly from JSON
mappings: unknown keys and out-of-range values raise ConfigError.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

from conic import DEFAULT_MAX_ITER, DEFAULT_TOL, available_backends
from errors import ConfigError

LOG_FORMAT = "[%(levelname)s] %(name)s: %(message)s"


def setup_logging(level: str = "INFO", log_file: Optional[Path] = None) -> logging.Logger:
    """Attach a console handler (and optionally a file handler) to the root logger once."""
    root = logging.getLogger()
    numeric = getattr(logging, str(level).upper(), None)
    if not isinstance(numeric, int):
        raise ConfigError(f"unknown log level '{level}'")
    root.setLevel(numeric)
    fmt = logging.Formatter(LOG_FORMAT)
    if not any(getattr(h, "_nrsfm", False) for h in root.handlers):
        handler = logging.StreamHandler()
        handler.setFormatter(fmt)
        handler._nrsfm = True
        root.addHandler(handler)
    if log_file is not None:
        log_file = Path(log_file)
        log_file.parent.mkdir(parents=True, exist_ok=True)
        fh = logging.FileHandler(str(log_file), encoding="utf-8")
        fh.setFormatter(fmt)
        fh._nrsfm = True
        root.addHandler(fh)
    return root


def _check(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


@dataclass(frozen=True)
class SolverConfig:
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    backend: str = "reference"
    max_workers: int = 1

    def __post_init__(self):
        _check(0 < self.tol < 1, f"solver.tol must be in (0, 1), got {self.tol}")
        _check(int(self.max_iter) >= 1, f"solver.max_iter must be >= 1, got {self.max_iter}")
        _check(self.backend in available_backends(),
               f"unknown solver backend '{self.backend}' (available: {', '.join(available_backends())})")
        _check(int(self.max_workers) >= 1, f"solver.max_workers must be >= 1, got {self.max_workers}")


@dataclass(frozen=True)
class SynthConfig:
    """Synthetic scene parameters."""

    family: str = "cylinder"
    rows: int = 10
    cols: int = 15
    spacing: float = 0.05
    views: int = 10
    radius_min: float = 0.4
    radius_max: float = 2.0
    fold_min: float = 10.0
    fold_max: float = 60.0
    width: float = 640.0
    height: float = 480.0
    focal: float = 500.0
    depth: float = 1.5
    noise: float = 0.0
    drop_rate: float = 0.0

    def __post_init__(self):
        _check(self.family in ("cylinder", "hinge"), f"synth.family must be 'cylinder' or 'hinge', got '{self.family}'")
        _check(self.rows >= 2 and self.cols >= 2, "synth grid needs at least 2 x 2 points")
        _check(self.spacing > 0, "synth.spacing must be positive")
        _check(self.views >= 1, "synth.views must be >= 1")
        _check(0 < self.radius_min <= self.radius_max, "synth radii must satisfy 0 < radius_min <= radius_max")
        _check(0 <= self.fold_min <= self.fold_max < 180, "synth fold angles must lie in [0, 180)")
        _check(self.width > 0 and self.height > 0 and self.focal > 0, "synth camera must be positive")
        _check(self.depth > 0, "synth.depth must be positive")
        _check(self.noise >= 0, "synth.noise must be >= 0")
        _check(0 <= self.drop_rate < 1, "synth.drop_rate must be in [0, 1)")


@dataclass(frozen=True)
class RunConfig:
    """Every knob of a command-line run, with defaults resolved."""

    tracks: Optional[str] = None
    new_tracks: Optional[str] = None
    intrinsics: Optional[str] = None
    template: Optional[str] = None
    depths: Optional[str] = None
    scene: Optional[str] = None
    output_dir: str = "out"
    image_width: Optional[float] = None
    image_height: Optional[float] = None

    k: int = 8
    ref_view: Optional[int] = None
    solver: SolverConfig = field(default_factory=SolverConfig)

    focal_step: float = 0.05
    epsilon: float = 0.01
    max_outer: int = 30
    template_max_outer: int = 10
    distance_mode: str = "auto"

    hypotheses: int = 200
    iac_starts: int = 20
    seed: int = 0

    calibrate_new_views: bool = False
    seed_size: Optional[int] = None
    batch_size: int = 150
    threads: int = 1

    synth: SynthConfig = field(default_factory=SynthConfig)
    align: str = "globalScale"
    log_level: str = "INFO"

    def __post_init__(self):
        _check(self.k >= 1, f"k must be >= 1, got {self.k}")
        _check(self.ref_view is None or self.ref_view >= 0, "ref_view must be >= 0")
        _check(0 < self.focal_step < 1, f"focal_step must be in (0, 1), got {self.focal_step}")
        _check(0 < self.epsilon < 1, f"epsilon must be in (0, 1), got {self.epsilon}")
        _check(self.max_outer >= 1 and self.template_max_outer >= 1, "outer iteration caps must be >= 1")
        _check(self.distance_mode in ("auto", "euclidean", "geodesic"),
               f"distance_mode must be auto, euclidean or geodesic, got '{self.distance_mode}'")
        _check(self.hypotheses >= 1, "hypotheses must be >= 1")
        _check(self.iac_starts >= 1, "iac_starts must be >= 1")
        _check(self.seed >= 0, "seed must be >= 0")
        _check((self.seed_size is None or self.seed_size >= 2) and self.batch_size >= 1,
               "seed_size must be >= 2 and batch_size >= 1")
        _check(self.threads >= 1, "threads must be >= 1")
        _check(all(v is None or v > 0 for v in (self.image_width, self.image_height)), "image size must be positive")
        _check(self.align in ("none", "globalScale"), f"align must be none or globalScale, got '{self.align}'")
        _check(isinstance(self.solver, SolverConfig), "solver must be a SolverConfig")
        _check(isinstance(self.synth, SynthConfig), "synth must be a SynthConfig")

    @property
    def workers(self) -> int:
        """Per-view solve pool size, capped by the global thread count."""
        return min(self.threads, self.solver.max_workers)

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "RunConfig":
        if not isinstance(data, Mapping):
            raise ConfigError("configuration must be a JSON object")
        values = _strict(cls, data, "")
        if "solver" in values:
            values["solver"] = SolverConfig(**_strict(SolverConfig, values["solver"], "solver."))
        if "synth" in values:
            values["synth"] = SynthConfig(**_strict(SynthConfig, values["synth"], "synth."))
        try:
            return cls(**values)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path: Optional[Union[str, Path]] = None,
             overrides: Optional[Mapping[str, Any]] = None) -> "RunConfig":
        """Read a JSON config file (optional) and apply overrides (dotted keys allowed)."""
        data: Dict[str, Any] = {}
        if path is not None:
            try:
                data = json.loads(Path(path).read_text())
            except FileNotFoundError:
                raise ConfigError(f"config file not found: {path}") from None
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(data, dict):
                raise ConfigError(f"{path}: configuration must be a JSON object")
        for key, value in (overrides or {}).items():
            if value is None:
                continue
            target = data
            *parents, leaf = key.split(".")
            for part in parents:
                target = target.setdefault(part, {})
            target[leaf] = value
        return cls.from_mapping(data)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def with_overrides(self, **kwargs) -> "RunConfig":
        return replace(self, **kwargs)


def _strict(cls, data: Mapping[str, Any], prefix: str) -> Dict[str, Any]:
    if not isinstance(data, Mapping):
        raise ConfigError(f"'{prefix.rstrip('.')}' must be a JSON object")
    names = {f.name: f for f in fields(cls)}
    values = {}
    for key, value in data.items():
        if key not in names:
            raise ConfigError(f"unknown configuration key '{prefix}{key}'")
        values[key] = _coerce(names[key].type, value, prefix + key)
    return values


_NUMERIC = {"int": int, "float": float, "bool": bool, "str": str}


def _coerce(annotation: Any, value: Any, name: str) -> Any:
    text = str(annotation)
    if isinstance(value, Mapping):
        return value
    if value is None:
        if "Optional" in text:
            return None
        raise ConfigError(f"'{name}' may not be null")
    for key, kind in _NUMERIC.items():
        if text == key or text == f"Optional[{key}]":
            if kind is bool:
                if not isinstance(value, bool):
                    raise ConfigError(f"'{name}' must be true or false, got {value!r}")
                return value
            if kind is int and (isinstance(value, bool) or isinstance(value, float) and not value.is_integer()):
                raise ConfigError(f"'{name}' must be an integer, got {value!r}")
            try:
                return kind(value)
            except (TypeError, ValueError):
                raise ConfigError(f"'{name}' must be {key}, got {value!r}") from None
    return value
