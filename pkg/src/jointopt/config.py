"""Run configuration (JSON, unknown keys rejected) and run manifests."""

from __future__ import annotations

import json
import platform
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .errors import InvalidParams, JointOptError
from .geometry import DEFAULT_THETA, DesignSpace, sample_params, validate_params
from .optimize import ObjectiveConfig, OptimizerConfig
from .simulate import SimConfig


class ConfigError(JointOptError, ValueError):
    pass


SECTIONS = {"sim": SimConfig, "objective": ObjectiveConfig, "optimizer": OptimizerConfig}


@dataclass
class RunConfig:
    space: str = "single"
    # one design, a list of designs, or None for the space default
    theta0: list | None = None
    # extra designs drawn from the seed's generator when > 0
    random_starts: int = 0
    seed: int = 0
    sim: SimConfig = field(default_factory=SimConfig)
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    nu_list: list = field(default_factory=lambda: [0.3, 0.4])
    fd_step: float = 1e-4
    threshold: float = 1e-3
    grad_check_theta: bool = True
    dump_iterations: bool = False
    jobs: int = 1
    out: str = "runs"

    def __post_init__(self):
        try:
            self.space = DesignSpace.parse(self.space).value
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.objective.rng_seed != self.seed:
            # the run seed is the only source of randomness
            self.objective = ObjectiveConfig(**{**asdict(self.objective), "rng_seed": self.seed})
        if self.jobs < 1 or self.fd_step <= 0 or self.threshold < 0 or self.random_starts < 0:
            raise ConfigError("jobs >= 1, fd_step > 0, threshold >= 0 and random_starts >= 0 required")
        for nu in self.nu_list:
            if not 0 <= nu < 0.5:
                raise ConfigError(f"Poisson's ratio must lie in [0, 0.5), got {nu}")

    def designs(self) -> list[np.ndarray]:
        """Starting designs, validated; raises InvalidParams on the first bad one."""
        space = DesignSpace.parse(self.space)
        if self.theta0 is None:
            out = [] if self.random_starts else [np.array(DEFAULT_THETA[space], dtype=float)]
        else:
            t = np.asarray(self.theta0, dtype=float)
            out = [t] if t.ndim == 1 else list(t)
        rng = np.random.default_rng(self.seed)
        out += [sample_params(space, rng) for _ in range(self.random_starts)]
        for t in out:
            if len(t) != space.dim:
                raise InvalidParams([f"{space.value} needs {space.dim} parameters, got {len(t)}"])
            bad = validate_params(space, t, self.sim.domain)
            if bad:
                raise InvalidParams(bad)
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.theta0 is not None:
            d["theta0"] = np.asarray(self.theta0, dtype=float).tolist()
        return d


def _build(cls, data: dict, where: str):
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    data = dict(data)
    for key, cls in SECTIONS.items():
        if key in data:
            if not isinstance(data[key], dict):
                raise ConfigError(f"{key} must be an object")
            data[key] = _build(cls, data[key], key)
    return _build(RunConfig, data, "config")


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read a JSON config (or start from defaults) and apply top-level overrides."""
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    for k, v in (overrides or {}).items():
        if v is not None:
            data[k] = v
    return config_from_dict(data)


@dataclass
class RunManifest:
    command: str
    config: dict
    tool_version: str = __version__
    platform: str = field(default_factory=platform.platform)
    started: str = ""
    finished: str = ""
    artifacts: list = field(default_factory=list)
    converged: dict = field(default_factory=dict)
    results: dict = field(default_factory=dict)
    exit_code: int = 0

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    @classmethod
    def read(cls, path) -> "RunManifest":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(**data)
