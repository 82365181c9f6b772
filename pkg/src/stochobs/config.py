"""Experiment configuration documents and run records."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from typing import Any

from .core import Family, FiniteUnionSet, NoiseModel, OperatorSpec

__all__ = ["PIPELINES", "ConfigError", "ExperimentConfig", "RunRecord", "config_hash"]

PIPELINES = ("spectra", "specineq", "bsde-check", "telescope", "observability", "control")


class ConfigError(ValueError):
    """Validation failure; the message starts with the offending field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def _check(cond: bool, path: str, message: str):
    if not cond:
        raise ConfigError(path, message)


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment. Times are in units of the horizon ``T``; space is the operator interval.

    ``gamma`` and ``lambda_grid`` default to the operator's exponent and to ten
    points between the first and ``m``-th eigenvalue. ``refine_G`` replaces
    ``G`` by its cut-off part ``G0`` away from the degenerate endpoint.
    """

    pipeline: str = "specineq"
    operator: OperatorSpec = field(default_factory=OperatorSpec.heat)
    G: FiniteUnionSet = field(default_factory=lambda: FiniteUnionSet.of((0.0, 0.5)))
    E: FiniteUnionSet = field(default_factory=lambda: FiniteUnionSet.of((0.0, 0.5)))
    T: float = 1.0
    noise: NoiseModel = field(default_factory=NoiseModel.zero)
    m: int = 10
    m_sim: int | None = None
    n_steps: int = 200
    n_paths: int = 10_000
    seed: int = 0
    lambda_grid: tuple[float, ...] | None = None
    gamma: float | None = None
    epsilon: float = 1e-10
    n_max: int = 60
    C: float | None = None
    mesh_n: int = 2000
    n_quad: int = 512
    n_eta: int = 20
    m_values: tuple[int, ...] = (4, 6, 8, 10)
    sign: int = 1
    refine_G: bool | None = None

    def __post_init__(self):
        _check(self.pipeline in PIPELINES, "pipeline", f"must be one of {PIPELINES}, got {self.pipeline!r}")
        _check(self.T > 0, "T", "must be positive")
        _check(self.m >= 1, "m", "must be at least 1")
        _check(self.m_sim is None or self.m_sim >= self.m, "m_sim", "must be at least m")
        _check(self.n_steps >= 1, "n_steps", "must be at least 1")
        _check(self.n_paths >= 1, "n_paths", "must be at least 1")
        _check(0 <= self.seed < 2**64, "seed", "must be a 64-bit unsigned integer")
        _check(self.gamma is None or 0 < self.gamma < 1, "gamma", "must lie in (0, 1)")
        _check(self.epsilon >= 0, "epsilon", "must be nonnegative")
        _check(self.n_max >= 2, "n_max", "must be at least 2")
        _check(self.C is None or self.C > 0, "C", "must be positive")
        _check(self.n_eta >= 1, "n_eta", "must be at least 1")
        _check(self.sign in (1, -1), "sign", "must be +1 or -1")
        _check(all(k >= 1 for k in self.m_values), "m_values", "entries must be at least 1")
        _check(self.E.measure() > 0, "E", "must have positive measure")
        _check(self.G.measure() > 0, "G", "must have positive measure")
        _check(self.E.sup <= self.T, "E", f"must lie in (0, T = {self.T})")
        lo, hi = self.operator.interval
        _check(self.G.inf >= lo and self.G.sup <= hi, "G", f"must lie in the operator interval {self.operator.interval}")
        if self.lambda_grid is not None:
            _check(len(self.lambda_grid) >= 1, "lambda_grid", "must not be empty")
        if self.pipeline == "control":
            _check(max(self.m_values) <= self.simulation_modes, "m_values", "exceed the simulation modes")

    @property
    def degenerate(self) -> bool:
        return self.operator.family is Family.DEGENERATE

    @property
    def use_G0(self) -> bool:
        return self.degenerate if self.refine_G is None else self.refine_G

    @property
    def exponent(self) -> float:
        return self.operator.sigma_exponent if self.gamma is None else self.gamma

    @property
    def simulation_modes(self) -> int:
        if self.m_sim is not None:
            return self.m_sim
        return 2 * max(self.m, *self.m_values) if self.pipeline == "control" else 2 * self.m

    def replace(self, **changes) -> "ExperimentConfig":
        d = self.to_dict()
        d.update(changes)
        return ExperimentConfig.from_dict(d)

    def to_dict(self) -> dict:
        d = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (OperatorSpec, NoiseModel)):
                v = v.to_dict()
            elif isinstance(v, FiniteUnionSet):
                v = {"intervals": v.to_list(), "ambient": list(v.ambient)}
            elif isinstance(v, tuple):
                v = list(v)
            d[f.name] = v
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(unknown[0], "unknown field")
        kw: dict[str, Any] = {}
        for name, v in d.items():
            try:
                kw[name] = _parse_field(name, v)
            except ConfigError:
                raise
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(name, str(exc)) from exc
        return cls(**kw)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def hash(self) -> str:
        return config_hash(self)


def _parse_set(v) -> FiniteUnionSet:
    if isinstance(v, dict):
        return FiniteUnionSet.from_list(v["intervals"], v.get("ambient", (0.0, 1.0)))
    return FiniteUnionSet.from_list(v)


def _parse_field(name: str, v):
    if name == "operator":
        return OperatorSpec.from_dict(v)
    if name == "noise":
        return NoiseModel.from_dict(v)
    if name in ("G", "E"):
        return _parse_set(v)
    if name in ("T", "epsilon") or (name in ("gamma", "C") and v is not None):
        return float(v)
    if name in ("m", "n_steps", "n_paths", "seed", "n_max", "mesh_n", "n_quad", "n_eta", "sign") or (
        name == "m_sim" and v is not None
    ):
        if isinstance(v, bool) or int(v) != v:
            raise ConfigError(name, f"must be an integer, got {v!r}")
        return int(v)
    if name == "lambda_grid" and v is not None:
        return tuple(float(x) for x in v)
    if name == "m_values":
        return tuple(int(x) for x in v)
    return v


def config_hash(config: ExperimentConfig) -> str:
    """SHA-256 of the canonical JSON form; equal for semantically equal configs."""
    canon = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


@dataclass
class RunRecord:
    config_hash: str
    timestamp: str
    version: str
    run_dir: str
    pipeline: str
    outputs: list[str] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(**d)
