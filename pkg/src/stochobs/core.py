"""Shared domain types: operators, interval unions, noise coefficients,
time grids and the reproducible Brownian ensemble."""
from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.special import ndtri

__all__ = [
    "Family",
    "Degeneracy",
    "OperatorSpec",
    "FiniteUnionSet",
    "NoiseModel",
    "TimeGrid",
    "EnsembleSpec",
    "BrownianEnsemble",
    "degenerate_sigma",
    "set_measure",
    "set_intersect_interval",
    "brownian_increments",
]


class Family(str, enum.Enum):
    HEAT = "heat"
    FOURTH_ORDER = "fourth_order"
    DEGENERATE = "degenerate"


class Degeneracy(str, enum.Enum):
    WEAK = "weak"
    STRONG = "strong"


def degenerate_sigma(alpha: float, gamma_choice: float = 1.9) -> float:
    """Spectral growth exponent for ``-(x^alpha u')'``.

    3/4 away from alpha = 1; at alpha = 1 it is ``3 / (2 * gamma_choice)``,
    which lies in (0, 1) only for gamma_choice in (3/2, 2).
    """
    if not 0.0 < alpha < 2.0:
        raise ValueError(f"alpha must lie in (0, 2), got {alpha}")
    if alpha != 1.0:
        return 0.75
    return 3.0 / (2.0 * gamma_choice)


@dataclass(frozen=True)
class OperatorSpec:
    """Which evolution operator ``A`` is used and on which interval."""

    family: Family
    alpha: float | None = None
    degeneracy: Degeneracy | None = None
    interval: tuple[float, float] = (0.0, 1.0)
    sigma_exponent: float = 0.5
    gamma_choice: float = 1.9

    def __post_init__(self):
        lo, hi = self.interval
        if not lo < hi:
            raise ValueError(f"empty interval {self.interval}")
        if not 0.0 < self.sigma_exponent < 1.0:
            raise ValueError(f"sigma_exponent must lie in (0, 1), got {self.sigma_exponent}")
        if self.family is Family.DEGENERATE:
            if (lo, hi) != (0.0, 1.0):
                raise ValueError("degenerate operators live on (0, 1)")
            if self.alpha is None or not 0.0 < self.alpha < 2.0:
                raise ValueError(f"alpha must lie in (0, 2), got {self.alpha}")
            expected = Degeneracy.WEAK if self.alpha < 1.0 else Degeneracy.STRONG
            if self.degeneracy is not expected:
                raise ValueError(
                    f"alpha={self.alpha} requires {expected.value} degeneracy, "
                    f"got {self.degeneracy}"
                )
        elif self.alpha is not None or self.degeneracy is not None:
            raise ValueError("alpha/degeneracy only apply to the degenerate family")

    @classmethod
    def heat(cls, interval=(0.0, 1.0)) -> "OperatorSpec":
        return cls(Family.HEAT, interval=tuple(interval), sigma_exponent=0.5)

    @classmethod
    def fourth_order(cls, interval=(0.0, 1.0)) -> "OperatorSpec":
        return cls(Family.FOURTH_ORDER, interval=tuple(interval), sigma_exponent=0.25)

    @classmethod
    def degenerate(cls, alpha: float, gamma_choice: float = 1.9) -> "OperatorSpec":
        deg = Degeneracy.WEAK if alpha < 1.0 else Degeneracy.STRONG
        return cls(
            Family.DEGENERATE,
            alpha=float(alpha),
            degeneracy=deg,
            sigma_exponent=degenerate_sigma(alpha, gamma_choice),
            gamma_choice=gamma_choice,
        )

    def to_dict(self) -> dict:
        d = {"family": self.family.value, "interval": list(self.interval)}
        if self.family is Family.DEGENERATE:
            d["alpha"] = self.alpha
            d["gamma_choice"] = self.gamma_choice
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "OperatorSpec":
        family = Family(d["family"])
        if family is Family.HEAT:
            return cls.heat(d.get("interval", (0.0, 1.0)))
        if family is Family.FOURTH_ORDER:
            return cls.fourth_order(d.get("interval", (0.0, 1.0)))
        return cls.degenerate(float(d["alpha"]), float(d.get("gamma_choice", 1.9)))


@dataclass(frozen=True)
class FiniteUnionSet:
    """Finite union of disjoint intervals inside an ambient interval.

    The empty union is representable (it is what intersections may
    return); callers that need positive measure check it themselves.
    """

    intervals: tuple[tuple[float, float], ...]
    ambient: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        ivs = tuple((float(a), float(b)) for a, b in self.intervals)
        object.__setattr__(self, "intervals", ivs)
        object.__setattr__(self, "ambient", (float(self.ambient[0]), float(self.ambient[1])))
        lo, hi = self.ambient
        prev = -math.inf
        for a, b in ivs:
            if not a < b:
                raise ValueError(f"degenerate interval ({a}, {b})")
            if a < lo or b > hi:
                raise ValueError(f"interval ({a}, {b}) leaves ambient {self.ambient}")
            if a < prev:
                raise ValueError("intervals must be sorted and pairwise disjoint")
            prev = b

    @classmethod
    def of(cls, *pairs, ambient=(0.0, 1.0)) -> "FiniteUnionSet":
        return cls(tuple(tuple(p) for p in pairs), ambient=tuple(ambient))

    def measure(self) -> float:
        return math.fsum(b - a for a, b in self.intervals)

    def intersect(self, a: float, b: float) -> "FiniteUnionSet":
        if not a < b:
            raise ValueError(f"need a < b, got ({a}, {b})")
        out = []
        for lo, hi in self.intervals:
            c, d = max(lo, a), min(hi, b)
            if c < d:
                out.append((c, d))
        return FiniteUnionSet(tuple(out), self.ambient)

    def minus(self, a: float, b: float) -> "FiniteUnionSet":
        if not a < b:
            raise ValueError(f"need a < b, got ({a}, {b})")
        out = []
        for lo, hi in self.intervals:
            if lo < min(hi, a):
                out.append((lo, min(hi, a)))
            if max(lo, b) < hi:
                out.append((max(lo, b), hi))
        return FiniteUnionSet(tuple(out), self.ambient)

    def contains(self, t) -> np.ndarray:
        """Indicator of the closed intervals evaluated at ``t``."""
        t = np.asarray(t, dtype=float)
        hit = np.zeros(t.shape, dtype=bool)
        for a, b in self.intervals:
            hit |= (t >= a) & (t <= b)
        return hit

    @property
    def inf(self) -> float:
        return self.intervals[0][0]

    @property
    def sup(self) -> float:
        return self.intervals[-1][1]

    def to_list(self) -> list[list[float]]:
        return [[a, b] for a, b in self.intervals]

    @classmethod
    def from_list(cls, pairs, ambient=(0.0, 1.0)) -> "FiniteUnionSet":
        return cls(tuple((float(a), float(b)) for a, b in pairs), ambient=tuple(ambient))


def set_measure(S: FiniteUnionSet) -> float:
    return S.measure()


def set_intersect_interval(S: FiniteUnionSet, a: float, b: float) -> FiniteUnionSet:
    return S.intersect(a, b)


@dataclass(frozen=True)
class NoiseModel:
    """Deterministic noise coefficient ``F(t)``: zero, constant or piecewise constant.

    ``values[i]`` holds on ``[breakpoints[i-1], breakpoints[i])``.
    """

    kind: str = "zero"
    values: tuple[float, ...] = ()
    breakpoints: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "breakpoints", tuple(float(v) for v in self.breakpoints))
        if self.kind == "zero":
            if self.values or self.breakpoints:
                raise ValueError("zero noise takes no values")
        elif self.kind == "constant":
            if len(self.values) != 1 or self.breakpoints:
                raise ValueError("constant noise takes exactly one value")
        elif self.kind == "piecewise":
            if len(self.values) != len(self.breakpoints) + 1:
                raise ValueError("piecewise noise needs len(values) == len(breakpoints) + 1")
            if any(b2 <= b1 for b1, b2 in zip(self.breakpoints, self.breakpoints[1:])):
                raise ValueError("breakpoints must be strictly increasing")
        else:
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError("noise values must be finite")

    @classmethod
    def zero(cls) -> "NoiseModel":
        return cls("zero")

    @classmethod
    def constant(cls, f: float) -> "NoiseModel":
        return cls("constant", (f,))

    @classmethod
    def piecewise(cls, breakpoints: Sequence[float], values: Sequence[float]) -> "NoiseModel":
        return cls("piecewise", tuple(values), tuple(breakpoints))

    @property
    def is_zero(self) -> bool:
        return all(v == 0.0 for v in self.values)

    @property
    def tau(self) -> float:
        """Squared sup-norm of F."""
        if not self.values:
            return 0.0
        return max(abs(v) for v in self.values) ** 2

    def _pieces(self):
        vals = self.values or (0.0,)
        edges = (-math.inf,) + self.breakpoints + (math.inf,)
        return [(edges[i], edges[i + 1], vals[i]) for i in range(len(vals))]

    def value(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if not self.breakpoints:
            return np.full(t.shape, self.values[0] if self.values else 0.0)
        idx = np.searchsorted(np.asarray(self.breakpoints), t, side="right")
        return np.asarray(self.values)[idx]

    def integral(self, t0: float, t1: float, power: int = 1) -> float:
        """``int_{t0}^{t1} F(s)^power ds`` computed exactly."""
        if t1 <= t0:
            return 0.0
        total = []
        for lo, hi, v in self._pieces():
            a, b = max(lo, t0), min(hi, t1)
            if a < b:
                total.append((b - a) * v**power)
        return math.fsum(total)

    def step_means(self, grid: "TimeGrid") -> np.ndarray:
        """Average of F over each grid step; used as the step coefficient of dW."""
        t = grid.nodes
        return np.array([self.integral(t[k], t[k + 1]) / grid.dt for k in range(grid.n_steps)])

    def step_sq_integrals(self, grid: "TimeGrid") -> np.ndarray:
        t = grid.nodes
        return np.array([self.integral(t[k], t[k + 1], 2) for k in range(grid.n_steps)])

    def to_dict(self) -> dict:
        return {"kind": self.kind, "values": list(self.values), "breakpoints": list(self.breakpoints)}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseModel":
        return cls(d.get("kind", "zero"), tuple(d.get("values", ())), tuple(d.get("breakpoints", ())))


@dataclass(frozen=True)
class TimeGrid:
    T: float
    n_steps: int

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"T must be positive, got {self.T}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def nodes(self) -> np.ndarray:
        t = np.arange(self.n_steps + 1) * self.dt
        t[-1] = self.T
        return t

    @property
    def midpoints(self) -> np.ndarray:
        return (np.arange(self.n_steps) + 0.5) * self.dt


@dataclass(frozen=True)
class EnsembleSpec:
    n_paths: int
    master_seed: int

    def __post_init__(self):
        if self.n_paths < 1:
            raise ValueError(f"n_paths must be >= 1, got {self.n_paths}")
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")


_U53 = 2.0**-53


def _path_normals(master_seed: int, path: int, n: int) -> np.ndarray:
    # Philox keyed by (seed, path); word k of the stream feeds step k only.
    raw = np.random.Philox(key=master_seed | (path << 64)).random_raw(n)
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _U53
    return ndtri(u)


def brownian_increments(spec: EnsembleSpec, grid: TimeGrid, threads: int = 1) -> np.ndarray:
    """Increment table of shape ``(n_paths, n_steps)`` with entries ~ N(0, dt).

    Entry (i, k) depends only on (master_seed, i, k), so the table is the
    same for any thread count or path order.
    """
    out = np.empty((spec.n_paths, grid.n_steps))
    sd = math.sqrt(grid.dt)

    def fill(block):
        for i in block:
            out[i] = _path_normals(spec.master_seed, i, grid.n_steps) * sd

    paths = range(spec.n_paths)
    if threads <= 1:
        fill(paths)
    else:
        blocks = [paths[j::threads] for j in range(threads)]
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(fill, blocks))
    return out


@dataclass(frozen=True, eq=False)
class BrownianEnsemble:
    """Sampled Brownian paths shared by every solver that must use common random numbers."""

    spec: EnsembleSpec
    grid: TimeGrid
    dW: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.dW.shape != (self.spec.n_paths, self.grid.n_steps):
            raise ValueError(f"increments must have shape {(self.spec.n_paths, self.grid.n_steps)}, got {self.dW.shape}")

    @classmethod
    def sample(cls, spec: EnsembleSpec, grid: TimeGrid, threads: int = 1) -> "BrownianEnsemble":
        dW = brownian_increments(spec, grid, threads)
        dW.setflags(write=False)
        return cls(spec, grid, dW)

    @property
    def n_paths(self) -> int:
        return self.spec.n_paths

    @cached_property
    def W(self) -> np.ndarray:
        """Paths at the grid nodes, shape ``(n_paths, n_steps + 1)``, W(0) = 0."""
        W = np.zeros((self.n_paths, self.grid.n_steps + 1))
        np.cumsum(self.dW, axis=1, out=W[:, 1:])
        W.setflags(write=False)
        return W

    def same_as(self, other: "BrownianEnsemble") -> bool:
        return self is other or (
            self.spec == other.spec and self.grid == other.grid and np.array_equal(self.dW, other.dW)
        )
