"""Geometric time sequences for the telescoping argument and the assembled
observability constant.

Inside one component ``(a, b)`` of the observation set ``E`` the points
``l_n`` increase geometrically from ``l_1 = (a + b) / 2`` towards ``l = b``
with gap ratio ``q = ((C + 1/2) / (C + 1))^((1 - gamma) / gamma)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bsde import TerminalDatum, solve_backward_closed_form
from .core import BrownianEnsemble, FiniteUnionSet, NoiseModel
from .forward import support_weights
from .spectra import SpectralBasis
from .specineq import full_gram

__all__ = [
    "TelescopeSequence",
    "SequenceError",
    "find_anchor",
    "gap_ratio",
    "build_sequence",
    "log_observability_constant",
    "assemble_constant",
    "ObservabilityRatio",
    "empirical_observability_ratio",
    "write_report",
]

RATIO_TOL = 1e-12
# largest argument of exp before float overflow
LOG_MAX = 709.0


class SequenceError(ValueError):
    def __init__(self, message: str, violations: list[int] | None = None):
        super().__init__(message)
        self.violations = violations or []


@dataclass(frozen=True, eq=False)
class TelescopeSequence:
    ell: float
    ell_1: float
    q: float
    ell_n: np.ndarray = field(repr=False)
    tau_n: np.ndarray = field(repr=False)
    C_used: float
    gamma: float
    checks: list[dict] = field(default_factory=list, repr=False)

    @property
    def n_used(self) -> int:
        return len(self.tau_n)

    @property
    def gaps(self) -> np.ndarray:
        return np.diff(self.ell_n)

    @property
    def first_gap(self) -> float:
        """``l_2 - l_1`` as given by the closed form, free of summation round-off."""
        return (self.ell - self.ell_1) * (1.0 - self.q)


def find_anchor(E: FiniteUnionSet) -> tuple[float, float]:
    """Right end and midpoint of the longest component of ``E`` (leftmost on ties)."""
    if E.measure() <= 0:
        raise ValueError("E must have positive measure")
    longest = max(b - a for a, b in E.intervals)
    # lengths equal up to round-off count as ties
    a, b = next((a, b) for a, b in E.intervals if b - a >= longest * (1 - 1e-12))
    return float(b), 0.5 * (a + b)


def gap_ratio(C: float, gamma: float) -> float:
    if C <= 0:
        raise ValueError(f"C must be positive, got {C}")
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    return ((C + 0.5) / (C + 1.0)) ** ((1.0 - gamma) / gamma)


def build_sequence(
    E: FiniteUnionSet, ell: float, ell_1: float, C: float, gamma: float, n_max: int = 60, T: float | None = None
) -> TelescopeSequence:
    """Points ``l_1 < l_2 < ... < l`` with gaps ``d_n = (l - l_1)(1 - q) q^(n-1)``
    and interior points ``tau_n = l_{n+1} - d_n / 6``.

    Stops early once a gap falls below the resolution of ``l``. Every stored
    index is checked for the gap ratio, ``l_n < tau_n < l_{n+1}`` and the
    density conditions ``|E ∩ (l_n, l_{n+1})| >= d_n / 3``,
    ``|E ∩ (l_n, tau_n)| >= d_n / 6``.
    """
    T = E.ambient[1] if T is None else T
    if not 0.0 < ell_1 < ell <= T:
        raise ValueError(f"need 0 < ell_1 < ell <= T, got ell_1={ell_1}, ell={ell}, T={T}")
    if n_max < 2:
        raise ValueError("n_max must be at least 2")
    q = gap_ratio(C, gamma)
    span = ell - ell_1
    d = span * (1.0 - q) * q ** np.arange(n_max)
    # gaps below a few ulps of ell cannot separate l_n, tau_n, l_{n+1}
    d = d[d > 64 * np.finfo(float).eps * ell]
    if len(d) < 2:
        raise SequenceError("q is too small to produce two resolvable gaps")
    ell_n = ell_1 + np.concatenate([[0.0], np.cumsum(d)])
    tau_n = ell_n[1:] - d / 6

    checks, bad = [], []
    diffs = np.diff(ell_n)
    for n in range(len(d)):
        lo, hi, tau = ell_n[n], ell_n[n + 1], tau_n[n]
        dn = hi - lo
        ratio_err = abs(diffs[n + 1] - q * diffs[n]) if n + 1 < len(diffs) else 0.0
        m_full = E.intersect(lo, hi).measure()
        m_half = E.intersect(lo, tau).measure()
        c = {
            "n": n + 1,
            "gap": float(dn),
            "ratio_error": float(ratio_err),
            "tau_margin": float(min(tau - lo, hi - tau)),
            "measure_margin": float(m_full - dn / 3),
            "half_measure_margin": float(m_half - dn / 6),
        }
        ok = (
            ratio_err <= RATIO_TOL * max(1.0, ell)
            and lo < tau < hi
            and m_full >= dn / 3 * (1 - 1e-12)
            and m_half >= dn / 6 * (1 - 1e-12)
        )
        c["ok"] = bool(ok)
        checks.append(c)
        if not ok:
            bad.append(n + 1)
    # stored partial sum plus the analytic tail must close on ell
    closure = abs(ell_n[-1] + span * q ** len(d) - ell)
    if closure > RATIO_TOL * max(1.0, ell):
        raise SequenceError("geometric series does not close on ell - ell_1")
    if bad:
        raise SequenceError(f"sequence conditions fail at n = {bad}", bad)
    return TelescopeSequence(float(ell), float(ell_1), q, ell_n, tau_n, float(C), float(gamma), checks)


def log_observability_constant(seq: TelescopeSequence, C: float, gamma: float, tau: float) -> float:
    """``tau l_1 / 2 + log(C) / 2 + (C + 1/2) / 2 * (l_2 - l_1)^(gamma / (gamma - 1))``."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    gap = seq.first_gap
    if gap <= 0:
        raise ValueError("anchor gap too small")
    expo = gamma / (gamma - 1.0)
    log_gap_term = expo * math.log(gap)
    if log_gap_term > LOG_MAX:
        raise OverflowError("anchor gap too small")
    return 0.5 * tau * seq.ell_1 + 0.5 * math.log(C) + 0.5 * (C + 0.5) * math.exp(log_gap_term)


def assemble_constant(seq: TelescopeSequence, C: float, gamma: float, tau: float, T: float) -> float:
    """Observability constant ``C_obs`` with ``||z(0)|| <= C_obs ||chi_E chi_G z||_{L1(L2)}``."""
    if seq.ell > T:
        raise ValueError(f"sequence leaves (0, T): ell = {seq.ell} > T = {T}")
    log_c = log_observability_constant(seq, C, gamma, tau)
    if log_c > LOG_MAX:
        raise OverflowError(f"anchor gap too small: log C_obs = {log_c:.1f} overflows")
    return math.exp(log_c)


@dataclass(frozen=True)
class ObservabilityRatio:
    """``||z(0)||_{L2(Omega)}`` against ``int_E (E ||chi_G z(t)||^2)^(1/2) dt``."""

    z0_norm: float
    observation: float
    ratio: float
    std_err: float

    def to_dict(self) -> dict:
        return {
            "z0_norm": self.z0_norm,
            "observation_L1L2": self.observation,
            "ratio": self.ratio,
            "std_err": self.std_err,
        }


def _mean_and_se(q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = q.mean(axis=0)
    if q.shape[0] < 2:
        return mean, np.zeros_like(mean)
    return mean, q.std(axis=0, ddof=1) / math.sqrt(q.shape[0])


def empirical_observability_ratio(
    basis: SpectralBasis,
    G: FiniteUnionSet,
    E: FiniteUnionSet,
    eta: TerminalDatum,
    F: NoiseModel,
    brownian: BrownianEnsemble,
    sign: int = 1,
) -> ObservabilityRatio:
    """Monte Carlo ratio with a delta-method standard error.

    The observation error treats the per-node errors as fully correlated,
    which overestimates rather than underestimates it.
    """
    bwd = solve_backward_closed_form(basis, eta, F, brownian, sign=sign)
    z = bwd.z
    z0, z0_se = _mean_and_se((z[:, 0] ** 2).sum(-1))
    gram = full_gram(basis, G)[: eta.m, : eta.m]
    obs, obs_se = _mean_and_se(np.einsum("ptm,mn,ptn->pt", z, gram, z))
    obs = np.maximum(obs, 0.0)
    w = support_weights(brownian.grid, E)
    root = np.sqrt(obs)
    denom = float(w @ root)
    if denom <= 0:
        raise ZeroDivisionError("observation vanishes")
    num = math.sqrt(float(z0))
    num_se = float(z0_se) / (2 * num) if num > 0 else 0.0
    safe = np.where(root > 0, root, 1.0)
    den_se = float(w @ np.where(root > 0, obs_se / (2 * safe), 0.0))
    ratio = num / denom
    se = ratio * (num_se / num + den_se / denom) if num > 0 else 0.0
    return ObservabilityRatio(num, denom, ratio, se)


def write_report(seq: TelescopeSequence, C_obs: float, path: Path) -> Path:
    path = Path(path)
    doc = {
        "ell": seq.ell,
        "ell_1": seq.ell_1,
        "q": seq.q,
        "n_used": seq.n_used,
        "C_used": seq.C_used,
        "gamma": seq.gamma,
        "C_obs": C_obs,
        "checks": seq.checks,
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
