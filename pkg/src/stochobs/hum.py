"""Null controls from the regularised HUM dual problem.

For terminal data ``eta`` on the first ``m`` modes the deterministic adjoint
is ``z_j(t) = e^{-lambda_j (T-t)} eta_j``. Minimising

    J(eta) = 1/2 eta' Lambda eta + b' eta + eps/2 |eta|^2

with the observability Gramian ``Lambda`` gives ``eta_hat`` and the control
``v = chi_E chi_G z``. For deterministic noise the adapted control
``u = M v`` (``M`` the stochastic exponential) nulls the same modes on every
path, because ``M^{-1} y`` then solves the deterministic controlled system.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse.linalg import cg

from .core import BrownianEnsemble, EnsembleSpec, FiniteUnionSet, NoiseModel, TimeGrid
from .forward import ControlField, solve_forward, stochastic_exponential
from .spectra import SpectralBasis
from .specineq import full_gram

__all__ = [
    "DualSystem",
    "DualSolveError",
    "time_integral_exp",
    "build_dual",
    "solve_dual",
    "solve_dual_dense",
    "dual_control",
    "lift_control",
    "NullReport",
    "verify_null",
]


class DualSolveError(ArithmeticError):
    pass


def time_integral_exp(rate: float, E: FiniteUnionSet, T: float) -> float:
    """``int_E exp(-rate (T - t)) dt`` summed exactly over the components of ``E``."""
    total = 0.0
    for a, b in E.intervals:
        a, b = max(a, 0.0), min(b, T)
        if b <= a:
            continue
        if rate == 0.0:
            total += b - a
        else:
            total += math.exp(-rate * (T - b)) * -math.expm1(-rate * (b - a)) / rate
    return total


@dataclass(frozen=True, eq=False)
class DualSystem:
    Lambda: np.ndarray = field(repr=False)
    b: np.ndarray
    epsilon: float
    lambdas: np.ndarray = field(repr=False)
    T: float
    E: FiniteUnionSet
    G: FiniteUnionSet

    def __post_init__(self):
        if not np.array_equal(self.Lambda, self.Lambda.T):
            raise ValueError("Gramian must be symmetric")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")

    @property
    def m(self) -> int:
        return len(self.b)

    @property
    def matrix(self) -> np.ndarray:
        return self.Lambda + self.epsilon * np.eye(self.m)

    def terminal(self, eta_hat: np.ndarray) -> np.ndarray:
        """Deterministic terminal state on the controlled modes, ``b + Lambda eta_hat``."""
        return self.b + self.Lambda @ eta_hat


def build_dual(
    basis: SpectralBasis,
    G: FiniteUnionSet,
    E: FiniteUnionSet,
    T: float,
    y0,
    m: int,
    epsilon: float = 1e-10,
) -> DualSystem:
    if not 1 <= m <= basis.m:
        raise ValueError(f"need 1 <= m <= {basis.m}, got {m}")
    if E.measure() <= 0 or G.measure() <= 0:
        raise ValueError("E and G must have positive measure")
    if E.sup > T:
        raise ValueError(f"E leaves (0, T = {T})")
    y0 = np.zeros(m) + np.pad(np.asarray(y0, dtype=float), (0, max(0, m - len(y0))))[:m]
    lam = basis.lambdas[:m]
    gram = full_gram(basis.truncate(m), G)
    tint = np.array([[time_integral_exp(lj + lk, E, T) for lk in lam] for lj in lam])
    Lam = gram * tint
    Lam = 0.5 * (Lam + Lam.T)
    b = np.exp(-lam * T) * y0
    return DualSystem(Lam, b, float(epsilon), lam.copy(), float(T), E, G)


def solve_dual(system: DualSystem, rtol: float = 1e-10, maxiter: int | None = None) -> np.ndarray:
    """``eta_hat = -(Lambda + eps I)^{-1} b`` by conjugate gradients."""
    b = system.b
    if not np.any(b):
        return np.zeros(system.m)
    A = system.matrix
    maxiter = 50 * system.m if maxiter is None else maxiter
    x, info = cg(A, -b, rtol=rtol, atol=0.0, maxiter=maxiter)
    res = np.linalg.norm(A @ x + b) / np.linalg.norm(b)
    if info != 0 or not np.isfinite(res) or res > 10 * rtol:
        raise DualSolveError(
            f"CG stagnated (relative residual {res:.2e}); increase epsilon or reduce m"
        )
    return x


def solve_dual_dense(system: DualSystem) -> np.ndarray:
    """Cross-check by a symmetric dense solve."""
    from scipy.linalg import solve

    return solve(system.matrix, -system.b, assume_a="pos")


def dual_control(system: DualSystem, eta_hat: np.ndarray, grid: TimeGrid) -> ControlField:
    """Deterministic control ``v(t) = chi_E(t) sum_k eta_k e^{-lambda_k (T-t)} e_k`` on ``G``.

    Node and midpoint values are both exact.
    """
    if grid.T != system.T:
        raise ValueError("grid horizon differs from the dual system's T")

    def at(t, mask):
        return (np.exp(-np.outer(system.T - t, system.lambdas)) * eta_hat[None, :]) * mask[:, None]

    vals = at(grid.nodes, system.E.contains(grid.nodes))
    mid = at(grid.midpoints, system.E.contains(grid.midpoints))
    return ControlField(grid, vals[None], mid[None], system.E, system.G)


def lift_control(v: ControlField, F, brownian: BrownianEnsemble) -> ControlField:
    """Adapted control ``u(t, w) = M(t, w) v(t)``."""
    if not isinstance(F, NoiseModel):
        raise TypeError("lifting requires deterministic noise coefficient")
    if not v.is_deterministic:
        raise ValueError("lifting expects a deterministic control")
    if v.grid != brownian.grid:
        raise ValueError("control and ensemble live on different grids")
    if F.is_zero:
        return v
    logM, logM_mid = stochastic_exponential(F, brownian)
    vals = np.exp(logM)[:, :, None] * v.values
    mid = np.exp(logM_mid)[:, :, None] * v.mid_values
    return ControlField(v.grid, vals, mid, v.time_support, v.space_support)


def lifted_linf_bound(v: ControlField, F: NoiseModel, gram: np.ndarray) -> float:
    """``sup_t ||chi_G v(t)|| exp(1/2 int_0^t F^2)``: the exact L-infinity norm of ``M v``."""
    q = v.mean_sq_norm(gram)
    growth = np.array([F.integral(0.0, t, 2) for t in v.grid.nodes])
    return float(np.sqrt((q * np.exp(growth)).max()))


@dataclass(frozen=True)
class NullReport:
    m: int
    m_sim: int
    epsilon: float
    terminal_ratio_controlled: float
    terminal_ratio_spillover: float
    terminal_ratio_total: float
    total_std_err: float
    deterministic_controlled_ratio: float
    cost_ratio: float
    linf_control_norm: float
    l2_control_norm: float
    theoretical_linf: float | None

    def to_dict(self) -> dict:
        return asdict(self)

    def write_json(self, path: Path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def verify_null(
    basis: SpectralBasis,
    y0,
    u: ControlField,
    F: NoiseModel,
    brownian: BrownianEnsemble,
    m: int,
    epsilon: float = float("nan"),
    v: ControlField | None = None,
) -> NullReport:
    """Forward-simulate with ``u`` on all ``basis.m`` modes and split ``E||y(T)||^2``.

    Modes ``1..m`` form the controlled subspace; modes above ``m`` hold the
    spillover from ``chi_G u`` projecting onto uncontrolled modes.
    """
    y0 = np.asarray(y0, dtype=float)
    n0 = float(y0 @ y0)
    if n0 == 0:
        raise ValueError("y0 must be nonzero")
    fwd = solve_forward(basis, y0, u, F, brownian)
    yT = fwd.y[:, -1]
    ctrl = (yT[:, :m] ** 2).sum(-1)
    spill = (yT[:, m:] ** 2).sum(-1)
    tot = ctrl + spill
    se = float(tot.std(ddof=1) / math.sqrt(len(tot))) if len(tot) > 1 else 0.0
    det = solve_forward(basis, y0, v if v is not None else _path_mean(u), NoiseModel.zero(), _single_path(brownian))
    det_ratio = float(np.linalg.norm(det.y[0, -1, :m]) / math.sqrt(n0))
    gram = full_gram(basis, u.space_support)[: u.m, : u.m]
    linf = u.linf_norm(gram)
    return NullReport(
        m=m,
        m_sim=basis.m,
        epsilon=epsilon,
        terminal_ratio_controlled=float(ctrl.mean() / n0),
        terminal_ratio_spillover=float(spill.mean() / n0),
        terminal_ratio_total=float(tot.mean() / n0),
        total_std_err=se / n0,
        deterministic_controlled_ratio=det_ratio,
        cost_ratio=linf / math.sqrt(n0),
        linf_control_norm=linf,
        l2_control_norm=u.l2_norm(gram),
        theoretical_linf=None if v is None else lifted_linf_bound(v, F, gram),
    )


def _path_mean(u: ControlField) -> ControlField:
    if u.is_deterministic:
        return u
    return ControlField(
        u.grid, u.values.mean(0, keepdims=True), u.mid_values.mean(0, keepdims=True), u.time_support, u.space_support
    )


def _single_path(brownian: BrownianEnsemble) -> BrownianEnsemble:
    # path 0 of a one-path ensemble with the same seed is the same path
    return BrownianEnsemble(EnsembleSpec(1, brownian.spec.master_seed), brownian.grid, brownian.dW[:1])
