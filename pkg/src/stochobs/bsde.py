"""Mode-by-mode solution of the backward equation

    dz_j = lambda_j z_j dt + s F(t) Z_j dt + Z_j dW,    z_j(T) = eta_j,

and Monte Carlo checks of the decay and interpolation inequalities.

``s`` is the coupling sign. ``s = +1`` is the modal form used throughout the
checks; ``s = -1`` is the adjoint of ``dy = Ay dt + F y dW`` and is what the
forward/backward duality identity needs when ``Z != 0``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .core import BrownianEnsemble, FiniteUnionSet, NoiseModel
from .spectra import SpectralBasis
from .specineq import full_gram

__all__ = [
    "TerminalDatum",
    "BackwardEnsemble",
    "solve_backward_closed_form",
    "solve_backward_regression",
    "DecayReport",
    "check_decay",
    "InterpolationReport",
    "check_interpolation",
    "solve_K",
]


@dataclass(frozen=True)
class TerminalDatum:
    """``eta_j = a_j + b_j W(T)``; deterministic when ``b = 0``."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.a, dtype=float))
        b = np.zeros_like(a) if self.b is None else np.atleast_1d(np.asarray(self.b, dtype=float))
        if a.shape != b.shape or a.ndim != 1:
            raise ValueError("a and b must be vectors of equal length")
        if not (np.any(a) or np.any(b)):
            raise ValueError("terminal datum must have a nonzero coefficient")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @classmethod
    def deterministic(cls, coeffs) -> "TerminalDatum":
        return cls(coeffs, None)

    @classmethod
    def linear_in_WT(cls, a, b) -> "TerminalDatum":
        return cls(a, b)

    @property
    def m(self) -> int:
        return len(self.a)

    @property
    def is_deterministic(self) -> bool:
        return not np.any(self.b)

    def mean_sq_norm(self, T: float) -> float:
        return float(np.sum(self.a**2) + T * np.sum(self.b**2))

    def evaluate(self, W_T: np.ndarray) -> np.ndarray:
        """Per-path values, shape ``(n_paths, m)``."""
        return self.a[None, :] + np.asarray(W_T)[:, None] * self.b[None, :]


@dataclass(frozen=True, eq=False)
class BackwardEnsemble:
    """``z`` and ``Z`` of shape ``(P, n_steps + 1, m)``; ``P = 1`` when path-independent."""

    brownian: BrownianEnsemble
    basis: SpectralBasis
    z: np.ndarray = field(repr=False)
    Z: np.ndarray = field(repr=False)
    sign: int = 1

    @property
    def grid(self):
        return self.brownian.grid

    @property
    def m(self) -> int:
        return self.z.shape[2]

    def sq_norm(self) -> np.ndarray:
        """``||z(t_k)||^2`` per path and node."""
        return np.einsum("pkm,pkm->pk", self.z, self.z)

    def observed_sq_norm(self, G: FiniteUnionSet) -> np.ndarray:
        """``||chi_G z(t_k)||^2`` per path and node."""
        M = full_gram(self.basis.truncate(self.m), G)
        return np.einsum("pkm,mn,pkn->pk", self.z, M, self.z)


def _drift_integrals(F: NoiseModel, grid) -> np.ndarray:
    """``int_{t_k}^T F ds`` at every node."""
    t = grid.nodes
    return np.array([F.integral(tk, grid.T) for tk in t])


def solve_backward_closed_form(
    basis: SpectralBasis,
    eta: TerminalDatum,
    F: NoiseModel,
    brownian: BrownianEnsemble,
    sign: int = 1,
) -> BackwardEnsemble:
    """Exact solution for deterministic ``F`` and ``eta = a + b W(T)``:

        z_j(t) = e^{-lambda_j (T-t)} (a_j + b_j (W(t) - s int_t^T F)),
        Z_j(t) = b_j e^{-lambda_j (T-t)}.
    """
    if not isinstance(eta, TerminalDatum):
        raise TypeError("closed form needs a TerminalDatum; use solve_backward_regression otherwise")
    if not isinstance(F, NoiseModel):
        raise TypeError("closed form needs a deterministic NoiseModel; use solve_backward_regression")
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    if eta.m > basis.m:
        raise ValueError(f"datum has {eta.m} modes, basis only {basis.m}")
    grid = brownian.grid
    lam = basis.lambdas[: eta.m]
    decay = np.exp(-np.outer(grid.T - grid.nodes, lam))  # (n+1, m)
    if eta.is_deterministic:
        z = (decay * eta.a[None, :])[None]
        Z = np.zeros_like(z)
    else:
        shift = brownian.W - sign * _drift_integrals(F, grid)[None, :]  # (P, n+1)
        z = decay[None] * (eta.a[None, None, :] + shift[:, :, None] * eta.b[None, None, :])
        Z = np.broadcast_to(decay * eta.b[None, :], z.shape[1:])[None].repeat(brownian.n_paths, axis=0)
    # terminal values exactly equal to the datum
    z[:, -1, :] = eta.evaluate(brownian.W[:, -1])[: z.shape[0]]
    return BackwardEnsemble(brownian, basis, z, Z, sign)


def _regression_design(x: np.ndarray, degree: int) -> np.ndarray:
    return np.vander(x, degree + 1, increasing=True)


def solve_backward_regression(
    basis: SpectralBasis,
    eta: TerminalDatum | Callable[[np.ndarray], np.ndarray] | np.ndarray,
    F: NoiseModel | np.ndarray,
    brownian: BrownianEnsemble,
    degree: int = 3,
    sign: int = 1,
) -> BackwardEnsemble:
    """Least-squares Monte Carlo backward induction.

    Conditional expectations given ``F_{t_k}`` are regressions on polynomials
    of ``W(t_k)`` up to ``degree``. Each step integrates the ``lambda_j z_j``
    term exactly:

        Z_k = e^{-lambda dt} E[z_{k+1} dW_k | W_k] / dt
        z_k = e^{-lambda dt} E[z_{k+1} | W_k] - s F_k Z_k dt

    ``eta`` may be a TerminalDatum, a callable of the full path array
    ``W`` (shape ``(P, n+1)``) returning ``(P, m)``, or that array itself.
    ``F`` may be a NoiseModel or an adapted table of shape ``(P, n_steps)``.
    """
    grid = brownian.grid
    W, dW = brownian.W, brownian.dW
    P, n = brownian.n_paths, grid.n_steps
    if isinstance(eta, TerminalDatum):
        zT = eta.evaluate(W[:, -1])
    elif callable(eta):
        zT = np.asarray(eta(W), dtype=float)
    else:
        zT = np.asarray(eta, dtype=float)
    if zT.ndim != 2 or zT.shape[0] != P:
        raise ValueError("terminal values must have shape (n_paths, m)")
    m = zT.shape[1]
    if m > basis.m:
        raise ValueError(f"datum has {m} modes, basis only {basis.m}")
    if isinstance(F, NoiseModel):
        Fk = np.broadcast_to(F.step_means(grid)[None, :], (P, n))
    else:
        Fk = np.asarray(F, dtype=float)
        if Fk.shape != (P, n):
            raise ValueError(f"adapted F table must have shape {(P, n)}")
    dt = grid.dt
    damp = np.exp(-basis.lambdas[:m] * dt)
    t = grid.nodes
    z = np.empty((P, n + 1, m))
    Z = np.empty((P, n + 1, m))
    z[:, n] = zT
    for k in range(n - 1, -1, -1):
        nxt = z[:, k + 1]
        targets = np.hstack([nxt, nxt * dW[:, k, None]])
        if t[k] == 0.0:
            fitted = np.broadcast_to(targets.mean(axis=0), targets.shape)
        else:
            X = _regression_design(W[:, k] / math.sqrt(t[k]), degree)
            coef, _, rank, _ = np.linalg.lstsq(X, targets, rcond=None)
            if rank < X.shape[1]:
                raise np.linalg.LinAlgError(
                    f"regression matrix rank {rank} < {X.shape[1]} at t = {t[k]:.4g}; use more paths"
                )
            fitted = X @ coef
        Z[:, k] = damp * fitted[:, m:] / dt
        z[:, k] = damp * fitted[:, :m] - sign * Fk[:, k, None] * Z[:, k] * dt
    # Z at T is not defined by the scheme; carry the last value
    Z[:, n] = Z[:, n - 1]
    return BackwardEnsemble(brownian, basis, z, Z, sign)


def _mean_se(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Ensemble mean and standard error along axis 0 (zero SE for one path)."""
    mean = x.mean(axis=0)
    if x.shape[0] < 2:
        return mean, np.zeros_like(mean)
    return mean, x.std(axis=0, ddof=1) / math.sqrt(x.shape[0])


@dataclass(frozen=True)
class DecayReport:
    t: np.ndarray
    mean_sq_norm: np.ndarray
    std_err: np.ndarray
    bound: np.ndarray
    margin: np.ndarray
    n_sigma: float = 3.0

    @property
    def violations(self) -> np.ndarray:
        # round-off floor so that exact (zero-variance) cases are not flagged
        slack = self.n_sigma * self.std_err + 1e-12 * np.abs(self.bound)
        return np.flatnonzero(self.margin < -slack)

    @property
    def ok(self) -> bool:
        return len(self.violations) == 0

    def write_csv(self, path: Path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["t", "mean_sq_norm", "std_err", "bound", "margin"])
            for row in zip(self.t, self.mean_sq_norm, self.std_err, self.bound, self.margin):
                wr.writerow([repr(float(v)) for v in row])
        return path


def check_decay(
    basis: SpectralBasis,
    eta: TerminalDatum,
    F: NoiseModel,
    brownian: BrownianEnsemble,
    lam: float,
    sign: int = 1,
) -> DecayReport:
    """Compare ``E||z(t)||^2`` for high-frequency data with ``e^{(-2 lam + tau)(T-t)} E||eta||^2``."""
    low = basis.lambdas[: eta.m] <= lam
    if np.any(eta.a[low]) or np.any(eta.b[low]):
        raise ValueError("projection required: eta has components with lambda_j <= lambda")
    grid = brownian.grid
    bwd = solve_backward_closed_form(basis, eta, F, brownian, sign)
    mean, se = _mean_se(bwd.sq_norm())
    bound = np.exp((-2.0 * lam + F.tau) * (grid.T - grid.nodes)) * eta.mean_sq_norm(grid.T)
    return DecayReport(grid.nodes, mean, se, bound, bound - mean)


def solve_K(rho: float, s: float, tol: float = 1e-13) -> float:
    """Root ``K >= 0`` of ``K exp(K s) = rho`` by bisection."""
    if rho <= 0:
        raise ValueError("ratio must be positive")
    f = lambda K: math.log(K) + K * s - math.log(rho)
    lo, hi = 0.0, max(1.0, rho)
    while f(hi) < 0:
        lo, hi = hi, 2 * hi
    while hi - lo > tol * max(hi, 1e-300):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if f(mid) >= 0:
            hi = mid
        else:
            lo = mid
    return hi


@dataclass(frozen=True)
class InterpolationReport:
    t: np.ndarray
    ratio: np.ndarray
    K_hat: np.ndarray
    gamma: float
    N_hat: float

    @property
    def K_sup(self) -> float:
        return float(np.max(self.K_hat))


def check_interpolation(
    basis: SpectralBasis,
    G: FiniteUnionSet,
    eta: TerminalDatum,
    F: NoiseModel,
    brownian: BrownianEnsemble,
    gamma: float,
    N_hat: float,
    sign: int = 1,
    bwd: BackwardEnsemble | None = None,
) -> InterpolationReport:
    """Empirical ratio ``E||z||^2 / ((E||chi_G z||^2)^{1/2} (E||eta||^2)^{1/2})`` at every
    node ``t < T`` and the implied ``K`` in ``K exp(K (T-t)^{-gamma/(1-gamma)})``."""
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    grid = brownian.grid
    if bwd is None:
        bwd = solve_backward_closed_form(basis, eta, F, brownian, sign)
    full = bwd.sq_norm().mean(axis=0)[:-1]
    obs = bwd.observed_sq_norm(G).mean(axis=0)[:-1]
    if np.any(obs <= 1e-300):
        raise ZeroDivisionError("observation vanishes")
    rho = full / (np.sqrt(obs) * math.sqrt(eta.mean_sq_norm(grid.T)))
    t = grid.nodes[:-1]
    s = (grid.T - t) ** (-gamma / (1.0 - gamma))
    K = np.array([solve_K(r, si) for r, si in zip(rho, s)])
    return InterpolationReport(t, rho, K, gamma, N_hat)
