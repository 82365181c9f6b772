"""Sharp low-frequency observability constants and the (N, gamma) envelope.

For the span of the modes with ``lambda_j <= lam`` the best constant in
``||f|| <= C ||chi_G f||`` is ``sigma_min(M)^(-1/2)`` with ``M`` the Gram
matrix of the eigenfunctions restricted to ``G``.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import FiniteUnionSet
from .spectra import SpectralBasis

__all__ = [
    "SpectralUnderflowError",
    "SpectralFit",
    "gram_matrix",
    "full_gram",
    "spectral_constant",
    "refine_degenerate_set",
    "fit_condition_H",
    "min_envelope_constant",
]

UNDERFLOW = 1e-280
# singular values of the weighted sample matrix carry ~1e-16 absolute error
SV_FLOOR = 1e-13
POOR_EXPONENT_THRESHOLD = 1e3


class SpectralUnderflowError(ArithmeticError):
    pass


def _n_modes(basis: SpectralBasis, lam: float) -> int:
    k = int(np.searchsorted(basis.lambdas, lam, side="right"))
    if k == 0:
        raise ValueError(f"lambda below spectrum: {lam} < lambda_1 = {basis.lambdas[0]}")
    return k


def full_gram(basis: SpectralBasis, G: FiniteUnionSet) -> np.ndarray:
    """``int_G e_j e_k dx`` for all ``m`` modes of the basis."""
    w, v = basis.restricted_rule(G)
    M = (v * w) @ v.T
    return 0.5 * (M + M.T)


def gram_matrix(basis: SpectralBasis, G: FiniteUnionSet, lam: float) -> np.ndarray:
    k = _n_modes(basis, lam)
    return full_gram(basis.truncate(k), G)


def _weighted_samples(basis: SpectralBasis, G: FiniteUnionSet) -> np.ndarray:
    w, v = basis.restricted_rule(G)
    return (v * np.sqrt(w)).T


def _sigma_min(A: np.ndarray, lam: float) -> float:
    """Smallest eigenvalue of ``A.T @ A`` from the singular values of ``A``."""
    sv = np.linalg.svd(A, compute_uv=False)
    s = float(sv[-1]) if len(sv) == A.shape[1] else 0.0
    if s**2 < UNDERFLOW or s < SV_FLOOR:
        raise SpectralUnderflowError(
            f"underflow: reduce lambda or enlarge G (sigma_min ~ {s**2:.3e} at lambda = {lam})"
        )
    return min(s**2, 1.0)


def spectral_constant(basis: SpectralBasis, G: FiniteUnionSet, lam: float) -> float:
    k = _n_modes(basis, lam)
    return _sigma_min(_weighted_samples(basis, G)[:, :k], lam) ** -0.5


def refine_degenerate_set(G: FiniteUnionSet, grid_divisions: int = 64) -> tuple[float, FiniteUnionSet]:
    """Cut ``G`` away from the degenerate endpoint 0.

    Scans ``eps = k |G| / grid_divisions`` for ``k = 1 .. grid_divisions`` and
    returns the largest one with ``|G ∩ (eps, 1)| >= |G| / 2``, together with
    ``G0 = G ∩ (eps, 1)``.
    """
    mG = G.measure()
    if mG <= 0:
        raise ValueError("G must have positive measure")
    step = mG / grid_divisions
    best = None
    for k in range(1, grid_divisions + 1):
        eps = k * step
        G0 = G.intersect(eps, G.ambient[1])
        if G0.measure() >= mG / 2 * (1 - 1e-12):
            best = (eps, G0)
    if best is None:
        # a single interval of G is always kept at least half by eps = step
        raise ValueError("no admissible eps on the grid")
    return best


def min_envelope_constant(log_c: float, s: float, tol: float = 1e-12) -> float:
    """Smallest ``N >= 1`` with ``log N + N s >= log_c`` (bisection)."""
    if log_c <= s:
        return 1.0
    lo, hi = 1.0, 2.0
    while math.log(hi) + hi * s < log_c:
        lo, hi = hi, 2 * hi
        if hi > 1e300:
            raise OverflowError("envelope constant diverged")
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if math.log(mid) + mid * s >= log_c:
            hi = mid
        else:
            lo = mid
    return hi


@dataclass(frozen=True)
class SpectralFit:
    lambda_grid: np.ndarray
    sigma_min: np.ndarray
    constants: np.ndarray
    gamma: float
    N_hat: float
    residuals: np.ndarray
    G_measure: float

    @property
    def envelope(self) -> np.ndarray:
        return self.N_hat * np.exp(self.N_hat * self.lambda_grid**self.gamma)

    @property
    def poor_exponent(self) -> bool:
        return self.N_hat > POOR_EXPONENT_THRESHOLD

    @property
    def l1_conversion(self) -> float:
        """``||f||_{L1(G)} <= |G|^{1/2} ||f||_{L2(G)}``."""
        return math.sqrt(self.G_measure)

    def summary(self) -> dict:
        return {
            "gamma": self.gamma,
            "N_hat": self.N_hat,
            "lambda_range": [float(self.lambda_grid[0]), float(self.lambda_grid[-1])],
            "max_C": float(self.constants.max()),
            "G_measure": self.G_measure,
            "l1_conversion": self.l1_conversion,
            "poor_exponent": self.poor_exponent,
        }

    def write(self, out_dir: Path, stem: str = "specineq") -> list[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        p1 = out_dir / f"{stem}.csv"
        with p1.open("w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["lambda", "sigma_min", "C_lambda", "envelope_value", "residual"])
            for row in zip(self.lambda_grid, self.sigma_min, self.constants, self.envelope, self.residuals):
                wr.writerow([repr(float(v)) for v in row])
        p2 = out_dir / f"{stem}.json"
        p2.write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return [p1, p2]


def fit_condition_H(basis: SpectralBasis, G: FiniteUnionSet, lambda_grid, gamma: float) -> SpectralFit:
    """Sharp constants on ``lambda_grid`` and the minimal feasible ``N`` with
    ``C(lam) <= N exp(N lam^gamma)`` at every grid point."""
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    grid = np.sort(np.asarray(lambda_grid, dtype=float))
    A = _weighted_samples(basis, G)
    sig = np.array([_sigma_min(A[:, : _n_modes(basis, lam)], lam) for lam in grid])
    # nested subspaces: the exact values are nonincreasing; remove round-off wiggle
    sig = np.minimum.accumulate(sig)
    C = sig**-0.5
    s = grid**gamma
    N = max(min_envelope_constant(math.log(c), si) for c, si in zip(C, s))
    resid = (math.log(N) + N * s) - np.log(C)
    return SpectralFit(grid, sig, C, gamma, N, resid, G.measure())
