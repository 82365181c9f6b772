"""Forward controlled equation in modal form and the duality identity.

    dy_j = -lambda_j y_j dt + chi_E (chi_G u)_j dt + F y_j dW

With ``M(t) = exp(int F dW - 1/2 int F^2)`` the process ``M^{-1} y`` solves a
random ODE; each step integrates the free decay exactly and the forcing by
the midpoint rule.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bsde import BackwardEnsemble
from .core import BrownianEnsemble, FiniteUnionSet, NoiseModel, TimeGrid
from .spectra import SpectralBasis
from .specineq import full_gram

__all__ = [
    "ControlField",
    "ForwardEnsemble",
    "stochastic_exponential",
    "solve_forward",
    "DualityReport",
    "duality_residual",
    "support_weights",
]


@dataclass(frozen=True, eq=False)
class ControlField:
    """Modal control ``u_j`` (coefficients on ``e_1..e_m``), applied as ``chi_E chi_G u``.

    ``values`` lives on the grid nodes and ``mid_values`` on the step
    midpoints; both have a leading path axis of length ``n_paths`` or 1.
    """

    grid: TimeGrid
    values: np.ndarray = field(repr=False)
    mid_values: np.ndarray = field(repr=False)
    time_support: FiniteUnionSet
    space_support: FiniteUnionSet

    def __post_init__(self):
        n = self.grid.n_steps
        if self.values.ndim != 3 or self.values.shape[1] != n + 1:
            raise ValueError("values must have shape (P, n_steps + 1, m)")
        if self.mid_values.shape != (self.values.shape[0], n, self.values.shape[2]):
            raise ValueError("mid_values must have shape (P, n_steps, m)")
        off = ~self.time_support.contains(self.grid.nodes)
        if np.any(self.values[:, off, :]):
            raise ValueError("control must vanish outside its time support")

    @classmethod
    def from_nodes(cls, grid, values, time_support, space_support) -> "ControlField":
        values = np.asarray(values, dtype=float)
        if values.ndim == 2:
            values = values[None]
        on = time_support.contains(grid.nodes)
        values = values * on[None, :, None]
        mid = 0.5 * (values[:, 1:] + values[:, :-1]) * time_support.contains(grid.midpoints)[None, :, None]
        return cls(grid, values, mid, time_support, space_support)

    @classmethod
    def zero(cls, grid, m, time_support, space_support) -> "ControlField":
        return cls(
            grid, np.zeros((1, grid.n_steps + 1, m)), np.zeros((1, grid.n_steps, m)), time_support, space_support
        )

    @property
    def m(self) -> int:
        return self.values.shape[2]

    @property
    def is_deterministic(self) -> bool:
        return self.values.shape[0] == 1

    def scaled(self, c: float) -> "ControlField":
        return ControlField(self.grid, c * self.values, c * self.mid_values, self.time_support, self.space_support)

    def mean_sq_norm(self, gram: np.ndarray) -> np.ndarray:
        """``E||chi_G u(t_k)||^2_{L^2}`` at each node; ``gram`` is the G-Gram on the control modes."""
        return np.einsum("pkm,mn,pkn->pk", self.values, gram, self.values).mean(axis=0)

    def linf_norm(self, gram: np.ndarray) -> float:
        return float(np.sqrt(self.mean_sq_norm(gram).max()))

    def l2_norm(self, gram: np.ndarray) -> float:
        q = self.mean_sq_norm(gram)
        return float(math.sqrt(np.trapezoid(q, self.grid.nodes)))

    def write_csv(self, path: Path) -> Path:
        """Rows ``(t, mode, value)`` of the path-mean control."""
        path = Path(path)
        mean = self.values.mean(axis=0)
        with path.open("w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["t", "mode", "value"])
            for k, t in enumerate(self.grid.nodes):
                for j in range(self.m):
                    wr.writerow([repr(float(t)), j + 1, repr(float(mean[k, j]))])
        return path


def stochastic_exponential(F: NoiseModel, brownian: BrownianEnsemble) -> tuple[np.ndarray, np.ndarray]:
    """``log M`` at the nodes ``(P, n+1)`` and at the step midpoints ``(P, n)``.

    The midpoint value uses the average of the two node logarithms, i.e. the
    linearly interpolated Brownian path.
    """
    grid = brownian.grid
    if F.is_zero:
        return np.zeros((1, grid.n_steps + 1)), np.zeros((1, grid.n_steps))
    incr = brownian.dW * F.step_means(grid)[None, :] - 0.5 * F.step_sq_integrals(grid)[None, :]
    logM = np.zeros((brownian.n_paths, grid.n_steps + 1))
    np.cumsum(incr, axis=1, out=logM[:, 1:])
    return logM, 0.5 * (logM[:, 1:] + logM[:, :-1])


@dataclass(frozen=True, eq=False)
class ForwardEnsemble:
    brownian: BrownianEnsemble
    basis: SpectralBasis
    y: np.ndarray = field(repr=False)
    logM: np.ndarray = field(repr=False)
    noise: NoiseModel | None = None

    @property
    def grid(self):
        return self.brownian.grid

    def sq_norm(self, modes: slice = slice(None)) -> np.ndarray:
        y = self.y[:, :, modes]
        return np.einsum("pkm,pkm->pk", y, y)

    def summary_csv(self, path: Path) -> Path:
        q = self.sq_norm()
        mean = q.mean(axis=0)
        se = q.std(axis=0, ddof=1) / math.sqrt(q.shape[0]) if q.shape[0] > 1 else np.zeros_like(mean)
        path = Path(path)
        with path.open("w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["t", "mean_sq_norm", "std_err"])
            for row in zip(self.grid.nodes, mean, se):
                wr.writerow([repr(float(v)) for v in row])
        return path


def solve_forward(
    basis: SpectralBasis,
    y0,
    u: ControlField,
    F: NoiseModel,
    brownian: BrownianEnsemble,
) -> ForwardEnsemble:
    """Integrating-factor scheme on all ``basis.m`` modes.

    y_j(t_{k+1}) = M_{k+1} [ M_k^{-1} e^{-lambda_j dt} y_j(t_k)
                             + e^{-lambda_j dt/2} M_{k+1/2}^{-1} g_j(t_{k+1/2}) dt ]

    where ``g = Gram_G u`` is the projection of ``chi_G u`` onto the basis.
    """
    if u.grid != brownian.grid:
        raise ValueError("control and ensemble live on different grids")
    if not u.is_deterministic and u.values.shape[0] != brownian.n_paths:
        raise ValueError("control has a different number of paths than the ensemble")
    grid = brownian.grid
    m = basis.m
    y0 = np.asarray(y0, dtype=float)
    if y0.ndim != 1 or len(y0) > m:
        raise ValueError(f"y0 must be a modal vector with at most {m} entries")
    y0 = np.pad(y0, (0, m - len(y0)))
    if u.m > m:
        raise ValueError(f"control uses {u.m} modes but the basis has {m}")
    gram = full_gram(basis, u.space_support)[:, : u.m]  # (m, m_u)
    logM, logM_mid = stochastic_exponential(F, brownian)
    P = max(logM.shape[0], u.values.shape[0])
    dt = grid.dt
    decay = np.exp(-basis.lambdas * dt)
    half = np.exp(-basis.lambdas * dt / 2)
    y = np.empty((P, grid.n_steps + 1, m))
    y[:, 0] = y0
    ytil = np.broadcast_to(y0, (P, m)).copy()
    for k in range(grid.n_steps):
        g = u.mid_values[:, k] @ gram.T
        ytil = decay * ytil + half * g * (np.exp(-logM_mid[:, k])[:, None] * dt)
        y[:, k + 1] = np.exp(logM[:, k + 1])[:, None] * ytil
    return ForwardEnsemble(brownian, basis, y, logM, F)


def support_weights(grid: TimeGrid, E: FiniteUnionSet) -> np.ndarray:
    """Trapezoid weights at the nodes for integrals over the steps whose midpoint lies in ``E``."""
    on = E.contains(grid.midpoints).astype(float) * grid.dt / 2
    w = np.zeros(grid.n_steps + 1)
    w[:-1] += on
    w[1:] += on
    return w


@dataclass(frozen=True)
class DualityReport:
    terminal: float
    initial: float
    control_term: float
    residual: float
    relative: float
    std_err: float
    raw_residual: float = float("nan")
    raw_std_err: float = float("nan")

    def to_dict(self, tolerance: float | None = None) -> dict:
        d = {
            "lhs": self.terminal,
            "rhs": self.initial + self.control_term,
            "terminal": self.terminal,
            "initial": self.initial,
            "control_term": self.control_term,
            "residual": self.residual,
            "relative": self.relative,
            "std_err": self.std_err,
            "raw_residual": self.raw_residual,
            "raw_std_err": self.raw_std_err,
        }
        if tolerance is not None:
            d["tolerance"] = tolerance
        return d

    def write_json(self, path: Path, tolerance: float | None = None) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(tolerance), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def duality_residual(
    fwd: ForwardEnsemble, bwd: BackwardEnsemble, u: ControlField, martingale_cv: bool = True
) -> DualityReport:
    """``|E<y(T), eta> - E<y0, z(0)> - E int chi_E <u, chi_G z> dt|`` on common paths.

    Pathwise, the difference is the Ito integral ``int (F <y, z> + <y, Z>) dW``
    which has mean zero. With ``martingale_cv`` its left-point discretisation is
    subtracted as a control variate; ``raw_residual`` keeps the plain estimate.
    """
    if not fwd.brownian.same_as(bwd.brownian):
        raise ValueError("forward and backward ensembles must share the same Brownian paths")
    if u.grid != fwd.grid:
        raise ValueError("control lives on a different grid")
    mz = bwd.m
    # leading path axes are n_paths or 1 and broadcast against each other
    term_T = (fwd.y[:, -1, :mz] * bwd.z[:, -1]).sum(-1)
    term_0 = bwd.z[:, 0] @ fwd.y[0, 0, :mz]
    gram = full_gram(fwd.basis, u.space_support)[: u.m, :mz]
    inner = ((u.values @ gram) * bwd.z).sum(-1)
    ctrl = inner @ support_weights(fwd.grid, u.time_support)
    d = np.broadcast_to(term_T - term_0 - ctrl, (fwd.brownian.n_paths,))
    raw_res, raw_se = abs(float(d.mean())), _se(d)
    if martingale_cv:
        y = fwd.y[:, :-1, :mz]
        integrand = (y * bwd.Z[:, :-1]).sum(-1)
        if fwd.noise is not None and not fwd.noise.is_zero:
            integrand = integrand + fwd.noise.step_means(fwd.grid) * (y * bwd.z[:, :-1]).sum(-1)
        d = d - (integrand * fwd.brownian.dW).sum(-1)
    lhs, rhs0, c = float(np.mean(term_T)), float(np.mean(term_0)), float(np.mean(ctrl))
    res = abs(float(d.mean()))
    scale = max(abs(lhs), abs(rhs0), abs(c), 1e-300)
    return DualityReport(lhs, rhs0, c, res, res / scale, _se(d), raw_res, raw_se)


def _se(d: np.ndarray) -> float:
    return float(d.std(ddof=1) / math.sqrt(len(d))) if len(d) > 1 else 0.0
