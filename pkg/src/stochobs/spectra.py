"""Eigenpairs of ``-A`` sampled on quadrature rules.

Heat and fourth-order (hinged) operators on (0, 1) have sine eigenfunctions
in closed form. The degenerate operator ``-(x^alpha u')'`` is discretised by
a conservative three-point flux stencil and solved as a symmetric
tridiagonal eigenproblem.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh_tridiagonal

from .core import Degeneracy, Family, FiniteUnionSet, OperatorSpec

__all__ = [
    "SpectralBasis",
    "MeshTooCoarseError",
    "closed_form_basis",
    "degenerate_matrix",
    "degenerate_basis",
    "project",
    "reconstruct",
    "orthonormality_residual",
    "export_basis",
]

GAUSS_ORDER = 8
PANELS_PER_UNIT = 64


class MeshTooCoarseError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SpectralBasis:
    """First ``m`` eigenpairs of ``-A`` with eigenfunctions sampled at ``quad_nodes``.

    Closed-form bases are evaluated analytically anywhere. Finite-difference
    bases are nodal: each node stands for its dual cell ``cell_edges[i:i+2]``
    and integrals over subsets use the overlap of those cells.
    """

    op: OperatorSpec
    lambdas: np.ndarray
    quad_nodes: np.ndarray
    quad_weights: np.ndarray
    eigvecs: np.ndarray
    cell_edges: np.ndarray | None = field(default=None, repr=False)
    stiffness: sp.csr_matrix | None = field(default=None, repr=False)

    def __post_init__(self):
        for arr in (self.lambdas, self.quad_nodes, self.quad_weights, self.eigvecs):
            arr.setflags(write=False)
        if self.lambdas[0] <= 0 or np.any(np.diff(self.lambdas) < 0):
            raise ValueError("eigenvalues must be positive and nondecreasing")

    @property
    def m(self) -> int:
        return len(self.lambdas)

    @property
    def is_closed_form(self) -> bool:
        return self.cell_edges is None

    def evaluate(self, x) -> np.ndarray:
        """Eigenfunctions at points ``x``, shape ``(m, len(x))``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.is_closed_form:
            lo, hi = self.op.interval
            L = hi - lo
            j = np.arange(1, self.m + 1)[:, None]
            return np.sqrt(2.0 / L) * np.sin(j * np.pi * (x[None, :] - lo) / L)
        # nodal values with the Dirichlet zero at x = 1 (and x = 0 for weak degeneracy)
        xs = np.concatenate([[0.0], self.quad_nodes, [1.0]])
        left = self.eigvecs[:, :1] if self.op.degeneracy is Degeneracy.STRONG else 0.0 * self.eigvecs[:, :1]
        vals = np.hstack([left, self.eigvecs, np.zeros((self.m, 1))])
        return np.stack([np.interp(x, xs, v) for v in vals])

    def truncate(self, m: int) -> "SpectralBasis":
        if not 1 <= m <= self.m:
            raise ValueError(f"cannot truncate {self.m} modes to {m}")
        return SpectralBasis(
            self.op,
            self.lambdas[:m].copy(),
            self.quad_nodes.copy(),
            self.quad_weights.copy(),
            self.eigvecs[:m].copy(),
            None if self.cell_edges is None else self.cell_edges.copy(),
            self.stiffness,
        )

    def restricted_rule(self, G: FiniteUnionSet) -> tuple[np.ndarray, np.ndarray]:
        """Quadrature weights and eigenfunction samples for integrals over ``G``.

        Returns ``(weights, values)`` with ``values`` of shape ``(m, n)`` so that
        ``int_G e_j e_k = (values * weights) @ values.T``.
        """
        lo, hi = self.op.interval
        if G.intervals and (G.inf < lo or G.sup > hi):
            raise ValueError(f"set {G.intervals} leaves the spatial interval {self.op.interval}")
        if not self.is_closed_form:
            edges = self.cell_edges
            w = np.zeros(len(self.quad_nodes))
            for a, b in G.intervals:
                w += np.clip(np.minimum(edges[1:], b) - np.maximum(edges[:-1], a), 0.0, None)
            keep = w > 0
            return w[keep], self.eigvecs[:, keep]
        xg, wg = np.polynomial.legendre.leggauss(GAUSS_ORDER)
        panel = (hi - lo) / PANELS_PER_UNIT
        nodes, weights = [], []
        for a, b in G.intervals:
            k0 = int(np.floor((a - lo) / panel))
            k1 = int(np.ceil((b - lo) / panel))
            cuts = np.unique(np.clip(lo + panel * np.arange(k0, k1 + 1), a, b))
            for c, d in zip(cuts[:-1], cuts[1:]):
                if d > c:
                    nodes.append(0.5 * (d - c) * xg + 0.5 * (c + d))
                    weights.append(0.5 * (d - c) * wg)
        if not nodes:
            return np.zeros(0), np.zeros((self.m, 0))
        x = np.concatenate(nodes)
        return np.concatenate(weights), self.evaluate(x)


def _composite_gauss(lo: float, hi: float, n_nodes: int, order: int = GAUSS_ORDER):
    if n_nodes % order:
        raise ValueError(f"n_nodes must be a multiple of {order}, got {n_nodes}")
    panels = n_nodes // order
    xg, wg = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    x = (mid[:, None] + half[:, None] * xg[None, :]).ravel()
    w = (half[:, None] * wg[None, :]).ravel()
    return x, w


def closed_form_basis(op: OperatorSpec, m: int, n_nodes: int = 512) -> SpectralBasis:
    """Sine basis of the heat (``(j pi / L)^2``) or hinged fourth-order (``(j pi / L)^4``) operator."""
    if op.family is Family.DEGENERATE:
        raise ValueError("degenerate operators have no closed-form basis; use degenerate_basis")
    if m < 1:
        raise ValueError("need at least one mode")
    lo, hi = op.interval
    L = hi - lo
    k = np.arange(1, m + 1) * np.pi / L
    lambdas = k**2 if op.family is Family.HEAT else k**4
    x, w = _composite_gauss(lo, hi, n_nodes)
    basis = SpectralBasis(op, lambdas, x, w, np.zeros((m, len(x))))
    eig = basis.evaluate(x)
    return SpectralBasis(op, lambdas, x, w, eig)


def degenerate_matrix(op: OperatorSpec, mesh_n: int) -> sp.csr_matrix:
    """Flux-form discretisation of ``-(x^alpha u')'`` on the interior nodes ``x_i = i/mesh_n``.

    Face coefficients are ``(x_i +- h/2)^alpha``, so ``x^alpha`` is never
    evaluated at 0. Strong degeneracy drops the flux through the first face.
    """
    if op.family is not Family.DEGENERATE:
        raise ValueError("degenerate_matrix needs a degenerate operator")
    h = 1.0 / mesh_n
    x = np.arange(1, mesh_n) * h
    a_minus = (x - h / 2) ** op.alpha
    a_plus = (x + h / 2) ** op.alpha
    diag = (a_minus + a_plus) / h**2
    if op.degeneracy is Degeneracy.STRONG:
        diag[0] = a_plus[0] / h**2
    off = -a_plus[:-1] / h**2
    return sp.diags([off, diag, off], [-1, 0, 1], format="csr")


def degenerate_basis(op: OperatorSpec, m: int, mesh_n: int = 2000, tol: float = 1e-8) -> SpectralBasis:
    if mesh_n < 200:
        raise MeshTooCoarseError(f"mesh_n={mesh_n} is too coarse (need >= 200)")
    if m >= mesh_n // 4:
        raise MeshTooCoarseError(f"{m} modes need a finer mesh than {mesh_n}")
    K = degenerate_matrix(op, mesh_n)
    diag = K.diagonal()
    off = K.diagonal(1)
    lam, U = eigh_tridiagonal(diag, off, select="i", select_range=(0, m - 1))
    # fix the sign so that each eigenvector is positive near x = 1
    U = U * np.sign(U[-1] + (U[-1] == 0))
    resid = np.linalg.norm(K @ U - U * lam, axis=0) / lam
    if np.any(resid > tol):
        raise MeshTooCoarseError(
            f"eigenpair residual {resid.max():.2e} above {tol:.0e}; refine the mesh"
        )
    h = 1.0 / mesh_n
    x = np.arange(1, mesh_n) * h
    w = np.full(len(x), h)
    edges = np.concatenate([[x[0] - h / 2], x + h / 2])
    eig = U.T / np.sqrt(h)
    return SpectralBasis(op, lam, x, w, eig, cell_edges=edges, stiffness=K)


def orthonormality_residual(basis: SpectralBasis) -> float:
    gram = (basis.eigvecs * basis.quad_weights) @ basis.eigvecs.T
    return float(np.max(np.abs(gram - np.eye(basis.m))))


def project(basis: SpectralBasis, f: np.ndarray, lam: float) -> np.ndarray:
    """Coefficients ``<f, e_j>`` for all modes with ``lambda_j <= lam``."""
    f = np.asarray(f, dtype=float)
    if f.shape != basis.quad_nodes.shape:
        raise ValueError("f must be sampled on the basis quadrature nodes")
    k = int(np.searchsorted(basis.lambdas, lam, side="right"))
    return basis.eigvecs[:k] @ (basis.quad_weights * f)


def reconstruct(basis: SpectralBasis, coeffs: np.ndarray) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=float)
    return coeffs @ basis.eigvecs[: len(coeffs)]


def export_basis(basis: SpectralBasis, out_dir: Path, n_plot: int = 201, n_funcs: int | None = None) -> list[Path]:
    """Write ``eigenvalues.csv`` (j, lambda_j) and ``eigenfunctions.csv`` (x, e_1, ...)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n_funcs = basis.m if n_funcs is None else min(n_funcs, basis.m)
    p1 = out_dir / "eigenvalues.csv"
    with p1.open("w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["j", "lambda_j"])
        for j, lam in enumerate(basis.lambdas, 1):
            wr.writerow([j, repr(float(lam))])
    lo, hi = basis.op.interval
    x = np.linspace(lo, hi, n_plot)
    vals = basis.evaluate(x)[:n_funcs]
    p2 = out_dir / "eigenfunctions.csv"
    with p2.open("w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["x"] + [f"e_{j}" for j in range(1, n_funcs + 1)])
        for i, xi in enumerate(x):
            wr.writerow([repr(float(xi))] + [repr(float(v)) for v in vals[:, i]])
    return [p1, p2]
