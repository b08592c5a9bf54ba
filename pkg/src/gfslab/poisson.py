"""Gauss-law constraint as a configuration-space Poisson problem.

The time component of the connection is tied to the charge density by

    L a_t = (1/l^2) rho (S + log p),      L = config_laplacian,

with Dirichlet-zero boundary data on every field axis (the density that
sources the constraint decays there, and the Dirichlet operator is
uniquely invertible for any source).  The solver is matrix-free conjugate
gradients on -L, which is symmetric positive definite on the Dirichlet
space; small grids are cross-checked against dense direct solves in the
test suite.
"""

from __future__ import annotations

import inspect
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from .errors import ContractViolationError, ConvergenceError
from .grid import Grid, config_laplacian, functional_derivative, functional_integral
from .state import ModelParams, charge_density_and_total

__all__ = [
    "PoissonProblem",
    "solve_poisson",
    "gauss_source",
    "initial_longitudinal_field",
    "field_divergence",
    "gauss_residual",
]

_CG_USES_RTOL = "rtol" in inspect.signature(cg).parameters


@dataclass
class PoissonProblem:
    """Right-hand side and solver knobs for one constraint solve."""

    source: np.ndarray
    grid: Grid
    tolerance: float = 1e-10
    max_iterations: int = 20000

    def __post_init__(self):
        self.source = np.asarray(self.grid.check_field(self.source), dtype=float)
        if not np.all(np.isfinite(self.source)):
            raise ContractViolationError("Poisson source must be finite")
        if not self.tolerance > 0:
            raise ContractViolationError("tolerance must be positive")


def solve_poisson(problem: PoissonProblem) -> np.ndarray:
    """Solve config_laplacian(u) = source to the requested relative residual.

    Zero source returns exactly zero.  Non-convergence raises with the
    achieved residual attached.
    """
    grid = problem.grid
    src = problem.source
    src_norm = np.linalg.norm(src)
    if src_norm == 0.0:
        return np.zeros(grid.n_points)

    def neg_lap(v):
        return -config_laplacian(v, grid)

    op = LinearOperator((grid.n_points, grid.n_points), matvec=neg_lap,
                        dtype=float)
    x0 = np.zeros(grid.n_points)
    if _CG_USES_RTOL:
        u, info = cg(op, -src, x0=x0, rtol=problem.tolerance, atol=0.0,
                     maxiter=problem.max_iterations)
    else:  # older scipy spelling
        u, info = cg(op, -src, x0=x0, tol=problem.tolerance, atol=0.0,
                     maxiter=problem.max_iterations)
    achieved = np.linalg.norm(config_laplacian(u, grid) - src) / src_norm
    if info != 0 or achieved > problem.tolerance:
        raise ConvergenceError(
            f"Poisson solve did not reach tolerance {problem.tolerance:g} "
            f"within {problem.max_iterations} iterations "
            f"(achieved relative residual {achieved:.3e})",
            residual=achieved)
    return u


def gauss_source(rho: np.ndarray, S: float, params: ModelParams,
                 grid: Grid) -> np.ndarray:
    """Constraint right-hand side (1/l^2) rho (S + log p)."""
    q, _ = charge_density_and_total(rho, S, params, grid)
    return q / params.length_l**2


def field_divergence(e_fields: np.ndarray, grid: Grid) -> np.ndarray:
    """Lattice divergence a * sum_i D_i e_i of a per-site field collection."""
    e_fields = np.atleast_2d(e_fields)
    out = np.zeros(grid.n_points)
    for i in range(grid.n_sites):
        out += functional_derivative(e_fields[i], i, grid)
    return grid.spacing_a * out


def gauss_residual(e_fields: np.ndarray, rho: np.ndarray, S: float,
                   params: ModelParams, grid: Grid) -> float:
    """L2 norm of the Gauss-law defect  -div E - (1/l^2) rho (S + log p)."""
    defect = -field_divergence(e_fields, grid) - gauss_source(rho, S, params, grid)
    return float(np.sqrt(functional_integral(defect**2, grid)))


def initial_longitudinal_field(rho: np.ndarray, S: float, params: ModelParams,
                               grid: Grid, tolerance: float = 1e-10,
                               max_iterations: int = 20000) -> np.ndarray:
    """Longitudinal electric field satisfying the Gauss constraint for rho.

    Solves L chi = (1/l^2) rho (S + log p) and returns E_i = -D_i chi, the
    initial data used by the temporal-gauge evolution.  The residual of the
    returned field is solver tolerance plus the order-dphi^2 defect from
    the divergence stencil not commuting exactly with the compact
    Laplacian.
    """
    src = gauss_source(rho, S, params, grid)
    chi = solve_poisson(PoissonProblem(src, grid, tolerance, max_iterations))
    return np.stack([-functional_derivative(chi, i, grid)
                     for i in range(grid.n_sites)])
