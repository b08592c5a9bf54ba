"""Discretization of the functional calculus on a configuration-space grid.

Space is a small periodic lattice of ``n_sites`` points with spacing ``a``;
the field value at each site is discretized on a uniform axis of ``n_phi``
points spanning ``[-phi_max, +phi_max]``.  A "configuration field" is any
array with one entry per point of the tensor-product grid, enumerated in
row-major (C) order, so site 0's field value is the slowest-varying index.

The continuum functional calculus maps onto the grid as

    integral d^3x            ->  a * sum over sites
    delta/delta phi(x_i)     ->  (1/a) * d/dphi_i
    delta^3(x - y)           ->  delta_ij / a
    integral Dphi            ->  w * sum over grid points,  w = dphi^n_sites

which preserves the canonical commutator [phi_i, pi_j] = i delta_ij / a.
Field axes carry Dirichlet-zero boundaries: stencils treat out-of-range
neighbours as zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolationError

__all__ = [
    "Grid",
    "functional_integral",
    "functional_derivative",
    "config_laplacian",
]


@dataclass(frozen=True)
class Grid:
    """Spatial lattice plus per-site field axis.

    Attributes
    ----------
    n_sites : number of spatial lattice points (1..3 at desk scale).
    spacing_a : spatial lattice spacing a > 0.
    n_phi : points per field axis (>= 3).
    phi_max : field-axis half-width; the axis spans [-phi_max, phi_max].
    """

    n_sites: int
    spacing_a: float
    n_phi: int
    phi_max: float
    delta_phi: float = field(init=False)
    measure_w: float = field(init=False)

    def __post_init__(self):
        if not (1 <= self.n_sites <= 3):
            raise ContractViolationError(
                f"n_sites must be in 1..3, got {self.n_sites}")
        if self.n_phi < 3:
            raise ContractViolationError(f"n_phi must be >= 3, got {self.n_phi}")
        if not self.spacing_a > 0:
            raise ContractViolationError("spacing_a must be positive")
        if not self.phi_max > 0:
            raise ContractViolationError("phi_max must be positive")
        dphi = 2.0 * self.phi_max / (self.n_phi - 1)
        object.__setattr__(self, "delta_phi", dphi)
        object.__setattr__(self, "measure_w", dphi ** self.n_sites)

    @property
    def shape(self) -> tuple:
        """Shape of a configuration field viewed as an ndarray, one axis per site."""
        return (self.n_phi,) * self.n_sites

    @property
    def n_points(self) -> int:
        """Total number of configuration points M = n_phi ** n_sites."""
        return self.n_phi ** self.n_sites

    @property
    def phi_axis(self) -> np.ndarray:
        """The 1-D field axis, shared by every site."""
        return np.linspace(-self.phi_max, self.phi_max, self.n_phi)

    def site_coordinate(self, i: int) -> np.ndarray:
        """Flat configuration field holding phi(x_i) at every grid point."""
        if not 0 <= i < self.n_sites:
            raise ContractViolationError(
                f"site index {i} out of range for n_sites={self.n_sites}")
        shape = [1] * self.n_sites
        shape[i] = self.n_phi
        coord = self.phi_axis.reshape(shape)
        return np.broadcast_to(coord, self.shape).reshape(-1).copy()

    def check_field(self, f: np.ndarray) -> np.ndarray:
        """Validate the entry count of a configuration field and return it flat."""
        arr = np.asarray(f)
        if arr.size != self.n_points:
            raise ContractViolationError(
                f"configuration field has {arr.size} entries, grid has "
                f"{self.n_points}")
        return arr.reshape(-1)


def _shifted(shaped: np.ndarray, axis: int, step: int) -> np.ndarray:
    """Shift along one field axis with Dirichlet-zero fill.

    ``step=+1`` places f[j+1] at position j (the right neighbour).
    """
    out = np.zeros_like(shaped)
    src = [slice(None)] * shaped.ndim
    dst = [slice(None)] * shaped.ndim
    if step > 0:
        src[axis] = slice(step, None)
        dst[axis] = slice(None, -step)
    else:
        src[axis] = slice(None, step)
        dst[axis] = slice(-step, None)
    out[tuple(dst)] = shaped[tuple(src)]
    return out


def functional_integral(f: np.ndarray, grid: Grid):
    """Realize ``integral Dphi f`` as w * sum(f) in row-major order.

    The summation order is fixed (numpy's pairwise reduction over the
    C-ordered flat array), so identical inputs give bit-identical results.
    """
    flat = grid.check_field(f)
    return grid.measure_w * np.sum(flat)


def functional_derivative(f: np.ndarray, axis: int, grid: Grid) -> np.ndarray:
    """Realize delta/delta phi(x_i) as (1/a) times a central difference.

    Second-order central stencil along field axis ``axis`` with
    Dirichlet-zero ghost values outside the box.
    """
    if not 0 <= axis < grid.n_sites:
        raise ContractViolationError(
            f"axis {axis} out of range for n_sites={grid.n_sites}")
    shaped = grid.check_field(f).reshape(grid.shape)
    out = (_shifted(shaped, axis, +1) - _shifted(shaped, axis, -1))
    out /= 2.0 * grid.delta_phi * grid.spacing_a
    return out.reshape(-1)


def config_laplacian(f: np.ndarray, grid: Grid) -> np.ndarray:
    """Realize ``integral d^3x  delta^2/delta phi(x)^2`` on the grid.

    Compact (1/a) * sum_i (f[j+e_i] - 2 f[j] + f[j-e_i]) / dphi^2 with
    Dirichlet-zero boundaries.  As an M x M operator it is symmetric and
    negative definite on the Dirichlet space.
    """
    shaped = grid.check_field(f).reshape(grid.shape)
    out = np.zeros_like(shaped)
    for axis in range(grid.n_sites):
        out += _shifted(shaped, axis, +1) + _shifted(shaped, axis, -1)
    out -= 2.0 * grid.n_sites * shaped
    out /= grid.delta_phi ** 2 * grid.spacing_a
    return out.reshape(-1)
