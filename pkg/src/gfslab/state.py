"""Wave functional, gauge connection, densities, charges, and currents.

The state of the system is a complex amplitude Psi over the configuration
grid together with a real connection: a scalar time component ``a_t`` and
one field component ``a_phi[i]`` per lattice site, with the electric field
``e_field[i]`` completing the gauge sector.

The model's charge density is the entropy-type nonlinearity

    q = rho * (log p + S),        p = rho * w  (cell probability),

whose grid integral (times 1/l^2) is the total charge Q.  Q vanishes
exactly when S equals the Shannon entropy of the cell probabilities; that
choice defines the charge-neutral mode used throughout the stationary
solvers.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import xlogy

from .errors import ContractViolationError
from .grid import Grid, functional_derivative, functional_integral, _shifted

__all__ = [
    "P_FLOOR",
    "ModelParams",
    "WaveFunctional",
    "GaugeState",
    "density",
    "cell_probability",
    "charge_density_and_total",
    "charge_neutral_entropy",
    "evolution_prefactor",
    "gauge_transform",
    "gauge_parameter_gradient",
    "covariant_derivative",
    "current_density",
]

# Probability floor inside logarithms: cells with p below this contribute
# rho * (log(P_FLOOR) + S), which is exactly zero wherever rho is zero.
P_FLOOR = 1e-300


@dataclass(frozen=True)
class ModelParams:
    """Couplings of the scalar model.

    The lattice potential is V(phi) = m^2 phi^2 / 2 + lambda phi^4 / 4.
    ``length_l`` weights the field-strength term: 1/l^2 is the strength of
    the new coupling.  The dimensionless coupling is absorbed by rescaling
    the connection and is held at 1.  ``entropy_S`` is the fixed-S mode's
    entropy parameter; None means charge-neutral operation (S derived from
    the state).  S / l^2 is the model's entropy-per-area parameter.
    """

    mass_m: float
    quartic_lambda: float = 0.0
    length_l: float = 1.0
    entropy_S: float | None = None
    coupling_f: float = 1.0

    def __post_init__(self):
        if not self.length_l > 0:
            raise ContractViolationError("length_l must be positive")
        if self.coupling_f != 1.0:
            raise ContractViolationError(
                "coupling_f is fixed to 1 (absorbed by rescaling the connection)")
        if self.mass_m < 0 or self.quartic_lambda < 0:
            raise ContractViolationError("mass_m and quartic_lambda must be >= 0")

    def potential(self, phi: np.ndarray) -> np.ndarray:
        """Single-site potential V(phi)."""
        return 0.5 * self.mass_m**2 * phi**2 + 0.25 * self.quartic_lambda * phi**4


@dataclass
class WaveFunctional:
    """Complex amplitude over the configuration grid."""

    values: np.ndarray
    grid: Grid

    def __post_init__(self):
        self.values = np.asarray(
            self.grid.check_field(self.values), dtype=np.complex128)

    @property
    def norm_squared(self) -> float:
        return float(functional_integral(np.abs(self.values) ** 2, self.grid).real)

    def normalized(self) -> "WaveFunctional":
        n2 = self.norm_squared
        if n2 <= 0:
            raise ContractViolationError("cannot normalize a zero functional")
        return WaveFunctional(self.values / np.sqrt(n2), self.grid)

    def require_normalized(self, tol: float = 1e-10):
        if abs(self.norm_squared - 1.0) >= tol:
            raise ContractViolationError(
                f"wave functional not normalized: norm^2 = {self.norm_squared!r}")


@dataclass
class GaugeState:
    """Connection components and electric field on the grid.

    ``a_t`` is a single configuration field; ``a_phi`` and ``e_field`` hold
    one configuration field per lattice site (shape (n_sites, M)).  In the
    stationary real gauge a_phi vanishes and e_field[i] is minus the
    functional derivative of a_t along axis i.
    """

    a_t: np.ndarray
    a_phi: np.ndarray
    e_field: np.ndarray
    grid: Grid

    def __post_init__(self):
        self.a_t = np.asarray(self.grid.check_field(self.a_t), dtype=float)
        self.a_phi = np.atleast_2d(np.asarray(self.a_phi, dtype=float))
        self.e_field = np.atleast_2d(np.asarray(self.e_field, dtype=float))
        expected = (self.grid.n_sites, self.grid.n_points)
        for name, arr in (("a_phi", self.a_phi), ("e_field", self.e_field)):
            if arr.shape != expected:
                raise ContractViolationError(
                    f"{name} has shape {arr.shape}, expected {expected}")

    @classmethod
    def zero(cls, grid: Grid) -> "GaugeState":
        m = grid.n_points
        return cls(np.zeros(m), np.zeros((grid.n_sites, m)),
                   np.zeros((grid.n_sites, m)), grid)


def density(psi: WaveFunctional) -> np.ndarray:
    """Pointwise density rho = |Psi|^2 (real, nonnegative)."""
    v = psi.values
    return v.real**2 + v.imag**2


def cell_probability(rho: np.ndarray, grid: Grid) -> np.ndarray:
    """Coarse-grained probability of each grid cell, p = rho * w.

    The grid cell is the coarse-graining volume, so summing p over all
    cells reproduces the functional integral of rho.
    """
    return grid.check_field(rho) * grid.measure_w


def charge_density_and_total(rho: np.ndarray, S: float, params: ModelParams,
                             grid: Grid):
    """Charge density q = rho (log p + S) and total Q = (f/l^2) integral q.

    The logarithm is clamped below at log(P_FLOOR); empty cells then
    contribute exactly zero because rho vanishes there.
    """
    rho = grid.check_field(rho)
    p = cell_probability(rho, grid)
    logp = np.log(np.maximum(p, P_FLOOR))
    q = rho * (logp + S)
    total = (params.coupling_f / params.length_l**2) * functional_integral(q, grid)
    return q, float(total)


def charge_neutral_entropy(rho: np.ndarray, grid: Grid) -> float:
    """The unique S making the total charge vanish: S = -sum p log p.

    Requires rho normalized to unit functional integral.
    """
    rho = grid.check_field(rho)
    norm = functional_integral(rho, grid)
    if abs(norm - 1.0) > 1e-8:
        raise ContractViolationError(
            f"charge_neutral_entropy requires a normalized density, got "
            f"integral = {norm!r}")
    p = cell_probability(rho, grid)
    return float(-np.sum(xlogy(p, p)))


def evolution_prefactor(rho: np.ndarray, S: float, grid: Grid) -> np.ndarray:
    """State-dependent factor P = 1 + S + log p multiplying d(Psi)/dt.

    P rescales the local evolution timescale; it crosses zero on the
    surface p = exp(-(1+S)).  Clamping of near-zero values is left to the
    dynamics/stationary callers, which own the clamp policy.
    """
    p = cell_probability(rho, grid)
    return 1.0 + S + np.log(np.maximum(p, P_FLOOR))


def gauge_parameter_gradient(lam: np.ndarray, axis: int, grid: Grid) -> np.ndarray:
    """Functional derivative of a gauge parameter along one axis.

    Gauge parameters, unlike the decaying fields, need not vanish at the
    field-axis boundary (a constant parameter is a global phase), so the
    central stencil here replicates the edge value instead of using the
    Dirichlet-zero ghost.  Constants are annihilated exactly; for decaying
    parameters the result agrees with `functional_derivative` up to the
    boundary layer.
    """
    if not 0 <= axis < grid.n_sites:
        raise ContractViolationError(
            f"axis {axis} out of range for n_sites={grid.n_sites}")
    shaped = grid.check_field(lam).reshape(grid.shape)
    hi = _shifted(shaped, axis, +1)
    lo = _shifted(shaped, axis, -1)
    # replicate edge values into the ghost cells
    idx_first = [slice(None)] * grid.n_sites
    idx_last = [slice(None)] * grid.n_sites
    idx_first[axis] = -1
    idx_last[axis] = 0
    hi[tuple(idx_first)] = shaped[tuple(idx_first)]
    lo[tuple(idx_last)] = shaped[tuple(idx_last)]
    out = (hi - lo) / (2.0 * grid.delta_phi * grid.spacing_a)
    return out.reshape(-1)


def gauge_transform(psi: WaveFunctional, gauge: GaugeState, lam: np.ndarray,
                    lam_dot: np.ndarray | None = None):
    """Local phase rotation of Psi with the matching potential shifts.

    Psi' = exp(-i lam) Psi,  a_t' = a_t + lam_dot,
    a_phi'[i] = a_phi[i] + (gradient of lam along axis i).

    The density is invariant (up to floating-point rounding of the phase
    multiplication) and the stored electric field is untouched: it is a
    gauge-invariant quantity which callers recompute from the potentials
    in their own context.
    """
    grid = psi.grid
    lam = np.asarray(grid.check_field(lam), dtype=float)
    phase = np.exp(-1j * lam)
    new_psi = WaveFunctional(phase * psi.values, grid)

    a_t = gauge.a_t if lam_dot is None else gauge.a_t + grid.check_field(lam_dot)
    a_phi = gauge.a_phi.copy()
    for i in range(grid.n_sites):
        a_phi[i] += gauge_parameter_gradient(lam, i, grid)
    new_gauge = GaugeState(a_t, a_phi, gauge.e_field.copy(), grid)
    return new_psi, new_gauge


def covariant_derivative(psi: WaveFunctional, gauge: GaugeState,
                         axis: int) -> np.ndarray:
    """Covariant functional derivative C_i Psi = D_i Psi + i a_phi[i] Psi."""
    out = functional_derivative(psi.values, axis, psi.grid).astype(np.complex128)
    a = gauge.a_phi[axis]
    if np.any(a):
        out += 1j * a * psi.values
    return out


def current_density(psi: WaveFunctional, gauge: GaugeState, axis: int) -> np.ndarray:
    """Gauge-field source J_i = Im(Psi* C_i Psi).

    Vanishes identically for a real Psi with a_phi = 0 (the stationary
    situation); for real Psi and constant a_phi[i] = A it reduces to
    A * rho pointwise.
    """
    c = covariant_derivative(psi, gauge, axis)
    return np.imag(np.conj(psi.values) * c)
