"""Stationary self-consistent states and their structural checks.

Separating the time dependence with a real stationary profile turns the
coupled system into a nonlinear eigenproblem

    (H + P a_t) Psi = omega P Psi,      P = 1 + S + log p,

solved jointly with the Poisson constraint that determines a_t from the
density.  The SCF loop alternates: entropy update (charge-neutral mode
keeps the total charge at zero identically), constraint solve, frozen
eigenproblem, and linear density mixing, tracking the eigenstate by
overlap with the previous iterate.

The prefactor P is indefinite for any localized density (it crosses zero
on the surface p = exp(-(1+S))), so the frozen pencil cannot in general
be reduced to a definite symmetric problem.  `solve_frozen_eigenproblem`
keeps the definite fast path and refuses otherwise, as its contract
requires; the SCF loop falls back to Rayleigh-quotient iteration on the
indefinite pencil, which needs only solvability of the shifted systems
and inherits eigenstate tracking from its warm start.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize_scalar

from .errors import ContractViolationError, ConvergenceError
from .grid import Grid, functional_derivative, functional_integral
from .hamiltonian import (DiscreteHamiltonian, apply_hamiltonian,
                          build_dense_hamiltonian, build_hamiltonian)
from .poisson import PoissonProblem, gauss_residual, gauss_source, solve_poisson
from .state import (ModelParams, WaveFunctional, charge_density_and_total,
                    charge_neutral_entropy, evolution_prefactor)

__all__ = [
    "SCFConfig",
    "StationaryState",
    "solve_frozen_eigenproblem",
    "eom_residual",
    "scf_solve",
    "OrthogonalityResult",
    "orthogonality_check",
    "ScanRow",
    "ScanResult",
    "ir_limit_scan",
    "variational_gaussian",
    "SuperpositionReport",
    "superposition_check",
]

CHARGE_NEUTRAL = "charge-neutral"
FIXED_S = "fixed-S"


@dataclass(frozen=True)
class SCFConfig:
    """Knobs of the self-consistent field iteration."""

    mode: str = CHARGE_NEUTRAL
    mixing_alpha: float = 0.3
    tol_omega: float = 1e-9
    tol_rho: float = 1e-8
    max_iter: int = 500
    target_index: int = 0

    def __post_init__(self):
        if self.mode not in (CHARGE_NEUTRAL, FIXED_S):
            raise ContractViolationError(f"unknown SCF mode {self.mode!r}")
        if not 0 < self.mixing_alpha <= 1:
            raise ContractViolationError("mixing_alpha must be in (0, 1]")
        if self.tol_omega <= 0 or self.tol_rho <= 0:
            raise ContractViolationError("tolerances must be positive")


@dataclass
class StationaryState:
    """Converged solution of the stationary system."""

    psi: WaveFunctional
    omega: float
    a_t: np.ndarray
    s_value: float
    residual_eom: float
    residual_gauss: float
    iterations: int
    q_total: float = 0.0

    @property
    def rho(self) -> np.ndarray:
        v = self.psi.values
        return v.real**2 + v.imag**2


def _sign_fix(v: np.ndarray) -> np.ndarray:
    k = np.argmax(np.abs(v))
    return -v if np.real(v[k]) < 0 else v


def _flip(v: np.ndarray, grid: Grid) -> np.ndarray:
    """Reflect a configuration field under the global flip phi -> -phi."""
    shaped = v.reshape(grid.shape)
    return shaped[(slice(None, None, -1),) * grid.n_sites].reshape(-1)


def _detect_parity(psi: np.ndarray, H: DiscreteHamiltonian) -> int | None:
    """Parity of the start vector when the Hamiltonian is flip-symmetric.

    Excited branches of the nonlinear iteration are saddle points of the
    density map and drift into the ground basin over many iterations;
    when the potential is even the exact symmetry of the target state is
    the stabilizer, so the loop locks the parity of its iterates to that
    of the initial state.  Returns +-1, or None when no exact symmetry is
    available.
    """
    grid = H.grid
    diag = H.diagonal
    scale = np.max(np.abs(diag)) or 1.0
    if not np.allclose(diag, _flip(diag, grid), rtol=0.0, atol=1e-12 * scale):
        return None
    par = float(functional_integral(psi * _flip(psi, grid), grid))
    norm = float(functional_integral(psi * psi, grid))
    if abs(abs(par) - norm) > 1e-8 * norm:
        return None
    return 1 if par > 0 else -1


def _prefactor(rho: np.ndarray, S: float, grid: Grid) -> np.ndarray:
    return evolution_prefactor(rho, S, grid)


def solve_frozen_eigenproblem(rho_frozen: np.ndarray, a_t_frozen: np.ndarray,
                              S: float, H: DiscreteHamiltonian,
                              target_index: int = 0):
    """Target eigenpair of the pencil (H + P a_t, P) for frozen fields.

    Requires the frozen prefactor to be positive everywhere (after the
    probability-floor clamp inside the logarithm); the problem is then
    transformed with P^{-1/2} scaling to an ordinary symmetric eigenproblem.
    The returned eigenvector is real, sign-fixed (largest-magnitude entry
    positive) and normalized as functional_integral(P psi^2) = 1.
    """
    grid = H.grid
    rho_frozen = grid.check_field(rho_frozen)
    a_t_frozen = grid.check_field(a_t_frozen)
    P = _prefactor(rho_frozen, S, grid)
    if np.min(P) <= 0.0:
        frac = float(np.mean(P <= 0.0))
        raise ContractViolationError(
            f"frozen prefactor is not positive definite "
            f"({frac:.1%} of grid points violate P > 0)")
    if not 0 <= target_index < grid.n_points:
        raise ContractViolationError(f"target_index {target_index} out of range")

    A = build_dense_hamiltonian(None, H) + np.diag(P * a_t_frozen)
    s = 1.0 / np.sqrt(P)
    C = (A * s).T * s  # symmetric congruence P^{-1/2} A P^{-1/2}
    C = 0.5 * (C + C.T)
    w, u = sla.eigh(C, subset_by_index=[target_index, target_index])
    omega = float(w[0])
    psi = _sign_fix(s * u[:, 0])
    # unit-norm u gives sum P psi^2 = 1; rescale to the w-weighted integral
    psi = psi / np.sqrt(grid.measure_w)
    return omega, psi


def _tracked_pencil_solve(A: np.ndarray, P: np.ndarray, psi_start: np.ndarray,
                          omega_start: float, grid: Grid):
    """Eigenpair of (A, diag P) continued from a warm start.

    Rayleigh-quotient iteration; the pencil may be indefinite.  Falls back
    to a dense QZ solve with overlap selection if the iteration strays.
    """
    x = psi_start / np.linalg.norm(psi_start)
    omega = omega_start
    scale = np.linalg.norm(A, ord=np.inf)
    for _ in range(60):
        shifted = A - omega * np.diag(P)
        try:
            y = np.linalg.solve(shifted, P * x)
        except np.linalg.LinAlgError:
            omega = omega * (1.0 + 1e-10) + 1e-14
            continue
        ynorm = np.linalg.norm(y)
        if not np.isfinite(ynorm) or ynorm == 0.0:
            break
        y /= ynorm
        den = float(y @ (P * y))
        if abs(den) < 1e-14:
            break
        omega_new = float(y @ (A @ y)) / den
        resid = np.linalg.norm(A @ y - omega_new * P * y)
        x = y
        converged = resid <= 1e-12 * scale
        stalled = abs(omega_new - omega) <= 1e-14 * max(1.0, abs(omega_new))
        omega = omega_new
        if converged or stalled:
            overlap = abs(np.dot(x, psi_start)) / np.linalg.norm(psi_start)
            if converged and overlap > 0.5:
                return omega, _sign_fix(x)
            break

    # dense fallback: full pencil spectrum, pick by overlap
    w, vr = sla.eig(A, np.diag(P))
    finite = np.isfinite(w.real) & (np.abs(w.imag) <= 1e-8 * (1 + np.abs(w.real)))
    idx = np.where(finite)[0]
    if idx.size == 0:
        raise ConvergenceError("pencil solve found no real finite eigenvalues")
    overlaps = np.abs(psi_start @ vr[:, idx].real)
    k = idx[np.argmax(overlaps)]
    v = vr[:, k].real
    v /= np.linalg.norm(v)
    return float(w[k].real), _sign_fix(v)


def eom_residual(psi_values: np.ndarray, omega: float, a_t: np.ndarray,
                 S: float, H: DiscreteHamiltonian) -> float:
    """Norm of the stationary equation-of-motion defect for given fields.

    r = P (omega - a_t) psi - H psi evaluated with a_phi = 0, measured in
    the w-weighted L2 norm.
    """
    grid = H.grid
    rho = np.abs(psi_values) ** 2
    P = _prefactor(rho, S, grid)
    r = P * (omega - a_t) * psi_values - apply_hamiltonian(psi_values, None, H)
    return float(np.sqrt(functional_integral(np.abs(r) ** 2, grid).real))


def _linear_eigenstate(H: DiscreteHamiltonian, index: int):
    dense = build_dense_hamiltonian(None, H)
    w, v = sla.eigh(dense, subset_by_index=[index, index])
    psi = _sign_fix(v[:, 0])
    psi = psi / np.sqrt(functional_integral(psi**2, H.grid))
    return float(w[0]), psi


def scf_solve(params: ModelParams, H: DiscreteHamiltonian,
              config: SCFConfig = SCFConfig(),
              initial_psi: np.ndarray | None = None,
              gauge_coupling: bool = True,
              poisson_tol: float = 1e-10) -> StationaryState:
    """Self-consistent solution of the stationary system.

    Loop: entropy update (charge-neutral mode re-derives S from the
    density so the total charge vanishes identically; fixed-S mode keeps
    the user's S and reports Q as a diagnostic), Poisson solve for a_t,
    frozen-pencil eigensolve tracked from the previous iterate, and
    linear density mixing.  ``gauge_coupling=False`` freezes a_t at zero,
    giving the uncoupled nonlinear problem (the formal l -> infinity
    limit).  Raises ConvergenceError with the residual history on
    ``max_iter`` exhaustion.
    """
    grid = H.grid
    if config.mode == FIXED_S and params.entropy_S is None:
        raise ContractViolationError("fixed-S mode requires params.entropy_S")

    dense_h = build_dense_hamiltonian(None, H)
    if initial_psi is None:
        omega, psi = _linear_eigenstate(H, config.target_index)
    else:
        psi = grid.check_field(initial_psi).astype(float)
        psi = _sign_fix(psi / np.sqrt(functional_integral(psi**2, grid)))
        omega = float(functional_integral(
            psi * apply_hamiltonian(psi, None, H), grid).real)

    parity = _detect_parity(psi, H)
    rho = psi**2
    a_t = np.zeros(grid.n_points)
    history = []
    converged = False
    iterations = 0

    for it in range(1, config.max_iter + 1):
        iterations = it
        S = (charge_neutral_entropy(rho, grid) if config.mode == CHARGE_NEUTRAL
             else float(params.entropy_S))
        if gauge_coupling:
            src = gauss_source(rho, S, params, grid)
            a_t = solve_poisson(PoissonProblem(src, grid, tolerance=poisson_tol))
        P = _prefactor(rho, S, grid)
        A = dense_h + np.diag(P * a_t)
        omega_new, psi_new = _tracked_pencil_solve(A, P, psi, omega, grid)
        if parity is not None:
            psi_new = 0.5 * (psi_new + parity * _flip(psi_new, grid))
        psi_new = psi_new / np.sqrt(functional_integral(psi_new**2, grid))

        rho_new = (1.0 - config.mixing_alpha) * rho + config.mixing_alpha * psi_new**2
        drho = float(functional_integral(np.abs(rho_new - rho), grid))
        domega = abs(omega_new - omega)
        history.append((omega_new, domega, drho))

        psi, omega, rho = psi_new, omega_new, rho_new
        if domega < config.tol_omega and drho < config.tol_rho:
            converged = True
            break

    if not converged:
        raise ConvergenceError(
            f"SCF did not converge in {config.max_iter} iterations "
            f"(|domega| = {history[-1][1]:.3e}, |drho|_1 = {history[-1][2]:.3e})",
            residual=history[-1][2], history=history)

    # assemble the final self-consistent record from the last eigenvector
    rho_final = psi**2
    rho_final = rho_final / functional_integral(rho_final, grid)
    S_final = (charge_neutral_entropy(rho_final, grid)
               if config.mode == CHARGE_NEUTRAL else float(params.entropy_S))
    if gauge_coupling:
        src = gauss_source(rho_final, S_final, params, grid)
        a_t = solve_poisson(PoissonProblem(src, grid, tolerance=poisson_tol))
    _, q_total = charge_density_and_total(rho_final, S_final, params, grid)
    e_field = np.stack([-functional_derivative(a_t, i, grid)
                        for i in range(grid.n_sites)])
    res_gauss = gauss_residual(e_field, rho_final, S_final, params, grid)
    res_eom = eom_residual(psi, omega, a_t, S_final, H)

    wf = WaveFunctional(psi.astype(np.complex128), grid)
    return StationaryState(psi=wf, omega=omega, a_t=a_t, s_value=S_final,
                           residual_eom=res_eom, residual_gauss=res_gauss,
                           iterations=iterations, q_total=q_total)


class OrthogonalityResult(NamedTuple):
    value: float
    scale: float


def orthogonality_check(state1: StationaryState, state2: StationaryState,
                        grid: Grid, shared_S: float | None = None) -> OrthogonalityResult:
    """Evaluate the two-state orthogonality relation.

    integral Dphi Psi1 Psi2 [ (1+S1+log p1)(omega1 - a_t1)
                              - (1+S2+log p2)(omega2 - a_t2) ]

    Each state's own converged entropy is used unless ``shared_S`` forces a
    common value into both brackets.  Self-pairing gives exactly zero (the
    integrand vanishes identically).  The reported scale is
    |Psi1| |Psi2| max(|omega|).
    """
    if state1.psi.grid is not grid and state1.psi.grid != grid:
        raise ContractViolationError("state1 lives on a different grid")
    if state2.psi.grid is not grid and state2.psi.grid != grid:
        raise ContractViolationError("state2 lives on a different grid")
    s1 = state1.s_value if shared_S is None else shared_S
    s2 = state2.s_value if shared_S is None else shared_S
    b1 = _prefactor(state1.rho, s1, grid) * (state1.omega - state1.a_t)
    b2 = _prefactor(state2.rho, s2, grid) * (state2.omega - state2.a_t)
    integrand = state1.psi.values.real * state2.psi.values.real * (b1 - b2)
    value = float(functional_integral(integrand, grid))
    scale = (np.sqrt(state1.psi.norm_squared) * np.sqrt(state2.psi.norm_squared)
             * max(abs(state1.omega), abs(state2.omega)))
    return OrthogonalityResult(value, float(scale))


@dataclass
class ScanRow:
    l: float
    omega_scf: float
    omega_linear: float
    delta_omega: float
    s_value: float
    q_total: float
    iterations: int
    residual_eom: float
    converged: bool = True


@dataclass
class ScanResult:
    rows: list
    slope: float
    omega_uncoupled: float
    slope_vs_uncoupled: float


def _loglog_slope(ls, deltas):
    ls = np.asarray(ls, dtype=float)
    deltas = np.asarray(deltas, dtype=float)
    keep = deltas > 0
    if np.sum(keep) < 2:
        return float("nan")
    return float(np.polyfit(np.log(ls[keep]), np.log(deltas[keep]), 1)[0])


def ir_limit_scan(params_base: ModelParams, H: DiscreteHamiltonian,
                  l_values, config: SCFConfig = SCFConfig()) -> ScanResult:
    """Sweep the fundamental length and compare against the linear spectrum.

    For each l the SCF eigenvalue is tabulated against the (l-independent)
    linear eigenvalue, and the log-log slope of |delta omega| vs l is
    fitted.  The gauge coupling enters as 1/l^2; the log-entropy prefactor
    does not scale with l, so the table also carries the uncoupled
    (a_t = 0) nonlinear eigenvalue and the slope of the deviation from it,
    which isolates the decay of the gauge contribution.  Failed rows are
    flagged and excluded from the fits.
    """
    ls = [float(x) for x in l_values]
    if len(ls) < 4 or any(b <= a for a, b in zip(ls, ls[1:])):
        raise ContractViolationError("l_values must be >= 4 ascending entries")
    omega_linear, _ = _linear_eigenstate(H, config.target_index)

    uncoupled = scf_solve(params_base, H, config, gauge_coupling=False)
    omega_uncoupled = uncoupled.omega

    rows = []
    for l in ls:
        params = replace(params_base, length_l=l)
        try:
            st = scf_solve(params, H, config)
            rows.append(ScanRow(l, st.omega, omega_linear,
                                st.omega - omega_linear, st.s_value,
                                st.q_total, st.iterations, st.residual_eom))
        except ConvergenceError:
            rows.append(ScanRow(l, float("nan"), omega_linear, float("nan"),
                                float("nan"), float("nan"), config.max_iter,
                                float("nan"), converged=False))

    good = [r for r in rows if r.converged]
    slope = _loglog_slope([r.l for r in good],
                          [abs(r.delta_omega) for r in good])
    slope_unc = _loglog_slope([r.l for r in good],
                              [abs(r.omega_scf - omega_uncoupled) for r in good])
    return ScanResult(rows=rows, slope=slope, omega_uncoupled=omega_uncoupled,
                      slope_vs_uncoupled=slope_unc)


def variational_gaussian(params: ModelParams, H: DiscreteHamiltonian,
                         sigma_bracket, poisson_tol: float = 1e-10):
    """Optimize a Gaussian trial profile against the stationary action.

    For each width sigma the trial state exp(-phi^2 / 4 sigma^2) is
    normalized, its charge-neutral entropy and constraint potential are
    made self-consistent, and the generalized Rayleigh quotient

        omega(sigma) = <Psi (H + P a_t) Psi> / <Psi P Psi>

    is evaluated; golden-section search returns the minimizing width to
    relative 1e-6.  Requires a single-site grid and a bracket containing
    an interior minimum.
    """
    grid = H.grid
    if grid.n_sites != 1:
        raise ContractViolationError("variational_gaussian requires n_sites = 1")
    lo, hi = float(sigma_bracket[0]), float(sigma_bracket[-1])
    if not 0 < lo < hi:
        raise ContractViolationError("sigma bracket must satisfy 0 < lo < hi")
    phi = grid.phi_axis

    def omega_of(sigma):
        psi = np.exp(-phi**2 / (4.0 * sigma**2))
        psi = psi / np.sqrt(functional_integral(psi**2, grid))
        rho = psi**2
        S = charge_neutral_entropy(rho, grid)
        src = gauss_source(rho, S, params, grid)
        a_t = solve_poisson(PoissonProblem(src, grid, tolerance=poisson_tol))
        P = _prefactor(rho, S, grid)
        num = functional_integral(
            psi * (apply_hamiltonian(psi, None, H) + P * a_t * psi), grid)
        den = functional_integral(P * rho, grid)
        return float(num / den)

    sigmas = np.geomspace(lo, hi, 17)
    vals = [omega_of(s) for s in sigmas]
    k = int(np.argmin(vals))
    if k == 0 or k == len(sigmas) - 1:
        raise ContractViolationError(
            f"sigma bracket [{lo:g}, {hi:g}] does not contain an interior minimum")
    res = minimize_scalar(omega_of,
                          bracket=(sigmas[k - 1], sigmas[k], sigmas[k + 1]),
                          method="golden", options={"xtol": 1e-6})
    return float(res.x), float(res.fun)


@dataclass
class SuperpositionReport:
    state1: StationaryState
    state2: StationaryState
    overlap_max: float
    residual_combined: float
    residual_parts_sum: float
    bound: float
    passed: bool


def superposition_check(params: ModelParams, H_base: DiscreteHamiltonian,
                        config: SCFConfig, well_separation: float,
                        allow_overlap: bool = False,
                        overlap_tol: float = 1e-12) -> SuperpositionReport:
    """Test that non-overlapping stationary solutions superpose.

    Builds a mirror-symmetric double well from shifted copies of the base
    potential (minima at +-well_separation), converges a solution in each
    well, forms Psi = (Psi1 + Psi2)/norm with the summed constraint
    potential, and evaluates the combined equation-of-motion residual
    against 3x the summed individual residuals plus an overlap floor.
    Overlapping inputs are refused unless ``allow_overlap`` (the negative
    control deliberately violates the precondition).
    """
    grid = H_base.grid
    if grid.n_sites != 1:
        raise ContractViolationError("superposition_check requires n_sites = 1")
    c = float(well_separation)

    def double_well(phi):
        return params.potential(np.abs(phi) - c)

    H = build_hamiltonian(params, grid, potential=double_well)
    phi = grid.phi_axis
    width = 1.0 / np.sqrt(2.0 * max(params.mass_m, 1e-3))
    seed1 = np.exp(-((phi + c) ** 2) / (2.0 * width**2))
    seed2 = np.exp(-((phi - c) ** 2) / (2.0 * width**2))
    st1 = scf_solve(params, H, config, initial_psi=seed1)
    st2 = scf_solve(params, H, config, initial_psi=seed2)

    v1 = st1.psi.values.real
    v2 = st2.psi.values.real
    overlap_max = float(np.max(np.abs(v1 * v2)))
    if overlap_max >= overlap_tol and not allow_overlap:
        raise ContractViolationError(
            f"states overlap: max |Psi1 Psi2| = {overlap_max:.3e} "
            f">= {overlap_tol:g}")

    combined = v1 + v2
    combined = combined / np.sqrt(functional_integral(combined**2, grid))
    a_t = st1.a_t + st2.a_t
    S = charge_neutral_entropy(combined**2, grid)
    omega = 0.5 * (st1.omega + st2.omega)
    r_comb = eom_residual(combined, omega, a_t, S, H)
    parts = st1.residual_eom + st2.residual_eom
    bound = 3.0 * parts + 1e-8
    return SuperpositionReport(state1=st1, state2=st2, overlap_max=overlap_max,
                               residual_combined=r_comb,
                               residual_parts_sum=parts, bound=bound,
                               passed=bool(r_comb <= bound))
