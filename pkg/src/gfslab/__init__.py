"""Lattice laboratory for a U(1)-gauged nonlinear functional Schrodinger system.

The package discretizes the functional Schrodinger picture of a scalar
theory on a small spatial lattice with one field axis per site, couples
the wave functional to a configuration-space connection through an
entropy-type charge density, and provides stationary (self-consistent)
and time-dependent solvers together with the structural checks of the
model: gauge invariance, charge neutrality, the Gauss constraint and
continuity, weak superposition, orthogonality, and the infrared behavior
of the coupling.
"""

from .errors import ContractViolationError, ConvergenceError, EvolutionAborted
from .grid import Grid, config_laplacian, functional_derivative, functional_integral
from .state import (GaugeState, ModelParams, P_FLOOR, WaveFunctional,
                    cell_probability, charge_density_and_total,
                    charge_neutral_entropy, covariant_derivative,
                    current_density, density, evolution_prefactor,
                    gauge_parameter_gradient, gauge_transform)
from .hamiltonian import (DENSE_CAP, DiscreteHamiltonian, apply_hamiltonian,
                          build_dense_hamiltonian, build_hamiltonian,
                          energy_expectation, field_strength_apply)
from .poisson import (PoissonProblem, field_divergence, gauss_residual,
                      gauss_source, initial_longitudinal_field, solve_poisson)
from .dynamics import (EPS_P, EvolutionState, MicrocausalityReport,
                       TraceRecord, TRACE_COLUMNS, continuity_residual,
                       coupled_rhs, evolve, evolve_linear_baseline,
                       initial_evolution_state, microcausality_probe)
from .stationary import (OrthogonalityResult, ScanResult, ScanRow, SCFConfig,
                         StationaryState, SuperpositionReport, eom_residual,
                         ir_limit_scan, orthogonality_check, scf_solve,
                         solve_frozen_eigenproblem, superposition_check,
                         variational_gaussian)

__version__ = "0.1.0"
