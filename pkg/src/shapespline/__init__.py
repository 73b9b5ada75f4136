"""Second-order spline interpolation and stochastic simulation of landmark
shape evolutions on a Gaussian-kernel Riemannian landmark space."""

from .adjoint import (CostateTrajectory, ObjectiveGradient, integrate_costate,
                      integrate_linearized, objective_gradient)
from .baseline import (PiecewiseGeodesicSolution, StudyResult, StudyRow,
                       convergence_study, fit_piecewise_geodesic, l2_error)
from .control_cost import (DUALKERNEL, EUCLIDEAN, MEASURE, ControlMetric, cost,
                           cost_grad_q, cost_grad_u, measure_gram, metric_apply,
                           metric_matrix)
from .datasets import (DatasetFile, ExperimentConfig, TimedBlock,
                       pinched_ellipse_truth, rotating_ellipse_truth,
                       synth_circle_to_pinched_ellipse,
                       synth_circle_to_rotating_ellipse, write_ensemble_csv,
                       write_study_csv, write_svg, write_trajectory_csv)
from .dynamics import (ControlPath, PhaseState, TimeGrid, Trajectory,
                       covariant_acceleration, dh0_dp, dh0_dx, h0,
                       integrate_controlled, integrate_geodesic,
                       reconstruct_velocity)
from .errors import (ConfigurationError, DegenerateConfigurationError,
                     GridMismatchError, IntegrationDivergedError,
                     MetricDegenerateError, NonFiniteInputError,
                     ShapeSplineError, ValidationError)
from .estimator import (OptimizerSettings, SplineProblem, SplineSolution,
                        default_grid, extrapolate, extrapolate_backward, fit,
                        objective)
from .kernels import (GaussianKernel, admissibility_constant, eval_kernel,
                      grad1_kernel, hess12_kernel, kernel_matrix,
                      kernel_scalar_matrix)
from .observations import ObservationSet
from .stochastic import (EnsembleStats, GaussianStream, NoiseSpec,
                         monte_carlo_hamiltonian, simulate_kunita, simulate_sde)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
