"""polyfk: positivity-preserving polytopal DG solver for the
Fisher-Kolmogorov equation via the exponential transform c = e^lam."""

__version__ = "0.1.0"

from .mesh import (DIRICHLET, NEUMANN, Face, MeshError, PolyMesh,
                   RegularityReport, arithmetic_avg, build_poly_mesh,
                   generate_voronoi, harmonic_avg, mesh_metrics, read_mesh,
                   read_trimesh, write_mesh)
from .agglomerate import TriMesh, agglomerate
from .dgspace import (DGSpace, QuadRule, SpaceError, build_space,
                      element_quadrature, face_quadrature)
from .forms import (FormError, ModelData, PenaltyContext, State,
                    build_penalty, dg_norm, dg_norm_exp, discrete_entropy,
                    estimate_CI, form_A, min_concentration, penalty_eta, penalty_zeta,
                    theta_jacobian, theta_residual)
from .solver import (NewtonParams, RunConfig, SolverError, StepStats,
                     Trajectory, cellwise_lambda, initial_lambda, run,
                     step_baseline, step_theta)
from .verify import (ConvergenceTable, ManufacturedCase, WaveParams,
                     WaveProfile, activation_time, convergence_study,
                     error_norms, find_wave_mesh, fit_front_speed,
                     manufactured_case, region_means, two_label_disk,
                     wave_oracle)

__all__ = [name for name in dir() if not name.startswith("_")]
