"""Magnus-Rosenbrock exponential integration of non-autonomous semilinear parabolic problems on P1 elements."""
from .assembly import (CoefficientField, apply_dirichlet, assemble_mass, assemble_stiffness, l2_error,
                       l2_norm, project_l2)
from .expmath import (KrylovConfig, LinearOperatorHandle, NoConvergence, arnoldi, expm_apply, phi1_apply,
                      phi_apply, phi_dense)
from .harness import (ConvergenceReport, compare_schemes, estimate_order, spatial_convergence_study,
                      temporal_convergence_study)
from .integrator import (InstabilityError, TimeGrid, exprb2_run, exprb2_step, magros_run, magros_step,
                         reference_solve)
from .mesh import BoundaryTag, Dirichlet, Mesh, Neumann, Robin, build_rect_mesh, tag_boundary
from .nonlinear import Nonlinearity, eval_F, eval_linearization, eval_remainder_G
from .problems import ProblemSpec, adr_problem, heat_problem

__version__ = "0.1.0"
