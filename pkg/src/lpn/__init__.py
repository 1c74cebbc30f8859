"""Learned proximal networks.

Gradients of input-convex networks used as proximal operators: training by
proximal matching, recovery of the implied regularizer, and plug-and-play
solvers for linear inverse problems.
"""
from .checkpoint import load_checkpoint, read_header, save_checkpoint
from .icnn import (IcnnArch, IcnnParams, ParamGrad, clip_nonneg, directional_derivative, init_params,
                   lpn_forward, lpn_jacobian, param_grad_through_lpn, psi, zero_params)
from .losses import loss_l1, loss_l2, loss_pm
from .operators import (Blur, GaussianCS, Identity, LinearOperator, Mask, MatrixOperator, cg_solve,
                        make_operator, op_norm_sq)
from .pnp import KktResiduals, PnpConfig, PnpState, admm_solve, kkt_residuals, pgd_objective_trace, pgd_solve
from .prior import (InversionResult, PriorCurve, PriorEval, eval_prior, eval_prior_batch, eval_prior_curve,
                    invert_convex, invert_nonconvex)
from .training import (AdamState, DataSource, GammaSchedule, TrainConfig, TrainingError, adam_step,
                       make_batch, train)

__version__ = "0.1.0"
