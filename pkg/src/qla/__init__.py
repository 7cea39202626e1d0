"""Quasi-likelihood analysis for volatility parameters of sampled diffusions."""
from .errors import *  # noqa: F401,F403
from .model import ModelSpec, get_model, s_matrix, s_chol_logdet_inv, dtheta_s, REGISTRY
from .simulate import SamplePath, simulate_path, simulate_paths, gaussian_stream
from .qlik import (Observations, QlikEval, h_n, h_n_grid, h_n_grad_hess, gamma_n, z_field,
                   log_z_grid, z_decomposition, y_field, y_limit, gamma_info)

__version__ = "0.1.0"
from .estimate import (Prior, EstimationResult, qmle, bayes, qmle_with_bayes_init, standardize,
                       run_estimator, projected_newton)
from .nondeg import (q_divergence, chi0, h2_tail_curve, pldi_tail, separation_check,
                     supporting_bound_check, power_support, sin_sin_support, SupportingFunctionSpec)
from .mcstudy import StudyConfig, EstimatorSpec, McReport, run_study, summarize, dump_csv
from .io import ingest_csv, paths_csv
