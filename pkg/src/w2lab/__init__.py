"""w2lab: Wasserstein-2 error bounds for small diffusion models.

Train denoising score models on synthetic 1D/2D data, measure exact
empirical W2 distances, and verify loss-based upper bounds on the distance
between the data law and the generated law.
"""

from .boundlab import (BoundReport, SweepResult, bound_rhs_corollary,
                       bound_rhs_theorem, build_report, contraction_offset,
                       integrating_factor_series, intercept_value,
                       loglog_point, perturbation_bound, perturbation_check,
                       sweep_T)
from .errors import ConfigError, DivergenceError
from .estimators import (KdeModel, estimate_jsm, gaussian_score_onesided,
                         h_decay, kde_density, kde_score,
                         one_sided_lipschitz_grid, score_field_lipschitz)
from .ot import TransportPlan, w2_bruteforce, w2_empirical, w2_gaussian_isotropic
from .sampler import ReverseMode, forward_diffuse, generate as generate_samples, reverse_ancestral
from .schedule import (NoiseSchedule, build_sigmoid_schedule, conditional_score,
                       lipschitz_Lf, marginal_params)
from .scorenet import (OptimizerState, ScoreNetwork, adamw_step, backward_grads,
                       forward_batch, forward_eval, init_adamw, init_network,
                       load_network, save_network, spectral_normalize,
                       weight_clip)
from .synthdata import DATASET_KINDS, DatasetSpec, SampleSet, generate, perturb
from .training import (TrainConfig, TrainHistory, dsm_batch_loss,
                       kl_estimate_epoch, run_training)

__version__ = "0.1.0"
