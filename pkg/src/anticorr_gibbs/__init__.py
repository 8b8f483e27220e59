"""Blocked Gibbs sampling with anti-correlation Gaussian augmentation.

The package samples posteriors of the form
``exp(-(theta'M theta - 2 phi'theta)/2 - (beta'H beta - 2 psi'beta)/2)`` with
``theta`` the soft-thresholded precursor ``beta``, by augmenting Gaussians
``r ~ N((dI - M) theta, dI - M)`` that make all coordinates conditionally
independent.
"""

from .anticorr import (AntiCorrSpec, DirectAnticorr, HomoscedasticAnticorr, RegressionOmega,
                       choose_d, sample_anticorr_direct, sample_anticorr_regression,
                       sample_anticorr_series, series_truncation)
from .distributions import (SliceConfig, TruncInterval, log_phi_diff, sample_inverse_gamma,
                            sample_truncnorm, slice_sample_1d)
from .engine import (ChainConfig, ChainState, QuadTarget, SampleStore, gibbs_step,
                     latent_gaussian_decouple_update, run_chain, truncated_mvn_step)
from .exceptions import (AnticorrError, ConfigError, DefinitenessError, DegenerateChainWarning,
                         InvalidInputError, NumericError)
from .l1ball import (CoordCoeffs, MixtureWeights, blocked_beta_update, kappa_slice_update,
                     mixture_log_weights, sample_beta_coord, soft_threshold)
from .spectral_linalg import (SvdFactors, cholesky_psd, frobenius_bound, full_svd,
                              spectral_upper_bound)

__version__ = "0.1.0"
