"""contrastlab: contrastive losses with negative-sampling bias correction.

A numerical laboratory around the debiased contrastive loss family:
exact enumeration on finite latent-class worlds, analytic gradients for a
small trainable encoder, and Monte Carlo certificates for the family's
finite-sample error and supervised-loss bounds.
"""

from .autograd import GradientReport, LossSpec, finite_diff_check, loss_and_grad
from .encoder import EncoderParams, ViewBatch, init_params
from .evaluation import ProbeResult, lemma4_chain_check, linear_probe
from .experiments import DIRECTION_PRESET, direction_probe_accuracy, figure2_direction_run
from .geometry import UnitEmbedding, normalize, normalize_jacobian, similarity
from .losses import (
    GEstimate,
    LossValue,
    OracleResult,
    asymptotic_debiased_exact,
    biased_loss_point,
    binomial_oracle,
    debiased_loss_batch,
    debiased_loss_point,
    g_estimator,
    mean_classifier_loss,
    mean_classifier_loss_data,
    softmax_ce,
    unbiased_loss_exact,
)
from .training import TrainConfig, make_batches, train
from .verification import (
    BoundCertificate,
    RateFit,
    SweepSpec,
    lemma1_certificate,
    oracle_certificate,
    rate_fit,
    theorem3_certificate,
    theorem5_constants,
)
from .worldmodel import (
    DiscreteClassMixture,
    SphereMixture,
    TripleSample,
    build_discrete,
    load_mixture,
    marginal,
    negative_dist,
    positive_dist,
    preset_mixture,
    preset_sphere,
    random_mixture,
    sample_triple,
    save_mixture,
)

__version__ = "0.1.0"
