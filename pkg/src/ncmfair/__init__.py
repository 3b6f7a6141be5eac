"""Counterfactually fair prediction with neural causal models.

Two-stage pipeline: (1) train a mechanism network and an abductor network
with kernel least-squares (MMD²) losses, including an explicit
counterfactual-consistency loss and a near-world regularizer, so the pair
generates faithful counterfactual samples; (2) fine-tune a predictor with a
kernel-based counterfactual-fairness penalty and map out the resulting
fairness/performance trade-off.
"""

from .autodiff import Tensor, grad
from .data import Dataset, load_crimes, split
from .errors import (
    ArgumentError,
    ComparisonError,
    ConfigError,
    DegenerateFitError,
    ModelError,
    NcmFairError,
    NumericsError,
    SchemaError,
    TrainingError,
)
from .fairness import (
    FairTrainConfig,
    Predictor,
    evaluate,
    loss_fair_mean_mse,
    loss_fair_mmd,
    loss_pred,
    train_fair,
)
from .generation import (
    AbductorModel,
    GenTrainConfig,
    MechanismModel,
    generate_counterfactual,
    loss_ctf,
    loss_gen,
    loss_pos,
    loss_reg,
    train_stage1,
)
from .kernels import (
    Kernel,
    imq,
    median_heuristic,
    mmd2_mean_vs_mean,
    mmd2_mean_vs_point,
)
from .nn import Mlp, mlp_forward
from .optim import AdamState, adam_init, adam_step
from .rng import RngStream, sample_gaussian
from .scm import (
    GaussianPosterior,
    LinearGaussianSCM,
    OracleAbductor,
    OracleMechanism,
    analytic_counterfactual,
    analytic_posterior,
    default_scm,
    random_scm,
    sample_synthetic,
)
from .tradeoff import (
    FittedCurve,
    TradeoffPoint,
    auc,
    compare,
    emit_plot,
    fit_line,
    sweep,
)

__version__ = "0.1.0"
