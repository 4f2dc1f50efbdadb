"""Regional adversarial training on small fully-connected classifiers."""

from .attacks import AttackConfig, AttackPath, cw_pgd, fgsm, first_end_points, pgd
from .engine import (
    DenseLayer,
    GradientBundle,
    MlpModel,
    SgdState,
    backward,
    forward,
    init_mlp,
    load_checkpoint,
    predict,
    save_checkpoint,
    sgd_step,
    soft_cross_entropy,
)
from .regional import (
    PerturbedSample,
    RatConfig,
    SoftLabel,
    ars_sample,
    dls_beta,
    dls_label,
    rat_train_step,
    sample_direction,
    sample_perturbed,
    sat_train_step,
    st_train_step,
)

__version__ = "0.1.0"
