"""Momentum-family L-infinity adversarial attacks on small numpy models.

The package covers the full pipeline at desk scale: synthetic or IDX
datasets, differentiable classifiers with exact hand-derived gradients,
the momentum attack family (fgsm through the sampled variants), the
diversity/smoothing/scaling gradient transforms, and a transferability
evaluation harness. Everything is deterministic given its seeds.
"""

__version__ = "0.1.0"

from .attacks import (
    VARIANTS,
    AttackConfig,
    AttackResult,
    attack_batch,
    attack_one,
    emifgsm,
    enifgsm,
    erifgsm,
    fgsm,
    ifgsm,
    mifgsm,
    nifgsm,
    pifgsm,
    run_attack,
)
from .data import LabeledDataset, generate_synthetic, load_idx, subsample
from .errors import AdvmError
from .evaluate import (
    AblationResult,
    TransferMatrix,
    ablation_sweep,
    attack_success_rate,
    emit_report,
    parse_report_csv,
    transfer_matrix,
)
from .models import (
    EnsembleOracle,
    Model,
    ModelSpec,
    grad_check,
    load_model,
    save_model,
    train_sgd,
)
from .sampling import SamplingSpec, derive_rng, make_rng, sample_coefficients
from .tensor import load_tensor, project_linf, save_tensor
from .transforms import TransformConfig, make_estimator, tim_kernel

__all__ = [
    "AdvmError",
    "AttackConfig",
    "AttackResult",
    "AblationResult",
    "EnsembleOracle",
    "LabeledDataset",
    "Model",
    "ModelSpec",
    "SamplingSpec",
    "TransferMatrix",
    "TransformConfig",
    "VARIANTS",
    "attack_batch",
    "attack_one",
    "attack_success_rate",
    "ablation_sweep",
    "derive_rng",
    "emit_report",
    "emifgsm",
    "enifgsm",
    "erifgsm",
    "fgsm",
    "generate_synthetic",
    "grad_check",
    "ifgsm",
    "load_idx",
    "load_model",
    "load_tensor",
    "make_estimator",
    "make_rng",
    "mifgsm",
    "nifgsm",
    "parse_report_csv",
    "pifgsm",
    "project_linf",
    "run_attack",
    "sample_coefficients",
    "save_model",
    "save_tensor",
    "subsample",
    "tim_kernel",
    "train_sgd",
    "transfer_matrix",
    "__version__",
]
