"""VAD facial-expression regression with orthogonality-regularized convolutions."""

from .autodiff import (
    ComputeGraph,
    EmptyInputError,
    GeometryError,
    ShapeError,
    Tensor,
    backward,
    conv2d,
    finite_diff_check,
    frobenius_sq,
    linear,
    mse_loss,
    relu,
)
from .dataset import (
    AnnotationRecord,
    EmotionCategory,
    FaceImage,
    Split,
    VadTriple,
    consistency_filter,
    emotion_to_vad,
    load_annotations,
    parse_fer2013,
    to_training_set,
    vad_distribution,
)
from .model import (
    Dimension,
    DimensionModel,
    NetworkConfig,
    TrainConfig,
    build_model,
    load_checkpoint,
    lr_at,
    predict,
    save_checkpoint,
    total_loss,
)
from .ortho import (
    ConvKernel,
    DbtMatrix,
    IdentityTarget,
    build_dbt,
    choose_orientation,
    kernel_orth_loss_col,
    kernel_orth_loss_row,
    orth_loss,
    self_conv,
    spectral_profile,
)
from .report import EvalReport, RankReport, evaluate, rank_aggregate, render_tables, rmse
from .train import TrainingDivergedError, train

__version__ = "0.1.0"

__all__ = [
    "ComputeGraph", "EmptyInputError", "GeometryError", "ShapeError", "Tensor",
    "backward", "conv2d", "finite_diff_check", "frobenius_sq", "linear", "mse_loss",
    "relu",
    "AnnotationRecord", "EmotionCategory", "FaceImage", "Split", "VadTriple",
    "consistency_filter", "emotion_to_vad", "load_annotations", "parse_fer2013",
    "to_training_set", "vad_distribution",
    "Dimension", "DimensionModel", "NetworkConfig", "TrainConfig", "build_model",
    "load_checkpoint", "lr_at", "predict", "save_checkpoint", "total_loss",
    "ConvKernel", "DbtMatrix", "IdentityTarget", "build_dbt", "choose_orientation",
    "kernel_orth_loss_col", "kernel_orth_loss_row", "orth_loss", "self_conv",
    "spectral_profile",
    "EvalReport", "RankReport", "evaluate", "rank_aggregate", "render_tables", "rmse",
    "TrainingDivergedError", "train",
]
