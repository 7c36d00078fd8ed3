"""Pose-aware embeddings and evaluation metrics for novel view synthesis.

The toolkit turns pre-extracted backbone activations (PRSA files) into
compact unit-norm embeddings via spatial pooling and a trained projection
head, scores generations with reference-based and distributional metrics,
and reproduces the geometric mask construction and image-degradation
machinery used to build contrastive view benchmarks.
"""

from .core_io import (
    ActivationStack,
    CameraPose,
    ContractError,
    CorruptionError,
    DataError,
    EmbeddingSet,
    FeatureVector,
    FormatError,
    Manifest,
    RelativePose,
    TripletRecord,
    load_manifest,
    read_activation_file,
    read_embedding_file,
    save_manifest,
    validate_manifest,
    write_activation_file,
    write_embedding_file,
)
from .head import MlpHead, TrainConfig, forward, train_head, triplet_loss
from .metrics import (
    GaussianStats,
    KernelConfig,
    auc,
    cosine_score,
    d_prism,
    frechet_distance,
    gaussian_stats,
    joint_concat,
    linear_probe,
    median_bandwidth,
    mmd_prism,
    mmd_unbiased,
    pearson,
    psnr,
    sqrtm_psd,
    ssim,
)
from .pooling import PoolingConfig, build_raw_feature, pool_block

__version__ = "0.1.0"

__all__ = [
    "ActivationStack",
    "CameraPose",
    "ContractError",
    "CorruptionError",
    "DataError",
    "EmbeddingSet",
    "FeatureVector",
    "FormatError",
    "GaussianStats",
    "KernelConfig",
    "Manifest",
    "MlpHead",
    "PoolingConfig",
    "RelativePose",
    "TrainConfig",
    "TripletRecord",
    "auc",
    "build_raw_feature",
    "cosine_score",
    "d_prism",
    "forward",
    "frechet_distance",
    "gaussian_stats",
    "joint_concat",
    "linear_probe",
    "load_manifest",
    "median_bandwidth",
    "mmd_prism",
    "mmd_unbiased",
    "pearson",
    "pool_block",
    "psnr",
    "read_activation_file",
    "read_embedding_file",
    "save_manifest",
    "sqrtm_psd",
    "ssim",
    "train_head",
    "triplet_loss",
    "validate_manifest",
    "write_activation_file",
    "write_embedding_file",
]
