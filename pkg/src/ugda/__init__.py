"""Uncertainty-guided RGB statistics augmentation for stereo pairs."""

__version__ = "0.1.0"

from .augment import (
    AugmentConfig,
    BatchStatSpread,
    ChannelStats,
    ClipPolicy,
    DrawRecord,
    PairMode,
    PerturbationDraw,
    apply_augmentation,
    augment_batch,
    augment_images,
    batch_spread,
    channel_stats,
    read_draw_log,
    sample_perturbation,
    write_draw_log,
)
from .consistency import (
    ConsNorm,
    FeatureMap,
    LossConfig,
    ToyExtractor,
    consistency_loss,
    extract_features,
    loss_gradients,
    smooth_l1,
    total_loss,
)
from .dataio import (
    DatasetManifest,
    FormatError,
    ManifestEntry,
    StereoPair,
    load_image,
    make_synthetic_pair,
    read_kitti_disparity,
    read_manifest,
    read_pfm,
    write_pfm,
)
from .metrics import MetricReport, compute_d1, compute_epe, error_map, feature_histogram, image_histogram
from .stereo import (
    CensusMap,
    CostVolume,
    DisparityMap,
    SgmParams,
    build_cost_volume,
    census_transform,
    lr_consistency_check,
    match,
    sgm_aggregate,
    wta_subpixel,
)
from .tensor import (
    EmptyOverlapError,
    ImageBatch,
    ImageF,
    InvalidInputError,
    RngStream,
    elementwise_affine,
    gaussian_draw,
)

__all__ = [
    "AugmentConfig",
    "BatchStatSpread",
    "CensusMap",
    "ChannelStats",
    "ClipPolicy",
    "ConsNorm",
    "CostVolume",
    "DatasetManifest",
    "DisparityMap",
    "DrawRecord",
    "EmptyOverlapError",
    "FeatureMap",
    "FormatError",
    "ImageBatch",
    "ImageF",
    "InvalidInputError",
    "LossConfig",
    "ManifestEntry",
    "MetricReport",
    "PairMode",
    "PerturbationDraw",
    "RngStream",
    "SgmParams",
    "StereoPair",
    "ToyExtractor",
    "apply_augmentation",
    "augment_batch",
    "augment_images",
    "batch_spread",
    "build_cost_volume",
    "census_transform",
    "channel_stats",
    "compute_d1",
    "compute_epe",
    "consistency_loss",
    "elementwise_affine",
    "error_map",
    "extract_features",
    "feature_histogram",
    "gaussian_draw",
    "image_histogram",
    "load_image",
    "loss_gradients",
    "lr_consistency_check",
    "make_synthetic_pair",
    "match",
    "read_draw_log",
    "read_kitti_disparity",
    "read_manifest",
    "read_pfm",
    "sample_perturbation",
    "sgm_aggregate",
    "smooth_l1",
    "total_loss",
    "write_draw_log",
    "write_pfm",
    "wta_subpixel",
]
