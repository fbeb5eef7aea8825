"""depthmix: deterministic synthesis of pseudo depth-completion triplets.

Builds (image, sparse depth, dense label) training triplets by mixing
ground-truth depth with dense model predictions and rescaling the result,
then sub-sampling sparse maps that stay bit-exactly consistent with their
labels. Everything is seeded and replayable.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    CorruptFile,
    DepthmixError,
    EmptyDataset,
    EmptyDepth,
    EmptyResult,
    FactorError,
    FormatError,
    InsufficientOverlap,
    InsufficientValid,
    ManifestError,
    RangeError,
    ShapeError,
    WeightError,
)
from .geometry import (
    ALIGNMENT_MODES,
    STANDARDIZE_EPS,
    AlignmentResult,
    CameraIntrinsics,
    DepthMap,
    ImageStats,
    PointCloud,
    affine_align,
    affine_align_detailed,
    image_stats,
    standardize,
    unproject,
)
from .loss import (
    L1L2Breakdown,
    LossBreakdown,
    g2_loss,
    l1l2_loss,
    pyramid_nn,
    sobel_abs,
)
from .pipeline import (
    DiversityReport,
    PipelineConfig,
    SynthesisSummary,
    ValidationReport,
    load_pipeline_config,
    run_stats,
    run_synthesize,
    run_validate,
    spread_metric,
    stats_from_index,
)
from .formats import (
    Manifest,
    ManifestEntry,
    PredictionRef,
    TripletIndex,
    TripletRecord,
    read_depth,
    read_gray_image,
    read_manifest,
    read_triplet_index,
    write_depth,
    write_gray_image,
    write_manifest,
    write_triplet_index,
)
from .samplers import (
    SamplerSpec,
    SparseDepth,
    harris_response,
    sample,
    sample_features,
    sample_lidar,
    sample_uniform,
)
from .synthesis import (
    MixWeights,
    ModelPrediction,
    RelocationFactor,
    SynthesisConfig,
    SynthesisProvenance,
    derive_seed,
    draw_mix,
    draw_theta,
    interpolate,
    make_rng,
    relocate,
    synthesize_label,
)

__all__ = [name for name in dir() if not name.startswith("_")]
