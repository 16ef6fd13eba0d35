"""Higher-order score functions, Stein cross-moments, and rank-1 tensor
feature extraction.

The pipeline: evaluate score tensors of a generative input model, form
cross-moments with labels to estimate expected label-function derivatives,
decompose those tensors into rank-1 components, and read off discriminative
features sigma(u_j . x).
"""

__version__ = "0.1.0"

from ._kernels import BACKEND_NAME
from .errors import (
    BreakdownError,
    DegeneratePointError,
    FitError,
    NonFiniteError,
    NumericError,
    PartialResultError,
    RankDeficiencyError,
    ScoreMomentsError,
    ShapeError,
    SizeLimitError,
    TensorFormatError,
    UnsupportedVariantError,
    ValidationError,
)
from .pipeline import (
    ExperimentConfig,
    LabelSpec,
    PipelineReport,
    SelftaughtReport,
    extract_features,
    match_components,
    run_pipeline,
    selftaught_pipeline,
    synth_generate,
)
from .score_models import (
    AffineTransformed,
    DensityModel,
    ExpFamily,
    GaussianMixture,
    StandardGaussian,
    gmm_posterior,
    hermite,
    load_model,
    log_density,
    model_from_dict,
    model_to_dict,
    parametric_score_gaussian_mean,
    save_model,
    score,
    score_batch,
    score_explicit,
    selftaught_refit_weights,
    transform_score_affine,
)
from .spectral_decomp import (
    DecompConfig,
    DecompositionResult,
    WhitenResult,
    cluster,
    decompose,
    initialize,
    matrix_decompose,
    power_iteration,
    unwhiten_components,
    whiten,
    whitened_tensor,
)
from .stein_moments import (
    LabeledDataset,
    MomentEstimate,
    PolyFunction,
    SteinReport,
    cross_moment,
    expected_derivative,
    model_quadrature,
    parametric_stein_residual,
    permutation_delta,
    stein_residual,
)
from .tensor_core import (
    DenseTensor,
    Permutation,
    contract_fibers,
    multilinear_form,
    numeric_gradient,
    rank1_sum,
    read_tensor,
    tensor_product,
    transpose,
    write_tensor,
)

__all__ = [name for name in dir() if not name.startswith("_")]
