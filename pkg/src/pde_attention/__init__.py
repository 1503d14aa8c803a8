"""Attention matrices evolved as discrete fields under explicit PDE steps.

The package treats an attention matrix as a sampled field and pushes it
through a few explicit Euler steps of diffusion, wave, reaction-diffusion,
or advection-diffusion dynamics before the usual value aggregation. It
bundles:

- finite-difference operators and spectral helpers (:mod:`~pde_attention.grid`)
- the evolution engine with CFL guards and divergence detection
  (:mod:`~pde_attention.pde`)
- field diagnostics (:mod:`~pde_attention.metrics`)
- the evolved-attention layer with hand-written gradients
  (:mod:`~pde_attention.attention`), plus a sparse/global hybrid
  (:mod:`~pde_attention.hybrid`)
- a small NumPy transformer and its training loop
  (:mod:`~pde_attention.model`, :mod:`~pde_attention.training`)
- numerical verification suites (:mod:`~pde_attention.verify`), timing
  helpers (:mod:`~pde_attention.bench`), synthetic datasets
  (:mod:`~pde_attention.data`), scikit-learn style facades
  (:mod:`~pde_attention.estimators`), and the ``pde-attention`` command line
  (:mod:`~pde_attention.cli`).
"""

from .attention import (
    AttentionTape,
    GradientCheckReport,
    ProjectionWeights,
    WeightGradients,
    attention_init,
    causal_mask,
    gradient_check,
    pde_attention_backward,
    pde_attention_forward,
    softmax,
)
from .bench import bench_rows, fitted_loglog_slope, time_one_step
from .data import (
    Dataset,
    DatasetKind,
    make_char_text,
    make_char_text_file,
    make_copy_task,
    make_dataset,
    make_long_range_recall,
)
from .errors import (
    ConfigError,
    DegenerateFieldError,
    DivergenceError,
    StabilityError,
)
from .estimators import AttentionEvolver, PdeTransformerClassifier
from .grid import (
    AxisMode,
    BoundaryCondition,
    GradScheme,
    Spectrum,
    dft_row,
    gradient_1d,
    gradient_rows,
    idft_row,
    laplacian_1d,
    laplacian_apply,
    laplacian_eigenvalues,
    laplacian_rows,
    masked_laplacian_rows,
)
from .hybrid import (
    HybridErrorReport,
    SparsePattern,
    hybrid_attention,
    hybrid_error_experiment,
    sparse_init,
)
from .metrics import (
    DynamicsMetrics,
    consistency,
    effective_range,
    perplexity,
    smoothness,
)
from .model import (
    AttentionVariant,
    ModelConfig,
    PdeTransformer,
    TaskKind,
    cross_entropy_from_logits,
)
from .pde import (
    REFERENCE_COEFFICIENTS,
    AttentionField,
    PdeConfig,
    PdeKind,
    StepMetrics,
    Trajectory,
    WaveState,
    advection_diffusion_step,
    cfl_max_step,
    diffusion_step,
    evolve,
    reaction_diffusion_step,
    run_evolution,
    step_values,
    suggest_params,
    wave_step,
)
from .training import TrainingOptions, TrainRecord, evaluate, train
from .verify import ALL_SUITES, VerificationReport, run_all

__version__ = "0.1.0"

__all__ = [
    "ALL_SUITES",
    "AttentionEvolver",
    "AttentionField",
    "AttentionTape",
    "AttentionVariant",
    "AxisMode",
    "BoundaryCondition",
    "ConfigError",
    "Dataset",
    "DatasetKind",
    "DegenerateFieldError",
    "DivergenceError",
    "DynamicsMetrics",
    "GradScheme",
    "GradientCheckReport",
    "HybridErrorReport",
    "ModelConfig",
    "PdeConfig",
    "PdeKind",
    "PdeTransformer",
    "PdeTransformerClassifier",
    "ProjectionWeights",
    "REFERENCE_COEFFICIENTS",
    "SparsePattern",
    "Spectrum",
    "StabilityError",
    "StepMetrics",
    "TaskKind",
    "Trajectory",
    "TrainRecord",
    "TrainingOptions",
    "VerificationReport",
    "WaveState",
    "WeightGradients",
    "advection_diffusion_step",
    "attention_init",
    "bench_rows",
    "causal_mask",
    "cfl_max_step",
    "consistency",
    "cross_entropy_from_logits",
    "dft_row",
    "diffusion_step",
    "effective_range",
    "evaluate",
    "evolve",
    "fitted_loglog_slope",
    "gradient_1d",
    "gradient_check",
    "gradient_rows",
    "hybrid_attention",
    "hybrid_error_experiment",
    "idft_row",
    "laplacian_1d",
    "laplacian_apply",
    "laplacian_eigenvalues",
    "laplacian_rows",
    "make_char_text",
    "make_char_text_file",
    "make_copy_task",
    "make_dataset",
    "make_long_range_recall",
    "masked_laplacian_rows",
    "perplexity",
    "pde_attention_backward",
    "pde_attention_forward",
    "reaction_diffusion_step",
    "run_all",
    "run_evolution",
    "smoothness",
    "softmax",
    "sparse_init",
    "step_values",
    "suggest_params",
    "time_one_step",
    "train",
    "wave_step",
    "__version__",
]
