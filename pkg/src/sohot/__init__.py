"""Scatter-tensor domain adaptation: explicit and kernelized alignment losses,
learnable per-class weights, analytic gradients, and a two-stream trainer."""

from .errors import (
    ArgumentError,
    CapacityError,
    DivergenceError,
    EmptyDatasetError,
    ParseError,
    ShapeError,
    SohotError,
    StateError,
)
from .tensors import (
    Domain,
    FeatureMatrix,
    ScatterTensor,
    compute_mean,
    compute_scatter,
    memory_cap,
    packed_layout,
    tensor_frob_dist_sq,
    tensor_inner,
    unique_coeff_count,
)
from .kernels import (
    KernelBlocks,
    build_kernel_blocks,
    cost_model,
    kernel_frob_dist_sq,
    kernel_frob_dist_sq_from_blocks,
    kernel_tensor_inner,
)
from .losses import (
    AlignmentConfig,
    AlignmentTerms,
    Batch,
    LossBreakdown,
    ObjectiveGrads,
    alignment_loss_unweighted,
    alignment_loss_weighted,
    full_objective,
    grad_explicit_cov_align,
    grad_kernelized_align,
    grad_mean_align,
    grad_weights,
    softmax_loss_and_grad,
)
from .streams import (
    StreamParams,
    TwoStreamModel,
    forward_features,
    init_two_stream,
    project_ball,
    stream_forward,
)
from .data import (
    DomainSplits,
    LabeledDataset,
    ShiftSpec,
    default_benchmark_spec,
    generate,
    load_features,
    save_features,
)
from .trainer import (
    EpochMetrics,
    StatScope,
    TrainConfig,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    train,
    train_pooled_baseline,
    write_metrics_csv,
)
from .gradcheck import BlockReport, run_gradcheck

__version__ = "0.1.0"
