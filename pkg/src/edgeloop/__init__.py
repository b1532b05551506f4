"""Desk-scale CNN lifecycle: train, exchange, run at the edge, re-train."""

from .bench import LoopReport, ModelSpec, TradeoffReport, run_sustainability_loop, run_tradeoff_bench
from .data import Dataset, load_dataset, merge_datasets, preprocess_dataset, save_dataset
from .exchange import (
    OpSupportTable,
    default_support_table,
    export_model,
    import_model,
    load_support_table,
    rewrite_reshape_to_flatten,
    validate_ops,
)
from .graph import GraphNode, ModelGraph
from .models import (
    ComplexityMetrics,
    SmallCnnConfig,
    build_mobile_net,
    build_residual_net,
    build_small_cnn,
    count_parameters,
    storage_weight,
)
from .ops import GradTape, LayerParams, Mode, ParamKind, backward
from .ppm import Image, decode_ppm, encode_ppm
from .preprocess import (
    ChannelStats,
    PreprocessSpec,
    augment_geometric,
    center_crop,
    compute_dataset_stats,
    preprocess_pipeline,
    resize_bilinear,
    standardize,
    to_tensor,
)
from .rng import Rng
from .runtime import Prediction, RuntimeSession, load_session, measure_latency, predict
from .synth import SynthSpec, generate_synthetic
from .training import (
    Regime,
    TrainConfig,
    TrainReport,
    apply_regime,
    evaluate_accuracy,
    split_train_test,
    train,
)

__version__ = "0.1.0"
