"""Autoencoder reconstruction of multivariate ICU timeseries.

Dense and sequence-to-sequence LSTM autoencoders with hand-derived
gradients, a preprocessing pipeline from raw charted events to normalized
fixed-length windows, a synthetic cohort generator, and a CLI.
"""

from .checkpoint import load_checkpoint, model_kind, save_checkpoint
from .dense import (
    DenseAutoencoder,
    DenseLayer,
    dense_backward,
    dense_embed,
    dense_forward,
    embedding_dim,
    init_dense,
)
from .errors import (
    ConfigError,
    DataError,
    NumericError,
    ShapeError,
    StateError,
)
from .lstm import (
    LstmCellParams,
    SeqAutoencoder,
    SeqBatch,
    decode,
    encode,
    init_lstm_cell,
    init_seq,
    lstm_step,
    seq_forward_backward,
    seq_reconstruct,
)
from .numeric import (
    ActivationKind,
    activation_derivative,
    apply_activation,
    grad_check,
    matmul,
    mse,
    sigmoid,
)
from .pipeline import (
    CARE_UNITS,
    NUM_FEATURES,
    NormalizationStats,
    PreparedDataset,
    StayMeta,
    apply_cohort_filters,
    bucket_hourly,
    compute_stats,
    impute,
    load_events,
    load_manifest,
    load_split,
    normalize,
    prepare_dataset,
    save_dataset,
    split_stratified,
    window_and_pad,
)
from .synthetic import generate_stays, generate_synthetic_cohort
from .training import (
    Optimizer,
    TrainConfig,
    TrainHistory,
    WindowSet,
    evaluate_mse,
    train,
    write_history_csv,
)

__all__ = [
    "ActivationKind",
    "CARE_UNITS",
    "ConfigError",
    "DataError",
    "DenseAutoencoder",
    "DenseLayer",
    "LstmCellParams",
    "NUM_FEATURES",
    "NormalizationStats",
    "NumericError",
    "Optimizer",
    "PreparedDataset",
    "SeqAutoencoder",
    "SeqBatch",
    "ShapeError",
    "StateError",
    "StayMeta",
    "TrainConfig",
    "TrainHistory",
    "WindowSet",
    "activation_derivative",
    "apply_activation",
    "apply_cohort_filters",
    "bucket_hourly",
    "compute_stats",
    "decode",
    "dense_backward",
    "dense_embed",
    "dense_forward",
    "embedding_dim",
    "encode",
    "evaluate_mse",
    "generate_stays",
    "generate_synthetic_cohort",
    "grad_check",
    "impute",
    "init_dense",
    "init_lstm_cell",
    "init_seq",
    "load_checkpoint",
    "load_events",
    "load_manifest",
    "load_split",
    "lstm_step",
    "matmul",
    "model_kind",
    "mse",
    "normalize",
    "prepare_dataset",
    "save_checkpoint",
    "save_dataset",
    "seq_forward_backward",
    "seq_reconstruct",
    "sigmoid",
    "split_stratified",
    "train",
    "window_and_pad",
    "write_history_csv",
]

__version__ = "0.1.0"
