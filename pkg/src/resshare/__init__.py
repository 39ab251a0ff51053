"""Grouped cross-layer weight sharing with low-rank residual adapters."""

from .accounting import ParamCount, count_params, report_tables, rounded_millions
from .config import EncoderConfig
from .encoder import Encoder, build_encoder, encoder_forward, mha_forward, sinusoidal_positions
from .gradcheck import finite_diff_check, finite_diff_report
from .loadsim import LoadReport, simulate_load
from .masks import ChunkMaskSpec, attention_mask, mask_to_bias
from .projection import (
    ProjectionSite,
    ResidualAdapter,
    SharedProjection,
    effective_apply,
    group_index,
    init_adapter,
    materialize_delta,
)
from .tensor import Tensor, backward, count_macs
from .training import Adam, ToyModel, ToyTask, TrainConfig, eval_loss, lr_at, train, two_stage

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "ChunkMaskSpec",
    "Encoder",
    "EncoderConfig",
    "LoadReport",
    "ParamCount",
    "ProjectionSite",
    "ResidualAdapter",
    "SharedProjection",
    "Tensor",
    "ToyModel",
    "ToyTask",
    "TrainConfig",
    "attention_mask",
    "backward",
    "build_encoder",
    "count_macs",
    "count_params",
    "effective_apply",
    "encoder_forward",
    "eval_loss",
    "finite_diff_check",
    "finite_diff_report",
    "group_index",
    "init_adapter",
    "lr_at",
    "mask_to_bias",
    "materialize_delta",
    "mha_forward",
    "report_tables",
    "rounded_millions",
    "simulate_load",
    "sinusoidal_positions",
    "train",
    "two_stage",
    "__version__",
]
