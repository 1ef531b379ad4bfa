"""Distributed channel-optimised vector quantiser."""

from dcvq.quantizer.core import (
    ANALYTIC,
    SAMPLED,
    Codebook,
    HistoryEntry,
    QuantizerSystem,
    decode,
    encode,
    point_to_point_costs,
    update_decoder,
)
from dcvq.quantizer.prequant import PreQuantizer, design_prequantizer, prequantize
from dcvq.quantizer.tables import SideTables, build_side_tables, encoder_cost, encoder_costs
from dcvq.quantizer.training import (
    CentralizedSystem,
    Evaluation,
    TrainingConfig,
    distortion_report,
    evaluate,
    train,
    train_centralized,
)

__all__ = [
    "ANALYTIC",
    "SAMPLED",
    "CentralizedSystem",
    "Codebook",
    "Evaluation",
    "HistoryEntry",
    "PreQuantizer",
    "QuantizerSystem",
    "SideTables",
    "TrainingConfig",
    "build_side_tables",
    "decode",
    "design_prequantizer",
    "distortion_report",
    "encode",
    "encoder_cost",
    "encoder_costs",
    "evaluate",
    "point_to_point_costs",
    "prequantize",
    "train",
    "train_centralized",
    "update_decoder",
]
