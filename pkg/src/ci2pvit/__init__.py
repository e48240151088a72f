"""CI2P-ViT: vision transformers fed by a frozen learned-compression encoder.

Subpackages: ``core`` (numpy autodiff), ``codec``, ``ci2p``, ``vit``,
``flops`` (analytical cost model) and ``harness`` (data, training, checkpoints).
"""

from .ci2p import ci2p_forward, ci2p_forward_ds, cnn_reshape, patch_reshape
from .codec import CodecModel, rd_loss, reconstruct, train_codec
from .errors import (CheckpointCRCError, CheckpointError, CheckpointVersionError, CI2PError,
                     ConfigError, ContractError, DataError, DimensionError, NonFiniteError)
from .flops import model_flops, model_params, msa_flops, reduction_table
from .vit import ModelDesc, VisionClassifier, build_model, forward_classify, msa_forward

__version__ = "0.1.0"

__all__ = [
    "CodecModel", "rd_loss", "reconstruct", "train_codec",
    "ci2p_forward", "ci2p_forward_ds", "cnn_reshape", "patch_reshape",
    "ModelDesc", "VisionClassifier", "build_model", "forward_classify", "msa_forward",
    "model_flops", "model_params", "msa_flops", "reduction_table",
    "CI2PError", "ConfigError", "ContractError", "DataError", "DimensionError", "NonFiniteError",
    "CheckpointError", "CheckpointVersionError", "CheckpointCRCError",
]
