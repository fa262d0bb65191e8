from .config import ModelConfig
from .inference import extract_feature, extract_manifest_features, reconstruct_templates
from .losses import arcface_logits, arcface_loss, bce, l2_normalize, rec_loss, total_loss
from .networks import BACKBONES, ArcFaceHead, ConvEncoder, TattTRN, UNet, make_backbone, register_backbone
from .training import (
    TrainState,
    color_jitter,
    load_checkpoint,
    load_manifest_arrays,
    new_state,
    read_history,
    save_checkpoint,
    to_tensor,
    train,
)

__all__ = [
    "ModelConfig", "TattTRN", "UNet", "ConvEncoder", "ArcFaceHead", "BACKBONES",
    "make_backbone", "register_backbone", "bce", "rec_loss", "arcface_logits",
    "arcface_loss", "total_loss", "l2_normalize", "TrainState", "new_state", "train",
    "save_checkpoint", "load_checkpoint", "read_history", "color_jitter", "to_tensor",
    "load_manifest_arrays", "extract_feature", "extract_manifest_features",
    "reconstruct_templates",
]
