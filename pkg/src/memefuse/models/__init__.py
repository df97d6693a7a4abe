from .backbones import (
    BACKBONE_KEYS,
    Backbone,
    BackboneAdapter,
    BackboneProvider,
    StubBackboneProvider,
    TorchvisionBackboneProvider,
    UnknownBackbone,
)
from .base import MemeClassifier, PreprocessFailure, count_trainable
from .fusion import FusionModel, FusionSpec, ShapeMismatch, build_image_branch, build_text_branch, fuse_branches
from .textual import TextClassifier, TransformerSpec, UnknownModelKey, build_text_classifier
from .visual import CustomCNN, FinetuneClassifier, build_custom_cnn, build_finetune_model

__all__ = [
    "BACKBONE_KEYS",
    "Backbone",
    "BackboneAdapter",
    "BackboneProvider",
    "CustomCNN",
    "FinetuneClassifier",
    "FusionModel",
    "FusionSpec",
    "MemeClassifier",
    "PreprocessFailure",
    "ShapeMismatch",
    "StubBackboneProvider",
    "TextClassifier",
    "TorchvisionBackboneProvider",
    "TransformerSpec",
    "UnknownBackbone",
    "UnknownModelKey",
    "build_custom_cnn",
    "build_finetune_model",
    "build_image_branch",
    "build_text_branch",
    "build_text_classifier",
    "count_trainable",
    "fuse_branches",
]
