"""Image-only classifiers: a small CNN trained from scratch and frozen-backbone heads."""

from __future__ import annotations

from typing import Sequence

import torch
from torch import nn

from ..corpus import IMAGE_SIZE, MemeRecord
from ..training import TrainingPlan
from .backbones import BackboneAdapter, BackboneProvider
from .base import MemeClassifier, count_trainable, glorot_init, image_batch


def conv_stack(filters: Sequence[int], in_channels: int = 3) -> nn.Sequential:
    """3x3 valid convolutions with ReLU, each followed by 2x2 max pooling."""
    layers: list[nn.Module] = []
    for out in filters:
        layers += [nn.Conv2d(in_channels, out, 3), nn.ReLU(), nn.MaxPool2d(2)]
        in_channels = out
    return nn.Sequential(*layers)


def conv_stack_side(side: int, n_blocks: int) -> int:
    for _ in range(n_blocks):
        side = (side - 2) // 2
    return side


class ImageClassifier(MemeClassifier):
    input_keys = ("images",)

    def prepare(self, records: Sequence[MemeRecord]) -> dict[str, torch.Tensor]:
        return {"images": image_batch(records)}


class CustomCNN(ImageClassifier):
    """Four conv blocks (32, 64, 128, 128) -> dense 512 -> dropout 0.1 -> sigmoid unit."""

    FILTERS = (32, 64, 128, 128)

    def __init__(self, image_size: int = IMAGE_SIZE, dropout: float = 0.1):
        super().__init__()
        self.features = conv_stack(self.FILTERS)
        side = conv_stack_side(image_size, len(self.FILTERS))
        self.flatten_width = side * side * self.FILTERS[-1]
        self.dense = nn.Linear(self.flatten_width, 512)
        self.dropout = nn.Dropout(dropout)
        self.out = nn.Linear(512, 1)
        glorot_init(self)

    def forward(self, inputs: dict[str, torch.Tensor]) -> torch.Tensor:
        x = self.features(inputs["images"])
        # channels-last flatten, matching the usual HxWxC layer description
        x = x.permute(0, 2, 3, 1).flatten(1)
        x = self.dropout(torch.relu(self.dense(x)))
        return self.out(x).squeeze(-1)

    def head_layer(self) -> nn.Linear:
        return self.out

    def describe(self) -> dict:
        return {
            "class": "CustomCNN",
            "filters": list(self.FILTERS),
            "flatten_width": self.flatten_width,
            "dense_units": 512,
            "dropout": self.dropout.p,
            "trainable_params": count_trainable(self),
        }


class FinetuneClassifier(ImageClassifier):
    """Backbone -> global average pool -> dense 256 (ReLU) -> sigmoid unit."""

    def __init__(self, adapter: BackboneAdapter, provider: BackboneProvider):
        super().__init__()
        self.adapter = adapter
        self.base = provider.get(adapter.backbone_key)
        if adapter.freeze_base:
            self.base.freeze()
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.dense = nn.Linear(self.base.out_channels, 256)
        self.out = nn.Linear(256, 1)
        glorot_init(self.dense)
        glorot_init(self.out)

    def forward(self, inputs: dict[str, torch.Tensor]) -> torch.Tensor:
        x = self.pool(self.base(inputs["images"])).flatten(1)
        return self.out(torch.relu(self.dense(x))).squeeze(-1)

    def head_layer(self) -> nn.Linear:
        return self.out

    def head_parameters(self):
        return list(self.dense.parameters()) + list(self.out.parameters())

    def describe(self) -> dict:
        return {
            "class": "FinetuneClassifier",
            "backbone": self.adapter.backbone_key,
            "freeze_base": self.adapter.freeze_base,
            "base_channels": self.base.out_channels,
            "trainable_params": count_trainable(self),
        }


def build_custom_cnn() -> CustomCNN:
    return CustomCNN()


def build_finetune_model(adapter: BackboneAdapter, provider: BackboneProvider) -> FinetuneClassifier:
    return FinetuneClassifier(adapter, provider)


def visual_training_plan(**overrides) -> TrainingPlan:
    plan = TrainingPlan(optimizer="rmsprop", lr=1e-3, epochs=50, batch=32, early_stopping=None)
    return plan.with_overrides(**overrides)
