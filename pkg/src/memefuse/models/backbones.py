"""Pretrained image backbones and their offline stand-ins.

A backbone maps an NCHW batch of [0, 1] images to an NCHW feature map with
``out_channels`` channels. Both providers below honour that contract for
every key, so heads built on a stub also fit the real network.
"""

from __future__ import annotations

import os
import zlib
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

BACKBONE_KEYS = ("vgg16", "inception_v3", "resnet50")
OUT_CHANNELS = {"vgg16": 512, "inception_v3": 2048, "resnet50": 2048}
# torchvision's InceptionV3 rejects inputs smaller than 75 px
MIN_SIDE = {"vgg16": 32, "inception_v3": 75, "resnet50": 32}

_IMAGENET_MEAN = (0.485, 0.456, 0.406)
_IMAGENET_STD = (0.229, 0.224, 0.225)


class UnknownBackbone(KeyError):
    pass


def _check_key(key: str) -> str:
    if key not in BACKBONE_KEYS:
        raise UnknownBackbone(f"unknown backbone {key!r}; expected one of {BACKBONE_KEYS}")
    return key


class Backbone(nn.Module):
    """Feature extractor with its canonical input preprocessing."""

    def __init__(self, key: str, body: nn.Module, out_channels: int, min_side: int = 32):
        super().__init__()
        self.key = key
        self.body = body
        self.out_channels = out_channels
        self.min_side = min_side
        self.frozen = False
        self.register_buffer("mean", torch.tensor(_IMAGENET_MEAN).view(1, 3, 1, 1), persistent=False)
        self.register_buffer("std", torch.tensor(_IMAGENET_STD).view(1, 3, 1, 1), persistent=False)

    def freeze(self) -> "Backbone":
        self.frozen = True
        for p in self.body.parameters():
            p.requires_grad_(False)
        self.body.eval()
        return self

    def train(self, mode: bool = True):
        super().train(mode)
        if self.frozen:
            # keeps batch-norm statistics of a frozen base untouched
            self.body.eval()
        return self

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        h, w = images.shape[-2:]
        if min(h, w) < self.min_side:
            images = F.interpolate(images, size=(self.min_side, self.min_side), mode="bilinear", align_corners=False)
        x = (images - self.mean) / self.std
        out = self.body(x)
        if isinstance(out, dict):
            out = next(iter(out.values()))
        return out


@dataclass(frozen=True)
class BackboneAdapter:
    backbone_key: str
    freeze_base: bool = True

    def __post_init__(self):
        _check_key(self.backbone_key)


class BackboneProvider:
    offline = True

    def get(self, key: str) -> Backbone:
        raise NotImplementedError


class StubBackboneProvider(BackboneProvider):
    """Small random convolutional extractors, deterministic per (key, seed)."""

    offline = True

    def __init__(self, seed: int = 0):
        self.seed = seed

    def get(self, key: str) -> Backbone:
        _check_key(key)
        c = OUT_CHANNELS[key]
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(zlib.crc32(key.encode()) + self.seed)
            body = nn.Sequential(
                nn.Conv2d(3, 16, 3, stride=2),
                nn.ReLU(),
                nn.Conv2d(16, 32, 3, stride=2),
                nn.ReLU(),
                nn.AvgPool2d(4),
                nn.Conv2d(32, c, 1),
                nn.ReLU(),
            )
        return Backbone(key, body, c, MIN_SIDE[key])


class TorchvisionBackboneProvider(BackboneProvider):
    """ImageNet backbones from torchvision.

    Weights are downloaded into ``cache_dir`` (default: ``$MEMEFUSE_CACHE`` or
    torch's hub directory). ``pretrained=False`` builds the architecture with
    random weights and never touches the network.
    """

    offline = False

    def __init__(self, cache_dir=None, pretrained: bool = True):
        self.cache_dir = cache_dir or os.environ.get("MEMEFUSE_CACHE")
        self.pretrained = pretrained

    def get(self, key: str) -> Backbone:
        from torchvision import models
        from torchvision.models.feature_extraction import create_feature_extractor

        _check_key(key)
        if self.cache_dir:
            torch.hub.set_dir(str(self.cache_dir))
        weights = "DEFAULT" if self.pretrained else None
        if key == "vgg16":
            body = models.vgg16(weights=weights).features
        elif key == "resnet50":
            net = models.resnet50(weights=weights)
            # drop the final pooling and FC layer
            body = nn.Sequential(*list(net.children())[:-2])
        else:
            net = models.inception_v3(weights=weights, aux_logits=True, init_weights=not self.pretrained)
            body = create_feature_extractor(net.eval(), {"Mixed_7c": "features"})
        return Backbone(key, body, OUT_CHANNELS[key], MIN_SIDE[key])


def backbone_provider(offline: bool = True, seed: int = 0, cache_dir=None) -> BackboneProvider:
    if offline:
        return StubBackboneProvider(seed)
    return TorchvisionBackboneProvider(cache_dir)
