"""Experiment configuration and the registry of the nine reference models."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

from .corpus import DEFAULT_MAX_LEN, Vocabulary, build_vocabulary
from .models.backbones import BACKBONE_KEYS, BackboneAdapter, backbone_provider
from .models.fusion import (
    IMAGE_BRANCHES,
    TEXT_BRANCHES,
    FusionSpec,
    build_fusion_model,
    fusion_training_plan,
)
from .models.textual import (
    MODEL_KEYS,
    TransformerSpec,
    build_text_classifier,
    load_checkpoint_table,
    textual_training_plan,
    transformer_provider,
)
from .models.visual import build_custom_cnn, build_finetune_model, visual_training_plan
from .training import TrainingPlan, set_global_seed

APPROACHES = ("visual", "textual", "multimodal")


class ReferenceModel(NamedTuple):
    approach: str
    key: str
    name: str


REFERENCE_MODELS = (
    ReferenceModel("visual", "cnn", "CNN"),
    ReferenceModel("visual", "vgg16", "VGG16"),
    ReferenceModel("visual", "inception", "Inception"),
    ReferenceModel("textual", "mbert", "m-BERT"),
    ReferenceModel("textual", "xlmr", "XLM-R"),
    ReferenceModel("textual", "xlnet", "XLNet"),
    ReferenceModel("multimodal", "cnn_bilstm", "CNNImage + BiLSTM"),
    ReferenceModel("multimodal", "resnet50_bilstm", "ResNet50 + BiLSTM"),
    ReferenceModel("multimodal", "inception_bilstm", "Inception + BiLSTM"),
)

_VISUAL_BACKBONES = {"vgg16": "vgg16", "inception": "inception_v3", "resnet50": "resnet50"}
_FUSION_PAIRS = {
    "cnn_bilstm": ("custom_cnn", "bilstm_single"),
    "inception_bilstm": ("inception_v3", "bilstm_single"),
    "resnet50_bilstm": ("resnet50", "bilstm_stacked"),
}


class ConfigError(ValueError):
    pass


def reference_name(approach: str, key: str) -> str | None:
    for m in REFERENCE_MODELS:
        if (m.approach, m.key) == (approach, key):
            return m.name
    return None


def default_plan(approach: str) -> TrainingPlan:
    return {"visual": visual_training_plan, "textual": textual_training_plan, "multimodal": fusion_training_plan}[approach]()


@dataclass
class ExperimentConfig:
    manifest: str = ""
    image_root: str = ""
    approach: str = "visual"
    model: str = "cnn"
    plan_overrides: dict = field(default_factory=dict)
    seed: int = 0
    out: str = "runs"
    offline: bool = True
    allow_nonreference: bool = False
    max_len: int = DEFAULT_MAX_LEN
    min_count: int = 1
    checkpoints: str | None = None

    def validate(self) -> "ExperimentConfig":
        if self.approach not in APPROACHES:
            raise ConfigError(f"approach must be one of {APPROACHES}")
        if reference_name(self.approach, self.model) is None:
            if not self.allow_nonreference:
                raise ConfigError(
                    f"{self.approach}/{self.model} is not one of the nine reference configurations "
                    "(pass --allow-nonreference to run it anyway)"
                )
            _nonreference_parts(self.approach, self.model)
        if self.max_len < 1 or self.min_count < 1:
            raise ConfigError("max_len and min_count must be >= 1")
        self.plan()
        return self

    def plan(self) -> TrainingPlan:
        try:
            return default_plan(self.approach).with_overrides(seed=self.seed, **self.plan_overrides)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad training plan override: {exc}") from exc

    def identity(self) -> dict:
        """Fields that determine a run's outputs."""
        return {
            "manifest": str(Path(self.manifest).resolve()) if self.manifest else "",
            "approach": self.approach,
            "model": self.model,
            "plan": self.plan().to_dict(),
            "seed": self.seed,
            "offline": self.offline,
            "max_len": self.max_len,
            "min_count": self.min_count,
            "checkpoints": self.checkpoints,
        }

    def run_id(self) -> str:
        blob = json.dumps(self.identity(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def _nonreference_parts(approach: str, key: str):
    if approach == "visual":
        if key not in _VISUAL_BACKBONES:
            raise ConfigError(f"unknown visual model {key!r}")
        return key
    if approach == "textual":
        if key not in MODEL_KEYS:
            raise ConfigError(f"unknown textual model {key!r}")
        return key
    image, _, text = key.partition("+")
    if image not in IMAGE_BRANCHES or text not in TEXT_BRANCHES:
        raise ConfigError(
            f"multimodal model must be a reference key or '<image>+<text>' with image in {IMAGE_BRANCHES} "
            f"and text in {TEXT_BRANCHES}"
        )
    return image, text


def build_model(cfg: ExperimentConfig, train_records=(), vocab: Vocabulary | None = None):
    """Construct the configured model, seeded by ``cfg.seed``.

    Multimodal models need a vocabulary: pass one, or the training records to
    build it from.
    """
    set_global_seed(cfg.seed)
    if cfg.approach == "visual":
        if cfg.model == "cnn":
            return build_custom_cnn()
        key = _VISUAL_BACKBONES.get(cfg.model)
        if key is None:
            raise ConfigError(f"unknown visual model {cfg.model!r}")
        provider = backbone_provider(cfg.offline, cfg.seed)
        return build_finetune_model(BackboneAdapter(key), provider)

    if cfg.approach == "textual":
        table = load_checkpoint_table(cfg.checkpoints)
        provider = transformer_provider(cfg.offline, cfg.seed, checkpoints=table)
        return build_text_classifier(TransformerSpec(cfg.model, max_len=cfg.max_len), provider)

    if cfg.model in _FUSION_PAIRS:
        image, text = _FUSION_PAIRS[cfg.model]
    else:
        image, text = _nonreference_parts("multimodal", cfg.model)
    if vocab is None:
        vocab = build_vocabulary(train_records, cfg.min_count)
    spec = FusionSpec(image, text, vocab_size=len(vocab), max_len=cfg.max_len)
    provider = backbone_provider(cfg.offline, cfg.seed) if image in BACKBONE_KEYS else None
    return build_fusion_model(spec, vocab, provider)
