"""Caption classifiers fine-tuned from pretrained transformers."""

from __future__ import annotations

import json
import os
import string
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import torch
from torch import nn

from ..corpus import DEFAULT_MAX_LEN, MemeRecord
from ..training import TrainingPlan
from .base import MemeClassifier

MODEL_KEYS = ("mbert", "xlnet", "xlmr")
DEFAULT_CHECKPOINTS = {
    "mbert": "bert-base-multilingual-cased",
    "xlnet": "xlnet-base-cased",
    "xlmr": "xlm-roberta-base",
}
TROLL_INDEX = 1


class UnknownModelKey(KeyError):
    pass


def load_checkpoint_table(path=None) -> dict[str, str]:
    """Model-key -> hub checkpoint table, optionally overridden by a JSON file."""
    table = dict(DEFAULT_CHECKPOINTS)
    if path is not None:
        table.update(json.loads(Path(path).read_text()))
    return table


@dataclass(frozen=True)
class TransformerSpec:
    model_key: str
    max_len: int = DEFAULT_MAX_LEN
    num_labels: int = 2

    def __post_init__(self):
        if self.model_key not in MODEL_KEYS:
            raise UnknownModelKey(f"unknown model key {self.model_key!r}; expected one of {MODEL_KEYS}")


class TransformerProvider:
    offline = True

    def get(self, spec: TransformerSpec):
        """Return ``(tokenizer, sequence_classifier)`` for ``spec.model_key``."""
        raise NotImplementedError


class HubTransformerProvider(TransformerProvider):
    offline = False

    def __init__(self, checkpoints: dict[str, str] | None = None, cache_dir=None):
        self.checkpoints = checkpoints or dict(DEFAULT_CHECKPOINTS)
        self.cache_dir = cache_dir or os.environ.get("MEMEFUSE_CACHE")

    def get(self, spec: TransformerSpec):
        from transformers import AutoModelForSequenceClassification, AutoTokenizer

        name = self.checkpoints[spec.model_key]
        tok = AutoTokenizer.from_pretrained(name, cache_dir=self.cache_dir)
        model = AutoModelForSequenceClassification.from_pretrained(
            name, num_labels=spec.num_labels, cache_dir=self.cache_dir
        )
        return tok, model


def _char_wordpiece_tokenizer(padding_side: str = "right"):
    """Character-level WordPiece tokenizer that needs no downloaded files."""
    from tokenizers import Tokenizer, models, normalizers, pre_tokenizers, processors
    from transformers import PreTrainedTokenizerFast

    specials = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
    chars = [c for c in string.printable if not c.isspace()]
    vocab = {t: i for i, t in enumerate(specials + chars + ["##" + c for c in chars])}
    tok = Tokenizer(models.WordPiece(vocab, unk_token="[UNK]", max_input_chars_per_word=200))
    tok.normalizer = normalizers.BertNormalizer(lowercase=False)
    tok.pre_tokenizer = pre_tokenizers.BertPreTokenizer()
    tok.post_processor = processors.TemplateProcessing(
        single="[CLS] $A [SEP]", special_tokens=[("[CLS]", vocab["[CLS]"]), ("[SEP]", vocab["[SEP]"])]
    )
    return PreTrainedTokenizerFast(
        tokenizer_object=tok,
        pad_token="[PAD]",
        unk_token="[UNK]",
        cls_token="[CLS]",
        sep_token="[SEP]",
        mask_token="[MASK]",
        padding_side=padding_side,
    )


class StubTransformerProvider(TransformerProvider):
    """Tiny randomly initialised models of the right family, deterministic per seed."""

    offline = True

    def __init__(self, seed: int = 0, hidden: int = 32, layers: int = 2):
        self.seed = seed
        self.hidden = hidden
        self.layers = layers

    def get(self, spec: TransformerSpec):
        from transformers import (
            BertConfig,
            BertForSequenceClassification,
            XLMRobertaConfig,
            XLMRobertaForSequenceClassification,
            XLNetConfig,
            XLNetForSequenceClassification,
        )

        # XLNet summarises with the last position, so pad on the left as its real tokenizer does
        tok = _char_wordpiece_tokenizer("left" if spec.model_key == "xlnet" else "right")
        common = dict(vocab_size=len(tok), num_labels=spec.num_labels, pad_token_id=tok.pad_token_id)
        h = self.hidden
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(self.seed)
            if spec.model_key == "mbert":
                cfg = BertConfig(hidden_size=h, num_hidden_layers=self.layers, num_attention_heads=2,
                                 intermediate_size=2 * h, max_position_embeddings=spec.max_len + 16, **common)
                model = BertForSequenceClassification(cfg)
            elif spec.model_key == "xlnet":
                cfg = XLNetConfig(d_model=h, n_layer=self.layers, n_head=2, d_inner=2 * h, **common)
                model = XLNetForSequenceClassification(cfg)
            else:
                cfg = XLMRobertaConfig(hidden_size=h, num_hidden_layers=self.layers, num_attention_heads=2,
                                       intermediate_size=2 * h, max_position_embeddings=spec.max_len + 16, **common)
                model = XLMRobertaForSequenceClassification(cfg)
        return tok, model


class TextClassifier(MemeClassifier):
    """Wraps a sequence classifier; the troll logit is ``logit[troll] - logit[other]``.

    Its sigmoid equals the softmax mass on the troll label.
    """

    input_keys = ("input_ids", "attention_mask")

    def __init__(self, spec: TransformerSpec, tokenizer, model: nn.Module):
        super().__init__()
        self.spec = spec
        self.tokenizer = tokenizer
        self.model = model

    def prepare(self, records: Sequence[MemeRecord]) -> dict[str, torch.Tensor]:
        return self.encode([r.caption for r in records])

    def encode(self, captions: Sequence[str]) -> dict[str, torch.Tensor]:
        # captions go in raw; the subword tokenizer handles casing and punctuation
        enc = self.tokenizer(
            list(captions),
            max_length=self.spec.max_len,
            truncation=True,
            padding="max_length",
            return_tensors="pt",
        )
        return {"input_ids": enc["input_ids"], "attention_mask": enc["attention_mask"]}

    def forward(self, inputs: dict[str, torch.Tensor]) -> torch.Tensor:
        logits = self.model(input_ids=inputs["input_ids"], attention_mask=inputs["attention_mask"]).logits
        other = 1 - TROLL_INDEX
        return logits[:, TROLL_INDEX] - logits[:, other]

    def head_layer(self) -> nn.Linear:
        m = self.model
        if hasattr(m, "logits_proj"):
            return m.logits_proj
        clf = m.classifier
        return clf.out_proj if hasattr(clf, "out_proj") else clf

    def describe(self) -> dict:
        return {
            "class": "TextClassifier",
            "model_key": self.spec.model_key,
            "max_len": self.spec.max_len,
            "num_labels": self.spec.num_labels,
            "backend": type(self.model).__name__,
        }


def build_text_classifier(spec: TransformerSpec, provider: TransformerProvider) -> TextClassifier:
    tokenizer, model = provider.get(spec)
    return TextClassifier(spec, tokenizer, model)


def transformer_provider(offline: bool = True, seed: int = 0, checkpoints=None, cache_dir=None) -> TransformerProvider:
    if offline:
        return StubTransformerProvider(seed)
    return HubTransformerProvider(checkpoints, cache_dir)


def textual_training_plan(**overrides) -> TrainingPlan:
    plan = TrainingPlan(optimizer="onecycle_adamlike", lr=2e-5, epochs=20, batch=8, early_stopping=3)
    return plan.with_overrides(**overrides)
