"""Early-fusion classifiers: image branch + BiLSTM caption branch.

Each branch ends in its own one-unit sigmoid; the two probabilities are
concatenated and a final dense sigmoid unit makes the prediction.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass
from typing import Sequence

import torch
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from ..corpus import DEFAULT_MAX_LEN, IMAGE_SIZE, PAD_ID, MemeRecord, Vocabulary, encode_caption
from ..training import TrainingPlan
from .backbones import BackboneAdapter, BackboneProvider, UnknownBackbone
from .base import MemeClassifier, count_trainable, glorot_init, image_batch
from .visual import conv_stack, conv_stack_side

IMAGE_BRANCHES = ("custom_cnn", "inception_v3", "resnet50")
TEXT_BRANCHES = ("bilstm_single", "bilstm_stacked")
REFERENCE_PAIRINGS = (
    ("custom_cnn", "bilstm_single"),
    ("inception_v3", "bilstm_single"),
    ("resnet50", "bilstm_stacked"),
)
EMBEDDING_DIM = 100


class ShapeMismatch(ValueError):
    pass


@dataclass(frozen=True)
class FusionSpec:
    image_branch: str
    text_branch: str
    vocab_size: int
    max_len: int = DEFAULT_MAX_LEN
    embedding_dim: int = EMBEDDING_DIM

    def __post_init__(self):
        if self.image_branch not in IMAGE_BRANCHES:
            raise UnknownBackbone(f"unknown image branch {self.image_branch!r}")
        if self.text_branch not in TEXT_BRANCHES:
            raise ValueError(f"unknown text branch {self.text_branch!r}")
        if not self.is_reference_configuration:
            warnings.warn(f"non-reference fusion pairing {self.image_branch}+{self.text_branch}", stacklevel=2)

    @property
    def is_reference_configuration(self) -> bool:
        return (self.image_branch, self.text_branch) in REFERENCE_PAIRINGS

    def to_dict(self) -> dict:
        return asdict(self)


class CnnImageBranch(nn.Module):
    """conv 32/64/128/64 with pooling -> flatten -> dense 256 -> sigmoid unit."""

    FILTERS = (32, 64, 128, 64)

    def __init__(self, image_size: int = IMAGE_SIZE):
        super().__init__()
        self.features = conv_stack(self.FILTERS)
        side = conv_stack_side(image_size, len(self.FILTERS))
        self.flatten_width = side * side * self.FILTERS[-1]
        self.dense = nn.Linear(self.flatten_width, 256)
        self.out = nn.Linear(256, 1)
        glorot_init(self)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        x = self.features(images).permute(0, 2, 3, 1).flatten(1)
        return torch.sigmoid(self.out(torch.relu(self.dense(x))))


class BackboneImageBranch(nn.Module):
    """Frozen backbone -> global average pool -> dense 256 -> sigmoid unit."""

    def __init__(self, key: str, provider: BackboneProvider):
        super().__init__()
        self.adapter = BackboneAdapter(key)
        self.base = provider.get(key).freeze()
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.dense = nn.Linear(self.base.out_channels, 256)
        self.out = nn.Linear(256, 1)
        glorot_init(self.dense)
        glorot_init(self.out)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        x = self.pool(self.base(images)).flatten(1)
        return torch.sigmoid(self.out(torch.relu(self.dense(x))))


class BiLSTMTextBranch(nn.Module):
    """Trainable embedding (dim 100) -> BiLSTM 128 [-> dropout 0.2 -> BiLSTM 64] -> sigmoid unit.

    Sequences are packed by their unpadded length (at least one step), so
    trailing padding does not reach the recurrent state.
    """

    def __init__(self, kind: str, vocab_size: int, max_len: int = DEFAULT_MAX_LEN, embedding_dim: int = EMBEDDING_DIM):
        super().__init__()
        if kind not in TEXT_BRANCHES:
            raise ValueError(f"unknown text branch {kind!r}")
        if vocab_size < 2:
            raise ValueError("vocab_size must be >= 2")
        self.kind = kind
        self.max_len = max_len
        self.embedding = nn.Embedding(vocab_size, embedding_dim, padding_idx=PAD_ID)
        self.lstm1 = nn.LSTM(embedding_dim, 128, batch_first=True, bidirectional=True)
        if kind == "bilstm_stacked":
            self.dropout = nn.Dropout(0.2)
            self.lstm2 = nn.LSTM(256, 64, batch_first=True, bidirectional=True)
            self.hidden_width = 128
        else:
            self.dropout = None
            self.lstm2 = None
            self.hidden_width = 256
        self.out = nn.Linear(self.hidden_width, 1)
        glorot_init(self.out)

    @staticmethod
    def _final_states(h_n: torch.Tensor) -> torch.Tensor:
        # h_n: (2, B, H) -> forward and backward final states side by side
        return torch.cat([h_n[0], h_n[1]], dim=-1)

    def encode(self, token_ids: torch.Tensor) -> torch.Tensor:
        lengths = (token_ids != PAD_ID).sum(1).clamp(min=1).cpu()
        x = self.embedding(token_ids)
        packed = pack_padded_sequence(x, lengths, batch_first=True, enforce_sorted=False)
        seq, (h_n, _) = self.lstm1(packed)
        if self.lstm2 is None:
            return self._final_states(h_n)
        seq, _ = pad_packed_sequence(seq, batch_first=True)
        seq = self.dropout(seq)
        packed = pack_padded_sequence(seq, lengths, batch_first=True, enforce_sorted=False)
        _, (h_n, _) = self.lstm2(packed)
        return self._final_states(h_n)

    def forward(self, token_ids: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.out(self.encode(token_ids)))


class FusionModel(MemeClassifier):
    input_keys = ("images", "token_ids")

    def __init__(self, image_branch: nn.Module, text_branch: BiLSTMTextBranch, vocab: Vocabulary | None = None,
                 spec: FusionSpec | None = None):
        super().__init__()
        self.image_branch = image_branch
        self.text_branch = text_branch
        self.vocab = vocab
        self.spec = spec
        self.final = nn.Linear(2, 1)
        glorot_init(self.final)

    def branch_outputs(self, inputs: dict[str, torch.Tensor]) -> tuple[torch.Tensor, torch.Tensor]:
        img = self.image_branch(inputs["images"])
        txt = self.text_branch(inputs["token_ids"])
        for name, out in (("image", img), ("text", txt)):
            if out.dim() != 2:
                raise ShapeMismatch(f"{name} branch output has shape {tuple(out.shape)}, expected (batch, features)")
        if img.shape[0] != txt.shape[0]:
            raise ShapeMismatch(f"branch batch sizes differ: {img.shape[0]} vs {txt.shape[0]}")
        return img, txt

    def forward(self, inputs: dict[str, torch.Tensor]) -> torch.Tensor:
        fused = torch.cat(self.branch_outputs(inputs), dim=1)
        return self.final(fused).squeeze(-1)

    def prepare(self, records: Sequence[MemeRecord]) -> dict[str, torch.Tensor]:
        if self.vocab is None:
            raise RuntimeError("fusion model has no vocabulary attached")
        ids = [encode_caption(r.caption, self.vocab, self.text_branch.max_len) for r in records]
        token_ids = torch.tensor(ids, dtype=torch.long).reshape(len(records), self.text_branch.max_len)
        return {"images": image_batch(records), "token_ids": token_ids}

    def head_layer(self) -> nn.Linear:
        return self.final

    def extra_state(self) -> dict:
        return {"vocab": self.vocab.to_dict()} if self.vocab is not None else {}

    def describe(self) -> dict:
        d = {"class": "FusionModel", "trainable_params": count_trainable(self)}
        if self.spec is not None:
            d["fusion_spec"] = self.spec.to_dict()
        return d


def build_image_branch(kind: str, provider: BackboneProvider | None = None) -> nn.Module:
    if kind == "custom_cnn":
        return CnnImageBranch()
    if kind in ("inception_v3", "resnet50"):
        if provider is None:
            raise ValueError(f"{kind} branch needs a backbone provider")
        return BackboneImageBranch(kind, provider)
    raise UnknownBackbone(f"unknown image branch {kind!r}")


def build_text_branch(kind: str, vocab_size: int, max_len: int = DEFAULT_MAX_LEN) -> BiLSTMTextBranch:
    return BiLSTMTextBranch(kind, vocab_size, max_len)


def fuse_branches(image_branch: nn.Module, text_branch: BiLSTMTextBranch, vocab: Vocabulary | None = None,
                  spec: FusionSpec | None = None) -> FusionModel:
    return FusionModel(image_branch, text_branch, vocab, spec)


def build_fusion_model(spec: FusionSpec, vocab: Vocabulary, provider: BackboneProvider | None = None) -> FusionModel:
    image = build_image_branch(spec.image_branch, provider)
    text = build_text_branch(spec.text_branch, spec.vocab_size, spec.max_len)
    return fuse_branches(image, text, vocab, spec)


def fusion_training_plan(**overrides) -> TrainingPlan:
    plan = TrainingPlan(optimizer="adam", lr=1e-3, epochs=50, batch=32, early_stopping=None)
    return plan.with_overrides(**overrides)
