from __future__ import annotations

from typing import Sequence

import numpy as np
import torch
from torch import nn

from ..corpus import CorpusError, MemeRecord, preprocess_image


class PreprocessFailure(RuntimeError):
    def __init__(self, record_id: str, cause: Exception):
        self.record_id = record_id
        super().__init__(f"cannot preprocess record {record_id!r}: {cause}")


class MemeClassifier(nn.Module):
    """Common surface of every troll classifier.

    ``prepare`` turns records into a dict of batched tensors, ``forward``
    consumes that dict and returns one troll logit per record. The sigmoid of
    the logit is the troll probability.
    """

    #: tensors in the prepared dict that hold per-record inputs
    input_keys: tuple[str, ...] = ()

    def prepare(self, records: Sequence[MemeRecord]) -> dict[str, torch.Tensor]:
        raise NotImplementedError

    def head_layer(self) -> nn.Linear:
        """The final dense layer producing the prediction."""
        raise NotImplementedError

    def extra_state(self) -> dict:
        """Non-tensor state needed to rebuild the model (stored in checkpoints)."""
        return {}

    def describe(self) -> dict:
        return {"class": type(self).__name__}

    @torch.no_grad()
    def predict_proba(self, inputs: dict[str, torch.Tensor]) -> torch.Tensor:
        was_training = self.training
        self.eval()
        try:
            return torch.sigmoid(self(inputs))
        finally:
            self.train(was_training)


def count_trainable(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters() if p.requires_grad)


def glorot_init(module: nn.Module) -> None:
    """Glorot-uniform weights and zero biases for conv/dense layers."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            nn.init.xavier_uniform_(m.weight)
            if m.bias is not None:
                nn.init.zeros_(m.bias)


def image_batch(records: Sequence[MemeRecord]) -> torch.Tensor:
    """Stack preprocessed images as an NCHW float tensor."""
    arrays = []
    for rec in records:
        try:
            arrays.append(preprocess_image(rec.image_ref))
        except CorpusError as exc:
            raise PreprocessFailure(rec.id, exc) from exc
    if not arrays:
        return torch.zeros(0, 3, 150, 150)
    return torch.from_numpy(np.stack(arrays)).permute(0, 3, 1, 2).contiguous()
