"""Training loop, early stopping, checkpointing and inference helpers."""

from __future__ import annotations

import copy
import csv
import dataclasses
import json
import logging
import math
import random
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

log = logging.getLogger(__name__)

OPTIMIZERS = ("rmsprop", "adam", "onecycle_adamlike")
THRESHOLD = 0.5
HISTORY_COLUMNS = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc")


class NonFiniteLoss(RuntimeError):
    def __init__(self, epoch: int, batch: int, lr: float, value: float):
        self.epoch, self.batch, self.lr, self.value = epoch, batch, lr, value
        super().__init__(f"non-finite loss {value} at epoch {epoch}, batch {batch} (lr={lr:g})")


class EmptySplit(ValueError):
    pass


@dataclass(frozen=True)
class TrainingPlan:
    optimizer: str = "adam"
    lr: float = 1e-3
    epochs: int = 50
    batch: int = 32
    early_stopping: int | None = None  # patience in epochs, None = off
    seed: int = 0
    loss: str = "binary_cross_entropy"
    checkpoint: str = "best_val_loss"
    warmup_fraction: float = 0.3
    lr_div: float = 25.0

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.loss != "binary_cross_entropy":
            raise ValueError("only binary_cross_entropy is supported")
        if self.checkpoint != "best_val_loss":
            raise ValueError("only best_val_loss checkpointing is supported")
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if self.epochs < 1 or self.batch < 1:
            raise ValueError("epochs and batch must be >= 1")
        if self.early_stopping is not None and self.early_stopping < 1:
            raise ValueError("early-stopping patience must be >= 1")

    @property
    def lr_peak(self) -> float:
        return self.lr

    def with_overrides(self, **overrides) -> "TrainingPlan":
        return dataclasses.replace(self, **overrides)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingPlan":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


# ---------------------------------------------------------------------------
# seeding / schedules / early stopping
# ---------------------------------------------------------------------------


def set_global_seed(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)


def seeded_permutation(n: int, seed: int, epoch: int = 0) -> torch.Tensor:
    g = torch.Generator().manual_seed(seed * 100_003 + epoch)
    return torch.randperm(n, generator=g)


def one_cycle_lr(step: int, total_steps: int, peak: float, warmup_fraction: float = 0.3, div: float = 25.0) -> float:
    """Linear warm-up from ``peak/div`` to ``peak``, then cosine decay back to ``peak/div``."""
    floor = peak / div
    peak_step = max(1, round(warmup_fraction * total_steps))
    if step <= peak_step:
        return floor + (peak - floor) * step / peak_step
    span = total_steps - peak_step
    if span <= 0:
        return peak
    t = min(1.0, (step - peak_step) / span)
    return floor + (peak - floor) * 0.5 * (1.0 + math.cos(math.pi * t))


class EarlyStopping:
    """Stop once validation loss has not improved for ``patience`` epochs."""

    def __init__(self, patience: int | None):
        self.patience = patience
        self.best = math.inf
        self.wait = 0

    def update(self, val_loss: float) -> bool:
        if val_loss < self.best:
            self.best = val_loss
            self.wait = 0
        else:
            self.wait += 1
        return self.patience is not None and self.wait >= self.patience


def make_optimizer(plan: TrainingPlan, params, steps_per_epoch: int):
    params = [p for p in params if p.requires_grad]
    if plan.optimizer == "rmsprop":
        return torch.optim.RMSprop(params, lr=plan.lr, alpha=0.9, eps=1e-7), None
    opt = torch.optim.Adam(params, lr=plan.lr, eps=1e-7)
    if plan.optimizer == "adam":
        return opt, None
    total = plan.epochs * steps_per_epoch
    sched = torch.optim.lr_scheduler.LambdaLR(
        opt, lambda s: one_cycle_lr(s, total, 1.0, plan.warmup_fraction, plan.lr_div)
    )
    return opt, sched


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(model, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({"state_dict": model.state_dict(), "extra": model.extra_state(), "model": model.describe()}, path)
    return path


def load_checkpoint(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"missing checkpoint {path}")
    return torch.load(path, map_location="cpu", weights_only=True)


# ---------------------------------------------------------------------------
# batching helpers
# ---------------------------------------------------------------------------


def _take(inputs: dict[str, torch.Tensor], idx) -> dict[str, torch.Tensor]:
    return {k: v[idx] for k, v in inputs.items()}


def _targets(records) -> torch.Tensor:
    return torch.tensor([r.target for r in records], dtype=torch.float32)


def _n(inputs: dict[str, torch.Tensor]) -> int:
    return len(next(iter(inputs.values())))


@torch.no_grad()
def logits_for(model, inputs: dict[str, torch.Tensor], batch: int = 32) -> torch.Tensor:
    model.eval()
    n = _n(inputs)
    if n == 0:
        return torch.zeros(0)
    return torch.cat([model(_take(inputs, slice(i, i + batch))) for i in range(0, n, batch)])


def evaluate_loss(model, inputs, targets: torch.Tensor, batch: int = 32) -> tuple[float, float]:
    """Mean binary cross-entropy and accuracy in inference mode."""
    logits = logits_for(model, inputs, batch)
    loss = F.binary_cross_entropy_with_logits(logits, targets).item()
    acc = ((logits >= 0).float() == targets).float().mean().item()
    return loss, acc


def predict(model, records: Sequence, batch: int = 32) -> list[tuple[str, float]]:
    """Troll probability per record, aligned with the input order."""
    if not records:
        return []
    inputs = model.prepare(records)
    probs = torch.sigmoid(logits_for(model, inputs, batch))
    return [(r.id, float(p)) for r, p in zip(records, probs)]


def write_predictions(preds: list[tuple[str, float]], path) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "probability", "predicted_label"])
        for rid, p in preds:
            w.writerow([rid, repr(p), "troll" if p >= THRESHOLD else "not-troll"])
    return Path(path)


def read_predictions(path) -> list[tuple[str, float]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [(row["id"], float(row["probability"])) for row in csv.DictReader(fh)]


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class RunRecord:
    run_id: str
    config: dict
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = math.inf
    checkpoint: Path | None = None
    wall_clock: float = 0.0
    stopped_early: bool = False

    def write_history(self, path) -> Path:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(HISTORY_COLUMNS)
            for row in self.history:
                w.writerow([row["epoch"]] + [repr(row[c]) for c in HISTORY_COLUMNS[1:]])
        return Path(path)

    def summary(self) -> dict:
        return {
            "run_id": self.run_id,
            "best_epoch": self.best_epoch,
            "best_val_loss": self.best_val_loss,
            "epochs_run": len(self.history),
            "stopped_early": self.stopped_early,
            "checkpoint": str(self.checkpoint) if self.checkpoint else None,
            "wall_clock_s": self.wall_clock,
        }


def train(model, plan: TrainingPlan, corpus, run_dir=None, config: dict | None = None, run_id: str = "") -> RunRecord:
    """Fit ``model`` on ``corpus.train``, selecting the epoch with the lowest validation loss.

    The best weights are restored into ``model`` before returning. With
    ``run_dir`` set, config.json, history.csv, best.ckpt, predictions.csv (test
    split) and run.json are written there.
    """
    if not corpus.train:
        raise EmptySplit("training split is empty")
    if not corpus.valid:
        raise EmptySplit("validation split is empty")
    started = time.perf_counter()
    set_global_seed(plan.seed)

    run_dir = Path(run_dir) if run_dir is not None else None
    snapshot = {"model": model.describe(), "plan": plan.to_dict(), **(config or {})}
    record = RunRecord(run_id=run_id or (run_dir.name if run_dir else ""), config=snapshot)
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "config.json").write_text(json.dumps(snapshot, indent=2, sort_keys=True) + "\n")

    x_train, y_train = model.prepare(corpus.train), _targets(corpus.train)
    x_valid, y_valid = model.prepare(corpus.valid), _targets(corpus.valid)
    n = len(y_train)
    steps_per_epoch = math.ceil(n / plan.batch)
    optimizer, scheduler = make_optimizer(plan, model.parameters(), steps_per_epoch)
    stopper = EarlyStopping(plan.early_stopping)
    best_state = None

    for epoch in range(1, plan.epochs + 1):
        model.train()
        order = seeded_permutation(n, plan.seed, epoch)
        loss_sum, correct = 0.0, 0
        for b, start in enumerate(range(0, n, plan.batch)):
            idx = order[start : start + plan.batch]
            logits = model(_take(x_train, idx))
            loss = F.binary_cross_entropy_with_logits(logits, y_train[idx])
            if not torch.isfinite(loss):
                raise NonFiniteLoss(epoch, b, optimizer.param_groups[0]["lr"], loss.item())
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            if scheduler is not None:
                scheduler.step()
            loss_sum += loss.item() * len(idx)
            correct += int(((logits.detach() >= 0).float() == y_train[idx]).sum())

        val_loss, val_acc = evaluate_loss(model, x_valid, y_valid, plan.batch)
        if not math.isfinite(val_loss):
            raise NonFiniteLoss(epoch, -1, optimizer.param_groups[0]["lr"], val_loss)
        row = {
            "epoch": epoch,
            "train_loss": loss_sum / n,
            "train_acc": correct / n,
            "val_loss": val_loss,
            "val_acc": val_acc,
        }
        record.history.append(row)
        log.info("epoch %d train_loss=%.4f train_acc=%.3f val_loss=%.4f val_acc=%.3f", *row.values())

        if val_loss < record.best_val_loss:
            record.best_val_loss, record.best_epoch = val_loss, epoch
            best_state = copy.deepcopy(model.state_dict())
            if run_dir is not None:
                record.checkpoint = save_checkpoint(model, run_dir / "best.ckpt")
        if stopper.update(val_loss):
            record.stopped_early = epoch < plan.epochs
            break

    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    record.wall_clock = time.perf_counter() - started

    if run_dir is not None:
        record.write_history(run_dir / "history.csv")
        write_predictions(predict(model, corpus.test, plan.batch), run_dir / "predictions.csv")
        (run_dir / "run.json").write_text(json.dumps(record.summary(), indent=2) + "\n")
    return record
