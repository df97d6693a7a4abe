"""Meme corpus ingestion, preprocessing and caption statistics.

A corpus is described by a single CSV manifest with the header
``id,image,caption,label,split``. Image paths are relative to an image root.
Labels are ``troll`` / ``not-troll`` (empty is allowed on the test split only).
"""

from __future__ import annotations

import csv
import enum
import json
import string
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

IMAGE_SIZE = 150
DEFAULT_MAX_LEN = 50
MANIFEST_COLUMNS = ("id", "image", "caption", "label", "split")
SPLITS = ("train", "valid", "test")


class Label(str, enum.Enum):
    TROLL = "troll"
    NOT_TROLL = "not-troll"

    @property
    def target(self) -> int:
        """Binary target used by every model: troll -> 1."""
        return 1 if self is Label.TROLL else 0

    @classmethod
    def from_target(cls, value: int) -> "Label":
        return cls.TROLL if int(value) == 1 else cls.NOT_TROLL


# ---------------------------------------------------------------------------
# errors
# ---------------------------------------------------------------------------


class CorpusError(ValueError):
    """Base class for corpus validation failures."""


class ManifestError(CorpusError):
    """A manifest problem tied to specific rows (1-based file line numbers)."""

    kind = "invalid manifest"

    def __init__(self, rows: Sequence[int], detail: str = ""):
        self.rows = list(rows)
        self.detail = detail
        msg = f"{self.kind} at rows {self.rows}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class MissingColumn(ManifestError):
    kind = "missing column"


class DuplicateId(ManifestError):
    kind = "duplicate id"


class UnreadableImage(ManifestError):
    kind = "unreadable image"


class UnknownLabel(ManifestError):
    kind = "unknown label"


class UnknownSplit(ManifestError):
    kind = "unknown split"


class DecodeFailure(CorpusError):
    pass


class EmptyClass(CorpusError):
    pass


# ---------------------------------------------------------------------------
# records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MemeRecord:
    id: str
    image_ref: Path
    caption: str = ""
    label: Label | None = None

    @property
    def target(self) -> int:
        if self.label is None:
            raise CorpusError(f"record {self.id!r} is unlabeled")
        return self.label.target


@dataclass(frozen=True)
class SplitCorpus:
    train: tuple[MemeRecord, ...] = ()
    valid: tuple[MemeRecord, ...] = ()
    test: tuple[MemeRecord, ...] = ()

    def __post_init__(self):
        for name in ("train", "valid", "test"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        seen: dict[str, str] = {}
        for name in SPLITS:
            for rec in getattr(self, name):
                if rec.id in seen:
                    raise CorpusError(
                        f"id {rec.id!r} appears in both {seen[rec.id]} and {name}"
                    )
                seen[rec.id] = name
        for name in ("train", "valid"):
            unlabeled = [r.id for r in getattr(self, name) if r.label is None]
            if unlabeled:
                raise CorpusError(f"unlabeled records in {name}: {unlabeled}")

    def split(self, name: str) -> tuple[MemeRecord, ...]:
        if name not in SPLITS:
            raise KeyError(name)
        return getattr(self, name)


def _parse_label(raw: str) -> Label | None:
    raw = raw.strip().lower()
    if not raw:
        return None
    return Label(raw)


def _image_readable(path: Path) -> bool:
    try:
        with Image.open(path) as im:
            im.verify()
    except (OSError, UnidentifiedImageError, SyntaxError):
        return False
    return True


def load_manifest(manifest_path, image_root) -> SplitCorpus:
    """Read and validate a manifest into a :class:`SplitCorpus`.

    Every row is checked before anything is raised so that the error carries
    all offending rows of its kind. Checks run in the order: duplicate ids,
    splits, labels, images.
    """
    manifest_path = Path(manifest_path)
    image_root = Path(image_root)
    if not image_root.is_dir():
        raise CorpusError(f"image root {image_root} is not a directory")

    with open(manifest_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in MANIFEST_COLUMNS if c not in header]
        if missing:
            raise MissingColumn([1], f"header lacks {missing}")
        rows = [(reader.line_num, row) for row in reader]

    first_row: dict[str, int] = {}
    dup_rows: list[int] = []
    bad_split, bad_label, bad_image = [], [], []
    parsed = []
    for line, row in rows:
        rid = (row["id"] or "").strip()
        if rid in first_row:
            if first_row[rid] not in dup_rows:
                dup_rows.append(first_row[rid])
            dup_rows.append(line)
        else:
            first_row[rid] = line

        split = (row["split"] or "").strip().lower()
        if split not in SPLITS:
            bad_split.append(line)

        try:
            label = _parse_label(row["label"] or "")
        except ValueError:
            bad_label.append(line)
            label = None
        else:
            if label is None and split in ("train", "valid"):
                bad_label.append(line)

        image_ref = image_root / (row["image"] or "").strip()
        if not image_ref.is_file() or not _image_readable(image_ref):
            bad_image.append(line)
        parsed.append((split, MemeRecord(rid, image_ref, row["caption"] or "", label)))

    if dup_rows:
        raise DuplicateId(sorted(dup_rows))
    if bad_split:
        raise UnknownSplit(bad_split, f"split must be one of {SPLITS}")
    if bad_label:
        raise UnknownLabel(bad_label, "label must be troll or not-troll (required on train/valid)")
    if bad_image:
        raise UnreadableImage(bad_image)

    grouped: dict[str, list[MemeRecord]] = {s: [] for s in SPLITS}
    for split, rec in parsed:
        grouped[split].append(rec)
    return SplitCorpus(**grouped)


def write_manifest(corpus: SplitCorpus, manifest_path, image_root) -> Path:
    """Inverse of :func:`load_manifest`; image paths are written relative to image_root."""
    manifest_path = Path(manifest_path)
    image_root = Path(image_root)
    with open(manifest_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for split in SPLITS:
            for rec in corpus.split(split):
                rel = Path(rec.image_ref).relative_to(image_root).as_posix()
                label = rec.label.value if rec.label is not None else ""
                writer.writerow([rec.id, rel, rec.caption, label, split])
    return manifest_path


# ---------------------------------------------------------------------------
# images
# ---------------------------------------------------------------------------


def preprocess_image(image_ref, size: int = IMAGE_SIZE) -> np.ndarray:
    """Decode an image into a ``size x size x 3`` float32 array in [0, 1]."""
    try:
        with Image.open(image_ref) as im:
            im = im.convert("RGB")
            if im.size != (size, size):
                im = im.resize((size, size), Image.BILINEAR)
            arr = np.asarray(im, dtype=np.float32)
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise DecodeFailure(f"cannot decode {image_ref}: {exc}") from exc
    return arr / np.float32(255.0)


# ---------------------------------------------------------------------------
# captions
# ---------------------------------------------------------------------------

_EDGE_PUNCT = string.punctuation


def tokenize_caption(caption: str) -> list[str]:
    """Lowercase, split on whitespace and strip punctuation from token edges.

    Tokens made only of punctuation vanish.
    """
    tokens = []
    for raw in caption.lower().split():
        tok = raw.strip(_EDGE_PUNCT)
        if tok:
            tokens.append(tok)
    return tokens


@dataclass(frozen=True)
class ClassCaptionStats:
    total_words: int
    unique_words: int
    max_caption_len: int
    caption_count: int

    @property
    def mean_words(self) -> Fraction:
        return Fraction(self.total_words, self.caption_count)

    @property
    def avg_words_per_caption(self) -> float:
        return self.total_words / self.caption_count

    def to_dict(self) -> dict:
        return {
            "total_words": self.total_words,
            "unique_words": self.unique_words,
            "max_caption_len": self.max_caption_len,
            "avg_words_per_caption": self.avg_words_per_caption,
        }


@dataclass(frozen=True)
class CaptionStats:
    per_class: dict[Label, ClassCaptionStats]

    def __getitem__(self, label: Label) -> ClassCaptionStats:
        return self.per_class[Label(label)]

    def to_dict(self) -> dict:
        return {label.value: s.to_dict() for label, s in self.per_class.items()}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def class_caption_stats(captions: Iterable[str]) -> ClassCaptionStats:
    lengths = []
    vocab: set[str] = set()
    for caption in captions:
        toks = tokenize_caption(caption)
        lengths.append(len(toks))
        vocab.update(toks)
    if not lengths:
        raise EmptyClass("no captions")
    return ClassCaptionStats(sum(lengths), len(vocab), max(lengths), len(lengths))


def compute_caption_stats(records: Sequence[MemeRecord]) -> CaptionStats:
    """Per-class word statistics; empty captions count as length 0."""
    by_class: dict[Label, list[str]] = {Label.TROLL: [], Label.NOT_TROLL: []}
    for rec in records:
        if rec.label is None:
            raise CorpusError(f"record {rec.id!r} is unlabeled")
        by_class[rec.label].append(rec.caption)
    out = {}
    for label, captions in by_class.items():
        if not captions:
            raise EmptyClass(f"class {label.value!r} has no records")
        out[label] = class_caption_stats(captions)
    return CaptionStats(out)


def class_distribution(corpus: SplitCorpus) -> dict[str, dict[str, int]]:
    """Counts per (split, class); unlabeled test records are counted separately."""
    dist = {}
    for split in SPLITS:
        counts = Counter(
            rec.label.value if rec.label is not None else "unlabeled"
            for rec in corpus.split(split)
        )
        dist[split] = {
            Label.TROLL.value: counts.get(Label.TROLL.value, 0),
            Label.NOT_TROLL.value: counts.get(Label.NOT_TROLL.value, 0),
            "unlabeled": counts.get("unlabeled", 0),
        }
    return dist


# ---------------------------------------------------------------------------
# vocabulary / encoding
# ---------------------------------------------------------------------------

PAD_ID = 0
UNK_ID = 1


@dataclass
class Vocabulary:
    """Word-level vocabulary for the embedding branch. Ids 0/1 are pad/unk."""

    token_to_id: dict[str, int] = field(default_factory=lambda: {"<pad>": PAD_ID, "<unk>": UNK_ID})

    def __len__(self) -> int:
        return len(self.token_to_id)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def decode(self, ids: Iterable[int]) -> list[str]:
        inverse = {i: t for t, i in self.token_to_id.items()}
        return [inverse[int(i)] for i in ids if int(i) != PAD_ID]

    def to_dict(self) -> dict:
        return dict(self.token_to_id)

    @classmethod
    def from_dict(cls, mapping: dict) -> "Vocabulary":
        vocab = cls({str(k): int(v) for k, v in mapping.items()})
        if sorted(vocab.token_to_id.values()) != list(range(len(vocab))):
            raise CorpusError("vocabulary ids are not contiguous from 0")
        return vocab


def build_vocabulary(records: Iterable[MemeRecord], min_count: int = 1) -> Vocabulary:
    """Build from training records only.

    Tokens are ordered by descending frequency, ties broken alphabetically, so
    ids do not depend on record order.
    """
    counts = Counter()
    for rec in records:
        counts.update(tokenize_caption(rec.caption))
    vocab = Vocabulary()
    kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    for tok in kept:
        if tok in vocab.token_to_id:
            continue
        vocab.token_to_id[tok] = len(vocab.token_to_id)
    return vocab


def encode_caption(caption: str, vocab: Vocabulary, max_len: int = DEFAULT_MAX_LEN) -> list[int]:
    ids = [vocab.lookup(t) for t in tokenize_caption(caption)][:max_len]
    return ids + [PAD_ID] * (max_len - len(ids))
