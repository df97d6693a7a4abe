"""Deterministic toy meme corpus for exercising the full pipeline offline.

Troll images are warm-toned with a bright disc, not-troll images are
cool-toned with a square. Captions draw mostly from class-specific word
pools, and some troll captions are left empty.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .corpus import Label, MemeRecord, SplitCorpus, write_manifest

_TROLL_WORDS = (
    "lol troll fail epic bro haha mokka scene kalaai waste comedy vera level "
    "ivan pesura joke thala fans meme"
).split()
_PLAIN_WORDS = (
    "good morning family movie song happy love birthday wishes temple rain "
    "festival friends music photo nature beautiful"
).split()
_SHARED_WORDS = "the a is and this when me you my".split()

IMAGE_SIDE = 200


def _make_image(rng: np.random.Generator, label: Label) -> Image.Image:
    if label is Label.TROLL:
        bg = (rng.integers(170, 256), rng.integers(30, 110), rng.integers(0, 70))
        fg = (255, 240, int(rng.integers(0, 120)))
    else:
        bg = (rng.integers(0, 70), rng.integers(60, 150), rng.integers(170, 256))
        fg = (int(rng.integers(0, 120)), 255, 200)
    img = Image.new("RGB", (IMAGE_SIDE, IMAGE_SIDE), tuple(int(c) for c in bg))
    draw = ImageDraw.Draw(img)
    r = int(rng.integers(25, 55))
    cx, cy = (int(v) for v in rng.integers(r, IMAGE_SIDE - r, size=2))
    box = (cx - r, cy - r, cx + r, cy + r)
    if label is Label.TROLL:
        draw.ellipse(box, fill=fg)
    else:
        draw.rectangle(box, fill=fg)
    noise = rng.integers(-20, 21, size=(IMAGE_SIDE, IMAGE_SIDE, 3))
    arr = np.clip(np.asarray(img, dtype=np.int16) + noise, 0, 255).astype(np.uint8)
    return Image.fromarray(arr, "RGB")


def _make_caption(rng: np.random.Generator, label: Label) -> str:
    if label is Label.TROLL and rng.random() < 0.15:
        return ""
    own = _TROLL_WORDS if label is Label.TROLL else _PLAIN_WORDS
    n = int(rng.integers(2, 9))
    words = []
    for _ in range(n):
        pool = own if rng.random() < 0.75 else _SHARED_WORDS
        words.append(pool[int(rng.integers(len(pool)))])
    caption = " ".join(words)
    if label is Label.TROLL and rng.random() < 0.5:
        caption = caption.upper() + "!"
    return caption


def generate_synthetic_corpus(
    n_per_class: int,
    seed: int,
    out_dir,
    n_eval_per_class: int | None = None,
) -> tuple[SplitCorpus, Path]:
    """Write a balanced corpus to ``out_dir`` and return it with its manifest path.

    ``n_per_class`` records of each class go to train; valid and test receive
    ``n_eval_per_class`` per class (default ``max(2, n_per_class // 2)``).
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    if n_eval_per_class is None:
        n_eval_per_class = max(2, n_per_class // 2)
    out_dir = Path(out_dir)
    image_dir = out_dir / "images"
    image_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    splits: dict[str, list[MemeRecord]] = {}
    for split, n in (("train", n_per_class), ("valid", n_eval_per_class), ("test", n_eval_per_class)):
        records = []
        for i in range(n):
            for label in (Label.TROLL, Label.NOT_TROLL):
                rid = f"{split}_{label.value}_{i:04d}"
                path = image_dir / f"{rid}.png"
                _make_image(rng, label).save(path, format="PNG")
                records.append(MemeRecord(rid, path, _make_caption(rng, label), label))
        splits[split] = records

    corpus = SplitCorpus(**splits)
    manifest = write_manifest(corpus, out_dir / "manifest.csv", out_dir)
    return corpus, manifest
