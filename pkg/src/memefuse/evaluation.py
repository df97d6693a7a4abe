"""Confusion matrices, support-weighted metrics, comparison tables and plots.

Matrices use rows = actual class and columns = predicted class, both ordered
``[troll, not-troll]``.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import Label

CLASS_ORDER = (Label.TROLL, Label.NOT_TROLL)


class EmptyInput(ValueError):
    pass


class WriteFailure(OSError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: tuple[tuple[int, int], tuple[int, int]]

    def __post_init__(self):
        rows = tuple(tuple(int(c) for c in row) for row in self.counts)
        if len(rows) != 2 or any(len(r) != 2 for r in rows):
            raise ValueError("confusion matrix must be 2x2")
        if any(c < 0 for r in rows for c in r):
            raise ValueError("confusion counts must be non-negative")
        object.__setattr__(self, "counts", rows)

    @classmethod
    def of(cls, rows) -> "ConfusionMatrix":
        return cls(tuple(tuple(r) for r in rows))

    @property
    def total(self) -> int:
        return sum(map(sum, self.counts))

    def support(self, i: int) -> int:
        return sum(self.counts[i])

    def predicted(self, i: int) -> int:
        return self.counts[0][i] + self.counts[1][i]

    def tolist(self) -> list[list[int]]:
        return [list(r) for r in self.counts]


def confusion_matrix(pairs: Iterable[tuple]) -> ConfusionMatrix:
    """Count (actual, predicted) label pairs."""
    cells = [[0, 0], [0, 0]]
    n = 0
    for actual, pred in pairs:
        cells[CLASS_ORDER.index(Label(actual))][CLASS_ORDER.index(Label(pred))] += 1
        n += 1
    if n == 0:
        raise EmptyInput("no prediction pairs")
    return ConfusionMatrix.of(cells)


def _ratio(num: int | Fraction, den: int | Fraction) -> Fraction:
    # undefined ratios are reported as 0
    return Fraction(num) / Fraction(den) if den else Fraction(0)


@dataclass(frozen=True)
class ClassMetrics:
    precision: Fraction
    recall: Fraction
    f1: Fraction
    support: int


@dataclass(frozen=True)
class EvaluationReport:
    confusion: ConfusionMatrix
    per_class: dict[Label, ClassMetrics]
    weighted_precision_exact: Fraction
    weighted_recall_exact: Fraction
    weighted_f1_exact: Fraction

    @property
    def precision(self) -> float:
        return float(self.weighted_precision_exact)

    @property
    def recall(self) -> float:
        return float(self.weighted_recall_exact)

    @property
    def f1(self) -> float:
        return float(self.weighted_f1_exact)

    @property
    def accuracy(self) -> float:
        c = self.confusion
        return (c.counts[0][0] + c.counts[1][1]) / c.total

    def to_dict(self) -> dict:
        return {
            "confusion": self.confusion.tolist(),
            "class_order": [c.value for c in CLASS_ORDER],
            "per_class": {
                label.value: {
                    "precision": float(m.precision),
                    "recall": float(m.recall),
                    "f1": float(m.f1),
                    "support": m.support,
                }
                for label, m in self.per_class.items()
            },
            "weighted": {"precision": self.precision, "recall": self.recall, "f1": self.f1},
            "accuracy": self.accuracy,
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text


def weighted_report(confusion: ConfusionMatrix) -> EvaluationReport:
    """Per-class and support-weighted precision/recall/F1, computed exactly."""
    if confusion.total == 0:
        raise EmptyInput("confusion matrix is all zeros")
    per_class = {}
    wp = wr = wf = Fraction(0)
    for i, label in enumerate(CLASS_ORDER):
        tp = confusion.counts[i][i]
        support = confusion.support(i)
        p = _ratio(tp, confusion.predicted(i))
        r = _ratio(tp, support)
        f = _ratio(2 * p * r, p + r)
        per_class[label] = ClassMetrics(p, r, f, support)
        wp += p * support
        wr += r * support
        wf += f * support
    n = confusion.total
    return EvaluationReport(confusion, per_class, wp / n, wr / n, wf / n)


def report_from_predictions(labels: Sequence[Label], probabilities: Sequence[float], threshold: float = 0.5) -> EvaluationReport:
    preds = [Label.TROLL if p >= threshold else Label.NOT_TROLL for p in probabilities]
    return weighted_report(confusion_matrix(zip(labels, preds)))


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

TABLE_COLUMNS = ("approach", "classifier", "precision", "recall", "f1", "best")


def round3(x: float) -> str:
    """Round half away from zero to three decimals."""
    return str(Decimal(repr(float(x))).quantize(Decimal("0.001"), rounding=ROUND_HALF_UP))


@dataclass
class ComparisonTable:
    rows: list[dict]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=TABLE_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(self.rows)
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def to_text(self) -> str:
        header = list(TABLE_COLUMNS)
        body = [[str(row[c]) for c in TABLE_COLUMNS] for row in self.rows]
        widths = [max(len(h), *(len(r[i]) for r in body)) for i, h in enumerate(header)]
        lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip()]
        lines.append("  ".join("-" * w for w in widths))
        for r in body:
            lines.append("  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip())
        return "\n".join(lines) + "\n"


def render_comparison(reports: Sequence[tuple[str, str, EvaluationReport]]) -> ComparisonTable:
    """Build the comparison table from ``(approach, classifier, report)`` triples.

    Every row whose unrounded weighted F1 equals the maximum is flagged best.
    """
    if not reports:
        raise EmptyInput("no reports to compare")
    best = max(r.weighted_f1_exact for _, _, r in reports)
    rows = []
    for approach, classifier, rep in reports:
        rows.append({
            "approach": approach,
            "classifier": classifier,
            "precision": round3(rep.precision),
            "recall": round3(rep.recall),
            "f1": round3(rep.f1),
            "best": "*" if rep.weighted_f1_exact == best else "",
        })
    return ComparisonTable(rows)


def _confusion_figure(confusion: ConfusionMatrix, title: str | None = None):
    import matplotlib

    matplotlib.use("Agg")
    from matplotlib.figure import Figure

    fig = Figure(figsize=(4, 3.6), dpi=100)
    ax = fig.add_subplot(1, 1, 1)
    data = confusion.tolist()
    im = ax.imshow(data, cmap="Blues", vmin=0, vmax=max(1, max(map(max, data))))
    names = [c.value for c in CLASS_ORDER]
    ax.set_xticks([0, 1], labels=names)
    ax.set_yticks([0, 1], labels=names)
    ax.set_xlabel("Predicted")
    ax.set_ylabel("Actual")
    if title:
        ax.set_title(title)
    vmax = im.norm.vmax
    for i in range(2):
        for j in range(2):
            v = data[i][j]
            ax.text(j, i, str(v), ha="center", va="center", color="white" if v > vmax / 2 else "black")
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    return fig


def plot_confusion(confusion: ConfusionMatrix, out, title: str | None = None) -> Path:
    """Write an annotated 2x2 heatmap PNG of raw counts."""
    out = Path(out)
    fig = _confusion_figure(confusion, title)
    try:
        fig.savefig(out, format="png", metadata={"Software": None})
    except OSError as exc:
        raise WriteFailure(f"cannot write {out}: {exc}") from exc
    return out


# Confusion matrices read off the published error analysis, with the
# approach/classifier names used in the results table.
PUBLISHED_CONFUSIONS = {
    ("Visual", "Inception"): ((392, 3), (266, 6)),
    ("Textual", "XLNet"): ((319, 76), (185, 87)),
    ("Multimodal", "Inception + BiLSTM"): ((324, 71), (200, 72)),
}
