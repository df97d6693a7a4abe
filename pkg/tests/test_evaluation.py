import csv
import io
import random
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.metrics import precision_recall_fscore_support

from memefuse.corpus import Label
from memefuse.evaluation import (
    PUBLISHED_CONFUSIONS,
    ConfusionMatrix,
    EmptyInput,
    WriteFailure,
    _confusion_figure,
    confusion_matrix,
    plot_confusion,
    render_comparison,
    report_from_predictions,
    round3,
    weighted_report,
)

T, N = Label.TROLL, Label.NOT_TROLL

PUBLISHED_SCORES = {
    ("Visual", "Inception"): (0.625, 0.597, 0.458),
    ("Textual", "XLNet"): (0.592, 0.609, 0.583),
    ("Multimodal", "Inception + BiLSTM"): (0.571, 0.594, 0.559),
}


def _pairs(cm):
    (tt, tn), (nt, nn_) = cm
    return [(T, T)] * tt + [(T, N)] * tn + [(N, T)] * nt + [(N, N)] * nn_


def brute_force(actual, predicted):
    """Weighted P/R/F1 straight from the definitions, one class at a time."""
    n = len(actual)
    out = [Fraction(0)] * 3
    for cls in (T, N):
        tp = sum(a == cls and p == cls for a, p in zip(actual, predicted))
        pred = sum(p == cls for p in predicted)
        sup = sum(a == cls for a in actual)
        prec = Fraction(tp, pred) if pred else Fraction(0)
        rec = Fraction(tp, sup) if sup else Fraction(0)
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else Fraction(0)
        for k, v in enumerate((prec, rec, f1)):
            out[k] += v * sup
    return [v / n for v in out]


@pytest.mark.parametrize("key", list(PUBLISHED_SCORES))
def test_published_confusions_reproduce_table(key):
    rep = weighted_report(ConfusionMatrix.of(PUBLISHED_CONFUSIONS[key]))
    for got, want in zip((rep.precision, rep.recall, rep.f1), PUBLISHED_SCORES[key]):
        assert abs(got - want) <= 0.001


def test_xlnet_pairs_to_matrix():
    cm = confusion_matrix(_pairs(((319, 76), (185, 87))))
    assert cm.tolist() == [[319, 76], [185, 87]]
    assert abs(weighted_report(cm).f1 - 0.583) <= 0.001


def test_perfect_predictions():
    rep = weighted_report(confusion_matrix([(T, T)] * 5 + [(N, N)] * 5))
    assert rep.confusion.tolist() == [[5, 0], [0, 5]]
    assert rep.precision == rep.recall == rep.f1 == rep.accuracy == 1.0


def test_all_troll_ground_truth_zero_convention():
    rep = weighted_report(confusion_matrix([(T, N)] * 3))
    assert rep.confusion.tolist() == [[0, 3], [0, 0]]
    assert rep.per_class[N].precision == 0 and rep.per_class[N].support == 0
    assert rep.precision == rep.recall == rep.f1 == 0.0

    rep = weighted_report(confusion_matrix([(T, T)] * 3))
    assert rep.confusion.tolist() == [[3, 0], [0, 0]]
    assert rep.f1 == 1.0


def test_empty_input():
    with pytest.raises(EmptyInput):
        confusion_matrix([])
    with pytest.raises(EmptyInput):
        weighted_report(ConfusionMatrix.of([[0, 0], [0, 0]]))


def test_string_labels_accepted():
    assert confusion_matrix([("troll", "not-troll")]).tolist() == [[0, 1], [0, 0]]
    with pytest.raises(ValueError):
        confusion_matrix([("troll", "maybe")])


def test_weighted_recall_is_accuracy_exactly():
    rng = random.Random(0)
    for _ in range(1000):
        cells = [[rng.randint(0, 500) for _ in range(2)] for _ in range(2)]
        cells[rng.randint(0, 1)][rng.randint(0, 1)] += 1
        rep = weighted_report(ConfusionMatrix.of(cells))
        total = sum(map(sum, cells))
        assert rep.weighted_recall_exact == Fraction(cells[0][0] + cells[1][1], total)


def test_order_invariance():
    pairs = _pairs(((12, 5), (7, 9)))
    shuffled = pairs[:]
    random.Random(1).shuffle(shuffled)
    assert weighted_report(confusion_matrix(pairs)) == weighted_report(confusion_matrix(shuffled))


@given(st.lists(st.tuples(st.sampled_from([T, N]), st.sampled_from([T, N])), min_size=1, max_size=20))
def test_matches_definition_and_sklearn(pairs):
    actual, predicted = zip(*pairs)
    rep = weighted_report(confusion_matrix(pairs))
    exact = [rep.weighted_precision_exact, rep.weighted_recall_exact, rep.weighted_f1_exact]
    assert exact == brute_force(actual, predicted)
    for cls, m in rep.per_class.items():
        if m.precision + m.recall:
            assert m.f1 == 2 * m.precision * m.recall / (m.precision + m.recall)
    p, r, f, _ = precision_recall_fscore_support(
        [a.value for a in actual],
        [b.value for b in predicted],
        labels=[T.value, N.value],
        average="weighted",
        zero_division=0,
    )
    assert (rep.precision, rep.recall, rep.f1) == pytest.approx((p, r, f), abs=1e-12)


def test_threshold_is_inclusive():
    rep = report_from_predictions([T, N, N], [0.5, 0.4999, 0.1])
    assert rep.confusion.tolist() == [[1, 0], [0, 2]]


def test_report_json_stable(tmp_path):
    rep = weighted_report(ConfusionMatrix.of(((319, 76), (185, 87))))
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    rep.to_json(a)
    rep.to_json(b)
    assert a.read_bytes() == b.read_bytes()
    assert '"confusion"' in a.read_text()


# ---------------------------------------------------------------- rendering


@pytest.mark.parametrize(
    "x, want", [(0.5825, "0.583"), (0.4585, "0.459"), (0.12345, "0.123"), (1.0, "1.000"), (0.0, "0.000"), (0.0005, "0.001")]
)
def test_round3_half_away_from_zero(x, want):
    assert round3(x) == want


def _published_triples():
    return [(a, c, weighted_report(ConfusionMatrix.of(cm))) for (a, c), cm in PUBLISHED_CONFUSIONS.items()]


def test_comparison_table_marks_best():
    table = render_comparison(_published_triples())
    assert [r["classifier"] for r in table.rows] == ["Inception", "XLNet", "Inception + BiLSTM"]
    assert [r["best"] for r in table.rows] == ["", "*", ""]
    assert [r["f1"] for r in table.rows] == ["0.458", "0.583", "0.559"]
    rows = list(csv.DictReader(io.StringIO(table.to_csv())))
    assert rows == table.rows
    text = table.to_text()
    assert text.splitlines()[0].split() == ["approach", "classifier", "precision", "recall", "f1", "best"]
    assert "XLNet" in text


def test_single_row_is_best():
    (triple,) = _published_triples()[:1]
    assert render_comparison([triple]).rows[0]["best"] == "*"


def test_ties_flag_every_row():
    rep = weighted_report(ConfusionMatrix.of(((5, 0), (0, 5))))
    rows = render_comparison([("A", "x", rep), ("B", "y", rep)]).rows
    assert [r["best"] for r in rows] == ["*", "*"]


def test_empty_comparison():
    with pytest.raises(EmptyInput):
        render_comparison([])


def test_plot_confusion(tmp_path):
    cm = ConfusionMatrix.of(((5, 5), (5, 5)))
    out = plot_confusion(cm, tmp_path / "cm.png", title="demo")
    assert out.exists() and out.stat().st_size > 0
    assert out.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    texts = [t.get_text() for t in _confusion_figure(cm).axes[0].texts]
    assert texts == ["5"] * 4
    again = plot_confusion(cm, tmp_path / "cm2.png", title="demo")
    assert again.read_bytes() == out.read_bytes()


def test_plot_annotations_are_raw_counts():
    texts = [t.get_text() for t in _confusion_figure(ConfusionMatrix.of(((319, 76), (185, 87)))).axes[0].texts]
    assert texts == ["319", "76", "185", "87"]


def test_plot_write_failure(tmp_path):
    with pytest.raises(WriteFailure):
        plot_confusion(ConfusionMatrix.of(((1, 0), (0, 1))), tmp_path / "missing" / "cm.png")
