import json
import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import average_precision_score, f1_score

from flowkit.evaluation import (
    LabelError, SubmissionError, average_precision, binary_metrics, confusion, multiclass_metrics,
    score_submission, write_report,
)


def test_confusion_counts():
    cm = confusion(["a", "a", "b", "b"], ["a", "b", "b", "b"], ["a", "b"])
    assert cm.counts.tolist() == [[1, 1], [0, 2]] and cm.total == 4


def test_confusion_unknown_label():
    with pytest.raises(LabelError, match="id 7"):
        confusion(["a", "c"], ["a", "a"], ["a", "b"], ids=[3, 7])


def test_binary_rates_example():
    truth = ["malware"] * 10 + ["benign"] * 90
    pred = ["malware"] * 9 + ["benign"] + ["malware"] * 3 + ["benign"] * 87
    r = binary_metrics(confusion(truth, pred, ["benign", "malware"]), "malware")
    assert (r.tpr, r.far) == (0.9, 3 / 90)


def test_all_positive_predictor():
    truth = ["malware", "benign", "benign"]
    r = binary_metrics(confusion(truth, ["malware"] * 3, ["benign", "malware"]), "malware")
    assert (r.tpr, r.far) == (1.0, 1.0)


def test_degenerate_denominators_flagged():
    r = binary_metrics(confusion(["benign"] * 3, ["benign"] * 3, ["benign", "malware"]), "malware")
    assert (r.tpr, r.far, r.degenerate) == (0.0, 0.0, ("tpr",))


def test_swap_identity():
    rng = random.Random(4)
    truth = [rng.choice("ab") for _ in range(200)]
    pred = [rng.choice("ab") for _ in range(200)]
    cm = confusion(truth, pred, ["a", "b"])
    ra, rb = binary_metrics(cm, "a"), binary_metrics(cm, "b")
    assert math.isclose(ra.tpr, 1 - rb.far) and math.isclose(ra.far, 1 - rb.tpr)


def test_perfect_three_class():
    y = ["x", "y", "z"] * 5
    scores = np.array([[c == k for k in "xyz"] for c in y], dtype=float)
    rep = multiclass_metrics(confusion(y, y, list("xyz")), scores, y)
    assert rep.f1 == rep.f1_macro == rep.f1_micro == rep.map == 1.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.sampled_from("pqr"), st.sampled_from("pqr")), min_size=1, max_size=60))
def test_f1_agrees_with_reference(pairs):
    y, p = [t for t, _ in pairs], [q for _, q in pairs]
    classes = sorted(set(y))
    if any(q not in classes for q in p):
        return
    scores = np.array([[q == c for c in classes] for q in p], dtype=float)
    rep = multiclass_metrics(confusion(y, p, classes), scores, y)
    assert math.isclose(rep.f1, f1_score(y, p, average="weighted", labels=classes, zero_division=0), abs_tol=1e-12)
    assert math.isclose(rep.f1_micro, sum(a == b for a, b in pairs) / len(pairs), abs_tol=1e-12)


def test_average_precision_examples():
    assert average_precision([1, 0, 1], [0.9, 0.8, 0.7]) == pytest.approx(5 / 6, abs=1e-12)
    assert average_precision([1, 1], [0.1, 0.2]) == 1.0
    assert math.isnan(average_precision([0, 0], [0.3, 0.4]))
    # a tie forms one threshold
    assert average_precision([1, 0], [0.5, 0.5]) == 0.5


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.integers(0, 20)), min_size=1, max_size=50))
def test_average_precision_matches_reference(rows):
    y = [b for b, _ in rows]
    if not any(y):
        return
    s = [float(v) for _, v in rows]
    assert average_precision(y, s) == pytest.approx(average_precision_score(y, s), abs=1e-12)


def test_average_precision_monotone_invariant():
    rng = np.random.default_rng(0)
    y = rng.random(100) < 0.3
    s = rng.random(100)
    assert average_precision(y, s) == average_precision(y, np.exp(3 * s) + 7)


def test_zero_support_class_flagged():
    classes = ["a", "b", "c"]
    y, p = ["a", "a", "b"], ["a", "c", "b"]
    scores = np.array([[1, 0, 0], [0, 0, 1], [0, 1, 0]], dtype=float)
    rep = multiclass_metrics(confusion(y, p, classes), scores, y)
    assert rep.map_classes == 2 and any("'c'" in f for f in rep.flags)
    assert rep.per_class["c"].average_precision is None


def _sealed(n=6):
    return [{"id": i, "top": "malware" if i % 3 == 0 else "benign", "fine": f"f{i % 3}"} for i in range(n)]


def test_score_submission_binary_and_shuffle_invariance():
    truth = _sealed()
    preds = [{"id": r["id"], "label": r["top"]} for r in truth]
    rep, _ = score_submission(preds, truth, granularity="top")
    assert rep.task == "binary" and (rep.tpr, rep.far) == (1.0, 0.0)
    shuffled = preds[::-1]
    assert score_submission(shuffled, truth, granularity="top")[0].to_dict() == rep.to_dict()


def test_score_submission_multiclass_with_scores():
    truth = _sealed(9)
    preds = [{"id": r["id"], "label": r["fine"], "scores": {"f0": 0.1, r["fine"]: 0.8}} for r in truth]
    rep, cm = score_submission(preds, truth)
    assert rep.task == "multiclass" and rep.f1 == 1.0 and rep.map == 1.0 and cm.total == 9


def test_submission_errors_collected():
    truth = _sealed()
    preds = [{"id": i, "label": "f0"} for i in (0, 1, 1, 2, 3, 5, 99)]
    preds.append({"id": 6 - 2, "label": "nonsense"})
    with pytest.raises(SubmissionError) as err:
        score_submission(preds, truth)
    e = err.value
    assert (e.missing, e.duplicate, e.unknown, e.bad_label) == ([], [1], [99], [4])
    with pytest.raises(SubmissionError, match="missing ids: 4, 5"):
        score_submission([{"id": i, "label": "f0"} for i in range(4)], truth)


def test_granularity_must_exist():
    with pytest.raises(KeyError):
        score_submission([{"id": 0, "label": "x"}], [{"id": 0, "fine": "x"}], granularity="mid")


def test_write_report(tmp_path):
    truth = _sealed()
    rep, cm = score_submission([{"id": r["id"], "label": r["fine"]} for r in truth], truth)
    paths = write_report(rep, cm, tmp_path / "r")
    assert json.loads(paths["json"].read_text())["f1"] == 1.0
    assert "mAP" in paths["text"].read_text()
    assert paths["confusion"].read_text().splitlines()[0] == "true\\pred,f0,f1,f2"
