import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from patchda.errors import InvalidInputError
from patchda.harness.metrics import accuracy_report, box_iou, mean_center_distance, random_action_top1


def brute_force_report(verb_logits, noun_logits, verbs, nouns, k=5):
    """Per-clip loops over explicit rankings; no vectorised shortcuts."""
    n = len(verbs)
    hits = {key: 0 for key in ("v1", "v5", "n1", "n5", "a1", "a5")}
    for i in range(n):
        pv = [math.exp(x) for x in verb_logits[i]]
        pv = [p / sum(pv) for p in pv]
        pn = [math.exp(x) for x in noun_logits[i]]
        pn = [p / sum(pn) for p in pn]
        # rank with ties broken towards the lower index
        v_rank = sorted(range(len(pv)), key=lambda j: (-verb_logits[i][j], j))
        n_rank = sorted(range(len(pn)), key=lambda j: (-noun_logits[i][j], j))
        pairs = sorted(
            itertools.product(range(len(pv)), range(len(pn))),
            key=lambda vn: (-(pv[vn[0]] * pn[vn[1]]), vn[0] * len(pn) + vn[1]),
        )
        hits["v1"] += v_rank[0] == verbs[i]
        hits["v5"] += verbs[i] in v_rank[:k]
        hits["n1"] += n_rank[0] == nouns[i]
        hits["n5"] += nouns[i] in n_rank[:k]
        hits["a1"] += v_rank[0] == verbs[i] and n_rank[0] == nouns[i]
        hits["a5"] += (verbs[i], nouns[i]) in pairs[:k]
    return {key: 100.0 * v / n for key, v in hits.items()}


def as_tuple(report):
    return (report.verb_top1, report.verb_top5, report.noun_top1, report.noun_top5, report.action_top1, report.action_top5)


def test_single_clip_cases():
    both = accuracy_report([[0, 5, 0, 0]], [[0, 0, 5, 0]], [1], [2])
    assert both.action_top1 == 100.0
    verb_only = accuracy_report([[0, 5, 0, 0]], [[5, 0, 0, 0]], [1], [2])
    assert verb_only.verb_top1 == 100.0 and verb_only.action_top1 == 0.0


def test_three_clip_hand_set():
    verb_logits = [[2.0, 1.0, 0.0, -1.0], [0.0, 0.0, 3.0, 0.0], [1.0, 1.2, 0.9, 0.0]]
    noun_logits = [[0.0, 4.0, 0.0, 0.0], [1.0, 0.0, 0.0, 2.0], [0.5, 0.4, 0.3, 0.2]]
    verbs, nouns = [0, 2, 0], [1, 0, 3]
    r = accuracy_report(verb_logits, noun_logits, verbs, nouns)
    # clip 0 fully right; clip 1 verb right, noun wrong; clip 2 both wrong at top-1
    assert r.verb_top1 == pytest.approx(200 / 3)
    assert r.noun_top1 == pytest.approx(100 / 3)
    assert r.action_top1 == pytest.approx(100 / 3)
    assert as_tuple(r) == pytest.approx(tuple(brute_force_report(verb_logits, noun_logits, verbs, nouns).values()))


@pytest.mark.parametrize("seed", range(20))
def test_matches_brute_force_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 12))
    # integer verb logits and a duplicated noun column give exact ties;
    # continuous noun values avoid pairs that tie only in exact arithmetic
    verb_logits = rng.integers(-2, 3, size=(n, 4)).astype(float)
    noun_logits = rng.normal(size=(n, 4))
    noun_logits[:, 3] = noun_logits[:, 1]
    verbs, nouns = rng.integers(0, 4, n), rng.integers(0, 4, n)
    report = accuracy_report(verb_logits, noun_logits, verbs, nouns)
    oracle = brute_force_report(verb_logits.tolist(), noun_logits.tolist(), verbs.tolist(), nouns.tolist())
    assert as_tuple(report) == pytest.approx(tuple(oracle.values()), abs=1e-9)


@given(
    arrays(np.float64, st.tuples(st.integers(1, 10), st.just(4)), elements=st.floats(-5, 5)),
    st.data(),
)
@settings(max_examples=60, deadline=None)
def test_metric_identities(verb_logits, data):
    n = len(verb_logits)
    noun_logits = data.draw(arrays(np.float64, (n, 4), elements=st.floats(-5, 5)))
    verbs = np.array(data.draw(st.lists(st.integers(0, 3), min_size=n, max_size=n)))
    nouns = np.array(data.draw(st.lists(st.integers(0, 3), min_size=n, max_size=n)))
    r = accuracy_report(verb_logits, noun_logits, verbs, nouns)
    values = as_tuple(r)
    assert all(0 <= v <= 100 for v in values)
    assert r.verb_top5 >= r.verb_top1 and r.noun_top5 >= r.noun_top1 and r.action_top5 >= r.action_top1
    assert r.action_top1 <= min(r.verb_top1, r.noun_top1)
    # with only 4 classes every label is in the verb and noun top-5
    assert r.verb_top5 == 100.0 and r.noun_top5 == 100.0


def test_empty_split_rejected():
    with pytest.raises(InvalidInputError):
        accuracy_report(np.zeros((0, 4)), np.zeros((0, 4)), [], [])


def test_report_dict_and_counts():
    r = accuracy_report([[1.0, 0]], [[0, 1.0]], [0], [1], counts={"target/val": 1})
    d = r.to_dict()
    assert d["counts"] == {"target/val": 1}
    assert set(d) == {"verb_top1", "verb_top5", "noun_top1", "noun_top5", "action_top1", "action_top5", "counts"}


def test_random_baseline():
    assert random_action_top1(4, 4) == 6.25


def test_box_iou_and_distance():
    assert box_iou((0, 0, 10, 10), (0, 0, 10, 10)) == 1.0
    assert box_iou((0, 0, 10, 10), (20, 20, 5, 5)) == 0.0
    assert box_iou((0, 0, 24, 24), (4, 4, 16, 16)) == pytest.approx(256 / 576)
    assert box_iou((0, 0, 10, 10), (5, 0, 10, 10)) == pytest.approx(50 / 150)
    assert mean_center_distance([(8, 8), (0, 0)], [(0, 0, 16, 16), (0, 3, 0, 8)]) == pytest.approx(3.5)
