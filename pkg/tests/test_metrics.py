from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from htcxml.metrics import (
    EvalReport,
    RankedPrediction,
    aggregate,
    evaluate,
    format_row,
    format_table,
    macro_f1,
    micro_f1,
    precision_at_k,
    r_precision,
)

A, B, C = 0, 1, 2


def test_precision_examples():
    assert precision_at_k(RankedPrediction.from_labels([A, B, C]), {A, B, C}, 3) == 1.0
    pred = RankedPrediction.from_labels([A, C, B])
    assert precision_at_k(pred, {A, B}, 1) == 1.0
    assert precision_at_k(pred, {A, B}, 2) == 0.5
    assert precision_at_k(pred, {A, B}, 3) == pytest.approx(0.6667, abs=1e-4)
    for k in (1, 2, 5):
        assert precision_at_k(pred, set(), k) == 0.0


def test_precision_short_ranking_and_bad_k():
    assert precision_at_k(RankedPrediction.from_labels([A]), {A, B}, 5) == 0.2
    with pytest.raises(ValueError):
        precision_at_k(RankedPrediction(), {A}, 0)


def test_r_precision_examples():
    assert r_precision(RankedPrediction.from_labels([A, C, B]), {A, B}) == 0.5
    assert r_precision(RankedPrediction.from_labels([B, A, C]), {A, B}) == 1.0
    assert r_precision(RankedPrediction(), set()) == 1.0


def test_micro_examples():
    assert micro_f1([{A}, {B, C}], [{A}, {B, C}]) == 1.0
    assert micro_f1([{A}], [{B}]) == 0.0
    assert micro_f1([{A}, {A, B}], [{A}, {B}]) == pytest.approx(0.8)
    with pytest.raises(ValueError):
        micro_f1([{A}], [])


def test_macro_examples():
    assert macro_f1([{A}], [{A}], universe=[A]) == 1.0
    assert macro_f1([{A}, set()], [{A}, {B}], universe=[A, B]) == 0.5
    assert macro_f1([{A}], [{A}], universe=[]) == 0.0
    # absent class B: zero by default, dropped with the flag
    assert macro_f1([{A}], [{A}], universe=2) == 0.5
    assert macro_f1([{A}], [{A}], universe=2, skip_absent=True) == 1.0


def test_ranking_order_rule():
    with pytest.raises(ValueError):
        RankedPrediction((A, B), (0.1, 0.2))
    with pytest.raises(ValueError):
        RankedPrediction((B, A), (0.5, 0.5))
    with pytest.raises(ValueError):
        RankedPrediction((A, A), (0.5, 0.4))
    assert RankedPrediction.from_scores({3: 0.5, 1: 0.5, 2: 0.9}).labels == (2, 1, 3)


# brute-force oracle: dense 0/1 matrices and exact rational arithmetic


def oracle(rankings, truths, hards, n_labels, ks):
    n = len(rankings)
    truth = np.zeros((n, n_labels), dtype=bool)
    hard = np.zeros((n, n_labels), dtype=bool)
    for i in range(n):
        truth[i, list(truths[i])] = True
        hard[i, list(hards[i])] = True
    p = {}
    for k in ks:
        total = Fraction(0)
        for i in range(n):
            if truth[i].any():
                total += Fraction(int(sum(truth[i, l] for l in rankings[i][:k])), k)
        p[k] = total / n
    rp = Fraction(0)
    for i in range(n):
        r = int(truth[i].sum())
        rp += Fraction(int(sum(truth[i, l] for l in rankings[i][:r])), r) if r else 1
    rp /= n
    tp = int((hard & truth).sum())
    fp = int((hard & ~truth).sum())
    fn = int((~hard & truth).sum())
    micro = Fraction(2 * tp, 2 * tp + fp + fn) if (tp + fp + fn) else Fraction(0)
    per = []
    for l in range(n_labels):
        t, h = truth[:, l], hard[:, l]
        ctp, cfp, cfn = int((t & h).sum()), int((~t & h).sum()), int((t & ~h).sum())
        per.append(Fraction(2 * ctp, 2 * ctp + cfp + cfn) if (ctp + cfp + cfn) else Fraction(0))
    macro = sum(per, Fraction(0)) / n_labels
    return p, rp, micro, macro


@st.composite
def instances(draw):
    n_labels = draw(st.integers(1, 8))
    n = draw(st.integers(1, 10))
    labels = st.integers(0, n_labels - 1)
    rankings = [draw(st.lists(labels, unique=True, max_size=n_labels)) for _ in range(n)]
    truths = [draw(st.sets(labels)) for _ in range(n)]
    hards = [draw(st.sets(labels)) for _ in range(n)]
    return rankings, truths, hards, n_labels


KS = (1, 2, 3, 5)


def _close(value: float, exact: Fraction) -> bool:
    # evaluate() uses float arithmetic; exact means equal to the correctly rounded oracle up to summation
    return abs(value - float(exact)) <= 4 * np.finfo(float).eps * max(1.0, float(exact))


@settings(max_examples=200, deadline=None)
@given(instances())
def test_against_bruteforce_oracle(inst):
    rankings, truths, hards, n_labels = inst
    preds = [RankedPrediction.from_labels(r) for r in rankings]
    rep = evaluate(preds, truths, ks=KS, hard=hards, universe=n_labels)
    p, rp, micro, macro = oracle(rankings, truths, hards, n_labels, KS)
    for k in KS:
        assert _close(rep.p_at_k[k], p[k])
    assert _close(rep.r_precision, rp)
    assert rep.micro_f1 == float(micro)
    assert _close(rep.macro_f1, macro)


@settings(max_examples=100, deadline=None)
@given(instances(), st.randoms(use_true_random=False))
def test_relabeling_invariance(inst, rnd):
    rankings, truths, hards, n_labels = inst
    perm = list(range(n_labels))
    rnd.shuffle(perm)
    # relabeling changes tie order, so use strictly decreasing scores
    def ranked(r):
        return RankedPrediction(tuple(r), tuple(float(len(r) - i) for i in range(len(r))))

    base = evaluate([ranked(r) for r in rankings], truths, hard=hards, universe=n_labels)
    moved = evaluate(
        [ranked([perm[l] for l in r]) for r in rankings],
        [{perm[l] for l in t} for t in truths],
        hard=[{perm[l] for l in h} for h in hards],
        universe=n_labels,
    )
    assert moved.p_at_k == pytest.approx(base.p_at_k)
    assert (moved.r_precision, moved.micro_f1) == (base.r_precision, base.micro_f1)
    assert moved.macro_f1 == pytest.approx(base.macro_f1)


@settings(max_examples=200, deadline=None)
@given(instances())
def test_precision_properties(inst):
    rankings, truths, _, n_labels = inst
    for r, t in zip(rankings, truths):
        pred = RankedPrediction.from_labels(r)
        hits = [k * precision_at_k(pred, t, k) for k in range(1, n_labels + 3)]
        assert all(b >= a - 1e-12 for a, b in zip(hits, hits[1:]))
        assert all(0.0 <= precision_at_k(pred, t, k) <= 1.0 for k in range(1, 6))
        if t:
            assert r_precision(pred, t) == precision_at_k(pred, t, len(t))


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 4), st.data())
def test_fixed_size_truth_gives_p_at_r(r, data):
    n_labels = 8
    n = data.draw(st.integers(1, 30))
    truths = [set(data.draw(st.permutations(range(n_labels)))[:r]) for _ in range(n)]
    preds = [RankedPrediction.from_labels(data.draw(st.permutations(range(n_labels)))[:6]) for _ in range(n)]
    rep = evaluate(preds, truths, ks=(r,))
    assert rep.p_at_k[r] == rep.r_precision


def test_two_label_truth_bitwise_identity():
    rng = np.random.default_rng(0)
    truths = [set(rng.choice(20, 2, replace=False).tolist()) for _ in range(500)]
    preds = [RankedPrediction.from_labels(rng.permutation(20)[:5].tolist()) for _ in range(500)]
    rep = evaluate(preds, truths)
    assert rep.p_at_k[2] == rep.r_precision


def test_single_doc_matches_per_doc_operations():
    pred = RankedPrediction((A, C, B), (0.9, 0.6, 0.4))
    rep = evaluate([pred], [{A, B}], ks=(1, 2, 3))
    assert rep.p_at_k == {1: 1.0, 2: 0.5, 3: precision_at_k(pred, {A, B}, 3)}
    assert rep.r_precision == 0.5
    # threshold 0.5 keeps A and C
    assert rep.micro_f1 == micro_f1([{A, C}], [{A, B}])


def test_aggregate_identical_runs():
    rep = evaluate([RankedPrediction.from_labels([A, C, B])], [{A, B}])
    agg = aggregate([rep] * 5)
    assert agg.mean.to_dict() == rep.to_dict()
    assert set(agg.std.values()) == {0.0}
    assert agg.n_runs == 5


def test_report_round_trip_and_format(tmp_path):
    rep = evaluate([RankedPrediction.from_labels([A, C, B])], [{A, B}], ks=(1, 2, 3, 5))
    rep.name = "PLT"
    rep.save(tmp_path / "r.json")
    assert EvalReport.load(tmp_path / "r.json") == rep
    assert format_row(rep) == r"PLT & 100.00 & 50.00 & 66.67 & 40.00 & 50.00 \\"
    header = format_table([rep]).splitlines()[0]
    assert header == r"Method & P@1 & P@2 & P@3 & P@5 & R-Prec \\"
