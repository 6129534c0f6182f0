"""Acceptance suite: one test per criterion, each recording a PASS/FAIL/SKIP line.

The summary is printed at the end of the pytest run. Criteria that need the
original corpora read them from ``$HTCXML_DATA_DIR/<dataset>/``:

* HTC sets: ``train.jsonl``, ``val.jsonl``, ``test.jsonl``, ``taxonomy.txt``
* XML sets: ``train.txt``, ``test.txt`` in repository format

Without that directory those parts are skipped and the same code paths run on
synthetic fixtures with the published shapes.
"""

from __future__ import annotations

import functools
import math
import os
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
import scipy.sparse as sp

from htcxml.corpus import file_stats, parse_taxonomy, parse_text_corpus, stats, taxonomy_vocab
from htcxml.features import LabelFeatureMatrix, fit_tfidf, pifa, transform_dataset
from htcxml.hlt import balanced_kmeans, build_hlt, build_hlt_report, segment_tree
from htcxml.metrics import RankedPrediction, evaluate
from htcxml.plt import PltConfig, feature_matrix, max_level_width, node_objective, predict, train
from htcxml.transfer import flatten, inject_hierarchy, strip_meta_labels
from synth import DATASET_SHAPES, HTC, XML, cluster_tree, random_tree, separable_dataset, write_htc, write_xml

RESULTS: list[tuple[int, str, str, str]] = []
DATA_DIR = os.environ.get("HTCXML_DATA_DIR")


def criterion(number: int, title: str):
    """Record the outcome of the wrapped test; details come from its return value."""

    def wrap(fn):
        @functools.wraps(fn)
        def inner(*args, **kwargs):
            start = time.perf_counter()
            try:
                detail = fn(*args, **kwargs) or ""
            except pytest.skip.Exception as exc:
                RESULTS.append((number, title, "SKIP", str(exc)))
                raise
            except BaseException as exc:
                RESULTS.append((number, title, "FAIL", f"{type(exc).__name__}: {exc}"[:200]))
                raise
            RESULTS.append((number, title, "PASS", f"{detail} [{time.perf_counter() - start:.1f}s]"))

        return inner

    return wrap


def real(name: str) -> Path:
    if not DATA_DIR or not (Path(DATA_DIR) / name).is_dir():
        pytest.skip(f"{name}: original corpus not available (set HTCXML_DATA_DIR)")
    return Path(DATA_DIR) / name


@pytest.fixture(scope="module")
def htc_fixtures(tmp_path_factory):
    root = tmp_path_factory.mktemp("htc")
    return {name: write_htc(name, root, seed=1) for name in HTC}


def _htc_splits(directory: Path, taxonomy: Path):
    tree = parse_taxonomy(taxonomy)
    vocab = taxonomy_vocab(tree)
    splits = {}
    for split in ("train", "val", "test"):
        path = directory / f"{split}.jsonl"
        if path.exists():
            splits[split] = parse_text_corpus(path, vocab)
    return tree, splits


def _row(st) -> tuple:
    return (st.n_labels, st.n_train, st.n_val, st.n_test)


# 1. dataset statistics


@pytest.mark.parametrize("name", HTC + XML)
@criterion(1, "dataset statistics (real)")
def test_c1_dataset_statistics_real(name):
    d = real(name)
    if name in HTC:
        _, splits = _htc_splits(d, d / "taxonomy.txt")
        st = stats(splits["train"], splits.get("val"), splits.get("test"))
    else:
        st = file_stats(d / "train.txt", None, d / "test.txt")
    n_labels, n_tr, n_va, n_te, avg = DATASET_SHAPES[name]
    assert _row(st) == (n_labels, n_tr, n_va, n_te), st.row()
    assert abs(st.avg_labels_per_doc - avg) <= 0.01, st.row()
    return f"{name}: {st.row()}"


@criterion(1, "dataset statistics (synth)")
def test_c1_dataset_statistics_synthetic_shapes(htc_fixtures, tmp_path):
    # exercises ingestion at full size; agreement here only proves the counting path
    rows = []
    for name in HTC:
        fx = htc_fixtures[name]
        _, splits = _htc_splits(fx.dir, fx.taxonomy)
        st = stats(splits["train"], splits.get("val"), splits.get("test"))
        assert _row(st) == DATASET_SHAPES[name][:4]
        assert abs(st.avg_labels_per_doc - DATASET_SHAPES[name][4]) <= 0.01
        rows.append(name)
    for name in XML:
        paths = write_xml(name, tmp_path, seed=2)
        st = file_stats(paths["train"], None, paths["test"])
        assert _row(st) == DATASET_SHAPES[name][:4]
        assert abs(st.avg_labels_per_doc - DATASET_SHAPES[name][4]) <= 0.01
        rows.append(name)
    return "synthetic fixtures ingested at full size: " + ", ".join(rows)


# 2. branching factors


def _synthetic_pifa(n_labels: int, dim: int, nnz_per_row: int, seed: int) -> LabelFeatureMatrix:
    rng = np.random.default_rng(seed)
    cols = rng.integers(0, dim, size=(n_labels, nnz_per_row))
    rows = np.repeat(np.arange(n_labels), nnz_per_row)
    m = sp.csr_matrix((rng.random(rows.size) + 0.1, (rows, cols.ravel())), shape=(n_labels, dim))
    m.sum_duplicates()
    return LabelFeatureMatrix(m)


@pytest.mark.parametrize(
    "name, plan, target, max_iters",
    [("Wiki10-31K", [512, 8], 7.55, 10), ("Amazon-670K", [1024, 8, 8], 10.22, 2)],
)
@criterion(2, "leaf fanout")
def test_c2_branching_factor(name, plan, target, max_iters):
    n_labels = DATASET_SHAPES[name][0]
    lfm = _synthetic_pifa(n_labels, 64, 4, seed=0)
    _, report = build_hlt_report(lfm, plan, seed=0, max_iters=max_iters)
    assert abs(report.leaf_fanout - target) <= 0.1, report.to_dict()
    return f"{name} {plan}: achieved {report.leaf_fanout:.4f} vs {target} +- 0.1"


@criterion(2, "leaf fanout (AmazonCat note)")
def test_c2_amazoncat_known_discrepancy():
    lfm = _synthetic_pifa(DATASET_SHAPES["AmazonCat-13K"][0], 64, 4, seed=0)
    _, report = build_hlt_report(lfm, [256, 8], seed=0, max_iters=5)
    # published 6.3; balanced splits force 13330 / 2048
    assert report.leaf_fanout == pytest.approx(13330 / 2048)
    return f"AmazonCat-13K [256, 8]: achieved {report.leaf_fanout:.4f}, published 6.3 (recorded discrepancy)"


# 3. P@2 == R-Precision


@criterion(3, "P@2 == R-Prec bit-exact")
def test_c3_two_label_identity(htc_fixtures):
    fx = htc_fixtures["WoS"]
    tree, splits = _htc_splits(fx.dir, fx.taxonomy)
    test = flatten(splits["test"], tree, "full")
    truths = test.label_sets()
    assert all(len(t) == 2 for t in truths)
    rng = np.random.default_rng(0)
    n_labels = test.n_labels
    preds = []
    for t in truths:
        scores = rng.random(n_labels)
        # half the rankings favour a true label so P@2 is not trivially zero
        if rng.random() < 0.5:
            scores[min(t)] += 1.0
        preds.append(RankedPrediction.from_scores(dict(enumerate(scores.tolist()))))
    rep = evaluate(preds, truths)
    assert rep.p_at_k[2] == rep.r_precision
    detail = f"WoS-shaped test split ({len(truths)} docs): P@2 = R-Prec = {rep.r_precision!r}"
    if DATA_DIR and (Path(DATA_DIR) / "WoS").is_dir():
        d = Path(DATA_DIR) / "WoS"
        rtree, rsplits = _htc_splits(d, d / "taxonomy.txt")
        rtest = flatten(rsplits["test"], rtree, "full")
        rtruth = rtest.label_sets()
        if all(len(t) == 2 for t in rtruth):
            rpreds = [RankedPrediction.from_labels(rng.permutation(rtest.n_labels)[:5].tolist()) for _ in rtruth]
            rrep = evaluate(rpreds, rtruth)
            assert rrep.p_at_k[2] == rrep.r_precision
            detail += "; real WoS test split also matches"
    return detail


# 4. leaf-only WoS


@criterion(4, "WoS leaf-only single label")
def test_c4_leaf_only_synthetic(htc_fixtures):
    fx = htc_fixtures["WoS"]
    tree, splits = _htc_splits(fx.dir, fx.taxonomy)
    total = 0
    for ds in splits.values():
        leaf = flatten(ds, tree, "leaf")
        assert all(len(d.labels) == 1 for d in leaf.docs)
        total += len(leaf)
    return f"WoS-shaped fixture: {total}/{total} documents keep exactly one label"


@criterion(4, "WoS leaf-only (real)")
def test_c4_leaf_only_real():
    d = real("WoS")
    tree, splits = _htc_splits(d, d / "taxonomy.txt")
    counts = [len(doc.labels) for ds in splits.values() for doc in flatten(ds, tree, "leaf").docs]
    share = sum(c == 1 for c in counts) / len(counts)
    assert share == 1.0, f"{share:.4%} single-label"
    return f"real WoS: {len(counts)} documents, all single-label"


# 5. metric oracle


def _oracle(rankings, truths, hards, n_labels, ks):
    n = len(rankings)
    t = np.zeros((n, n_labels), dtype=bool)
    h = np.zeros((n, n_labels), dtype=bool)
    for i in range(n):
        t[i, sorted(truths[i])] = True
        h[i, sorted(hards[i])] = True
    p = {k: sum((Fraction(int(t[i, rankings[i][:k]].sum()), k) for i in range(n) if t[i].any()), Fraction(0)) / n for k in ks}
    rp = Fraction(0)
    for i in range(n):
        r = int(t[i].sum())
        rp += Fraction(int(t[i, rankings[i][:r]].sum()), r) if r else 1
    tp, fp, fn = int((h & t).sum()), int((h & ~t).sum()), int((~h & t).sum())
    micro = Fraction(2 * tp, 2 * tp + fp + fn) if tp + fp + fn else Fraction(0)
    per = []
    for l in range(n_labels):
        a, b, c = int((h[:, l] & t[:, l]).sum()), int((h[:, l] & ~t[:, l]).sum()), int((~h[:, l] & t[:, l]).sum())
        per.append(Fraction(2 * a, 2 * a + b + c) if a + b + c else Fraction(0))
    return p, rp / n, micro, sum(per, Fraction(0)) / n_labels


def _float_equal(value: float, exact: Fraction) -> bool:
    # the float pipeline rounds each per-document score once; allow that and nothing more
    return abs(Fraction(value) - exact) <= Fraction(4) * Fraction(np.finfo(float).eps) * max(1, abs(exact))


@criterion(5, "metric oracle, 1000 instances")
def test_c5_metric_oracle():
    rng = np.random.default_rng(2024)
    ks = (1, 2, 3, 5)
    worst = 0.0
    for _ in range(1000):
        n_labels = int(rng.integers(1, 9))
        n = int(rng.integers(1, 11))
        rankings = [rng.permutation(n_labels)[: rng.integers(0, n_labels + 1)].tolist() for _ in range(n)]
        truths = [set(np.flatnonzero(rng.random(n_labels) < 0.3).tolist()) for _ in range(n)]
        hards = [set(np.flatnonzero(rng.random(n_labels) < 0.3).tolist()) for _ in range(n)]
        preds = [RankedPrediction.from_labels(r) for r in rankings]
        rep = evaluate(preds, truths, ks=ks, hard=hards, universe=n_labels)
        p, rp, micro, macro = _oracle(rankings, truths, hards, n_labels, ks)
        pairs = [(rep.p_at_k[k], p[k]) for k in ks] + [(rep.r_precision, rp), (rep.macro_f1, macro)]
        for got, exact in pairs:
            assert _float_equal(got, exact), (got, exact)
            worst = max(worst, abs(float(Fraction(got) - exact)))
        assert rep.micro_f1 == float(micro)
    return f"max deviation from exact rational oracle {worst:.2e}; micro-F1 bit-exact"


# 6. clustering


@criterion(6, "balanced k-means, 200 inputs")
def test_c6_clustering_properties():
    rng = np.random.default_rng(7)
    for trial in range(200):
        n = int(rng.integers(2, 400))
        k = int(rng.integers(1, min(n, 80) + 1))
        d = int(rng.integers(2, 60))
        x = sp.random(n, d, density=float(rng.uniform(0.02, 0.5)), format="csr",
                      random_state=np.random.RandomState(trial))
        x.data = np.abs(x.data) + 0.01
        a = balanced_kmeans(x, k, seed=trial)
        sizes = np.bincount(a.assignment, minlength=k)
        assert set(sizes.tolist()) <= {n // k, -(-n // k)}, (n, k, sizes)
        assert all(b <= a_ for a_, b in zip(a.objective, a.objective[1:])), a.objective
        again = balanced_kmeans(x, k, seed=trial)
        assert np.array_equal(a.assignment, again.assignment)
    return "sizes within {floor, ceil}, objective non-increasing, reruns bit-identical"


# 7. segmentation


@criterion(7, "segmentation, 50 trees")
def test_c7_segmentation_properties():
    rng = np.random.default_rng(11)
    n_segments = 0
    for _ in range(50):
        tree = random_tree(rng, int(rng.integers(1, 5001)), int(rng.integers(1, 6)))
        segs = segment_tree(tree, 512)
        n_segments += len(segs)
        seen = []
        for seg in segs:
            assert seg.n_nodes <= 512
            for leaf in seg.leaves:
                orig = tree.index[seg.names[leaf]]
                assert tree.is_leaf(orig)
                assert [seg.names[i] for i in seg.path(leaf)] == [tree.names[i] for i in tree.path(orig)]
                seen.append(orig)
        assert sorted(seen) == sorted(tree.leaves)
    return f"{n_segments} segments, all within 512 nodes, leaves partitioned, paths preserved"


# 8. transfer round trip


def _round_trip(tree, splits, seed=0):
    flat = {k: flatten(v, tree, "full") for k, v in splits.items()}
    n_docs = 0
    for ds in flat.values():
        for doc in ds.docs:
            names = {ds.label_vocab[l] for l in doc.labels}
            for name in names:
                parent = tree.parents[tree.index[name]]
                assert parent == 0 or tree.names[parent] in names
            n_docs += 1
    base = flat["train"]
    lfm = pifa(transform_dataset(fit_tfidf(base), base))
    hlt = build_hlt(lfm, [8], seed=seed, label_names=base.label_vocab)
    for ds in flat.values():
        injected, _ = inject_hierarchy(ds, hlt)
        for orig, doc in zip(ds.docs, injected.docs):
            assert strip_meta_labels(doc.labels, hlt, ds.label_vocab) == orig.labels
    return n_docs


@criterion(8, "transfer round trip (synth)")
def test_c8_round_trip_synthetic(htc_fixtures):
    done = []
    for name in HTC:
        fx = htc_fixtures[name]
        tree, splits = _htc_splits(fx.dir, fx.taxonomy)
        done.append(f"{name} {_round_trip(tree, splits)}")
        del splits
    return "ancestor-closed and identity on every document: " + ", ".join(done)


@pytest.mark.parametrize("name", HTC)
@criterion(8, "transfer round trip (real)")
def test_c8_round_trip_real(name):
    d = real(name)
    tree, splits = _htc_splits(d, d / "taxonomy.txt")
    return f"{name}: {_round_trip(tree, splits)} documents verified"


# 9. PLT sanity


@criterion(9, "PLT sanity")
def test_c9_plt_sanity():
    ds = separable_dataset(200, 32, 4, seed=0)
    tree = cluster_tree(32, 4)
    assert tree.depth == 2
    model = train(ds, tree, PltConfig(seed=0))
    width = max_level_width(tree)
    w = model.weights.toarray()
    hits = 0
    for doc in ds.docs:
        exhaustive = predict(model, doc, beam=10**9, top_k=32)
        at_width = predict(model, doc, beam=width, top_k=32)
        assert at_width == exhaustive
        x = feature_matrix([doc], model.feature_dim).toarray().ravel()
        for lab, s in zip(exhaustive.labels, exhaustive.scores):
            leaf = tree.index[ds.label_vocab[lab]]
            p = math.prod(1 / (1 + math.exp(-(w[n] @ x + model.biases[n]))) for n in tree.path(leaf)[1:])
            assert s == pytest.approx(p, rel=1e-12)
        hits += exhaustive.labels[0] in doc.labels
    p1 = hits / len(ds.docs)
    assert p1 >= 0.95

    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(20):
        m, dim = int(rng.integers(2, 15)), int(rng.integers(1, 10))
        xs = sp.csr_matrix(rng.normal(size=(m, dim)) * (rng.random((m, dim)) < 0.5))
        y = (rng.random(m) < 0.5).astype(float)
        wv, b = rng.normal(size=dim), float(rng.normal())
        _, g, _ = node_objective(xs, y, wv, b, 1e-3)
        for j in range(dim):
            e = np.zeros(dim)
            e[j] = 1e-6
            fd = (node_objective(xs, y, wv + e, b, 1e-3)[0] - node_objective(xs, y, wv - e, b, 1e-3)[0]) / 2e-6
            rel = abs(g[j] - fd) / max(abs(fd), 1e-8)
            assert rel <= 1e-4 or abs(g[j] - fd) <= 1e-9
            worst = max(worst, rel if abs(fd) > 1e-6 else 0.0)
    return f"P@1 {p1:.3f} (>= 0.95), beam {width} == exhaustive == brute force, max grad rel err {worst:.1e}"


# 10. explicit exclusion


@criterion(10, "neural numbers excluded")
def test_c10_exclusion_documented():
    readme = (Path(__file__).parents[1] / "README.md").read_text(encoding="utf-8")
    scope = readme.split("## Scope", 1)[1].split("\n## ", 1)[0]
    assert "does **not** reproduce" in scope and "84.61" in scope and "no published target" in scope
    return "neural-model scores are out of scope; README states the exclusion"


@pytest.mark.parametrize("name", HTC)
@criterion(10, "PLT on real HTC (tracking)")
def test_c10_plt_regression_tracking(name):
    d = real(name)
    tree, splits = _htc_splits(d, d / "taxonomy.txt")
    flat = {k: flatten(v, tree, "full") for k, v in splits.items()}
    model_tfidf = fit_tfidf(flat["train"])
    tr = transform_dataset(model_tfidf, flat["train"])
    te = transform_dataset(model_tfidf, flat["test"])
    lfm = pifa(tr)
    hlt = build_hlt(lfm, [16], seed=0, label_names=tr.label_vocab)
    model = train(tr, hlt, PltConfig(epochs=3))
    preds = [predict(model, doc) for doc in te.docs]
    rep = evaluate(preds, te.label_sets())
    cells = " ".join(f"{c}={100 * v:.2f}" for c, v in rep.columns())
    return f"{name}: {cells} (no target)"
