"""Probabilistic label tree with per-node logistic regressions.

Training runs level by level from the root. A node's positives are the
documents whose ancestor-closed label set contains it; its negatives are the
documents that shortlisted its parent at the previous level (the parent was
among their ``beam`` best nodes there) without being positive. Each node is
an L2-penalized logistic regression fitted by plain SGD over a seeded
per-epoch shuffle.

Model file layout (little-endian)::

    b"HTCXPLT\\0"          magic, 8 bytes
    u32                   format version
    u64 + bytes           JSON header: config, feature_dim, tree, leaf_labels
    u64                   node count n
    i64[n + 1]            CSR indptr of the weight matrix (one row per node)
    u64 + i64[nnz]        CSR column indices
    f64[nnz]              CSR values
    f64[n]                biases
    u32                   CRC-32 of everything above
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .corpus import CorpusError, Dataset, Document
from .metrics import RankedPrediction
from .sparse import SparseVector, to_csr
from .tree import LabelTree, NodeKind

MAGIC = b"HTCXPLT\0"
FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    pass


class ModelVersionError(ModelFormatError):
    pass


@dataclass
class PltConfig:
    epochs: int = 10
    learning_rate: float = 0.5
    l2: float = 1e-4
    beam: int = 10
    neg_cap: int = 2000
    seed: int = 0


@dataclass(eq=False)
class PltModel:
    tree: LabelTree
    weights: sp.csr_matrix
    biases: np.ndarray
    feature_dim: int
    leaf_labels: tuple[int, ...]
    config: PltConfig = field(default_factory=PltConfig)
    loss_history: dict[int, list[float]] = field(default_factory=dict, repr=False)

    @property
    def beam(self) -> int:
        return self.config.beam

    def node_weight(self, node: int) -> SparseVector:
        w = self.weights
        lo, hi = w.indptr[node], w.indptr[node + 1]
        return SparseVector(w.indices[lo:hi].astype(np.int64), w.data[lo:hi])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PltModel):
            return NotImplemented
        a, b = self.weights, other.weights
        return (
            self.tree == other.tree
            and self.feature_dim == other.feature_dim
            and self.leaf_labels == other.leaf_labels
            and asdict(self.config) == asdict(other.config)
            and a.shape == b.shape
            and np.array_equal(a.indptr, b.indptr)
            and np.array_equal(a.indices, b.indices)
            and np.array_equal(a.data, b.data)
            and np.array_equal(self.biases, other.biases)
        )


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


def _normalized(x: sp.csr_matrix) -> sp.csr_matrix:
    x = x.copy()
    norms = np.sqrt(np.asarray(x.multiply(x).sum(axis=1)).ravel())
    scale = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)
    x.data = x.data * np.repeat(scale, np.diff(x.indptr))
    return x


def feature_matrix(docs: Sequence[Document], dim: int) -> sp.csr_matrix:
    """L2-normalized CSR rows; indices at or beyond ``dim`` are dropped."""
    vecs = []
    for d in docs:
        if d.features is None:
            raise CorpusError(f"document {d.id} has no features")
        f = d.features
        if f.max_index() >= dim:
            keep = f.indices < dim
            f = SparseVector(f.indices[keep], f.values[keep])
        vecs.append(f)
    return _normalized(to_csr(vecs, dim))


# per-node objective


def node_objective(
    x: sp.csr_matrix, y: np.ndarray, w: np.ndarray, b: float, l2: float
) -> tuple[float, np.ndarray, float]:
    """Mean logistic loss plus ``l2/2 * |w|^2``, with its gradient."""
    m = x.shape[0]
    z = np.asarray(x @ w).ravel() + b
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z)) if m else 0.0
    loss += 0.5 * l2 * float(np.dot(w, w))
    g = (_sigmoid(z) - y) / max(m, 1)
    grad_w = np.asarray(x.T @ g).ravel() + l2 * w
    return loss, grad_w, float(g.sum())


def _sgd(
    x: sp.csr_matrix, y: np.ndarray, cfg: PltConfig, rng: np.random.Generator, record: bool
) -> tuple[np.ndarray, float, list[float]]:
    dim = x.shape[1]
    v = np.zeros(dim)
    scale = 1.0
    b = 0.0
    lr, decay = cfg.learning_rate, 1.0 - cfg.learning_rate * cfg.l2
    indptr, indices, data = x.indptr, x.indices, x.data
    history = []
    for _ in range(cfg.epochs):
        for i in rng.permutation(x.shape[0]).tolist():
            lo, hi = indptr[i], indptr[i + 1]
            idx, val = indices[lo:hi], data[lo:hi]
            z = scale * float(np.dot(v[idx], val)) + b
            g = float(_sigmoid(z)) - y[i]
            scale *= decay
            if scale < 1e-9:
                v *= scale
                scale = 1.0
            v[idx] -= (lr * g / scale) * val
            b -= lr * g
        if record:
            history.append(node_objective(x, y, v * scale, b, cfg.l2)[0])
    return v * scale, b, history


# training


def _leaf_nodes_for(ds: Dataset, tree: LabelTree) -> list[int]:
    index = tree.index
    leaves = set(tree.leaves)
    nodes = []
    for name in ds.label_vocab:
        node = index.get(name)
        if node is None or node not in leaves:
            raise CorpusError(f"label {name!r} is not a leaf of the tree")
        nodes.append(node)
    if len(nodes) != len(leaves):
        raise CorpusError("tree has leaves outside the dataset label vocabulary")
    return nodes


def _by_level(tree: LabelTree) -> list[list[int]]:
    out: list[list[int]] = [[] for _ in range(tree.depth + 1)]
    for node, lv in enumerate(tree.levels):
        out[lv].append(node)
    return out


def _expand(
    tree: LabelTree,
    frontier: list[tuple[int, float]],
    logits: dict[int, float] | np.ndarray,
    beam: int,
) -> tuple[list[tuple[int, float]], list[tuple[int, float]]]:
    """One beam step: (kept internal nodes, reached leaves) with path probabilities."""
    internal, leaves = [], []
    for node, prob in frontier:
        for child in tree.children(node):
            p = prob * float(_sigmoid(logits[child]))
            (internal if tree.children(child) else leaves).append((child, p))
    internal.sort(key=lambda e: (-e[1], e[0]))
    return internal[:beam], leaves


def train(
    ds: Dataset, tree: LabelTree, config: PltConfig | None = None, record_loss: bool = False
) -> PltModel:
    cfg = config or PltConfig()
    if not ds.docs:
        raise CorpusError("empty training set")
    if not ds.has_features:
        raise CorpusError("training needs precomputed features on every document")
    leaf_of = _leaf_nodes_for(ds, tree)
    dim = ds.feature_dim
    x = feature_matrix(ds.docs, dim)
    n_docs, n_nodes = x.shape[0], tree.n_nodes

    positives: list[list[int]] = [[] for _ in range(n_nodes)]
    for d, doc in enumerate(ds.docs):
        for node in sorted(tree.closure(leaf_of[l] for l in doc.labels)):
            positives[node].append(d)

    leaf_labels = [-1] * n_nodes
    for lab, node in enumerate(leaf_of):
        leaf_labels[node] = lab

    rows: list[SparseVector] = [SparseVector.empty()] * n_nodes
    biases = np.zeros(n_nodes)
    history: dict[int, list[float]] = {}
    frontier: list[list[tuple[int, float]]] = [[(0, 1.0)] for _ in range(n_docs)]
    levels = _by_level(tree)
    for level in range(1, len(levels)):
        shortlisted: dict[int, list[int]] = {}
        for d, fr in enumerate(frontier):
            for node, _ in fr:
                shortlisted.setdefault(node, []).append(d)
        for node in levels[level]:
            pos = positives[node]
            pos_set = set(pos)
            cands = shortlisted.get(tree.parents[node], [])
            neg = [d for d in cands if d not in pos_set]
            rng = np.random.default_rng([cfg.seed, node])
            if cfg.neg_cap and len(neg) > cfg.neg_cap:
                neg = sorted(rng.choice(neg, size=cfg.neg_cap, replace=False).tolist())
            idx = np.array(pos + neg, dtype=np.int64)
            if idx.size == 0:
                continue
            y = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
            w, b, hist = _sgd(x[idx], y, cfg, rng, record_loss)
            nz = np.flatnonzero(w)
            rows[node] = SparseVector(nz, w[nz])
            biases[node] = b
            if record_loss:
                history[node] = hist
        if level + 1 < len(levels):
            wl = to_csr([rows[n] for n in range(n_nodes)], dim)
            logits = _level_logits(x, wl, biases, levels[level])
            col = {n: j for j, n in enumerate(levels[level])}
            for d in range(n_docs):
                row = logits[d]
                frontier[d], _ = _expand(
                    tree, frontier[d], _LogitView(row, col), cfg.beam
                )
    weights = to_csr(rows, dim)
    return PltModel(tree, weights, biases, dim, tuple(leaf_labels), cfg, history)


class _LogitView:
    def __init__(self, row: np.ndarray, col: dict[int, int]):
        self.row, self.col = row, col

    def __getitem__(self, node: int) -> float:
        return self.row[self.col[node]]


def _level_logits(
    x: sp.csr_matrix, w: sp.csr_matrix, biases: np.ndarray, nodes: list[int]
) -> np.ndarray:
    sub = w[nodes]
    return (x @ sub.T).toarray() + biases[nodes]


# prediction


def _node_logits(model: PltModel, xrow: sp.csr_matrix, nodes: list[int]) -> dict[int, float]:
    vals = (model.weights[nodes] @ xrow.T).toarray().ravel() + model.biases[nodes]
    return dict(zip(nodes, vals.tolist()))


def predict(
    model: PltModel, doc: Document, beam: int | None = None, top_k: int = 10
) -> RankedPrediction:
    """Beam search from the root; leaves ranked by path probability."""
    beam = model.config.beam if beam is None else beam
    x = feature_matrix([doc], model.feature_dim)
    tree = model.tree
    frontier = [(0, 1.0)]
    reached: list[tuple[int, float]] = []
    while frontier:
        kids = [c for node, _ in frontier for c in tree.children(node)]
        logits = _node_logits(model, x, kids)
        frontier, leaves = _expand(tree, frontier, logits, beam)
        reached.extend(leaves)
    scored = [(model.leaf_labels[node], p) for node, p in reached]
    ranked = RankedPrediction.from_scores(scored)
    return RankedPrediction(ranked.labels[:top_k], ranked.scores[:top_k])


def predict_dataset(
    model: PltModel, ds: Dataset, beam: int | None = None, top_k: int = 10
) -> list[RankedPrediction]:
    return [predict(model, doc, beam, top_k) for doc in ds.docs]


def max_level_width(tree: LabelTree) -> int:
    counts = [0] * (tree.depth + 1)
    for lv in tree.levels:
        counts[lv] += 1
    return max(counts)


def empty_model(feature_dim: int = 0, config: PltConfig | None = None) -> PltModel:
    tree = LabelTree(("__root__",), (NodeKind.ROOT,), (-1,))
    return PltModel(
        tree, sp.csr_matrix((1, feature_dim)), np.zeros(1), feature_dim, (-1,), config or PltConfig()
    )


# persistence


def save(model: PltModel, path: str | Path) -> None:
    tree = model.tree
    header = {
        "config": asdict(model.config),
        "feature_dim": model.feature_dim,
        "leaf_labels": list(model.leaf_labels),
        "tree": {
            "names": list(tree.names),
            "kinds": [k.value for k in tree.kinds],
            "parents": list(tree.parents),
            "synthetic_root": tree.synthetic_root,
        },
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    w = model.weights
    parts = [
        MAGIC,
        struct.pack("<I", FORMAT_VERSION),
        struct.pack("<Q", len(blob)),
        blob,
        struct.pack("<Q", tree.n_nodes),
        np.asarray(w.indptr, dtype="<i8").tobytes(),
        struct.pack("<Q", w.nnz),
        np.asarray(w.indices, dtype="<i8").tobytes(),
        np.asarray(w.data, dtype="<f8").tobytes(),
        np.asarray(model.biases, dtype="<f8").tobytes(),
    ]
    body = b"".join(parts)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.buf):
            raise ModelFormatError("model file is truncated")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def array(self, dtype: str, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype=dtype).copy()


def load(path: str | Path) -> PltModel:
    buf = Path(path).read_bytes()
    if len(buf) < len(MAGIC) + 4 or buf[: len(MAGIC)] != MAGIC:
        raise ModelFormatError(f"{path}: not a PLT model file")
    r = _Reader(buf)
    r.take(len(MAGIC))
    version = r.u32()
    if version != FORMAT_VERSION:
        raise ModelVersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    if len(buf) < 16 or zlib.crc32(buf[:-4]) != struct.unpack("<I", buf[-4:])[0]:
        raise ModelFormatError(f"{path}: checksum mismatch (corrupt or truncated file)")
    try:
        header = json.loads(r.take(r.u64()).decode("utf-8"))
        n_nodes = r.u64()
        indptr = r.array("<i8", n_nodes + 1)
        nnz = r.u64()
        indices = r.array("<i8", nnz)
        data = r.array("<f8", nnz)
        biases = r.array("<f8", n_nodes)
        t = header["tree"]
        tree = LabelTree(
            tuple(t["names"]),
            tuple(NodeKind(k) for k in t["kinds"]),
            tuple(t["parents"]),
            bool(t["synthetic_root"]),
        )
        weights = sp.csr_matrix(
            (data, indices, indptr), shape=(n_nodes, int(header["feature_dim"]))
        )
        return PltModel(
            tree,
            weights,
            biases,
            int(header["feature_dim"]),
            tuple(header["leaf_labels"]),
            PltConfig(**header["config"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"{path}: malformed model file ({exc})") from None
