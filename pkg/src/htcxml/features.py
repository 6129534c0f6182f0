"""TF-IDF document vectors and PIFA label embeddings."""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .corpus import CorpusError, Dataset, Document
from .sparse import SparseVector, from_csr, to_csr

_TOKEN = re.compile(r"[^\W_]+")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on runs of non-alphanumeric characters."""
    return _TOKEN.findall(text.lower())


@dataclass(frozen=True, eq=False)
class TfidfModel:
    vocab: dict[str, int]
    idf: np.ndarray
    n_docs_fitted: int

    def __post_init__(self) -> None:
        if len(self.idf) != len(self.vocab):
            raise ValueError("idf length must equal vocabulary size")

    @property
    def dim(self) -> int:
        return len(self.vocab)


def fit_tfidf(ds: Dataset) -> TfidfModel:
    if not ds.docs:
        raise CorpusError("cannot fit TF-IDF on an empty corpus")
    df: Counter = Counter()
    for doc in ds.docs:
        if doc.text is None:
            raise CorpusError(f"document {doc.id} has no text")
        df.update(set(doc.text))
    tokens = sorted(df)
    n = len(ds.docs)
    idf = np.array([math.log((n + 1) / (df[t] + 1)) + 1.0 for t in tokens])
    return TfidfModel({t: i for i, t in enumerate(tokens)}, idf, n)


def transform(model: TfidfModel, doc: Document) -> SparseVector:
    """Raw term count times idf; unseen tokens are dropped."""
    if doc.text is None:
        raise CorpusError(f"document {doc.id} has no text")
    counts: Counter = Counter(t for t in doc.text if t in model.vocab)
    weights = {model.vocab[t]: c * float(model.idf[model.vocab[t]]) for t, c in counts.items()}
    return SparseVector.from_dict(weights)


def transform_dataset(model: TfidfModel, ds: Dataset) -> Dataset:
    docs = [
        Document(d.id, d.labels, text=d.text, features=transform(model, d)) for d in ds.docs
    ]
    return Dataset(tuple(docs), ds.label_vocab, model.dim)


def doc_length(doc: Document) -> float:
    """Token count for raw text; for feature-only documents the feature sum."""
    if doc.text is not None:
        return float(len(doc.text))
    values = doc.features.values
    if np.all(values == np.round(values)):
        return float(values.sum())
    return float(np.abs(values).sum())


@dataclass(frozen=True, eq=False)
class LabelFeatureMatrix:
    matrix: sp.csr_matrix
    label_vocab: tuple[str, ...] = ()

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def n_labels(self) -> int:
        return self.matrix.shape[0]

    @property
    def rows(self) -> list[SparseVector]:
        return from_csr(self.matrix)

    def row(self, label: int) -> SparseVector:
        m = self.matrix
        lo, hi = m.indptr[label], m.indptr[label + 1]
        return SparseVector(m.indices[lo:hi].astype(np.int64), m.data[lo:hi])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LabelFeatureMatrix):
            return NotImplemented
        a, b = self.matrix, other.matrix
        return (
            a.shape == b.shape
            and np.array_equal(a.indptr, b.indptr)
            and np.array_equal(a.indices, b.indices)
            and np.array_equal(a.data, b.data)
        )


def pifa(
    ds: Dataset,
    doc_vectors: Sequence[SparseVector] | None = None,
    doc_lengths: Sequence[float] | None = None,
    l2_normalize: bool = False,
) -> LabelFeatureMatrix:
    """Sum of length-divided document vectors over each label's positives.

    ``l2_normalize`` rescales every non-zero row to unit norm afterwards
    (CascadeXML-style); the default leaves rows unnormalized.
    """
    if doc_vectors is None:
        if not ds.has_features:
            raise CorpusError("pifa needs doc_vectors or precomputed features")
        doc_vectors = [d.features for d in ds.docs]
    if len(doc_vectors) != len(ds.docs):
        raise ValueError("doc_vectors must align with ds.docs")
    if doc_lengths is None:
        doc_lengths = [doc_length(d) for d in ds.docs]
    lengths = np.asarray(doc_lengths, dtype=np.float64)
    if lengths.shape != (len(ds.docs),):
        raise ValueError("doc_lengths must align with ds.docs")

    dim = max(ds.feature_dim, max((v.max_index() + 1 for v in doc_vectors), default=0))
    divisor = np.ones_like(lengths)
    rows, cols = [], []
    for i, doc in enumerate(ds.docs):
        if not doc.labels:
            continue
        if lengths[i] <= 0:
            raise CorpusError(f"document {doc.id} carries labels but has length 0")
        divisor[i] = lengths[i]
        for lab in sorted(doc.labels):
            rows.append(lab)
            cols.append(i)
    assign = sp.csr_matrix(
        (np.ones(len(rows)), (np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64))),
        shape=(ds.n_labels, len(ds.docs)),
    )
    assign.sort_indices()
    x = to_csr(doc_vectors, dim)
    x.data = x.data / np.repeat(divisor, np.diff(x.indptr))
    out = assign.dot(x).tocsr()
    out.sort_indices()
    out.eliminate_zeros()
    if l2_normalize:
        norms = np.sqrt(np.asarray(out.multiply(out).sum(axis=1)).ravel())
        scale = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)
        out = sp.diags(scale).dot(out).tocsr()
        out.sort_indices()
    return LabelFeatureMatrix(out, ds.label_vocab)


def write_label_features(lfm: LabelFeatureMatrix, path: str | Path) -> None:
    """Dump rows in repository sparse format, each row tagged with its own label id."""
    m = lfm.matrix
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{lfm.n_labels} {lfm.dim} {lfm.n_labels}\n")
        for i in range(lfm.n_labels):
            lo, hi = m.indptr[i], m.indptr[i + 1]
            feats = " ".join(
                f"{j}:{v:.17g}" for j, v in zip(m.indices[lo:hi].tolist(), m.data[lo:hi].tolist())
            )
            fh.write(f"{i} {feats}".rstrip(" ") + "\n")


def read_label_features(path: str | Path, label_vocab: Sequence[str] = ()) -> LabelFeatureMatrix:
    from .corpus import parse_xml_repo

    ds = parse_xml_repo(path)
    m = to_csr([d.features for d in ds.docs], ds.feature_dim)
    m.sort_indices()
    return LabelFeatureMatrix(m, tuple(label_vocab))
