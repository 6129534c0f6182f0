"""Datasets and their on-disk formats.

Two corpus carriers are supported:

* the Extreme Classification Repository sparse format (header ``N D L`` then
  one ``l1,l2,... f1:v1 f2:v2 ...`` line per document), and
* JSON-lines raw-text corpora, one ``{"token": [...], "label": [...]}``
  record per line, as distributed with HTC benchmarks.

Taxonomies are ``parent child child ...`` lines (tab-separated when names
contain spaces).
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .sparse import SparseVector
from .tree import LabelTree, NodeKind, TreeError


class CorpusError(ValueError):
    """Malformed or inconsistent dataset input."""


class TaxonomyError(TreeError):
    pass


class CycleError(TaxonomyError):
    pass


@dataclass(frozen=True)
class Document:
    id: int
    labels: frozenset[int]
    text: tuple[str, ...] | None = None
    features: SparseVector | None = None

    def __post_init__(self) -> None:
        if self.text is None and self.features is None:
            raise CorpusError(f"document {self.id} has neither text nor features")
        if not isinstance(self.labels, frozenset):
            object.__setattr__(self, "labels", frozenset(self.labels))

    def with_labels(self, labels: Iterable[int]) -> Document:
        return Document(self.id, frozenset(labels), self.text, self.features)


@dataclass(frozen=True)
class Dataset:
    docs: tuple[Document, ...]
    label_vocab: tuple[str, ...]
    feature_dim: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "docs", tuple(self.docs))
        object.__setattr__(self, "label_vocab", tuple(self.label_vocab))
        n_labels = len(self.label_vocab)
        for doc in self.docs:
            if doc.labels and max(doc.labels) >= n_labels:
                raise CorpusError(f"document {doc.id} references label >= {n_labels}")
            if doc.features is not None and doc.features.max_index() >= self.feature_dim:
                raise CorpusError(
                    f"document {doc.id} has feature index >= {self.feature_dim}"
                )

    def __len__(self) -> int:
        return len(self.docs)

    @property
    def n_labels(self) -> int:
        return len(self.label_vocab)

    @property
    def has_features(self) -> bool:
        return all(d.features is not None for d in self.docs)

    @property
    def has_text(self) -> bool:
        return all(d.text is not None for d in self.docs)

    def label_sets(self) -> list[frozenset[int]]:
        return [d.labels for d in self.docs]

    def replace(self, docs: Sequence[Document] | None = None, **kw) -> Dataset:
        return Dataset(
            tuple(self.docs if docs is None else docs),
            kw.get("label_vocab", self.label_vocab),
            kw.get("feature_dim", self.feature_dim),
        )


@dataclass(frozen=True)
class DatasetStats:
    n_labels: int
    n_train: int
    n_val: int
    n_test: int
    avg_labels_per_doc: float = field(default=0.0)

    def row(self, name: str = "") -> str:
        cells = [
            f"{self.n_labels:,}",
            f"{self.n_train:,}",
            f"{self.n_val:,}" if self.n_val else "-",
            f"{self.n_test:,}",
            f"{self.avg_labels_per_doc:.2f}",
        ]
        return " & ".join([name, *cells]) if name else " & ".join(cells)


# Extreme Classification Repository format


def _parse_header(line: str, path: str | Path) -> tuple[int, int, int]:
    parts = line.split()
    if len(parts) != 3:
        raise CorpusError(f"{path}:1: header must be 'N D L', got {line.strip()!r}")
    try:
        n, d, l = (int(p) for p in parts)
    except ValueError:
        raise CorpusError(f"{path}:1: non-integer header {line.strip()!r}") from None
    if min(n, d, l) < 0:
        raise CorpusError(f"{path}:1: negative header value")
    return n, d, l


def _parse_xml_line(
    line: str, lineno: int, n_features: int, n_labels: int, path: str | Path
) -> tuple[frozenset[int], SparseVector]:
    body = line.rstrip("\r\n")
    if body[:1].isspace() or not body:
        label_part, rest = "", body.strip()
        tokens = rest.split() if rest else []
    else:
        tokens = body.split()
        if ":" in tokens[0]:
            label_part = ""
        else:
            label_part = tokens.pop(0)
    labels: set[int] = set()
    if label_part:
        for tok in label_part.split(","):
            try:
                lab = int(tok)
            except ValueError:
                raise CorpusError(f"{path}:{lineno}: bad label id {tok!r}") from None
            if not 0 <= lab < n_labels:
                raise CorpusError(
                    f"{path}:{lineno}: label id {lab} out of range (L={n_labels})"
                )
            labels.add(lab)
    feats: dict[int, float] = {}
    for tok in tokens:
        idx_s, sep, val_s = tok.partition(":")
        if not sep:
            raise CorpusError(f"{path}:{lineno}: bad feature token {tok!r}")
        try:
            idx, val = int(idx_s), float(val_s)
        except ValueError:
            raise CorpusError(f"{path}:{lineno}: bad feature token {tok!r}") from None
        if not 0 <= idx < n_features:
            raise CorpusError(
                f"{path}:{lineno}: feature index {idx} out of range (D={n_features})"
            )
        if idx in feats:
            raise CorpusError(f"{path}:{lineno}: duplicate feature index {idx}")
        if val < 0:
            raise CorpusError(f"{path}:{lineno}: negative feature weight {val}")
        feats[idx] = val
    return frozenset(labels), SparseVector.from_dict(feats)


def read_xml_header(path: str | Path) -> tuple[int, int, int]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
    if not header:
        raise CorpusError(f"{path}:1: missing header")
    return _parse_header(header, path)


def iter_xml_repo(path: str | Path) -> Iterator[Document]:
    """Stream documents of a repository-format file in file order."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if not header:
            raise CorpusError(f"{path}:1: missing header")
        n, d, l = _parse_header(header, path)
        count = 0
        for lineno, line in enumerate(fh, 2):
            if not line.strip() and not line.startswith(" "):
                continue
            labels, feats = _parse_xml_line(line, lineno, d, l, path)
            yield Document(count, labels, features=feats)
            count += 1
    if count != n:
        raise CorpusError(f"{path}: header declares {n} documents, found {count}")


def parse_xml_repo(path: str | Path, label_vocab: Sequence[str] | None = None) -> Dataset:
    """Read a repository-format file; label names default to ``"0".."L-1"``."""
    _, d, l = read_xml_header(path)
    docs = list(iter_xml_repo(path))
    if label_vocab is None:
        label_vocab = [str(i) for i in range(l)]
    elif len(label_vocab) != l:
        raise CorpusError(f"{path}: vocabulary has {len(label_vocab)} names, header L={l}")
    return Dataset(tuple(docs), tuple(label_vocab), d)


def write_xml_repo(ds: Dataset, path: str | Path) -> None:
    if not ds.has_features:
        raise CorpusError("write_xml_repo needs precomputed features on every document")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{len(ds.docs)} {ds.feature_dim} {ds.n_labels}\n")
        for doc in ds.docs:
            labels = ",".join(str(i) for i in sorted(doc.labels))
            feats = " ".join(
                f"{i}:{v:.6g}"
                for i, v in zip(doc.features.indices.tolist(), doc.features.values.tolist())
            )
            fh.write(f"{labels} {feats}".rstrip(" ") + "\n" if labels else f" {feats}\n")


def read_vocab(path: str | Path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh if line.rstrip("\n")]


def write_vocab(vocab: Sequence[str], path: str | Path) -> None:
    Path(path).write_text("".join(f"{v}\n" for v in vocab), encoding="utf-8")


# JSON-lines raw-text corpora


def parse_text_corpus(path: str | Path, label_vocab: Sequence[str] | None = None) -> Dataset:
    records: list[tuple[tuple[str, ...], list[str]]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                tokens = rec["token"] if "token" in rec else rec["tokens"]
                names = rec["label"] if "label" in rec else rec["labels"]
            except (json.JSONDecodeError, KeyError, TypeError):
                raise CorpusError(f"{path}:{lineno}: expected a record with token and label lists") from None
            if isinstance(tokens, str) or isinstance(names, str):
                raise CorpusError(f"{path}:{lineno}: token and label must be lists")
            records.append((tuple(str(t) for t in tokens), [str(n) for n in names]))
    if label_vocab is None:
        label_vocab = sorted({n for _, names in records for n in names})
    lookup = {name: i for i, name in enumerate(label_vocab)}
    docs = []
    for i, (tokens, names) in enumerate(records):
        try:
            labels = frozenset(lookup[n] for n in names)
        except KeyError as exc:
            raise CorpusError(f"{path}: record {i + 1} has unknown label {exc.args[0]!r}") from None
        docs.append(Document(i, labels, text=tokens))
    return Dataset(tuple(docs), tuple(label_vocab), 0)


def write_text_corpus(ds: Dataset, path: str | Path) -> None:
    if not ds.has_text:
        raise CorpusError("write_text_corpus needs raw text on every document")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for doc in ds.docs:
            rec = {
                "token": list(doc.text),
                "label": [ds.label_vocab[i] for i in sorted(doc.labels)],
            }
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


# taxonomies


def _split_taxonomy_line(line: str) -> list[str]:
    if "\t" in line:
        return [t.strip() for t in line.split("\t") if t.strip()]
    return line.split()


def parse_taxonomy(path: str | Path) -> LabelTree:
    children: dict[str, list[str]] = {}
    order: list[str] = []
    seen: set[str] = set()
    edges: list[tuple[str, str, int]] = []
    synthetic_flag = False

    def note(name: str) -> None:
        if name not in seen:
            seen.add(name)
            order.append(name)

    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\r\n")
            if line.startswith("#"):
                synthetic_flag = synthetic_flag or line.strip() == "# synthetic-root"
                continue
            tokens = _split_taxonomy_line(line)
            if not tokens:
                continue
            if len(tokens) < 2:
                raise TaxonomyError(f"{path}:{lineno}: parent {tokens[0]!r} lists no children")
            parent, kids = tokens[0], tokens[1:]
            note(parent)
            for kid in kids:
                note(kid)
                edges.append((parent, kid, lineno))
                children.setdefault(parent, []).append(kid)

    if not order:
        raise TaxonomyError(f"{path}: empty taxonomy")
    _check_acyclic(children, order, path)

    parent_of: dict[str, str] = {}
    for parent, kid, lineno in edges:
        if kid in parent_of:
            if parent_of[kid] == parent:
                raise TaxonomyError(f"{path}:{lineno}: {kid!r} listed twice under {parent!r}")
            raise TaxonomyError(
                f"{path}:{lineno}: {kid!r} has two parents ({parent_of[kid]!r}, {parent!r})"
            )
        parent_of[kid] = parent

    tops = [name for name in order if name not in parent_of]
    if len(tops) == 1:
        return LabelTree.from_children(tops[0], children, synthetic_root=synthetic_flag)
    root = "Root"
    while root in seen:
        root = f"_{root}"
    children[root] = tops
    return LabelTree.from_children(root, children, synthetic_root=True)


def _check_acyclic(children: dict[str, list[str]], order: list[str], path) -> None:
    state: dict[str, int] = {}
    for start in order:
        if state.get(start):
            continue
        stack = [(start, iter(children.get(start, ())))]
        state[start] = 1
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                state[node] = 2
                stack.pop()
            elif state.get(nxt) == 1:
                cycle = [n for n, _ in stack]
                cycle = cycle[cycle.index(nxt):] + [nxt]
                raise CycleError(f"{path}: cycle {' -> '.join(cycle)}")
            elif not state.get(nxt):
                state[nxt] = 1
                stack.append((nxt, iter(children.get(nxt, ()))))


def write_taxonomy(tree: LabelTree, path: str | Path) -> None:
    lines = ["# synthetic-root\n"] if tree.synthetic_root else []
    for node in range(tree.n_nodes):
        kids = tree.children(node)
        if kids:
            lines.append("\t".join([tree.names[node], *(tree.names[c] for c in kids)]) + "\n")
    if not lines or (tree.synthetic_root and len(lines) == 1):
        raise TaxonomyError("cannot write a root-only taxonomy")
    Path(path).write_text("".join(lines), encoding="utf-8")


def taxonomy_vocab(tree: LabelTree) -> list[str]:
    """Label names of every non-root node, in node-id order."""
    return [tree.names[i] for i in range(1, tree.n_nodes)]


# sampling and statistics


def _partial_shuffle(n: int, m: int, seed: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(seed))
    perm = np.arange(n)
    draws = rng.integers(np.arange(m), n) if m else np.zeros(0, dtype=np.int64)
    for i, j in enumerate(draws.tolist()):
        perm[i], perm[j] = perm[j], perm[i]
    return perm[:m]


def subsample(ds: Dataset, n_train: int, n_val: int, seed: int) -> tuple[Dataset, Dataset]:
    """Disjoint train/validation draws without replacement."""
    if n_train < 0 or n_val < 0:
        raise CorpusError("sample sizes must be non-negative")
    if n_train + n_val > len(ds.docs):
        raise CorpusError(
            f"cannot draw {n_train}+{n_val} documents from {len(ds.docs)}"
        )
    picked = _partial_shuffle(len(ds.docs), n_train + n_val, seed).tolist()
    train = [ds.docs[i] for i in picked[:n_train]]
    val = [ds.docs[i] for i in picked[n_train:]]
    return ds.replace(train), ds.replace(val)


def label_cardinality(datasets: Iterable[Dataset]) -> Fraction:
    total = 0
    count = 0
    for ds in datasets:
        for doc in ds.docs:
            total += len(doc.labels)
            count += 1
    return Fraction(total, count) if count else Fraction(0)


def _round_half_up(x: Fraction, places: int = 2) -> float:
    scale = 10**places
    return (x * scale + Fraction(1, 2)).__floor__() / scale


def stats(
    ds_train: Dataset, ds_val: Dataset | None = None, ds_test: Dataset | None = None
) -> DatasetStats:
    splits = [s for s in (ds_train, ds_val, ds_test) if s is not None]
    for s in splits[1:]:
        if s.label_vocab != ds_train.label_vocab:
            raise CorpusError("splits do not share a label vocabulary")
    return DatasetStats(
        n_labels=ds_train.n_labels,
        n_train=len(ds_train),
        n_val=len(ds_val) if ds_val is not None else 0,
        n_test=len(ds_test) if ds_test is not None else 0,
        avg_labels_per_doc=_round_half_up(label_cardinality(splits)),
    )


def label_frequencies(ds: Dataset) -> Counter:
    return Counter(lab for doc in ds.docs for lab in doc.labels)


def file_stats(
    train: str | Path, val: str | Path | None = None, test: str | Path | None = None
) -> DatasetStats:
    """Streaming :func:`stats` over repository-format split files."""
    n_labels = None
    counts = {}
    total = 0
    docs = 0
    for name, path in (("train", train), ("val", val), ("test", test)):
        if path is None:
            counts[name] = 0
            continue
        _, _, l = read_xml_header(path)
        if n_labels is not None and l != n_labels:
            raise CorpusError("splits do not share a label vocabulary")
        n_labels = l
        n = 0
        for doc in iter_xml_repo(path):
            total += len(doc.labels)
            n += 1
        counts[name] = n
        docs += n
    return DatasetStats(
        n_labels=n_labels or 0,
        n_train=counts["train"],
        n_val=counts["val"],
        n_test=counts["test"],
        avg_labels_per_doc=_round_half_up(Fraction(total, docs) if docs else Fraction(0)),
    )
