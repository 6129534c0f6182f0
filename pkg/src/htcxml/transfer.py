"""Dataset conversion between taxonomy-based and flat label spaces.

Label ids of a tree-derived vocabulary are ``node_id - 1``: every non-root
node in breadth-first order.  Leaf-only vocabularies list just the leaves,
also in node order.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .corpus import CorpusError, Dataset, taxonomy_vocab
from .metrics import RankedPrediction
from .tree import LabelTree, NodeKind


class TransferMode(str, enum.Enum):
    FULL = "full"
    LEAF = "leaf"


@dataclass
class TransferReport:
    mode: TransferMode
    n_docs: int = 0
    n_empty: int = 0
    n_labels_in: int = 0
    n_labels_out: int = 0


def _node_ids(ds: Dataset, tree: LabelTree) -> list[int]:
    index = tree.index
    missing = [name for name in ds.label_vocab if name not in index]
    if missing:
        raise CorpusError(
            f"{len(missing)} labels are absent from the taxonomy, e.g. {missing[0]!r}"
        )
    return [index[name] for name in ds.label_vocab]


def flatten_report(
    ds: Dataset, tree: LabelTree, mode: TransferMode | str = TransferMode.FULL
) -> tuple[Dataset, TransferReport]:
    mode = TransferMode(mode)
    node_of = _node_ids(ds, tree)
    report = TransferReport(mode, len(ds.docs), n_labels_in=ds.n_labels)
    docs = []
    if mode is TransferMode.FULL:
        vocab = taxonomy_vocab(tree)
        for doc in ds.docs:
            closed = tree.closure(node_of[l] for l in doc.labels)
            docs.append(doc.with_labels(n - 1 for n in closed))
    else:
        leaves = tree.leaves
        vocab = [tree.names[n] for n in leaves]
        leaf_id = {n: i for i, n in enumerate(leaves)}
        for doc in ds.docs:
            kept = {leaf_id[node_of[l]] for l in doc.labels if node_of[l] in leaf_id}
            docs.append(doc.with_labels(kept))
    report.n_empty = sum(1 for d in docs if not d.labels)
    report.n_labels_out = len(vocab)
    return Dataset(tuple(docs), tuple(vocab), ds.feature_dim), report


def flatten(ds: Dataset, tree: LabelTree, mode: TransferMode | str = TransferMode.FULL) -> Dataset:
    """Replace the taxonomy by a flat label space.

    Full mode closes each label set under ancestors; leaf mode keeps only
    labels that are tree leaves. The root is never a label.
    """
    return flatten_report(ds, tree, mode)[0]


def inject_hierarchy(ds: Dataset, tree: LabelTree) -> tuple[Dataset, LabelTree]:
    """Add meta-label ancestors of every true label to each document."""
    leaf_names = {tree.names[n] for n in tree.leaves}
    if leaf_names != set(ds.label_vocab) or len(tree.leaves) != ds.n_labels:
        raise CorpusError("tree leaves do not match the dataset label vocabulary")
    node_of = _node_ids(ds, tree)
    docs = [
        doc.with_labels(n - 1 for n in tree.closure(node_of[l] for l in doc.labels))
        for doc in ds.docs
    ]
    return Dataset(tuple(docs), tuple(taxonomy_vocab(tree)), ds.feature_dim), tree


def strip_meta(
    pred: RankedPrediction, tree: LabelTree, source_vocab=None
) -> RankedPrediction:
    """Drop meta-label entries from a ranking over a tree-derived vocabulary.

    With ``source_vocab`` the surviving ids are mapped back into that
    vocabulary by name; ties are then re-ordered by the new ids.
    """
    kinds = tree.kinds
    kept = [(l, s) for l, s in zip(pred.labels, pred.scores) if kinds[l + 1] is not NodeKind.META]
    if source_vocab is None:
        return RankedPrediction(tuple(l for l, _ in kept), tuple(s for _, s in kept))
    lookup = {name: i for i, name in enumerate(source_vocab)}
    return RankedPrediction.from_scores((lookup[tree.names[l + 1]], s) for l, s in kept)


def strip_meta_labels(labels, tree: LabelTree, source_vocab=None) -> frozenset[int]:
    """Set version of :func:`strip_meta` for hard predictions or truths."""
    real = [l for l in labels if tree.kinds[l + 1] is not NodeKind.META]
    if source_vocab is None:
        return frozenset(real)
    lookup = {name: i for i, name in enumerate(source_vocab)}
    return frozenset(lookup[tree.names[l + 1]] for l in real)
