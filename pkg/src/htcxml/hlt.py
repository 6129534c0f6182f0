"""Hierarchical label trees from recursive balanced spherical k-means.

Label embeddings are L2-normalized inside the clusterer, so the objective is
the sum over points of ``1 - cos(x, centroid)``.  Each assignment step ranks
points by the margin between their best and second-best centroid and hands
them, in that order, to the most similar centroid that still has room.
Exactly ``n mod k`` clusters are allowed to reach ``ceil(n/k)``; all others
stop at ``floor(n/k)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .features import LabelFeatureMatrix
from .sparse import SparseVector, to_csr
from .tree import LabelTree, NodeKind, TreeError

log = logging.getLogger(__name__)

DEFAULT_MAX_ITERS = 50
_DENSE_CENTROID_LIMIT = 1 << 25
_CANDIDATES = 32
_CHUNK_ENTRIES = 1 << 23


class ClusteringError(ValueError):
    pass


class SegmentationError(ValueError):
    pass


@dataclass
class KMeansResult:
    assignment: np.ndarray
    objective: list[float]
    n_iter: int
    converged: bool

    def sizes(self, k: int) -> np.ndarray:
        return np.bincount(self.assignment, minlength=k)


def _as_csr(points) -> sp.csr_matrix:
    if sp.issparse(points):
        return sp.csr_matrix(points, dtype=np.float64)
    points = list(points)
    dim = max((p.max_index() + 1 for p in points), default=0)
    return to_csr(points, max(dim, 1))


def _row_normalize(x: sp.csr_matrix) -> sp.csr_matrix:
    x = x.copy()
    norms = np.sqrt(np.asarray(x.multiply(x).sum(axis=1)).ravel())
    scale = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)
    x.data = x.data * np.repeat(scale, np.diff(x.indptr))
    return x


class _Centroids:
    """Unit-norm centroid rows, dense when small enough, CSR otherwise."""

    def __init__(self, rows: sp.csr_matrix, dense: bool):
        self.dense = dense
        self.rows = rows.toarray() if dense else sp.csr_matrix(rows)

    def scores(self, x: sp.csr_matrix) -> np.ndarray:
        if self.dense:
            return np.asarray(x @ self.rows.T)
        return (x @ self.rows.T).toarray()

    def update(self, x: sp.csr_matrix, assignment: np.ndarray, k: int) -> _Centroids:
        n = x.shape[0]
        member = sp.csr_matrix(
            (np.ones(n), (assignment, np.arange(n))), shape=(k, n)
        )
        member.sort_indices()
        sums = (member @ x).tocsr()
        sums.sort_indices()
        norms = np.sqrt(np.asarray(sums.multiply(sums).sum(axis=1)).ravel())
        unit = _row_normalize(sums)
        if self.dense:
            new = unit.toarray()
            empty = norms == 0
            new[empty] = self.rows[empty]
            out = _Centroids.__new__(_Centroids)
            out.dense, out.rows = True, new
            return out
        if np.any(norms == 0):
            lil = unit.tolil()
            old = self.rows.tolil()
            for j in np.flatnonzero(norms == 0):
                lil[j] = old[j]
            unit = lil.tocsr()
        out = _Centroids.__new__(_Centroids)
        out.dense, out.rows = False, unit
        return out


def _kmeanspp(x: sp.csr_matrix, k: int, rng: np.random.Generator, dense: bool) -> _Centroids:
    n = x.shape[0]
    first = int(rng.integers(n))
    chosen = [first]
    dist = np.clip(1.0 - np.asarray(x @ x[first].T.toarray()).ravel(), 0.0, None)
    dist[first] = 0.0
    taken = np.zeros(n, dtype=bool)
    taken[first] = True
    for _ in range(1, k):
        weight = dist * dist
        weight[taken] = 0.0
        total = weight.sum()
        if total > 0:
            cum = np.cumsum(weight)
            pick = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
            pick = min(pick, n - 1)
            if taken[pick]:
                pick = int(np.flatnonzero(~taken & (weight > 0))[0])
        else:
            free = np.flatnonzero(~taken)
            pick = int(free[rng.integers(free.size)])
        chosen.append(pick)
        taken[pick] = True
        d_new = np.clip(1.0 - np.asarray(x @ x[pick].T.toarray()).ravel(), 0.0, None)
        np.minimum(dist, d_new, out=dist)
        dist[pick] = 0.0
    return _Centroids(x[chosen], dense)


def _scan(
    x: sp.csr_matrix, cents: _Centroids, k: int, current: np.ndarray | None
) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Top candidate centroids per point and, optionally, the current sims."""
    n = x.shape[0]
    m = k if k <= 2 * _CANDIDATES else _CANDIDATES
    cand = np.empty((n, m), dtype=np.int64)
    cand_sim = np.empty((n, m))
    cur = np.empty(n) if current is not None else None
    step = max(1, _CHUNK_ENTRIES // k)
    for lo in range(0, n, step):
        hi = min(n, lo + step)
        sims = cents.scores(x[lo:hi])
        rows = np.arange(hi - lo)
        if current is not None:
            cur[lo:hi] = sims[rows, current[lo:hi]]
        if m == k:
            idx = np.argsort(-sims, axis=1, kind="stable")
        else:
            part = np.argpartition(-sims, m - 1, axis=1)[:, :m]
            part.sort(axis=1)
            vals = np.take_along_axis(sims, part, axis=1)
            inner = np.argsort(-vals, axis=1, kind="stable")
            idx = np.take_along_axis(part, inner, axis=1)
        cand[lo:hi] = idx
        cand_sim[lo:hi] = np.take_along_axis(sims, idx, axis=1)
    return cand, cand_sim, cur


def _balanced_assign(
    x: sp.csr_matrix, cents: _Centroids, k: int, cand: np.ndarray, cand_sim: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    n = x.shape[0]
    floor, bonus = divmod(n, k)
    if cand.shape[1] > 1:
        margin = cand_sim[:, 0] - cand_sim[:, 1]
    else:
        margin = np.zeros(n)
    order = np.argsort(-margin, kind="stable").tolist()
    sizes = [0] * k
    assignment = np.empty(n, dtype=np.int64)
    got = np.empty(n)
    cand_l = cand.tolist()
    sim_l = cand_sim.tolist()
    for p in order:
        for c, s in zip(cand_l[p], sim_l[p]):
            sz = sizes[c]
            if sz < floor or (sz == floor and bonus):
                break
        else:
            row = cents.scores(x[p]).ravel()
            size_arr = np.array(sizes)
            full = (size_arr > floor) | ((size_arr == floor) & (bonus == 0))
            row = np.where(full, -np.inf, row)
            c = int(np.argmax(row))
            s = float(row[c])
        if sizes[c] == floor:
            bonus -= 1
        sizes[c] += 1
        assignment[p] = c
        got[p] = s
    return assignment, got


def balanced_kmeans(
    points: Sequence[SparseVector] | sp.spmatrix,
    k: int,
    seed: int = 0,
    max_iters: int = DEFAULT_MAX_ITERS,
) -> KMeansResult:
    """Cluster ``points`` into ``k`` groups whose sizes differ by at most one.

    The returned objective trace holds ``sum(1 - cos)`` after each accepted
    centroid update and never increases; an assignment step that would not
    improve the objective ends the run.
    """
    x = _row_normalize(_as_csr(points))
    n = x.shape[0]
    if n == 0:
        raise ClusteringError("no points to cluster")
    if k < 1:
        raise ClusteringError(f"k must be >= 1, got {k}")
    if k > n:
        raise ClusteringError(f"k={k} exceeds the number of points ({n})")
    dense = x.shape[1] * k <= _DENSE_CENTROID_LIMIT
    if k == 1:
        assignment = np.zeros(n, dtype=np.int64)
        cents = _Centroids(sp.csr_matrix((1, x.shape[1])), dense).update(x, assignment, 1)
        _, _, cur = _scan(x, cents, 1, assignment)
        return KMeansResult(assignment, [float(np.sum(1.0 - cur))], 0, True)

    rng = np.random.default_rng(seed)
    cents = _kmeanspp(x, k, rng, dense)
    assignment: np.ndarray | None = None
    prev: tuple[np.ndarray, _Centroids] | None = None
    history: list[float] = []
    converged = False
    n_iter = 0
    while True:
        cand, cand_sim, cur = _scan(x, cents, k, assignment)
        if assignment is not None:
            obj = float(np.sum(1.0 - cur))
            if history and obj > history[-1]:
                assignment, cents = prev
                break
            history.append(obj)
        if n_iter >= max_iters and assignment is not None:
            break
        new_assignment, new_sim = _balanced_assign(x, cents, k, cand, cand_sim)
        n_iter += 1
        if assignment is not None:
            if np.array_equal(new_assignment, assignment):
                converged = True
                break
            if float(np.sum(1.0 - new_sim)) > history[-1]:
                break
        prev = (assignment, cents)
        assignment = new_assignment
        cents = cents.update(x, assignment, k)
    return KMeansResult(assignment, history, n_iter, converged)


def cosine_objective(points, assignment: np.ndarray, k: int) -> float:
    """Objective of an assignment against its own normalized-mean centroids."""
    x = _row_normalize(_as_csr(points))
    total = 0.0
    for j in range(k):
        members = x[np.flatnonzero(assignment == j)]
        s = np.asarray(members.sum(axis=0)).ravel()
        norm = np.linalg.norm(s)
        c = s / norm if norm > 0 else s
        total += float(np.sum(1.0 - members @ c))
    return total


# tree construction


@dataclass
class BuildReport:
    plan: list[int]
    level_sizes: list[int] = field(default_factory=list)
    early_stops: list[tuple[str, int, int]] = field(default_factory=list)
    n_leaves: int = 0
    leaf_parents: int = 0

    @property
    def leaf_fanout(self) -> float:
        """Mean number of leaves under each node that holds leaves."""
        return self.n_leaves / self.leaf_parents if self.leaf_parents else 0.0

    def level_fanouts(self) -> list[float]:
        sizes = [1, *self.level_sizes]
        return [b / a for a, b in zip(sizes, sizes[1:])]

    def to_dict(self) -> dict:
        return {
            "plan": self.plan,
            "level_sizes": self.level_sizes,
            "level_fanouts": [round(f, 4) for f in self.level_fanouts()],
            "leaf_fanout": round(self.leaf_fanout, 4),
            "early_stops": [list(e) for e in self.early_stops],
        }


def _group_seed(seed: int, key: tuple[int, ...]) -> int:
    return int(np.random.SeedSequence([seed, len(key), *key]).generate_state(1)[0])


def _split(
    x: sp.csr_matrix, ids: np.ndarray, nonzero: np.ndarray, k: int, seed: int, max_iters: int
) -> list[np.ndarray]:
    """Balanced clustering of non-zero rows, then min-size filling with zero rows."""
    nz = ids[nonzero[ids]]
    zero = ids[~nonzero[ids]]
    groups: list[list[int]] = [[] for _ in range(k)]
    if nz.size:
        kk = min(k, nz.size)
        res = balanced_kmeans(x[nz], kk, seed=seed, max_iters=max_iters)
        for lab, c in zip(nz.tolist(), res.assignment.tolist()):
            groups[c].append(lab)
    for lab in np.sort(zero).tolist():
        target = min(range(k), key=lambda j: (len(groups[j]), j))
        groups[target].append(lab)
    return [np.array(sorted(g), dtype=np.int64) for g in groups]


def build_hlt_report(
    labels: LabelFeatureMatrix,
    plan: Sequence[int],
    seed: int = 0,
    max_iters: int = DEFAULT_MAX_ITERS,
    label_names: Sequence[str] | None = None,
) -> tuple[LabelTree, BuildReport]:
    plan = [int(k) for k in plan]
    if not plan:
        raise ClusteringError("branching plan must be non-empty")
    if any(k < 1 for k in plan):
        raise ClusteringError("branching factors must be >= 1")
    n_labels = labels.n_labels
    if plan[0] > n_labels:
        raise ClusteringError(f"k1={plan[0]} exceeds the label count ({n_labels})")
    names = list(label_names or labels.label_vocab or [str(i) for i in range(n_labels)])
    if len(names) != n_labels:
        raise ClusteringError("label_names must match the label count")

    x = labels.matrix.tocsr()
    nonzero = np.diff(x.indptr) > 0
    report = BuildReport(plan)

    children: dict[str, list[str]] = {}
    kinds: dict[str, NodeKind] = {}
    root = "__root__"
    groups: list[tuple[tuple[int, ...], str, np.ndarray]] = [
        ((), root, np.arange(n_labels, dtype=np.int64))
    ]
    finals: list[tuple[str, np.ndarray]] = []
    for level, k in enumerate(plan, 1):
        nxt = []
        for key, name, ids in groups:
            if ids.size < k:
                report.early_stops.append((name, int(ids.size), k))
                finals.append((name, ids))
                continue
            parts = _split(x, ids, nonzero, k, _group_seed(seed, key), max_iters)
            kid_names = []
            for j, part in enumerate(parts):
                ckey = (*key, j)
                cname = "__meta__" + ".".join(map(str, ckey))
                kinds[cname] = NodeKind.META
                kid_names.append(cname)
                nxt.append((ckey, cname, part))
            children[name] = kid_names
        report.level_sizes.append(len(nxt))
        groups = nxt
        log.debug("level %d: %d meta-labels", level, len(nxt))
    finals.extend((name, ids) for _, name, ids in groups)

    meta_names = set(kinds)
    clash = meta_names.intersection(names) | ({root} & set(names))
    if clash:
        raise TreeError(f"label names collide with synthetic node names: {sorted(clash)[:3]}")
    for name, ids in finals:
        if ids.size:
            children.setdefault(name, []).extend(names[i] for i in ids.tolist())
            report.leaf_parents += 1
    report.n_leaves = n_labels
    tree = LabelTree.from_children(root, children, kinds)
    return tree, report


def build_hlt(
    labels: LabelFeatureMatrix,
    plan: Sequence[int],
    seed: int = 0,
    max_iters: int = DEFAULT_MAX_ITERS,
    label_names: Sequence[str] | None = None,
) -> LabelTree:
    return build_hlt_report(labels, plan, seed, max_iters, label_names)[0]


# segmentation


def _induced(tree: LabelTree, nodes: list[int]) -> LabelTree:
    nodes = sorted(nodes)
    rank = {old: new for new, old in enumerate(nodes)}
    return LabelTree(
        tuple(tree.names[i] for i in nodes),
        tuple(tree.kinds[i] for i in nodes),
        tuple(-1 if i == 0 else rank[tree.parents[i]] for i in nodes),
        tree.synthetic_root,
    )


def _subtree_nodes(tree: LabelTree, node: int) -> list[int]:
    out = []
    stack = [node]
    while stack:
        cur = stack.pop()
        out.append(cur)
        stack.extend(tree.children(cur))
    return out


def segment_tree(tree: LabelTree, max_nodes: int = 512) -> list[LabelTree]:
    """Split a tree into sub-trees of at most ``max_nodes`` nodes each.

    Sibling subtrees are packed left to right under their shared ancestor
    path; a child subtree too big to fit is descended into.  Every leaf ends
    up in exactly one sub-tree, below its original ancestor path.
    """
    if tree.depth + 1 > max_nodes:
        raise SegmentationError(
            f"a root-to-leaf path has {tree.depth + 1} nodes, budget is {max_nodes}"
        )
    if tree.n_nodes <= max_nodes:
        return [tree]
    sizes = tree.subtree_sizes
    out: list[LabelTree] = []

    def emit(path: list[int], picked: list[int]) -> None:
        nodes = list(path)
        for child in picked:
            nodes.extend(_subtree_nodes(tree, child))
        out.append(_induced(tree, nodes))

    def visit(node: int, path: list[int]) -> None:
        base = len(path)
        picked: list[int] = []
        used = 0
        for child in tree.children(node):
            s = sizes[child]
            if base + s <= max_nodes:
                if base + used + s > max_nodes:
                    emit(path, picked)
                    picked, used = [], 0
                picked.append(child)
                used += s
            else:
                if picked:
                    emit(path, picked)
                    picked, used = [], 0
                visit(child, [*path, child])
        if picked:
            emit(path, picked)

    visit(0, [0])
    return out
