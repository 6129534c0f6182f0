"""Rooted label trees shared by semantic taxonomies and synthetic HLTs.

Nodes are numbered breadth-first: the root is node 0 and every node's parent
has a smaller id than the node itself, so children lists come out ordered by
id and the structure is acyclic by construction.

Node-file layout, one line per node::

    node_id parent_id kind name

with ``parent_id = -1`` for the root and ``kind`` one of ``root``, ``label``,
``meta``. The name is the remainder of the line and may contain spaces.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence


class NodeKind(str, enum.Enum):
    ROOT = "root"
    REAL = "label"
    META = "meta"


class TreeError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class LabelTree:
    names: tuple[str, ...]
    kinds: tuple[NodeKind, ...]
    parents: tuple[int, ...]
    synthetic_root: bool = False
    _children: tuple[tuple[int, ...], ...] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        n = len(self.names)
        if n == 0:
            raise TreeError("a tree needs at least a root node")
        if len(self.kinds) != n or len(self.parents) != n:
            raise TreeError("names, kinds and parents must have equal length")
        if self.parents[0] != -1 or self.kinds[0] is not NodeKind.ROOT:
            raise TreeError("node 0 must be the root")
        kids: list[list[int]] = [[] for _ in range(n)]
        for i in range(1, n):
            p = self.parents[i]
            if not 0 <= p < i:
                raise TreeError(f"node {i} has parent {p}; parents must precede children")
            if self.kinds[i] is NodeKind.ROOT:
                raise TreeError(f"node {i} is a second root")
            kids[p].append(i)
        if len(set(self.names)) != n:
            raise TreeError("node names must be unique")
        object.__setattr__(self, "_children", tuple(tuple(c) for c in kids))

    # construction

    @classmethod
    def from_children(
        cls,
        root_name: str,
        children: dict[str, Sequence[str]],
        kinds: dict[str, NodeKind] | None = None,
        synthetic_root: bool = False,
    ) -> LabelTree:
        """Number a name-keyed child map breadth-first from ``root_name``."""
        kinds = kinds or {}
        names = [root_name]
        node_kinds = [NodeKind.ROOT]
        parents = [-1]
        queue = deque([(root_name, 0)])
        while queue:
            name, nid = queue.popleft()
            for child in children.get(name, ()):
                cid = len(names)
                names.append(child)
                node_kinds.append(kinds.get(child, NodeKind.REAL))
                parents.append(nid)
                queue.append((child, cid))
        return cls(tuple(names), tuple(node_kinds), tuple(parents), synthetic_root)

    # structure queries

    @property
    def n_nodes(self) -> int:
        return len(self.names)

    def children(self, node: int) -> tuple[int, ...]:
        return self._children[node]

    def is_leaf(self, node: int) -> bool:
        return node != 0 and not self._children[node]

    @cached_property
    def leaves(self) -> tuple[int, ...]:
        return tuple(i for i in range(1, self.n_nodes) if not self._children[i])

    @cached_property
    def levels(self) -> tuple[int, ...]:
        lv = [0] * self.n_nodes
        for i in range(1, self.n_nodes):
            lv[i] = lv[self.parents[i]] + 1
        return tuple(lv)

    @property
    def depth(self) -> int:
        return max(self.levels)

    @cached_property
    def index(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.names)}

    @cached_property
    def subtree_sizes(self) -> tuple[int, ...]:
        size = [1] * self.n_nodes
        for i in range(self.n_nodes - 1, 0, -1):
            size[self.parents[i]] += size[i]
        return tuple(size)

    def path(self, node: int) -> list[int]:
        """Node ids from the root down to ``node`` inclusive."""
        out = [node]
        while node != 0:
            node = self.parents[node]
            out.append(node)
        out.reverse()
        return out

    def ancestors(self, node: int) -> list[int]:
        """Strict ancestors of ``node`` excluding the root, nearest last."""
        return self.path(node)[1:-1]

    def closure(self, nodes: Iterable[int]) -> set[int]:
        """Ancestor closure of a node set, root excluded."""
        out: set[int] = set()
        for node in nodes:
            while node != 0 and node not in out:
                out.add(node)
                node = self.parents[node]
        return out

    def level_counts(self) -> list[int]:
        """Number of nodes on each level below the root (level 1 first)."""
        counts = [0] * self.depth
        for lv in self.levels[1:]:
            counts[lv - 1] += 1
        return counts

    def meta_nodes(self) -> tuple[int, ...]:
        return tuple(i for i, k in enumerate(self.kinds) if k is NodeKind.META)

    def real_nodes(self) -> tuple[int, ...]:
        return tuple(i for i, k in enumerate(self.kinds) if k is NodeKind.REAL)

    def children_map(self) -> dict[str, list[str]]:
        return {
            self.names[i]: [self.names[c] for c in kids]
            for i, kids in enumerate(self._children)
            if kids
        }

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LabelTree):
            return NotImplemented
        return (
            self.names == other.names
            and self.kinds == other.kinds
            and self.parents == other.parents
            and self.synthetic_root == other.synthetic_root
        )

    def __hash__(self) -> int:
        return hash((self.names, self.parents))


def write_tree(tree: LabelTree, path: str | Path) -> None:
    lines = [
        f"{i} {tree.parents[i]} {tree.kinds[i].value} {tree.names[i]}\n"
        for i in range(tree.n_nodes)
    ]
    if tree.synthetic_root:
        lines.insert(0, "# synthetic-root\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_tree(path: str | Path) -> LabelTree:
    names: list[str] = []
    kinds: list[NodeKind] = []
    parents: list[int] = []
    synthetic = False
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                synthetic = synthetic or line.strip() == "# synthetic-root"
                continue
            parts = line.split(" ", 3)
            if len(parts) != 4:
                raise TreeError(f"{path}:{lineno}: expected 'node_id parent_id kind name'")
            try:
                nid, pid = int(parts[0]), int(parts[1])
                kind = NodeKind(parts[2])
            except ValueError as exc:
                raise TreeError(f"{path}:{lineno}: {exc}") from None
            if nid != len(names):
                raise TreeError(f"{path}:{lineno}: node ids must be consecutive from 0")
            names.append(parts[3])
            kinds.append(kind)
            parents.append(pid)
    return LabelTree(tuple(names), tuple(kinds), tuple(parents), synthetic)
