"""Agents, matrix-weighted digraphs and the structures derived from them.

Node 0 is always the leader; followers are ``1..N`` in the caller's
(original) labelling.  A :class:`SpanningTree` carries an internal
labelling in which every parent precedes its child, and every matrix
assembled here (incidence, block Laplacians) is laid out in that internal
order.  Use :meth:`SpanningTree.internal` / :meth:`SpanningTree.original`
to move between the two.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "ModelError",
    "UnreachableFollowerError",
    "AgentDynamics",
    "MatrixWeightedDigraph",
    "ValidatedSystem",
    "SpanningTree",
    "BlockLaplacian",
    "validate_system",
    "find_spanning_tree",
    "incidence_matrix",
    "dst_laplacian",
    "full_laplacian",
    "relabel_system",
    "ZERO_WEIGHT_TOL",
]

#: a weight block counts as nonzero when its largest entry exceeds this
ZERO_WEIGHT_TOL = 1e-12


class ModelError(ValueError):
    """Raised when agents or graph violate the model assumptions."""


class UnreachableFollowerError(ModelError):
    """Some follower has no directed path from the leader."""

    def __init__(self, unreachable):
        self.unreachable = sorted(unreachable)
        super().__init__(
            "unreachable follower {%s}: graph has no spanning tree rooted at "
            "the leader, consensus is impossible under a fixed topology"
            % ", ".join(str(i) for i in self.unreachable)
        )


def _frozen(a, ndim=2, name="matrix"):
    arr = np.array(a, dtype=float, copy=True)
    if arr.ndim != ndim:
        raise ModelError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ModelError(f"{name} has non-finite entries")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class AgentDynamics:
    """Linear agent ``x' = A x + B u``."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = _frozen(self.A, name="A")
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        B = _frozen(B, name="B")
        if A.shape[0] != A.shape[1]:
            raise ModelError(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise ModelError(
                f"B must have {A.shape[0]} rows to match A, got {B.shape[0]}"
            )
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True)
class MatrixWeightedDigraph:
    """Directed graph on ``node_count`` nodes with ``n x n`` edge weights.

    ``edges`` maps ``(j, i)`` -- information flowing *from* ``j`` *to*
    ``i`` -- onto the weight block ``W_ij``.
    """

    node_count: int
    edges: Mapping[tuple[int, int], np.ndarray]

    def __post_init__(self):
        if self.node_count < 2:
            raise ModelError("graph needs a leader and at least one follower")
        edges = {}
        n = None
        for (j, i), w in dict(self.edges).items():
            j, i = int(j), int(i)
            if not (0 <= j < self.node_count and 0 <= i < self.node_count):
                raise ModelError(f"edge ({j},{i}) references a node outside 0..{self.node_count - 1}")
            if i == j:
                raise ModelError(f"self-loop on node {i}")
            if i == 0:
                raise ModelError(f"follower-to-leader edge ({j},0) present")
            w = _frozen(w, name=f"weight W_{i}{j}")
            if w.shape[0] != w.shape[1]:
                raise ModelError(f"weight W_{i}{j} must be n×n, got {w.shape}")
            if n is None:
                n = w.shape[0]
            elif w.shape[0] != n:
                raise ModelError(f"weight W_{i}{j} is {w.shape}, expected {n}×{n}")
            if np.max(np.abs(w)) <= ZERO_WEIGHT_TOL:
                raise ModelError(f"zero weight on declared edge ({j},{i})")
            edges[(j, i)] = w
        object.__setattr__(self, "edges", edges)

    @classmethod
    def from_edges(cls, node_count: int, edges: Iterable[tuple[int, int, np.ndarray]]):
        """Build from ``(from, to, weight)`` triples; duplicates are rejected."""
        table = {}
        for j, i, w in edges:
            if (j, i) in table:
                raise ModelError(f"duplicate edge ({j},{i})")
            table[(j, i)] = w
        return cls(node_count, table)

    @property
    def N(self) -> int:
        return self.node_count - 1

    @property
    def weight_dim(self) -> int | None:
        for w in self.edges.values():
            return w.shape[0]
        return None

    def weight(self, i: int, j: int) -> np.ndarray | None:
        """``W_ij`` (edge ``j -> i``), or None if absent."""
        return self.edges.get((j, i))

    def in_neighbors(self, i: int) -> list[int]:
        return sorted(j for (j, k) in self.edges if k == i)

    def out_neighbors(self, j: int) -> list[int]:
        return sorted(i for (k, i) in self.edges if k == j)

    def leader_weight(self, i: int, n: int | None = None) -> np.ndarray:
        """``D_i``: the leader edge weight, zero when ``0 -> i`` is absent."""
        w = self.edges.get((0, i))
        if w is not None:
            return w
        n = n if n is not None else self.weight_dim
        return np.zeros((n, n))


@dataclass(frozen=True)
class ValidatedSystem:
    """Leader + followers + topology with consistent dimensions."""

    agents: tuple[AgentDynamics, ...]
    graph: MatrixWeightedDigraph
    n: int
    m: int

    @property
    def N(self) -> int:
        return len(self.agents) - 1

    @property
    def leader(self) -> AgentDynamics:
        return self.agents[0]

    def D(self, i: int) -> np.ndarray:
        return self.graph.leader_weight(i, self.n)

    def delta(self) -> np.ndarray:
        """Stacked leader couplings ``[D_1; ...; D_N]`` in original order."""
        return np.vstack([self.D(i) for i in range(1, self.N + 1)])

    def Delta(self) -> np.ndarray:
        return _block_diag([self.D(i) for i in range(1, self.N + 1)])


def validate_system(agents: Sequence[AgentDynamics], graph: MatrixWeightedDigraph) -> ValidatedSystem:
    """Check the modelling assumptions and record ``n`` and ``m``.

    Raises
    ------
    ModelError
        On any dimension mismatch, zero weight block, or
        follower-to-leader edge (the latter two are also caught when the
        graph is constructed).
    """
    agents = tuple(a if isinstance(a, AgentDynamics) else AgentDynamics(*a) for a in agents)
    if len(agents) < 2:
        raise ModelError("need a leader and at least one follower")
    if graph.node_count != len(agents):
        raise ModelError(
            f"graph has {graph.node_count} nodes but {len(agents)} agents were given"
        )
    n, m = agents[0].n, agents[0].m
    for k, a in enumerate(agents):
        if (a.n, a.m) != (n, m):
            raise ModelError(
                f"agent {k} has (n, m) = ({a.n}, {a.m}), leader has ({n}, {m})"
            )
    wd = graph.weight_dim
    if wd is not None and wd != n:
        raise ModelError(f"weight blocks are {wd}×{wd} but agents have n = {n}")
    for (j, i) in graph.edges:
        if i == 0:
            raise ModelError(f"follower-to-leader edge ({j},0) present")
    return ValidatedSystem(agents, graph, n, m)


@dataclass(frozen=True)
class SpanningTree:
    """Leader-rooted directed spanning tree.

    Attributes
    ----------
    parent : dict
        Original follower label -> original parent label (0 = leader).
    label_order : tuple
        Original follower labels in internal order; internal label of
        ``label_order[k]`` is ``k + 1``.  Parents always precede children.
    tree_edges : tuple
        ``(parent, child)`` pairs in original labels, in internal order.
    """

    parent: Mapping[int, int]
    label_order: tuple[int, ...]
    tree_edges: tuple[tuple[int, int], ...] = field(init=False)

    def __post_init__(self):
        parent = {int(k): int(v) for k, v in dict(self.parent).items()}
        order = tuple(int(i) for i in self.label_order)
        if sorted(order) != sorted(parent) or len(set(order)) != len(order):
            raise ModelError("label_order must be a permutation of the followers")
        pos = {0: 0, **{i: k + 1 for k, i in enumerate(order)}}
        for i in order:
            if parent[i] not in pos:
                raise ModelError(f"parent {parent[i]} of follower {i} is not a node")
            if pos[parent[i]] >= pos[i]:
                raise ModelError(f"follower {i} precedes its parent {parent[i]}")
        object.__setattr__(self, "parent", parent)
        object.__setattr__(self, "label_order", order)
        object.__setattr__(self, "tree_edges", tuple((parent[i], i) for i in order))

    @property
    def N(self) -> int:
        return len(self.label_order)

    def internal(self, i: int) -> int:
        """Original label -> internal label (leader stays 0)."""
        if i == 0:
            return 0
        return self.label_order.index(i) + 1

    def original(self, k: int) -> int:
        """Internal label -> original label."""
        return 0 if k == 0 else self.label_order[k - 1]

    def internal_parents(self) -> list[int]:
        """``k_i`` for internal ``i = 1..N``; satisfies ``k_i < i``."""
        return [self.internal(self.parent[i]) for i in self.label_order]

    def depth(self, i: int) -> int:
        d = 0
        while i != 0:
            i = self.parent[i]
            d += 1
        return d


def _bfs_order(children: Mapping[int, list[int]]) -> list[int]:
    order, queue = [], deque([0])
    while queue:
        v = queue.popleft()
        for c in sorted(children.get(v, ())):
            order.append(c)
            queue.append(c)
    return order


def find_spanning_tree(
    graph: MatrixWeightedDigraph, parents: Mapping[int, int] | None = None
) -> SpanningTree:
    """Leader-rooted DST of ``graph``.

    Without ``parents`` the tree is the breadth-first tree from node 0,
    expanding nodes in visitation order and their successors by ascending
    label; followers are numbered in visitation order.  ``parents`` pins a
    particular tree (e.g. the one a set of gains was designed for); every pinned
    edge must exist in the graph and the map must reach the leader from
    every follower.
    """
    followers = range(1, graph.node_count)
    if parents is None:
        seen, parent, queue = {0}, {}, deque([0])
        while queue:
            v = queue.popleft()
            for w in graph.out_neighbors(v):
                if w not in seen:
                    seen.add(w)
                    parent[w] = v
                    queue.append(w)
        missing = [i for i in followers if i not in seen]
        if missing:
            raise UnreachableFollowerError(missing)
    else:
        parent = {int(k): int(v) for k, v in dict(parents).items()}
        if sorted(parent) != list(followers):
            raise ModelError("pinned tree must give exactly one parent per follower")
        for i, p in parent.items():
            if (p, i) not in graph.edges:
                raise ModelError(f"pinned tree edge ({p},{i}) is not an edge of the graph")
    children: dict[int, list[int]] = {}
    for i, p in parent.items():
        children.setdefault(p, []).append(i)
    order = _bfs_order(children)
    if len(order) != graph.N:
        stranded = set(followers) - set(order)
        raise ModelError(f"pinned tree does not reach followers {sorted(stranded)} from the leader")
    return SpanningTree(parent, tuple(order))


def incidence_matrix(tree: SpanningTree) -> np.ndarray:
    """``P0``: column ``i`` has +1 at row ``k_i`` and -1 at row ``i`` (internal labels)."""
    N = tree.N
    P0 = np.zeros((N + 1, N))
    for i, k in enumerate(tree.internal_parents(), start=1):
        P0[k, i - 1] = 1.0
        P0[i, i - 1] = -1.0
    return P0


def _block_diag(blocks):
    if not blocks:
        return np.zeros((0, 0))
    rows = sum(b.shape[0] for b in blocks)
    cols = sum(b.shape[1] for b in blocks)
    out = np.zeros((rows, cols))
    r = c = 0
    for b in blocks:
        out[r:r + b.shape[0], c:c + b.shape[1]] = b
        r += b.shape[0]
        c += b.shape[1]
    return out


@dataclass(frozen=True)
class BlockLaplacian:
    """Follower block Laplacian with its leader couplings.

    ``L`` and ``Delta`` are ``Nn x Nn``, ``delta`` is ``Nn x n``; row
    blocks follow the internal order of the tree used to build them.
    """

    L: np.ndarray
    Delta: np.ndarray
    delta: np.ndarray
    n: int

    @property
    def N(self) -> int:
        return self.L.shape[0] // self.n

    def block(self, i: int, j: int) -> np.ndarray:
        """Block ``(i, j)`` of ``L`` with 1-based internal indices."""
        n = self.n
        return self.L[(i - 1) * n:i * n, (j - 1) * n:j * n]

    def Delta_block(self, i: int) -> np.ndarray:
        n = self.n
        return self.Delta[(i - 1) * n:i * n, (i - 1) * n:i * n]


def dst_laplacian(tree: SpanningTree, graph: MatrixWeightedDigraph) -> BlockLaplacian:
    """Laplacian of the tree-only protocol.

    A follower whose parent is another follower gets ``W_{i,k_i}`` on the
    diagonal and ``-W_{i,k_i}`` at its parent; a leader-rooted follower has
    a zero Laplacian row and its ``D_i`` in ``Delta``/``delta``.  A leader
    edge into a follower with a follower parent is not used.
    """
    n = graph.weight_dim
    N = tree.N
    L = np.zeros((N * n, N * n))
    Delta = np.zeros((N * n, N * n))
    delta = np.zeros((N * n, n))
    for i, k in enumerate(tree.internal_parents(), start=1):
        w = graph.weight(tree.original(i), tree.original(k))
        rows = slice((i - 1) * n, i * n)
        if k == 0:
            Delta[rows, rows] = w
            delta[rows] = w
        else:
            L[rows, rows] = w
            L[rows, (k - 1) * n:k * n] = -w
    return BlockLaplacian(L, Delta, delta, n)


def full_laplacian(graph: MatrixWeightedDigraph, tree: SpanningTree | None = None) -> BlockLaplacian:
    """Laplacian of the all-neighbours protocol.

    Row blocks follow ``tree``'s internal order when given, else the
    original follower labels.
    """
    n = graph.weight_dim
    N = graph.N
    order = tree.label_order if tree is not None else tuple(range(1, N + 1))
    pos = {i: k for k, i in enumerate(order)}
    L = np.zeros((N * n, N * n))
    Delta = np.zeros((N * n, N * n))
    delta = np.zeros((N * n, n))
    for (j, i), w in graph.edges.items():
        a = pos[i]
        rows = slice(a * n, (a + 1) * n)
        if j == 0:
            Delta[rows, rows] = w
            delta[rows] = w
        else:
            b = pos[j]
            L[rows, rows] += w
            L[rows, b * n:(b + 1) * n] = -w
    return BlockLaplacian(L, Delta, delta, n)


def relabel_system(system: ValidatedSystem, order: Sequence[int]) -> tuple[ValidatedSystem, dict[int, int]]:
    """Renumber followers so that ``order[k]`` becomes ``k + 1``.

    Returns the renumbered system and the map new label -> old label.
    """
    order = [int(i) for i in order]
    if sorted(order) != list(range(1, system.N + 1)):
        raise ModelError("order must be a permutation of the followers")
    new_of = {0: 0, **{old: k + 1 for k, old in enumerate(order)}}
    agents = (system.agents[0],) + tuple(system.agents[i] for i in order)
    edges = {(new_of[j], new_of[i]): w for (j, i), w in system.graph.edges.items()}
    graph = MatrixWeightedDigraph(system.graph.node_count, edges)
    back = {v: k for k, v in new_of.items()}
    return ValidatedSystem(agents, graph, system.n, system.m), back
