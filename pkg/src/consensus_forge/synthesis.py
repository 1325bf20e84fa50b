"""Gain design and the two consensus criteria.

The tree protocol is decided exactly: the closed loop is block lower
triangular in tree order, so consensus holds iff every diagonal block
``A_i - B_i G_i - B_i K_i W_eff,i`` and the leader tail ``L1 Dbar L3`` are
Hurwitz.  The all-neighbours protocol is checked through block
Gerschgorin regions, a sufficient test, with a direct eigenvalue test of
``M'`` reported beside it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .model import SpanningTree, ValidatedSystem
from .reduction import (
    DEFAULT_HURWITZ_MARGIN,
    HurwitzResult,
    is_hurwitz,
    numerical_rank,
    reduce_system,
)

__all__ = [
    "DesignError",
    "GainSet",
    "BlockVerdict",
    "GerschgorinVerdict",
    "CriterionReport",
    "effective_weight",
    "controllability_matrix",
    "place_poles",
    "design_K_dst",
    "design_gains",
    "diagonal_block",
    "check_theorem1",
    "row_sum_norms",
    "inverse_row_norm",
    "gerschgorin_block",
    "radius_terms",
    "gerschgorin_radius",
    "region_clear_of_rhp",
    "check_theorem2",
    "DEFAULT_GRID",
]

DEFAULT_GRID = 400
_MAX_PROJECTION_TRIALS = 32
_WEIGHT_COND_LIMIT = 1e12


class DesignError(ValueError):
    """Gain synthesis is infeasible along the requested route."""


@dataclass(frozen=True)
class GainSet:
    """Per-follower gains; ``G[i-1]`` and ``K[i-1]`` belong to follower ``i``."""

    G: tuple[np.ndarray, ...]
    K: tuple[np.ndarray, ...]

    def __post_init__(self):
        G = tuple(np.array(g, dtype=float) for g in self.G)
        K = tuple(np.array(k, dtype=float) for k in self.K)
        if len(G) != len(K):
            raise ValueError(f"{len(G)} G gains but {len(K)} K gains")
        shapes = {g.shape for g in G + K}
        if len(shapes) > 1:
            raise ValueError(f"inconsistent gain shapes {sorted(shapes)}")
        for g in G + K:
            if g.ndim != 2:
                raise ValueError(f"gains must be m×n matrices, got shape {g.shape}")
            if not np.all(np.isfinite(g)):
                raise ValueError("gains must be finite")
            g.flags.writeable = False
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "K", K)

    @classmethod
    def zeros(cls, N, n, m):
        return cls([np.zeros((m, n))] * N, [np.zeros((m, n))] * N)

    @property
    def N(self):
        return len(self.G)

    def with_K(self, i, K_i):
        """Copy with follower ``i``'s ``K`` replaced."""
        K = list(self.K)
        K[i - 1] = np.asarray(K_i, float)
        return GainSet(self.G, K)

    def to_dict(self):
        return {"G": [g.tolist() for g in self.G], "K": [k.tolist() for k in self.K]}


def effective_weight(tree: SpanningTree, graph, i: int) -> np.ndarray:
    """Weight follower ``i`` applies to its tree parent's relative state.

    ``W_{i,k_i}`` for a follower parent, ``D_i`` for the leader; never
    their sum.
    """
    w = graph.weight(i, tree.parent[i])
    if w is None:
        raise ValueError(f"tree edge ({tree.parent[i]},{i}) missing from graph")
    return w


def controllability_matrix(A, B):
    A = np.asarray(A, float)
    B = np.asarray(B, float).reshape(A.shape[0], -1)
    blocks = [B]
    for _ in range(1, A.shape[0]):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)


def _ackermann(A, b, targets):
    n = A.shape[0]
    C = controllability_matrix(A, b)
    coeffs = np.real(np.poly(targets))
    phi = np.zeros_like(A)
    for c in coeffs:
        phi = phi @ A + c * np.eye(n)
    last = np.linalg.solve(C.T, np.eye(n)[:, -1])
    return (last @ phi).reshape(1, n)


def place_poles(A, B, targets, seed: int = 0) -> np.ndarray:
    """State feedback ``F`` with ``eig(A - B F) = targets``.

    Single input uses Ackermann's formula.  With several inputs, ``B`` is
    collapsed onto a direction ``v`` (unit axes first, then seeded random
    directions) for which ``(A, B v)`` is controllable, and ``F = v f``.

    Raises
    ------
    DesignError
        If ``(A, B)`` is uncontrollable, the targets are not closed under
        conjugation, or no usable projection is found.
    """
    A = np.asarray(A, float)
    n = A.shape[0]
    B = np.asarray(B, float).reshape(n, -1)
    targets = np.asarray(targets, dtype=complex).ravel()
    if targets.size != n:
        raise DesignError(f"need {n} target poles, got {targets.size}")
    if not np.allclose(np.sort_complex(targets), np.sort_complex(targets.conj())):
        raise DesignError("target poles must be closed under conjugation")
    if numerical_rank(controllability_matrix(A, B)) < n:
        raise DesignError("uncontrollable pair (A, B): poles cannot be placed")

    m = B.shape[1]
    if m == 1:
        return _ackermann(A, B, targets)

    rng = np.random.default_rng(seed)
    trials = [np.eye(m)[:, k] for k in range(min(m, _MAX_PROJECTION_TRIALS))]
    while len(trials) < _MAX_PROJECTION_TRIALS:
        v = rng.standard_normal(m)
        trials.append(v / np.linalg.norm(v))
    for v in trials:
        b = B @ v
        C = controllability_matrix(A, b)
        if numerical_rank(C) == n and np.linalg.cond(C) < 1e12:
            return np.outer(v, _ackermann(A, b.reshape(n, 1), targets).ravel())
    raise DesignError(
        f"no controllable single-input projection found in {_MAX_PROJECTION_TRIALS} trials"
    )


def design_K_dst(agent, G_i, W_eff, rate: float = 1.0, targets=None, seed: int = 0) -> np.ndarray:
    """Relative-state gain for one follower of the tree protocol.

    Places the poles of ``A_i - B_i G_i - B_i F`` at ``-rate * (1..n)``
    (or ``targets``) and returns ``K_i = F W_eff^{-1}``.  Only follower
    ``i``'s own matrices and its parent-edge weight are used.
    """
    if rate <= 0:
        raise ValueError("rate must be positive")
    A, B = agent.A, agent.B
    n = A.shape[0]
    W_eff = np.asarray(W_eff, float)
    if numerical_rank(W_eff) < n or np.linalg.cond(W_eff) > _WEIGHT_COND_LIMIT:
        raise DesignError("effective weight not invertible (singular or ill-conditioned)")
    if targets is None:
        targets = -rate * np.arange(1, n + 1, dtype=float)
    Ai = A - B @ np.asarray(G_i, float)
    F = place_poles(Ai, B, targets, seed=seed)
    K = np.linalg.solve(W_eff.T, F.T).T
    achieved = is_hurwitz(Ai - B @ K @ W_eff)
    bound = -0.5 * float(np.min(np.abs(np.real(targets))))
    if not achieved.verdict or achieved.spectral_abscissa > bound:
        raise DesignError(
            f"designed block has spectral abscissa {achieved.spectral_abscissa:.3g}, expected <= {bound:.3g}"
        )
    return K


def design_gains(system: ValidatedSystem, tree: SpanningTree, G: Sequence | None = None,
                 rate: float = 1.0, seed: int = 0) -> GainSet:
    """Design every ``K_i`` independently; ``G`` defaults to zero."""
    n, m, N = system.n, system.m, system.N
    G = [np.zeros((m, n))] * N if G is None else [np.asarray(g, float) for g in G]
    K = []
    for i in range(1, N + 1):
        K.append(design_K_dst(system.agents[i], G[i - 1], effective_weight(tree, system.graph, i),
                              rate=rate, seed=seed))
    return GainSet(G, K)


def diagonal_block(system: ValidatedSystem, tree: SpanningTree, gains: GainSet, i: int) -> np.ndarray:
    """``A_i - B_i G_i - B_i K_i W_eff,i`` for original follower ``i``."""
    a = system.agents[i]
    return a.A - a.B @ gains.G[i - 1] - a.B @ gains.K[i - 1] @ effective_weight(tree, system.graph, i)


@dataclass(frozen=True)
class BlockVerdict:
    follower: int
    block: str
    result: HurwitzResult

    def to_dict(self):
        return {"follower": self.follower, "block": self.block, **self.result.to_dict()}


@dataclass(frozen=True)
class GerschgorinVerdict:
    follower: int
    radius: float
    region_clear: bool
    worst_point: complex
    worst_slack: float
    terms: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "follower": self.follower,
            "radius": self.radius,
            "radius_terms": {str(j): v for j, v in self.terms.items()},
            "region_clear": self.region_clear,
            "worst_point": [self.worst_point.real, self.worst_point.imag],
            "worst_slack": self.worst_slack,
        }


@dataclass
class CriterionReport:
    """Verdicts of one consensus criterion.

    ``necessary_and_sufficient`` is True for the tree-protocol test and
    False for the Gerschgorin test, whose FAIL does not rule consensus
    out.  ``direct`` carries eigenvalue tests that complement the
    criterion (whole ``Mbar``, ``Abar``, ``M'``) and never enter
    ``overall``.
    """

    criterion: str
    necessary_and_sufficient: bool
    per_block: list[BlockVerdict] = field(default_factory=list)
    tail_block: HurwitzResult | None = None
    gerschgorin: list[GerschgorinVerdict] | None = None
    direct: dict[str, HurwitzResult] = field(default_factory=dict)
    reduction: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)

    @property
    def overall(self) -> bool:
        verdicts = [b.result.verdict for b in self.per_block]
        if self.tail_block is not None:
            verdicts.append(self.tail_block.verdict)
        if self.gerschgorin is not None:
            verdicts.extend(g.region_clear for g in self.gerschgorin)
        return all(verdicts)

    def failures(self) -> list[str]:
        out = [f"{b.block} (follower {b.follower})" for b in self.per_block if not b.result.verdict]
        if self.tail_block is not None and not self.tail_block.verdict:
            out.append("L1*Dbar*L3")
        for g in self.gerschgorin or ():
            if not g.region_clear:
                out.append(f"Gerschgorin region of follower {g.follower}")
        return out

    def to_dict(self):
        return {
            "criterion": self.criterion,
            "necessary_and_sufficient": self.necessary_and_sufficient,
            "overall": self.overall,
            "failures": self.failures(),
            "per_block": [b.to_dict() for b in self.per_block],
            "tail_block": None if self.tail_block is None else self.tail_block.to_dict(),
            "gerschgorin": None if self.gerschgorin is None else [g.to_dict() for g in self.gerschgorin],
            "direct": {k: v.to_dict() for k, v in self.direct.items()},
            "reduction": self.reduction,
            "tolerances": self.tolerances,
        }


def _reduction_summary(red):
    return {"s": red.s, "h": red.h, "rank_tau": red.tau, "L3_columns": list(red.L3_columns)}


def check_theorem1(system: ValidatedSystem, tree: SpanningTree, gains: GainSet,
                   margin: float = DEFAULT_HURWITZ_MARGIN, rank_tol_scale: float = 1.0) -> CriterionReport:
    """Exact consensus test for the tree protocol."""
    red = reduce_system(system, tree, gains, "dst", rank_tol_scale)
    report = CriterionReport("theorem1", True)
    for i in tree.label_order:
        res = is_hurwitz(diagonal_block(system, tree, gains, i), margin)
        report.per_block.append(BlockVerdict(i, f"A*_{i}-B*_{i}", res))
    report.per_block.sort(key=lambda b: b.follower)
    report.tail_block = is_hurwitz(red.tail, margin)
    report.direct = {
        "Mbar": is_hurwitz(red.Mbar, margin),
        "Abar": is_hurwitz(red.Abar, margin),
        "M": is_hurwitz(red.closed_loop.M, margin),
    }
    report.reduction = _reduction_summary(red)
    report.tolerances = {"hurwitz_margin": margin, "rank_tol_scale": rank_tol_scale}
    return report


def row_sum_norms(H) -> tuple[float, float]:
    """Largest and smallest absolute row sums of ``H`` (complex modulus)."""
    H = np.abs(np.atleast_2d(np.asarray(H)))
    if H.size == 0:
        return 0.0, 0.0
    sums = H.sum(axis=1)
    return float(sums.max()), float(sums.min())


def inverse_row_norm(H) -> float:
    """``1 / ||H^{-1}||_inf`` with the max-row-sum norm; 0 for singular ``H``.

    This is the quantity that makes the block Gerschgorin inclusion hold
    for the max-row-sum norm; it never exceeds the smallest row sum.
    """
    H = np.atleast_2d(np.asarray(H, dtype=complex))
    return float(kernels.inverse_row_norms(H[None])[0])


def _follower_neighbors(graph, i):
    return [j for j in graph.in_neighbors(i) if j != 0]


def gerschgorin_block(system: ValidatedSystem, gains: GainSet, i: int) -> np.ndarray:
    """``A'_i - B'_i`` of the all-neighbours closed loop (original label ``i``)."""
    a, g = system.agents[i], system.graph
    total = system.D(i).copy()
    for j in _follower_neighbors(g, i):
        total = total + g.weight(i, j)
    return a.A - a.B @ gains.G[i - 1] - a.B @ gains.K[i - 1] @ total


def radius_terms(i: int, system: ValidatedSystem, gains: GainSet, graph=None) -> dict[int, float]:
    """``||B_i K_i W_ij||_inf`` for each follower neighbour ``j`` of ``i``."""
    graph = graph if graph is not None else system.graph
    a = system.agents[i]
    return {j: row_sum_norms(a.B @ gains.K[i - 1] @ graph.weight(i, j))[0]
            for j in _follower_neighbors(graph, i)}


def gerschgorin_radius(i: int, system: ValidatedSystem, gains: GainSet, graph=None, tree=None) -> float:
    """Sum of ``||B_i K_i W_ij||_inf`` over follower neighbours ``j`` of ``i``.

    The leader edge is not part of the radius; it sits in ``B'_i``.
    """
    return float(sum(radius_terms(i, system, gains, graph).values()))


def region_clear_of_rhp(A_block, R: float, grid: int = DEFAULT_GRID, margin: float = DEFAULT_HURWITZ_MARGIN):
    """Check that ``{lam : 1/||inv(A_block - lam I)|| <= R}`` avoids ``Re lam >= 0``.

    The closed right half plane is sampled on ``[0, W] x [-W, W]`` with
    ``W = ||A_block|| + R + 1`` and step ``W / grid``; beyond ``|lam| > W``
    the region cannot reach.  Returns ``(verdict, worst_point, worst_slack)``,
    the guarantee being up to grid resolution.
    """
    A_block = np.asarray(A_block, float)
    W = row_sum_norms(A_block)[0] + R + 1.0
    sigmas = np.linspace(0.0, W, grid + 1)
    omegas = np.linspace(-W, W, 2 * grid + 1)
    slack, s, w = kernels.region_slack_grid(A_block, float(R), sigmas, omegas)
    return slack > margin, complex(s, w), float(slack)


def check_theorem2(system: ValidatedSystem, tree: SpanningTree, gains: GainSet,
                   margin: float = DEFAULT_HURWITZ_MARGIN, rank_tol_scale: float = 1.0,
                   grid: int = DEFAULT_GRID) -> CriterionReport:
    """Sufficient consensus test for the all-neighbours protocol."""
    red = reduce_system(system, tree, gains, "all-neighbors", rank_tol_scale)
    report = CriterionReport("theorem2", False)
    report.tail_block = is_hurwitz(red.tail, margin)
    report.gerschgorin = []
    for i in range(1, system.N + 1):
        terms = radius_terms(i, system, gains)
        R = float(sum(terms.values()))
        ok, worst, slack = region_clear_of_rhp(gerschgorin_block(system, gains, i), R, grid, margin)
        report.gerschgorin.append(GerschgorinVerdict(i, R, bool(ok), worst, slack, terms))
    report.direct = {
        "M_prime": is_hurwitz(red.closed_loop.M, margin),
        "Mbar_prime": is_hurwitz(red.Mbar, margin),
    }
    report.reduction = _reduction_summary(red)
    report.tolerances = {"hurwitz_margin": margin, "rank_tol_scale": rank_tol_scale,
                         "gerschgorin_grid": grid}
    return report

