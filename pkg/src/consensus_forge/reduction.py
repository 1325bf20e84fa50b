"""Closed loop, tree-based change of coordinates and the auxiliary matrix.

The stacked closed loop ``[x0; x]' = F [x0; x] + B_stack u0`` is mapped by
``P = [P0 e1]^T kron I_n`` onto edge errors ``y_i = x_{k_i} - x_i`` and
the leader state.  Consensus becomes asymptotic stability of ``y`` in

    y'   = Abar y + Bbar eta
    eta' = Dbar eta,          eta = [x0; u0]

and the part of ``eta`` that ``y`` can see is isolated through the
observability sequence of ``(Bbar, Dbar)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import (
    SpanningTree,
    ValidatedSystem,
    dst_laplacian,
    full_laplacian,
    incidence_matrix,
)

__all__ = [
    "ReductionError",
    "EigenSolverError",
    "PROTOCOLS",
    "ClosedLoopMatrix",
    "ReducedSystem",
    "HurwitzResult",
    "closed_loop_matrix",
    "transformation_matrices",
    "leader_drift",
    "path_inverse",
    "transform",
    "eta_matrices",
    "rank_tolerance",
    "numerical_rank",
    "observability_sequence",
    "extract_L1",
    "extract_L3",
    "auxiliary_matrix",
    "is_hurwitz",
    "reduce_system",
    "DEFAULT_HURWITZ_MARGIN",
]

PROTOCOLS = ("dst", "all-neighbors")
DEFAULT_HURWITZ_MARGIN = 1e-9
_LEADER_BLOCK_TOL = 1e-9


class ReductionError(RuntimeError):
    """Numerical inconsistency inside the reduction."""


class EigenSolverError(RuntimeError):
    """The eigenvalue solver failed to converge."""


@dataclass(frozen=True)
class ClosedLoopMatrix:
    """Stacked drift ``F`` and leader input map of the closed loop.

    Follower blocks are in the tree's internal order.
    """

    F: np.ndarray
    B_stack: np.ndarray
    protocol_kind: str
    n: int

    @property
    def N(self) -> int:
        return self.F.shape[0] // self.n - 1

    @property
    def M(self) -> np.ndarray:
        """Follower-to-follower block (``M`` or ``M'``)."""
        return self.F[self.n:, self.n:]

    @property
    def coupling(self) -> np.ndarray:
        """``B_D K_D delta``: how the leader enters the followers."""
        return self.F[self.n:, :self.n]


def _check_protocol(kind):
    if kind not in PROTOCOLS:
        raise ValueError(f"protocol_kind must be one of {PROTOCOLS}, got {kind!r}")


def closed_loop_matrix(system: ValidatedSystem, tree: SpanningTree, gains, protocol_kind: str = "dst") -> ClosedLoopMatrix:
    """Assemble ``F = [[A0, 0], [B_D K_D delta, M]]`` and ``[B0; 0; ...; 0]``.

    ``gains`` supplies ``G`` and ``K`` lists indexed by original follower
    label minus one.
    """
    _check_protocol(protocol_kind)
    n, m, N = system.n, system.m, system.N
    if len(gains.G) != N or len(gains.K) != N:
        raise ValueError(f"expected {N} gain pairs, got {len(gains.G)} G and {len(gains.K)} K")
    for g in list(gains.G) + list(gains.K):
        if np.shape(g) != (m, n):
            raise ValueError(f"gain of shape {np.shape(g)}, expected ({m}, {n})")
    lap = dst_laplacian(tree, system.graph) if protocol_kind == "dst" else full_laplacian(system.graph, tree)

    order = tree.label_order
    A_D = _bdiag([system.agents[i].A for i in order])
    B_D = _bdiag([system.agents[i].B for i in order])
    G_D = _bdiag([np.asarray(gains.G[i - 1], float) for i in order])
    K_D = _bdiag([np.asarray(gains.K[i - 1], float) for i in order])

    M = A_D - B_D @ (G_D + K_D @ lap.L + K_D @ lap.Delta)
    F = np.zeros(((N + 1) * n, (N + 1) * n))
    F[:n, :n] = system.leader.A
    F[n:, :n] = B_D @ K_D @ lap.delta
    F[n:, n:] = M
    B_stack = np.zeros(((N + 1) * n, m))
    B_stack[:n] = system.leader.B
    return ClosedLoopMatrix(F, B_stack, protocol_kind, n)


def _bdiag(blocks):
    rows = sum(b.shape[0] for b in blocks)
    cols = sum(b.shape[1] for b in blocks)
    out = np.zeros((rows, cols))
    r = c = 0
    for b in blocks:
        out[r:r + b.shape[0], c:c + b.shape[1]] = b
        r += b.shape[0]
        c += b.shape[1]
    return out


def path_inverse(tree: SpanningTree) -> np.ndarray:
    """Closed-form inverse of the follower part of ``P0^T``.

    Row ``i`` of ``P0^T`` is ``e_{k_i} - e_i``, so
    ``x_i = x_0 - sum(y_j for j on the root path of i)``; entry ``(i, j)``
    is therefore -1 when ``j`` is ``i`` or one of its follower ancestors.
    """
    N = tree.N
    parents = tree.internal_parents()
    inv = np.zeros((N, N))
    for i in range(1, N + 1):
        j = i
        while j != 0:
            inv[i - 1, j - 1] = -1.0
            j = parents[j - 1]
    return inv


def transformation_matrices(tree: SpanningTree, n: int) -> tuple[np.ndarray, np.ndarray]:
    """``P`` and its inverse ``[[0, 1], [Pt0^{-1}, 1_N]] kron I_n``."""
    N = tree.N
    P0 = incidence_matrix(tree)
    core = np.hstack([P0, np.eye(N + 1)[:, :1]]).T
    P = np.kron(core, np.eye(n))

    inv_core = np.zeros((N + 1, N + 1))
    inv_core[0, N] = 1.0
    inv_core[1:, :N] = path_inverse(tree)
    inv_core[1:, N] = 1.0
    return P, np.kron(inv_core, np.eye(n))


def transform(cl: ClosedLoopMatrix, tree: SpanningTree) -> dict:
    """Apply ``P`` to the closed loop.

    Returns a dict with ``Abar`` (``Nn x Nn``), ``Ahat`` (``Nn x n``),
    ``Bhat`` (``Nn x m``) and the full transformed drift ``T``.
    """
    n, N = cl.n, cl.N
    P, P_inv = transformation_matrices(tree, n)
    T = P @ cl.F @ P_inv
    leader_row = T[N * n:, :N * n]
    scale = max(1.0, float(np.max(np.abs(cl.F), initial=0.0)))
    if leader_row.size and np.max(np.abs(leader_row)) > _LEADER_BLOCK_TOL * scale:
        raise ReductionError(
            "transformed leader row couples to y (max %.3g); closed loop is malformed"
            % np.max(np.abs(leader_row))
        )
    PB = P @ cl.B_stack
    return {
        "T": T,
        "Abar": T[:N * n, :N * n],
        "Ahat": T[:N * n, N * n:],
        "Bhat": PB[:N * n],
    }


def leader_drift(system: ValidatedSystem, tree: SpanningTree, gains) -> np.ndarray:
    """``Ahat`` from the row-block identity ``Ahat_i = A*_{k_i} - A*_i``.

    ``A*_j = A_j - B_j G_j`` (``A*_0 = A_0``) is what ``x_0`` contributes to
    ``x_j``'s derivative once every coupling term is written in ``y``.  The
    differences are formed directly so that identical agents cancel exactly
    instead of leaving similarity-transform roundoff in ``Bbar``.
    """
    def drift(j):
        a = system.agents[j]
        return a.A if j == 0 else a.A - a.B @ np.asarray(gains.G[j - 1], float)

    return np.vstack([drift(tree.parent[i]) - drift(i) for i in tree.label_order])


def eta_matrices(Ahat: np.ndarray, Bhat: np.ndarray, A0: np.ndarray, B0: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``Bbar = [Ahat | Bhat]`` and ``Dbar = [[A0, B0], [0, 0]]``."""
    n, m = B0.shape
    Bbar = np.hstack([Ahat, Bhat])
    Dbar = np.zeros((n + m, n + m))
    Dbar[:n, :n] = A0
    Dbar[:n, n:] = B0
    return Bbar, Dbar


def rank_tolerance(V: np.ndarray, scale: float = 1.0) -> float:
    """``max(shape) * eps * sigma_max`` (times ``scale``)."""
    if V.size == 0:
        return 0.0
    smax = np.linalg.norm(V, 2)
    return scale * max(V.shape) * np.finfo(float).eps * smax


def numerical_rank(V: np.ndarray, tol: float | None = None) -> int:
    if V.size == 0:
        return 0
    sv = np.linalg.svd(V, compute_uv=False)
    if tol is None:
        tol = max(V.shape) * np.finfo(float).eps * (sv[0] if sv.size else 0.0)
    return int(np.sum(sv > tol))


def observability_sequence(Bbar: np.ndarray, Dbar: np.ndarray, rank_tol_scale: float = 1.0) -> dict:
    """Stack ``Bbar Dbar^k`` until the rank stops growing.

    Returns ``Vs``, ``s``, ``h`` and the rank tolerance ``tau`` used for
    ``Vs``.  The search runs over ``k = 0 .. n+m-1``; reaching the end
    means the rank has stabilised.
    """
    q = Dbar.shape[0]
    blocks = [Bbar]
    for _ in range(1, q):
        blocks.append(blocks[-1] @ Dbar)
    ranks = []
    for k in range(q):
        V = np.vstack(blocks[:k + 1])
        ranks.append(numerical_rank(V, rank_tolerance(V, rank_tol_scale)))
    s = q - 1
    for k in range(q - 1):
        if ranks[k] == ranks[k + 1]:
            s = k
            break
    Vs = np.vstack(blocks[:s + 1])
    return {"Vs": Vs, "s": s, "h": ranks[s], "tau": rank_tolerance(Vs, rank_tol_scale), "ranks": ranks}


def extract_L1(Vs: np.ndarray, h: int | None = None, tau: float | None = None) -> np.ndarray:
    """Keep the rows of ``Vs`` that are independent of the rows kept before them.

    Rows are scanned top-down; a row survives when appending it raises
    the rank (tolerance ``tau``).  With ``h`` given, the number of kept
    rows is checked against it.
    """
    if tau is None:
        tau = rank_tolerance(Vs)
    cols = Vs.shape[1]
    kept: list[np.ndarray] = []
    for row in Vs:
        if not kept:
            if np.linalg.norm(row) > tau:
                kept.append(row)
            continue
        cand = np.vstack(kept + [row])
        if numerical_rank(cand, tau) > len(kept):
            kept.append(row)
    L1 = np.array(kept).reshape(len(kept), cols)
    if h is not None and L1.shape[0] != h:
        raise ReductionError(
            f"kept {L1.shape[0]} independent rows but rank is {h} (rank tolerance {tau:.3g})"
        )
    return L1


def extract_L3(L1: np.ndarray, check_tol: float = 1e-8) -> tuple[np.ndarray, list[int]]:
    """Right inverse of ``L1`` supported on a greedy set of independent columns.

    Returns ``L3`` and the selected column indices.
    """
    h, q = L1.shape
    L3 = np.zeros((q, h))
    if h == 0:
        return L3, []
    selected: list[int] = []
    for j in range(q):
        sub = L1[:, selected + [j]]
        if numerical_rank(sub) > len(selected):
            selected.append(j)
            if len(selected) == h:
                break
    if len(selected) != h:
        raise ReductionError(f"found only {len(selected)} independent columns in an L1 of rank {h}")
    L2_inv = np.linalg.inv(L1[:, selected])
    L3[selected, :] = L2_inv
    err = np.max(np.abs(L1 @ L3 - np.eye(h)))
    if err > check_tol:
        raise ReductionError(f"L1 L3 deviates from identity by {err:.3g}")
    return L3, selected


def auxiliary_matrix(Abar: np.ndarray, Bbar: np.ndarray, Dbar: np.ndarray, L1: np.ndarray, L3: np.ndarray) -> np.ndarray:
    """``[[Abar, Bbar L3], [0, L1 Dbar L3]]``."""
    top = np.hstack([Abar, Bbar @ L3])
    h = L1.shape[0]
    bottom = np.hstack([np.zeros((h, Abar.shape[1])), L1 @ Dbar @ L3])
    return np.vstack([top, bottom])


@dataclass(frozen=True)
class HurwitzResult:
    verdict: bool
    spectral_abscissa: float
    marginal: bool = False

    def to_dict(self):
        a = self.spectral_abscissa
        return {
            "verdict": self.verdict,
            "spectral_abscissa": a if math.isfinite(a) else None,
            "marginal": self.marginal,
        }


def is_hurwitz(H: np.ndarray, margin: float = DEFAULT_HURWITZ_MARGIN) -> HurwitzResult:
    """Stability verdict from the spectral abscissa.

    Abscissae within ``[-margin, margin]`` are flagged marginal and
    fail.  The empty matrix is vacuously Hurwitz.
    """
    H = np.asarray(H, dtype=float)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {H.shape}")
    if H.size == 0:
        return HurwitzResult(True, -math.inf)
    if not np.all(np.isfinite(H)):
        raise ValueError("matrix has non-finite entries")
    try:
        ev = np.linalg.eigvals(H)
    except np.linalg.LinAlgError as exc:
        raise EigenSolverError(str(exc)) from exc
    a = float(np.max(ev.real))
    return HurwitzResult(a < -margin, a, abs(a) <= margin)


@dataclass(frozen=True)
class ReducedSystem:
    """Every intermediate of the reduction, kept for reporting and tests."""

    closed_loop: ClosedLoopMatrix
    Abar: np.ndarray
    Ahat: np.ndarray
    Bhat: np.ndarray
    Bbar: np.ndarray
    Dbar: np.ndarray
    Vs: np.ndarray
    s: int
    h: int
    tau: float
    L1: np.ndarray
    L3: np.ndarray
    L3_columns: tuple[int, ...]
    Mbar: np.ndarray

    @property
    def tail(self) -> np.ndarray:
        """``L1 Dbar L3``."""
        return self.L1 @ self.Dbar @ self.L3


def reduce_system(system: ValidatedSystem, tree: SpanningTree, gains, protocol_kind: str = "dst", rank_tol_scale: float = 1.0) -> ReducedSystem:
    """Run the whole reduction for one gain set."""
    cl = closed_loop_matrix(system, tree, gains, protocol_kind)
    parts = transform(cl, tree)
    Ahat = leader_drift(system, tree, gains)
    scale = max(1.0, float(np.max(np.abs(cl.F), initial=0.0)))
    if np.max(np.abs(Ahat - parts["Ahat"]), initial=0.0) > _LEADER_BLOCK_TOL * scale:
        raise ReductionError("transformed leader column disagrees with the row-block identity")
    parts["Ahat"] = Ahat
    Bbar, Dbar = eta_matrices(Ahat, parts["Bhat"], system.leader.A, system.leader.B)
    obs = observability_sequence(Bbar, Dbar, rank_tol_scale)
    L1 = extract_L1(obs["Vs"], obs["h"], obs["tau"])
    L3, cols = extract_L3(L1)
    Mbar = auxiliary_matrix(parts["Abar"], Bbar, Dbar, L1, L3)
    return ReducedSystem(
        closed_loop=cl,
        Abar=parts["Abar"],
        Ahat=parts["Ahat"],
        Bhat=parts["Bhat"],
        Bbar=Bbar,
        Dbar=Dbar,
        Vs=obs["Vs"],
        s=obs["s"],
        h=obs["h"],
        tau=obs["tau"],
        L1=L1,
        L3=L3,
        L3_columns=tuple(cols),
        Mbar=Mbar,
    )
