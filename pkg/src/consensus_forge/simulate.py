"""Closed-loop simulation and the consensus verdict.

:func:`simulate` integrates each agent's own equation with its own
protocol, node by node.  :func:`stacked_equivalence` integrates the
stacked matrix form with the same steps; the two routes share nothing but
the input data, so agreement between them checks the matrix assembly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from ._kernels_py import rk4_step
from .model import SpanningTree, ValidatedSystem
from .reduction import PROTOCOLS, closed_loop_matrix
from .synthesis import GainSet, effective_weight

__all__ = [
    "SimulationError",
    "SimulationConfig",
    "SimulationTrace",
    "ConsensusVerdict",
    "rk4_step",
    "simulate",
    "stacked_trace",
    "stacked_equivalence",
    "y_trajectory",
    "consensus_verdict",
]


class SimulationError(ValueError):
    """Invalid simulation setup."""


@dataclass(frozen=True)
class SimulationConfig:
    """Horizon, step, initial states and the (constant) leader input.

    ``initial_states[k]`` is agent ``k``'s state, leader first.
    ``leader_input`` is ``None`` / ``"zero"`` or a constant vector.
    """

    initial_states: tuple
    t_end: float = 10.0
    dt: float = 1e-3
    leader_input: tuple | None = None
    divergence_guard: float = 1e12

    def __post_init__(self):
        if not self.dt > 0:
            raise SimulationError("dt must be positive")
        if not self.t_end >= self.dt:
            raise SimulationError("t_end must be at least dt")
        if not self.divergence_guard > 0:
            raise SimulationError("divergence_guard must be positive")
        x = np.array(self.initial_states, dtype=float)
        if x.ndim != 2:
            raise SimulationError("initial_states must be a list of equal-length vectors")
        x.flags.writeable = False
        object.__setattr__(self, "initial_states", x)
        if self.leader_input is not None:
            u = np.array(self.leader_input, dtype=float).ravel()
            u.flags.writeable = False
            object.__setattr__(self, "leader_input", u)

    @property
    def steps(self) -> int:
        return int(round(self.t_end / self.dt))

    def u0(self, m: int) -> np.ndarray:
        if self.leader_input is None:
            return np.zeros(m)
        if self.leader_input.size != m:
            raise SimulationError(f"leader input has {self.leader_input.size} entries, expected {m}")
        return self.leader_input

    def check(self, system: ValidatedSystem):
        if self.initial_states.shape != (system.N + 1, system.n):
            raise SimulationError(
                f"initial_states has shape {self.initial_states.shape}, expected "
                f"({system.N + 1}, {system.n})"
            )
        self.u0(system.m)


@dataclass
class SimulationTrace:
    """Sampled closed-loop run; states are ``(samples, N+1, n)``, leader first."""

    times: np.ndarray
    states: np.ndarray
    diverged: bool = False
    followers: tuple = field(default=())

    def __post_init__(self):
        if not self.followers:
            self.followers = tuple(range(1, self.states.shape[1])) if self.states.ndim == 3 else ()

    @property
    def errors(self) -> np.ndarray:
        """``||x_i - x_0||_2`` per sample and follower."""
        if self.states.shape[0] == 0:
            return np.zeros((0, len(self.followers)))
        return np.linalg.norm(self.states[:, 1:, :] - self.states[:, :1, :], axis=2)

    @property
    def rel_errors(self) -> np.ndarray:
        if self.states.shape[0] == 0:
            return np.zeros((0, len(self.followers)))
        lead = np.linalg.norm(self.states[:, 0, :], axis=1)
        return self.errors / (1.0 + lead)[:, None]

    @classmethod
    def empty(cls, N: int):
        return cls(np.zeros(0), np.zeros((0, N + 1, 0)), False, tuple(range(1, N + 1)))


def _neighbor_tables(system, tree, protocol_kind):
    n, N = system.n, system.N
    ptr, idx, W = [0, 0], [], []
    for i in range(1, N + 1):
        if protocol_kind == "dst":
            pairs = [(tree.parent[i], effective_weight(tree, system.graph, i))]
        else:
            pairs = [(j, system.graph.weight(i, j)) for j in system.graph.in_neighbors(i)]
        for j, w in pairs:
            idx.append(j)
            W.append(w)
        ptr.append(len(idx))
    W = np.array(W).reshape(-1, n, n) if W else np.zeros((0, n, n))
    return np.array(ptr, dtype=np.int_), np.array(idx, dtype=np.int_), W


def simulate(system: ValidatedSystem, tree: SpanningTree, gains: GainSet, protocol_kind: str,
             config: SimulationConfig, backend=None) -> SimulationTrace:
    """Integrate the agents' own equations under either protocol.

    Fixed-step RK4; the run stops early (``diverged``) once any state
    component leaves ``[-guard, guard]``.
    """
    if protocol_kind not in PROTOCOLS:
        raise SimulationError(f"protocol_kind must be one of {PROTOCOLS}")
    config.check(system)
    impl = kernels if backend is None else kernels.get_backend(backend)
    n, m, N = system.n, system.m, system.N
    A = np.array([a.A for a in system.agents])
    B = np.array([a.B for a in system.agents])
    G = np.zeros((N + 1, m, n))
    K = np.zeros((N + 1, m, n))
    G[1:] = np.array(gains.G)
    K[1:] = np.array(gains.K)
    ptr, idx, W = _neighbor_tables(system, tree, protocol_kind)
    steps = config.steps
    states, taken, diverged = impl.integrate_agents(
        A, B, G, K, ptr, idx, W, config.u0(m), config.initial_states,
        float(config.dt), steps, float(config.divergence_guard),
    )
    states = states[:taken + 1]
    times = np.arange(taken + 1) * config.dt
    return SimulationTrace(times, states, bool(diverged), tuple(range(1, N + 1)))


def stacked_trace(system: ValidatedSystem, tree: SpanningTree, gains: GainSet, protocol_kind: str,
                  config: SimulationConfig, steps: int | None = None) -> np.ndarray:
    """States of the stacked form ``F z + B_stack u0``, in original agent order."""
    config.check(system)
    cl = closed_loop_matrix(system, tree, gains, protocol_kind)
    n = system.n
    order = (0,) + tree.label_order
    z = np.concatenate([config.initial_states[k] for k in order])
    drive = cl.B_stack @ config.u0(system.m)
    F = cl.F

    def field(x, t):
        return F @ x + drive

    steps = config.steps if steps is None else steps
    out = np.empty((steps + 1, system.N + 1, n))
    inv = np.argsort(order)
    out[0] = z.reshape(-1, n)[inv]
    for k in range(steps):
        z = rk4_step(field, z, k * config.dt, config.dt)
        out[k + 1] = z.reshape(-1, n)[inv]
    return out


def stacked_equivalence(system: ValidatedSystem, tree: SpanningTree, gains: GainSet, protocol_kind: str,
                        config: SimulationConfig, trace: SimulationTrace | None = None) -> float:
    """Largest scaled gap between the per-agent and stacked trajectories.

    Each sample's gap ``max|x_agent - x_stacked|`` is divided by
    ``1 + max|x_agent|`` so that exponentially growing leaders compare at
    floating-point resolution.  Only the non-diverged part is compared.
    """
    if trace is None:
        trace = simulate(system, tree, gains, protocol_kind, config)
    steps = len(trace.times) - 1
    if steps < 0:
        return 0.0
    ref = stacked_trace(system, tree, gains, protocol_kind, config, steps)
    own = trace.states[:steps + 1]
    gap = np.abs(own - ref).reshape(steps + 1, -1).max(axis=1)
    scale = 1.0 + np.abs(own).reshape(steps + 1, -1).max(axis=1)
    return float(np.max(gap / scale))


def y_trajectory(trace: SimulationTrace, tree: SpanningTree) -> np.ndarray:
    """Edge errors ``y_i = x_{k_i} - x_i``, shape ``(samples, N, n)``, original order."""
    x = trace.states
    parents = [tree.parent[i] for i in range(1, x.shape[1])]
    return x[:, parents, :] - x[:, 1:, :]


@dataclass(frozen=True)
class ConsensusVerdict:
    achieved: bool
    t_settle: float | None
    final_max_rel_error: float | None

    def to_dict(self):
        return {"achieved": self.achieved, "t_settle": self.t_settle,
                "final_max_rel_error": self.final_max_rel_error}


def consensus_verdict(trace: SimulationTrace, epsilon: float = 1e-3, window: float = 2.0) -> ConsensusVerdict:
    """Relative error below ``epsilon`` for every follower over the last ``window``.

    ``t_settle`` is the first sample from which the bound holds through the
    end of the run (None if it fails at the last sample or the run diverged).
    """
    if trace.diverged or trace.times.size == 0:
        final = None if trace.times.size == 0 else float(np.max(trace.rel_errors[-1], initial=0.0))
        return ConsensusVerdict(False, None, final)
    worst = trace.rel_errors.max(axis=1) if trace.rel_errors.shape[1] else np.zeros(trace.times.size)
    ok = worst < epsilon
    final = float(worst[-1])
    bad = np.flatnonzero(~ok)
    first_good = 0 if bad.size == 0 else int(bad[-1]) + 1
    if first_good >= trace.times.size:
        return ConsensusVerdict(False, None, final)
    t_settle = float(trace.times[first_good])
    t_end = float(trace.times[-1])
    # tolerate float noise in the window boundary
    achieved = t_settle <= t_end - window + 1e-9
    return ConsensusVerdict(achieved, t_settle, final)
