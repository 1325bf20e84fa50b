"""JSON run configuration.

Matrices are row-major: either nested lists (one list per row) or a flat
list of ``rows * cols`` numbers.  Followers are listed in label order
(``followers[0]`` is follower 1).  Unknown fields are rejected.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from .model import AgentDynamics, MatrixWeightedDigraph, ModelError, ValidatedSystem, validate_system
from .reduction import DEFAULT_HURWITZ_MARGIN, PROTOCOLS
from .simulate import SimulationConfig, SimulationError
from .synthesis import DEFAULT_GRID, GainSet

__all__ = ["ConfigError", "RunConfig", "SCHEMA", "parse_config", "load_config", "gains_fragment"]

_MATRIX = {
    "type": "array",
    "minItems": 1,
    "items": {"oneOf": [{"type": "number"}, {"type": "array", "items": {"type": "number"}}]},
}
_AGENT = {
    "type": "object",
    "additionalProperties": False,
    "required": ["A", "B"],
    "properties": {"A": _MATRIX, "B": _MATRIX},
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["dims", "leader", "followers", "edges"],
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "dims": {
            "type": "object",
            "additionalProperties": False,
            "required": ["n", "m", "N"],
            "properties": {
                "n": {"type": "integer", "minimum": 1},
                "m": {"type": "integer", "minimum": 1},
                "N": {"type": "integer", "minimum": 1},
            },
        },
        "leader": _AGENT,
        "followers": {"type": "array", "minItems": 1, "items": _AGENT},
        "edges": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["from", "to", "weight"],
                "properties": {
                    "from": {"type": "integer", "minimum": 0},
                    "to": {"type": "integer", "minimum": 0},
                    "weight": _MATRIX,
                },
            },
        },
        "tree": {
            "type": "object",
            "additionalProperties": False,
            "patternProperties": {"^[1-9][0-9]*$": {"type": "integer", "minimum": 0}},
        },
        "protocol": {"enum": list(PROTOCOLS)},
        "gains": {
            "type": "object",
            "additionalProperties": False,
            "required": ["G", "K"],
            "properties": {"G": {"type": "array", "items": _MATRIX}, "K": {"type": "array", "items": _MATRIX}},
        },
        "design": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"rate": {"type": "number", "exclusiveMinimum": 0}},
        },
        "sim": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "t_end": {"type": "number", "exclusiveMinimum": 0},
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "initial_states": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
                "leader_input": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["kind"],
                    "properties": {
                        "kind": {"enum": ["zero", "constant"]},
                        "value": {"type": "array", "items": {"type": "number"}},
                    },
                },
                "divergence_guard": {"type": "number", "exclusiveMinimum": 0},
                "epsilon": {"type": "number", "exclusiveMinimum": 0},
                "window": {"type": "number", "minimum": 0},
            },
        },
        "tolerances": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "hurwitz_margin": {"type": "number", "minimum": 0},
                "rank_tol_scale": {"type": "number", "exclusiveMinimum": 0},
                "gerschgorin_grid": {"type": "integer", "minimum": 4},
            },
        },
    },
}

SIM_DEFAULTS = {"t_end": 10.0, "dt": 1e-3, "divergence_guard": 1e12, "epsilon": 1e-3, "window": 2.0}
TOLERANCE_DEFAULTS = {
    "hurwitz_margin": DEFAULT_HURWITZ_MARGIN,
    "rank_tol_scale": 1.0,
    "gerschgorin_grid": DEFAULT_GRID,
}


class ConfigError(ValueError):
    """Malformed or inconsistent configuration; ``path`` locates the field."""

    def __init__(self, message, path=""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


def _matrix(value, rows, cols, where, what="matrix"):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 1 and arr.size == rows * cols:
        arr = arr.reshape(rows, cols)
    elif arr.ndim == 1 and rows == 1 and arr.size == cols:
        arr = arr.reshape(1, cols)
    if arr.shape != (rows, cols):
        raise ConfigError(f"{what} must be {rows}×{cols}, got shape {arr.shape}", where)
    return arr


@dataclass
class RunConfig:
    """A parsed, validated configuration with defaults filled in."""

    system: ValidatedSystem
    protocol: str = "dst"
    tree: dict | None = None
    gains: GainSet | None = None
    design_rate: float = 1.0
    sim: dict = field(default_factory=lambda: dict(SIM_DEFAULTS))
    initial_states: np.ndarray | None = None
    leader_input: np.ndarray | None = None
    tolerances: dict = field(default_factory=lambda: dict(TOLERANCE_DEFAULTS))
    name: str = ""
    source: str = ""

    def simulation_config(self, seed: int | None = None) -> SimulationConfig:
        x0 = self.initial_states
        if x0 is None:
            rng = np.random.default_rng(0 if seed is None else seed)
            x0 = rng.uniform(-1.0, 1.0, size=(self.system.N + 1, self.system.n))
        try:
            return SimulationConfig(
                x0, t_end=self.sim["t_end"], dt=self.sim["dt"],
                leader_input=self.leader_input, divergence_guard=self.sim["divergence_guard"],
            )
        except SimulationError as exc:
            raise ConfigError(str(exc), "sim") from exc

    def echo(self) -> dict:
        """Every setting in effect, defaults included."""
        return {
            "name": self.name,
            "source": self.source,
            "dims": {"n": self.system.n, "m": self.system.m, "N": self.system.N},
            "protocol": self.protocol,
            "tree": None if self.tree is None else {str(k): v for k, v in sorted(self.tree.items())},
            "design": {"rate": self.design_rate},
            "sim": {
                **self.sim,
                "initial_states": None if self.initial_states is None else self.initial_states.tolist(),
                "leader_input": (
                    {"kind": "zero"} if self.leader_input is None
                    else {"kind": "constant", "value": self.leader_input.tolist()}
                ),
            },
            "tolerances": dict(self.tolerances),
            "gains_given": self.gains is not None,
        }


def _schema_error(err):
    path = "/".join(str(p) for p in err.absolute_path)
    return ConfigError(err.message, path)


def load_config(data: dict, source: str = "") -> RunConfig:
    """Validate an already-decoded configuration mapping."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        raise _schema_error(errors[0])

    n, m, N = data["dims"]["n"], data["dims"]["m"], data["dims"]["N"]
    if len(data["followers"]) != N:
        raise ConfigError(f"expected {N} followers (dims.N), got {len(data['followers'])}", "followers")

    def agent(entry, where):
        return AgentDynamics(
            _matrix(entry["A"], n, n, f"{where}/A", "A"),
            _matrix(entry["B"], n, m, f"{where}/B", "B"),
        )

    agents = [agent(data["leader"], "leader")]
    agents += [agent(f, f"followers/{k}") for k, f in enumerate(data["followers"])]
    edges = {}
    for k, e in enumerate(data["edges"]):
        where = f"edges/{k}"
        j, i = e["from"], e["to"]
        if j > N or i > N:
            raise ConfigError(f"node index out of range 0..{N}", where)
        if (j, i) in edges:
            raise ConfigError(f"duplicate edge ({j},{i})", where)
        edges[(j, i)] = _matrix(e["weight"], n, n, f"{where}/weight", "weight")
    try:
        graph = MatrixWeightedDigraph(N + 1, edges)
        system = validate_system(agents, graph)
    except ModelError as exc:
        raise ConfigError(str(exc), "edges") from exc

    cfg = RunConfig(system=system, name=data.get("name", ""), source=source)
    cfg.protocol = data.get("protocol", "dst")
    if "tree" in data:
        cfg.tree = {int(k): v for k, v in data["tree"].items()}
    if "gains" in data:
        G, K = data["gains"]["G"], data["gains"]["K"]
        for key, lst in (("G", G), ("K", K)):
            if len(lst) != N:
                raise ConfigError(f"expected {N} matrices, got {len(lst)}", f"gains/{key}")
        cfg.gains = GainSet(
            [_matrix(g, m, n, f"gains/G/{k}", "G") for k, g in enumerate(G)],
            [_matrix(g, m, n, f"gains/K/{k}", "K") for k, g in enumerate(K)],
        )
    cfg.design_rate = float(data.get("design", {}).get("rate", 1.0))

    sim = data.get("sim", {})
    cfg.sim = {k: float(sim.get(k, v)) for k, v in SIM_DEFAULTS.items()}
    if "initial_states" in sim:
        x0 = sim["initial_states"]
        if len(x0) != N + 1 or any(len(v) != n for v in x0):
            raise ConfigError(f"need {N + 1} initial states of length {n}, leader first", "sim/initial_states")
        cfg.initial_states = np.array(x0, dtype=float)
    li = sim.get("leader_input", {"kind": "zero"})
    if li["kind"] == "constant":
        if "value" not in li or len(li["value"]) != m:
            raise ConfigError(f"constant leader input needs a value of length {m}", "sim/leader_input")
        cfg.leader_input = np.array(li["value"], dtype=float)
    elif "value" in li and any(li["value"]):
        raise ConfigError("zero leader input cannot carry a nonzero value", "sim/leader_input")

    tol = data.get("tolerances", {})
    cfg.tolerances = {k: type(v)(tol.get(k, v)) for k, v in TOLERANCE_DEFAULTS.items()}
    return cfg


def parse_config(path) -> RunConfig:
    """Read and validate a JSON configuration file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration: {exc.strerror}", str(path)) from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}", str(path)) from exc
    if not isinstance(data, dict):
        raise ConfigError("top level must be a JSON object", str(path))
    return load_config(data, source=str(path))


def gains_fragment(gains: GainSet) -> dict:
    """Configuration fragment holding ``gains``; re-reads bit-identically."""
    return {"gains": gains.to_dict()}
