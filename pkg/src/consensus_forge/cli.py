"""``consensus-forge`` command line.

Every command prints a JSON document on stdout.  Exit status is 0 when
everything checked passed, 2 when a criterion failed or consensus was not
reached, and 1 for usage, configuration or numerical errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import kernels
from .config import ConfigError, RunConfig, gains_fragment, parse_config
from .model import ModelError, find_spanning_tree
from .output import write_csv, write_svg
from .reduction import EigenSolverError, ReductionError, is_hurwitz, reduce_system
from .simulate import SimulationError, consensus_verdict, simulate, stacked_equivalence
from .synthesis import DesignError, check_theorem1, check_theorem2, design_gains

log = logging.getLogger("consensus_forge")

COMMANDS = ("validate", "tree", "reduce", "design", "check", "simulate", "report")
EXIT_OK, EXIT_ERROR, EXIT_FAIL = 0, 1, 2


class UsageError(Exception):
    pass


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


class Run:
    """Lazily computed pieces of one invocation."""

    def __init__(self, cfg: RunConfig, protocol=None, rate=None, seed=0):
        self.cfg = cfg
        self.system = cfg.system
        self.protocol = protocol or cfg.protocol
        self.rate = rate if rate is not None else cfg.design_rate
        self.seed = seed
        self.tree = find_spanning_tree(self.system.graph, cfg.tree)
        self._gains = None
        self.gains_source = None

    def tolerances(self):
        return dict(self.cfg.tolerances)

    @property
    def gains(self):
        if self._gains is None:
            if self.cfg.gains is not None:
                self._gains, self.gains_source = self.cfg.gains, "config"
            else:
                self._gains, self.gains_source = self.design(), "designed"
        return self._gains

    def design(self):
        G = None if self.cfg.gains is None else self.cfg.gains.G
        return design_gains(self.system, self.tree, G, rate=self.rate, seed=self.seed)

    def check(self):
        tol = self.cfg.tolerances
        if self.protocol == "dst":
            return check_theorem1(self.system, self.tree, self.gains,
                                  tol["hurwitz_margin"], tol["rank_tol_scale"])
        return check_theorem2(self.system, self.tree, self.gains, tol["hurwitz_margin"],
                              tol["rank_tol_scale"], tol["gerschgorin_grid"])

    def tree_payload(self):
        t = self.tree
        return {
            "source": "config" if self.cfg.tree is not None else "breadth-first",
            "parent": {str(i): t.parent[i] for i in sorted(t.parent)},
            "edges": [list(e) for e in sorted(t.tree_edges, key=lambda e: e[1])],
            "internal_order": list(t.label_order),
        }

    def reduce_payload(self):
        tol = self.cfg.tolerances
        red = reduce_system(self.system, self.tree, self.gains, self.protocol, tol["rank_tol_scale"])
        m = tol["hurwitz_margin"]
        return {
            "protocol": self.protocol,
            "s": red.s,
            "h": red.h,
            "rank_tau": red.tau,
            "L1": red.L1,
            "L3": red.L3,
            "L1_Dbar_L3": red.tail,
            "abscissae": {
                "M": is_hurwitz(red.closed_loop.M, m).to_dict(),
                "Abar": is_hurwitz(red.Abar, m).to_dict(),
                "L1_Dbar_L3": is_hurwitz(red.tail, m).to_dict(),
                "Mbar": is_hurwitz(red.Mbar, m).to_dict(),
            },
        }

    def simulate_payload(self, out_dir):
        sc = self.cfg.simulation_config(self.seed)
        t0 = time.perf_counter()
        trace = simulate(self.system, self.tree, self.gains, self.protocol, sc)
        elapsed = time.perf_counter() - t0
        verdict = consensus_verdict(trace, self.cfg.sim["epsilon"], self.cfg.sim["window"])
        dev = stacked_equivalence(self.system, self.tree, self.gains, self.protocol, sc, trace)
        payload = {
            "consensus": verdict.to_dict(),
            "diverged": trace.diverged,
            "t_final": float(trace.times[-1]) if trace.times.size else None,
            "final_errors": {str(i): e for i, e in zip(trace.followers, trace.errors[-1])} if trace.times.size else {},
            "final_rel_errors": {str(i): e for i, e in zip(trace.followers, trace.rel_errors[-1])} if trace.times.size else {},
            "stacked_deviation": dev,
            "integration_seconds": elapsed,
            "kernel_backend": kernels.BACKEND,
            "settings": {**self.cfg.sim, "used_random_initial_states": self.cfg.initial_states is None},
        }
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
            write_csv(trace, out_dir / "trace.csv")
            write_svg(trace, out_dir / "errors.svg")
            payload["artifacts"] = [str(out_dir / "trace.csv"), str(out_dir / "errors.svg")]
        return payload, verdict.achieved


def run_command(cmd, cfg: RunConfig, out=None, protocol=None, rate=None, seed=0):
    """Execute one subcommand; returns ``(exit_status, payload)``."""
    if cmd not in COMMANDS:
        raise UsageError(f"unknown command {cmd!r}; choose from {', '.join(COMMANDS)}")
    out_dir = Path(out) if out is not None else None
    run = Run(cfg, protocol, rate, seed)
    payload = {"command": cmd, "config": cfg.echo(), "protocol": run.protocol,
               "tolerances": run.tolerances()}
    status = EXIT_OK

    if cmd == "validate":
        s = cfg.system
        payload["system"] = {"n": s.n, "m": s.m, "N": s.N, "edges": len(s.graph.edges), "valid": True}
        payload["tree"] = run.tree_payload()
    elif cmd == "tree":
        payload["tree"] = run.tree_payload()
    elif cmd == "reduce":
        payload["reduction"] = run.reduce_payload()
        payload["gains_source"] = run.gains_source
    elif cmd == "design":
        designed = run.design()
        run._gains, run.gains_source = designed, "designed"
        payload["fragment"] = gains_fragment(designed)
        report = run.check()
        payload["verification"] = report.to_dict()
        status = EXIT_OK if report.overall else EXIT_FAIL
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
            (out_dir / "gains.json").write_text(json.dumps(payload["fragment"], indent=2) + "\n")
    elif cmd == "check":
        report = run.check()
        payload["gains_source"] = run.gains_source
        payload["report"] = report.to_dict()
        status = EXIT_OK if report.overall else EXIT_FAIL
    elif cmd == "simulate":
        sim, achieved = run.simulate_payload(out_dir if out_dir is not None else Path("."))
        payload["gains_source"] = run.gains_source
        payload["simulation"] = sim
        status = EXIT_OK if achieved else EXIT_FAIL
    elif cmd == "report":
        out_dir = out_dir if out_dir is not None else Path(".")
        s = cfg.system
        payload["system"] = {"n": s.n, "m": s.m, "N": s.N, "edges": len(s.graph.edges), "valid": True}
        payload["tree"] = run.tree_payload()
        payload["gains"] = run.gains.to_dict()
        payload["gains_source"] = run.gains_source
        payload["reduction"] = run.reduce_payload()
        report = run.check()
        payload["report"] = report.to_dict()
        sim, achieved = run.simulate_payload(out_dir)
        payload["simulation"] = sim
        status = EXIT_OK if (report.overall and achieved) else EXIT_FAIL

    payload["exit_status"] = status
    payload = _jsonable(payload)
    if out_dir is not None and cmd in ("check", "simulate", "report", "reduce", "design"):
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.json").write_text(json.dumps(payload, indent=2) + "\n")
    return status, payload


def build_parser():
    p = argparse.ArgumentParser(
        prog="consensus-forge",
        description="Design and verify leader-following consensus gains for matrix-weighted networks.",
    )
    p.add_argument("cmd", choices=COMMANDS)
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--out", help="directory for report.json, trace.csv, errors.svg")
    p.add_argument("--protocol", choices=("dst", "all-neighbors"), help="override the configured protocol")
    p.add_argument("--rate", type=float, help="pole placement rate for gain design (overrides config)")
    p.add_argument("--seed", type=int, default=0,
                   help="seed for random initial states and multi-input projections")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.rate is not None and not args.rate > 0:
        parser.error("--rate must be positive")
    try:
        cfg = parse_config(args.config)
        status, payload = run_command(args.cmd, cfg, args.out, args.protocol, args.rate, args.seed)
    except (ConfigError, ModelError, DesignError, SimulationError, UsageError) as exc:
        print(f"consensus-forge: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (ReductionError, EigenSolverError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"consensus-forge: numerical error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    print(json.dumps(payload, indent=2))
    return status


if __name__ == "__main__":
    sys.exit(main())
