"""Command line entry point.

``chaincontrol run scenario.json`` runs a scenario file; the other
subcommands build the equivalent scenario from flags.  Exit codes: 0 ok,
1 topology not controllable, 2 input error, 3 numerical-contract failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .artifacts import dumps_json
from .scenarios import (EXIT_INPUT, FIGURES, SUITES, Scenario, ScenarioError, load_scenario,
                        run_scenario, schema_document, validate)

TOL_ENV = "CHAINCONTROL_TOL"


def _tolerance(arg: float | None) -> float:
    if arg is not None:
        return arg
    env = os.environ.get(TOL_ENV)
    if env:
        try:
            return float(env)
        except ValueError:
            raise ScenarioError(f"{TOL_ENV}={env!r} is not a number") from None
    return 1e-9


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out-dir", default=".", help="directory for artifacts (default: .)")
    common.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    common.add_argument("--tol", type=float, default=None,
                        help=f"integrator tolerance (default: ${TOL_ENV} or 1e-9)")
    common.add_argument("--json-summary", action="store_true",
                        help="print a machine-readable summary instead of text lines")
    common.add_argument("--name", default=None, help="artifact name stem")

    ap = argparse.ArgumentParser(prog="chaincontrol",
                                 description="Optimal transfer through decaying chains.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="run a JSON scenario")
    p.add_argument("scenario", type=Path)

    p = sub.add_parser("three-level", parents=[common], help="three-level optimum and pulses")
    p.add_argument("--k", type=float, required=True)
    p.add_argument("--A", type=float, default=1.0)
    p.add_argument("--T", type=float, required=True)
    p.add_argument("--n-samples", type=int, default=201)
    p.add_argument("--trajectory", action="store_true")
    p.add_argument("--stirap-T", type=float, default=None,
                   help="also run the adiabatic dark-state pulses over this horizon")
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--phi", type=float, default=None)

    p = sub.add_parser("four-level", parents=[common], help="four-level optimum and pulses")
    p.add_argument("--k", type=float, required=True)
    p.add_argument("--A", type=float, default=1.0)
    p.add_argument("--T", type=float, required=True)
    p.add_argument("--n-samples", type=int, default=201)

    p = sub.add_parser("chain-bound", parents=[common], help="efficiency bound of a uniform chain")
    p.add_argument("--n-levels", type=int, required=True)
    p.add_argument("--k", type=float, required=True)
    p.add_argument("--A", type=float, default=1.0)
    p.add_argument("--T", type=float, default=None)

    p = sub.add_parser("topology", parents=[common], help="controllability of a coupling graph")
    p.add_argument("graph", type=Path, help="JSON with nodes, edges and subspace")

    p = sub.add_parser("verify", parents=[common], help="adversarial checks of the optima")
    p.add_argument("--suite", choices=SUITES, default="all")
    p.add_argument("--n-trials", type=int, default=200)
    p.add_argument("--n-segments", type=int, default=32)
    p.add_argument("--n-inits", type=int, default=3)
    p.add_argument("--workers", type=int, default=None)

    p = sub.add_parser("figure", parents=[common], help="figure data as CSV")
    p.add_argument("figure", choices=FIGURES)

    sub.add_parser("schema", help="print the scenario JSON schema")
    return ap


def _scenario_from_args(a) -> Scenario:
    if a.command == "run":
        sc = load_scenario(a.scenario)
        return Scenario(sc.kind, a.name or sc.name, sc.params) if a.name else sc
    if a.command == "three-level":
        params = {"k": a.k, "A": a.A, "T": a.T, "n_samples": a.n_samples, "trajectory": a.trajectory}
        if a.stirap_T is not None:
            st = {"T": a.stirap_T}
            if a.beta is not None:
                st["beta"] = a.beta
            if a.phi is not None:
                st["phi"] = a.phi
            params["stirap"] = st
        kind = "three-level"
    elif a.command == "four-level":
        params = {"k": a.k, "A": a.A, "T": a.T, "n_samples": a.n_samples}
        kind = "four-level"
    elif a.command == "chain-bound":
        params = {"n_levels": a.n_levels, "k": a.k, "A": a.A}
        if a.T is not None:
            params["T"] = a.T
        kind = "n-chain-bound"
    elif a.command == "topology":
        try:
            graph = json.loads(a.graph.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ScenarioError(f"{a.graph}: no such file") from None
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{a.graph}: invalid JSON ({exc})") from None
        params = {"graph": graph}
        kind = "topology"
    elif a.command == "verify":
        params = {"suite": a.suite, "n_trials": a.n_trials, "n_segments": a.n_segments,
                  "n_inits": a.n_inits}
        if a.workers:
            params["workers"] = a.workers
        kind = "verify"
    else:
        params = {"figure": a.figure}
        kind = "figure"
    name = a.name or (a.figure if kind == "figure" else kind)
    return validate({"version": 1, "kind": kind, "name": name, "params": params})


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    a = ap.parse_args(argv)
    if a.command == "schema":
        sys.stdout.write(dumps_json(schema_document()))
        return 0
    try:
        tol = _tolerance(a.tol)
        if not 0.0 < tol <= 1e-3:
            raise ScenarioError(f"tolerance must lie in (0, 1e-3], got {tol}")
        sc = _scenario_from_args(a)
    except ScenarioError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    res = run_scenario(sc, a.out_dir, seed=a.seed, tol=tol)
    if a.json_summary:
        sys.stdout.write(dumps_json({"exit_code": res.exit_code, "scenario": sc.name,
                                     "kind": sc.kind, "artifacts": sorted(res.artifacts),
                                     "results": res.summary, "lines": list(res.lines)}))
    else:
        stream = sys.stdout if res.exit_code in (0, 1) else sys.stderr
        for line in res.lines:
            print(line, file=stream)
    return res.exit_code


if __name__ == "__main__":
    sys.exit(main())
