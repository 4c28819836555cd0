"""Command-line front end: configuration, synthesis caching, runs, export.

Exit codes: 0 clean, 2 configuration error, 3 synthesis rejection,
4 falsification or constraint violation in a run.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import sim, synthesis
from .geometry import Polytope
from .model import ModelError, ParamHull, PlantModel
from .sim import Scenario, SimError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SYNTHESIS = 3
EXIT_FALSIFIED = 4

OUT_DIR_ENV = "ADAMPC_OUT_DIR"


class ConfigError(ValueError):
    pass


def _matrix(doc, path, rows=None, cols=None) -> np.ndarray:
    node = doc
    for key in path.split("."):
        if not isinstance(node, dict) or key not in node:
            raise ConfigError(f"missing config field: {path}")
        node = node[key]
    try:
        M = np.array(node, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"field {path} is not a numeric matrix: {exc}") from exc
    if M.ndim != 2:
        raise ConfigError(f"field {path} must be a matrix (list of rows)")
    if rows is not None and M.shape[0] != rows:
        raise ConfigError(f"field {path} must have {rows} rows, got {M.shape[0]}")
    if cols is not None and M.shape[1] != cols:
        raise ConfigError(f"field {path} must have {cols} columns, got {M.shape[1]}")
    return M


def _scalar(doc, path, cast=float, required=True, default=None):
    node = doc
    for key in path.split("."):
        if not isinstance(node, dict) or key not in node:
            if required:
                raise ConfigError(f"missing config field: {path}")
            return default
        node = node[key]
    try:
        return cast(node)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"field {path} has invalid value {node!r}") from exc


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a mapping")
    return doc


def scenario_from_config(doc: dict) -> Scenario:
    A = _matrix(doc, "plant.A")
    n = A.shape[0]
    if A.shape[1] != n:
        raise ConfigError("field plant.A must be square")
    B = _matrix(doc, "plant.B", rows=n)
    m = B.shape[1]
    plant = PlantModel(A, B)

    vertices = doc.get("uncertainty", {}).get("vertices")
    if not isinstance(vertices, list) or not vertices:
        raise ConfigError("missing config field: uncertainty.vertices")
    pairs = []
    for i, v in enumerate(vertices):
        if not isinstance(v, dict):
            raise ConfigError(f"uncertainty.vertices[{i}] must have A and B")
        pairs.append(
            (
                _matrix({"v": v}, "v.A", rows=n, cols=n),
                _matrix({"v": v}, "v.B", rows=n, cols=m),
            )
        )
    if _scalar(doc, "uncertainty.interval_hull", cast=bool, required=False, default=True):
        hull = ParamHull.interval_from_pairs(pairs)
    else:
        hull = ParamHull.from_pairs(pairs)

    for name in ("state_bound", "input_bound", "input_rate_bound"):
        if _scalar(doc, f"constraints.{name}") <= 0:
            raise ConfigError(f"field constraints.{name} must be positive")

    ref_points = _matrix(doc, "reference.points", cols=n)
    switch = doc.get("reference", {}).get("switch_steps", [])
    if not isinstance(switch, list):
        raise ConfigError("field reference.switch_steps must be a list")

    theta0 = None
    if "initial_estimate" in doc:
        theta0 = np.hstack(
            [
                _matrix(doc, "initial_estimate.A", rows=n, cols=n),
                _matrix(doc, "initial_estimate.B", rows=n, cols=m),
            ]
        )

    return Scenario(
        plant=plant,
        hull=hull,
        X=Polytope.inf_ball(_scalar(doc, "constraints.state_bound"), n),
        U=Polytope.inf_ball(_scalar(doc, "constraints.input_bound"), m),
        U_delta=Polytope.inf_ball(_scalar(doc, "constraints.input_rate_bound"), m),
        ref_points=ref_points,
        switch_steps=[int(s) for s in switch],
        N=_scalar(doc, "horizon", cast=int),
        Q=_matrix(doc, "weights.Q", rows=n, cols=n),
        R=_matrix(doc, "weights.R", rows=m, cols=m),
        lam=_scalar(doc, "adaptation.lam"),
        alpha=_scalar(doc, "adaptation.alpha"),
        gamma=_scalar(doc, "gamma", required=False, default=0.9),
        T=_scalar(doc, "run.T", cast=int),
        seed=_scalar(doc, "run.seed", cast=int),
        tube_scale=_scalar(doc, "tube_scale", required=False, default=1.0),
        du_inflation=_scalar(doc, "du_inflation", required=False, default=1.0),
        x0_margin=_scalar(doc, "run.x0_margin", required=False, default=0.9),
        theta_hat0=theta0,
    )


def dump_config(doc: dict, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)


def synthesis_hash(doc: dict) -> str:
    """Content hash over the fields that determine the synthesis artifact."""
    relevant = {
        key: doc.get(key)
        for key in (
            "uncertainty",
            "constraints",
            "reference",
            "horizon",
            "weights",
            "adaptation",
            "gamma",
            "tube_scale",
            "du_inflation",
        )
    }
    blob = yaml.safe_dump(relevant, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _default_out_dir(args) -> Path:
    if args.out_dir:
        return Path(args.out_dir)
    return Path(os.environ.get(OUT_DIR_ENV, "out"))


def _apply_overrides(scenario: Scenario, args) -> Scenario:
    if getattr(args, "gamma", None) is not None:
        scenario.gamma = args.gamma
    if getattr(args, "horizon", None) is not None:
        scenario.N = args.horizon
    if getattr(args, "seed", None) is not None:
        scenario.seed = args.seed
    return scenario


def cmd_synthesize(args) -> int:
    try:
        doc = load_config(args.config)
        scenario = _apply_overrides(scenario_from_config(doc), args)
    except (ConfigError, ModelError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = _default_out_dir(args)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        prepared = sim.prepare(scenario)
    except (synthesis.SynthesisError, SimError) as exc:
        print(f"synthesis rejected: {exc}", file=sys.stderr)
        return EXIT_SYNTHESIS
    path = out_dir / f"artifact-{synthesis_hash(doc)}.txt"
    synthesis.save_artifact(prepared.synthesis, path)
    res = prepared.synthesis
    print(f"artifact written: {path}")
    print("vertex margins (min/max over hull): "
          f"{res.gains.vertex_margins.min():.6g} / {res.gains.vertex_margins.max():.6g}")
    print("tube radii:")
    for i, ball in enumerate(res.tubes.z_theta):
        print(f"  step {i}: {ball.radius:.17g}")
    print(f"  prediction-error ball: {res.tubes.z_xtilde.radius:.17g}")
    print(f"scalars: h_u={res.stacked.h_u:.6g} h_delta_u={res.stacked.h_delta_u:.6g} "
          f"h_v={res.stacked.h_v:.6g} h_delta_v={res.stacked.h_delta_v:.6g}")
    return EXIT_OK


def _split_runs(total: int) -> tuple[int, int]:
    root = int(round(total**0.5))
    if root * root == total:
        return root, root
    return total, 1


def cmd_run(args) -> int:
    try:
        doc = load_config(args.config)
        scenario = _apply_overrides(scenario_from_config(doc), args)
    except (ConfigError, ModelError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = _default_out_dir(args)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        prepared = sim.prepare(scenario)
    except (synthesis.SynthesisError, SimError) as exc:
        print(f"synthesis rejected: {exc}", file=sys.stderr)
        return EXIT_SYNTHESIS
    artifact = out_dir / f"artifact-{synthesis_hash(doc)}.txt"
    if not artifact.exists():
        synthesis.save_artifact(prepared.synthesis, artifact)

    n_x0 = _scalar(doc, "run.n_initial_states", cast=int, required=False, default=10)
    n_th = _scalar(doc, "run.n_initial_estimates", cast=int, required=False, default=10)
    if args.runs is not None:
        n_x0, n_th = _split_runs(args.runs)
    summary = sim.monte_carlo(scenario, n_x0, n_th, prepared=prepared)
    sim.write_outputs(summary, out_dir)
    print(
        f"runs: {summary.n_runs}  violations: {summary.violation_count}  "
        f"falsifications: {summary.falsification_count}  "
        f"initially-infeasible: {summary.initially_infeasible_count}"
    )
    print(f"max terminal tracking error: {summary.max_terminal_tracking_error:.6g}")
    print(f"mean estimator decay: {summary.mean_estimator_decay:.6g}")
    if summary.violation_count or summary.falsification_count:
        return EXIT_FALSIFIED
    return EXIT_OK


PLOT_FAMILIES = {
    "states": ["x1", "x2", "xr1", "xr2"],
    "error_states": ["xe1", "xe2", "s1", "s2"],
    "control_input": ["u1", "u2"],
    "input_rate": ["du1", "du2"],
    "estimation_error": ["theta_err"],
}


def cmd_export_plots(args) -> int:
    out_dir = _default_out_dir(args)
    run_files = sorted(out_dir.glob("run_*.csv"))
    if not run_files:
        print(f"no run data found in {out_dir}", file=sys.stderr)
        return EXIT_CONFIG
    plots = out_dir / "plots"
    plots.mkdir(exist_ok=True)
    for family, channels in PLOT_FAMILIES.items():
        with open(plots / f"{family}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["time", "series", "value"])
            for rf in run_files:
                run_name = rf.stem
                with open(rf) as rfh:
                    for row in csv.DictReader(rfh):
                        for ch in channels:
                            writer.writerow(
                                [row["k"], f"{run_name}/{ch}", row[ch]]
                            )
    print(f"plot data written to {plots} ({len(PLOT_FAMILIES)} series groups)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adampc",
        description="Adaptive MPC trajectory-tracking toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="scenario YAML file")
        p.add_argument("--out-dir", default=None,
                       help=f"output directory (default ${OUT_DIR_ENV} or ./out)")
        p.add_argument("--gamma", type=float, default=None,
                       help="override contraction factor")
        p.add_argument("--horizon", type=int, default=None,
                       help="override prediction horizon")
        p.add_argument("--seed", type=int, default=None, help="override RNG seed")

    p_syn = sub.add_parser("synthesize", help="run offline synthesis and cache the artifact")
    common(p_syn)
    p_syn.set_defaults(func=cmd_synthesize)

    p_run = sub.add_parser("run", help="run the Monte Carlo closed-loop study")
    common(p_run)
    p_run.add_argument("--runs", type=int, default=None,
                       help="total run count (perfect squares split evenly)")
    p_run.set_defaults(func=cmd_run)

    p_exp = sub.add_parser("export-plots", help="emit tidy long-format plot data")
    p_exp.add_argument("--out-dir", default=None,
                       help=f"run output directory (default ${OUT_DIR_ENV} or ./out)")
    p_exp.set_defaults(func=cmd_export_plots)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
