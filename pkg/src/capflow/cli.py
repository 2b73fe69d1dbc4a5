"""Command-line front end: capflow run | solve | verify | export.

Exit codes: 0 success/converged, 2 step budget exhausted, 1 run or solve
failure, 64 invalid configuration.  Heavy numerical imports happen inside
the command handlers so the CAPFLOW_THREADS environment variable can cap
the BLAS thread pools before numpy loads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_MAX_STEPS = 2
EXIT_CONFIG = 64


def _apply_thread_env() -> None:
    n = os.environ.get("CAPFLOW_THREADS")
    if n:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, n)


def _load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}")


class ConfigError(Exception):
    pass


def _build_density(doc, mesh=None, rng_note=None):
    """DensitySpec from its JSON description; 'random' kinds draw a smooth
    positive polynomial density from the recorded seed."""
    import numpy as np

    from .functionals import DensitySpec

    if not isinstance(doc, dict) or "kind" not in doc:
        raise ConfigError("density must be an object with a 'kind' field")
    kind = doc["kind"]
    if kind == "random":
        if mesh is None:
            raise ConfigError("random density needs a mesh; internal error")
        seed = int(doc.get("seed", 0))
        amp = float(doc.get("amplitude", 0.2))
        even = bool(doc.get("even", True))
        rng = np.random.default_rng(seed)
        xi = mesh.nodes
        monomials = [xi[:, 0] ** 2, xi[:, -1], xi[:, 0] ** 2 * xi[:, -1]]
        if mesh.dim == 2:
            monomials += [xi[:, 1] ** 2, xi[:, 0] * xi[:, 1]]
        if not even:
            monomials += [xi[:, 0], xi[:, 0] * xi[:, -1]]
            if mesh.dim == 2:
                monomials += [xi[:, 1]]
        coeffs = rng.uniform(-1.0, 1.0, size=len(monomials))
        shape = sum(c * mnl for c, mnl in zip(coeffs, monomials))
        shape = shape / max(1.0, float(np.max(np.abs(shape))))
        values = float(doc.get("c", 1.0)) * (1.0 + amp * shape)
        if rng_note is not None:
            rng_note["density_seed"] = seed
        return DensitySpec(kind="tabulated", values=values)
    if kind == "tabulated":
        return DensitySpec(kind="tabulated", values=np.asarray(doc["values"], dtype=float))
    return DensitySpec(
        kind=kind,
        c=float(doc.get("c", 1.0)),
        q=float(doc.get("q", 0.0)),
        eps=float(doc.get("eps", 0.0)),
    )


def _flow_config(doc: dict, note: dict):
    from .flows import FlowConfig
    from .mesh import build_cap_mesh

    try:
        theta = float(doc["theta"])
        dim = int(doc["dim"])
        resolution = tuple(int(r) for r in doc["resolution"])
    except KeyError as exc:
        raise ConfigError(f"missing required config field: {exc.args[0]}")
    mesh = build_cap_mesh(theta, dim, resolution)
    density = _build_density(doc.get("density", {"kind": "constant"}), mesh, note)
    initial = doc.get("initial", {})
    h0_values = None
    if "checkpoint" in initial:
        from .storage import load_checkpoint

        field, _, _ = load_checkpoint(initial["checkpoint"])
        if field.mesh.resolution != mesh.resolution or field.mesh.theta != theta:
            raise ConfigError(
                "checkpoint mesh does not match the configured resolution/theta"
            )
        h0_values = field.values
    cfg = FlowConfig(
        flow_kind=doc.get("flow_kind", "normalized"),
        p=float(doc.get("p", 2.0)),
        theta=theta,
        dim=dim,
        resolution=resolution,
        f=density,
        dt_init=float(doc.get("dt_init", 1e-4)),
        dt_min=float(doc.get("dt_min", 1e-14)),
        dt_max=float(doc.get("dt_max", 0.25)),
        cfl_safety=float(doc.get("cfl_safety", 0.8)),
        tol_stationary=float(doc.get("tol_stationary", 1e-5)),
        tol_volume_drift=float(doc.get("tol_volume_drift", 1e-3)),
        max_steps=int(doc.get("max_steps", 50000)),
        enforce_even=bool(doc.get("enforce_even", False)),
        h0_scale=float(initial.get("scale", 1.0)),
        h0_bump=float(initial.get("bump", 0.0)),
        h0_bump_kind=initial.get("bump_kind", "even"),
        h0_values=h0_values,
        record_every=int(doc.get("record_every", 1)),
        renormalize_volume=bool(doc.get("renormalize_volume", True)),
    )
    cfg.validate()
    return cfg, mesh


def _write_run_outputs(out_dir, solver, result, config_doc, note, wall):
    from . import __version__
    from .state import curvature, embed
    from .storage import (
        mesh_fingerprint,
        save_checkpoint,
        write_atomic_json,
        write_diagnostics_csv,
        write_embedding_csv,
    )
    from .mesh import mesh_to_json

    os.makedirs(out_dir, exist_ok=True)
    state = result.state
    write_diagnostics_csv(state.history, os.path.join(out_dir, "diagnostics.csv"))
    with open(os.path.join(out_dir, "mesh.json"), "w") as fh:
        fh.write(mesh_to_json(solver.mesh))
    points = embed(state.h, solver.ops)
    write_embedding_csv(
        solver.mesh, points, curvature(state.h, solver.ops),
        os.path.join(out_dir, "embedding.csv"),
    )
    save_checkpoint(
        os.path.join(out_dir, "final_field"),
        state.h,
        meta={"tau": state.tau, "t": state.t, "step_index": state.step_index,
              "V0": solver.V0, "outcome": result.outcome},
        history=state.history,
    )
    manifest = {
        "command": "run",
        "config": config_doc,
        "code_version": __version__,
        "mesh_fingerprint": mesh_fingerprint(solver.mesh),
        "outcome": result.outcome,
        "message": result.message,
        "origin_in_flat_face": result.origin_ok,
        "final_residuals": {
            "stationary": state.residual,
            "robin": solver.ops.robin_residual(state.h.values),
        },
        "steps": state.step_index,
        "wall_time_s": wall,
    }
    manifest.update(note)
    write_atomic_json(manifest, os.path.join(out_dir, "manifest.json"))


def cmd_run_flow(args) -> int:
    from .errors import CapflowError
    from .flows import FlowSolver

    note: dict = {}
    try:
        doc = _load_config(args.config)
        cfg, mesh = _flow_config(doc, note)
        solver = FlowSolver(cfg, mesh=mesh)
    except (ConfigError, CapflowError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    t0 = time.time()
    try:
        result = solver.run()
    except CapflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED
    _write_run_outputs(args.out, solver, result, doc, note, time.time() - t0)
    print(
        f"{result.outcome}: steps={result.state.step_index} "
        f"residual={result.state.residual:.3e}"
    )
    if result.outcome in ("converged", "extinction_floor"):
        return EXIT_OK
    if result.outcome == "max_steps":
        return EXIT_MAX_STEPS
    return EXIT_FAILED


def cmd_solve_elliptic(args) -> int:
    from . import __version__
    from .errors import CapflowError, NewtonFailureError
    from .mesh import build_cap_mesh, mesh_to_json
    from .newton import NewtonConfig, solve_stationary
    from .state import curvature, embed
    from .storage import (
        mesh_fingerprint,
        save_checkpoint,
        write_atomic_json,
        write_embedding_csv,
    )

    note: dict = {}
    try:
        doc = _load_config(args.config)
        theta = float(doc["theta"])
        dim = int(doc["dim"])
        mesh = build_cap_mesh(theta, dim, tuple(int(r) for r in doc["resolution"]))
        density = _build_density(doc.get("density", {"kind": "constant"}), mesh, note)
        mode = doc.get("mode", "unnormalized")
        v0 = doc.get("V0")
        damping = doc.get("damping", [1.0, 0.5])
        ncfg = NewtonConfig(
            tol_residual=float(doc.get("tol_residual", 1e-11)),
            max_iters=int(doc.get("max_iters", 40)),
            damping_init=float(damping[0]),
            damping_ratio=float(damping[1]),
            continuation_steps=int(doc.get("continuation_steps", 5)),
        )
        p = float(doc["p"])
        if mode == "normalized" and (v0 is None or float(v0) <= 0.0):
            raise ConfigError("normalized mode requires a positive V0")
    except (KeyError, ConfigError, CapflowError) as exc:
        key = exc.args[0] if isinstance(exc, KeyError) else exc
        print(f"error: {key}", file=sys.stderr)
        return EXIT_CONFIG
    t0 = time.time()
    try:
        out = solve_stationary(
            density, p, theta, mesh, mode=mode,
            V0=float(v0) if v0 is not None else None, config=ncfg,
        )
    except NewtonFailureError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "mesh.json"), "w") as fh:
        fh.write(mesh_to_json(mesh))
    from .operators import frame_operators

    ops = frame_operators(mesh)
    write_embedding_csv(
        mesh, embed(out.h, ops), curvature(out.h, ops),
        os.path.join(args.out, "embedding.csv"),
    )
    save_checkpoint(
        os.path.join(args.out, "final_field"), out.h,
        meta={"residual": out.residual, "iterations": out.iterations,
              "alpha": out.alpha},
    )
    manifest = {
        "command": "solve",
        "config": doc,
        "code_version": __version__,
        "mesh_fingerprint": mesh_fingerprint(mesh),
        "outcome": "converged",
        "final_residuals": {"stationary": out.residual},
        "iterations": out.iterations,
        "newton_trace": out.trace,
        "wall_time_s": time.time() - t0,
    }
    manifest.update(note)
    write_atomic_json(manifest, os.path.join(args.out, "manifest.json"))
    print(f"converged: iterations={out.iterations} residual={out.residual:.3e}")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verification import SUITES, run_suite

    if args.suite not in SUITES and args.suite != "all":
        print(
            f"error: unknown suite {args.suite!r}; expected one of "
            f"{sorted(SUITES)} or 'all'",
            file=sys.stderr,
        )
        return EXIT_CONFIG
    names = sorted(SUITES) if args.suite == "all" else [args.suite]
    all_pass = True
    for name in names:
        results = run_suite(name)
        for check in results:
            status = "PASS" if check.passed else "FAIL"
            print(f"[{status}] {name}/{check.name}: {check.detail}")
            all_pass &= check.passed
    return EXIT_OK if all_pass else EXIT_FAILED


def cmd_export(args) -> int:
    from .errors import CapflowError
    from .mesh import mesh_to_json
    from .operators import frame_operators
    from .state import curvature, embed
    from .storage import (
        save_checkpoint,
        write_atomic_json,
        write_diagnostics_csv,
        write_embedding_csv,
        DIAGNOSTIC_COLUMNS,
        load_checkpoint,
    )

    base = args.checkpoint
    if base.endswith(".json"):
        base = base[:-5]
    try:
        h, meta, history = load_checkpoint(base)
    except (OSError, CapflowError, ValueError) as exc:
        print(f"error: cannot load checkpoint {base!r}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    os.makedirs(args.out, exist_ok=True)
    ops = frame_operators(h.mesh)
    points = embed(h, ops)
    curv = curvature(h, ops)
    if args.format == "csv":
        write_embedding_csv(h.mesh, points, curv, os.path.join(args.out, "embedding.csv"))
        if history:
            write_diagnostics_csv(history, os.path.join(args.out, "diagnostics.csv"))
    else:
        doc = {
            "embedding": points.tolist(),
            "kappas": curv.kappas.tolist(),
            "gauss": curv.gauss.tolist(),
            "diagnostics": {
                "columns": DIAGNOSTIC_COLUMNS,
                "rows": [[getattr(r, c) for c in DIAGNOSTIC_COLUMNS] for r in history],
            },
        }
        write_atomic_json(doc, os.path.join(args.out, "export.json"))
    with open(os.path.join(args.out, "mesh.json"), "w") as fh:
        fh.write(mesh_to_json(h.mesh))
    save_checkpoint(os.path.join(args.out, "final_field"), h, meta=meta,
                    history=history or None)
    print(f"exported {h.mesh.n_nodes} nodes to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="capflow",
        description="Gauss-curvature-type flows and stationary solvers on a spherical cap",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="time-step a configured flow")
    p_run.add_argument("--config", required=True, help="JSON flow configuration")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.set_defaults(func=cmd_run_flow)

    p_solve = sub.add_parser("solve", help="solve the stationary problem by Newton")
    p_solve.add_argument("--config", required=True, help="JSON solver configuration")
    p_solve.add_argument("--out", required=True, help="output directory")
    p_solve.set_defaults(func=cmd_solve_elliptic)

    p_verify = sub.add_parser("verify", help="run a named verification suite")
    p_verify.add_argument("--suite", required=True,
                          help="geometry|monotonicity|conservation|barrier|oracle|all")
    p_verify.set_defaults(func=cmd_verify)

    p_export = sub.add_parser("export", help="re-emit geometry/diagnostics from a checkpoint")
    p_export.add_argument("--checkpoint", required=True, help="checkpoint base path")
    p_export.add_argument("--format", default="csv", choices=("csv", "json"))
    p_export.add_argument("--out", required=True, help="output directory")
    p_export.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    _apply_thread_env()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
