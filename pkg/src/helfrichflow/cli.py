"""Command-line interface.

Subcommands: flow, energy, spheres, transport, validate.
Exit codes: 0 success, 1 numerical failure, 2 usage or validation error.
HELFRICH_THREADS caps internal parallelism (torch kernels and any
late-initialized thread pools).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time


def _apply_thread_cap() -> int | None:
    raw = os.environ.get("HELFRICH_THREADS")
    if not raw:
        return None
    try:
        threads = max(1, int(raw))
    except ValueError:
        print(f"HELFRICH_THREADS: expected an integer, got {raw!r}", file=sys.stderr)
        return None
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(threads))
    try:
        import torch

        torch.set_num_threads(threads)
    except ImportError:
        pass
    return threads


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="helfrich",
        description="Bending-energy gradient flow on oriented varifolds "
        "via Wasserstein minimizing movements",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_flow = sub.add_parser("flow", help="run a minimizing-movements trajectory")
    p_flow.add_argument("config", help="TOML or JSON run configuration")
    p_flow.add_argument("--force", action="store_true",
                        help="overwrite an existing output directory")
    p_flow.set_defaults(func=cmd_flow)

    p_energy = sub.add_parser("energy", help="evaluate energies and bounds of a mesh")
    p_energy.add_argument("mesh", help="OFF or OBJ triangle mesh")
    p_energy.add_argument("--beta", type=float, default=1.0)
    p_energy.add_argument("--gamma", type=float, default=0.0)
    p_energy.add_argument("--h0", type=float, default=0.0)
    p_energy.add_argument("--m0", type=float, default=None,
                          help="prescribed mass (default: mesh mass)")
    p_energy.add_argument("--theta-plus", "-k", type=int, default=1)
    p_energy.add_argument("--theta-minus", type=int, default=0)
    p_energy.add_argument("--genus", type=int, default=None)
    p_energy.set_defaults(func=cmd_energy)

    p_spheres = sub.add_parser("spheres", help="covered-sphere energy table and argmin")
    p_spheres.add_argument("--beta", type=float, required=True)
    p_spheres.add_argument("--gamma", type=float, default=0.0)
    p_spheres.add_argument("--h0", type=float, default=0.0)
    p_spheres.add_argument("--m0", type=float, default=4.0 * math.pi)
    p_spheres.add_argument("--k-max", type=int, default=10)
    p_spheres.set_defaults(func=cmd_spheres)

    p_transport = sub.add_parser("transport",
                                 help="Wasserstein distance between particle CSVs")
    p_transport.add_argument("source", help="particle varifold CSV")
    p_transport.add_argument("target", help="particle varifold CSV")
    p_transport.add_argument("--p", type=float, default=2.0)
    p_transport.add_argument("--solver", choices=("exact", "entropic"), default="exact")
    p_transport.add_argument("--epsilon", type=float, default=0.01)
    p_transport.add_argument("--max-iter", type=int, default=20000)
    p_transport.add_argument("--tol", type=float, default=1e-9)
    p_transport.add_argument("--spatial", action="store_true",
                             help="distance between spatial marginals only")
    p_transport.add_argument("--plan-out", default=None,
                             help="write the coupling as CSV (i, j, mass)")
    p_transport.set_defaults(func=cmd_transport)

    p_validate = sub.add_parser("validate", help="run the validation suite")
    p_validate.add_argument("--quick", action="store_true",
                            help="sub-minute subset of the criteria")
    p_validate.add_argument("--criteria", default=None,
                            help="comma-separated criterion numbers, e.g. 1,2,5")
    p_validate.add_argument("--corrupt-sign-hook", action="store_true",
                            help=argparse.SUPPRESS)  # mutation hook for testing
    p_validate.set_defaults(func=cmd_validate)
    return parser


# ---------------------------------------------------------------------------


def cmd_flow(args) -> int:
    from .artifacts import RunManifest, write_svg_lines
    from .config import build_run, load_config
    from .curvature import curvature_field
    from .energy import helfrich_energy, lower_bound_certificate, multiplicity_bound
    from .errors import DomainError
    from .flow import diameter, diameter_bounds, run_flow
    from .meshio import write_off

    t_setup = time.perf_counter()
    config = load_config(args.config)
    setup = build_run(config, base_dir=os.path.dirname(os.path.abspath(args.config)))

    out_dir = setup.output_dir
    manifest_path = os.path.join(out_dir, "manifest.json")
    if os.path.exists(manifest_path) and not args.force:
        raise DomainError(
            f"output directory {out_dir} already holds a run manifest; "
            "use --force to overwrite"
        )
    os.makedirs(out_dir, exist_ok=True)
    manifest = RunManifest(
        config_path=os.path.abspath(args.config),
        config_sha256=setup.config_hash,
        mesh_sha256=setup.mesh_hash,
        seed=setup.seed,
        threads=_THREADS,
    )
    manifest.write(manifest_path)  # partial outputs are never manifest-less
    manifest.wall_clock["setup"] = time.perf_counter() - t_setup

    t_flow = time.perf_counter()
    trace = run_flow(setup.mesh, setup.flow, setup.params)
    manifest.wall_clock["flow"] = time.perf_counter() - t_flow

    t_out = time.perf_counter()
    trace.to_csv(os.path.join(out_dir, "trace.csv"))
    for step, mesh in trace.snapshots:
        write_off(mesh, os.path.join(out_dir, f"snapshot_{step:04d}.off"))

    final_mesh = trace.snapshots[-1][1]
    field = curvature_field(final_mesh)
    breakdown = helfrich_energy(final_mesh, field, setup.params)
    lower, upper = diameter_bounds(final_mesh, field)
    energies = trace.energies
    tol = 1e-10 * (1.0 + abs(energies[0]))
    try:
        kbar = multiplicity_bound(breakdown.total, setup.params, genus=final_mesh.genus)
    except DomainError:
        kbar = None
    summary = {
        "initial_energy": energies[0],
        "final_energy": energies[-1],
        "final_willmore": breakdown.willmore,
        "energy_monotone": bool((energies[1:] - energies[:-1] <= tol).all()),
        "lower_bound_certificate": lower_bound_certificate(final_mesh, field, setup.params),
        "final_diameter": diameter(final_mesh),
        "diameter_lower_bound": lower,
        "diameter_upper_bound": upper,
        "multiplicity_bound": kbar,
        "multiplicity_constant": bool(
            (trace.column("multiplicity") == trace.records[0].multiplicity).all()
        ),
        "final_mass_residual": trace.records[-1].mass_residual,
        "final_volume_residual": trace.records[-1].volume_residual,
        "final_symmetry_defect": trace.records[-1].symmetry_defect,
        "stalled_steps": int(trace.column("stalled").sum()),
        "steps": setup.flow.steps,
        "config_sha256": setup.config_hash,
    }
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")

    steps = trace.column("step")
    write_svg_lines(os.path.join(out_dir, "energy.svg"), "bending energy", "step",
                    "energy", [("energy", steps, energies)])
    write_svg_lines(os.path.join(out_dir, "diameter.svg"), "support diameter", "step",
                    "diameter", [("diameter", steps, trace.column("diameter"))])
    write_svg_lines(os.path.join(out_dir, "increments.svg"), "transport increments",
                    "step", "W_p", [("increment", steps, trace.increments)])
    manifest.wall_clock["outputs"] = time.perf_counter() - t_out
    manifest.write(manifest_path)
    print(out_dir)
    return 0


def cmd_energy(args) -> int:
    from .curvature import curvature_field
    from .energy import helfrich_energy, lower_bound_certificate, multiplicity_bound
    from .errors import DomainError
    from .flow import diameter, diameter_bounds
    from .meshio import load_mesh
    from .varifold import HelfrichParams, enclosed_volume, mass

    mesh = load_mesh(args.mesh, args.theta_plus, args.theta_minus, args.genus)
    m0 = args.m0 if args.m0 is not None else mass(mesh)
    params = HelfrichParams(beta=args.beta, gamma=args.gamma, h0=args.h0, m0=m0)
    field = curvature_field(mesh)
    breakdown = helfrich_energy(mesh, field, params)
    lower, upper = diameter_bounds(mesh, field)
    try:
        kbar = multiplicity_bound(breakdown.total, params, genus=mesh.genus)
    except DomainError:
        kbar = None
    report = {
        "mass": mass(mesh),
        "enclosed_volume": enclosed_volume(mesh),
        "genus": mesh.genus,
        "theta_plus": mesh.theta_plus,
        "theta_minus": mesh.theta_minus,
        "energy": breakdown.as_dict(),
        "lower_bound_certificate": lower_bound_certificate(mesh, field, params),
        "multiplicity_bound": kbar,
        "diameter": diameter(mesh),
        "diameter_lower_bound": lower,
        "diameter_upper_bound": upper,
    }
    json.dump(report, sys.stdout, indent=2, sort_keys=True)
    print()
    return 0


def cmd_spheres(args) -> int:
    from .energy import optimal_sphere, sphere_energy, sphere_radius
    from .varifold import HelfrichParams

    params = HelfrichParams(beta=args.beta, gamma=args.gamma, h0=args.h0, m0=args.m0)
    analytics = optimal_sphere(params)
    picked = set(analytics.argmin_k) if analytics.is_tie else {analytics.argmin_k}
    k_max = max(args.k_max, max(picked))
    print("k,R_k,energy,marker")
    for k in range(1, k_max + 1):
        marker = ""
        if k in picked:
            marker = "tie" if analytics.is_tie else "min"
        print(f"{k},{sphere_radius(k, args.m0)!r},{sphere_energy(k, params)!r},{marker}")
    print(f"# k_star = {analytics.k_star!r}, y_star = {analytics.y_star!r}, "
          f"method = {analytics.method}")
    if (
        analytics.method == "closed_form"
        and not analytics.is_tie
        and analytics.k_star >= 1.0
        and abs(analytics.k_star - round(analytics.k_star)) <= 1e-9 * max(1.0, analytics.k_star)
    ):
        print("# exact interior minimizer: k_star is an integer")
    if analytics.warning:
        print(f"# warning: {analytics.warning}")
    return 0


def cmd_transport(args) -> int:
    from .meshio import read_particles_csv
    from .transport import TransportConfig, wasserstein, wasserstein_spatial

    source = read_particles_csv(args.source)
    target = read_particles_csv(args.target)
    config = TransportConfig(p=args.p, solver=args.solver, epsilon=args.epsilon,
                             max_iter=args.max_iter, tol=args.tol)
    if args.spatial:
        print(repr(wasserstein_spatial(source, target, config)))
        return 0
    distance, plan = wasserstein(source, target, config)
    if args.plan_out:
        import numpy as np

        with open(args.plan_out, "w", encoding="utf-8") as fh:
            fh.write("i,j,mass\n")
            for i, j in np.argwhere(plan.entries > 0):
                fh.write(f"{i},{j},{plan.entries[i, j]!r}\n")
    print(repr(distance))
    return 0


def cmd_validate(args) -> int:
    from .validation import run_criteria

    numbers = None
    if args.criteria:
        numbers = [int(tok) for tok in args.criteria.split(",") if tok.strip()]
    results = run_criteria(numbers=numbers, quick=args.quick,
                           corrupt_sign=args.corrupt_sign_hook)
    for result in results:
        print(result.line, flush=True)
    passed = sum(r.passed for r in results)
    print(f"{passed}/{len(results)} criteria passed")
    return 0 if passed == len(results) else 1


_THREADS: int | None = None


def main(argv=None) -> int:
    global _THREADS
    _THREADS = _apply_thread_cap()
    parser = build_parser()
    args = parser.parse_args(argv)
    from .config import ConfigError
    from .errors import DomainError, FlowStepError, TransportError

    try:
        return args.func(args)
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2
    except DomainError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (TransportError, FlowStepError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
