"""Command-line surface.

Subcommands: run (full optimization), analyze (one-shot modal/voltage
analysis), metrics (manufacturability numbers for saved fields), mesh
(domain statistics). Heavy imports happen inside main() so that --threads
can pin BLAS pools first.

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import os
import sys

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")

OUT_ENV = "PIEZOTOPO_OUT"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="piezotopo",
        description="Level-set topology optimization of piezoelectric "
                    "energy harvesters.")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p, needs_fields=False):
        p.add_argument("--config", required=True, help="TOML configuration file")
        p.add_argument("--out", default=None,
                       help=f"output directory (default: ${OUT_ENV} or none)")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override a config key (repeatable)")
        p.add_argument("--threads", type=int, default=None,
                       help="cap BLAS/OpenMP thread pools")
        p.add_argument("--coarse", action="store_true",
                       help="switch to the coarse desk-scale resolution")
        p.add_argument("--verbose", action="store_true")
        if needs_fields:
            p.add_argument("--fields", default=None,
                           help="saved fields VTK (phi_p/phi_s, optional xi)")

    common(sub.add_parser("run", help="execute the optimization loop"))
    common(sub.add_parser("analyze", help="assemble and solve once, no update"),
           needs_fields=True)
    common(sub.add_parser("metrics", help="cross-section uniformity metrics"),
           needs_fields=True)
    common(sub.add_parser("mesh", help="report mesh statistics"))
    return parser


def _load_fields(path, mesh, cfg):
    """Rebuild level-set fields and xi from a snapshot or result VTK."""
    import numpy as np

    from . import xi_field
    from .levelset import make_design_field
    from .vtk_io import read_vtk

    saved = read_vtk(path)
    pts = saved["point_data"]
    for need in ("phi_p", "phi_s"):
        if need not in pts:
            raise ValueError(f"{path}: missing point field {need!r}")
        if len(pts[need]) != mesh.n_nodes:
            raise ValueError(
                f"{path}: field {need!r} has {len(pts[need])} values, "
                f"mesh has {mesh.n_nodes} nodes")

    def refit(region, values):
        field = make_design_field(mesh, region, initial=cfg.initial_value)
        vals = np.where(field.design_mask, np.asarray(values), field.values)
        return field.with_values(vals)

    single = cfg.mode == "single_field_comparison"
    field_p = refit("both" if single else "pe", pts["phi_p"])
    field_s = field_p if single else refit("sb", pts["phi_s"])
    if "xi" in pts:
        xi = xi_field.XiField(np.asarray(pts["xi"], dtype=float), cfg.xi)
    elif cfg.use_xi:
        xi = xi_field.solve_xi(mesh, field_s, cfg.xi, cfg.materials.heaviside)
    else:
        xi = xi_field.constant_xi(mesh, cfg.xi)
    return field_p, field_s, xi


def _hz(omega: float) -> float:
    import math
    return omega / (2.0 * math.pi)


def _summary(report, modes, volt, N1, N2, cfg, out) -> str:
    lines = ["=== run summary ==="]
    lines.append(f"F_k      = {report.F_k:.9e}")
    lines.append(f"F_omega  = {report.F_omega:.9e}")
    lines.append(f"F_pe     = {report.F_pe:.9e}")
    lines.append(f"F_sb     = {report.F_sb:.9e}")
    for i in range(cfg.objective.n_modes):
        lines.append(
            f"mode {i + 1}: f_oc = {_hz(modes.omega_oc[i]):.4f} Hz, "
            f"f_sc = {_hz(modes.omega_sc[i]):.4f} Hz, "
            f"k2 = {report.k2_per_mode[i]:.6e}")
    lines.append(f"V_E      = {volt.V_E:.9e} V")
    if cfg.voltage_min is not None:
        active = "active" if report.G_V > 0.0 else "inactive"
        lines.append(f"G_V      = {report.G_V:.9e} ({active}, "
                     f"V_min = {cfg.voltage_min:.9e} V, lambda = {report.lam:.6e})")
    lines.append(f"N_phi1   = {N1:.6f}")
    lines.append(f"N_phi2   = {N2:.6f}")
    if out:
        lines.append(f"outputs  : {os.path.join(out, 'history.csv')}, "
                     f"{os.path.join(out, 'result.vtk')}")
    return "\n".join(lines)


def cmd_run(cfg, out, verbose) -> int:
    from . import optimize

    def progress(state):
        if verbose and state.rows:
            r = state.rows[-1]
            print(f"iter {state.iteration:4d}  F_pe={state.history[-1].F_pe:.6e}  "
                  f"F_sb={state.history[-1].F_sb:.6e}  f1={_hz(r[5]):.2f} Hz",
                  flush=True)

    state = optimize.run(cfg, out_dir=out, progress=progress)
    rep = state.history[-1]
    r = state.rows[-1]
    from .levelset import manufacturability_metrics
    N1, N2 = manufacturability_metrics(state.field_p, state.field_s, state.mesh)

    class _Volt:  # summary carrier; V_E already logged in the row
        V_E = r[5 + 3 * cfg.objective.n_modes]

    print(_summary(rep, state.modes, _Volt, N1, N2, cfg, out))
    if state.converged:
        print(f"converged after {state.iteration} iterations")
    else:
        print(f"stopped at iteration limit ({state.iteration})")
    return 0


def cmd_analyze(cfg, out, fields_path, verbose) -> int:
    from . import fem, objectives, response, xi_field
    from .levelset import make_design_field, manufacturability_metrics
    from .mesh import build_benchmark_mesh

    mesh = build_benchmark_mesh(cfg.domain)
    if fields_path:
        field_p, field_s, xi = _load_fields(fields_path, mesh, cfg)
    else:
        single = cfg.mode == "single_field_comparison"
        field_p = make_design_field(mesh, "both" if single else "pe",
                                    initial=cfg.initial_value)
        field_s = field_p if single else make_design_field(
            mesh, "sb", initial=cfg.initial_value)
        if cfg.use_xi:
            xi = xi_field.solve_xi(mesh, field_s, cfg.xi, cfg.materials.heaviside)
        else:
            xi = xi_field.constant_xi(mesh, cfg.xi)

    system = fem.assemble(mesh, field_p, field_s, xi.scaled(), cfg.materials)
    n = cfg.objective.n_modes
    sc = fem.solve_short_circuit_modes(system, n, method=cfg.eigen_method)
    oc = fem.solve_open_circuit_modes(system, n, method=cfg.eigen_method)
    modes = fem.pair_modes(sc, oc, system)
    volt, _ = response.evaluate_voltage(modes, system, cfg.excitation)
    G_V = (response.voltage_constraint(volt, cfg.voltage_min)
           if cfg.voltage_min is not None else 0.0)
    k2 = [objectives.coupling_coefficient(o, s)
          for o, s in zip(modes.omega_oc[:n], modes.omega_sc[:n])]
    if any(v == 0.0 for v in k2):
        # uncoupled mode (e.g. zero piezo constants): F_k diverges, but the
        # modal report is still meaningful
        import numpy as np
        F_om = objectives.objective_F_omega(modes, cfg.objective)
        inf = float("inf")

        def mix(alpha):
            return F_om if alpha == 0.0 else inf

        rep = objectives.ObjectiveReport(
            k2_per_mode=np.asarray(k2), F_k=inf, F_omega=F_om,
            F_pe=mix(cfg.objective.alpha_pe), F_sb=mix(cfg.objective.alpha_sb),
            G_V=G_V, lam=0.0)
    else:
        rep = objectives.evaluate_objectives(modes, cfg.objective, G_V=G_V, lam=0.0)
    N1, N2 = manufacturability_metrics(field_p, field_s, mesh)
    print(_summary(rep, modes, volt, N1, N2, cfg, None))
    for note in modes.pairing_warnings:
        print(f"warning: {note}", file=sys.stderr)
    return 0


def cmd_metrics(cfg, fields_path) -> int:
    from . import xi_field
    from .levelset import manufacturability_metrics
    from .mesh import build_benchmark_mesh

    mesh = build_benchmark_mesh(cfg.domain)
    if not fields_path:
        raise ValueError("metrics requires --fields pointing at a saved VTK")
    field_p, field_s, xi = _load_fields(fields_path, mesh, cfg)
    N1, N2 = manufacturability_metrics(field_p, field_s, mesh)
    frac = xi_field.substrate_dependence_fraction(
        mesh, field_p, field_s, xi, cfg.materials.heaviside)
    print(f"N_phi1 = {N1:.6f}")
    print(f"N_phi2 = {N2:.6f}")
    print(f"unsupported_pe_fraction = {frac:.6f}")
    return 0


def cmd_mesh(cfg) -> int:
    from .mesh import Tag, build_benchmark_mesh

    mesh = build_benchmark_mesh(cfg.domain)
    print(f"nodes    = {mesh.n_nodes}")
    print(f"elements = {mesh.n_elems}")
    for tag in Tag:
        count = int((mesh.tags == tag).sum())
        print(f"{tag.name:13s}= {count}")
    print(f"clamp nodes    = {len(mesh.clamp_nodes)}")
    print(f"gamma_xi nodes = {len(mesh.gamma_xi_nodes)}")
    print(f"ground nodes   = {len(mesh.pzt_ground_nodes)}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return 2
        for var in _THREAD_VARS:
            os.environ[var] = str(args.threads)

    from .config import ConfigError, parse_config
    try:
        cfg = parse_config(args.config, overrides=args.overrides,
                           coarse=args.coarse)
    except FileNotFoundError:
        print(f"error: config file not found: {args.config}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    out = args.out if args.out is not None else os.environ.get(OUT_ENV)

    try:
        if args.subcommand == "run":
            return cmd_run(cfg, out, args.verbose)
        if args.subcommand == "analyze":
            return cmd_analyze(cfg, out, args.fields, args.verbose)
        if args.subcommand == "metrics":
            return cmd_metrics(cfg, args.fields)
        return cmd_mesh(cfg)
    except Exception as exc:  # runtime failures keep the stage name visible
        print(f"error: {exc}", file=sys.stderr)
        if args.verbose:
            raise
        return 1


if __name__ == "__main__":
    sys.exit(main())
