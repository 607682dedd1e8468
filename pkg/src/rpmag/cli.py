"""Command-line front end: simulate, metrology, sweep, control.

Exit codes: 0 success, 1 usage error, 2 configuration error, 3 runtime
failure. All numerical output files use comma-separated text with
9-significant-digit floats and a machine-readable ``*.meta.json`` sidecar
recording the config hash, parameters, and code version.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import load_config
from .control import ControlProblem, best_warm_start, optimize, static_yield_extrema
from .dynamics import IntegratorConfig, default_config, propagate, steady_state
from .errors import ConfigError, RpmagError
from .metrology import OrientationGrid, orientation_report
from .model import FieldSpec, HarmonicMotion, PiecewiseMotion, StaticMotion
from .spinalg import singlet_projector
from .sweep import SweepRunner, SweepSpec, default_workers, fmt

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _parse_grid(text: str) -> tuple[int, int]:
    try:
        parts = text.lower().split("x")
        if len(parts) == 1:
            return int(parts[0]), 1
        n_theta, n_phi = int(parts[0]), int(parts[1])
        if n_theta < 1 or n_phi < 1:
            raise ValueError
        return n_theta, n_phi
    except ValueError:
        raise ConfigError(f"grid must look like '19x1' or '7x7', got {text!r}") from None


def _check_angles(theta: float, phi: float):
    if not 0.0 <= theta <= np.pi:
        raise ConfigError(f"theta must lie in [0, pi], got {theta}")
    if not 0.0 <= phi < 2.0 * np.pi:
        raise ConfigError(f"phi must lie in [0, 2 pi), got {phi}")


def _motion_from_args(args):
    if args.controls:
        data = np.loadtxt(args.controls, ndmin=2)
        if data.shape[1] < 3:
            raise ConfigError("control file needs columns: index, t_start_us, u_A")
        u = data[:, 2]
        dt_seg = data[1, 1] - data[0, 1] if data.shape[0] > 1 else args.segment_dt
        return PiecewiseMotion(dt_seg, u)
    if args.drive == "harmonic":
        return HarmonicMotion(args.nu_d, args.delta_d)
    return StaticMotion()


def _integrator_from_args(model, field, geometry, rates, motion, args):
    base = default_config(model.system, field, geometry, rates, motion, t_max_us=args.t_max)
    dt = args.dt if args.dt is not None else base.dt_us
    return IntegratorConfig(dt_us=min(dt, base.dt_us), t_max_us=base.t_max_us)


def _sidecar(path: Path, payload: dict):
    payload = dict(payload, code_version=__version__)
    path.write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")


# --- subcommands ---------------------------------------------------------------

def cmd_simulate(args) -> int:
    model = load_config(args.config)
    _check_angles(args.theta, args.phi)
    gamma = model.gamma_per_us if args.rfr_gamma is None else args.rfr_gamma
    field = FieldSpec(model.b0_uT, args.theta, args.phi)
    motion = _motion_from_args(args)
    config = _integrator_from_args(model, field, model.geometry, model.rates, motion, args)
    res = propagate(model.system, field, model.geometry, model.rates, motion, gamma, config)
    sigma = steady_state(res.integrated_state)
    proj = singlet_projector(model.system.layout)
    theta_s = float(np.trace(proj @ sigma).real)
    print(f"Phi_S                 {fmt(res.phi_s)}")
    print(f"Theta_S               {fmt(theta_s)}")
    print(f"conservation residual {fmt(res.conservation_residual)}")
    print(f"steps                 {len(res.times_us) - 1}  (dt = {fmt(res.dt_us)} us)")
    if args.trace_out:
        res.dump_trace(args.trace_out)
        print(f"trace written to      {args.trace_out}")
    return EXIT_OK


def cmd_metrology(args) -> int:
    model = load_config(args.config)
    gamma = model.gamma_per_us if args.rfr_gamma is None else args.rfr_gamma
    n_theta, n_phi = _parse_grid(args.grid)
    grid = (
        OrientationGrid.theta_line(n_theta, phi=args.phi)
        if n_phi == 1
        else OrientationGrid.full(n_theta, n_phi)
    )
    motion = _motion_from_args(args)
    report = orientation_report(
        model.system, model.geometry, model.rates, motion, gamma, model.b0_uT,
        grid, dtheta=args.dtheta, fd_check=not args.no_fd_check,
        receptor_counts=tuple(args.receptors),
    )
    print(f"orientations          {len(report.orientations)}")
    print(f"Gamma                 {fmt(report.gamma_anisotropy)}")
    print(f"Phi_S max/min/mean    {fmt(report.phi_s_max)} {fmt(report.phi_s_min)} {fmt(report.phi_s_mean)}")
    print(f"argmax (theta,phi)    {fmt(report.argmax[0])} {fmt(report.argmax[1])}")
    print(f"argmin (theta,phi)    {fmt(report.argmin[0])} {fmt(report.argmin[1])}")
    print(f"max CFI / max QFI     {fmt(report.max_cfi)} {fmt(report.max_qfi)}")
    best = report.best_ratio
    print(f"best ratio            {fmt(best.ratio) if best else ''}")
    for n, dtheta in sorted(report.precision_deg.items()):
        print(f"precision N={n:.3g}     {fmt(dtheta)} deg")
    if args.out:
        _write_orientation_file(Path(args.out), model, report)
        print(f"table written to      {args.out}")
    return EXIT_OK


ORIENTATION_COLUMNS = ("theta_rad", "phi_rad", "Phi_S", "Theta_S", "F_theta", "QFI_theta", "ratio", "flags")


def _write_orientation_file(path: Path, model, report):
    lines = [",".join(ORIENTATION_COLUMNS)]
    for o in report.orientations:
        lines.append(
            ",".join(
                [
                    fmt(o.theta), fmt(o.phi), fmt(o.phi_s), fmt(o.theta_s),
                    fmt(o.cfi), fmt(o.qfi), fmt(o.ratio), ";".join(o.flags),
                ]
            )
        )
    path.write_text("\n".join(lines) + "\n")
    shape = report.grid.shape or (len(report.orientations), 1)
    _sidecar(
        path.with_suffix(path.suffix + ".meta.json"),
        {
            "kind": "rpmag-orientation-scan",
            "config_hash": model.config_hash,
            "config_path": model.source,
            "columns": list(ORIENTATION_COLUMNS),
            "grid_shape": list(shape),
            "gamma_anisotropy": report.gamma_anisotropy,
        },
    )


def cmd_sweep(args) -> int:
    n_theta, n_phi = _parse_grid(args.grid)
    mode, fraction = args.filter, 0.1
    if ":" in mode:
        mode, frac_text = mode.split(":", 1)
        fraction = float(frac_text)
    spec = SweepSpec(
        nu_min_MHz=args.nu_min,
        nu_max_MHz=args.nu_max if args.nu_max is not None else args.nu_min,
        nu_count=args.nu_count,
        nu_log=args.nu_log,
        j_min_MHz=args.j_min,
        j_max_MHz=args.j_max if args.j_max is not None else args.j_min,
        j_count=args.j_count,
        grid_theta=n_theta,
        grid_phi=n_phi,
        phi_fixed=args.phi,
        delta_d_A=args.delta_d,
        rfr_gamma=args.rfr_gamma if args.rfr_gamma is not None else load_config(args.config).gamma_per_us,
        dipolar=False if args.no_dipolar else None,
        exchange=False if args.no_exchange else None,
        filter_mode=mode,
        filter_fraction=fraction,
        fd_check=args.fd_check,
        dt_us=args.dt,
        t_max_us=args.t_max,
    )
    runner = SweepRunner(
        args.config, spec, args.out,
        checkpoint_path=args.checkpoint,
        workers=args.workers,
    )
    out = runner.run()
    print(f"sweep written to {out} ({spec.nu_count * spec.j_count} rows)")
    return EXIT_OK


def cmd_control(args) -> int:
    model = load_config(args.config)
    gamma = model.gamma_per_us if args.rfr_gamma is None else args.rfr_gamma
    n_theta, n_phi = _parse_grid(args.grid)
    grid = (
        OrientationGrid.theta_line(n_theta, phi=args.phi)
        if n_phi == 1
        else OrientationGrid.full(n_theta, n_phi)
    )
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)

    j_values = (
        np.linspace(args.j_min, args.j_max, args.j_count)
        if args.j_count > 1
        else np.array([args.j_min if args.j_min is not None else model.geometry.j0_over_2pi_MHz])
    )
    nu_scan = np.linspace(args.nu_min, args.nu_max, args.nu_count)
    receptors = args.receptors[-1]

    series: dict[str, list] = {"static": [], "driven": [], "controlled": []}
    for j0 in j_values:
        row = _control_at_j(model, gamma, grid, float(j0), nu_scan, receptors, outdir, args)
        for name in series:
            series[name].append(row[name])

    for name, rows in series.items():
        path = outdir / f"comparison_{name}.csv"
        lines = [",".join(("J0_over_2pi_MHz", "Gamma", "NF_theta", "NQFI_theta"))]
        lines += [",".join(fmt(v) for v in r) for r in rows]
        path.write_text("\n".join(lines) + "\n")
        _sidecar(
            path.with_suffix(path.suffix + ".meta.json"),
            {
                "kind": "rpmag-comparison",
                "series": name,
                "config_hash": model.config_hash,
                "config_path": model.source,
                "receptors": receptors,
                "columns": ["J0_over_2pi_MHz", "Gamma", "NF_theta", "NQFI_theta"],
            },
        )
    print(f"comparison series written to {outdir}")
    return EXIT_OK


def _control_at_j(model, gamma, grid, j0_over_2pi, nu_scan, receptors, outdir, args):
    from .model import Geometry

    geometry = Geometry(
        r0_A=model.geometry.r0_A,
        axis=model.geometry.axis,
        j0_rad_us=2.0 * np.pi * j0_over_2pi,
        beta_per_A=model.geometry.beta_per_A,
        dipolar_enabled=model.geometry.dipolar_enabled,
        exchange_enabled=model.geometry.exchange_enabled,
    )
    field_hi, field_lo = static_yield_extrema(
        model.system, geometry, model.rates, gamma, model.b0_uT, grid
    )
    problem = ControlProblem(
        model.system, geometry, model.rates, gamma, model.b0_uT,
        field_hi, field_lo,
        n_segments=args.segments,
        segment_dt_us=args.segment_dt,
        u_max_A=args.u_max,
        smoothness_weight=args.smoothness,
    )

    # harmonic reference: best contrast on the coarse frequency scan
    best_nu, best_contrast = None, -np.inf
    for nu in nu_scan:
        hi = propagate(model.system, field_hi, geometry, model.rates, HarmonicMotion(nu), gamma).phi_s
        lo = propagate(model.system, field_lo, geometry, model.rates, HarmonicMotion(nu), gamma).phi_s
        if hi - lo > best_contrast:
            best_nu, best_contrast = float(nu), hi - lo

    u0 = best_warm_start(problem, nu_scan) if args.warm_start else None
    result = optimize(problem, u0=u0, max_iters=args.max_iters, tol=args.tol)

    tag = fmt(j0_over_2pi).replace(".", "p").replace("-", "m")
    result.save_sequence(outdir / f"controls_j{tag}.txt", args.segment_dt)
    np.savetxt(
        outdir / f"history_j{tag}.txt",
        np.column_stack([np.arange(len(result.objective_history)), result.objective_history]),
        header="iteration objective",
        fmt=("%d", "%.9g"),
    )
    if result.stagnated:
        print(f"J0/2pi={fmt(j0_over_2pi)} MHz: optimizer stagnated at the start ({result.message})")

    def metric_row(motion):
        rep = orientation_report(
            model.system, geometry, model.rates, motion, gamma, model.b0_uT,
            grid, fd_check=False,
        )
        return (j0_over_2pi, rep.gamma_anisotropy, receptors * rep.max_cfi, receptors * rep.max_qfi)

    return {
        "static": metric_row(StaticMotion()),
        "driven": metric_row(HarmonicMotion(best_nu)),
        "controlled": metric_row(PiecewiseMotion(args.segment_dt, result.u)),
    }


# --- parser --------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="rpmag", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"rpmag {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True, help="model config YAML")
        p.add_argument("--rfr-gamma", type=float, default=None,
                       help="random-field relaxation rate (overrides config)")
        p.add_argument("--dt", type=float, default=None, help="integrator step (us)")
        p.add_argument("--t-max", type=float, default=None, help="horizon (us)")
        p.add_argument("--seed", type=int, default=None, help="reserved")

    def add_motion(p):
        p.add_argument("--drive", choices=["static", "harmonic"], default="static")
        p.add_argument("--nu-d", type=float, default=2.0, help="driving frequency (MHz)")
        p.add_argument("--delta-d", type=float, default=3.0, help="driving amplitude (A)")
        p.add_argument("--controls", default=None, help="piecewise control file to replay")
        p.add_argument("--segment-dt", type=float, default=1e-3,
                       help="segment duration for control files without a time axis (us)")

    p_sim = sub.add_parser("simulate", help="single propagation at one orientation")
    add_common(p_sim)
    add_motion(p_sim)
    p_sim.add_argument("--theta", type=float, default=0.0)
    p_sim.add_argument("--phi", type=float, default=0.0)
    p_sim.add_argument("--trace-out", default=None, help="write per-node trace table")
    p_sim.set_defaults(func=cmd_simulate)

    p_met = sub.add_parser("metrology", help="orientation-grid probe metrology")
    add_common(p_met)
    add_motion(p_met)
    p_met.add_argument("--grid", default="19x1", help="orientation grid, e.g. 19x1 or 7x7")
    p_met.add_argument("--phi", type=float, default=0.0, help="fixed phi for theta-only grids")
    p_met.add_argument("--dtheta", type=float, default=1e-3)
    p_met.add_argument("--no-fd-check", action="store_true")
    p_met.add_argument("--receptors", type=float, nargs="+", default=[2e5, 2e6])
    p_met.add_argument("--out", default=None, help="write the per-orientation table")
    p_met.set_defaults(func=cmd_metrology)

    p_sw = sub.add_parser("sweep", help="(nu_d, J0) sweep with orientation-maximised metrics")
    add_common(p_sw)
    p_sw.add_argument("--nu-min", type=float, required=True)
    p_sw.add_argument("--nu-max", type=float, default=None)
    p_sw.add_argument("--nu-count", type=int, default=1)
    p_sw.add_argument("--nu-log", action="store_true")
    p_sw.add_argument("--j-min", type=float, default=0.0)
    p_sw.add_argument("--j-max", type=float, default=None)
    p_sw.add_argument("--j-count", type=int, default=1)
    p_sw.add_argument("--grid", default="19x1")
    p_sw.add_argument("--phi", type=float, default=0.0)
    p_sw.add_argument("--delta-d", type=float, default=3.0)
    p_sw.add_argument("--no-dipolar", action="store_true")
    p_sw.add_argument("--no-exchange", action="store_true")
    p_sw.add_argument("--filter", default="none",
                      help="none | maintained | threshold[:fraction]")
    p_sw.add_argument("--fd-check", action="store_true",
                      help="enable the derivative step-halving check per cell "
                           "(off by default in sweeps; each cell costs two more "
                           "propagations per orientation)")
    p_sw.add_argument("--out", required=True)
    p_sw.add_argument("--checkpoint", default=None)
    p_sw.add_argument("--workers", type=int, default=None)
    p_sw.set_defaults(func=cmd_sweep)

    p_ct = sub.add_parser("control", help="optimise piecewise-constant interradical motion")
    add_common(p_ct)
    p_ct.add_argument("--segments", type=int, default=1000)
    p_ct.add_argument("--segment-dt", type=float, default=1e-3, help="segment duration (us)")
    p_ct.add_argument("--u-max", type=float, default=3.0)
    p_ct.add_argument("--smoothness", type=float, default=1e-3, metavar="LAMBDA")
    p_ct.add_argument("--max-iters", type=int, default=50)
    p_ct.add_argument("--tol", type=float, default=1e-6)
    p_ct.add_argument("--warm-start", action="store_true",
                      help="start from the best harmonic trajectory")
    p_ct.add_argument("--grid", default="7x1")
    p_ct.add_argument("--phi", type=float, default=0.0)
    p_ct.add_argument("--nu-min", type=float, default=1.0)
    p_ct.add_argument("--nu-max", type=float, default=10.0)
    p_ct.add_argument("--nu-count", type=int, default=6)
    p_ct.add_argument("--j-min", type=float, default=None)
    p_ct.add_argument("--j-max", type=float, default=None)
    p_ct.add_argument("--j-count", type=int, default=1)
    p_ct.add_argument("--receptors", type=float, nargs="+", default=[2e6])
    p_ct.add_argument("--out", required=True, help="output directory")
    p_ct.set_defaults(func=cmd_control)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "workers", None) is None and args.command == "sweep":
        args.workers = default_workers()
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RpmagError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
