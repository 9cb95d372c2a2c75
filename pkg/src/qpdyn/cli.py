"""Command-line front end.

    qpdyn [--config PATH] [--out DIR] [--seed N] [--json] COMMAND ...

Commands: extract, diffuse, phonon, fit, timescales, sfq-check. Exit status is
0 on success, 1 on usage/config/data errors and 2 when a fit does not converge.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .calibrate import Averaging, FitProblem, fit_phonon_model
from .config import ScenarioConfig
from .core import PHONON_FIELDS, US, QpdynError
from .diffusion import DEFAULT_SNAPSHOT_TIMES, run as run_diffusion
from .io import read_csv, write_csv, write_manifest, atomic_write
from .observables import (
    Mechanism,
    PopulationDecayCurve,
    QpDensityPoint,
    RelaxationSample,
    Weighting,
    baseline_rate,
    compute_c,
    estimate_timescale,
    expected_sfq_voltage,
    extract_density,
    fit_t1,
    fit_voltage_slope,
    operating_region_check,
    window_average,
)
from .phonon_model import model_curve

log = logging.getLogger("qpdyn")

EXIT_OK, EXIT_USAGE, EXIT_NOT_CONVERGED = 0, 1, 2


def _out_dir(args, cfg: ScenarioConfig) -> Path:
    root = args.out or cfg.out_dir() or os.environ.get("QPDYN_OUT_DIR") or "qpdyn_out"
    return Path(root)


def _emit(args, payload: dict, text: str):
    if args.json:
        print(json.dumps(payload, indent=2, default=float))
    else:
        print(text)


def _time_tag(t: float) -> str:
    return f"{t / US:+09.3f}us"


# --- extract -------------------------------------------------------------------


def _load_relaxation_samples(path) -> list[RelaxationSample]:
    header = Path(path).read_text().lstrip().splitlines()[0] if Path(path).read_text().strip() else ""
    if "delay_seconds" in header:
        rows = read_csv(path, ("t_r_seconds", "delay_seconds", "p1"), ("sigma",))
        groups: dict[float, list[dict]] = {}
        for row in rows:
            groups.setdefault(row["t_r_seconds"], []).append(row)
        samples = []
        for t_r in sorted(groups):
            g = sorted(groups[t_r], key=lambda r: r["delay_seconds"])
            sigma = [r["sigma"] for r in g] if "sigma" in g[0] else None
            curve = PopulationDecayCurve([r["delay_seconds"] for r in g], [r["p1"] for r in g], sigma)
            fit = fit_t1(curve)
            samples.append(RelaxationSample(t_r, fit.t1, fit.uncertainty))
        return samples
    rows = read_csv(path, ("t_r_seconds", "t1_seconds"), ("sigma",))
    return [RelaxationSample(r["t_r_seconds"], r["t1_seconds"], r.get("sigma", 0.0)) for r in rows]


def cmd_extract(args, cfg: ScenarioConfig) -> int:
    consts = cfg.constants()
    baseline = args.baseline_t1 if args.baseline_t1 is not None else cfg.baseline_t1()
    samples = _load_relaxation_samples(args.input_csv)
    points = extract_density(samples, baseline, consts)
    out = _out_dir(args, cfg)
    path = write_csv(
        out / "xqp_extracted.csv",
        ("t_r_seconds", "x_qp", "sigma"),
        ((p.recovery_time_t_r, p.x_qp, p.uncertainty) for p in points),
    )
    write_manifest(out, "extract", cfg.raw, [path], __version__)
    c, gamma0 = compute_c(consts), baseline_rate(baseline)
    _emit(
        args,
        {"C_per_s": c, "gamma0_per_s": gamma0, "rows": len(points), "output": str(path)},
        f"C = {c:.6g} 1/s, Gamma0 = {gamma0:.6g} 1/s; {len(points)} rows -> {path}",
    )
    return EXIT_OK


# --- diffuse -------------------------------------------------------------------


def _parse_grid(text: str) -> tuple[int, int]:
    try:
        nx, ny = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like 500x250, got {text!r}") from None
    return nx, ny


def cmd_diffuse(args, cfg: ScenarioConfig) -> int:
    if args.trapping_time is not None:
        cfg.set("diffusion", "trapping_rate_s", 1.0 / args.trapping_time)
    if args.grid is not None:
        nx, ny = args.grid
        cfg.set("diffusion", "grid_nx", nx)
        cfg.set("diffusion", "grid_ny", ny)
    if args.end is not None:
        cfg.set("diffusion", "simulation_end", args.end)
        if "snapshot_times" not in cfg.section("diffusion"):
            cfg.set("diffusion", "snapshot_times", [t for t in DEFAULT_SNAPSHOT_TIMES if t <= args.end])
    scenario = cfg.diffusion()
    fields, probes = run_diffusion(scenario, cfg.probe_interval(), probe_readout=cfg.probe_readout())
    out = _out_dir(args, cfg)
    xc, yc = scenario.cell_centers()
    X, Y = np.meshgrid(xc, yc, indexing="ij")
    written = []
    for f in fields:
        rows = zip(X.ravel(), Y.ravel(), f.values.ravel())
        written.append(write_csv(out / f"snapshot_tR{_time_tag(f.time_stamp)}.csv", ("x_m", "y_m", "x_qp"), rows))
    cx, _ = scenario.injection_region.center
    summary = []
    for p in probes:
        d = p.position[0] - cx
        name = f"probe_x{p.position[0] * 1e3:.4f}mm_y{p.position[1] * 1e3:.4f}mm.csv"
        written.append(write_csv(out / name, ("t_r_seconds", "x_qp"), zip(p.times, p.values)))
        summary.append({"position_m": list(p.position), "distance_m": d,
                        "peak_time_s": p.peak_time, "peak_x_qp": p.peak_value})
    write_manifest(out, "diffuse", cfg.raw, written, __version__)
    lines = [f"{'distance (mm)':>14} {'peak t_R (us)':>14} {'peak x_qp':>12}"]
    lines += [f"{s['distance_m'] * 1e3:14.3f} {s['peak_time_s'] / US:14.2f} {s['peak_x_qp']:12.4g}" for s in summary]
    lines.append(f"{len(written)} files -> {out}")
    _emit(args, {"probes": summary, "outputs": [str(p) for p in written]}, "\n".join(lines))
    return EXIT_OK


# --- phonon --------------------------------------------------------------------

_PARAM_FLAGS = {"r": "--r", "s_qubit": "--s-qubit", "t_p": "--t-p", "alpha": "--alpha",
                "g_sfq": "--g-sfq", "t_sfq": "--t-sfq"}


def _apply_param_flags(args, cfg: ScenarioConfig):
    for name in PHONON_FIELDS:
        value = getattr(args, f"p_{name}", None)
        if value is not None:
            cfg.set("phonon", name, value)


def cmd_phonon(args, cfg: ScenarioConfig) -> int:
    _apply_param_flags(args, cfg)
    if args.t_avg is not None:
        cfg.set("phonon", "t_avg", args.t_avg)
    if args.weighting is not None:
        cfg.set("phonon", "weighting", args.weighting)
    params = cfg.phonon_params()
    start, end, step = cfg.phonon_grid()
    n = int(round((end - start) / step))
    times = np.linspace(start, end, n + 1)
    averaging = cfg.phonon_averaging()
    if averaging is None:
        curve = model_curve(params, times)
        values = curve.values
    else:
        m = int(round(averaging.t_avg / step))
        ext = np.linspace(start, end + m * step, n + m + 1)
        curve = model_curve(params, ext)
        _, values = window_average((curve.times, curve.values), averaging.t_avg, averaging.weighting,
                                   out_times=times)
    out = _out_dir(args, cfg)
    path = write_csv(out / "phonon_curve.csv", ("t_r_seconds", "x_qp"), zip(times, values))
    write_manifest(out, "phonon", cfg.raw, [path], __version__)
    k = int(np.argmax(values))
    payload = {"peak_time_s": float(times[k]), "peak_x_qp": float(values[k]), "output": str(path)}
    _emit(args, payload, f"peak x_qp = {values[k]:.4g} at t_R = {times[k] / US:.2f} us -> {path}")
    return EXIT_OK


# --- fit -----------------------------------------------------------------------


def _report(result, problem: FitProblem) -> str:
    lines = [f"converged: {result.converged}", f"iterations: {result.iterations}",
             f"restarts: {result.restarts}", f"residual_norm: {result.residual_norm:.6g}",
             f"points: {len(problem.data)}", f"fixed: {', '.join(sorted(problem.fixed)) or '-'}", ""]
    for name in PHONON_FIELDS:
        value = getattr(result.params, PHONON_FIELDS[name])
        sigma = (result.uncertainties or {}).get(name)
        tail = f" +- {sigma:.4g}" if sigma is not None else (" (fixed)" if name in problem.fixed else "")
        lines.append(f"{name:>8} = {value:.6g}{tail}")
    return "\n".join(lines) + "\n"


def cmd_fit(args, cfg: ScenarioConfig) -> int:
    rows = read_csv(args.data_csv, ("t_r_seconds", "x_qp"), ("sigma",))
    data = [QpDensityPoint(r["t_r_seconds"], r["x_qp"], r.get("sigma", 0.0)) for r in rows]
    settings = cfg.fit_settings()
    if args.t_avg is not None:
        settings["averaging"] = Averaging(args.t_avg, Weighting(args.weighting or "uniform")) if args.t_avg else None
    if args.free is not None:
        settings["fixed"] = frozenset(PHONON_FIELDS) - set(args.free)
    problem = FitProblem(data, **settings)
    result = fit_phonon_model(problem, seed=args.seed)
    out = _out_dir(args, cfg)
    report = _report(result, problem)
    written = [atomic_write(out / "fit_report.txt", report),
               atomic_write(out / "fit_result.json", json.dumps(result.as_dict(), indent=2, sort_keys=True) + "\n")]
    write_manifest(out, "fit", cfg.raw, written, __version__)
    _emit(args, result.as_dict(), report.rstrip())
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


# --- timescales ----------------------------------------------------------------


def cmd_timescales(args, cfg: ScenarioConfig) -> int:
    if args.distance is not None:
        cfg.set("geometry", "sfq_qubit_distance", args.distance)
    geometry = cfg.geometry()
    t_p = cfg.phonon_params().propagation_delay_t_p
    rows = []
    for mech in Mechanism:
        est = estimate_timescale(mech, geometry)
        rows.append({"mechanism": mech.value, "transit_time_s": est.transit_time,
                     "effective_diffusivity_m2_per_s": est.effective_diffusivity})
    lines = [f"{'mechanism':>18} {'transit time (s)':>18} {'D_eff (m^2/s)':>14}"]
    for r in rows:
        d = "-" if r["effective_diffusivity_m2_per_s"] is None else f"{r['effective_diffusivity_m2_per_s']:.3g}"
        lines.append(f"{r['mechanism']:>18} {r['transit_time_s']:18.4g} {d:>14}")
    lines.append(f"{'observed lag t_p':>18} {t_p:18.4g}")
    _emit(args, {"distance_m": geometry.sfq_qubit_distance, "timescales": rows, "observed_t_p_s": t_p},
          "\n".join(lines))
    return EXIT_OK


# --- sfq-check -----------------------------------------------------------------


def cmd_sfq_check(args, cfg: ScenarioConfig) -> int:
    consts = cfg.constants()
    rows = read_csv(args.voltage_csv, ("drive_freq_hz", "v_avg_volts"))
    tol = args.tolerance
    results = []
    for r in rows:
        f, v = r["drive_freq_hz"], r["v_avg_volts"]
        expected = expected_sfq_voltage(f, consts)
        results.append((f, v, expected, (v - expected) / expected, operating_region_check(v, f, tol, consts)))
    slope = fit_voltage_slope([r[0] for r in results], [r[1] for r in results])
    out = _out_dir(args, cfg)
    path = write_csv(out / "sfq_check.csv",
                     ("drive_freq_hz", "v_avg_volts", "v_expected_volts", "relative_deviation", "pass"),
                     (list(r[:4]) + [int(r[4])] for r in results))
    write_manifest(out, "sfq-check", cfg.raw, [path], __version__)
    lines = [f"{'f (GHz)':>9} {'V (uV)':>10} {'expected':>10} {'dev':>8}  result"]
    lines += [f"{f / 1e9:9.3f} {v * 1e6:10.4f} {e * 1e6:10.4f} {d * 100:7.2f}%  {'PASS' if ok else 'FAIL'}"
              for f, v, e, d, ok in results]
    lines.append(f"slope = {slope * 1e15:.5f} uV/GHz (Phi0 = {consts.flux_quantum * 1e15:.5f})")
    payload = {"slope_volts_per_hz": slope, "all_pass": all(r[4] for r in results),
               "rows": [{"drive_freq_hz": f, "v_avg_volts": v, "pass": ok} for f, v, _, _, ok in results]}
    _emit(args, payload, "\n".join(lines))
    return EXIT_OK


def _add_global_flags(parser, default):
    # global flags are accepted before or after the subcommand
    parser.add_argument("--config", default=default, help="JSON scenario config")
    parser.add_argument("--out", default=default, help="output directory (default $QPDYN_OUT_DIR or ./qpdyn_out)")
    parser.add_argument("--seed", type=int, default=default)
    parser.add_argument("--json", action="store_true", default=default, help="machine-readable stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qpdyn", description="Quasiparticle dynamics toolkit")
    _add_global_flags(parser, argparse.SUPPRESS)
    parser.set_defaults(config=None, out=None, seed=0, json=False)
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    _add_global_flags(common, argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)
    _orig_add = sub.add_parser
    sub.add_parser = lambda *a, **k: _orig_add(*a, parents=[common], **k)

    p = sub.add_parser("extract", help="T1 table or decay curves -> x_qp CSV")
    p.add_argument("input_csv")
    p.add_argument("--baseline-t1", type=float, help="T1 without injected QPs, seconds (default 6e-6)")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("diffuse", help="2D reaction-diffusion snapshots and probes")
    p.add_argument("--trapping-time", type=float, help="1/s for the uniform trapping rate, seconds")
    p.add_argument("--grid", type=_parse_grid, help="cell counts NXxNY")
    p.add_argument("--end", type=float, help="simulation end time, seconds")
    p.set_defaults(func=cmd_diffuse)

    p = sub.add_parser("phonon", help="phonon-mediated model curve")
    for name, flag in _PARAM_FLAGS.items():
        p.add_argument(flag, dest=f"p_{name}", type=float)
    p.add_argument("--t-avg", type=float, help="measurement window, seconds")
    p.add_argument("--weighting", choices=[w.value for w in Weighting])
    p.set_defaults(func=cmd_phonon)

    p = sub.add_parser("fit", help="calibrate the phonon model against x_qp data")
    p.add_argument("data_csv")
    p.add_argument("--t-avg", type=float, help="fit through a measurement window, seconds")
    p.add_argument("--weighting", choices=[w.value for w in Weighting])
    p.add_argument("--free", nargs="+", choices=list(PHONON_FIELDS), help="parameters to fit (default: all but r)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("timescales", help="transit-time estimates per propagation mechanism")
    p.add_argument("--distance", type=float, help="SFQ-qubit distance, metres")
    p.set_defaults(func=cmd_timescales)

    p = sub.add_parser("sfq-check", help="AC-Josephson voltage check")
    p.add_argument("voltage_csv")
    p.add_argument("--tolerance", type=float, default=0.036)
    p.set_defaults(func=cmd_sfq_check)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = ScenarioConfig.load(args.config)
        return args.func(args, cfg)
    except (QpdynError, TypeError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
