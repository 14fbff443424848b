"""Command-line front end.

Subcommands: simulate, estimate, sweep, twoview, measure, ablate. Lengths
at the flag boundary carry explicit units (``5mm``, ``0.005m``). Exit codes:
0 success, 2 input error, 3 degenerate or unsolvable, 4 no convergence.

Every JSON artifact records the resolved arguments under ``"cli"``; passing
that file back through ``--from-config`` reruns the same command.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .errors import ConvergenceError, InputError, NearScaleError
from .estimator import (
    InitSearchConfig, RobustLossConfig, SolverConfig, estimate, measure_diameter,
)
from .normals import NormalConfig
from .recon_io import (
    CalibrationRig, Reconstruction, ScenePoint, VignetteModel, parse_calibration,
    parse_observations, read_report, read_sparse_model, write_report,
)
from .simulator import (
    ALBEDO_FIELDS, SURFACES, Dataset, SceneSpec, TrajectorySpec, read_ground_truth, simulate,
)
from .twoview import TwoViewConfig, solve_two_view_scale

ABLATIONS = ("gt-normals", "gt-gains", "gt-poses", "no-init")
DEFAULT_DISTANCES = "3mm,5mm,8mm,12mm,16mm,20mm"

_UNITS = {"m": 1.0, "cm": 1e-2, "mm": 1e-3, "um": 1e-6}
_LENGTH = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(m|cm|mm|um)\s*$")


# ---------------------------------------------------------------------------
# argument types


def length(text: str) -> float:
    """``'5mm'`` -> 0.005. A unit suffix is mandatory."""
    m = _LENGTH.match(text)
    if not m:
        raise argparse.ArgumentTypeError(f"{text!r} is not a length with a unit suffix (e.g. 5mm, 0.005m)")
    return float(m.group(1)) * _UNITS[m.group(2)]


def length_list(text: str) -> list[float]:
    """Comma-separated lengths; ``a:b:step`` expands to an inclusive range."""
    out = []
    for item in text.split(","):
        item = item.strip()
        if ":" in item:
            parts = item.split(":")
            if len(parts) != 3:
                raise argparse.ArgumentTypeError(f"range {item!r} must be start:stop:step")
            start, stop, step = (length(p) for p in parts)
            if not step > 0:
                raise argparse.ArgumentTypeError("range step must be positive")
            count = int(math.floor((stop - start) / step + 1e-9)) + 1
            out.extend(start + k * step for k in range(count))
        elif item:
            out.append(length(item))
    if not out:
        raise argparse.ArgumentTypeError("empty distance list")
    return out


def id_list(text: str) -> list[int]:
    try:
        return [int(t) for t in re.split(r"[,\s]+", text.strip()) if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a list of integer ids") from None


def format_meters(x: float) -> str:
    """``3.0`` -> ``'3.000e0 m'``."""
    mantissa, exponent = f"{x:.3e}".split("e")
    return f"{mantissa}e{int(exponent)} m"


# ---------------------------------------------------------------------------
# shared option groups


def _add_scene_options(p, surface="plane", n_points=300):
    g = p.add_argument_group("scene")
    g.add_argument("--surface", choices=SURFACES, default=surface)
    g.add_argument("--extent", type=length, default=0.01, help="patch side or cap base diameter (default 10mm)")
    g.add_argument("--points", type=int, default=n_points, help="number of surface points")
    g.add_argument("--albedo-field", choices=ALBEDO_FIELDS, default="smooth-gradient")
    g.add_argument("--albedo", type=float, nargs="+", default=[0.5, 0.9], metavar="A",
                   help="albedo field parameters in (0, 1]")
    g.add_argument("--views", type=int, default=4)
    g.add_argument("--lateral-jitter", type=length, default=None, help="default: half the distance")
    g.add_argument("--rotational-jitter", type=float, default=2.0, help="degrees")
    g.add_argument("--noise", type=float, default=4.0, help="pixel noise std in gray levels (of 255)")
    g.add_argument("--lambda-gt", type=float, default=1.0)
    g.add_argument("--corruption", type=float, default=0.0,
                   help="geometry noise std as a fraction of the extent")
    g.add_argument("--specular", type=float, default=0.0, help="fraction of samples forced to 1.0")
    g = p.add_argument_group("rig")
    g.add_argument("--light-radius", type=length, default=0.003)
    g.add_argument("--lights", type=int, default=3)
    g.add_argument("--gamma", type=float, default=2.2)
    g.add_argument("--vignette", type=float, nargs="*", default=[], metavar="C",
                   help="radial polynomial coefficients c1 c2 ... of V = 1 + c1 r^2 + c2 r^4 + ...")


def _add_estimator_options(p, neighbors=NormalConfig.p):
    g = p.add_argument_group("estimator")
    g.add_argument("--lambda-min", type=float, default=InitSearchConfig.lambda_min)
    g.add_argument("--lambda-max", type=float, default=InitSearchConfig.lambda_max)
    g.add_argument("--samples", type=int, default=InitSearchConfig.samples)
    g.add_argument("--irls-iterations", type=int, default=InitSearchConfig.irls_iterations)
    g.add_argument("--epsilon", type=float, default=5.0, help="Huber threshold in gray levels")
    g.add_argument("--saturation", type=float, default=250.0, help="gray level at or above which samples drop")
    g.add_argument("--floor", type=float, default=5.0, help="gray level at or below which samples drop")
    g.add_argument("--max-iterations", type=int, default=SolverConfig.max_iterations)
    g.add_argument("--gradient-tolerance", type=float, default=SolverConfig.gradient_tolerance)
    g.add_argument("--parameter-tolerance", type=float, default=SolverConfig.parameter_tolerance)
    g.add_argument("--initial-damping", type=float, default=SolverConfig.initial_damping)
    g.add_argument("--linear-solver", choices=("schur", "dense"), default="schur")
    g.add_argument("--neighbors", type=int, default=neighbors, help="k for normal estimation")


def _configs(a):
    return dict(
        normal_config=NormalConfig(p=a.neighbors, min_neighbors=min(4, a.neighbors)),
        init_config=InitSearchConfig(a.lambda_min, a.lambda_max, a.samples, a.irls_iterations),
        loss=RobustLossConfig("huber", a.epsilon / 255.0, a.saturation / 255.0, a.floor / 255.0),
        solver=SolverConfig(max_iterations=a.max_iterations, gradient_tolerance=a.gradient_tolerance,
                            parameter_tolerance=a.parameter_tolerance, initial_damping=a.initial_damping,
                            linear_solver=a.linear_solver),
    )


def _rig(a) -> CalibrationRig:
    vig = VignetteModel("radial-polynomial", tuple(a.vignette)) if a.vignette else None
    return CalibrationRig.ring(a.light_radius, a.lights, a.gamma, vig)


def _scene_specs(a, distance, seed):
    scene = SceneSpec(a.surface, a.extent, a.points, a.albedo_field, tuple(a.albedo), seed)
    traj = TrajectorySpec(distance, a.views, a.lateral_jitter, a.rotational_jitter, seed)
    return scene, traj


def _simulate(a, distance, seed, out_dir=None, extra_config=None):
    scene, traj = _scene_specs(a, distance, seed)
    return simulate(scene, traj, _rig(a), lambda_gt=a.lambda_gt, noise_sigma=a.noise / 255.0, seed=seed,
                    corruption=a.corruption, specular_fraction=a.specular, out_dir=out_dir,
                    extra_config=extra_config)


def trial_seed(seed: int, trial: int) -> int:
    """Seed for one trial. Independent of distance so sweeps are paired."""
    return int(np.random.SeedSequence([seed, trial]).generate_state(1)[0])


def _cli_record(a) -> dict:
    skip = {"func", "output", "from_config", "workers"}
    return {"command": a.command, "version": __version__,
            "args": {k: v for k, v in sorted(vars(a).items()) if k not in skip}}


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _num(x) -> str:
    return "" if x is None or not np.isfinite(x) else f"{float(x):.6g}"


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(a) -> int:
    if a.views < 2:
        raise InputError(f"--views must be >= 2 (got {a.views}); scale needs at least two viewpoints")
    ds = _simulate(a, a.distance, a.seed, out_dir=a.output, extra_config={"cli": _cli_record(a)})
    print(f"wrote {len(ds.obs)} observations of {ds.obs.n_points} points in {ds.obs.n_images} views "
          f"to {a.output}")
    return 0


def _read_dataset(directory, calibration=None, observations=None):
    recon = read_sparse_model(directory)
    obs_path = observations or os.path.join(directory, "observations.csv")
    cal_path = calibration or os.path.join(directory, "calibration.json")
    for path in (obs_path, cal_path):
        if not os.path.exists(path):
            raise InputError(f"missing {path}")
    with open(obs_path) as fh:
        obs = parse_observations(fh)
    with open(cal_path) as fh:
        rig = parse_calibration(fh)
    return recon, obs, rig


def cmd_estimate(a) -> int:
    recon, obs, rig = _read_dataset(a.input, a.calibration, a.observations)
    report = estimate(recon, rig, obs, init=a.init, reference_image_id=a.reference_image, **_configs(a))
    report.config["inputs"] = {"model": os.path.abspath(a.input)}
    report.config["cli"] = _cli_record(a)
    os.makedirs(a.output, exist_ok=True)
    profile = None
    if a.dump_profile:
        if report.residual_profile is None:
            raise InputError("--dump-profile needs --init search")
        profile = open(os.path.join(a.output, "profile.csv"), "w")
    with open(os.path.join(a.output, "report.json"), "w") as fh, \
            open(os.path.join(a.output, "albedos.csv"), "w") as alb:
        write_report(report, fh, alb, profile)
    if profile is not None:
        profile.close()
        from .plotting import plot_profile
        plot_profile({"cost": report.residual_profile}, os.path.join(a.output, "profile.png"),
                     config=report.config["cli"])
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"lambda {report.lambda_hat!r}")
    if not report.converged:
        raise ConvergenceError(f"solver did not converge in {report.iterations} iterations; "
                               "report written with converged=false")
    return 0


def _sweep_job(job):
    a, distance, trial, seed = job
    ds = _simulate(a, distance, seed)
    gt = ds.truth.normals if a.gt_normals else None
    try:
        rep = estimate(ds.recon, ds.rig, ds.obs, gt_normals=gt, **_configs(a))
    except NearScaleError as exc:
        return distance, trial, seed, ds.truth.lambda_gt, float("nan"), type(exc).__name__
    return distance, trial, seed, ds.truth.lambda_gt, rep.lambda_hat, "ok"


def _run_jobs(jobs, workers):
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_sweep_job, jobs))
    return [_sweep_job(j) for j in jobs]


def cmd_sweep(a) -> int:
    if a.trials < 1:
        raise InputError("--trials must be >= 1")
    jobs = [(a, d, t, trial_seed(a.seed, t)) for d in a.distances for t in range(a.trials)]
    results = sorted(_run_jobs(jobs, a.workers), key=lambda r: (r[0], r[1]))
    trials_rows, summary = [], []
    for d in a.distances:
        mine = [r for r in results if r[0] == d]
        errs = np.array([abs(r[4] / r[3] - 1.0) * 100.0 for r in mine])
        ok = np.isfinite(errs)
        mean = float(errs[ok].mean()) if ok.any() else float("nan")
        std = float(errs[ok].std()) if ok.sum() > 1 else (0.0 if ok.any() else float("nan"))
        summary.append((d * 1e3, mean, std))
        for (dist, trial, seed, gt, lam, status), e in zip(mine, errs):
            trials_rows.append((f"{dist * 1e3:.6g}", trial, seed, _num(gt), _num(lam), _num(e), status))
    os.makedirs(a.output, exist_ok=True)
    with open(os.path.join(a.output, "sweep.csv"), "w") as fh:
        fh.write(_csv_text(("distance_mm", "mean_err_pct", "std_err_pct"),
                           [(f"{d:.6g}", _num(m), _num(s)) for d, m, s in summary]))
    with open(os.path.join(a.output, "sweep_trials.csv"), "w") as fh:
        fh.write(_csv_text(("distance_mm", "trial", "seed", "lambda_gt", "lambda_hat", "err_pct", "status"),
                           trials_rows))
    record = _cli_record(a)
    _write_json(os.path.join(a.output, "sweep.json"), {
        "cli": record,
        "summary": [{"distance_mm": d, "mean_err_pct": m, "std_err_pct": s} for d, m, s in summary],
        "failures": sum(r[5] != "ok" for r in results),
    })
    from .plotting import plot_sweep
    plot_sweep(summary, os.path.join(a.output, "sweep.png"), config=record)
    for d, m, s in summary:
        print(f"{d:6.3g} mm  {m:7.3f} % +- {s:.3f}")
    return 0


def cmd_twoview(a) -> int:
    roots = solve_two_view_scale(TwoViewConfig(a.b, a.z, a.t, a.I1, a.I2))
    for r in roots:
        print(repr(float(r)))
    return 0


def cmd_measure(a) -> int:
    ids = list(a.ids or [])
    if a.id_file:
        with open(a.id_file) as fh:
            ids += id_list(fh.read())
    if len(set(ids)) < 2:
        raise InputError(f"diameter needs at least two distinct point ids, got {len(set(ids))}")
    with open(a.report) as fh:
        report = read_report(fh)
    model = a.model or report.config.get("inputs", {}).get("model")
    if not model:
        raise InputError("report does not name its reconstruction; pass --model")
    recon = read_sparse_model(model)
    print(format_meters(measure_diameter(ids, recon, report.lambda_hat)))
    return 0


def _ablation_variant(a) -> tuple[str, ...]:
    chosen = set(a.which or [])
    for name in ABLATIONS:
        if getattr(a, name.replace("-", "_")):
            chosen.add(name)
    if not chosen:
        raise InputError("choose an ablation with --which or a --gt-*/--no-init flag")
    return tuple(n for n in ABLATIONS if n in chosen)


def _run_variant(ds, variant, configs):
    recon = ds.recon
    kwargs = {}
    if "gt-poses" in variant:
        # ground-truth multi-view geometry: uncorrupted points and poses, same gauge
        lam = ds.truth.lambda_gt
        points = {pid: ScenePoint(pid, x / lam) for pid, x in ds.truth.positions.items()}
        recon = Reconstruction(points, ds.truth.poses, recon.reference_image_id)
    if "gt-normals" in variant:
        kwargs["gt_normals"] = ds.truth.normals
    if "gt-gains" in variant:
        kwargs["gt_gains"] = ds.truth.gains
    init = "constant" if "no-init" in variant else "search"
    try:
        rep = estimate(recon, ds.rig, ds.obs, init=init, **kwargs, **configs)
    except NearScaleError as exc:
        return float("nan"), float("nan"), float("nan"), type(exc).__name__
    return (rep.lambda_hat, *_photometric_errors(rep, ds.truth), "ok")


def _photometric_errors(rep, truth) -> tuple[float, float]:
    """RMS relative albedo and gain errors in percent, in the report's gauge."""
    ref = rep.config["reference_image_id"]
    g_ref = truth.gains[ref]
    alb = [rep.albedos[p] / (truth.albedos[p] * g_ref) - 1 for p in rep.albedos]
    gain = [rep.gains[k] / (truth.gains[k] / g_ref) - 1 for k in rep.gains if k != ref]
    rms = lambda e: float(np.sqrt(np.mean(np.square(e))) * 100) if e else float("nan")
    return rms(alb), rms(gain)



def cmd_ablate(a) -> int:
    variant = _ablation_variant(a)
    label = "+".join(variant)
    configs = _configs(a)
    datasets = []
    if a.dataset:
        for k, d in enumerate(a.dataset):
            recon, obs, rig = _read_dataset(d)
            truth = read_ground_truth(d)
            datasets.append((f"{k}", Dataset(recon, obs, rig, truth)))
    else:
        for d in a.distances:
            for t in range(a.trials):
                datasets.append((f"{d * 1e3:.6g}mm/{t}", _simulate(a, d, trial_seed(a.seed, t))))
    rows, worse = [], 0
    base_errs, var_errs = [], []
    for name, ds in datasets:
        gt = ds.truth.lambda_gt
        lam_b, alb_b, gain_b, st_b = _run_variant(ds, (), configs)
        lam_v, alb_v, gain_v, st_v = _run_variant(ds, variant, configs)
        e_b = abs(lam_b / gt - 1) * 100
        e_v = abs(lam_v / gt - 1) * 100
        base_errs.append(e_b)
        var_errs.append(e_v)
        worse += bool(e_v > e_b) or (st_v != "ok" and st_b == "ok")
        rows.append((name, "baseline", _num(gt), _num(lam_b), _num(e_b), _num(alb_b), _num(gain_b), st_b))
        rows.append((name, label, _num(gt), _num(lam_v), _num(e_v), _num(alb_v), _num(gain_v), st_v))
    os.makedirs(a.output, exist_ok=True)
    with open(os.path.join(a.output, "ablate.csv"), "w") as fh:
        fh.write(_csv_text(("dataset", "variant", "lambda_gt", "lambda_hat", "err_pct", "albedo_rms_pct", "gain_rms_pct",
                            "status"), rows))
    record = _cli_record(a)
    means = [float(np.nanmean(base_errs)), float(np.nanmean(var_errs))]
    _write_json(os.path.join(a.output, "ablate.json"), {
        "cli": record, "variant": label,
        "mean_err_pct": {"baseline": means[0], label: means[1]},
        "variant_worse_count": int(worse), "datasets": len(datasets),
    })
    from .plotting import plot_ablation
    plot_ablation(["baseline", label], means, os.path.join(a.output, "ablate.png"), config=record)
    print(f"baseline {means[0]:.3f} %  {label} {means[1]:.3f} %  "
          f"({label} worse on {worse}/{len(datasets)})")
    return 0


# ---------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nearscale", description="Metric scale from near-light photometry.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="render a synthetic dataset with known scale")
    _add_scene_options(p)
    p.add_argument("--distance", type=length, default=0.005)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="estimate the metric scale of a reconstruction")
    p.add_argument("input", help="directory with cameras.txt, images.txt, points3D.txt")
    p.add_argument("--calibration", help="default: INPUT/calibration.json")
    p.add_argument("--observations", help="default: INPUT/observations.csv")
    p.add_argument("--init", choices=("search", "constant"), default="search")
    p.add_argument("--reference-image", type=int, default=None)
    p.add_argument("--dump-profile", action="store_true", help="also write profile.csv and profile.png")
    _add_estimator_options(p)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("sweep", help="scale error against distance to the surface")
    _add_scene_options(p, surface="sphere-cap", n_points=5000)
    _add_estimator_options(p)
    p.add_argument("--distances", type=length_list, default=length_list(DEFAULT_DISTANCES),
                   help=f"comma list or start:stop:step (default {DEFAULT_DISTANCES})")
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gt-normals", action="store_true", help="use the true normals")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("twoview", help="closed-form scale from one point seen twice")
    p.add_argument("--b", type=length, required=True, help="light offset along the optical axis")
    p.add_argument("--z", type=float, required=True, help="reference depth (reconstruction units)")
    p.add_argument("--t", type=float, required=True, help="camera advance (reconstruction units)")
    p.add_argument("--I1", type=float, required=True)
    p.add_argument("--I2", type=float, required=True)
    p.set_defaults(func=cmd_twoview)

    p = sub.add_parser("measure", help="longest metric diameter of a point subset")
    p.add_argument("--report", required=True, help="report.json written by estimate")
    p.add_argument("--model", help="reconstruction directory (default: the one named in the report)")
    p.add_argument("--ids", type=id_list)
    p.add_argument("--id-file")
    p.set_defaults(func=cmd_measure)

    p = sub.add_parser("ablate", help="compare the full method against a variant")
    _add_scene_options(p, surface="sphere-cap", n_points=5000)
    _add_estimator_options(p, neighbors=50)  # matched to the default corruption
    p.set_defaults(corruption=0.005)
    p.add_argument("--which", nargs="+", choices=ABLATIONS)
    for name in ABLATIONS:
        p.add_argument(f"--{name}", action="store_true")
    p.add_argument("--dataset", action="append", help="simulated dataset directory (repeatable)")
    p.add_argument("--distances", type=length_list, default=[0.005])
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_ablate)

    for p in sub.choices.values():
        p.add_argument("--from-config", metavar="JSON",
                       help="take defaults from the 'cli' record of an earlier artifact")
    return parser


def _parse(parser, argv):
    args = parser.parse_args(argv)
    if not args.from_config:
        return args
    with open(args.from_config) as fh:
        doc = json.load(fh)
    record = doc.get("cli") or doc.get("config", {}).get("cli")
    if not record or record.get("command") != args.command:
        raise InputError(f"{args.from_config} holds no '{args.command}' record")
    sub = parser._subparsers._group_actions[0].choices[args.command]
    sub.set_defaults(**record["args"])
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _parse(parser, argv)
        return args.func(args)
    except NearScaleError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
