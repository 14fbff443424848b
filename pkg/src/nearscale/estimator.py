"""Metric scale estimation from near-light photometry.

Pipeline: drop saturated and dark samples, estimate normals, seed
(scale, albedo, gain) by a log-spaced scan over the scale, then refine all of
them jointly with a robust Levenberg-Marquardt solver.

Internally the reconstruction is rescaled so that the median camera-to-point
distance is 1. In those units the scale equals the metric median viewing
distance, which is what the scan bounds refer to.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial.distance import pdist

from .errors import DegenerateBaseline, InputError, InsufficientData, SingularGeometry
from .normals import NormalConfig, estimate_normals, orient_normals
from .photomodel import huber_cost, predict_batch, robust_residual, rotated_lights, shading
from .recon_io import (
    CalibrationRig, EstimationReport, ObservationSet, Reconstruction, ScenePoint,
)

log = logging.getLogger(__name__)

GAIN_CLAMP = (1e-3, 1e3)
MAX_DAMPING = 1e16


@dataclass(frozen=True)
class InitSearchConfig:
    lambda_min: float = 1e-4
    lambda_max: float = 1e1
    samples: int = 200
    irls_iterations: int = 10

    def __post_init__(self):
        if not 0 < self.lambda_min < self.lambda_max:
            raise InputError("need 0 < lambda_min < lambda_max")
        if self.samples < 2:
            raise InputError("samples must be >= 2")

    def grid(self) -> np.ndarray:
        return np.geomspace(self.lambda_min, self.lambda_max, self.samples)


@dataclass(frozen=True)
class RobustLossConfig:
    kernel: str = "huber"
    epsilon: float = 5.0 / 255.0
    saturation_threshold: float = 250.0 / 255.0
    floor_threshold: float = 5.0 / 255.0

    def __post_init__(self):
        if self.kernel != "huber":
            raise InputError("only the huber kernel is implemented")
        if not self.epsilon > 0:
            raise InputError("epsilon must be positive")
        if not 0 < self.floor_threshold < self.saturation_threshold <= 1:
            raise InputError("need 0 < floor_threshold < saturation_threshold <= 1")


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 100
    gradient_tolerance: float = 1e-10
    parameter_tolerance: float = 1e-10
    function_tolerance: float = 1e-14
    initial_damping: float = 1e-4
    gain_parameterization: str = "log"
    linear_solver: str = "schur"  # or "dense"

    def __post_init__(self):
        if min(self.max_iterations, self.gradient_tolerance, self.parameter_tolerance,
               self.initial_damping) <= 0:
            raise InputError("solver settings must be positive")
        if self.linear_solver not in ("schur", "dense"):
            raise InputError("linear_solver must be 'schur' or 'dense'")


# ---------------------------------------------------------------------------
# problem assembly


@dataclass
class Problem:
    """Flat arrays for one estimation; geometry already normalised."""

    point_ids: np.ndarray
    image_ids: np.ndarray
    ref: int
    X: np.ndarray
    N: np.ndarray
    R: np.ndarray
    C: np.ndarray
    pidx: np.ndarray
    kidx: np.ndarray
    I: np.ndarray
    V: np.ndarray
    lights: np.ndarray
    gamma: float
    unit: float  # normalised coordinates = input coordinates / unit
    warnings: list[str] = field(default_factory=list)

    @property
    def n(self):
        return len(self.point_ids)

    @property
    def m(self):
        return len(self.image_ids)

    def gathered(self):
        return self.X[self.pidx], self.N[self.pidx], self.R[self.kidx], self.C[self.kidx]

    def rotated_lights(self):
        return rotated_lights(self.R, self.lights)[self.kidx]


def build_problem(recon: Reconstruction, rig: CalibrationRig, obs: ObservationSet,
                  normalize=True) -> Problem:
    """Pair observations with geometry. Points without a normal are dropped."""
    warnings = []
    has_normal = np.array([recon.points[int(p)].normal is not None for p in obs.point_ids], dtype=bool)
    if not np.all(has_normal):
        dropped = len(np.unique(obs.point_ids[~has_normal]))
        obs = obs.subset(has_normal, [f"excluded {dropped} point(s) without a normal"])
    if len(obs) == 0:
        raise InsufficientData("no observations of points with normals")
    point_ids, pidx = np.unique(obs.point_ids, return_inverse=True)
    image_ids, kidx = np.unique(obs.image_ids, return_inverse=True)
    if recon.reference_image_id not in image_ids:
        raise InsufficientData(f"reference image {recon.reference_image_id} has no usable observations")
    X = np.array([recon.points[int(p)].position for p in point_ids])
    N = np.array([recon.points[int(p)].normal for p in point_ids])
    poses = [recon.pose(int(i)) for i in image_ids]
    R = np.array([p.rotation for p in poses])
    C = np.array([p.center for p in poses])
    unit = 1.0
    if normalize:
        unit = float(np.median(np.linalg.norm(C[kidx] - X[pidx], axis=1)))
        if not unit > 0:
            raise InsufficientData("cameras coincide with the observed points")
    return Problem(
        point_ids, image_ids, int(np.flatnonzero(image_ids == recon.reference_image_id)[0]),
        X / unit, N, R, C / unit, pidx, kidx, obs.intensity.astype(float), obs.vignette.astype(float),
        rig.light_offsets, rig.gamma, unit, list(obs.warnings) + warnings,
    )


# ---------------------------------------------------------------------------
# filtering


def filter_observations(obs: ObservationSet, loss: RobustLossConfig = RobustLossConfig()) -> ObservationSet:
    """Remove samples near saturation (specular highlights) or near black."""
    keep = (obs.intensity < loss.saturation_threshold) & (obs.intensity > loss.floor_threshold)
    removed = int(np.count_nonzero(~keep))
    notes = [f"filtered {removed} saturated or dark observation(s)"] if removed else []
    out = obs.subset(keep, notes)
    if len(out) < 10 or out.n_images < 2:
        raise InsufficientData(
            f"{len(out)} observations in {out.n_images} image(s) survive filtering; need 10 in 2")
    return out


# ---------------------------------------------------------------------------
# initialisation


def init_albedos(lam: float, problem: Problem, shade=None):
    """Invert the model in the reference image (gain 1) for each point's albedo.

    Returns ``(albedo, initialised)`` arrays over the problem's points; points
    not seen in the reference image are marked uninitialised and get the
    median albedo.
    """
    sel = problem.kidx == problem.ref
    if not np.any(sel):
        raise InsufficientData("no points visible in the reference image")
    if shade is None:
        X, N, R, C = problem.gathered()
        shade = shading(X[sel], N[sel], R[sel], C[sel], lam, problem.lights,
                        Rb=problem.rotated_lights()[sel])
    p = problem.pidx[sel]
    denom = shade * problem.V[sel]
    ok = denom > 0
    albedo = np.full(problem.n, np.nan)
    albedo[p[ok]] = np.pi * problem.I[sel][ok] ** problem.gamma / denom[ok]
    good = np.isfinite(albedo) & (albedo > 0)
    if not np.any(good):
        raise InsufficientData("no reference-image point has positive irradiance")
    initialised = np.zeros(problem.n, dtype=bool)
    initialised[p[ok]] = True
    initialised &= good
    albedo[~good] = np.median(albedo[good])
    return albedo, initialised


def init_gain(lin_pred: np.ndarray, lin_obs: np.ndarray, epsilon: float, irls_iterations: int = 10):
    """Robust scalar regression ``lin_obs ~ g * lin_pred`` in linear space.

    Returns ``(gain, warning_or_None)``.
    """
    if len(lin_pred) < 3:
        return 1.0, f"only {len(lin_pred)} observation(s) to regress gain"
    if not np.any(lin_pred > 0):
        return 1.0, "gain undetermined: all predictions are zero"
    w = np.ones_like(lin_pred)
    g = 1.0
    for _ in range(max(1, irls_iterations)):
        den = np.sum(w * lin_pred * lin_pred)
        if not den > 0:
            return 1.0, "gain undetermined: all robust weights vanished"
        g = float(np.sum(w * lin_obs * lin_pred) / den)
        _, w = robust_residual(g * lin_pred, lin_obs, epsilon)
    return float(np.clip(g, *GAIN_CLAMP)), None


def _trial(lam, problem: Problem, loss: RobustLossConfig, irls_iterations: int,
           fixed_gains: np.ndarray | None, geometry):
    X, N, R, C, Rb = geometry
    S = shading(X, N, R, C, lam, problem.lights, Rb=Rb)
    ref = problem.kidx == problem.ref
    albedo, init = init_albedos(lam, problem, shade=S[ref])
    lin_pred = albedo[problem.pidx] * S * problem.V / np.pi
    lin_obs = problem.I ** problem.gamma
    use = init[problem.pidx]
    gains = np.ones(problem.m)
    notes = []
    for k in range(problem.m):
        if k == problem.ref:
            continue
        if fixed_gains is not None:
            gains[k] = fixed_gains[k]
            continue
        sel = use & (problem.kidx == k)
        gains[k], note = init_gain(lin_pred[sel], lin_obs[sel], loss.epsilon, irls_iterations)
        if note:
            notes.append(f"image {problem.image_ids[k]}: {note}")
    pred = np.power(lin_pred[use] * gains[problem.kidx[use]], 1.0 / problem.gamma)
    cost = huber_cost(pred - problem.I[use], loss.epsilon)
    return cost, albedo, gains, notes


def init_search(problem: Problem, cfg: InitSearchConfig = InitSearchConfig(),
                loss: RobustLossConfig = RobustLossConfig(), fixed_gains=None):
    """Scan the log-spaced scale grid; return the best (lam, albedo, gains) and the profile.

    The profile is a list of (lam, cost) in normalised units.
    """
    geometry = (*problem.gathered(), problem.rotated_lights())
    profile = []
    best = None
    for lam in cfg.grid():
        cost, albedo, gains, notes = _trial(lam, problem, loss, cfg.irls_iterations, fixed_gains, geometry)
        profile.append((float(lam), float(cost)))
        if best is None or cost < best[0]:
            best = (cost, float(lam), albedo, gains, notes)
    _, lam, albedo, gains, notes = best
    return lam, albedo, gains, profile, notes


# ---------------------------------------------------------------------------
# Levenberg-Marquardt


@dataclass
class SolverResult:
    lam: float
    albedo: np.ndarray
    gains: np.ndarray
    initial_cost: float
    cost: float
    iterations: int
    converged: bool
    residuals: np.ndarray
    reason: str


class _Objective:
    """Residuals and log-parameter Jacobian blocks of the robust problem."""

    def __init__(self, problem: Problem, loss: RobustLossConfig, free_gain: np.ndarray):
        self.p = problem
        self.eps = loss.epsilon
        self.geometry = problem.gathered()
        self.Rb = problem.rotated_lights()
        self.free_gain = free_gain  # bool over images
        self.gain_col = np.cumsum(free_gain) * free_gain  # 1-based column in camera block, 0 = fixed

    def unpack(self, theta):
        p = self.p
        lam = float(np.exp(theta[0]))
        albedo = np.exp(theta[1:1 + p.n])
        gains = self.fixed_gains.copy()
        gains[self.free_gain] = np.exp(theta[1 + p.n:])
        return lam, albedo, gains

    def pack(self, lam, albedo, gains):
        self.fixed_gains = np.asarray(gains, dtype=float).copy()
        return np.concatenate([[np.log(lam)], np.log(albedo), np.log(gains[self.free_gain])])

    def cost(self, theta):
        lam, albedo, gains = self.unpack(theta)
        p = self.p
        pred = predict_batch(*self.geometry, lam, albedo[p.pidx], gains[p.kidx], p.V, p.lights, p.gamma,
                             Rb=self.Rb)
        r = pred - p.I
        return huber_cost(r, self.eps), r

    def linearize(self, theta):
        p = self.p
        lam, albedo, gains = self.unpack(theta)
        pred, d_lam, d_alb, d_gain, zero = predict_batch(
            *self.geometry, lam, albedo[p.pidx], gains[p.kidx], p.V, p.lights, p.gamma, derivatives=True,
            Rb=self.Rb)
        r = pred - p.I
        _, w = robust_residual(pred, p.I, self.eps)
        w = np.where(zero, 0.0, w)
        J_lam = d_lam * lam
        J_alb = d_alb * albedo[p.pidx]
        J_gain = np.where(self.free_gain[p.kidx], d_gain * gains[p.kidx], 0.0)
        return r, w, J_lam, J_alb, J_gain

    # -- normal equations -------------------------------------------------

    def camera_rows(self, J_lam, J_gain):
        """Per-sample rows of the (lam, free gains) Jacobian block."""
        p = self.p
        ncam = 1 + int(self.free_gain.sum())
        A = np.zeros((len(J_lam), ncam))
        A[:, 0] = J_lam
        col = self.gain_col[p.kidx]
        rows = np.flatnonzero(col > 0)
        A[rows, col[rows]] = J_gain[rows]
        return A

    def step_schur(self, lin, mu):
        r, w, J_lam, J_alb, J_gain = lin
        p = self.p
        A = self.camera_rows(J_lam, J_gain)
        wA = w[:, None] * A
        H_cc = A.T @ wA
        g_c = wA.T @ r
        H_aa = np.bincount(p.pidx, weights=w * J_alb * J_alb, minlength=p.n)
        g_a = np.bincount(p.pidx, weights=w * J_alb * r, minlength=p.n)
        H_ac = np.zeros((p.n, A.shape[1]))
        np.add.at(H_ac, p.pidx, (w * J_alb)[:, None] * A)
        gradient = np.concatenate([[g_c[0]], g_a, g_c[1:]])

        H_cc_d = H_cc + mu * np.diag(_damping_diag(np.diag(H_cc)))
        H_aa_d = H_aa + mu * _damping_diag(H_aa)
        H_aa_d = np.where(H_aa_d > 0, H_aa_d, 1.0)
        inv = 1.0 / H_aa_d
        S = H_cc_d - H_ac.T @ (inv[:, None] * H_ac)
        rhs = -g_c + H_ac.T @ (inv * g_a)
        d_c = _solve_spd(S, rhs)
        d_a = inv * (-g_a - H_ac @ d_c)
        step = np.concatenate([[d_c[0]], d_a, d_c[1:]])
        return step, gradient

    def step_dense(self, lin, mu):
        r, w, J_lam, J_alb, J_gain = lin
        p = self.p
        A = self.camera_rows(J_lam, J_gain)
        J = np.zeros((len(r), 1 + p.n + A.shape[1] - 1))
        J[:, 0] = A[:, 0]
        J[np.arange(len(r)), 1 + p.pidx] = J_alb
        J[:, 1 + p.n:] = A[:, 1:]
        H = J.T @ (w[:, None] * J)
        gradient = J.T @ (w * r)
        d = np.diag(H)
        Hd = H + mu * np.diag(_damping_diag(d))
        idle = np.diag(Hd) <= 0
        Hd[idle, idle] = 1.0
        return _solve_spd(Hd, -gradient), gradient


def _damping_diag(d):
    d = np.asarray(d, dtype=float)
    floor = 1e-12 * max(float(d.max(initial=0.0)), 1e-300)
    return np.maximum(d, floor)


def _solve_spd(A, b):
    try:
        L = np.linalg.cholesky(A)
        y = np.linalg.solve(L, b)
        return np.linalg.solve(L.T, y)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(A, b, rcond=None)[0]


def optimize(problem: Problem, lam: float, albedo, gains, loss: RobustLossConfig = RobustLossConfig(),
             solver: SolverConfig = SolverConfig(), fix_gains=False,
             lambda_bounds: tuple[float, float] | None = None) -> SolverResult:
    """Robust LM over (log lam, log albedo_i, log gain_k), reference gain held at 1.

    Never returns a point with higher robust cost than the start. With
    ``lambda_bounds`` the scale is projected into that interval after every
    step: far from the surface the cost flattens into the zero-baseline
    plateau as lam grows, and noise can tilt it enough to pull the solver
    off towards infinity.
    """
    if not np.any(np.linalg.norm(problem.lights, axis=1) > 0):
        raise DegenerateBaseline("all camera-light offsets are zero; scale is unobservable")
    free = np.ones(problem.m, dtype=bool)
    free[problem.ref] = False
    if fix_gains:
        free[:] = False
    gains = np.asarray(gains, dtype=float).copy()
    gains[problem.ref] = 1.0
    obj = _Objective(problem, loss, free)
    theta = obj.pack(lam, np.asarray(albedo, dtype=float), gains)
    cost, r = obj.cost(theta)
    initial_cost = cost
    step_fn = obj.step_schur if solver.linear_solver == "schur" else obj.step_dense
    log_bounds = None if lambda_bounds is None else np.log(np.asarray(lambda_bounds, dtype=float))
    mu = solver.initial_damping
    converged, reason = False, "max_iterations"
    iterations = 0
    first = True
    for iterations in range(1, solver.max_iterations + 1):
        lin = obj.linearize(theta)
        if first:
            first = False
            if not np.any(lin[2] != 0):
                raise DegenerateBaseline("cost is flat in scale at the initial point")
        step, gradient = step_fn(lin, mu)
        if np.max(np.abs(gradient)) < solver.gradient_tolerance:
            converged, reason = True, "gradient_tolerance"
            break
        accepted = False
        while mu <= MAX_DAMPING:
            candidate = theta + step
            if log_bounds is not None:
                candidate[0] = np.clip(candidate[0], *log_bounds)
            try:
                new_cost, new_r = obj.cost(candidate)
            except SingularGeometry:
                new_cost = np.inf
            if np.isfinite(new_cost) and new_cost < cost:
                accepted = True
                break
            mu *= 2.0
            step, _ = step_fn(lin, mu)
        if not accepted:
            converged, reason = True, "no_descent"
            break
        decrease = cost - new_cost
        step = candidate - theta
        theta, cost, r = candidate, new_cost, new_r
        mu *= 0.5
        if np.linalg.norm(step) <= solver.parameter_tolerance * (np.linalg.norm(theta) + solver.parameter_tolerance):
            converged, reason = True, "parameter_tolerance"
            break
        if decrease <= solver.function_tolerance * cost:
            converged, reason = True, "function_tolerance"
            break
    lam, albedo, gains = obj.unpack(theta)
    return SolverResult(lam, albedo, gains, initial_cost, cost, iterations, converged, r, reason)


# ---------------------------------------------------------------------------
# entry point


def _with_normals(recon: Reconstruction, normals) -> Reconstruction:
    points = {}
    for pid, pt in recon.points.items():
        n = normals.get(pid)
        points[pid] = ScenePoint(pid, pt.position, None if n is None else np.asarray(n, dtype=float))
    return recon.replace(points=points)


def estimate(recon: Reconstruction, rig: CalibrationRig, obs: ObservationSet, *,
             normal_config: NormalConfig = NormalConfig(),
             init_config: InitSearchConfig = InitSearchConfig(),
             loss: RobustLossConfig = RobustLossConfig(),
             solver: SolverConfig = SolverConfig(),
             init: str = "search",
             reference_image_id: int | None = None,
             gt_normals=None, gt_gains=None, gt_poses=None) -> EstimationReport:
    """Full pipeline; ``lambda_hat`` in the report converts input units to meters.

    ``init`` is ``"search"`` (scan) or ``"constant"`` (scale 1 in normalised
    units, unit albedos and gains). The ``gt_*`` arguments inject known
    normals (point_id -> vector), gains (image_id -> value relative to the
    reference image) or poses, replacing the estimated ones.
    """
    if not rig.has_baseline:
        raise DegenerateBaseline("all camera-light offsets are zero; scale is unobservable")
    if init not in ("search", "constant"):
        raise InputError("init must be 'search' or 'constant'")
    obs.validate_against(recon)
    if reference_image_id is not None:
        recon = recon.replace(reference_image_id=reference_image_id)
    if gt_poses is not None:
        recon = recon.replace(poses=list(gt_poses))
    warnings = list(obs.warnings)
    obs = filter_observations(obs, loss)
    warnings += obs.warnings[len(warnings):]

    if gt_normals is not None:
        recon = orient_normals(_with_normals(recon, gt_normals), obs)
    elif any(p.normal is None for p in recon.points.values()):
        recon, notes = estimate_normals(recon, obs, normal_config)
        warnings += notes

    problem = build_problem(recon, rig, obs)
    warnings += [w for w in problem.warnings if w not in warnings]

    fixed = None
    if gt_gains is not None:
        ref_gain = gt_gains[int(problem.image_ids[problem.ref])]
        fixed = np.array([gt_gains[int(i)] / ref_gain for i in problem.image_ids])

    profile = None
    if init == "search":
        lam0, albedo0, gains0, profile, notes = init_search(problem, init_config, loss, fixed)
        warnings += notes
    else:
        lam0, albedo0 = 1.0, np.ones(problem.n)
        gains0 = np.ones(problem.m) if fixed is None else fixed
    result = optimize(problem, lam0, albedo0, gains0, loss, solver, fix_gains=fixed is not None,
                      lambda_bounds=(init_config.lambda_min, init_config.lambda_max))
    if not result.converged:
        warnings.append(f"solver stopped after {result.iterations} iterations without converging")

    eps = loss.epsilon
    return EstimationReport(
        lambda_hat=result.lam / problem.unit,
        gains={int(i): float(g) for i, g in zip(problem.image_ids, result.gains)},
        albedos={int(i): float(a) for i, a in zip(problem.point_ids, result.albedo)},
        residual_rms=float(np.sqrt(np.mean(result.residuals ** 2)) * 255.0),
        inlier_fraction=float(np.mean(np.abs(result.residuals) <= eps)),
        iterations=result.iterations,
        converged=result.converged,
        init_lambda=lam0 / problem.unit,
        warnings=warnings,
        residual_profile=None if profile is None else [(lam / problem.unit, c) for lam, c in profile],
        initial_cost=result.initial_cost,
        final_cost=result.cost,
        config={
            "normals": asdict(normal_config), "init_search": asdict(init_config),
            "loss": asdict(loss), "solver": asdict(solver), "init": init,
            "reference_image_id": recon.reference_image_id,
            "ablation": {"gt_normals": gt_normals is not None, "gt_gains": gt_gains is not None,
                         "gt_poses": gt_poses is not None},
            "termination": result.reason,
        },
    )


def measure_diameter(point_ids, recon: Reconstruction, lambda_hat: float) -> float:
    """Longest metric distance between any two of the given points."""
    ids = list(dict.fromkeys(int(i) for i in point_ids))
    if len(ids) < 2:
        raise InsufficientData("diameter needs at least two points")
    missing = [i for i in ids if i not in recon.points]
    if missing:
        raise InputError(f"unknown point id {missing[0]}")
    P = np.array([recon.points[i].position for i in ids]) * float(lambda_hat)
    return float(pdist(P).max())
