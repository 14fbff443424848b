"""Synthetic near-light datasets with known metric scale.

Scenes are parametric surfaces in metric units centred on the world origin,
facing the -z half-space where the cameras live. Rendering evaluates the
Lambertian near-light model directly in each camera's frame. It shares no
code with :mod:`nearscale.photomodel`, so each one serves as an oracle for
the other.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InputError
from .recon_io import (
    CalibrationRig, CameraPose, ObservationSet, Reconstruction, ScenePoint,
    calibration_to_dict, serialize_observations, write_sparse_model,
)

SURFACES = ("plane", "sphere-cap", "sinusoidal-relief")
ALBEDO_FIELDS = ("constant", "two-tone", "smooth-gradient")
DEFAULT_NOISE = 4.0 / 255.0


@dataclass(frozen=True)
class SceneSpec:
    surface: str = "plane"
    extent: float = 0.01  # meters; side of the patch or base diameter of the cap
    n_points: int = 300
    albedo_field: str = "smooth-gradient"
    albedo_params: tuple[float, ...] = (0.5, 0.9)
    seed: int = 0
    cap_angle_deg: float = 60.0
    relief_amplitude: float = 0.05  # fraction of extent
    relief_periods: float = 1.5

    def __post_init__(self):
        if self.surface not in SURFACES:
            raise InputError(f"surface must be one of {SURFACES}")
        if self.albedo_field not in ALBEDO_FIELDS:
            raise InputError(f"albedo_field must be one of {ALBEDO_FIELDS}")
        if self.n_points < 50:
            raise InputError("n_points must be >= 50")
        if not self.extent > 0:
            raise InputError("extent must be positive")
        if not all(0 < a <= 1 for a in self.albedo_params):
            raise InputError("albedo values must lie in (0, 1]")
        if not 0 < self.cap_angle_deg <= 90:
            raise InputError("cap_angle_deg must be in (0, 90]")

    @property
    def cap_radius(self) -> float:
        return 0.5 * self.extent / math.sin(math.radians(self.cap_angle_deg))


@dataclass(frozen=True)
class TrajectorySpec:
    distance: float = 0.005
    n_views: int = 4
    lateral_jitter: float | None = None  # meters, std across the optical axis; None = distance / 2
    rotational_jitter: float = 2.0  # degrees
    seed: int = 0

    def __post_init__(self):
        if not self.distance > 0:
            raise InputError("distance must be positive")
        if self.n_views < 2:
            raise InputError("n_views must be >= 2")
        if self.jitter < 0 or self.rotational_jitter < 0:
            raise InputError("jitter must be non-negative")

    @property
    def jitter(self) -> float:
        # parallax grows with distance, as when an endoscope sweeps across a wall
        return 0.5 * self.distance if self.lateral_jitter is None else self.lateral_jitter


@dataclass
class Scene:
    spec: SceneSpec
    positions: np.ndarray
    normals: np.ndarray
    albedos: np.ndarray  # true Lambertian albedo in (0, 1]
    sphere_center: np.ndarray | None = None


@dataclass
class Rendering:
    """Rendered samples; arrays are aligned, one row per visible (point, view)."""

    point_index: np.ndarray
    view_index: np.ndarray
    intensity: np.ndarray
    clean: np.ndarray
    vignette: np.ndarray
    keypoints: np.ndarray  # (s, 2) pixel coordinates in the fisheye image
    light_power: float
    gains: np.ndarray


@dataclass
class GroundTruth:
    lambda_gt: float
    albedos: dict[int, float]  # scaled albedo (true albedo x light power x reference gain)
    gains: dict[int, float]
    normals: dict[int, np.ndarray]
    positions: dict[int, np.ndarray]  # metric
    poses: list[CameraPose]  # up-to-scale, uncorrupted
    light_power: float
    extent: float
    config: dict = field(default_factory=dict)


@dataclass
class Dataset:
    recon: Reconstruction
    obs: ObservationSet
    rig: CalibrationRig
    truth: GroundTruth


# ---------------------------------------------------------------------------
# scenes


def _stratified_unit_square(n, rng):
    g = int(math.ceil(math.sqrt(n)))
    i, j = np.meshgrid(np.arange(g), np.arange(g), indexing="ij")
    u = (i.ravel() + rng.random(g * g)) / g
    v = (j.ravel() + rng.random(g * g)) / g
    keep = np.sort(rng.choice(g * g, size=n, replace=False))
    return u[keep], v[keep]


def _concentric_disk(u, v):
    """Shirley-Chiu area-preserving map of the unit square onto the unit disk."""
    a, b = 2 * u - 1, 2 * v - 1
    r = np.where(np.abs(a) > np.abs(b), a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        phi = np.where(
            np.abs(a) > np.abs(b), (np.pi / 4) * (b / a),
            np.where(b == 0, 0.0, np.pi / 2 - (np.pi / 4) * (a / b)),
        )
    return np.abs(r), np.where(r < 0, phi + np.pi, phi)


def _albedo_field(spec: SceneSpec, xy):
    p = spec.albedo_params
    if spec.albedo_field == "constant":
        return np.full(len(xy), p[0])
    if spec.albedo_field == "two-tone":
        lo, hi = p[0], p[1] if len(p) > 1 else p[0]
        return np.where(xy[:, 0] < 0, lo, hi)
    lo, hi = p[0], p[1] if len(p) > 1 else p[0]
    s = np.clip(xy[:, 0] / spec.extent + 0.5, 0.0, 1.0)
    return lo + (hi - lo) * s


def make_scene(spec: SceneSpec) -> Scene:
    rng = np.random.default_rng([spec.seed, 101])
    u, v = _stratified_unit_square(spec.n_points, rng)
    half = 0.5 * spec.extent
    center = None
    if spec.surface == "sphere-cap":
        R = spec.cap_radius
        alpha = math.radians(spec.cap_angle_deg)
        rad, phi = _concentric_disk(u, v)
        # uniform area on the cap: cos(polar) uniform on [cos(alpha), 1]
        cos_t = 1.0 - rad ** 2 * (1.0 - math.cos(alpha))
        sin_t = np.sqrt(np.clip(1.0 - cos_t ** 2, 0.0, None))
        center = np.array([0.0, 0.0, R])
        normals = np.column_stack([sin_t * np.cos(phi), sin_t * np.sin(phi), -cos_t])
        positions = center + R * normals
    else:
        x = (2 * u - 1) * half
        y = (2 * v - 1) * half
        if spec.surface == "plane":
            z = np.zeros_like(x)
            normals = np.tile([0.0, 0.0, -1.0], (len(x), 1))
        else:
            amp = spec.relief_amplitude * spec.extent
            k = 2 * np.pi * spec.relief_periods / spec.extent
            z = amp * np.sin(k * x) * np.sin(k * y)
            hx = amp * k * np.cos(k * x) * np.sin(k * y)
            hy = amp * k * np.sin(k * x) * np.cos(k * y)
            nrm = np.column_stack([hx, hy, -np.ones_like(x)])
            normals = nrm / np.linalg.norm(nrm, axis=1, keepdims=True)
        positions = np.column_stack([x, y, z])
    albedos = _albedo_field(spec, positions[:, :2])
    return Scene(spec, positions, normals, albedos, center)


# ---------------------------------------------------------------------------
# trajectories


def look_at(center, target) -> np.ndarray:
    """Camera-to-world rotation whose optical (+z) axis points at ``target``."""
    f = np.asarray(target, dtype=float) - np.asarray(center, dtype=float)
    f /= np.linalg.norm(f)
    ref = np.array([1.0, 0.0, 0.0]) if abs(f[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    x = ref - np.dot(ref, f) * f
    x /= np.linalg.norm(x)
    y = np.cross(f, x)
    return np.column_stack([x, y, f])


def _axis_angle(axis, angle):
    axis = axis / np.linalg.norm(axis)
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + math.sin(angle) * K + (1 - math.cos(angle)) * K @ K


def make_trajectory(spec: TrajectorySpec) -> list[CameraPose]:
    rng = np.random.default_rng([spec.seed, 202])
    home = np.array([0.0, 0.0, -spec.distance])
    target = np.zeros(3)
    poses = [CameraPose(1, look_at(home, target), home)]
    for k in range(1, spec.n_views):
        offset = rng.normal(size=2) * spec.jitter
        axis = rng.normal(size=3)
        angle = math.radians(rng.normal() * spec.rotational_jitter)
        c = home + np.array([offset[0], offset[1], 0.0])
        R = look_at(c, target)
        if angle != 0.0:
            R = R @ _axis_angle(axis, angle)
        poses.append(CameraPose(k + 1, R, c))
    return poses


def draw_gains(n_views, seed, low=0.8, high=1.25) -> np.ndarray:
    rng = np.random.default_rng([seed, 303])
    g = np.exp(rng.uniform(math.log(low), math.log(high), size=n_views))
    g[0] = 1.0
    return g


# ---------------------------------------------------------------------------
# rendering


def _irradiance_in_camera(P, Nc, lights):
    """sum over lights of max(cos, 0) / d^2, all vectors in the camera frame."""
    total = np.zeros(len(P))
    lit = np.zeros(len(P), dtype=bool)
    for b in lights:
        to_light = b[None, :] - P
        dist = np.linalg.norm(to_light, axis=1)
        cos = np.sum(Nc * to_light, axis=1) / dist
        facing = cos > 0
        total = total + np.where(facing, cos / dist ** 2, 0.0)
        lit |= facing
    return total, lit


def render(scene: Scene, poses, rig: CalibrationRig, gains=None, noise_sigma=DEFAULT_NOISE,
           seed=0, light_power=None, specular_fraction=0.0, fov_deg=160.0,
           exposure_target=0.6) -> Rendering:
    """Render every visible (point, view) sample.

    ``light_power=None`` picks the power so that the 95th percentile of the
    first view's pixel values lands on ``exposure_target``.
    """
    n, m = len(scene.positions), len(poses)
    gains = np.ones(m) if gains is None else np.asarray(gains, dtype=float)
    half_fov = math.radians(fov_deg) / 2
    lights = rig.light_offsets
    per_view = []
    for k, pose in enumerate(poses):
        Rt = pose.rotation.T
        P = (scene.positions - pose.center) @ Rt.T
        Nc = scene.normals @ Rt.T
        dist = np.linalg.norm(P, axis=1)
        theta = np.arccos(np.clip(P[:, 2] / dist, -1.0, 1.0))
        irr, lit = _irradiance_in_camera(P, Nc, lights)
        faces_camera = np.sum(Nc * P, axis=1) < 0
        visible = (P[:, 2] > 0) & (theta <= half_fov) & faces_camera & lit
        radial = theta / half_fov
        vig = rig.vignette(radial)
        phi = np.arctan2(P[:, 1], P[:, 0])
        per_view.append((visible, irr, vig, radial, phi))

    if light_power is None:
        visible, irr, vig, _, _ = per_view[0]
        lin = scene.albedos * irr * vig / np.pi * gains[0]
        light_power = exposure_target ** rig.gamma / np.quantile(lin[visible], 0.95)

    rows = []
    for k in range(m):
        visible, irr, vig, radial, phi = per_view[k]
        radiance = scene.albedos * light_power * gains[k] * vig / np.pi * irr
        rows.append((k, visible, radiance ** (1.0 / rig.gamma), vig, radial, phi))

    # counter-based noise: sample (i, k) always gets draw number i * m + k
    noise = np.random.Generator(np.random.Philox(key=seed)).standard_normal((n, m))
    spec_rng = np.random.default_rng([seed, 404])
    specular = spec_rng.random((n, m)) < specular_fraction

    pi, vi, val, clean, vg, kp = [], [], [], [], [], []
    for k, visible, value, vig, radial, phi in rows:
        idx = np.flatnonzero(visible)
        noisy = np.clip(value[idx] + noise_sigma * noise[idx, k], 0.0, 1.0)
        noisy = np.where(specular[idx, k], 1.0, noisy)
        pi.append(idx)
        vi.append(np.full(len(idx), k))
        val.append(noisy)
        clean.append(value[idx])
        vg.append(vig[idx])
        # equidistant fisheye, 640 px across the full field of view
        rpx = 320.0 * radial[idx]
        kp.append(np.column_stack([320.0 + rpx * np.cos(phi[idx]), 320.0 + rpx * np.sin(phi[idx])]))
    return Rendering(
        np.concatenate(pi), np.concatenate(vi), np.concatenate(val), np.concatenate(clean),
        np.concatenate(vg), np.concatenate(kp), float(light_power), gains,
    )


# ---------------------------------------------------------------------------
# datasets


def emit_dataset(scene: Scene, poses, rendering: Rendering, rig: CalibrationRig, lambda_gt: float,
                 out_dir=None, corruption=0.0, seed=0, config=None) -> Dataset:
    """Divide metric geometry by ``lambda_gt`` and package the result.

    ``corruption`` adds Gaussian noise with std ``corruption * extent`` (metric)
    to point positions and camera centres, emulating SfM error.
    """
    if not lambda_gt > 0:
        raise InputError("lambda_gt must be positive")
    n = len(scene.positions)
    point_ids = np.arange(1, n + 1)
    pos = scene.positions / lambda_gt
    centers = np.array([p.center for p in poses]) / lambda_gt
    gt_poses = [CameraPose(p.image_id, p.rotation, c) for p, c in zip(poses, centers)]
    if corruption > 0:
        rng = np.random.default_rng([seed, 505])
        sigma = corruption * scene.spec.extent / lambda_gt
        pos = pos + rng.normal(size=pos.shape) * sigma
        centers = centers + rng.normal(size=centers.shape) * sigma
    points = {int(i): ScenePoint(int(i), pos[k]) for k, i in enumerate(point_ids)}
    rposes = [CameraPose(p.image_id, p.rotation, c) for p, c in zip(poses, centers)]
    recon = Reconstruction(points, rposes)

    image_ids = np.array([p.image_id for p in poses])
    obs = ObservationSet(point_ids[rendering.point_index], image_ids[rendering.view_index],
                         rendering.intensity, rendering.vignette)
    gref = rendering.gains[0]
    truth = GroundTruth(
        lambda_gt=float(lambda_gt),
        albedos={int(i): float(a * rendering.light_power * gref) for i, a in zip(point_ids, scene.albedos)},
        gains={int(i): float(g / gref) for i, g in zip(image_ids, rendering.gains)},
        normals={int(i): scene.normals[k] for k, i in enumerate(point_ids)},
        positions={int(i): scene.positions[k] for k, i in enumerate(point_ids)},
        poses=gt_poses,
        light_power=rendering.light_power,
        extent=scene.spec.extent,
        config=config or {},
    )
    if out_dir is not None:
        tracks = {}
        for pidx, vidx, (x, y) in zip(rendering.point_index, rendering.view_index, rendering.keypoints):
            tracks.setdefault(int(image_ids[vidx]), []).append((x, y, int(point_ids[pidx])))
        write_dataset(out_dir, recon, obs, rig, truth, tracks)
    return Dataset(recon, obs, rig, truth)


def simulate(scene_spec: SceneSpec, traj_spec: TrajectorySpec, rig: CalibrationRig | None = None,
             lambda_gt=1.0, noise_sigma=DEFAULT_NOISE, seed=0, gains=None, corruption=0.0,
             specular_fraction=0.0, out_dir=None, extra_config=None) -> Dataset:
    """Scene, trajectory, render and emit in one call.

    ``extra_config`` entries are merged into the recorded configuration.
    """
    rig = rig or CalibrationRig.ring()
    scene = make_scene(scene_spec)
    poses = make_trajectory(traj_spec)
    if gains is None:
        gains = draw_gains(traj_spec.n_views, seed)
    rendering = render(scene, poses, rig, gains, noise_sigma, seed, specular_fraction=specular_fraction)
    config = {
        "scene": asdict(scene_spec), "trajectory": asdict(traj_spec),
        "calibration": calibration_to_dict(rig), "lambda_gt": lambda_gt,
        "noise_sigma": noise_sigma, "seed": seed, "corruption": corruption,
        "specular_fraction": specular_fraction,
        **(extra_config or {}),
    }
    return emit_dataset(scene, poses, rendering, rig, lambda_gt, out_dir, corruption, seed, config)


# ---------------------------------------------------------------------------
# files


def write_dataset(out_dir, recon, obs, rig, truth: GroundTruth, tracks=None):
    os.makedirs(out_dir, exist_ok=True)
    fisheye = ("OPENCV_FISHEYE", 640, 640, (320.0 / math.radians(80.0),) * 2 + (320.0, 320.0, 0.0, 0.0, 0.0, 0.0))
    write_sparse_model(recon, out_dir, camera=fisheye, tracks=tracks)
    with open(os.path.join(out_dir, "observations.csv"), "w") as fh:
        fh.write(serialize_observations(obs))
    with open(os.path.join(out_dir, "calibration.json"), "w") as fh:
        json.dump(calibration_to_dict(rig), fh, indent=2)
        fh.write("\n")
    alb = np.array(list(truth.albedos.values()))
    doc = {
        "lambda_gt": truth.lambda_gt,
        "gains": {str(k): v for k, v in truth.gains.items()},
        "albedo_stats": {"min": float(alb.min()), "max": float(alb.max()), "mean": float(alb.mean())},
        "light_power": truth.light_power,
        "extent": truth.extent,
        "poses": [
            {"image_id": p.image_id, "rotation": p.rotation.tolist(), "center": p.center.tolist()}
            for p in truth.poses
        ],
        "points_file": "ground_truth_points.csv",
        "config": truth.config,
    }
    with open(os.path.join(out_dir, "ground_truth.json"), "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    with open(os.path.join(out_dir, "ground_truth_points.csv"), "w") as fh:
        fh.write("point_id,x,y,z,nx,ny,nz,albedo\n")
        for pid in truth.positions:
            x, n = truth.positions[pid], truth.normals[pid]
            vals = [*x, *n, truth.albedos[pid]]
            fh.write(f"{pid}," + ",".join(repr(float(v)) for v in vals) + "\n")


def read_ground_truth(directory) -> GroundTruth:
    with open(os.path.join(directory, "ground_truth.json")) as fh:
        doc = json.load(fh)
    albedos, normals, positions = {}, {}, {}
    with open(os.path.join(directory, doc.get("points_file", "ground_truth_points.csv"))) as fh:
        for row in csv.DictReader(fh):
            pid = int(row["point_id"])
            positions[pid] = np.array([float(row[c]) for c in ("x", "y", "z")])
            normals[pid] = np.array([float(row[c]) for c in ("nx", "ny", "nz")])
            albedos[pid] = float(row["albedo"])
    poses = [CameraPose(p["image_id"], np.array(p["rotation"]), np.array(p["center"])) for p in doc["poses"]]
    return GroundTruth(
        lambda_gt=float(doc["lambda_gt"]),
        albedos=albedos,
        gains={int(k): float(v) for k, v in doc["gains"].items()},
        normals=normals, positions=positions, poses=poses,
        light_power=float(doc["light_power"]), extent=float(doc["extent"]),
        config=doc.get("config", {}),
    )
