"""Readers and writers for reconstructions, observations, calibration and reports.

Reconstructions use the COLMAP text sparse-model layout (cameras.txt,
images.txt, points3D.txt). COLMAP stores world-to-camera poses; everything
in this package works with camera-to-world poses, and the conversion happens
here and nowhere else.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, TextIO

import numpy as np

from .errors import InputError, ParseError

QUATERNION_TOLERANCE = 1e-3
MAX_LIGHT_OFFSET = 0.1  # meters


# ---------------------------------------------------------------------------
# rotations


def qvec2rotmat(qvec) -> np.ndarray:
    w, x, y, z = qvec
    return np.array([
        [1 - 2 * y * y - 2 * z * z, 2 * x * y - 2 * w * z, 2 * z * x + 2 * w * y],
        [2 * x * y + 2 * w * z, 1 - 2 * x * x - 2 * z * z, 2 * y * z - 2 * w * x],
        [2 * z * x - 2 * w * y, 2 * y * z + 2 * w * x, 1 - 2 * x * x - 2 * y * y],
    ])


def rotmat2qvec(R) -> np.ndarray:
    """Unit quaternion (w, x, y, z) with w >= 0 for a rotation matrix."""
    Rxx, Ryx, Rzx, Rxy, Ryy, Rzy, Rxz, Ryz, Rzz = np.asarray(R, dtype=float).flat
    K = np.array([
        [Rxx - Ryy - Rzz, 0, 0, 0],
        [Ryx + Rxy, Ryy - Rxx - Rzz, 0, 0],
        [Rzx + Rxz, Rzy + Ryz, Rzz - Rxx - Ryy, 0],
        [Ryz - Rzy, Rzx - Rxz, Rxy - Ryx, Rxx + Ryy + Rzz],
    ]) / 3.0
    eigvals, eigvecs = np.linalg.eigh(K)
    qvec = eigvecs[[3, 0, 1, 2], np.argmax(eigvals)]
    if qvec[0] < 0:
        qvec *= -1
    return qvec


def nearest_rotation(M) -> np.ndarray:
    U, _, Vt = np.linalg.svd(M)
    R = U @ Vt
    if np.linalg.det(R) < 0:
        U[:, -1] *= -1
        R = U @ Vt
    return R


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class CameraPose:
    """Camera-to-world pose; ``center`` is in up-to-scale world units."""

    image_id: int
    rotation: np.ndarray
    center: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        c = np.asarray(self.center, dtype=float).reshape(3)
        if np.abs(R @ R.T - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(R) - 1) > 1e-9:
            raise InputError(f"image {self.image_id}: rotation is not orthonormal")
        R.flags.writeable = False
        c.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "center", c)

    @classmethod
    def from_world_to_camera(cls, image_id, R_wc, t_wc) -> "CameraPose":
        R_wc = np.asarray(R_wc, dtype=float)
        return cls(image_id, R_wc.T, -R_wc.T @ np.asarray(t_wc, dtype=float))

    def world_to_camera(self):
        R_wc = self.rotation.T
        return R_wc, -R_wc @ self.center


@dataclass(frozen=True)
class ScenePoint:
    point_id: int
    position: np.ndarray
    normal: np.ndarray | None = None
    neighbor_count_used: int | None = None

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float).reshape(3)
        p.flags.writeable = False
        object.__setattr__(self, "position", p)
        if self.normal is not None:
            n = np.asarray(self.normal, dtype=float).reshape(3)
            if abs(np.linalg.norm(n) - 1.0) > 1e-9:
                raise InputError(f"point {self.point_id}: normal is not unit length")
            n.flags.writeable = False
            object.__setattr__(self, "normal", n)


@dataclass(frozen=True)
class Reconstruction:
    points: Mapping[int, ScenePoint]
    poses: Sequence[CameraPose]
    reference_image_id: int | None = None

    def __post_init__(self):
        poses = tuple(sorted(self.poses, key=lambda p: p.image_id))
        ids = [p.image_id for p in poses]
        if len(set(ids)) != len(ids):
            raise InputError("duplicate image ids in reconstruction")
        if not poses:
            raise InputError("reconstruction has no images")
        ref = ids[0] if self.reference_image_id is None else self.reference_image_id
        if ref not in ids:
            raise InputError(f"reference image {ref} not among poses")
        object.__setattr__(self, "poses", poses)
        object.__setattr__(self, "points", dict(sorted(self.points.items())))
        object.__setattr__(self, "reference_image_id", ref)

    @property
    def image_ids(self) -> list[int]:
        return [p.image_id for p in self.poses]

    def pose(self, image_id: int) -> CameraPose:
        for p in self.poses:
            if p.image_id == image_id:
                return p
        raise KeyError(image_id)

    def positions(self) -> tuple[np.ndarray, np.ndarray]:
        """(ids, N x 3 positions) in ascending id order."""
        ids = np.fromiter(self.points.keys(), dtype=np.int64, count=len(self.points))
        pos = np.array([p.position for p in self.points.values()]).reshape(-1, 3)
        return ids, pos

    def scaled(self, s: float) -> "Reconstruction":
        """Same reconstruction with every position and camera center times ``s``."""
        points = {
            i: ScenePoint(i, p.position * s, p.normal, p.neighbor_count_used)
            for i, p in self.points.items()
        }
        poses = [CameraPose(p.image_id, p.rotation, p.center * s) for p in self.poses]
        return Reconstruction(points, poses, self.reference_image_id)

    def replace(self, points=None, poses=None, reference_image_id=None) -> "Reconstruction":
        return Reconstruction(
            self.points if points is None else points,
            self.poses if poses is None else poses,
            self.reference_image_id if reference_image_id is None else reference_image_id,
        )


@dataclass(frozen=True)
class VignetteModel:
    """Radial falloff ``1 + sum_k c_k r^(2k)`` in normalized image radius."""

    kind: str = "none"
    coefficients: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in ("none", "radial-polynomial"):
            raise InputError(f"unknown vignette kind {self.kind!r}")
        object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))
        v = self(np.linspace(0.0, 1.0, 201))
        if not (np.all(v > 0) and np.all(v <= 1.0 + 1e-12)):
            raise InputError("vignette model leaves (0, 1] on radius [0, 1]")

    def __call__(self, radius):
        r = np.asarray(radius, dtype=float)
        if self.kind == "none":
            return np.ones_like(r)
        r2 = r * r
        v = np.ones_like(r)
        term = np.ones_like(r)
        for c in self.coefficients:
            term = term * r2
            v = v + c * term
        return v


@dataclass(frozen=True)
class CalibrationRig:
    light_offsets: np.ndarray  # r x 3, meters, camera frame
    gamma: float = 1.0
    vignette: VignetteModel = field(default_factory=VignetteModel)

    def __post_init__(self):
        b = np.asarray(self.light_offsets, dtype=float).reshape(-1, 3)
        if len(b) == 0:
            raise InputError("calibration needs at least one light")
        if not (self.gamma > 0 and math.isfinite(self.gamma)):
            raise InputError(f"gamma must be positive, got {self.gamma}")
        if np.any(np.linalg.norm(b, axis=1) >= MAX_LIGHT_OFFSET):
            raise InputError("light offsets must be shorter than 0.1 m")
        b.flags.writeable = False
        object.__setattr__(self, "light_offsets", b)
        object.__setattr__(self, "gamma", float(self.gamma))

    @classmethod
    def ring(cls, radius=0.003, count=3, gamma=2.2, vignette=None) -> "CalibrationRig":
        """``count`` lights evenly spaced on a circle around the optical axis."""
        ang = 2 * np.pi * np.arange(count) / count
        b = np.column_stack([radius * np.cos(ang), radius * np.sin(ang), np.zeros(count)])
        return cls(b, gamma, vignette or VignetteModel())

    @property
    def has_baseline(self) -> bool:
        return bool(np.any(np.linalg.norm(self.light_offsets, axis=1) > 0))


@dataclass(frozen=True)
class Observation:
    point_id: int
    image_id: int
    intensity: float
    vignette_factor: float = 1.0


class ObservationSet:
    """Column-oriented table of intensity samples, sorted by (point_id, image_id).

    Points observed in fewer than two images carry no scale information and
    are dropped on construction; each drop is recorded in ``warnings``.
    """

    def __init__(self, point_ids, image_ids, intensity, vignette=None, warnings=()):
        pid = np.asarray(point_ids, dtype=np.int64).reshape(-1)
        iid = np.asarray(image_ids, dtype=np.int64).reshape(-1)
        val = np.asarray(intensity, dtype=float).reshape(-1)
        vig = np.ones_like(val) if vignette is None else np.asarray(vignette, dtype=float).reshape(-1)
        if not (len(pid) == len(iid) == len(val) == len(vig)):
            raise InputError("observation columns differ in length")
        if np.any(~np.isfinite(val)) or np.any(val < 0) or np.any(val > 1):
            raise InputError("intensity outside [0, 1]")
        if np.any(~(vig > 0)) or np.any(vig > 1):
            raise InputError("vignette_factor outside (0, 1]")
        order = np.lexsort((iid, pid))
        pid, iid, val, vig = pid[order], iid[order], val[order], vig[order]
        if len(pid) > 1:
            dup = (np.diff(pid) == 0) & (np.diff(iid) == 0)
            if np.any(dup):
                k = int(np.flatnonzero(dup)[0])
                raise InputError(f"duplicate observation of point {pid[k]} in image {iid[k]}")
        self.warnings = list(warnings)
        uniq, counts = np.unique(pid, return_counts=True)
        single = uniq[counts < 2]
        if len(single):
            keep = ~np.isin(pid, single)
            pid, iid, val, vig = pid[keep], iid[keep], val[keep], vig[keep]
            self.warnings.append(f"dropped {len(single)} point(s) observed in fewer than 2 images")
        for a in (pid, iid, val, vig):
            a.flags.writeable = False
        self.point_ids, self.image_ids, self.intensity, self.vignette = pid, iid, val, vig

    def __len__(self):
        return len(self.point_ids)

    @property
    def observations(self) -> list[Observation]:
        return [
            Observation(int(p), int(i), float(v), float(f))
            for p, i, v, f in zip(self.point_ids, self.image_ids, self.intensity, self.vignette)
        ]

    @property
    def n_points(self) -> int:
        return len(np.unique(self.point_ids))

    @property
    def n_images(self) -> int:
        return len(np.unique(self.image_ids))

    def subset(self, mask, warnings=()) -> "ObservationSet":
        mask = np.asarray(mask, dtype=bool)
        return ObservationSet(
            self.point_ids[mask], self.image_ids[mask], self.intensity[mask],
            self.vignette[mask], list(self.warnings) + list(warnings),
        )

    def validate_against(self, recon: Reconstruction) -> None:
        missing = set(np.unique(self.point_ids).tolist()) - set(recon.points)
        if missing:
            raise InputError(f"observations reference unknown point ids, e.g. {min(missing)}")
        missing = set(np.unique(self.image_ids).tolist()) - set(recon.image_ids)
        if missing:
            raise InputError(f"observations reference unknown image ids, e.g. {min(missing)}")

    @classmethod
    def from_observations(cls, observations: Iterable[Observation]) -> "ObservationSet":
        obs = list(observations)
        return cls(
            [o.point_id for o in obs], [o.image_id for o in obs],
            [o.intensity for o in obs], [o.vignette_factor for o in obs],
        )


@dataclass
class EstimationReport:
    lambda_hat: float
    gains: dict[int, float]
    albedos: dict[int, float]
    residual_rms: float  # gray levels
    inlier_fraction: float
    iterations: int
    converged: bool
    init_lambda: float
    warnings: list[str] = field(default_factory=list)
    residual_profile: list[tuple[float, float]] | None = None
    initial_cost: float = float("nan")
    final_cost: float = float("nan")
    config: dict = field(default_factory=dict)

    def albedo_stats(self) -> dict[str, float]:
        a = np.array(list(self.albedos.values()), dtype=float)
        if a.size == 0:
            return {"min": float("nan"), "max": float("nan"), "mean": float("nan")}
        return {"min": float(a.min()), "max": float(a.max()), "mean": float(a.mean())}


# ---------------------------------------------------------------------------
# COLMAP text model


def _data_lines(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line and not line.startswith("#"):
            yield lineno, line


def _floats(elems, lineno, source):
    try:
        return [float(e) for e in elems]
    except ValueError as exc:
        raise ParseError(f"bad number ({exc})", lineno, source) from None


def _int(s, lineno, source):
    try:
        return int(s)
    except ValueError:
        raise ParseError(f"expected integer, got {s!r}", lineno, source) from None


def parse_cameras(text: str) -> dict[int, tuple[str, int, int, list[float]]]:
    cameras = {}
    for lineno, line in _data_lines(text):
        elems = line.split()
        if len(elems) < 4:
            raise ParseError("camera line needs CAMERA_ID MODEL WIDTH HEIGHT PARAMS[]", lineno, "cameras.txt")
        cid = _int(elems[0], lineno, "cameras.txt")
        if cid in cameras:
            raise ParseError(f"duplicate camera id {cid}", lineno, "cameras.txt")
        cameras[cid] = (
            elems[1], _int(elems[2], lineno, "cameras.txt"), _int(elems[3], lineno, "cameras.txt"),
            _floats(elems[4:], lineno, "cameras.txt"),
        )
    return cameras


def parse_images(text: str) -> list[CameraPose]:
    src = "images.txt"
    poses: dict[int, CameraPose] = {}
    # Every header line is followed by one POINTS2D line, which may be blank,
    # so comment stripping must not swallow the blank line.
    lines = text.splitlines()
    k = 0
    while k < len(lines):
        raw = lines[k].strip()
        lineno = k + 1
        k += 1
        if not raw or raw.startswith("#"):
            continue
        elems = raw.split()
        if len(elems) < 10:
            raise ParseError("image line needs IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME", lineno, src)
        image_id = _int(elems[0], lineno, src)
        q = np.array(_floats(elems[1:5], lineno, src))
        t = np.array(_floats(elems[5:8], lineno, src))
        _int(elems[8], lineno, src)
        qn = np.linalg.norm(q)
        if abs(qn - 1.0) > QUATERNION_TOLERANCE:
            raise ParseError(f"quaternion norm {qn:.6g} is not unit", lineno, src)
        if image_id in poses:
            raise ParseError(f"duplicate image id {image_id}", lineno, src)
        R_wc = qvec2rotmat(q / qn)
        if abs(qn - 1.0) > 1e-12:
            R_wc = nearest_rotation(R_wc)
        poses[image_id] = CameraPose.from_world_to_camera(image_id, R_wc, t)
        k += 1  # 2D feature track line, not stored
    return [poses[i] for i in sorted(poses)]


def parse_points3d(text: str) -> dict[int, ScenePoint]:
    src = "points3D.txt"
    points: dict[int, ScenePoint] = {}
    for lineno, line in _data_lines(text):
        elems = line.split()
        if len(elems) < 8:
            raise ParseError("point line needs POINT3D_ID X Y Z R G B ERROR", lineno, src)
        pid = _int(elems[0], lineno, src)
        xyz = _floats(elems[1:4], lineno, src)
        _floats(elems[4:8], lineno, src)
        if pid in points:
            raise ParseError(f"duplicate point id {pid}", lineno, src)
        points[pid] = ScenePoint(pid, np.array(xyz))
    return points


def parse_sparse_model(cameras: str, images: str, points3d: str) -> Reconstruction:
    """Build a :class:`Reconstruction` from the three text files' contents."""
    parse_cameras(cameras)
    poses = parse_images(images)
    points = parse_points3d(points3d)
    if not poses:
        raise ParseError("no image records", None, "images.txt")
    return Reconstruction(points, poses)


def serialize_sparse_model(
    recon: Reconstruction,
    camera: tuple[str, int, int, Sequence[float]] = ("PINHOLE", 640, 480, (500.0, 500.0, 320.0, 240.0)),
    tracks: Mapping[int, Sequence[tuple[float, float, int]]] | None = None,
) -> tuple[str, str, str]:
    """Inverse of :func:`parse_sparse_model`; returns the three file contents.

    ``tracks`` optionally maps image_id to (x, y, point3D_id) keypoints, used
    to fill the POINTS2D lines and the point tracks.
    """
    model, width, height, params = camera
    cams = (
        "# Camera list with one line of data per camera:\n"
        "#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n"
        f"1 {model} {width} {height} " + " ".join(repr(float(p)) for p in params) + "\n"
    )
    tracks = tracks or {}
    point_tracks: dict[int, list[tuple[int, int]]] = {}
    img = [
        "# Image list with two lines of data per image:\n",
        "#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n",
        "#   POINTS2D[] as (X, Y, POINT3D_ID)\n",
    ]
    for pose in recon.poses:
        R_wc, t_wc = pose.world_to_camera()
        q = rotmat2qvec(R_wc)
        fields = [str(pose.image_id)] + [repr(float(v)) for v in (*q, *t_wc)]
        img.append(" ".join(fields) + f" 1 image_{pose.image_id:04d}.png\n")
        kps = tracks.get(pose.image_id, ())
        for idx, (_, _, pid) in enumerate(kps):
            point_tracks.setdefault(int(pid), []).append((pose.image_id, idx))
        img.append(" ".join(f"{x!r} {y!r} {int(pid)}" for x, y, pid in
                            ((float(a), float(b), c) for a, b, c in kps)) + "\n")
    pts = [
        "# 3D point list with one line of data per point:\n",
        "#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)\n",
    ]
    for pid, p in recon.points.items():
        track = " ".join(f"{i} {j}" for i, j in point_tracks.get(pid, ()))
        xyz = " ".join(repr(float(v)) for v in p.position)
        pts.append(f"{pid} {xyz} 128 128 128 0.0 {track}".rstrip() + "\n")
    return cams, "".join(img), "".join(pts)


def read_sparse_model(directory) -> Reconstruction:
    texts = []
    for name in ("cameras.txt", "images.txt", "points3D.txt"):
        path = os.path.join(directory, name)
        try:
            with open(path) as fh:
                texts.append(fh.read())
        except FileNotFoundError:
            raise InputError(f"missing {path}") from None
    return parse_sparse_model(*texts)


def write_sparse_model(recon: Reconstruction, directory, **kwargs) -> None:
    os.makedirs(directory, exist_ok=True)
    for name, text in zip(("cameras.txt", "images.txt", "points3D.txt"),
                          serialize_sparse_model(recon, **kwargs)):
        with open(os.path.join(directory, name), "w") as fh:
            fh.write(text)


# ---------------------------------------------------------------------------
# observations CSV

OBS_COLUMNS = ("point_id", "image_id", "intensity", "vignette_factor")


def parse_observations(stream: TextIO | str) -> ObservationSet:
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.reader(stream)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise ParseError("empty observations file", 1, "observations.csv") from None
    if header[:3] != list(OBS_COLUMNS[:3]):
        raise ParseError("header must start with point_id,image_id,intensity", 1, "observations.csv")
    warnings = []
    unknown = [h for h in header if h not in OBS_COLUMNS]
    if unknown:
        warnings.append(f"ignored unknown column(s): {', '.join(unknown)}")
    col = {h: k for k, h in enumerate(header) if h in OBS_COLUMNS}
    pid, iid, val, vig = [], [], [], []
    seen = set()
    for row in reader:
        lineno = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", lineno, "observations.csv")
        p = _int(row[col["point_id"]].strip(), lineno, "observations.csv")
        i = _int(row[col["image_id"]].strip(), lineno, "observations.csv")
        (v,) = _floats([row[col["intensity"]]], lineno, "observations.csv")
        f = 1.0
        if "vignette_factor" in col:
            (f,) = _floats([row[col["vignette_factor"]]], lineno, "observations.csv")
        if not 0.0 <= v <= 1.0:
            raise ParseError(f"intensity {v} outside [0, 1]", lineno, "observations.csv")
        if not 0.0 < f <= 1.0:
            raise ParseError(f"vignette_factor {f} outside (0, 1]", lineno, "observations.csv")
        if (p, i) in seen:
            raise ParseError(f"duplicate observation of point {p} in image {i}", lineno, "observations.csv")
        seen.add((p, i))
        pid.append(p)
        iid.append(i)
        val.append(v)
        vig.append(f)
    return ObservationSet(pid, iid, val, vig, warnings)


def serialize_observations(obs: ObservationSet) -> str:
    out = io.StringIO()
    out.write(",".join(OBS_COLUMNS) + "\n")
    for p, i, v, f in zip(obs.point_ids, obs.image_ids, obs.intensity, obs.vignette):
        out.write(f"{p},{i},{float(v)!r},{float(f)!r}\n")
    return out.getvalue()


# ---------------------------------------------------------------------------
# calibration


def calibration_to_dict(rig: CalibrationRig) -> dict:
    return {
        "lights": rig.light_offsets.tolist(),
        "gamma": rig.gamma,
        "vignette": {"kind": rig.vignette.kind, "coefficients": list(rig.vignette.coefficients)},
    }


def parse_calibration(stream: TextIO | str) -> CalibrationRig:
    text = stream if isinstance(stream, str) else stream.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno, "calibration") from None
    if not isinstance(doc, dict) or "lights" not in doc:
        raise InputError("calibration must be an object with a 'lights' list")
    lights = doc["lights"]
    if not isinstance(lights, list) or not lights:
        raise InputError("calibration needs at least one light")
    if any(not isinstance(b, (list, tuple)) or len(b) != 3 for b in lights):
        raise InputError("each light must be an [x, y, z] triple in meters")
    vig = doc.get("vignette") or {"kind": "none"}
    return CalibrationRig(
        np.array(lights, dtype=float),
        float(doc.get("gamma", 1.0)),
        VignetteModel(vig.get("kind", "none"), tuple(vig.get("coefficients", ()))),
    )


# ---------------------------------------------------------------------------
# reports


def report_to_dict(report: EstimationReport) -> dict:
    return {
        "lambda": float(report.lambda_hat),
        "init_lambda": float(report.init_lambda),
        "gains": {str(k): float(v) for k, v in sorted(report.gains.items())},
        "albedo_stats": report.albedo_stats(),
        "residual_rms_gray_levels": float(report.residual_rms),
        "inlier_fraction": float(report.inlier_fraction),
        "initial_cost": float(report.initial_cost),
        "final_cost": float(report.final_cost),
        "iterations": int(report.iterations),
        "converged": bool(report.converged),
        "warnings": list(report.warnings),
        "config": report.config,
    }


def write_report(report: EstimationReport, stream: TextIO, albedo_stream: TextIO | None = None,
                 profile_stream: TextIO | None = None) -> None:
    json.dump(report_to_dict(report), stream, indent=2, allow_nan=True)
    stream.write("\n")
    if albedo_stream is not None:
        albedo_stream.write("point_id,albedo\n")
        for pid, a in sorted(report.albedos.items()):
            albedo_stream.write(f"{pid},{float(a)!r}\n")
    if profile_stream is not None:
        profile_stream.write("lambda,cost\n")
        for lam, cost in report.residual_profile or ():
            profile_stream.write(f"{float(lam)!r},{float(cost)!r}\n")


def read_report(stream: TextIO, albedo_stream: TextIO | None = None) -> EstimationReport:
    doc = json.load(stream)
    albedos = {}
    if albedo_stream is not None:
        for row in csv.DictReader(albedo_stream):
            albedos[int(row["point_id"])] = float(row["albedo"])
    return EstimationReport(
        lambda_hat=float(doc["lambda"]),
        gains={int(k): float(v) for k, v in doc["gains"].items()},
        albedos=albedos,
        residual_rms=float(doc["residual_rms_gray_levels"]),
        inlier_fraction=float(doc.get("inlier_fraction", float("nan"))),
        iterations=int(doc["iterations"]),
        converged=bool(doc["converged"]),
        init_lambda=float(doc.get("init_lambda", float("nan"))),
        warnings=list(doc.get("warnings", [])),
        initial_cost=float(doc.get("initial_cost", float("nan"))),
        final_cost=float(doc.get("final_cost", float("nan"))),
        config=doc.get("config", {}),
    )
