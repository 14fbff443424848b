"""Near-light Lambertian forward model and its derivatives.

A point x_i (up-to-scale world coordinates) with unit normal n_i is lit by
r point lights rigidly attached to camera k. Light j sits at
``R_k b_j + lam * c_k`` in metric world coordinates, so the point-to-light
vector is ``l = R_k b_j + lam * (c_k - x_i)``. The predicted pixel value is

    I = (albedo * gain * V / pi * sum_j max(n.l, 0) / |l|^3) ** (1 / gamma)

Lights behind the surface contribute nothing and have zero derivative.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import SingularGeometry
from .recon_io import CalibrationRig, CameraPose

MIN_LIGHT_DISTANCE = 1e-9  # meters


@dataclass
class PhotometricParams:
    lam: float
    albedos: Mapping[int, float]
    gains: Mapping[int, float]


@dataclass(frozen=True)
class ResidualTerm:
    point_id: int
    image_id: int
    predicted: float
    observed: float
    robust_weight: float


def light_position_world(pose: CameraPose, b, lam: float) -> np.ndarray:
    return pose.rotation @ np.asarray(b, dtype=float) + lam * pose.center


def rotated_lights(R, lights) -> np.ndarray:
    """Light offsets rotated into the world frame, shape (s, 3, r)."""
    return np.matmul(np.asarray(R, dtype=float), np.asarray(lights, dtype=float).T)


def shading(X, N, R, C, lam, lights, with_derivative=False, Rb=None):
    """Geometric irradiance factor ``sum_j max(cos, 0) / d^2`` per sample.

    X, N, C are (s, 3); R is (s, 3, 3); lights is (r, 3). ``Rb`` may carry
    a precomputed :func:`rotated_lights`. With ``with_derivative`` also
    returns d(shading)/d(lam).
    """
    X = np.asarray(X, dtype=float)
    N = np.asarray(N, dtype=float)
    u = np.asarray(C, dtype=float) - X  # dl/dlam
    if Rb is None:
        Rb = rotated_lights(R, lights)
    lx = Rb[:, 0, :] + lam * u[:, 0:1]
    ly = Rb[:, 1, :] + lam * u[:, 1:2]
    lz = Rb[:, 2, :] + lam * u[:, 2:3]
    d2 = lx * lx + ly * ly + lz * lz
    if np.any(d2 <= MIN_LIGHT_DISTANCE ** 2):
        raise SingularGeometry("scene point coincides with a light source")
    nl = N[:, 0:1] * lx + N[:, 1:2] * ly + N[:, 2:3] * lz
    active = nl > 0
    inv_d3 = 1.0 / (d2 * np.sqrt(d2))
    S = np.where(active, nl * inv_d3, 0.0).sum(axis=1)
    if not with_derivative:
        return S
    nu = np.sum(N * u, axis=1)[:, None]
    lu = lx * u[:, 0:1] + ly * u[:, 1:2] + lz * u[:, 2:3]
    dS = np.where(active, nu * inv_d3 - 3.0 * nl * lu * inv_d3 / d2, 0.0).sum(axis=1)
    return S, dS


def predict_batch(X, N, R, C, lam, albedo, gain, vignette, lights, gamma, derivatives=False, Rb=None):
    """Vectorised prediction over samples.

    With ``derivatives`` returns ``(I, dI/dlam, dI/dalbedo, dI/dgain, zero_mask)``;
    samples with zero radiance get zero derivatives and ``zero_mask`` True.
    """
    albedo = np.asarray(albedo, dtype=float)
    gain = np.asarray(gain, dtype=float)
    scale = albedo * gain * np.asarray(vignette, dtype=float) / np.pi
    if not derivatives:
        S = shading(X, N, R, C, lam, lights, Rb=Rb)
        return np.power(scale * S, 1.0 / gamma)
    S, dS = shading(X, N, R, C, lam, lights, with_derivative=True, Rb=Rb)
    E = scale * S
    I = np.power(E, 1.0 / gamma)
    zero = ~(E > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        common = np.where(zero, 0.0, I / gamma)
        d_lam = np.where(zero, 0.0, common * dS / S)
        d_alb = np.where(zero, 0.0, common / albedo)
        d_gain = np.where(zero, 0.0, common / gain)
    return I, d_lam, d_alb, d_gain, zero


def _single(x, n, pose):
    return (np.asarray(x, dtype=float)[None], np.asarray(n, dtype=float)[None],
            pose.rotation[None], pose.center[None])


def predict_intensity(x, n, pose: CameraPose, lam: float, albedo: float, gain: float,
                      rig: CalibrationRig, vignette_factor: float = 1.0) -> float:
    X, N, R, C = _single(x, n, pose)
    return float(predict_batch(X, N, R, C, lam, albedo, gain, vignette_factor,
                               rig.light_offsets, rig.gamma)[0])


def partials(x, n, pose: CameraPose, lam: float, albedo: float, gain: float,
             rig: CalibrationRig, vignette_factor: float = 1.0) -> tuple[float, float, float]:
    """(dI/dlam, dI/dalbedo, dI/dgain) at a single sample."""
    X, N, R, C = _single(x, n, pose)
    _, dl, da, dg, _ = predict_batch(X, N, R, C, lam, albedo, gain, vignette_factor,
                                     rig.light_offsets, rig.gamma, derivatives=True)
    return float(dl[0]), float(da[0]), float(dg[0])


def robust_residual(predicted, observed, epsilon):
    """Huber residual and its IRLS weight."""
    r = np.asarray(predicted, dtype=float) - np.asarray(observed, dtype=float)
    a = np.abs(r)
    with np.errstate(divide="ignore"):
        w = np.where(a <= epsilon, 1.0, epsilon / a)
    if np.ndim(r) == 0:
        return float(r), float(w)
    return r, w


def huber_cost(r, epsilon) -> float:
    """Sum of Huber losses: r^2/2 inside epsilon, linear outside."""
    a = np.abs(np.asarray(r, dtype=float))
    per = np.where(a <= epsilon, 0.5 * a * a, epsilon * (a - 0.5 * epsilon))
    return float(np.sum(per))
