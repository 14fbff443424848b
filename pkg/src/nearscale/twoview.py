"""Closed-form scale for the on-axis two-view configuration.

A point on the optical axis of camera 1 at up-to-scale depth z faces the
camera; a single light sits at metric offset b from the optical centre and
camera 2 is translated by the up-to-scale distance t along the same axis as
the offset. Eliminating the unknown albedo between the two intensities leaves

    b^2 + lam^2 z^2 = c ((lam t + b)^2 + lam^2 z^2),   c = (I2 / I1)^(2/3)

which is quadratic in lam.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import DegenerateBaseline, DegenerateMotion, InputError, NoSolution

LINEAR_TOLERANCE = 1e-14
BACKSUB_TOLERANCE = 1e-9


@dataclass(frozen=True)
class TwoViewConfig:
    b: float
    z: float
    t: float
    I1: float
    I2: float

    def __post_init__(self):
        if not self.z > 0:
            raise InputError("depth z must be positive")
        if not (self.I1 > 0 and self.I2 > 0):
            raise InputError("intensities must be positive")


def two_view_intensity(lam, z, t, b, rho_prime):
    """Intensities of the on-axis point in both views."""
    depth = lam * z
    I1 = rho_prime / math.pi * depth / (b * b + depth * depth) ** 1.5
    I2 = rho_prime / math.pi * depth / ((lam * t + b) ** 2 + depth * depth) ** 1.5
    return I1, I2


def _coefficients(b, z, t, c):
    A = (1.0 - c) * z * z - c * t * t
    B = -2.0 * c * t * b
    C = (1.0 - c) * b * b
    return A, B, C


def _equation_residual(lam, b, z, t, c):
    lhs = b * b + lam * lam * z * z
    rhs = c * ((lam * t + b) ** 2 + lam * lam * z * z)
    return (lhs - rhs) / max(abs(lhs), abs(rhs))


def _polish(lam, A, B, C):
    # two Newton steps on the quadratic clean up cancellation in the discriminant
    for _ in range(2):
        f = (A * lam + B) * lam + C
        df = 2 * A * lam + B
        if df == 0:
            break
        step = f / df
        if not math.isfinite(step) or abs(step) > 0.5 * abs(lam):
            break
        lam -= step
    return lam


def solve_two_view_scale(cfg: TwoViewConfig) -> list[float]:
    """All positive real roots, ascending."""
    b, z, t = float(cfg.b), float(cfg.z), float(cfg.t)
    if b == 0:
        raise DegenerateBaseline("zero camera-light baseline: scale cancels out")
    c = (cfg.I2 / cfg.I1) ** (2.0 / 3.0)
    if t == 0 and cfg.I1 == cfg.I2:
        raise DegenerateMotion("identical viewpoints: every scale satisfies the equation")
    A, B, C = _coefficients(b, z, t, c)
    # compare coefficients in the dimensionless unknown lam * z / b
    a_, b_, c_ = abs(A) * b * b / (z * z), abs(B) * abs(b) / z, abs(C)
    roots = []
    if a_ < LINEAR_TOLERANCE * max(a_, b_, c_):
        if B != 0:
            roots = [-C / B]
    else:
        disc = B * B - 4 * A * C
        if disc >= 0:
            q = -0.5 * (B + math.copysign(math.sqrt(disc), B))
            cand = []
            if q != 0:
                cand = [q / A, C / q]
            else:
                cand = [0.0]
            roots = [_polish(r, A, B, C) for r in cand]
    roots = sorted({r for r in roots if r > 0 and math.isfinite(r)})
    roots = [r for r in roots if abs(_equation_residual(r, b, z, t, c)) < BACKSUB_TOLERANCE]
    if not roots:
        raise NoSolution("no positive scale is consistent with these intensities")
    return roots
