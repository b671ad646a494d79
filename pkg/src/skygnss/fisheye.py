"""Kannala-Brandt fisheye projection and its numerical inverse."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BehindCamera, NoConvergence, OutsideValidCircle

_MAX_ITER = 50
_HALF_PI = math.pi / 2


@dataclass(frozen=True)
class FisheyeIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    alpha: float = 0.0
    k1: float = 0.0
    k2: float = 0.0
    k3: float = 0.0
    k4: float = 0.0
    image_width: int = 1280
    image_height: int = 1024
    valid_radius: float = 512.0

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not 0 < self.valid_radius <= max(self.image_width, self.image_height):
            raise ValueError("valid_radius must lie in (0, max(width, height)]")

    @property
    def k(self) -> tuple[float, float, float, float]:
        return (self.k1, self.k2, self.k3, self.k4)

    def distort(self, theta):
        """theta_d = theta (1 + k1 theta^2 + k2 theta^4 + k3 theta^6 + k4 theta^8)."""
        t2 = theta * theta
        return theta * (1.0 + t2 * (self.k1 + t2 * (self.k2 + t2 * (self.k3 + t2 * self.k4))))

    def distort_derivative(self, theta):
        t2 = theta * theta
        return 1.0 + t2 * (3 * self.k1 + t2 * (5 * self.k2 + t2 * (7 * self.k3 + t2 * 9 * self.k4)))

    def in_circle(self, u, v):
        return np.hypot(np.asarray(u) - self.cx, np.asarray(v) - self.cy) <= self.valid_radius


@dataclass(frozen=True)
class PixelCoord:
    u: float
    v: float


def project(intr: FisheyeIntrinsics, p_cam) -> PixelCoord:
    x, y, z = (float(c) for c in p_cam)
    if z <= 0:
        raise BehindCamera(f"point has z = {z} <= 0")
    a, b = x / z, y / z
    r = math.sqrt(a * a + b * b)
    theta = math.atan(r)
    theta_d = intr.distort(theta)
    # theta_d / r -> 1 as r -> 0
    scale = theta_d / r if r > 1e-12 else 1.0
    xd, yd = scale * a, scale * b
    return PixelCoord(intr.fx * (xd + intr.alpha * yd) + intr.cx, intr.fy * yd + intr.cy)


def project_many(intr: FisheyeIntrinsics, points: np.ndarray) -> np.ndarray:
    """Vectorised :func:`project` for an (N, 3) array; rows with z <= 0 give NaN."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.full((len(pts), 2), np.nan)
    ok = pts[:, 2] > 0
    a = pts[ok, 0] / pts[ok, 2]
    b = pts[ok, 1] / pts[ok, 2]
    r = np.hypot(a, b)
    theta_d = intr.distort(np.arctan(r))
    small = r <= 1e-12
    scale = np.where(small, 1.0, theta_d / np.where(small, 1.0, r))
    xd, yd = scale * a, scale * b
    out[ok, 0] = intr.fx * (xd + intr.alpha * yd) + intr.cx
    out[ok, 1] = intr.fy * yd + intr.cy
    return out


def _solve_theta(intr: FisheyeIntrinsics, theta_d: np.ndarray) -> np.ndarray:
    """Invert the distortion polynomial on [0, pi/2) by safeguarded Newton."""
    lo = np.zeros_like(theta_d)
    hi = np.full_like(theta_d, _HALF_PI)
    beyond = intr.distort(hi) < theta_d
    if np.any(beyond):
        raise OutsideValidCircle("pixel maps beyond the camera hemisphere")
    theta = np.minimum(theta_d, _HALF_PI * (1 - 1e-9))
    tol = 1e-15 * np.maximum(1.0, theta_d)
    for _ in range(_MAX_ITER):
        f = intr.distort(theta) - theta_d
        done = np.abs(f) <= tol
        if np.all(done):
            return theta
        lo = np.where(f < 0, theta, lo)
        hi = np.where(f > 0, theta, hi)
        df = intr.distort_derivative(theta)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = theta - f / df
        bad = (df <= 0) | ~(step > lo) | ~(step < hi)
        new = np.where(bad, 0.5 * (lo + hi), step)
        theta = np.where(done, theta, new)
        if np.all(hi - lo <= 4e-16):
            return theta
    f = intr.distort(theta) - theta_d
    if np.any(np.abs(f) > 1e-12):
        raise NoConvergence("theta root-find did not converge in 50 iterations")
    return theta


def unproject_many(intr: FisheyeIntrinsics, u, v) -> np.ndarray:
    """Unit rays (N, 3) for pixel arrays ``u``, ``v`` inside the valid circle."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if not np.all(intr.in_circle(u, v)):
        raise OutsideValidCircle("pixel lies outside the valid fisheye circle")
    yd = (v - intr.cy) / intr.fy
    xd = (u - intr.cx) / intr.fx - intr.alpha * yd
    theta_d = np.hypot(xd, yd)
    theta = _solve_theta(intr, theta_d)
    zero = theta_d == 0
    s = np.where(zero, 0.0, np.sin(theta) / np.where(zero, 1.0, theta_d))
    return np.stack([s * xd, s * yd, np.cos(theta)], axis=-1)


def unproject(intr: FisheyeIntrinsics, px: PixelCoord) -> np.ndarray:
    return unproject_many(intr, [px.u], [px.v])[0]
