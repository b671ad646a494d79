"""Local world, ENU and sky-camera frames.

The world frame is gravity aligned and differs from ENU by a single yaw
offset ``psi``: ``R_w^n = rot_up(psi)`` and ``R_n^w = rot_up(psi).T``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ZeroVector
from .geodesy import EnuCoord


def rot_up(angle: float) -> np.ndarray:
    """Right-handed rotation by ``angle`` about the up (z) axis."""
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def d_rot_up(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[-s, -c, 0.0], [c, -s, 0.0], [0.0, 0.0, 0.0]])


@dataclass(frozen=True)
class BodyPose:
    r_body_to_world: np.ndarray = field(default_factory=lambda: np.eye(3))
    t_body_in_world: np.ndarray = field(default_factory=lambda: np.zeros(3))


@dataclass(frozen=True)
class FrameChain:
    """Yaw offset, anchor location in world, sky-camera extrinsic and body pose.

    ``lever_arm`` is the sky-camera origin expressed in the body frame; it is
    zero by default since the antenna and camera are treated as co-located.
    """

    yaw_offset: float = 0.0
    anchor_world: np.ndarray = field(default_factory=lambda: np.zeros(3))
    r_sky_to_body: np.ndarray = field(default_factory=lambda: np.eye(3))
    body_pose: BodyPose = field(default_factory=BodyPose)
    lever_arm: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @property
    def r_world_to_enu(self) -> np.ndarray:
        return rot_up(self.yaw_offset)

    @property
    def r_enu_to_world(self) -> np.ndarray:
        return rot_up(self.yaw_offset).T

    @property
    def r_sky_to_world(self) -> np.ndarray:
        return self.body_pose.r_body_to_world @ self.r_sky_to_body

    @property
    def camera_in_world(self) -> np.ndarray:
        pose = self.body_pose
        return pose.t_body_in_world + pose.r_body_to_world @ self.lever_arm

    def with_pose(self, pose: BodyPose) -> "FrameChain":
        return FrameChain(self.yaw_offset, self.anchor_world, self.r_sky_to_body, pose, self.lever_arm)


@dataclass(frozen=True)
class AzEl:
    azimuth: float
    elevation: float


def enu_to_world(chain: FrameChain, p: EnuCoord) -> np.ndarray:
    return chain.r_enu_to_world @ p.as_array() + chain.anchor_world


def world_to_enu(chain: FrameChain, p_world) -> EnuCoord:
    d = np.asarray(p_world, dtype=float) - chain.anchor_world
    return EnuCoord.from_array(chain.r_world_to_enu @ d)


def satellite_to_sky_camera(chain: FrameChain, p_sat_world) -> np.ndarray:
    d = np.asarray(p_sat_world, dtype=float) - chain.camera_in_world
    return chain.r_sky_to_world.T @ d


def elevation_azimuth(p_enu: EnuCoord) -> AzEl:
    e, n, u = p_enu.east, p_enu.north, p_enu.up
    norm = math.sqrt(e * e + n * n + u * u)
    if norm == 0.0:
        raise ZeroVector("cannot take the direction of a zero vector")
    el = math.asin(max(-1.0, min(1.0, u / norm)))
    az = math.atan2(e, n) % (2 * math.pi)
    if az >= 2 * math.pi:
        az = 0.0
    return AzEl(az, el)
