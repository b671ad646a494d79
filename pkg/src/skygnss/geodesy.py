"""WGS-84 geodetic, ECEF and local ENU coordinates.

All angles are radians, all lengths meters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NearSingular

WGS84_A = 6378137.0
WGS84_F = 1.0 / 298.257223563
WGS84_B = WGS84_A * (1.0 - WGS84_F)
WGS84_E2 = WGS84_F * (2.0 - WGS84_F)

_LAT_TOL = 1e-12
_MAX_ITER = 20


@dataclass(frozen=True)
class GeodeticCoord:
    latitude: float
    longitude: float
    height: float = 0.0

    def __post_init__(self):
        if not -math.pi / 2 <= self.latitude <= math.pi / 2:
            raise ValueError(f"latitude {self.latitude} outside [-pi/2, pi/2]")
        if not -math.pi < self.longitude <= math.pi:
            raise ValueError(f"longitude {self.longitude} outside (-pi, pi]")

    @classmethod
    def from_degrees(cls, lat_deg: float, lon_deg: float, height: float = 0.0) -> "GeodeticCoord":
        lon = math.radians(lon_deg)
        if lon <= -math.pi:
            lon += 2 * math.pi
        return cls(math.radians(lat_deg), lon, height)


@dataclass(frozen=True)
class EcefCoord:
    x: float
    y: float
    z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    @classmethod
    def from_array(cls, v) -> "EcefCoord":
        return cls(float(v[0]), float(v[1]), float(v[2]))


@dataclass(frozen=True)
class EnuCoord:
    east: float
    north: float
    up: float

    def as_array(self) -> np.ndarray:
        return np.array([self.east, self.north, self.up], dtype=float)

    @classmethod
    def from_array(cls, v) -> "EnuCoord":
        return cls(float(v[0]), float(v[1]), float(v[2]))


def geodetic_to_ecef(g: GeodeticCoord) -> EcefCoord:
    sin_lat, cos_lat = math.sin(g.latitude), math.cos(g.latitude)
    n = WGS84_A / math.sqrt(1.0 - WGS84_E2 * sin_lat * sin_lat)
    return EcefCoord(
        (n + g.height) * cos_lat * math.cos(g.longitude),
        (n + g.height) * cos_lat * math.sin(g.longitude),
        (n * (1.0 - WGS84_E2) + g.height) * sin_lat,
    )


def ecef_to_geodetic(p: EcefCoord) -> GeodeticCoord:
    """Invert :func:`geodetic_to_ecef` by fixed-point iteration on latitude.

    Raises NearSingular for points within 1 m of the Earth's center.
    """
    x, y, z = p.x, p.y, p.z
    if math.sqrt(x * x + y * y + z * z) <= 1.0:
        raise NearSingular("point is within 1 m of the Earth center")
    rho = math.hypot(x, y)
    lat = math.atan2(z, rho * (1.0 - WGS84_E2))
    for _ in range(_MAX_ITER):
        sin_lat = math.sin(lat)
        n = WGS84_A / math.sqrt(1.0 - WGS84_E2 * sin_lat * sin_lat)
        new_lat = math.atan2(z + WGS84_E2 * n * sin_lat, rho)
        done = abs(new_lat - lat) < _LAT_TOL
        lat = new_lat
        if done:
            break
    sin_lat, cos_lat = math.sin(lat), math.cos(lat)
    n = WGS84_A / math.sqrt(1.0 - WGS84_E2 * sin_lat * sin_lat)
    # valid at every latitude, including the poles
    height = rho * cos_lat + z * sin_lat - WGS84_A * WGS84_A / n
    lon = math.atan2(y, x)
    if lon <= -math.pi:
        lon = math.pi
    return GeodeticCoord(lat, lon, height)


def rotation_ecef_to_enu(g: GeodeticCoord) -> np.ndarray:
    sl, cl = math.sin(g.latitude), math.cos(g.latitude)
    so, co = math.sin(g.longitude), math.cos(g.longitude)
    return np.array(
        [
            [-so, co, 0.0],
            [-sl * co, -sl * so, cl],
            [cl * co, cl * so, sl],
        ]
    )


@dataclass(frozen=True)
class AnchorPoint:
    """Origin of the local ENU frame, held in both ECEF and geodetic form."""

    ecef: EcefCoord
    geodetic: GeodeticCoord
    r_e_to_n: np.ndarray = field(repr=False, compare=False)

    @classmethod
    def from_geodetic(cls, g: GeodeticCoord) -> "AnchorPoint":
        return cls(geodetic_to_ecef(g), g, rotation_ecef_to_enu(g))

    @classmethod
    def from_ecef(cls, p: EcefCoord) -> "AnchorPoint":
        g = ecef_to_geodetic(p)
        return cls(p, g, rotation_ecef_to_enu(g))

    @property
    def r_n_to_e(self) -> np.ndarray:
        return self.r_e_to_n.T


def ecef_to_enu_point(anchor: AnchorPoint, p: EcefCoord) -> EnuCoord:
    d = p.as_array() - anchor.ecef.as_array()
    return EnuCoord.from_array(anchor.r_e_to_n @ d)


def enu_to_ecef_point(anchor: AnchorPoint, p: EnuCoord) -> EcefCoord:
    return EcefCoord.from_array(anchor.ecef.as_array() + anchor.r_n_to_e @ p.as_array())
