"""Back-project satellites into the sky image and drop those behind obstacles."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import fisheye
from .errors import MixedEpochs, NonPositiveElevation, TimestampMismatch
from .fisheye import FisheyeIntrinsics, PixelCoord
from .frames import AzEl, FrameChain, elevation_azimuth, satellite_to_sky_camera
from .geodesy import AnchorPoint, EcefCoord, EnuCoord, ecef_to_enu_point
from .skyseg import SkyMask

CONSTELLATIONS = ("G", "R", "E", "C")


@dataclass(frozen=True)
class SatelliteObservation:
    epoch_time: float
    sat_id: str
    constellation: str
    pos_ecef: EcefCoord
    vel_ecef: np.ndarray
    pseudorange: float
    doppler_range_rate: float
    n_si: float = 1.0
    n_p: float = 1.0
    n_d: float = 1.0

    def __post_init__(self):
        if self.constellation not in CONSTELLATIONS:
            raise ValueError(f"unknown constellation {self.constellation!r}")
        if min(self.n_si, self.n_p, self.n_d) <= 0:
            raise ValueError("noise indices must be positive")


class Verdict(str, enum.Enum):
    LOS = "LOS"
    NLOS = "NLOS"


@dataclass(frozen=True)
class BackProjection:
    p_cam: np.ndarray
    pixel: Optional[PixelCoord]
    azel: AzEl

    @property
    def in_view(self) -> bool:
        return self.pixel is not None


@dataclass(frozen=True)
class Classification:
    """``fallback`` is set when the verdict came from the elevation cutoff
    because the satellite was out of view or the mask was degenerate."""

    verdict: Verdict
    pixel: Optional[PixelCoord]
    elevation: float
    fallback: bool = False


@dataclass(frozen=True)
class KeptObservation:
    obs: SatelliteObservation
    pseudorange_variance: float
    doppler_variance: float
    classification: Classification


@dataclass(frozen=True)
class FilteredEpoch:
    epoch_time: float
    kept: list[KeptObservation] = field(default_factory=list)
    rejected: list[tuple[SatelliteObservation, Classification]] = field(default_factory=list)


@dataclass(frozen=True)
class NlosConfig:
    elevation_cutoff: float = math.radians(15.0)
    # reserved: scale variance instead of rejecting; off means reject
    downweight_nlos: bool = False
    downweight_factor: float = 100.0


def receiver_enu(chain: FrameChain) -> np.ndarray:
    return chain.r_world_to_enu @ (chain.camera_in_world - chain.anchor_world)


def satellite_azel(chain: FrameChain, anchor: AnchorPoint, sat_ecef: EcefCoord) -> AzEl:
    """Direction from the receiver to the satellite, in the anchor's ENU axes."""
    p_enu = ecef_to_enu_point(anchor, sat_ecef).as_array()
    return elevation_azimuth(EnuCoord.from_array(p_enu - receiver_enu(chain)))


def back_project(chain: FrameChain, anchor: AnchorPoint, intr: FisheyeIntrinsics,
                 sat: SatelliteObservation) -> BackProjection:
    p_enu = ecef_to_enu_point(anchor, sat.pos_ecef)
    p_world = chain.r_enu_to_world @ p_enu.as_array() + chain.anchor_world
    p_cam = satellite_to_sky_camera(chain, p_world)
    azel = elevation_azimuth(EnuCoord.from_array(p_enu.as_array() - receiver_enu(chain)))
    if p_cam[2] <= 0:
        return BackProjection(p_cam, None, azel)
    px = fisheye.project(intr, p_cam)
    if not intr.in_circle(px.u, px.v):
        return BackProjection(p_cam, None, azel)
    return BackProjection(p_cam, px, azel)


def classify(bp: BackProjection, mask: SkyMask, elevation: float,
             fallback_cutoff: float) -> Classification:
    if elevation <= 0:
        return Classification(Verdict.NLOS, bp.pixel, elevation)
    if bp.pixel is not None:
        row, col = int(round(bp.pixel.v)), int(round(bp.pixel.u))
        inside = 0 <= row < mask.height and 0 <= col < mask.width
        if inside and not mask.degenerate:
            verdict = Verdict.LOS if mask.bits[row, col] else Verdict.NLOS
            return Classification(verdict, bp.pixel, elevation)
    verdict = Verdict.LOS if elevation >= fallback_cutoff else Verdict.NLOS
    return Classification(verdict, bp.pixel, elevation, fallback=True)


def _check_elevation(elevation: float) -> float:
    if elevation <= 0:
        raise NonPositiveElevation(f"elevation {elevation} rad is not above the horizon")
    s = math.sin(elevation)
    return s * s


def pseudorange_variance(sat: SatelliteObservation, elevation: float) -> float:
    return sat.n_si * sat.n_p / _check_elevation(elevation)


def doppler_variance(sat: SatelliteObservation, elevation: float) -> float:
    return sat.n_si * sat.n_d / _check_elevation(elevation)


def filter_epoch(observations: Sequence[SatelliteObservation], chain: FrameChain,
                 anchor: AnchorPoint, intr: FisheyeIntrinsics, mask: SkyMask,
                 config: NlosConfig = NlosConfig()) -> FilteredEpoch:
    times = {o.epoch_time for o in observations}
    if len(times) > 1:
        raise MixedEpochs(f"observations span {len(times)} epochs")
    epoch_time = times.pop() if times else float("nan")
    kept, rejected = [], []
    for obs in observations:
        bp = back_project(chain, anchor, intr, obs)
        cls = classify(bp, mask, bp.azel.elevation, config.elevation_cutoff)
        if cls.verdict is Verdict.LOS:
            kept.append(KeptObservation(obs, pseudorange_variance(obs, cls.elevation),
                                        doppler_variance(obs, cls.elevation), cls))
        elif config.downweight_nlos and cls.elevation > 0:
            f = config.downweight_factor
            kept.append(KeptObservation(obs, f * pseudorange_variance(obs, cls.elevation),
                                        f * doppler_variance(obs, cls.elevation), cls))
        else:
            rejected.append((obs, cls))
    return FilteredEpoch(epoch_time, kept, rejected)


def elevation_filter(observations: Sequence[SatelliteObservation], chain: FrameChain,
                     anchor: AnchorPoint, cutoff: float) -> FilteredEpoch:
    """Elevation-mask-only screening, the no-camera baseline."""
    times = {o.epoch_time for o in observations}
    if len(times) > 1:
        raise MixedEpochs(f"observations span {len(times)} epochs")
    epoch_time = times.pop() if times else float("nan")
    kept, rejected = [], []
    for obs in observations:
        el = satellite_azel(chain, anchor, obs.pos_ecef).elevation
        if el >= cutoff and el > 0:
            cls = Classification(Verdict.LOS, None, el, fallback=True)
            kept.append(KeptObservation(obs, pseudorange_variance(obs, el), doppler_variance(obs, el), cls))
        else:
            rejected.append((obs, Classification(Verdict.NLOS, None, el, fallback=True)))
    return FilteredEpoch(epoch_time, kept, rejected)


def match_timestamp(t: float, candidates: Sequence[float], tolerance: float = 0.5) -> int:
    """Index of the candidate time nearest ``t``; raise if none is within tolerance."""
    if len(candidates) == 0:
        raise TimestampMismatch(f"no candidate timestamps for t={t}")
    arr = np.asarray(candidates, dtype=float)
    i = int(np.argmin(np.abs(arr - t)))
    if abs(arr[i] - t) > tolerance:
        raise TimestampMismatch(f"nearest timestamp {arr[i]} is {abs(arr[i] - t):.3f} s from {t}")
    return i
