"""Synthetic sky scenes with known answers.

A scene is a receiver under a set of azimuth/elevation "building" blocks,
a handful of satellites and a sky-pointing fisheye rig.  From it we render
a grayscale image, the true sky mask, per-satellite visibility and
pseudorange / Doppler measurements.

The geometry here is written without the pipeline's projection and frame
helpers so it can serve as an oracle for them; only the pixel-to-ray
inverse (``fisheye.unproject_many``) and the WGS-84 anchor position are
shared.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .fisheye import FisheyeIntrinsics, unproject_many
from .frames import AzEl, BodyPose, FrameChain
from .geodesy import EcefCoord, GeodeticCoord, geodetic_to_ecef
from .gnss import EpochBatch
from .nlos import SatelliteObservation, Verdict
from .skyseg import SkyMask

TWO_PI = 2 * math.pi


@dataclass(frozen=True)
class Occluder:
    """Blocks the sky for azimuths from ``az_start`` clockwise to ``az_end``
    and elevations up to ``max_elevation``."""

    az_start: float
    az_end: float
    max_elevation: float

    def __post_init__(self):
        if not 0 < self.max_elevation <= math.pi / 2:
            raise ValueError("occluder max elevation must lie in (0, pi/2]")

    @property
    def span(self) -> float:
        s = (self.az_end - self.az_start) % TWO_PI
        return TWO_PI if s == 0 and self.az_end != self.az_start else s

    def contains(self, az, el):
        rel = np.mod(np.asarray(az) - self.az_start, TWO_PI)
        return (rel <= self.span) & (np.asarray(el) <= self.max_elevation)


@dataclass(frozen=True)
class SatSpec:
    sat_id: str
    azel: AzEl
    range: float = 2.2e7
    vel_ecef: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @property
    def constellation(self) -> str:
        return self.sat_id[0]


@dataclass(frozen=True)
class Noise:
    pixel_sigma: float = 10.0
    pr_sigma: float = 0.0
    dop_sigma: float = 0.0


@dataclass(frozen=True)
class Trajectory:
    """Constant-velocity body motion in the world frame, starting at the pose in the rig."""

    n_epochs: int = 1
    interval: float = 1.0
    start_time: float = 1000.0
    velocity_world: np.ndarray = field(default_factory=lambda: np.zeros(3))


@dataclass(frozen=True)
class SceneSpec:
    anchor: GeodeticCoord
    occluders: list[Occluder]
    satellites: list[SatSpec]
    chain: FrameChain
    intrinsics: FisheyeIntrinsics
    noise: Noise = field(default_factory=Noise)
    nlos_delay: float = 30.0
    seed: int = 0
    clock_biases: dict[str, float] = field(default_factory=lambda: {"G": 0.0})
    clock_drift: float = 0.0
    trajectory: Trajectory = field(default_factory=Trajectory)
    sky_level: float = 200.0
    building_level: float = 60.0

    def __post_init__(self):
        if any(s.range < 1.9e7 for s in self.satellites):
            raise ValueError("satellite ranges must be at least 1.9e7 m")


@dataclass(frozen=True)
class GroundTruth:
    mask: SkyMask
    visibility: dict[str, Verdict]
    true_position_ecef: EcefCoord
    true_psi: float


@dataclass(frozen=True)
class EpochTruth:
    times: np.ndarray
    world_positions: np.ndarray
    world_velocities: np.ndarray
    receiver_ecef: np.ndarray
    satellite_ecef: np.ndarray  # (epochs, sats, 3)
    visibility: list[dict[str, Verdict]]


def _enu_axes(lat: float, lon: float) -> np.ndarray:
    """Columns are the east, north and up unit vectors in ECEF."""
    sl, cl, so, co = math.sin(lat), math.cos(lat), math.sin(lon), math.cos(lon)
    east = [-so, co, 0.0]
    north = [-sl * co, -sl * so, cl]
    up = [cl * co, cl * so, sl]
    return np.column_stack([east, north, up])


def _yaw(psi: float) -> np.ndarray:
    c, s = math.cos(psi), math.sin(psi)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _direction(azel: AzEl) -> np.ndarray:
    ce = math.cos(azel.elevation)
    return np.array([math.sin(azel.azimuth) * ce, math.cos(azel.azimuth) * ce, math.sin(azel.elevation)])


def _azel_arrays(d_enu: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    horiz = np.hypot(d_enu[..., 0], d_enu[..., 1])
    el = np.arctan2(d_enu[..., 2], horiz)
    az = np.mod(np.arctan2(d_enu[..., 0], d_enu[..., 1]), TWO_PI)
    return az, el


def visibility_oracle(scene: SceneSpec, sat: AzEl) -> Verdict:
    if sat.elevation <= 0:
        return Verdict.NLOS
    for occ in scene.occluders:
        if occ.contains(sat.azimuth, sat.elevation):
            return Verdict.NLOS
    return Verdict.LOS


def _occluded(scene: SceneSpec, az: np.ndarray, el: np.ndarray) -> np.ndarray:
    blocked = el <= 0
    for occ in scene.occluders:
        blocked |= occ.contains(az, el)
    return blocked


def epoch_truth(scene: SceneSpec) -> EpochTruth:
    """True receiver, satellite positions and visibility at every epoch."""
    traj = scene.trajectory
    k = np.arange(traj.n_epochs)
    times = traj.start_time + k * traj.interval
    v_w = np.asarray(traj.velocity_world, dtype=float)
    p0 = scene.chain.body_pose.t_body_in_world
    world = p0 + np.outer(k * traj.interval, v_w)
    vel = np.tile(v_w, (traj.n_epochs, 1))

    axes = _enu_axes(scene.anchor.latitude, scene.anchor.longitude)
    w2e = axes @ _yaw(scene.chain.yaw_offset)
    anchor = geodetic_to_ecef(scene.anchor).as_array()
    rcv = anchor + (world - scene.chain.anchor_world) @ w2e.T

    sat0 = np.array([rcv[0] + s.range * (axes @ _direction(s.azel)) for s in scene.satellites]).reshape(-1, 3)
    sat_v = np.array([np.asarray(s.vel_ecef, dtype=float) for s in scene.satellites]).reshape(-1, 3)
    sats = sat0[None, :, :] + (k * traj.interval)[:, None, None] * sat_v[None, :, :]

    vis = []
    for e in range(traj.n_epochs):
        d_enu = (sats[e] - rcv[e]) @ axes
        az, el = _azel_arrays(d_enu)
        vis.append({s.sat_id: visibility_oracle(scene, AzEl(float(a), float(b)))
                    for s, a, b in zip(scene.satellites, az, el)})
    return EpochTruth(times, world, vel, rcv, sats, vis)


def _camera_rotation(scene: SceneSpec) -> np.ndarray:
    """Camera-to-ENU rotation."""
    c = scene.chain
    return _yaw(c.yaw_offset) @ c.body_pose.r_body_to_world @ c.r_sky_to_body


def sky_mask(scene: SceneSpec) -> SkyMask:
    """Noise-free sky mask: pixel rays that escape every occluder."""
    intr = scene.intrinsics
    vv, uu = np.mgrid[0:intr.image_height, 0:intr.image_width]
    inside = intr.in_circle(uu, vv)
    bits = np.zeros(inside.shape, dtype=bool)
    rays = unproject_many(intr, uu[inside], vv[inside])
    d_enu = rays @ _camera_rotation(scene).T
    az, el = _azel_arrays(d_enu)
    bits[inside] = ~_occluded(scene, az, el)
    return SkyMask(bits)


def render_epoch(scene: SceneSpec, epoch: int = 0, mask: Optional[SkyMask] = None) -> np.ndarray:
    """Noisy grayscale sky image for one epoch; deterministic in (seed, epoch)."""
    if mask is None:
        mask = sky_mask(scene)
    rng = np.random.default_rng([scene.seed, epoch, 7])
    mean = np.where(mask.bits, scene.sky_level, scene.building_level)
    noisy = mean + rng.normal(0.0, 1.0, mean.shape) * scene.noise.pixel_sigma
    return np.clip(np.floor(noisy + 0.5), 0, 255).astype(np.uint8)


def render(scene: SceneSpec) -> tuple[np.ndarray, GroundTruth]:
    mask = sky_mask(scene)
    image = render_epoch(scene, 0, mask)
    truth = epoch_truth(scene)
    return image, GroundTruth(mask, truth.visibility[0],
                              EcefCoord.from_array(truth.receiver_ecef[0]), scene.chain.yaw_offset)


def project_satellite(scene: SceneSpec, index: int, epoch: int = 0,
                      truth: Optional[EpochTruth] = None) -> Optional[tuple[float, float]]:
    """Pixel of satellite ``index`` via spherical angles, or None if out of view."""
    if truth is None:
        truth = epoch_truth(scene)
    axes = _enu_axes(scene.anchor.latitude, scene.anchor.longitude)
    d_enu = (truth.satellite_ecef[epoch, index] - truth.receiver_ecef[epoch]) @ axes
    x, y, z = _camera_rotation(scene).T @ d_enu
    theta = math.atan2(math.hypot(x, y), z)
    if theta >= math.pi / 2:
        return None
    phi = math.atan2(y, x)
    intr = scene.intrinsics
    # theta_d = theta + k1 theta^3 + k2 theta^5 + k3 theta^7 + k4 theta^9
    theta_d = float(np.polyval([intr.k4, 0, intr.k3, 0, intr.k2, 0, intr.k1, 0, 1, 0], theta))
    xd, yd = theta_d * math.cos(phi), theta_d * math.sin(phi)
    u = intr.fx * (xd + intr.alpha * yd) + intr.cx
    v = intr.fy * yd + intr.cy
    if math.hypot(u - intr.cx, v - intr.cy) > intr.valid_radius:
        return None
    return u, v


def forward_model(scene: SceneSpec, truth: Optional[EpochTruth] = None) -> EpochBatch:
    """Pseudorange and Doppler for every satellite above the horizon at each epoch.

    NLOS satellites carry an extra ``nlos_delay`` on the pseudorange.
    """
    if truth is None:
        truth = epoch_truth(scene)
    rng = np.random.default_rng([scene.seed, 1])
    noise = scene.noise
    axes = _enu_axes(scene.anchor.latitude, scene.anchor.longitude)
    w2e = axes @ _yaw(scene.chain.yaw_offset)
    epochs = []
    t0 = truth.times[0]
    for e, t in enumerate(truth.times):
        v_rcv = w2e @ truth.world_velocities[e]
        obs = []
        for j, s in enumerate(scene.satellites):
            d = truth.satellite_ecef[e, j] - truth.receiver_ecef[e]
            rng_true = float(np.linalg.norm(d))
            pr_noise, dop_noise = rng.normal(0.0, 1.0, 2)
            if (d @ axes[:, 2]) <= 0:
                continue
            kappa = d / rng_true
            bias = scene.clock_biases.get(s.constellation, 0.0) + scene.clock_drift * (t - t0)
            pr = rng_true + bias + noise.pr_sigma * pr_noise
            if truth.visibility[e][s.sat_id] is Verdict.NLOS:
                pr += scene.nlos_delay
            dop = float(kappa @ (np.asarray(s.vel_ecef) - v_rcv)) + scene.clock_drift + noise.dop_sigma * dop_noise
            obs.append(SatelliteObservation(float(t), s.sat_id, s.constellation,
                                            EcefCoord.from_array(truth.satellite_ecef[e, j]),
                                            np.asarray(s.vel_ecef, dtype=float), pr, dop))
        if obs:
            epochs.append((float(t), obs))
    return EpochBatch(epochs)


def pose_at(scene: SceneSpec, truth: EpochTruth, epoch: int) -> FrameChain:
    """The scene's frame chain with the body moved to ``epoch``."""
    pose = BodyPose(scene.chain.body_pose.r_body_to_world, truth.world_positions[epoch])
    return scene.chain.with_pose(pose)


# --- random scene generation -------------------------------------------------

def default_intrinsics(width: int = 320, height: int = 256) -> FisheyeIntrinsics:
    scale = min(width, height) / 256.0
    return FisheyeIntrinsics(
        fx=80.0 * scale, fy=80.0 * scale, cx=(width - 1) / 2, cy=(height - 1) / 2,
        alpha=0.0, k1=-0.01, k2=0.002, k3=0.0, k4=0.0,
        image_width=width, image_height=height, valid_radius=120.0 * scale,
    )


def _small_rotation(rng: np.random.Generator, max_angle: float) -> np.ndarray:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0, max_angle)
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + math.sin(angle) * k + (1 - math.cos(angle)) * k @ k


def random_rig(rng: np.random.Generator, tilt_deg: float = 5.0) -> FrameChain:
    """Random yaw offset and body heading, small tilt and extrinsic error."""
    r_body = _yaw(rng.uniform(-math.pi, math.pi)) @ _small_rotation(rng, math.radians(tilt_deg))
    return FrameChain(
        yaw_offset=float(rng.uniform(-math.pi, math.pi)),
        anchor_world=np.zeros(3),
        r_sky_to_body=_small_rotation(rng, math.radians(2.0)),
        body_pose=BodyPose(r_body, np.zeros(3)),
    )


def random_occluders(rng: np.random.Generator, n: Optional[int] = None) -> list[Occluder]:
    n = int(rng.integers(2, 5)) if n is None else n
    out = []
    for _ in range(n):
        a0 = rng.uniform(0, TWO_PI)
        span = rng.uniform(math.radians(25), math.radians(80))
        out.append(Occluder(a0, (a0 + span) % TWO_PI, rng.uniform(math.radians(25), math.radians(60))))
    return out


def _random_velocity(rng: np.random.Generator, speed: float = 3000.0) -> np.ndarray:
    v = rng.normal(size=3)
    return speed * v / np.linalg.norm(v)


def _margin_ok(az: float, el: float, occluders: Sequence[Occluder], margin: float) -> bool:
    """True if (az, el) is at least ``margin`` from every occluder edge."""
    for occ in occluders:
        rel = (az - occ.az_start) % TWO_PI
        d_start = min(rel, TWO_PI - rel)
        rel_end = (az - occ.az_end) % TWO_PI
        d_end = min(rel_end, TWO_PI - rel_end)
        in_span = rel <= occ.span
        if (in_span or min(d_start, d_end) < margin) and abs(el - occ.max_elevation) < margin:
            return False
        if el <= occ.max_elevation + margin and min(d_start, d_end) < margin:
            return False
    return True


def random_satellites(rng: np.random.Generator, occluders: Sequence[Occluder], n: int,
                      n_nlos: Optional[int] = None, margin_deg: float = 0.0,
                      constellations: Sequence[str] = ("G",), min_el_deg: float = 5.0) -> list[SatSpec]:
    """Satellites above ``min_el_deg``; with ``n_nlos`` set, exactly that many are occluded."""
    margin = math.radians(margin_deg)
    sats: list[SatSpec] = []
    want_nlos = n_nlos
    attempts = 0
    while len(sats) < n:
        attempts += 1
        if attempts > 100000:
            raise RuntimeError("could not place satellites with the requested constraints")
        az = rng.uniform(0, TWO_PI)
        el = math.asin(rng.uniform(math.sin(math.radians(min_el_deg)), 1.0))
        blocked = any(bool(o.contains(az, el)) for o in occluders)
        if margin > 0 and not _margin_ok(az, el, occluders, margin):
            continue
        if want_nlos is not None:
            n_have = sum(1 for s in sats if any(bool(o.contains(s.azel.azimuth, s.azel.elevation)) for o in occluders))
            need_nlos = n_have < want_nlos
            need_los = (len(sats) - n_have) < (n - want_nlos)
            if blocked and not need_nlos or not blocked and not need_los:
                continue
        const = constellations[len(sats) % len(constellations)]
        prn = len(sats) + 1
        sats.append(SatSpec(f"{const}{prn:02d}", AzEl(az, el), float(rng.uniform(2.0e7, 2.6e7)),
                            _random_velocity(rng)))
    return sats


def random_scene(seed: int, *, min_el_deg: float = 5.0, n_satellites: int = 10, n_nlos: Optional[int] = None,
                 n_occluders: Optional[int] = None, width: int = 320, height: int = 256,
                 pixel_sigma: float = 10.0, pr_sigma: float = 0.0, dop_sigma: float = 0.0,
                 nlos_delay: float = 30.0, margin_deg: float = 0.0,
                 constellations: Sequence[str] = ("G",), n_epochs: int = 1,
                 interval: float = 1.0, speed: float = 0.0, tilt_deg: float = 5.0,
                 occluders: Optional[Sequence[Occluder]] = None) -> SceneSpec:
    """Random anchor, rig, skyline and constellation, reproducible from ``seed``."""
    rng = np.random.default_rng(seed)
    lat = math.asin(rng.uniform(-0.95, 0.95))
    lon = rng.uniform(-math.pi, math.pi)
    anchor = GeodeticCoord(lat, lon if lon > -math.pi else math.pi, float(rng.uniform(0, 500)))
    chain = random_rig(rng, tilt_deg)
    generated = random_occluders(rng, n_occluders)
    occluders = generated if occluders is None else list(occluders)
    sats = random_satellites(rng, occluders, n_satellites, n_nlos, margin_deg, constellations, min_el_deg)
    heading = rng.uniform(-math.pi, math.pi)
    velocity = np.array([speed * math.cos(heading), speed * math.sin(heading), 0.0])
    biases = {c: float(rng.uniform(-300, 300)) for c in constellations}
    return SceneSpec(
        anchor=anchor,
        occluders=occluders,
        satellites=sats,
        chain=chain,
        intrinsics=default_intrinsics(width, height),
        noise=Noise(pixel_sigma, pr_sigma, dop_sigma),
        nlos_delay=nlos_delay,
        seed=seed,
        clock_biases=biases,
        clock_drift=float(rng.uniform(-1.0, 1.0)),
        trajectory=Trajectory(n_epochs, interval, 1000.0, velocity),
    )


def with_noise(scene: SceneSpec, **kwargs) -> SceneSpec:
    return replace(scene, noise=replace(scene.noise, **kwargs))
