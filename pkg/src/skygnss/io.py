"""Readers and writers for the on-disk formats.

observations CSV  epoch_time, sat_id, constellation, x/y/z_ecef, vx/vy/vz_ecef,
                  pseudorange_m, doppler_mps, n_si, n_p, n_d
                  (doppler_mps is range-rate in m/s, positive while the
                  range is opening)
calibration       key=value lines: fx fy cx cy alpha k1..k4 width height
                  valid_radius r_sky_i (9 row-major values)
poses CSV         epoch_time, px, py, pz, qw, qx, qy, qz (body in world)
anchor CSV        lat_deg, lon_deg, height_m, psi_deg
scene file        key=value lines, ``occluder`` may repeat
rasters           8-bit PNG; masks use {0, 255}
"""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image
from scipy.spatial.transform import Rotation

from .errors import SkyGnssError
from .fisheye import FisheyeIntrinsics
from .frames import BodyPose
from .geodesy import EcefCoord, GeodeticCoord
from .nlos import SatelliteObservation
from .skyseg import SkyMask, to_grayscale

OBS_COLUMNS = [
    "epoch_time", "sat_id", "constellation", "x_ecef", "y_ecef", "z_ecef",
    "vx_ecef", "vy_ecef", "vz_ecef", "pseudorange_m", "doppler_mps", "n_si", "n_p", "n_d",
]
POSE_COLUMNS = ["epoch_time", "px", "py", "pz", "qw", "qx", "qy", "qz"]
ANCHOR_COLUMNS = ["lat_deg", "lon_deg", "height_m", "psi_deg"]
CALIB_SCALARS = ["fx", "fy", "cx", "cy", "alpha", "k1", "k2", "k3", "k4", "width", "height", "valid_radius"]


class ParseError(SkyGnssError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line


def _fmt(x: float) -> str:
    return repr(float(x))


def _read_table(path, columns: Sequence[str]) -> list[tuple[int, dict[str, str]]]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(path, 0, f"cannot read file: {exc.strerror}") from exc
    rows = list(csv.reader(text.splitlines()))
    if not rows:
        raise ParseError(path, 1, "missing header")
    header = [h.strip() for h in rows[0]]
    if header != list(columns):
        raise ParseError(path, 1, f"header must be {','.join(columns)}")
    out = []
    for i, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(columns):
            raise ParseError(path, i, f"expected {len(columns)} fields, got {len(row)}")
        out.append((i, {k: v.strip() for k, v in zip(columns, row)}))
    return out


def _float(path, line: int, rec: dict[str, str], key: str) -> float:
    try:
        v = float(rec[key])
    except ValueError:
        raise ParseError(path, line, f"{key}={rec[key]!r} is not a number") from None
    if not math.isfinite(v):
        raise ParseError(path, line, f"{key} is not finite")
    return v


def read_observations(path) -> list[SatelliteObservation]:
    obs = []
    for line, rec in _read_table(path, OBS_COLUMNS):
        f = {k: _float(path, line, rec, k) for k in OBS_COLUMNS if k not in ("sat_id", "constellation")}
        try:
            obs.append(SatelliteObservation(
                epoch_time=f["epoch_time"], sat_id=rec["sat_id"], constellation=rec["constellation"],
                pos_ecef=EcefCoord(f["x_ecef"], f["y_ecef"], f["z_ecef"]),
                vel_ecef=np.array([f["vx_ecef"], f["vy_ecef"], f["vz_ecef"]]),
                pseudorange=f["pseudorange_m"], doppler_range_rate=f["doppler_mps"],
                n_si=f["n_si"], n_p=f["n_p"], n_d=f["n_d"],
            ))
        except ValueError as exc:
            raise ParseError(path, line, str(exc)) from None
    return obs


def write_observations(path, observations: Iterable[SatelliteObservation]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OBS_COLUMNS)
        for o in observations:
            p, v = o.pos_ecef, o.vel_ecef
            w.writerow([_fmt(o.epoch_time), o.sat_id, o.constellation, _fmt(p.x), _fmt(p.y), _fmt(p.z),
                        _fmt(v[0]), _fmt(v[1]), _fmt(v[2]), _fmt(o.pseudorange),
                        _fmt(o.doppler_range_rate), _fmt(o.n_si), _fmt(o.n_p), _fmt(o.n_d)])


def _read_key_values(path) -> list[tuple[int, str, str]]:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise ParseError(path, 0, f"cannot read file: {exc.strerror}") from exc
    out = []
    for i, raw in enumerate(lines, start=1):
        s = raw.split("#", 1)[0].strip()
        if not s:
            continue
        if "=" not in s:
            raise ParseError(path, i, "expected key=value")
        k, v = s.split("=", 1)
        out.append((i, k.strip(), v.strip()))
    return out


def read_calibration(path) -> tuple[FisheyeIntrinsics, np.ndarray]:
    vals: dict[str, float] = {}
    r_sky_i = np.eye(3)
    for line, k, v in _read_key_values(path):
        try:
            if k == "r_sky_i":
                nums = [float(x) for x in v.replace(",", " ").split()]
                if len(nums) != 9:
                    raise ParseError(path, line, "r_sky_i needs 9 values")
                r_sky_i = np.array(nums).reshape(3, 3)
            elif k in CALIB_SCALARS:
                vals[k] = float(v)
            else:
                raise ParseError(path, line, f"unknown key {k!r}")
        except ValueError:
            raise ParseError(path, line, f"{k}={v!r} is not a number") from None
    missing = [k for k in CALIB_SCALARS if k not in vals]
    if missing:
        raise ParseError(path, 0, f"missing keys: {', '.join(missing)}")
    if not np.allclose(r_sky_i @ r_sky_i.T, np.eye(3), atol=1e-6) or np.linalg.det(r_sky_i) < 0:
        raise ParseError(path, 0, "r_sky_i is not a rotation")
    try:
        intr = FisheyeIntrinsics(
            vals["fx"], vals["fy"], vals["cx"], vals["cy"], vals["alpha"],
            vals["k1"], vals["k2"], vals["k3"], vals["k4"],
            int(vals["width"]), int(vals["height"]), vals["valid_radius"],
        )
    except ValueError as exc:
        raise ParseError(path, 0, str(exc)) from None
    return intr, r_sky_i


def write_calibration(path, intr: FisheyeIntrinsics, r_sky_i: np.ndarray) -> None:
    vals = [intr.fx, intr.fy, intr.cx, intr.cy, intr.alpha, intr.k1, intr.k2, intr.k3, intr.k4,
            intr.image_width, intr.image_height, intr.valid_radius]
    lines = [f"{k}={_fmt(v) if k not in ('width', 'height') else int(v)}" for k, v in zip(CALIB_SCALARS, vals)]
    lines.append("r_sky_i=" + " ".join(_fmt(x) for x in np.asarray(r_sky_i).ravel()))
    Path(path).write_text("\n".join(lines) + "\n")


def read_poses(path) -> list[tuple[float, BodyPose]]:
    poses = []
    for line, rec in _read_table(path, POSE_COLUMNS):
        f = {k: _float(path, line, rec, k) for k in POSE_COLUMNS}
        q = np.array([f["qx"], f["qy"], f["qz"], f["qw"]])
        if np.linalg.norm(q) < 1e-9:
            raise ParseError(path, line, "zero quaternion")
        rot = Rotation.from_quat(q).as_matrix()
        poses.append((f["epoch_time"], BodyPose(rot, np.array([f["px"], f["py"], f["pz"]]))))
    return poses


def write_poses(path, poses: Iterable[tuple[float, BodyPose]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(POSE_COLUMNS)
        for t, pose in poses:
            qx, qy, qz, qw = Rotation.from_matrix(pose.r_body_to_world).as_quat()
            p = pose.t_body_in_world
            w.writerow([_fmt(t), _fmt(p[0]), _fmt(p[1]), _fmt(p[2]), _fmt(qw), _fmt(qx), _fmt(qy), _fmt(qz)])


def read_anchor(path) -> tuple[GeodeticCoord, float]:
    rows = _read_table(path, ANCHOR_COLUMNS)
    if len(rows) != 1:
        raise ParseError(path, 2, f"expected exactly one anchor row, got {len(rows)}")
    line, rec = rows[0]
    f = {k: _float(path, line, rec, k) for k in ANCHOR_COLUMNS}
    try:
        g = GeodeticCoord.from_degrees(f["lat_deg"], f["lon_deg"], f["height_m"])
    except ValueError as exc:
        raise ParseError(path, line, str(exc)) from None
    return g, math.radians(f["psi_deg"])


def write_anchor(path, g: GeodeticCoord, psi: float) -> None:
    vals = [math.degrees(g.latitude), math.degrees(g.longitude), g.height, math.degrees(psi)]
    Path(path).write_text(",".join(ANCHOR_COLUMNS) + "\n" + ",".join(_fmt(v) for v in vals) + "\n")


def read_gray(path) -> np.ndarray:
    """Load an 8-bit raster as grayscale; colour images go through :func:`to_grayscale`."""
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("L", "P", "1", "LA"):
                return np.asarray(im.convert("L"), dtype=np.uint8)
            return to_grayscale(np.asarray(im.convert("RGB"), dtype=np.uint8))
    except (OSError, ValueError) as exc:
        raise ParseError(path, 0, f"unreadable image: {exc}") from exc


def write_gray(path, img: np.ndarray) -> None:
    Image.fromarray(np.asarray(img, dtype=np.uint8)).save(path)


def write_mask(path, mask: SkyMask) -> None:
    write_gray(path, mask.to_raster())


def read_mask(path) -> SkyMask:
    return SkyMask(read_gray(path) >= 128)


def write_rgb(path, img: np.ndarray) -> None:
    Image.fromarray(np.asarray(img, dtype=np.uint8)).save(path)


_SCENE_INT = {"seed", "n_satellites", "n_nlos", "n_occluders", "width", "height", "n_epochs"}
_SCENE_FLOAT = {"pixel_sigma", "pr_sigma", "dop_sigma", "nlos_delay", "margin_deg", "interval",
                "speed", "tilt_deg", "min_el_deg"}
_SCENE_OVERRIDES = {"lat_deg", "lon_deg", "height_m", "psi_deg"}


def read_scene(path):
    """Build a :class:`~skygnss.synth.SceneSpec` from a key=value scene file.

    Unlisted quantities are drawn from ``seed``.  ``occluder = az0 az1 max_el``
    (degrees, clockwise from az0 to az1) may repeat and replaces the random
    skyline; ``constellations = G,E`` selects satellite systems; ``lat_deg``,
    ``lon_deg``, ``height_m`` and ``psi_deg`` override the drawn anchor and yaw.
    """
    from dataclasses import replace

    from . import synth

    kwargs: dict = {}
    occluders = []
    overrides: dict[str, float] = {}
    for line, k, v in _read_key_values(path):
        try:
            if k in _SCENE_INT:
                kwargs[k] = int(v)
            elif k in _SCENE_FLOAT:
                kwargs[k] = float(v)
            elif k in _SCENE_OVERRIDES:
                overrides[k] = float(v)
            elif k == "constellations":
                kwargs[k] = tuple(c.strip() for c in v.split(",") if c.strip())
            elif k == "occluder":
                a0, a1, el = (float(x) for x in v.split())
                occluders.append(synth.Occluder(math.radians(a0) % (2 * math.pi),
                                                math.radians(a1) % (2 * math.pi), math.radians(el)))
            else:
                raise ParseError(path, line, f"unknown key {k!r}")
        except ValueError as exc:
            raise ParseError(path, line, f"bad value for {k}: {exc}") from None
    if occluders:
        kwargs["occluders"] = occluders
    seed = kwargs.pop("seed", 0)
    scene = synth.random_scene(seed, **kwargs)
    if {"lat_deg", "lon_deg", "height_m"} & overrides.keys():
        g = scene.anchor
        scene = replace(scene, anchor=GeodeticCoord.from_degrees(
            overrides.get("lat_deg", math.degrees(g.latitude)),
            overrides.get("lon_deg", math.degrees(g.longitude)),
            overrides.get("height_m", g.height)))
    if "psi_deg" in overrides:
        c = scene.chain
        scene = replace(scene, chain=type(c)(math.radians(overrides["psi_deg"]), c.anchor_world,
                                             c.r_sky_to_body, c.body_pose, c.lever_arm))
    return scene
