import math

import numpy as np
import pytest
from scipy.ndimage import distance_transform_edt

from skygnss import nlos, synth
from skygnss.errors import MixedEpochs, NonPositiveElevation, TimestampMismatch
from skygnss.fisheye import PixelCoord
from skygnss.frames import AzEl, FrameChain
from skygnss.geodesy import AnchorPoint, EcefCoord, GeodeticCoord, enu_to_ecef_point, EnuCoord
from skygnss.nlos import BackProjection, Verdict
from skygnss.skyseg import SkyMask


def _obs(pos, el_t=0.0, sat="G01", **kw):
    return nlos.SatelliteObservation(el_t, sat, sat[0], pos, np.zeros(3), 2.2e7, 0.0, **kw)


def test_zenith_satellite_hits_principal_point():
    anchor = AnchorPoint.from_geodetic(GeodeticCoord(0.5, 0.2, 10.0))
    sat = enu_to_ecef_point(anchor, EnuCoord(0, 0, 2.2e7))
    intr = synth.default_intrinsics()
    bp = nlos.back_project(FrameChain(), anchor, intr, _obs(sat))
    assert (bp.pixel.u, bp.pixel.v) == pytest.approx((intr.cx, intr.cy), abs=1e-6)
    assert bp.azel.elevation == pytest.approx(math.pi / 2)


def test_satellite_behind_camera_is_out_of_view():
    anchor = AnchorPoint.from_geodetic(GeodeticCoord(0.5, 0.2, 10.0))
    sat = enu_to_ecef_point(anchor, EnuCoord(2.2e7, 0, -1e6))
    bp = nlos.back_project(FrameChain(), anchor, synth.default_intrinsics(), _obs(sat))
    assert bp.pixel is None and bp.p_cam[2] < 0


def _bp(pixel):
    return BackProjection(np.array([0, 0, 1.0]), pixel, AzEl(0.0, 0.5))


def test_classify_against_trivial_masks():
    px = PixelCoord(3.0, 4.0)
    sky = SkyMask(np.ones((8, 8), bool))
    ground = SkyMask(np.zeros((8, 8), bool))
    assert nlos.classify(_bp(px), sky, 0.5, 0.26).verdict is Verdict.LOS
    assert nlos.classify(_bp(px), ground, 0.5, 0.26).verdict is Verdict.NLOS
    c = nlos.classify(_bp(px), ground, -0.1, 0.26)
    assert c.verdict is Verdict.NLOS and not c.fallback


def test_out_of_view_falls_back_to_elevation():
    mask = SkyMask(np.zeros((8, 8), bool))
    c = nlos.classify(_bp(None), mask, math.radians(20), math.radians(15))
    assert c.verdict is Verdict.LOS and c.fallback and c.pixel is None
    c = nlos.classify(_bp(None), mask, math.radians(10), math.radians(15))
    assert c.verdict is Verdict.NLOS and c.fallback


def test_degenerate_mask_falls_back():
    mask = SkyMask(np.zeros((8, 8), bool), threshold=1, degenerate=True)
    c = nlos.classify(_bp(PixelCoord(2, 2)), mask, math.radians(40), math.radians(15))
    assert c.verdict is Verdict.LOS and c.fallback


@pytest.mark.parametrize("n_si, n, el, expected", [(1, 1, 90, 1.0), (1, 1, 30, 4.0), (2, 3, 90, 6.0)])
def test_variances(n_si, n, el, expected):
    o = _obs(EcefCoord(2e7, 0, 0), n_si=n_si, n_p=n, n_d=n)
    assert nlos.pseudorange_variance(o, math.radians(el)) == pytest.approx(expected)
    assert nlos.doppler_variance(o, math.radians(el)) == pytest.approx(expected)


def test_zero_elevation_variance_raises():
    with pytest.raises(NonPositiveElevation):
        nlos.pseudorange_variance(_obs(EcefCoord(2e7, 0, 0)), 0.0)


def _scene_inputs(seed, **kw):
    scene = synth.random_scene(seed, **kw)
    image, truth = synth.render(scene)
    obs = synth.forward_model(scene).epochs[0][1]
    return scene, truth, obs, AnchorPoint.from_geodetic(scene.anchor)


def test_all_sky_keeps_everything_and_no_sky_rejects_everything():
    scene, truth, obs, anchor = _scene_inputs(2, n_satellites=8, min_el_deg=20.0)
    shape = truth.mask.shape
    kept = nlos.filter_epoch(obs, scene.chain, anchor, scene.intrinsics, SkyMask(np.ones(shape, bool)))
    assert len(kept.kept) == len(obs) and not kept.rejected
    gone = nlos.filter_epoch(obs, scene.chain, anchor, scene.intrinsics, SkyMask(np.zeros(shape, bool)))
    in_view = [c for _, c in gone.rejected if not c.fallback]
    assert len(in_view) + len(gone.kept) + sum(c.fallback for _, c in gone.rejected) == len(obs)
    assert all(k.classification.fallback for k in gone.kept)


def test_filter_matches_geometric_truth_away_from_edges():
    scene, truth, obs, anchor = _scene_inputs(8, n_satellites=14, n_nlos=5, min_el_deg=10.0)
    res = nlos.filter_epoch(obs, scene.chain, anchor, scene.intrinsics, truth.mask)
    bits = truth.mask.bits
    dist = np.where(bits, distance_transform_edt(bits), distance_transform_edt(~bits))
    checked = 0
    for o, c in [(k.obs, k.classification) for k in res.kept] + res.rejected:
        if c.pixel is not None and dist[int(round(c.pixel.v)), int(round(c.pixel.u))] < 2:
            continue
        checked += 1
        assert c.verdict is truth.visibility[o.sat_id]
    assert checked >= 10


def test_mixed_epochs_rejected():
    with pytest.raises(MixedEpochs):
        nlos.filter_epoch([_obs(EcefCoord(2e7, 0, 0), 1.0), _obs(EcefCoord(2e7, 0, 0), 2.0, "G02")],
                          FrameChain(), AnchorPoint.from_geodetic(GeodeticCoord(0, 0)),
                          synth.default_intrinsics(), SkyMask(np.ones((4, 4), bool)))


def test_elevation_filter_cutoff():
    scene, truth, obs, anchor = _scene_inputs(5, n_satellites=10, min_el_deg=5.0)
    cut = math.radians(30)
    res = nlos.elevation_filter(obs, scene.chain, anchor, cut)
    assert all(k.classification.elevation >= cut for k in res.kept)
    assert all(c.elevation < cut for _, c in res.rejected)
    assert len(nlos.elevation_filter(obs, scene.chain, anchor, 0.0).kept) == len(obs)


def test_match_timestamp():
    assert nlos.match_timestamp(10.2, [9.0, 10.0, 11.0]) == 1
    with pytest.raises(TimestampMismatch):
        nlos.match_timestamp(10.6, [9.0, 10.0, 11.2], tolerance=0.5)
    with pytest.raises(TimestampMismatch):
        nlos.match_timestamp(1.0, [])


def test_observation_validation():
    with pytest.raises(ValueError):
        _obs(EcefCoord(2e7, 0, 0), sat="X01")
    with pytest.raises(ValueError):
        _obs(EcefCoord(2e7, 0, 0), n_si=0)
