import math
from dataclasses import replace

import numpy as np
import pytest

from skygnss import synth
from skygnss.frames import AzEl
from skygnss.nlos import Verdict


def _scene(**kw):
    return synth.random_scene(21, **kw)


def test_no_occluders_gives_uniform_sky_inside_circle():
    scene = _scene(pixel_sigma=0.0, occluders=[])
    image, truth = synth.render(scene)
    inside = scene.intrinsics.in_circle(*np.meshgrid(np.arange(image.shape[1]), np.arange(image.shape[0])))
    assert np.all(image[inside] == 200)
    assert truth.mask.bits[inside].all()
    # outside the lens circle there is no sky to see
    assert not truth.mask.bits[~inside].any()
    assert np.all(image[~inside] == 60)


def test_full_dome_occluder():
    scene = _scene(pixel_sigma=0.0, n_satellites=3, n_nlos=3,
                   occluders=[synth.Occluder(0.0, 2 * math.pi, math.pi / 2)])
    image, truth = synth.render(scene)
    assert np.all(image == 60)
    assert not truth.mask.bits.any()
    assert set(truth.visibility.values()) == {Verdict.NLOS}


def test_quadrant_occluder_solid_angle_share():
    scene = synth.random_scene(4, occluders=[synth.Occluder(0.0, math.pi / 2, math.pi / 2)],
                               tilt_deg=0.0, n_satellites=4, n_nlos=1)
    bits = synth.sky_mask(scene).bits
    intr = scene.intrinsics
    inside = intr.in_circle(*np.meshgrid(np.arange(intr.image_width), np.arange(intr.image_height)))
    # blocking a quarter of all azimuths up to the zenith leaves 3/4 of the circle as sky
    assert bits[inside].mean() == pytest.approx(0.75, abs=0.02)


def test_visibility_oracle_rules():
    scene = _scene(occluders=[synth.Occluder(0.0, math.radians(60), math.radians(40))])
    assert synth.visibility_oracle(scene, AzEl(1.0, math.pi / 2)) is Verdict.LOS
    assert synth.visibility_oracle(scene, AzEl(math.radians(30), math.radians(20))) is Verdict.NLOS
    assert synth.visibility_oracle(scene, AzEl(math.radians(90), math.radians(20))) is Verdict.LOS
    assert synth.visibility_oracle(scene, AzEl(math.radians(90), math.radians(-5))) is Verdict.NLOS


def test_occluder_span_wraps_through_north():
    occ = synth.Occluder(math.radians(350), math.radians(10), math.radians(30))
    assert occ.span == pytest.approx(math.radians(20))
    assert occ.contains(math.radians(5), 0.1)
    assert not occ.contains(math.radians(20), 0.1)
    with pytest.raises(ValueError):
        synth.Occluder(0, 1, 0.0)


def test_noiseless_pseudoranges_are_geometric():
    scene = replace(_scene(n_satellites=8, n_nlos=2), clock_biases={"G": 0.0}, clock_drift=0.0)
    truth = synth.epoch_truth(scene)
    (t, obs), = synth.forward_model(scene, truth).epochs
    for j, o in enumerate(obs):
        rng = np.linalg.norm(truth.satellite_ecef[0, j] - truth.receiver_ecef[0])
        extra = scene.nlos_delay if truth.visibility[0][o.sat_id] is Verdict.NLOS else 0.0
        assert o.pseudorange == pytest.approx(rng + extra, abs=1e-6)
    assert sum(v is Verdict.NLOS for v in truth.visibility[0].values()) == 2


def test_requested_nlos_count_and_min_elevation():
    scene = _scene(n_satellites=12, n_nlos=4, min_el_deg=15.0)
    assert sum(synth.visibility_oracle(scene, s.azel) is Verdict.NLOS for s in scene.satellites) == 4
    assert min(s.azel.elevation for s in scene.satellites) >= math.radians(15.0) - 1e-12


def test_seeded_runs_are_bit_identical():
    a, b = _scene(pr_sigma=2.0, n_epochs=3, speed=2.0), _scene(pr_sigma=2.0, n_epochs=3, speed=2.0)
    ia, _ = synth.render(a)
    ib, _ = synth.render(b)
    assert np.array_equal(ia, ib)
    oa = [(o.sat_id, o.pseudorange, o.doppler_range_rate) for _, obs in synth.forward_model(a).epochs for o in obs]
    ob = [(o.sat_id, o.pseudorange, o.doppler_range_rate) for _, obs in synth.forward_model(b).epochs for o in obs]
    assert oa == ob


def test_receiver_moves_with_trajectory():
    scene = _scene(n_epochs=5, speed=2.0, interval=0.5)
    truth = synth.epoch_truth(scene)
    steps = np.linalg.norm(np.diff(truth.receiver_ecef, axis=0), axis=1)
    np.testing.assert_allclose(steps, 1.0, atol=1e-6)


def test_scene_rejects_close_satellites():
    scene = _scene()
    bad = replace(scene.satellites[0], range=1e6)
    with pytest.raises(ValueError):
        replace(scene, satellites=[bad])
