"""End-to-end runs over synthetic scenes: alignment, segmentation, filtering, SPP."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import gnss, nlos, skyseg, synth
from .frames import BodyPose, FrameChain
from .geodesy import AnchorPoint, EcefCoord
from .gnss import EpochBatch


@dataclass(frozen=True)
class RunConfig:
    blur_kernel: int = 5
    segmenter: str = "otsu"
    local_window: int = 31
    local_offset: float = 5.0
    elevation_cutoff: float = math.radians(15.0)
    timestamp_tolerance: float = 0.5
    monte_carlo_trials: int = 0
    seed: int = 0

    @property
    def nlos(self) -> nlos.NlosConfig:
        return nlos.NlosConfig(elevation_cutoff=self.elevation_cutoff)

    def segment(self, image: np.ndarray):
        return skyseg.segment_sky(image, self.blur_kernel, self.segmenter,
                                  self.local_window, self.local_offset)


def default_scene(seed: int) -> synth.SceneSpec:
    """Ten-epoch moving receiver under a random skyline, GPS + Galileo."""
    return synth.random_scene(seed, n_satellites=14, n_nlos=4, n_epochs=10, speed=3.0,
                              pr_sigma=2.0, dop_sigma=0.1, margin_deg=3.0, min_el_deg=10.0,
                              constellations=("G", "E"))


def nlos_trial_scene(seed: int) -> synth.SceneSpec:
    """Single epoch, 10 satellites of which 3 are blocked, 2 m pseudorange noise."""
    return synth.random_scene(seed, n_satellites=10, n_nlos=3, pr_sigma=2.0, nlos_delay=30.0,
                              margin_deg=5.0, min_el_deg=15.0)


def _horizontal_error(anchor: AnchorPoint, est: EcefCoord, truth: np.ndarray) -> float:
    d = anchor.r_e_to_n @ (est.as_array() - truth)
    return float(np.hypot(d[0], d[1]))


def _spp(kept: list[nlos.KeptObservation]) -> gnss.SppSolution:
    return gnss.spp_solve([k.obs for k in kept], [k.pseudorange_variance for k in kept])


def nlos_benefit_trial(seed: int, config: RunConfig = RunConfig()) -> tuple[float, float]:
    """Horizontal SPP error (sky-filtered, unfiltered) for one synthetic epoch.

    The rig and anchor are taken as known so only the filtering differs.
    """
    scene = nlos_trial_scene(seed)
    image, truth = synth.render(scene)
    mask, _ = config.segment(image)
    anchor = AnchorPoint.from_geodetic(scene.anchor)
    obs = synth.forward_model(scene).epochs[0][1]
    filtered = nlos.filter_epoch(obs, scene.chain, anchor, scene.intrinsics, mask, config.nlos)
    everything = nlos.elevation_filter(obs, scene.chain, anchor, 0.0)
    p_true = truth.true_position_ecef.as_array()
    return (_horizontal_error(anchor, _spp(filtered.kept).position_ecef, p_true),
            _horizontal_error(anchor, _spp(everything.kept).position_ecef, p_true))


def _screen(batch: EpochBatch, anchor: AnchorPoint, cutoff: float) -> EpochBatch:
    epochs = []
    for t, obs in batch.epochs:
        els = gnss.elevations_from(anchor.ecef, obs)
        kept = [o for o, e in zip(obs, els) if e >= cutoff and e > 0]
        if kept:
            epochs.append((t, kept))
    return EpochBatch(epochs)


@dataclass(frozen=True)
class PipelineResult:
    report: dict
    trajectory: list[dict]


def run_pipeline(scene: synth.SceneSpec, config: RunConfig = RunConfig()) -> PipelineResult:
    truth = synth.epoch_truth(scene)
    batch = synth.forward_model(scene, truth)
    if batch.size != len(truth.times):
        raise gnss.Underdetermined("an epoch has no satellites above the horizon")
    true_anchor = AnchorPoint.from_geodetic(scene.anchor)
    rel_world = truth.world_positions - scene.chain.anchor_world

    coarse_sol, _ = gnss.spp_weighted(batch.epochs[0][1], cutoff=config.elevation_cutoff)
    # the body starts at the world origin, so the first fix is the anchor
    coarse = AnchorPoint.from_ecef(coarse_sol.position_ecef)
    yaw = gnss.yaw_calibrate(batch, truth.world_velocities, coarse)
    refined = gnss.refine_anchor(_screen(batch, coarse, config.elevation_cutoff), coarse,
                                 rel_world, yaw.psi, yaw.drift_rate)
    first_pass = AnchorPoint.from_ecef(refined.anchor_ecef)

    mask_true = synth.sky_mask(scene)
    r_body = scene.chain.body_pose.r_body_to_world
    chains = [FrameChain(yaw.psi, scene.chain.anchor_world, scene.chain.r_sky_to_body,
                         BodyPose(r_body, truth.world_positions[e]))
              for e in range(batch.size)]
    segmented = [config.segment(synth.render_epoch(scene, e, mask_true)) for e in range(batch.size)]

    # second pass: refit the anchor on sky-classified LOS observations only
    los_batch = EpochBatch([
        (t, [k.obs for k in nlos.filter_epoch(obs, chains[e], first_pass, scene.intrinsics,
                                              segmented[e][0], config.nlos).kept])
        for e, (t, obs) in enumerate(batch.epochs)])
    refined = gnss.refine_anchor(los_batch, first_pass, rel_world, yaw.psi, yaw.drift_rate)
    anchor = AnchorPoint.from_ecef(refined.anchor_ecef)

    per_epoch, trajectory, ious = [], [], []
    for e, (t, obs) in enumerate(batch.epochs):
        mask, otsu_res = segmented[e]
        ious.append(skyseg.iou(mask, mask_true))
        chain = chains[e]
        filtered = nlos.filter_epoch(obs, chain, anchor, scene.intrinsics, mask, config.nlos)
        everything = nlos.elevation_filter(obs, chain, anchor, 0.0)
        sol_f, sol_u = _spp(filtered.kept), _spp(everything.kept)
        p_true = truth.receiver_ecef[e]
        vis = truth.visibility[e]
        agree = [(c.verdict is vis[o.sat_id]) for o, c in
                 [(k.obs, k.classification) for k in filtered.kept] + list(filtered.rejected)]
        per_epoch.append({
            "time": float(t),
            "threshold": None if otsu_res is None else otsu_res.threshold,
            "n_kept": len(filtered.kept),
            "n_rejected": len(filtered.rejected),
            "n_nlos_true": sum(v is nlos.Verdict.NLOS for v in vis.values()),
            "classification_agreement": float(np.mean(agree)),
            "filtered_error_m": float(np.linalg.norm(sol_f.position_ecef.as_array() - p_true)),
            "unfiltered_error_m": float(np.linalg.norm(sol_u.position_ecef.as_array() - p_true)),
            "filtered_horizontal_error_m": _horizontal_error(true_anchor, sol_f.position_ecef, p_true),
            "unfiltered_horizontal_error_m": _horizontal_error(true_anchor, sol_u.position_ecef, p_true),
        })
        for name, p in (("truth", p_true), ("filtered", sol_f.position_ecef.as_array()),
                        ("unfiltered", sol_u.position_ecef.as_array())):
            enu = true_anchor.r_e_to_n @ (p - true_anchor.ecef.as_array())
            trajectory.append({"series": name, "time": float(t),
                               "east": float(enu[0]), "north": float(enu[1]), "up": float(enu[2])})

    psi_err = gnss._wrap_pi(yaw.psi - scene.chain.yaw_offset)
    report = {
        "seed": scene.seed,
        "epochs": batch.size,
        "coarse_anchor_error_m": float(np.linalg.norm(coarse.ecef.as_array() - true_anchor.ecef.as_array())),
        "first_pass_anchor_error_m": float(np.linalg.norm(first_pass.ecef.as_array() - true_anchor.ecef.as_array())),
        "refined_anchor_error_m": float(np.linalg.norm(anchor.ecef.as_array() - true_anchor.ecef.as_array())),
        "refine_cost_initial": refined.initial_cost,
        "refine_cost_final": refined.cost,
        "psi_true_deg": math.degrees(scene.chain.yaw_offset),
        "psi_estimated_deg": math.degrees(yaw.psi),
        "psi_error_deg": math.degrees(psi_err),
        "clock_drift_true_mps": scene.clock_drift,
        "clock_drift_estimated_mps": yaw.drift_rate,
        "segmentation_mean_iou": float(np.mean(ious)),
        "mean_filtered_error_m": float(np.mean([p["filtered_error_m"] for p in per_epoch])),
        "mean_unfiltered_error_m": float(np.mean([p["unfiltered_error_m"] for p in per_epoch])),
        "per_epoch": per_epoch,
    }
    if config.monte_carlo_trials > 0:
        report["monte_carlo"] = monte_carlo_summary(config.seed, config.monte_carlo_trials, config)
    return PipelineResult(report, trajectory)


def monte_carlo_summary(seed: int, trials: int, config: RunConfig = RunConfig()) -> dict:
    errs = np.array([nlos_benefit_trial(seed * 100003 + i, config) for i in range(trials)])
    f, u = errs[:, 0], errs[:, 1]
    return {
        "trials": trials,
        "filtered_better_fraction": float(np.mean(f < u)),
        "median_filtered_h_error_m": float(np.median(f)),
        "median_unfiltered_h_error_m": float(np.median(u)),
    }

