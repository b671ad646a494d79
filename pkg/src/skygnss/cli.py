"""Command-line front end.

Exit codes: 0 success, 2 parse, 3 degenerate, 4 sync, 5 underdetermined, 6 diverged.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from collections import defaultdict
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import gnss, io, nlos, pipeline, skyseg, synth
from .errors import (Diverged, MixedEpochs, NoConvergence, SingularGeometry, TimestampMismatch,
                     Underdetermined, Unobservable)
from .frames import FrameChain
from .geodesy import AnchorPoint, ecef_to_geodetic
from .pipeline import RunConfig

EXIT_OK, EXIT_PARSE, EXIT_DEGENERATE, EXIT_SYNC, EXIT_UNDERDETERMINED, EXIT_DIVERGED = 0, 2, 3, 4, 5, 6

GREEN = (0, 255, 0)
RED = (255, 0, 0)
YELLOW = (255, 255, 0)


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _config(args: argparse.Namespace) -> RunConfig:
    return RunConfig(
        blur_kernel=args.blur_kernel,
        segmenter=args.segmenter,
        local_window=args.local_window,
        local_offset=args.local_offset,
        elevation_cutoff=math.radians(args.elevation_cutoff_deg),
        timestamp_tolerance=args.timestamp_tolerance,
        monte_carlo_trials=args.trials,
        seed=args.seed,
    )


def _dump_json(path: Optional[Path], obj) -> str:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path is not None:
        path.write_text(text)
    return text


# --- overlays ---------------------------------------------------------------

def boundary_overlay(gray: np.ndarray, mask: skyseg.SkyMask) -> np.ndarray:
    rgb = np.repeat(np.asarray(gray, dtype=np.uint8)[:, :, None], 3, axis=2)
    rgb[skyseg.boundary(mask)] = GREEN
    return rgb


def _dot(rgb: np.ndarray, u: float, v: float, colour, radius: int = 2) -> None:
    h, w = rgb.shape[:2]
    r0, c0 = int(round(v)), int(round(u))
    for dr in range(-radius, radius + 1):
        for dc in range(-radius, radius + 1):
            r, c = r0 + dr, c0 + dc
            if dr * dr + dc * dc <= radius * radius and 0 <= r < h and 0 <= c < w:
                rgb[r, c] = colour


# --- subcommands --------------------------------------------------------------

def _image_paths(inputs: Sequence[str]) -> list[Path]:
    paths: list[Path] = []
    for item in inputs:
        p = Path(item)
        paths.extend(sorted(p.glob("*.png")) if p.is_dir() else [p])
    return paths


def cmd_segment(args: argparse.Namespace) -> int:
    config = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    code = EXIT_OK
    for path in _image_paths(args.images):
        gray = io.read_gray(path)
        mask, res = config.segment(gray)
        io.write_mask(out / f"{path.stem}_mask.png", mask)
        io.write_rgb(out / f"{path.stem}_overlay.png", boundary_overlay(gray, mask))
        if res is None:
            line = f"{path.name} method=local window={config.local_window} offset={config.local_offset}"
            degenerate = False
        else:
            line = (f"{path.name} threshold={res.threshold} "
                    f"sigma_b2={res.between_class_variance!r} degenerate={str(res.degenerate).lower()}")
            degenerate = res.degenerate
        (out / f"{path.stem}_report.txt").write_text(line + "\n")
        print(line)
        if degenerate:
            code = EXIT_DEGENERATE
    return code


def _single_epoch(observations) -> float:
    times = sorted({o.epoch_time for o in observations})
    if len(times) > 1:
        raise CliError(f"observation file spans {len(times)} epochs; split it per image", EXIT_PARSE)
    return times[0]


def _chain_for(args, config: RunConfig, t: float) -> tuple[FrameChain, AnchorPoint]:
    geo, psi = io.read_anchor(args.anchor)
    _, r_sky_i = io.read_calibration(args.calibration)
    poses = io.read_poses(args.poses)
    i = nlos.match_timestamp(t, [p[0] for p in poses], config.timestamp_tolerance)
    chain = FrameChain(psi, np.zeros(3), r_sky_i, poses[i][1])
    return chain, AnchorPoint.from_geodetic(geo)


VERDICT_COLUMNS = ["sat_id", "u", "v", "elevation_deg", "verdict", "variance_pr", "variance_dop"]


def _verdict_rows(filtered: nlos.FilteredEpoch) -> list[list[str]]:
    rows = []
    entries = [(k.obs, k.classification, k.pseudorange_variance, k.doppler_variance) for k in filtered.kept]
    entries += [(o, c, None, None) for o, c in filtered.rejected]
    for obs, cls, vp, vd in sorted(entries, key=lambda e: e[0].sat_id):
        px = cls.pixel
        rows.append([obs.sat_id,
                     "" if px is None else f"{px.u:.3f}", "" if px is None else f"{px.v:.3f}",
                     f"{math.degrees(cls.elevation):.6f}", cls.verdict.value,
                     "" if vp is None else repr(vp), "" if vd is None else repr(vd)])
    return rows


def _require(args: argparse.Namespace, names: Sequence[str], why: str) -> None:
    missing = [n for n in names if getattr(args, n) is None]
    if missing:
        raise CliError(f"{why} needs --{' --'.join(missing)}", EXIT_PARSE)


def cmd_classify(args: argparse.Namespace) -> int:
    _require(args, ("calibration", "anchor", "poses"), "classify")
    config = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    gray = io.read_gray(args.image)
    observations = io.read_observations(args.observations)
    intr, _ = io.read_calibration(args.calibration)
    mask, _ = config.segment(gray)
    overlay = boundary_overlay(gray, mask)
    rows: list[list[str]] = []
    if observations:
        chain, anchor = _chain_for(args, config, _single_epoch(observations))
        filtered = nlos.filter_epoch(observations, chain, anchor, intr, mask, config.nlos)
        rows = _verdict_rows(filtered)
        for k in filtered.kept:
            if k.classification.pixel is not None:
                _dot(overlay, k.classification.pixel.u, k.classification.pixel.v, RED)
        for _, c in filtered.rejected:
            if c.pixel is not None:
                _dot(overlay, c.pixel.u, c.pixel.v, YELLOW)
    with open(out / "verdicts.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(VERDICT_COLUMNS)
        w.writerows(rows)
    io.write_rgb(out / "overlay.png", overlay)
    print(f"{len(rows)} satellites classified, "
          f"{sum(r[4] == 'NLOS' for r in rows)} NLOS -> {out / 'verdicts.csv'}")
    return EXIT_OK


def _solution_report(sol: gnss.SppSolution, kept: int, rejected: int) -> dict:
    g = ecef_to_geodetic(sol.position_ecef)
    return {
        "ecef_m": [sol.position_ecef.x, sol.position_ecef.y, sol.position_ecef.z],
        "lat_deg": math.degrees(g.latitude),
        "lon_deg": math.degrees(g.longitude),
        "height_m": g.height,
        "clock_bias_m": dict(sorted(sol.clock.biases.items())),
        "post_fit_rms_m": sol.post_fit_rms,
        "iterations": sol.iterations,
        "kept": kept,
        "rejected": rejected,
    }


def cmd_spp(args: argparse.Namespace) -> int:
    config = _config(args)
    observations = io.read_observations(args.observations)
    by_time: dict[float, list] = defaultdict(list)
    for o in observations:
        by_time[o.epoch_time].append(o)
    if not by_time:
        raise Underdetermined("observation file is empty")
    if args.filter == "sky":
        _require(args, ("image", "calibration", "anchor", "poses"), "--filter sky")
        if len(by_time) > 1:
            raise CliError("--filter sky takes a single epoch (one image)", EXIT_PARSE)
    epochs = []
    for t in sorted(by_time):
        obs = by_time[t]
        if args.filter == "sky":
            intr, _ = io.read_calibration(args.calibration)
            mask, _ = config.segment(io.read_gray(args.image))
            chain, anchor = _chain_for(args, config, t)
            filtered = nlos.filter_epoch(obs, chain, anchor, intr, mask, config.nlos)
            sol = gnss.spp_solve([k.obs for k in filtered.kept],
                                 [k.pseudorange_variance for k in filtered.kept])
            kept, rejected = len(filtered.kept), len(filtered.rejected)
        else:
            cutoff = config.elevation_cutoff if args.filter == "elevation" else 0.0
            sol, used = gnss.spp_weighted(obs, cutoff=cutoff)
            kept, rejected = len(used), len(obs) - len(used)
        epochs.append({"epoch_time": t, "filter": args.filter, **_solution_report(sol, kept, rejected)})
    text = _dump_json(Path(args.out) if args.out else None, {"epochs": epochs})
    sys.stdout.write(text)
    return EXIT_OK


def _bench_pairs(root: Path) -> list[tuple[Path, Path]]:
    images = {p.name: p for p in sorted((root / "images").glob("*.png"))}
    masks = {p.name: p for p in sorted((root / "masks").glob("*.png"))}
    unpaired = sorted(set(images) ^ set(masks))
    if unpaired:
        raise CliError(f"unpaired files in {root}: {', '.join(unpaired)}", EXIT_PARSE)
    if not images:
        raise CliError(f"no images under {root / 'images'}", EXIT_PARSE)
    return [(images[n], masks[n]) for n in sorted(images)]


def bench_segmentation(pairs, config: RunConfig) -> dict[str, tuple[float, float]]:
    """Mean IoU and mean wall time per method over (image, truth mask) arrays."""
    results = {}
    for label, method in (("OTSU", "otsu"), ("Local", "local")):
        cfg = replace(config, segmenter=method)
        ious, times = [], []
        for gray, truth in pairs:
            t0 = time.perf_counter()
            mask, _ = cfg.segment(gray)
            times.append(time.perf_counter() - t0)
            ious.append(skyseg.iou(mask, truth))
        results[label] = (float(np.mean(ious)), float(np.mean(times)))
    return results


def cmd_bench_seg(args: argparse.Namespace) -> int:
    config = _config(args)
    pairs = [(io.read_gray(i), io.read_mask(m)) for i, m in _bench_pairs(Path(args.dataset))]
    results = bench_segmentation(pairs, config)
    print(f"{'Method':<8}{'IoU (%)':>12}{'Time (s)':>12}")
    for label, (mean_iou, mean_t) in results.items():
        print(f"{label:<8}{100 * mean_iou:>12.4f}{mean_t:>12.4f}")
    return EXIT_OK


def _scene(args: argparse.Namespace) -> synth.SceneSpec:
    if args.scene:
        return io.read_scene(args.scene)
    return pipeline.default_scene(args.seed)


def cmd_synth(args: argparse.Namespace) -> int:
    out = Path(args.out)
    if args.bench:
        (out / "images").mkdir(parents=True, exist_ok=True)
        (out / "masks").mkdir(parents=True, exist_ok=True)
        for i in range(args.bench):
            scene = synth.random_scene(args.seed * 100003 + i, pixel_sigma=args.pixel_sigma)
            image, truth = synth.render(scene)
            io.write_gray(out / "images" / f"scene_{i:04d}.png", image)
            io.write_mask(out / "masks" / f"scene_{i:04d}.png", truth.mask)
        print(f"wrote {args.bench} image/mask pairs under {out}")
        return EXIT_OK

    scene = _scene(args)
    out.mkdir(parents=True, exist_ok=True)
    truth = synth.epoch_truth(scene)
    batch = synth.forward_model(scene, truth)
    mask = synth.sky_mask(scene)
    io.write_mask(out / "truth_mask.png", mask)
    for e, (t, obs) in enumerate(batch.epochs):
        io.write_gray(out / f"image_{e:03d}.png", synth.render_epoch(scene, e, mask))
        io.write_observations(out / f"observations_{e:03d}.csv", obs)
    io.write_observations(out / "observations.csv", [o for _, obs in batch.epochs for o in obs])
    io.write_calibration(out / "calibration.txt", scene.intrinsics, scene.chain.r_sky_to_body)
    io.write_anchor(out / "anchor.csv", scene.anchor, scene.chain.yaw_offset)
    io.write_poses(out / "poses.csv", [(t, synth.pose_at(scene, truth, e).body_pose)
                                       for e, t in enumerate(truth.times)])
    with open(out / "visibility.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch_time", "sat_id", "verdict"])
        for t, vis in zip(truth.times, truth.visibility):
            for sid in sorted(vis):
                w.writerow([repr(float(t)), sid, vis[sid].value])
    print(f"wrote {batch.size} epochs for seed {scene.seed} under {out}")
    return EXIT_OK


def _write_series(out: Path, trajectory: list[dict]) -> None:
    with open(out / "trajectory_xy.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["series", "time", "east_m", "north_m"])
        for r in trajectory:
            w.writerow([r["series"], repr(r["time"]), repr(r["east"]), repr(r["north"])])
    with open(out / "time_height.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["series", "time", "up_m"])
        for r in trajectory:
            w.writerow([r["series"], repr(r["time"]), repr(r["up"])])


def _plot(out: Path, trajectory: list[dict]) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    series = sorted({r["series"] for r in trajectory})
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    for s in series:
        rows = [r for r in trajectory if r["series"] == s]
        ax1.plot([r["east"] for r in rows], [r["north"] for r in rows], marker=".", label=s)
        ax2.plot([r["time"] for r in rows], [r["up"] for r in rows], marker=".", label=s)
    ax1.set_xlabel("east (m)")
    ax1.set_ylabel("north (m)")
    ax1.axis("equal")
    ax2.set_xlabel("time (s)")
    ax2.set_ylabel("up (m)")
    ax1.legend()
    fig.tight_layout()
    fig.savefig(out / "trajectory.png", dpi=100)
    plt.close(fig)


def cmd_pipeline(args: argparse.Namespace) -> int:
    config = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = pipeline.run_pipeline(_scene(args), config)
    _dump_json(out / "report.json", result.report)
    _write_series(out, result.trajectory)
    if args.plot:
        _plot(out, result.trajectory)
    r = result.report
    print(f"psi error {r['psi_error_deg']:.3f} deg, anchor error {r['refined_anchor_error_m']:.2f} m, "
          f"mean SPP error filtered {r['mean_filtered_error_m']:.2f} m "
          f"vs unfiltered {r['mean_unfiltered_error_m']:.2f} m")
    if "monte_carlo" in r:
        mc = r["monte_carlo"]
        print(f"monte carlo: filtered better in {100 * mc['filtered_better_fraction']:.1f}% "
              f"of {mc['trials']} trials")
    return EXIT_OK


# --- argument parsing -----------------------------------------------------------

def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    d = RunConfig()
    p.add_argument("--blur-kernel", type=int, default=d.blur_kernel)
    p.add_argument("--segmenter", choices=("otsu", "local"), default=d.segmenter)
    p.add_argument("--local-window", type=int, default=d.local_window)
    p.add_argument("--local-offset", type=float, default=d.local_offset)
    p.add_argument("--elevation-cutoff-deg", type=float, default=math.degrees(d.elevation_cutoff))
    p.add_argument("--timestamp-tolerance", type=float, default=d.timestamp_tolerance)
    p.add_argument("--trials", type=int, default=d.monte_carlo_trials,
                   help="Monte Carlo NLOS-benefit trials appended to the pipeline report")
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="skygnss", description="Sky-segmentation NLOS screening for GNSS")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("segment", parents=[common], help="segment sky images")
    p.add_argument("images", nargs="+", help="PNG files or directories of PNGs")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_segment)

    rig = argparse.ArgumentParser(add_help=False)
    rig.add_argument("--calibration")
    rig.add_argument("--anchor")
    rig.add_argument("--poses")

    p = sub.add_parser("classify", parents=[common, rig], help="LOS/NLOS verdict per satellite")
    p.add_argument("--image", required=True)
    p.add_argument("--observations", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("spp", parents=[common, rig], help="single point positioning")
    p.add_argument("--observations", required=True)
    p.add_argument("--filter", choices=("none", "sky", "elevation"), default="none")
    p.add_argument("--image")
    p.add_argument("--out")
    p.set_defaults(func=cmd_spp)

    p = sub.add_parser("bench-seg", parents=[common], help="segmentation benchmark table")
    p.add_argument("dataset", help="directory with images/ and masks/ holding same-named PNGs")
    p.set_defaults(func=cmd_bench_seg)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic dataset")
    p.add_argument("--scene")
    p.add_argument("--out", required=True)
    p.add_argument("--bench", type=int, default=0, help="write this many image/mask pairs instead")
    p.add_argument("--pixel-sigma", type=float, default=10.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pipeline", parents=[common], help="end-to-end run on a synthetic scene")
    p.add_argument("--scene")
    p.add_argument("--out", required=True)
    p.add_argument("--plot", action="store_true", help="also render trajectory.png")
    p.set_defaults(func=cmd_pipeline)
    return parser


def _exit_code(exc: Exception) -> int:
    if isinstance(exc, CliError):
        return exc.code
    if isinstance(exc, (io.ParseError, MixedEpochs)):
        return EXIT_PARSE
    if isinstance(exc, TimestampMismatch):
        return EXIT_SYNC
    if isinstance(exc, (Underdetermined, Unobservable)):
        return EXIT_UNDERDETERMINED
    if isinstance(exc, (Diverged, SingularGeometry, NoConvergence)):
        return EXIT_DIVERGED
    raise exc


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # mapped to the exit-code contract, anything else re-raised
        code = _exit_code(exc)
        print(f"skygnss: error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
