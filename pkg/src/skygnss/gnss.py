"""Pseudorange / Doppler least-squares solvers used for GNSS-VI alignment.

Measurement models (no Sagnac, satellite clock or atmosphere terms):

    pseudorange = |p_sat - p_rcv| + clock_bias[constellation]
    range_rate  = k^T (v_sat - v_rcv) + clock_drift,   k = unit(p_sat - p_rcv)

All solvers share :func:`_damped_least_squares`, a Levenberg-Marquardt loop
with multiplicative damping (start 1e-3, x10 on a rejected step, /10 on an
accepted one).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import Diverged, SingularGeometry, Underdetermined, Unobservable
from .frames import d_rot_up, elevation_azimuth, rot_up
from .geodesy import AnchorPoint, EcefCoord, EnuCoord, ecef_to_geodetic, rotation_ecef_to_enu
from .nlos import CONSTELLATIONS, SatelliteObservation, doppler_variance, pseudorange_variance

SPP_MAX_ITER = 25
STEP_TOL = 1e-4
MAX_CONDITION = 1e12
MIN_SPEED = 0.1


@dataclass(frozen=True)
class ClockState:
    biases: dict[str, float]
    drift_rate: float = 0.0


@dataclass(frozen=True)
class SppSolution:
    position_ecef: EcefCoord
    clock: ClockState
    post_fit_rms: float
    iterations: int
    covariance: np.ndarray


@dataclass(frozen=True)
class EpochBatch:
    epochs: list[tuple[float, list[SatelliteObservation]]]

    def __post_init__(self):
        times = [t for t, _ in self.epochs]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("epoch times must be strictly increasing")
        if any(len(obs) == 0 for _, obs in self.epochs):
            raise ValueError("every epoch needs at least one observation")

    @property
    def size(self) -> int:
        return len(self.epochs)

    @classmethod
    def from_observations(cls, observations: Sequence[SatelliteObservation]) -> "EpochBatch":
        groups: dict[float, list[SatelliteObservation]] = {}
        for o in observations:
            groups.setdefault(o.epoch_time, []).append(o)
        return cls([(t, groups[t]) for t in sorted(groups)])


@dataclass(frozen=True)
class YawCalibration:
    psi: float
    drift_rate: float
    residual_rms: float
    iterations: int = 0


@dataclass(frozen=True)
class RefinedAnchor:
    anchor_ecef: EcefCoord
    per_epoch_biases: list[dict[str, float]]
    residual_rms: float
    cost: float
    initial_cost: float
    iterations: int = 0


def _wrap_pi(a: float) -> float:
    """Map an angle to (-pi, pi]."""
    a = math.fmod(a + math.pi, 2 * math.pi)
    if a <= 0:
        a += 2 * math.pi
    return a - math.pi


def _damped_least_squares(fn: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]],
                          x0: np.ndarray, *, step_tol: float, max_iter: int,
                          step_slice: slice = slice(None),
                          max_condition: Optional[float] = None) -> tuple[np.ndarray, int]:
    """Minimise ``|r(x)|^2`` where ``fn(x)`` returns whitened ``(r, dr/dx)``.

    Converged when the norm of ``step[step_slice]`` drops below ``step_tol``.
    """
    x = np.array(x0, dtype=float)
    r, jac = fn(x)
    cost = float(r @ r)
    lam = 1e-3
    for it in range(1, max_iter + 1):
        a = jac.T @ jac
        g = jac.T @ r
        if max_condition is not None and np.linalg.cond(a) > max_condition:
            raise SingularGeometry("normal matrix is too ill-conditioned")
        damped = a + lam * np.diag(np.diag(a))
        try:
            step = -np.linalg.solve(damped, g)
        except np.linalg.LinAlgError as exc:
            raise SingularGeometry("normal matrix is singular") from exc
        x_new = x + step
        r_new, jac_new = fn(x_new)
        cost_new = float(r_new @ r_new)
        small = float(np.linalg.norm(step[step_slice])) < step_tol
        if cost_new <= cost or not np.isfinite(cost):
            x, r, jac, cost = x_new, r_new, jac_new, cost_new
            lam = max(lam / 10.0, 1e-12)
            if small:
                return x, it
        else:
            lam *= 10.0
            if small:
                return x, it
    raise Diverged(f"no convergence after {max_iter} iterations")


def _bias_layout(observations: Sequence[SatelliteObservation]) -> list[str]:
    present = {o.constellation for o in observations}
    return [c for c in CONSTELLATIONS if c in present]


def spp_solve(observations: Sequence[SatelliteObservation],
              variances: Optional[Sequence[float]] = None,
              initial: Optional[EcefCoord] = None) -> SppSolution:
    """Weighted single-epoch position and per-constellation clock bias fix.

    ``variances`` default to ``n_si * n_p`` (no elevation term), which is the
    usual choice when no position is known yet.
    """
    obs = list(observations)
    consts = _bias_layout(obs)
    if len(obs) < 3 + len(consts):
        raise Underdetermined(f"{len(obs)} observations cannot fix 3 + {len(consts)} unknowns")
    if variances is None:
        variances = [o.n_si * o.n_p for o in obs]
    w = 1.0 / np.sqrt(np.asarray(variances, dtype=float))
    sats = np.array([o.pos_ecef.as_array() for o in obs])
    rho = np.array([o.pseudorange for o in obs])
    col = np.array([3 + consts.index(o.constellation) for o in obs])
    n = len(obs)

    def fn(x):
        d = sats - x[:3]
        rng = np.linalg.norm(d, axis=1)
        r = rho - rng - x[col]
        jac = np.zeros((n, 3 + len(consts)))
        jac[:, :3] = d / rng[:, None]
        jac[np.arange(n), col] = -1.0
        return r * w, jac * w[:, None]

    x0 = np.zeros(3 + len(consts))
    if initial is not None:
        x0[:3] = initial.as_array()
    x, iters = _damped_least_squares(fn, x0, step_tol=STEP_TOL, max_iter=SPP_MAX_ITER,
                                     step_slice=slice(0, 3), max_condition=MAX_CONDITION)
    rw, jw = fn(x)
    a = jw.T @ jw
    if np.linalg.cond(a) > MAX_CONDITION:
        raise SingularGeometry("normal matrix is too ill-conditioned")
    cov = np.linalg.inv(a)[:3, :3]
    cov = 0.5 * (cov + cov.T)
    raw = rw / w
    return SppSolution(
        position_ecef=EcefCoord.from_array(x[:3]),
        clock=ClockState({c: float(x[3 + i]) for i, c in enumerate(consts)}),
        post_fit_rms=float(np.sqrt(np.mean(raw * raw))),
        iterations=iters,
        covariance=cov,
    )


def elevations_from(position: EcefCoord, observations: Sequence[SatelliteObservation]) -> list[float]:
    """Satellite elevations seen from ``position``."""
    g = ecef_to_geodetic(position)
    r = rotation_ecef_to_enu(g)
    p = position.as_array()
    return [elevation_azimuth(EnuCoord.from_array(r @ (o.pos_ecef.as_array() - p))).elevation
            for o in observations]


def spp_weighted(observations: Sequence[SatelliteObservation], cutoff: float = 0.0,
                 initial: Optional[EcefCoord] = None) -> tuple[SppSolution, list[SatelliteObservation]]:
    """Two-pass SPP: an index-weighted fix, then a fix with elevation variances.

    Satellites at or below ``cutoff`` (and below the horizon) are dropped in the
    second pass.  Returns the solution and the observations it used.
    """
    first = spp_solve(observations, initial=initial)
    els = elevations_from(first.position_ecef, observations)
    used = [(o, e) for o, e in zip(observations, els) if e > 0 and e >= cutoff]
    obs = [o for o, _ in used]
    var = [pseudorange_variance(o, e) for o, e in used]
    return spp_solve(obs, var, initial=first.position_ecef), obs


def _speed_ok(velocities: np.ndarray) -> bool:
    return bool(np.any(np.hypot(velocities[:, 0], velocities[:, 1]) > MIN_SPEED))


def yaw_calibrate(batch: EpochBatch, vio_velocities, anchor: AnchorPoint,
                  max_iter: int = 50) -> YawCalibration:
    """Estimate the world-to-ENU yaw and a window-constant clock drift from Doppler.

    ``vio_velocities[k]`` is the body velocity in the world frame at epoch k.
    Line-of-sight vectors and elevations are taken from the coarse anchor.
    The drift is eliminated in closed form, leaving a 1-D damped Gauss-Newton
    problem in yaw, seeded from a 10-degree scan.
    """
    vel = np.asarray(vio_velocities, dtype=float).reshape(-1, 3)
    if len(vel) != batch.size:
        raise ValueError("need one velocity per epoch")
    if not _speed_ok(vel):
        raise Unobservable("yaw is unobservable without horizontal motion")
    p_anc = anchor.ecef.as_array()
    a_rows, v_rows, e0, wts = [], [], [], []
    for (_, obs), v in zip(batch.epochs, vel):
        for o in obs:
            d = o.pos_ecef.as_array() - p_anc
            kappa = d / np.linalg.norm(d)
            los_enu = anchor.r_e_to_n @ kappa
            el = math.asin(max(-1.0, min(1.0, los_enu[2])))
            if el <= 0:
                continue
            a_rows.append(los_enu)
            v_rows.append(v)
            e0.append(o.doppler_range_rate - kappa @ np.asarray(o.vel_ecef, dtype=float))
            wts.append(1.0 / doppler_variance(o, el))
    if not wts:
        raise Unobservable("no satellites above the horizon")
    a_rows, v_rows = np.array(a_rows), np.array(v_rows)
    e0, wts = np.array(e0), np.array(wts)
    wsum = wts.sum()

    def parts(psi):
        e = e0 + np.einsum("ij,jk,ik->i", a_rows, rot_up(psi), v_rows)
        de = np.einsum("ij,jk,ik->i", a_rows, d_rot_up(psi), v_rows)
        drift = float(wts @ e / wsum)
        r = e - drift
        dr = de - float(wts @ de / wsum)
        return r, dr, drift

    def cost(psi):
        r = parts(psi)[0]
        return float(wts @ (r * r))

    grid = np.deg2rad(np.arange(-180.0, 180.0, 10.0))
    psi = float(grid[int(np.argmin([cost(g) for g in grid]))])
    c = cost(psi)
    lam = 1e-3
    for it in range(1, max_iter + 1):
        r, dr, _ = parts(psi)
        hess = float(wts @ (dr * dr))
        grad = float(wts @ (dr * r))
        if hess <= 0:
            raise Unobservable("Doppler residual does not depend on yaw")
        step = -grad / (hess * (1.0 + lam))
        c_new = cost(psi + step)
        if c_new <= c:
            psi, c = psi + step, c_new
            lam = max(lam / 10.0, 1e-12)
        else:
            lam *= 10.0
        if abs(step) < 1e-12:
            break
    else:
        raise Diverged(f"yaw calibration did not converge in {max_iter} iterations")
    r, _, drift = parts(psi)
    return YawCalibration(_wrap_pi(psi), drift, float(np.sqrt(np.mean(r * r))), it)


def yaw_cost(batch: EpochBatch, vio_velocities, anchor: AnchorPoint, psi: float) -> float:
    """Weighted Doppler cost at ``psi`` with the drift set to its optimum."""
    vel = np.asarray(vio_velocities, dtype=float).reshape(-1, 3)
    p_anc = anchor.ecef.as_array()
    e, w = [], []
    for (_, obs), v in zip(batch.epochs, vel):
        r_w2e = anchor.r_n_to_e @ rot_up(psi)
        for o in obs:
            d = o.pos_ecef.as_array() - p_anc
            kappa = d / np.linalg.norm(d)
            el = math.asin(max(-1.0, min(1.0, (anchor.r_e_to_n @ kappa)[2])))
            if el <= 0:
                continue
            e.append(o.doppler_range_rate - kappa @ (np.asarray(o.vel_ecef) - r_w2e @ v))
            w.append(1.0 / doppler_variance(o, el))
    e, w = np.array(e), np.array(w)
    r = e - (w @ e) / w.sum()
    return float(w @ (r * r))


@dataclass
class _AnchorProblem:
    sats: np.ndarray
    rho: np.ndarray
    w: np.ndarray
    epoch: np.ndarray
    col: np.ndarray
    world: np.ndarray
    psi: float
    clock_pairs: list[tuple[int, int, float]]
    drift_dt: list[float]
    n_bias: int
    layout: list[dict[str, int]]

    def receivers(self, p: np.ndarray) -> np.ndarray:
        r_n2e = rotation_ecef_to_enu(ecef_to_geodetic(EcefCoord.from_array(p))).T
        return p + self.world @ (r_n2e @ rot_up(self.psi)).T

    def __call__(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        p = x[:3]
        rcv = self.receivers(p)[self.epoch]
        d = self.sats - rcv
        rng = np.linalg.norm(d, axis=1)
        n_obs = len(self.rho)
        r = np.empty(n_obs + len(self.clock_pairs))
        jac = np.zeros((len(r), 3 + self.n_bias))
        r[:n_obs] = (self.rho - rng - x[3 + self.col]) * self.w
        jac[:n_obs, :3] = d / rng[:, None] * self.w[:, None]
        jac[np.arange(n_obs), 3 + self.col] = -self.w
        for i, (cur, prev, sw) in enumerate(self.clock_pairs):
            r[n_obs + i] = sw * (x[3 + cur] - x[3 + prev] - self.drift_dt[i])
            jac[n_obs + i, 3 + cur] = sw
            jac[n_obs + i, 3 + prev] = -sw
        return r, jac


def _build_anchor_problem(batch: EpochBatch, coarse: AnchorPoint, world_positions,
                          psi: float, drift_rate: float, clock_psd: float) -> _AnchorProblem:
    world = np.asarray(world_positions, dtype=float).reshape(-1, 3)
    if len(world) != batch.size:
        raise ValueError("need one world position per epoch")
    # elevation weights are fixed from the coarse anchor so the cost is stationary
    r_w2e = coarse.r_n_to_e @ rot_up(psi)
    p0 = coarse.ecef.as_array()
    layout: list[dict[str, int]] = []
    sats, rho, w, ep, col = [], [], [], [], []
    n_bias = 0
    for k, ((_, obs), wp) in enumerate(zip(batch.epochs, world)):
        rcv = p0 + r_w2e @ wp
        idx: dict[str, int] = {}
        for o in obs:
            d = o.pos_ecef.as_array() - rcv
            el = math.asin(max(-1.0, min(1.0, (coarse.r_e_to_n @ d)[2] / np.linalg.norm(d))))
            if el <= 0:
                continue
            if o.constellation not in idx:
                idx[o.constellation] = n_bias
                n_bias += 1
            sats.append(o.pos_ecef.as_array())
            rho.append(o.pseudorange)
            w.append(1.0 / math.sqrt(pseudorange_variance(o, el)))
            ep.append(k)
            col.append(idx[o.constellation])
        layout.append(idx)
    pairs, drift_dt = [], []
    times = [t for t, _ in batch.epochs]
    for k in range(1, batch.size):
        dt = times[k] - times[k - 1]
        for c, cur in layout[k].items():
            if c in layout[k - 1]:
                pairs.append((cur, layout[k - 1][c], 1.0 / math.sqrt(clock_psd * dt)))
                drift_dt.append(drift_rate * dt)
    return _AnchorProblem(np.array(sats).reshape(-1, 3), np.array(rho), np.array(w),
                          np.array(ep, dtype=int), np.array(col, dtype=int), world, psi,
                          pairs, drift_dt, n_bias, layout)


def _initial_biases(prob: _AnchorProblem, p: np.ndarray) -> np.ndarray:
    rcv = prob.receivers(p)[prob.epoch]
    resid = prob.rho - np.linalg.norm(prob.sats - rcv, axis=1)
    w2 = prob.w ** 2
    b = np.zeros(prob.n_bias)
    for j in range(prob.n_bias):
        m = prob.col == j
        b[j] = (w2[m] @ resid[m]) / w2[m].sum()
    return b


def _cost(prob: _AnchorProblem, x: np.ndarray) -> float:
    r, _ = prob(x)
    return float(r @ r)


def refine_anchor(batch: EpochBatch, coarse: AnchorPoint, world_positions, psi: float,
                  drift_rate: float = 0.0, clock_psd: float = 0.01,
                  max_iter: int = 50) -> RefinedAnchor:
    """Refine the anchor ECEF position and per-epoch clock biases over a window.

    ``world_positions[k]`` is the receiver position in the world frame relative
    to the anchor at epoch k.  Consecutive biases of one constellation are tied
    by ``(b_k - b_{k-1}) - drift_rate * dt`` with variance ``clock_psd * dt``
    (default 0.01 m^2/s, i.e. (0.1 m)^2 per second).
    """
    prob = _build_anchor_problem(batch, coarse, world_positions, psi, drift_rate, clock_psd)
    n_res = len(prob.rho) + len(prob.clock_pairs)
    if n_res < 3 + prob.n_bias or len(prob.rho) == 0:
        raise Underdetermined(f"{n_res} residuals cannot fix {3 + prob.n_bias} unknowns")
    p0 = coarse.ecef.as_array()
    x0 = np.concatenate([p0, _initial_biases(prob, p0)])
    initial_cost = _cost(prob, x0)
    x, iters = _damped_least_squares(prob, x0, step_tol=STEP_TOL, max_iter=max_iter,
                                     step_slice=slice(0, 3))
    r, _ = prob(x)
    n_obs = len(prob.rho)
    w2 = prob.w ** 2
    raw = r[:n_obs] / prob.w
    biases = [{c: float(x[3 + j]) for c, j in idx.items()} for idx in prob.layout]
    return RefinedAnchor(
        anchor_ecef=EcefCoord.from_array(x[:3]),
        per_epoch_biases=biases,
        residual_rms=float(np.sqrt(w2 @ (raw * raw) / w2.sum())),
        cost=float(r @ r),
        initial_cost=initial_cost,
        iterations=iters,
    )
