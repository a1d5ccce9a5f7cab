"""Closed-loop simulation of the whole localization pipeline.

Ground truth is propagated with the velocity motion model. Each step the
true increment is re-corrupted with the odometry model to produce the
odometry the robot sees. Land navigation and the particle filter only ever
consume odometry and sensor bits.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import particle_filter as pf
from . import wall_follower as wf
from .config import SimConfig, dumps
from .geometry import (
    PolygonMap,
    boundary_arclength,
    boundary_distances,
    load_map,
    point_in_map,
    wrap_angle,
)
from .land_nav import LandNavigator
from .motion import (
    Pose,
    VelocityCommand,
    odometry_increment,
    sample_odometry_motion,
    sample_velocity_motion,
    sensor_position,
)
from .sensing import BinarySensorConfig, measure

log = logging.getLogger(__name__)

MODES = ("follow", "match", "search")
CAMPAIGN_MODE = {"wall-sweep": "follow", "landnav-hist": "match", "search-hist": "search"}
STABILITY_THRESHOLD = 0.3


class IncompleteLoop(ValueError):
    """The trial never completed a loop along the boundary."""


@dataclass
class TrialRecord:
    seed: int
    mode: str
    start: Pose
    steps: int = 0
    t_end: float = 0.0
    # wall following
    t_contact: float | None = None
    loop_completed: bool = False
    loop_duration: float | None = None
    loop_sensor: np.ndarray | None = field(default=None, repr=False)
    loop_return_distance: float | None = None
    mse: float | None = None
    v_mean: float | None = None
    # land navigation
    t_estimate: float | None = None
    estimate: tuple | None = None  # (x, y, phi)
    vertex: int | None = None
    c_err: float | None = None
    landnav_dx: float | None = None
    landnav_dphi: float | None = None
    dp_events: list = field(default_factory=list, repr=False)
    # systematic search
    converged: bool = False
    t_converged: float | None = None
    pf_estimate: tuple | None = None
    pf_dx: float | None = None
    pf_dphi: float | None = None
    restarts: int = 0  # lost-boundary watchdog restarts
    pf_restarts: int = 0
    excursion_final_dx: float | None = None
    excursion_spread: list = field(default_factory=list, repr=False)
    # optional full traces: rows of (t, x, y, phi, xo, yo, phio, s)
    trace: list | None = field(default=None, repr=False)

    @property
    def failed(self) -> bool:
        if self.mode == "follow":
            return not self.loop_completed
        if self.mode == "match":
            return self.estimate is None
        return not self.converged or self.pf_dx is None or self.pf_dx >= STABILITY_THRESHOLD

    @property
    def dx(self) -> float | None:
        return self.pf_dx if self.mode == "search" else self.landnav_dx

    @property
    def dphi(self) -> float | None:
        return self.pf_dphi if self.mode == "search" else self.landnav_dphi


@lru_cache(maxsize=16)
def _cached_map(name: str) -> PolygonMap:
    return load_map(name)


def resolve_map(cfg: SimConfig) -> PolygonMap:
    return _cached_map(cfg.map)


def random_start(m: PolygonMap, rng) -> Pose:
    """Uniform interior position by rejection sampling, uniform heading."""
    lo = m.vertices.min(axis=0)
    hi = m.vertices.max(axis=0)
    while True:
        u = rng.random(3)
        p = lo + u[:2] * (hi - lo)
        if point_in_map(m, p):
            return Pose(float(p[0]), float(p[1]), float(wrap_angle(2.0 * math.pi * u[2])))


def trial_seed(master_seed: int, index: int) -> int:
    return int(master_seed) ^ int(index)


class World:
    """Ground truth and odometry of one simulated robot, plus its sensor."""

    def __init__(self, cfg: SimConfig, m: PolygonMap, rng, start: Pose, keep_trace: bool = False):
        self.cfg = cfg
        self.map = m
        self.rng = rng
        self.true = start
        self.odom = start
        self.t = 0.0
        self.steps = 0
        self.trace = [] if keep_trace else None

    def sensor(self) -> tuple[float, float]:
        return sensor_position(self.true, self.cfg.lever_arm)

    def read(self) -> int:
        return measure(self.map, self.sensor(), self.cfg.sensor, self.rng)

    def move(self, cmd: VelocityCommand) -> tuple[float, float, float]:
        """Apply ``cmd`` for one step; return the odometry increment."""
        new_true = sample_velocity_motion(self.true, cmd, self.cfg.dt, self.cfg.motion, self.rng)
        new_odom = sample_odometry_motion(self.odom, self.true, new_true, self.cfg.motion, self.rng)
        inc = odometry_increment(self.odom, new_odom)
        self.true, self.odom = new_true, new_odom
        self.t = (self.steps + 1) * self.cfg.dt
        self.steps += 1
        return inc

    def log(self, s: int) -> None:
        if self.trace is not None:
            self.trace.append((self.t, *self.true, *self.odom, s))


class Driver:
    """Wall follower plus the lost-boundary watchdog that restarts it."""

    def __init__(self, cfg: SimConfig):
        self.params = cfg.wall_follower
        window = int(round(self.params.watchdog_window * cfg.f))
        self.watchdog = wf.BoundaryWatchdog(window, self.params.watchdog_level)
        self.state = wf.initial_state()
        self.restarts = 0

    @property
    def following(self) -> bool:
        return self.state.mode == wf.Mode.FOLLOW

    def restart(self) -> None:
        self.state = wf.initial_state()
        self.watchdog.reset()

    def step(self, s: int) -> tuple[VelocityCommand, bool]:
        """Controller command for reading ``s``; flag True if it was restarted."""
        if self.watchdog.update(self.state, s):
            self.restarts += 1
            self.restart()
            self.state, cmd = wf.step(self.state, s, self.params)
            return cmd, True
        self.state, cmd = wf.step(self.state, s, self.params)
        return cmd, False


def _follow_loop(world: World, rec: TrialRecord) -> None:
    """Wall-follow until one full loop along the boundary is completed.

    The loop starts at the first true boundary crossing of the sensor while in
    follow mode and ends once the closest-boundary arclength has advanced by
    one circumference.
    """
    cfg, m = world.cfg, world.map
    U = m.circumference
    driver = Driver(cfg)
    sensor_pts: list[tuple[float, float]] = []
    progress = 0.0
    last_arc = None
    entry = None
    prev_inside = None
    while world.t < cfg.follow_timeout:
        sp = world.sensor()
        s = world.read()
        world.log(s)
        cmd, restarted = driver.step(s)
        if restarted:
            prev_inside = None
        if driver.following and entry is None:
            inside = point_in_map(m, sp)
            if prev_inside is not None and inside != prev_inside:
                entry = sp
                rec.t_contact = world.t
                last_arc = boundary_arclength(m, sp)
            prev_inside = inside
        if entry is not None:
            arc = boundary_arclength(m, sp)
            progress += (arc - last_arc + 0.5 * U) % U - 0.5 * U
            last_arc = arc
            sensor_pts.append(sp)
            if progress >= U:
                rec.loop_completed = True
                rec.loop_duration = world.t - rec.t_contact
                rec.loop_sensor = np.asarray(sensor_pts)
                rec.loop_return_distance = math.dist(sp, entry)
                break
        world.move(cmd)
    rec.restarts = driver.restarts
    if rec.loop_completed:
        rec.mse, rec.v_mean = wall_follow_metrics(rec, m)


def wall_follow_metrics(rec: TrialRecord, m: PolygonMap) -> tuple[float, float]:
    """Sensor-path MSE to the boundary and mean speed U / T for the first loop."""
    if not rec.loop_completed or rec.loop_sensor is None or not rec.loop_duration:
        raise IncompleteLoop("record holds no completed boundary loop")
    d = boundary_distances(m, rec.loop_sensor)
    return float(np.mean(d**2)), m.circumference / rec.loop_duration


def _pose_errors(true: Pose, est) -> tuple[float, float]:
    dx = math.hypot(true.x - est[0], true.y - est[1])
    return dx, abs(wrap_angle(true.phi - est[2]))


def _land_nav(world: World, driver: Driver, rec: TrialRecord, t_limit: float):
    """Follow the wall until the shape match yields an estimate."""
    cfg, m = world.cfg, world.map
    nav = None
    lost_at = None
    while world.t < t_limit:
        s = world.read()
        world.log(s)
        cmd, restarted = driver.step(s)
        world.move(cmd)
        if restarted and nav is not None:
            lost_at = world.odom[:2]
        if not driver.following:
            continue
        if lost_at is not None:
            # a short hop back onto the boundary keeps the DP path; a long
            # drive means the path so far was not on the boundary at all
            if math.dist(lost_at, world.odom[:2]) > cfg.resume_radius:
                nav = None
            lost_at = None
        if nav is None:
            nav = LandNavigator(m, cfg.land_nav, world.odom[:2])
            if rec.t_contact is None:
                rec.t_contact = world.t
            continue
        n_dps = len(nav.track.dps)
        est = nav.update(world.odom[:2])
        if world.trace is not None and len(nav.track.dps) != n_dps:
            rec.dp_events.append((world.t, *nav.track.dps[-1]))
        if est is not None:
            rec.t_estimate = world.t
            rec.estimate = (est.x_est[0], est.x_est[1], est.phi_est)
            rec.vertex = est.vertex_index
            rec.c_err = est.c_err
            rec.landnav_dx, rec.landnav_dphi = _pose_errors(world.true, rec.estimate)
            return est
    return None


def _filter_step(world: World, ps, s: int, inc) -> pf.ParticleSet:
    cfg = world.cfg
    # the bit was read at the pose the particles currently describe
    ps = pf.update_weights(ps, world.map, s, cfg.lever_arm, cfg.pf.w_hat)
    ps = pf.resample(ps, world.rng, cfg.pf.resample_ratio)
    return pf.predict(ps, inc, cfg.motion, world.rng)


def _systematic_search(world: World, driver: Driver, ps):
    """Keep wall following with the filter running until it converges."""
    cfg = world.cfg
    limit = cfg.pf.restart_timeout * world.map.circumference
    travelled = 0.0
    while travelled < limit:
        s = world.read()
        world.log(s)
        cmd, _ = driver.step(s)
        inc = world.move(cmd)
        travelled += abs(inc[1])
        ps = _filter_step(world, ps, s, inc)
        if pf.converged(ps, cfg.pf.sigma_phi_max):
            return ps, True
    return ps, False


def _goto(world: World, ps, target, rec: TrialRecord, max_time: float = 300.0):
    """Drive from the filter estimate straight to ``target`` (task phase)."""
    p = world.cfg.wall_follower
    t0 = world.t
    while world.t - t0 < max_time:
        est = pf.estimate(ps)
        dxy = (target[0] - est.x, target[1] - est.y)
        if math.hypot(*dxy) < 0.3:
            break
        err = wrap_angle(math.atan2(dxy[1], dxy[0]) - est.phi)
        omega = max(-p.omega0, min(p.omega0, 2.0 * err))
        v = p.v0 * max(0.0, math.cos(err))
        s = world.read()
        world.log(s)
        inc = world.move(VelocityCommand(v, omega))
        ps = _filter_step(world, ps, s, inc)
        rec.excursion_spread.append((world.t, "out", pf.position_spread(ps)))
    return ps


def _excursion(world: World, ps, rec: TrialRecord) -> None:
    """Leave the boundary for an interior waypoint, then relocalize on it."""
    cfg, m = world.cfg, world.map
    for _ in range(1000):
        target = random_start(m, world.rng)
        if boundary_distances(m, np.array([target[:2]]))[0] > 1.5:
            break
    rec.excursion_spread.append((world.t, "start", pf.position_spread(ps)))
    ps = _goto(world, ps, target[:2], rec)
    driver = Driver(cfg)
    t0 = world.t
    while world.t - t0 < cfg.follow_timeout:
        s = world.read()
        world.log(s)
        cmd, _ = driver.step(s)
        inc = world.move(cmd)
        ps = _filter_step(world, ps, s, inc)
        phase = "back" if driver.following else "return"
        rec.excursion_spread.append((world.t, phase, pf.position_spread(ps)))
        if driver.following and world.t - t0 > 60.0 and pf.converged(ps, cfg.pf.sigma_phi_max):
            break
    e = pf.estimate(ps)
    rec.excursion_final_dx = math.hypot(world.true.x - e.x, world.true.y - e.y)


def run_trial(cfg: SimConfig, seed: int, mode: str | None = None, keep_trace: bool = False) -> TrialRecord:
    """Run one seeded trial; fully deterministic given (cfg, seed, mode)."""
    mode = mode or CAMPAIGN_MODE[cfg.campaign]
    if mode not in MODES:
        raise ValueError(f"unknown trial mode {mode!r}")
    m = resolve_map(cfg)
    rng = np.random.default_rng(seed)
    start = random_start(m, rng)
    world = World(cfg, m, rng, start, keep_trace)
    rec = TrialRecord(seed=seed, mode=mode, start=start)

    if mode == "follow":
        _follow_loop(world, rec)
    else:
        driver = Driver(cfg)
        est = _land_nav(world, driver, rec, cfg.landnav_timeout)
        attempts = 0
        while mode == "search" and est is not None:
            dist = pf.SeedDistribution(rec.estimate, cfg.resolved_seed_stds())
            ps = pf.seed(dist, cfg.pf.n_particles, rng)
            ps, ok = _systematic_search(world, driver, ps)
            if ok:
                rec.converged = True
                rec.t_converged = world.t
                e = pf.estimate(ps)
                rec.pf_estimate = tuple(e)
                rec.pf_dx, rec.pf_dphi = _pose_errors(world.true, e)
                if cfg.task_excursion:
                    _excursion(world, ps, rec)
                break
            if attempts >= cfg.max_restarts:
                break
            attempts += 1
            rec.pf_restarts = attempts
            est = _land_nav(world, driver, rec, world.t + cfg.landnav_timeout)
        rec.restarts = driver.restarts

    rec.steps = world.steps
    rec.t_end = world.t
    rec.trace = world.trace
    return rec


# ---------------------------------------------------------------- campaigns

TRIAL_COLUMNS = (
    "seed", "dx", "dphi", "t_estimate", "converged", "mse", "v_mean",
    "trial", "mode", "failed", "noise", "a_mu", "a_v",
    "landnav_dx", "landnav_dphi", "c_err", "vertex", "t_converged",
    "loop_completed", "restarts", "pf_restarts", "t_end",
)  # fmt: skip
SWEEP_COLUMNS = (
    "noise", "a_mu", "a_v", "trials", "completed", "failures",
    "mse_mean", "mse_std", "v_mean_mean", "v_mean_std", "stability",
)  # fmt: skip
SUMMARY_COLUMNS = (
    "campaign", "map", "trials", "estimates", "converged", "failures",
    "mu_dx", "sd_dx", "mu_dphi", "sd_dphi", "mu_t_estimate",
    "landnav_mu_dx", "landnav_mu_dphi", "stability",
)  # fmt: skip
TRACE_COLUMNS = ("t", "x_true", "y_true", "phi_true", "x_odom", "y_odom", "phi_odom", "s")


@dataclass
class CampaignReport:
    cfg: SimConfig
    records: list  # TrialRecord, ordered by (cell, trial index)
    trial_rows: list  # dicts keyed by TRIAL_COLUMNS
    sweep_rows: list  # dicts keyed by SWEEP_COLUMNS (wall-sweep only)
    summary: dict  # keyed by SUMMARY_COLUMNS

    @property
    def failures(self) -> int:
        return sum(r.failed for r in self.records)

    @property
    def failure_fraction(self) -> float:
        return self.failures / max(len(self.records), 1)


def stability_fraction(records) -> float:
    """Share of trials whose final position error is below 0.3 m.

    For search trials this is the filter error, for match trials the
    land-navigation error. Follow trials have no pose estimate, so the RMS
    distance of the sensor to the boundary over the loop stands in for it.
    Trials without any error value count as unstable.
    """
    recs = list(records)
    if not recs:
        return float("nan")
    ok = 0
    for r in recs:
        err = math.sqrt(r.mse) if r.mode == "follow" and r.mse is not None else r.dx
        ok += err is not None and err < STABILITY_THRESHOLD
    return ok / len(recs)


def _campaign_jobs(cfg: SimConfig):
    """(cell key, trial index, trial config, seed) in deterministic order."""
    mode = CAMPAIGN_MODE[cfg.campaign]
    if cfg.campaign != "wall-sweep":
        for i in range(cfg.trials):
            yield None, i, cfg, trial_seed(cfg.seed, i), mode
        return
    for noise in cfg.sweep.noise:
        for a_mu in cfg.sweep.a_mu:
            for a_v in cfg.sweep.a_v:
                wf_params = replace(cfg.wall_follower, a_mu=a_mu, a_v=a_v)
                cell = replace(cfg, sensor=BinarySensorConfig(noise), wall_follower=wf_params)
                for i in range(cfg.trials):
                    # same seeds in every cell: common random numbers across the grid
                    yield (noise, a_mu, a_v), i, cell, trial_seed(cfg.seed, i), mode


def _run_job(job):
    _, _, cfg, seed, mode = job[:5]
    keep_trace = job[5] if len(job) > 5 else False
    rec = run_trial(cfg, seed, mode, keep_trace=keep_trace)
    rec.loop_sensor = None  # large and not needed after the metrics
    return rec


def _trial_row(rec: TrialRecord, idx: int, cfg: SimConfig) -> dict:
    return {
        "seed": rec.seed,
        "dx": rec.dx,
        "dphi": rec.dphi,
        "t_estimate": rec.t_estimate,
        "converged": rec.converged,
        "mse": rec.mse,
        "v_mean": rec.v_mean,
        "trial": idx,
        "mode": rec.mode,
        "failed": rec.failed,
        "noise": cfg.sensor.noise_factor,
        "a_mu": cfg.wall_follower.a_mu,
        "a_v": cfg.wall_follower.a_v,
        "landnav_dx": rec.landnav_dx,
        "landnav_dphi": rec.landnav_dphi,
        "c_err": rec.c_err,
        "vertex": rec.vertex,
        "t_converged": rec.t_converged,
        "loop_completed": rec.loop_completed,
        "restarts": rec.restarts,
        "pf_restarts": rec.pf_restarts,
        "t_end": rec.t_end,
    }


def _mean_std(vals) -> tuple[float | None, float | None]:
    v = [x for x in vals if x is not None]
    if not v:
        return None, None
    return float(np.mean(v)), float(np.std(v))


def _sweep_rows(jobs, records) -> list[dict]:
    cells: dict = {}
    for job, rec in zip(jobs, records):
        cells.setdefault(job[0], []).append(rec)
    rows = []
    for (noise, a_mu, a_v), recs in cells.items():
        mse_m, mse_s = _mean_std(r.mse for r in recs)
        v_m, v_s = _mean_std(r.v_mean for r in recs)
        rows.append(
            {
                "noise": noise,
                "a_mu": a_mu,
                "a_v": a_v,
                "trials": len(recs),
                "completed": sum(r.loop_completed for r in recs),
                "failures": sum(r.failed for r in recs),
                "mse_mean": mse_m,
                "mse_std": mse_s,
                "v_mean_mean": v_m,
                "v_mean_std": v_s,
                "stability": stability_fraction(recs),
            }
        )
    return rows


def _summary(cfg: SimConfig, records) -> dict:
    mu_dx, sd_dx = _mean_std(r.dx for r in records)
    mu_dphi, sd_dphi = _mean_std(r.dphi for r in records)
    ln_dx, _ = _mean_std(r.landnav_dx for r in records)
    ln_dphi, _ = _mean_std(r.landnav_dphi for r in records)
    t_est, _ = _mean_std(r.t_estimate for r in records)
    return {
        "campaign": cfg.campaign,
        "map": cfg.map,
        "trials": len(records),
        "estimates": sum(r.estimate is not None for r in records),
        "converged": sum(r.converged for r in records),
        "failures": sum(r.failed for r in records),
        "mu_dx": mu_dx,
        "sd_dx": sd_dx,
        "mu_dphi": mu_dphi,
        "sd_dphi": sd_dphi,
        "mu_t_estimate": t_est,
        "landnav_mu_dx": ln_dx,
        "landnav_mu_dphi": ln_dphi,
        "stability": stability_fraction(records),
    }


def run_campaign(cfg: SimConfig, workers: int = 1, keep_traces: bool = False) -> CampaignReport:
    """Run every trial of ``cfg.campaign`` and aggregate in trial order.

    Trials are independent; with ``workers > 1`` they run in a process pool,
    but results are always reduced in job order so the report does not depend
    on scheduling.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    jobs = [(*j, keep_traces) for j in _campaign_jobs(cfg)]
    if workers == 1 or len(jobs) == 1:
        records = [_run_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    trial_rows = [_trial_row(rec, j[1], j[2]) for j, rec in zip(jobs, records)]
    sweep_rows = _sweep_rows(jobs, records) if cfg.campaign == "wall-sweep" else []
    for i, rec in enumerate(records):
        log.debug("trial %d seed %d failed=%s dx=%s", i, rec.seed, rec.failed, rec.dx)
    return CampaignReport(cfg, records, trial_rows, sweep_rows, _summary(cfg, records))


def format_value(v) -> str:
    """Deterministic CSV cell text: repr for floats, empty for missing."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([format_value(row.get(c) if isinstance(row, dict) else v) for c, v in zip(columns, row)])


def write_trace(path, trace) -> None:
    write_csv(path, TRACE_COLUMNS, [tuple(r) for r in trace])


def write_manifest(path, cfg: SimConfig) -> None:
    with open(path, "w") as fh:
        fh.write("# fully resolved configuration; rerun with --config <this file>\n")
        fh.write(dumps(cfg))


def write_report(report: CampaignReport, out_dir) -> list:
    """Write manifest, trials.csv, summary.csv, sweep.csv and traces."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "manifest", out / "trials.csv", out / "summary.csv"]
    write_manifest(written[0], report.cfg)
    write_csv(written[1], TRIAL_COLUMNS, report.trial_rows)
    write_csv(written[2], SUMMARY_COLUMNS, [report.summary])
    if report.sweep_rows:
        written.append(out / "sweep.csv")
        write_csv(written[-1], SWEEP_COLUMNS, report.sweep_rows)
    seen = set()
    for rec in report.records:
        if rec.trace is not None and rec.seed not in seen:
            seen.add(rec.seed)
            written.append(out / f"trace_{rec.seed}.csv")
            write_trace(written[-1], rec.trace)
    return written
