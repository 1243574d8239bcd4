"""Experiment drivers behind the command-line tool.

Each driver takes a loaded :class:`~mstatic.config.ScenarioConfig` and returns
plain data; writing files is left to :mod:`mstatic.cli`.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace

import numpy as np

from . import ofdm
from .config import ScenarioConfig
from .fusion import ROUND_ROBIN, SingleTx
from .geometry import bistatic_range
from .results import ResultRow, ks_statistic, rmse
from .sim import (ESTIMATORS, CampaignConfig, CampaignResult, FullChainConfig, generate_path, link_paths,
                  run_campaign)
from .tracking import track_path

SWEEP_PARAMS = ("alpha", "eta")


@dataclass(frozen=True)
class RunOptions:
    trials: int = 20
    seed: int = 0
    threads: int = 1
    planar: bool = False

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")


def campaign_config(cfg: ScenarioConfig, opts: RunOptions, **overrides) -> CampaignConfig:
    solver = cfg.solver
    if opts.planar and not solver.planar:
        solver = replace(solver, planar=True)
    kw = dict(cfg.campaign)
    kw.update(solver=solver, step_m=cfg.step_m, trials=opts.trials, seed=opts.seed, threads=opts.threads)
    kw.update(overrides)
    return CampaignConfig(**kw)


def run(cfg: ScenarioConfig, opts: RunOptions, **overrides) -> CampaignResult:
    return run_campaign(cfg.scenario, cfg.target, cfg.noise, campaign_config(cfg, opts, **overrides))


# --------------------------------------------------------------------------- compare


def compare(cfg: ScenarioConfig, opts: RunOptions, estimators=ESTIMATORS, random_init=("cauchy",)):
    """Campaign over ``estimators`` from the AoA fix, plus ``random_init`` from random guesses."""
    return run(cfg, opts, estimators=tuple(estimators), random_init=tuple(random_init))


# --------------------------------------------------------------------------- sweeps


def sweep_values(start: float, stop: float, steps: int) -> np.ndarray:
    if not (start > 0 and stop > start):
        raise ValueError("sweep needs 0 < from < to")
    if steps < 2:
        raise ValueError("sweep needs steps >= 2")
    return np.geomspace(start, stop, steps)


@dataclass(frozen=True)
class SweepPoint:
    param_value: float
    rmse_m: float
    failure_rate: float


def sweep(cfg: ScenarioConfig, opts: RunOptions, param: str, values) -> list[SweepPoint]:
    """Cauchy campaign per value. ``alpha`` is the GD step size, ``eta`` the
    multiplier applied to the robust residual scale at the initial fix."""
    if param not in SWEEP_PARAMS:
        raise ValueError(f"unknown sweep parameter {param!r}")
    out = []
    for v in values:
        v = float(v)
        if param == "alpha":
            solver = replace(cfg.solver, step_size=v)
            res = run(replace(cfg, solver=solver), opts, estimators=("cauchy",), random_init=())
        else:
            res = run(cfg, opts, estimators=("cauchy",), random_init=(), eta_multiplier=v)
        rows = res.rows_for("cauchy")
        out.append(SweepPoint(v, rmse([r.error_m for r in rows]), float(np.mean([r.failed for r in rows]))))
    return out


# --------------------------------------------------------------------------- tx modes


def tx_modes(cfg: ScenarioConfig, opts: RunOptions) -> dict[str, list[ResultRow]]:
    """Squared-l2 rows per transmit mode: ``tx<k>`` for every gNB, then ``rr``."""
    modes = [SingleTx(g.id) for g in cfg.scenario.gnbs] + [ROUND_ROBIN]
    out = {}
    for mode in modes:
        c = replace(cfg, solver=replace(cfg.solver, mode=mode))
        out[str(mode)] = run(c, opts, estimators=("l2",), random_init=()).rows
    return out


def max_pairwise_ks(errors: dict[str, np.ndarray]) -> float:
    keys = list(errors)
    if len(keys) < 2:
        return 0.0
    return max(ks_statistic(errors[a], errors[b]) for a, b in itertools.combinations(keys, 2))


# --------------------------------------------------------------------------- tracking


@dataclass(frozen=True)
class TrackRow:
    trial: int
    step: int
    true_xyz: tuple
    raw_xyz: tuple
    kf_xyz: tuple

    @property
    def raw_err(self) -> float:
        return float(np.linalg.norm(np.subtract(self.raw_xyz, self.true_xyz)))

    @property
    def kf_err(self) -> float:
        return float(np.linalg.norm(np.subtract(self.kf_xyz, self.true_xyz)))


def track(cfg: ScenarioConfig, opts: RunOptions, clutter: bool = True, estimator: str = "cauchy"):
    """Campaign with one estimator, then a Kalman filter over each trial's fixes.

    ``clutter=False`` drops the scenario's obstacles.
    """
    if estimator == "aoa-only" or estimator not in ESTIMATORS:
        raise ValueError(f"cannot track with estimator {estimator!r}")
    if not cfg.scenario.waypoints:
        raise ValueError("tracking needs a waypoint path")
    if not clutter:
        cfg = replace(cfg, scenario=replace(cfg.scenario, obstacles=()))
    res = run(cfg, opts, estimators=(estimator,), random_init=())
    by_trial: dict[int, list[ResultRow]] = {}
    for r in res.rows:
        by_trial.setdefault(r.trial, []).append(r)
    out = []
    for t in sorted(by_trial):
        rows = sorted(by_trial[t], key=lambda r: r.step)
        states = track_path([r.est_xyz for r in rows], cfg.kf)
        for r, s in zip(rows, states):
            out.append(TrackRow(t, r.step, r.true_xyz, r.est_xyz, tuple(map(float, s.position))))
    return out


def track_summary(rows: list[TrackRow], settle_steps: int = 3) -> dict:
    late = [r for r in rows if r.step >= settle_steps]
    return {
        "raw_rmse_m": rmse([r.raw_err for r in rows]),
        "kf_rmse_m": rmse([r.kf_err for r in rows]),
        "raw_rmse_settled_m": rmse([r.raw_err for r in late]) if late else None,
        "kf_rmse_settled_m": rmse([r.kf_err for r in late]) if late else None,
        "settle_steps": settle_steps,
        "count": len(rows),
    }


# --------------------------------------------------------------------------- front end


@dataclass(frozen=True)
class FrontendResult:
    periodogram: ofdm.Periodogram
    true_range_m: float
    estimate: ofdm.RangeEstimate
    clutter_removed: bool

    def as_dict(self) -> dict:
        return {
            "true_range_m": self.true_range_m,
            "estimated_range_m": self.estimate.range_m,
            "error_m": self.estimate.range_m - self.true_range_m,
            "range_bin_m": self.periodogram.config.range_bin_m,
            "peak_bin": list(self.estimate.peak_bin),
            "peak_value": self.estimate.peak_value,
            "clutter_removed": self.clutter_removed,
        }


def frontend_demo(cfg: ScenarioConfig, seed: int = 0, tx_id: int | None = None, rx_id: int | None = None,
                  snr_db: float = 20.0, remove_clutter: bool = True,
                  ofdm_config: ofdm.OfdmConfig = ofdm.OfdmConfig()) -> FrontendResult:
    """Grid synthesis, optional background subtraction and periodogram ranging on one link.

    The target sits at the first waypoint (or the target centroid without a path).
    """
    sc = cfg.scenario
    ids = [g.id for g in sc.gnbs]
    tx_id = ids[0] if tx_id is None else tx_id
    rx_id = ids[1] if rx_id is None else rx_id
    if tx_id == rx_id:
        raise ValueError("tx and rx must differ")
    ofdm_config.check_bandwidth(sc.bandwidth_hz)
    tx, rx = sc.gnb(tx_id).position, sc.gnb(rx_id).position
    where = sc.waypoints[0] if sc.waypoints else cfg.target.centroid
    target = cfg.target.at(where)
    rng = np.random.default_rng(seed)
    fc = FullChainConfig(ofdm=ofdm_config, snr_db=snr_db)
    tpaths, cpaths = link_paths(sc, target, tx, rx, fc, rng)
    noise_std = 10 ** (-snr_db / 20) / np.sqrt(2)
    seeds = rng.integers(0, 2**63, size=2)
    grid = ofdm.synthesize_grid(tpaths + cpaths, ofdm_config, noise_std, seeds[0])
    if remove_clutter:
        grid = ofdm.clutter_subtract(grid, ofdm.synthesize_grid(cpaths, ofdm_config, noise_std, seeds[1]))
    p = ofdm.periodogram(grid)
    lengths = [bistatic_range(tx, rx, q) for q in target.points]
    return FrontendResult(p, float(min(lengths)), ofdm.extract_range(p), remove_clutter)


def path_length(cfg: ScenarioConfig) -> int:
    return len(generate_path(cfg.scenario.waypoints, cfg.step_m))
