"""Synthetic measurement campaigns.

A target walks a piecewise-linear path through the scenario. At every step
each ordered (tx, rx) gNB pair yields one bistatic range and one AoA bearing.
Ranges go to the closest scatter point of an extended target and are then
corrupted by an epsilon-contaminated Gaussian (inliers N(0, sigma), outliers
biased by extra path length); bearings are von Mises-Fisher draws around the
true receiver-to-centroid direction. Links whose line of sight crosses an
obstacle get a raised outlier probability.

The optional full-chain mode replaces the analytic range noise with the OFDM
front end (grid synthesis, clutter subtraction, periodogram peak) and the
bearing draw with MUSIC on simulated ULA snapshots.
"""

from __future__ import annotations

import enum
import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import ofdm
from .aoa import GridSearchConfig, IllConditionedFixError, aoa_ml_fix, observations_from
from .fusion import (CAUCHY_EFFICIENCY_CONSTANT, HUBER_EFFICIENCY_CONSTANT, ROUND_ROBIN, LinkBatch,
                     LossKind, RoundRobin, SingleTx, SolverConfig, gd_batch, irls_batch, scale_rows)
from .geometry import (BistaticMeasurement, MeasurementSet, Scenario, bistatic_range, norm3, unit_from,
                       vec3)
from .results import ResultRow

ESTIMATORS = ("cauchy", "l2", "huber", "irls", "aoa-only")


# --------------------------------------------------------------------------- models


@dataclass(frozen=True)
class NoiseModel:
    range_std_m: float = 0.15
    outlier_prob: float = 1 / 6
    outlier_bias_m: float = 3.0
    outlier_std_m: float = 1.0
    aoa_kappa: float = 200.0
    # outlier probability for links whose line of sight crosses an obstacle
    blocked_outlier_prob: float = 0.5

    def __post_init__(self):
        for name in ("outlier_prob", "blocked_outlier_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.range_std_m < 0 or self.outlier_std_m < 0 or self.aoa_kappa < 0:
            raise ValueError("standard deviations and kappa must be >= 0")


class Selection(str, enum.Enum):
    CLOSEST = "closest"
    STRONGEST_RANDOM = "strongest_random"


def human_scatter_points() -> np.ndarray:
    """17 offsets (m) on a 1.7 m x 0.5 m vertical capsule around the body centroid."""
    return np.array([
        [0.00, 0.00, 0.80],    # head
        [-0.20, 0.00, 0.50], [0.20, 0.00, 0.50],    # shoulders
        [-0.25, 0.00, 0.20], [0.25, 0.00, 0.20],    # elbows
        [-0.25, 0.05, -0.05], [0.25, 0.05, -0.05],  # hands
        [0.00, 0.12, 0.35],    # chest
        [0.00, 0.00, 0.00],    # pelvis
        [-0.10, 0.05, -0.45], [0.10, 0.05, -0.45],  # knees
        [-0.10, 0.08, -0.85], [0.10, 0.08, -0.85],  # feet
        [0.00, -0.12, 0.35], [0.00, -0.12, 0.00],   # back edge
        [-0.18, 0.00, 0.00], [0.18, 0.00, 0.00],    # hip edges
    ])


@dataclass(frozen=True)
class ExtendedTarget:
    centroid: np.ndarray
    scatter_points: np.ndarray = field(default_factory=human_scatter_points)
    selection: Selection = Selection.CLOSEST

    def __post_init__(self):
        object.__setattr__(self, "centroid", vec3(self.centroid))
        pts = np.asarray(self.scatter_points, float).reshape(-1, 3)
        if pts.shape[0] < 1:
            raise ValueError("need at least one scatter point")
        if np.any(np.linalg.norm(pts, axis=1) > 2.0):
            raise ValueError("scatter offsets must lie within 2 m of the centroid")
        object.__setattr__(self, "scatter_points", pts)
        object.__setattr__(self, "selection", Selection(self.selection))

    @classmethod
    def point(cls, centroid):
        return cls(centroid, np.zeros((1, 3)))

    def at(self, centroid) -> "ExtendedTarget":
        return replace(self, centroid=vec3(centroid))

    @property
    def points(self) -> np.ndarray:
        return self.centroid + self.scatter_points


def scatter_range(target: ExtendedTarget, tx, rx, rng=None) -> float:
    """Bistatic range to the scatter point picked by the target's selection rule."""
    pts = target.points
    lengths = norm3(pts - tx) + norm3(pts - rx)
    if target.selection is Selection.CLOSEST:
        return float(lengths.min())
    w = lengths ** -4.0
    i = rng.choice(len(lengths), p=w / w.sum())
    return float(lengths[i])


# --------------------------------------------------------------------------- sampling


def sample_vmf_direction(mean, kappa: float, rng) -> np.ndarray:
    """One draw from the von Mises-Fisher distribution on the 2-sphere.

    Uses the closed-form inverse CDF of the cosine to the mean direction,
    then a uniform azimuth around it. ``kappa == 0`` is the uniform sphere.
    """
    mu = vec3(mean)
    mu = mu / np.linalg.norm(mu)
    u, phi = rng.random(), 2.0 * np.pi * rng.random()
    if kappa == 0:
        w = 2.0 * u - 1.0
    else:
        w = 1.0 + np.log(u + (1.0 - u) * np.exp(-2.0 * kappa)) / kappa
    w = min(max(w, -1.0), 1.0)
    e1, e2 = _tangent_basis(mu)
    s = np.sqrt(max(0.0, 1.0 - w * w))
    v = w * mu + s * (np.cos(phi) * e1 + np.sin(phi) * e2)
    return v / np.linalg.norm(v)


def _cross(a, b):
    return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])


def _tangent_basis(mu):
    a = np.array([1.0, 0.0, 0.0]) if abs(mu[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = _cross(mu, a)
    e1 /= np.sqrt(e1 @ e1)
    return e1, _cross(mu, e1)


def generate_path(waypoints, step_m: float) -> list[np.ndarray]:
    """Resample a polyline at uniform arc-length steps, both endpoints included."""
    pts = [vec3(w) for w in waypoints]
    if len(pts) < 2:
        raise ValueError("need at least 2 waypoints")
    if not step_m > 0:
        raise ValueError("step_m must be > 0")
    seg = np.array([np.linalg.norm(b - a) for a, b in zip(pts[:-1], pts[1:])])
    total = float(seg.sum())
    if total == 0.0:
        raise ValueError("path has zero length")
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    n = int(np.floor(total / step_m + 1e-9))
    s = step_m * np.arange(n + 1)
    if total - s[-1] > 1e-9 * max(total, 1.0):
        s = np.append(s, total)
    else:
        s[-1] = total
    out = []
    for si in s:
        i = min(int(np.searchsorted(cum, si, side="right")) - 1, len(seg) - 1)
        while i > 0 and seg[i] == 0.0:
            i -= 1
        t = 0.0 if seg[i] == 0.0 else (si - cum[i]) / seg[i]
        t = min(max(t, 0.0), 1.0)
        out.append(pts[i] + t * (pts[i + 1] - pts[i]))
    return out


# --------------------------------------------------------------------------- links


@dataclass(frozen=True)
class FullChainConfig:
    """Settings for routing ranging through the OFDM front end."""

    ofdm: ofdm.OfdmConfig = ofdm.OfdmConfig(n_subcarriers=256, n_symbols=8, fft_range=1024, fft_doppler=8)
    snr_db: float = 20.0
    clutter_gain: float = 2.0
    clutter_leakage: float = 0.0
    n_snapshots: int = 32
    refine: bool = False


def link_pairs(scenario: Scenario, mode=ROUND_ROBIN) -> list[tuple[int, int]]:
    ids = [g.id for g in scenario.gnbs]
    if isinstance(mode, SingleTx):
        if mode.tx_id not in ids:
            raise KeyError(mode.tx_id)
        return [(mode.tx_id, j) for j in ids if j != mode.tx_id]
    return [(k, j) for k in ids for j in ids if j != k]


def _blocked(scenario: Scenario, tx, target, rx) -> bool:
    return any(b.segment_intersects(tx, target) or b.segment_intersects(target, rx)
               for b in scenario.obstacles)


def measure_links(scenario: Scenario, target: ExtendedTarget, noise: NoiseModel, mode=ROUND_ROBIN,
                  rng_seed=None, full_chain: FullChainConfig | None = None,
                  planar_height: float | None = None) -> MeasurementSet:
    """One measurement per link of ``mode``; deterministic for a given seed or generator.

    Every link consumes the same number of random draws regardless of the
    noise settings, so toggling a noise source does not reshuffle the others.
    """
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    out = []
    for k, j in link_pairs(scenario, mode):
        tx, rx = scenario.gnb(k).position, scenario.gnb(j).position
        blocked = _blocked(scenario, tx, target.centroid, rx)
        eps = max(noise.outlier_prob, noise.blocked_outlier_prob) if blocked else noise.outlier_prob
        u_out, z = rng.random(), rng.standard_normal()
        true_dir = unit_from(rx, target.centroid)
        if full_chain is None:
            d = scatter_range(target, tx, rx, rng)
            if u_out < eps:
                d += noise.outlier_bias_m + noise.outlier_std_m * z
            else:
                d += noise.range_std_m * z
            u_hat = sample_vmf_direction(true_dir, noise.aoa_kappa, rng)
        else:
            d = _full_chain_range(scenario, target, tx, rx, full_chain, rng)
            u_hat = _full_chain_bearing(scenario.gnb(j), tx, target, d, full_chain, rng,
                                        planar_height if planar_height is not None else target.centroid[2])
        out.append(BistaticMeasurement(k, j, max(float(d), 0.0), u_hat, noise.aoa_kappa))
    return MeasurementSet(tuple(out))


def link_paths(scenario: Scenario, target: ExtendedTarget | None, tx, rx, fc: FullChainConfig, rng):
    """(target paths, clutter paths) for one link; gains fall off with path length squared."""
    ref = 10.0
    tpaths, cpaths = [], []
    if target is not None:
        for p in target.points:
            length = bistatic_range(tx, rx, p)
            phase = np.exp(2j * np.pi * rng.random())
            tpaths.append(ofdm.PathComponent((ref / length) ** 2 * phase, length / ofdm.C0))
    for b in scenario.obstacles:
        c = b.position + 0.5 * b.extent
        length = bistatic_range(tx, rx, c)
        cpaths.append(ofdm.PathComponent(fc.clutter_gain * (ref / length) ** 2, length / ofdm.C0))
    return tpaths, cpaths


def _full_chain_range(scenario, target, tx, rx, fc: FullChainConfig, rng) -> float:
    tpaths, cpaths = link_paths(scenario, target, tx, rx, fc, rng)
    noise_std = 10 ** (-fc.snr_db / 20) / np.sqrt(2)
    seeds = rng.integers(0, 2**63, size=2)
    grid = ofdm.synthesize_grid(tpaths + cpaths, fc.ofdm, noise_std, seeds[0])
    leak = [replace(p, gain=p.gain * (1.0 - fc.clutter_leakage)) for p in cpaths]
    background = ofdm.synthesize_grid(leak, fc.ofdm, noise_std, seeds[1])
    clean = ofdm.clutter_subtract(grid, background)
    return ofdm.extract_range(ofdm.periodogram(clean), refine=fc.refine).range_m


def _full_chain_bearing(node, tx, target: ExtendedTarget, range_m, fc: FullChainConfig, rng, height):
    rx = node.position
    d = target.centroid - rx
    az = np.arctan2(d[1], d[0])
    rel = np.angle(np.exp(1j * (az - node.boresight_azimuth)))
    snaps = ofdm.ula_snapshots([rel], node.array_elements, node.array_spacing, fc.n_snapshots,
                               10 ** (-fc.snr_db / 20) / np.sqrt(2), rng.integers(0, 2**63))
    if node.array_elements > 1:
        rel_hat = ofdm.music_azimuth(snaps, node.array_spacing, 1)[0]
    else:
        rel_hat = 0.0
    return bearing_from_azimuth(rx, tx, node.boresight_azimuth + rel_hat, height, range_m)


def bearing_from_azimuth(rx, tx, azimuth, height, range_m) -> np.ndarray:
    """3-D unit vector from ``rx`` along ``azimuth`` to the point at ``height``
    whose bistatic range from ``tx`` best matches ``range_m``."""
    rx, tx = vec3(rx), vec3(tx)
    e = np.array([np.cos(azimuth), np.sin(azimuth), 0.0])

    def point(s):
        return np.array([rx[0] + s * e[0], rx[1] + s * e[1], height])

    def excess(s):
        return bistatic_range(tx, rx, point(s)) - range_m

    lo, hi = 0.0, 1.0
    if excess(lo) >= 0:
        hi = 0.0
    else:
        while excess(hi) < 0 and hi < 1e4:
            hi *= 2
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if excess(mid) < 0:
                lo = mid
            else:
                hi = mid
    p = point(hi)
    if np.linalg.norm(p - rx) == 0.0:
        return e
    return unit_from(rx, p)


# --------------------------------------------------------------------------- campaigns


@dataclass(frozen=True)
class CampaignConfig:
    estimators: tuple[str, ...] = ESTIMATORS
    # estimators additionally run from a uniform random initial guess
    random_init: tuple[str, ...] = ()
    solver: SolverConfig = SolverConfig()
    eta_multiplier: float = CAUCHY_EFFICIENCY_CONSTANT
    huber_multiplier: float = HUBER_EFFICIENCY_CONSTANT
    # IRLS limit cycles are common; cap its Gauss-Newton iterations separately
    irls_max_iterations: int = 100
    grid_resolution_m: float = 0.25
    step_m: float = 0.5
    trials: int = 1
    seed: int = 0
    threads: int = 1
    keep_measurements: bool = False
    full_chain: FullChainConfig | None = None

    def __post_init__(self):
        for e in self.estimators + self.random_init:
            if e not in ESTIMATORS:
                raise ValueError(f"unknown estimator {e!r}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")


@dataclass
class StepRecord:
    trial: int
    step: int
    truth: np.ndarray
    measurements: MeasurementSet | None
    init: np.ndarray
    init_ill_conditioned: bool


@dataclass
class CampaignResult:
    rows: list[ResultRow]
    steps: list[StepRecord]
    seed: int
    scenario_hash: str
    path: list[np.ndarray]

    def rows_for(self, tag: str) -> list[ResultRow]:
        return [r for r in self.rows if r.tag == tag]

    def errors(self, tag: str) -> np.ndarray:
        return np.array([r.error_m for r in self.rows_for(tag)])


def scenario_hash(scenario: Scenario) -> str:
    doc = {
        "gnbs": [[g.id, list(map(float, g.position)), g.array_elements, g.array_spacing,
                  g.boresight_azimuth] for g in scenario.gnbs],
        "room": [list(map(float, scenario.room_min)), list(map(float, scenario.room_max))],
        "rf": [scenario.carrier_hz, scenario.bandwidth_hz, scenario.tx_power_dbm],
        "waypoints": [list(map(float, w)) for w in scenario.waypoints],
        "obstacles": [[list(map(float, b.position)), list(map(float, b.extent))] for b in scenario.obstacles],
    }
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def run_campaign(scenario: Scenario, target: ExtendedTarget, noise: NoiseModel, cfg: CampaignConfig,
                 path: list | None = None) -> CampaignResult:
    """Run ``cfg.trials`` independent passes over the path.

    Trial ``t`` draws its measurements from ``default_rng(seed + t)`` and its
    random initial guesses from a separate stream, so results do not depend on
    which estimators are enabled, on thread count, or on execution order.
    """
    if path is None:
        path = generate_path(scenario.waypoints, cfg.step_m)
    trials = range(cfg.trials)
    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as ex:
            parts = list(ex.map(lambda t: _run_trial(scenario, target, noise, cfg, path, t), trials))
    else:
        parts = [_run_trial(scenario, target, noise, cfg, path, t) for t in trials]
    rows = [r for p in parts for r in p[0]]
    steps = [s for p in parts for s in p[1]]
    return CampaignResult(rows, steps, cfg.seed, scenario_hash(scenario), list(path))


def _run_trial(scenario, target, noise, cfg: CampaignConfig, path, trial):
    rng = np.random.default_rng(cfg.seed + trial)
    init_rng = np.random.default_rng([cfg.seed + trial, 1])
    solver = cfg.solver
    planar = solver.planar
    lo, hi = scenario.room_min, scenario.room_max
    sets, inits, ill = [], [], []
    for s, truth in enumerate(path):
        height = float(truth[2]) if planar else None
        mset = measure_links(scenario, target.at(truth), noise, solver.mode, rng, cfg.full_chain, height)
        grid = GridSearchConfig((lo, hi), cfg.grid_resolution_m, height)
        try:
            x0, bad = aoa_ml_fix(observations_from(mset, scenario), grid), False
        except IllConditionedFixError as exc:
            x0, bad = exc.fallback, True
        sets.append(mset)
        inits.append(x0)
        ill.append(bad)
    inits = np.array(inits)
    random_inits = init_rng.uniform(lo, hi, size=(len(path), 3))
    if planar:
        random_inits[:, 2] = [p[2] for p in path]
    batch = LinkBatch.from_sets(sets, scenario)
    truths = np.array(path)
    rows: list[ResultRow] = []
    bounds = (lo, hi)

    def emit(name, kind, x0, sol):
        for s in range(len(path)):
            failed = bool(sol.diverged[s] or (sol.singular is not None and sol.singular[s]))
            est = x0[s] if failed else sol.estimate[s]
            rows.append(ResultRow.make(trial, s, name, truths[s], est, sol.iterations[s],
                                       sol.converged[s] and not failed, kind, failed))

    for kind, names, x0 in (("aoa", cfg.estimators, inits), ("random", cfg.random_init, random_inits)):
        for name in names:
            if name == "aoa-only":
                for s in range(len(path)):
                    rows.append(ResultRow.make(trial, s, name, truths[s], x0[s], 0, not ill[s], kind, ill[s]))
                continue
            if name == "irls":
                irls_cfg = replace(solver, max_iterations=min(solver.max_iterations, cfg.irls_max_iterations))
                sol = irls_batch(batch, x0, irls_cfg, bounds, huber_constant=cfg.huber_multiplier)
            elif name == "l2":
                sol = gd_batch(batch, x0, LossKind.SQUARED_L2, np.ones(len(path)), solver, bounds)
            elif name == "huber":
                sol = gd_batch(batch, x0, LossKind.HUBER, scale_rows(batch, x0, cfg.huber_multiplier),
                               solver, bounds)
            else:
                sol = gd_batch(batch, x0, LossKind.CAUCHY, scale_rows(batch, x0, cfg.eta_multiplier),
                               solver, bounds)
            emit(name, kind, x0, sol)
    steps = [StepRecord(trial, s, truths[s], sets[s] if cfg.keep_measurements else None, inits[s], ill[s])
             for s in range(len(path))]
    return rows, steps


def mode_from_string(text: str):
    t = str(text).strip().lower()
    if t in ("rr", "round_robin", "roundrobin"):
        return ROUND_ROBIN
    if t.startswith("tx"):
        return SingleTx(int(t[2:]))
    raise ValueError(f"unknown mode {text!r}")


__all__ = [
    "NoiseModel", "Selection", "ExtendedTarget", "FullChainConfig", "CampaignConfig", "CampaignResult",
    "StepRecord", "generate_path", "measure_links", "run_campaign", "sample_vmf_direction",
    "scatter_range", "human_scatter_points", "link_pairs", "mode_from_string", "RoundRobin", "SingleTx",
]
