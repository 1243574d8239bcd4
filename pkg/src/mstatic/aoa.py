"""Coarse position fix from angle-of-arrival bearings.

Each bearing is scored with the von Mises-Fisher log-likelihood
``kappa * dot(u_hat, unit(candidate - rx))``; the normalizing constant does
not depend on the candidate and is dropped. The fix is the maximizer of the
summed score over a uniform grid, optionally refined once on a finer local
grid.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .geometry import MeasurementSet, _lookup, unit_from, vec3


class IllConditionedFixError(RuntimeError):
    """Bearings do not intersect (all parallel, or fewer than two informative ones).

    ``fallback`` carries the ray-midpoint heuristic position.
    """

    def __init__(self, msg, fallback):
        super().__init__(msg)
        self.fallback = fallback


@dataclass(frozen=True)
class VmfObservation:
    rx_position: np.ndarray
    aoa_unit: np.ndarray
    kappa: float

    def __post_init__(self):
        object.__setattr__(self, "rx_position", vec3(self.rx_position))
        u = vec3(self.aoa_unit)
        if abs(np.linalg.norm(u) - 1.0) >= 1e-9:
            raise ValueError("aoa_unit must have unit norm")
        object.__setattr__(self, "aoa_unit", u)
        if not self.kappa >= 0:
            raise ValueError("kappa must be >= 0")


@dataclass(frozen=True)
class GridSearchConfig:
    bounds: tuple
    resolution_m: float = 0.25
    planar_height_m: float | None = None
    refine: bool = True

    def __post_init__(self):
        lo, hi = (vec3(b) for b in self.bounds)
        if not self.resolution_m > 0:
            raise ValueError("resolution_m must be > 0")
        if self.planar_height_m is None:
            if not np.all(lo < hi):
                raise ValueError("degenerate grid bounds")
        elif not np.all(lo[:2] < hi[:2]):
            raise ValueError("degenerate grid bounds")
        object.__setattr__(self, "bounds", (lo, hi))


def vmf_loglik(obs: VmfObservation, candidate) -> float:
    return float(obs.kappa * np.dot(obs.aoa_unit, unit_from(obs.rx_position, candidate)))


def observations_from(mset: MeasurementSet, gnbs) -> list[VmfObservation]:
    pos = _lookup(gnbs)
    return [VmfObservation(pos(m.rx_id), m.aoa_unit, m.kappa) for m in mset]


def _axis(lo, hi, res):
    n = int(np.floor((hi - lo) / res + 1e-9)) + 1
    return lo + res * np.arange(n)


def _scores(points, rx, u, kappa):
    # points (P, 3); rx, u (N, 3); kappa (N,)
    d = points[:, None, :] - rx[None, :, :]
    n = np.linalg.norm(d, axis=-1)
    coincident = np.any((n == 0.0) & (kappa > 0), axis=1)
    n = np.where(n == 0.0, 1.0, n)
    s = np.einsum("pnk,nk->pn", d, u) / n
    total = s @ kappa
    return np.where(coincident, -np.inf, total)


def _pick(points, scores, centroid, kappa_sum):
    best = np.max(scores)
    tol = 1e-12 * (kappa_sum + 1.0)
    tied = np.flatnonzero(scores >= best - tol)
    if tied.size == 1:
        return points[tied[0]]
    dist = np.linalg.norm(points[tied] - centroid, axis=1)
    # argmin returns the first (lexicographically smallest grid index) among equal distances
    return points[tied[np.argmin(dist)]]


def _grid_points(lo, hi, res, height):
    xs, ys = _axis(lo[0], hi[0], res), _axis(lo[1], hi[1], res)
    zs = np.array([height]) if height is not None else _axis(lo[2], hi[2], res)
    g = np.stack(np.meshgrid(xs, ys, zs, indexing="ij"), axis=-1)
    return g.reshape(-1, 3)


def aoa_ml_fix(observations, grid: GridSearchConfig) -> np.ndarray:
    """Grid maximizer of the summed VMF log-likelihood of ``observations``.

    Exact score ties go to the point nearest the centre of the search box.
    Raises :class:`IllConditionedFixError` (with a fallback position) when the
    bearings cannot produce a finite intersection.
    """
    obs = list(observations)
    lo, hi = grid.bounds
    centroid = 0.5 * (lo + hi)
    if grid.planar_height_m is not None:
        centroid[2] = grid.planar_height_m
    informative = [o for o in obs if o.kappa > 0]
    if _all_parallel(informative):
        fb = _ray_midpoint(informative, lo, hi, centroid, grid.planar_height_m)
        raise IllConditionedFixError(
            f"{len(informative)} informative bearing(s), no intersection", fb)
    rx = np.array([o.rx_position for o in obs])
    u = np.array([o.aoa_unit for o in obs])
    kappa = np.array([o.kappa for o in obs], float)
    ksum = float(kappa.sum())
    pts = _grid_points(lo, hi, grid.resolution_m, grid.planar_height_m)
    best = _pick(pts, _scores(pts, rx, u, kappa), centroid, ksum)
    if not grid.refine:
        return best
    fine = grid.resolution_m / 4.0
    off = fine * np.arange(-4, 5)
    zoff = np.zeros(1) if grid.planar_height_m is not None else off
    local = np.stack(np.meshgrid(best[0] + off, best[1] + off, best[2] + zoff, indexing="ij"), axis=-1)
    local = local.reshape(-1, 3)
    inside = np.all((local >= lo - 1e-12) & (local <= hi + 1e-12), axis=1)
    if grid.planar_height_m is not None:
        inside = np.all((local[:, :2] >= lo[:2] - 1e-12) & (local[:, :2] <= hi[:2] + 1e-12), axis=1)
    local = local[inside]
    return _pick(local, _scores(local, rx, u, kappa), centroid, ksum)


def _all_parallel(obs, tol=1e-9) -> bool:
    if len(obs) < 2:
        return True
    u0 = obs[0].aoa_unit
    return all(np.linalg.norm(np.cross(u0, o.aoa_unit)) < tol for o in obs[1:])


def _ray_midpoint(obs, lo, hi, centroid, height):
    if not obs:
        return centroid.copy()
    mids, w = [], []
    for o in obs:
        t_exit = _exit_distance(o.rx_position, o.aoa_unit, lo, hi)
        mids.append(o.rx_position + 0.5 * t_exit * o.aoa_unit)
        w.append(o.kappa)
    p = np.average(np.array(mids), axis=0, weights=np.array(w))
    if height is not None:
        p[2] = height
    return p


def _exit_distance(p, u, lo, hi):
    t = np.inf
    for ax in range(3):
        if u[ax] > 0:
            t = min(t, (hi[ax] - p[ax]) / u[ax])
        elif u[ax] < 0:
            t = min(t, (lo[ax] - p[ax]) / u[ax])
    return max(float(t), 0.0) if np.isfinite(t) else 0.0


def aoa_fix_or_fallback(observations, grid: GridSearchConfig) -> tuple[np.ndarray, bool]:
    """Like :func:`aoa_ml_fix` but returns ``(position, ill_conditioned)`` instead of raising."""
    try:
        return aoa_ml_fix(observations, grid), False
    except IllConditionedFixError as exc:
        warnings.warn(str(exc), RuntimeWarning, stacklevel=2)
        return exc.fallback, True
