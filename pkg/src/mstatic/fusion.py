"""Robust fusion of bistatic range measurements.

Losses (squared l2, Huber, Cauchy), the summed objective over a set of links,
its analytic gradient, a fixed-step gradient-descent solver and an IRLS
benchmark. The solvers work on batches of independent problems so that a
whole campaign trial can be advanced with a handful of array operations; the
single-problem entry points are thin wrappers over the batch path.

Gradient convention: with ``delta = d - |x - x_tx| - |x - x_rx|`` the gradient
of ``loss(delta)`` is ``influence(delta) * grad(delta)`` where
``grad(delta) = -(unit(x - x_tx) + unit(x - x_rx))``. Note the leading minus:
dropping it turns descent into ascent.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .geometry import MeasurementSet, link_arrays, vec3

# Tuning constants giving ~95% asymptotic efficiency under Gaussian noise.
CAUCHY_EFFICIENCY_CONSTANT = 2.3849
HUBER_EFFICIENCY_CONSTANT = 1.345

MAD_TO_SIGMA = 1.4826
# Lower bound on data-driven scales so noiseless data cannot produce a zero scale.
SCALE_FLOOR = 1e-6
# Candidate closer than this to a gNB makes that link's direction undefined.
SINGULAR_DISTANCE = 1e-9
DIVERGENCE_INFLATION = 10.0


class FusionError(RuntimeError):
    pass


class NoMeasurementsError(FusionError):
    pass


class SingularGeometryError(FusionError):
    pass


class DivergenceError(FusionError):
    def __init__(self, msg, result=None):
        super().__init__(msg)
        self.result = result


class RankError(FusionError):
    def __init__(self, msg, result=None):
        super().__init__(msg)
        self.result = result


class ZeroScaleError(ValueError):
    pass


class LossKind(str, enum.Enum):
    SQUARED_L2 = "l2"
    HUBER = "huber"
    CAUCHY = "cauchy"


@dataclass(frozen=True)
class LossSpec:
    kind: LossKind
    scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", LossKind(self.kind))
        if self.kind is not LossKind.SQUARED_L2 and not self.scale > 0:
            raise ValueError(f"{self.kind.value} loss needs scale > 0, got {self.scale}")

    @classmethod
    def l2(cls):
        return cls(LossKind.SQUARED_L2)

    @classmethod
    def huber(cls, c):
        return cls(LossKind.HUBER, c)

    @classmethod
    def cauchy(cls, eta):
        return cls(LossKind.CAUCHY, eta)


@dataclass(frozen=True)
class RoundRobin:
    """Every gNB transmits in turn; all K(K-1) links are fused."""

    def __str__(self):
        return "rr"


@dataclass(frozen=True)
class SingleTx:
    """Only links transmitted by ``tx_id`` are fused."""

    tx_id: int

    def __str__(self):
        return f"tx{self.tx_id}"


ROUND_ROBIN = RoundRobin()


@dataclass(frozen=True)
class SolverConfig:
    step_size: float = 1e-2
    tolerance: float = 1e-4
    max_iterations: int = 10_000
    mode: RoundRobin | SingleTx = ROUND_ROBIN
    # Freeze the z component of the iterate (floor-level evaluation).
    planar: bool = False
    # Armijo backtracking instead of the fixed step; off by default.
    line_search: bool = False

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("step_size must be > 0")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass(frozen=True)
class SolveResult:
    estimate: np.ndarray
    iterations: int
    converged: bool
    objective_value: float
    initial_guess: np.ndarray
    diverged: bool = False
    # Set when the iterate touched a gNB and a link direction was zeroed.
    degenerate: bool = False
    last_step: float = float("nan")
    weights: np.ndarray | None = field(default=None, repr=False)


# --------------------------------------------------------------------------- losses


def loss(spec: LossSpec, z):
    z = np.asarray(z, float)
    if spec.kind is LossKind.SQUARED_L2:
        out = z * z
    elif spec.kind is LossKind.HUBER:
        c = spec.scale
        a = np.abs(z)
        out = np.where(a <= c, 0.5 * z * z, c * a - 0.5 * c * c)
    else:
        eta = spec.scale
        out = 0.5 * eta * eta * np.log1p((z / eta) ** 2)
    return out if out.ndim else float(out)


def influence(spec: LossSpec, z):
    """Derivative of the loss with respect to the residual."""
    z = np.asarray(z, float)
    if spec.kind is LossKind.SQUARED_L2:
        out = 2.0 * z
    elif spec.kind is LossKind.HUBER:
        out = np.clip(z, -spec.scale, spec.scale)
    else:
        eta = spec.scale
        out = z / (1.0 + (z / eta) ** 2)
    return out if out.ndim else float(out)


def _loss_rows(kind: LossKind, scale, z):
    # scale: (B,) broadcast over the link axis
    s = np.asarray(scale, float)[:, None]
    if kind is LossKind.SQUARED_L2:
        return z * z
    if kind is LossKind.HUBER:
        a = np.abs(z)
        return np.where(a <= s, 0.5 * z * z, s * a - 0.5 * s * s)
    return 0.5 * s * s * np.log1p((z / s) ** 2)


def _influence_rows(kind: LossKind, scale, z):
    s = np.asarray(scale, float)[:, None]
    if kind is LossKind.SQUARED_L2:
        return 2.0 * z
    if kind is LossKind.HUBER:
        return np.clip(z, -s, s)
    return z / (1.0 + (z / s) ** 2)


# --------------------------------------------------------------------------- scale


def estimate_sigma(residuals) -> float:
    """Normalized median absolute deviation, a Gaussian-consistent robust scale."""
    r = np.asarray(residuals, float).ravel()
    if r.size < 2:
        raise ValueError("need at least 2 residuals")
    mad = np.median(np.abs(r - np.median(r)))
    if mad == 0.0:
        raise ZeroScaleError("residuals have zero spread")
    return float(MAD_TO_SIGMA * mad)


def _sigma_rows(delta, mask, floor=SCALE_FLOOR):
    r = np.where(mask, delta, np.nan)
    counts = mask.sum(axis=1)
    with np.errstate(all="ignore"):
        if np.all(mask):
            med = np.median(r, axis=1, keepdims=True)
            mad = np.median(np.abs(r - med), axis=1)
        else:
            med = np.nanmedian(r, axis=1, keepdims=True)
            mad = np.nanmedian(np.abs(r - med), axis=1)
    out = np.maximum(MAD_TO_SIGMA * np.nan_to_num(mad), floor)
    return np.where(counts < 2, floor, out)


# --------------------------------------------------------------------------- batches


@dataclass(frozen=True)
class LinkBatch:
    """B independent problems with up to L links each.

    ``tx``/``rx`` are (B, L, 3) positions, ``ranges`` (B, L); ``mask`` marks
    the links that exist (padding entries are ignored).
    """

    tx: np.ndarray
    rx: np.ndarray
    ranges: np.ndarray
    mask: np.ndarray

    @property
    def size(self) -> int:
        return self.ranges.shape[0]

    @classmethod
    def from_sets(cls, sets, gnbs, mode=ROUND_ROBIN) -> "LinkBatch":
        rows = [link_arrays(_select(s, mode), gnbs) for s in sets]
        b = len(rows)
        n = max((len(r[2]) for r in rows), default=0)
        tx = np.zeros((b, n, 3))
        rx = np.zeros((b, n, 3))
        d = np.zeros((b, n))
        mask = np.zeros((b, n), bool)
        for i, (t, r, dd) in enumerate(rows):
            k = len(dd)
            tx[i, :k], rx[i, :k], d[i, :k], mask[i, :k] = t, r, dd, True
            # Park padding links on the first real link's geometry to keep norms finite.
            if 0 < k < n:
                tx[i, k:], rx[i, k:] = t[0], r[0]
        return cls(tx, rx, d, mask)

    def residuals(self, x) -> np.ndarray:
        x = np.asarray(x, float)[:, None, :]
        r = np.linalg.norm(x - self.tx, axis=-1) + np.linalg.norm(x - self.rx, axis=-1)
        return np.where(self.mask, self.ranges - r, 0.0)


def _select(mset: MeasurementSet, mode) -> MeasurementSet:
    if isinstance(mode, SingleTx):
        return mset.select(mode.tx_id)
    return mset


def _objective_rows(batch: LinkBatch, x, kind, scale):
    delta = batch.residuals(x)
    return np.sum(np.where(batch.mask, _loss_rows(kind, scale, delta), 0.0), axis=1)


def _gradient_rows(batch: LinkBatch, x, kind, scale):
    """Gradient per row plus a flag for rows where a link direction was undefined."""
    x = np.asarray(x, float)
    a = x[:, None, :] - batch.tx
    b = x[:, None, :] - batch.rx
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    bad_a = na < SINGULAR_DISTANCE
    bad_b = nb < SINGULAR_DISTANCE
    ua = np.where(bad_a[..., None], 0.0, a / np.where(bad_a, 1.0, na)[..., None])
    ub = np.where(bad_b[..., None], 0.0, b / np.where(bad_b, 1.0, nb)[..., None])
    delta = np.where(batch.mask, batch.ranges - na - nb, 0.0)
    w = np.where(batch.mask, _influence_rows(kind, scale, delta), 0.0)
    grad = -np.sum(w[..., None] * (ua + ub), axis=1)
    degenerate = np.any((bad_a | bad_b) & batch.mask, axis=1)
    return grad, degenerate


# --------------------------------------------------------------------------- single-problem API


def objective(mset: MeasurementSet, gnbs, candidate, spec: LossSpec, mode=ROUND_ROBIN) -> float:
    """Sum of ``loss(residual)`` over the links selected by ``mode``."""
    sel = _select(mset, mode)
    if len(sel) == 0:
        raise NoMeasurementsError(f"no measurements selected for mode {mode}")
    batch = LinkBatch.from_sets([sel], gnbs)
    x = vec3(candidate)[None, :]
    return float(_objective_rows(batch, x, spec.kind, [spec.scale])[0])


def gradient(mset: MeasurementSet, gnbs, candidate, spec: LossSpec, mode=ROUND_ROBIN) -> np.ndarray:
    sel = _select(mset, mode)
    if len(sel) == 0:
        raise NoMeasurementsError(f"no measurements selected for mode {mode}")
    batch = LinkBatch.from_sets([sel], gnbs)
    x = vec3(candidate)[None, :]
    g, degenerate = _gradient_rows(batch, x, spec.kind, [spec.scale])
    if degenerate[0]:
        raise SingularGeometryError(f"candidate {x[0]} coincides with a gNB")
    return g[0]


# --------------------------------------------------------------------------- batch solvers


@dataclass
class BatchSolution:
    estimate: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    diverged: np.ndarray
    degenerate: np.ndarray
    objective: np.ndarray
    last_step: np.ndarray
    # IRLS only: final per-link weights and rank failures
    weights: np.ndarray | None = None
    singular: np.ndarray | None = None

    def result(self, i: int, init) -> SolveResult:
        return SolveResult(
            estimate=self.estimate[i].copy(),
            iterations=int(self.iterations[i]),
            converged=bool(self.converged[i]),
            objective_value=float(self.objective[i]),
            initial_guess=np.array(init[i], float),
            diverged=bool(self.diverged[i]),
            degenerate=bool(self.degenerate[i]),
            last_step=float(self.last_step[i]),
            weights=None if self.weights is None else self.weights[i].copy(),
        )


def _guard_box(bounds):
    if bounds is None:
        return None
    lo, hi = (np.asarray(v, float) for v in bounds)
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo) * DIVERGENCE_INFLATION
    return mid - half, mid + half


def _outside(x, box):
    if box is None:
        return np.zeros(x.shape[0], bool)
    lo, hi = box
    return np.any((x < lo) | (x > hi) | ~np.isfinite(x), axis=1)


def gd_batch(batch: LinkBatch, init, kind, scale, config: SolverConfig, bounds=None) -> BatchSolution:
    """Fixed-step gradient descent on every row of ``batch`` independently.

    Each row stops once its step length drops to ``config.tolerance``; rows
    leaving the bounding box inflated 10x are frozen at their last in-box
    iterate and flagged as diverged.
    """
    kind = LossKind(kind)
    x = np.array(init, float).reshape(-1, 3)
    nb = x.shape[0]
    scale = np.broadcast_to(np.asarray(scale, float), (nb,)).copy()
    iters = np.zeros(nb, int)
    converged = np.zeros(nb, bool)
    diverged = np.zeros(nb, bool)
    degenerate = np.zeros(nb, bool)
    last = np.full(nb, np.nan)
    active = np.ones(nb, bool)
    box = _guard_box(bounds)
    alpha = config.step_size
    for _ in range(config.max_iterations):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        sub = _take(batch, idx)
        xi = x[idx]
        g, deg = _gradient_rows(sub, xi, kind, scale[idx])
        if config.planar:
            g[:, 2] = 0.0
        degenerate[idx] |= deg
        if config.line_search:
            step = _armijo(sub, xi, g, kind, scale[idx], alpha)
        else:
            step = alpha * g
        x_new = xi - step
        iters[idx] += 1
        out = _outside(x_new, box)
        steplen = np.linalg.norm(x_new - xi, axis=1)
        last[idx] = steplen
        keep = ~out
        x[idx[keep]] = x_new[keep]
        diverged[idx[out]] = True
        done = keep & (steplen <= config.tolerance)
        converged[idx[done]] = True
        active[idx[out | done]] = False
    obj = _objective_rows(batch, x, kind, scale)
    return BatchSolution(x, iters, converged, diverged, degenerate, obj, last)


def _take(batch: LinkBatch, idx) -> LinkBatch:
    if idx.size == batch.size:
        return batch
    return LinkBatch(batch.tx[idx], batch.rx[idx], batch.ranges[idx], batch.mask[idx])


def _armijo(batch, x, g, kind, scale, alpha, shrink=0.5, c1=1e-4, max_halvings=40):
    f0 = _objective_rows(batch, x, kind, scale)
    gg = np.sum(g * g, axis=1)
    t = np.full(x.shape[0], alpha)
    pending = np.ones(x.shape[0], bool)
    for _ in range(max_halvings):
        f1 = _objective_rows(batch, x - t[:, None] * g, kind, scale)
        ok = f1 <= f0 - c1 * t * gg
        pending &= ~ok
        if not pending.any():
            break
        t = np.where(pending, t * shrink, t)
    return t[:, None] * g


def irls_batch(batch: LinkBatch, init, config: SolverConfig, bounds=None,
               weighting: str = "huber", huber_constant: float = HUBER_EFFICIENCY_CONSTANT) -> BatchSolution:
    """Iteratively reweighted least squares with Huber weights.

    Each iteration recomputes the robust scale from the current residuals,
    forms weights ``min(1, c / |delta|)`` with ``c = huber_constant * scale``
    and takes one Gauss-Newton step on the weighted residuals.
    ``weighting="unit"`` fixes all weights to 1 (plain Gauss-Newton).
    """
    x = np.array(init, float).reshape(-1, 3)
    nb = x.shape[0]
    dims = 2 if config.planar else 3
    iters = np.zeros(nb, int)
    converged = np.zeros(nb, bool)
    diverged = np.zeros(nb, bool)
    singular = np.zeros(nb, bool)
    degenerate = np.zeros(nb, bool)
    last = np.full(nb, np.nan)
    weights = np.where(batch.mask, 1.0, 0.0)
    active = np.ones(nb, bool)
    box = _guard_box(bounds)
    for _ in range(config.max_iterations):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        sub = _take(batch, idx)
        xi = x[idx]
        delta = sub.residuals(xi)
        w = _irls_weights(delta, sub.mask, weighting, huber_constant)
        weights[idx] = w
        jac, deg = _residual_jacobian(sub, xi)
        degenerate[idx] |= deg
        jac = jac[..., :dims]
        jw = jac * w[..., None]
        normal = np.einsum("bli,blj->bij", jw, jac)
        rhs = -np.einsum("bli,bl->bi", jw, delta)
        ok = _well_conditioned(normal)
        singular[idx[~ok]] = True
        active[idx[~ok]] = False
        if not ok.any():
            break
        sel = np.flatnonzero(ok)
        step = np.zeros((idx.size, 3))
        step[sel, :dims] = np.linalg.solve(normal[sel], rhs[sel][..., None])[..., 0]
        x_new = xi + step
        iters[idx[sel]] += 1
        out = _outside(x_new, box) & ok
        steplen = np.linalg.norm(step, axis=1)
        last[idx[sel]] = steplen[sel]
        keep = ok & ~out
        x[idx[keep]] = x_new[keep]
        diverged[idx[out]] = True
        done = keep & (steplen <= config.tolerance)
        converged[idx[done]] = True
        active[idx[out | done]] = False
    obj = _objective_rows(batch, x, LossKind.SQUARED_L2, np.ones(nb))
    final = _irls_weights(batch.residuals(x), batch.mask, weighting, huber_constant)
    return BatchSolution(x, iters, converged, diverged, degenerate, obj, last,
                         weights=final, singular=singular)


def _irls_weights(delta, mask, weighting, huber_constant):
    if weighting == "unit":
        return np.where(mask, 1.0, 0.0)
    if weighting != "huber":
        raise ValueError(f"unknown weighting {weighting!r}")
    c = huber_constant * _sigma_rows(delta, mask)
    a = np.abs(delta)
    # influence(delta)/delta for Huber, with w = 1 at delta = 0
    w = np.where(a <= c[:, None], 1.0, c[:, None] / np.where(a == 0, 1.0, a))
    return np.where(mask, w, 0.0)


def _residual_jacobian(batch: LinkBatch, x):
    a = x[:, None, :] - batch.tx
    b = x[:, None, :] - batch.rx
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    bad = (na < SINGULAR_DISTANCE) | (nb < SINGULAR_DISTANCE)
    na = np.where(na < SINGULAR_DISTANCE, np.inf, na)
    nb = np.where(nb < SINGULAR_DISTANCE, np.inf, nb)
    g = -(a / na[..., None] + b / nb[..., None])
    g = np.where(batch.mask[..., None], g, 0.0)
    return g, np.any(bad & batch.mask, axis=1)


def _well_conditioned(m, rcond=1e-12):
    s = np.linalg.svd(m, compute_uv=False)
    return s[:, -1] > rcond * np.maximum(s[:, 0], 1e-300)


# --------------------------------------------------------------------------- single-problem solvers


def _single_batch(mset, gnbs, mode):
    sel = _select(mset, mode)
    if len(sel) == 0:
        raise NoMeasurementsError(f"no measurements selected for mode {mode}")
    return LinkBatch.from_sets([sel], gnbs)


def solve_gd(mset: MeasurementSet, gnbs, init, spec: LossSpec, config: SolverConfig = SolverConfig(),
             bounds=None, trace: list | None = None) -> SolveResult:
    """Minimize the fused objective by fixed-step gradient descent from ``init``.

    ``bounds`` is the scenario box ``(lo, hi)``; leaving it inflated 10x
    raises :class:`DivergenceError`. When ``trace`` is a list, every iterate
    is appended to it (the initial guess first).
    """
    batch = _single_batch(mset, gnbs, config.mode)
    x0 = vec3(init)[None, :]
    if trace is not None:
        return _solve_gd_traced(batch, x0, spec, config, bounds, trace)
    sol = gd_batch(batch, x0, spec.kind, [spec.scale], config, bounds)
    res = sol.result(0, x0)
    if res.diverged:
        raise DivergenceError("iterate left the inflated scenario box", res)
    return res


def _solve_gd_traced(batch, x0, spec, config, bounds, trace):
    one = SolverConfig(config.step_size, config.tolerance, 1, config.mode, config.planar, config.line_search)
    x = x0
    trace.append(x[0].copy())
    iters = 0
    sol = None
    for _ in range(config.max_iterations):
        sol = gd_batch(batch, x, spec.kind, [spec.scale], one, bounds)
        iters += 1
        x = sol.estimate
        trace.append(x[0].copy())
        if sol.diverged[0] or sol.converged[0]:
            break
    sol.iterations[0] = iters
    res = sol.result(0, x0)
    if res.diverged:
        raise DivergenceError("iterate left the inflated scenario box", res)
    return res


def solve_irls(mset: MeasurementSet, gnbs, init, config: SolverConfig = SolverConfig(), bounds=None,
               weighting: str = "huber") -> SolveResult:
    batch = _single_batch(mset, gnbs, config.mode)
    x0 = vec3(init)[None, :]
    sol = irls_batch(batch, x0, config, bounds, weighting=weighting)
    res = sol.result(0, x0)
    if sol.singular[0]:
        raise RankError("singular normal equations", res)
    if res.diverged:
        raise DivergenceError("iterate left the inflated scenario box", res)
    return res


def initial_scale(mset: MeasurementSet, gnbs, init, multiplier: float, mode=ROUND_ROBIN) -> float:
    """``multiplier`` times the robust spread of the residuals at ``init``."""
    batch = _single_batch(mset, gnbs, mode)
    return float(multiplier * _sigma_rows(batch.residuals(vec3(init)[None, :]), batch.mask)[0])


def scale_rows(batch: LinkBatch, init, multiplier: float) -> np.ndarray:
    return multiplier * _sigma_rows(batch.residuals(np.asarray(init, float)), batch.mask)
