"""Result rows, empirical CDFs and summary statistics."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

ROW_FIELDS = (
    "trial", "step", "estimator", "init_kind",
    "true_x", "true_y", "true_z", "est_x", "est_y", "est_z",
    "error_m", "iterations", "converged", "failed",
)


@dataclass(frozen=True)
class ResultRow:
    trial: int
    step: int
    estimator: str
    true_xyz: tuple[float, float, float]
    est_xyz: tuple[float, float, float]
    error_m: float
    iterations: int
    converged: bool
    init_kind: str = "aoa"
    failed: bool = False

    @classmethod
    def make(cls, trial, step, estimator, truth, est, iterations, converged, init_kind="aoa", failed=False):
        t = tuple(float(v) for v in truth)
        e = tuple(float(v) for v in est)
        err = float(np.linalg.norm(np.subtract(e, t)))
        return cls(int(trial), int(step), estimator, t, e, err, int(iterations), bool(converged),
                   init_kind, bool(failed))

    @property
    def tag(self) -> str:
        return self.estimator if self.init_kind == "aoa" else f"{self.estimator}-{self.init_kind}"


def fmt(x: float) -> str:
    # shortest round-trip repr: locale-free and byte-stable
    return repr(float(x))


def rows_to_csv(rows: Iterable[ResultRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ROW_FIELDS)
    for r in rows:
        w.writerow([r.trial, r.step, r.estimator, r.init_kind,
                    *map(fmt, r.true_xyz), *map(fmt, r.est_xyz),
                    fmt(r.error_m), r.iterations, int(r.converged), int(r.failed)])
    return buf.getvalue()


def rows_from_csv(text: str, check: bool = True) -> list[ResultRow]:
    """Parse rows; with ``check`` the stored error must equal the recomputed distance to 1e-9."""
    out = []
    for rec in csv.DictReader(io.StringIO(text)):
        t = tuple(float(rec[k]) for k in ("true_x", "true_y", "true_z"))
        e = tuple(float(rec[k]) for k in ("est_x", "est_y", "est_z"))
        err = float(rec["error_m"])
        if check:
            recomputed = math.dist(t, e)
            if abs(recomputed - err) > 1e-9:
                raise ValueError(f"error_m {err} != recomputed {recomputed} "
                                 f"(trial {rec['trial']}, step {rec['step']})")
        out.append(ResultRow(int(rec["trial"]), int(rec["step"]), rec["estimator"], t, e, err,
                             int(rec["iterations"]), rec["converged"] == "1", rec["init_kind"],
                             rec["failed"] == "1"))
    return out


def compute_cdf(errors) -> list[tuple[float, float]]:
    """Empirical CDF as (value, i/n) pairs over the sorted sample."""
    e = np.sort(np.asarray(errors, float).ravel())
    if e.size == 0:
        raise ValueError("empty sample")
    n = e.size
    return [(float(v), (i + 1) / n) for i, v in enumerate(e)]


def cdf_at(errors, x: float) -> float:
    e = np.asarray(errors, float)
    if e.size == 0:
        raise ValueError("empty sample")
    return float(np.count_nonzero(e <= x) / e.size)


def percentile(errors, q: float) -> float:
    """Percentile ``q`` in [0, 100] with lower interpolation."""
    e = np.asarray(errors, float)
    if e.size == 0:
        raise ValueError("empty sample")
    return float(np.percentile(e, q, method="lower"))


def ks_statistic(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov distance."""
    a = np.sort(np.asarray(a, float))
    b = np.sort(np.asarray(b, float))
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def rmse(errors) -> float:
    e = np.asarray(errors, float)
    return float(np.sqrt(np.mean(e * e)))


@dataclass(frozen=True)
class SummaryStats:
    estimator: str
    rmse_m: float
    p50_m: float
    p90_m: float
    mean_iterations: float
    failure_rate: float
    count: int

    def as_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "rmse_m": self.rmse_m,
            "p50_m": self.p50_m,
            "p90_m": self.p90_m,
            "mean_iterations": self.mean_iterations,
            "failure_rate": self.failure_rate,
            "count": self.count,
        }


def summarize(rows: Iterable[ResultRow]) -> dict[str, SummaryStats]:
    """Per-tag statistics, tags in first-seen order."""
    groups: dict[str, list[ResultRow]] = {}
    for r in rows:
        groups.setdefault(r.tag, []).append(r)
    out = {}
    for tag, rs in groups.items():
        err = np.array([r.error_m for r in rs])
        out[tag] = SummaryStats(
            tag, rmse(err), percentile(err, 50), percentile(err, 90),
            float(np.mean([r.iterations for r in rs])),
            float(np.mean([r.failed for r in rs])), len(rs))
    return out


def cdf_to_csv(errors) -> str:
    lines = ["error_m,fraction"]
    lines += [f"{fmt(v)},{fmt(f)}" for v, f in compute_cdf(errors)]
    return "\n".join(lines) + "\n"
