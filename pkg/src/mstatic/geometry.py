"""Geometry primitives and measurement containers.

Positions are plain ``numpy`` float arrays of shape ``(3,)`` in meters. The
helpers here validate them on the way in; everything downstream assumes they
are finite.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np


class GeometryError(ValueError):
    """Raised for degenerate or invalid geometry."""


class DegenerateDirectionError(GeometryError):
    pass


class UnknownNodeError(KeyError):
    pass


def vec3(v) -> np.ndarray:
    """Coerce ``v`` to a finite float array of shape (3,)."""
    a = np.asarray(v, dtype=float).reshape(-1)
    if a.shape != (3,):
        raise GeometryError(f"expected 3 components, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise GeometryError(f"non-finite position {a}")
    return a


@dataclass(frozen=True)
class Box:
    """Axis-aligned box given by its minimum corner and extent."""

    position: np.ndarray
    extent: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", vec3(self.position))
        object.__setattr__(self, "extent", vec3(self.extent))
        if np.any(self.extent <= 0):
            raise GeometryError("box extent must be positive")

    @property
    def lo(self) -> np.ndarray:
        return self.position

    @property
    def hi(self) -> np.ndarray:
        return self.position + self.extent

    def segment_intersects(self, a, b) -> bool:
        """Slab test for the closed segment a->b."""
        a = np.asarray(a, float)
        d = np.asarray(b, float) - a
        t0, t1 = 0.0, 1.0
        for ax in range(3):
            if abs(d[ax]) < 1e-15:
                if a[ax] < self.lo[ax] or a[ax] > self.hi[ax]:
                    return False
                continue
            ta = (self.lo[ax] - a[ax]) / d[ax]
            tb = (self.hi[ax] - a[ax]) / d[ax]
            if ta > tb:
                ta, tb = tb, ta
            t0, t1 = max(t0, ta), min(t1, tb)
            if t0 > t1:
                return False
        return True


@dataclass(frozen=True)
class GnbNode:
    id: int
    position: np.ndarray
    array_elements: int = 4
    array_spacing: float = 0.5
    boresight_azimuth: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "position", vec3(self.position))
        if self.array_elements < 1:
            raise GeometryError("array_elements must be >= 1")
        if not self.array_spacing > 0:
            raise GeometryError("array_spacing must be > 0")


@dataclass(frozen=True)
class Scenario:
    gnbs: tuple[GnbNode, ...]
    room_min: np.ndarray
    room_max: np.ndarray
    carrier_hz: float = 28e9
    bandwidth_hz: float = 400e6
    tx_power_dbm: float = 23.0
    waypoints: tuple[np.ndarray, ...] = ()
    obstacles: tuple[Box, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "gnbs", tuple(self.gnbs))
        object.__setattr__(self, "room_min", vec3(self.room_min))
        object.__setattr__(self, "room_max", vec3(self.room_max))
        object.__setattr__(self, "waypoints", tuple(vec3(w) for w in self.waypoints))
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        # K = 2 is accepted as a degenerate single-pair configuration.
        if len(self.gnbs) < 2:
            raise GeometryError("a scenario needs at least 2 gNBs")
        ids = [g.id for g in self.gnbs]
        if len(set(ids)) != len(ids):
            raise GeometryError(f"duplicate gNB ids {ids}")
        if not np.all(self.room_min < self.room_max):
            raise GeometryError("room_min must be < room_max componentwise")
        for g in self.gnbs:
            if not self.contains(g.position):
                raise GeometryError(f"gNB {g.id} outside the room")
        for w in self.waypoints:
            if not self.contains(w):
                raise GeometryError(f"waypoint {w} outside the room")

    @property
    def n_gnbs(self) -> int:
        return len(self.gnbs)

    @property
    def centroid(self) -> np.ndarray:
        return 0.5 * (self.room_min + self.room_max)

    def contains(self, p, tol: float = 1e-9) -> bool:
        p = np.asarray(p, float)
        return bool(np.all(p >= self.room_min - tol) and np.all(p <= self.room_max + tol))

    def gnb(self, gnb_id: int) -> GnbNode:
        for g in self.gnbs:
            if g.id == gnb_id:
                return g
        raise UnknownNodeError(gnb_id)

    def positions(self) -> dict[int, np.ndarray]:
        return {g.id: g.position for g in self.gnbs}


@dataclass(frozen=True)
class BistaticMeasurement:
    """One (tx, rx) link: estimated bistatic range, AoA unit vector and its concentration."""

    tx_id: int
    rx_id: int
    range_m: float
    aoa_unit: np.ndarray
    kappa: float

    def __post_init__(self):
        if self.tx_id == self.rx_id:
            raise GeometryError("tx_id and rx_id must differ")
        if not (np.isfinite(self.range_m) and self.range_m >= 0):
            raise GeometryError(f"range_m must be finite and >= 0, got {self.range_m}")
        u = vec3(self.aoa_unit)
        if abs(np.linalg.norm(u) - 1.0) >= 1e-9:
            raise GeometryError("aoa_unit must have unit norm")
        object.__setattr__(self, "aoa_unit", u)
        if not self.kappa >= 0:
            raise GeometryError("kappa must be >= 0")

    def below_baseline(self, gnbs, tol: float = 1e-9) -> bool:
        """True when the range is shorter than the direct tx-rx baseline (unphysical echo)."""
        pos = _lookup(gnbs)
        base = float(np.linalg.norm(pos(self.tx_id) - pos(self.rx_id)))
        return self.range_m < base - tol


@dataclass(frozen=True)
class MeasurementSet:
    measurements: tuple[BistaticMeasurement, ...] = field(default_factory=tuple)

    def __post_init__(self):
        ms = tuple(self.measurements)
        pairs = [(m.tx_id, m.rx_id) for m in ms]
        if len(set(pairs)) != len(pairs):
            raise GeometryError("duplicate (tx_id, rx_id) pair in measurement set")
        object.__setattr__(self, "measurements", ms)

    def __len__(self):
        return len(self.measurements)

    def __iter__(self):
        return iter(self.measurements)

    def node_ids(self) -> set[int]:
        return {i for m in self.measurements for i in (m.tx_id, m.rx_id)}

    def round_robin_complete(self, gnb_ids: Iterable[int] | None = None) -> bool:
        ids = set(gnb_ids) if gnb_ids is not None else self.node_ids()
        k = len(ids)
        pairs = {(m.tx_id, m.rx_id) for m in self.measurements}
        return len(pairs) == k * (k - 1) and all(a in ids and b in ids for a, b in pairs)

    def select(self, tx_id: int | None = None) -> "MeasurementSet":
        """Measurements with the given transmitter (all when ``tx_id`` is None)."""
        if tx_id is None:
            return self
        return MeasurementSet(tuple(m for m in self.measurements if m.tx_id == tx_id))


def _lookup(gnbs):
    # gnbs: a Scenario, a {id: position} dict, or a sequence of GnbNode
    if isinstance(gnbs, Scenario):
        table = gnbs.positions()
    elif isinstance(gnbs, dict):
        table = gnbs
    else:
        table = {g.id: g.position for g in gnbs}

    def get(i):
        try:
            return np.asarray(table[i], float)
        except KeyError:
            raise UnknownNodeError(i) from None

    return get


def position_table(gnbs) -> dict[int, np.ndarray]:
    get = _lookup(gnbs)
    if isinstance(gnbs, Scenario):
        ids = [g.id for g in gnbs.gnbs]
    elif isinstance(gnbs, dict):
        ids = list(gnbs)
    else:
        ids = [g.id for g in gnbs]
    return {i: get(i) for i in ids}


def norm3(d) -> np.ndarray:
    """Euclidean norm over the last axis with a fixed summation order, so
    scalar and batched callers agree bit for bit."""
    d = np.asarray(d, float)
    return np.sqrt(d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2])


def bistatic_range(tx, rx, target) -> float:
    tx, rx, target = (np.asarray(v, float) for v in (tx, rx, target))
    return float(norm3(target - tx) + norm3(target - rx))


def residual(meas: BistaticMeasurement, gnbs, candidate) -> float:
    """Measured minus modelled bistatic range at ``candidate``."""
    pos = _lookup(gnbs)
    return meas.range_m - bistatic_range(pos(meas.tx_id), pos(meas.rx_id), candidate)


def unit_from(rx, target) -> np.ndarray:
    d = np.asarray(target, float) - np.asarray(rx, float)
    n = np.linalg.norm(d)
    if n == 0.0:
        raise DegenerateDirectionError("direction between coincident points is undefined")
    return d / n


def link_arrays(mset: MeasurementSet, gnbs) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack a measurement set into (tx positions, rx positions, ranges) arrays."""
    pos = _lookup(gnbs)
    ms = mset.measurements
    tx = np.array([pos(m.tx_id) for m in ms], float).reshape(-1, 3)
    rx = np.array([pos(m.rx_id) for m in ms], float).reshape(-1, 3)
    d = np.array([m.range_m for m in ms], float)
    return tx, rx, d
