"""Constant-velocity Kalman filter over per-step position fixes.

State layout is ``[x, y, z, vx, vy, vz]``; only position is observed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import vec3


@dataclass(frozen=True)
class KfConfig:
    process_noise_accel_std: float = 0.5
    measurement_noise_std: float = 0.3
    dt: float = 1.0
    init_pos_std: float = 1.0
    init_vel_std: float = 1.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if not self.measurement_noise_std > 0:
            raise ValueError("measurement_noise_std must be > 0")
        if self.process_noise_accel_std < 0:
            raise ValueError("process_noise_accel_std must be >= 0")
        if not (self.init_pos_std > 0 and self.init_vel_std > 0):
            raise ValueError("initial standard deviations must be > 0")


@dataclass(frozen=True)
class TrackState:
    mean: np.ndarray
    covariance: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        m = np.asarray(self.mean, float).reshape(6)
        p = np.asarray(self.covariance, float).reshape(6, 6)
        if not np.allclose(p, p.T, atol=1e-9, rtol=0):
            raise ValueError("covariance must be symmetric")
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "covariance", p)

    @property
    def position(self) -> np.ndarray:
        return self.mean[:3]

    @property
    def velocity(self) -> np.ndarray:
        return self.mean[3:]


_H = np.hstack([np.eye(3), np.zeros((3, 3))])


def transition(dt: float) -> np.ndarray:
    f = np.eye(6)
    f[:3, 3:] = dt * np.eye(3)
    return f


def process_noise(dt: float, accel_std: float) -> np.ndarray:
    """Discrete white-noise acceleration covariance, per axis [[dt^4/4, dt^3/2], [dt^3/2, dt^2]]."""
    q = np.zeros((6, 6))
    q[:3, :3] = dt**4 / 4 * np.eye(3)
    q[:3, 3:] = q[3:, :3] = dt**3 / 2 * np.eye(3)
    q[3:, 3:] = dt**2 * np.eye(3)
    return q * accel_std**2


def kf_predict(state: TrackState, cfg: KfConfig) -> TrackState:
    f = transition(cfg.dt)
    p = f @ state.covariance @ f.T + process_noise(cfg.dt, cfg.process_noise_accel_std)
    return TrackState(f @ state.mean, 0.5 * (p + p.T), state.timestamp + cfg.dt)


def kf_update(state: TrackState, meas, cfg: KfConfig) -> TrackState:
    z = vec3(meas)
    p = state.covariance
    r = cfg.measurement_noise_std**2 * np.eye(3)
    s = _H @ p @ _H.T + r
    try:
        k = np.linalg.solve(s, _H @ p).T
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("singular innovation covariance") from exc
    mean = state.mean + k @ (z - _H @ state.mean)
    ikh = np.eye(6) - k @ _H
    # Joseph form keeps the covariance symmetric positive semi-definite
    p_new = ikh @ p @ ikh.T + k @ r @ k.T
    return TrackState(mean, 0.5 * (p_new + p_new.T), state.timestamp)


def initial_state(first, cfg: KfConfig, timestamp: float = 0.0) -> TrackState:
    mean = np.concatenate([vec3(first), np.zeros(3)])
    cov = np.diag([cfg.init_pos_std**2] * 3 + [cfg.init_vel_std**2] * 3)
    return TrackState(mean, cov, timestamp)


def track_path(estimates, cfg: KfConfig) -> list[TrackState]:
    """Filter a time-ordered list of position fixes, one state per input."""
    est = list(estimates)
    if not est:
        raise ValueError("track_path needs at least one estimate")
    state = initial_state(est[0], cfg)
    out = [state]
    for z in est[1:]:
        state = kf_update(kf_predict(state, cfg), z, cfg)
        out.append(state)
    return out
