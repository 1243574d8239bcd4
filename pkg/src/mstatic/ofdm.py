"""OFDM radar front end: reception grid synthesis, 2-D periodogram ranging, MUSIC.

The grid is the post-equalization symbol matrix ``D[n, m]`` (subcarrier n,
symbol m). A path with gain ``g``, delay ``tau`` and Doppler ``f_d`` adds
``g * exp(j*2*pi*(m*T_s*f_d - n*tau*df))``. The periodogram zero-pads to
(N_s', N_M') and transforms with an inverse-sense DFT over subcarriers (range)
and a forward DFT over symbols (Doppler), so a path delay of ``u/(df*N_s')``
peaks in range bin ``u``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

C0 = 299_792_458.0


class RangeAmbiguityError(ValueError):
    pass


class NoPeakError(ValueError):
    pass


class SubspaceError(ValueError):
    pass


@dataclass(frozen=True)
class OfdmConfig:
    n_subcarriers: int = 3332
    n_symbols: int = 16
    subcarrier_spacing_hz: float = 120e3
    symbol_duration_s: float = 1.0 / 120e3
    fft_range: int = 4096
    fft_doppler: int = 16

    def __post_init__(self):
        if self.n_subcarriers < 1 or self.n_symbols < 1:
            raise ValueError("grid dimensions must be positive")
        if not (self.subcarrier_spacing_hz > 0 and self.symbol_duration_s > 0):
            raise ValueError("subcarrier spacing and symbol duration must be positive")
        if self.fft_range < self.n_subcarriers or self.fft_doppler < self.n_symbols:
            raise ValueError("FFT sizes must be at least the grid dimensions")

    @property
    def bandwidth_hz(self) -> float:
        return self.n_subcarriers * self.subcarrier_spacing_hz

    @property
    def range_bin_m(self) -> float:
        return C0 / (self.subcarrier_spacing_hz * self.fft_range)

    def check_bandwidth(self, scenario_bandwidth_hz: float):
        if self.bandwidth_hz > scenario_bandwidth_hz * (1 + 1e-12):
            raise ValueError(
                f"occupied bandwidth {self.bandwidth_hz:g} Hz exceeds {scenario_bandwidth_hz:g} Hz")

    def delay_for_bin(self, u: float) -> float:
        return u / (self.subcarrier_spacing_hz * self.fft_range)


@dataclass(frozen=True)
class PathComponent:
    gain: complex
    delay_s: float
    doppler_hz: float = 0.0

    def __post_init__(self):
        if not self.delay_s >= 0:
            raise ValueError("delay_s must be >= 0")

    def in_window(self, cfg: OfdmConfig) -> bool:
        return self.delay_s * cfg.subcarrier_spacing_hz < 1.0


@dataclass(frozen=True)
class ReceptionGrid:
    data: np.ndarray
    config: OfdmConfig

    def __post_init__(self):
        d = np.asarray(self.data, complex)
        if d.shape != (self.config.n_subcarriers, self.config.n_symbols):
            raise ValueError(f"grid shape {d.shape} does not match config")
        object.__setattr__(self, "data", d)


@dataclass(frozen=True)
class Periodogram:
    amplitude: np.ndarray
    config: OfdmConfig

    def __post_init__(self):
        a = np.asarray(self.amplitude, float)
        if a.shape != (self.config.fft_range, self.config.fft_doppler):
            raise ValueError(f"periodogram shape {a.shape} does not match config")
        if np.any(a < 0):
            raise ValueError("periodogram amplitudes must be non-negative")
        object.__setattr__(self, "amplitude", a)


def synthesize_grid(paths, config: OfdmConfig, noise_std: float = 0.0, rng_seed=None) -> ReceptionGrid:
    """Sum of path phasors over the (subcarrier, symbol) grid plus complex Gaussian noise.

    ``noise_std`` is the standard deviation of each of the real and imaginary
    parts. ``rng_seed`` may be an int, a SeedSequence or a Generator.
    """
    if noise_std < 0:
        raise ValueError("noise_std must be >= 0")
    n = np.arange(config.n_subcarriers)[:, None]
    m = np.arange(config.n_symbols)[None, :]
    data = np.zeros((config.n_subcarriers, config.n_symbols), complex)
    for p in paths:
        if not p.in_window(config):
            raise RangeAmbiguityError(
                f"delay {p.delay_s:g} s is outside the unambiguous window {1 / config.subcarrier_spacing_hz:g} s")
        phase = m * config.symbol_duration_s * p.doppler_hz - n * p.delay_s * config.subcarrier_spacing_hz
        data += p.gain * np.exp(2j * np.pi * phase)
    if noise_std > 0:
        rng = np.random.default_rng(rng_seed)
        data += noise_std * (rng.standard_normal(data.shape) + 1j * rng.standard_normal(data.shape))
    return ReceptionGrid(data, config)


def periodogram(grid: ReceptionGrid) -> Periodogram:
    cfg = grid.config
    padded = np.zeros((cfg.fft_range, cfg.fft_doppler), complex)
    padded[: cfg.n_subcarriers, : cfg.n_symbols] = grid.data
    # forward over symbols (Doppler), unnormalized inverse over subcarriers (range)
    spec = np.fft.fft(padded, axis=1)
    spec = np.fft.ifft(spec, axis=0) * cfg.fft_range
    return Periodogram(np.abs(spec) ** 2, cfg)


def clutter_subtract(grid: ReceptionGrid, background: ReceptionGrid) -> ReceptionGrid:
    if grid.config != background.config or grid.data.shape != background.data.shape:
        raise ValueError("grid and background configurations differ")
    return ReceptionGrid(grid.data - background.data, grid.config)


@dataclass(frozen=True)
class RangeEstimate:
    range_m: float
    peak_bin: tuple[int, int]
    peak_value: float


def extract_range(p: Periodogram, refine: bool = False) -> RangeEstimate:
    """Bistatic distance of the strongest range bin.

    Exact ties resolve to the smallest range bin. ``refine`` fits a parabola
    through the peak and its two range neighbours for a sub-bin estimate.
    """
    a = p.amplitude
    if np.all(a == a.flat[0]):
        raise NoPeakError("periodogram is flat")
    profile = a.max(axis=1)
    u = int(np.argmax(profile))
    v = int(np.argmax(a[u]))
    frac = 0.0
    if refine and 0 < u < len(profile) - 1:
        y0, y1, y2 = profile[u - 1], profile[u], profile[u + 1]
        den = y0 - 2 * y1 + y2
        if den < 0:
            frac = 0.5 * (y0 - y2) / den
    return RangeEstimate((u + frac) * p.config.range_bin_m, (u, v), float(a[u, v]))


# --------------------------------------------------------------------------- MUSIC


def steering_vector(theta, n_elements: int, spacing_wl: float) -> np.ndarray:
    """ULA response, (n_elements, len(theta)); theta measured from broadside."""
    theta = np.atleast_1d(np.asarray(theta, float))
    k = np.arange(n_elements)[:, None]
    return np.exp(2j * np.pi * spacing_wl * k * np.sin(theta)[None, :])


def music_spectrum(snapshots, spacing_wl: float, n_sources: int, grid_deg: float = 0.1):
    """Return (azimuth grid in radians, MUSIC pseudo-spectrum)."""
    x = np.asarray(snapshots, complex)
    m, n = x.shape
    if n < m:
        raise SubspaceError(f"need at least {m} snapshots, got {n}")
    if not 0 < n_sources < m:
        raise SubspaceError("n_sources must be in [1, elements)")
    r = x @ x.conj().T / n
    w, v = np.linalg.eigh(r)
    rank = int(np.sum(w > max(w[-1], 0.0) * m * np.finfo(float).eps * 10))
    if n_sources > rank:
        raise SubspaceError(f"covariance rank {rank} < n_sources {n_sources}")
    noise = v[:, : m - n_sources]
    n_grid = int(round(180.0 / grid_deg)) + 1
    theta = np.deg2rad(np.linspace(-90.0, 90.0, n_grid))
    a = steering_vector(theta, m, spacing_wl)
    proj = np.sum(np.abs(noise.conj().T @ a) ** 2, axis=0)
    return theta, 1.0 / np.maximum(proj, np.finfo(float).tiny)


def music_azimuth(snapshots, spacing_wl: float = 0.5, n_sources: int = 1, grid_deg: float = 0.1) -> np.ndarray:
    """Azimuths (radians) of the ``n_sources`` highest MUSIC peaks, sorted ascending."""
    theta, p = music_spectrum(snapshots, spacing_wl, n_sources, grid_deg)
    inner = (p[1:-1] >= p[:-2]) & (p[1:-1] >= p[2:])
    peaks = np.flatnonzero(inner) + 1
    # endpoints count as peaks when they dominate their single neighbour
    if p[0] > p[1]:
        peaks = np.r_[0, peaks]
    if p[-1] > p[-2]:
        peaks = np.r_[peaks, len(p) - 1]
    if peaks.size < n_sources:
        peaks = np.argsort(-p)[:n_sources]
    top = peaks[np.argsort(-p[peaks], kind="stable")[:n_sources]]
    return np.sort(theta[top])


def ula_snapshots(azimuths, n_elements: int, spacing_wl: float, n_snapshots: int,
                  noise_std: float = 0.0, rng_seed=None) -> np.ndarray:
    """Narrowband far-field snapshots with unit-power random-phase sources."""
    rng = np.random.default_rng(rng_seed)
    a = steering_vector(azimuths, n_elements, spacing_wl)
    s = np.exp(2j * np.pi * rng.random((a.shape[1], n_snapshots)))
    x = a @ s
    if noise_std > 0:
        x = x + noise_std * (rng.standard_normal(x.shape) + 1j * rng.standard_normal(x.shape))
    return x


# --------------------------------------------------------------------------- binary layout

_GRID_MAGIC = b"OFDMGRD1"
_PGRAM_MAGIC = b"OFDMPGM1"
# n_subcarriers, n_symbols, fft_range, fft_doppler, subcarrier_spacing_hz, symbol_duration_s
_HEADER = struct.Struct("<8s4I2d")


def _pack_header(magic, cfg: OfdmConfig) -> bytes:
    return _HEADER.pack(magic, cfg.n_subcarriers, cfg.n_symbols, cfg.fft_range, cfg.fft_doppler,
                        cfg.subcarrier_spacing_hz, cfg.symbol_duration_s)


def _unpack_header(buf: bytes, magic) -> OfdmConfig:
    if len(buf) < _HEADER.size:
        raise ValueError("truncated header")
    got, ns, nm, fr, fd, df, ts = _HEADER.unpack_from(buf)
    if got != magic:
        raise ValueError(f"bad magic {got!r}")
    return OfdmConfig(ns, nm, df, ts, fr, fd)


def grid_to_bytes(grid: ReceptionGrid) -> bytes:
    """Header then row-major little-endian complex64 (re, im float32 pairs)."""
    body = np.ascontiguousarray(grid.data, dtype="<c8").tobytes()
    return _pack_header(_GRID_MAGIC, grid.config) + body


def grid_from_bytes(buf: bytes) -> ReceptionGrid:
    cfg = _unpack_header(buf, _GRID_MAGIC)
    n = cfg.n_subcarriers * cfg.n_symbols
    data = np.frombuffer(buf, dtype="<c8", count=n, offset=_HEADER.size)
    return ReceptionGrid(data.reshape(cfg.n_subcarriers, cfg.n_symbols).astype(complex), cfg)


def periodogram_to_bytes(p: Periodogram) -> bytes:
    body = np.ascontiguousarray(p.amplitude, dtype="<f8").tobytes()
    return _pack_header(_PGRAM_MAGIC, p.config) + body


def periodogram_from_bytes(buf: bytes) -> Periodogram:
    cfg = _unpack_header(buf, _PGRAM_MAGIC)
    n = cfg.fft_range * cfg.fft_doppler
    data = np.frombuffer(buf, dtype="<f8", count=n, offset=_HEADER.size)
    return Periodogram(data.reshape(cfg.fft_range, cfg.fft_doppler).copy(), cfg)
