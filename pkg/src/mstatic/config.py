"""Scenario files.

A scenario file is TOML with the sections ``[scenario]``, ``[noise]``,
``[target]``, ``[solver]`` and ``[kf]``. Keys carry the field names of the
corresponding types; any unknown section or key is rejected. Only
``[scenario]`` is mandatory, the rest fall back to type defaults.

``scenario`` also takes ``step_m`` (path resampling step). ``solver`` also
takes the campaign knobs ``eta_multiplier``, ``huber_multiplier``,
``irls_max_iterations`` and ``grid_resolution_m``.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .fusion import SingleTx, SolverConfig
from .geometry import Box, GeometryError, GnbNode, Scenario
from .sim import ExtendedTarget, NoiseModel, Selection, human_scatter_points, mode_from_string
from .tracking import KfConfig


class ConfigError(ValueError):
    """Invalid scenario file contents."""


SCENARIO_NAMES = ("default_cluttered", "default_empty", "zero_noise", "contaminated", "symmetric")

_SECTIONS = ("scenario", "noise", "target", "solver", "kf")
_SCENARIO_KEYS = {"gnbs", "room_min", "room_max", "carrier_hz", "bandwidth_hz", "tx_power_dbm",
                  "waypoints", "obstacles", "step_m"}
_GNB_KEYS = {f.name for f in fields(GnbNode)}
_BOX_KEYS = {f.name for f in fields(Box)}
_TARGET_KEYS = {f.name for f in fields(ExtendedTarget)}
_SOLVER_KEYS = {f.name for f in fields(SolverConfig)} | {
    "eta_multiplier", "huber_multiplier", "irls_max_iterations", "grid_resolution_m"}
_CAMPAIGN_KEYS = ("eta_multiplier", "huber_multiplier", "irls_max_iterations", "grid_resolution_m")


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: Scenario
    noise: NoiseModel = NoiseModel()
    target: ExtendedTarget = field(default_factory=lambda: ExtendedTarget(np.zeros(3)))
    solver: SolverConfig = SolverConfig()
    kf: KfConfig = KfConfig()
    step_m: float = 0.5
    # CampaignConfig overrides taken from [solver]
    campaign: dict = field(default_factory=dict)
    source: str = ""


def _check_keys(where: str, got, allowed):
    extra = sorted(set(got) - set(allowed))
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(extra)}")


def _required(where: str, table: dict, key: str):
    if key not in table:
        raise ConfigError(f"missing key {where}.{key}")
    return table[key]


def _parse_scenario(t: dict) -> tuple[Scenario, float]:
    _check_keys("[scenario]", t, _SCENARIO_KEYS)
    gnbs = []
    for i, g in enumerate(_required("scenario", t, "gnbs")):
        if not isinstance(g, dict):
            raise ConfigError("scenario.gnbs entries must be tables")
        _check_keys(f"scenario.gnbs[{i}]", g, _GNB_KEYS)
        gnbs.append(GnbNode(**g))
    boxes = []
    for i, b in enumerate(t.get("obstacles", [])):
        if not isinstance(b, dict):
            raise ConfigError("scenario.obstacles entries must be tables")
        _check_keys(f"scenario.obstacles[{i}]", b, _BOX_KEYS)
        boxes.append(Box(_required("obstacle", b, "position"), _required("obstacle", b, "extent")))
    kw = {k: t[k] for k in ("carrier_hz", "bandwidth_hz", "tx_power_dbm") if k in t}
    sc = Scenario(gnbs, _required("scenario", t, "room_min"), _required("scenario", t, "room_max"),
                  waypoints=t.get("waypoints", []), obstacles=boxes, **kw)
    step = float(t.get("step_m", 0.5))
    if not step > 0:
        raise ConfigError("scenario.step_m must be > 0")
    return sc, step


def _parse_target(t: dict) -> ExtendedTarget:
    _check_keys("[target]", t, _TARGET_KEYS)
    pts = t.get("scatter_points", "human")
    if pts == "human":
        pts = human_scatter_points()
    elif pts == "point":
        pts = np.zeros((1, 3))
    elif isinstance(pts, str):
        raise ConfigError(f"target.scatter_points: unknown preset {pts!r} (use 'human', 'point' or a list)")
    try:
        sel = Selection(t.get("selection", "closest"))
    except ValueError:
        raise ConfigError(f"target.selection must be one of {[s.value for s in Selection]}") from None
    return ExtendedTarget(t.get("centroid", [0.0, 0.0, 0.0]), pts, sel)


def _parse_solver(t: dict) -> tuple[SolverConfig, dict]:
    _check_keys("[solver]", t, _SOLVER_KEYS)
    kw = {k: v for k, v in t.items() if k not in _CAMPAIGN_KEYS}
    if "mode" in kw:
        kw["mode"] = mode_from_string(kw["mode"])
    campaign = {k: t[k] for k in _CAMPAIGN_KEYS if k in t}
    return SolverConfig(**kw), campaign


def parse_config(doc: dict, source: str = "") -> ScenarioConfig:
    """Build a :class:`ScenarioConfig` from an already-parsed TOML document."""
    _check_keys("file (sections)", doc, _SECTIONS)
    for name, sec in doc.items():
        if not isinstance(sec, dict):
            raise ConfigError(f"[{name}] must be a table")
    try:
        sc, step = _parse_scenario(_required("file", doc, "scenario"))
        noise = doc.get("noise", {})
        _check_keys("[noise]", noise, {f.name for f in fields(NoiseModel)})
        kf = doc.get("kf", {})
        _check_keys("[kf]", kf, {f.name for f in fields(KfConfig)})
        solver, campaign = _parse_solver(doc.get("solver", {}))
        cfg = ScenarioConfig(sc, NoiseModel(**noise), _parse_target(doc.get("target", {})), solver,
                             KfConfig(**kf), step, campaign, source)
    except ConfigError:
        raise
    except (GeometryError, ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"{type(exc).__name__}: {exc}") from exc
    if isinstance(solver.mode, SingleTx) and solver.mode.tx_id not in [g.id for g in sc.gnbs]:
        raise ConfigError(f"solver.mode names unknown gNB {solver.mode.tx_id}")
    return cfg


def loads(text: str, source: str = "") -> ScenarioConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source or 'scenario'}: {exc}") from exc
    return parse_config(doc, source)


def load(path) -> ScenarioConfig:
    """Read a scenario file. ``path`` may also be the bare name of a bundled scenario.

    File-system errors propagate as ``OSError``; bad contents raise :class:`ConfigError`.
    """
    p = Path(path)
    if not p.exists() and str(path) in SCENARIO_NAMES:
        return bundled(str(path))
    return loads(p.read_text(encoding="utf-8"), str(p))


def bundled(name: str) -> ScenarioConfig:
    if name not in SCENARIO_NAMES:
        raise ConfigError(f"no bundled scenario {name!r}")
    text = resources.files("mstatic").joinpath("scenarios", f"{name}.toml").read_text(encoding="utf-8")
    return loads(text, name)
