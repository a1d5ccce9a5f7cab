"""Simulation configuration and its flat ``dotted.key = value`` text form."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .land_nav import PRESETS as LAND_NAV_PRESETS
from .land_nav import LandNavParams
from .motion import PRESETS as MOTION_PRESETS
from .motion import LeverArm, MotionNoiseParams
from .particle_filter import ERROR_STATS, PFParams
from .sensing import BinarySensorConfig
from .wall_follower import WallFollowerParams

CAMPAIGNS = ("wall-sweep", "landnav-hist", "search-hist")


def preset_key(map_ref: str) -> str:
    """Bundled-map name for ``map_ref`` ("map1", "fixtures/map1.txt", ...)."""
    stem = Path(str(map_ref)).stem
    return stem if stem in LAND_NAV_PRESETS else str(map_ref)


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class SweepGrid:
    a_mu: tuple[float, ...] = (0.5, 0.6, 0.7, 0.8, 0.9)
    a_v: tuple[float, ...] = (0.5, 0.6, 0.7, 0.8, 0.9)
    noise: tuple[float, ...] = (0.0, 0.2, 0.4)


@dataclass(frozen=True)
class SimConfig:
    map: str = "map1"
    f: float = 20.0
    seed: int = 0
    trials: int = 100
    campaign: str = "landnav-hist"
    motion_preset: str = "viking-mi-422p"
    lever_arm: LeverArm = field(default_factory=LeverArm)
    motion: MotionNoiseParams = field(default_factory=lambda: MOTION_PRESETS["viking-mi-422p"])
    sensor: BinarySensorConfig = field(default_factory=BinarySensorConfig)
    wall_follower: WallFollowerParams = field(default_factory=WallFollowerParams)
    land_nav: LandNavParams = field(default_factory=lambda: LAND_NAV_PRESETS["map1"])
    pf: PFParams = field(default_factory=PFParams)
    # particle seed spread (x, y, phi); derived from the map's error stats when unset
    seed_stds: tuple[float, float, float] | None = None
    sweep: SweepGrid = field(default_factory=SweepGrid)
    follow_timeout: float = 1500.0
    landnav_timeout: float = 2400.0
    max_restarts: int = 0
    # re-acquiring the boundary within this distance of where it was lost keeps the DP path
    resume_radius: float = 1.0
    task_excursion: bool = False
    max_failure_fraction: float = 0.05

    def __post_init__(self):
        if self.f <= 0:
            raise ConfigError("sim.f", "must be positive")
        if self.trials < 1:
            raise ConfigError("sim.trials", "must be >= 1")
        if self.campaign not in CAMPAIGNS:
            raise ConfigError("sim.campaign", f"must be one of {', '.join(CAMPAIGNS)}")
        if self.follow_timeout <= 0 or self.landnav_timeout <= 0:
            raise ConfigError("sim.timeout", "timeouts must be positive")
        if self.max_restarts < 0:
            raise ConfigError("sim.max_restarts", "must be >= 0")
        if self.resume_radius < 0:
            raise ConfigError("sim.resume_radius", "must be >= 0")

    @property
    def dt(self) -> float:
        return 1.0 / self.f

    def resolved_seed_stds(self) -> tuple[float, float, float]:
        if self.seed_stds is not None:
            return tuple(self.seed_stds)
        mu_dx, sd_dx, mu_dphi, sd_dphi = ERROR_STATS.get(preset_key(self.map), ERROR_STATS["map1"])
        s_xy = mu_dx + 3.0 * sd_dx
        return (s_xy, s_xy, mu_dphi + 3.0 * sd_dphi)


def for_map(name: str, **overrides) -> SimConfig:
    """Defaults for a bundled map, with its land-navigation preset."""
    ln = LAND_NAV_PRESETS.get(preset_key(name), LAND_NAV_PRESETS["map1"])
    return replace(SimConfig(map=name, land_nav=ln), **overrides)


# flat key -> (section attribute or None, field name, type)
_SECTIONS = {
    "wall_follower": ("wall_follower", WallFollowerParams),
    "land_nav": ("land_nav", LandNavParams),
    "pf": ("pf", PFParams),
    "lever_arm": ("lever_arm", LeverArm),
}
_SIM_KEYS = {
    "map": str,
    "f": float,
    "seed": int,
    "trials": int,
    "campaign": str,
    "follow_timeout": float,
    "landnav_timeout": float,
    "max_restarts": int,
    "resume_radius": float,
    "task_excursion": bool,
    "max_failure_fraction": float,
}


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return ", ".join(_fmt(x) for x in v)
    return str(v)


def _parse_scalar(key: str, raw: str, typ):
    raw = raw.strip()
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            val = float(raw)
            if val != int(val):
                raise ValueError(raw)
            return int(val)
        return typ(raw)
    except ValueError:
        raise ConfigError(key, f"cannot parse {raw!r} as {typ.__name__}") from None


def _parse_floats(key: str, raw: str, count: int | None = None) -> tuple[float, ...]:
    parts = [p for p in raw.replace(",", " ").split() if p]
    vals = tuple(_parse_scalar(key, p, float) for p in parts)
    if count is not None and len(vals) != count:
        raise ConfigError(key, f"expected {count} values, got {len(vals)}")
    return vals


def to_flat(cfg: SimConfig) -> dict[str, str]:
    out: dict[str, str] = {}
    for k in _SIM_KEYS:
        out[f"sim.{k}"] = _fmt(getattr(cfg, k))
    out["sensor.noise_factor"] = _fmt(cfg.sensor.noise_factor)
    out["motion.preset"] = cfg.motion_preset
    out["motion.vel_alpha"] = _fmt(cfg.motion.vel)
    out["motion.odom_alpha"] = _fmt(cfg.motion.odom)
    for prefix, (attr, _) in _SECTIONS.items():
        sec = getattr(cfg, attr)
        for f_ in fields(sec):
            out[f"{prefix}.{f_.name}"] = _fmt(getattr(sec, f_.name))
    out["pf.seed_stds"] = _fmt(cfg.resolved_seed_stds())
    out["sweep.a_mu"] = _fmt(cfg.sweep.a_mu)
    out["sweep.a_v"] = _fmt(cfg.sweep.a_v)
    out["sweep.noise"] = _fmt(cfg.sweep.noise)
    return out


def dumps(cfg: SimConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in to_flat(cfg).items())


def parse_text(text: str) -> dict[str, str]:
    flat: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        flat[key] = val
    return flat


def load_file(path: str | Path) -> dict[str, str]:
    try:
        return parse_text(Path(path).read_text())
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from None


def apply_flat(cfg: SimConfig, flat: dict[str, str]) -> SimConfig:
    """Return ``cfg`` with dotted-key overrides applied and validated."""
    sim_kw: dict = {}
    sec_kw: dict[str, dict] = {name: {} for name in _SECTIONS}
    motion_preset = None
    vel = odom = None
    sweep_kw: dict = {}

    # a map override without explicit land-nav keys also switches the preset
    new_map = flat.get("sim.map")
    for key, raw in flat.items():
        prefix, _, name = key.partition(".")
        if prefix == "sim":
            if name not in _SIM_KEYS:
                raise ConfigError(key, "unknown key")
            sim_kw[name] = _parse_scalar(key, raw, _SIM_KEYS[name])
        elif prefix == "sensor" and name == "noise_factor":
            sim_kw["sensor"] = _build(key, BinarySensorConfig, noise_factor=_parse_scalar(key, raw, float))
        elif prefix == "sensor" and name == "w_hat":
            sec_kw["pf"]["w_hat"] = _parse_scalar(key, raw, float)
        elif prefix == "motion":
            if name == "preset":
                if raw == "custom":
                    continue
                if raw not in MOTION_PRESETS:
                    raise ConfigError(key, f"unknown preset {raw!r}")
                motion_preset = raw
            elif name == "vel_alpha":
                vel = _parse_floats(key, raw, 6)
            elif name == "odom_alpha":
                odom = _parse_floats(key, raw, 4)
            else:
                raise ConfigError(key, "unknown key")
        elif prefix == "pf" and name == "seed_stds":
            sim_kw["seed_stds"] = _parse_floats(key, raw, 3)
        elif prefix == "sweep":
            if name not in ("a_mu", "a_v", "noise"):
                raise ConfigError(key, "unknown key")
            sweep_kw[name] = _parse_floats(key, raw)
        elif prefix in _SECTIONS:
            cls = _SECTIONS[prefix][1]
            ftypes = {f_.name: f_.type for f_ in fields(cls)}
            if name not in ftypes:
                raise ConfigError(key, "unknown key")
            typ = int if ftypes[name] in ("int", int) else float
            sec_kw[prefix][name] = _parse_scalar(key, raw, typ)
        else:
            raise ConfigError(key, "unknown key")

    if new_map is not None and not sec_kw["land_nav"]:
        base_ln = LAND_NAV_PRESETS.get(preset_key(sim_kw["map"]), cfg.land_nav)
    else:
        base_ln = cfg.land_nav
    out: dict = dict(sim_kw)
    if new_map is not None and "pf.seed_stds" not in flat:
        # seed spread follows the map unless pinned alongside it
        out["seed_stds"] = None
    for prefix, (attr, cls) in _SECTIONS.items():
        base = base_ln if prefix == "land_nav" else getattr(cfg, attr)
        kw = sec_kw[prefix]
        if kw or base is not getattr(cfg, attr):
            out[attr] = _rebuild(prefix, base, kw)
    if motion_preset is not None or vel is not None or odom is not None:
        base = MOTION_PRESETS[motion_preset] if motion_preset else cfg.motion
        try:
            out["motion"] = MotionNoiseParams(vel or base.vel, odom or base.odom)
        except ValueError as exc:
            raise ConfigError("motion", str(exc)) from None
        if motion_preset:
            out["motion_preset"] = motion_preset
        if vel is not None or odom is not None:
            out["motion_preset"] = "custom" if motion_preset is None else motion_preset
    if sweep_kw:
        out["sweep"] = replace(cfg.sweep, **sweep_kw)
    try:
        return replace(cfg, **out)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError("sim", str(exc)) from None


def _build(key: str, cls, **kw):
    try:
        return cls(**kw)
    except ValueError as exc:
        raise ConfigError(key, str(exc)) from None


def _rebuild(prefix: str, base, kw: dict):
    try:
        return dataclasses.replace(base, **kw)
    except ValueError as exc:
        bad = next((k for k in kw if k in str(exc)), next(iter(kw), ""))
        raise ConfigError(f"{prefix}.{bad}" if bad else prefix, str(exc)) from None
