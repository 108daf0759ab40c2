import dataclasses
import logging
import math
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

from app.core.errors import (ConfigError, InvalidDelta0, InvalidGrid,
                             InvalidTimeStep, UnknownConfigKey)
from app.core.phase import Domain
from app.physics.egc import kappa, t0

logger = logging.getLogger(__name__)

MODES = ("gravity_only", "prescribed_field", "coupled", "fluid_only")
FAMILIES = ("box", "poly_decay")
FIELD_PROFILES = ("shear", "cellular")

DEFAULT_TOLERANCES = {
    "flow": 1e-6,
    "div": 1e-8,
    "energy": 1e-3,
    "fd": 1e-6,
}


@dataclass(frozen=True)
class RunConfig:
    g: float = 1.0
    dt: float = 0.01
    t_end: float = 4.0
    particle_count: int = 10000
    grid: Tuple[int, int, int] = (16, 16, 48)
    rng_seed: int = 1234
    delta0: Optional[float] = None
    mode: str = "gravity_only"
    tolerances: Dict[str, float] = field(default_factory=dict)

    Lx: float = 1.0
    Ly: float = 1.0
    Zmax: float = 12.0

    family: str = "box"
    box_L: float = 1.0
    box_R: float = 1.0
    poly_q: float = 8.0
    poly_m: float = 3.0
    poly_Rmax: float = math.inf
    poly_Lmax: float = 8.0

    viscosity: float = 1.0
    u0_amplitude: float = 0.0

    field_profile: str = "cellular"
    field_amplitude: float = 0.0
    field_decay: float = 0.0
    field_budget: Optional[float] = None
    # resolved against kappa_1/2(g) and t0(box_L, box_R, g) on validation
    field_budget_fraction: Optional[float] = None
    t_end_after_t0: Optional[float] = None

    force_C: float = 0.0
    force_exponent: float = 1.75

    diag_every: int = 10
    snapshot_every: int = 0
    deterministic: bool = True
    weighted_d2_norms: bool = False
    strong_time_threshold: Optional[float] = None
    threads: int = 1


@dataclass(frozen=True)
class ValidatedConfig:
    """A RunConfig together with the constants derived from g."""

    config: RunConfig
    delta0: float
    kappa_half: float
    t0: float
    T0: float
    t0_data: float
    domain: Domain
    tolerances: Dict[str, float]

    def __getattr__(self, name: str):
        if name == "config" or name.startswith("__"):
            raise AttributeError(name)
        return getattr(self.config, name)

    @property
    def steps(self) -> int:
        return int(round(self.config.t_end / self.config.dt))


def default_delta0(g: float) -> float:
    return min(0.1, 0.9 * kappa(0.5, g))


def _resolve_relative(cfg: RunConfig) -> RunConfig:
    overrides = {}
    if cfg.field_budget_fraction is not None:
        if not 0 < cfg.field_budget_fraction < 1:
            raise ConfigError(f"field_budget_fraction must lie in (0, 1), got {cfg.field_budget_fraction}")
        overrides["field_budget"] = cfg.field_budget_fraction * kappa(0.5, cfg.g)
    if cfg.t_end_after_t0 is not None:
        if cfg.family != "box" or cfg.mode == "fluid_only":
            raise ConfigError("t_end_after_t0 needs box data and a kinetic mode.")
        if not (cfg.box_L > 0 and cfg.box_R > 0):
            raise ConfigError(f"box data needs box_L > 0 and box_R > 0, got L={cfg.box_L}, R={cfg.box_R}")
        overrides["t_end"] = t0(cfg.box_L, cfg.box_R, cfg.g) + cfg.t_end_after_t0
    return with_overrides(cfg, **overrides) if overrides else cfg


def validate_config(cfg: Union[RunConfig, ValidatedConfig]) -> ValidatedConfig:
    if isinstance(cfg, ValidatedConfig):
        return cfg

    if not (cfg.g > 0 and math.isfinite(cfg.g)):
        raise ConfigError(f"Gravity must be positive, got g={cfg.g}")
    cfg = _resolve_relative(cfg)
    if not (cfg.dt > 0 and math.isfinite(cfg.dt)):
        raise InvalidTimeStep(f"Time step must be positive, got dt={cfg.dt}")
    if not (cfg.t_end > 0):
        raise InvalidTimeStep(f"t_end must be positive, got {cfg.t_end}")
    if cfg.dt > cfg.t_end:
        raise InvalidTimeStep(f"dt={cfg.dt} exceeds t_end={cfg.t_end}")
    if len(cfg.grid) != 3 or any(int(n) != n or n < 4 for n in cfg.grid):
        raise InvalidGrid(f"Grid dimensions must be integers >= 4, got {cfg.grid}")
    if cfg.mode not in MODES:
        raise ConfigError(f"Unknown mode '{cfg.mode}', expected one of {', '.join(MODES)}")
    if cfg.family not in FAMILIES:
        raise ConfigError(f"Unknown family '{cfg.family}', expected one of {', '.join(FAMILIES)}")
    if cfg.field_profile not in FIELD_PROFILES:
        raise ConfigError(f"Unknown field_profile '{cfg.field_profile}'")
    if cfg.mode != "fluid_only" and cfg.particle_count < 1:
        raise ConfigError("particle_count must be at least 1.")
    if cfg.viscosity <= 0:
        raise ConfigError("viscosity must be positive.")
    if cfg.diag_every < 1:
        raise ConfigError("diag_every must be at least 1.")

    domain = Domain(cfg.Lx, cfg.Ly, cfg.Zmax)
    if cfg.mode == "fluid_only":
        t0_data = math.inf
    elif cfg.family == "box":
        if not (0 < cfg.box_L < cfg.Zmax and cfg.box_R > 0):
            raise ConfigError(f"box data needs 0 < box_L < Zmax and box_R > 0, got L={cfg.box_L}, R={cfg.box_R}")
        t0_data = t0(cfg.box_L, cfg.box_R, cfg.g)
    else:
        if not (0 < cfg.poly_Lmax < cfg.Zmax):
            raise ConfigError(f"poly_Lmax must lie in (0, Zmax), got {cfg.poly_Lmax}")
        if cfg.poly_q <= 3 or cfg.poly_m <= 0:
            raise ConfigError("poly_decay needs poly_q > 3 and poly_m > 0 for a finite mass.")
        t0_data = math.inf

    kappa_half = kappa(0.5, cfg.g)
    delta0 = default_delta0(cfg.g) if cfg.delta0 is None else float(cfg.delta0)
    if not delta0 > 0:
        raise InvalidDelta0(f"delta0 must be strictly positive, got {delta0}")
    if not delta0 * math.exp(delta0) < 1.0 / 9.0:
        raise InvalidDelta0(f"delta0·e^delta0 = {delta0 * math.exp(delta0):.4g} must stay below 1/9")
    if not delta0 < kappa_half:
        raise InvalidDelta0(f"delta0 = {delta0} must stay below kappa_1/2(g) = {kappa_half:.6g}")

    tolerances = dict(DEFAULT_TOLERANCES)
    tolerances["exit"] = 1e-10 * cfg.Zmax
    tolerances.update(cfg.tolerances)

    reference_t0 = t0(1.0, 1.0, cfg.g)
    validated = ValidatedConfig(
        config=cfg,
        delta0=delta0,
        kappa_half=kappa_half,
        t0=reference_t0,
        T0=reference_t0 + 1.0,
        t0_data=t0_data,
        domain=domain,
        tolerances=tolerances,
    )
    assert validated.delta0 * math.exp(validated.delta0) < 1.0 / 9.0
    return validated


def with_overrides(cfg: RunConfig, **overrides) -> RunConfig:
    return dataclasses.replace(cfg, **overrides)


_FIELD_TYPES = {f.name: f for f in fields(RunConfig)}


def _parse_bool(raw: str) -> bool:
    value = raw.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"Expected a boolean, got '{raw}'")


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key == "grid":
        parts = [p for p in raw.replace(" ", "").split(",") if p]
        if len(parts) != 3:
            raise InvalidGrid(f"grid needs three comma-separated integers, got '{raw}'")
        try:
            return tuple(int(p) for p in parts)
        except ValueError as exc:
            raise InvalidGrid(f"grid needs integers, got '{raw}'") from exc
    if key == "tolerances":
        out: Dict[str, float] = {}
        for item in raw.split(","):
            item = item.strip()
            if not item:
                continue
            name, _, value = item.partition(":")
            if not value:
                raise ConfigError(f"tolerance entries look like name:value, got '{item}'")
            out[name.strip()] = float(value)
        return out
    if key in ("delta0", "field_budget", "field_budget_fraction", "t_end_after_t0", "strong_time_threshold"):
        return None if raw == "" or raw.lower() == "none" else float(raw)
    if key in ("mode", "family", "field_profile"):
        return raw
    if key in ("deterministic", "weighted_d2_norms"):
        return _parse_bool(raw)
    if key in ("particle_count", "rng_seed", "diag_every", "snapshot_every", "threads"):
        return int(raw)
    try:
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"Value for '{key}' must be a number, got '{raw}'") from exc


def parse_config_values(text: str) -> Dict[str, object]:
    """Only the keys present in the text, parsed to their field types."""
    values: Dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"Line {lineno}: expected key=value, got '{stripped}'")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise UnknownConfigKey(f"Line {lineno}: unknown key '{key}'")
        values[key] = _parse_value(key, raw)
    return values


def parse_config_text(text: str) -> RunConfig:
    values = parse_config_values(text)
    if not values:
        raise ConfigError("Config is empty.")
    return RunConfig(**values)


def load_config(path: Union[str, Path]) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"Cannot read config {p}: {exc}") from exc
    return parse_config_text(text)


def config_to_text(cfg: RunConfig) -> str:
    lines = []
    for f in fields(RunConfig):
        value = getattr(cfg, f.name)
        if f.name == "grid":
            raw = ",".join(str(n) for n in value)
        elif f.name == "tolerances":
            raw = ",".join(f"{k}:{v!r}" for k, v in sorted(value.items()))
        elif value is None:
            raw = ""
        elif isinstance(value, bool):
            raw = "true" if value else "false"
        else:
            raw = repr(value) if isinstance(value, float) else str(value)
        lines.append(f"{f.name}={raw}")
    return "\n".join(lines) + "\n"


def apply_environment(cfg: RunConfig) -> RunConfig:
    overrides = {}
    threads = os.environ.get("VNS_THREADS", "").strip()
    if threads:
        try:
            overrides["threads"] = max(1, int(threads))
        except ValueError:
            logger.warning("Ignoring VNS_THREADS=%r (not an integer)", threads)
    det = os.environ.get("VNS_DETERMINISTIC", "").strip()
    if det:
        overrides["deterministic"] = det == "1"
    return with_overrides(cfg, **overrides) if overrides else cfg
