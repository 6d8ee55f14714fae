"""Plain-text ``key = value`` run configuration."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, fields, replace

from .errors import ConfigParseError, ConfigValidationError
from .solver import AMPLITUDE_LIMIT

IC_FAMILIES = ("packet_plus", "packet_minus", "packet_both", "single_mode", "zero")
_SINGLE_MODE = re.compile(
    r"^single_mode\(\s*(-?\d+)\s*,\s*(-?\d+)\s*,\s*(-?\d+)\s*,\s*(plus|minus)\s*\)$")


@dataclass(frozen=True)
class SimConfig:
    mu: float
    L: float
    n: int
    t_final: float
    dt: float | None = None          # None means "auto"
    R: float = 100.0
    K: int = 2
    n_star: int | None = None
    ic: str = "packet_both"
    mode: tuple[int, int, int] | None = None
    mode_species: str | None = None
    amplitude: float = 0.1
    envelope_sigma: float | None = None
    carrier: int = 1
    flux_cadence: int = 4
    checkpoint_times: tuple[float, ...] = ()
    seed: int = 0
    output_dir: str = "output"
    cfl: float = 0.5
    decompose: bool = True
    low_freq_h: float | None = None

    @property
    def threshold_satisfied(self) -> bool:
        """Whether the box is at least the large-box scale e^(1/mu)."""
        return self.L >= math.exp(1.0 / self.mu)

    @property
    def ic_text(self) -> str:
        if self.ic == "single_mode":
            m = self.mode
            return f"single_mode({m[0]},{m[1]},{m[2]},{self.mode_species})"
        return self.ic

    def to_text(self) -> str:
        """Serialize back to the config format (parses to an equal config)."""
        lines = []
        for f in fields(self):
            if f.name in ("mode", "mode_species"):
                continue
            value = getattr(self, f.name)
            if f.name == "ic":
                value = self.ic_text
            elif f.name == "dt" and value is None:
                value = "auto"
            elif value is None:
                continue
            elif f.name == "checkpoint_times":
                value = ", ".join(repr(v) for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"


_REQUIRED = ("mu", "L", "n", "t_final")


def _to_float(text: str, key: str, lineno: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ConfigParseError(lineno, f"{key}: expected a number, got {text!r}") from None
    if not math.isfinite(value):
        raise ConfigParseError(lineno, f"{key}: value must be finite")
    return value


def _to_int(text: str, key: str, lineno: int) -> int:
    try:
        return int(text)
    except ValueError:
        raise ConfigParseError(lineno, f"{key}: expected an integer, got {text!r}") from None


def _to_bool(text: str, key: str, lineno: int) -> bool:
    low = text.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ConfigParseError(lineno, f"{key}: expected a boolean, got {text!r}")


def _parse_value(key: str, text: str, lineno: int) -> dict:
    if key in ("mu", "L", "t_final", "R", "amplitude", "envelope_sigma", "cfl", "low_freq_h"):
        return {key: _to_float(text, key, lineno)}
    if key in ("n", "K", "n_star", "flux_cadence", "seed", "carrier"):
        return {key: _to_int(text, key, lineno)}
    if key == "dt":
        if text.lower() == "auto":
            return {"dt": None}
        return {"dt": _to_float(text, key, lineno)}
    if key == "decompose":
        return {key: _to_bool(text, key, lineno)}
    if key == "output_dir":
        return {key: text}
    if key == "checkpoint_times":
        parts = [p.strip() for p in text.split(",") if p.strip()]
        return {key: tuple(sorted(_to_float(p, key, lineno) for p in parts))}
    if key == "ic":
        m = _SINGLE_MODE.match(text)
        if m:
            return {"ic": "single_mode", "mode": tuple(int(m.group(i)) for i in (1, 2, 3)),
                    "mode_species": m.group(4)}
        if text in IC_FAMILIES and text != "single_mode":
            return {"ic": text}
        raise ConfigParseError(lineno, f"ic: unknown initial condition {text!r}")
    raise ConfigParseError(lineno, f"unknown key {key!r}")


def parse_config(text: str) -> SimConfig:
    """Parse and validate a configuration.

    Raises ConfigParseError (with the line number) for malformed lines or
    unknown keys and ConfigValidationError for values that break a rule.
    """
    values: dict = {}
    seen: set = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigParseError(lineno, f"expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigParseError(lineno, "missing key")
        if key in seen:
            raise ConfigParseError(lineno, f"duplicate key {key!r}")
        seen.add(key)
        values.update(_parse_value(key, value, lineno))
    missing = [k for k in _REQUIRED if k not in values]
    if missing:
        raise ConfigValidationError(f"missing required keys: {', '.join(missing)}")
    cfg = SimConfig(**values)
    validate(cfg)
    return cfg


def validate(cfg: SimConfig) -> SimConfig:
    def need(cond: bool, message: str):
        if not cond:
            raise ConfigValidationError(message)

    need(0.0 < cfg.mu < 1.0, "mu must lie in (0, 1)")
    need(cfg.L > 0, "L must be positive")
    need(cfg.n >= 8 and cfg.n % 2 == 0, "n must be an even integer >= 8")
    need(cfg.t_final >= 0, "t_final must be non-negative")
    need(cfg.dt is None or cfg.dt > 0, "dt must be positive or 'auto'")
    need(cfg.R > 0, "R must be positive")
    need(0 <= cfg.K <= cfg.n // 6, "K must lie in [0, n/6]")
    if cfg.n_star is not None:
        need(cfg.n_star >= -1 and cfg.K <= cfg.n_star + 4, "n_star must satisfy -1 <= n_star and K <= n_star + 4")
    need(cfg.flux_cadence >= 1, "flux_cadence must be >= 1")
    need(0 < cfg.cfl <= 1, "cfl must lie in (0, 1]")
    need(cfg.carrier >= 1, "carrier must be >= 1")
    need(cfg.envelope_sigma is None or cfg.envelope_sigma > 0, "envelope_sigma must be positive")
    need(cfg.low_freq_h is None or cfg.low_freq_h > 0, "low_freq_h must be positive")
    need(all(0 <= t <= cfg.t_final for t in cfg.checkpoint_times),
         "checkpoint_times must lie in [0, t_final]")
    need(abs(cfg.amplitude) <= AMPLITUDE_LIMIT,
         f"amplitude {cfg.amplitude} violates the bound max|z| <= {AMPLITUDE_LIMIT}")
    if cfg.ic == "single_mode":
        need(cfg.mode is not None and any(cfg.mode), "single_mode needs a nonzero mode")
        need(all(abs(m) < cfg.n // 2 for m in cfg.mode), "single_mode index must be below n/2")
    return cfg


def with_value(cfg: SimConfig, key: str, value) -> SimConfig:
    """Copy of ``cfg`` with one field changed, revalidated."""
    return validate(replace(cfg, **{key: value}))


def load_config(path) -> SimConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


