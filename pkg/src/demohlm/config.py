"""Run configuration: packaged INI defaults, an optional user file, then overrides.

Values are typed by the packaged defaults, so an override must parse as the
same kind of value (bool, int, float, list or string) as the key it replaces.
"""

from __future__ import annotations

import configparser
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .gaze import GazeGains
from .policy import PolicyConfig
from .synthesis import SynthesisConfig
from .world import TrackingConfig

SCHEMA = "demohlm-config v1"


class ConfigError(ValueError):
    pass


def _parse(raw: str):
    s = raw.strip()
    low = s.lower()
    if low in ("true", "false"):
        return low == "true"
    parts = s.split()
    if len(parts) > 1:
        return [_parse(p) for p in parts]
    for kind in (int, float):
        try:
            return kind(s)
        except ValueError:
            pass
    return s


def _coerce(section: str, key: str, default, raw: str):
    value = _parse(raw)
    where = f"{section}.{key}"
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} expects true or false, got {raw!r}")
        return value
    if isinstance(default, list):
        return value if isinstance(value, list) else [value]
    if isinstance(default, int):
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{where} expects an integer, got {raw!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} expects a number, got {raw!r}")
        return float(value)
    return raw.strip()


def _to_raw(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return " ".join(_to_raw(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def _read_ini(text: str, origin: str) -> dict:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text, source=origin)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    return {s: dict(cp[s]) for s in cp.sections()}


def _defaults() -> dict:
    text = resources.files("demohlm").joinpath("data/defaults.ini").read_text()
    raw = _read_ini(text, "defaults.ini")
    raw.pop("meta", None)
    # list-valued defaults stay lists even when they hold one item
    out = {}
    for s, kv in raw.items():
        out[s] = {}
        for k, v in kv.items():
            val = _parse(v)
            if k in ("hidden_layout", "sizes", "seeds", "tasks") and not isinstance(val, list):
                val = [val]
            out[s][k] = val
    return out


@dataclass
class RunConfig:
    sections: dict = field(default_factory=_defaults)

    def get(self, section: str, key: str):
        try:
            return self.sections[section][key]
        except KeyError:
            raise ConfigError(f"unknown config key {section}.{key}") from None

    def set(self, section: str, key: str, raw) -> None:
        if section not in self.sections or key not in self.sections[section]:
            raise ConfigError(f"unknown config key {section}.{key}")
        default = self.sections[section][key]
        self.sections[section][key] = _coerce(section, key, default, _to_raw(raw))

    def merge_ini(self, text: str, origin: str = "<config>") -> None:
        raw = _read_ini(text, origin)
        meta = raw.pop("meta", {})
        if meta.get("schema", SCHEMA) != SCHEMA:
            raise ConfigError(f"{origin}: unsupported schema {meta.get('schema')!r}")
        for s, kv in raw.items():
            for k, v in kv.items():
                self.set(s, k, v)

    def merge_dict(self, sections: dict) -> None:
        for s, kv in sections.items():
            for k, v in kv.items():
                self.set(s, k, v)

    def apply_override(self, item: str) -> None:
        """``section.key=value``."""
        name, sep, value = item.partition("=")
        section, dot, key = name.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        self.set(section, key.strip(), value)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(self.sections, sort_keys=True))

    # typed views -------------------------------------------------------

    def tracking(self, noise: float | None = None) -> TrackingConfig:
        t = self.sections["tracking"]
        std = t["tracking_noise_std"] if noise is None else noise
        return TrackingConfig(t["time_constant"], std, t["control_dt"])

    def gaze(self) -> GazeGains:
        g = self.sections["gaze"]
        return GazeGains(g["k_yaw"], g["k_pitch"], g["omega_max"])

    def synthesis(self) -> SynthesisConfig:
        return SynthesisConfig(**self.sections["synthesis"])

    def policy(self, section: str = "policy", seed: int = 0) -> PolicyConfig:
        p = self.sections["policy"]
        s = self.sections.get(section, {})
        pick = lambda k: s.get(k, p[k])  # noqa: E731
        return PolicyConfig(
            hidden_layout=tuple(pick("hidden_layout")),
            chunk_size=p["chunk_size"],
            exec_horizon=p["exec_horizon"],
            learning_rate=float(pick("learning_rate")),
            batch_size=pick("batch_size"),
            epochs=pick("epochs"),
            seed=seed,
        )


def load_config(path: str | Path | None = None, overrides=()) -> RunConfig:
    """Defaults, then the INI file at ``path`` (if any), then ``section.key=value`` overrides."""
    cfg = RunConfig()
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc.strerror}") from exc
        cfg.merge_ini(text, str(p))
    for item in overrides:
        cfg.apply_override(item)
    return cfg
