"""Plain-text run configuration.

INI sections with typed keys; every key has a default, and any section or
key outside the schema is an error rather than a silent ignore.  The
canonical serialization (``RunConfig.to_text``) is deterministic, so it
doubles as the config echo written beside artifacts and the text block
embedded in checkpoints.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field

from .data import DEGRADATIONS, RainParams
from .model import ModelConfig

# Schema: section -> key -> default.  Types are inferred from defaults;
# None marks optional ints (empty string in the file).
SCHEMA = {
    "run": {"seed": 0},
    "model": {
        "channels": 16,
        "n_subpriors": 12,
        "scale": 2,
        "blocks": 2,
        "gfm_r": 1,
        "gfm_eps": 1e-4,
        "k_cutoff": None,
        "use_prior": True,
        "use_gfm": True,
        "use_highpass": True,
        "use_attention": True,
    },
    "diffusion": {"t_max": 4, "beta_start": 0.1, "beta_end": 0.99},
    "data": {
        "n_train": 64,
        "n_test": 16,
        "hr_size": 64,
        "degradations": "rain,raindrop,rain+raindrop",
        "streak_count": 30,
        "streak_length": 9,
        "angle": 15.0,
        "intensity": 0.8,
        "drop_count": 12,
        "drop_radius": 5.0,
        "drop_alpha": 0.6,
    },
    "train": {
        "stage1_steps": 2000,
        "stage2_steps": 2000,
        "pretrain_steps": 600,
        "lr": 2e-4,
        "batch": 8,
        "patch": 32,
        "lr_warmup": 100,
        "lr_tau": 250,
        "log_every": 25,
    },
    "insight": {"r": 2, "eps": 3e-3, "hp_radius": 1, "hp_gain": 0.6},
}


class ConfigError(ValueError):
    """Unknown key/section or a value that fails to parse."""


def _parse_value(section, key, raw):
    default = SCHEMA[section][key]
    raw = raw.strip()
    try:
        if default is None:  # optional int
            return int(raw) if raw else None
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError as e:
        raise ConfigError(f"[{section}] {key}: {e}") from e


@dataclass(frozen=True)
class RunConfig:
    values: dict = field(default_factory=dict)

    def get(self, section, key):
        return self.values[section][key]

    def model_config(self):
        m = self.values["model"]
        return ModelConfig(
            channels=m["channels"],
            n_subpriors=m["n_subpriors"],
            scale=m["scale"],
            blocks=m["blocks"],
            gfm_r=m["gfm_r"],
            gfm_eps=m["gfm_eps"],
            k_cutoff=m["k_cutoff"],
            use_prior=m["use_prior"],
            use_gfm=m["use_gfm"],
            use_highpass=m["use_highpass"],
            use_attention=m["use_attention"],
        )

    def rain_params(self):
        d = self.values["data"]
        return RainParams(
            streak_count=d["streak_count"],
            streak_length=d["streak_length"],
            angle=d["angle"],
            intensity=d["intensity"],
            drop_count=d["drop_count"],
            drop_radius=d["drop_radius"],
            drop_alpha=d["drop_alpha"],
        )

    def degradations(self):
        out = tuple(
            s.strip() for s in self.get("data", "degradations").split(",") if s.strip()
        )
        for deg in out:
            if deg not in DEGRADATIONS:
                raise ConfigError(f"unknown degradation {deg!r}")
        if not out:
            raise ConfigError("degradations list is empty")
        return out

    def to_text(self):
        lines = []
        for section in SCHEMA:
            lines.append(f"[{section}]")
            for key in SCHEMA[section]:
                val = self.values[section][key]
                if val is None:
                    val = ""
                elif isinstance(val, bool):
                    val = "true" if val else "false"
                lines.append(f"{key} = {val}")
            lines.append("")
        return "\n".join(lines)


def default_config():
    return RunConfig({s: dict(kv) for s, kv in SCHEMA.items()})


def parse_config_text(text):
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(str(e)) from e
    values = {s: dict(kv) for s, kv in SCHEMA.items()}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            values[section][key] = _parse_value(section, key, raw)
    cfg = RunConfig(values)
    cfg.degradations()  # validate eagerly
    cfg.model_config().validate()
    cfg.rain_params().validate()
    return cfg


def load_config(path=None):
    """Config from an INI file, or pure defaults when path is None."""
    if path is None:
        return default_config()
    with open(path) as fh:
        return parse_config_text(fh.read())
