"""Flat ``key=value`` run configuration.

One setting per line, ``#`` starts a comment, blank lines are ignored.  Every
key must appear in :data:`DEFAULTS`; unknown keys are rejected so that typos
fail loudly instead of silently falling back to a default.
"""

from __future__ import annotations

from pathlib import Path


class ConfigError(ValueError):
    """Malformed config text, unknown key, or a value of the wrong type."""


# key -> (type, default).  Paths default to "" meaning "not set".
DEFAULTS: dict[str, tuple[type, object]] = {
    "seed": (int, 0),
    "schedule.kind": (str, "linear"),
    "schedule.T": (int, 1000),
    "schedule.beta_start": (float, 1e-4),
    "schedule.beta_end": (float, 0.02),
    "model.in_channels": (int, 3),
    "model.cond_channels": (int, 3),
    "model.base_width": (int, 32),
    "model.time_dim": (int, 64),
    "model.objective": (str, "image"),
    "model.groups": (int, 0),
    "model.seed": (int, 0),
    "train.steps": (int, 5000),
    "train.batch": (int, 16),
    "train.lr": (float, 1e-4),
    "train.loss": (str, "l2"),
    "train.patch": (int, 32),
    "train.pool": (int, 4096),
    "train.checkpoint_every": (int, 0),
    "train.log_every": (int, 1),
    "data.root": (str, ""),
    "data.scale": (int, 4),
    "data.synth_train": (int, 64),
    "data.synth_heldout": (int, 32),
    "data.synth_size": (int, 96),
    "cond.mode": (str, "bicubic"),
    "cond.dir": (str, ""),
    "cond.checkpoint": (str, ""),
    "cond.width": (int, 32),
    "cond.steps": (int, 2000),
    "cond.lr": (float, 1e-3),
    "cond.batch": (int, 16),
    "sampler.kind": (str, "second_order"),
    "sampler.steps": (int, 40),
    "sampler.spacing": (str, "t"),
    "sampler.clip_x0": (bool, True),
    "sampler.seed": (int, 0),
    "out.dir": (str, "run"),
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def parse_kv_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Raw ``key -> value`` strings, without validation against the schema."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _coerce(key: str, value, typ: type):
    if typ is bool:
        v = str(value).strip().lower()
        if v in _TRUE:
            return True
        if v in _FALSE:
            return False
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    try:
        return typ(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: expected {typ.__name__}, got {value!r}") from exc


def resolve(overrides: dict[str, object] | None = None) -> dict[str, object]:
    """Defaults merged with ``overrides``; every value coerced to its schema type."""
    overrides = overrides or {}
    unknown = sorted(set(overrides) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    cfg = {k: d for k, (_, d) in DEFAULTS.items()}
    for k, v in overrides.items():
        cfg[k] = _coerce(k, v, DEFAULTS[k][0])
    return cfg


def load_config(path) -> dict[str, object]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return resolve(parse_kv_text(text, str(path)))


def dump_config(cfg: dict[str, object]) -> str:
    lines = []
    for k in sorted(cfg):
        v = cfg[k]
        lines.append(f"{k}={str(v).lower() if isinstance(v, bool) else v}")
    return "\n".join(lines) + "\n"


def write_snapshot(cfg: dict[str, object], directory) -> Path:
    """Write the fully resolved config as ``resolved_config.txt`` in ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    path = d / "resolved_config.txt"
    path.write_text(dump_config(cfg), encoding="utf-8")
    return path


def section(cfg: dict[str, object], prefix: str) -> dict[str, object]:
    return {k: v for k, v in cfg.items() if k.startswith(prefix + ".")}
