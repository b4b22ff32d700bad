"""Run configuration files and run manifests.

A config file is INI-style text: ``[section]`` headers followed by
``key = value`` lines. Blank lines and lines starting with ``#`` or ``;`` are
ignored. Every key must be known; anything else is a hard error that names the
offending line. See ``docs/config.md`` for the grammar and the full key list.

Example::

    [run]
    env = cartpole
    algo = fpg
    max_episodes = 800

    [fractional]
    alpha = 0.7
"""

from __future__ import annotations

import configparser
import dataclasses
import datetime as _dt
import enum
import os
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .trainer import TrainConfig, default_config

__all__ = [
    "SECTIONS",
    "ConfigError",
    "parse_config_text",
    "load_config",
    "config_to_text",
    "config_from_header",
    "RunManifest",
    "load_manifest",
    "TOOL_VERSION",
]

TOOL_VERSION = "0.1.0"

SECTIONS: dict[str, tuple[str, ...]] = {
    "run": ("env", "algo", "seed", "max_episodes", "horizon", "hidden", "stop_at_threshold", "wall_clock"),
    "optim": ("gamma", "beta_theta", "beta_v", "eps_clip", "minibatch", "ppo_epochs", "value_sign"),
    "fractional": ("alpha", "mu_variant", "eta_variant", "eps_tol"),
    "ablation": ("clipping_off", "recursion_off", "minibatch_off"),
}
_MANIFEST_KEYS = ("tool_version", "created", "metrics", "config_source")
_SECTION_OF = {key: sec for sec, keys in SECTIONS.items() for key in keys}
_FIELD_TYPES = typing.get_type_hints(TrainConfig)

assert set(_SECTION_OF) == {f.name for f in dataclasses.fields(TrainConfig)}


class ConfigError(ValueError):
    """A config file could not be parsed; ``line`` is 1-based when known."""

    def __init__(self, message: str, *, source: str = "<config>", line: int | None = None, key: str | None = None):
        self.source, self.line, self.key = source, line, key
        where = f"{source}:{line}" if line else source
        super().__init__(f"{where}: {message}")


def _coerce(key: str, raw: str):
    tp = _FIELD_TYPES[key]
    text = raw.strip()
    optional = typing.get_origin(tp) in (typing.Union, types.UnionType)
    if optional:
        if text.lower() in ("", "none"):
            return None
        tp = next(a for a in typing.get_args(tp) if a is not type(None))
    if tp is bool:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(tp, type) and issubclass(tp, enum.Enum):
        try:
            return tp(text.lower())
        except ValueError:
            choices = ", ".join(m.value for m in tp)
            raise ValueError(f"expected one of {choices}, got {raw!r}") from None
    if tp is int:
        return int(text, 0)
    if tp is float:
        return float(text)
    return text


def _line_of(text: str, section: str, key: str | None) -> int | None:
    current = None
    for no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1].strip().lower()
            if key is None and current == section:
                return no
        elif current == section and key is not None:
            name = s.split("=", 1)[0].split(":", 1)[0].strip().lower()
            if name == key:
                return no
    return None


def _read(text: str, source: str) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None, empty_lines_in_values=False, delimiters=("=",))
    try:
        parser.read_string(text, source=source)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("key outside any [section]", source=source, line=exc.lineno) from None
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"duplicate key {exc.option!r}", source=source, line=exc.lineno, key=exc.option) from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"duplicate section [{exc.section}]", source=source, line=exc.lineno) from None
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else None
        raise ConfigError("malformed line (expected key = value)", source=source, line=lineno) from None
    return parser


def parse_config_text(text: str, source: str = "<config>", *, allow_manifest: bool = False) -> TrainConfig:
    """Parse config text into a :class:`TrainConfig`.

    Keys left out take their defaults; the discount defaults per environment.
    """
    parser = _read(text, source)
    values: dict = {}
    for section in parser.sections():
        name = section.strip().lower()
        if name == "manifest" and allow_manifest:
            for key in parser[section]:
                if key not in _MANIFEST_KEYS:
                    raise ConfigError(f"unknown manifest key {key!r}", source=source, line=_line_of(text, name, key), key=key)
            continue
        if name not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]", source=source, line=_line_of(text, name, None))
        for key, raw in parser[section].items():
            line = _line_of(text, name, key)
            if _SECTION_OF.get(key) != name:
                hint = f" (belongs in [{_SECTION_OF[key]}])" if key in _SECTION_OF else ""
                raise ConfigError(f"unknown key {key!r} in [{name}]{hint}", source=source, line=line, key=key)
            try:
                values[key] = _coerce(key, raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {exc}", source=source, line=line, key=key) from None
    env = values.pop("env", "cartpole")
    try:
        return default_config(env, **values)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc), source=source) from None


def load_config(path: str | os.PathLike) -> TrainConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", source=str(path)) from None
    return parse_config_text(text, str(path), allow_manifest=True)


def _fmt(v) -> str:
    if isinstance(v, enum.Enum):
        return v.value
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "none"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def config_to_text(config: TrainConfig) -> str:
    """Render every field; ``parse_config_text`` inverts this exactly."""
    out = []
    for section, keys in SECTIONS.items():
        out.append(f"[{section}]")
        out.extend(f"{k} = {_fmt(getattr(config, k))}" for k in keys)
        out.append("")
    return "\n".join(out)


def config_from_header(header: dict[str, str]) -> TrainConfig:
    """Rebuild the config from the ``# key=value`` comments of a metrics CSV.

    Keys that are not config fields (tool version, timestamps) are skipped.
    """
    values = {k: _coerce(k, v) for k, v in header.items() if k in _SECTION_OF}
    return TrainConfig(**values)


def header_for(config: TrainConfig) -> dict[str, str]:
    return {k: _fmt(v) for k, v in ((f.name, getattr(config, f.name)) for f in dataclasses.fields(config))}


@dataclass
class RunManifest:
    """Everything needed to replay a run: the config plus bookkeeping."""

    config: TrainConfig
    artifacts: dict[str, str] = field(default_factory=dict)
    tool_version: str = TOOL_VERSION
    created: str = field(default_factory=lambda: _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"))
    config_source: str = ""

    @property
    def seed(self) -> int:
        return self.config.seed

    def to_text(self) -> str:
        lines = [
            "# run manifest; usable directly as a config file",
            "[manifest]",
            f"tool_version = {self.tool_version}",
            f"created = {self.created}",
        ]
        if self.config_source:
            lines.append(f"config_source = {self.config_source}")
        if "metrics" in self.artifacts:
            lines.append(f"metrics = {self.artifacts['metrics']}")
        lines.append("")
        return "\n".join(lines) + "\n" + config_to_text(self.config)

    def write(self, path: str | os.PathLike) -> None:
        Path(path).write_text(self.to_text())


def load_manifest(path: str | os.PathLike) -> RunManifest:
    path = Path(path)
    text = path.read_text()
    config = parse_config_text(text, str(path), allow_manifest=True)
    meta = _read(text, str(path))
    m = meta["manifest"] if meta.has_section("manifest") else {}
    arts = {"metrics": m["metrics"]} if "metrics" in m else {}
    return RunManifest(
        config,
        arts,
        m.get("tool_version", TOOL_VERSION),
        m.get("created", ""),
        m.get("config_source", ""),
    )
