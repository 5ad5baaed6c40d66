"""Flat ``key = value`` run configuration covering model, loss, training and data.

Lines starting with ``#`` are comments. Unknown keys are rejected. Tuples are
written comma-separated (``block_counts = 3,4,6,3``).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Dict, Optional

from raunet.data.synth import GenSpec
from raunet.model import ModelConfig
from raunet.trainer import TrainConfig


class ConfigError(ValueError):
    """Invalid or unknown configuration key/value."""


# flat key -> (section, field name)
_KEYS: Dict[str, tuple] = {}
for _section, _cls in (("model", ModelConfig), ("train", TrainConfig)):
    for _f in dataclasses.fields(_cls):
        if _f.name != "checkpoint_dir":  # outputs always go under the CLI's --out
            _KEYS[_f.name] = (_section, _f.name)
for _f in dataclasses.fields(GenSpec):
    _KEYS.setdefault(_f.name, ("gen", _f.name))
_KEYS["gen_seed"] = ("gen", "seed")
_KEYS["lr"] = ("train", "lr0")
_KEYS["manifest"] = ("run", "manifest")
_KEYS["precision"] = ("run", "precision")


def _parse(text: str, default):
    text = text.strip()
    if isinstance(default, bool):
        low = text.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {text!r}")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        if "/" in text:
            num, den = text.split("/", 1)
            return float(num) / float(den)
        return float(text)
    if isinstance(default, tuple):
        kind = type(default[0]) if default else int
        return tuple(_parse(part, kind()) for part in text.split(",") if part.strip())
    if default is None or isinstance(default, str):
        return None if text.lower() in ("", "none") else text
    raise ConfigError(f"unsupported value type for {text!r}")


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    if value is None:
        return "none"
    return repr(value) if isinstance(value, float) else str(value)


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    gen: GenSpec = field(default_factory=GenSpec)
    manifest: Optional[str] = None
    precision: str = "f32"

    def _section(self, name):
        return self if name == "run" else getattr(self, name)

    def get(self, key):
        section, name = _KEYS[key]
        return getattr(self._section(section), name)

    def with_values(self, values: Dict[str, str]) -> "RunConfig":
        """Return a copy with string ``values`` applied (file lines or CLI overrides)."""
        pending: Dict[str, Dict[str, object]] = {"model": {}, "train": {}, "gen": {}, "run": {}}
        for key, text in values.items():
            if key not in _KEYS:
                raise ConfigError(f"unknown config key {key!r}")
            section, name = _KEYS[key]
            current = getattr(self._section(section), name)
            try:
                pending[section][name] = _parse(str(text), current)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key}: {exc}") from None
        try:
            model = dataclasses.replace(self.model, **pending["model"])
            train = dataclasses.replace(self.train, **pending["train"])
            gen = dataclasses.replace(self.gen, **pending["gen"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        run = {"manifest": self.manifest, "precision": self.precision, **pending["run"]}
        if run["precision"] not in ("f32", "f64"):
            raise ConfigError("precision must be f32 or f64")
        return RunConfig(model, train, gen, run["manifest"], run["precision"])

    def items(self):
        seen = set()
        for key, (section, name) in _KEYS.items():
            if key in ("lr",) or (section, name) in seen:
                continue
            seen.add((section, name))
            yield key, getattr(self._section(section), name)

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("# fully resolved run configuration\n")
            for key, value in self.items():
                fh.write(f"{key} = {_format(value)}\n")


def parse_text(text: str) -> Dict[str, str]:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        values[key] = value
    return values


def load(path: Optional[str] = None, overrides: Optional[Dict[str, str]] = None) -> RunConfig:
    values = {}
    if path:
        with open(path, encoding="utf-8") as fh:
            values.update(parse_text(fh.read()))
    values.update(overrides or {})
    return RunConfig().with_values(values)
