"""Typed experiment configuration: INI files with one section per engine,
overridable key by key from the command line."""
from __future__ import annotations

import configparser
import hashlib
import json
import os
from dataclasses import dataclass, field
from io import StringIO
from typing import Any, Callable, Optional

from .disorder import parse_seed

FORMAT_VERSION = "rfimlab-1"
ENGINES = ("gs-evolve", "glauber", "glauber-t", "bootstrap", "phase-scan", "renorm", "selftest")
WORKERS_ENV = "RFIMLAB_WORKERS"


class ConfigError(ValueError):
    """Bad or incomplete configuration (a usage error)."""


def _bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text: str) -> list[float]:
    return [float(x) for x in str(text).replace(",", " ").split()]


def _ints(text: str) -> list[int]:
    return [int(x) for x in str(text).replace(",", " ").split()]


def _optional_int(text: str) -> Optional[int]:
    low = str(text).strip().lower()
    return None if low in ("", "none", "inf", "never") else int(low)


def parse_seeds(text: str) -> list[int]:
    """``"0..19"`` (inclusive range), ``"1, 5, 0x2a"`` or a single seed."""
    out: list[int] = []
    for part in str(text).replace(",", " ").split():
        if ".." in part:
            lo, hi = part.split("..", 1)
            a, b = parse_seed(lo), parse_seed(hi)
            if b < a:
                raise ValueError(f"empty seed range {part!r}")
            out.extend(range(a, b + 1))
        else:
            out.append(parse_seed(part))
    if not out:
        raise ValueError("no seeds given")
    return out


# key -> (parser, default, help); default None means "required where used"
SCHEMA: dict[str, tuple[Callable[[str], Any], Any, str]] = {
    "d": (int, None, "dimension"),
    "N": (int, None, "side length"),
    "sizes": (_ints, None, "list of side lengths (gs-evolve)"),
    "wrap": (_bool, None, "torus (true) or open box (false)"),
    "boundary": (str, None, "Glauber boundary: torus, minus or free"),
    "eps": (float, None, "disorder strength"),
    "M": (float, None, "external field mean"),
    "M_end": (float, None, "last M of a Glauber sweep"),
    "M_lo": (float, None, "start of a positive-temperature sweep"),
    "M_hi": (float, None, "end of a positive-temperature sweep"),
    "M_grid": (_floats, None, "M values for samples"),
    "T": (float, None, "temperature"),
    "alpha": (float, 1.0, "clock rate per vertex"),
    "p": (float, None, "open probability"),
    "q": (float, None, "closed probability"),
    "p_grid": (_floats, None, "open probabilities to scan"),
    "q_law": (str, "power", "power (q = c p^d) or fixed (q = c)"),
    "c": (float, None, "constant of the q law"),
    "K": (int, 4, "scale ratio"),
    "D": (int, 16, "diameter bound at scale 0"),
    "n_values": (_ints, "0 1", "scale indices for p_n"),
    "mode": (str, "pn", "renorm mode: pn or tiles"),
    "r": (int, None, "bootstrap threshold (default d)"),
    "modified": (_bool, False, "count axes instead of neighbours"),
    "closed_flippable_at": (_optional_int, None, "closed sites open at this many open neighbours"),
    "scales": (_ints, None, "box scales for the staged evolution check"),
    "tol": (float, 1e-7, "breakpoint tolerance"),
    "seeds": (parse_seeds, None, "seed list or range a..b"),
    "input": (str, None, "input snapshot"),
    "snapshot": (_bool, False, "write final snapshots"),
    "check_nesting": (_bool, False, "verify the nesting property on the fly"),
    "workers": (int, None, "worker processes"),
}

REQUIRED = {
    "gs-evolve": ("d", "eps", "seeds"),
    "glauber": ("d", "N", "eps", "M_end", "seeds"),
    "glauber-t": ("d", "N", "eps", "T", "M_lo", "M_hi", "seeds"),
    "bootstrap": (),
    "phase-scan": ("d", "N", "p_grid", "c", "seeds"),
    "renorm": ("d", "seeds"),
    "selftest": (),
}

# optional keys whose defaults apply to each engine
OPTIONAL = {
    "gs-evolve": ("tol",),
    "glauber": ("check_nesting", "snapshot"),
    "glauber-t": ("alpha",),
    "bootstrap": ("modified", "snapshot"),
    "phase-scan": ("q_law", "modified"),
    "renorm": ("mode", "K", "D", "n_values", "modified"),
    "selftest": (),
}

# keys that never change what is computed
NON_SEMANTIC = ("workers",)


@dataclass
class ExperimentConfig:
    engine: str
    values: dict = field(default_factory=dict)

    def __getitem__(self, key: str):
        return self.values[key]

    def get(self, key: str, default=None):
        v = self.values.get(key)
        return default if v is None else v

    def resolved(self) -> dict:
        return {"engine": self.engine, "format_version": FORMAT_VERSION, **self.values}

    @property
    def config_hash(self) -> str:
        data = {k: v for k, v in self.resolved().items() if k not in NON_SEMANTIC}
        blob = json.dumps(data, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @property
    def workers(self) -> int:
        w = self.values.get("workers")
        if w is None:
            env = os.environ.get(WORKERS_ENV)
            w = int(env) if env else 1
        if w < 1:
            raise ConfigError("workers must be >= 1")
        return w

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        cp[self.engine] = {"format_version": FORMAT_VERSION, "config_hash": self.config_hash}
        for k, v in self.values.items():
            if v is None:
                continue
            if isinstance(v, (list, tuple)):
                v = " ".join(repr(x) if isinstance(x, float) else str(x) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            cp[self.engine][k] = str(v)
        buf = StringIO()
        cp.write(buf)
        return buf.getvalue()


def _parse_value(key: str, raw: str):
    if key not in SCHEMA:
        raise ConfigError(f"unknown key {key!r}")
    parser = SCHEMA[key][0]
    try:
        return parser(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from None


def load_config(engine: str, path: Optional[str] = None, overrides: Optional[dict] = None) -> ExperimentConfig:
    """File values for ``engine`` (its own section, with ``[common]`` as a
    base), then the overrides; finally defaults and the required-key check."""
    if engine not in ENGINES:
        raise ConfigError(f"unknown engine {engine!r}")
    raw: dict[str, str] = {}
    if path:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        try:
            with open(path) as fh:
                cp.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from None
        for section in ("common", engine):
            if cp.has_section(section):
                raw.update(dict(cp.items(section)))
        raw.pop("format_version", None)
        raw.pop("config_hash", None)
    values = {k: _parse_value(k, v) for k, v in raw.items()}
    for k, v in (overrides or {}).items():
        if v is None:
            continue
        values[k] = _parse_value(k, v) if isinstance(v, str) else v
    missing = [k for k in REQUIRED[engine] if values.get(k) is None]
    if engine == "gs-evolve" and values.get("N") is None and values.get("sizes") is None:
        missing.append("N or sizes")
    if missing:
        raise ConfigError(f"{engine} needs: {', '.join(missing)}")
    for k in OPTIONAL[engine]:
        default = SCHEMA[k][1]
        if values.get(k) is None and default is not None:
            values[k] = _parse_value(k, default) if isinstance(default, str) else default
    return ExperimentConfig(engine, {k: values.get(k) for k in SCHEMA if values.get(k) is not None})
