"""Run configuration: key = value sections, CLI overrides, spec-string parsing."""

from __future__ import annotations

import configparser
import io
import os
import re
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from qnnlv.errors import ConfigError
from qnnlv.pauli import Observable, build_projector, build_tfim, build_xxz, random_state, read_pauli_file

COMMANDS = ("train", "ensemble", "theory", "hessian-sweep", "framepot", "autocorr", "fit-noise", "compare")
SEED_ENV = "QNNLV_SEED"

_CALL = re.compile(r"\s*([A-Za-z_]\w*)\s*\(")


@dataclass
class RunConfig:
    command: str = "train"
    observable: str = "xxz(4,2)"
    ansatz: str = "rpa(32)"
    n: int | None = None
    O0: str = "min"
    loss: str = "quadratic"
    eta: float = 1e-3
    steps: int = 1000
    record_stride: int = 1
    mu_stride: int = 10
    trajectories: int = 1
    master_seed: int = 0
    out_dir: str = "out"
    jobs: int = 1
    extra: dict = field(default_factory=dict)
    source: str | None = None
    base_dir: str = "."

    def section(self, name: str) -> dict:
        return self.extra.get(name, {})

    def to_text(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        cp["run"] = {f.name: str(getattr(self, f.name)) for f in fields(self)
                     if f.name not in ("extra", "source", "base_dir") and getattr(self, f.name) is not None}
        for name, sec in sorted(self.extra.items()):
            cp[name] = {k: str(v) for k, v in sec.items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


_RUN_TYPES = {f.name: f.type for f in fields(RunConfig)}
_CASTS = {"n": int, "eta": float, "steps": int, "record_stride": int, "mu_stride": int,
          "trajectories": int, "master_seed": int, "jobs": int}


def _where(text: str | None, key: str, value: str | None = None) -> tuple[int, int]:
    """1-based (line, column) of a key's value in the config text, or (0, 0).

    With ``value`` given, only a line carrying that value counts, so values
    that came from overrides are not pinned to the file.
    """
    if not text:
        return 0, 0
    pat = re.compile(rf"^(\s*{re.escape(key)}\s*[=:]\s*)", re.IGNORECASE)
    for lineno, line in enumerate(text.splitlines(), 1):
        m = pat.match(line)
        if m and (value is None or line[m.end():].lstrip().startswith(value.strip())):
            return lineno, len(m.group(1)) + 1
    return 0, 0


def spec_error(key: str, value: str, pos: int, msg: str, text: str | None = None) -> ConfigError:
    line, col = _where(text, key, value)
    if line:
        return ConfigError(f"line {line}, column {col + pos}: {key} = {value!r}: {msg}")
    return ConfigError(f"{key} = {value!r}, column {pos + 1}: {msg}")


def parse_call(value: str, key: str = "spec", text: str | None = None) -> tuple[str, list[str]]:
    """Split ``name(a, b)`` into ``("name", ["a", "b"])``."""
    m = _CALL.match(value)
    if not m:
        raise spec_error(key, value, 0, "expected name(args)", text)
    close = value.find(")", m.end())
    if close < 0:
        raise spec_error(key, value, len(value), "missing ')'", text)
    if value[close + 1:].strip():
        raise spec_error(key, value, close + 1, "unexpected text after ')'", text)
    body = value[m.end():close]
    args = [a.strip() for a in body.split(",")] if body.strip() else []
    return m.group(1).lower(), args


def _num(kind, raw: str, key: str, value: str, text: str | None):
    try:
        return kind(raw)
    except ValueError:
        pos = value.find(raw) if raw else 0
        raise spec_error(key, value, max(pos, 0), f"cannot read {raw!r} as {kind.__name__}", text) from None


def parse_observable(value: str, n: int | None = None, base_dir: str = ".", text: str | None = None) -> Observable:
    name, args = parse_call(value, "observable", text)
    if name in ("xxz", "tfim"):
        if len(args) != 2:
            raise spec_error("observable", value, 0, f"{name} takes (n, coupling)", text)
        nq = _num(int, args[0], "observable", value, text)
        coupling = _num(float, args[1], "observable", value, text)
        if nq < 2:
            raise spec_error("observable", value, value.find(args[0]), "n must be >= 2", text)
        return build_xxz(nq, coupling) if name == "xxz" else build_tfim(nq, coupling)
    if name == "projector":
        if len(args) != 1:
            raise spec_error("observable", value, 0, "projector takes (seed)", text)
        seed = _num(int, args[0], "observable", value, text)
        if n is None:
            raise spec_error("observable", value, 0, "projector needs the qubit count n", text)
        target = random_state(1 << n, np.random.default_rng(seed))
        return build_projector(target, label=f"projector({seed})")
    if name == "pauli_sum":
        if len(args) != 1:
            raise spec_error("observable", value, 0, "pauli_sum takes (file)", text)
        path = Path(args[0])
        if not path.is_absolute():
            path = Path(base_dir) / path
        try:
            return read_pauli_file(path, n)
        except (OSError, ValueError) as exc:
            raise spec_error("observable", value, value.find(args[0]), str(exc), text) from None
    raise spec_error("observable", value, 0, f"unknown observable {name!r}", text)


def parse_ansatz(value: str, text: str | None = None) -> tuple[str, int]:
    name, args = parse_call(value, "ansatz", text)
    if name not in ("rpa", "hea") or len(args) != 1:
        raise spec_error("ansatz", value, 0, "expected rpa(L) or hea(D)", text)
    size = _num(int, args[0], "ansatz", value, text)
    if size < 1:
        raise spec_error("ansatz", value, value.find(args[0]), "size must be >= 1", text)
    return name, size


_TARGET = re.compile(r"^\s*(min|max|mid)\s*(?:([+-])\s*([0-9.eE+-]+))?\s*$")


def parse_target(value, obs: Observable) -> float:
    """A float, or ``min``/``max``/``mid`` with an optional ``+x``/``-x`` offset."""
    if isinstance(value, (int, float)):
        return float(value)
    text = str(value)
    m = _TARGET.match(text)
    if not m:
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"O0 = {text!r}: expected a number or min/max/mid[+-x]") from None
    base = {"min": obs.o_min, "max": obs.o_max, "mid": 0.5 * (obs.o_min + obs.o_max)}[m.group(1)]
    if m.group(2):
        off = float(m.group(3))
        base = base + off if m.group(2) == "+" else base - off
    return base


def _cast(kind, raw: str):
    if kind is int:
        try:
            return int(raw)
        except ValueError:
            val = float(raw)  # allow 1e4 style step counts
            if not val.is_integer():
                raise
            return int(val)
    return kind(raw)


def _apply(cfg: RunConfig, key: str, raw: str) -> None:
    key = key.strip()
    if "." in key:
        sec, sub = key.split(".", 1)
        if sec == "run":
            _apply(cfg, sub, raw)
        else:
            cfg.extra.setdefault(sec, {})[sub] = raw.strip()
        return
    if key not in _RUN_TYPES or key in ("extra", "source", "base_dir"):
        raise ConfigError(f"unknown run key {key!r}")
    raw = raw.strip()
    if key in _CASTS:
        if key == "n" and raw.lower() in ("", "none"):
            cfg.n = None
            return
        try:
            setattr(cfg, key, _cast(_CASTS[key], raw))
        except ValueError:
            line, col = _where(cfg.source, key, raw)
            where = f"line {line}, column {col}: " if line else ""
            raise ConfigError(f"{where}{key} = {raw!r} is not a valid {_CASTS[key].__name__}") from None
    else:
        setattr(cfg, key, raw)


def load_config(path=None, overrides=(), command: str | None = None, env=None) -> RunConfig:
    """Read a config file, apply ``key=value`` overrides and the seed env var."""
    cfg = RunConfig()
    env = os.environ if env is None else env
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        cfg.source = text
        cfg.base_dir = str(p.parent)
        cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        cp.optionxform = str
        try:
            cp.read_string(text, source=str(p))
        except configparser.Error as exc:
            raise ConfigError(f"config parse error: {exc}") from None
        for sec in cp.sections():
            for key, raw in cp.items(sec):
                _apply(cfg, key if sec == "run" else f"{sec}.{key}", raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        _apply(cfg, key, raw)
    if command is not None:
        cfg.command = command
    if cfg.command not in COMMANDS:
        raise ConfigError(f"unknown command {cfg.command!r}")
    if env.get(SEED_ENV):
        try:
            cfg.master_seed = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV}={env[SEED_ENV]!r} is not an integer") from None
    if cfg.master_seed < 0:
        raise ConfigError("master_seed must be non-negative")
    if cfg.loss not in ("quadratic", "linear"):
        raise ConfigError(f"loss must be quadratic or linear, got {cfg.loss!r}")
    if cfg.eta <= 0 or cfg.steps < 0 or cfg.record_stride < 1 or cfg.mu_stride < 1:
        raise ConfigError("eta, steps and strides must be positive")
    if cfg.mu_stride % cfg.record_stride:
        raise ConfigError("mu_stride must be a multiple of record_stride")
    return cfg


def parse_grid(value: str) -> np.ndarray:
    """``a:b:n`` (inclusive linspace) or a comma-separated list."""
    value = str(value).strip()
    try:
        if ":" in value:
            a, b, num = value.split(":")
            return np.linspace(float(a), float(b), int(num))
        return np.array([float(x) for x in value.split(",") if x.strip()])
    except ValueError:
        raise ConfigError(f"bad grid {value!r}: expected a:b:n or a comma list") from None
