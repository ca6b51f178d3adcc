"""Run configuration: a flat ``section.key = value`` file or the same schema in JSON.

Example::

    # OU optimal control
    model.name = ou
    model.theta = 1.0
    grid.T = 6.283185307179586
    grid.N = 128
    ensemble.M = 1000
    ensemble.seed = 7
    cost.target = ou-sine
    optimizer.s0 = 1.0
    optimizer.l_max = 500

Lists are comma-separated (``model.gamma = 1.0, 5.0``). Unknown sections
or keys are rejected before anything is computed. The gradient norm used
by the optimizer's stopping test is Euclidean for parameters and the
dt-weighted grid norm ``sqrt(dt * sum g^2)`` for control grids.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ValidationError


class ConfigError(ValidationError):
    pass


def _f(**kw):
    """Field with a parser tag: float, int, str, bool, floats, ints, opt_float, opt_floats."""
    kind = kw.pop("kind")
    return field(metadata={"kind": kind}, **kw)


@dataclass
class ModelSection:
    name: str = _f(kind="str", default="ou")
    theta: float = _f(kind="float", default=1.0)
    K: int = _f(kind="int", default=1)
    gamma: tuple = _f(kind="floats", default=(1.0,))
    kappa_ext: float = _f(kind="float", default=1.0)
    v0: float = _f(kind="float", default=0.0)
    kBT: float = _f(kind="float", default=0.5)
    noise: str = _f(kind="str", default="literal")
    t_eq: float = _f(kind="float", default=10.0)
    V0: tuple = _f(kind="floats", default=(1.0,))
    d: tuple = _f(kind="floats", default=(1.0,))


@dataclass
class GridSection:
    T: float = _f(kind="float", default=2 * math.pi)
    N: int = _f(kind="int", default=64)


@dataclass
class EnsembleSection:
    M: int = _f(kind="int", default=1000)
    seed: int = _f(kind="int", default=0)
    threads: int = _f(kind="int", default=1)


@dataclass
class CostSection:
    target: str = _f(kind="str", default="ou-sine")
    kappa: float = _f(kind="float", default=0.0)


@dataclass
class ControlsSection:
    u: tuple = _f(kind="opt_floats", default=None)
    perfect: str = _f(kind="str", default="")
    file: str = _f(kind="str", default="")


@dataclass
class OptimizerSection:
    s0: float = _f(kind="float", default=1.0)
    tol: float = _f(kind="float", default=1e-6)
    l_max: int = _f(kind="int", default=100)
    guard: bool = _f(kind="bool", default=False)
    u0: tuple = _f(kind="opt_floats", default=None)
    U0: tuple = _f(kind="opt_floats", default=None)
    lower: tuple = _f(kind="opt_floats", default=None)
    upper: tuple = _f(kind="opt_floats", default=None)


@dataclass
class GradcheckSection:
    h: float = _f(kind="float", default=1e-5)
    tol: float = _f(kind="float", default=1e-5)
    corrupt: tuple = _f(kind="ints", default=())
    corrupt_rel: float = _f(kind="float", default=0.01)


@dataclass
class ConvergeSection:
    N_list: tuple = _f(kind="ints", default=(8, 16, 32, 64, 128))
    batches: int = _f(kind="int", default=10)


@dataclass
class OutputSection:
    binary: bool = _f(kind="bool", default=False)
    correlations: bool = _f(kind="bool", default=False)


SECTIONS = {
    "model": ModelSection,
    "grid": GridSection,
    "ensemble": EnsembleSection,
    "cost": CostSection,
    "controls": ControlsSection,
    "optimizer": OptimizerSection,
    "gradcheck": GradcheckSection,
    "converge": ConvergeSection,
    "output": OutputSection,
}

# Keys that change only how fast a run goes, never what it produces.
HASH_EXCLUDED = {"ensemble.threads"}


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _list(v, conv):
    if isinstance(v, (list, tuple)):
        return tuple(conv(x) for x in v)
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return (conv(v),)
    parts = [p.strip() for p in str(v).split(",") if p.strip()]
    return tuple(conv(p) for p in parts)


def _int(v) -> int:
    if isinstance(v, float) and not v.is_integer():
        raise ValueError(f"not an integer: {v!r}")
    if isinstance(v, bool):
        raise ValueError(f"not an integer: {v!r}")
    return int(v)


def _parse(kind: str, v: Any):
    if kind == "float":
        if isinstance(v, bool):
            raise ValueError(f"not a number: {v!r}")
        return float(v)
    if kind == "int":
        return _int(v)
    if kind == "str":
        return str(v).strip()
    if kind == "bool":
        return v if isinstance(v, bool) else _bool(str(v))
    if kind == "floats":
        return _list(v, float)
    if kind == "ints":
        return _list(v, _int)
    if kind == "opt_floats":
        if v is None or (isinstance(v, str) and v.strip().lower() in ("", "none")):
            return None
        return _list(v, float)
    raise AssertionError(kind)


@dataclass
class RunConfig:
    model: ModelSection = field(default_factory=ModelSection)
    grid: GridSection = field(default_factory=GridSection)
    ensemble: EnsembleSection = field(default_factory=EnsembleSection)
    cost: CostSection = field(default_factory=CostSection)
    controls: ControlsSection = field(default_factory=ControlsSection)
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    gradcheck: GradcheckSection = field(default_factory=GradcheckSection)
    converge: ConvergeSection = field(default_factory=ConvergeSection)
    output: OutputSection = field(default_factory=OutputSection)
    base_dir: Path = field(default=Path("."), compare=False)

    def __post_init__(self):
        self.validate()

    @classmethod
    def from_mapping(cls, flat: dict, base_dir=".") -> "RunConfig":
        """Build from ``{"section.key": value}`` (strings or already-typed values)."""
        secs = {name: {} for name in SECTIONS}
        for key, raw in flat.items():
            sec, dot, name = key.partition(".")
            if not dot or sec not in SECTIONS:
                raise ConfigError(f"unknown config key {key!r}")
            fields = {f.name: f for f in dataclasses.fields(SECTIONS[sec])}
            if name not in fields:
                raise ConfigError(f"unknown config key {key!r}")
            try:
                secs[sec][name] = _parse(fields[name].metadata["kind"], raw)
            except (TypeError, ValueError) as e:
                raise ConfigError(f"bad value for {key}: {e}") from None
        return cls(**{s: SECTIONS[s](**kv) for s, kv in secs.items()}, base_dir=Path(base_dir))

    @classmethod
    def load(cls, path, overrides=()) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
        flat = parse_json(text, path) if path.suffix.lower() == ".json" else parse_flat(text, path)
        for ov in overrides:
            k, eq, v = ov.partition("=")
            if not eq:
                raise ConfigError(f"override {ov!r} is not key=value")
            flat[k.strip()] = v.strip()
        return cls.from_mapping(flat, base_dir=path.parent)

    def to_flat(self) -> dict:
        out = {}
        for sec in SECTIONS:
            obj = getattr(self, sec)
            for f in dataclasses.fields(obj):
                v = getattr(obj, f.name)
                out[f"{sec}.{f.name}"] = list(v) if isinstance(v, tuple) else v
        return out

    def hash(self) -> str:
        """Short digest of every result-affecting setting (thread count excluded)."""
        flat = {k: v for k, v in self.to_flat().items() if k not in HASH_EXCLUDED}
        blob = json.dumps(flat, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def resolve(self, p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else self.base_dir / q

    def validate(self) -> None:
        m, g, e = self.model, self.grid, self.ensemble
        if m.name not in ("ou", "spt"):
            raise ConfigError(f"model.name must be 'ou' or 'spt', got {m.name!r}")
        if m.noise not in ("literal", "fdt"):
            raise ConfigError(f"model.noise must be 'literal' or 'fdt', got {m.noise!r}")
        if not g.T > 0 or g.N < 1:
            raise ConfigError("grid.T must be positive and grid.N at least 1")
        if e.M < 1 or e.threads < 1 or e.seed < 0:
            raise ConfigError("ensemble.M and ensemble.threads must be >= 1, ensemble.seed >= 0")
        if self.cost.kappa < 0:
            raise ConfigError("cost.kappa must be nonnegative")
        if self.controls.perfect not in ("", "variance-ode", "sqrt-product"):
            raise ConfigError(f"controls.perfect must be 'variance-ode' or 'sqrt-product', "
                              f"got {self.controls.perfect!r}")
        o = self.optimizer
        if not o.s0 > 0 or not o.tol > 0 or o.l_max < 0:
            raise ConfigError("optimizer.s0 and optimizer.tol must be positive, optimizer.l_max >= 0")
        if len(self.gradcheck.corrupt) not in (0, 2):
            raise ConfigError("gradcheck.corrupt must be 'row, col'")
        if not self.gradcheck.h > 0 or not self.gradcheck.tol > 0:
            raise ConfigError("gradcheck.h and gradcheck.tol must be positive")
        if not self.converge.N_list or min(self.converge.N_list) < 1:
            raise ConfigError("converge.N_list must list positive step counts")
        if m.name == "spt":
            if m.K < 1:
                raise ConfigError("model.K must be at least 1")
            for key in ("V0", "d"):
                if len(getattr(m, key)) not in (1, m.K):
                    raise ConfigError(f"model.{key} needs 1 or K={m.K} entries")
            if len(m.gamma) not in (1, m.K + 1):
                raise ConfigError(f"model.gamma needs 1 or K+1={m.K + 1} entries")


def parse_flat(text: str, source="<config>") -> dict:
    """``key = value`` lines; ``#`` starts a comment, blank lines are ignored."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, val = line.partition("=")
        if not eq:
            raise ConfigError(f"{source}:{n}: expected 'key = value'")
        key = key.strip()
        if key in out:
            raise ConfigError(f"{source}:{n}: duplicate key {key!r}")
        out[key] = val.strip()
    return out


def parse_json(text: str, source="<config>") -> dict:
    """Nested ``{"section": {"key": value}}`` or flat ``{"section.key": value}``."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{source}: invalid JSON ({e.msg} at line {e.lineno})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be an object")
    out = {}
    for k, v in data.items():
        if isinstance(v, dict):
            for k2, v2 in v.items():
                out[f"{k}.{k2}"] = v2
        else:
            out[k] = v
    return out
