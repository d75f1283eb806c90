"""Run configuration: a flat INI file parsed against a fixed schema.

Every key has a default except ``[run] seed``.  Unknown sections or keys are
errors, and all problems are reported together.
"""
from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass
from typing import Any, Callable, Optional

from .env import FieldSpec


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


# -- value codecs ------------------------------------------------------------------

def _split(text: str) -> list:
    return [p.strip() for p in text.replace(";", ",").split(",") if p.strip()]


def _float_grid(text):
    g = [float(v) for v in _split(text)]
    if not g:
        raise ValueError("empty grid")
    if any(b <= a for a, b in zip(g, g[1:])):
        raise ValueError("grid must be strictly increasing")
    return tuple(g)


def _int_grid(text):
    g = _float_grid(text)
    if any(v != int(v) for v in g):
        raise ValueError("grid entries must be integers")
    return tuple(int(v) for v in g)


def _floats(text):
    return tuple(float(v) for v in _split(text))


def _ints(text):
    return tuple(int(v) for v in _split(text))


def _pairs(text):
    out = []
    for item in _split(text):
        a, sep, b = item.partition(":")
        if not sep:
            raise ValueError(f"expected a:b, got {item!r}")
        out.append((float(a), float(b)))
    if not out:
        raise ValueError("empty list")
    return tuple(out)


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _auto(parse):
    def f(text):
        return None if text.strip().lower() == "auto" else parse(text)
    return f


def _positive(parse):
    def f(text):
        v = parse(text)
        if not v > 0:
            raise ValueError("must be positive")
        return v
    return f


def _fmt(v) -> str:
    if v is None:
        return "auto"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        if v and isinstance(v[0], tuple):
            return ", ".join(f"{a!r}:{b!r}" for a, b in v)
        return ", ".join(_fmt(x) for x in v)
    return str(v)


_pint = _positive(int)
_pfloat = _positive(float)

# section -> key -> (parser, default)
SCHEMA: dict[str, dict[str, tuple[Callable[[str], Any], Any]]] = {
    "run": {
        "experiment": (str, "run"),
        "seed": (int, None),
        "replicas": (_pint, 200),
        "radius": (_auto(_pint), None),
        "tol": (_pfloat, 1e-12),
        "deficit": (_pfloat, 1e-10),
        "out": (str, "rcm-out"),
    },
    "field": {
        "model": (str, "constant"),
        "dimension": (_pint, 1),
        "C2": (_pfloat, 1.0),
        "lambda": (_pfloat, 1.0),
        "law": (str, "point"),
        "law_params": (_floats, (1.0,)),
        "truncate": (_bool, True),
    },
    "kernel": {
        "s": (float, 0.0),
        "t": (float, 1.0),
        "anchor": (_ints, ()),
        "direction": (str, "row"),
    },
    "sample": {
        "t": (_pfloat, 1.0),
        "paths": (_pint, 100_000),
        "displacement_T": (_float_grid, (4.0, 16.0, 64.0)),
        "displacement_replicas": (_pint, 100),
        "displacement_paths": (_pint, 100),
    },
    "nash": {
        "t_grid": (_float_grid, (4.0, 8.0, 16.0, 32.0, 64.0)),
        "replicas": (_auto(_pint), None),
    },
    "gradient": {
        "t_grid": (_float_grid, (4.0, 8.0, 16.0, 32.0, 64.0)),
        "p": (_ints, (1, 2)),
        "eps": (_pfloat, 0.5),
        "replicas": (_auto(_pint), None),
    },
    "entropy": {
        "t_grid": (_float_grid, (1.0, 2.0, 4.0, 8.0, 16.0, 32.0)),
        "s_grid": (_float_grid, (1.0, 2.0, 4.0)),
        "delta_pairs": (_pairs, ((1.0, 4.0), (1.0, 16.0))),
        "replicas": (_auto(_pint), None),
    },
    "lclt": {
        "t": (_pfloat, 1.0),
        "n_grid": (_int_grid, (4, 8, 16)),
        "replicas": (_auto(_pint), None),
    },
    "green": {
        "distances": (_int_grid, tuple(range(2, 9))),
        "radius": (_pint, 30),
        "tmax": (_auto(_pfloat), None),
        "replicas": (_auto(_pint), None),
    },
    "k_alpha": {
        "cases": (_pairs, ((1.0, 2.0), (2.0, 3.0))),
        "t_grid": (_float_grid, (1.0, 4.0, 16.0)),
        "ymax": (_pfloat, 8.0),
    },
}


@dataclass
class RunConfig:
    values: dict            # section -> key -> parsed value

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    @property
    def seed(self) -> int:
        return self.values["run"]["seed"]

    @property
    def experiment(self) -> str:
        return self.values["run"]["experiment"]

    @property
    def field_spec(self) -> FieldSpec:
        return _field_spec(self.values["field"])

    def spec_in(self, dimension: int) -> FieldSpec:
        f = dict(self.values["field"], dimension=dimension)
        return _field_spec(f)

    def replicas(self, section: str) -> int:
        v = self.values.get(section, {}).get("replicas")
        return self.values["run"]["replicas"] if v is None else v

    def emit(self) -> str:
        buf = io.StringIO()
        for sec, keys in SCHEMA.items():
            buf.write(f"[{sec}]\n")
            for k in keys:
                buf.write(f"{k} = {_fmt(self.values[sec][k])}\n")
            buf.write("\n")
        return buf.getvalue()

    def digest(self) -> str:
        return hashlib.sha256(self.emit().encode("utf-8")).hexdigest()


def _field_spec(f: dict) -> FieldSpec:
    d = {"model": f["model"], "dimension": f["dimension"], "C2": f["C2"], "lambda": f["lambda"],
         "law": f["law"], "law_params": list(f["law_params"]), "truncate": f["truncate"]}
    if d["model"] == "layered" and d["law"] == "point":
        d["law"] = "pareto"
    return FieldSpec.from_dict(d)


def parse_config(text: str) -> RunConfig:
    """Validate ``text`` against :data:`SCHEMA`; raises :class:`ConfigError` listing every problem."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str     # keys are case sensitive (C2)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([f"malformed config: {exc}"]) from exc
    errors = []
    values = {}
    for sec in cp.sections():
        if sec not in SCHEMA:
            errors.append(f"unknown section [{sec}]")
            continue
        for k in cp[sec]:
            if k not in SCHEMA[sec]:
                errors.append(f"unknown key {sec}.{k}")
    for sec, keys in SCHEMA.items():
        values[sec] = {}
        for k, (parse, default) in keys.items():
            if cp.has_option(sec, k):
                raw = cp.get(sec, k)
                try:
                    values[sec][k] = parse(raw)
                except (ValueError, TypeError) as exc:
                    errors.append(f"{sec}.{k} = {raw!r}: {exc}")
            elif sec == "run" and k == "seed":
                errors.append("missing required key run.seed")
            else:
                values[sec][k] = default
    if not errors:
        try:
            # realising checks the law against the lower bound C2
            _field_spec(values["field"]).realize(0)
        except (ValueError, KeyError, TypeError) as exc:
            errors.append(f"field: {exc}")
        if values["kernel"]["direction"] not in ("row", "col"):
            errors.append("kernel.direction must be row or col")
        anchor = values["kernel"]["anchor"]
        if anchor and len(anchor) != values["field"]["dimension"]:
            errors.append("kernel.anchor must have one coordinate per dimension")
        if values["kernel"]["t"] < values["kernel"]["s"]:
            errors.append("kernel.t must be >= kernel.s")
        if any(p not in (1, 2) for p in values["gradient"]["p"]):
            errors.append("gradient.p entries must be 1 or 2")
        if not 0 < values["gradient"]["eps"] < 1:
            errors.append("gradient.eps must lie in (0, 1)")
    if errors:
        raise ConfigError(errors)
    return RunConfig(values)


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


SMOKE_CONFIG = """\
# Small run of every subcommand on a dynamic field; a few minutes on one core.
[run]
experiment = smoke
seed = 20240611
replicas = 8

[field]
model = renewal
dimension = 1
C2 = 1.0
lambda = 1.0
law = two_point
law_params = 1, 10

[kernel]
t = 1

[sample]
paths = 20000
displacement_T = 4, 8, 16
displacement_replicas = 20
displacement_paths = 50

[nash]
t_grid = 4, 8, 16, 32

[gradient]
t_grid = 8, 16, 32, 64
replicas = 40

[entropy]
t_grid = 1, 2, 4, 8
s_grid = 1, 2
delta_pairs = 1:4

[lclt]
n_grid = 4, 8

[green]
radius = 10
distances = 2, 3, 4
tmax = 4
replicas = 2

[k_alpha]
t_grid = 1, 4
ymax = 4
"""
