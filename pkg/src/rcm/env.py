"""Space-time random conductance fields on Z^d.

A field is an immutable description (model, seed, offsets); conductances are
generated on demand by hashing the seed with the edge coordinates and, for
dynamic fields, the index of the refresh event.  All dynamic fields are
piecewise constant in time: every edge is refreshed at the points of its own
Poisson process and takes an i.i.d. value after each refresh.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np
from scipy.special import ndtri

from . import _rng

LAW_KINDS = ("point", "pareto", "lognormal", "two_point")


@dataclass(frozen=True)
class MarginalLaw:
    """One-edge marginal law, supported on [lower_bound, inf).

    ``point(c)``: the constant ``c``.
    ``pareto(a[, scale])``: ``lower_bound + scale * (U**(-1/a) - 1)``; needs a > 1.
    ``lognormal(mu, sigma)``: ``lower_bound + exp(mu + sigma * N)``.
    ``two_point(v1, v2[, p])``: ``v1`` with probability ``p`` (default 1/2), else ``v2``.
    """

    kind: str
    params: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        if self.kind not in LAW_KINDS:
            raise ValueError(f"unknown law kind {self.kind!r}; expected one of {LAW_KINDS}")
        p = self.params
        if self.kind == "point":
            if len(p) != 1 or not p[0] > 0:
                raise ValueError("point law needs one positive value")
        elif self.kind == "pareto":
            if len(p) not in (1, 2):
                raise ValueError("pareto law takes (a) or (a, scale)")
            if not p[0] > 1:
                raise ValueError(f"pareto exponent a={p[0]} <= 1 has infinite mean")
            if len(p) == 2 and not p[1] > 0:
                raise ValueError("pareto scale must be positive")
        elif self.kind == "lognormal":
            if len(p) != 2 or not p[1] >= 0:
                raise ValueError("lognormal law takes (mu, sigma) with sigma >= 0")
        elif self.kind == "two_point":
            if len(p) not in (2, 3):
                raise ValueError("two_point law takes (v1, v2) or (v1, v2, p)")
            if len(p) == 3 and not 0 <= p[2] <= 1:
                raise ValueError("two_point weight must lie in [0, 1]")

    def check_support(self, lower_bound: float) -> None:
        p = self.params
        if self.kind == "point" and p[0] < lower_bound:
            raise ValueError(f"point mass {p[0]} below lower bound {lower_bound}")
        if self.kind == "two_point" and min(p[0], p[1]) < lower_bound:
            raise ValueError(f"two_point values {p[:2]} not all >= {lower_bound}")

    def sample(self, u: np.ndarray, lower_bound: float) -> np.ndarray:
        p = self.params
        u = np.asarray(u, dtype=float)
        if self.kind == "point":
            return np.full(u.shape, p[0])
        if self.kind == "pareto":
            scale = p[1] if len(p) == 2 else 1.0
            return lower_bound + scale * np.expm1(-np.log(u) / p[0])
        if self.kind == "lognormal":
            return lower_bound + np.exp(p[0] + p[1] * ndtri(u))
        w = p[2] if len(p) == 3 else 0.5
        return np.where(u < w, p[0], p[1])

    def mean(self, lower_bound: float) -> float:
        p = self.params
        if self.kind == "point":
            return p[0]
        if self.kind == "pareto":
            scale = p[1] if len(p) == 2 else 1.0
            return lower_bound + scale / (p[0] - 1.0)
        if self.kind == "lognormal":
            return lower_bound + math.exp(p[0] + 0.5 * p[1] ** 2)
        w = p[2] if len(p) == 3 else 0.5
        return w * p[0] + (1 - w) * p[1]


@dataclass(frozen=True)
class Constant:
    value: float = 1.0


@dataclass(frozen=True)
class StaticIID:
    law: MarginalLaw


@dataclass(frozen=True)
class Renewal:
    law: MarginalLaw
    rate: float = 1.0

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("renewal rate must be positive")


@dataclass(frozen=True)
class Layered:
    """omega(x, x +- e_1) = Z(x_2..x_d) v C2 with P[Z > L] = L^-a; other bonds ``other``.

    ``truncate=False`` drops the ``v C2`` cut and the lower-bound guarantee;
    such fields violate the uniform-ellipticity-from-below assumption.
    """

    exponent: float = 2.0
    truncate: bool = True
    other: float = 1.0

    def __post_init__(self):
        if not self.exponent > 1:
            raise ValueError(f"layered tail exponent a={self.exponent} <= 1 has infinite mean")


Model = Union[Constant, StaticIID, Renewal, Layered]


def canonical_edge(x, y) -> tuple[tuple[int, ...], int]:
    """Map an oriented bond (x, y) to (base vertex, axis) of the bond {base, base + e_axis}."""
    x = np.asarray(x, dtype=np.int64).ravel()
    y = np.asarray(y, dtype=np.int64).ravel()
    if x.shape != y.shape:
        raise ValueError("edge endpoints have different dimensions")
    diff = y - x
    nz = np.flatnonzero(diff)
    if len(nz) != 1 or abs(diff[nz[0]]) != 1:
        raise ValueError(f"({tuple(x)}, {tuple(y)}) is not a nearest-neighbour bond")
    axis = int(nz[0])
    base = x if diff[axis] == 1 else y
    return tuple(int(v) for v in base), axis


@dataclass(frozen=True)
class EnvironmentField:
    """A realised conductance field omega_t(e), possibly shifted and/or time-reversed.

    Queries at field time ``t`` on the bond with base ``b`` along ``axis`` read the
    underlying realisation at time ``time_offset + t`` (``time_offset - t`` when
    ``reversed``) and base ``b + space_offset``.
    """

    dimension: int
    model: Model
    lower_bound: float
    seed: int
    time_offset: float = 0.0
    space_offset: tuple[int, ...] = field(default=())
    reversed: bool = False

    def __post_init__(self):
        if not self.space_offset:
            object.__setattr__(self, "space_offset", (0,) * self.dimension)
        object.__setattr__(self, "space_offset", tuple(int(v) for v in self.space_offset))
        if len(self.space_offset) != self.dimension:
            raise ValueError("space offset has wrong dimension")

    @property
    def is_static(self) -> bool:
        return not isinstance(self.model, Renewal)

    # -- time maps ---------------------------------------------------------

    def _base_time(self, t):
        t = np.asarray(t, dtype=float)
        return self.time_offset - t if self.reversed else self.time_offset + t

    def _field_time(self, tau):
        tau = np.asarray(tau, dtype=float)
        return self.time_offset - tau if self.reversed else tau - self.time_offset

    def _coords(self, base) -> np.ndarray:
        base = np.asarray(base, dtype=np.int64).reshape(-1, self.dimension)
        return base + np.asarray(self.space_offset, dtype=np.int64)

    # -- queries -----------------------------------------------------------

    def _seeds(self, n, seeds):
        if seeds is None:
            return np.full(n, self.seed, dtype=np.uint64)
        return np.broadcast_to(np.asarray(seeds, dtype=np.uint64), (n,))

    def rates(self, t, base, axis, seeds=None) -> np.ndarray:
        """Vectorised conductances of bonds {base, base + e_axis} at field time(s) ``t``.

        ``seeds`` optionally replaces the field seed row by row, so that bonds of
        several replicas of the same law can be queried in one call.
        """
        coords = self._coords(base)
        axis = np.broadcast_to(np.asarray(axis, dtype=np.int64), (len(coords),))
        seed = self._seeds(len(coords), seeds)
        m = self.model
        if isinstance(m, Constant):
            return np.full(len(coords), float(m.value))
        if isinstance(m, StaticIID):
            u = _rng.uniform(seed, _rng.TAG_STATIC, *coords.T, axis)
            return m.law.sample(u, self.lower_bound)
        if isinstance(m, Layered):
            z = np.exp(-np.log(_rng.uniform(seed, _rng.TAG_LAYER, *coords[:, 1:].T)) / m.exponent)
            z = np.broadcast_to(z, (len(coords),))
            if m.truncate:
                z = np.maximum(z, self.lower_bound)
            return np.where(axis == 0, z, float(m.other))
        tau = np.broadcast_to(self._base_time(t), (len(coords),))
        cell, j, _ = _latest_refresh(seed, m.rate, tau, coords, axis, strict=False)
        u = _rng.uniform(seed, _rng.TAG_VALUE, *coords.T, axis, cell, j)
        return m.law.sample(u, self.lower_bound)

    def next_change(self, t, base, axis, seeds=None) -> np.ndarray:
        """Earliest field time > t at which a bond may change value (inf if static)."""
        coords = self._coords(base)
        if self.is_static:
            return np.full(len(coords), np.inf)
        axis = np.broadcast_to(np.asarray(axis, dtype=np.int64), (len(coords),))
        seed = self._seeds(len(coords), seeds)
        tau = np.broadcast_to(self._base_time(t), (len(coords),))
        rate = self.model.rate
        if self.reversed:
            _, _, r = _latest_refresh(seed, rate, tau, coords, axis, strict=True)
        else:
            r = _next_refresh(seed, rate, tau, coords, axis)
        return self._field_time(r)

    def refresh_events(self, s: float, t: float, base, axis) -> tuple[np.ndarray, np.ndarray]:
        """Refresh times strictly inside (s, t) for the given bonds.

        Returns ``(times, bond_index)`` sorted by time, in field time.
        """
        coords = self._coords(base)
        if self.is_static or not t > s:
            return np.empty(0), np.empty(0, dtype=np.int64)
        axis = np.broadcast_to(np.asarray(axis, dtype=np.int64), (len(coords),))
        lo, hi = sorted((float(self._base_time(s)), float(self._base_time(t))))
        rate = self.model.rate
        times, idx = [], []
        for cell in range(math.floor(lo * rate), math.floor(hi * rate) + 1):
            counts, u = _cell_events(self._seeds(len(coords), None), coords, axis,
                                     np.full(len(coords), cell))
            r = (cell + u) / rate
            ok = (r > lo) & (r < hi)
            e, _ = np.nonzero(ok)
            times.append(r[ok])
            idx.append(e)
        times = self._field_time(np.concatenate(times))
        idx = np.concatenate(idx)
        order = np.lexsort((idx, times))
        return times[order], idx[order]


# -- renewal machinery ------------------------------------------------------

_POISSON1_CDF = np.cumsum([math.exp(-1.0) / math.factorial(k) for k in range(40)])
_MAX_EVENTS = 40


def _cell_events(seed, coords, axis, cell):
    """Refresh count and sorted-free uniform positions of each bond's events in ``cell``.

    Cells have length 1/rate so counts are Poisson(1).  Returns ``(counts, u)`` with
    ``u[e, j]`` the position in [0, 1) of event j (NaN for j >= counts[e]).
    """
    uc = _rng.uniform(seed, _rng.TAG_COUNT, *coords.T, axis, cell)
    counts = np.minimum(np.searchsorted(_POISSON1_CDF, uc), _MAX_EVENTS - 1)
    nmax = int(counts.max()) if len(counts) else 0
    u = np.full((len(coords), max(nmax, 1)), np.nan)
    for j in range(nmax):
        live = counts > j
        u[live, j] = _rng.uniform(seed[live], _rng.TAG_TIME, *coords[live].T, axis[live], cell[live], j)
    return counts, u


def _latest_refresh(seed, rate, tau, coords, axis, strict):
    """(cell, event index, time) of the last refresh at or before ``tau`` (before, if strict)."""
    n = len(coords)
    cell = np.floor(tau * rate).astype(np.int64)
    out_cell = np.zeros(n, dtype=np.int64)
    out_j = np.zeros(n, dtype=np.int64)
    out_t = np.zeros(n)
    todo = np.arange(n)
    while len(todo):
        c = cell[todo]
        _, u = _cell_events(seed[todo], coords[todo], axis[todo], c)
        r = (c[:, None] + u) / rate
        lim = tau[todo][:, None]
        ok = (r < lim) if strict else (r <= lim)
        r = np.where(ok, r, -np.inf)
        j = np.argmax(r, axis=1)
        found = ok.any(axis=1)
        hit = todo[found]
        out_cell[hit] = c[found]
        out_j[hit] = j[found]
        out_t[hit] = r[found, j[found]]
        cell[todo[~found]] -= 1
        todo = todo[~found]
    return out_cell, out_j, out_t


def _next_refresh(seed, rate, tau, coords, axis):
    n = len(coords)
    cell = np.floor(tau * rate).astype(np.int64)
    out = np.zeros(n)
    todo = np.arange(n)
    while len(todo):
        c = cell[todo]
        _, u = _cell_events(seed[todo], coords[todo], axis[todo], c)
        r = (c[:, None] + u) / rate
        ok = r > tau[todo][:, None]
        r = np.where(ok, r, np.inf)
        found = ok.any(axis=1)
        out[todo[found]] = r[found].min(axis=1)
        cell[todo[~found]] += 1
        todo = todo[~found]
    return out


# -- public operations ------------------------------------------------------

def make_field(model: Model, dimension: int, lower_bound: float, seed: int) -> EnvironmentField:
    """Realise ``model`` on Z^dimension with conductances bounded below by ``lower_bound``."""
    if int(dimension) < 1:
        raise ValueError("dimension must be >= 1")
    if not lower_bound > 0:
        raise ValueError("lower bound C2 must be positive")
    if isinstance(model, Constant):
        if model.value < lower_bound:
            raise ValueError(f"constant {model.value} below lower bound {lower_bound}")
    elif isinstance(model, (StaticIID, Renewal)):
        model.law.check_support(lower_bound)
    elif isinstance(model, Layered):
        if model.other < lower_bound:
            raise ValueError("layered transverse conductance below lower bound")
    else:
        raise TypeError(f"unsupported model {model!r}")
    return EnvironmentField(int(dimension), model, float(lower_bound), int(seed) % 2**64)


def conductance(field: EnvironmentField, t: float, edge) -> float:
    base, axis = canonical_edge(*edge)
    if len(base) != field.dimension:
        raise ValueError("edge dimension does not match the field")
    return float(field.rates(t, [base], [axis])[0])


def shift_field(field: EnvironmentField, s: float, z) -> EnvironmentField:
    """Time-space shift: the result at (t, (x, y)) reads ``field`` at (t + s, (x + z, y + z))."""
    z = tuple(int(v) for v in np.asarray(z, dtype=np.int64).ravel())
    if len(z) != field.dimension:
        raise ValueError("shift vector has wrong dimension")
    offset = tuple(a + b for a, b in zip(field.space_offset, z))
    t0 = field.time_offset - s if field.reversed else field.time_offset + s
    return replace(field, time_offset=t0, space_offset=offset)


def reverse_field(field: EnvironmentField) -> EnvironmentField:
    """Time reversal: the result at time t reads ``field`` at time -t."""
    return replace(field, reversed=not field.reversed)


def breakpoints(field: EnvironmentField, interval, box) -> list[float]:
    """Sorted distinct refresh times in the open interval of bonds touching ``box``."""
    s, t = interval
    if t < s:
        raise ValueError("interval end precedes start")
    times, _ = field.refresh_events(s, t, box.edge_base, box.edge_axis)
    return [float(v) for v in np.unique(times)]


@dataclass(frozen=True)
class FieldSpec:
    """A field law without a seed: model, dimension and the lower bound C2."""

    model: Model
    dimension: int
    lower_bound: float = 1.0

    def realize(self, seed: int) -> EnvironmentField:
        return make_field(self.model, self.dimension, self.lower_bound, seed)

    def mean_conductance(self) -> float:
        m = self.model
        if isinstance(m, Constant):
            return m.value
        if isinstance(m, Layered):
            return max(m.exponent / (m.exponent - 1.0), self.lower_bound, m.other)
        return m.law.mean(self.lower_bound)

    @property
    def is_static(self) -> bool:
        return not isinstance(self.model, Renewal)

    def to_dict(self) -> dict:
        m = self.model
        d = {"dimension": self.dimension, "C2": self.lower_bound}
        if isinstance(m, Constant):
            d.update(model="constant", law="point", law_params=[m.value])
        elif isinstance(m, StaticIID):
            d.update(model="static", law=m.law.kind, law_params=list(m.law.params))
        elif isinstance(m, Renewal):
            d.update(model="renewal", law=m.law.kind, law_params=list(m.law.params))
            d["lambda"] = m.rate
        else:
            d.update(model="layered", law="pareto", law_params=[m.exponent], truncate=m.truncate)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FieldSpec":
        name = d["model"]
        params = tuple(float(v) for v in d.get("law_params", ()))
        law = d.get("law", "point")
        if name == "constant":
            if law != "point" or len(params) > 1:
                raise ValueError("constant model takes law=point with one value")
            model = Constant(params[0] if params else 1.0)
        elif name == "static":
            model = StaticIID(MarginalLaw(law, params))
        elif name == "renewal":
            model = Renewal(MarginalLaw(law, params), float(d.get("lambda", 1.0)))
        elif name == "layered":
            if law != "pareto" or len(params) != 1:
                raise ValueError("layered model takes law=pareto with the tail exponent")
            model = Layered(params[0], bool(d.get("truncate", True)))
        else:
            raise ValueError(f"unknown model {name!r}")
        return cls(model, int(d["dimension"]), float(d.get("C2", 1.0)))
