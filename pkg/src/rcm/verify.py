"""Checks that turn the decay laws and limit theorems into pass/fail reports.

Every check returns a :class:`CheckReport` with the fitted quantities, the
threshold it was compared against and a plot-ready series.  Constant fields have
known exact rates, so their fitted exponents must match; for random fields the
theorems only give upper bounds and the fitted slope may not exceed the bound's
exponent by more than ``RANDOM_SLACK``.
"""
from __future__ import annotations

import math
import time
from collections import OrderedDict
from dataclasses import dataclass, field as dfield
from typing import Optional, Sequence

import numpy as np

from . import _rng
from .env import Constant, EnvironmentField, FieldSpec
from .estimators import (GaussianKernel, annealed, delta_distance, entropy, green_values,
                         k_alpha_convolution_ratio, replica_seed)
from .kernel import DEFAULT_TOL, LatticeBox, certified_rows, pilot_radius
from .sampler import empirical_distribution, sample_paths

DEFAULT_T_GRID = (4.0, 8.0, 16.0, 32.0, 64.0)
DEFAULT_N_GRID = (4, 8, 16)
DEFICIT = 1e-10
ENTROPY_SLACK = 1e-10
R2_MIN = 0.98
RANDOM_SLACK = 0.15
WATSON_G00 = 0.2527310   # int_0^inf p_t(0,0) dt for the rate-1 walk on Z^3


# -- fits and reports ----------------------------------------------------------

@dataclass
class PowerLawFit:
    exponent: float
    intercept: float
    r_squared: float
    points: list


def fit_power_law(series) -> PowerLawFit:
    """Least squares on (ln t, ln value)."""
    pts = [(float(t), float(v)) for t, v in series]
    if len(pts) < 3:
        raise ValueError("a power-law fit needs at least 3 points")
    t, v = np.array(pts).T
    if not (np.all(np.isfinite(v)) and np.all(v > 0) and np.all(t > 0)):
        raise ValueError("a power-law fit needs positive abscissae and values")
    x, y = np.log(t), np.log(v)
    slope, icpt = np.polyfit(x, y, 1)
    ss = float(((y - y.mean()) ** 2).sum())
    res = float(((y - slope * x - icpt) ** 2).sum())
    r2 = 1.0 if ss == 0 else min(max(1.0 - res / ss, 0.0), 1.0)
    return PowerLawFit(float(slope), float(icpt), r2, pts)


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        return float(x)
    return x


@dataclass
class CheckReport:
    name: str
    target: str
    observed: dict
    threshold: dict
    passed: bool
    seconds: float = 0.0
    # rows (statistic, t, value, stderr, replicas, seed)
    series: list = dfield(default_factory=list)

    def to_dict(self) -> dict:
        return {"name": self.name, "target": self.target, "observed": _plain(self.observed),
                "threshold": _plain(self.threshold), "pass": bool(self.passed),
                "seconds": float(self.seconds)}

    def summary_line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name:<28s} {self.seconds:8.2f}s"


def summarize(reports: Sequence[CheckReport]) -> bool:
    return all(r.passed for r in reports)


def format_table(reports: Sequence[CheckReport]) -> str:
    return "\n".join(r.summary_line() for r in reports)


def _rows(stat, ts, values, errs, M, seed):
    return [(stat, float(t), float(v), float(e), int(M), int(seed)) for t, v, e in zip(ts, values, errs)]


def is_deterministic(spec: FieldSpec) -> bool:
    return isinstance(spec.model, Constant)


def _replicas(spec: FieldSpec, M: int) -> int:
    if M < 1:
        raise ValueError("need at least one replica")
    return 1 if is_deterministic(spec) else int(M)


def _check_grid(t_grid, minimum=4, lower=1.0):
    g = np.asarray(t_grid, dtype=float)
    if len(g) < minimum:
        raise ValueError(f"time grid needs at least {minimum} points, got {len(g)}")
    if np.any(g < lower):
        raise ValueError(f"time grid entries must be >= {lower}")
    if np.any(np.diff(g) <= 0):
        raise ValueError("time grid must be increasing")
    return tuple(float(t) for t in g)


def _bound_verdict(ts, values, errs, target: float):
    """Fit C on the first half of the grid; the later points must obey value - 3 stderr <= C t^target."""
    ts = np.maximum(1.0, np.asarray(ts, dtype=float))
    v, e = np.asarray(values, dtype=float), np.asarray(errs, dtype=float)
    half = (len(ts) + 1) // 2
    C = float(np.max(v[:half] * ts[:half] ** (-target)))
    ok = bool(np.all(v[half:] - 3 * e[half:] <= C * ts[half:] ** target))
    return ok, C


def _exponent_verdict(fit: PowerLawFit, target: float, exact: bool, tolerance: float,
                      errs=None, hard_slope: bool = False):
    """(passed, threshold dict) for a decay series.

    Exact (constant-field) series must match the exponent with r^2 >= R2_MIN.  For
    random fields the theorem is an upper bound: the bound with a constant fitted on
    the early grid points must hold at the later ones within 3 stderr, and the
    slope <= target + RANDOM_SLACK is a diagnostic that only fails the check when
    ``hard_slope`` is set.
    """
    if exact:
        ok = abs(fit.exponent - target) <= tolerance and fit.r_squared >= R2_MIN
        return ok, {"exponent": [target - tolerance, target + tolerance], "r_squared_min": R2_MIN}
    ts, v = np.array(fit.points).T
    bound_ok, C = _bound_verdict(ts, v, np.zeros_like(v) if errs is None else errs, target)
    slope_ok = fit.exponent <= target + RANDOM_SLACK
    thr = {"exponent_max": target + RANDOM_SLACK, "slope_required": hard_slope, "C_fit": C,
           "bound_holds": bound_ok, "slope_ok": bool(slope_ok)}
    return bool(bound_ok and (slope_ok or not hard_slope)), thr


# -- per-replica kernel rows ---------------------------------------------------

_ROW_MEMO: "OrderedDict[tuple, tuple]" = OrderedDict()
_MEMO_SIZE = 256


def clear_row_memo():
    _ROW_MEMO.clear()


def replica_rows(field: EnvironmentField, spec: FieldSpec, times, anchors, s: float = 0.0,
                 deficit: float = DEFICIT, tol: float = DEFAULT_TOL, radius: Optional[int] = None):
    """:func:`certified_rows` with a memo on the exact request.

    Several checks evaluate the same rows of the same replica; only identical
    requests are shared, so results never depend on which check ran first.
    """
    anchors = np.atleast_2d(np.asarray(anchors, dtype=np.int64))
    key = (field, float(s), tuple(float(t) for t in times), anchors.shape, anchors.tobytes(),
           float(deficit), float(tol), radius)
    hit = _ROW_MEMO.get(key)
    if hit is not None:
        _ROW_MEMO.move_to_end(key)
        return hit
    out = certified_rows(field, spec, s, times, anchors, deficit, tol, radius)
    _ROW_MEMO[key] = out
    if len(_ROW_MEMO) > _MEMO_SIZE:
        _ROW_MEMO.popitem(last=False)
    return out


def unit_anchors(d: int) -> np.ndarray:
    """0, +e_1, -e_1, +e_2, -e_2, ..."""
    a = np.zeros((2 * d + 1, d), dtype=np.int64)
    for i in range(d):
        a[1 + 2 * i, i] = 1
        a[2 + 2 * i, i] = -1
    return a


class _Layout:
    def __init__(self, parts):
        self.parts = list(parts)
        self.sizes = [int(np.prod(s)) for _, s in self.parts]
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)]).astype(int)

    def pack(self, values: dict) -> np.ndarray:
        return np.concatenate([np.asarray(values[n], dtype=float).ravel() for n, _ in self.parts]) \
            if self.parts else np.empty(0)

    def unpack(self, vec) -> dict:
        vec = np.asarray(vec, dtype=float)
        return {n: vec[a:b].reshape(s) for (n, s), a, b in zip(self.parts, self.offsets[:-1], self.offsets[1:])}


def _shift(a: np.ndarray, axis: int, step: int) -> np.ndarray:
    """b[i] = a[i + step] along ``axis`` with zeros off the cube (rows vanish there)."""
    out = np.zeros_like(a)
    n = a.shape[axis]
    src = [slice(None)] * a.ndim
    dst = [slice(None)] * a.ndim
    if step >= 0:
        src[axis], dst[axis] = slice(step, n), slice(0, n - step)
    else:
        src[axis], dst[axis] = slice(0, n + step), slice(-step, n)
    out[tuple(dst)] = a[tuple(src)]
    return out


# features computed from rows p_{0,t}(a, .) for the unit anchors a
_ANCHOR0_FEATURES = {"max", "p", "g2sq", "d22", "g2dir"}
_ALL_FEATURES = _ANCHOR0_FEATURES | {"g1sq", "g00sq", "m12abs", "g1dir", "lp1", "lp2"}


@dataclass(frozen=True)
class RowFeatures:
    """Per-replica functionals of kernel rows at the times ``times`` (picklable statistic).

    Window features live on the cube of radius ``window`` around the origin:

    ``p``       p(0, y')
    ``g1sq``    (grad^1_{e1} p(0, y'))^2 = (p(e1, y') - p(0, y'))^2
    ``g2sq``    (grad^2_{e1} p(0, y'))^2 = (p(0, y'+e1) - p(0, y'))^2
    ``d22``     grad^2_{e1} grad^2_{e1} p(0, y')
    ``m12abs``  |grad^1_{-e1} grad^2_{e1} p(0, y')|
    ``g1dir``   grad^1_x p(0, y') for x = +e1, -e1, +e2, ...
    ``g2dir``   grad^2_x p(0, y') for the same x

    Scalars: ``max`` (largest row entry), ``g00sq`` (``g1sq`` at y' = 0) and
    ``lp1``/``lp2`` (sum over the box of |grad^1_{e1} p(0, y')|^p).
    """

    spec: FieldSpec
    times: tuple
    features: tuple
    deficit: float = DEFICIT
    tol: float = DEFAULT_TOL
    radius: Optional[int] = None

    def __post_init__(self):
        bad = set(self.features) - _ALL_FEATURES
        if bad:
            raise ValueError(f"unknown row features {sorted(bad)}")

    @property
    def anchors(self) -> np.ndarray:
        d = self.spec.dimension
        if set(self.features) <= {"max"}:
            return np.zeros((1, d), dtype=np.int64)
        return unit_anchors(d)

    @property
    def window(self) -> int:
        if self.radius is not None:
            return int(self.radius)
        return pilot_radius(self.spec, float(max(self.times)), self.deficit)

    def layout(self) -> _Layout:
        d, nt, w = self.spec.dimension, len(self.times), self.window
        cube = (2 * w + 1,) * d
        shapes = {"max": (nt,), "g00sq": (nt,), "lp1": (nt,), "lp2": (nt,),
                  "g1dir": (nt, 2 * d) + cube, "g2dir": (nt, 2 * d) + cube}
        return _Layout([(f, shapes.get(f, (nt,) + cube)) for f in self.features])

    def __call__(self, field: EnvironmentField) -> np.ndarray:
        d = self.spec.dimension
        anchors = self.anchors
        box, res = replica_rows(field, self.spec, self.times, anchors, 0.0, self.deficit, self.tol, self.radius)
        w = self.window
        pad = w + 2
        crop = (slice(2, 2 + 2 * w + 1),) * d
        o = box.index(np.zeros(d, dtype=np.int64))
        feats = set(self.features)
        out = {f: [] for f in self.features}
        for ti in range(len(self.times)):
            rows = res.states[ti]                      # (n, k)
            if "max" in feats:
                out["max"].append(res.maxima[ti, 0])
            if feats <= {"max"}:
                continue
            cubes = [box.embed(rows[:, j], pad) for j in range(len(anchors))]
            P0 = cubes[0]
            g1 = cubes[1] - P0
            if "p" in feats:
                out["p"].append(P0[crop])
            if "g1sq" in feats:
                out["g1sq"].append((g1 ** 2)[crop])
            if "g00sq" in feats:
                out["g00sq"].append((rows[o, 1] - rows[o, 0]) ** 2)
            if "g2sq" in feats:
                out["g2sq"].append(((_shift(P0, 0, 1) - P0) ** 2)[crop])
            if "d22" in feats:
                out["d22"].append((_shift(P0, 0, 2) - 2 * _shift(P0, 0, 1) + P0)[crop])
            if "m12abs" in feats:
                Pm = cubes[2]
                m = _shift(Pm, 0, 1) - _shift(P0, 0, 1) - Pm + P0
                out["m12abs"].append(np.abs(m)[crop])
            if "g1dir" in feats:
                out["g1dir"].append(np.stack([(cubes[1 + j] - P0)[crop] for j in range(2 * d)]))
            if "g2dir" in feats:
                out["g2dir"].append(np.stack([(_shift(P0, j // 2, 1 - 2 * (j % 2)) - P0)[crop]
                                              for j in range(2 * d)]))
            diff = np.abs(rows[:, 1] - rows[:, 0])
            if "lp1" in feats:
                out["lp1"].append(diff.sum())
            if "lp2" in feats:
                out["lp2"].append((diff ** 2).sum())
        return self.layout().pack({f: np.array(v) for f, v in out.items()})


def row_features(spec: FieldSpec, times, features, M: int, seed: int, workers: int = 1,
                 deficit: float = DEFICIT, tol: float = DEFAULT_TOL, radius: Optional[int] = None):
    """Annealed means and standard errors of :class:`RowFeatures`; returns (mean, stderr, M)."""
    M = _replicas(spec, M)
    stat = RowFeatures(spec, tuple(float(t) for t in times), tuple(features), deficit, tol, radius)
    est = annealed(stat, spec, M, seed, workers, keep_values=False)
    lay = stat.layout()
    return lay.unpack(est.mean), lay.unpack(est.stderr), M


# -- Nash decay ------------------------------------------------------------------

def nash_check(spec: FieldSpec, t_grid=DEFAULT_T_GRID, M: int = 200, seed: int = 0, workers: int = 1,
               tolerance: Optional[float] = None, radius: Optional[int] = None) -> CheckReport:
    """Annealed mean of max_y p_{0,t}(0, y) against (1 v t)^{-d/2}.

    By stationarity the maximum over starting points has the law of the maximum
    from the origin, so the origin is used.  Exponents are matched two-sided with
    ``tolerance`` (0.05 in d = 1, 0.1 otherwise, 0.15 for random fields).
    """
    t0 = time.perf_counter()
    ts = _check_grid(t_grid)
    d = spec.dimension
    mean, se, M = row_features(spec, ts, ["max"], M, seed, workers, radius=radius)
    vals, errs = mean["max"], se["max"]
    fit = fit_power_law(zip(ts, vals))
    target = -d / 2
    exact = is_deterministic(spec)
    if tolerance is None:
        tolerance = (0.05 if d == 1 else 0.1) if exact else RANDOM_SLACK
    ok = abs(fit.exponent - target) <= tolerance and (fit.r_squared >= R2_MIN or not exact)
    c6 = float(np.max(vals * np.maximum(1.0, np.array(ts)) ** (d / 2)))
    return CheckReport(
        "nash", "max_y p_{0,t}(0,y) <= C6 (1 v t)^(-d/2)",
        {"exponent": fit.exponent, "r_squared": fit.r_squared, "C6_hat": c6, "replicas": M},
        {"exponent": [target - tolerance, target + tolerance]} | ({"r_squared_min": R2_MIN} if exact else {}),
        bool(ok), time.perf_counter() - t0, _rows("nash_max", ts, vals, errs, M, seed))


# -- gradient estimates ------------------------------------------------------------

def _sup_root(mean: np.ndarray, se: np.ndarray):
    """sup_y sqrt(mean(y)) per time with the delta-method stderr at the maximiser."""
    flat = mean.reshape(len(mean), -1)
    idx = flat.argmax(axis=1)
    m = flat[np.arange(len(flat)), idx]
    s = se.reshape(len(se), -1)[np.arange(len(flat)), idx]
    root = np.sqrt(m)
    return root, np.where(root > 0, s / (2 * np.where(root > 0, root, 1)), 0.0)


def _sup_abs(mean: np.ndarray, se: np.ndarray):
    flat = np.abs(mean.reshape(len(mean), -1))
    idx = flat.argmax(axis=1)
    return flat[np.arange(len(flat)), idx], se.reshape(len(se), -1)[np.arange(len(flat)), idx]


def gradient_decay_check(spec: FieldSpec, t_grid=DEFAULT_T_GRID, M: int = 200, seed: int = 0,
                         workers: int = 1, tolerance: float = 0.1,
                         radius: Optional[int] = None) -> CheckReport:
    """sup_{y'} E[|grad_{e1} p_{0,t}(0, y')|^2]^{1/2} against (1 v t)^{-(d+1)/2}.

    The bound holds for every y', so its rate shows in the supremum over y'; at the
    single point y' = 0 the gradient is smaller by symmetry (reported as well).
    Both the first-argument and the second-argument gradients are checked.
    """
    t0 = time.perf_counter()
    ts = _check_grid(t_grid)
    d = spec.dimension
    mean, se, M = row_features(spec, ts, ["g1sq", "g2sq", "g00sq"], M, seed, workers, radius=radius)
    target = -(d + 1) / 2
    exact = is_deterministic(spec)
    tsa = np.maximum(1.0, np.array(ts))
    obs, thr, rows, ok = {"replicas": M}, {}, [], True
    for name in ("g1sq", "g2sq"):
        v, e = _sup_root(mean[name], se[name])
        fit = fit_power_law(zip(ts, v))
        good, th = _exponent_verdict(fit, target, exact, tolerance, e, hard_slope=True)
        label = "grad1" if name == "g1sq" else "grad2"
        obs[f"{label}_exponent"] = fit.exponent
        obs[f"{label}_r_squared"] = fit.r_squared
        obs[f"{label}_C3_hat"] = float(np.max(v * tsa ** ((d + 1) / 2)))
        thr[label] = th
        ok &= good
        rows += _rows(f"{label}_sup_rms", ts, v, e, M, seed)
    v0 = np.sqrt(mean["g00sq"])
    e0 = np.where(v0 > 0, se["g00sq"] / (2 * np.where(v0 > 0, v0, 1)), 0.0)
    if np.all(v0 > 0):
        obs["grad1_origin_exponent"] = fit_power_law(zip(ts, v0)).exponent
    rows += _rows("grad1_origin_rms", ts, v0, e0, M, seed)
    return CheckReport("gradient_decay", "E[|grad p_{0,t}(y,y')|^2]^(1/2) <= C3 (1 v t)^(-(d+1)/2)",
                       obs, thr, bool(ok), time.perf_counter() - t0, rows)


def second_derivative_decay_check(spec: FieldSpec, t_grid=DEFAULT_T_GRID, M: int = 200, seed: int = 0,
                                  workers: int = 1, tolerance: float = 0.1,
                                  radius: Optional[int] = None) -> CheckReport:
    """sup_{y'} |grad^2 grad^2 pbar| and sup_{y'} E|grad^1_{-e1} grad^2_{e1} p| against t^{-(d+2)/2}."""
    t0 = time.perf_counter()
    ts = _check_grid(t_grid)
    d = spec.dimension
    mean, se, M = row_features(spec, ts, ["d22", "m12abs"], M, seed, workers, radius=radius)
    target = -(d + 2) / 2
    exact = is_deterministic(spec)
    tsa = np.maximum(1.0, np.array(ts))
    obs, thr, rows, ok = {"replicas": M}, {}, [], True
    for name, label in (("d22", "second22"), ("m12abs", "mixed12")):
        v, e = _sup_abs(mean[name], se[name])
        fit = fit_power_law(zip(ts, v))
        good, th = _exponent_verdict(fit, target, exact, tolerance, e)
        obs[f"{label}_exponent"] = fit.exponent
        obs[f"{label}_r_squared"] = fit.r_squared
        obs[f"{label}_C4_hat"] = float(np.max(v * tsa ** ((d + 2) / 2)))
        thr[label] = th
        ok &= good
        rows += _rows(f"{label}_sup", ts, v, e, M, seed)
    return CheckReport("second_derivative_decay", "|grad grad p| <= C4 (1 v t)^(-(d+2)/2)",
                       obs, thr, bool(ok), time.perf_counter() - t0, rows)


def lp_gradient_sum_check(spec: FieldSpec, p: int = 1, t_grid=DEFAULT_T_GRID, M: int = 200, seed: int = 0,
                          workers: int = 1, tolerance: float = 0.1,
                          radius: Optional[int] = None) -> CheckReport:
    """(sum_{y'} E|grad^1_{e1} p_{0,t}(0, y')|^p)^{1/p} against t^{-(1 + d(1 - 1/p))/2}."""
    if p not in (1, 2):
        raise ValueError("p must be 1 or 2")
    t0 = time.perf_counter()
    ts = _check_grid(t_grid)
    d = spec.dimension
    name = f"lp{p}"
    mean, se, M = row_features(spec, ts, [name], M, seed, workers, radius=radius)
    v = mean[name] ** (1.0 / p)
    e = se[name] if p == 1 else np.where(v > 0, se[name] / (2 * np.where(v > 0, v, 1)), 0.0)
    target = -(1 + d * (1 - 1 / p)) / 2
    fit = fit_power_law(zip(ts, v))
    ok, thr = _exponent_verdict(fit, target, is_deterministic(spec), tolerance, e)
    return CheckReport(f"lp_gradient_sum_p{p}", f"||grad p_{{0,t}}(0,.)||_{p} <= C4 (1 v t)^({target:g})",
                       {"exponent": fit.exponent, "r_squared": fit.r_squared, "replicas": M}, thr,
                       bool(ok), time.perf_counter() - t0, _rows(f"lp{p}_gradient_sum", ts, v, e, M, seed))


# -- near-diagonal lower bounds ---------------------------------------------------

def _cube_coords(w: int, d: int) -> np.ndarray:
    ax = np.arange(-w, w + 1)
    return np.stack(np.meshgrid(*[ax] * d, indexing="ij"), axis=-1)


def near_diagonal_lower_check(spec: FieldSpec, t_grid=DEFAULT_T_GRID, eps: float = 0.5, M: int = 200,
                              seed: int = 0, workers: int = 1, radius: Optional[int] = None) -> CheckReport:
    """min_{|y'| <= sqrt t} pbar t^{d/2} and min over eps sqrt t <= |y'| <= sqrt t of |grad pbar| t^{(d+1)/2}.

    In d = 1 the gradient minimum runs over both directions x = +e1, -e1.  In
    d >= 2 a fixed direction x is orthogonal to y' somewhere on every sphere, where
    grad_x pbar vanishes to leading order, so the steepest direction is used instead.
    Positivity is required with a 3 stderr margin at every grid time.
    """
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    t0 = time.perf_counter()
    ts = _check_grid(t_grid, minimum=1)
    d = spec.dimension
    mean, se, M = row_features(spec, ts, ["p", "g1dir", "g2dir"], M, seed, workers, radius=radius)
    w = next(iter(mean.values())).shape[-1] // 2
    r = np.sqrt((_cube_coords(w, d) ** 2).sum(axis=-1))
    rows, obs_c, margins = [], {}, {}
    cs = {"p": [], "grad2": [], "grad1": []}
    ok = True
    for ti, t in enumerate(ts):
        disk = r <= math.sqrt(t)
        ring = disk & (r >= eps * math.sqrt(t))
        if not ring.any():
            raise ValueError(f"empty gradient window at t={t}")
        pv, pe = mean["p"][ti][disk], se["p"][ti][disk]
        i = pv.argmin()
        cs["p"].append((pv[i] * t ** (d / 2), pe[i] * t ** (d / 2)))
        for key, label in (("g2dir", "grad2"), ("g1dir", "grad1")):
            g, ge = np.abs(mean[key][ti]), se[key][ti]      # (2d, cube)
            j = g.argmin(axis=0) if d == 1 else g.argmax(axis=0)
            gv = np.take_along_axis(g, j[None], 0)[0][ring]
            gs = np.take_along_axis(ge, j[None], 0)[0][ring]
            i = gv.argmin()
            scale = t ** ((d + 1) / 2)
            cs[label].append((gv[i] * scale, gs[i] * scale))
    for label, vals in cs.items():
        v = np.array([a for a, _ in vals])
        e = np.array([b for _, b in vals])
        obs_c[f"c_{label}"] = float(v.min())
        margins[label] = float((v - 3 * e).min())
        ok &= bool(np.all(v - 3 * e > 0))
        rows += _rows(f"lower_{label}", ts, v, e, M, seed)
    obs = obs_c | {"margin_" + k: v for k, v in margins.items()} | {"replicas": M, "eps": eps}
    return CheckReport("near_diagonal_lower", "pbar >= C15 t^(-d/2) and |grad pbar| >= C16 t^(-(d+1)/2) near the diagonal",
                       obs, {"lower_constant_min": 0.0, "band": "3 stderr"}, ok, time.perf_counter() - t0, rows)


# -- entropy ----------------------------------------------------------------------

def refine_grid(grid) -> tuple:
    """Insert the geometric midpoint between consecutive entries."""
    g = np.asarray(grid, dtype=float)
    mid = np.sqrt(g[:-1] * g[1:])
    return tuple(float(v) for v in np.sort(np.concatenate([g, mid])))


@dataclass(frozen=True)
class EntropyStats:
    """Per replica: H_t and E|X_t| on ``times``; Delta-entropy terms for ``pairs`` (s, t).

    For a pair (s, t) the left side sum_x p_{0,s}(0,x) Delta(p_{0,s+t}(0,.), p_{s,s+t}(x,.))^2
    is evaluated exactly over all x with p_{0,s}(0,x) > ``cutoff``; the dropped weight
    w enters as the bound 2 w on the missing part (Delta^2 <= 2).
    """

    spec: FieldSpec
    times: tuple
    pairs: tuple
    concave_times: tuple = ()
    cutoff: float = 1e-12
    deficit: float = DEFICIT
    tol: float = DEFAULT_TOL
    radius: Optional[int] = None

    def all_times(self) -> tuple:
        ts = set(self.times)
        for s, t in self.pairs:
            ts |= {s, t, s + t} - {0.0}
        return tuple(sorted(ts))

    def layout(self) -> _Layout:
        nt, npair = len(self.times), len(self.pairs)
        nc = max(len(self.concave_times) - 2, 0)
        return _Layout([("H", (nt,)), ("disp", (nt,)), ("dd", (nc,)), ("violations", (1,)), ("worst_drop", (1,)),
                        ("lhs", (npair,)), ("rhs", (npair,)), ("gap", (npair,)), ("dropped", (npair,))])

    def __call__(self, field: EnvironmentField) -> np.ndarray:
        d = self.spec.dimension
        o = np.zeros((1, d), dtype=np.int64)
        every = self.all_times()
        box, res = replica_rows(field, self.spec, every, o, 0.0, self.deficit, self.tol, self.radius)
        rows = {t: res.states[i, :, 0] for i, t in enumerate(every)}
        rows[0.0] = (np.abs(box.vertices).sum(axis=1) == 0).astype(float)
        norm = np.sqrt((box.vertices ** 2).sum(axis=1))
        H = np.array([entropy(rows[t]) for t in self.times])
        disp = np.array([float(norm @ rows[t]) for t in self.times])
        drops = np.diff(np.array([entropy(rows[t]) for t in every]))
        g = np.array(self.concave_times)
        hc = np.array([entropy(rows[t]) for t in g])
        dd = np.diff(np.diff(hc) / np.diff(g)) if len(g) > 2 else np.empty(0)
        out = {"H": H, "disp": disp, "dd": dd, "violations": [float((drops < -ENTROPY_SLACK).sum())],
               "worst_drop": [float(max(-drops.min(initial=0.0), 0.0))]}
        lhs, rhs, dropped = [], [], []
        for s, t in self.pairs:
            r_t, r_st = rows[t], rows[s + t]
            rhs.append(2.0 * (entropy(r_st) - entropy(r_t)))
            if s == 0:
                lhs.append(0.0)
                dropped.append(0.0)
                continue
            w = rows[s]
            keep = w > self.cutoff
            xs = box.vertices[keep]
            box2, res2 = certified_rows(field, self.spec, s, [s + t], xs, self.deficit, self.tol)
            R = max(box.radius, box2.radius)
            ref = box.embed(r_st, R)
            acc = 0.0
            for j, wx in enumerate(w[keep]):
                acc += wx * delta_distance(ref.ravel(), box2.embed(res2.states[0, :, j], R).ravel()) ** 2
            lhs.append(acc)
            dropped.append(float(w[~keep].sum()))
        out["lhs"], out["rhs"], out["dropped"] = lhs, rhs, dropped
        out["gap"] = [r - l - 2 * dr for r, l, dr in zip(rhs, lhs, dropped)]
        return self.layout().pack(out)


def entropy_suite(spec: FieldSpec, s_grid=(1.0, 2.0, 4.0), t_grid=(1.0, 2.0, 4.0, 8.0, 16.0, 32.0),
                  delta_pairs=((1.0, 4.0), (1.0, 16.0)), M: int = 200, seed: int = 0, workers: int = 1,
                  stability: float = 0.2, radius: Optional[int] = None) -> CheckReport:
    """Monotonicity, concavity, the entropy-difference bound and the Delta-entropy inequality.

    C7 is the empirical sup of t (Hbar_{t+s} - Hbar_t) / s over the (s, t) grid; it
    must change by at most ``stability`` (relative) when both grids are refined
    by geometric midpoints.  The Delta-entropy inequality is compared per replica
    (right side minus left side), which removes most of the replica noise.
    """
    t0 = time.perf_counter()
    t_grid = tuple(float(t) for t in t_grid)
    s_grid = tuple(float(s) for s in s_grid)
    if min(t_grid) < 1.0:
        raise ValueError("entropy difference bound needs t >= t0 = 1")
    tf = refine_grid(t_grid)
    sf = refine_grid(s_grid) if len(s_grid) > 1 else s_grid
    times = set(tf)
    for s in sf:
        times |= {t + s for t in tf}
    times = tuple(sorted(times))
    pairs = tuple((float(s), float(t)) for s, t in delta_pairs)
    M = _replicas(spec, M)
    stat = EntropyStats(spec, times, pairs, tf, radius=radius)
    est = annealed(stat, spec, M, seed, workers, keep_values=False)
    lay = stat.layout()
    mean, se = lay.unpack(est.mean), lay.unpack(est.stderr)
    Hbar = dict(zip(times, mean["H"]))

    def c7(tg, sg):
        return max(t * (Hbar[t + s] - Hbar[t]) / s for t in tg for s in sg)

    c7_coarse, c7_fine = c7(t_grid, s_grid), c7(tf, sf)
    rel = abs(c7_fine - c7_coarse) / abs(c7_coarse) if c7_coarse else math.inf
    # concavity: divided second differences of Hbar on the refined geometric grid,
    # averaged per replica so that the stderr sees the correlation across t
    g = np.array(tf)
    dd, dd_se = mean["dd"], se["dd"]
    concave_ok = bool(np.all(dd <= 3 * dd_se + ENTROPY_SLACK))
    d = spec.dimension
    bn = float(np.max(mean["H"] - d * np.log1p(mean["disp"])))
    gap, gap_se = mean["gap"], se["gap"]
    delta_ok = bool(np.all(gap >= -3 * gap_se))
    violations = int(round(float(mean["violations"][0]) * M))
    ok = violations == 0 and concave_ok and math.isfinite(c7_fine) and rel <= stability and delta_ok
    rows = _rows("entropy_mean", times, mean["H"], se["H"], M, seed)
    rows += _rows("concavity_second_difference", g[1:-1], dd, dd_se, M, seed)
    for (s, t), l, r, gv, ge in zip(pairs, mean["lhs"], mean["rhs"], gap, gap_se):
        rows += _rows(f"delta_lhs_s{s:g}", [t], [l], [0.0], M, seed)
        rows += _rows(f"delta_rhs_s{s:g}", [t], [r], [0.0], M, seed)
        rows += _rows(f"delta_gap_s{s:g}", [t], [gv], [ge], M, seed)
    obs = {"monotonicity_violations": violations, "max_concavity_excess": float(np.max(dd - 3 * dd_se)),
           "C7_hat": c7_coarse, "C7_hat_refined": c7_fine, "C7_relative_change": rel,
           "bass_nash_gap": bn, "delta_lhs": mean["lhs"], "delta_rhs": mean["rhs"],
           "delta_gap": gap, "delta_gap_stderr": gap_se, "delta_dropped_weight": mean["dropped"],
           "replicas": M}
    thr = {"monotonicity_slack": ENTROPY_SLACK, "concavity": "<= 3 stderr", "C7_stability": stability,
           "delta": "lhs <= rhs + 3 stderr"}
    return CheckReport("entropy_suite", "Hbar_{t+s} - Hbar_t <= C7 s/t and E E[Delta^2] <= 2 (Hbar_{s+t} - Hbar_t)",
                       obs, thr, bool(ok), time.perf_counter() - t0, rows)


# -- covariance and local limit theorems -------------------------------------------

@dataclass
class SigmaEstimate:
    matrix: np.ndarray
    stderr: np.ndarray
    horizon: float
    method: str
    replicas: int
    positive_definite: bool


@dataclass(frozen=True)
class MomentStats:
    """E^omega[X_T X_T^T] / T from the kernel row of one replica."""

    spec: FieldSpec
    horizon: float
    deficit: float = DEFICIT
    tol: float = DEFAULT_TOL

    def __call__(self, field):
        d = self.spec.dimension
        box, res = replica_rows(field, self.spec, [self.horizon], np.zeros((1, d), dtype=np.int64),
                                0.0, self.deficit, self.tol)
        y = box.vertices.astype(float)
        p = res.states[0, :, 0]
        return (y.T * p) @ y / self.horizon


@dataclass(frozen=True)
class PathMomentStats:
    horizon: float
    paths: int
    path_seed: int

    def __call__(self, field):
        rng = _rng.derive_seed(self.path_seed, int(field.seed))
        b = sample_paths(field, 0.0, np.zeros(field.dimension, dtype=np.int64), self.horizon, self.paths, rng)
        x = b.positions_at(self.horizon).astype(float)
        return x.T @ x / (len(x) * self.horizon)


def estimate_sigma(spec: FieldSpec, n: int = 8, t: float = 1.0, M: int = 200, seed: int = 0,
                   workers: int = 1, method: str = "kernel", paths: int = 100) -> SigmaEstimate:
    """Empirical covariance of X_{t n^2} / (n sqrt t) over replicas.

    ``kernel`` takes exact second moments of each replica's row; ``paths`` samples
    ``paths`` walks per replica.  The estimate is symmetrised; a matrix that is not
    positive definite is flagged, not raised.
    """
    if n < 8:
        raise ValueError("estimate_sigma needs n >= 8")
    if not t > 0:
        raise ValueError("t must be positive")
    T = float(t * n * n)
    if method == "kernel":
        M = _replicas(spec, M)
        stat = MomentStats(spec, T)
    elif method == "paths":
        stat = PathMomentStats(T, int(paths), _rng.derive_seed(seed, 77))
    else:
        raise ValueError(f"unknown method {method!r}")
    est = annealed(stat, spec, M, seed, workers, keep_values=False)
    m = np.atleast_2d(est.mean)
    m = 0.5 * (m + m.T)
    pd = bool(np.linalg.eigvalsh(m).min() > 0)
    return SigmaEstimate(m, np.atleast_2d(est.stderr), T, method, M, pd)


def default_k_grid(d: int) -> np.ndarray:
    ax = np.arange(-2.0, 2.0001, 0.25) if d == 1 else np.arange(-1.5, 1.5001, 0.5)
    return np.stack(np.meshgrid(*[ax] * d, indexing="ij"), axis=-1).reshape(-1, d)


@dataclass(frozen=True)
class LcltStats:
    """p_{0,t n^2}(0, [y n]) and p(0, [y n] + e_i) for every n, plus second moments at the largest n."""

    spec: FieldSpec
    t: float
    n_grid: tuple
    points: tuple          # K as a tuple of tuples
    deficit: float = DEFICIT
    tol: float = DEFAULT_TOL

    def layout(self):
        d, nn, k = self.spec.dimension, len(self.n_grid), len(self.points)
        return _Layout([("p", (nn, k)), ("grad", (nn, d, k)), ("moments", (d, d))])

    def __call__(self, field):
        d = self.spec.dimension
        K = np.array(self.points, dtype=float)
        times = [self.t * n * n for n in self.n_grid]
        box, res = replica_rows(field, self.spec, times, np.zeros((1, d), dtype=np.int64), 0.0,
                                self.deficit, self.tol)
        pv, gv = [], []
        for i, n in enumerate(self.n_grid):
            row = res.states[i, :, 0]
            z = lattice_points(K, n)

            def val(v):
                j = box.index(v)
                return np.where(j >= 0, row[np.maximum(j, 0)], 0.0)

            base = val(z)
            pv.append(base)
            gv.append([val(z + np.eye(d, dtype=np.int64)[a]) - base for a in range(d)])
        y = box.vertices.astype(float)
        p = res.states[-1, :, 0]
        mom = (y.T * p) @ y / times[-1]
        return self.layout().pack({"p": pv, "grad": gv, "moments": mom})


def lattice_points(K: np.ndarray, n: int) -> np.ndarray:
    """[y n]: the integer part, componentwise."""
    return np.floor(np.asarray(K, dtype=float) * n + 1e-9).astype(np.int64)


def _lclt_run(spec, t, n_grid, K, M, seed, workers):
    n_grid = tuple(int(n) for n in n_grid)
    if len(n_grid) < 2 or any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        raise ValueError("n grid must be increasing with at least 2 entries")
    K = default_k_grid(spec.dimension) if K is None else np.atleast_2d(np.asarray(K, dtype=float))
    M = _replicas(spec, M)
    stat = LcltStats(spec, float(t), n_grid, tuple(map(tuple, K.tolist())))
    est = annealed(stat, spec, M, seed, workers, keep_values=False)
    lay = stat.layout()
    return n_grid, K, M, lay.unpack(est.mean), lay.unpack(est.stderr)


def _sigma_band(sig, sig_se, fn):
    """sup over y of the change of fn(cov) when cov moves by its stderr (zero when exact)."""
    if not np.any(sig_se > 0):
        return 0.0
    base = fn(sig)
    worst = 0.0
    for sgn in (1.0, -1.0):
        c = sig + sgn * sig_se
        c = 0.5 * (c + c.T)
        if np.linalg.eigvalsh(c).min() > 0:
            worst = max(worst, float(np.max(np.abs(fn(c) - base))))
    return worst


def _decreasing(errs, bands, strict):
    if strict:
        return bool(all(b < a for a, b in zip(errs, errs[1:])))
    return bool(all(b <= a + math.hypot(ea, eb) for (a, ea), (b, eb) in
                    zip(zip(errs, bands), zip(errs[1:], bands[1:]))))


def lclt_check(spec: FieldSpec, t: float = 1.0, n_grid=DEFAULT_N_GRID, K=None, M: int = 200, seed: int = 0,
               workers: int = 1, sigma: Optional[np.ndarray] = None, final_fraction: float = 0.02) -> CheckReport:
    """sup_{y in K} |n^d pbar_{0,t n^2}(0, [y n]) - k_t^Sigma(y)| along the n grid.

    Sigma^2 is the empirical covariance from the same replicas at the largest n
    unless given; its stderr is carried into the comparison band.  Constant fields
    need a strictly decreasing error and a final error below ``final_fraction``
    times k_t(0).
    """
    t0 = time.perf_counter()
    n_grid, K, M, mean, se = _lclt_run(spec, t, n_grid, K, M, seed, workers)
    d = spec.dimension
    if sigma is None:
        sig = 0.5 * (mean["moments"] + mean["moments"].T)
        sig_se = se["moments"]
    else:
        sig, sig_se = np.atleast_2d(np.asarray(sigma, dtype=float)), np.zeros((d, d))
    gk = GaussianKernel(sig)
    kt = gk.density(t, K)
    sband = _sigma_band(sig, sig_se, lambda c: GaussianKernel(c).density(t, K))
    errs, bands = [], []
    for i, n in enumerate(n_grid):
        diff = np.abs(n ** d * mean["p"][i] - kt)
        j = int(diff.argmax())
        errs.append(float(diff[j]))
        bands.append(3 * n ** d * float(se["p"][i][j]) + sband)
    k0 = float(gk.density(t, np.zeros(d))[0])
    exact = is_deterministic(spec)
    dec = _decreasing(errs, bands, exact)
    ok = dec and (errs[-1] < final_fraction * k0 if exact else True)
    obs = {"errors": errs, "bands": bands, "sigma2": sig, "k_t0": k0, "decreasing": dec, "replicas": M}
    thr = {"decreasing": "strict" if exact else "within 3 stderr"}
    if exact:
        thr["final_error_max"] = final_fraction * k0
    return CheckReport("lclt", "sup_K |n^d pbar_{0,tn^2}(0,[yn]) - k_t(y)| -> 0", obs, thr, bool(ok),
                       time.perf_counter() - t0, _rows("lclt_sup_error", n_grid, errs, np.array(bands) / 3, M, seed))


def gradient_lclt_check(spec: FieldSpec, t: float = 1.0, n_grid=DEFAULT_N_GRID, K=None, M: int = 200,
                        seed: int = 0, workers: int = 1, sigma: Optional[np.ndarray] = None,
                        axis: int = 0) -> CheckReport:
    """sup_{y in K} |n^{d+1} grad^2_{e_i} pbar_{0,t n^2}(0, [y n]) - (partial_i k_t^Sigma)(y)|."""
    t0 = time.perf_counter()
    n_grid, K, M, mean, se = _lclt_run(spec, t, n_grid, K, M, seed, workers)
    d = spec.dimension
    if sigma is None:
        sig = 0.5 * (mean["moments"] + mean["moments"].T)
        sig_se = se["moments"]
    else:
        sig, sig_se = np.atleast_2d(np.asarray(sigma, dtype=float)), np.zeros((d, d))
    dk = GaussianKernel(sig).gradient(t, K, axis)
    sband = _sigma_band(sig, sig_se, lambda c: GaussianKernel(c).gradient(t, K, axis))
    errs, bands = [], []
    for i, n in enumerate(n_grid):
        diff = np.abs(n ** (d + 1) * mean["grad"][i][axis] - dk)
        j = int(diff.argmax())
        errs.append(float(diff[j]))
        bands.append(3 * n ** (d + 1) * float(se["grad"][i][axis][j]) + sband)
    exact = is_deterministic(spec)
    dec = _decreasing(errs, bands, exact)
    obs = {"errors": errs, "bands": bands, "sigma2": sig, "decreasing": dec, "replicas": M}
    return CheckReport("gradient_lclt", "n^{d+1} grad pbar_{0,tn^2}(0,[yn]) -> partial_i k_t(y)", obs,
                       {"decreasing": "strict" if exact else "within 3 stderr"}, bool(dec),
                       time.perf_counter() - t0,
                       _rows("gradient_lclt_sup_error", n_grid, errs, np.array(bands) / 3, M, seed))


# -- Green functions ---------------------------------------------------------------

@dataclass(frozen=True)
class GreenStats:
    """G(a, k e1) for a in {0, e1} and k = 0..kmax on a fixed box."""

    radius: int
    kmax: int
    tmax: Optional[float] = None
    tol: float = DEFAULT_TOL

    def __call__(self, field):
        d = field.dimension
        box = LatticeBox(np.zeros(d, dtype=np.int64), self.radius)
        e1 = np.eye(d, dtype=np.int64)[0]
        targets = np.outer(np.arange(self.kmax + 1), e1)
        g = green_values(field, box, targets, anchors=[0 * e1, e1], tmax=self.tmax, tol=self.tol)
        vals = [[est.value for est in row] for row in g]
        bars = [g[0][0].tail_bar, g[0][0].tmax, g[0][0].mass_deficit]
        return np.concatenate([np.ravel(vals), bars])


def green_asymptotics_check(spec: FieldSpec, ks=tuple(range(2, 9)), radius: int = 30,
                            tmax: Optional[float] = None, M: int = 20, seed: int = 0, workers: int = 1,
                            tolerances=(0.1, 0.2, 0.3)) -> CheckReport:
    """Decay of G, of grad G and of the mixed second difference along y = k e1 in d = 3.

    Targets: |y|^{2-d}, |y|^{1-d} and |y|^{-d}.  The forward difference
    G(0, (k+1)e1) - G(0, k e1) is a derivative at the midpoint, so it is fitted
    against k + 1/2.
    """
    if spec.dimension != 3:
        raise ValueError("Green asymptotics are checked in d = 3")
    ks = tuple(int(k) for k in ks)
    if min(ks) < 2:
        raise ValueError("distances must be >= 2")
    t0 = time.perf_counter()
    kmax = max(ks) + 1
    M = _replicas(spec, M)
    est = annealed(GreenStats(radius, kmax, tmax), spec, M, seed, workers, keep_values=False)
    nk = kmax + 1
    G = np.asarray(est.mean[: 2 * nk]).reshape(2, nk)
    Gs = np.asarray(est.stderr[: 2 * nk]).reshape(2, nk)
    bar, tm, deficit = est.mean[2 * nk:]
    k = np.array(ks)
    d = 3
    series = {
        "green": (k, G[0, k], Gs[0, k], -(d - 2)),
        "green_gradient": (k + 0.5, np.abs(G[0, k + 1] - G[0, k]), np.hypot(Gs[0, k + 1], Gs[0, k]), -(d - 1)),
        "green_mixed": (k, np.abs(G[1, k + 1] - G[0, k + 1] - G[1, k] + G[0, k]),
                        np.sqrt(Gs[1, k + 1] ** 2 + Gs[0, k + 1] ** 2 + Gs[1, k] ** 2 + Gs[0, k] ** 2), -d),
    }
    exact = is_deterministic(spec)
    obs = {"G00": float(G[0, 0]), "G00_stderr": float(Gs[0, 0]), "tail_bar": float(bar), "tmax": float(tm),
           "mass_deficit": float(deficit), "radius": radius, "replicas": M}
    thr, rows, ok = {}, [], True
    for (name, (x, v, e, target)), tolerance in zip(series.items(), tolerances):
        fit = fit_power_law(zip(x, v))
        good, th = _exponent_verdict(fit, target, exact, tolerance, e)
        obs[f"{name}_exponent"] = fit.exponent
        obs[f"{name}_r_squared"] = fit.r_squared
        thr[name] = th
        ok &= good
        rows += _rows(name, x, v, e, M, seed)
    return CheckReport("green_asymptotics", "G(y) ~ |y|^(2-d), grad G ~ |y|^(1-d), grad grad G ~ |y|^(-d)",
                       obs, thr, bool(ok), time.perf_counter() - t0, rows)


# -- k_alpha -----------------------------------------------------------------------

def _k_alpha_points(d: int, ymax: float) -> np.ndarray:
    """Lattice y with |y| <= ymax up to the symmetries of k_alpha (0 <= y_d <= ... <= y_1)."""
    m = int(math.floor(ymax))
    ax = np.arange(0, m + 1)
    g = np.stack(np.meshgrid(*[ax] * d, indexing="ij"), axis=-1).reshape(-1, d)
    keep = np.all(np.diff(g, axis=1) <= 0, axis=1) & ((g ** 2).sum(axis=1) <= ymax ** 2 + 1e-9)
    return g[keep]


def k_alpha_check(cases=((1, 2.0), (2, 3.0)), t_grid=(1.0, 4.0, 16.0), ymax: float = 8.0,
                  stability: float = 0.01) -> CheckReport:
    """Grid maximum of sum_z k(t/2, z) k(t/2, y - z) / k(t, y) and its stability under doubling R."""
    t0 = time.perf_counter()
    obs, rows, ok = {}, [], True
    for d, alpha in cases:
        pts = _k_alpha_points(int(d), ymax)
        best, change = 0.0, 0.0
        for t in t_grid:
            col = []
            for y in pts:
                r1 = k_alpha_convolution_ratio(alpha, t, y)
                r2 = k_alpha_convolution_ratio(alpha, t, y, radius=2 * r1.radius)
                col.append(r1.ratio)
                change = max(change, abs(r2.ratio - r1.ratio) / r1.ratio)
                best = max(best, r1.ratio, r2.ratio)
            rows += _rows(f"k_alpha_ratio_d{d}_a{alpha:g}", [t], [max(col)], [0.0], 1, 0)
        key = f"d{d}_alpha{alpha:g}"
        obs[f"{key}_C9_hat"] = best
        obs[f"{key}_doubling_change"] = change
        ok &= math.isfinite(best) and change < stability
    return CheckReport("k_alpha_convolution", "sum_z k(t/2,z) k(t/2,y-z) <= C9 k(t,y) for alpha > d",
                       obs, {"doubling_change_max": stability}, bool(ok), time.perf_counter() - t0, rows)


# -- sampler ------------------------------------------------------------------------

def sampler_tv_check(spec: FieldSpec, t: float = 1.0, n_paths: int = 100_000, seed: int = 0,
                     threshold: float = 0.01) -> CheckReport:
    """Total variation between the empirical law of X_t and the kernel row, in one replica."""
    t0 = time.perf_counter()
    d = spec.dimension
    field = spec.realize(replica_seed(seed, 0))
    o = np.zeros(d, dtype=np.int64)
    paths = sample_paths(field, 0.0, o, t, n_paths, _rng.derive_seed(seed, 99))
    emp = empirical_distribution(paths, t)
    box, res = certified_rows(field, spec, 0.0, [t], o[None])
    row = res.states[0, :, 0]
    tv = 0.0
    seen = 0.0
    for v, w in emp.items():
        j = int(box.index(np.array(v)))
        q = row[j] if j >= 0 else 0.0
        tv += abs(w - q)
        seen += q
    tv = 0.5 * (tv + (row.sum() - seen))
    return CheckReport("sampler_tv", "empirical law of X_t = kernel row", {"tv": tv, "paths": n_paths},
                       {"tv_max": threshold}, bool(tv < threshold), time.perf_counter() - t0,
                       _rows("sampler_tv", [t], [tv], [0.0], 1, seed))


def displacement_check(spec: FieldSpec, T_grid=(4.0, 16.0, 64.0), M: int = 100, paths: int = 100,
                       seed: int = 0, max_ratio: float = 1.6, max_slope: float = RANDOM_SLACK,
                       band=(1.0, 2.5)) -> CheckReport:
    """E[sup_{s <= T} |X_s|] / sqrt(T) stays flat in T.

    ``M`` replicas with ``paths`` walks each run in lockstep; for a constant field
    the replicas coincide and the blocks are just independent batches of walks.
    """
    t0 = time.perf_counter()
    Ts = np.asarray(T_grid, dtype=float)
    d = spec.dimension
    seeds = np.array([replica_seed(seed, i) for i in range(M)], dtype=np.uint64)
    field = spec.realize(int(seeds[0]))
    reps = np.repeat(np.arange(M), paths)
    b = sample_paths(field, 0.0, np.zeros(d, dtype=np.int64), float(Ts.max()), M * paths,
                     _rng.derive_seed(seed, 98), seeds=np.repeat(seeds, paths), replicas=reps,
                     path_ids=np.tile(np.arange(paths), M))
    start = np.repeat(b.positions[b.offsets[:-1]], np.diff(b.offsets), axis=0)
    r = np.sqrt(((b.positions - start) ** 2).sum(axis=1))
    ratios, errs = [], []
    for T in Ts:
        sup = np.maximum.reduceat(np.where(b.jump_times <= T, r, 0.0), b.offsets[:-1])
        per = sup.reshape(M, paths).mean(axis=1) / math.sqrt(T)
        ratios.append(float(per.mean()))
        errs.append(float(per.std(ddof=1) / math.sqrt(M)) if M > 1 else 0.0)
    ratios = np.array(ratios)
    spread = float(ratios.max() / ratios.min())
    slope = float(np.polyfit(np.log(Ts), np.log(ratios), 1)[0])
    ok = spread < max_ratio and abs(slope) <= max_slope
    obs = {"ratios": ratios, "max_min_ratio": spread, "slope": slope, "replicas": M, "paths": paths}
    thr = {"max_min_ratio": max_ratio, "slope_abs_max": max_slope}
    if is_deterministic(spec):
        ok = ok and bool(np.all((ratios >= band[0]) & (ratios <= band[1])))
        thr["ratio_band"] = list(band)
    return CheckReport("displacement", "E[sup_{s<=T} |X_s|] <= C1 sqrt(T)", obs, thr, bool(ok),
                       time.perf_counter() - t0, _rows("displacement_ratio", Ts, ratios, errs, M, seed))
