"""Entropy, Delta-distance, discrete derivatives, k_alpha, Green values and annealing."""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import quad

from . import _rng
from .env import EnvironmentField, FieldSpec
from .kernel import DEFAULT_TOL, KernelSlice, LatticeBox, propagate

# -- measures ---------------------------------------------------------------


@dataclass
class DiscreteMeasure:
    support: np.ndarray     # (m, d) integer vertices
    weights: np.ndarray     # (m,)

    def __post_init__(self):
        self.support = np.atleast_2d(np.asarray(self.support, dtype=np.int64))
        self.weights = np.asarray(self.weights, dtype=float)
        if len(self.support) != len(self.weights):
            raise ValueError("support and weights differ in length")
        if np.any(self.weights < 0):
            raise ValueError("negative weight")
        if self.weights.sum() > 1 + 1e-12:
            raise ValueError("total mass exceeds 1")

    @classmethod
    def from_slice(cls, sl: KernelSlice) -> "DiscreteMeasure":
        return cls(sl.box.vertices, np.clip(sl.values, 0.0, None))

    @classmethod
    def from_dict(cls, d: dict) -> "DiscreteMeasure":
        keys = list(d)
        return cls(np.array(keys, dtype=np.int64).reshape(len(keys), -1), [d[k] for k in keys])

    def as_dict(self) -> dict:
        return {tuple(int(c) for c in v): float(w) for v, w in zip(self.support, self.weights)}


def _weights(m) -> np.ndarray:
    if isinstance(m, DiscreteMeasure):
        return m.weights
    if isinstance(m, KernelSlice):
        return m.values
    if isinstance(m, dict):
        return np.fromiter(m.values(), dtype=float)
    return np.asarray(m, dtype=float)


def entropy(measure) -> float:
    """H(mu) = sum phi(mu(x)), phi(t) = -t ln t, phi(0) = 0."""
    w = _weights(measure)
    if np.any(w < 0):
        raise ValueError("negative weight")
    w = w[w > 0]
    return float(-np.sum(w * np.log(w)))


def delta_distance(mu, nu) -> float:
    """Delta(mu, nu) = (sum (mu - nu)^2 / (mu + nu))^{1/2} over points with mu + nu > 0.

    Arrays are compared entrywise (same enumeration); dicts and DiscreteMeasures
    are aligned on the union of their supports.
    """
    if isinstance(mu, (dict, DiscreteMeasure)) or isinstance(nu, (dict, DiscreteMeasure)):
        a = mu.as_dict() if isinstance(mu, DiscreteMeasure) else dict(mu)
        b = nu.as_dict() if isinstance(nu, DiscreteMeasure) else dict(nu)
        keys = sorted(set(a) | set(b))
        p = np.array([a.get(k, 0.0) for k in keys])
        q = np.array([b.get(k, 0.0) for k in keys])
    else:
        p, q = _weights(mu), _weights(nu)
        if p.shape != q.shape:
            raise ValueError("measures are not on a common enumeration")
    s = p + q
    ok = s > 0
    return float(math.sqrt(np.sum((p[ok] - q[ok]) ** 2 / s[ok])))


# -- kernel tables and discrete derivatives --------------------------------

@dataclass
class KernelTable:
    """f(y, y') on the product of two integer cubes.

    ``values`` has shape ``shape1 + shape2``; index ``(i, j)`` holds f(lo1 + i, lo2 + j).
    NaN marks entries that were not computed or fell off the grid.
    """

    values: np.ndarray
    lo1: tuple
    lo2: tuple
    meta: dict = field(default_factory=dict)

    @property
    def dimension(self) -> int:
        return len(self.lo1)

    def at(self, y, y2) -> float:
        i = np.asarray(y) - np.asarray(self.lo1)
        j = np.asarray(y2) - np.asarray(self.lo2)
        if np.any(i < 0) or np.any(j < 0) or np.any(i >= self.values.shape[:self.dimension]) \
                or np.any(j >= self.values.shape[self.dimension:]):
            return float("nan")
        return float(self.values[tuple(i) + tuple(j)])

    def second_slice(self, y) -> np.ndarray:
        """The function y' -> f(y, y') as a cube array."""
        i = tuple(np.asarray(y) - np.asarray(self.lo1))
        return self.values[i]

    @classmethod
    def from_rows(cls, box: LatticeBox, anchors, rows: np.ndarray, radius: int, meta=None) -> "KernelTable":
        """Table from rows f(anchor, .) given on ``box``; second grid is the cube of ``radius``."""
        anchors = np.atleast_2d(np.asarray(anchors, dtype=np.int64))
        d = box.dimension
        lo1 = anchors.min(axis=0)
        shape1 = tuple(anchors.max(axis=0) - lo1 + 1)
        side = 2 * radius + 1
        vals = np.full(shape1 + (side,) * d, np.nan)
        for a, r in zip(anchors, np.asarray(rows)):
            vals[tuple(a - lo1)] = box.embed(r, radius)
        return cls(vals, tuple(int(v) for v in lo1), (-radius,) * d, dict(meta or {}))


def _unit(x, d) -> tuple[int, int]:
    x = np.asarray(x, dtype=np.int64).ravel()
    if len(x) != d or np.abs(x).sum() != 1:
        raise ValueError(f"{tuple(x)} is not a unit lattice vector")
    axis = int(np.flatnonzero(x)[0])
    return axis, int(x[axis])


def _shifted(a: np.ndarray, axis: int, step: int) -> np.ndarray:
    """b[..., i, ...] = a[..., i + step, ...] with NaN where i + step is off the grid."""
    out = np.full(a.shape, np.nan)
    n = a.shape[axis]
    src = [slice(None)] * a.ndim
    dst = [slice(None)] * a.ndim
    if step >= 0:
        src[axis], dst[axis] = slice(step, n), slice(0, max(n - step, 0))
    else:
        src[axis], dst[axis] = slice(0, n + step), slice(-step, n)
    out[tuple(dst)] = a[tuple(src)]
    return out


def _shift_table(t: KernelTable, which: int, x) -> np.ndarray:
    d = t.dimension
    axis, step = _unit(x, d)
    return _shifted(t.values, axis + (0 if which == 1 else d), step)


def gradient1(table: KernelTable, x) -> KernelTable:
    """grad^1_x f(y, y') = f(y + x, y') - f(y, y')."""
    return KernelTable(_shift_table(table, 1, x) - table.values, table.lo1, table.lo2, dict(table.meta))


def gradient2(table: KernelTable, x) -> KernelTable:
    """grad^2_x f(y, y') = f(y, y' + x) - f(y, y')."""
    return KernelTable(_shift_table(table, 2, x) - table.values, table.lo1, table.lo2, dict(table.meta))


def second_gradient2(table: KernelTable, x, x2) -> KernelTable:
    """f(y, y'+x+x') - f(y, y'+x) - f(y, y'+x') + f(y, y')."""
    d = table.dimension
    a1, s1 = _unit(x, d)
    a2, s2 = _unit(x2, d)
    v = table.values
    fx = _shifted(v, d + a1, s1)
    fxx = _shifted(fx, d + a2, s2)
    fx2 = _shifted(v, d + a2, s2)
    return KernelTable(fxx - fx - fx2 + v, table.lo1, table.lo2, dict(table.meta))


def mixed_gradient(table: KernelTable, x, x2) -> KernelTable:
    """grad^1_x grad^2_x' f(y, y') = f(y+x, y'+x') - f(y, y'+x') - f(y+x, y') + f(y, y')."""
    d = table.dimension
    a1, s1 = _unit(x, d)
    a2, s2 = _unit(x2, d)
    v = table.values
    f1 = _shifted(v, a1, s1)
    f12 = _shifted(f1, d + a2, s2)
    f2 = _shifted(v, d + a2, s2)
    return KernelTable(f12 - f2 - f1 + v, table.lo1, table.lo2, dict(table.meta))


# -- Gaussian limit ----------------------------------------------------------

@dataclass
class GaussianKernel:
    """Density of N(0, t Sigma^2) and its gradient."""

    cov: np.ndarray

    def __post_init__(self):
        self.cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if not np.allclose(self.cov, self.cov.T):
            raise ValueError("covariance is not symmetric")
        if np.linalg.eigvalsh(self.cov).min() <= 0:
            raise ValueError("covariance is not positive definite")
        self._inv = np.linalg.inv(self.cov)
        self._det = float(np.linalg.det(self.cov))

    @property
    def dimension(self) -> int:
        return self.cov.shape[0]

    def density(self, t: float, y) -> np.ndarray:
        y = np.asarray(y, dtype=float).reshape(-1, self.dimension)
        q = np.einsum("ni,ij,nj->n", y, self._inv, y)
        return (2 * math.pi * t) ** (-self.dimension / 2) / math.sqrt(self._det) * np.exp(-q / (2 * t))

    def gradient(self, t: float, y, i: int) -> np.ndarray:
        """(partial_i k_t)(y) = -((Sigma^2)^{-1} y)_i / t * k_t(y)."""
        y = np.asarray(y, dtype=float).reshape(-1, self.dimension)
        return -(y @ self._inv[:, i]) / t * self.density(t, y)


# -- the deterministic kernel k_alpha ------------------------------------------

def k_alpha_radial(alpha: float, t, r, d: int) -> np.ndarray:
    """k_alpha(t, y) as a function of |y| = r."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ValueError("t must be positive")
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore"):
        near = np.maximum(t, 1.0) ** (-d / 2) * np.maximum(1.0, r / np.sqrt(t)) ** (-alpha)
        far = np.where(r > 0, r, 1.0) ** (-d / 2 - alpha / 2)
    return np.where(t <= r, far, near)


def k_alpha(alpha: float, t: float, y, d: Optional[int] = None) -> float:
    """k_alpha(t, y); ``y`` a lattice vector (or a norm together with ``d``)."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if d is None:
        d = len(y)
        r = float(np.sqrt((y ** 2).sum()))
    else:
        r = float(abs(y[0])) if len(y) == 1 else float(np.sqrt((y ** 2).sum()))
    if not t > 0:
        raise ValueError("t must be positive")
    return float(k_alpha_radial(alpha, t, r, d))


@dataclass
class ConvolutionRatio:
    ratio: float
    radius: int
    tail_bound: float   # bound on the omitted part of the sum, relative to the kept part


def _cube_norms(R: int, d: int, center=None) -> np.ndarray:
    ax = np.arange(-R, R + 1, dtype=float)
    grids = np.meshgrid(*[ax] * d, indexing="ij")
    if center is None:
        return np.sqrt(sum(g ** 2 for g in grids))
    return np.sqrt(sum((c - g) ** 2 for g, c in zip(grids, center)))


def k_alpha_shell_tail(alpha: float, t: float, R: int, d: int) -> float:
    """Upper bound on sum_{|z|_inf > R} k_alpha(t, z); finite when alpha > d."""
    m0 = max(R + 1, int(math.ceil(t)) + 1)
    m = np.arange(R + 1, m0 + 100_000, dtype=float)
    count = (2 * m + 1) ** d - (2 * m - 1) ** d
    # |z|_2 >= |z|_inf and k_alpha is radially non-increasing on the lattice
    head = float(np.sum(count * k_alpha_radial(alpha, t, m, d)))
    big = m[-1]
    beta = d / 2 - 1 - alpha / 2
    rest = 2 * d * 3 ** (d - 1) * big ** (beta + 1) / (-beta - 1)
    return head + rest


def k_alpha_convolution_ratio(alpha: float, t: float, y, radius: Optional[int] = None,
                              rel_tail: float = 0.01) -> ConvolutionRatio:
    """sum_z k(t/2, z) k(t/2, y - z) / k(t, y), truncated to |z|_inf <= R.

    R doubles until the certified tail bound is below ``rel_tail`` of the kept sum.
    """
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    d = len(y)
    if not alpha > d:
        raise ValueError(f"convolution stability needs alpha > d (alpha={alpha}, d={d})")
    if not t > 0:
        raise ValueError("t must be positive")
    ry = float(np.sqrt((y ** 2).sum()))
    R = radius if radius is not None else max(16, int(4 * ry), int(4 * math.sqrt(t)))
    while True:
        a = k_alpha_radial(alpha, t / 2, _cube_norms(R, d), d)
        b = k_alpha_radial(alpha, t / 2, _cube_norms(R, d, center=y), d)
        kept = float(np.sum(a * b))
        rmin = max(R + 1 - float(np.abs(y).max()), 0.0)
        tail = float(k_alpha_radial(alpha, t / 2, rmin, d)) * k_alpha_shell_tail(alpha, t / 2, R, d)
        if radius is not None or tail <= rel_tail * kept:
            return ConvolutionRatio(kept / k_alpha(alpha, t, y), R, tail / kept)
        R *= 2


# -- Green functions -----------------------------------------------------------

@dataclass
class GreenEstimate:
    value: float
    truncated_integral: float
    tail_model: float
    tail_bar: float
    tmax: float
    mass_deficit: float
    times: np.ndarray
    integrals: np.ndarray


def green_grid(tmax: float, tmin: float = 1e-2, ratio: float = 2 ** 0.25) -> np.ndarray:
    n = int(math.ceil(math.log(tmax / tmin) / math.log(ratio)))
    g = tmin * ratio ** np.arange(n + 1)
    g[-1] = tmax
    return g[g <= tmax]


def green_values(field: EnvironmentField, box: LatticeBox, targets, x=None, tmax: Optional[float] = None,
                 tol: float = DEFAULT_TOL, truncated: bool = False, anchors=None) -> list:
    """Green values int_0^inf p_{0,t}(x, y) dt for every anchor x and target y.

    The time integral up to ``tmax`` is exact (accumulated along the uniformised
    evolution).  By default ``tmax`` is max(64, 4 |y - x|^2), capped by
    :func:`box_horizon`.  Beyond ``tmax`` the integrand is extrapolated with a fitted
    A t^{-d/2} exp(-q / t) profile; the Nash-type bound C6 int_tmax^inf t^{-d/2} dt,
    with C6 read off the computed rows, is reported as the error bar.
    Returns ``result[i][j]`` for anchor i and target j.
    """
    d = box.dimension
    if d <= 2 and not truncated:
        raise ValueError("Green functions diverge for d <= 2; pass truncated=True for int_0^tmax")
    anchors = np.atleast_2d(np.zeros(d, dtype=np.int64) if anchors is None and x is None else
                            (x if anchors is None else anchors)).astype(np.int64)
    targets = np.atleast_2d(np.asarray(targets, dtype=np.int64))
    if tmax is None:
        tmax = min(max(64.0, 4.0 * float(((targets[:, None, :] - anchors[None]) ** 2).sum(axis=2).max())),
                   box_horizon(field, box))
    times = green_grid(tmax)
    init = np.zeros((len(box), len(anchors)))
    ia = box.index(anchors)
    if np.any(ia < 0):
        raise ValueError("anchor outside box")
    init[ia, np.arange(len(anchors))] = 1.0
    it = box.index(targets)
    if np.any(it < 0):
        raise ValueError("target outside box")
    res = propagate(field, box, 0.0, times, init, tol, integrate=True, probe=it)
    deficit = float(1.0 - res.masses[-1].min())
    late = times >= tmax / 4
    c6 = float((res.maxima[late] * times[late, None] ** (d / 2)).max())
    out = []
    for i in range(len(anchors)):
        row = []
        for j in range(len(targets)):
            trunc = float(res.integrals[-1, j, i])
            if truncated:
                tail, bar = 0.0, 0.0
            else:
                tail = _tail_model(times[late], res.states[late, j, i], tmax, d)
                bar = c6 * tmax ** (1 - d / 2) / (d / 2 - 1)
            row.append(GreenEstimate(trunc + tail, trunc, tail, bar, float(tmax), deficit, times,
                                     res.integrals[:, j, i]))
        out.append(row)
    return out


def box_horizon(field: EnvironmentField, box: LatticeBox) -> float:
    """Time up to which killing on ``box`` leaves kernel values near the centre unbiased.

    Walkers spread like sqrt(2 d cbar t); beyond R^2 / (4 d cbar) the killed and
    free kernels separate visibly even at the centre.  Later times are covered by
    the fitted tail profile instead.
    """
    cbar = FieldSpec(field.model, field.dimension, field.lower_bound).mean_conductance()
    return box.radius ** 2 / (4.0 * box.dimension * cbar)


def green_value(field: EnvironmentField, box: LatticeBox, y, x=None, tmax: Optional[float] = None,
                tol: float = DEFAULT_TOL, truncated: bool = False) -> GreenEstimate:
    """G(x, y) = int_0^inf p_{0,t}(x, y) dt for one pair; see :func:`green_values`."""
    return green_values(field, box, [y], x=x, tmax=tmax, tol=tol, truncated=truncated)[0][0]


def _tail_model(t: np.ndarray, p: np.ndarray, tmax: float, d: int) -> float:
    ok = p > 0
    if ok.sum() < 3:
        return 0.0
    t, p = t[ok], p[ok]
    # log p + (d/2) log t = log A - q / t
    X = np.column_stack([np.ones_like(t), -1.0 / t])
    coef, *_ = np.linalg.lstsq(X, np.log(p) + d / 2 * np.log(t), rcond=None)
    A, q = math.exp(coef[0]), float(coef[1])
    # u = t^{-1/2}: int_tmax^inf A t^{-d/2} e^{-q/t} dt = 2 A int_0^{tmax^-1/2} u^{d-3} e^{-q u^2} du
    val, _ = quad(lambda u: 2 * A * u ** (d - 3) * math.exp(-q * u * u), 0.0, tmax ** -0.5)
    return float(val)


# -- annealing -----------------------------------------------------------------

@dataclass
class MonteCarloEstimate:
    mean: np.ndarray | float
    stderr: np.ndarray | float
    replicas: int
    seed: int
    values: Optional[np.ndarray] = None

    def band(self, k: float = 3.0):
        return self.mean - k * self.stderr, self.mean + k * self.stderr


class RunningMoments:
    """Count, mean and centred second moment, mergeable (Chan et al.)."""

    def __init__(self):
        self.n = 0
        self.mean = 0.0
        self.m2 = 0.0

    def push(self, x):
        x = np.asarray(x, dtype=float)
        other = RunningMoments()
        other.n, other.mean, other.m2 = 1, x, np.zeros_like(x)
        self.merge(other)

    def merge(self, other: "RunningMoments"):
        if other.n == 0:
            return
        if self.n == 0:
            self.n, self.mean, self.m2 = other.n, other.mean, other.m2
            return
        n = self.n + other.n
        delta = other.mean - self.mean
        self.mean = self.mean + delta * (other.n / n)
        self.m2 = self.m2 + other.m2 + delta ** 2 * (self.n * other.n / n)
        self.n = n

    @property
    def stderr(self):
        if self.n < 2:
            return np.zeros_like(np.asarray(self.mean, dtype=float))
        return np.sqrt(self.m2 / (self.n - 1) / self.n)


def replica_seed(master_seed: int, i: int) -> int:
    return _rng.derive_seed(master_seed, _rng.TAG_REPLICA, i)


def _run_replica(args):
    statistic, spec, master_seed, i = args
    try:
        return np.asarray(statistic(spec.realize(replica_seed(master_seed, i))), dtype=float)
    except Exception as exc:  # noqa: BLE001 - re-raised with the replica id
        raise RuntimeError(f"statistic failed on replica {i}: {exc!r}") from exc


def _pairwise(values: list) -> RunningMoments:
    # fixed binary tree over replica indices: independent of how work was split
    if len(values) == 1:
        m = RunningMoments()
        m.push(values[0])
        return m
    h = len(values) // 2
    a = _pairwise(values[:h])
    a.merge(_pairwise(values[h:]))
    return a


def annealed(statistic: Callable[[EnvironmentField], object], spec: FieldSpec, M: int,
             master_seed: int, workers: int = 1, keep_values: bool = True) -> MonteCarloEstimate:
    """Mean and standard error of ``statistic`` over M i.i.d. field replicas.

    Replica i uses the seed derived from (master_seed, i).  ``statistic`` may return
    a scalar or an array; it must be picklable when ``workers > 1``.
    """
    if M < 1:
        raise ValueError("need at least one replica")
    jobs = [(statistic, spec, master_seed, i) for i in range(M)]
    if workers > 1 and M > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            values = list(ex.map(_run_replica, jobs, chunksize=max(1, M // (4 * workers))))
    else:
        values = [_run_replica(j) for j in jobs]
    mom = _pairwise(values)
    mean = mom.mean if np.ndim(mom.mean) else float(mom.mean)
    se = mom.stderr if np.ndim(mom.mean) else float(mom.stderr)
    return MonteCarloEstimate(mean, se, M, int(master_seed), np.array(values) if keep_values else None)
