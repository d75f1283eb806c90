"""Exact simulation of the variable-speed walk by the jump-time construction.

Holding times solve  int_{J_{n-1}}^{J_n} mu_u(Y_{n-1}) du = E_n  with E_n ~ Exp(1).
Conductances are piecewise constant in time, so the cumulative hazard is
piecewise linear and is inverted exactly, piece by piece.  Many paths, possibly
in different replicas of the same field law, advance in lockstep.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from . import _rng
from .env import EnvironmentField

MAX_JUMPS = 10_000_000


@dataclass
class TrajectorySample:
    s: float
    x: tuple
    horizon: float
    jump_times: np.ndarray          # J_0 = s < J_1 < ...
    positions: np.ndarray           # (n+1, d), Y_0 = x
    exp_draws: Optional[np.ndarray] = None  # E_1..E_n consumed by the recorded jumps

    @property
    def n_jumps(self) -> int:
        return len(self.jump_times) - 1

    @property
    def end(self) -> float:
        return self.s + self.horizon


def position_at(path: TrajectorySample, t: float) -> np.ndarray:
    """X_t for the right-continuous step path."""
    if not path.s <= t <= path.end:
        raise ValueError(f"t={t} outside [{path.s}, {path.end}]")
    k = np.searchsorted(path.jump_times, t, side="right") - 1
    return path.positions[k]


def max_displacement(path: TrajectorySample) -> float:
    """max_n |Y_n - Y_0| (Euclidean) over the jump skeleton inside the horizon."""
    if path.n_jumps == 0:
        return 0.0
    disp = path.positions - path.positions[0]
    return float(np.sqrt((disp ** 2).sum(axis=1)).max())


@dataclass
class PathBatch:
    """Paths stored back to back: path i owns jumps ``offsets[i]:offsets[i+1]``."""

    s: float
    x: tuple
    horizon: float
    offsets: np.ndarray
    jump_times: np.ndarray
    positions: np.ndarray
    exp_draws: np.ndarray
    path_ids: np.ndarray
    replicas: np.ndarray

    def __len__(self):
        return len(self.offsets) - 1

    def path(self, i: int) -> TrajectorySample:
        a, b = self.offsets[i], self.offsets[i + 1]
        jt = self.jump_times[a:b]
        # the leading entry of each block is J_0 = s with no draw attached
        return TrajectorySample(self.s, self.x, self.horizon, jt, self.positions[a:b],
                                self.exp_draws[a + 1:b])

    def __iter__(self):
        return (self.path(i) for i in range(len(self)))

    def positions_at(self, t: float) -> np.ndarray:
        if not self.s <= t <= self.s + self.horizon:
            raise ValueError(f"t={t} outside the horizon")
        # last index j in each block with jump_times[j] <= t
        rank = np.cumsum(self.jump_times <= t)
        cnt = rank[self.offsets[1:] - 1] - np.concatenate([[0], rank[self.offsets[1:-1] - 1]])
        return self.positions[self.offsets[:-1] + cnt - 1]

    def max_displacements(self) -> np.ndarray:
        d = self.positions - np.repeat(self.positions[self.offsets[:-1]], np.diff(self.offsets), axis=0)
        r = np.sqrt((d ** 2).sum(axis=1))
        return np.maximum.reduceat(r, self.offsets[:-1])

    def to_csv(self, path) -> None:
        d = self.positions.shape[1]
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(["replica", "path", "n", "J"] + [f"y{i + 1}" for i in range(d)]) + "\n")
            for i in range(len(self)):
                a, b = self.offsets[i], self.offsets[i + 1]
                for n, j in enumerate(range(a, b)):
                    row = [str(int(self.replicas[i])), str(int(self.path_ids[i])), str(n),
                           repr(float(self.jump_times[j]))]
                    fh.write(",".join(row + [str(int(c)) for c in self.positions[j]]) + "\n")


def _directions(d):
    # order: +e_0, -e_0, +e_1, -e_1, ...
    steps = np.zeros((2 * d, d), dtype=np.int64)
    steps[0::2][np.arange(d), np.arange(d)] = 1
    steps[1::2][np.arange(d), np.arange(d)] = -1
    return steps


def sample_paths(field: EnvironmentField, s: float, x, T: float, n_paths: int, seed: int,
                 replica: int = 0, seeds: Optional[Sequence[int]] = None,
                 replicas: Optional[Sequence[int]] = None,
                 path_ids: Optional[Sequence[int]] = None) -> PathBatch:
    """Sample ``n_paths`` walks started at (s, x) up to time s + T.

    Path i draws its exponentials and directions from hash(seed, replica, path id, n).
    With ``seeds``/``replicas`` (one entry per path) the walks run in different
    realisations of the same law: path i sees the field ``field`` with seed ``seeds[i]``.
    """
    if not T > 0:
        raise ValueError("horizon must be positive")
    d = field.dimension
    x = np.asarray(x, dtype=np.int64).reshape(d)
    if path_ids is None:
        path_ids = np.arange(n_paths)
    path_ids = np.asarray(path_ids, dtype=np.int64)
    n_paths = len(path_ids)
    env_seeds = np.full(n_paths, field.seed, dtype=np.uint64) if seeds is None else \
        np.asarray(seeds, dtype=np.uint64)
    reps = np.full(n_paths, replica, dtype=np.int64) if replicas is None else \
        np.asarray(replicas, dtype=np.int64)
    if len(env_seeds) != n_paths or len(reps) != n_paths:
        raise ValueError("seeds/replicas must have one entry per path")
    rng_seed = np.uint64(int(seed) % 2**64)
    steps = _directions(d)
    axes = np.repeat(np.arange(d), 2)
    down = steps.min(axis=1) < 0   # bond base is the target for -e_i moves
    end = float(s) + float(T)

    pos = np.tile(x, (n_paths, 1))
    now = np.full(n_paths, float(s))
    njump = np.zeros(n_paths, dtype=np.int64)
    draw = -np.log(_rng.uniform(rng_seed, reps, path_ids, 1, _rng.TAG_EXP))
    left = draw.copy()
    rec_path, rec_t, rec_pos, rec_e = [np.arange(n_paths)], [now.copy()], [pos.copy()], [np.zeros(n_paths)]
    active = np.arange(n_paths)
    static = field.is_static
    while len(active):
        k = len(active)
        p = pos[active]
        t0 = now[active]
        sd = np.repeat(env_seeds[active], 2 * d)
        base = (p[:, None, :] + np.where(down[:, None], steps, 0)[None]).reshape(-1, d)
        ax = np.tile(axes, k)
        if static:
            t1 = np.full(k, end)
        else:
            nxt = field.next_change(np.repeat(t0, 2 * d), base, ax, seeds=sd).reshape(k, 2 * d)
            t1 = np.minimum(nxt.min(axis=1), end)
        tm = 0.5 * (t0 + t1)
        w = field.rates(np.repeat(tm, 2 * d), base, ax, seeds=sd).reshape(k, 2 * d)
        mu = w.sum(axis=1)
        need = left[active]
        room = mu * (t1 - t0)
        jump = need <= room
        # no jump on this piece: consume its hazard and move on
        stay = active[~jump]
        left[stay] -= room[~jump]
        now[stay] = t1[~jump]
        jp = active[jump]
        if len(jp):
            tj = t0[jump] + need[jump] / mu[jump]
            u = _rng.uniform(rng_seed, reps[jp], path_ids[jp], njump[jp] + 1, _rng.TAG_DIR)
            cw = np.cumsum(w[jump], axis=1)
            choice = np.minimum((cw < (u * mu[jump])[:, None]).sum(axis=1), 2 * d - 1)
            pos[jp] += steps[choice]
            now[jp] = tj
            njump[jp] += 1
            if njump[jp].max() > MAX_JUMPS:
                raise RuntimeError(f"jump cap {MAX_JUMPS} exceeded; conductances too large for this horizon")
            rec_path.append(jp)
            rec_t.append(tj)
            rec_pos.append(pos[jp].copy())
            rec_e.append(draw[jp])
            draw[jp] = -np.log(_rng.uniform(rng_seed, reps[jp], path_ids[jp], njump[jp] + 1, _rng.TAG_EXP))
            left[jp] = draw[jp]
        done = (now[active] >= end) & ~np.isin(active, jp)
        active = active[~done]

    rp = np.concatenate(rec_path)
    rt = np.concatenate(rec_t)
    order = np.lexsort((rt, rp))
    counts = np.bincount(rp, minlength=n_paths)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    return PathBatch(float(s), tuple(int(c) for c in x), float(T), offsets, rt[order],
                     np.concatenate(rec_pos)[order], np.concatenate(rec_e)[order], path_ids, reps)


def sample_path(field: EnvironmentField, s: float, x, T: float, seed: int, replica: int = 0,
                path_id: int = 0) -> TrajectorySample:
    """One trajectory; identical to entry ``path_id`` of :func:`sample_paths` with the same stream."""
    return sample_paths(field, s, x, T, 1, seed, replica, path_ids=[path_id]).path(0)


def empirical_distribution(paths, t: float) -> dict:
    """Normalised histogram of X_t over ``paths`` as {vertex tuple: weight}."""
    if isinstance(paths, PathBatch):
        if len(paths) == 0:
            raise ValueError("empty path set")
        pts = paths.positions_at(t)
    else:
        paths = list(paths)
        if not paths:
            raise ValueError("empty path set")
        s0, x0 = paths[0].s, paths[0].x
        if any(p.s != s0 or tuple(p.x) != tuple(x0) for p in paths):
            raise ValueError("paths do not share a starting point")
        pts = np.array([position_at(p, t) for p in paths])
    uniq, cnt = np.unique(pts, axis=0, return_counts=True)
    return {tuple(int(c) for c in v): n / len(pts) for v, n in zip(uniq, cnt)}


def hazard_integral(field: EnvironmentField, vertex, a: float, b: float) -> float:
    """int_a^b mu_u(vertex) du, summed exactly over the constant pieces."""
    d = field.dimension
    v = np.asarray(vertex, dtype=np.int64)
    steps = _directions(d)
    base = v + np.where(steps.min(axis=1)[:, None] < 0, steps, 0)
    ax = np.repeat(np.arange(d), 2)
    ev, _ = field.refresh_events(a, b, base, ax)
    cuts = np.unique(np.concatenate([[a], ev, [b]]))
    mid = 0.5 * (cuts[:-1] + cuts[1:])
    total = 0.0
    for m, h in zip(mid, np.diff(cuts)):
        total += h * float(field.rates(m, base, ax).sum())
    return total
