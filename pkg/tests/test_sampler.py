import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import kstest

from rcm import Constant, LatticeBox, MarginalLaw, Renewal, StaticIID, heat_kernel_row, make_field
from rcm.sampler import (PathBatch, empirical_distribution, hazard_integral, max_displacement, position_at,
                         sample_path, sample_paths)


def _renewal(seed=3, d=1):
    return make_field(Renewal(MarginalLaw("two_point", (1.0, 5.0)), rate=2.0), d, 1.0, seed)


def test_paths_are_reproducible():
    f = _renewal()
    a = sample_paths(f, 0.0, [0], 3.0, 50, seed=1)
    b = sample_paths(f, 0.0, [0], 3.0, 50, seed=1)
    c = sample_paths(f, 0.0, [0], 3.0, 50, seed=2)
    assert np.array_equal(a.jump_times, b.jump_times) and np.array_equal(a.positions, b.positions)
    assert not np.array_equal(a.positions, c.positions)


def test_single_path_matches_batch_entry():
    f = _renewal(d=2)
    batch = sample_paths(f, 0.5, [1, -1], 2.0, 20, seed=4)
    p = sample_path(f, 0.5, [1, -1], 2.0, seed=4, path_id=13)
    q = batch.path(13)
    assert np.array_equal(p.jump_times, q.jump_times)
    assert np.array_equal(p.positions, q.positions)


def test_path_structure():
    f = _renewal(d=2)
    for p in sample_paths(f, 1.0, [0, 0], 2.5, 30, seed=0):
        assert p.jump_times[0] == 1.0
        assert np.all(np.diff(p.jump_times) > 0) and p.jump_times[-1] <= p.end
        steps = np.abs(np.diff(p.positions, axis=0)).sum(axis=1)
        assert np.all(steps == 1)
        assert len(p.exp_draws) == p.n_jumps
        assert np.array_equal(position_at(p, p.end), p.positions[-1])
        with pytest.raises(ValueError):
            position_at(p, 0.5)


def test_hazard_inversion_consumes_exponentials():
    # int_{J_{n-1}}^{J_n} mu_u(Y_{n-1}) du = E_n along every recorded jump
    f = _renewal(seed=5)
    for p in sample_paths(f, 0.0, [0], 4.0, 10, seed=2):
        for n in range(1, p.n_jumps + 1):
            h = hazard_integral(f, p.positions[n - 1], p.jump_times[n - 1], p.jump_times[n])
            assert h == pytest.approx(p.exp_draws[n - 1], rel=1e-10)


def test_hazard_integral_by_quadrature():
    f = _renewal(seed=6)
    v = np.array([2])
    ref, _ = quad(lambda u: f.rates(u, np.array([[2], [1]]), [0, 0]).sum(), 0.0, 3.0, limit=400,
                  points=f.refresh_events(0.0, 3.0, np.array([[2], [1]]), [0, 0])[0])
    assert hazard_integral(f, v, 0.0, 3.0) == pytest.approx(ref, rel=1e-8)


def test_holding_times_are_exponential_in_constant_field():
    f = make_field(Constant(1.5), 1, 1.0, 0)
    b = sample_paths(f, 0.0, [0], 50.0, 40, seed=9)
    gaps = np.concatenate([np.diff(p.jump_times) for p in b])
    assert kstest(gaps * 3.0, "expon").pvalue > 1e-3


def test_empirical_law_matches_kernel_row():
    f = make_field(StaticIID(MarginalLaw("two_point", (1.0, 4.0))), 1, 1.0, 2)
    row = heat_kernel_row(f, LatticeBox([0], 25), 0.0, 1.0, [0])
    emp = empirical_distribution(sample_paths(f, 0.0, [0], 1.0, 20000, seed=1), 1.0)
    assert sum(emp.values()) == pytest.approx(1.0)
    tv = 0.5 * sum(abs(emp.get((x,), 0.0) - row.at([x])) for x in range(-25, 26))
    # sqrt(support / n) scale
    assert tv < 0.03


def test_empirical_distribution_from_list_checks_start():
    f = make_field(Constant(1.0), 1, 1.0, 0)
    a = sample_path(f, 0.0, [0], 1.0, seed=1)
    b = sample_path(f, 0.0, [1], 1.0, seed=1)
    with pytest.raises(ValueError):
        empirical_distribution([a, b], 1.0)
    d = empirical_distribution([a, a], 0.5)
    assert sum(d.values()) == pytest.approx(1.0)


def test_max_displacement():
    f = make_field(Constant(1.0), 2, 1.0, 0)
    b = sample_paths(f, 0.0, [0, 0], 5.0, 30, seed=3)
    md = b.max_displacements()
    for i, p in enumerate(b):
        assert md[i] == pytest.approx(max_displacement(p))
        ends = math.sqrt(((p.positions[-1] - p.positions[0]) ** 2).sum())
        assert max_displacement(p) >= ends


def test_lockstep_replicas_equal_separate_runs():
    spec_law = Renewal(MarginalLaw("two_point", (1.0, 5.0)))
    fields = [make_field(spec_law, 1, 1.0, s) for s in (11, 12)]
    lock = sample_paths(fields[0], 0.0, [0], 2.0, 6, seed=7, seeds=[11, 11, 11, 12, 12, 12],
                        replicas=[0, 0, 0, 1, 1, 1], path_ids=[0, 1, 2, 0, 1, 2])
    for r, f in enumerate(fields):
        solo = sample_paths(f, 0.0, [0], 2.0, 3, seed=7, replica=r)
        for j in range(3):
            assert np.array_equal(lock.path(3 * r + j).positions, solo.path(j).positions)


def test_csv_dump(tmp_path):
    f = make_field(Constant(1.0), 1, 1.0, 0)
    b = sample_paths(f, 0.0, [0], 1.0, 3, seed=1)
    assert isinstance(b, PathBatch)
    b.to_csv(tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "replica,path,n,J,y1"
    assert len(lines) == 1 + len(b.jump_times)


def test_invalid_horizon():
    f = make_field(Constant(1.0), 1, 1.0, 0)
    with pytest.raises(ValueError):
        sample_paths(f, 0.0, [0], 0.0, 3, seed=1)
