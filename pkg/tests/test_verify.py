import math

import numpy as np
import pytest

from rcm import Constant, FieldSpec, MarginalLaw, Renewal, StaticIID
from rcm import verify
from rcm.verify import (CheckReport, _bound_verdict, _exponent_verdict, default_k_grid, estimate_sigma,
                        fit_power_law, lattice_points, refine_grid)

C1 = FieldSpec(Constant(1.0), 1)


def test_fit_power_law_exact():
    fit = fit_power_law([(t, 3.0 * t ** -0.75) for t in (1, 2, 4, 8)])
    assert fit.exponent == pytest.approx(-0.75)
    assert math.exp(fit.intercept) == pytest.approx(3.0)
    assert fit.r_squared == pytest.approx(1.0)
    with pytest.raises(ValueError):
        fit_power_law([(1, 1.0), (2, 0.5)])
    with pytest.raises(ValueError):
        fit_power_law([(1, 1.0), (2, 0.0), (4, 0.1)])


def test_bound_verdict():
    ts = [4, 8, 16, 32]
    ok, C = _bound_verdict(ts, [1 / t for t in ts], [0] * 4, -1.0)
    assert ok and C == pytest.approx(1.0)
    # slower decay violates the bound unless the errors cover it
    slow = [t ** -0.5 for t in ts]
    assert not _bound_verdict(ts, slow, [0] * 4, -1.0)[0]
    assert _bound_verdict(ts, slow, [0.1] * 4, -1.0)[0]


def test_exponent_verdict_exact_and_random():
    fit = fit_power_law([(t, t ** -1.02) for t in (4, 8, 16, 32)])
    assert _exponent_verdict(fit, -1.0, True, 0.05)[0]
    assert not _exponent_verdict(fit, -1.5, True, 0.1)[0]
    # random: slope too shallow only matters when the slope is required
    shallow = fit_power_law([(t, t ** -0.8) for t in (4, 8, 16, 32)])
    ok_soft, thr = _exponent_verdict(shallow, -1.0, False, 0.1, errs=[1.0] * 4)
    ok_hard, _ = _exponent_verdict(shallow, -1.0, False, 0.1, errs=[1.0] * 4, hard_slope=True)
    assert ok_soft and not ok_hard and thr["slope_ok"] is False


def test_refine_grid_and_lattice_points():
    assert refine_grid((1, 4, 16)) == (1.0, 2.0, 4.0, 8.0, 16.0)
    assert lattice_points(np.array([[-0.25], [0.5], [1.0]]), 4).ravel().tolist() == [-1, 2, 4]
    assert lattice_points(np.array([[-0.3]]), 4).ravel().tolist() == [-2]
    assert default_k_grid(1).shape == (17, 1)
    assert default_k_grid(2).shape == (49, 2)


def test_report_serialisation():
    r = CheckReport("x", "target", {"a": np.float64(1.5), "b": np.array([1, 2]), "c": np.bool_(True)},
                    {"t": (1, 2)}, True, 0.25, [])
    d = r.to_dict()
    assert d == {"name": "x", "target": "target", "observed": {"a": 1.5, "b": [1, 2], "c": True},
                 "threshold": {"t": [1, 2]}, "pass": True, "seconds": 0.25}
    assert r.summary_line().startswith("PASS  x")
    assert verify.summarize([r]) and not verify.summarize([r, CheckReport("y", "", {}, {}, False)])


def test_nash_constant_d1_exact_prefactor():
    rep = verify.nash_check(C1, (4, 8, 16, 32))
    assert rep.passed
    # max_y p_t(0, y) = e^{-2t} I_0(2t) ~ (4 pi t)^{-1/2}
    assert rep.observed["exponent"] == pytest.approx(-0.5, abs=0.02)
    assert rep.series[0][:3] == ("nash_max", 4.0, pytest.approx(math.exp(-8) * np.i0(8.0)))


def test_gradient_constant_d1():
    g = verify.gradient_decay_check(C1, (4, 8, 16, 32))
    s = verify.second_derivative_decay_check(C1, (4, 8, 16, 32))
    assert g.passed and s.passed
    assert g.observed["grad2_exponent"] == pytest.approx(-1.0, abs=0.1)
    # the origin is a critical point of the Gaussian: its gradient decays faster
    assert g.observed["grad1_origin_exponent"] < -1.3


def test_lp_gradient_constant_d1():
    for p, target in ((1, -0.5), (2, -0.75)):
        rep = verify.lp_gradient_sum_check(C1, p, (4, 8, 16, 32))
        assert rep.passed
        assert rep.observed["exponent"] == pytest.approx(target, abs=0.1)


def test_near_diagonal_constant():
    rep = verify.near_diagonal_lower_check(C1, (4, 8, 16))
    assert rep.passed
    # min over |y| <= sqrt t of sqrt(t) p_t(0, y) tends to e^{-1/4} (4 pi)^{-1/2}
    assert rep.observed["c_p"] == pytest.approx(math.exp(-0.25) / math.sqrt(4 * math.pi), rel=0.05)


def test_entropy_constant_field():
    rep = verify.entropy_suite(C1, (1, 2), (1, 2, 4, 8), ((1, 4),), M=1)
    assert rep.passed
    assert rep.observed["monotonicity_violations"] == 0
    gap = rep.observed["delta_gap"][0]
    assert gap > 0


def test_estimate_sigma_constant():
    est = estimate_sigma(C1, n=8)
    assert est.matrix[0, 0] == pytest.approx(2.0, rel=1e-6)
    assert est.positive_definite
    with pytest.raises(ValueError):
        estimate_sigma(C1, n=4)
    with pytest.raises(ValueError):
        estimate_sigma(C1, method="magic")


def test_estimate_sigma_routes_agree():
    spec = FieldSpec(StaticIID(MarginalLaw("two_point", (1.0, 3.0))), 1)
    a = estimate_sigma(spec, n=8, M=12, seed=3)
    b = estimate_sigma(spec, n=8, M=12, seed=3, method="paths", paths=400)
    assert abs(a.matrix[0, 0] - b.matrix[0, 0]) < 4 * math.hypot(a.stderr[0, 0], b.stderr[0, 0]) + 0.1


def test_lclt_constant_small():
    rep = verify.lclt_check(C1, 1.0, (4, 8))
    assert rep.passed and rep.observed["errors"][1] < rep.observed["errors"][0]
    g = verify.gradient_lclt_check(C1, 1.0, (4, 8))
    assert g.passed


def test_k_alpha_check_small():
    rep = verify.k_alpha_check(((1, 2.0),), (1.0, 4.0), 4.0)
    assert rep.passed and math.isfinite(rep.observed["d1_alpha2_C9_hat"])


def test_green_requires_d3():
    with pytest.raises(ValueError):
        verify.green_asymptotics_check(C1)
    with pytest.raises(ValueError):
        verify.green_asymptotics_check(FieldSpec(Constant(1.0), 3), ks=(1, 2, 3))


def test_grid_validation():
    with pytest.raises(ValueError):
        verify.nash_check(C1, (4, 8))
    with pytest.raises(ValueError):
        verify.nash_check(C1, (4, 16, 8, 32))
    with pytest.raises(ValueError):
        verify.near_diagonal_lower_check(C1, (4, 8), eps=1.0)


def test_displacement_constant():
    rep = verify.displacement_check(C1, (4, 16, 64), M=20, paths=50, seed=1)
    assert rep.passed
    assert 1.0 <= min(rep.observed["ratios"]) <= max(rep.observed["ratios"]) <= 2.5


def test_memo_is_bounded(monkeypatch):
    monkeypatch.setattr(verify, "_MEMO_SIZE", 2)
    verify.clear_row_memo()
    spec = FieldSpec(Renewal(MarginalLaw("two_point", (1.0, 2.0))), 1)
    first = verify.nash_check(spec, (1, 2, 4, 8), M=3, seed=0)
    verify.nash_check(spec, (1, 2, 4, 8), M=3, seed=1)
    assert len(verify._ROW_MEMO) == 2
    # evicted rows are recomputed bit for bit
    again = verify.nash_check(spec, (1, 2, 4, 8), M=3, seed=0)
    assert again.series == first.series
