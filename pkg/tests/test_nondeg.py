import math
import warnings

import numpy as np
import pytest

from conftest import sim_obs
from qla.errors import InvalidAlphas
from qla.model import constant, get_model
from qla.nondeg import (SupportingFunctionSpec, chi0, fit_tail_exponent, h2_tail_curve, pldi_tail, power_support,
                        q_divergence, separation_check, separation_value, sin_sin_support,
                        supporting_bound_check, wilson_interval)
from qla.qlik import Observations, y_limit


def exp_ratio(delta):
    """(-Y)/|theta - theta*|^2 for S = exp(2 theta), delta = theta* - theta."""
    return (math.expm1(2 * delta) - 2 * delta) / (2 * delta * delta)


class TestQ:
    def test_zero_at_truth(self):
        m = get_model("sin-sin")
        x = np.linspace(-3, 3, 61)[:, None]
        for th in (-2.0, 0.0, 0.7):
            assert np.all(q_divergence(m, x, [th], [th]) == 0.0)

    def test_scalar_value(self):
        q = q_divergence(get_model("exp-theta"), [0.0], [0.5 * math.log(2)], [0.0])
        assert float(q) == pytest.approx(math.log(2) - 0.5, rel=1e-13)

    def test_power_lower_bound(self):
        m = get_model("power")
        xs = np.linspace(-1, 1, 103)[1:-1]
        thetas = np.linspace(0, 0.5, 101)
        for ts in (0.1, 0.25, 0.4):
            for th in thetas:
                if th == ts:
                    continue
                q = q_divergence(m, xs[:, None], [th], [ts])
                assert np.all(q / (th - ts) ** 2 >= np.log1p(xs ** 2) ** 2)

    @pytest.mark.parametrize("name", ["exp-sin2", "sin-sin", "power", "coupled-2d"])
    def test_nonnegative(self, name):
        m = get_model(name)
        rng = np.random.default_rng(1)
        x = rng.normal(scale=2, size=(400, m.d))
        th = m.lo + (m.hi - m.lo) * rng.random((400, m.p))
        ts = m.lo + (m.hi - m.lo) * rng.random((400, m.p))
        assert np.all(q_divergence(m, x, th, ts) >= -1e-10)
        assert np.all(q_divergence(m, x, ts, ts) == 0)

    def test_near_truth_no_cancellation(self):
        q = q_divergence(get_model("exp-theta"), [0.0], [1e-7], [0.0])
        assert float(q) == pytest.approx(2e-14, rel=1e-6)


class TestChi0:
    def test_constant_model(self):
        obs = Observations(4, 1.0, [[0.0], [0.3], [0.1], [0.5], [0.2]], [[0.0]] * 5)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            assert chi0(obs, constant(), [0.0]) == 0.0

    @pytest.mark.parametrize("ts", [0.5, -1.0, 0.0])
    def test_closed_form(self, ts):
        model, obs = sim_obs("exp-theta", ts, 50, seed=2)
        # the ratio increases with theta* - theta, so the inf sits at theta = hi
        expected = exp_ratio(ts - math.pi)
        assert chi0(obs, model, [ts]) == pytest.approx(expected, abs=1e-6)

    def test_local_limit(self):
        model, obs = sim_obs("exp-theta", 0.0, 20, seed=2)
        d = chi0(obs, model, [0.0], return_details=True)
        assert d["local_limit"] == pytest.approx(1.0, rel=1e-12)
        assert exp_ratio(1e-4) == pytest.approx(1.0, abs=1e-3)

    def test_dense_grid(self, exp_sin2_obs):
        model, obs = exp_sin2_obs
        value = chi0(obs, model, [1.0])
        g = np.linspace(-math.pi, math.pi, 100_001)
        g = g[np.abs(g - 1.0) > 1e-12]
        brute = np.min(-y_limit(obs, model, [1.0], g) / (g - 1.0) ** 2)
        assert value >= -1e-10
        assert brute >= value - 1e-6
        assert abs(brute - value) <= 1e-3 * abs(brute)

    def test_two_parameters(self):
        model, obs = sim_obs("coupled-2d", [1.0, 1.4], 100, seed=3)
        v = chi0(obs, model, [1.0, 1.4])
        assert 0 < v < np.inf


class TestH2Tail:
    def test_bounded_model_has_no_tail(self):
        model = get_model("exp-theta")
        c = exp_ratio(0.5 - math.pi)
        r = np.array([1.5, 3.0, 10.0]) / c
        rep = h2_tail_curve(model, [0.5], 20, 1.0, r, 10, seed=1)
        assert np.all(rep.tail_prob_raw == 0)
        assert np.all(rep.ci_low == 0) and np.all(rep.ci_high > 0)

    def test_empty(self):
        rep = h2_tail_curve(get_model("power"), [0.25], 50, 1.0, [2.0], 0, seed=1)
        assert len(rep.chi0_samples) == 0 and np.isnan(rep.tail_prob[0])
        assert rep.to_dict()["fitted_exponent"] is None

    def test_isotonic_and_deterministic(self):
        m = get_model("power")
        a = h2_tail_curve(m, [0.25], 100, 1.0, [1, 3, 10, 30, 100], 40, seed=4)
        b = h2_tail_curve(m, [0.25], 100, 1.0, [1, 3, 10, 30, 100], 40, seed=4)
        assert np.array_equal(a.chi0_samples, b.chi0_samples)
        assert np.all(np.diff(a.tail_prob) <= 0)
        assert np.all(a.chi0_samples >= -1e-10)

    def test_exponent_fit(self):
        r = np.array([1.0, 2.0, 4.0, 8.0])
        assert fit_tail_exponent(r, 0.5 * r ** -1.5) == pytest.approx(1.5)
        assert math.isnan(fit_tail_exponent(r, [1, 1, 0, 0]))

    def test_wilson(self):
        lo, hi = wilson_interval(0, 50)
        assert lo == 0 and 0 < hi < 0.1


class TestPldi:
    def test_empty_region_flagged(self, exp_sin2_obs):
        model = get_model("exp-sin2")
        n = 50
        rmax = math.sqrt(n) * model.diameter
        rep = pldi_tail(model, [1.0], n, 1.0, [1.0, rmax + 1], replicates=5, seed=2)
        assert rep.empty.tolist() == [False, True]
        assert math.isnan(rep.frequency[1]) and rep.to_dict()["frequency"][1] is None

    def test_small_radius_dominates(self):
        rep = pldi_tail(get_model("exp-sin2"), [1.0], 100, 1.0, [0.5, 1, 2, 4, 8], replicates=30, seed=3)
        assert rep.frequency[0] >= rep.frequency[-1]
        assert np.all(np.diff(rep.sup_log_z, axis=1) <= 0)


class TestSeparation:
    def test_degree_zero(self):
        rep = separation_check(0, [1.0], 0.5, 0.5, [10, 1000], samples=500)
        assert min(rep.minimum) >= 0.25 - 1e-15

    def test_linear_closed_form(self):
        for n in (1e3, 1e6):
            exact = ((1 / n - 1 / n ** 2) / 2) / (1 + (1 / n + 1 / n ** 2) / 2)
            rep = separation_check(1, [1.0, 2.0], 1.0, 1.0, [n], samples=4000)
            assert rep.minimum[0] >= exact * (1 - 1e-9)
            assert rep.minimum[0] <= exact * 1.01

    def test_invalid_alphas(self):
        with pytest.raises(InvalidAlphas):
            separation_check(1, [1.0, 1.0], 1.0, 0.5, [100])
        with pytest.raises(InvalidAlphas):
            separation_check(1, [1.0, -2.0], 1.0, 0.5, [100])
        with pytest.raises(InvalidAlphas):
            separation_check(2, [1.0, 2.0], 1.0, 0.5, [100])

    def test_inner_infimum_brute_force(self):
        # compare the exact inner infimum against a direct scan over u
        rng = np.random.default_rng(0)
        eps = 0.5
        mags = np.concatenate([-np.geomspace(1 / eps, eps, 41), np.geomspace(eps, 1 / eps, 41)])
        for _ in range(20):
            c = rng.random(3)
            xval = 0.3
            terms = [c[j] * xval ** j * mags for j in range(3)]
            brute = np.min(np.abs(terms[0][:, None, None] + terms[1][None, :, None] + terms[2][None, None, :]))
            exact = separation_value(c, [-math.log(xval) / math.log(10.0)], 10.0, eps)[0]
            assert exact <= brute + 1e-12
            assert brute - exact < 0.05 * max(brute, 1e-3) + 1e-9 or exact == 0.0


class TestSupportingBound:
    def test_power(self):
        spec = power_support()
        for ts in (0.1, 0.25, 0.4):
            rep = supporting_bound_check(spec, [ts])
            assert rep["min_slack"] >= 0 and rep["n_violations"] == 0

    def test_sin_sin(self):
        spec = sin_sin_support()
        rep = supporting_bound_check(spec, [0.0])
        assert rep["min_slack"] >= 0 and rep["n_violations"] == 0

    def test_zero_function(self):
        spec = SupportingFunctionSpec(lambda x, th: 0.0 * x * th, 2.0, (-2.0, 2.0), get_model("exp-sin2"))
        assert supporting_bound_check(spec, [1.0])["min_slack"] >= 0

    def test_detects_violation(self):
        spec = SupportingFunctionSpec(lambda x, th: 10.0 + 0.0 * x * th, 2.0, (-1.0, 1.0), get_model("power"))
        rep = supporting_bound_check(spec, [0.25])
        assert rep["min_slack"] < 0 and rep["n_violations"] > 0

    def test_rho_positive(self):
        with pytest.raises(ValueError):
            SupportingFunctionSpec(lambda x, th: x, 0.0, (-1.0, 1.0), get_model("power"))
