import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qla.errors import ConfigError, DomainError, NonSPDError
from qla.model import (REGISTRY, ModelSpec, chol_logdet_inv, constant, dtheta_s, get_model, s_chol_logdet_inv,
                       s_derivatives, s_matrix)


class TestSMatrix:
    def test_power_at_origin(self):
        assert s_matrix(get_model("power"), [0.0], [0.25])[0, 0] == pytest.approx(1.0, abs=1e-15)

    def test_exp_sin2_peak(self):
        assert s_matrix(get_model("exp-sin2"), [math.pi / 2], [1.0])[0, 0] == pytest.approx(math.e ** 2, rel=1e-14)

    def test_power_at_one(self):
        assert s_matrix(get_model("power"), [1.0], [0.5])[0, 0] == pytest.approx(2.0, rel=1e-14)

    def test_outside_closure(self):
        with pytest.raises(DomainError):
            s_matrix(get_model("power"), [0.0], [0.6])

    def test_boundary_allowed(self):
        assert np.isfinite(s_matrix(get_model("exp-sin2"), [0.3], [math.pi])).all()

    def test_symmetric_exactly(self):
        m = get_model("coupled-2d")
        s = s_matrix(m, np.random.default_rng(0).normal(size=(50, 2)), [1.2, 0.7])
        assert np.array_equal(s, np.swapaxes(s, -1, -2))

    def test_singular_sigma_raises(self):
        with pytest.raises(NonSPDError):
            s_matrix(constant(c=0.0), [0.0], [0.0])


class TestCholesky:
    def test_unit(self):
        L, ld, inv = chol_logdet_inv(np.array([[1.0]]))
        assert (L[0, 0], ld, inv[0, 0]) == (1.0, 0.0, 1.0)

    def test_four(self):
        L, ld, inv = chol_logdet_inv(np.array([[4.0]]))
        assert L[0, 0] == 2.0 and ld == pytest.approx(math.log(4)) and inv[0, 0] == 0.25

    @given(st.floats(0.1, 5), st.floats(0.1, 5), st.floats(-0.95, 0.95))
    @settings(max_examples=60, deadline=None)
    def test_random_spd_2x2(self, a, c, rho):
        b = rho * math.sqrt(a * c)
        s = np.array([[a, b], [b, c]])
        L, ld, inv = chol_logdet_inv(s)
        det = a * c - b * b
        assert ld == pytest.approx(math.log(det), rel=1e-12, abs=1e-13)
        np.testing.assert_allclose(L @ L.T, s, rtol=1e-13, atol=1e-14)
        np.testing.assert_allclose(inv @ s, np.eye(2), atol=1e-10)

    def test_model_wrapper(self):
        L, ld, inv = s_chol_logdet_inv(get_model("power"), [1.0], [0.5])
        assert ld == pytest.approx(math.log(2))


GRID_X = np.linspace(-3, 3, 41)


@pytest.mark.parametrize("name", sorted(REGISTRY))
def test_cholesky_on_grid(name):
    m = get_model(name)
    axes = [np.linspace(lo, hi, 41 if m.p == 1 else 9) for lo, hi in zip(m.lo, m.hi)]
    thetas = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, m.p)
    x = np.stack(np.meshgrid(*[GRID_X] * m.d, indexing="ij"), -1).reshape(-1, m.d)
    for th in thetas:
        s = s_matrix(m, x, th)
        np.linalg.cholesky(s)


class TestDerivatives:
    def test_exp_sin2_value(self):
        d = dtheta_s(get_model("exp-sin2"), [math.pi / 2], [0.0], order=1)
        assert d.ravel()[0] == pytest.approx(2.0, rel=1e-14)

    def test_constant_zero(self):
        m = constant(c=1.3)
        assert np.all(dtheta_s(m, GRID_X[:, None], [0.2], 1) == 0)
        assert np.all(dtheta_s(m, GRID_X[:, None], [0.2], 2) == 0)

    @pytest.mark.parametrize("name", sorted(REGISTRY))
    def test_analytic_vs_numeric(self, name):
        m = get_model(name)
        numeric = ModelSpec(**{**m.__dict__, "dsigma": None})
        lo, hi = m.lo, m.hi
        pad = 0.02 * (hi - lo)
        axes = [np.linspace(a + p_, b - p_, 41 if m.p == 1 else 7) for a, b, p_ in zip(lo, hi, pad)]
        thetas = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, m.p)
        x = np.stack(np.meshgrid(*[GRID_X] * m.d, indexing="ij"), -1).reshape(-1, m.d)
        for th in thetas:
            a1, a2 = s_derivatives(m, x, th, 2)
            n1 = dtheta_s(numeric, x, th, 1)
            n2 = dtheta_s(numeric, x, th, 2)
            # relative to the derivative size, or to S itself where the derivative vanishes
            s_scale = np.max(np.abs(s_matrix(m, x, th)))
            scale1 = max(np.max(np.abs(a1)), s_scale)
            scale2 = max(np.max(np.abs(a2)), s_scale)
            assert np.max(np.abs(a1 - n1)) / scale1 < 1e-6
            assert np.max(np.abs(a2 - n2)) / scale2 < 1e-5

    def test_numeric_near_boundary_raises(self):
        m = get_model("power")
        numeric = ModelSpec(**{**m.__dict__, "dsigma": None})
        with pytest.raises(DomainError):
            dtheta_s(numeric, [0.5], [0.5], 1)


class TestRegistry:
    def test_unknown_name(self):
        with pytest.raises(ConfigError):
            get_model("nope")

    def test_custom_config(self):
        m = get_model({"form": "exp-sin2", "coefficients": {"drift": 0.5}, "theta_domain": [[-1, 1]],
                       "x0": [0.2], "name": "mine"})
        assert m.name == "mine" and m.lo[0] == -1 and m.x0 == (0.2,)

    def test_bad_coefficients(self):
        with pytest.raises(ConfigError):
            get_model({"form": "power", "coefficients": {"bogus": 1}})

    def test_empty_domain_rejected(self):
        with pytest.raises(ConfigError):
            get_model("power").with_domain([0.5], [0.5])

    def test_frozen(self):
        with pytest.raises(Exception):
            get_model("power").name = "x"
