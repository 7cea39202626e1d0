"""Parametric diffusion models and the volatility kernel S = sigma sigma^T.

Array conventions used throughout the package:

* ``x`` has shape ``(..., d)`` and ``theta`` has shape ``(..., p)``; leading
  axes broadcast against each other.
* ``model.sigma(x, theta)`` returns ``(..., m, r)``.
* ``model.drift(t, x, y)`` returns ``(..., m)``.
* ``model.dsigma(x, theta)``, when present, returns the pair
  ``(d sigma / d theta  (..., p, m, r), d2 sigma / d theta2  (..., p, p, m, r))``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, DomainError, NonSPDError

EPS = np.finfo(float).eps
FD_STEP = EPS ** (1.0 / 3.0)
FD_STEP2 = EPS ** (1.0 / 4.0)


@dataclass(frozen=True)
class ModelSpec:
    name: str
    p: int
    d: int
    m: int
    r: int
    lower: tuple
    upper: tuple
    sigma: Callable
    drift: Callable
    dsigma: Optional[Callable] = None
    # d sigma / d y for the Milstein correction (scalar models only)
    dsigma_dy: Optional[Callable] = None
    x0: tuple = (0.0,)
    y0: tuple = (0.0,)
    x_is_y: bool = True
    x_drift: Optional[Callable] = None
    x_diff: Optional[Callable] = None
    coefficients: dict = field(default_factory=dict)

    def __post_init__(self):
        lo = np.asarray(self.lower, float)
        hi = np.asarray(self.upper, float)
        if lo.shape != (self.p,) or hi.shape != (self.p,):
            raise ConfigError(f"theta_domain must have {self.p} bounds")
        if not np.all(lo < hi):
            raise ConfigError("theta_domain is empty: need lo < hi on every axis")
        if self.x_is_y and self.d != self.m:
            raise ConfigError("x_is_y requires d == m")
        if not self.x_is_y and (self.x_drift is None or self.x_diff is None):
            raise ConfigError("covariate dynamics need both x_drift and x_diff")

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.lower, float)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.upper, float)

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))

    def clamp(self, theta, margin=1e-9):
        """Project onto the box shrunk by ``margin * (hi - lo)``."""
        mu = margin * (self.hi - self.lo)
        return np.clip(theta, self.lo + mu, self.hi - mu)

    def with_domain(self, lower, upper) -> "ModelSpec":
        return replace(self, lower=tuple(map(float, lower)), upper=tuple(map(float, upper)))


def check_theta(model: ModelSpec, theta, tol=0.0) -> np.ndarray:
    """Return ``theta`` as an array, raising DomainError outside the closed box."""
    theta = np.asarray(theta, float)
    if theta.ndim == 0 and model.p == 1:
        theta = theta.reshape(1)
    if theta.shape[-1:] != (model.p,):
        raise DomainError(f"theta must have trailing dimension {model.p}, got {theta.shape}")
    if np.any(theta < model.lo - tol) or np.any(theta > model.hi + tol) or not np.all(np.isfinite(theta)):
        raise DomainError(f"theta outside the closed parameter box [{model.lower}, {model.upper}]")
    return theta


def _sym(a):
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def _s_from_sigma(sig):
    return _sym(sig @ np.swapaxes(sig, -1, -2))


def _s_raw(model, x, theta):
    return _s_from_sigma(np.asarray(model.sigma(x, theta), float))


def _cholesky(s):
    try:
        return np.linalg.cholesky(s)
    except np.linalg.LinAlgError:
        bad = None
        if s.ndim > 2:
            flat = s.reshape(-1, *s.shape[-2:])
            for k, a in enumerate(flat):
                try:
                    np.linalg.cholesky(a)
                except np.linalg.LinAlgError:
                    bad = k
                    break
        raise NonSPDError("S(x, theta) is not positive definite", bad) from None


def s_matrix(model: ModelSpec, x, theta) -> np.ndarray:
    """S(x, theta) = sigma sigma^T, symmetrized, shape ``(..., m, m)``."""
    theta = check_theta(model, theta)
    s = _s_raw(model, np.asarray(x, float), theta)
    _cholesky(s)
    return s


def s_chol_logdet_inv(model: ModelSpec, x, theta):
    """Cholesky factor, log-determinant and inverse of S(x, theta)."""
    s = s_matrix(model, x, theta)
    return chol_logdet_inv(s)


def chol_logdet_inv(s):
    L = _cholesky(s)
    logdet = 2.0 * np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1)), axis=-1)
    m = s.shape[-1]
    eye = np.broadcast_to(np.eye(m), s.shape)
    linv = np.linalg.solve(L, eye)
    sinv = _sym(np.swapaxes(linv, -1, -2) @ linv)
    return L, logdet, sinv


def _sigma_derivs(model, x, theta):
    """Analytic (dS, d2S) from the sigma derivative supplier."""
    sig = np.asarray(model.sigma(x, theta), float)
    ds, d2s = model.dsigma(x, theta)
    sig1 = sig[..., None, :, :]
    sig2 = sig[..., None, None, :, :]
    tr = lambda a: np.swapaxes(a, -1, -2)
    dS = ds @ tr(sig1) + sig1 @ tr(ds)
    dsi = ds[..., :, None, :, :]
    dsj = ds[..., None, :, :, :]
    d2S = d2s @ tr(sig2) + dsi @ tr(dsj) + dsj @ tr(dsi) + sig2 @ tr(d2s)
    return _sym(dS), _sym(d2S)


def _fd_steps(model, theta, base):
    h = base * np.maximum(1.0, np.abs(theta))
    if np.any(theta - h < model.lo) or np.any(theta + h > model.hi):
        raise DomainError("theta too close to the boundary for finite differences")
    return h


def _fd_derivs(model, x, theta, order):
    p = model.p
    eye = np.eye(p)
    h1 = _fd_steps(model, theta, FD_STEP)
    dS = []
    for i in range(p):
        e = eye[i] * h1[..., i:i + 1]
        dS.append((_s_raw(model, x, theta + e) - _s_raw(model, x, theta - e)) / (2 * h1[..., i, None, None]))
    dS = np.stack(dS, axis=-3)
    if order == 1:
        return _sym(dS), None
    h2 = _fd_steps(model, theta, FD_STEP2)
    rows = []
    for i in range(p):
        row = []
        ei = eye[i] * h2[..., i:i + 1]
        for j in range(p):
            ej = eye[j] * h2[..., j:j + 1]
            val = (_s_raw(model, x, theta + ei + ej) - _s_raw(model, x, theta + ei - ej)
                   - _s_raw(model, x, theta - ei + ej) + _s_raw(model, x, theta - ei - ej))
            row.append(val / (4 * h2[..., i, None, None] * h2[..., j, None, None]))
        rows.append(np.stack(row, axis=-3))
    d2S = np.stack(rows, axis=-4)
    d2S = 0.5 * (d2S + np.swapaxes(d2S, -3, -4))
    return _sym(dS), _sym(d2S)


def s_derivatives(model: ModelSpec, x, theta, order=2):
    """Return (dS, d2S) with shapes ``(..., p, m, m)`` and ``(..., p, p, m, m)``.

    ``d2S`` is None when ``order == 1`` and no analytic supplier exists.
    """
    x = np.asarray(x, float)
    theta = np.asarray(theta, float)
    if model.dsigma is not None:
        return _sigma_derivs(model, x, theta)
    return _fd_derivs(model, x, theta, order)


def dtheta_s(model: ModelSpec, x, theta, order: int = 1) -> np.ndarray:
    """First (``order=1``) or second (``order=2``) theta-derivative tensor of S."""
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    theta = check_theta(model, theta)
    dS, d2S = s_derivatives(model, x, theta, order)
    return dS if order == 1 else d2S


# ---------------------------------------------------------------------------
# built-in models

def _col(a):
    return np.asarray(a, float)[..., 0]


def _mat(a):
    return a[..., None, None]


def _linear_drift(a):
    return lambda t, x, y: a * np.asarray(y, float)


def exp_sin2(drift=1.0, lower=-math.pi, upper=math.pi, x0=0.0) -> ModelSpec:
    """dY = a Y dt + exp(theta sin^2 Y) dw."""

    def sigma(x, th):
        return _mat(np.exp(_col(th) * np.sin(_col(x)) ** 2))

    def dsigma(x, th):
        s = np.sin(_col(x)) ** 2
        sig = np.exp(_col(th) * s)
        return (s * sig)[..., None, None, None], (s * s * sig)[..., None, None, None, None]

    def dsigma_dy(x, th):
        xx = _col(x)
        return _mat(_col(th) * np.sin(2 * xx) * np.exp(_col(th) * np.sin(xx) ** 2))

    return ModelSpec("exp-sin2", 1, 1, 1, 1, (lower,), (upper,), sigma, _linear_drift(drift),
                     dsigma, dsigma_dy, (x0,), (x0,), coefficients={"drift": drift})


def sin_sin(drift=1.0, lower=-math.pi, upper=math.pi, x0=0.0) -> ModelSpec:
    """dY = a Y dt + exp(sin(theta) sin Y - theta^2 sin^2 Y) dw."""

    def g(x, th):
        return np.sin(th) * np.sin(x) - th ** 2 * np.sin(x) ** 2

    def sigma(x, th):
        return _mat(np.exp(g(_col(x), _col(th))))

    def dsigma(x, th):
        xx, tt = _col(x), _col(th)
        sig = np.exp(g(xx, tt))
        g1 = np.cos(tt) * np.sin(xx) - 2 * tt * np.sin(xx) ** 2
        g2 = -np.sin(tt) * np.sin(xx) - 2 * np.sin(xx) ** 2
        return (g1 * sig)[..., None, None, None], ((g2 + g1 * g1) * sig)[..., None, None, None, None]

    def dsigma_dy(x, th):
        xx, tt = _col(x), _col(th)
        gx = np.sin(tt) * np.cos(xx) - tt ** 2 * np.sin(2 * xx)
        return _mat(gx * np.exp(g(xx, tt)))

    return ModelSpec("sin-sin", 1, 1, 1, 1, (lower,), (upper,), sigma, _linear_drift(drift),
                     dsigma, dsigma_dy, (x0,), (x0,), coefficients={"drift": drift})


def power(drift=0.0, lower=0.0, upper=0.5, x0=0.0) -> ModelSpec:
    """dX = a X dt + (1 + X^2)^theta dw; unidentifiable while X stays at 0."""

    def sigma(x, th):
        return _mat(np.exp(_col(th) * np.log1p(_col(x) ** 2)))

    def dsigma(x, th):
        ell = np.log1p(_col(x) ** 2)
        sig = np.exp(_col(th) * ell)
        return (ell * sig)[..., None, None, None], (ell * ell * sig)[..., None, None, None, None]

    def dsigma_dy(x, th):
        xx, tt = _col(x), _col(th)
        return _mat(tt * 2 * xx / (1 + xx ** 2) * np.exp(tt * np.log1p(xx ** 2)))

    return ModelSpec("power", 1, 1, 1, 1, (lower,), (upper,), sigma, _linear_drift(drift),
                     dsigma, dsigma_dy, (x0,), (x0,), coefficients={"drift": drift})


def exp_theta(drift=0.0, lower=-math.pi, upper=math.pi, x0=0.0) -> ModelSpec:
    """State-free volatility sigma = exp(theta), so S = exp(2 theta)."""

    def sigma(x, th):
        x = np.asarray(x, float)
        return _mat(np.exp(_col(th)) + 0.0 * _col(x))

    def dsigma(x, th):
        sig = np.exp(_col(th)) + 0.0 * _col(x)
        return sig[..., None, None, None], sig[..., None, None, None, None]

    def dsigma_dy(x, th):
        return _mat(0.0 * _col(x) + 0.0 * _col(th))

    return ModelSpec("exp-theta", 1, 1, 1, 1, (lower,), (upper,), sigma, _linear_drift(drift),
                     dsigma, dsigma_dy, (x0,), (x0,), coefficients={"drift": drift})


def constant(c=1.0, drift=0.0, lower=-1.0, upper=1.0, x0=0.0) -> ModelSpec:
    """sigma = c regardless of theta (completely unidentifiable)."""

    def sigma(x, th):
        return _mat(c + 0.0 * _col(x) + 0.0 * _col(th))

    def dsigma(x, th):
        z = 0.0 * _col(x) + 0.0 * _col(th)
        return z[..., None, None, None], z[..., None, None, None, None]

    def dsigma_dy(x, th):
        return _mat(0.0 * _col(x) + 0.0 * _col(th))

    return ModelSpec("constant", 1, 1, 1, 1, (lower,), (upper,), sigma, _linear_drift(drift),
                     dsigma, dsigma_dy, (x0,), (x0,), coefficients={"c": c, "drift": drift})


def coupled_2d(c=0.3, drift=-1.0, lower=(0.5, 0.5), upper=(2.0, 2.0), x0=(0.0, 0.0)) -> ModelSpec:
    """Two-dimensional model with correlated noise; Euler-Maruyama only."""

    def sigma(x, th):
        x = np.asarray(x, float)
        th = np.asarray(th, float)
        x1, x2 = x[..., 0], x[..., 1]
        t1, t2 = th[..., 0], th[..., 1]
        e1 = np.exp(t1 * np.sin(x1) ** 2)
        e2 = np.exp(t2 * np.cos(x2) ** 2)
        z = 0.0 * e1 * e2
        return np.stack([np.stack([e1 + z, c + z], -1), np.stack([c * np.sin(t2) + z, e2 + z], -1)], -2)

    def dsigma(x, th):
        x = np.asarray(x, float)
        th = np.asarray(th, float)
        x1, x2 = x[..., 0], x[..., 1]
        t1, t2 = th[..., 0], th[..., 1]
        s1, c2 = np.sin(x1) ** 2, np.cos(x2) ** 2
        e1 = np.exp(t1 * s1)
        e2 = np.exp(t2 * c2)
        z = 0.0 * e1 * e2
        m2 = lambda a, b, cc, dd: np.stack([np.stack([a + z, b + z], -1), np.stack([cc + z, dd + z], -1)], -2)
        d1 = m2(s1 * e1, 0.0, 0.0, 0.0)
        d2 = m2(0.0, 0.0, c * np.cos(t2), c2 * e2)
        d11 = m2(s1 * s1 * e1, 0.0, 0.0, 0.0)
        d22 = m2(0.0, 0.0, -c * np.sin(t2), c2 * c2 * e2)
        zero = m2(0.0, 0.0, 0.0, 0.0)
        ds = np.stack([d1, d2], -3)
        d2s = np.stack([np.stack([d11, zero], -3), np.stack([zero, d22], -3)], -4)
        return ds, d2s

    return ModelSpec("coupled-2d", 2, 2, 2, 2, tuple(lower), tuple(upper), sigma, _linear_drift(drift),
                     dsigma, None, tuple(x0), tuple(x0), coefficients={"c": c, "drift": drift})


REGISTRY = {
    "exp-sin2": exp_sin2,
    "sin-sin": sin_sin,
    "power": power,
    "exp-theta": exp_theta,
    "constant": constant,
    "coupled-2d": coupled_2d,
}


def get_model(spec) -> ModelSpec:
    """Look up a model by registry name or build one from a config mapping.

    A mapping looks like ``{"form": "exp-sin2", "coefficients": {"drift": 0.5},
    "theta_domain": [[-1, 1]], "x0": [0.0]}``.
    """
    if isinstance(spec, ModelSpec):
        return spec
    if isinstance(spec, str):
        if spec not in REGISTRY:
            raise ConfigError(f"unknown model {spec!r}; known: {sorted(REGISTRY)}")
        return REGISTRY[spec]()
    if not isinstance(spec, dict) or "form" not in spec:
        raise ConfigError("model config must be a name or a mapping with a 'form' key")
    form = spec["form"]
    if form not in REGISTRY:
        raise ConfigError(f"unknown model form {form!r}")
    kwargs = dict(spec.get("coefficients", {}))
    try:
        model = REGISTRY[form](**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad coefficients for {form}: {exc}") from None
    if "theta_domain" in spec:
        dom = np.asarray(spec["theta_domain"], float).reshape(model.p, 2)
        model = model.with_domain(dom[:, 0], dom[:, 1])
    if "x0" in spec:
        x0 = tuple(float(v) for v in np.atleast_1d(spec["x0"]))
        model = replace(model, x0=x0, y0=x0 if model.x_is_y else model.y0)
    if "name" in spec:
        model = replace(model, name=str(spec["name"]))
    return model
