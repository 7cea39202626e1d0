"""Gaussian quasi-log-likelihood H_n and the random fields built from it."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NonSPDError, NonSPDWarning
from .model import ModelSpec, _cholesky, check_theta, s_derivatives

# cap on (grid points x observations) evaluated in one vectorised block
BLOCK = 1 << 21


@dataclass
class Observations:
    n: int
    T: float
    x: np.ndarray
    y: np.ndarray
    provenance: str = "simulated"

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, float).T).T
        self.y = np.atleast_2d(np.asarray(self.y, float).T).T
        if self.x.shape[0] != self.n + 1 or self.y.shape[0] != self.n + 1:
            raise ValueError("x and y need n + 1 rows")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise ValueError("observations must be finite")

    @property
    def h(self) -> float:
        return self.T / self.n

    @property
    def dy(self) -> np.ndarray:
        return np.diff(self.y, axis=0)

    @classmethod
    def from_path(cls, path) -> "Observations":
        return cls(path.n, path.T, path.x, path.y, f"simulated(seed={path.seed}, key={path.key})")


@dataclass
class QlikEval:
    value: float
    grad: np.ndarray
    hess: np.ndarray
    theta: np.ndarray


def _as_grid(model, thetas):
    thetas = np.asarray(thetas, float)
    if thetas.ndim == 1 and model.p == 1:
        thetas = thetas[:, None]
    return check_theta(model, thetas)


def _logdet_quad(model, x, theta, dy):
    """log det S and dy^T S^-1 dy at every (theta, x) pair; shapes broadcast."""
    sig = np.asarray(model.sigma(x, theta), float)
    if model.m == 1:
        s = np.sum(sig * sig, axis=-1)[..., 0]
        if np.any(~(s > 0)):
            raise NonSPDError("S(x, theta) is not positive definite", int(np.argmin(s.reshape(-1))))
        return np.log(s), dy[..., 0] ** 2 / s
    s = sig @ np.swapaxes(sig, -1, -2)
    s = 0.5 * (s + np.swapaxes(s, -1, -2))
    L = _cholesky(s)
    logdet = 2.0 * np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1)), axis=-1)
    z = np.linalg.solve(L, np.broadcast_to(dy[..., None], L.shape[:-1] + (1,)))[..., 0]
    return logdet, np.sum(z * z, axis=-1)


def h_n_grid(obs: Observations, model: ModelSpec, thetas) -> np.ndarray:
    """H_n evaluated at each row of ``thetas`` (shape ``(G, p)``)."""
    thetas = _as_grid(model, thetas)
    n, h = obs.n, obs.h
    x = obs.x[:-1][None]
    dy = obs.dy[None]
    const = -0.5 * n * model.m * math.log(2 * math.pi * h)
    out = np.empty(len(thetas))
    step = max(1, BLOCK // max(n, 1))
    for a in range(0, len(thetas), step):
        th = thetas[a:a + step, None, :]
        logdet, quad = _logdet_quad(model, x, th, dy)
        out[a:a + step] = const - 0.5 * np.sum(logdet + quad / h, axis=-1)
    return out


def h_n(obs: Observations, model: ModelSpec, theta) -> float:
    """Quasi-log-likelihood H_n(theta) of the observed increments."""
    theta = check_theta(model, theta)
    return float(h_n_grid(obs, model, theta[None])[0])


def h_n_grad_hess(obs: Observations, model: ModelSpec, theta) -> QlikEval:
    """Value, gradient and Hessian of H_n at ``theta`` via the chain rule in S."""
    theta = check_theta(model, theta)
    if np.any(theta <= model.lo) or np.any(theta >= model.hi):
        raise DomainError("derivatives of H_n need theta in the open box")
    h = obs.h
    x = obs.x[:-1]
    dy = obs.dy
    sig = np.asarray(model.sigma(x, theta), float)
    s = sig @ np.swapaxes(sig, -1, -2)
    s = 0.5 * (s + np.swapaxes(s, -1, -2))
    L = _cholesky(s)
    logdet = 2.0 * np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1)), axis=-1)
    sinv = np.linalg.inv(s)
    sinv = 0.5 * (sinv + np.swapaxes(sinv, -1, -2))
    v = np.einsum("kab,kb->ka", sinv, dy)
    dS, d2S = s_derivatives(model, x, theta, order=2)

    value = -0.5 * obs.n * model.m * math.log(2 * math.pi * h) - 0.5 * np.sum(logdet + np.einsum("ka,ka->k", v, dy) / h)
    A = np.einsum("kab,kibc->kiac", sinv, dS)
    tr_a = np.einsum("kiaa->ki", A)
    vdv = np.einsum("ka,kiab,kb->ki", v, dS, v)
    grad = -0.5 * np.sum(tr_a - vdv / h, axis=0)

    tr_d2 = np.einsum("kab,kijba->kij", sinv, d2S)
    tr_aa = np.einsum("kjab,kiba->kij", A, A)
    vd2v = np.einsum("ka,kijab,kb->kij", v, d2S, v)
    w = np.einsum("kiab,kb->kia", dS, v)
    cross = np.einsum("kia,kab,kjb->kij", w, sinv, w)
    hess = -0.5 * np.sum(tr_d2 - tr_aa + (2 * cross - vd2v) / h, axis=0)
    hess = 0.5 * (hess + hess.T)
    return QlikEval(float(value), grad, hess, theta.copy())


def gamma_n(obs: Observations, model: ModelSpec, theta) -> np.ndarray:
    """Observed information -n^-1 d^2 H_n(theta)."""
    return -h_n_grad_hess(obs, model, theta).hess / obs.n


# ---------------------------------------------------------------------------
# local random field Z_n and the normalised field Y_n

def _u_grid(model, u):
    u = np.asarray(u, float)
    if u.ndim == 1 and model.p == 1 and u.shape != (1,):
        u = u[:, None]
    return np.atleast_2d(u)


def in_local_domain(model: ModelSpec, theta_star, n: int, u) -> np.ndarray:
    th = np.asarray(theta_star, float) + _u_grid(model, u) / math.sqrt(n)
    return np.all((th >= model.lo) & (th <= model.hi), axis=-1)


def log_z_grid(obs: Observations, model: ModelSpec, theta_star, us) -> np.ndarray:
    """log Z_n(u) = H_n(theta* + u / sqrt(n)) - H_n(theta*) for each row of ``us``."""
    theta_star = check_theta(model, theta_star)
    us = _u_grid(model, us)
    if not np.all(in_local_domain(model, theta_star, obs.n, us)):
        raise DomainError("u outside U_n = {u : theta* + u/sqrt(n) in Theta}")
    th = theta_star + us / math.sqrt(obs.n)
    base = h_n(obs, model, theta_star)
    return h_n_grid(obs, model, th) - base


def z_field(obs: Observations, model: ModelSpec, theta_star, u) -> float:
    """Likelihood-ratio field Z_n(u); returns exactly 1.0 at u = 0."""
    u = np.atleast_1d(np.asarray(u, float))
    if not np.any(u):
        return 1.0
    return float(np.exp(log_z_grid(obs, model, theta_star, u[None])[0]))


def z_decomposition(obs: Observations, model: ModelSpec, theta_star, u) -> dict:
    """Split log Z_n(u) into the score term, the quadratic term and the remainder."""
    u = np.atleast_1d(np.asarray(u, float))
    ev = h_n_grad_hess(obs, model, theta_star)
    log_z = float(log_z_grid(obs, model, theta_star, u[None])[0])
    delta = float(ev.grad @ u) / math.sqrt(obs.n)
    quad = 0.5 * float(u @ (-ev.hess / obs.n) @ u)
    return {"log_z": log_z, "delta": delta, "quadratic": quad, "remainder": log_z - delta + quad}


def y_field(obs: Observations, model: ModelSpec, theta_star, thetas) -> np.ndarray:
    """Y_n(theta) = (H_n(theta) - H_n(theta*)) / n, vectorised over ``thetas``."""
    thetas = _as_grid(model, thetas)
    theta_star = check_theta(model, theta_star)
    return (h_n_grid(obs, model, thetas) - h_n(obs, model, theta_star)) / obs.n


def divergence(model: ModelSpec, x, theta, theta_star) -> np.ndarray:
    """Q(x, theta, theta*) via the eigenvalues of S(theta)^-1 S(theta*).

    Written as sum(expm1(l) - l) with l = log eigenvalue, which avoids the
    cancellation of the trace/log-det form when theta is close to theta*.
    """
    sig = np.asarray(model.sigma(x, theta), float)
    sig_star = np.asarray(model.sigma(x, theta_star), float)
    if model.m == 1:
        s = np.sum(sig * sig, axis=-1)[..., 0]
        s_star = np.sum(sig_star * sig_star, axis=-1)[..., 0]
        if np.any(~(s > 0)) or np.any(~(s_star > 0)):
            raise NonSPDError("S(x, theta) is not positive definite")
        ell = np.log(s_star) - np.log(s)
        return np.expm1(ell) - ell
    s = sig @ np.swapaxes(sig, -1, -2)
    s_star = sig_star @ np.swapaxes(sig_star, -1, -2)
    L = _cholesky(0.5 * (s + np.swapaxes(s, -1, -2)))
    _cholesky(0.5 * (s_star + np.swapaxes(s_star, -1, -2)))
    li = np.linalg.inv(L)
    M = li @ s_star @ np.swapaxes(li, -1, -2)
    lam = np.linalg.eigvalsh(0.5 * (M + np.swapaxes(M, -1, -2)))
    ell = np.log(lam)
    return np.sum(np.expm1(ell) - ell, axis=-1)


def _xpath(path, T):
    if hasattr(path, "x") and hasattr(path, "T"):
        return np.asarray(path.x, float), float(path.T)
    if T is None:
        raise ValueError("T is required when passing a raw x array")
    x = np.asarray(path, float)
    return (x[:, None] if x.ndim == 1 else x), float(T)


def y_limit(path, model: ModelSpec, theta_star, thetas, T=None) -> np.ndarray:
    """Left-Riemann approximation of the limit field Y(theta) along the x-path."""
    x, T = _xpath(path, T)
    thetas = _as_grid(model, thetas)
    theta_star = check_theta(model, theta_star)
    n = x.shape[0] - 1
    h = T / n
    xs = x[:-1][None]
    out = np.empty(len(thetas))
    step = max(1, BLOCK // max(n, 1))
    for a in range(0, len(thetas), step):
        q = divergence(model, xs, thetas[a:a + step, None, :], theta_star)
        out[a:a + step] = -np.sum(q, axis=-1) * h / (2 * T)
    return out


def gamma_info(path, model: ModelSpec, theta_star, T=None) -> np.ndarray:
    """Asymptotic information Gamma(theta*) as a left-Riemann sum along the path."""
    x, T = _xpath(path, T)
    theta_star = check_theta(model, theta_star)
    n = x.shape[0] - 1
    h = T / n
    xs = x[:-1]
    sig = np.asarray(model.sigma(xs, theta_star), float)
    s = sig @ np.swapaxes(sig, -1, -2)
    sinv = np.linalg.inv(0.5 * (s + np.swapaxes(s, -1, -2)))
    dS, _ = s_derivatives(model, xs, theta_star, order=1)
    A = np.einsum("kab,kibc->kiac", sinv, dS)
    g = np.einsum("kiab,kjba->ij", A, A) * h / (2 * T)
    g = 0.5 * (g + g.T)
    lam = np.linalg.eigvalsh(g)
    if lam[0] <= 1e-12:
        warnings.warn(f"information matrix is singular or nearly so (min eigenvalue {lam[0]:.3g})",
                      NonSPDWarning, stacklevel=2)
    return g
