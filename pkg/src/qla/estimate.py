"""Quasi-maximum-likelihood and Bayes-type (posterior mean) estimators."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import (DegeneratePosterior, DomainError, SingularInformation, UnsupportedDimension)
from .model import ModelSpec, check_theta
from .qlik import Observations, gamma_info, h_n, h_n_grad_hess, h_n_grid

ARMIJO_C = 1e-4
MARGIN = 1e-9
BAYES_POINTS = {1: 2 ** 10 + 1, 2: 2 ** 7 + 1, 3: 2 ** 5 + 1}
MASS = 0.9999


@dataclass
class Prior:
    """Prior density; ``uniform`` or a table of positive values on a tensor grid."""
    kind: str = "uniform"
    grid: Optional[list] = None
    values: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("uniform", "user_table"):
            raise ValueError(f"unknown prior kind {self.kind!r}")
        if self.kind == "user_table":
            if self.grid is None or self.values is None:
                raise ValueError("user_table prior needs grid and values")
            self.grid = [np.asarray(g, float) for g in (self.grid if isinstance(self.grid[0], (list, tuple, np.ndarray)) else [self.grid])]
            self.values = np.asarray(self.values, float)
            if not np.all(np.isfinite(self.values)) or self.values.min() <= 0:
                raise ValueError("prior table must be finite and strictly positive")

    def log_density(self, thetas: np.ndarray) -> np.ndarray:
        if self.kind == "uniform":
            return np.zeros(len(thetas))
        if len(self.grid) == 1:
            return np.log(np.interp(thetas[:, 0], self.grid[0], self.values))
        f = RegularGridInterpolator(self.grid, self.values, bounds_error=False, fill_value=None)
        return np.log(np.maximum(f(thetas), self.values.min()))


@dataclass
class EstimationResult:
    kind: str
    theta_hat: np.ndarray
    objective: Optional[float]
    gamma_n: Optional[np.ndarray]
    converged: bool = True
    evals: int = 0
    init: Optional[np.ndarray] = None
    std_error: Optional[np.ndarray] = None
    standardized: Optional[np.ndarray] = None
    info: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        arr = lambda a: None if a is None else np.asarray(a).tolist()
        return {
            "kind": self.kind,
            "theta_hat": arr(self.theta_hat),
            "objective": self.objective,
            "gamma_n": arr(self.gamma_n),
            "converged": bool(self.converged),
            "evals": int(self.evals),
            "init": arr(self.init),
            "std_error": arr(self.std_error),
            "standardized": arr(self.standardized),
        }


# ---------------------------------------------------------------------------
# projected Newton

def _free_mask(x, g, lo, hi):
    at_lo = (x <= lo) & (g < 0)
    at_hi = (x >= hi) & (g > 0)
    return ~(at_lo | at_hi)


def projected_newton(value, value_grad_hess, x0, lo, hi, max_iter=200, gtol=1e-8, xtol=1e-12):
    """Maximise a smooth function over the box [lo, hi].

    ``value(x)`` returns f(x); ``value_grad_hess(x)`` returns (f, grad, hess).
    Indefinite Hessians are made negative definite by flipping and flooring
    their eigenvalues. Returns ``(x, f, converged, iterations, evals)``.
    """
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    x = np.clip(np.asarray(x0, float), lo, hi)
    evals = 0
    f, g, H = value_grad_hess(x)
    evals += 1
    for it in range(1, max_iter + 1):
        free = _free_mask(x, g, lo, hi)
        if not np.any(free) or np.max(np.abs(g[free])) < gtol * max(1.0, abs(f)):
            return x, f, True, it - 1, evals
        Hf = H[np.ix_(free, free)]
        lam, V = np.linalg.eigh(0.5 * (Hf + Hf.T))
        floor = 1e-8 * max(1.0, float(np.max(np.abs(lam))))
        lam = -np.maximum(np.abs(lam), floor)
        d = np.zeros_like(x)
        d[free] = -V @ ((V.T @ g[free]) / lam)
        t = 1.0
        while True:
            x_new = np.clip(x + t * d, lo, hi)
            step = x_new - x
            if np.max(np.abs(step)) < xtol:
                return x, f, True, it, evals
            f_new = value(x_new)
            evals += 1
            if np.isfinite(f_new) and f_new >= f + ARMIJO_C * float(g @ step):
                break
            t *= 0.5
        x = x_new
        f, g, H = value_grad_hess(x)
        evals += 1
        if np.max(np.abs(step)) < xtol:
            return x, f, True, it, evals
    return x, f, False, max_iter, evals


def _margined_box(model):
    mu = MARGIN * (model.hi - model.lo)
    return model.lo + mu, model.hi - mu


def _check_grid(model, points):
    lo, hi = _margined_box(model)
    axes = [np.linspace(lo[i], hi[i], points) for i in range(model.p)]
    return np.array(list(itertools.product(*axes)))


def _grid_peaks(vals, p, points):
    v = vals.reshape((points,) * p)
    peak = np.ones(v.shape, bool)
    for a in range(p):
        pad = [(0, 0)] * p
        pad[a] = (1, 1)
        vp = np.pad(v, pad, constant_values=-np.inf)
        lo_n = np.take(vp, np.arange(0, points), axis=a)
        hi_n = np.take(vp, np.arange(2, points + 2), axis=a)
        peak &= (v >= lo_n) & (v >= hi_n)
    return peak.reshape(-1)


def qmle(obs: Observations, model: ModelSpec, init, multistart: bool = True,
         max_iter: int = 200, check_points: int = 17) -> EstimationResult:
    """Maximise H_n over the parameter box starting from ``init``.

    With ``multistart`` the local optimum is compared against H_n on an
    equispaced check grid and the search restarts from any grid point that
    beats it, and from every local peak of the grid outside the current
    basin, so the returned value dominates the whole grid. Without it the
    result is the local optimum reached from ``init``.
    """
    init = check_theta(model, np.atleast_1d(np.asarray(init, float)))
    lo, hi = _margined_box(model)
    value = lambda th: h_n(obs, model, th)

    def vgh(th):
        ev = h_n_grad_hess(obs, model, th)
        return ev.value, ev.grad, ev.hess

    x, f, conv, iters, evals = projected_newton(value, vgh, init, lo, hi, max_iter=max_iter)
    restarts = 0
    if multistart:
        grid = _check_grid(model, check_points)
        gvals = h_n_grid(obs, model, grid)
        evals += len(grid)
        cell = (hi - lo) / (check_points - 1)
        # local maxima of the check grid mark humps the grid resolves but does not top
        peaks = set(np.flatnonzero(_grid_peaks(gvals, model.p, check_points)).tolist())
        tried = set()
        while True:
            cand = [i for i in np.flatnonzero(gvals > f + 1e-9) if i not in tried]
            cand += [i for i in peaks if i not in tried and i not in cand
                     and np.any(np.abs(grid[i] - x) > cell)]
            if not cand:
                break
            i = max(cand, key=lambda j: gvals[j])
            tried.add(i)
            x2, f2, conv2, it2, ev2 = projected_newton(value, vgh, grid[i], lo, hi, max_iter=max_iter)
            evals += ev2
            restarts += 1
            if f2 > f:
                x, f, conv = x2, f2, conv2
    g_n = -h_n_grad_hess(obs, model, x).hess / obs.n
    return EstimationResult("qmle", x, float(f), g_n, bool(conv), evals, init.copy(),
                            info={"iterations": iters, "restarts": restarts})


# ---------------------------------------------------------------------------
# Bayes-type estimator

def simpson_weights(npts: int, a: float, b: float) -> np.ndarray:
    if npts < 3 or npts % 2 == 0:
        raise ValueError("composite Simpson needs an odd number of points >= 3")
    w = np.ones(npts)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * (b - a) / (3.0 * (npts - 1))


def _tensor(axes):
    return np.array(list(itertools.product(*axes)))


def _tensor_weights(ws):
    out = ws[0]
    for w in ws[1:]:
        out = np.multiply.outer(out, w)
    return out.reshape(-1)


def _log_post(obs, model, prior, thetas):
    lp = h_n_grid(obs, model, thetas) + prior.log_density(thetas)
    return lp


def _moments(logw, weights, thetas, shift):
    w = weights * np.exp(logw - shift)
    return float(np.sum(w)), w @ thetas


def bayes(obs: Observations, model: ModelSpec, prior: Optional[Prior] = None,
          points: Optional[int] = None, refine: bool = True, log_shift: float = 0.0) -> EstimationResult:
    """Posterior mean of theta under exp(H_n) times the prior.

    Composite Simpson on a tensor grid over the closed box, followed by a
    second pass on a fine grid covering the central 99.99% posterior mass;
    the coarse grid still accounts for the tails. ``log_shift`` offsets the
    stabilising constant and must not change the answer.
    """
    p = model.p
    if p > 3:
        raise UnsupportedDimension("Bayes quadrature supports p <= 3")
    prior = prior or Prior()
    npts = points or BAYES_POINTS[p]
    lo, hi = model.lo, model.hi
    axes = [np.linspace(lo[i], hi[i], npts) for i in range(p)]
    wax = [simpson_weights(npts, lo[i], hi[i]) for i in range(p)]
    thetas = _tensor(axes)
    W = _tensor_weights(wax)
    logw = _log_post(obs, model, prior, thetas)
    if not np.any(np.isfinite(logw)):
        raise DegeneratePosterior("log posterior is not finite anywhere on the grid")
    shift = float(np.max(logw)) + log_shift
    D, N = _moments(logw, W, thetas, shift)
    evals = len(thetas)

    box = None
    if refine:
        w_nodes = (W * np.exp(logw - shift)).reshape((npts,) * p)
        box = []
        for a in range(p):
            marg = w_nodes.sum(axis=tuple(b for b in range(p) if b != a))
            cdf = np.cumsum(marg) / np.sum(marg)
            tail = (1 - MASS) / 2
            i_lo = max(int(np.searchsorted(cdf, tail)) - 2, 0)
            i_hi = min(int(np.searchsorted(cdf, 1 - tail)) + 2, npts - 1)
            i_lo -= i_lo % 2
            i_hi += i_hi % 2
            i_hi = min(i_hi, npts - 1)
            if i_hi - i_lo < 2:
                i_lo, i_hi = max(i_lo - 2, 0), min(i_hi + 2, npts - 1)
            box.append((i_lo, i_hi))
        if any(b != (0, npts - 1) for b in box):
            sub_idx = [np.arange(i, j + 1) for i, j in box]
            sub_thetas = _tensor([axes[a][sub_idx[a]] for a in range(p)])
            sub_W = _tensor_weights([simpson_weights(len(sub_idx[a]), axes[a][box[a][0]], axes[a][box[a][1]])
                                     for a in range(p)])
            flat = np.ravel_multi_index(np.meshgrid(*sub_idx, indexing="ij"), (npts,) * p).reshape(-1)
            fine_axes = [np.linspace(axes[a][box[a][0]], axes[a][box[a][1]], npts) for a in range(p)]
            fine_W = _tensor_weights([simpson_weights(npts, ax[0], ax[-1]) for ax in fine_axes])
            fine_thetas = _tensor(fine_axes)
            fine_logw = _log_post(obs, model, prior, fine_thetas)
            evals += len(fine_thetas)
            shift = max(shift, float(np.max(fine_logw)) + log_shift)
            D_full, N_full = _moments(logw, W, thetas, shift)
            D_sub, N_sub = _moments(logw[flat], sub_W, sub_thetas, shift)
            D_fine, N_fine = _moments(fine_logw, fine_W, fine_thetas, shift)
            D = D_full - D_sub + D_fine
            N = N_full - N_sub + N_fine
        else:
            box = None

    if not (D > 0 and np.isfinite(D)):
        raise DegeneratePosterior("posterior normalising constant underflowed")
    theta = np.clip(N / D, lo, hi)
    g_n = None
    if np.all(theta > lo) and np.all(theta < hi):
        g_n = -h_n_grad_hess(obs, model, theta).hess / obs.n
    return EstimationResult("bayes", theta, None, g_n, True, evals,
                            info={"refined_box": None if box is None else [list(map(int, b)) for b in box]})


def qmle_with_bayes_init(obs: Observations, model: ModelSpec, prior: Optional[Prior] = None,
                         multistart: bool = True, **bayes_opts) -> EstimationResult:
    """QMLE started from the Bayes-type estimate."""
    tb = bayes(obs, model, prior, **bayes_opts)
    res = qmle(obs, model, tb.theta_hat, multistart=multistart)
    res.kind = "qmle_bayes_init"
    res.evals += tb.evals
    res.info["bayes"] = tb.theta_hat.tolist()
    return res


def sqrtm_psd(a: np.ndarray) -> np.ndarray:
    lam, V = np.linalg.eigh(0.5 * (a + a.T))
    return (V * np.sqrt(np.maximum(lam, 0.0))) @ V.T


def standardize(result: EstimationResult, obs: Observations, model: ModelSpec, theta_star):
    """Return (sqrt(n)(theta_hat - theta*), Gamma_hat^{1/2} sqrt(n)(theta_hat - theta*)).

    Gamma_hat is the information integral along the observed path evaluated
    at the estimate. Both vectors are also stored on ``result``.
    """
    theta_star = check_theta(model, np.atleast_1d(np.asarray(theta_star, float)))
    err = math.sqrt(obs.n) * (np.asarray(result.theta_hat, float) - theta_star)
    g = gamma_info(obs, model, result.theta_hat)
    if np.linalg.eigvalsh(g)[0] < 1e-12:
        raise SingularInformation("estimated information matrix is singular")
    z = sqrtm_psd(g) @ err
    result.std_error = err
    result.standardized = z
    return err, z


ESTIMATORS = ("qmle", "bayes", "qmle_bayes_init")


def run_estimator(kind: str, obs: Observations, model: ModelSpec, init=None, prior=None,
                  multistart: bool = True) -> EstimationResult:
    kind = kind.replace("-", "_")
    if kind == "qmle":
        if init is None:
            raise DomainError("qmle needs an initial value")
        return qmle(obs, model, init, multistart=multistart)
    if kind == "bayes":
        return bayes(obs, model, prior)
    if kind == "qmle_bayes_init":
        return qmle_with_bayes_init(obs, model, prior, multistart=multistart)
    raise ValueError(f"unknown estimator {kind!r}")
