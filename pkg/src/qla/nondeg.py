"""Nondegeneracy diagnostics for the quasi-likelihood random field.

Covers the divergence Q, the key index chi_0, Monte Carlo tail curves for
chi_0 and for sup Z_n, numeric checks of a polynomial separation bound and
grid checks of supporting-function lower bounds.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import isotonic_regression, minimize
from statsmodels.stats.proportion import proportion_confint

from .errors import EmptyRegion, GridTooCoarse, InvalidAlphas
from .model import ModelSpec, check_theta, sin_sin, power
from .qlik import Observations, divergence, gamma_info, in_local_domain, log_z_grid, y_limit, _xpath
from .simulate import simulate_paths

log = logging.getLogger(__name__)

CHI0_POINTS = {1: 513, 2: 65, 3: 17}
GOLDEN = (math.sqrt(5) - 1) / 2


def q_divergence(model: ModelSpec, x, theta, theta_star) -> np.ndarray:
    """Q(x, theta, theta*) = Tr(S^-1 S* - I) - log det(S^-1 S*), clamped at 0."""
    theta = check_theta(model, theta)
    theta_star = check_theta(model, theta_star)
    q = np.asarray(divergence(model, np.asarray(x, float), theta, theta_star), float)
    same = np.all(np.broadcast_to(theta == theta_star, np.broadcast_shapes(theta.shape, theta_star.shape)), axis=-1)
    q = np.where(np.broadcast_to(same, q.shape) if np.ndim(same) <= q.ndim else same, 0.0, q)
    low = np.min(q) if q.size else 0.0
    if low < -1e-10:
        log.warning("Q evaluated to %.3g; clamped to 0", low)
    return np.maximum(q, 0.0)


# ---------------------------------------------------------------------------
# chi_0

def _golden_min(f, a, b, tol=1e-10, max_iter=200):
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if abs(b - a) <= tol * max(1.0, abs(a) + abs(b)):
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    return (c, fc) if fc < fd else (d, fd)


def _ratio(path, model, theta_star, thetas, T):
    thetas = np.atleast_2d(thetas)
    dist2 = np.sum((thetas - theta_star) ** 2, axis=-1)
    return -y_limit(path, model, theta_star, thetas, T) / dist2


def chi0(path, model: ModelSpec, theta_star, T=None, points: Optional[int] = None,
         delta_frac: float = 1e-3, return_details: bool = False):
    """Key index chi_0 = inf_{theta != theta*} -Y(theta) / |theta - theta*|^2.

    Away from theta* the ratio is scanned on a grid and refined around the
    grid minimiser; within ``delta_frac * diam(Theta)`` of theta* the ratio is
    replaced by its limit, half the smallest eigenvalue of Gamma(theta*).
    """
    x, T = _xpath(path, T)
    theta_star = check_theta(model, np.atleast_1d(np.asarray(theta_star, float)))
    p = model.p
    pts = points or CHI0_POINTS.get(p, 9)
    delta = delta_frac * model.diameter
    axes = [np.linspace(model.lo[i], model.hi[i], pts) for i in range(p)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, p)
    far = np.linalg.norm(grid - theta_star, axis=-1) >= delta
    grid = grid[far]
    vals = _ratio(x, model, theta_star, grid, T)
    i = int(np.argmin(vals))
    best_theta, best = grid[i].copy(), float(vals[i])
    cell = (model.hi - model.lo) / (pts - 1)

    f = lambda th: float(_ratio(x, model, theta_star, np.atleast_1d(th)[None], T)[0]) \
        if np.linalg.norm(np.atleast_1d(th) - theta_star) >= delta else np.inf
    a = np.maximum(best_theta - cell, model.lo)
    b = np.minimum(best_theta + cell, model.hi)
    if p == 1:
        th_r, v_r = _golden_min(lambda t: f(np.array([t])), a[0], b[0])
        th_r = np.array([th_r])
    else:
        opt = minimize(f, best_theta, method="L-BFGS-B", bounds=list(zip(a, b)))
        th_r, v_r = opt.x, float(opt.fun)
    if v_r < best:
        inner = np.all(np.abs(th_r - best_theta) < cell * (1 - 1e-6))
        on_edge = np.any((np.isclose(th_r, a) & (a > model.lo)) | (np.isclose(th_r, b) & (b < model.hi)))
        if not inner or on_edge:
            warnings.warn("chi0 refinement hit the edge of its grid cell; consider more points",
                          GridTooCoarse, stacklevel=2)
        best_theta, best = th_r, v_r

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        g = gamma_info(x, model, theta_star, T)
    local = 0.5 * float(np.linalg.eigvalsh(g)[0])
    value = min(best, local)
    if return_details:
        return {"chi0": value, "far_min": best, "argmin": best_theta.tolist(), "local_limit": local}
    return value


# ---------------------------------------------------------------------------
# Monte Carlo tail curves

def wilson_interval(count, nobs, level=0.95):
    count = np.asarray(count)
    if np.all(np.asarray(nobs) == 0):
        return np.zeros(count.shape), np.ones(count.shape)
    lo, hi = proportion_confint(count, nobs, alpha=1 - level, method="wilson")
    # pin the empty and full cells to the exact ends of [0, 1]
    lo = np.where(count == 0, 0.0, lo)
    hi = np.where(count == nobs, 1.0, hi)
    return np.asarray(lo, float), np.asarray(hi, float)


def fit_tail_exponent(r, prob) -> float:
    """Negative slope of log prob against log r over the cells with 0 < prob < 1."""
    r = np.asarray(r, float)
    prob = np.asarray(prob, float)
    ok = (prob > 0) & (prob < 1)
    if ok.sum() < 2:
        return float("nan")
    slope = np.polyfit(np.log(r[ok]), np.log(prob[ok]), 1)[0]
    return float(-slope)


@dataclass
class NondegReport:
    chi0_samples: np.ndarray
    r_grid: np.ndarray
    tail_prob: np.ndarray
    tail_prob_raw: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    fitted_exponent: float
    zn_tail: Optional[np.ndarray] = None
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        arr = lambda a: None if a is None else np.asarray(a, float).tolist()
        return {
            "chi0_samples": arr(self.chi0_samples),
            "r_grid": arr(self.r_grid),
            "tail_prob": arr(self.tail_prob),
            "tail_prob_raw": arr(self.tail_prob_raw),
            "ci_low": arr(self.ci_low),
            "ci_high": arr(self.ci_high),
            "fitted_exponent": None if math.isnan(self.fitted_exponent) else self.fitted_exponent,
            "zn_tail": arr(self.zn_tail),
            "config": self.config,
        }


def _batched_paths(model, n, T, theta_star, seed, replicates, scheme, substeps, batch=200):
    for a in range(0, replicates, batch):
        keys = [(j, n) for j in range(a, min(a + batch, replicates))]
        x, y = simulate_paths(model, n, T, theta_star, seed, keys, scheme, substeps)
        for b in range(len(keys)):
            yield Observations(n, T, x[b], y[b], f"simulated(seed={seed}, key={keys[b]})")


def _default_scheme(model):
    return "milstein" if (model.x_is_y and model.m == 1 and model.r == 1) else "euler"


def h2_tail_curve(model: ModelSpec, theta_star, n: int, T: float, r_grid, replicates: int,
                  seed: int, scheme: Optional[str] = None, substeps: int = 10,
                  points: Optional[int] = None) -> NondegReport:
    """Monte Carlo estimate of P[chi_0 <= 1/r] with Wilson intervals."""
    r_grid = np.atleast_1d(np.asarray(r_grid, float))
    scheme = scheme or _default_scheme(model)
    samples = np.array([chi0(obs, model, theta_star, points=points)
                        for obs in _batched_paths(model, n, T, theta_star, seed, replicates, scheme, substeps)])
    cfg = {"model": model.name, "theta_star": np.atleast_1d(theta_star).tolist(), "n": n, "T": T,
           "replicates": replicates, "seed": seed, "scheme": scheme, "substeps": substeps}
    if replicates == 0:
        empty = np.full(r_grid.shape, np.nan)
        return NondegReport(samples, r_grid, empty, empty, np.zeros(r_grid.shape), np.ones(r_grid.shape),
                            float("nan"), config=cfg)
    counts = np.array([np.sum(samples <= 1.0 / r) for r in r_grid])
    raw = counts / replicates
    order = np.argsort(r_grid)
    iso = raw.copy()
    iso[order] = isotonic_regression(raw[order], increasing=False).x
    lo, hi = wilson_interval(counts, replicates)
    return NondegReport(samples, r_grid, iso, raw, lo, hi, fit_tail_exponent(r_grid, raw), config=cfg)


@dataclass
class PldiReport:
    r_grid: np.ndarray
    frequency: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    empty: np.ndarray
    events: np.ndarray
    sup_log_z: np.ndarray
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        f = lambda a: [None if not np.isfinite(v) else float(v) for v in np.asarray(a, float)]
        return {"r_grid": f(self.r_grid), "frequency": f(self.frequency), "ci_low": f(self.ci_low),
                "ci_high": f(self.ci_high), "empty": [bool(e) for e in self.empty], "config": self.config}


def default_u_grid(model: ModelSpec, theta_star, n: int, points: int = 401) -> np.ndarray:
    """Equispaced u-grid covering U_n (p = 1) or a tensor grid of it."""
    theta_star = np.atleast_1d(np.asarray(theta_star, float))
    lo = (model.lo - theta_star) * math.sqrt(n)
    hi = (model.hi - theta_star) * math.sqrt(n)
    axes = [np.linspace(lo[i], hi[i], points) for i in range(model.p)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, model.p)


def pldi_tail(model: ModelSpec, theta_star, n: int, T: float, r_grid, u_grid=None, replicates: int = 100,
              seed: int = 0, scheme: Optional[str] = None, substeps: int = 10) -> PldiReport:
    """Frequency of {sup_{u in V_n(r)} Z_n(u) >= e^-r} over simulated replicates.

    V_n(r) is the part of the u-grid inside U_n with |u| >= r. Radii whose
    region is empty are flagged and get a NaN frequency.
    """
    theta_star = check_theta(model, np.atleast_1d(np.asarray(theta_star, float)))
    r_grid = np.atleast_1d(np.asarray(r_grid, float))
    scheme = scheme or _default_scheme(model)
    us = default_u_grid(model, theta_star, n) if u_grid is None else np.asarray(u_grid, float)
    if us.ndim == 1:
        us = us[:, None]
    us = us[in_local_domain(model, theta_star, n, us)]
    norms = np.linalg.norm(us, axis=-1)
    regions = [norms >= r for r in r_grid]
    empty = np.array([not np.any(reg) for reg in regions])
    for r, e in zip(r_grid, empty):
        if e:
            log.info("%s", EmptyRegion(f"V_n({r:g}) has no u-grid points"))

    sups = np.full((replicates, len(r_grid)), -np.inf)
    for j, obs in enumerate(_batched_paths(model, n, T, theta_star, seed, replicates, scheme, substeps)):
        lz = log_z_grid(obs, model, theta_star, us)
        for i, reg in enumerate(regions):
            if not empty[i]:
                sups[j, i] = np.max(lz[reg])
    events = sups >= -r_grid[None, :]
    counts = events.sum(axis=0)
    freq = np.where(empty, np.nan, counts / max(replicates, 1))
    lo, hi = wilson_interval(counts, replicates)
    cfg = {"model": model.name, "theta_star": theta_star.tolist(), "n": n, "T": T,
           "replicates": replicates, "seed": seed, "scheme": scheme, "substeps": substeps, "u_points": len(us)}
    return PldiReport(r_grid, freq, np.where(empty, np.nan, lo), np.where(empty, np.nan, hi), empty, events,
                      sups, cfg)


# ---------------------------------------------------------------------------
# polynomial separation

def _inf_over_u(a, x, eps):
    """inf over u in U_eps of |sum_j a_j u_j x^j| for nonnegative a (rows)."""
    J1 = a.shape[-1]
    mags = a * x ** np.arange(J1)
    lo, hi = eps * mags, mags / eps
    best = np.full(a.shape[:-1], np.inf)
    # the sign of the leading term can be fixed by symmetry
    for signs in range(1 << (J1 - 1)):
        neg = np.array([False] + [(signs >> k) & 1 == 1 for k in range(J1 - 1)])
        smin = np.sum(np.where(neg, -hi, lo), axis=-1)
        smax = np.sum(np.where(neg, -lo, hi), axis=-1)
        val = np.where((smin <= 0) & (smax >= 0), 0.0, np.minimum(np.abs(smin), np.abs(smax)))
        best = np.minimum(best, val)
    return best


def separation_value(c, alphas, n, eps) -> np.ndarray:
    """max_i inf_u |p(c * u, n^-alpha_i)| for each coefficient row of ``c``."""
    a = np.abs(np.atleast_2d(np.asarray(c, float)))
    vals = [_inf_over_u(a, float(n) ** (-al), eps) for al in alphas]
    return np.max(np.stack(vals), axis=0)


@dataclass
class SeparationReport:
    n_list: list
    minimum: list
    L: list
    argmin: list
    spread: float

    def to_dict(self) -> dict:
        return {"n_list": self.n_list, "minimum": self.minimum, "L": self.L, "argmin": self.argmin,
                "relative_spread": self.spread}


def separation_check(J: int, alphas, delta: float, eps: float, n_list, samples: int = 20000,
                     seed: int = 0, refine: int = 20) -> SeparationReport:
    """Sampled lower envelope of the polynomial separation quantity.

    Coefficient vectors are drawn on |c|_1 = delta (uniform on the simplex
    and with log-uniform magnitudes) plus a share of interior points; the best
    draws are polished with Nelder-Mead. Only |c_j| matters because the signs
    of u are free. Reports the empirical minimum and L(n) = -log(min)/log(n).
    """
    alphas = np.asarray(alphas, float)
    if alphas.shape != (J + 1,):
        raise InvalidAlphas(f"need J + 1 = {J + 1} exponents")
    if np.any(alphas <= 0) or len(np.unique(alphas)) != len(alphas):
        raise InvalidAlphas("exponents must be positive and pairwise distinct")
    if delta <= 0 or not (0 < eps <= 1):
        raise ValueError("need delta > 0 and eps in (0, 1]")
    rng = np.random.default_rng(seed)
    mins, Ls, args = [], [], []
    for n in n_list:
        k = J + 1
        decades = alphas.max() * max(J, 1) * math.log10(n) + 2
        simplex = rng.dirichlet(np.ones(k), samples // 2)
        logmag = 10.0 ** (-decades * rng.random((samples - samples // 2, k)))
        logmag /= logmag.sum(axis=1, keepdims=True)
        c = np.vstack([simplex, logmag]) * delta
        interior = rng.random(len(c)) < 0.1
        c[interior] *= 1 + rng.random((interior.sum(), 1))
        vals = separation_value(c, alphas, n, eps)
        best_i = np.argsort(vals)[:refine]
        best_v, best_c = float(vals[best_i[0]]), c[best_i[0]]

        def obj(z):
            w = np.exp(z - z.max())
            v = float(separation_value(delta * w / w.sum(), alphas, n, eps)[0])
            return math.log(v) if v > 0 else -np.inf

        for i in best_i:
            if k == 1:
                break
            z0 = np.log(np.maximum(c[i] / c[i].sum(), 1e-300))
            res = minimize(obj, z0, method="Nelder-Mead",
                           options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 4000})
            w = np.exp(res.x - res.x.max())
            cc = delta * w / w.sum()
            v = float(separation_value(cc, alphas, n, eps)[0])
            if v < best_v:
                best_v, best_c = v, cc
        mins.append(best_v)
        Ls.append(-math.log(best_v) / math.log(n) if best_v > 0 else float("inf"))
        args.append(best_c.tolist())
    spread = (max(Ls) - min(Ls)) / max(Ls) if Ls else 0.0
    return SeparationReport(list(map(float, n_list)), mins, Ls, args, float(spread))


# ---------------------------------------------------------------------------
# supporting-function bound

@dataclass
class SupportingFunctionSpec:
    f: Callable
    rho: float
    U: tuple
    model: ModelSpec
    scale: float = 1.0

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("rho must be positive")


def supporting_bound_check(spec: SupportingFunctionSpec, theta_star, x_points: int = 201,
                           theta_points: int = 201, x_grid=None, theta_grid=None) -> dict:
    """Minimum of Q |theta - theta*|^-2 - scale |f|^rho over a U x Theta grid (p = 1, d = 1)."""
    model = spec.model
    theta_star = check_theta(model, np.atleast_1d(np.asarray(theta_star, float)))
    xs = np.linspace(spec.U[0], spec.U[1], x_points) if x_grid is None else np.asarray(x_grid, float)
    ths = np.linspace(model.lo[0], model.hi[0], theta_points) if theta_grid is None else np.asarray(theta_grid, float)
    ths = ths[np.abs(ths - theta_star[0]) >= 1e-9]
    X, TH = np.meshgrid(xs, ths, indexing="ij")
    q = q_divergence(model, X[..., None], TH[..., None], theta_star)
    lhs = q / (TH - theta_star[0]) ** 2
    rhs = spec.scale * np.abs(spec.f(X, TH)) ** spec.rho
    slack = lhs - rhs
    bad = np.argwhere(slack < 0)
    return {"min_slack": float(np.min(slack)), "points": int(slack.size),
            "violations": [(float(X[i, j]), float(TH[i, j]), float(slack[i, j])) for i, j in bad[:100]],
            "n_violations": int(len(bad))}


def power_support(model: Optional[ModelSpec] = None) -> SupportingFunctionSpec:
    """f(x, theta) = log(1 + x^2), rho = 2 on U = (-1, 1) for the power model."""
    return SupportingFunctionSpec(lambda x, th: np.log1p(x ** 2), 2.0, (-1.0, 1.0), model or power())


def sin_sin_support(model: Optional[ModelSpec] = None, u: float = 0.5) -> SupportingFunctionSpec:
    """f(x, theta) = theta^-1 (sin theta sin x - theta^2 sin^2 x), extended at theta = 0.

    With g = sin(theta) sin(x) - theta^2 sin^2(x), the sin-sin model at
    theta* = 0 has Q = e^{-2g} - 1 + 2g >= 2 g^2 exp(-2 max|g|), which gives the
    constant ``scale`` below.
    """
    model = model or sin_sin()
    s = math.sin(u)
    theta_max = float(np.max(np.abs([model.lo[0], model.hi[0]])))
    gmax = s + theta_max ** 2 * s ** 2
    f = lambda x, th: np.sinc(th / np.pi) * np.sin(x) - th * np.sin(x) ** 2
    return SupportingFunctionSpec(f, 2.0, (-u, u), model, scale=2.0 * math.exp(-2.0 * gmax))
