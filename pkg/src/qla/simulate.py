"""Euler-Maruyama and Milstein simulation on the uniform grid t_k = kT/n.

Randomness is derived from ``(seed, key)`` through ``numpy.random.SeedSequence``
spawn keys, so replicate ``j`` always sees the same Gaussian stream no matter
how replicates are scheduled or batched.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NumericBlowup, UnsupportedScheme
from .model import ModelSpec, check_theta

BLOWUP = 1e12
SCHEMES = ("euler", "milstein")


@dataclass
class SamplePath:
    n: int
    T: float
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    seed: int
    scheme: str
    substeps: int
    theta: np.ndarray
    key: tuple = ()

    @property
    def h(self) -> float:
        return self.T / self.n


def stream_rng(seed: int, *key: int) -> np.random.Generator:
    """Generator for the independent stream labelled ``key`` under ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def gaussian_stream(seed: int, stream: int, size) -> np.ndarray:
    """Reproducible standard normal draws for stream ``stream`` of ``seed``."""
    return stream_rng(seed, stream).standard_normal(size)


def time_grid(n: int, T: float) -> np.ndarray:
    return np.arange(n + 1) * T / n


def _dsigma_dy(model, y, theta):
    if model.dsigma_dy is not None:
        return np.asarray(model.dsigma_dy(y, theta), float)
    h = 1e-6 * np.maximum(1.0, np.abs(y))
    return (model.sigma(y + h, theta) - model.sigma(y - h, theta)) / (2 * h[..., None])


def integrate(model: ModelSpec, theta, T: float, n: int, dw: np.ndarray,
              scheme: str = "milstein", substeps: int = 1, on_blowup: str = "raise"):
    """Integrate a batch of paths driven by the Wiener increments ``dw``.

    ``dw`` has shape ``(B, n * substeps, r)`` and already includes the
    sqrt(dt) scaling. Returns ``(x, y)`` sampled on the coarse grid, with
    shapes ``(B, n + 1, d)`` and ``(B, n + 1, m)``. With ``on_blowup="mask"``
    paths that leave the blow-up guard are returned as NaN instead of raising.
    """
    if scheme not in SCHEMES:
        raise UnsupportedScheme(f"unknown scheme {scheme!r}")
    if scheme == "milstein" and not (model.x_is_y and model.m == 1 and model.r == 1):
        raise UnsupportedScheme("Milstein is only available for scalar models with X = Y")
    theta = np.asarray(theta, float)
    dw = np.asarray(dw, float)
    B, N = dw.shape[0], dw.shape[1]
    if N != n * substeps or dw.shape[2] != model.r:
        raise ValueError(f"dw must have shape (B, {n * substeps}, {model.r})")
    dt = T / N

    y = np.broadcast_to(np.asarray(model.y0, float), (B, model.m)).copy()
    x = y if model.x_is_y else np.broadcast_to(np.asarray(model.x0, float), (B, model.d)).copy()
    ys = np.empty((B, n + 1, model.m))
    xs = ys if model.x_is_y else np.empty((B, n + 1, model.d))
    ys[:, 0] = y
    if not model.x_is_y:
        xs[:, 0] = x
    dead = np.zeros(B, bool)

    for step in range(N):
        t = step * dt
        inc = dw[:, step, :]
        sig = np.asarray(model.sigma(x, theta), float)
        y_new = y + np.asarray(model.drift(t, x, y), float) * dt + np.einsum("bmr,br->bm", sig, inc)
        if scheme == "milstein":
            y_new = y_new + 0.5 * sig[..., 0] * _dsigma_dy(model, y, theta)[..., 0] * (inc * inc - dt)
        if not model.x_is_y:
            x = x + np.asarray(model.x_drift(t, x), float) * dt + np.einsum(
                "bdr,br->bd", np.asarray(model.x_diff(t, x), float), inc)
        y = y_new
        if model.x_is_y:
            x = y
        if (step + 1) % substeps == 0:
            k = (step + 1) // substeps
            bad = ~(np.all(np.isfinite(y) & (np.abs(y) <= BLOWUP), axis=-1)
                    & np.all(np.isfinite(x) & (np.abs(x) <= BLOWUP), axis=-1))
            if np.any(bad):
                if on_blowup == "raise":
                    raise NumericBlowup(f"state left [-{BLOWUP:g}, {BLOWUP:g}] at t={k * T / n}")
                # frozen at zero so the remaining steps stay finite; reported as NaN
                dead |= bad
                y = np.where(bad[:, None], 0.0, y)
                x = y if model.x_is_y else np.where(bad[:, None], 0.0, x)
            ys[:, k] = y
            if not model.x_is_y:
                xs[:, k] = x
    if np.any(dead):
        ys[dead] = np.nan
        if not model.x_is_y:
            xs[dead] = np.nan
    return xs, ys


def wiener_increments(seed: int, key: tuple, n: int, T: float, r: int, substeps: int) -> np.ndarray:
    N = n * substeps
    return stream_rng(seed, *key).standard_normal((N, r)) * np.sqrt(T / N)


def simulate_paths(model: ModelSpec, n: int, T: float, theta, seed: int, keys,
                   scheme: str = "milstein", substeps: int = 10, on_blowup: str = "raise"):
    """Simulate one path per key in ``keys`` (vectorised across the batch)."""
    if n < 1 or substeps < 1:
        raise ValueError("n and substeps must be >= 1")
    theta = check_theta(model, theta)
    keys = [tuple(k) if isinstance(k, (tuple, list)) else (k,) for k in keys]
    dw = np.stack([wiener_increments(seed, k, n, T, model.r, substeps) for k in keys])
    return integrate(model, theta, T, n, dw, scheme, substeps, on_blowup)


def simulate_path(model: ModelSpec, n: int, T: float, theta, seed: int,
                  scheme: str = "milstein", substeps: int = 10, key=()) -> SamplePath:
    """Simulate a single path; ``key`` selects an independent sub-stream."""
    theta = check_theta(model, theta)
    if np.any(theta <= model.lo) or np.any(theta >= model.hi):
        raise DomainError("true parameter must lie in the open box")
    x, y = simulate_paths(model, n, T, theta, seed, [tuple(key)], scheme, substeps)
    return SamplePath(n, float(T), time_grid(n, T), x[0], y[0], int(seed), scheme, int(substeps),
                      theta.copy(), tuple(key))
