"""Monte Carlo studies: simulate replicates, run several estimators on each
path and aggregate means and standard deviations per sampling interval.

Replicate ``j`` at grid size ``n`` always uses the Wiener stream with spawn key
``(j, n)`` under the study seed. Replicates are processed in fixed blocks and
moments are taken over the full replicate array, so the report does not
depend on the number of workers.
"""
from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from .errors import ConfigError, QlaError
from .estimate import Prior, bayes, qmle, standardize
from .model import ModelSpec, get_model
from .qlik import Observations
from .simulate import simulate_paths

BLOCK = 100
SCHEMA = 1


@dataclass
class EstimatorSpec:
    kind: str
    init: Optional[list] = None
    multistart: bool = False
    prior: str = "uniform"

    @property
    def label(self) -> str:
        if self.kind == "qmle":
            init = ",".join(f"{v:g}" for v in self.init)
            return f"qmle(init={init})" + ("" if not self.multistart else "+ms")
        if self.kind == "qmle_bayes_init":
            return "qmle(bayes init)" + ("" if not self.multistart else "+ms")
        return "bayes"


@dataclass
class StudyConfig:
    model: object
    theta_star: list
    T: float = 1.0
    n_list: list = field(default_factory=lambda: [50, 250, 500])
    replicates: int = 1000
    estimators: list = field(default_factory=list)
    seed: int = 0
    substeps: int = 10
    scheme: str = "milstein"
    workers: Optional[int] = None
    standardize: bool = False
    outputs: dict = field(default_factory=dict)

    def __post_init__(self):
        self.theta_star = [float(v) for v in np.atleast_1d(self.theta_star)]
        self.estimators = [e if isinstance(e, EstimatorSpec) else _estimator_from_dict(e) for e in self.estimators]
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        if not self.estimators:
            raise ConfigError("at least one estimator is required")
        if not self.n_list or any(int(n) != n or n < 1 for n in self.n_list):
            raise ConfigError("n_list must contain positive integers")
        self.n_list = [int(n) for n in self.n_list]

    @classmethod
    def from_dict(cls, d: dict) -> "StudyConfig":
        d = dict(d)
        schema = d.pop("schema", SCHEMA)
        if schema != SCHEMA:
            raise ConfigError(f"unsupported config schema {schema!r}")
        if "h_list" in d:
            T = float(d.get("T", 1.0))
            ns = []
            for h in d.pop("h_list"):
                try:
                    frac = Fraction(str(h)) if isinstance(h, str) else Fraction(h).limit_denominator(10 ** 9)
                except (ValueError, TypeError):
                    raise ConfigError(f"cannot read h = {h!r}") from None
                if frac <= 0:
                    raise ConfigError(f"h must be positive, got {h!r}")
                n = Fraction(T).limit_denominator(10 ** 9) / frac
                if n.denominator != 1:
                    raise ConfigError(f"h = {h} does not divide T = {T}")
                ns.append(int(n))
            d["n_list"] = ns
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "model" not in d or "theta_star" not in d:
            raise ConfigError("config needs 'model' and 'theta_star'")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        # scheduling hint only; kept out of the echo so reports compare equal across worker counts
        d.pop("workers")
        d["schema"] = SCHEMA
        if isinstance(self.model, ModelSpec):
            d["model"] = self.model.name
        return d


def _estimator_from_dict(e) -> EstimatorSpec:
    if isinstance(e, str):
        e = {"kind": e}
    e = dict(e)
    kind = str(e.get("kind", "")).replace("-", "_")
    if kind not in ("qmle", "bayes", "qmle_bayes_init"):
        raise ConfigError(f"unknown estimator {e.get('kind')!r}")
    if kind == "qmle" and e.get("init") is None:
        raise ConfigError("qmle needs an 'init' value")
    init = None if e.get("init") is None else [float(v) for v in np.atleast_1d(e["init"])]
    prior = e.get("prior", "uniform")
    if prior != "uniform":
        raise ConfigError("only the uniform prior is configurable from a study file")
    return EstimatorSpec(kind, init, bool(e.get("multistart", False)), prior)


@dataclass
class McReport:
    config: dict
    cells: list
    estimates: dict = field(default_factory=dict)
    converged: dict = field(default_factory=dict)
    standardized: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"schema": SCHEMA, "config": self.config, "cells": self.cells}

    def cell(self, n: int, label: str) -> dict:
        for c in self.cells:
            if c["n"] == n and c["estimator"] == label:
                return c
        raise KeyError((n, label))


def _run_block(model_cfg, cfg: StudyConfig, n: int, start: int, stop: int):
    model = get_model(model_cfg)
    p = model.p
    E = len(cfg.estimators)
    keys = [(j, n) for j in range(start, stop)]
    x, y = simulate_paths(model, n, cfg.T, cfg.theta_star, cfg.seed, keys, cfg.scheme, cfg.substeps,
                          on_blowup="mask")
    est = np.full((len(keys), E, p), np.nan)
    ok = np.zeros((len(keys), E), bool)
    std = np.full((len(keys), E, p), np.nan)
    for b in range(len(keys)):
        if not np.all(np.isfinite(y[b])):
            continue
        obs = Observations(n, cfg.T, x[b], y[b], f"simulated(seed={cfg.seed}, key={keys[b]})")
        tb = None
        for e, spec in enumerate(cfg.estimators):
            try:
                if spec.kind == "qmle":
                    res = qmle(obs, model, spec.init, multistart=spec.multistart)
                elif spec.kind == "bayes":
                    tb = tb or bayes(obs, model, Prior())
                    res = tb
                else:
                    tb = tb or bayes(obs, model, Prior())
                    res = qmle(obs, model, tb.theta_hat, multistart=spec.multistart)
                est[b, e] = res.theta_hat
                ok[b, e] = res.converged
                if cfg.standardize:
                    std[b, e] = standardize(res, obs, model, cfg.theta_star)[1]
            except QlaError:
                ok[b, e] = False
    return est, ok, std


def _workers(cfg):
    w = cfg.workers
    if w is None:
        w = int(os.environ.get("QLA_THREADS", "1") or 1)
    return max(1, int(w))


def _moments(values):
    count = len(values)
    if count == 0:
        nan = [float("nan")] * values.shape[-1]
        return nan, nan, nan
    mean = np.mean(values, axis=0)
    sd = np.std(values, axis=0, ddof=1) if count > 1 else np.zeros(values.shape[-1])
    return mean.tolist(), sd.tolist(), (sd / math.sqrt(count)).tolist()


def run_study(cfg: StudyConfig) -> McReport:
    """Run every (n, estimator) cell of the study and aggregate the moments."""
    model_cfg = cfg.model
    model = get_model(model_cfg)
    workers = _workers(cfg)
    if isinstance(model_cfg, ModelSpec):
        workers = 1
    labels = [e.label for e in cfg.estimators]
    if len(set(labels)) != len(labels):
        raise ConfigError("estimator entries must be distinct")
    R = cfg.replicates
    report = McReport(cfg.to_dict(), [])
    for n in cfg.n_list:
        blocks = [(a, min(a + BLOCK, R)) for a in range(0, R, BLOCK)]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                parts = list(pool.map(_run_block, [model_cfg] * len(blocks), [cfg] * len(blocks),
                                      [n] * len(blocks), [a for a, _ in blocks], [b for _, b in blocks]))
        else:
            parts = [_run_block(model_cfg, cfg, n, a, b) for a, b in blocks]
        est = np.concatenate([p[0] for p in parts])
        ok = np.concatenate([p[1] for p in parts])
        std = np.concatenate([p[2] for p in parts])
        for e, label in enumerate(labels):
            good = ok[:, e]
            mean, sd, se = _moments(est[good, e])
            report.cells.append({
                "n": n, "h": cfg.T / n, "h_label": _h_label(cfg.T, n), "estimator": label,
                "mean": mean, "sd": sd, "mc_standard_error": se,
                "count": int(good.sum()), "failure_count": int(R - good.sum()), "replicates": R,
            })
            report.estimates[(n, label)] = est[:, e]
            report.converged[(n, label)] = good
            if cfg.standardize:
                report.standardized[(n, label)] = std[:, e]
    report.config["model_resolved"] = model.name
    return report


def _h_label(T, n):
    frac = Fraction(T).limit_denominator(10 ** 6) / n
    return f"{frac.numerator}/{frac.denominator}"


def _fmt(v):
    return f"{v:.5f}"


def summarize(report: McReport):
    """Render the study as (aligned text table, CSV text).

    One row per sampling interval; a mean / s.d. column pair per estimator
    (vector parameters are joined with ';').
    """
    labels = []
    for c in report.cells:
        if c["estimator"] not in labels:
            labels.append(c["estimator"])
    header = ["h"] + [f"{lab} {k}" for lab in labels for k in ("mean", "s.d.")]
    rows = []
    seen = []
    for c in report.cells:
        if c["n"] not in seen:
            seen.append(c["n"])
    for n in seen:
        cells = {c["estimator"]: c for c in report.cells if c["n"] == n}
        row = [cells[labels[0]]["h_label"] if labels else str(n)]
        for lab in labels:
            c = cells.get(lab)
            if c is None:
                row += ["", ""]
            else:
                row += [";".join(_fmt(v) for v in c["mean"]), ";".join(_fmt(v) for v in c["sd"])]
        rows.append(row)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    lines = ["  ".join(v.rjust(widths[i]) for i, v in enumerate(r)) for r in [header] + rows]
    return "\n".join(lines) + "\n", buf.getvalue()


def dump_rows(report: McReport):
    """Per-replicate rows: rep, h, estimator, theta_hat_1..p, converged."""
    rows = []
    for (n, label), est in report.estimates.items():
        conv = report.converged[(n, label)]
        h = report.config["T"] / n
        for j in range(len(est)):
            rows.append([j, repr(h), label] + [repr(float(v)) for v in est[j]] + [int(conv[j])])
    return rows


def dump_csv(report: McReport) -> str:
    p = None
    for est in report.estimates.values():
        p = est.shape[-1]
        break
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rep", "h", "estimator"] + [f"theta_hat_{i + 1}" for i in range(p or 0)] + ["converged"])
    w.writerows(dump_rows(report))
    return buf.getvalue()
