"""Command-line entry point: ``qla simulate | estimate | mc-study | nondeg``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import nondeg
from .errors import ConfigError, NoConvergence, QlaError
from .estimate import bayes, qmle, qmle_with_bayes_init, standardize
from .io import atomic_write, dumps_json, ingest_csv, paths_csv
from .mcstudy import StudyConfig, dump_csv, run_study, summarize
from .model import get_model
from .qlik import Observations, h_n_grid, y_field, y_limit
from .simulate import simulate_path

log = logging.getLogger("qla")


def _floats(text):
    return [float(v) for v in str(text).split(",") if v.strip()]


def _model_arg(args):
    if getattr(args, "model_config", None):
        with open(args.model_config, encoding="utf-8") as fh:
            return get_model(json.load(fh))
    return get_model(args.model)


def _common(p):
    p.add_argument("--seed", type=int, default=0, help="base seed for all randomness")
    p.add_argument("-v", "--verbose", action="count", default=0)


def _model_opts(p):
    p.add_argument("--model", default="exp-sin2", help="registered model name")
    p.add_argument("--model-config", help="JSON file defining a custom model")


def _sim_opts(p, n_default=500):
    p.add_argument("--n", type=int, default=n_default, help="number of sampling intervals")
    p.add_argument("--T", type=float, default=1.0, help="time horizon")
    p.add_argument("--scheme", choices=["euler", "milstein"], default=None)
    p.add_argument("--substeps", type=int, default=10)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qla", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate sample paths to CSV")
    _common(p)
    _model_opts(p)
    _sim_opts(p)
    p.add_argument("--theta-star", required=True, type=_floats)
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--long", action="store_true", help="single CSV with a rep column")
    p.add_argument("--out", required=True, help="CSV path (or directory when --reps > 1 without --long)")

    p = sub.add_parser("estimate", help="estimate theta from data or a simulated path")
    _common(p)
    _model_opts(p)
    _sim_opts(p)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="CSV with columns t, x_*, y_*")
    src.add_argument("--simulate", action="store_true", help="simulate the data at --theta-star")
    p.add_argument("--estimator", choices=["qmle", "bayes", "qmle-bayes-init"], default="qmle")
    p.add_argument("--init", type=_floats)
    p.add_argument("--no-multistart", action="store_true")
    p.add_argument("--theta-star", type=_floats, help="true value; enables standardization")
    p.add_argument("--strict", action="store_true", help="non-convergence is an error")
    p.add_argument("--profile", help="write a CSV profile of H_n, Y_n and Y over a theta grid")
    p.add_argument("--profile-points", type=int, default=257)
    p.add_argument("--out", help="result file (.json or .csv); stdout when omitted")

    p = sub.add_parser("mc-study", help="run a Monte Carlo study from a JSON config")
    _common(p)
    p.set_defaults(seed=None)
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", default=".")
    p.add_argument("--workers", type=int)
    p.add_argument("--dump-reps", action="store_true")

    p = sub.add_parser("nondeg", help="nondegeneracy diagnostics")
    _common(p)
    _model_opts(p)
    _sim_opts(p)
    p.add_argument("--check", required=True,
                   choices=["chi0", "h2-tail", "pldi-tail", "separation", "support-bound"])
    p.add_argument("--theta-star", type=_floats)
    p.add_argument("--data", help="CSV path for the chi0 check (simulated otherwise)")
    p.add_argument("--r-grid", type=_floats, default=[1, 2, 5, 10, 20, 50, 100])
    p.add_argument("--replicates", type=int, default=200)
    p.add_argument("--J", type=int, default=1)
    p.add_argument("--alphas", type=_floats, default=[1.0, 2.0])
    p.add_argument("--delta", type=float, default=1.0)
    p.add_argument("--eps", type=float, default=1.0)
    p.add_argument("--n-list", type=_floats, default=[1e3, 1e6])
    p.add_argument("--samples", type=int, default=20000)
    p.add_argument("--out", help="JSON report path; stdout when omitted")
    return parser


def _emit(text, out):
    if out:
        atomic_write(out, text)
    else:
        sys.stdout.write(text)


def _scheme(model, args):
    if args.scheme:
        return args.scheme
    return "milstein" if (model.x_is_y and model.m == 1 and model.r == 1) else "euler"


def cmd_simulate(args):
    model = _model_arg(args)
    paths = [simulate_path(model, args.n, args.T, args.theta_star, args.seed, _scheme(model, args),
                           args.substeps, key=(j,)) for j in range(args.reps)]
    if args.reps == 1 or args.long:
        atomic_write(args.out, paths_csv(paths, long=args.long))
    else:
        for j, p in enumerate(paths):
            atomic_write(os.path.join(args.out, f"path_{j:05d}.csv"), paths_csv([p]))
    return 0


def _observations(args, model):
    if args.data:
        return ingest_csv(args.data)
    if args.theta_star is None:
        raise ConfigError("--simulate needs --theta-star")
    path = simulate_path(model, args.n, args.T, args.theta_star, args.seed, _scheme(model, args),
                         args.substeps, key=(0,))
    return Observations.from_path(path)


def _profile_csv(obs, model, theta_star, points):
    if model.p != 1:
        raise ConfigError("--profile is available for one-parameter models only")
    grid = np.linspace(model.lo[0], model.hi[0], points)[:, None]
    H = h_n_grid(obs, model, grid)
    lines = ["theta,H_n,Y_n,Y"]
    if theta_star is not None:
        yn = y_field(obs, model, theta_star, grid)
        yl = y_limit(obs, model, theta_star, grid)
    for i, th in enumerate(grid[:, 0]):
        if theta_star is None:
            lines.append(f"{float(th)!r},{float(H[i])!r},,")
        else:
            lines.append(f"{float(th)!r},{float(H[i])!r},{float(yn[i])!r},{float(yl[i])!r}")
    return "\n".join(lines) + "\n"


def cmd_estimate(args):
    model = _model_arg(args)
    obs = _observations(args, model)
    multistart = not args.no_multistart
    kind = args.estimator.replace("-", "_")
    if kind == "qmle":
        init = args.init if args.init is not None else list(0.5 * (model.lo + model.hi))
        res = qmle(obs, model, init, multistart=multistart)
    elif kind == "bayes":
        res = bayes(obs, model)
    else:
        res = qmle_with_bayes_init(obs, model, multistart=multistart)
    if args.strict and not res.converged:
        raise NoConvergence(f"{kind} did not converge")
    if args.theta_star is not None:
        standardize(res, obs, model, args.theta_star)
    payload = {"schema": 1, "model": model.name, "estimator": kind, "n": obs.n, "T": obs.T,
               "data": obs.provenance, "seed": args.seed if args.simulate else None, "result": res.to_dict()}
    if args.profile:
        atomic_write(args.profile, _profile_csv(obs, model, args.theta_star, args.profile_points))
    if args.out and args.out.endswith(".csv"):
        p = model.p
        cols = ["estimator"] + [f"theta_hat_{i + 1}" for i in range(p)] + ["objective", "converged"]
        row = [kind] + [repr(float(v)) for v in res.theta_hat] + [
            "" if res.objective is None else repr(res.objective), str(int(res.converged))]
        if res.standardized is not None:
            cols += [f"std_error_{i + 1}" for i in range(p)] + [f"standardized_{i + 1}" for i in range(p)]
            row += [repr(float(v)) for v in res.std_error] + [repr(float(v)) for v in res.standardized]
        _emit(",".join(cols) + "\n" + ",".join(row) + "\n", args.out)
    else:
        _emit(dumps_json(payload), args.out)
    return 0


def cmd_mc_study(args):
    try:
        with open(args.config, encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc}") from None
    outputs = raw.get("outputs", {}) if isinstance(raw, dict) else {}
    cfg = StudyConfig.from_dict(raw)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.workers is not None:
        cfg.workers = args.workers
    report = run_study(cfg)
    text, table = summarize(report)
    out = lambda key, default: os.path.join(args.out_dir, outputs.get(key, default))
    atomic_write(out("report", "report.json"), dumps_json(report.to_dict()))
    atomic_write(out("table", "table.csv"), table)
    if args.dump_reps or outputs.get("dump"):
        atomic_write(out("dump", "reps.csv"), dump_csv(report))
    sys.stdout.write(text)
    return 0


def cmd_nondeg(args):
    check = args.check
    if check == "separation":
        rep = nondeg.separation_check(args.J, args.alphas, args.delta, args.eps,
                                      [int(v) for v in args.n_list], args.samples, args.seed)
        _emit(dumps_json({"check": check, **rep.to_dict()}), args.out)
        return 0
    model = _model_arg(args)
    theta_star = args.theta_star
    if theta_star is None:
        raise ConfigError(f"--check {check} needs --theta-star")
    scheme = _scheme(model, args)
    if check == "chi0":
        if args.data:
            obs = ingest_csv(args.data)
        else:
            obs = Observations.from_path(simulate_path(model, args.n, args.T, theta_star, args.seed,
                                                       scheme, args.substeps, key=(0,)))
        out = {"check": check, **nondeg.chi0(obs, model, theta_star, return_details=True)}
    elif check == "h2-tail":
        rep = nondeg.h2_tail_curve(model, theta_star, args.n, args.T, args.r_grid, args.replicates,
                                   args.seed, scheme, args.substeps)
        out = {"check": check, **rep.to_dict()}
    elif check == "pldi-tail":
        rep = nondeg.pldi_tail(model, theta_star, args.n, args.T, args.r_grid, None, args.replicates,
                               args.seed, scheme, args.substeps)
        out = {"check": check, **rep.to_dict()}
    else:
        factories = {"power": nondeg.power_support, "sin-sin": nondeg.sin_sin_support}
        if model.name not in factories:
            raise ConfigError(f"no built-in supporting function for model {model.name!r}")
        spec = factories[model.name](model)
        res = nondeg.supporting_bound_check(spec, theta_star)
        out = {"check": check, "model": model.name, "rho": spec.rho, "scale": spec.scale,
               "U": list(spec.U), **res}
    _emit(dumps_json(out), args.out)
    return 0


COMMANDS = {"simulate": cmd_simulate, "estimate": cmd_estimate, "mc-study": cmd_mc_study, "nondeg": cmd_nondeg}


def parse_and_dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (QlaError, OSError, ValueError) as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1


def main():
    sys.exit(parse_and_dispatch())


if __name__ == "__main__":
    main()
