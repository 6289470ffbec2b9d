"""Command-line front end.

Every subcommand runs one analysis on a system (a JSON file or a bundled
model) and writes a JSON report plus CSV artifacts into the output
directory.  Exit status: 0 on a positive result, 2 on a negative finding
(for instance a mode the control cannot see), 1 on an operational error
and 64 on bad usage.
"""

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from .errors import (
    ConstantsNotCertified,
    NotExactlyControllable,
    ProjectedPairUncontrollable,
    StabkitError,
    StageError,
    SystemFormatError,
)
from .gramian import estimate_observability_constants, verify_observability_constants
from .hautus import equivalence_audit, rapid_sweep
from .models import (build_fractional_model, build_heat_dirichlet, load_mask_text,
                     model_manifest)
from .operators import dumps_system, loads_system
from .pipeline import certify_l2, simulate_closed_loop, stabilize

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NEGATIVE = 2
EXIT_USAGE = 64

OUTPUT_ENV = "STABKIT_OUTPUT_DIR"

DEFAULTS = {
    "system": None,
    "model": None,
    "N": 32,
    "n_grid": 128,
    "s": 0.5,
    "theta": 0.5,
    "mask": None,
    "alpha": 1.0,
    "alphas": None,
    "mu": None,
    "D2": 2.0,
    "horizon": None,
    "dt": None,
    "seed": 0,
    "n_re": 12,
    "n_im": 20,
    "open_loop": False,
    "out": None,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _source_options(p):
    g = p.add_argument_group("system")
    g.add_argument("--system", help="system JSON file")
    g.add_argument("--model", choices=["heat", "fractional"], help="bundled model")
    g.add_argument("--N", type=int, help="heat model: number of sine modes")
    g.add_argument("--n-grid", dest="n_grid", type=int, help="fractional model: grid points")
    g.add_argument("--s", type=float, help="fractional model: order of (-Delta)^s")
    g.add_argument("--theta", type=float, help="fractional model: frequency shift")
    g.add_argument("--mask", help="fractional model: mask file of 0/1 rows")


def _common_options(p):
    p.add_argument("--alpha", type=float, help="target decay rate")
    p.add_argument("--seed", type=int, help="seed for all randomized steps")
    p.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or .)")
    p.add_argument("--config", help="JSON file of option defaults; flags override")


def build_parser():
    parser = _Parser(prog="stabkit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("audit", help="Hautus, PBH and pipeline verdicts compared")
    _source_options(p)
    _common_options(p)
    p.add_argument("--n-re", dest="n_re", type=int)
    p.add_argument("--n-im", dest="n_im", type=int)

    p = sub.add_parser("sweep", help="Hautus margin over the half-plane")
    _source_options(p)
    _common_options(p)
    p.add_argument("--alphas", help="comma-separated ascending rates (rapid sweep)")
    p.add_argument("--n-re", dest="n_re", type=int)
    p.add_argument("--n-im", dest="n_im", type=int)

    for name, text in (("synthesize", "bounded feedback through the unstable part"),
                       ("simulate", "closed-loop trajectory and decay data")):
        p = sub.add_parser(name, help=text)
        _source_options(p)
        _common_options(p)
        p.add_argument("--mu", type=float, help="decay rate of the projected loop")
        p.add_argument("--horizon", type=float)
        p.add_argument("--dt", type=float)
        if name == "simulate":
            p.add_argument("--open-loop", dest="open_loop", action="store_true",
                           default=None, help="simulate with K = 0")

    p = sub.add_parser("model", help="write a bundled model as a system file")
    p.add_argument("kind", choices=["heat", "fractional"])
    p.add_argument("--N", type=int)
    p.add_argument("--n-grid", dest="n_grid", type=int)
    p.add_argument("--s", type=float)
    p.add_argument("--theta", type=float)
    p.add_argument("--mask")
    p.add_argument("--out")
    p.add_argument("--config")

    p = sub.add_parser("constants", help="certify weak observability constants")
    _source_options(p)
    _common_options(p)
    p.add_argument("--D2", type=float, help="decay constant, at least 1")
    return parser


def resolve(args):
    """Merge the config file over built-in defaults; explicit flags win."""
    given = {k: v for k, v in vars(args).items() if v is not None}
    conf = {}
    if given.get("config"):
        try:
            conf = json.loads(Path(given["config"]).read_text())
        except json.JSONDecodeError as exc:
            raise SystemFormatError(f"config: {exc.msg}", line=exc.lineno) from exc
        if not isinstance(conf, dict):
            raise SystemFormatError("config must be a JSON object", line=1)
        unknown = set(conf) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    cfg = dict(DEFAULTS)
    cfg.update(conf)
    cfg.update(given)
    if cfg["out"] is None:
        cfg["out"] = os.environ.get(OUTPUT_ENV, ".")
    return cfg


# -- output helpers -----------------------------------------------------------

def _fmt(x):
    return "%.17g" % x


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, complex):
        return [_jsonable(x.real), _jsonable(x.imag)]
    return x


def write_report(path, report):
    Path(path).write_text(json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n")


def emit_decay_csv(traj, path):
    """Write ``t,norm,rate_fit`` with the fitted rate repeated on every row.

    A trajectory without time span (fewer than two samples) has no rate and
    yields the header alone.
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "norm", "rate_fit"])
        if traj is None or traj.times.size < 2:
            return
        for t, n in zip(traj.times, traj.norms):
            w.writerow([_fmt(t), _fmt(n), _fmt(traj.fitted_rate)])


def emit_trajectory_csv(traj, path):
    n = traj.states.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"{p}_{j}" for j in range(n) for p in ("re", "im")] + ["norm"])
        for t, y, nrm in zip(traj.times, traj.states, traj.norms):
            row = [_fmt(t)]
            for z in y:
                row += [_fmt(z.real), _fmt(z.imag)]
            w.writerow(row + [_fmt(nrm)])


def emit_gain_csv(K, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "col", "re", "im"])
        for i, j in np.ndindex(K.shape):
            w.writerow([i, j, _fmt(K[i, j].real), _fmt(K[i, j].imag)])


# -- system sources -------------------------------------------------------------

def _build_model(kind, cfg):
    if kind == "heat":
        return build_heat_dirichlet(cfg["N"])
    mask = None
    if cfg["mask"]:
        mask = load_mask_text(Path(cfg["mask"]).read_text())
    return build_fractional_model(cfg["n_grid"], cfg["s"], mask=mask, theta=cfg["theta"])


def load_source(cfg):
    if cfg["system"] and cfg["model"]:
        raise UsageError("give either --system or --model, not both")
    if cfg["system"]:
        return loads_system(Path(cfg["system"]).read_text()), None
    if cfg["model"]:
        model = _build_model(cfg["model"], cfg)
        return model.sys, model_manifest(model)
    raise UsageError("a system source is required (--system or --model)")


# -- commands -------------------------------------------------------------------------

def _resolution(cfg):
    return {"n_re": cfg["n_re"], "n_im": cfg["n_im"]}


def cmd_audit(cfg, out):
    sys_, manifest = load_source(cfg)
    r = equivalence_audit(sys_, cfg["alpha"], seed=cfg["seed"], resolution=_resolution(cfg))
    report = r.to_dict()
    report["model"] = manifest
    (out / "hautus.csv").write_text(r.hautus.to_csv())
    if r.stabilization is not None:
        report["pipeline"] = r.stabilization.report
        emit_decay_csv(r.stabilization.trajectory, out / "decay.csv")
    write_report(out / "audit.json", report)
    if not r.agree:
        print(f"inconsistent verdicts {r.verdicts}; artifacts in {out}", file=sys.stderr)
        return EXIT_ERROR
    print(f"audit alpha={cfg['alpha']:g}: min margin {r.hautus.min_margin:.6g}, "
          f"verdicts {r.verdicts}")
    return EXIT_OK if r.passed else EXIT_NEGATIVE


def cmd_sweep(cfg, out):
    sys_, manifest = load_source(cfg)
    if cfg["alphas"]:
        try:
            alphas = [float(a) for a in str(cfg["alphas"]).split(",")]
        except ValueError as exc:
            raise UsageError(f"bad --alphas: {exc}") from exc
    else:
        alphas = [cfg["alpha"]]
    reports = rapid_sweep(sys_, alphas, resolution=_resolution(cfg))
    for k, r in enumerate(reports):
        name = "hautus.csv" if len(reports) == 1 else f"hautus_{k}.csv"
        (out / name).write_text(r.to_csv())
    summary = {"model": manifest, "reports": [r.to_dict() for r in reports]}
    write_report(out / "sweep.json", summary)
    for r in reports:
        print(f"alpha={r.alpha:g}: min margin {r.min_margin:.6g}, C_alpha {r.C_alpha:.6g}")
    return EXIT_OK if all(r.passed for r in reports) else EXIT_NEGATIVE


def _stabilize(cfg, sys_):
    return stabilize(sys_, cfg["alpha"], mu=cfg["mu"], seed=cfg["seed"],
                     horizon=cfg["horizon"], dt=cfg["dt"])


def cmd_synthesize(cfg, out):
    sys_, manifest = load_source(cfg)
    res = _stabilize(cfg, sys_)
    emit_gain_csv(res.K, out / "gain.csv")
    emit_decay_csv(res.trajectory, out / "decay.csv")
    report = dict(res.report, model=manifest)
    write_report(out / "synthesize.json", report)
    print(f"||K|| = {report['K_raw_norm']:.6g}, closed-loop abscissa "
          f"{report['closed_loop_abscissa']:.6g}, passed {report['passed']}")
    return EXIT_OK if report["passed"] else EXIT_NEGATIVE


def cmd_simulate(cfg, out):
    sys_, manifest = load_source(cfg)
    if cfg["open_loop"]:
        horizon = cfg["horizon"] if cfg["horizon"] is not None else 10.0 / cfg["alpha"]
        dt = cfg["dt"] if cfg["dt"] is not None else horizon / 400
        rng = np.random.default_rng(cfg["seed"])
        y0 = rng.standard_normal(sys_.n) + 1j * rng.standard_normal(sys_.n)
        y0 /= np.linalg.norm(y0)
        traj = simulate_closed_loop(sys_, np.zeros((sys_.m, sys_.n)), y0, horizon, dt,
                                    seed=cfg["seed"])
        l2 = certify_l2(traj)
        report = {"open_loop": True, "fitted_rate": traj.fitted_rate,
                  "fitted_C": traj.fitted_C, "l2_estimate": traj.l2_estimate,
                  "duhamel_residual": traj.duhamel_residual, **l2}
        ok = l2["in_l2"]
    else:
        res = _stabilize(cfg, sys_)
        traj = res.trajectory
        report = dict(res.report)
        ok = report["passed"]
    report["model"] = manifest
    emit_decay_csv(traj, out / "decay.csv")
    emit_trajectory_csv(traj, out / "trajectory.csv")
    write_report(out / "simulate.json", report)
    print(f"fitted rate {traj.fitted_rate:.6g}, l2 {traj.l2_estimate:.6g}, in_l2 {report['in_l2']}")
    return EXIT_OK if ok else EXIT_NEGATIVE


def cmd_model(cfg, out):
    model = _build_model(cfg["kind"], cfg)
    (out / "system.json").write_text(dumps_system(model.sys) + "\n")
    write_report(out / "manifest.json", model_manifest(model))
    print(f"wrote {cfg['kind']} model with n={model.sys.n} to {out}")
    return EXIT_OK


def cmd_constants(cfg, out):
    sys_, manifest = load_source(cfg)
    A, B = sys_.A, sys_.B
    try:
        c = estimate_observability_constants(A, B, cfg["alpha"], D2=cfg["D2"], seed=cfg["seed"])
    except ConstantsNotCertified as exc:
        write_report(out / "constants.json", {"certified": False, "error": str(exc),
                                              "model": manifest})
        print(f"not certified: {exc}")
        return EXIT_NEGATIVE
    ok, worst = verify_observability_constants(A, B, c, seed=cfg["seed"] + 1)
    report = {"certified": bool(ok), "alpha": c.alpha, "D1": c.D1, "D2": c.D2,
              "T_max": c.T_max, "n_grid": c.n_grid, "worst_violation": worst,
              "model": manifest}
    write_report(out / "constants.json", report)
    print(f"D1 = {c.D1:.6g}, D2 = {c.D2:g}, verified {ok}")
    return EXIT_OK if ok else EXIT_NEGATIVE


COMMANDS = {
    "audit": cmd_audit,
    "sweep": cmd_sweep,
    "synthesize": cmd_synthesize,
    "simulate": cmd_simulate,
    "model": cmd_model,
    "constants": cmd_constants,
}


def run(argv=None):
    """Parse ``argv``, run the command and return the exit status."""
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve(args)
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"stabkit: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StageError as exc:
        if isinstance(exc.cause, (ProjectedPairUncontrollable, NotExactlyControllable)):
            print(f"negative finding: {exc}", file=sys.stderr)
            phi = getattr(exc.cause, "phi", None)
            if phi is not None:
                print("witness: " + " ".join(_fmt(abs(z)) for z in phi), file=sys.stderr)
            return EXIT_NEGATIVE
        print(f"stabkit: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except SystemFormatError as exc:
        print(f"stabkit: parse error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (StabkitError, ValueError, OSError) as exc:
        print(f"stabkit: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


def main(argv=None):
    sys.exit(run(argv))
