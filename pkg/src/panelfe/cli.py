"""Command line front end: ``panelfe estimate | simulate | oracle | mc``.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 numerical error.  Failures print a JSON error record on stderr.
Worker processes default to the ``PANELFE_WORKERS`` environment variable.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .bootstrap import Multinomial, bootstrap_distribution, percentile_ci, pivotal_from_t
from .dgp import DgpSpec, simulate_panel
from .errors import ConfigError, DataError, NumericalError, PanelFEError
from .estimators import fe_fit, hk_fit, hpj_fit
from .inference import ccm_sigma, normal_ci
from .mc import ExperimentConfig, emit_report, run_experiment, sweep_T
from .oracle import (CLOSED_FORM, bias_terms, limit_covariance, pseudo_true_closed_form,
                     pseudo_true_simulated)
from .panel import LagSpec, build_lagged_design, load_csv, write_csv

EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _levels(text: str) -> list[float]:
    try:
        out = [float(t) for t in _csv_list(text)]
    except ValueError:
        raise UsageError(f"bad --levels {text!r}") from None
    if not out or any(not 0 < l < 1 for l in out):
        raise UsageError(f"levels must lie in (0, 1), got {text!r}")
    return out


def level_key(level: float) -> str:
    """``0.95 -> "ci95"``, ``0.975 -> "ci97.5"``."""
    return "ci" + format(round(level * 100, 6), "g")


# estimate ----------------------------------------------------------------

METHODS = ("fe", "hpj", "hk")
INFERENCE = ("ccm", "percentile-boot", "pivotal-boot")


def _estimate(args) -> dict:
    methods = [m.lower() for m in _csv_list(args.methods)]
    inference = [i.lower() for i in _csv_list(args.inference)]
    if not methods or any(m not in METHODS for m in methods):
        raise UsageError(f"--methods must be a subset of {','.join(METHODS)}")
    if any(i not in INFERENCE for i in inference):
        raise UsageError(f"--inference must be a subset of {','.join(INFERENCE)}")
    levels = _levels(args.levels)
    if args.B < 1:
        raise UsageError("--B must be positive")
    raw = load_csv(args.input)
    ds = build_lagged_design(raw, LagSpec.parse(args.lags))
    fits = {"fe": fe_fit(ds)}
    if "hpj" in methods or args.center == "hpj":
        fits["hpj"] = hpj_fit(ds)
    if "hk" in methods:
        fits["hk"] = hk_fit(ds)
    centre = fits["hpj" if args.center == "hpj" else "fe"].beta_hat
    records = []

    def add(option, coord, est, se, cis, B=None, seed=None):
        rec = {"option": option, "coordinate": ds.x_names[coord], "estimate": float(est),
               "se": float(se), "B": B, "seed": seed}
        for lvl in levels:
            rec[level_key(lvl)] = [float(v) for v in cis[lvl]]
        records.append(rec)

    for m in methods:
        beta = fits[m].beta_hat
        label = m.upper()
        if m == "hk":
            se = fits["hk"].se_hk
            add("HK", 0, beta[0], se, {l: normal_ci(beta[0], se, l) for l in levels})
            continue
        if "ccm" in inference:
            ccm = ccm_sigma(ds, centre if args.center == "hpj" else beta)
            for a in range(ds.p):
                se = ccm.se(a)
                add(f"{label}-CCM", a, beta[a], se, {l: normal_ci(beta[a], se, l) for l in levels})
        boot = [i for i in inference if i.endswith("-boot")]
        if boot:
            run = bootstrap_distribution(ds, label, args.B, Multinomial(), args.seed,
                                         studentize="pivotal-boot" in boot)
            if "percentile-boot" in boot:
                for a in range(ds.p):
                    cis = {l: percentile_ci(run, beta, a, l) for l in levels}
                    add(f"{label}-{label}B", a, beta[a], float(np.std(run.valid(a))), cis,
                        args.B, args.seed)
            if "pivotal-boot" in boot:
                ccm = ccm_sigma(ds, beta)
                for a in range(ds.p):
                    se = ccm.se(a)
                    t = run.valid(a, studentized=True)
                    cis = {l: pivotal_from_t(t, float(beta[a]), se, l) for l in levels}
                    add(f"{label}-{label}PB", a, beta[a], se, cis, args.B, args.seed)
    return {"input": str(args.input), "lags": str(ds.design), "n": ds.n, "T": ds.T,
            "center": args.center, "results": records}


# other subcommands -------------------------------------------------------

def _simulate(args) -> None:
    spec = DgpSpec.parse(args.spec, burn_in=args.burn_in)
    sim = simulate_panel(spec, args.n, args.T, args.seed)
    write_csv(sim.dataset, args.output or sys.stdout)


def _oracle(args) -> dict:
    spec = DgpSpec.parse(args.spec)
    fit = LagSpec.parse(args.fit) if args.fit else spec.default_fit()
    out = {"spec": str(spec), "fit": str(fit)}
    what = _csv_list(args.what)
    if "beta0" in what:
        if args.method in (CLOSED_FORM, "auto") and fit == spec.default_fit():
            try:
                pt = pseudo_true_closed_form(spec)
            except ConfigError:
                if args.method == CLOSED_FORM:
                    raise
                pt = pseudo_true_simulated(spec, fit)
        else:
            pt = pseudo_true_simulated(spec, fit)
        out["beta0"] = list(pt.beta0)
        out["provenance"] = pt.provenance
        if pt.mc_se is not None:
            out["mc_se"] = list(pt.mc_se)
    if "bias" in what:
        bt = bias_terms(spec, fit, args.T, args.method)
        out["bias_terms"] = json.loads(bt.to_json())
    if "cov" in what:
        lc = limit_covariance(spec, fit, args.method)
        out["limit_covariance"] = json.loads(lc.to_json())
    return out


def _mc(args) -> dict:
    try:
        cfg = ExperimentConfig.from_json(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise UsageError(f"cannot read config {args.config}: {e}") from None
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if args.sweep:
        rows = sweep_T(cfg, args.workers)
        path = out / "sweep.csv"
        lines = ["method,T,bias,rmse,sd"] + [
            f"{r.method},{r.T},{r.bias!r},{r.rmse!r},{r.sd!r}" for r in rows]
        path.write_text("\n".join(lines) + "\n")
        written.append(str(path))
    else:
        res = run_experiment(cfg, args.workers)
        for fmt in _csv_list(args.format):
            if fmt not in ("csv", "markdown"):
                raise UsageError(f"unknown report format {fmt!r}")
            path = out / ("report.csv" if fmt == "csv" else "report.md")
            path.write_text(emit_report(res, fmt))
            written.append(str(path))
    return {"written": written}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="panelfe", description="Fixed-effects panel estimation under misspecification.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    e = sub.add_parser("estimate", help="estimate a panel from CSV")
    e.add_argument("--input", required=True)
    e.add_argument("--lags", default="y:1")
    e.add_argument("--methods", default="fe,hpj")
    e.add_argument("--inference", default="ccm,pivotal-boot")
    e.add_argument("--B", type=int, default=1000)
    e.add_argument("--levels", default="0.90,0.95")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--center", choices=("hpj", "own"), default="hpj",
                   help="coefficient at which CCM residuals are formed")
    e.add_argument("--output")

    s = sub.add_parser("simulate", help="simulate a panel to CSV")
    s.add_argument("--spec", required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--T", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--burn-in", type=int, default=500)
    s.add_argument("--output")

    o = sub.add_parser("oracle", help="population quantities of a design")
    o.add_argument("--spec", required=True)
    o.add_argument("--fit")
    o.add_argument("--what", default="beta0")
    o.add_argument("--T", type=int, default=24)
    o.add_argument("--method", choices=(CLOSED_FORM, "Simulated", "auto"), default="auto")

    m = sub.add_parser("mc", help="run a Monte Carlo experiment")
    m.add_argument("--config", required=True)
    m.add_argument("--out-dir", required=True)
    m.add_argument("--format", default="csv,markdown")
    m.add_argument("--workers", type=int)
    m.add_argument("--sweep", action="store_true", help="emit the bias/RMSE sweep over T")
    return p


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _fail(code: int, kind: str, message: str) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit": code}) + "\n")
    return code


def run_cli(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command == "estimate":
            text = _dump(_estimate(args))
            if args.output:
                Path(args.output).write_text(text)
            else:
                sys.stdout.write(text)
        elif args.command == "simulate":
            _simulate(args)
        elif args.command == "oracle":
            sys.stdout.write(_dump(_oracle(args)))
        elif args.command == "mc":
            sys.stdout.write(_dump(_mc(args)))
        return 0
    except UsageError as e:
        return _fail(EXIT_USAGE, "UsageError", str(e))
    except DataError as e:
        return _fail(EXIT_DATA, type(e).__name__, str(e))
    except NumericalError as e:
        return _fail(EXIT_NUMERICAL, type(e).__name__, str(e))
    except (ConfigError, ValueError) as e:
        return _fail(EXIT_USAGE, type(e).__name__, str(e))
    except OSError as e:
        return _fail(EXIT_DATA, type(e).__name__, str(e))
    except PanelFEError as e:
        return _fail(EXIT_NUMERICAL, type(e).__name__, str(e))


def main() -> None:
    sys.exit(run_cli())
