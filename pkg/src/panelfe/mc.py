"""Monte Carlo experiments: bias, dispersion, standard-error ratio and coverage.

Replication ``r`` of grid cell ``k`` simulates from the stream path
``(master_seed, k, r, 0)`` and draws its bootstrap weights from
``(master_seed, k, r, 1)``.  Replications are pure functions of the config
and their indices, so any split across worker processes gives the same
result.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np

from .bootstrap import (Multinomial, check_failures, evaluate_weights, map_chunks,
                        percentile_from_deviations, pivotal_from_t, weight_rows)
from .dgp import DgpSpec, simulate_panel
from .errors import ConfigError, NumericalError, TooManyFailures
from .estimators import hk_correct, panel_moments, weighted_hpj
from .inference import ccm_from_moments, two_sided_z
from .oracle import pseudo_true
from .panel import LagSpec, build_lagged_design
from .streams import stream_key

OPTIONS = ("FE-CCM", "HK", "HPJ-CCM", "HPJ-FEB", "HPJ-HPJB", "HPJ-HPJPB")
BOOTSTRAP_OPTIONS = ("HPJ-FEB", "HPJ-HPJB", "HPJ-HPJPB")
REPS_PER_TASK = 10


@dataclass(frozen=True)
class ExperimentConfig:
    dgp: DgpSpec
    grid: tuple
    reps: int
    options: tuple
    fit: LagSpec | None = None
    bootstrap_B: int = 1000
    level: float = 0.95
    master_seed: int = 0
    beta0: tuple | None = None
    coord: int = 0

    def __post_init__(self):
        object.__setattr__(self, "grid", tuple((int(n), int(T)) for n, T in self.grid))
        object.__setattr__(self, "options", tuple(self.options))
        if self.fit is None:
            object.__setattr__(self, "fit", self.dgp.default_fit())
        if self.beta0 is not None:
            object.__setattr__(self, "beta0", tuple(float(b) for b in self.beta0))
        if self.reps < 1:
            raise ConfigError("reps must be at least 1")
        if not 0 < self.level < 1:
            raise ConfigError(f"level {self.level} outside (0, 1)")
        if not self.options:
            raise ConfigError("options must be non-empty")
        bad = [o for o in self.options if o not in OPTIONS]
        if bad:
            raise ConfigError(f"unknown options {bad}; choose from {OPTIONS}")
        if len(set(self.options)) != len(self.options):
            raise ConfigError("options listed twice")
        if not self.grid:
            raise ConfigError("grid must be non-empty")
        if "HK" in self.options and not self.fit.is_ar1:
            raise ConfigError("HK applies only to the pure AR(1) fit")
        if any(o in BOOTSTRAP_OPTIONS for o in self.options) and self.bootstrap_B < 100:
            raise ConfigError("bootstrap options need bootstrap_B >= 100")
        if self.master_seed < 0:
            raise ConfigError("master_seed must be non-negative")

    @property
    def needs_bootstrap(self) -> bool:
        return any(o in BOOTSTRAP_OPTIONS for o in self.options)

    def to_dict(self) -> dict:
        d = {"dgp": self.dgp.to_dict(), "fit": str(self.fit), "grid": [list(g) for g in self.grid],
             "reps": self.reps, "options": list(self.options), "bootstrap_B": self.bootstrap_B,
             "level": self.level, "master_seed": self.master_seed, "coord": self.coord}
        if self.beta0 is not None:
            d["beta0"] = list(self.beta0)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {"dgp", "fit", "grid", "reps", "options", "bootstrap_B", "level",
                 "master_seed", "beta0", "coord"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config fields {sorted(extra)}")
        try:
            dgp = d["dgp"]
            dgp = DgpSpec.parse(dgp) if isinstance(dgp, str) else DgpSpec.from_dict(dgp)
            fit = LagSpec.parse(d["fit"]) if d.get("fit") else None
            return cls(dgp, tuple(tuple(g) for g in d["grid"]), int(d["reps"]),
                       tuple(d["options"]), fit, int(d.get("bootstrap_B", 1000)),
                       float(d.get("level", 0.95)), int(d.get("master_seed", 0)),
                       d.get("beta0"), int(d.get("coord", 0)))
        except KeyError as e:
            raise ConfigError(f"config is missing field {e.args[0]!r}") from None

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))


def _nan_eq(a: float, b: float) -> bool:
    return (math.isnan(a) and math.isnan(b)) or a == b


@dataclass(frozen=True)
class OptionSummary:
    """Summary of one option in one cell; bias and SD refer to its point estimate."""

    option: str
    bias: float
    sd: float
    se_ratio: float
    coverage: float
    rmse: float

    def __eq__(self, other):
        if not isinstance(other, OptionSummary):
            return NotImplemented
        return self.option == other.option and all(
            _nan_eq(getattr(self, f), getattr(other, f))
            for f in ("bias", "sd", "se_ratio", "coverage", "rmse"))


@dataclass(frozen=True)
class CellResult:
    n: int
    T: int
    reps: int
    failures: int
    beta0: float
    summaries: tuple

    def get(self, option: str) -> OptionSummary:
        for s in self.summaries:
            if s.option == option:
                return s
        raise KeyError(option)


@dataclass(frozen=True)
class McResult:
    options: tuple
    level: float
    cells: tuple

    def cell(self, n: int, T: int) -> CellResult:
        for c in self.cells:
            if (c.n, c.T) == (n, T):
                return c
        raise KeyError((n, T))


# one replication ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class _Draw:
    est: dict
    se: dict
    ci: dict


def replicate(cfg: ExperimentConfig, cell: int, n: int, T: int, r: int) -> _Draw:
    """Estimates, standard errors and intervals of every configured option."""
    a, lvl = cfg.coord, cfg.level
    z = two_sided_z(lvl)
    sim = simulate_panel(cfg.dgp, n, T, (cfg.master_seed, cell, r, 0))
    ds = build_lagged_design(sim.dataset, cfg.fit)
    mom = panel_moments(ds, halves=True)
    b, h, A, ok = weighted_hpj(mom, np.ones((1, n)))
    if not ok[0]:
        raise NumericalError("singular design in the original panel")
    fe, hpj = b[0], h[0]
    est, se, ci = {}, {}, {}
    ccm = {}

    def ccm_se(which):
        if which not in ccm:
            ccm[which] = ccm_from_moments(mom, fe if which == "FE" else hpj, A[0]).se(a)
        return ccm[which]

    for opt in cfg.options:
        if opt == "FE-CCM":
            est[opt], se[opt] = fe[a], ccm_se("FE")
        elif opt == "HK":
            bhk = hk_correct(fe[0], ds.T)
            est[opt] = bhk
            se[opt] = math.sqrt(max(1.0 - bhk * bhk, 0.0) / (n * ds.T))
        elif opt == "HPJ-CCM":
            est[opt], se[opt] = hpj[a], ccm_se("HPJ")
        if opt in ("FE-CCM", "HK", "HPJ-CCM"):
            ci[opt] = (est[opt] - z * se[opt], est[opt] + z * se[opt])
    if cfg.needs_bootstrap:
        key = stream_key(cfg.master_seed, cell, r, 1)
        w = weight_rows(n, Multinomial(), key, 0, cfg.bootstrap_B)
        blk = evaluate_weights(mom, w, fe, hpj,
                               "HPJ" if "HPJ-HPJPB" in cfg.options else None)
        check_failures(int((~blk.ok).sum()), cfg.bootstrap_B)
        okr = blk.ok
        for opt in cfg.options:
            if opt == "HPJ-FEB":
                ci[opt] = percentile_from_deviations(blk.fe_dev[okr, a], hpj[a], lvl)
            elif opt == "HPJ-HPJB":
                ci[opt] = percentile_from_deviations(blk.hpj_dev[okr, a], hpj[a], lvl)
            elif opt == "HPJ-HPJPB":
                ci[opt] = pivotal_from_t(blk.t_stats[okr, a], hpj[a], ccm_se("HPJ"), lvl)
            else:
                continue
            est[opt] = hpj[a]
            se[opt] = (ci[opt][1] - ci[opt][0]) / (2 * z)
    return _Draw(est, se, ci)


def _run_task(args):
    cfg, cell, n, T, start, stop = args
    out = []
    for r in range(start, stop):
        try:
            out.append(replicate(cfg, cell, n, T, r))
        except (NumericalError, TooManyFailures):
            out.append(None)
    return out


# aggregation -------------------------------------------------------------

def summarize(option: str, draws: list, beta0: float) -> OptionSummary:
    good = [d for d in draws if d is not None]
    est = np.array([d.est[option] for d in good])
    se = np.array([d.se[option] for d in good])
    lo = np.array([d.ci[option][0] for d in good])
    hi = np.array([d.ci[option][1] for d in good])
    bias = float(est.mean() - beta0)
    sd = float(est.std())
    ratio = float(se.mean() / sd) if sd > 0 else float("nan")
    cover = float(np.mean((lo <= beta0) & (beta0 <= hi)))
    rmse = float(np.sqrt(np.mean((est - beta0) ** 2)))
    return OptionSummary(option, bias, sd, ratio, cover, rmse)


def resolve_beta0(cfg: ExperimentConfig) -> float:
    if cfg.beta0 is not None:
        return cfg.beta0[cfg.coord]
    return pseudo_true(cfg.dgp, cfg.fit).beta0[cfg.coord]


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> McResult:
    """Run every grid cell and summarize each option.

    Raises
    ------
    TooManyFailures
        When a cell loses more than 1% of its replications.
    """
    beta0 = resolve_beta0(cfg)
    tasks, owners = [], []
    for k, (n, T) in enumerate(cfg.grid):
        for s in range(0, cfg.reps, REPS_PER_TASK):
            tasks.append((cfg, k, n, T, s, min(s + REPS_PER_TASK, cfg.reps)))
            owners.append(k)
    outs = map_chunks(_run_task, tasks, workers)
    per_cell = [[] for _ in cfg.grid]
    for k, out in zip(owners, outs):
        per_cell[k].extend(out)
    cells = []
    for (n, T), draws in zip(cfg.grid, per_cell):
        failures = sum(d is None for d in draws)
        check_failures(failures, cfg.reps, f"replications in cell (n={n}, T={T})")
        if failures == len(draws):
            raise TooManyFailures(f"every replication failed in cell (n={n}, T={T})")
        cells.append(CellResult(n, T, cfg.reps, failures, beta0,
                                tuple(summarize(o, draws, beta0) for o in cfg.options)))
    return McResult(cfg.options, cfg.level, tuple(cells))


@dataclass(frozen=True)
class SweepRow:
    method: str
    T: int
    bias: float
    rmse: float
    sd: float


def sweep_T(cfg: ExperimentConfig, workers: int | None = None) -> list[SweepRow]:
    """Bias and RMSE of FE and HPJ over the ``T`` values of a fixed-``n`` grid."""
    ns = {n for n, _ in cfg.grid}
    if len(ns) != 1:
        raise ConfigError("sweep_T needs a single cross-section size")
    sub = ExperimentConfig(cfg.dgp, cfg.grid, cfg.reps, ("FE-CCM", "HPJ-CCM"), cfg.fit,
                           cfg.bootstrap_B, cfg.level, cfg.master_seed, cfg.beta0, cfg.coord)
    res = run_experiment(sub, workers)
    rows = []
    for c in res.cells:
        for opt, name in (("FE-CCM", "FE"), ("HPJ-CCM", "HPJ")):
            s = c.get(opt)
            rows.append(SweepRow(name, c.T, s.bias, s.rmse, s.sd))
    return rows


# reports -----------------------------------------------------------------

CSV_FIELDS = ("n", "T", "option", "bias", "sd", "se_ratio", "coverage", "rmse",
              "reps", "failures", "beta0", "level")


def emit_report(res: McResult, fmt: str = "csv") -> str:
    """Render a result as long-format CSV or as a wide Markdown table.

    The Markdown layout has one row per ``(n, T)`` cell and, per option, the
    bias, ``(SD)``, ``[se ratio]`` and coverage columns.
    """
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for c in res.cells:
            for s in c.summaries:
                w.writerow([c.n, c.T, s.option, repr(s.bias), repr(s.sd), repr(s.se_ratio),
                            repr(s.coverage), repr(s.rmse), c.reps, c.failures,
                            repr(c.beta0), repr(res.level)])
        return buf.getvalue()
    if fmt == "markdown":
        head = ["n", "T"]
        for o in res.options:
            head += [f"{o} bias", f"{o} (SD)", f"{o} [se ratio]", f"{o} coverage"]
        lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
        for c in res.cells:
            row = [str(c.n), str(c.T)]
            for o in res.options:
                s = c.get(o)
                row += [f"{s.bias:.4f}", f"({s.sd:.4f})", f"[{s.se_ratio:.4f}]", f"{s.coverage:.4f}"]
            lines.append("| " + " | ".join(row) + " |")
        return "\n".join(lines) + "\n"
    raise ConfigError(f"unknown report format {fmt!r}")


def read_csv_report(text: str) -> McResult:
    """Inverse of ``emit_report(res, "csv")``."""
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows:
        raise ConfigError("empty report")
    options, cells, order = [], {}, []
    for r in rows:
        if r["option"] not in options:
            options.append(r["option"])
        key = (int(r["n"]), int(r["T"]))
        if key not in cells:
            cells[key] = {"reps": int(r["reps"]), "failures": int(r["failures"]),
                          "beta0": float(r["beta0"]), "s": []}
            order.append(key)
        cells[key]["s"].append(OptionSummary(r["option"], float(r["bias"]), float(r["sd"]),
                                             float(r["se_ratio"]), float(r["coverage"]),
                                             float(r["rmse"])))
    level = float(rows[0]["level"])
    return McResult(tuple(options), level, tuple(
        CellResult(n, T, cells[(n, T)]["reps"], cells[(n, T)]["failures"],
                   cells[(n, T)]["beta0"], tuple(cells[(n, T)]["s"])) for n, T in order))
