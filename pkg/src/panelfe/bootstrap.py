"""Cross-section bootstrap over individuals.

A resample is a weight vector over individuals: multinomial counts for the
ordinary bootstrap, iid positive weights for the weighted variant.  Refitting
only reweights the per-individual within moments, including the individual
means, so ``B`` resamples are one pass over a ``B x n`` weight matrix.

Replicate ``b`` always takes its weights from row ``b`` of the stream keyed by
the master seed, so results do not depend on chunking or on the number of
worker processes.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import gammaincinv

from .errors import SchemeMismatch, SingularDesign, TooFewReplicates, TooManyFailures
from .estimators import (SINGULAR_RATIO, PanelMoments, panel_moments, singular_ratio,
                         weighted_fit, weighted_hpj, weighted_moments)
from .inference import CcmEstimate, ccm_from_moments, sandwich, two_sided_z, weighted_sigma
from .panel import PanelDataset
from .streams import stream_key, uniform_rows

CHUNK = 128
MAX_FAILURE_SHARE = 0.01
MIN_REPLICATES = 100


@dataclass(frozen=True)
class Multinomial:
    """Resample ``n`` individuals with replacement."""


@dataclass(frozen=True)
class IidWeights:
    """Iid gamma weights with mean 1 and variance ``v`` (exponential when ``v = 1``)."""

    v: float = 1.0

    def __post_init__(self):
        if not self.v > 0:
            raise ValueError(f"weight variance must be positive, got {self.v!r}")


@dataclass(frozen=True)
class UnitWeights:
    """Every weight equal to one; the bootstrap reproduces the original fit."""


@dataclass(frozen=True, eq=False)
class WeightDraw:
    w: np.ndarray
    scheme: object


def weights_from_uniforms(u: np.ndarray, scheme) -> np.ndarray:
    """Map a ``B x n`` block of uniforms to weights under ``scheme``."""
    B, n = u.shape
    if isinstance(scheme, Multinomial):
        idx = np.minimum((u * n).astype(np.int64), n - 1)
        flat = idx + (np.arange(B) * n)[:, None]
        return np.bincount(flat.ravel(), minlength=B * n).reshape(B, n).astype(np.float64)
    if isinstance(scheme, IidWeights):
        if scheme.v == 1.0:
            return -np.log1p(-u)
        shape = 1.0 / scheme.v
        return gammaincinv(shape, u) * scheme.v
    if isinstance(scheme, UnitWeights):
        return np.ones((B, n))
    raise TypeError(f"unknown weight scheme {scheme!r}")


def weight_rows(n: int, scheme, key, start: int, count: int) -> np.ndarray:
    return weights_from_uniforms(uniform_rows(key, count, n, start), scheme)


def draw_weights(n: int, scheme, key, index: int = 0) -> WeightDraw:
    """Weights for one replicate: row ``index`` of the stream with ``key``."""
    if n < 2:
        raise ValueError("need at least two individuals")
    return WeightDraw(weight_rows(n, scheme, key, index, 1)[0], scheme)


# core evaluation shared with the Monte Carlo harness ---------------------

@dataclass(frozen=True, eq=False)
class ReplicateBlock:
    """Statistics for a block of bootstrap weight rows.

    ``fe_dev`` and ``hpj_dev`` are ``B x p`` deviations from the original fits
    (``hpj_dev`` is ``None`` for FE-only runs).  ``t_stats`` holds studentized
    deviations of the chosen centre; ``ok`` marks usable rows.
    """

    fe_dev: np.ndarray
    hpj_dev: np.ndarray | None
    t_stats: np.ndarray | None
    ok: np.ndarray


def evaluate_weights(mom: PanelMoments, w: np.ndarray, fe_hat, hpj_hat=None,
                     studentize: str | None = None) -> ReplicateBlock:
    """Refit FE (and HPJ when ``hpj_hat`` is given) under each weight row.

    ``studentize`` is ``"FE"`` or ``"HPJ"``: the bootstrap estimate of that
    method is divided by its bootstrap sandwich standard error, with the
    clustered covariance formed at the bootstrap estimate itself.
    """
    if hpj_hat is None:
        b_fe, a_full, ok = weighted_fit(mom.full, w)
        b_hpj = None
    else:
        b_fe, b_hpj, a_full, ok = weighted_hpj(mom, w)
    fe_dev = b_fe - fe_hat
    hpj_dev = None if b_hpj is None else b_hpj - hpj_hat
    t = None
    if studentize is not None:
        star, dev = (b_hpj, hpj_dev) if studentize == "HPJ" else (b_fe, fe_dev)
        t = np.full(dev.shape, np.nan)
        if ok.any():
            sig = weighted_sigma(mom.full, w[ok], star[ok])
            var = np.diagonal(sandwich(a_full[ok], sig), axis1=1, axis2=2)
            good = (var > 0).all(axis=1)
            rows = np.flatnonzero(ok)
            t[rows[good]] = dev[ok][good] / np.sqrt(var[good])
            ok = ok.copy()
            ok[rows[~good]] = False
    return ReplicateBlock(fe_dev, hpj_dev, t, ok)


@dataclass(frozen=True, eq=False)
class BootstrapRun:
    """Bootstrap deviations ``beta* - beta`` for one method.

    Failed replicates keep their row, filled with NaN, so row ``b`` always
    belongs to replicate ``b``.
    """

    B: int
    deviations: np.ndarray
    t_stats: np.ndarray | None
    method: str
    scheme: object
    master_seed: int
    center: np.ndarray
    failures: int = 0
    rescaled: bool = False
    stream_path: tuple = ()

    @property
    def seeds(self) -> list[tuple]:
        """Stream identifier of each replicate: ``(stream path, row index)``."""
        return [(self.stream_path, b) for b in range(self.B)]

    def valid(self, coord: int = 0, studentized: bool = False) -> np.ndarray:
        col = (self.t_stats if studentized else self.deviations)[:, coord]
        return col[np.isfinite(col)]


def _run_chunk(args):
    mom, scheme, key, start, count, fe_hat, hpj_hat, studentize = args
    w = weight_rows(mom.n, scheme, key, start, count)
    return evaluate_weights(mom, w, fe_hat, hpj_hat, studentize)


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("PANELFE_WORKERS", "1")))
    except ValueError:
        return 1


def map_chunks(fn, tasks, workers: int | None):
    """Evaluate ``fn`` over ``tasks`` in order, optionally in worker processes."""
    workers = default_workers() if workers is None else workers
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as ex:
        return list(ex.map(fn, tasks))


def bootstrap_distribution(ds: PanelDataset, method: str = "HPJ", B: int = 1000,
                           scheme=Multinomial(), master_seed: int = 0,
                           studentize: bool = False, workers: int | None = None,
                           chunk: int = CHUNK) -> BootstrapRun:
    """Cross-section bootstrap distribution of the FE or HPJ estimator.

    Parameters
    ----------
    ds : PanelDataset
        Fitting design.
    method : {"FE", "HPJ"}
        Estimator whose deviations are recorded.
    B : int
        Number of replicates.
    scheme : Multinomial, IidWeights or UnitWeights
        Resampling law.
    master_seed : int
        Replicate ``b`` reads row ``b`` of the stream keyed by ``master_seed``.
    studentize : bool
        Also record pivotal statistics for the same method.
    workers : int, optional
        Worker processes; defaults to ``PANELFE_WORKERS`` (else 1).

    Returns
    -------
    BootstrapRun

    Raises
    ------
    SingularDesign
        If the original fit fails.
    TooManyFailures
        If more than 1% of replicates are singular.
    """
    method = method.upper()
    if method not in ("FE", "HPJ"):
        raise ValueError(f"method must be FE or HPJ, got {method!r}")
    if B < 1:
        raise TooFewReplicates(f"B must be positive, got {B}")
    mom = panel_moments(ds, halves=(method == "HPJ"))
    ones = np.ones((1, ds.n))
    if method == "HPJ":
        b, h, a, ok = weighted_hpj(mom, ones)
        fe_hat, hpj_hat = b[0], h[0]
    else:
        b, a, ok = weighted_fit(mom.full, ones)
        fe_hat, hpj_hat = b[0], None
    if not ok[0]:
        raise SingularDesign(float(singular_ratio(a)[0]), "original panel")
    key = stream_key(master_seed)
    tasks = [(mom, scheme, key, s, min(chunk, B - s), fe_hat, hpj_hat,
              method if studentize else None) for s in range(0, B, chunk)]
    blocks = map_chunks(_run_chunk, tasks, workers)
    dev = np.concatenate([(blk.hpj_dev if method == "HPJ" else blk.fe_dev) for blk in blocks])
    ok = np.concatenate([blk.ok for blk in blocks])
    t = np.concatenate([blk.t_stats for blk in blocks]) if studentize else None
    dev[~ok] = np.nan
    if t is not None:
        t[~ok] = np.nan
    failures = int((~ok).sum())
    check_failures(failures, B)
    center = hpj_hat if method == "HPJ" else fe_hat
    return BootstrapRun(B, dev, t, method, scheme, master_seed, center, failures,
                        stream_path=(master_seed,))


def check_failures(failures: int, total: int, what: str = "bootstrap replicates") -> None:
    if failures > MAX_FAILURE_SHARE * total:
        raise TooManyFailures(f"{failures} of {total} {what} failed (limit 1%)")


# quantiles and intervals -------------------------------------------------

def empirical_quantile(values: np.ndarray, q: float) -> float:
    """Left-continuous empirical quantile ``inf{b : F(b) >= q}``."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 0:
        raise TooFewReplicates("no valid replicates")
    k = math.ceil(q * v.size - 1e-9)
    return float(v[min(max(k, 1), v.size) - 1])


def percentile_from_deviations(dev: np.ndarray, center: float, level: float):
    alpha = 1.0 - level
    if dev.size < MIN_REPLICATES:
        raise TooFewReplicates(f"percentile interval needs at least {MIN_REPLICATES} "
                               f"replicates, got {dev.size}")
    return (center + empirical_quantile(dev, alpha / 2), center + empirical_quantile(dev, 1 - alpha / 2))


def pivotal_from_t(t: np.ndarray, center: float, se: float, level: float):
    alpha = 1.0 - level
    if t.size < MIN_REPLICATES:
        raise TooFewReplicates(f"pivotal interval needs at least {MIN_REPLICATES} "
                               f"replicates, got {t.size}")
    return (center - empirical_quantile(t, 1 - alpha / 2) * se,
            center - empirical_quantile(t, alpha / 2) * se)


def percentile_ci(run: BootstrapRun, center_beta, coord: int = 0, level: float = 0.95):
    """Equal-tailed percentile interval ``[c + q(alpha/2), c + q(1 - alpha/2)]``."""
    two_sided_z(level)
    c = float(np.asarray(center_beta, dtype=np.float64).reshape(-1)[coord])
    return percentile_from_deviations(run.valid(coord), c, level)


def bootstrap_ccm(mom: PanelMoments | PanelDataset, w, beta_star) -> CcmEstimate:
    """Clustered covariance of a resample given by weights ``w``, centred at ``beta_star``.

    The sandwich uses the weighted within moment matrix of the same resample.
    """
    if isinstance(mom, PanelDataset):
        mom = panel_moments(mom, halves=False)
    w = np.asarray(w, dtype=np.float64).reshape(1, -1)
    beta = np.asarray(beta_star, dtype=np.float64).reshape(1, -1)
    if not np.isfinite(beta).all():
        raise SingularDesign(float("nan"), "bootstrap centre is not finite")
    a, _ = weighted_moments(mom.full, w)
    ratio = float(singular_ratio(a)[0])
    if ratio < SINGULAR_RATIO:
        raise SingularDesign(ratio, "bootstrap resample")
    sig = weighted_sigma(mom.full, w, beta)[0]
    return CcmEstimate(sig, sandwich(a[0], sig), beta[0], mom.n, mom.T)


def pivotal_t_ci(ds: PanelDataset, method: str = "HPJ", B: int = 1000, coord: int = 0,
                 level: float = 0.95, master_seed: int = 0, scheme=Multinomial(),
                 workers: int | None = None, run: BootstrapRun | None = None):
    """Bootstrap-t interval ``[c - t*(1 - a/2) se, c - t*(a/2) se]``.

    ``se`` is the clustered sandwich standard error at the original estimate
    ``c``.  Pass a studentized ``run`` to reuse replicates across levels.
    """
    two_sided_z(level)
    if run is None:
        run = bootstrap_distribution(ds, method, B, scheme, master_seed, studentize=True,
                                     workers=workers)
    elif run.t_stats is None:
        raise ValueError("bootstrap run carries no studentized statistics")
    mom = panel_moments(ds, halves=False)
    ccm = ccm_from_moments(mom, run.center)
    se = ccm.se(coord)
    return pivotal_from_t(run.valid(coord, studentized=True), float(run.center[coord]), se, level)


def weighted_deviation_rescale(run: BootstrapRun, v: float | None = None) -> BootstrapRun:
    """Divide deviations of a weighted-bootstrap run by ``sqrt(v)``."""
    if not isinstance(run.scheme, IidWeights):
        raise SchemeMismatch(f"rescaling applies to iid-weight runs, not {run.scheme!r}")
    v = run.scheme.v if v is None else v
    if not math.isclose(v, run.scheme.v):
        raise SchemeMismatch(f"run drawn with variance {run.scheme.v}, asked to rescale by {v}")
    if run.rescaled:
        raise SchemeMismatch("run is already rescaled")
    return replace(run, deviations=run.deviations / math.sqrt(v), rescaled=True)
