"""Clustered covariance, sandwich variance, t/Wald statistics and normal intervals.

The clustered covariance sums per-individual outer products of score averages,

    Sigma = n^-2 sum_i g_i g_i',   g_i = T^-1 sum_t xdot_it (ydot_it - xdot_it' beta),

so it is positive semidefinite by construction and needs no bandwidth or rate
choice.  The same routine with a row of bootstrap weights gives the bootstrap
version; unit weights reproduce the plain estimator exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BadLevel, DegenerateVariance, SingularDesign, SingularRestriction
from .estimators import (SINGULAR_RATIO, PanelMoments, SegmentMoments, panel_moments,
                         singular_ratio, weighted_a)
from .panel import PanelDataset

SINGULAR_RESTRICTION = 1e-12


@dataclass(frozen=True, eq=False)
class CcmEstimate:
    """Clustered covariance ``sigma_hat`` and sandwich ``avar = A^-1 Sigma A^-1``.

    ``avar`` is the variance of ``beta`` itself, so a standard error is
    ``sqrt(avar[a, a])`` with no further scaling.
    """

    sigma_hat: np.ndarray
    avar: np.ndarray
    centering_beta: np.ndarray
    n: int
    T: int

    def se(self, coord: int = 0) -> float:
        v = float(self.avar[coord, coord])
        if not v > 0:
            raise DegenerateVariance(f"sandwich variance {v!r} in coordinate {coord}")
        return math.sqrt(v)

    def is_psd(self, tol: float = 1e-12) -> bool:
        """Check eigenvalues of both matrices against ``-tol * trace``."""
        for m in (self.sigma_hat, self.avar):
            ev = np.linalg.eigvalsh(m)
            if ev[0] < -tol * max(np.trace(m), 0.0):
                return False
        return True


def _symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def weighted_sigma(seg: SegmentMoments, w: np.ndarray, betas: np.ndarray) -> np.ndarray:
    """``n^-2 sum_i w_bi g_i(beta_b) g_i(beta_b)'`` for ``B`` weight rows and centres.

    Accumulates over individuals in index order with elementwise operations,
    so every row is computed the same way whatever the batch size.
    """
    w = np.asarray(w, dtype=np.float64)
    betas = np.asarray(betas, dtype=np.float64)
    B, p = betas.shape
    acc = np.zeros((B, p, p))
    for i in range(seg.n):
        g = np.broadcast_to(seg.s[i], (B, p)).copy()
        for j in range(p):
            g -= betas[:, j:j + 1] * seg.a[i, :, j]
        g /= seg.T
        acc += w[:, i, None, None] * (g[:, :, None] * g[:, None, :])
    return _symmetrize(acc / seg.n ** 2)


def sandwich(a: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """``A^-1 Sigma A^-1`` for single matrices or stacks."""
    left = np.linalg.solve(a, sigma)
    return _symmetrize(np.swapaxes(np.linalg.solve(a, np.swapaxes(left, -1, -2)), -1, -2))


def ccm_from_moments(mom: PanelMoments, beta_tilde, a_hat=None) -> CcmEstimate:
    beta = np.asarray(beta_tilde, dtype=np.float64).reshape(-1)
    if not np.isfinite(beta).all():
        raise SingularDesign(float("nan"), "centering coefficient is not finite")
    ones = np.ones((1, mom.n))
    a = weighted_a(mom.full, ones)[0] if a_hat is None else np.asarray(a_hat, dtype=np.float64)
    ratio = float(singular_ratio(a[None])[0])
    if ratio < SINGULAR_RATIO:
        raise SingularDesign(ratio, "sandwich inversion")
    sigma = weighted_sigma(mom.full, ones, beta[None])[0]
    return CcmEstimate(sigma, sandwich(a, sigma), beta, mom.n, mom.T)


def ccm_sigma(ds: PanelDataset, beta_tilde, a_hat=None) -> CcmEstimate:
    """Clustered covariance of the within estimator, centred at ``beta_tilde``.

    Parameters
    ----------
    ds : PanelDataset
        Fitting design (already lagged if dynamic).
    beta_tilde : array_like
        Coefficient used to form residuals; any consistent estimator, typically
        the half-panel jackknife when ``T`` is small.
    a_hat : array_like, optional
        ``(nT)^-1 sum xdot xdot'``; computed from ``ds`` when omitted.

    Returns
    -------
    CcmEstimate
    """
    return ccm_from_moments(panel_moments(ds, halves=False), beta_tilde, a_hat)


def t_statistic(fit_beta, ccm: CcmEstimate, coord: int = 0, r: float = 0.0) -> float:
    beta = np.asarray(fit_beta, dtype=np.float64).reshape(-1)
    return float((beta[coord] - r) / ccm.se(coord))


def wald_statistic(fit_beta, ccm: CcmEstimate, R, r) -> float:
    """Quadratic form ``(R b - r)' [R V R']^-1 (R b - r)`` with the sandwich ``V``."""
    beta = np.asarray(fit_beta, dtype=np.float64).reshape(-1)
    R = np.atleast_2d(np.asarray(R, dtype=np.float64))
    r = np.asarray(r, dtype=np.float64).reshape(-1)
    if R.shape[1] != beta.size or r.size != R.shape[0]:
        raise SingularRestriction(f"restriction shapes R{R.shape}, r{r.shape} do not fit p={beta.size}")
    m = _symmetrize(R @ ccm.avar @ R.T)
    ev = np.linalg.eigvalsh(m)
    if ev[-1] <= 0 or ev[0] / ev[-1] < SINGULAR_RESTRICTION:
        raise SingularRestriction(f"restricted covariance has eigenvalues {ev.tolist()}")
    d = R @ beta - r
    return float(max(d @ np.linalg.solve(m, d), 0.0))


# normal quantile ---------------------------------------------------------
# Wichura's algorithm AS 241 (PPND16), about 1e-16 relative accuracy.

_A = (3.387132872796366608, 133.14166789178437745, 1971.5909503065514427,
      13731.693765509461125, 45921.953931549871457, 67265.770927008700853,
      33430.575583588128105, 2509.0809287301226727)
_B = (1.0, 42.313330701600911252, 687.1870074920579083, 5394.1960214247511077,
      21213.794301586595867, 39307.89580009271061, 28729.085735721942674,
      5226.495278852545925)
_C = (1.42343711074968357734, 4.6303378461565452959, 5.7694972214606914055,
      3.64784832476320460504, 1.27045825245236838258, 0.24178072517745061177,
      0.0227238449892691845833, 7.7454501427834140764e-4)
_D = (1.0, 2.05319162663775882187, 1.6763848301838038494, 0.68976733498510000455,
      0.14810397642748007459, 0.0151986665636164571966, 5.475938084995344946e-4,
      1.05075007164441684324e-9)
_E = (6.6579046435011037772, 5.4637849111641143699, 1.7848265399172913358,
      0.29656057182850489123, 0.026532189526576123093, 0.0012426609473880784386,
      2.71155556874348757815e-5, 2.01033439929228813265e-7)
_F = (1.0, 0.59983220655588793769, 0.13692988092273580531, 0.0148753612908506148525,
      7.868691311456132591e-4, 1.8463183175100546818e-5, 1.4215117583164458887e-7,
      2.04426310338993978564e-15)


def _poly(c, x: float) -> float:
    acc = 0.0
    for coef in reversed(c):
        acc = acc * x + coef
    return acc


def normal_quantile(p: float) -> float:
    """Standard normal quantile function."""
    if not 0.0 < p < 1.0:
        raise BadLevel(f"probability {p!r} outside (0, 1)")
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        return q * _poly(_A, r) / _poly(_B, r)
    r = math.sqrt(-math.log(p if q < 0 else 1.0 - p))
    if r <= 5.0:
        r -= 1.6
        z = _poly(_C, r) / _poly(_D, r)
    else:
        r -= 5.0
        z = _poly(_E, r) / _poly(_F, r)
    return -z if q < 0 else z


def two_sided_z(level: float) -> float:
    if not 0.0 < level < 1.0:
        raise BadLevel(f"confidence level {level!r} outside (0, 1)")
    return normal_quantile(0.5 + 0.5 * level)


def normal_ci(beta_a: float, se_a: float, level: float = 0.95) -> tuple[float, float]:
    z = two_sided_z(level)
    if not se_a > 0:
        raise DegenerateVariance(f"standard error {se_a!r} is not positive")
    half = z * se_a
    return (beta_a - half, beta_a + half)
