"""Fixed-effects estimator and its bias-corrected variants.

All estimators are computed from per-individual within moments
``a_i = sum_t xdot_it xdot_it'`` and ``s_i = sum_t xdot_it ydot_it``.  A
(weighted) fit is then a weighted sum over individuals followed by a ``p x p``
solve, which is what lets the bootstrap evaluate thousands of resamples at
once as ``B x n`` weight matrices.  Unit weights go through exactly the same code
path as bootstrap weights, so the two agree bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DataError, NotApplicable, SingularDesign
from .panel import PanelDataset, demean, half_indices, within_transform

SINGULAR_RATIO = 1e-12


@dataclass(frozen=True, eq=False)
class SegmentMoments:
    """Within moments of one block of periods: ``a`` is ``n x p x p``, ``s`` is ``n x p``."""

    a: np.ndarray
    s: np.ndarray
    T: int

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def p(self) -> int:
        return self.a.shape[1]

    @cached_property
    def packed(self) -> np.ndarray:
        """``n x (p^2 + p)`` rows ``[vec(a_i), s_i]``."""
        return np.concatenate([self.a.reshape(self.n, -1), self.s], axis=1)

    def scores(self, beta: np.ndarray) -> np.ndarray:
        """Per-individual score averages ``T^-1 sum_t xdot_it ehat_it(beta)``.

        ``beta`` may be a single ``p`` vector (result ``n x p``) or a ``B x p``
        stack (result ``B x n x p``).
        """
        beta = np.asarray(beta, dtype=np.float64)
        if beta.ndim == 1:
            return (self.s - self.a @ beta) / self.T
        return (self.s[None] - np.einsum("nij,bj->bni", self.a, beta)) / self.T


def segment_moments(y: np.ndarray, x: np.ndarray) -> SegmentMoments:
    yd, _ = demean(y)
    xd, _ = demean(x)
    return SegmentMoments(np.einsum("ntj,ntk->njk", xd, xd), np.einsum("ntj,nt->nj", xd, yd),
                          y.shape[1])


@dataclass(frozen=True, eq=False)
class PanelMoments:
    full: SegmentMoments
    halves: tuple[SegmentMoments, SegmentMoments] | None

    @property
    def n(self) -> int:
        return self.full.n

    @property
    def T(self) -> int:
        return self.full.T


def panel_moments(ds: PanelDataset, halves: bool = True) -> PanelMoments:
    if ds.p < 1:
        raise DataError("panel has no regressors; build a lagged design first")
    full = segment_moments(ds.y, ds.x)
    hv = None
    if halves:
        h1, h2 = half_indices(ds.T)
        hv = tuple(segment_moments(ds.y[:, list(h)], ds.x[:, list(h), :]) for h in (h1, h2))
    return PanelMoments(full, hv)


def weighted_sum(w: np.ndarray, m: np.ndarray) -> np.ndarray:
    """``sum_i w_bi m_i`` for ``B x n`` weights and an ``n x k`` array.

    Individuals are accumulated strictly in index order with elementwise
    operations, so each row's result depends only on that row's weights and
    not on how many rows are evaluated together.
    """
    w = np.asarray(w, dtype=np.float64)
    acc = w[:, 0:1] * m[0]
    for i in range(1, m.shape[0]):
        acc += w[:, i:i + 1] * m[i]
    return acc


def _unpack(flat: np.ndarray, p: int, scale: float):
    flat = flat / scale
    return flat[:, :p * p].reshape(-1, p, p), flat[:, p * p:]


def weighted_moments(seg: SegmentMoments, w: np.ndarray):
    """``(nT)^-1 sum_i w_bi a_i`` and ``(nT)^-1 sum_i w_bi s_i`` for a ``B x n`` weight matrix."""
    return _unpack(weighted_sum(w, seg.packed), seg.p, seg.n * seg.T)


def weighted_a(seg: SegmentMoments, w: np.ndarray) -> np.ndarray:
    return weighted_moments(seg, w)[0]


def weighted_s(seg: SegmentMoments, w: np.ndarray) -> np.ndarray:
    return weighted_moments(seg, w)[1]


def singular_ratio(a: np.ndarray) -> np.ndarray:
    """Relative minimum eigenvalue of each matrix in a ``B x p x p`` stack."""
    ev = np.linalg.eigvalsh(a)
    top = ev[:, -1]
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(top > 0, ev[:, 0] / top, -np.inf)
    return r


def _solve(a: np.ndarray, s: np.ndarray):
    ok = singular_ratio(a) >= SINGULAR_RATIO
    beta = np.full(s.shape, np.nan)
    if ok.any():
        beta[ok] = np.linalg.solve(a[ok], s[ok][..., None])[..., 0]
    return beta, ok


def weighted_fit(seg: SegmentMoments, w: np.ndarray):
    """Weighted FE fits for each row of ``w``.

    Returns ``(beta, a_hat, ok)`` with ``beta`` ``B x p`` (NaN where the fit is
    singular), ``a_hat`` ``B x p x p`` and a boolean mask of successful rows.
    """
    a, s = weighted_moments(seg, w)
    beta, ok = _solve(a, s)
    return beta, a, ok


def weighted_hpj(mom: PanelMoments, w: np.ndarray):
    """Weighted FE and half-panel jackknife fits; returns ``(beta_fe, beta_hpj, a_full, ok)``.

    The three segments share one pass over individuals.
    """
    segs = (mom.full,) + tuple(mom.halves)
    k = segs[0].packed.shape[1]
    total = weighted_sum(w, np.concatenate([g.packed for g in segs], axis=1))
    fits = []
    for j, g in enumerate(segs):
        a, s = _unpack(total[:, j * k:(j + 1) * k], g.p, g.n * g.T)
        fits.append((a,) + _solve(a, s))
    (a, b, ok), (_, b1, ok1), (_, b2, ok2) = fits
    return b, 2.0 * b - 0.5 * (b1 + b2), a, ok & ok1 & ok2


@dataclass(frozen=True, eq=False)
class FitResult:
    beta_hat: np.ndarray
    a_hat: np.ndarray
    s_hat: np.ndarray
    residuals: np.ndarray
    method: str
    n: int
    T: int
    p: int
    moments: PanelMoments | None = None

    @property
    def se_hk(self) -> float:
        """HK02 variance formula ``sqrt((1 - beta^2) / (nT))``; HK fits only."""
        if self.method != "HK":
            raise NotApplicable("analytic HK standard error exists only for HK fits")
        return float(np.sqrt(max(1.0 - self.beta_hat[0] ** 2, 0.0) / (self.n * self.T)))


def _fit_result(ds: PanelDataset, mom: PanelMoments, beta: np.ndarray, method: str) -> FitResult:
    wv = within_transform(ds)
    ones = np.ones((1, ds.n))
    a = weighted_a(mom.full, ones)[0]
    s = weighted_s(mom.full, ones)[0]
    resid = wv.y_dot - wv.x_dot @ beta
    return FitResult(beta, a, s, resid, method, ds.n, ds.T, ds.p, mom)


def _fit_full(mom: PanelMoments, where: str = "full panel") -> np.ndarray:
    beta, a, ok = weighted_fit(mom.full, np.ones((1, mom.n)))
    if not ok[0]:
        raise SingularDesign(float(singular_ratio(a)[0]), where)
    return beta[0]


def fe_fit(ds: PanelDataset) -> FitResult:
    """Within-group (fixed effects) estimator ``beta = A^-1 S``."""
    mom = panel_moments(ds, halves=ds.T >= 4)
    return _fit_result(ds, mom, _fit_full(mom), "FE")


def hpj_fit(ds: PanelDataset) -> FitResult:
    """Half-panel jackknife ``2 beta - (beta_S1 + beta_S2) / 2``.

    Residuals are recomputed on the full panel at the corrected coefficient.
    """
    mom = panel_moments(ds, halves=True)
    beta = _fit_full(mom)
    ones = np.ones((1, mom.n))
    halves = []
    for k, seg in enumerate(mom.halves, start=1):
        b, a, ok = weighted_fit(seg, ones)
        if not ok[0]:
            raise SingularDesign(float(singular_ratio(a)[0]), f"half panel S{k}")
        halves.append(b[0])
    return _fit_result(ds, mom, 2.0 * beta - 0.5 * (halves[0] + halves[1]), "HPJ")


def hk_correct(beta_fe, T: int):
    """Analytic AR(1) correction ``beta + (1 + beta) / T``."""
    return beta_fe + (1.0 + beta_fe) / T


def hk_fit(ds: PanelDataset) -> FitResult:
    """Hahn-Kuersteiner corrected estimate; pure AR(1) designs only."""
    if ds.p != 1 or ds.design is None or not ds.design.is_ar1:
        raise NotApplicable("HK correction needs a design built with outcome lag 1 only")
    mom = panel_moments(ds, halves=False)
    beta = hk_correct(_fit_full(mom), ds.T)
    return _fit_result(ds, mom, beta, "HK")
