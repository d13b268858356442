"""Population quantities of the simulation designs.

Pseudo-true coefficients, the bias-expansion terms ``A``, ``B_T``, ``D_T``
and the limit covariances ``V1`` (time-series part) and ``V2`` (cluster part)
are computed in closed form where one exists and otherwise from very long
simulated series, with per-individual long-run means standing in for
conditional means given the effect.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate

from .dgp import DgpSpec, advance, initial_state
from .errors import ConfigError, NoClosedForm
from .panel import LagSpec
from .streams import UniformStream, stream_key

CLOSED_FORM = "ClosedForm"
INTEGRATED = "Integrated"
SIMULATED = "Simulated"
FAST_RATE = "FastRate"
SLOW_RATE = "SlowRate"

T_LONG = 1_000_000
N_LONG = 64
ORACLE_SEED = 20_240_601
CHUNK = 1 << 15
BIAS_SERIES_LENGTH = 1 << 18


@dataclass(frozen=True)
class MeasurementErrorSpec:
    """Static design ``y = c + phi x* + u`` observed through ``x = x* + v``."""

    phi: float
    var_xstar: float
    var_v: float


@dataclass(frozen=True)
class PseudoTrue:
    beta0: tuple
    provenance: str
    T_long: int | None = None
    n_long: int | None = None
    mc_se: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "beta0", tuple(float(b) for b in np.ravel(self.beta0)))
        if self.mc_se is not None:
            object.__setattr__(self, "mc_se", tuple(float(b) for b in np.ravel(self.mc_se)))

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PseudoTrue":
        return cls(**json.loads(text))


@dataclass(frozen=True, eq=False)
class BiasTerms:
    A: np.ndarray
    B_T: np.ndarray
    D_T: np.ndarray
    B_inf: np.ndarray
    T_used: int
    provenance: str
    beta0: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def first_order(self) -> np.ndarray:
        """``-A^-1 B_T / T``."""
        return -np.linalg.solve(self.A, self.B_T) / self.T_used

    def two_term(self) -> np.ndarray:
        """``-A^-1 B_T / T - A^-1 D_T A^-1 B_T / T^2``."""
        ab = np.linalg.solve(self.A, self.B_T)
        return -ab / self.T_used - np.linalg.solve(self.A, self.D_T @ ab) / self.T_used ** 2

    def full_series(self) -> np.ndarray:
        """Sum of the whole expansion, ``-(T A - D_T)^-1 B_T``."""
        return -np.linalg.solve(self.T_used * self.A - self.D_T, self.B_T)

    def to_json(self) -> str:
        return json.dumps({k: (v.tolist() if isinstance(v, np.ndarray) else v)
                           for k, v in self.__dict__.items()}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "BiasTerms":
        d = json.loads(text)
        return cls(**{k: (np.array(v) if isinstance(v, list) else v) for k, v in d.items()})


@dataclass(frozen=True, eq=False)
class LimitCovariance:
    V1: np.ndarray
    V2: np.ndarray
    sigma: np.ndarray
    dnT_case: str
    provenance: str

    def to_json(self) -> str:
        return json.dumps({k: (v.tolist() if isinstance(v, np.ndarray) else v)
                           for k, v in self.__dict__.items()}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "LimitCovariance":
        d = json.loads(text)
        return cls(**{k: (np.array(v) if isinstance(v, list) else v) for k, v in d.items()})


def _rate_case(V2: np.ndarray) -> str:
    return FAST_RATE if np.linalg.norm(V2) < 1e-6 else SLOW_RATE


def _is_ar1_fit(fit: LagSpec | None) -> bool:
    return fit is None or fit.is_ar1


# closed forms ------------------------------------------------------------

def _rcar_moments(spec: DgpSpec) -> tuple[float, float]:
    """``E[c/(1-c^2)]`` and ``E[1/(1-c^2)]`` for a uniform coefficient law."""
    lo, hi = spec.c_dist.lo, spec.c_dist.hi
    if hi == lo:
        return lo / (1 - lo * lo), 1 / (1 - lo * lo)
    num = (-0.5 * math.log1p(-hi * hi) + 0.5 * math.log1p(-lo * lo)) / (hi - lo)
    den = (math.atanh(hi) - math.atanh(lo)) / (hi - lo)
    return num, den


def _rcar_expect(spec: DgpSpec, f) -> float:
    lo, hi = spec.c_dist.lo, spec.c_dist.hi
    if hi == lo:
        return f(lo)
    val, _ = integrate.quad(f, lo, hi, epsabs=1e-12, epsrel=1e-10)
    return val / (hi - lo)


def pseudo_true_closed_form(spec: DgpSpec | MeasurementErrorSpec) -> PseudoTrue:
    """Pseudo-true coefficient of the AR(1) fit, or of the static fit for measurement error.

    Raises
    ------
    NoClosedForm
        For the exponential AR and the design with exogenous regressors.
    """
    if isinstance(spec, MeasurementErrorSpec):
        if spec.var_xstar + spec.var_v <= 0:
            raise ConfigError("measurement-error design needs positive regressor variance")
        return PseudoTrue((spec.phi * spec.var_xstar / (spec.var_xstar + spec.var_v),), CLOSED_FORM)
    v, p = spec.variant, spec.params
    if v == "AR1":
        return PseudoTrue((p[0],), CLOSED_FORM)
    if v == "AR2":
        return PseudoTrue((p[0] / (1.0 - p[1]),), CLOSED_FORM)
    if v == "RCAR1":
        num, den = _rcar_moments(spec)
        return PseudoTrue((num / den,), INTEGRATED)
    raise NoClosedForm(f"no closed-form pseudo-true value for {spec}")


def _ar1_terms(phi: float, s2: float, T: int):
    A = s2 / (1 - phi * phi)
    j = np.arange(1, T)
    w = 1 - j / T
    B_T = s2 * float(np.sum(w * phi ** (j - 1)))
    D_T = A * (1 + 2 * float(np.sum(w * phi ** j)))
    return A, B_T, D_T, s2 / (1 - phi)


def _check_closed(spec: DgpSpec, fit: LagSpec | None, what: str):
    if spec.variant != "AR1" or not _is_ar1_fit(fit):
        raise NoClosedForm(f"closed-form {what} exist only for a correctly fitted AR(1)")


# long-run simulation -----------------------------------------------------

class LongRun:
    """Very long series for ``n_long`` individuals, generated piece by piece.

    Individual ``i`` draws from its own stream keyed by ``(seed, i)``: first
    the effect, then any initial regressor value, then innovations and
    regressors chunk by chunk.  ``pieces`` yields the fitting vector
    ``z_t = (y_t, regressors_t)`` after burn-in.
    """

    def __init__(self, spec: DgpSpec, fit: LagSpec, n_long: int, seed, chunk: int = CHUNK):
        self.spec, self.fit, self.n, self.chunk = spec, fit, n_long, chunk
        self.streams = [UniformStream(stream_key(seed, i)) for i in range(n_long)]
        self.c = spec.c_dist.transform(self._take(spec.c_dist.width))
        self.x_prev = (spec.x_dist.transform(self._take(spec.x_dist.width))
                       if spec.has_x else None)
        self.state = initial_state(spec, self.c)
        self.hist_y = np.zeros((n_long, 0))
        self.hist_x = np.zeros((n_long, 0))

    def _take(self, width: int) -> np.ndarray:
        return np.stack([s.take(width) for s in self.streams])

    def _step(self, L: int):
        spec = self.spec
        ew = spec.err_dist.width
        e = spec.err_dist.transform(self._take(L * ew).reshape(self.n, L, ew))
        x = None
        if spec.has_x:
            xw = spec.x_dist.width
            new = spec.x_dist.transform(self._take(L * xw).reshape(self.n, L, xw))
            x = np.concatenate([self.x_prev[:, None], new], axis=1)
            self.x_prev = new[:, -1]
        y, self.state = advance(spec, self.c, e, x, self.state)
        return y, (x[:, 1:] if x is not None else None)

    def burn(self):
        left = self.spec.burn_in
        while left > 0:
            L = min(left, self.chunk)
            y, x = self._step(L)
            self._remember(y, x)
            left -= L

    def _remember(self, y, x):
        M = self.fit.max_lag
        self.hist_y = np.concatenate([self.hist_y, y], axis=1)[:, -M:] if M else self.hist_y
        if x is not None:
            self.hist_x = np.concatenate([self.hist_x, x], axis=1)[:, -M:] if M else self.hist_x

    def pieces(self, total: int):
        """Yield ``n x L x (1 + p)`` arrays covering ``total`` usable periods."""
        self.burn()
        M = self.fit.max_lag
        # the first M kept periods only seed the lag history
        pending = M - self.hist_y.shape[1]
        if pending > 0:
            y, x = self._step(pending)
            self._remember(y, x)
        left = total
        while left > 0:
            L = min(left, self.chunk)
            y, x = self._step(L)
            Y = np.concatenate([self.hist_y, y], axis=1)
            cols = [y] + [Y[:, M - l:M - l + L] for l in self.fit.outcome_lags]
            if self.fit.regressor_lags:
                X = np.concatenate([self.hist_x, x], axis=1)
                cols += [X[:, M - l:M - l + L] for _, l in self.fit.regressor_lags]
            self._remember(y, x)
            left -= L
            yield np.stack(cols, axis=2)


def _merge(acc, piece):
    """Chan's pairwise update of per-individual means and co-moments."""
    L = piece.shape[1]
    m = piece.mean(axis=1)
    d = piece - m[:, None]
    C = np.einsum("nti,ntj->nij", d, d)
    if acc is None:
        return L, m, C
    k, m0, C0 = acc
    delta = m - m0
    tot = k + L
    return tot, m0 + delta * (L / tot), C0 + C + np.einsum("ni,nj->nij", delta, delta) * (k * L / tot)


def _check_fit(spec: DgpSpec, fit: LagSpec):
    if fit.regressor_lags and not spec.has_x:
        raise ConfigError(f"{spec} has no exogenous regressor for fit {fit}")
    if any(c != "x1" for c, _ in fit.regressor_lags):
        raise ConfigError("simulated designs have a single regressor named x1")


@lru_cache(maxsize=64)
def _pseudo_true_simulated(spec: DgpSpec, fit: LagSpec, T_long: int, n_long: int, seed) -> PseudoTrue:
    _check_fit(spec, fit)
    acc = None
    for piece in LongRun(spec, fit, n_long, seed).pieces(T_long):
        acc = _merge(acc, piece)
    k, _, C = acc
    Q = C / k
    A_i, c_i = Q[:, 1:, 1:], Q[:, 1:, 0]
    A, c = A_i.mean(axis=0), c_i.mean(axis=0)
    beta = np.linalg.solve(A, c)
    g = c_i - A_i @ beta
    sig = g.T @ g / n_long ** 2
    Ainv = np.linalg.inv(A)
    se = np.sqrt(np.diag(Ainv @ sig @ Ainv))
    return PseudoTrue(beta, SIMULATED, T_long, n_long, se)


def pseudo_true_simulated(spec: DgpSpec, fit: LagSpec | None = None, T_long: int = T_LONG,
                          n_long: int = N_LONG, seed=ORACLE_SEED) -> PseudoTrue:
    """Pseudo-true coefficient from long-run within moments.

    Parameters
    ----------
    spec : DgpSpec
    fit : LagSpec, optional
        Fitting design; defaults to the design used in the experiments.
    T_long : int
        Periods per individual after burn-in (at least ``10**5``).
    n_long : int
        Number of independent long series.
    seed : int or tuple

    Returns
    -------
    PseudoTrue
        With ``mc_se`` from the spread of per-individual score averages.
    """
    if T_long < 100_000:
        raise ConfigError(f"T_long must be at least 1e5, got {T_long}")
    fit = spec.default_fit() if fit is None else fit
    seed = tuple(seed) if isinstance(seed, (list, tuple)) else seed
    return _pseudo_true_simulated(spec, fit, int(T_long), int(n_long), seed)


def pseudo_true(spec: DgpSpec, fit: LagSpec | None = None) -> PseudoTrue:
    """Closed form when the fit is the experiments' AR(1) fit and one exists, else simulated."""
    fit = spec.default_fit() if fit is None else fit
    if fit == spec.default_fit():
        try:
            return pseudo_true_closed_form(spec)
        except NoClosedForm:
            pass
    return pseudo_true_simulated(spec, fit)


# autocovariances from a stored long sample ---------------------------------

def _stored_sample(spec, fit, L, n_long, seed):
    parts = list(LongRun(spec, fit, n_long, seed).pieces(L))
    z = np.concatenate(parts, axis=1)
    return z - z.mean(axis=1, keepdims=True)


def _cross_cov(a: np.ndarray, b: np.ndarray, K: int) -> np.ndarray:
    """``E[a_t b_{t+k}]`` for ``k = -K..K`` averaged over individuals (rows)."""
    n, L = a.shape
    nfft = 1 << int(math.ceil(math.log2(2 * L)))
    fa = np.fft.rfft(a, nfft, axis=1)
    fb = np.fft.rfft(b, nfft, axis=1)
    r = np.fft.irfft(np.conj(fa) * fb, nfft, axis=1).mean(axis=0)
    k = np.arange(-K, K + 1)
    vals = r[k % nfft]
    return vals / (L - np.abs(k))


def _simulated_lag_moments(spec, fit, beta0, K, L, n_long, seed):
    """Cross-lag moments ``E[x_1 eps_{1+k}]`` (``2K+1 x p``) and ``E[x_1 x_{1+k}']`` (``2K+1 x p x p``)."""
    z = _stored_sample(spec, fit, L, n_long, seed)
    x = z[:, :, 1:]
    eps = z[:, :, 0] - x @ beta0
    p = x.shape[2]
    xe = np.stack([_cross_cov(x[:, :, a], eps, K) for a in range(p)], axis=1)
    xx = np.empty((2 * K + 1, p, p))
    for a in range(p):
        for b in range(p):
            xx[:, a, b] = _cross_cov(x[:, :, a], x[:, :, b], K)
    return xe, xx, x, eps


def _weighted(m: np.ndarray, T: int) -> np.ndarray:
    K = (m.shape[0] - 1) // 2
    k = np.arange(-K, K + 1)
    w = np.where(np.abs(k) <= T - 1, 1 - np.abs(k) / T, 0.0)
    return np.tensordot(w, m, axes=(0, 0))


def _truncation_lag(xx: np.ndarray) -> int:
    """Lag beyond which the regressor autocorrelation has died out (below 1e-3)."""
    K = (xx.shape[0] - 1) // 2
    diag = np.abs(np.einsum("kii->k", xx))[K:]
    small = np.flatnonzero(diag < 1e-3 * diag[0])
    return int(small[0]) if small.size else K


def _beta0_for(spec: DgpSpec, fit: LagSpec, seed) -> np.ndarray:
    if fit == spec.default_fit():
        try:
            return np.array(pseudo_true_closed_form(spec).beta0)
        except NoClosedForm:
            pass
    return np.array(pseudo_true_simulated(spec, fit, seed=seed).beta0)


def bias_terms(spec: DgpSpec, fit: LagSpec | None = None, T: int = 24,
               method: str = CLOSED_FORM, L: int = BIAS_SERIES_LENGTH,
               n_long: int = N_LONG, seed=ORACLE_SEED, max_lag: int = 2000) -> BiasTerms:
    """Bias-expansion terms ``A``, ``B_T``, ``D_T`` and ``B``.

    ``method`` is ``"ClosedForm"`` (correct AR(1) fit only), ``"Simulated"``,
    or ``"auto"`` (closed form when available, otherwise simulated).
    Simulated lag sums run to ``T - 1`` for ``B_T`` and ``D_T``; ``B`` is
    truncated where the regressor autocorrelation falls below 1e-3.
    """
    fit = spec.default_fit() if fit is None else fit
    if method in (CLOSED_FORM, "auto"):
        try:
            _check_closed(spec, fit, "bias terms")
            A, B_T, D_T, B = _ar1_terms(spec.params[0], spec.err_dist.variance, T)
            return BiasTerms(np.array([[A]]), np.array([B_T]), np.array([[D_T]]), np.array([B]),
                             T, CLOSED_FORM, np.array([spec.params[0]]))
        except NoClosedForm:
            if method == CLOSED_FORM:
                raise
    elif method != SIMULATED:
        raise ConfigError(f"unknown oracle method {method!r}")
    beta0 = _beta0_for(spec, fit, seed)
    K = min(max(T - 1, max_lag), L // 4)
    xe, xx, _, _ = _simulated_lag_moments(spec, fit, beta0, K, L, n_long, seed)
    A = xx[K]
    Kinf = max(_truncation_lag(xx), T - 1)
    B_inf = xe[K - Kinf:K + Kinf + 1].sum(axis=0)
    return BiasTerms(A, _weighted(xe, T), _weighted(xx, T), B_inf, T, SIMULATED, beta0)


# limit covariances -------------------------------------------------------

def _rcar_v1_v2(spec: DgpSpec, beta0: float):
    s2 = spec.err_dist.variance

    def lrv(c):
        # long-run variance of y_{t-1} eps_t given c: martingale part, the
        # squared-level part and their cross covariance
        sc = s2 / (1 - c * c)
        d = c - beta0
        return sc * s2 + d * d * 2 * sc * sc * (1 + c * c) / (1 - c * c) + 4 * c * d * sc * s2 / (1 - c * c)

    V1 = _rcar_expect(spec, lrv)
    V2 = _rcar_expect(spec, lambda c: (s2 * (c - beta0) / (1 - c * c)) ** 2)
    return np.array([[V1]]), np.array([[V2]])


def _long_run_var(h: np.ndarray, K: int) -> np.ndarray:
    """``sum_{|k|<=K} E[h_1 h_{1+k}']`` for an ``n x L x p`` array."""
    p = h.shape[2]
    out = np.empty((p, p))
    for a in range(p):
        for b in range(p):
            out[a, b] = _cross_cov(h[:, :, a], h[:, :, b], K).sum()
    return 0.5 * (out + out.T)


def limit_covariance(spec: DgpSpec, fit: LagSpec | None = None, method: str = CLOSED_FORM,
                     L: int = BIAS_SERIES_LENGTH, n_long: int = N_LONG,
                     seed=ORACLE_SEED) -> LimitCovariance:
    """Time-series part ``V1``, cluster part ``V2`` and the applicable ``Sigma``.

    Closed forms cover the correctly fitted AR(1) (``V2 = 0``) and, by
    numerical integration over the coefficient law, the random-coefficient
    AR(1) with Gaussian innovations.  Designs where the effect enters additively have ``V2 = 0``
    exactly, because the demeaned process does not depend on the effect; the
    simulated path reports that and estimates ``V1`` from a long sample.
    """
    fit = spec.default_fit() if fit is None else fit
    if method in (CLOSED_FORM, "auto"):
        try:
            if spec.variant == "AR1" and fit.is_ar1:
                phi, s2 = spec.params[0], spec.err_dist.variance
                A = s2 / (1 - phi * phi)
                V1 = np.array([[A * s2]])
                V2 = np.zeros((1, 1))
                return LimitCovariance(V1, V2, V1, FAST_RATE, CLOSED_FORM)
            if spec.variant == "RCAR1" and fit.is_ar1 and spec.err_dist.kind == "normal":
                V1, V2 = _rcar_v1_v2(spec, pseudo_true_closed_form(spec).beta0[0])
                return LimitCovariance(V1, V2, V2 if _rate_case(V2) == SLOW_RATE else V1,
                                       _rate_case(V2), INTEGRATED)
            raise NoClosedForm(f"no closed-form limit covariance for {spec} fitted by {fit}")
        except NoClosedForm:
            if method == CLOSED_FORM:
                raise
    elif method != SIMULATED:
        raise ConfigError(f"unknown oracle method {method!r}")
    beta0 = _beta0_for(spec, fit, seed)
    z = _stored_sample(spec, fit, L, n_long, seed)
    x = z[:, :, 1:]
    h = x * (z[:, :, 0] - x @ beta0)[:, :, None]
    means = h.mean(axis=1)
    if spec.variant == "RCAR1":
        V2 = means.T @ means / means.shape[0]
    else:
        V2 = np.zeros((x.shape[2],) * 2)
    hc = h - means[:, None, :]
    xx = np.stack([_cross_cov(x[:, :, 0], x[:, :, 0], L // 4)], axis=1)[:, :, None]
    K = min(max(4 * _truncation_lag(xx), 50), L // 4)
    V1 = _long_run_var(hc, K)
    case = _rate_case(V2)
    return LimitCovariance(V1, V2, V2 if case == SLOW_RATE else V1, case, SIMULATED)
