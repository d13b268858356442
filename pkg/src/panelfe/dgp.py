"""Panel simulators for the autoregressive designs used in the experiments.

Each individual's draws come from one addressable row of a counter-based
stream: the effect ``c_i`` first, then the innovations, then any exogenous
regressor.  Individual ``i`` therefore looks the same whatever ``n`` is.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .errors import ConfigError, NonStationarySpec
from .panel import LagSpec, PanelDataset
from .streams import normal, stream_key, student_t10, uniform, uniform_rows

VARIANTS = ("AR1", "AR2", "AR2X", "RCAR1", "EXPAR")


@dataclass(frozen=True)
class Dist:
    """A univariate law: ``uniform(lo, hi)``, ``normal``, ``t10`` or ``t10u``.

    ``t10u`` is Student t with 10 degrees of freedom rescaled to unit variance.
    """

    kind: str
    lo: float = 0.0
    hi: float = 1.0

    @property
    def width(self) -> int:
        return 6 if self.kind in ("t10", "t10u") else 1

    @property
    def variance(self) -> float:
        return {"uniform": (self.hi - self.lo) ** 2 / 12.0, "normal": 1.0,
                "t10": 10.0 / 8.0, "t10u": 1.0}[self.kind]

    def transform(self, u: np.ndarray) -> np.ndarray:
        """Map uniforms (last axis grouped by ``width``) to draws."""
        if self.kind == "uniform":
            return uniform(u[..., 0], self.lo, self.hi)
        if self.kind == "normal":
            return normal(u[..., 0])
        if self.kind == "t10":
            return student_t10(u)
        if self.kind == "t10u":
            return student_t10(u) * _T10_UNIT
        raise ConfigError(f"unknown distribution {self.kind!r}")

    def __str__(self) -> str:
        return f"U({self.lo:g},{self.hi:g})" if self.kind == "uniform" else self.kind


_T10_UNIT = (8.0 / 10.0) ** 0.5
T10 = Dist("t10")
T10_UNIT = Dist("t10u")
NORMAL = Dist("normal")


def _default_c(variant: str) -> Dist:
    return Dist("uniform", 0.0, 0.9) if variant == "RCAR1" else Dist("uniform", -0.5, 0.5)


def _default_err(variant: str) -> Dist:
    # the design with an exogenous regressor is not scale free: its pseudo-true
    # value depends on the innovation variance relative to Var(x) = 1, and the
    # reported 0.73 corresponds to unit-variance innovations
    if variant == "AR2X":
        return T10_UNIT
    return NORMAL if variant in ("RCAR1", "EXPAR") else T10


@dataclass(frozen=True)
class DgpSpec:
    """A data generating process.

    ``params`` are ``(phi,)`` for AR1, ``(phi1, phi2)`` for AR2,
    ``(phi1, phi2, rho1, rho2)`` for AR2X, ``()`` for RCAR1 (the coefficient is
    ``c_i`` itself) and ``(rho1, rho2)`` for EXPAR.
    """

    variant: str
    params: tuple = ()
    c_dist: Dist | None = None
    err_dist: Dist | None = None
    burn_in: int = 500
    x_dist: Dist = field(default=NORMAL)

    def __post_init__(self):
        v = self.variant.upper()
        if v not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        object.__setattr__(self, "variant", v)
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        if self.c_dist is None:
            object.__setattr__(self, "c_dist", _default_c(v))
        if self.err_dist is None:
            object.__setattr__(self, "err_dist", _default_err(v))
        need = {"AR1": 1, "AR2": 2, "AR2X": 4, "RCAR1": 0, "EXPAR": 2}[v]
        if len(self.params) != need:
            raise ConfigError(f"{v} takes {need} parameters, got {len(self.params)}")
        if self.burn_in < 0:
            raise ConfigError("burn_in must be non-negative")
        self._check_stationary()

    def _check_stationary(self):
        v, p = self.variant, self.params
        if v == "AR1" and not abs(p[0]) < 1:
            raise NonStationarySpec(f"AR(1) needs |phi| < 1, got {p[0]}")
        if v in ("AR2", "AR2X"):
            f1, f2 = p[0], p[1]
            if not (f1 + f2 < 1 and f2 - f1 < 1 and abs(f2) < 1):
                raise NonStationarySpec(f"AR(2) coefficients ({f1}, {f2}) outside the stationarity triangle")
        if v == "RCAR1":
            c = self.c_dist
            if c.kind != "uniform" or not (-1 < c.lo <= c.hi < 1):
                raise NonStationarySpec(f"random coefficient law {c} must have support inside (-1, 1)")
        if v == "EXPAR" and not abs(p[0]) < 1:
            raise NonStationarySpec(f"exponential AR needs |rho1| < 1, got {p[0]}")

    @property
    def has_x(self) -> bool:
        return self.variant == "AR2X"

    def default_fit(self) -> LagSpec:
        """The misspecified AR(1) fit used in the experiments."""
        return LagSpec((1,), (("x1", 1),)) if self.has_x else LagSpec((1,), ())

    @classmethod
    def parse(cls, text: str, burn_in: int = 500) -> "DgpSpec":
        """Parse ``ar1:0.8``, ``ar2:0.4,0.4``, ``ar2x:0.4,0.4,0.5,0.5``,
        ``rcar1:u0,0.9`` or ``expar:0.8,1``.

        An optional suffix ``@normal``, ``@t10`` or ``@t10u`` overrides the
        innovation law.
        """
        text, _, err = text.partition("@")
        if err.strip():
            base = cls.parse(text, burn_in)
            kind = err.strip().lower()
            if kind not in ("normal", "t10", "t10u"):
                raise ConfigError(f"unknown innovation law {err!r}")
            return cls(base.variant, base.params, base.c_dist, Dist(kind), burn_in)
        name, _, rest = text.strip().partition(":")
        name = name.strip().upper()
        toks = [t.strip() for t in rest.split(",")] if rest.strip() else []
        try:
            if name == "RCAR1":
                if len(toks) != 2 or not toks[0].lower().startswith("u"):
                    raise ConfigError("rcar1 takes a uniform law, e.g. rcar1:u0,0.9")
                c = Dist("uniform", float(toks[0][1:]), float(toks[1]))
                return cls("RCAR1", (), c_dist=c, burn_in=burn_in)
            return cls(name, tuple(float(t) for t in toks), burn_in=burn_in)
        except ValueError:
            raise ConfigError(f"cannot parse DGP spec {text!r}") from None

    def __str__(self) -> str:
        if self.variant == "RCAR1":
            out = f"rcar1:u{self.c_dist.lo:g},{self.c_dist.hi:g}"
        else:
            out = f"{self.variant.lower()}:" + ",".join(f"{p:g}" for p in self.params)
        if self.err_dist != _default_err(self.variant):
            out += f"@{self.err_dist.kind}"
        return out

    def to_dict(self) -> dict:
        return {"spec": str(self), "c_dist": [self.c_dist.kind, self.c_dist.lo, self.c_dist.hi],
                "err_dist": [self.err_dist.kind, self.err_dist.lo, self.err_dist.hi],
                "burn_in": self.burn_in}

    @classmethod
    def from_dict(cls, d: dict) -> "DgpSpec":
        base = cls.parse(d["spec"], burn_in=int(d.get("burn_in", 500)))
        c = Dist(*d["c_dist"]) if "c_dist" in d else base.c_dist
        err = Dist(*d["err_dist"]) if "err_dist" in d else base.err_dist
        return cls(base.variant, base.params, c, err, base.burn_in)


@dataclass(frozen=True, eq=False)
class SimulatedPanel:
    dataset: PanelDataset
    effects: np.ndarray
    spec: DgpSpec
    seed: tuple


def row_layout(spec: DgpSpec, steps: int) -> tuple[int, int, int]:
    """Widths of the effect, innovation and regressor blocks of a stream row."""
    cw = spec.c_dist.width
    ew = spec.err_dist.width * steps
    xw = (steps + 1) * spec.x_dist.width if spec.has_x else 0
    return cw, ew, xw


def draw_inputs(spec: DgpSpec, key, start: int, count: int, steps: int):
    """Effects, innovations and regressors for individuals ``start..start+count-1``."""
    cw, ew, xw = row_layout(spec, steps)
    u = uniform_rows(key, count, cw + ew + xw, start)
    c = spec.c_dist.transform(u[:, :cw])
    e = spec.err_dist.transform(u[:, cw:cw + ew].reshape(count, steps, spec.err_dist.width))
    x = None
    if xw:
        x = spec.x_dist.transform(u[:, cw + ew:].reshape(count, steps + 1, spec.x_dist.width))
    return c, e, x


def initial_state(spec: DgpSpec, c: np.ndarray):
    """Recursion state right after initialization (``y = 0``, or ``y = c`` for EXPAR)."""
    if spec.variant in ("AR1", "AR2", "AR2X"):
        return np.zeros((c.shape[0], 1 if spec.variant == "AR1" else 2))
    return c.copy() if spec.variant == "EXPAR" else np.zeros(c.shape[0])


def advance(spec: DgpSpec, c: np.ndarray, e: np.ndarray, x: np.ndarray | None, state):
    """Run the recursion for ``e.shape[1]`` periods from ``state``.

    ``x`` (AR2X only) has one extra leading period so ``x_{t-1}`` exists at the
    first step.  Returns the ``n x steps`` path and the state after it, so long
    series can be produced in pieces.
    """
    v, p = spec.variant, spec.params
    if v in ("AR1", "AR2", "AR2X"):
        drive = c[:, None] + e
        if v == "AR2X":
            drive = drive + p[2] * x[:, 1:] + p[3] * x[:, :-1]
        den = [1.0, -p[0]] if v == "AR1" else [1.0, -p[0], -p[1]]
        return lfilter([1.0], den, drive, axis=1, zi=state)
    n, steps = e.shape
    out = np.empty((n, steps))
    y = state.copy()
    if v == "RCAR1":
        for t in range(steps):
            y = c * y + e[:, t]
            out[:, t] = y
        return out, y
    r1, r2 = p
    for t in range(steps):
        d = y - c
        y = c + r1 * d + r2 * np.exp(-d * d) + e[:, t]
        out[:, t] = y
    return out, y


def recurse(spec: DgpSpec, c: np.ndarray, e: np.ndarray, x: np.ndarray | None) -> np.ndarray:
    """Full post-initialization path for ``e.shape[1]`` periods."""
    return advance(spec, c, e, x, initial_state(spec, c))[0]


def simulate_panel(spec: DgpSpec, n: int, T: int, seed=0) -> SimulatedPanel:
    """Simulate ``n`` individuals over periods ``t = 0..T``.

    ``burn_in + T + 1`` periods are generated after the initial value (zero,
    or ``c_i`` for the exponential AR) and the last ``T + 1`` are kept, so a
    one-lag fit has ``T`` usable rows.  ``seed`` may be an int or a tuple path;
    individual ``i`` reads row ``i`` of the stream keyed by it.
    """
    if n < 2 or T < 2:
        raise ConfigError(f"need n >= 2 and T >= 2, got n={n}, T={T}")
    steps = spec.burn_in + T + 1
    key = stream_key(seed)
    c, e, x = draw_inputs(spec, key, 0, n, steps)
    y = recurse(spec, c, e, x)[:, -(T + 1):]
    xs = x[:, -(T + 1):, None] if x is not None else None
    names = ("x1",) if x is not None else ()
    ds = PanelDataset(y, xs, tuple(range(n)), tuple(range(T + 1)), names)
    seed_t = tuple(seed) if isinstance(seed, (tuple, list)) else (int(seed),)
    return SimulatedPanel(ds, c, spec, seed_t)
