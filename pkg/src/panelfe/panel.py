"""Balanced panels: data model, CSV I/O, within transform, lags and half panels."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (DataError, DuplicateRow, LagTooLarge, MissingCell, NonNumeric,
                     TooShort)


@dataclass(frozen=True)
class LagSpec:
    """Which lags enter the fitting design.

    ``outcome_lags`` are lags of ``y``; ``regressor_lags`` are ``(column, lag)``
    pairs over the raw regressor columns, with ``lag >= 0``.
    """

    outcome_lags: tuple[int, ...] = (1,)
    regressor_lags: tuple[tuple[str, int], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "outcome_lags", tuple(int(l) for l in self.outcome_lags))
        object.__setattr__(self, "regressor_lags",
                           tuple((str(c), int(l)) for c, l in self.regressor_lags))
        if any(l < 1 for l in self.outcome_lags):
            raise DataError("outcome lags must be positive")
        if any(l < 0 for _, l in self.regressor_lags):
            raise DataError("regressor lags must be non-negative")
        if not self.outcome_lags and not self.regressor_lags:
            raise DataError("lag spec selects no regressors")

    @property
    def max_lag(self) -> int:
        return max(list(self.outcome_lags) + [l for _, l in self.regressor_lags] + [0])

    @property
    def names(self) -> tuple[str, ...]:
        return tuple([f"y_lag{l}" for l in self.outcome_lags]
                     + [f"{c}_lag{l}" for c, l in self.regressor_lags])

    @property
    def is_ar1(self) -> bool:
        return self.outcome_lags == (1,) and not self.regressor_lags

    @classmethod
    def parse(cls, text: str) -> "LagSpec":
        """Parse ``y:1``, ``y:1,x1:1`` or the alias ``ar1``."""
        text = text.strip()
        if text.lower() == "ar1":
            return cls((1,), ())
        out, reg = [], []
        for tok in text.split(","):
            col, _, lag = tok.strip().partition(":")
            if not lag:
                raise DataError(f"bad lag token {tok!r}; expected column:lag")
            if col == "y":
                out.append(int(lag))
            else:
                reg.append((col, int(lag)))
        return cls(tuple(out), tuple(reg))

    def __str__(self) -> str:
        return ",".join([f"y:{l}" for l in self.outcome_lags]
                        + [f"{c}:{l}" for c, l in self.regressor_lags])


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """A balanced ``n x T`` panel with outcome ``y`` and ``p`` regressors ``x``.

    Raw panels may have ``p = 0`` (a pure autoregression needs only ``y``);
    fitting requires at least one column.

    ``design`` records the lag structure when the panel was produced by
    :func:`build_lagged_design`; raw panels carry ``None``.
    """

    y: np.ndarray
    x: np.ndarray | None = None
    ids: tuple = ()
    periods: tuple = ()
    x_names: tuple[str, ...] = ()
    design: LagSpec | None = None

    def __post_init__(self):
        y = _frozen(self.y)
        if y.ndim != 2:
            raise DataError("y must be an n x T matrix")
        x = np.zeros(y.shape + (0,)) if self.x is None else np.asarray(self.x, dtype=np.float64)
        if x.ndim == 2:
            x = x[:, :, None]
        x = _frozen(x)
        n, T = y.shape
        if x.ndim != 3 or x.shape[:2] != (n, T):
            raise DataError(f"x has shape {x.shape}, expected ({n}, {T}, p)")
        if n < 2 or T < 2:
            raise DataError(f"panel needs n >= 2 and T >= 2 (got {n}, {T})")
        if not (np.isfinite(y).all() and np.isfinite(x).all()):
            bad = np.argwhere(~np.isfinite(y) | ~np.isfinite(x).all(axis=2))[0]
            raise DataError(f"non-finite value at individual {bad[0]}, period {bad[1]}")
        ids = tuple(self.ids) if len(self.ids) else tuple(range(n))
        periods = tuple(self.periods) if len(self.periods) else tuple(range(T))
        names = tuple(self.x_names) if len(self.x_names) else tuple(
            f"x{j + 1}" for j in range(x.shape[2]))
        if len(ids) != n or len(periods) != T or len(names) != x.shape[2]:
            raise DataError("label lengths do not match data dimensions")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "periods", periods)
        object.__setattr__(self, "x_names", names)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def T(self) -> int:
        return self.y.shape[1]

    @property
    def p(self) -> int:
        return self.x.shape[2]

    def select_periods(self, idx: Sequence[int]) -> "PanelDataset":
        idx = list(idx)
        return PanelDataset(self.y[:, idx], self.x[:, idx, :], self.ids,
                            tuple(self.periods[i] for i in idx), self.x_names, self.design)

    def select_individuals(self, idx: Sequence[int]) -> "PanelDataset":
        idx = list(idx)
        return PanelDataset(self.y[idx], self.x[idx], tuple(self.ids[i] for i in idx),
                            self.periods, self.x_names, self.design)


@dataclass(frozen=True, eq=False)
class WithinView:
    y_dot: np.ndarray
    x_dot: np.ndarray
    y_bar: np.ndarray
    x_bar: np.ndarray


def demean(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # time axis is 1; one refinement pass removes most of the rounding left in the mean
    T = a.shape[1]
    m = a.sum(axis=1) / T
    d = a - m[:, None]
    r = d.sum(axis=1) / T
    return d - r[:, None], m + r


def within_transform(ds: PanelDataset) -> WithinView:
    y_dot, y_bar = demean(ds.y)
    x_dot, x_bar = demean(ds.x)
    return WithinView(y_dot, x_dot, y_bar, x_bar)


def build_lagged_design(ds: PanelDataset, spec: LagSpec) -> PanelDataset:
    """Fitting design from raw series: row ``t`` pairs ``y_t`` with the lagged columns."""
    L = spec.max_lag
    if L >= ds.T or ds.T - L < 2:
        raise LagTooLarge(f"max lag {L} leaves {ds.T - L} usable periods out of {ds.T}")
    T_eff = ds.T - L
    cols = [ds.y[:, L - l:L - l + T_eff] for l in spec.outcome_lags]
    for name, l in spec.regressor_lags:
        try:
            j = ds.x_names.index(name)
        except ValueError:
            raise DataError(f"unknown regressor column {name!r}; have {list(ds.x_names)}") from None
        cols.append(ds.x[:, L - l:L - l + T_eff, j])
    return PanelDataset(ds.y[:, L:], np.stack(cols, axis=2), ds.ids, ds.periods[L:],
                        spec.names, spec)


def half_indices(T: int) -> tuple[range, range]:
    """Period positions of the two half panels; odd ``T`` overlaps in the middle period."""
    if T < 4:
        raise TooShort(f"half-panel split needs T >= 4, got {T}")
    return range(0, math.ceil(T / 2)), range(T // 2, T)


def split_halves(ds: PanelDataset) -> tuple[PanelDataset, PanelDataset]:
    h1, h2 = half_indices(ds.T)
    return ds.select_periods(h1), ds.select_periods(h2)


# CSV ---------------------------------------------------------------------

def _sort_key(tok: str):
    try:
        return (0, float(tok), tok)
    except ValueError:
        return (1, 0.0, tok)


def load_csv(path: str | Path) -> PanelDataset:
    """Read a panel from ``id,t,y[,x1,...,xp]``; rows may come in any order."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if len(header) < 3 or header[:3] != ["id", "t", "y"]:
            raise DataError(f"{path}: header must be id,t,y[,x1,...,xp]; got {header}")
        cells: dict[tuple[str, str], list[float]] = {}
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {row} has {len(row)} fields, expected {len(header)}")
            id_, t = row[0].strip(), row[1].strip()
            if (id_, t) in cells:
                raise DuplicateRow(id_, t)
            vals = []
            for col, v in zip(header[2:], row[2:]):
                try:
                    vals.append(float(v))
                except ValueError:
                    raise NonNumeric(id_, t, col, v) from None
                if not math.isfinite(vals[-1]):
                    raise NonNumeric(id_, t, col, v)
            cells[(id_, t)] = vals
    ids = sorted({k[0] for k in cells}, key=_sort_key)
    periods = sorted({k[1] for k in cells}, key=_sort_key)
    data = np.empty((len(ids), len(periods), len(header) - 2))
    for i, id_ in enumerate(ids):
        for s, t in enumerate(periods):
            try:
                data[i, s] = cells[(id_, t)]
            except KeyError:
                raise MissingCell(id_, t) from None
    return PanelDataset(data[:, :, 0], data[:, :, 1:], tuple(ids), tuple(periods),
                        tuple(header[3:]))


def write_csv(ds: PanelDataset, path) -> None:
    """Write ``ds`` in the format :func:`load_csv` reads; floats use ``repr``.

    ``path`` may also be an open text stream.
    """
    if hasattr(path, "write"):
        _write_rows(ds, path)
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        _write_rows(ds, fh)


def _write_rows(ds: PanelDataset, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["id", "t", "y", *ds.x_names])
    for i, id_ in enumerate(ds.ids):
        for s, t in enumerate(ds.periods):
            w.writerow([id_, t, repr(float(ds.y[i, s])), *(repr(float(v)) for v in ds.x[i, s])])
