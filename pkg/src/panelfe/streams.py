"""Counter-based random streams.

Every random quantity in the package is a transform of uniforms read from a
Philox stream whose key is derived from an integer path such as
``(master_seed, cell, replication)``.  Rows of a stream are addressable: row
``r`` of width ``w`` always occupies the same counter range, so a row can be
regenerated on its own and a bulk draw of rows ``[a, b)`` is bit-identical to
drawing each row separately.  That is what makes results independent of how
work is split between processes.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.random import Philox, SeedSequence
from scipy.special import ndtri

_SCALE = 2.0 ** -53


def stream_key(*path: int) -> np.ndarray:
    """Philox key (two uint64 words) for an integer path."""
    flat = [int(p) for p in _flatten(path)]
    if any(p < 0 for p in flat):
        raise ValueError("stream path components must be non-negative")
    return SeedSequence(flat).generate_state(2, dtype=np.uint64)


def _flatten(path):
    for p in path:
        if isinstance(p, (tuple, list)):
            yield from _flatten(p)
        else:
            yield p


def _to_uniform(raw: np.ndarray) -> np.ndarray:
    # open interval (0, 1): safe for log and ndtri
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _SCALE


def _stride(width: int) -> int:
    return -(-width // 4)


def uniform_rows(key: np.ndarray, count: int, width: int, start: int = 0) -> np.ndarray:
    """Rows ``start .. start+count-1`` of the stream, shape ``(count, width)``."""
    stride = _stride(width)
    bg = Philox(key=key)
    if start:
        bg.advance(start * stride)
    raw = bg.random_raw(count * stride * 4).reshape(count, stride * 4)[:, :width]
    return _to_uniform(raw)


def uniform_row(key: np.ndarray, index: int, width: int) -> np.ndarray:
    return uniform_rows(key, 1, width, start=index)[0]


def uniform_rows_at(key: np.ndarray, indices: Sequence[int], width: int) -> np.ndarray:
    return np.stack([uniform_row(key, int(i), width) for i in indices]) if len(indices) else \
        np.empty((0, width))


class UniformStream:
    """Sequential reader over one stream (used for very long simulations)."""

    def __init__(self, key: np.ndarray):
        self._bg = Philox(key=key)

    def take(self, size: int) -> np.ndarray:
        return _to_uniform(self._bg.random_raw(size))


# transforms --------------------------------------------------------------

def normal(u: np.ndarray) -> np.ndarray:
    return ndtri(u)


def student_t10(u: np.ndarray) -> np.ndarray:
    """t(10) draws from uniforms laid out along the last axis in groups of 6.

    The first uniform gives a standard normal by inversion, the remaining five
    give a chi-square(10) as ``-2 log(u1 u2 u3 u4 u5)``.
    """
    z = ndtri(u[..., 0])
    chi2 = -2.0 * np.log(u[..., 1] * u[..., 2] * u[..., 3] * u[..., 4] * u[..., 5])
    return z / np.sqrt(chi2 / 10.0)


def uniform(u: np.ndarray, lo: float, hi: float) -> np.ndarray:
    return lo + (hi - lo) * u
