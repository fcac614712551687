"""Small shared helpers: float formatting, trend checks, deterministic hashing."""

from __future__ import annotations

import hashlib
from typing import Iterable, Sequence

import numpy as np


def fmt17(x: float) -> str:
    """Format a float with 17 significant digits (round-trips exactly)."""
    return f"{float(x):.17g}"


def trend_free(values: Sequence[float], slack: float = 1.2) -> bool:
    """True when no level exceeds slack times its running or global median.

    Each value is compared against the larger of the median over levels up
    to it and the median over all levels.  A genuine growth trend puts the
    late levels above both medians and is flagged; a bounded plateau with
    burn-in or mid-range fluctuation passes.
    """
    vals = np.asarray([float(v) for v in values])
    if vals.size == 0:
        return True
    med_all = float(np.median(vals))
    for k in range(vals.size):
        ref = max(float(np.median(vals[: k + 1])), med_all)
        if vals[k] > slack * ref + 1e-300:
            return False
    return True


# kept as an alias: some call sites read better with the original name
running_median_trend_ok = trend_free


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def as_float_array(xs: Iterable[float]) -> np.ndarray:
    arr = np.asarray(list(xs) if not isinstance(xs, np.ndarray) else xs, dtype=float)
    return arr
