"""Shared fixtures: boundary-data corpus and standard fields."""

import math

import numpy as np
import pytest

from lilavg.harmonic import BoundaryData, lacunary_series
from lilavg.weights import power_weight, w0_weight


def _taper(t, flat, end):
    """C^1 plateau: 1 on [-flat, flat], smoothstep down to 0 at +-end."""
    t = np.asarray(t, dtype=float)
    a = np.clip((np.abs(t) - flat) / (end - flat), 0.0, 1.0)
    return 1.0 - a * a * (3.0 - 2.0 * a)


def linear_boundary(alpha=None):
    """f(t) = t near the origin, tapered to 0 at +-8; Lipschitz."""
    return BoundaryData(eval=lambda t: np.asarray(t, dtype=float) * _taper(t, 4.0, 8.0),
                        support=(-8.0, 8.0), holder_alpha=alpha)


def constant_boundary(c=1.0, alpha=None):
    return BoundaryData(eval=lambda t: c * np.ones_like(np.asarray(t, dtype=float)),
                        support=(-8.0, 8.0), holder_alpha=alpha)


def cusp_boundary(alpha):
    """f(t) = |t|^alpha near the origin; exactly Hoelder-alpha at 0."""
    return BoundaryData(
        eval=lambda t: np.abs(np.asarray(t, dtype=float)) ** alpha * _taper(t, 4.0, 8.0),
        support=(-8.0, 8.0), holder_alpha=alpha)


def weierstrass_boundary(alpha, levels=6):
    """Truncated sum of 2^(-j alpha) cos(2^j t); Hoelder-alpha texture."""
    js = np.arange(levels + 1)

    def f(t):
        t = np.asarray(t, dtype=float)
        vals = np.sum(2.0 ** (-js * alpha)[:, None]
                      * np.cos(np.outer(2.0 ** js, np.atleast_1d(t))), axis=0)
        vals = vals.reshape(np.shape(t)) if np.ndim(t) else float(vals[0])
        return vals * _taper(t, 4.0, 8.0)

    return BoundaryData(eval=f, support=(-8.0, 8.0), holder_alpha=alpha)


def hat_boundary(alpha=None):
    return BoundaryData(
        eval=lambda t: np.maximum(0.0, 1.0 - np.abs(np.asarray(t, dtype=float)) / 4.0),
        support=(-8.0, 8.0), holder_alpha=alpha)


def smooth_wave_boundary(alpha=None):
    return BoundaryData(
        eval=lambda t: np.sin(3.0 * np.asarray(t, dtype=float)) * _taper(t, 4.0, 8.0),
        support=(-8.0, 8.0), holder_alpha=alpha)


def lip_corpus(alpha):
    """Five boundary functions declared Hoelder-alpha (all genuinely are)."""
    return [
        linear_boundary(alpha),
        cusp_boundary(alpha),
        weierstrass_boundary(alpha),
        hat_boundary(alpha),
        smooth_wave_boundary(alpha),
    ]


@pytest.fixture(scope="session")
def lacunary_w0():
    return lacunary_series(w0_weight(), 12, seed=7)


@pytest.fixture(scope="session")
def lacunary_pow():
    return lacunary_series(power_weight(0.5), 12, seed=7)
