"""Weighted boundary averages, their Bloch approximant, and LIL ratios.

The central quantity is I(x, delta), the integral of u along the vertical
segment above x against d(1/w).  H shifts the segment to start at the
boundary and integrates from 0, trading the delta-cutoff for a Bloch
function at bounded distance from I.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import quad

from .harmonic import BoundaryData, GraphDomain, HarmonicField, box_field
from .util import fmt17
from .weights import Weight, power_weight, stieltjes_integrate

# Ratio guard: the normalizer sqrt(log w * log log log w) is real and
# positive only when w(delta) exceeds e^e.
RATIO_GUARD = math.exp(math.e)


@dataclass(frozen=True)
class AverageProfile:
    """I(x, delta) along a decreasing delta grid with guarded LIL ratios."""

    x: float
    deltas: tuple
    values: tuple
    ratios: tuple          # nan where the guard fails
    ratio_valid: tuple     # bool per delta

    def max_valid_ratio(self) -> float:
        """Largest |ratio| over guard-valid deltas; 0.0 when none are valid."""
        vals = [abs(r) for r, ok in zip(self.ratios, self.ratio_valid) if ok]
        return max(vals) if vals else 0.0

    def to_csv(self) -> str:
        lines = ["delta,value,ratio,ratio_valid"]
        for d, v, r, ok in zip(self.deltas, self.values, self.ratios, self.ratio_valid):
            rtxt = fmt17(r) if ok else "nan"
            lines.append(f"{fmt17(d)},{fmt17(v)},{rtxt},{int(ok)}")
        return "\n".join(lines) + "\n"


def field_on_heights(u: HarmonicField, x: float, heights: np.ndarray) -> np.ndarray:
    """Evaluate u(x, .) on an array of heights, vectorized when the field allows."""
    try:
        vals = np.asarray(u.eval(x, heights), dtype=float)
        if vals.shape == heights.shape:
            return vals
    except (TypeError, ValueError):
        pass
    return np.array([float(u.eval(x, float(h))) for h in heights])


def _vertical_integrand(u: HarmonicField, x: float, base: float) -> Callable:
    def g(y):
        ya = np.asarray(y, dtype=float)
        if ya.ndim == 0:
            return float(u.eval(x, base + float(ya)))
        return field_on_heights(u, x, base + ya)

    return g


def _segment_average(u: HarmonicField, x: float, base: float, w: Weight,
                     a: float, b: float, tol: float) -> float:
    """Integral of u(x, base + y) d(1/w(y)) over [a, b], split at powers of two.

    Fields in the growth class oscillate at the scale of the height itself,
    so each dyadic octave is refined independently; a single partition of
    [a, b] would need the finest scale everywhere.
    """
    g = _vertical_integrand(u, x, base)
    cuts = []
    k = 1
    while k <= 1080:
        p = 2.0 ** -k
        if p <= a:
            break
        if p < b:
            cuts.append(p)
        k += 1
    edges = [b] + cuts + [a]  # descending
    return sum(stieltjes_integrate(g, w, lo, hi, tol, n0=32)
               for hi, lo in zip(edges, edges[1:]))


def weighted_average_I(u: HarmonicField, dom: GraphDomain, w: Weight,
                       x: float, delta: float, tol: float = 1e-9) -> float:
    """I(x, delta): integral of u(x, phi(x) + y) d(1/w(y)) over [delta, 1]."""
    if not (0.0 < delta <= 1.0):
        raise ValueError(f"weighted_average_I: delta must be in (0, 1], got {delta}")
    if delta == 1.0:
        return 0.0
    px = float(dom.phi(x))
    return _segment_average(u, x, px, w, delta, 1.0, tol)


def bloch_approximant_H(u: HarmonicField, dom: GraphDomain, w: Weight,
                        x: float, t: float, tol: float = 1e-8) -> float:
    """H at height t above the graph: integral of u(x, phi(x)+t+y) d(1/w(y)), y in (0, 1].

    The quadrature partitions (0, 1] uniformly in d(1/w) mass so the
    near-boundary region contributes in proportion to its measure; for
    fields in the growth class of w the cell sums stay bounded and the
    refinement settles.  Fields that grow like w itself make the cell sums
    log-divergent and the engine raises its tolerance error.
    """
    if t < 0.0:
        raise ValueError(f"bloch_approximant_H: t must be >= 0, got {t}")
    px = float(dom.phi(x))
    if not dom.contains(x, px + t):
        raise ValueError(f"({x}, {t}) is not at or above the graph")
    return stieltjes_integrate(_vertical_integrand(u, x, px + t), w, 0.0, 1.0, tol,
                               partition="mass", n0=64, max_doublings=13)


def averaged_field(u: HarmonicField, w: Weight, tol: float = 1e-9,
                   n_cells: int = 512) -> HarmonicField:
    """The approximant as a field: H(x, y) integrates u(x, y + s) d(1/w(s)).

    Uses a fixed mass-uniform partition (resolution n_cells) so the field
    evaluator is fast and deterministic; gradient integrates u's gradient
    over the same cells.
    """
    from .weights import _mass_edges  # shared partition helper

    edges = _mass_edges(w, 0.0, 1.0, n_cells)
    mids = np.maximum(0.5 * (edges[:-1] + edges[1:]), 2.2e-308)
    incs = np.diff(w.measure_cdf(edges))

    def ev(x, y):
        return float(np.dot(field_on_heights(u, x, y + mids), incs))

    def gr(x, y):
        try:
            gx, gy = u.grad(x, y + mids)
            gx = np.asarray(gx, dtype=float)
            gy = np.asarray(gy, dtype=float)
            if gx.shape != mids.shape:
                raise TypeError
        except (TypeError, ValueError):
            gs = [u.grad(x, float(y + s)) for s in mids]
            gx = np.array([g[0] for g in gs])
            gy = np.array([g[1] for g in gs])
        return (float(np.dot(gx, incs)), float(np.dot(gy, incs)))

    return HarmonicField(eval=ev, grad=gr, kind="averaged",
                         meta={"weight": w.label, "n_cells": n_cells})


def approximation_error_scan(u: HarmonicField, dom: GraphDomain, w: Weight,
                             xs: Sequence[float], thetas: Sequence[float],
                             tol: float = 1e-8) -> tuple:
    """Sup of |H(x, theta) - I(x, theta)| per theta level and overall.

    Returns (overall_sup, per_theta_sups); callers assert absence of a
    growth trend as theta decreases.
    """
    per_theta = []
    for th in thetas:
        worst = 0.0
        for x in xs:
            h = bloch_approximant_H(u, dom, w, float(x), float(th), tol)
            i = weighted_average_I(u, dom, w, float(x), float(th), tol)
            worst = max(worst, abs(h - i))
        per_theta.append(worst)
    return (max(per_theta), per_theta)


def theta_epsilon(f: BoundaryData, alpha: float, eps: float, x: float,
                  tol: float = 1e-9) -> float:
    """Symmetric-difference singular average over scales [eps, 1]."""
    if not (0.0 < eps < 0.5):
        raise ValueError(f"theta_epsilon: eps must be in (0, 1/2), got {eps}")
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"theta_epsilon: alpha must be in (0, 1), got {alpha}")

    def integrand(h):
        return (float(f(x + h)) - float(f(x - h))) * h ** (-alpha - 1.0)

    # One adaptive quadrature per dyadic octave: textured data oscillates
    # at fixed boundary scales, so each octave carries a bounded number of
    # periods and the subdivision limit is never starved.
    edges = [1.0]
    k = 1
    while 2.0 ** -k > eps:
        edges.append(2.0 ** -k)
        k += 1
    edges.append(eps)
    total = 0.0
    for hi, lo in zip(edges, edges[1:]):
        val, _ = quad(integrand, lo, hi, limit=300, epsabs=1e-12, epsrel=min(tol, 1e-9))
        total += val
    return total


def theta_identity_residual(f: BoundaryData, alpha: float, eps: float, x: float,
                            tol: float = 1e-9) -> float:
    """Residual of rewriting the singular average as a weighted average.

    ((1-alpha)/2) * Theta_eps(f)(x) equals I(x, eps) for the box field of f
    under the weight h^(alpha-1); the two sides are computed by independent
    quadratures and their difference is returned.
    """
    lhs = 0.5 * (1.0 - alpha) * theta_epsilon(f, alpha, eps, x, tol)
    u = box_field(f)
    w = power_weight(1.0 - alpha)
    rhs = weighted_average_I(u, GraphDomain.flat(), w, x, eps, tol)
    return lhs - rhs


def lil_normalizer(w_delta: float) -> float:
    """sqrt(log w * log log log w); requires w_delta > e^e."""
    lw = math.log(w_delta)
    return math.sqrt(lw * math.log(math.log(lw)))


def lil_ratio_profile(u: HarmonicField, dom: GraphDomain, w: Weight, x: float,
                      deltas: Sequence[float], tol: float = 1e-9) -> AverageProfile:
    """Profile of I(x, delta) with LIL ratios where the triple log is defined.

    The values are accumulated segment by segment between consecutive
    deltas (additivity of the Stieltjes integral), which keeps each
    quadrature resolved at its own scale.
    """
    ds = [float(d) for d in deltas]
    if any(not (0.0 < d <= 1.0) for d in ds):
        raise ValueError("lil_ratio_profile: deltas must lie in (0, 1]")
    if any(b >= a for a, b in zip(ds, ds[1:])):
        raise ValueError("lil_ratio_profile: deltas must be strictly decreasing")
    px = float(dom.phi(x))

    values = []
    acc = 0.0
    prev = 1.0
    for d in ds:
        if d < prev:
            acc += _segment_average(u, x, px, w, d, prev, tol)
        prev = d
        values.append(acc)

    ratios = []
    valid = []
    for d, v in zip(ds, values):
        wd = float(w(d))
        if wd > RATIO_GUARD:
            ratios.append(v / lil_normalizer(wd))
            valid.append(True)
        else:
            ratios.append(float("nan"))
            valid.append(False)
    return AverageProfile(x=float(x), deltas=tuple(ds), values=tuple(values),
                          ratios=tuple(ratios), ratio_valid=tuple(valid))
