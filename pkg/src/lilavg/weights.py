"""Doubling weights and Riemann-Stieltjes integration against d(1/w).

A weight is a continuous non-increasing function w on (0, infinity) with
w(y) = 1 for y > 1, w(y) -> infinity as y -> 0+, and a doubling bound
w(y) <= D * w(2y).  The induced Stieltjes measure d(1/w) on (0, 1] is a
positive measure of total mass 1 - 1/w(1-) <= 1; every weighted average in
this package integrates against it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import BracketError, ToleranceError

# Smallest positive double; bisection brackets never go below this.
_MIN_POS = 2.0 ** -1074


@dataclass(frozen=True)
class Weight:
    """Immutable doubling weight.

    fn maps positive heights (scalar or ndarray) to values >= 1 and must
    already satisfy fn(y) = 1 for y > 1.  doubling_constant is a declared
    upper bound for sup w(y)/w(2y).
    """

    fn: Callable[[np.ndarray], np.ndarray]
    doubling_constant: float
    label: str
    unbounded: bool = True

    def __call__(self, y):
        arr = np.asarray(y, dtype=float)
        if np.any(arr <= 0.0) or np.any(~np.isfinite(arr)):
            raise ValueError(f"weight {self.label}: argument must be positive and finite")
        with np.errstate(over="ignore", under="ignore"):
            out = np.asarray(self.fn(arr), dtype=float)
        if arr.ndim == 0:
            return float(out)
        return out

    def measure_cdf(self, y):
        """F(y) = 1/w(y), the cumulative function of d(1/w) with F(0+) = 0."""
        arr = np.asarray(y, dtype=float)
        out = np.zeros_like(arr, dtype=float)
        pos = arr > 0.0
        if np.any(arr < 0.0):
            raise ValueError("measure_cdf: argument must be non-negative")
        if np.any(pos):
            with np.errstate(over="ignore", under="ignore", divide="ignore"):
                out = np.where(pos, 1.0 / np.asarray(self.fn(np.maximum(arr, _MIN_POS)), dtype=float), 0.0)
        if arr.ndim == 0:
            return float(out)
        return out


@dataclass(frozen=True)
class ScaleSequence:
    """Heights s_k with w(s_k) = 2^k and their dyadic ranks alpha_k."""

    s: tuple
    alpha: tuple
    weight: Weight = field(repr=False, default=None)

    def __len__(self) -> int:
        return len(self.s)


def _piecewise(core: Callable[[np.ndarray], np.ndarray]) -> Callable[[np.ndarray], np.ndarray]:
    def fn(y: np.ndarray) -> np.ndarray:
        yc = np.minimum(y, 1.0)
        return np.where(y > 1.0, 1.0, core(yc))

    return fn


def w0_weight() -> Weight:
    """The iterated-log weight log log(e/y) + 1, clamped to 1 above y = 1."""
    # log(e/y) written as 1 - log(y): e/y overflows for subnormal y.
    return Weight(
        fn=_piecewise(lambda y: np.log(1.0 - np.log(y)) + 1.0),
        doubling_constant=2.0,
        label="w0",
    )


def power_weight(beta: float) -> Weight:
    """w(y) = y^(-beta) on (0, 1]; doubling constant is exactly 2^beta."""
    if not (beta > 0.0):
        raise ValueError(f"power weight needs beta > 0, got {beta}")
    return Weight(
        fn=_piecewise(lambda y: y ** (-beta)),
        doubling_constant=2.0 ** beta,
        label=f"pow:{beta:g}",
    )


def logpow_weight(gamma: float) -> Weight:
    """w(y) = (log(e/y))^gamma on (0, 1]; doubling constant (1 + log 2)^gamma."""
    if not (gamma > 0.0):
        raise ValueError(f"logpow weight needs gamma > 0, got {gamma}")
    return Weight(
        fn=_piecewise(lambda y: (1.0 - np.log(y)) ** gamma),
        doubling_constant=(1.0 + math.log(2.0)) ** gamma,
        label=f"logpow:{gamma:g}",
    )


def degenerate_test_weight() -> Weight:
    """Bounded weight 2 - y, for exercising error paths only (not doubling-unbounded)."""
    return Weight(
        fn=_piecewise(lambda y: 2.0 - y),
        doubling_constant=2.0,
        label="degenerate",
        unbounded=False,
    )


def parse_weight_token(token: str) -> Weight:
    """Parse a `family` or `family:param` weight token used in config and CLI."""
    tok = token.strip()
    if tok == "w0":
        return w0_weight()
    if tok == "degenerate":
        return degenerate_test_weight()
    if ":" in tok:
        family, _, param = tok.partition(":")
        try:
            value = float(param)
        except ValueError:
            raise ValueError(f"bad weight token {token!r}: parameter {param!r} is not a number")
        if family == "pow":
            if not (0.0 < value <= 1.0):
                raise ValueError(f"bad weight token {token!r}: pow exponent must be in (0, 1]")
            return power_weight(value)
        if family == "logpow":
            if not (value > 0.0):
                raise ValueError(f"bad weight token {token!r}: logpow exponent must be positive")
            return logpow_weight(value)
        raise ValueError(f"bad weight token {token!r}: unknown family {family!r}")
    raise ValueError(f"bad weight token {token!r}: expected `w0`, `pow:B`, or `logpow:G`")


def eval_weight(w: Weight, y: float) -> float:
    """Evaluate w at a single positive height (exactly 1 for y > 1)."""
    return float(w(float(y)))


def invert_weight(w: Weight, v: float, tol: float = 1e-12) -> float:
    """Solve w(y) = v for y in (0, 1] by bisection in log y.

    Bisection in log space keeps the relative error near tol even when the
    solution is within a few hundred orders of magnitude of the float floor.
    For v = 1 the normalization w(1) = 1 fixes y = 1.
    """
    if not (v >= 1.0):
        raise ValueError(f"invert_weight: target must be >= 1, got {v}")
    if v == 1.0:
        return 1.0
    lo_y = _MIN_POS
    if eval_weight(w, lo_y) < v:
        raise BracketError(
            f"weight {w.label} never reaches {v} above {lo_y:.3g}; "
            "unbounded-weight assumption violated at float64 scale"
        )
    lo, hi = math.log(lo_y), 0.0  # log y bracket: w(e^lo) >= v >= w(e^hi)
    for _ in range(128):
        mid = 0.5 * (lo + hi)
        if eval_weight(w, math.exp(mid)) >= v:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol:
            break
    return math.exp(0.5 * (lo + hi))


def scale_sequence(w: Weight, K: int, tol: float = 1e-12) -> ScaleSequence:
    """Heights s_k with w(s_k) = 2^k for k = 0..K, plus ranks alpha_k.

    alpha_k = -floor(log2 s_k) with a 1e-9 snap so that exactly dyadic
    solutions (power weights) land on the intended integer.  The doubling
    consistency w(2^-alpha_k) / 2^k in [1/D^2, D^2] is verified here.
    """
    if K < 0:
        raise ValueError("scale_sequence: K must be >= 0")
    s = [1.0]
    alpha = [0]
    D = w.doubling_constant
    for k in range(1, K + 1):
        sk = invert_weight(w, 2.0 ** k, tol)
        s.append(sk)
        ak = -math.floor(math.log2(sk) + 1e-9)
        alpha.append(int(ak))
        ratio = eval_weight(w, 2.0 ** -ak) / 2.0 ** k
        if not (1.0 / D ** 2 - 1e-9 <= ratio <= D ** 2 + 1e-9):
            raise ValueError(
                f"scale_sequence: doubling consistency failed at k={k}: "
                f"w(2^-{ak})/2^{k} = {ratio:.6g} outside [1/D^2, D^2]"
            )
    if any(s[i + 1] >= s[i] for i in range(K)):
        raise ValueError("scale_sequence: s_k is not strictly decreasing")
    return ScaleSequence(s=tuple(s), alpha=tuple(alpha), weight=w)


def _eval_integrand(g: Callable, ys: np.ndarray) -> np.ndarray:
    """Evaluate g on an array of heights, tolerating scalar-only integrands."""
    try:
        vals = np.asarray(g(ys), dtype=float)
        if vals.shape == ys.shape:
            return vals
    except (TypeError, ValueError):
        pass
    return np.array([float(g(float(y))) for y in ys])


def _mass_quantiles(w: Weight, masses: np.ndarray) -> np.ndarray:
    """Heights with 1/w(y) = m for each mass, by vectorized bisection in log y.

    Masses below 1/w at the float floor clamp to height 0: the position
    collapses but the cell mass stays exact, which is the correct treatment
    of measure living below float resolution.
    """
    floor_mass = w.measure_cdf(_MIN_POS)
    reachable = masses >= floor_mass
    lo = np.full(masses.shape, math.log(_MIN_POS))
    hi = np.zeros(masses.shape)
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        below = w.measure_cdf(np.exp(mid)) < masses
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return np.where(reachable, np.exp(0.5 * (lo + hi)), 0.0)


def _mass_edges(w: Weight, a: float, b: float, n: int) -> np.ndarray:
    """Partition [a, b] into n cells of equal d(1/w) mass."""
    Fa = w.measure_cdf(a)
    Fb = w.measure_cdf(b)
    masses = Fa + (Fb - Fa) * np.arange(1, n) / n
    edges = np.empty(n + 1)
    edges[0] = a
    edges[-1] = b
    edges[1:-1] = _mass_quantiles(w, masses)
    return edges


def stieltjes_integrate(
    g: Callable,
    w: Weight,
    a: float,
    b: float,
    tol: float = 1e-9,
    *,
    partition: str = "uniform",
    n0: int = 16,
    max_doublings: int = 18,
) -> float:
    """Integrate g against d(1/w) over [a, b] by partition refinement.

    Midpoint values of g are paired with exact measure increments
    F(y_{i+1}) - F(y_i), F = 1/w; the partition is doubled until two
    successive estimates agree to tol * (1 + |estimate|).  partition
    "uniform" spaces edges evenly in y; "mass" spaces them evenly in
    F-measure, which keeps the refinement stable when the integrand blows
    up like w near 0 (then a = 0 is allowed and the sub-float mass near the
    origin is accounted exactly).
    """
    if partition not in ("uniform", "mass"):
        raise ValueError(f"unknown partition {partition!r}")
    if partition == "uniform" and not (0.0 < a <= b <= 1.0):
        raise ValueError(f"stieltjes_integrate: need 0 < a <= b <= 1, got [{a}, {b}]")
    if partition == "mass" and not (0.0 <= a <= b <= 1.0):
        raise ValueError(f"stieltjes_integrate: need 0 <= a <= b <= 1, got [{a}, {b}]")
    if a == b:
        return 0.0

    n = n0
    prev = None
    agreed = 0
    mass_edges = None
    for _ in range(max_doublings + 1):
        if partition == "uniform":
            edges = np.linspace(a, b, n + 1)
        else:
            if mass_edges is None:
                mass_edges = _mass_edges(w, a, b, n)
            else:
                # equal masses nest under doubling: only the odd quantiles
                # are new, interleave them with the previous edges
                Fa, Fb = w.measure_cdf(a), w.measure_cdf(b)
                odd = Fa + (Fb - Fa) * np.arange(1, n, 2) / n
                new = np.empty(n + 1)
                new[0::2] = mass_edges
                new[1::2] = _mass_quantiles(w, odd)
                mass_edges = new
            edges = mass_edges
        mids = 0.5 * (edges[:-1] + edges[1:])
        # Positions that collapsed below float resolution evaluate at the
        # smallest normal height; their mass is tiny-per-cell and exact.
        mids = np.maximum(mids, 2.2e-308)
        F = w.measure_cdf(edges)
        inc = np.diff(F)
        est = float(np.dot(_eval_integrand(g, mids), inc))
        if prev is not None and abs(est - prev) < tol * (1.0 + abs(est)):
            agreed += 1
            if agreed >= 2:
                return est
        else:
            agreed = 0
        prev = est
        n *= 2
    raise ToleranceError(
        f"stieltjes_integrate did not converge on [{a}, {b}] with {w.label} "
        f"after n={n // 2} cells",
        partial=prev,
    )


def multiplier_symbol(w: Weight, tau: float, tol: float = 1e-9) -> float:
    """Fourier multiplier m(tau) = integral over (0,1] of e^(-2 pi y |tau|) d(1/w).

    m(0) = 1 is the total mass of d(1/w) on (0, 1]; m is non-increasing in
    |tau| and comparable to 1/w(1/|tau|) by doubling.  Uses the mass
    partition so that spectral content below float resolution (where the
    kernel is exactly 1) is integrated without loss.
    """
    t = abs(float(tau))
    if t == 0.0:
        return float(w.measure_cdf(1.0) - 0.0)
    c = 2.0 * math.pi * t

    def g(y):
        return np.exp(-np.minimum(c * y, 745.0))

    # Seed the partition so the kernel transition at y ~ 1/(2 pi tau) is
    # covered by several mass cells from the first refinement on; otherwise
    # coarse partitions see only zeros and agree spuriously.
    n0 = int(min(2 ** 15, max(16.0, 8.0 * eval_weight(w, min(1.0, 1.0 / c)))))
    return stieltjes_integrate(g, w, 0.0, 1.0, tol, partition="mass", n0=n0)


def verify_doubling(w: Weight, grid: Sequence[float]) -> float:
    """Largest w(y)/w(2y) over the grid; must not exceed the declared constant."""
    ys = np.asarray(list(grid), dtype=float)
    if ys.size == 0:
        raise ValueError("verify_doubling: empty grid")
    if np.any(ys <= 0.0) or np.any(ys > 2.0):
        raise ValueError("verify_doubling: grid must lie in (0, 2]")
    ratios = w(ys) / w(2.0 * ys)
    return float(np.max(ratios))


def weight_invariants_report(w: Weight, m_max: int = 40) -> dict:
    """Run the structural weight checks on a log grid; returns measured values."""
    ys = np.logspace(-12, 0, 241, base=2.0)
    vals = w(ys)
    report = {
        "label": w.label,
        "non_increasing": bool(np.all(np.diff(vals) <= 1e-12)),
        "unit_above_one": w(1.5) == 1.0 and w(2.0) == 1.0 and w(100.0) == 1.0,
        "doubling_measured": verify_doubling(w, np.logspace(-40, 0.9, 200, base=2.0)),
        "doubling_declared": w.doubling_constant,
    }
    report["doubling_ok"] = report["doubling_measured"] <= w.doubling_constant + 1e-9
    if w.unbounded:
        seq = w(2.0 ** -np.arange(1, m_max + 1, dtype=float))
        report["strictly_growing_toward_0"] = bool(np.all(np.diff(seq) > 0.0))
    else:
        report["strictly_growing_toward_0"] = False
    fine = np.logspace(-10, 0, 4001, base=2.0)
    fvals = w(fine)
    jumps = np.abs(np.diff(fvals)) / fvals[1:]
    report["max_relative_jump_on_fine_grid"] = float(np.max(jumps))
    report["continuity_ok"] = report["max_relative_jump_on_fine_grid"] < 0.01
    return report
