"""Harmonic test fields on the upper half-plane and Lipschitz graph domains.

Fields are immutable evaluator pairs (value, gradient) tagged by how they
were built.  Everything is one-dimensional in the boundary variable: the
domain is the region above the graph of a Lipschitz phi, and fields on it
are restrictions of half-plane fields.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.integrate import quad
from scipy.optimize import minimize_scalar

from .weights import Weight

FieldKind = str  # poisson | lacunary | box | kernel | constant | averaged | synthetic


@dataclass(frozen=True)
class BoundaryData:
    """Boundary function with compact support and optional Hoelder class."""

    eval: Callable[[float], float]
    support: tuple
    holder_alpha: float | None = None

    def __call__(self, t):
        lo, hi = self.support
        arr = np.asarray(t, dtype=float)
        inside = (arr >= lo) & (arr <= hi)
        vals = np.where(inside, self.eval(np.where(inside, arr, lo)), 0.0)
        if arr.ndim == 0:
            return float(vals)
        return vals

    def holder_seminorm(self, n_pairs: int = 4000, seed: int = 0) -> float:
        """Measured sup of |f(x)-f(y)| / |x-y|^alpha over sampled pairs."""
        if self.holder_alpha is None:
            raise ValueError("boundary data has no declared Hoelder exponent")
        rng = np.random.default_rng(seed)
        lo, hi = self.support
        pad = 0.1 * (hi - lo)
        xs = rng.uniform(lo - pad, hi + pad, n_pairs)
        ys = rng.uniform(lo - pad, hi + pad, n_pairs)
        keep = np.abs(xs - ys) > 1e-12
        xs, ys = xs[keep], ys[keep]
        return float(np.max(np.abs(self(xs) - self(ys)) / np.abs(xs - ys) ** self.holder_alpha))


def boundary_from_samples(ts: Sequence[float], vs: Sequence[float],
                          holder_alpha: float | None = None) -> BoundaryData:
    """Piecewise-linear boundary data; support is the sample range."""
    ts = np.asarray(ts, dtype=float)
    vs = np.asarray(vs, dtype=float)
    if ts.ndim != 1 or ts.shape != vs.shape or ts.size < 2:
        raise ValueError("need two equal-length 1-d sample arrays")
    if np.any(np.diff(ts) <= 0):
        raise ValueError("sample abscissae must be strictly increasing")

    def f(t):
        return np.interp(t, ts, vs, left=0.0, right=0.0)

    return BoundaryData(eval=f, support=(float(ts[0]), float(ts[-1])), holder_alpha=holder_alpha)


def boundary_from_csv(path, holder_alpha: float | None = None) -> BoundaryData:
    """Load two-column (t, f) CSV samples; linear interpolation in between."""
    data = np.genfromtxt(path, delimiter=",", skip_header=1)
    if data.ndim != 2 or data.shape[1] < 2:
        raise ValueError(f"{path}: expected two columns t,f with a header row")
    return boundary_from_samples(data[:, 0], data[:, 1], holder_alpha)


@dataclass(frozen=True)
class HarmonicField:
    """Evaluator u(x, y) with gradient, tagged by construction kind."""

    eval: Callable
    grad: Callable
    kind: FieldKind
    meta: dict = field(default_factory=dict)

    def __call__(self, x, y):
        return self.eval(x, y)

    def laplacian_residual(self, x: float, y: float, h: float) -> float:
        """Five-point discrete Laplacian at an interior point."""
        u = self.eval
        return float(
            (u(x + h, y) + u(x - h, y) + u(x, y + h) + u(x, y - h) - 4.0 * u(x, y)) / h ** 2
        )


@dataclass(frozen=True)
class GraphDomain:
    """Region above the graph of a Lipschitz function phi."""

    phi: Callable[[float], float]
    lip_constant: float
    is_flat: bool = False

    @staticmethod
    def flat() -> "GraphDomain":
        return GraphDomain(phi=lambda x: np.zeros_like(np.asarray(x, dtype=float)) + 0.0,
                           lip_constant=0.0, is_flat=True)

    def contains(self, x: float, y: float) -> bool:
        return y >= float(self.phi(x))

    def dist(self, x: float, y: float, tol: float = 1e-8) -> float:
        """Distance from (x, y) to the graph of phi.

        For flat domains this is y exactly.  Otherwise a coarse scan over
        boundary abscissae in the window |x' - x| <= y - phi(x) (which must
        contain the minimizer) is refined by bounded scalar minimization.
        """
        if self.is_flat:
            return float(y)
        px = float(self.phi(x))
        if y < px:
            raise ValueError(f"point ({x}, {y}) lies below the graph")
        vert = y - px
        if vert == 0.0:
            return 0.0

        def sqdist(xp):
            return (x - xp) ** 2 + (y - float(self.phi(xp))) ** 2

        lo, hi = x - vert, x + vert
        xs = np.linspace(lo, hi, 65)
        vals = np.array([sqdist(xp) for xp in xs])
        i = int(np.argmin(vals))
        blo = xs[max(i - 1, 0)]
        bhi = xs[min(i + 1, len(xs) - 1)]
        res = minimize_scalar(sqdist, bounds=(blo, bhi), method="bounded",
                              options={"xatol": tol})
        return math.sqrt(min(float(res.fun), float(vals[i])))


def _poisson_kernel(s: np.ndarray, y: float) -> np.ndarray:
    return y / (math.pi * (y * y + s * s))


def _poisson_kernel_dx(s: np.ndarray, y: float) -> np.ndarray:
    return -2.0 * y * s / (math.pi * (y * y + s * s) ** 2)


def _poisson_kernel_dy(s: np.ndarray, y: float) -> np.ndarray:
    return (s * s - y * y) / (math.pi * (y * y + s * s) ** 2)


def poisson_extend(f: BoundaryData, tol: float = 1e-8) -> HarmonicField:
    """Harmonic extension of compactly supported boundary data.

    u(x, y) integrates f against the half-plane Poisson kernel over the
    support of f; the quadrature is split at the kernel half-width points
    x - y and x + y so the peak never straddles a panel.  The gradient
    integrates the differentiated kernel.
    """
    lo, hi = f.support

    def _integrate(kernel, x, y):
        pts = [p for p in (x - y, x, x + y) if lo < p < hi]
        val, _ = quad(lambda t: f(t) * kernel(x - t, y), lo, hi,
                      points=pts or None, limit=300, epsabs=1e-14, epsrel=min(tol, 1e-12))
        return val

    def u(x, y):
        if y <= 0:
            raise ValueError("poisson field needs y > 0")
        return _integrate(_poisson_kernel, float(x), float(y))

    def g(x, y):
        if y <= 0:
            raise ValueError("poisson field needs y > 0")
        x, y = float(x), float(y)
        return (_integrate(_poisson_kernel_dx, x, y), _integrate(_poisson_kernel_dy, x, y))

    return HarmonicField(eval=u, grad=g, kind="poisson", meta={"support": (lo, hi)})


def lacunary_series(w: Weight, K: int, phases: Sequence[float] | None = None,
                    seed: int | None = 0) -> HarmonicField:
    """Lacunary field sum of c_k e^(-2^k y) cos(2^k x + theta_k).

    c_0 = 1 and c_k = w(2^-k) - w(2^-k+1) telescope, which keeps the field
    inside the growth class of w with norm of order the doubling constant.
    Phases come from the argument or a seeded generator.
    """
    if K < 1:
        raise ValueError("lacunary_series: K must be >= 1")
    if phases is None:
        phases = np.random.default_rng(seed).uniform(0.0, 2.0 * math.pi, K + 1)
    th = np.asarray(phases, dtype=float)
    if th.shape != (K + 1,):
        raise ValueError(f"phases must have length K+1 = {K + 1}")
    freqs = 2.0 ** np.arange(K + 1)
    coeff = np.empty(K + 1)
    coeff[0] = 1.0
    ks = np.arange(1, K + 1, dtype=float)
    coeff[1:] = w(2.0 ** -ks) - w(2.0 ** -(ks - 1.0))
    meta = {"K": K, "phases": th.copy(), "coeff": coeff.copy(), "weight": w.label}
    if np.any(coeff[1:] == 0.0) and not np.allclose(coeff[1:], coeff[1:][::-1].cumsum()[::-1] * 0):
        meta["truncation_warning"] = bool(np.any(coeff[1:] == 0.0))

    def _damped(y):
        # rows: modes, columns: heights; exp underflow truncates gracefully
        ya = np.atleast_1d(np.asarray(y, dtype=float))
        with np.errstate(over="ignore", under="ignore"):
            return coeff[:, None] * np.exp(-np.minimum(np.outer(freqs, ya), 745.0))

    def u(x, y):
        x = float(x)
        ya = np.asarray(y, dtype=float)
        vals = np.cos(freqs * x + th) @ _damped(ya)
        return float(vals[0]) if ya.ndim == 0 else vals

    def g(x, y):
        x = float(x)
        ya = np.asarray(y, dtype=float)
        d = _damped(ya) * freqs[:, None]
        gx = -(np.sin(freqs * x + th) @ d)
        gy = -(np.cos(freqs * x + th) @ d)
        if ya.ndim == 0:
            return (float(gx[0]), float(gy[0]))
        return (gx, gy)

    return HarmonicField(eval=u, grad=g, kind="lacunary", meta=meta)


def _fd_grad(u: Callable, x: float, y: float) -> tuple:
    h = 1e-6 * max(abs(y), 1e-3)
    return ((u(x + h, y) - u(x - h, y)) / (2.0 * h),
            (u(x, y + h) - u(x, y - h)) / (2.0 * h))


def box_field(f: BoundaryData) -> HarmonicField:
    """Symmetric difference quotient (f(x+y) - f(x-y)) / (2y).

    Distributionally this is f' convolved with the dilated box kernel; for
    Hoelder-alpha data it obeys |u| <= ||f||_alpha * y^(alpha-1).
    """
    if f.holder_alpha is None:
        raise ValueError("box_field needs boundary data with a Hoelder exponent")

    def u(x, y):
        ya = np.asarray(y, dtype=float)
        if np.any(ya <= 0.0):
            raise ValueError("box field needs y > 0")
        x = float(x)
        vals = (f(x + ya) - f(x - ya)) / (2.0 * ya)
        return float(vals) if ya.ndim == 0 else vals

    return HarmonicField(eval=u, grad=lambda x, y: _fd_grad(u, x, y), kind="box")


def kernel_field(f: BoundaryData, Phi: Callable[[float], float],
                 phi_support: tuple, tol: float = 1e-8,
                 points: Sequence[float] | None = None) -> HarmonicField:
    """Convolution field (f * Phi_y)(x) with Phi_y(t) = Phi(t/y)/y.

    Written as the fixed-domain integral of Phi(s) f(x - y s) ds over the
    kernel support, so the quadrature domain never degenerates with y.
    points optionally marks sharp kernel features for the quadrature.
    """
    slo, shi = phi_support
    pts = [p for p in (points or []) if slo < p < shi] or None

    def u(x, y):
        if y <= 0:
            raise ValueError("kernel field needs y > 0")
        x, y = float(x), float(y)
        val, _ = quad(lambda s: Phi(s) * float(f(x - y * s)), slo, shi,
                      points=pts, limit=200, epsabs=1e-13, epsrel=min(tol, 1e-9))
        return val

    return HarmonicField(eval=u, grad=lambda x, y: _fd_grad(u, x, y), kind="kernel")


def constant_field(c: float) -> HarmonicField:
    return HarmonicField(eval=lambda x, y: float(c),
                         grad=lambda x, y: (0.0, 0.0), kind="constant")


def synthetic_field(fn: Callable, grad_fn: Callable | None = None) -> HarmonicField:
    """Wrap an arbitrary (x, y) evaluator; used for negative controls."""
    g = grad_fn if grad_fn is not None else (lambda x, y: _fd_grad(lambda a, b: float(fn(a, b)), x, y))
    return HarmonicField(eval=lambda x, y: float(fn(x, y)), grad=g, kind="synthetic")


def cone_domain(Sigma: Sequence[float], M: float) -> GraphDomain:
    """Union-of-cones graph: phi(x) = min over vertices of |x - x0| / M."""
    pts = np.asarray(list(Sigma), dtype=float)
    if pts.size == 0:
        raise ValueError("cone_domain: vertex set must be non-empty")
    if not (M > 0.0):
        raise ValueError("cone_domain: aperture M must be positive")

    def phi(x):
        arr = np.asarray(x, dtype=float)
        d = np.min(np.abs(arr[..., None] - pts), axis=-1) / M
        if arr.ndim == 0:
            return float(d)
        return d

    return GraphDomain(phi=phi, lip_constant=1.0 / M)


def _check_points(dom: GraphDomain, pts: Iterable[tuple]) -> list:
    out = []
    for x, y in pts:
        x, y = float(x), float(y)
        if y < float(dom.phi(x)):
            raise ValueError(f"grid point ({x}, {y}) lies below the graph")
        out.append((x, y))
    if not out:
        raise ValueError("empty evaluation grid")
    return out


def strip_points(dom: GraphDomain, xs: Sequence[float], thetas: Sequence[float]) -> list:
    """Points (x, phi(x) + theta) over the cartesian grid of xs and thetas."""
    return [(float(x), float(dom.phi(x)) + float(t)) for x in xs for t in thetas]


def growth_norm(u: HarmonicField, dom: GraphDomain, w: Weight,
                pts: Iterable[tuple]) -> float:
    """Grid estimate of the growth norm: max |u| / w(dist to boundary)."""
    best = 0.0
    for x, y in _check_points(dom, pts):
        d = dom.dist(x, y)
        if d <= 0.0:
            continue
        best = max(best, abs(float(u.eval(x, y))) / float(w(d)))
    return best


def bloch_seminorm(u: HarmonicField, dom: GraphDomain, pts: Iterable[tuple]) -> float:
    """Grid estimate of the Bloch seminorm: max dist * |grad u|."""
    best = 0.0
    for x, y in _check_points(dom, pts):
        d = dom.dist(x, y)
        gx, gy = u.grad(x, y)
        best = max(best, d * math.hypot(gx, gy))
    return best


def gradient_bound_check(u: HarmonicField, dom: GraphDomain, w: Weight,
                         xs: Sequence[float], thetas: Sequence[float]) -> float:
    """Max over the strip grid of theta |grad u|(x, phi(x)+theta) / w(theta)."""
    best = 0.0
    for x in xs:
        px = float(dom.phi(x))
        for th in thetas:
            if th <= 0:
                raise ValueError("gradient_bound_check: thetas must be positive")
            gx, gy = u.grad(float(x), px + float(th))
            best = max(best, th * math.hypot(gx, gy) / float(w(th)))
    return best
