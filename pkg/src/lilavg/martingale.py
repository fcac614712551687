"""Dyadic tree on (0, 1], sup-normalized Haar analysis, martingale tables.

The Haar wavelet here is psi = chi_[0,1] - 2 chi_[0,1/2] (values -1 on the
left half, +1 on the right) and coefficients use the sup normalization
b_I = <f, psi_I> / |I|.  Synthesis through rank k adds every coefficient of
rank <= k and is therefore piecewise constant on rank k+1 cells.

Martingale tables store piecewise-constant levels on the dyadic cells of
their filtration ranks.  The canonical dyadic table of an expansion puts
level k at filtration rank k+1 (level k carries Haar ranks <= k); with that
convention the quadratic function evaluates to the mean square of level 0
plus the chain sum of squared coefficients of ranks 1..k, i.e. exactly
L^2 + sum of b_I^2 over I containing t with |I| >= 2^-k.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .harmonic import GraphDomain
from .util import fmt17
from .weights import ScaleSequence

_EPS_RANK = 1e-12


@dataclass(frozen=True, order=True)
class DyadicInterval:
    """Half-open dyadic interval (index 2^-rank, (index+1) 2^-rank]."""

    rank: int
    index: int

    def __post_init__(self):
        if self.rank < 0:
            raise ValueError("rank must be >= 0")
        if not (0 <= self.index < (1 << self.rank)):
            raise ValueError(f"index {self.index} out of range at rank {self.rank}")

    @property
    def length(self) -> float:
        return 2.0 ** -self.rank

    @property
    def lo(self) -> float:
        return self.index * self.length

    @property
    def hi(self) -> float:
        return (self.index + 1) * self.length

    @property
    def center(self) -> float:
        return (2 * self.index + 1) * 2.0 ** -(self.rank + 1)

    def parent(self) -> "DyadicInterval":
        if self.rank == 0:
            raise ValueError("the root has no parent")
        return DyadicInterval(self.rank - 1, self.index >> 1)

    def children(self) -> tuple:
        return (DyadicInterval(self.rank + 1, 2 * self.index),
                DyadicInterval(self.rank + 1, 2 * self.index + 1))

    def contains(self, t: float) -> bool:
        return self.lo < t <= self.hi

    @staticmethod
    def from_point(t: float, rank: int) -> "DyadicInterval":
        if not (0.0 < t <= 1.0):
            raise ValueError(f"point {t} outside (0, 1]")
        idx = int(math.ceil(t * (1 << rank))) - 1
        idx = min(max(idx, 0), (1 << rank) - 1)
        return DyadicInterval(rank, idx)


def haar_value(interval: DyadicInterval, t) -> np.ndarray:
    """psi_I(t): -1 on the left half, +1 on the right half, 0 outside."""
    arr = np.asarray(t, dtype=float)
    mid = 0.5 * (interval.lo + interval.hi)
    out = np.where((arr > interval.lo) & (arr <= mid), -1.0,
                   np.where((arr > mid) & (arr <= interval.hi), 1.0, 0.0))
    if arr.ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class HaarExpansion:
    """Mean L plus sup-normalized coefficients per dyadic interval."""

    mean: float
    coeffs: dict          # DyadicInterval -> b_I
    max_rank: int

    def coefficient(self, interval: DyadicInterval) -> float:
        return self.coeffs.get(interval, 0.0)

    def chain(self, t: float, k: int) -> list:
        return [DyadicInterval.from_point(t, r) for r in range(min(k, self.max_rank) + 1)]


def cell_means_to_expansion(means: np.ndarray, max_rank: int) -> HaarExpansion:
    """Exact bottom-up Haar analysis of cell means at rank max_rank + 1."""
    if means.shape != (1 << (max_rank + 1),):
        raise ValueError("means must be at resolution max_rank + 1")
    coeffs = {}
    level = means.astype(float)
    for rank in range(max_rank, -1, -1):
        left = level[0::2]
        right = level[1::2]
        b = 0.5 * (right - left)
        level = 0.5 * (left + right)
        for i, bi in enumerate(b):
            if bi != 0.0:
                coeffs[DyadicInterval(rank, i)] = float(bi)
    return HaarExpansion(mean=float(level[0]), coeffs=coeffs, max_rank=max_rank)


def haar_analyze(f: Callable, max_rank: int, tol: float = 1e-10,
                 nodes_per_cell: int = 16) -> HaarExpansion:
    """Haar coefficients of f on (0, 1] down to max_rank.

    Cell means at rank max_rank + 1 are computed by fixed Gauss-Legendre
    quadrature per cell (nodes_per_cell controls accuracy), then folded
    bottom-up: b_I = (mean of right child - mean of left child) / 2.
    """
    n = 1 << (max_rank + 1)
    gx, gw = np.polynomial.legendre.leggauss(nodes_per_cell)
    gx = 0.5 * (gx + 1.0)   # nodes in (0, 1)
    gw = 0.5 * gw
    edges = np.arange(n) / n
    pts = (edges[:, None] + gx[None, :] / n).ravel()
    try:
        vals = np.asarray(f(pts), dtype=float)
        if vals.shape != pts.shape:
            raise TypeError
    except (TypeError, ValueError):
        vals = np.array([float(f(float(p))) for p in pts])
    means = vals.reshape(n, nodes_per_cell) @ (gw / gw.sum())
    return cell_means_to_expansion(means, max_rank)


def haar_synthesize(e: HaarExpansion, k: int, t: float) -> float:
    """L plus all coefficients of rank <= k along the chain of t."""
    if k > e.max_rank:
        raise ValueError(f"rank {k} exceeds expansion depth {e.max_rank}")
    if not (0.0 < t <= 1.0):
        raise ValueError(f"point {t} outside (0, 1]")
    total = e.mean
    if k < 0:
        return total
    for iv in e.chain(t, k):
        b = e.coefficient(iv)
        if b != 0.0:
            total += b * haar_value(iv, t)
    return total


def expansion_l2_identity(e: HaarExpansion, k: int) -> tuple:
    """Both sides of the Parseval identity at rank k.

    Returns (integral of the synthesis squared, L^2 + sum of b^2 |I| over
    ranks <= k).  They agree exactly up to float roundoff.
    """
    if k > e.max_rank:
        raise ValueError(f"rank {k} exceeds expansion depth {e.max_rank}")
    vals = np.full(1, e.mean)
    for rank in range(0, k + 1):
        layer = np.zeros(1 << (rank + 1))
        for i in range(1 << rank):
            b = e.coeffs.get(DyadicInterval(rank, i), 0.0)
            layer[2 * i] = -b
            layer[2 * i + 1] = b
        vals = np.repeat(vals, 2) + layer
    lhs = float(np.mean(vals ** 2))
    rhs = e.mean ** 2 + sum(b * b * iv.length for iv, b in e.coeffs.items() if iv.rank <= k)
    return lhs, rhs


def chain_quadratic(e: HaarExpansion, k: int, t: float) -> float:
    """L^2 plus the chain sum of b_I^2 over I containing t with rank <= k."""
    total = e.mean ** 2
    for iv in e.chain(t, min(k, e.max_rank)):
        total += e.coefficient(iv) ** 2
    return total


@dataclass(frozen=True)
class MartingaleTable:
    """Piecewise-constant levels on the dyadic cells of the filtration ranks.

    levels[k] is an array of length 2^filtration[k]; measure is uniform
    (the only mode implemented).  In exact mode the tower property holds;
    surrogate tables record their per-level conditional-expectation defect.
    """

    filtration: tuple
    levels: tuple           # tuple of ndarrays
    mode: str = "exact"     # exact | surrogate
    defects: tuple = ()

    def __post_init__(self):
        if len(self.filtration) != len(self.levels):
            raise ValueError("one level per filtration rank required")
        if list(self.filtration) != sorted(self.filtration):
            raise ValueError("filtration ranks must be non-decreasing")
        for r, lv in zip(self.filtration, self.levels):
            if len(lv) != (1 << r):
                raise ValueError(f"level at rank {r} must have 2^{r} cells")

    @property
    def depth(self) -> int:
        return len(self.levels)

    def value(self, k: int, t: float) -> float:
        iv = DyadicInterval.from_point(t, self.filtration[k])
        return float(self.levels[k][iv.index])

    def value_on(self, k: int, interval: DyadicInterval) -> float:
        if interval.rank != self.filtration[k]:
            raise ValueError(
                f"interval rank {interval.rank} does not match filtration rank "
                f"{self.filtration[k]} of level {k}")
        return float(self.levels[k][interval.index])


def conditional_expectation(table: MartingaleTable, k: int,
                            interval: DyadicInterval) -> float:
    """Uniform-measure average of level k+1 over a rank-alpha_k interval."""
    if k + 1 >= table.depth:
        raise ValueError("no finer level to average")
    if interval.rank != table.filtration[k]:
        raise ValueError(
            f"interval rank {interval.rank} does not match filtration rank "
            f"{table.filtration[k]}")
    gap = table.filtration[k + 1] - table.filtration[k]
    lo = interval.index << gap
    return float(np.mean(table.levels[k + 1][lo: lo + (1 << gap)]))


def tower_defect(table: MartingaleTable, k: int) -> float:
    """Largest |E[level k+1 | F_k] - level k| over the rank-alpha_k cells."""
    gap = table.filtration[k + 1] - table.filtration[k]
    fine = table.levels[k + 1].reshape(-1, 1 << gap).mean(axis=1)
    return float(np.max(np.abs(fine - table.levels[k])))


def dyadic_table_from_expansion(e: HaarExpansion, depth: int) -> MartingaleTable:
    """Canonical dyadic table: level k = synthesis through Haar rank k."""
    if depth > e.max_rank:
        raise ValueError(f"depth {depth} exceeds expansion rank {e.max_rank}")
    levels = []
    vals = np.full(1, e.mean)
    for rank in range(0, depth + 1):
        layer = np.zeros(1 << (rank + 1))
        for i in range(1 << rank):
            b = e.coeffs.get(DyadicInterval(rank, i), 0.0)
            layer[2 * i] = -b
            layer[2 * i + 1] = b
        vals = np.repeat(vals, 2) + layer
        levels.append(vals.copy())
    return MartingaleTable(filtration=tuple(range(1, depth + 2)),
                           levels=tuple(levels), mode="exact")


def superdyadic_table_from_expansion(e: HaarExpansion,
                                     alphas: Sequence[int]) -> MartingaleTable:
    """Thinned table: level k = synthesis through Haar rank alphas[k]."""
    ranks = [int(a) for a in alphas]
    if ranks != sorted(ranks):
        raise ValueError("alphas must be non-decreasing")
    if ranks and ranks[-1] > e.max_rank:
        raise ValueError("alphas exceed expansion depth")
    full = dyadic_table_from_expansion(e, ranks[-1] if ranks else 0)
    levels = tuple(full.levels[r] for r in ranks)
    return MartingaleTable(filtration=tuple(r + 1 for r in ranks),
                           levels=levels, mode="exact")


def quadratic_function(table: MartingaleTable, k: int, t: float) -> float:
    """Cumulative conditional variance of the first k increments at t.

    The mean square of level 0 (its full uniform average) is included as
    the starting term, then each increment contributes
    E[|level_j - level_{j-1}|^2 | F_{alpha_{j-1}}] evaluated on the
    rank-alpha_{j-1} cell containing t.  For the canonical dyadic table of
    a Haar expansion this reproduces the chain form L^2 + sum of b_I^2
    over I containing t with rank <= k.
    """
    if not (0 <= k < table.depth):
        raise ValueError(f"level {k} outside table depth {table.depth}")
    total = float(np.mean(np.asarray(table.levels[0], dtype=float) ** 2))
    for j in range(1, k + 1):
        gap_fine = table.filtration[j] - table.filtration[j - 1]
        coarse = np.repeat(table.levels[j - 1], 1 << gap_fine)
        sq = (table.levels[j] - coarse) ** 2
        cell = DyadicInterval.from_point(t, table.filtration[j - 1])
        lo = cell.index << gap_fine
        total += float(np.mean(sq[lo: lo + (1 << gap_fine)]))
    return total


def quadratic_function_brute(table: MartingaleTable, k: int, t: float) -> float:
    """Independent evaluation of the same quantity by explicit cell loops."""
    lev0 = table.levels[0]
    total = sum(float(v) ** 2 for v in lev0) / len(lev0)
    for j in range(1, k + 1):
        rj, rp = table.filtration[j], table.filtration[j - 1]
        parent = DyadicInterval.from_point(t, rp)
        acc = 0.0
        count = 0
        for idx in range(parent.index << (rj - rp), (parent.index + 1) << (rj - rp)):
            fine_val = float(table.levels[j][idx])
            coarse_val = float(table.levels[j - 1][idx >> (rj - rp)])
            acc += (fine_val - coarse_val) ** 2
            count += 1
        total += acc / count
    return total


def bloch_to_martingale(H: Callable, dom: GraphDomain, scales: ScaleSequence,
                        A: float | None = None, K: int | None = None) -> MartingaleTable:
    """Surrogate martingale sampled from a Bloch evaluator at dyadic centers.

    Level k is constant on the rank-alpha_k cells with value
    H(x_I, phi(x_I) + A 2^-alpha_k) at the cell center x_I; the measure is
    uniform and the per-level conditional-expectation defect is recorded
    instead of being assumed zero.  A defaults to max(lip_constant, 1) so
    flat domains sample strictly above the boundary.
    """
    if A is None:
        A = max(dom.lip_constant, 1.0)
    if not (A > 0.0):
        raise ValueError("offset multiplier A must be positive")
    n_levels = len(scales.alpha) if K is None else K
    if n_levels > len(scales.alpha):
        raise ValueError(f"K = {n_levels} exceeds scale sequence length {len(scales.alpha)}")
    alphas = [int(a) for a in scales.alpha[:n_levels]]
    levels = []
    for a in alphas:
        n = 1 << a
        centers = (2 * np.arange(n) + 1) * 2.0 ** -(a + 1)
        h = A * 2.0 ** -a
        vals = np.array([float(H(float(c), float(dom.phi(c)) + h)) for c in centers])
        levels.append(vals)
    table = MartingaleTable(filtration=tuple(alphas), levels=tuple(levels),
                            mode="surrogate")
    defects = tuple(tower_defect(table, k) for k in range(len(levels) - 1))
    return MartingaleTable(filtration=table.filtration, levels=table.levels,
                           mode="surrogate", defects=defects)


@dataclass(frozen=True)
class LiBounds:
    """Per-level suprema for the approximation and step inequalities."""

    approx_sup: float
    step_sup: float
    per_level_approx: tuple
    per_level_step: tuple


def li_bounds_check(table: MartingaleTable, I_values: np.ndarray,
                    xs: Sequence[float]) -> LiBounds:
    """Suprema of |level_k - I(., s_k)| and |level_k - level_{k+1}| on a grid.

    I_values[k][j] is the weighted average at scale s_k and boundary point
    xs[j]; the table provides the martingale side.  Trend-freeness across k
    is asserted by the caller.
    """
    I_values = np.asarray(I_values, dtype=float)
    xs = [float(x) for x in xs]
    if I_values.shape != (table.depth, len(xs)):
        raise ValueError(
            f"I_values shape {I_values.shape} does not match "
            f"(levels={table.depth}, points={len(xs)})")
    approx = []
    for k in range(table.depth):
        worst = max(abs(table.value(k, x) - I_values[k, j]) for j, x in enumerate(xs))
        approx.append(worst)
    step = []
    for k in range(table.depth - 1):
        worst = max(abs(table.value(k, x) - table.value(k + 1, x)) for x in xs)
        step.append(worst)
    return LiBounds(approx_sup=max(approx), step_sup=max(step) if step else 0.0,
                    per_level_approx=tuple(approx), per_level_step=tuple(step))


def martingale_lil_statistic(table: MartingaleTable, ts: Sequence[float]) -> tuple:
    """Per-point max over m >= 3 of |level_m(t)| / sqrt(m log log m).

    Returns (per-point array, grid sup).  Requires at least 4 levels so the
    maximum ranges over a non-trivial set.
    """
    if table.depth < 4:
        raise ValueError("need at least 4 levels for the LIL statistic")
    stats = []
    for t in ts:
        best = 0.0
        for m in range(3, table.depth):
            norm = math.sqrt(m * math.log(math.log(m)))
            best = max(best, abs(table.value(m, float(t))) / norm)
        stats.append(best)
    arr = np.asarray(stats)
    return arr, float(np.max(arr))


def table_to_csv(table: MartingaleTable) -> str:
    """Serialize as (rank, index, value) rows under a filtration header."""
    buf = io.StringIO()
    buf.write("# filtration: " + " ".join(str(r) for r in table.filtration) + "\n")
    buf.write("# mode: " + table.mode + "\n")
    buf.write("rank,index,value\n")
    for r, lv in zip(table.filtration, table.levels):
        for i, v in enumerate(lv):
            buf.write(f"{r},{i},{fmt17(v)}\n")
    return buf.getvalue()


def table_from_csv(text: str) -> MartingaleTable:
    lines = [ln for ln in text.strip().split("\n")]
    if not lines or not lines[0].startswith("# filtration:"):
        raise ValueError("missing filtration header")
    ranks = tuple(int(tok) for tok in lines[0].split(":", 1)[1].split())
    mode = "exact"
    body_start = 1
    if lines[1].startswith("# mode:"):
        mode = lines[1].split(":", 1)[1].strip()
        body_start = 2
    if lines[body_start] != "rank,index,value":
        raise ValueError("missing CSV header row")
    levels = {r: np.zeros(1 << r) for r in ranks}
    for ln in lines[body_start + 1:]:
        rtok, itok, vtok = ln.split(",")
        levels[int(rtok)][int(itok)] = float(vtok)
    table = MartingaleTable(filtration=ranks,
                            levels=tuple(levels[r] for r in ranks), mode=mode)
    if mode == "surrogate" and table.depth > 1:
        defects = tuple(tower_defect(table, k) for k in range(table.depth - 1))
        table = MartingaleTable(filtration=ranks, levels=table.levels,
                                mode=mode, defects=defects)
    return table


def expansion_to_csv(e: HaarExpansion) -> str:
    """Serialize mean and coefficients; the mean uses rank -1."""
    buf = io.StringIO()
    buf.write(f"# max_rank: {e.max_rank}\n")
    buf.write("rank,index,value\n")
    buf.write(f"-1,0,{fmt17(e.mean)}\n")
    for iv in sorted(e.coeffs):
        buf.write(f"{iv.rank},{iv.index},{fmt17(e.coeffs[iv])}\n")
    return buf.getvalue()


def expansion_from_csv(text: str) -> HaarExpansion:
    lines = text.strip().split("\n")
    if not lines[0].startswith("# max_rank:"):
        raise ValueError("missing max_rank header")
    max_rank = int(lines[0].split(":", 1)[1])
    if lines[1] != "rank,index,value":
        raise ValueError("missing CSV header row")
    mean = 0.0
    coeffs = {}
    for ln in lines[2:]:
        rtok, itok, vtok = ln.split(",")
        r = int(rtok)
        if r == -1:
            mean = float(vtok)
        else:
            coeffs[DyadicInterval(r, int(itok))] = float(vtok)
    return HaarExpansion(mean=mean, coeffs=coeffs, max_rank=max_rank)
