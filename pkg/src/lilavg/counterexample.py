"""Stopping-time wavelet series and its Poisson smoothing.

A unit-sup mother wavelet is added along the dyadic tree every `a` ranks;
within generation j, additions stop on any interval where the running sum
has exceeded j.  The resulting series keeps unit-size increments and a
weight-controlled envelope while its level sets stay large, and its
Poisson extension is the Bloch-class growth counterexample.

Interval bookkeeping is index-based (rank, integer index), never absolute
positions: indices are exact Python integers, so the lazy construction
works at ranks far beyond float resolution.  All in-cell evaluation uses
local coordinates derived from index arithmetic.
"""

from __future__ import annotations

import io
import math
import random
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConstructionError, PrecisionError
from .util import fmt17
from .weights import Weight, w0_weight

_POLY_POW = 11  # smoothness order of the mother wavelet at its endpoints


@dataclass(frozen=True)
class MotherWavelet:
    """Polynomial bump c (t(1-t))^11 (1-2t) on [0, 1], sup-normalized.

    Antisymmetry about 1/2 makes the mean vanish exactly; the primitive
    c (t - t^2)^12 / 12 is closed-form, so integrals over subintervals are
    exact.  deriv_sup and haar_pairing are measured constants.
    """

    norm_c: float
    sup_norm: float
    deriv_sup: float
    haar_pairing: float

    def eval(self, t):
        arr = np.asarray(t, dtype=float)
        inside = (arr >= 0.0) & (arr <= 1.0)
        tc = np.where(inside, arr, 0.0)
        vals = np.where(inside, self.norm_c * (tc * (1.0 - tc)) ** _POLY_POW * (1.0 - 2.0 * tc), 0.0)
        if arr.ndim == 0:
            return float(vals)
        return vals

    def derivative(self, t):
        arr = np.asarray(t, dtype=float)
        inside = (arr >= 0.0) & (arr <= 1.0)
        tc = np.where(inside, arr, 0.0)
        q = tc * (1.0 - tc)
        vals = np.where(inside,
                        self.norm_c * q ** (_POLY_POW - 1)
                        * (_POLY_POW * (1.0 - 2.0 * tc) ** 2 - 2.0 * q), 0.0)
        if arr.ndim == 0:
            return float(vals)
        return vals

    def primitive(self, t):
        """Integral of the wavelet from 0 to t (clamped to [0, 1])."""
        arr = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
        vals = self.norm_c * (arr * (1.0 - arr)) ** (_POLY_POW + 1) / (_POLY_POW + 1)
        if np.ndim(t) == 0:
            return float(vals)
        return vals

    # scalar fast paths: the lazy construction evaluates these millions of
    # times on single points, where ndarray dispatch dominates the cost
    def eval_scalar(self, t: float) -> float:
        if t <= 0.0 or t >= 1.0:
            return 0.0
        q = t * (1.0 - t)
        return self.norm_c * q ** _POLY_POW * (1.0 - 2.0 * t)

    def primitive_scalar(self, t: float) -> float:
        if t <= 0.0:
            return 0.0
        if t >= 1.0:
            return 0.0
        q = t * (1.0 - t)
        return self.norm_c * q ** (_POLY_POW + 1) / (_POLY_POW + 1)


def make_mother_wavelet() -> MotherWavelet:
    """Build the wavelet and measure its constants by dense grid + refinement."""
    ts = np.linspace(0.0, 1.0, 200001)
    raw = (ts * (1.0 - ts)) ** _POLY_POW * (1.0 - 2.0 * ts)

    def refine(fn, t0, half=1e-5, rounds=60):
        lo, hi = t0 - half, t0 + half
        for _ in range(rounds):
            third = (hi - lo) / 3.0
            a, b = lo + third, hi - third
            if abs(fn(a)) < abs(fn(b)):
                lo = a
            else:
                hi = b
        return abs(fn(0.5 * (lo + hi)))

    t_peak = float(ts[np.argmax(np.abs(raw))])
    peak = refine(lambda t: (t * (1.0 - t)) ** _POLY_POW * (1.0 - 2.0 * t), t_peak)
    c = 1.0 / peak
    w = MotherWavelet(norm_c=c, sup_norm=1.0, deriv_sup=0.0, haar_pairing=0.0)
    dvals = np.abs(w.derivative(ts))
    t_dpeak = float(ts[np.argmax(dvals)])
    dsup = refine(w.derivative, t_dpeak, half=1e-5)
    # <phi, psi> = -2 * primitive(1/2), from the closed-form primitive
    pairing = -2.0 * w.primitive(0.5)
    return replace(w, deriv_sup=float(dsup), haar_pairing=float(pairing))


@dataclass(frozen=True)
class Overrides:
    """Desk-scale relaxations; every active flag is recorded in the params."""

    relax_bracketing: bool = False
    relax_j0: bool = False
    force_a: int | None = None
    force_betas: tuple | None = None
    stopping_enabled: bool = True
    depth_budget: int = 600

    def any_active(self) -> bool:
        return (self.relax_bracketing or self.relax_j0 or self.force_a is not None
                or self.force_betas is not None or not self.stopping_enabled)


@dataclass(frozen=True)
class ConstructionParams:
    """Thinning step a, generation depths beta_j, and the stopping rule."""

    a: int
    j0: int
    betas: tuple            # betas[j-1] = beta_j; beta_1 = 0
    weight: Weight
    sup_rule: str = "center"        # center | grid:N
    overrides: Overrides = field(default_factory=Overrides)
    relaxations: tuple = ()

    def beta(self, j: int) -> int:
        if not (1 <= j <= len(self.betas)):
            raise ValueError(f"generation index {j} outside 1..{len(self.betas)}")
        return self.betas[j - 1]

    @property
    def generations(self) -> int:
        return len(self.betas)

    @property
    def depth(self) -> int:
        return self.betas[-1]

    def rule_offsets(self) -> np.ndarray:
        if self.sup_rule == "center":
            return np.array([0.5])
        if self.sup_rule.startswith("grid:"):
            n = int(self.sup_rule.split(":", 1)[1])
            if n < 1:
                raise ValueError(f"bad sup rule {self.sup_rule!r}")
            return (np.arange(n) + 0.5) / n
        raise ValueError(f"unknown sup rule {self.sup_rule!r}")

    def validate(self, phi: MotherWavelet) -> None:
        ov = self.overrides
        if self.betas[0] != 0:
            raise ConstructionError("beta_1 must be 0")
        if any(b >= c for b, c in zip(self.betas, self.betas[1:])):
            raise ConstructionError("betas must be strictly increasing")
        if any(b % self.a for b in self.betas):
            raise ConstructionError("every beta_j must be divisible by a")
        if ov.force_a is None:
            if 2.0 ** (1 - self.a) * phi.deriv_sup > 0.25 * abs(phi.haar_pairing) + 1e-12:
                raise ConstructionError("thinning step a violates the derivative condition")
        if not ov.relax_bracketing:
            for j in range(2, self.generations + 1):
                wv = float(self.weight(2.0 ** -self.beta(j)))
                if not (j - 1 - 1e-9 <= wv <= j + 1e-9):
                    raise ConstructionError(
                        f"weight bracketing fails at j={j}: w(2^-{self.beta(j)}) = {wv:.4g}")
        if not ov.relax_j0:
            for j in range(max(2, self.j0), self.generations + 1):
                gap = self.beta(j) - self.beta(j - 1)
                if (gap / self.a - 1.0) * phi.haar_pairing ** 2 < 4.0 * j * j - 1e-9:
                    raise ConstructionError(f"lacunarity condition fails at j={j}")


def choose_params(phi: MotherWavelet, w: Weight, j_max: int,
                  overrides: Overrides | None = None,
                  sup_rule: str = "center") -> ConstructionParams:
    """Select a, j0, and the beta ladder for j_max generations.

    a is the smallest step with 2^(1-a) ||phi'|| <= |<phi,psi>| / 4 and
    j0 = ceil(4 ||phi'|| + 4).  Each beta_j is the smallest multiple of a
    above beta_{j-1} that brackets the weight (j-1 <= w(2^-beta_j) <= j)
    and, from j0 on, satisfies the lacunarity condition
    ((beta_j - beta_{j-1})/a - 1) <phi,psi>^2 >= 4 j^2.  Violated
    constraints either raise or, under the matching override, are recorded.
    """
    if j_max < 2:
        raise ValueError("j_max must be >= 2")
    ov = overrides or Overrides()
    relaxations = []
    if ov.force_a is not None:
        a = int(ov.force_a)
        if 2.0 ** (1 - a) * phi.deriv_sup > 0.25 * abs(phi.haar_pairing):
            relaxations.append(f"a={a} overrides the derivative condition")
    else:
        a = 1
        while 2.0 ** (1 - a) * phi.deriv_sup > 0.25 * abs(phi.haar_pairing):
            a += 1
    j0 = math.ceil(4.0 * phi.deriv_sup + 4.0)
    pairing_sq = phi.haar_pairing ** 2

    if ov.force_betas is not None:
        betas = tuple(int(b) for b in ov.force_betas)
        relaxations.append("betas forced")
    else:
        betas = [0]
        for j in range(2, j_max + 1):
            need_lac = j >= j0 and not ov.relax_j0
            min_gap = a * (math.ceil(4.0 * j * j / pairing_sq) + 1) if need_lac else a
            m = betas[-1] + max(a, min_gap)
            m = a * math.ceil(m / a)
            if m > ov.depth_budget:
                raise ConstructionError(
                    f"resource bound: beta_{j} = {m} exceeds the depth budget "
                    f"{ov.depth_budget}; the construction is not reachable at desk scale")
            if not ov.relax_bracketing:
                # push m up until the weight bracket [j-1, j] is entered
                while float(w(2.0 ** -m)) < j - 1 and m <= ov.depth_budget:
                    m += a
                if m > ov.depth_budget:
                    raise ConstructionError(
                        f"resource bound: weight bracketing at j={j} needs depth > "
                        f"{ov.depth_budget}")
                if float(w(2.0 ** -m)) > j + 1e-9:
                    raise ConstructionError(
                        f"weight bracketing at j={j}: no multiple of a={a} lands in "
                        f"[{j - 1}, {j}] above beta_{j - 1}={betas[-1]}")
            else:
                if float(w(2.0 ** -m)) < j - 1 or float(w(2.0 ** -m)) > j:
                    relaxations.append(f"bracketing relaxed at j={j} (beta={m})")
            betas.append(m)
        betas = tuple(betas)
    if ov.relax_j0 and len(betas) >= j0:
        relaxations.append("j0 gating relaxed")
    if not ov.stopping_enabled:
        relaxations.append("stopping disabled (negative control)")
    params = ConstructionParams(a=a, j0=j0, betas=betas, weight=w, sup_rule=sup_rule,
                                overrides=ov, relaxations=tuple(relaxations))
    if betas[-1] > ov.depth_budget:
        raise ConstructionError(
            f"resource bound: beta ladder reaches {betas[-1]} > budget {ov.depth_budget}")
    params.validate(phi)
    return params


class StoppingConstruction:
    """Lazy, memoized state of the double-induction series.

    Per check rank (0 and every multiple of a up to the configured depth)
    and per interval index, the memo stores the added coefficient, the
    stopped flag after the rank's check, and the generation in effect.
    Chains are resolved root-downward, so recomputing any entry from its
    ancestors reproduces the stored value.
    """

    def __init__(self, phi: MotherWavelet, params: ConstructionParams):
        self.phi = phi
        self.params = params
        self.memo: dict = {}
        self.frozen = False
        self._offsets = params.rule_offsets()
        self._integral_cache: dict = {}

    @property
    def depth(self) -> int:
        return self.params.depth

    # -- chain resolution -------------------------------------------------

    def _check_ranks(self, upto: int) -> list:
        ranks = [0]
        r = self.params.a
        while r <= upto:
            ranks.append(r)
            r += self.params.a
        return ranks

    def _phi_on_offsets(self, rank: int, index: int, active: list, us: np.ndarray) -> np.ndarray:
        """Values of the partial sum on in-cell offsets of (rank, index)."""
        if len(us) == 1:
            return np.array([self._phi_at_offset(rank, index, active, float(us[0]))])
        out = np.zeros_like(us)
        for r in active:
            gap = rank - r
            if gap == 0:
                rel = us
            else:
                denom = 1 << gap
                frac = index & (denom - 1)
                rel = (frac / denom) + us * (2.0 ** -gap)
            out += self.phi.eval(rel)
        return out

    def _phi_at_offset(self, rank: int, index: int, active: list, u: float) -> float:
        total = 0.0
        ev = self.phi.eval_scalar
        for r in active:
            gap = rank - r
            if gap == 0:
                total += ev(u)
            else:
                denom = 1 << gap
                total += ev((index & (denom - 1)) / denom + u * 2.0 ** -gap)
        return total

    def _exceeds(self, rank: int, index: int, active: list, threshold: float) -> bool:
        vals = self._phi_on_offsets(rank, index, active, self._offsets)
        return bool(np.max(np.abs(vals)) > threshold)

    def resolve_chain(self, rank: int, index: int) -> tuple:
        """Active wavelet ranks along the ancestor chain through `rank`.

        Returns (active_ranks, stopped, generation) where stopped is the
        state after the last check at or below `rank`.
        """
        if rank > self.depth:
            raise ValueError(f"rank {rank} beyond configured depth {self.depth}")
        p = self.params
        active: list = []
        stopped = False
        j = 1
        for r in self._check_ranks(rank):
            anc = index >> (rank - r)
            key = (r, anc)
            hit = self.memo.get(key)
            if hit is not None:
                c, stopped, j = hit
                if c:
                    active.append(r)
                continue
            if self.frozen:
                raise RuntimeError("frozen construction queried beyond its memo")
            if r == 0:
                c = 1
                active.append(0)
                if p.overrides.stopping_enabled:
                    stopped = self._exceeds(0, 0, active, 1.0)
                j = 1
            else:
                c = 0 if stopped else 1
                if c:
                    active.append(r)
                if j < p.generations and r == p.beta(j + 1):
                    j += 1
                    if j < p.generations and p.overrides.stopping_enabled:
                        stopped = self._exceeds(r, anc, active, float(j))
                    else:
                        stopped = False
                elif not stopped and p.overrides.stopping_enabled:
                    stopped = self._exceeds(r, anc, active, float(j))
            self.memo[key] = (c, stopped, j)
        return active, stopped, j

    def freeze(self) -> "StoppingConstruction":
        self.frozen = True
        return self

    # -- evaluation --------------------------------------------------------

    def values_on_cell(self, k: int, rank: int, index: int, us: np.ndarray) -> np.ndarray:
        """Phi_k at the points (index + u) 2^-rank; requires rank >= min(k, depth)."""
        keff = min(k, self.depth)
        if rank < keff:
            raise ValueError("evaluation cell must be at least as fine as the truncation rank")
        active, _, _ = self.resolve_chain(keff, index >> (rank - keff))
        return self._phi_on_offsets(rank, index, active, np.asarray(us, dtype=float))

    def phi_eval(self, k: int, t: float) -> float:
        """Phi_k(t) for ranks within float resolution of positions."""
        if k < 0:
            raise ValueError("rank must be >= 0")
        if k > self.depth:
            raise ValueError(f"rank {k} beyond configured depth {self.depth}")
        if not (0.0 < t <= 1.0):
            raise ValueError(f"point {t} outside (0, 1]")
        keff = min(k, self.depth)
        if keff > 48:
            raise ValueError("pointwise evaluation beyond rank 48 needs index coordinates")
        idx = min(int(math.ceil(t * (1 << keff))) - 1, (1 << keff) - 1)
        idx = max(idx, 0)
        u = t * float(1 << keff) - idx
        return float(self.values_on_cell(k, keff, idx, np.array([u]))[0])

    def cell_integral(self, k: int, rank: int, index: int) -> float:
        """Exact integral of Phi_k over the cell (index 2^-rank, (index+1) 2^-rank].

        Wavelets finer than the cell integrate to zero over it, so the
        ancestor chain determines the value exactly via the primitive.
        """
        keff = min(k, self.depth)
        key = (keff, rank, index)
        hit = self._integral_cache.get(key)
        if hit is not None:
            return hit
        active, _, _ = self.resolve_chain(min(keff, rank), index >> max(0, rank - keff))
        total = 0.0
        prim = self.phi.primitive_scalar
        for r in active:
            if r > rank:
                continue
            gap = rank - r
            denom = 1 << gap
            frac = index & (denom - 1)
            total += 2.0 ** -r * (prim((frac + 1) / denom) - prim(frac / denom))
        self._integral_cache[key] = total
        return total

    def is_survivor(self, j: int, leaf_index: int) -> bool:
        """True when the rank-beta_{j+1} interval escaped every stop of generation j."""
        p = self.params
        if not (1 <= j < p.generations):
            raise ValueError(f"generation {j} has no completed successor")
        end = p.beta(j + 1)
        self.resolve_chain(end, leaf_index)
        c, _, _ = self.memo[(end, leaf_index)]
        return c == 1

    # -- snapshots ---------------------------------------------------------

    def snapshot_csv(self) -> str:
        buf = io.StringIO()
        buf.write("rank,index,c,stopped,generation\n")
        for (r, idx) in sorted(self.memo):
            c, stopped, j = self.memo[(r, idx)]
            buf.write(f"{r},{idx},{c},{int(stopped)},{j}\n")
        return buf.getvalue()

    @staticmethod
    def from_snapshot(phi: MotherWavelet, params: ConstructionParams,
                      text: str) -> "StoppingConstruction":
        state = StoppingConstruction(phi, params)
        lines = text.strip().split("\n")
        if lines[0] != "rank,index,c,stopped,generation":
            raise ValueError("missing snapshot header")
        for ln in lines[1:]:
            rtok, itok, ctok, stok, jtok = ln.split(",")
            state.memo[(int(rtok), int(itok))] = (int(ctok), bool(int(stok)), int(jtok))
        return state


# -- samplers ---------------------------------------------------------------


@dataclass(frozen=True)
class Sampler:
    """Uniform grid or seeded Monte Carlo point source on (0, 1]."""

    kind: str = "grid"      # grid | mc
    n: int = 4096
    seed: int = 0
    target_se: float | None = None

    def cells(self, rank: int) -> list:
        """(index, u) pairs addressing n points at the given dyadic rank."""
        if self.n < 1:
            raise ValueError("sampler needs n >= 1")
        out = []
        if self.kind == "grid":
            two_n = 2 * self.n
            for q in range(self.n):
                num = (2 * q + 1) << rank
                idx = num // two_n
                u = (num % two_n) / two_n
                if u == 0.0:      # right endpoint belongs to the previous cell
                    idx -= 1
                    u = 1.0
                out.append((min(idx, (1 << rank) - 1), u))
        elif self.kind == "mc":
            rng = random.Random(self.seed)
            for _ in range(self.n):
                out.append((rng.getrandbits(rank) if rank else 0, 0.5))
        else:
            raise ValueError(f"unknown sampler kind {self.kind!r}")
        return out

    def points(self) -> np.ndarray:
        if self.kind == "grid":
            return (np.arange(self.n) + 0.5) / self.n
        rng = np.random.default_rng(self.seed)
        return rng.uniform(0.0, 1.0, self.n)


@dataclass(frozen=True)
class MeasureEstimate:
    value: float
    stderr: float | None
    n: int


# -- structural checks -------------------------------------------------------


def bloch_step_norm(state: StoppingConstruction, k: int, sampler: Sampler) -> float:
    """Sup of |Phi_k - Phi_{k-1}| over the sample; at most one unit wavelet.

    Points are addressed three ranks below the truncation so cell centers
    (where a freshly added antisymmetric wavelet vanishes) are not the only
    positions seen.
    """
    if k < 1:
        raise ValueError("step norm needs k >= 1")
    rk = min(k, state.depth) + 3
    worst = 0.0
    for idx, u in sampler.cells(rk):
        us = np.array([u])
        a = state.values_on_cell(k, rk, idx, us)[0]
        b = state.values_on_cell(k - 1, rk, idx, us)[0]
        worst = max(worst, abs(a - b))
    return worst


def growth_envelope(state: StoppingConstruction, k: int, sampler: Sampler) -> float:
    """Sup of |Phi_k| over the sample (addressed below cell centers)."""
    rk = min(k, state.depth) + 3
    worst = 0.0
    for idx, u in sampler.cells(rk):
        worst = max(worst, abs(state.values_on_cell(k, rk, idx, np.array([u]))[0]))
    return worst


def envelope_bound(state: StoppingConstruction, k: int) -> float:
    """Center-rule envelope bound w(2^-k) + 2 + 2 ||phi'||."""
    return float(state.params.weight(2.0 ** -k)) + 2.0 + 2.0 * state.phi.deriv_sup


def sample_active_intervals(state: StoppingConstruction, j: int, n: int,
                            seed: int = 0) -> list:
    """(rank, index) with c = 1 and beta_j <= rank < beta_{j+1}, from random chains."""
    p = state.params
    if not (1 <= j < p.generations):
        raise ValueError(f"generation {j} has no completed successor")
    end = p.beta(j + 1)
    rng = random.Random(seed)
    found = set()
    for _ in range(n):
        leaf = rng.getrandbits(end) if end else 0
        active, _, _ = state.resolve_chain(end, leaf)
        for r in active:
            if p.beta(j) <= r < end:
                found.add((r, leaf >> (end - r)))
    return sorted(found)


def sample_survivor_leaves(state: StoppingConstruction, j: int, n: int,
                           seed: int = 0) -> list:
    """Rank-beta_{j+1} indices in the surviving set of generation j."""
    p = state.params
    end = p.beta(j + 1)
    rng = random.Random(seed)
    out = []
    for _ in range(n):
        leaf = rng.getrandbits(end) if end else 0
        if state.is_survivor(j, leaf):
            out.append(leaf)
    return out


def haar_coefficient(state: StoppingConstruction, rank: int, index: int,
                     nodes: int = 12) -> float:
    """b_I = 2^rank <Phi, psi_I> by per-half Gauss quadrature in local coordinates.

    Wavelets finer than I are mean-zero on each half of I, so pairing
    against Phi truncated at rank(I) is exact; the truncated sum is a
    polynomial on each half and the fixed Gauss rule integrates it exactly.
    """
    gx, gw = np.polynomial.legendre.leggauss(nodes)
    gx = 0.5 * (gx + 1.0)
    gw = 0.5 * gw
    left = state.values_on_cell(rank, rank + 1, 2 * index, gx)
    right = state.values_on_cell(rank, rank + 1, 2 * index + 1, gx)
    mean_left = float(np.dot(left, gw))
    mean_right = float(np.dot(right, gw))
    return 0.5 * (mean_right - mean_left)


def haar_coefficient_bound(state: StoppingConstruction, j: int,
                           sample: Iterable[tuple]) -> float:
    """Minimum |b_I| over sampled active intervals of generation j."""
    vals = [abs(haar_coefficient(state, r, idx)) for r, idx in sample]
    if not vals:
        raise ValueError("empty sample of active intervals")
    return min(vals)


def coefficient_floor(state: StoppingConstruction) -> float:
    """Provable per-coefficient floor |<phi,psi>| minus ancestor corrections.

    The geometric correction sum is ||phi'|| 2^-a / (1 - 2^-a); under the
    step condition on a this stays above half the pairing.  Instances that
    override a below the condition get a floor of zero: no bound is then
    provable and downstream thresholds degenerate accordingly.
    """
    a = state.params.a
    corr = state.phi.deriv_sup * 2.0 ** -a / (1.0 - 2.0 ** -a)
    return max(0.0, abs(state.phi.haar_pairing) - corr)


def qfl_threshold(state: StoppingConstruction, j: int) -> float:
    """Recorded lower bound for the generation-j quadratic mass on survivors.

    With paper parameters this is at least (gap/a - 1) <phi,psi>^2 / 4; the
    recorded value uses the instance's own coefficient floor so overridden
    thinning steps weaken it honestly.
    """
    p = state.params
    gap = p.beta(j + 1) - p.beta(j)
    return coefficient_floor(state) ** 2 * (gap / p.a - 1.0)


def quadratic_lower_bound(state: StoppingConstruction, j: int,
                          survivor_leaves: Iterable[int]) -> float:
    """Min over survivors of the sum of b_J^2 over generation-j ancestors.

    Ranks run over the multiples of a strictly inside (beta_j, beta_{j+1});
    on the surviving set every one of them carries a coefficient.
    """
    p = state.params
    end = p.beta(j + 1)
    best = math.inf
    for leaf in survivor_leaves:
        total = 0.0
        r = p.beta(j) + p.a
        while r < end:
            total += haar_coefficient(state, r, leaf >> (end - r)) ** 2
            r += p.a
        best = min(best, total)
    if not math.isfinite(best):
        raise ValueError("empty survivor sample")
    return best


def cell_means(state: StoppingConstruction, k: int, resolution: int) -> np.ndarray:
    """Exact means of Phi_k over the rank-`resolution` cells (via the primitive)."""
    n = 1 << resolution
    scale = float(n)
    return np.array([state.cell_integral(k, resolution, i) * scale for i in range(n)])


def parseval_identity_check(state: StoppingConstruction, j: int, max_rank: int) -> float:
    """Residual of the quadratic-function mass identity for Phi_{beta_{j+1}}.

    Both sides come from the same Haar expansion (analysis at max_rank):
    the integral of the chain quadratic function equals the integral of the
    truncated synthesis squared.
    """
    from .martingale import cell_means_to_expansion, expansion_l2_identity

    p = state.params
    k = p.beta(j + 1) if j < p.generations else p.depth
    means = cell_means(state, k, max_rank + 1)
    e = cell_means_to_expansion(means, max_rank)
    lhs, rhs = expansion_l2_identity(e, max_rank)
    return abs(lhs - rhs)


def level_set_measure(state: StoppingConstruction, j: int, threshold: float,
                      sampler: Sampler) -> MeasureEstimate:
    """Estimated measure of {t: |Phi_{beta_{j+1}}(t)| >= threshold}."""
    if threshold < 0.0:
        raise ValueError("threshold must be >= 0")
    p = state.params
    k = p.beta(j + 1)
    hits = 0
    for idx, u in sampler.cells(k):
        v = state.values_on_cell(k, k, idx, np.array([u]))[0]
        if abs(v) >= threshold:
            hits += 1
    n = sampler.n
    phat = hits / n
    se = math.sqrt(max(phat * (1.0 - phat), 1e-12) / n) if sampler.kind == "mc" else None
    if sampler.target_se is not None:
        if se is None or se > sampler.target_se:
            raise PrecisionError(
                f"sampler cannot certify target stderr {sampler.target_se} with n={n}")
    return MeasureEstimate(value=phat, stderr=se, n=n)


def paper_level_threshold(state: StoppingConstruction, j: int) -> float:
    """The displayed level-set threshold w(2^-beta_j) / 4."""
    return float(state.params.weight(2.0 ** -state.params.beta(j))) / 4.0


# -- Poisson smoothing -------------------------------------------------------


def _kernel(kind: str, s: float, y: float) -> float:
    if kind == "value":
        return y / (math.pi * (y * y + s * s))
    if kind == "dx":
        return -2.0 * y * s / (math.pi * (y * y + s * s) ** 2)
    if kind == "dy":
        return (s * s - y * y) / (math.pi * (y * y + s * s) ** 2)
    raise ValueError(kind)


def _smooth_cells(x: float, y: float, s_rel: float, rank_cap: int):
    """Dyadic cover of (0, 1] with cell width <= s_rel * max(dist to x, y)."""
    out = []
    stack = [(0, 0)]
    while stack:
        rank, idx = stack.pop()
        width = 2.0 ** -rank
        lo = idx * width
        hi = lo + width
        d = max(y, lo - x if lo > x else (x - hi if x > hi else 0.0))
        if width <= s_rel * d or rank >= rank_cap:
            out.append((rank, idx))
        else:
            stack.append((rank + 1, 2 * idx))
            stack.append((rank + 1, 2 * idx + 1))
    return out


def poisson_smooth(state: StoppingConstruction, k: int, x: float, y: float,
                   tol: float = 1e-3, kind: str = "value") -> float:
    """v_k(x, y) = (Phi_k * P_y)(x) by kernel-adapted dyadic panels.

    Each panel contributes kernel(midpoint) times the exact integral of
    Phi_k over the panel (finer wavelets are mean-zero on dyadic panels, so
    the chain primitive is exact).  Panel widths scale with distance from
    the kernel peak; the relative error is of order the width ratio tol.
    """
    if y <= 0.0:
        raise ValueError("poisson_smooth needs y > 0")
    if k > state.depth:
        raise ValueError(f"rank {k} beyond configured depth {state.depth}")
    s_rel = min(0.05, max(tol, 1e-4))
    # panels finer than the kernel scale add cost but no accuracy
    rank_cap = min(46, max(4, int(math.ceil(math.log2(1.0 / (y * s_rel))))))
    total = 0.0
    for rank, idx in _smooth_cells(x, y, s_rel, rank_cap):
        mass = state.cell_integral(k, rank, idx)
        if mass != 0.0:
            mid = (idx + 0.5) * 2.0 ** -rank
            total += _kernel(kind, x - mid, y) * mass
    return total


def poisson_smooth_grad(state: StoppingConstruction, k: int, x: float, y: float,
                        tol: float = 1e-3) -> tuple:
    return (poisson_smooth(state, k, x, y, tol, kind="dx"),
            poisson_smooth(state, k, x, y, tol, kind="dy"))


def _auto_rank(state: StoppingConstruction, y: float, tol: float) -> int:
    """Truncation rank with tail 2^-k / y below tol, capped at the depth."""
    k = int(math.ceil(math.log2(1.0 / (y * max(tol, 1e-8))))) + 1
    return min(state.depth, max(k, 0))


def bloch_and_growth_check_v(state: StoppingConstruction, xs: Sequence[float],
                             ys: Sequence[float], tol: float = 1e-3) -> tuple:
    """(sup y |grad v|, sup |v| / w0(y)) over the strip grid."""
    w0 = w0_weight()
    sup_grad = 0.0
    sup_growth = 0.0
    for y in ys:
        k = _auto_rank(state, float(y), tol)
        for x in xs:
            gx, gy = poisson_smooth_grad(state, k, float(x), float(y), tol)
            sup_grad = max(sup_grad, float(y) * math.hypot(gx, gy))
            v = poisson_smooth(state, k, float(x), float(y), tol)
            sup_growth = max(sup_growth, abs(v) / float(w0(float(y))))
    return sup_grad, sup_growth


def witness_height(state: StoppingConstruction, k: int) -> float:
    """y_k = 2^(-beta_k - 2) / (10 ||phi'||), the probe height of generation k."""
    return 2.0 ** -(state.params.beta(k) + 2) / (10.0 * state.phi.deriv_sup)


def proposition_witness(state: StoppingConstruction, k: int, A_candidate: float,
                        sampler: Sampler, tol: float = 1e-3) -> MeasureEstimate:
    """Measure of {x: |v(x, y_k)| >= w0(y_k) / A_candidate}.

    v is evaluated at the deepest rank the truncation tolerance asks for
    (capped by the construction depth).  Requires k >= j0 unless the j0
    gating was relaxed at parameter-selection time.
    """
    p = state.params
    if k < p.j0 and not p.overrides.relax_j0:
        raise ValueError(f"witness generation {k} below j0 = {p.j0} without override")
    if not (1 <= k <= p.generations):
        raise ValueError(f"generation {k} outside the construction")
    yk = witness_height(state, k)
    if yk < 2.0 ** -40:
        raise ValueError(
            f"witness height {yk:.3g} at generation {k} is below float addressing "
            "around boundary points; this generation is not reachable")
    thr = float(w0_weight()(yk)) / A_candidate
    krank = _auto_rank(state, yk, tol)
    hits = 0
    pts = sampler.points()
    for x in pts:
        if abs(poisson_smooth(state, krank, float(x), yk, tol)) >= thr:
            hits += 1
    n = len(pts)
    phat = hits / n
    se = math.sqrt(max(phat * (1.0 - phat), 1e-12) / n) if sampler.kind == "mc" else None
    if sampler.target_se is not None and (se is None or se > sampler.target_se):
        raise PrecisionError(f"witness sampler cannot reach stderr {sampler.target_se}")
    return MeasureEstimate(value=phat, stderr=se, n=n)
