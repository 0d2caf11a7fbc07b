"""Exact quenched computations on finite intervals.

Exit probabilities in closed form, hitting-time tails by iterating the
absorbing kernel, the weighted-path spectral-gap sandwich for the
restricted birth-death chain, and per-instance empirical constants for
the confinement bounds.  Everything here is deterministic linear
algebra; these routines double as oracles for the Monte Carlo side.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import eigh_tridiagonal, solve
from scipy.special import logsumexp

from . import rng
from .env import Potential

KERNEL_BUDGET = 10 ** 7
EIGEN_SIZE_CAP = 64
CLIMB_CONSTANT = math.e


class BudgetExceeded(RuntimeError):
    """Raised when an iterative tail computation exceeds its kernel budget."""


@dataclass(frozen=True, eq=False)
class IntervalChain:
    """Birth-death chain on [a, c] driven by a potential, per the
    restricted-walk construction: V is given on [a-1, c] with V(a-1) = 0
    (transition probabilities are invariant to additive shifts of V),
    omega_x = e^{-V(x)} / (e^{-V(x)} + e^{-V(x-1)}), and at the borders
    the walk either stays in place or is absorbed, by `boundary` mode.
    """

    a: int
    c: int
    v: np.ndarray                  # V on [a-1, c], v[0] == 0
    boundary: str = "stay"         # "stay" | "absorbing"

    def __post_init__(self):
        if self.c - self.a + 1 < 4:
            raise ValueError("interval must contain at least four points")
        if self.boundary not in ("stay", "absorbing"):
            raise ValueError(f"unknown boundary mode {self.boundary!r}")
        v = np.asarray(self.v, dtype=np.float64)
        if v.shape != (self.c - self.a + 2,):
            raise ValueError("need V on [a-1, c]")
        v = v - v[0]
        v.flags.writeable = False
        object.__setattr__(self, "v", v)

    @classmethod
    def from_potential(cls, pot: Potential, a: int, c: int,
                       boundary: str = "stay") -> "IntervalChain":
        sites = np.arange(a - 1, c + 1)
        return cls(a=a, c=c, v=pot.v(sites), boundary=boundary)

    def __len__(self) -> int:
        return self.c - self.a + 1

    def v_at(self, x) -> np.ndarray:
        return self.v[np.asarray(x) - (self.a - 1)]

    @cached_property
    def omega(self) -> np.ndarray:
        """Right-step probabilities on [a, c]; sigmoid of -(V(x)-V(x-1))."""
        dv = np.diff(self.v)
        with np.errstate(over="ignore"):
            return 1.0 / (1.0 + np.exp(dv))

    def log_pi(self, x) -> np.ndarray:
        i = np.asarray(x) - (self.a - 1)
        return np.logaddexp(-self.v[i], -self.v[i - 1])

    def pi_ratio(self, h: int, x: int) -> float:
        return math.exp(self.log_pi(h) - self.log_pi(x))

    # -- potential shape statistics (all on the base interval [a, c]) --

    @cached_property
    def _shape(self) -> dict:
        v = self.v[1:]                      # V on [a, c]
        n = v.size
        suffmax = np.maximum.accumulate(v[::-1])[::-1]
        prefmin = np.minimum.accumulate(v)
        prefmax = np.maximum.accumulate(v)
        suffmin = np.minimum.accumulate(v[::-1])[::-1]
        # climbs to the right: max_{y >= x} V - min_{y < x} V, x in (a, c]
        h_plus = float(np.max(suffmax[1:] - prefmin[:-1]))
        # climbs to the left: max_{y <= x} V - min_{y > x} V, x in [a, c)
        h_minus = float(np.max(prefmax[:-1] - suffmin[1:]))
        m_tilde = float(np.max(v) - np.min(v))
        b = self.a + int(np.argmin(v))
        out = {"h_plus": h_plus, "h_minus": h_minus, "m_tilde": m_tilde, "b": b}
        if n >= 4:
            w = v[1:-1]                     # V on [a+1, c-1]
            sm = np.maximum.accumulate(w[::-1])[::-1]
            pm = np.minimum.accumulate(w)
            out["h_plus_star"] = float(np.max(sm[1:] - pm[:-1]))
            pM = np.maximum.accumulate(w)
            sm2 = np.minimum.accumulate(w[::-1])[::-1]
            out["h_minus_star"] = float(np.max(pM[:-1] - sm2[1:]))
        else:
            out["h_plus_star"] = -math.inf
            out["h_minus_star"] = -math.inf
        return out

    @property
    def h_plus(self) -> float:
        return self._shape["h_plus"]

    @property
    def h_minus(self) -> float:
        return self._shape["h_minus"]

    @property
    def h(self) -> float:
        return min(self.h_plus, self.h_minus)

    @property
    def h_star(self) -> float:
        return min(self._shape["h_plus_star"], self._shape["h_minus_star"])

    @property
    def m_tilde(self) -> float:
        return self._shape["m_tilde"]

    @property
    def bottom(self) -> int:
        """Leftmost site of minimal potential on [a, c]."""
        return self._shape["b"]

    @property
    def easy_exit_side(self) -> int:
        """The border through which H is realized: c if H == H_+, else a."""
        return self.c if self.h == self.h_plus else self.a

    @cached_property
    def extension_v(self) -> np.ndarray:
        """V on [a-1, c+1] with V(c+1) = V(b), for the spectral construction."""
        return np.append(self.v, self.v_at(self.bottom))

    # -- kernels --------------------------------------------------------

    def transition_matrix(self) -> np.ndarray:
        """Dense one-step kernel on [a, c]; rows sum to 1 exactly."""
        m = len(self)
        om = self.omega
        t = np.zeros((m, m))
        for i in range(1, m - 1):
            t[i, i + 1] = om[i]
            t[i, i - 1] = 1.0 - om[i]
        if self.boundary == "stay":
            t[0, 1] = om[0]
            t[0, 0] = 1.0 - om[0]
            t[m - 1, m - 2] = 1.0 - om[m - 1]
            t[m - 1, m - 1] = om[m - 1]
        else:
            t[0, 0] = 1.0
            t[m - 1, m - 1] = 1.0
        return t

    def to_json(self) -> str:
        return json.dumps({"a": self.a, "c": self.c,
                           "v": [float(x) for x in self.v],
                           "boundary": self.boundary})

    @classmethod
    def from_json(cls, text: str) -> "IntervalChain":
        d = json.loads(text)
        return cls(a=d["a"], c=d["c"], v=np.array(d["v"]), boundary=d["boundary"])


# -- exit probabilities ----------------------------------------------------


def exit_probability(pot: Potential, a: int, x: int, b: int) -> float:
    """P^x[T_b < T_a]: reach b before a, starting from a < x < b.

    Closed form sum_{y=a}^{x-1} e^V(y) / sum_{y=a}^{b-1} e^V(y),
    evaluated in log-domain.  Conventions P^a = 0, P^b = 1.
    """
    if x == a:
        return 0.0
    if x == b:
        return 1.0
    if not (a < x < b):
        raise ValueError(f"need a < x < b, got {a}, {x}, {b}")
    return math.exp(pot.logsumexp_v(a, x - 1) - pot.logsumexp_v(a, b - 1))


def _exit_probability_values(v: np.ndarray, base: int, a: int, x: int, b: int) -> float:
    """Exit probability from raw potential values (v[i] = V(base + i))."""
    if x == a:
        return 0.0
    if x == b:
        return 1.0
    num = logsumexp(v[a - base: x - base])
    den = logsumexp(v[a - base: b - base])
    return math.exp(num - den)


def exit_probability_linear(omega: np.ndarray, base: int, a: int, x: int, b: int) -> float:
    """Dense linear-system oracle for P^x[T_b < T_a].

    Solves h(a) = 0, h(b) = 1, h(y) = w_y h(y+1) + (1-w_y) h(y-1) for the
    interior unknowns; omega[i] is the right-step probability at site
    base + i.
    """
    m = b - a - 1
    A = np.zeros((m, m))
    rhs = np.zeros(m)
    for j, site in enumerate(range(a + 1, b)):
        w = omega[site - base]
        A[j, j] = 1.0
        if j > 0:
            A[j, j - 1] = -(1.0 - w)
        if j < m - 1:
            A[j, j + 1] = -w
        else:
            rhs[j] += w
    h = solve(A, rhs)
    return float(h[x - a - 1])


# -- hitting-time tails -----------------------------------------------------


@dataclass(frozen=True)
class HittingTail:
    survival: float          # P^x[T_S > t]
    expected_time: float     # E^x[T_S] by tail summation
    expected_converged: bool
    partial: bool            # True when the kernel budget ran out
    t: int


def _absorbing_kernel(chain: IntervalChain, targets: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """Substochastic kernel over non-target states, and the state list."""
    t = chain.transition_matrix()
    states = [s for s in range(chain.a, chain.c + 1) if s not in set(targets)]
    idx = [s - chain.a for s in states]
    return t[np.ix_(idx, idx)], np.array(states)


def hitting_time_tail(chain: IntervalChain, x: int, targets: Sequence[int], t: int,
                      budget: int = KERNEL_BUDGET, mean: bool = True) -> HittingTail:
    """P^x[T_S > t] by t applications of the substochastic kernel.

    With mean=True also accumulates E[T_S] = sum_k P[T_S > k], closing
    the series with a geometric tail once the decay ratio has stabilized
    (the iteration is a power method on the subkernel, so the ratio
    converges to its spectral radius); `partial` flags a result cut
    short by the kernel budget.
    """
    if t < 0:
        raise ValueError("t must be a nonnegative integer")
    targets = list(targets)
    if x in targets:
        return HittingTail(0.0, 0.0, True, False, t)
    q, states = _absorbing_kernel(chain, targets)
    pos = int(np.where(states == x)[0][0])
    surv = np.ones(len(states))            # surv[y] = P^y[T > k]
    total = 0.0                            # sum of P^x[T > k] over k <= current
    survival_at_t = None
    k = 0
    cur = 1.0
    pair_acc = 0.0                         # parity-2 walk: extrapolate pair sums
    pair_prev = math.nan
    ratio_prev = math.nan
    stable = 0
    while True:
        if k == t:
            survival_at_t = cur
            if not mean:
                return HittingTail(float(cur), math.nan, False, False, t)
        total += cur
        pair_acc += cur
        if k % 2 == 1:
            if k > t and cur < 1e-16 * max(total, 1.0):
                return HittingTail(float(survival_at_t), total, True, False, t)
            ratio = pair_acc / pair_prev if pair_prev > 0 else math.nan
            if math.isfinite(ratio) and 0.0 < ratio < 1.0:
                if abs(ratio - ratio_prev) <= 1e-13 * ratio:
                    stable += 1
                else:
                    stable = 0
                ratio_prev = ratio
                if stable >= 3 and k > t:
                    return HittingTail(float(survival_at_t),
                                       total + pair_acc * ratio / (1.0 - ratio), True, False, t)
            pair_prev, pair_acc = pair_acc, 0.0
        if k >= budget:
            return HittingTail(float(survival_at_t) if survival_at_t is not None else float(cur),
                               total, False, True, t)
        surv = q @ surv
        cur = float(surv[pos])
        k += 1


def mean_hitting_time_linear(chain: IntervalChain, targets: Sequence[int]) -> np.ndarray:
    """E^x[T_S] for every state by solving (I - Q) m = 1; targets get 0."""
    q, states = _absorbing_kernel(chain, targets)
    m = solve(np.eye(len(states)) - q, np.ones(len(states)))
    full = np.zeros(len(chain))
    for s, val in zip(states, m):
        full[s - chain.a] = val
    return full


def subkernel_spectral_radius(chain: IntervalChain, targets: Sequence[int]) -> float:
    q, _ = _absorbing_kernel(chain, targets)
    return float(np.max(np.abs(np.linalg.eigvals(q))))


def quenched_hit_cdf(environment, level: float, t: int, start: int = 0) -> float:
    """Exact P^start[T_level <= t] for the walk in a fixed environment.

    Iterates the survival recursion over the reachable strip, pinning
    the floor-resolved target row at zero.  The strip [start-t, start+t]
    contains every site the walk can touch in t steps, so the value is
    exact up to floating error.
    """
    target = math.floor(level)
    if target == start:
        return 1.0
    if t <= 0:
        return 0.0
    if target > start:
        lo, hi = start - t - 2, target   # strip holds every reachable site
    else:
        lo, hi = target, start + t + 2
    envw = environment
    if envw.extendable and not envw.contains(lo, hi):
        envw = envw.extended(lo, hi)
    if not envw.contains(lo, hi):
        raise ValueError(f"environment window must cover [{lo}, {hi}]")
    omega = envw.omega_at(np.arange(lo, hi + 1))
    m = hi - lo + 1
    # complement recursion d[x] = P^x[T_target <= k]: sums of positives
    # only, so values as small as 1e-300 keep full relative accuracy
    d = np.zeros(m)
    d[target - lo] = 1.0
    nxt = np.empty(m)
    for _ in range(t):
        nxt[1:-1] = omega[1:-1] * d[2:] + (1.0 - omega[1:-1]) * d[:-2]
        # outer rows sit beyond the reachable strip; their value is never
        # propagated back to the start within the budget
        nxt[0] = d[0]
        nxt[-1] = d[-1]
        nxt[target - lo] = 1.0
        d, nxt = nxt, d
    return float(d[start - lo])


# -- spectral gap: Miclo's weighted-path bound ------------------------------


@dataclass(frozen=True)
class MicloBound:
    b_value: float
    lower: float     # 1 / (4 B)
    upper: float     # 2 / B


def _extended_measures(chain: IntervalChain) -> tuple[np.ndarray, np.ndarray]:
    """(mu, omega) on the extended interval [a, c+1] with V(c+1) = V(b)."""
    v = chain.extension_v                  # V on [a-1, c+1]
    with np.errstate(over="ignore"):
        omega = 1.0 / (1.0 + np.exp(np.diff(v)))
    pi = np.exp(-v[1:]) + np.exp(-v[:-1])
    mu = pi / pi.sum()
    return mu, omega


def miclo_bound(chain: IntervalChain) -> MicloBound:
    """Weighted-path bound B and the sandwich 1/(4B) <= lambda <= 2/B.

    Computed on the extended chain [a, c+1] with V(c+1) = V(b) and stay
    borders.  For each candidate center i, B_+(i) and B_-(i) are maxima
    over split points of (sum of inverse edge conductances) times the
    mass of mu beyond the split, with B_+(c+1) = B_-(a) = 0; the bound
    takes the worse side per center and the best center:
    B = min_i max(B_-(i), B_+(i)).  (The max is forced by the boundary
    conventions: with a min, every B would collapse to 0 at i = a.)
    """
    mu, omega = _extended_measures(chain)
    m = mu.size                            # states a .. c+1
    up_w = 1.0 / (mu[:-1] * omega[:-1])    # edge weight x -> x+1, x in [a, c]
    down_w = 1.0 / (mu[1:] * (1.0 - omega[1:]))  # edge x -> x-1, x in [a+1, c+1]
    mu_head = np.cumsum(mu)                # mu[a .. x]
    mu_tail = mu_head[-1] - mu_head + mu   # mu[x .. c+1]
    best = math.inf
    for i in range(m):
        # B_+(i): splits x > i, sum_{y=i+1}^{x} 1/(mu(y)(1-omega_y)) * mu[x, c+1]
        if i == m - 1:
            b_plus = 0.0
        else:
            partial = np.cumsum(down_w[i:])          # y = i+1 .. x
            b_plus = float(np.max(partial * mu_tail[i + 1:]))
        # B_-(i): splits x < i, sum_{y=x}^{i-1} 1/(mu(y) omega_y) * mu[a, x]
        if i == 0:
            b_minus = 0.0
        else:
            partial = np.cumsum(up_w[:i][::-1])[::-1]  # y = x .. i-1
            b_minus = float(np.max(partial * mu_head[:i]))
        best = min(best, max(b_minus, b_plus))
    return MicloBound(b_value=best, lower=1.0 / (4.0 * best), upper=2.0 / best)


def spectral_gap(chain: IntervalChain) -> float:
    """Exact gap lambda(I') of the continuous-time generator on [a, c+1].

    The generator is similar to a symmetric tridiagonal matrix via the
    usual sqrt(mu) conjugation; the gap is its second-smallest eigenvalue.
    """
    if len(chain) > EIGEN_SIZE_CAP:
        raise ValueError(f"interval too long for the dense eigensolver cap {EIGEN_SIZE_CAP}")
    _, omega = _extended_measures(chain)
    m = omega.size                         # states a .. c+1
    diag = np.empty(m)
    diag[0] = omega[0]
    diag[1:-1] = omega[1:-1] + (1.0 - omega[1:-1])
    diag[-1] = 1.0 - omega[-1]
    off = -np.sqrt(omega[:-1] * (1.0 - omega[1:]))
    vals = eigh_tridiagonal(diag, off, eigvals_only=True)
    return float(np.sort(vals)[1])


# -- Proposition-style checks ------------------------------------------------


@dataclass(frozen=True)
class ClimbCheck:
    lhs: float
    rhs: float
    holds: bool


def check_climb_bound(chain: IntervalChain, x: int, h: int, y: int, s: int) -> ClimbCheck:
    """Exact P^x[T_y < s] against the cost-to-climb bound e (1+s) pi(h)/pi(x)."""
    if not (chain.a <= x <= h <= y <= chain.c):
        raise ValueError("need a <= x <= h <= y <= c")
    if s < 1:
        raise ValueError("s must be >= 1")
    if x == y:
        lhs = 1.0
    else:
        tail = hitting_time_tail(chain, x, [y], s - 1, mean=False)
        lhs = 1.0 - tail.survival
    rhs = CLIMB_CONSTANT * (1.0 + s) * chain.pi_ratio(h, x)
    return ClimbCheck(lhs=lhs, rhs=min(rhs, math.inf), holds=lhs <= rhs)


@dataclass(frozen=True)
class ConfinementConstants:
    c_upper: Optional[float]
    c_lower: Optional[float]
    lower_applicable: bool
    detail: dict


def _survival_thresholds(chain: IntervalChain, levels_max: dict,
                         levels_min: dict, budget: int) -> tuple[dict, dict]:
    """March the absorbing kernel once, recording threshold crossing times.

    levels_max: label -> eps; records the smallest t with
    max_x P^x[T > t] <= eps.  levels_min: label -> eps; records the
    largest t with min_x P^x[T >= t] >= eps.  Starting points x run over
    the interior (a, c); from the borders the hitting time is 0.
    """
    q, _ = _absorbing_kernel(chain, [chain.a, chain.c])
    surv = np.ones(q.shape[0])             # surv[y] = P^y[T > t]
    out_max, out_min = {}, {}
    pending_max = dict(levels_max)
    pending_min = dict(levels_min)
    t = 0
    while (pending_max or pending_min) and t <= budget:
        mx = float(np.max(surv))
        mn = float(np.min(surv))
        for label, eps in list(pending_max.items()):
            if mx <= eps:
                out_max[label] = t          # smallest t with max P[T > t] <= eps
                del pending_max[label]
        for label, eps in list(pending_min.items()):
            if mn < eps:
                # P[T >= u] = P[T > u-1] >= eps iff u <= t at first failure
                out_min[label] = t
                del pending_min[label]
        surv = q @ surv
        t += 1
    if pending_max or pending_min:
        raise BudgetExceeded("confinement threshold scan exceeded kernel budget")
    return out_max, out_min


def confinement_constants(chain: IntervalChain, u_grid: Sequence[float],
                          budget: int = KERNEL_BUDGET) -> ConfinementConstants:
    """Per-instance empirical constants for the confinement bounds.

    c_upper: smallest gamma with max_x P^x[T_{a,c} > u g (c-a)^3 ((c-a)+M) e^H]
    <= e^-u over the grid.  c_lower: smallest gamma with
    min_x P^x[g ln(2(c-a)) T_{a,c} / e^{H*} >= u] >= e^-u / (2(c-a)),
    subject to the shape hypotheses (c-1 maximal on [b, c-1], a maximal on
    [a, b]) and e^{H*} >= 16 e.
    """
    span = chain.c - chain.a
    scale_upper = span ** 3 * (span + chain.m_tilde) * math.exp(chain.h)
    us = [float(u) for u in u_grid if u > 0]
    lv_max = {u: math.exp(-u) for u in us}
    lv_min = {u: math.exp(-u) / (2.0 * span) for u in us}
    t_max, t_min = _survival_thresholds(chain, lv_max, lv_min, budget)

    c_upper = 0.0
    for u in us:
        c_upper = max(c_upper, t_max[u] / (u * scale_upper))

    v = chain.v[1:]                        # V on [a, c]
    b_idx = chain.bottom - chain.a
    hyp = (v[-2] == np.max(v[b_idx:-1])    # c-1 maximal on [b, c-1]
           and v[0] == np.max(v[:b_idx + 1]))  # a maximal on [a, b]
    hyp = bool(hyp) and math.exp(chain.h_star) >= 16.0 * CLIMB_CONSTANT
    c_lower = None
    if hyp:
        c_lower = 0.0
        ok = True
        for u in us:
            t_star = t_min[u]
            if t_star < 1:
                ok = False
                break
            c_lower = max(c_lower, u * math.exp(chain.h_star) / (math.log(2.0 * span) * t_star))
        if not ok:
            c_lower = None
    return ConfinementConstants(
        c_upper=c_upper, c_lower=c_lower, lower_applicable=hyp,
        detail={"t_max": t_max, "t_min": t_min, "scale_upper": scale_upper},
    )


# -- randomized sweeps (shared by CLI oracle-check and the test suite) -------


def random_chain(seed: int, stream: int, max_len: int = 30, v_bound: float = 12.0,
                 boundary: str = "stay") -> IntervalChain:
    """A random interval chain with i.i.d. uniform potential, |V| <= v_bound."""
    key = rng.stream_key(seed, stream, rng.DOMAIN_MISC)
    u = rng.uniform_block(key, 0, max_len + 8)
    length = 4 + int(u[0] * (max_len - 3))          # points in [4, max_len]
    a = int(u[1] * 21) - 10
    v = (2.0 * u[2: 2 + length + 1] - 1.0) * v_bound
    return IntervalChain(a=a, c=a + length - 1, v=v, boundary=boundary)


@dataclass(frozen=True)
class SweepRow:
    chain_id: int
    quantity: str
    lhs: float
    rhs: float
    holds: bool
    witness: Optional[str] = None


def miclo_sweep(count: int, seed: int, max_len: int = 30, v_bound: float = 12.0) -> list[SweepRow]:
    """Sandwich 1/(4B) <= lambda <= 2/B on `count` random chains."""
    rows = []
    for i in range(count):
        chain = random_chain(seed, i, max_len, v_bound)
        mb = miclo_bound(chain)
        lam = spectral_gap(chain)
        ok = mb.lower <= lam <= mb.upper
        rows.append(SweepRow(i, "miclo-lower", mb.lower, lam, mb.lower <= lam,
                             witness=None if ok else chain.to_json()))
        rows.append(SweepRow(i, "miclo-upper", lam, mb.upper, lam <= mb.upper,
                             witness=None if ok else chain.to_json()))
    return rows


def climb_sweep(count: int, seed: int, max_len: int = 30, v_bound: float = 8.0,
                s_max: int = 1000) -> list[SweepRow]:
    """Cost-to-climb bound with constant e on random (chain, x<=h<=y, s)."""
    rows = []
    for i in range(count):
        chain = random_chain(seed, 10_000 + i, max_len, v_bound)
        key = rng.stream_key(seed, 20_000 + i, rng.DOMAIN_MISC)
        u = rng.uniform_block(key, 0, 4)
        x = chain.a + int(u[0] * (len(chain) - 1))
        y = x + int(u[1] * (chain.c - x))
        h = x + int(u[2] * (y - x + 1))
        s = 1 + int(u[3] * (s_max - 1))
        chk = check_climb_bound(chain, x, h, y, s)
        rows.append(SweepRow(i, f"climb x={x} h={h} y={y} s={s}", chk.lhs, chk.rhs,
                             chk.holds, witness=None if chk.holds else chain.to_json()))
    return rows


def exit_oracle_sweep(count: int, seed: int, max_len: int = 30) -> list[SweepRow]:
    """Closed-form exit probability against the dense linear solve."""
    from .env import EnvironmentModel, build_potential, sample_environment
    model = EnvironmentModel(kind="beta-truncated", alpha=2.0, beta=1.5)
    rows = []
    for i in range(count):
        key = rng.stream_key(seed, 30_000 + i, rng.DOMAIN_MISC)
        u = rng.uniform_block(key, 0, 3)
        length = 4 + int(u[0] * (max_len - 3))
        a = -int(u[1] * length)
        b = a + length
        envr = sample_environment(model, min(a, -1), max(b, 1), seed, 40_000 + i)
        pot = build_potential(envr)
        x = a + 1 + int(u[2] * (length - 1))
        lhs = exit_probability(pot, a, x, b)
        rhs = exit_probability_linear(envr.omega, envr.lo, a, x, b)
        ok = abs(lhs - rhs) <= 1e-10
        rows.append(SweepRow(i, f"exit a={a} x={x} b={b}", lhs, rhs, ok,
                             witness=None if ok else f"seed={seed} stream={40_000 + i}"))
    return rows
