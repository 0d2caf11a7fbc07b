"""Time-indexed valley decomposition of the potential and environment events.

A valley boundary is a site j whose potential is a running maximum of
everything to its right and that closes a descent of at least
3/(1 and kappa) * ln n from the previous boundary.  The running-max
condition looks infinitely far right; on a finite window it is
certified by scanning until the potential has fallen a further ln n
below the required descent, which bounds the probability of a later
exceedance by a negative power of n.  Boundaries whose scan hits the
window edge are reported as window-truncated, never silently accepted.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import rng
from .env import Environment, EnvironmentModel, Potential, validate_assumptions

CERTIFIED = "certified"
TRUNCATED = "window-truncated"
ORIGIN = "origin"


def threshold_drop(n: float, kappa: float) -> float:
    return 3.0 / min(1.0, kappa) * math.log(n)


@dataclass(frozen=True, eq=False)
class ValleyDecomposition:
    """Boundaries K_0..K_M with bottoms and depths of the M valleys.

    Valley i is [K_i, K_{i+1}); index-set queries exclude valley 0,
    which exists only as a window artifact at the left horizon.
    """

    n: float
    kappa: float
    origin: int
    boundaries: np.ndarray          # K_0 .. K_M
    statuses: tuple[str, ...]       # per boundary
    bottoms: np.ndarray             # per valley, leftmost argmin
    depths: np.ndarray              # per valley, pair-form depth
    potential: Potential = field(repr=False)
    diagnostic: Optional[str] = None

    @property
    def valley_count(self) -> int:
        return len(self.boundaries) - 1

    @property
    def certified_boundary_count(self) -> int:
        return sum(1 for s in self.statuses if s == CERTIFIED)

    def valley(self, i: int) -> tuple[int, int]:
        return int(self.boundaries[i]), int(self.boundaries[i + 1])

    def boundary_certified(self, i: int) -> bool:
        return self.statuses[i] == CERTIFIED

    def index_set(self, m: float, m_prime: float) -> list[int]:
        """N(m, m') = {i >= 1 : [K_i, K_{i+1}) meets [floor(m), floor(m'))}."""
        if m >= m_prime:
            raise ValueError("need m < m'")
        lo, hi = math.floor(m), math.floor(m_prime)
        out = []
        for i in range(1, self.valley_count):
            ki, kj = self.valley(i)
            if ki < hi and kj > lo:
                out.append(i)
        return out

    @property
    def i0(self) -> int:
        return len(self.index_set(-self.n, 0)) if self.valley_count > 1 else 0

    def i1(self, nu: float) -> int:
        return len(self.index_set(-self.n, self.n ** nu)) if self.valley_count > 1 else 0

    def reflected_boundaries(self) -> tuple[int, np.ndarray]:
        """(i0, sites) with site[0] = 0 replacing K_{i0}; K_i unchanged above."""
        i0 = self.i0
        sites = self.boundaries[i0:].copy()
        sites[0] = 0
        return i0, sites

    def widths(self) -> np.ndarray:
        return np.diff(self.boundaries)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="\n") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["i", "K_i", "b_i", "H_i", "certified"])
            for i in range(self.valley_count):
                w.writerow([i, int(self.boundaries[i]), int(self.bottoms[i]),
                            repr(float(self.depths[i])),
                            self.statuses[i + 1] == CERTIFIED])


def depth_pair_form(v: np.ndarray) -> float:
    """max over j < k within the valley of V(k) - V(j); -inf if width 1."""
    if v.size < 2:
        return -math.inf
    prefmin = np.minimum.accumulate(v)
    return float(np.max(v[1:] - prefmin[:-1]))


def depth_max_min_form(v: np.ndarray) -> float:
    """max over interior split x of (max V on [x, end) - min V on [start, x))."""
    if v.size < 2:
        return -math.inf
    suffmax = np.maximum.accumulate(v[::-1])[::-1]
    prefmin = np.minimum.accumulate(v)
    return float(np.max(suffmax[1:] - prefmin[:-1]))


def decompose(pot: Potential, n: float, kappa: float,
              origin: Optional[int] = None) -> ValleyDecomposition:
    """Run the inductive boundary construction over the potential window.

    K_0 = floor(-n) unless an explicit origin is given; each next
    boundary is the smallest j past the descent threshold whose
    running-max property survives the finite certification scan.
    """
    if n < 2:
        raise ValueError("horizon n must be at least 2")
    k0 = math.floor(-n) if origin is None else int(origin)
    if k0 < pot.lo:
        raise ValueError(f"window starts at {pot.lo}, needs to cover origin {k0}")
    drop = threshold_drop(n, kappa)
    margin = drop + math.log(n)
    v = pot.values
    base = pot.lo - 1
    hi = pot.hi

    def certify(j: int) -> Optional[str]:
        """None = exceeded (not a running max); else certification status."""
        vj = v[j - base]
        floor_level = vj - margin
        for k in range(j + 1, hi + 1):
            vk = v[k - base]
            if vk > vj:
                return None
            if vk < floor_level:
                return CERTIFIED
        return TRUNCATED

    boundaries = [k0]
    statuses = [ORIGIN]
    cur = k0
    diagnostic = None
    while True:
        v_cur = v[cur - base]
        runmin = math.inf
        found = None
        for j in range(cur, hi + 1):
            runmin = min(runmin, v[j - base])
            if v_cur - runmin >= drop:
                st = certify(j)
                if st is not None:
                    found = (j, st)
                    break
        if found is None:
            if len(boundaries) == 1:
                diagnostic = ("no boundary certifiable on the window: potential "
                              "never completes the required descent")
            break
        j, st = found
        boundaries.append(j)
        statuses.append(st)
        cur = j
        if st == TRUNCATED:
            break

    b_arr = np.asarray(boundaries, dtype=np.int64)
    bottoms = np.zeros(len(boundaries) - 1, dtype=np.int64)
    depths = np.zeros(len(boundaries) - 1)
    for i in range(len(boundaries) - 1):
        ki, kj = boundaries[i], boundaries[i + 1]
        seg = v[ki - base: kj - base]          # V on [K_i, K_{i+1})
        bottoms[i] = ki + int(np.argmin(seg))
        depths[i] = depth_pair_form(seg)
    return ValleyDecomposition(n=n, kappa=kappa, origin=k0, boundaries=b_arr,
                               statuses=tuple(statuses), bottoms=bottoms,
                               depths=depths, potential=pot, diagnostic=diagnostic)


# -- environment events -------------------------------------------------------


@dataclass(frozen=True)
class EventStatus:
    value: Optional[bool]           # None = unknown (window-limited)
    witness: Optional[str] = None

    def __bool__(self) -> bool:
        return bool(self.value)


@dataclass(frozen=True)
class EnvEventReport:
    n: float
    nu: float
    m: int
    epsilon0: float
    kappa: float
    narrow_valleys: EventStatus          # A(n)
    few_deep_valleys: dict               # a -> EventStatus, the B(n, nu, a) family
    few_deep_all: EventStatus            # B'(n, nu, m)
    horizon_rise_bounded: EventStatus    # G(n)
    max_rise_bounded: EventStatus        # G1(n)
    deep_valley_exists: EventStatus      # D(n)
    omega_not_sticky: EventStatus        # F(n)

    def to_json(self) -> str:
        def enc(s: EventStatus):
            return {"value": s.value, "witness": s.witness}
        return json.dumps({
            "n": self.n, "nu": self.nu, "m": self.m,
            "epsilon0": self.epsilon0, "kappa": self.kappa,
            "narrow_valleys": enc(self.narrow_valleys),
            "few_deep_valleys": {repr(a): enc(s) for a, s in self.few_deep_valleys.items()},
            "few_deep_all": enc(self.few_deep_all),
            "horizon_rise_bounded": enc(self.horizon_rise_bounded),
            "max_rise_bounded": enc(self.max_rise_bounded),
            "deep_valley_exists": enc(self.deep_valley_exists),
            "omega_not_sticky": enc(self.omega_not_sticky),
        }, indent=2, sort_keys=True)


def _rise_exceeds(pot: Potential, i_lo: int, i_hi: int, bound: float,
                  margin: float) -> EventStatus:
    """Does max over i in [i_lo, i_hi] of sup_{k >= i} (V(k) - V(i)) exceed bound?

    True if the window already shows it; False only when the window ends
    deep enough (margin below every candidate level) to rule a later
    exceedance out of the certified picture; None otherwise.
    """
    v = pot.values
    base = pot.lo - 1
    seg = v[i_lo - base: pot.hi - base + 1]     # V on [i_lo, hi]
    suffmax = np.maximum.accumulate(seg[::-1])[::-1]
    width = i_hi - i_lo + 1
    rises = suffmax[:width] - seg[:width]
    best = int(np.argmax(rises))
    if rises[best] > bound:
        return EventStatus(True, witness=f"site {i_lo + best}")
    v_needed = float(np.min(seg[:width])) + bound
    if v_needed - v[pot.hi - base] >= margin:
        return EventStatus(False)
    return EventStatus(None, witness="window end too high to certify")


def check_events(env: Environment, dec: ValleyDecomposition, n: float, nu: float,
                 m: int, epsilon0: Optional[float] = None) -> EnvEventReport:
    """Evaluate the environment events at horizon n literally.

    epsilon0 defaults to the validated negative-moment exponent of the
    attached model; it sets the stickiness threshold n^(-3/epsilon0).
    """
    if epsilon0 is None:
        if env.model is None:
            raise ValueError("epsilon0 must be given for model-free environments")
        epsilon0 = validate_assumptions(env.model).epsilon0
    pot = dec.potential
    kappa = dec.kappa
    ln_n = math.log(n)
    lnln_n = math.log(ln_n)
    margin = ln_n

    # A(n): all valley widths up to index 2n at most (ln n)^2
    widths = dec.widths()
    upto = min(dec.valley_count, int(2 * n) + 1)
    wit = None
    value: Optional[bool] = True
    for i in range(upto):
        if widths[i] > ln_n ** 2:
            value, wit = False, f"valley {i} width {int(widths[i])}"
            break
    if value and (dec.valley_count < int(2 * n) + 1
                  and dec.statuses[-1] != CERTIFIED):
        value = None  # ran out of certified valleys before the count
    narrow = EventStatus(value, wit)

    # B(n, nu, a) family and their intersection B'(n, nu, m)
    def b_event(a: float) -> EventStatus:
        if dec.boundaries[-1] < math.floor(n ** nu) or dec.valley_count < 2:
            return EventStatus(None, witness="decomposition stops before n^nu")
        idx = dec.index_set(-(n ** nu), n ** nu)
        cutoff = a / kappa * ln_n + lnln_n
        deep = [i for i in idx if dec.depths[i] >= cutoff]
        ok = len(deep) < n ** (nu - a)
        return EventStatus(ok, None if ok else f"{len(deep)} deep valleys")

    b_family = {}
    for k in range(1, m):
        a = k * nu / m
        b_family[a] = b_event(a)
    vals = [s.value for s in b_family.values()]
    if all(v is True for v in vals):
        b_all = EventStatus(True)
    elif any(v is False for v in vals):
        b_all = EventStatus(False, witness="some depth-count event fails")
    else:
        b_all = EventStatus(None)

    # G(n): rises from the two horizon sites stay under (ln n + 2 lnln n)/kappa
    g_bound = (ln_n + 2 * lnln_n) / kappa
    in_win = pot.lo <= -n and pot.hi >= n
    if not in_win:
        g = EventStatus(None, witness="window does not cover [-n, n]")
        g1 = EventStatus(None, witness="window does not cover [-n, n]")
        d = EventStatus(None, witness="window does not cover [-n, n]")
    else:
        h_pos = _rise_exceeds(pot, int(n), int(n), g_bound, margin)
        h_neg = _rise_exceeds(pot, -int(n), -int(n), g_bound, margin)
        if h_pos.value is False and h_neg.value is False:
            g = EventStatus(True)
        elif h_pos.value or h_neg.value:
            g = EventStatus(False, witness=h_pos.witness or h_neg.witness)
        else:
            g = EventStatus(None)

        # G1(n): the same bound for every start in [-n, n]
        r = _rise_exceeds(pot, -int(n), int(n), g_bound, margin)
        g1 = EventStatus(None if r.value is None else not r.value, r.witness)

        # D(n): both halves contain a rise above (ln n - 4 lnln n)/kappa
        d_bound = (ln_n - 4 * lnln_n) / kappa
        d_pos = _rise_exceeds(pot, 0, int(n), d_bound, margin)
        d_neg = _rise_exceeds(pot, -int(n), 0, d_bound, margin)
        if d_pos.value and d_neg.value:
            d = EventStatus(True)
        elif d_pos.value is False or d_neg.value is False:
            d = EventStatus(False, witness="a half-window has no deep rise")
        else:
            d = EventStatus(None)

    # F(n): no site with 1 - omega_i at or below n^(-3/epsilon0) in [-n, n]
    lo, hi = max(pot.lo, -int(n)), min(pot.hi, int(n))
    sites = np.arange(lo, hi + 1)
    sticky = 1.0 - env.omega_at(sites)
    worst = int(np.argmin(sticky))
    f_ok = bool(sticky[worst] > n ** (-3.0 / epsilon0))
    if pot.lo > -n or pot.hi < n:
        f = EventStatus(None, witness="window does not cover [-n, n]")
    else:
        f = EventStatus(f_ok, None if f_ok else f"site {int(sites[worst])}")

    return EnvEventReport(n=n, nu=nu, m=m, epsilon0=epsilon0, kappa=kappa,
                          narrow_valleys=narrow, few_deep_valleys=b_family,
                          few_deep_all=b_all, horizon_rise_bounded=g,
                          max_rise_bounded=g1, deep_valley_exists=d,
                          omega_not_sticky=f)


# -- Monte Carlo tail of the running maximum ---------------------------------


@dataclass(frozen=True)
class MaxTail:
    h_grid: np.ndarray
    counts: np.ndarray
    replicas: int
    log_freq: np.ndarray        # NaN where excluded
    slope: float
    stderr: float
    excluded: tuple[int, ...]   # indices of grid points with too few survivors

    @property
    def used_points(self) -> int:
        return int(np.sum(np.isfinite(self.log_freq)))


def max_depth_tail(model: EnvironmentModel, h_grid: Sequence[float], replicas: int,
                   seed: int, min_survivors: int = 10,
                   batch: int = 100_000, chunk: int = 64) -> MaxTail:
    """Estimate P[S > h] for S = max of the potential random walk.

    Each replica accumulates V site by site until it falls 40 below the
    largest grid level, after which the running maximum can no longer
    reach the grid (a later rebound above it has probability below
    e^{-40 kappa}).  The least-squares slope of ln P[S > h] against h
    estimates -kappa.
    """
    h = np.asarray(sorted(h_grid), dtype=np.float64)
    floor_level = -(float(h[-1]) + 40.0)
    counts = np.zeros(h.size, dtype=np.int64)
    done = 0
    while done < replicas:
        b = min(batch, replicas - done)
        keys = rng.stream_keys(seed, np.arange(done, done + b, dtype=np.int64),
                               rng.DOMAIN_ENV)
        v = np.zeros(b)
        best = np.zeros(b)
        alive = np.arange(b)
        site = 1
        while alive.size:
            u = rng.uniform_grid(keys[alive], np.arange(site, site + chunk))
            steps = model.sample_log_rhos(u)
            path = v[alive, None] + np.cumsum(steps, axis=1)
            best[alive] = np.maximum(best[alive], path.max(axis=1))
            v[alive] = path[:, -1]
            keep = v[alive] > floor_level
            alive = alive[keep]
            site += chunk
        counts += (best[None, :] > h[:, None]).sum(axis=1)
        done += b

    freq = counts / float(replicas)
    with np.errstate(divide="ignore"):
        log_freq = np.where(counts >= min_survivors, np.log(freq), np.nan)
    excluded = tuple(int(i) for i in np.flatnonzero(counts < min_survivors))
    ok = np.isfinite(log_freq)
    if ok.sum() >= 2:
        coef, cov = np.polyfit(h[ok], log_freq[ok], 1, cov=True)
        slope, stderr = float(coef[0]), float(math.sqrt(max(cov[0, 0], 0.0)))
    else:
        slope, stderr = math.nan, math.nan
    return MaxTail(h_grid=h, counts=counts, replicas=replicas, log_freq=log_freq,
                   slope=slope, stderr=stderr, excluded=excluded)
