"""Quenched trajectory simulation and its valley-level bookkeeping.

run() produces a single walk with optional full-path retention; the
embedded walk observes it only at valley boundaries, and the hitting
time of level n^nu splits exactly into initial, direct-crossing,
backtrack, left-excursion and final-stretch components.

The split is computed from the realized path as a partition of the time
axis: between consecutive arrivals at distinct boundary sites the walk
completes exactly one crossing attempt (self-returns included), and
each such window is attributed to one component.  The components sum to
the hitting time by construction, on every path.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import rng
from .env import Environment, Potential
from .exact import exit_probability
from .valleys import CERTIFIED, ORIGIN, ValleyDecomposition

_CHUNK = 4096


class WindowExceeded(RuntimeError):
    """The walk stepped outside a non-extendable environment window."""


@dataclass(frozen=True)
class WalkConfig:
    steps: int
    seed: int
    stream: int = 0
    start: int = 0
    reflected: bool = False
    targets: tuple[float, ...] = ()
    until: Optional[float] = None     # stop the walk when this level is hit
    record_path: bool = False

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("step budget must be at least 1")
        if self.reflected and self.start < 0:
            raise ValueError("reflected walks start at a nonnegative site")


@dataclass(frozen=True, eq=False)
class TrajectorySummary:
    config: WalkConfig
    final_position: int
    steps_taken: int
    hits: dict                       # level -> step index, or None if censored
    path: Optional[np.ndarray]
    reflected: bool

    def hit(self, level: float) -> Optional[int]:
        return self.hits[float(level)]

    def to_json(self) -> str:
        return json.dumps({
            "start": self.config.start,
            "steps": self.steps_taken,
            "final_position": self.final_position,
            "reflected": self.reflected,
            "seed": self.config.seed,
            "stream": self.config.stream,
            "hits": {repr(float(k)): v for k, v in self.hits.items()},
        }, sort_keys=True)

    def path_to_csv(self, path_file) -> None:
        if self.path is None:
            raise ValueError("path was not recorded")
        with open(path_file, "w", newline="\n") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "x"])
            for t, x in enumerate(self.path):
                w.writerow([t, int(x)])


def run(environment: Environment, config: WalkConfig) -> TrajectorySummary:
    """Simulate the nearest-neighbour walk; right steps have probability omega.

    Deterministic per (seed, stream): step t consumes draw t of the walk
    stream.  Model-backed environments are extended to the reachable
    window up front; leaving a fixed window is a hard error naming the
    site.
    """
    reflected = config.reflected or environment.reflected
    reach_lo = 0 if reflected else config.start - config.steps
    reach_hi = config.start + config.steps
    if environment.extendable and not environment.contains(reach_lo, reach_hi):
        environment = environment.extended(reach_lo, reach_hi)

    omega = environment.omega
    lo, hi = environment.lo, environment.hi
    if reflected and environment.omega_at(0) != 1.0:
        omega = omega.copy()
        omega[-lo] = 1.0

    targets = {float(lvl): math.floor(lvl) for lvl in config.targets}
    if config.until is not None:
        targets.setdefault(float(config.until), math.floor(config.until))
    until_site = math.floor(config.until) if config.until is not None else None
    hit_steps: dict[float, Optional[int]] = {lvl: None for lvl in targets}
    pending = {}
    for lvl, site in targets.items():
        pending.setdefault(site, []).append(lvl)
    pos = config.start
    if pos in pending:
        for lvl in pending.pop(pos):
            hit_steps[lvl] = 0
    key = rng.stream_key(config.seed, config.stream, rng.DOMAIN_WALK)
    path = np.empty(config.steps + 1, dtype=np.int64) if config.record_path else None
    if path is not None:
        path[0] = pos

    t = 0
    stop = until_site is not None and pos == until_site
    while t < config.steps and not stop:
        block = rng.uniform_block(key, t, min(_CHUNK, config.steps - t))
        for u in block:
            if not lo <= pos <= hi:
                raise WindowExceeded(f"site {pos} outside window [{lo}, {hi}]")
            pos = pos + 1 if u < omega[pos - lo] else pos - 1
            t += 1
            if path is not None:
                path[t] = pos
            if pos in pending:
                for lvl in pending.pop(pos):
                    hit_steps[lvl] = t
            if pos == until_site:
                stop = True
                break

    return TrajectorySummary(config=config, final_position=pos, steps_taken=t,
                             hits=hit_steps,
                             path=path[: t + 1] if path is not None else None,
                             reflected=reflected)


# -- embedded walk ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EmbeddedRecord:
    times: np.ndarray               # s_i, visit times of boundary sites
    values: np.ndarray              # Y_i = X_{s_i}
    boundary_sites: np.ndarray
    l_n: int                        # last embedded index at or before T
    xi: dict                        # valley index -> completed backtrack count
    total_backtracks: int
    partial: bool
    reflected: bool
    target_time: Optional[int]


def _boundary_layout(dec: ValleyDecomposition, reflected: bool) -> tuple[np.ndarray, int]:
    """(sites, index offset): global valley index = offset + local position."""
    if reflected:
        i0, sites = dec.reflected_boundaries()
        if len(sites) >= 2 and sites[0] == sites[1]:
            sites = sites[1:]           # K_{i0+1} may itself be the origin
        return sites, i0
    return dec.boundaries, 0


def extract_embedded(environment: Environment, dec: ValleyDecomposition,
                     traj: TrajectorySummary, nu: float) -> EmbeddedRecord:
    """Observe the path at boundary sites and count completed backtracks.

    xi[i] counts embedded moves K_{i+1} -> K_i finishing by the hitting
    time of n^nu; their total is the backtrack number entering the
    hitting-time decomposition.
    """
    if traj.path is None:
        raise ValueError("embedded extraction needs a recorded path")
    path = traj.path
    sites, offset = _boundary_layout(dec, traj.reflected)
    target = math.floor(dec.n ** nu)
    hit = np.flatnonzero(path == target)
    partial = hit.size == 0
    t_target = None if partial else int(hit[0])

    mask = np.isin(path, sites)
    times = np.flatnonzero(mask[1:]).astype(np.int64) + 1
    times = np.concatenate([[0], times])
    values = path[times]
    horizon = times[-1] if partial else t_target
    l_n = int(np.searchsorted(times, horizon, side="right") - 1)

    site_index = {int(s): offset + j for j, s in enumerate(sites)}
    xi: dict[int, int] = {}
    count = 0
    for j in range(l_n):
        a, b = int(values[j]), int(values[j + 1])
        if a in site_index and b in site_index:
            ia, ib = site_index[a], site_index[b]
            if ib == ia - 1:
                xi[ib] = xi.get(ib, 0) + 1
                count += 1
    return EmbeddedRecord(times=times, values=values, boundary_sites=sites,
                          l_n=l_n, xi=xi, total_backtracks=count,
                          partial=partial, reflected=traj.reflected,
                          target_time=t_target)


# -- exact time decomposition -------------------------------------------------


@dataclass(frozen=True)
class TimeComponents:
    initial: int
    direct: int
    backtrack: int
    left: int
    right: int
    target_time: int

    @property
    def total(self) -> int:
        return self.initial + self.direct + self.backtrack + self.left + self.right


def decompose_hitting_time(environment: Environment, dec: ValleyDecomposition,
                           traj: TrajectorySummary, nu: float) -> TimeComponents:
    """Split T_{n^nu} into initial, direct, backtrack, left and right parts.

    Every unit of time belongs to exactly one window between arrivals at
    distinct boundary sites.  A window ending with an up-passage is the
    crossing of its valley: the first crossing of the origin valley is
    initial, first crossings of valleys strictly between the origin
    valley and the target are direct, and any repeated crossing pays for
    a backtrack.  Windows ending with a down-passage are backtrack
    descents.  Activity at the leftmost boundary (the reflection origin,
    or the horizon boundary K_0) is the left component, and the stretch
    from the last boundary to the target is the right component.
    """
    if traj.path is None:
        raise ValueError("hitting-time decomposition needs a recorded path")
    if traj.config.start != 0:
        raise ValueError("decomposition is defined for walks started at 0")
    path = traj.path
    target = math.floor(dec.n ** nu)
    hit = np.flatnonzero(path == target)
    if hit.size == 0:
        raise ValueError("hitting time of the target level is censored")
    t_target = int(hit[0])
    reflected = traj.reflected
    sites, offset = _boundary_layout(dec, reflected)
    i0 = dec.i0
    i1 = dec.i1(nu)
    site_index = {int(s): offset + j for j, s in enumerate(sites)}

    segment = path[: t_target + 1]
    mask = np.isin(segment, sites)
    visit_times = np.flatnonzero(mask[1:]).astype(np.int64) + 1
    if mask[0]:
        visit_times = np.concatenate([[0], visit_times])

    init = direct = back = left = right = 0
    if visit_times.size == 0:
        return TimeComponents(initial=t_target, direct=0, backtrack=0, left=0,
                              right=0, target_time=t_target)

    # arrivals: visit times where the boundary site changes
    arr_t = [int(visit_times[0])]
    arr_b = [site_index[int(segment[visit_times[0]])]]
    for t in visit_times[1:]:
        b = site_index[int(segment[t])]
        if b != arr_b[-1]:
            arr_t.append(int(t))
            arr_b.append(b)

    init += arr_t[0]                       # head, up to the first boundary
    # the initial component also absorbs the first up-crossing of the
    # origin valley, but only when the walk met K_{i0} before K_{i0+1}
    init_pending = arr_b[0] == i0
    left_anchor = i0 if reflected else 0   # activity here belongs to "left"
    crossed: set[int] = set()
    for k in range(len(arr_t)):
        t_here, b_here = arr_t[k], arr_b[k]
        t_next = arr_t[k + 1] if k + 1 < len(arr_t) else t_target
        width = t_next - t_here
        if width == 0:
            continue
        if k + 1 == len(arr_t):
            right += width                 # tail: last boundary to the target
            continue
        b_next = arr_b[k + 1]
        if b_next == b_here + 1:           # up-passage: crossing of valley b_here
            if b_here == i0 and init_pending:
                init += width
                init_pending = False
            elif b_here == left_anchor:
                left += width              # climb out of the leftmost boundary
            elif b_here >= i1:
                right += width             # final crossing when the target is K_{i1+1}
            elif b_here >= i0 + 1 and b_here not in crossed:
                direct += width
            else:
                back += width              # repeated crossing repays a backtrack
            crossed.add(b_here)
        elif b_next == b_here - 1:         # down-passage: backtrack descent
            if b_next == left_anchor:
                left += width
            else:
                back += width
        else:
            raise AssertionError("embedded walk moved between non-adjacent boundaries")
    comps = TimeComponents(initial=init, direct=direct, backtrack=back,
                           left=left, right=right, target_time=t_target)
    if comps.total != t_target:
        raise AssertionError("time components failed to partition the path")
    return comps


# -- crossing probabilities ---------------------------------------------------


def crossing_probability(pot: Potential, dec: ValleyDecomposition, i: int) -> float:
    """P at K_i of backtracking to K_{i-1} before crossing to K_{i+1}.

    Log-domain evaluation of the potential-sum ratio; equals
    1 - exit_probability(K_{i-1}, K_i, K_{i+1}).
    """
    if not 1 <= i <= dec.valley_count - 1:
        raise ValueError(f"need 1 <= i <= {dec.valley_count - 1}")
    for j in (i - 1, i, i + 1):
        if dec.statuses[j] not in (CERTIFIED, ORIGIN):
            raise ValueError(f"boundary {j} is not certified")
    k_prev, k_mid, k_next = (int(dec.boundaries[j]) for j in (i - 1, i, i + 1))
    num = pot.logsumexp_v(k_mid, k_next - 1)
    den = pot.logsumexp_v(k_prev, k_next - 1)
    return math.exp(num - den)
