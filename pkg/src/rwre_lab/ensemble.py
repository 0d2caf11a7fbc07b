"""Vectorized walker ensembles for Monte Carlo estimation.

Replicas advance in lockstep across a batch; draws are content-addressed
(seed, replica id, step) for the walk and (seed, replica id, site) for
annealed environments, so results are identical under any batching,
compaction or thread split.  Finished replicas are compacted away, which
is what makes hitting-type events cheap at large n.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import rng
from .env import Environment, EnvironmentModel

_GROW = 64
_ROW_BATCH_NEVER = 8192       # replicas per batch when all run the full budget
_ROW_BATCH_HIT = 65536


class WindowExceeded(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class EnsembleResult:
    replicas: int
    targets: tuple[int, ...]
    hit_step: np.ndarray                 # (replicas, len(targets)); -1 = no hit
    final_pos: Optional[np.ndarray]      # only when stop == "never"
    budget: int

    def hit_within(self, target_col: int, t: int) -> np.ndarray:
        h = self.hit_step[:, target_col]
        return (h >= 0) & (h <= t)


class _QuenchedTable:
    """Shared environment row, extended on demand for model-backed envs."""

    def __init__(self, environment: Environment):
        self.env = environment
        self.omega = environment.omega
        self.lo, self.hi = environment.lo, environment.hi

    def ensure(self, lo_need: int, hi_need: int) -> None:
        if lo_need >= self.lo and hi_need <= self.hi:
            return
        if not self.env.extendable:
            site = lo_need if lo_need < self.lo else hi_need
            raise WindowExceeded(
                f"walk reached site {site} outside window [{self.lo}, {self.hi}]")
        grow = max(_GROW, (self.hi - self.lo) // 2)
        self.env = self.env.extended(min(lo_need, self.lo) - grow,
                                     max(hi_need, self.hi) + grow)
        self.omega, self.lo, self.hi = self.env.omega, self.env.lo, self.env.hi

    def compact(self, keep: np.ndarray) -> None:
        pass

    def lookup(self, pos: np.ndarray) -> np.ndarray:
        return self.omega[pos - self.lo]


class _AnnealedTable:
    """Per-replica environment columns, sampled lazily by site index."""

    def __init__(self, model: EnvironmentModel, env_keys: np.ndarray,
                 lo: int, hi: int, reflected: bool):
        self.model = model
        self.keys = env_keys
        self.reflected = reflected
        self.lo, self.hi = lo, hi
        self.table = self._sample(env_keys, lo, hi)

    def _sample(self, keys: np.ndarray, lo: int, hi: int) -> np.ndarray:
        u = rng.uniform_grid(keys, np.arange(lo, hi + 1, dtype=np.int64))
        omega = self.model.sample_omegas(u)
        if self.reflected and lo <= 0 <= hi:
            omega[:, -lo] = 1.0
        return omega

    def ensure(self, lo_need: int, hi_need: int) -> None:
        grow = max(_GROW, (self.hi - self.lo) // 2)
        if lo_need < self.lo:
            new_lo = min(lo_need, self.lo) - grow
            block = self._sample(self.keys, new_lo, self.lo - 1)
            self.table = np.concatenate([block, self.table], axis=1)
            self.lo = new_lo
        if hi_need > self.hi:
            new_hi = max(hi_need, self.hi) + grow
            block = self._sample(self.keys, self.hi + 1, new_hi)
            self.table = np.concatenate([self.table, block], axis=1)
            self.hi = new_hi

    def compact(self, keep: np.ndarray) -> None:
        self.keys = self.keys[keep]
        self.table = self.table[keep]

    def lookup(self, pos: np.ndarray) -> np.ndarray:
        return self.table[np.arange(pos.size), pos - self.lo]


def _run_batch(*, seed: int, ids: np.ndarray, start: int, budget: int,
               targets: Sequence[int], stop: str,
               environment: Optional[Environment],
               model: Optional[EnvironmentModel], reflected: bool,
               record_final: bool) -> tuple[np.ndarray, Optional[np.ndarray]]:
    n_rep = ids.size
    n_tgt = len(targets)
    tgt = np.asarray(targets, dtype=np.int64)
    hit = np.full((n_rep, n_tgt), -1, dtype=np.int64)
    final = np.zeros(n_rep, dtype=np.int64) if record_final else None

    if environment is not None:
        table = _QuenchedTable(environment)
    else:
        table = _AnnealedTable(model, rng.stream_keys(seed, ids, rng.DOMAIN_ENV),
                               start - _GROW, start + _GROW, reflected)

    # compacted working set: arrays below always align row-for-row
    out = np.arange(n_rep)                        # output row of each walker
    keys = rng.stream_keys(seed, ids, rng.DOMAIN_WALK)
    pos = np.full(n_rep, start, dtype=np.int64)
    hit_local = np.full((n_rep, n_tgt), -1, dtype=np.int64)
    hit_local[:, tgt == start] = 0

    def retire(done: np.ndarray) -> None:
        nonlocal out, keys, pos, hit_local
        hit[out[done]] = hit_local[done]
        keep = ~done
        out, keys, pos, hit_local = out[keep], keys[keep], pos[keep], hit_local[keep]
        table.compact(keep)

    if n_tgt and stop != "never":
        done0 = ((hit_local >= 0).all(axis=1) if stop == "all"
                 else (hit_local >= 0).any(axis=1))
        if done0.any():
            retire(done0)

    for t in range(budget):
        if pos.size == 0:
            break
        table.ensure(int(pos.min()) - 1, int(pos.max()) + 1)
        w = table.lookup(pos)
        u = rng.uniforms_at(keys, t)
        pos = np.where(u < w, pos + 1, pos - 1)
        if n_tgt:
            done = None
            for k in range(n_tgt):
                at = (pos == tgt[k]) & (hit_local[:, k] < 0)
                if at.any():
                    hit_local[at, k] = t + 1
            if stop == "all":
                done = (hit_local >= 0).all(axis=1)
            elif stop == "any":
                done = (hit_local >= 0).any(axis=1)
            if done is not None and done.any():
                retire(done)

    if pos.size:
        hit[out] = hit_local
        if record_final:
            final[out] = pos
    return hit, final


def run_ensemble(*, seed: int, replicas: int, start: int, budget: int,
                 targets: Sequence[int] = (), stop: str = "never",
                 environment: Optional[Environment] = None,
                 model: Optional[EnvironmentModel] = None,
                 reflected: bool = False, threads: int = 1,
                 first_id: int = 0) -> EnsembleResult:
    """Run `replicas` independent walks and collect first-hit steps.

    Exactly one of (environment, model) is given: a fixed environment
    makes the ensemble quenched, a model draws a fresh environment per
    replica (annealed).  stop: "never" runs every replica the full
    budget and records final positions; "all"/"any" retire a replica
    once all/any targets are hit.  Replica r uses streams keyed by
    first_id + r regardless of batching or threads.
    """
    if (environment is None) == (model is None):
        raise ValueError("give exactly one of environment or model")
    if stop not in ("never", "all", "any"):
        raise ValueError(f"unknown stop mode {stop!r}")
    if environment is not None and reflected and not environment.reflected:
        raise ValueError("reflected ensemble needs a reflected environment")
    record_final = stop == "never"
    row_batch = _ROW_BATCH_NEVER if record_final else _ROW_BATCH_HIT

    ids = np.arange(first_id, first_id + replicas, dtype=np.int64)
    chunks = [ids[i: i + row_batch] for i in range(0, replicas, row_batch)]

    def work(chunk):
        return _run_batch(seed=seed, ids=chunk, start=start, budget=budget,
                          targets=targets, stop=stop, environment=environment,
                          model=model, reflected=reflected,
                          record_final=record_final)

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(work, chunks))
    else:
        parts = [work(c) for c in chunks]

    hit = (np.concatenate([p[0] for p in parts], axis=0) if parts
           else np.zeros((0, len(targets)), dtype=np.int64))
    final = (np.concatenate([p[1] for p in parts]) if record_final else None)
    return EnsembleResult(replicas=replicas, targets=tuple(int(t) for t in targets),
                          hit_step=hit, final_pos=final, budget=budget)
