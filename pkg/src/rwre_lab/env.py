"""Environment laws, realized environments, potentials and standing assumptions.

An environment model is the law of a single site probability omega in
(0, 1).  The derived quantities that drive everything downstream are the
log-ratio ln rho = ln((1-omega)/omega), its mean (which must be negative
for transience to the right), and the positive root kappa of
E[rho^s] = 1 when it exists.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
from scipy import integrate, optimize
from scipy.special import betainc, betaln, logsumexp
from scipy.stats import beta as beta_dist

from . import rng

PROB_ATOL = 1e-12
KAPPA_ATOL = 1e-9
EPSILON_GRID = (0.1, 0.5, 1.0, 2.0, 4.0)
DEFAULT_TRUNCATION = (1e-6, 1.0 - 1e-6)
_KAPPA_BRACKET_START = 1e-6
_KAPPA_BRACKET_CAP = 128.0

DISCRETE_KINDS = ("two-point", "finite-support")
KINDS = DISCRETE_KINDS + ("beta-truncated",)


class ModelError(ValueError):
    """Raised for malformed or assumption-violating environment models."""


class KappaSolveError(RuntimeError):
    """Raised when the root search for kappa does not converge."""


@dataclass(frozen=True)
class EnvironmentModel:
    """Parametric law of a single environment site omega_0 in (0, 1).

    kind is one of "two-point", "finite-support" (atoms of (omega, prob))
    or "beta-truncated" (Beta(alpha, beta) conditioned on a closed
    sub-interval of (0, 1)).  lattice is pure metadata recording whether
    ln rho_0 is supported on a lattice; nothing branches on it.
    """

    kind: str
    atoms: Optional[tuple[tuple[float, float], ...]] = None
    alpha: Optional[float] = None
    beta: Optional[float] = None
    support: Optional[tuple[float, float]] = None
    lattice: Optional[bool] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ModelError(f"unknown model kind {self.kind!r}")
        if self.kind in DISCRETE_KINDS:
            if not self.atoms:
                raise ModelError(f"{self.kind} model needs atoms")
            atoms = tuple((float(w), float(p)) for w, p in self.atoms)
            object.__setattr__(self, "atoms", atoms)
            if self.kind == "two-point" and len(atoms) != 2:
                raise ModelError("two-point model needs exactly 2 atoms")
            total = math.fsum(p for _, p in atoms)
            if abs(total - 1.0) > PROB_ATOL:
                raise ModelError(f"atom probabilities sum to {total!r}, not 1")
            for w, p in atoms:
                if not (0.0 < w < 1.0):
                    raise ModelError(f"atom value {w!r} not strictly inside (0, 1)")
                if p <= 0.0:
                    raise ModelError(f"atom probability {p!r} not positive")
        else:
            if self.alpha is None or self.beta is None:
                raise ModelError("beta-truncated model needs alpha and beta")
            if self.alpha <= 0 or self.beta <= 0:
                raise ModelError("beta shape parameters must be positive")
            sup = tuple(self.support) if self.support else DEFAULT_TRUNCATION
            object.__setattr__(self, "support", sup)
            lo, hi = sup
            if not (0.0 < lo < hi < 1.0):
                raise ModelError(f"truncation bounds {sup!r} not inside (0, 1)")

    # -- rho = (1 - omega) / omega ------------------------------------

    def rho_atoms(self) -> tuple[np.ndarray, np.ndarray]:
        w = np.array([a[0] for a in self.atoms])
        p = np.array([a[1] for a in self.atoms])
        return (1.0 - w) / w, p

    def log_moment(self, s: float) -> float:
        """ln E[rho_0^s], evaluated stably for positive and negative s."""
        if self.kind in DISCRETE_KINDS:
            rho, p = self.rho_atoms()
            return float(logsumexp(np.log(p) + s * np.log(rho)))
        return self._beta_log_moment(s)

    def moment(self, s: float) -> float:
        return math.exp(self.log_moment(s))

    def _beta_density(self, w):
        lo, hi = self.support
        z = betainc(self.alpha, self.beta, hi) - betainc(self.alpha, self.beta, lo)
        lognorm = betaln(self.alpha, self.beta) + math.log(z)
        return np.exp((self.alpha - 1) * np.log(w) + (self.beta - 1) * np.log1p(-w) - lognorm)

    def _beta_log_moment(self, s: float) -> float:
        lo, hi = self.support
        logrho = lambda w: np.log1p(-w) - np.log(w)
        # s*ln(rho) is monotone decreasing in w, so its max sits at an
        # endpoint.  Factor it out only when e^{s ln rho} would overflow;
        # otherwise integrate directly, which conditions quad better.
        m = max(s * logrho(lo), s * logrho(hi), 0.0)
        if m < 600.0:
            m = 0.0
        # quad needs help around the truncation edges, where the integrand
        # can spike on scales of lo or 1-hi; hand it geometric ladders.
        pts = set()
        for k in range(7):
            pts.add(min(lo + lo * 10.0 ** k, hi))
            pts.add(max(hi - (1.0 - hi) * 10.0 ** k, lo))
        points = sorted(p for p in pts if lo < p < hi)
        val, err = integrate.quad(
            lambda w: np.exp(s * logrho(w) - m) * self._beta_density(w),
            lo, hi, limit=500, epsabs=1e-300, epsrel=1e-12, points=points,
        )
        if not np.isfinite(val) or val <= 0 or err > 1e-8 * abs(val):
            raise KappaSolveError(f"quadrature for E[rho^{s}] did not converge")
        return m + math.log(val)

    @cached_property
    def mean_log_rho(self) -> float:
        """E[ln rho_0]; must be < 0 for the walk to be transient right."""
        if self.kind in DISCRETE_KINDS:
            rho, p = self.rho_atoms()
            return float(np.sum(p * np.log(rho)))
        lo, hi = self.support
        val, _ = integrate.quad(
            lambda w: (np.log1p(-w) - np.log(w)) * self._beta_density(w), lo, hi, limit=200
        )
        return float(val)

    @cached_property
    def kappa(self) -> Optional[float]:
        return solve_kappa(self)

    def kappa_ln_plus_moment(self) -> Optional[float]:
        """E[rho^kappa * max(ln rho, 0)], finite for all supported models."""
        if self.kappa is None:
            return None
        k = self.kappa
        if self.kind in DISCRETE_KINDS:
            rho, p = self.rho_atoms()
            return float(np.sum(p * rho ** k * np.maximum(np.log(rho), 0.0)))
        lo, hi = self.support
        logrho = lambda w: np.log1p(-w) - np.log(w)
        val, _ = integrate.quad(
            lambda w: np.exp(k * logrho(w)) * max(logrho(w), 0.0) * self._beta_density(w),
            lo, hi, limit=200,
        )
        return float(val)

    # -- sampling ------------------------------------------------------

    def sample_omegas(self, u: np.ndarray) -> np.ndarray:
        """Map uniforms in [0, 1) to omega draws by inverse CDF."""
        if self.kind in DISCRETE_KINDS:
            w = np.array([a[0] for a in self.atoms])
            p = np.array([a[1] for a in self.atoms])
            cum = np.cumsum(p)
            cum[-1] = 1.0
            return w[np.searchsorted(cum, u, side="right")]
        lo, hi = self.support
        c_lo = beta_dist.cdf(lo, self.alpha, self.beta)
        c_hi = beta_dist.cdf(hi, self.alpha, self.beta)
        vals = beta_dist.ppf(c_lo + u * (c_hi - c_lo), self.alpha, self.beta)
        return np.clip(vals, lo, hi)

    def sample_log_rhos(self, u: np.ndarray) -> np.ndarray:
        w = self.sample_omegas(u)
        return np.log1p(-w) - np.log(w)

    # -- config round trip --------------------------------------------

    def to_config(self) -> dict:
        cfg = {"kind": self.kind}
        if self.kind in DISCRETE_KINDS:
            cfg["atoms"] = [[w, p] for w, p in self.atoms]
        else:
            cfg["alpha"] = self.alpha
            cfg["beta"] = self.beta
            cfg["support"] = list(self.support)
        if self.lattice is not None:
            cfg["lattice"] = self.lattice
        return cfg

    @classmethod
    def from_config(cls, cfg: dict) -> "EnvironmentModel":
        kind = cfg.get("kind")
        if kind in DISCRETE_KINDS:
            return cls(kind=kind, atoms=tuple(tuple(a) for a in cfg["atoms"]),
                       lattice=cfg.get("lattice"))
        if kind == "beta-truncated":
            return cls(kind=kind, alpha=cfg["alpha"], beta=cfg["beta"],
                       support=tuple(cfg["support"]) if "support" in cfg else None,
                       lattice=cfg.get("lattice"))
        raise ModelError(f"unknown model kind {kind!r}")


def two_point_from_rhos(rho_hi: float, p_hi: float, rho_lo: float,
                        lattice: Optional[bool] = None) -> EnvironmentModel:
    """Two-point model given as rho atoms; omega = 1/(1+rho)."""
    return EnvironmentModel(
        kind="two-point",
        atoms=((1.0 / (1.0 + rho_hi), p_hi), (1.0 / (1.0 + rho_lo), 1.0 - p_hi)),
        lattice=lattice,
    )


def solve_kappa(model: EnvironmentModel) -> Optional[float]:
    """Unique positive root of E[rho_0^s] = 1, or None when there is none.

    ln E[rho^s] is convex with negative slope at 0, so it dips below 0
    and crosses back up exactly once iff rho can exceed 1.  The bracket
    doubles from 1e-6; if the moment has not crossed 1 by s = 128 the
    search fails loudly rather than returning a default.
    """
    if model.mean_log_rho >= 0:
        raise ModelError("kappa is defined only for models with E[ln rho] < 0")
    if model.kind in DISCRETE_KINDS:
        rho, _ = model.rho_atoms()
        if float(np.max(rho)) <= 1.0:
            return None  # m(s) < 1 for all s > 0, no crossing
    s = _KAPPA_BRACKET_START
    prev = s
    while True:
        try:
            lm = model.log_moment(s)
        except OverflowError:
            lm = math.inf
        if not math.isfinite(lm):
            return None  # moment diverged before crossing 1
        if lm > 0.0:
            break
        if s >= _KAPPA_BRACKET_CAP:
            if model.kind == "beta-truncated":
                lo, _ = model.support
                if lo >= 0.5:
                    return None  # rho <= 1 a.s., no crossing
            raise KappaSolveError(
                f"moment never crossed 1 for s up to {_KAPPA_BRACKET_CAP}"
            )
        prev = s
        s = min(2.0 * s, _KAPPA_BRACKET_CAP)
    root = optimize.brentq(model.log_moment, prev, s, xtol=1e-14, rtol=8.9e-16, maxiter=200)
    if abs(model.moment(root) - 1.0) > KAPPA_ATOL:
        raise KappaSolveError(f"root {root} fails |E[rho^k]-1| <= {KAPPA_ATOL}")
    return float(root)


@dataclass(frozen=True)
class AssumptionReport:
    """Which of the standing hypotheses a model satisfies, with numbers."""

    mean_log_rho: float
    drift_ok: bool                      # E[ln rho] < 0
    kappa: Optional[float]
    kappa_residual: Optional[float]     # |E[rho^kappa] - 1|
    kappa_ln_plus_moment: Optional[float]
    kappa_ok: bool
    neg_moments: dict                   # eps -> E[rho^-eps] or None ("unknown")
    epsilon0: Optional[float]           # largest grid eps with finite moment
    integrability_ok: bool
    lattice: Optional[bool]
    sub_ballistic: Optional[bool]       # kappa <= 1
    all_ok: bool

    def to_json(self) -> str:
        d = dict(self.__dict__)
        d["neg_moments"] = {str(k): v for k, v in self.neg_moments.items()}
        return json.dumps(d, indent=2, sort_keys=True)


def validate_assumptions(model: EnvironmentModel,
                         epsilon_grid: Sequence[float] = EPSILON_GRID) -> AssumptionReport:
    """Check transience, the kappa root and the negative-moment bound.

    Negative moments are exact sums for discrete models and adaptive
    quadrature for beta-truncated ones; a non-converging quadrature is
    reported as None (unknown), never as a failure.
    """
    mlr = model.mean_log_rho
    drift_ok = mlr < 0

    kappa = None
    kappa_residual = None
    ln_plus = None
    if drift_ok:
        try:
            kappa = model.kappa
        except KappaSolveError:
            kappa = None
        if kappa is not None:
            kappa_residual = abs(model.moment(kappa) - 1.0)
            ln_plus = model.kappa_ln_plus_moment()
    kappa_ok = kappa is not None and ln_plus is not None and math.isfinite(ln_plus)

    neg_moments = {}
    epsilon0 = None
    for eps in epsilon_grid:
        try:
            val = model.moment(-eps)
        except (KappaSolveError, OverflowError):
            val = None
        neg_moments[eps] = val
        if val is not None and math.isfinite(val):
            epsilon0 = eps
    integrability_ok = epsilon0 is not None

    return AssumptionReport(
        mean_log_rho=mlr,
        drift_ok=drift_ok,
        kappa=kappa,
        kappa_residual=kappa_residual,
        kappa_ln_plus_moment=ln_plus,
        kappa_ok=kappa_ok,
        neg_moments=neg_moments,
        epsilon0=epsilon0,
        integrability_ok=integrability_ok,
        lattice=model.lattice,
        sub_ballistic=(kappa <= 1.0) if kappa is not None else None,
        all_ok=drift_ok and kappa_ok and integrability_ok,
    )


@dataclass(frozen=True, eq=False)
class Environment:
    """A realized environment omega on an integer window containing 0."""

    lo: int
    hi: int
    omega: np.ndarray
    reflected: bool = False
    seed_record: Optional[tuple[int, int]] = None
    model: Optional[EnvironmentModel] = field(default=None, repr=False)

    def __post_init__(self):
        if not (self.lo <= 0 <= self.hi):
            raise ValueError(f"window [{self.lo}, {self.hi}] must contain 0")
        om = np.asarray(self.omega, dtype=np.float64)
        if om.shape != (self.hi - self.lo + 1,):
            raise ValueError("omega length does not match window")
        interior = om.copy()
        if self.reflected:
            if om[-self.lo] != 1.0:
                raise ValueError("reflected environment must have omega_0 == 1")
            interior[-self.lo] = 0.5
        if np.any(interior <= 0.0) or np.any(interior >= 1.0):
            raise ValueError("omega values must lie strictly inside (0, 1)")
        om.flags.writeable = False
        object.__setattr__(self, "omega", om)

    def omega_at(self, sites) -> np.ndarray:
        idx = np.asarray(sites, dtype=np.int64) - self.lo
        return self.omega[idx]

    def contains(self, lo: int, hi: int) -> bool:
        return self.lo <= lo and hi <= self.hi

    @property
    def extendable(self) -> bool:
        return self.model is not None and self.seed_record is not None

    def extended(self, lo: int, hi: int) -> "Environment":
        """Same environment on a larger window (model-backed only).

        Site draws are keyed by site index, so the overlap is bit-identical.
        """
        lo, hi = min(lo, self.lo), max(hi, self.hi)
        if (lo, hi) == (self.lo, self.hi):
            return self
        if not self.extendable:
            raise ValueError("environment has no model attached; cannot extend")
        seed, stream = self.seed_record
        return sample_environment(self.model, lo, hi, seed, stream, self.reflected)

    def to_jsonl(self, path) -> None:
        with open(path, "w", newline="\n") as fh:
            meta = {"lo": self.lo, "hi": self.hi, "reflected": self.reflected}
            if self.seed_record is not None:
                meta["seed"], meta["stream"] = self.seed_record
            fh.write(json.dumps(meta) + "\n")
            for i, w in zip(range(self.lo, self.hi + 1), self.omega):
                fh.write(json.dumps({"site": i, "omega": float(w)}) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> "Environment":
        with open(path) as fh:
            meta = json.loads(fh.readline())
            omega = np.empty(meta["hi"] - meta["lo"] + 1)
            for line in fh:
                rec = json.loads(line)
                omega[rec["site"] - meta["lo"]] = rec["omega"]
        seed_record = (meta["seed"], meta["stream"]) if "seed" in meta else None
        return cls(lo=meta["lo"], hi=meta["hi"], omega=omega,
                   reflected=meta["reflected"], seed_record=seed_record)


def sample_environment(model: EnvironmentModel, lo: int, hi: int, seed: int,
                       stream: int = 0, reflected: bool = False) -> Environment:
    """Draw i.i.d. omega per site, keyed by (seed, stream, site index)."""
    if not (lo <= 0 <= hi):
        raise ValueError(f"window [{lo}, {hi}] must contain 0")
    key = rng.stream_key(seed, stream, rng.DOMAIN_ENV)
    u = rng.uniform_block(key, lo, hi - lo + 1)
    omega = model.sample_omegas(u)
    if reflected:
        omega = omega.copy()
        omega[-lo] = 1.0
    return Environment(lo=lo, hi=hi, omega=omega, reflected=reflected,
                       seed_record=(seed, stream), model=model)


def constant_environment(omega: float, lo: int, hi: int,
                         reflected: bool = False) -> Environment:
    values = np.full(hi - lo + 1, float(omega))
    if reflected:
        values[-lo] = 1.0
    return Environment(lo=lo, hi=hi, omega=values, reflected=reflected)


@dataclass(frozen=True, eq=False)
class Potential:
    """Potential V and reversible measure pi of a realized environment.

    V(0) = 0, V(x) - V(x-1) = ln rho_x, stored on [lo-1, hi] so that
    pi(x) = e^{-V(x)} + e^{-V(x-1)} is available on the whole window.
    All interval masses are assembled in log-domain; drifted windows of
    length 1e5 put |V| in the hundreds, far beyond exp() range.
    """

    env: Environment
    values: np.ndarray  # V on [lo-1, hi]

    @property
    def lo(self) -> int:
        return self.env.lo

    @property
    def hi(self) -> int:
        return self.env.hi

    def _idx(self, x) -> np.ndarray:
        return np.asarray(np.floor(x), dtype=np.int64) - (self.lo - 1)

    def v(self, x):
        """V(x), real arguments resolved by floor."""
        return self.values[self._idx(x)]

    def log_pi(self, x):
        i = self._idx(x)
        return np.logaddexp(-self.values[i], -self.values[i - 1])

    def pi(self, x):
        return np.exp(self.log_pi(x))

    def log_pi_interval(self, x: float, y: float) -> float:
        """ln pi([x, y]) = ln sum_{i=floor(x)-1}^{floor(y)} pi(i)."""
        a = math.floor(x) - 1
        b = math.floor(y)
        sites = np.arange(a, b + 1)
        return float(logsumexp(self.log_pi(sites)))

    def logsumexp_v(self, a: int, b: int) -> float:
        """ln sum_{y=a}^{b} e^{V(y)} over integer sites."""
        if b < a:
            return -math.inf
        return float(logsumexp(self.values[a - (self.lo - 1): b - (self.lo - 1) + 1]))

    def omega_at(self, sites):
        return self.env.omega_at(sites)


def build_potential(env: Environment) -> Potential:
    """Prefix-sum the log-ratios into V with V(0) = 0.

    For a reflected environment ln rho_0 = -inf, so V(x) = +inf for
    x < 0 and pi vanishes there; the nonnegative side, where the
    reflected walk lives, is unaffected.
    """
    with np.errstate(divide="ignore"):
        lnrho = np.log1p(-env.omega) - np.log(env.omega)
    n_right = env.hi
    n_left = -env.lo
    values = np.empty(env.hi - env.lo + 2)
    values[n_left + 1] = 0.0  # V(0)
    if n_right > 0:
        values[n_left + 2:] = np.cumsum(lnrho[n_left + 1:])
    if n_left > 0:
        # V(x) for x in [lo-1, -1]: reverse cumulative sums of -ln rho
        left = -np.cumsum(lnrho[:n_left + 1][::-1])
        values[:n_left + 1] = left[::-1]
    else:
        values[0] = -lnrho[0]
    return Potential(env=env, values=values)


def detailed_balance_residual(pot: Potential) -> float:
    """Max |ln(omega_x pi(x)) - ln((1-omega_{x+1}) pi(x+1))| over the window.

    omega_x pi(x) = e^{-V(x)} algebraically, so the residual is pure
    floating-point error.  Sites where both sides vanish (reflected
    origin) contribute zero.
    """
    env = pot.env
    x = np.arange(env.lo, env.hi)
    with np.errstate(divide="ignore", invalid="ignore"):
        lhs = np.log(env.omega_at(x)) + pot.log_pi(x)
        rhs = np.log1p(-env.omega_at(x + 1)) + pot.log_pi(x + 1)
        diff = np.abs(lhs - rhs)
    diff[np.isneginf(lhs) & np.isneginf(rhs)] = 0.0
    return float(np.max(diff)) if diff.size else 0.0
