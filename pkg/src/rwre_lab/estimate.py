"""Monte Carlo probability estimation and moderate-deviation exponents.

Six event families (slowdown, backtracking, speedup; each as a position
event at time n or a hitting-time event) are estimated under the
quenched law (fixed environment) or the annealed law (fresh environment
per replica).  Exponent scans fit a weighted least-squares slope in the
transform the theory prescribes: single-log for polynomial decay,
double-log for stretched-exponential decay.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .env import Environment, EnvironmentModel, sample_environment
from .ensemble import run_ensemble

KINDS = ("slowdown-hit", "slowdown-pos", "backtrack-pos", "backtrack-hit",
         "speedup-pos", "speedup-hit")
SINGLE_LOG = "single-log"
DOUBLE_LOG = "double-log"
Z95 = 1.959963984540054


@dataclass(frozen=True)
class EventSpec:
    """One moderate-deviation event at scale n with displacement n^nu."""

    kind: str
    nu: float
    n: int
    reflected: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")
        if not 0.0 < self.nu < 1.0:
            raise ValueError("nu must lie in (0, 1)")
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if self.reflected and self.kind.startswith("backtrack"):
            raise ValueError("backtracking events need the walk on the whole line")

    @property
    def level(self) -> float:
        return -(self.n ** self.nu) if self.kind.startswith("backtrack") else self.n ** self.nu

    @property
    def target_site(self) -> int:
        return math.floor(self.level)

    def with_n(self, n: int) -> "EventSpec":
        return EventSpec(kind=self.kind, nu=self.nu, n=int(n), reflected=self.reflected)


def wilson_interval(successes: int, trials: int, z: float = Z95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if trials <= 0:
        raise ValueError("trials must be positive")
    p = successes / trials
    denom = 1.0 + z * z / trials
    center = (p + z * z / (2 * trials)) / denom
    half = (z / denom) * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials))
    return max(0.0, center - half), min(1.0, center + half)


@dataclass(frozen=True)
class ProbabilityEstimate:
    spec: EventSpec
    successes: int
    replicas: int
    seed: int
    law: str                      # "quenched" | "annealed"

    @property
    def p_hat(self) -> float:
        return self.successes / self.replicas

    @property
    def degenerate(self) -> bool:
        return self.successes in (0, self.replicas)

    def wilson(self, z: float = Z95) -> tuple[float, float]:
        return wilson_interval(self.successes, self.replicas, z)


def _event_plan(spec: EventSpec) -> tuple[list[int], int, str]:
    """(targets, budget, stop) handed to the ensemble engine."""
    if spec.kind == "slowdown-hit":
        return [spec.target_site], spec.n, "all"     # hit at <= n means T <= n
    if spec.kind in ("speedup-hit", "backtrack-hit"):
        return [spec.target_site], spec.n - 1, "all"  # strict T < n
    return [], spec.n, "never"


def _successes(spec: EventSpec, result) -> int:
    if spec.kind == "slowdown-hit":
        return int(np.sum(result.hit_step[:, 0] < 0))      # never hit: T > n
    if spec.kind in ("speedup-hit", "backtrack-hit"):
        return int(np.sum(result.hit_step[:, 0] >= 0))
    x = result.final_pos
    if spec.kind == "slowdown-pos":
        return int(np.sum(x < spec.n ** spec.nu))
    if spec.kind == "backtrack-pos":
        return int(np.sum(x < -(spec.n ** spec.nu)))
    return int(np.sum(x > spec.n ** spec.nu))              # speedup-pos


def quenched_probability(environment: Environment, spec: EventSpec, replicas: int,
                         seed: int, threads: int = 1) -> ProbabilityEstimate:
    """Estimate the event probability for one fixed environment.

    The environment window must cover [-n, n]; walks beyond it extend a
    model-backed environment deterministically.
    """
    if spec.reflected != environment.reflected:
        raise ValueError("spec and environment disagree on reflection")
    if not environment.extendable and not environment.contains(-spec.n, spec.n):
        raise ValueError("environment window must cover [-n, n]")
    targets, budget, stop = _event_plan(spec)
    res = run_ensemble(seed=seed, replicas=replicas, start=0, budget=budget,
                       targets=targets, stop=stop, environment=environment,
                       reflected=spec.reflected, threads=threads)
    return ProbabilityEstimate(spec=spec, successes=_successes(spec, res),
                               replicas=replicas, seed=seed, law="quenched")


def annealed_probability(model: EnvironmentModel, spec: EventSpec, replicas: int,
                         seed: int, threads: int = 1) -> ProbabilityEstimate:
    """Estimate the event probability with a fresh environment per replica."""
    targets, budget, stop = _event_plan(spec)
    res = run_ensemble(seed=seed, replicas=replicas, start=0, budget=budget,
                       targets=targets, stop=stop, model=model,
                       reflected=spec.reflected, threads=threads)
    return ProbabilityEstimate(spec=spec, successes=_successes(spec, res),
                               replicas=replicas, seed=seed, law="annealed")


def coupled_hit_probabilities(model_or_env, spec: EventSpec, nus: Sequence[float],
                              replicas: int, seed: int) -> dict:
    """Hitting-event estimates at several nu sharing every random draw.

    The walk does not depend on the target, so running one ensemble with
    all targets couples the events pathwise; slowdown-hit indicators are
    then monotone in nu replica by replica.
    """
    if not spec.kind.endswith("-hit"):
        raise ValueError("coupling applies to hitting-time events")
    specs = {nu: EventSpec(kind=spec.kind, nu=nu, n=spec.n, reflected=spec.reflected)
             for nu in nus}
    targets = [s.target_site for s in specs.values()]
    budget = spec.n if spec.kind == "slowdown-hit" else spec.n - 1
    kw = {"environment": model_or_env} if isinstance(model_or_env, Environment) \
        else {"model": model_or_env}
    law = "quenched" if isinstance(model_or_env, Environment) else "annealed"
    res = run_ensemble(seed=seed, replicas=replicas, start=0, budget=budget,
                       targets=targets, stop="all", reflected=spec.reflected, **kw)
    out = {}
    for k, (nu, s) in enumerate(specs.items()):
        hit = res.hit_step[:, k] >= 0
        succ = int(np.sum(~hit)) if spec.kind == "slowdown-hit" else int(np.sum(hit))
        out[nu] = ProbabilityEstimate(spec=s, successes=succ, replicas=replicas,
                                      seed=seed, law=law)
    return out


# -- analytic exponents -------------------------------------------------------


@dataclass(frozen=True)
class ExponentFormula:
    value: Optional[float]
    transform: Optional[str]
    covered: bool
    reason: Optional[str] = None


def theoretical_exponent(kappa: float, nu: float, kind: str, law: str,
                         reflected: bool = False) -> ExponentFormula:
    """The limit exponent a theorem provides for this event, if any.

    Quenched and annealed stretched-exponential events report the
    double-log exponent beta (probability roughly exp(-n^beta)); the
    annealed slowdown is polynomial and reports the single-log slope
    -(kappa - nu).
    """
    if kind not in KINDS:
        raise ValueError(f"unknown event kind {kind!r}")
    if law not in ("quenched", "annealed"):
        raise ValueError(f"unknown law {law!r}")

    def no(reason):
        return ExponentFormula(value=None, transform=None, covered=False, reason=reason)

    if kind.startswith("slowdown"):
        if not 0 < nu < min(1.0, kappa):
            return no("slowdown needs nu in (0, 1 and kappa)")
        if law == "annealed":
            return ExponentFormula(-(kappa - nu), SINGLE_LOG, True)
        if kind == "slowdown-hit" and reflected:
            return ExponentFormula(1.0 - nu / kappa, DOUBLE_LOG, True)
        return ExponentFormula(min(1.0 - nu / kappa, kappa / (kappa + 1.0)),
                               DOUBLE_LOG, True)
    if kind.startswith("backtrack"):
        if reflected:
            return no("backtracking is only defined without reflection")
        if not 0 < nu < 1:
            return no("backtracking needs nu in (0, 1)")
        if kind == "backtrack-hit" or law == "annealed":
            return ExponentFormula(nu, DOUBLE_LOG, True)
        return ExponentFormula(max(nu, kappa / (kappa + 1.0)), DOUBLE_LOG, True)
    # speedup
    if kappa >= 1:
        return no("speedup needs kappa < 1")
    if not kappa < nu < 1:
        return no("speedup needs nu in (kappa, 1)")
    return ExponentFormula((nu - kappa) / (1.0 - kappa), DOUBLE_LOG, True)


def exponent_curve(kappa: float, nu_grid: Sequence[float]) -> np.ndarray:
    """The piecewise quenched position-event exponent curve over (-1, 1).

    nu in (-1, 0]: backtracking beyond n^(-nu); nu in (0, kappa):
    slowdown below n^nu; nu in [kappa, 1): speedup beyond n^nu.
    """
    if not 0 < kappa < 1:
        raise ValueError("the exponent curve is defined for kappa in (0, 1)")
    out = np.empty(len(nu_grid))
    for i, nu in enumerate(nu_grid):
        if not -1.0 < nu < 1.0:
            raise ValueError("curve grid must stay inside (-1, 1)")
        if nu <= 0.0:
            out[i] = max(-nu, kappa / (kappa + 1.0))
        elif nu < kappa:
            out[i] = min(1.0 - nu / kappa, kappa / (kappa + 1.0))
        else:
            out[i] = (nu - kappa) / (1.0 - kappa)
    return out


# -- ladder scans -------------------------------------------------------------


@dataclass(frozen=True)
class LadderPoint:
    n: int
    successes: int
    replicas: int
    p_hat: float
    lo: float
    hi: float
    transform_value: float        # NaN when the transform is undefined


@dataclass(frozen=True, eq=False)
class ExponentEstimate:
    points: tuple[LadderPoint, ...]
    transform: Optional[str]
    slope: Optional[float]
    stderr: Optional[float]
    theory: Optional[float]
    diagnostics: dict

    @property
    def gap(self) -> Optional[float]:
        if self.slope is None or self.theory is None:
            return None
        return self.slope - self.theory

    def to_csv(self, path) -> None:
        with open(path, "w", newline="\n") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "p_hat", "lo", "hi", "transform_value"])
            for pt in self.points:
                w.writerow([pt.n, repr(pt.p_hat), repr(pt.lo), repr(pt.hi),
                            repr(pt.transform_value)])

    def summary(self) -> dict:
        return {
            "transform": self.transform,
            "slope": self.slope,
            "stderr": self.stderr,
            "theory": self.theory,
            "gap": self.gap,
            "diagnostics": self.diagnostics,
        }

    def to_json(self, path) -> None:
        with open(path, "w", newline="\n") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _transform_value(p: float, transform: str) -> float:
    if p <= 0.0 or p >= 1.0:
        return math.nan
    if transform == SINGLE_LOG:
        return math.log(p)
    return math.log(-math.log(p))


def _transform_variance(p: float, n_rep: int, transform: str) -> float:
    # delta method on p_hat with var p(1-p)/N
    base = p * (1.0 - p) / n_rep
    if transform == SINGLE_LOG:
        return base / (p * p)
    return base / (p * math.log(p)) ** 2


def weighted_slope(x: np.ndarray, y: np.ndarray, var: np.ndarray):
    """Inverse-variance weighted least squares of y on x; (slope, se, rms)."""
    w = 1.0 / np.asarray(var)
    A = np.column_stack([np.ones_like(x), x])
    atw = A.T * w
    cov = np.linalg.inv(atw @ A)
    beta = cov @ (atw @ y)
    resid = y - A @ beta
    rms = float(math.sqrt(np.average(resid ** 2, weights=w)))
    return float(beta[1]), float(math.sqrt(cov[1, 1])), rms


def fit_ladder_points(points: Sequence["LadderPoint"], transform: str):
    """(slope, stderr, rms, usable count); slope is None below 3 points."""
    usable = [pt for pt in points if math.isfinite(pt.transform_value)]
    if len(usable) < 3:
        return None, None, None, len(usable)
    x = np.array([math.log(pt.n) for pt in usable])
    y = np.array([pt.transform_value for pt in usable])
    var = np.array([_transform_variance(pt.p_hat, pt.replicas, transform)
                    for pt in usable])
    slope, stderr, rms = weighted_slope(x, y, var)
    return slope, stderr, rms, len(usable)


def exponent_scan(model: EnvironmentModel, spec_template: EventSpec,
                  n_ladder: Sequence[int], replicas: int, seed: int,
                  law: str = "annealed", environment: Optional[Environment] = None,
                  threads: int = 1) -> ExponentEstimate:
    """Estimate the event probability along the ladder and fit its exponent.

    The transform (single- or double-log) follows the covering theorem;
    points with degenerate p_hat are excluded; fewer than 3 usable
    points yields diagnostics but no fit.
    """
    if law not in ("quenched", "annealed"):
        raise ValueError(f"unknown law {law!r}")
    kappa = model.kappa
    formula = theoretical_exponent(kappa, spec_template.nu, spec_template.kind,
                                   law, spec_template.reflected)
    transform = formula.transform or (
        SINGLE_LOG if law == "annealed" and spec_template.kind.startswith("slowdown")
        else DOUBLE_LOG)

    if law == "quenched" and environment is None:
        n_max = max(n_ladder)
        environment = sample_environment(model, -n_max, n_max, seed=seed,
                                         stream=0, reflected=spec_template.reflected)

    points = []
    for j, n in enumerate(sorted(n_ladder)):
        spec = spec_template.with_n(n)
        point_seed = seed + 1000003 * (j + 1)
        if law == "annealed":
            est = annealed_probability(model, spec, replicas, point_seed, threads)
        else:
            est = quenched_probability(environment, spec, replicas, point_seed, threads)
        lo, hi = est.wilson()
        points.append(LadderPoint(n=n, successes=est.successes, replicas=replicas,
                                  p_hat=est.p_hat, lo=lo, hi=hi,
                                  transform_value=_transform_value(est.p_hat, transform)))

    slope, stderr, rms, n_usable = fit_ladder_points(points, transform)
    diagnostics = {
        "usable_points": n_usable,
        "law": law,
        "kind": spec_template.kind,
        "nu": spec_template.nu,
        "kappa": kappa,
        "notes": [],
    }
    if points and points[-1].successes < 50:
        diagnostics["notes"].append(
            f"only {points[-1].successes} successes at the largest n")
    if transform == DOUBLE_LOG:
        diagnostics["notes"].append(
            "double-log values carry log-scale corrections at desk n; "
            "treat point values as indicative, not converged")
    if slope is None:
        diagnostics["notes"].append("fewer than 3 usable ladder points: no fit")
    else:
        diagnostics["residual_rms"] = rms
    return ExponentEstimate(points=tuple(points), transform=transform, slope=slope,
                            stderr=stderr, theory=formula.value,
                            diagnostics=diagnostics)


def quenched_spread_scan(model: EnvironmentModel, spec_template: EventSpec,
                         n_ladder: Sequence[int], replicas: int, seed: int,
                         env_count: int = 5, threads: int = 1) -> list[ExponentEstimate]:
    """Quenched scans over independent environments, reporting the spread.

    The quenched statements are almost-sure limits over environments; a
    single realization carries no error bar, so several environments
    are scanned and their slopes compared instead.
    """
    out = []
    n_max = max(n_ladder)
    for e in range(env_count):
        environment = sample_environment(model, -n_max, n_max, seed=seed, stream=e,
                                         reflected=spec_template.reflected)
        out.append(exponent_scan(model, spec_template, n_ladder, replicas,
                                 seed + 7919 * e, law="quenched",
                                 environment=environment, threads=threads))
    return out


# -- KKS scaling check --------------------------------------------------------


@dataclass(frozen=True)
class KksSummary:
    n: int
    replicas: int
    kappa: float
    mean: float
    median: float
    quantiles: dict
    clamped: int                 # replicas with X_n <= 1 clamped to 2
    gap_median: float

    def to_json(self) -> str:
        d = dict(self.__dict__)
        d["quantiles"] = {str(k): v for k, v in self.quantiles.items()}
        return json.dumps(d, indent=2, sort_keys=True)


def kks_scaling_check(model: EnvironmentModel, n: int, replicas: int, seed: int,
                      threads: int = 1) -> KksSummary:
    """Distribution of ln max(X_n, 2) / ln n under the annealed law."""
    kappa = model.kappa
    res = run_ensemble(seed=seed, replicas=replicas, start=0, budget=n,
                       model=model, stop="never", threads=threads)
    x = res.final_pos
    clamped = int(np.sum(x <= 1))
    stat = np.log(np.maximum(x, 2)) / math.log(n)
    qs = {q: float(np.quantile(stat, q)) for q in (0.1, 0.25, 0.5, 0.75, 0.9)}
    med = float(np.median(stat))
    return KksSummary(n=n, replicas=replicas, kappa=kappa, mean=float(stat.mean()),
                      median=med, quantiles=qs, clamped=clamped,
                      gap_median=med - (kappa if kappa is not None else math.nan))
