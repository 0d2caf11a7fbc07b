"""Batch command-line entry point.

One JSON config per run (sections: model, run, event, ladder, curve,
oracle, output); flags override scalar fields only.  Every command
writes its outputs plus a manifest carrying the full configuration
echo, the seed and stream allocation, wall-clock, and a sha256 digest
of each output file.  Re-running a manifest reproduces the outputs
byte for byte.

Exit codes: 0 success, 2 configuration error, 3 property failure,
4 budget exceeded.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, valleys as valleys_mod, exact, estimate as est_mod, walk as walk_mod
from .env import (EnvironmentModel, ModelError, build_potential,
                  sample_environment, validate_assumptions)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PROPERTY = 3
EXIT_BUDGET = 4

THREADS_ENV_VAR = "RWRE_LAB_THREADS"


class ConfigError(ValueError):
    pass


class BudgetExhausted(RuntimeError):
    pass


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def _load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as ex:
        raise ConfigError(f"cannot read config: {ex}")
    except json.JSONDecodeError as ex:
        raise ConfigError(f"config parse error at line {ex.lineno}, column {ex.colno}: {ex.msg}")
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    if "config" in cfg and "outputs" in cfg:
        cfg = cfg["config"]        # a manifest was passed; re-run its config
    return cfg


def _model_from(cfg: dict) -> EnvironmentModel:
    if "model" not in cfg:
        raise ConfigError("missing section: model")
    try:
        return EnvironmentModel.from_config(cfg["model"])
    except (ModelError, KeyError, TypeError) as ex:
        raise ConfigError(f"invalid model: {ex}")


def _resolve_threads(args, run: dict) -> int:
    if args.threads is not None:
        return args.threads
    env_val = os.environ.get(THREADS_ENV_VAR)
    if env_val:
        try:
            return max(1, int(env_val))
        except ValueError:
            raise ConfigError(f"{THREADS_ENV_VAR} must be an integer")
    return int(run.get("threads", 1))


def _write_manifest(out_dir: Path, command: str, cfg: dict, seed: int,
                    streams: dict, replicas, wall: float, outputs: list[Path],
                    partial: bool = False) -> Path:
    manifest = {
        "tool": "rwre-lab",
        "version": __version__,
        "command": command,
        "config": cfg,
        "seed": seed,
        "streams": streams,
        "replicas": replicas,
        "wall_clock_s": wall,
        "partial": partial,
        "outputs": {p.name: _sha256(p) for p in outputs},
    }
    path = out_dir / "manifest.json"
    with open(path, "w", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _out_dir(cfg: dict, args) -> Path:
    out = args.out or cfg.get("output", {}).get("dir")
    if not out:
        raise ConfigError("missing output directory (output.dir or --out)")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _seed_of(cfg: dict, args) -> int:
    if args.seed is not None:
        return args.seed
    run = cfg.get("run", {})
    if "seed" not in run:
        raise ConfigError("missing field: run.seed")
    return int(run["seed"])


# -- commands -----------------------------------------------------------------


def cmd_env_check(cfg: dict, args) -> int:
    t0 = time.time()
    out = _out_dir(cfg, args)
    model = _model_from(cfg)
    report = validate_assumptions(model)
    path = out / "env_check.json"
    path.write_text(report.to_json() + "\n")
    _write_manifest(out, "env-check", cfg, seed=0, streams={}, replicas=0,
                    wall=time.time() - t0, outputs=[path])
    if not report.drift_ok:
        print(f"transience assumption fails: E[ln rho] = {report.mean_log_rho:.6g} >= 0",
              file=sys.stderr)
        return EXIT_PROPERTY
    if not report.all_ok:
        print("model fails a standing assumption; see env_check.json", file=sys.stderr)
        return EXIT_PROPERTY
    print(f"env-check ok: kappa={report.kappa}, epsilon0={report.epsilon0}")
    return EXIT_OK


def cmd_valleys(cfg: dict, args) -> int:
    t0 = time.time()
    out = _out_dir(cfg, args)
    model = _model_from(cfg)
    run = cfg.get("run", {})
    seed = _seed_of(cfg, args)
    try:
        n = run["n"]
        window = run.get("window") or [-int(2 * n), int(4 * n)]
        nu = float(run.get("nu", 0.5))
        m = int(run.get("m", 4))
        stream = int(run.get("env_stream", 0))
    except KeyError as ex:
        raise ConfigError(f"missing field: run.{ex.args[0]}")
    kappa = model.kappa
    if kappa is None:
        raise ConfigError("model has no kappa; valley thresholds undefined")
    envr = sample_environment(model, int(window[0]), int(window[1]), seed, stream)
    dec = valleys_mod.decompose(build_potential(envr), n, kappa)
    report = valleys_mod.check_events(envr, dec, n, nu, m)
    csv_path = out / "valleys.csv"
    dec.to_csv(csv_path)
    ev_path = out / "events.json"
    ev_path.write_text(report.to_json() + "\n")
    _write_manifest(out, "valleys", cfg, seed=seed,
                    streams={"environment": f"seed={seed} stream={stream} (env domain)"},
                    replicas=0, wall=time.time() - t0, outputs=[csv_path, ev_path])
    print(f"valleys: {dec.valley_count} valleys, {dec.certified_boundary_count} certified")
    return EXIT_OK


def cmd_simulate(cfg: dict, args) -> int:
    t0 = time.time()
    out = _out_dir(cfg, args)
    model = _model_from(cfg)
    run = cfg.get("run", {})
    seed = _seed_of(cfg, args)
    count = int(run.get("count", 1))
    if args.replicas is not None:
        count = args.replicas
    steps = int(run.get("steps", 0))
    if steps < 1:
        raise ConfigError("run.steps must be at least 1")
    window = run.get("window") or [-steps, steps]
    reflected = bool(run.get("reflected", False))
    envr = sample_environment(model, int(window[0]), int(window[1]), seed,
                              int(run.get("env_stream", 0)), reflected)
    targets = tuple(float(x) for x in run.get("targets", ()))
    record = bool(run.get("record_path", False))
    until = run.get("until")
    path = out / "trajectories.jsonl"
    with open(path, "w", newline="\n") as fh:
        for r in range(count):
            config = walk_mod.WalkConfig(steps=steps, seed=seed, stream=r,
                                         start=int(run.get("start", 0)),
                                         reflected=reflected, targets=targets,
                                         until=until, record_path=record)
            traj = walk_mod.run(envr, config)
            fh.write(traj.to_json() + "\n")
    _write_manifest(out, "simulate", cfg, seed=seed,
                    streams={"environment": f"seed={seed} stream={run.get('env_stream', 0)}",
                             "walk": f"seed={seed} streams 0..{count - 1} (walk domain)"},
                    replicas=count, wall=time.time() - t0, outputs=[path])
    print(f"simulate: {count} trajectories written")
    return EXIT_OK


def cmd_estimate(cfg: dict, args) -> int:
    t0 = time.time()
    out = _out_dir(cfg, args)
    model = _model_from(cfg)
    run = cfg.get("run", {})
    seed = _seed_of(cfg, args)
    threads = _resolve_threads(args, run)
    replicas = int(run.get("replicas", 0))
    if args.replicas is not None:
        replicas = args.replicas
    if replicas < 1:
        raise ConfigError("run.replicas must be at least 1")
    if "event" not in cfg:
        raise ConfigError("missing section: event")
    try:
        ev = cfg["event"]
        spec = est_mod.EventSpec(kind=ev["kind"], nu=float(ev["nu"]),
                                 n=int(ev.get("n", 2)),
                                 reflected=bool(ev.get("reflected", False)))
    except (KeyError, ValueError) as ex:
        raise ConfigError(f"invalid event: {ex}")
    law = run.get("law", "annealed")
    budget_s = run.get("time_budget_s")
    ladder = cfg.get("ladder", {}).get("n_values")

    csv_path = out / "estimate.csv"
    sum_path = out / "estimate_summary.json"
    partial = False
    if ladder:
        # run point by point so a wall-clock budget can cut the ladder short
        ns = sorted(int(x) for x in ladder)
        done_points = []
        for j, n in enumerate(ns):
            if budget_s is not None and time.time() - t0 > budget_s:
                partial = True
                break
            point_seed = seed + 1000003 * (j + 1)
            sp = spec.with_n(n)
            if law == "annealed":
                one = est_mod.annealed_probability(model, sp, replicas, point_seed, threads)
            else:
                window = run.get("window") or [-max(ns), max(ns)]
                envr = sample_environment(model, int(window[0]), int(window[1]), seed,
                                          int(run.get("env_stream", 0)), sp.reflected)
                one = est_mod.quenched_probability(envr, sp, replicas, point_seed, threads)
            formula = est_mod.theoretical_exponent(model.kappa, sp.nu, sp.kind, law,
                                                   sp.reflected)
            transform = formula.transform or est_mod.DOUBLE_LOG
            lo, hi = one.wilson()
            done_points.append(est_mod.LadderPoint(
                n=n, successes=one.successes, replicas=replicas, p_hat=one.p_hat,
                lo=lo, hi=hi,
                transform_value=est_mod._transform_value(one.p_hat, transform)))
        formula = est_mod.theoretical_exponent(model.kappa, spec.nu, spec.kind, law,
                                               spec.reflected)
        transform = formula.transform or est_mod.DOUBLE_LOG
        slope, stderr, rms, n_usable = est_mod.fit_ladder_points(done_points, transform)
        diagnostics = {"usable_points": n_usable, "law": law,
                       "kind": spec.kind, "nu": spec.nu, "kappa": model.kappa,
                       "notes": ["partial ladder (budget exhausted)"] if partial else []}
        if slope is not None:
            diagnostics["residual_rms"] = rms
        result = est_mod.ExponentEstimate(points=tuple(done_points), transform=transform,
                                          slope=slope, stderr=stderr,
                                          theory=formula.value, diagnostics=diagnostics)
    else:
        if law == "annealed":
            one = est_mod.annealed_probability(model, spec, replicas, seed, threads)
        else:
            window = run.get("window") or [-spec.n, spec.n]
            envr = sample_environment(model, int(window[0]), int(window[1]), seed,
                                      int(run.get("env_stream", 0)), spec.reflected)
            one = est_mod.quenched_probability(envr, spec, replicas, seed, threads)
        lo, hi = one.wilson()
        formula = est_mod.theoretical_exponent(model.kappa, spec.nu, spec.kind, law,
                                               spec.reflected)
        transform = formula.transform or est_mod.DOUBLE_LOG
        pt = est_mod.LadderPoint(n=spec.n, successes=one.successes, replicas=replicas,
                                 p_hat=one.p_hat, lo=lo, hi=hi,
                                 transform_value=est_mod._transform_value(one.p_hat, transform))
        result = est_mod.ExponentEstimate(points=(pt,), transform=transform, slope=None,
                                          stderr=None, theory=formula.value,
                                          diagnostics={"usable_points": int(math.isfinite(pt.transform_value)),
                                                       "law": law, "notes": ["single-n estimate"]})
    result.to_csv(csv_path)
    result.to_json(sum_path)
    streams = {
        "environment": "replica ids (env domain); fresh per replica under the annealed law",
        "walk": "replica ids (walk domain)",
        "ladder_point_seeds": [seed + 1000003 * (j + 1) for j in range(len(result.points))]
        if ladder else [seed],
    }
    _write_manifest(out, "estimate", cfg, seed=seed, streams=streams,
                    replicas=replicas, wall=time.time() - t0,
                    outputs=[csv_path, sum_path], partial=partial)
    print(f"estimate: {len(result.points)} point(s), slope={result.slope}")
    return EXIT_BUDGET if partial else EXIT_OK


def cmd_exponent_curve(cfg: dict, args) -> int:
    t0 = time.time()
    out = _out_dir(cfg, args)
    curve = cfg.get("curve", {})
    kappa = curve.get("kappa")
    if kappa is None:
        kappa = _model_from(cfg).kappa
    if kappa is None or not 0 < kappa < 1:
        raise ConfigError("exponent curve needs kappa in (0, 1)")
    lo = float(curve.get("nu_min", -0.95))
    hi = float(curve.get("nu_max", 0.95))
    points = int(curve.get("points", 191))
    grid = np.linspace(lo, hi, points)
    values = est_mod.exponent_curve(kappa, grid)
    path = out / "exponent_curve.csv"
    with open(path, "w", newline="\n") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["nu", "exponent"])
        for nu, val in zip(grid, values):
            w.writerow([repr(float(nu)), repr(float(val))])
    _write_manifest(out, "exponent-curve", cfg, seed=0, streams={}, replicas=0,
                    wall=time.time() - t0, outputs=[path])
    print(f"exponent-curve: {points} points, kappa={kappa}")
    return EXIT_OK


def cmd_oracle_check(cfg: dict, args) -> int:
    t0 = time.time()
    out = _out_dir(cfg, args)
    oracle = cfg.get("oracle", {})
    seed = int(oracle.get("seed", _seed_of(cfg, args)))
    n_miclo = int(oracle.get("miclo", 100))
    n_climb = int(oracle.get("climb", 100))
    n_exit = int(oracle.get("exit", 100))
    rows = []
    rows += [("miclo", r) for r in exact.miclo_sweep(n_miclo, seed)]
    rows += [("climb", r) for r in exact.climb_sweep(n_climb, seed)]
    rows += [("exit", r) for r in exact.exit_oracle_sweep(n_exit, seed)]
    if oracle.get("inject_fault"):
        # deliberately broken kernel row for exercising the failure path
        bad = exact.random_chain(seed, 999)
        t_mat = bad.transition_matrix()
        t_mat[1, 1] += 0.25
        rows.append(("fault", exact.SweepRow(chain_id=-1, quantity="row-sum",
                                             lhs=float(t_mat[1].sum()), rhs=1.0,
                                             holds=False, witness=bad.to_json())))
    # built-in sanity: kernel rows sum to one on a fresh sample of chains
    for i in range(min(10, n_miclo)):
        ch = exact.random_chain(seed, 500 + i)
        s = float(np.abs(ch.transition_matrix().sum(axis=1) - 1.0).max())
        rows.append(("rowsum", exact.SweepRow(chain_id=i, quantity="row-sum",
                                              lhs=s, rhs=0.0, holds=s == 0.0,
                                              witness=None if s == 0.0 else ch.to_json())))
    path = out / "oracle_check.csv"
    with open(path, "w", newline="\n") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["suite", "chain_id", "quantity", "lhs", "rhs", "holds"])
        for suite, r in rows:
            w.writerow([suite, r.chain_id, r.quantity, repr(r.lhs), repr(r.rhs), r.holds])
    failures = [(suite, r) for suite, r in rows if not r.holds]
    outputs = [path]
    if failures:
        wit_path = out / "oracle_witness.json"
        wit_path.write_text(json.dumps(
            [{"suite": s, "chain_id": r.chain_id, "quantity": r.quantity,
              "lhs": r.lhs, "rhs": r.rhs, "witness": r.witness}
             for s, r in failures], indent=2) + "\n")
        outputs.append(wit_path)
    _write_manifest(out, "oracle-check", cfg, seed=seed,
                    streams={"chains": f"seed={seed} streams (misc domain)"},
                    replicas=len(rows), wall=time.time() - t0, outputs=outputs)
    if not rows:
        print("oracle-check: empty (vacuous pass)")
        return EXIT_OK
    if failures:
        print(f"oracle-check: {len(failures)} failed instance(s); witness serialized",
              file=sys.stderr)
        return EXIT_PROPERTY
    print(f"oracle-check: {len(rows)} instances, all hold")
    return EXIT_OK


COMMANDS = {
    "env-check": cmd_env_check,
    "valleys": cmd_valleys,
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "exponent-curve": cmd_exponent_curve,
    "oracle-check": cmd_oracle_check,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="rwre-lab", description=__doc__)
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="JSON config (or manifest) path")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--replicas", type=int, default=None)
    parser.add_argument("--threads", type=int, default=None)
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args.config)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as ex:
        print(f"config error: {ex}", file=sys.stderr)
        return EXIT_CONFIG
    except (ModelError, ValueError) as ex:
        print(f"config error: {ex}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
