"""Command-line front end.

Subcommands
-----------
collect        sample a dataset from a named experiment and write CSV+manifest
verify         run the full verification pipeline, write reports + summary
export-grid    evaluate a field on a regular 2-D grid for plotting
linear-verify  data-based dissipation test for linear experiments

Every flag has an ``ETATEST_``-prefixed environment variable override (e.g.
``ETATEST_DELTA=0.2``), and ``--config FILE`` merges defaults from JSON.
Flags beat config values beat environment values beat built-in defaults.

verify exit codes: 0 expected decisive verdict, 2 indeterminate,
3 decisive but contrary to the experiment's expectation, 1 usage/data errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import dataset as ds_mod
from . import lipschitz as lip_mod
from . import verify as verify_mod
from .linear import LinearData, RESIDUAL_TRUST_TOL, continuous_dissipation
from .systems import EXPERIMENT_NAMES, make_experiment
from .verify import Mode, VerdictKind

_ENV_PREFIX = "ETATEST_"


@dataclass
class RunConfig:
    experiment: str | None = None
    dataset: str | None = None
    delta: float = 0.1
    lam: float = 1.0
    epsilon_critical: float | None = None
    n: int = 10000
    seed: int = 0
    noise_amp: float = 0.01
    mode: str | None = None
    fail_fast: bool = False
    threads: int = 1
    out: str = "out"
    field: str = "V"
    resolution: int = 101

    _RANGES = {
        "delta": (0.0, np.inf),
        "lam": (0.0, np.inf),
        "n": (0, 10**9),
        "noise_amp": (0.0, np.inf),
        "threads": (1, 4096),
        "resolution": (2, 4001),
    }

    def validate(self):
        for name, (lo, hi) in self._RANGES.items():
            v = getattr(self, name)
            if v is not None and not (lo <= v <= hi):
                raise ValueError(f"{name}={v} outside [{lo}, {hi}]")
        if self.delta <= 0:
            raise ValueError("delta must be > 0")
        if self.lam <= 0:
            raise ValueError("lambda must be > 0")
        if self.mode is not None and self.mode != "discrete":
            Mode(self.mode)
        return self


_CONFIG_KEYS = {f.name for f in fields(RunConfig)}


def _apply_env(cfg: RunConfig) -> RunConfig:
    casts = {"delta": float, "lam": float, "epsilon_critical": float,
             "n": int, "seed": int, "noise_amp": float, "threads": int,
             "resolution": int, "fail_fast": lambda s: s not in ("0", "false", "")}
    for f in fields(RunConfig):
        env = os.environ.get(_ENV_PREFIX + f.name.upper())
        if env is not None:
            setattr(cfg, f.name, casts.get(f.name, str)(env))
    return cfg


def _apply_config_file(cfg: RunConfig, path: str) -> RunConfig:
    with open(path) as fh:
        data = json.load(fh)
    unknown = set(data) - _CONFIG_KEYS
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    for key, val in data.items():
        setattr(cfg, key, val)
    return cfg


def _build_config(args) -> RunConfig:
    cfg = _apply_env(RunConfig())
    if getattr(args, "config", None):
        _apply_config_file(cfg, args.config)
    for f in fields(RunConfig):
        val = getattr(args, f.name, None)
        if val is not None:
            setattr(cfg, f.name, val)
    return cfg.validate()


def _load_experiment(cfg: RunConfig):
    if cfg.experiment is None:
        return None
    return make_experiment(cfg.experiment)


def _get_dataset(cfg: RunConfig, exp):
    if cfg.dataset is not None:
        return ds_mod.load(cfg.dataset)
    if exp is None:
        raise ValueError("need --experiment or --dataset")
    return ds_mod.collect(exp.system, exp.policy, cfg.n, exp.bounds,
                          cfg.noise_amp, cfg.seed)


def cmd_collect(args) -> int:
    cfg = _build_config(args)
    exp = _load_experiment(cfg)
    if exp is None:
        raise ValueError("collect requires --experiment")
    data = ds_mod.collect(exp.system, exp.policy, cfg.n, exp.bounds,
                          cfg.noise_amp, cfg.seed)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{exp.name}.csv"
    ds_mod.save(data, path)
    print(f"wrote {path} ({len(data)} samples, n={data.n}, m={data.m})")
    return 0


def _run_pipeline(cfg: RunConfig, exp, data, mode):
    index = ds_mod.NeighborIndex(data, cell_edge=cfg.delta)
    field = lip_mod.estimate_all(data, index, cfg.delta, cfg.lam)
    eps = cfg.epsilon_critical
    if eps is None and exp is not None and exp.epsilon_critical is not None:
        eps = exp.epsilon_critical
    if mode == "discrete":
        verdict = verify_mod.eta_test_discrete(
            data, exp.policy, exp.lyapunov, field, cfg.delta, index=index,
            x_e=exp.system.x_e, bounds=exp.bounds)
    else:
        verdict = verify_mod.eta_test(
            data, exp.policy, exp.lyapunov, field, cfg.delta, Mode(mode),
            index=index, x_e=exp.system.x_e, bounds=exp.bounds,
            epsilon_critical=eps, fail_fast=cfg.fail_fast,
            threads=cfg.threads, system=exp.system)
    return field, verdict


def _default_mode(exp) -> str:
    if exp is None:
        return Mode.STABILITY.value
    if exp.system.time_kind is ds_mod.TimeKind.DISCRETE:
        return "discrete"
    return {"stable": Mode.STABILITY.value,
            "unstable": Mode.INSTABILITY.value,
            "near-critical": Mode.BOTH.value,
            "indeterminate": "discrete" if exp.system.time_kind
            is ds_mod.TimeKind.DISCRETE else Mode.BOTH.value}[exp.expected]


def cmd_verify(args) -> int:
    cfg = _build_config(args)
    exp = _load_experiment(cfg)
    data = _get_dataset(cfg, exp)
    if exp is None:
        raise ValueError("verify requires --experiment (policy and V source)")
    mode = cfg.mode or _default_mode(exp)
    start = time.perf_counter()
    field, verdict = _run_pipeline(cfg, exp, data, mode)
    runtime_ms = 1000.0 * (time.perf_counter() - start)
    verdict.runtime_ms = runtime_ms

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    lip_mod.save_field(field, out / f"{exp.name}.lipschitz.csv")
    verify_mod.write_reports_csv(verdict, out / f"{exp.name}.reports.csv", data.n)
    verify_mod.write_summary_json(verdict, out / f"{exp.name}.summary.json")
    print(f"verdict: {verdict.overall.value}")
    print(f"counts: {verdict.counts}")
    print(f"outputs in {out}/")

    if verdict.overall is VerdictKind.INDETERMINATE:
        return 2
    if verdict.overall.value != exp.expected:
        return 3
    return 0


_GRID_FIELDS = ("V", "eta_max", "eta_min", "true_vdot", "L_x", "L_u")


def cmd_export_grid(args) -> int:
    cfg = _build_config(args)
    if cfg.field not in _GRID_FIELDS:
        raise ValueError(f"unknown field {cfg.field!r}; choose from {_GRID_FIELDS}")
    exp = _load_experiment(cfg)
    if exp is None:
        raise ValueError("export-grid requires --experiment")
    res = cfg.resolution
    (lo0, hi0), (lo1, hi1) = exp.bounds[0], exp.bounds[1]
    g0 = np.linspace(lo0, hi0, res)
    g1 = np.linspace(lo1, hi1, res)
    xx, yy = np.meshgrid(g0, g1, indexing="ij")
    grid = np.column_stack([xx.ravel(), yy.ravel()])
    # remaining state dimensions stay at the equilibrium slice
    states = np.tile(np.asarray(exp.system.x_e, dtype=np.float64),
                     (grid.shape[0], 1))
    states[:, 0] = grid[:, 0]
    states[:, 1] = grid[:, 1]

    if cfg.field == "V":
        values = exp.lyapunov.value(states)
    elif cfg.field == "true_vdot":
        u = exp.policy(states)
        values = np.sum(exp.lyapunov.grad(states) * exp.system(states, u), axis=-1)
    elif cfg.field in ("L_x", "L_u"):
        data = _get_dataset(cfg, exp)
        index = ds_mod.NeighborIndex(data, cell_edge=cfg.delta)
        field = lip_mod.estimate_all(data, index, cfg.delta, cfg.lam)
        per_sample = field.l_x if cfg.field == "L_x" else field.l_u
        values = _nearest_sample_values(data.xs, per_sample, states)
    else:
        data = _get_dataset(cfg, exp)
        _, verdict = _run_pipeline(cfg, exp, data, Mode.BOTH.value)
        per_sample = np.array(
            [getattr(r, cfg.field) if getattr(r, cfg.field) is not None
             else np.nan for r in verdict.reports])
        values = _nearest_sample_values(data.xs, per_sample, states)

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{exp.name}.{cfg.field}.grid.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x0", "x1", "value"])
        for row, val in zip(grid, values):
            writer.writerow([format(row[0], ".17g"), format(row[1], ".17g"),
                             format(val, ".17g")])
    print(f"wrote {path} ({grid.shape[0]} rows)")
    return 0


def _nearest_sample_values(xs, per_sample, states, chunk=512):
    values = np.empty(states.shape[0])
    for s in range(0, states.shape[0], chunk):
        block = states[s:s + chunk]
        d2 = np.sum((block[:, None, :] - xs[None, :, :]) ** 2, axis=2)
        values[s:s + chunk] = per_sample[np.argmin(d2, axis=1)]
    return values


def cmd_linear_verify(args) -> int:
    cfg = _build_config(args)
    exp = _load_experiment(cfg)
    if exp is None:
        raise ValueError("linear-verify requires --experiment")
    if exp.policy.kind != "LinearFeedback" or exp.lyapunov.kind != "Quadratic":
        raise ValueError(f"{exp.name} is not a linear experiment")
    data = _get_dataset(cfg, exp)
    report = continuous_dissipation(LinearData.from_dataset(data),
                                    exp.policy.params["K"], exp.lyapunov.P)
    print("Q =")
    print(np.array2string(report.Q, precision=6))
    print("eigenvalues of sym(Q):", np.array2string(report.eigenvalues,
                                                    precision=6))
    print(f"verdict: {report.verdict.value}")
    if not report.trustworthy:
        print(f"warning: representation residual "
              f"{report.representation_residual:.3e} exceeds "
              f"{RESIDUAL_TRUST_TOL:.0e}; data is not exactly linear and the "
              f"verdict is not asserted")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{exp.name}.dissipation.json"
    with open(path, "w") as fh:
        json.dump({
            "Q": report.Q.tolist(),
            "eigenvalues": report.eigenvalues.tolist(),
            "verdict": report.verdict.value,
            "representation_residual": report.representation_residual,
        }, fh, indent=2)
        fh.write("\n")
    print(f"outputs in {out}/")
    return 0


def _add_common(parser):
    parser.add_argument("--config", help="JSON file with RunConfig overrides")
    parser.add_argument("--experiment", choices=list(EXPERIMENT_NAMES))
    parser.add_argument("--dataset", help="dataset CSV path (skips collection)")
    parser.add_argument("--delta", type=float, help="neighborhood radius")
    parser.add_argument("--lambda", dest="lam", type=float,
                        help="state-constant weight in the rate QP")
    parser.add_argument("--epsilon-critical", dest="epsilon_critical",
                        type=float, help="near-critical magnitude band")
    parser.add_argument("--n", type=int, help="samples to collect")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--noise-amp", dest="noise_amp", type=float)
    parser.add_argument("--mode",
                        choices=["stability", "instability", "both", "discrete"])
    parser.add_argument("--fail-fast", dest="fail_fast", action="store_const",
                        const=True)
    parser.add_argument("--threads", type=int)
    parser.add_argument("--out", help="output directory")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="etatest",
        description="Data-driven stability verification of closed-loop systems")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", help="sample and save a dataset")
    _add_common(p)
    p.set_defaults(fn=cmd_collect)

    p = sub.add_parser("verify", help="run the verification pipeline")
    _add_common(p)
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("export-grid", help="grid CSV of a field for plotting")
    _add_common(p)
    p.add_argument("--field", choices=list(_GRID_FIELDS))
    p.add_argument("--resolution", type=int)
    p.set_defaults(fn=cmd_export_grid)

    p = sub.add_parser("linear-verify", help="dissipation-matrix test")
    _add_common(p)
    p.set_defaults(fn=cmd_linear_verify)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, KeyError, OSError, ds_mod.DatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
