"""Command-line harness: reproducible runs with file outputs.

Subcommands:

* ``bounds``         evaluate/optimize/scan the convergence bound
* ``simulate``       run the integrated protocol, stream per-round CSV
* ``sweep``          grid experiments across one axis, optionally parallel
* ``compare-bound``  estimate constants, check bound dominance vs simulation
* ``validate-chain`` re-validate an exported ledger file

Every run writes a ``manifest.json`` holding the resolved config, seed,
and package version; re-running a manifest's config with its seed in
deterministic mode reproduces the outputs bit-for-bit (wall-clock timing
columns excepted).

Exit codes: 0 success, 2 configuration error, 3 property-check failure,
4 runtime failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .bounds import (
    LazySpec,
    check_convexity,
    evaluate_curve,
    loss_gap_bound,
    loss_gap_bound_lazy,
    optimal_rounds_closed_form,
    optimal_rounds_scan,
    scan_monotonicity,
)
from .chain import import_ledger, export_ledger, validate_ledger
from .data import Dataset, holdout_split, load_idx, partition_noniid, synth_generate
from .errors import DivergentBound, FedchainError, NoFeasibleRounds
from .learner import (
    ModelSpec,
    centralized_fit,
    estimate_constants,
    estimate_gradient_divergence,
    weights_to_bytes,
)
from .params import BoundConstants, SystemParams, params_from_dict
from .protocol import init_simulation, run_integrated_round, run_simulation

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PROPERTY = 3
EXIT_RUNTIME = 4

# Desk profile: a full sweep finishes inside a couple of minutes on one core.
PROFILES: dict[str, dict[str, Any]] = {
    "desk": {
        "n_clients": 10,
        "n_lazy": 0,
        "noise_var": 0.0,
        "t_sum": 60.0,
        "alpha": 1.0,
        "beta": 4.0,
        "eta": 0.05,
        "k": 6,
        "data": {
            "kind": "synth",
            "n_classes": 5,
            "n_features": 16,
            "n_samples": 4000,
            "eval_count": 2000,
            "shards_per_client": 2,
        },
        "model": {"kind": "softmax", "l2_reg": 1e-3},
        "difficulty_bits": 8,
        "dp_noise_var": 0.0,
        "constants": {"probes": 12, "probe_scale": 1.0, "opt_iters": 2000, "safety": 1.5},
    },
    # Larger preset: bigger cohort, slower blocks, a hidden layer.
    "long": {
        "n_clients": 20,
        "n_lazy": 0,
        "noise_var": 0.0,
        "t_sum": 100.0,
        "alpha": 1.0,
        "beta": 10.0,
        "eta": 0.01,
        "k": 5,
        "data": {
            "kind": "synth",
            "n_classes": 10,
            "n_features": 32,
            "n_samples": 12800,
            "eval_count": 2560,
            "shards_per_client": 2,
        },
        "model": {"kind": "mlp", "hidden_units": 256, "l2_reg": 1e-3},
        "difficulty_bits": 8,
        "dp_noise_var": 0.0,
        "constants": {"probes": 8, "probe_scale": 1.0, "opt_iters": 1000, "safety": 1.5},
    },
}

SWEEP_AXES = (
    "k",
    "alpha",
    "beta",
    "n_clients",
    "eta",
    "lazy_ratio",
    "noise_var",
    "dp_noise_var",
)


@dataclass(frozen=True)
class SweepSpec:
    axis: str
    grid: tuple[float, ...]
    repetitions: int
    base_config: dict[str, Any]
    seed: int

    def __post_init__(self) -> None:
        if self.axis not in SWEEP_AXES:
            raise ValueError(f"axis must be one of {SWEEP_AXES}")
        if not self.grid:
            raise ValueError("grid must be non-empty")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.axis in ("alpha", "beta") and "hardware" in self.base_config:
            raise ValueError(f"sweeping {self.axis} conflicts with a hardware table")


@dataclass(frozen=True)
class SweepRow:
    axis: str
    value: float
    repetition: int
    k: int
    tau: int
    final_loss: float
    final_accuracy: float
    bound: float | None
    is_argmin: bool
    wall_seconds: float


def resolve_config(profile: str, config_path: str | None) -> dict[str, Any]:
    cfg = copy.deepcopy(PROFILES[profile])
    if config_path is not None:
        with open(config_path, "r", encoding="utf-8") as fh:
            user = json.load(fh)
        for key, value in user.items():
            if isinstance(value, dict) and isinstance(cfg.get(key), dict):
                cfg[key].update(value)
            else:
                cfg[key] = value
    return cfg


def build_dataset(cfg: dict[str, Any], seed: int) -> tuple[Dataset, Dataset | None]:
    data_cfg = cfg["data"]
    if data_cfg["kind"] == "synth":
        full = synth_generate(
            int(data_cfg["n_classes"]),
            int(data_cfg["n_features"]),
            int(data_cfg["n_samples"]),
            seed,
        )
        eval_count = int(data_cfg.get("eval_count", 0))
        if eval_count:
            return holdout_split(full, eval_count)
        return full, None
    if data_cfg["kind"] == "idx":
        train = load_idx(data_cfg["images"], data_cfg["labels"])
        held = None
        if "eval_images" in data_cfg:
            held = load_idx(data_cfg["eval_images"], data_cfg["eval_labels"])
        return train, held
    raise ValueError(f"unknown data kind {data_cfg['kind']!r}")


def build_model_spec(cfg: dict[str, Any]) -> ModelSpec:
    m = cfg.get("model", {})
    return ModelSpec(
        kind=m.get("kind", "softmax"),
        hidden_units=int(m.get("hidden_units", 0)),
        l2_reg=float(m.get("l2_reg", 0.0)),
    )


def build_experiment(cfg: dict[str, Any], seed: int):
    """Materialize (params, train set, partition, eval set, model spec)."""
    params = params_from_dict(cfg)
    train, held = build_dataset(cfg, seed)
    partition = partition_noniid(
        train, params.n_clients, int(cfg["data"].get("shards_per_client", 2)), seed
    )
    return params, train, partition, held, build_model_spec(cfg)


def bound_constants_from_config(cfg: dict[str, Any]) -> BoundConstants:
    bc = cfg.get("bound_constants", {})
    return BoundConstants(
        lipschitz=float(bc.get("lipschitz", 1.0)),
        smoothness=float(bc.get("smoothness", 1.0)),
        divergence=float(bc.get("divergence", 1.0)),
        phi=float(bc.get("phi", 1.0)),
        slack_sq=float(bc.get("slack_sq", 0.0)),
    )


def write_manifest(out: Path, command: str, cfg: dict[str, Any], seed: int,
                   extra: dict[str, Any] | None = None) -> None:
    manifest = {
        "command": command,
        "config": cfg,
        "seed": seed,
        "version": __version__,
    }
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def _parse_kv(text: str, what: str) -> dict[str, str]:
    pairs = {}
    for part in text.split(","):
        if "=" not in part:
            raise ValueError(f"{what}: expected key=value, got {part!r}")
        key, value = part.split("=", 1)
        pairs[key.strip()] = value.strip()
    return pairs


# ----------------------------- bounds ------------------------------- #

def cmd_bounds(args: argparse.Namespace, cfg: dict[str, Any], out: Path) -> int:
    params = params_from_dict(cfg)
    constants = bound_constants_from_config(cfg)
    lazy = None
    if args.lazy:
        kv = _parse_kv(args.lazy, "--lazy")
        lazy = LazySpec(
            lazy_gap=float(kv.get("theta", 0.0)),
            noise_var=float(kv.get("sigma2", 0.0)),
            fraction=float(kv["ratio"]) if "ratio" in kv else None,
        )
    curve = evaluate_curve(params, constants, lazy=lazy)
    with open(out / "bounds_curve.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "tau", "bound"])
        for k, tau, v in zip(curve.rounds, curve.taus, curve.values):
            writer.writerow([int(k), float(tau), float(v)])

    verdict: dict[str, Any] = {"mode": None, "ok": True}
    if args.eval is not None:
        fn = (
            (lambda k: loss_gap_bound_lazy(
                k, params, constants, lazy.lazy_gap, lazy.noise_var, lazy.fraction))
            if lazy else (lambda k: loss_gap_bound(k, params, constants))
        )
        try:
            value = fn(args.eval)
        except DivergentBound:
            value = math.inf
        verdict.update({"mode": "eval", "k": args.eval, "bound": value})
        print(f"bound at k={args.eval}: {value}")
    elif args.scan:
        kv = _parse_kv(args.scan, "--scan")
        grid = [float(x) for x in kv["grid"].split(":")]
        scan = scan_monotonicity(kv["axis"], grid, params, constants, lazy=lazy)
        verdict.update({
            "mode": "scan",
            "axis": scan.axis,
            "grid": list(scan.grid),
            "optima": list(scan.optima),
            "expected": scan.expected,
            "ok": scan.ok,
        })
        print(f"scan {scan.axis}: optima {list(scan.optima)} "
              f"({scan.expected}) -> {'ok' if scan.ok else 'VIOLATION'}")
    else:
        k_best, value = optimal_rounds_scan(params, constants, lazy=lazy)
        closed = optimal_rounds_closed_form(params, constants)
        convex_violation = check_convexity(curve)
        verdict.update({
            "mode": "optimize",
            "k_scan": k_best,
            "bound_at_k_scan": value,
            "k_closed": closed.k_star,
            "small_step_ok": closed.small_step_ok,
            "convexity_violation_at": convex_violation,
            "ok": convex_violation is None,
        })
        print(f"optimal rounds: scan={k_best} (bound {value:.6g}), "
              f"closed-form={closed.k_star:.4f} "
              f"(small-step regime: {closed.small_step_ok})")
    (out / "bounds_verdict.json").write_text(json.dumps(verdict, indent=2))
    return EXIT_OK if verdict["ok"] else EXIT_PROPERTY


# ---------------------------- simulate ------------------------------ #

def cmd_simulate(args: argparse.Namespace, cfg: dict[str, Any], out: Path,
                 seed: int, deterministic: bool) -> int:
    params, train, partition, held, spec = build_experiment(cfg, seed)
    state = init_simulation(
        params, train, partition, seed, spec, held,
        deterministic_mining=deterministic,
        difficulty_bits=int(cfg.get("difficulty_bits", 8)),
        dp_noise_var=float(cfg.get("dp_noise_var", 0.0)),
    )
    rounds_path = out / "rounds.csv"
    with open(rounds_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "tau", "clock", "loss", "accuracy",
                        "ledger_height", "theta_hat"])
        for k in range(1, params.rounds + 1):
            rec = run_integrated_round(state, k)
            writer.writerow([
                rec.round_index, rec.local_iters, rec.clock_after,
                rec.global_loss, rec.accuracy, rec.block_height, rec.theta_hat,
            ])
            fh.flush()
            if args.checkpoint_every and k % args.checkpoint_every == 0:
                (out / f"round_{k:04d}.weights").write_bytes(
                    weights_to_bytes(state.clients[0].weights)
                )

    final = state.records[-1]
    summary = {
        "rounds": params.rounds,
        "local_iters": params.local_iters,
        "final_train_loss": final.global_loss,
        "final_accuracy": final.accuracy,
        "theta_hat": final.theta_hat,
        "clock_end": final.clock_after,
        "leftover_time": params.total_time - final.clock_after,
        "lazy_ids": list(state.lazy_ids),
        "any_frozen": state.any_frozen,
        "ledger_height": state.ledger.height,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    export_ledger(state.ledger, state.registry, out / "ledger.bin")
    print(f"simulated {params.rounds} rounds "
          f"(tau={params.local_iters}, final loss {final.global_loss:.4f}, "
          f"accuracy {final.accuracy:.3f}); outputs in {out}")
    return EXIT_OK


# ------------------------------ sweep -------------------------------- #

def _apply_axis(cfg: dict[str, Any], axis: str, value: float) -> dict[str, Any]:
    updated = copy.deepcopy(cfg)
    if axis == "k":
        updated["k"] = int(value)
    elif axis in ("alpha", "beta"):
        if "hardware" in updated:
            raise ValueError(f"sweeping {axis} conflicts with a hardware table")
        updated[axis] = float(value)
    elif axis == "n_clients":
        updated["n_clients"] = int(value)
        updated["n_lazy"] = min(updated["n_lazy"], int(value))
    elif axis == "eta":
        updated["eta"] = float(value)
    elif axis == "lazy_ratio":
        updated["n_lazy"] = int(round(float(value) * updated["n_clients"]))
    elif axis == "noise_var":
        updated["noise_var"] = float(value)
    elif axis == "dp_noise_var":
        updated["dp_noise_var"] = float(value)
    else:
        raise ValueError(f"unknown axis {axis!r}")
    return updated


def _sweep_worker_safe(job: dict[str, Any]) -> dict[str, Any]:
    """Trap per-point failures so one bad grid point cannot sink the sweep."""
    try:
        return _sweep_worker(job)
    except (FedchainError, ValueError, ArithmeticError, OSError) as exc:
        return {"error": f"{type(exc).__name__}: {exc}"}


def _sweep_worker(job: dict[str, Any]) -> dict[str, Any]:
    cfg = job["cfg"]
    seed = job["seed"]
    start = time.perf_counter()
    params, train, partition, held, spec = build_experiment(cfg, seed)
    result = run_simulation(
        params, train, partition, seed, spec, held,
        deterministic_mining=job["deterministic"],
        difficulty_bits=int(cfg.get("difficulty_bits", 8)),
        dp_noise_var=float(cfg.get("dp_noise_var", 0.0)),
    )
    return {
        "k": params.rounds,
        "tau": params.local_iters,
        "final_loss": result.final_train_loss,
        "final_accuracy": (
            result.final_eval_accuracy
            if result.final_eval_accuracy is not None
            else result.records[-1].accuracy
        ),
        "theta_hat": result.theta_hat,
        "wall_seconds": time.perf_counter() - start,
        "lazy_count": params.n_lazy,
        "noise_var": params.noise_var,
    }


def cmd_sweep(spec: SweepSpec, out: Path, jobs: int, deterministic: bool) -> int:
    """Run the grid, attach bound values, and write CSV plus a summary.

    Repetitions reuse the run seed, so in deterministic mode the repetition
    groups come out identical; they exist to expose nondeterminism, not to
    sample variance (vary ``--seed`` across runs for that). A failing grid
    point becomes a marker row with empty metric cells and the error in the
    status column; the first error is re-raised once files are written.
    """
    base = spec.base_config
    jobs_list = []
    for value in spec.grid:
        cfg_v = _apply_axis(base, spec.axis, value)
        for rep in range(spec.repetitions):
            jobs_list.append({
                "cfg": cfg_v,
                "seed": spec.seed,
                "deterministic": deterministic,
                "value": value,
                "repetition": rep,
            })

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outputs = list(pool.map(_sweep_worker_safe, jobs_list))
    else:
        outputs = [_sweep_worker_safe(j) for j in jobs_list]

    # Constants estimated once on the base cohort give the bound column.
    constants = None
    loss_floor = None
    try:
        params0, train0, part0, _, model0 = build_experiment(base, spec.seed)
        est, delta = _estimate_profile_constants(base, params0, train0, part0,
                                                 model0, spec.seed)
        constants = _safe_constants(base, params0, est, delta)
        loss_floor = est.loss_star
    except (FedchainError, ValueError):
        pass  # bound column stays empty

    rows: list[SweepRow | str] = []  # str entries are failed-point errors
    failures: list[dict[str, Any]] = []
    for job, got in zip(jobs_list, outputs):
        if "error" in got:
            rows.append(got["error"])
            failures.append({
                "value": job["value"],
                "repetition": job["repetition"],
                "error": got["error"],
            })
            continue
        bound = None
        if constants is not None:
            row_params = params_from_dict(job["cfg"])
            try:
                if row_params.n_lazy > 0:
                    bound = loss_gap_bound_lazy(
                        row_params.rounds, row_params, constants,
                        got["theta_hat"], row_params.noise_var,
                        tau_mode="floor",
                    )
                else:
                    bound = loss_gap_bound(
                        row_params.rounds, row_params, constants, tau_mode="floor"
                    )
            except (DivergentBound, ValueError):
                bound = math.inf
        rows.append(SweepRow(
            axis=spec.axis,
            value=job["value"],
            repetition=job["repetition"],
            k=got["k"],
            tau=got["tau"],
            final_loss=got["final_loss"],
            final_accuracy=got["final_accuracy"],
            bound=bound,
            is_argmin=False,
            wall_seconds=got["wall_seconds"],
        ))

    # flag the grid point with the lowest loss inside each repetition
    for rep in range(spec.repetitions):
        group = [i for i, r in enumerate(rows)
                 if isinstance(r, SweepRow) and r.repetition == rep]
        if group:
            best = min(group, key=lambda i: rows[i].final_loss)
            rows[best] = replace(rows[best], is_argmin=True)

    with open(out / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["axis", "value", "repetition", "k", "tau", "final_loss",
                        "final_accuracy", "bound", "is_argmin", "status",
                        "wall_seconds"])
        for job, r in zip(jobs_list, rows):
            if isinstance(r, str):
                writer.writerow([spec.axis, job["value"], job["repetition"],
                                "", "", "", "", "", "", f"error: {r}", ""])
            else:
                writer.writerow([
                    r.axis, r.value, r.repetition, r.k, r.tau,
                    repr(r.final_loss), repr(r.final_accuracy),
                    "" if r.bound is None else repr(r.bound),
                    int(r.is_argmin), "ok", f"{r.wall_seconds:.3f}",
                ])
    summary = {
        "axis": spec.axis,
        "grid": list(spec.grid),
        "repetitions": spec.repetitions,
        "argmin_values": sorted({r.value for r in rows
                                 if isinstance(r, SweepRow) and r.is_argmin}),
        "loss_floor": loss_floor,
        "failures": failures,
    }
    (out / "sweep_summary.json").write_text(json.dumps(summary, indent=2))
    if failures:
        first = failures[0]
        raise FedchainError(
            f"{len(failures)} sweep point(s) failed; first at "
            f"{spec.axis}={first['value']}: {first['error']}"
        )
    print(f"swept {spec.axis} over {list(spec.grid)} x{spec.repetitions}; "
          f"outputs in {out}")
    return EXIT_OK


# --------------------------- compare-bound --------------------------- #

def _estimate_profile_constants(cfg, params, train, partition, model_spec, seed):
    """Probe-based constants on the pooled training data, plus divergence."""
    ccfg = cfg.get("constants", {})
    est = estimate_constants(
        train.features, train.labels, model_spec,
        n_probes=int(ccfg.get("probes", 12)),
        rng=np.random.default_rng((seed, 20)),
        learning_rate=params.learning_rate,
        probe_scale=float(ccfg.get("probe_scale", 1.0)),
        opt_iters=int(ccfg.get("opt_iters", 2000)),
    )
    shards = [partition.shard(train, i) for i in range(partition.n_clients)]
    probe_rng = np.random.default_rng((seed, 21))
    extra = [
        est.w_init.__class__(
            values=probe_rng.uniform(-1, 1, size=len(est.w_init.values)),
            topology=est.w_init.topology,
        )
        for _ in range(3)
    ]
    delta = estimate_gradient_divergence(
        shards, [est.w_init, est.w_star, *extra], model_spec
    )
    return est, delta


def _safe_constants(cfg, params, est, delta) -> BoundConstants:
    """Estimates inflated by the safety factor, slack left at its default."""
    safety = float(cfg.get("constants", {}).get("safety", 1.5))
    smooth = est.smoothness * safety
    if not params.learning_rate * smooth < 1.0:
        raise ValueError(
            "learning_rate x safety-factored smoothness reaches 1; "
            "the bound does not apply at this configuration"
        )
    gap = float(np.linalg.norm(est.w_init.values - est.w_star.values))
    phi = (1.0 - params.learning_rate * smooth / 2.0) / gap
    return BoundConstants(
        lipschitz=est.lipschitz * safety,
        smoothness=smooth,
        divergence=max(delta, 1e-12),
        phi=phi,
    )


def cmd_compare_bound(cfg: dict[str, Any], seed: int, out: Path,
                      deterministic: bool) -> int:
    params, train, partition, held, model_spec = build_experiment(cfg, seed)
    est, delta = _estimate_profile_constants(cfg, params, train, partition,
                                             model_spec, seed)
    constants = _safe_constants(cfg, params, est, delta)

    curve = evaluate_curve(params, constants, tau_mode="floor")
    table = []
    for k, tau in zip(curve.rounds, curve.taus):
        p_k = replace(params, rounds=int(k), local_iters=0)
        sim = run_simulation(
            p_k, train, partition, seed, model_spec, held,
            deterministic_mining=deterministic,
            difficulty_bits=int(cfg.get("difficulty_bits", 8)),
            dp_noise_var=float(cfg.get("dp_noise_var", 0.0)),
        )
        gap = sim.final_train_loss - est.loss_star
        if params.n_lazy > 0:
            try:
                bound = loss_gap_bound_lazy(
                    int(k), params, constants, sim.theta_hat, params.noise_var,
                    tau_mode="floor",
                )
            except DivergentBound:
                bound = math.inf
        else:
            idx = int(np.where(curve.rounds == k)[0][0])
            bound = float(curve.values[idx])
        table.append({
            "k": int(k),
            "tau": int(tau),
            "bound": bound,
            "empirical_gap": gap,
            "dominated": bool(bound >= gap),
        })

    dominance = sum(row["dominated"] for row in table) / len(table)
    finite = [row for row in table if math.isfinite(row["bound"])]
    ok = bool(finite) and dominance >= 0.95
    argmin_bound = argmin_gap = None
    distance = None
    relative_gap = None
    if finite:
        argmin_bound = min(finite, key=lambda r: r["bound"])["k"]
        argmin_gap = min(table, key=lambda r: r["empirical_gap"])["k"]
        distance = abs(argmin_bound - argmin_gap)
        ok = ok and distance <= 2
        opt = next(r for r in table if r["k"] == argmin_bound)
        if opt["empirical_gap"] > 0:
            relative_gap = (opt["bound"] - opt["empirical_gap"]) / opt["empirical_gap"]

    with open(out / "compare_bound.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "tau", "bound", "empirical_gap", "dominated"])
        for row in table:
            writer.writerow([row["k"], row["tau"], repr(row["bound"]),
                            repr(row["empirical_gap"]), int(row["dominated"])])
    report = {
        "dominance_fraction": dominance,
        "argmin_bound": argmin_bound,
        "argmin_empirical": argmin_gap,
        "argmin_distance": distance,
        "relative_gap_at_opt": relative_gap,
        "constants": {
            "lipschitz": constants.lipschitz,
            "smoothness": constants.smoothness,
            "divergence": constants.divergence,
            "phi": constants.phi,
            "slack_sq": constants.slack_sq,
            "loss_floor": est.loss_star,
        },
        "ok": ok,
    }
    (out / "compare_bound.json").write_text(json.dumps(report, indent=2))
    rel_text = "n/a" if relative_gap is None else f"{relative_gap:.3f}"
    print(f"dominance {dominance:.3f}, bound argmin {argmin_bound}, "
          f"empirical argmin {argmin_gap}, relative gap at optimum {rel_text} "
          f"-> {'ok' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_PROPERTY


# --------------------------- validate-chain -------------------------- #

def cmd_validate_chain(chain_path: str, difficulty_bits: int) -> int:
    ledger, registry = import_ledger(chain_path)
    violation = validate_ledger(ledger, registry, difficulty_bits)
    if violation is None:
        print(f"ledger ok: {len(ledger.blocks)} blocks")
        return EXIT_OK
    print(f"violation at height {violation.height}: {violation.reason}")
    return EXIT_PROPERTY


# ------------------------------ main --------------------------------- #

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedchain",
        description="Simulate and analyze proof-of-work federated learning rounds.",
    )
    parser.add_argument("--config", help="JSON config overlaying the profile")
    parser.add_argument("--profile", default="desk", choices=sorted(PROFILES))
    parser.add_argument("--seed", type=int, default=1234)
    parser.add_argument("--out", default="fedchain_out")
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--deterministic-mining", choices=["on", "off"], default="on")
    sub = parser.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bounds", help="evaluate or optimize the convergence bound")
    mode = b.add_mutually_exclusive_group()
    mode.add_argument("--eval", type=int, metavar="K")
    mode.add_argument("--optimize", action="store_true",
                      help="scan feasible K for the minimum bound (the default)")
    mode.add_argument("--scan", metavar="axis=A,grid=V1:V2:...")
    b.add_argument("--lazy", metavar="theta=T,sigma2=S,ratio=R")

    s = sub.add_parser("simulate", help="run the integrated protocol")
    s.add_argument("--checkpoint-every", type=int, default=0, metavar="N")

    w = sub.add_parser("sweep", help="grid experiment over one axis")
    w.add_argument("--axis", required=True, choices=SWEEP_AXES)
    w.add_argument("--grid", required=True, metavar="V1:V2:...")
    w.add_argument("--repetitions", type=int, default=1)

    sub.add_parser("compare-bound", help="bound dominance vs simulation")

    v = sub.add_parser("validate-chain", help="re-validate an exported ledger")
    v.add_argument("--chain", required=True)
    v.add_argument("--difficulty-bits", type=int, default=8)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "validate-chain":
        try:
            return cmd_validate_chain(args.chain, args.difficulty_bits)
        except (OSError, ValueError) as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG

    try:
        cfg = resolve_config(args.profile, args.config)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        deterministic = args.deterministic_mining == "on"
        write_manifest(out, args.command, cfg, args.seed,
                       {"deterministic_mining": deterministic})
        if args.command == "sweep":
            spec = SweepSpec(
                axis=args.axis,
                grid=tuple(float(x) for x in args.grid.split(":")),
                repetitions=args.repetitions,
                base_config=cfg,
                seed=args.seed,
            )
    except (KeyError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "bounds":
            return cmd_bounds(args, cfg, out)
        if args.command == "simulate":
            return cmd_simulate(args, cfg, out, args.seed, deterministic)
        if args.command == "sweep":
            return cmd_sweep(spec, out, args.jobs, deterministic)
        if args.command == "compare-bound":
            return cmd_compare_bound(cfg, args.seed, out, deterministic)
    except (KeyError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NoFeasibleRounds as exc:
        print(f"property-check failure: {exc}", file=sys.stderr)
        return EXIT_PROPERTY
    except (FedchainError, ValueError, ArithmeticError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
