"""Command-line entry point.

Subcommands: ``synth`` (generate data files), ``train`` (one training run),
``sweep`` (cross-product of window lengths and burn-in values), ``benchmark``
(solve the coupled/unconstrained reference problems and report regrets).

Every run writes into ``<out-root>/<command>/<config-hash>/`` with a
manifest.json describing it; rerunning with identical flags reproduces all
numeric outputs bit-exactly (timestamps live only in the manifest).

Exit codes: 0 success, 2 usage error, 3 numeric failure, 4 partial sweep.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import hashlib
import json
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import analysis, benchmark, data, training
from .linalg import PowerIterationError
from .rnn_core import CellSpec, NonFiniteError, Params, init_params
from .training import AdamConfig, SGDConfig, TrainConfig, TrainingError

VERSION = "0.1.0"
OUT_ROOT_ENV = "TBPTT_RUNS_DIR"


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Manifest and directory plumbing
# ---------------------------------------------------------------------------


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]


def out_root(args) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get(OUT_ROOT_ENV, "runs"))


def make_run_dir(args, command: str, config: dict) -> tuple[Path, dict]:
    digest = config_hash(config)
    run_dir = out_root(args) / command / digest
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config": config,
        "config_hash": digest,
        "seed": config.get("seed"),
        "inputs": config.get("inputs", []),
        "out_dir": str(run_dir),
        "version": VERSION,
        "created_at": datetime.now(timezone.utc).isoformat(),
    }
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return run_dir, manifest


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2) + "\n")


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    config = {
        "T": args.T,
        "T_val": args.T_val,
        "T_test": args.T_test,
        "noise": args.noise,
        "warmup": args.warmup,
        "seed": args.seed,
    }
    run_dir, _ = make_run_dir(args, "synth", config)

    lengths = [args.T]
    names = ["train"]
    if args.T_val > 0:
        lengths.append(args.T_val)
        names.append("val")
    if args.T_test > 0:
        lengths.append(args.T_test)
        names.append("test")

    # the CSVs carry the raw (pre-normalization) series; loaders normalize
    total = sum(lengths)
    u, y, _ = data._simulate_raw(args.seed, total, args.warmup, args.noise)
    pos = 0
    for name, length in zip(names, lengths):
        data.write_csv(run_dir / f"{name}.csv",
                       {"u": u[pos : pos + length], "y": y[pos : pos + length]})
        pos += length

    _, generator = data.gen_synthetic_splits(
        args.seed, tuple(lengths), args.noise, args.warmup
    )
    (run_dir / "generator.json").write_text(generator.to_json() + "\n")
    print(run_dir)
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _cell_spec(args, d_x: int, d_y: int) -> CellSpec:
    if args.cell == "linear":
        return CellSpec("linear", d_x, args.d_h, d_y, activation="identity",
                        use_biases=False)
    if args.cell == "elman":
        return CellSpec("elman", d_x, args.d_h, d_y, activation=args.activation)
    return CellSpec("lstm", d_x, args.d_h, d_y)


def _optimizer(args):
    if args.opt == "sgd":
        return SGDConfig(lr=args.lr)
    return AdamConfig(lr=args.lr)


_MODE_MAP = {"zero": "zero_init", "stateful": "stateful", "bptt": "full_bptt"}


def _train_config(args, spec: CellSpec) -> TrainConfig:
    return TrainConfig(
        spec=spec,
        N=args.N,
        m=args.m,
        batch_size=args.batch,
        optimizer=_optimizer(args),
        epochs=args.epochs,
        stride=args.stride,
        seed=args.seed,
        spectral_bound=None if args.rho <= 0 else args.rho,
        mode=_MODE_MAP[args.mode],
    )


def _load_train_dataset(args) -> data.TimeSeriesDataset:
    cols_in = args.input_cols.split(",")
    cols_tg = args.target_cols.split(",")
    return data.load_csv(args.data, cols_in, cols_tg)


def _run_training(dataset, args):
    spec = _cell_spec(args, dataset.d_x, dataset.d_y)
    if args.mode != "bptt" and args.m > args.N - 1:
        raise UsageError(f"burn-in m={args.m} exceeds N-1={args.N - 1}")
    config = _train_config(args, spec)
    log = training.train(dataset, config)
    return config, log


def cmd_train(args) -> int:
    dataset = _load_train_dataset(args)
    try:
        config, log = _run_training(dataset, args)
    except (ValueError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    run_cfg = {"inputs": [str(args.data)], **config.to_json_dict()}
    run_dir, _ = make_run_dir(args, "train", run_cfg)
    (run_dir / "params.json").write_text(log.params.to_json() + "\n")
    (run_dir / "log.jsonl").write_text(log.to_jsonl())
    _write_json(run_dir / "timings.json",
                {"wall_time_s": sum(r.wall_time_s for r in log.records)})
    summary = {
        "final_objective": log.records[-1].objective if log.records else None,
        "epochs_run": len(log.records),
        "config_hash": log.config_digest,
    }
    _write_json(run_dir / "summary.json", summary)
    print(run_dir)
    return 0


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------


def _int_list(text: str) -> list[int]:
    return [int(tok) for tok in text.split(",") if tok != ""]


def _sweep_cell(dataset, test_set, args, N: int, m: int) -> dict:
    t0 = time.perf_counter()
    cell_args = argparse.Namespace(**vars(args))
    cell_args.N, cell_args.m = N, m
    config, log = _run_training(dataset, cell_args)
    params = log.params
    plan = data.make_plan(dataset.T, N, args.stride)
    train_mse = training.full_batch_objective(params, dataset, plan, m)
    p_train = analysis.performance(params, None, dataset, m)
    stab = analysis.estimate_stability(params, dataset, num_pairs=16, seed=args.seed)
    row = {
        "N": N,
        "m": m,
        "train_mse": train_mse,
        "test_mse": "",
        "P": p_train,
        "lambda": stab.lam,
        "wall_time_s": time.perf_counter() - t0,
        "error": "",
    }
    if test_set is not None:
        m_eval = args.test_burn if args.test_burn >= 0 else m
        row["test_mse"] = analysis.performance(params, None, test_set, m_eval)
    return row


SWEEP_COLUMNS = ["N", "m", "train_mse", "test_mse", "P", "lambda", "wall_time_s", "error"]


def cmd_sweep(args) -> int:
    dataset = _load_train_dataset(args)
    test_set = None
    if args.test:
        cols_in = args.input_cols.split(",")
        cols_tg = args.target_cols.split(",")
        test_set = data.load_csv(
            args.test, cols_in, cols_tg,
            transforms=(dataset.input_transforms, dataset.target_transforms),
        )
    n_values = _int_list(args.N_list)
    m_values = _int_list(args.m_list)
    config = {
        "inputs": [str(args.data)] + ([str(args.test)] if args.test else []),
        "N_list": n_values,
        "m_list": m_values,
        "cell": args.cell,
        "d_h": args.d_h,
        "activation": args.activation,
        "stride": args.stride,
        "batch": args.batch,
        "opt": args.opt,
        "lr": args.lr,
        "epochs": args.epochs,
        "seed": args.seed,
        "rho": args.rho,
        "mode": args.mode,
        "test_burn": args.test_burn,
    }
    run_dir, _ = make_run_dir(args, "sweep", config)

    cells = [(N, m) for N in n_values for m in m_values]
    rows: dict[tuple[int, int], dict] = {}

    def run_cell(cell):
        N, m = cell
        if m > N - 1 and args.mode != "bptt":
            return {"N": N, "m": m, "train_mse": "", "test_mse": "", "P": "",
                    "lambda": "", "wall_time_s": "", "error": f"m={m} exceeds N-1"}
        try:
            return _sweep_cell(dataset, test_set, args, N, m)
        except Exception as exc:  # cell failures must not kill the sweep
            return {"N": N, "m": m, "train_mse": "", "test_mse": "", "P": "",
                    "lambda": "", "wall_time_s": "", "error": str(exc)}

    if args.jobs > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=args.jobs) as pool:
            for cell, row in zip(cells, pool.map(run_cell, cells)):
                rows[cell] = row
    else:
        for cell in cells:
            rows[cell] = run_cell(cell)

    report = run_dir / "report.csv"
    with open(report, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for cell in sorted(rows):
            writer.writerow({k: rows[cell].get(k, "") for k in SWEEP_COLUMNS})
    print(run_dir)
    failed = [c for c, r in rows.items() if r["error"]]
    invalid_only = all(rows[c]["error"].startswith("m=") for c in failed) if failed else True
    if failed and not invalid_only:
        return 4
    return 0


# ---------------------------------------------------------------------------
# benchmark
# ---------------------------------------------------------------------------


def cmd_benchmark(args) -> int:
    dataset = _load_train_dataset(args)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    unknown = [v for v in variants if v not in benchmark.VARIANTS]
    if unknown:
        print(f"error: unknown variants {unknown}", file=sys.stderr)
        return 2
    m_values = _int_list(args.m_list)
    if any(m > args.N - 1 for m in m_values):
        print(f"error: burn-in values {m_values} must stay below N={args.N}", file=sys.stderr)
        return 2
    config = {
        "inputs": [str(args.data)],
        "N": args.N,
        "stride": args.stride,
        "m_list": m_values,
        "variants": variants,
        "cell": args.cell,
        "d_h": args.d_h,
        "activation": args.activation,
        "restarts": args.restarts,
        "iters": args.iters,
        "lr": args.lr,
        "seed": args.seed,
        "rho": args.rho,
    }
    run_dir, _ = make_run_dir(args, "benchmark", config)

    spec = _cell_spec(args, dataset.d_x, dataset.d_y)
    plan = data.make_plan(dataset.T, args.N, args.stride)
    rho = None if args.rho <= 0 else args.rho
    all_converged = True
    report_rows = []
    for m in m_values:
        opt = benchmark.OptConfig(restarts=args.restarts, max_iters=args.iters,
                                  lr=args.lr, seed=args.seed, spectral_bound=rho)
        sols: dict[str, benchmark.LiftedSolution] = {}
        for variant in variants:
            v_opt = benchmark.OptConfig(**{**opt.__dict__})
            if variant == "coupled" and "tbptt" in sols:
                v_opt.extra_starts = [(sols["tbptt"].params, None)]
            if variant == "unconstrained":
                extra = []
                if "tbptt" in sols:
                    extra.append((sols["tbptt"].params, None))
                if "coupled" in sols:
                    extra.append((
                        sols["coupled"].params,
                        benchmark.segment_initial_states(sols["coupled"], dataset, plan),
                    ))
                v_opt.extra_starts = extra
            sol = benchmark.solve_variant(variant, dataset, plan, m, spec, v_opt)
            sols[variant] = sol
            all_converged &= sol.converged
            (run_dir / f"solution_{variant}_m{m}.json").write_text(sol.to_json() + "\n")

        if "tbptt" in sols and "coupled" in sols:
            stab = analysis.merge_stability(
                analysis.estimate_stability(sols["tbptt"].params, dataset, seed=args.seed),
                analysis.estimate_stability(sols["coupled"].params, dataset, seed=args.seed),
            )
            if "unconstrained" in sols:
                eps = analysis.epsilon_check(sols["tbptt"], sols["unconstrained"],
                                             dataset, plan, m)
            else:
                eps = analysis.EpsilonCheck(0.0, 0.0, float("inf"), True)
            observed = analysis.collect_observed(list(sols.values()), dataset, plan)
            constants = analysis.bound_constants(stab, eps, observed)
            report = analysis.regret_report(sols["tbptt"], sols["coupled"],
                                            dataset, plan, m, constants)
            report_rows.append(report)
            _write_json(run_dir / f"report_m{m}.json", report.to_json_dict())

    if report_rows:
        with open(run_dir / "report.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(analysis.RegretReport.csv_header())
            for report in report_rows:
                writer.writerow(report.csv_row())
    print(run_dir)
    # non-convergence is flagged inside the solution files, not via exit code;
    # hard numeric failures surface as exceptions (exit 3)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--cell", choices=["linear", "elman", "lstm"], default="linear",
                   help="recurrent cell kind")
    p.add_argument("--d-h", type=int, default=1, dest="d_h", help="hidden state width")
    p.add_argument("--activation", choices=["tanh", "relu", "identity"], default="tanh",
                   help="elman activation")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="training CSV")
    p.add_argument("--input-cols", default="u", help="comma-separated input columns")
    p.add_argument("--target-cols", default="y", help="comma-separated target columns")
    _add_model_flags(p)
    p.add_argument("--stride", type=int, default=1, help="segment start spacing")
    p.add_argument("--batch", type=int, default=16, help="mini-batch size")
    p.add_argument("--opt", choices=["sgd", "adam"], default="adam", help="optimizer")
    p.add_argument("--lr", type=float, default=0.01, help="step size")
    p.add_argument("--epochs", type=int, default=200, help="epoch budget")
    p.add_argument("--seed", type=int, default=0, help="run seed")
    p.add_argument("--rho", type=float, default=0.999,
                   help="spectral bound on the recurrent block; <=0 disables")
    p.add_argument("--mode", choices=["zero", "stateful", "bptt"], default="zero",
                   help="zero-initialized, state-passing, or whole-sequence training")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tbptt",
        description="Train recurrent models on overlapping segments with a "
                    "tunable burn-in phase, and compare against benchmark "
                    "initializations.",
    )
    parser.add_argument("--out", default=None, help=f"output root (default ${OUT_ROOT_ENV} or ./runs)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic train/val/test CSVs")
    p.add_argument("--T", type=int, default=100, help="training length")
    p.add_argument("--T-val", type=int, default=0, dest="T_val", help="validation length")
    p.add_argument("--T-test", type=int, default=100, dest="T_test", help="test length")
    p.add_argument("--noise", type=float, default=0.05, help="output noise std")
    p.add_argument("--warmup", type=int, default=50, help="pre-recording steps")
    p.add_argument("--seed", type=int, default=1, help="generator seed")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="one training run")
    _add_train_flags(p)
    p.add_argument("--N", type=int, default=21, help="segment length")
    p.add_argument("--m", type=int, default=0, help="burn-in steps")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="train over a grid of (N, m) values")
    _add_train_flags(p)
    p.add_argument("--test", default=None, help="test CSV (normalized with training transforms)")
    p.add_argument("--N-list", default="21", dest="N_list", help="comma-separated window lengths")
    p.add_argument("--m-list", default="0", dest="m_list", help="comma-separated burn-in values")
    p.add_argument("--test-burn", type=int, default=-1, dest="test_burn",
                   help="fixed burn-in for test evaluation; -1 reuses each cell's m")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                   help="concurrent sweep cells")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("benchmark", help="solve reference problems and report regrets")
    p.add_argument("--data", required=True, help="training CSV")
    p.add_argument("--input-cols", default="u", help="comma-separated input columns")
    p.add_argument("--target-cols", default="y", help="comma-separated target columns")
    _add_model_flags(p)
    p.add_argument("--N", type=int, default=21, help="segment length")
    p.add_argument("--stride", type=int, default=1, help="segment start spacing")
    p.add_argument("--m-list", default="0", dest="m_list", help="comma-separated burn-in values")
    p.add_argument("--variants", default="tbptt,coupled,unconstrained",
                   help="comma-separated problem variants to solve")
    p.add_argument("--restarts", type=int, default=4, help="optimizer restarts")
    p.add_argument("--iters", type=int, default=8000, help="iteration budget per start")
    p.add_argument("--lr", type=float, default=0.05, help="optimizer step size")
    p.add_argument("--seed", type=int, default=0, help="restart seed")
    p.add_argument("--rho", type=float, default=0.999,
                   help="spectral bound on the recurrent block; <=0 disables")
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NonFiniteError, TrainingError, PowerIterationError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
