"""Command-line front end: ``stats``, ``mttkrp``, ``simulate`` and ``explore``."""

from __future__ import annotations

import argparse
import itertools
import json
import math
import os
import sys
from typing import Optional, Sequence

import numpy as np

from . import cost_model
from .config import ExperimentConfig
from .explorer import InfeasibleError, explore, explore_modular
from .kernels import APPROACHES, dense_oracle, run_kernel
from .memsim import FORMAT_VERSION, ConfigError, RoutingError, simulate
from .synthetic import kernel_trace, random_factors
from .tensor import FactorMatrix, FrosttParseError, SparseTensorCOO, read_frostt, tensor_stats
from .trace import AccessTrace

EXIT_OK = 0
EXIT_PARSE = 3
EXIT_VALIDATION = 4
EXIT_RECONCILIATION = 5
EXIT_INFEASIBLE = 6


class ReconciliationError(RuntimeError):
    pass


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _emit(args, name: str, text: str) -> None:
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, name), "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.tensor:
        cfg.tensors = list(args.tensor)
    if getattr(args, "trace", None):
        cfg.traces = list(args.trace)
    if getattr(args, "factors", None):
        cfg.factors = list(args.factors)
    if args.rank is not None:
        cfg.rank = args.rank
    if args.seed is not None:
        cfg.seed = args.seed
    if args.approach is not None:
        cfg.approach = args.approach
    if args.mode is not None:
        cfg.modes = [args.mode]
    if args.max_pointers is not None:
        cfg.max_pointers = args.max_pointers
    if args.out is None:
        args.out = cfg.out
    cfg.out = args.out
    cfg.validate()
    return cfg


def _tensor(cfg: ExperimentConfig) -> SparseTensorCOO:
    if not cfg.tensors:
        raise ConfigError("no tensor given (use --tensor or 'tensors' in the config)")
    return read_frostt(cfg.tensors[0])


def _modes(cfg: ExperimentConfig, tensor: SparseTensorCOO) -> list[int]:
    modes = list(range(tensor.num_modes)) if cfg.modes is None else list(cfg.modes)
    for m in modes:
        if not 0 <= m < tensor.num_modes:
            raise ConfigError(f"mode {m} out of range for a {tensor.num_modes}-mode tensor")
    return modes


def _factors(cfg: ExperimentConfig, tensor: SparseTensorCOO) -> list[FactorMatrix]:
    if not cfg.factors:
        return random_factors(tensor.mode_lengths, cfg.rank, cfg.seed)
    if len(cfg.factors) != tensor.num_modes:
        raise ConfigError(f"need {tensor.num_modes} factor files, got {len(cfg.factors)}")
    mats = [np.loadtxt(p, ndmin=2) for p in cfg.factors]
    for m, a in enumerate(mats):
        if a.shape[0] != tensor.mode_lengths[m] or a.shape[1] != mats[0].shape[1]:
            raise ConfigError(f"factor file {cfg.factors[m]} has shape {a.shape}, expected "
                              f"({tensor.mode_lengths[m]}, {mats[0].shape[1]})")
    return [FactorMatrix(m, a) for m, a in enumerate(mats)]


def _format_matrix(a: np.ndarray) -> str:
    return "".join(" ".join(f"{x:.17g}" for x in row) + "\n" for row in a)


def _rel_dev(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(float(np.abs(b).max(initial=0.0)), 1e-300)
    return float(np.abs(a - b).max(initial=0.0)) / scale


# ---------------------------------------------------------------- commands


def cmd_stats(args) -> int:
    cfg = _config(args)
    tensor = _tensor(cfg)
    stats = tensor_stats(tensor, cfg.rank, cfg.widths).to_json()
    stats["format_version"] = FORMAT_VERSION
    _emit(args, "stats.json", _dump(stats))
    return EXIT_OK


def cmd_mttkrp(args) -> int:
    cfg = _config(args)
    tensor = _tensor(cfg)
    approaches = list(APPROACHES) if cfg.approach == "all" else [cfg.approach]
    factors = _factors(cfg, tensor)
    rank = factors[0].rank
    dense_ok = math.prod(tensor.mode_lengths) <= 10**6
    n = tensor.num_modes
    results: dict = {}
    failed = []
    for mode in _modes(cfg, tensor):
        per_mode: dict = {}
        outputs = {}
        oracle = dense_oracle(tensor, factors, mode).data if dense_ok else None
        for approach in approaches:
            res = run_kernel(tensor, factors, mode, approach, input_mode=cfg.input_mode,
                             max_pointers=cfg.max_pointers, widths=cfg.widths)
            outputs[approach] = res.output.data
            entry: dict = {"counters": res.counters.to_json()}
            if approach != "coo":
                inp = (mode + 1) % n if cfg.input_mode is None else cfg.input_mode
                rec = cost_model.reconcile(
                    res.counters, approach, n, tensor.nnz, rank,
                    out_length=tensor.mode_lengths[mode],
                    in_length=tensor.mode_lengths[inp], widths=cfg.widths)
                entry["cost_model"] = rec.to_json()
                entry["total_accesses"] = rec.measured_accesses
                if not rec.ok:
                    failed.append((mode, approach, rec.measured_accesses,
                                   rec.predicted.total_accesses))
            if oracle is not None:
                entry["max_rel_dev_vs_oracle"] = _rel_dev(res.output.data, oracle)
            name = f"mode{mode}_{approach}"
            if args.out:
                _emit(args, f"{name}.txt", _format_matrix(res.output.data))
                if args.emit_trace and approach != "coo":
                    os.makedirs(args.out, exist_ok=True)
                    ext = ".bin" if args.trace_format == "binary" else ".trace"
                    res.trace.save(os.path.join(args.out, name + ext))
            per_mode[approach] = entry
        if len(outputs) > 1:
            per_mode["pairwise_max_rel_dev"] = max(
                _rel_dev(outputs[a], outputs[b]) for a, b in itertools.combinations(outputs, 2))
        results[str(mode)] = per_mode
    report = {
        "format_version": FORMAT_VERSION,
        "config": cfg.to_json(),
        "stats": tensor_stats(tensor, rank, cfg.widths).to_json(),
        "modes": results,
        "reconciled": not failed,
    }
    _emit(args, "mttkrp_report.json", _dump(report))
    if failed:
        raise ReconciliationError(
            "measured accesses differ from the cost model: "
            + "; ".join(f"mode {m} {a}: measured {x}, predicted {p}" for m, a, x, p in failed))
    return EXIT_OK


def _datasets(cfg: ExperimentConfig) -> list[AccessTrace]:
    traces = [AccessTrace.load(p) for p in cfg.traces]
    approach = "a1" if cfg.approach in ("all", "coo") else cfg.approach
    for path in cfg.tensors:
        tensor = read_frostt(path)
        for mode in _modes(cfg, tensor):
            traces.append(kernel_trace(tensor, approach, mode, cfg.rank, cfg.seed,
                                       cfg.max_pointers, cfg.widths))
    if not traces:
        raise ConfigError("no trace or tensor given")
    return traces


def cmd_simulate(args) -> int:
    cfg = _config(args)
    if not cfg.traces and cfg.modes is None:
        cfg.modes = [0]
    traces = _datasets(cfg)
    reports = [simulate(t, cfg.controller, cfg.dram).to_json() for t in traces]
    out = reports[0] if len(reports) == 1 else {"format_version": FORMAT_VERSION, "runs": reports}
    out = {**out, "experiment": cfg.to_json()}
    _emit(args, "sim_report.json", _dump(out))
    return EXIT_OK


def cmd_explore(args) -> int:
    cfg = _config(args)
    traces = _datasets(cfg)
    if cfg.explore.get("method") == "modular":
        report = explore_modular(traces, cfg.grid, cfg.fpga, cfg.dram, cfg.controller,
                                 passes=int(cfg.explore.get("passes", 1)))
    else:
        report = explore(traces, cfg.grid, cfg.fpga, cfg.dram, cfg.controller)
    out = {**report.to_json(), "experiment": cfg.to_json()}
    _emit(args, "explore_report.json", _dump(out))
    if args.out:
        _emit(args, "explore_ranking.csv", report.ranking_csv())
    return EXIT_OK


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment configuration")
    common.add_argument("--tensor", action="append", help="FROSTT .tns file (repeatable)")
    common.add_argument("--mode", type=int, help="output mode (default: all modes)")
    common.add_argument("--approach", choices=[*APPROACHES, "all"])
    common.add_argument("--rank", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--max-pointers", type=int, dest="max_pointers")
    common.add_argument("--out", help="output directory (default: JSON to stdout)")

    parser = argparse.ArgumentParser(prog="mttkrp-memsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("stats", parents=[common], help="tensor statistics as JSON")
    p = sub.add_parser("mttkrp", parents=[common], help="run MTTKRP kernels and reconcile counts")
    p.add_argument("--emit-trace", action="store_true")
    p.add_argument("--factors", action="append",
                   help="factor-matrix text file, one per mode in order (default: seeded random)")
    p.add_argument("--trace-format", choices=["text", "binary"], default="text")
    p = sub.add_parser("simulate", parents=[common], help="simulate the memory controller")
    p.add_argument("--trace", action="append", help="trace file (.trace text or .bin)")
    p = sub.add_parser("explore", parents=[common], help="search controller parameters")
    p.add_argument("--trace", action="append", help="dataset trace file (repeatable)")
    return parser


COMMANDS = {"stats": cmd_stats, "mttkrp": cmd_mttkrp, "simulate": cmd_simulate,
            "explore": cmd_explore}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except FrosttParseError as exc:
        print(f"error: parse: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (ConfigError, RoutingError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ReconciliationError as exc:
        print(f"error: reconciliation: {exc}", file=sys.stderr)
        return EXIT_RECONCILIATION
    except InfeasibleError as exc:
        print(f"error: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
