"""Command-line harness.

Verbs:
  generate-graph  write a grid road network as an edge-list file
  simulate        generate a trajectory + observations CSV
  filter          run one filter on an existing simulation CSV
  evaluate        simulate and run every configured (filter, N) cell
  sweep           evaluate across an explicit seed range

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from .evaluation import (
    ConfigError,
    RunConfig,
    load_config,
    mean_log_rmse,
    metric_rows,
    run,
    run_cell,
    write_metrics,
)
from .filters import DegenerateWeightsError
from .network import grid_edge_records, build_graph, save_graph
from .simulate import SimConfig, load_records, save_records, simulate


def _parse_seeds(spec: str) -> list[int]:
    if ":" in spec:
        lo, hi = spec.split(":", 1)
        return list(range(int(lo), int(hi)))
    return [int(s) for s in spec.split(",")]


def _with_seed(cfg: RunConfig, seed: int | None, seeds: list[int] | None) -> RunConfig:
    updates = {}
    if seed is not None:
        updates["seed"] = seed
        updates["seeds"] = (seed,)
    if seeds is not None:
        updates["seeds"] = tuple(seeds)
    return dataclasses.replace(cfg, **updates) if updates else cfg


def _cmd_generate_graph(args) -> int:
    graph = build_graph(grid_edge_records(args.grid, args.spacing))
    save_graph(graph, args.out)
    print(f"wrote {len(graph.edges)} edges to {args.out}")
    return 0


def _cmd_simulate(args) -> int:
    cfg = _with_seed(load_config(args.config), args.seed, None)
    graph = cfg.build_graph()
    sim_cfg = dataclasses.replace(cfg.sim, seed=cfg.seeds[0])
    records = simulate(graph, sim_cfg)
    save_records(records, args.out)
    on = sum(1 for r in records if r.on_road)
    print(f"wrote {len(records)} steps ({on} on-road) to {args.out}")
    return 0


def _cmd_filter(args) -> int:
    cfg = _with_seed(load_config(args.config), args.seed, None)
    graph = cfg.build_graph()
    records = load_records(args.sim)
    rows, summary = run_cell(graph, records, cfg, args.filter.upper(),
                             args.particles, cfg.seeds[0])
    write_metrics(rows, args.out)
    print(f"{summary['filter']} N={summary['particles']}: "
          f"mean log RMSE {summary['mean_log_rmse']:.4f}, "
          f"wall clock {summary['wall_clock_s']:.1f}s -> {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    cfg = _with_seed(load_config(args.config), args.seed, None)
    summary = run(cfg, out_dir=args.out_dir)
    for cell in summary["cells"]:
        print(f"{cell['filter']:>2} N={cell['particles']:<4} seed={cell['seed']:<4} "
              f"mean log RMSE {cell['mean_log_rmse']:.4f}")
    return 0


def _cmd_sweep(args) -> int:
    cfg = _with_seed(load_config(args.config), None, _parse_seeds(args.seeds))
    summary = run(cfg, out_dir=args.out_dir)
    seen = sorted({(c["filter"], c["particles"]) for c in summary["cells"]})
    for name, n in seen:
        print(f"{name:>2} N={n:<4} mean log RMSE over {len(cfg.seeds)} seeds: "
              f"{mean_log_rmse(summary, name, n):.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="roadtrack",
                                     description="On/off-road GPS tracking experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-graph", help="write a grid edge-list file")
    p.add_argument("--grid", type=int, required=True, help="nodes per side")
    p.add_argument("--spacing", type=float, default=100.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_generate_graph)

    p = sub.add_parser("simulate", help="generate a trajectory CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("filter", help="run one filter on a simulation CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--sim", required=True)
    p.add_argument("--filter", choices=["PL", "BS", "pl", "bs"], required=True)
    p.add_argument("--particles", type=int, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_filter)

    p = sub.add_parser("evaluate", help="run all configured cells")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("sweep", help="evaluate across a seed range")
    p.add_argument("--config", required=True)
    p.add_argument("--seeds", required=True,
                   help="comma list or start:stop range, e.g. 0:10")
    p.add_argument("--out-dir")
    p.set_defaults(func=_cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DegenerateWeightsError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
