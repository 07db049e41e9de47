"""Experiment harness: run filters against simulated truth and score them.

A run configuration names a graph, a simulation setup, a set of
(filter, particle count) cells and one or more seeds.  For each seed
one trajectory is simulated and every cell filters the same observation
stream.  Per-step metrics go to a tidy CSV; aggregate figures (mean log
RMSE per cell, wall clock, path-cache hit rate) go to a JSON summary.
"""
from __future__ import annotations

import json
import math
import os
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .filters import BsParticle, FilterOutput, Particle, run_bs, run_pl
from .motion import NoiseConfig
from .network import RoadGraph, grid_graph, load_graph
from .search import SearchConfig
from .simulate import SimConfig, SimRecord, ground_truth, observations, simulate
from .transitions import TransitionParams, TransitionPrior


class ConfigError(ValueError):
    """A run configuration could not be parsed or validated."""


# ---------------------------------------------------------------------------
# metrics


def rmse(estimates, truth) -> float:
    """Root mean squared error of ground-frame state estimates.

    ``estimates`` is an (N, 4) array of per-particle state vectors,
    ``truth`` the true 4-vector; the mean runs over particles.
    """
    est = np.asarray(estimates, dtype=float).reshape(-1, 4)
    if not len(est):
        raise ValueError("empty estimate set")
    diff = est - np.asarray(truth, dtype=float).reshape(4)
    return float(np.sqrt(np.mean(np.sum(diff * diff, axis=1))))


def credible_interval(samples, level: float = 0.95) -> tuple[float, float, float]:
    """(lower, median, upper) empirical quantiles at the given level."""
    s = np.asarray(samples, dtype=float)
    if s.size < 2:
        raise ValueError("need at least 2 samples")
    tail = 0.5 * (1.0 - level)
    lo, med, hi = np.quantile(s, [tail, 0.5, 1.0 - tail])
    return float(lo), float(med), float(hi)


def particle_ground_states(particles, graph: RoadGraph) -> np.ndarray:
    """Stack per-particle ground-frame state estimates.

    PL particles contribute their posterior mean; BS particles their
    point state.
    """
    rows = []
    for p in particles:
        if isinstance(p, Particle):
            rows.append(p.ground.mean)
        elif isinstance(p, BsParticle):
            rows.append(p.ground)
        else:
            raise TypeError(f"unknown particle type {type(p)!r}")
    return np.asarray(rows)


# ---------------------------------------------------------------------------
# run configuration


@dataclass(frozen=True)
class RunConfig:
    """Everything needed to reproduce one experiment."""

    graph_grid: tuple[int, float] | None      # (n, spacing) or None
    graph_file: str | None
    sim: SimConfig
    filters: tuple[str, ...]
    particle_counts: tuple[int, ...]
    search: SearchConfig
    prior: TransitionPrior
    out_dir: str
    seed: int
    seeds: tuple[int, ...]
    learn_transitions: bool = True
    velocity_var: float = 25.0

    def build_graph(self) -> RoadGraph:
        if self.graph_file is not None:
            return load_graph(self.graph_file)
        n, spacing = self.graph_grid
        return grid_graph(n, spacing)


def _require(mapping: dict, key: str, where: str):
    if key not in mapping:
        raise ConfigError(f"missing key {key!r} in {where}")
    return mapping[key]


def parse_config(data: dict, base_dir: str | Path = ".") -> RunConfig:
    """Validate a configuration mapping (already JSON-decoded)."""
    try:
        noise_d = _require(data, "noise", "config")
        noise = NoiseConfig(
            sigma2_r=float(_require(noise_d, "sigma2_r", "noise")),
            sigma2_g=float(_require(noise_d, "sigma2_g", "noise")),
            sigma2_y=float(_require(noise_d, "sigma2_y", "noise")),
            dt=float(_require(noise_d, "dt", "noise")))

        graph_d = _require(data, "graph", "config")
        graph_grid = graph_file = None
        if "grid" in graph_d:
            graph_grid = (int(graph_d["grid"]["n"]),
                          float(graph_d["grid"].get("spacing", 1.0)))
        elif "file" in graph_d:
            graph_file = str(Path(base_dir) / graph_d["file"])
        else:
            raise ConfigError("graph needs either 'grid' or 'file'")

        sim_d = _require(data, "sim", "config")
        params_d = _require(sim_d, "params", "sim")
        params = TransitionParams.from_rates(
            pi_off=float(_require(params_d, "pi_off", "sim.params")),
            pi_g=float(_require(params_d, "pi_g", "sim.params")))
        start = sim_d.get("start")
        if isinstance(start, list):
            start = (float(start[0]), float(start[1]))
        sim = SimConfig(
            noise=noise, params=params,
            steps=int(_require(sim_d, "steps", "sim")),
            seed=int(sim_d.get("seed", 0)),
            start=start,
            preserve_speed=bool(sim_d.get("preserve_speed", False)),
            entry_radius=float(sim_d.get("entry_radius", math.inf)))

        prior_d = _require(data, "prior", "config")
        prior = TransitionPrior(
            alpha_off_off=float(_require(prior_d, "alpha_off_off", "prior")),
            alpha_off_on=float(_require(prior_d, "alpha_off_on", "prior")),
            alpha_on_on=float(_require(prior_d, "alpha_on_on", "prior")),
            alpha_on_off=float(_require(prior_d, "alpha_on_off", "prior")))

        search_d = data.get("search", {})
        search = SearchConfig(
            sigma_radius=float(search_d.get("sigma_radius", 3.0)),
            max_path_length=float(search_d.get("max_path_length", 2.0)),
            max_candidates=int(search_d.get("max_candidates", 32)),
            cache_size=int(search_d.get("cache_size", 4096)))

        filters = tuple(str(f).upper() for f in data.get("filters", ["PL", "BS"]))
        for f in filters:
            if f not in ("PL", "BS"):
                raise ConfigError(f"unknown filter {f!r} (expected PL or BS)")
        counts = tuple(int(c) for c in data.get("particle_counts", [25]))
        if any(c < 1 for c in counts):
            raise ConfigError("particle counts must be >= 1")

        seed = int(data.get("seed", 0))
        seeds = tuple(int(s) for s in data.get("seeds", [seed]))

        return RunConfig(
            graph_grid=graph_grid, graph_file=graph_file, sim=sim,
            filters=filters, particle_counts=counts, search=search,
            prior=prior, out_dir=str(data.get("out_dir", "results")),
            seed=seed, seeds=seeds,
            learn_transitions=bool(data.get("learn_transitions", True)),
            velocity_var=float(data.get("velocity_var", 25.0)))
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> RunConfig:
    """Read and validate a JSON run configuration file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    except OSError as exc:
        raise ConfigError(str(exc)) from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return parse_config(data, base_dir=Path(path).parent)


# ---------------------------------------------------------------------------
# metric rows


# The metric file is byte-deterministic for a fixed seed and config, so
# per-step wall-clock times live in a separate timing file instead.
METRIC_HEADER = ("filter,particles,seed,step,rmse,"
                 "pi_g_lo,pi_g_median,pi_g_hi,pi_r_lo,pi_r_median,pi_r_hi")
TIMING_HEADER = "filter,particles,seed,step,runtime_s"


@dataclass(frozen=True)
class MetricRow:
    filter: str
    particles: int
    seed: int
    step: int
    rmse: float
    runtime_s: float
    pi_g_ci: tuple[float, float, float] | None = None
    pi_r_ci: tuple[float, float, float] | None = None

    def to_csv(self) -> str:
        gs = self.pi_g_ci if self.pi_g_ci else ("", "", "")
        rs = self.pi_r_ci if self.pi_r_ci else ("", "", "")
        cells = [self.filter, str(self.particles), str(self.seed), str(self.step),
                 repr(float(self.rmse))]
        cells += [repr(float(v)) if v != "" else "" for v in gs]
        cells += [repr(float(v)) if v != "" else "" for v in rs]
        return ",".join(cells)

    def to_timing_csv(self) -> str:
        return ",".join([self.filter, str(self.particles), str(self.seed),
                         str(self.step), repr(float(self.runtime_s))])


def metric_rows(output: FilterOutput, truth: np.ndarray, graph: RoadGraph,
                seed: int) -> list[MetricRow]:
    """Score one filter run against the true trajectory."""
    rows = []
    for rec in output.steps:
        est = particle_ground_states(rec.particles, graph)
        gci = rci = None
        if rec.param_samples is not None:
            gci = credible_interval(rec.param_samples[:, 0])
            rci = credible_interval(rec.param_samples[:, 1])
        rows.append(MetricRow(
            filter=output.name, particles=output.n, seed=seed, step=rec.step,
            rmse=rmse(est, truth[rec.step]), runtime_s=rec.runtime_s,
            pi_g_ci=gci, pi_r_ci=rci))
    return rows


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_metrics(rows: list[MetricRow], path) -> None:
    text = METRIC_HEADER + "\n" + "".join(r.to_csv() + "\n" for r in rows)
    _atomic_write(Path(path), text)


def write_timings(rows: list[MetricRow], path) -> None:
    text = TIMING_HEADER + "\n" + "".join(r.to_timing_csv() + "\n" for r in rows)
    _atomic_write(Path(path), text)


# ---------------------------------------------------------------------------
# orchestration


def run_cell(graph: RoadGraph, records: list[SimRecord], cfg: RunConfig,
             name: str, n: int, seed: int) -> tuple[list[MetricRow], dict]:
    """Run one (filter, particle count) cell on a simulated stream."""
    obs = observations(records)
    truth = ground_truth(records)
    t0 = time.perf_counter()
    if name == "PL":
        out = run_pl(graph, obs, cfg.sim.noise, cfg.prior, n, seed=seed,
                     search=cfg.search, learn=cfg.learn_transitions,
                     fixed_params=None if cfg.learn_transitions else cfg.sim.params,
                     velocity_var=cfg.velocity_var)
    elif name == "BS":
        out = run_bs(graph, obs, cfg.sim.noise, cfg.sim.params, n, seed=seed,
                     preserve_speed=cfg.sim.preserve_speed,
                     entry_radius=cfg.sim.entry_radius,
                     velocity_var=cfg.velocity_var)
    else:
        raise ConfigError(f"unknown filter {name!r}")
    wall = time.perf_counter() - t0
    rows = metric_rows(out, truth, graph, seed)
    mean_log_rmse = float(np.mean([math.log(r.rmse) for r in rows]))
    summary = {
        "filter": name, "particles": n, "seed": seed,
        "mean_log_rmse": mean_log_rmse,
        "wall_clock_s": wall,
        "cache_hit_rate": (out.cache_stats or {}).get("hit_rate"),
        "log_likelihood": out.log_likelihood,
    }
    return rows, summary


def run(cfg: RunConfig, out_dir: str | Path | None = None) -> dict:
    """Execute every (filter, N, seed) cell and write metric files.

    Returns the summary mapping (also written to ``summary.json``).
    Output files: ``metrics.csv`` with one row per step and cell and
    ``summary.json`` with per-cell aggregates.
    """
    out_path = Path(out_dir if out_dir is not None else cfg.out_dir)
    graph = cfg.build_graph()
    all_rows: list[MetricRow] = []
    cells = []
    for seed in cfg.seeds:
        sim_cfg = SimConfig(noise=cfg.sim.noise, params=cfg.sim.params,
                            steps=cfg.sim.steps, seed=seed,
                            start=cfg.sim.start,
                            preserve_speed=cfg.sim.preserve_speed,
                            entry_radius=cfg.sim.entry_radius)
        records = simulate(graph, sim_cfg)
        for name in cfg.filters:
            for n in cfg.particle_counts:
                rows, summary = run_cell(graph, records, cfg, name, n, seed)
                all_rows.extend(rows)
                cells.append(summary)
    summary = {"cells": cells, "seeds": list(cfg.seeds)}
    write_metrics(all_rows, out_path / "metrics.csv")
    write_timings(all_rows, out_path / "timings.csv")
    _atomic_write(out_path / "summary.json",
                  json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def mean_log_rmse(summary: dict, name: str, n: int) -> float:
    """Average the per-seed mean log RMSE of one cell."""
    vals = [c["mean_log_rmse"] for c in summary["cells"]
            if c["filter"] == name and c["particles"] == n]
    if not vals:
        raise KeyError(f"no cells for {name} N={n}")
    return float(np.mean(vals))
