"""Synthetic trajectories and noisy observations on a road network.

The generating process is exactly the bootstrap proposal: the same
sampling kernel advances the true state, and each step emits the true
positions corrupted by isotropic observation noise.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .filters import propagate_state
from .motion import EdgeTransform, NoiseConfig, RoadState, to_ground
from .network import OFF_ROAD, RoadGraph
from .transitions import TransitionParams


@dataclass(frozen=True)
class SimConfig:
    """Ground-truth generation settings.

    ``start`` may be an edge id (start at its midpoint), a ground point
    ``(x, y)`` (start off-road there), or None for a random on-road
    location.  The trajectory always starts at rest.
    """

    noise: NoiseConfig
    params: TransitionParams
    steps: int
    seed: int = 0
    start: int | tuple[float, float] | None = None
    preserve_speed: bool = False
    entry_radius: float = math.inf

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")


@dataclass(frozen=True)
class SimRecord:
    """One simulated step: true state in both frames plus the observation."""

    step: int
    edge: int
    road: RoadState | None
    ground: np.ndarray
    obs: np.ndarray

    @property
    def on_road(self) -> bool:
        return self.edge != OFF_ROAD


CSV_HEADER = ["step", "edge_id", "d", "v", "l1", "v1", "l2", "v2", "y1", "y2"]


def _initial_state(graph: RoadGraph, cfg: SimConfig, rng: np.random.Generator):
    start = cfg.start
    if start is None:
        ids = sorted(graph.edges)
        eid = ids[int(rng.integers(len(ids)))]
        e = graph.edges[eid]
        d = float(rng.uniform(0.0, e.length))
    elif isinstance(start, int):
        eid = start
        e = graph.edges[eid]
        d = 0.5 * e.length
    else:
        ground = np.array([start[0], 0.0, start[1], 0.0], dtype=float)
        return OFF_ROAD, None, ground
    road = RoadState(d, 0.0)
    t = EdgeTransform.for_edge(graph.edges[eid], 0.0)
    return eid, road, np.asarray(to_ground(road, t))


def simulate(graph: RoadGraph, cfg: SimConfig,
             rng: np.random.Generator | None = None) -> list[SimRecord]:
    """Generate ``cfg.steps`` records, one observation per step.

    Step 0 records the initial state.  Raises ``RuntimeError`` when the
    trajectory reaches a dead end it cannot lawfully leave (no successor
    edges and an off-road switch probability of zero).
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    noise = cfg.noise
    sd_y = math.sqrt(noise.sigma2_y)
    edge, road, ground = _initial_state(graph, cfg, rng)

    records: list[SimRecord] = []
    for step in range(cfg.steps):
        obs = ground[[0, 2]] + rng.normal(0.0, sd_y, size=2)
        records.append(SimRecord(step=step, edge=edge, road=road,
                                 ground=ground.copy(), obs=obs))
        if step == cfg.steps - 1:
            break
        edge, road, ground, dead = propagate_state(
            edge, road, ground, graph, noise, cfg.params, rng,
            preserve_speed=cfg.preserve_speed, entry_radius=cfg.entry_radius)
        if dead and cfg.params.pi_off == 0.0:
            raise RuntimeError(
                f"step {step + 1}: trajectory stuck at a dead end on edge "
                f"{edge} with pi_off = 0")
    return records


def observations(records: list[SimRecord]) -> np.ndarray:
    return np.array([r.obs for r in records])


def ground_truth(records: list[SimRecord]) -> np.ndarray:
    return np.array([r.ground for r in records])


def save_records(records: list[SimRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for r in records:
            d, v = (r.road.d, r.road.v) if r.road is not None else (math.nan, math.nan)
            writer.writerow([r.step, r.edge, repr(float(d)), repr(float(v)),
                             *(repr(float(x)) for x in r.ground),
                             *(repr(float(x)) for x in r.obs)])


def load_records(path) -> list[SimRecord]:
    records: list[SimRecord] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != CSV_HEADER:
            raise ValueError(f"unexpected header {header!r} in {path}")
        for row in reader:
            step, edge = int(row[0]), int(row[1])
            d, v = float(row[2]), float(row[3])
            ground = np.array([float(x) for x in row[4:8]])
            obs = np.array([float(x) for x in row[8:10]])
            road = None if math.isnan(d) else RoadState(d, v)
            records.append(SimRecord(step=step, edge=edge, road=road,
                                     ground=ground, obs=obs))
    return records
