"""Candidate path generation via A* over the road graph.

Per particle and observation we search for edges that could plausibly
explain the observation, then connect the particle's current edge to
each of them with a cost-bounded A* (edge length costs, straight-line
heuristic, so results are cost-minimal).  Route queries are memoized in
an LRU cache keyed by (origin edge, destination node).
"""
from __future__ import annotations

import heapq
import math
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .motion import GaussianBelief, NoiseConfig, O_GROUND, ground_predict
from .network import NULL_PATH, OFF_ROAD, PathCandidate, RoadGraph


@dataclass(frozen=True)
class SearchConfig:
    """Knobs for candidate generation.

    sigma_radius:    destination disc radius in predictive standard
                     deviations around the observation.
    max_path_length: route cost cutoff as a multiple of the predicted
                     travel distance.
    max_candidates:  cap on returned road paths (cheapest kept).
    cache_size:      LRU route cache entries.
    """

    sigma_radius: float = 3.0
    max_path_length: float = 2.0
    max_candidates: int = 32
    cache_size: int = 4096

    def __post_init__(self):
        if self.sigma_radius < 1.0:
            raise ValueError("sigma_radius must be >= 1")
        if self.max_path_length <= 0 or self.max_candidates < 1 or self.cache_size < 1:
            raise ValueError("search config values must be positive")


class _LruCache:
    def __init__(self, size: int):
        self.size = size
        self.data: OrderedDict = OrderedDict()
        self.hits = 0
        self.misses = 0

    def get(self, key):
        if key in self.data:
            self.data.move_to_end(key)
            self.hits += 1
            return self.data[key]
        self.misses += 1
        return None

    def put(self, key, value):
        self.data[key] = value
        self.data.move_to_end(key)
        while len(self.data) > self.size:
            self.data.popitem(last=False)

    @property
    def hit_rate(self) -> float:
        n = self.hits + self.misses
        return self.hits / n if n else 0.0


class PathFinder:
    """Candidate path search over one immutable graph."""

    def __init__(self, graph: RoadGraph, config: SearchConfig = SearchConfig()):
        self.graph = graph
        self.config = config
        self._cache = _LruCache(config.cache_size)
        self._paths: dict[tuple[int, ...], PathCandidate] = {}
        self.searches = 0          # A* invocations, for instrumentation

    def _get_path(self, ids: tuple[int, ...]) -> PathCandidate:
        # Paths recur heavily across particles and steps; reusing the
        # objects also reuses their cached edge transforms.
        p = self._paths.get(ids)
        if p is None:
            if len(self._paths) >= 8 * self.config.cache_size:
                self._paths.clear()
            p = self.graph.path(ids)
            self._paths[ids] = p
        return p

    # -- cache ------------------------------------------------------------

    def cached(self, edge_id: int, dest_node: int):
        """Peek at the route cache; returns the entry or None."""
        entry = self._cache.data.get((edge_id, dest_node))
        return entry

    @property
    def cache_hit_rate(self) -> float:
        return self._cache.hit_rate

    @property
    def cache_stats(self) -> dict:
        return {"hits": self._cache.hits, "misses": self._cache.misses,
                "searches": self.searches, "hit_rate": self._cache.hit_rate}

    # -- routing ----------------------------------------------------------

    def _route(self, origin_edge: int, dest_node: int, cutoff: float):
        """Cost-minimal edge sequence from an edge's end to a node.

        Returns ``(cost, edge_ids)`` or None when unreachable within the
        cutoff.  Cached entries record the cutoff they were established
        under, so a miss is only trusted for cutoffs no larger than the
        one that produced it.
        """
        key = (origin_edge, dest_node)
        hit = self._cache.get(key)
        if hit is not None:
            cost, ids, seen_cutoff = hit
            if ids is not None:
                return (cost, ids) if cost <= cutoff else None
            if cutoff <= seen_cutoff:
                return None
            # A cached failure under a smaller cutoff proves nothing; fall
            # through and search again.
        result = self._astar(self.graph.edges[origin_edge].end_node, dest_node, cutoff)
        if result is None:
            self._cache.put(key, (math.inf, None, cutoff))
            return None
        self._cache.put(key, (result[0], result[1], cutoff))
        return result

    def _astar(self, start_node: int, goal_node: int, cutoff: float):
        self.searches += 1
        graph = self.graph
        goal = np.asarray(graph.node_position(goal_node), dtype=float)
        coords = graph.node_coords

        def h(node: int) -> float:
            dx = coords[node, 0] - goal[0]
            dy = coords[node, 1] - goal[1]
            return math.hypot(dx, dy)

        if start_node == goal_node:
            return 0.0, ()
        best: dict[int, float] = {start_node: 0.0}
        parent: dict[int, tuple[int, int]] = {}
        queue = [(h(start_node), start_node, 0.0)]
        while queue:
            f, node, g = heapq.heappop(queue)
            if node == goal_node:
                ids = []
                n = node
                while n != start_node:
                    pn, pe = parent[n]
                    ids.append(pe)
                    n = pn
                return g, tuple(reversed(ids))
            if g > best.get(node, math.inf):
                continue
            for eid in graph.node_out[node]:
                edge = graph.edges[eid]
                ng = g + edge.length
                if ng > cutoff:
                    continue
                nxt = edge.end_node
                if ng < best.get(nxt, math.inf):
                    best[nxt] = ng
                    parent[nxt] = (node, eid)
                    heapq.heappush(queue, (ng + h(nxt), nxt, ng))
        return None

    # -- candidate generation ----------------------------------------------

    def candidate_paths(self, current_edge: int, ground: GaussianBelief,
                        y, noise: NoiseConfig) -> list[PathCandidate]:
        """Candidate paths explaining observation ``y`` for one particle.

        On-road particles get forward paths from their current edge to
        every edge near the observation (always including the
        stay-on-current-edge path); off-road particles get single-edge
        entry candidates.  The null path is always appended last.
        """
        graph = self.graph
        y = np.asarray(y, dtype=float).reshape(2)

        predicted = ground_predict(ground, noise)
        q11 = predicted.cov[0, 0] + noise.sigma2_y
        q22 = predicted.cov[2, 2] + noise.sigma2_y
        q12 = predicted.cov[0, 2]
        lam_max = 0.5 * (q11 + q22) + math.hypot(0.5 * (q11 - q22), q12)
        radius = self.config.sigma_radius * math.sqrt(lam_max)
        dest = graph.edges_near(y, radius)

        if current_edge == OFF_ROAD:
            paths = [self._get_path((eid,)) for eid in dest]
            paths.append(NULL_PATH)
            return paths

        pos = ground.mean[[0, 2]]
        speed = math.hypot(ground.mean[1], ground.mean[3])
        travel = max(speed * noise.dt, float(np.hypot(*(y - pos))) + radius)
        cutoff = self.config.max_path_length * travel + graph.max_edge_length

        # Paths are proposed in both orientations: anchored on the current
        # edge for forward motion and on its reverse twin for backward
        # motion (the reversed anchor makes backing up a forward walk).
        origins = [current_edge]
        twin = graph.edges[current_edge].twin
        if twin is not None:
            origins.append(twin)

        found: dict[tuple[int, ...], float] = {}
        for origin in origins:
            o = graph.edges[origin]
            found.setdefault((origin,), 0.0)
            for eid in dest:
                if eid == origin:
                    continue
                route = self._route(origin, graph.edges[eid].start_node, cutoff)
                if route is None:
                    continue
                cost, mids = route
                ids = (origin,) + mids + (eid,)
                total = o.length + cost + graph.edges[eid].length
                if ids not in found or total < found[ids]:
                    found[ids] = total
        ranked = sorted(found.items(), key=lambda kv: (kv[1], kv[0]))
        ranked = ranked[: self.config.max_candidates]
        paths = [self._get_path(ids) for ids, _ in ranked]
        paths.append(NULL_PATH)
        return paths
