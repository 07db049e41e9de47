"""Particle filters: Rao-Blackwellized particle learning and a bootstrap baseline.

The particle-learning (PL) filter keeps per-particle Kalman sufficient
statistics for the kinematic state and Beta pseudo-counts for the
on/off-road switch probabilities.  Each step it (1) weights particles
by their predictive observation likelihood summed over candidate
(path, edge) components, (2) resamples, (3) draws one component per
particle, (4) runs the Kalman update for that component and (5) updates
the transition counts and redraws switch probabilities.

The bootstrap (BS) filter propagates exact point states by sampling the
motion model and the transition switch, weights by the observation
likelihood, and resamples only when the effective sample size drops
below 0.9 N.  The same sampling kernel doubles as the data-generating
process for simulations.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .inference import EdgePrediction, _lse, kalman_update, predict_for_paths
from .motion import (
    EdgeTransform,
    GaussianBelief,
    LOG_2PI,
    NoiseConfig,
    RoadState,
    _logpdf2,
    ground_belief,
    road_belief,
    to_ground,
    to_road,
)
from .network import OFF_ROAD, RoadGraph
from .search import PathFinder, SearchConfig
from .transitions import (
    TransitionParams,
    TransitionPrior,
    sample_params,
    update_counts,
)

ESS_FRACTION = 0.9


class DegenerateWeightsError(RuntimeError):
    """Every particle has zero likelihood; model and data disagree."""


def substream(seed: int, *key: int) -> np.random.Generator:
    """An independent generator keyed by (seed, *key).

    Streams for distinct keys are statistically independent, so
    per-particle work can be parallelized without changing results.
    """
    return np.random.default_rng(np.random.SeedSequence(entropy=(int(seed),) + tuple(int(k) for k in key)))


# ---------------------------------------------------------------------------
# weights


def effective_sample_size(weights) -> float:
    """1 / sum of squared normalized weights."""
    w = np.asarray(weights, dtype=float)
    return float(1.0 / np.sum(w * w))


def should_resample(weights, n0: int, fraction: float = ESS_FRACTION) -> bool:
    """Degeneracy gate: resample when ESS falls below ``fraction * n0``."""
    return effective_sample_size(weights) < fraction * n0


def multinomial_resample(weights, n: int, rng: np.random.Generator) -> np.ndarray:
    """n iid categorical draws over the particle indices."""
    w = np.asarray(weights, dtype=float)
    return rng.choice(len(w), size=n, p=w)


def _iso_loglik(y, pos, s2: float) -> float:
    r0 = float(y[0] - pos[0])
    r1 = float(y[1] - pos[1])
    if abs(r0) > 1e150 or abs(r1) > 1e150:
        return -math.inf
    return -LOG_2PI - math.log(s2) - 0.5 * (r0 * r0 + r1 * r1) / s2


# ---------------------------------------------------------------------------
# particle types


@dataclass(frozen=True)
class Particle:
    """One PL hypothesis: edge, Kalman statistics, transition statistics.

    The road belief is anchored at the current edge's start vertex
    (distance 0 there) and is None off-road.  ``params`` is the current
    posterior draw of the switch probabilities.
    """

    edge: int
    road: GaussianBelief | None
    ground: GaussianBelief
    prior: TransitionPrior
    params: TransitionParams
    log_weight: float = 0.0

    @property
    def on_road(self) -> bool:
        return self.edge != OFF_ROAD


@dataclass(frozen=True)
class BsParticle:
    """One BS hypothesis: an exact kinematic point state.

    On-road particles carry local road coordinates on their edge (d
    within [0, edge length]); the ground-frame state is kept in sync.
    """

    edge: int
    road: RoadState | None
    ground: np.ndarray
    log_weight: float

    @property
    def on_road(self) -> bool:
        return self.edge != OFF_ROAD


# ---------------------------------------------------------------------------
# shared sampling kernel (bootstrap proposal == simulation step)


def _ground_step(ground: np.ndarray, noise: NoiseConfig, rng) -> np.ndarray:
    dt = noise.dt
    sd = math.sqrt(noise.sigma2_g)
    e1 = rng.normal(0.0, sd)
    e2 = rng.normal(0.0, sd)
    l1, v1, l2, v2 = ground
    return np.array([l1 + v1 * dt + 0.5 * dt * dt * e1,
                     v1 + dt * e1,
                     l2 + v2 * dt + 0.5 * dt * dt * e2,
                     v2 + dt * e2])


def _walk(graph: RoadGraph, edge_id: int, target_d: float, rng):
    """Carry a signed displacement across edge boundaries.

    Forward boundary crossings sample the next edge uniformly among
    successors; backward crossings flip onto the reverse twin (the same
    chord traversed the other way), after which the remainder is a
    forward walk.  Returns ``(edge_id, d_local, flips, dead_end)``;
    ``flips`` counts orientation reversals and ``dead_end`` is set when
    the walk had to stop at a boundary with nowhere to go.
    """
    e = graph.edges[edge_id]
    d = target_d
    flips = 0
    while True:
        if 0.0 <= d <= e.length:
            return e.id, d, flips, False
        if d > e.length:
            succ = e.successors
            if not succ:
                return e.id, e.length, flips, True
            nxt = succ[int(rng.integers(len(succ)))] if len(succ) > 1 else succ[0]
            d -= e.length
            e = graph.edges[nxt]
        else:
            if e.twin is None:
                return e.id, 0.0, flips, True
            d = e.length - d
            e = graph.edges[e.twin]
            flips += 1


def propagate_state(edge: int, road: RoadState | None, ground: np.ndarray,
                    graph: RoadGraph, noise: NoiseConfig,
                    params: TransitionParams, rng: np.random.Generator,
                    *, preserve_speed: bool = False,
                    entry_radius: float = math.inf):
    """Sample one motion-model step including the on/off switch.

    This is both the bootstrap proposal and the simulator's transition.
    Returns ``(edge, road, ground, dead_end)``.  Off-road entry picks an
    edge uniformly within ``entry_radius`` of the propagated position
    (the globally nearest edge when the radius is infinite or nothing is
    in range with an infinite radius) and projects the state onto it,
    clamping the distance into the edge's interval.
    """
    if edge != OFF_ROAD:
        if rng.random() < params.pi_off:
            g = _ground_step(ground, noise, rng)
            return OFF_ROAD, None, g, False
        d, v = road
        eps = rng.normal(0.0, math.sqrt(noise.sigma2_r))
        dt = noise.dt
        d_next = d + v * dt + 0.5 * dt * dt * eps
        v_next = v + dt * eps
        new_edge, d_loc, flips, dead = _walk(graph, edge, d_next, rng)
        if flips % 2:
            v_next = -v_next
        t = EdgeTransform.for_edge(graph.edges[new_edge], 0.0)
        g = np.asarray(to_ground(RoadState(d_loc, v_next), t))
        return new_edge, RoadState(d_loc, v_next), g, dead

    enter = rng.random() < params.pi_on
    g = _ground_step(ground, noise, rng)
    if not enter:
        return OFF_ROAD, None, g, False
    pos = g[[0, 2]]
    if math.isinf(entry_radius):
        eid = graph.nearest_edge(pos)
    else:
        near = graph.edges_near(pos, entry_radius)
        if not near:
            return OFF_ROAD, None, g, False
        eid = near[int(rng.integers(len(near)))] if len(near) > 1 else near[0]
    e = graph.edges[eid]
    t = EdgeTransform.for_edge(e, 0.0)
    rs = to_road(g, t, preserve_speed=preserve_speed)
    d_loc = min(max(rs.d, 0.0), e.length)
    rs = RoadState(d_loc, rs.v)
    return eid, rs, np.asarray(to_ground(rs, t)), False


# ---------------------------------------------------------------------------
# particle-learning filter


def pl_step(particles: Sequence[Particle], y, finder: PathFinder,
            noise: NoiseConfig, *, seed: int, step: int,
            learn: bool = True,
            fixed_params: TransitionParams | None = None):
    """One full PL recursion over an observation.

    Returns ``(new_particles, log_marginal)`` where the marginal is the
    estimated log predictive density of ``y``.  With ``learn`` off,
    ``fixed_params`` is used for every particle and the Beta counts are
    left untouched.
    """
    if not particles:
        raise ValueError("empty particle set")
    if not learn and fixed_params is None:
        raise ValueError("fixed_params required when learning is off")
    graph = finder.graph
    y = np.asarray(y, dtype=float).reshape(2)
    n = len(particles)

    comp_sets: list[list[EdgePrediction] | None] = []
    logpost_sets: list[np.ndarray | None] = []
    logpred = np.full(n, -math.inf)
    for j, p in enumerate(particles):
        params = p.params if learn else fixed_params
        paths = finder.candidate_paths(p.edge, p.ground, y, noise)
        belief = p.road if p.on_road else p.ground
        transform = (EdgeTransform.for_edge(graph.edges[p.edge], 0.0)
                     if p.on_road else None)
        try:
            comps = predict_for_paths(p.edge, belief, paths, params, noise,
                                      current_transform=transform)
        except ValueError:
            comp_sets.append(None)
            logpost_sets.append(None)
            continue
        lp = np.array([c.log_prior + _logpdf2(y, c.e, c.Q) for c in comps])
        comp_sets.append(comps)
        logpost_sets.append(lp)
        logpred[j] = _lse(lp)

    if not np.any(np.isfinite(logpred)):
        raise DegenerateWeightsError(
            f"step {step}: zero predictive likelihood for all {n} particles")

    shift = logpred - logpred.max()
    w = np.exp(shift)
    w /= w.sum()
    idx = multinomial_resample(w, n, substream(seed, step))

    out: list[Particle] = []
    for slot, k in enumerate(idx):
        rng = substream(seed, step, slot)
        parent = particles[k]
        comps = comp_sets[k]
        lp = logpost_sets[k]
        probs = np.exp(lp - _lse(lp))
        probs /= probs.sum()
        c = comps[int(rng.choice(len(comps), p=probs))]
        post = kalman_update(c, y, noise)
        if post.on_road:
            mean = post.road.mean.copy()
            mean[0] -= post.d_start      # re-anchor at the new edge's start
            road = road_belief(mean, post.road.cov)
        else:
            road = None
        if learn:
            prior = update_counts(parent.prior, parent.on_road, post.on_road)
            params = sample_params(prior, rng)
        else:
            prior, params = parent.prior, fixed_params
        out.append(Particle(edge=post.edge_id, road=road, ground=post.ground,
                            prior=prior, params=params,
                            log_weight=-math.log(n)))
    return out, float(_lse(logpred) - math.log(n))


# ---------------------------------------------------------------------------
# bootstrap filter


def bs_step(particles: Sequence[BsParticle], y, graph: RoadGraph,
            noise: NoiseConfig, params: TransitionParams, *,
            seed: int, step: int, preserve_speed: bool = False,
            entry_radius: float = math.inf):
    """One bootstrap recursion: propagate, weight, maybe resample.

    Returns ``(new_particles, log_marginal, resampled)``.
    """
    if not particles:
        raise ValueError("empty particle set")
    y = np.asarray(y, dtype=float).reshape(2)
    n = len(particles)
    states = []
    logw = np.empty(n)
    for slot, p in enumerate(particles):
        rng = substream(seed, step, slot)
        edge, road, ground, _ = propagate_state(
            p.edge, p.road, p.ground, graph, noise, params, rng,
            preserve_speed=preserve_speed, entry_radius=entry_radius)
        states.append((edge, road, ground))
        logw[slot] = p.log_weight + _iso_loglik(y, ground[[0, 2]], noise.sigma2_y)

    total = _lse(logw)
    if not np.isfinite(total):
        raise DegenerateWeightsError(
            f"step {step}: zero likelihood for all {n} bootstrap particles")
    logw_norm = logw - total
    w = np.exp(logw_norm)
    w /= w.sum()

    resampled = should_resample(w, n)
    if resampled:
        idx = multinomial_resample(w, n, substream(seed, step))
        particles = [BsParticle(*states[i], log_weight=-math.log(n)) for i in idx]
    else:
        particles = [BsParticle(*st, log_weight=lw)
                     for st, lw in zip(states, logw_norm)]
    return particles, float(total), resampled


# ---------------------------------------------------------------------------
# drivers


@dataclass
class StepRecord:
    """Everything recorded about one filtering step."""

    step: int
    particles: list
    log_weights: np.ndarray
    log_marginal: float
    runtime_s: float
    resampled: bool
    param_samples: np.ndarray | None = None    # (n, 2): pi_g, pi_r draws


@dataclass
class FilterOutput:
    """Per-step history of one filter run."""

    name: str
    n: int
    steps: list[StepRecord]
    cache_stats: dict | None = None

    @property
    def log_likelihood(self) -> float:
        return float(sum(s.log_marginal for s in self.steps))


def init_pl_particles(y0, n: int, noise: NoiseConfig, prior: TransitionPrior,
                      *, seed: int, velocity_var: float = 25.0,
                      learn: bool = True,
                      fixed_params: TransitionParams | None = None) -> list[Particle]:
    """Off-road particles centred on the first observation."""
    y0 = np.asarray(y0, dtype=float).reshape(2)
    mean = np.array([y0[0], 0.0, y0[1], 0.0])
    cov = np.diag([noise.sigma2_y, velocity_var, noise.sigma2_y, velocity_var])
    g = ground_belief(mean, cov)
    out = []
    for slot in range(n):
        rng = substream(seed, 0, slot)
        params = sample_params(prior, rng) if learn else fixed_params
        out.append(Particle(edge=OFF_ROAD, road=None, ground=g, prior=prior,
                            params=params, log_weight=-math.log(n)))
    return out


def init_bs_particles(y0, n: int, noise: NoiseConfig, *, seed: int,
                      velocity_var: float = 25.0) -> list[BsParticle]:
    """Off-road point states sampled around the first observation."""
    y0 = np.asarray(y0, dtype=float).reshape(2)
    sd_p = math.sqrt(noise.sigma2_y)
    sd_v = math.sqrt(velocity_var)
    out = []
    for slot in range(n):
        rng = substream(seed, 0, slot)
        ground = np.array([y0[0] + rng.normal(0.0, sd_p),
                           rng.normal(0.0, sd_v),
                           y0[1] + rng.normal(0.0, sd_p),
                           rng.normal(0.0, sd_v)])
        out.append(BsParticle(edge=OFF_ROAD, road=None, ground=ground,
                              log_weight=-math.log(n)))
    return out


def run_pl(graph: RoadGraph, observations, noise: NoiseConfig,
           prior: TransitionPrior, n: int, *, seed: int,
           search: SearchConfig = SearchConfig(), learn: bool = True,
           fixed_params: TransitionParams | None = None,
           velocity_var: float = 25.0,
           initial: list[Particle] | None = None) -> FilterOutput:
    """Run the PL filter over an observation sequence.

    ``observations`` is an (T, 2) array; the first row initializes the
    particle cloud and filtering starts at step 1.
    """
    observations = np.asarray(observations, dtype=float).reshape(-1, 2)
    finder = PathFinder(graph, search)
    particles = initial if initial is not None else init_pl_particles(
        observations[0], n, noise, prior, seed=seed,
        velocity_var=velocity_var, learn=learn, fixed_params=fixed_params)
    records: list[StepRecord] = []
    for step in range(1, len(observations)):
        t0 = time.perf_counter()
        particles, logm = pl_step(particles, observations[step], finder, noise,
                                  seed=seed, step=step, learn=learn,
                                  fixed_params=fixed_params)
        dt = time.perf_counter() - t0
        samples = np.array([[p.params.pi_g, p.params.pi_r] for p in particles])
        records.append(StepRecord(
            step=step, particles=particles,
            log_weights=np.full(len(particles), -math.log(len(particles))),
            log_marginal=logm, runtime_s=dt, resampled=True,
            param_samples=samples))
    return FilterOutput(name="PL", n=n, steps=records,
                        cache_stats=finder.cache_stats)


def run_bs(graph: RoadGraph, observations, noise: NoiseConfig,
           params: TransitionParams, n: int, *, seed: int,
           preserve_speed: bool = False, entry_radius: float = math.inf,
           velocity_var: float = 25.0,
           initial: list[BsParticle] | None = None) -> FilterOutput:
    """Run the bootstrap filter over an observation sequence."""
    observations = np.asarray(observations, dtype=float).reshape(-1, 2)
    particles = initial if initial is not None else init_bs_particles(
        observations[0], n, noise, seed=seed, velocity_var=velocity_var)
    records: list[StepRecord] = []
    for step in range(1, len(observations)):
        t0 = time.perf_counter()
        particles, logm, resampled = bs_step(
            particles, observations[step], graph, noise, params,
            seed=seed, step=step, preserve_speed=preserve_speed,
            entry_radius=entry_radius)
        dt = time.perf_counter() - t0
        records.append(StepRecord(
            step=step, particles=particles,
            log_weights=np.array([p.log_weight for p in particles]),
            log_marginal=logm, runtime_s=dt, resampled=resampled))
    return FilterOutput(name="BS", n=n, steps=records)
