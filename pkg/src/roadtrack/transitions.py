"""On/off-road edge transition prior with Beta-Bernoulli learning.

The transition structure is a two-state switch: an on-road state either
stays on the road (probability ``pi_r``, shared uniformly among the
forward edges of the active path) or leaves it (``pi_off``); an
off-road state either re-enters the road (``pi_on``, shared among entry
candidates) or stays off (``pi_g``).  Each pair is a Bernoulli with a
conjugate Beta prior, so learning reduces to counting.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import OFF_ROAD, PathCandidate


@dataclass(frozen=True)
class TransitionParams:
    """Switch probabilities; the two pairs each sum to one."""

    pi_on: float    # off-road -> on-road
    pi_g: float     # off-road -> off-road
    pi_off: float   # on-road  -> off-road
    pi_r: float     # on-road  -> on-road

    def __post_init__(self):
        for name in ("pi_on", "pi_g", "pi_off", "pi_r"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name}={p} outside [0, 1]")
        if abs(self.pi_on + self.pi_g - 1.0) > 1e-12:
            raise ValueError("pi_on + pi_g must equal 1")
        if abs(self.pi_off + self.pi_r - 1.0) > 1e-12:
            raise ValueError("pi_off + pi_r must equal 1")

    @classmethod
    def from_rates(cls, pi_off: float, pi_g: float) -> "TransitionParams":
        return cls(pi_on=1.0 - pi_g, pi_g=pi_g, pi_off=pi_off, pi_r=1.0 - pi_off)


@dataclass(frozen=True)
class TransitionPrior:
    """Beta pseudo-counts, one pair per source state.

    First index is the source state, second the destination:
    ``alpha_off_on`` counts off-road to on-road transitions.
    """

    alpha_off_off: float
    alpha_off_on: float
    alpha_on_on: float
    alpha_on_off: float

    def __post_init__(self):
        for name in ("alpha_off_off", "alpha_off_on", "alpha_on_on", "alpha_on_off"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be strictly positive")

    @property
    def total(self) -> float:
        return (self.alpha_off_off + self.alpha_off_on
                + self.alpha_on_on + self.alpha_on_off)

    @property
    def mean_pi_g(self) -> float:
        return self.alpha_off_off / (self.alpha_off_off + self.alpha_off_on)

    @property
    def mean_pi_r(self) -> float:
        return self.alpha_on_on / (self.alpha_on_on + self.alpha_on_off)


def transition_probability(from_edge: int, to_edge: int,
                           path: PathCandidate,
                           params: TransitionParams) -> float:
    """Probability of moving from one edge (or off-road) to another.

    Probabilities are normalized over the allowed target set: the
    forward on-path edges plus the off-road state.  On-road mass is
    split uniformly over multiple forward targets.  Targets not in the
    allowed set get probability 0.
    """
    ids = () if path.is_null else path.edge_ids
    if from_edge == OFF_ROAD:
        if to_edge == OFF_ROAD:
            return params.pi_g
        return params.pi_on / len(ids) if to_edge in ids else 0.0
    if to_edge == OFF_ROAD:
        return params.pi_off
    if from_edge not in ids:
        return 0.0
    forward = ids[ids.index(from_edge):]
    return params.pi_r / len(forward) if to_edge in forward else 0.0


def update_counts(prior: TransitionPrior, from_is_road: bool,
                  to_is_road: bool) -> TransitionPrior:
    """Conjugate update: add one observed transition to the counts."""
    a_oo, a_on = prior.alpha_off_off, prior.alpha_off_on
    a_nn, a_nf = prior.alpha_on_on, prior.alpha_on_off
    if from_is_road:
        if to_is_road:
            a_nn += 1.0
        else:
            a_nf += 1.0
    else:
        if to_is_road:
            a_on += 1.0
        else:
            a_oo += 1.0
    return TransitionPrior(a_oo, a_on, a_nn, a_nf)


def sample_params(prior: TransitionPrior, rng: np.random.Generator) -> TransitionParams:
    """Draw switch probabilities from their Beta posteriors."""
    pi_g = float(rng.beta(prior.alpha_off_off, prior.alpha_off_on))
    pi_r = float(rng.beta(prior.alpha_on_on, prior.alpha_on_off))
    return TransitionParams(pi_on=1.0 - pi_g, pi_g=pi_g,
                            pi_off=1.0 - pi_r, pi_r=pi_r)
