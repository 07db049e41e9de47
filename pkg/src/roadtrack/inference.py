"""Soft edge assignment and per-edge Kalman recursions.

Given a predicted road-frame belief and a candidate path set, each
forward edge contributes one mixture component: a prior weight (edge
membership combined with the on/off switch mass), a road belief
conditioned on the edge interval, and the predictive observation
distribution.  The off-road state contributes a single free-motion
component through the null path.  Components are updated against an
observation with standard Kalman algebra and can be converted back to
edge coordinates.

All mixture weights live in log space.  Per-component work stays in the
2-dimensional road frame; the 4-dimensional ground belief is
materialized lazily because only the sampled component ever needs it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .motion import (
    EdgeTransform,
    GaussianBelief,
    NoiseConfig,
    O_GROUND,
    LOG_2PI,
    _logpdf2,
    edge_transform,
    gaussian_logpdf,
    ground_belief,
    ground_predict,
    road_belief,
    road_predict,
    to_ground,
    to_road,
)
from .network import OFF_ROAD, PathCandidate, edge_stats
from .transitions import TransitionParams


def _lse(values: np.ndarray) -> float:
    """Log-sum-exp of a small 1-d array; -inf-safe."""
    m = values.max() if values.size else -math.inf
    if not np.isfinite(m):
        return -math.inf
    return float(m + math.log(np.exp(values - m).sum()))


@dataclass(frozen=True)
class GaussianProduct:
    """Factorization of f(x; X y, Y) f(y; z, Z) into f(x; a, A) f(y; b, B).

    ``a`` and ``A`` describe the marginal of x; ``mean_given(x)``
    evaluates the conditional mean b of y given x, whose covariance is
    ``B``.  ``W`` is the gain relating the two.
    """

    a: np.ndarray
    A: np.ndarray
    W: np.ndarray
    B: np.ndarray
    prior_mean: np.ndarray

    def mean_given(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return self.prior_mean + self.W @ (x - self.a)


def gaussian_product(X, Y, z, Z) -> GaussianProduct:
    """Product-of-normals identity for a linear-Gaussian pair.

    Arguments are the map ``X``, its noise covariance ``Y``, and the
    prior mean/covariance ``z``, ``Z`` of the latent variable.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    z = np.atleast_1d(np.asarray(z, dtype=float))
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    a = X @ z
    A = X @ Z @ X.T + Y
    if np.linalg.matrix_rank(A) < A.shape[0]:
        raise np.linalg.LinAlgError("marginal covariance is singular")
    W = Z @ X.T @ np.linalg.inv(A)
    B = Z - W @ A @ W.T
    return GaussianProduct(a=a, A=A, W=W, B=0.5 * (B + B.T), prior_mean=z)


def edge_membership_density(x_r, d_mid: float, d_scale: float) -> float:
    """Soft indicator that a road state lies on an edge interval.

    A Gaussian in the state's distance component, centred on the edge
    midpoint with the uniform-interval standard deviation.
    """
    if d_scale <= 0.0:
        raise ValueError("d_scale must be positive")
    d = x_r[0]
    zscore = (d_mid - d) / d_scale
    return math.exp(-0.5 * zscore * zscore) / (math.sqrt(2.0 * math.pi) * d_scale)


def _edge_log_weight(pred: GaussianBelief, d_mid: float, d_scale: float) -> float:
    # Membership marginalized over the predicted distance: widen by the
    # prediction's distance variance.
    s = pred.cov[0, 0] + d_scale * d_scale
    r = d_mid - pred.mean[0]
    return -0.5 * (LOG_2PI + math.log(s) + r * r / s)


def _entry_log_weight(pred_free: GaussianBelief, d_mid: float, d_scale: float,
                      t: EdgeTransform) -> float:
    # Planar membership for entering an edge from free motion: density
    # of the edge midpoint under the predicted position, widened along
    # the edge by the membership scale so the edge acts as a segment,
    # not a point.
    u = t.direction
    mid = t.P[(0, 2), 0] * d_mid + t.s[(0, 2),]
    mean = pred_free.mean[(0, 2),]
    cov = (pred_free.cov[np.ix_((0, 2), (0, 2))]
           + (d_scale * d_scale) * (u[:, None] * u[None, :]))
    return _logpdf2(mid, mean, cov)


def edge_predictive_weight(pred: GaussianBelief, stats: tuple[float, float]) -> float:
    """Unnormalized prior probability that the prediction lands on an edge."""
    if pred.frame != "road":
        raise ValueError("edge_predictive_weight needs a road-frame belief")
    return math.exp(_edge_log_weight(pred, *stats))


def condition_on_edge(pred: GaussianBelief, stats: tuple[float, float]) -> GaussianBelief:
    """Condition a predicted road belief on soft membership of one edge."""
    if pred.frame != "road":
        raise ValueError("condition_on_edge needs a road-frame belief")
    d_mid, d_scale = stats
    S = pred.cov[0, 0] + d_scale * d_scale
    if S <= 0.0:
        raise ValueError("degenerate membership scale")
    W = pred.cov[:, 0] / S                    # gain onto the distance component
    mean = pred.mean + W * (d_mid - pred.mean[0])
    cov = pred.cov - S * (W[:, None] * W[None, :])
    return GaussianBelief._trusted(mean, 0.5 * (cov + cov.T), "road")


@dataclass(frozen=True)
class EdgePrediction:
    """One mixture component of the one-step-ahead prediction.

    ``edge_id`` is 0 for the off-road component, in which case the road
    belief and transform are absent.  ``log_prior`` is normalized over
    the component set it was produced with.  The ground belief of
    on-road components is derived from the road belief on first access.
    """

    path: PathCandidate
    edge_index: int | None
    edge_id: int
    log_prior: float
    road: GaussianBelief | None
    transform: EdgeTransform | None
    d_start: float
    e: np.ndarray
    Q: np.ndarray
    _ground: GaussianBelief | None = None

    @property
    def on_road(self) -> bool:
        return self.edge_id != OFF_ROAD

    @property
    def ground(self) -> GaussianBelief:
        if self._ground is None:
            object.__setattr__(self, "_ground", to_ground(self.road, self.transform))
        return self._ground


def _log(p: float) -> float:
    return math.log(p) if p > 0.0 else -math.inf


def predict_for_paths(current_edge: int, belief: GaussianBelief,
                      paths: Sequence[PathCandidate],
                      params: TransitionParams,
                      cfg: NoiseConfig,
                      current_transform: EdgeTransform | None = None,
                      ) -> list[EdgePrediction]:
    """Mixture components for one step ahead over a candidate path set.

    ``belief`` is the particle's current posterior in the frame matching
    its on/off status; for an on-road particle it must be anchored at
    the current edge's start (every road path starts with that edge).
    The off-road component comes from the null path, which must be in
    ``paths``.  ``current_transform`` supplies the current edge's
    transform for on-road particles (derived from the first road path
    when omitted).

    Component priors combine a membership categorical with the switch
    mass (mixing the raw membership density against the switch
    probabilities would skew the on/off posterior by the arbitrary
    density scale, one over edge length).  For an on-road source the
    memberships are normalized within each path and every path carries
    the full stay mass pi_r, so road mass grows with the number of
    candidate paths; this is what biases brief off-road excursions
    toward on-road readings.  For an off-road source the entry mass
    pi_on is spread over all entry edges by a planar membership
    categorical.  Returned log priors are normalized over the whole
    set.
    """
    if not paths:
        raise ValueError("empty candidate set")
    on_road = current_edge != OFF_ROAD
    sigma2_y = cfg.sigma2_y

    pred_road = pred_flip = None
    if on_road:
        if belief.frame != "road":
            raise ValueError("on-road particle needs a road-frame belief")
        pred_road = road_predict(belief, cfg)
        if current_transform is None:
            for path in paths:
                if not path.is_null and path.edge_ids[0] == current_edge:
                    current_transform = edge_transform(path, 0)
                    break
            if current_transform is None:
                raise ValueError("no candidate path starts with the current edge")
        stay_mass, off_mass = params.pi_r, params.pi_off
    else:
        if belief.frame != "ground":
            raise ValueError("off-road particle needs a ground-frame belief")
        stay_mass, off_mass = params.pi_on, params.pi_g

    def flipped_prediction(length: float) -> GaussianBelief:
        # Reversed anchor: the same state seen from the twin edge, where
        # backing up becomes forward motion.  The covariance is invariant
        # under (d, v) -> (length - d, -v).
        nonlocal pred_flip
        if pred_flip is None:
            mean = np.array([length - belief.mean[0], -belief.mean[1]])
            pred_flip = road_predict(
                GaussianBelief._trusted(mean, belief.cov, "road"), cfg)
        return pred_flip

    # Free-motion prediction; also the reference for entry memberships.
    g0 = to_ground(belief, current_transform) if on_road else belief
    pred_free = ground_predict(g0, cfg)

    log_stay = _log(stay_mass)
    # Staged fields: (membership, path, index, edge_id, road, transform,
    # d_start, e, Q); the final log prior is assigned once all
    # memberships are known.
    staged: list[tuple] = []
    group_bounds: list[tuple[int, int]] = []      # per-path slices (on-road)
    off_fields = None

    for path in paths:
        if path.is_null:
            e = pred_free.mean[(0, 2),]
            Q = pred_free.cov[np.ix_((0, 2), (0, 2))] + sigma2_y * np.eye(2)
            off_fields = (path, pred_free, e, Q)
            continue

        start = 0
        base = pred_road
        if on_road:
            head = path.edges[0]
            if head.id != current_edge:
                if head.twin == current_edge:
                    base = flipped_prediction(head.length)
                elif current_edge in path.edge_ids:
                    start = path.edge_ids.index(current_edge)
        first = len(staged)
        cum = path.cumulative
        for k in range(start, len(path.edges)):
            stats = edge_stats(path, k)
            t = edge_transform(path, k)
            if on_road:
                pred_k = base
                lm = _edge_log_weight(pred_k, *stats)
            else:
                # Entry from off-road: project the ground posterior onto
                # the edge, then predict along it.
                pred_k = road_predict(to_road(belief, t), cfg)
                lm = _entry_log_weight(pred_free, *stats, t)
            cond = condition_on_edge(pred_k, stats)
            # Predictive observation in closed form: the projection of
            # the conditioned road belief touches only its distance row.
            u = t.direction
            e = u * cond.mean[0] + t.s[(0, 2),]
            Q = cond.cov[0, 0] * (u[:, None] * u[None, :])
            Q[0, 0] += sigma2_y
            Q[1, 1] += sigma2_y
            staged.append((lm, path, k, path.edge_ids[k], cond, t,
                           float(cum[k]), e, Q))
        if on_road and len(staged) > first:
            group_bounds.append((first, len(staged)))

    lms = np.array([f[0] for f in staged])
    log_priors = np.full(len(staged), -math.inf)
    if on_road:
        # Per-path membership categorical; each path carries pi_r.
        for first, last in group_bounds:
            lse = _lse(lms[first:last])
            if np.isfinite(lse):
                log_priors[first:last] = log_stay + lms[first:last] - lse
    elif len(staged):
        # One planar categorical over all entry edges, carrying pi_on.
        lse = _lse(lms)
        if np.isfinite(lse):
            log_priors = log_stay + lms - lse

    comps: list[EdgePrediction] = []
    all_priors = list(log_priors)
    for (lm, path, k, edge_id, cond, t, d_start, e, Q), lp in zip(staged, log_priors):
        comps.append(EdgePrediction(
            path=path, edge_index=k, edge_id=edge_id, log_prior=lp,
            road=cond, transform=t, d_start=d_start, e=e, Q=Q))
    if off_fields is not None:
        path, pred, e, Q = off_fields
        lp = _log(off_mass)
        all_priors.append(lp)
        comps.append(EdgePrediction(
            path=path, edge_index=None, edge_id=OFF_ROAD, log_prior=lp,
            road=None, transform=None, d_start=0.0, e=e, Q=Q, _ground=pred))

    total = _lse(np.array(all_priors))
    if not np.isfinite(total):
        raise ValueError("all mixture components have zero prior probability")
    for c in comps:
        object.__setattr__(c, "log_prior", float(c.log_prior - total))
    return [c for c in comps if np.isfinite(c.log_prior)]


@dataclass(frozen=True)
class PosteriorComponent:
    """Kalman-updated component: ground posterior plus edge coordinates.

    ``road`` is in the coordinates of the component's path; subtract
    ``d_start`` from the distance component to re-anchor at the edge
    start.  ``log_weight`` is the unnormalized posterior component
    weight (prior times observation likelihood).
    """

    edge_id: int
    edge_index: int | None
    path: PathCandidate
    log_weight: float
    ground: GaussianBelief
    road: GaussianBelief | None
    d_start: float

    @property
    def on_road(self) -> bool:
        return self.edge_id != OFF_ROAD


def kalman_update(pred: EdgePrediction, y, cfg: NoiseConfig) -> PosteriorComponent:
    """Condition one predicted component on an observation.

    Uses the Joseph-form covariance update, which stays positive
    semi-definite even for the rank-deficient covariances produced by
    projecting road beliefs into the ground frame.
    """
    y = np.asarray(y, dtype=float).reshape(2)
    g = pred.ground
    a, R = g.mean, g.cov
    Q = pred.Q
    loglik = gaussian_logpdf(y, pred.e, Q)
    K = R @ O_GROUND.T @ np.linalg.inv(Q)
    m = a + K @ (y - pred.e)
    IKH = np.eye(4) - K @ O_GROUND
    C = IKH @ R @ IKH.T + cfg.sigma2_y * (K @ K.T)
    C = 0.5 * (C + C.T)
    post_ground = ground_belief(m, C)
    post_road = None
    if pred.on_road:
        t = pred.transform
        road_cov = t.P.T @ C @ t.P
        post_road = road_belief(t.P.T @ (m - t.s), 0.5 * (road_cov + road_cov.T))
    return PosteriorComponent(
        edge_id=pred.edge_id, edge_index=pred.edge_index, path=pred.path,
        log_weight=pred.log_prior + loglik, ground=post_ground,
        road=post_road, d_start=pred.d_start)
