"""Kinematic state models and the road/ground coordinate algebra.

Two coordinate frames are used throughout:

* road frame: 2-vector (d, v), distance and signed speed along a path;
* ground frame: 4-vector (l1, v1, l2, v2), planar position and velocity
  interleaved per axis.

Both evolve under constant-velocity dynamics driven by white
acceleration noise.  An on-road state maps to the ground frame through
an affine transform per edge; because edges are straight chords the
transform is exact and its linear part has orthonormal columns.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, NamedTuple

import numpy as np

from .network import Edge, GeoPoint, PathCandidate, edge_distance_bounds

Frame = Literal["road", "ground"]

LOG_2PI = math.log(2.0 * math.pi)

# Observation matrix: picks the two position components of a ground state.
O_GROUND = np.array([[1.0, 0.0, 0.0, 0.0],
                     [0.0, 0.0, 1.0, 0.0]])
# Distance selector for a road state.
O_ROAD = np.array([[1.0, 0.0]])


class RoadState(NamedTuple):
    d: float
    v: float


class GroundState(NamedTuple):
    l1: float
    v1: float
    l2: float
    v2: float

    @property
    def position(self) -> np.ndarray:
        return np.array([self.l1, self.l2])

    @property
    def velocity(self) -> np.ndarray:
        return np.array([self.v1, self.v2])


@dataclass(frozen=True)
class GaussianBelief:
    """Mean and covariance in one frame (2-dim road or 4-dim ground)."""

    mean: np.ndarray
    cov: np.ndarray
    frame: Frame

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float).reshape(-1))
        object.__setattr__(self, "cov", np.asarray(self.cov, dtype=float))
        n = 2 if self.frame == "road" else 4
        if self.mean.shape != (n,) or self.cov.shape != (n, n):
            raise ValueError(f"{self.frame} belief needs mean ({n},), cov ({n},{n})")

    @classmethod
    def _trusted(cls, mean: np.ndarray, cov: np.ndarray, frame: Frame) -> "GaussianBelief":
        # Internal fast path for arrays already in canonical form.
        self = object.__new__(cls)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "frame", frame)
        return self

    def validate(self, tol_scale: float = 1e-9) -> "GaussianBelief":
        """Check symmetry and a PSD eigenvalue floor; returns self."""
        if not np.all(np.isfinite(self.mean)) or not np.all(np.isfinite(self.cov)):
            raise ValueError("non-finite belief")
        if not np.allclose(self.cov, self.cov.T, atol=1e-8 * (1.0 + abs(np.trace(self.cov)))):
            raise ValueError("covariance not symmetric")
        floor = -tol_scale * max(1.0, abs(np.trace(self.cov)))
        if np.linalg.eigvalsh(self.cov).min() < floor:
            raise ValueError("covariance not positive semi-definite")
        return self


def road_belief(mean, cov) -> GaussianBelief:
    return GaussianBelief(mean, cov, "road")


def ground_belief(mean, cov) -> GaussianBelief:
    return GaussianBelief(mean, cov, "ground")


@dataclass(frozen=True)
class NoiseConfig:
    """Process/observation noise levels and the observation interval.

    sigma2_r: on-road acceleration noise variance.
    sigma2_g: off-road acceleration noise variance (per axis).
    sigma2_y: observation noise variance (per axis).
    dt:       time between observations.
    """

    sigma2_r: float
    sigma2_g: float
    sigma2_y: float
    dt: float

    def __post_init__(self):
        for name in ("sigma2_r", "sigma2_g", "sigma2_y", "dt"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be strictly positive")

    @property
    def transition_road(self) -> np.ndarray:
        return np.array([[1.0, self.dt], [0.0, 1.0]])

    @property
    def noise_road(self) -> np.ndarray:
        g = np.array([0.5 * self.dt ** 2, self.dt])
        return self.sigma2_r * np.outer(g, g)

    @property
    def transition_ground(self) -> np.ndarray:
        out = np.eye(4)
        out[0, 1] = out[2, 3] = self.dt
        return out

    @property
    def noise_ground(self) -> np.ndarray:
        g = np.array([0.5 * self.dt ** 2, self.dt])
        block = self.sigma2_g * np.outer(g, g)
        out = np.zeros((4, 4))
        out[:2, :2] = block
        out[2:, 2:] = block
        return out


@dataclass(frozen=True)
class EdgeTransform:
    """Affine map from road coordinates to ground coordinates on one edge.

    ``ground = P @ (d, v) + s``.  The two columns of P are orthonormal,
    so the inverse map is ``(d, v) = P.T @ (ground - s)``.  The map
    anchors the edge's start distance to the start vertex and the end
    distance to the end vertex.
    """

    P: np.ndarray
    s: np.ndarray

    @classmethod
    def for_edge(cls, edge: Edge, d_start: float) -> "EdgeTransform":
        if edge.length <= 0.0:
            raise ValueError(f"degenerate edge {edge.id}")
        u = edge.direction()
        P = np.array([[u[0], 0.0],
                      [0.0, u[0]],
                      [u[1], 0.0],
                      [0.0, u[1]]])
        s = np.array([edge.start.x - u[0] * d_start,
                      0.0,
                      edge.start.y - u[1] * d_start,
                      0.0])
        return cls(P=P, s=s)

    @property
    def direction(self) -> np.ndarray:
        return self.P[(0, 2), 0]


def edge_transform(path: PathCandidate, edge_index: int) -> EdgeTransform:
    """Transform for one edge, anchored at its path-dependent offset.

    Transforms are cached on the path, which is immutable.
    """
    cache = path._transforms
    if cache is None:
        cache = [None] * len(path.edges)
        object.__setattr__(path, "_transforms", cache)
    t = cache[edge_index]
    if t is None:
        d_a, _ = edge_distance_bounds(path, edge_index)
        t = EdgeTransform.for_edge(path.edges[edge_index], d_a)
        cache[edge_index] = t
    return t


# ---------------------------------------------------------------------------
# prediction


def road_predict(belief: GaussianBelief, cfg: NoiseConfig) -> GaussianBelief:
    """One-step constant-velocity prediction in the road frame."""
    if belief.frame != "road":
        raise ValueError("road_predict needs a road-frame belief")
    G = cfg.transition_road
    cov = G @ belief.cov @ G.T + cfg.noise_road
    return GaussianBelief._trusted(G @ belief.mean, 0.5 * (cov + cov.T), "road")


def ground_predict(belief: GaussianBelief, cfg: NoiseConfig) -> GaussianBelief:
    """One-step constant-velocity prediction in the ground frame."""
    if belief.frame != "ground":
        raise ValueError("ground_predict needs a ground-frame belief")
    G = cfg.transition_ground
    cov = G @ belief.cov @ G.T + cfg.noise_ground
    return GaussianBelief._trusted(G @ belief.mean, 0.5 * (cov + cov.T), "ground")


# ---------------------------------------------------------------------------
# frame changes


def to_ground(x, t: EdgeTransform):
    """Map a road state or belief onto the ground frame."""
    if isinstance(x, GaussianBelief):
        if x.frame != "road":
            raise ValueError("to_ground needs a road-frame belief")
        cov = t.P @ x.cov @ t.P.T
        return GaussianBelief._trusted(t.P @ x.mean + t.s, 0.5 * (cov + cov.T), "ground")
    d, v = x
    g = t.P @ np.array([d, v], dtype=float) + t.s
    return GroundState(*g)


def to_road(x, t: EdgeTransform, preserve_speed: bool = False):
    """Project a ground state or belief onto an edge's road frame.

    The projection keeps only the motion component along the edge.  For
    point states, ``preserve_speed`` rescales the projected speed to the
    full ground speed magnitude (sign taken from the along-edge
    component), which avoids losing speed when entering an edge at an
    angle.
    """
    if isinstance(x, GaussianBelief):
        if x.frame != "ground":
            raise ValueError("to_road needs a ground-frame belief")
        cov = t.P.T @ x.cov @ t.P
        return GaussianBelief._trusted(t.P.T @ (x.mean - t.s), 0.5 * (cov + cov.T), "road")
    g = np.asarray(x, dtype=float)
    d, v = t.P.T @ (g - t.s)
    if preserve_speed:
        speed = math.hypot(g[1], g[3])
        v = math.copysign(speed, v) if v != 0.0 else speed
    return RoadState(float(d), float(v))


# ---------------------------------------------------------------------------
# observation model


def gaussian_logpdf(x, mean, cov) -> float:
    """Log density of a multivariate normal, via Cholesky."""
    x = np.asarray(x, dtype=float).reshape(-1)
    mean = np.asarray(mean, dtype=float).reshape(-1)
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    n = x.size
    if n == 2:
        return _logpdf2(x, mean, cov)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"covariance not positive definite: {exc}") from None
    z = np.linalg.solve(chol, x - mean)
    return float(-0.5 * (n * LOG_2PI + z @ z) - np.log(np.diag(chol)).sum())


def _logpdf2(x, mean, cov) -> float:
    # Closed form for the 2-by-2 case; this sits on the per-particle hot path.
    a, b, c = cov[0, 0], cov[0, 1], cov[1, 1]
    det = a * c - b * b
    if det <= 0.0 or a <= 0.0:
        raise np.linalg.LinAlgError("covariance not positive definite")
    r0 = x[0] - mean[0]
    r1 = x[1] - mean[1]
    maha = (c * r0 * r0 - 2.0 * b * r0 * r1 + a * r1 * r1) / det
    return -0.5 * (2.0 * LOG_2PI + math.log(det) + maha)


def observe_likelihood(belief: GaussianBelief, y, cfg: NoiseConfig):
    """Predictive observation mean, covariance and log density.

    Returns ``(e, Q, log_density)`` where ``e`` is the predicted
    observation, ``Q`` its covariance (state covariance projected to the
    observation plus per-axis noise) and ``log_density`` the Gaussian
    log pdf of ``y`` under ``(e, Q)``.
    """
    if belief.frame != "ground":
        raise ValueError("observe_likelihood needs a ground-frame belief")
    e = O_GROUND @ belief.mean
    Q = O_GROUND @ belief.cov @ O_GROUND.T + cfg.sigma2_y * np.eye(2)
    y = np.asarray(y, dtype=float).reshape(2)
    return e, Q, gaussian_logpdf(y, e, Q)
