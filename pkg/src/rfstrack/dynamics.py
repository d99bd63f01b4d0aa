"""Object state representation, constant-velocity prediction and survival probability.

The kinematic state is an 8-vector [u, u_dot, v, v_dot, h, h_dot, beta, beta_dot]:
box centroid (u, v), box height h, aspect ratio beta = height/width, and their
per-frame rates of change.  All quantities are in pixels / pixels-per-frame.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

STATE_DIM = 8


class ModelError(ValueError):
    """Raised when a model object violates its contract (e.g. bad covariance)."""


@dataclass(frozen=True, order=True)
class TrackLabel:
    """Unique track identity: (frame the track was born, index within that frame)."""

    birth_time: int
    index: int

    def __post_init__(self):
        if self.birth_time < 0 or self.index < 0:
            raise ModelError(f"label fields must be non-negative, got {self}")

    def __str__(self):
        return f"{self.birth_time}.{self.index}"


@dataclass
class GaussianDensity:
    """Gaussian over the 8-D kinematic state.

    The covariance must be symmetric positive definite; this is validated on
    construction.  Instances are treated as immutable: operations return new
    densities instead of mutating.
    """

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).reshape(-1)
        self.cov = np.asarray(self.cov, dtype=float)
        if self.mean.shape != (STATE_DIM,):
            raise ModelError(f"mean must have dimension {STATE_DIM}, got {self.mean.shape}")
        if self.cov.shape != (STATE_DIM, STATE_DIM):
            raise ModelError(f"covariance must be {STATE_DIM}x{STATE_DIM}, got {self.cov.shape}")
        scale = max(1.0, float(np.abs(self.cov).max()))
        if np.abs(self.cov - self.cov.T).max() > 1e-9 * scale:
            raise ModelError("covariance is not symmetric")
        try:
            np.linalg.cholesky(self.cov)
        except np.linalg.LinAlgError as exc:
            raise ModelError("covariance is not positive definite") from exc


@dataclass(frozen=True)
class MotionConfig:
    """Constant-velocity motion model parameters.

    process_noise holds one acceleration variance per observed coordinate
    (u, v, h, beta); period is the sampling interval in frames.
    """

    process_noise: tuple[float, float, float, float] = (9.0, 9.0, 9.0, 1e-4)
    period: float = 1.0

    def __post_init__(self):
        if self.period <= 0:
            raise ModelError("period must be positive")
        if len(self.process_noise) != 4 or any(e <= 0 for e in self.process_noise):
            raise ModelError("process_noise must be 4 positive variances")


@dataclass(frozen=True)
class SurvivalConfig:
    """Lifespan/shrink-dependent survival probability parameters.

    Tracks with shrinking height whose (aspect-weighted) squared height falls
    below shrink_offset times the scene-average area are treated as leaving
    the scene and get a damped survival probability.
    """

    base_survival: float = 0.99
    lifespan_scale: float = 2.0
    shrink_scale: float = 3.5
    shrink_offset: float = 0.1
    min_aspect: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.base_survival <= 1.0:
            raise ModelError("base_survival must be in (0, 1]")
        if self.lifespan_scale <= 0 or self.shrink_scale <= 0 or self.min_aspect <= 0:
            raise ModelError("scales and min_aspect must be positive")


def transition_matrices(cfg: MotionConfig) -> tuple[np.ndarray, np.ndarray]:
    """Return (F, Q) for the constant-velocity model.

    F = I4 kron [[1, T], [0, 1]]; Q = diag(process_noise) kron (g g^T) with
    g = [T^2/2, T] (discretised white-noise acceleration).
    """
    t = cfg.period
    f_block = np.array([[1.0, t], [0.0, 1.0]])
    g = np.array([[t * t / 2.0], [t]])
    q_block = g @ g.T
    f = np.kron(np.eye(4), f_block)
    q = np.kron(np.diag(cfg.process_noise), q_block)
    return f, q


def predict(density: GaussianDensity, cfg: MotionConfig) -> GaussianDensity:
    """One-step constant-velocity prediction: N(F m, F P F^T + Q)."""
    f, q = transition_matrices(cfg)
    mean = f @ density.mean
    cov = f @ density.cov @ f.T + q
    cov = 0.5 * (cov + cov.T)
    return GaussianDensity(mean, cov)


def survival_probability(
    estimate: np.ndarray,
    label: TrackLabel,
    now: int,
    avg_area: float,
    cfg: SurvivalConfig,
) -> float:
    """Survival probability from track lifespan and shrink behaviour.

    Long-lived tracks approach base_survival; tracks whose height is shrinking
    (h_dot < 0) get an extra logistic penalty driven by their size relative to
    the scene-average area, since shrinking small boxes are typically leaving
    the scene.
    """
    if avg_area <= 0:
        raise ModelError("avg_area must be positive")
    lifespan = now - label.birth_time
    if lifespan < 0:
        raise ModelError(f"now={now} precedes birth of {label}")
    est = np.asarray(estimate, dtype=float).reshape(-1)
    if est[5] < 0.0:
        aspect = max(cfg.min_aspect, est[6])
        size_term = aspect * est[4] ** 2 / avg_area - cfg.shrink_offset
        base = cfg.base_survival * _sigmoid(cfg.shrink_scale * size_term)
    else:
        base = cfg.base_survival
    return base * _sigmoid(cfg.lifespan_scale * lifespan)


def _sigmoid(x: float) -> float:
    # overflow-safe logistic
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)
