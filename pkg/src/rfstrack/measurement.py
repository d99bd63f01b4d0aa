"""Single-object likelihoods: Kalman update, appearance model, gating, feature EMA.

Measurements pair a bounding box [u, v, h, beta] with a unit-norm re-ID
feature vector.  The observation matrix picks the four observable state
components; appearance is handled by a two-mode model (unchanged / changed)
with cosine-similarity likelihoods raised to a sharpening power.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import GaussianDensity, ModelError

# observation matrix H = I4 kron [1 0]
OBS_MATRIX = np.kron(np.eye(4), np.array([[1.0, 0.0]]))


class NumericalError(RuntimeError):
    """Raised when a linear-algebra step fails (e.g. singular innovation)."""


@dataclass
class Measurement:
    """Detector output: box [u, v, h, beta], unit feature, confidence score."""

    box: np.ndarray
    feature: np.ndarray
    score: float = 1.0

    def __post_init__(self):
        self.box = np.asarray(self.box, dtype=float).reshape(-1)
        self.feature = np.asarray(self.feature, dtype=float).reshape(-1)
        if self.box.shape != (4,):
            raise ModelError("measurement box must be a 4-vector [u, v, h, beta]")
        if self.box[2] <= 0 or self.box[3] <= 0:
            raise ModelError("measurement height and aspect must be positive")
        norm = float(np.linalg.norm(self.feature))
        if abs(norm - 1.0) > 1e-6:
            raise ModelError(f"feature must be unit-norm (|f| = {norm:.6g})")


@dataclass
class AppearanceState:
    """Track appearance: unit feature plus [p(unchanged), p(changed)] mode mass."""

    feature: np.ndarray
    mode_probs: np.ndarray = field(default_factory=lambda: np.array([0.9, 0.1]))

    def __post_init__(self):
        self.feature = np.asarray(self.feature, dtype=float).reshape(-1)
        self.mode_probs = np.asarray(self.mode_probs, dtype=float).reshape(-1)
        norm = float(np.linalg.norm(self.feature))
        if abs(norm - 1.0) > 1e-6:
            raise ModelError(f"appearance feature must be unit-norm (|f| = {norm:.6g})")
        if self.mode_probs.shape != (2,) or np.any(self.mode_probs < 0):
            raise ModelError("mode_probs must be two non-negative values")
        if abs(float(self.mode_probs.sum()) - 1.0) > 1e-12:
            raise ModelError("mode_probs must sum to 1")


@dataclass(frozen=True)
class MeasurementConfig:
    """Observation model parameters.

    kinematic_gate is a squared-Mahalanobis (chi-square) threshold on the
    innovation; appearance_gate is a cosine-dissimilarity threshold.  A pair
    is admissible when either test passes.  clutter_intensity is the expected
    false-positive density per unit measurement volume.
    """

    obs_noise: tuple[float, float, float, float] = (50.0, 50.0, 50.0, 1e-3)
    appearance_power: float = 15.0
    kinematic_gate: float = 13.2767
    appearance_gate: float = 0.4
    clutter_intensity: float = 1e-5
    mode_prior: tuple[float, float] = (0.9, 0.1)

    def __post_init__(self):
        if any(v <= 0 for v in self.obs_noise):
            raise ModelError("obs_noise variances must be positive")
        if min(self.appearance_power, self.kinematic_gate, self.appearance_gate,
               self.clutter_intensity) <= 0:
            raise ModelError("all measurement config scalars must be positive")

    @property
    def obs_cov(self) -> np.ndarray:
        return np.diag(self.obs_noise)


def innovation(prior: GaussianDensity, cfg: MeasurementConfig) -> tuple[np.ndarray, np.ndarray]:
    """Predicted measurement mean and innovation covariance S = H P H^T + R."""
    z_pred = OBS_MATRIX @ prior.mean
    s = OBS_MATRIX @ prior.cov @ OBS_MATRIX.T + cfg.obs_cov
    return z_pred, 0.5 * (s + s.T)


def kalman_update(
    prior: GaussianDensity, box: np.ndarray, cfg: MeasurementConfig
) -> tuple[GaussianDensity, float]:
    """Kalman update of the kinematic density against a measured box.

    Returns the posterior density and the evidence q = N(box; H m, H P H^T + R),
    i.e. the Gaussian density of the box under the innovation distribution.
    """
    z_pred, s = innovation(prior, cfg)
    try:
        chol = np.linalg.cholesky(s)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("singular innovation covariance") from exc
    resid = np.asarray(box, dtype=float) - z_pred
    white = np.linalg.solve(chol, resid)
    maha_sq = float(white @ white)
    log_det = 2.0 * float(np.log(np.diag(chol)).sum())
    log_q = -0.5 * maha_sq - 0.5 * log_det - 2.0 * np.log(2.0 * np.pi)
    gain = np.linalg.solve(s, OBS_MATRIX @ prior.cov).T
    mean = prior.mean + gain @ resid
    cov = (np.eye(prior.mean.size) - gain @ OBS_MATRIX) @ prior.cov
    cov = 0.5 * (cov + cov.T)
    return GaussianDensity(mean, cov), float(np.exp(log_q))


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Dot product of two unit vectors, clamped to [0, 1]."""
    return float(np.clip(np.dot(a, b), 0.0, 1.0))


def appearance_likelihood(
    feature: np.ndarray, app: AppearanceState, power: float
) -> tuple[float, float]:
    """Likelihood of an observed feature under the (unchanged, changed) modes.

    Returns (s^power, (1 - s)^power) with s the clamped cosine similarity
    between the observation and the track feature.
    """
    s = cosine_similarity(feature, app.feature)
    return s**power, (1.0 - s) ** power


def update_feature(app: AppearanceState, feature: np.ndarray, detected: bool) -> AppearanceState:
    """Exponential moving average of the track feature; no-op on a miss.

    The blended vector is re-normalised so cosine similarities stay well
    scaled over long tracks.
    """
    if not detected:
        return app
    blended = 0.9 * app.feature + 0.1 * np.asarray(feature, dtype=float)
    norm = float(np.linalg.norm(blended))
    if norm == 0.0:
        raise ModelError("feature EMA collapsed to the zero vector")
    return AppearanceState(blended / norm, app.mode_probs.copy())


def gate(
    prior: GaussianDensity, app: AppearanceState, z: Measurement, cfg: MeasurementConfig
) -> bool:
    """Admissibility pre-test: kinematic chi-square OR appearance similarity."""
    z_pred, s = innovation(prior, cfg)
    resid = z.box - z_pred
    try:
        white = np.linalg.solve(np.linalg.cholesky(s), resid)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("singular innovation covariance") from exc
    if float(white @ white) < cfg.kinematic_gate:
        return True
    return 1.0 - cosine_similarity(z.feature, app.feature) < cfg.appearance_gate
