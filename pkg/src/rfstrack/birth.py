"""Adaptive track birth from poorly-associated measurements and re-identification.

Measurements whose association probability falls below a threshold seed birth
candidates for the next frame.  Before assigning fresh labels, candidates are
matched by cosine similarity against a memory of temporarily terminated (TT)
tracks so that reappearing objects regain their original identity.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .dynamics import GaussianDensity, ModelError, TrackLabel
from .measurement import AppearanceState, Measurement


@dataclass
class TTTrack:
    """A temporarily terminated track kept for recall: identity + appearance."""

    label: TrackLabel
    feature: np.ndarray
    terminated_at: int


@dataclass(frozen=True)
class BirthConfig:
    """Adaptive-birth and recall parameters.

    assoc_threshold: measurements with association probability below this
    become birth candidates.  expected_births scales candidate existence;
    max_birth_prob caps it.  recall_similarity / recall_window control TT
    track re-identification.  The sigma fields shape the birth density built
    around a measurement box (position/velocity sigmas scale with box height).
    """

    assoc_threshold: float = 0.95
    max_birth_prob: float = 0.03
    expected_births: float = 0.5
    recall_similarity: float = 0.6
    recall_window: int = 50
    pos_sigma_scale: float = 0.25
    vel_sigma_scale: float = 0.125
    aspect_sigma: float = 0.05
    aspect_rate_sigma: float = 0.01

    def __post_init__(self):
        if not 0.0 < self.assoc_threshold < 1.0:
            raise ModelError("assoc_threshold must be in (0, 1)")
        if not 0.0 < self.max_birth_prob < 1.0:
            raise ModelError("max_birth_prob must be in (0, 1)")
        if self.expected_births <= 0 or self.recall_window < 0:
            raise ModelError("expected_births must be positive, recall_window non-negative")
        if not 0.0 < self.recall_similarity < 1.0:
            raise ModelError("recall_similarity must be in (0, 1)")


@dataclass
class BirthCandidate:
    """A new or recalled track proposed for the next frame."""

    label: TrackLabel
    probability: float
    density: GaussianDensity
    appearance: AppearanceState
    recalled: bool = False


def measurement_assoc_prob(
    children: Iterable[tuple[float, Iterable[int]]], n_measurements: int
) -> np.ndarray:
    """Per-measurement association probability over weighted hypotheses.

    ``children`` yields (normalised weight, indices of measurements that
    hypothesis assigned to any track).
    """
    r_u = np.zeros(n_measurements)
    for weight, assigned in children:
        for j in assigned:
            r_u[j] += weight
    return np.clip(r_u, 0.0, 1.0)


def birth_density(box: np.ndarray, cfg: BirthConfig) -> GaussianDensity:
    """Gaussian birth density centred on a measured box with zero rates."""
    u, v, h, beta = (float(x) for x in box)
    mean = np.array([u, 0.0, v, 0.0, h, 0.0, beta, 0.0])
    sig_p = cfg.pos_sigma_scale * h
    sig_v = cfg.vel_sigma_scale * h
    cov = np.diag(
        [sig_p**2, sig_v**2, sig_p**2, sig_v**2, sig_p**2, sig_v**2,
         cfg.aspect_sigma**2, cfg.aspect_rate_sigma**2]
    )
    return GaussianDensity(mean, cov)


def make_birth_candidates(
    measurements: Sequence[Measurement],
    r_u: np.ndarray,
    tt_memory: dict[TrackLabel, TTTrack],
    cfg: BirthConfig,
    next_frame: int,
    recall_log: list | None = None,
) -> tuple[list[BirthCandidate], dict[TrackLabel, TTTrack]]:
    """Birth candidates for the next frame, recalling TT tracks by appearance.

    Only measurements with association probability below assoc_threshold are
    considered.  Candidate/TT pairs above recall_similarity are matched
    greedily, best similarity first (ties broken on (label, measurement
    index) for order independence), and matched candidates carry the original
    label.  The remaining candidates receive fresh labels (next_frame, i) in
    measurement order.  Recalled labels leave the returned memory.
    """
    r_u = np.asarray(r_u, dtype=float)
    if len(measurements) != r_u.size:
        raise ModelError("r_u must align with the measurement list")
    unexplained = [j for j in range(len(measurements)) if r_u[j] < cfg.assoc_threshold]
    if not unexplained:
        return [], dict(tt_memory)

    pairs = []
    for j in unexplained:
        feat = measurements[j].feature
        for label, tt in tt_memory.items():
            sim = float(np.dot(feat, tt.feature))
            if sim > cfg.recall_similarity:
                pairs.append((sim, label, j))
    pairs.sort(key=lambda t: (-t[0], t[1], t[2]))
    recalled_label: dict[int, TrackLabel] = {}
    used_labels: set[TrackLabel] = set()
    for sim, label, j in pairs:
        if label in used_labels or j in recalled_label:
            continue
        recalled_label[j] = label
        used_labels.add(label)
        if recall_log is not None:
            recall_log.append((next_frame, label, sim))

    denom = float(np.sum(1.0 - r_u))
    candidates: list[BirthCandidate] = []
    fresh_index = 0
    for j in unexplained:
        prob = min(cfg.max_birth_prob, cfg.expected_births * (1.0 - r_u[j]) / denom)
        z = measurements[j]
        if j in recalled_label:
            label = recalled_label[j]
            recalled = True
        else:
            label = TrackLabel(next_frame, fresh_index)
            fresh_index += 1
            recalled = False
        candidates.append(
            BirthCandidate(
                label=label,
                probability=prob,
                density=birth_density(z.box, cfg),
                appearance=AppearanceState(z.feature.copy()),
                recalled=recalled,
            )
        )
    memory = {label: tt for label, tt in tt_memory.items() if label not in used_labels}
    return candidates, memory


def store_and_expire(
    vanished: Iterable[tuple[TrackLabel, np.ndarray]],
    tt_memory: dict[TrackLabel, TTTrack],
    now: int,
    cfg: BirthConfig,
) -> dict[TrackLabel, TTTrack]:
    """Insert newly terminated tracks and drop entries beyond the recall window."""
    memory = dict(tt_memory)
    for label, feature in vanished:
        memory[label] = TTTrack(label, np.asarray(feature, dtype=float), now)
    return {
        label: tt for label, tt in memory.items() if now - tt.terminated_at <= cfg.recall_window
    }
