"""LMB filtering: one-term GLMB lift, first-moment aggregation, dual-threshold estimator.

The LMB posterior keeps one existence probability and one Gaussian density per
label.  Each update lifts the prior into a single GLMB hypothesis whose rows
carry existence-scaled survival probabilities, runs the shared joint
prediction-update machinery, and aggregates the resulting children back to
per-label form: existence is the hypothesis-weight sum, the density is the
moment-matched mixture of the per-child posteriors.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .birth import BirthCandidate, make_birth_candidates, measurement_assoc_prob, store_and_expire
from .config import EstimatorConfig, RunConfig
from .dynamics import GaussianDensity, TrackLabel
from .glmb import (Hypothesis, JointUpdateEngine, LabeledTrackDensity, Parent, UpdateResult,
                   clamp_state)
from .measurement import Measurement
from .occlusion import FuzzyDetectionModel


@dataclass
class LmbTrack:
    existence: float
    density: LabeledTrackDensity


@dataclass
class LmbDensity:
    tracks: dict[TrackLabel, LmbTrack] = field(default_factory=dict)

    def validate(self) -> None:
        for label, track in self.tracks.items():
            if not 0.0 <= track.existence <= 1.0:
                raise ValueError(f"existence of {label} outside [0, 1]")
            if track.density.label != label:
                raise ValueError(f"label mismatch for {label}")


def aggregate_children(
    children: list[Hypothesis], table: dict[int, LabeledTrackDensity]
) -> LmbDensity:
    """Collapse weighted hypotheses to per-label (existence, moment-matched density).

    Existence is the plain weight sum over hypotheses containing the label.
    The Gaussian is the mean/covariance-matched collapse of the per-child
    posteriors; appearance and detection bookkeeping come from the heaviest
    hypothesis containing the label.
    """
    per_label: dict[TrackLabel, list[tuple[float, int]]] = {}
    for h in children:
        for label, eid in h.track_refs.items():
            per_label.setdefault(label, []).append((h.weight, eid))
    out = LmbDensity()
    for label, pairs in per_label.items():
        r = float(sum(w for w, _ in pairs))
        if r <= 0.0:
            continue
        weights = np.array([w for w, _ in pairs]) / r
        means = np.stack([table[eid].kinematic.mean for _, eid in pairs])
        mean = weights @ means
        cov = np.zeros((8, 8))
        for w, (_, eid) in zip(weights, pairs):
            diff = table[eid].kinematic.mean - mean
            cov += w * (table[eid].kinematic.cov + np.outer(diff, diff))
        cov = 0.5 * (cov + cov.T)
        heaviest = max(pairs, key=lambda p: p[0])[1]
        entry = table[heaviest]
        out.tracks[label] = LmbTrack(
            existence=min(r, 1.0),
            density=LabeledTrackDensity(
                label, GaussianDensity(mean, cov), entry.appearance, entry.last_associated
            ),
        )
    return out


def lmb_estimate(
    density: LmbDensity, cfg: EstimatorConfig, r_max: dict[TrackLabel, float],
    min_aspect: float,
) -> list[tuple[TrackLabel, np.ndarray]]:
    """Hysteresis track extraction: confirmed by r_max, kept while r stays up."""
    out = []
    for label in sorted(density.tracks):
        track = density.tracks[label]
        if r_max.get(label, 0.0) > cfg.upper_threshold and track.existence > cfg.lower_threshold:
            out.append((label, clamp_state(track.density.kinematic.mean, min_aspect)))
    return out


class LmbFilter:
    """Online multi-object tracker propagating an LMB posterior."""

    def __init__(self, cfg: RunConfig | None = None, collect_debug: bool = False):
        self.cfg = cfg or RunConfig()
        self.fuzzy = FuzzyDetectionModel(self.cfg.fuzzy)
        self.engine = JointUpdateEngine(self.cfg, self.fuzzy)
        self.lmb = LmbDensity()
        self.r_max: dict[TrackLabel, float] = {}
        self.tt_memory = {}
        self.pending_births: list[BirthCandidate] = []
        self.avg_area = 1.0
        self._started = False
        self.collect_debug = collect_debug
        self.debug: UpdateResult | None = None
        self.recall_log: list | None = None

    def step(self, measurements: list[Measurement], now: int) -> list[tuple[TrackLabel, np.ndarray]]:
        """Process one frame; returns the estimated (label, state) set."""
        cfg = self.cfg
        births = self.pending_births
        if not self._started:
            if not births and measurements:
                r0 = np.zeros(len(measurements))
                births, self.tt_memory = make_birth_candidates(
                    measurements, r0, self.tt_memory, cfg.birth, now, self.recall_log
                )
                areas = [z.box[2] ** 2 / z.box[3] for z in measurements]
                self.avg_area = float(np.mean(areas)) if areas else 1.0
            self._started = True
        for b in births:
            if b.recalled:
                self.r_max.pop(b.label, None)  # recalled identity re-earns confirmation

        labels = sorted(self.lmb.tracks)
        prior_table = {
            eid: self.lmb.tracks[label].density for eid, label in enumerate(labels)
        }
        presence_scale = {
            eid: self.lmb.tracks[label].existence for eid, label in enumerate(labels)
        }
        parent = Parent(0.0, list(range(len(labels))))
        result = self.engine.update(
            prior_table, [parent], births, measurements, now, self.avg_area,
            collect_debug=self.collect_debug, presence_scale=presence_scale,
        )
        if self.collect_debug:
            self.debug = result

        # association probabilities come from the GLMB-form children, before
        # aggregation collapses them
        weights_and_dets = [
            (h.weight, result.detections_by_key.get(h.key(), set())) for h in result.children
        ]
        r_u = measurement_assoc_prob(weights_and_dets, len(measurements))
        self.last_assoc_prob = r_u

        aggregated = aggregate_children(result.children, result.table)

        # terminate negligible tracks into the recall memory
        lost: list[tuple[TrackLabel, np.ndarray]] = []
        kept: dict[TrackLabel, LmbTrack] = {}
        for label, track in aggregated.tracks.items():
            if track.existence < cfg.existence_floor:
                lost.append((label, track.density.appearance.feature))
            else:
                kept[label] = track
        for b in births:
            if b.label not in aggregated.tracks:
                lost.append((b.label, b.appearance.feature))
        for label in labels:
            if label not in aggregated.tracks and all(l != label for l, _ in lost):
                lost.append((label, self.lmb.tracks[label].density.appearance.feature))
        self.tt_memory = store_and_expire(lost, self.tt_memory, now, cfg.birth)
        dropped = {label for label, _ in lost}
        for label in dropped:
            self.r_max.pop(label, None)
        self.lmb = LmbDensity(kept)

        self.pending_births, self.tt_memory = make_birth_candidates(
            measurements, r_u, self.tt_memory, cfg.birth, now + 1, self.recall_log
        )

        for label, track in self.lmb.tracks.items():
            if track.existence > self.r_max.get(label, 0.0):
                self.r_max[label] = track.existence
        estimates = lmb_estimate(self.lmb, cfg.estimator, self.r_max, cfg.survival.min_aspect)
        if estimates:
            areas = [st[4] ** 2 / st[6] for _, st in estimates]
            self.avg_area = float(np.mean(areas))
        return estimates
