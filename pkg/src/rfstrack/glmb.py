"""GLMB filtering: joint prediction-update recursion, hypothesis management, estimator.

The multi-object posterior is a weighted set of hypotheses, each naming the
tracks it believes exist and pointing into a shared track table of per-track
Gaussian/appearance densities.  One update step, per parent hypothesis:

1. predict every referenced track density and score its survival;
2. compute pseudo detection probabilities from the predicted estimates of
   all candidate tracks (survivors plus pending births) via the occlusion
   model, using the previous frame's average estimated area;
3. build the joint cost matrix and draw child hypotheses by ranked
   assignment or Gibbs sampling;
4. re-weight each child with detection probabilities recomputed from the
   tracks it actually keeps (the data-updated densities are reused as-is);
5. merge duplicate children, normalise, prune to the hypothesis budget.

Tracks that disappear from every kept hypothesis are reported so the birth
module can store them for re-identification.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import assignment as assignment_mod
from .assignment import DEAD, MISSED, AssignmentSolution, build_cost_matrix
from .birth import BirthCandidate, make_birth_candidates, measurement_assoc_prob, store_and_expire
from .config import RunConfig
from .dynamics import (GaussianDensity, TrackLabel, predict, survival_probability)
from .measurement import (OBS_MATRIX, AppearanceState, Measurement, update_feature)
from .occlusion import FuzzyDetectionModel, intersection_matrix, max_ioa_from_matrix


@dataclass
class LabeledTrackDensity:
    """Per-track state: label, kinematic Gaussian, appearance, last detection frame."""

    label: TrackLabel
    kinematic: GaussianDensity
    appearance: AppearanceState
    last_associated: int = -1


@dataclass
class Hypothesis:
    """One explanation of which tracks exist: weight plus label -> table entry."""

    weight: float
    track_refs: dict[TrackLabel, int] = field(default_factory=dict)

    @property
    def labels(self) -> set[TrackLabel]:
        return set(self.track_refs)

    def key(self) -> frozenset:
        return frozenset(self.track_refs.items())


@dataclass
class GlmbDensity:
    """Hypothesis list plus the shared track table they index into."""

    hypotheses: list[Hypothesis] = field(default_factory=list)
    track_table: dict[int, LabeledTrackDensity] = field(default_factory=dict)

    def validate(self) -> None:
        total = sum(h.weight for h in self.hypotheses)
        if self.hypotheses and abs(total - 1.0) > 1e-9:
            raise ValueError(f"hypothesis weights sum to {total}, not 1")
        for h in self.hypotheses:
            if len(h.track_refs) != len({eid for eid in h.track_refs.values()}):
                raise ValueError("duplicate table entries within a hypothesis")
            for label, eid in h.track_refs.items():
                entry = self.track_table.get(eid)
                if entry is None or entry.label != label:
                    raise ValueError(f"unresolved track reference {label} -> {eid}")

    def all_labels(self) -> set[TrackLabel]:
        labels: set[TrackLabel] = set()
        for h in self.hypotheses:
            labels |= h.labels
        return labels


def empty_density() -> GlmbDensity:
    return GlmbDensity([Hypothesis(1.0, {})], {})


# -- estimator ops -------------------------------------------------------------


def cardinality(density: GlmbDensity) -> np.ndarray:
    """Probability vector over the number of objects."""
    if not density.hypotheses:
        return np.array([1.0])
    n_max = max(len(h.track_refs) for h in density.hypotheses)
    rho = np.zeros(n_max + 1)
    for h in density.hypotheses:
        rho[len(h.track_refs)] += h.weight
    return rho


def clamp_state(mean: np.ndarray, min_aspect: float) -> np.ndarray:
    """Point estimate with positivity enforced on height and aspect ratio."""
    out = np.asarray(mean, dtype=float).copy()
    out[4] = max(1.0, out[4])
    out[6] = max(min_aspect, out[6])
    return out


def estimate(density: GlmbDensity, min_aspect: float) -> list[tuple[TrackLabel, np.ndarray]]:
    """MAP-cardinality estimate: best hypothesis of the most likely cardinality.

    Cardinality ties resolve to the smaller count; the winning hypothesis's
    track means are returned with height/aspect clamped positive.
    """
    rho = cardinality(density)
    n_hat = int(np.argmax(rho))  # argmax returns the first (smallest) maximiser
    best = None
    for h in density.hypotheses:
        if len(h.track_refs) == n_hat and (best is None or h.weight > best.weight):
            best = h
    if best is None:
        return []
    out = []
    for label in sorted(best.track_refs):
        entry = density.track_table[best.track_refs[label]]
        out.append((label, clamp_state(entry.kinematic.mean, min_aspect)))
    return out


def normalize_prune(
    density: GlmbDensity, n_max: int, weight_floor: float
) -> tuple[GlmbDensity, list[tuple[TrackLabel, np.ndarray]]]:
    """Keep the n_max best hypotheses above the relative weight floor.

    Returns the pruned, renormalised density and the vanished-track report:
    labels present before pruning but in no kept hypothesis, each with the
    appearance feature from the heaviest hypothesis that contained it.
    """
    hyps = sorted(density.hypotheses, key=lambda h: -h.weight)
    if not hyps:
        return GlmbDensity([], {}), []
    floor = weight_floor * hyps[0].weight
    kept = [h for h in hyps[:n_max] if h.weight >= floor]
    if not kept:
        kept = [hyps[0]]
    total = sum(h.weight for h in kept)
    kept = [Hypothesis(h.weight / total, dict(h.track_refs)) for h in kept]
    kept_labels: set[TrackLabel] = set()
    for h in kept:
        kept_labels |= h.labels
    vanished: list[tuple[TrackLabel, np.ndarray]] = []
    reported: set[TrackLabel] = set()
    for h in hyps:  # heaviest first, so the first sighting wins
        for label, eid in h.track_refs.items():
            if label in kept_labels or label in reported:
                continue
            reported.add(label)
            vanished.append((label, density.track_table[eid].appearance.feature.copy()))
    used = {eid for h in kept for eid in h.track_refs.values()}
    table = {eid: density.track_table[eid] for eid in used}
    return GlmbDensity(kept, table), vanished


# -- joint prediction-update engine ---------------------------------------------


@dataclass
class Parent:
    """One prior hypothesis prepared for the update: log weight + survivor rows."""

    log_weight: float
    entries: list[int]  # prior table entry ids, label-sorted


@dataclass
class ChildDebug:
    parent_index: int
    outcomes: tuple[int, ...]
    row_keys: list
    log_weight: float


@dataclass
class UpdateResult:
    children: list[Hypothesis]  # normalised, merged
    table: dict[int, LabeledTrackDensity]
    detections_by_key: dict[frozenset, set[int]]
    debug: list[ChildDebug]


def _mix_seed(a: int, b: int, c: int) -> int:
    h = (a * 0x9E3779B97F4A7C15 + b * 0xBF58476D1CE4E5B9 + c * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    h ^= h >> 31
    return h


class JointUpdateEngine:
    """Per-frame machinery shared by the GLMB and LMB filters.

    Owns the lazily-built posterior track table for one update: predicted
    entries, per-(track, measurement) Kalman posteriors, per-parent cost
    matrices and the corrected re-weighting.
    """

    def __init__(self, cfg: RunConfig, fuzzy: FuzzyDetectionModel):
        self.cfg = cfg
        self.fuzzy = fuzzy

    def update(
        self,
        prior_table: dict[int, LabeledTrackDensity],
        parents: list[Parent],
        births: list[BirthCandidate],
        measurements: list[Measurement],
        now: int,
        avg_area: float,
        collect_debug: bool = False,
        presence_scale: dict[int, float] | None = None,
    ) -> UpdateResult:
        """Run the joint prediction-update for one frame.

        presence_scale optionally multiplies each prior entry's survival
        probability; the LMB filter uses it to fold per-track existence into
        its one-term lift.
        """
        cfg = self.cfg
        mcfg = cfg.measurement
        n_meas = len(measurements)
        boxes = np.array([z.box for z in measurements], dtype=float).reshape(n_meas, 4)
        feats = (
            np.array([z.feature for z in measurements], dtype=float)
            if n_meas
            else np.zeros((0, 0))
        )

        # predicted survivor entries (one per distinct prior entry) and births
        survivor_eids = sorted({eid for p in parents for eid in p.entries})
        pred: dict[int, LabeledTrackDensity] = {}
        pbar: dict[int, float] = {}
        scale = presence_scale or {}
        for eid in survivor_eids:
            prior = prior_table[eid]
            pbar[eid] = scale.get(eid, 1.0) * survival_probability(
                prior.kinematic.mean, prior.label, now, avg_area, cfg.survival
            )
            pred[eid] = LabeledTrackDensity(
                prior.label,
                predict(prior.kinematic, cfg.motion),
                AppearanceState(prior.appearance.feature.copy(),
                                np.array(mcfg.mode_prior, dtype=float)),
                prior.last_associated,
            )

        # row universe: ('s', eid) for survivors, ('b', i) for birth candidates
        keys = [("s", eid) for eid in survivor_eids] + [("b", i) for i in range(len(births))]
        key_index = {key: idx for idx, key in enumerate(keys)}
        densities = [pred[eid].kinematic for _, eid in keys[: len(survivor_eids)]] + [
            b.density for b in births
        ]
        appearances = [pred[eid].appearance for _, eid in keys[: len(survivor_eids)]] + [
            b.appearance for b in births
        ]

        # geometry of the predicted point estimates
        n_univ = len(keys)
        geo_boxes = np.zeros((n_univ, 4))
        areas = np.zeros(n_univ)
        bottoms = np.zeros(n_univ)
        for idx, dens in enumerate(densities):
            u, v, h, beta = dens.mean[0], dens.mean[2], dens.mean[4], dens.mean[6]
            h = max(h, 1.0)
            beta = max(beta, cfg.survival.min_aspect)
            w = h / beta
            geo_boxes[idx] = (u - w / 2.0, v - h / 2.0, w, h)
            areas[idx] = h * h / beta
            bottoms[idx] = v + h / 2.0
        inter = intersection_matrix(geo_boxes) if n_univ else np.zeros((0, 0))
        ratios = np.clip(areas / max(avg_area, 1e-12), 0.0, self.fuzzy.cfg.area_ratio_max)

        # per-row gating, Kalman evidence and appearance weight (log psi without P_D)
        log_psi = np.full((n_univ, n_meas), -np.inf)
        gains: list[np.ndarray | None] = [None] * n_univ
        post_covs: list[np.ndarray | None] = [None] * n_univ
        z_preds = np.zeros((n_univ, 4))
        log_kappa = math.log(mcfg.clutter_intensity)
        for idx, dens in enumerate(densities):
            z_pred = OBS_MATRIX @ dens.mean
            z_preds[idx] = z_pred
            s = OBS_MATRIX @ dens.cov @ OBS_MATRIX.T + mcfg.obs_cov
            chol = np.linalg.cholesky(0.5 * (s + s.T))
            gains[idx] = np.linalg.solve(s, OBS_MATRIX @ dens.cov).T
            post_cov = (np.eye(8) - gains[idx] @ OBS_MATRIX) @ dens.cov
            post_covs[idx] = 0.5 * (post_cov + post_cov.T)
            if n_meas == 0:
                continue
            resid = boxes - z_pred
            white = np.linalg.solve(chol, resid.T)
            maha = np.einsum("ij,ij->j", white, white)
            log_det = 2.0 * float(np.log(np.diag(chol)).sum())
            log_q = -0.5 * maha - 0.5 * log_det - 2.0 * math.log(2.0 * math.pi)
            sim = np.clip(feats @ appearances[idx].feature, 0.0, 1.0)
            p0, p1 = appearances[idx].mode_probs
            mix = p0 * sim**mcfg.appearance_power + p1 * (1.0 - sim) ** mcfg.appearance_power
            admissible = (maha < mcfg.kinematic_gate) | (
                (1.0 - sim) < mcfg.appearance_gate
            )
            with np.errstate(divide="ignore"):
                row = log_q + np.log(mix) - log_kappa
            log_psi[idx] = np.where(admissible & np.isfinite(row), row, -np.inf)

        # lazy posterior track-table construction
        new_table: dict[int, LabeledTrackDensity] = {}
        provenance: dict[int, tuple] = {}
        next_eid = [0]
        miss_eid: dict[int, int] = {}
        det_eid: dict[tuple[int, int], int] = {}

        def alloc(entry: LabeledTrackDensity, origin: tuple) -> int:
            eid = next_eid[0]
            next_eid[0] += 1
            new_table[eid] = entry
            provenance[eid] = origin
            return eid

        def miss_entry(idx: int) -> int:
            if idx not in miss_eid:
                kind, ref = keys[idx]
                if kind == "s":
                    entry = pred[ref]
                    origin = ("miss", ref)
                else:
                    b = births[ref]
                    entry = LabeledTrackDensity(b.label, b.density, b.appearance, -1)
                    origin = ("birth-miss", b.label)
                miss_eid[idx] = alloc(
                    LabeledTrackDensity(entry.label, entry.kinematic,
                                        entry.appearance, entry.last_associated),
                    origin,
                )
            return miss_eid[idx]

        def det_entry(idx: int, j: int) -> int:
            if (idx, j) not in det_eid:
                dens = densities[idx]
                mean = dens.mean + gains[idx] @ (boxes[j] - z_preds[idx])
                kin = GaussianDensity(mean, post_covs[idx])
                app = appearances[idx]
                g0 = float(np.clip(feats[j] @ app.feature, 0.0, 1.0))
                lik0 = g0**mcfg.appearance_power
                lik1 = (1.0 - g0) ** mcfg.appearance_power
                p0 = app.mode_probs[0] * lik0
                p1 = app.mode_probs[1] * lik1
                total = p0 + p1
                modes = np.array([p0 / total, p1 / total]) if total > 0 else app.mode_probs.copy()
                new_app = update_feature(AppearanceState(app.feature.copy(), modes),
                                         feats[j], detected=True)
                kind, ref = keys[idx]
                label = pred[ref].label if kind == "s" else births[ref].label
                origin = ("det", ref, j) if kind == "s" else ("birth-det", label, j)
                det_eid[(idx, j)] = alloc(LabeledTrackDensity(label, kin, new_app, now), origin)
            return det_eid[(idx, j)]

        # per-parent hypothesis generation
        budgets = self._budgets(parents)
        merged: dict[frozenset, dict] = {}
        debug: list[ChildDebug] = []
        p_birth = np.array([b.probability for b in births])
        birth_labels = [b.label for b in births]
        for pidx, parent in enumerate(parents):
            row_keys = [("s", eid) for eid in parent.entries] + [
                ("b", i) for i in range(len(births))
            ]
            row_univ = np.array([key_index[k] for k in row_keys], dtype=int)
            n_rows = len(row_keys)
            if n_rows == 0:
                self._accumulate(merged, frozenset(), parent.log_weight, {}, set())
                if collect_debug:
                    debug.append(ChildDebug(pidx, (), [], parent.log_weight))
                continue
            pd_pseudo = self._detection_probs(row_univ, inter, areas, bottoms, ratios)
            survivors_spec = []
            births_spec = []
            for r, key in enumerate(row_keys):
                kind, ref = key
                idx = row_univ[r]
                psi_z = pd_pseudo[r] * np.exp(log_psi[idx])
                psi_0 = 1.0 - pd_pseudo[r]
                if kind == "s":
                    survivors_spec.append((pred[ref].label, pbar[ref], psi_z, psi_0))
                else:
                    births_spec.append((birth_labels[ref], p_birth[ref], psi_z, psi_0))
            problem = build_cost_matrix(survivors_spec, births_spec)
            solutions = self._solve(problem, budgets[pidx], now, pidx)
            for sol in solutions:
                child_refs: dict[TrackLabel, int] = {}
                det_set: set[int] = set()
                kept_rows = [r for r, o in enumerate(sol.outcomes) if o != DEAD]
                if kept_rows:
                    kept_univ = row_univ[kept_rows]
                    pd_corr = self._detection_probs(kept_univ, inter, areas, bottoms, ratios)
                else:
                    pd_corr = np.zeros(0)
                log_w = parent.log_weight
                for pos, r in enumerate(kept_rows):
                    kind, ref = row_keys[r]
                    idx = row_univ[r]
                    outcome = sol.outcomes[r]
                    presence = pbar[ref] if kind == "s" else p_birth[ref]
                    label = pred[ref].label if kind == "s" else birth_labels[ref]
                    pd = float(pd_corr[pos])
                    if outcome == MISSED:
                        log_w += math.log(presence) + math.log1p(-pd)
                        child_refs[label] = miss_entry(idx)
                    else:
                        j = outcome
                        log_w += math.log(presence) + math.log(pd) + log_psi[idx, j]
                        child_refs[label] = det_entry(idx, j)
                        det_set.add(j)
                for r, o in enumerate(sol.outcomes):
                    if o == DEAD:
                        kind, ref = row_keys[r]
                        presence = pbar[ref] if kind == "s" else p_birth[ref]
                        log_w += math.log1p(-presence)
                key = frozenset(child_refs.items())
                self._accumulate(merged, key, log_w, child_refs, det_set)
                if collect_debug:
                    debug.append(ChildDebug(pidx, sol.outcomes, list(row_keys), log_w))

        # normalise merged children
        if not merged:
            return UpdateResult([Hypothesis(1.0, {})], {}, {frozenset(): set()}, debug)
        log_ws = np.array([m["log_w"] for m in merged.values()])
        log_norm = _logsumexp(log_ws)
        children = []
        detections_by_key = {}
        for (key, m), lw in zip(merged.items(), log_ws):
            children.append(Hypothesis(float(np.exp(lw - log_norm)), m["refs"]))
            detections_by_key[key] = m["dets"]
        used = {eid for h in children for eid in h.track_refs.values()}
        table = {eid: new_table[eid] for eid in used}
        self.last_provenance = provenance
        return UpdateResult(children, table, detections_by_key, debug)

    # -- helpers -----------------------------------------------------------

    def _budgets(self, parents: list[Parent]) -> list[int]:
        if not parents:
            return []
        weights = np.exp([p.log_weight for p in parents])
        weights = weights / weights.sum()
        shares = np.sqrt(weights)
        shares = shares / shares.sum()
        return [max(1, int(round(self.cfg.hypothesis_cap * s))) for s in shares]

    def _detection_probs(self, univ_idx, inter, areas, bottoms, ratios) -> np.ndarray:
        sub_inter = inter[np.ix_(univ_idx, univ_idx)]
        sub_max_ioa = max_ioa_from_matrix(sub_inter, areas[univ_idx], bottoms[univ_idx])
        return self.fuzzy.query(sub_max_ioa, ratios[univ_idx])

    def _solve(self, problem, budget: int, now: int, parent_idx: int) -> list[AssignmentSolution]:
        cfg = self.cfg
        n_rows, n_meas = problem.n_rows, problem.n_measurements
        use_gibbs = cfg.solver == "gibbs" or (
            cfg.solver == "auto" and n_rows * n_meas > cfg.murty_limit
        )
        if use_gibbs:
            sweeps = min(cfg.gibbs_factor * budget, cfg.gibbs_cap)
            seed = _mix_seed(cfg.seed, now, parent_idx)
            return assignment_mod.gibbs_sample(problem, max(1, sweeps), seed)
        return assignment_mod.murty_kbest(problem, budget)

    @staticmethod
    def _accumulate(merged: dict, key: frozenset, log_w: float, refs: dict, dets: set) -> None:
        slot = merged.get(key)
        if slot is None:
            merged[key] = {"log_w": log_w, "refs": refs, "dets": dets}
        else:
            slot["log_w"] = np.logaddexp(slot["log_w"], log_w)


def _logsumexp(values: np.ndarray) -> float:
    m = float(np.max(values))
    if not np.isfinite(m):
        return m
    return m + float(np.log(np.sum(np.exp(values - m))))


# -- the online filter -----------------------------------------------------------


class GlmbFilter:
    """Online multi-object tracker propagating a GLMB posterior.

    Drives the joint update, hypothesis pruning, the MAP-cardinality
    estimator, adaptive birth and TT-track recall.  One instance owns all
    mutable state; frames are processed strictly in order.
    """

    def __init__(self, cfg: RunConfig | None = None, collect_debug: bool = False):
        self.cfg = cfg or RunConfig()
        self.fuzzy = FuzzyDetectionModel(self.cfg.fuzzy)
        self.engine = JointUpdateEngine(self.cfg, self.fuzzy)
        self.density = empty_density()
        self.tt_memory = {}
        self.pending_births: list[BirthCandidate] = []
        self.avg_area = 1.0
        self.confirmed: set[TrackLabel] = set()
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

        parents = [
            Parent(math.log(max(h.weight, 1e-300)), sorted(h.track_refs.values(),
                   key=lambda e: self.density.track_table[e].label))
            for h in self.density.hypotheses
        ]
        # remember prior features so tracks dying in every child can still be recalled
        prior_feature: dict[TrackLabel, np.ndarray] = {}
        for h in sorted(self.density.hypotheses, key=lambda h: -h.weight):
            for label, eid in h.track_refs.items():
                if label not in prior_feature:
                    prior_feature[label] = self.density.track_table[eid].appearance.feature
        result = self.engine.update(
            self.density.track_table, parents, births, measurements, now,
            self.avg_area, collect_debug=self.collect_debug,
        )
        if self.collect_debug:
            self.debug = result

        raw = GlmbDensity(result.children, result.table)
        pruned, vanished = normalize_prune(raw, cfg.hypothesis_cap, cfg.weight_floor)
        # tracks absent from every kept hypothesis enter the recall memory;
        # normalize_prune reports the ones present before pruning, the rest
        # (dead in all children / unselected births) fall back to their last
        # known feature.  Only identities that were ever emitted are stored:
        # recalling a track the output never saw cannot preserve continuity,
        # it only creates aliases that compete with the real identity.
        kept_labels = pruned.all_labels()
        reported = {label for label, _ in vanished}
        lost = [(label, feat) for label, feat in vanished if label in self.confirmed]
        for b in births:
            if b.label not in kept_labels and b.label not in reported:
                reported.add(b.label)
                if b.label in self.confirmed:
                    lost.append((b.label, b.appearance.feature))
        for label, feature in prior_feature.items():
            if label not in kept_labels and label not in reported:
                reported.add(label)
                if label in self.confirmed:
                    lost.append((label, feature))
        self.tt_memory = store_and_expire(lost, self.tt_memory, now, cfg.birth)
        self.density = pruned

        weights_and_dets = []
        for h in pruned.hypotheses:
            weights_and_dets.append((h.weight, result.detections_by_key.get(h.key(), set())))
        total = sum(w for w, _ in weights_and_dets)
        if total > 0:
            weights_and_dets = [(w / total, d) for w, d in weights_and_dets]
        r_u = measurement_assoc_prob(weights_and_dets, len(measurements))
        self.last_assoc_prob = r_u
        self.pending_births, self.tt_memory = make_birth_candidates(
            measurements, r_u, self.tt_memory, cfg.birth, now + 1, self.recall_log
        )

        estimates = estimate(self.density, cfg.survival.min_aspect)
        if estimates:
            self.confirmed.update(label for label, _ in estimates)
            areas = [st[4] ** 2 / st[6] for _, st in estimates]
            self.avg_area = float(np.mean(areas))
        return estimates
