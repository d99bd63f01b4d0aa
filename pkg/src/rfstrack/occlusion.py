"""Occlusion geometry and the fuzzy detection-probability model.

Boxes here are axis-aligned rectangles [x_left, y_top, width, height] in image
coordinates (y grows downward).  A box whose bottom edge is lower is closer to
the camera and can occlude boxes behind it.

The detection probability is produced by a Mamdani-style fuzzy system over two
inputs, the maximum occluded fraction (IoA) and the object's area relative to
the scene average, each described by low/medium/high fuzzy sets.  Inference
uses min conjunction, max aggregation and centroid defuzzification.  For the
filter hot path the inference surface is precomputed on a lookup grid and
queried with bilinear interpolation; direct inference stays available.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .dynamics import ModelError, TrackLabel

# rule tables: rows indexed by area-ratio set (L, M, H), columns by IoA set.
RULE_TABLES: dict[str, tuple[tuple[str, str, str], ...]] = {
    "R1": (("M", "L", "L"), ("M", "M", "L"), ("H", "H", "L")),
    "R2": (("M", "L", "L"), ("H", "M", "L"), ("H", "H", "M")),
    "R3": (("M", "M", "L"), ("M", "M", "L"), ("H", "H", "M")),
    "R4": (("L", "H", "H"), ("L", "L", "H"), ("L", "L", "H")),
    "R5": (("M", "H", "M"), ("L", "L", "H"), ("L", "L", "H")),
}


def ioa(box_a: Sequence[float], box_b: Sequence[float]) -> float:
    """Fraction of box_a covered by box_b (intersection over box_a's area)."""
    ax, ay, aw, ah = (float(v) for v in box_a)
    bx, by, bw, bh = (float(v) for v in box_b)
    if aw <= 0 or ah <= 0 or bw <= 0 or bh <= 0:
        raise ModelError("boxes must have positive area")
    iw = min(ax + aw, bx + bw) - max(ax, bx)
    ih = min(ay + ah, by + bh) - max(ay, by)
    if iw <= 0 or ih <= 0:
        return 0.0
    return (iw * ih) / (aw * ah)


def max_ioa(boxes: Iterable[tuple[TrackLabel, Sequence[float]]]) -> dict[TrackLabel, float]:
    """Largest fraction of each box covered by a box closer to the camera.

    Only boxes with a strictly lower bottom edge (larger y_top + height) count
    as occluders, so equal-bottom boxes never occlude each other.
    """
    items = [(label, np.asarray(box, dtype=float)) for label, box in boxes]
    out: dict[TrackLabel, float] = {label: 0.0 for label, _ in items}
    bottoms = {label: box[1] + box[3] for label, box in items}
    for label, box in items:
        best = 0.0
        for other_label, other in items:
            if other_label == label or bottoms[other_label] <= bottoms[label]:
                continue
            best = max(best, ioa(box, other))
        out[label] = best
    return out


def area_ratio(areas: Sequence[float]) -> list[float]:
    """Per-object area relative to the mean area, capped at 2."""
    areas = [float(a) for a in areas]
    if not areas:
        return []
    if any(a <= 0 for a in areas):
        raise ModelError("areas must be positive")
    total = sum(areas)
    n = len(areas)
    return [min(2.0, n * a / total) for a in areas]


def intersection_matrix(boxes: np.ndarray) -> np.ndarray:
    """Pairwise intersection areas for an (n, 4) array of [x, y, w, h] boxes."""
    x0 = boxes[:, 0]
    y0 = boxes[:, 1]
    x1 = boxes[:, 0] + boxes[:, 2]
    y1 = boxes[:, 1] + boxes[:, 3]
    iw = np.minimum(x1[:, None], x1[None, :]) - np.maximum(x0[:, None], x0[None, :])
    ih = np.minimum(y1[:, None], y1[None, :]) - np.maximum(y0[:, None], y0[None, :])
    return np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)


def max_ioa_from_matrix(inter: np.ndarray, areas: np.ndarray, bottoms: np.ndarray) -> np.ndarray:
    """max_ioa over a precomputed intersection matrix (vectorised form)."""
    n = len(areas)
    if n == 0:
        return np.zeros(0)
    occludes = bottoms[None, :] > bottoms[:, None]  # [i, j]: j is closer than i
    covered = np.where(occludes, inter, 0.0)
    np.fill_diagonal(covered, 0.0)
    return covered.max(axis=1) / areas


@dataclass(frozen=True)
class FuzzyConfig:
    """Membership breakpoints, rule table and output bounds of the fuzzy model.

    Input breakpoints are expressed on the normalised [0, 1] range of each
    input: low is 1 up to low[0] and falls to 0 at low[1]; mid is a triangle;
    high rises from high[0] to 1 at high[1] and saturates.  Output sets are
    symmetric triangles given by their peaks (normalised) and a common half
    width; symmetry keeps each clipped set's centroid fixed at its peak, which
    is what makes the inferred surface monotone in its inputs.
    """

    rule: str = "R1"
    p_min: float = 0.2
    p_max: float = 0.95
    area_ratio_max: float = 2.0
    input_low: tuple[float, float] = (0.05, 0.5)
    input_mid: tuple[float, float, float] = (0.05, 0.5, 0.95)
    input_high: tuple[float, float] = (0.5, 0.95)
    output_peaks: tuple[float, float, float] = (0.05, 0.38, 0.95)
    output_halfwidth: float = 0.6
    grid_size: int = 201
    use_lookup: bool = True

    def __post_init__(self):
        if not 0.0 < self.p_min < self.p_max < 1.0:
            raise ModelError("need 0 < p_min < p_max < 1")
        if self.rule not in RULE_TABLES:
            raise ModelError(f"unknown rule table {self.rule!r}; choose from {sorted(RULE_TABLES)}")
        if self.grid_size < 3:
            raise ModelError("grid_size must be at least 3")
        if not 0.0 <= self.output_peaks[0] < self.output_peaks[1] < self.output_peaks[2] <= 1.0:
            raise ModelError("output peaks must be increasing within [0, 1]")
        if not _covers_unit_range(
            lambda x: _shoulder_low(x, *self.input_low),
            lambda x: _triangle(x, *self.input_mid),
            lambda x: _shoulder_high(x, *self.input_high),
        ):
            raise ModelError("input fuzzy sets leave part of [0, 1] uncovered")
        if not _covers_unit_range(*(self.output_membership(lv) for lv in "LMH")):
            raise ModelError("output fuzzy sets leave part of [0, 1] uncovered")

    def output_membership(self, level: str):
        peak = self.output_peaks["LMH".index(level)]
        w = self.output_halfwidth
        return lambda x, p=peak: _triangle(x, p - w, p, p + w)


def _covers_unit_range(*memberships) -> bool:
    xs = np.linspace(0.0, 1.0, 501)
    m = np.zeros_like(xs)
    for f in memberships:
        m = np.maximum(m, f(xs))
    return bool((m > 0.0).all())


def _shoulder_low(x, flat_end, zero_at):
    x = np.asarray(x, dtype=float)
    return np.clip((zero_at - x) / (zero_at - flat_end), 0.0, 1.0)


def _triangle(x, left, peak, right):
    x = np.asarray(x, dtype=float)
    up = (x - left) / (peak - left) if peak > left else np.where(x >= peak, 1.0, 0.0)
    down = (right - x) / (right - peak) if right > peak else np.where(x <= peak, 1.0, 0.0)
    return np.clip(np.minimum(up, down), 0.0, 1.0)


def _shoulder_high(x, zero_at, flat_start):
    x = np.asarray(x, dtype=float)
    return np.clip((x - zero_at) / (flat_start - zero_at), 0.0, 1.0)


def _input_memberships(x, cfg: FuzzyConfig):
    return (
        _shoulder_low(x, *cfg.input_low),
        _triangle(x, *cfg.input_mid),
        _shoulder_high(x, *cfg.input_high),
    )


class FuzzyDetectionModel:
    """Detection probability from (max IoA, area ratio) via fuzzy inference.

    Pipeline: fuzzify both inputs against L/M/H sets, fire the nine table
    rules with product conjunction, scale each rule's output set by its
    firing strength (Larsen implication), aggregate additively and defuzzify
    by centroid.  Because the output sets are congruent symmetric triangles,
    a set scaled by strength s has area proportional to s and centroid at its
    peak, so the defuzzified value has the closed form
    sum(s_i * peak_i) / sum(s_i).  With the default partition-of-unity input
    sets this is a bilinear blend of the rule consequents, which keeps the
    surface exactly monotone wherever the rule table is.

    Instances are immutable after construction; queries are read-only and
    safe to issue concurrently.  ``query`` uses the bilinear lookup grid when
    enabled, ``infer`` always runs direct inference.
    """

    def __init__(self, cfg: FuzzyConfig | None = None):
        self.cfg = cfg or FuzzyConfig()
        self._table = RULE_TABLES[self.cfg.rule]
        self._lut: np.ndarray | None = None
        if self.cfg.use_lookup:
            self._lut = self._build_lookup()

    # -- direct inference ------------------------------------------------

    def infer(self, max_ioa_value: float, ratio_value: float) -> float:
        """Direct inference for a single (max IoA, area ratio) pair."""
        ioa_n = min(max(float(max_ioa_value), 0.0), 1.0)
        ratio_n = min(max(float(ratio_value) / self.cfg.area_ratio_max, 0.0), 1.0)
        ioa_mu = np.array(_input_memberships(ioa_n, self.cfg), dtype=float)
        ratio_mu = np.array(_input_memberships(ratio_n, self.cfg), dtype=float)
        mass = np.zeros(3)
        for r in range(3):
            for c in range(3):
                mass["LMH".index(self._table[r][c])] += ratio_mu[r] * ioa_mu[c]
        total = float(mass.sum())
        centroid = 0.5 if total <= 0.0 else float(mass @ np.asarray(self.cfg.output_peaks)) / total
        return self.cfg.p_min + centroid * (self.cfg.p_max - self.cfg.p_min)

    # -- lookup path -------------------------------------------------------

    def _build_lookup(self) -> np.ndarray:
        n = self.cfg.grid_size
        ioa_mu = np.stack(_input_memberships(np.linspace(0.0, 1.0, n), self.cfg))
        ratio_mu = np.stack(_input_memberships(np.linspace(0.0, 1.0, n), self.cfg))
        mass = np.zeros((3, n, n))
        for r in range(3):
            for c in range(3):
                lv = "LMH".index(self._table[r][c])
                mass[lv] += ratio_mu[r][None, :] * ioa_mu[c][:, None]
        total = mass.sum(axis=0)
        peaks = np.asarray(self.cfg.output_peaks)
        centroid = np.where(total > 0.0,
                            np.tensordot(peaks, mass, axes=1) / np.maximum(total, 1e-300),
                            0.5)
        return self.cfg.p_min + centroid * (self.cfg.p_max - self.cfg.p_min)

    def query(self, max_ioa_values, ratio_values) -> np.ndarray:
        """Vectorised detection probabilities (bilinear lookup when enabled)."""
        x = np.atleast_1d(np.asarray(max_ioa_values, dtype=float))
        r = np.atleast_1d(np.asarray(ratio_values, dtype=float))
        if self._lut is None:
            return np.array([self.infer(xi, ri) for xi, ri in zip(x, r)])
        n = self.cfg.grid_size
        xi = np.clip(x, 0.0, 1.0) * (n - 1)
        ri = np.clip(r / self.cfg.area_ratio_max, 0.0, 1.0) * (n - 1)
        x0 = np.clip(xi.astype(int), 0, n - 2)
        r0 = np.clip(ri.astype(int), 0, n - 2)
        fx = xi - x0
        fr = ri - r0
        lut = self._lut
        top = lut[x0, r0] * (1 - fr) + lut[x0, r0 + 1] * fr
        bot = lut[x0 + 1, r0] * (1 - fr) + lut[x0 + 1, r0 + 1] * fr
        return top * (1 - fx) + bot * fx

    def query(self, max_ioa_values, ratio_values) -> np.ndarray:
        """Vectorised detection probabilities (bilinear lookup when enabled)."""
        x = np.atleast_1d(np.asarray(max_ioa_values, dtype=float))
        r = np.atleast_1d(np.asarray(ratio_values, dtype=float))
        if self._lut is None:
            return np.array([self.infer(xi, ri) for xi, ri in zip(x, r)])
        n = self.cfg.grid_size
        xi = np.clip(x, 0.0, 1.0) * (n - 1)
        ri = np.clip(r / self.cfg.area_ratio_max, 0.0, 1.0) * (n - 1)
        x0 = np.clip(xi.astype(int), 0, n - 2)
        r0 = np.clip(ri.astype(int), 0, n - 2)
        fx = xi - x0
        fr = ri - r0
        lut = self._lut
        top = lut[x0, r0] * (1 - fr) + lut[x0, r0 + 1] * fr
        bot = lut[x0 + 1, r0] * (1 - fr) + lut[x0 + 1, r0 + 1] * fr
        return top * (1 - fx) + bot * fx
