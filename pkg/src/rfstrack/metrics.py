"""Tracking evaluation: GIoU base distance, OSPA between sets, OSPA(2) between track sets.

Boxes are [x_left, y_top, width, height].  A track is a mapping from frame
index to box; OSPA(2) applies the OSPA construction twice, first over time to
get a base distance between two tracks, then across the two sets of tracks.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .assignment import solve_assignment
from .dynamics import ModelError


@dataclass(frozen=True)
class OspaConfig:
    cutoff: float = 1.0
    order: float = 1.0

    def __post_init__(self):
        if self.cutoff <= 0:
            raise ModelError("cutoff must be positive")
        if self.order < 1:
            raise ModelError("order must be at least 1")


@dataclass
class TrackRecord:
    """One track: an opaque identity and one box per frame in its domain."""

    identity: object
    boxes: dict[int, np.ndarray] = field(default_factory=dict)

    def add(self, frame: int, box) -> None:
        self.boxes[frame] = np.asarray(box, dtype=float)

    @property
    def domain(self) -> set[int]:
        return set(self.boxes)


def giou_distance(box_a, box_b) -> float:
    """1 - GIoU; zero for identical boxes, approaches 2 for distant ones."""
    ax, ay, aw, ah = (float(v) for v in box_a)
    bx, by, bw, bh = (float(v) for v in box_b)
    if aw <= 0 or ah <= 0 or bw <= 0 or bh <= 0:
        raise ModelError("boxes must have positive area")
    iw = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    ih = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = iw * ih
    union = aw * ah + bw * bh - inter
    hull_w = max(ax + aw, bx + bw) - min(ax, bx)
    hull_h = max(ay + ah, by + bh) - min(ay, by)
    hull = hull_w * hull_h
    giou = inter / union - (hull - union) / hull
    return 1.0 - giou


def ospa(set_x, set_y, base_distance, cfg: OspaConfig) -> float:
    """Optimal-subpattern-assignment distance between two finite sets."""
    value, _, _ = ospa_components(set_x, set_y, base_distance, cfg)
    return value


def ospa_components(set_x, set_y, base_distance, cfg: OspaConfig) -> tuple[float, float, float]:
    """OSPA distance plus its localisation / cardinality split.

    Returns (total, localisation, cardinality) where total**p equals the sum
    of the component p-th powers.
    """
    x = list(set_x)
    y = list(set_y)
    if not x and not y:
        return 0.0, 0.0, 0.0
    if not x or not y:
        return cfg.cutoff, 0.0, cfg.cutoff
    if len(x) > len(y):
        x, y = y, x
    m, n = len(x), len(y)
    c, p = cfg.cutoff, cfg.order
    costs = np.empty((m, n))
    for i, xi in enumerate(x):
        for j, yj in enumerate(y):
            costs[i, j] = min(c, base_distance(xi, yj)) ** p
    _, matched = solve_assignment(costs)
    loc_term = matched / n
    card_term = (c**p) * (n - m) / n
    total = (loc_term + card_term) ** (1.0 / p)
    return total, loc_term ** (1.0 / p), card_term ** (1.0 / p)


def track_base_distance(f: TrackRecord, g: TrackRecord, cfg: OspaConfig) -> float:
    """Time-averaged per-frame OSPA between two tracks over their joint domain.

    Frames where exactly one track exists contribute the cutoff; frames where
    both exist contribute the cut-off GIoU distance of their boxes.
    """
    frames = f.domain | g.domain
    if not frames:
        return 0.0
    c = cfg.cutoff
    total = 0.0
    for t in frames:
        in_f, in_g = t in f.boxes, t in g.boxes
        if in_f and in_g:
            total += min(c, giou_distance(f.boxes[t], g.boxes[t]))
        else:
            total += c
    return total / len(frames)


def ospa2(
    ground: list[TrackRecord],
    hypothesis: list[TrackRecord],
    cfg: OspaConfig,
    window: tuple[int, int] | None = None,
) -> tuple[float, float, float]:
    """OSPA over sets of tracks with the time-averaged track distance as base.

    Optionally restricts both sides to frames within ``window`` (inclusive).
    Returns (total, localisation, cardinality).
    """
    if window is not None:
        lo, hi = window
        ground = [_restrict(t, lo, hi) for t in ground]
        hypothesis = [_restrict(t, lo, hi) for t in hypothesis]
        ground = [t for t in ground if t.boxes]
        hypothesis = [t for t in hypothesis if t.boxes]
    return ospa_components(
        ground, hypothesis, lambda f, g: track_base_distance(f, g, cfg), cfg
    )


def _restrict(track: TrackRecord, lo: int, hi: int) -> TrackRecord:
    return TrackRecord(track.identity, {t: b for t, b in track.boxes.items() if lo <= t <= hi})
