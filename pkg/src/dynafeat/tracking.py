"""Carrying group information across frames.

Each tracked group owns a motion proxy (the displacement of its centroid
between the last two frames) and a search region: its bounding box shifted
by the predicted displacement and dilated by a margin. Current-frame
groups whose bounding box overlaps a search region become matching
candidates, which is what keeps per-frame matching cheap. Groups without
an accepted match are dropped; newly appearing groups start without a
proxy and predict from a standing centroid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .frontend import FrameFeatures
from .grouping import FeatureGroup
from .matching import GroupMatch

DEFAULT_SEARCH_MARGIN = 30.0
BOOTSTRAP_MARGIN_SCALE = 2.0


@dataclass
class MotionProxy:
    displacement: np.ndarray   # (2,) px per frame
    age: int                   # frames tracked continuously

    def __post_init__(self):
        self.displacement = np.asarray(self.displacement, np.float64).reshape(2)
        if not np.isfinite(self.displacement).all():
            raise ValueError("displacement must be finite")
        if self.age < 0:
            raise ValueError("age must be non-negative")


@dataclass
class SearchRegion:
    center: np.ndarray         # (2,) predicted centroid
    half_extent: np.ndarray    # (2,) axis-aligned half sizes

    def __post_init__(self):
        self.center = np.asarray(self.center, np.float64).reshape(2)
        self.half_extent = np.asarray(self.half_extent, np.float64).reshape(2)
        if (self.half_extent <= 0).any():
            raise ValueError("half_extent components must be positive")


@dataclass
class TrackState:
    frame_index: int
    features: FrameFeatures
    groups: list[FeatureGroup]
    proxies: dict[int, MotionProxy]      # keyed by group_id, absent when unknown
    regions: dict[int, SearchRegion]     # keyed by group_id, one per group


def predict_search_region(group: FeatureGroup, proxy: MotionProxy | None,
                          margin: float = DEFAULT_SEARCH_MARGIN) -> SearchRegion:
    """Constant-velocity prediction: centroid shifted by the proxy (zero for
    newborn groups), bounding-box half sizes dilated by the margin."""
    if margin <= 0:
        raise ValueError("margin must be positive")
    shift = proxy.displacement if proxy is not None else np.zeros(2)
    half = (group.bbox_max - group.bbox_min) / 2.0 + margin
    return SearchRegion(center=group.centroid + shift, half_extent=half)


def _regions_for(groups: list[FeatureGroup], proxies: dict[int, MotionProxy],
                 margin: float) -> dict[int, SearchRegion]:
    return {g.group_id: predict_search_region(g, proxies.get(g.group_id), margin)
            for g in groups}


def bootstrap(features: FrameFeatures, groups: list[FeatureGroup],
              margin: float = DEFAULT_SEARCH_MARGIN) -> TrackState:
    """First-frame state: no proxies yet, so regions get a doubled margin
    to make up for the missing motion prior."""
    return TrackState(frame_index=features.frame_index, features=features,
                      groups=list(groups), proxies={},
                      regions=_regions_for(groups, {}, margin * BOOTSTRAP_MARGIN_SCALE))


def recompute_regions(state: TrackState, margin: float) -> TrackState:
    """Same state with regions re-dilated (used after a skipped frame)."""
    return TrackState(frame_index=state.frame_index, features=state.features,
                      groups=state.groups, proxies=state.proxies,
                      regions=_regions_for(state.groups, state.proxies, margin))


def intersect_candidates(groups_curr: list[FeatureGroup],
                         state: TrackState) -> list[tuple[int, int]]:
    """(prev_group_id, curr_group_id) pairs whose search region and bounding
    box overlap (closed intervals on both axes)."""
    if not state.groups or not groups_curr:
        return []
    centers = np.stack([state.regions[g.group_id].center for g in state.groups])
    halves = np.stack([state.regions[g.group_id].half_extent for g in state.groups])
    lo = centers - halves
    hi = centers + halves
    bmin = np.stack([g.bbox_min for g in groups_curr])
    bmax = np.stack([g.bbox_max for g in groups_curr])
    overlap = ((bmin[None, :, 0] <= hi[:, None, 0]) & (bmax[None, :, 0] >= lo[:, None, 0])
               & (bmin[None, :, 1] <= hi[:, None, 1]) & (bmax[None, :, 1] >= lo[:, None, 1]))
    prev_ids = [g.group_id for g in state.groups]
    curr_ids = [g.group_id for g in groups_curr]
    rows, cols = np.nonzero(overlap)
    return [(prev_ids[r], curr_ids[c]) for r, c in zip(rows.tolist(), cols.tolist())]


def advance(state: TrackState, features_curr: FrameFeatures,
            groups_curr: list[FeatureGroup], accepted: list[GroupMatch],
            margin: float = DEFAULT_SEARCH_MARGIN) -> TrackState:
    """Fold accepted matches into the next state.

    Each current group inherits a proxy from its best-scoring accepted
    partner: displacement is the centroid difference, age increments.
    Score ties go to the pair with the smaller total support distance
    (uncorrelated groups can tie a true pair's support count by chance,
    but never its distances), then to the lower previous group id.
    Unmatched current groups start fresh; previous groups without an
    accepted match disappear with the returned state.
    """
    prev_by_id = {g.group_id: g for g in state.groups}
    curr_by_id = {g.group_id: g for g in groups_curr}
    best: dict[int, GroupMatch] = {}
    cost: dict[int, float] = {}
    for gm in accepted:
        if gm.group_prev not in prev_by_id or gm.group_curr not in curr_by_id:
            raise ValueError(
                f"accepted match ({gm.group_prev}, {gm.group_curr}) references unknown groups")
        dist_sum = float(gm.sup_dist.sum()) if gm.sup_dist.size else 0.0
        cur = best.get(gm.group_curr)
        if cur is None or (-gm.score, dist_sum, gm.group_prev) \
                < (-cur.score, cost[gm.group_curr], cur.group_prev):
            best[gm.group_curr] = gm
            cost[gm.group_curr] = dist_sum
    proxies: dict[int, MotionProxy] = {}
    for gc in groups_curr:
        gm = best.get(gc.group_id)
        if gm is None:
            continue
        gp = prev_by_id[gm.group_prev]
        prev_proxy = state.proxies.get(gp.group_id)
        prev_age = prev_proxy.age if prev_proxy is not None else 0
        proxies[gc.group_id] = MotionProxy(displacement=gc.centroid - gp.centroid,
                                           age=prev_age + 1)
    return TrackState(frame_index=features_curr.frame_index, features=features_curr,
                      groups=list(groups_curr), proxies=proxies,
                      regions=_regions_for(groups_curr, proxies, margin))
