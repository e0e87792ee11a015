"""Cross-check matching between group pairs and support-count acceptance.

A candidate group pair is scored by its mutual nearest-neighbor matches
(each feature must be the other's unique nearest neighbor; distance ties
disqualify). The pair is accepted when the support count strictly exceeds
k * sqrt(n_eff) with n_eff the smaller group size, and only accepted pairs
emit feature matches. A feature caught by several overlapping accepted
pairs keeps the match from the highest-scoring one.

All candidate pairs of a frame transition are scored in one batched
kernel call; support lists on GroupMatch are materialized lazily from the
shared flat arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .frontend import FrameFeatures
from .grouping import FeatureGroup
from .stats import support_threshold


@dataclass(slots=True)
class MatchCandidate:
    feature_a: int      # feature id in the earlier frame
    feature_b: int      # feature id in the later frame
    distance: float


@dataclass(eq=False)
class GroupMatch:
    group_prev: int
    group_curr: int
    score: int
    tau: float
    accepted: bool
    sup_a: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0, np.int64))
    sup_b: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0, np.int64))
    sup_dist: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0, np.int64))

    @property
    def supports(self) -> list[MatchCandidate]:
        return [MatchCandidate(int(a), int(b), float(d))
                for a, b, d in zip(self.sup_a, self.sup_b, self.sup_dist)]


@dataclass(slots=True)
class InlierMatch:
    feature_prev: int
    feature_curr: int
    x1: float
    y1: float
    x2: float
    y2: float
    distance: float
    group_prev: int
    group_curr: int


def _descriptor_matrix(features) -> np.ndarray:
    if isinstance(features, FrameFeatures):
        return features.descriptors
    if isinstance(features, np.ndarray):
        return features
    # sequence of Feature objects
    return np.stack([np.asarray(f.descriptor, np.uint8) for f in features])


def _select_mutual(best_j, dist_a, ties_a, best_i, dist_b, ties_b):
    rows = np.arange(best_j.shape[0])
    ok = (ties_a == 1) & (ties_b[best_j] == 1) & (best_i[best_j] == rows)
    idx = np.nonzero(ok)[0]
    return idx, best_j[idx], dist_a[idx]


def _mutual_pairs_euclidean(desc_a: np.ndarray, desc_b: np.ndarray):
    d = np.sqrt(((desc_a[:, None, :] - desc_b[None, :, :]) ** 2).sum(axis=2))
    best_j = d.argmin(axis=1)
    dist_a = d[np.arange(d.shape[0]), best_j]
    ties_a = (d == dist_a[:, None]).sum(axis=1)
    best_i = d.argmin(axis=0)
    dist_b = d[best_i, np.arange(d.shape[1])]
    ties_b = (d == dist_b[None, :]).sum(axis=0)
    return _select_mutual(best_j, dist_a, ties_a, best_i, dist_b, ties_b)


def _mutual_pairs(desc_a: np.ndarray, desc_b: np.ndarray, metric: str):
    if desc_a.shape[0] == 0 or desc_b.shape[0] == 0:
        raise ValueError("descriptor sets must be non-empty")
    if metric == "hamming":
        if desc_a.dtype != np.uint8 or desc_b.dtype != np.uint8:
            raise ValueError("hamming metric needs packed uint8 descriptors")
        return _select_mutual(*_kernels.mutual_nn_hamming(desc_a, desc_b))
    if metric == "euclidean":
        if not np.issubdtype(desc_a.dtype, np.floating) \
                or not np.issubdtype(desc_b.dtype, np.floating):
            raise ValueError("euclidean metric needs floating-point descriptors")
        return _mutual_pairs_euclidean(desc_a, desc_b)
    raise ValueError(f"unknown metric {metric!r}")


def mutual_nn_match(features_prev, features_curr, metric: str = "hamming") -> list[MatchCandidate]:
    """Mutual unique-nearest-neighbor pairs between two feature sets.

    Accepts FrameFeatures, a descriptor matrix, or a sequence of Feature;
    returned ids index into the given sequences.
    """
    desc_a = _descriptor_matrix(features_prev)
    desc_b = _descriptor_matrix(features_curr)
    ia, ib, dist = _mutual_pairs(desc_a, desc_b, metric)
    return [MatchCandidate(int(a), int(b), float(d)) for a, b, d in zip(ia, ib, dist)]


def score_group_pair(group_prev: FeatureGroup, features_prev: FrameFeatures,
                     group_curr: FeatureGroup, features_curr: FrameFeatures,
                     k: float = 2.0, metric: str = "hamming") -> GroupMatch:
    """Score one candidate pair; ids in the supports are frame feature ids."""
    ia, ib, dist = _mutual_pairs(features_prev.descriptors[group_prev.members],
                                 features_curr.descriptors[group_curr.members],
                                 metric)
    n_eff = min(group_prev.n, group_curr.n)
    tau = support_threshold(n_eff, k)
    score = int(ia.size)
    return GroupMatch(group_prev.group_id, group_curr.group_id, score, tau,
                      score > tau, sup_a=group_prev.members[ia],
                      sup_b=group_curr.members[ib],
                      sup_dist=np.asarray(dist))


def score_candidate_pairs(groups_prev: list[FeatureGroup], features_prev: FrameFeatures,
                          groups_curr: list[FeatureGroup], features_curr: FrameFeatures,
                          candidate_pairs, k: float = 2.0,
                          metric: str = "hamming") -> list[GroupMatch]:
    """Score every candidate (prev_id, curr_id) pair; keep accepted ones.

    Pairs are scored independently; rejected pairs are dropped here since
    they emit nothing downstream.
    """
    candidate_pairs = list(candidate_pairs)
    if not candidate_pairs:
        return []
    prev_by_id = {g.group_id: g for g in groups_prev}
    curr_by_id = {g.group_id: g for g in groups_curr}
    for gp_id, gc_id in candidate_pairs:
        if gp_id not in prev_by_id or gc_id not in curr_by_id:
            raise ValueError(f"candidate pair ({gp_id}, {gc_id}) references unknown groups")

    if metric != "hamming":
        accepted = []
        for gp_id, gc_id in candidate_pairs:
            gm = score_group_pair(prev_by_id[gp_id], features_prev,
                                  curr_by_id[gc_id], features_curr, k, metric)
            if gm.accepted:
                accepted.append(gm)
        return accepted

    # one batched kernel call over all pairs
    slot_prev = {g.group_id: s for s, g in enumerate(groups_prev)}
    slot_curr = {g.group_id: s for s, g in enumerate(groups_curr)}
    cnt_a = np.array([g.n for g in groups_prev], np.int64)
    cnt_b = np.array([g.n for g in groups_curr], np.int64)
    off_a = np.zeros(len(groups_prev), np.int64)
    np.cumsum(cnt_a[:-1], out=off_a[1:])
    off_b = np.zeros(len(groups_curr), np.int64)
    np.cumsum(cnt_b[:-1], out=off_b[1:])
    mem_a = (np.concatenate([g.members for g in groups_prev])
             if groups_prev else np.zeros(0, np.int64))
    mem_b = (np.concatenate([g.members for g in groups_curr])
             if groups_curr else np.zeros(0, np.int64))
    pair_a = np.array([slot_prev[p] for p, _ in candidate_pairs], np.int64)
    pair_b = np.array([slot_curr[c] for _, c in candidate_pairs], np.int64)

    scores, out_off, ia, ib, dist = _kernels.batch_mutual_nn(
        features_prev.descriptors, features_curr.descriptors,
        mem_a, off_a, cnt_a, mem_b, off_b, cnt_b, pair_a, pair_b)

    n_eff = np.minimum(cnt_a[pair_a], cnt_b[pair_b])
    taus = k * np.sqrt(n_eff)
    accepted_idx = np.nonzero(scores > taus)[0]
    accepted: list[GroupMatch] = []
    for p in accepted_idx:
        start = int(out_off[p])
        stop = start + int(scores[p])
        gp_id, gc_id = candidate_pairs[p]
        accepted.append(GroupMatch(gp_id, gc_id, int(scores[p]), float(taus[p]), True,
                                   sup_a=ia[start:stop], sup_b=ib[start:stop],
                                   sup_dist=dist[start:stop]))
    return accepted


@dataclass(eq=False)
class InlierColumns:
    """Deduplicated inlier matches of one transition as column arrays."""

    feature_prev: np.ndarray
    feature_curr: np.ndarray
    pos_prev: np.ndarray     # (n, 2)
    pos_curr: np.ndarray     # (n, 2)
    distance: np.ndarray
    group_prev: np.ndarray
    group_curr: np.ndarray

    def __len__(self) -> int:
        return self.feature_prev.shape[0]

    def to_matches(self) -> list[InlierMatch]:
        return [InlierMatch(int(a), int(b), float(p[0]), float(p[1]),
                            float(q[0]), float(q[1]), float(d), int(gp), int(gc))
                for a, b, p, q, d, gp, gc
                in zip(self.feature_prev.tolist(), self.feature_curr.tolist(),
                       self.pos_prev.tolist(), self.pos_curr.tolist(),
                       self.distance.tolist(), self.group_prev.tolist(),
                       self.group_curr.tolist())]


def dedup_inlier_columns(accepted: list[GroupMatch], features_prev: FrameFeatures,
                         features_curr: FrameFeatures) -> InlierColumns:
    """One match per feature: highest-scoring pair wins, ties to the lower
    current group id, then smaller total support distance, then the lower
    previous group id."""
    order = sorted(accepted, key=lambda m: (-m.score, m.group_curr,
                                            float(m.sup_dist.sum()), m.group_prev))
    if not order:
        z = np.zeros(0, np.int64)
        return InlierColumns(z, z, np.zeros((0, 2)), np.zeros((0, 2)),
                             np.zeros(0), z, z)
    ia = np.concatenate([gm.sup_a for gm in order])
    ib = np.concatenate([gm.sup_b for gm in order])
    dist = np.concatenate([gm.sup_dist for gm in order])
    sizes = [gm.sup_a.shape[0] for gm in order]
    gp_ids = np.repeat(np.array([gm.group_prev for gm in order], np.int64), sizes)
    gc_ids = np.repeat(np.array([gm.group_curr for gm in order], np.int64), sizes)
    keep = _kernels.claim_first(ia, ib, features_prev.count, features_curr.count)
    ia = ia[keep]
    ib = ib[keep]
    return InlierColumns(ia, ib, features_prev.positions[ia],
                         features_curr.positions[ib],
                         dist[keep].astype(np.float64), gp_ids[keep], gc_ids[keep])


def dedup_inliers(accepted: list[GroupMatch], features_prev: FrameFeatures,
                  features_curr: FrameFeatures) -> list[InlierMatch]:
    return dedup_inlier_columns(accepted, features_prev, features_curr).to_matches()


def match_frame_pair(groups_prev: list[FeatureGroup], features_prev: FrameFeatures,
                     groups_curr: list[FeatureGroup], features_curr: FrameFeatures,
                     candidate_pairs, k: float = 2.0,
                     metric: str = "hamming") -> tuple[list[GroupMatch], list[InlierMatch]]:
    """Score candidate pairs and emit deduplicated inlier matches."""
    accepted = score_candidate_pairs(groups_prev, features_prev,
                                     groups_curr, features_curr,
                                     candidate_pairs, k, metric)
    return accepted, dedup_inliers(accepted, features_prev, features_curr)
