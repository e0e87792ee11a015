"""Clustering features into local groups with a 2-D union-find structure.

Groups are grown region by region: a random unassigned feature seeds a
group, then a FIFO queue expands it by absorbing every still-unassigned
feature within the square window around each popped member. Growth is
capped by a member-count ceiling and a bounding-box side limit; undersized
groups are discarded after growth. Membership is recorded in a union-find
forest so the group of a feature resolves in near-constant time.

Absorption semantics (kept identical in the test oracle): candidates of a
popped member are taken in ascending feature-id order; a candidate that
would stretch the bounding box past the side limit is skipped and stays
unassigned, while reaching the member ceiling closes the group outright.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .frontend import FrameFeatures

DEFAULT_WINDOW = 30.0
DEFAULT_MIN_GROUP = 5
DEFAULT_MAX_GROUP = 35
DEFAULT_MAX_BBOX_SIDE = 90.0


class UnionFind:
    """Disjoint sets over item ids 0..count-1.

    ``parent[i] == i`` marks a root; ``set_size`` is valid at roots only.
    ``find`` applies full path compression, ``union`` merges by rank.
    """

    def __init__(self, count: int):
        self.parent = list(range(count))
        self.rank = [0] * count
        self.set_size = [1] * count

    def __len__(self) -> int:
        return len(self.parent)

    def _check(self, i: int) -> None:
        if not 0 <= i < len(self.parent):
            raise ValueError(f"item id {i} out of range [0, {len(self.parent)})")

    def find(self, i: int) -> int:
        self._check(i)
        root = i
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[i] != root:
            self.parent[i], i = root, self.parent[i]
        return root

    def union(self, a: int, b: int) -> int:
        ra = self.find(a)
        rb = self.find(b)
        if ra == rb:
            return ra
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.set_size[ra] += self.set_size[rb]
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1
        return ra

    def size(self, i: int) -> int:
        return self.set_size[self.find(i)]


@dataclass
class GroupingConfig:
    window: float = DEFAULT_WINDOW          # side of the neighbor square, px
    min_group: int = DEFAULT_MIN_GROUP
    max_group: int = DEFAULT_MAX_GROUP
    max_bbox_side: float = DEFAULT_MAX_BBOX_SIDE
    rng_seed: int = 42

    def __post_init__(self):
        if self.window <= 0:
            raise ValueError("window must be positive")
        if not 0 < self.min_group <= self.max_group:
            raise ValueError("need 0 < min_group <= max_group")
        if self.max_bbox_side < self.window:
            raise ValueError("max_bbox_side must be at least one window")


@dataclass
class FeatureGroup:
    group_id: int
    root: int                      # union-find representative feature id
    members: np.ndarray            # feature ids, absorption order
    n: int
    centroid: np.ndarray           # (2,) mean member position
    bbox_min: np.ndarray           # (2,)
    bbox_max: np.ndarray           # (2,)


@dataclass
class GroupingResult:
    groups: list[FeatureGroup]
    uf: UnionFind
    _group_by_root: dict[int, int] = field(default_factory=dict)

    def group_of(self, feature_id: int) -> int | None:
        """Union-find root of the feature's group, or None if discarded."""
        root = self.uf.find(feature_id)
        return root if root in self._group_by_root else None

    def group_id_of(self, feature_id: int) -> int | None:
        root = self.uf.find(feature_id)
        return self._group_by_root.get(root)


def group_features(frame: FrameFeatures, config: GroupingConfig) -> GroupingResult:
    """Partition the frame's features into local groups (see module docs).

    Deterministic for a fixed (frame, config): the seed order is one
    shuffle of all feature ids from the seeded generator, consumed in
    order and skipping ids that were absorbed meanwhile.
    """
    n = frame.count
    if n == 0:
        return GroupingResult([], UnionFind(0))
    pos = frame.positions
    radius = config.window / 2.0
    cell = config.window

    grid: dict[tuple[int, int], list[int]] = {}
    cell_x = np.floor(pos[:, 0] / cell).astype(np.int64)
    cell_y = np.floor(pos[:, 1] / cell).astype(np.int64)
    for i in range(n):
        grid.setdefault((int(cell_x[i]), int(cell_y[i])), []).append(i)

    order = np.random.default_rng(config.rng_seed).permutation(n)
    assigned = np.zeros(n, bool)
    uf = UnionFind(n)
    groups: list[FeatureGroup] = []
    by_root: dict[int, int] = {}

    for seed in order:
        seed = int(seed)
        if assigned[seed]:
            continue
        assigned[seed] = True
        members = [seed]
        min_x = max_x = pos[seed, 0]
        min_y = max_y = pos[seed, 1]
        queue = deque([seed])
        closed = False
        while queue and not closed:
            f = int(queue.popleft())
            if len(members) >= config.max_group:
                break
            fx, fy = pos[f, 0], pos[f, 1]
            cand = []
            cfx, cfy = int(cell_x[f]), int(cell_y[f])
            for gx in (cfx - 1, cfx, cfx + 1):
                for gy in (cfy - 1, cfy, cfy + 1):
                    bucket = grid.get((gx, gy))
                    if not bucket:
                        continue
                    for j in bucket:
                        if not assigned[j] and abs(pos[j, 0] - fx) <= radius \
                                and abs(pos[j, 1] - fy) <= radius:
                            cand.append(j)
            cand.sort()
            for j in cand:
                if len(members) >= config.max_group:
                    closed = True
                    break
                jx, jy = pos[j, 0], pos[j, 1]
                nmin_x = min(min_x, jx)
                nmax_x = max(max_x, jx)
                nmin_y = min(min_y, jy)
                nmax_y = max(max_y, jy)
                if nmax_x - nmin_x > config.max_bbox_side \
                        or nmax_y - nmin_y > config.max_bbox_side:
                    continue  # stays unassigned, may seed a later group
                assigned[j] = True
                uf.union(seed, j)
                members.append(j)
                queue.append(j)
                min_x, max_x, min_y, max_y = nmin_x, nmax_x, nmin_y, nmax_y
        if len(members) < config.min_group:
            continue  # discarded: members stay consumed but belong to no group
        root = uf.find(seed)
        gid = len(groups)
        member_arr = np.array(members, np.int64)
        groups.append(FeatureGroup(
            group_id=gid, root=root, members=member_arr, n=len(members),
            centroid=pos[member_arr].mean(axis=0),
            bbox_min=np.array([min_x, min_y]), bbox_max=np.array([max_x, max_y])))
        by_root[root] = gid

    return GroupingResult(groups, uf, by_root)
