"""End-to-end frame loop: extract, group, restrict, match, advance.

Per frame the pipeline loads or detects features, clusters them into
groups, intersects current groups with the motion-predicted search
regions of the previous frame, cross-check matches every candidate pair,
keeps pairs whose support count clears the threshold, emits the surviving
feature matches and carries the group state forward. Stage wall times are
taken with a monotonic clock.

Frames that yield zero features are skipped with a warning; the previous
state is kept and its regions re-dilated with a doubled margin so the
next usable frame can still be matched.
"""

from __future__ import annotations

import math
import os
import statistics
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import matching, tracking
from .config import PipelineConfig
from .errors import InputDataError, UndefinedMetricError
from .frontend import FrameFeatures, extract_frame, load_features
from .geometry import (estimate_essential_ransac, pose_error, pose_success_ratio,
                       reprojection_repeatability, rotation_angle_deg)
from .grouping import group_features
from .image_io import load_image
from .matching import InlierMatch
from .synthetic import default_intrinsics, load_gt_pairs, load_gt_poses, relative_pose

DEFAULT_POSE_THRESHOLDS = (0.25, 0.5, 1.0, 2.0, 3.0, 5.0, 7.5, 10.0, 15.0, 20.0, 30.0)

STAGES = ("detection", "grouping", "matching", "filtering")


def _fmt(x: float) -> str:
    return repr(float(x))


@dataclass
class RunStats:
    """Per-frame stage timings (ms) and pipeline counters."""

    detection_ms: list[float] = field(default_factory=list)
    grouping_ms: list[float] = field(default_factory=list)
    matching_ms: list[float] = field(default_factory=list)
    filtering_ms: list[float] = field(default_factory=list)
    total_ms: list[float] = field(default_factory=list)
    features: list[int] = field(default_factory=list)
    groups: list[int] = field(default_factory=list)
    candidate_pairs: list[int] = field(default_factory=list)
    accepted_pairs: list[int] = field(default_factory=list)
    inliers: list[int] = field(default_factory=list)

    @property
    def frame_count(self) -> int:
        return len(self.total_ms)

    @property
    def fps(self) -> float:
        total = sum(self.total_ms)
        return self.frame_count * 1000.0 / total if total > 0 else 0.0

    def stage_lists(self) -> dict[str, list[float]]:
        return {"detection": self.detection_ms, "grouping": self.grouping_ms,
                "matching": self.matching_ms, "filtering": self.filtering_ms}

    def median_stage_ms(self) -> dict[str, float]:
        return {name: (statistics.median(vals) if vals else 0.0)
                for name, vals in self.stage_lists().items()}

    def stage_percentages(self) -> dict[str, float]:
        med = self.median_stage_ms()
        total = sum(med.values())
        if total <= 0:
            return {name: 0.0 for name in STAGES}
        return {name: 100.0 * v / total for name, v in med.items()}

    def to_text(self) -> str:
        med = self.median_stage_ms()
        pct = self.stage_percentages()
        lines = ["format=dynafeat-stats-v1",
                 f"frames={self.frame_count}",
                 f"fps={self.fps:.3f}"]
        for name in STAGES:
            lines.append(f"median_{name}_ms={med[name]:.4f}")
        for name in STAGES:
            lines.append(f"pct_{name}={pct[name]:.2f}")
        lines.append("table=frame features groups candidates accepted inliers "
                     "detect_ms group_ms match_ms filter_ms total_ms")
        for i in range(self.frame_count):
            lines.append(" ".join([
                str(i), str(self.features[i]), str(self.groups[i]),
                str(self.candidate_pairs[i]), str(self.accepted_pairs[i]),
                str(self.inliers[i]),
                f"{self.detection_ms[i]:.4f}", f"{self.grouping_ms[i]:.4f}",
                f"{self.matching_ms[i]:.4f}", f"{self.filtering_ms[i]:.4f}",
                f"{self.total_ms[i]:.4f}"]))
        return "\n".join(lines) + "\n"


@dataclass(eq=False)
class PairMatches:
    frame_prev: int
    frame_curr: int
    columns: matching.InlierColumns
    _materialized: list[InlierMatch] | None = None

    @property
    def inliers(self) -> list[InlierMatch]:
        if self._materialized is None:
            self._materialized = self.columns.to_matches()
        return self._materialized


@dataclass
class TrackRow:
    frame: int
    group_id: int
    cx: float
    cy: float
    dx: float
    dy: float
    age: int
    n: int


@dataclass
class SequenceResult:
    pairs: list[PairMatches]
    stats: RunStats
    track_rows: list[TrackRow]
    frame_indices: list[int]

    @property
    def total_inliers(self) -> int:
        return sum(len(p.inliers) for p in self.pairs)


def load_frame(config: PipelineConfig, path, index: int) -> FrameFeatures:
    if config.input_mode == "images":
        image = load_image(path)
        return extract_frame(image, index, fast_threshold=config.fast_threshold,
                             max_features=config.max_features, rng_seed=config.seed)
    try:
        return load_features(path, frame_index=index, max_features=config.max_features)
    except OSError as exc:
        raise InputDataError(f"cannot read frame {index} ({path}): {exc}") from None


def run_sequence(config: PipelineConfig, sources,
                 frames: list[FrameFeatures] | None = None,
                 warn=lambda msg: print(msg, file=sys.stderr)) -> SequenceResult:
    """Run the matching pipeline over ordered frame sources.

    ``sources`` are file paths interpreted per ``config.input_mode``;
    pre-loaded ``frames`` bypass the file layer (used by the evaluation
    harness and the tests). At least two frames are required.
    """
    if frames is None:
        sources = list(sources)
        if len(sources) < 2:
            raise InputDataError("at least 2 frames are required")
    elif len(frames) < 2:
        raise InputDataError("at least 2 frames are required")

    gcfg = config.grouping_config()
    stats = RunStats()
    result_pairs: list[PairMatches] = []
    track_rows: list[TrackRow] = []
    frame_indices: list[int] = []
    state: tracking.TrackState | None = None
    margin = config.search_margin
    skip_margin = margin

    count = len(frames) if frames is not None else len(sources)
    for idx in range(count):
        t0 = time.perf_counter()
        if frames is not None:
            feats = frames[idx]
        else:
            feats = load_frame(config, sources[idx], idx)
        t1 = time.perf_counter()

        if feats.count == 0:
            warn(f"frame {idx}: no features, skipping (state preserved)")
            stats.detection_ms.append((t1 - t0) * 1000.0)
            stats.grouping_ms.append(0.0)
            stats.matching_ms.append(0.0)
            stats.filtering_ms.append(0.0)
            stats.total_ms.append((time.perf_counter() - t0) * 1000.0)
            stats.features.append(0)
            stats.groups.append(0)
            stats.candidate_pairs.append(0)
            stats.accepted_pairs.append(0)
            stats.inliers.append(0)
            if state is not None:
                skip_margin *= 2.0
                state = tracking.recompute_regions(state, skip_margin)
            continue

        grouping = group_features(feats, gcfg)
        groups = grouping.groups
        t2 = time.perf_counter()

        if state is None:
            state = tracking.bootstrap(feats, groups, margin)
            candidates = []
            accepted = []
            inlier_count = 0
            t3 = t4 = time.perf_counter()
        else:
            candidates = tracking.intersect_candidates(groups, state)
            accepted = matching.score_candidate_pairs(
                state.groups, state.features, groups, feats, candidates,
                k=config.k, metric=config.metric)
            t3 = time.perf_counter()
            columns = matching.dedup_inlier_columns(accepted, state.features, feats)
            inlier_count = len(columns)
            result_pairs.append(PairMatches(state.frame_index, feats.frame_index, columns))
            state = tracking.advance(state, feats, groups, accepted, margin)
            t4 = time.perf_counter()
        skip_margin = margin

        for g in state.groups:
            proxy = state.proxies.get(g.group_id)
            dx, dy = (proxy.displacement if proxy is not None else (0.0, 0.0))
            age = proxy.age if proxy is not None else 0
            track_rows.append(TrackRow(feats.frame_index, g.group_id,
                                       float(g.centroid[0]), float(g.centroid[1]),
                                       float(dx), float(dy), age, g.n))

        stats.detection_ms.append((t1 - t0) * 1000.0)
        stats.grouping_ms.append((t2 - t1) * 1000.0)
        stats.matching_ms.append((t3 - t2) * 1000.0)
        stats.filtering_ms.append((t4 - t3) * 1000.0)
        stats.total_ms.append((time.perf_counter() - t0) * 1000.0)
        stats.features.append(feats.count)
        stats.groups.append(len(groups))
        stats.candidate_pairs.append(len(candidates))
        stats.accepted_pairs.append(len(accepted))
        stats.inliers.append(inlier_count)
        frame_indices.append(feats.frame_index)

    return SequenceResult(result_pairs, stats, track_rows, frame_indices)


# ---------------------------------------------------------------------------
# Output files
# ---------------------------------------------------------------------------

def match_filename(a: int, b: int) -> str:
    return f"matches_{a:06d}_{b:06d}.txt"


def write_match_files(result: SequenceResult, out_dir) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for pair in result.pairs:
        path = os.path.join(out_dir, match_filename(pair.frame_prev, pair.frame_curr))
        with open(path, "w", encoding="ascii") as fh:
            for m in pair.inliers:
                fh.write(f"{pair.frame_prev} {pair.frame_curr} "
                         f"{_fmt(m.x1)} {_fmt(m.y1)} {_fmt(m.x2)} {_fmt(m.y2)} "
                         f"{_fmt(m.distance)} {m.group_prev} {m.group_curr}\n")
        written.append(path)
    return written


def write_track_dump(result: SequenceResult, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for r in result.track_rows:
            fh.write(f"{r.frame} {r.group_id} {_fmt(r.cx)} {_fmt(r.cy)} "
                     f"{_fmt(r.dx)} {_fmt(r.dy)} {r.age} {r.n}\n")


def write_stats(stats: RunStats, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(stats.to_text())


# ---------------------------------------------------------------------------
# Evaluation against ground truth
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    pair_count: int
    match_count: int
    precision: float | None
    mean_inlier_ratio: float
    pose_errors: list[float]
    success_curve: list[tuple[float, float]]
    repeatability: float | None
    repeatability_per_1000: float | None
    static_scene: bool
    stats: RunStats

    def summary_text(self) -> str:
        lines = ["format=dynafeat-eval-v1",
                 f"pairs={self.pair_count}",
                 f"matches={self.match_count}"]
        if self.precision is not None:
            lines.append(f"precision={self.precision:.6f}")
        lines.append(f"mean_inlier_ratio={self.mean_inlier_ratio:.6f}")
        finite = [e for e in self.pose_errors if math.isfinite(e)]
        lines.append(f"pose_pairs_evaluated={len(self.pose_errors)}")
        lines.append(f"pose_errors_finite={len(finite)}")
        if self.static_scene and self.repeatability is not None:
            lines.append(f"repeatability_px={_fmt(self.repeatability)}")
            lines.append(f"repeatability_per_1000={_fmt(self.repeatability_per_1000)}")
        else:
            lines.append("repeatability_px=n/a")
        for th, ratio in self.success_curve:
            lines.append(f"success@{_fmt(th)}={ratio:.6f}")
        return "\n".join(lines) + "\n"

    def curve_text(self) -> str:
        lines = ["# threshold_deg success_ratio"]
        for th, ratio in self.success_curve:
            lines.append(f"{_fmt(th)} {ratio:.6f}")
        return "\n".join(lines) + "\n"


def run_eval(config: PipelineConfig, sources, gt_dir,
             thresholds=DEFAULT_POSE_THRESHOLDS,
             frames: list[FrameFeatures] | None = None) -> EvalReport:
    """Match the sequence and score it against generator ground truth.

    Pose estimation assumes the synthetic generator's default intrinsics
    (the same camera the ground-truth poses were rendered with).
    """
    result = run_sequence(config, sources, frames=frames)
    rotations, translations = load_gt_poses(gt_dir)
    if rotations.shape[0] < result.stats.frame_count:
        raise InputDataError(
            f"ground truth has {rotations.shape[0]} poses for {result.stats.frame_count} frames")

    intrinsics = default_intrinsics()
    pose_errors: list[float] = []
    inlier_ratios: list[float] = []
    correct = 0
    total = 0
    displacements_prev = []
    displacements_curr = []

    for pair in result.pairs:
        a, b = pair.frame_prev, pair.frame_curr
        try:
            gt = load_gt_pairs(gt_dir, a, b)
        except FileNotFoundError:
            raise InputDataError(f"missing ground-truth pair file for frames {a}-{b}") from None
        gt_set = {(int(i), int(j)) for i, j in gt}
        total += len(pair.inliers)
        correct += sum((m.feature_prev, m.feature_curr) in gt_set for m in pair.inliers)
        if pair.inliers:
            displacements_prev.append(np.array([[m.x1, m.y1] for m in pair.inliers]))
            displacements_curr.append(np.array([[m.x2, m.y2] for m in pair.inliers]))
        R_rel, t_rel = relative_pose(rotations[a], translations[a],
                                     rotations[b], translations[b])
        if len(pair.inliers) >= 8:
            pts_a = np.array([[m.x1, m.y1] for m in pair.inliers])
            pts_b = np.array([[m.x2, m.y2] for m in pair.inliers])
            est = estimate_essential_ransac(pts_a, pts_b, intrinsics,
                                            rng_seed=config.seed, adaptive=True)
            pose_errors.append(pose_error(est, R_rel, t_rel))
            inlier_ratios.append(est.inlier_ratio)
        else:
            pose_errors.append(math.inf)

    static = True
    for a, b in zip(result.frame_indices[:-1], result.frame_indices[1:]):
        R_rel, t_rel = relative_pose(rotations[a], translations[a],
                                     rotations[b], translations[b])
        if rotation_angle_deg(R_rel) > 1e-9 or np.linalg.norm(t_rel) > 1e-12:
            static = False
            break

    repeat = repeat_norm = None
    if static and displacements_prev:
        feats_per_frame = float(np.mean([c for c in result.stats.features if c > 0]))
        rep = reprojection_repeatability(np.vstack(displacements_prev),
                                         np.vstack(displacements_curr), feats_per_frame)
        repeat = rep.mean_l2
        repeat_norm = rep.per_1000_features

    try:
        curve = pose_success_ratio(pose_errors, thresholds)
    except UndefinedMetricError:
        curve = []
    return EvalReport(pair_count=len(result.pairs), match_count=total,
                      precision=(correct / total if total else None),
                      mean_inlier_ratio=(float(np.mean(inlier_ratios)) if inlier_ratios else 0.0),
                      pose_errors=pose_errors, success_curve=curve,
                      repeatability=repeat, repeatability_per_1000=repeat_norm,
                      static_scene=static, stats=result.stats)


# ---------------------------------------------------------------------------
# Benchmarking
# ---------------------------------------------------------------------------

@dataclass
class BenchReport:
    repetitions: int
    median_stage_ms: dict[str, float]
    stage_percentages: dict[str, float]
    fps: float
    last_stats: RunStats

    def to_text(self) -> str:
        lines = ["format=dynafeat-bench-v1", f"repetitions={self.repetitions}",
                 f"fps={self.fps:.3f}"]
        for name in STAGES:
            lines.append(f"median_{name}_ms={self.median_stage_ms[name]:.4f}")
        for name in STAGES:
            lines.append(f"pct_{name}={self.stage_percentages[name]:.2f}")
        return "\n".join(lines) + "\n"


def bench(config: PipelineConfig, sources, repetitions: int = 3,
          frames: list[FrameFeatures] | None = None) -> BenchReport:
    """Median-of-repetitions stage timings plus the stage breakdown.

    One untimed warmup run precedes the measurements so JIT compilation
    is not charged to the first repetition.
    """
    if repetitions < 1:
        raise InputDataError("repetitions must be >= 1")
    run_sequence(config, sources, frames=frames)  # warmup
    per_stage: dict[str, list[float]] = {name: [] for name in STAGES}
    last = None
    for _ in range(repetitions):
        last = run_sequence(config, sources, frames=frames)
        for name, vals in last.stats.stage_lists().items():
            per_stage[name].extend(vals)
    med = {name: (statistics.median(vals) if vals else 0.0)
           for name, vals in per_stage.items()}
    total = sum(med.values())
    pct = {name: (100.0 * v / total if total > 0 else 0.0) for name, v in med.items()}
    return BenchReport(repetitions=repetitions, median_stage_ms=med,
                       stage_percentages=pct, fps=last.stats.fps, last_stats=last.stats)
