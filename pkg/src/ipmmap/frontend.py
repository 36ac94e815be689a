"""Per-frame ingestion: temporary map building and data association.

Each frame's pre-segmented observations are back-projected to the ground
plane, associated with existing map elements (or buffered as pending
lanes), and recorded as measurement edges for the optimizer. Marking
corners keep a running mean of their back-projections; lane control
points grow by tail refits fed with uncertainty-selected points.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AmbiguousCorrespondence,
    NonPositiveDepth,
    PointsNotBeyondExtent,
    SpanTooShort,
)
from .geometry import (
    CameraIntrinsics,
    Extrinsics,
    VehiclePose,
    ipm_backproject_points,
    project_points,
)
from .spline import LaneElement, SegmentLocation, fit_control_points, extend_lane, locate_many
from .uncertainty import NoiseModel, point_traces, select_indices_by_trace

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MarkingObservation:
    frame_id: int
    class_label: str
    corners: np.ndarray  # (4, 2) pixels, counter-clockwise in the image
    gt_id: int | None = None  # oracle channel for tests; never read here

    def __post_init__(self):
        c = np.asarray(self.corners, dtype=float)
        if c.shape != (4, 2):
            raise ValueError("marking observation needs exactly 4 pixel corners")
        object.__setattr__(self, "corners", c)


@dataclass(frozen=True)
class LaneObservation:
    frame_id: int
    points: np.ndarray  # (m, 2) pixels ordered bottom-up (near to far)
    side_hint: str = "unknown"
    gt_id: int | None = None

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float)
        if p.ndim != 2 or p.shape[1] != 2 or len(p) < 2:
            raise ValueError("lane observation needs >= 2 pixel points")
        object.__setattr__(self, "points", p)


@dataclass
class MarkingElement:
    id: int
    class_label: str
    corners: np.ndarray  # (4, 3) world meters
    observation_count: int = 1

    @property
    def centroid(self) -> np.ndarray:
        return self.corners.mean(axis=0)


@dataclass(frozen=True)
class MarkingEdge:
    element_id: int
    corner_index: int
    frame_id: int
    pixel: np.ndarray

    @property
    def key(self):
        return (self.element_id, self.corner_index, self.frame_id)


@dataclass(frozen=True)
class LaneEdge:
    lane_id: int
    frame_id: int
    point_index: int
    pixel: np.ndarray
    location: SegmentLocation
    world_point: np.ndarray  # back-projection at ingest time

    @property
    def key(self):
        return (self.lane_id, self.frame_id, self.point_index)


@dataclass
class PendingLane:
    id: int
    points: list  # of (world (3,), trace, frame_id, point_index, pixel (2,))


@dataclass
class FrontendConfig:
    marking_gate: float = 1.0
    lane_gate: float = 0.5
    control_spacing: float = 3.0
    noise_model: NoiseModel = field(default_factory=NoiseModel)
    selection_count: int = 40
    trace_gate: float = 1.0  # m^2; points above are never used for fitting
    use_uncertainty_selection: bool = True
    min_pending_points: int = 5


@dataclass
class IngestReport:
    frame_id: int
    new_markings: int = 0
    matched_markings: int = 0
    new_lanes: int = 0
    matched_lanes: int = 0
    dropped_points: int = 0
    dropped_observations: int = 0
    associations: list = field(default_factory=list)


class ObservationGraph:
    """Poses, map elements, and the measurement edges binding them."""

    def __init__(self):
        self.poses: dict[int, VehiclePose] = {}
        self.prior_poses: dict[int, VehiclePose] = {}
        self.frame_order: list[int] = []
        self.markings: dict[int, MarkingElement] = {}
        self.lanes: dict[int, LaneElement] = {}
        self.marking_edges: list[MarkingEdge] = []
        self.lane_edges: list[LaneEdge] = []
        self.pending_lanes: list[PendingLane] = []
        self._edge_keys: set = set()
        self._next_marking_id = 0
        self._next_lane_id = 0

    def add_pose(self, pose: VehiclePose):
        if pose.frame_id in self.poses:
            stored = self.poses[pose.frame_id]
            if not np.allclose(stored.transform.matrix, pose.transform.matrix):
                raise ValueError(f"frame {pose.frame_id} already stored with a different pose")
            return
        if self.frame_order:
            last = self.poses[self.frame_order[-1]]
            if pose.timestamp <= last.timestamp:
                raise ValueError("poses must arrive with strictly increasing timestamps")
        self.poses[pose.frame_id] = pose
        self.prior_poses[pose.frame_id] = pose
        self.frame_order.append(pose.frame_id)

    def add_marking_edge(self, edge: MarkingEdge) -> bool:
        if edge.key in self._edge_keys:
            return False
        self._edge_keys.add(edge.key)
        self.marking_edges.append(edge)
        return True

    def add_lane_edge(self, edge: LaneEdge) -> bool:
        if edge.key in self._edge_keys:
            return False
        self._edge_keys.add(edge.key)
        self.lane_edges.append(edge)
        return True

    def new_marking_id(self) -> int:
        self._next_marking_id += 1
        return self._next_marking_id - 1

    def new_lane_id(self) -> int:
        self._next_lane_id += 1
        return self._next_lane_id - 1

    def frames_observing(self) -> dict:
        """Element key -> set of frames with an edge onto it."""
        seen: dict = {}
        for e in self.marking_edges:
            seen.setdefault(("marking", e.element_id), set()).add(e.frame_id)
        for e in self.lane_edges:
            seen.setdefault(("lane", e.lane_id), set()).add(e.frame_id)
        return seen

    def check_integrity(self):
        keys = set()
        for e in self.marking_edges:
            assert e.element_id in self.markings, "edge onto missing marking"
            assert e.frame_id in self.poses, "edge onto missing pose"
            assert e.key not in keys, "duplicate marking edge"
            keys.add(e.key)
        for e in self.lane_edges:
            assert e.lane_id in self.lanes, "edge onto missing lane"
            assert e.frame_id in self.poses, "edge onto missing pose"
            assert e.key not in keys, "duplicate lane edge"
            keys.add(e.key)
            n_seg = self.lanes[e.lane_id].num_segments
            assert 0 <= e.location.segment_index < n_seg, "stale segment index"


def associate_marking(
    candidate_corners_world: np.ndarray,
    class_label: str,
    graph: ObservationGraph,
    gate: float = 1.0,
):
    """Nearest same-class element within the centroid gate, or None."""
    centroid = np.asarray(candidate_corners_world, dtype=float).mean(axis=0)
    best_id, best_dist = None, gate
    for elem_id in sorted(graph.markings):
        elem = graph.markings[elem_id]
        if elem.class_label != class_label:
            continue
        d = float(np.linalg.norm(elem.centroid - centroid))
        if d < best_dist:
            best_id, best_dist = elem_id, d
    return best_id


def corner_correspondence(
    element: MarkingElement,
    obs: MarkingObservation,
    pose: VehiclePose,
    extr: Extrinsics,
    intr: CameraIntrinsics,
) -> dict:
    """Cyclic shift (and possible reversal) aligning observed corners.

    Maps element corner index -> observation corner index by minimizing
    total pixel distance between the element's projected corners and the
    observation. Raises AmbiguousCorrespondence when the two best
    candidates differ by less than one pixel in total.
    """
    proj, valid = project_points(element.corners, pose, extr, intr)
    if not valid.all():
        raise NonPositiveDepth("element corner behind the camera")
    candidates = []
    for shift in range(4):
        fwd = [(shift + m) % 4 for m in range(4)]
        rev = [(shift - m) % 4 for m in range(4)]
        for idxs in (fwd, rev):
            cost = float(
                np.linalg.norm(proj - obs.corners[np.array(idxs)], axis=1).sum()
            )
            candidates.append((cost, idxs))
    candidates.sort(key=lambda c: c[0])
    best, second = candidates[0], candidates[1]
    if second[0] - best[0] < 1.0 and second[1] != best[1]:
        raise AmbiguousCorrespondence(
            f"element {element.id}: best orderings within 1 px "
            f"({best[0]:.3f} vs {second[0]:.3f})"
        )
    return {m: best[1][m] for m in range(4)}


def _point_to_polyline_dist(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Distance from each point to a polyline (segment-wise, vectorized)."""
    a = poly[:-1]
    b = poly[1:]
    ab = b - a
    denom = np.maximum(np.sum(ab * ab, axis=1), 1e-12)
    diff = points[:, None, :] - a[None, :, :]
    t = np.clip(np.einsum("nmd,md->nm", diff, ab) / denom, 0.0, 1.0)
    feet = a[None, :, :] + t[..., None] * ab[None, :, :]
    d = np.linalg.norm(points[:, None, :] - feet, axis=2)
    return d.min(axis=1)


def _lane_median_distance(lane: LaneElement, points: np.ndarray) -> float:
    sub = points[:: max(1, len(points) // 25)]
    _, _, feet = locate_many(lane, sub, refine_iters=16)
    return float(np.median(np.linalg.norm(sub - feet, axis=1)))


def associate_lane(
    points_world: np.ndarray, graph: ObservationGraph, gate: float = 0.5
):
    """Nearest finalized lane whose median lateral distance is in the gate."""
    pts = np.asarray(points_world, dtype=float)
    best_id, best_dist = None, gate
    for lane_id in sorted(graph.lanes):
        d = _lane_median_distance(graph.lanes[lane_id], pts)
        if d < best_dist:
            best_id, best_dist = lane_id, d
    return best_id


def _associate_pending(
    points_world: np.ndarray, graph: ObservationGraph, gate: float
):
    pts = np.asarray(points_world, dtype=float)
    best, best_dist = None, gate
    for pending in graph.pending_lanes:
        poly = np.array([p[0] for p in pending.points])
        if len(poly) < 2:
            d = float(np.median(np.linalg.norm(pts - poly[0], axis=1)))
        else:
            d = float(np.median(_point_to_polyline_dist(pts, poly)))
        if d < best_dist:
            best, best_dist = pending, d
    return best


def _select_for_fitting(entries: list, config: FrontendConfig) -> list:
    """Uncertainty gate + top-N selection, preserving original order."""
    if not entries:
        return []
    if not config.use_uncertainty_selection:
        return list(entries)
    traces = np.array([e[1] for e in entries])
    idx = select_indices_by_trace(traces, config.selection_count, config.trace_gate)
    return [entries[i] for i in idx]


def _arc_span(points: np.ndarray) -> float:
    if len(points) < 2:
        return 0.0
    return float(np.sum(np.linalg.norm(np.diff(points, axis=0), axis=1)))


def ingest_frame(
    graph: ObservationGraph,
    markings: list[MarkingObservation],
    lanes: list[LaneObservation],
    pose: VehiclePose,
    extr: Extrinsics,
    intr: CameraIntrinsics,
    config: FrontendConfig | None = None,
) -> IngestReport:
    """Back-project one frame's observations, associate, and record edges.

    Points whose rays miss the ground are dropped (logged), never fatal.
    Replaying a frame is a no-op for elements: duplicate edges are
    rejected and the corner means are not re-updated.
    """
    config = config or FrontendConfig()
    report = IngestReport(frame_id=pose.frame_id)
    graph.add_pose(pose)

    for obs_index, obs in enumerate(markings):
        _ingest_marking(graph, obs, obs_index, pose, extr, intr, config, report)
    for obs_index, obs in enumerate(lanes):
        _ingest_lane(graph, obs, obs_index, pose, extr, intr, config, report)
    return report


def _ingest_marking(graph, obs, obs_index, pose, extr, intr, config, report):
    world, valid = ipm_backproject_points(obs.corners, pose, extr, intr)
    if not valid.all():
        report.dropped_observations += 1
        report.dropped_points += int((~valid).sum())
        logger.debug("frame %d: marking corner above horizon, dropped", pose.frame_id)
        return
    match = associate_marking(world, obs.class_label, graph, config.marking_gate)
    if match is None:
        elem = MarkingElement(
            id=graph.new_marking_id(),
            class_label=obs.class_label,
            corners=world.copy(),
            observation_count=1,
        )
        graph.markings[elem.id] = elem
        for m in range(4):
            graph.add_marking_edge(
                MarkingEdge(elem.id, m, pose.frame_id, obs.corners[m].copy())
            )
        report.new_markings += 1
        report.associations.append(
            ("marking", obs_index, elem.id, "new")
        )
        return

    elem = graph.markings[match]
    try:
        mapping = corner_correspondence(elem, obs, pose, extr, intr)
    except (AmbiguousCorrespondence, NonPositiveDepth) as exc:
        report.dropped_observations += 1
        logger.debug("frame %d: %s", pose.frame_id, exc)
        return
    if any((elem.id, m, pose.frame_id) in graph._edge_keys for m in range(4)):
        report.associations.append(("marking", obs_index, elem.id, "duplicate"))
        return
    for m in range(4):
        graph.add_marking_edge(
            MarkingEdge(elem.id, m, pose.frame_id, obs.corners[mapping[m]].copy())
        )
    mapped_world = world[np.array([mapping[m] for m in range(4)])]
    n = elem.observation_count
    elem.corners = (elem.corners * n + mapped_world) / (n + 1)
    elem.observation_count = n + 1
    report.matched_markings += 1
    report.associations.append(("marking", obs_index, elem.id, "matched"))


def _add_lane_edges(graph, lane, entries):
    """Locate entries on the (possibly just extended) lane and add edges."""
    pts = np.array([e[0] for e in entries])
    segs, ts, feet = locate_many(lane, pts, refine_iters=24)
    for (world, _trace, frame_id, point_index, pixel), seg, t, foot in zip(
        entries, segs, ts, feet
    ):
        loc = SegmentLocation(int(seg), float(t), foot)
        graph.add_lane_edge(
            LaneEdge(lane.id, frame_id, point_index, pixel, loc, world)
        )


def _ingest_lane(graph, obs, obs_index, pose, extr, intr, config, report):
    world, valid = ipm_backproject_points(obs.points, pose, extr, intr)
    traces, trace_valid = point_traces(obs.points, extr, intr, config.noise_model)
    ok = valid & trace_valid
    report.dropped_points += int((~ok).sum())
    if ok.sum() < 2:
        report.dropped_observations += 1
        return
    world = world[ok]
    traces = traces[ok]
    pixels = obs.points[ok]
    indices = np.flatnonzero(ok)
    entries = [
        (world[i], float(traces[i]), pose.frame_id, int(indices[i]), pixels[i].copy())
        for i in range(len(world))
    ]

    match = associate_lane(world, graph, config.lane_gate)
    if match is not None:
        lane = graph.lanes[match]
        selected = _select_for_fitting(entries, config)
        if selected:
            try:
                lane = extend_lane(lane, np.array([e[0] for e in selected]))
                graph.lanes[match] = lane
            except PointsNotBeyondExtent:
                pass  # fully overlapping observation; nothing to grow
        _add_lane_edges(graph, lane, entries)
        report.matched_lanes += 1
        report.associations.append(("lane", obs_index, match, "matched"))
        return

    pending = _associate_pending(world, graph, config.lane_gate)
    if pending is None:
        pending = PendingLane(id=graph.new_lane_id(), points=[])
        graph.pending_lanes.append(pending)
    report.associations.append(("lane", obs_index, pending.id, "pending"))
    pending.points.extend(entries)

    selected = _select_for_fitting(pending.points, config)
    pts = _ordered_dedupe([e[0] for e in selected])
    if (
        len(pts) >= config.min_pending_points
        and _arc_span(pts) >= 2.0 * config.control_spacing + 0.5
    ):
        try:
            lane = fit_control_points(pts, config.control_spacing, lane_id=pending.id)
        except SpanTooShort:
            return
        graph.lanes[lane.id] = lane
        graph.pending_lanes.remove(pending)
        _add_lane_edges(graph, lane, pending.points)
        report.new_lanes += 1


def _ordered_dedupe(points: list, min_gap: float = 0.05) -> np.ndarray:
    """Sort points along their dominant direction and thin near-duplicates.

    Pending buffers interleave frames, so arrival order is not monotone
    along the lane; sorting by projection onto the first-to-last chord
    restores it.
    """
    if not points:
        return np.zeros((0, 3))
    pts = np.asarray(points, dtype=float)
    direction = pts[-1] - pts[0]
    norm = np.linalg.norm(direction)
    if norm < 1e-9:
        return pts[:1]
    order = np.argsort(pts @ (direction / norm), kind="stable")
    pts = pts[order]
    keep = [0]
    for i in range(1, len(pts)):
        if np.linalg.norm(pts[i] - pts[keep[-1]]) > min_gap:
            keep.append(i)
    return pts[keep]
