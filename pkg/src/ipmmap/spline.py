"""Catmull-Rom lane splines: evaluation, sampling, fitting, and footpoints.

Lanes use the uniform (tension 0.5) Catmull-Rom parameterization, so the
basis matrix is constant and control-point fitting is a plain linear
least-squares problem. A lane with control points c[0..n-1] draws segments
i = 0..n-4, where segment i interpolates c[i+1] -> c[i+2] using the window
(c[i], c[i+1], c[i+2], c[i+3]). c[0] and c[n-1] are phantom endpoints
placed by linear extrapolation of the adjacent interior pair.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateGeometry,
    PointsNotBeyondExtent,
    SpanTooShort,
    TooFewControlPoints,
)

# Rows are powers of t (1, t, t^2, t^3); columns weight (p0, p1, p2, p3).
CR_BASIS = 0.5 * np.array(
    [
        [0.0, 2.0, 0.0, 0.0],
        [-1.0, 0.0, 1.0, 0.0],
        [2.0, -5.0, 4.0, -1.0],
        [-1.0, 3.0, -3.0, 1.0],
    ]
)

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0

# Tikhonov pull toward the chord-placed initial control points; keeps
# sparsely observed control points conditioned without visibly moving
# well-observed ones.
FIT_REGULARIZATION = 1e-6

# A trailing knot is only added once the data reaches this fraction of the
# spacing beyond the last segment; keeps fit -> sample -> fit from growing
# a control point at exact-multiple arc lengths.
KNOT_SLACK = 0.02


def _segment_count(total: float, spacing: float) -> int:
    return max(1, int(np.ceil(total / spacing - KNOT_SLACK)))


def catmull_rom_weights(t) -> np.ndarray:
    """Basis weights for local parameters t, shape (..., 4). Sum to 1."""
    t = np.asarray(t, dtype=float)
    powers = np.stack([np.ones_like(t), t, t * t, t * t * t], axis=-1)
    return powers @ CR_BASIS


def catmull_rom_tangent_weights(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    powers = np.stack(
        [np.zeros_like(t), np.ones_like(t), 2.0 * t, 3.0 * t * t], axis=-1
    )
    return powers @ CR_BASIS


def catmull_rom_eval(window: np.ndarray, t) -> np.ndarray:
    """Evaluate one segment. window is (4, 3); t scalar or (m,)."""
    window = np.asarray(window, dtype=float)
    if window.shape != (4, 3):
        raise ValueError("window must be four 3-vectors")
    return catmull_rom_weights(t) @ window


def catmull_rom_tangent(window: np.ndarray, t) -> np.ndarray:
    return catmull_rom_tangent_weights(t) @ np.asarray(window, dtype=float)


@dataclass(frozen=True)
class SegmentLocation:
    """Where a query point falls on a lane: segment window + local parameter."""

    segment_index: int
    local_parameter: float
    footpoint: np.ndarray


@dataclass
class LaneElement:
    """A lane line as an ordered list of Catmull-Rom control points."""

    id: int
    control_points: np.ndarray  # (n, 3)
    nominal_spacing: float
    fit_rms: float = field(default=0.0, compare=False)

    def __post_init__(self):
        self.control_points = np.array(self.control_points, dtype=float)
        self.validate()

    def validate(self):
        cps = self.control_points
        if cps.ndim != 2 or cps.shape[1] != 3 or cps.shape[0] < 4:
            raise TooFewControlPoints(
                f"lane {self.id}: need >= 4 control points, got {cps.shape}"
            )
        gaps = np.linalg.norm(np.diff(cps, axis=0), axis=1)
        if (gaps <= 1e-6).any():
            raise DegenerateGeometry(f"lane {self.id}: coincident control points")
        lo, hi = 0.2 * self.nominal_spacing, 5.0 * self.nominal_spacing
        if (gaps < lo).any() or (gaps > hi).any():
            raise DegenerateGeometry(
                f"lane {self.id}: control-point gaps outside [{lo}, {hi}]"
            )

    @property
    def num_segments(self) -> int:
        return len(self.control_points) - 3

    def window(self, segment_index: int) -> np.ndarray:
        return self.control_points[segment_index : segment_index + 4]

    def presample(self, per_segment: int = 10) -> tuple[np.ndarray, np.ndarray]:
        """Dense samples over all segments; returns (points, (segment, t))."""
        n_seg = self.num_segments
        t = np.linspace(0.0, 1.0, per_segment, endpoint=False)
        seg_idx = np.repeat(np.arange(n_seg), per_segment)
        ts = np.tile(t, n_seg)
        # close the curve with the exact final interior point
        seg_idx = np.append(seg_idx, n_seg - 1)
        ts = np.append(ts, 1.0)
        weights = catmull_rom_weights(ts)
        windows = np.stack(
            [self.control_points[seg_idx + k] for k in range(4)], axis=1
        )
        pts = np.einsum("nk,nkd->nd", weights, windows)
        return pts, np.column_stack([seg_idx, ts])


def _chord_parameters(points: np.ndarray) -> np.ndarray:
    deltas = np.linalg.norm(np.diff(points, axis=0), axis=1)
    if (deltas < 1e-12).any():
        raise DegenerateGeometry("duplicate consecutive points")
    return np.concatenate([[0.0], np.cumsum(deltas)])


def _polyline_point(points: np.ndarray, s_values: np.ndarray, arc: np.ndarray) -> np.ndarray:
    """Points at arc positions along a polyline, extrapolating past the end."""
    s_values = np.atleast_1d(np.asarray(s_values, dtype=float))
    out = np.empty((len(s_values), 3))
    total = arc[-1]
    end_dir = points[-1] - points[-2]
    end_dir = end_dir / np.linalg.norm(end_dir)
    start_dir = points[1] - points[0]
    start_dir = start_dir / np.linalg.norm(start_dir)
    for i, s in enumerate(s_values):
        if s <= 0.0:
            out[i] = points[0] + s * start_dir
        elif s >= total:
            out[i] = points[-1] + (s - total) * end_dir
        else:
            j = int(np.searchsorted(arc, s, side="right")) - 1
            seg_len = arc[j + 1] - arc[j]
            w = (s - arc[j]) / seg_len
            out[i] = (1.0 - w) * points[j] + w * points[j + 1]
    return out


def _solve_fit(
    rows: np.ndarray,
    cols: np.ndarray,
    weights: np.ndarray,
    rhs: np.ndarray,
    n_unknowns: int,
    init: np.ndarray,
) -> tuple[np.ndarray, float]:
    """Solve min |A C - P|^2 + reg |C - init|^2 with A in COO triplets."""
    n_rows = rhs.shape[0]
    A = np.zeros((n_rows, n_unknowns))
    np.add.at(A, (rows, cols), weights)
    AtA = A.T @ A + FIT_REGULARIZATION * np.eye(n_unknowns)
    AtP = A.T @ rhs + FIT_REGULARIZATION * init
    C = np.linalg.solve(AtA, AtP)
    residual = A @ C - rhs
    rms = float(np.sqrt(np.mean(np.sum(residual**2, axis=1))))
    return C, rms


def _window_triplets(n_points, seg, tloc, n_interior):
    """COO triplets of basis weights, with phantom endpoints folded in.

    Unknowns are the interior control points 0..n_interior-1. The phantom
    before interior 0 is 2*C0 - C1 and the phantom after the last interior
    is 2*C_last - C_prev, both handled by weight redistribution.
    """
    w4 = catmull_rom_weights(tloc)
    rows, cols, weights = [], [], []
    for k in range(4):
        idx = seg + (k - 1)  # interior index touched by this window slot
        w = w4[:, k]
        start_mask = idx < 0
        end_mask = idx > n_interior - 1
        mid_mask = ~(start_mask | end_mask)
        r = np.arange(n_points)
        if mid_mask.any():
            rows.append(r[mid_mask])
            cols.append(idx[mid_mask])
            weights.append(w[mid_mask])
        if start_mask.any():
            rows.append(r[start_mask])
            cols.append(np.zeros(start_mask.sum(), dtype=int))
            weights.append(2.0 * w[start_mask])
            rows.append(r[start_mask])
            cols.append(np.ones(start_mask.sum(), dtype=int))
            weights.append(-w[start_mask])
        if end_mask.any():
            rows.append(r[end_mask])
            cols.append(np.full(end_mask.sum(), n_interior - 1, dtype=int))
            weights.append(2.0 * w[end_mask])
            rows.append(r[end_mask])
            cols.append(np.full(end_mask.sum(), n_interior - 2, dtype=int))
            weights.append(-w[end_mask])
    return (
        np.concatenate(rows),
        np.concatenate(cols),
        np.concatenate(weights),
    )


def fit_control_points(
    points: np.ndarray, spacing: float, lane_id: int = 0
) -> LaneElement:
    """Least-squares Catmull-Rom fit to ordered points.

    Interior control points sit at arc-length multiples of ``spacing`` along
    the input polyline; the spline is linear in the control points, so the
    fit is one linear solve per coordinate. The residual RMS is reported on
    the returned lane as ``fit_rms``.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != 3 or len(points) < 2:
        raise SpanTooShort("need at least two 3d points")
    arc = _chord_parameters(points)
    total = arc[-1]
    if total < 2.0 * spacing:
        raise SpanTooShort(
            f"arc length {total:.3f} m < 2 x spacing ({2 * spacing:.3f} m)"
        )
    n_seg = _segment_count(total, spacing)
    n_interior = n_seg + 1
    knot_s = np.arange(n_interior) * spacing
    init = _polyline_point(points, knot_s, arc)

    seg = np.clip((arc / spacing).astype(int), 0, n_seg - 1)
    tloc = arc / spacing - seg
    rows, cols, weights = _window_triplets(len(points), seg, tloc, n_interior)
    interior, rms = _solve_fit(rows, cols, weights, points, n_interior, init)

    phantom_start = 2.0 * interior[0] - interior[1]
    phantom_end = 2.0 * interior[-1] - interior[-2]
    cps = np.vstack([phantom_start, interior, phantom_end])
    lane = LaneElement(id=lane_id, control_points=cps, nominal_spacing=spacing)
    lane.fit_rms = rms
    return lane


def sample_spline(lane: LaneElement, step: float) -> np.ndarray:
    """Approximately arc-length-uniform samples over all interior segments.

    The first sample is exactly the second control point and the last is
    exactly the second-to-last control point.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    if len(lane.control_points) < 4:
        raise TooFewControlPoints(f"lane {lane.id}")
    dense, _ = lane.presample(per_segment=32)
    arc = np.concatenate(
        [[0.0], np.cumsum(np.linalg.norm(np.diff(dense, axis=0), axis=1))]
    )
    total = arc[-1]
    n_out = max(2, int(round(total / step)) + 1)
    targets = np.linspace(0.0, total, n_out)
    out = np.empty((n_out, 3))
    out[0] = lane.control_points[1]
    out[-1] = lane.control_points[-2]
    idx = np.clip(np.searchsorted(arc, targets[1:-1], side="right") - 1, 0, len(arc) - 2)
    seg_len = arc[idx + 1] - arc[idx]
    w = np.where(seg_len > 0, (targets[1:-1] - arc[idx]) / np.maximum(seg_len, 1e-300), 0.0)
    out[1:-1] = (1.0 - w[:, None]) * dense[idx] + w[:, None] * dense[idx + 1]
    return out


def _golden_refine(lane: LaneElement, seg: int, t_lo, t_hi, query, iters: int = 60):
    """Golden-section pass over [t_lo, t_hi] minimizing |spline - query|."""
    window = lane.window(seg)
    q = np.asarray(query, dtype=float)

    def dist2(t):
        p = catmull_rom_eval(window, t)
        d = p - q
        return float(d @ d)

    a, b = float(t_lo), float(t_hi)
    x1 = b - GOLDEN * (b - a)
    x2 = a + GOLDEN * (b - a)
    f1, f2 = dist2(x1), dist2(x2)
    for _ in range(iters):
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - GOLDEN * (b - a)
            f1 = dist2(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + GOLDEN * (b - a)
            f2 = dist2(x2)
    t = 0.5 * (a + b)
    return t, catmull_rom_eval(window, t)


def locate_segment(lane: LaneElement, query: np.ndarray) -> SegmentLocation:
    """Nearest segment + refined local parameter for one query point.

    Dense presampling at spacing/10 picks the bracketing interval; one
    golden-section pass refines it. Ties go to the lower segment index.
    """
    if len(lane.control_points) < 4:
        raise TooFewControlPoints(f"lane {lane.id}")
    dense, params = lane.presample(per_segment=10)
    d2 = np.sum((dense - np.asarray(query, dtype=float)) ** 2, axis=1)
    best = int(np.argmin(d2))  # first occurrence wins: lower segment index
    seg, t0 = int(params[best, 0]), params[best, 1]
    t_lo, t_hi = max(0.0, t0 - 0.1), min(1.0, t0 + 0.1)
    t, foot = _golden_refine(lane, seg, t_lo, t_hi, query)
    return SegmentLocation(segment_index=seg, local_parameter=float(t), footpoint=foot)


def locate_many(
    lane: LaneElement, queries: np.ndarray, refine_iters: int = 24
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized footpoint search: returns (segments, ts, footpoints)."""
    queries = np.atleast_2d(np.asarray(queries, dtype=float))
    dense, params = lane.presample(per_segment=10)
    n = len(queries)
    best = np.empty(n, dtype=int)
    for start in range(0, n, 512):
        chunk = queries[start : start + 512]
        d2 = np.sum((chunk[:, None, :] - dense[None, :, :]) ** 2, axis=2)
        best[start : start + 512] = np.argmin(d2, axis=1)
    seg = params[best, 0].astype(int)
    t0 = params[best, 1]
    a = np.maximum(0.0, t0 - 0.1)
    b = np.minimum(1.0, t0 + 0.1)

    windows = np.stack([lane.control_points[seg + k] for k in range(4)], axis=1)

    def dist2(t):
        pts = np.einsum("nk,nkd->nd", catmull_rom_weights(t), windows)
        return np.sum((pts - queries) ** 2, axis=1)

    x1 = b - GOLDEN * (b - a)
    x2 = a + GOLDEN * (b - a)
    f1, f2 = dist2(x1), dist2(x2)
    for _ in range(refine_iters):
        take1 = f1 <= f2
        b = np.where(take1, x2, b)
        a = np.where(take1, a, x1)
        x1 = b - GOLDEN * (b - a)
        x2 = a + GOLDEN * (b - a)
        f1, f2 = dist2(x1), dist2(x2)
    t = 0.5 * (a + b)
    feet = np.einsum("nk,nkd->nd", catmull_rom_weights(t), windows)
    return seg, t, feet


def lane_end_tangent(lane: LaneElement) -> np.ndarray:
    tan = catmull_rom_tangent(lane.window(lane.num_segments - 1), 1.0)
    return tan / np.linalg.norm(tan)


def extend_lane(lane: LaneElement, new_points: np.ndarray) -> LaneElement:
    """Refit the lane tail with new points, freezing earlier control points.

    The tail covers the last two segments; control points before the tail
    are returned bit-identical. New points behind the current lane end are
    dropped; if none remain, PointsNotBeyondExtent is raised.
    """
    new_points = np.atleast_2d(np.asarray(new_points, dtype=float))
    if new_points.size == 0:
        return lane
    end = lane.control_points[-2]
    tangent = lane_end_tangent(lane)
    along = (new_points - end) @ tangent
    keep = along > 1e-9
    if not keep.any():
        raise PointsNotBeyondExtent(
            f"lane {lane.id}: no extension point beyond the current end"
        )
    new_points = new_points[keep]
    order = np.argsort(along[keep], kind="stable")
    new_points = new_points[order]

    spacing = lane.nominal_spacing
    n = len(lane.control_points)
    n_interior = n - 2
    # Anchor two knots before the end so the last two segments are refit.
    anchor = max(0, n_interior - 3)  # interior knot of the last frozen CP
    frozen = lane.control_points[: anchor + 2]  # includes cps[anchor+1]
    c_before = lane.control_points[anchor]  # cp at interior knot anchor-1
    c_anchor = lane.control_points[anchor + 1]  # cp at interior knot anchor

    # Sample the existing tail so the refit remembers the current shape.
    tail_samples = _tail_samples(lane, anchor)
    combined = np.vstack([tail_samples, new_points])
    combined = _dedupe(combined)
    arc = _chord_parameters(combined)
    total = arc[-1]
    n_seg = _segment_count(total, spacing)
    n_unknown = n_seg  # unknown CPs at knots anchor+1 .. anchor+n_seg
    knot_s = (np.arange(n_unknown) + 1) * spacing
    init = _polyline_point(combined, knot_s, arc)

    seg = np.clip((arc / spacing).astype(int), 0, n_seg - 1)
    tloc = arc / spacing - seg
    rows, cols, weights, rhs = _tail_triplets(
        combined, seg, tloc, n_unknown, c_before, c_anchor
    )
    unknown, rms = _solve_fit(rows, cols, weights, rhs, n_unknown, init)

    interior = np.vstack([frozen[1:], unknown])  # drop old start phantom slot
    phantom_start = lane.control_points[0]
    phantom_end = 2.0 * interior[-1] - interior[-2]
    cps = np.vstack([phantom_start, interior, phantom_end])
    out = LaneElement(id=lane.id, control_points=cps, nominal_spacing=spacing)
    out.fit_rms = rms
    return out


def _dedupe(points: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    keep = [0]
    for i in range(1, len(points)):
        if np.linalg.norm(points[i] - points[keep[-1]]) > tol:
            keep.append(i)
    return points[keep]


def _tail_samples(lane: LaneElement, anchor: int) -> np.ndarray:
    """Dense samples of the spline from interior knot ``anchor`` to the end."""
    t = np.linspace(0.0, 1.0, 10, endpoint=False)
    pts = [
        catmull_rom_weights(t) @ lane.window(s)
        for s in range(anchor, lane.num_segments)
    ]
    pts.append(lane.control_points[-2][None, :])
    return np.vstack(pts)


def _tail_triplets(points, seg, tloc, n_unknown, c_before, c_anchor):
    """Triplets for the tail fit; fixed leading CPs move to the RHS.

    Window slot indices are relative: -2 -> c_before, -1 -> c_anchor,
    0..n_unknown-1 -> unknowns, with the end phantom folded as usual.
    """
    w4 = catmull_rom_weights(tloc)
    n_pts = len(points)
    rhs = np.array(points, dtype=float, copy=True)
    rows, cols, weights = [], [], []
    r = np.arange(n_pts)
    for k in range(4):
        idx = seg + (k - 2)  # relative index of the CP in this window slot
        w = w4[:, k]
        fixed_before = idx == -2
        fixed_anchor = idx == -1
        end_mask = idx > n_unknown - 1
        mid_mask = ~(fixed_before | fixed_anchor | end_mask)
        if fixed_before.any():
            rhs[fixed_before] -= np.outer(w[fixed_before], c_before)
        if fixed_anchor.any():
            rhs[fixed_anchor] -= np.outer(w[fixed_anchor], c_anchor)
        if mid_mask.any():
            rows.append(r[mid_mask])
            cols.append(idx[mid_mask])
            weights.append(w[mid_mask])
        if end_mask.any():
            if n_unknown >= 2:
                rows.append(r[end_mask])
                cols.append(np.full(end_mask.sum(), n_unknown - 1, dtype=int))
                weights.append(2.0 * w[end_mask])
                rows.append(r[end_mask])
                cols.append(np.full(end_mask.sum(), n_unknown - 2, dtype=int))
                weights.append(-w[end_mask])
            else:
                # single unknown: phantom = 2*U0 - c_anchor
                rows.append(r[end_mask])
                cols.append(np.zeros(end_mask.sum(), dtype=int))
                weights.append(2.0 * w[end_mask])
                rhs[end_mask] += np.outer(w[end_mask], c_anchor)
    return (
        np.concatenate(rows),
        np.concatenate(cols),
        np.concatenate(weights),
        rhs,
    )
