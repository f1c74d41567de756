"""Multi-scale sliding-window detection and the face->feature->point hierarchy.

Scan schedule
-------------

Window sizes grow from the configured minimum by ``scale_factor`` until
they no longer fit the ROI (duplicate rounded sizes are scanned once).
At each size the step is max(1, round(size / cascade_window)) and the
position grid contains the multiples of the step from both ends of the
feasible range, so the grid maps onto itself under horizontal or
vertical mirroring; that closure is what makes patch-flip detection and
mirrored-cascade detection agree window for window.  Windows whose
scaled cells would read outside the image (possible for rotated cells
at fractional scales) are skipped.

Grouping
--------

Raw rects a, b are similar iff their top-left corners and their
bottom-right corners each agree within 0.2*max of the sizes
(|a.x-b.x| <= 0.2*max(a.w,b.w) and |(a.x+a.w)-(b.x+b.w)| <= the same
bound, likewise for y) and the sizes agree within 20 percent.  Testing
both corners makes the relation invariant under mirroring, so grouping
commutes with patch flips.  Clusters are the connected components of
that relation; each cluster of at least ``min_neighbors`` members emits
one detection whose point is the round-half-even exact mean of the
member centres (a reflection-equivariant rounding) and whose rect is
the mean size centred on that point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .cascade import Cascade
from .geom import (
    EyeCorner,
    InsufficientPointsError,
    Point2,
    TiltState,
    VerticalLineError,
    estimate_tilt,
    infer_fourth_corner,
    rotate_image,
    rotate_point,
)
from fractions import Fraction

from .haar import ScaledCells, round_half_up, scale_feature
from .raster import BoundsError, GrayImage, IntegralTables, Rect, build_tables

# the fourteen detectable points, grouped by their parent facial feature
POINT_PARENTS = {
    "left_brow_inner": "left_eye",
    "left_brow_outer": "left_eye",
    "right_brow_inner": "right_eye",
    "right_brow_outer": "right_eye",
    "left_eye_outer": "left_eye",
    "left_eye_inner": "left_eye",
    "left_pupil": "left_eye",
    "right_eye_inner": "right_eye",
    "right_eye_outer": "right_eye",
    "right_pupil": "right_eye",
    "left_nostril": "nose",
    "right_nostril": "nose",
    "left_mouth_corner": "mouth",
    "right_mouth_corner": "mouth",
}
DETECTED_POINT_NAMES = tuple(POINT_PARENTS)
FEATURE_NAMES = ("left_eye", "right_eye", "nose", "mouth")

EYE_CORNER_POINTS = {
    "left_eye_outer": EyeCorner.LEFT_OUTER,
    "left_eye_inner": EyeCorner.LEFT_INNER,
    "right_eye_inner": EyeCorner.RIGHT_INNER,
    "right_eye_outer": EyeCorner.RIGHT_OUTER,
}


@dataclass
class DetectorConfig:
    cascade: Cascade
    roi: Rect | None = None  # None scans the whole image
    scale_factor: float = 1.1
    min_neighbors: int = 3
    min_w: int = 0  # 0 means the cascade window size
    min_h: int = 0
    is_point: bool = True
    on_right_side: bool = False
    ok: bool = False
    # optional per-detector search prior inside the parent feature rect:
    # (dx, dy, half) in units of the parent's size; the hierarchy then
    # searches a square of half-width half*parent_w centred at
    # parent_centre + (dx*parent_w, dy*parent_h) instead of the whole
    # expanded parent rect
    sub_roi: tuple[float, float, float] | None = None

    def __post_init__(self):
        if self.scale_factor <= 1.0:
            raise ValueError("scale_factor must exceed 1")
        if self.min_w == 0:
            self.min_w = self.cascade.window_w
        if self.min_h == 0:
            self.min_h = self.cascade.window_h
        if self.min_w < self.cascade.window_w or self.min_h < self.cascade.window_h:
            raise ValueError("min size is below the cascade window")


@dataclass(frozen=True)
class Detection:
    """A (possibly clustered) window with its centre in half-pixel units.

    ``point2x`` is twice the exact window centre (2x + w - 1, 2y + h - 1
    for a raw window); keeping it doubled makes mirroring exact, since
    the reflection axis 2*(extent - 1) is always even.  ``point`` floors
    it to whole pixels (the centre pixel for odd sizes, the left/upper
    of the two central pixels for even sizes).
    """

    rect: Rect
    neighbors: int = 1
    point2x: tuple[int, int] | None = None
    # summed stump margin sum(alpha * parity * (threshold - value)); exactly
    # mirror-invariant, used to break otherwise symmetric selection ties
    margin: float = 0.0

    def __post_init__(self):
        if self.point2x is None:
            object.__setattr__(
                self,
                "point2x",
                (2 * self.rect.x + self.rect.w - 1, 2 * self.rect.y + self.rect.h - 1),
            )

    @property
    def point(self) -> tuple[int, int]:
        return self.point2x[0] // 2, self.point2x[1] // 2


@dataclass
class HierarchyResult:
    """Outcome of one face->features->points pass."""

    face_found: bool = False
    face: Rect | None = None
    features: dict = field(default_factory=dict)
    points: dict = field(default_factory=lambda: {n: None for n in DETECTED_POINT_NAMES})
    tilt_applied: float = 0.0


# --- position grids -------------------------------------------------------------


def _grid_positions(extent: int, step: int) -> np.ndarray:
    """Multiples of ``step`` in [0, extent] taken from both ends.

    The result is its own mirror image (x -> extent - x), which keeps
    flipped-patch scans aligned with direct scans.
    """
    fwd = np.arange(0, extent + 1, step)
    rev = extent - fwd
    return np.unique(np.concatenate([fwd, rev]))


def _scan_sizes(c: Cascade, cfg: DetectorConfig, roi: Rect):
    """Deduplicated (width, height, exact scale) triples that fit the ROI.

    Widths follow min_w * factor^k; the height comes from the same exact
    width ratio so cells and window box stay mutually consistent.
    """
    sizes = []
    k = 0
    while True:
        w = round_half_up(cfg.min_w * cfg.scale_factor**k)
        frac = Fraction(w, c.window_w)
        h = round_half_up(c.window_h * frac)
        if w > roi.w or h > roi.h:
            break
        if not sizes or sizes[-1][0] != (w, h):
            sizes.append(((w, h), frac))
        k += 1
    return sizes


def _pyr_vec(tables: IntegralTables, ax: np.ndarray, ay: np.ndarray) -> np.ndarray:
    c = (ax + ay) & 1
    alpha = (ax + ay - c) // 2
    beta = (ay - ax - c) // 2 + tables._rot_off
    out = np.zeros(ax.shape, dtype=np.int64)
    for cls in (0, 1):
        m = c == cls
        if not m.any():
            continue
        tab = tables._rot[cls]
        a, b = alpha[m], beta[m]
        valid = (a >= 0) & (b >= 0)
        a = np.clip(a, 0, tab.shape[0] - 2)
        b = np.clip(b, 0, tab.shape[1] - 2)
        v = tab[a + 1, b + 1]
        v[~valid] = 0
        out[m] = v
    return out


def _cells_value_vec(
    cells: ScaledCells, tables: IntegralTables, oxs: np.ndarray, oys: np.ndarray
) -> np.ndarray:
    pos = np.zeros(oxs.shape, dtype=np.float64)
    neg = np.zeros(oxs.shape, dtype=np.float64)
    s = tables.sums
    for r, wt in zip(cells.rects, cells.weights):
        if cells.rotated:
            x = oxs + r.x
            y = oys + r.y
            cell = (
                _pyr_vec(tables, x + r.w - r.h, y + r.w + r.h - 2)
                - _pyr_vec(tables, x - r.h, y + r.h - 2)
                - _pyr_vec(tables, x + r.w, y + r.w - 2)
                + _pyr_vec(tables, x, y - 2)
            )
        else:
            x1 = oxs + r.x
            y1 = oys + r.y
            cell = s[y1 + r.h, x1 + r.w] - s[y1, x1 + r.w] - s[y1 + r.h, x1] + s[y1, x1]
        if wt > 0:
            pos += wt * cell
        else:
            neg += -wt * cell
    return pos - neg


def _inv_sigma_vec(
    tables: IntegralTables, oxs: np.ndarray, oys: np.ndarray, w: int, h: int
) -> np.ndarray:
    n = w * h
    s, sq = tables.sums, tables.sq_sums
    s1 = s[oys + h, oxs + w] - s[oys, oxs + w] - s[oys + h, oxs] + s[oys, oxs]
    s2 = sq[oys + h, oxs + w] - sq[oys, oxs + w] - sq[oys + h, oxs] + sq[oys, oxs]
    mean = s1 / n
    var = s2 / n - mean * mean
    sigma = np.where(var > 0, np.sqrt(np.maximum(var, 0.0)), 0.0)
    return np.where(sigma < 1.0, 1.0, 1.0 / np.where(sigma > 0, sigma, 1.0))


def _cell_overhang(cells_list: list[ScaledCells], win_w: int, win_h: int):
    """How far any cell extends beyond the scaled window box on each side."""
    left = top = right = bottom = 0
    for cells in cells_list:
        for r in cells.rects:
            if cells.rotated:
                x0, y0 = r.x - (r.h - 1), r.y
                x1, y1 = r.x + r.w - 1, r.y + r.w + r.h - 2
            else:
                x0, y0, x1, y1 = r.x, r.y, r.x + r.w - 1, r.y + r.h - 1
            left = max(left, -x0)
            top = max(top, -y0)
            right = max(right, x1 - (win_w - 1))
            bottom = max(bottom, y1 - (win_h - 1))
    return left, top, right, bottom


def scan_roi(c: Cascade, image, cfg: DetectorConfig) -> list[Detection]:
    """All accepted windows over the scan schedule, in deterministic order.

    ``image`` may be a GrayImage or prebuilt IntegralTables (built with
    rotated sums when the cascade uses the extended feature set).
    """
    tables = image if isinstance(image, IntegralTables) else _tables_for(c, image)
    roi = cfg.roi or Rect(0, 0, tables.width, tables.height)
    if roi.x < 0 or roi.y < 0 or roi.x + roi.w > tables.width or roi.y + roi.h > tables.height:
        raise BoundsError(f"roi {roi} outside {tables.width}x{tables.height} image")
    out: list[Detection] = []
    weaks = [(st, alpha, weak) for st in c.stages for alpha, weak in st.strong.rounds]
    for (w_k, h_k), frac in _scan_sizes(c, cfg, roi):
        scaled: list[ScaledCells] = [scale_feature(wk.feature, frac) for _, _, wk in weaks]
        l, t, rgt, btm = _cell_overhang(scaled, w_k, h_k)
        step_x = max(1, round_half_up(w_k / c.window_w))
        step_y = max(1, round_half_up(h_k / c.window_h))
        xs = _grid_positions(roi.w - w_k, step_x) + roi.x
        ys = _grid_positions(roi.h - h_k, step_y) + roi.y
        # drop positions whose overhanging cells would leave the image
        xs = xs[(xs - l >= 0) & (xs + w_k - 1 + rgt <= tables.width - 1)]
        ys = ys[(ys - t >= 0) & (ys + h_k - 1 + btm <= tables.height - 1)]
        if len(xs) == 0 or len(ys) == 0:
            continue
        gy, gx = np.meshgrid(ys, xs, indexing="ij")
        oxs = gx.ravel()
        oys = gy.ravel()
        inv = _inv_sigma_vec(tables, oxs, oys, w_k, h_k)
        alive = np.ones(len(oxs), dtype=bool)
        margin = np.zeros(len(oxs))
        ci = 0
        for stage in c.stages:
            idx = np.nonzero(alive)[0]
            if len(idx) == 0:
                break
            score = np.zeros(len(idx))
            for alpha, weak in stage.strong.rounds:
                cells = scaled[ci]
                ci += 1
                v = _cells_value_vec(cells, tables, oxs[idx], oys[idx]) * inv[idx]
                score += alpha * (weak.parity * v < weak.parity * weak.threshold)
                margin[idx] += alpha * (weak.parity * (weak.threshold - v))
            alive[idx[score < stage.strong.threshold]] = False
        for i in np.nonzero(alive)[0]:
            out.append(
                Detection(Rect(int(oxs[i]), int(oys[i]), w_k, h_k), margin=float(margin[i]))
            )
    return out


def _tables_for(c: Cascade, image: GrayImage) -> IntegralTables:
    from .haar import FeatureSet

    return build_tables(image, want_rotated=c.feature_set is FeatureSet.ALL)


def group_detections(raw: list[Detection], min_neighbors: int) -> list[Detection]:
    """Connected-component clustering under the documented similarity rule."""
    n = len(raw)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(i, j):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[rj] = ri

    if n > 64:
        xs = np.array([d.rect.x for d in raw])
        ys = np.array([d.rect.y for d in raw])
        ws = np.array([d.rect.w for d in raw])
        hs = np.array([d.rect.h for d in raw])
        mw = 0.2 * np.maximum(ws[:, None], ws[None, :])
        mh = 0.2 * np.maximum(hs[:, None], hs[None, :])
        sim = (
            (np.abs(xs[:, None] - xs[None, :]) <= mw)
            & (np.abs(ys[:, None] - ys[None, :]) <= mh)
            & (np.abs((xs + ws)[:, None] - (xs + ws)[None, :]) <= mw)
            & (np.abs((ys + hs)[:, None] - (ys + hs)[None, :]) <= mh)
            & (np.abs(ws[:, None] - ws[None, :]) <= mw)
            & (np.abs(hs[:, None] - hs[None, :]) <= mh)
        )
        for i, j in zip(*np.nonzero(np.triu(sim, 1))):
            union(int(i), int(j))
    else:
        for i in range(n):
            a = raw[i].rect
            for j in range(i + 1, n):
                b = raw[j].rect
                if rects_similar(a, b):
                    union(i, j)
    clusters: dict[int, list[int]] = {}
    for i in range(n):
        clusters.setdefault(find(i), []).append(i)
    out = []
    for members in clusters.values():
        if len(members) < min_neighbors:
            continue
        k = len(members)
        # centre means in half-pixel units, rounded half-to-even; the
        # doubled axis keeps the rounding reflection-equivariant, so a
        # mirrored cluster rounds to exactly the mirrored centre
        px2 = _round_half_even_frac(sum(2 * raw[i].rect.x + raw[i].rect.w - 1 for i in members), k)
        py2 = _round_half_even_frac(sum(2 * raw[i].rect.y + raw[i].rect.h - 1 for i in members), k)
        w = max(1, round_half_up(sum(raw[i].rect.w for i in members) / k))
        h = max(1, round_half_up(sum(raw[i].rect.h for i in members) / k))
        rect = Rect((px2 - w + 1) // 2, (py2 - h + 1) // 2, w, h)
        # fsum: exactly rounded, so the cluster margin is independent of
        # member order and survives mirroring bit-for-bit
        mg = math.fsum(raw[i].margin for i in members)
        out.append(Detection(rect, neighbors=k, point2x=(px2, py2), margin=mg))
    out.sort(key=lambda d: (d.rect.y, d.rect.x, d.rect.h, d.rect.w, d.neighbors))
    return out


def _round_half_even_frac(num: int, den: int) -> int:
    q, r = divmod(num, den)
    if 2 * r < den:
        return q
    if 2 * r > den:
        return q + 1
    return q if q % 2 == 0 else q + 1


def rects_similar(a: Rect, b: Rect) -> bool:
    mw = 0.2 * max(a.w, b.w)
    mh = 0.2 * max(a.h, b.h)
    return (
        abs(a.x - b.x) <= mw
        and abs(a.y - b.y) <= mh
        and abs((a.x + a.w) - (b.x + b.w)) <= mw
        and abs((a.y + a.h) - (b.y + b.h)) <= mh
        and abs(a.w - b.w) <= mw
        and abs(a.h - b.h) <= mh
    )


def select_result(
    ds: list[Detection], is_point: bool, roi_center: tuple[float, float] | None = None
) -> Detection | None:
    """Single result: largest region for features, most neighbours for points."""
    if not ds:
        return None
    if not is_point:
        return min(
            ds,
            key=lambda d: (-d.rect.w * d.rect.h, -d.neighbors, d.rect.y, d.rect.x),
        )

    def point_key(d: Detection):
        if roi_center is None:
            dist = 0
        else:
            # roi_center in pixels; compare in exact half-pixel units
            px2, py2 = d.point2x
            dist = (px2 - round_half_up(2 * roi_center[0])) ** 2 + (
                py2 - round_half_up(2 * roi_center[1])
            ) ** 2
        # the margin breaks mirror-symmetric position ties by content
        return (-d.neighbors, dist, -d.margin, d.rect.y, d.rect.x)

    return min(ds, key=point_key)


def detect_point(image: GrayImage, cfg: DetectorConfig) -> tuple[int, int] | None:
    """One point coordinate inside cfg.roi, flipping the patch for right-side points.

    Right-side detectors mirror the ROI patch, scan it with the
    left-side-trained cascade, and mirror the winning coordinate back
    (x -> roi_w - 1 - x).  Because the scan grid, grouping relation, and
    rounded cluster centres are all mirror-covariant, this is
    coordinate-for-coordinate identical to scanning the unmirrored
    patch with the mirrored cascade.
    """
    roi = cfg.roi or Rect(0, 0, image.width, image.height)
    patch = GrayImage(image.pixels[roi.y : roi.y + roi.h, roi.x : roi.x + roi.w])
    if cfg.on_right_side:
        patch = patch.mirrored()
    local = replace(cfg, roi=Rect(0, 0, roi.w, roi.h), ok=False)
    raw = scan_roi(cfg.cascade, _tables_for(cfg.cascade, patch), local)
    grouped = group_detections(raw, cfg.min_neighbors)
    best = select_result(grouped, True, roi_center=((roi.w - 1) / 2.0, (roi.h - 1) / 2.0))
    cfg.ok = best is not None
    if best is None:
        return None
    px2, py2 = best.point2x
    if cfg.on_right_side:
        px2 = 2 * (roi.w - 1) - px2  # mirror back in half-pixel units
    return roi.x + px2 // 2, roi.y + py2 // 2


def detect_region(image, cfg: DetectorConfig) -> Rect | None:
    """One grouped detection rect inside cfg.roi (faces and facial features).

    Selection honours ``cfg.is_point``: region detectors normally want
    the largest cluster, but a config may prefer the most corroborated
    one.
    """
    raw = scan_roi(cfg.cascade, image, cfg)
    grouped = group_detections(raw, cfg.min_neighbors)
    best = select_result(grouped, cfg.is_point)
    cfg.ok = best is not None
    return best.rect if best else None


@dataclass(frozen=True)
class HierarchyGeometry:
    """Fractions carving feature search regions out of the face rect.

    The values below are this artifact's defaults; they are plain
    configuration, not measurements.
    """

    eye_band: float = 0.55  # eyes + brows: upper band, split at the midline
    nose_x: tuple[float, float] = (0.30, 0.70)
    nose_y: tuple[float, float] = (0.35, 0.75)
    mouth_x: tuple[float, float] = (0.15, 0.85)
    mouth_y: tuple[float, float] = (2.0 / 3.0, 1.0)
    point_expand: float = 0.40  # each side of a feature rect, clamped to image

    def feature_roi(self, face: Rect, name: str) -> Rect:
        fx, fy, fw, fh = face.x, face.y, face.w, face.h
        if name == "left_eye":
            return _subrect(face, 0.0, 0.0, 0.5, self.eye_band)
        if name == "right_eye":
            return _subrect(face, 0.5, 0.0, 1.0, self.eye_band)
        if name == "nose":
            return _subrect(face, self.nose_x[0], self.nose_y[0], self.nose_x[1], self.nose_y[1])
        if name == "mouth":
            return _subrect(face, self.mouth_x[0], self.mouth_y[0], self.mouth_x[1], self.mouth_y[1])
        raise ValueError(f"unknown feature {name!r}")

    def point_roi(self, feature: Rect, image_w: int, image_h: int) -> Rect:
        ex = round_half_up(feature.w * self.point_expand)
        ey = round_half_up(feature.h * self.point_expand)
        x0 = max(0, feature.x - ex)
        y0 = max(0, feature.y - ey)
        x1 = min(image_w, feature.x + feature.w + ex)
        y1 = min(image_h, feature.y + feature.h + ey)
        return Rect(x0, y0, x1 - x0, y1 - y0)


def _subrect(r: Rect, fx0: float, fy0: float, fx1: float, fy1: float) -> Rect:
    x0 = r.x + round_half_up(r.w * fx0)
    y0 = r.y + round_half_up(r.h * fy0)
    x1 = r.x + round_half_up(r.w * fx1)
    y1 = r.y + round_half_up(r.h * fy1)
    return Rect(x0, y0, max(1, x1 - x0), max(1, y1 - y0))


def detect_hierarchy(
    image: GrayImage,
    face_cfg: DetectorConfig,
    feature_cfgs: dict[str, DetectorConfig],
    point_cfgs: dict[str, DetectorConfig],
    tilt_state: TiltState,
    geometry: HierarchyGeometry = HierarchyGeometry(),
) -> HierarchyResult:
    """Face, then features, then points, with inter-frame tilt correction.

    The working image is counter-rotated by the mode's share of the
    carried tilt before detection; detected coordinates are mapped back
    to the input frame, and the tilt estimate from the detected eye
    corners (after fourth-corner inference) updates ``tilt_state`` for
    the next frame.  A face-absent frame resets the carried tilt.
    """
    result = HierarchyResult()
    correction = tilt_state.mode.correction(tilt_state.alpha)
    center = Point2((image.width - 1) / 2.0, (image.height - 1) / 2.0)
    work = image if correction == 0.0 else rotate_image(image, center, -correction)
    result.tilt_applied = correction

    face = detect_region(work, face_cfg)
    if face is None:
        tilt_state.alpha = 0.0
        return result
    result.face_found = True
    result.face = face

    feature_rects: dict[str, Rect | None] = {}
    for name in FEATURE_NAMES:
        cfg = feature_cfgs.get(name)
        if cfg is None:
            feature_rects[name] = None
            continue
        cfg.roi = _clamp_rect(geometry.feature_roi(face, name), work.width, work.height)
        feature_rects[name] = detect_region(work, cfg)
    result.features = feature_rects

    for name, cfg in point_cfgs.items():
        parent = feature_rects.get(POINT_PARENTS[name])
        if parent is None:
            cfg.ok = False
            continue
        if cfg.sub_roi is not None:
            cfg.roi = _sub_roi_rect(
                parent, cfg.sub_roi, cfg.cascade.window_w, work.width, work.height
            )
        else:
            cfg.roi = geometry.point_roi(parent, work.width, work.height)
        coord = detect_point(work, cfg)
        if coord is not None:
            result.points[name] = Point2(float(coord[0]), float(coord[1]))

    corners = {
        corner: result.points[name]
        for name, corner in EYE_CORNER_POINTS.items()
        if result.points.get(name) is not None
    }
    if len(corners) == 3:
        missing = next(c for c in EyeCorner if c not in corners)
        try:
            inferred = infer_fourth_corner(corners, missing)
        except ValueError:
            inferred = None
        if inferred is not None:
            name = next(n for n, c in EYE_CORNER_POINTS.items() if c is missing)
            result.points[name] = inferred
            corners[missing] = inferred

    if len(corners) >= 2:
        try:
            measured = estimate_tilt(list(corners.values()))
            tilt_state.alpha = correction + measured
        except (VerticalLineError, InsufficientPointsError):
            pass  # keep the carried tilt

    if correction != 0.0:
        for name, p in result.points.items():
            if p is not None:
                result.points[name] = rotate_point(p, center, correction)
    return result


def _clamp_rect(r: Rect, w: int, h: int) -> Rect:
    x0 = max(0, r.x)
    y0 = max(0, r.y)
    x1 = min(w, r.x + r.w)
    y1 = min(h, r.y + r.h)
    return Rect(x0, y0, max(1, x1 - x0), max(1, y1 - y0))


def _sub_roi_rect(parent: Rect, sub_roi, window: int, image_w: int, image_h: int) -> Rect:
    """Per-detector search square inside/around the parent feature rect."""
    dx, dy, half_u = sub_roi
    cx = parent.x + (parent.w - 1) / 2.0 + dx * parent.w
    cy = parent.y + (parent.h - 1) / 2.0 + dy * parent.h
    half = max(half_u * parent.w, window / 2.0 + 1)
    r = Rect(
        round_half_up(cx - half),
        round_half_up(cy - half),
        max(window, round_half_up(2 * half)),
        max(window, round_half_up(2 * half)),
    )
    return _clamp_rect(r, image_w, image_h)
