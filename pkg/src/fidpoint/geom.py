"""Line fitting, tilt estimation, rotation, and the inter-ocular metric.

Angles follow image coordinates (y grows downward): positive alpha
rotates the +x axis toward +y, i.e. clockwise on screen.  Tilt is the
angle of the least-squares line through the eye corners; correcting a
tilt of alpha means rotating image and points by -alpha about the image
centre.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .raster import GrayImage


class VerticalLineError(ValueError):
    """All points share one x coordinate; the slope is undefined."""


class InsufficientPointsError(ValueError):
    pass


class TiltMode(enum.Enum):
    NONE = "none"
    FULL = "full"
    HALF = "half"

    def correction(self, alpha: float) -> float:
        """Angle actually corrected for an estimated tilt ``alpha``."""
        if self is TiltMode.NONE:
            return 0.0
        if self is TiltMode.FULL:
            return alpha
        return alpha / 2.0


@dataclass(frozen=True)
class Point2:
    x: float
    y: float


@dataclass(frozen=True)
class LineFit:
    m: float
    c: float
    residual: float  # root-mean-square in y


@dataclass
class TiltState:
    alpha: float = 0.0
    mode: TiltMode = TiltMode.NONE


def svd_lls(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Minimum-norm least squares via the SVD pseudoinverse.

    Singular values below 1e-10 times the largest are treated as zero.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != 2 or a.shape[0] != b.shape[0]:
        raise ValueError(f"need an n x 2 system, got {a.shape} and {b.shape}")
    if a.shape[0] < 2:
        raise InsufficientPointsError("need at least two rows")
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    if s[0] == 0:
        return np.zeros(2)
    inv = np.where(s >= 1e-10 * s[0], 1.0 / np.where(s > 0, s, 1.0), 0.0)
    return vt.T @ (inv * (u.T @ b))


def fit_line(points: list[Point2]) -> LineFit:
    """Least-squares y = m*x + c through two or more points.

    The system is built from design rows (x, 1) against targets y;
    this is equivalent to normalising the line equation by its
    intercept wherever that intercept is nonzero, but stays regular for
    lines through the origin.
    """
    if len(points) < 2:
        raise InsufficientPointsError("need at least two points")
    xs = np.array([p.x for p in points])
    ys = np.array([p.y for p in points])
    if np.ptp(xs) == 0:
        raise VerticalLineError(f"all points at x = {xs[0]}")
    a = np.column_stack([xs, np.ones_like(xs)])
    m, c = svd_lls(a, ys)
    resid = ys - (m * xs + c)
    return LineFit(float(m), float(c), float(np.sqrt(np.mean(resid * resid))))


def estimate_tilt(eye_corners: list[Point2]) -> float:
    """Tilt angle alpha = atan(m) of the best-fit eye-corner line."""
    return math.atan(fit_line(eye_corners).m)


def rotate_point(p: Point2, center: Point2, alpha: float) -> Point2:
    """Rotate ``p`` about ``center`` by ``alpha`` (clockwise on screen)."""
    ca, sa = math.cos(alpha), math.sin(alpha)
    dx, dy = p.x - center.x, p.y - center.y
    return Point2(center.x + dx * ca - dy * sa, center.y + dx * sa + dy * ca)


def rotate_image(img: GrayImage, center: Point2, alpha: float) -> GrayImage:
    """Rotate image content by ``alpha`` about ``center``.

    A source point q appears at rotate_point(q, center, alpha) in the
    output; destination pixels are bilinearly sampled from the inverse
    mapping, with out-of-image samples black.  Output size equals input
    size, so corner data may be discarded.
    """
    h, w = img.pixels.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    ca, sa = math.cos(-alpha), math.sin(-alpha)
    dx = xs - center.x
    dy = ys - center.y
    sx = center.x + dx * ca - dy * sa
    sy = center.y + dx * sa + dy * ca
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = sx - x0
    fy = sy - y0
    out = np.zeros((h, w), dtype=np.float64)
    src = img.pixels.astype(np.float64)
    for oy, ox, wgt in (
        (0, 0, (1 - fx) * (1 - fy)),
        (0, 1, fx * (1 - fy)),
        (1, 0, (1 - fx) * fy),
        (1, 1, fx * fy),
    ):
        px = x0 + ox
        py = y0 + oy
        inside = (px >= 0) & (px < w) & (py >= 0) & (py < h)
        out[inside] += wgt[inside] * src[py[inside], px[inside]]
    return GrayImage(np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8))


class EyeCorner(enum.Enum):
    """Eye corners from the viewer's perspective."""

    LEFT_OUTER = "left_outer"
    LEFT_INNER = "left_inner"
    RIGHT_INNER = "right_inner"
    RIGHT_OUTER = "right_outer"


def infer_fourth_corner(known: dict[EyeCorner, Point2], missing: EyeCorner) -> Point2:
    """Reconstruct a missing eye corner assuming equal eye width and alignment.

    ``known`` must contain the complete other eye plus the remaining
    corner of the incomplete eye.  The eye vector d runs from each
    eye's viewer-left corner to its viewer-right corner, identically
    for both eyes.
    """
    if missing in known or len(known) != 3:
        raise ValueError("exactly the three other corners must be supplied")
    left_complete = EyeCorner.LEFT_OUTER in known and EyeCorner.LEFT_INNER in known
    right_complete = EyeCorner.RIGHT_INNER in known and EyeCorner.RIGHT_OUTER in known
    if missing in (EyeCorner.RIGHT_INNER, EyeCorner.RIGHT_OUTER):
        if not left_complete:
            raise ValueError("inferring a right corner needs the complete left eye")
        a, b = known[EyeCorner.LEFT_OUTER], known[EyeCorner.LEFT_INNER]
    else:
        if not right_complete:
            raise ValueError("inferring a left corner needs the complete right eye")
        a, b = known[EyeCorner.RIGHT_INNER], known[EyeCorner.RIGHT_OUTER]
    dx, dy = b.x - a.x, b.y - a.y  # viewer-left corner -> viewer-right corner
    if missing is EyeCorner.RIGHT_OUTER:
        base = known[EyeCorner.RIGHT_INNER]
        return Point2(base.x + dx, base.y + dy)
    if missing is EyeCorner.RIGHT_INNER:
        base = known[EyeCorner.RIGHT_OUTER]
        return Point2(base.x - dx, base.y - dy)
    if missing is EyeCorner.LEFT_INNER:
        base = known[EyeCorner.LEFT_OUTER]
        return Point2(base.x + dx, base.y + dy)
    base = known[EyeCorner.LEFT_INNER]
    return Point2(base.x - dx, base.y - dy)


def interocular_success(
    detected: Point2,
    truth: Point2,
    left_eye_center: Point2,
    right_eye_center: Point2,
    fraction: float = 0.10,
) -> bool:
    """Success iff the error is within ``fraction`` of the inter-ocular distance.

    The boundary is inclusive: an error of exactly the allowed margin
    still counts as success.
    """
    iod = math.hypot(right_eye_center.x - left_eye_center.x,
                     right_eye_center.y - left_eye_center.y)
    if iod == 0:
        raise ValueError("eye centers coincide; metric undefined")
    err = math.hypot(detected.x - truth.x, detected.y - truth.y)
    return err <= fraction * iod
