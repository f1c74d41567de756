"""Synthetic corner-pattern datasets for end-to-end training runs.

Each image is textured noise (box-blurred uniform noise) with one
asymmetric corner-like pattern planted at a known point; the matching
markup places the left eye corners so that the planted point is the
left outer eye corner and all eye corners are level, giving a constant
13 px scale reference and zero tilt.  Deterministic per seed.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .geom import Point2
from .raster import GrayImage, save_pgm
from .samples import DEFAULT_SCHEME, Markup, write_points_file

TARGET_POINT = "left_eye_outer"


def textured_noise(rng: np.random.Generator, size: int) -> np.ndarray:
    """Box-blurred uniform noise: moderate-contrast background texture."""
    base = rng.integers(0, 256, (size + 2, size + 2)).astype(np.float64)
    c = np.cumsum(np.cumsum(base, 0), 1)
    c = np.pad(c, ((1, 0), (1, 0)))
    smooth = (c[3:, 3:] - c[:-3, 3:] - c[3:, :-3] + c[:-3, :-3]) / 9.0
    return np.clip(np.floor(smooth + 0.5), 0, 255).astype(np.uint8)


def plant_corner(px: np.ndarray, x: int, y: int) -> None:
    """Asymmetric corner: a bright arm left, a dark arm below, a bright dot."""
    px[y - 1 : y + 1, x - 5 : x + 2] = 255
    px[y + 1 : y + 7, x - 1 : x + 1] = 0
    px[y + 3 : y + 5, x + 3 : x + 5] = 255


def corner_markup(point: Point2, image_path: str, size: int) -> Markup:
    """Markup whose left outer eye corner is the planted point."""
    pts = [Point2(2.0, 2.0)] * DEFAULT_SCHEME.size
    lo, li, ri, ro = DEFAULT_SCHEME.eye_corners
    pts[lo] = point
    pts[li] = Point2(point.x + 13.0, point.y)
    pts[ri] = Point2(point.x + 18.0, point.y)
    pts[ro] = Point2(point.x + 31.0, point.y)
    pts[0] = Point2(point.x + 6.5, point.y)  # left pupil (eye centre)
    pts[1] = Point2(point.x + 24.5, point.y)  # right pupil
    return Markup(image_path, pts)


def make_image(seed: int, size: int = 60) -> tuple[GrayImage, Point2]:
    rng = np.random.default_rng(seed)
    px = textured_noise(rng, size).astype(np.int16)
    x = int(rng.integers(14, 27))
    y = int(rng.integers(14, size - 14))
    plant_corner(px, x, y)
    return GrayImage(np.clip(px, 0, 255).astype(np.uint8)), Point2(float(x), float(y))


def write_dataset(
    directory, count: int, seed: int, size: int = 60, prefix: str = "img"
) -> list[tuple[str, Point2]]:
    """Write PGM + points files; returns (image filename, planted point) pairs."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    out = []
    for i in range(count):
        img, point = make_image(seed * 1_000_003 + i, size)
        name = f"{prefix}_{i:04d}"
        (directory / f"{name}.pgm").write_bytes(save_pgm(img))
        markup = corner_markup(point, f"{name}.pgm", size)
        (directory / f"{name}.pts").write_bytes(write_points_file(markup.points))
        out.append((f"{name}.pgm", point))
    return out
