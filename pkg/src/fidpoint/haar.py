"""Haar-like features over integral tables.

Cell layouts and sign conventions
---------------------------------

Upright kinds are grids of equal base cells (w x h pixels each); the
feature value is the signed, area-balanced sum of cell pixel sums,
multiplied by the window's inverse standard deviation.  Diagrams show
the sign of each cell (``-`` subtracts, ``+`` adds):

    EDGE_H   [-][+]          value = right - left
    EDGE_V   [-]             value = bottom - top
             [+]
    LINE_H   [-][2+][-]      centre counts twice
    LINE_V   [-]
             [2+]
             [-]
    DIAG     [+][-]          opposing diagonals
             [-][+]
    CENTER_SURROUND          outer 3w x 3h weighted -1,
             [- - -]         inner w x h weighted +9
             [- 9 -]
             [- - -]

45-degree kinds place rotated cells along the image diagonals.  A
rotated cell with apex pixel (x, y) covers the w*h pixels
(x + a - b, y + a + b) for 0 <= a < w, 0 <= b < h.  ``_45`` kinds chain
cells along the down-right diagonal (EDGE_H_45, LINE_H_45) or the
down-left diagonal (EDGE_V_45, LINE_V_45), first cell negative.

Every kind satisfies sum(weight * pixel_count) = 0, so all features
respond 0 on uniform input; rescaled cells are re-balanced to keep that
exact after rounding.

Enumeration convention
----------------------

:func:`enumerate_features` is exhaustive with unit steps in position
and base-cell size: every feature whose footprint fits the window
appears exactly once, ordered by (kind, y, x, h, w) ascending.  Under
this convention a 24x24 window yields 162,336 BASIC features; coarser
published figures for the same window arise from sub-sampled scale or
position grids (see README for the reconciliation).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .raster import BoundsError, IntegralTables, Rect, rect_sum, rotated_rect_sum


def round_half_up(v) -> int:
    """Deterministic scaling round: nearest integer, halves toward +inf.

    Accepts floats and Fractions; Fraction input is rounded exactly,
    which keeps scaled cell geometry consistent under mirroring.
    """
    if isinstance(v, Fraction):
        return (2 * v.numerator + v.denominator) // (2 * v.denominator)
    return int(math.floor(v + 0.5))


def as_scale(factor) -> Fraction:
    """Exact rational form of a scale factor (floats convert exactly)."""
    return factor if isinstance(factor, Fraction) else Fraction(factor)


class FeatureKind(enum.Enum):
    EDGE_H = "EDGE_H"
    EDGE_V = "EDGE_V"
    LINE_H = "LINE_H"
    LINE_V = "LINE_V"
    DIAG = "DIAG"
    CENTER_SURROUND = "CENTER_SURROUND"
    EDGE_H_45 = "EDGE_H_45"
    EDGE_V_45 = "EDGE_V_45"
    LINE_H_45 = "LINE_H_45"
    LINE_V_45 = "LINE_V_45"

    @property
    def rotated(self) -> bool:
        return self.value.endswith("_45")


# Upright layouts: (cx, cy, cw, ch, weight) in base-cell units.
_UPRIGHT_CELLS = {
    FeatureKind.EDGE_H: ((0, 0, 1, 1, -1.0), (1, 0, 1, 1, 1.0)),
    FeatureKind.EDGE_V: ((0, 0, 1, 1, -1.0), (0, 1, 1, 1, 1.0)),
    FeatureKind.LINE_H: ((0, 0, 1, 1, -1.0), (1, 0, 1, 1, 2.0), (2, 0, 1, 1, -1.0)),
    FeatureKind.LINE_V: ((0, 0, 1, 1, -1.0), (0, 1, 1, 1, 2.0), (0, 2, 1, 1, -1.0)),
    FeatureKind.DIAG: (
        (0, 0, 1, 1, 1.0),
        (1, 0, 1, 1, -1.0),
        (0, 1, 1, 1, -1.0),
        (1, 1, 1, 1, 1.0),
    ),
    FeatureKind.CENTER_SURROUND: ((0, 0, 3, 3, -1.0), (1, 1, 1, 1, 9.0)),
}

# Rotated layouts: (a_step, b_step, weight); cell apex = base apex
# + a_step*w*(1,1) + b_step*h*(-1,1).
_ROTATED_CELLS = {
    FeatureKind.EDGE_H_45: ((0, 0, -1.0), (1, 0, 1.0)),
    FeatureKind.EDGE_V_45: ((0, 0, -1.0), (0, 1, 1.0)),
    FeatureKind.LINE_H_45: ((0, 0, -1.0), (1, 0, 2.0), (2, 0, -1.0)),
    FeatureKind.LINE_V_45: ((0, 0, -1.0), (0, 1, 2.0), (0, 2, -1.0)),
}

# Footprint multiples (n_a, n_b): upright footprint is (n_a*w, n_b*h)
# pixels; rotated features span n_a*w diagonal steps down-right and
# n_b*h down-left.
_GRID = {
    FeatureKind.EDGE_H: (2, 1),
    FeatureKind.EDGE_V: (1, 2),
    FeatureKind.LINE_H: (3, 1),
    FeatureKind.LINE_V: (1, 3),
    FeatureKind.DIAG: (2, 2),
    FeatureKind.CENTER_SURROUND: (3, 3),
    FeatureKind.EDGE_H_45: (2, 1),
    FeatureKind.EDGE_V_45: (1, 2),
    FeatureKind.LINE_H_45: (3, 1),
    FeatureKind.LINE_V_45: (1, 3),
}

BASIC_KINDS = (
    FeatureKind.EDGE_H,
    FeatureKind.EDGE_V,
    FeatureKind.LINE_H,
    FeatureKind.LINE_V,
    FeatureKind.DIAG,
)
ALL_KINDS = BASIC_KINDS + (
    FeatureKind.CENTER_SURROUND,
    FeatureKind.EDGE_H_45,
    FeatureKind.EDGE_V_45,
    FeatureKind.LINE_H_45,
    FeatureKind.LINE_V_45,
)


class FeatureSet(enum.Enum):
    BASIC = "BASIC"
    ALL = "ALL"

    @property
    def kinds(self) -> tuple[FeatureKind, ...]:
        return BASIC_KINDS if self is FeatureSet.BASIC else ALL_KINDS


@dataclass(frozen=True)
class HaarFeature:
    """Five-dimensional feature: layout kind, window position, base-cell scale."""

    kind: FeatureKind
    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ValueError("base cell must be at least 1x1")


def footprint(f: HaarFeature) -> Rect:
    """Window-relative bounding box of all member pixels."""
    na, nb = _GRID[f.kind]
    if not f.kind.rotated:
        return Rect(f.x, f.y, na * f.w, nb * f.h)
    a_tot, b_tot = na * f.w, nb * f.h
    return Rect(f.x - (b_tot - 1), f.y, a_tot + b_tot - 1, a_tot + b_tot - 1)


def fits_window(f: HaarFeature, window_w: int, window_h: int) -> bool:
    fp = footprint(f)
    return fp.x >= 0 and fp.y >= 0 and fp.x + fp.w <= window_w and fp.y + fp.h <= window_h


def enumerate_features(
    window_w: int, window_h: int, feature_set: FeatureSet = FeatureSet.BASIC
) -> list[HaarFeature]:
    """Every fitting feature exactly once, ordered by (kind, y, x, h, w)."""
    if window_w < 1 or window_h < 1:
        raise ValueError("window must be at least 1x1")
    out: list[HaarFeature] = []
    for kind in feature_set.kinds:
        na, nb = _GRID[kind]
        if not kind.rotated:
            for y in range(window_h):
                for x in range(window_w):
                    for h in range(1, (window_h - y) // nb + 1):
                        for w in range(1, (window_w - x) // na + 1):
                            out.append(HaarFeature(kind, x, y, w, h))
        else:
            for y in range(window_h):
                for x in range(window_w):
                    h = 1
                    while True:
                        b_tot = nb * h
                        if x - (b_tot - 1) < 0 or y + b_tot - 1 >= window_h:
                            break
                        w = 1
                        while True:
                            a_tot = na * w
                            if (
                                x + a_tot - 1 >= window_w
                                or y + a_tot + b_tot - 2 >= window_h
                            ):
                                break
                            out.append(HaarFeature(kind, x, y, w, h))
                            w += 1
                        h += 1
    return out


@dataclass(frozen=True)
class ScaledCells:
    """Concrete integer cells of a feature at a given scale.

    ``rects`` are window-relative; for rotated kinds each Rect is a
    rotated rect in apex form.  ``weights`` are re-balanced so that
    sum(weight * pixel_count) is exactly zero at the rounded geometry.
    """

    rotated: bool
    rects: tuple[Rect, ...]
    weights: tuple[float, ...]


def _cell_count(rotated: bool, r: Rect) -> int:
    return r.w * r.h  # holds for both: rotated rects contain w*h member pixels


def scale_feature(
    f: HaarFeature,
    factor,
    window_w: int | None = None,
    window_h: int | None = None,
) -> ScaledCells:
    """Round each cell to the nearest pixel grid at ``factor`` and re-balance.

    Upright cell edges are rounded independently (so adjacent cells stay
    adjacent); rotated cells round apex position and diagonal step
    counts.  Rounding happens in exact rational arithmetic, so mirrored
    features at the same scale land on exactly mirrored cells whenever
    the scaled window width recovers the scale (odd windows never hit an
    exact rounding midpoint).  Negative weights are rescaled to restore
    the zero-mean invariant.  If window dimensions are given, the scaled
    footprint is checked against the scaled window.
    """
    if factor < 1:
        raise ValueError("scale factor must be >= 1")
    frac = as_scale(factor)
    rotated = f.kind.rotated
    rects = []
    weights = []
    if frac == 1:
        rects = [
            Rect(f.x + cx * f.w, f.y + cy * f.h, cw * f.w, ch * f.h)
            for cx, cy, cw, ch, _ in _UPRIGHT_CELLS[f.kind]
        ] if not rotated else [
            Rect(f.x + a * f.w - b * f.h, f.y + a * f.w + b * f.h, f.w, f.h)
            for a, b, _ in _ROTATED_CELLS[f.kind]
        ]
        weights = [
            c[-1] for c in (_ROTATED_CELLS[f.kind] if rotated else _UPRIGHT_CELLS[f.kind])
        ]
    elif not rotated:
        for cx, cy, cw, ch, wt in _UPRIGHT_CELLS[f.kind]:
            x1 = round_half_up((f.x + cx * f.w) * frac)
            x2 = round_half_up((f.x + (cx + cw) * f.w) * frac)
            y1 = round_half_up((f.y + cy * f.h) * frac)
            y2 = round_half_up((f.y + (cy + ch) * f.h) * frac)
            rects.append(Rect(x1, y1, max(1, x2 - x1), max(1, y2 - y1)))
            weights.append(wt)
    else:
        w_s = max(1, round_half_up(f.w * frac))
        h_s = max(1, round_half_up(f.h * frac))
        for a_step, b_step, wt in _ROTATED_CELLS[f.kind]:
            ax = round_half_up(f.x * frac) + a_step * w_s - b_step * h_s
            ay = round_half_up(f.y * frac) + a_step * w_s + b_step * h_s
            rects.append(Rect(ax, ay, w_s, h_s))
            weights.append(wt)
    pos = sum(wt * _cell_count(rotated, r) for r, wt in zip(rects, weights) if wt > 0)
    neg = sum(-wt * _cell_count(rotated, r) for r, wt in zip(rects, weights) if wt < 0)
    if neg > 0 and pos != neg:
        # symmetric re-balance: both sides meet at the mean weighted area,
        # so a mirrored feature (whose cells swap roles) scales by the
        # same factors and its value is the exact negation
        target = (pos + neg) / 2.0
        rp, rn = target / pos, target / neg
        weights = [wt * rn if wt < 0 else wt * rp for wt in weights]
    if window_w is not None and window_h is not None:
        win_w = round_half_up(window_w * frac)
        win_h = round_half_up(window_h * frac)
        for r in rects:
            if rotated:
                x0, y0 = r.x - (r.h - 1), r.y
                x1b, y1b = r.x + (r.w - 1), r.y + r.w + r.h - 2
            else:
                x0, y0, x1b, y1b = r.x, r.y, r.x + r.w - 1, r.y + r.h - 1
            if x0 < 0 or y0 < 0 or x1b >= win_w or y1b >= win_h:
                raise BoundsError(f"scaled cell {r} exceeds {win_w}x{win_h} window")
    return ScaledCells(rotated, tuple(rects), tuple(weights))


def cells_value(
    cells: ScaledCells,
    tables: IntegralTables,
    origin_x: int,
    origin_y: int,
    inv_sigma: float,
) -> float:
    """Evaluate pre-scaled cells at an absolute window origin.

    Positive- and negative-weight cells are accumulated separately (each
    in layout order) and differenced at the end; mirrored features then
    evaluate to the exact float negation on mirrored input.
    """
    pos = 0.0
    neg = 0.0
    for r, wt in zip(cells.rects, cells.weights):
        shifted = Rect(r.x + origin_x, r.y + origin_y, r.w, r.h)
        s = rotated_rect_sum(tables, shifted) if cells.rotated else rect_sum(tables, shifted)
        if wt > 0:
            pos += wt * s
        else:
            neg += -wt * s
    return (pos - neg) * inv_sigma


def feature_value(
    f: HaarFeature,
    tables: IntegralTables,
    origin: tuple[int, int] = (0, 0),
    scale: float = 1.0,
    inv_sigma: float = 1.0,
) -> float:
    """inv_sigma times the signed sum of scaled cell sums."""
    return cells_value(scale_feature(f, scale), tables, origin[0], origin[1], inv_sigma)


def mirror_feature(f: HaarFeature, window_w: int) -> tuple[HaarFeature, bool]:
    """Horizontal mirror of a feature inside its window.

    Returns the mirrored feature and whether the feature value changes
    sign under mirroring.  Horizontally symmetric layouts (EDGE_V,
    LINE_H, LINE_V, CENTER_SURROUND) keep their value; EDGE_H and DIAG
    swap their signed columns, so their value is negated; 45-degree
    kinds map onto the opposite-diagonal kind with swapped cell
    dimensions and keep their value.
    """
    kind, x, y, w, h = f.kind, f.x, f.y, f.w, f.h
    if not kind.rotated:
        na, _ = _GRID[kind]
        nx = window_w - x - na * w
        flips = kind in (FeatureKind.EDGE_H, FeatureKind.DIAG)
        return HaarFeature(kind, nx, y, w, h), flips
    swap = {
        FeatureKind.EDGE_H_45: FeatureKind.EDGE_V_45,
        FeatureKind.EDGE_V_45: FeatureKind.EDGE_H_45,
        FeatureKind.LINE_H_45: FeatureKind.LINE_V_45,
        FeatureKind.LINE_V_45: FeatureKind.LINE_H_45,
    }[kind]
    return HaarFeature(swap, window_w - 1 - x, y, h, w), False


def mirror_rect(r: Rect, window_w: int) -> Rect:
    """Upright cell-rect mirror: (x, y, w, h) -> (window_w - x - w, y, w, h)."""
    return Rect(window_w - r.x - r.w, r.y, r.w, r.h)


# --- batch evaluation (training path) --------------------------------------

def feature_matrix(
    features: Sequence[HaarFeature],
    tables_list: Sequence[IntegralTables],
    inv_sigmas: np.ndarray | None = None,
    block: int = 2048,
) -> np.ndarray:
    """Values of every feature on every window-sized sample patch.

    Returns an (n_samples, n_features) float64 array; cell sums are
    accumulated in the same order as :func:`cells_value`, so entries are
    bit-identical to the scalar path at scale 1.
    """
    n = len(tables_list)
    if n == 0:
        return np.zeros((0, len(features)))
    sums = np.stack([t.sums for t in tables_list])
    rot0 = rot1 = None
    if any(fe.kind.rotated for fe in features):
        if not tables_list[0].has_rotated:
            raise ValueError("rotated features require tables built with want_rotated")
        rot0 = np.stack([t._rot[0] for t in tables_list])
        rot1 = np.stack([t._rot[1] for t in tables_list])
        rot_off = tables_list[0]._rot_off
    if inv_sigmas is None:
        inv_sigmas = np.ones(n)
    inv = np.asarray(inv_sigmas, dtype=np.float64)[:, None]
    out = np.empty((n, len(features)), dtype=np.float64)
    for lo in range(0, len(features), block):
        chunk = features[lo : lo + block]
        pos = np.zeros((n, len(chunk)), dtype=np.float64)
        neg = np.zeros((n, len(chunk)), dtype=np.float64)
        upright_idx = [i for i, fe in enumerate(chunk) if not fe.kind.rotated]
        if upright_idx:
            _accumulate_upright(pos, neg, chunk, upright_idx, sums)
        rotated_idx = [i for i, fe in enumerate(chunk) if fe.kind.rotated]
        if rotated_idx:
            _accumulate_rotated(pos, neg, chunk, rotated_idx, rot0, rot1, rot_off)
        out[:, lo : lo + len(chunk)] = (pos - neg) * inv
    return out


def _add_signed(pos, neg, cols, wts, cell):
    wts = np.array(wts)
    cell = cell.astype(np.float64)
    p = wts > 0
    if p.any():
        pos[:, cols[p]] += wts[p] * cell[:, p]
    m = ~p
    if m.any():
        neg[:, cols[m]] += (-wts[m]) * cell[:, m]


def _accumulate_upright(pos, neg, chunk, idx, sums):
    max_cells = max(len(_UPRIGHT_CELLS[chunk[i].kind]) for i in idx)
    for ci in range(max_cells):
        cols, x1s, x2s, y1s, y2s, wts = [], [], [], [], [], []
        for i in idx:
            fe = chunk[i]
            cells = _UPRIGHT_CELLS[fe.kind]
            if ci >= len(cells):
                continue
            cx, cy, cw, ch, wt = cells[ci]
            cols.append(i)
            x1s.append(fe.x + cx * fe.w)
            x2s.append(fe.x + (cx + cw) * fe.w)
            y1s.append(fe.y + cy * fe.h)
            y2s.append(fe.y + (cy + ch) * fe.h)
            wts.append(wt)
        if not cols:
            continue
        cols = np.array(cols)
        x1, x2 = np.array(x1s), np.array(x2s)
        y1, y2 = np.array(y1s), np.array(y2s)
        cell = sums[:, y2, x2] - sums[:, y1, x2] - sums[:, y2, x1] + sums[:, y1, x1]
        _add_signed(pos, neg, cols, wts, cell)


def _accumulate_rotated(pos, neg, chunk, idx, rot0, rot1, rot_off):
    # Four pyramid lookups per cell; lookups are grouped by parity class.
    max_cells = max(len(_ROTATED_CELLS[chunk[i].kind]) for i in idx)
    for ci in range(max_cells):
        cols, apex_x, apex_y, ws, hs, wts = [], [], [], [], [], []
        for i in idx:
            fe = chunk[i]
            cells = _ROTATED_CELLS[fe.kind]
            if ci >= len(cells):
                continue
            a_step, b_step, wt = cells[ci]
            cols.append(i)
            apex_x.append(fe.x + a_step * fe.w - b_step * fe.h)
            apex_y.append(fe.y + a_step * fe.w + b_step * fe.h)
            ws.append(fe.w)
            hs.append(fe.h)
            wts.append(wt)
        if not cols:
            continue
        cols = np.array(cols)
        ax = np.array(apex_x)
        ay = np.array(apex_y)
        w = np.array(ws)
        h = np.array(hs)
        cell = (
            _pyramid_batch(rot0, rot1, rot_off, ax + w - h, ay + w + h - 2)
            - _pyramid_batch(rot0, rot1, rot_off, ax - h, ay + h - 2)
            - _pyramid_batch(rot0, rot1, rot_off, ax + w, ay + w - 2)
            + _pyramid_batch(rot0, rot1, rot_off, ax, ay - 2)
        )
        _add_signed(pos, neg, cols, wts, cell)


def _pyramid_batch(rot0, rot1, rot_off, ax, ay):
    c = (ax + ay) & 1
    alpha = (ax + ay - c) // 2
    beta = (ay - ax - c) // 2 + rot_off
    out = np.zeros((rot0.shape[0], len(ax)), dtype=np.int64)
    for cls, tab in ((0, rot0), (1, rot1)):
        m = c == cls
        if not m.any():
            continue
        a = alpha[m]
        b = beta[m]
        valid = (a >= 0) & (b >= 0)
        a = np.clip(a, 0, tab.shape[1] - 2)
        b = np.clip(b, 0, tab.shape[2] - 2)
        vals = tab[:, a + 1, b + 1]
        vals[:, ~valid] = 0
        out[:, m] = vals
    return out
