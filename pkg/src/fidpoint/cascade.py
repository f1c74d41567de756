"""Cascade stages: threshold adaptation, bootstrapped training, file format, mirroring.

A cascade is an ordered list of strong classifiers sharing one
enumeration window.  Each stage's threshold is adapted downward from
the boosting default so the stage keeps at least ``minhitrate`` of its
training positives, and weak classifiers are added until the stage's
false-alarm rate on its own negatives drops to ``maxfalsealarm``.
Between stages the negative pool is filtered to survivors of the
cascade so far and replenished from the negative source, which makes
hit and false-alarm rates compound multiplicatively across stages.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Iterator

import numpy as np

from .boost import (
    Booster,
    StrongClassifier,
    WeakClassifier,
    init_weights,
    sample_inv_sigma,
    TrainingSample,
)
from .haar import (
    FeatureSet,
    HaarFeature,
    FeatureKind,
    enumerate_features,
    feature_matrix,
    fits_window,
    mirror_feature,
    round_half_up,
    scale_feature,
    cells_value,
)
from .raster import BoundsError, IntegralTables, Rect, window_inv_stddev

FORMAT_MAGIC = "FIDCASCADE"
FORMAT_VERSION = 1


class CascadeFormatError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class StageStuckError(RuntimeError):
    """Stage could not reach the false-alarm target; carries the plateau."""

    def __init__(self, stage_index: int, hit_rate: float, false_alarm: float, n_weak: int):
        super().__init__(
            f"stage {stage_index} stuck after {n_weak} weak classifiers "
            f"(HR {hit_rate:.6f}, FA {false_alarm:.6f}); slacken the training parameters"
        )
        self.stage_index = stage_index
        self.hit_rate = hit_rate
        self.false_alarm = false_alarm
        self.n_weak = n_weak


@dataclass
class Stage:
    strong: StrongClassifier
    train_hit_rate: float = 1.0
    train_false_alarm: float = 1.0


@dataclass
class Cascade:
    window_w: int
    window_h: int
    feature_set: FeatureSet
    stages: list[Stage] = field(default_factory=list)


@dataclass
class TrainParams:
    nstages: int = 15
    npos: int = 1000
    nneg: int = 1000
    minhitrate: float = 0.995
    maxfalsealarm: float = 0.5
    mode: FeatureSet = FeatureSet.BASIC
    max_weak_per_stage: int = 40
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.maxfalsealarm < 1:
            raise ValueError("maxfalsealarm must lie in (0, 1)")
        if not 0 < self.minhitrate < 1:
            raise ValueError("minhitrate must lie in (0, 1)")
        if self.minhitrate <= self.maxfalsealarm:
            raise ValueError("minhitrate must exceed maxfalsealarm")
        if min(self.nstages, self.npos, self.nneg, self.max_weak_per_stage) < 1:
            raise ValueError("counts must be positive")


def compound_bounds(minhitrate: float, maxfalsealarm: float, nstages: int) -> tuple[float, float]:
    """Worst-case overall (hit rate, false alarm) after ``nstages`` stages."""
    return minhitrate**nstages, maxfalsealarm**nstages


def adapt_threshold(sc: StrongClassifier, positive_scores, minhitrate: float) -> float:
    """Largest threshold that keeps at least ``minhitrate`` of the scores.

    With the n scores sorted ascending, theta is the k-th smallest where
    k = floor(n * (1 - minhitrate)) + 1 (the bottom floor(n*(1-mhr))
    scores are the most that may be lost); ties only ever admit more
    positives.  The result is additionally capped at the boosting
    default of half the alpha sum, so adaptation can only lower it.
    """
    scores = np.sort(np.asarray(positive_scores, dtype=np.float64))
    n = len(scores)
    if n == 0:
        raise ValueError("need at least one positive score")
    k = int(math.floor(n * (1.0 - minhitrate) + 1e-9)) + 1
    k = min(k, n)
    theta = float(scores[k - 1])
    return min(theta, 0.5 * sc.alpha_sum)


def train_stage(
    positives: list[IntegralTables],
    negatives: list[IntegralTables],
    features: list[HaarFeature],
    params: TrainParams,
    progress=None,
) -> Stage:
    """Grow one boosted stage until its false alarm rate is acceptable.

    Raises :class:`StageStuckError` carrying the final (HR, FA, T)
    plateau when ``max_weak_per_stage`` rounds cannot reach the target.
    """
    if not positives or not negatives:
        raise ValueError("both sample sets must be non-empty")
    samples = [TrainingSample(t, 1) for t in positives] + [
        TrainingSample(t, 0) for t in negatives
    ]
    init_weights(samples)
    labels = np.array([s.label for s in samples])
    weights = np.array([s.weight for s in samples])
    inv = np.array([sample_inv_sigma(s.tables) for s in samples])
    values = feature_matrix(features, [s.tables for s in samples], inv)
    booster = Booster(values, labels, weights, progress=progress)
    npos = len(positives)
    pos_scores = np.zeros(npos)
    neg_scores = np.zeros(len(negatives))
    sc = StrongClassifier()
    hr = fa = 1.0
    for t in range(1, params.max_weak_per_stage + 1):
        alpha, weak, pred = booster.step()
        weak.feature = features[weak.feature_index]
        sc.rounds.append((alpha, weak))
        pos_scores += alpha * pred[:npos]
        neg_scores += alpha * pred[npos:]
        sc.threshold = adapt_threshold(sc, pos_scores, params.minhitrate)
        hr = float(np.mean(pos_scores >= sc.threshold))
        fa = float(np.mean(neg_scores >= sc.threshold))
        if progress is not None:
            print(
                f"  weak {t} thr {sc.threshold:.6f} hr {hr:.6f} fa {fa:.6f}",
                file=progress,
            )
        if fa <= params.maxfalsealarm:
            return Stage(sc, train_hit_rate=hr, train_false_alarm=fa)
    raise StageStuckError(-1, hr, fa, params.max_weak_per_stage)


def classify_window(
    c: Cascade,
    tables: IntegralTables,
    origin: tuple[int, int] = (0, 0),
    scale: float = 1.0,
) -> tuple[bool, int | None]:
    """Evaluate stages in order; (accepted, index of the rejecting stage).

    The effective cell scale is the exact ratio of the realized window
    width round(window_w * scale) to the base window width, so windows
    produced by the scanner evaluate identically here.  A zero-stage
    cascade accepts every window by convention (the recursion base for
    bootstrapping).
    """
    ox, oy = origin
    frac = Fraction(round_half_up(c.window_w * scale), c.window_w)
    win_w = round_half_up(c.window_w * frac)
    win_h = round_half_up(c.window_h * frac)
    if ox < 0 or oy < 0 or ox + win_w > tables.width or oy + win_h > tables.height:
        raise BoundsError(f"window {win_w}x{win_h} at ({ox},{oy}) outside image")
    inv_sigma = window_inv_stddev(tables, Rect(ox, oy, win_w, win_h))
    for i, stage in enumerate(c.stages):
        score = 0.0
        for alpha, weak in stage.strong.rounds:
            cells = scale_feature(weak.feature, frac)
            v = cells_value(cells, tables, ox, oy, inv_sigma)
            score += alpha * weak.predict_value(v)
        if score < stage.strong.threshold:
            return False, i
    return True, None


def _batch_accept(c: Cascade, tables_list: list[IntegralTables]) -> np.ndarray:
    """Vector of cascade verdicts for unit-scale window-sized patches.

    Bit-identical to :func:`classify_window` at scale 1.
    """
    n = len(tables_list)
    alive = np.ones(n, dtype=bool)
    if not c.stages or n == 0:
        return alive
    feats = [weak.feature for st in c.stages for _, weak in st.strong.rounds]
    inv = np.array([sample_inv_sigma(t) for t in tables_list])
    values = feature_matrix(feats, tables_list, inv)
    col = 0
    for stage in c.stages:
        score = np.zeros(n)
        for alpha, weak in stage.strong.rounds:
            v = values[:, col]
            col += 1
            score += alpha * (weak.parity * v < weak.parity * weak.threshold)
        alive &= score >= stage.strong.threshold
    return alive


def train_cascade(
    positives: list[IntegralTables],
    negative_source: Iterable[IntegralTables],
    params: TrainParams,
    progress=None,
) -> Cascade:
    """Stage-by-stage training with negative bootstrapping.

    The negative pool is filtered between stages to patches the cascade
    still accepts and replenished from ``negative_source`` (also
    filtered) up to ``nneg``.  Candidates are pulled in fixed-size
    batches with a bounded per-stage budget, so an unbounded source
    (background mining) cannot stall training once the cascade rejects
    nearly everything; a stage short of ``nneg`` trains on whatever
    negatives were found.  Training ends after ``nstages`` stages or as
    soon as no accepted negatives remain anywhere, whichever is first.
    """
    if not positives:
        raise ValueError("no positive samples")
    positives = positives[: params.npos]
    w, h = positives[0].width, positives[0].height
    for t in positives:
        if (t.width, t.height) != (w, h):
            raise ValueError("positive patches disagree on window size")
    features = enumerate_features(w, h, params.mode)
    cascade = Cascade(w, h, params.mode, [])
    source: Iterator[IntegralTables] = iter(negative_source)
    pool: list[IntegralTables] = []
    exhausted = False
    batch_size = max(params.nneg, 128)
    for stage_index in range(params.nstages):
        if pool:
            keep = _batch_accept(cascade, pool)
            pool = [t for t, k in zip(pool, keep) if k]
        budget = 200 * params.nneg
        while len(pool) < params.nneg and not exhausted and budget > 0:
            batch = []
            try:
                while len(batch) < min(batch_size, budget):
                    batch.append(next(source))
            except StopIteration:
                exhausted = True
            if not batch:
                break
            budget -= len(batch)
            keep = _batch_accept(cascade, batch)
            pool.extend(t for t, k in zip(batch, keep) if k)
        if not pool:
            break  # cascade already rejects every available negative
        if progress is not None:
            print(f"stage {stage_index} ({len(pool)} negatives)", file=progress)
        try:
            stage = train_stage(positives, pool, features, params, progress=progress)
        except StageStuckError as err:
            raise StageStuckError(stage_index, err.hit_rate, err.false_alarm, err.n_weak) from None
        cascade.stages.append(stage)
    return cascade


# --- serialization -----------------------------------------------------------

def _fmt(x: float) -> str:
    return format(x, ".17g")


def serialize(c: Cascade) -> bytes:
    lines = [
        f"{FORMAT_MAGIC} {FORMAT_VERSION}",
        f"window {c.window_w} {c.window_h}",
        f"features {c.feature_set.value}",
        f"stages {len(c.stages)}",
    ]
    for i, stage in enumerate(c.stages):
        lines.append(
            f"stage {i} threshold {_fmt(stage.strong.threshold)} "
            f"nweak {len(stage.strong.rounds)} "
            f"hr {_fmt(stage.train_hit_rate)} fa {_fmt(stage.train_false_alarm)}"
        )
        for alpha, weak in stage.strong.rounds:
            f = weak.feature
            lines.append(
                f"weak alpha {_fmt(alpha)} parity {'+1' if weak.parity > 0 else '-1'} "
                f"thresh {_fmt(weak.threshold)} kind {f.kind.value} "
                f"x {f.x} y {f.y} w {f.w} h {f.h}"
            )
    return ("\n".join(lines) + "\n").encode("ascii")


class _LineReader:
    def __init__(self, data: bytes):
        try:
            text = data.decode("ascii")
        except UnicodeDecodeError as e:
            raise CascadeFormatError("not ASCII", 0) from e
        self.lines = text.split("\n")
        self.no = 0

    def next(self, expect: str) -> list[str]:
        if self.no >= len(self.lines):
            raise CascadeFormatError(f"unexpected end of file, expected '{expect}'", self.no + 1)
        self.no += 1
        parts = self.lines[self.no - 1].split()
        if not parts or parts[0] != expect:
            raise CascadeFormatError(f"expected '{expect}' line", self.no)
        return parts


def _parse_int(tok: str, reader: _LineReader) -> int:
    try:
        return int(tok)
    except ValueError:
        raise CascadeFormatError(f"bad integer {tok!r}", reader.no) from None


def _parse_float(tok: str, reader: _LineReader) -> float:
    try:
        return float(tok)
    except ValueError:
        raise CascadeFormatError(f"bad real {tok!r}", reader.no) from None


def deserialize(data: bytes) -> Cascade:
    r = _LineReader(data)
    magic = r.next(FORMAT_MAGIC)
    if len(magic) != 2 or _parse_int(magic[1], r) != FORMAT_VERSION:
        raise CascadeFormatError("unsupported version", r.no)
    win = r.next("window")
    if len(win) != 3:
        raise CascadeFormatError("malformed window line", r.no)
    window_w, window_h = _parse_int(win[1], r), _parse_int(win[2], r)
    if window_w < 1 or window_h < 1:
        raise CascadeFormatError("window must be positive", r.no)
    fs = r.next("features")
    try:
        feature_set = FeatureSet(fs[1])
    except (IndexError, ValueError):
        raise CascadeFormatError("features must be BASIC or ALL", r.no) from None
    nstages = _parse_int(r.next("stages")[1], r)
    cascade = Cascade(window_w, window_h, feature_set, [])
    for i in range(nstages):
        parts = r.next("stage")
        want = ["stage", str(i), "threshold", None, "nweak", None, "hr", None, "fa", None]
        if len(parts) != len(want) or parts[::2] != want[::2] or parts[1] != str(i):
            raise CascadeFormatError("malformed stage line", r.no)
        threshold = _parse_float(parts[3], r)
        nweak = _parse_int(parts[5], r)
        hr = _parse_float(parts[7], r)
        fa = _parse_float(parts[9], r)
        sc = StrongClassifier(threshold=threshold)
        for _ in range(nweak):
            wparts = r.next("weak")
            keys = wparts[1::2]
            vals = wparts[2::2]
            if keys != ["alpha", "parity", "thresh", "kind", "x", "y", "w", "h"]:
                raise CascadeFormatError("malformed weak line", r.no)
            alpha = _parse_float(vals[0], r)
            if vals[1] not in ("+1", "-1"):
                raise CascadeFormatError("parity must be +1 or -1", r.no)
            parity = 1 if vals[1] == "+1" else -1
            thresh = _parse_float(vals[2], r)
            try:
                kind = FeatureKind(vals[3])
            except ValueError:
                raise CascadeFormatError(f"unknown kind {vals[3]!r}", r.no) from None
            x, y = _parse_int(vals[4], r), _parse_int(vals[5], r)
            w, h = _parse_int(vals[6], r), _parse_int(vals[7], r)
            if w < 1 or h < 1:
                raise CascadeFormatError("cell extent must be >= 1", r.no)
            feature = HaarFeature(kind, x, y, w, h)
            if not fits_window(feature, window_w, window_h):
                raise CascadeFormatError(
                    f"feature {kind.value} at ({x},{y}) size {w}x{h} exceeds window", r.no
                )
            sc.rounds.append((alpha, WeakClassifier(thresh, parity, feature=feature)))
        cascade.stages.append(Stage(sc, hr, fa))
    for extra in r.lines[r.no :]:
        if extra.strip():
            raise CascadeFormatError("trailing content", r.no + 1)
    return cascade


# --- mirroring ----------------------------------------------------------------

def mirror(c: Cascade) -> Cascade:
    """Horizontally mirrored cascade for right-side detection.

    Upright cell rects (x, y, w, h) become (window_w - x - w, y, w, h);
    kinds whose signed layout is left/right asymmetric (EDGE_H, DIAG)
    mirror by negating both parity and stump threshold, which leaves
    every classification decision on mirrored input unchanged; rotated
    kinds map to the opposite-diagonal kind.  Alphas, stage thresholds,
    and recorded training rates are unchanged.
    """
    out = Cascade(c.window_w, c.window_h, c.feature_set, [])
    for stage in c.stages:
        sc = StrongClassifier(threshold=stage.strong.threshold)
        for alpha, weak in stage.strong.rounds:
            mf, flips = mirror_feature(weak.feature, c.window_w)
            sc.rounds.append(
                (
                    alpha,
                    WeakClassifier(
                        threshold=-weak.threshold if flips else weak.threshold,
                        parity=-weak.parity if flips else weak.parity,
                        error=weak.error,
                        feature_index=weak.feature_index,
                        feature=mf,
                    ),
                )
            )
        out.stages.append(Stage(sc, stage.train_hit_rate, stage.train_false_alarm))
    return out
