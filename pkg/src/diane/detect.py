"""Face detection: staged Haar-feature cascades over a multi-scale sliding window.

A cascade is a sequence of stages, each a sum of stump features (one
threshold, two leaf values) over weighted rectangle sums. Windows are
variance-normalized so the decision is invariant to linear lighting
changes, and raw hits are merged by transitive rectangle similarity.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import floor, sqrt

from .imaging import (
    GrayImage,
    IntegralImage,
    OutOfBounds,
    Rect,
    integral_image,
    squared_integral_image,
)

BASE_WINDOW = 24

# Service-facing defaults; chosen for desk-scale frames, see detect_faces.
DEFAULT_SCALE_FACTOR = 1.25
DEFAULT_MIN_SIZE = 48
DEFAULT_STEP = 2
DEFAULT_MIN_NEIGHBORS = 3
GROUP_EPS = 0.2


class CascadeError(ValueError):
    """Base class for cascade loading failures."""


class ParseError(CascadeError):
    """Cascade document is syntactically invalid."""


class InvalidCascade(CascadeError):
    """Cascade document violates a structural invariant."""


@dataclass(frozen=True)
class HaarFeature:
    """Stump over 2-3 weighted rects in base-window coordinates."""

    rects: tuple[tuple[Rect, float], ...]
    threshold: float
    left_val: float
    right_val: float


@dataclass(frozen=True)
class HaarStage:
    features: tuple[HaarFeature, ...]
    threshold: float


@dataclass(frozen=True)
class HaarCascade:
    base_w: int
    base_h: int
    stages: tuple[HaarStage, ...]


@dataclass(frozen=True)
class Detection:
    rect: Rect
    neighbors: int


def _round_half_up(v: float) -> int:
    return int(floor(v + 0.5))


def load_cascade(text: str) -> HaarCascade:
    """Parse the line-oriented cascade format and validate every invariant.

    Format: one "cascade 24 24" header, then "stage <thr>" lines, each
    followed by "feature <thr> <left> <right>" lines, each followed by
    2-3 "rect <x> <y> <w> <h> <weight>" lines. '#' starts a comment.
    """
    base: tuple[int, int] | None = None
    stages: list[tuple[float, list]] = []  # (threshold, features)

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        kind, args = parts[0], parts[1:]
        try:
            if kind == "cascade":
                if base is not None:
                    raise ParseError(f"line {lineno}: duplicate cascade header")
                if len(args) != 2:
                    raise ParseError(f"line {lineno}: cascade needs width height")
                base = (int(args[0]), int(args[1]))
            elif kind == "stage":
                if base is None:
                    raise ParseError(f"line {lineno}: stage before cascade header")
                if len(args) != 1:
                    raise ParseError(f"line {lineno}: stage needs one threshold")
                stages.append((float(args[0]), []))
            elif kind == "feature":
                if not stages:
                    raise ParseError(f"line {lineno}: feature before any stage")
                if len(args) != 3:
                    raise ParseError(
                        f"line {lineno}: feature needs threshold left right"
                    )
                stages[-1][1].append(
                    [float(args[0]), float(args[1]), float(args[2]), []]
                )
            elif kind == "rect":
                if not stages or not stages[-1][1]:
                    raise ParseError(f"line {lineno}: rect before any feature")
                if len(args) != 5:
                    raise ParseError(f"line {lineno}: rect needs x y w h weight")
                x, y, w, h = (int(a) for a in args[:4])
                stages[-1][1][-1][3].append((x, y, w, h, float(args[4])))
            else:
                raise ParseError(f"line {lineno}: unknown directive {kind!r}")
        except ValueError as exc:
            if isinstance(exc, CascadeError):
                raise
            raise ParseError(f"line {lineno}: bad number ({exc})") from None

    if base is None:
        raise ParseError("missing cascade header")
    if base != (BASE_WINDOW, BASE_WINDOW):
        raise InvalidCascade(f"base window must be 24x24, got {base[0]}x{base[1]}")
    if not stages:
        raise InvalidCascade("cascade has no stages")

    built_stages = []
    for si, (sthr, feats) in enumerate(stages):
        if not feats:
            raise InvalidCascade(f"stage {si} has no features")
        built_feats = []
        for fi, (fthr, left, right, rects) in enumerate(feats):
            where = f"stage {si} feature {fi}"
            if not 2 <= len(rects) <= 3:
                raise InvalidCascade(f"{where}: needs 2-3 rects, has {len(rects)}")
            zero_mean = 0.0
            built_rects = []
            for x, y, w, h, weight in rects:
                try:
                    r = Rect(x, y, w, h)
                except ValueError as exc:
                    raise InvalidCascade(f"{where}: {exc}") from None
                if x + w > BASE_WINDOW or y + h > BASE_WINDOW:
                    raise InvalidCascade(
                        f"{where}: rect ({x},{y},{w},{h}) exceeds base window"
                    )
                zero_mean += weight * w * h
                built_rects.append((r, weight))
            if abs(zero_mean) > 1e-6:
                raise InvalidCascade(
                    f"{where}: weighted areas sum to {zero_mean}, not 0"
                )
            built_feats.append(
                HaarFeature(tuple(built_rects), fthr, left, right)
            )
        built_stages.append(HaarStage(tuple(built_feats), sthr))
    return HaarCascade(BASE_WINDOW, BASE_WINDOW, tuple(built_stages))


def _scale_cascade(c: HaarCascade, size: int):
    """Pre-scale feature rects to a square window of the given side.

    Rect endpoints (not extents) are rounded so scaled rects always stay
    inside the window. Returns per-stage lists of
    (threshold, left, right, [(x0, y0, x1, y1, weight), ...]).
    """
    s = size / c.base_w
    scaled = []
    for stage in c.stages:
        feats = []
        for f in stage.features:
            rects = []
            for r, weight in f.rects:
                x0 = _round_half_up(r.x * s)
                y0 = _round_half_up(r.y * s)
                x1 = _round_half_up((r.x + r.w) * s)
                y1 = _round_half_up((r.y + r.h) * s)
                rects.append((x0, y0, x1, y1, weight))
            feats.append((f.threshold, f.left_val, f.right_val, rects))
        scaled.append((stage.threshold, feats))
    return scaled


def _eval_scaled(scaled, ii: IntegralImage, sq_ii: IntegralImage,
                 x: int, y: int, size: int) -> bool:
    s = ii.sums
    q = sq_ii.sums
    area = size * size
    total = int(s[y + size, x + size] - s[y, x + size] - s[y + size, x] + s[y, x])
    total_sq = int(q[y + size, x + size] - q[y, x + size] - q[y + size, x] + q[y, x])
    mean = total / area
    variance = total_sq / area - mean * mean
    if variance < 1.0:  # flat-window floor keeps the division defined
        variance = 1.0
    norm = area * sqrt(variance)
    for stage_threshold, feats in scaled:
        stage_sum = 0.0
        for threshold, left_val, right_val, rects in feats:
            raw = 0.0
            for x0, y0, x1, y1, weight in rects:
                raw += weight * int(
                    s[y + y1, x + x1]
                    - s[y + y0, x + x1]
                    - s[y + y1, x + x0]
                    + s[y + y0, x + x0]
                )
            stage_sum += left_val if raw / norm < threshold else right_val
        if stage_sum < stage_threshold:
            return False
    return True


def eval_window(c: HaarCascade, ii: IntegralImage, sq_ii: IntegralImage,
                win: Rect) -> bool:
    """Run the full cascade on one window; True iff every stage passes."""
    if win.x + win.w > ii.width or win.y + win.h > ii.height:
        raise OutOfBounds(f"window {win} outside {ii.width}x{ii.height} raster")
    if win.w * c.base_h != win.h * c.base_w:
        raise ValueError(f"window {win.w}x{win.h} is not a uniform scale of "
                         f"{c.base_w}x{c.base_h}")
    scaled = _scale_cascade(c, win.w)
    return _eval_scaled(scaled, ii, sq_ii, win.x, win.y, win.w)


def scan_windows(img_w: int, img_h: int, scale_factor: float, min_size: int,
                 step: int) -> list[tuple[int, int]]:
    """Enumerate (window size, stride) pairs for an image, largest-scale last."""
    out = []
    limit = min(img_w, img_h)
    k = 0
    seen = set()
    while True:
        size = _round_half_up(min_size * scale_factor ** k)
        if size > limit:
            break
        if size not in seen:
            seen.add(size)
            stride = max(1, _round_half_up(step * size / BASE_WINDOW))
            out.append((size, stride))
        k += 1
    return out


def detect_faces(c: HaarCascade, img: GrayImage, *,
                 scale_factor: float = DEFAULT_SCALE_FACTOR,
                 min_size: int = DEFAULT_MIN_SIZE,
                 step: int = DEFAULT_STEP,
                 min_neighbors: int = DEFAULT_MIN_NEIGHBORS) -> list[Detection]:
    """Slide the cascade over all scales and positions, then group raw hits.

    Deterministic: identical inputs yield an identical detection list,
    ordered by (y, x, w). Returns [] when nothing is found.
    """
    if scale_factor <= 1.0:
        raise ValueError("scale_factor must be > 1")
    if min_size < c.base_w:
        raise ValueError(f"min_size must be >= base window {c.base_w}")
    if step < 1 or min_neighbors < 1:
        raise ValueError("step and min_neighbors must be >= 1")
    ii = integral_image(img)
    sq_ii = squared_integral_image(img)
    raw: list[Rect] = []
    for size, stride in scan_windows(img.width, img.height,
                                     scale_factor, min_size, step):
        scaled = _scale_cascade(c, size)
        for y in range(0, img.height - size + 1, stride):
            for x in range(0, img.width - size + 1, stride):
                if _eval_scaled(scaled, ii, sq_ii, x, y, size):
                    raw.append(Rect(x, y, size, size))
    return group_rects(raw, min_neighbors, GROUP_EPS)


def group_rects(raw: list[Rect], min_neighbors: int, eps: float) -> list[Detection]:
    """Merge similar rects by transitive closure; keep classes with enough support.

    Two rects are similar when each of |dx|, |dw| is within eps * mean width
    and each of |dy|, |dh| within eps * mean height. Each surviving class
    yields its component-wise mean rect (rounded half-up). Output is a pure
    function of the input set, ordered by (y, x, w).
    """
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie in (0,1)")
    n = len(raw)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            a, b = raw[i], raw[j]
            tol_w = eps * (a.w + b.w) / 2.0
            tol_h = eps * (a.h + b.h) / 2.0
            if (abs(a.x - b.x) <= tol_w and abs(a.w - b.w) <= tol_w
                    and abs(a.y - b.y) <= tol_h and abs(a.h - b.h) <= tol_h):
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)

    classes: dict[int, list[Rect]] = {}
    for i in range(n):
        classes.setdefault(find(i), []).append(raw[i])

    detections = []
    for members in classes.values():
        count = len(members)
        if count < min_neighbors:
            continue
        # integer means keep the result independent of member order
        mx = _mean_int(sum(r.x for r in members), count)
        my = _mean_int(sum(r.y for r in members), count)
        mw = _mean_int(sum(r.w for r in members), count)
        mh = _mean_int(sum(r.h for r in members), count)
        detections.append(Detection(Rect(mx, my, mw, mh), count))
    detections.sort(key=lambda d: (d.rect.y, d.rect.x, d.rect.w))
    return detections


def _mean_int(total: int, count: int) -> int:
    # round-half-up of total/count for non-negative totals
    return (2 * total + count) // (2 * count)
