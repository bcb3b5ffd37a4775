"""Candidate-action annotation: semicircle overlays, waypoint rings,
floor-mask filtering, cropping, and glyph/goal rendering.

All drawing is pure (input frames are never mutated) and deterministic:
same inputs give bitwise-identical rasters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from PIL import Image

from . import font
from .core import (AnnotatedFrame, Frame, GoalKind, GoalMarker, Label,
                   LabelKind, RingSpec, Setup)
from .errors import (FrameTooSmallError, NoCandidatesError,
                     RobotOffFloorError)
from .geom import point_polygon_distance

MIN_FPV_SIDE = 200  # px
OVERLAY_RADIUS_FRAC = 0.35
DANGER_INFLATION = 0.2  # m ground-truth inflation around obstacles
GOAL_COLOUR = (220, 30, 30)


@dataclass(frozen=True)
class FloorMask:
    """Binary traversability raster aligned with a camera frame."""

    bits: np.ndarray  # (h, w) bool, True = traversable floor

    def __post_init__(self):
        if self.bits.ndim != 2 or self.bits.dtype != np.bool_:
            raise ValueError("mask must be a 2-D bool raster")
        self.bits.setflags(write=False)

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "FloorMask":
        return cls(bits=np.ascontiguousarray(arr, dtype=bool))

    @classmethod
    def from_png(cls, path) -> "FloorMask":
        img = Image.open(path).convert("L")
        return cls.from_array(np.asarray(img) != 0)

    def to_png(self, path) -> None:
        Image.fromarray(self.bits.astype(np.uint8) * 255, "L").save(path)

    def traversable(self, u: int, v: int) -> bool:
        if not (0 <= u < self.width and 0 <= v < self.height):
            return False
        return bool(self.bits[v, u])

    def disk_traversable(self, u: int, v: int, radius: int) -> bool:
        """True iff every pixel within `radius` of (u, v) is floor.
        Pixels outside the raster count as non-traversable."""
        for dv in range(-radius, radius + 1):
            span = int(math.isqrt(radius * radius - dv * dv))
            row = v + dv
            if row < 0 or row >= self.height:
                return False
            lo, hi = u - span, u + span
            if lo < 0 or hi >= self.width:
                return False
            if not self.bits[row, lo:hi + 1].all():
                return False
        return True


def homography_from_json(values: Sequence[float]) -> np.ndarray:
    """3x3 ground->image matrix from a row-major 9-number array."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size != 9:
        raise ValueError(f"homography needs 9 numbers, got {arr.size}")
    h = arr.reshape(3, 3)
    if abs(np.linalg.det(h)) < 1e-12:
        raise ValueError("homography is singular")
    return h


def world_to_pixel(h: np.ndarray, xy: Sequence[float]) -> tuple[float, float]:
    p = h @ np.array([xy[0], xy[1], 1.0])
    return float(p[0] / p[2]), float(p[1] / p[2])


def pixel_to_world(h: np.ndarray, uv: Sequence[float]) -> tuple[float, float]:
    p = np.linalg.solve(h, np.array([uv[0], uv[1], 1.0]))
    return float(p[0] / p[2]), float(p[1] / p[2])


def fpv_overlay(frame: Frame) -> AnnotatedFrame:
    """Composite the rotate/forward action labels 1-7 onto a first-person
    frame.

    The seven labels sit on the lower semicircle (radius 0.35 * min side,
    centred at the bottom middle), 30 degrees apart: 1 hard left, 4 at the
    apex (straight ahead), 7 hard right. Codes 0, 8 and 9 are valid
    answers but have no marker.
    """
    if frame.width < MIN_FPV_SIDE or frame.height < MIN_FPV_SIDE:
        raise FrameTooSmallError(
            f"{frame.width}x{frame.height} below {MIN_FPV_SIDE} px minimum")
    cx = frame.width // 2
    cy = frame.height - 1
    radius = OVERLAY_RADIUS_FRAC * min(frame.width, frame.height)
    labels = []
    for code in range(1, 8):
        theta = math.radians(180.0 - (code - 1) * 30.0)
        u = int(round(cx + radius * math.cos(theta)))
        v = int(round(cy - radius * math.sin(theta)))
        labels.append(Label(id=code, pos=(u, v), kind=LabelKind.ACTION_OVERLAY))
    bare = AnnotatedFrame(base=frame, labels=tuple(labels), setup=Setup.FPV)
    return AnnotatedFrame(base=draw(bare), labels=tuple(labels),
                          setup=Setup.FPV)


def tpv_keypoints(robot_px: tuple[int, int], mask: FloorMask, spec: RingSpec,
                  homography: np.ndarray) -> list[Label]:
    """Candidate waypoints on concentric ground-plane rings around the
    robot, keeping only points whose whole safety disk is floor.

    Ring i has radius i*dr and round(2*pi*r/arc) points; ids run 0..N in
    generation order (0 is the robot origin) so they stay contiguous
    after filtering.
    """
    ru, rv = int(robot_px[0]), int(robot_px[1])
    if not mask.traversable(ru, rv):
        raise RobotOffFloorError(f"robot pixel ({ru}, {rv}) not on floor")
    origin_world = pixel_to_world(homography, (ru, rv))
    labels = [Label(id=0, pos=(ru, rv), kind=LabelKind.ROBOT_ORIGIN,
                    world=origin_world)]
    next_id = 1
    for i in range(1, spec.n_rings + 1):
        r = i * spec.dr
        count = int(round(2.0 * math.pi * r / spec.arc))
        for j in range(count):
            ang = 2.0 * math.pi * j / count
            wx = origin_world[0] + r * math.cos(ang)
            wy = origin_world[1] + r * math.sin(ang)
            pu, pv = world_to_pixel(homography, (wx, wy))
            u, v = int(round(pu)), int(round(pv))
            if not mask.disk_traversable(u, v, spec.safety_radius):
                continue
            labels.append(Label(id=next_id, pos=(u, v),
                                kind=LabelKind.WAYPOINT, world=(wx, wy)))
            next_id += 1
    if next_id == 1:
        raise NoCandidatesError("every ring point was filtered out")
    return labels


def mark_dangerous(labels: Sequence[Label], obstacles: Sequence[Sequence],
                   inflation: float = DANGER_INFLATION) -> list[Label]:
    """Ground-truth danger flags: a label is dangerous when its world
    position lies within `inflation` metres of any obstacle polygon."""
    out = []
    for lb in labels:
        if lb.world is None:
            raise ValueError(f"label {lb.id} has no world coordinates")
        danger = any(point_polygon_distance(lb.world, poly) <= inflation
                     for poly in obstacles)
        out.append(Label(id=lb.id, pos=lb.pos, kind=lb.kind, world=lb.world,
                         traversable=lb.traversable, dangerous=danger))
    return out


def crop_to_labels(af: AnnotatedFrame, margin: int) -> AnnotatedFrame:
    """Cut the frame down to the labels (and pixel goal), plus margin.

    Label and goal coordinates are rewritten into crop space; the crop
    rect in original-frame coordinates rides along on the result.
    """
    if not af.labels:
        raise ValueError("cannot crop a frame with no labels")
    us = [lb.pos[0] for lb in af.labels]
    vs = [lb.pos[1] for lb in af.labels]
    if af.goal is not None and isinstance(af.goal.pos, tuple):
        gu, gv = af.goal.pos
        us += [gu - af.goal.radius, gu + af.goal.radius]
        vs += [gv - af.goal.radius, gv + af.goal.radius]
    u0 = max(0, min(us) - margin)
    v0 = max(0, min(vs) - margin)
    u1 = min(af.base.width, max(us) + margin + 1)
    v1 = min(af.base.height, max(vs) + margin + 1)
    cut = np.ascontiguousarray(af.base.data[v0:v1, u0:u1])
    base = Frame.from_array(cut, source=af.base.source,
                            timestamp=af.base.timestamp)
    labels = tuple(
        Label(id=lb.id, pos=(lb.pos[0] - u0, lb.pos[1] - v0), kind=lb.kind,
              world=lb.world, traversable=lb.traversable,
              dangerous=lb.dangerous)
        for lb in af.labels)
    goal = af.goal
    if goal is not None and isinstance(goal.pos, tuple):
        goal = GoalMarker(kind=goal.kind,
                          pos=(goal.pos[0] - u0, goal.pos[1] - v0),
                          radius=goal.radius)
    return AnnotatedFrame(base=base, labels=labels, setup=af.setup, goal=goal,
                          crop=(u0, v0, u1 - u0, v1 - v0))


def draw(af: AnnotatedFrame) -> Frame:
    """Render labels (and pixel goal) onto a fresh copy of the base frame.

    The goal is a filled red circle under the glyphs; glyphs are white
    digits with a 1-px black outline, composited in ascending label id.
    """
    img = af.base.data.copy()
    if af.goal is not None and af.goal.kind is GoalKind.RED_CIRCLE \
            and isinstance(af.goal.pos, tuple):
        _fill_circle(img, af.goal.pos, af.goal.radius, GOAL_COLOUR)
    scale = font.scale_for_frame(af.base.height)
    for lb in sorted(af.labels, key=lambda x: x.id):
        font.stamp_text(img, lb.pos, str(lb.id), scale)
    return Frame.from_array(img, source=af.base.source,
                            timestamp=af.base.timestamp)


def _fill_circle(img: np.ndarray, center: tuple[int, int], radius: int,
                 colour) -> None:
    h, w = img.shape[:2]
    cu, cv = center
    for dv in range(-radius, radius + 1):
        row = cv + dv
        if row < 0 or row >= h:
            continue
        span = int(math.isqrt(radius * radius - dv * dv))
        lo = max(0, cu - span)
        hi = min(w - 1, cu + span)
        if lo <= hi:
            img[row, lo:hi + 1] = colour
