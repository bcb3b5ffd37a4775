"""Top-view planar world: obstacle rooms, overhead rendering, the
floor-mask + keypoint annotation step, a ground-truth planner, and the
plan/track/replan episode loop.

World frame: metres, origin bottom-left, y up. The overhead camera maps
this to pixels through the scene homography (v grows downward). Two
obstacle groups exist on purpose: `obstacles` were present when the
floor mask was captured and are therefore masked out of the candidate
rings, while `surprise` obstacles appeared afterwards — the mask still
calls that floor, so candidate points can land dangerously close to
them. Ground truth (danger flags, collision, the reference planner)
always uses both groups plus the boundary walls.
"""

from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np

from ..annotator import (DANGER_INFLATION, FloorMask, mark_dangerous,
                         tpv_keypoints, world_to_pixel)
from ..core import (AnnotatedFrame, Frame, FrameSource, GoalKind, GoalMarker,
                    Label, PlanAnswer, RingSpec, RunConfig, Setup, split_rng)
from ..errors import (NoCandidatesError, RobotOffFloorError, S2PError,
                      UnknownLabelError)
from ..geom import distance_to_obstacles
from ..metrics import EpisodeResult, PlanRecord
from .control import PdController, TraceRow, pd_track

Polygon = tuple[tuple[float, float], ...]

COLLISION_RADIUS = 0.2   # m, also the danger inflation
ORACLE_CLEARANCE = 0.35  # m, reference planner keeps this much margin
GOAL_EPS = 0.3           # m, goal capture radius, checked every tick
GRID_RES = 0.05          # m, occupancy grid cell
WALL_THICKNESS = 0.1     # m, boundary wall polygons straddle the border

_FLOOR = (168, 160, 148)
_OBSTACLE = (70, 66, 60)
_SURPRISE = (104, 76, 48)
_WALL = (50, 48, 46)
_ROBOT = (40, 90, 200)


@dataclass(frozen=True)
class TpvScene:
    bounds: tuple[float, float] = (5.0, 5.0)
    obstacles: tuple[Polygon, ...] = ()  # present when the mask was captured
    surprise: tuple[Polygon, ...] = ()   # appeared later, absent from the mask
    robot: tuple[float, float, float] = (0.7, 0.7, 0.0)  # x, y, theta(rad)
    goal: tuple[float, float] = (4.3, 4.3)
    px_per_m: int = 96

    def __post_init__(self):
        for label, point in (("robot", self.robot[:2]), ("goal", self.goal)):
            if distance_to_obstacles(point, self.true_obstacles()) \
                    <= COLLISION_RADIUS:
                raise ValueError(f"{label} not on free space")

    @property
    def frame_width(self) -> int:
        return int(round(self.bounds[0] * self.px_per_m))

    @property
    def frame_height(self) -> int:
        return int(round(self.bounds[1] * self.px_per_m))

    def homography(self) -> np.ndarray:
        s = float(self.px_per_m)
        return np.array([[s, 0.0, 0.0],
                         [0.0, -s, s * self.bounds[1]],
                         [0.0, 0.0, 1.0]])

    def wall_polygons(self) -> tuple[Polygon, ...]:
        w, h = self.bounds
        t = WALL_THICKNESS / 2
        return (
            ((-t, -t), (w + t, -t), (w + t, t), (-t, t)),
            ((-t, h - t), (w + t, h - t), (w + t, h + t), (-t, h + t)),
            ((-t, -t), (t, -t), (t, h + t), (-t, h + t)),
            ((w - t, -t), (w + t, -t), (w + t, h + t), (w - t, h + t)),
        )

    def true_obstacles(self) -> tuple[Polygon, ...]:
        return self.obstacles + self.surprise + self.wall_polygons()

    def robot_px(self) -> tuple[int, int]:
        u, v = world_to_pixel(self.homography(), self.robot[:2])
        return int(round(u)), int(round(v))

    def goal_px(self) -> tuple[int, int]:
        u, v = world_to_pixel(self.homography(), self.goal)
        return int(round(u)), int(round(v))


def _polygon_spans(poly: Polygon, s: float, h_m: float, w_px: int,
                   h_px: int) -> list[tuple[int, int, int]]:
    """(row, u0, u1) pixel spans whose centres fall inside the polygon."""
    ys = [p[1] for p in poly]
    v_lo = max(0, int(math.floor((h_m - max(ys)) * s - 0.5)))
    v_hi = min(h_px - 1, int(math.ceil((h_m - min(ys)) * s + 0.5)))
    spans = []
    n = len(poly)
    for v in range(v_lo, v_hi + 1):
        y = h_m - (v + 0.5) / s
        xs = []
        for i in range(n):
            x1, y1 = poly[i]
            x2, y2 = poly[(i + 1) % n]
            if (y1 > y) != (y2 > y):
                xs.append(x1 + (y - y1) * (x2 - x1) / (y2 - y1))
        xs.sort()
        for j in range(0, len(xs) - 1, 2):
            u0 = max(0, int(math.ceil(xs[j] * s - 0.5)))
            u1 = min(w_px - 1, int(math.floor(xs[j + 1] * s - 0.5)))
            if u0 <= u1:
                spans.append((v, u0, u1))
    return spans


def floor_mask(scene: TpvScene) -> FloorMask:
    """Traversability raster as captured at setup: boundary walls and
    `obstacles` are non-floor; `surprise` obstacles are invisible to it."""
    h_px, w_px = scene.frame_height, scene.frame_width
    bits = np.ones((h_px, w_px), dtype=bool)
    s = float(scene.px_per_m)
    for poly in scene.obstacles + scene.wall_polygons():
        for v, u0, u1 in _polygon_spans(poly, s, scene.bounds[1], w_px, h_px):
            bits[v, u0:u1 + 1] = False
    return FloorMask.from_array(bits)


def tpv_render(scene: TpvScene) -> Frame:
    """Deterministic overhead raster: floor, both obstacle groups (the
    camera sees everything), boundary walls, robot disk with heading."""
    h_px, w_px = scene.frame_height, scene.frame_width
    img = np.empty((h_px, w_px, 3), dtype=np.uint8)
    img[:] = _FLOOR
    s = float(scene.px_per_m)
    groups = ((scene.obstacles, _OBSTACLE), (scene.surprise, _SURPRISE),
              (scene.wall_polygons(), _WALL))
    for polys, colour in groups:
        for poly in polys:
            for v, u0, u1 in _polygon_spans(poly, s, scene.bounds[1],
                                            w_px, h_px):
                img[v, u0:u1 + 1] = colour
    ru, rv = scene.robot_px()
    r = max(3, int(round(0.08 * s)))
    for dv in range(-r, r + 1):
        span = int(math.isqrt(r * r - dv * dv))
        v = rv + dv
        if 0 <= v < h_px:
            u0, u1 = max(0, ru - span), min(w_px - 1, ru + span)
            img[v, u0:u1 + 1] = _ROBOT
    # heading tick
    hx = ru + int(round(1.8 * r * math.cos(scene.robot[2])))
    hy = rv - int(round(1.8 * r * math.sin(scene.robot[2])))
    steps = 2 * r
    for k in range(steps + 1):
        u = ru + (hx - ru) * k // steps
        v = rv + (hy - rv) * k // steps
        if 0 <= u < w_px and 0 <= v < h_px:
            img[v, u] = _ROBOT
    return Frame.from_array(img, source=FrameSource.TPV_SIM)


def tpv_annotated_frame(scene: TpvScene, mask: FloorMask, ring: RingSpec,
                        ) -> AnnotatedFrame:
    """Render, generate ring candidates on the mask, attach ground-truth
    danger flags and the red-circle goal."""
    labels = tpv_keypoints(scene.robot_px(), mask, ring, scene.homography())
    labels = mark_dangerous(labels, scene.true_obstacles(), DANGER_INFLATION)
    goal = GoalMarker(kind=GoalKind.RED_CIRCLE, pos=scene.goal_px(),
                      radius=max(6, int(round(0.08 * scene.px_per_m))))
    return AnnotatedFrame(base=tpv_render(scene), labels=tuple(labels),
                          setup=Setup.TPV, goal=goal)


# --- occupancy grids and distance fields ---------------------------------

def _grid_shape(bounds: tuple[float, float]) -> tuple[int, int]:
    return (int(round(bounds[1] / GRID_RES)), int(round(bounds[0] / GRID_RES)))


def _cell(p: Sequence[float], shape: tuple[int, int]) -> tuple[int, int]:
    iy = min(shape[0] - 1, max(0, int(p[1] / GRID_RES)))
    ix = min(shape[1] - 1, max(0, int(p[0] / GRID_RES)))
    return iy, ix


def _occupancy(bounds: tuple[float, float],
               polygons: tuple[Polygon, ...]) -> np.ndarray:
    ny, nx = _grid_shape(bounds)
    occ = np.zeros((ny, nx), dtype=bool)
    for poly in polygons:
        xs = [p[0] for p in poly]
        ys = [p[1] for p in poly]
        iy0 = max(0, int(min(ys) / GRID_RES) - 1)
        iy1 = min(ny - 1, int(max(ys) / GRID_RES) + 1)
        for iy in range(iy0, iy1 + 1):
            y = (iy + 0.5) * GRID_RES
            crossings = []
            n = len(poly)
            for i in range(n):
                x1, y1 = poly[i]
                x2, y2 = poly[(i + 1) % n]
                if (y1 > y) != (y2 > y):
                    crossings.append(x1 + (y - y1) * (x2 - x1) / (y2 - y1))
            crossings.sort()
            for j in range(0, len(crossings) - 1, 2):
                ix0 = max(0, int(math.ceil(crossings[j] / GRID_RES - 0.5)))
                ix1 = min(nx - 1,
                          int(math.floor(crossings[j + 1] / GRID_RES - 0.5)))
                if ix0 <= ix1:
                    occ[iy, ix0:ix1 + 1] = True
    return occ


def _inflate(occ: np.ndarray, radius_m: float) -> np.ndarray:
    r = int(round(radius_m / GRID_RES))
    if r <= 0:
        return occ.copy()
    out = occ.copy()
    ny, nx = occ.shape
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            if dx * dx + dy * dy > r * r or (dx == 0 and dy == 0):
                continue
            src = occ[max(0, -dy):ny - max(0, dy),
                      max(0, -dx):nx - max(0, dx)]
            out[max(0, dy):ny - max(0, -dy),
                max(0, dx):nx - max(0, -dx)] |= src
    return out


@lru_cache(maxsize=128)
def _blocked_grid(bounds: tuple[float, float],
                  polygons: tuple[Polygon, ...],
                  clearance: float) -> np.ndarray:
    grid = _inflate(_occupancy(bounds, polygons), clearance)
    grid.setflags(write=False)
    return grid


@lru_cache(maxsize=128)
def _distance_field(bounds: tuple[float, float],
                    polygons: tuple[Polygon, ...],
                    clearance: float,
                    goal: tuple[float, float]) -> np.ndarray:
    """Metres-to-goal over the inflated grid (8-connected Dijkstra);
    inf where blocked or unreachable."""
    blocked = _blocked_grid(bounds, polygons, clearance)
    ny, nx = blocked.shape
    dist = np.full((ny, nx), np.inf)
    gy, gx = _cell(goal, (ny, nx))
    if blocked[gy, gx]:
        return dist
    dist[gy, gx] = 0.0
    pq = [(0.0, gy, gx)]
    diag = GRID_RES * math.sqrt(2.0)
    while pq:
        d, y, x = heapq.heappop(pq)
        if d > dist[y, x]:
            continue
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dy == 0 and dx == 0:
                    continue
                y2, x2 = y + dy, x + dx
                if not (0 <= y2 < ny and 0 <= x2 < nx) or blocked[y2, x2]:
                    continue
                nd = d + (diag if dy and dx else GRID_RES)
                if nd < dist[y2, x2]:
                    dist[y2, x2] = nd
                    heapq.heappush(pq, (nd, y2, x2))
    dist.setflags(write=False)
    return dist


def goal_distance_field(scene: TpvScene,
                        clearance: float = ORACLE_CLEARANCE) -> np.ndarray:
    return _distance_field(scene.bounds, scene.true_obstacles(), clearance,
                           scene.goal)


def shortest_path_length(scene: TpvScene) -> float:
    """Start-to-goal length at the minimum legal clearance; inf if the
    room is unsolvable."""
    field = _distance_field(scene.bounds, scene.true_obstacles(),
                            COLLISION_RADIUS, scene.goal)
    return float(field[_cell(scene.robot[:2], field.shape)])


def _line_free(a: Sequence[float], b: Sequence[float],
               blocked: np.ndarray) -> bool:
    length = math.hypot(b[0] - a[0], b[1] - a[1])
    n = max(2, int(math.ceil(length / (GRID_RES / 2))) + 1)
    xs = np.linspace(a[0], b[0], n)
    ys = np.linspace(a[1], b[1], n)
    iy = np.clip((ys / GRID_RES).astype(int), 0, blocked.shape[0] - 1)
    ix = np.clip((xs / GRID_RES).astype(int), 0, blocked.shape[1] - 1)
    return not blocked[iy, ix].any()


def oracle_plan_tpv(scene: TpvScene, labels: Sequence[Label],
                    field: Optional[np.ndarray] = None,
                    max_points: int = 4) -> list[int]:
    """Reference plan: chain up to 4 candidate labels, each visible from
    the previous point and strictly closer to the goal on the true map.

    Plans on the full obstacle set with extra clearance, so dangerous
    labels are never selected.
    """
    if field is None:
        field = goal_distance_field(scene)
    blocked = np.isinf(field)

    def value(p):
        return float(field[_cell(p, field.shape)])

    candidates = [lb for lb in labels
                  if lb.id != 0 and math.isfinite(value(lb.world))]
    chosen: list[Label] = []
    cur = scene.robot[:2]
    cur_val = value(cur)
    for _ in range(max_points):
        if cur_val <= GOAL_EPS:
            break
        best = None
        best_val = cur_val - 1e-9
        for lb in candidates:
            if any(lb.id == c.id for c in chosen):
                continue
            v = value(lb.world)
            if v < best_val and _line_free(cur, lb.world, blocked):
                best = lb
                best_val = v
        if best is None:
            break
        chosen.append(best)
        cur = best.world
        cur_val = best_val
    if not chosen:
        # nothing improves (start near a local pocket): take the closest
        # visible candidate so the answer is still well-formed
        reachable = [lb for lb in candidates
                     if _line_free(scene.robot[:2], lb.world, blocked)]
        pool = reachable or list(labels)[1:] or list(labels)
        best = min(pool, key=lambda lb: (value(lb.world), lb.id))
        chosen = [best]
    return [lb.id for lb in chosen]


def oracle_plan_answer(scene: TpvScene, af: AnnotatedFrame,
                       field: Optional[np.ndarray] = None) -> PlanAnswer:
    """Oracle plan wrapped in the structured answer format, with a
    templated think-aloud explanation."""
    ids = oracle_plan_tpv(scene, af.labels, field=field)
    risky = tuple(sorted(lb.id for lb in af.labels if lb.dangerous))
    if risky:
        explanation = (f"I head for the red goal through markers "
                       f"{', '.join(map(str, ids))}, staying away from the "
                       f"markers that hug obstacles.")
    else:
        explanation = (f"The way to the red goal is clear; I follow markers "
                       f"{', '.join(map(str, ids))}.")
    return PlanAnswer(commands=tuple(ids), explanation=explanation,
                      dangerous_ids=risky or None)


def tpv_scene_to_json(scene: TpvScene) -> dict:
    return {
        "bounds": list(scene.bounds),
        "obstacles": [[list(p) for p in poly] for poly in scene.obstacles],
        "surprise": [[list(p) for p in poly] for poly in scene.surprise],
        "robot": list(scene.robot),
        "goal": list(scene.goal),
        "px_per_m": scene.px_per_m,
    }


def tpv_scene_from_json(data: dict) -> TpvScene:
    def polys(key):
        return tuple(tuple((float(x), float(y)) for x, y in poly)
                     for poly in data.get(key, []))

    x, y, theta = data["robot"]
    return TpvScene(bounds=tuple(float(b) for b in data["bounds"]),
                    obstacles=polys("obstacles"),
                    surprise=polys("surprise"),
                    robot=(float(x), float(y), float(theta)),
                    goal=tuple(float(g) for g in data["goal"]),
                    px_per_m=int(data.get("px_per_m", 96)))


# --- room generation ------------------------------------------------------

def _rand_rect(rng, x_lo, x_hi, y_lo, y_hi, w_lo, w_hi) -> Polygon:
    w = float(rng.uniform(w_lo, w_hi))
    h = float(rng.uniform(w_lo, w_hi))
    x = float(rng.uniform(x_lo, max(x_lo, x_hi - w)))
    y = float(rng.uniform(y_lo, max(y_lo, y_hi - h)))
    return ((x, y), (x + w, y), (x + w, y + h), (x, y + h))


def generate_tpv_room(seed: int, bounds: tuple[float, float] = (5.0, 5.0),
                      px_per_m: int = 96) -> TpvScene:
    """Seeded solvable room: a few masked obstacles, one or two surprise
    obstacles dropped near the start-goal corridor, robot and goal with
    generous clearance."""
    w, h = bounds
    for attempt in range(96):
        rng = split_rng(seed, "tpv-room", str(attempt))
        rx = float(rng.uniform(0.7, w - 0.7))
        ry = float(rng.uniform(0.7, h - 0.7))
        theta = float(rng.uniform(-math.pi, math.pi))
        gx = float(rng.uniform(0.7, w - 0.7))
        gy = float(rng.uniform(0.7, h - 0.7))
        if math.hypot(gx - rx, gy - ry) < 2.5:
            continue

        obstacles: list[Polygon] = []
        for _ in range(int(rng.integers(2, 5))):
            rect = _rand_rect(rng, 0.2, w - 0.2, 0.2, h - 0.2, 0.4, 1.0)
            if distance_to_obstacles((rx, ry), [rect]) < 0.5 or \
                    distance_to_obstacles((gx, gy), [rect]) < 0.5:
                continue
            obstacles.append(rect)
        surprise: list[Polygon] = []
        for _ in range(int(rng.integers(1, 3))):
            t = float(rng.uniform(0.3, 0.7))
            mx = rx + t * (gx - rx)
            my = ry + t * (gy - ry)
            # perpendicular jitter off the corridor centreline
            px, py = -(gy - ry), gx - rx
            norm = math.hypot(px, py)
            off = float(rng.uniform(-0.8, 0.8))
            cx = mx + off * px / norm
            cy = my + off * py / norm
            side = float(rng.uniform(0.3, 0.6))
            rect = ((cx - side / 2, cy - side / 2),
                    (cx + side / 2, cy - side / 2),
                    (cx + side / 2, cy + side / 2),
                    (cx - side / 2, cy + side / 2))
            if distance_to_obstacles((rx, ry), [rect]) < 0.45 or \
                    distance_to_obstacles((gx, gy), [rect]) < 0.45:
                continue
            surprise.append(rect)
        if not surprise:
            continue

        try:
            scene = TpvScene(bounds=bounds, obstacles=tuple(obstacles),
                             surprise=tuple(surprise),
                             robot=(rx, ry, theta), goal=(gx, gy),
                             px_per_m=px_per_m)
        except ValueError:
            continue
        field = goal_distance_field(scene)
        if math.isfinite(float(field[_cell((rx, ry), field.shape)])):
            return scene
    raise RuntimeError(f"no solvable room for seed {seed}")


# --- episode loop ---------------------------------------------------------

Planner = Callable[[AnnotatedFrame, TpvScene], PlanAnswer]


def collision_checker(scene: TpvScene) -> Callable[[float, float], bool]:
    """Point-in-collision test against every obstacle (surprises and
    walls included), inflated by the robot radius.

    Exact polygon distance decides; two cached grids (inflated a cell
    diagonal below and above the radius) short-circuit everything that
    is clearly inside or clearly clear, so the exact test only runs in
    the boundary band."""
    margin = GRID_RES * math.sqrt(2.0)
    polygons = scene.true_obstacles()
    inner = _blocked_grid(scene.bounds, polygons, COLLISION_RADIUS - margin)
    outer = _blocked_grid(scene.bounds, polygons, COLLISION_RADIUS + margin)

    def collides(x: float, y: float) -> bool:
        cell = _cell((x, y), outer.shape)
        if not outer[cell]:
            return False
        if inner[cell]:
            return True
        return distance_to_obstacles((x, y), polygons) <= COLLISION_RADIUS

    return collides


def tpv_replan_loop(scene: TpvScene, planner: Planner,
                    cfg: RunConfig) -> EpisodeResult:
    """Plan, track the first two chosen waypoints, replan — until the
    goal is within reach, a collision ends the run, or the step budget
    is spent. Every iteration records the predicted ids, the reference
    ids on the same frame, and whether the selection was safe."""
    ctrl = PdController(gains=cfg.gains, eps=cfg.waypoint_tol)
    mask = floor_mask(scene)  # captured once, never updated
    oracle_field = goal_distance_field(scene)
    collides = collision_checker(scene)
    shortest = shortest_path_length(scene)

    def near_goal(x: float, y: float) -> bool:
        return math.hypot(x - scene.goal[0], y - scene.goal[1]) <= GOAL_EPS

    cur = scene
    records: list[PlanRecord] = []
    agent_len = 0.0
    dangerous = False
    success = False
    reason = ""

    if near_goal(*cur.robot[:2]):
        return EpisodeResult(success=True, steps=0, records=(),
                             dangerous_hit=False, agent_length=0.0,
                             shortest_length=shortest)

    for _ in range(cfg.max_steps):
        try:
            af = tpv_annotated_frame(cur, mask, cfg.ring)
        except (RobotOffFloorError, NoCandidatesError) as err:
            reason = f"annotation failed: {err}"
            break
        expert = oracle_plan_tpv(cur, af.labels, field=oracle_field)
        try:
            answer = planner(af, cur)
        except S2PError as err:
            reason = f"planner failed: {err}"
            break
        valid = af.valid_action_ids()
        bad = next((c for c in answer.commands if c not in valid), None)
        if bad is not None:
            reason = str(UnknownLabelError(bad))
            break
        selected = [af.label_by_id(c) for c in answer.commands]
        safe = not any(lb.dangerous for lb in selected)
        dangerous = dangerous or not safe
        records.append(PlanRecord(predicted=tuple(answer.commands),
                                  expert=tuple(expert), safe=safe))

        waypoints = [lb.world for lb in selected[:2] if lb.id != 0]
        if not waypoints:
            continue  # picked only the origin: a no-op iteration
        res = pd_track(cur.robot, waypoints, ctrl, max_ticks=900,
                       collides=collides, stop_when=near_goal)
        agent_len += res.path_length
        if res.collided:
            dangerous = True
            reason = "collision while tracking"
            break
        cur = replace(cur, robot=res.pose)
        if res.stopped:
            success = True
            break
    else:
        reason = "step budget exhausted"

    return EpisodeResult(success=success, steps=len(records),
                         records=tuple(records), dangerous_hit=dangerous,
                         agent_length=agent_len, shortest_length=shortest,
                         failure_reason="" if success else reason)


def export_trace_csv(trace: Sequence[TraceRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tick", "x", "y", "theta", "waypoint"])
        for i, row in enumerate(trace):
            writer.writerow([i, f"{row.x:.6f}", f"{row.y:.6f}",
                             f"{row.theta:.6f}", row.waypoint])
