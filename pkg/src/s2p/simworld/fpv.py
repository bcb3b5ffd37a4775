"""First-person grid world: rooms, discrete command execution,
visibility, and schematic rendering.

Cells are unit squares indexed (x, y) with y growing north; headings are
degrees counter-clockwise from +x in multiples of 30. Forward motion
snaps to the nearest cardinal direction, so diagonal headings drift
along the closest axis rather than between cells.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from ..core import Command, CommandKind, Frame, FrameSource, Pitch, command, \
    split_rng, wrap_degrees
from ..episodic import next_pitch
from ..geom import bresenham

FOV_DEG = 90.0
VIS_RANGE = 3.0  # cells
FRAME_W, FRAME_H = 320, 240

_SKY = (96, 148, 200)
_WALL = (180, 172, 160)
_FLOOR = (120, 110, 96)

# class -> icon colour; hashing would tie rendering to the interpreter
_PALETTE = {
    "microwave": (210, 210, 215), "fridge": (235, 235, 240),
    "sink": (200, 220, 230), "table": (150, 100, 60),
    "sofa": (170, 60, 60), "tv": (30, 30, 40), "lamp": (240, 220, 120),
    "bed": (90, 120, 180), "wardrobe": (110, 80, 50),
    "desk": (160, 120, 80), "toilet": (225, 225, 228),
    "bathtub": (215, 225, 232), "mirror": (190, 205, 215),
}


class RoomType(enum.Enum):
    KITCHEN = "kitchen"
    LIVING = "living"
    BEDROOM = "bedroom"
    BATHROOM = "bathroom"


_ROOM_OBJECTS = {
    RoomType.KITCHEN: ("microwave", "fridge", "sink", "table"),
    RoomType.LIVING: ("sofa", "tv", "table", "lamp"),
    RoomType.BEDROOM: ("bed", "wardrobe", "lamp", "desk"),
    RoomType.BATHROOM: ("sink", "toilet", "bathtub", "mirror"),
}


class StepEvent(enum.Enum):
    OK = "ok"
    BLOCKED = "blocked"
    DONE = "done"        # declared done without the target in view
    SUCCESS = "success"  # declared done with the target in view


@dataclass(frozen=True)
class FpvScene:
    grid: np.ndarray  # (h, w) bool, True = blocked
    objects: tuple[tuple[str, tuple[int, int]], ...]  # (class, (x, y))
    agent: tuple[int, int]
    heading: int      # degrees, multiple of 30
    pitch: Pitch
    target: str
    room_type: RoomType

    def __post_init__(self):
        x, y = self.agent
        if self.grid[y, x]:
            raise ValueError("agent on a blocked cell")
        if self.heading % 30 != 0:
            raise ValueError("heading must be a multiple of 30 degrees")
        if self.target not in {cls for cls, _ in self.objects}:
            raise ValueError(f"target {self.target!r} not present")
        self.grid.setflags(write=False)

    @property
    def width(self) -> int:
        return self.grid.shape[1]

    @property
    def height(self) -> int:
        return self.grid.shape[0]


def _cardinal_step(heading: int) -> tuple[int, int]:
    quadrant = round((heading % 360) / 90.0) % 4
    return [(1, 0), (0, 1), (-1, 0), (0, -1)][quadrant]


def _line_of_sight(scene: FpvScene, a: tuple[int, int],
                   b: tuple[int, int]) -> bool:
    """Free straight line between cell centres, endpoints excluded."""
    cells = bresenham(a[0], a[1], b[0], b[1])
    return all(not scene.grid[y, x] for x, y in cells[1:-1])


def visible_objects(scene: FpvScene) -> list[tuple[str, float]]:
    """(class, bearing offset in degrees, left positive) for everything
    inside the view cone. Nothing is visible while the camera tilts."""
    if scene.pitch is not Pitch.LEVEL:
        return []
    ax, ay = scene.agent
    seen = []
    for cls, (ox, oy) in scene.objects:
        dist = math.hypot(ox - ax, oy - ay)
        if dist == 0.0 or dist > VIS_RANGE:
            continue
        bearing = math.degrees(math.atan2(oy - ay, ox - ax))
        offset = wrap_degrees(bearing - scene.heading)
        if abs(offset) > FOV_DEG / 2:
            continue
        if not _line_of_sight(scene, scene.agent, (ox, oy)):
            continue
        seen.append((cls, offset))
    return sorted(seen)


def target_visible(scene: FpvScene) -> bool:
    return any(cls == scene.target for cls, _ in visible_objects(scene))


def fpv_step(scene: FpvScene, cmd: Command) -> tuple[FpvScene, StepEvent]:
    """Execute one command; illegal motion leaves the scene unchanged."""
    if cmd.kind is CommandKind.ROTATE:
        return replace(scene,
                       heading=(scene.heading + cmd.angle_deg) % 360), \
            StepEvent.OK
    if cmd.kind is CommandKind.MOVE_FORWARD:
        dx, dy = _cardinal_step(scene.heading)
        nx, ny = scene.agent[0] + dx, scene.agent[1] + dy
        if not (0 <= nx < scene.width and 0 <= ny < scene.height) \
                or scene.grid[ny, nx]:
            return scene, StepEvent.BLOCKED
        return replace(scene, agent=(nx, ny)), StepEvent.OK
    if cmd.kind in (CommandKind.LOOK_UP, CommandKind.LOOK_DOWN):
        return replace(scene, pitch=next_pitch(scene.pitch, cmd)), StepEvent.OK
    # DONE
    if target_visible(scene):
        return scene, StepEvent.SUCCESS
    return scene, StepEvent.DONE


def fpv_render(scene: FpvScene) -> tuple[Frame, list[tuple[str, float]]]:
    """Schematic first-person raster plus the ground-truth seen list.

    Icons are squares positioned by bearing (left offset = left of
    centre) and distance (closer = bigger and lower), over sky, wall and
    floor bands shifted by pitch.
    """
    img = np.zeros((FRAME_H, FRAME_W, 3), dtype=np.uint8)
    horizon = FRAME_H // 2 - scene.pitch.value * 2  # px shift per pitch
    horizon = max(20, min(FRAME_H - 20, horizon))
    wall_top = max(0, horizon - FRAME_H // 4)
    img[:wall_top] = _SKY
    img[wall_top:horizon] = _WALL
    img[horizon:] = _FLOOR

    seen = visible_objects(scene)
    ax, ay = scene.agent
    # paint far to near so close icons occlude distant ones
    order = []
    for cls, offset in seen:
        pos = next(p for c, p in scene.objects if c == cls)
        dist = math.hypot(pos[0] - ax, pos[1] - ay)
        order.append((dist, offset, cls))
    for dist, offset, cls in sorted(order, reverse=True):
        u = int(round(FRAME_W / 2 - offset / (FOV_DEG / 2) * FRAME_W * 0.45))
        size = int(round(70 / max(dist, 0.8)))
        v = horizon + int(round(46 / max(dist, 0.8))) - size // 2
        colour = _PALETTE.get(cls, (250, 120, 200))
        v0, v1 = max(0, v - size // 2), min(FRAME_H, v + size // 2 + 1)
        u0, u1 = max(0, u - size // 2), min(FRAME_W, u + size // 2 + 1)
        img[v0:v1, u0:u1] = colour
        # darker base strip anchors the icon and keeps classes of equal
        # colour distinguishable by size only
        img[max(0, v1 - 3):v1, u0:u1] = tuple(c // 2 for c in colour)
    frame = Frame.from_array(img, source=FrameSource.FPV_SIM)
    return frame, seen


def generate_fpv_scene(seed: int, room_type: RoomType,
                       size: int = 9) -> FpvScene:
    """Seeded room: bordered grid, four themed objects, reachable target."""
    for attempt in range(64):
        rng = split_rng(seed, "fpv-scene", room_type.value, str(attempt))
        grid = np.zeros((size, size), dtype=bool)
        grid[0, :] = grid[-1, :] = True
        grid[:, 0] = grid[:, -1] = True
        # one or two interior wall stubs
        for _ in range(int(rng.integers(1, 3))):
            wx = int(rng.integers(2, size - 2))
            wy = int(rng.integers(2, size - 2))
            if rng.random() < 0.5:
                grid[wy, wx:min(size - 1, wx + 2)] = True
            else:
                grid[wy:min(size - 1, wy + 2), wx] = True

        free = [(x, y) for y in range(size) for x in range(size)
                if not grid[y, x]]
        if len(free) < 12:
            continue
        picks = rng.choice(len(free), size=5, replace=False)
        objects = []
        for cls, idx in zip(_ROOM_OBJECTS[room_type], picks[:4]):
            x, y = free[idx]
            grid[y, x] = True
            objects.append((cls, (x, y)))
        agent = free[picks[4]]
        heading = int(rng.integers(0, 12)) * 30
        target = _ROOM_OBJECTS[room_type][int(rng.integers(0, 4))]
        try:
            scene = FpvScene(grid=grid, objects=tuple(objects), agent=agent,
                             heading=heading, pitch=Pitch.LEVEL,
                             target=target, room_type=room_type)
        except ValueError:
            continue
        if fpv_shortest_path_cells(scene) is not None:
            return scene
    raise RuntimeError(f"no solvable room for seed {seed}")


def _success_cells(scene: FpvScene) -> set[tuple[int, int]]:
    """Cells from which the target could be seen after rotating."""
    target_pos = next(p for c, p in scene.objects if c == scene.target)
    cells = set()
    for y in range(scene.height):
        for x in range(scene.width):
            if scene.grid[y, x]:
                continue
            d = math.hypot(x - target_pos[0], y - target_pos[1])
            if 0 < d <= VIS_RANGE and \
                    _line_of_sight(scene, (x, y), target_pos):
                cells.add((x, y))
    return cells


def fpv_shortest_path_cells(scene: FpvScene) -> Optional[int]:
    """BFS distance (forward moves) from the agent to the nearest cell
    with the target in visibility range; None when unreachable."""
    goal = _success_cells(scene)
    if not goal:
        return None
    start = scene.agent
    if start in goal:
        return 0
    frontier = [start]
    dist = {start: 0}
    while frontier:
        nxt = []
        for x, y in frontier:
            for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                c = (x + dx, y + dy)
                if c in dist or not (0 <= c[0] < scene.width
                                     and 0 <= c[1] < scene.height):
                    continue
                if scene.grid[c[1], c[0]]:
                    continue
                dist[c] = dist[(x, y)] + 1
                if c in goal:
                    return dist[c]
                nxt.append(c)
        frontier = nxt
    return None


def fpv_in_success_cell(scene: FpvScene) -> bool:
    """True when only rotation (no motion) separates the agent from
    seeing the target."""
    return scene.agent in _success_cells(scene)


def fpv_next_step_cell(scene: FpvScene) -> Optional[tuple[int, int]]:
    """First cell of a shortest path to the nearest target-visible cell;
    None when the agent is already there or no path exists."""
    goal = _success_cells(scene)
    start = scene.agent
    if not goal or start in goal:
        return None
    parent: dict[tuple[int, int], tuple[int, int]] = {start: start}
    frontier = [start]
    found = None
    while frontier and found is None:
        nxt = []
        for x, y in frontier:
            for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                c = (x + dx, y + dy)
                if c in parent or not (0 <= c[0] < scene.width
                                       and 0 <= c[1] < scene.height):
                    continue
                if scene.grid[c[1], c[0]]:
                    continue
                parent[c] = (x, y)
                if c in goal:
                    found = c
                    break
                nxt.append(c)
            if found:
                break
        frontier = nxt
    if found is None:
        return None
    cell = found
    while parent[cell] != start:
        cell = parent[cell]
    return cell


def fpv_scene_to_json(scene: FpvScene) -> dict:
    rows = ["".join("#" if scene.grid[y, x] else "."
                    for x in range(scene.width))
            for y in range(scene.height)]
    return {
        "grid": rows,
        "objects": [[cls, list(pos)] for cls, pos in scene.objects],
        "agent": list(scene.agent),
        "heading": scene.heading,
        "pitch": scene.pitch.name,
        "target": scene.target,
        "room_type": scene.room_type.value,
    }


def fpv_scene_from_json(data: dict) -> FpvScene:
    rows = data["grid"]
    grid = np.array([[ch == "#" for ch in row] for row in rows], dtype=bool)
    return FpvScene(
        grid=grid,
        objects=tuple((cls, (int(x), int(y)))
                      for cls, (x, y) in data["objects"]),
        agent=(int(data["agent"][0]), int(data["agent"][1])),
        heading=int(data["heading"]),
        pitch=Pitch[data["pitch"]],
        target=data["target"],
        room_type=RoomType(data["room_type"]),
    )
