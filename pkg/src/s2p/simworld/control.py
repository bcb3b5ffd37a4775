"""Unicycle kinematics and the PD path follower.

The follower chases a piecewise-linear path one waypoint at a time:
intermediate legs steer with a heading term plus a signed cross-track
term relative to the active segment, the final waypoint is homed on
directly so the run always terminates at the point rather than
coasting along the segment line. It knows nothing about scenes:
collision and early stopping are injected as callables so the same
tracker serves tests and the top-view world.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from ..core import ControllerGains

OMEGA_MAX = 2.5  # rad/s, keeps turn-in-place behaviour bounded
SLOW_HEADING_DEG = 45.0  # above this heading error, linear speed halves


@dataclass(frozen=True)
class PdController:
    gains: ControllerGains = field(default_factory=ControllerGains)
    eps: float = 0.05  # m, waypoint capture radius
    dt: float = 0.05   # s

    def __post_init__(self):
        if self.gains.k_heading <= 0 or self.gains.k_crosstrack <= 0 \
                or self.gains.v_lin <= 0:
            raise ValueError("controller gains must be positive")
        if not 0 < self.dt <= 0.1:
            raise ValueError("dt must be in (0, 0.1] s")


@dataclass(frozen=True)
class TraceRow:
    t: float
    x: float
    y: float
    theta: float  # rad
    waypoint: int  # index of the waypoint being chased


@dataclass(frozen=True)
class TrackResult:
    trace: tuple[TraceRow, ...]
    reached: int         # waypoints captured
    collided: bool
    stopped: bool        # stop_when fired (e.g. goal proximity)
    exhausted: bool      # tick budget ran out before finishing
    path_length: float   # m actually travelled

    @property
    def pose(self) -> tuple[float, float, float]:
        last = self.trace[-1]
        return (last.x, last.y, last.theta)


def _wrap_rad(a: float) -> float:
    return math.atan2(math.sin(a), math.cos(a))


def pd_track(pose: tuple[float, float, float],
             path: Sequence[tuple[float, float]],
             ctrl: PdController,
             max_ticks: int = 4000,
             collides: Optional[Callable[[float, float], bool]] = None,
             stop_when: Optional[Callable[[float, float], bool]] = None,
             ) -> TrackResult:
    """Integrate the unicycle until the path ends, something is hit,
    `stop_when` fires, or the tick budget runs out (partial trace)."""
    if not path:
        raise ValueError("path must be non-empty")
    x, y, theta = pose
    k_h = ctrl.gains.k_heading
    k_ct = ctrl.gains.k_crosstrack
    active = 0
    seg_start = (x, y)
    trace = [TraceRow(0.0, x, y, theta, active)]
    collided = False
    stopped = False
    travelled = 0.0

    for tick in range(1, max_ticks + 1):
        tx, ty = path[active]
        final = active == len(path) - 1
        sx, sy = tx - seg_start[0], ty - seg_start[1]
        seg_len = math.hypot(sx, sy)
        # the last waypoint is homed on directly: segment-line steering
        # would sail straight past it on any miss wider than eps
        if final or seg_len < 1e-9:
            course = math.atan2(ty - y, tx - x)
            e_ct = 0.0
        else:
            course = math.atan2(sy, sx)
            # signed cross-track, positive when left of the segment
            nx, ny = x - seg_start[0], y - seg_start[1]
            e_ct = (sx * ny - sy * nx) / seg_len
        e_heading = _wrap_rad(theta - course)
        omega = -k_h * e_heading - k_ct * e_ct
        omega = max(-OMEGA_MAX, min(OMEGA_MAX, omega))
        v = ctrl.gains.v_lin
        if abs(e_heading) > math.radians(SLOW_HEADING_DEG):
            v *= 0.5

        nx2 = x + v * math.cos(theta) * ctrl.dt
        ny2 = y + v * math.sin(theta) * ctrl.dt
        travelled += math.hypot(nx2 - x, ny2 - y)
        x, y = nx2, ny2
        theta = _wrap_rad(theta + omega * ctrl.dt)
        trace.append(TraceRow(tick * ctrl.dt, x, y, theta, active))

        if collides is not None and collides(x, y):
            collided = True
            break
        if stop_when is not None and stop_when(x, y):
            stopped = True
            break
        passed = False
        if not final and seg_len >= 1e-9:
            # corners: crossing the waypoint's perpendicular plane counts
            # as capture, otherwise a small lateral miss stalls the leg
            proj = ((x - seg_start[0]) * sx + (y - seg_start[1]) * sy) \
                / seg_len
            passed = proj >= seg_len
        if passed or math.hypot(tx - x, ty - y) <= ctrl.eps:
            seg_start = (tx, ty)
            active += 1
            if active >= len(path):
                break
    else:
        return TrackResult(trace=tuple(trace), reached=active, collided=False,
                           stopped=False, exhausted=True,
                           path_length=travelled)
    return TrackResult(trace=tuple(trace), reached=active, collided=collided,
                       stopped=stopped, exhausted=False, path_length=travelled)
