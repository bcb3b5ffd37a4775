"""Per-episode first-person context: a rotating compass of seen objects
plus action history, serialized to text for the prompt.

Compass entries are kept as world-referenced bearings alongside the
agent heading; the relative bearing the agent cares about is derived as
(bearing - heading) mod 360. Rotating therefore only moves the heading,
which makes "rotate with the agent" and "world directions preserved"
the same statement. Degrees are counter-clockwise seen from above, so
positive offsets are to the agent's left, matching the rotation
commands.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

from .core import Command, CommandKind, Pitch, command

FOV_DEG = 90.0  # camera field of view, bearing offsets must fit inside

_ROTATION_DELTAS = {30.0, 60.0, 90.0, -30.0, -60.0, -90.0}


@dataclass(frozen=True)
class Compass:
    """Object classes mapped to world bearings, plus the agent heading."""

    heading: float = 0.0  # degrees in [0, 360)
    entries: tuple[tuple[str, float], ...] = ()  # (class, world bearing)

    def __post_init__(self):
        names = [n for n, _ in self.entries]
        if len(names) != len(set(names)):
            raise ValueError("duplicate compass entries")

    def bearing_of(self, name: str) -> Optional[float]:
        for n, b in self.entries:
            if n == name:
                return b
        return None

    def relative(self) -> list[tuple[str, float]]:
        """(class, bearing relative to heading) sorted by bearing."""
        rel = [(n, (b - self.heading) % 360.0) for n, b in self.entries]
        return sorted(rel, key=lambda e: (e[1], e[0]))


def compass_observe(c: Compass, seen: Sequence[tuple[str, float]]) -> Compass:
    """Insert or overwrite entries at (heading + offset) mod 360."""
    for _, offset in seen:
        if abs(offset) > FOV_DEG / 2:
            raise ValueError(f"offset {offset} outside the {FOV_DEG} deg FOV")
    merged = dict(c.entries)
    for name, offset in seen:
        merged[name] = (c.heading + offset) % 360.0
    entries = tuple(sorted(merged.items()))
    return Compass(heading=c.heading, entries=entries)


def compass_rotate(c: Compass, delta: float) -> Compass:
    """Turn the agent by a command-table increment; entries are world
    bearings so only the heading moves."""
    if float(delta) not in _ROTATION_DELTAS:
        raise ValueError(f"rotation {delta} is not a command increment")
    return Compass(heading=(c.heading + delta) % 360.0, entries=c.entries)


@dataclass(frozen=True)
class EpisodicState:
    """Everything the prompt recaps about the episode so far."""

    compass: Compass = Compass()
    last_action: Optional[Command] = None
    pitch: Pitch = Pitch.LEVEL
    history: tuple[Command, ...] = ()
    planned_next: Optional[Command] = None
    max_steps: int = 25

    def __post_init__(self):
        if len(self.history) > self.max_steps:
            raise ValueError(
                f"history {len(self.history)} exceeds cap {self.max_steps}")


def observe(state: EpisodicState,
            seen: Sequence[tuple[str, float]]) -> EpisodicState:
    return replace(state, compass=compass_observe(state.compass, seen))


def rotate(state: EpisodicState, delta: float) -> EpisodicState:
    return replace(state, compass=compass_rotate(state.compass, delta))


def next_pitch(pitch: Pitch, cmd: Command) -> Pitch:
    """Saturating three-level pitch: UP <- LEVEL <-> DOWN."""
    order = [Pitch.DOWN, Pitch.LEVEL, Pitch.UP]
    i = order.index(pitch)
    if cmd.kind is CommandKind.LOOK_UP:
        i = min(i + 1, 2)
    elif cmd.kind is CommandKind.LOOK_DOWN:
        i = max(i - 1, 0)
    return order[i]


def apply_command(state: EpisodicState, code: int,
                  planned_next: Optional[int] = None) -> EpisodicState:
    """Advance the episodic record by one executed command."""
    cmd = command(code)
    compass = state.compass
    if cmd.kind is CommandKind.ROTATE:
        compass = compass_rotate(compass, cmd.angle_deg)
    return replace(
        state,
        compass=compass,
        last_action=cmd,
        pitch=next_pitch(state.pitch, cmd),
        history=state.history + (cmd,),
        planned_next=None if planned_next is None else command(planned_next),
    )


def _describe(cmd: Optional[Command]) -> str:
    if cmd is None:
        return "none"
    if cmd.kind is CommandKind.ROTATE:
        side = "left" if cmd.angle_deg > 0 else "right"
        return f"rotate {abs(cmd.angle_deg)} degrees {side} ({cmd.code})"
    return f"{cmd.kind.value} ({cmd.code})"


def to_prompt_text(state: EpisodicState) -> str:
    """Stable plain-text recap; equal states render to equal text."""
    lines = ["Known objects, degrees counter-clockwise from straight ahead:"]
    rel = state.compass.relative()
    if not rel:
        lines.append("- no objects recorded")
    else:
        for name, bearing in rel:
            lines.append(f"- {name} at {bearing:g} degrees")
    lines.append(f"Last action: {_describe(state.last_action)}")
    lines.append(f"View pitch: {state.pitch.name.lower()}")
    if state.history:
        codes = ", ".join(str(c.code) for c in state.history)
    else:
        codes = "none"
    lines.append(f"Commands so far: {codes}")
    lines.append(f"Planned next: {_describe(state.planned_next)}")
    return "\n".join(lines)
