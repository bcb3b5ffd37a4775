"""Shared domain types and the run configuration surface.

Everything here is an immutable value object; frames wrap read-only numpy
rasters so they can be shared between threads and cached safely.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import ConfigRangeError, UnknownConfigKeyError


class FrameSource(enum.Enum):
    FPV_SIM = "fpv_sim"
    TPV_SIM = "tpv_sim"
    FILE = "file"


class Setup(enum.Enum):
    FPV = "fpv"
    TPV = "tpv"


class LabelKind(enum.Enum):
    ROBOT_ORIGIN = "robot_origin"
    WAYPOINT = "waypoint"
    ACTION_OVERLAY = "action_overlay"


class GoalKind(enum.Enum):
    RED_CIRCLE = "red_circle"
    TARGET_OBJECT = "target_object"


class Pitch(enum.Enum):
    UP = 30
    LEVEL = 0
    DOWN = -30


@dataclass(frozen=True)
class Frame:
    """RGB8 raster with provenance.

    `data` has shape (height, width, 3), dtype uint8, and is marked
    read-only on construction.
    """

    width: int
    height: int
    data: np.ndarray
    source: FrameSource = FrameSource.FILE
    timestamp: int = 0

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("frame dimensions must be positive")
        if self.data.shape != (self.height, self.width, 3):
            raise ValueError(
                f"frame data shape {self.data.shape} != "
                f"({self.height}, {self.width}, 3)"
            )
        if self.data.dtype != np.uint8:
            raise ValueError("frame data must be uint8")
        self.data.setflags(write=False)

    @classmethod
    def from_array(cls, data: np.ndarray, source: FrameSource = FrameSource.FILE,
                   timestamp: int = 0) -> "Frame":
        arr = np.ascontiguousarray(data, dtype=np.uint8)
        h, w = arr.shape[:2]
        return cls(width=w, height=h, data=arr, source=source, timestamp=timestamp)

    def digest(self) -> str:
        """SHA-256 of the raw pixel bytes (stable identity for caching)."""
        return hashlib.sha256(self.data.tobytes()).hexdigest()


@dataclass(frozen=True)
class Label:
    """A numeric marker placed on a frame."""

    id: int
    pos: tuple[int, int]  # (u, v) pixel coords, u = column
    kind: LabelKind
    world: Optional[tuple[float, float]] = None  # planar metres
    traversable: bool = True
    dangerous: bool = False

    def __post_init__(self):
        if not (0 <= self.id <= 99):
            raise ValueError(f"label id {self.id} outside 0..99")
        if self.kind is LabelKind.ROBOT_ORIGIN and self.id != 0:
            raise ValueError("ROBOT_ORIGIN label must have id 0")


@dataclass(frozen=True)
class GoalMarker:
    kind: GoalKind
    pos: tuple[int, int] | str  # pixel coords (TPV) or object class (FPV)
    radius: int = 8  # pixels, RED_CIRCLE only


@dataclass(frozen=True)
class AnnotatedFrame:
    """A frame plus placed labels and an optional goal marker.

    `crop`, when present, is the rect (u0, v0, w, h) in the original
    frame that `base` was cut from; label coords are in crop space.
    """

    base: Frame
    labels: tuple[Label, ...]
    setup: Setup
    goal: Optional[GoalMarker] = None
    crop: Optional[tuple[int, int, int, int]] = None

    def __post_init__(self):
        ids = [lb.id for lb in self.labels]
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate label ids on one frame")
        for lb in self.labels:
            u, v = lb.pos
            if not (0 <= u < self.base.width and 0 <= v < self.base.height):
                raise ValueError(f"label {lb.id} at {lb.pos} outside frame bounds")

    def label_by_id(self, label_id: int) -> Label:
        for lb in self.labels:
            if lb.id == label_id:
                return lb
        raise KeyError(label_id)

    def valid_action_ids(self) -> frozenset[int]:
        """Ids the model may legally answer with.

        FPV frames accept the full command table 0..9 (8/9 undrawn but
        valid); TPV frames accept exactly the drawn label ids.
        """
        if self.setup is Setup.FPV:
            return frozenset(range(10))
        return frozenset(lb.id for lb in self.labels)


class CommandKind(enum.Enum):
    DONE = "done"
    ROTATE = "rotate"
    MOVE_FORWARD = "move_forward"
    LOOK_UP = "look_up"
    LOOK_DOWN = "look_down"


@dataclass(frozen=True)
class Command:
    """One discrete first-person command.

    Rotation codes map to fixed increments, positive = left:
    1 -> +90, 2 -> +60, 3 -> +30, 5 -> -30, 6 -> -60, 7 -> -90.
    """

    code: int
    kind: CommandKind
    angle_deg: int = 0  # rotation increment; 0 for non-rotations


_COMMAND_TABLE: dict[int, Command] = {
    0: Command(0, CommandKind.DONE),
    1: Command(1, CommandKind.ROTATE, 90),
    2: Command(2, CommandKind.ROTATE, 60),
    3: Command(3, CommandKind.ROTATE, 30),
    4: Command(4, CommandKind.MOVE_FORWARD),
    5: Command(5, CommandKind.ROTATE, -30),
    6: Command(6, CommandKind.ROTATE, -60),
    7: Command(7, CommandKind.ROTATE, -90),
    8: Command(8, CommandKind.LOOK_UP),
    9: Command(9, CommandKind.LOOK_DOWN),
}

ROTATION_CODES = {c.angle_deg: c.code for c in _COMMAND_TABLE.values()
                  if c.kind is CommandKind.ROTATE}


def command(code: int) -> Command:
    """Decode a command code; raises KeyError outside 0..9."""
    return _COMMAND_TABLE[code]


def all_commands() -> tuple[Command, ...]:
    return tuple(_COMMAND_TABLE[c] for c in range(10))


@dataclass(frozen=True)
class PlanAnswer:
    """Structured model output for one planning query."""

    commands: tuple[int, ...]
    explanation: str
    objects_seen: Optional[tuple[str, ...]] = None
    dangerous_ids: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        if not self.commands:
            raise ValueError("answer must carry at least one command")

    def to_json_dict(self) -> dict:
        out: dict = {"commands": list(self.commands), "explanation": self.explanation}
        if self.objects_seen is not None:
            out["objects"] = list(self.objects_seen)
        if self.dangerous_ids is not None:
            out["dangerous"] = list(self.dangerous_ids)
        return out


@dataclass(frozen=True)
class RingSpec:
    """Geometry of the third-person candidate-waypoint rings."""

    dr: float = 0.5          # metres between ring radii
    arc: float = 0.5         # metres between points along one ring
    n_rings: int = 4
    safety_radius: int = 6   # pixels that must all be traversable around a point


@dataclass(frozen=True)
class ControllerGains:
    k_heading: float = 2.0
    k_crosstrack: float = 1.5
    v_lin: float = 0.2  # m/s


@dataclass(frozen=True)
class RunConfig:
    """Every knob a run needs; serialized as flat-ish JSON.

    The JSON key for `lam` is "lambda" (reserved word in Python).
    """

    lam: float = 0.7
    k_icl: int = 10
    max_steps: int = 25
    ring: RingSpec = field(default_factory=RingSpec)
    gains: ControllerGains = field(default_factory=ControllerGains)
    waypoint_tol: float = 0.05  # metres
    embedder: str = "hist96"
    backend: str = "oracle"
    seed: int = 0

    def to_json_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "k_icl": self.k_icl,
            "max_steps": self.max_steps,
            "ring": {"dr": self.ring.dr, "arc": self.ring.arc,
                     "n_rings": self.ring.n_rings,
                     "safety_radius": self.ring.safety_radius},
            "gains": {"k_heading": self.gains.k_heading,
                      "k_crosstrack": self.gains.k_crosstrack,
                      "v_lin": self.gains.v_lin},
            "waypoint_tol": self.waypoint_tol,
            "embedder": self.embedder,
            "backend": self.backend,
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2)


_RING_KEYS = {"dr", "arc", "n_rings", "safety_radius"}
_GAIN_KEYS = {"k_heading", "k_crosstrack", "v_lin"}
_TOP_KEYS = {"lambda", "k_icl", "max_steps", "ring", "gains",
             "waypoint_tol", "embedder", "backend", "seed"}


def config_from_json(text: str | bytes) -> RunConfig:
    """Parse a RunConfig JSON document. Unknown keys are rejected."""
    doc = json.loads(text)
    if not isinstance(doc, dict):
        raise ConfigRangeError("document", "top level must be an object")
    for key in doc:
        if key not in _TOP_KEYS:
            raise UnknownConfigKeyError(key)
    ring_doc = doc.get("ring", {})
    for key in ring_doc:
        if key not in _RING_KEYS:
            raise UnknownConfigKeyError(f"ring.{key}")
    gains_doc = doc.get("gains", {})
    for key in gains_doc:
        if key not in _GAIN_KEYS:
            raise UnknownConfigKeyError(f"gains.{key}")
    ring = replace(RingSpec(), **ring_doc)
    gains = replace(ControllerGains(), **gains_doc)
    kwargs = {k: v for k, v in doc.items() if k not in ("lambda", "ring", "gains")}
    cfg = RunConfig(lam=doc.get("lambda", 0.7), ring=ring, gains=gains, **kwargs)
    return validate_config(cfg)


def validate_config(cfg: RunConfig) -> RunConfig:
    """Range-check a config; returns it unchanged when valid.

    Defaults are carried by the dataclass, so validation is idempotent
    by construction.
    """
    if not (isinstance(cfg.lam, (int, float)) and 0.0 <= cfg.lam <= 1.0
            and math.isfinite(cfg.lam)):
        raise ConfigRangeError("lambda", f"{cfg.lam!r} not in [0, 1]")
    if not (isinstance(cfg.k_icl, int) and cfg.k_icl >= 0):
        raise ConfigRangeError("k_icl", f"{cfg.k_icl!r} must be an int >= 0")
    if not (isinstance(cfg.max_steps, int) and cfg.max_steps >= 1):
        raise ConfigRangeError("max_steps", f"{cfg.max_steps!r} must be an int >= 1")
    for name in ("dr", "arc"):
        value = getattr(cfg.ring, name)
        if not (value > 0 and math.isfinite(value)):
            raise ConfigRangeError(f"ring.{name}", f"{value!r} must be > 0")
    if not (isinstance(cfg.ring.n_rings, int) and cfg.ring.n_rings >= 1):
        raise ConfigRangeError("ring.n_rings", f"{cfg.ring.n_rings!r} must be >= 1")
    if not (isinstance(cfg.ring.safety_radius, int) and cfg.ring.safety_radius >= 0):
        raise ConfigRangeError("ring.safety_radius",
                               f"{cfg.ring.safety_radius!r} must be >= 0")
    for name in ("k_heading", "k_crosstrack", "v_lin"):
        value = getattr(cfg.gains, name)
        if not (value > 0 and math.isfinite(value)):
            raise ConfigRangeError(f"gains.{name}", f"{value!r} must be > 0")
    if not (cfg.waypoint_tol > 0 and math.isfinite(cfg.waypoint_tol)):
        raise ConfigRangeError("waypoint_tol", f"{cfg.waypoint_tol!r} must be > 0")
    if not cfg.embedder:
        raise ConfigRangeError("embedder", "must be non-empty")
    if not cfg.backend:
        raise ConfigRangeError("backend", "must be non-empty")
    if not (isinstance(cfg.seed, int) and 0 <= cfg.seed < 2 ** 64):
        raise ConfigRangeError("seed", f"{cfg.seed!r} must be a u64")
    return cfg


def split_rng(seed: int, *labels: str | int) -> np.random.Generator:
    """Derive an independent generator from the run seed and a key path.

    Identical (seed, labels) always produce the same stream, so every
    random decision in a run is reproducible from RunConfig.seed alone.
    """
    digest = hashlib.sha256(
        ("/".join(str(x) for x in (seed, *labels))).encode()
    ).digest()
    child = int.from_bytes(digest[:16], "little")
    return np.random.default_rng(np.random.SeedSequence(child))


def wrap_degrees(angle: float) -> float:
    """Wrap to (-180, 180]."""
    a = math.fmod(angle, 360.0)
    if a > 180.0:
        a -= 360.0
    elif a <= -180.0:
        a += 360.0
    return a
