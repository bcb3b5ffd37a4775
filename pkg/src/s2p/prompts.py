"""Conversation assembly and answer parsing.

Retrieved samples become fictitious chat history: each contributes a
USER turn (its annotated frame and recorded prompt) and a MODEL turn
(its recorded answer), followed by one live USER query. Parsing walks
the model text for the first JSON object so fenced or prose-wrapped
output still decodes.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from importlib import resources
from typing import Callable, Optional, Sequence

from PIL import Image
import numpy as np

from .annotator import draw
from .core import AnnotatedFrame, Frame, PlanAnswer, Setup
from .errors import (AnswerParseError, NoJsonFoundError, SchemaViolationError,
                     SetupMismatchError, UnknownLabelError)
from .memory import ExperienceSample

TPV_MAX_COMMANDS = 4
FPV_COMMANDS_REQUIRED = 2


class Role(enum.Enum):
    USER = "user"
    MODEL = "model"


@dataclass(frozen=True)
class ChatTurn:
    role: Role
    text: str
    images: tuple[Frame, ...] = ()

    def __post_init__(self):
        if self.role is Role.MODEL and self.images:
            raise ValueError("model turns carry no images")


@dataclass(frozen=True)
class Conversation:
    turns: tuple[ChatTurn, ...]

    def __post_init__(self):
        if not self.turns:
            raise ValueError("conversation must have at least one turn")
        for i, turn in enumerate(self.turns):
            want = Role.USER if i % 2 == 0 else Role.MODEL
            if turn.role is not want:
                raise ValueError(f"turn {i} must be {want.name}")
        if self.turns[-1].role is not Role.USER:
            raise ValueError("conversation must end with the live user query")


@dataclass(frozen=True)
class TaskSpec:
    setup: Setup
    target_object: Optional[str] = None

    def text(self) -> str:
        if self.setup is Setup.FPV:
            if not self.target_object:
                raise ValueError("first-person tasks need a target object")
            return (f"Your task: find the {self.target_object} and stop "
                    f"facing it, then answer 0 (done).")
        return "Your task: drive the robot to the red circle goal."


_FORMAT_TEXT = {
    Setup.FPV: (
        'Answer with a single JSON object and nothing else, e.g. '
        '{"commands": [4, 3], "explanation": "...", '
        '"objects": ["sofa"], "dangerous": []}. '
        '"commands" must hold exactly two action ids: the action to take '
        'now and the one you plan to take next. List every object you can '
        'see in "objects".'),
    Setup.TPV: (
        'Answer with a single JSON object and nothing else, e.g. '
        '{"commands": [3, 9, 12], "explanation": "...", '
        '"objects": [], "dangerous": [5]}. '
        '"commands" is a sequence of 1 to 4 marker ids to drive through, '
        'in order. List marker ids that sit too close to obstacles in '
        '"dangerous".'),
}

_TEMPLATE_FILE = {Setup.FPV: "fpv_query.txt", Setup.TPV: "tpv_query.txt"}


def render_template(name: str, mapping: dict[str, str]) -> str:
    """Fill {{NAME}} placeholders; unresolved ones are an error."""
    text = (resources.files("s2p") / "templates" / name).read_text("utf-8")
    for key, value in mapping.items():
        text = text.replace("{{" + key + "}}", value)
    if "{{" in text:
        start = text.index("{{")
        raise ValueError(f"unresolved placeholder near {text[start:start+24]!r}")
    return text


def live_query_text(task: TaskSpec, episodic_text: str) -> str:
    return render_template(_TEMPLATE_FILE[task.setup], {
        "TASK": task.text(),
        "EPISODIC": episodic_text,
        "FORMAT": _FORMAT_TEXT[task.setup],
    }).strip()


def _load_frame_file(sample: ExperienceSample) -> Frame:
    img = Image.open(sample.frame_ref).convert("RGB")
    return Frame.from_array(np.asarray(img))


def build_conversation(context: Sequence[ExperienceSample],
                       live: AnnotatedFrame,
                       episodic_text: str,
                       task: TaskSpec,
                       load_frame: Optional[Callable[[ExperienceSample],
                                                     Frame]] = None,
                       ) -> Conversation:
    """Assemble the 2k+1-turn fictitious conversation ending in the live
    query (drawn live frame + episodic recap + task + format rules)."""
    if task.setup is not live.setup:
        raise SetupMismatchError(
            f"task setup {task.setup.value} != frame setup {live.setup.value}")
    loader = load_frame or _load_frame_file
    turns: list[ChatTurn] = []
    for sample in context:
        if sample.setup is not live.setup:
            raise SetupMismatchError(
                f"context sample {sample.id} is {sample.setup.value}, "
                f"live frame is {live.setup.value}")
        turns.append(ChatTurn(role=Role.USER, text=sample.prompt,
                              images=(loader(sample),)))
        turns.append(ChatTurn(role=Role.MODEL,
                              text=serialize_answer(sample.answer)))
    turns.append(ChatTurn(role=Role.USER,
                          text=live_query_text(task, episodic_text),
                          images=(draw(live),)))
    return Conversation(turns=tuple(turns))


def serialize_answer(answer: PlanAnswer) -> str:
    return json.dumps(answer.to_json_dict())


def _first_json_object(raw: str) -> dict:
    decoder = json.JSONDecoder()
    idx = raw.find("{")
    while idx != -1:
        try:
            obj, _ = decoder.raw_decode(raw, idx)
        except json.JSONDecodeError:
            idx = raw.find("{", idx + 1)
            continue
        if isinstance(obj, dict):
            return obj
        idx = raw.find("{", idx + 1)
    raise NoJsonFoundError("no JSON object in model output")


def _int_list(obj: dict, field: str) -> list[int]:
    values = obj.get(field, [])
    if not isinstance(values, list):
        raise SchemaViolationError(field, f"{field} must be a list")
    out = []
    for v in values:
        # bool is an int subclass; reject it explicitly
        if isinstance(v, bool) or not isinstance(v, int):
            raise SchemaViolationError(field, f"{field} entries must be ints")
        out.append(v)
    return out


def parse_answer(raw: str, af: AnnotatedFrame) -> PlanAnswer:
    """Decode and validate a model answer against the frame's action set.

    Top-view command lists are truncated to the first four markers before
    validation; first-person answers must hold exactly two commands.
    Raises NoJsonFoundError / SchemaViolationError / UnknownLabelError so
    the caller can tell re-promptable failures apart.
    """
    obj = _first_json_object(raw)
    commands = _int_list(obj, "commands")
    if not commands:
        raise SchemaViolationError("commands", "commands must be non-empty")
    explanation = obj.get("explanation")
    if not isinstance(explanation, str):
        raise SchemaViolationError("explanation", "explanation must be text")
    objects_seen = None
    if "objects" in obj:
        objects = obj["objects"]
        if not isinstance(objects, list) or \
                any(not isinstance(o, str) for o in objects):
            raise SchemaViolationError("objects", "objects must be a text list")
        objects_seen = tuple(objects)
    dangerous_ids = tuple(_int_list(obj, "dangerous")) \
        if "dangerous" in obj else None

    if af.setup is Setup.FPV and len(commands) != FPV_COMMANDS_REQUIRED:
        raise SchemaViolationError(
            "commands",
            f"expected exactly {FPV_COMMANDS_REQUIRED} commands, "
            f"got {len(commands)}")
    if af.setup is Setup.TPV:
        commands = commands[:TPV_MAX_COMMANDS]

    valid = af.valid_action_ids()
    for c in commands:
        if c not in valid:
            raise UnknownLabelError(c)
    return PlanAnswer(commands=tuple(commands), explanation=explanation,
                      objects_seen=objects_seen, dangerous_ids=dangerous_ids)


def parse_with_retry(raw_of: Callable[[Optional[str]], str],
                     af: AnnotatedFrame) -> PlanAnswer:
    """One-retry parse policy: on failure, ask again with the error
    description appended; a second failure propagates."""
    try:
        return parse_answer(raw_of(None), af)
    except AnswerParseError as err:
        return parse_answer(raw_of(str(err)), af)
