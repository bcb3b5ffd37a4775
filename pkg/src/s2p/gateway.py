"""Uniform boundary to chat-vision models.

Three interchangeable backends answer conversations: a generic HTTP
client for real services, plus Oracle and Random mocks that read the
current world through a shared context handle so everything downstream
of the prompt can run offline. All live traffic can be taped to a
cassette (JSON-lines of request hash and response text) and replayed
bit-for-bit without network or keys.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import math
import os
import time
from collections import defaultdict, deque
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Protocol, Union

from .core import Pitch, PlanAnswer, Setup, command, split_rng, wrap_degrees
from .episodic import EpisodicState
from .errors import (BackendTimeoutError, BackendUnavailableError,
                     CapabilityExceededError, CassetteMissError,
                     HttpStatusError)
from .memory import encode_png
from .prompts import Conversation, serialize_answer
from .simworld import (FpvScene, TpvScene, fpv_in_success_cell,
                       fpv_next_step_cell, fpv_step, oracle_plan_answer,
                       target_visible, visible_objects)

log = logging.getLogger("s2p.gateway")

_ROTATE_CODE = {30: 3, 60: 2, 90: 1, -30: 5, -60: 6, -90: 7}


@dataclass(frozen=True)
class Capabilities:
    max_images: int
    max_turns: int


class Backend(Protocol):
    id: str
    capabilities: Capabilities

    def complete(self, conv: Conversation) -> str: ...


def complete(backend: Backend, conv: Conversation) -> str:
    """Capability-checked completion; the single entry point runners use."""
    caps = backend.capabilities
    n_images = sum(len(t.images) for t in conv.turns)
    if len(conv.turns) > caps.max_turns:
        raise CapabilityExceededError(
            f"{len(conv.turns)} turns exceed {backend.id}'s "
            f"limit of {caps.max_turns}")
    if n_images > caps.max_images:
        raise CapabilityExceededError(
            f"{n_images} images exceed {backend.id}'s "
            f"limit of {caps.max_images}")
    log.debug("completing %d turns / %d images via %s",
              len(conv.turns), n_images, backend.id)
    text = backend.complete(conv)
    log.debug("%s answered %d chars", backend.id, len(text))
    return text


# --- wire format -----------------------------------------------------------

def conversation_to_wire(conv: Conversation) -> dict:
    """Vendor-neutral JSON body: {turns: [{role, text, images: [b64 PNG]}]}."""
    turns = []
    for turn in conv.turns:
        turns.append({
            "role": turn.role.value,
            "text": turn.text,
            "images": [base64.b64encode(encode_png(f)).decode("ascii")
                       for f in turn.images],
        })
    return {"turns": turns}


def wire_hash(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def conversation_digest(conv: Conversation) -> str:
    """Cheap digest (no PNG encoding) for seeding mock backends."""
    h = hashlib.sha256()
    for turn in conv.turns:
        h.update(turn.role.value.encode())
        h.update(turn.text.encode("utf-8"))
        for frame in turn.images:
            h.update(frame.digest().encode())
    return h.hexdigest()


# --- cassette --------------------------------------------------------------

class Cassette:
    """Request-hash -> response tape. Record appends as traffic happens;
    replay pops responses in arrival order per hash, so repeated
    identical requests replay in the order they occurred."""

    def __init__(self, path: Union[str, Path], mode: str):
        if mode not in ("record", "replay"):
            raise ValueError(f"cassette mode {mode!r}")
        self.path = Path(path)
        self.mode = mode
        self._pending: dict[str, deque[str]] = defaultdict(deque)
        if mode == "replay":
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    doc = json.loads(line)
                    self._pending[doc["sha256"]].append(doc["response"])

    def record(self, request_hash: str, response: str) -> None:
        if self.mode != "record":
            raise ValueError("cassette opened for replay")
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps({"sha256": request_hash,
                                 "response": response}) + "\n")

    def replay(self, request_hash: str) -> str:
        queue = self._pending.get(request_hash)
        if not queue:
            raise CassetteMissError(
                f"no recorded response for request {request_hash[:12]}… "
                f"in {self.path}")
        return queue.popleft()


# --- mock backends ----------------------------------------------------------

@dataclass
class OracleContext:
    """Mutable ground-truth handle a runner keeps up to date so mock
    backends can answer the query that the conversation merely depicts.
    Only simulated worlds can populate it."""

    scene: Union[FpvScene, TpvScene, None] = None
    af: object = None  # AnnotatedFrame of the live query
    state: Optional[EpisodicState] = None

    def update(self, scene=None, af=None, state=None) -> None:
        if scene is not None:
            self.scene = scene
        if af is not None:
            self.af = af
        if state is not None:
            self.state = state


def _fpv_policy_step(scene: FpvScene) -> tuple[int, str]:
    """One greedy decision: stop when the target is in view, level the
    camera, else follow the shortest path, rotating in 30-degree
    buckets until facing the next cell."""
    if target_visible(scene):
        return 0, f"stops: the {scene.target} is right in front of it"
    if scene.pitch is not Pitch.LEVEL:
        code = 9 if scene.pitch is Pitch.UP else 8
        return code, "levels the camera to see the room again"
    ax, ay = scene.agent
    if fpv_in_success_cell(scene):
        tx, ty = next(p for c, p in scene.objects if c == scene.target)
        desired = math.degrees(math.atan2(ty - ay, tx - ax))
    else:
        step = fpv_next_step_cell(scene)
        if step is None:
            return 3, f"cannot reach the {scene.target}, so it scans left"
        desired = math.degrees(math.atan2(step[1] - ay, step[0] - ax))
    offset = wrap_degrees(desired - scene.heading)
    if abs(offset) <= 15:
        return 4, f"moves forward towards the {scene.target}"
    bucket = min(_ROTATE_CODE, key=lambda b: (abs(wrap_degrees(offset - b)),
                                              -b))
    side = "left" if bucket > 0 else "right"
    return _ROTATE_CODE[bucket], \
        f"turns {abs(bucket)} degrees {side} to line up with its route"


def oracle_answer_fpv(scene: FpvScene,
                      state: Optional[EpisodicState] = None) -> PlanAnswer:
    """Ground-truth first-person answer: the command to take now and the
    one that follows, with a templated think-aloud explanation."""
    cur, phrase = _fpv_policy_step(scene)
    after, _ = fpv_step(scene, command(cur))
    nxt, _ = _fpv_policy_step(after)
    seen = visible_objects(scene)
    if seen:
        cls, off = seen[0]
        side = "on the left" if off > 15 else \
            "on the right" if off < -15 else "straight ahead"
        explanation = f"A {cls} is visible {side}, so the robot {phrase}."
    else:
        explanation = f"Nothing useful is in view, so the robot {phrase}."
    return PlanAnswer(commands=(cur, nxt), explanation=explanation,
                      objects_seen=tuple(cls for cls, _ in seen))


class OracleBackend:
    """Answers from the simulator's ground truth; ignores the prompt."""

    id = "oracle"
    capabilities = Capabilities(max_images=64, max_turns=129)

    def __init__(self, ctx: OracleContext):
        self.ctx = ctx

    def complete(self, conv: Conversation) -> str:
        scene = self.ctx.scene
        if isinstance(scene, TpvScene):
            answer = oracle_plan_answer(scene, self.ctx.af)
        elif isinstance(scene, FpvScene):
            answer = oracle_answer_fpv(scene, self.ctx.state)
        else:
            raise BackendUnavailableError(
                "oracle backend has no simulated scene to answer from")
        return serialize_answer(answer)


class RandomBackend:
    """Uniform valid answers, deterministic per (seed, conversation)."""

    id = "random"
    capabilities = Capabilities(max_images=256, max_turns=513)

    def __init__(self, seed: int, ctx: OracleContext):
        self.seed = seed
        self.ctx = ctx

    def complete(self, conv: Conversation) -> str:
        af = self.ctx.af
        if af is None:
            raise BackendUnavailableError(
                "random backend has no annotated frame to pick labels from")
        rng = split_rng(self.seed, "random-backend",
                        conversation_digest(conv))
        ids = sorted(af.valid_action_ids())
        if af.setup is Setup.FPV:
            picks = [int(rng.integers(0, 10)) for _ in range(2)]
        else:
            n = min(len(ids), int(rng.integers(1, 5)))
            picks = [int(i) for i in rng.choice(ids, size=n, replace=False)]
        answer = PlanAnswer(commands=tuple(picks),
                            explanation="chosen uniformly at random")
        return serialize_answer(answer)


# --- HTTP backend -----------------------------------------------------------

class HttpBackend:
    """POSTs the wire-format conversation to a vendor adapter endpoint.

    Expects `{"text": ...}` back. Retries transient failures with
    exponential backoff, then surfaces the last failure. With a cassette
    attached, record mode tapes every exchange and replay mode answers
    from tape without touching the network.
    """

    id = "http"
    capabilities = Capabilities(max_images=32, max_turns=65)

    def __init__(self, url: Optional[str] = None,
                 api_key: Optional[str] = None,
                 timeout: float = 60.0, retries: int = 2,
                 backoff_base: float = 0.5,
                 cassette: Optional[Cassette] = None):
        self.url = url or os.environ.get("S2P_VLM_URL", "")
        self.api_key = api_key if api_key is not None \
            else os.environ.get("S2P_VLM_KEY")
        self.timeout = timeout
        self.retries = retries
        self.backoff_base = backoff_base
        self.cassette = cassette

    def complete(self, conv: Conversation) -> str:
        payload = conversation_to_wire(conv)
        request_hash = wire_hash(payload)
        if self.cassette is not None and self.cassette.mode == "replay":
            return self.cassette.replay(request_hash)
        if not self.url:
            raise BackendUnavailableError(
                "no model endpoint: set S2P_VLM_URL or pass url=")
        text = self._post(payload, request_hash)
        if self.cassette is not None:
            self.cassette.record(request_hash, text)
        return text

    def _post(self, payload: dict, request_hash: str) -> str:
        import requests

        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last: Exception = BackendUnavailableError("no attempt made")
        for attempt in range(self.retries + 1):
            if attempt:
                time.sleep(self.backoff_base * (2 ** (attempt - 1)))
            try:
                resp = requests.post(self.url, json=payload, headers=headers,
                                     timeout=self.timeout)
            except requests.Timeout as exc:
                last = BackendTimeoutError(
                    f"no answer within {self.timeout}s: {exc}")
                log.warning("attempt %d timed out (%s)", attempt + 1,
                            request_hash[:12])
                continue
            except requests.RequestException as exc:
                last = BackendUnavailableError(str(exc))
                log.warning("attempt %d failed: %s", attempt + 1, exc)
                continue
            if resp.status_code != 200:
                last = HttpStatusError(resp.status_code,
                                       resp.text[:200])
                log.warning("attempt %d: HTTP %d", attempt + 1,
                            resp.status_code)
                continue
            try:
                return resp.json()["text"]
            except (ValueError, KeyError) as exc:
                last = BackendUnavailableError(
                    f"malformed response body: {exc}")
                continue
        raise last


def make_backend(backend_id: str, seed: int, ctx: OracleContext,
                 cassette: Optional[Cassette] = None,
                 url: Optional[str] = None) -> Backend:
    if backend_id == "oracle":
        return OracleBackend(ctx)
    if backend_id == "random":
        return RandomBackend(seed, ctx)
    if backend_id == "http":
        return HttpBackend(url=url, cassette=cassette)
    raise ValueError(f"unknown backend {backend_id!r}")
