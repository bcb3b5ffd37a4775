"""Local HTTP API for demonstration recording and run monitoring.

One server owns at most one session — either a demonstration being
recorded step by step, or a live evaluation run being watched. All
payloads are JSON; frames travel base64-encoded inside them. Auth is a
single bearer token from S2P_API_TOKEN (unset = open, for local use).

Error envelope everywhere: {"code": ..., "detail": ...} with
400 malformed body, 401 bad token, 409 no active session / wrong
session phase, 422 invalid action id.
"""

from __future__ import annotations

import base64
import math
import os
import threading
import time
import uuid
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .annotator import draw, fpv_overlay
from .core import PlanAnswer, RunConfig, Setup, command
from .episodic import EpisodicState, apply_command, observe, to_prompt_text
from .errors import RunAbortedError, S2PError
from .gateway import OracleContext, make_backend
from .harness import SuiteSpec, make_scene, run_episode
from .memory import (Embedder, MemoryStore, append_episode, encode_png,
                     make_embedder, new_sample, Scenario)
from .metrics import (EpisodeResult, danger_count, episode_term, sr_spl,
                      trajectory_score)
from .prompts import TaskSpec, live_query_text
from .simworld import (GOAL_EPS, PdController, collision_checker, floor_mask,
                       fpv_render, fpv_step, pd_track, tpv_annotated_frame)

DEFAULT_PORT = 8787
_FPV_ACTION_IDS = tuple(range(10))


class ApiError(Exception):
    def __init__(self, status: int, code: str, detail: str):
        super().__init__(detail)
        self.status = status
        self.code = code
        self.detail = detail


class StepBody(BaseModel):
    action: int
    explanation: str = ""


class FinishBody(BaseModel):
    target_object: str = ""


def _png_b64(frame) -> str:
    return base64.b64encode(encode_png(frame)).decode("ascii")


# --- demonstration session ---------------------------------------------------

@dataclass
class DemoSession:
    """One operator-driven episode; every step stores the frame the
    operator saw, the query text, their action and their explanation."""

    setup: Setup
    scene: object
    store: MemoryStore
    embedder: Embedder
    cfg: RunConfig = field(default_factory=lambda: RunConfig(seed=0))
    scenario: Scenario = Scenario.H
    state: Optional[EpisodicState] = None
    step_index: int = 0
    done: bool = False
    last_event: str = ""
    taps: list = field(default_factory=list)
    _view: Optional[tuple] = None   # (af, drawn, prompt, valid_ids)
    _mask: object = None
    _collides: Optional[Callable] = None

    def __post_init__(self):
        if self.setup is Setup.FPV:
            self.state = EpisodicState(max_steps=10_000)
        else:
            self._mask = floor_mask(self.scene)
            self._collides = collision_checker(self.scene)

    # view preparation is lazy and cached so GET /state stays idempotent
    def view(self):
        if self._view is None:
            if self.setup is Setup.FPV:
                frame, seen = fpv_render(self.scene)
                self.state = observe(self.state, seen)
                af = fpv_overlay(frame)
                task = TaskSpec(Setup.FPV, self.scene.target)
                prompt = live_query_text(task, to_prompt_text(self.state))
                valid = _FPV_ACTION_IDS
            else:
                af = tpv_annotated_frame(self.scene, self._mask,
                                         self.cfg.ring)
                prompt = live_query_text(TaskSpec(Setup.TPV), "")
                valid = tuple(lb.id for lb in af.labels if lb.id != 0)
            self._view = (af, draw(af), prompt, valid)
        return self._view

    def state_doc(self) -> dict:
        af, drawn, prompt, valid = self.view()
        return {
            "setup": self.setup.value,
            "step_index": self.step_index,
            "frame_png": _png_b64(drawn),
            "action_ids": list(valid),
            "keypoints": [{"id": lb.id, "u": lb.pos[0], "v": lb.pos[1]}
                          for lb in af.labels],
            "episodic_text": to_prompt_text(self.state)
            if self.setup is Setup.FPV else "",
            "target_object": self.scene.target
            if self.setup is Setup.FPV else None,
            "prompt": prompt,
            "done": self.done,
            "event": self.last_event,
        }

    def step(self, action: int, explanation: str) -> str:
        if self.done:
            raise ApiError(409, "SESSION_FINISHED",
                           "the episode already ended; finish or restart")
        af, drawn, prompt, valid = self.view()
        if action not in valid:
            raise ApiError(422, "UNKNOWN_LABEL",
                           f"action {action} is not one of the labels "
                           f"on this frame")
        self.taps.append((drawn, prompt, action, explanation))
        if self.setup is Setup.FPV:
            self.scene, event = fpv_step(self.scene, command(action))
            self.state = apply_command(self.state, action)
            name = event.name.lower()
            if name in ("success", "done"):
                self.done = True
        else:
            label = next(lb for lb in af.labels if lb.id == action)
            ctrl = PdController(gains=self.cfg.gains,
                                eps=self.cfg.waypoint_tol)
            goal = self.scene.goal

            def near_goal(x, y):
                return math.hypot(x - goal[0], y - goal[1]) <= GOAL_EPS

            res = pd_track(self.scene.robot, [label.world], ctrl,
                           max_ticks=900, collides=self._collides,
                           stop_when=near_goal)
            self.scene = replace(self.scene, robot=res.pose)
            if res.collided:
                name = "collision"
                self.done = True
            elif res.stopped:
                name = "success"
                self.done = True
            else:
                name = "ok"
        self.step_index += 1
        self.last_event = name
        self._view = None
        return name

    def finish(self, target_object: str) -> dict:
        if not self.taps:
            raise ApiError(409, "EMPTY_SESSION",
                           "record at least one step before finishing")
        episode_id = f"api-{uuid.uuid4().hex[:12]}"
        samples, frames = [], []
        actions = [a for (_f, _p, a, _e) in self.taps]
        for i, (drawn, prompt, action, explanation) in enumerate(self.taps):
            if self.setup is Setup.FPV:
                # pair each action with the operator's next one; the
                # final step pairs with stop, since the episode ended
                nxt = actions[i + 1] if i + 1 < len(actions) else 0
                cmds = (action, nxt)
                target = target_object or self.scene.target
            else:
                cmds = (action,)
                target = None
            answer = PlanAnswer(commands=cmds, explanation=explanation)
            samples.append(new_sample(
                step=i, frame_ref="", prompt=prompt, answer=answer,
                embedding=self.embedder.embed(drawn), setup=self.setup,
                scenario=self.scenario, target_object=target,
                episode_id=episode_id))
            frames.append(drawn)
        entry = append_episode(self.store, samples, frames)
        return {"episode_id": episode_id,
                "n_samples": entry["n_samples"],
                "memory_count": len(self.store.samples)}


# --- live run session --------------------------------------------------------

@dataclass
class RunSession:
    spec: SuiteSpec
    store: Optional[MemoryStore]
    embedder: Optional[Embedder]
    lock: threading.Lock = field(default_factory=threading.Lock)
    abort_flag: threading.Event = field(default_factory=threading.Event)
    thread: Optional[threading.Thread] = None
    telemetry: dict = field(default_factory=dict)
    results: list = field(default_factory=list)
    row: Optional[dict] = None
    active: bool = True

    def start(self):
        self.thread = threading.Thread(target=self._run, daemon=True)
        self.thread.start()

    def _tap(self, seed: int, episode: int):
        def tap(af, prompt, answer):
            if self.abort_flag.is_set():
                raise RunAbortedError("aborted by operator")
            frame = draw(af)
            with self.lock:
                tail = self.telemetry.setdefault("trace_tail", [])
                tail.append({"seed": seed, "episode": episode,
                             "plan": list(answer.commands),
                             "explanation": answer.explanation})
                del tail[:-8]
                self.telemetry.update({
                    "seed": seed, "episode": episode,
                    "plan": list(answer.commands),
                    "explanation": answer.explanation,
                    "keypoints": [{"id": lb.id,
                                   "u": lb.pos[0], "v": lb.pos[1]}
                                  for lb in af.labels],
                    "frame_png": _png_b64(frame),
                    "updated_at": time.time(),
                })
        return tap

    def _run(self):
        spec = self.spec
        per_seed_results = {}
        for seed in spec.seeds:
            seed_results = []
            for i in range(spec.n_episodes):
                if self.abort_flag.is_set():
                    break
                cfg = RunConfig(k_icl=spec.k_icl, backend=spec.backend,
                                seed=seed)
                ctx = OracleContext()
                backend = make_backend(spec.backend, seed, ctx)
                scene = make_scene(spec.setup, i, spec.room_type)
                try:
                    res = run_episode(scene, backend, ctx, cfg, self.store,
                                      self.embedder, scenario=spec.scenario,
                                      tap=self._tap(seed, i))
                except S2PError as err:  # aborts surface through the tap
                    res = EpisodeResult(success=False, steps=0,
                                        failure_reason=str(err))
                seed_results.append(res)
                with self.lock:
                    self.results.append({
                        "seed": seed, "episode": i, "success": res.success,
                        "steps": res.steps, "dangerous": res.dangerous_hit,
                        "ts_term": episode_term(res, spec.match),
                        "failure_reason": res.failure_reason,
                    })
            if seed_results:
                per_seed_results[seed] = seed_results
            if self.abort_flag.is_set():
                break
        row = None
        if per_seed_results:
            ts, d, sr, spl = [], [], [], []
            for results in per_seed_results.values():
                ts.append(trajectory_score(results, match=spec.match))
                d.append(float(danger_count(results)))
                s, p = sr_spl(results)
                sr.append(s)
                spl.append(p)
            mean = lambda v: sum(v) / len(v)
            row = {"mode": spec.backend, "cl": spec.k_icl,
                   "scenario": spec.scenario or "-", "n": spec.n_episodes,
                   "ts": mean(ts), "d": mean(d), "sr": mean(sr),
                   "spl": mean(spl)}
        with self.lock:
            self.row = row
            self.active = False
            self.telemetry["updated_at"] = time.time()

    def status_doc(self) -> dict:
        with self.lock:
            doc = {
                "active": self.active,
                "aborted": self.abort_flag.is_set(),
                "setup": self.spec.setup.value,
                "backend": self.spec.backend,
                "n_episodes": self.spec.n_episodes,
                "seeds": list(self.spec.seeds),
                "results": list(self.results),
                "row": self.row,
            }
            doc.update(self.telemetry)
            return doc


# --- app assembly ------------------------------------------------------------

def create_app(store: Optional[MemoryStore] = None,
               token: Optional[str] = None,
               demo_factory: Optional[Callable[[], DemoSession]] = None,
               ) -> FastAPI:
    """Build the API server. `demo_factory` (when given) starts a fresh
    demonstration session whenever none is active, so an operator can
    record episodes back to back."""
    token = token if token is not None else os.environ.get("S2P_API_TOKEN")
    app = FastAPI(title="navigation demo/run API", docs_url=None,
                  redoc_url=None)
    app.state.store = store
    app.state.demo = None
    app.state.demo_factory = demo_factory
    app.state.run = None
    app.state.lock = threading.Lock()

    @app.exception_handler(ApiError)
    async def _api_error(_req: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status,
                            content={"code": exc.code, "detail": exc.detail})

    @app.exception_handler(RequestValidationError)
    async def _malformed(_req: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400,
                            content={"code": "MALFORMED",
                                     "detail": str(exc.errors()[:3])})

    @app.exception_handler(S2PError)
    async def _domain_error(_req: Request, exc: S2PError):
        return JSONResponse(status_code=500,
                            content={"code": type(exc).__name__,
                                     "detail": str(exc)})

    @app.middleware("http")
    async def _auth(request: Request, call_next):
        if token:
            got = request.headers.get("authorization", "")
            if got != f"Bearer {token}":
                return JSONResponse(status_code=401,
                                    content={"code": "UNAUTHORIZED",
                                             "detail": "bad or missing "
                                                       "bearer token"})
        return await call_next(request)

    def demo_session() -> DemoSession:
        with app.state.lock:
            if app.state.demo is None and app.state.demo_factory is not None:
                app.state.demo = app.state.demo_factory()
            if app.state.demo is None:
                raise ApiError(409, "NO_SESSION",
                               "no demonstration session is active")
            return app.state.demo

    @app.get("/state")
    def get_state():
        session = demo_session()
        with app.state.lock:
            return session.state_doc()

    @app.post("/demo/step")
    def demo_step(body: StepBody):
        session = demo_session()
        with app.state.lock:
            event = session.step(body.action, body.explanation)
            doc = session.state_doc()
        return {"event": event, "state": doc}

    @app.post("/demo/finish")
    def demo_finish(body: FinishBody):
        session = demo_session()
        with app.state.lock:
            out = session.finish(body.target_object)
            app.state.demo = None
        return out

    @app.get("/memory")
    def memory_count():
        if app.state.store is None:
            raise ApiError(409, "NO_STORE", "no memory store attached")
        return {"count": len(app.state.store.samples),
                "episodes": len(app.state.store.episodes)}

    @app.get("/run/status")
    def run_status():
        run: Optional[RunSession] = app.state.run
        if run is None:
            raise ApiError(409, "NO_SESSION", "no run session is active")
        return run.status_doc()

    @app.post("/run/abort")
    def run_abort():
        run: Optional[RunSession] = app.state.run
        if run is None:
            raise ApiError(409, "NO_SESSION", "no run session is active")
        run.abort_flag.set()
        return {"aborted": True, "active": run.active}

    return app


def start_demo(app: FastAPI, setup: Setup, store: MemoryStore,
               seed: int = 0, embedder: Optional[Embedder] = None,
               scenario: Scenario = Scenario.H,
               auto_restart: bool = False) -> DemoSession:
    """Attach a fresh demonstration session (and optionally a factory
    that restarts one, with the next seed, after each finish)."""
    embedder = embedder or make_embedder(store.embedder_id)
    store.require_embedder(embedder)
    counter = {"seed": seed}

    def factory() -> DemoSession:
        s = counter["seed"]
        counter["seed"] += 1
        scene = make_scene(setup, s)
        return DemoSession(setup=setup, scene=scene, store=store,
                           embedder=embedder, scenario=scenario)

    session = factory()
    with app.state.lock:
        if app.state.run is not None and app.state.run.active:
            raise ApiError(409, "BUSY", "a run session is active")
        app.state.demo = session
        app.state.store = store
        if auto_restart:
            app.state.demo_factory = factory
    return session


def start_run(app: FastAPI, spec: SuiteSpec,
              store: Optional[MemoryStore] = None,
              embedder: Optional[Embedder] = None) -> RunSession:
    with app.state.lock:
        if app.state.demo is not None:
            raise ApiError(409, "BUSY", "a demo session is active")
        if app.state.run is not None and app.state.run.active:
            raise ApiError(409, "BUSY", "a run session is already active")
        if store is None and spec.store:
            from . import memory
            store = memory.load(spec.store)
        if embedder is None and store is not None:
            embedder = make_embedder(store.embedder_id)
        run = RunSession(spec=spec, store=store, embedder=embedder)
        app.state.run = run
    run.start()
    return run
