"""Episode runners and the batched evaluation suite.

An episode runner drives one scene through the whole pipeline: render,
annotate, recall context from experiential memory, assemble the
conversation, query a backend, parse, execute. The suite runner fans a
configuration's episodes out to a worker pool, repeats over evaluation
seeds, averages, and emits a machine-readable report plus an aligned
table and per-episode CSV.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

from .annotator import draw, fpv_overlay
from .core import (AnnotatedFrame, CommandKind, PlanAnswer, RunConfig, Setup,
                   command)
from .episodic import EpisodicState, apply_command, observe, to_prompt_text
from .errors import S2PError
from .gateway import (Backend, OracleContext, complete, make_backend,
                      oracle_answer_fpv)
from .memory import (Embedder, ExperienceSample, MemoryStore, Scenario,
                     append_episode, make_embedder, new_sample)
from .metrics import (EpisodeResult, PlanRecord, danger_count, episode_term,
                      sr_spl, trajectory_score)
from .prompts import (ChatTurn, Conversation, Role, TaskSpec,
                      parse_with_retry)
from .prompts import build_conversation as _build_conversation
from .retrieval import build_context
from .simworld import (FpvScene, RoomType, StepEvent, TpvScene,
                       fpv_render, fpv_scene_to_json,
                       fpv_shortest_path_cells, fpv_step, generate_fpv_scene,
                       generate_tpv_room, tpv_replan_loop, tpv_scene_to_json)

ROOM_TYPES = tuple(RoomType)

Tap = Callable[[AnnotatedFrame, str, PlanAnswer], None]


def _asker(backend: Backend, conv: Conversation):
    """Retry closure for parse_with_retry: the second ask repeats the
    query with the parse error appended to the live turn."""

    def raw_of(prev_error: Optional[str]) -> str:
        if prev_error is None:
            return complete(backend, conv)
        last = conv.turns[-1]
        retry = ChatTurn(
            role=Role.USER,
            text=(last.text + "\n\nYour previous answer could not be used: "
                  + prev_error + "\nAnswer again, following the format "
                  "exactly."),
            images=last.images)
        return complete(backend, Conversation(conv.turns[:-1] + (retry,)))

    return raw_of


def _recall(drawn_live, setup, store, cfg, embedder, scenario):
    if store is None or cfg.k_icl <= 0:
        return []
    predicate = None
    if scenario:
        predicate = lambda s: s.scenario.value == scenario
    return build_context(drawn_live, setup, store, cfg, embedder=embedder,
                         predicate=predicate)


def run_fpv_episode(scene: FpvScene, backend: Backend, ctx: OracleContext,
                    cfg: RunConfig, store: Optional[MemoryStore] = None,
                    embedder: Optional[Embedder] = None, scenario: str = "",
                    tap: Optional[Tap] = None) -> EpisodeResult:
    """First-person episode: each query yields two commands (now + next),
    both are executed before asking again."""
    task = TaskSpec(setup=Setup.FPV, target_object=scene.target)
    state = EpisodicState(max_steps=cfg.max_steps)
    shortest = fpv_shortest_path_cells(scene)
    records: list[PlanRecord] = []
    steps = 0
    forward = 0.0
    success = False
    reason = ""

    while steps < cfg.max_steps:
        frame, seen = fpv_render(scene)
        af = fpv_overlay(frame)
        state = observe(state, seen)
        ctx.update(scene=scene, af=af, state=state)
        expert = oracle_answer_fpv(scene, state)
        try:
            drawn = draw(af)
            context = _recall(drawn, Setup.FPV, store, cfg, embedder,
                              scenario)
            conv = _build_conversation(
                context, af, to_prompt_text(state), task,
                load_frame=store.load_frame if store else None)
            answer = parse_with_retry(_asker(backend, conv), af)
        except S2PError as err:
            reason = f"planning failed: {err}"
            break
        if tap is not None:
            tap(af, conv.turns[-1].text, answer)
        records.append(PlanRecord(predicted=tuple(answer.commands),
                                  expert=tuple(expert.commands), safe=True))
        ended = False
        for j, code in enumerate(answer.commands):
            if steps >= cfg.max_steps:
                break
            scene, event = fpv_step(scene, command(code))
            steps += 1
            nxt = answer.commands[j + 1] if j + 1 < len(answer.commands) \
                else None
            state = apply_command(state, code, planned_next=nxt)
            if command(code).kind is CommandKind.MOVE_FORWARD \
                    and event is StepEvent.OK:
                forward += 1.0
            if event is StepEvent.SUCCESS:
                success = True
                ended = True
                break
            if event is StepEvent.DONE:
                reason = "declared done without the target in sight"
                ended = True
                break
        if ended:
            break
    if not success and not reason:
        reason = "step budget exhausted"

    return EpisodeResult(
        success=success, steps=steps, records=tuple(records),
        dangerous_hit=False, agent_length=forward,
        shortest_length=None if shortest is None else float(shortest),
        failure_reason="" if success else reason, scenario=scenario)


def pipeline_tpv_planner(backend: Backend, ctx: OracleContext,
                         cfg: RunConfig, store: Optional[MemoryStore] = None,
                         embedder: Optional[Embedder] = None,
                         scenario: str = "", tap: Optional[Tap] = None):
    """Planner callback for the top-view replan loop that goes through
    the full prompt pipeline instead of reading ground truth."""
    task = TaskSpec(setup=Setup.TPV)

    def planner(af: AnnotatedFrame, scene: TpvScene) -> PlanAnswer:
        ctx.update(scene=scene, af=af)
        drawn = draw(af)
        context = _recall(drawn, Setup.TPV, store, cfg, embedder, scenario)
        conv = _build_conversation(
            context, af, "", task,
            load_frame=store.load_frame if store else None)
        answer = parse_with_retry(_asker(backend, conv), af)
        if tap is not None:
            tap(af, conv.turns[-1].text, answer)
        return answer

    return planner


def run_tpv_episode(scene: TpvScene, backend: Backend, ctx: OracleContext,
                    cfg: RunConfig, store: Optional[MemoryStore] = None,
                    embedder: Optional[Embedder] = None, scenario: str = "",
                    tap: Optional[Tap] = None) -> EpisodeResult:
    planner = pipeline_tpv_planner(backend, ctx, cfg, store, embedder,
                                   scenario, tap)
    result = tpv_replan_loop(scene, planner, cfg)
    return replace(result, scenario=scenario)


def make_scene(setup: Setup, index: int,
               room_type: Optional[RoomType] = None
               ) -> Union[FpvScene, TpvScene]:
    """Deterministic scene for episode `index`; first-person rooms cycle
    through the four archetypes unless one is pinned."""
    if setup is Setup.TPV:
        return generate_tpv_room(index)
    rt = room_type or ROOM_TYPES[index % len(ROOM_TYPES)]
    return generate_fpv_scene(index, rt)


def run_episode(scene, backend: Backend, ctx: OracleContext, cfg: RunConfig,
                store: Optional[MemoryStore] = None,
                embedder: Optional[Embedder] = None, scenario: str = "",
                tap: Optional[Tap] = None) -> EpisodeResult:
    if isinstance(scene, TpvScene):
        return run_tpv_episode(scene, backend, ctx, cfg, store, embedder,
                               scenario, tap)
    return run_fpv_episode(scene, backend, ctx, cfg, store, embedder,
                           scenario, tap)


# --- demonstration bootstrap ------------------------------------------------

def record_oracle_demos(store: MemoryStore, setup: Setup,
                        episode_seeds: Sequence[int],
                        embedder: Optional[Embedder] = None,
                        scenario: Scenario = Scenario.A,
                        room_type: Optional[RoomType] = None,
                        cfg: Optional[RunConfig] = None) -> int:
    """Populate a store with ground-truth demonstrations by running the
    oracle end to end and taping every query/answer pair. Returns the
    number of samples appended."""
    embedder = embedder or make_embedder("hist96")
    store.require_embedder(embedder)
    cfg = cfg or RunConfig(seed=0, k_icl=0)
    appended = 0
    for ep_seed in episode_seeds:
        scene = make_scene(setup, ep_seed, room_type)
        taps: list[tuple[AnnotatedFrame, str, PlanAnswer]] = []
        ctx = OracleContext()
        backend = make_backend("oracle", ep_seed, ctx)
        run_episode(scene, backend, ctx, cfg, tap=lambda *t: taps.append(t))
        target = scene.target if isinstance(scene, FpvScene) else None
        episode_id = f"demo-{setup.value}-{ep_seed}"
        samples: list[ExperienceSample] = []
        frames = []
        for step, (af, prompt, answer) in enumerate(taps):
            drawn = draw(af)
            samples.append(new_sample(
                step=step, frame_ref="", prompt=prompt, answer=answer,
                embedding=embedder.embed(drawn), setup=setup,
                scenario=scenario, target_object=target,
                episode_id=episode_id))
            frames.append(drawn)
        append_episode(store, samples, frames)
        appended += len(samples)
    return appended


# --- suite runner -----------------------------------------------------------

@dataclass(frozen=True)
class SuiteSpec:
    """One evaluation configuration (a row of the comparison table)."""

    setup: Setup
    backend: str = "oracle"
    k_icl: int = 0
    n_episodes: int = 10
    seeds: tuple[int, ...] = (0, 1, 2)
    scenario: str = ""                 # provenance filter for recall
    store: Optional[str] = None        # experiential memory root
    room_type: Optional[RoomType] = None
    match: str = "positional"
    cassette: Optional[str] = None     # recorded exchanges (http backend)
    cassette_mode: str = "replay"

    @classmethod
    def from_json_dict(cls, doc: dict) -> "SuiteSpec":
        return cls(
            setup=Setup(doc["setup"]),
            backend=doc.get("backend", "oracle"),
            k_icl=int(doc.get("k_icl", 0)),
            n_episodes=int(doc.get("n_episodes", 10)),
            seeds=tuple(int(s) for s in doc.get("seeds", (0, 1, 2))),
            scenario=doc.get("scenario", ""),
            store=doc.get("store"),
            room_type=RoomType(doc["room_type"]) if doc.get("room_type")
            else None,
            match=doc.get("match", "positional"),
            cassette=doc.get("cassette"),
            cassette_mode=doc.get("cassette_mode", "replay"),
        )

    def to_json_dict(self) -> dict:
        return {
            "setup": self.setup.value, "backend": self.backend,
            "k_icl": self.k_icl, "n_episodes": self.n_episodes,
            "seeds": list(self.seeds), "scenario": self.scenario,
            "store": self.store,
            "room_type": self.room_type.value if self.room_type else None,
            "match": self.match, "cassette": self.cassette,
            "cassette_mode": self.cassette_mode,
        }


@dataclass(frozen=True)
class SuiteRow:
    mode: str
    cl: int
    scenario: str
    n: int
    ts: float          # mean over seeds, out of n
    d: float           # mean over seeds
    sr: float
    spl: float
    per_seed: tuple[dict, ...] = ()


@dataclass
class SuiteReport:
    spec: SuiteSpec
    row: SuiteRow
    episodes: list[dict] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "spec": self.spec.to_json_dict(),
            "row": {
                "mode": self.row.mode, "cl": self.row.cl,
                "scenario": self.row.scenario, "n": self.row.n,
                "ts": self.row.ts, "d": self.row.d,
                "sr": self.row.sr, "spl": self.row.spl,
                "per_seed": list(self.row.per_seed),
            },
            "episodes": self.episodes,
        }


def _episode_row(spec: SuiteSpec, seed: int, index: int,
                 res: EpisodeResult, term: float) -> dict:
    return {
        "setup": spec.setup.value, "mode": spec.backend, "cl": spec.k_icl,
        "scenario": spec.scenario or "-", "seed": seed, "episode": index,
        "success": res.success, "steps": res.steps, "ts_term": term,
        "dangerous": res.dangerous_hit, "agent_length": res.agent_length,
        "shortest_length": res.shortest_length,
        "failure_reason": res.failure_reason,
    }


def run_suite(spec: SuiteSpec, store: Optional[MemoryStore] = None,
              embedder: Optional[Embedder] = None,
              workers: int = 4) -> SuiteReport:
    """Run n_episodes on identical scenes once per evaluation seed,
    then average the metrics over the seeds."""
    if store is None and spec.store:
        from . import memory
        store = memory.load(spec.store)
    if embedder is None and store is not None:
        embedder = make_embedder(store.embedder_id)

    scenes = [make_scene(spec.setup, i, spec.room_type)
              for i in range(spec.n_episodes)]
    cassette = None
    if spec.cassette:
        from .gateway import Cassette
        cassette = Cassette(spec.cassette, spec.cassette_mode)
        workers = 1  # recorded exchanges are consumed in order

    def one(seed: int, index: int) -> EpisodeResult:
        cfg = RunConfig(k_icl=spec.k_icl, backend=spec.backend, seed=seed)
        ctx = OracleContext()
        backend = make_backend(spec.backend, seed, ctx, cassette=cassette)
        try:
            return run_episode(scenes[index], backend, ctx, cfg, store,
                               embedder, scenario=spec.scenario)
        except S2PError as err:
            return EpisodeResult(success=False, steps=0,
                                 failure_reason=f"episode aborted: {err}",
                                 scenario=spec.scenario)

    jobs = [(seed, i) for seed in spec.seeds for i in range(spec.n_episodes)]
    if jobs:
        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            outcomes = list(pool.map(lambda si: one(*si), jobs))
    else:
        outcomes = []

    by_seed: dict[int, list[EpisodeResult]] = {s: [] for s in spec.seeds}
    for (seed, _i), res in zip(jobs, outcomes):
        by_seed[seed].append(res)

    episodes = []
    per_seed = []
    ts_vals, d_vals, sr_vals, spl_vals = [], [], [], []
    for seed in spec.seeds:
        results = by_seed[seed]
        if not results:
            continue
        ts = trajectory_score(results, match=spec.match)
        d = danger_count(results)
        sr, spl = sr_spl(results)
        ts_vals.append(ts)
        d_vals.append(float(d))
        sr_vals.append(sr)
        spl_vals.append(spl)
        per_seed.append({"seed": seed, "ts": ts, "d": d,
                         "sr": sr, "spl": spl})
        for i, res in enumerate(results):
            episodes.append(_episode_row(spec, seed, i, res,
                                         episode_term(res, spec.match)))

    def mean(vals):
        return sum(vals) / len(vals) if vals else 0.0

    row = SuiteRow(mode=spec.backend, cl=spec.k_icl,
                   scenario=spec.scenario or "-", n=spec.n_episodes,
                   ts=mean(ts_vals), d=mean(d_vals), sr=mean(sr_vals),
                   spl=mean(spl_vals), per_seed=tuple(per_seed))
    return SuiteReport(spec=spec, row=row, episodes=episodes)


def format_table(rows: Sequence[SuiteRow]) -> str:
    """Aligned comparison table: Mode, CL, Scenario, TS(/N), D(/N)."""
    if not rows:
        return "(no rows)"
    n = rows[0].n
    header = ["Mode", "CL", "Scenario", f"TS (/{n})", f"D (/{n})",
              "SR", "SPL"]
    body = [[r.mode, str(r.cl), r.scenario, f"{r.ts:.2f}", f"{r.d:.2f}",
             f"{r.sr:.3f}", f"{r.spl:.3f}"] for r in rows]
    widths = [max(len(header[c]), *(len(b[c]) for b in body))
              for c in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for b in body:
        lines.append("  ".join(v.ljust(w) for v, w in zip(b, widths)))
    return "\n".join(lines)


def write_report(report: SuiteReport, out_dir: Union[str, Path]) -> dict:
    """Write report.json, report.txt, episodes.csv; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    json_path = out / "report.json"
    json_path.write_text(json.dumps(report.to_json_dict(), indent=2))
    txt_path = out / "report.txt"
    txt_path.write_text(format_table([report.row]) + "\n")
    csv_path = out / "episodes.csv"
    fields = ["setup", "mode", "cl", "scenario", "seed", "episode",
              "success", "steps", "ts_term", "dangerous", "agent_length",
              "shortest_length", "failure_reason"]
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in report.episodes:
            writer.writerow(row)
    return {"json": json_path, "table": txt_path, "csv": csv_path}
