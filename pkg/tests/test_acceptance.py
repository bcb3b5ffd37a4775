"""Acceptance gates for the whole pipeline, one test per guarantee.

Every expectation here is checked against an independent re-derivation
written in this file (brute-force greedy selection, naive metric loops,
closed-form controller times, axis-aligned distance checks) — never
against the library's own internals.
"""

import math
import os
import time

import numpy as np
import pytest

from s2p import memory
from s2p.core import PlanAnswer, RingSpec, Setup, command
from s2p.episodic import Compass, compass_observe, compass_rotate
from s2p.harness import SuiteSpec, record_oracle_demos, run_suite
from s2p.memory import ExperienceSample, Scenario
from s2p.prompts import (TaskSpec, build_conversation, parse_answer,
                         serialize_answer)
from s2p.retrieval import mmr_select, top_k_by_relevance
from s2p.simworld import (PdController, RoomType, floor_mask, fpv_render,
                          fpv_step, generate_fpv_scene, generate_tpv_room,
                          pd_track, tpv_annotated_frame)
from s2p.annotator import fpv_overlay
from s2p.metrics import (EpisodeResult, PlanRecord, danger_count,
                         episode_term, sr_spl, trajectory_score)


# --- independent re-implementations -----------------------------------------


def _cos(a, b):
    return float(np.asarray(a, np.float64) @ np.asarray(b, np.float64))


def brute_greedy_ids(query, samples, k, lam):
    """Literal greedy evaluation of the marginal-relevance objective."""
    order = sorted(range(len(samples)), key=lambda i: samples[i].id)
    chosen = []
    while len(chosen) < k:
        best_i, best_s = None, -math.inf
        for i in order:
            if i in chosen:
                continue
            pen = max((_cos(samples[i].embedding, samples[j].embedding)
                       for j in chosen), default=0.0)
            s = lam * _cos(samples[i].embedding, query) - (1.0 - lam) * pen
            if s > best_s:
                best_s, best_i = s, i
        chosen.append(best_i)
    return [samples[i].id for i in chosen]


def naive_ts(results, match):
    total = 0.0
    for r in results:
        if not r.records or any(not rec.safe for rec in r.records):
            continue
        acc = 0.0
        for rec in r.records:
            m = max(len(rec.predicted), len(rec.expert))
            if m == 0:
                continue
            if match == "positional":
                c = sum(1 for a, b in zip(rec.predicted, rec.expert)
                        if a == b)
            else:
                c = len(set(rec.predicted) & set(rec.expert))
            acc += c / m
        total += acc / len(r.records)
    return total


def naive_danger(results):
    return sum(1 for r in results if r.dangerous_hit)


def naive_sr_spl(results):
    sr = sum(1 for r in results if r.success) / len(results)
    spl = 0.0
    for r in results:
        if not r.success:
            continue
        denom = max(r.agent_length, r.shortest_length)
        spl += 1.0 if denom == 0 else r.shortest_length / denom
    return sr, spl / len(results)


def rect_distance(point, polygon):
    """Distance to an axis-aligned rectangle given as corner points."""
    xs = [p[0] for p in polygon]
    ys = [p[1] for p in polygon]
    dx = max(min(xs) - point[0], 0.0, point[0] - max(xs))
    dy = max(min(ys) - point[1], 0.0, point[1] - max(ys))
    return math.hypot(dx, dy)


def make_samples(vectors):
    return [
        ExperienceSample(
            id=f"{i:02d}", episode_id="ep", step=i, frame_ref="",
            prompt="q", answer=PlanAnswer(commands=(1,), explanation="a"),
            embedding=v, setup=Setup.TPV, scenario=Scenario.CUSTOM,
            target_object=None)
        for i, v in enumerate(vectors)
    ]


def unit_rows(rng, n, d):
    rows = rng.normal(size=(n, d))
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    return rows.astype(np.float32)


def random_results(rng, n):
    out = []
    for _ in range(n):
        records = []
        for _ in range(int(rng.integers(0, 5))):
            records.append(PlanRecord(
                predicted=tuple(int(c) for c in
                                rng.integers(0, 16, rng.integers(0, 5))),
                expert=tuple(int(c) for c in
                             rng.integers(0, 16, rng.integers(0, 5))),
                safe=bool(rng.random() < 0.8)))
        success = bool(rng.random() < 0.5)
        shortest = float(rng.uniform(0, 10)) if rng.random() < 0.9 else 0.0
        agent = shortest * float(rng.uniform(0.8, 2.0))
        out.append(EpisodeResult(
            success=success, steps=int(rng.integers(0, 25)),
            records=tuple(records),
            dangerous_hit=bool(rng.random() < 0.3),
            agent_length=agent if success else None,
            shortest_length=shortest if success else None))
    return out


# --- selection ----------------------------------------------------------------


def test_diverse_selection_matches_bruteforce_greedy_on_500_stores():
    rng = np.random.default_rng(42)
    t0 = time.monotonic()
    for trial in range(500):
        n = int(rng.integers(1, 9))
        samples = make_samples(unit_rows(rng, n, 8))
        query = unit_rows(rng, 1, 8)[0].astype(np.float64)
        k = int(rng.integers(1, min(4, n) + 1))
        for lam in (0.0, 0.3, 0.7, 1.0):
            got = [s.id for s in mmr_select(query, samples, k, lam)]
            want = brute_greedy_ids(query, samples, k, lam)
            assert got == want, f"trial {trial}, lam={lam}"
    assert time.monotonic() - t0 < 5.0


def test_relevance_only_selection_equals_topk_cosine_on_200_stores():
    rng = np.random.default_rng(7)
    for trial in range(200):
        n = int(rng.integers(1, 9))
        samples = make_samples(unit_rows(rng, n, 8))
        query = unit_rows(rng, 1, 8)[0].astype(np.float64)
        k = int(rng.integers(1, n + 1))
        got = [s.id for s in mmr_select(query, samples, k, 1.0)]
        ranked = sorted(samples,
                        key=lambda s: (-_cos(s.embedding, query), s.id))
        assert got == [s.id for s in ranked[:k]], f"trial {trial}"
        assert got == [s.id for s in top_k_by_relevance(query, samples, k)]


# --- metrics -------------------------------------------------------------------


def test_metrics_agree_with_naive_reimplementations():
    rng = np.random.default_rng(11)
    for trial in range(1000):
        results = random_results(rng, int(rng.integers(1, 9)))
        for match in ("positional", "set"):
            assert trajectory_score(results, match) == \
                pytest.approx(naive_ts(results, match), abs=1e-12)
        assert danger_count(results) == naive_danger(results)
        sr, spl = sr_spl(results)
        nsr, nspl = naive_sr_spl(results)
        assert sr == pytest.approx(nsr, abs=1e-12)
        assert spl == pytest.approx(nspl, abs=1e-12)

    perfect = EpisodeResult(success=True, steps=1, records=(
        PlanRecord((3, 9, 12), (3, 9, 12), True),),
        agent_length=1.0, shortest_length=1.0)
    assert episode_term(perfect) == 1.0
    half = EpisodeResult(success=True, steps=1, records=(
        PlanRecord((3, 9), (3, 9, 12, 14), True),),
        agent_length=1.0, shortest_length=1.0)
    assert episode_term(half) == 0.5
    unsafe = EpisodeResult(success=True, steps=1, records=(
        PlanRecord((3, 9, 12), (3, 9, 12), False),),
        agent_length=1.0, shortest_length=1.0)
    assert episode_term(unsafe) == 0.0


# --- end-to-end, top view --------------------------------------------------------


def test_topview_oracle_with_recall_beats_random_on_50_rooms(tmp_path):
    emb = memory.make_embedder("hist96")
    store = memory.init_store(tmp_path / "demos", emb)
    record_oracle_demos(store, Setup.TPV, [1000, 1001, 1002], embedder=emb)

    t0 = time.monotonic()
    oracle = run_suite(
        SuiteSpec(setup=Setup.TPV, backend="oracle", k_icl=10,
                  n_episodes=50, seeds=(0, 1, 2),
                  store=str(tmp_path / "demos")),
        workers=8)
    rnd = run_suite(
        SuiteSpec(setup=Setup.TPV, backend="random", k_icl=0,
                  n_episodes=50, seeds=(0, 1, 2)),
        workers=8)
    elapsed = time.monotonic() - t0

    assert oracle.row.sr >= 0.95, "expert planning must reach the goal"
    assert oracle.row.d == 0.0, "expert planning must avoid every obstacle"
    for o_seed, r_seed in zip(oracle.row.per_seed, rnd.row.per_seed):
        assert r_seed["ts"] < o_seed["ts"], \
            f"seed {o_seed['seed']}: random should score strictly lower"
        assert r_seed["d"] >= 25, \
            "random selection should endanger at least half the rooms"
    assert elapsed < 120.0, f"comparison took {elapsed:.1f}s"


# --- annotation safety ------------------------------------------------------------


def test_candidate_labels_stay_on_floor_and_flag_all_true_obstacles():
    rng = np.random.default_rng(3)
    labels_checked = 0
    for i in range(200):
        scene = generate_tpv_room(i)
        ring = RingSpec(dr=float(rng.uniform(0.35, 0.7)),
                        arc=float(rng.uniform(0.35, 0.7)),
                        n_rings=int(rng.integers(2, 5)),
                        safety_radius=int(rng.integers(3, 9)))
        mask = floor_mask(scene)
        af = tpv_annotated_frame(scene, mask, ring)
        obstacles = scene.true_obstacles()
        for lb in af.labels:
            u, v = lb.pos
            assert mask.bits[v, u], \
                f"room {i}: label {lb.id} off the visible floor"
            d = min(rect_distance(lb.world, poly) for poly in obstacles)
            assert lb.dangerous == (d <= 0.2), \
                f"room {i}: label {lb.id} danger flag wrong at d={d:.3f}"
            labels_checked += 1
    assert labels_checked > 2000


# --- episodic compass --------------------------------------------------------------


def ang_eq(a, b, tol=1e-9):
    return abs((a - b + 180.0) % 360.0 - 180.0) <= tol


def test_compass_rotation_closure_inverse_and_bearing_preservation():
    rng = np.random.default_rng(5)
    classes = ["sofa", "tv", "sink", "bed", "door", "plant"]
    for _ in range(1000):
        n = int(rng.integers(2, 6))
        names = list(rng.choice(classes, size=n, replace=False))
        c = Compass(heading=float(rng.uniform(0, 360)) % 360.0)
        c = compass_observe(
            Compass(heading=c.heading),
            [(nm, float(rng.uniform(-45, 45))) for nm in names])

        # four quarter turns come back to the start
        closed = c
        for _ in range(4):
            closed = compass_rotate(closed, 90.0)
        assert ang_eq(closed.heading, c.heading)
        assert closed.entries == c.entries

        # every turn has an inverse
        delta = float(rng.choice([30.0, 60.0, 90.0, -30.0, -60.0, -90.0]))
        back = compass_rotate(compass_rotate(c, delta), -delta)
        assert ang_eq(back.heading, c.heading)
        assert back.entries == c.entries

        # relative bearings move rigidly: pairwise differences survive
        # any rotation sequence
        turned = c
        for _ in range(int(rng.integers(1, 6))):
            turned = compass_rotate(
                turned,
                float(rng.choice([30.0, 60.0, 90.0, -30.0, -60.0, -90.0])))
        before = dict(c.relative())
        after = dict(turned.relative())
        for a in names:
            for b in names:
                assert ang_eq(before[a] - before[b], after[a] - after[b],
                              tol=1e-6)


# --- controller ---------------------------------------------------------------------


def test_controller_timing_convergence_and_rotation_closure():
    ctrl = PdController()
    v = ctrl.gains.v_lin

    # straight, already aligned: 1 m shall take 1/v seconds +-10%
    res = pd_track((0.0, 0.0, 0.0), [(1.0, 0.0)], ctrl)
    assert not res.collided and not res.exhausted
    t_end = res.trace[-1].t
    assert abs(t_end - 1.0 / v) <= 0.1 * (1.0 / v), f"took {t_end:.2f}s"
    assert math.hypot(res.pose[0] - 1.0, res.pose[1]) <= ctrl.eps

    # waypoint behind the robot: must turn around and capture it
    res = pd_track((0.0, 0.0, 0.0), [(-1.0, 0.0)], ctrl)
    assert not res.exhausted and not res.collided
    assert math.hypot(res.pose[0] + 1.0, res.pose[1]) <= ctrl.eps

    # twelve 30-degree turns in first person close the circle
    scene = generate_fpv_scene(0, RoomType.KITCHEN)
    frame0 = fpv_render(scene)[0]
    heading0 = scene.heading
    for _ in range(12):
        scene, _ = fpv_step(scene, command(3))
    assert scene.heading % 360 == heading0 % 360
    assert fpv_render(scene)[0].digest() == frame0.digest()


# --- conversation and answer codec ---------------------------------------------------


def test_conversation_turn_law_roundtrip_and_fenced_extraction(tmp_path):
    tpv_scene = generate_tpv_room(0)
    tpv_af = tpv_annotated_frame(tpv_scene, floor_mask(tpv_scene),
                                 RingSpec())
    png = tmp_path / "demo.png"
    png.write_bytes(memory.encode_png(tpv_af.base))

    def sample(i):
        return ExperienceSample(
            id=f"{i:03d}", episode_id="ep", step=i, frame_ref=str(png),
            prompt=f"earlier question {i}",
            answer=PlanAnswer(commands=(1,), explanation="pick 1"),
            embedding=np.zeros(4, np.float32), setup=Setup.TPV,
            scenario=Scenario.CUSTOM, target_object=None)

    for k in (0, 1, 5, 10):
        conv = build_conversation([sample(i) for i in range(k)], tpv_af,
                                  "", TaskSpec(Setup.TPV))
        assert len(conv.turns) == 2 * k + 1, f"k={k}"

    fpv_scene = generate_fpv_scene(1, RoomType.LIVING)
    fpv_af = fpv_overlay(fpv_render(fpv_scene)[0])
    rng = np.random.default_rng(13)
    tpv_ids = sorted(tpv_af.valid_action_ids())
    for trial in range(500):
        if trial % 2:
            af = fpv_af
            cmds = tuple(int(c) for c in rng.integers(0, 10, 2))
        else:
            af = tpv_af
            cmds = tuple(int(i) for i in rng.choice(
                tpv_ids, size=int(rng.integers(1, 5)), replace=False))
        answer = PlanAnswer(
            commands=cmds,
            explanation=f"turn {trial}: going past the chair",
            objects_seen=("sofa", "tv") if rng.random() < 0.5 else None,
            dangerous_ids=tuple(int(i) for i in rng.choice(
                tpv_ids, size=2, replace=False))
            if (trial % 2 == 0 and rng.random() < 0.5) else None)
        assert parse_answer(serialize_answer(answer), af) == answer

    fenced = ('Sure, here is the plan:\n```json\n'
              '{"commands": [4, 0], "explanation": "walk then stop"}\n'
              '```\nGood luck!')
    got = parse_answer(fenced, fpv_af)
    assert got.commands == (4, 0)
    noisy = ('I think {"commands": [4, 4], "explanation": "ahead"} works')
    assert parse_answer(noisy, fpv_af).commands == (4, 4)


# --- persistence -----------------------------------------------------------------------


def _demo_batch(af_frame, episode_id, n, setup):
    emb = memory.make_embedder("hist96")
    samples = [
        memory.new_sample(
            step=i, frame_ref="", prompt=f"step {i} query — naïve test",
            answer=PlanAnswer(commands=(4, 0), explanation=f"çédille {i}",
                              objects_seen=("tv",)),
            embedding=emb.embed(af_frame), setup=setup,
            scenario=Scenario.D, target_object="tv",
            episode_id=episode_id)
        for i in range(n)
    ]
    return samples, [af_frame] * n


def test_store_roundtrip_is_lossless_and_interrupted_append_is_invisible(
        tmp_path, monkeypatch):
    emb = memory.make_embedder("hist96")
    store = memory.init_store(tmp_path / "m", emb)
    frame = fpv_render(generate_fpv_scene(2, RoomType.BEDROOM))[0]
    samples, frames = _demo_batch(frame, "first", 3, Setup.FPV)
    memory.append_episode(store, samples, frames)

    loaded = memory.load(tmp_path / "m")
    assert [s.to_json_dict() for s in loaded.samples] == \
        [s.to_json_dict() for s in store.samples]
    for mine, theirs in zip(store.samples, loaded.samples):
        assert np.array_equal(mine.embedding, theirs.embedding)
        assert np.array_equal(loaded.load_frame(theirs).data, frame.data)

    # interrupt the append at each durability point: the prior state
    # must stay loadable and unchanged
    before = [s.id for s in loaded.samples]
    real_replace = os.replace
    for fail_at in (1, 2):  # 1 = embeddings rewrite, 2 = manifest rewrite
        calls = {"n": 0}

        def broken(src, dst, fail_at=fail_at, calls=calls):
            if str(dst).startswith(str(tmp_path / "m")):
                calls["n"] += 1
                if calls["n"] == fail_at:
                    raise OSError("simulated crash mid-append")
            return real_replace(src, dst)

        monkeypatch.setattr(os, "replace", broken)
        crashing = memory.load(tmp_path / "m")
        batch, bframes = _demo_batch(frame, f"crash-{fail_at}", 2, Setup.FPV)
        with pytest.raises(OSError):
            memory.append_episode(crashing, batch, bframes)
        monkeypatch.setattr(os, "replace", real_replace)
        survivor = memory.load(tmp_path / "m")
        assert [s.id for s in survivor.samples] == before

    # and the store still accepts new episodes afterwards
    batch, bframes = _demo_batch(frame, "after", 1, Setup.FPV)
    memory.append_episode(memory.load(tmp_path / "m"), batch, bframes)
    assert len(memory.load(tmp_path / "m").samples) == 4


# --- end-to-end, first person ------------------------------------------------------------


def test_firstperson_oracle_meets_quality_bounds_random_stays_low():
    for rt in RoomType:
        oracle = run_suite(
            SuiteSpec(setup=Setup.FPV, backend="oracle", n_episodes=100,
                      seeds=(0,), room_type=rt), workers=8)
        rnd = run_suite(
            SuiteSpec(setup=Setup.FPV, backend="random", n_episodes=100,
                      seeds=(0,), room_type=rt), workers=8)
        assert oracle.row.sr >= 0.90, \
            f"{rt.value}: oracle SR {oracle.row.sr:.2f}"
        assert oracle.row.spl >= 0.70, \
            f"{rt.value}: oracle SPL {oracle.row.spl:.2f}"
        assert rnd.row.sr <= 0.20, \
            f"{rt.value}: random SR {rnd.row.sr:.2f}"
        assert rnd.row.sr < oracle.row.sr


# --- offline operation ----------------------------------------------------------------------


def test_mock_backends_need_no_endpoint_configuration(monkeypatch):
    monkeypatch.delenv("S2P_VLM_URL", raising=False)
    monkeypatch.delenv("S2P_VLM_KEY", raising=False)
    for backend in ("oracle", "random"):
        report = run_suite(SuiteSpec(setup=Setup.FPV, backend=backend,
                                     n_episodes=2, seeds=(0,)))
        assert len(report.episodes) == 2
