"""Cosine and diversity-selection tests, including the brute-force oracle."""

import numpy as np
import pytest

from s2p.core import RunConfig, Setup
from s2p.errors import DimMismatchError, EmptyMemoryError, KTooLargeError
from s2p.memory import HistogramEmbedder, Scenario, init_store, append_episode
from s2p.retrieval import build_context, cosine, mmr_rank, mmr_select, top_k_by_relevance

from conftest import make_frame, make_sample, random_unit_vectors, unit


def brute_force_greedy(query, samples, k, lam):
    """Independent oracle: re-enumerate every candidate from scratch
    each round, recomputing the max-similarity penalty over the chosen
    set with plain loops."""
    pool = sorted(samples, key=lambda s: s.id)
    chosen = []
    for _ in range(k):
        best = None
        best_score = None
        for s in pool:
            if any(s.id == c.id for c in chosen):
                continue
            rel = float(np.dot(np.asarray(s.embedding, np.float64),
                               np.asarray(query, np.float64)))
            if chosen:
                penalty = max(
                    float(np.dot(np.asarray(s.embedding, np.float64),
                                 np.asarray(c.embedding, np.float64)))
                    for c in chosen
                )
            else:
                penalty = 0.0
            score = lam * rel - (1.0 - lam) * penalty
            if best_score is None or score > best_score:
                best_score = score
                best = s
        chosen.append(best)
    return chosen


class TestCosine:
    def test_identity(self):
        v = unit([1.0, 2.0, 3.0])
        assert cosine(v, v) == pytest.approx(1.0, abs=1e-9)

    def test_orthogonal(self):
        e1 = np.array([1.0, 0.0, 0.0])
        e2 = np.array([0.0, 1.0, 0.0])
        assert cosine(e1, e2) == 0.0

    def test_antiparallel(self):
        v = unit([0.3, -0.4, 0.5])
        assert cosine(v, -v) == pytest.approx(-1.0, abs=1e-9)

    def test_dim_mismatch(self):
        with pytest.raises(DimMismatchError):
            cosine(np.zeros(3), np.zeros(4))

    def test_range(self, rng):
        for _ in range(100):
            a, b = random_unit_vectors(rng, 2, 8)
            c = cosine(a, b)
            assert -1.0 - 1e-9 <= c <= 1.0 + 1e-9


class TestMmrSelect:
    def test_lambda_one_is_pure_similarity(self, rng):
        for trial in range(30):
            vecs = random_unit_vectors(rng, 6, 8)
            samples = [make_sample(f"s{i:03d}", v) for i, v in enumerate(vecs)]
            query = random_unit_vectors(rng, 1, 8)[0]
            got = mmr_select(query, samples, k=4, lam=1.0)
            want = top_k_by_relevance(query, samples, k=4)
            assert [s.id for s in got] == [s.id for s in want]

    def test_duplicate_penalized_strictly(self):
        # lam=0.4 puts the diversity pull ahead: after one copy of the
        # query is chosen, its twin scores 2*lam-1 = -0.2 while a less
        # similar vector scores (2*lam-1)*rel > -0.2.
        q = unit([1.0, 0.0, 0.0])
        r = unit([0.2, 1.0, 0.0])
        samples = [make_sample("s000", q), make_sample("s001", q),
                   make_sample("s002", r)]
        got = mmr_select(q, samples, k=2, lam=0.4)
        assert [s.id for s in got] == ["s000", "s002"]

    def test_duplicate_query_hand_case(self):
        # q duplicated, r dissimilar, k=2, lam=0.5. Hand evaluation: round
        # one both copies score 0.5 and win; round two the remaining copy
        # scores 0.5*1 - 0.5*1 = 0 and r scores 0.5*rel - 0.5*rel = 0, so
        # the ascending-id rule decides; with r's id below the twin's the
        # pick is one q then r.
        q = unit([1.0, 0.0, 0.0, 0.0])
        r = unit([0.0, 1.0, 0.0, 0.1])
        samples = [make_sample("a", q), make_sample("c", q), make_sample("b", r)]
        got = mmr_select(q, samples, k=2, lam=0.5)
        assert [s.id for s in got] == ["a", "b"]

    @pytest.mark.parametrize("lam", [0.0, 0.3, 0.7, 1.0])
    def test_matches_brute_force_oracle(self, lam, rng):
        for trial in range(60):
            n = int(rng.integers(1, 9))
            k = int(rng.integers(1, min(n, 4) + 1))
            vecs = random_unit_vectors(rng, n, 8)
            samples = [make_sample(f"s{i:03d}", v) for i, v in enumerate(vecs)]
            query = random_unit_vectors(rng, 1, 8)[0]
            got = mmr_select(query, samples, k, lam)
            want = brute_force_greedy(query, samples, k, lam)
            assert [s.id for s in got] == [s.id for s in want], \
                f"trial {trial} lam {lam}"

    def test_with_duplicates_matches_oracle(self, rng):
        for trial in range(40):
            base = random_unit_vectors(rng, 3, 8)
            idx = rng.integers(0, 3, size=6)
            samples = [make_sample(f"s{i:03d}", base[j])
                       for i, j in enumerate(idx)]
            query = random_unit_vectors(rng, 1, 8)[0]
            for lam in (0.0, 0.5, 1.0):
                got = mmr_select(query, samples, 4, lam)
                want = brute_force_greedy(query, samples, 4, lam)
                assert [s.id for s in got] == [s.id for s in want]

    def test_deterministic(self, rng):
        vecs = random_unit_vectors(rng, 7, 8)
        samples = [make_sample(f"s{i:03d}", v) for i, v in enumerate(vecs)]
        query = random_unit_vectors(rng, 1, 8)[0]
        a = mmr_select(query, samples, 5, 0.6)
        b = mmr_select(query, samples, 5, 0.6)
        assert [s.id for s in a] == [s.id for s in b]

    def test_selection_scores_exposed(self, rng):
        vecs = random_unit_vectors(rng, 4, 8)
        samples = [make_sample(f"s{i:03d}", v) for i, v in enumerate(vecs)]
        query = vecs[2]
        ranked = mmr_rank(query, samples, 2, 0.7)
        # Stored embeddings are f32, so identity is only f32-exact.
        assert ranked[0][1].sample_id == "s002"
        assert ranked[0][1].relevance == pytest.approx(1.0, abs=1e-6)
        assert ranked[0][1].mmr_score == pytest.approx(0.7, abs=1e-6)

    def test_k_zero(self):
        assert mmr_select(np.zeros(4), [], 0, 0.5) == []

    def test_empty_memory(self):
        with pytest.raises(EmptyMemoryError):
            mmr_select(np.zeros(4), [], 1, 0.5)

    def test_k_too_large(self):
        samples = [make_sample("s000", unit([1.0, 0.0]))]
        with pytest.raises(KTooLargeError):
            mmr_select(unit([1.0, 0.0]), samples, 2, 0.5)

    def test_lambda_out_of_range(self):
        samples = [make_sample("s000", unit([1.0, 0.0]))]
        with pytest.raises(ValueError):
            mmr_select(unit([1.0, 0.0]), samples, 1, 1.3)


def build_store(tmp_path, setups_scenarios, seed=0):
    """Store with one single-step episode per (setup, scenario) entry."""
    from s2p.core import PlanAnswer
    from s2p.memory import new_sample

    emb = HistogramEmbedder()
    store = init_store(tmp_path, emb)
    rng = np.random.default_rng(seed)
    for i, (setup, scenario) in enumerate(setups_scenarios):
        frame = make_frame(seed=i + 1)
        sample = new_sample(
            step=0, frame_ref="", prompt=f"p{i}",
            answer=PlanAnswer(commands=(4, 0) if setup is Setup.FPV else (1,),
                              explanation="e"),
            embedding=emb.embed(frame), setup=setup, scenario=scenario,
            episode_id=f"{i:08d}-aaaa-bbbb-cccc-dddddddddddd",
        )
        append_episode(store, [sample], [frame])
    return store


class TestBuildContext:
    def test_setup_filter(self, tmp_path):
        store = build_store(tmp_path, [(Setup.FPV, Scenario.A)] * 3
                            + [(Setup.TPV, Scenario.A)] * 3)
        cfg = RunConfig(k_icl=6)
        picked = build_context(make_frame(seed=99), Setup.FPV, store, cfg,
                               embedder=HistogramEmbedder())
        assert len(picked) == 3
        assert all(s.setup is Setup.FPV for s in picked)

    def test_scenario_predicate(self, tmp_path):
        store = build_store(tmp_path, [(Setup.TPV, Scenario.A)] * 4
                            + [(Setup.TPV, Scenario.D)] * 4)
        cfg = RunConfig(k_icl=4)
        picked = build_context(make_frame(seed=7), Setup.TPV, store, cfg,
                               embedder=HistogramEmbedder(),
                               predicate=lambda s: s.scenario is Scenario.D)
        assert len(picked) == 4
        assert all(s.scenario is Scenario.D for s in picked)

    def test_k_zero_is_zero_shot(self, tmp_path):
        store = build_store(tmp_path, [(Setup.TPV, Scenario.A)] * 2)
        cfg = RunConfig(k_icl=0)
        assert build_context(make_frame(), Setup.TPV, store, cfg,
                             embedder=HistogramEmbedder()) == []

    def test_k_clamped_to_pool(self, tmp_path):
        store = build_store(tmp_path, [(Setup.TPV, Scenario.A)] * 2)
        cfg = RunConfig(k_icl=10)
        picked = build_context(make_frame(seed=1), Setup.TPV, store, cfg,
                               embedder=HistogramEmbedder())
        assert len(picked) == 2

    def test_embedder_mismatch_rejected(self, tmp_path):
        from s2p.memory import RemoteEmbedder

        store = build_store(tmp_path, [(Setup.TPV, Scenario.A)])
        cfg = RunConfig(k_icl=1)
        with pytest.raises(DimMismatchError):
            build_context(make_frame(), Setup.TPV, store, cfg,
                          embedder=RemoteEmbedder("http://x.invalid", dim=8))
