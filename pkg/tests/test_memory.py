"""Experiential memory store and embedder tests."""

import json
import math
import os

import numpy as np
import pytest

from s2p.core import Frame, PlanAnswer, Setup
from s2p.errors import (
    CorruptManifestError,
    DimMismatchError,
    EmptyEpisodeError,
    MissingFrameError,
    StoreLockedError,
)
from s2p.memory import (
    HistogramEmbedder,
    RemoteEmbedder,
    Scenario,
    append_episode,
    decode_png,
    encode_png,
    init_store,
    load,
    new_sample,
)


def frame_of(fill, w=32, h=24):
    return Frame.from_array(np.full((h, w, 3), fill, dtype=np.uint8))


def hand_histogram(frame):
    """Independent oracle: count pixel values into 32 bins per channel."""
    counts = [0.0] * 96
    for v in range(frame.height):
        for u in range(frame.width):
            for ch in range(3):
                counts[ch * 32 + int(frame.data[v, u, ch]) // 8] += 1
    norm = math.sqrt(sum(c * c for c in counts))
    return [c / norm for c in counts]


class TestHistogramEmbedder:
    def test_unit_norm(self):
        emb = HistogramEmbedder()
        v = emb.embed(frame_of(77))
        assert v.shape == (96,)
        assert abs(float(np.linalg.norm(v)) - 1.0) < 1e-9

    def test_black_vs_white_nearly_orthogonal(self):
        emb = HistogramEmbedder()
        black = emb.embed(frame_of(0))
        white = emb.embed(frame_of(255))
        assert float(black @ white) < 0.01

    def test_matches_hand_oracle(self):
        rng = np.random.default_rng(3)
        f = Frame.from_array(rng.integers(0, 256, (10, 12, 3), dtype=np.uint8))
        got = HistogramEmbedder().embed(f)
        want = hand_histogram(f)
        assert np.allclose(got, want, atol=1e-6)

    def test_deterministic_bitwise(self):
        emb = HistogramEmbedder()
        rng = np.random.default_rng(5)
        f = Frame.from_array(rng.integers(0, 256, (16, 16, 3), dtype=np.uint8))
        a = emb.embed(f)
        b = emb.embed(f)
        assert a.tobytes() == b.tobytes()


def test_png_roundtrip():
    rng = np.random.default_rng(11)
    f = Frame.from_array(rng.integers(0, 256, (20, 30, 3), dtype=np.uint8))
    back = decode_png(encode_png(f))
    assert (back.data == f.data).all()


def make_episode(emb, n_steps=3, scenario=Scenario.A, setup=Setup.FPV, seed=0):
    rng = np.random.default_rng(seed)
    samples, frames = [], []
    episode_id = f"ep{seed:08d}-0000-0000-0000-000000000000"
    for i in range(n_steps):
        f = Frame.from_array(rng.integers(0, 256, (24, 32, 3), dtype=np.uint8))
        frames.append(f)
        samples.append(new_sample(
            step=i, frame_ref="", prompt=f"step {i}",
            answer=PlanAnswer(commands=(4, 0), explanation=f"go {i}"),
            embedding=emb.embed(f), setup=setup, scenario=scenario,
            target_object="microwave", episode_id=episode_id,
        ))
    return samples, frames


class TestStoreRoundTrip:
    def test_append_then_load_equal(self, tmp_path):
        emb = HistogramEmbedder()
        store = init_store(tmp_path, emb)
        samples, frames = make_episode(emb, n_steps=4)
        append_episode(store, samples, frames)

        loaded = load(tmp_path)
        assert len(loaded) == 4
        for orig, got in zip(samples, loaded.samples):
            assert got.id == orig.id
            assert got.episode_id == orig.episode_id
            assert got.step == orig.step
            assert got.prompt == orig.prompt
            assert got.answer == orig.answer
            assert got.setup == orig.setup
            assert got.scenario == orig.scenario
            assert got.target_object == orig.target_object
            assert got.embedding.tobytes() == orig.embedding.tobytes()
            assert loaded.frame_path(got).exists()

    def test_25_single_step_episodes(self, tmp_path):
        emb = HistogramEmbedder()
        store = init_store(tmp_path, emb)
        for k in range(25):
            samples, frames = make_episode(emb, n_steps=1, seed=k + 1)
            append_episode(store, samples, frames)
        loaded = load(tmp_path)
        assert loaded.episode_count == 25
        assert len(loaded) == 25

    def test_empty_episode_rejected(self, tmp_path):
        store = init_store(tmp_path, HistogramEmbedder())
        with pytest.raises(EmptyEpisodeError):
            append_episode(store, [], [])

    def test_two_appends_additive(self, tmp_path):
        emb = HistogramEmbedder()
        store = init_store(tmp_path, emb)
        s1, f1 = make_episode(emb, n_steps=2, seed=1)
        s2, f2 = make_episode(emb, n_steps=5, seed=2)
        append_episode(store, s1, f1)
        append_episode(store, s2, f2)
        assert len(load(tmp_path)) == 7

    def test_frames_decodable(self, tmp_path):
        emb = HistogramEmbedder()
        store = init_store(tmp_path, emb)
        samples, frames = make_episode(emb, n_steps=1)
        append_episode(store, samples, frames)
        loaded = load(tmp_path)
        back = loaded.load_frame(loaded.samples[0])
        assert (back.data == frames[0].data).all()


class TestStoreErrors:
    def test_missing_sample_file_named(self, tmp_path):
        emb = HistogramEmbedder()
        store = init_store(tmp_path, emb)
        samples, frames = make_episode(emb, n_steps=3)
        append_episode(store, samples, frames)
        victim = tmp_path / store.episodes[0]["dir"] / "sample_0001.json"
        victim.unlink()
        with pytest.raises(MissingFrameError) as exc:
            load(tmp_path)
        assert "sample_0001.json" in str(exc.value)

    def test_missing_frame_file_named(self, tmp_path):
        emb = HistogramEmbedder()
        store = init_store(tmp_path, emb)
        samples, frames = make_episode(emb, n_steps=2)
        append_episode(store, samples, frames)
        victim = tmp_path / store.episodes[0]["dir"] / "frame_0000.png"
        victim.unlink()
        with pytest.raises(MissingFrameError) as exc:
            load(tmp_path)
        assert "frame_0000.png" in str(exc.value)

    def test_corrupt_manifest(self, tmp_path):
        init_store(tmp_path, HistogramEmbedder())
        (tmp_path / "manifest.json").write_text("{nope")
        with pytest.raises(CorruptManifestError):
            load(tmp_path)

    def test_embedder_mismatch(self, tmp_path):
        store = init_store(tmp_path, HistogramEmbedder())
        other = RemoteEmbedder(url="http://unused.invalid", dim=768)
        with pytest.raises(DimMismatchError):
            store.require_embedder(other)

    def test_wrong_dim_append_rejected(self, tmp_path):
        emb = HistogramEmbedder()
        store = init_store(tmp_path, emb)
        samples, frames = make_episode(emb, n_steps=1)
        bad = new_sample(
            step=0, frame_ref="", prompt="p",
            answer=PlanAnswer(commands=(1,), explanation="e"),
            embedding=np.zeros(5, dtype=np.float32), setup=Setup.FPV,
        )
        with pytest.raises(DimMismatchError):
            append_episode(store, [bad], frames[:1])


class TestCrashConsistency:
    def test_interrupted_manifest_rename_keeps_prior_store(self, tmp_path,
                                                           monkeypatch):
        emb = HistogramEmbedder()
        store = init_store(tmp_path, emb)
        s1, f1 = make_episode(emb, n_steps=2, seed=1)
        append_episode(store, s1, f1)

        real_replace = os.replace

        def dying_replace(src, dst):
            if str(dst).endswith("manifest.json"):
                raise OSError("simulated crash before manifest rename")
            return real_replace(src, dst)

        monkeypatch.setattr("s2p.memory.os.replace", dying_replace)
        s2, f2 = make_episode(emb, n_steps=3, seed=2)
        with pytest.raises(OSError):
            append_episode(load(tmp_path), s2, f2)
        monkeypatch.undo()

        # prior manifest still loads; new sidecar rows beyond it are ignored
        loaded = load(tmp_path)
        assert len(loaded) == 2
        assert loaded.episode_count == 1

    def test_interrupted_sidecar_write_keeps_prior_store(self, tmp_path,
                                                         monkeypatch):
        emb = HistogramEmbedder()
        store = init_store(tmp_path, emb)
        s1, f1 = make_episode(emb, n_steps=2, seed=1)
        append_episode(store, s1, f1)

        real_replace = os.replace

        def dying_replace(src, dst):
            if str(dst).endswith("embeddings.f32"):
                raise OSError("simulated crash before sidecar rename")
            return real_replace(src, dst)

        monkeypatch.setattr("s2p.memory.os.replace", dying_replace)
        s2, f2 = make_episode(emb, n_steps=3, seed=2)
        with pytest.raises(OSError):
            append_episode(load(tmp_path), s2, f2)
        monkeypatch.undo()

        loaded = load(tmp_path)
        assert len(loaded) == 2


def test_writer_lock_exclusive(tmp_path):
    from filelock import FileLock

    emb = HistogramEmbedder()
    store = init_store(tmp_path, emb)
    samples, frames = make_episode(emb, n_steps=1)
    outer = FileLock(str(tmp_path / ".lock"))
    outer.acquire()
    try:
        with pytest.raises(StoreLockedError):
            append_episode(store, samples, frames, lock_timeout=0.05)
    finally:
        outer.release()


def test_manifest_count_mismatch_detected(tmp_path):
    emb = HistogramEmbedder()
    store = init_store(tmp_path, emb)
    samples, frames = make_episode(emb, n_steps=2)
    append_episode(store, samples, frames)
    doc = json.loads((tmp_path / "manifest.json").read_text())
    doc["count"] = 5
    (tmp_path / "manifest.json").write_text(json.dumps(doc))
    with pytest.raises(CorruptManifestError):
        load(tmp_path)
