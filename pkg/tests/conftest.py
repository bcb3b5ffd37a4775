"""Shared fixtures and fabricated-data helpers."""

import numpy as np
import pytest

from s2p.core import Frame, PlanAnswer, Setup
from s2p.memory import ExperienceSample, Scenario


def make_frame(w=64, h=48, fill=128, seed=None):
    if seed is None:
        data = np.full((h, w, 3), fill, dtype=np.uint8)
    else:
        data = np.random.default_rng(seed).integers(0, 256, (h, w, 3),
                                                    dtype=np.uint8)
    return Frame.from_array(data)


def make_sample(sample_id, embedding, setup=Setup.TPV, scenario=Scenario.A,
                commands=(1,), episode_id="ep-test"):
    return ExperienceSample(
        id=sample_id,
        episode_id=episode_id,
        step=0,
        frame_ref="",
        prompt="prompt",
        answer=PlanAnswer(commands=tuple(commands), explanation="because"),
        embedding=np.asarray(embedding, dtype=np.float32),
        setup=setup,
        scenario=scenario,
    )


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def random_unit_vectors(rng, n, d):
    vecs = rng.normal(size=(n, d))
    return vecs / np.linalg.norm(vecs, axis=1, keepdims=True)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)
