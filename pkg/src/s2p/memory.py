"""Experiential memory: a durable store of demonstration samples.

Layout on disk:

    root/
      manifest.json        # embedder id, dim, episode index, sample count
      embeddings.f32       # 16-byte header, then count*dim little-endian f32
      ep_<episode_id>/
        sample_0000.json   # prompt, answer, provenance
        frame_0000.png     # the annotated frame shown to the model
        ...

The sidecar header is magic "S2PE" (4 bytes), dim as u32 LE, count as
u64 LE. Appends are write-temp-then-rename, manifest last, so a crash
at any point leaves the previously committed store loadable.
"""

from __future__ import annotations

import enum
import io
import json
import os
import struct
import time
import uuid
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence

import numpy as np
from filelock import FileLock, Timeout
from PIL import Image

from .core import Frame, FrameSource, PlanAnswer, Setup
from .errors import (
    BackendUnavailableError,
    CorruptManifestError,
    DimMismatchError,
    EmptyEpisodeError,
    HttpStatusError,
    MissingFrameError,
    StoreLockedError,
)

_SIDECAR_MAGIC = b"S2PE"
_SIDECAR_HEADER = struct.Struct("<4sIQ")  # magic, dim, count


class Scenario(enum.Enum):
    """Provenance tag of a demonstration episode."""

    A = "A"  # same environment, unrestricted
    D = "D"  # same environment, inference room excluded
    H = "H"  # human navigator
    O = "O"  # online footage
    CUSTOM = "custom"


class Embedder(Protocol):
    """Pluggable image embedder; must be deterministic per frame."""

    id: str
    dim: int

    def embed(self, frame: Frame) -> np.ndarray: ...


class HistogramEmbedder:
    """Offline stand-in embedder: 32-bin per-channel color histogram.

    The production embedder is a remote vision transformer; this one
    exists so retrieval is testable without a network. d = 96. Returns
    float64 so the unit-norm contract holds to 1e-9; persistence casts
    to f32.
    """

    id = "hist96"
    dim = 96

    def embed(self, frame: Frame) -> np.ndarray:
        bins = frame.data.reshape(-1, 3) >> 3  # 256 values -> 32 bins
        hist = np.zeros(96, dtype=np.float64)
        for ch in range(3):
            counts = np.bincount(bins[:, ch], minlength=32)[:32]
            hist[ch * 32:(ch + 1) * 32] = counts
        return hist / np.linalg.norm(hist)


class RemoteEmbedder:
    """HTTP embedder: POST PNG bytes, expect a JSON array of reals.

    Retries with exponential backoff before giving up; the backoff base
    is configurable so tests do not sleep.
    """

    def __init__(self, url: str, dim: int, id: str = "remote-vit",
                 retries: int = 3, backoff_base: float = 0.5,
                 timeout: float = 30.0):
        self.url = url
        self.dim = dim
        self.id = id
        self.retries = retries
        self.backoff_base = backoff_base
        self.timeout = timeout

    def embed(self, frame: Frame) -> np.ndarray:
        import requests

        payload = encode_png(frame)
        last_error: Exception | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                time.sleep(self.backoff_base * (2 ** (attempt - 1)))
            try:
                resp = requests.post(
                    self.url, data=payload,
                    headers={"Content-Type": "image/png"},
                    timeout=self.timeout,
                )
            except requests.RequestException as exc:
                last_error = exc
                continue
            if resp.status_code != 200:
                last_error = HttpStatusError(resp.status_code)
                continue
            vec = np.asarray(resp.json(), dtype=np.float64)
            if vec.shape != (self.dim,):
                raise DimMismatchError(
                    f"remote embedder returned {vec.shape}, expected ({self.dim},)"
                )
            norm = float(np.linalg.norm(vec))
            if norm == 0.0:
                raise BackendUnavailableError("remote embedder returned a zero vector")
            return vec / norm
        raise BackendUnavailableError(
            f"embedder at {self.url} failed after {self.retries + 1} attempts: "
            f"{last_error}"
        )


_EMBEDDERS: dict[str, Callable[[], Embedder]] = {
    "hist96": HistogramEmbedder,
}


def make_embedder(embedder_id: str, embed_url: Optional[str] = None,
                  dim: int = 768) -> Embedder:
    """Resolve an embedder id from config / env."""
    if embedder_id in _EMBEDDERS:
        return _EMBEDDERS[embedder_id]()
    url = embed_url or os.environ.get("S2P_EMBED_URL")
    if not url:
        raise DimMismatchError(
            f"unknown embedder {embedder_id!r} and S2P_EMBED_URL not set"
        )
    return RemoteEmbedder(url=url, dim=dim, id=embedder_id)


def encode_png(frame: Frame) -> bytes:
    """Frame -> 8-bit RGB PNG bytes (no alpha)."""
    img = Image.fromarray(np.asarray(frame.data), mode="RGB")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def decode_png(data: bytes, source: FrameSource = FrameSource.FILE) -> Frame:
    img = Image.open(io.BytesIO(data)).convert("RGB")
    return Frame.from_array(np.asarray(img), source=source)


@dataclass(frozen=True, eq=False)
class ExperienceSample:
    """One stored demonstration step: annotated frame + prompt + answer."""

    id: str
    episode_id: str
    step: int
    frame_ref: str  # path relative to the store root
    prompt: str
    answer: PlanAnswer
    embedding: np.ndarray  # unit-norm float32, read-only
    setup: Setup
    scenario: Scenario
    target_object: Optional[str] = None

    def __post_init__(self):
        self.embedding.setflags(write=False)

    def to_json_dict(self) -> dict:
        return {
            "id": self.id,
            "episode_id": self.episode_id,
            "step": self.step,
            "frame_ref": self.frame_ref,
            "prompt": self.prompt,
            "answer": self.answer.to_json_dict(),
            "setup": self.setup.value,
            "scenario": self.scenario.value,
            "target_object": self.target_object,
        }

    @classmethod
    def from_json_dict(cls, doc: dict, embedding: np.ndarray) -> "ExperienceSample":
        ans = doc["answer"]
        answer = PlanAnswer(
            commands=tuple(ans["commands"]),
            explanation=ans["explanation"],
            objects_seen=tuple(ans["objects"]) if "objects" in ans else None,
            dangerous_ids=tuple(ans["dangerous"]) if "dangerous" in ans else None,
        )
        return cls(
            id=doc["id"],
            episode_id=doc["episode_id"],
            step=doc["step"],
            frame_ref=doc["frame_ref"],
            prompt=doc["prompt"],
            answer=answer,
            embedding=np.ascontiguousarray(embedding, dtype=np.float32),
            setup=Setup(doc["setup"]),
            scenario=Scenario(doc["scenario"]),
            target_object=doc.get("target_object"),
        )


def new_sample(step: int, frame_ref: str, prompt: str, answer: PlanAnswer,
               embedding: np.ndarray, setup: Setup,
               scenario: Scenario = Scenario.CUSTOM,
               target_object: Optional[str] = None,
               episode_id: Optional[str] = None) -> ExperienceSample:
    return ExperienceSample(
        id=str(uuid.uuid4()),
        episode_id=episode_id or str(uuid.uuid4()),
        step=step,
        frame_ref=frame_ref,
        prompt=prompt,
        answer=answer,
        embedding=np.ascontiguousarray(embedding, dtype=np.float32),
        setup=setup,
        scenario=scenario,
        target_object=target_object,
    )


class MemoryStore:
    """In-memory view of a store directory; all embeddings resident."""

    def __init__(self, root: Path, embedder_id: str, dim: int,
                 samples: list[ExperienceSample], episodes: list[dict]):
        self.root = Path(root)
        self.embedder_id = embedder_id
        self.dim = dim
        self.samples = samples
        self.episodes = episodes

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def episode_count(self) -> int:
        return len(self.episodes)

    def require_embedder(self, embedder: Embedder) -> None:
        if embedder.id != self.embedder_id or embedder.dim != self.dim:
            raise DimMismatchError(
                f"store built with {self.embedder_id!r} (d={self.dim}), "
                f"got {embedder.id!r} (d={embedder.dim})"
            )

    def frame_path(self, sample: ExperienceSample) -> Path:
        return self.root / sample.frame_ref

    def load_frame(self, sample: ExperienceSample) -> Frame:
        path = self.frame_path(sample)
        if not path.exists():
            raise MissingFrameError(str(path))
        return decode_png(path.read_bytes())


def init_store(root: Path | str, embedder: Embedder) -> MemoryStore:
    """Create an empty store directory (manifest + empty sidecar)."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    store = MemoryStore(root, embedder.id, embedder.dim, [], [])
    _write_sidecar(root, embedder.dim, np.zeros((0, embedder.dim), np.float32))
    _write_manifest(root, store)
    return store


def load(root: Path | str) -> MemoryStore:
    """Load a store; corrupt or missing pieces raise, never skip silently."""
    root = Path(root)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise CorruptManifestError(f"no manifest at {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
        embedder_id = manifest["embedder_id"]
        dim = int(manifest["dim"])
        count = int(manifest["count"])
        episodes = list(manifest["episodes"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CorruptManifestError(f"unreadable manifest {manifest_path}: {exc}")

    embeddings = _read_sidecar(root, dim, minimum_count=count)

    samples: list[ExperienceSample] = []
    offset_seen = 0
    for ep in episodes:
        ep_dir = root / ep["dir"]
        n = int(ep["n_samples"])
        offset = int(ep["embedding_offset"])
        for i in range(n):
            sample_path = ep_dir / f"sample_{i:04d}.json"
            if not sample_path.exists():
                raise MissingFrameError(str(sample_path))
            try:
                doc = json.loads(sample_path.read_text())
            except json.JSONDecodeError as exc:
                raise CorruptManifestError(f"corrupt sample {sample_path}: {exc}")
            sample = ExperienceSample.from_json_dict(doc, embeddings[offset + i])
            if not (root / sample.frame_ref).exists():
                raise MissingFrameError(str(root / sample.frame_ref))
            samples.append(sample)
        offset_seen += n
    if offset_seen != count:
        raise CorruptManifestError(
            f"manifest count {count} != episode sample total {offset_seen}"
        )
    return MemoryStore(root, embedder_id, dim, samples, episodes)


def append_episode(store: MemoryStore, episode: Sequence[ExperienceSample],
                   frames: Sequence[Frame], lock_timeout: float = 10.0) -> dict:
    """Durably append one episode; returns the new manifest entry.

    `frames` are the annotated frames, one per sample, written as PNG;
    each sample's frame_ref is rewritten to its stored location.
    """
    if not episode:
        raise EmptyEpisodeError("episode has no samples")
    if len(frames) != len(episode):
        raise ValueError("one frame per sample required")
    for s in episode:
        if s.embedding.shape != (store.dim,):
            raise DimMismatchError(
                f"sample embedding dim {s.embedding.shape} != store dim {store.dim}"
            )

    lock = FileLock(str(store.root / ".lock"))
    try:
        lock.acquire(timeout=lock_timeout)
    except Timeout:
        raise StoreLockedError(f"store {store.root} is locked by another writer")
    try:
        episode_id = episode[0].episode_id
        ep_dirname = f"ep_{episode_id}"
        ep_dir = store.root / ep_dirname
        ep_dir.mkdir(exist_ok=False)

        stored: list[ExperienceSample] = []
        for i, (sample, frame) in enumerate(zip(episode, frames)):
            frame_ref = f"{ep_dirname}/frame_{i:04d}.png"
            (store.root / frame_ref).write_bytes(encode_png(frame))
            doc = sample.to_json_dict()
            doc["frame_ref"] = frame_ref
            (ep_dir / f"sample_{i:04d}.json").write_text(
                json.dumps(doc, indent=2)
            )
            stored.append(ExperienceSample.from_json_dict(doc, sample.embedding))

        old = _read_sidecar(store.root, store.dim, minimum_count=len(store))
        new_rows = np.stack([s.embedding for s in stored])
        _write_sidecar(store.root, store.dim,
                       np.concatenate([old[: len(store)], new_rows]))

        entry = {
            "episode_id": episode_id,
            "dir": ep_dirname,
            "n_samples": len(stored),
            "embedding_offset": len(store),
            "scenario": stored[0].scenario.value,
            "setup": stored[0].setup.value,
        }
        store.episodes.append(entry)
        store.samples.extend(stored)
        _write_manifest(store.root, store)
        return entry
    finally:
        lock.release()


def reembed(store: MemoryStore, embedder: Embedder,
            lock_timeout: float = 10.0) -> int:
    """Recompute every sample's embedding from its stored frame and
    rewrite the sidecar in place; returns the row count."""
    store.require_embedder(embedder)
    lock = FileLock(str(store.root / ".lock"))
    try:
        lock.acquire(timeout=lock_timeout)
    except Timeout:
        raise StoreLockedError(f"store {store.root} is locked by another writer")
    try:
        rows = [embedder.embed(store.load_frame(s)) for s in store.samples]
        refreshed = [
            ExperienceSample.from_json_dict(s.to_json_dict(),
                                            np.asarray(r, np.float32))
            for s, r in zip(store.samples, rows)
        ]
        sidecar = (np.stack(rows).astype(np.float32) if rows
                   else np.zeros((0, store.dim), np.float32))
        _write_sidecar(store.root, store.dim, sidecar)
        store.samples[:] = refreshed
        return len(rows)
    finally:
        lock.release()


def import_store(dest: MemoryStore, source: MemoryStore) -> int:
    """Append every episode of `source` into `dest` (same embedder
    required); returns the number of samples copied."""
    if (source.embedder_id, source.dim) != (dest.embedder_id, dest.dim):
        raise DimMismatchError(
            f"cannot import {source.embedder_id!r}/d={source.dim} episodes "
            f"into a {dest.embedder_id!r}/d={dest.dim} store")
    copied = 0
    for ep in source.episodes:
        offset = int(ep["embedding_offset"])
        n = int(ep["n_samples"])
        batch = source.samples[offset:offset + n]
        frames = [source.load_frame(s) for s in batch]
        append_episode(dest, batch, frames)
        copied += n
    return copied


def _write_manifest(root: Path, store: MemoryStore) -> None:
    doc = {
        "embedder_id": store.embedder_id,
        "dim": store.dim,
        "count": len(store.samples),
        "episodes": store.episodes,
    }
    tmp = root / "manifest.json.tmp"
    tmp.write_text(json.dumps(doc, indent=2))
    os.replace(tmp, root / "manifest.json")


def _write_sidecar(root: Path, dim: int, rows: np.ndarray) -> None:
    header = _SIDECAR_HEADER.pack(_SIDECAR_MAGIC, dim, rows.shape[0])
    body = np.ascontiguousarray(rows, dtype="<f4").tobytes()
    tmp = root / "embeddings.f32.tmp"
    tmp.write_bytes(header + body)
    os.replace(tmp, root / "embeddings.f32")


def _read_sidecar(root: Path, dim: int, minimum_count: int) -> np.ndarray:
    path = root / "embeddings.f32"
    if not path.exists():
        raise MissingFrameError(str(path))
    raw = path.read_bytes()
    if len(raw) < _SIDECAR_HEADER.size:
        raise CorruptManifestError(f"sidecar {path} truncated header")
    magic, d, count = _SIDECAR_HEADER.unpack_from(raw)
    if magic != _SIDECAR_MAGIC:
        raise CorruptManifestError(f"sidecar {path} bad magic {magic!r}")
    if d != dim:
        raise DimMismatchError(f"sidecar dim {d} != manifest dim {dim}")
    expected = _SIDECAR_HEADER.size + count * d * 4
    if len(raw) < expected:
        raise CorruptManifestError(
            f"sidecar {path} holds {len(raw)} bytes, header promises {expected}"
        )
    # count may exceed the manifest's (append committed sidecar first)
    if count < minimum_count:
        raise CorruptManifestError(
            f"sidecar count {count} < manifest count {minimum_count}"
        )
    rows = np.frombuffer(raw, dtype="<f4", offset=_SIDECAR_HEADER.size,
                         count=count * d).reshape(count, d)
    return rows.copy()
