"""Episodic dataset store and the co-training mixture sampler.

Layout under a dataset root:

    manifest.psv            pipe-separated episode table: id|steps|instruction|source
    episodes/<id>/steps.csv per-step rows: step, images (name=hash;...), a0..a7, p0..p7
    blobs/<hash>.png        content-addressed observation images

Writers take a manifest lock and land the new manifest atomically, so
concurrent writers of distinct episodes never corrupt it. The mixture
sampler draws each batch element from the simulation set with
probability lambda (else from pretraining), uniformly over steps within
the chosen source, as an infinite deterministic stream.

Export adapter mapping (for episodic-record consumers): one manifest row
-> one episode; per step, ``images`` blobs -> observation/image features
(by camera name), ``a0..a7`` -> action vector, ``p0..p7`` ->
observation/proprio (joint positions + gripper width); ``instruction``
-> language instruction; ``source`` distinguishes pretraining vs
simulation provenance.
"""

from __future__ import annotations

import hashlib
import io
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
from filelock import FileLock

MANIFEST = "manifest.psv"
SOURCES = ("pretrain", "sim")


class DatasetError(ValueError):
    """Malformed dataset contents or inconsistent write."""


@dataclass
class StepData:
    action: np.ndarray  # (A,)
    proprio: np.ndarray  # (P,)
    images: dict[str, np.ndarray] = field(default_factory=dict)  # name -> HxWx3 uint8/float
    image_refs: dict[str, str] = field(default_factory=dict)  # name -> blob hash


@dataclass
class EpisodeMeta:
    episode_id: str
    steps: int
    instruction: str
    source: str


class EpisodeDataset:
    def __init__(self, root, source: str = "sim"):
        if source not in SOURCES:
            raise DatasetError(f"source must be one of {SOURCES}, got {source!r}")
        self.root = Path(root)
        self.source = source
        (self.root / "episodes").mkdir(parents=True, exist_ok=True)
        (self.root / "blobs").mkdir(parents=True, exist_ok=True)
        if not (self.root / MANIFEST).exists():
            self._write_manifest([])

    # -- manifest ---------------------------------------------------------

    def _lock(self) -> FileLock:
        return FileLock(str(self.root / (MANIFEST + ".lock")))

    def _write_manifest(self, rows: list[EpisodeMeta]) -> None:
        fd, tmp = tempfile.mkstemp(dir=self.root, prefix=".manifest-")
        with os.fdopen(fd, "w") as fh:
            fh.write("id|steps|instruction|source\n")
            for r in rows:
                if "|" in r.instruction:
                    raise DatasetError("instruction may not contain '|'")
                fh.write(f"{r.episode_id}|{r.steps}|{r.instruction}|{r.source}\n")
        os.replace(tmp, self.root / MANIFEST)

    def episodes(self) -> list[EpisodeMeta]:
        rows = []
        with open(self.root / MANIFEST) as fh:
            header = fh.readline()
            if header.strip() != "id|steps|instruction|source":
                raise DatasetError(f"{self.root / MANIFEST}: bad header {header!r}")
            for ln, line in enumerate(fh, start=2):
                parts = line.rstrip("\n").split("|")
                if len(parts) != 4:
                    raise DatasetError(f"{self.root / MANIFEST}:{ln}: expected 4 fields")
                rows.append(EpisodeMeta(parts[0], int(parts[1]), parts[2], parts[3]))
        return rows

    def __len__(self) -> int:
        return len(self.episodes())

    def total_steps(self) -> int:
        return sum(e.steps for e in self.episodes())

    # -- blobs ------------------------------------------------------------

    def _store_image(self, img: np.ndarray) -> str:
        from PIL import Image

        arr = np.asarray(img)
        if arr.dtype != np.uint8:
            arr = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
        buf = io.BytesIO()
        Image.fromarray(arr).save(buf, format="PNG")
        data = buf.getvalue()
        digest = hashlib.sha256(data).hexdigest()
        blob = self.root / "blobs" / f"{digest}.png"
        if not blob.exists():
            blob.write_bytes(data)
        return digest

    def load_image(self, digest: str) -> np.ndarray:
        from PIL import Image

        blob = self.root / "blobs" / f"{digest}.png"
        if not blob.exists():
            raise DatasetError(f"missing image blob {digest}")
        return np.asarray(Image.open(blob))

    # -- episodes ---------------------------------------------------------

    def write_episode(self, steps: list[StepData], instruction: str = "") -> str:
        """Store one episode; returns its id. The manifest update is atomic."""
        if not steps:
            raise DatasetError("episode must have at least one step")
        a_dim = len(steps[0].action)
        p_dim = len(steps[0].proprio)
        for i, s in enumerate(steps):
            if len(s.action) != a_dim or len(s.proprio) != p_dim:
                raise DatasetError(f"step {i}: action/proprio dimensions differ from step 0")

        with self._lock():
            existing = self.episodes()
            episode_id = f"ep{len(existing):06d}"
            ep_dir = self.root / "episodes" / episode_id
            ep_dir.mkdir(parents=True)
            with open(ep_dir / "steps.csv", "w") as fh:
                acol = ",".join(f"a{i}" for i in range(a_dim))
                pcol = ",".join(f"p{i}" for i in range(p_dim))
                fh.write(f"step,images,{acol},{pcol}\n")
                for i, s in enumerate(steps):
                    refs = ";".join(
                        f"{name}={self._store_image(img)}" for name, img in sorted(s.images.items())
                    )
                    avals = ",".join(repr(float(v)) for v in s.action)
                    pvals = ",".join(repr(float(v)) for v in s.proprio)
                    fh.write(f"{i},{refs},{avals},{pvals}\n")
            existing.append(EpisodeMeta(episode_id, len(steps), instruction, self.source))
            self._write_manifest(existing)
        return episode_id

    def read_episode(self, episode_id: str) -> list[StepData]:
        ep_dir = self.root / "episodes" / episode_id
        path = ep_dir / "steps.csv"
        if not path.exists():
            raise DatasetError(f"unknown episode {episode_id!r}")
        steps = []
        with open(path) as fh:
            header = fh.readline().rstrip("\n").split(",")
            a_dim = sum(1 for h in header if h.startswith("a") and h[1:].isdigit())
            p_dim = sum(1 for h in header if h.startswith("p") and h[1:].isdigit())
            for line in fh:
                parts = line.rstrip("\n").split(",")
                refs = {}
                if parts[1]:
                    for frag in parts[1].split(";"):
                        name, digest = frag.split("=", 1)
                        blob = self.root / "blobs" / f"{digest}.png"
                        if not blob.exists():
                            raise DatasetError(f"episode {episode_id}: missing blob {digest}")
                        refs[name] = digest
                action = np.array([float(v) for v in parts[2 : 2 + a_dim]])
                proprio = np.array([float(v) for v in parts[2 + a_dim : 2 + a_dim + p_dim]])
                steps.append(StepData(action=action, proprio=proprio, image_refs=refs))
        return steps

    def step_index(self) -> list[tuple[str, int]]:
        """(episode id, step) pairs in manifest order, the sampler's domain."""
        out = []
        for meta in self.episodes():
            out.extend((meta.episode_id, i) for i in range(meta.steps))
        return out


@dataclass(frozen=True)
class MixtureSpec:
    mix_lambda: float  # probability a batch element comes from the sim set
    batch_size: int
    seed: int

    def __post_init__(self):
        if not (0.0 <= self.mix_lambda <= 1.0):
            raise DatasetError(f"lambda must be in [0, 1], got {self.mix_lambda}")
        if self.batch_size < 1:
            raise DatasetError("batch size must be >= 1")


@dataclass(frozen=True)
class BatchElement:
    source: str
    episode_id: str
    step: int


def mixed_sampler(
    pretrain: EpisodeDataset, sim: EpisodeDataset, spec: MixtureSpec
) -> Iterator[list[BatchElement]]:
    """Infinite deterministic stream of batches mixing the two sources."""
    pre_steps = pretrain.step_index()
    sim_steps = sim.step_index()
    if spec.mix_lambda > 0.0 and not sim_steps:
        raise DatasetError("lambda > 0 but the simulation dataset is empty")
    if spec.mix_lambda < 1.0 and not pre_steps:
        raise DatasetError("lambda < 1 but the pretraining dataset is empty")
    rng = np.random.default_rng(spec.seed)

    def stream():
        while True:
            batch = []
            for _ in range(spec.batch_size):
                take_sim = rng.uniform() < spec.mix_lambda
                if take_sim:
                    ep, st = sim_steps[int(rng.integers(len(sim_steps)))]
                    batch.append(BatchElement("sim", ep, st))
                else:
                    ep, st = pre_steps[int(rng.integers(len(pre_steps)))]
                    batch.append(BatchElement("pretrain", ep, st))
            yield batch

    return stream()


@dataclass
class MixtureStats:
    elements: int
    source_counts: dict[str, int]
    episode_counts: dict[tuple[str, str], int]

    @property
    def sim_fraction(self) -> float:
        return self.source_counts.get("sim", 0) / max(self.elements, 1)


def mixture_stats(stream: Iterator[list[BatchElement]], n_elements: int) -> MixtureStats:
    """Consume elements from the stream and tally sources and coverage."""
    if n_elements < 1:
        raise DatasetError("n_elements must be >= 1")
    source_counts: dict[str, int] = {}
    episode_counts: dict[tuple[str, str], int] = {}
    seen = 0
    while seen < n_elements:
        for el in next(stream):
            source_counts[el.source] = source_counts.get(el.source, 0) + 1
            key = (el.source, el.episode_id)
            episode_counts[key] = episode_counts.get(key, 0) + 1
            seen += 1
            if seen >= n_elements:
                break
    return MixtureStats(seen, source_counts, episode_counts)
