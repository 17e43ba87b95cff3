"""Synthetic clip datasets with occluded frames, plus text-format ingestion.

Identities are isotropic Gaussian clusters; each clip draws T frames around
its identity center. With probability ``p_occ`` a frame is replaced by an
"occluded" one, either drawn from a uniformly random other identity
(``swap_identity``) or by flat uniform noise (``uniform_noise``). Clips
alternate between two pseudo-cameras, which later defines the query/gallery
split for retrieval evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .set_distance import FrameSet

OCCLUSION_MODES = ("swap_identity", "uniform_noise")


@dataclass
class GeneratorConfig:
    num_identities: int = 32
    clips_per_identity: int = 4
    frames_per_clip: int = 4
    input_dim: int = 32
    sigma_between: float = 3.0
    sigma_within: float = 1.0
    p_occ: float = 0.25
    occlusion_mode: str = "uniform_noise"
    seed: int = 0

    def __post_init__(self):
        if self.num_identities < 2:
            raise ValueError(f"need at least 2 identities, got {self.num_identities}")
        if self.clips_per_identity < 1 or self.frames_per_clip < 1 or self.input_dim < 1:
            raise ValueError("clips_per_identity, frames_per_clip and input_dim must be >= 1")
        if not (self.sigma_between > self.sigma_within > 0):
            raise ValueError(
                f"need sigma_between > sigma_within > 0 for separable clusters, "
                f"got {self.sigma_between} and {self.sigma_within}")
        if not 0.0 <= self.p_occ <= 1.0:
            raise ValueError(f"p_occ must be in [0, 1], got {self.p_occ}")
        if self.occlusion_mode not in OCCLUSION_MODES:
            raise ValueError(f"unknown occlusion_mode {self.occlusion_mode!r}, expected one of {OCCLUSION_MODES}")


@dataclass
class Dataset:
    clips: list[FrameSet]
    num_identities: int
    cameras: list[int]
    num_occluded: int = 0

    @property
    def dim(self) -> int:
        return self.clips[0].dim

    def identities(self) -> list[int]:
        return sorted({c.identity for c in self.clips})


def generate(cfg: GeneratorConfig) -> Dataset:
    """Sample a synthetic clip dataset, deterministic in cfg.seed."""
    rng = np.random.default_rng(cfg.seed)
    centers = rng.normal(0.0, cfg.sigma_between, size=(cfg.num_identities, cfg.input_dim))
    clips: list[FrameSet] = []
    cameras: list[int] = []
    occluded = 0
    clip_id = 0
    for ident in range(cfg.num_identities):
        for local in range(cfg.clips_per_identity):
            frames = centers[ident] + rng.normal(0.0, cfg.sigma_within, size=(cfg.frames_per_clip, cfg.input_dim))
            for row in range(cfg.frames_per_clip):
                if rng.random() >= cfg.p_occ:
                    continue
                occluded += 1
                if cfg.occlusion_mode == "swap_identity":
                    draw = int(rng.integers(cfg.num_identities - 1))
                    other = draw + (draw >= ident)
                    frames[row] = centers[other] + rng.normal(0.0, cfg.sigma_within, size=cfg.input_dim)
                else:
                    span = 3.0 * cfg.sigma_between
                    frames[row] = rng.uniform(-span, span, size=cfg.input_dim)
            clips.append(FrameSet(frames=frames, identity=ident, clip_id=clip_id))
            cameras.append(local % 2)
            clip_id += 1
    return Dataset(clips=clips, num_identities=cfg.num_identities, cameras=cameras, num_occluded=occluded)


def write_embeddings(clips: list[FrameSet], path: str | Path, dim: int | None = None) -> None:
    """Write frame embeddings in the line-oriented text format.

    Header ``# dim=<d>`` then rows ``clip_id,identity,frame_index,v0,...``.
    Values are serialized at 17 significant digits, which round-trips
    float64 exactly.
    """
    if dim is None:
        if not clips:
            raise ValueError("cannot infer dimension from an empty clip list")
        dim = clips[0].dim
    lines = [f"# dim={dim}"]
    for clip in clips:
        if clip.dim != dim:
            raise ValueError(f"clip {clip.clip_id} has dimension {clip.dim}, expected {dim}")
        for idx in range(clip.size):
            values = ",".join(f"{v:.17g}" for v in clip.frames[idx])
            lines.append(f"{clip.clip_id},{clip.identity},{idx},{values}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def save(dataset: Dataset, path: str | Path) -> None:
    write_embeddings(dataset.clips, path, dim=dataset.dim)


def _parse_row(line: str, lineno: int, dim: int) -> tuple[int, int, int, np.ndarray]:
    parts = line.split(",")
    if len(parts) != 3 + dim:
        raise ValueError(f"line {lineno}: expected {3 + dim} comma-separated fields, got {len(parts)}")
    try:
        clip_id, identity, frame_index = int(parts[0]), int(parts[1]), int(parts[2])
        values = np.array([float(p) for p in parts[3:]], dtype=np.float64)
    except ValueError as exc:
        raise ValueError(f"line {lineno}: non-numeric field ({exc})") from None
    if identity < 0:
        raise ValueError(f"line {lineno}: identity must be >= 0, got {identity}")
    if not np.isfinite(values).all():
        raise ValueError(f"line {lineno}: non-finite embedding value")
    return clip_id, identity, frame_index, values


def load_embeddings(path: str | Path) -> Dataset:
    """Load a dataset from the embedding text format.

    Clips are grouped by clip_id in order of first appearance; frames are
    ordered by frame_index. Pseudo-cameras are reassigned by alternating
    over each identity's clips in file order, matching the generator.
    """
    text = Path(path).read_text(encoding="utf-8")
    dim: int | None = None
    rows: dict[int, list[tuple[int, int, np.ndarray]]] = {}
    clip_identity: dict[int, int] = {}
    order: list[int] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            stripped = line[1:].strip()
            if stripped.startswith("dim="):
                if dim is not None:
                    raise ValueError(f"line {lineno}: duplicate dim header")
                try:
                    dim = int(stripped[4:])
                except ValueError:
                    raise ValueError(f"line {lineno}: malformed dim header {line!r}") from None
                if dim < 1:
                    raise ValueError(f"line {lineno}: dim must be >= 1, got {dim}")
            continue
        if dim is None:
            raise ValueError(f"line {lineno}: data row before '# dim=<d>' header")
        clip_id, identity, frame_index, values = _parse_row(line, lineno, dim)
        if clip_id not in rows:
            rows[clip_id] = []
            clip_identity[clip_id] = identity
            order.append(clip_id)
        elif clip_identity[clip_id] != identity:
            raise ValueError(f"line {lineno}: clip {clip_id} has conflicting identities "
                             f"{clip_identity[clip_id]} and {identity}")
        if any(fi == frame_index for fi, _, _ in rows[clip_id]):
            raise ValueError(f"line {lineno}: duplicate frame {frame_index} in clip {clip_id}")
        rows[clip_id].append((frame_index, lineno, values))
    if dim is None:
        raise ValueError("line 1: missing '# dim=<d>' header")
    if not rows:
        raise ValueError("line 1: file contains no embedding rows")

    clips = []
    for clip_id in order:
        entries = sorted(rows[clip_id], key=lambda e: e[0])
        frames = np.stack([v for _, _, v in entries])
        clips.append(FrameSet(frames=frames, identity=clip_identity[clip_id], clip_id=clip_id))

    by_identity: dict[int, int] = {}
    cameras = []
    for clip in clips:
        nth = by_identity.get(clip.identity, 0)
        cameras.append(nth % 2)
        by_identity[clip.identity] = nth + 1
    return Dataset(clips=clips, num_identities=len(by_identity), cameras=cameras)


def split_query_gallery(dataset: Dataset) -> tuple[list[FrameSet], list[FrameSet]]:
    """Camera-0 clips become queries, camera-1 clips the gallery."""
    query = [c for c, cam in zip(dataset.clips, dataset.cameras) if cam == 0]
    gallery = [c for c, cam in zip(dataset.clips, dataset.cameras) if cam == 1]
    query_ids = {c.identity for c in query}
    gallery_ids = {c.identity for c in gallery}
    missing = sorted(query_ids ^ gallery_ids)
    if missing:
        raise ValueError(f"identities missing from one pseudo-camera: {missing}")
    if not query or not gallery:
        raise ValueError("query/gallery split is empty; need clips in both pseudo-cameras")
    return query, gallery
