"""Retrieval scoring (CMC and mAP) and the multi-seed ablation harness."""

from __future__ import annotations

import copy
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import set_distance as sd, synthdata, trainer
from .synthdata import Dataset
from .trainer import EncoderParams, TrainConfig


@dataclass
class RetrievalResult:
    """CMC curve (rank-1..rank-K) and mean average precision."""

    cmc: np.ndarray
    map: float
    num_queries: int
    num_gallery: int

    @property
    def rank1(self) -> float:
        return float(self.cmc[0])

    def as_dict(self) -> dict:
        return {"cmc": [float(v) for v in self.cmc], "map": self.map,
                "rank1": self.rank1, "num_queries": self.num_queries,
                "num_gallery": self.num_gallery}


def _clip_features(params: EncoderParams, clips) -> np.ndarray:
    flat = np.concatenate([c.frames for c in clips])
    encoded = trainer.encode_frames(params, flat)
    feats = []
    offset = 0
    for c in clips:
        feats.append(sd.aggregate_rows(encoded[offset:offset + c.size]))
        offset += c.size
    return np.stack(feats)


def evaluate(params: EncoderParams, dataset: Dataset, metric: str = "euclidean",
             k_max: int = 20) -> RetrievalResult:
    """Cross-camera retrieval: encode, aggregate, rank, score CMC and mAP.

    Gallery items are ranked by ascending clip-feature distance; ties break
    toward the lower gallery index (stable sort).
    """
    query, gallery = synthdata.split_query_gallery(dataset)
    q_feats = _clip_features(params, query)
    g_feats = _clip_features(params, gallery)
    q_ids = np.array([c.identity for c in query])
    g_ids = np.array([c.identity for c in gallery])
    dists = sd._pairwise_kernel(q_feats, g_feats, metric)

    k_max = min(k_max, len(gallery))
    cmc = np.zeros(k_max)
    aps = []
    for qi in range(len(query)):
        order = np.argsort(dists[qi], kind="stable")
        relevant = (g_ids[order] == q_ids[qi])
        first = int(np.argmax(relevant))  # split guarantees >= 1 match
        if first < k_max:
            cmc[first:] += 1.0
        hits = np.flatnonzero(relevant)
        precisions = (np.arange(len(hits)) + 1.0) / (hits + 1.0)
        aps.append(precisions.sum() / len(hits))
    return RetrievalResult(cmc=cmc / len(query), map=float(np.mean(aps)),
                           num_queries=len(query), num_gallery=len(gallery))


def apply_overrides(cfg: TrainConfig, overrides: dict) -> TrainConfig:
    """Deep-copy cfg and set dotted attribute paths, e.g. 'loss.lambdas'."""
    cfg = copy.deepcopy(cfg)
    for path, value in overrides.items():
        target = cfg
        *head, leaf = path.split(".")
        for part in head:
            target = getattr(target, part)
        if not hasattr(target, leaf):
            raise AttributeError(f"unknown config override path {path!r}")
        setattr(target, leaf, value)
    # re-run dataclass validation
    cfg.loss.__post_init__()
    cfg.batch.__post_init__()
    cfg.__post_init__()
    return cfg


@dataclass
class AblationRow:
    label: str
    seeds: list[int]
    results: list[RetrievalResult]
    mean_map: float = 0.0
    std_map: float = 0.0
    mean_rank1: float = 0.0
    std_rank1: float = 0.0

    def __post_init__(self):
        maps = np.array([r.map for r in self.results])
        r1s = np.array([r.rank1 for r in self.results])
        self.mean_map = float(maps.mean())
        self.std_map = float(maps.std())
        self.mean_rank1 = float(r1s.mean())
        self.std_rank1 = float(r1s.std())

    def as_dict(self) -> dict:
        return {"label": self.label, "seeds": list(self.seeds),
                "per_seed": [r.as_dict() for r in self.results],
                "mean_map": self.mean_map, "std_map": self.std_map,
                "mean_rank1": self.mean_rank1, "std_rank1": self.std_rank1}


def _train_and_evaluate(args) -> RetrievalResult:
    dataset, cfg = args
    params, _, _ = trainer.train(dataset, cfg)
    return evaluate(params, dataset, metric=cfg.metric)


def run_ablation(dataset: Dataset, base_cfg: TrainConfig, rows: list[tuple[str, dict]],
                 seeds: list[int], jobs: int = 1) -> list[AblationRow]:
    """Train and evaluate one model per (row, seed) cell.

    Rows are (label, overrides) pairs; each cell gets base_cfg with the
    row's overrides plus its seed. Cells are independent, so they may run
    in parallel; results aggregate in declared order either way.
    """
    cells = []
    for label, overrides in rows:
        for seed in seeds:
            cfg = apply_overrides(base_cfg, dict(overrides))
            cfg.seed = int(seed)
            cells.append((dataset, cfg))
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_train_and_evaluate, cells))
    else:
        results = [_train_and_evaluate(cell) for cell in cells]
    out = []
    for i, (label, _) in enumerate(rows):
        chunk = results[i * len(seeds):(i + 1) * len(seeds)]
        out.append(AblationRow(label=label, seeds=list(seeds), results=chunk))
    return out


def dump_embeddings(params: EncoderParams, dataset: Dataset, path) -> None:
    """Write encoded frame-level embeddings in the embedding text format."""
    if not dataset.clips:
        synthdata.write_embeddings([], path, dim=params.embedding_dim)
        return
    from .set_distance import FrameSet

    encoded = [FrameSet(frames=trainer.encode_frames(params, c.frames),
                        identity=c.identity, clip_id=c.clip_id)
               for c in dataset.clips]
    synthdata.write_embeddings(encoded, path, dim=params.embedding_dim)
