"""Command-line entry point.

Commands: gen-data, train, ablate, verify, dist, dump-embeddings. Every run
is deterministic given its config; metrics land in a single JSON document
whose only nondeterministic content lives under the "timing" key.

Exit status: 0 success, 1 usage or config error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import datetime
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, config as cfgmod, evaluation, mining, synthdata, trainer, verify
from .config import ConfigError
from .set_distance import FrameSet, METRICS, SET_DISTANCE_KINDS, set_distance as set_distance_of
from .trainer import TrainConfig

# Ablation suites. Labels mirror the reported tables: a plain baseline
# (cross entropy + clip triplets), set-aware rows per distance kind, the
# hard-positive-set row, and the loss-weight grid rows (i)-(vi).
BASELINE_OVERRIDES = {"loss.lambdas": (1.0, 0.5, 0.0, 0.0), "use_stri": False, "use_hpsc": False}

SUITES: dict[str, list[tuple[str, dict]]] = {
    "set_metric": [
        ("baseline", dict(BASELINE_OVERRIDES)),
        ("satl_ordinary", {"loss.lambdas": (1.0, 0.5, 0.0, 0.5), "set_kind": "ordinary",
                           "use_stri": True, "use_hpsc": False}),
        ("satl_hausdorff", {"loss.lambdas": (1.0, 0.5, 0.0, 0.5), "set_kind": "hausdorff",
                            "use_stri": True, "use_hpsc": False}),
        ("satl_hybrid", {"loss.lambdas": (1.0, 0.5, 0.0, 0.5), "set_kind": "hybrid",
                         "use_stri": True, "use_hpsc": False}),
    ],
    "hpsc": [
        ("baseline", dict(BASELINE_OVERRIDES)),
        ("hpsc", {"loss.lambdas": (1.0, 0.5, 0.5, 0.0), "use_stri": False, "use_hpsc": True}),
    ],
    "loss_weights": [
        ("i_ce_only", {"loss.lambdas": (1.0, 0.0, 0.0, 0.0), "use_stri": False, "use_hpsc": False}),
        ("ii_ce+ctri", {"loss.lambdas": (1.0, 0.5, 0.0, 0.0), "use_stri": False, "use_hpsc": False}),
        ("iii_ce+hpsc", {"loss.lambdas": (1.0, 0.0, 0.5, 0.0), "use_stri": False, "use_hpsc": True}),
        ("iv_ce+stri", {"loss.lambdas": (1.0, 0.0, 0.0, 0.5), "use_stri": True, "use_hpsc": False}),
        ("v_ce+ctri+hpsc", {"loss.lambdas": (1.0, 0.5, 0.5, 0.0), "use_stri": False, "use_hpsc": True}),
        ("vi_full", {"loss.lambdas": (1.0, 0.5, 0.5, 0.5), "use_stri": True, "use_hpsc": True}),
    ],
}


def _split_overrides(extras: list[str]) -> list[tuple[str, str]]:
    """Parse trailing ``--section.key value`` / ``--section.key=value`` flags."""
    overrides = []
    i = 0
    while i < len(extras):
        token = extras[i]
        if not token.startswith("--") or "." not in token:
            raise ConfigError(f"unrecognized argument {token!r} (config overrides look like --train.epochs 5)")
        body = token[2:]
        if "=" in body:
            key, value = body.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extras):
                raise ConfigError(f"flag {token!r} is missing a value")
            key, value = body, extras[i + 1]
            i += 2
        overrides.append((key, value))
    return overrides


def _resolve(args, extras) -> dict:
    return cfgmod.load_run_config(args.config, _split_overrides(extras))


def _load_dataset(resolved: dict) -> synthdata.Dataset:
    path = resolved["data"]["path"]
    if path is not None:
        return synthdata.load_embeddings(path)
    return synthdata.generate(cfgmod.generator_config(resolved))


def _write_json(path: str | Path, doc: dict) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _metrics_document(resolved: dict, seed: int) -> dict:
    return {
        "library_version": __version__,
        "seed": seed,
        "config": resolved,
        "timing": {"created": datetime.datetime.now(datetime.timezone.utc).isoformat()},
    }


def cmd_gen_data(args, extras) -> int:
    resolved = _resolve(args, extras)
    dataset = synthdata.generate(cfgmod.generator_config(resolved))
    out = args.out or "dataset.txt"
    synthdata.save(dataset, out)
    print(f"wrote {len(dataset.clips)} clips ({dataset.num_identities} identities, "
          f"{dataset.num_occluded} occluded frames) to {out}")
    return 0


def cmd_train(args, extras) -> int:
    resolved = _resolve(args, extras)
    dataset = _load_dataset(resolved)
    cfg = cfgmod.train_config(resolved)
    start = time.perf_counter()
    params, head, log = trainer.train(dataset, cfg)
    result = evaluation.evaluate(params, dataset, metric=cfg.metric,
                                 k_max=resolved["evaluation"]["k_max"])
    doc = _metrics_document(resolved, cfg.seed)
    doc["train_log"] = log.as_dict()
    doc["final_retrieval"] = result.as_dict()
    doc["timing"]["wall_seconds_per_epoch"] = log.wall_seconds
    doc["timing"]["total_seconds"] = time.perf_counter() - start
    out = args.out or resolved["output"]["metrics_path"]
    _write_json(out, doc)
    if resolved["output"]["curves_csv"]:
        _write_curves_csv(resolved["output"]["curves_csv"], log)
    if resolved["output"]["embeddings_path"]:
        evaluation.dump_embeddings(params, dataset, resolved["output"]["embeddings_path"])
    print(f"trained {cfg.epochs} epochs; final mAP {result.map:.4f}, R-1 {result.rank1:.4f}; metrics at {out}")
    return 0


def _write_curves_csv(path: str, log: trainer.TrainLog) -> None:
    lines = ["epoch,learning_rate,total,ce,ctri_hm,ctri_hpsc,stri_hm"]
    for entry in log.epochs:
        loss = entry["loss"]
        terms = loss["terms"]
        lines.append(f'{entry["epoch"]},{entry["learning_rate"]:.17g},{loss["total"]:.17g},'
                     f'{terms["ce"]:.17g},{terms["ctri_hm"]:.17g},'
                     f'{terms["ctri_hpsc"]:.17g},{terms["stri_hm"]:.17g}')
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_ablate(args, extras) -> int:
    resolved = _resolve(args, extras)
    if args.suite not in SUITES:
        raise ConfigError(f"unknown suite {args.suite!r}, expected one of {sorted(SUITES)}")
    dataset = _load_dataset(resolved)
    base_cfg = cfgmod.train_config(resolved)
    seeds = [int(s) for s in resolved["evaluation"]["seeds"]]
    start = time.perf_counter()
    rows = evaluation.run_ablation(dataset, base_cfg, SUITES[args.suite], seeds, jobs=args.jobs)
    doc = _metrics_document(resolved, base_cfg.seed)
    doc["suite"] = args.suite
    doc["ablation"] = [row.as_dict() for row in rows]
    doc["timing"]["total_seconds"] = time.perf_counter() - start
    out = args.out or resolved["output"]["metrics_path"]
    _write_json(out, doc)
    width = max(len(row.label) for row in rows)
    print(f"suite {args.suite}: {len(rows)} rows x {len(seeds)} seeds")
    for row in rows:
        print(f"  {row.label:<{width}}  mAP {row.mean_map:.4f} +- {row.std_map:.4f}"
              f"  R-1 {row.mean_rank1:.4f} +- {row.std_rank1:.4f}")
    print(f"tables written to {out}")
    return 0


def cmd_verify(args, extras) -> int:
    if extras:
        raise ConfigError(f"unrecognized arguments: {extras}")
    rows = verify.run_checks(corruption=args.corrupt)
    width = max(len(name) for name, _, _ in rows)
    failures = 0
    for name, ok, detail in rows:
        status = "PASS" if ok else "FAIL"
        print(f"{name:<{width}}  {status}" + ("" if ok else f"  {detail}"))
        failures += not ok
    print(f"{len(rows) - failures}/{len(rows)} checks passed")
    return 0 if failures == 0 else 2


def _load_frame_union(path: str) -> FrameSet:
    dataset = synthdata.load_embeddings(path)
    frames = np.concatenate([c.frames for c in dataset.clips])
    return FrameSet(frames=frames)


def cmd_dist(args, extras) -> int:
    if extras:
        raise ConfigError(f"unrecognized arguments: {extras}")
    a = _load_frame_union(args.set_a)
    b = _load_frame_union(args.set_b)
    value = set_distance_of(a, b, args.kind, args.metric)
    print(f"{value:.17g}")
    return 0


def cmd_dump_embeddings(args, extras) -> int:
    resolved = _resolve(args, extras)
    dataset = _load_dataset(resolved)
    cfg = cfgmod.train_config(resolved)
    params, _, _ = trainer.train(dataset, cfg)
    out = args.out or resolved["output"]["embeddings_path"] or "embeddings.txt"
    evaluation.dump_embeddings(params, dataset, out)
    print(f"wrote encoded frame embeddings to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="setmetric",
        description="Set-distance triplet training and evaluation at desk scale")
    parser.add_argument("--version", action="version", version=f"setmetric {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.set_defaults(fn=fn)
        return p

    p = add("gen-data", cmd_gen_data, help="generate a synthetic dataset file")
    p.add_argument("--config", default=None, help="JSON run config")
    p.add_argument("--out", default=None, help="output dataset path")

    p = add("train", cmd_train, help="train and evaluate one model")
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=None, help="metrics JSON path (overrides config)")

    p = add("ablate", cmd_ablate, help="run an ablation suite")
    p.add_argument("--config", default=None)
    p.add_argument("--suite", required=True, choices=sorted(SUITES))
    p.add_argument("--jobs", type=int, default=1, help="parallel (row, seed) cells")
    p.add_argument("--out", default=None)

    p = add("verify", cmd_verify, help="run the library self-check suite")
    p.add_argument("--corrupt", default=None, choices=verify.CORRUPTIONS,
                   help="mutation-test the checks by breaking one primitive")

    p = add("dist", cmd_dist, help="set distance between two embedding files")
    p.add_argument("set_a")
    p.add_argument("set_b")
    p.add_argument("--kind", default="ordinary", choices=SET_DISTANCE_KINDS)
    p.add_argument("--metric", default="euclidean", choices=METRICS)

    p = add("dump-embeddings", cmd_dump_embeddings,
            help="train per config, then dump encoded frame embeddings")
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=None)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args, extras = parser.parse_known_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.fn(args, extras)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
