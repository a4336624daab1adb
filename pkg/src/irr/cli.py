"""Command-line surface: index, train, evaluate, bench, inspect.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime
error. Every failure prints a single-line diagnostic to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from . import data as data_mod
from . import indexer as indexer_mod
from . import trainer as trainer_mod
from .config import RunConfig, parse_config
from .errors import ConfigError, DataError, IrrError
from .evaluation import evaluate
from .model import CompactModel
from .reporting import write_report


def _require(value: str, key: str) -> str:
    if not value:
        raise ConfigError(f"paths.{key} is required for this command")
    return value


def _load_dataset(cfg: RunConfig):
    table = indexer_mod.load_sid_table(_require(cfg.paths.sid_table, "sid_table"))
    log = data_mod.ingest(_require(cfg.paths.interactions, "interactions"))
    log = data_mod.five_core_filter(log)
    split = data_mod.leave_one_out_split(log)
    return data_mod.Dataset(split, table), table


def _build_model(cfg: RunConfig, code_matrix) -> CompactModel:
    return CompactModel(code_matrix, cfg.model.K, cfg.model.d, cfg.model.layers,
                        cfg.model.heads, cfg.model.N, cfg.trainer.seed,
                        context=cfg.model.context, shared_ran=cfg.trainer.shared_ran)


def _train_config(cfg: RunConfig) -> trainer_mod.TrainConfig:
    t = cfg.trainer
    return trainer_mod.TrainConfig(
        lr=t.lr, weight_decay=t.weight_decay, batch_size=t.batch_size,
        epochs=t.epochs, lambda_=t.lambda_, max_hist=cfg.model.N, seed=t.seed,
        grad_clip=t.grad_clip, user_side_tf=t.user_side_tf, use_aln=t.use_aln,
        redistribution=t.redistribution, shared_ran=t.shared_ran)


def _restore(cfg: RunConfig):
    """Rebuild the trained model from the checkpoint plus the SID table."""
    checkpoint = trainer_mod.load_checkpoint(_require(cfg.paths.checkpoint, "checkpoint"))
    stored = RunConfig.from_dict(checkpoint.config)
    table = indexer_mod.load_sid_table(_require(cfg.paths.sid_table, "sid_table"))
    codes = table.code_matrix(list(table.codes))
    model = _build_model(stored, codes)
    trainer_mod.restore_model(model, checkpoint)
    return model, table, stored


def command_index(cfg: RunConfig, args) -> int:
    embeddings = indexer_mod.load_embeddings(_require(cfg.paths.embeddings, "embeddings"))
    table, _ = indexer_mod.build_sid_table(
        embeddings, cfg.indexer.L, cfg.indexer.K, cfg.indexer.seed,
        max_iters=cfg.indexer.max_iters, restarts=cfg.indexer.restarts,
        dedup_last_level=cfg.indexer.dedup)
    out = _require(cfg.paths.sid_table, "sid_table")
    indexer_mod.save_sid_table(table, out)
    print(f"indexed {len(table)} items -> {out}")
    return 0


def command_train(cfg: RunConfig, args) -> int:
    dataset, _ = _load_dataset(cfg)
    model = _build_model(cfg, dataset.code_matrix)
    tcfg = _train_config(cfg)
    optimizer, history, shuffle_rng = trainer_mod.train(
        model, dataset.train_sequences, tcfg,
        epoch_callback=lambda e, m: print(
            f"epoch {e}: rec={m['rec']:.4f} aln={m['aln']:.4f} total={m['total']:.4f}",
            file=sys.stderr))
    out = _require(cfg.paths.checkpoint, "checkpoint")
    trainer_mod.save_checkpoint(out, model, optimizer, cfg.to_dict(),
                                shuffle_rng.bit_generator.state)
    log_path = Path(out + ".losses.jsonl")
    log_path.write_text("".join(json.dumps(m, sort_keys=True) + "\n" for m in history),
                        encoding="utf-8")
    print(f"trained {len(history)} epochs -> {out}")
    return 0


def command_evaluate(cfg: RunConfig, args) -> int:
    model, table, _ = _restore(cfg)
    dataset, _ = _load_dataset(cfg)
    trie = indexer_mod.build_prefix_trie(table)
    report = evaluate(model, dataset, trie, ks=(5, 10),
                      width=2 * 10, constrained=cfg.decoder.constrained)
    report.config_digest = cfg.digest()
    out_dir = Path(_require(cfg.paths.report_dir, "report_dir"))
    out_dir.mkdir(parents=True, exist_ok=True)
    path = write_report(out_dir / "eval_report", report.rows(), cfg.digest())
    for k in sorted(report.recall):
        print(f"recall@{k}={report.recall[k]:.4f} ndcg@{k}={report.ndcg[k]:.4f}")
    print(f"report -> {path}")
    return 0


def command_bench(cfg: RunConfig, args) -> int:
    out_dir = Path(_require(cfg.paths.report_dir, "report_dir"))
    out_dir.mkdir(parents=True, exist_ok=True)
    b = cfg.bench
    training = bench_mod.bench_training(
        n_items=b.items, levels=cfg.model.L, k=cfg.model.K, d=cfg.model.d,
        layers=cfg.model.layers, heads=cfg.model.heads, max_hist=cfg.model.N,
        batch_size=b.batch_size, timed_batches=b.batches, warmup=b.warmup,
        seed=cfg.trainer.seed)
    inference = bench_mod.bench_inference(
        n_items=b.items, levels=cfg.model.L, k=cfg.model.K, d=cfg.model.d,
        layers=cfg.model.layers, heads=cfg.model.heads, max_hist=cfg.model.N,
        widths=cfg.decoder.widths, users=b.users, seed=cfg.trainer.seed,
        constrained=False)
    write_report(out_dir / "bench_training", training.rows, cfg.digest())
    write_report(out_dir / "bench_inference", inference.rows, cfg.digest())
    sps_c = training.value("sps", mode="compact")
    sps_f = training.value("sps", mode="flattened")
    print(f"training sps: compact={sps_c:.1f} flattened={sps_f:.1f} ({sps_c / sps_f:.2f}x)")
    for w in cfg.decoder.widths:
        lat_c = inference.value("latency_ms", mode="compact", W=w)
        lat_f = inference.value("latency_ms", mode="flattened", setting="SAC", W=w)
        print(f"W={w}: compact={lat_c:.1f}ms baseline(SAC)={lat_f:.1f}ms ({lat_f / lat_c:.2f}x)")
    print(f"reports -> {out_dir}")
    return 0


def command_inspect(cfg: RunConfig, args) -> int:
    model, table, _ = _restore(cfg)
    ids = list(table.codes)
    index = {item: i for i, item in enumerate(ids)}
    if args.items:
        chosen = [item.strip() for item in args.items.split(",") if item.strip()]
        unknown = [i for i in chosen if i not in index]
        if unknown:
            raise DataError(f"unknown items: {', '.join(unknown)}")
    else:
        chosen = _default_inspect_pair(table)
    rows = [index[i] for i in chosen]
    per_level = model.items.distributions_np(rows)
    glyphs = " .:-=+*#%@"
    for pos, item in enumerate(chosen):
        print(f"item {item}  sid={','.join(map(str, table.codes[item]))}")
        for level, probs in enumerate(per_level, start=1):
            row = probs[pos]
            heat = "".join(glyphs[min(int(v * (len(glyphs) - 1) / max(row.max(), 1e-12)), 9)]
                           for v in row)
            top = np.argsort(-row)[:3]
            detail = " ".join(f"{c}:{row[c]:.3f}" for c in top)
            print(f"  level {level} |{heat}| top {detail}")
    return 0


def _default_inspect_pair(table) -> list[str]:
    groups: dict[tuple, list[str]] = {}
    for item, code in table.codes.items():
        groups.setdefault(code[:-1], []).append(item)
    for prefix_items in groups.values():
        if len(prefix_items) >= 2:
            return prefix_items[:2]
    return list(table.codes)[:2]


COMMANDS = {
    "index": command_index,
    "train": command_train,
    "evaluate": command_evaluate,
    "bench": command_bench,
    "inspect": command_inspect,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="irr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--set", action="append", default=[], dest="overrides",
                       metavar="key=value", help="override a config key")
        if name == "inspect":
            p.add_argument("--items", help="comma-separated item ids to inspect")
    args = parser.parse_args(argv)
    try:
        cfg = parse_config(args.config, args.overrides)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (IrrError, OSError, IndexError, LookupError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
