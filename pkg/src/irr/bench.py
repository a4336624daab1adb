"""Efficiency harness: training throughput, inference latency, memory estimates.

Compares the compact paradigm (one token per item, one backbone pass per
decode) against the flattened baseline (L tokens per item, one backbone
pass per level) on a fixed synthetic workload. Position counts and
invocation counters are asserted exactly; the attention-score memory is
reported analytically (positions^2 x heads x layers x value width) rather
than measured.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field

import numpy as np

from .decoder import baseline_decode, decode_compact
from .errors import ConfigError, DataError
from .indexer import SidTable, build_prefix_trie
from .model import CompactModel, FlattenedModel
from .trainer import AdamOptimizer, TrainConfig, train_step_compact, train_step_flattened

VALUE_WIDTH_BYTES = 8  # float64 activations


@dataclass
class BenchReport:
    rows: list[dict] = field(default_factory=list)

    def add(self, metric, value, *, mode=None, setting=None, w=None, k=None):
        self.rows.append({"metric": metric, "k": k, "value": value,
                          "setting": setting, "mode": mode, "W": w})

    def value(self, metric, **match) -> float:
        for row in self.rows:
            if row["metric"] == metric and all(row.get(key) == val for key, val in match.items()):
                return row["value"]
        raise KeyError(f"no row for {metric} {match}")


def synthetic_codes(n_items: int, levels: int, k: int) -> np.ndarray:
    """Deterministic unique code tuples for benchmark catalogs."""
    if n_items > k ** levels:
        raise ConfigError(f"{n_items} items exceed the {k}^{levels} code space")
    gen = itertools.product(range(k), repeat=levels)
    return np.array(list(itertools.islice(gen, n_items)), dtype=np.int64)


def bench_table(n_items: int, levels: int, k: int) -> SidTable:
    codes = synthetic_codes(n_items, levels, k)
    return SidTable({f"item{i:05d}": tuple(row) for i, row in enumerate(codes)},
                    L=levels, K=k)


def attn_score_bytes(positions: int, heads: int, layers: int) -> int:
    return positions * positions * heads * layers * VALUE_WIDTH_BYTES


def bench_training(*, n_items: int = 200, levels: int = 4, k: int = 16, d: int = 32,
                   layers: int = 2, heads: int = 2, max_hist: int = 30,
                   batch_size: int = 16, timed_batches: int = 30, warmup: int = 3,
                   seed: int = 0, modes=("compact", "flattened")) -> BenchReport:
    """Samples-per-second of one full training step, per paradigm.

    Every workload sequence holds max_hist+1 items so the compact mode
    always sees exactly N positions and the flattened mode exactly N*L.
    """
    codes = synthetic_codes(n_items, levels, k)
    rng = np.random.default_rng(seed)
    total = warmup + timed_batches
    batches = [
        [rng.integers(0, n_items, size=max_hist + 1) for _ in range(batch_size)]
        for _ in range(total)
    ]
    report = BenchReport()
    for mode in modes:
        cfg = TrainConfig(batch_size=batch_size, max_hist=max_hist, seed=seed)
        if mode == "compact":
            model = CompactModel(codes, k, d, layers, heads, max_hist, seed)
            step = train_step_compact
            expected_positions = max_hist
        else:
            model = FlattenedModel(codes, k, d, layers, heads, max_hist, seed)
            step = train_step_flattened
            expected_positions = max_hist * levels
        optimizer = AdamOptimizer(model.parameters(), cfg.lr, cfg.weight_decay)
        for batch in batches[:warmup]:
            step(model, batch, cfg, optimizer)
        start = time.perf_counter()
        for batch in batches[warmup:]:
            step(model, batch, cfg, optimizer)
            if model.backbone.last_shape[1] != expected_positions:
                raise DataError(f"{mode} batch used {model.backbone.last_shape[1]} "
                                f"positions, expected {expected_positions}")
        elapsed = time.perf_counter() - start
        sps = batch_size * timed_batches / elapsed
        report.add("sps", sps, mode=mode, setting="SAC")
        report.add("positions", expected_positions, mode=mode, setting="SAC")
        report.add("attn_score_bytes", attn_score_bytes(expected_positions, heads, layers),
                   mode=mode, setting="SAC")
    if set(modes) >= {"compact", "flattened"}:
        ratio = (report.value("attn_score_bytes", mode="flattened")
                 / report.value("attn_score_bytes", mode="compact"))
        report.add("attn_memory_ratio", ratio, mode="both", setting="SAC")
        report.add("sps_ratio", report.value("sps", mode="compact") / report.value("sps", mode="flattened"),
                   mode="both", setting="SAC")
    return report


def bench_inference(*, n_items: int = 200, levels: int = 4, k: int = 16, d: int = 32,
                    layers: int = 2, heads: int = 2, max_hist: int = 32,
                    widths=(10, 20, 50), users: int = 16, seed: int = 0,
                    settings=("SAC", "SSL"), constrained: bool = False,
                    reps: int = 3) -> BenchReport:
    """Wall-clock per user batch across beam widths, plus invocation counts.

    SAC gives both paradigms max_hist items of history; SSL trims the
    baseline to max_hist/levels items for an equal backbone token budget.
    The compact model is setting-independent and reported once per width.
    Each timing section runs `reps` times and reports the minimum, which
    suppresses scheduler noise on the millisecond-scale compact decodes.
    """
    table = bench_table(n_items, levels, k)
    trie = build_prefix_trie(table)
    codes = table.code_matrix(list(table.codes))
    compact = CompactModel(codes, k, d, layers, heads, max_hist, seed)
    flattened = FlattenedModel(codes, k, d, layers, heads, max_hist, seed)
    rng = np.random.default_rng(seed)
    histories = [rng.integers(0, n_items, size=max_hist) for _ in range(users)]
    ssl_hist = max(1, max_hist // levels)
    emb = compact.items.synthesize_np(np.arange(n_items))

    # one unmeasured decode per paradigm so allocation warmup stays out of
    # the first width's timing
    decode_compact(compact, histories[0], min(widths), trie, constrained,
                   item_embeddings=emb)
    baseline_decode(flattened, histories[0], min(widths), trie, constrained)

    report = BenchReport()
    for width in widths:
        best = None
        for _ in range(reps):
            before = compact.backbone.invocations
            start = time.perf_counter()
            for hist in histories:
                decode_compact(compact, hist, width, trie, constrained, item_embeddings=emb)
            elapsed = (time.perf_counter() - start) * 1000.0
            calls = compact.backbone.invocations - before
            if calls != users:
                raise DataError(f"compact decode used {calls} backbone passes for {users} users")
            best = elapsed if best is None else min(best, elapsed)
        report.add("latency_ms", best, mode="compact", setting="SAC/SSL", w=width)
        report.add("invocations_per_user", calls / users, mode="compact", setting="SAC/SSL", w=width)

        for setting in settings:
            hist_len = max_hist if setting == "SAC" else ssl_hist
            best = None
            for _ in range(reps):
                before = flattened.backbone.invocations
                start = time.perf_counter()
                for hist in histories:
                    baseline_decode(flattened, hist[-hist_len:], width, trie, constrained)
                elapsed = (time.perf_counter() - start) * 1000.0
                calls = flattened.backbone.invocations - before
                if calls != users * levels:
                    raise DataError(f"baseline decode used {calls} backbone passes "
                                    f"for {users} users at L={levels}")
                best = elapsed if best is None else min(best, elapsed)
            report.add("latency_ms", best, mode="flattened", setting=setting, w=width)
            report.add("invocations_per_user", calls / users, mode="flattened",
                       setting=setting, w=width)
    return report
