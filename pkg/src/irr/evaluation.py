"""Leave-one-out evaluation: Recall@K and NDCG@K over constrained decoding."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .decoder import RankedList, decode_compact
from .indexer import PrefixTrie
from .model import CompactModel


def recall_at_k(ranked: RankedList, target: str, k: int) -> float:
    """1 iff the target item appears in the top k."""
    return 1.0 if target in ranked.items()[:k] else 0.0


def ndcg_at_k(ranked: RankedList, target: str, k: int) -> float:
    """Single-relevant-item NDCG: 1/log2(rank+1) when ranked within k, else 0."""
    items = ranked.items()[:k]
    if target not in items:
        return 0.0
    rank = items.index(target) + 1
    return 1.0 / math.log2(rank + 1)


@dataclass
class EvalReport:
    recall: dict[int, float]
    ndcg: dict[int, float]
    users: int
    mode: str = "compact"
    setting: str = "SAC"
    width: int = 0
    config_digest: str = ""

    def rows(self) -> list[dict]:
        out = []
        for k in sorted(self.recall):
            out.append({"metric": "recall", "k": k, "value": self.recall[k],
                        "setting": self.setting, "mode": self.mode, "W": self.width})
        for k in sorted(self.ndcg):
            out.append({"metric": "ndcg", "k": k, "value": self.ndcg[k],
                        "setting": self.setting, "mode": self.mode, "W": self.width})
        out.append({"metric": "users", "k": None, "value": self.users,
                    "setting": self.setting, "mode": self.mode, "W": self.width})
        return out


def evaluate(model: CompactModel, dataset: Dataset, trie: PrefixTrie,
             ks: tuple[int, ...] = (5, 10), width: int | None = None,
             constrained: bool = True, which: str = "test") -> EvalReport:
    """Decode every eval user's held-out item and average the rank metrics.

    The ranking cutoff defaults to twice the largest k so enough candidates
    survive item resolution.
    """
    if width is None:
        width = 2 * max(ks)
    # item embeddings depend only on the item, so synthesize the catalog once
    emb = model.items.synthesize_np(np.arange(dataset.num_items))
    recall = {k: 0.0 for k in ks}
    ndcg = {k: 0.0 for k in ks}
    users = 0
    for _, history, target in dataset.eval_pairs(which):
        ranked = decode_compact(model, history, width, trie, constrained, item_embeddings=emb)
        target_id = dataset.item_ids[target]
        users += 1
        for k in ks:
            recall[k] += recall_at_k(ranked, target_id, k)
            ndcg[k] += ndcg_at_k(ranked, target_id, k)
    if users == 0:
        return EvalReport({k: 0.0 for k in ks}, {k: 0.0 for k in ks}, 0, width=width)
    return EvalReport({k: v / users for k, v in recall.items()},
                      {k: v / users for k, v in ndcg.items()}, users, width=width)
