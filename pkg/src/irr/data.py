"""Interaction logs, leave-one-out splits, and the synthetic benchmark data.

The synthetic generator draws user sequences from a seeded order-k rule
over items inside content communities, and emits Gaussian-blob embeddings
whose hierarchical sub-structure lines up with those communities, so both
the indexing stage and the next-item task have recoverable structure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, ParseError
from .indexer import ContentEmbeddings, SidTable


@dataclass
class InteractionLog:
    """(user, item, timestamp) records in input order."""

    records: list[tuple[str, str, int]]

    def sequences(self) -> dict[str, list[str]]:
        """Per-user item sequences ordered by (timestamp, input order)."""
        per_user: dict[str, list[tuple[int, int, str]]] = {}
        for pos, (user, item, ts) in enumerate(self.records):
            per_user.setdefault(user, []).append((ts, pos, item))
        return {user: [item for _, _, item in sorted(entries)]
                for user, entries in per_user.items()}

    def __len__(self):
        return len(self.records)


def ingest(path) -> InteractionLog:
    """Parse a user<TAB>item<TAB>timestamp TSV; '#' lines are comments."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(f"expected 3 tab-separated fields, got {len(parts)}", line=lineno)
            user, item, ts_text = parts
            try:
                ts = int(ts_text)
            except ValueError:
                raise ParseError(f"non-integer timestamp {ts_text!r}", line=lineno) from None
            records.append((user, item, ts))
    return InteractionLog(records)


def save_interactions(log: InteractionLog, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# user_id\titem_id\ttimestamp\n")
        for user, item, ts in log.records:
            fh.write(f"{user}\t{item}\t{ts}\n")


def five_core_filter(log: InteractionLog) -> InteractionLog:
    """Drop users and items with fewer than 5 interactions, to fixpoint."""
    records = log.records
    while True:
        users: dict[str, int] = {}
        items: dict[str, int] = {}
        for user, item, _ in records:
            users[user] = users.get(user, 0) + 1
            items[item] = items.get(item, 0) + 1
        bad_users = {u for u, c in users.items() if c < 5}
        bad_items = {i for i, c in items.items() if c < 5}
        if not bad_users and not bad_items:
            break
        records = [r for r in records if r[0] not in bad_users and r[1] not in bad_items]
    if not records:
        raise DataError("5-core filter removed every record")
    return InteractionLog(records)


@dataclass
class Split:
    """Full per-user sequences plus the leave-one-out boundaries."""

    sequences: dict[str, list[str]]

    @property
    def users(self) -> list[str]:
        return list(self.sequences)

    def is_eval_user(self, user: str) -> bool:
        return len(self.sequences[user]) >= 3

    def train_items(self, user: str) -> list[str]:
        seq = self.sequences[user]
        return seq[:-2] if len(seq) >= 3 else list(seq)

    def val_item(self, user: str) -> str | None:
        seq = self.sequences[user]
        return seq[-2] if len(seq) >= 3 else None

    def test_item(self, user: str) -> str | None:
        seq = self.sequences[user]
        return seq[-1] if len(seq) >= 3 else None


def leave_one_out_split(log: InteractionLog) -> Split:
    """Most recent interaction held out for test, second-to-last for validation."""
    return Split(log.sequences())


class Dataset:
    """A split bound to a SID table: internal dense indices, code matrix."""

    def __init__(self, split: Split, table: SidTable):
        self.split = split
        self.item_ids = list(table.codes)
        self.item_index = {item: i for i, item in enumerate(self.item_ids)}
        missing = {i for seq in split.sequences.values() for i in seq} - set(self.item_index)
        if missing:
            raise DataError(f"{len(missing)} items lack SIDs, e.g. {sorted(missing)[:3]}")
        self.code_matrix = table.code_matrix(self.item_ids)
        self.users = split.users
        self.full_sequences = [
            np.array([self.item_index[i] for i in split.sequences[u]], dtype=np.intp)
            for u in self.users
        ]
        self.train_sequences = [
            np.array([self.item_index[i] for i in split.train_items(u)], dtype=np.intp)
            for u in self.users
        ]
        self.eval_users = [u for u in self.users if split.is_eval_user(u)]

    @property
    def num_items(self) -> int:
        return len(self.item_ids)

    def eval_pairs(self, which: str = "test"):
        """(history, target) internal-index pairs for held-out evaluation."""
        if which not in ("test", "val"):
            raise DataError(f"unknown eval split {which!r}")
        cut = 1 if which == "test" else 2
        for u, full in zip(self.users, self.full_sequences):
            if len(full) < 3:
                continue
            yield u, full[:-cut], int(full[-cut])


def make_synthetic_dataset(users: int, items: int, rule_order: int, seed: int,
                           clusters: int = 4, code_fan: int = 8,
                           min_len: int = 6, max_len: int = 12,
                           content_dim: int = 16, noise: float = 0.25,
                           ) -> tuple[InteractionLog, ContentEmbeddings]:
    """Seeded interaction log plus clusterable content embeddings.

    Items are dealt round-robin into `clusters` communities; next-item
    transitions follow a deterministic order-`rule_order` rule that stays
    inside the community, so the target is a fixed function of the last
    `rule_order` items. Content vectors stack three scales of structure
    (community blob, split-in-two, code_fan-way sub-blob) and the two fine
    scales are balanced so a downstream quantizer with K = code_fan has a
    collision-free assignment available.
    """
    if rule_order < 1:
        raise DataError("rule_order must be >= 1")
    if clusters > items:
        raise DataError("more clusters than items")
    need = clusters + 2 * clusters + (code_fan + 1) // 2
    if content_dim < need:
        raise DataError(f"content_dim must be >= {need} for {clusters} clusters "
                        f"and code_fan {code_fan}")
    rng = np.random.default_rng(seed)
    item_ids = [f"item{idx:05d}" for idx in range(items)]

    community = np.arange(items) % clusters
    local = np.arange(items) // clusters  # index within the community
    half = local % 2
    sub = (local // 2) % code_fan

    # three disjoint one-hot dimension blocks, coarse to fine
    centers = np.zeros((clusters, content_dim))
    centers[np.arange(clusters), np.arange(clusters)] = 40.0
    halves = np.zeros((2 * clusters, content_dim))
    halves[np.arange(2 * clusters), clusters + np.arange(2 * clusters)] = 16.0
    fine = np.zeros((code_fan, content_dim))
    for b in range(code_fan):
        fine[b, 3 * clusters + b // 2] = 4.0 if b % 2 == 0 else -4.0
    matrix = (centers[community] + halves[community * 2 + half] + fine[sub]
              + rng.normal(0.0, noise, size=(items, content_dim)))
    embeddings = ContentEmbeddings(item_ids, matrix)

    # community membership lists for the transition rule
    members: list[np.ndarray] = [np.flatnonzero(community == c) for c in range(clusters)]
    local_pos = np.empty(items, dtype=np.intp)
    for ids in members:
        local_pos[ids] = np.arange(len(ids))

    records: list[tuple[str, str, int]] = []
    for u in range(users):
        length = int(rng.integers(min_len, max_len + 1))
        current = int(rng.integers(items))
        c = int(community[current])
        ids = members[c]
        walk = [current]
        recent = [int(local_pos[current])]
        for _ in range(length - 1):
            lag_sum = sum(recent[-rule_order:])
            nxt = (lag_sum + 1) % len(ids)
            walk.append(int(ids[nxt]))
            recent.append(nxt)
        user_id = f"user{u:05d}"
        records.extend((user_id, item_ids[it], t) for t, it in enumerate(walk))
    return InteractionLog(records), embeddings
