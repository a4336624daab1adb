"""Stage-1 semantic indexing.

Quantizes item content embeddings into hierarchical semantic IDs with
residual k-means, reserves the final level for collision disambiguation,
and provides the SID-table / prefix-trie plumbing used downstream. The
SID-table text format also accepts codes produced by external pipelines.
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import kernels
from .errors import CapacityError, ConfigError, DataError, ParseError

EMBEDDING_MAGIC = b"IRRM"


@dataclass
class ContentEmbeddings:
    """Item content vectors: one row per item id, all finite."""

    item_ids: list[str]
    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.ascontiguousarray(self.matrix, dtype=np.float64)
        if len(self.item_ids) != self.matrix.shape[0]:
            raise DataError(
                f"{len(self.item_ids)} item ids for {self.matrix.shape[0]} embedding rows")
        if len(set(self.item_ids)) != len(self.item_ids):
            raise DataError("duplicate item ids in embeddings")
        if not np.isfinite(self.matrix).all():
            raise DataError("non-finite values in content embeddings")


@dataclass
class CentroidSet:
    """Trained centroids for one semantic level."""

    level: int
    centroids: np.ndarray


@dataclass
class KmeansResult:
    centroids: np.ndarray
    assignments: np.ndarray
    wcss_history: list[float]


@dataclass
class SidTable:
    """Bijective map from item id to its full L-level code tuple."""

    codes: dict[str, tuple[int, ...]]
    L: int
    K: int
    method: str = "rkmeans"
    seed: int = 0

    def __post_init__(self):
        seen = {}
        for item, code in self.codes.items():
            code = tuple(int(c) for c in code)
            if len(code) != self.L:
                raise DataError(f"item {item}: code length {len(code)} != L={self.L}")
            if any(c < 0 or c >= self.K for c in code):
                raise DataError(f"item {item}: code {code} out of range [0, {self.K})")
            if code in seen:
                raise DataError(f"items {seen[code]} and {item} share the SID {code}")
            seen[code] = item
            self.codes[item] = code

    def __len__(self):
        return len(self.codes)

    def code_matrix(self, item_order: Sequence[str]) -> np.ndarray:
        """Codes stacked as an (n, L) int array following item_order."""
        return np.array([self.codes[i] for i in item_order], dtype=np.int64)


class PrefixTrie:
    """L-level trie over SID tuples; leaves carry item ids."""

    def __init__(self, depth: int):
        self.depth = depth
        self._root: dict = {}
        self._count = 0

    def insert(self, code: tuple[int, ...], item_id: str):
        node = self._root
        for c in code[:-1]:
            node = node.setdefault(c, {})
        if code[-1] in node:
            raise DataError(f"duplicate SID {code} in trie")
        node[code[-1]] = item_id
        self._count += 1

    def _walk(self, prefix: Sequence[int]):
        node = self._root
        for c in prefix:
            if not isinstance(node, dict) or c not in node:
                return None
            node = node[c]
        return node

    def has_prefix(self, prefix: Sequence[int]) -> bool:
        return self._walk(prefix) is not None

    def child_codes(self, prefix: Sequence[int]) -> list[int]:
        node = self._walk(prefix)
        if not isinstance(node, dict):
            return []
        return sorted(node)

    def item_at(self, code: Sequence[int]) -> str | None:
        node = self._walk(code)
        return node if isinstance(node, str) else None

    def __len__(self):
        return self._count


def kmeans(points: np.ndarray, k: int, max_iters: int, seed: int,
           init_centroids: np.ndarray | None = None) -> KmeansResult:
    """Lloyd iterations with k-means++ seeding.

    Deterministic for a fixed seed: nearest-centroid ties break toward the
    lowest centroid index, and empty clusters are re-seeded to the point
    currently farthest from its assigned centroid.
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    n = points.shape[0]
    if n < k:
        raise ConfigError(f"kmeans needs at least k={k} points, got {n}")
    if max_iters < 1:
        raise ConfigError("max_iters must be >= 1")
    if not np.isfinite(points).all():
        raise DataError("non-finite values in kmeans input")

    if init_centroids is not None:
        centroids = np.array(init_centroids, dtype=np.float64)
    else:
        centroids = _kmeanspp_init(points, k, np.random.default_rng(seed))

    wcss_history: list[float] = []
    assignments = None
    for _ in range(max_iters):
        idx, sq = kernels.nearest_centroids(points, centroids)
        wcss_history.append(float(sq.sum()))
        if assignments is not None and np.array_equal(idx, assignments):
            break
        assignments = idx
        centroids = _update_centroids(points, idx, sq, k, centroids)
    return KmeansResult(centroids, assignments, wcss_history)


def _kmeanspp_init(points, k, rng):
    n = points.shape[0]
    chosen = int(rng.integers(n))
    centroids = [points[chosen]]
    d2 = ((points - points[chosen]) ** 2).sum(axis=1)
    for _ in range(k - 1):
        total = d2.sum()
        if total > 0.0:
            chosen = int(rng.choice(n, p=d2 / total))
        else:
            chosen = int(rng.integers(n))  # degenerate cloud
        centroids.append(points[chosen])
        d2 = np.minimum(d2, ((points - points[chosen]) ** 2).sum(axis=1))
    return np.array(centroids)


def _update_centroids(points, idx, sq, k, old):
    new = old.copy()
    counts = np.bincount(idx, minlength=k)
    sums = np.zeros_like(old)
    np.add.at(sums, idx, points)
    nonempty = counts > 0
    new[nonempty] = sums[nonempty] / counts[nonempty, None]
    empties = np.flatnonzero(~nonempty)
    if empties.size:
        farthest = np.argsort(-sq, kind="stable")
        for slot, cluster in enumerate(empties):
            new[cluster] = points[farthest[slot]]
    return new


def residual_quantize(embeddings: ContentEmbeddings, levels: int, k: int, seed: int,
                      max_iters: int = 50, restarts: int = 4,
                      ) -> tuple[np.ndarray, list[CentroidSet], list[float]]:
    """Quantize embeddings over `levels` semantic levels of residual k-means.

    Level 1 clusters the raw vectors; each later level clusters what the
    previous level left unexplained. Each level runs `restarts` seeded
    k-means attempts and keeps the lowest-WCSS one (first on ties). Returns
    the (n, levels) code matrix, the per-level centroid sets, and the mean
    residual norm after each level (enforced non-increasing).
    """
    if levels < 1:
        raise ConfigError("levels must be >= 1")
    if restarts < 1:
        raise ConfigError("restarts must be >= 1")
    residual = embeddings.matrix.copy()
    codes = np.zeros((residual.shape[0], levels), dtype=np.int64)
    centroid_sets: list[CentroidSet] = []
    mean_norms: list[float] = [float(np.linalg.norm(residual, axis=1).mean())]
    for level in range(1, levels + 1):
        result = None
        for attempt in range(restarts):
            candidate = kmeans(residual, k, max_iters, seed=_level_seed(seed, level, attempt))
            if result is None or candidate.wcss_history[-1] < result.wcss_history[-1]:
                result = candidate
        codes[:, level - 1] = result.assignments
        residual -= result.centroids[result.assignments]
        centroid_sets.append(CentroidSet(level, result.centroids))
        norm = float(np.linalg.norm(residual, axis=1).mean())
        if norm > mean_norms[-1] + 1e-9:
            raise DataError(
                f"mean residual norm increased at level {level}: "
                f"{mean_norms[-1]:.6g} -> {norm:.6g}")
        mean_norms.append(norm)
    return codes, centroid_sets, mean_norms[1:]


def _level_seed(seed: int, level: int, attempt: int = 0) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed & 0xFFFFFFFF, level, attempt])


def assign_dedup_level(semantic_codes: Mapping[str, Sequence[int]], k: int,
                       method: str = "rkmeans", seed: int = 0) -> SidTable:
    """Append the collision-disambiguation level to (L-1)-level codes.

    Items sharing a semantic prefix receive dedup indices 0, 1, ... in
    ascending item-id order; unique prefixes get index 0.
    """
    lengths = {len(c) for c in semantic_codes.values()}
    if len(lengths) > 1:
        raise DataError(f"inconsistent semantic code lengths: {sorted(lengths)}")
    groups: dict[tuple[int, ...], list[str]] = {}
    for item in sorted(semantic_codes):
        groups.setdefault(tuple(int(c) for c in semantic_codes[item]), []).append(item)
    full: dict[str, tuple[int, ...]] = {}
    for prefix, items in groups.items():
        if len(items) > k:
            raise CapacityError(
                f"{len(items)} items share prefix {prefix}; dedup level holds at most {k}")
        for rank, item in enumerate(items):
            full[item] = prefix + (rank,)
    level_count = (lengths.pop() if lengths else 0) + 1
    # preserve the caller's item order in the table
    ordered = {item: full[item] for item in semantic_codes}
    return SidTable(ordered, L=level_count, K=k, method=method, seed=seed)


def build_sid_table(embeddings: ContentEmbeddings, levels_total: int, k: int, seed: int,
                    max_iters: int = 50, restarts: int = 4, dedup_last_level: bool = True,
                    method: str = "rkmeans") -> tuple[SidTable, list[CentroidSet]]:
    """Full Stage-1 pipeline: residual quantization plus the dedup level.

    With dedup_last_level=False all levels_total levels are semantic and
    uniqueness of the resulting codes is required of the data (matching
    tables imported from external quantizers).
    """
    semantic = levels_total - 1 if dedup_last_level else levels_total
    if semantic < 1:
        raise ConfigError("need at least one semantic level")
    codes, centroid_sets, _ = residual_quantize(embeddings, semantic, k, seed, max_iters, restarts)
    by_item = {item: tuple(codes[i]) for i, item in enumerate(embeddings.item_ids)}
    if dedup_last_level:
        table = assign_dedup_level(by_item, k, method=method, seed=seed)
    else:
        table = SidTable(by_item, L=levels_total, K=k, method=method, seed=seed)
    return table, centroid_sets


def build_prefix_trie(table: SidTable) -> PrefixTrie:
    trie = PrefixTrie(table.L)
    for item, code in table.codes.items():
        trie.insert(code, item)
    return trie


_HEADER_RE = re.compile(r"^#sid L=(\d+) K=(\d+) method=(\S+) seed=(-?\d+)$")


def save_sid_table(table: SidTable, path):
    lines = [f"#sid L={table.L} K={table.K} method={table.method} seed={table.seed}"]
    for item, code in table.codes.items():
        lines.append(f"{item}\t{','.join(str(c) for c in code)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_sid_table(path) -> SidTable:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines:
        raise ParseError("empty SID table file", line=1)
    header = _HEADER_RE.match(lines[0])
    if not header:
        raise ParseError(f"bad header {lines[0]!r}", line=1)
    level_count, k, method, seed = (int(header.group(1)), int(header.group(2)),
                                    header.group(3), int(header.group(4)))
    codes: dict[str, tuple[int, ...]] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ParseError(f"expected item_id<TAB>codes, got {line!r}", line=lineno)
        item, code_text = parts
        try:
            code = tuple(int(c) for c in code_text.split(","))
        except ValueError:
            raise ParseError(f"non-integer code in {code_text!r}", line=lineno) from None
        if len(code) != level_count:
            raise ParseError(
                f"{len(code)} codes for item {item}, header says L={level_count}", line=lineno)
        if any(c < 0 or c >= k for c in code):
            raise ParseError(f"code out of range [0, {k}) in {code_text!r}", line=lineno)
        if item in codes:
            raise DataError(f"duplicate item {item} in SID table")
        codes[item] = code
    return SidTable(codes, L=level_count, K=k, method=method, seed=seed)


def save_embeddings(embeddings: ContentEmbeddings, path):
    """Binary embedding file plus the UTF-8 id sidecar at <path>.ids."""
    path = Path(path)
    rows, cols = embeddings.matrix.shape
    with open(path, "wb") as fh:
        fh.write(EMBEDDING_MAGIC)
        fh.write(struct.pack("<II", rows, cols))
        fh.write(embeddings.matrix.astype("<f4").tobytes())
    path.with_name(path.name + ".ids").write_text(
        "\n".join(embeddings.item_ids) + "\n", encoding="utf-8")


def load_embeddings(path) -> ContentEmbeddings:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] != EMBEDDING_MAGIC:
        raise DataError(f"{path}: not an embedding file (bad magic)")
    rows, cols = struct.unpack("<II", blob[4:12])
    expected = 12 + rows * cols * 4
    if len(blob) != expected:
        raise DataError(f"{path}: expected {expected} bytes, found {len(blob)}")
    matrix = np.frombuffer(blob, dtype="<f4", offset=12).reshape(rows, cols).astype(np.float64)
    ids_path = path.with_name(path.name + ".ids")
    if not ids_path.exists():
        raise DataError(f"missing id sidecar {ids_path}")
    item_ids = ids_path.read_text(encoding="utf-8").splitlines()
    if len(item_ids) != rows:
        raise DataError(f"{ids_path}: {len(item_ids)} ids for {rows} rows")
    return ContentEmbeddings(item_ids, matrix)
