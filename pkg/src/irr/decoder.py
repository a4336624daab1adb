"""Inference: one backbone pass, then level-wise beam search in the assigner.

The compact path encodes the history once and decodes the full code path
inside the recursive assigner, expanding candidates with hard codeword
contexts along their own hypotheses (mirroring the teacher-forced
conditioning used in training). The flattened baseline re-invokes the
backbone once per level, appending chosen tokens to the stream. Both
count backbone invocations so the efficiency contracts are checkable.

All candidate selection is deterministic: descending score, ties broken
lexicographically on the code path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ContractError
from .indexer import PrefixTrie
from .model import CompactModel, FlattenedModel
from .ran import RecursiveAssigner

_LOG_FLOOR = 1e-300


@dataclass
class BeamCandidate:
    """A partial code path with its cumulative log-probability and context."""

    path: tuple[int, ...]
    log_prob: float
    z_prefix: np.ndarray | None


@dataclass
class RankedList:
    """Item ids with scores, strictly ordered best-first."""

    entries: list[tuple[str, float]]
    width: int

    def items(self) -> list[str]:
        return [item for item, _ in self.entries]


def _select_top(scores: np.ndarray, paths: np.ndarray, width: int):
    """Top `width` of a (C, K) score grid; ties break on the full code path.

    Returns (candidate_row, code, score) arrays in final beam order.
    """
    n_cand, k = scores.shape
    cand_idx = np.repeat(np.arange(n_cand), k)
    codes = np.tile(np.arange(k), n_cand)
    flat = scores.reshape(-1)
    keep = np.isfinite(flat)
    cand_idx, codes, flat = cand_idx[keep], codes[keep], flat[keep]
    # lexsort: last key is primary. Descending score, then c1, c2, ..., new code.
    keys = [codes]
    for col in range(paths.shape[1] - 1, -1, -1):
        keys.append(paths[cand_idx, col])
    keys.append(-flat)
    order = np.lexsort(tuple(keys))[:width]
    return cand_idx[order], codes[order], flat[order]


def _allowed_mask(paths: list[tuple[int, ...]], k: int, trie: PrefixTrie) -> np.ndarray:
    mask = np.full((len(paths), k), -np.inf)
    for row, path in enumerate(paths):
        children = trie.child_codes(path)
        mask[row, children] = 0.0
    return mask


def beam_search(ran: RecursiveAssigner, h_u: np.ndarray, width: int,
                trie: PrefixTrie | None = None, constrained: bool = False
                ) -> list[BeamCandidate]:
    """Level-wise beam search guided by a user state; returns full-depth candidates."""
    if width < 1:
        raise ContractError("beam width must be >= 1")
    if constrained and trie is None:
        raise ContractError("constrained search requires a prefix trie")
    h_u = np.ascontiguousarray(h_u, dtype=np.float64).reshape(1, -1)
    beam = [BeamCandidate((), 0.0, None)]
    for level in range(1, ran.levels + 1):
        x = np.repeat(h_u, len(beam), axis=0)
        z_prefix = None if level == 1 else np.vstack([c.z_prefix for c in beam])
        h = ran.fuse_np(x, z_prefix, level)
        probs = ran.assign_np(h, level)
        logp = np.log(np.maximum(probs, _LOG_FLOOR))
        scores = np.array([c.log_prob for c in beam])[:, None] + logp
        if constrained:
            scores = scores + _allowed_mask([c.path for c in beam], ran.k, trie)
        paths = np.array([c.path for c in beam], dtype=np.int64).reshape(len(beam), level - 1)
        rows, codes, kept = _select_top(scores, paths, width)
        codebook = ran.codebooks[level - 1].value
        new_beam = []
        for row, code, score in zip(rows, codes, kept):
            parent = beam[row]
            codeword = codebook[code]
            if parent.z_prefix is None or ran.context == "last":
                z = codeword.copy()
            else:
                z = parent.z_prefix + codeword
            new_beam.append(BeamCandidate(parent.path + (int(code),), float(score), z))
        if not new_beam:
            return []
        beam = new_beam
    return beam


def resolve_items(candidates: list[BeamCandidate], trie: PrefixTrie,
                  constrained: bool) -> RankedList:
    """Map surviving code paths to items; non-item paths are dropped.

    With constrained search every candidate resolves by construction.
    """
    entries = []
    for cand in candidates:
        item = trie.item_at(cand.path)
        if item is not None:
            entries.append((item, cand.log_prob))
    return RankedList(entries, width=len(candidates))


def decode_compact(model: CompactModel, history, width: int, trie: PrefixTrie,
                   constrained: bool = True,
                   item_embeddings: np.ndarray | None = None) -> RankedList:
    """Full compact decode for one user: one backbone pass, then beam search."""
    history = np.asarray(history, dtype=np.intp)[-model.max_hist:]
    if history.size == 0:
        raise ContractError("cannot decode an empty history")
    if item_embeddings is None:
        rows = model.items.synthesize_np(history)
    else:
        rows = item_embeddings[history]
    h_u = model.backbone.user_states_np(rows, 1, history.size, [history.size])
    candidates = beam_search(model.ran_user, h_u[0], width, trie, constrained)
    return resolve_items(candidates, trie, constrained)


def baseline_decode(model: FlattenedModel, history, width: int, trie: PrefixTrie,
                    constrained: bool = False) -> RankedList:
    """Autoregressive decode for the flattened baseline: one backbone pass per level."""
    history = np.asarray(history, dtype=np.intp)[-model.max_hist:]
    if history.size == 0:
        raise ContractError("cannot decode an empty history")
    base = model.token_ids(history)
    table = model.tokens.value
    beam = [BeamCandidate((), 0.0, None)]
    for level in range(1, model.levels + 1):
        streams = np.array([np.concatenate([base, np.array(c.path, dtype=np.intp) +
                                            (np.arange(len(c.path)) * model.k)])
                            for c in beam], dtype=np.intp)
        if streams.shape[1] > model.max_seq:  # sliding window over the token stream
            streams = streams[:, -model.max_seq:]
        n_cand, seq = streams.shape
        rows = table[streams.reshape(-1)]
        h = model.backbone.user_states_np(rows, n_cand, seq, np.full(n_cand, seq))
        block = model.level_rows(level)
        logits = h @ table[block].T
        probs = kernels.softmax_rows(np.ascontiguousarray(logits))
        logp = np.log(np.maximum(probs, _LOG_FLOOR))
        scores = np.array([c.log_prob for c in beam])[:, None] + logp
        if constrained:
            if trie is None:
                raise ContractError("constrained search requires a prefix trie")
            scores = scores + _allowed_mask([c.path for c in beam], model.k, trie)
        paths = np.array([c.path for c in beam], dtype=np.int64).reshape(len(beam), level - 1)
        sel_rows, codes, kept = _select_top(scores, paths, width)
        beam = [BeamCandidate(beam[r].path + (int(c),), float(s), None)
                for r, c, s in zip(sel_rows, codes, kept)]
        if not beam:
            return RankedList([], width=0)
    return resolve_items(beam, trie, constrained)
