"""Item-side representation: UID-guided redistribution over the codebooks.

Each catalog item owns a trainable UID embedding that drives the recursive
assigner; summing the per-level contexts yields the item embedding fed to
the backbone. The alignment loss scores the soft per-level distributions
against the item's static SID so the redistribution stays anchored to the
Stage-1 hierarchy.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Parameter, Tape
from .errors import DataError
from .ran import RanMode, RanTrace, RecursiveAssigner


class ItemSpace:
    def __init__(self, ran: RecursiveAssigner, code_matrix: np.ndarray,
                 rng: np.random.Generator, name: str = "uid"):
        self.ran = ran
        self.codes = np.ascontiguousarray(code_matrix, dtype=np.int64)
        if self.codes.ndim != 2 or self.codes.shape[1] != ran.levels:
            raise DataError(f"code matrix must be (items, {ran.levels})")
        n = self.codes.shape[0]
        self.uid = Parameter(name + ".table", rng.normal(0.0, 1.0 / np.sqrt(ran.d), size=(n, ran.d)))

    @property
    def num_items(self) -> int:
        return self.codes.shape[0]

    def parameters(self) -> list[Parameter]:
        return [self.uid]

    def _check_items(self, items: np.ndarray):
        if items.size and (items.min() < 0 or items.max() >= self.num_items):
            raise LookupError(f"item index out of range [0, {self.num_items})")

    def synthesize(self, tape: Tape, items, mode: RanMode) -> tuple[Node, RanTrace]:
        """Item embeddings for a batch of item indices: E = sum of per-level contexts.

        Redistribution mode aggregates soft contexts from the UID-guided
        distributions; teacher-forcing mode hard-looks-up the item's static
        SID instead (the item embedding then ignores the UID values).
        """
        items = np.asarray(items, dtype=np.intp).reshape(-1)
        self._check_items(items)
        x = ad.gather_rows(tape.parameter(self.uid), items)
        sids = self.codes[items] if mode is RanMode.TEACHER_FORCING else None
        trace = self.ran.run_recursive(tape, x, mode, sids)
        emb = trace.contexts[0]
        for z in trace.contexts[1:]:
            emb = ad.add(emb, z)
        return emb, trace

    def alignment_loss(self, tape: Tape, items) -> Node:
        """Mean over items of the SID-path negative log-likelihood.

        The distributions come from the redistribution-mode trace (soft
        contexts thread forward) while the targets are the hard SID tokens.
        """
        items = np.asarray(items, dtype=np.intp).reshape(-1)
        self._check_items(items)
        _, trace = self.synthesize(tape, items, RanMode.REDISTRIBUTION)
        codes = self.codes[items]
        total: Node | None = None
        for level, p in enumerate(trace.probs):
            term = ad.nll_rows(p, codes[:, level])
            total = term if total is None else ad.add(total, term)
        return ad.mean_all(total)

    def distributions_np(self, items) -> list[np.ndarray]:
        """Per-level redistribution-mode assignment distributions, (B, K) each."""
        items = np.asarray(items, dtype=np.intp).reshape(-1)
        self._check_items(items)
        x = self.uid.value[items]
        ran = self.ran
        probs = []
        z_prefix = None
        for level in range(1, ran.levels + 1):
            h = ran.fuse_np(x, z_prefix, level)
            p = ran.assign_np(h, level)
            probs.append(p)
            z = p @ ran.codebooks[level - 1].value
            if z_prefix is None or ran.context == "last":
                z_prefix = z
            else:
                z_prefix = z_prefix + z
        return probs

    def synthesize_np(self, items, mode: RanMode = RanMode.REDISTRIBUTION) -> np.ndarray:
        """Plain-array embedding synthesis for decoding and evaluation."""
        items = np.asarray(items, dtype=np.intp).reshape(-1)
        self._check_items(items)
        x = self.uid.value[items]
        ran = self.ran
        emb = np.zeros((items.size, ran.d))
        z_prefix = None
        for level in range(1, ran.levels + 1):
            h = ran.fuse_np(x, z_prefix, level)
            if mode is RanMode.TEACHER_FORCING:
                z = ran.codebooks[level - 1].value[self.codes[items, level - 1]]
            else:
                p = ran.assign_np(h, level)
                z = p @ ran.codebooks[level - 1].value
            emb += z
            if z_prefix is None or ran.context == "last":
                z_prefix = z
            else:
                z_prefix = z_prefix + z
        return emb
