"""Recursive assignment over hierarchical codebooks.

One shared module holds L trainable codebooks (K x d each) and per-level
fusion networks. For each level it runs a three-step cycle: fuse the
guidance vector with the context carried over from earlier levels, score
the level's codebook rows into an assignment distribution, then aggregate
a new context either softly (probability-weighted codeword sum) or hard
(the codeword of a given target token). The same instance serves both the
item side and the user side of the model.

Both a tape-recorded forward (for training) and a plain-array forward
(for decoding) are provided; a consistency test pins them together.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import autodiff as ad
from . import kernels
from .autodiff import Node, Parameter, Tape
from .errors import ContractError


class RanMode(Enum):
    REDISTRIBUTION = "redistribution"
    TEACHER_FORCING = "teacher_forcing"


@dataclass
class RanTrace:
    """Per-level hidden states, assignment distributions, and contexts."""

    mode: RanMode
    hidden: list[Node]
    probs: list[Node]
    contexts: list[Node]
    sids: np.ndarray | None  # (batch, L) targets in teacher-forcing mode


class RecursiveAssigner:
    def __init__(self, levels: int, k: int, d: int, rng: np.random.Generator,
                 name: str = "ran", context: str = "cumsum"):
        if context not in ("cumsum", "last"):
            raise ContractError(f"context must be cumsum|last, got {context!r}")
        self.levels = levels
        self.k = k
        self.d = d
        self.context = context
        self.name = name
        std = 1.0 / np.sqrt(d)
        self.codebooks = [
            Parameter(f"{name}.codebook{l}", rng.normal(0.0, std, size=(k, d)))
            for l in range(1, levels + 1)
        ]
        # level 1 has no fusion parameters; levels 2..L each get
        # affine(2d -> d) -> relu -> affine(d -> d)
        self.fusion: dict[int, dict[str, Parameter]] = {}
        for l in range(2, levels + 1):
            self.fusion[l] = {
                "w1": Parameter(f"{name}.fuse{l}.w1", rng.normal(0.0, 1.0 / np.sqrt(2 * d), size=(2 * d, d))),
                "b1": Parameter(f"{name}.fuse{l}.b1", np.zeros((1, d))),
                "w2": Parameter(f"{name}.fuse{l}.w2", rng.normal(0.0, std, size=(d, d))),
                "b2": Parameter(f"{name}.fuse{l}.b2", np.zeros((1, d))),
            }

    def parameters(self) -> list[Parameter]:
        params = list(self.codebooks)
        for l in sorted(self.fusion):
            params.extend(self.fusion[l][key] for key in ("w1", "b1", "w2", "b2"))
        return params

    def clone(self, name: str) -> "RecursiveAssigner":
        """Independent copy with identical initial values (separate RAN ablation)."""
        other = RecursiveAssigner.__new__(RecursiveAssigner)
        other.levels, other.k, other.d = self.levels, self.k, self.d
        other.context, other.name = self.context, name
        other.codebooks = [
            Parameter(f"{name}.codebook{l + 1}", p.value.copy())
            for l, p in enumerate(self.codebooks)
        ]
        other.fusion = {
            l: {key: Parameter(f"{name}.fuse{l}.{key}", p.value.copy())
                for key, p in nets.items()}
            for l, nets in self.fusion.items()
        }
        return other

    # -- tape-recorded forward ------------------------------------------------

    def fuse_hidden(self, tape: Tape, x: Node, z_prefix: Node | None, level: int) -> Node:
        if level == 1:
            return x
        if z_prefix is None:
            raise ContractError(f"level {level} fusion requires a context prefix")
        nets = self.fusion[level]
        cat = ad.concat_cols(x, z_prefix)
        a = ad.add(ad.matmul(cat, tape.parameter(nets["w1"])), tape.parameter(nets["b1"]))
        r = ad.relu(a)
        return ad.add(ad.matmul(r, tape.parameter(nets["w2"])), tape.parameter(nets["b2"]))

    def assign_distribution(self, tape: Tape, h: Node, level: int) -> Node:
        codebook = tape.parameter(self.codebooks[level - 1])
        return ad.softmax_rows(ad.matmul(h, ad.transpose(codebook)))

    def aggregate_context(self, tape: Tape, p: Node | None, targets, level: int,
                          mode: RanMode) -> Node:
        codebook = tape.parameter(self.codebooks[level - 1])
        if mode is RanMode.TEACHER_FORCING:
            if targets is None:
                raise ContractError("teacher forcing requires target tokens")
            targets = np.asarray(targets, dtype=np.intp)
            if targets.size and (targets.min() < 0 or targets.max() >= self.k):
                raise IndexError(f"target token out of range [0, {self.k})")
            return ad.gather_rows(codebook, targets)
        return ad.matmul(p, codebook)

    def run_recursive(self, tape: Tape, x: Node, mode: RanMode,
                      sids: np.ndarray | None = None) -> RanTrace:
        """Full fuse -> assign -> aggregate cycle over all levels."""
        if mode is RanMode.TEACHER_FORCING:
            if sids is None:
                raise ContractError("teacher forcing requires a SID per row")
            sids = np.asarray(sids, dtype=np.intp).reshape(x.rows, self.levels)
        trace = RanTrace(mode, [], [], [], sids)
        z_prefix: Node | None = None
        for level in range(1, self.levels + 1):
            h = self.fuse_hidden(tape, x, z_prefix, level)
            p = self.assign_distribution(tape, h, level)
            targets = sids[:, level - 1] if sids is not None else None
            z = self.aggregate_context(tape, p, targets, level, mode)
            trace.hidden.append(h)
            trace.probs.append(p)
            trace.contexts.append(z)
            if z_prefix is None or self.context == "last":
                z_prefix = z
            else:
                z_prefix = ad.add(z_prefix, z)
        return trace

    # -- plain-array forward (decoding) ---------------------------------------

    def fuse_np(self, x: np.ndarray, z_prefix: np.ndarray | None, level: int) -> np.ndarray:
        if level == 1:
            return x
        if z_prefix is None:
            raise ContractError(f"level {level} fusion requires a context prefix")
        nets = self.fusion[level]
        cat = np.concatenate([x, z_prefix], axis=1)
        a = cat @ nets["w1"].value + nets["b1"].value
        return kernels.relu(np.ascontiguousarray(a)) @ nets["w2"].value + nets["b2"].value

    def assign_np(self, h: np.ndarray, level: int) -> np.ndarray:
        logits = h @ self.codebooks[level - 1].value.T
        return kernels.softmax_rows(np.ascontiguousarray(logits))


def path_log_prob(trace: RanTrace, sids: np.ndarray | None = None) -> Node:
    """Summed per-level log-probability of the trace's teacher-forced path.

    Returns a (batch, 1) node; exponentiating recovers the chain-rule
    product over levels.
    """
    if trace.mode is not RanMode.TEACHER_FORCING:
        raise ContractError("path log-probability requires a teacher-forcing trace")
    if sids is not None:
        sids = np.asarray(sids, dtype=np.intp).reshape(trace.sids.shape)
        if not np.array_equal(sids, trace.sids):
            raise ContractError("trace was conditioned on a different SID")
    total: Node | None = None
    for level, p in enumerate(trace.probs):
        term = ad.scale(ad.nll_rows(p, trace.sids[:, level]), -1.0)
        total = term if total is None else ad.add(total, term)
    return total
