"""Model assembly: recursive assigner + UID table + backbone.

Two paradigms share the backbone implementation. The compact model feeds
one synthesized embedding per history item; the flattened baseline feeds
L code tokens per item with per-level vocabularies and reads next-token
logits against the (tied) token embedding table.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Parameter
from .backbone import CausalBackbone
from .errors import DataError
from .item_repr import ItemSpace
from .ran import RecursiveAssigner


def _check_codes(code_matrix: np.ndarray, k: int) -> np.ndarray:
    codes = np.ascontiguousarray(code_matrix, dtype=np.int64)
    if codes.ndim != 2:
        raise DataError("code matrix must be 2-D (items x levels)")
    if codes.size and (codes.min() < 0 or codes.max() >= k):
        raise DataError(f"SID codes out of range [0, {k})")
    return codes


def _registry(params: list[Parameter]) -> dict[str, Parameter]:
    registry: dict[str, Parameter] = {}
    for p in params:
        if p.name in registry:
            raise DataError(f"duplicate parameter name {p.name}")
        registry[p.name] = p
    return registry


class CompactModel:
    """One-token-per-item model: shared RAN, UID table, causal backbone."""

    kind = "compact"

    def __init__(self, code_matrix: np.ndarray, k: int, d: int, layers: int,
                 heads: int, max_hist: int, seed: int, context: str = "cumsum",
                 shared_ran: bool = True):
        codes = _check_codes(code_matrix, k)
        self.k = k
        self.levels = codes.shape[1]
        self.d = d
        self.max_hist = max_hist
        self.shared_ran = shared_ran
        rng = np.random.default_rng(seed)
        ran = RecursiveAssigner(self.levels, k, d, rng, name="ran", context=context)
        # the ablated variant swaps in an independent copy with identical
        # initial values and nothing else
        self.ran_user = ran if shared_ran else ran.clone("ran_user")
        self.items = ItemSpace(ran, codes, rng)
        self.backbone = CausalBackbone(d, layers, heads, max_hist, rng)

    @property
    def ran_item(self) -> RecursiveAssigner:
        return self.items.ran

    def parameters(self) -> list[Parameter]:
        params = self.ran_item.parameters()
        if self.ran_user is not self.ran_item:
            params += self.ran_user.parameters()
        params += self.items.parameters()
        params += self.backbone.parameters()
        return params

    def registry(self) -> dict[str, Parameter]:
        return _registry(self.parameters())


class FlattenedModel:
    """Baseline: each item expands into L level-specific code tokens."""

    kind = "flattened"

    def __init__(self, code_matrix: np.ndarray, k: int, d: int, layers: int,
                 heads: int, max_hist: int, seed: int):
        codes = _check_codes(code_matrix, k)
        self.codes = codes
        self.k = k
        self.levels = codes.shape[1]
        self.d = d
        self.max_hist = max_hist
        self.max_seq = max_hist * self.levels
        rng = np.random.default_rng(seed)
        # one row per (level, code); level l's vocabulary is the row block
        # [l*k, (l+1)*k)
        self.tokens = Parameter(
            "tok.table", rng.normal(0.0, 1.0 / np.sqrt(d), size=(self.levels * k, d)))
        self.backbone = CausalBackbone(d, layers, heads, self.max_seq, rng)

    def token_ids(self, item_seq) -> np.ndarray:
        """Flatten a sequence of item indices into combined (level, code) token ids."""
        item_seq = np.asarray(item_seq, dtype=np.intp).reshape(-1)
        offsets = np.arange(self.levels) * self.k
        return (self.codes[item_seq] + offsets).reshape(-1)

    def level_rows(self, level: int) -> slice:
        """Token-table row block holding level `level` (1-based) codes."""
        return slice((level - 1) * self.k, level * self.k)

    def parameters(self) -> list[Parameter]:
        return [self.tokens] + self.backbone.parameters()

    def registry(self) -> dict[str, Parameter]:
        return _registry(self.parameters())
