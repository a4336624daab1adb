"""Compact causal sequence encoder.

Pre-norm multi-head self-attention stack with learned absolute positions,
ReLU feed-forward of width 4d, and a final layer norm. The user state is
the output at the last real (non-padded) position. The same stack serves
the compact mode (one token per item) and the flattened baseline (L
tokens per item); only the inputs differ.

encode() records on a tape for training; encode_np() is the identical
computation on plain arrays for decoding. A test pins the two together.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from . import kernels
from .autodiff import LAYERNORM_EPS, Node, Parameter, Tape
from .errors import ContractError, DimensionError


class CausalBackbone:
    def __init__(self, d: int, layers: int, heads: int, max_seq: int,
                 rng: np.random.Generator, name: str = "backbone"):
        if d % heads:
            raise DimensionError(f"model width {d} not divisible by {heads} heads")
        if max_seq < 1:
            raise ContractError("max_seq must be >= 1")
        self.d = d
        self.layers = layers
        self.heads = heads
        self.max_seq = max_seq
        self.invocations = 0  # forward-pass counter for the efficiency contracts
        self.last_shape: tuple[int, int] | None = None  # (batch, positions) of the last pass
        std = 1.0 / math.sqrt(d)
        self.pos = Parameter(f"{name}.pos", rng.normal(0.0, std, size=(max_seq, d)))
        self.blocks = []
        for i in range(layers):
            pre = f"{name}.layer{i}"
            self.blocks.append({
                "ln1_g": Parameter(f"{pre}.ln1.gain", np.ones((1, d))),
                "ln1_b": Parameter(f"{pre}.ln1.bias", np.zeros((1, d))),
                "w_qkv": Parameter(f"{pre}.attn.w_qkv", rng.normal(0.0, std, size=(d, 3 * d))),
                "b_qkv": Parameter(f"{pre}.attn.b_qkv", np.zeros((1, 3 * d))),
                "w_out": Parameter(f"{pre}.attn.w_out", rng.normal(0.0, std, size=(d, d))),
                "b_out": Parameter(f"{pre}.attn.b_out", np.zeros((1, d))),
                "ln2_g": Parameter(f"{pre}.ln2.gain", np.ones((1, d))),
                "ln2_b": Parameter(f"{pre}.ln2.bias", np.zeros((1, d))),
                "w_ff1": Parameter(f"{pre}.ff.w1", rng.normal(0.0, std, size=(d, 4 * d))),
                "b_ff1": Parameter(f"{pre}.ff.b1", np.zeros((1, 4 * d))),
                "w_ff2": Parameter(f"{pre}.ff.w2", rng.normal(0.0, 1.0 / math.sqrt(4 * d), size=(4 * d, d))),
                "b_ff2": Parameter(f"{pre}.ff.b2", np.zeros((1, d))),
            })
        self.ln_f_g = Parameter(f"{name}.lnf.gain", np.ones((1, d)))
        self.ln_f_b = Parameter(f"{name}.lnf.bias", np.zeros((1, d)))

    def parameters(self) -> list[Parameter]:
        params = [self.pos]
        for block in self.blocks:
            params.extend(block.values())
        params.extend([self.ln_f_g, self.ln_f_b])
        return params

    def _check(self, rows: int, batch: int, seq: int):
        if seq > self.max_seq:
            raise ContractError(f"sequence length {seq} exceeds max_seq {self.max_seq}")
        if rows != batch * seq:
            raise DimensionError(f"expected {batch * seq} token rows, got {rows}")

    def encode(self, tape: Tape, tokens: Node, batch: int, seq: int, lengths) -> Node:
        """All-position hidden states, (batch*seq, d). Counts one invocation."""
        self._check(tokens.rows, batch, seq)
        self.last_shape = (batch, seq)
        pos_idx = np.tile(np.arange(seq), batch)
        x = ad.add(tokens, ad.gather_rows(tape.parameter(self.pos), pos_idx))
        for block in self.blocks:
            a = ad.layernorm(x, tape.parameter(block["ln1_g"]), tape.parameter(block["ln1_b"]))
            qkv = ad.add(ad.matmul(a, tape.parameter(block["w_qkv"])), tape.parameter(block["b_qkv"]))
            q = ad.slice_cols(qkv, 0, self.d)
            k = ad.slice_cols(qkv, self.d, 2 * self.d)
            v = ad.slice_cols(qkv, 2 * self.d, 3 * self.d)
            ctx = ad.causal_attention(q, k, v, batch, seq, self.heads, lengths)
            attn_out = ad.add(ad.matmul(ctx, tape.parameter(block["w_out"])), tape.parameter(block["b_out"]))
            x = ad.add(x, attn_out)
            f = ad.layernorm(x, tape.parameter(block["ln2_g"]), tape.parameter(block["ln2_b"]))
            f = ad.relu(ad.add(ad.matmul(f, tape.parameter(block["w_ff1"])), tape.parameter(block["b_ff1"])))
            f = ad.add(ad.matmul(f, tape.parameter(block["w_ff2"])), tape.parameter(block["b_ff2"]))
            x = ad.add(x, f)
        out = ad.layernorm(x, tape.parameter(self.ln_f_g), tape.parameter(self.ln_f_b))
        self.invocations += 1
        return out

    @staticmethod
    def last_state_indices(batch: int, seq: int, lengths) -> np.ndarray:
        lengths = np.asarray(lengths, dtype=np.intp)
        return np.arange(batch) * seq + (lengths - 1)

    def user_states(self, tape: Tape, tokens: Node, batch: int, seq: int, lengths) -> Node:
        """Final hidden state per sequence: encode then read the last real position."""
        states = self.encode(tape, tokens, batch, seq, lengths)
        return ad.gather_rows(states, self.last_state_indices(batch, seq, lengths))

    # -- plain-array twin ------------------------------------------------------

    def encode_np(self, tokens: np.ndarray, batch: int, seq: int, lengths) -> np.ndarray:
        self._check(tokens.shape[0], batch, seq)
        self.last_shape = (batch, seq)
        lengths = np.asarray(lengths, dtype=np.intp)
        heads, d = self.heads, self.d
        dh = d // heads
        inv = 1.0 / math.sqrt(dh)
        pos_idx = np.tile(np.arange(seq), batch)
        x = tokens + self.pos.value[pos_idx]
        pos = np.arange(seq)
        visible = (pos[None, :] <= pos[:, None])[None, :, :] & (pos[None, None, :] < lengths[:, None, None])
        bias = np.where(visible, 0.0, -1e30)[:, None, :, :]

        def ln(m, gain, bias_p):
            y, _, _ = kernels.layernorm(np.ascontiguousarray(m), gain.value, bias_p.value, LAYERNORM_EPS)
            return y

        for block in self.blocks:
            a = ln(x, block["ln1_g"], block["ln1_b"])
            qkv = a @ block["w_qkv"].value + block["b_qkv"].value
            q, k, v = (qkv[:, i * d:(i + 1) * d].reshape(batch, seq, heads, dh).transpose(0, 2, 1, 3)
                       for i in range(3))
            scores = np.matmul(q, k.transpose(0, 1, 3, 2)) * inv + bias
            attn = kernels.softmax_rows(np.ascontiguousarray(scores.reshape(-1, seq)))
            ctx = np.matmul(attn.reshape(batch, heads, seq, seq), v)
            ctx = ctx.transpose(0, 2, 1, 3).reshape(batch * seq, d)
            x = x + (ctx @ block["w_out"].value + block["b_out"].value)
            f = ln(x, block["ln2_g"], block["ln2_b"])
            f = kernels.relu(np.ascontiguousarray(f @ block["w_ff1"].value + block["b_ff1"].value))
            x = x + (f @ block["w_ff2"].value + block["b_ff2"].value)
        out = ln(x, self.ln_f_g, self.ln_f_b)
        self.invocations += 1
        return out

    def user_states_np(self, tokens: np.ndarray, batch: int, seq: int, lengths) -> np.ndarray:
        states = self.encode_np(tokens, batch, seq, lengths)
        return states[self.last_state_indices(batch, seq, lengths)]
