"""Causal encoder: masking, padding isolation, gradients, tape/array parity."""

import numpy as np
import pytest

from irr import autodiff as ad
from irr.autodiff import Parameter, Tape
from irr.backbone import CausalBackbone
from irr.errors import ContractError

from conftest import check_gradients


def make_backbone(d=8, layers=2, heads=2, max_seq=6, seed=0):
    return CausalBackbone(d, layers, heads, max_seq, np.random.default_rng(seed))


def encode_values(bb, tokens, batch, seq, lengths):
    tape = Tape()
    return bb.encode(tape, tape.constant(tokens), batch, seq, lengths).value


def test_causality_prefix_identical(rng):
    bb = make_backbone()
    a = rng.normal(size=(5, 8))
    b = a.copy()
    b[3:] = rng.normal(size=(2, 8))  # differs after position 2
    out_a = encode_values(bb, a, 1, 5, [5])
    out_b = encode_values(bb, b, 1, 5, [5])
    assert np.array_equal(out_a[:3], out_b[:3])
    assert not np.array_equal(out_a[3:], out_b[3:])


def test_single_item_sequence_depends_only_on_it(rng):
    bb = make_backbone()
    row = rng.normal(size=(1, 8))
    out1 = encode_values(bb, row, 1, 1, [1])
    out2 = encode_values(bb, np.vstack([row]), 1, 1, [1])
    assert np.array_equal(out1, out2)


def test_padded_tail_is_inert(rng):
    bb = make_backbone()
    real = rng.normal(size=(3, 8))
    pad1 = np.vstack([real, rng.normal(size=(2, 8))])
    pad2 = np.vstack([real, rng.normal(size=(2, 8))])
    out1 = encode_values(bb, pad1, 1, 5, [3])
    out2 = encode_values(bb, pad2, 1, 5, [3])
    assert np.array_equal(out1[:3], out2[:3])


def test_attention_rows_stochastic(rng):
    bb = make_backbone(layers=1)
    tokens = rng.normal(size=(8, 8))
    tape = Tape()
    bb.encode(tape, tape.constant(tokens), 2, 4, [4, 3])
    attn_nodes = [n for n in tape.nodes if n.attn is not None]
    assert attn_nodes
    attn = attn_nodes[0].attn
    assert np.allclose(attn.sum(axis=-1), 1.0, atol=1e-12)
    assert attn.min() >= 0.0
    # masked (future) entries are exactly zero
    assert attn[0, 0, 0, 1] == 0.0
    # padded key position for the second sequence
    assert attn[1, 0, 3, 3] == 0.0


def test_user_states_read_last_real_position(rng):
    bb = make_backbone()
    tokens = rng.normal(size=(8, 8))
    tape = Tape()
    tok = tape.constant(tokens)
    states = bb.encode(tape, tok, 2, 4, [4, 2])
    tape2 = Tape()
    h = bb.user_states(tape2, tape2.constant(tokens), 2, 4, [4, 2])
    assert np.array_equal(h.value[0], states.value[3])
    assert np.array_equal(h.value[1], states.value[4 + 1])


def test_overlong_sequence_rejected(rng):
    bb = make_backbone(max_seq=4)
    tape = Tape()
    with pytest.raises(ContractError):
        bb.encode(tape, tape.constant(rng.normal(size=(6, 8))), 1, 6, [6])


def test_invocation_counter_and_shape(rng):
    bb = make_backbone()
    before = bb.invocations
    encode_values(bb, rng.normal(size=(4, 8)), 1, 4, [4])
    bb.encode_np(rng.normal(size=(4, 8)), 1, 4, [4])
    assert bb.invocations == before + 2
    assert bb.last_shape == (1, 4)


def test_tape_and_array_forwards_agree(rng):
    bb = make_backbone(d=8, layers=2, heads=2, max_seq=5)
    tokens = rng.normal(size=(10, 8))
    lengths = [5, 3]
    tape_out = encode_values(bb, tokens, 2, 5, lengths)
    np_out = bb.encode_np(tokens, 2, 5, lengths)
    real = np.concatenate([np.arange(5), 5 + np.arange(3)])
    assert np.allclose(tape_out[real], np_out[real], atol=1e-12)


def test_full_gradient_check_two_layer_backbone(rng):
    bb = make_backbone(d=8, layers=2, heads=2, max_seq=3, seed=4)
    tokens = Parameter("tokens", rng.normal(size=(6, 8)))
    w = rng.normal(size=(8, 1))
    lengths = [3, 2]

    def loss(tape):
        h = bb.user_states(tape, tape.parameter(tokens), 2, 3, lengths)
        return ad.sum_all(ad.matmul(h, tape.constant(w)))

    params = [tokens] + bb.parameters()
    assert check_gradients(loss, params, tol=1e-4) < 1e-4
