"""Primitive semantics and gradient soundness of the tape."""

import math

import numpy as np
import pytest

from irr import autodiff as ad
from irr.autodiff import Parameter, Tape
from irr.errors import ContractError, DimensionError

from conftest import check_gradients, finite_diff, max_rel_err


def test_matmul_identity():
    t = Tape()
    out = ad.matmul(t.constant([[1.0, 0.0], [0.0, 1.0]]), t.constant([[3.0], [4.0]]))
    assert out.value.tolist() == [[3.0], [4.0]]


def test_matmul_closed_form():
    t = Tape()
    out = ad.matmul(t.constant([[1.0, 2.0]]), t.constant([[3.0], [4.0]]))
    assert out.value.tolist() == [[11.0]]


def test_matmul_shape_error_names_both_shapes():
    t = Tape()
    with pytest.raises(DimensionError, match=r"\(1, 2\).*\(3, 1\)"):
        ad.matmul(t.constant([[1.0, 2.0]]), t.constant([[1.0], [2.0], [3.0]]))


def test_matmul_gradient_matches_finite_differences(rng):
    a = Parameter("a", rng.normal(size=(3, 2)))
    b = Parameter("b", rng.normal(size=(2, 4)))

    def loss(tape):
        return ad.sum_all(ad.matmul(tape.parameter(a), tape.parameter(b)))

    assert check_gradients(loss, [a, b], tol=1e-6) < 1e-6


def test_softmax_uniform_and_closed_form():
    t = Tape()
    p = ad.softmax_rows(t.constant([[0.0, 0.0, 0.0, 0.0]]))
    assert np.allclose(p.value, 0.25, atol=1e-15)
    p2 = ad.softmax_rows(t.constant([[math.log(2.0), 0.0]]))
    assert np.allclose(p2.value, [[2.0 / 3.0, 1.0 / 3.0]], atol=1e-12)


def test_softmax_jvp_matches_finite_differences(rng):
    x = Parameter("x", rng.normal(size=(1, 8)))
    weights = rng.normal(size=(8, 1))

    def loss(tape):
        return ad.sum_all(ad.matmul(ad.softmax_rows(tape.parameter(x)), tape.constant(weights)))

    assert check_gradients(loss, [x], tol=1e-6) < 1e-6


def test_concat_cols_definition_and_empty_left():
    t = Tape()
    out = ad.concat_cols(t.constant([[1.0, 2.0]]), t.constant([[3.0]]))
    assert out.value.tolist() == [[1.0, 2.0, 3.0]]
    empty = t.constant(np.zeros((1, 0)))
    out2 = ad.concat_cols(empty, t.constant([[5.0, 6.0]]))
    assert out2.value.tolist() == [[5.0, 6.0]]


def test_concat_cols_row_mismatch():
    t = Tape()
    with pytest.raises(DimensionError):
        ad.concat_cols(t.constant([[1.0]]), t.constant([[1.0], [2.0]]))


def test_concat_gradient_split(rng):
    a = Parameter("a", rng.normal(size=(2, 3)))
    b = Parameter("b", rng.normal(size=(2, 2)))
    w = rng.normal(size=(5, 1))

    def loss(tape):
        return ad.sum_all(ad.matmul(ad.concat_cols(tape.parameter(a), tape.parameter(b)),
                                    tape.constant(w)))

    assert check_gradients(loss, [a, b], tol=1e-6) < 1e-6


def test_relu_definition():
    t = Tape()
    assert ad.relu(t.constant([[-1.0, 2.0]])).value.tolist() == [[0.0, 2.0]]


def test_layernorm_constant_row_is_bias():
    t = Tape()
    gain = t.constant([[3.0, 3.0, 3.0]])
    bias = t.constant([[0.25, 0.25, 0.25]])
    out = ad.layernorm(t.constant([[1.0, 1.0, 1.0]]), gain, bias)
    assert np.allclose(out.value, 0.25)


@pytest.mark.parametrize("kind", ["add", "sub", "scale", "relu", "layernorm"])
def test_elementwise_kinds_pass_finite_differences(kind, rng):
    x = Parameter("x", rng.normal(size=(3, 4)))
    y = Parameter("y", rng.normal(size=(3, 4)))
    gain = Parameter("gain", rng.normal(size=(1, 4)))
    bias = Parameter("bias", rng.normal(size=(1, 4)))
    reducer = rng.normal(size=(4, 1))

    def loss(tape):
        xn = tape.parameter(x)
        if kind == "add":
            out = ad.elementwise("add", xn, tape.parameter(y))
        elif kind == "sub":
            out = ad.elementwise("sub", xn, tape.parameter(y))
        elif kind == "scale":
            out = ad.elementwise("scale", xn, 1.7)
        elif kind == "relu":
            out = ad.elementwise("relu", xn)
        else:
            out = ad.elementwise("layernorm", xn, tape.parameter(gain), tape.parameter(bias))
        return ad.sum_all(ad.matmul(out, tape.constant(reducer)))

    params = {"add": [x, y], "sub": [x, y], "scale": [x], "relu": [x],
              "layernorm": [x, gain, bias]}[kind]
    assert check_gradients(loss, params, tol=1e-6) < 1e-6


def test_broadcast_add_row_bias(rng):
    x = Parameter("x", rng.normal(size=(4, 3)))
    bias = Parameter("b", rng.normal(size=(1, 3)))
    w = rng.normal(size=(3, 1))

    def loss(tape):
        return ad.sum_all(ad.matmul(ad.add(tape.parameter(x), tape.parameter(bias)),
                                    tape.constant(w)))

    assert check_gradients(loss, [x, bias], tol=1e-6) < 1e-6


def test_nll_uniform_row():
    t = Tape()
    p = ad.softmax_rows(t.constant([[0.0] * 16]))
    loss = ad.nll_of_index(p, 3)
    assert abs(loss.item() - math.log(16.0)) < 1e-12


def test_nll_concentrated_row():
    t = Tape()
    row = np.full((1, 4), 1e-12 / 3)
    row[0, 2] = 1.0 - 1e-12
    loss = ad.nll_of_index(t.constant(row), 2)
    assert abs(loss.item()) < 1e-9


def test_nll_target_out_of_range():
    t = Tape()
    p = ad.softmax_rows(t.constant([[0.0, 0.0]]))
    with pytest.raises(IndexError):
        ad.nll_of_index(p, 2)


def test_nll_gradient_through_softmax(rng):
    x = Parameter("x", rng.normal(size=(1, 8)))

    def loss(tape):
        return ad.nll_of_index(ad.softmax_rows(tape.parameter(x)), 5)

    assert check_gradients(loss, [x], tol=1e-6) < 1e-6


def test_backward_square_and_fanout():
    x = Parameter("x", [[3.0]])
    t = Tape()
    xn = t.parameter(x)
    y = ad.matmul(xn, xn)  # x * x for 1x1
    t.backward(y)
    assert x.grad[0, 0] == pytest.approx(6.0)

    x.zero_grad()
    t2 = Tape()
    xn2 = t2.parameter(x)
    t2.backward(ad.add(xn2, xn2))
    assert x.grad[0, 0] == pytest.approx(2.0)


def test_finite_checking_tape_rejects_inf():
    t = Tape(check_finite=True)
    with pytest.raises(ContractError, match="non-finite"):
        ad.relu(t.constant([[np.inf, 1.0]]))


def test_backward_requires_scalar_root():
    t = Tape()
    node = t.constant([[1.0, 2.0]])
    with pytest.raises(ContractError):
        t.backward(node)


def test_fanout_sum_of_functions(rng):
    # gradient of f(x) + g(x) equals grad f + grad g
    x = Parameter("x", rng.normal(size=(2, 2)))
    w1 = rng.normal(size=(2, 1))
    w2 = rng.normal(size=(2, 1))

    def run(parts):
        x.zero_grad()
        tape = Tape()
        xn = tape.parameter(x)
        terms = []
        if "f" in parts:
            terms.append(ad.sum_all(ad.matmul(ad.relu(xn), tape.constant(w1))))
        if "g" in parts:
            terms.append(ad.sum_all(ad.matmul(xn, tape.constant(w2))))
        root = terms[0] if len(terms) == 1 else ad.add(*terms)
        tape.backward(root)
        return x.grad.copy()

    combined = run("fg")
    assert np.allclose(combined, run("f") + run("g"), atol=1e-12)


def test_gather_rows_accumulates_duplicates(rng):
    table = Parameter("table", rng.normal(size=(5, 3)))

    def loss(tape):
        picked = ad.gather_rows(tape.parameter(table), [0, 2, 0])
        return ad.sum_all(picked)

    table.zero_grad()
    tape = Tape()
    tape.backward(loss(tape))
    assert np.allclose(table.grad[0], 2.0)
    assert np.allclose(table.grad[2], 1.0)
    assert np.allclose(table.grad[1], 0.0)


def test_slice_cols_roundtrip(rng):
    x = Parameter("x", rng.normal(size=(2, 6)))
    w = rng.normal(size=(2, 1))

    def loss(tape):
        xn = tape.parameter(x)
        return ad.sum_all(ad.matmul(ad.slice_cols(xn, 2, 4), tape.constant(w)))

    assert check_gradients(loss, [x], tol=1e-6) < 1e-6


def test_transpose_gradient(rng):
    x = Parameter("x", rng.normal(size=(2, 3)))
    w = rng.normal(size=(2, 1))

    def loss(tape):
        return ad.sum_all(ad.matmul(ad.transpose(tape.parameter(x)), tape.constant(w)))

    assert check_gradients(loss, [x], tol=1e-6) < 1e-6


def test_determinism_bit_identical(rng):
    x = Parameter("x", rng.normal(size=(4, 4)))
    w = rng.normal(size=(4, 2))

    def run():
        x.zero_grad()
        tape = Tape()
        out = ad.softmax_rows(ad.matmul(ad.relu(tape.parameter(x)), tape.constant(w)))
        root = ad.mean_all(out)
        tape.backward(root)
        return root.item(), x.grad.copy()

    v1, g1 = run()
    v2, g2 = run()
    assert v1 == v2
    assert np.array_equal(g1, g2)


def test_gradient_soundness_random_instances(rng):
    """Every primitive: 100 random instances against central finite differences."""
    worst = 0.0
    for trial in range(100):
        op = trial % 5
        rows = int(rng.integers(1, 4))
        cols = int(rng.integers(1, 5))
        x = Parameter("x", rng.normal(size=(rows, cols)))
        w = rng.normal(size=(cols, 1))
        red = rng.normal(size=(rows, 1))

        if op == 0:
            def loss(tape):
                return ad.sum_all(ad.matmul(ad.relu(tape.parameter(x)), tape.constant(w)))
            params = [x]
        elif op == 1:
            def loss(tape):
                return ad.sum_all(ad.matmul(ad.softmax_rows(tape.parameter(x)), tape.constant(w)))
            params = [x]
        elif op == 2:
            y = Parameter("y", rng.normal(size=(rows, cols)))

            def loss(tape):
                return ad.sum_all(ad.matmul(ad.sub(tape.parameter(x), tape.parameter(y)),
                                            tape.constant(w)))
            params = [x, y]
        elif op == 3:
            gain = Parameter("g", rng.normal(size=(1, cols)))
            bias = Parameter("b", rng.normal(size=(1, cols)))

            def loss(tape):
                return ad.sum_all(ad.matmul(
                    ad.layernorm(tape.parameter(x), tape.parameter(gain), tape.parameter(bias)),
                    tape.constant(w)))
            params = [x, gain, bias]
        else:
            target = int(rng.integers(cols))

            def loss(tape):
                probs = ad.softmax_rows(tape.parameter(x))
                return ad.sum_all(ad.nll_rows(probs, [target] * rows))
            params = [x]

        for p in params:
            p.zero_grad()
        tape = Tape()
        root = loss(tape)
        tape.backward(root)
        for p in params:
            fd = finite_diff(lambda: loss(Tape()).item(), p)
            worst = max(worst, max_rel_err(p.grad, fd))
    assert worst < 1e-5
