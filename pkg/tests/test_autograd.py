"""Gradient correctness by central finite differences (double precision),
plus the structural guarantees: purity, one-shot backward, exact mask zeros."""

import numpy as np
import pytest

from refinpaint import autograd as ag
from refinpaint.autograd import DoubleBackward, FullyMaskedRow, Tensor
from refinpaint.errors import ShapeMismatch

H = 1e-5
REL_TOL = 1e-4
N_INSTANCES = 20


def rel_err(a, b):
    denom = max(abs(a), abs(b), 1e-6)
    return abs(a - b) / denom


def gradcheck(make_out, tensors, rng):
    """Compare autograd gradients with central differences on every element
    of every input tensor, through a random linear functional of the output."""
    out = make_out()
    proj = rng.normal(size=out.data.shape)
    loss = ag.tsum(ag.mul(out, Tensor(proj)))
    loss.backward()
    for t in tensors:
        got = t.grad.copy()
        flat = t.data.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + H
            up = float((make_out().data * proj).sum())
            flat[idx] = orig - H
            down = float((make_out().data * proj).sum())
            flat[idx] = orig
            fd = (up - down) / (2 * H)
            assert rel_err(got.reshape(-1)[idx], fd) < REL_TOL, (
                f"element {idx}: autograd {got.reshape(-1)[idx]} vs fd {fd}"
            )


def leaf(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


def test_grad_add_broadcast():
    rng = np.random.default_rng(0)
    for _ in range(N_INSTANCES):
        a, b = leaf(rng, 3, 4), leaf(rng, 4)
        gradcheck(lambda: ag.add(a, b), [a, b], rng)


def test_grad_mul():
    rng = np.random.default_rng(1)
    for _ in range(N_INSTANCES):
        a, b = leaf(rng, 2, 5), leaf(rng, 2, 5)
        gradcheck(lambda: ag.mul(a, b), [a, b], rng)


def test_grad_scale():
    rng = np.random.default_rng(11)
    for _ in range(N_INSTANCES):
        a = leaf(rng, 3, 3)
        gradcheck(lambda: ag.scale(a, 0.37), [a], rng)


def test_grad_matmul_batched():
    rng = np.random.default_rng(2)
    for _ in range(N_INSTANCES):
        a, b = leaf(rng, 2, 3, 4), leaf(rng, 4, 5)
        gradcheck(lambda: ag.matmul(a, b), [a, b], rng)


def test_grad_transpose_reshape_slice_concat():
    rng = np.random.default_rng(3)
    for _ in range(N_INSTANCES):
        a = leaf(rng, 3, 4)
        gradcheck(lambda: ag.transpose(a), [a], rng)
        b = leaf(rng, 2, 6)
        gradcheck(lambda: ag.reshape(b, (3, 4)), [b], rng)
        c = leaf(rng, 3, 6)
        gradcheck(lambda: ag.slice_axis(c, 1, 1, 4), [c], rng)
        d, e = leaf(rng, 3, 2), leaf(rng, 3, 3)
        gradcheck(lambda: ag.concat_last_dim([d, e]), [d, e], rng)


def test_grad_embedding_lookup():
    rng = np.random.default_rng(4)
    for _ in range(N_INSTANCES):
        table = leaf(rng, 7, 3)
        ids = rng.integers(0, 7, size=(2, 4))
        gradcheck(lambda: ag.embedding_lookup(table, ids), [table], rng)


def test_grad_linear():
    rng = np.random.default_rng(5)
    for _ in range(N_INSTANCES):
        x, w, b = leaf(rng, 2, 3, 4), leaf(rng, 4, 5), leaf(rng, 5)
        gradcheck(lambda: ag.linear(x, w, b), [x, w, b], rng)


def test_grad_layernorm():
    rng = np.random.default_rng(6)
    for _ in range(N_INSTANCES):
        x, g, b = leaf(rng, 2, 3, 6), leaf(rng, 6), leaf(rng, 6)
        gradcheck(lambda: ag.layernorm(x, g, b), [x, g, b], rng)


def test_grad_gelu():
    rng = np.random.default_rng(7)
    for _ in range(N_INSTANCES):
        x = leaf(rng, 3, 5)
        gradcheck(lambda: ag.gelu(x), [x], rng)


def test_grad_dropout_fixed_mask():
    rng = np.random.default_rng(8)
    for i in range(N_INSTANCES):
        x = leaf(rng, 4, 5)
        # identical rng per evaluation so the FD sees one fixed mask
        gradcheck(lambda: ag.dropout(x, 0.4, np.random.default_rng(1000 + i)), [x], rng)


def test_grad_masked_softmax():
    rng = np.random.default_rng(9)
    for _ in range(N_INSTANCES):
        x = leaf(rng, 4, 4)
        allow = rng.random((4, 4)) > 0.3
        allow[np.arange(4), np.arange(4)] = True  # no fully masked rows
        gradcheck(lambda: ag.masked_softmax(x, allow), [x], rng)


def test_grad_cross_entropy_masked():
    rng = np.random.default_rng(10)
    for _ in range(N_INSTANCES):
        logits = leaf(rng, 3, 5, 7)
        targets = rng.integers(0, 7, size=(3, 5))
        mask = rng.random((3, 5)) > 0.4
        mask[0, 0] = True
        got = None

        def make():
            return ag.cross_entropy(logits, targets, mask)

        loss = make()
        loss.backward()
        got = logits.grad.copy()
        flat = logits.data.reshape(-1)
        for idx in rng.choice(flat.size, size=12, replace=False):
            orig = flat[idx]
            flat[idx] = orig + H
            up = make().item()
            flat[idx] = orig - H
            down = make().item()
            flat[idx] = orig
            fd = (up - down) / (2 * H)
            assert rel_err(got.reshape(-1)[idx], fd) < REL_TOL


def test_grad_bce_with_logits_masked():
    rng = np.random.default_rng(12)
    for _ in range(N_INSTANCES):
        logits = leaf(rng, 4, 6)
        labels = (rng.random((4, 6)) > 0.5).astype(float)
        mask = rng.random((4, 6)) > 0.4
        mask[0, 0] = True
        loss = ag.bce_with_logits(logits, labels, mask)
        loss.backward()
        got = logits.grad.copy()
        flat = logits.data.reshape(-1)
        for idx in rng.choice(flat.size, size=10, replace=False):
            orig = flat[idx]
            flat[idx] = orig + H
            up = ag.bce_with_logits(logits, labels, mask).item()
            flat[idx] = orig - H
            down = ag.bce_with_logits(logits, labels, mask).item()
            flat[idx] = orig
            fd = (up - down) / (2 * H)
            assert rel_err(got.reshape(-1)[idx], fd) < REL_TOL


# --- closed forms ----------------------------------------------------------------


def test_cross_entropy_uniform_logits_is_log_vocab():
    logits = Tensor(np.zeros((4, 189)))
    targets = np.arange(4) + 10
    loss = ag.cross_entropy(logits, targets)
    assert abs(loss.item() - np.log(189)) < 1e-9


def test_cross_entropy_two_symbol_closed_form():
    # logits [ln 3, 0], target 0: -ln(3/4) = ln(4/3)
    logits = Tensor(np.array([[np.log(3.0), 0.0]]))
    loss = ag.cross_entropy(logits, np.array([0]))
    assert abs(loss.item() - np.log(4.0 / 3.0)) < 1e-12


def test_bce_logit_zero_label_one_is_ln2():
    loss = ag.bce_with_logits(Tensor(np.zeros(1)), np.ones(1))
    assert abs(loss.item() - np.log(2.0)) < 1e-12


def test_matmul_identity():
    a = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
    out = ag.matmul(a, Tensor(np.eye(2)))
    assert np.array_equal(out.data, a.data)


def test_empty_position_mask_gives_zero_loss_and_grad():
    logits = Tensor(np.random.default_rng(0).normal(size=(2, 3, 5)), requires_grad=True)
    loss = ag.cross_entropy(logits, np.zeros((2, 3), dtype=int), np.zeros((2, 3), dtype=bool))
    assert loss.item() == 0.0
    loss.backward()
    assert logits.grad is None or not logits.grad.any()
    logits2 = Tensor(np.ones((2, 3)), requires_grad=True)
    loss2 = ag.bce_with_logits(logits2, np.ones((2, 3)), np.zeros((2, 3), dtype=bool))
    assert loss2.item() == 0.0


# --- masked softmax semantics ----------------------------------------------------


def test_masked_softmax_examples():
    out = ag.masked_softmax(Tensor(np.zeros((2, 2))), np.ones((2, 2), dtype=bool))
    assert np.allclose(out.data, np.full((2, 2), 0.5))
    eye = np.eye(3, dtype=bool)
    out = ag.masked_softmax(Tensor(np.random.default_rng(0).normal(size=(3, 3))), eye)
    assert np.array_equal(out.data, np.eye(3))
    row = ag.masked_softmax(Tensor(np.array([[0.0, np.log(3.0)]])), np.ones((1, 2), bool))
    assert np.allclose(row.data, [[0.25, 0.75]], atol=1e-12)


def test_masked_softmax_rows_sum_to_one_and_exact_zeros():
    rng = np.random.default_rng(13)
    scores = Tensor(rng.normal(size=(5, 8, 8)) * 10, requires_grad=True)
    allow = rng.random((8, 8)) > 0.4
    allow[np.arange(8), np.arange(8)] = True
    out = ag.masked_softmax(scores, allow)
    assert np.allclose(out.data.sum(axis=-1), 1.0, atol=1e-6)
    assert (out.data[:, ~allow] == 0.0).all()
    ag.tsum(ag.mul(out, Tensor(rng.normal(size=out.data.shape)))).backward()
    assert (scores.grad[:, ~allow] == 0.0).all()


def test_masked_softmax_fully_masked_row_raises():
    with pytest.raises(FullyMaskedRow):
        ag.masked_softmax(Tensor(np.zeros((2, 2))), np.array([[True, True], [False, False]]))


# --- structural guarantees --------------------------------------------------------


def test_ops_do_not_mutate_inputs():
    rng = np.random.default_rng(14)
    a = Tensor(rng.normal(size=(4, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(4, 4)), requires_grad=True)
    snap_a, snap_b = a.data.copy(), b.data.copy()
    allow = np.tril(np.ones((4, 4), dtype=bool))
    out = ag.masked_softmax(ag.scale(ag.matmul(ag.gelu(a), ag.transpose(b)), 0.5), allow)
    loss = ag.tsum(ag.mul(out, Tensor(rng.normal(size=(4, 4)))))
    loss.backward()
    assert np.array_equal(a.data, snap_a)
    assert np.array_equal(b.data, snap_b)


def test_second_backward_is_an_error():
    a = Tensor(np.ones((2, 2)), requires_grad=True)
    loss = ag.tsum(ag.mul(a, a))
    loss.backward()
    with pytest.raises(DoubleBackward):
        loss.backward()
    # a second graph over the same leaves is fine
    ag.tsum(ag.mul(a, a)).backward()


def test_backward_needs_scalar_root():
    a = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ShapeMismatch):
        ag.mul(a, a).backward()


def test_no_grad_disables_recording():
    a = Tensor(np.ones((2, 2)), requires_grad=True)
    with ag.no_grad():
        out = ag.mul(a, a)
    assert out._backward is None and out._parents == ()


def test_shape_mismatch_messages_carry_both_shapes():
    a, b = Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5)))
    with pytest.raises(ShapeMismatch) as err:
        ag.matmul(a, b)
    assert "(2, 3)" in str(err.value) and "(4, 5)" in str(err.value)


def test_gradient_accumulates_across_shared_use():
    a = Tensor(np.array([2.0]), requires_grad=True)
    out = ag.add(ag.mul(a, a), ag.mul(a, a))  # 2a^2, d/da = 4a = 8
    ag.tsum(out).backward()
    assert np.allclose(a.grad, [8.0])
