"""Gradient correctness and optimizer behaviour for the tape engine."""

import numpy as np
import pytest

from molbayes import autodiff as ad
from molbayes.errors import NumericError


def rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """Max elementwise gap relative to the largest value in play."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), floor)
    return float(np.abs(a - b).max(initial=0.0) / scale)


def check_param_grads(build, x0: np.ndarray, tol: float = 1e-6):
    """Compare tape gradients against central differences on a flat vector.

    ``build(flat)`` must return (tape, loss) with every entry of ``flat``
    reachable through registered parameters.
    """
    tape, loss = build(x0)
    grads = ad.backward(tape, loss)
    flat_grad = np.concatenate([g.ravel() for g in grads.values()])

    def f(flat):
        _, out = build(flat)
        return out.item()

    fd = ad.finite_diff_grad(f, x0)
    assert rel_err(flat_grad, fd) < tol


# ---------------------------------------------------------------------------
# elementwise and binary ops


BINARY_KINDS = ["add", "sub", "mul", "div"]
UNARY_KINDS = ["relu", "leaky_relu", "elu", "sigmoid", "exp", "softplus"]


@pytest.mark.parametrize("kind", BINARY_KINDS)
def test_binary_op_grads(kind):
    rng = np.random.default_rng(11)
    for trial in range(20):
        n = int(rng.integers(1, 7))
        x0 = rng.normal(size=2 * n)
        if kind == "div":
            x0[n:] = np.sign(x0[n:]) * (np.abs(x0[n:]) + 0.5)

        def build(flat):
            tape = ad.Tape()
            a = tape.parameter("a", flat[:n])
            b = tape.parameter("b", flat[n:])
            out = ad.forward_op(kind, [a, b])
            return tape, ad.tsum(ad.mul(out, out))

        check_param_grads(build, x0)


@pytest.mark.parametrize("kind", UNARY_KINDS)
def test_unary_op_grads(kind):
    rng = np.random.default_rng(13)
    for trial in range(20):
        n = int(rng.integers(1, 9))
        x0 = rng.normal(size=n)
        # keep points away from the relu-family kink at 0
        x0[np.abs(x0) < 1e-3] = 0.5

        def build(flat):
            tape = ad.Tape()
            a = tape.parameter("a", flat)
            out = ad.forward_op(kind, [a])
            return tape, ad.tsum(ad.mul(out, out))

        check_param_grads(build, x0)


def test_log_and_clip_min_grads():
    rng = np.random.default_rng(17)
    for trial in range(10):
        n = int(rng.integers(1, 9))
        x0 = rng.uniform(0.5, 3.0, size=n)

        def build(flat):
            tape = ad.Tape()
            a = tape.parameter("a", flat)
            out = ad.log(ad.clip_min(a, 1e-12))
            return tape, ad.tsum(out)

        check_param_grads(build, x0)


def test_clip_min_clamps_and_zeroes_grad():
    tape = ad.Tape()
    a = tape.parameter("a", np.array([-1.0, 0.5, 2.0]))
    out = ad.clip_min(a, 0.0)
    assert np.array_equal(out.data, [0.0, 0.5, 2.0])
    grads = ad.backward(tape, ad.tsum(out))
    assert np.array_equal(grads["a"], [0.0, 1.0, 1.0])


def test_broadcasting_grads_sum_correctly():
    # (3,2) + (2,) exercises the unbroadcast path
    def build(flat):
        tape = ad.Tape()
        a = tape.parameter("a", flat[:6].reshape(3, 2))
        b = tape.parameter("b", flat[6:])
        return tape, ad.tsum(ad.mul(ad.add(a, b), ad.add(a, b)))

    rng = np.random.default_rng(19)
    check_param_grads(build, rng.normal(size=8))


def test_softplus_matches_closed_form_in_far_tail():
    tape = ad.Tape()
    a = tape.parameter("a", np.array(-20.0))
    out = ad.softplus(a)
    # log(1 + e^-20) = 2.0611536181902037e-09
    assert abs(out.item() - 2.0611536181902037e-09) < 1e-15
    big = ad.softplus(ad.Tensor(np.array([800.0]))).data
    assert np.isfinite(big).all() and abs(big[0] - 800.0) < 1e-9


def test_sigmoid_saturates_without_overflow():
    z = ad.sigmoid(ad.Tensor(np.array([-800.0, 0.0, 800.0]))).data
    assert np.all(np.isfinite(z))
    assert z[0] == 0.0 and z[1] == 0.5 and z[2] == 1.0


# ---------------------------------------------------------------------------
# structural ops


def test_matmul_and_linear_grads():
    rng = np.random.default_rng(23)
    for trial in range(10):
        n, d_in, d_out = (int(rng.integers(1, 5)) for _ in range(3))

        def build(flat):
            tape = ad.Tape()
            x = tape.parameter("x", flat[:n * d_in].reshape(n, d_in))
            w = tape.parameter("w", flat[n * d_in:].reshape(d_out, d_in))
            out = ad.linear(x, w)
            return tape, ad.tsum(ad.mul(out, out))

        check_param_grads(build, rng.normal(size=n * d_in + d_out * d_in))

        def build_mm(flat):
            tape = ad.Tape()
            x = tape.parameter("x", flat[:n * d_in].reshape(n, d_in))
            w = tape.parameter("w", flat[n * d_in:].reshape(d_in, d_out))
            out = ad.matmul(x, w)
            return tape, ad.tsum(ad.mul(out, out))

        check_param_grads(build_mm, rng.normal(size=n * d_in + d_in * d_out))


def test_linear_is_x_w_transpose():
    x = np.array([[1.0, 2.0]])
    w = np.array([[3.0, 4.0], [5.0, 6.0]])  # (d_out=2, d_in=2)
    out = ad.linear(ad.Tensor(x), ad.Tensor(w)).data
    assert np.allclose(out, x @ w.T)


def test_matmul_shape_mismatch_raises():
    with pytest.raises(ad.ShapeError):
        ad.matmul(ad.Tensor(np.zeros((2, 3))), ad.Tensor(np.zeros((2, 3))))
    with pytest.raises(ad.ShapeError):
        ad.linear(ad.Tensor(np.zeros((2, 3))), ad.Tensor(np.zeros((4, 5))))


def test_concat_reshape_slice_gather_grads():
    rng = np.random.default_rng(29)
    for trial in range(10):
        n = 6
        index = rng.integers(0, 3, size=5)

        def build(flat):
            tape = ad.Tape()
            a = tape.parameter("a", flat[:n])
            b = tape.parameter("b", flat[n:])
            joined = ad.concat([a, b], axis=0)
            mat = ad.reshape(joined, (3, 4))
            rows = ad.gather_rows(mat, index)
            piece = ad.slice1d(ad.reshape(rows, (20,)), 2, 15)
            return tape, ad.tsum(ad.mul(piece, piece))

        check_param_grads(build, rng.normal(size=2 * n))


def test_gather_rows_accumulates_repeated_indices():
    tape = ad.Tape()
    x = tape.parameter("x", np.array([[1.0], [2.0]]))
    out = ad.gather_rows(x, np.array([0, 0, 1]))
    grads = ad.backward(tape, ad.tsum(out))
    assert np.array_equal(grads["x"], [[2.0], [1.0]])


def test_segment_sum_values_and_grads():
    tape = ad.Tape()
    x = tape.parameter("x", np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]))
    out = ad.segment_sum(x, np.array([1, 0, 1]), 3)
    assert np.array_equal(out.data, [[3.0, 4.0], [6.0, 8.0], [0.0, 0.0]])

    rng = np.random.default_rng(31)
    for trial in range(10):
        n, d, k = 7, 3, 4
        seg = rng.integers(0, k, size=n)

        def build(flat):
            tape = ad.Tape()
            x = tape.parameter("x", flat.reshape(n, d))
            out = ad.segment_sum(x, seg, k)
            return tape, ad.tsum(ad.mul(out, out))

        check_param_grads(build, rng.normal(size=n * d))


def test_segment_softmax_matches_per_segment_softmax():
    rng = np.random.default_rng(37)
    for trial in range(10):
        n, d, k = 8, 2, 3
        seg = rng.integers(0, k, size=n)
        x = rng.normal(size=(n, d))
        out = ad.segment_softmax(ad.Tensor(x), seg, k).data
        for s in range(k):
            rows = seg == s
            if not rows.any():
                continue
            e = np.exp(x[rows] - x[rows].max(axis=0))
            assert np.allclose(out[rows], e / e.sum(axis=0), atol=1e-12)
        assert np.allclose(
            np.add.reduceat(np.zeros((k, d)), [0])[:0].sum(), 0.0)

        def build(flat):
            tape = ad.Tape()
            xv = tape.parameter("x", flat.reshape(n, d))
            out = ad.segment_softmax(xv, seg, k)
            return tape, ad.tsum(ad.mul(out, out))

        check_param_grads(build, x.ravel())


def test_segment_softmax_empty_segment_is_fine():
    x = np.array([[0.0], [1.0]])
    out = ad.segment_softmax(ad.Tensor(x), np.array([2, 2]), 4).data
    e = np.exp(x - 1.0)
    assert np.allclose(out, e / e.sum())


def test_segment_ids_out_of_range_raise():
    with pytest.raises(ad.ShapeError):
        ad.segment_sum(ad.Tensor(np.zeros((2, 1))), np.array([0, 5]), 3)


def test_dropout_semantics_and_grad():
    rng = np.random.default_rng(41)
    x = np.ones((4, 3))
    mask = (rng.random(x.shape) >= 0.5).astype(np.float64)
    out = ad.dropout(ad.Tensor(x), 0.5, rng, mask=mask).data
    assert np.allclose(out, mask * 2.0)

    # p=0 passes through untouched
    t = ad.Tensor(x)
    assert ad.dropout(t, 0.0, rng) is t

    def build(flat):
        tape = ad.Tape()
        a = tape.parameter("a", flat.reshape(4, 3))
        out = ad.dropout(a, 0.5, rng, mask=mask)
        return tape, ad.tsum(ad.mul(out, out))

    check_param_grads(build, rng.normal(size=12))


def test_dropout_keep_rate_is_unbiased():
    rng = np.random.default_rng(43)
    x = ad.Tensor(np.ones(200_000))
    out = ad.dropout(x, 0.2, rng).data
    assert abs(out.mean() - 1.0) < 0.01


# ---------------------------------------------------------------------------
# tape mechanics


def test_unknown_op_kind_rejected():
    with pytest.raises(ad.UnknownOpError):
        ad.forward_op("convolve", [ad.Tensor(np.zeros(3))])


def test_unreachable_param_gets_zero_grad():
    tape = ad.Tape()
    a = tape.parameter("a", np.ones(3))
    tape.parameter("unused", np.ones((2, 2)))
    grads = ad.backward(tape, ad.tsum(a))
    assert np.array_equal(grads["a"], np.ones(3))
    assert np.array_equal(grads["unused"], np.zeros((2, 2)))


def test_backward_is_repeatable():
    tape = ad.Tape()
    a = tape.parameter("a", np.array([1.0, -2.0, 3.0]))
    loss = ad.tsum(ad.mul(ad.sigmoid(a), a))
    g1 = ad.backward(tape, loss)
    g2 = ad.backward(tape, loss)
    assert np.array_equal(g1["a"], g2["a"])


def test_backward_rejects_nonscalar_and_foreign_loss():
    tape = ad.Tape()
    a = tape.parameter("a", np.ones(3))
    with pytest.raises(ad.ShapeError):
        ad.backward(tape, ad.mul(a, 2.0))
    other = ad.Tape()
    b = other.parameter("b", np.ones(()))
    with pytest.raises(ValueError):
        ad.backward(tape, ad.tsum(b))


def test_fanout_accumulates_grads():
    tape = ad.Tape()
    a = tape.parameter("a", np.array(3.0))
    loss = ad.add(ad.mul(a, a), ad.mul(2.0, a))  # a^2 + 2a
    grads = ad.backward(tape, loss)
    assert np.allclose(grads["a"], 8.0)


def test_duplicate_parameter_name_rejected():
    tape = ad.Tape()
    tape.parameter("w", np.ones(2))
    with pytest.raises(ValueError):
        tape.parameter("w", np.ones(2))


def test_untracked_ops_record_nothing():
    tape = ad.Tape()
    tape.parameter("a", np.ones(2))
    n_before = len(tape.records)
    ad.mul(ad.Tensor(np.ones(3)), ad.Tensor(np.ones(3)))
    assert len(tape.records) == n_before


def test_finite_diff_rejects_nondeterministic_f():
    state = {"n": 0}

    def f(x):
        state["n"] += 1
        return float(x.sum()) + state["n"]

    with pytest.raises(ValueError):
        ad.finite_diff_grad(f, np.zeros(2))


# ---------------------------------------------------------------------------
# optimizers


def test_sgd_step_matches_formula():
    state = ad.OptimizerState(mode="sgd", lr=0.1, weight_decay=0.5)
    w = np.array([1.0, -2.0])
    g = np.array([0.2, 0.4])
    out = ad.optimizer_step(state, w, g)
    assert np.allclose(out, w - 0.1 * (g + 0.5 * w))


def test_adam_first_step_is_minus_lr_times_sign():
    # bias correction makes step one exactly lr * g/(|g| + eps')
    state = ad.OptimizerState(mode="adam", lr=1e-3)
    out = ad.optimizer_step(state, np.array([0.0]), np.array([1.0]))
    assert abs(out[0] + 1e-3) < 1e-6


def test_adam_converges_on_quadratic():
    state = ad.OptimizerState(mode="adam", lr=0.05)
    w = np.array([5.0, -3.0])
    target = np.array([1.0, 2.0])
    for _ in range(500):
        w = ad.optimizer_step(state, w, 2.0 * (w - target))
    assert np.allclose(w, target, atol=1e-3)


def test_adam_matches_reference_trace():
    # three hand-stepped iterations of the standard update
    state = ad.OptimizerState(mode="adam", lr=0.1)
    w = np.array([1.0])
    m = v = 0.0
    w_ref = 1.0
    for t in range(1, 4):
        g = 2.0 * w_ref
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        w_ref -= 0.1 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        w = ad.optimizer_step(state, w, 2.0 * w)
    assert np.allclose(w, [w_ref], atol=1e-12)


def test_optimizer_rejects_nonfinite_grads():
    state = ad.OptimizerState(mode="sgd", lr=0.1)
    with pytest.raises(NumericError):
        ad.optimizer_step(state, np.zeros(2), np.array([0.0, np.nan]))


def test_optimizer_rejects_bad_config():
    with pytest.raises(ValueError):
        ad.OptimizerState(mode="rmsprop", lr=0.1)
    with pytest.raises(ValueError):
        ad.OptimizerState(mode="sgd", lr=-1.0)


def test_weight_decay_is_gradient_coupled_for_adam():
    # with wd, a zero-gradient point still moves toward the origin
    state = ad.OptimizerState(mode="adam", lr=0.01, weight_decay=1e-1)
    w = np.array([2.0])
    out = ad.optimizer_step(state, w, np.array([0.0]))
    assert out[0] < 2.0
