"""Engine tests: forward examples, gradient checks against central
differences, tape mechanics, and error conditions."""

import numpy as np
import pytest

import tricot.autodiff as ad
from tricot.autodiff import (Tape, Tensor, apply_primitive, backpropagate,
                             check_gradients)


def weighted(out, w):
    """Scalarize with fixed random weights so gradients are informative."""
    return ad.sum_reduce(ad.multiply(out, Tensor(w)))


def test_matmul_ones():
    out = ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 1))))
    assert out.shape == (2, 1)
    np.testing.assert_array_equal(out.data, 3.0)


def test_relu_values():
    out = ad.relu(Tensor([-2.0, 3.0, 0.0]))
    np.testing.assert_array_equal(out.data, [0.0, 3.0, 0.0])


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(0)
    out = ad.softmax_rows(Tensor(rng.normal(size=(5, 7)) * 3))
    np.testing.assert_allclose(out.data.sum(axis=-1), 1.0, atol=1e-12)


def test_pool_constant_block():
    x = np.full((1, 12, 2), 5.0)
    mask = np.ones((1, 12), dtype=bool)
    out = ad.masked_mean_pool(Tensor(x), mask, 4)
    assert out.shape == (1, 3, 2)
    np.testing.assert_array_equal(out.data, 5.0)


def test_upsample_two_to_four():
    x = np.array([[[0.0], [3.0]]])
    out = ad.upsample_linear(Tensor(x), 4)
    np.testing.assert_allclose(out.data[0, :, 0], [0.0, 1.0, 2.0, 3.0], atol=1e-12)


def test_dropout_identity_paths():
    x = Tensor(np.arange(6.0).reshape(2, 3))
    assert ad.dropout(x, 0.5, train=False) is x
    assert ad.dropout(x, 0.0, rng=np.random.default_rng(0)) is x


def test_dropout_inverted_scaling():
    rng = np.random.default_rng(7)
    x = np.ones((200, 50))
    out = apply_primitive("dropout", [Tensor(x)], {"rate": 0.25, "rng": rng, "train": True})
    vals = np.unique(out.data)
    np.testing.assert_allclose(vals, [0.0, 1.0 / 0.75])
    assert abs(out.data.mean() - 1.0) < 0.02


def test_layer_norm_moments():
    rng = np.random.default_rng(3)
    out = ad.layer_norm_rows(Tensor(rng.normal(2.0, 3.0, size=(4, 64))))
    np.testing.assert_allclose(out.data.mean(axis=-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.data.var(axis=-1), 1.0, atol=1e-3)


def test_attention_single_head_closed_form():
    rng = np.random.default_rng(11)
    q, k, v = (rng.normal(size=(2, 4, 6)) for _ in range(3))
    out = ad.attention(Tensor(q), Tensor(k), Tensor(v), heads=1)
    scores = q @ np.swapaxes(k, -1, -2) / np.sqrt(6)
    e = np.exp(scores - scores.max(axis=-1, keepdims=True))
    ref = (e / e.sum(axis=-1, keepdims=True)) @ v
    np.testing.assert_allclose(out.data, ref, atol=1e-12)


def test_attention_heads_partition():
    # h heads on block-diagonal content equal h independent single-head runs
    rng = np.random.default_rng(12)
    q, k, v = (rng.normal(size=(1, 5, 8)) for _ in range(3))
    out = ad.attention(Tensor(q), Tensor(k), Tensor(v), heads=2).data
    for h, sl in enumerate((slice(0, 4), slice(4, 8))):
        ref = ad.attention(Tensor(q[:, :, sl]), Tensor(k[:, :, sl]),
                           Tensor(v[:, :, sl]), heads=1).data
        np.testing.assert_allclose(out[:, :, sl], ref, atol=1e-12)


# -- gradient checks ---------------------------------------------------------

def _away_from_kinks(x, margin=0.05):
    x = x.copy()
    near = np.abs(x) < margin
    x[near] = np.sign(x[near] + 1e-12) * (margin + np.abs(x[near]))
    return x


GRAD_CASES = []


def grad_case(name):
    def deco(fn):
        GRAD_CASES.append((name, fn))
        return fn
    return deco


@grad_case("add-broadcast")
def _(rng, w):
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(1, 4))
    wt = w((3, 4))
    return lambda x, y: weighted(ad.add(x, y), wt), [a, b]


@grad_case("subtract")
def _(rng, w):
    a, b = rng.normal(size=(2, 3, 4)), rng.normal(size=(4,))
    wt = w((2, 3, 4))
    return lambda x, y: weighted(ad.subtract(x, y), wt), [a, b]


@grad_case("multiply-broadcast")
def _(rng, w):
    a, b = rng.normal(size=(3, 5)), rng.normal(size=(3, 1))
    wt = w((3, 5))
    return lambda x, y: weighted(ad.multiply(x, y), wt), [a, b]


@grad_case("scalar-scale")
def _(rng, w):
    a = rng.normal(size=(4, 2))
    wt = w((4, 2))
    return lambda x: weighted(ad.scale(x, -1.7), wt), [a]


@grad_case("matmul")
def _(rng, w):
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    wt = w((3, 2))
    return lambda x, y: weighted(ad.matmul(x, y), wt), [a, b]


@grad_case("matmul-batched")
def _(rng, w):
    a, b = rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 5))
    wt = w((2, 3, 5))
    return lambda x, y: weighted(ad.matmul(x, y), wt), [a, b]


@grad_case("transpose")
def _(rng, w):
    a = rng.normal(size=(3, 4))
    wt = w((4, 3))
    return lambda x: weighted(ad.transpose(x), wt), [a]


@grad_case("exp")
def _(rng, w):
    a = rng.normal(size=(3, 3)) * 0.8
    wt = w((3, 3))
    return lambda x: weighted(ad.exp(x), wt), [a]


@grad_case("log")
def _(rng, w):
    a = np.abs(rng.normal(size=(3, 3))) + 0.5
    wt = w((3, 3))
    return lambda x: weighted(ad.log(x), wt), [a]


@grad_case("sigmoid")
def _(rng, w):
    a = rng.normal(size=(4, 3)) * 2
    wt = w((4, 3))
    return lambda x: weighted(ad.sigmoid(x), wt), [a]


@grad_case("relu")
def _(rng, w):
    a = _away_from_kinks(rng.normal(size=(4, 4)))
    wt = w((4, 4))
    return lambda x: weighted(ad.relu(x), wt), [a]


@grad_case("row-softmax")
def _(rng, w):
    a = rng.normal(size=(3, 6)) * 2
    wt = w((3, 6))
    return lambda x: weighted(ad.softmax_rows(x), wt), [a]


@grad_case("row-l2-normalize")
def _(rng, w):
    a = rng.normal(size=(4, 5)) + 0.1
    wt = w((4, 5))
    return lambda x: weighted(ad.normalize_rows(x), wt), [a]


@grad_case("row-layer-norm")
def _(rng, w):
    a = rng.normal(size=(3, 8)) * 2
    wt = w((3, 8))
    return lambda x: weighted(ad.layer_norm_rows(x), wt), [a]


@grad_case("concat")
def _(rng, w):
    parts = [rng.normal(size=(2, n)) for n in (2, 3, 4)]
    wt = w((2, 9))
    return (lambda *xs: weighted(ad.concat(xs, axis=1), wt)), parts


@grad_case("slice")
def _(rng, w):
    a = rng.normal(size=(4, 6))
    wt = w((2, 3))
    return lambda x: weighted(ad.slice_(x, [1, 2], [3, 5]), wt), [a]


@grad_case("pool-full-mask")
def _(rng, w):
    a = rng.normal(size=(2, 13, 3))
    mask = np.ones((2, 13), dtype=bool)
    wt = w((2, 3, 3))
    return lambda x: weighted(ad.masked_mean_pool(x, mask, 5), wt), [a]


@grad_case("pool-holey-mask")
def _(rng, w):
    a = rng.normal(size=(2, 12, 2))
    mask = rng.random((2, 12)) > 0.3
    mask[:, :2] = True  # keep the first window non-empty in every row
    wt = w((2, 3, 2))
    return lambda x: weighted(ad.masked_mean_pool(x, mask, 4), wt), [a]


@grad_case("pool-empty-window")
def _(rng, w):
    a = rng.normal(size=(1, 12, 2))
    mask = np.ones((1, 12), dtype=bool)
    mask[0, 4:8] = False  # middle window copies its left neighbour
    wt = w((1, 3, 2))
    return lambda x: weighted(ad.masked_mean_pool(x, mask, 4), wt), [a]


@grad_case("upsample")
def _(rng, w):
    a = rng.normal(size=(2, 3, 4))
    wt = w((2, 9, 4))
    return lambda x: weighted(ad.upsample_linear(x, 9), wt), [a]


@grad_case("upsample-single-source")
def _(rng, w):
    a = rng.normal(size=(2, 1, 3))
    wt = w((2, 5, 3))
    return lambda x: weighted(ad.upsample_linear(x, 5), wt), [a]


@grad_case("attention")
def _(rng, w):
    q, k, v = (rng.normal(size=(2, 4, 6)) for _ in range(3))
    wt = w((2, 4, 6))
    return (lambda a, b, c: weighted(ad.attention(a, b, c, heads=2), wt)), [q, k, v]


@grad_case("dropout-fixed-mask")
def _(rng, w):
    a = rng.normal(size=(4, 5))
    wt = w((4, 5))
    def f(x):
        r = np.random.default_rng(123)
        out = apply_primitive("dropout", [x], {"rate": 0.3, "rng": r, "train": True})
        return weighted(out, wt)
    return f, [a]


@grad_case("mean-axis")
def _(rng, w):
    a = rng.normal(size=(3, 4, 5))
    wt = w((3, 5))
    return lambda x: weighted(ad.mean_reduce(x, axis=1), wt), [a]


@grad_case("sum-keepdims")
def _(rng, w):
    a = rng.normal(size=(3, 4))
    wt = w((3, 1))
    return lambda x: weighted(ad.sum_reduce(x, axis=1, keepdims=True), wt), [a]


@pytest.mark.parametrize("name,builder", GRAD_CASES, ids=[n for n, _ in GRAD_CASES])
def test_primitive_gradients(name, builder):
    for trial in range(5):
        rng = np.random.default_rng(hash((name, trial)) % 2**32)
        f, pts = builder(rng, lambda s: rng.normal(size=s))
        report = check_gradients(f, pts, step=1e-5, rtol=1e-4)
        assert report.passed, f"{name} trial {trial}: {report.inputs}"


# -- tape mechanics ----------------------------------------------------------

def test_tape_topological_order():
    tape = Tape()
    a = tape.leaf(np.ones((2, 2)))
    b = ad.relu(a)
    c = ad.add(a, b)
    d = ad.mean_reduce(c)
    assert a.node < b.node < c.node < d.node
    for i, rec in enumerate(tape.records):
        assert all(n < i for n in rec.input_nodes if n is not None)


def test_backprop_visits_each_node_once(monkeypatch):
    calls = []
    fwd, bwd, n = ad.PRIMITIVES["add"]
    monkeypatch.setitem(ad.PRIMITIVES, "add",
                        (fwd, lambda *a: calls.append(1) or bwd(*a), n))
    tape = Tape()
    x = tape.leaf(np.ones(3))
    y = ad.add(x, x)        # diamond: both inputs are the same node
    z = ad.add(y, y)
    loss = ad.sum_reduce(z)
    grads = backpropagate(tape, loss)
    assert calls == [1, 1]  # one visit per add record
    np.testing.assert_array_equal(grads[x.node].data, 4.0)


def test_gradients_cover_only_reachable_leaves():
    tape = Tape()
    x = tape.leaf(np.ones(3))
    unused = tape.leaf(np.ones(3))
    loss = ad.sum_reduce(ad.scale(x, 2.0))
    grads = backpropagate(tape, loss)
    assert x.node in grads
    assert unused.node not in grads
    np.testing.assert_array_equal(grads[x.node].data, 2.0)


def test_forward_determinism():
    def run():
        rng = np.random.default_rng(42)
        tape = Tape()
        x = tape.leaf(rng.normal(size=(4, 8)))
        h = ad.relu(ad.matmul(x, Tensor(rng.normal(size=(8, 8)))))
        out = ad.softmax_rows(h)
        loss = ad.mean_reduce(out)
        grads = backpropagate(tape, loss)
        return out.data.tobytes(), grads[x.node].data.tobytes()
    assert run() == run()


# -- error conditions --------------------------------------------------------

def test_unknown_primitive():
    with pytest.raises(ad.UnknownPrimitiveError):
        apply_primitive("conv2d", [Tensor(np.ones(3))])


def test_shape_mismatch():
    with pytest.raises(ad.ShapeError):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))


def test_log_domain():
    with pytest.raises(ad.DomainError):
        ad.log(Tensor([1.0, -0.5]))


def test_normalize_zero_row():
    with pytest.raises(ad.DomainError):
        ad.normalize_rows(Tensor(np.zeros((2, 3))))


def test_nonfinite_forward_rejected():
    with np.errstate(over="ignore"), pytest.raises(ad.NonFiniteError):
        ad.exp(Tensor(np.full(3, 1e9)))


def test_mixed_tapes_rejected():
    t1, t2 = Tape(), Tape()
    with pytest.raises(ad.AutodiffError):
        ad.add(t1.leaf(np.ones(2)), t2.leaf(np.ones(2)))


def test_nonscalar_loss_rejected():
    tape = Tape()
    x = tape.leaf(np.ones((2, 2)))
    with pytest.raises(ad.ShapeError):
        backpropagate(tape, ad.relu(x))


# -- composition properties --------------------------------------------------

def test_pool_then_upsample_preserves_constants_exactly():
    rng = np.random.default_rng(5)
    for _ in range(50):
        t = int(rng.integers(6, 65))
        k = int(rng.choice([4, 5, 6]))
        c = rng.normal() * 10
        x = np.full((2, t, 3), c)
        mask = np.ones((2, t), dtype=bool)
        pooled = ad.masked_mean_pool(Tensor(x), mask, k)
        up = ad.upsample_linear(pooled, t)
        assert np.array_equal(up.data, x), f"T={t} k={k} c={c}"


def test_upsample_endpoint_alignment():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(3, 4, 5))
    out = ad.upsample_linear(Tensor(x), 11).data
    np.testing.assert_array_equal(out[:, 0], x[:, 0])
    np.testing.assert_array_equal(out[:, -1], x[:, -1])
