import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from idida import diffcore as dc


def numeric_grad(f, x, h=1e-6):
    """Central differences of scalar ``f`` at ``x`` (float array, modified in place then restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def max_rel(a, n, floor=1e-5):
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


def norm_rel(a, n):
    # per-tensor form; elementwise ratios blow up on near-zero components from rounding alone
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), 1e-12))


def check_op(build, *shapes, seed=0, tol=1e-6):
    """Gradient of ``sum(w * build(*xs))`` against finite differences for every input."""
    rng = np.random.default_rng(seed)
    xs = [dc.tensor(rng.uniform(-2, 2, size=s), requires_grad=True) for s in shapes]
    out_shape = build(*xs).shape
    w = rng.normal(size=out_shape)

    def f():
        y = build(*xs)
        return float(np.sum(w * y.data))

    y = build(*xs)
    loss = dc.sum_all(dc.mask_mul(y, w)) if y.ndim else y
    if not y.ndim:
        loss = dc.scale(y, float(w))
    dc.backward(loss)
    for x in xs:
        num = numeric_grad(f, x.data)
        assert norm_rel(x.grad, num) < tol, build


# ---------------------------------------------------------------- primitives


def test_softmax_examples():
    assert np.allclose(dc.softmax(dc.tensor([1.0, 1.0])).data, [0.5, 0.5])
    assert np.allclose(dc.softmax(dc.tensor([0.0, math.log(3.0)])).data, [0.25, 0.75], atol=1e-15)


def test_softmax_empty_row_raises():
    with pytest.raises(dc.ShapeError):
        dc.softmax(dc.tensor(np.zeros((2, 0))))


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(dc.ShapeError) as exc:
        dc.matmul(dc.tensor(np.zeros((2, 3))), dc.tensor(np.zeros((4, 2))))
    msg = str(exc.value)
    assert "matmul" in msg and "(2, 3)" in msg and "(4, 2)" in msg


def test_elementwise_shape_mismatch():
    with pytest.raises(dc.ShapeError):
        dc.add(dc.tensor(np.zeros(3)), dc.tensor(np.zeros(4)))
    with pytest.raises(dc.ShapeError):
        dc.mul(dc.tensor(np.zeros((2, 2))), dc.tensor(np.zeros(2)))


def test_scalar_times_tensor_is_only_broadcast():
    x = dc.tensor([1.0, 2.0], requires_grad=True)
    y = 3.0 * x
    assert np.array_equal(y.data, [3.0, 6.0])


PRIMITIVES = [
    ("matmul", lambda a, b: dc.matmul(a, b), [(3, 4), (4, 2)]),
    ("add", dc.add, [(3, 2), (3, 2)]),
    ("sub", dc.sub, [(3, 2), (3, 2)]),
    ("mul", dc.mul, [(3, 2), (3, 2)]),
    ("scale", lambda a: dc.scale(a, -1.7), [(4,)]),
    ("scale_by_tensor", lambda a, c: dc.scale(a, c), [(2, 3), (1,)]),
    ("concat", lambda a, b: dc.concat([a, b]), [(3, 2), (3, 4)]),
    ("softmax", dc.softmax, [(3, 5)]),
    ("softmax_vec", dc.softmax, [(6,)]),
    ("sigmoid", dc.sigmoid, [(7,)]),
    ("mask_mul", lambda a: dc.mask_mul(a, np.array([[1.0, 0.0], [0.5, 2.0]])), [(2, 2)]),
    ("mean", dc.mean, [(3, 4)]),
    ("mean0", lambda a: dc.mean(a, axis=0), [(3, 4)]),
    ("mean1", lambda a: dc.mean(a, axis=1), [(3, 4)]),
    ("variance", dc.variance, [(5,)]),
    ("layer_norm", lambda x, g, b: dc.layer_norm(x, g, b), [(4, 5), (5,), (5,)]),
    ("transpose", dc.transpose, [(2, 3)]),
    ("gather", lambda a: dc.gather_rows(a, [2, 0, 2, 1]), [(3, 2)]),
    ("exp", dc.exp, [(4,)]),
    ("softplus", dc.softplus, [(4,)]),
    ("add_row", dc.add_row, [(3, 2), (2,)]),
    ("mul_row", dc.mul_row, [(3, 2), (2,)]),
    ("scale_rows", dc.scale_rows, [(3, 2), (3,)]),
    ("row_dot", dc.row_dot, [(4, 3), (4, 3)]),
    ("reshape", lambda a: dc.reshape(a, (3, 2)), [(2, 3)]),
    ("bce_terms", lambda a: dc.bce_with_logits_terms(a, np.array([1.0, 0.0, 1.0, 0.0])), [(4,)]),
    ("softmax_ce", lambda a: dc.softmax_ce_terms(a, np.array([0, 2, 1])), [(3, 3)]),
    ("gated_bce", lambda a: dc.gated_bce_means(a, np.array([0.3, 0.9, 1.4]), np.array([1.0, 0.0, 1.0, 0.0, 0.0])), [(5,)]),
]


@pytest.mark.parametrize("name,build,shapes", PRIMITIVES, ids=[p[0] for p in PRIMITIVES])
@pytest.mark.parametrize("seed", range(4))
def test_primitive_gradients(name, build, shapes, seed):
    check_op(build, *shapes, seed=seed)


def test_relu_gradient_away_from_kink():
    rng = np.random.default_rng(3)
    x = rng.uniform(-2, 2, size=20)
    x[np.abs(x) < 0.05] = 0.5
    t = dc.tensor(x, requires_grad=True)
    dc.backward(dc.sum_all(dc.relu(t)))
    assert np.array_equal(t.grad, (x > 0).astype(float))


def test_segment_ops_gradients():
    seg = dc.Segments(np.array([0, 0, 1, 2, 2, 2]), 3)
    check_op(lambda s: dc.segment_softmax(s, seg), (6,))
    check_op(lambda x: dc.segment_sum(x, seg), (6, 2))


def test_primitive_gradients_on_100_random_inputs():
    # compact sweep over the core ops with fresh inputs each time
    core = [p for p in PRIMITIVES if p[0] in ("matmul", "mul", "softmax", "sigmoid", "layer_norm", "variance", "concat")]
    for seed in range(100):
        name, build, shapes = core[seed % len(core)]
        check_op(build, *shapes, seed=100 + seed)


def test_gated_bce_matches_dense_route():
    rng = np.random.default_rng(0)
    logits = dc.tensor(rng.normal(size=50) * 3, requires_grad=True)
    y = (rng.random(50) < 0.5).astype(float)
    gates = rng.uniform(0.5, 1.0, size=130)
    fused = dc.gated_bce_means(logits, gates, y, chunk=16)
    dense = dc.mean(
        dc.bce_with_logits_terms(dc.matmul(dc.constant(gates[:, None]), dc.reshape(logits, (1, 50))), np.tile(y, (130, 1))), axis=1
    )
    assert np.allclose(fused.data, dense.data, rtol=1e-13, atol=1e-15)
    w = rng.normal(size=130)
    dc.backward(dc.sum_all(dc.mask_mul(fused, w)))
    g_fused = logits.grad.copy()
    logits.grad = None
    dc.backward(dc.sum_all(dc.mask_mul(dense, w)))
    assert np.allclose(g_fused, logits.grad, rtol=1e-12, atol=1e-15)


@pytest.mark.parametrize("scale", [0.1, 3.0, 40.0])
def test_gated_bce_interpolation_matches_exact(scale):
    rng = np.random.default_rng(int(scale * 10))
    n, S = 400, 1000
    logits = dc.tensor(rng.normal(size=n) * scale, requires_grad=True)
    y = (rng.random(n) < 0.5).astype(float)
    gates = 1.0 / (1.0 + np.exp(-rng.exponential(2.0, size=S)))
    fast = dc.gated_bce_means(logits, gates, y, interpolate=True)
    exact = dc.gated_bce_means(logits, gates, y)
    assert np.max(np.abs(fast.data - exact.data)) < 1e-12
    w = rng.normal(size=S)
    dc.backward(dc.sum_all(dc.mask_mul(fast, w)))
    g_fast = logits.grad.copy()
    logits.grad = None
    dc.backward(dc.sum_all(dc.mask_mul(exact, w)))
    assert np.max(np.abs(g_fast - logits.grad)) < 1e-11 * np.max(np.abs(logits.grad))


def test_gated_bce_interpolation_degenerate_gates():
    logits = dc.tensor([0.5, -1.0, 2.0], requires_grad=True)
    y = np.array([1.0, 0.0, 1.0])
    for gates in (np.full(50, 0.7), np.array([0.6, 0.9] * 30), np.linspace(-0.5, 0.5, 40)):
        a = dc.gated_bce_means(logits, gates, y, interpolate=True).data
        b = dc.gated_bce_means(logits, gates, y).data
        assert np.array_equal(a, b)
    store = dc.ParameterStore()
    x = store.add("x", np.random.default_rng(1).normal(size=30) * 4)
    yy = (np.arange(30) % 2).astype(float)
    gg = np.random.default_rng(2).uniform(0.5, 1.0, 300)
    rep = dc.finite_diff_check(store, lambda: dc.variance(dc.gated_bce_means(x, gg, yy, interpolate=True)))
    assert rep.passed, rep.lines()


# ---------------------------------------------------------------- cross-entropy


def test_cross_entropy_examples():
    assert dc.cross_entropy_with_logits(dc.tensor([50.0]), [1.0]).item() < 1e-9
    assert dc.cross_entropy_with_logits(dc.tensor([0.0]), [1.0]).item() == pytest.approx(math.log(2.0), abs=1e-15)
    assert dc.cross_entropy_with_logits(dc.tensor([[100.0, -100.0, 0.0]]), [0]).item() < 1e-9


def test_cross_entropy_stable_at_large_logits():
    for v in (-100.0, 100.0):
        loss = dc.cross_entropy_with_logits(dc.tensor([v]), [0.0 if v > 0 else 1.0])
        assert math.isfinite(loss.item()) and loss.item() == pytest.approx(100.0)
    mc = dc.cross_entropy_with_logits(dc.tensor([[100.0, -100.0]]), [1])
    assert mc.item() == pytest.approx(200.0)


def test_cross_entropy_target_out_of_range():
    with pytest.raises(ValueError):
        dc.cross_entropy_with_logits(dc.tensor(np.zeros((2, 3))), [0, 3])
    with pytest.raises(ValueError):
        dc.cross_entropy_with_logits(dc.tensor(np.zeros((1, 3))), [-1])


@pytest.mark.parametrize("seed", range(5))
def test_cross_entropy_gradient(seed):
    rng = np.random.default_rng(seed)
    y = (rng.random(6) < 0.5).astype(float)
    check_op(lambda a: dc.cross_entropy_with_logits(a, y), (6,), seed=seed)
    c = rng.integers(0, 4, size=5)
    check_op(lambda a: dc.cross_entropy_with_logits(a, c), (5, 4), seed=seed)


# ---------------------------------------------------------------- variance


def test_variance_of_scalars_examples():
    c = [dc.tensor(2.5) for _ in range(3)]
    assert dc.variance_of_scalars(c).item() == 0.0
    assert dc.variance_of_scalars([dc.tensor(0.0), dc.tensor(2.0)]).item() == 1.0
    assert dc.variance_of_scalars([dc.tensor(4.0)]).item() == 0.0


def test_variance_of_scalars_empty():
    with pytest.raises(ValueError):
        dc.variance_of_scalars([])


def test_variance_of_scalars_gradient():
    rng = np.random.default_rng(0)
    xs = [dc.tensor(v, requires_grad=True) for v in rng.uniform(-2, 2, size=5)]
    dc.backward(dc.variance_of_scalars(xs))
    vals = np.array([x.data for x in xs], dtype=float)
    for i, x in enumerate(xs):
        h = 1e-6
        v = vals.copy()
        v[i] += h
        fp = np.var(v)
        v[i] -= 2 * h
        fm = np.var(v)
        assert max_rel(np.array([x.grad]), np.array([(fp - fm) / (2 * h)])) < 1e-6


@given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-1e3, 1e3)))
def test_variance_non_negative_and_zero_iff_equal(v):
    var = dc.variance_of_scalars([dc.tensor(x) for x in v]).item()
    assert var >= 0.0
    if np.all(v == v[0]):
        assert var <= 1e-12
    elif np.ptp(v) > 1e-3:
        assert var > 1e-12


@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 8)), elements=st.floats(-30, 30)))
def test_softmax_rows_simplex(x):
    p = dc.softmax(dc.tensor(x)).data
    assert np.all(p > 0)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12)


# ---------------------------------------------------------------- backward


def test_backward_square_sum():
    x = dc.tensor([1.0, 2.0, 3.0], requires_grad=True)
    dc.backward(dc.sum_all(dc.mul(x, x)))
    assert np.array_equal(x.grad, [2.0, 4.0, 6.0])


def test_backward_accumulates_over_two_uses():
    x = dc.tensor([1.0, -2.0], requires_grad=True)
    a = dc.scale(x, 3.0)
    b = dc.mul(x, x)
    dc.backward(dc.sum_all(dc.add(a, b)))
    assert np.allclose(x.grad, 3.0 + 2.0 * x.data)


def test_backward_rejects_non_scalar():
    x = dc.tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(dc.ShapeError):
        dc.backward(dc.scale(x, 2.0))


def test_backward_deterministic():
    def run():
        rng = np.random.default_rng(5)
        W = dc.tensor(rng.normal(size=(4, 3)), requires_grad=True)
        x = dc.constant(rng.normal(size=(6, 4)))
        dc.backward(dc.mean(dc.softmax(dc.matmul(x, W))))
        return W.grad.copy()

    assert np.array_equal(run(), run())


# ---------------------------------------------------------------- adam


def test_adam_first_step_magnitude_lr():
    store = dc.ParameterStore()
    p = store.add("w", np.array([1.0, -1.0, 0.3]))
    p.grad = np.array([0.5, -3.0, 1e-3])
    state = dc.AdamState(lr=0.01, weight_decay=0.0)
    dc.adam_step(store, state)
    moved = np.abs(p.data - np.array([1.0, -1.0, 0.3]))
    assert np.allclose(moved, 0.01, rtol=0.01)
    assert state.step == 1
    assert p.grad is None


def test_adam_zero_grad_fixed_point():
    store = dc.ParameterStore()
    p = store.add("w", np.array([0.7, -0.2]))
    store.zero_grad()
    dc.adam_step(store, dc.AdamState(lr=0.01, weight_decay=0.0))
    assert np.array_equal(p.data, [0.7, -0.2])


def test_adam_two_steps_recurrence():
    store = dc.ParameterStore()
    p = store.add("w", np.array([1.0]))
    st_ = dc.AdamState(lr=0.1, weight_decay=0.0)
    g = 2.0
    values = [1.0]
    for _ in range(2):
        p.grad = np.array([g])
        dc.adam_step(store, st_)
        values.append(float(p.data[0]))
    # hand recurrence
    m1, v1 = 0.1 * g, 0.001 * g * g
    x1 = 1.0 - 0.1 * (m1 / 0.1) / (math.sqrt(v1 / 0.001) + 1e-8)
    m2, v2 = 0.9 * m1 + 0.1 * g, 0.999 * v1 + 0.001 * g * g
    x2 = x1 - 0.1 * (m2 / (1 - 0.81)) / (math.sqrt(v2 / (1 - 0.999**2)) + 1e-8)
    assert st_.step == 2
    assert values[1] == pytest.approx(x1, abs=1e-14)
    assert values[2] == pytest.approx(x2, abs=1e-14)
    assert values[0] > values[1] > values[2]


def test_adam_weight_decay_is_coupled():
    store = dc.ParameterStore()
    p = store.add("w", np.array([2.0]))
    p.grad = np.array([0.0])
    dc.adam_step(store, dc.AdamState(lr=0.01, weight_decay=0.5))
    assert p.data[0] == pytest.approx(2.0 - 0.01, rel=1e-6)


def test_adam_missing_grad_raises():
    store = dc.ParameterStore()
    store.add("a", np.zeros(2))
    with pytest.raises(ValueError):
        dc.adam_step(store, dc.AdamState())


def test_adam_defaults():
    s = dc.AdamState()
    assert (s.lr, s.weight_decay, s.beta1, s.beta2, s.eps) == (0.01, 5e-7, 0.9, 0.999, 1e-8)


# ---------------------------------------------------------------- parameter store


def test_parameter_store_order_and_uniqueness():
    store = dc.ParameterStore()
    store.add("b.x", np.zeros(1))
    store.add("a.y", np.zeros(2))
    assert store.paths() == ["a.y", "b.x"]
    assert all(t.requires_grad for _, t in store.items())
    with pytest.raises(KeyError):
        store.add("a.y", np.zeros(1))


def test_uniform_fan_in_bounds():
    w = dc.uniform_fan_in(np.random.default_rng(0), 9, (9, 40))
    assert np.all(np.abs(w) <= 1 / 3)


# ---------------------------------------------------------------- finite_diff_check


def test_gradcheck_linear_model_exact():
    rng = np.random.default_rng(0)
    store = dc.ParameterStore()
    w = store.add("w", rng.normal(size=(3, 1)))
    x, y = rng.normal(size=(8, 3)), rng.normal(size=(8, 1))

    def loss():
        r = dc.sub(dc.matmul(dc.constant(x), w), dc.constant(y))
        return dc.mean(dc.mul(r, r))

    rep = dc.finite_diff_check(store, loss, tolerance=1e-9)
    assert rep.passed and rep.worst < 1e-9


def test_gradcheck_detects_corrupted_gradient():
    rng = np.random.default_rng(1)
    store = dc.ParameterStore()
    w = store.add("w", rng.normal(size=4))

    def loss():
        return dc.sum_all(dc.mul(w, w))

    rep = dc.finite_diff_check(store, loss, analytic={"w": 2 * (2 * w.data)})
    assert not rep.passed
    assert rep.worst == pytest.approx(0.5, rel=1e-6)


def test_gradcheck_rejects_nondeterministic_loss():
    store = dc.ParameterStore()
    w = store.add("w", np.ones(2))
    rng = np.random.default_rng(0)

    def loss():
        return dc.sum_all(dc.scale(w, float(rng.normal())))

    with pytest.raises(dc.NonDeterministicLoss):
        dc.finite_diff_check(store, loss)


def test_gradcheck_subsamples_large_tensors():
    store = dc.ParameterStore()
    w = store.add("w", np.random.default_rng(0).normal(size=(30, 30)))
    rep = dc.finite_diff_check(store, lambda: dc.sum_all(dc.mul(w, w)))
    assert rep.passed
    assert rep.params[0].checked == 200


def test_scatter_add_rows_matches_add_at():
    from idida.diffcore.tensor import scatter_add_rows

    rng = np.random.default_rng(4)
    for shape in [(30,), (30, 3), (30, 2, 4)]:
        vals = rng.normal(size=shape)
        idx = rng.integers(0, 7, 30)
        want = np.zeros((9,) + shape[1:])
        np.add.at(want, idx, vals)
        assert np.allclose(scatter_add_rows(vals, idx, 9), want, rtol=1e-14, atol=1e-15)
