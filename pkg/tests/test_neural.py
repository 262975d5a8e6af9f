import numpy as np
import pytest

from ate.neural import (Adam, Param, ShapeError, Tape, const, grad_check, load_params,
                        save_params)


def _numeric_grad(f, x, h=1e-5):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + h
        up = f()
        x[idx] = orig - h
        down = f()
        x[idx] = orig
        g[idx] = (up - down) / (2 * h)
    return g


def _rel(a, b):
    return np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8))


def test_analytic_values():
    t = Tape()
    assert t.sigmoid(const([0.0])).value[0] == 0.5
    assert t.tanh(const([0.0])).value[0] == 0.0
    for k in (2, 3, 7):
        loss = t.softmax_cross_entropy(const(np.zeros((1, k))), [k - 1])
        assert loss.value == pytest.approx(np.log(k), abs=1e-15)


# each case builds a scalar loss from the listed params
def _case_affine(ps):
    x, W, b = ps
    return lambda t: t.sum(t.hadamard(t.affine(x, W, b), t.affine(x, W, b)))


def _case_sigmoid(ps):
    (x,) = ps
    return lambda t: t.sum(t.scale(t.sigmoid(x), 1.7))


def _case_tanh(ps):
    (x,) = ps
    return lambda t: t.sum(t.hadamard(t.tanh(x), const(np.arange(x.value.size).reshape(x.shape))))


def _case_hadamard(ps):
    a, b = ps
    return lambda t: t.sum(t.hadamard(t.hadamard(a, b), a))


def _case_concat(ps):
    a, b = ps
    w = np.linspace(-1, 1, a.shape[1] + b.shape[1])
    return lambda t: t.sum(t.hadamard(t.tanh(t.concat([a, b])), const(np.broadcast_to(w, (a.shape[0], len(w))))))


def _case_embed(ps):
    (m,) = ps
    return lambda t: t.sum(t.tanh(t.embed_row(m, np.array([0, 2, 2, 1]))))


def _case_ce(ps):
    (z,) = ps
    return lambda t: t.softmax_cross_entropy(z, np.array([0, 2, 1, 1]), np.array([1.0, 0.5, 0.0, 2.0]))


CASES = {
    "affine": (_case_affine, [(3, 4), (2, 4), (2,)]),
    "sigmoid": (_case_sigmoid, [(3, 5)]),
    "tanh": (_case_tanh, [(2, 3)]),
    "hadamard": (_case_hadamard, [(4,), (4,)]),
    "concat": (_case_concat, [(2, 3), (2, 2)]),
    "embed_row": (_case_embed, [(3, 4)]),
    "softmax_cross_entropy": (_case_ce, [(4, 3)]),
}


@pytest.mark.parametrize("name", sorted(CASES))
def test_primitive_backward_matches_finite_differences(name):
    build, shapes = CASES[name]
    rng = np.random.default_rng(sorted(CASES).index(name))
    params = [Param(f"p{i}", rng.normal(size=s)) for i, s in enumerate(shapes)]
    fn = build(params)
    tape = Tape()
    tape.backward(fn(tape))
    for p in params:
        num = _numeric_grad(lambda: fn(Tape(enabled=False)).value.item(), p.value)
        assert _rel(p.grad, num) < 1e-6, (name, p.name)


def test_shape_mismatch_names_operation():
    t = Tape()
    with pytest.raises(ShapeError, match="affine"):
        t.affine(const(np.zeros(3)), const(np.zeros((2, 4))))
    with pytest.raises(ShapeError, match="hadamard"):
        t.hadamard(const(np.zeros(3)), const(np.zeros(2)))
    with pytest.raises(ShapeError, match="concat"):
        t.concat([const(np.zeros((2, 3))), const(np.zeros((3, 3)))])
    with pytest.raises(ShapeError, match="softmax_cross_entropy"):
        t.softmax_cross_entropy(const(np.zeros((2, 3))), [0, 1, 2])


def test_dropout_identity_cases():
    x = const(np.arange(6.0))
    t = Tape()
    rng = np.random.default_rng(0)
    assert t.dropout(x, 0.0, True, rng) is x
    assert t.dropout(x, 0.5, False, rng) is x
    with pytest.raises(ValueError):
        t.dropout(x, 1.0, True, rng)


def test_dropout_expectation_monte_carlo():
    x = np.array([0.3, -1.2, 2.5, 4.0])
    rng = np.random.default_rng(7)
    t = Tape(enabled=False)
    draws = t.dropout(const(np.broadcast_to(x, (100_000, 4)).copy()), 0.5, True, rng).value
    assert set(np.unique(draws / x)) <= {0.0, 2.0}
    np.testing.assert_allclose(draws.mean(axis=0), x, rtol=0.01)


def test_adam_constant_gradient_limit():
    p = Param("w", np.array([0.0]))
    opt = Adam(lr=1e-3)
    prev = 0.0
    for _ in range(2000):
        p.grad = np.array([2.5])
        opt.step([p])
        step = prev - p.value[0]
        prev = p.value[0]
    assert step == pytest.approx(1e-3, rel=1e-6)
    assert p.value[0] < 0
    assert opt.t == 2000


def test_adam_zero_grad_and_frozen():
    p = Param("w", np.array([1.0, -2.0]))
    frozen = Param("e", np.array([3.0]), trainable=False)
    frozen.grad = np.array([10.0])
    opt = Adam()
    opt.step([p, frozen])
    np.testing.assert_array_equal(p.value, [1.0, -2.0])
    np.testing.assert_array_equal(frozen.value, [3.0])
    assert np.all(frozen.grad == 0) and np.all(p.grad == 0)


def test_adam_first_step_is_lr_times_sign():
    p = Param("w", np.array([0.0, 0.0]))
    p.grad = np.array([0.01, -50.0])
    Adam(lr=0.1).step([p])
    np.testing.assert_allclose(p.value, [-0.1, 0.1], rtol=1e-5)


def test_grad_check_linear_regression():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(20, 3))
    y = X @ np.array([1.0, -2.0, 0.5]) + 0.3
    w = Param("w", rng.normal(size=(1, 3)))
    b = Param("b", np.zeros(1))

    def loss(t):
        r = t.add(t.affine(const(X), w, b), const(-y[:, None]))
        return t.sum(t.hadamard(r, r))

    report = grad_check(loss, [w, b], tolerance=1e-6)
    assert report.passed, str(report)
    assert set(report.worst) == {"w", "b"}
    # closed form: d/dw sum r^2 = 2 r^T X
    t = Tape()
    t.backward(loss(t))
    r = X @ w.value[0] + b.value[0] - y
    np.testing.assert_allclose(w.grad[0], 2 * r @ X)


def test_grad_check_catches_corrupted_backward():
    good = Param("good", np.array([0.4, -0.3]))
    bad = Param("bad", np.array([1.1, 0.2]))

    def loss(t):
        # a tanh whose backward is off by a factor of two
        v = np.tanh(bad.value)
        broken = t.op(v, lambda g: [(bad, 2.0 * g * (1 - v * v))])
        return t.sum(t.hadamard(t.tanh(good), broken))

    report = grad_check(loss, [good, bad], tolerance=1e-6)
    assert not report.passed
    assert {f[0] for f in report.failures} == {"bad"}
    assert "bad" in str(report)


def test_grad_check_no_params():
    report = grad_check(lambda t: const(0.0), [])
    assert report.passed and report.worst == {}


def test_backward_twice_doubles_grads():
    rng = np.random.default_rng(3)
    W = Param("W", rng.normal(size=(2, 3)))
    x = const(rng.normal(size=(4, 3)))
    t = Tape()
    loss = t.sum(t.tanh(t.affine(x, W)))
    t.backward(loss)
    once = W.grad.copy()
    t.backward(loss)
    np.testing.assert_allclose(W.grad, 2 * once, rtol=0, atol=1e-15)


def test_backward_visits_each_record_once():
    W = Param("W", np.ones((2, 2)))
    t = Tape()
    loss = t.sum(t.sigmoid(t.affine(const([1.0, 2.0]), W)))
    assert len(t) == 3
    t.backward(loss)
    assert t.visits == 3


def test_loss_bit_identical_across_runs():
    def run():
        rng = np.random.default_rng(11)
        W = Param("W", rng.normal(size=(3, 5)))
        x = const(rng.normal(size=(8, 5)))
        t = Tape()
        h = t.dropout(t.tanh(t.affine(x, W)), 0.5, True, rng)
        return t.sum(h).value.item()
    assert run() == run()


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(5)
    params = [Param("a.W", rng.normal(size=(3, 4))), Param("a.b", rng.normal(size=4)),
              Param("ünï", np.array([np.pi, -0.0, 1e-300, np.finfo(float).max]))]
    path = tmp_path / "p.bin"
    save_params(path, params)
    back = load_params(path)
    assert list(back) == [p.name for p in params]
    for p in params:
        assert back[p.name].shape == p.shape
        assert back[p.name].tobytes() == p.value.tobytes()


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "x.bin"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(ValueError):
        load_params(path)
