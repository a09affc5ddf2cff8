import numpy as np
import pytest

from swarmwind.autodiff import (
    Adam,
    AutodiffError,
    ReduceOnPlateau,
    Tape,
    Tensor,
    add,
    backward,
    clip_global_norm,
    concat,
    cos,
    load_arrays,
    matmul,
    mean_,
    mul,
    relu,
    save_arrays,
    sigmoid,
    sin,
    sum_,
    slice_,
    square,
    tanh,
)


def numeric_grad(fn, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar function of one array."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + eps
        hi = fn(x)
        flat[i] = keep - eps
        lo = fn(x)
        flat[i] = keep
        gf[i] = (hi - lo) / (2 * eps)
    return g


def check_grad(build, x0: np.ndarray, rtol: float = 1e-5):
    """build(tensor) -> scalar Tensor; compares tape grad to numeric grad."""
    p = Tensor(x0.copy(), requires_grad=True)
    with Tape():
        loss = build(p)
        backward(loss)
    got = p.grad

    def scalar(arr):
        q = Tensor(arr.copy())
        return float(build(q).data)

    want = numeric_grad(scalar, x0.copy())
    scale = max(1.0, float(np.max(np.abs(want))))
    assert got is not None
    assert np.max(np.abs(got - want)) / scale < rtol


def test_primitive_gradients_match_finite_differences():
    rng = np.random.default_rng(3)
    c = rng.normal(size=(4, 5))
    b = rng.normal(size=(5, 3))
    w = rng.normal(size=(4, 3))

    check_grad(lambda p: sum_(mul(matmul(p, Tensor(b)), Tensor(w))), rng.normal(size=(4, 5)))
    check_grad(lambda p: sum_(mul(add(p, Tensor(c)), Tensor(c))), rng.normal(size=(4, 5)))
    check_grad(lambda p: sum_(square(mul(p, Tensor(c)))), rng.normal(size=(4, 5)))
    check_grad(lambda p: sum_(mul(tanh(p), Tensor(c))), rng.normal(size=(4, 5)))
    check_grad(lambda p: sum_(mul(sigmoid(p), Tensor(c))), rng.normal(size=(4, 5)))
    check_grad(lambda p: sum_(mul(sin(p), Tensor(c))), rng.normal(size=(4, 5)))
    check_grad(lambda p: sum_(mul(cos(p), Tensor(c))), rng.normal(size=(4, 5)))
    check_grad(lambda p: sum_(square(concat([p, p], axis=1))), rng.normal(size=(4, 5)))
    check_grad(lambda p: sum_(square(slice_(p, (slice(1, 3), slice(0, 4))))),
               rng.normal(size=(4, 5)))
    check_grad(lambda p: sum_(square(mean_(p, axis=0))), rng.normal(size=(4, 5)))
    check_grad(lambda p: square(mean_(p)), rng.normal(size=(4, 5)))
    check_grad(lambda p: sum_(mul(sum_(p, axis=1), Tensor(np.arange(4.0)))),
               rng.normal(size=(4, 5)))
    # relu away from the kink
    x0 = rng.normal(size=(4, 5))
    x0[np.abs(x0) < 0.1] = 0.5
    check_grad(lambda p: sum_(mul(relu(p), Tensor(c))), x0)


def test_relu_tanh_point_values():
    x = Tensor(np.array([[0.0, -2.0, 3.0]]), requires_grad=True)
    with Tape():
        loss = sum_(relu(x))
        backward(loss)
    assert np.allclose(x.grad, [[0.0, 0.0, 1.0]])

    y = Tensor(np.zeros((1, 1)), requires_grad=True)
    with Tape():
        out = tanh(y)
        assert out.data[0, 0] == 0.0
        backward(sum_(out))
    assert y.grad[0, 0] == 1.0


def test_backward_simple_identities():
    x = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    with Tape():
        backward(sum_(x))
    assert np.allclose(x.grad, 1.0)

    x.grad = None
    with Tape():
        backward(mul(Tensor(0.5), sum_(square(x))))
    assert np.allclose(x.grad, x.data)


def test_grad_accumulates_over_reuse():
    x = Tensor(np.array([2.0]), requires_grad=True)
    with Tape():
        backward(sum_(add(mul(x, x), x)))
    # d(x^2 + x)/dx = 2x + 1
    assert np.allclose(x.grad, [5.0])


def test_two_layer_network_against_finite_differences():
    rng = np.random.default_rng(11)
    x_in = rng.normal(size=(6, 4))
    w2 = rng.normal(size=(8, 1))
    tgt = rng.normal(size=(6, 1))

    def net(w1_arr):
        def f(w1):
            h = tanh(matmul(Tensor(x_in), w1))
            out = matmul(h, Tensor(w2))
            return mean_(square(add(out, Tensor(-tgt))))
        return f

    w1_0 = rng.normal(size=(4, 8)) * 0.5
    check_grad(net(w1_0), w1_0, rtol=1e-5)


def test_recurrent_unroll_against_finite_differences():
    rng = np.random.default_rng(7)
    seq = rng.normal(size=(40, 4)) * 0.5

    def build(w):
        h = Tensor(np.zeros((1, 4)))
        for t in range(40):
            pre = add(matmul(h, w), Tensor(seq[t:t + 1]))
            h = tanh(pre)
        return sum_(square(h))

    w0 = rng.normal(size=(4, 4)) * 0.4
    check_grad(build, w0, rtol=1e-4)


def test_backward_errors():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with Tape():
        y = square(x)
        with pytest.raises(AutodiffError):
            backward(y)
    with pytest.raises(AutodiffError):
        backward(Tensor(np.array(1.0), requires_grad=True))
    with pytest.raises(AutodiffError):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(AutodiffError):
        matmul(Tensor(np.ones(3)), Tensor(np.ones(3)))


def test_no_tape_no_recording():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    y = square(x)
    assert y._tape is None
    with pytest.raises(AutodiffError):
        backward(sum_(y))


def test_clip_global_norm():
    a = Tensor(np.zeros(3), requires_grad=True)
    b = Tensor(np.zeros(4), requires_grad=True)
    a.grad = np.array([3.0, 0.0, 0.0])
    b.grad = np.array([0.0, 4.0, 0.0, 0.0])
    # joint norm 5, limit 10: untouched
    assert clip_global_norm([a, b], 10.0) == 1.0
    assert np.allclose(a.grad, [3.0, 0.0, 0.0])

    scale = clip_global_norm([a, b], 2.5)
    assert scale == pytest.approx(0.5)
    assert np.allclose(a.grad, [1.5, 0.0, 0.0])
    total = np.sqrt(np.sum(a.grad**2) + np.sum(b.grad**2))
    assert total <= 2.5 + 1e-12

    with pytest.raises(AutodiffError):
        clip_global_norm([a], 0.0)


def test_adam_zero_grad_is_identity():
    p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    opt = Adam([p], lr=0.05)
    p.grad = np.zeros(2)
    for _ in range(3):
        opt.step()
    assert np.allclose(p.data, [1.0, 2.0])

    p.grad = None
    with pytest.raises(AutodiffError):
        opt.step()


def test_adam_constant_gradient_step_size():
    p = Tensor(np.zeros(1), requires_grad=True)
    opt = Adam([p], lr=0.01)
    prev = p.data.copy()
    for k in range(300):
        p.grad = np.array([2.0])
        opt.step()
        if k > 50:
            # with a constant gradient the update approaches lr per step
            assert abs(abs(p.data[0] - prev[0]) - 0.01) < 1e-3
        prev = p.data.copy()


def test_adam_minimizes_quadratic_bowl():
    p = Tensor(np.array([3.0, -2.0, 1.5]), requires_grad=True)
    opt = Adam([p], lr=0.01)
    for _ in range(2000):
        with Tape():
            loss = sum_(square(p))
            backward(loss)
        opt.step()
        opt.zero_grad()
    assert np.linalg.norm(p.data) < 1e-3


def test_reduce_on_plateau():
    p = Tensor(np.zeros(1), requires_grad=True)
    opt = Adam([p], lr=0.1)
    sched = ReduceOnPlateau(opt, factor=0.5, patience=5)
    assert not sched.update(1.0)
    for _ in range(5):
        assert not sched.update(1.0)
    assert sched.update(1.0)  # sixth stale epoch halves the rate
    assert opt.lr == pytest.approx(0.05)
    assert not sched.update(0.5)  # improvement resets the counter
    assert opt.lr == pytest.approx(0.05)


def test_training_determinism():
    def run():
        rng = np.random.default_rng(0)
        w = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
        x = rng.normal(size=(5, 3))
        opt = Adam([w], lr=0.01)
        for _ in range(20):
            with Tape():
                loss = mean_(square(matmul(Tensor(x), w)))
                backward(loss)
            clip_global_norm([w], 1.0)
            opt.step()
            opt.zero_grad()
        return w.data.copy()

    assert np.array_equal(run(), run())


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    arrays = {"w1": rng.normal(size=(4, 7)), "b1": rng.normal(size=7)}
    meta = {"hidden": 48, "stats": [1.0, 2.0]}
    path = tmp_path / "model.json"
    save_arrays(path, arrays, meta)

    back, meta2 = load_arrays(path)
    assert meta2 == meta
    assert set(back) == {"w1", "b1"}
    assert np.array_equal(back["w1"], arrays["w1"])
    assert np.array_equal(back["b1"], arrays["b1"])
    assert (tmp_path / "model.bin").exists()

    (tmp_path / "model.bin").write_bytes(b"\x00" * 8)
    with pytest.raises(AutodiffError):
        load_arrays(path)
