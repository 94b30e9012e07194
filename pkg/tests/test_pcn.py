import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from predcode import pcn, rao_ballard as rb
from predcode._tape import Var, relu, softmax_xent
from predcode.core import ShapeError, fd_gradient, make_rng, relative_error

seeds = st.integers(0, 2**32 - 1)


def layer2(W_ff=None, W_fb=None):
    W_ff = np.eye(2) if W_ff is None else np.asarray(W_ff, float)
    W_fb = np.eye(2) if W_fb is None else np.asarray(W_fb, float)
    return pcn.PCNLayer(W_ff=W_ff, W_fb=W_fb, b=np.zeros(W_ff.shape[0]))


def random_net(rng, dims=None, **kw):
    dims = dims or [int(d) for d in rng.integers(1, 9, size=int(rng.integers(2, 5)))]
    net = pcn.init_pcn(rng, dims, 3, **kw)
    return net.with_params({k: (rng.normal(0, 0.5, v.shape) if k.startswith("b") else v)
                            for k, v in net.params().items()})


def test_single_step_examples():
    assert pcn.pcn_predict_down(layer2(W_fb=[[1, 2], [3, 4]]), np.array([1.0, 1.0])).tolist() == [3, 7]
    assert pcn.pcn_predict_down(layer2(W_fb=np.zeros((2, 2))), np.ones(2)).tolist() == [0, 0]
    r = np.array([1.0, 2.0])
    assert pcn.pcn_error(r, np.zeros(2)).tolist() == [1, 2]
    assert np.array_equal(pcn.pcn_error(r, r[::-1]), -pcn.pcn_error(r[::-1], r))
    L = layer2(W_ff=[[1, 2], [0, 1]])
    assert pcn.pcn_ff_update(L, r, np.array([1.0, -1.0]), 0.5).tolist() == [0.5, 1.5]
    assert pcn.pcn_ff_update(L, r, np.zeros(2), 0.5).tolist() == r.tolist()
    assert pcn.pcn_fb_update(np.array([2.0, 2.0]), np.array([0.0, 4.0]), 0.5).tolist() == [1, 3]
    assert pcn.pcn_fb_update(r, np.zeros(2), 1.0).tolist() == [0, 0]


def test_shape_checks():
    with pytest.raises(ShapeError):
        pcn.pcn_predict_down(layer2(), np.ones(3))
    with pytest.raises(ShapeError):
        pcn.pcn_error(np.ones(2), np.ones(3))
    with pytest.raises(ShapeError):
        pcn.pcn_ff_update(layer2(), np.ones(2), np.ones(3), 0.1)
    net = random_net(make_rng(0), [3, 4])
    with pytest.raises(ShapeError):
        pcn.pcn_forward(net, np.ones(4))
    with pytest.raises(ValueError):
        pcn.pcn_forward(net, np.ones(3), mode="sideways")
    with pytest.raises(ValueError):
        pcn.pcn_forward(net, np.ones(3), T=7)
    with pytest.raises(ValueError):
        pcn.init_pcn(make_rng(0), [2, 2], 2, beta=1.5)


@settings(max_examples=50)
@given(seeds, st.floats(0.01, 0.99))
def test_feedback_is_a_contraction(seed, beta):
    rng = make_rng(seed)
    r, r_hat = rng.normal(size=5), rng.normal(size=5)
    out = pcn.pcn_fb_update(r, r_hat, beta)
    assert np.allclose(np.abs(out - r_hat), (1 - beta) * np.abs(r - r_hat))


@settings(max_examples=50)
@given(seeds)
def test_tied_weights_match_rao_ballard_step(seed):
    rng = make_rng(seed)
    W = rng.normal(size=(3, 5))
    lower, r = rng.normal(size=5), rng.normal(size=3)
    L = pcn.PCNLayer(W_ff=W, W_fb=W.T, b=np.zeros(3))
    e = pcn.pcn_error(lower, pcn.pcn_predict_down(L, r))
    rb_layer = rb.RBLayer(W=W, r=r, k1=0.1)
    assert np.allclose(pcn.pcn_ff_update(L, r, e, 0.1),
                       rb.rb_update_r(rb_layer, rb.rb_error(lower, rb.rb_predict(rb_layer)).e),
                       rtol=1e-14, atol=1e-14)


def test_global_cycle_identity_when_rates_vanish():
    rng = make_rng(1)
    net = random_net(rng, [4, 3, 3], k1=0.0, beta=0.0)
    acts = pcn.feedforward_sweep(net, rng.normal(size=(2, 4)))
    out = pcn.pcn_global_cycle(net, acts)
    assert all(np.array_equal(a, b) for a, b in zip(acts, out))


def test_global_cycle_one_hidden_layer_is_composition():
    rng = make_rng(2)
    net = random_net(rng, [3, 4])
    acts = pcn.feedforward_sweep(net, rng.normal(size=3))
    L = net.layers[0]
    x = pcn.pcn_fb_update(acts[0], pcn.pcn_predict_down(L, acts[1]), net.beta)
    r = pcn.pcn_ff_update(L, acts[1], pcn.pcn_error(x, pcn.pcn_predict_down(L, acts[1])), net.k1)
    out = pcn.pcn_global_cycle(net, acts)
    assert np.array_equal(out[0], x) and np.array_equal(out[1], r)


@pytest.mark.parametrize("seed", range(5))
def test_global_cycles_reduce_prediction_error(seed):
    rng = make_rng(seed)
    net = random_net(rng, [6, 5, 4, 3], k1=0.1, beta=0.5, T_max=6)
    acts = pcn.feedforward_sweep(net, rng.normal(size=(4, 6)))
    before = pcn.prediction_error_energy(net, acts)
    for _ in range(6):
        acts = pcn.pcn_global_cycle(net, acts)
    assert pcn.prediction_error_energy(net, acts) < before


@settings(max_examples=50)
@given(seeds)
def test_local_cycle_touches_only_its_layer(seed):
    rng = make_rng(seed)
    net = random_net(rng)
    acts = pcn.feedforward_sweep(net, rng.normal(size=(2, net.dims[0])))
    l = int(rng.integers(1, len(net.layers) + 1))
    out = pcn.pcn_local_cycle(net, acts, l)
    for i, (a, b) in enumerate(zip(acts, out)):
        if i != l:
            assert a.tobytes() == b.tobytes()
    with pytest.raises(IndexError):
        pcn.pcn_local_cycle(net, acts, 0)


def test_local_cycle_hand_unrolled():
    rng = make_rng(3)
    net = random_net(rng, [3, 2], k1=0.2)
    acts = pcn.feedforward_sweep(net, rng.normal(size=3))
    L = net.layers[0]
    r = acts[1]
    for _ in range(2):
        r = r + 0.2 * (L.W_ff @ (acts[0] - L.W_fb @ r))
    out = pcn.pcn_local_cycle(net, pcn.pcn_local_cycle(net, acts, 1), 1)
    assert np.allclose(out[1], r, rtol=1e-14, atol=1e-14)


def test_local_mode_does_not_see_layers_above():
    rng = make_rng(4)
    net = random_net(rng, [4, 3, 3], T=2)
    x = rng.normal(size=(2, 4))
    _, acts = pcn.run_activations(net, x, "local")
    other = net.with_params({**net.params(), "W_fb1": rng.normal(size=(3, 3)), "W_ff1": rng.normal(size=(3, 3))})
    _, acts2 = pcn.run_activations(other, x, "local")
    assert np.array_equal(acts[1], acts2[1])


def test_zero_input_zero_bias_gives_zero_logits():
    net = pcn.init_pcn(make_rng(5), [3, 4, 4], 2)
    for mode in pcn.MODES:
        assert np.all(pcn.pcn_forward(net, np.zeros(3), mode) == 0)


def test_forward_is_reproducible():
    a = pcn.pcn_forward(pcn.init_pcn(make_rng(6), [3, 4], 2), np.ones(3), "global")
    b = pcn.pcn_forward(pcn.init_pcn(make_rng(6), [3, 4], 2), np.ones(3), "global")
    assert a.tobytes() == b.tobytes()


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_tape_matches_finite_differences(seed):
    rng = make_rng(seed)
    A, B, C = rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), rng.normal(size=2)
    y = rng.integers(0, 2, size=3)

    def f(a):
        return softmax_xent(relu(Var(a) @ Var(B) - Var(C) * 0.5) + Var(C), y).value

    va = Var(A)
    loss = softmax_xent(relu(va @ Var(B) - Var(C) * 0.5) + Var(C), y)
    loss.backward()
    assert relative_error(va.grad, fd_gradient(lambda a: float(f(a)), A), 1e-8) < 1e-6


def test_tape_rejects_var_products():
    with pytest.raises(TypeError):
        Var(np.ones(2)) * Var(np.ones(2))


@pytest.mark.parametrize("mode", pcn.MODES)
@pytest.mark.parametrize("T", [0, 1, 2])
def test_train_step_gradients(mode, T):
    rng = make_rng(10 + T)
    net = random_net(rng, [4, 3, 3], T=T, skip=True)
    X, y = rng.normal(size=(5, 4)), rng.integers(0, 3, size=5)
    loss, grads = pcn.loss_and_grads(net, X, y, mode, T)
    assert loss == pytest.approx(pcn.cross_entropy(net, X, y, mode, T))
    p = net.params()
    for k, v in p.items():
        g = fd_gradient(lambda x: pcn.cross_entropy(net.with_params({**p, k: x}), X, y, mode, T), v)
        assert relative_error(grads[k], g, 1e-6) < 1e-4, k
    same, _ = pcn.pcn_train_step(net, X, y, 0.0, mode, T)
    assert all(np.array_equal(a, b) for a, b in zip(same.params().values(), p.values()))


def test_training_lowers_loss_on_separable_data():
    rng = make_rng(11)
    X, y = pcn.two_gaussians(rng, 100, separation=4.0)
    net = pcn.init_pcn(rng, [2, 8], 2)
    start = pcn.cross_entropy(net, X, y)
    for _ in range(200):
        net, _ = pcn.pcn_train_step(net, X, y, 0.05)
    assert pcn.cross_entropy(net, X, y) < start
    assert pcn.accuracy(net, X, y) > 0.9


def test_label_and_batch_validation():
    net = pcn.init_pcn(make_rng(0), [2, 3], 2)
    with pytest.raises(ValueError):
        pcn.loss_and_grads(net, np.ones((2, 2)), np.array([0, 2]))
    with pytest.raises(ValueError):
        pcn.loss_and_grads(net, np.ones((2, 2)), np.array([0.0, 1.0]))
    with pytest.raises(ShapeError):
        pcn.loss_and_grads(net, np.ones((3, 2)), np.array([0, 1]))


def test_fit_log_rows():
    rng = make_rng(12)
    X, y = pcn.two_moons(rng, 64)
    net = pcn.init_pcn(rng, [2, 4], 2)
    _, log = pcn.pcn_fit(net, X, y, 2, rng, "plain", batch=32)
    assert [r[:3] for r in log.rows] == [(2, "plain", 0), (4, "plain", 0)]
    assert all(0 <= r[5] <= 1 for r in log.rows)


def test_save_load_roundtrip(tmp_path):
    net = random_net(make_rng(13), [3, 4, 2], T=2, skip=True)
    files = pcn.save_net(net, tmp_path)
    assert "manifest.json" in files
    back = pcn.load_net(tmp_path)
    x = make_rng(14).normal(size=(3, 3))
    for mode in pcn.MODES:
        assert pcn.pcn_forward(back, x, mode).tobytes() == pcn.pcn_forward(net, x, mode).tobytes()


def test_datasets(tmp_path):
    rng = make_rng(15)
    X, y = pcn.two_moons(rng, 50)
    assert X.shape == (50, 2) and set(y.tolist()) == {0, 1}
    X, y = pcn.two_gaussians(rng, 40, dim=3)
    assert X.shape == (40, 3)
    rows = np.hstack([rng.integers(0, 17, size=(5, 64)), np.arange(5)[:, None]])
    np.savetxt(tmp_path / "d.csv", rows, fmt="%d", delimiter=",")
    X, y = pcn.load_digit_raster(tmp_path / "d.csv")
    assert X.shape == (5, 64) and y.tolist() == [0, 1, 2, 3, 4]
    np.savetxt(tmp_path / "bad.csv", rows[:, :10], fmt="%d", delimiter=",")
    with pytest.raises(ValueError):
        pcn.load_digit_raster(tmp_path / "bad.csv")
