import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acdmsr import _accel
from acdmsr import numerics as nx
from acdmsr.numerics import Graph, NonFiniteError, ShapeError, Tensor, kernels


def loop_conv(x, w, b, stride, padding):
    """Direct quadruple-loop cross-correlation in float64."""
    cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    pad = (k - 1) // 2
    mode = "reflect" if padding == "reflect" else "constant"
    xp = np.pad(x.astype(np.float64), ((0, 0), (pad, pad), (pad, pad)), mode=mode)
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((cout, ho, wo))
    for o in range(cout):
        for i in range(ho):
            for j in range(wo):
                acc = 0.0 if b is None else float(b[o])
                for c in range(cin):
                    for u in range(k):
                        for v in range(k):
                            acc += xp[c, i * stride + u, j * stride + v] * w[o, c, u, v]
                out[o, i, j] = acc
    return out


# --- tensor ---------------------------------------------------------------


def test_tensor_rejects_nonfinite():
    with pytest.raises(NonFiniteError):
        Tensor([1.0, np.nan])
    with pytest.raises(NonFiniteError):
        Tensor([np.inf])


def test_tensor_is_immutable():
    t = Tensor(np.ones(3))
    with pytest.raises(ValueError):
        t.data[0] = 2.0


def test_tensor_size_matches_shape():
    t = Tensor(np.zeros((2, 3, 4)))
    assert t.size == int(np.prod(t.shape)) == 24


# --- conv2d ---------------------------------------------------------------


def test_conv_identity_kernel(rng):
    x = Tensor(rng.normal(size=(1, 5, 7)))
    out = nx.conv2d(x, Tensor(np.ones((1, 1, 1, 1))))
    np.testing.assert_array_equal(out.data, x.data)


def test_conv_average_of_constant():
    x = Tensor(np.full((1, 3, 3), 2.0))
    out = nx.conv2d(x, Tensor(np.full((1, 1, 3, 3), 1.0 / 9.0)), padding="reflect")
    np.testing.assert_allclose(out.data, 2.0, rtol=1e-6)


def test_conv_matches_loop_oracle(rng):
    x = rng.normal(size=(2, 8, 8)).astype(np.float32)
    w = rng.normal(size=(4, 2, 3, 3)).astype(np.float32)
    out = nx.conv2d(Tensor(x), Tensor(w)).data
    ref = loop_conv(x, w, None, 1, "reflect")
    # norm-wise: float32 storage makes element-wise ratios meaningless near zero
    assert np.max(np.abs(out - ref)) / np.max(np.abs(ref)) < 1e-5


@settings(max_examples=30, deadline=None)
@given(
    cin=st.integers(1, 3),
    cout=st.integers(1, 3),
    k=st.sampled_from([1, 3, 5]),
    h=st.integers(3, 9),
    w=st.integers(3, 9),
    stride=st.integers(1, 2),
    padding=st.sampled_from(["reflect", "zero"]),
    seed=st.integers(0, 10_000),
)
def test_conv_property_matches_oracle(cin, cout, k, h, w, stride, padding, seed):
    pad = (k - 1) // 2
    if padding == "reflect" and pad >= min(h, w):
        return
    r = np.random.default_rng(seed)
    x = r.normal(size=(cin, h, w))
    kern = r.normal(size=(cout, cin, k, k))
    b = r.normal(size=cout)
    out = nx.conv2d(Tensor(x, dtype=np.float64), Tensor(kern, dtype=np.float64), Tensor(b, dtype=np.float64),
                    stride=stride, padding=padding).data
    ref = loop_conv(x, kern, b, stride, padding)
    assert out.shape == ref.shape == (cout, (h + 2 * pad - k) // stride + 1, (w + 2 * pad - k) // stride + 1)
    np.testing.assert_allclose(out, ref, rtol=1e-10, atol=1e-10)


def test_conv_batched_equals_per_image(rng):
    x = rng.normal(size=(3, 2, 6, 6))
    w = Tensor(rng.normal(size=(2, 2, 3, 3)))
    batched = nx.conv2d(Tensor(x), w).data
    for i in range(3):
        np.testing.assert_allclose(batched[i], nx.conv2d(Tensor(x[i]), w).data, rtol=1e-6, atol=1e-6)


@pytest.mark.parametrize(
    "xs, ws, msg",
    [
        ((2, 6, 6), (3, 4, 3, 3), "C_in=2"),
        ((2, 6, 6), (3, 2, 2, 2), "odd"),
        ((2, 6, 6), (3, 2, 3, 5), "square"),
        ((6, 6), (1, 1, 3, 3), "C x H x W"),
    ],
)
def test_conv_shape_errors_name_dimensions(xs, ws, msg):
    with pytest.raises(ShapeError, match=msg):
        nx.conv2d(Tensor(np.zeros(xs)), Tensor(np.zeros(ws)))


@pytest.mark.parametrize("stride,out", [(1, 7), (2, 4)])
def test_backends_agree_bitwise(rng, stride, out):
    xp = rng.normal(size=(2, 3, 9, 9)).astype(np.float32)
    try:
        _accel.set_backend("numpy")
        c_np = kernels.im2col(xp, 3, stride, out, out)
        g_np = kernels.col2im(c_np, 2, 3, 9, 9, 3, stride, out, out)
        _accel.set_backend("numba")
        c_nb = kernels.im2col(xp, 3, stride, out, out)
        g_nb = kernels.col2im(c_nb, 2, 3, 9, 9, 3, stride, out, out)
    finally:
        _accel.set_backend(_accel._resolve())
    np.testing.assert_array_equal(c_np, c_nb)
    np.testing.assert_array_equal(g_np, g_nb)


def test_unknown_backend_flag_rejected(monkeypatch):
    monkeypatch.setenv("ACDMSR_BACKEND", "fortran")
    with pytest.raises(ValueError, match="ACDMSR_BACKEND"):
        _accel._resolve()


# --- reverse mode ---------------------------------------------------------


def test_grad_of_square():
    x = Tensor(3.0, requires_grad=True, dtype=np.float64)
    with Graph() as g:
        y = nx.mul(x, x)
    assert nx.reverse_gradients(g, y)[x].item() == 6.0


def test_grad_of_constant_sum_is_zero(rng):
    p = Tensor(rng.normal(size=(4,)), requires_grad=True)
    c = Tensor(rng.normal(size=(4,)))
    with Graph() as g:
        loss = nx.mean(nx.add(nx.scale(p, 0.0), c))
    grads = nx.reverse_gradients(g, loss)
    np.testing.assert_array_equal(grads[p].data, 0.0)


def test_non_scalar_loss_rejected():
    p = Tensor(np.ones(3), requires_grad=True)
    with Graph() as g:
        y = nx.scale(p, 2.0)
    with pytest.raises(ShapeError, match="scalar"):
        nx.reverse_gradients(g, y)


def test_graph_is_topologically_ordered(rng):
    w = Tensor(rng.normal(size=(2, 1, 3, 3)), requires_grad=True)
    with Graph() as g:
        h = nx.silu(nx.conv2d(Tensor(rng.normal(size=(1, 1, 5, 5))), w))
        nx.mean(nx.mul(h, h))
    seen = set()
    for node in g.nodes:
        for inp in node.inputs:
            assert not any(inp is n.output for n in g.nodes) or id(inp) in seen
        seen.add(id(node.output))


def fd_check(build, params, h=1e-3):
    """Max relative error between autodiff and central differences (float64)."""
    with Graph() as g:
        loss = build(params)
    grads = nx.reverse_gradients(g, loss)
    worst = 0.0
    for name, p in params.items():
        base = p.data.reshape(-1)
        for i in range(base.size):
            up, dn = base.copy(), base.copy()
            up[i] += h
            dn[i] -= h
            fp = build({**params, name: Tensor(up.reshape(p.shape), dtype=np.float64)}).item()
            fm = build({**params, name: Tensor(dn.reshape(p.shape), dtype=np.float64)}).item()
            fd = (fp - fm) / (2 * h)
            ad = grads[p].data.reshape(-1)[i] if p in grads else 0.0
            worst = max(worst, abs(fd - ad) / max(abs(fd), abs(ad), 1e-6))
    return worst


def _p(rng, *shape, scale=1.0):
    return Tensor(rng.normal(size=shape) * scale, requires_grad=True, dtype=np.float64)


def test_two_layer_conv_net_gradients(rng):
    x = Tensor(rng.normal(size=(2, 2, 6, 6)), dtype=np.float64)
    params = {"w1": _p(rng, 3, 2, 3, 3, scale=0.5), "b1": _p(rng, 3), "w2": _p(rng, 2, 3, 3, 3, scale=0.5),
              "b2": _p(rng, 2)}

    def build(P):
        h = nx.silu(nx.conv2d(x, P["w1"], P["b1"]))
        y = nx.conv2d(h, P["w2"], P["b2"], stride=2)
        return nx.mean(nx.mul(y, y))

    assert fd_check(build, params) < 1e-3


PRIMITIVES = {
    "add": lambda P, x: nx.add(P["a"], x),
    "sub": lambda P, x: nx.sub(x, P["a"]),
    "mul": lambda P, x: nx.mul(P["a"], nx.mul(P["a"], x)),
    "scale": lambda P, x: nx.scale(nx.mul(P["a"], P["a"]), -1.7),
    "silu": lambda P, x: nx.silu(nx.mul(P["a"], x)),
    "abs": lambda P, x: nx.abs_(nx.add(P["a"], x)),
    "concat": lambda P, x: nx.concat_channels(nx.mul(P["a"], P["a"]), x),
    "upsample": lambda P, x: nx.upsample2x(nx.mul(P["a"], x)),
    "bias_shared": lambda P, x: nx.add_channel_bias(nx.mul(P["a"], x), P["c"]),
    "bias_batch": lambda P, x: nx.add_channel_bias(nx.mul(P["a"], x), P["nc"]),
    "group_norm": lambda P, x: nx.group_norm(nx.mul(P["a"], x), 1, P["c"], P["c2"]),
    "conv_zero": lambda P, x: nx.conv2d(nx.mul(P["a"], x), P["k"], P["c"], padding="zero"),
    "conv_reflect_s2": lambda P, x: nx.conv2d(nx.mul(P["a"], x), P["k"], P["c"], stride=2),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients(name, rng):
    x = Tensor(rng.normal(size=(2, 2, 4, 4)), dtype=np.float64)
    params = {"a": _p(rng, 2, 2, 4, 4), "c": _p(rng, 2), "c2": _p(rng, 2), "nc": _p(rng, 2, 2),
              "k": _p(rng, 2, 2, 3, 3)}
    wts = Tensor(rng.normal(size=PRIMITIVES[name](params, x).shape), dtype=np.float64)

    def build(P):
        return nx.mean(nx.mul(PRIMITIVES[name](P, x), wts))

    assert fd_check(build, params) < 1e-3


def test_linear_and_losses_gradients(rng):
    x = Tensor(rng.normal(size=(3, 4)), dtype=np.float64)
    tgt = Tensor(rng.normal(size=(3, 2)), dtype=np.float64)
    params = {"w": _p(rng, 2, 4), "b": _p(rng, 2)}
    assert fd_check(lambda P: nx.mse(nx.linear(x, P["w"], P["b"]), tgt), params) < 1e-3
    assert fd_check(lambda P: nx.l1(nx.linear(x, P["w"], P["b"]), tgt), params) < 1e-3


# --- adam -----------------------------------------------------------------


def test_adam_zero_gradient_keeps_params():
    p = {"w": Tensor(np.array([1.0, -2.0]), requires_grad=True)}
    new, st_ = nx.adam_step(p, {"w": Tensor(np.zeros(2))}, nx.AdamState(lr=0.1))
    np.testing.assert_array_equal(new["w"].data, p["w"].data)
    assert st_.step == 1


def test_adam_first_step_closed_form():
    p = {"w": Tensor(np.array([0.0]), dtype=np.float64)}
    new, _ = nx.adam_step(p, {"w": Tensor(np.array([1.0]), dtype=np.float64)}, nx.AdamState(lr=0.1))
    assert new["w"].item() == pytest.approx(-0.1, abs=1e-6)


def test_adam_converges_on_quadratic():
    p = {"w": Tensor(np.array([0.0]), dtype=np.float64)}
    state = nx.AdamState(lr=0.1)
    for _ in range(100):
        g = 2.0 * (p["w"].data - 5.0)
        p, state = nx.adam_step(p, {"w": Tensor(g, dtype=np.float64)}, state)
    assert abs(p["w"].item() - 5.0) < 0.5
    assert state.step == 100


def test_adam_rejects_nonfinite_gradient_by_name():
    p = {"conv.w": Tensor(np.zeros(2))}
    g = Tensor._wrap(np.array([1.0, np.nan], dtype=np.float32))
    with pytest.raises(NonFiniteError, match="conv.w"):
        nx.adam_step(p, {"conv.w": g}, nx.AdamState())


def test_adam_is_bit_reproducible(rng):
    p = {"a": Tensor(rng.normal(size=(5,))), "b": Tensor(rng.normal(size=(2, 2)))}
    g = {"a": Tensor(rng.normal(size=(5,))), "b": Tensor(rng.normal(size=(2, 2)))}
    r1, s1 = nx.adam_step(p, g, nx.AdamState(lr=0.01))
    r2, s2 = nx.adam_step(p, g, nx.AdamState(lr=0.01))
    for k in p:
        assert r1[k].data.tobytes() == r2[k].data.tobytes()
        assert s1.m[k].tobytes() == s2.m[k].tobytes()
        assert s1.m[k].shape == p[k].shape


# --- checkpoint -----------------------------------------------------------


def test_checkpoint_round_trip(tmp_path, rng):
    tensors = {"b": rng.normal(size=(3,)).astype(np.float32), "a.w": rng.normal(size=(2, 1, 3, 3)).astype(np.float32),
               "s": np.array(1.5, dtype=np.float32)}
    nx.save_tensors(tmp_path / "x.acdt", tensors)
    back = nx.load_tensors(tmp_path / "x.acdt")
    assert set(back) == set(tensors)
    for k in tensors:
        np.testing.assert_array_equal(back[k], tensors[k])
    raw = (tmp_path / "x.acdt").read_bytes()
    assert raw[:4] == b"ACDT"


def test_checkpoint_byte_stable_regardless_of_insertion_order(tmp_path):
    a = {"x": np.ones(2, np.float32), "y": np.zeros(3, np.float32)}
    nx.save_tensors(tmp_path / "1.acdt", a)
    nx.save_tensors(tmp_path / "2.acdt", dict(reversed(list(a.items()))))
    assert (tmp_path / "1.acdt").read_bytes() == (tmp_path / "2.acdt").read_bytes()


@pytest.mark.parametrize("mutate", [lambda b: b"XXXX" + b[4:], lambda b: b[:-3], lambda b: b + b"\0"])
def test_checkpoint_corruption_detected(tmp_path, mutate):
    nx.save_tensors(tmp_path / "x.acdt", {"w": np.ones((2, 2), np.float32)})
    (tmp_path / "x.acdt").write_bytes(mutate((tmp_path / "x.acdt").read_bytes()))
    with pytest.raises(nx.CheckpointError):
        nx.load_tensors(tmp_path / "x.acdt")
