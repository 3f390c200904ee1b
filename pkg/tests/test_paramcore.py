import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dprsa.errors import InvalidInputError
from dprsa.paramcore import (
    ClipConfig,
    LinearModel,
    MlpModel,
    clip_grad,
    load_checkpoint,
    loss_and_grad,
    mlp_forward,
    reg_grad,
    save_checkpoint,
    sign_vec,
)

finite = st.floats(-1e6, 1e6, allow_nan=False)


def test_sign_of_nonzero_reals():
    assert sign_vec([0.5, -0.2]).tolist() == [1.0, -1.0]


def test_sign_zero_and_negative_zero_are_positive():
    assert sign_vec([0.0]).tolist() == [1.0]
    assert sign_vec([-0.0]).tolist() == [1.0]


def test_sign_rejects_nan():
    with pytest.raises(InvalidInputError):
        sign_vec([1.0, np.nan])


@given(arrays(np.float64, st.integers(1, 30), elements=finite))
def test_sign_entries_and_reconstruction(v):
    s = sign_vec(v)
    assert set(np.unique(s)) <= {-1.0, 1.0}
    nz = v != 0
    assert np.array_equal((s * np.abs(v))[nz], v[nz])


def test_clip_examples():
    assert clip_grad([3.0, 4.0], ClipConfig(10.0)).tolist() == [3.0, 4.0]
    np.testing.assert_allclose(clip_grad([3.0, 4.0], ClipConfig(1.0)), [0.6, 0.8], rtol=0, atol=1e-15)
    assert clip_grad([0.0, 0.0], ClipConfig(1.0)).tolist() == [0.0, 0.0]


@given(
    arrays(np.float64, st.integers(1, 40), elements=finite),
    st.floats(1e-3, 1e3),
)
def test_clip_norm_bound_and_idempotence(g, m):
    clip = ClipConfig(m)
    once = clip_grad(g, clip)
    assert np.linalg.norm(once) <= m
    assert np.array_equal(clip_grad(once, clip), once)


def test_clip_config_rejects_nonpositive():
    with pytest.raises(InvalidInputError):
        ClipConfig(0.0)


def test_reg_grad_examples():
    np.testing.assert_allclose(reg_grad([1.0, -2.0], 0.002), [0.004, -0.008], rtol=1e-15)
    assert reg_grad(np.zeros(3), 0.002).tolist() == [0.0] * 3
    assert reg_grad([1.0, 2.0], 0.0).tolist() == [0.0, 0.0]


def test_forward_zero_params_gives_zero_logits(rng):
    model = MlpModel(5, 4, 3)
    out = mlp_forward(model, np.zeros(model.num_params), rng.standard_normal((7, 5)))
    assert np.all(out == 0.0)


def test_forward_bias_only_path():
    model = MlpModel(1, 1, 1)
    params = np.zeros(model.num_params)
    params[-1] = 0.75  # b3
    assert mlp_forward(model, params, np.zeros(1)).tolist() == [0.75]


def _reference_forward(model, params, x):
    # Layer-by-layer rebuild straight from the documented packing order.
    i, h, o = model.input_dim, model.hidden_dim, model.output_dim
    pos = 0

    def take(n):
        nonlocal pos
        out = params[pos:pos + n]
        pos += n
        return out

    w1 = take(h * i).reshape(h, i); b1 = take(h)
    w2 = take(h * h).reshape(h, h); b2 = take(h)
    w3 = take(o * h).reshape(o, h); b3 = take(o)
    rows = []
    for sample in x:
        a1 = [np.tanh(sum(w1[r, c] * sample[c] for c in range(i)) + b1[r]) for r in range(h)]
        a2 = [np.tanh(sum(w2[r, c] * a1[c] for c in range(h)) + b2[r]) for r in range(h)]
        rows.append([sum(w3[r, c] * a2[c] for c in range(h)) + b3[r] for r in range(o)])
    return np.array(rows)


def test_forward_matches_loop_reference(rng):
    model = MlpModel(4, 3, 5)
    params = rng.standard_normal(model.num_params)
    x = rng.standard_normal((6, 4))
    np.testing.assert_allclose(mlp_forward(model, params, x), _reference_forward(model, params, x), rtol=1e-12, atol=1e-12)


def test_forward_is_deterministic(rng):
    model = MlpModel(6, 5, 4)
    params = rng.standard_normal(model.num_params)
    x = rng.standard_normal((3, 6))
    assert mlp_forward(model, params, x).tobytes() == mlp_forward(model, params, x).tobytes()


def test_uniform_logits_loss_is_log_classes():
    model = MlpModel(3, 4, 10)
    loss, _ = loss_and_grad(model, np.zeros(model.num_params), np.ones((1, 3)), [7])
    assert loss == pytest.approx(np.log(10), abs=1e-14)


def _fd_rel_errors(model, params, x, y, coords, h=1e-5):
    _, g = model.loss_and_grad(params, x, y)
    errs = []
    for j in coords:
        e = np.zeros_like(params)
        e[j] = h
        fd = (model.loss_and_grad(params + e, x, y)[0] - model.loss_and_grad(params - e, x, y)[0]) / (2 * h)
        errs.append(abs(fd - g[j]) / max(abs(fd), abs(g[j]), 1e-6))
    return np.array(errs)


@pytest.mark.parametrize("model", [MlpModel(8, 6, 4), LinearModel(8, 4)], ids=["mlp", "linear"])
def test_gradient_matches_central_differences(model, rng):
    params = 0.5 * rng.standard_normal(model.num_params)
    x = rng.standard_normal((5, 8))
    y = rng.integers(0, 4, 5)
    coords = rng.choice(model.num_params, size=min(50, model.num_params), replace=False)
    assert _fd_rel_errors(model, params, x, y, coords).max() < 1e-5


def test_duplicated_batch_is_mean_invariant(rng):
    model = MlpModel(4, 3, 3)
    params = rng.standard_normal(model.num_params)
    x = rng.standard_normal((1, 4))
    l1, g1 = model.loss_and_grad(params, x, [2])
    l2, g2 = model.loss_and_grad(params, np.vstack([x, x]), [2, 2])
    assert l1 == pytest.approx(l2, rel=1e-14)
    np.testing.assert_allclose(g1, g2, rtol=1e-13, atol=1e-16)


def test_loss_rejects_bad_labels_and_dims(rng):
    model = LinearModel(3, 2)
    params = np.zeros(model.num_params)
    with pytest.raises(InvalidInputError):
        model.loss_and_grad(params, np.zeros((1, 3)), [2])
    with pytest.raises(InvalidInputError):
        model.loss_and_grad(params, np.zeros((1, 4)), [0])
    with pytest.raises(InvalidInputError):
        model.loss_and_grad(np.zeros(3), np.zeros((1, 3)), [0])


def test_init_params_glorot_range(rng):
    model = MlpModel(30, 20, 10)
    p = model.init_params(rng)
    w1, b1, *_ = model.unpack(p)
    assert np.all(np.abs(w1) <= np.sqrt(6.0 / 50)) and np.all(b1 == 0)


@pytest.mark.parametrize("model", [MlpModel(5, 4, 3), LinearModel(5, 3)], ids=["mlp", "linear"])
def test_checkpoint_round_trip(model, tmp_path, rng):
    params = rng.standard_normal(model.num_params)
    path = tmp_path / "ckpt.bin"
    save_checkpoint(path, model, params)
    raw = path.read_bytes()
    assert raw[:8] == b"DPRSA001" and len(raw) == 20 + 8 * model.num_params
    loaded_model, loaded = load_checkpoint(path)
    assert loaded_model == model
    assert loaded.tobytes() == params.tobytes()


def test_checkpoint_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOTDPRSA" + bytes(12))
    with pytest.raises(InvalidInputError):
        load_checkpoint(path)
