import numpy as np
import pytest

from anomgen.autodiff import Tensor, backward, zero_grads
from anomgen.denoiser import (Denoiser, LoraStack, TemporalGate, effective_delta,
                              gate_dims, gate_matrix, load_adapters, load_reference,
                              predict_noise, save_adapters, save_reference,
                              sinusoidal_embedding)
from anomgen.rng import seeded_gaussian

from conftest import directional_derivative, grad_dot


# -- temporal gate -------------------------------------------------------------


def test_gate_endpoints_and_midpoint():
    g = TemporalGate(k_min=4, k_max=32, T=1000)
    assert gate_dims(g, 1000) == 4
    assert gate_dims(g, 0) == 32
    assert gate_dims(g, 500) == 18


def test_gate_monotone_non_increasing():
    g = TemporalGate(k_min=4, k_max=32, T=1000)
    ks = [gate_dims(g, t) for t in range(1001)]
    assert all(a >= b for a, b in zip(ks, ks[1:]))


def test_gate_active_sets_nested():
    g = TemporalGate(k_min=2, k_max=8, T=100)
    for t1, t2 in [(10, 60), (0, 100), (30, 31)]:
        m1, m2 = gate_matrix(g, t1), gate_matrix(g, t2)
        assert np.all(m2 <= m1)  # later timestep's active set is a subset


def test_gate_matrix_pattern():
    g = TemporalGate(k_min=3, k_max=8, T=10)
    m = gate_matrix(g, 10)
    assert np.array_equal(m, [1, 1, 1, 0, 0, 0, 0, 0])
    assert np.array_equal(gate_matrix(g, 0), np.ones(8))


def test_gate_validation():
    with pytest.raises(ValueError):
        TemporalGate(k_min=0, k_max=4, T=10)
    with pytest.raises(ValueError):
        TemporalGate(k_min=5, k_max=4, T=10)
    g = TemporalGate(k_min=1, k_max=4, T=10)
    with pytest.raises(ValueError):
        gate_dims(g, 11)
    with pytest.raises(ValueError):
        gate_dims(g, -1)


# -- adapters ------------------------------------------------------------------


def test_lora_zero_init_delta():
    adapters = LoraStack([(8, 4), (4, 8)], rank=4, seed=0)
    for B in adapters.B:
        assert np.array_equal(B.data, np.zeros_like(B.data))
    assert np.array_equal(adapters.layer_delta(0, np.ones(4)).data, np.zeros((8, 4)))


def test_gate_annihilation():
    adapters = LoraStack([(3, 3)], rank=2, seed=1)
    adapters.B[0].data = seeded_gaussian((3, 2), 2, 0)
    g = TemporalGate(k_min=1, k_max=2, T=10)
    assert np.array_equal(
        adapters.layer_delta(0, np.zeros(2)).data, np.zeros((3, 3)))


def test_effective_delta_rank_one_oracle():
    adapters = LoraStack([(2, 2)], rank=2, seed=0)
    adapters.A[0].data = np.array([[1.0, 2.0], [3.0, 4.0]])
    adapters.B[0].data = np.array([[1.0, 0.0], [0.0, 1.0]])
    g = TemporalGate(k_min=1, k_max=2, T=10)
    # at t=T only the first rank direction is active: B[:,0] x A[0,:]
    out = effective_delta(adapters, g, 10)
    assert np.array_equal(out, np.outer([1.0, 0.0], [1.0, 2.0]))
    # full mask at t=0 gives the complete product
    assert np.array_equal(effective_delta(adapters, g, 0),
                          adapters.B[0].data @ adapters.A[0].data)


def test_effective_delta_rank_mismatch():
    adapters = LoraStack([(2, 2)], rank=2, seed=0)
    g = TemporalGate(k_min=1, k_max=3, T=10)
    with pytest.raises(ValueError):
        effective_delta(adapters, g, 0)


def test_mask_length_validation():
    adapters = LoraStack([(2, 2)], rank=2, seed=0)
    with pytest.raises(ValueError):
        adapters.layer_delta(0, np.ones(3))


# -- forward pass --------------------------------------------------------------


def test_zero_adapter_identity(tiny_model, tiny_adapters):
    adapters, gate = tiny_adapters
    z = seeded_gaussian((4,), 3, 0)
    for t in (1, 25, 50):
        with_adapters = predict_noise(tiny_model, adapters, z, 1, t, gate=gate)
        without = predict_noise(tiny_model, None, z, 1, t)
        assert np.array_equal(with_adapters, without)


def test_forward_deterministic(tiny_model):
    z = seeded_gaussian((4,), 0, 7)
    a = predict_noise(tiny_model, None, z, 2, 9)
    b = predict_noise(tiny_model, None, z, 2, 9)
    assert np.array_equal(a, b)
    assert a.shape == (4,)


def test_conditioning_matters(tiny_model):
    z = seeded_gaussian((4,), 0, 8)
    outs = [predict_noise(tiny_model, None, z, c, 5) for c in (None, 1, 2)]
    assert not np.array_equal(outs[0], outs[1])
    assert not np.array_equal(outs[1], outs[2])


def test_null_token_row_is_zero(tiny_model):
    assert np.array_equal(tiny_model.cond_table.data[0], np.zeros(8))


def test_forward_errors(tiny_model, tiny_adapters):
    adapters, gate = tiny_adapters
    z = np.zeros(4)
    with pytest.raises(ValueError, match="token"):
        tiny_model.forward(z, 99, 5)
    with pytest.raises(ValueError, match="latent"):
        tiny_model.forward(np.zeros(5), 1, 5)
    with pytest.raises(ValueError, match="gate"):
        tiny_model.forward(z, 1, 5, adapters=adapters, gate=None)


def test_time_embedding_shape_and_range():
    e = sinusoidal_embedding(17, 16)
    assert e.shape == (16,)
    assert np.all(np.abs(e) <= 1.0)
    assert not np.array_equal(sinusoidal_embedding(17, 16), sinusoidal_embedding(18, 16))


def test_adapter_gradients_match_finite_differences(tiny_model, tiny_adapters):
    adapters, gate = tiny_adapters
    for layer in range(4):
        adapters.B[layer].data = seeded_gaussian(adapters.B[layer].data.shape, 5, layer) * 0.1
    z = seeded_gaussian((4,), 6, 0)
    for seed, t in [(0, 3), (1, 25), (2, 49)]:
        def loss():
            return tiny_model.forward(z, 1, t, adapters=adapters, gate=gate).mean()

        grads = backward(loss())
        params = adapters.params
        direction = [seeded_gaussian(p.data.shape, seed + 77, i)
                     for i, p in enumerate(params)]
        fd = directional_derivative(lambda: loss().data, params, direction)
        an = grad_dot(grads, params, direction)
        zero_grads(params)
        assert abs(fd - an) / max(abs(fd), abs(an), 1e-10) < 1e-4


def test_reference_weights_not_leaves_when_frozen(tiny_model, tiny_adapters):
    adapters, gate = tiny_adapters
    tiny_model.set_trainable(False)
    z = seeded_gaussian((4,), 1, 1)
    grads = backward(tiny_model.forward(z, 1, 10, adapters=adapters, gate=gate).sum())
    for p in tiny_model.params:
        assert p not in grads


# -- checkpoints ---------------------------------------------------------------


def test_reference_checkpoint_roundtrip(tmp_path, tiny_model):
    path = tmp_path / "ref.ckpt"
    save_reference(path, tiny_model, "linear", 50)
    loaded, kind, T = load_reference(path)
    assert (kind, T) == ("linear", 50)
    for a, b in zip(loaded.params, tiny_model.params):
        assert np.array_equal(a.data, b.data)


def test_adapter_checkpoint_roundtrip(tmp_path, tiny_model, tiny_adapters):
    adapters, gate = tiny_adapters
    adapters.B[0].data = seeded_gaussian(adapters.B[0].data.shape, 9, 0)
    path = tmp_path / "ad.ckpt"
    save_adapters(path, adapters, gate, "linear", 50, tiny_model)
    loaded, lgate, kind, T = load_adapters(path, tiny_model)
    assert (kind, T) == ("linear", 50)
    assert (lgate.k_min, lgate.k_max, lgate.T) == (gate.k_min, gate.k_max, 50)
    for a, b in zip(loaded.params, adapters.params):
        assert np.array_equal(a.data, b.data)


def test_checkpoint_role_mismatch(tmp_path, tiny_model, tiny_adapters):
    adapters, gate = tiny_adapters
    ref_path = tmp_path / "ref.ckpt"
    ad_path = tmp_path / "ad.ckpt"
    save_reference(ref_path, tiny_model, "linear", 50)
    save_adapters(ad_path, adapters, gate, "linear", 50, tiny_model)
    with pytest.raises(ValueError, match="reference"):
        load_reference(ad_path)
    with pytest.raises(ValueError, match="adapter"):
        load_adapters(ref_path, tiny_model)


def test_checkpoint_bad_magic(tmp_path, tiny_model):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(ValueError, match="magic"):
        load_reference(path)
