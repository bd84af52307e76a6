import numpy as np
import pytest

from clipflow import ntk
from clipflow.clipping import ClipConfig, ClipFactors, compute_factors
from clipflow.net import jacobian, mean_loss, per_sample_grads
from conftest import random_batch, random_net


def test_ntk_is_jacobian_gram(rng):
    net = random_net(rng, [3, 5, 2])
    batch = random_batch(rng, 4, 3, 2)
    j = jacobian(net, batch)
    assert np.allclose(ntk.ntk(net, batch), j @ j.T)


def test_per_layer_kernels_sum_to_ntk(rng):
    net = random_net(rng, [3, 5, 4, 1])
    batch = random_batch(rng, 6, 3)
    parts = ntk.per_layer_ntk(net, batch)
    assert len(parts) == 3
    assert np.allclose(sum(parts), ntk.ntk(net, batch))


def test_clipped_kernel_variants():
    h = np.array([[2.0, 1.0], [1.0, 3.0]])
    loc = ClipFactors("flat", "local", np.array([0.5, 1.0]))
    assert np.allclose(ntk.clipped_kernel(h, loc), h @ np.diag([0.5, 1.0]))
    glo = ClipFactors("flat", "global", np.array([0.5, 0.5]))
    assert np.allclose(ntk.clipped_kernel(h, glo), 0.5 * h)
    lw = ClipFactors("layerwise", "local", np.array([[0.5, 1.0], [0.2, 0.4]]))
    want = h @ np.diag([0.5, 0.2]) + 2 * h @ np.diag([1.0, 0.4])
    assert np.allclose(ntk.clipped_kernel([h, 2 * h], lw), want)


def test_multi_output_factors_repeat_per_sample():
    h = np.eye(4)
    f = ClipFactors("flat", "local", np.array([0.5, 0.25]))
    assert np.allclose(np.diag(ntk.clipped_kernel(h, f)), [0.5, 0.5, 0.25, 0.25])


def test_predicted_rate_matches_gradient_norm(rng):
    # with no clipping, -g K g / n^2 equals -|grad L|^2
    net = random_net(rng, [2, 6, 1])
    batch = random_batch(rng, 5, 2)
    rep = ntk.analyze(net, batch, None, "mse")
    g = per_sample_grads(net, batch).flat.mean(axis=0)
    assert rep.predicted_loss_derivative == pytest.approx(-(g @ g), rel=1e-10)


def test_predicted_rate_with_clipping_matches_directional_derivative(rng):
    net = random_net(rng, [2, 6, 1])
    batch = random_batch(rng, 5, 2)
    clip = ClipConfig("flat", "local", 0.1)
    g = per_sample_grads(net, batch)
    f = compute_factors(g, clip)
    rep = ntk.analyze(net, batch, f, "mse")
    d = -(g.flat * f.values[:, None]).sum(axis=0) / 5
    h = 1e-6
    fd = (mean_loss(net.with_params(net.params + h * d), batch, "mse")
          - mean_loss(net.with_params(net.params - h * d), batch, "mse")) / (2 * h)
    assert rep.predicted_loss_derivative == pytest.approx(fd, rel=1e-6)


def test_kernel_kinds():
    assert ntk.kernel_kind(None) == "H"
    assert ntk.kernel_kind(ClipFactors("flat", "local", np.ones(2))) == "HC"
    assert ntk.kernel_kind(ClipFactors("layerwise", "global", np.ones((2, 2)))) == "sum_Hrcr"


def test_shrinkage_check(rng):
    a = rng.normal(size=(5, 7))
    h = a @ a.T
    rep = ntk.eig_shrinkage_check(h, rng.uniform(0.1, 0.9, size=5))
    assert rep.holds and rep.strict
    with pytest.raises(ntk.NTKError):
        ntk.eig_shrinkage_check(h, np.full(5, 1.5))


def test_size_mismatch_raises():
    with pytest.raises(ntk.NTKError):
        ntk.predict_loss_derivative(np.eye(3), np.ones(2))
