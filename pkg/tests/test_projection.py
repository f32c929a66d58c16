import time

import numpy as np
import pytest

from latentstudio.images import nchw_to_hwc
from latentstudio.models import sample_latent
from latentstudio.projection import (
    FeatureExtractor,
    ReconLoss,
    project_hybrid,
    project_net,
    project_opt,
    recon_loss,
)

from oracles import max_rel_error


def _gen_image(models, seed):
    z = sample_latent(np.random.default_rng(seed), models["desc"].latent_dim)
    return nchw_to_hwc(models["generator"].forward(z[None], "inference")), z


@pytest.fixture(scope="module")
def pixel_cfg():
    return ReconLoss(feature_weight=0.0)


@pytest.fixture()
def full_cfg(tiny_models):
    return ReconLoss(extractor=FeatureExtractor.from_params(tiny_models["disc_params"]))


# ---------------------------------------------------------------------------
# reconstruction loss
# ---------------------------------------------------------------------------

def test_recon_loss_zero_on_identical(tiny_models, full_cfg):
    x, _ = _gen_image(tiny_models, 0)
    loss, grad = recon_loss(x, x, full_cfg)
    assert loss == 0.0
    np.testing.assert_allclose(grad, 0, atol=1e-7)


def test_recon_loss_nonnegative(tiny_models, full_cfg):
    a, _ = _gen_image(tiny_models, 1)
    b, _ = _gen_image(tiny_models, 2)
    loss, _ = recon_loss(a, b, full_cfg)
    assert loss > 0


def test_recon_loss_pixel_only_hand_computed():
    # 2x2 images, feature weight 0: mean squared difference by hand
    x = np.array(
        [[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], [[0.0, 0.0, 1.0], [1.0, 1.0, 1.0]]],
        np.float32,
    )
    t = np.zeros((2, 2, 3), np.float32)
    loss, grad = recon_loss(x, t, ReconLoss(feature_weight=0.0))
    # sum of squares = 1+1+1+3 = 6 over 12 values -> 0.5
    assert loss == pytest.approx(0.5)
    np.testing.assert_allclose(grad, 2.0 * x / 12.0, rtol=1e-6)


def test_recon_loss_gradient_matches_finite_differences(tiny_models, full_cfg):
    x, _ = _gen_image(tiny_models, 3)
    t, _ = _gen_image(tiny_models, 4)
    _, grad = recon_loss(x, t, full_cfg)
    rng = np.random.default_rng(5)
    idxs = [tuple(rng.integers(0, s) for s in x.shape) for _ in range(40)]
    h = 1e-3
    fd = []
    for idx in idxs:
        orig = x[idx]
        x[idx] = orig + h
        fp = recon_loss(x, t, full_cfg)[0]
        x[idx] = orig - h
        fm = recon_loss(x, t, full_cfg)[0]
        x[idx] = orig
        fd.append((fp - fm) / (2 * h))
    an = np.array([grad[i] for i in idxs])
    assert max_rel_error(an, np.array(fd)) < 1e-3


def test_recon_loss_shape_mismatch_rejected(pixel_cfg):
    with pytest.raises(ValueError):
        recon_loss(np.zeros((4, 4, 3), np.float32), np.zeros((8, 8, 3), np.float32), pixel_cfg)


def test_recon_loss_config_validation():
    with pytest.raises(ValueError):
        ReconLoss(pixel_weight=-1.0)
    with pytest.raises(ValueError):
        ReconLoss(pixel_weight=0.0, feature_weight=0.0)


# ---------------------------------------------------------------------------
# projection methods
# ---------------------------------------------------------------------------

def test_project_opt_zero_steps_returns_initialization(tiny_models, pixel_cfg):
    x, _ = _gen_image(tiny_models, 6)
    res = project_opt(x, tiny_models["generator"], pixel_cfg, restarts=1, steps=0, seed=3)
    z0 = sample_latent(np.random.default_rng(3), tiny_models["desc"].latent_dim)
    np.testing.assert_array_equal(res.z, z0)
    assert res.method == "optimization"


def test_project_opt_deterministic(tiny_models, pixel_cfg):
    x, _ = _gen_image(tiny_models, 7)
    r1 = project_opt(x, tiny_models["generator"], pixel_cfg, restarts=2, steps=10, seed=9)
    r2 = project_opt(x, tiny_models["generator"], pixel_cfg, restarts=2, steps=10, seed=9)
    np.testing.assert_array_equal(r1.z, r2.z)
    assert r1.loss == r2.loss


def test_project_opt_recovers_manifold_sample(tiny_models, pixel_cfg):
    # target on the manifold: optimized loss far below the best random init
    x, z_true = _gen_image(tiny_models, 8)
    gen = tiny_models["generator"]
    rng = np.random.default_rng(11)
    init_losses = []
    for _ in range(10):
        z = sample_latent(rng, tiny_models["desc"].latent_dim)
        recon = nchw_to_hwc(gen.forward(z[None], "inference"))
        init_losses.append(recon_loss(recon, x, pixel_cfg)[0])
    res = project_opt(x, gen, pixel_cfg, restarts=10, steps=60, seed=11)
    assert res.loss <= 0.1 * min(init_losses)


def test_projection_result_loss_consistent(tiny_models, pixel_cfg):
    x, _ = _gen_image(tiny_models, 12)
    res = project_opt(x, tiny_models["generator"], pixel_cfg, restarts=2, steps=5, seed=0)
    again, _ = recon_loss(res.recon, x, pixel_cfg)
    assert res.loss == pytest.approx(again, rel=1e-5)


def test_project_net_inside_box_and_deterministic(tiny_models, full_cfg):
    x, _ = _gen_image(tiny_models, 13)
    r1 = project_net(x, tiny_models["encoder"], tiny_models["generator"], full_cfg)
    r2 = project_net(x, tiny_models["encoder"], tiny_models["generator"], full_cfg)
    assert np.all(np.abs(r1.z) <= 1.0)
    np.testing.assert_array_equal(r1.z, r2.z)
    assert r1.method == "network"


def test_project_hybrid_zero_steps_equals_net(tiny_models, full_cfg):
    x, _ = _gen_image(tiny_models, 14)
    net = project_net(x, tiny_models["encoder"], tiny_models["generator"], full_cfg)
    hyb = project_hybrid(x, tiny_models["encoder"], tiny_models["generator"], full_cfg, steps=0)
    np.testing.assert_array_equal(net.z, hyb.z)
    assert hyb.loss == pytest.approx(net.loss)


def test_project_hybrid_never_worse_than_net(tiny_models, full_cfg):
    for seed in range(15, 19):
        x, _ = _gen_image(tiny_models, seed)
        net = project_net(x, tiny_models["encoder"], tiny_models["generator"], full_cfg)
        hyb = project_hybrid(x, tiny_models["encoder"], tiny_models["generator"], full_cfg, steps=20)
        assert hyb.loss <= net.loss + 1e-9


def test_project_hybrid_monotone_trace(tiny_models, pixel_cfg):
    x, _ = _gen_image(tiny_models, 19)
    res = project_hybrid(
        x, tiny_models["encoder"], tiny_models["generator"], pixel_cfg, steps=25, monotone=True
    )
    trace = res.trace
    assert all(b <= a + 1e-12 for a, b in zip(trace[:-1], trace[1:]))


def test_project_net_much_faster_than_opt(tiny_models, pixel_cfg):
    x, _ = _gen_image(tiny_models, 20)
    gen, enc = tiny_models["generator"], tiny_models["encoder"]
    t0 = time.perf_counter()
    project_net(x, enc, gen, pixel_cfg)
    t_net = time.perf_counter() - t0
    t0 = time.perf_counter()
    project_opt(x, gen, pixel_cfg, restarts=5, steps=40, seed=0)
    t_opt = time.perf_counter() - t0
    assert t_net <= t_opt / 10.0
