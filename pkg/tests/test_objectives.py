import math

import pytest
import torch
from torch.distributions import Normal, kl_divergence

from dualmotion.common import ConfigError, StructureError
from dualmotion.dual_path_cvae import DualPathCVAE, GaussianLatent, ModelConfig
from dualmotion.motion_data import GaitConfigSampler, generate_synthetic_dataset
from dualmotion.neural_primitives import Adam, backward, make_generator
from dualmotion.objectives import gaussian_elbo, kl_diag_gauss, mse_recon, reconstructed_entries, total_loss


def _eps(model, batch, seed=0):
    generator = torch.Generator().manual_seed(seed)
    d_z = model.config.d_z
    return torch.randn(batch, d_z, generator=generator), torch.randn(batch, d_z, generator=generator)


def test_mse_recon_sums_entries_and_averages_batch():
    x = torch.zeros(2, 3, 4)
    x_hat = torch.ones(2, 3, 4)
    x_hat[1] *= 2.0
    assert float(mse_recon(x, x_hat)) == pytest.approx((12 + 48) / 2)
    assert float(mse_recon(x[0], x_hat[0])) == pytest.approx(12)
    with pytest.raises(StructureError):
        mse_recon(x, x_hat[:, :2])


def test_kl_of_identical_gaussians_is_zero():
    g = GaussianLatent(torch.randn(3, 4), torch.randn(3, 4) * 0.1)
    assert float(kl_diag_gauss(g, g)) == pytest.approx(0.0, abs=1e-12)


def test_kl_matches_torch_distributions():
    q = GaussianLatent(torch.randn(5, 3), 0.3 * torch.randn(5, 3))
    p = GaussianLatent(torch.randn(5, 3), 0.3 * torch.randn(5, 3))
    expected = kl_divergence(Normal(q.mean, q.std), Normal(p.mean, p.std)).sum(-1).mean()
    torch.testing.assert_close(kl_diag_gauss(q, p), expected)


def test_total_loss_combines_terms(tiny_model, tiny_batch):
    c, x = tiny_batch
    eps_t, eps_b = _eps(tiny_model, 2)
    loss = total_loss(tiny_model, c, x, eps_t=eps_t, eps_b=eps_b)
    lam_t, lam_b = tiny_model.config.lambdas
    expected = loss.rec_top + loss.rec_bottom + lam_t * loss.kl_top + lam_b * loss.kl_bottom
    torch.testing.assert_close(loss.total, expected)
    assert all(value >= 0 for value in loss.as_floats().values())


def test_total_loss_is_deterministic_under_a_seed(tiny_model, tiny_batch):
    c, x = tiny_batch
    a = total_loss(tiny_model, c, x, generator=make_generator(1, "loss")).total
    b = total_loss(tiny_model, c, x, generator=make_generator(1, "loss")).total
    assert torch.equal(a, b)


def test_total_loss_rejects_other_mode(tiny_model, tiny_batch):
    c, x = tiny_batch
    with pytest.raises(ConfigError):
        total_loss(tiny_model, c, x, mode="end_pose_control")


def test_baseline_loss_has_no_bottom_terms(tiny_config, tiny_batch):
    model = DualPathCVAE(tiny_config.model_copy(update={"use_bottom_path": False}))
    c, x = tiny_batch
    loss = total_loss(model, c, x, generator=make_generator(0))
    assert float(loss.rec_bottom) == 0.0
    assert float(loss.kl_bottom) == 0.0


def test_end_pose_bottom_path_reconstructs_the_bridge(tiny_batch):
    config = ModelConfig(H=3, T=3, joints=["root", "tip"], parents=[-1, 0], part1=[0], part2=[1],
                         d_z=2, hidden=3, mode="end_pose_control", bottom_input="aux")
    model = DualPathCVAE(config, generator=make_generator(4))
    c, x = tiny_batch
    loss = total_loss(model, c, x, mode="end_pose_control", generator=make_generator(0))
    assert float(loss.rec_bottom) > 0.0
    assert reconstructed_entries(model, config.T) == 2 * config.T * config.d


def test_loss_equals_negative_elbo_up_to_a_constant(tiny_config, tiny_batch):
    model = DualPathCVAE(tiny_config.model_copy(update={"lambdas": (1.0, 1.0)}), generator=make_generator(8))
    c, x = tiny_batch
    eps_t, eps_b = _eps(model, 2, seed=5)
    loss = total_loss(model, c, x, eps_t=eps_t, eps_b=eps_b).total
    elbo = gaussian_elbo(model, c, x, eps_t, eps_b)
    constant = 0.5 * math.log(math.pi) * reconstructed_entries(model, tiny_config.T)
    torch.testing.assert_close(loss, -elbo - constant)


def test_adam_steps_reduce_loss_on_a_fixed_batch(tiny_model, tiny_batch):
    c, x = tiny_batch
    eps_t, eps_b = _eps(tiny_model, 2, seed=1)
    store = tiny_model.store
    optimizer = Adam(store, lr=1e-2)
    initial = float(total_loss(tiny_model, c, x, eps_t=eps_t, eps_b=eps_b).total)
    for _ in range(60):
        backward(total_loss(tiny_model, c, x, eps_t=eps_t, eps_b=eps_b).total, store)
        optimizer.step()
    assert float(total_loss(tiny_model, c, x, eps_t=eps_t, eps_b=eps_b).total) < 0.8 * initial


def test_kl_of_shifted_unit_gaussian_is_one_half():
    q = GaussianLatent(torch.ones(1), torch.zeros(1))
    p = GaussianLatent.standard(1)
    assert float(kl_diag_gauss(q, p)) == pytest.approx(0.5, abs=1e-12)


def test_kl_is_non_negative_on_random_pairs():
    generator = torch.Generator().manual_seed(0)
    for _ in range(50):
        q = GaussianLatent(torch.randn(3, generator=generator), torch.randn(3, generator=generator))
        p = GaussianLatent(torch.randn(3, generator=generator), torch.randn(3, generator=generator))
        assert float(kl_diag_gauss(q, p)) >= 0.0


def test_mse_recon_matches_an_elementwise_loop():
    generator = torch.Generator().manual_seed(1)
    x, x_hat = torch.randn(5, 6, generator=generator), torch.randn(5, 6, generator=generator)
    expected = sum(float(x[i, j] - x_hat[i, j]) ** 2 for i in range(5) for j in range(6))
    assert float(mse_recon(x, x_hat)) == pytest.approx(expected, rel=1e-12)


def test_kl_of_doubled_std_gaussian():
    q = GaussianLatent(torch.zeros(1), torch.log(torch.tensor([2.0])))
    p = GaussianLatent.standard(1)
    # log(1/2) + 4/2 - 1/2
    assert float(kl_diag_gauss(q, p)) == pytest.approx(1.5 - math.log(2.0), abs=1e-12)
    assert float(kl_diag_gauss(q, p)) == pytest.approx(0.8069, abs=1e-4)
    expected = kl_divergence(Normal(0.0, 2.0), Normal(0.0, 1.0))
    assert float(kl_diag_gauss(q, p)) == pytest.approx(float(expected), abs=1e-12)


def test_total_loss_is_zero_for_a_perfect_reconstruction(tiny_config):
    model = DualPathCVAE(tiny_config)
    with torch.no_grad():
        for p in model.parameters():
            p.zero_()
    c = torch.randn(2, tiny_config.H, tiny_config.d)
    x = torch.zeros(2, tiny_config.T, tiny_config.d)
    loss = total_loss(model, c, x, generator=make_generator(0))
    for value in loss.as_floats().values():
        assert value == pytest.approx(0.0, abs=1e-12)


def test_end_pose_loss_with_a_shorter_bridge(tiny_batch):
    config = ModelConfig(H=3, T=3, joints=["root", "tip"], parents=[-1, 0], part1=[0], part2=[1],
                         d_z=2, hidden=3, mode="end_pose_control", bottom_input="aux", aux_length=2)
    model = DualPathCVAE(config, generator=make_generator(4))
    c, x = tiny_batch
    loss = total_loss(model, c, x, generator=make_generator(0))
    assert torch.isfinite(loss.total)
    assert reconstructed_entries(model, config.T) == (config.T + 2) * config.d


def test_loss_decreases_while_training_on_synthetic_walks(walker, walker_config):
    pairs = generate_synthetic_dataset(walker, 32, walker_config.H, walker_config.T, GaitConfigSampler(), seed=4)
    c = torch.stack([torch.as_tensor(past.frames) for past, _ in pairs])
    x = torch.stack([torch.as_tensor(future.frames) for _, future in pairs])
    model = DualPathCVAE(walker_config, generator=make_generator(0, "train"))
    store = model.store
    optimizer = Adam(store, lr=1e-2)
    generator = make_generator(1, "eps")
    losses = []
    for step in range(50):
        batch = slice((step % 4) * 8, (step % 4 + 1) * 8)
        loss = total_loss(model, c[batch], x[batch], generator=generator).total
        backward(loss, store)
        optimizer.step()
        losses.append(float(loss))
    assert sum(losses[-10:]) < sum(losses[:10])
