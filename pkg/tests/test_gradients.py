"""Autograd gradients of every training objective against central finite differences."""
import torch

from dualmotion.diversity_sampler import SamplerHeads, SamplerLossWeights, sampler_loss
from dualmotion.dual_path_cvae import DualPathCVAE, ModelConfig
from dualmotion.motion_data import Skeleton
from dualmotion.neural_primitives import ParameterStore, gradient_check, make_generator
from dualmotion.objectives import total_loss
from dualmotion.pose_prior_flow import FlowModel, limb_directions

TOLERANCE = 1e-3


def _fixed_noise(batch, d_z, seed=0):
    generator = torch.Generator().manual_seed(seed)
    return torch.randn(batch, d_z, generator=generator), torch.randn(batch, d_z, generator=generator)


def test_partial_body_loss_gradients(tiny_model, tiny_batch):
    c, x = tiny_batch
    eps_t, eps_b = _fixed_noise(2, tiny_model.config.d_z)
    error = gradient_check(lambda: total_loss(tiny_model, c, x, eps_t=eps_t, eps_b=eps_b).total, tiny_model.store)
    assert error < TOLERANCE


def test_end_pose_loss_gradients(tiny_batch):
    config = ModelConfig(H=3, T=3, joints=["root", "tip"], parents=[-1, 0], part1=[0], part2=[1],
                         d_z=2, hidden=3, mode="end_pose_control", bottom_input="aux")
    model = DualPathCVAE(config, generator=make_generator(6))
    c, x = tiny_batch
    eps_t, eps_b = _fixed_noise(2, config.d_z, seed=2)
    assert gradient_check(lambda: total_loss(model, c, x, eps_t=eps_t, eps_b=eps_b).total, model.store) < TOLERANCE


def test_flow_nll_gradients():
    skeleton = Skeleton(("root", "a", "b"), (-1, 0, 1))
    flow = FlowModel.random(skeleton.dim, make_generator(0, "flow"), num_layers=2)
    poses = torch.randn(4, skeleton.dim, generator=torch.Generator().manual_seed(3))
    dirs, _ = limb_directions(poses, skeleton)
    error = gradient_check(lambda: flow.nll(dirs).mean(), ParameterStore.from_module(flow))
    assert error < TOLERANCE


def test_sampler_loss_gradients(tiny_model, tiny_batch):
    c, _ = tiny_batch
    d_z = tiny_model.config.d_z
    heads = SamplerHeads(K=3, d_z=d_z, condition_dim=tiny_model.config.d, hidden=3, generator=make_generator(1))
    flow = FlowModel.random(tiny_model.config.d, make_generator(2, "flow"), num_layers=1)
    tiny_model.requires_grad_(False)
    flow.requires_grad_(False)
    eps, frozen = _fixed_noise(2, d_z, seed=4)
    weights = SamplerLossWeights(kl=1.0, div=0.7, vli=0.7, div_clip=(0.0, 1e6))
    error = gradient_check(lambda: sampler_loss(heads, tiny_model, flow, c, weights, frozen, eps).total,
                           ParameterStore.from_module(heads))
    assert error < TOLERANCE
