"""Shared fixtures: skeletons, tiny model configs and seeded generators."""
import numpy as np
import pytest
import torch

from dualmotion.dual_path_cvae import DualPathCVAE, ModelConfig
from dualmotion.motion_data import (
    GaitConfigSampler, Skeleton, default_walker_split, generate_synthetic_dataset, walker_skeleton,
)
from dualmotion.neural_primitives import make_generator
from dualmotion.pose_prior_flow import FlowModel, pooled_pose_directions, train_pose_prior


def pytest_configure(config):
    config.addinivalue_line("markers", "float32: run the test with float32 as the default torch dtype")


@pytest.fixture(autouse=True)
def default_dtype(request):
    previous = torch.get_default_dtype()
    torch.set_default_dtype(torch.float32 if request.node.get_closest_marker("float32") else torch.float64)
    yield
    torch.set_default_dtype(previous)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def walker():
    return walker_skeleton()


@pytest.fixture
def walker_split():
    return default_walker_split()


@pytest.fixture
def two_joint():
    return Skeleton(("root", "tip"), (-1, 0))


@pytest.fixture
def tiny_config():
    """2-joint model small enough for finite-difference checks."""
    return ModelConfig(H=3, T=3, joints=["root", "tip"], parents=[-1, 0], part1=[0], part2=[1],
                       d_z=2, hidden=3, lambdas=(0.1, 0.1))


@pytest.fixture
def tiny_model(tiny_config):
    return DualPathCVAE(tiny_config, generator=make_generator(3, "tiny"))


@pytest.fixture
def walker_config():
    return ModelConfig(H=4, T=6, d_z=4, hidden=8)


@pytest.fixture
def walker_model(walker_config):
    return DualPathCVAE(walker_config, generator=make_generator(5, "walker"))


@pytest.fixture
def walker_pairs(walker):
    return generate_synthetic_dataset(walker, 6, 4, 6, GaitConfigSampler(), seed=11)


@pytest.fixture
def tiny_batch(tiny_config):
    generator = torch.Generator().manual_seed(7)
    c = torch.randn(2, tiny_config.H, tiny_config.d, generator=generator)
    x = torch.randn(2, tiny_config.T, tiny_config.d, generator=generator)
    return c, x


@pytest.fixture
def trained_flow(walker_pairs, walker):
    """Pose prior fitted to the walker pairs."""
    flow = FlowModel.random(walker.dim, make_generator(0, "trained-flow"))
    train_pose_prior(flow, pooled_pose_directions(walker_pairs, walker), epochs=200, lr=1e-2, batch_size=32, seed=0)
    return flow
