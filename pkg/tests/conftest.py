import warnings

import numpy as np
import pytest
import torch

from bayesic.config import ModelConfig, TrainingConfig
from bayesic.dataset import NORMAL, Staypoint, build_dataset
from bayesic.encoding import DEFAULT_WEEK_ANCHOR
from bayesic.synthgen import AnomalySpec, generate, inject_anomalies
from bayesic.training import train

ANCHOR = DEFAULT_WEEK_ANCHOR
H = 3600

TINY_MODEL = ModelConfig(d_model=8, n_heads=2, encoder_layers=1, decoder_layers=1, ff_dim=16, latent_dim=4,
                         window=16, poi_hidden=8, n_components=3, duration_d_model=8, duration_heads=2,
                         duration_ff_dim=16)


def sp(agent, hours, duration=3600.0, poi="home", label=NORMAL, location=None):
    """Staypoint arriving ``hours`` after the default week anchor."""
    return Staypoint(agent, int(ANCHOR + round(hours * H)), float(duration), poi, location, label)


def flat_params(module):
    return torch.nn.utils.parameters_to_vector([p for p in module.parameters() if p.requires_grad])


def fd_relative_error(module, loss_fn, rng, eps=1e-6, scale=0.5):
    """Randomise parameters, then compare autograd to central differences.

    Returns ||g_auto - g_fd|| / max(||g_auto||, ||g_fd||, 1e-12).
    """
    params = [p for p in module.parameters() if p.requires_grad]
    with torch.no_grad():
        for p in params:
            p.copy_(torch.as_tensor(rng.normal(0.0, scale, p.shape)))
    module.zero_grad()
    loss = loss_fn()
    loss.backward()
    g_auto = torch.cat([p.grad.reshape(-1) for p in params]).numpy().copy()
    theta = torch.nn.utils.parameters_to_vector(params).detach().clone()
    g_fd = np.empty_like(g_auto)
    with torch.no_grad():
        for i in range(theta.numel()):
            for sign in (1, -1):
                v = theta.clone()
                v[i] += sign * eps
                torch.nn.utils.vector_to_parameters(v, params)
                val = float(loss_fn())
                g_fd[i] = val if sign == 1 else (g_fd[i] - val) / (2 * eps)
        torch.nn.utils.vector_to_parameters(theta, params)
    denom = max(np.linalg.norm(g_auto), np.linalg.norm(g_fd), 1e-12)
    return float(np.linalg.norm(g_auto - g_fd) / denom)


@pytest.fixture(scope="session")
def small_data():
    """30 agents, 2 train weeks, 1 test week, combined anomalies on 20% of agents."""
    tr, te = generate(n_agents=30, weeks_train=2, weeks_test=1, seed=3)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        te = inject_anomalies(te, AnomalySpec("combined", 0.2), seed=3)
    return tr, te


@pytest.fixture(scope="session")
def tiny_pipeline(small_data):
    tr, _ = small_data
    return train(tr, TrainingConfig(seed=5, epochs=2, batch_size=8), TINY_MODEL)


@pytest.fixture
def two_agent_dataset():
    sps = [sp(1, 9 + 24 * d, 8 * H, "work") for d in range(5)]
    sps += [sp(1, 18 + 24 * d, 14 * H, "home") for d in range(5)]
    sps += [sp(2, 10 + 24 * d, 2 * H, "restaurant") for d in range(7)]
    return build_dataset(sps)
