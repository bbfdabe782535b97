"""Training objectives of the dual-path model."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional

import torch
from torch.distributions import Normal

from .common import ConfigError, StructureError
from .dual_path_cvae import (
    ControlMode, DualPathCVAE, GaussianLatent, bottom_inputs, decode_full, decode_partial, posterior, prior,
    reparameterize,
)

logger = logging.getLogger(__name__)

# Likelihood variance under which the squared-error terms are exact negative log-likelihoods.
ELBO_VARIANCE = 0.5


@dataclass
class LossBreakdown:
    rec_top: torch.Tensor
    rec_bottom: torch.Tensor
    kl_top: torch.Tensor
    kl_bottom: torch.Tensor
    total: torch.Tensor

    def as_floats(self) -> Dict[str, float]:
        return {k: float(getattr(self, k)) for k in ("rec_top", "rec_bottom", "kl_top", "kl_bottom", "total")}


def mse_recon(x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    """Sum of squared errors per sequence, averaged over a leading batch dim if present."""
    if x.shape != x_hat.shape:
        raise StructureError(f"reconstruction shapes differ: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    squared = (x - x_hat).pow(2)
    if x.dim() <= 2:
        return squared.sum()
    return squared.reshape(x.shape[0], -1).sum(-1).mean()


def kl_diag_gauss(q: GaussianLatent, p: GaussianLatent) -> torch.Tensor:
    """Closed-form KL(q || p) summed over latent dims, averaged over a leading batch dim."""
    if q.mean.shape != p.mean.shape:
        raise StructureError(f"latent shapes differ: {tuple(q.mean.shape)} vs {tuple(p.mean.shape)}")
    var_q, var_p = torch.exp(2 * q.log_std), torch.exp(2 * p.log_std)
    kl = (p.log_std - q.log_std) + (var_q + (q.mean - p.mean).pow(2)) / (2 * var_p) - 0.5
    kl = kl.sum(-1)
    return kl.mean() if kl.dim() > 0 else kl


def _sample_eps(shape, like: torch.Tensor, generator: Optional[torch.Generator]) -> torch.Tensor:
    return torch.randn(shape, generator=generator, dtype=like.dtype)


@dataclass
class _ForwardPass:
    x_hat: torch.Tensor
    q_t: GaussianLatent
    p_t: GaussianLatent
    x_b: Optional[torch.Tensor] = None
    x_b_hat: Optional[torch.Tensor] = None
    q_b: Optional[GaussianLatent] = None
    p_b: Optional[GaussianLatent] = None


def _forward(model: DualPathCVAE, c: torch.Tensor, x: torch.Tensor, eps_t: Optional[torch.Tensor],
             eps_b: Optional[torch.Tensor], generator: Optional[torch.Generator]) -> _ForwardPass:
    steps = x.shape[-2]
    q_t, p_t = posterior(model.top, c, x), prior(model.top, c)
    eps_t = _sample_eps(q_t.mean.shape, q_t.mean, generator) if eps_t is None else eps_t
    out = _ForwardPass(x_hat=None, q_t=q_t, p_t=p_t)
    z_b = None
    if model.bottom is not None:
        c_b, x_b = bottom_inputs(model, c, x)
        q_b, p_b = posterior(model.bottom, c_b, x_b), prior(model.bottom, c_b)
        eps_b = _sample_eps(q_b.mean.shape, q_b.mean, generator) if eps_b is None else eps_b
        z_b = reparameterize(q_b, eps_b)
        out.x_b, out.q_b, out.p_b = x_b, q_b, p_b
        out.x_b_hat = decode_partial(model.bottom, c_b, z_b, x_b.shape[-2])
    out.x_hat = decode_full(model.top, c, reparameterize(q_t, eps_t), z_b, steps)
    return out


def total_loss(model: DualPathCVAE, c: torch.Tensor, x: torch.Tensor, mode: ControlMode | str | None = None,
               generator: Optional[torch.Generator] = None, eps_t: Optional[torch.Tensor] = None,
               eps_b: Optional[torch.Tensor] = None) -> LossBreakdown:
    """
    Reconstruction plus weighted KL terms of both paths for a batch

    Args:
        model: Dual-path model
        c: Past frames [B, H, d]
        x: Future frames [B, T, d]
        mode: Must match the model's control mode when given
        generator: Source of the reparameterization noise
        eps_t: Explicit top-path noise (overrides the generator)
        eps_b: Explicit bottom-path noise

    Returns:
        LossBreakdown averaged over the batch
    """
    if mode is not None and ControlMode(mode) is not model.config.mode:
        raise ConfigError(f"loss mode {ControlMode(mode).value} does not match model mode {model.config.mode.value}")
    if c.shape[0] == 0:
        raise StructureError("empty batch")
    fwd = _forward(model, c, x, eps_t, eps_b, generator)
    rec_top = mse_recon(x, fwd.x_hat)
    kl_top = kl_diag_gauss(fwd.q_t, fwd.p_t)
    zero = rec_top.new_zeros(())
    rec_bottom, kl_bottom = zero, zero
    if fwd.q_b is not None:
        rec_bottom = mse_recon(fwd.x_b, fwd.x_b_hat)
        kl_bottom = kl_diag_gauss(fwd.q_b, fwd.p_b)
    lam_t, lam_b = model.config.lambdas
    total = rec_top + rec_bottom + lam_t * kl_top + lam_b * kl_bottom
    return LossBreakdown(rec_top, rec_bottom, kl_top, kl_bottom, total)


def gaussian_elbo(model: DualPathCVAE, c: torch.Tensor, x: torch.Tensor, eps_t: torch.Tensor,
                  eps_b: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Evidence lower bound with Gaussian likelihoods of variance 1/2, averaged over the batch."""
    fwd = _forward(model, c, x, eps_t, eps_b, None)
    scale = math.sqrt(ELBO_VARIANCE)
    batch = x.shape[0] if x.dim() > 2 else 1
    log_lik = Normal(fwd.x_hat, scale).log_prob(x).sum() / batch
    elbo = log_lik - kl_diag_gauss(fwd.q_t, fwd.p_t)
    if fwd.q_b is not None:
        elbo = elbo + Normal(fwd.x_b_hat, scale).log_prob(fwd.x_b).sum() / batch
        elbo = elbo - kl_diag_gauss(fwd.q_b, fwd.p_b)
    return elbo


def reconstructed_entries(model: DualPathCVAE, T: int) -> int:
    """Entries per datum reconstructed by the objective (both paths)."""
    n = T * model.config.d
    if model.bottom is not None:
        n += (model.config.aux_length or T) * model.config.bottom_dim
    return n
