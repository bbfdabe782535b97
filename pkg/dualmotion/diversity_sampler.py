"""
Diversity Sampler

Learned affine maps from one shared noise draw to K latent codes of a frozen
dual-path model. The sampler keeps the other latent frozen, so control over
the bottom-path input is preserved while the predictions spread out.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import pandas as pd
import torch
from torch import nn
from tqdm import tqdm

from .common import ArgumentError, ConfigError, ContractError, MissingArtifactError, StructureError, check_finite
from .dual_path_cvae import (
    BottomInput, ControlMode, DualPathCVAE, GaussianLatent, PathRole, decode_full, prior, reparameterize,
)
from .neural_primitives import (
    Adam, FcLayer, GruCell, ParameterStore, apply_checkpoint, backward, load_checkpoint, make_generator,
    save_checkpoint,
)
from .objectives import kl_diag_gauss
from .pose_prior_flow import FlowModel, validity_objective

logger = logging.getLogger(__name__)

MIN_SAMPLER_STD = 1e-4
LOG_COLUMNS = ["epoch", "kl", "div_raw", "div_clipped", "vli", "total"]


@dataclass(frozen=True)
class SamplerLossWeights:
    kl: float = 1.0
    div: float = 0.7
    vli: float = 0.7
    div_clip: Tuple[float, float] = (0.0, 160.0)

    def __post_init__(self):
        if min(self.kl, self.div, self.vli) < 0:
            raise ArgumentError("sampler loss weights must be non-negative")
        if self.div_clip[0] > self.div_clip[1]:
            raise ArgumentError(f"diversity clip interval {self.div_clip} is empty")


class SamplerHeads(nn.Module):
    """Condition GRU plus an FC layer emitting (A^k, b^k) for k = 1..K"""

    def __init__(self, K: int, d_z: int, condition_dim: int, hidden: int = 128,
                 target: PathRole | str = PathRole.TOP, generator: Optional[torch.Generator] = None):
        super().__init__()
        if K < 2:
            raise ArgumentError(f"the sampler needs K >= 2, got {K}")
        self.K, self.d_z, self.target = K, d_z, PathRole(target)
        self.encoder = GruCell(condition_dim, hidden)
        self.head = FcLayer(hidden, 2 * K * d_z)
        if generator is not None:
            self.encoder.reset_parameters(generator)
            self.head.reset_parameters(generator)
        with torch.no_grad():
            self.head.linear.bias[:K * d_z].fill_(1.0)

    def config(self) -> dict:
        return {"K": self.K, "d_z": self.d_z, "condition_dim": self.encoder.spec.input_dim,
                "hidden": self.encoder.hidden_dim, "target": self.target.value}

    def heads(self, c: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """(A, b), each [K, d_z] for one past or [B, K, d_z] for a batch."""
        single = c.dim() == 2
        cb = c.unsqueeze(0) if single else c
        out = self.head(self.encoder.run(cb)).reshape(cb.shape[0], 2, self.K, self.d_z)
        A, b = out[:, 0], out[:, 1]
        return (A[0], b[0]) if single else (A, b)


def map_noise(heads: SamplerHeads, c: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
    """z^k = A^k * eps + b^k for every head; one eps shared by all K."""
    if eps.shape[-1] != heads.d_z:
        raise StructureError(f"eps has dim {eps.shape[-1]}, sampler expects {heads.d_z}")
    A, b = heads.heads(c)
    return A * eps.unsqueeze(-2) + b


def sampler_kl(heads: SamplerHeads, c: torch.Tensor, prior_latent: GaussianLatent) -> torch.Tensor:
    """Sum over heads of KL(N(b^k, diag(A^k)^2) || learnable prior), averaged over a batch."""
    A, b = heads.heads(c)
    if prior_latent.dim != heads.d_z:
        raise StructureError(f"prior has dim {prior_latent.dim}, sampler expects {heads.d_z}")
    mapped = GaussianLatent(b, torch.log(A.abs().clamp_min(MIN_SAMPLER_STD)))
    target = GaussianLatent(prior_latent.mean.unsqueeze(-2).expand_as(b),
                            prior_latent.log_std.unsqueeze(-2).expand_as(b))
    # kl_diag_gauss averages over the heads too
    return heads.K * kl_diag_gauss(mapped, target)


def min_pairwise_diversity(sequences: torch.Tensor, columns: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Minimum squared distance over all pairs of K sequences [K, T, d] (mean over a batch [B, K, T, d])."""
    seqs = torch.as_tensor(sequences)
    if seqs.dim() == 3:
        seqs = seqs.unsqueeze(0)
    K = seqs.shape[1]
    if K < 2:
        raise ArgumentError(f"diversity needs K >= 2, got {K}")
    if columns is not None:
        seqs = seqs.index_select(-1, torch.as_tensor(columns, dtype=torch.long))
    flat = seqs.reshape(seqs.shape[0], K, -1)
    d2 = (flat.unsqueeze(2) - flat.unsqueeze(1)).pow(2).sum(-1)
    off_diagonal = ~torch.eye(K, dtype=torch.bool)
    return d2[:, off_diagonal].min(-1).values.mean()


def diversity_columns(model: DualPathCVAE, target: PathRole) -> Optional[torch.Tensor]:
    """Columns not governed by the frozen latent; None means every column."""
    config = model.config
    if model.bottom is None or config.mode is ControlMode.END_POSE or config.bottom_input is BottomInput.AUX:
        return None
    bottom = config.bottom_input.value
    free = bottom if target is PathRole.BOTTOM else ("part2" if bottom == "part1" else "part1")
    return torch.as_tensor(config.split.columns(free))


@dataclass
class SamplerLossTerms:
    total: torch.Tensor
    kl: torch.Tensor
    div_raw: torch.Tensor
    div_clipped: torch.Tensor
    vli: torch.Tensor


def _target_prior(heads: SamplerHeads, model: DualPathCVAE, c: torch.Tensor) -> GaussianLatent:
    if heads.target is PathRole.TOP:
        return prior(model.top, c)
    return prior(model.require_bottom(), model.bottom_condition(c))


def _frozen_prior(heads: SamplerHeads, model: DualPathCVAE, c: torch.Tensor) -> Optional[GaussianLatent]:
    if model.bottom is None:
        if heads.target is PathRole.BOTTOM:
            raise ConfigError("a bottom-target sampler needs a model with a bottom path")
        return None
    if heads.target is PathRole.TOP:
        return prior(model.bottom, model.bottom_condition(c))
    return prior(model.top, c)


def draw_frozen_latent(heads: SamplerHeads, model: DualPathCVAE, c: torch.Tensor,
                       generator: torch.Generator) -> Optional[torch.Tensor]:
    """One draw of the non-diversified latent from its learnable prior, per condition."""
    with torch.no_grad():
        g = _frozen_prior(heads, model, c)
        if g is None:
            return None
        return reparameterize(g, torch.randn(g.mean.shape, generator=generator, dtype=g.mean.dtype))


def _decode_heads(heads: SamplerHeads, model: DualPathCVAE, c: torch.Tensor, z: torch.Tensor,
                  frozen: Optional[torch.Tensor]) -> torch.Tensor:
    batch, K = z.shape[0], z.shape[1]
    cK = c.unsqueeze(1).expand(-1, K, -1, -1).reshape(batch * K, c.shape[1], c.shape[2])
    z = z.reshape(batch * K, -1)
    held = None if frozen is None else frozen.unsqueeze(1).expand(-1, K, -1).reshape(batch * K, -1)
    if heads.target is PathRole.TOP:
        out = decode_full(model.top, cK, z, held, model.config.T)
    else:
        out = decode_full(model.top, cK, held, z, model.config.T)
    return out.reshape(batch, K, model.config.T, -1)


def sampler_loss(heads: SamplerHeads, model: DualPathCVAE, flow: Optional[FlowModel], c: torch.Tensor,
                 weights: SamplerLossWeights, frozen: Optional[torch.Tensor], eps: torch.Tensor) -> SamplerLossTerms:
    """
    kl_weight * KL - div_weight * clip(min pairwise distance) + vli_weight * validity

    Args:
        heads: Sampler being trained
        model: Frozen dual-path model
        flow: Frozen pose prior; required when the validity weight is positive
        c: Past frames [B, H, d]
        weights: Loss weights and diversity clip interval
        frozen: Held latent per condition [B, d_z] (None for the baseline)
        eps: Shared noise per condition [B, d_z]

    Returns:
        SamplerLossTerms
    """
    if weights.vli > 0 and flow is None:
        raise MissingArtifactError("the validity term needs a trained pose prior")
    single = c.dim() == 2
    if single:
        c, eps = c.unsqueeze(0), eps.reshape(1, -1)
        frozen = None if frozen is None else frozen.reshape(1, -1)
    z = map_noise(heads, c, eps)
    x_hat = _decode_heads(heads, model, c, z, frozen)
    kl = sampler_kl(heads, c, _target_prior(heads, model, c))
    div_raw = min_pairwise_diversity(x_hat, diversity_columns(model, heads.target))
    div_clipped = torch.clamp(div_raw, *weights.div_clip)
    if flow is not None and weights.vli > 0:
        vli = validity_objective(flow, x_hat.reshape(-1, x_hat.shape[-1]), model.config.skeleton)
    else:
        vli = div_raw.new_zeros(())
    total = weights.kl * kl - weights.div * div_clipped + weights.vli * vli
    return SamplerLossTerms(total, kl, div_raw, div_clipped, vli)


def train_sampler(heads: SamplerHeads, model: DualPathCVAE, flow: Optional[FlowModel], conditions: torch.Tensor,
                  weights: SamplerLossWeights, epochs: int = 100, lr: float = 1e-4, seed: int = 0,
                  batch_size: int = 64, log_path: Optional[Path] = None) -> pd.DataFrame:
    """
    Train the heads against a frozen model and pose prior

    Args:
        heads: Sampler to train in place
        model: Frozen dual-path model
        flow: Frozen pose prior (optional when weights.vli == 0)
        conditions: Past frames [M, H, d]
        weights: Loss weights
        epochs: Passes over the conditions
        lr: Adam learning rate
        seed: Seed of the frozen latents, shuffles and noise
        batch_size: Conditions per step
        log_path: Optional CSV receiving the per-epoch log

    Returns:
        Per-epoch log with columns epoch, kl, div_raw, div_clipped, vli, total
    """
    frozen_modules = [model] + ([flow] if flow is not None else [])
    for module in frozen_modules:
        module.requires_grad_(False)
    checksums = [ParameterStore.from_module(m).checksum() for m in frozen_modules]

    frozen = draw_frozen_latent(heads, model, conditions, make_generator(seed, "frozen"))
    store = ParameterStore.from_module(heads)
    optimizer = Adam(store, lr=lr)
    rows = []
    for epoch in tqdm(range(epochs), desc="sampler", leave=False):
        order = torch.randperm(conditions.shape[0], generator=make_generator(seed, "sampler", epoch))
        sums = {k: 0.0 for k in LOG_COLUMNS[1:]}
        steps = 0
        for batch_index, start in enumerate(range(0, conditions.shape[0], batch_size)):
            idx = order[start:start + batch_size]
            noise = make_generator(seed, "sampler-eps", epoch, batch_index)
            eps = torch.randn(idx.shape[0], heads.d_z, generator=noise, dtype=conditions.dtype)
            terms = sampler_loss(heads, model, flow, conditions[idx], weights,
                                 None if frozen is None else frozen[idx], eps)
            check_finite("sampler loss", float(terms.total))
            backward(terms.total, store)
            optimizer.step()
            for key in sums:
                sums[key] += float(getattr(terms, key))
            steps += 1
        row = {"epoch": epoch, **{k: v / max(steps, 1) for k, v in sums.items()}}
        rows.append(row)
        logger.info(f"sampler epoch {epoch}: total {row['total']:.4f} div {row['div_raw']:.4f} vli {row['vli']:.4f}")

    if [ParameterStore.from_module(m).checksum() for m in frozen_modules] != checksums:
        raise ContractError("frozen model or pose prior changed during sampler training")
    history = pd.DataFrame(rows, columns=LOG_COLUMNS)
    if log_path is not None:
        history.to_csv(log_path, index=False)
    return history


def sample_diverse(heads: SamplerHeads, model: DualPathCVAE, c: torch.Tensor, seed: int,
                   frozen: Optional[torch.Tensor] = None) -> torch.Tensor:
    """K futures [K, T, d] for one past from a single shared noise draw."""
    generator = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        if frozen is None:
            frozen = draw_frozen_latent(heads, model, c.unsqueeze(0), generator)
        else:
            frozen = frozen.reshape(1, -1)
        eps = torch.randn(1, heads.d_z, generator=generator, dtype=c.dtype)
        z = map_noise(heads, c.unsqueeze(0), eps)
        return _decode_heads(heads, model, c.unsqueeze(0), z, frozen)[0]


def save_sampler(heads: SamplerHeads, directory: Path | str, optimizer: Optional[Adam] = None, **extra) -> Path:
    return save_checkpoint(directory, ParameterStore.from_module(heads), "sampler", heads.config(), optimizer, extra)


def load_sampler(directory: Path | str) -> SamplerHeads:
    checkpoint = load_checkpoint(directory)
    if checkpoint.artifact != "sampler":
        raise StructureError(f"{directory} holds a '{checkpoint.artifact}' artifact, not a sampler")
    heads = SamplerHeads(**checkpoint.model_config)
    apply_checkpoint(ParameterStore.from_module(heads), checkpoint)
    return heads

