"""
Dual-Path Conditional VAE

The top path models the full-body future given the past; the bottom path
models either one body part or the linear bridge between the future's end
poses. Both latents feed the top decoder, which makes z_b the strict
controller of the bottom-path input and z_t the adaptive controller of the
rest.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import List, Literal, Optional, Tuple

import torch
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from torch import nn

from .common import ArgumentError, ConfigError, StructureError
from .motion_data import (
    WALKER_JOINTS, WALKER_LOWER, WALKER_PARENTS, WALKER_UPPER, BodySplit, Skeleton, linear_bridge, walker_skeleton,
)
from .neural_primitives import (
    Adam, FcLayer, GruCell, ParameterStore, apply_checkpoint, load_checkpoint, save_checkpoint,
)

logger = logging.getLogger(__name__)

LOG_STD_MIN, LOG_STD_MAX = -8.0, 4.0


class ControlMode(str, Enum):
    PARTIAL_BODY = "partial_body_control"
    END_POSE = "end_pose_control"


class BottomInput(str, Enum):
    PART1 = "part1"
    PART2 = "part2"
    AUX = "aux"


class PathRole(str, Enum):
    TOP = "top"
    BOTTOM = "bottom"


class ModelConfig(BaseModel):
    """Architecture and skeleton of a dual-path model; embedded in every checkpoint"""
    model_config = ConfigDict(extra="forbid")

    H: int = Field(16, ge=1)
    T: int = Field(32, ge=2)
    joints: List[str] = Field(default_factory=lambda: list(WALKER_JOINTS))
    parents: List[int] = Field(default_factory=lambda: list(WALKER_PARENTS))
    part1: List[int] = Field(default_factory=lambda: list(WALKER_LOWER))
    part2: List[int] = Field(default_factory=lambda: list(WALKER_UPPER))
    mode: ControlMode = ControlMode.PARTIAL_BODY
    bottom_input: BottomInput = BottomInput.PART1
    aux_length: Optional[int] = Field(None, ge=2)
    d_z: int = Field(128, ge=1)
    hidden: int = Field(128, ge=1)
    lambdas: Tuple[float, float] = (0.1, 0.1)
    use_bottom_path: bool = True

    @model_validator(mode="after")
    def _check_consistency(self):
        if self.mode is ControlMode.END_POSE and self.bottom_input is not BottomInput.AUX:
            raise ValueError("end_pose_control requires bottom_input=aux")
        if self.aux_length is not None and self.bottom_input is not BottomInput.AUX:
            raise ValueError("aux_length only applies to bottom_input=aux")
        if any(lam < 0 for lam in self.lambdas):
            raise ValueError("KL weights must be non-negative")
        try:
            self.split.validate_for(self.skeleton)
        except StructureError as e:
            raise ValueError(str(e)) from e
        return self

    @classmethod
    def parse(cls, document: dict) -> "ModelConfig":
        try:
            return cls.model_validate(document)
        except ValidationError as e:
            raise ConfigError(f"invalid model config: {e}") from e

    @property
    def skeleton(self) -> Skeleton:
        if tuple(self.joints) == WALKER_JOINTS and tuple(self.parents) == WALKER_PARENTS:
            return walker_skeleton()
        return Skeleton(tuple(self.joints), tuple(self.parents))

    @property
    def split(self) -> BodySplit:
        return BodySplit(tuple(self.part1), tuple(self.part2))

    @property
    def d(self) -> int:
        return 3 * len(self.joints)

    @property
    def bottom_dim(self) -> int:
        if self.bottom_input is BottomInput.AUX:
            return self.d
        return 3 * len(self.split.joints(self.bottom_input.value))

    def compatible_with(self, other: "ModelConfig") -> bool:
        keys = ("H", "T", "joints", "parents", "part1", "part2")
        return all(getattr(self, k) == getattr(other, k) for k in keys)


@dataclass(frozen=True)
class CvaePathSpec:
    condition_dim: int
    target_dim: int
    latent_dim: int
    hidden_dim: int
    role: PathRole
    decoder_latents: int = 1

    def __post_init__(self):
        if min(self.condition_dim, self.target_dim, self.latent_dim, self.hidden_dim, self.decoder_latents) <= 0:
            raise StructureError(f"path dims must be positive: {self}")
        if self.condition_dim != self.target_dim:
            raise StructureError("condition and target frames must share a dimension")


@dataclass
class GaussianLatent:
    """Diagonal Gaussian; log_std is clamped to [-8, 4] on construction"""
    mean: torch.Tensor
    log_std: torch.Tensor

    def __post_init__(self):
        if self.mean.shape != self.log_std.shape:
            raise StructureError(f"mean {tuple(self.mean.shape)} and log_std {tuple(self.log_std.shape)} differ")
        self.log_std = torch.clamp(self.log_std, LOG_STD_MIN, LOG_STD_MAX)

    @property
    def std(self) -> torch.Tensor:
        return torch.exp(self.log_std)

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]

    @classmethod
    def standard(cls, dim: int, batch: Optional[int] = None, dtype: Optional[torch.dtype] = None) -> "GaussianLatent":
        shape = (dim,) if batch is None else (batch, dim)
        return cls(torch.zeros(shape, dtype=dtype), torch.zeros(shape, dtype=dtype))


def _as_batch(frames: torch.Tensor) -> Tuple[torch.Tensor, bool]:
    if frames.dim() == 2:
        return frames.unsqueeze(0), True
    if frames.dim() == 3:
        return frames, False
    raise StructureError(f"expected [L, d] or [B, L, d] frames, got shape {tuple(frames.shape)}")


class CvaePath(nn.Module):
    """Condition encoder, learnable prior, posterior and autoregressive decoder of one path"""

    def __init__(self, spec: CvaePathSpec):
        super().__init__()
        self.spec = spec
        d, h, z = spec.condition_dim, spec.hidden_dim, spec.latent_dim
        self.condition_encoder = GruCell(d, h)
        self.prior_encoder = GruCell(d, h)
        self.prior_mean = FcLayer(h, z)
        self.prior_log_std = FcLayer(h, z)
        self.posterior_encoder = GruCell(d, h)
        self.posterior_mean = FcLayer(h, z)
        self.posterior_log_std = FcLayer(h, z)
        self.decoder_init = FcLayer(h + spec.decoder_latents * z, h, "tanh")
        self.decoder_cell = GruCell(spec.target_dim, h)
        self.decoder_out = FcLayer(h, spec.target_dim)

    def check_frames(self, frames: torch.Tensor, name: str) -> None:
        if frames.shape[-1] != self.spec.condition_dim:
            raise StructureError(f"{self.spec.role.value} path {name} has dim {frames.shape[-1]}, "
                                 f"expected {self.spec.condition_dim}")


def encode_condition(path: CvaePath, c: torch.Tensor) -> torch.Tensor:
    """Final GRU hidden state over the past frames."""
    path.check_frames(c, "condition")
    batch, single = _as_batch(c)
    context = path.condition_encoder.run(batch)
    return context[0] if single else context


def posterior(path: CvaePath, c: torch.Tensor, x: torch.Tensor) -> GaussianLatent:
    """q(z | x, c): one GRU pass over past and future concatenated in time."""
    path.check_frames(c, "condition")
    path.check_frames(x, "target")
    cb, single = _as_batch(c)
    xb, _ = _as_batch(x)
    if cb.shape[0] != xb.shape[0]:
        raise StructureError("condition and target batch sizes differ")
    h = path.posterior_encoder.run(torch.cat([cb, xb], dim=1))
    g = GaussianLatent(path.posterior_mean(h), path.posterior_log_std(h))
    return GaussianLatent(g.mean[0], g.log_std[0]) if single else g


def prior(path: CvaePath, c: torch.Tensor) -> GaussianLatent:
    """Learnable p(z | c)."""
    path.check_frames(c, "condition")
    cb, single = _as_batch(c)
    h = path.prior_encoder.run(cb)
    g = GaussianLatent(path.prior_mean(h), path.prior_log_std(h))
    return GaussianLatent(g.mean[0], g.log_std[0]) if single else g


def reparameterize(g: GaussianLatent, eps: torch.Tensor) -> torch.Tensor:
    if eps.shape[-1] != g.dim:
        raise StructureError(f"eps has dim {eps.shape[-1]}, latent has {g.dim}")
    return g.mean + g.std * eps


def _decode(path: CvaePath, c: torch.Tensor, latents: List[torch.Tensor], steps: int) -> torch.Tensor:
    path.check_frames(c, "condition")
    if len(latents) != path.spec.decoder_latents:
        raise StructureError(f"decoder expects {path.spec.decoder_latents} latents, got {len(latents)}")
    for z in latents:
        if z.shape[-1] != path.spec.latent_dim:
            raise StructureError(f"latent has dim {z.shape[-1]}, expected {path.spec.latent_dim}")
    cb, single = _as_batch(c)
    zs = [z.unsqueeze(0).expand(cb.shape[0], -1) if z.dim() == 1 else z for z in latents]
    context = path.condition_encoder.run(cb)
    h = path.decoder_init(torch.cat([context] + zs, dim=-1))
    frame = cb[:, -1]
    outputs = []
    for _ in range(steps):
        h = path.decoder_cell(frame, h)
        frame = path.decoder_out(h)
        outputs.append(frame)
    out = torch.stack(outputs, dim=1)
    return out[0] if single else out


def decode_full(top: CvaePath, c: torch.Tensor, z_t: torch.Tensor, z_b: Optional[torch.Tensor], steps: int) -> torch.Tensor:
    """Full-body future [T, d] (or [B, T, d]) from the past and both latents."""
    latents = [z_t] if z_b is None else [z_t, z_b]
    return _decode(top, c, latents, steps)


def decode_partial(bottom: CvaePath, c_b: torch.Tensor, z_b: torch.Tensor, steps: int) -> torch.Tensor:
    """Bottom-path future from its own condition and z_b only."""
    return _decode(bottom, c_b, [z_b], steps)


def aux_targets(x: torch.Tensor, length: Optional[int] = None) -> torch.Tensor:
    """Batched build_aux_sequence: the bridge between the first and last future frame."""
    return linear_bridge(x, length)


class DualPathCVAE(nn.Module):
    """Top path over the full body plus an optional bottom path"""

    def __init__(self, config: ModelConfig, generator: Optional[torch.Generator] = None):
        super().__init__()
        self.config = config
        use_bottom = config.use_bottom_path
        self.top = CvaePath(CvaePathSpec(config.d, config.d, config.d_z, config.hidden, PathRole.TOP,
                                         decoder_latents=2 if use_bottom else 1))
        self.bottom = None
        if use_bottom:
            self.bottom = CvaePath(CvaePathSpec(config.bottom_dim, config.bottom_dim, config.d_z, config.hidden,
                                                PathRole.BOTTOM))
        if generator is not None:
            for module in self.modules():
                if isinstance(module, (FcLayer, GruCell)):
                    module.reset_parameters(generator)
        if config.bottom_input is not BottomInput.AUX:
            columns = torch.as_tensor(config.split.columns(config.bottom_input.value))
        else:
            columns = torch.arange(config.d)
        self.register_buffer("bottom_columns", columns, persistent=False)

    @property
    def store(self) -> ParameterStore:
        return ParameterStore.from_module(self)

    def bottom_condition(self, c: torch.Tensor) -> torch.Tensor:
        if self.config.bottom_input is BottomInput.AUX:
            return c
        return c.index_select(-1, self.bottom_columns)

    def bottom_target(self, x: torch.Tensor) -> torch.Tensor:
        if self.config.bottom_input is BottomInput.AUX:
            return aux_targets(x, self.config.aux_length)
        return x.index_select(-1, self.bottom_columns)

    def require_bottom(self) -> CvaePath:
        if self.bottom is None:
            raise ConfigError("this model has no bottom path (CVAE baseline)")
        return self.bottom


def bottom_inputs(model: DualPathCVAE, c: torch.Tensor, x: Optional[torch.Tensor] = None
                  ) -> Tuple[torch.Tensor, Optional[torch.Tensor]]:
    """(c_b, x_b): part columns of past and future, or (c, aux bridge) in end-pose mode."""
    return model.bottom_condition(c), None if x is None else model.bottom_target(x)


@dataclass(frozen=True)
class LatentSource:
    """Where a latent comes from during generation; fixed with value None means one prior draw shared by all K"""
    kind: Literal["fixed", "prior_sample"]
    value: Optional[torch.Tensor] = None

    @classmethod
    def fixed(cls, value: Optional[torch.Tensor] = None) -> "LatentSource":
        return cls("fixed", value)

    @classmethod
    def prior_sample(cls) -> "LatentSource":
        return cls("prior_sample")


def _draw(source: LatentSource, g: GaussianLatent, K: int, generator: torch.Generator) -> torch.Tensor:
    if source.kind == "fixed":
        if source.value is not None:
            if source.value.shape[-1] != g.dim:
                raise StructureError(f"fixed latent has dim {source.value.shape[-1]}, expected {g.dim}")
            return source.value.reshape(1, -1).expand(K, -1)
        eps = torch.randn(1, g.dim, generator=generator, dtype=g.mean.dtype)
        return reparameterize(g, eps).expand(K, -1)
    eps = torch.randn(K, g.dim, generator=generator, dtype=g.mean.dtype)
    return reparameterize(g, eps)


def generate_controlled(model: DualPathCVAE, c: torch.Tensor, z_t_source: LatentSource, z_b_source: LatentSource,
                        K: int, seed: int) -> torch.Tensor:
    """
    Decode K futures for one past, each latent fixed or drawn from its learnable prior

    Args:
        model: Trained model
        c: Past frames [H, d]
        z_t_source: Source of the top latent
        z_b_source: Source of the bottom latent (ignored value for the baseline)
        K: Number of futures
        seed: Draws are a pure function of the seed

    Returns:
        Futures [K, T, d]
    """
    if K < 1:
        raise ArgumentError(f"K must be positive, got {K}")
    if c.dim() != 2 or c.shape[0] != model.config.H:
        raise StructureError(f"expected past frames [{model.config.H}, {model.config.d}], got {tuple(c.shape)}")
    generator = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        z_b = None
        if model.bottom is not None:
            c_b = model.bottom_condition(c)
            z_b = _draw(z_b_source, prior(model.bottom, c_b), K, generator)
        elif z_b_source.kind == "fixed":
            raise ConfigError("controls on z_b need a model with a bottom path")
        z_t = _draw(z_t_source, prior(model.top, c), K, generator)
        cK = c.unsqueeze(0).expand(K, -1, -1)
        return decode_full(model.top, cK, z_t, z_b, model.config.T)


def save_model(model: DualPathCVAE, directory: Path | str, optimizer: Optional[Adam] = None, **extra) -> Path:
    return save_checkpoint(directory, model.store, "model", model.config.model_dump(mode="json"), optimizer, extra)


def load_model(directory: Path | str, expected: Optional[ModelConfig] = None) -> DualPathCVAE:
    """Rebuild a model from its checkpoint, refusing configs that disagree with ``expected``."""
    checkpoint = load_checkpoint(directory)
    if checkpoint.artifact != "model":
        raise StructureError(f"{directory} holds a '{checkpoint.artifact}' artifact, not a model")
    config = ModelConfig.parse(checkpoint.model_config)
    if expected is not None and not config.compatible_with(expected):
        raise StructureError(f"checkpoint {directory} was trained for a different skeleton, split or horizon")
    model = DualPathCVAE(config)
    apply_checkpoint(model.store, checkpoint)
    model.eval()
    return model
