"""
Neural Building Blocks

Fully-connected layers, GRU cells, the parameter store every training stage
updates, the Adam optimizer, finite-difference gradient checking and the
manifest + params.bin checkpoint format.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import shutil
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, Iterator, List, Optional, Tuple

import numpy as np
import torch
from torch import nn

from .common import ArgumentError, ArtifactIOError, ContractError, MissingArtifactError, NumericalAbort, StructureError

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
PARAMS_NAME = "params.bin"


class Activation(str, Enum):
    IDENTITY = "identity"
    TANH = "tanh"
    PRELU = "prelu"


@dataclass(frozen=True)
class FcLayerSpec:
    input_dim: int
    output_dim: int
    activation: Activation = Activation.IDENTITY

    def __post_init__(self):
        object.__setattr__(self, "activation", Activation(self.activation))
        if self.input_dim <= 0 or self.output_dim <= 0:
            raise StructureError(f"layer dims must be positive, got {self.input_dim}->{self.output_dim}")


@dataclass(frozen=True)
class GruCellSpec:
    input_dim: int
    hidden_dim: int = 128

    def __post_init__(self):
        if self.input_dim <= 0 or self.hidden_dim <= 0:
            raise StructureError(f"GRU dims must be positive, got {self.input_dim}/{self.hidden_dim}")


class FcLayer(nn.Module):
    """activation(W x + b) with Glorot-uniform W and zero b"""

    def __init__(self, input_dim: int, output_dim: int, activation: Activation | str = Activation.IDENTITY):
        super().__init__()
        self.spec = FcLayerSpec(input_dim, output_dim, activation)
        self.linear = nn.Linear(input_dim, output_dim)
        self.prelu = nn.PReLU(num_parameters=1, init=0.25) if self.spec.activation is Activation.PRELU else None
        self.reset_parameters()

    def reset_parameters(self, generator: Optional[torch.Generator] = None) -> None:
        bound = math.sqrt(6.0 / (self.spec.input_dim + self.spec.output_dim))
        with torch.no_grad():
            self.linear.weight.uniform_(-bound, bound, generator=generator)
            self.linear.bias.zero_()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.spec.input_dim:
            raise StructureError(f"FC layer expects input dim {self.spec.input_dim}, got {x.shape[-1]}")
        out = self.linear(x)
        if self.spec.activation is Activation.TANH:
            return torch.tanh(out)
        if self.prelu is not None:
            return self.prelu(out)
        return out


class GruCell(nn.Module):
    """Standard GRU cell (reset, update and candidate gates)"""

    def __init__(self, input_dim: int, hidden_dim: int = 128):
        super().__init__()
        self.spec = GruCellSpec(input_dim, hidden_dim)
        self.cell = nn.GRUCell(input_dim, hidden_dim)
        self.reset_parameters()

    def reset_parameters(self, generator: Optional[torch.Generator] = None) -> None:
        # Glorot bound per gate block
        spec = self.spec
        with torch.no_grad():
            for weight, fan_in in ((self.cell.weight_ih, spec.input_dim), (self.cell.weight_hh, spec.hidden_dim)):
                bound = math.sqrt(6.0 / (fan_in + spec.hidden_dim))
                weight.uniform_(-bound, bound, generator=generator)
            self.cell.bias_ih.zero_()
            self.cell.bias_hh.zero_()

    @property
    def hidden_dim(self) -> int:
        return self.spec.hidden_dim

    def forward(self, x: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.spec.input_dim:
            raise StructureError(f"GRU expects input dim {self.spec.input_dim}, got {x.shape[-1]}")
        if h.shape[-1] != self.spec.hidden_dim:
            raise StructureError(f"GRU expects hidden dim {self.spec.hidden_dim}, got {h.shape[-1]}")
        return self.cell(x, h)

    def zero_state(self, batch: int, like: torch.Tensor) -> torch.Tensor:
        return torch.zeros(batch, self.spec.hidden_dim, dtype=like.dtype, device=like.device)

    def run(self, frames: torch.Tensor, h0: Optional[torch.Tensor] = None) -> torch.Tensor:
        """Final hidden state after consuming frames [B, L, in] in time order."""
        h = self.zero_state(frames.shape[0], frames) if h0 is None else h0
        for t in range(frames.shape[1]):
            h = self(frames[:, t], h)
        return h


def fc_forward(layer: FcLayer, x: torch.Tensor) -> torch.Tensor:
    return layer(x)


def gru_step(cell: GruCell, x: torch.Tensor, hidden: torch.Tensor) -> torch.Tensor:
    return cell(x, hidden)


class ParameterStore:
    """
    Named view over the trainable tensors of one or more modules

    Gradients are read from the tensors' ``.grad``; a parameter that did not
    take part in the last backward pass reports a zero gradient.
    """

    def __init__(self, entries: Dict[str, nn.Parameter]):
        self._entries: Dict[str, nn.Parameter] = dict(entries)
        self.moments: Dict[str, Dict[str, torch.Tensor]] = {"m": {}, "v": {}}

    @classmethod
    def from_module(cls, module: nn.Module, prefix: str = "") -> "ParameterStore":
        return cls({f"{prefix}{name}": p for name, p in module.named_parameters()})

    @classmethod
    def from_modules(cls, **modules: nn.Module) -> "ParameterStore":
        entries: Dict[str, nn.Parameter] = {}
        for key, module in modules.items():
            for name, p in module.named_parameters():
                entries[f"{key}.{name}"] = p
        return cls(entries)

    def __getitem__(self, name: str) -> nn.Parameter:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def items(self) -> Iterator[Tuple[str, nn.Parameter]]:
        return iter(self._entries.items())

    def names(self) -> List[str]:
        return list(self._entries)

    def parameters(self) -> List[nn.Parameter]:
        return list(self._entries.values())

    @property
    def num_parameters(self) -> int:
        return sum(p.numel() for p in self._entries.values())

    def grad(self, name: str) -> torch.Tensor:
        p = self._entries[name]
        return torch.zeros_like(p) if p.grad is None else p.grad

    def zero_grad(self) -> None:
        for p in self._entries.values():
            p.grad = None

    def freeze(self) -> None:
        for p in self._entries.values():
            p.requires_grad_(False)

    def to_numpy(self) -> Dict[str, np.ndarray]:
        return {name: p.detach().cpu().numpy().copy() for name, p in self._entries.items()}

    def checksum(self) -> str:
        """sha256 over names, shapes and values."""
        digest = hashlib.sha256()
        for name, p in self._entries.items():
            values = p.detach().cpu().numpy()
            digest.update(name.encode())
            digest.update(str(tuple(values.shape)).encode())
            digest.update(np.ascontiguousarray(values, dtype='<f8').tobytes())
        return digest.hexdigest()

    def all_finite(self) -> bool:
        return all(bool(torch.isfinite(p).all()) for p in self._entries.values())


def backward(loss: torch.Tensor, store: Optional[ParameterStore] = None) -> None:
    """Populate ``grad`` of every parameter with d loss / d parameter."""
    if not isinstance(loss, torch.Tensor) or loss.numel() != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {tuple(getattr(loss, 'shape', ()))}")
    if store is not None:
        store.zero_grad()
    loss.reshape(()).backward()


def adam_update(store: ParameterStore, lr: float, betas: Tuple[float, float] = (0.9, 0.999),
                eps: float = 1e-8, step: int = 1) -> ParameterStore:
    """
    One Adam step with bias correction, in place

    Args:
        store: Parameters with populated gradients; moments live on the store
        lr: Learning rate
        betas: Decay rates of the first and second moments
        eps: Denominator floor
        step: 1-based step count used for bias correction

    Returns:
        The same store
    """
    if step < 1:
        raise ArgumentError(f"Adam step must be >= 1, got {step}")
    beta1, beta2 = betas
    with torch.no_grad():
        for name, p in store.items():
            if not p.requires_grad:
                continue
            g = store.grad(name)
            m = store.moments["m"].setdefault(name, torch.zeros_like(p))
            v = store.moments["v"].setdefault(name, torch.zeros_like(p))
            m.mul_(beta1).add_(g, alpha=1 - beta1)
            v.mul_(beta2).addcmul_(g, g, value=1 - beta2)
            m_hat = m / (1 - beta1 ** step)
            v_hat = v / (1 - beta2 ** step)
            p.sub_(lr * m_hat / (v_hat.sqrt() + eps))
    if not store.all_finite():
        raise NumericalAbort("parameters became non-finite after an Adam step")
    return store


class Adam:
    """Stateful wrapper over adam_update that counts steps"""

    def __init__(self, store: ParameterStore, lr: float = 1e-4, betas: Tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8):
        self.store = store
        self.lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.step_count = 0

    def step(self) -> None:
        self.step_count += 1
        adam_update(self.store, self.lr, self.betas, self.eps, self.step_count)

    def zero_grad(self) -> None:
        self.store.zero_grad()

    def state(self) -> Dict[str, Any]:
        return {
            "step": self.step_count,
            "m": {k: v.detach().cpu().numpy() for k, v in self.store.moments["m"].items()},
            "v": {k: v.detach().cpu().numpy() for k, v in self.store.moments["v"].items()},
        }

    def load_state(self, state: Dict[str, Any]) -> None:
        self.step_count = int(state.get("step", 0))
        for key in ("m", "v"):
            for name, values in state.get(key, {}).items():
                if name not in self.store:
                    raise StructureError(f"optimizer state references unknown parameter {name}")
                p = self.store[name]
                self.store.moments[key][name] = torch.as_tensor(values, dtype=p.dtype).reshape(p.shape).clone()


# ---------------------------------------------------------------------------
# Finite-difference gradient checking
# ---------------------------------------------------------------------------

def numerical_gradient(loss_fn: Callable[[], torch.Tensor], tensor: torch.Tensor, step: float = 1e-5) -> torch.Tensor:
    """Central differences of ``loss_fn()`` with respect to every entry of ``tensor``."""
    grad = torch.zeros_like(tensor)
    flat, flat_grad = tensor.data.view(-1), grad.view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            original = flat[i].item()
            flat[i] = original + step
            plus = float(loss_fn())
            flat[i] = original - step
            minus = float(loss_fn())
            flat[i] = original
            flat_grad[i] = (plus - minus) / (2 * step)
    return grad


def gradient_check(loss_fn: Callable[[], torch.Tensor], store: ParameterStore, step: float = 1e-5,
                   floor: float = 1e-4) -> float:
    """
    Compare autograd gradients against central finite differences

    Args:
        loss_fn: Closure recomputing the scalar loss from the current parameters
        store: Parameters to check
        step: Finite-difference step
        floor: Lower bound of the relative-error denominator

    Returns:
        Maximum elementwise relative error |a - n| / max(|a|, |n|, floor)
    """
    backward(loss_fn(), store)
    worst = 0.0
    for name, p in store.items():
        if not p.requires_grad:
            continue
        analytic = store.grad(name).detach().clone()
        numeric = numerical_gradient(loss_fn, p, step)
        denom = torch.clamp(torch.maximum(analytic.abs(), numeric.abs()), min=floor)
        error = float(((analytic - numeric).abs() / denom).max())
        if error > worst:
            worst = error
            logger.debug(f"gradient check: {name} relative error {error:.3e}")
    return worst


# ---------------------------------------------------------------------------
# Seeding
# ---------------------------------------------------------------------------

def derive_seed(seed: int, *keys: int | str) -> int:
    """Stable 63-bit seed derived from a base seed and a key path."""
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for key in keys:
        words.append(int(hashlib.sha256(key.encode()).hexdigest()[:8], 16) if isinstance(key, str) else int(key))
    return int(np.random.SeedSequence(words).generate_state(2, dtype=np.uint64)[0] >> np.uint64(1))


def make_generator(seed: int, *keys: int | str) -> torch.Generator:
    generator = torch.Generator()
    generator.manual_seed(derive_seed(seed, *keys))
    return generator


def seed_everything(seed: int) -> None:
    torch.manual_seed(derive_seed(seed))
    np.random.seed(derive_seed(seed) % 2**32)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    """A loaded checkpoint: manifest metadata plus f32 tensors"""
    directory: Path
    manifest: Dict[str, Any]
    tensors: Dict[str, np.ndarray]
    optimizer: Dict[str, Any] = field(default_factory=dict)

    @property
    def artifact(self) -> str:
        return self.manifest.get("artifact", "")

    @property
    def model_config(self) -> Dict[str, Any]:
        return self.manifest.get("model_config", {})


def _entries_for(arrays: Dict[str, np.ndarray], offset: int) -> Tuple[List[Dict[str, Any]], List[bytes], int]:
    entries, blobs = [], []
    for name, values in arrays.items():
        blob = np.ascontiguousarray(values, dtype='<f4').tobytes()
        entries.append({"name": name, "shape": list(values.shape), "dtype": "f32",
                        "byte_offset": offset, "byte_len": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    return entries, blobs, offset


def save_checkpoint(directory: Path | str, store: ParameterStore, artifact: str,
                    model_config: Optional[Dict[str, Any]] = None, optimizer: Optional[Adam] = None,
                    extra: Optional[Dict[str, Any]] = None) -> Path:
    """
    Write manifest.json and params.bin, replacing ``directory`` only once both exist

    Args:
        directory: Target checkpoint directory
        store: Parameters to persist
        artifact: Tag ("model", "pose_prior", "sampler")
        model_config: Configuration document embedded in the manifest
        optimizer: Optional optimizer whose moments are persisted
        extra: Additional manifest keys (epoch, seed, ...)

    Returns:
        The checkpoint directory
    """
    directory = Path(directory)
    params, blobs, offset = _entries_for(store.to_numpy(), 0)
    manifest: Dict[str, Any] = {"artifact": artifact, "model_config": model_config or {}, "tensors": params}
    if optimizer is not None:
        state = optimizer.state()
        moment_arrays = {f"m/{k}": v for k, v in state["m"].items()}
        moment_arrays.update({f"v/{k}": v for k, v in state["v"].items()})
        moment_entries, moment_blobs, offset = _entries_for(moment_arrays, offset)
        manifest["optimizer"] = {"step": state["step"], "lr": optimizer.lr, "betas": list(optimizer.betas),
                                 "eps": optimizer.eps, "tensors": moment_entries}
        blobs.extend(moment_blobs)
    manifest.update(extra or {})

    staging = directory.with_name(directory.name + ".tmp")
    retired = directory.with_name(directory.name + ".old")
    try:
        shutil.rmtree(staging, ignore_errors=True)
        staging.mkdir(parents=True)
        with open(staging / PARAMS_NAME, 'wb') as f:
            for blob in blobs:
                f.write(blob)
        with open(staging / MANIFEST_NAME, 'w') as f:
            json.dump(manifest, f, indent=2)
            f.write("\n")
        shutil.rmtree(retired, ignore_errors=True)
        if directory.exists():
            directory.rename(retired)
        staging.rename(directory)
        shutil.rmtree(retired, ignore_errors=True)
    except OSError as e:
        raise ArtifactIOError(directory, f"could not write checkpoint: {e}") from e
    logger.info(f"Saved {artifact} checkpoint to {directory}")
    return directory


def _read_tensors(raw: bytes, entries: List[Dict[str, Any]], directory: Path) -> Dict[str, np.ndarray]:
    tensors = {}
    for entry in entries:
        start, length = int(entry["byte_offset"]), int(entry["byte_len"])
        shape = tuple(int(s) for s in entry["shape"])
        if entry.get("dtype") != "f32" or length != 4 * int(np.prod(shape, dtype=np.int64)):
            raise StructureError(f"checkpoint entry {entry['name']} in {directory} has inconsistent size")
        if start + length > len(raw):
            raise StructureError(f"checkpoint entry {entry['name']} runs past the end of {PARAMS_NAME}")
        tensors[entry["name"]] = np.frombuffer(raw[start:start + length], dtype='<f4').reshape(shape).copy()
    return tensors


def load_checkpoint(directory: Path | str) -> Checkpoint:
    directory = Path(directory)
    if not (directory / MANIFEST_NAME).exists():
        raise MissingArtifactError(f"no checkpoint at {directory}")
    try:
        with open(directory / MANIFEST_NAME, 'r') as f:
            manifest = json.load(f)
        raw = (directory / PARAMS_NAME).read_bytes()
    except OSError as e:
        raise ArtifactIOError(directory, f"could not read checkpoint: {e}") from e
    except json.JSONDecodeError as e:
        raise ArtifactIOError(directory, f"malformed checkpoint manifest: {e}") from e
    tensors = _read_tensors(raw, manifest.get("tensors", []), directory)
    optimizer: Dict[str, Any] = {}
    if "optimizer" in manifest:
        moments = _read_tensors(raw, manifest["optimizer"].get("tensors", []), directory)
        optimizer = {
            "step": manifest["optimizer"].get("step", 0),
            "m": {k[2:]: v for k, v in moments.items() if k.startswith("m/")},
            "v": {k[2:]: v for k, v in moments.items() if k.startswith("v/")},
        }
    return Checkpoint(directory, manifest, tensors, optimizer)


def apply_checkpoint(store: ParameterStore, checkpoint: Checkpoint, strict: bool = True) -> int:
    """
    Copy checkpoint tensors into the store

    Args:
        store: Destination parameters
        checkpoint: Loaded checkpoint
        strict: Require identical names and shapes; otherwise load what matches

    Returns:
        Number of tensors loaded
    """
    if strict:
        missing = set(store.names()) ^ set(checkpoint.tensors)
        if missing:
            raise StructureError(f"checkpoint {checkpoint.directory} does not match model parameters: {sorted(missing)[:5]}")
    loaded = 0
    with torch.no_grad():
        for name, p in store.items():
            values = checkpoint.tensors.get(name)
            if values is None:
                continue
            if tuple(values.shape) != tuple(p.shape):
                if strict:
                    raise StructureError(f"parameter {name}: checkpoint shape {values.shape} != {tuple(p.shape)}")
                continue
            p.copy_(torch.as_tensor(values, dtype=p.dtype))
            loaded += 1
    return loaded
