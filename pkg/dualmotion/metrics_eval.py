"""
Control and Diversity Metrics

This module provides the pairwise-distance metrics (APD, MPD), the pose-prior
NLL score and the controlled-generation protocols that turn a trained model
into comparable evaluation reports.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch
from scipy.spatial.distance import pdist

from .common import ArgumentError, ArtifactIOError, ConfigError, ContractError, MissingArtifactError
from .dual_path_cvae import ControlMode, DualPathCVAE, LatentSource, PathRole, generate_controlled
from .diversity_sampler import SamplerHeads, sample_diverse
from .motion_data import BodyPart, MotionSequence, Skeleton
from .pose_prior_flow import FlowModel, validity_objective

logger = logging.getLogger(__name__)

REPORT_FIELDS = ["protocol", "control", "K", "apd_full", "apd_part1", "apd_part2", "apd_end", "mpd", "nll",
                 "num_conditions"]


class Protocol(str, Enum):
    RANDOM = "random_sampling"
    DIVERSITY = "diversity_sampling"


class Control(str, Enum):
    NONE = "none"
    FIX_ZB = "fix_zb"
    FIX_ZT = "fix_zt"
    END_POSE = "end_pose"


DEFAULT_K = {Protocol.RANDOM: 50, Protocol.DIVERSITY: 10}


@dataclass
class EvalReport:
    """Metrics of one protocol/control setting averaged over the test conditions"""
    protocol: str
    control: str
    K: int
    apd_full: float
    apd_part1: float
    apd_part2: float
    apd_end: float
    mpd: float
    nll: Optional[float]
    num_conditions: int

    def __post_init__(self):
        if self.mpd > self.apd_full + 1e-9:
            raise ContractError(f"mpd {self.mpd} exceeds apd {self.apd_full}")

    def to_dict(self) -> Dict:
        return asdict(self)


def _flatten(sequences, columns: Optional[np.ndarray]) -> np.ndarray:
    if isinstance(sequences, torch.Tensor):
        seqs = sequences.detach().cpu().numpy()
    else:
        seqs = np.asarray([s.frames if isinstance(s, MotionSequence) else s for s in sequences], dtype=np.float64)
    if seqs.ndim != 3:
        raise ArgumentError(f"expected K sequences [K, T, d], got shape {seqs.shape}")
    if seqs.shape[0] < 2:
        raise ArgumentError(f"pairwise metrics need K >= 2, got {seqs.shape[0]}")
    if columns is not None:
        seqs = seqs[..., np.asarray(columns)]
    return seqs.reshape(seqs.shape[0], -1).astype(np.float64)


def apd(sequences, columns: Optional[np.ndarray] = None) -> float:
    """Average pairwise L2 distance between flattened sequences."""
    return float(pdist(_flatten(sequences, columns), metric="euclidean").mean())


def mpd(sequences, columns: Optional[np.ndarray] = None) -> float:
    """Minimum pairwise L2 distance between flattened sequences."""
    return float(pdist(_flatten(sequences, columns), metric="euclidean").min())


def final_frame_apd(sequences) -> float:
    """APD over the last frame only."""
    flat = sequences[:, -1:] if isinstance(sequences, (torch.Tensor, np.ndarray)) else \
        [np.asarray(s.frames if isinstance(s, MotionSequence) else s)[-1:] for s in sequences]
    return apd(flat)


def nll_score(flow: FlowModel, sequences, skeleton: Skeleton) -> float:
    """Mean pose-prior NLL over every frame of the sequences."""
    if isinstance(sequences, torch.Tensor):
        poses = sequences.reshape(-1, sequences.shape[-1])
    else:
        poses = sequences
    with torch.no_grad():
        return float(validity_objective(flow, poses, skeleton))


def _as_tensor(frames) -> torch.Tensor:
    if isinstance(frames, MotionSequence):
        frames = frames.frames
    return torch.as_tensor(np.asarray(frames), dtype=torch.get_default_dtype())


class ControlEvaluator:
    """Runs the controlled-generation protocols of a trained model"""

    def __init__(self, model: DualPathCVAE, sampler: Optional[SamplerHeads] = None, flow: Optional[FlowModel] = None):
        """
        Initialize the evaluator

        Args:
            model: Trained dual-path model
            sampler: Trained diversity sampler, needed by the diversity protocol
            flow: Trained pose prior; reports carry no NLL without it
        """
        self.model = model
        self.sampler = sampler
        self.flow = flow
        split = model.config.split
        self.part_columns = {part: split.columns(part) for part in BodyPart}

    def _sources(self, control: Control) -> Tuple[LatentSource, LatentSource]:
        model = self.model
        if control is Control.NONE:
            return LatentSource.prior_sample(), LatentSource.prior_sample()
        if model.bottom is None:
            raise ConfigError(f"control '{control.value}' needs a model with a bottom path")
        if control is Control.END_POSE and model.config.mode is not ControlMode.END_POSE:
            raise ConfigError("end_pose control needs a model trained in end_pose_control mode")
        if control is Control.FIX_ZT:
            return LatentSource.fixed(), LatentSource.prior_sample()
        return LatentSource.prior_sample(), LatentSource.fixed()

    def _check_sampler(self, control: Control) -> None:
        if self.sampler is None:
            raise MissingArtifactError("the diversity protocol needs a trained sampler")
        expected = PathRole.BOTTOM if control is Control.FIX_ZT else PathRole.TOP
        if control is Control.NONE and self.model.bottom is not None:
            raise ConfigError("the diversity protocol always holds one latent fixed; pick fix_zb, fix_zt or end_pose")
        if control is Control.END_POSE and self.model.config.mode is not ControlMode.END_POSE:
            raise ConfigError("end_pose control needs a model trained in end_pose_control mode")
        if self.model.bottom is not None and self.sampler.target is not expected:
            raise ConfigError(f"sampler diversifies the {self.sampler.target.value} latent, "
                              f"control '{control.value}' needs {expected.value}")

    def generate(self, c: torch.Tensor, protocol: Protocol | str, control: Control | str, K: int,
                 seed: int) -> torch.Tensor:
        protocol, control = Protocol(protocol), Control(control)
        if protocol is Protocol.DIVERSITY:
            self._check_sampler(control)
            if K != self.sampler.K:
                raise ConfigError(f"sampler was trained for K={self.sampler.K}, got K={K}")
            return sample_diverse(self.sampler, self.model, c, seed)
        z_t_source, z_b_source = self._sources(control)
        return generate_controlled(self.model, c, z_t_source, z_b_source, K, seed)

    def condition_metrics(self, futures: torch.Tensor) -> Dict[str, float]:
        metrics = {
            "apd_full": apd(futures),
            "apd_part1": apd(futures, self.part_columns[BodyPart.PART1]),
            "apd_part2": apd(futures, self.part_columns[BodyPart.PART2]),
            "apd_end": final_frame_apd(futures),
            "mpd": mpd(futures),
        }
        if self.flow is not None:
            metrics["nll"] = nll_score(self.flow, futures, self.model.config.skeleton)
        return metrics

    def run(self, test_set: Sequence, protocol: Protocol | str, control: Control | str,
            K: Optional[int] = None, seed: int = 0) -> EvalReport:
        """
        Generate K futures per test condition and average the metrics

        Args:
            test_set: (past, future) pairs; only the pasts are used
            protocol: random_sampling or diversity_sampling
            control: none, fix_zb, fix_zt or end_pose
            K: Samples per condition (50 random / 10 diversity by default)
            seed: Condition i uses seed + i

        Returns:
            EvalReport with the unweighted mean over conditions
        """
        protocol, control = Protocol(protocol), Control(control)
        K = DEFAULT_K[protocol] if K is None else int(K)
        if K < 2:
            raise ArgumentError(f"evaluation needs K >= 2, got {K}")
        if not test_set:
            raise ArgumentError("test set is empty")
        logger.info(f"Evaluating {protocol.value}/{control.value} with K={K} on {len(test_set)} conditions")
        rows = []
        for i, pair in enumerate(test_set):
            past = pair[0] if isinstance(pair, (tuple, list)) else pair
            futures = self.generate(_as_tensor(past), protocol, control, K, seed + i)
            rows.append(self.condition_metrics(futures))
        means = pd.DataFrame(rows).mean(axis=0)
        return EvalReport(
            protocol=protocol.value, control=control.value, K=K,
            apd_full=float(means["apd_full"]), apd_part1=float(means["apd_part1"]),
            apd_part2=float(means["apd_part2"]), apd_end=float(means["apd_end"]), mpd=float(means["mpd"]),
            nll=float(means["nll"]) if "nll" in means else None, num_conditions=len(rows),
        )


def run_control_protocol(model: DualPathCVAE, sampler: Optional[SamplerHeads], flow: Optional[FlowModel],
                         test_set: Sequence, protocol: Protocol | str, control: Control | str,
                         K: Optional[int] = None, seed: int = 0) -> EvalReport:
    return ControlEvaluator(model, sampler, flow).run(test_set, protocol, control, K, seed)


def reports_table(reports: List[EvalReport]) -> pd.DataFrame:
    """One row per report, columns in report order."""
    return pd.DataFrame([r.to_dict() for r in reports], columns=REPORT_FIELDS)


def save_report(report: EvalReport, directory: Path | str, stem: Optional[str] = None) -> Tuple[Path, Path]:
    """
    Write the report as a text table and a JSON document

    Returns:
        (text path, json path)
    """
    directory = Path(directory)
    stem = stem or f"report_{report.protocol}_{report.control}"
    text_path, json_path = directory / f"{stem}.txt", directory / f"{stem}.json"
    table = reports_table([report]).to_string(index=False, float_format=lambda v: f"{v:.4f}")
    try:
        directory.mkdir(parents=True, exist_ok=True)
        text_path.write_text(table + "\n")
        with open(json_path, 'w') as f:
            json.dump(report.to_dict(), f, indent=2)
            f.write("\n")
    except OSError as e:
        raise ArtifactIOError(directory, f"could not write report: {e}") from e
    logger.info(f"Saved report to {text_path} and {json_path}")
    return text_path, json_path
