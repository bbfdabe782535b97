#!/usr/bin/env python3
"""
Dual-Path Motion Pipeline

This module ties dataset generation, the three training stages (model, pose
prior, diversity sampler), controlled generation, evaluation and export into
reproducible command-line runs.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import torch
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from tqdm import tqdm

from .common import (
    ArgumentError, ArtifactIOError, ConfigError, DualMotionError, MissingArtifactError, NumericalAbort,
    StructureError, check_finite, get_env, setup_logging,
)
from .diversity_sampler import (
    SamplerHeads, SamplerLossWeights, load_sampler, sample_diverse, save_sampler, train_sampler,
)
from .dual_path_cvae import (
    BottomInput, ControlMode, DualPathCVAE, LatentSource, ModelConfig, PathRole, generate_controlled, load_model,
    save_model,
)
from .metrics_eval import Control, ControlEvaluator, EvalReport, Protocol, reports_table, save_report
from .motion_data import (
    GaitConfigSampler, MotionSequence, generate_synthetic_dataset, load_motion, make_train_test_split,
    remove_global_translation, save_motion, window_sequence,
)
from .neural_primitives import Adam, apply_checkpoint, backward, load_checkpoint, make_generator
from .objectives import LossBreakdown, total_loss
from .plotting import plot_sequence
from .pose_prior_flow import FlowModel, load_flow, pooled_pose_directions, save_flow, train_pose_prior

logger = logging.getLogger(__name__)

TRAIN_LOG_COLUMNS = ["epoch", "rec_top", "rec_bottom", "kl_top", "kl_bottom", "total"]

EXIT_OK, EXIT_FAILURE, EXIT_USAGE, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3, 4


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DatasetConfig(_Section):
    count: int = Field(2000, ge=0)
    fps: float = Field(30.0, gt=0)
    test_fraction: float = Field(0.1, ge=0.0, lt=1.0)
    import_dir: Optional[str] = None
    window_stride: int = Field(8, ge=1)
    noise_std: float = Field(0.0, ge=0.0)
    lower_switch_prob: float = Field(0.5, ge=0.0, le=1.0)
    upper_switch_prob: float = Field(0.5, ge=0.0, le=1.0)


class OptimizerConfig(_Section):
    lr: float = Field(1e-4, ge=0.0)
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = Field(1e-8, gt=0.0)
    batch_size: int = Field(64, ge=1)
    epochs: int = Field(500, ge=0)
    init_checkpoint: Optional[str] = None


class SamplerConfig(_Section):
    K: int = Field(10, ge=2)
    hidden: int = Field(128, ge=1)
    target: PathRole = PathRole.TOP
    lambda_kl: float = Field(1.0, ge=0.0)
    lambda_div: float = Field(0.7, ge=0.0)
    lambda_vli: float = Field(0.7, ge=0.0)
    div_clip: Tuple[float, float] = (0.0, 160.0)
    lr: float = Field(1e-4, ge=0.0)
    epochs: int = Field(100, ge=0)
    batch_size: int = Field(64, ge=1)

    @property
    def weights(self) -> SamplerLossWeights:
        return SamplerLossWeights(self.lambda_kl, self.lambda_div, self.lambda_vli, tuple(self.div_clip))


class FlowConfig(_Section):
    lr: float = Field(1e-3, ge=0.0)
    epochs: int = Field(300, ge=0)
    batch_size: int = Field(256, ge=1)
    num_layers: int = Field(3, ge=1)


class EvalConfig(_Section):
    K_random: int = Field(50, ge=2)
    K_diversity: int = Field(10, ge=2)


class RunConfig(_Section):
    """Every setting of a run; every field has a default"""
    model: ModelConfig = Field(default_factory=ModelConfig)
    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    sampler: SamplerConfig = Field(default_factory=SamplerConfig)
    flow: FlowConfig = Field(default_factory=FlowConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    seed: int = Field(0, ge=0)
    out_dir: str = "output"

    @model_validator(mode="after")
    def _check_sampler(self):
        if self.sampler.div_clip[0] > self.sampler.div_clip[1]:
            raise ValueError("sampler.div_clip lower bound exceeds upper bound")
        return self

    def emit(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")

    @classmethod
    def parse(cls, document: Dict[str, Any]) -> "RunConfig":
        try:
            return cls.model_validate(document)
        except ValidationError as e:
            raise ConfigError(f"invalid configuration: {e}") from e


def _deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_run_config(config_path: Optional[str] = None) -> RunConfig:
    """Merge a JSON document over the defaults; unknown keys are rejected."""
    document = RunConfig().emit()
    if config_path:
        try:
            with open(config_path, 'r') as f:
                user = json.load(f)
        except FileNotFoundError as e:
            raise MissingArtifactError(f"config file not found: {config_path}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"malformed config file {config_path}: {e}") from e
        except OSError as e:
            raise ArtifactIOError(config_path, f"could not read config: {e}") from e
        document = _deep_merge(document, user)
    return RunConfig.parse(document)


def _stack(pairs: List[Tuple[MotionSequence, MotionSequence]]) -> Tuple[torch.Tensor, torch.Tensor]:
    dtype = torch.get_default_dtype()
    c = torch.as_tensor(np.stack([p.frames for p, _ in pairs]), dtype=dtype)
    x = torch.as_tensor(np.stack([f.frames for _, f in pairs]), dtype=dtype)
    return c, x


class DualMotionPipeline:
    """Complete pipeline from synthetic data to evaluation reports"""

    def __init__(self, config: RunConfig):
        """
        Initialize the pipeline

        Args:
            config: Run configuration; ``out_dir`` receives every artifact
        """
        self.config = config
        self.out = Path(config.out_dir)

    # -- layout -----------------------------------------------------------

    @property
    def data_dir(self) -> Path:
        return self.out / "data"

    @property
    def model_dir(self) -> Path:
        return self.out / "model"

    @property
    def flow_dir(self) -> Path:
        return self.out / "pose_prior"

    @property
    def sampler_dir(self) -> Path:
        return self.out / "sampler"

    @property
    def seed(self) -> int:
        return self.config.seed

    # -- dataset ----------------------------------------------------------

    def _dataset_pairs(self) -> List[Tuple[MotionSequence, MotionSequence]]:
        model_cfg, data_cfg = self.config.model, self.config.dataset
        skeleton = model_cfg.skeleton
        if data_cfg.import_dir:
            source = Path(data_cfg.import_dir)
            if not source.is_dir():
                raise MissingArtifactError(f"import directory not found: {source}")
            pairs = []
            for path in sorted(source.glob("*.json")):
                if path.name == "manifest.json":
                    continue
                seq = remove_global_translation(load_motion(path))
                if seq.skeleton != skeleton:
                    raise StructureError(f"{path} uses a skeleton that differs from the configured one")
                pairs.extend(window_sequence(seq, model_cfg.H, model_cfg.T, data_cfg.window_stride))
            logger.info(f"Imported {len(pairs)} windows from {source}")
            return pairs
        sampler = GaitConfigSampler(noise_std=data_cfg.noise_std, lower_switch_prob=data_cfg.lower_switch_prob,
                                    upper_switch_prob=data_cfg.upper_switch_prob)
        return generate_synthetic_dataset(skeleton, data_cfg.count, model_cfg.H, model_cfg.T, sampler,
                                          self.seed, data_cfg.fps)

    def make_data(self) -> Path:
        """Write one motion file per (past, future) pair plus the split manifest."""
        logger.info("Generating dataset...")
        pairs = self._dataset_pairs()
        train, test = make_train_test_split(len(pairs), self.config.dataset.test_fraction, self.seed)
        for index, (past, future) in enumerate(pairs):
            save_motion(past.with_frames(np.concatenate([past.frames, future.frames])),
                        self.data_dir / f"pair_{index:05d}.json")
        manifest = {
            "H": self.config.model.H, "T": self.config.model.T, "count": len(pairs),
            "fps": self.config.dataset.fps, "seed": self.seed,
            "joints": list(self.config.model.joints), "parents": list(self.config.model.parents),
            "train": train, "test": test,
        }
        try:
            self.data_dir.mkdir(parents=True, exist_ok=True)
            with open(self.data_dir / "manifest.json", 'w') as f:
                json.dump(manifest, f, indent=2)
                f.write("\n")
        except OSError as e:
            raise ArtifactIOError(self.data_dir, f"could not write dataset manifest: {e}") from e
        logger.info(f"Wrote {len(pairs)} pairs to {self.data_dir} ({len(train)} train / {len(test)} test)")
        return self.data_dir

    def load_dataset(self, subset: str = "train") -> List[Tuple[MotionSequence, MotionSequence]]:
        manifest_path = self.data_dir / "manifest.json"
        if not manifest_path.exists():
            raise MissingArtifactError(f"no dataset at {self.data_dir}; run make-data first")
        with open(manifest_path, 'r') as f:
            manifest = json.load(f)
        H, T = manifest["H"], manifest["T"]
        if (H, T) != (self.config.model.H, self.config.model.T):
            raise StructureError(f"dataset has H={H}, T={T}; configuration expects "
                                 f"H={self.config.model.H}, T={self.config.model.T}")
        pairs = []
        for index in manifest[subset]:
            seq = load_motion(self.data_dir / f"pair_{index:05d}.json")
            pairs.append((seq.with_frames(seq.frames[:H]), seq.with_frames(seq.frames[H:H + T])))
        if not pairs:
            raise MissingArtifactError(f"dataset subset '{subset}' is empty")
        return pairs

    # -- stage 1: dual-path model ----------------------------------------

    def _training_log(self, start_epoch: int) -> List[Dict[str, float]]:
        path = self.out / "training_log.csv"
        if start_epoch == 0 or not path.exists():
            return []
        rows = pd.read_csv(path)
        return rows[rows["epoch"] < start_epoch].to_dict("records")

    def train(self, resume: bool = False) -> Path:
        """
        Train the dual-path model, checkpointing after every epoch

        Args:
            resume: Continue from the checkpoint in ``<out>/model``

        Returns:
            Checkpoint directory
        """
        cfg, opt_cfg = self.config.model, self.config.optimizer
        logger.info(f"Training {cfg.mode.value} model for {opt_cfg.epochs} epochs...")
        c_all, x_all = _stack(self.load_dataset("train"))
        model = DualPathCVAE(cfg, generator=make_generator(self.seed, "init"))
        store = model.store
        optimizer = Adam(store, lr=opt_cfg.lr, betas=opt_cfg.betas, eps=opt_cfg.eps)
        start_epoch = 0
        if resume and (self.model_dir / "manifest.json").exists():
            checkpoint = load_checkpoint(self.model_dir)
            if not ModelConfig.parse(checkpoint.model_config) == cfg:
                raise StructureError(f"cannot resume: {self.model_dir} was trained with a different model config")
            apply_checkpoint(store, checkpoint)
            optimizer.load_state(checkpoint.optimizer)
            start_epoch = int(checkpoint.manifest.get("epoch", -1)) + 1
            logger.info(f"Resuming from epoch {start_epoch}")
        elif opt_cfg.init_checkpoint:
            loaded = apply_checkpoint(store, load_checkpoint(opt_cfg.init_checkpoint), strict=False)
            logger.info(f"Warm-started {loaded} tensors from {opt_cfg.init_checkpoint}")

        rows = self._training_log(start_epoch)
        count = c_all.shape[0]
        for epoch in tqdm(range(start_epoch, opt_cfg.epochs), desc="model", leave=False):
            order = torch.randperm(count, generator=make_generator(self.seed, "train", epoch))
            sums = {k: 0.0 for k in TRAIN_LOG_COLUMNS[1:]}
            for batch_index, start in enumerate(range(0, count, opt_cfg.batch_size)):
                idx = order[start:start + opt_cfg.batch_size]
                noise = make_generator(self.seed, "train-eps", epoch, batch_index)
                loss: LossBreakdown = total_loss(model, c_all[idx], x_all[idx], cfg.mode, noise)
                check_finite("training loss", float(loss.total))
                backward(loss.total, store)
                optimizer.step()
                for key, value in loss.as_floats().items():
                    sums[key] += value * idx.shape[0]
            rows.append({"epoch": epoch, **{k: v / count for k, v in sums.items()}})
            logger.info(f"epoch {epoch}: total {rows[-1]['total']:.4f} rec_top {rows[-1]['rec_top']:.4f}")
            save_model(model, self.model_dir, optimizer, epoch=epoch, seed=self.seed)
            self._write_csv(pd.DataFrame(rows, columns=TRAIN_LOG_COLUMNS), self.out / "training_log.csv")
        if opt_cfg.epochs == 0 or start_epoch >= opt_cfg.epochs:
            save_model(model, self.model_dir, optimizer, epoch=start_epoch - 1, seed=self.seed)
        return self.model_dir

    # -- stage 2: pose prior ---------------------------------------------

    def train_pose_prior(self) -> Path:
        flow_cfg = self.config.flow
        skeleton = self.config.model.skeleton
        logger.info(f"Training pose prior for {flow_cfg.epochs} epochs...")
        directions = pooled_pose_directions(self.load_dataset("train"), skeleton)
        flow = FlowModel.random(skeleton.dim, make_generator(self.seed, "flow-init"), flow_cfg.num_layers)
        self.out.mkdir(parents=True, exist_ok=True)
        history = train_pose_prior(flow, directions, flow_cfg.epochs, flow_cfg.lr, flow_cfg.batch_size,
                                   self.seed, self.out / "pose_prior_log.csv")
        save_flow(flow, self.flow_dir, skeleton, epochs=len(history))
        return self.flow_dir

    # -- stage 3: diversity sampler --------------------------------------

    def _load_model(self, directory: Optional[str] = None) -> DualPathCVAE:
        path = Path(directory) if directory else self.model_dir
        if not (path / "manifest.json").exists():
            raise MissingArtifactError(f"no model checkpoint at {path}; run train first")
        return load_model(path, self.config.model)

    def _load_flow(self, directory: Optional[str] = None, required: bool = True) -> Optional[FlowModel]:
        path = Path(directory) if directory else self.flow_dir
        if not (path / "manifest.json").exists():
            if required:
                raise MissingArtifactError(f"no pose prior at {path}; run train-pose-prior first")
            return None
        return load_flow(path, self.config.model.skeleton)

    def train_sampler(self, model_dir: Optional[str] = None, flow_dir: Optional[str] = None) -> Path:
        s_cfg = self.config.sampler
        model = self._load_model(model_dir)
        flow = self._load_flow(flow_dir, required=s_cfg.lambda_vli > 0)
        logger.info(f"Training {s_cfg.target.value}-latent sampler (K={s_cfg.K}) for {s_cfg.epochs} epochs...")
        conditions, _ = _stack(self.load_dataset("train"))
        heads = SamplerHeads(s_cfg.K, model.config.d_z, model.config.d, s_cfg.hidden, s_cfg.target,
                             generator=make_generator(self.seed, "sampler-init"))
        self.out.mkdir(parents=True, exist_ok=True)
        train_sampler(heads, model, flow, conditions, s_cfg.weights, s_cfg.epochs, s_cfg.lr, self.seed,
                      s_cfg.batch_size, self.out / "sampler_log.csv")
        save_sampler(heads, self.sampler_dir, epochs=s_cfg.epochs, seed=self.seed)
        return self.sampler_dir

    # -- generation and evaluation ---------------------------------------

    def _read_past(self, past_file: str) -> torch.Tensor:
        seq = load_motion(past_file)
        cfg = self.config.model
        if list(seq.skeleton.joint_names) != list(cfg.joints) or list(seq.skeleton.parents) != list(cfg.parents):
            raise StructureError(f"{past_file} uses a skeleton that differs from the model's")
        if seq.length < cfg.H:
            raise StructureError(f"{past_file} has {seq.length} frames, the model needs {cfg.H} past frames")
        return torch.as_tensor(seq.frames[:cfg.H], dtype=torch.get_default_dtype())

    def generate(self, past_file: str, K: int, fix_zb: bool = False, fix_zt: bool = False,
                 end_pose: bool = False, diverse: bool = False, model_dir: Optional[str] = None,
                 sampler_dir: Optional[str] = None, plot: bool = False,
                 samples_dir: Optional[str] = None) -> List[Path]:
        """Write K controlled futures of one past as motion files (and SVG plots)."""
        if fix_zb and end_pose:
            raise ConfigError("--fix-zb cannot be combined with --end-pose (end-pose generation already fixes z_b)")
        if diverse and fix_zb and fix_zt:
            raise ConfigError("--diverse needs one free latent; drop --fix-zb or --fix-zt")
        sampler_path = Path(sampler_dir) if sampler_dir else self.sampler_dir
        if diverse and not (sampler_path / "manifest.json").exists():
            raise ConfigError(f"--diverse needs a sampler checkpoint (none at {sampler_path})")
        model = self._load_model(model_dir)
        if end_pose and model.config.mode is not ControlMode.END_POSE:
            raise ConfigError("--end-pose needs a model trained in end_pose_control mode")
        c = self._read_past(past_file)
        if diverse:
            heads = load_sampler(sampler_path)
            if fix_zt and heads.target is not PathRole.BOTTOM:
                raise ConfigError("--fix-zt with --diverse needs a sampler trained on the bottom latent")
            if (fix_zb or end_pose) and heads.target is not PathRole.TOP:
                raise ConfigError("--fix-zb/--end-pose with --diverse needs a sampler trained on the top latent")
            if K != heads.K:
                logger.warning(f"-K {K} ignored; the sampler produces {heads.K} futures")
            futures = sample_diverse(heads, model, c, self.seed)
        else:
            z_t = LatentSource.fixed() if fix_zt else LatentSource.prior_sample()
            z_b = LatentSource.fixed() if (fix_zb or end_pose) else LatentSource.prior_sample()
            futures = generate_controlled(model, c, z_t, z_b, K, self.seed)

        target = Path(samples_dir) if samples_dir else self.out / "samples"
        skeleton = model.config.skeleton
        written = []
        for k, frames in enumerate(futures.detach().cpu().numpy()):
            seq = MotionSequence(skeleton, frames.astype(np.float64), self.config.dataset.fps)
            written.append(save_motion(seq, target / f"sample_{k:02d}.json"))
            if plot:
                plot_sequence(seq, target / f"sample_{k:02d}.svg")
        logger.info(f"Wrote {len(written)} samples to {target}")
        return written

    def evaluate(self, protocols: List[str], controls: Optional[List[str]] = None, K: Optional[int] = None,
                 model_dir: Optional[str] = None, sampler_dir: Optional[str] = None,
                 flow_dir: Optional[str] = None) -> List[EvalReport]:
        """Run every requested protocol/control pair on the test split and save the reports."""
        model = self._load_model(model_dir)
        flow = self._load_flow(flow_dir, required=False)
        sampler_path = Path(sampler_dir) if sampler_dir else self.sampler_dir
        sampler = load_sampler(sampler_path) if (sampler_path / "manifest.json").exists() else None
        evaluator = ControlEvaluator(model, sampler, flow)
        test_set = self.load_dataset("test")
        report_dir = self.out / "reports"
        reports = []
        for name in protocols:
            protocol = Protocol(name)
            if protocol is Protocol.DIVERSITY and sampler is None:
                raise MissingArtifactError(f"the diversity protocol needs a sampler checkpoint at {sampler_path}")
            for control in controls or self._default_controls(model, protocol, sampler):
                k = K or (self.config.eval.K_random if protocol is Protocol.RANDOM else self.config.eval.K_diversity)
                report = evaluator.run(test_set, protocol, control, k, self.seed)
                save_report(report, report_dir)
                reports.append(report)
        table = reports_table(reports)
        self._write_csv(table, report_dir / "summary.csv")
        (report_dir / "summary.txt").write_text(table.to_string(index=False) + "\n")
        print(table.to_string(index=False))
        return reports

    @staticmethod
    def _default_controls(model: DualPathCVAE, protocol: Protocol, sampler: Optional[SamplerHeads]) -> List[str]:
        if model.bottom is None:
            return [Control.NONE.value]
        end_pose = model.config.mode is ControlMode.END_POSE
        if protocol is Protocol.DIVERSITY:
            if sampler is not None and sampler.target is PathRole.BOTTOM:
                return [Control.FIX_ZT.value]
            return [Control.END_POSE.value if end_pose else Control.FIX_ZB.value]
        controls = [Control.NONE.value, Control.FIX_ZB.value, Control.FIX_ZT.value]
        return controls + [Control.END_POSE.value] if end_pose else controls

    def export(self, source: Optional[str] = None, output: Optional[str] = None) -> Path:
        """Flatten a directory of motion files into one long-format CSV."""
        source_dir = Path(source) if source else self.data_dir
        files = sorted(p for p in source_dir.glob("*.json") if p.name != "manifest.json")
        if not files:
            raise MissingArtifactError(f"no motion files in {source_dir}")
        frames = []
        for path in files:
            seq = load_motion(path)
            joints = seq.joints()
            L, N = joints.shape[:2]
            frames.append(pd.DataFrame({
                "sequence": path.stem,
                "frame": np.repeat(np.arange(L), N),
                "joint": np.tile(np.asarray(seq.skeleton.joint_names), L),
                "x": joints[..., 0].reshape(-1), "y": joints[..., 1].reshape(-1), "z": joints[..., 2].reshape(-1),
            }))
        target = Path(output) if output else self.out / "export.csv"
        self._write_csv(pd.concat(frames, ignore_index=True), target)
        logger.info(f"Exported {len(files)} sequences to {target}")
        return target

    @staticmethod
    def _write_csv(frame: pd.DataFrame, path: Path) -> None:
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            frame.to_csv(path, index=False)
        except OSError as e:
            raise ArtifactIOError(path, f"could not write CSV: {e}") from e


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # Subcommand copies must not default: a value given before the subcommand has to survive.
    default = argparse.SUPPRESS if suppress else None
    flags = argparse.ArgumentParser(add_help=False)
    flags.add_argument('--config', default=default, help='Configuration file path')
    flags.add_argument('--seed', type=int, default=default, help='Override the configured seed')
    flags.add_argument('--out', default=default, help='Output directory')
    return flags


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='Dual-path motion prediction pipeline',
                                     parents=[_global_flags(suppress=False)])
    common = _global_flags(suppress=True)
    sub = parser.add_subparsers(dest='command', required=True)

    make_data = sub.add_parser('make-data', parents=[common], help='Generate or import the dataset')
    make_data.add_argument('--count', type=int, help='Number of synthetic pairs')
    make_data.add_argument('--import-dir', help='Directory of motion files to window instead of synthesizing')

    train = sub.add_parser('train', parents=[common], help='Train the dual-path model')
    train.add_argument('--epochs', type=int)
    train.add_argument('--mode', choices=[m.value for m in ControlMode])
    train.add_argument('--aux-length', type=int, help='Frames in the end-pose bridge (default: T)')
    train.add_argument('--resume', action='store_true', help='Continue from <out>/model')
    train.add_argument('--init-checkpoint', help='Warm-start from an earlier model checkpoint')

    prior = sub.add_parser('train-pose-prior', parents=[common], help='Train the pose-validity flow')
    prior.add_argument('--epochs', type=int)

    sampler = sub.add_parser('train-sampler', parents=[common], help='Train the diversity sampler')
    sampler.add_argument('--epochs', type=int)
    sampler.add_argument('--model', help='Model checkpoint directory')
    sampler.add_argument('--pose-prior', help='Pose prior checkpoint directory')
    sampler.add_argument('--target', choices=[r.value for r in PathRole], help='Latent to diversify')

    generate = sub.add_parser('generate', parents=[common], help='Generate controlled futures')
    generate.add_argument('--past', required=True, help='Motion file holding at least H frames')
    generate.add_argument('--model', help='Model checkpoint directory')
    generate.add_argument('--sampler', help='Sampler checkpoint directory')
    generate.add_argument('-K', type=int, default=10, help='Number of futures')
    generate.add_argument('--fix-zb', action='store_true')
    generate.add_argument('--fix-zt', action='store_true')
    generate.add_argument('--end-pose', action='store_true')
    generate.add_argument('--diverse', action='store_true')
    generate.add_argument('--plot', action='store_true', help='Also write one SVG per sample')
    generate.add_argument('--samples-dir', help='Where to write the samples')

    evaluate = sub.add_parser('evaluate', parents=[common], help='Run the evaluation protocols')
    evaluate.add_argument('--protocol', choices=[p.value for p in Protocol] + ['all'], default='random_sampling')
    evaluate.add_argument('--control', nargs='+', choices=[c.value for c in Control])
    evaluate.add_argument('-K', type=int)
    evaluate.add_argument('--model')
    evaluate.add_argument('--sampler')
    evaluate.add_argument('--pose-prior')

    export = sub.add_parser('export', parents=[common], help='Convert motion files to CSV')
    export.add_argument('--source', help='Directory of motion files (default: <out>/data)')
    export.add_argument('--output', help='CSV path (default: <out>/export.csv)')
    return parser


def _apply_overrides(config: RunConfig, args: argparse.Namespace) -> RunConfig:
    document = config.emit()
    if args.seed is not None:
        document["seed"] = args.seed
    out = args.out or get_env("DUALMOTION_OUT")
    if out:
        document["out_dir"] = out
    if args.command == 'make-data':
        if args.count is not None:
            document["dataset"]["count"] = args.count
        if args.import_dir:
            document["dataset"]["import_dir"] = args.import_dir
    elif args.command == 'train':
        if args.epochs is not None:
            document["optimizer"]["epochs"] = args.epochs
        if args.mode:
            document["model"]["mode"] = args.mode
            if args.mode == ControlMode.END_POSE.value:
                document["model"]["bottom_input"] = BottomInput.AUX.value
        if args.aux_length is not None:
            document["model"]["aux_length"] = args.aux_length
        if args.init_checkpoint:
            document["optimizer"]["init_checkpoint"] = args.init_checkpoint
    elif args.command == 'train-pose-prior' and args.epochs is not None:
        document["flow"]["epochs"] = args.epochs
    elif args.command == 'train-sampler':
        if args.epochs is not None:
            document["sampler"]["epochs"] = args.epochs
        if args.target:
            document["sampler"]["target"] = args.target
    return RunConfig.parse(document)


def run(args: argparse.Namespace) -> None:
    config = _apply_overrides(load_run_config(args.config), args)
    pipeline = DualMotionPipeline(config)
    setup_logging(pipeline.out, get_env("DUALMOTION_LOG_LEVEL", "INFO"))
    threads = get_env("DUALMOTION_NUM_THREADS")
    if threads:
        torch.set_num_threads(int(threads))
    torch.manual_seed(config.seed)

    if args.command == 'make-data':
        pipeline.make_data()
    elif args.command == 'train':
        pipeline.train(resume=args.resume)
    elif args.command == 'train-pose-prior':
        pipeline.train_pose_prior()
    elif args.command == 'train-sampler':
        pipeline.train_sampler(args.model, args.pose_prior)
    elif args.command == 'generate':
        pipeline.generate(args.past, args.K, args.fix_zb, args.fix_zt, args.end_pose, args.diverse,
                          args.model, args.sampler, args.plot, args.samples_dir)
    elif args.command == 'evaluate':
        protocols = [p.value for p in Protocol] if args.protocol == 'all' else [args.protocol]
        pipeline.evaluate(protocols, args.control, args.K, args.model, args.sampler, args.pose_prior)
    elif args.command == 'export':
        pipeline.export(args.source, args.output)


def main(argv: Optional[List[str]] = None) -> int:
    """Main function for running the pipeline; returns the process exit code"""
    load_dotenv()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK

    try:
        run(args)
        return EXIT_OK
    except (ConfigError, MissingArtifactError, StructureError, ArgumentError) as e:
        logger.error(f"Usage error: {e}")
        return EXIT_USAGE
    except NumericalAbort as e:
        logger.error(f"Numerical abort, last good checkpoint kept: {e}")
        return EXIT_NUMERICAL
    except (ArtifactIOError, OSError) as e:
        logger.error(f"I/O failure: {e}")
        return EXIT_IO
    except DualMotionError as e:
        logger.error(f"Pipeline failed: {e}")
        return EXIT_FAILURE
    except KeyboardInterrupt:
        logger.info("Pipeline interrupted by user")
        return 130


if __name__ == "__main__":
    sys.exit(main())
