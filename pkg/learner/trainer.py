"""
Pretraining loop - two-phase diet schedule, AdamW with warm-up and cosine
annealing, teacher momentum, Fisher tracking and atomic checkpoints
"""
import copy
import hashlib
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import torch
import torch.nn as nn
from torch.optim import AdamW
from torch.optim.lr_scheduler import LambdaLR
from tqdm import tqdm

from curriculum.schedules import TrainingPlan
from learner.encoders import EncoderConfig, SSLModel, build_model
from learner.fisher import fim_trace
from learner.losses import contrastive_tdiet_loss, distillation_tdiet_loss
from learner.momentum import ema_update, momentum_at
from learner.pipeline import TrainingBatch, epoch_batches, n_batches, probe_batches
from ops.errors import ConfigError, DivergenceError, NumericError
from ops.seeding import derive_seed
from stimuli.types import VideoDataset

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "last.pt"
METRICS_NAME = "metrics.jsonl"


@dataclass
class TrainerConfig:
    """Optimizer, objective and bookkeeping constants for one run"""

    batch_size: int = 64
    frames_per_video: int = 10
    lr: float = 5e-4
    weight_decay: float = 1e-4
    warmup_epochs: int = 10
    student_temperature: float = 0.1
    teacher_temperature: float = 0.04
    center_momentum: float = 0.9
    momentum_start: float = 0.996
    momentum_end: float = 1.0
    local_crops: int = 6
    aggregation: str = "mean_log_ratio"
    fim_batches: int = 8
    fim_temperature: float = 0.1
    checkpoint_every: int = 1
    workers: int = 1
    deterministic: bool = True
    show_progress: bool = False

    @classmethod
    def from_settings(cls, settings: dict, **overrides) -> "TrainerConfig":
        desk = settings.get("desk", {})
        opt = settings.get("optimizer", {})
        con = settings.get("contrastive", {})
        dist = settings.get("distillation", {})
        values = {
            "batch_size": desk.get("batch_size", cls.batch_size),
            "frames_per_video": desk.get("frames_per_video", cls.frames_per_video),
            "lr": opt.get("lr", cls.lr),
            "weight_decay": opt.get("weight_decay", cls.weight_decay),
            "warmup_epochs": opt.get("warmup_epochs", cls.warmup_epochs),
            "student_temperature": dist.get("student_temperature", cls.student_temperature),
            "teacher_temperature": dist.get("teacher_temperature", cls.teacher_temperature),
            "center_momentum": dist.get("center_momentum", cls.center_momentum),
            "momentum_start": dist.get("momentum_start", cls.momentum_start),
            "momentum_end": dist.get("momentum_end", cls.momentum_end),
            "local_crops": dist.get("local_crops", cls.local_crops),
            "aggregation": con.get("positive_aggregation", cls.aggregation),
            "fim_temperature": con.get("fim_temperature", cls.fim_temperature),
            "fim_batches": settings.get("fisher", {}).get("probe_batches", cls.fim_batches),
        }
        values.update(overrides)
        return cls(**values)


def warmup_epochs_for(total_epochs: int, base: int = 10) -> int:
    """base epochs from 100 epochs up, ceil(0.1 * total) below"""
    return base if total_epochs >= 100 else math.ceil(0.1 * total_epochs)


def lr_lambda(total_steps: int, warmup_steps: int):
    """Linear warm-up to the base rate, then cosine annealing to zero"""

    def factor(step: int) -> float:
        if step < warmup_steps:
            return (step + 1) / warmup_steps
        span = max(1, total_steps - warmup_steps)
        return 0.5 * (1.0 + math.cos(math.pi * min(step - warmup_steps, span) / span))

    return factor


@dataclass
class TrainerState:
    epoch: int
    plan: TrainingPlan
    model: SSLModel
    optimizer: AdamW
    scheduler: LambdaLR
    teacher: Optional[SSLModel] = None
    center: Optional[torch.Tensor] = None
    global_step: int = 0
    fim_history: List[Tuple[int, float]] = field(default_factory=list)
    loss_history: List[Tuple[int, float]] = field(default_factory=list)
    last_checkpoint: Optional[Path] = None

    @property
    def final_loss(self) -> Optional[float]:
        return self.loss_history[-1][1] if self.loss_history else None


def config_hash(plan: TrainingPlan, encoder: EncoderConfig, config: TrainerConfig, seed) -> str:
    payload = {
        "plan": plan.to_dict(),
        "encoder": encoder.model_dump(mode="json"),
        "trainer": {k: v for k, v in asdict(config).items() if k not in ("workers", "show_progress")},
        "seed": seed,
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


class Trainer:
    """
    Runs a TrainingPlan over a video dataset.

    Each epoch resolves the plan's augmentation (diet stage in Phase 1,
    standard views in Phase 2), packs whole clips into batches, optimizes
    the learner's objective, then records the Fisher trace on a fixed
    probe set. With a run_dir, metrics go to metrics.jsonl and a
    checkpoint is written every checkpoint_every epochs.
    """

    def __init__(
        self,
        plan: TrainingPlan,
        dataset: VideoDataset,
        encoder_config: EncoderConfig,
        seed: int,
        config: Optional[TrainerConfig] = None,
        run_dir: Optional[Path] = None,
    ):
        if len(dataset) == 0:
            raise ValueError(f"Dataset '{dataset.name}' is empty")
        self.plan = plan
        self.dataset = dataset
        self.encoder_config = encoder_config
        self.seed = seed
        self.config = config or TrainerConfig()
        self.run_dir = Path(run_dir) if run_dir else None
        self.hash = config_hash(plan, encoder_config, self.config, seed)
        self.steps_per_epoch = n_batches(dataset, self.config.batch_size, self.config.frames_per_video)
        self.n_local = self.config.local_crops if plan.learner_kind == "distillation" else 0
        if self.config.deterministic:
            torch.use_deterministic_algorithms(True, warn_only=True)
        self.state = self._fresh_state()
        self._probe = None

    # ------------------------------------------------------------ setup

    def _fresh_state(self) -> TrainerState:
        resolution = self.dataset.clips[0].frames.shape[1]
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(derive_seed(self.seed, "init"))
            model = build_model(self.encoder_config, self.plan.learner_kind, resolution)
        optimizer = AdamW(model.parameters(), lr=self.config.lr, weight_decay=self.config.weight_decay)
        total_steps = self.plan.total_epochs * self.steps_per_epoch
        warmup = warmup_epochs_for(self.plan.total_epochs, self.config.warmup_epochs) * self.steps_per_epoch
        scheduler = LambdaLR(optimizer, lr_lambda(total_steps, warmup))
        teacher, center = None, None
        if self.plan.learner_kind == "distillation":
            teacher = copy.deepcopy(model)
            for p in teacher.parameters():
                p.requires_grad_(False)
            center = torch.zeros(1, self.encoder_config.prototypes)
        return TrainerState(0, self.plan, model, optimizer, scheduler, teacher, center)

    @property
    def checkpoint_path(self) -> Optional[Path]:
        return self.run_dir / "checkpoints" / CHECKPOINT_NAME if self.run_dir else None

    @property
    def metrics_path(self) -> Optional[Path]:
        return self.run_dir / METRICS_NAME if self.run_dir else None

    def probe_set(self) -> List[TrainingBatch]:
        if self._probe is None:
            self._probe = probe_batches(
                self.dataset,
                self.plan,
                self.seed,
                self.config.fim_batches,
                self.config.batch_size,
                self.config.frames_per_video,
                self.n_local,
            )
        return self._probe

    # ------------------------------------------------------------ objectives

    def batch_loss(self, model: nn.Module, batch: TrainingBatch, temperature: float, update_center: bool = False):
        if self.plan.learner_kind == "contrastive":
            return contrastive_tdiet_loss(batch.global_rows(model(batch.global_views)), temperature, self.config.aggregation)
        state = self.state
        global_out = model(batch.global_views)
        local_out = model(batch.local_views) if batch.local_views is not None else None
        with torch.no_grad():
            teacher_out = state.teacher(batch.global_views)
        loss, center = distillation_tdiet_loss(
            batch.student_rows(global_out, local_out),
            batch.global_rows(teacher_out),
            self.config.student_temperature,
            self.config.teacher_temperature,
            state.center,
            self.config.center_momentum,
        )
        if update_center:
            state.center = center
        return loss

    def _probe_loss(self, model: nn.Module, batch: TrainingBatch) -> torch.Tensor:
        """Fisher probe objective; leaves the teacher's BatchNorm statistics and the center untouched"""
        teacher = self.state.teacher
        if teacher is None or not teacher.training:
            return self.batch_loss(model, batch, self.config.fim_temperature)
        teacher.eval()
        try:
            return self.batch_loss(model, batch, self.config.fim_temperature)
        finally:
            teacher.train()

    # ------------------------------------------------------------ loop

    def train_epoch(self, epoch: int) -> dict:
        state = self.state
        state.model.train()
        if state.teacher is not None:
            state.teacher.train()
        temperature = self.plan.temperature_at(epoch)
        phase_start = self.plan.phase_start(epoch)
        phase_steps = self.plan.phase_length(epoch) * self.steps_per_epoch
        losses = []
        for batch in epoch_batches(
            self.dataset,
            self.plan,
            epoch,
            self.seed,
            self.config.batch_size,
            self.config.frames_per_video,
            self.n_local,
            self.config.workers,
        ):
            try:
                loss = self.batch_loss(state.model, batch, temperature, update_center=True)
            except NumericError as e:
                raise DivergenceError(f"{e} at epoch {epoch}", state.last_checkpoint) from e
            if not torch.isfinite(loss):
                raise DivergenceError(f"Loss became {loss.item()} at epoch {epoch}", state.last_checkpoint)
            state.optimizer.zero_grad(set_to_none=True)
            loss.backward()
            state.optimizer.step()
            state.scheduler.step()
            if state.teacher is not None:
                step_in_phase = state.global_step - phase_start * self.steps_per_epoch
                m = momentum_at(step_in_phase, phase_steps, self.config.momentum_start, self.config.momentum_end)
                ema_update(state.teacher, state.model, m)
            state.global_step += 1
            losses.append(loss.item())

        mean_loss = sum(losses) / len(losses)
        fim = fim_trace(state.model, self._probe_loss, self.probe_set(), derive_seed(self.seed, "fim", epoch))
        state.loss_history.append((epoch, mean_loss))
        state.fim_history.append((epoch, fim))
        state.epoch = epoch + 1
        return {
            "epoch": epoch,
            "phase": self.plan.phase_at(epoch),
            "stage": self.plan.stage_number(epoch),
            "loss": mean_loss,
            "lr": state.optimizer.param_groups[0]["lr"],
            "temperature": temperature,
            "fim_trace": fim,
        }

    def train(self, resume: bool = False, epoch_callback=None) -> TrainerState:
        """
        Run the remaining epochs of the plan.

        Args:
            resume: continue from the run directory's last checkpoint
            epoch_callback: called as epoch_callback(trainer, metrics_row)
                after each epoch

        Raises:
            DivergenceError: loss or embeddings became NaN or infinite
        """
        if resume and self.checkpoint_path and self.checkpoint_path.exists():
            self.load_checkpoint(self.checkpoint_path)
            self._truncate_metrics(self.state.epoch)
            logger.info(f"[OK] Resumed at epoch {self.state.epoch} from {self.checkpoint_path}")

        epochs = range(self.state.epoch, self.plan.total_epochs)
        for epoch in tqdm(epochs, desc=self.plan.name or "pretrain", disable=not self.config.show_progress):
            row = self.train_epoch(epoch)
            self._append_metrics(row)
            last = epoch + 1 == self.plan.total_epochs
            if self.checkpoint_path and ((epoch + 1) % self.config.checkpoint_every == 0 or last):
                self.save_checkpoint(self.checkpoint_path)
            if epoch_callback is not None:
                epoch_callback(self, row)
        return self.state

    # ------------------------------------------------------------ persistence

    def _append_metrics(self, row: dict):
        if self.metrics_path is None:
            return
        self.metrics_path.parent.mkdir(parents=True, exist_ok=True)
        with self.metrics_path.open("a") as f:
            f.write(json.dumps(row) + "\n")

    def _truncate_metrics(self, epoch: int):
        if self.metrics_path is None or not self.metrics_path.exists():
            return
        rows = [json.loads(line) for line in self.metrics_path.read_text().splitlines() if line.strip()]
        kept = [row for row in rows if row["epoch"] < epoch]
        self.metrics_path.write_text("".join(json.dumps(row) + "\n" for row in kept))

    def save_checkpoint(self, path: Path) -> Path:
        """Write-temp-then-rename, so a crash never leaves a partial checkpoint"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        state = self.state
        payload = {
            "config_hash": self.hash,
            "epoch": state.epoch,
            "global_step": state.global_step,
            "model": state.model.state_dict(),
            "optimizer": state.optimizer.state_dict(),
            "scheduler": state.scheduler.state_dict(),
            "teacher": state.teacher.state_dict() if state.teacher is not None else None,
            "center": state.center,
            "fim_history": state.fim_history,
            "loss_history": state.loss_history,
            "torch_rng": torch.get_rng_state(),
            "plan": self.plan.to_dict(),
        }
        tmp = path.with_suffix(path.suffix + ".tmp")
        torch.save(payload, tmp)
        os.replace(tmp, path)
        state.last_checkpoint = path
        logger.info(f"[OK] Checkpoint saved: {path} (epoch {state.epoch})")
        return path

    def load_checkpoint(self, path: Path):
        payload = torch.load(path, map_location="cpu", weights_only=False)
        if payload["config_hash"] != self.hash:
            raise ConfigError(f"Checkpoint {path} was written by a different configuration")
        state = self.state
        state.model.load_state_dict(payload["model"])
        state.optimizer.load_state_dict(payload["optimizer"])
        state.scheduler.load_state_dict(payload["scheduler"])
        if state.teacher is not None:
            state.teacher.load_state_dict(payload["teacher"])
            state.center = payload["center"]
        state.epoch = payload["epoch"]
        state.global_step = payload["global_step"]
        state.fim_history = [tuple(x) for x in payload["fim_history"]]
        state.loss_history = [tuple(x) for x in payload["loss_history"]]
        torch.set_rng_state(payload["torch_rng"])
        state.last_checkpoint = Path(path)


def train(
    plan: TrainingPlan,
    dataset: VideoDataset,
    encoder_config: EncoderConfig,
    seed: int,
    config: Optional[TrainerConfig] = None,
    run_dir: Optional[Path] = None,
    resume: bool = False,
) -> TrainerState:
    return Trainer(plan, dataset, encoder_config, seed, config, run_dir).train(resume=resume)
