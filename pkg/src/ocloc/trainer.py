"""Optimisation loop: single-view warm-up, step-wise lr decay, checkpoints."""

from __future__ import annotations

import json
import logging
import os
import sys
import tempfile
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .config import ModelConfig, TrainConfig, config_from_dict, config_to_dict
from .data import Scene, read_dataset
from .loss import LossBreakdown, temperature_at
from .model import OCLOC

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "ocloc-checkpoint"
CHECKPOINT_VERSION = 1


class NonFiniteLossError(FloatingPointError):
    """Raised when a loss term is NaN or infinite; carries the breakdown."""

    def __init__(self, step: int, breakdown: dict[str, float]):
        bad = [k for k, v in breakdown.items() if not np.isfinite(v)]
        super().__init__(f"non-finite loss at step {step}: {', '.join(bad)} ({breakdown})")
        self.step = step
        self.breakdown = breakdown


def lr_at(step: int, train: TrainConfig) -> float:
    return train.lr_init * train.lr_decay_factor ** (step // train.lr_decay_steps)


def kl_weight_at(step: int, train: TrainConfig) -> float:
    """Weight on the KL terms: linear ramp from 0 to 1 over ``kl_warmup_steps``."""
    if train.kl_warmup_steps == 0:
        return 1.0
    return min(step / train.kl_warmup_steps, 1.0)


def stack_views(scenes: Sequence[Scene], views: Sequence[Sequence[int]]) -> torch.Tensor:
    return torch.from_numpy(np.stack([s.images[list(v)] for s, v in zip(scenes, views)]))


class Trainer:
    """Owns the model weights, optimiser and every random stream of a run.

    Data order, view subsets and latent sampling noise all derive from
    ``train.rng_seed``, so two trainers built alike produce identical runs.
    """

    def __init__(self, model_cfg: ModelConfig, train_cfg: TrainConfig, scenes: Sequence[Scene]):
        if not scenes:
            raise ValueError("training needs at least one scene")
        self.model_cfg = model_cfg
        self.train_cfg = train_cfg
        self.scenes = list(scenes)
        torch.manual_seed(train_cfg.rng_seed)
        self.model = OCLOC(model_cfg)
        self.optimizer = torch.optim.Adam(self.model.parameters(), lr=train_cfg.lr_init)
        self.generator = torch.Generator().manual_seed(train_cfg.rng_seed + 1)
        self.rng = np.random.default_rng(train_cfg.rng_seed + 2)
        self.step = 0
        self._order: list[int] = []

    # -- data --------------------------------------------------------------

    def _next_indices(self, n: int) -> list[int]:
        out = []
        while len(out) < n:
            if not self._order:
                self._order = self.rng.permutation(len(self.scenes)).tolist()
            out.append(self._order.pop())
        return out

    def num_views(self, step: int, available: int) -> int:
        """Views per scene for this step; 1 during warm-up."""
        if step < self.train_cfg.warmup_single_view_steps:
            return 1
        lo, hi = self.train_cfg.M_train_range
        hi = min(hi, available)
        lo = min(lo, hi)
        return int(self.rng.integers(lo, hi + 1))

    def next_batch(self) -> torch.Tensor:
        idx = self._next_indices(self.train_cfg.batch_size)
        batch = [self.scenes[i] for i in idx]
        M = self.num_views(self.step, min(s.M for s in batch))
        views = [self.rng.choice(s.M, size=M, replace=False) for s in batch]
        return stack_views(batch, views)

    # -- optimisation ------------------------------------------------------

    def train_step(self, x: torch.Tensor) -> LossBreakdown:
        """One Adam step on the batch-mean loss; returns the mean breakdown."""
        cfg = self.train_cfg
        for group in self.optimizer.param_groups:
            group["lr"] = lr_at(self.step, cfg)
        self.model.train()
        result = self.model(x, self.generator, temperature_at(self.step, cfg))
        loss = result.loss.mean()
        if not torch.isfinite(loss.total):
            raise NonFiniteLossError(self.step, loss.as_dict())
        objective = loss.nll + kl_weight_at(self.step, cfg) * (loss.total - loss.nll)
        self.optimizer.zero_grad(set_to_none=True)
        objective.backward()
        torch.nn.utils.clip_grad_norm_(self.model.parameters(), cfg.grad_clip)
        self.optimizer.step()
        self.step += 1
        return loss

    def run(self, steps: int | None = None, out_dir: str | Path | None = None,
            echo: bool = False) -> list[dict]:
        """Train until ``total_steps`` (or ``steps`` more); returns the log records."""
        cfg = self.train_cfg
        end = cfg.total_steps if steps is None else self.step + steps
        out_dir = Path(out_dir) if out_dir is not None else None
        log_file = None
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
            log_file = open(out_dir / "train_log.jsonl", "a", encoding="utf-8")
        records = []
        try:
            while self.step < end:
                step = self.step
                x = self.next_batch()
                loss = self.train_step(x)
                record = {"step": step, "M": x.shape[1], "lr": lr_at(step, cfg),
                          "temperature": temperature_at(step, cfg),
                          "kl_weight": kl_weight_at(step, cfg), **loss.as_dict()}
                records.append(record)
                if step % cfg.log_interval == 0:
                    line = json.dumps(record)
                    if log_file is not None:
                        log_file.write(line + "\n")
                        log_file.flush()
                    if echo:
                        print(line, file=sys.stdout, flush=True)
                if out_dir is not None and self.step % cfg.checkpoint_interval == 0:
                    self.save(out_dir / "checkpoint.pt")
        finally:
            if log_file is not None:
                log_file.close()
        if out_dir is not None:
            self.save(out_dir / "checkpoint.pt")
        return records

    # -- checkpoints -------------------------------------------------------

    def state(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": config_to_dict(self.model_cfg, self.train_cfg),
            "step": self.step,
            "model": self.model.state_dict(),
            "optimizer": self.optimizer.state_dict(),
            "torch_rng": self.generator.get_state(),
            "numpy_rng": self.rng.bit_generator.state,
            "order": list(self._order),
        }

    def save(self, path: str | Path) -> None:
        """Atomic write: temp file in the same directory, then rename."""
        path = Path(path)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
        os.close(fd)
        try:
            torch.save(self.state(), tmp)
            os.replace(tmp, path)
        finally:
            if os.path.exists(tmp):
                os.remove(tmp)

    @classmethod
    def from_checkpoint(cls, path: str | Path, scenes: Sequence[Scene]) -> "Trainer":
        state = load_checkpoint(path)
        model_cfg, train_cfg = config_from_dict(state["config"])
        trainer = cls(model_cfg, train_cfg, scenes)
        trainer.model.load_state_dict(state["model"])
        trainer.optimizer.load_state_dict(state["optimizer"])
        trainer.generator.set_state(state["torch_rng"])
        trainer.rng.bit_generator.state = state["numpy_rng"]
        trainer._order = list(state["order"])
        trainer.step = state["step"]
        return trainer


def load_checkpoint(path: str | Path) -> dict:
    state = torch.load(path, map_location="cpu", weights_only=False)
    if state.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not an {CHECKPOINT_FORMAT} file")
    if state.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {state.get('version')}")
    return state


def load_model(path: str | Path) -> OCLOC:
    """Rebuild the model stored in a checkpoint (evaluation mode)."""
    state = load_checkpoint(path)
    model_cfg, _ = config_from_dict(state["config"])
    model = OCLOC(model_cfg)
    model.load_state_dict(state["model"])
    model.eval()
    return model


def train(dataset_dir: str | Path, model_cfg: ModelConfig, train_cfg: TrainConfig,
          out_dir: str | Path, resume: str | Path | None = None, echo: bool = True) -> Trainer:
    scenes = read_dataset(dataset_dir)
    if resume is not None:
        trainer = Trainer.from_checkpoint(resume, scenes)
    else:
        trainer = Trainer(model_cfg, train_cfg, scenes)
    trainer.run(out_dir=out_dir, echo=echo)
    return trainer
