"""Training loop with internal augmentation and checkpoint/resume."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import losses
from .checkpoint import Checkpoint, save_model
from .data import Dataset
from .errors import DivergedLoss, NonFiniteError
from .matchnet import BackboneConfig, forward_two_stream, init_weights
from .optim import AdamState, adam_step
from .sampler import JitterRanges, color_jitter
from .tensor import backward

log = logging.getLogger(__name__)

# stream tags for seed derivation
_INIT, _JITTER, _SHUFFLE = 1, 2, 3


@dataclass
class TrainConfig:
    lr: float = 5e-4
    batch: int = 10
    epochs: int = 1
    iterations: int | None = None
    seed: int = 0
    balance: losses.BalanceParams = field(default_factory=losses.BalanceParams)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    jitter: JitterRanges = field(default_factory=JitterRanges)
    detach_aug: bool = False
    checkpoint_path: str | None = None
    checkpoint_interval: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["backbone"] = self.backbone.to_dict()
        d.pop("checkpoint_path")
        d.pop("checkpoint_interval")
        return d


def epoch_permutation(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng([seed, _SHUFFLE, epoch]).permutation(n)


def total_steps(cfg: TrainConfig, n_pairs: int) -> int:
    if cfg.iterations is not None:
        return cfg.iterations
    return cfg.epochs * math.ceil(n_pairs / cfg.batch)


class Trainer:
    def __init__(self, dataset: Dataset, cfg: TrainConfig, resume: Checkpoint | None = None):
        if len(dataset) == 0:
            raise ValueError("cannot train on an empty dataset")
        self.cfg = cfg
        self.src = np.stack([p.source for p in dataset.pairs])
        self.tgt = np.stack([p.target for p in dataset.pairs])
        self.theta = np.stack([p.theta for p in dataset.pairs])
        self.steps_per_epoch = math.ceil(len(dataset) / cfg.batch)
        if resume is None:
            self.weights = init_weights(cfg.backbone, np.random.default_rng([cfg.seed, _INIT]))
            self.adam = AdamState(lr=cfg.lr)
            self.step = 0
            self.rng = np.random.default_rng([cfg.seed, _JITTER])
        else:
            if resume.config != cfg.backbone:
                raise ValueError("checkpoint backbone config differs from the training config")
            self.weights = resume.tensors()
            self.adam = resume.adam or AdamState(lr=cfg.lr)
            self.step = resume.step
            self.rng = np.random.default_rng()
            self.rng.bit_generator.state = resume.rng_state
        self._perm_epoch, self._perm = -1, None

    def batch_indices(self, step: int) -> np.ndarray:
        epoch, b = divmod(step, self.steps_per_epoch)
        if epoch != self._perm_epoch:
            self._perm = epoch_permutation(self.cfg.seed, epoch, len(self.src))
            self._perm_epoch = epoch
        return self._perm[b * self.cfg.batch : (b + 1) * self.cfg.batch]

    def train_step(self) -> dict:
        cfg = self.cfg
        idx = self.batch_indices(self.step)
        src, tgt, gt = self.src[idx], self.tgt[idx], self.theta[idx]
        # fresh colour jitter of the target every iteration
        aug = np.stack([color_jitter(t, self.rng, cfg.jitter) for t in tgt])
        try:
            preds = forward_two_stream(src, tgt, aug, self.weights, cfg.backbone)
            terms = losses.loss_terms(preds, gt, detach_aug=cfg.detach_aug)
            loss = losses.combine(terms, cfg.balance)
            backward(loss)
        except NonFiniteError as exc:
            raise DivergedLoss(f"step {self.step}: {exc}") from exc
        grads = {k: w.grad for k, w in self.weights.items() if w.grad is not None}
        adam_step(self.weights, self.adam, grads)
        for w in self.weights.values():
            w.zero_grad()
        self.step += 1
        record = {"step": self.step, "loss": loss.item()}
        record.update({k: v.item() for k, v in terms.items()})
        return record

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(
            config=self.cfg.backbone,
            weights={k: w.data.copy() for k, w in self.weights.items()},
            adam=self.adam,
            step=self.step,
            rng_state=self.rng.bit_generator.state,
            extra={"train": self.cfg.to_dict()},
        )

    def run(self, log_file=None, max_steps: int | None = None) -> Checkpoint:
        """Train up to the configured length (or ``max_steps`` total steps)."""
        cfg = self.cfg
        end = total_steps(cfg, len(self.src))
        if max_steps is not None:
            end = min(end, max_steps)
        epoch_losses: list[float] = []
        while self.step < end:
            rec = self.train_step()
            epoch_losses.append(rec["loss"])
            if log_file is not None:
                log_file.write(json.dumps(rec) + "\n")
            if self.step % self.steps_per_epoch == 0:
                epoch = self.step // self.steps_per_epoch - 1
                mean = float(np.mean(epoch_losses))
                log.info("epoch %d mean loss %.6f", epoch, mean)
                if log_file is not None:
                    log_file.write(json.dumps({"epoch": epoch, "loss": mean}) + "\n")
                epoch_losses = []
            if cfg.checkpoint_path and cfg.checkpoint_interval and self.step % cfg.checkpoint_interval == 0:
                save_model(cfg.checkpoint_path, self.checkpoint())
        ckpt = self.checkpoint()
        if cfg.checkpoint_path:
            save_model(cfg.checkpoint_path, ckpt)
        return ckpt


def train(dataset: Dataset, cfg: TrainConfig, log_file=None, resume: Checkpoint | None = None,
          max_steps: int | None = None) -> Checkpoint:
    return Trainer(dataset, cfg, resume).run(log_file, max_steps)
