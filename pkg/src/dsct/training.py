"""Loss, optimiser, learning-rate schedule, and the training loop.

The loop visits epoch -> video -> frame in a fixed order and batches
consecutive samples.  Because every sample is synthesised from indices (see
``data.synthesize_sample``), the trainer's whole data side is a pure
function of (seed, epoch, cursor), which is what makes checkpoint resume
reproduce the original run bit for bit.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .data import FrameSequence, NoiseConfig, synthesize_sample
from .errors import ConfigError
from .model import DsctModel, ModelConfig, build_model
from .rng import INIT, sample_stream
from .tensor import Tensor, tensor_sum


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    lr: float = 1e-3
    decay_epochs: tuple[int, ...] = (50, 60, 80)
    decay_factor: float = 10.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    crop: int = 96
    noise_mode: str = "uniform"
    sigma: float = 30.0
    sigma_min: float = 5.0
    sigma_max: float = 50.0
    aux_coarse_loss: bool = False
    max_steps: int = 0  # 0 means no cap
    checkpoint_every: int = 1  # epochs
    log_every: int = 50  # steps

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.lr <= 0 or self.decay_factor <= 1:
            raise ConfigError("lr must be positive and decay_factor > 1")
        if not all(0 < e for e in self.decay_epochs):
            raise ConfigError("decay epochs must be positive")
        if list(self.decay_epochs) != sorted(self.decay_epochs):
            raise ConfigError("decay epochs must be ascending")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if self.crop < 16:
            raise ConfigError("crop must be at least 16")

    def noise_config(self) -> NoiseConfig:
        return NoiseConfig(mode=self.noise_mode, sigma=self.sigma,
                           sigma_min=self.sigma_min, sigma_max=self.sigma_max)


def l2_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Squared-error objective: sum of squares over the batch, over 2N."""
    if pred.shape != target.shape:
        raise ConfigError(f"loss shapes differ: {pred.shape} vs {target.shape}")
    diff = pred - target
    n = pred.shape[0]
    return tensor_sum(diff * diff) * (1.0 / (2 * n))


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    """Base rate divided by the decay factor at each configured epoch."""
    drops = sum(1 for e in cfg.decay_epochs if epoch >= e)
    return cfg.lr / (cfg.decay_factor ** drops)


class Adam:
    """Adam with bias correction; one slot pair per named parameter."""

    def __init__(self, named_params: list[tuple[str, Tensor]], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.named_params = named_params
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in named_params}
        self.v = {n: np.zeros_like(p.data) for n, p in named_params}

    def step(self, lr: float):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name, p in self.named_params:
            g = p.grad if p.grad is not None else 0.0
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * np.square(g)
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


class Trainer:
    """Owns the model, optimiser, and position within the epoch schedule."""

    def __init__(self, model: DsctModel, sequences: list[FrameSequence],
                 cfg: TrainConfig, adam: Adam | None = None, epoch: int = 0,
                 cursor: int = 0, step: int = 0):
        if not sequences:
            raise ConfigError("training needs at least one sequence")
        self.model = model
        self.sequences = sequences
        self.cfg = cfg
        self.adam = adam or Adam(list(model.named_parameters()),
                                 cfg.beta1, cfg.beta2, cfg.adam_eps)
        self.epoch = epoch
        self.cursor = cursor
        self.step = step
        self.order = [(j, i) for j, seq in enumerate(sequences)
                      for i in range(len(seq))]
        self.noise = cfg.noise_config()

    @property
    def finished(self) -> bool:
        if self.cfg.max_steps and self.step >= self.cfg.max_steps:
            return True
        # the cursor rolls over lazily, so count a completed pass now
        epoch = self.epoch + (1 if self.cursor >= len(self.order) else 0)
        return epoch >= self.cfg.epochs

    def _next_batch(self):
        if self.cursor >= len(self.order):
            self.epoch += 1
            self.cursor = 0
        lo = self.cursor
        hi = min(lo + self.cfg.batch_size, len(self.order))
        self.cursor = hi
        return [
            synthesize_sample(self.sequences[j], j, i, self.epoch,
                              self.cfg.crop, self.noise, self.cfg.seed)
            for j, i in self.order[lo:hi]
        ]

    def train_step(self) -> dict:
        """One optimisation step; returns loss, lr, and position info."""
        samples = self._next_batch()
        prev = Tensor(np.stack([s.noisy_prev for s in samples]))
        cur = Tensor(np.stack([s.noisy_cur for s in samples]))
        nxt = Tensor(np.stack([s.noisy_next for s in samples]))
        target = Tensor(np.stack([s.target for s in samples]))

        coarse, final = self.model(prev, cur, nxt, training=True)
        loss = l2_loss(final, target)
        if self.cfg.aux_coarse_loss and coarse is not None and coarse is not final:
            loss = loss + l2_loss(coarse, target)
        self.model.zero_grad()
        loss.backward()
        lr = lr_schedule(self.epoch, self.cfg)
        self.adam.step(lr)
        self.step += 1
        return {"loss": float(loss.data), "lr": lr, "epoch": self.epoch,
                "step": self.step, "batch": len(samples)}

    def run(self, log_fn=None, checkpoint_fn=None):
        """Train to completion, logging and checkpointing as configured."""
        last_epoch = self.epoch
        while not self.finished:
            info = self.train_step()
            if log_fn and (info["step"] % self.cfg.log_every == 0
                           or info["step"] == 1):
                log_fn(info)
            if checkpoint_fn and info["epoch"] != last_epoch:
                if (info["epoch"] % self.cfg.checkpoint_every) == 0:
                    checkpoint_fn(self)
                last_epoch = info["epoch"]
        if checkpoint_fn:
            checkpoint_fn(self)


def train_loop(sequences: list[FrameSequence], train_cfg: TrainConfig,
               model_cfg: ModelConfig, out_dir: str | None = None,
               log_fn=None, trainer: Trainer | None = None):
    """Build a fresh model and train it; returns the trainer.

    ``out_dir`` enables epoch checkpoints (``ckpt_epoch_NNN.dsct``) plus a
    final ``ckpt_final.dsct`` and a plain-text training log.  Pass a
    ``trainer`` restored from a checkpoint to continue an earlier run.
    """
    import os

    from .checkpoint import save_trainer_checkpoint

    if trainer is None:
        rng = sample_stream(train_cfg.seed, INIT)
        model = build_model(model_cfg, rng)
        trainer = Trainer(model, sequences, train_cfg)

    log_lines = []

    def log(info):
        line = (f"epoch {info['epoch']:4d} step {info['step']:7d} "
                f"loss {info['loss']:.6f} lr {info['lr']:.2e}")
        log_lines.append(line)
        if log_fn:
            log_fn(line)

    ckpt_fn = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)

        def ckpt_fn(tr):
            path = os.path.join(out_dir, f"ckpt_epoch_{tr.epoch:03d}.dsct")
            save_trainer_checkpoint(path, tr, model_cfg)
            save_trainer_checkpoint(os.path.join(out_dir, "ckpt_final.dsct"),
                                    tr, model_cfg)

    trainer.run(log_fn=log, checkpoint_fn=ckpt_fn)
    if out_dir is not None:
        with open(os.path.join(out_dir, "train.log"), "w", encoding="utf-8") as fh:
            fh.write("\n".join(log_lines) + ("\n" if log_lines else ""))
    return trainer
