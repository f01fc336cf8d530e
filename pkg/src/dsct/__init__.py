"""Two-stage spatial-channel transformer video denoiser.

A self-contained numpy implementation: tensor engine with reverse-mode
autodiff, patch attention blocks, the two-stage model, a deterministic
training loop, and a PSNR evaluation harness.
"""

__version__ = "0.1.0"

from .checkpoint import (Checkpoint, load_checkpoint, restore_model,  # noqa: F401
                         restore_trainer, save_checkpoint)
from .evaluate import (calibrate_stats, evaluate_dataset, format_report,  # noqa: F401
                       psnr)
from .model import DsctModel, ModelConfig, build_model, flops_estimate  # noqa: F401
from .tensor import Tensor, no_grad, ones, tensor, zeros  # noqa: F401
from .training import TrainConfig, Trainer, train_loop  # noqa: F401
