"""Quality measurement: PSNR, sequence denoising, and dataset reports."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import config_digest
from .data import FrameSequence, add_awgn, make_triple, noisy_eval_sequence
from .errors import ConfigError, ShapeError
from .model import DsctModel, ModelConfig
from .rng import CALIBRATE, sample_stream, sigma_lane
from .tensor import Tensor, no_grad


def psnr(reference: np.ndarray, test: np.ndarray, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical inputs."""
    ref = np.asarray(reference, dtype=np.float64)
    out = np.asarray(test, dtype=np.float64)
    if ref.shape != out.shape:
        raise ShapeError(f"psnr shapes differ: {ref.shape} vs {out.shape}")
    mse = float(np.mean(np.square(ref - out)))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def calibrate_stats(model: DsctModel, sequences: list, sigma: float,
                    seed: int = 0, passes: int = 2, stride: int = 5):
    """Re-estimate running statistics on full-size noisy frames.

    Training on random crops leaves the running batch statistics tuned to
    crop content, which misnormalises whole frames at evaluation time and
    makes scores depend on the luck of the last few training batches.  This
    runs training-mode forward passes with gradients off (parameters are
    untouched) over noisy triples built from ``sequences``, so the
    statistics settle on the evaluation-scale input distribution.  Noise
    comes from a dedicated stream purpose and never overlaps the noise used
    for scoring.  Call it after training, before ``evaluate_dataset``, with
    the training sequences.
    """
    if not sequences:
        raise ConfigError("calibrate_stats needs at least one sequence")
    if passes < 1 or stride < 1:
        raise ConfigError("passes and stride must be positive")
    for _ in range(passes):
        for vid, seq in enumerate(sequences):
            cache = {}

            def noisy(k, vid=vid, seq=seq, cache=cache):
                if k not in cache:
                    stream = sample_stream(seed, CALIBRATE, sigma_lane(sigma),
                                           vid, k)
                    cache[k] = add_awgn(seq.frames[k], sigma, stream)
                return cache[k]

            for i in range(0, len(seq.frames), stride):
                a, b, c = make_triple(len(seq.frames), i)
                with no_grad():
                    model.forward(Tensor(noisy(a)[None]), Tensor(noisy(b)[None]),
                                  Tensor(noisy(c)[None]), training=True)


def denoise_frame(model: DsctModel, prev: np.ndarray, cur: np.ndarray,
                  nxt: np.ndarray) -> np.ndarray:
    """Run one noisy triple through the model; returns the raw estimate."""
    with no_grad():
        _, out = model.forward(Tensor(prev[None]), Tensor(cur[None]),
                               Tensor(nxt[None]), training=False)
    return out.data[0]


def denoise_sequence(model: DsctModel, frames: list) -> list:
    """Denoise every frame, replicating the edges for the temporal window."""
    if not frames:
        raise ConfigError("empty frame list")
    out = []
    for i in range(len(frames)):
        a, b, c = make_triple(len(frames), i)
        out.append(denoise_frame(model, frames[a], frames[b], frames[c]))
    return out


@dataclass
class SequenceScore:
    name: str
    sigma: float
    n_frames: int
    noisy_db: float
    output_db: float


@dataclass
class EvalReport:
    digest: str
    seed: int
    scores: list = field(default_factory=list)

    def sigma_mean(self, sigma: float, which: str = "output_db") -> float:
        vals = [getattr(s, which) for s in self.scores if s.sigma == sigma]
        if not vals:
            raise ConfigError(f"no scores at sigma {sigma}")
        return float(np.mean(vals))

    @property
    def sigmas(self) -> list:
        seen = []
        for s in self.scores:
            if s.sigma not in seen:
                seen.append(s.sigma)
        return seen


def evaluate_dataset(model: DsctModel, model_cfg: ModelConfig,
                     sequences: list, sigmas, seed: int = 0,
                     max_frames: int = 85) -> EvalReport:
    """Score every sequence at every noise level.

    Noise is drawn from evaluation streams keyed by (sigma, video, frame),
    where video is the sequence's position in ``sequences``; a given seed
    and dataset order reproduce the same scores.  Frames beyond ``max_frames`` are
    skipped to bound the cost on long videos.  The noisy baseline is
    measured against the raw noisy frames; the model estimate is clipped
    to [0, 1] before scoring, matching how output images are written.
    """
    if max_frames < 1:
        raise ConfigError(f"max_frames {max_frames} must be positive")
    report = EvalReport(digest=config_digest(model_cfg), seed=seed)
    for sigma in sigmas:
        for vid, seq in enumerate(sequences):
            clean = seq.frames[:max_frames]
            clipped = FrameSequence(seq.name, clean)
            noisy = noisy_eval_sequence(clipped, sigma, seed, vid)
            estimates = denoise_sequence(model, noisy)
            noisy_db = float(np.mean([psnr(c, n) for c, n in zip(clean, noisy)]))
            out_db = float(np.mean([
                psnr(c, np.clip(e, 0.0, 1.0)) for c, e in zip(clean, estimates)
            ]))
            report.scores.append(SequenceScore(
                name=seq.name, sigma=float(sigma), n_frames=len(clean),
                noisy_db=noisy_db, output_db=out_db,
            ))
    return report


def format_report(report: EvalReport) -> str:
    """Fixed-width text table; identical runs produce identical bytes."""
    lines = [
        f"model {report.digest}  eval seed {report.seed}",
        "",
        f"{'sequence':<20} {'sigma':>6} {'frames':>6} {'noisy dB':>9} {'output dB':>9}",
    ]
    for s in report.scores:
        lines.append(
            f"{s.name:<20} {s.sigma:>6.2f} {s.n_frames:>6d}"
            f" {s.noisy_db:>9.3f} {s.output_db:>9.3f}"
        )
    lines.append("")
    for sigma in report.sigmas:
        lines.append(
            f"sigma {sigma:>6.2f} mean: noisy {report.sigma_mean(sigma, 'noisy_db'):.3f} dB"
            f"  output {report.sigma_mean(sigma):.3f} dB"
        )
    lines.append("")
    lines += [f"report.digest={report.digest}", f"report.seed={report.seed}"]
    for sigma in report.sigmas:
        key = f"{sigma:g}"
        lines.append(
            f"report.sigma_{key}.noisy_db={report.sigma_mean(sigma, 'noisy_db'):.6f}"
        )
        lines.append(f"report.sigma_{key}.output_db={report.sigma_mean(sigma):.6f}")
    return "\n".join(lines) + "\n"
