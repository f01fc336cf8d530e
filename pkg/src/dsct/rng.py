"""Addressable random streams.

Every random decision in training and evaluation is drawn from a
counter-based generator keyed by (seed, purpose, epoch, video, frame), so
the noise applied to epoch e / video j / frame i is a pure function of those
indices.  Nothing depends on draw order across samples, which is what makes
mid-epoch checkpoint resume bit-exact and distributed reshuffles safe.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError

# purpose tags baked into the stream key
INIT = 1
NOISE = 2
AUGMENT = 3
EVAL_NOISE = 4
CALIBRATE = 5

_EPOCH_BITS = 16
_VIDEO_BITS = 20
_FRAME_BITS = 20


def sample_stream(seed: int, purpose: int, epoch: int = 0, video: int = 0,
                  frame: int = 0) -> np.random.Generator:
    """An independent Philox stream for one (purpose, epoch, video, frame).

    Distinct index tuples map to distinct 128-bit keys, which is the
    generator's own notion of independent streams; each stream starts at
    counter zero.
    """
    if not 0 <= epoch < (1 << _EPOCH_BITS):
        raise ConfigError(f"epoch {epoch} outside addressable range")
    if not 0 <= video < (1 << _VIDEO_BITS):
        raise ConfigError(f"video index {video} outside addressable range")
    if not 0 <= frame < (1 << _FRAME_BITS):
        raise ConfigError(f"frame index {frame} outside addressable range")
    lane = (
        (purpose << (_EPOCH_BITS + _VIDEO_BITS + _FRAME_BITS))
        | (epoch << (_VIDEO_BITS + _FRAME_BITS))
        | (video << _FRAME_BITS)
        | frame
    )
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(lane)],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def sigma_lane(sigma: float) -> int:
    """Quantised noise level used to key evaluation streams (0.25 steps)."""
    lane = int(round(float(sigma) * 4))
    if not 0 <= lane < (1 << _EPOCH_BITS):
        raise ConfigError(f"sigma {sigma} outside addressable range")
    return lane
