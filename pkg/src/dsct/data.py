"""Frame ingestion, noise synthesis, and training sample assembly.

Frames live in memory as float32 arrays of shape (3, H, W) scaled to [0, 1].
Noise levels are quoted on the 0..255 scale, so sigma 25 means additive
Gaussian noise with standard deviation 25/255 here.  Noisy tensors are NOT
clipped to [0, 1]: clipping would bend the noise distribution and break the
closed-form PSNR of a noisy frame against its source.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import ConfigError, DataError
from .rng import AUGMENT, EVAL_NOISE, NOISE, sample_stream, sigma_lane


@dataclass
class FrameSequence:
    name: str
    frames: list  # float32 (3, H, W) arrays, all the same shape

    def __len__(self):
        return len(self.frames)

    @property
    def frame_shape(self):
        return self.frames[0].shape


@dataclass
class NoiseConfig:
    mode: str = "uniform"  # "fixed" or "uniform"
    sigma: float = 30.0
    sigma_min: float = 5.0
    sigma_max: float = 50.0

    def __post_init__(self):
        if self.mode not in ("fixed", "uniform"):
            raise ConfigError(f"noise mode must be fixed or uniform, got {self.mode!r}")
        if self.sigma < 0 or self.sigma_min < 0 or self.sigma_max < self.sigma_min:
            raise ConfigError("noise levels must be non-negative and ordered")

    def draw_sigma(self, rng: np.random.Generator) -> float:
        if self.mode == "fixed":
            return float(self.sigma)
        return float(rng.uniform(self.sigma_min, self.sigma_max))


@dataclass
class SampleTriple:
    """One training example: three noisy frames and the clean middle frame."""

    noisy_prev: np.ndarray
    noisy_cur: np.ndarray
    noisy_next: np.ndarray
    target: np.ndarray
    sigma: float
    video: int
    frame: int
    crop_offset: tuple[int, int]
    augment_code: int


# -- image files ---------------------------------------------------------------


def _read_ppm(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:2] != b"P6":
        raise DataError(f"{path}: not a binary PPM (P6) file")
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError(f"{path}: truncated PPM header")
        fields.append(blob[start:pos])
    pos += 1  # single whitespace byte after maxval
    try:
        width, height, maxval = (int(f) for f in fields)
    except ValueError:
        raise DataError(f"{path}: malformed PPM header") from None
    if maxval != 255:
        raise DataError(f"{path}: only 8-bit PPM supported, maxval={maxval}")
    expected = width * height * 3
    payload = blob[pos : pos + expected]
    if len(payload) != expected:
        raise DataError(f"{path}: PPM payload truncated")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return arr


def write_ppm(path: str, frame: np.ndarray):
    """Write a float (3, H, W) frame in [0, 1] as binary 8-bit PPM."""
    arr = np.clip(np.rint(np.asarray(frame) * 255.0), 0, 255).astype(np.uint8)
    arr = arr.transpose(1, 2, 0)
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(arr.tobytes())


def _read_png(path: str) -> np.ndarray:
    try:
        with Image.open(path) as img:
            if img.mode != "RGB":
                img = img.convert("RGB")
            return np.asarray(img, dtype=np.uint8)
    except DataError:
        raise
    except Exception as exc:
        raise DataError(f"{path}: {exc}") from exc


def load_frame(path: str) -> np.ndarray:
    """One image file to float32 (3, H, W) in [0, 1]."""
    ext = os.path.splitext(path)[1].lower()
    if ext == ".ppm":
        arr = _read_ppm(path)
    elif ext == ".png":
        arr = _read_png(path)
    else:
        raise DataError(f"{path}: unsupported image type {ext!r}")
    return np.ascontiguousarray(arr.transpose(2, 0, 1)).astype(np.float32) / 255.0


def load_sequence(directory: str) -> FrameSequence:
    """Read every PPM/PNG in a directory, lexicographically, as one video."""
    if not os.path.isdir(directory):
        raise DataError(f"{directory}: not a directory")
    names = sorted(
        n for n in os.listdir(directory)
        if os.path.splitext(n)[1].lower() in (".ppm", ".png")
    )
    if not names:
        raise DataError(f"{directory}: no PPM or PNG frames found")
    frames = []
    for name in names:
        frame = load_frame(os.path.join(directory, name))
        if frames and frame.shape != frames[0].shape:
            raise DataError(
                f"{os.path.join(directory, name)}: frame size {frame.shape[1:]} "
                f"differs from first frame {frames[0].shape[1:]}"
            )
        frames.append(frame)
    return FrameSequence(name=os.path.basename(os.path.normpath(directory)),
                         frames=frames)


def read_manifest(path: str) -> list[str]:
    """One sequence directory per line; relative paths resolve next to the file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc
    base = os.path.dirname(os.path.abspath(path))
    dirs = []
    for line in lines:
        line = line.strip()
        if not line:
            continue
        dirs.append(line if os.path.isabs(line) else os.path.join(base, line))
    if not dirs:
        raise DataError(f"{path}: manifest lists no sequence directories")
    return dirs


def load_dataset(manifest_path: str) -> list[FrameSequence]:
    return [load_sequence(d) for d in read_manifest(manifest_path)]


# -- noise and augmentation -----------------------------------------------------


def add_awgn(frame: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Additive white Gaussian noise at level ``sigma`` (0..255 scale)."""
    if sigma < 0:
        raise ConfigError(f"negative noise level {sigma}")
    if sigma == 0:
        return frame.copy()
    noise = rng.standard_normal(frame.shape, dtype=np.float32)
    return frame + noise * np.float32(sigma / 255.0)


def make_triple(length: int, i: int) -> tuple[int, int, int]:
    """Indices of (previous, current, next) with edges replicated."""
    if not 0 <= i < length:
        raise ConfigError(f"frame {i} outside sequence of {length}")
    return (max(i - 1, 0), i, min(i + 1, length - 1))


# Augmentation codes: flip in {none, horizontal, vertical} crossed with a
# quarter-turn count, applied flip first.  The generated set of transforms
# is closed under composition and inversion.
N_AUGMENTS = 12


def apply_augment(frame: np.ndarray, code: int) -> np.ndarray:
    if not 0 <= code < N_AUGMENTS:
        raise ConfigError(f"augment code {code} outside 0..{N_AUGMENTS - 1}")
    flip, rot = divmod(code, 4)
    out = frame
    if flip == 1:
        out = out[..., :, ::-1]
    elif flip == 2:
        out = out[..., ::-1, :]
    if rot:
        out = np.rot90(out, k=rot, axes=(-2, -1))
    return np.ascontiguousarray(out)


def crop_and_augment(frames: list[np.ndarray], crop: int,
                     rng: np.random.Generator):
    """One shared crop window and augmentation applied to every frame.

    Returns ``(frames, (top, left), augment_code)``.  All frames must share
    a shape with both extents at least ``crop``.
    """
    h, w = frames[0].shape[-2:]
    if h < crop or w < crop:
        raise DataError(f"frame {h}x{w} smaller than crop {crop}")
    top = int(rng.integers(0, h - crop + 1))
    left = int(rng.integers(0, w - crop + 1))
    code = int(rng.integers(0, N_AUGMENTS))
    out = [
        apply_augment(f[..., top : top + crop, left : left + crop], code)
        for f in frames
    ]
    return out, (top, left), code


def synthesize_sample(seq: FrameSequence, video: int, frame: int, epoch: int,
                      crop: int, noise: NoiseConfig, seed: int) -> SampleTriple:
    """Build the training example for (epoch, video, frame) from scratch.

    Everything random is keyed by those indices, so the same example is
    reproduced whether the epoch runs straight through or resumes from a
    checkpoint.
    """
    ip, ic, inx = make_triple(len(seq), frame)
    aug_rng = sample_stream(seed, AUGMENT, epoch, video, frame)
    cropped, offset, code = crop_and_augment(
        [seq.frames[ip], seq.frames[ic], seq.frames[inx], seq.frames[ic]],
        crop, aug_rng,
    )
    noise_rng = sample_stream(seed, NOISE, epoch, video, frame)
    sigma = noise.draw_sigma(noise_rng)
    return SampleTriple(
        noisy_prev=add_awgn(cropped[0], sigma, noise_rng),
        noisy_cur=add_awgn(cropped[1], sigma, noise_rng),
        noisy_next=add_awgn(cropped[2], sigma, noise_rng),
        target=cropped[3],
        sigma=sigma,
        video=video,
        frame=frame,
        crop_offset=offset,
        augment_code=code,
    )


def noisy_eval_sequence(seq: FrameSequence, sigma: float, seed: int,
                        video: int) -> list[np.ndarray]:
    """A deterministic noisy rendering of a whole sequence for evaluation.

    Each frame's noise comes from its own stream keyed by the quantised
    sigma, the video index, and the frame index, so any subset of frames can
    be reproduced independently.
    """
    lane = sigma_lane(sigma)
    return [
        add_awgn(f, sigma, sample_stream(seed, EVAL_NOISE, lane, video, k))
        for k, f in enumerate(seq.frames)
    ]
