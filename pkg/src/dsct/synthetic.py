"""Procedural video sequences for demos and small-scale experiments.

Two smooth random texture layers drift across the frame with different
integer velocities, so consecutive frames share content under motion; that
is exactly the structure a temporal model can exploit and a single-frame
model cannot.
"""

from __future__ import annotations

import os

import numpy as np

from .data import FrameSequence, write_ppm


def _box_blur(field: np.ndarray, radius: int) -> np.ndarray:
    """Separable box blur with wrap-around, done twice for smoothness."""
    for _ in range(2):
        for axis in (-2, -1):
            acc = field.copy()
            for shift in range(1, radius + 1):
                acc += np.roll(field, shift, axis=axis)
                acc += np.roll(field, -shift, axis=axis)
            field = acc / (2 * radius + 1)
    return field


def _texture(rng: np.random.Generator, h: int, w: int, radius: int) -> np.ndarray:
    field = rng.uniform(size=(3, h, w)).astype(np.float32)
    field = _box_blur(field, radius)
    lo, hi = field.min(), field.max()
    return (field - lo) / max(hi - lo, 1e-6)


def make_sequence(h: int, w: int, n_frames: int, seed: int,
                  name: str | None = None) -> FrameSequence:
    """A drifting two-layer texture video, frames in [0.05, 0.95]."""
    rng = np.random.default_rng(seed)
    coarse = _texture(rng, h, w, radius=max(h // 8, 2))
    fine = _texture(rng, h, w, radius=2)
    # distinct, nonzero velocities per layer
    def velocity():
        v = (0, 0)
        while v == (0, 0):
            v = (int(rng.integers(-2, 3)), int(rng.integers(-2, 3)))
        return v
    vc, vf = velocity(), velocity()
    frames = []
    for i in range(n_frames):
        a = np.roll(coarse, (vc[0] * i, vc[1] * i), axis=(-2, -1))
        b = np.roll(fine, (vf[0] * i, vf[1] * i), axis=(-2, -1))
        frame = 0.6 * a + 0.4 * b
        frames.append((0.05 + 0.9 * frame).astype(np.float32))
    return FrameSequence(name=name or f"synthetic{seed}", frames=frames)


def write_dataset(root: str, n_sequences: int, h: int, w: int, n_frames: int,
                  seed: int = 0) -> str:
    """Materialise sequences as PPM directories plus a manifest file.

    Returns the manifest path.  Layout: ``root/seq000/frame0000.ppm`` etc.
    """
    os.makedirs(root, exist_ok=True)
    lines = []
    for j in range(n_sequences):
        seq = make_sequence(h, w, n_frames, seed=seed + j, name=f"seq{j:03d}")
        seq_dir = os.path.join(root, seq.name)
        os.makedirs(seq_dir, exist_ok=True)
        for i, frame in enumerate(seq.frames):
            write_ppm(os.path.join(seq_dir, f"frame{i:04d}.ppm"), frame)
        lines.append(seq.name)
    manifest = os.path.join(root, "manifest.txt")
    with open(manifest, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return manifest
