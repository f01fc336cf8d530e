"""Binary checkpoints.

Layout: magic ``DSCT``, a u32 format version, one length-prefixed UTF-8
block of ``key=value`` lines (model config, train config, trainer position),
then tensor records until end of file.  Each record is a length-prefixed
name, a dtype tag, a rank byte, u32 extents, and the raw little-endian
row-major payload.  Writes go through a temp file and an atomic rename, and
a load/save round trip reproduces the file byte for byte.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .config import config_from_mapping, config_lines, parse_mapping
from .errors import CheckpointError
from .model import DsctModel, ModelConfig, build_model
from .rng import INIT, sample_stream
from .training import Adam, TrainConfig, Trainer

MAGIC = b"DSCT"
VERSION = 1

_DTYPE_TAGS = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_TAG_FOR = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}


@dataclass
class Checkpoint:
    model_config: ModelConfig
    train_config: TrainConfig
    epoch: int = 0
    cursor: int = 0
    step: int = 0
    adam_t: int = 0
    params: dict = field(default_factory=dict)
    buffers: dict = field(default_factory=dict)
    adam_m: dict = field(default_factory=dict)
    adam_v: dict = field(default_factory=dict)


def _config_block(ckpt: Checkpoint) -> bytes:
    lines = config_lines(ckpt.model_config, "model.")
    lines += config_lines(ckpt.train_config, "train.")
    lines += [
        f"state.epoch={ckpt.epoch}",
        f"state.cursor={ckpt.cursor}",
        f"state.step={ckpt.step}",
        f"state.adam_t={ckpt.adam_t}",
    ]
    return ("\n".join(lines) + "\n").encode("utf-8")


def _write_record(fh, name: str, arr: np.ndarray):
    data = np.ascontiguousarray(arr)
    tag = _TAG_FOR.get(np.dtype(data.dtype))
    if tag is None:
        raise CheckpointError(f"{name}: dtype {data.dtype} not storable")
    encoded = name.encode("utf-8")
    fh.write(struct.pack("<I", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<BB", tag, data.ndim))
    for extent in data.shape:
        fh.write(struct.pack("<I", extent))
    fh.write(data.astype(data.dtype.newbyteorder("<"), copy=False).tobytes())


def save_checkpoint(path: str, ckpt: Checkpoint):
    """Serialise atomically: the final file is either old or complete."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", VERSION))
            block = _config_block(ckpt)
            fh.write(struct.pack("<I", len(block)))
            fh.write(block)
            for section, tensors in (("param", ckpt.params),
                                     ("buffer", ckpt.buffers),
                                     ("adam.m", ckpt.adam_m),
                                     ("adam.v", ckpt.adam_v)):
                for name, arr in tensors.items():
                    _write_record(fh, f"{section}/{name}", arr)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return data


def load_checkpoint(path: str) -> Checkpoint:
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    with fh:
        if _read_exact(fh, 4, "magic") != MAGIC:
            raise CheckpointError(f"{path}: bad magic, not a checkpoint")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        (block_len,) = struct.unpack("<I", _read_exact(fh, 4, "config length"))
        try:
            mapping = parse_mapping(_read_exact(fh, block_len, "config").decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise CheckpointError(f"{path}: config block not UTF-8") from exc
        try:
            model_cfg = config_from_mapping(ModelConfig, mapping, "model.", strict=True)
            train_cfg = config_from_mapping(TrainConfig, mapping, "train.", strict=True)
            ckpt = Checkpoint(
                model_config=model_cfg,
                train_config=train_cfg,
                epoch=int(mapping.get("state.epoch", 0)),
                cursor=int(mapping.get("state.cursor", 0)),
                step=int(mapping.get("state.step", 0)),
                adam_t=int(mapping.get("state.adam_t", 0)),
            )
        except CheckpointError:
            raise
        except (TypeError, ValueError) as exc:
            raise CheckpointError(f"{path}: bad config block: {exc}") from exc

        sections = {"param": ckpt.params, "buffer": ckpt.buffers,
                    "adam.m": ckpt.adam_m, "adam.v": ckpt.adam_v}
        while True:
            head = fh.read(4)
            if not head:
                break
            if len(head) != 4:
                raise CheckpointError(f"{path}: truncated record header")
            (name_len,) = struct.unpack("<I", head)
            name = _read_exact(fh, name_len, "record name").decode("utf-8")
            tag, rank = struct.unpack("<BB", _read_exact(fh, 2, f"{name} header"))
            if tag not in _DTYPE_TAGS:
                raise CheckpointError(f"{path}: {name}: unknown dtype tag {tag}")
            dtype = _DTYPE_TAGS[tag]
            shape = tuple(
                struct.unpack("<I", _read_exact(fh, 4, f"{name} extent"))[0]
                for _ in range(rank)
            )
            count = int(np.prod(shape)) if shape else 1
            payload = _read_exact(fh, count * dtype.itemsize, f"{name} payload")
            arr = np.frombuffer(payload, dtype=dtype).reshape(shape)
            section, _, key = name.partition("/")
            if section not in sections or not key:
                raise CheckpointError(f"{path}: unknown record {name!r}")
            sections[section][key] = arr.astype(arr.dtype.newbyteorder("="))
    return ckpt


def checkpoint_from_trainer(trainer: Trainer, model_cfg: ModelConfig) -> Checkpoint:
    return Checkpoint(
        model_config=model_cfg,
        train_config=trainer.cfg,
        epoch=trainer.epoch,
        cursor=trainer.cursor,
        step=trainer.step,
        adam_t=trainer.adam.t,
        params={n: p.data for n, p in trainer.model.named_parameters()},
        buffers={n: b for n, b in trainer.model.named_buffers()},
        adam_m=dict(trainer.adam.m),
        adam_v=dict(trainer.adam.v),
    )


def save_trainer_checkpoint(path: str, trainer: Trainer, model_cfg: ModelConfig):
    save_checkpoint(path, checkpoint_from_trainer(trainer, model_cfg))


def restore_model(ckpt: Checkpoint) -> DsctModel:
    """Rebuild the model a checkpoint describes, with its exact weights."""
    from .layers import _assign_by_path, _fetch_by_path

    model = build_model(ckpt.model_config,
                        sample_stream(ckpt.train_config.seed, INIT))
    names = [n for n, _ in model.named_parameters()]
    if set(names) != set(ckpt.params):
        missing = set(names) - set(ckpt.params)
        extra = set(ckpt.params) - set(names)
        raise CheckpointError(
            f"parameter mismatch: missing {sorted(missing)}, extra {sorted(extra)}"
        )
    for name, p in model.named_parameters():
        arr = ckpt.params[name]
        if arr.shape != p.data.shape:
            raise CheckpointError(f"{name}: shape {arr.shape} vs model {p.data.shape}")
        p.data = arr.astype(p.data.dtype, copy=True)
    # Batch-norm running stats start unset on a fresh model, so the live
    # buffer listing can be empty; drive assignment from the checkpoint side.
    for name, arr in ckpt.buffers.items():
        try:
            _fetch_by_path(model, name)
        except (AttributeError, IndexError, TypeError) as exc:
            raise CheckpointError(f"buffer {name} has no home in the model") from exc
        _assign_by_path(model, name, arr.copy())
    return model


def restore_trainer(ckpt: Checkpoint, sequences) -> Trainer:
    """Model, optimiser state, and position, ready to continue the run."""
    model = restore_model(ckpt)
    adam = Adam(list(model.named_parameters()), ckpt.train_config.beta1,
                ckpt.train_config.beta2, ckpt.train_config.adam_eps)
    adam.t = ckpt.adam_t
    for name in adam.m:
        if name not in ckpt.adam_m or name not in ckpt.adam_v:
            raise CheckpointError(f"optimizer slots for {name} absent")
        adam.m[name] = ckpt.adam_m[name].astype(adam.m[name].dtype, copy=True)
        adam.v[name] = ckpt.adam_v[name].astype(adam.v[name].dtype, copy=True)
    return Trainer(model, sequences, ckpt.train_config, adam=adam,
                   epoch=ckpt.epoch, cursor=ckpt.cursor, step=ckpt.step)
