"""Checkpoint format round trips and trainer resume."""

import os

import numpy as np
import pytest

from dsct.checkpoint import (Checkpoint, checkpoint_from_trainer,
                             load_checkpoint, restore_model, restore_trainer,
                             save_checkpoint, save_trainer_checkpoint)
from dsct.errors import CheckpointError
from dsct.model import ModelConfig, build_model
from dsct.rng import INIT, sample_stream
from dsct.synthetic import make_sequence
from dsct.tensor import Tensor, no_grad
from dsct.training import TrainConfig, Trainer

TINY = dict(base_channels=4, scale_channels=(8, 8), patch=2, heads=2,
            mlp_ratio=2)


def tiny_cfgs(**train_overrides):
    train = dict(epochs=100, batch_size=2, lr=1e-3, seed=3, crop=16,
                 noise_mode="fixed", sigma=25.0)
    train.update(train_overrides)
    return ModelConfig(**TINY), TrainConfig(**train)


def trained_trainer(n_steps=3, **train_overrides):
    model_cfg, train_cfg = tiny_cfgs(**train_overrides)
    model = build_model(model_cfg, sample_stream(train_cfg.seed, INIT))
    seqs = [make_sequence(24, 24, 3, seed=s) for s in range(2)]
    trainer = Trainer(model, seqs, train_cfg)
    for _ in range(n_steps):
        trainer.train_step()
    return trainer, model_cfg, seqs


class TestRoundTrip:
    def test_tensors_and_state_survive(self, tmp_path):
        trainer, model_cfg, _ = trained_trainer()
        ckpt = checkpoint_from_trainer(trainer, model_cfg)
        path = str(tmp_path / "a.dsct")
        save_checkpoint(path, ckpt)
        back = load_checkpoint(path)

        assert back.model_config == model_cfg
        assert back.train_config == trainer.cfg
        assert (back.epoch, back.cursor, back.step) == (0, 6, 3)
        assert back.adam_t == 3
        assert set(back.params) == set(ckpt.params)
        for name, arr in ckpt.params.items():
            np.testing.assert_array_equal(back.params[name], arr, err_msg=name)
        for name, arr in ckpt.adam_m.items():
            np.testing.assert_array_equal(back.adam_m[name], arr)
            np.testing.assert_array_equal(back.adam_v[name], ckpt.adam_v[name])
        assert back.buffers, "training should have produced running stats"
        for name, arr in ckpt.buffers.items():
            np.testing.assert_array_equal(back.buffers[name], arr)

    def test_resave_is_byte_identical(self, tmp_path):
        trainer, model_cfg, _ = trained_trainer()
        a = str(tmp_path / "a.dsct")
        b = str(tmp_path / "b.dsct")
        save_trainer_checkpoint(a, trainer, model_cfg)
        save_checkpoint(b, load_checkpoint(a))
        with open(a, "rb") as fa, open(b, "rb") as fb:
            assert fa.read() == fb.read()

    def test_untrained_model_roundtrip(self, tmp_path):
        model_cfg, train_cfg = tiny_cfgs()
        model = build_model(model_cfg, sample_stream(train_cfg.seed, INIT))
        seqs = [make_sequence(24, 24, 2, seed=0)]
        trainer = Trainer(model, seqs, train_cfg)
        path = str(tmp_path / "fresh.dsct")
        save_trainer_checkpoint(path, trainer, model_cfg)
        back = load_checkpoint(path)
        # fresh stats are (mean 0, var 1) and survive the trip
        assert len(back.buffers) == 8
        for name, arr in back.buffers.items():
            want = 0.0 if name.endswith("mean") else 1.0
            np.testing.assert_array_equal(arr, np.full_like(arr, want),
                                          err_msg=name)
        restored = restore_model(back)
        for (na, pa), (nb, pb) in zip(model.named_parameters(),
                                      restored.named_parameters()):
            assert na == nb
            np.testing.assert_array_equal(pa.data, pb.data)


class TestCorruption:
    def make_file(self, tmp_path):
        trainer, model_cfg, _ = trained_trainer(n_steps=1)
        path = str(tmp_path / "a.dsct")
        save_trainer_checkpoint(path, trainer, model_cfg)
        return path

    def test_truncation_anywhere_is_detected(self, tmp_path):
        path = self.make_file(tmp_path)
        size = os.path.getsize(path)
        with open(path, "rb") as fh:
            blob = fh.read()
        cut = str(tmp_path / "cut.dsct")
        # head, inside the config block, a record boundary region, last byte
        for keep in (3, 9, 40, size // 2, size - 1):
            with open(cut, "wb") as fh:
                fh.write(blob[:keep])
            with pytest.raises(CheckpointError):
                load_checkpoint(cut)

    def test_bad_magic(self, tmp_path):
        path = self.make_file(tmp_path)
        with open(path, "r+b") as fh:
            fh.write(b"NOPE")
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_unsupported_version(self, tmp_path):
        path = self.make_file(tmp_path)
        with open(path, "r+b") as fh:
            fh.seek(4)
            fh.write((99).to_bytes(4, "little"))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(str(tmp_path / "absent.dsct"))

    def test_failed_save_leaves_no_temp_files(self, tmp_path):
        trainer, model_cfg, _ = trained_trainer(n_steps=1)
        ckpt = checkpoint_from_trainer(trainer, model_cfg)
        ckpt.params["bad"] = np.zeros(2, dtype=np.int32)
        with pytest.raises(CheckpointError):
            save_checkpoint(str(tmp_path / "a.dsct"), ckpt)
        assert list(tmp_path.iterdir()) == []


class TestRestore:
    def test_forward_pass_bit_equal(self, tmp_path):
        trainer, model_cfg, _ = trained_trainer()
        path = str(tmp_path / "a.dsct")
        save_trainer_checkpoint(path, trainer, model_cfg)
        restored = restore_model(load_checkpoint(path))

        rng = np.random.default_rng(0)
        frames = [Tensor(rng.random((1, 3, 32, 32)).astype(np.float32))
                  for _ in range(3)]
        with no_grad():
            _, a = trainer.model(*frames, training=False)
            _, b = restored(*frames, training=False)
        np.testing.assert_array_equal(a.data, b.data)

    def test_parameter_name_mismatch_rejected(self, tmp_path):
        trainer, model_cfg, _ = trained_trainer(n_steps=1)
        ckpt = checkpoint_from_trainer(trainer, model_cfg)
        first = next(iter(ckpt.params))
        ckpt.params["ghost"] = ckpt.params.pop(first)
        with pytest.raises(CheckpointError, match="mismatch"):
            restore_model(ckpt)

    def test_shape_mismatch_rejected(self, tmp_path):
        trainer, model_cfg, _ = trained_trainer(n_steps=1)
        ckpt = checkpoint_from_trainer(trainer, model_cfg)
        first = next(iter(ckpt.params))
        ckpt.params[first] = np.zeros((1, 1), dtype=np.float32)
        with pytest.raises(CheckpointError, match="shape"):
            restore_model(ckpt)

    def test_orphan_buffer_rejected(self, tmp_path):
        trainer, model_cfg, _ = trained_trainer(n_steps=1)
        ckpt = checkpoint_from_trainer(trainer, model_cfg)
        ckpt.buffers["no.such.stat"] = np.zeros(4, dtype=np.float32)
        with pytest.raises(CheckpointError, match="no.such.stat"):
            restore_model(ckpt)

    def test_missing_adam_slot_rejected(self, tmp_path):
        trainer, model_cfg, seqs = trained_trainer(n_steps=1)
        ckpt = checkpoint_from_trainer(trainer, model_cfg)
        ckpt.adam_m.pop(next(iter(ckpt.adam_m)))
        with pytest.raises(CheckpointError, match="slots"):
            restore_trainer(ckpt, seqs)


class TestResume:
    def test_interrupted_run_matches_straight_run(self, tmp_path):
        model_cfg, train_cfg = tiny_cfgs(max_steps=7)
        seqs = [make_sequence(24, 24, 3, seed=s) for s in range(2)]

        straight = Trainer(build_model(model_cfg,
                                       sample_stream(train_cfg.seed, INIT)),
                           seqs, train_cfg)
        straight.run()

        paused = Trainer(build_model(model_cfg,
                                     sample_stream(train_cfg.seed, INIT)),
                         seqs, train_cfg)
        for _ in range(4):
            paused.train_step()
        path = str(tmp_path / "pause.dsct")
        save_trainer_checkpoint(path, paused, model_cfg)

        resumed = restore_trainer(load_checkpoint(path), seqs)
        assert (resumed.epoch, resumed.cursor, resumed.step) == (
            paused.epoch, paused.cursor, paused.step)
        resumed.run()

        assert resumed.step == straight.step == 7
        sp = dict(straight.model.named_parameters())
        rp = dict(resumed.model.named_parameters())
        for name in sp:
            np.testing.assert_array_equal(sp[name].data, rp[name].data,
                                          err_msg=name)
        for name in straight.adam.m:
            np.testing.assert_array_equal(straight.adam.m[name],
                                          resumed.adam.m[name])
            np.testing.assert_array_equal(straight.adam.v[name],
                                          resumed.adam.v[name])
        sb = dict(straight.model.named_buffers())
        rb = dict(resumed.model.named_buffers())
        assert set(sb) == set(rb) and sb
        for name in sb:
            np.testing.assert_array_equal(sb[name], rb[name], err_msg=name)
