"""Frame IO, noise synthesis, augmentation, and the stream addressing."""

import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsct.data import (N_AUGMENTS, FrameSequence, NoiseConfig, add_awgn,
                       apply_augment, crop_and_augment, load_dataset,
                       load_frame, load_sequence, make_triple,
                       noisy_eval_sequence, synthesize_sample, write_ppm)
from dsct.errors import ConfigError, DataError
from dsct.rng import (AUGMENT, CALIBRATE, EVAL_NOISE, INIT, NOISE, sample_stream,
                      sigma_lane)
from dsct.synthetic import make_sequence, write_dataset


class TestPpmRoundTrip:
    def test_extreme_values_map_exactly(self, tmp_path):
        frame = np.zeros((3, 2, 2), dtype=np.float32)
        frame[:, 0, 0] = 1.0
        path = str(tmp_path / "f.ppm")
        write_ppm(path, frame)
        back = load_frame(path)
        assert back[0, 0, 0] == 1.0
        assert back[0, 1, 1] == 0.0

    def test_random_frame_quantizes_within_half_step(self, tmp_path, rng):
        frame = rng.random((3, 5, 7)).astype(np.float32)
        path = str(tmp_path / "f.ppm")
        write_ppm(path, frame)
        back = load_frame(path)
        assert np.abs(back - frame).max() <= 0.5 / 255 + 1e-7

    def test_truncated_file_names_offender(self, tmp_path):
        path = str(tmp_path / "bad.ppm")
        with open(path, "wb") as fh:
            fh.write(b"P6\n4 4\n255\n\x00\x01")
        with pytest.raises(DataError, match="bad.ppm"):
            load_frame(path)

    def test_wrong_magic_rejected(self, tmp_path):
        path = str(tmp_path / "bad.ppm")
        with open(path, "wb") as fh:
            fh.write(b"P5\n2 2\n255\n" + b"\x00" * 4)
        with pytest.raises(DataError):
            load_frame(path)

    def test_png_reads_as_rgb(self, tmp_path, rng):
        from PIL import Image

        arr = (rng.random((4, 6, 3)) * 255).astype(np.uint8)
        path = str(tmp_path / "f.png")
        Image.fromarray(arr).save(path)
        frame = load_frame(path)
        assert frame.shape == (3, 4, 6)
        np.testing.assert_allclose(frame, arr.transpose(2, 0, 1) / 255.0,
                                   atol=1e-7)


class TestSequences:
    def test_directory_of_frames(self, tmp_path, rng):
        d = tmp_path / "seq"
        d.mkdir()
        for i in range(7):
            write_ppm(str(d / f"{i:03d}.ppm"), rng.random((3, 4, 4)))
        seq = load_sequence(str(d))
        assert len(seq) == 7
        assert seq.frame_shape == (3, 4, 4)

    def test_mixed_sizes_name_the_offender(self, tmp_path, rng):
        d = tmp_path / "seq"
        d.mkdir()
        write_ppm(str(d / "a.ppm"), rng.random((3, 4, 4)))
        write_ppm(str(d / "b.ppm"), rng.random((3, 5, 5)))
        with pytest.raises(DataError, match="b.ppm"):
            load_sequence(str(d))

    def test_empty_directory_rejected(self, tmp_path):
        d = tmp_path / "seq"
        d.mkdir()
        with pytest.raises(DataError):
            load_sequence(str(d))

    def test_manifest_loading(self, tmp_path):
        write_dataset(str(tmp_path / "ds"), n_sequences=3, h=16, w=16,
                      n_frames=2, seed=0)
        seqs = load_dataset(str(tmp_path / "ds" / "manifest.txt"))
        assert len(seqs) == 3
        assert all(len(s) == 2 for s in seqs)


class TestNoise:
    def test_sigma_zero_copies_exactly(self, rng):
        frame = rng.random((3, 8, 8)).astype(np.float32)
        out = add_awgn(frame, 0.0, sample_stream(0, NOISE))
        assert out is not frame
        np.testing.assert_array_equal(out, frame)

    def test_negative_sigma_rejected(self, rng):
        with pytest.raises(ConfigError):
            add_awgn(np.zeros((3, 2, 2), dtype=np.float32), -1.0,
                     sample_stream(0, NOISE))

    def test_monte_carlo_moments(self):
        sigma = 30.0
        clean = np.zeros((3, 640, 640), dtype=np.float32)  # >1e6 samples
        noisy = add_awgn(clean, sigma, sample_stream(7, NOISE))
        n = noisy.size
        assert n >= 1_000_000
        assert abs(noisy.mean()) < 3 * (sigma / 255) / 1000
        assert abs(noisy.std() - sigma / 255) < 0.01 * (sigma / 255)

    def test_noise_is_not_clipped(self):
        clean = np.zeros((3, 64, 64), dtype=np.float32)
        noisy = add_awgn(clean, 50.0, sample_stream(0, NOISE))
        assert noisy.min() < 0.0


class TestTriples:
    def test_interior_indices(self):
        assert make_triple(7, 3) == (2, 3, 4)

    def test_edges_replicate(self):
        assert make_triple(7, 0) == (0, 0, 1)
        assert make_triple(7, 6) == (5, 6, 6)

    def test_out_of_range(self):
        with pytest.raises(ConfigError):
            make_triple(7, 7)


class TestAugmentation:
    def test_code_zero_is_identity(self, rng):
        f = rng.random((3, 4, 4))
        np.testing.assert_array_equal(apply_augment(f, 0), f)

    def test_hflip_twice_is_identity(self, rng):
        f = rng.random((3, 4, 4))
        np.testing.assert_array_equal(apply_augment(apply_augment(f, 4), 4), f)

    def test_rot180_equals_hflip_of_vflip(self, rng):
        f = rng.random((3, 4, 4))
        np.testing.assert_array_equal(
            apply_augment(f, 2), apply_augment(apply_augment(f, 8), 4))

    @settings(max_examples=80, deadline=None)
    @given(a=st.integers(0, N_AUGMENTS - 1), b=st.integers(0, N_AUGMENTS - 1))
    def test_group_closure(self, a, b):
        probe = np.arange(16, dtype=np.float32).reshape(1, 4, 4)
        composed = apply_augment(apply_augment(probe, a), b)
        matches = [c for c in range(N_AUGMENTS)
                   if np.array_equal(apply_augment(probe, c), composed)]
        assert matches, f"composition {a} then {b} left the set"

    @settings(max_examples=24, deadline=None)
    @given(a=st.integers(0, N_AUGMENTS - 1))
    def test_every_code_has_inverse(self, a):
        probe = np.arange(16, dtype=np.float32).reshape(1, 4, 4)
        once = apply_augment(probe, a)
        inverses = [c for c in range(N_AUGMENTS)
                    if np.array_equal(apply_augment(once, c), probe)]
        assert inverses

    def test_bad_code_rejected(self, rng):
        with pytest.raises(ConfigError):
            apply_augment(rng.random((3, 4, 4)), 12)

    def test_shared_window_across_frames(self, rng):
        f = rng.random((3, 12, 12)).astype(np.float32)
        out, offset, code = crop_and_augment([f, f, f, f], 8,
                                             sample_stream(0, AUGMENT))
        assert len(out) == 4
        for o in out[1:]:
            np.testing.assert_array_equal(o, out[0])
        assert 0 <= offset[0] <= 4 and 0 <= offset[1] <= 4
        assert 0 <= code < N_AUGMENTS


class TestSampleSynthesis:
    def make_seq(self, rng, n=5, hw=24):
        return FrameSequence("s", [rng.random((3, hw, hw)).astype(np.float32)
                                   for _ in range(n)])

    def test_pure_function_of_indices(self, rng):
        seq = self.make_seq(rng)
        noise = NoiseConfig(mode="uniform")
        a = synthesize_sample(seq, 2, 3, 11, 16, noise, seed=9)
        b = synthesize_sample(seq, 2, 3, 11, 16, noise, seed=9)
        np.testing.assert_array_equal(a.noisy_cur, b.noisy_cur)
        np.testing.assert_array_equal(a.target, b.target)
        assert a.sigma == b.sigma
        assert a.crop_offset == b.crop_offset
        assert a.augment_code == b.augment_code

    def test_epoch_changes_noise(self, rng):
        seq = self.make_seq(rng)
        noise = NoiseConfig(mode="fixed", sigma=25.0)
        a = synthesize_sample(seq, 0, 1, 0, 16, noise, seed=9)
        b = synthesize_sample(seq, 0, 1, 1, 16, noise, seed=9)
        assert not np.array_equal(a.noisy_cur, b.noisy_cur)

    def test_zero_sigma_aligns_all_four_crops(self, rng):
        seq = self.make_seq(rng)
        noise = NoiseConfig(mode="fixed", sigma=0.0)
        s = synthesize_sample(seq, 0, 2, 0, 16, noise, seed=3)
        np.testing.assert_array_equal(s.noisy_cur, s.target)
        assert s.noisy_prev.shape == s.target.shape

    def test_uniform_mode_stays_in_range(self, rng):
        seq = self.make_seq(rng)
        noise = NoiseConfig(mode="uniform", sigma_min=5.0, sigma_max=50.0)
        sigmas = {synthesize_sample(seq, 0, f, e, 16, noise, seed=1).sigma
                  for f in range(5) for e in range(4)}
        assert all(5.0 <= s <= 50.0 for s in sigmas)
        assert len(sigmas) > 1

    def test_eval_noise_reproducible_per_frame(self, rng):
        seq = self.make_seq(rng, n=4)
        a = noisy_eval_sequence(seq, 25.0, seed=0, video=1)
        b = noisy_eval_sequence(seq, 25.0, seed=0, video=1)
        sub = noisy_eval_sequence(
            FrameSequence("s", seq.frames[2:]), 25.0, seed=0, video=1)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)
        # frames keyed absolutely, so a subset shifts keys and differs
        assert not np.array_equal(a[2], sub[0])


class TestStreams:
    def test_same_key_same_draws(self):
        a = sample_stream(5, NOISE, 1, 2, 3).standard_normal(8)
        b = sample_stream(5, NOISE, 1, 2, 3).standard_normal(8)
        np.testing.assert_array_equal(a, b)

    def test_purposes_are_independent(self):
        a = sample_stream(5, NOISE, 1, 2, 3).standard_normal(8)
        b = sample_stream(5, AUGMENT, 1, 2, 3).standard_normal(8)
        c = sample_stream(5, INIT).standard_normal(8)
        d = sample_stream(5, EVAL_NOISE, 1, 2, 3).standard_normal(8)
        e = sample_stream(5, CALIBRATE, 1, 2, 3).standard_normal(8)
        assert not np.array_equal(a, b)
        assert not np.array_equal(a, c)
        assert not np.array_equal(a, d)
        assert not np.array_equal(d, e)

    def test_index_ranges_enforced(self):
        with pytest.raises(ConfigError):
            sample_stream(0, NOISE, epoch=1 << 16)
        with pytest.raises(ConfigError):
            sample_stream(0, NOISE, video=1 << 20)
        with pytest.raises(ConfigError):
            sample_stream(0, NOISE, frame=1 << 20)

    def test_sigma_lane_quantization(self):
        assert sigma_lane(30.0) == 120
        assert sigma_lane(12.25) == 49
        assert sigma_lane(0.0) == 0
        with pytest.raises(ConfigError):
            sigma_lane(-1.0)


class TestSynthetic:
    def test_sequence_values_bounded_and_moving(self):
        seq = make_sequence(24, 24, n_frames=4, seed=0, name="t")
        assert len(seq) == 4
        for f in seq.frames:
            assert f.dtype == np.float32
            assert f.min() >= 0.05 - 1e-6 and f.max() <= 0.95 + 1e-6
        assert not np.array_equal(seq.frames[0], seq.frames[1])

    def test_write_dataset_layout(self, tmp_path):
        root = str(tmp_path / "ds")
        write_dataset(root, n_sequences=2, h=16, w=16, n_frames=3, seed=1)
        assert os.path.isfile(os.path.join(root, "manifest.txt"))
        seqs = load_dataset(os.path.join(root, "manifest.txt"))
        assert [len(s) for s in seqs] == [3, 3]

    def test_deterministic_by_seed(self):
        a = make_sequence(16, 16, 2, seed=9, name="a")
        b = make_sequence(16, 16, 2, seed=9, name="b")
        np.testing.assert_array_equal(a.frames[1], b.frames[1])
