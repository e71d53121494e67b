"""
Tests for Clip Preprocessing

Tests cover:
- Center-crop block-mean downsampling
- Normalized difference and difference-of-difference frames
- Window counts, alignment and target scaling
- Clip-level frame scaling shared by every window
- WindowDataset indexing and batching
- Overlap-add stitching
"""

import numpy as np
import pytest

import mdpulse.preprocess.frames as frames_module
from mdpulse.errors import ClipTooShort, ShapeMismatch, UpsampleRequested
from mdpulse.optics.render import DrmParams, VideoClip, render_clip
from mdpulse.preprocess.frames import (
    WindowDataset,
    crop_downsample,
    diff_of_diff_frames,
    frame_scales,
    make_window,
    make_windows,
    normalized_diff_frames,
    stitch_windows,
    window_starts,
)
from mdpulse.signals.ppg import PpgSignal, first_difference, second_difference


def clip_from_frames(frames: np.ndarray, fs: float = 30.0) -> VideoClip:
    n = frames.shape[0]
    samples = np.linspace(0.0, 1.0, n)
    return VideoClip(frames, fs, PpgSignal(samples, fs, normalized=True))


class TestCropDownsample:
    """Test suite for crop_downsample."""

    def test_constant_frames(self):
        """Test downsampling constant frames."""
        clip = clip_from_frames(np.full((3, 72, 72, 3), 0.3))
        out = crop_downsample(clip, 36, 36)
        assert out.frames.shape == (3, 36, 36, 3)
        np.testing.assert_allclose(out.frames, 0.3)

    def test_single_block_mean(self):
        """Test a single output pixel."""
        frames = np.zeros((2, 2, 2, 3))
        frames[:, :, :, 0] = [[1, 2], [3, 4]]
        out = crop_downsample(clip_from_frames(frames), 1, 1)
        assert out.frames[0, 0, 0, 0] == pytest.approx(2.5)

    def test_matches_loop_oracle(self, rng):
        """Test block means against a loop."""
        # Arrange
        frames = rng.uniform(size=(2, 64, 64, 3))

        # Act
        out = crop_downsample(clip_from_frames(frames), 16, 16)

        # Assert
        expected = np.zeros((2, 16, 16, 3))
        for t in range(2):
            for i in range(16):
                for j in range(16):
                    expected[t, i, j] = frames[t, 4 * i : 4 * i + 4, 4 * j : 4 * j + 4].mean(axis=(0, 1))
        np.testing.assert_allclose(out.frames, expected, atol=1e-12)

    def test_center_crop_of_wide_frames(self):
        """Test that wide frames are cropped to the centre square."""
        frames = np.zeros((2, 4, 8, 3))
        frames[:, :, 2:6, :] = 1.0
        out = crop_downsample(clip_from_frames(frames), 2, 2)
        np.testing.assert_allclose(out.frames, 1.0)

    def test_upsample_rejected(self):
        """Test that enlarging is refused."""
        with pytest.raises(UpsampleRequested):
            crop_downsample(clip_from_frames(np.zeros((2, 8, 8, 3))), 16, 16)


class TestDifferenceFrames:
    """Test suite for the FD and SD frame streams."""

    def test_constant_clip_gives_zeros(self):
        """Test a static clip."""
        fd = normalized_diff_frames(np.full((5, 4, 4, 3), 0.4))
        assert np.array_equal(fd, np.zeros((4, 4, 4, 3)))

    def test_two_frame_arithmetic(self):
        """Test the normalized difference of two frames."""
        frames = np.stack([np.full((2, 2, 3), 0.4), np.full((2, 2, 3), 0.6)])
        fd = normalized_diff_frames(frames, 1e-8, standardize_frames=False)
        np.testing.assert_allclose(fd, 0.2 / (1.0 + 1e-8), rtol=1e-12)

    def test_matches_pixel_loop(self, rng):
        """Test normalized differences against a per-pixel loop."""
        # Arrange
        x = rng.uniform(0.1, 0.9, size=(4, 3, 3, 3))

        # Act
        fd = normalized_diff_frames(x, 1e-8, standardize_frames=False)

        # Assert
        for t in range(3):
            for i in range(3):
                for j in range(3):
                    for k in range(3):
                        a, b = x[t, i, j, k], x[t + 1, i, j, k]
                        assert fd[t, i, j, k] == pytest.approx((b - a) / (b + a + 1e-8), abs=1e-12)

    def test_standardized_frames_are_clamped(self, rng):
        """Test that standardized frames stay within the clamp."""
        x = rng.uniform(0.1, 0.9, size=(20, 6, 6, 3))
        x[10, 0, 0, 0] = 0.99
        fd = normalized_diff_frames(x)
        assert np.abs(fd).max() <= 3.0

    def test_diff_of_diff(self, rng):
        """Test the difference of two FD frames."""
        a, b = rng.standard_normal((2, 3, 3, 3))
        out = diff_of_diff_frames(np.stack([a, b]), standardize_frames=False)
        np.testing.assert_allclose(out[0], b - a, atol=1e-12)

    def test_diff_of_diff_constant_is_zero(self):
        """Test that constant FD frames have zero SD frames."""
        fd = np.ones((4, 2, 2, 3))
        assert np.array_equal(diff_of_diff_frames(fd), np.zeros((3, 2, 2, 3)))


class TestWindows:
    """Test suite for window_starts / make_window / make_windows."""

    @pytest.mark.parametrize("n_frames, expected", [(301, 19), (31, 1), (46, 2)])
    def test_window_counts(self, n_frames, expected):
        """Test the number of window starts."""
        assert len(window_starts(n_frames, 30, 15)) == expected

    def test_too_short(self):
        """Test a clip with fewer than T+1 frames."""
        with pytest.raises(ClipTooShort):
            window_starts(30, 30, 15)

    def test_stride_equal_to_T_partitions(self):
        """Test non-overlapping windows."""
        starts = list(window_starts(121, 30, 30))
        assert starts == [0, 30, 60, 90]

    def test_window_shapes(self, tiny_clip):
        """Test window shapes and the zero front pad of the SD streams."""
        # Act
        w = make_window(tiny_clip, 5, 10)

        # Assert
        assert w.raw_frames.shape == (10, 8, 8, 3)
        assert w.fd_frames.shape == w.sd_frames.shape == (10, 8, 8, 3)
        assert w.fd_target.shape == w.sd_target.shape == (10,)
        assert np.array_equal(w.raw_frames, tiny_clip.frames[5:15])
        assert np.all(w.sd_frames[0] == 0) and w.sd_target[0] == 0.0

    def test_unscaled_targets_follow_the_ppg(self, tiny_clip):
        """Test unscaled targets against PPG differences."""
        w = make_window(tiny_clip, 7, 12, standardize_targets=False)
        segment = tiny_clip.source_ppg.samples[7:20]
        np.testing.assert_allclose(w.fd_target, first_difference(segment))
        np.testing.assert_allclose(w.sd_target[1:], second_difference(segment))

    def test_standardized_targets(self, tiny_clip):
        """Test zero-mean unit-std targets."""
        w = make_window(tiny_clip, 0, 20)
        assert abs(w.fd_target.mean()) < 1e-9
        assert w.fd_target.std() == pytest.approx(1.0)

    def test_impulse_lands_on_same_index(self):
        """Test that a PPG impulse shows up at the same index in frames and targets."""
        # Arrange
        n, fs = 12, 30.0
        samples = np.zeros(n)
        samples[6] = 1.0
        ppg = PpgSignal(samples, fs, normalized=True)
        params = DrmParams(skin_color=(1.0, 0.0, 0.0), pulsatile_color=(0.2, 0.2, 0.2), skin_region=(0, 0, 4, 4))
        clip = render_clip(ppg, params, 4, 4)

        # Act
        w = make_window(clip, 2, 8, standardize_frames=False, standardize_targets=False)

        # Assert
        t_frames = int(np.argmax(w.fd_frames[:, 0, 0, 0]))
        t_target = int(np.argmax(w.fd_target))
        assert t_frames == t_target == 3
        assert int(np.argmax(w.sd_frames[:, 0, 0, 0])) == int(np.argmax(w.sd_target)) == 3

    def test_overlapping_windows_share_frames(self, tiny_clip):
        """Test that overlapping windows share raw frames."""
        windows = make_windows(tiny_clip, 30, 15)
        assert [w.start for w in windows] == [0, 15, 30, 45]
        assert np.array_equal(windows[0].raw_frames[15:], windows[1].raw_frames[:15])

    def test_frames_use_clip_level_scale(self, tiny_clip):
        """Test that window FD and SD frames are slices of the clip-wide scaled frames."""
        # Arrange
        start, T = 20, 30
        clip_fd = normalized_diff_frames(tiny_clip)
        clip_sd = diff_of_diff_frames(normalized_diff_frames(tiny_clip, standardize_frames=False))

        # Act
        w = make_window(tiny_clip, start, T)

        # Assert
        np.testing.assert_array_equal(w.fd_frames, clip_fd[start : start + T])
        np.testing.assert_array_equal(w.sd_frames[1:], clip_sd[start : start + T - 1])

    def test_windows_share_one_scale(self, tiny_clip):
        """Test that every window of a clip is divided by the same standard deviation."""
        # Arrange
        fd_std, _ = frame_scales(tiny_clip)
        raw = normalized_diff_frames(tiny_clip, standardize_frames=False)

        # Act
        windows = make_windows(tiny_clip, 10, 10, clamp=1e9)

        # Assert
        for w in windows:
            np.testing.assert_allclose(w.fd_frames * fd_std, raw[w.start : w.start + 10], rtol=1e-12)

    def test_explicit_scales_match_computed_ones(self, tiny_clip):
        """Test that passing precomputed scales gives the same window."""
        a = make_window(tiny_clip, 4, 12)
        b = make_window(tiny_clip, 4, 12, scales=frame_scales(tiny_clip))
        assert np.array_equal(a.fd_frames, b.fd_frames)
        assert np.array_equal(a.sd_frames, b.sd_frames)

    def test_frame_scales_of_a_constant_clip(self):
        """Test that a static clip has zero scales and passes through unscaled."""
        clip = clip_from_frames(np.full((6, 4, 4, 3), 0.4))
        assert frame_scales(clip) == (0.0, 0.0)
        assert np.all(make_window(clip, 0, 4).fd_frames == 0.0)


class TestWindowDataset:
    """Test suite for WindowDataset."""

    def test_index_order(self, tiny_clip):
        """Test clip-major window order."""
        ds = WindowDataset([tiny_clip, tiny_clip], 30, 15)
        assert len(ds) == 8
        assert ds.index[:5] == [(0, 0), (0, 15), (0, 30), (0, 45), (1, 0)]
        assert ds.frame_hw == 8

    def test_batch_matches_examples(self, tiny_clip):
        """Test that batches stack the individual examples."""
        # Arrange
        ds = WindowDataset([tiny_clip], 10, 10)

        # Act
        batch = ds.batch([2, 0])

        # Assert
        assert len(batch) == 2
        assert batch.fd_frames.shape == (2, 10, 8, 8, 3)
        assert np.array_equal(batch.fd_target[0], ds.example(2).fd_target)
        assert np.array_equal(batch.raw_frames[1], ds.example(0).raw_frames)

    def test_scales_are_computed_once_per_clip(self, tiny_clip, monkeypatch):
        """Test that batching reuses each clip's frame scales."""
        # Arrange
        calls = []
        original = frames_module.frame_scales

        def counted(clip, epsilon=1e-8):
            calls.append(clip)
            return original(clip, epsilon)

        monkeypatch.setattr(frames_module, "frame_scales", counted)
        ds = WindowDataset([tiny_clip, tiny_clip], 10, 10)

        # Act
        ds.batch([0, 1, 2])
        ds.batch([3, len(ds) - 1])

        # Assert
        assert len(calls) == 2
        assert ds.scales(0) == original(tiny_clip)

    def test_unstandardized_dataset_has_no_scales(self, tiny_clip):
        """Test that scales are skipped when frames are left unscaled."""
        ds = WindowDataset([tiny_clip], 10, 10, standardize_frames=False)
        assert ds.scales(0) is None


class TestStitchWindows:
    """Test suite for stitch_windows."""

    def test_overlap_is_averaged(self):
        """Test the overlap average and uncovered zeros."""
        out = stitch_windows([np.ones(4), 3 * np.ones(4)], [0, 2], length=7)
        assert out.tolist() == [1, 1, 2, 2, 3, 3, 0]

    def test_recovers_a_signal(self, rng):
        """Test that windows cut from one signal stitch back to it."""
        signal = rng.standard_normal(40)
        starts = list(range(0, 31, 5))
        out = stitch_windows([signal[s : s + 10] for s in starts], starts)
        np.testing.assert_allclose(out, signal)

    def test_needs_windows(self):
        """Test stitching nothing."""
        with pytest.raises(ShapeMismatch):
            stitch_windows([], [])


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
