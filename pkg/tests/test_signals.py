"""
Tests for Pulse Waveforms

Tests cover:
- First and second differences, telescoping and linearity
- Standardization and amplitude normalization
- Synthetic PPG generation in every beat shape and its ground-truth fiducials
- Beat template validation
- Contact PPG CSV ingestion
"""

import numpy as np
import pandas as pd
import pytest

from mdpulse.errors import (
    ConstantInput,
    InvalidRange,
    InvalidTemplate,
    IoError,
    SequenceTooShort,
)
from mdpulse.signals.ppg import (
    TEMPLATE_SHAPES,
    BeatTemplateParams,
    Fiducials,
    PpgSignal,
    aligned_second_difference,
    first_difference,
    load_ppg_csv,
    min_max_normalize,
    second_difference,
    standardize,
    synth_ppg,
)

SHAPED = {
    "raised_cosine": BeatTemplateParams(),
    "gaussian": BeatTemplateParams(shape="gaussian", systolic_width=0.06, dicrotic_width=0.06),
    "kinked": BeatTemplateParams(shape="kinked", dicrotic_amp=0.5),
}


class TestDifferences:
    """Test suite for the discrete derivative operators."""

    def test_first_difference_running_example(self):
        """Test the first difference of a short ramp."""
        assert first_difference([1, 2, 4, 7]).tolist() == [1, 2, 3]

    def test_first_difference_of_constant_is_zero(self):
        """Test that a constant sequence has a zero first difference."""
        assert first_difference([5, 5, 5]).tolist() == [0, 0]

    def test_first_difference_matches_loop(self, rng):
        """Test first_difference against an explicit loop."""
        # Arrange
        p = rng.standard_normal(100)

        # Act
        fd = first_difference(p)

        # Assert
        expected = [p[t] - p[t - 1] for t in range(1, 100)]
        assert fd.tolist() == expected

    def test_first_difference_is_linear(self, rng):
        """Test linearity of the first difference on one pair of signals."""
        p, q = rng.standard_normal(50), rng.standard_normal(50)
        a, b = 2.5, -0.75
        np.testing.assert_allclose(
            first_difference(a * p + b * q),
            a * first_difference(p) + b * first_difference(q),
            atol=1e-12,
        )

    def test_telescoping_and_linearity_over_random_signals(self):
        """Test telescoping sums and linearity of both operators on 1,000 seeded signals."""
        rng = np.random.default_rng(2024)
        for _ in range(1000):
            # Arrange
            n = int(rng.integers(3, 200))
            x, y = rng.standard_normal((2, n))
            a, b = rng.uniform(-5.0, 5.0, size=2)

            # Act
            fd = first_difference(x)
            sd = second_difference(x)

            # Assert
            assert fd.sum() == pytest.approx(x[-1] - x[0], rel=1e-9, abs=1e-12)
            assert sd.sum() == pytest.approx(fd[-1] - fd[0], rel=1e-9, abs=1e-12)
            np.testing.assert_allclose(
                first_difference(a * x + b * y),
                a * fd + b * first_difference(y),
                rtol=0,
                atol=1e-12,
            )
            np.testing.assert_allclose(
                second_difference(a * x + b * y),
                a * sd + b * second_difference(y),
                rtol=0,
                atol=1e-12,
            )

    def test_second_difference_running_example(self):
        """Test the second difference of a short ramp."""
        assert second_difference([1, 2, 4, 7]).tolist() == [1, 1]

    def test_second_difference_of_ramp_is_zero(self):
        """Test that a straight line has no curvature."""
        assert second_difference([0, 1, 2, 3, 4]).tolist() == [0, 0, 0]

    def test_second_difference_composes_first_difference(self, rng):
        """Test that the second difference is the first difference applied twice."""
        p = rng.standard_normal(100)
        assert np.array_equal(second_difference(p), first_difference(first_difference(p)))

    def test_aligned_second_difference_pads_front(self):
        """Test the zero pad that aligns curvature with its centre sample."""
        out = aligned_second_difference([1, 2, 4, 7])
        assert out.tolist() == [0, 1, 1]

    def test_too_short_sequences(self):
        """Test the minimum lengths of both operators."""
        with pytest.raises(SequenceTooShort):
            first_difference([1.0])
        with pytest.raises(SequenceTooShort):
            second_difference([1.0, 2.0])


class TestNormalization:
    """Test suite for standardize and min_max_normalize."""

    def test_two_point_z_score(self):
        """Test standardize on two points."""
        np.testing.assert_allclose(standardize([0, 2]), [-1, 1], atol=1e-12)

    def test_standardize_is_idempotent(self, rng):
        """Test that standardizing twice changes nothing."""
        z = standardize(rng.standard_normal(64))
        np.testing.assert_allclose(standardize(z), z, atol=1e-9)

    def test_standardize_moments(self, rng):
        """Test zero mean and unit population std after standardize."""
        z = standardize(rng.uniform(-3, 7, size=500))
        assert abs(z.mean()) < 1e-9
        assert abs(z.std() - 1.0) < 1e-9

    def test_standardize_constant_raises(self):
        """Test that a constant sequence cannot be standardized."""
        with pytest.raises(ConstantInput):
            standardize([3.0, 3.0, 3.0])

    def test_min_max_pins_extremes(self, rng):
        """Test that min_max_normalize hits 0 and 1 exactly."""
        out = min_max_normalize(rng.standard_normal(200) * 1e3)
        assert out.min() == 0.0
        assert out.max() == 1.0


class TestPpgSignal:
    """Test suite for the PpgSignal and Fiducials containers."""

    def test_normalized_flag_checks_range(self):
        """Test that normalized=True demands the [0, 1] span."""
        with pytest.raises(InvalidRange):
            PpgSignal(np.array([0.1, 0.5, 0.9]), 30.0, normalized=True)

    def test_rejects_single_sample(self):
        """Test the two-sample minimum."""
        with pytest.raises(SequenceTooShort):
            PpgSignal(np.array([0.0]), 30.0)

    def test_fiducials_need_notch_after_onset(self):
        """Test that a notch before its diastolic point is rejected."""
        with pytest.raises(InvalidRange):
            Fiducials.from_indices([10, 40], [5, 50], 30.0)

    def test_fiducial_lvet(self):
        """Test LVET from one pair of indices."""
        # Arrange / Act
        fid = Fiducials.from_indices([0], [9], 30.0)

        # Assert
        assert len(fid) == 1
        assert fid.lvet_ms[0] == pytest.approx(300.0)


def raised_cosine_wave(phase: np.ndarray, amp: float, center: float, width: float) -> np.ndarray:
    """One wave of a raised-cosine train at unit period: rise over `width`, fall until the next onset."""
    onset = center - width
    rising = (phase >= onset) & (phase < center)
    since_peak = np.where(phase >= center, phase - center, phase + 1.0 - center)
    return np.where(
        rising,
        0.5 * amp * (1.0 - np.cos(np.pi * (phase - onset) / width)),
        0.5 * amp * (1.0 + np.cos(np.pi * since_peak / (1.0 - width))),
    )


class TestSynthPpg:
    """Test suite for the synthetic PPG generator."""

    def test_default_shape_is_raised_cosine(self):
        """Test that templates default to raised-cosine bumps."""
        assert BeatTemplateParams().shape == "raised_cosine"
        assert set(TEMPLATE_SHAPES) == {"raised_cosine", "gaussian", "kinked"}

    def test_sample_and_beat_counts(self, template):
        """Test the sample count, beat count and normalization of a 10 s record."""
        # Act
        ppg = synth_ppg(template, hr_bpm=60, fs=30, duration_s=10, seed=0)

        # Assert
        assert len(ppg) == 300
        assert len(ppg.fiducials) == 10
        assert ppg.normalized
        assert ppg.samples.min() == 0.0 and ppg.samples.max() == 1.0

    def test_raised_cosine_beats_match_closed_form(self):
        """Test the default beats against the sum of two raised-cosine waves."""
        # Arrange
        template = BeatTemplateParams()
        phase = (np.arange(1000) / 100.0) % 1.0

        # Act
        ppg = synth_ppg(template, hr_bpm=60, fs=100, duration_s=10, seed=0)

        # Assert
        expected = raised_cosine_wave(phase, 1.0, 0.2, 0.1) + raised_cosine_wave(phase, 0.35, 0.5, 0.08)
        np.testing.assert_allclose(ppg.samples, min_max_normalize(expected), atol=1e-9)

    def test_gaussian_beats_match_closed_form(self):
        """Test Gaussian beats against the sum of two Gaussian bumps per beat."""
        # Arrange
        template = SHAPED["gaussian"]
        t = np.arange(1000) / 100.0

        # Act
        ppg = synth_ppg(template, hr_bpm=60, fs=100, duration_s=10, seed=0)

        # Assert
        expected = np.zeros_like(t)
        for k in range(-2, 10):
            expected += np.exp(-0.5 * ((t - k - 0.2) / 0.06) ** 2)
            expected += 0.35 * np.exp(-0.5 * ((t - k - 0.5) / 0.06) ** 2)
        np.testing.assert_allclose(ppg.samples, min_max_normalize(expected), atol=1e-9)

    @pytest.mark.parametrize("shape", TEMPLATE_SHAPES)
    def test_notch_is_exhaustive_argmin_between_peaks(self, shape):
        """Test every beat shape's notch against a scan between the bump centers."""
        # Arrange
        template = SHAPED[shape]
        fs, hr = 50.0, 73.0
        period = 60.0 / hr
        ppg = synth_ppg(template, hr_bpm=hr, fs=fs, duration_s=8, seed=1)

        # Act
        oracle = []
        for k in range(len(ppg.fiducials)):
            lo = int(np.ceil((k + template.systolic_center) * period * fs))
            hi = int(np.floor((k + template.dicrotic_center) * period * fs))
            best = lo
            for i in range(lo, hi + 1):
                if ppg.samples[i] < ppg.samples[best]:
                    best = i
            oracle.append(best)

        # Assert
        assert ppg.fiducials.notch_idx.tolist() == oracle

    @pytest.mark.parametrize("shape", TEMPLATE_SHAPES)
    def test_onsets_are_local_minima(self, shape):
        """Test that every interior fiducial is a local minimum of the waveform."""
        ppg = synth_ppg(SHAPED[shape], hr_bpm=72.0, fs=30.0, duration_s=8.0, seed=3)
        s = ppg.samples
        for idx in np.concatenate([ppg.fiducials.diastolic_idx, ppg.fiducials.notch_idx]):
            if 0 < idx < len(s) - 1:
                assert s[idx] <= s[idx - 1] and s[idx] <= s[idx + 1]

    def test_raised_cosine_notch_sits_above_diastole(self, ppg):
        """Test that the notch of a raised-cosine beat stays above the diastolic level."""
        fid = ppg.fiducials
        assert np.all(ppg.samples[fid.notch_idx] > ppg.samples[fid.diastolic_idx])

    def test_lvet_matches_template_spacing(self):
        """Test that narrow bumps 0.3 periods apart give a 300 ms LVET at 60 BPM."""
        # Arrange
        template = BeatTemplateParams(
            systolic_center=0.2, systolic_width=0.05, dicrotic_center=0.5, dicrotic_width=0.05
        )

        # Act
        ppg = synth_ppg(template, hr_bpm=60, fs=100, duration_s=10, seed=0)

        # Assert
        assert len(ppg.fiducials) == 10
        np.testing.assert_allclose(ppg.fiducials.lvet_ms, 300.0, atol=10.0)

    def test_seeded_jitter_is_deterministic(self, template):
        """Test that the jitter seed alone decides the waveform."""
        a = synth_ppg(template, 70, 30, 10, seed=7, hr_jitter=0.05)
        b = synth_ppg(template, 70, 30, 10, seed=7, hr_jitter=0.05)
        c = synth_ppg(template, 70, 30, 10, seed=8, hr_jitter=0.05)
        assert np.array_equal(a.samples, b.samples)
        assert np.array_equal(a.fiducials.notch_idx, b.fiducials.notch_idx)
        assert not np.array_equal(a.samples, c.samples)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"hr_bpm": 20},
            {"hr_bpm": 300},
            {"fs": 10},
            {"hr_jitter": 0.5},
        ],
    )
    def test_rejects_out_of_range_arguments(self, template, kwargs):
        """Test the heart rate, sampling rate and jitter bounds."""
        args = {"hr_bpm": 60, "fs": 30, "duration_s": 5, "hr_jitter": 0.0}
        args.update(kwargs)
        with pytest.raises(InvalidRange):
            synth_ppg(template, **args)

    @pytest.mark.parametrize(
        "overrides",
        [
            {"systolic_center": 0.6, "dicrotic_center": 0.5},
            {"dicrotic_amp": 1.2},
            {"systolic_width": 0.25},
            {"dicrotic_width": 0.3},
            {"decay": 0.0},
            {"shape": "square"},
            {"dicrotic_amp": 0.05},
            {"systolic_width": 0.05, "dicrotic_width": 0.02},
            {"shape": "gaussian", "systolic_width": 0.15},
            {"shape": "kinked", "dicrotic_amp": 0.2},
        ],
    )
    def test_invalid_templates(self, overrides):
        """Test the template checks of every shape."""
        with pytest.raises(InvalidTemplate):
            BeatTemplateParams(**overrides).validate()

    @pytest.mark.parametrize("shape", TEMPLATE_SHAPES)
    def test_shaped_templates_are_valid(self, shape):
        """Test that the shaped templates used across the suites validate."""
        SHAPED[shape].validate()


class TestLoadPpgCsv:
    """Test suite for contact PPG ingestion."""

    def test_resamples_to_uniform_grid(self, tmp_path):
        """Test resampling onto the median recorded rate."""
        # Arrange
        t = np.cumsum(np.full(200, 0.02))
        path = tmp_path / "contact.csv"
        pd.DataFrame({"time_s": t, "ppg": np.sin(2 * np.pi * 1.1 * t) * 40 + 500}).to_csv(
            path, index=False
        )

        # Act
        ppg = load_ppg_csv(path)

        # Assert
        assert ppg.fs == pytest.approx(50.0)
        assert ppg.normalized
        assert ppg.fiducials is None

    def test_explicit_rate(self, tmp_path):
        """Test resampling at a requested rate."""
        path = tmp_path / "contact.csv"
        pd.DataFrame({"time_s": [0.0, 0.5, 1.0, 1.5, 2.0], "ppg": [0, 1, 0, 1, 0]}).to_csv(path, index=False)
        ppg = load_ppg_csv(path, fs=4.0)
        assert len(ppg) == 9

    def test_missing_file(self, tmp_path):
        """Test that a missing file names the path."""
        with pytest.raises(IoError, match="missing.csv"):
            load_ppg_csv(tmp_path / "missing.csv")

    def test_bad_header(self, tmp_path):
        """Test that the header must be time_s,ppg."""
        path = tmp_path / "bad.csv"
        path.write_text("t,value\n0,1\n1,2\n")
        with pytest.raises(IoError, match="time_s,ppg"):
            load_ppg_csv(path)

    def test_non_increasing_time(self, tmp_path):
        """Test that repeated timestamps are rejected."""
        path = tmp_path / "bad.csv"
        path.write_text("time_s,ppg\n0,1\n0,2\n1,3\n")
        with pytest.raises(IoError):
            load_ppg_csv(path)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
