"""
Tests for the Training Loop

Tests cover:
- Overfitting a handful of windows
- Bit-identical reruns with the same seed
- Config validation and overrides
- Checkpoint and loss-history outputs
- Non-finite loss reporting
"""

import numpy as np
import pandas as pd
import pytest

from mdpulse.errors import EmptyDataset, InvalidConfig, NonFiniteLoss, NonFiniteValue
from mdpulse.models.config import ModelConfig
from mdpulse.models.network import build_model, load_model
from mdpulse.preprocess.frames import WindowDataset
from mdpulse.training.trainer import TrainConfig, train

TINY = dict(filters=(2, 2), gru_units=2)


@pytest.fixture
def dataset(tiny_clip) -> WindowDataset:
    """Four 4-step windows of the tiny clip."""
    return WindowDataset([tiny_clip], 4, 25)


def tiny_model(seed=0, **overrides):
    return build_model(ModelConfig(**{**TINY, **overrides}), 8, 4, seed=seed)


class TestTrain:
    """Test suite for train()."""

    def test_overfits_four_windows(self, dataset):
        """Test that the loss falls while overfitting four windows."""
        # Arrange
        assert len(dataset) == 4
        model = tiny_model(dropout_rate=0.0)
        cfg = TrainConfig(epochs=50, batch_size=4, lr=0.01, window_T=4, seed=0)

        # Act
        result = train(model, dataset, cfg)

        # Assert
        assert len(result.loss_history) == 50
        assert result.loss_history[-1] < result.loss_history[0]
        assert result.steps == 50
        assert result.best_loss == min(result.loss_history)

    def test_same_seed_same_history(self, dataset):
        """Test that a fixed seed reproduces losses and weights."""
        cfg = TrainConfig(epochs=2, batch_size=3, window_T=4, seed=5)
        a = train(tiny_model(seed=1), dataset, cfg)
        b = train(tiny_model(seed=1), dataset, cfg)
        assert a.loss_history == b.loss_history
        assert all(np.array_equal(a.final_state[k], b.final_state[k]) for k in a.final_state)

    def test_partial_last_batch(self, dataset):
        """Test that a short last batch still takes a step."""
        result = train(tiny_model(), dataset, TrainConfig(epochs=1, batch_size=3, window_T=4))
        assert result.steps == 2

    def test_accepts_clips(self, tiny_clip):
        """Test training straight from a list of clips."""
        cfg = TrainConfig(epochs=1, batch_size=8, window_T=4, window_stride=40)
        result = train(tiny_model(), [tiny_clip], cfg)
        assert result.steps == 1

    def test_loss_override(self, dataset):
        """Test that the training config's loss settings replace the model's."""
        model = tiny_model()
        train(model, dataset, TrainConfig(epochs=1, window_T=4, loss_kind="mae", target_weights=(2.0, 1.0)))
        assert model.config.loss_kind == "mae"
        assert model.config.target_weights == (2.0, 1.0)

    def test_writes_checkpoints(self, dataset, tmp_path):
        """Test the loss history file and the best and final checkpoints."""
        # Act
        result = train(
            tiny_model(),
            dataset,
            TrainConfig(epochs=3, batch_size=4, window_T=4, checkpoint_dir=str(tmp_path)),
        )

        # Assert
        history = pd.read_csv(tmp_path / "loss_history.csv")
        assert list(history.columns) == ["epoch", "mean_loss"]
        assert history["epoch"].tolist() == [1, 2, 3]
        np.testing.assert_allclose(history["mean_loss"], result.loss_history)
        best = load_model(result.checkpoints["best"])
        for name, value in result.best_state.items():
            assert np.array_equal(best.params[name].data, value)
        assert (tmp_path / "final.ckpt").exists()

    def test_empty_dataset(self):
        """Test training with no windows."""
        with pytest.raises(EmptyDataset):
            train(tiny_model(), [], TrainConfig(window_T=4))

    def test_invalid_config(self, dataset):
        """Test a zero epoch count."""
        with pytest.raises(InvalidConfig):
            train(tiny_model(), dataset, TrainConfig(epochs=0, window_T=4))

    def test_non_finite_loss(self, dataset, monkeypatch):
        """Test that a non-finite loss reports its epoch and batch."""
        # Arrange
        def exploding_loss(*args, **kwargs):
            raise NonFiniteValue("mse produced non-finite values")

        monkeypatch.setattr("mdpulse.training.trainer.compute_loss", exploding_loss)

        # Act
        with pytest.raises(NonFiniteLoss) as info:
            train(tiny_model(), dataset, TrainConfig(epochs=1, window_T=4))

        # Assert
        assert info.value.epoch == 0
        assert info.value.batch_index == 0


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
