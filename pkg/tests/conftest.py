"""
Shared fixtures for the mdpulse test suites.

Tests marked `slow` (desk-scale training runs) only run with --runslow.
"""

import numpy as np
import pytest

from mdpulse.optics.render import DrmParams, render_clip
from mdpulse.signals.ppg import BeatTemplateParams, synth_ppg


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: desk-scale run, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def template() -> BeatTemplateParams:
    return BeatTemplateParams()


@pytest.fixture
def ppg(template):
    """8 s of clean 72 BPM pulse at 30 Hz."""
    return synth_ppg(template, hr_bpm=72.0, fs=30.0, duration_s=8.0, seed=3)


@pytest.fixture
def tiny_clip(template):
    """3 s, 8x8 clip without noise, specular flicker or motion."""
    signal = synth_ppg(template, hr_bpm=80.0, fs=30.0, duration_s=3.0, seed=5)
    return render_clip(signal, DrmParams(), 8, 8, seed=6)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
