"""Shared fixtures: a tiny runnable preset and an untrained bundle for smoke tests."""

from __future__ import annotations

import socket

import numpy as np
import pytest
import torch

from icanim.backbone import new_bundle
from icanim.codec import VideoCodec
from icanim.config import load_config
from icanim.data import make_corpus

TINY = [
    "train.steps=3",
    "train.batch_size=1",
    "train.base_steps=0",
    "train.clip_len_range=[13,17]",
    "train.log_every=0",
    "backbone.depth=1",
    "backbone.model_dim=32",
    "backbone.heads=2",
    "backbone.latent_channels=4",
    "codec.latent_channels=4",
    "codec.hidden=16",
]


@pytest.fixture(autouse=True, scope="session")
def _offline():
    """Every test runs with outbound sockets disabled."""
    real = socket.socket.connect

    def guard(self, addr):
        if isinstance(addr, tuple) and addr[0] not in ("127.0.0.1", "localhost", "::1"):
            raise OSError(f"network access attempted: {addr}")
        return real(self, addr)

    socket.socket.connect = guard
    torch.set_num_threads(1)
    yield
    socket.socket.connect = real


@pytest.fixture
def tiny_preset():
    return load_config(overrides=TINY)


@pytest.fixture
def tiny_codec(tiny_preset):
    torch.manual_seed(0)
    return VideoCodec(tiny_preset.codec)


@pytest.fixture
def tiny_bundle(tiny_preset, tiny_codec):
    c = tiny_preset.train
    return new_bundle(tiny_preset.backbone, tiny_preset.lora, tiny_codec, "pose",
                      fps=c.fps, height=c.height, width=c.width, prediction=c.prediction,
                      layout=c.layout)


@pytest.fixture(scope="session")
def small_corpus():
    return make_corpus(3, seed=11, num_frames=17)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion that ran."""
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
