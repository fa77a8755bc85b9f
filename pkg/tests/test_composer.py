import itertools
import time

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from icanim.composer import (
    assemble_model_input,
    build_masks,
    compose_context,
    mask_warmup_training,
    prepend_warmup_inference,
    warmup_frames,
)
from icanim.errors import ParameterError, ShapeError, WarmupError


def check_composer_invariants(T, H, W, rng):
    """Elementwise scans of every composite and mask invariant; returns nothing on success."""
    ref = rng.random((H, W, 3)).astype(np.float32)
    drv = rng.random((T, H, W, 3)).astype(np.float32)
    c = compose_context(ref, drv)
    assert c.frames.shape == (T, H, 2 * W, 3)
    assert np.array_equal(c.frames[0, :, :W], ref)
    assert np.array_equal(c.frames[:, :, W:], drv)
    left_rest = 0.0
    for t in range(1, T):
        for y in range(H):
            left_rest += float(np.abs(c.frames[t, y, :W]).sum())
    assert left_rest == 0.0
    m = build_masks(T, H, W).mask
    assert m.shape == (T, H, 2 * W, 1)
    assert set(np.unique(m)) <= {0.0, 1.0}
    count = 0
    for t, y, x in itertools.product(range(T), range(H), range(2 * W)):
        expect = 1.0 if (x >= W or t == 0) else 0.0
        assert m[t, y, x, 0] == expect
        count += int(m[t, y, x, 0])
    assert count == H * W * (T + 1) == int(m.sum())


def test_randomized_sweep_invariants():
    rng = np.random.default_rng(0)
    t0 = time.time()
    for T in (1, 5, 9, 49):
        for H, W in [(16, 16), (16, 64), (32, 32), (64, 16), (64, 64)]:
            # full per-element loop only on smaller shapes to bound runtime
            if T * H * W <= 9 * 32 * 32:
                check_composer_invariants(T, H, W, rng)
            else:
                ref = rng.random((H, W, 3))
                c = compose_context(ref, rng.random((T, H, W, 3)))
                assert c.frames[1:, :, :W].sum() == 0
                assert build_masks(T, H, W).mask.sum() == H * W * (T + 1)
    assert time.time() - t0 < 10


def test_compose_examples():
    ref = np.ones((64, 64, 3))
    c = compose_context(ref, np.zeros((8, 64, 64, 3)))
    assert c.frames.shape == (8, 64, 128, 3)
    assert np.array_equal(c.frames[0, :, :64], ref)
    one = compose_context(ref, np.full((1, 64, 64, 3), 0.5))
    assert one.frames.shape == (1, 64, 128, 3)
    with pytest.raises(ShapeError):
        compose_context(np.ones((32, 32, 3)), np.zeros((2, 64, 64, 3)))


def test_mask_examples():
    assert build_masks(4, 2, 3).mask.sum() == 30
    assert build_masks(1, 3, 3).mask.min() == 1.0
    mp = build_masks(5, 2, 2)
    col = mp.reference.mean(axis=(1, 2, 3))
    assert col.tolist() == [1.0, 0, 0, 0, 0]
    assert mp.motion.min() == 1.0
    with pytest.raises(ParameterError):
        build_masks(0, 2, 2)


def test_warmup_training():
    d = np.ones((24, 4, 4, 3))
    out = mask_warmup_training(d, 8)
    zeroed = [t for t in range(24) if not out[t].any()]
    assert zeroed == list(range(8))
    assert np.array_equal(out[8:], d[8:])
    with pytest.raises(WarmupError):
        mask_warmup_training(np.ones((8, 4, 4, 3)), 8)
    z = np.zeros((10, 2, 2, 3))
    assert np.array_equal(mask_warmup_training(z, 8), z)
    assert warmup_frames(7.5) == 8


def test_warmup_inference():
    d = np.random.default_rng(0).random((16, 4, 4, 3))
    out = prepend_warmup_inference(d, 8)
    assert len(out) == 24 and not out[:8].any()
    assert out[8:].tobytes() == d.tobytes()
    assert len(prepend_warmup_inference(np.ones((1, 2, 2, 3)), 1)) == 2


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.floats(0.5, 12.0))
def test_prepend_then_drop_is_identity(T, fps):
    d = np.random.default_rng(T).random((T, 3, 3, 3))
    out = prepend_warmup_inference(d, fps)
    assert np.array_equal(out[warmup_frames(fps):], d)


def test_assemble_model_input():
    z = torch.randn(1, 4, 3, 2, 4)
    n = torch.randn(1, 4, 3, 2, 4)
    m = torch.ones(1, 1, 3, 2, 4)
    inp = assemble_model_input(z, n, m)
    assert inp.latents.shape[1] == 9
    assert torch.equal(inp.latents[:, 0:4], z)
    assert torch.equal(inp.noise, n) and torch.equal(inp.mask, m)
    with pytest.raises(ShapeError):
        assemble_model_input(z, torch.randn(1, 4, 2, 2, 4), m)
