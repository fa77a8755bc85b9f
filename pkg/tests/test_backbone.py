import hashlib

import numpy as np
import pytest
import torch

from icanim.backbone import (
    BackboneConfig,
    LoRAConfig,
    VideoDiT,
    apply_lora,
    load_checkpoint,
    lora_parameter_count,
    save_checkpoint,
    trainable_parameters,
    warm_start,
)
from icanim.backbone.lora import lora_state_dict
from icanim.backbone.text import PAD_ID, ByteTextEncoder
from icanim.errors import CheckpointError, ParameterError, ShapeError, StateError

SMALL = BackboneConfig(depth=2, model_dim=32, heads=2, latent_channels=4, text_dim=16)


def _inputs(cfg, T=2, H=4, W=8, seed=0, dtype=torch.float32):
    g = torch.Generator().manual_seed(seed)
    return torch.randn(1, cfg.in_channels, T, H, W, generator=g, dtype=dtype)


def _hash(t: torch.Tensor) -> str:
    return hashlib.sha256(t.detach().contiguous().numpy().tobytes()).hexdigest()


def test_patchify_token_count_and_round_trip():
    m = VideoDiT(BackboneConfig(latent_channels=4))
    x = torch.randn(1, 9, 4, 8, 16)
    tokens, grid = m.patchify(x)
    assert tokens.shape[1] == 4 * 4 * 8 == 128
    assert torch.equal(m.unpatchify(tokens, grid), x)
    m1 = VideoDiT(BackboneConfig(latent_channels=4, patch=(1, 1, 1), depth=1))
    assert m1.patchify(x)[0].shape[1] == 4 * 8 * 16
    with pytest.raises(ShapeError):
        m.patchify(torch.randn(1, 9, 4, 7, 16))


def test_forward_shape_finite_and_text_sensitive():
    m = VideoDiT(SMALL).eval()
    text = m.embed_text(["a red stick figure, is waving its arm"])
    t = torch.tensor([0.4])
    with torch.no_grad():
        z = m(torch.zeros(1, 9, 2, 4, 8), m.embed_text([""]), t)
        assert z.shape == (1, 4, 2, 4, 8) and torch.isfinite(z).all()
        x = _inputs(SMALL)
        a = m(x, text, t)
        b = m(x, m.embed_text(["a blue stick figure, is bouncing up and down"]), t)
    assert (a - b).abs().max() > 1e-4


def test_token_order_matters():
    cfg = BackboneConfig(depth=1, model_dim=32, heads=2, latent_channels=4, patch=(1, 1, 1))
    m = VideoDiT(cfg).eval()
    x = _inputs(cfg, T=1, H=2, W=4)
    perm = torch.randperm(4, generator=torch.Generator().manual_seed(0))
    while torch.equal(perm, torch.arange(4)):
        perm = torch.randperm(4)
    text = m.embed_text(["x"])
    with torch.no_grad():
        a = m(x, text, torch.tensor([0.5]))
        b = m(x[..., perm], text, torch.tensor([0.5]))
    inv = torch.argsort(perm)
    assert not torch.allclose(a, b[..., inv])


def test_finite_difference_gradient_depth1_dim8():
    cfg = BackboneConfig(depth=1, model_dim=8, heads=2, ffn_mult=2, latent_channels=2, text_dim=4)
    m = VideoDiT(cfg).double().eval()
    m.text_encoder.table.weight.data = m.text_encoder.table.weight.data.double()
    text = m.embed_text(["hi"])
    text.embeddings = text.embeddings.double()
    t = torch.tensor([0.3], dtype=torch.float64)
    x = _inputs(cfg, T=1, H=2, W=4, dtype=torch.float64)
    w = torch.randn(1, 2, 1, 2, 4, dtype=torch.float64, generator=torch.Generator().manual_seed(1))

    def f(inp):
        return (m(inp, text, t) * w).sum()

    x.requires_grad_(True)
    (g,) = torch.autograd.grad(f(x), x)
    h = 1e-6
    fd = torch.zeros_like(x)
    flat = x.detach().clone().reshape(-1)
    for i in range(flat.numel()):
        p, q = flat.clone(), flat.clone()
        p[i] += h
        q[i] -= h
        fd.view(-1)[i] = (f(p.view_as(x)) - f(q.view_as(x))) / (2 * h)
    rel = (fd - g).norm() / g.norm()
    assert rel < 1e-3
    big = g.abs() > 1e-3 * g.abs().max()
    assert torch.all((fd[big] - g[big]).abs() <= 1e-3 * g[big].abs())


def test_lora_parameter_count_oracle():
    assert lora_parameter_count(32, 128, 4) == 2 * (4 * 32 + 128 * 4) == 1280
    cfg = BackboneConfig(depth=3, model_dim=32, heads=2, ffn_mult=4, latent_channels=4)
    m = apply_lora(VideoDiT(cfg), LoRAConfig(rank=4))
    n = sum(p.numel() for p in trainable_parameters(m))
    assert n == 3 * 1280  # one adapted FFN pair per block, video stream only


def test_lora_zero_init_identity_exact():
    m = VideoDiT(SMALL).eval()
    x = _inputs(SMALL)
    text = m.embed_text(["abc"])
    with torch.no_grad():
        before = m(x, text, torch.tensor([0.7]))
        apply_lora(m, LoRAConfig(rank=4))
        m.eval()
        after = m(x, text, torch.tensor([0.7]))
    assert torch.equal(before, after)


def test_lora_targets_and_state_errors():
    m = VideoDiT(SMALL)
    with pytest.raises(StateError):
        trainable_parameters(m)
    apply_lora(m, LoRAConfig(rank=2))
    names = {n for n, p in m.named_parameters() if p.requires_grad}
    assert names and all(".lora_" in n and ".video." in n and ".ffn." in n for n in names)
    assert not any(".text." in n or "text_encoder" in n for n in names)
    with pytest.raises(StateError):
        apply_lora(m, LoRAConfig(rank=2))
    with pytest.raises(ParameterError):
        LoRAConfig(rank=0)
    with pytest.raises(ParameterError):
        LoRAConfig(target="attn")


def test_optimizer_step_leaves_frozen_bits_unchanged():
    m = apply_lora(VideoDiT(SMALL), LoRAConfig(rank=4))
    frozen = {n: _hash(p) for n, p in m.named_parameters() if not p.requires_grad}
    buffers = {n: _hash(b) for n, b in m.named_buffers()}
    opt = torch.optim.AdamW(trainable_parameters(m), lr=1e-2, weight_decay=0.01)
    text = m.embed_text(["x"])
    for s in range(3):
        loss = m(_inputs(SMALL, seed=s), text, torch.tensor([0.5])).pow(2).mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
    for n, p in m.named_parameters():
        if not p.requires_grad:
            assert p.grad is None or not p.grad.any()
            assert _hash(p) == frozen[n], n
    assert {n: _hash(b) for n, b in m.named_buffers()} == buffers
    assert any(p.abs().sum() > 0 for n, p in m.named_parameters() if "lora_B" in n)


def test_text_encoder_contract():
    enc = ByteTextEncoder(8, max_len=10)
    e = enc([""])
    assert e.ids.tolist() == [[PAD_ID]]
    assert torch.equal(enc(["abc"]).embeddings, enc(["abc"]).embeddings)
    long = enc(["x" * 50])
    assert long.ids.shape[1] == 10
    corpus = [f"a {c} stick figure, is {m}" for c in ("red", "blue", "green", "cyan")
              for m in ("waving its arm", "walking in place", "bouncing up and down")]
    full = ByteTextEncoder(8)
    seqs = {tuple(full([s]).ids[0].tolist()) for s in corpus}
    assert len(seqs) == len(corpus)


def test_checkpoint_round_trip_and_stage_tags(tmp_path, tiny_bundle):
    torch.manual_seed(0)
    for p in trainable_parameters(tiny_bundle.model):
        p.data.normal_()
    save_checkpoint(tiny_bundle, tmp_path / "ck")
    back = load_checkpoint(tmp_path / "ck", expect_stage="pose")
    for (n, a), (_, b) in zip(tiny_bundle.model.state_dict().items(), back.model.state_dict().items()):
        assert torch.equal(a, b), n
    with pytest.raises(CheckpointError, match="stage"):
        load_checkpoint(tmp_path / "ck", expect_stage="e2e")
    ws = warm_start(tmp_path / "ck", tmp_path / "e2e")
    assert ws.stage == "e2e"
    for k, v in lora_state_dict(tiny_bundle.model).items():
        assert torch.equal(v, lora_state_dict(ws.model)[k])
    assert (tmp_path / "e2e" / "base.bin").read_bytes() == (tmp_path / "ck" / "base.bin").read_bytes()
    # adapters bound to a different base are refused
    raw = bytearray((tmp_path / "ck" / "base.bin").read_bytes())
    raw[-1] ^= 1
    (tmp_path / "ck" / "base.bin").write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="different base"):
        load_checkpoint(tmp_path / "ck")
    with pytest.raises(CheckpointError, match="missing"):
        load_checkpoint(tmp_path / "nothing")


def test_warm_start_rejects_e2e(tmp_path, tiny_bundle):
    tiny_bundle.stage = "e2e"
    save_checkpoint(tiny_bundle, tmp_path / "ck")
    with pytest.raises(CheckpointError):
        warm_start(tmp_path / "ck", tmp_path / "out")


def test_backbone_config_validation():
    with pytest.raises(ValueError):
        BackboneConfig(model_dim=30, heads=4)
    with pytest.raises(ValueError):
        BackboneConfig(depth=0)
    assert BackboneConfig.from_dict(SMALL.to_dict()) == SMALL
    assert np.isclose(LoRAConfig(rank=4, alpha=8).scaling, 2.0)
