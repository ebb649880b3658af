"""End-to-end model contracts: shapes, ablation-flag semantics, gradient
routing and a float64 finite-difference check of the composite loss."""

import dataclasses

import numpy as np
import pytest
import torch

from tmca.config import AblationFlags, ModelConfig
from tmca.encoders import Vocabulary, tokenize
from tmca.model import Segmenter

TEXTS = [
    "one small circle region, located in top left",
    "one large square region, located in bottom right",
    "one medium triangle region, located in middle center",
]


def make_model(cfg=None, seed=0):
    torch.manual_seed(seed)
    cfg = cfg or ModelConfig()
    vocab = Vocabulary.build(TEXTS)
    return Segmenter(cfg, len(vocab)), vocab


def batch(vocab, cfg, b=2, seed=0):
    g = torch.Generator().manual_seed(seed)
    imgs = torch.rand(b, cfg.in_channels, cfg.image_size, cfg.image_size, generator=g)
    toks = [tokenize(TEXTS[i % len(TEXTS)], vocab, cfg.max_len) for i in range(b)]
    ids = torch.stack([t[0] for t in toks])
    valid = torch.stack([t[1] for t in toks])
    masks = (torch.rand(b, cfg.image_size, cfg.image_size, generator=g) > 0.85).float()
    return imgs, ids, valid, masks


def test_forward_shapes():
    cfg = ModelConfig()
    model, vocab = make_model(cfg)
    imgs, ids, valid, _ = batch(vocab, cfg, b=3)
    out = model(imgs, ids, valid)
    assert out.logits.shape == (3, 1, 64, 64)
    assert out.text is not None
    assert set(out.pyramid.levels) == {1, 2, 4, 8, 16, 32}


def test_losses_structure():
    cfg = ModelConfig()
    model, vocab = make_model(cfg)
    imgs, ids, valid, masks = batch(vocab, cfg)
    lb = model.losses(model(imgs, ids, valid), masks)
    assert lb.total.item() == pytest.approx(lb.seg.item() + lb.align.item(), abs=1e-5)
    assert set(lb.align_per_level) == {"8", "16", "32", "G"}


def test_text_off_output_invariant_to_prompt():
    cfg = ModelConfig(ablation=AblationFlags().with_tokens_off(["text"]))
    model, vocab = make_model(cfg)
    model.eval()
    imgs, ids, valid, _ = batch(vocab, cfg)
    other = torch.roll(ids, 1, dims=1)
    other_valid = torch.roll(valid, 1, dims=1)
    with torch.no_grad():
        a = model(imgs, ids, valid)
        b = model(imgs, other, other_valid)
    assert torch.equal(a.logits, b.logits)
    assert a.text is None


def test_full_model_output_depends_on_prompt():
    # the text residuals start zeroed, so nudge them off init first
    cfg = ModelConfig()
    model, vocab = make_model(cfg)
    g = torch.Generator().manual_seed(1)
    with torch.no_grad():
        for block in model.blocks:
            w = block.cross_attn.out_proj.weight
            w.add_(0.05 * torch.randn(w.shape, generator=g))
    model.eval()
    imgs, _, _, _ = batch(vocab, cfg)
    a_ids, a_valid = tokenize(TEXTS[0], vocab, cfg.max_len)
    b_ids, b_valid = tokenize(TEXTS[1], vocab, cfg.max_len)
    with torch.no_grad():
        a = model(imgs, a_ids.expand(2, -1), a_valid.expand(2, -1))
        b = model(imgs, b_ids.expand(2, -1), b_valid.expand(2, -1))
    assert not torch.equal(a.logits, b.logits)


def test_contrastive_off_zero_alignment_gradients():
    cfg = ModelConfig(ablation=AblationFlags().with_tokens_off(["ca"]))
    model, vocab = make_model(cfg)
    imgs, ids, valid, masks = batch(vocab, cfg)
    lb = model.losses(model(imgs, ids, valid), masks)
    lb.total.backward()
    for p in model.parameter_groups()["alignment_projections"]:
        assert p.grad is None or p.grad.abs().max().item() == 0.0
    assert lb.align.item() == 0.0


def test_ltem_off_zero_gate_gradients():
    cfg = ModelConfig(ablation=AblationFlags().with_tokens_off(["ltem"]))
    model, vocab = make_model(cfg)
    imgs, ids, valid, masks = batch(vocab, cfg)
    lb = model.losses(model(imgs, ids, valid), masks)
    lb.total.backward()
    for p in model.parameter_groups()["ltem_projections"]:
        assert p.grad is None or p.grad.abs().max().item() == 0.0


def test_active_groups_accumulate_gradient():
    cfg = ModelConfig()
    model, vocab = make_model(cfg)
    imgs, ids, valid, masks = batch(vocab, cfg)
    lb = model.losses(model(imgs, ids, valid), masks)
    lb.total.backward()
    groups = model.parameter_groups()
    for name in model.active_groups():
        got = any(p.grad is not None and p.grad.abs().sum() > 0 for p in groups[name])
        assert got, f"no gradient reached {name}"


def test_parameter_groups_partition_everything():
    model, _ = make_model()
    groups = model.parameter_groups()
    ids = [id(p) for ps in groups.values() for p in ps]
    assert len(ids) == len(set(ids))
    assert set(ids) == {id(p) for p in model.parameters()}


def test_determinism_same_seed_same_weights():
    a, _ = make_model(seed=7)
    b, _ = make_model(seed=7)
    for (ka, pa), (kb, pb) in zip(a.state_dict().items(), b.state_dict().items()):
        assert ka == kb
        assert torch.equal(pa, pb)


def test_mas_off_aligns_global_only():
    cfg = ModelConfig(ablation=AblationFlags().with_tokens_off(["mas"]))
    model, vocab = make_model(cfg)
    imgs, ids, valid, masks = batch(vocab, cfg)
    lb = model.losses(model(imgs, ids, valid), masks)
    assert set(lb.align_per_level) == {"G"}


def test_loss_gradient_matches_finite_differences():
    # float64 central differences on a few random parameters of every group
    cfg = ModelConfig(
        image_size=64,
        widths=(4, 8, 8, 8, 8, 8),
        global_dim=8,
        text_dim=8,
        attn_heads=2,
        max_len=12,
    )
    torch.manual_seed(0)
    vocab = Vocabulary.build(TEXTS)
    model = Segmenter(cfg, len(vocab)).double()
    imgs, ids, valid, masks = batch(vocab, cfg, b=3, seed=1)
    imgs = imgs.double()
    masks = masks.double()

    def loss_value():
        return model.losses(model(imgs, ids, valid), masks).total

    model.zero_grad()
    loss_value().backward()

    rng = np.random.default_rng(0)
    h = 1e-5
    checked = 0
    for name, group in model.parameter_groups().items():
        params = [p for p in group if p.grad is not None and p.grad.abs().max() > 1e-12]
        if not params:
            continue
        p = params[rng.integers(len(params))]
        flat_grad = p.grad.reshape(-1)
        idx = int(torch.argmax(p.grad.abs().reshape(-1)))
        with torch.no_grad():
            orig = p.reshape(-1)[idx].item()
            p.reshape(-1)[idx] = orig + h
            up = loss_value().item()
            p.reshape(-1)[idx] = orig - h
            down = loss_value().item()
            p.reshape(-1)[idx] = orig
        fd = (up - down) / (2 * h)
        an = flat_grad[idx].item()
        rel = abs(fd - an) / max(abs(fd), abs(an), 1e-8)
        assert rel < 1e-4, f"{name}: fd {fd} vs autograd {an} (rel {rel})"
        checked += 1
    assert checked >= 4
