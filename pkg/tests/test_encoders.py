"""Vocabulary/tokenizer behavior and the image/text encoder contracts."""

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from tmca.config import ConfigError, ModelConfig
from tmca.encoders import (
    PAD_ID,
    UNK_ID,
    ImagePyramidEncoder,
    TextEncoder,
    Vocabulary,
    build_encoders,
    split_words,
    tokenize,
)

TEXTS = [
    "one small circle region, located in top left",
    "one large square region, located in bottom right",
    "one medium triangle region, located in middle center",
]


@pytest.fixture(scope="module")
def vocab():
    return Vocabulary.build(TEXTS)


def test_vocab_reserves_pad_and_unk(vocab):
    assert vocab.token_to_id["<pad>"] == PAD_ID
    assert vocab.token_to_id["<unk>"] == UNK_ID
    assert len(vocab) == len(set(w for t in TEXTS for w in split_words(t))) + 2


def test_vocab_ids_contiguous(vocab):
    ids = sorted(vocab.token_to_id.values())
    assert ids == list(range(len(vocab)))


def test_vocab_round_trip(tmp_path, vocab):
    path = tmp_path / "vocab.json"
    vocab.to_json(path)
    again = Vocabulary.from_json(path)
    assert again.token_to_id == vocab.token_to_id


def test_split_words_lowercases_and_strips_punctuation():
    assert split_words("One SMALL circle, located in top-left!") == [
        "one", "small", "circle", "located", "in", "top", "left",
    ]


def test_tokenize_known_sentence(vocab):
    ids, valid = tokenize(TEXTS[0], vocab, max_len=12)
    n = len(split_words(TEXTS[0]))
    assert ids.shape == (12,) and valid.shape == (12,)
    assert valid[:n].all() and not valid[n:].any()
    assert (ids[n:] == PAD_ID).all()
    assert (ids[:n] != PAD_ID).all()


def test_tokenize_unknown_words_map_to_unk(vocab):
    ids, valid = tokenize("one tiny hexagon region", vocab, max_len=8)
    words = split_words("one tiny hexagon region")
    for k, w in enumerate(words):
        expected = vocab.token_to_id.get(w, UNK_ID)
        assert ids[k].item() == expected
    assert ids[1].item() == UNK_ID  # "tiny" is out-of-vocabulary


def test_tokenize_truncates_to_max_len(vocab):
    long = " ".join(["circle"] * 50)
    ids, valid = tokenize(long, vocab, max_len=8)
    assert ids.shape == (8,)
    assert valid.all()


@given(st.text(alphabet=st.characters(whitelist_categories=("Ll", "Nd", "Zs", "Po")), max_size=60))
@settings(max_examples=50, deadline=None)
def test_tokenize_total_on_arbitrary_text(vocab, s):
    ids, valid = tokenize(s, vocab, max_len=16)
    assert ids.shape == (16,)
    assert int(valid.sum()) == min(len(split_words(s)), 16)
    assert (ids >= 0).all() and (ids < len(vocab)).all()


def test_image_encoder_level_shapes():
    cfg = ModelConfig()
    enc = ImagePyramidEncoder(cfg.in_channels, cfg.widths, cfg.global_dim)
    x = torch.rand(2, 1, 64, 64)
    pyr = enc(x)
    # strides 1/2/4 are decoder skips; 8/16/32 also feed alignment
    assert set(pyr.levels) == {1, 2, 4, 8, 16, 32}
    for stride in (1, 2, 4, 8, 16, 32):
        side = 64 // stride
        assert pyr.levels[stride].shape == (2, cfg.width_at(stride), side, side)
    assert pyr.global_vec.shape == (2, cfg.global_dim)


def test_image_encoder_rejects_unpadded_input():
    cfg = ModelConfig()
    enc = ImagePyramidEncoder(cfg.in_channels, cfg.widths, cfg.global_dim)
    with pytest.raises(ValueError):
        enc(torch.rand(1, 1, 60, 60))


def test_image_encoder_batch_independence():
    # GroupNorm only: one sample's features must not depend on batch mates
    torch.manual_seed(0)
    cfg = ModelConfig()
    enc = ImagePyramidEncoder(cfg.in_channels, cfg.widths, cfg.global_dim).eval()
    x = torch.rand(3, 1, 64, 64, generator=torch.Generator().manual_seed(4))
    with torch.no_grad():
        full = enc(x)
        solo = enc(x[:1])
    # 1e-4: conv kernels reassociate float sums across batch blockings
    assert torch.allclose(full.levels[8][:1], solo.levels[8], atol=1e-4)
    assert torch.allclose(full.global_vec[:1], solo.global_vec, atol=1e-4)


def test_text_encoder_shapes_and_masking(vocab):
    torch.manual_seed(0)
    enc = TextEncoder(len(vocab), dim=32, n_layers=3, heads=4, max_len=16)
    ids, valid = tokenize(TEXTS[0], vocab, max_len=16)
    out = enc(ids.unsqueeze(0), valid.unsqueeze(0))
    assert out.words.shape == (1, 16, 32)
    assert out.global_vec.shape == (1, 32)
    # padded positions are zeroed in the word features
    assert out.words[0, ~valid].abs().max().item() == 0.0


def test_text_encoder_padding_invariance(vocab):
    # extending the pad tail must not change word features or the global vector
    torch.manual_seed(0)
    enc = TextEncoder(len(vocab), dim=32, n_layers=3, heads=4, max_len=24).eval()
    short_ids, short_valid = tokenize(TEXTS[1], vocab, max_len=10)
    long_ids = torch.zeros(24, dtype=torch.long)
    long_ids[:10] = short_ids
    long_valid = torch.zeros(24, dtype=torch.bool)
    long_valid[:10] = short_valid
    with torch.no_grad():
        a = enc(short_ids.unsqueeze(0), short_valid.unsqueeze(0))
        b = enc(long_ids.unsqueeze(0), long_valid.unsqueeze(0))
    n = int(short_valid.sum())
    assert torch.allclose(a.words[0, :n], b.words[0, :n], atol=1e-5)
    assert torch.allclose(a.global_vec, b.global_vec, atol=1e-5)


def test_text_encoder_requires_three_layers():
    with pytest.raises(ConfigError):
        TextEncoder(10, dim=32, n_layers=2, heads=4, max_len=8)


def test_text_encoder_rejects_all_padding(vocab):
    enc = TextEncoder(len(vocab), dim=32, n_layers=3, heads=4, max_len=8)
    ids = torch.zeros(1, 8, dtype=torch.long)
    valid = torch.zeros(1, 8, dtype=torch.bool)
    with pytest.raises(ValueError):
        enc(ids, valid)


def test_global_vec_is_masked_mean(vocab):
    torch.manual_seed(1)
    enc = TextEncoder(len(vocab), dim=32, n_layers=3, heads=4, max_len=12).eval()
    ids, valid = tokenize(TEXTS[2], vocab, max_len=12)
    with torch.no_grad():
        out = enc(ids.unsqueeze(0), valid.unsqueeze(0))
    n = int(valid.sum())
    manual = out.words[0, :n].mean(dim=0)
    assert torch.allclose(out.global_vec[0], manual, atol=1e-6)


def test_build_encoders_uses_config_dims():
    cfg = ModelConfig(text_dim=32, global_dim=32)
    img_enc, txt_enc = build_encoders(cfg, vocab_size=20)
    pyr = img_enc(torch.rand(1, 1, 64, 64))
    assert pyr.global_vec.shape[-1] == 32
    ids = torch.full((1, cfg.max_len), PAD_ID, dtype=torch.long)
    ids[0, :3] = torch.tensor([2, 3, 4])
    valid = ids != PAD_ID
    out = txt_enc(ids, valid)
    assert out.words.shape == (1, cfg.max_len, 32)
