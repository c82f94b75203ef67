import numpy as np
import pytest

from finealign import checkpoint as ckpt
from finealign import labels as LB
from finealign import tensor as T
from finealign.mining import mine_triplets, segments_from_reports
from finealign.text_encoder import BOS, EOS, PAD, UNK, TextEncoder, TfrConfig, Vocabulary, encode_text, \
    load_text_refiner, refine_tokens, save_text_refiner, train_text_refiner, with_bos

REPORTS = [
    "the heart size is enlarged. no pleural effusion.",
    "heart size remains enlarged. there is a small left pleural effusion.",
    "the heart size is normal. there is a small left pleural effusion.",
    "no acute findings.",
]


def test_vocabulary_specials_and_round_trip():
    v = Vocabulary.from_texts(REPORTS)
    assert v.itos[:4] == ["<bos>", "<eos>", "<pad>", "<unk>"]
    assert (BOS, EOS, PAD, UNK) == (0, 1, 2, 3)
    ids = v.encode(REPORTS[0])
    assert v.decode_text(ids + [EOS, 7]) == REPORTS[0]
    assert v.encode("zebra") == [UNK, v.stoi["."]]
    assert Vocabulary(v.to_list()).itos == v.itos


def test_encoder_shapes_and_embedding_range():
    v = Vocabulary.from_texts(REPORTS)
    enc = TextEncoder(len(v), TfrConfig(d=8, n_heads=2, depth=1, d_embed=5), np.random.default_rng(0))
    states, fx = encode_text(with_bos(v, REPORTS[0]), enc)
    assert states.shape == (len(v.encode(REPORTS[0])) + 1, 8)
    assert fx.shape == (5,)
    assert np.all((fx.data > 0) & (fx.data < 1))
    with pytest.raises(ValueError):
        enc.states([])
    with pytest.raises(ValueError):
        enc.states([BOS] * 100)


def test_causal_states_ignore_future_tokens():
    v = Vocabulary.from_texts(REPORTS)
    enc = TextEncoder(len(v), TfrConfig(d=8, n_heads=2, depth=2), np.random.default_rng(1))
    ids = with_bos(v, REPORTS[1])
    full = refine_tokens(ids, enc).data
    for t in range(1, len(ids)):
        np.testing.assert_allclose(refine_tokens(ids[:t], enc).data, full[:t], atol=1e-12)
    assert not refine_tokens(ids, enc).requires_grad


def test_phase1_training_reduces_loss_and_checkpoints(tmp_path):
    segs = segments_from_reports(REPORTS)
    trips = mine_triplets(segs)
    cfg = TfrConfig(d=8, n_heads=2, depth=1, d_embed=4, steps=40, lr=0.1)
    reports = [(r, LB.merge([s.labels for s in segs if s.id.startswith(f"r{i}.")])) for i, r in enumerate(REPORTS)]
    enc, vocab, curve = train_text_refiner(segs, trips, cfg, reports=reports)
    assert len(curve) == cfg.steps + 1
    assert curve[-1][1] < curve[0][1]
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    save_text_refiner(p1, enc, vocab, curve)
    enc2, vocab2, doc = load_text_refiner(p1)
    assert vocab2.itos == vocab.itos
    assert ckpt.params_hash(enc2.state_dict()) == doc["text_encoder_hash"] == ckpt.params_hash(enc.state_dict())
    save_text_refiner(p2, enc2, vocab2, [tuple(c) for c in doc["curve"]])
    assert p1.read_bytes() == p2.read_bytes()


def test_phase1_is_deterministic():
    segs = segments_from_reports(REPORTS)
    trips = mine_triplets(segs)
    cfg = TfrConfig(d=8, n_heads=2, depth=1, d_embed=4, steps=3)
    a = train_text_refiner(segs, trips, cfg)
    b = train_text_refiner(segs, trips, cfg)
    assert a[2] == b[2]
    assert ckpt.params_hash(a[0].state_dict()) == ckpt.params_hash(b[0].state_dict())


def test_phase1_needs_triplets():
    segs = segments_from_reports(REPORTS)
    with pytest.raises(ValueError):
        train_text_refiner(segs, [], TfrConfig(steps=1))


def test_freeze_excludes_parameters():
    enc = TextEncoder(10, TfrConfig(d=8, n_heads=2, depth=1), np.random.default_rng(0))
    enc.freeze()
    assert all(not p.requires_grad for p in enc.parameters())
    _, fx = encode_text([0, 4, 5], enc)
    assert not fx.requires_grad
    assert T.backward(T.reduce_sum(fx)) == []
