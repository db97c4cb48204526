import itertools

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from histlm import autodiff as ad
from histlm.corpus import Sentence, Token, Treebank
from histlm.lemmatizer import (EOS_ID, MAX_LEMMA_LEN, N_SENTINELS, PAD_ID, LemmaExample, LemmaFinetuneConfig,
                               Seq2SeqConfig, Seq2SeqPretrainConfig, Seq2SeqVocab, beam_decode, build_seq2seq,
                               finetune_lemma, greedy_decode, lemmatize_treebank, pretrain_seq2seq,
                               random_spans_noise_mask, read_lemma_tsv, running_text, seq2seq_from_checkpoint,
                               seq2seq_loss, seq2seq_manifest, span_corruption, splice, top_lemmas, upos_token,
                               write_lemma_tsv)
from histlm.synthetic import toy_treebank

SENTINELS = list(range(1000, 1000 + N_SENTINELS))


def tiny_model(vocab_size, seed, init=1.0):
    cfg = Seq2SeqConfig(vocab_size=vocab_size, hidden_size=8, intermediate_size=16, attention_heads=2,
                        enc_layers=1, dec_layers=1, initializer_range=init)
    return build_seq2seq(cfg, torch.Generator().manual_seed(seed), torch.float64)


def teacher_forced_log_prob(model, source, hyp):
    """Score a whole hypothesis with one teacher-forced forward pass."""
    with torch.no_grad():
        logits = model(torch.tensor([list(source)]), torch.tensor([list(hyp)]))[0]
    lp = torch.log_softmax(logits, -1)
    return float(sum(lp[t, tok] for t, tok in enumerate(hyp)))


def all_sequences(vocab_size, max_len, eos=EOS_ID):
    """Every complete output: stops at the first EOS or at max_len."""
    out = []
    for n in range(1, max_len + 1):
        for seq in itertools.product(range(vocab_size), repeat=n):
            if eos in seq[:-1]:
                continue
            if seq[-1] == eos or n == max_len:
                out.append(seq)
    return out


# -- vocabulary and examples -------------------------------------------------

def test_vocab_layout():
    v = Seq2SeqVocab("ba")
    assert v.itos[:3] == ["[PAD]", "[UNK]", "[EOS]"]
    assert v.chars == [" ", "a", "b"]
    assert v.itos[v.upos_id("VERB")] == upos_token("VERB")
    assert v.itos[v.upos_id("NOPE")] == upos_token("X")
    assert len(v.sentinel_ids) == N_SENTINELS
    assert v.decode(v.encode("ab") + [EOS_ID] + v.encode("b")) == "ab"
    assert Seq2SeqVocab.from_entries(v.itos) == v


def test_lemma_example_encoding():
    v = Seq2SeqVocab("amot")
    ex = LemmaExample.build(v, "amat", "VERB", "amo")
    assert ex.source == (v.upos_id("VERB"), *v.encode("amat"), EOS_ID)
    assert ex.target == (*v.encode("amo"), EOS_ID)
    long = LemmaExample.build(v, "a", "NOUN", "a" * 50)
    assert len(long.target) == MAX_LEMMA_LEN and long.target[-1] == EOS_ID


def test_homographs_are_distinct_sources():
    v = Seq2SeqVocab("cum")
    assert LemmaExample.build(v, "cum", "ADP").source != LemmaExample.build(v, "cum", "SCONJ").source


# -- span corruption ---------------------------------------------------------

@given(st.lists(st.integers(3, 50), min_size=2, max_size=200), st.integers(0, 10_000),
       st.sampled_from([0.15, 0.3, 0.5]))
def test_span_corruption_round_trip(ids, seed, density):
    sc = span_corruption(ids, np.random.default_rng(seed), SENTINELS, density)
    assert splice(sc.inputs, sc.targets, SENTINELS) == ids
    used = [t for t in sc.inputs if t in SENTINELS]
    assert used == SENTINELS[:len(used)]  # unique, in order


def test_zero_density_leaves_input():
    ids = list(range(3, 40))
    sc = span_corruption(ids, np.random.default_rng(0), SENTINELS, noise_density=0.0)
    assert list(sc.inputs) == ids and sc.targets == ()


def test_hundred_tokens_fifteen_in_five_spans():
    for seed in range(20):
        mask = random_spans_noise_mask(100, np.random.default_rng(seed))
        starts = int(mask[0]) + int(np.sum(mask[1:] & ~mask[:-1]))
        assert mask.sum() == 15 and starts == 5


def test_short_sequences_skipped():
    assert span_corruption([5], np.random.default_rng(0), SENTINELS) is None


def test_running_text_joins_forms():
    tb = toy_treebank(2)
    v = Seq2SeqVocab.from_treebank(tb)
    texts = running_text(tb, v)
    assert v.decode(texts[0]) == " ".join(t.form for t in tb.sentences[0].tokens)


# -- model -------------------------------------------------------------------

def test_decoder_is_causal():
    m = tiny_model(8, 0)
    src = torch.tensor([[3, 4, 5]])
    a = torch.tensor([[3, 4, 5, 6, 7]])
    b = a.clone()
    b[0, 3:] = torch.tensor([7, 3])
    with torch.no_grad():
        la, lb = m(src, a), m(src, b)
    # decoder input is shifted right, so position t sees targets < t
    assert torch.equal(la[0, :4], lb[0, :4])
    assert not torch.allclose(la[0, 4], lb[0, 4])


def test_loss_ignores_padding():
    m = tiny_model(8, 0)
    full = seq2seq_loss(m, [[3, 4]], [[5, EOS_ID]])
    padded = seq2seq_loss(m, [[3, 4], [3, 4]], [[5, EOS_ID], [5, 6, EOS_ID]])
    assert not torch.isclose(full, padded)
    with torch.no_grad():
        logits = m(torch.tensor([[3, 4]]), torch.tensor([[5, EOS_ID, PAD_ID]]))
    manual = torch.nn.functional.cross_entropy(logits[0, :2], torch.tensor([5, EOS_ID]))
    assert full.item() == pytest.approx(manual.item(), rel=1e-12)


def test_layer_counts_must_match():
    with pytest.raises(ValueError):
        Seq2SeqConfig(enc_layers=2, dec_layers=3)
    assert Seq2SeqConfig.t5_base().enc_layers == 12


# -- decoding ----------------------------------------------------------------

@pytest.mark.parametrize("seed", range(10))
def test_width_one_is_greedy(seed):
    m = tiny_model(6, seed)
    src = [3, 4, 5, 3]
    (hyp, score), = beam_decode(m, src, 1, max_len=6)
    g_hyp, g_score = greedy_decode(m, src, max_len=6)
    assert hyp == g_hyp and score == pytest.approx(g_score, abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_scores_sorted_and_consistent(seed):
    m = tiny_model(6, seed)
    out = beam_decode(m, [3, 4, 5], 6, max_len=5)
    scores = [s for _, s in out]
    assert scores == sorted(scores, reverse=True) and len(out) <= 6
    for hyp, s in out:
        assert s == pytest.approx(teacher_forced_log_prob(m, [3, 4, 5], hyp), abs=1e-9)
        assert hyp[-1] == EOS_ID or len(hyp) == 5


@pytest.mark.parametrize("seed", range(5))
def test_exhaustive_width_is_exact(seed):
    m = tiny_model(5, seed)
    seqs = all_sequences(5, 3)
    src = [3, 4]
    best = max(teacher_forced_log_prob(m, src, s) for s in seqs)
    full = beam_decode(m, src, len(seqs), max_len=3)
    assert len(full) == len(seqs)
    assert full[0][1] == pytest.approx(best, abs=1e-9)
    # every narrower beam is bounded by the exact optimum
    for w in range(1, 6):
        assert beam_decode(m, src, w, max_len=3)[0][1] <= best + 1e-9


def test_widening_can_lower_top1():
    """Standard beam search is not monotone in width: here width 2 prunes the prefix
    that width 1 follows to a better finished hypothesis."""
    g = torch.Generator().manual_seed(10)
    m = build_seq2seq(Seq2SeqConfig(vocab_size=6, hidden_size=8, intermediate_size=16, attention_heads=2,
                                    enc_layers=1, dec_layers=1, initializer_range=1.0), g, torch.float64)
    src = torch.randint(3, 6, (4,), generator=g).tolist()
    w1 = beam_decode(m, src, 1, max_len=6)[0][1]
    w2 = beam_decode(m, src, 2, max_len=6)[0][1]
    assert w2 < w1


def test_restricted_output_vocabulary():
    v = Seq2SeqVocab("ab")
    m = tiny_model(v.size, 0)
    for hyp, _ in beam_decode(m, [v.upos_id("NOUN"), *v.encode("ab"), EOS_ID], 4, max_len=5, vocab=v):
        assert set(hyp) <= set(v.output_ids())


def test_width_must_be_positive():
    with pytest.raises(ValueError):
        beam_decode(tiny_model(5, 0), [3], 0)


# -- treebank-level output ---------------------------------------------------

def test_top_lemmas_deduplicated():
    v = Seq2SeqVocab("ab")
    m = tiny_model(v.size, 1)
    p = top_lemmas(m, v, "ab", "NOUN", width=10)
    assert len(p.candidates) <= 3 and len(set(p.candidates)) == len(p.candidates)
    assert list(p.scores) == sorted(p.scores, reverse=True)


def test_lemmatize_requires_upos_and_writes_tsv(tmp_path):
    v = Seq2SeqVocab("ab")
    m = tiny_model(v.size, 1)
    tb = Treebank("toy", "test", [Sentence("s1", [Token("ab", upos="NOUN"), Token("ba", upos="VERB"),
                                                  Token("ab", upos="NOUN")])])
    preds = lemmatize_treebank(m, v, tb, width=4)
    assert preds[0][0] == preds[0][2]  # depends only on (form, UPoS)
    write_lemma_tsv(tb, preds, tmp_path / "l.tsv")
    assert read_lemma_tsv(tmp_path / "l.tsv") == [list(p.candidates) for p in preds[0]]
    bare = Treebank("toy", "test", [Sentence("s1", [Token("ab")])])
    with pytest.raises(ValueError, match="UPoS"):
        lemmatize_treebank(m, v, bare)


# -- training ----------------------------------------------------------------

def test_pretrain_schedule_and_determinism(tmp_path):
    tb = toy_treebank(2)
    v = Seq2SeqVocab.from_treebank(tb)
    mc = Seq2SeqConfig(hidden_size=8, intermediate_size=16, attention_heads=2, enc_layers=1, dec_layers=1)
    cfg = Seq2SeqPretrainConfig(epochs=600, batch_size=2, lr=1e-3, warmup_steps=100, model=mc)
    a = pretrain_seq2seq(tb, v, cfg)
    lrs = [r["lr"] for r in a.log]
    assert len(lrs) == 600
    assert lrs[99] == pytest.approx(1e-3) and max(lrs) == pytest.approx(1e-3)
    assert lrs[-1] == pytest.approx(0.0, abs=1e-12)
    b = pretrain_seq2seq(tb, v, cfg)
    assert [r["loss"] for r in a.log] == [r["loss"] for r in b.log]
    digest = ad.save_checkpoint(tmp_path / "s.ckpt", ad.state_arrays(a.model), seq2seq_manifest(a.model, v))
    assert digest == ad.save_checkpoint(tmp_path / "t.ckpt", ad.state_arrays(b.model), seq2seq_manifest(b.model, v))
    back, v2 = seq2seq_from_checkpoint(*ad.load_checkpoint(tmp_path / "s.ckpt"))
    assert v2 == v and greedy_decode(back, [3, 4]) == greedy_decode(a.model, [3, 4])


def test_finetune_can_separate_homographs():
    v = Seq2SeqVocab("abc")
    m = tiny_model(v.size, 0, init=0.2)
    pairs = [("ab", "NOUN", "a"), ("ab", "VERB", "c")]
    train = [LemmaExample.build(v, f, u, l) for f, u, l in pairs]
    valid = list(zip(train, [l for _, _, l in pairs]))
    res = finetune_lemma(m, v, train, valid, LemmaFinetuneConfig(lr=1e-2, batch_size=2, max_epochs=60,
                                                                 patience=60, eval_beam_width=1))
    assert [v.decode(greedy_decode(res.model, e.source, vocab=v)[0]) for e in train] == ["a", "c"]
