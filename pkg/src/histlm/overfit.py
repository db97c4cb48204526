"""Capacity and determinism check at toy scale.

Pre-trains a small HLM with RTD on a fixed synthetic corpus, fine-tunes PoS and morph
taggers on the same corpus and fits the lemmatizer to 50 (form, UPoS, lemma) triples.
Every stage reports its training-set accuracy and the sha256 of its checkpoint bytes.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field

import numpy as np

from histlm import autodiff as ad
from histlm.charvocab import build_vocab
from histlm.hlm import HlmConfig, encoder_manifest
from histlm.lemmatizer import (LemmaExample, LemmaFinetuneConfig, Seq2SeqConfig, Seq2SeqPretrainConfig, Seq2SeqVocab,
                               finetune_lemma, pretrain_seq2seq, seq2seq_manifest, top_lemmas)
from histlm.metrics import lemma_score
from histlm.pretrain import PretrainConfig, encode_corpus, evaluate_rtd, pretrain
from histlm.synthetic import toy_lemma_triples, toy_treebank
from histlm.taggers import FinetuneConfig, finetune, predict_tags, tagger_manifest

# Small-vocabulary corpus with long sentences: agreement between subject and verb is
# the only signal that separates plausible from implausible replacements.
CORPUS = dict(n_sentences=10, seed=0, noun_stems=3, verb_stems=2, clauses=(24, 30))

_COMMON = dict(hidden_size=32, attention_heads=4, intra_intermediate_size=64, inter_intermediate_size=64,
               dropout=0.0, initializer_range=0.2)


def rtd_config(seed=0) -> PretrainConfig:
    return PretrainConfig(epochs=30, batch_size=1, lr=3e-3, schedule="constant", warmup_proportion=0.1,
                          optimizer="adam", weight_decay=0.01, seed=seed,
                          generator=HlmConfig(0, intra_layers=2, inter_layers=2, **_COMMON),
                          discriminator=HlmConfig(0, intra_layers=3, inter_layers=3, **_COMMON))


def tagger_config(task, seed=0) -> FinetuneConfig:
    return FinetuneConfig(task=task, lr=3e-3, batch_size=2, max_epochs=40, patience=40, seed=seed)


def seq2seq_config(seed=0) -> Seq2SeqPretrainConfig:
    model = Seq2SeqConfig(hidden_size=32, intermediate_size=64, attention_heads=4, enc_layers=2, dec_layers=2,
                          initializer_range=0.2)
    return Seq2SeqPretrainConfig(epochs=20, batch_size=1, lr=3e-3, warmup_steps=20, optimizer="adamw",
                                 seed=seed, model=model)


def lemma_config(seed=0) -> LemmaFinetuneConfig:
    return LemmaFinetuneConfig(lr=3e-3, max_epochs=40, patience=40, eval_beam_width=1, seed=seed)


@dataclass
class OverfitReport:
    rtd_accuracy: float  # mean over RTD_EVAL_SEEDS fresh masking passes
    pos_accuracy: float
    morph_accuracy: float
    lemma_accuracy: float  # acc@1 of the width-20 beam
    digests: dict[str, str] = field(default_factory=dict)
    seconds: dict[str, float] = field(default_factory=dict)


RTD_EVAL_SEEDS = (0, 1, 2)


def _digest(module, manifest) -> str:
    return hashlib.sha256(ad.checkpoint_bytes(ad.state_arrays(module), manifest)).hexdigest()


def run_overfit_suite(seed: int = 0, log=None) -> OverfitReport:
    say = log or (lambda *_: None)
    clock = time.perf_counter
    seconds, digests = {}, {}
    tb = toy_treebank(**CORPUS)
    vocab = build_vocab(tb)

    t = clock()
    res = pretrain(tb, vocab, rtd_config(seed))
    encs = encode_corpus(tb, vocab, res.encoder.cfg.max_word_len, res.encoder.cfg.max_seq_len)
    rtd_acc = float(np.mean([evaluate_rtd(res.model, encs, seed=s) for s in RTD_EVAL_SEEDS]))
    digests["encoder"] = _digest(res.encoder, encoder_manifest(res.encoder, vocab, tb.language_code))
    seconds["rtd"] = clock() - t
    say(f"rtd accuracy {rtd_acc:.4f} ({seconds['rtd']:.0f}s)")

    gold = list(tb.tokens())
    acc = {}
    for task in ("pos", "morph"):
        t = clock()
        ft = finetune(res.encoder, vocab, tb, tb, tagger_config(task, seed))
        pred = list(predict_tags(ft.model, tb).tokens())
        if task == "pos":
            acc[task] = float(np.mean([p.upos == g.upos for p, g in zip(pred, gold)]))
        else:
            acc[task] = float(np.mean([p.feats == g.feats for p, g in zip(pred, gold)]))
        digests[task] = _digest(ft.model, tagger_manifest(ft.model))
        seconds[task] = clock() - t
        say(f"{task} train accuracy {acc[task]:.4f} ({seconds[task]:.0f}s)")

    t = clock()
    triples = toy_lemma_triples(50)
    chars = {c for tok in tb.tokens() for c in tok.form + tok.lemma} | {c for f, _, l in triples for c in f + l}
    s2s_vocab = Seq2SeqVocab(chars)
    pre = pretrain_seq2seq(tb, s2s_vocab, seq2seq_config(seed))
    train = [LemmaExample.build(s2s_vocab, f, u, l) for f, u, l in triples]
    lem = finetune_lemma(pre.model, s2s_vocab, train, list(zip(train, [l for _, _, l in triples])),
                         lemma_config(seed))
    cands = [list(top_lemmas(lem.model, s2s_vocab, f, u, width=20).candidates) for f, u, _ in triples]
    acc["lemma"] = lemma_score(cands, [l for _, _, l in triples]).components["acc@1"]
    digests["seq2seq"] = _digest(pre.model, seq2seq_manifest(pre.model, s2s_vocab))
    digests["lemmatizer"] = _digest(lem.model, seq2seq_manifest(lem.model, s2s_vocab))
    seconds["lemma"] = clock() - t
    say(f"lemma train acc@1 (beam 20) {acc['lemma']:.4f} ({seconds['lemma']:.0f}s)")

    return OverfitReport(rtd_acc, acc["pos"], acc["morph"], acc["lemma"], digests, seconds)
