import pytest
from hypothesis import given
from hypothesis import strategies as st

from histlm.charvocab import (SPECIALS, UNK_ID, WORD_CLS_ID, CharVocab, build_vocab, decode_token, encode_sentence,
                              encode_word)
from histlm.corpus import Sentence, Token
from histlm.synthetic import LONG_WORD, toy_treebank


def test_specials_first_and_sorted_chars():
    vocab = build_vocab(toy_treebank())
    assert tuple(vocab.itos[:4]) == SPECIALS
    assert vocab.chars == sorted(vocab.chars)
    assert vocab.id("☃") == UNK_ID


def test_save_load(tmp_path):
    vocab = build_vocab(toy_treebank())
    vocab.save(tmp_path / "v.txt")
    assert CharVocab.load(tmp_path / "v.txt") == vocab


def test_long_word_split_into_prefixed_chunks():
    vocab = build_vocab(toy_treebank())
    pieces = encode_word(LONG_WORD, vocab, 16)
    assert len(LONG_WORD) == 18
    assert [len(p) for p in pieces] == [16, 4]
    assert all(p.char_ids[0] == WORD_CLS_ID for p in pieces)


def test_first_pieces_one_per_token():
    vocab = build_vocab(toy_treebank())
    sent = toy_treebank().sentences[0]
    (enc,) = encode_sentence(sent, vocab)
    assert enc.token_indices == list(range(len(sent)))
    assert len(enc) == len(sent) + 1  # the long word adds one piece
    assert decode_token(enc, len(sent) - 2, vocab) == LONG_WORD


def test_windows_split_between_tokens():
    vocab = CharVocab("abc")
    sent = Sentence("1", [Token("ab"), Token("c" * 20), Token("a")])
    wins = encode_sentence(sent, vocab, max_word_len=8, max_seq_len=3)
    assert all(len(w) <= 3 for w in wins)
    firsts = [ti for w in wins for ti in w.token_indices]
    assert firsts == [0, 1, 2]


def test_encode_word_rejects_empty():
    with pytest.raises(ValueError):
        encode_word("", CharVocab("a"))


words = st.text("abcdefgh", min_size=1, max_size=40)


@given(st.lists(words, min_size=1, max_size=12), st.integers(2, 10), st.integers(1, 6))
def test_encoding_roundtrip_and_bounds(forms, max_word_len, max_seq_len):
    vocab = CharVocab("abcdefgh")
    sent = Sentence("1", [Token(f) for f in forms])
    wins = encode_sentence(sent, vocab, max_word_len, max_seq_len)
    assert all(1 <= len(w) <= max_seq_len for w in wins)
    assert all(len(word) <= max_word_len and word.char_ids[0] == WORD_CLS_ID for w in wins for word in w.words)
    # every token is labelled exactly once and its characters survive
    assert [ti for w in wins for ti in w.token_indices] == list(range(len(forms)))
    rebuilt = [""] * len(forms)
    for w in wins:
        for word, ti in zip(w.words, w.word_to_token_index):
            rebuilt[ti] += vocab.decode(word.char_ids[1:])
    assert rebuilt == forms
