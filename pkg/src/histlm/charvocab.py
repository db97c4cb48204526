"""Per-language character vocabularies and the [WORD_CLS]-prefixed character grid."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from histlm.corpus import Sentence, Treebank

PAD, UNK, WORD_CLS, MASK = "[PAD]", "[UNK]", "[WORD_CLS]", "[MASK]"
SPECIALS = (PAD, UNK, WORD_CLS, MASK)
PAD_ID, UNK_ID, WORD_CLS_ID, MASK_ID = range(4)

MAX_WORD_LEN = 16
MAX_SEQ_LEN = 512


class CharVocab:
    """Specials at ids 0..3, then training characters in sorted order."""

    def __init__(self, chars):
        chars = list(chars)
        if len(set(chars)) != len(chars):
            raise ValueError("duplicate characters in vocabulary")
        if any(c in SPECIALS for c in chars):
            raise ValueError("character entries may not shadow special tokens")
        self.specials = list(SPECIALS)
        self.chars = chars
        self.itos = self.specials + self.chars
        self.char_to_id = {c: i for i, c in enumerate(self.itos)}

    @property
    def size(self) -> int:
        return len(self.itos)

    def __len__(self):
        return self.size

    def __eq__(self, other):
        return isinstance(other, CharVocab) and self.itos == other.itos

    def __repr__(self):
        return f"CharVocab(size={self.size})"

    def id(self, ch: str) -> int:
        return self.char_to_id.get(ch, UNK_ID)

    def decode(self, ids) -> str:
        """Characters for ``ids``; specials are dropped."""
        return "".join(self.itos[i] for i in ids if i >= len(SPECIALS))

    def save(self, path) -> None:
        Path(path).write_text("".join(f"{e}\n" for e in self.itos), encoding="utf-8")

    @classmethod
    def load(cls, path) -> CharVocab:
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls.from_entries(lines)

    @classmethod
    def from_entries(cls, entries) -> CharVocab:
        entries = list(entries)
        if tuple(entries[: len(SPECIALS)]) != SPECIALS:
            raise ValueError(f"vocabulary must start with {SPECIALS}")
        return cls(entries[len(SPECIALS):])


def build_vocab(train: Treebank) -> CharVocab:
    chars = set()
    for tok in train.tokens():
        chars.update(tok.form)
    return CharVocab(sorted(chars))


@dataclass(frozen=True)
class EncodedWord:
    char_ids: tuple[int, ...]

    def __len__(self):
        return len(self.char_ids)


@dataclass(frozen=True)
class EncodedSentence:
    words: tuple[EncodedWord, ...]
    # source token index for every encoded word; chunks of a long token repeat it
    word_to_token_index: tuple[int, ...]
    # chunk number of each word within its token (0 = the token's first piece)
    piece_numbers: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.piece_numbers is None:
            nums, prev, n = [], None, 0
            for ti in self.word_to_token_index:
                n = n + 1 if ti == prev else 0
                nums.append(n)
                prev = ti
            object.__setattr__(self, "piece_numbers", tuple(nums))

    def __len__(self):
        return len(self.words)

    @property
    def first_pieces(self) -> list[int]:
        """Word positions that carry a token's labels (first chunk of each token)."""
        return [pos for pos, n in enumerate(self.piece_numbers) if n == 0]

    @property
    def token_indices(self) -> list[int]:
        return [self.word_to_token_index[p] for p in self.first_pieces]


def encode_word(form: str, vocab: CharVocab, max_word_len: int = MAX_WORD_LEN) -> list[EncodedWord]:
    if not form:
        raise ValueError("cannot encode an empty form")
    if max_word_len < 2:
        raise ValueError("max_word_len must leave room for WORD_CLS and one character")
    ids = [vocab.id(c) for c in form]
    step = max_word_len - 1
    return [EncodedWord((WORD_CLS_ID, *ids[i:i + step])) for i in range(0, len(ids), step)]


def encode_sentence(s: Sentence, vocab: CharVocab, max_word_len: int = MAX_WORD_LEN,
                    max_seq_len: int = MAX_SEQ_LEN) -> list[EncodedSentence]:
    """Encode a sentence into one or more windows of at most ``max_seq_len`` words.

    Windows break between tokens; a single token longer than a window is broken
    across windows only as a last resort.
    """
    windows = []
    words: list[EncodedWord] = []
    index: list[int] = []
    nums: list[int] = []

    def close():
        windows.append(EncodedSentence(tuple(words), tuple(index), tuple(nums)))
        for buf in (words, index, nums):
            buf.clear()

    for ti, tok in enumerate(s.tokens):
        pieces = encode_word(tok.form, vocab, max_word_len)
        if words and len(words) + len(pieces) > max_seq_len:
            close()
        for n, piece in enumerate(pieces):
            if len(words) == max_seq_len:
                close()
            words.append(piece)
            index.append(ti)
            nums.append(n)
    if words:
        close()
    return windows


def decode_token(enc: EncodedSentence, token_index: int, vocab: CharVocab) -> str:
    return "".join(vocab.decode(w.char_ids[1:])
                   for w, ti in zip(enc.words, enc.word_to_token_index) if ti == token_index)
