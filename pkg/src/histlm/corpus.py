"""CoNLL-U ingestion, morphological feature schemas and treebank statistics."""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from pathlib import Path

SPLITS = ("train", "valid", "test")
NONE = "<NONE>"

_FILENAME = re.compile(r"^([a-z]{3,4})_(train|valid|test)\.conllu$")


class CoNLLUError(ValueError):
    """Malformed CoNLL-U input."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass
class Token:
    form: str
    lemma: str = "_"
    upos: str = "_"
    feats: dict[str, str] = field(default_factory=dict)
    # columns kept only so predictions can be written back unchanged
    xpos: str = "_"
    head: str = "_"
    deprel: str = "_"
    deps: str = "_"
    misc: str = "_"

    def __post_init__(self):
        if not self.form:
            raise ValueError("token form must be non-empty")
        self.feats = dict(sorted(self.feats.items()))


@dataclass
class Sentence:
    id: str
    tokens: list[Token]
    comments: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.tokens:
            raise ValueError(f"sentence {self.id!r} has no tokens")

    def __len__(self):
        return len(self.tokens)


@dataclass
class Treebank:
    language_code: str = ""
    split: str = "train"
    sentences: list[Sentence] = field(default_factory=list)

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}; expected one of {SPLITS}")

    def __len__(self):
        return len(self.sentences)

    def tokens(self):
        for sent in self.sentences:
            yield from sent.tokens


@dataclass
class FeatureSchema:
    """Morphological categories of a training treebank and their value inventories.

    Every category's value list starts with ``NONE`` so label id 0 always means
    "feature absent".
    """

    categories: list[str]
    values_per_category: dict[str, list[str]]

    @property
    def k(self) -> int:
        return len(self.categories)

    def encode(self, feats: dict[str, str]) -> list[int]:
        """Label id per category; absent or unseen values fall back to NONE."""
        ids = []
        for cat in self.categories:
            values = self.values_per_category[cat]
            val = feats.get(cat, NONE)
            ids.append(values.index(val) if val in values else 0)
        return ids

    def decode(self, ids) -> dict[str, str]:
        feats = {}
        for cat, i in zip(self.categories, ids):
            val = self.values_per_category[cat][int(i)]
            if val != NONE:
                feats[cat] = val
        return feats

    def to_dict(self) -> dict:
        return {"categories": list(self.categories),
                "values_per_category": {c: list(v) for c, v in self.values_per_category.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> FeatureSchema:
        return cls(list(d["categories"]), {c: list(v) for c, v in d["values_per_category"].items()})


def parse_feats(column: str, line: int | None = None) -> dict[str, str]:
    if column == "_":
        return {}
    feats = {}
    for item in column.split("|"):
        cat, sep, val = item.partition("=")
        if not sep or not cat:
            raise CoNLLUError(f"bad FEATS item {item!r}", line)
        if cat in feats:
            raise CoNLLUError(f"duplicate feature category {cat!r}", line)
        feats[cat] = val
    return feats


def format_feats(feats: dict[str, str]) -> str:
    if not feats:
        return "_"
    return "|".join(f"{c}={v}" for c, v in sorted(feats.items()))


def parse_conllu(text: str, language_code: str = "", split: str = "train") -> Treebank:
    """Parse CoNLL-U text into a :class:`Treebank`.

    Multiword-token ranges (``3-4``) and empty nodes (``5.1``) are skipped, so
    only syntactic words become tokens.
    """
    sentences: list[Sentence] = []
    tokens: list[Token] = []
    comments: list[str] = []
    sent_id = None

    def flush():
        nonlocal tokens, comments, sent_id
        if tokens:
            sid = sent_id if sent_id is not None else str(len(sentences) + 1)
            sentences.append(Sentence(sid, tokens, comments))
        tokens, comments, sent_id = [], [], None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r")
        if not line.strip():
            flush()
            continue
        if line.startswith("#"):
            comments.append(line)
            key, sep, value = line[1:].partition("=")
            if sep and key.strip() == "sent_id":
                sent_id = value.strip()
            continue
        cols = line.split("\t")
        if len(cols) != 10:
            raise CoNLLUError(f"expected 10 tab-separated columns, got {len(cols)}", lineno)
        tid = cols[0]
        if "-" in tid or "." in tid:
            continue
        if not tid.isdigit():
            raise CoNLLUError(f"bad token id {tid!r}", lineno)
        if not cols[1]:
            raise CoNLLUError("empty FORM", lineno)
        tokens.append(Token(form=cols[1], lemma=cols[2], upos=cols[3], xpos=cols[4],
                            feats=parse_feats(cols[5], lineno), head=cols[6],
                            deprel=cols[7], deps=cols[8], misc=cols[9]))
    flush()
    return Treebank(language_code, split, sentences)


def to_conllu(tb: Treebank) -> str:
    out = []
    for sent in tb.sentences:
        out.extend(sent.comments)
        for i, t in enumerate(sent.tokens, start=1):
            out.append("\t".join([str(i), t.form, t.lemma, t.upos, t.xpos, format_feats(t.feats),
                                  t.head, t.deprel, t.deps, t.misc]))
        out.append("")
    return "\n".join(out) + ("\n" if out else "")


def split_from_filename(path) -> tuple[str, str] | None:
    """``grc_train.conllu`` -> ("grc", "train"); None if the name does not follow the convention."""
    m = _FILENAME.match(Path(path).name)
    return (m.group(1), m.group(2)) if m else None


def read_treebank(path, language_code: str | None = None, split: str | None = None) -> Treebank:
    path = Path(path)
    parsed = split_from_filename(path)
    if parsed:
        language_code = language_code or parsed[0]
        split = split or parsed[1]
    text = path.read_text(encoding="utf-8")
    return parse_conllu(text, language_code or "", split or "train")


def write_treebank(tb: Treebank, path) -> None:
    Path(path).write_text(to_conllu(tb), encoding="utf-8")


def build_feature_schema(train: Treebank) -> FeatureSchema:
    observed: dict[str, set[str]] = {}
    for tok in train.tokens():
        for cat, val in tok.feats.items():
            observed.setdefault(cat, set()).add(val)
    categories = sorted(observed)
    values = {c: [NONE] + sorted(observed[c] - {NONE}) for c in categories}
    return FeatureSchema(categories, values)


def treebank_stats(tb: Treebank) -> tuple[int, int]:
    return sum(len(s.tokens) for s in tb.sentences), len(tb.sentences)


def with_predictions(tb: Treebank, upos=None, feats=None, lemmas=None) -> Treebank:
    """Copy of ``tb`` with per-token columns overwritten.

    Each argument is a list (one entry per sentence) of per-token values, or None
    to keep the column.
    """
    sentences = []
    for si, sent in enumerate(tb.sentences):
        toks = []
        for ti, tok in enumerate(sent.tokens):
            kw = {}
            if upos is not None:
                kw["upos"] = upos[si][ti]
            if feats is not None:
                kw["feats"] = feats[si][ti]
            if lemmas is not None:
                kw["lemma"] = lemmas[si][ti]
            toks.append(replace(tok, **kw))
        sentences.append(Sentence(sent.id, toks, list(sent.comments)))
    return Treebank(tb.language_code, tb.split, sentences)
