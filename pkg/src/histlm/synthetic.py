"""Deterministic toy treebanks with regular inflection, for smoke runs and overfit checks."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from histlm.corpus import Sentence, Token, Treebank, write_treebank

NOUN_STEMS = ("ros", "lup", "serv", "domin", "puell", "agr", "templ", "reg", "naut", "via")
VERB_STEMS = ("am", "vid", "aud", "port", "voc", "laud", "dic", "ten")
ADVERBS = ("nunc", "iam", "semper", "saepe")
ADPOSITIONS = ("in", "cum", "ad")

NOUN_ENDINGS = {
    ("Nom", "Sing"): "us", ("Acc", "Sing"): "um", ("Gen", "Sing"): "i",
    ("Nom", "Plur"): "ae", ("Acc", "Plur"): "os", ("Dat", "Sing"): "o",
}
VERB_ENDINGS = {("1", "Sing"): "eo", ("2", "Sing"): "es", ("3", "Sing"): "et", ("3", "Plur"): "ent"}
LONG_WORD = "antiquissimorumque"  # 18 chars: exercises word splitting


def noun(stem, case, number):
    return Token(stem + NOUN_ENDINGS[case, number], stem + "us", "NOUN",
                 {"Case": case, "Number": number})


def verb(stem, person, number):
    return Token(stem + VERB_ENDINGS[person, number], stem + "eo", "VERB",
                 {"Mood": "Ind", "Number": number, "Person": person})


def clause(rng, nouns, verbs) -> list[Token]:
    """[ADV] subject-Nom [ADP object-Acc] object-Acc verb; the verb agrees with the subject."""
    pick = lambda seq: seq[int(rng.integers(len(seq)))]
    number = pick(("Sing", "Plur"))
    out = []
    if rng.random() < 0.3:
        w = pick(ADVERBS)
        out.append(Token(w, w, "ADV"))
    out.append(noun(pick(nouns), "Nom", number))
    if rng.random() < 0.3:
        w = pick(ADPOSITIONS)
        out += [Token(w, w, "ADP"), noun(pick(nouns), "Acc", pick(("Sing", "Plur")))]
    out.append(noun(pick(nouns), pick(("Acc", "Gen", "Dat")) if number == "Sing" else "Acc", "Sing"))
    out.append(verb(pick(verbs), "3", number))
    return out


def toy_treebank(n_sentences: int = 10, seed: int = 0, language_code: str = "toy", split: str = "train",
                 noun_stems: int = len(NOUN_STEMS), verb_stems: int = len(VERB_STEMS),
                 clauses: tuple[int, int] = (1, 2)) -> Treebank:
    rng = np.random.default_rng(seed)
    nouns, verbs = NOUN_STEMS[:noun_stems], VERB_STEMS[:verb_stems]
    sentences = []
    for i in range(n_sentences):
        tokens = []
        for c in range(int(rng.integers(clauses[0], clauses[1] + 1))):
            if c:
                tokens.append(Token("et", "et", "CCONJ"))
            tokens += clause(rng, nouns, verbs)
        if i == 0:
            tokens.append(Token(LONG_WORD, "antiquus", "ADJ", {"Case": "Gen", "Degree": "Sup", "Number": "Plur"}))
        tokens.append(Token(".", ".", "PUNCT"))
        sentences.append(Sentence(f"toy-{i + 1}", tokens, [f"# sent_id = toy-{i + 1}"]))
    return Treebank(language_code, split, sentences)


def toy_lemma_triples(n: int = 50) -> list[tuple[str, str, str]]:
    """Distinct (form, upos, lemma) triples from the toy inflection tables."""
    triples = []
    for stem in NOUN_STEMS:
        for case, number in sorted(NOUN_ENDINGS):
            t = noun(stem, case, number)
            triples.append((t.form, t.upos, t.lemma))
    for stem in VERB_STEMS:
        for person, number in sorted(VERB_ENDINGS):
            t = verb(stem, person, number)
            triples.append((t.form, t.upos, t.lemma))
    rng = np.random.default_rng(1)
    order = rng.permutation(len(triples))
    return [triples[i] for i in order[:n]]


def write_toy_splits(directory, language_code: str = "toy", n_sentences: int = 8) -> dict[str, str]:
    """Write ``<lang>_{train,valid,test}.conllu`` into ``directory``; returns split -> path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {}
    for seed, split in enumerate(("train", "valid", "test")):
        path = directory / f"{language_code}_{split}.conllu"
        write_treebank(toy_treebank(n_sentences, seed=seed, language_code=language_code, split=split), path)
        paths[split] = str(path)
    return paths
