"""Character-vocabulary size and corpus counts for every <lang>_<split>.conllu in a directory.

    python3 scripts/vocab_table.py DATA_DIR
"""

import sys
from pathlib import Path

from histlm.charvocab import build_vocab
from histlm.corpus import read_treebank, treebank_stats


def main(directory: str) -> None:
    langs = sorted({p.name.split("_")[0] for p in Path(directory).glob("*_train.conllu")})
    print("lang\tvocab\ttrain_tok\tvalid_tok\ttest_tok\ttrain_sent\tvalid_sent\ttest_sent")
    for lang in langs:
        splits = {s: Path(directory) / f"{lang}_{s}.conllu" for s in ("train", "valid", "test")}
        banks = {s: read_treebank(p) for s, p in splits.items() if p.exists()}
        vocab = build_vocab(banks["train"]).size
        counts = [treebank_stats(banks[s]) if s in banks else ("-", "-") for s in splits]
        print("\t".join(map(str, [lang, vocab, *(c[0] for c in counts), *(c[1] for c in counts)])))


if __name__ == "__main__":
    main(sys.argv[1])
