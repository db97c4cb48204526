"""Run every CLI step on a generated toy treebank and score the predictions.

    python3 scripts/run_tiny_pipeline.py [workdir]
"""

import json
import sys
import tempfile
from pathlib import Path

from histlm.cli import main
from histlm.synthetic import write_toy_splits

ENCODER = dict(hidden_size=16, intra_layers=1, inter_layers=1, intra_intermediate_size=32,
               inter_intermediate_size=32, attention_heads=2, dropout=0.0)
CONFIG = {
    "language": "toy",
    "data": {s: f"toy_{s}.conllu" for s in ("train", "valid", "test")},
    "run_dir": "runs",
    "pretrain": {"epochs": 3, "batch_size": 4, "lr": 1e-3, "generator": ENCODER, "discriminator": ENCODER},
    "seq2seq": {"epochs": 3, "batch_size": 4, "lr": 1e-2, "warmup_steps": 2,
                "model": {"hidden_size": 16, "intermediate_size": 32, "attention_heads": 2,
                          "enc_layers": 1, "dec_layers": 1}},
    "finetune": {"lr": 1e-3, "max_epochs": 3, "batch_size": 4},
    "lemma": {"max_epochs": 3, "batch_size": 8},
    "beam_width": 3,
}


def run(workdir: Path) -> None:
    write_toy_splits(workdir)
    cfg = workdir / "exp.json"
    cfg.write_text(json.dumps(CONFIG, indent=2), encoding="utf-8")
    for step in (["build-vocab"], ["pretrain"], ["pretrain-seq2seq"], ["finetune", "pos"],
                 ["finetune", "morph"], ["finetune", "lemma"], ["predict"]):
        print("$ histlm --config", cfg, *step, flush=True)
        if main(["--config", str(cfg), *step]) != 0:
            sys.exit(f"step {' '.join(step)} failed")
    pred = sorted((workdir / "runs").glob("*-predict"))[-1]
    gold = str(workdir / "toy_test.conllu")
    for task, path in (("pos", pred / "pred.conllu"), ("morph", pred / "pred.conllu"), ("lemma", pred / "lemmas.tsv")):
        main(["score", "--task", task, "--pred", str(path), "--gold", gold])


if __name__ == "__main__":
    run(Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="histlm-")))
