import json
from pathlib import Path

import pytest

from histlm.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, apply_overrides, load_config, main
from histlm.corpus import read_treebank, treebank_stats
from histlm.synthetic import write_toy_splits

ENCODER = dict(hidden_size=16, intra_layers=1, inter_layers=1, intra_intermediate_size=32,
               inter_intermediate_size=32, attention_heads=2, dropout=0.0)

TINY_CONFIG = {
    "language": "toy",
    "data": {"train": "toy_train.conllu", "valid": "toy_valid.conllu", "test": "toy_test.conllu"},
    "run_dir": "runs",
    "pretrain": {"epochs": 2, "batch_size": 4, "lr": 1e-3, "generator": ENCODER, "discriminator": ENCODER},
    "seq2seq": {"epochs": 2, "batch_size": 4, "lr": 1e-2, "warmup_steps": 2,
                "model": {"hidden_size": 16, "intermediate_size": 32, "attention_heads": 2,
                          "enc_layers": 1, "dec_layers": 1}},
    "finetune": {"lr": 1e-3, "max_epochs": 2, "batch_size": 4},
    "lemma": {"max_epochs": 2, "batch_size": 8},
    "beam_width": 3,
}


def experiment(directory, **changes):
    write_toy_splits(directory)
    path = Path(directory) / "exp.json"
    path.write_text(json.dumps({**TINY_CONFIG, **changes}), encoding="utf-8")
    return str(path)


def run_pipeline(cfg):
    steps = [["build-vocab"], ["pretrain"], ["pretrain-seq2seq"], ["finetune", "pos"], ["finetune", "morph"],
             ["finetune", "lemma"], ["predict"]]
    for step in steps:
        assert main(["--config", cfg, *step]) == EXIT_OK, step


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    cfg = experiment(root)
    run_pipeline(cfg)
    return root, cfg


def test_stats_matches_corpus(tmp_path, capsys):
    paths = write_toy_splits(tmp_path)
    assert main(["stats", paths["train"]]) == EXIT_OK
    out = capsys.readouterr().out.splitlines()
    tokens, sentences = treebank_stats(read_treebank(paths["train"]))
    assert out[1] == f"{paths['train']}\t{tokens}\t{sentences}"


def test_score_identical_lemma_is_one(tmp_path, capsys):
    gold = write_toy_splits(tmp_path)["test"]
    assert main(["score", "--task", "lemma", "--pred", gold, "--gold", gold, "--out", str(tmp_path / "s.tsv")]) == 0
    assert "score\t1.000000" in capsys.readouterr().out
    assert (tmp_path / "s.tsv").read_text().startswith("task\tlemma\n")


def test_full_pipeline_emits_three_reports(pipeline, capsys):
    root, _ = pipeline
    pred = sorted((root / "runs").glob("*-predict/pred.conllu"))[-1]
    lemmas = pred.parent / "lemmas.tsv"
    gold = str(root / "toy_test.conllu")
    for task, p in (("pos", pred), ("morph", pred), ("lemma", lemmas)):
        assert main(["score", "--task", task, "--pred", str(p), "--gold", gold]) == EXIT_OK
        out = capsys.readouterr().out
        assert out.startswith(f"task\t{task}\n")
        score = float(out.splitlines()[1].split("\t")[1])
        assert 0.0 <= score <= 1.0


def test_run_dir_is_append_only_with_configs(pipeline):
    root, _ = pipeline
    steps = sorted(p.name for p in (root / "runs").iterdir() if p.is_dir() and p.name[0].isdigit())
    assert steps == ["0001-build-vocab", "0002-pretrain", "0003-pretrain-seq2seq", "0004-finetune-pos",
                     "0005-finetune-morph", "0006-finetune-lemma", "0007-predict"]
    for s in steps:
        cfg = json.loads((root / "runs" / s / "config.json").read_text())
        assert cfg["seed"] == 0 and cfg["language"] == "toy"
    index = (root / "runs" / "index.tsv").read_text().splitlines()
    assert [line.split("\t")[1] for line in index] == ["vocab", "encoder", "seq2seq", "tagger-pos", "tagger-morph",
                                                       "lemmatizer", "lemmas", "predictions"]


def test_rerun_is_byte_identical(pipeline, tmp_path):
    root, _ = pipeline
    cfg = experiment(tmp_path)
    run_pipeline(cfg)
    first = sorted(p.name for p in (root / "runs" / "checkpoints").iterdir())
    second = sorted(p.name for p in (tmp_path / "runs" / "checkpoints").iterdir())
    assert first == second and len(first) == 5
    for name in ("pred.conllu", "lemmas.tsv"):
        assert (root / "runs" / "0007-predict" / name).read_bytes() == \
            (tmp_path / "runs" / "0007-predict" / name).read_bytes()


def test_lemma_prediction_requires_upos(pipeline, capsys):
    _, cfg = pipeline
    assert main(["--config", cfg, "predict", "--tasks", "lemma"]) == EXIT_DATA
    assert "UPoS" in capsys.readouterr().err


def test_missing_inputs_are_named(tmp_path, capsys):
    cfg = experiment(tmp_path)
    assert main(["--config", cfg, "pretrain"]) == EXIT_DATA  # no vocab yet
    assert "build-vocab" in capsys.readouterr().err
    assert main(["stats", str(tmp_path / "nope.conllu")]) == EXIT_DATA
    assert "nope.conllu" in capsys.readouterr().err
    assert main(["--config", str(tmp_path / "missing.json"), "build-vocab"]) == EXIT_DATA


def test_usage_errors(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["finetune", "ner"])
    assert exc.value.code == EXIT_USAGE
    cfg = experiment(tmp_path)
    assert main(["--config", cfg, "--set", "bogus=1", "build-vocab"]) == EXIT_USAGE
    assert main(["--config", cfg, "--set", "pretrain.nope=1", "pretrain"]) == EXIT_USAGE


def test_refuses_second_language(tmp_path, capsys):
    write_toy_splits(tmp_path, "lat")
    cfg = experiment(tmp_path, data={"train": "toy_train.conllu", "valid": "lat_valid.conllu"})
    assert main(["--config", cfg, "build-vocab"]) == EXIT_USAGE
    assert "one language" in capsys.readouterr().err


def test_checkpoint_language_mismatch(pipeline, tmp_path, capsys):
    root, _ = pipeline
    write_toy_splits(tmp_path, "lat")
    cfg = Path(tmp_path) / "exp.json"
    cfg.write_text(json.dumps({**TINY_CONFIG, "language": "lat", "run_dir": str(root / "runs"),
                               "data": {s: f"lat_{s}.conllu" for s in ("train", "valid", "test")}}))
    assert main(["--config", str(cfg), "predict", "--tasks", "pos"]) == EXIT_DATA
    assert "trained for 'toy'" in capsys.readouterr().err


def test_overrides_parse_json():
    raw = apply_overrides({"pretrain": {"lr": 1.0}}, ["pretrain.lr=1e-4", "language=lat", "data.train=x"])
    assert raw == {"pretrain": {"lr": 1e-4}, "language": "lat", "data": {"train": "x"}}


def test_config_paths_relative_to_file(tmp_path):
    cfg = load_config(experiment(tmp_path), [])
    assert Path(cfg.data["train"]) == tmp_path / "toy_train.conllu"
    assert Path(cfg.run_dir) == tmp_path / "runs"
