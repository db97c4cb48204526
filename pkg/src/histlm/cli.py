"""Command-line pipeline for one language at a time.

    histlm --config exp.json build-vocab
    histlm --config exp.json pretrain
    histlm --config exp.json pretrain-seq2seq
    histlm --config exp.json finetune pos|morph|lemma
    histlm --config exp.json predict [--split test] [--tasks pos,morph,lemma]
    histlm score --task pos|morph|lemma --pred FILE --gold FILE
    histlm stats FILE...

Every command that writes something gets a fresh numbered directory under the run
directory holding the resolved config; checkpoints live under ``checkpoints/`` named
by their sha256, and ``index.tsv`` records which artifact each step produced.
Nothing in a run directory is ever overwritten.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from histlm import autodiff as ad
from histlm.charvocab import CharVocab, build_vocab
from histlm.corpus import (CoNLLUError, Treebank, build_feature_schema, read_treebank,
                           split_from_filename, treebank_stats, with_predictions, write_treebank)
from histlm.hlm import encoder_from_checkpoint, encoder_manifest
from histlm.lemmatizer import (LemmaExample, LemmaFinetuneConfig, Seq2SeqPretrainConfig, Seq2SeqVocab,
                               finetune_lemma, lemma_examples, lemmatize_treebank, pretrain_seq2seq,
                               read_lemma_tsv, seq2seq_from_checkpoint, seq2seq_manifest, write_lemma_tsv)
from histlm.metrics import lemma_score, morph_score, pos_score
from histlm.pretrain import PretrainConfig, format_log, pretrain
from histlm.taggers import FinetuneConfig, finetune, predict_tags, tagger_from_checkpoint, tagger_manifest

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


@dataclass
class ExperimentConfig:
    language: str = ""
    data: dict = field(default_factory=dict)  # split -> CoNLL-U path
    run_dir: str = "runs"
    seed: int = 0
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    seq2seq: Seq2SeqPretrainConfig = field(default_factory=Seq2SeqPretrainConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    lemma: LemmaFinetuneConfig = field(default_factory=LemmaFinetuneConfig)
    beam_width: int = 20

    def __post_init__(self):
        for name, cls in (("pretrain", PretrainConfig), ("seq2seq", Seq2SeqPretrainConfig),
                          ("finetune", FinetuneConfig), ("lemma", LemmaFinetuneConfig)):
            value = getattr(self, name)
            if isinstance(value, dict):
                try:
                    setattr(self, name, cls(**value))
                except TypeError as exc:
                    raise UsageError(f"config section {name!r}: {exc}") from exc
        for split, path in self.data.items():
            parsed = split_from_filename(path)
            if parsed and self.language and parsed[0] != self.language:
                raise UsageError(f"data file {path} belongs to language {parsed[0]!r}, "
                                 f"but the experiment is for {self.language!r} (one language per run)")

    def to_dict(self) -> dict:
        return asdict(self)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    """``a.b=value`` pairs (value parsed as JSON when possible) applied to a nested dict."""
    for item in overrides:
        if "=" not in item:
            raise UsageError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        node = raw
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise UsageError(f"override {key!r}: {p!r} is not a section")
        node[parts[-1]] = _parse_value(value)
    return raw


def load_config(path: str | None, overrides: list[str]) -> ExperimentConfig:
    raw = {}
    if path:
        p = Path(path)
        if not p.exists():
            raise DataError(f"config file not found: {p}")
        try:
            raw = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {p} is not valid JSON: {exc}") from exc
        # relative paths in a config file are relative to that file
        base = p.resolve().parent
        if isinstance(raw.get("data"), dict):
            raw["data"] = {k: str(base / v) for k, v in raw["data"].items()}
        raw["run_dir"] = str(base / raw.get("run_dir", "runs"))
    raw = apply_overrides(raw, overrides)
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(raw) - known
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    try:
        return ExperimentConfig(**raw)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


class RunDir:
    """Append-only experiment directory."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "checkpoints").mkdir(exist_ok=True)
        self.index = self.root / "index.tsv"

    def new_step(self, command: str, cfg: ExperimentConfig) -> Path:
        n = len([p for p in self.root.iterdir() if p.is_dir() and p.name[:4].isdigit()]) + 1
        step = self.root / f"{n:04d}-{command}"
        step.mkdir()
        (step / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True), encoding="utf-8")
        return step

    def save_checkpoint(self, arrays, manifest, rng=None, step=0) -> Path:
        data = ad.checkpoint_bytes(arrays, manifest, rng, step)
        path = self.root / "checkpoints" / f"{hashlib.sha256(data).hexdigest()}.ckpt"
        if not path.exists():
            path.write_bytes(data)
        return path

    def register(self, step: Path, kind: str, artifact: Path) -> None:
        with self.index.open("a", encoding="utf-8") as fh:
            fh.write(f"{step.name}\t{kind}\t{artifact.relative_to(self.root)}\n")

    def latest(self, kind: str) -> Path | None:
        if not self.index.exists():
            return None
        found = None
        for line in self.index.read_text(encoding="utf-8").splitlines():
            _, k, rel = line.split("\t")
            if k == kind:
                found = self.root / rel
        return found

    def require(self, kind: str, producer: str) -> Path:
        path = self.latest(kind)
        if path is None:
            raise DataError(f"no {kind} artifact in {self.root}; run `histlm {producer}` first")
        return path


def load_split(cfg: ExperimentConfig, split: str) -> Treebank:
    if split not in cfg.data:
        raise DataError(f"config has no data path for split {split!r}")
    path = Path(cfg.data[split])
    if not path.exists():
        raise DataError(f"data file not found: {path}")
    return read_treebank(path, cfg.language, split)


def _check_language(manifest: dict, cfg: ExperimentConfig, path: Path):
    lang = manifest.get("language", "")
    if lang and cfg.language and lang != cfg.language:
        raise DataError(f"checkpoint {path} was trained for {lang!r}, data is {cfg.language!r}")


def _load(path: Path, cfg: ExperimentConfig):
    arrays, manifest = ad.load_checkpoint(path)
    _check_language(manifest, cfg, path)
    return arrays, manifest


def _write_rows(path: Path, rows: list[dict]):
    if not rows:
        path.write_text("", encoding="utf-8")
        return
    cols = list(rows[0])
    lines = ["\t".join(cols)] + ["\t".join(str(r[c]) for c in cols) for r in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# -- commands --------------------------------------------------------------

def cmd_build_vocab(args, cfg: ExperimentConfig) -> int:
    train = load_split(cfg, "train")
    vocab = build_vocab(train)
    run = RunDir(cfg.run_dir)
    step = run.new_step("build-vocab", cfg)
    vocab.save(step / "vocab.txt")
    run.register(step, "vocab", step / "vocab.txt")
    print(f"{cfg.language}\tvocab_size\t{vocab.size}")
    return EXIT_OK


def _vocab(run: RunDir) -> CharVocab:
    return CharVocab.load(run.require("vocab", "build-vocab"))


def cmd_pretrain(args, cfg: ExperimentConfig) -> int:
    run = RunDir(cfg.run_dir)
    vocab = _vocab(run)
    train = load_split(cfg, "train")
    step = run.new_step("pretrain", cfg)
    result = pretrain(train, vocab, cfg.pretrain)
    (step / "log.tsv").write_text(format_log(result.log), encoding="utf-8")
    manifest = encoder_manifest(result.encoder, vocab, cfg.language, objective=cfg.pretrain.objective)
    ckpt = run.save_checkpoint(ad.state_arrays(result.encoder), manifest, result.rng, result.optimizer.step_count)
    run.register(step, "encoder", ckpt)
    print(f"encoder\t{ckpt}")
    return EXIT_OK


def cmd_pretrain_seq2seq(args, cfg: ExperimentConfig) -> int:
    run = RunDir(cfg.run_dir)
    train = load_split(cfg, "train")
    vocab = Seq2SeqVocab.from_treebank(train)
    step = run.new_step("pretrain-seq2seq", cfg)
    result = pretrain_seq2seq(train, vocab, cfg.seq2seq)
    _write_rows(step / "log.tsv", result.log)
    ckpt = run.save_checkpoint(ad.state_arrays(result.model), seq2seq_manifest(result.model, vocab, cfg.language))
    run.register(step, "seq2seq", ckpt)
    print(f"seq2seq\t{ckpt}")
    return EXIT_OK


def cmd_finetune(args, cfg: ExperimentConfig) -> int:
    run = RunDir(cfg.run_dir)
    train, valid = load_split(cfg, "train"), load_split(cfg, "valid")
    if args.task == "lemma":
        path = run.require("seq2seq", "pretrain-seq2seq")
        model, vocab = seq2seq_from_checkpoint(*_load(path, cfg))
        step = run.new_step("finetune-lemma", cfg)
        pairs = lemma_examples(train, vocab)
        gold_valid = [(LemmaExample.build(vocab, t.form, t.upos, t.lemma), t.lemma)
                      for t in valid.tokens() if t.lemma != "_"]
        result = finetune_lemma(model, vocab, pairs, gold_valid, cfg.lemma)
        _write_rows(step / "history.tsv", result.log)
        ckpt = run.save_checkpoint(ad.state_arrays(result.model),
                                   seq2seq_manifest(result.model, vocab, cfg.language, best_epoch=result.best_epoch))
        run.register(step, "lemmatizer", ckpt)
        print(f"lemmatizer\t{ckpt}")
        return EXIT_OK

    path = run.require("encoder", "pretrain")
    encoder, vocab = encoder_from_checkpoint(*_load(path, cfg))
    ft = FinetuneConfig(**{**asdict(cfg.finetune), "task": args.task})
    step = run.new_step(f"finetune-{args.task}", cfg)
    result = finetune(encoder, vocab, train, valid, ft, build_feature_schema(train))
    _write_rows(step / "history.tsv", result.history)
    ckpt = run.save_checkpoint(ad.state_arrays(result.model), tagger_manifest(result.model, best_epoch=result.best_epoch))
    run.register(step, f"tagger-{args.task}", ckpt)
    print(f"tagger-{args.task}\t{ckpt}")
    return EXIT_OK


def cmd_predict(args, cfg: ExperimentConfig) -> int:
    tasks = [t for t in args.tasks.split(",") if t]
    if not tasks or any(t not in ("pos", "morph", "lemma") for t in tasks):
        raise UsageError(f"--tasks must list pos, morph and/or lemma, got {args.tasks!r}")
    run = RunDir(cfg.run_dir)
    data = load_split(cfg, args.split)
    # predictions start from a blank copy so no gold annotation can leak through
    blank = [[None] * len(s.tokens) for s in data.sentences]
    tb = with_predictions(data, upos=[["_"] * len(r) for r in blank], feats=[[{}] * len(r) for r in blank],
                          lemmas=[["_"] * len(r) for r in blank])
    if "lemma" in tasks and "pos" not in tasks:
        if not args.upos_from:
            raise DataError("lemma prediction needs predicted UPoS: add pos to --tasks or pass --upos-from")
    if args.upos_from:
        upos_src = read_treebank(args.upos_from, cfg.language, args.split)
        if [len(s.tokens) for s in upos_src.sentences] != [len(s.tokens) for s in tb.sentences]:
            raise DataError(f"{args.upos_from} does not align with the {args.split} split")
        tb = with_predictions(tb, upos=[[t.upos for t in s.tokens] for s in upos_src.sentences])
    step = run.new_step("predict", cfg)
    for task in ("pos", "morph"):
        if task in tasks:
            model = tagger_from_checkpoint(*_load(run.require(f"tagger-{task}", f"finetune {task}"), cfg))
            pred = predict_tags(model, tb)
            tb = with_predictions(tb, upos=[[t.upos for t in s.tokens] for s in pred.sentences]) if task == "pos" \
                else with_predictions(tb, feats=[[t.feats for t in s.tokens] for s in pred.sentences])
    if "lemma" in tasks:
        model, vocab = seq2seq_from_checkpoint(*_load(run.require("lemmatizer", "finetune lemma"), cfg))
        preds = lemmatize_treebank(model, vocab, tb, cfg.beam_width)
        write_lemma_tsv(tb, preds, step / "lemmas.tsv")
        tb = with_predictions(tb, lemmas=[[p.candidates[0] if p.candidates else "_" for p in row] for row in preds])
        run.register(step, "lemmas", step / "lemmas.tsv")
    write_treebank(tb, step / "pred.conllu")
    run.register(step, "predictions", step / "pred.conllu")
    print(f"predictions\t{step / 'pred.conllu'}")
    return EXIT_OK


def _read_gold(path) -> Treebank:
    p = Path(path)
    if not p.exists():
        raise DataError(f"file not found: {p}")
    return read_treebank(p)


def cmd_score(args, cfg) -> int:
    gold = _read_gold(args.gold)
    gold_tokens = list(gold.tokens())
    if args.task == "lemma" and str(args.pred).endswith(".tsv"):
        if not Path(args.pred).exists():
            raise DataError(f"file not found: {args.pred}")
        cands = read_lemma_tsv(args.pred)
        report = lemma_score(cands, [t.lemma for t in gold_tokens])
    else:
        pred_tokens = list(_read_gold(args.pred).tokens())
        if len(pred_tokens) != len(gold_tokens):
            raise DataError(f"{args.pred} has {len(pred_tokens)} tokens, gold has {len(gold_tokens)}")
        if args.task == "pos":
            report = pos_score([t.upos for t in pred_tokens], [t.upos for t in gold_tokens])
        elif args.task == "morph":
            report = morph_score([t.feats for t in pred_tokens], [t.feats for t in gold_tokens])
        else:
            report = lemma_score([[t.lemma] for t in pred_tokens], [t.lemma for t in gold_tokens])
    sys.stdout.write(report.to_tsv())
    if args.out:
        Path(args.out).write_text(report.to_tsv(), encoding="utf-8")
    return EXIT_OK


def cmd_stats(args, cfg) -> int:
    for path in args.files:
        if not Path(path).exists():
            raise DataError(f"file not found: {path}")
    print("file\ttokens\tsentences")
    for path in args.files:
        tokens, sentences = treebank_stats(read_treebank(path))
        print(f"{path}\t{tokens}\t{sentences}")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="histlm", description="Hierarchical character LM pipeline for one language.")
    parser.add_argument("--config", help="JSON experiment config")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value, e.g. --set pretrain.lr=1e-4 (repeatable)")
    parser.add_argument("--seed", type=int, help="shorthand for --set seed=N (also seeds every stage)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("build-vocab", help="character vocabulary of the training split")
    sub.add_parser("pretrain", help="RTD/MLM pre-training of the hierarchical encoder")
    sub.add_parser("pretrain-seq2seq", help="span-corruption pre-training of the lemmatizer")
    ft = sub.add_parser("finetune", help="fine-tune a tagger or the lemmatizer")
    ft.add_argument("task", choices=("pos", "morph", "lemma"))
    pr = sub.add_parser("predict", help="predict UPoS, features and lemmata for a split")
    pr.add_argument("--split", default="test", choices=("train", "valid", "test"))
    pr.add_argument("--tasks", default="pos,morph,lemma")
    pr.add_argument("--upos-from", help="CoNLL-U file whose UPOS column conditions the lemmatizer")
    sc = sub.add_parser("score", help="score predictions against gold")
    sc.add_argument("--task", required=True, choices=("pos", "morph", "lemma"))
    sc.add_argument("--pred", required=True)
    sc.add_argument("--gold", required=True)
    sc.add_argument("--out")
    st = sub.add_parser("stats", help="token and sentence counts")
    st.add_argument("files", nargs="+")
    return parser


COMMANDS = {"build-vocab": cmd_build_vocab, "pretrain": cmd_pretrain, "pretrain-seq2seq": cmd_pretrain_seq2seq,
            "finetune": cmd_finetune, "predict": cmd_predict, "score": cmd_score, "stats": cmd_stats}


def _seeded(cfg: ExperimentConfig) -> ExperimentConfig:
    for section in (cfg.pretrain, cfg.seq2seq, cfg.finetune, cfg.lemma):
        section.seed = cfg.seed
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = None
        if args.command not in ("score", "stats"):
            overrides = list(args.overrides) + ([f"seed={args.seed}"] if args.seed is not None else [])
            cfg = _seeded(load_config(args.config, overrides))
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"histlm: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ad.NumericalError as exc:
        print(f"histlm: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DataError, CoNLLUError, FileNotFoundError, ValueError) as exc:
        print(f"histlm: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
