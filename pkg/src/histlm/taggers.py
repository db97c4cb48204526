"""Morphological feature and part-of-speech tagging on top of a pre-trained HLM encoder.

Each token is represented by the concatenation of its context-free intra-word
[WORD_CLS] vector and its contextual inter-word vector.  One softmax classifier per
feature category (plus one for UPoS when PoS tagging) reads that vector.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from histlm import autodiff as ad
from histlm.charvocab import CharVocab, EncodedSentence, encode_sentence
from histlm.corpus import FeatureSchema, Treebank, build_feature_schema, with_predictions
from histlm.hlm import HlmConfig, HlmEncoder, WordRepresentations, clone_encoder, collate
from histlm.metrics import morph_score, pos_score

UPOS_TAGS = ("ADJ", "ADP", "ADV", "AUX", "CCONJ", "DET", "INTJ", "NOUN", "NUM", "PART", "PRON", "PROPN",
             "PUNCT", "SCONJ", "SYM", "VERB", "X")
TASKS = ("pos", "morph")


def upos_id(tag: str) -> int:
    """Index into UPOS_TAGS; anything outside the inventory maps to X."""
    return UPOS_TAGS.index(tag) if tag in UPOS_TAGS else UPOS_TAGS.index("X")


@dataclass
class FinetuneConfig:
    task: str = "morph"
    lr: float = 2e-5
    weight_decay: float = 0.01
    batch_size: int = 16
    schedule: str = "linear"
    warmup_proportion: float = 0.0
    optimizer: str = "adamw"
    patience: int = 10
    max_epochs: int = 100
    freeze_encoder: bool = False
    head_hidden: int = 0  # 0 = single linear layer
    dropout: float | None = None  # override the encoder's dropout while fine-tuning
    seed: int = 0

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown tagging task {self.task!r}; expected one of {TASKS}")


class ClassifierHead(nn.Module):
    def __init__(self, in_dim, n_classes, hidden=0):
        super().__init__()
        if hidden:
            self.net = nn.Sequential(nn.Linear(in_dim, hidden), nn.GELU(), nn.Linear(hidden, n_classes))
        else:
            self.net = nn.Linear(in_dim, n_classes)

    def forward(self, x):
        return self.net(x)


def word_final_repr(reprs: WordRepresentations, encs: list[EncodedSentence]) -> torch.Tensor:
    """[tokens, 2*hidden]: one row per first piece, batch-major then word order."""
    rows = [(b, p) for b, enc in enumerate(encs) for p in enc.first_pieces]
    bi = torch.tensor([r[0] for r in rows], dtype=torch.long)
    pi = torch.tensor([r[1] for r in rows], dtype=torch.long)
    return ad.concat([reprs.intra_word_cls[bi, pi], reprs.inter_contextual[bi, pi]], axis=-1)


@dataclass
class TaggerOutput:
    morph: list[torch.Tensor]  # one [tokens, |values|] tensor per category
    upos: torch.Tensor | None = None


class TaggerModel(nn.Module):
    def __init__(self, encoder: HlmEncoder, schema: FeatureSchema, task: str, vocab: CharVocab,
                 language: str = "", head_hidden: int = 0):
        super().__init__()
        if task not in TASKS:
            raise ValueError(f"unknown tagging task {task!r}")
        if task == "morph" and schema.k == 0:
            raise ValueError("morphological tagging needs at least one feature category (k = 0)")
        self.encoder = encoder
        self.schema, self.task, self.vocab, self.language = schema, task, vocab, language
        self.head_hidden = head_hidden
        d = 2 * encoder.cfg.hidden_size
        self.morph_heads = nn.ModuleList(
            ClassifierHead(d, len(schema.values_per_category[c]), head_hidden) for c in schema.categories)
        self.upos_head = ClassifierHead(d, len(UPOS_TAGS), head_hidden) if task == "pos" else None

    def forward(self, encs: list[EncodedSentence]) -> TaggerOutput:
        reprs = self.encoder(collate(encs, self.encoder.cfg.max_word_len))
        x = word_final_repr(reprs, encs)
        morph = [h(x) for h in self.morph_heads]
        return TaggerOutput(morph, self.upos_head(x) if self.upos_head is not None else None)

    def freeze_encoder(self):
        for p in self.encoder.parameters():
            p.requires_grad_(False)


def build_tagger(encoder: HlmEncoder, schema: FeatureSchema, task: str, vocab: CharVocab, language="",
                 head_hidden=0, generator: torch.Generator | None = None) -> TaggerModel:
    model = TaggerModel(encoder, schema, task, vocab, language, head_hidden)
    model.to(encoder.embeddings.weight.dtype)
    for head in [*model.morph_heads, model.upos_head]:
        if head is not None:
            ad.init_weights(head, generator, encoder.cfg.initializer_range)
    return model


def morph_loss(logits: list[torch.Tensor], labels: torch.Tensor) -> torch.Tensor:
    """Unweighted mean over the k category heads of each head's cross-entropy."""
    if not logits:
        raise ValueError("morph_loss: no category heads (k = 0)")
    if labels.shape[-1] != len(logits):
        raise ad.ShapeError(f"morph_loss: {len(logits)} heads but labels for {labels.shape[-1]} categories")
    return sum(ad.cross_entropy(lg, labels[:, m]) for m, lg in enumerate(logits)) / len(logits)


def joint_pos_loss(upos_logits, upos_labels, morph_logits, morph_labels) -> torch.Tensor:
    """L_UPoS + L_morph; without feature categories only the UPoS term remains."""
    loss = ad.cross_entropy(upos_logits, upos_labels)
    if morph_logits:
        loss = loss + morph_loss(morph_logits, morph_labels)
    return loss


@dataclass(frozen=True)
class TaggingExample:
    enc: EncodedSentence
    upos: tuple[int, ...]  # per first piece
    feats: tuple[tuple[int, ...], ...]  # per first piece, one id per category


def make_examples(tb: Treebank, vocab: CharVocab, schema: FeatureSchema, cfg: HlmConfig) -> list[TaggingExample]:
    out = []
    for sent in tb.sentences:
        for enc in encode_sentence(sent, vocab, cfg.max_word_len, cfg.max_seq_len):
            toks = [sent.tokens[i] for i in enc.token_indices]
            out.append(TaggingExample(enc, tuple(upos_id(t.upos) for t in toks),
                                      tuple(tuple(schema.encode(t.feats)) for t in toks)))
    return out


def batch_loss(model: TaggerModel, examples: list[TaggingExample]) -> torch.Tensor:
    out = model([e.enc for e in examples])
    feats = torch.tensor([f for e in examples for f in e.feats], dtype=torch.long).reshape(-1, model.schema.k)
    if model.task == "morph":
        return morph_loss(out.morph, feats)
    upos = torch.tensor([u for e in examples for u in e.upos], dtype=torch.long)
    return joint_pos_loss(out.upos, upos, out.morph, feats)


class EarlyStopping:
    """Tracks the best score; ``should_stop`` once ``patience`` consecutive updates fail
    to strictly improve on it."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = -math.inf
        self.best_epoch = -1
        self.bad_epochs = 0

    def update(self, score: float, epoch: int) -> bool:
        if score > self.best:
            self.best, self.best_epoch, self.bad_epochs = score, epoch, 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience


@dataclass
class FinetuneResult:
    model: TaggerModel
    history: list[dict] = field(default_factory=list)  # per epoch: train_loss, valid_score
    best_epoch: int = -1


def evaluate(model: TaggerModel, tb: Treebank) -> float:
    pred = predict_tags(model, tb)
    gold_tokens = list(tb.tokens())
    pred_tokens = list(pred.tokens())
    if model.task == "pos":
        return pos_score([t.upos for t in pred_tokens], [t.upos for t in gold_tokens]).score
    return morph_score([t.feats for t in pred_tokens], [t.feats for t in gold_tokens]).score


def finetune(encoder: HlmEncoder, vocab: CharVocab, train: Treebank, valid: Treebank, cfg: FinetuneConfig,
             schema: FeatureSchema | None = None, on_epoch=None) -> FinetuneResult:
    """Fine-tune a copy of ``encoder``; returns the model with the best validation score."""
    if not train.sentences:
        raise ValueError("finetune: empty training split")
    schema = schema or build_feature_schema(train)
    torch.manual_seed(cfg.seed)
    tgen = torch.Generator().manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    enc = clone_encoder(encoder, **({} if cfg.dropout is None else {"dropout": cfg.dropout}))
    model = build_tagger(enc, schema, cfg.task, vocab, train.language_code, cfg.head_hidden, tgen)
    if cfg.freeze_encoder:
        model.freeze_encoder()
    examples = make_examples(train, vocab, schema, enc.cfg)
    steps_per_epoch = math.ceil(len(examples) / cfg.batch_size)
    schedule = ad.LrSchedule.with_warmup_proportion(cfg.schedule, cfg.lr, cfg.max_epochs * steps_per_epoch,
                                                    cfg.warmup_proportion)
    opt = ad.Optimizer(model.named_parameters(), cfg.optimizer, cfg.lr, weight_decay=cfg.weight_decay,
                       schedule=schedule)
    stopper = EarlyStopping(cfg.patience)
    best_state = {k: v.clone() for k, v in model.state_dict().items()}
    history = []
    for epoch in range(cfg.max_epochs):
        model.train()
        order = rng.permutation(len(examples))
        losses = []
        for start in range(0, len(examples), cfg.batch_size):
            loss = batch_loss(model, [examples[i] for i in order[start:start + cfg.batch_size]])
            if not torch.isfinite(loss):
                raise ad.NumericalError(f"non-finite fine-tuning loss in epoch {epoch + 1}")
            opt.zero_grad()
            ad.backward(loss)
            opt.step()
            losses.append(loss.item())
        model.eval()
        score = evaluate(model, valid)
        history.append({"epoch": epoch + 1, "train_loss": float(np.mean(losses)), "valid_score": score})
        if on_epoch:
            on_epoch(history[-1])
        if stopper.update(score, epoch + 1):
            best_state = {k: v.clone() for k, v in model.state_dict().items()}
        if stopper.should_stop:
            break
    model.load_state_dict(best_state)
    model.eval()
    return FinetuneResult(model, history, stopper.best_epoch)


@torch.no_grad()
def predict_tags(model: TaggerModel, tb: Treebank, batch_size: int = 16) -> Treebank:
    """Copy of ``tb`` with UPOS (pos task) or FEATS (morph task) predicted on every token.
    A predicted NONE leaves its category out of the feature map."""
    if model.language and tb.language_code and model.language != tb.language_code:
        raise ValueError(f"model was trained for language {model.language!r}, "
                         f"treebank is {tb.language_code!r}")
    model.eval()
    cfg = model.encoder.cfg
    windows = [(si, enc) for si, sent in enumerate(tb.sentences)
               for enc in encode_sentence(sent, model.vocab, cfg.max_word_len, cfg.max_seq_len)]
    upos = [[None] * len(s.tokens) for s in tb.sentences]
    feats = [[None] * len(s.tokens) for s in tb.sentences]
    for start in range(0, len(windows), batch_size):
        chunk = windows[start:start + batch_size]
        out = model([enc for _, enc in chunk])
        morph_ids = torch.stack([lg.argmax(-1) for lg in out.morph], dim=-1) if out.morph else None
        upos_ids = out.upos.argmax(-1) if out.upos is not None else None
        row = 0
        for si, enc in chunk:
            for ti in enc.token_indices:
                if upos_ids is not None:
                    upos[si][ti] = UPOS_TAGS[int(upos_ids[row])]
                else:
                    feats[si][ti] = model.schema.decode(morph_ids[row].tolist()) if morph_ids is not None else {}
                row += 1
    if model.task == "pos":
        return with_predictions(tb, upos=upos)
    return with_predictions(tb, feats=feats)


def tagger_manifest(model: TaggerModel, **extra) -> dict:
    return {"kind": "tagger", "task": model.task, "config": asdict(model.encoder.cfg), "vocab": model.vocab.itos,
            "language": model.language, "schema": model.schema.to_dict(), "head_hidden": model.head_hidden,
            **extra}


def tagger_from_checkpoint(arrays: dict, manifest: dict) -> TaggerModel:
    if manifest.get("kind") != "tagger":
        raise ValueError(f"not a tagger checkpoint (kind={manifest.get('kind')!r})")
    cfg = HlmConfig(**manifest["config"])
    vocab = CharVocab.from_entries(manifest["vocab"])
    encoder = HlmEncoder(cfg)
    model = TaggerModel(encoder, FeatureSchema.from_dict(manifest["schema"]), manifest["task"], vocab,
                        manifest["language"], manifest["head_hidden"])
    model.to(arrays["encoder.embeddings.weight"].dtype)
    model.load_state_dict(arrays)
    model.eval()
    return model

