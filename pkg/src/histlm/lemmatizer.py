"""Character-level encoder-decoder lemmatizer.

A T5-style model (relative position buckets, RMSNorm, GEGLU) is pre-trained with span
corruption on running text, then fine-tuned to map ``[UPOS=tag] + form`` to the
lemma.  Decoding is length-unnormalised beam search.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from histlm import autodiff as ad
from histlm.attention import RelativePositionBias, RMSNorm, T5DecoderBlock, T5EncoderBlock, relative_bias_attention
from histlm.corpus import Treebank
from histlm.metrics import lemma_score
from histlm.taggers import UPOS_TAGS, EarlyStopping

PAD, UNK, EOS, SPACE = "[PAD]", "[UNK]", "[EOS]", " "
PAD_ID, UNK_ID, EOS_ID = 0, 1, 2
N_SENTINELS = 100
MAX_LEMMA_LEN = 30


def upos_token(tag: str) -> str:
    return f"[UPOS={tag}]"


def sentinel_token(i: int) -> str:
    return f"[EXTRA_{i}]"


class Seq2SeqVocab:
    """PAD, UNK, EOS, then characters (always including the space), then one token per
    UPoS tag, then the span-corruption sentinels."""

    def __init__(self, chars):
        chars = sorted(set(chars) | {SPACE})
        self.chars = chars
        self.itos = [PAD, UNK, EOS] + chars + [upos_token(t) for t in UPOS_TAGS] + \
            [sentinel_token(i) for i in range(N_SENTINELS)]
        self.stoi = {s: i for i, s in enumerate(self.itos)}
        self.char_ids = list(range(3, 3 + len(chars)))
        self.sentinel_ids = [self.stoi[sentinel_token(i)] for i in range(N_SENTINELS)]

    @property
    def size(self) -> int:
        return len(self.itos)

    @property
    def space_id(self) -> int:
        return self.stoi[SPACE]

    def __eq__(self, other):
        return isinstance(other, Seq2SeqVocab) and self.itos == other.itos

    def encode(self, text: str) -> list[int]:
        return [self.stoi.get(c, UNK_ID) for c in text]

    def upos_id(self, tag: str) -> int:
        """Tags outside the UPoS inventory are conditioned as X."""
        return self.stoi[upos_token(tag if tag in UPOS_TAGS else "X")]

    def decode(self, ids) -> str:
        """Characters only: stops at EOS, drops every other non-character token."""
        out = []
        for i in ids:
            i = int(i)
            if i == EOS_ID:
                break
            if 3 <= i < 3 + len(self.chars):
                out.append(self.itos[i])
        return "".join(out)

    def output_ids(self) -> list[int]:
        """Tokens a lemma decoder may emit."""
        return [EOS_ID, *self.char_ids]

    @classmethod
    def from_treebank(cls, train: Treebank) -> Seq2SeqVocab:
        chars = set()
        for tok in train.tokens():
            chars.update(tok.form)
            if tok.lemma != "_":
                chars.update(tok.lemma)
        return cls(chars)

    @classmethod
    def from_entries(cls, entries) -> Seq2SeqVocab:
        entries = list(entries)
        n_chars = len(entries) - 3 - len(UPOS_TAGS) - N_SENTINELS
        vocab = cls(entries[3:3 + n_chars])
        if vocab.itos != entries:
            raise ValueError("entries do not form a valid seq2seq vocabulary")
        return vocab


@dataclass
class Seq2SeqConfig:
    vocab_size: int = 0
    hidden_size: int = 64
    enc_layers: int = 2
    dec_layers: int = 2
    intermediate_size: int = 128
    attention_heads: int = 4
    dropout: float = 0.0
    num_buckets: int = 32
    max_distance: int = 128
    initializer_range: float = ad.INIT_STD

    def __post_init__(self):
        if self.enc_layers != self.dec_layers:
            raise ValueError("encoder and decoder must have the same number of layers")

    @classmethod
    def t5_base(cls, vocab_size=0, **overrides):
        return cls(vocab_size, **{**dict(hidden_size=768, enc_layers=12, dec_layers=12, intermediate_size=2048,
                                         attention_heads=12), **overrides})


class Seq2SeqModel(nn.Module):
    def __init__(self, cfg: Seq2SeqConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.hidden_size
        self.shared = nn.Embedding(cfg.vocab_size, d)
        self.enc_bias = RelativePositionBias(cfg.attention_heads, cfg.num_buckets, cfg.max_distance, True)
        self.dec_bias = RelativePositionBias(cfg.attention_heads, cfg.num_buckets, cfg.max_distance, False)
        self.encoder = nn.ModuleList(T5EncoderBlock(d, cfg.intermediate_size, cfg.attention_heads, cfg.dropout)
                                     for _ in range(cfg.enc_layers))
        self.decoder = nn.ModuleList(T5DecoderBlock(d, cfg.intermediate_size, cfg.attention_heads, cfg.dropout)
                                     for _ in range(cfg.dec_layers))
        self.enc_norm = RMSNorm(d)
        self.dec_norm = RMSNorm(d)
        self.dropout = nn.Dropout(cfg.dropout)
        self.lm_head = nn.Linear(d, cfg.vocab_size, bias=False)

    def encode(self, src: torch.Tensor):
        mask = src != PAD_ID
        x = self.dropout(self.shared(src))
        bias = relative_bias_attention(self.enc_bias, src.shape[1], src.shape[1])
        for block in self.encoder:
            x = block(x, bias, mask)
        return self.dropout(self.enc_norm(x)), mask

    def decode(self, memory, memory_mask, dec_in: torch.Tensor):
        """Logits for every position of ``dec_in`` (already shifted right)."""
        y = self.dropout(self.shared(dec_in))
        bias = relative_bias_attention(self.dec_bias, dec_in.shape[1], dec_in.shape[1], causal=True)
        for block in self.decoder:
            y = block(y, memory, bias, memory_mask)
        return self.lm_head(self.dropout(self.dec_norm(y)))

    def forward(self, src, tgt):
        memory, mask = self.encode(src)
        return self.decode(memory, mask, shift_right(tgt))


def shift_right(tgt: torch.Tensor) -> torch.Tensor:
    """Decoder input: PAD as start token, then the target without its last position."""
    start = torch.full_like(tgt[:, :1], PAD_ID)
    return torch.cat([start, tgt[:, :-1]], dim=1)


def build_seq2seq(cfg: Seq2SeqConfig, generator: torch.Generator | None = None, dtype=None) -> Seq2SeqModel:
    model = Seq2SeqModel(cfg).to(dtype or ad.DTYPE)
    ad.init_weights(model, generator, cfg.initializer_range)
    return model


def pad_batch(seqs: list[list[int]]) -> torch.Tensor:
    width = max(len(s) for s in seqs)
    out = torch.full((len(seqs), width), PAD_ID, dtype=torch.long)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = torch.tensor(s, dtype=torch.long)
    return out


def seq2seq_loss(model: Seq2SeqModel, src: list[list[int]], tgt: list[list[int]]) -> torch.Tensor:
    """Teacher-forced token cross-entropy; target padding is ignored."""
    tgt_t = pad_batch(tgt)
    logits = model(pad_batch(src), tgt_t)
    return ad.cross_entropy(logits.reshape(-1, logits.shape[-1]),
                            tgt_t.masked_fill(tgt_t == PAD_ID, -100).reshape(-1))


# -- span corruption -------------------------------------------------------

def _random_segmentation(n_items: int, n_segments: int, rng: np.random.Generator) -> np.ndarray:
    """Split ``n_items`` into ``n_segments`` positive lengths, uniformly over compositions."""
    marks = np.concatenate([np.ones(n_segments - 1, dtype=int), np.zeros(n_items - n_segments, dtype=int)])
    rng.shuffle(marks)
    segment_ids = np.cumsum(np.concatenate([[0], marks]))
    return np.bincount(segment_ids, minlength=n_segments)


def random_spans_noise_mask(length: int, rng: np.random.Generator, noise_density: float = 0.15,
                            mean_span: float = 3.0, max_spans: int = N_SENTINELS) -> np.ndarray:
    """Boolean mask over ``length`` positions: round(density*length) noise positions in
    round(noise/mean_span) spans, interleaved with non-noise runs; starts with non-noise."""
    if noise_density <= 0:
        return np.zeros(length, dtype=bool)
    num_noise = int(np.clip(np.round(length * noise_density), 1, length - 1))
    num_spans = int(min(max(np.round(num_noise / mean_span), 1), max_spans, num_noise))
    noise_lengths = _random_segmentation(num_noise, num_spans, rng)
    keep_lengths = _random_segmentation(length - num_noise, num_spans, rng)
    mask = np.zeros(length, dtype=bool)
    pos = 0
    for keep, noise in zip(keep_lengths, noise_lengths):
        pos += keep
        mask[pos:pos + noise] = True
        pos += noise
    return mask


@dataclass(frozen=True)
class SpanCorruption:
    inputs: tuple[int, ...]
    targets: tuple[int, ...]


def span_corruption(ids: list[int], rng: np.random.Generator, sentinel_ids: list[int],
                    noise_density: float = 0.15, mean_span: float = 3.0) -> SpanCorruption | None:
    """Replace each noise span by a sentinel in the input; the target lists every sentinel
    followed by the span it hides.  Sequences shorter than 2 tokens are skipped (None)."""
    if len(ids) < 2:
        return None
    mask = random_spans_noise_mask(len(ids), rng, noise_density, mean_span, len(sentinel_ids))
    inputs, targets = [], []
    span = -1
    for i, tok in enumerate(ids):
        if mask[i]:
            if i == 0 or not mask[i - 1]:
                span += 1
                inputs.append(sentinel_ids[span])
                targets.append(sentinel_ids[span])
            targets.append(tok)
        else:
            inputs.append(tok)
    return SpanCorruption(tuple(inputs), tuple(targets))


def splice(inputs, targets, sentinel_ids) -> list[int]:
    """Inverse of span_corruption: put every target span back at its sentinel."""
    sentinels = set(sentinel_ids)
    spans, current = {}, None
    for tok in targets:
        if tok in sentinels:
            current = tok
            spans[current] = []
        elif current is not None:
            spans[current].append(tok)
    out = []
    for tok in inputs:
        out.extend(spans.get(tok, []) if tok in sentinels else [tok])
    return out


def running_text(tb: Treebank, vocab: Seq2SeqVocab, max_len: int = 512) -> list[list[int]]:
    """One character sequence per sentence (forms joined by a space), cut into pieces of
    at most ``max_len`` ids."""
    out = []
    for sent in tb.sentences:
        ids = vocab.encode(" ".join(t.form for t in sent.tokens))
        out.extend(ids[i:i + max_len] for i in range(0, len(ids), max_len))
    return out


@dataclass
class Seq2SeqPretrainConfig:
    epochs: int = 100
    batch_size: int = 16
    lr: float = 1e-5
    schedule: str = "cosine"
    warmup_steps: int = 1000
    optimizer: str = "adamwscale"
    weight_decay: float = 0.0
    noise_density: float = 0.15
    mean_span: float = 3.0
    max_seq_len: int = 512
    seed: int = 0
    model: Seq2SeqConfig = field(default_factory=Seq2SeqConfig)

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = Seq2SeqConfig(**self.model)


@dataclass
class Seq2SeqResult:
    model: Seq2SeqModel
    vocab: Seq2SeqVocab
    log: list[dict]
    best_epoch: int = -1


def pretrain_seq2seq(corpus: Treebank, vocab: Seq2SeqVocab, cfg: Seq2SeqPretrainConfig,
                     on_step=None) -> Seq2SeqResult:
    """Span-corruption denoising.  Inputs and targets both end with EOS; a fresh noise
    mask is drawn for every sequence in every epoch."""
    texts = running_text(corpus, vocab, cfg.max_seq_len - 1)
    if not any(len(t) >= 2 for t in texts):
        raise ValueError("pretrain_seq2seq: no sequence of at least 2 characters")
    rng = np.random.default_rng(cfg.seed)
    torch.manual_seed(cfg.seed)
    model = build_seq2seq(_with_vocab(cfg.model, vocab), torch.Generator().manual_seed(cfg.seed))
    model.train()
    steps_per_epoch = math.ceil(len(texts) / cfg.batch_size)
    schedule = ad.LrSchedule(cfg.schedule, cfg.lr, cfg.epochs * steps_per_epoch, cfg.warmup_steps)
    opt = ad.Optimizer(model.named_parameters(), cfg.optimizer, cfg.lr, weight_decay=cfg.weight_decay,
                       schedule=schedule)
    log = []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(texts))
        for start in range(0, len(texts), cfg.batch_size):
            pairs = [span_corruption(texts[i], rng, vocab.sentinel_ids, cfg.noise_density, cfg.mean_span)
                     for i in order[start:start + cfg.batch_size]]
            pairs = [p for p in pairs if p is not None]
            if not pairs:
                continue
            loss = seq2seq_loss(model, [[*p.inputs, EOS_ID] for p in pairs], [[*p.targets, EOS_ID] for p in pairs])
            if not torch.isfinite(loss):
                raise ad.NumericalError(f"non-finite denoising loss at step {opt.step_count + 1}")
            opt.zero_grad()
            ad.backward(loss)
            opt.step()
            row = {"step": opt.step_count, "lr": opt.current_lr(), "loss": loss.item()}
            log.append(row)
            if on_step:
                on_step(row)
    model.eval()
    return Seq2SeqResult(model, vocab, log)


def _with_vocab(cfg: Seq2SeqConfig, vocab: Seq2SeqVocab) -> Seq2SeqConfig:
    return Seq2SeqConfig(**{**asdict(cfg), "vocab_size": vocab.size})


# -- lemmatisation ---------------------------------------------------------

@dataclass(frozen=True)
class LemmaExample:
    source: tuple[int, ...]  # [UPOS] + form chars + EOS
    target: tuple[int, ...]  # lemma chars + EOS, at most MAX_LEMMA_LEN ids

    @classmethod
    def build(cls, vocab: Seq2SeqVocab, form: str, upos: str, lemma: str | None = None) -> LemmaExample:
        source = (vocab.upos_id(upos), *vocab.encode(form), EOS_ID)
        target = () if lemma is None else (*vocab.encode(lemma)[:MAX_LEMMA_LEN - 1], EOS_ID)
        return cls(source, target)


def lemma_examples(tb: Treebank, vocab: Seq2SeqVocab) -> list[LemmaExample]:
    """Training pairs from gold UPoS; tokens without a lemma are skipped."""
    return [LemmaExample.build(vocab, t.form, t.upos, t.lemma) for t in tb.tokens() if t.lemma != "_"]


@dataclass
class LemmaFinetuneConfig:
    lr: float = 1e-3
    weight_decay: float = 0.01
    batch_size: int = 16
    schedule: str = "linear"
    warmup_proportion: float = 0.0
    optimizer: str = "adamw"
    patience: int = 10
    max_epochs: int = 100
    eval_beam_width: int = 3
    seed: int = 0


def clone_model(model: Seq2SeqModel) -> Seq2SeqModel:
    new = Seq2SeqModel(model.cfg).to(model.shared.weight.dtype)
    new.load_state_dict(model.state_dict())
    return new


def finetune_lemma(model: Seq2SeqModel, vocab: Seq2SeqVocab, train: list[LemmaExample],
                   valid: list[tuple[LemmaExample, str]], cfg: LemmaFinetuneConfig, on_epoch=None) -> Seq2SeqResult:
    """Teacher-forced fine-tuning of a copy of ``model``; early stopping on the validation
    lemma score (``valid`` pairs an example with its gold lemma string)."""
    if not train:
        raise ValueError("finetune_lemma: no training pairs")
    rng = np.random.default_rng(cfg.seed)
    torch.manual_seed(cfg.seed)
    model = clone_model(model)
    steps_per_epoch = math.ceil(len(train) / cfg.batch_size)
    schedule = ad.LrSchedule.with_warmup_proportion(cfg.schedule, cfg.lr, cfg.max_epochs * steps_per_epoch,
                                                    cfg.warmup_proportion)
    opt = ad.Optimizer(model.named_parameters(), cfg.optimizer, cfg.lr, weight_decay=cfg.weight_decay,
                       schedule=schedule)
    stopper = EarlyStopping(cfg.patience)
    best_state = {k: v.clone() for k, v in model.state_dict().items()}
    log = []
    for epoch in range(cfg.max_epochs):
        model.train()
        order = rng.permutation(len(train))
        losses = []
        for start in range(0, len(train), cfg.batch_size):
            chunk = [train[i] for i in order[start:start + cfg.batch_size]]
            loss = seq2seq_loss(model, [list(e.source) for e in chunk], [list(e.target) for e in chunk])
            if not torch.isfinite(loss):
                raise ad.NumericalError(f"non-finite lemma loss in epoch {epoch + 1}")
            opt.zero_grad()
            ad.backward(loss)
            opt.step()
            losses.append(loss.item())
        model.eval()
        cands = [[s for s, _ in beam_decode(model, ex.source, cfg.eval_beam_width, vocab=vocab)[:3]]
                 for ex, _ in valid]
        score = lemma_score([[vocab.decode(c) for c in cs] for cs in cands], [g for _, g in valid]).score
        log.append({"epoch": epoch + 1, "train_loss": float(np.mean(losses)), "valid_score": score})
        if on_epoch:
            on_epoch(log[-1])
        if stopper.update(score, epoch + 1):
            best_state = {k: v.clone() for k, v in model.state_dict().items()}
        if stopper.should_stop:
            break
    model.load_state_dict(best_state)
    model.eval()
    return Seq2SeqResult(model, vocab, log, stopper.best_epoch)


# -- decoding --------------------------------------------------------------

def _allowed_mask(model: Seq2SeqModel, allowed) -> torch.Tensor:
    mask = torch.zeros(model.cfg.vocab_size, dtype=torch.bool)
    mask[list(allowed)] = True
    return mask


@torch.no_grad()
def next_log_probs(model: Seq2SeqModel, memory, memory_mask, prefixes: list[tuple[int, ...]], allowed) -> torch.Tensor:
    """[len(prefixes), vocab] log-probabilities of the next token, renormalised over
    ``allowed`` (disallowed ids get -inf)."""
    dec_in = torch.tensor([(PAD_ID, *p) for p in prefixes], dtype=torch.long)
    n = len(prefixes)
    logits = model.decode(memory.expand(n, -1, -1), memory_mask.expand(n, -1), dec_in)[:, -1]
    logits = logits.masked_fill(~_allowed_mask(model, allowed), float("-inf"))
    return torch.log_softmax(logits, dim=-1)


def _allowed(model, vocab):
    return vocab.output_ids() if vocab is not None else range(model.cfg.vocab_size)


@torch.no_grad()
def beam_decode(model: Seq2SeqModel, source, width: int = 20, max_len: int = MAX_LEMMA_LEN,
                vocab: Seq2SeqVocab | None = None, eos_id: int = EOS_ID) -> list[tuple[tuple[int, ...], float]]:
    """Length-unnormalised beam search.

    Every step extends all live hypotheses, keeps the ``width`` best extensions (a
    stable sort, so ties go to the earlier hypothesis and the lower token id), and
    moves those ending in EOS to the finished list.  Hypotheses reaching ``max_len``
    tokens are finished as they are.  Returns up to ``width`` finished hypotheses
    (token ids including the final EOS, log-probability), best first.
    """
    if width < 1:
        raise ValueError("beam width must be >= 1")
    model.eval()
    allowed = list(_allowed(model, vocab))
    memory, mask = model.encode(torch.tensor([list(source)], dtype=torch.long))
    alive: list[tuple[tuple[int, ...], float]] = [((), 0.0)]
    finished: list[tuple[tuple[int, ...], float]] = []
    for _ in range(max_len):
        lp = next_log_probs(model, memory, mask, [h for h, _ in alive], allowed)
        cands = [(h + (tok,), score + lp[i, tok].item()) for i, (h, score) in enumerate(alive) for tok in allowed]
        cands = sorted(cands, key=lambda c: -c[1])[:width]
        alive = []
        for hyp, score in cands:
            if hyp[-1] == eos_id or len(hyp) == max_len:
                finished.append((hyp, score))
            else:
                alive.append((hyp, score))
        if not alive:
            break
    return sorted(finished, key=lambda c: -c[1])[:width]


@torch.no_grad()
def greedy_decode(model: Seq2SeqModel, source, max_len: int = MAX_LEMMA_LEN, vocab: Seq2SeqVocab | None = None,
                  eos_id: int = EOS_ID) -> tuple[tuple[int, ...], float]:
    model.eval()
    allowed = list(_allowed(model, vocab))
    memory, mask = model.encode(torch.tensor([list(source)], dtype=torch.long))
    hyp, score = (), 0.0
    while len(hyp) < max_len:
        lp = next_log_probs(model, memory, mask, [hyp], allowed)[0]
        tok = int(lp.argmax())
        hyp, score = hyp + (tok,), score + lp[tok].item()
        if tok == eos_id:
            break
    return hyp, score


def sequence_log_prob(model: Seq2SeqModel, source, hyp, vocab: Seq2SeqVocab | None = None) -> float:
    """Sum of per-step log-probabilities of ``hyp`` under the same scoring as the decoders."""
    allowed = list(_allowed(model, vocab))
    with torch.no_grad():
        memory, mask = model.encode(torch.tensor([list(source)], dtype=torch.long))
        lp = next_log_probs(model, memory, mask, [tuple(hyp[:t]) for t in range(len(hyp))], allowed)
    return float(sum(lp[t, tok].item() for t, tok in enumerate(hyp)))


@dataclass(frozen=True)
class LemmaPrediction:
    candidates: tuple[str, ...]  # at most 3, distinct, best first
    scores: tuple[float, ...]


def top_lemmas(model: Seq2SeqModel, vocab: Seq2SeqVocab, form: str, upos: str, width: int = 20,
               k: int = 3) -> LemmaPrediction:
    seen, cands, scores = set(), [], []
    for hyp, score in beam_decode(model, LemmaExample.build(vocab, form, upos).source, width, vocab=vocab):
        s = vocab.decode(hyp)
        if s not in seen:
            seen.add(s)
            cands.append(s)
            scores.append(score)
        if len(cands) == k:
            break
    return LemmaPrediction(tuple(cands), tuple(scores))


def lemmatize_treebank(model: Seq2SeqModel, vocab: Seq2SeqVocab, tagged: Treebank, width: int = 20,
                       k: int = 3) -> list[list[LemmaPrediction]]:
    """Top-k lemmata per token, conditioned on the (predicted) UPoS already in ``tagged``.
    Results depend only on (form, UPoS), so repeated pairs are decoded once."""
    cache: dict[tuple[str, str], LemmaPrediction] = {}
    out = []
    for sent in tagged.sentences:
        row = []
        for tok in sent.tokens:
            if tok.upos in ("", "_"):
                raise ValueError(f"sentence {sent.id!r}: token {tok.form!r} has no UPoS; "
                                 "run PoS prediction before lemmatisation")
            key = (tok.form, tok.upos)
            if key not in cache:
                cache[key] = top_lemmas(model, vocab, tok.form, tok.upos, width, k)
            row.append(cache[key])
        out.append(row)
    return out


LEMMA_TSV_HEADER = ("token_id", "form", "upos", "lemma_1", "logprob_1", "lemma_2", "logprob_2",
                    "lemma_3", "logprob_3")


def write_lemma_tsv(tagged: Treebank, predictions: list[list[LemmaPrediction]], path) -> None:
    lines = ["\t".join(LEMMA_TSV_HEADER)]
    for sent, preds in zip(tagged.sentences, predictions):
        for i, (tok, p) in enumerate(zip(sent.tokens, preds)):
            cells = [f"{sent.id}:{i + 1}", tok.form, tok.upos]
            for j in range(3):
                cells += [p.candidates[j], f"{p.scores[j]:.6f}"] if j < len(p.candidates) else ["", ""]
            lines.append("\t".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_lemma_tsv(path) -> list[list[str]]:
    """Candidate lists in file order (one per token)."""
    rows = Path(path).read_text(encoding="utf-8").rstrip("\n").split("\n")
    if tuple(rows[0].split("\t")) != LEMMA_TSV_HEADER:
        raise ValueError(f"{path}: not a lemma prediction file")
    out = []
    for r in rows[1:]:
        cells = r.split("\t")
        out.append([c for c in cells[3::2] if c])
    return out


def seq2seq_manifest(model: Seq2SeqModel, vocab: Seq2SeqVocab, language: str = "", **extra) -> dict:
    return {"kind": "seq2seq", "config": asdict(model.cfg), "vocab": vocab.itos, "language": language, **extra}


def seq2seq_from_checkpoint(arrays: dict, manifest: dict) -> tuple[Seq2SeqModel, Seq2SeqVocab]:
    if manifest.get("kind") != "seq2seq":
        raise ValueError(f"not a seq2seq checkpoint (kind={manifest.get('kind')!r})")
    vocab = Seq2SeqVocab.from_entries(manifest["vocab"])
    model = Seq2SeqModel(Seq2SeqConfig(**manifest["config"])).to(arrays["shared.weight"].dtype)
    model.load_state_dict(arrays)
    model.eval()
    return model, vocab
