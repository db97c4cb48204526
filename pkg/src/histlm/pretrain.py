"""Character masking strategies, MLM / replaced-token-detection objectives and the
pre-training loop."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from histlm import autodiff as ad
from histlm.charvocab import MASK_ID, SPECIALS, CharVocab, EncodedSentence, encode_sentence
from histlm.corpus import Treebank
from histlm.hlm import CharBatch, HlmConfig, HlmEncoder, HlmPretrainModel, MaskedLM, collate

STRATEGIES = ("whole_word", "char", "char_ngram")
MAX_SPAN = 4


def round_half_up(x: float) -> int:
    return math.floor(x + 0.5 + 1e-9)


def mask_count(n: int, rate: float) -> int:
    return 0 if n == 0 else max(1, round_half_up(rate * n))


@dataclass(frozen=True)
class MaskPlan:
    masked_positions: frozenset  # of (word_index, char_index); char_index >= 1
    strategy: str
    mask_rate: float = 0.15
    span_lengths: tuple[int, ...] = ()  # sampled lengths, char_ngram only

    def __len__(self):
        return len(self.masked_positions)


def maskable_positions(enc: EncodedSentence) -> list[tuple[int, int]]:
    return [(w, c) for w, word in enumerate(enc.words) for c in range(1, len(word))]


def plan_masks(enc: EncodedSentence, strategy: str, rng: np.random.Generator,
               mask_rate: float = 0.15) -> MaskPlan:
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown masking strategy {strategy!r}; expected one of {STRATEGIES}")
    slots = maskable_positions(enc)
    if not slots:
        return MaskPlan(frozenset(), strategy, mask_rate)
    if strategy == "char":
        pick = rng.choice(len(slots), mask_count(len(slots), mask_rate), replace=False)
        return MaskPlan(frozenset(slots[i] for i in pick), strategy, mask_rate)
    if strategy == "whole_word":
        words = [w for w, word in enumerate(enc.words) if len(word) > 1]
        chosen = rng.choice(words, mask_count(len(words), mask_rate), replace=False)
        masked = {(int(w), c) for w in chosen for c in range(1, len(enc.words[int(w)]))}
        return MaskPlan(frozenset(masked), strategy, mask_rate)

    target = mask_count(len(slots), mask_rate)
    masked: set[tuple[int, int]] = set()
    spans = []
    while len(masked) < target:
        length = int(rng.integers(1, MAX_SPAN + 1))
        w, c = slots[int(rng.integers(len(slots)))]
        spans.append(length)
        masked.update((w, j) for j in range(c, min(c + length, len(enc.words[w]))))
    return MaskPlan(frozenset(masked), strategy, mask_rate, tuple(spans))


def plans_to_mask(plans: list[MaskPlan], shape) -> torch.Tensor:
    mask = torch.zeros(shape, dtype=torch.bool)
    for b, plan in enumerate(plans):
        for w, c in plan.masked_positions:
            mask[b, w, c] = True
    return mask


def mask_inputs(ids: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    return ids.masked_fill(mask, MASK_ID)


def mlm_loss(model: MaskedLM, batch: CharBatch, mask: torch.Tensor) -> torch.Tensor:
    """Cross-entropy of the LM head at masked positions only (input = MASK there)."""
    if not mask.any():
        raise ValueError("mlm_loss: empty mask plan")
    logits = model(mask_inputs(batch.char_ids, mask))
    return ad.cross_entropy(logits[mask], batch.char_ids[mask])


def replaced_labels(original: torch.Tensor, corrupted: torch.Tensor) -> torch.Tensor:
    return corrupted != original


@dataclass
class RtdOutput:
    gen_loss: torch.Tensor
    disc_loss: torch.Tensor
    combined: torch.Tensor
    disc_accuracy: float
    corrupted: torch.Tensor
    labels: torch.Tensor


def sample_replacements(logits: torch.Tensor, generator: torch.Generator | None) -> torch.Tensor:
    """Draw one id per row from softmax(logits); special tokens are never sampled."""
    if not torch.isfinite(logits).all():
        raise ad.NumericalError("non-finite generator logits while sampling replacements")
    logits = logits.detach().clone()
    logits[:, : len(SPECIALS)] = float("-inf")
    probs = torch.softmax(logits, dim=-1)
    return torch.multinomial(probs, 1, generator=generator).squeeze(-1)


def rtd_step(model: HlmPretrainModel, batch: CharBatch, mask: torch.Tensor, rtd_weight: float = 50.0,
             generator: torch.Generator | None = None, sample_fn=None) -> RtdOutput:
    ids = batch.char_ids
    if not mask.any():
        raise ValueError("rtd_step: empty mask plan")
    gen_logits = model.generator(mask_inputs(ids, mask))
    gen_loss = ad.cross_entropy(gen_logits[mask], ids[mask])
    with torch.no_grad():
        if sample_fn is not None:
            samples = sample_fn(gen_logits[mask], ids[mask])
        else:
            samples = sample_replacements(gen_logits[mask], generator)
        corrupted = ids.clone()
        corrupted[mask] = samples
    labels = replaced_labels(ids, corrupted)
    disc_logits = model.discriminator(corrupted)
    scored = batch.maskable
    disc_loss = ad.binary_cross_entropy(disc_logits, labels, weight=scored)
    with torch.no_grad():
        acc = ((disc_logits > 0) == labels)[scored].double().mean().item()
    return RtdOutput(gen_loss, disc_loss, gen_loss + rtd_weight * disc_loss, acc, corrupted, labels)


@dataclass
class PretrainConfig:
    objective: str = "rtd"  # rtd | mlm
    strategy: str = "char_ngram"
    mask_rate: float = 0.15
    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-5
    schedule: str = "constant"
    warmup_proportion: float = 0.1
    optimizer: str = "adam"
    weight_decay: float = 0.01
    rtd_weight: float = 50.0
    seed: int = 0
    generator: HlmConfig = field(default_factory=HlmConfig.generator)
    discriminator: HlmConfig = field(default_factory=HlmConfig.discriminator)

    def __post_init__(self):
        if self.objective not in ("rtd", "mlm"):
            raise ValueError(f"unknown objective {self.objective!r}")
        if isinstance(self.generator, dict):
            self.generator = HlmConfig(**self.generator)
        if isinstance(self.discriminator, dict):
            self.discriminator = HlmConfig(**self.discriminator)


LOG_COLUMNS = ("step", "lr", "gen_loss", "disc_loss", "disc_accuracy")


def format_log(rows: list[dict]) -> str:
    lines = ["\t".join(LOG_COLUMNS)]
    for r in rows:
        lines.append("\t".join([str(r["step"]), f"{r['lr']:.6g}", f"{r['gen_loss']:.6f}",
                                f"{r['disc_loss']:.6f}", f"{r['disc_accuracy']:.4f}"]))
    return "\n".join(lines) + "\n"


@dataclass
class PretrainResult:
    model: torch.nn.Module  # HlmPretrainModel (rtd) or MaskedLM (mlm)
    encoder: HlmEncoder  # what gets fine-tuned
    log: list[dict]
    optimizer: ad.Optimizer
    rng: np.random.Generator


class DivergenceError(ad.NumericalError):
    def __init__(self, message, last_good_state: dict):
        super().__init__(message)
        self.last_good_state = last_good_state


def encode_corpus(tb: Treebank, vocab: CharVocab, max_word_len: int, max_seq_len: int):
    return [w for s in tb.sentences for w in encode_sentence(s, vocab, max_word_len, max_seq_len)]


def _fill_vocab(cfg: HlmConfig, vocab: CharVocab) -> HlmConfig:
    return replace(cfg, vocab_size=vocab.size)


def pretrain(corpus: Treebank, vocab: CharVocab, cfg: PretrainConfig, on_step=None) -> PretrainResult:
    """Pre-train on ``corpus``; the returned encoder is the discriminator (RTD) or the
    masked LM's encoder (MLM).  The generator is discarded."""
    gen_cfg = _fill_vocab(cfg.generator, vocab)
    disc_cfg = _fill_vocab(cfg.discriminator, vocab)
    encs = encode_corpus(corpus, vocab, disc_cfg.max_word_len, disc_cfg.max_seq_len)
    if not encs:
        raise ValueError("pretrain: empty corpus")
    rng = np.random.default_rng(cfg.seed)
    tgen = torch.Generator().manual_seed(cfg.seed)
    torch.manual_seed(cfg.seed)
    if cfg.objective == "rtd":
        model = HlmPretrainModel(gen_cfg, disc_cfg, tgen)
    else:
        model = MaskedLM(disc_cfg).to(ad.DTYPE)
        ad.init_weights(model, tgen, disc_cfg.initializer_range)
    model.train()

    steps_per_epoch = math.ceil(len(encs) / cfg.batch_size)
    schedule = ad.LrSchedule.with_warmup_proportion(cfg.schedule, cfg.lr, cfg.epochs * steps_per_epoch,
                                                    cfg.warmup_proportion)
    opt = ad.Optimizer(model.named_parameters(), cfg.optimizer, cfg.lr, weight_decay=cfg.weight_decay,
                       schedule=schedule)
    log = []
    last_good = {k: v.clone() for k, v in model.state_dict().items()}
    for _ in range(cfg.epochs):
        order = rng.permutation(len(encs))
        for start in range(0, len(encs), cfg.batch_size):
            chunk = [encs[i] for i in order[start:start + cfg.batch_size]]
            plans = [plan_masks(e, cfg.strategy, rng, cfg.mask_rate) for e in chunk]
            batch = collate(chunk, disc_cfg.max_word_len)
            mask = plans_to_mask(plans, batch.char_ids.shape)
            try:
                if cfg.objective == "rtd":
                    out = rtd_step(model, batch, mask, cfg.rtd_weight, tgen)
                    loss, row = out.combined, {"gen_loss": out.gen_loss.item(), "disc_loss": out.disc_loss.item(),
                                               "disc_accuracy": out.disc_accuracy}
                else:
                    loss = mlm_loss(model, batch, mask)
                    row = {"gen_loss": loss.item(), "disc_loss": float("nan"), "disc_accuracy": float("nan")}
                if not torch.isfinite(loss):
                    raise ad.NumericalError(f"non-finite loss at step {opt.step_count + 1}")
                opt.zero_grad()
                ad.backward(loss)
                opt.step()
            except ad.NumericalError as exc:
                raise DivergenceError(str(exc), last_good) from exc
            row = {"step": opt.step_count, "lr": opt.current_lr(), **row}
            log.append(row)
            if on_step:
                on_step(row)
        last_good = {k: v.clone() for k, v in model.state_dict().items()}
    model.eval()
    encoder = model.export_discriminator() if cfg.objective == "rtd" else model.encoder
    return PretrainResult(model, encoder, log, opt, rng)


@torch.no_grad()
def evaluate_rtd(model: HlmPretrainModel, encs: list[EncodedSentence], strategy="char_ngram", seed=0,
                 batch_size=16, mask_rate=0.15) -> float:
    """Discriminator token accuracy over one masking pass of ``encs``."""
    rng = np.random.default_rng(seed)
    tgen = torch.Generator().manual_seed(seed)
    model.eval()
    correct = total = 0
    for start in range(0, len(encs), batch_size):
        chunk = encs[start:start + batch_size]
        batch = collate(chunk, model.disc_cfg.max_word_len)
        mask = plans_to_mask([plan_masks(e, strategy, rng, mask_rate) for e in chunk], batch.char_ids.shape)
        out = rtd_step(model, batch, mask, generator=tgen)
        n = int(batch.maskable.sum())
        correct += out.disc_accuracy * n
        total += n
    return correct / total
