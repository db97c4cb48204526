"""Hierarchical character/word encoder with a character-restoring head.

An intra-word encoder runs over each word's characters (never across word
boundaries); its [WORD_CLS] outputs form the input sequence of an inter-word
encoder.  For pre-training, a generator and a discriminator are built from the
same pieces and share the character embedding table through gradient-
disentangled embedding sharing (GDES).
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, replace

import torch
from torch import nn

from histlm import autodiff as ad
from histlm.attention import Encoder, EncoderLayer, EncoderLayerConfig
from histlm.charvocab import MAX_SEQ_LEN, MAX_WORD_LEN, PAD_ID, CharVocab, EncodedSentence


@dataclass
class HlmConfig:
    vocab_size: int = 0
    hidden_size: int = 768
    intra_layers: int = 4
    inter_layers: int = 12
    intra_intermediate_size: int = 1536
    inter_intermediate_size: int = 3072
    attention_heads: int = 12
    max_word_len: int = MAX_WORD_LEN
    max_seq_len: int = MAX_SEQ_LEN
    dropout: float = 0.1
    initializer_range: float = ad.INIT_STD

    @classmethod
    def generator(cls, vocab_size=0, **overrides):
        return cls(vocab_size, intra_layers=3, inter_layers=6, **overrides)

    @classmethod
    def discriminator(cls, vocab_size=0, **overrides):
        return cls(vocab_size, intra_layers=4, inter_layers=12, **overrides)

    def intra_layer_config(self):
        return EncoderLayerConfig(self.hidden_size, self.intra_intermediate_size, self.attention_heads,
                                  self.dropout, self.max_word_len)

    def inter_layer_config(self):
        return EncoderLayerConfig(self.hidden_size, self.inter_intermediate_size, self.attention_heads,
                                  self.dropout, self.max_seq_len)


@dataclass
class CharBatch:
    char_ids: torch.Tensor  # [B, W, L], PAD-filled

    @property
    def char_mask(self):
        return self.char_ids != PAD_ID

    @property
    def word_mask(self):
        return self.char_ids[..., 0] != PAD_ID

    @property
    def maskable(self):
        """Real character slots: non-PAD and not the WORD_CLS column."""
        m = self.char_mask.clone()
        m[..., 0] = False
        return m


def collate(encs: list[EncodedSentence], max_word_len: int = MAX_WORD_LEN) -> CharBatch:
    if not encs or any(len(e) == 0 for e in encs):
        raise ValueError("cannot collate an empty sentence")
    width = max(len(e) for e in encs)
    ids = torch.full((len(encs), width, max_word_len), PAD_ID, dtype=torch.long)
    for b, enc in enumerate(encs):
        for w, word in enumerate(enc.words):
            if len(word) > max_word_len:
                raise ValueError(f"word of length {len(word)} exceeds max_word_len {max_word_len}")
            ids[b, w, :len(word)] = torch.tensor(word.char_ids)
    return CharBatch(ids)


@dataclass
class WordRepresentations:
    intra_word_cls: torch.Tensor    # [B, W, d], context-free
    inter_contextual: torch.Tensor  # [B, W, d]
    char_states: torch.Tensor       # [B, W, L, d]
    char_mask: torch.Tensor         # [B, W, L]
    word_mask: torch.Tensor         # [B, W]


def gdes_embeddings(generator_emb, delta_emb):
    """Discriminator table = sg(generator table) + delta: discriminator losses reach only delta."""
    if generator_emb.shape != delta_emb.shape:
        raise ad.ShapeError(f"gdes_embeddings: generator table {tuple(generator_emb.shape)} vs "
                            f"delta {tuple(delta_emb.shape)}")
    return ad.stop_gradient(generator_emb) + delta_emb


class CharEmbedding(nn.Module):
    def __init__(self, vocab_size, hidden_size):
        super().__init__()
        self.weight = nn.Parameter(torch.zeros(vocab_size, hidden_size))

    trunc_normal_params = ("weight",)

    def table(self):
        return self.weight


class GdesEmbedding(nn.Module):
    """Delta table on top of a generator's embedding (held by reference, not registered)."""

    def __init__(self, source: CharEmbedding):
        super().__init__()
        object.__setattr__(self, "source", source)
        self.delta = nn.Parameter(torch.zeros_like(source.weight))

    def table(self):
        return gdes_embeddings(self.source.weight, self.delta)


class HlmEncoder(nn.Module):
    def __init__(self, cfg: HlmConfig, embedding: nn.Module | None = None):
        super().__init__()
        self.cfg = cfg
        self.embeddings = embedding if embedding is not None else CharEmbedding(cfg.vocab_size, cfg.hidden_size)
        self.embed_norm = nn.LayerNorm(cfg.hidden_size, eps=1e-7)
        self.dropout = nn.Dropout(cfg.dropout)
        self.intra = Encoder(cfg.intra_layer_config(), cfg.intra_layers)
        self.inter = Encoder(cfg.inter_layer_config(), cfg.inter_layers)

    def forward(self, batch: CharBatch | torch.Tensor) -> WordRepresentations:
        ids = batch.char_ids if isinstance(batch, CharBatch) else batch
        if ids.dim() != 3 or ids.shape[1] == 0:
            raise ValueError(f"encode: expected [batch, words>0, chars] ids, got {tuple(ids.shape)}")
        b, w, l = ids.shape
        char_mask = ids != PAD_ID
        word_mask = char_mask[..., 0]
        x = ad.embedding_lookup(self.embeddings.table(), ids)
        x = self.dropout(self.embed_norm(x))
        d = x.shape[-1]
        # every word is its own attention problem: [B*W, L, d]
        h = self.intra(x.reshape(b * w, l, d), char_mask.reshape(b * w, l)).reshape(b, w, l, d)
        cls = h[:, :, 0]
        ctx = self.inter(cls, word_mask)
        return WordRepresentations(cls, ctx, h, char_mask, word_mask)


def encode(encoder: HlmEncoder, encs: list[EncodedSentence]) -> WordRepresentations:
    return encoder(collate(encs, encoder.cfg.max_word_len))


class CharHead(nn.Module):
    """One intra-word layer over [contextual word vector, char_1, ..., char_L-1] followed
    by a dense/GELU/LayerNorm transform.  The relative-position table is borrowed from
    the encoder's intra-word stack."""

    def __init__(self, cfg: HlmConfig, encoder: HlmEncoder):
        super().__init__()
        object.__setattr__(self, "_encoder", encoder)
        self.layer = EncoderLayer(cfg.intra_layer_config())
        self.transform = nn.Linear(cfg.hidden_size, cfg.hidden_size)
        self.norm = nn.LayerNorm(cfg.hidden_size, eps=1e-7)

    @property
    def relpos(self):
        return self._encoder.intra.relpos

    def hidden(self, reprs: WordRepresentations):
        seq = torch.cat([reprs.inter_contextual[:, :, None], reprs.char_states[:, :, 1:]], dim=2)
        b, w, l, d = seq.shape
        y = self.layer(seq.reshape(b * w, l, d), self.relpos, reprs.char_mask.reshape(b * w, l))
        return self.norm(ad.gelu(self.transform(y.reshape(b, w, l, d))))


class LmHead(CharHead):
    """Per-character vocabulary logits; output projection tied to the embedding table."""

    def __init__(self, cfg: HlmConfig, encoder: HlmEncoder):
        super().__init__(cfg, encoder)
        self.bias = nn.Parameter(torch.zeros(cfg.vocab_size))

    def forward(self, reprs):
        return self.hidden(reprs) @ self._encoder.embeddings.table().T + self.bias


class RtdHead(CharHead):
    """Per-character replaced/original logit."""

    def __init__(self, cfg: HlmConfig, encoder: HlmEncoder):
        super().__init__(cfg, encoder)
        self.score = nn.Linear(cfg.hidden_size, 1)

    def forward(self, reprs):
        return self.score(self.hidden(reprs)).squeeze(-1)


def lm_head(head: LmHead, reprs: WordRepresentations):
    return head(reprs)


class MaskedLM(nn.Module):
    def __init__(self, cfg: HlmConfig, embedding=None):
        super().__init__()
        self.encoder = HlmEncoder(cfg, embedding)
        self.head = LmHead(cfg, self.encoder)

    def forward(self, ids):
        return self.head(self.encoder(ids))


class ReplacedTokenDetector(nn.Module):
    def __init__(self, cfg: HlmConfig, embedding=None):
        super().__init__()
        self.encoder = HlmEncoder(cfg, embedding)
        self.head = RtdHead(cfg, self.encoder)

    def forward(self, ids):
        return self.head(self.encoder(ids))


class HlmPretrainModel(nn.Module):
    """Generator (masked LM) + discriminator (RTD) coupled through GDES."""

    def __init__(self, gen_cfg: HlmConfig, disc_cfg: HlmConfig, generator: torch.Generator | None = None,
                 dtype=None):
        super().__init__()
        if gen_cfg.vocab_size != disc_cfg.vocab_size or gen_cfg.hidden_size != disc_cfg.hidden_size:
            raise ValueError("generator and discriminator must agree on vocab and hidden sizes")
        self.gen_cfg, self.disc_cfg = gen_cfg, disc_cfg
        self.generator = MaskedLM(gen_cfg)
        self.discriminator = ReplacedTokenDetector(disc_cfg, GdesEmbedding(self.generator.encoder.embeddings))
        self.to(dtype or ad.DTYPE)
        ad.init_weights(self, generator, disc_cfg.initializer_range)

    def discriminator_embeddings(self):
        return self.discriminator.encoder.embeddings.table()

    def export_discriminator(self) -> HlmEncoder:
        """Standalone discriminator encoder with the effective (shared + delta) embedding table."""
        enc = HlmEncoder(self.disc_cfg).to(self.generator.encoder.embeddings.weight.dtype)
        state = {k: v for k, v in self.discriminator.encoder.state_dict().items()
                 if not k.startswith("embeddings.")}
        state["embeddings.weight"] = self.discriminator_embeddings().detach().clone()
        enc.load_state_dict(state)
        return enc


def build_encoder(cfg: HlmConfig, generator: torch.Generator | None = None, dtype=None) -> HlmEncoder:
    enc = HlmEncoder(cfg).to(dtype or ad.DTYPE)
    ad.init_weights(enc, generator, cfg.initializer_range)
    return enc


def count_parameters(model: nn.Module, exclude_embeddings: bool = False) -> int:
    total = 0
    for name, p in model.named_parameters():
        if not p.requires_grad:
            continue
        if exclude_embeddings and name.split(".")[-2:-1] == ["embeddings"]:
            continue
        total += p.numel()
    return total


def parameter_ratio(gen_cfg: HlmConfig, disc_cfg: HlmConfig) -> tuple[int, int]:
    """Non-embedding parameter counts (generator + LM head, discriminator + RTD head),
    computed on the meta device so full-size configs cost no memory."""
    with torch.device("meta"):
        model = HlmPretrainModel(gen_cfg, disc_cfg, dtype=torch.float32)
    return (count_parameters(model.generator, exclude_embeddings=True),
            count_parameters(model.discriminator, exclude_embeddings=True))


def encoder_manifest(encoder: HlmEncoder, vocab: CharVocab, language: str = "", **extra) -> dict:
    return {"kind": "hlm-encoder", "config": asdict(encoder.cfg), "vocab": vocab.itos,
            "language": language, **extra}


def encoder_from_checkpoint(arrays: dict, manifest: dict) -> tuple[HlmEncoder, CharVocab]:
    cfg = HlmConfig(**manifest["config"])
    vocab = CharVocab.from_entries(manifest["vocab"])
    if cfg.vocab_size != vocab.size:
        raise ValueError(f"checkpoint vocab size {cfg.vocab_size} != vocabulary entries {vocab.size}")
    enc = HlmEncoder(cfg).to(arrays["embeddings.weight"].dtype)
    enc.load_state_dict(arrays)
    return enc, vocab


def clone_encoder(encoder: HlmEncoder, **cfg_overrides) -> HlmEncoder:
    """Deep copy, optionally with config overrides that do not change parameter shapes (e.g. dropout)."""
    enc = copy.deepcopy(encoder)
    if cfg_overrides:
        cfg = replace(encoder.cfg, **cfg_overrides)
        new = HlmEncoder(cfg).to(encoder.embeddings.weight.dtype)
        new.load_state_dict(enc.state_dict())
        enc = new
    return enc
