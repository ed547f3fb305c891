"""Full joint model: encoders, label attention, co-attention and decoders."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import torch
from torch import nn

from .coattention import CoAttention, CoAttentionStack, SoftSlotEmbedding
from .corpus import Batch, LabelHierarchy, Vocabularies
from .decoders import CRF, IntentHead
from .encoders import LSTM, SharedEncoder, TaskSpecificEncoder, TaskSpecificFeatures
from .label_attention import LabelAttention, LabelSpecificReprs
from .numerics import concat_rows

ABLATIONS = ("full", "no_slot_label_attention", "no_coattention")

INIT_RANGE = 0.1


class ConfigError(ValueError):
    pass


@dataclass
class Dims:
    """Layer sizes. Defaults are the MixATIS settings."""

    word_dim: int = 64
    word_hidden: int = 64
    sa_dim: int = 256
    char_dim: int = 32
    char_hidden: int = 32
    task_hidden: int = 128
    d_a: int = 256
    d_p: int = 32
    d_s: int = 128
    d: int = 128

    @property
    def shared_width(self) -> int:
        return 2 * self.word_hidden + self.sa_dim + 2 * self.char_hidden

    @property
    def d_e(self) -> int:
        return 2 * self.task_hidden


def check_ablation(name: str) -> str:
    if name not in ABLATIONS:
        raise ConfigError(f"unknown ablation {name!r}; expected one of {', '.join(ABLATIONS)}")
    return name


@dataclass
class ModelOutput:
    intent_logits: torch.Tensor  # (b, |L^I|)
    count_logits: torch.Tensor  # (b, z)
    emissions: torch.Tensor  # (b, K, n)
    mask: torch.Tensor  # (b, n)
    features: TaskSpecificFeatures
    reprs: LabelSpecificReprs
    S: Optional[torch.Tensor] = None
    stack: Optional[CoAttentionStack] = None

    @property
    def intent_probs(self) -> torch.Tensor:
        return torch.sigmoid(self.intent_logits)


class MiscaModel(nn.Module):
    def __init__(
        self,
        hierarchy: LabelHierarchy,
        n_words: int,
        n_chars: int,
        dims: Optional[Dims] = None,
        ablation: str = "full",
        dropout: float = 0.0,
    ):
        super().__init__()
        self.hierarchy = hierarchy
        self.dims = dims = dims or Dims()
        self.ablation = check_ablation(ablation)
        self.levels = hierarchy.levels
        n_intents = len(hierarchy.intent_labels)
        n_tags = hierarchy.bio_tag_count
        d_e = dims.d_e

        self.shared = SharedEncoder(
            n_words, n_chars, dims.word_dim, dims.word_hidden, dims.sa_dim, dims.char_dim, dims.char_hidden, dropout
        )
        self.task = TaskSpecificEncoder(self.shared.output_size, dims.task_hidden, dropout)
        slot_sizes = [len(level) for level in hierarchy.slot_levels]
        self.label_attention = LabelAttention(
            d_e, n_intents, slot_sizes, dims.d_a, dims.d_p, use_slots=self.ablation == "full"
        )
        if self.ablation == "no_coattention":
            self.soft_slots = None
            self.coattention = None
            head_width = d_e
        else:
            self.soft_slots = SoftSlotEmbedding(d_e, n_tags, dims.d_s)
            widths = [d_e]
            if self.ablation == "full":
                widths += [self.label_attention.level_width(k) for k in range(1, self.levels + 1)]
            widths.append(dims.d_s)
            self.coattention = CoAttention(widths, dims.d)
            head_width = d_e + dims.d
        self.intent_head = IntentHead(head_width, d_e, n_intents, hierarchy.max_intents)
        self.crf = CRF(head_width, n_tags)

    @property
    def chain_length(self) -> int:
        return 0 if self.coattention is None else len(self.coattention.widths)

    def reset_parameters(self, seed: Optional[int] = None) -> None:
        """Uniform [-0.1, 0.1]; LSTM forget-gate biases 1.0; CRF transitions 0."""
        gen = torch.Generator().manual_seed(seed) if seed is not None else None
        with torch.no_grad():
            for name, p in self.named_parameters():
                p.copy_(torch.rand(p.shape, generator=gen) * 2 * INIT_RANGE - INIT_RANGE)
            for m in self.modules():
                if isinstance(m, LSTM):
                    h = m.hidden_size
                    m.bias[h : 2 * h] = 1.0
            self.crf.transitions.zero_()

    def forward(self, batch: Batch) -> ModelOutput:
        if batch.gold_intents.shape[-1] != len(self.hierarchy.intent_labels):
            raise ConfigError(
                f"batch encodes {batch.gold_intents.shape[-1]} intents, model was built for "
                f"{len(self.hierarchy.intent_labels)}"
            )
        mask = batch.mask
        e = self.shared(batch.token_ids, batch.char_ids, mask)
        feats = self.task(e, mask)
        reprs = self.label_attention(feats.E_I, feats.E_S, mask)
        if self.coattention is None:
            intent_logits, count_logits = self.intent_head(reprs.V_I)
            emissions = self.crf.emissions(feats.E_S)
            return ModelOutput(intent_logits, count_logits, emissions, mask, feats, reprs)
        # pad columns of S are zeroed so they contribute nothing to C_L
        S = self.soft_slots(feats.E_S) * mask[:, None, :]
        stack = self.coattention([reprs.V_I, *reprs.V_S, S])
        H_bwd_1, H_fwd_last = stack.H_bwd[0], stack.H_fwd[-1]
        intent_logits, count_logits = self.intent_head(reprs.V_I, H_bwd_1)
        emissions = self.crf.emissions(concat_rows(feats.E_S, H_fwd_last))
        return ModelOutput(intent_logits, count_logits, emissions, mask, feats, reprs, S, stack)


def parameter_census(model: nn.Module) -> Tuple[List[Tuple[str, Tuple[int, ...]]], int]:
    """Named parameter shapes in registration order, plus the total count."""
    entries = [(name, tuple(p.shape)) for name, p in model.named_parameters()]
    return entries, sum(p.numel() for p in model.parameters())


def _lstm(inp: int, h: int) -> int:
    return 4 * h * (inp + h) + 4 * h


def analytic_parameter_count(
    dims: Dims, n_words: int, n_chars: int, hierarchy: LabelHierarchy, ablation: str = "full"
) -> int:
    """Closed-form parameter count (see README, "Parameter count")."""
    check_ablation(ablation)
    d_e = dims.d_e
    n_I = len(hierarchy.intent_labels)
    K = hierarchy.bio_tag_count
    z = hierarchy.max_intents
    sizes = [len(level) for level in hierarchy.slot_levels]

    total = n_words * dims.word_dim + n_chars * dims.char_dim
    total += 2 * _lstm(dims.word_dim, dims.word_hidden)
    total += 3 * (dims.word_dim * dims.sa_dim + dims.sa_dim)
    total += 2 * _lstm(dims.char_dim, dims.char_hidden)
    total += 4 * _lstm(dims.shared_width, dims.task_hidden)
    total += n_I * dims.d_a + dims.d_a * d_e
    widths = [d_e]
    if ablation == "full":
        for k, m in enumerate(sizes, 1):
            total += m * dims.d_a + dims.d_a * d_e
            if k < len(sizes):
                total += m * (d_e if k == 1 else d_e + dims.d_p) + dims.d_p * m
        widths += [d_e if k == 1 else d_e + dims.d_p for k in range(1, len(sizes) + 1)]
    head = d_e
    if ablation != "no_coattention":
        widths.append(dims.d_s)
        total += dims.d_s * K + K * d_e
        total += sum(2 * dims.d * w for w in widths)
        total += sum(a * b for a, b in zip(widths[:-1], widths[1:]))
        head = d_e + dims.d
    total += n_I * head + z * n_I + d_e
    total += K * head + (K + 2) ** 2
    return total


def build_model(
    hierarchy: LabelHierarchy,
    vocabs: Vocabularies,
    dims: Optional[Dims] = None,
    ablation: str = "full",
    seed: int = 0,
    dropout: float = 0.0,
) -> MiscaModel:
    model = MiscaModel(hierarchy, len(vocabs.words), len(vocabs.chars), dims, ablation, dropout)
    model.reset_parameters(seed)
    return model
