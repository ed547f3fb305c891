"""Task-shared and task-specific utterance encoders.

Tensors are batch-first ``(b, n, width)`` inside the recurrent layers; the
task-specific outputs are returned column-stacked as ``(b, d_e, n)`` so the
label attention and co-attention code can follow the matrix orientation of the
model equations.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import torch
from torch import nn

from .numerics import matmul, softmax_rows


class LSTM(nn.Module):
    """Single-direction LSTM parameters (gate rows: input, forget, cell, output).

    Sequences are run through :func:`run_lstms`, which steps several cells in
    one loop.
    """

    def __init__(self, input_size: int, hidden_size: int):
        super().__init__()
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.weight_ih = nn.Parameter(torch.empty(4 * hidden_size, input_size))
        self.weight_hh = nn.Parameter(torch.empty(4 * hidden_size, hidden_size))
        self.bias = nn.Parameter(torch.empty(4 * hidden_size))

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """x: (b, n, in), mask: (b, n) with padding as a suffix.

        Returns outputs (b, n, h), zero at pads, and the state after the last
        real position (b, h), zero for empty sequences.
        """
        out, last = run_lstms([self], x[None], mask)
        return out[0], last[0]


def run_lstms(cells: Sequence[LSTM], xs: torch.Tensor, mask: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """Run ``len(cells)`` same-shaped LSTMs side by side.

    xs: (D, b, n, in), one input per cell. Padding must be a suffix, so the
    state at pad steps is never read. Returns (D, b, n, h) and (D, b, h).
    """
    D, b, n, _ = xs.shape
    hs = cells[0].hidden_size
    W_ih = torch.stack([c.weight_ih for c in cells])
    W_hh_T = torch.stack([c.weight_hh for c in cells]).transpose(1, 2)
    bias = torch.stack([c.bias for c in cells])
    proj = (xs.reshape(D, b * n, -1) @ W_ih.transpose(1, 2) + bias[:, None]).view(D, b, n, 4 * hs)
    h = xs.new_zeros(D, b, hs)
    c = xs.new_zeros(D, b, hs)
    outputs = []
    for t in range(n):
        gates = proj[:, :, t] + torch.bmm(h, W_hh_T)
        sig = torch.sigmoid(gates)
        c = sig[..., hs : 2 * hs] * c + sig[..., :hs] * torch.tanh(gates[..., 2 * hs : 3 * hs])
        h = sig[..., 3 * hs :] * torch.tanh(c)
        outputs.append(h)
    if not n:
        return xs.new_zeros(D, b, 0, hs), xs.new_zeros(D, b, hs)
    out = torch.stack(outputs, dim=2) * mask[None, :, :, None]
    lengths = mask.sum(dim=1).long()
    idx = (lengths - 1).clamp(min=0).view(1, b, 1, 1).expand(D, b, 1, hs)
    last = out.gather(2, idx).squeeze(2)
    return out, last


def reverse_padded(x: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
    """Reverse each sequence of ``x`` (b, n, ...) within its own length."""
    b, n = x.shape[:2]
    pos = torch.arange(n).expand(b, n)
    idx = torch.where(pos < lengths[:, None], lengths[:, None] - 1 - pos, pos)
    idx = idx.view(b, n, *([1] * (x.dim() - 2))).expand_as(x)
    return x.gather(1, idx)


class BiLSTM(nn.Module):
    def __init__(self, input_size: int, hidden_size: int):
        super().__init__()
        self.fwd = LSTM(input_size, hidden_size)
        self.bwd = LSTM(input_size, hidden_size)

    @property
    def output_size(self) -> int:
        return 2 * self.fwd.hidden_size

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """Returns per-position outputs (b, n, 2h) and final states (b, 2h).

        The backward final state is the backward LSTM's output at position 0.
        """
        return run_bilstms([self], x, mask)[0]


def run_bilstms(layers: Sequence[BiLSTM], x: torch.Tensor, mask: torch.Tensor) -> List[Tuple[torch.Tensor, torch.Tensor]]:
    """Apply several BiLSTMs to the same input in one fused loop."""
    lengths = mask.sum(dim=1).long()
    x_rev = reverse_padded(x, lengths)
    cells = [c for layer in layers for c in (layer.fwd, layer.bwd)]
    xs = torch.stack([x, x_rev] * len(layers))
    out, last = run_lstms(cells, xs, mask)
    results = []
    for k in range(len(layers)):
        out_f, out_b = out[2 * k], reverse_padded(out[2 * k + 1], lengths)
        results.append((torch.cat([out_f, out_b], dim=-1), torch.cat([last[2 * k], last[2 * k + 1]], dim=-1)))
    return results


class SelfAttention(nn.Module):
    """Single-head scaled dot-product self-attention, pad keys masked out."""

    def __init__(self, input_size: int, output_size: int):
        super().__init__()
        self.query = nn.Linear(input_size, output_size)
        self.key = nn.Linear(input_size, output_size)
        self.value = nn.Linear(input_size, output_size)
        self.scale = 1.0 / math.sqrt(output_size)

    def weights(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        scores = matmul(self.query(x), self.key(x).transpose(1, 2)) * self.scale
        return softmax_rows(scores, mask[:, None, :])

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        out = matmul(self.weights(x, mask), self.value(x))
        return out * mask[..., None]


class CharEncoder(nn.Module):
    """Character BiLSTM; each word is represented by the two final states."""

    def __init__(self, n_chars: int, char_dim: int, hidden_size: int):
        super().__init__()
        self.embed = nn.Embedding(n_chars, char_dim)
        self.lstm = BiLSTM(char_dim, hidden_size)

    @property
    def output_size(self) -> int:
        return self.lstm.output_size

    def forward(self, char_ids: torch.Tensor) -> torch.Tensor:
        """char_ids: (b, n, w) -> (b, n, 2h)."""
        b, n, w = char_ids.shape
        flat = char_ids.reshape(b * n, w)
        cmask = (flat != 0).to(torch.get_default_dtype())
        _, last = self.lstm(self.embed(flat), cmask)
        return last.view(b, n, -1)


@dataclass
class TaskSpecificFeatures:
    E_I: torch.Tensor  # (b, d_e, n)
    E_S: torch.Tensor  # (b, d_e, n)

    @property
    def d_e(self) -> int:
        return self.E_I.shape[1]


class SharedEncoder(nn.Module):
    def __init__(
        self,
        n_words: int,
        n_chars: int,
        word_dim: int = 64,
        word_hidden: int = 64,
        sa_dim: int = 256,
        char_dim: int = 32,
        char_hidden: int = 32,
        dropout: float = 0.0,
    ):
        super().__init__()
        self.word_embed = nn.Embedding(n_words, word_dim)
        self.word_lstm = BiLSTM(word_dim, word_hidden)
        self.self_attn = SelfAttention(word_dim, sa_dim)
        self.chars = CharEncoder(n_chars, char_dim, char_hidden)
        self.dropout = nn.Dropout(dropout)

    @property
    def output_size(self) -> int:
        return self.word_lstm.output_size + self.self_attn.value.out_features + self.chars.output_size

    def forward(self, token_ids: torch.Tensor, char_ids: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """Returns e_1..e_n as (b, n, 2*word_hidden + sa_dim + 2*char_hidden)."""
        emb = self.dropout(self.word_embed(token_ids))
        lstm_out, _ = self.word_lstm(emb, mask)
        sa_out = self.self_attn(emb, mask)
        char_out = self.chars(char_ids) * mask[..., None]
        return torch.cat([lstm_out, sa_out, char_out], dim=-1)


class TaskSpecificEncoder(nn.Module):
    """Two parameter-disjoint BiLSTMs producing E^I and E^S."""

    def __init__(self, input_size: int, hidden_size: int = 128, dropout: float = 0.0):
        super().__init__()
        self.intent_lstm = BiLSTM(input_size, hidden_size)
        self.slot_lstm = BiLSTM(input_size, hidden_size)
        self.dropout = nn.Dropout(dropout)

    @property
    def d_e(self) -> int:
        return self.intent_lstm.output_size

    def forward(self, e: torch.Tensor, mask: torch.Tensor) -> TaskSpecificFeatures:
        e = self.dropout(e)
        (e_i, _), (e_s, _) = run_bilstms([self.intent_lstm, self.slot_lstm], e, mask)
        return TaskSpecificFeatures(e_i.transpose(1, 2), e_s.transpose(1, 2))
