"""Intent and slot decoders.

The multi-label intent decoder scores each intent from its label-specific
column, and an auxiliary head predicts how many intents to keep. Slots are
decoded with a linear-chain CRF whose transition matrix carries two virtual
states, START (index K) and END (index K+1).
"""
from __future__ import annotations

from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn

from .numerics import concat_rows, matmul


class IntentHead(nn.Module):
    def __init__(self, input_size: int, d_e: int, n_intents: int, max_intents: int):
        super().__init__()
        self.w_I = nn.Parameter(torch.empty(n_intents, input_size))
        self.W_INP = nn.Parameter(torch.empty(max_intents, n_intents))
        self.w_INP = nn.Parameter(torch.empty(d_e))

    def forward(
        self, V_I: torch.Tensor, H_bwd_1: Optional[torch.Tensor] = None
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        """Returns per-intent logits (b, |L^I|) and intent-count logits (b, z)."""
        H_I = V_I if H_bwd_1 is None else concat_rows(V_I, H_bwd_1)
        logits = (self.w_I.T * H_I).sum(dim=-2)
        count_logits = matmul(V_I.transpose(-1, -2), self.w_INP[:, None]).squeeze(-1) @ self.W_INP.T
        return logits, count_logits


def select_intents(probs: Sequence[float], count: int) -> List[int]:
    """Indices of the ``count`` highest probabilities; lower index wins ties."""
    order = np.argsort(-np.asarray(probs, dtype=float), kind="stable")
    return sorted(order[:count].tolist())


def predict_intents(
    logits: torch.Tensor, count_logits: torch.Tensor, labels: Sequence[str]
) -> Tuple[np.ndarray, np.ndarray, List[frozenset]]:
    """Batched decode: (probs, counts in 1..z, predicted label sets)."""
    probs = torch.sigmoid(logits).detach().cpu().numpy()
    counts = count_logits.detach().cpu().numpy().argmax(axis=-1) + 1
    sets = [frozenset(labels[j] for j in select_intents(p, int(c))) for p, c in zip(probs, counts)]
    return probs, counts, sets


# ---------------------------------------------------------------------------
# CRF


class CRF(nn.Module):
    def __init__(self, input_size: int, n_tags: int):
        super().__init__()
        self.n_tags = n_tags
        self.X_S = nn.Parameter(torch.empty(n_tags, input_size))
        self.transitions = nn.Parameter(torch.zeros(n_tags + 2, n_tags + 2))

    def emissions(self, H_S: torch.Tensor) -> torch.Tensor:
        """H_S: (b, input_size, n) -> (b, K, n)."""
        return matmul(self.X_S, H_S)


def _batched(emissions: torch.Tensor, *rest):
    if emissions.dim() == 2:
        return True, emissions[None], [None if r is None else r[None] for r in rest]
    return False, emissions, list(rest)


def log_partition(emissions: torch.Tensor, T: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """log Z by the forward algorithm. emissions (b, K, n) or (K, n); mask (b, n) prefix."""
    single, em, (mask,) = _batched(emissions, mask)
    b, K, n = em.shape
    if mask is None:
        mask = em.new_ones(b, n)
    start, end = K, K + 1
    trans = T[:K, :K]
    alpha = T[start, :K] + em[:, :, 0]
    for i in range(1, n):
        nxt = torch.logsumexp(alpha[:, :, None] + trans[None] + em[:, None, :, i], dim=1)
        m = mask[:, i : i + 1]
        alpha = torch.where(m > 0, nxt, alpha)
    logz = torch.logsumexp(alpha + T[:K, end], dim=-1)
    return logz[0] if single else logz


def path_score(emissions: torch.Tensor, T: torch.Tensor, tags: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Unnormalized score of ``tags`` (b, n) including START/END transitions."""
    single, em, (tags, mask) = _batched(emissions, tags, mask)
    b, K, n = em.shape
    if mask is None:
        mask = em.new_ones(b, n)
    start, end = K, K + 1
    emit = em.gather(1, tags[:, None, :]).squeeze(1)
    score = T[start, tags[:, 0]] + (emit * mask).sum(dim=1)
    if n > 1:
        step = T[tags[:, :-1], tags[:, 1:]]
        score = score + (step * mask[:, 1:]).sum(dim=1)
    lengths = mask.sum(dim=1).long()
    last = tags.gather(1, (lengths - 1)[:, None]).squeeze(1)
    score = score + T[last, end]
    return score[0] if single else score


def crf_nll(emissions: torch.Tensor, T: torch.Tensor, tags: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Negative log-likelihood per sequence: log Z - score(gold)."""
    return log_partition(emissions, T, mask) - path_score(emissions, T, tags, mask)


def allowed_transitions(tags: Sequence[str]) -> np.ndarray:
    """Boolean (K+2, K+2) matrix; False for transitions that break BIO.

    Forbidden: into I-x from anything other than B-x/I-x (including START),
    plus every move into START or out of END.
    """
    K = len(tags)
    ok = np.ones((K + 2, K + 2), dtype=bool)
    ok[:, K] = False
    ok[K + 1, :] = False
    for j, tag in enumerate(tags):
        if not tag.startswith("I-"):
            continue
        label = tag[2:]
        for i, prev in enumerate(tags):
            if prev[2:] != label:
                ok[i, j] = False
        ok[K, j] = False
    return ok


def viterbi(
    emissions, T, mask=None, allowed: Optional[np.ndarray] = None
) -> Tuple[List[int], float]:
    """Best tag path over the unmasked prefix of one sequence.

    emissions (K, n), T (K+2, K+2). Ties go to the lower tag index, both for
    back-pointers and for the final state.
    """
    em = np.asarray(emissions.detach().cpu() if torch.is_tensor(emissions) else emissions, dtype=float)
    T = np.asarray(T.detach().cpu() if torch.is_tensor(T) else T, dtype=float)
    K, n = em.shape
    if mask is not None:
        m = np.asarray(mask.detach().cpu() if torch.is_tensor(mask) else mask)
        n = int(m.sum())
    if n < 1:
        raise ValueError("viterbi needs at least one unmasked position")
    if allowed is not None:
        T = np.where(allowed, T, -np.inf)
    start, end = K, K + 1
    trans = T[:K, :K]
    score = T[start, :K] + em[:, 0]
    back = np.zeros((n, K), dtype=int)
    for i in range(1, n):
        cand = score[:, None] + trans
        back[i] = cand.argmax(axis=0)
        score = cand[back[i], np.arange(K)] + em[:, i]
    final = score + T[:K, end]
    best = int(final.argmax())
    path = [best]
    for i in range(n - 1, 0, -1):
        best = int(back[i, best])
        path.append(best)
    path.reverse()
    return path, float(final.max())


def viterbi_batch(emissions: torch.Tensor, T: torch.Tensor, mask: torch.Tensor, allowed=None) -> List[List[int]]:
    em = emissions.detach().cpu().numpy()
    Tn = T.detach().cpu().numpy()
    mk = mask.detach().cpu().numpy()
    return [viterbi(em[r], Tn, mk[r], allowed)[0] for r in range(em.shape[0])]
