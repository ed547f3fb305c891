"""Label-specific representations with slot-hierarchy propagation."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import torch
from torch import nn

from .numerics import concat_rows, matmul, softmax_rows


def attend_labels(
    E: torch.Tensor, B: torch.Tensor, D: torch.Tensor, mask: Optional[torch.Tensor] = None
) -> Tuple[torch.Tensor, torch.Tensor]:
    """A = softmax_rows(B tanh(D E)) and V = E A^T.

    E: (b, d_e, n); B: (L, d_a); D: (d_a, d_e); mask: (b, n).
    Returns A (b, L, n) and V (b, d_e, L).
    """
    logits = matmul(B, torch.tanh(matmul(D, E)))
    A = softmax_rows(logits, None if mask is None else mask[:, None, :])
    return A, matmul(E, A.transpose(-1, -2))


def propagate_hierarchy(
    V_prev: torch.Tensor, w: torch.Tensor, Z: torch.Tensor
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Coarse-level label probabilities and their projection.

    V_prev: (b, d_prev, L_prev) label columns of level k-1; w: (L_prev, d_prev)
    one weight vector per label; Z: (d_p, L_prev).
    Returns p (b, L_prev) with p_j = sigmoid(w_j . v_j), and Z p as (b, d_p).
    """
    p = torch.sigmoid((w.T * V_prev).sum(dim=-2))
    return p, p @ Z.T


def extend_columns(V: torch.Tensor, suffix: torch.Tensor) -> torch.Tensor:
    """Append the same (b, d_p) vector under every column of V (b, d, L)."""
    return concat_rows(V, suffix[:, :, None].expand(-1, -1, V.shape[-1]))


@dataclass
class LabelSpecificReprs:
    V_I: torch.Tensor
    V_S: List[torch.Tensor] = field(default_factory=list)
    A_I: Optional[torch.Tensor] = None
    A_S: List[torch.Tensor] = field(default_factory=list)
    # p^{S,k} for k = 1..levels-1, each (b, |L^{S,k}|)
    level_probs: List[torch.Tensor] = field(default_factory=list)


class LabelAttention(nn.Module):
    """Intent attention plus one attention per slot-hierarchy level.

    ``slot_sizes`` lists |L^{S,k}| from the coarsest level to the fine level.
    With ``use_slots=False`` only the intent side is built.
    """

    def __init__(
        self,
        d_e: int,
        n_intents: int,
        slot_sizes: Sequence[int],
        d_a: int = 256,
        d_p: int = 32,
        use_slots: bool = True,
    ):
        super().__init__()
        self.d_e, self.d_p = d_e, d_p
        self.B_I = nn.Parameter(torch.empty(n_intents, d_a))
        self.D_I = nn.Parameter(torch.empty(d_a, d_e))
        self.use_slots = use_slots
        self.slot_sizes = list(slot_sizes) if use_slots else []
        self.B_S = nn.ParameterList([nn.Parameter(torch.empty(m, d_a)) for m in self.slot_sizes])
        self.D_S = nn.ParameterList([nn.Parameter(torch.empty(d_a, d_e)) for _ in self.slot_sizes])
        # level k-1 label columns have d_e rows at k-1 = 1, d_e + d_p beyond
        self.w_S = nn.ParameterList(
            [
                nn.Parameter(torch.empty(m, d_e if k == 0 else d_e + d_p))
                for k, m in enumerate(self.slot_sizes[:-1])
            ]
        )
        self.Z_S = nn.ParameterList([nn.Parameter(torch.empty(d_p, m)) for m in self.slot_sizes[:-1]])

    def level_width(self, k: int) -> int:
        """Row count of V^{S,k} (1-based level)."""
        return self.d_e if k == 1 else self.d_e + self.d_p

    def forward(self, E_I: torch.Tensor, E_S: torch.Tensor, mask: torch.Tensor) -> LabelSpecificReprs:
        A_I, V_I = attend_labels(E_I, self.B_I, self.D_I, mask)
        out = LabelSpecificReprs(V_I=V_I, A_I=A_I)
        for k in range(len(self.slot_sizes)):
            A, V = attend_labels(E_S, self.B_S[k], self.D_S[k], mask)
            if k > 0:
                p, suffix = propagate_hierarchy(out.V_S[k - 1], self.w_S[k - 1], self.Z_S[k - 1])
                out.level_probs.append(p)
                V = extend_columns(V, suffix)
            out.A_S.append(A)
            out.V_S.append(V)
        return out
