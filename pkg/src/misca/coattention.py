"""Intent-slot co-attention over a chain of label-specific matrices.

The chain is Q_1 = V^I, Q_2..Q_{L-1} = slot label matrices, Q_L = S (one column
per token). Index ``t`` below is 1-based to match the layer numbering; lists
are stored 0-based.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import torch
from torch import nn

from .numerics import DimensionError, matmul, softmax_cols


class SoftSlotEmbedding(nn.Module):
    """S = W^S softmax_cols(U^S E^S): expected tag embedding per token."""

    def __init__(self, d_e: int, n_tags: int, d_s: int = 128):
        super().__init__()
        self.W_S = nn.Parameter(torch.empty(d_s, n_tags))
        self.U_S = nn.Parameter(torch.empty(n_tags, d_e))

    def forward(self, E_S: torch.Tensor) -> torch.Tensor:
        return soft_slot_embed(E_S, self.W_S, self.U_S)


def soft_slot_embed(E_S: torch.Tensor, W_S: torch.Tensor, U_S: torch.Tensor) -> torch.Tensor:
    return matmul(W_S, softmax_cols(matmul(U_S, E_S)))


@dataclass
class CoAttentionStack:
    Q: List[torch.Tensor]
    Q_fwd: List[torch.Tensor]
    Q_bwd: List[torch.Tensor]
    # C[t-2] holds C_t for t = 2..L
    C: List[torch.Tensor]
    H_bwd: List[Optional[torch.Tensor]] = field(default_factory=list)
    H_fwd: List[Optional[torch.Tensor]] = field(default_factory=list)

    @property
    def length(self) -> int:
        return len(self.Q)

    def C_at(self, t: int) -> torch.Tensor:
        return self.C[t - 2]


class CoAttention(nn.Module):
    """Projections and bilinear maps for a chain of ``len(widths)`` matrices.

    ``widths`` holds d_1..d_L (row counts of Q_t).
    """

    def __init__(self, widths: Sequence[int], d: int = 128):
        super().__init__()
        self.widths = list(widths)
        if len(self.widths) < 2:
            raise ValueError("co-attention chain needs at least two matrices")
        self.d = d
        self.W_fwd = nn.ParameterList([nn.Parameter(torch.empty(d, w)) for w in self.widths])
        self.W_bwd = nn.ParameterList([nn.Parameter(torch.empty(d, w)) for w in self.widths])
        self.X = nn.ParameterList(
            [nn.Parameter(torch.empty(a, b)) for a, b in zip(self.widths[:-1], self.widths[1:])]
        )

    def build_chain(self, Q: Sequence[torch.Tensor]) -> CoAttentionStack:
        return build_chain(Q, list(self.W_fwd), list(self.W_bwd), list(self.X))

    def forward(self, Q: Sequence[torch.Tensor]) -> CoAttentionStack:
        stack = self.build_chain(Q)
        run_coattention(stack)
        return stack


def build_chain(
    Q: Sequence[torch.Tensor],
    W_fwd: Sequence[torch.Tensor],
    W_bwd: Sequence[torch.Tensor],
    X: Sequence[torch.Tensor],
) -> CoAttentionStack:
    """Project every Q_t both ways and compute C_t = Q_{t-1}^T X_t Q_t."""
    L = len(Q)
    if not (len(W_fwd) == len(W_bwd) == L and len(X) == L - 1):
        raise DimensionError(
            f"chain of {L} matrices needs {L} projections per direction and {L - 1} bilinear maps, "
            f"got {len(W_fwd)}/{len(W_bwd)}/{len(X)}"
        )
    for t in range(1, L + 1):
        d_t = Q[t - 1].shape[-2]
        for name, W in (("forward projection", W_fwd[t - 1]), ("backward projection", W_bwd[t - 1])):
            if W.shape[-1] != d_t:
                raise DimensionError(
                    f"layer {t}: {name} {tuple(W.shape)} does not match Q_{t} {tuple(Q[t - 1].shape)}"
                )
        if t >= 2 and tuple(X[t - 2].shape) != (Q[t - 2].shape[-2], d_t):
            raise DimensionError(
                f"layer {t}: bilinear map {tuple(X[t - 2].shape)} does not match "
                f"Q_{t - 1} {tuple(Q[t - 2].shape)} and Q_{t} {tuple(Q[t - 1].shape)}"
            )
    Q_fwd = [matmul(W, q) for W, q in zip(W_fwd, Q)]
    Q_bwd = [matmul(W, q) for W, q in zip(W_bwd, Q)]
    C = [matmul(matmul(Q[t - 2].transpose(-1, -2), X[t - 2]), Q[t - 1]) for t in range(2, L + 1)]
    return CoAttentionStack(list(Q), Q_fwd, Q_bwd, C)


def run_coattention(stack: CoAttentionStack) -> Tuple[torch.Tensor, torch.Tensor]:
    """Fill in both attentive chains; return (H_bwd_1, H_fwd_L).

    The two recursions share only Q and C, so their order does not matter.
    """
    L = stack.length
    H_bwd: List[Optional[torch.Tensor]] = [None] * L
    H_fwd: List[Optional[torch.Tensor]] = [None] * L
    # backward: t = L-1 down to 1
    carry = stack.Q_bwd[L - 1]
    for t in range(L - 1, 0, -1):
        H_bwd[t - 1] = torch.tanh(matmul(carry, stack.C_at(t + 1).transpose(-1, -2)) + stack.Q_bwd[t - 1])
        carry = H_bwd[t - 1]
    # forward: t = 2 up to L
    carry = stack.Q_fwd[0]
    for t in range(2, L + 1):
        H_fwd[t - 1] = torch.tanh(matmul(carry, stack.C_at(t)) + stack.Q_fwd[t - 1])
        carry = H_fwd[t - 1]
    stack.H_bwd, stack.H_fwd = H_bwd, H_fwd
    return H_bwd[0], H_fwd[L - 1]


def dump_stack(stack: CoAttentionStack, path, labels: Optional[Dict[int, List[str]]] = None, index: int = 0) -> None:
    """Write every C_t and H matrix of batch row ``index`` as a sectioned text file.

    ``labels`` optionally maps 1-based layer numbers to column names.
    """
    labels = labels or {}

    def block(name: str, mat: torch.Tensor, rows: Optional[List[str]], cols: Optional[List[str]]) -> List[str]:
        m = mat[index] if mat.dim() == 3 else mat
        out = [f"[{name}] shape={m.shape[0]}x{m.shape[1]}"]
        if cols:
            out.append("\t" + "\t".join(cols))
        for r in range(m.shape[0]):
            head = rows[r] if rows else str(r)
            out.append(head + "\t" + "\t".join(f"{v:.6f}" for v in m[r].tolist()))
        return out + [""]

    lines = [f"# co-attention chain length={stack.length}"]
    for t in range(2, stack.length + 1):
        lines += block(f"C_{t}", stack.C_at(t), labels.get(t - 1), labels.get(t))
    for t, H in enumerate(stack.H_bwd, 1):
        if H is not None:
            lines += block(f"H_bwd_{t}", H, None, labels.get(t))
    for t, H in enumerate(stack.H_fwd, 1):
        if H is not None:
            lines += block(f"H_fwd_{t}", H, None, labels.get(t))
    Path(path).write_text("\n".join(lines), encoding="utf-8")


def read_dump(path) -> Dict[str, List[List[float]]]:
    """Parse a :func:`dump_stack` file back into name -> row lists."""
    out: Dict[str, List[List[float]]] = {}
    name = None
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("["):
            name = line[1 : line.index("]")]
            out[name] = []
        elif line and not line.startswith("#") and not line.startswith("\t") and name:
            out[name].append([float(v) for v in line.split("\t")[1:]])
    return out
