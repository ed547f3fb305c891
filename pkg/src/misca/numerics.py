"""Dense-matrix helpers on top of torch, plus a finite-difference gradient checker.

All tensors are float64. Reverse-mode gradients come from torch autograd; the
checker in :func:`gradcheck` is an independent central-difference oracle.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import torch

DTYPE = torch.float64

torch.set_default_dtype(DTYPE)


class DimensionError(ValueError):
    """Raised when operand shapes do not conform."""


class ContractError(ValueError):
    """Raised when an operation is called outside its documented preconditions."""


def _shape(t: torch.Tensor) -> Tuple[int, ...]:
    return tuple(t.shape)


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Matrix product over the last two dims, with leading batch dims broadcast."""
    if a.dim() < 2 or b.dim() < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"cannot multiply {_shape(a)} by {_shape(b)}")
    return torch.matmul(a, b)


def concat_rows(*mats: torch.Tensor) -> torch.Tensor:
    """Stack matrices vertically (along the row axis, dim -2)."""
    cols = {m.shape[-1] for m in mats}
    if len(cols) != 1:
        raise DimensionError(
            "concat_rows needs equal column counts, got " + ", ".join(str(_shape(m)) for m in mats)
        )
    return torch.cat(mats, dim=-2)


def add(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"cannot add {_shape(a)} and {_shape(b)}")
    return a + b


def _masked_softmax(x: torch.Tensor, dim: int, mask: Optional[torch.Tensor]) -> torch.Tensor:
    if mask is not None:
        mask = mask.to(torch.bool)
        x = x.masked_fill(~mask, float("-inf"))
    # max-subtraction guards exp overflow
    shift = x.max(dim=dim, keepdim=True).values.detach()
    shift = torch.where(torch.isfinite(shift), shift, torch.zeros_like(shift))
    ex = torch.exp(x - shift)
    if mask is not None:
        ex = ex * mask.to(ex.dtype)
    return ex / ex.sum(dim=dim, keepdim=True)


def softmax_rows(x: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Softmax over each row. ``mask`` (broadcastable, 1 = keep) zeroes excluded entries."""
    return _masked_softmax(x, -1, mask)


def softmax_cols(x: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Softmax over each column."""
    return _masked_softmax(x, -2, mask)


def elementwise(op: str, *inputs: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Dispatch by name to one of the differentiable pointwise/row-wise ops."""
    if op == "tanh":
        (x,) = inputs
        return torch.tanh(x)
    if op == "sigmoid":
        (x,) = inputs
        return torch.sigmoid(x)
    if op == "add":
        return add(*inputs)
    if op == "concat_rows":
        return concat_rows(*inputs)
    if op == "softmax_rows":
        (x,) = inputs
        return softmax_rows(x, mask)
    if op == "softmax_cols":
        (x,) = inputs
        return softmax_cols(x, mask)
    raise ValueError(f"unknown elementwise op {op!r}")


def backward(loss: torch.Tensor) -> None:
    """Accumulate d(loss)/d(param) into every reachable parameter's ``.grad``."""
    if loss.numel() != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {_shape(loss)}")
    loss.reshape(()).backward()


def zero_grad(params: Iterable[torch.Tensor]) -> None:
    for p in params:
        if p.grad is not None:
            p.grad.zero_()


@dataclass
class GradcheckReport:
    step: float
    tol: float
    max_rel_error: Dict[str, float] = field(default_factory=dict)

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def failures(self) -> List[str]:
        return [name for name, err in self.max_rel_error.items() if not err <= self.tol]

    @property
    def ok(self) -> bool:
        return not self.failures

    def format(self) -> str:
        lines = [f"# gradcheck step={self.step:g} tol={self.tol:g}", "param\tmax_rel_error\tstatus"]
        for name, err in self.max_rel_error.items():
            lines.append(f"{name}\t{err:.3e}\t{'ok' if err <= self.tol else 'FAIL'}")
        lines.append(f"# worst={self.worst:.3e} {'PASS' if self.ok else 'FAIL'}")
        return "\n".join(lines)


def relative_error(analytic: torch.Tensor, numeric: torch.Tensor, floor: float = 1e-6) -> torch.Tensor:
    """Elementwise |a - n| / max(|a|, |n|, floor).

    The floor keeps entries whose true gradient is ~0 from dividing rounding
    noise by zero.
    """
    denom = torch.maximum(torch.maximum(analytic.abs(), numeric.abs()), torch.full_like(analytic, floor))
    return (analytic - numeric).abs() / denom


def numerical_gradient(f: Callable[[], torch.Tensor], param: torch.Tensor, step: float) -> torch.Tensor:
    """Central differences (f(x+h) - f(x-h)) / 2h, one element at a time."""
    grad = torch.zeros_like(param)
    flat = param.data.view(-1)
    gflat = grad.view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + step
            up = float(f())
            flat[i] = orig - step
            down = float(f())
            flat[i] = orig
            gflat[i] = (up - down) / (2 * step)
    return grad


NamedParams = Union[Sequence[Tuple[str, torch.Tensor]], Dict[str, torch.Tensor]]


def gradcheck(
    f: Callable[[], torch.Tensor],
    params: NamedParams,
    step: float = 1e-4,
    tol: float = 1e-4,
) -> GradcheckReport:
    """Compare taped gradients of scalar ``f()`` against central differences.

    ``params`` is a list of (name, tensor) pairs or a dict; every tensor must
    require grad. Returns the per-parameter maximum relative error.
    """
    if step <= 0:
        raise ContractError("gradcheck step must be positive")
    items = list(params.items()) if isinstance(params, dict) else list(params)
    tensors = [p for _, p in items]
    zero_grad(tensors)
    loss = f()
    if loss.numel() != 1:
        raise ContractError(f"gradcheck needs a scalar function, got shape {_shape(loss)}")
    analytic = torch.autograd.grad(loss, tensors, allow_unused=True)
    report = GradcheckReport(step=step, tol=tol)
    for (name, p), g in zip(items, analytic):
        if g is None:
            g = torch.zeros_like(p)
        numeric = numerical_gradient(f, p, step)
        err = relative_error(g.detach(), numeric)
        report.max_rel_error[name] = float(err.max()) if err.numel() else 0.0
    return report
