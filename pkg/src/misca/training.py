"""Joint objective, AdamW training loop, best-epoch selection and grid search."""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, TextIO, Tuple

import torch
import torch.nn.functional as F

from .corpus import Batch, LabelHierarchy, Sample, Vocabularies, build_hierarchy, make_batches, slot_label
from .decoders import allowed_transitions, crf_nll, predict_intents, viterbi_batch
from .metrics import EvalReport, evaluate
from .numerics import GradcheckReport, gradcheck
from .model import ConfigError, Dims, MiscaModel, ModelOutput, build_model, check_ablation, parameter_census

logger = logging.getLogger(__name__)

LAMBDA_GRID = (0.1, 0.25, 0.5, 0.75, 0.9)
WORD_DIM_GRID = (64, 128)

LOG_COLUMNS = ("epoch", "train_loss", "val_intent_acc", "val_slot_f1", "val_overall_acc")


@dataclass
class TrainConfig:
    lam: float = 0.5
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 100
    seed: int = 0
    word_dim: int = 64
    ablation: str = "full"
    levels: int = 1
    word_hidden: int = 64
    sa_dim: int = 256
    char_dim: int = 32
    char_hidden: int = 32
    task_hidden: int = 128
    d_a: int = 256
    d_p: int = 32
    d_s: int = 128
    d: int = 128
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip: float = 0.0
    dropout: float = 0.0
    hard_bio: bool = False
    hierarchy_loss: bool = False

    def __post_init__(self):
        check_ablation(self.ablation)
        if self.levels not in (1, 2):
            raise ConfigError(f"levels must be 1 or 2, got {self.levels}")

    @property
    def dims(self) -> Dims:
        return Dims(
            word_dim=self.word_dim,
            word_hidden=self.word_hidden,
            sa_dim=self.sa_dim,
            char_dim=self.char_dim,
            char_hidden=self.char_hidden,
            task_hidden=self.task_hidden,
            d_a=self.d_a,
            d_p=self.d_p,
            d_s=self.d_s,
            d=self.d,
        )

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Dict[str, object]) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)

    @classmethod
    def field_types(cls) -> Dict[str, type]:
        return {f.name: type(getattr(cls(), f.name)) for f in fields(cls)}


class TrainingDiverged(RuntimeError):
    pass


def joint_loss(intent_bce, count_ce, slot_nll, lam: float):
    """lam * (intent BCE + count CE) + (1 - lam) * slot NLL."""
    return lam * (intent_bce + count_ce) + (1 - lam) * slot_nll


def coarse_targets(batch: Batch, hierarchy: LabelHierarchy, level: int) -> torch.Tensor:
    """Multi-hot of the level-``level`` ancestors of every gold slot in the batch."""
    labels = hierarchy.slot_levels[level - 1]
    index = {lab: j for j, lab in enumerate(labels)}
    out = torch.zeros(len(batch), len(labels))
    for r, s in enumerate(batch.samples):
        for tag in s.slot_tags:
            fine = slot_label(tag)
            if fine in hierarchy.parent:
                out[r, index[hierarchy.ancestor(fine, level)]] = 1.0
    return out


@dataclass
class LossParts:
    intent_bce: torch.Tensor
    count_ce: torch.Tensor
    slot_nll: torch.Tensor
    total: torch.Tensor


def batch_loss(model: MiscaModel, out: ModelOutput, batch: Batch, cfg: TrainConfig) -> LossParts:
    """Per-utterance losses averaged over the batch."""
    bce = F.binary_cross_entropy_with_logits(out.intent_logits, batch.gold_intents, reduction="none").sum(-1)
    ce = F.cross_entropy(out.count_logits, batch.gold_intent_count - 1, reduction="none")
    nll = crf_nll(out.emissions, model.crf.transitions, batch.gold_tags, batch.mask)
    intent_bce, count_ce, slot = bce.mean(), ce.mean(), nll.mean()
    total = joint_loss(intent_bce, count_ce, slot, cfg.lam)
    if cfg.hierarchy_loss and out.reprs.level_probs:
        for k, p in enumerate(out.reprs.level_probs, 1):
            target = coarse_targets(batch, model.hierarchy, k)
            total = total + (1 - cfg.lam) * F.binary_cross_entropy(p, target, reduction="none").sum(-1).mean()
    return LossParts(intent_bce, count_ce, slot, total)


@dataclass
class Prediction:
    intents: frozenset
    tags: List[str]


def predict(
    model: MiscaModel,
    samples: Sequence[Sample],
    vocabs: Vocabularies,
    batch_size: int = 32,
    hard_bio: bool = False,
) -> List[Prediction]:
    h = model.hierarchy
    allowed = allowed_transitions(h.tags) if hard_bio else None
    preds: List[Prediction] = []
    model.eval()
    with torch.no_grad():
        for batch in make_batches(samples, vocabs, h, batch_size):
            out = model(batch)
            _, _, sets = predict_intents(out.intent_logits, out.count_logits, h.intent_labels)
            paths = viterbi_batch(out.emissions, model.crf.transitions, out.mask, allowed)
            preds += [Prediction(s, [h.tags[i] for i in p]) for s, p in zip(sets, paths)]
    return preds


def evaluate_model(model, samples, vocabs, batch_size: int = 32, hard_bio: bool = False) -> Tuple[EvalReport, List[Prediction]]:
    preds = predict(model, samples, vocabs, batch_size, hard_bio)
    report = evaluate(
        [p.intents for p in preds],
        [s.intent_set for s in samples],
        [p.tags for p in preds],
        [list(s.slot_tags) for s in samples],
    )
    return report, preds


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    state: Dict[str, torch.Tensor]
    config: Dict[str, object]
    epoch: int
    val_overall_accuracy: float
    hierarchy: List[str]
    vocabs: Dict[str, List[str]]

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    torch.save(
        {
            "format": "misca-checkpoint-1",
            "state": ckpt.state,
            "config": ckpt.config,
            "epoch": ckpt.epoch,
            "val_overall_accuracy": ckpt.val_overall_accuracy,
            "hierarchy": ckpt.hierarchy,
            "vocabs": ckpt.vocabs,
        },
        Path(path),
    )


def read_checkpoint(path) -> Checkpoint:
    raw = torch.load(Path(path), weights_only=True)
    if raw.get("format") != "misca-checkpoint-1":
        raise ConfigError(f"{path}: not a checkpoint file")
    return Checkpoint(
        raw["state"], raw["config"], raw["epoch"], raw["val_overall_accuracy"], raw["hierarchy"], raw["vocabs"]
    )


def load_state(model: MiscaModel, state: Dict[str, torch.Tensor]) -> None:
    """Copy ``state`` into ``model``; error names the first mismatched tensor."""
    own = dict(model.named_parameters())
    for name, p in own.items():
        if name not in state:
            raise ConfigError(f"checkpoint is missing tensor {name!r} {tuple(p.shape)}")
        if tuple(state[name].shape) != tuple(p.shape):
            raise ConfigError(
                f"tensor {name!r}: checkpoint shape {tuple(state[name].shape)} vs model shape {tuple(p.shape)}"
            )
    extra = [k for k in state if k not in own]
    if extra:
        raise ConfigError(f"checkpoint tensor {extra[0]!r} has no counterpart in the model")
    with torch.no_grad():
        for name, p in own.items():
            p.copy_(state[name])


def model_from_checkpoint(ckpt: Checkpoint, config: Optional[TrainConfig] = None) -> Tuple[MiscaModel, TrainConfig, Vocabularies]:
    cfg = config or TrainConfig.from_dict(dict(ckpt.config))
    hierarchy = LabelHierarchy.from_lines(ckpt.hierarchy)
    vocabs = Vocabularies.from_dict(ckpt.vocabs)
    model = MiscaModel(hierarchy, len(vocabs.words), len(vocabs.chars), cfg.dims, cfg.ablation, cfg.dropout)
    load_state(model, ckpt.state)
    return model, cfg, vocabs


# ---------------------------------------------------------------------------
# training loop


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_intent_acc: float
    val_slot_f1: float
    val_overall_acc: float

    def line(self) -> str:
        return (
            f"{self.epoch}\t{self.train_loss:.10f}\t{self.val_intent_acc:.6f}\t"
            f"{self.val_slot_f1:.6f}\t{self.val_overall_acc:.6f}"
        )


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: List[EpochRecord]
    model: MiscaModel
    vocabs: Vocabularies
    config: TrainConfig
    seconds: float = 0.0

    @property
    def best_epoch(self) -> int:
        return self.checkpoint.epoch


def log_header(cfg: TrainConfig, model: MiscaModel) -> List[str]:
    _, total = parameter_census(model)
    lines = [f"# ablation={cfg.ablation} parameters={total} chain_length={model.chain_length}"]
    lines += [f"# {k}={v}" for k, v in cfg.to_dict().items()]
    lines.append("\t".join(LOG_COLUMNS))
    return lines


def _param_norms(model: MiscaModel) -> str:
    return ", ".join(f"{n}={p.detach().norm():.3g}" for n, p in model.named_parameters())


def train(
    cfg: TrainConfig,
    train_samples: Sequence[Sample],
    dev_samples: Sequence[Sample],
    log: Optional[TextIO] = None,
    hierarchy: Optional[LabelHierarchy] = None,
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
) -> TrainResult:
    """Train for ``cfg.epochs`` epochs and keep the best-validation checkpoint.

    Ties in validation overall accuracy keep the earlier epoch.
    """
    start = time.perf_counter()
    torch.manual_seed(cfg.seed)
    hierarchy = hierarchy or build_hierarchy(train_samples, cfg.levels)
    vocabs = Vocabularies.build(train_samples)
    model = build_model(hierarchy, vocabs, cfg.dims, cfg.ablation, cfg.seed, cfg.dropout)
    opt = torch.optim.AdamW(
        model.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps, weight_decay=cfg.weight_decay
    )

    def emit(line: str) -> None:
        if log is not None:
            log.write(line + "\n")
            log.flush()

    for line in log_header(cfg, model):
        emit(line)

    history: List[EpochRecord] = []
    best: Optional[Checkpoint] = None
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        total, count = 0.0, 0
        batches = make_batches(train_samples, vocabs, hierarchy, cfg.batch_size, shuffle_seed=cfg.seed * 100003 + epoch)
        for b_idx, batch in enumerate(batches):
            opt.zero_grad()
            parts = batch_loss(model, model(batch), batch, cfg)
            if not torch.isfinite(parts.total):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch} batch {b_idx}: {parts.total.item()}; "
                    f"parameter norms: {_param_norms(model)}"
                )
            parts.total.backward()
            if cfg.clip > 0:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.clip)
            opt.step()
            total += parts.total.item() * len(batch)
            count += len(batch)
        report, _ = evaluate_model(model, dev_samples, vocabs, cfg.batch_size, cfg.hard_bio)
        rec = EpochRecord(epoch, total / max(count, 1), report.intent_accuracy, report.slot_f1, report.overall_accuracy)
        history.append(rec)
        emit(rec.line())
        if on_epoch:
            on_epoch(rec)
        if best is None or rec.val_overall_acc > best.val_overall_accuracy:
            best = Checkpoint(
                state={n: p.detach().clone() for n, p in model.named_parameters()},
                config=cfg.to_dict(),
                epoch=epoch,
                val_overall_accuracy=rec.val_overall_acc,
                hierarchy=hierarchy.to_lines(),
                vocabs=vocabs.to_dict(),
            )
    if best is None:
        raise ConfigError("epochs must be at least 1")
    load_state(model, best.state)
    emit(f"# best_epoch={best.epoch} val_overall_acc={best.val_overall_accuracy:.6f}")
    return TrainResult(best, history, model, vocabs, cfg, time.perf_counter() - start)


@dataclass
class GridResult:
    best: TrainResult
    table: List[Tuple[int, float, float]] = field(default_factory=list)  # (word_dim, lam, val overall)


def grid_search(
    base: TrainConfig,
    train_samples: Sequence[Sample],
    dev_samples: Sequence[Sample],
    word_dims: Sequence[int] = WORD_DIM_GRID,
    lambdas: Sequence[float] = LAMBDA_GRID,
    log: Optional[TextIO] = None,
) -> GridResult:
    """Sequential sweep; first configuration wins ties."""
    best: Optional[TrainResult] = None
    table = []
    for wd in word_dims:
        for lam in lambdas:
            cfg = replace(base, word_dim=wd, lam=lam)
            if log is not None:
                log.write(f"# grid word_dim={wd} lambda={lam}\n")
            res = train(cfg, train_samples, dev_samples, log)
            table.append((wd, lam, res.checkpoint.val_overall_accuracy))
            if best is None or res.checkpoint.val_overall_accuracy > best.checkpoint.val_overall_accuracy:
                best = res
    assert best is not None
    return GridResult(best, table)


def model_gradcheck(
    model: MiscaModel, batch: Batch, cfg: TrainConfig, step: float = 1e-4, tol: float = 1e-4
) -> GradcheckReport:
    """Finite-difference check of every parameter of ``model`` on ``batch``."""
    model.eval()

    def loss() -> torch.Tensor:
        return batch_loss(model, model(batch), batch, cfg).total

    return gradcheck(loss, list(model.named_parameters()), step=step, tol=tol)
