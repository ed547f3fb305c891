"""Intent accuracy, span-level slot F1 and overall (sentence) accuracy."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence, Set, Tuple

Span = Tuple[int, int, str]


def _check_tag(tag: str) -> None:
    if tag != "O" and not (len(tag) > 2 and tag[:2] in ("B-", "I-")):
        raise ValueError(f"invalid BIO tag {tag!r}")


def extract_spans(tags: Sequence[str]) -> Set[Span]:
    """(start, end_exclusive, label) spans.

    An ``I-x`` that does not continue an ``x`` span opens a new one (CoNLL
    convention).
    """
    spans: Set[Span] = set()
    start, label = None, None
    for i, tag in enumerate(list(tags) + ["O"]):
        _check_tag(tag)
        continues = tag.startswith("I-") and label == tag[2:]
        if label is not None and not continues:
            spans.add((start, i, label))
            start, label = None, None
        if tag != "O" and not continues:
            start, label = i, tag[2:]
    return spans


def intent_accuracy(preds: Sequence[Iterable[str]], golds: Sequence[Iterable[str]]) -> float:
    if len(preds) != len(golds):
        raise ValueError(f"{len(preds)} predictions vs {len(golds)} gold items")
    if not golds:
        return 0.0
    return sum(set(p) == set(g) for p, g in zip(preds, golds)) / len(golds)


def _prf(tp: int, n_pred: int, n_gold: int) -> Tuple[float, float, float]:
    p = tp / n_pred if n_pred else 0.0
    r = tp / n_gold if n_gold else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


def slot_f1(pred_tags: Sequence[Sequence[str]], gold_tags: Sequence[Sequence[str]]) -> Tuple[float, float, float]:
    """Micro-averaged exact-match span precision, recall, F1."""
    if len(pred_tags) != len(gold_tags):
        raise ValueError(f"{len(pred_tags)} predicted sequences vs {len(gold_tags)} gold")
    tp = n_pred = n_gold = 0
    for p, g in zip(pred_tags, gold_tags):
        if len(p) != len(g):
            raise ValueError(f"tag sequence length mismatch: {len(p)} vs {len(g)}")
        ps, gs = extract_spans(p), extract_spans(g)
        tp += len(ps & gs)
        n_pred += len(ps)
        n_gold += len(gs)
    return _prf(tp, n_pred, n_gold)


def sequence_accuracy(pred_tags, gold_tags) -> float:
    if not gold_tags:
        return 0.0
    return sum(list(p) == list(g) for p, g in zip(pred_tags, gold_tags)) / len(gold_tags)


def overall_accuracy(pred_intents, gold_intents, pred_tags, gold_tags) -> float:
    n = len(gold_intents)
    if not (len(pred_intents) == n == len(pred_tags) == len(gold_tags)):
        raise ValueError("prediction and gold lists are not aligned")
    if not n:
        return 0.0
    hits = sum(
        set(pi) == set(gi) and list(pt) == list(gt)
        for pi, gi, pt, gt in zip(pred_intents, gold_intents, pred_tags, gold_tags)
    )
    return hits / n


@dataclass
class EvalReport:
    intent_accuracy: float
    slot_precision: float
    slot_recall: float
    slot_f1: float
    overall_accuracy: float
    sequence_accuracy: float
    n: int
    per_slot: Dict[str, Tuple[float, float, float, int]] = field(default_factory=dict)
    per_intent: Dict[str, Tuple[float, float, int]] = field(default_factory=dict)

    def headline(self) -> Dict[str, float]:
        return {
            "intent_accuracy": self.intent_accuracy,
            "slot_precision": self.slot_precision,
            "slot_recall": self.slot_recall,
            "slot_f1": self.slot_f1,
            "overall_accuracy": self.overall_accuracy,
            "sequence_accuracy": self.sequence_accuracy,
            "n": self.n,
        }

    def to_kv(self) -> str:
        lines = [f"{k}={v:.6f}" if isinstance(v, float) else f"{k}={v}" for k, v in self.headline().items()]
        for label, (p, r, f, support) in sorted(self.per_slot.items()):
            lines.append(f"slot.{label}.f1={f:.6f}")
            lines.append(f"slot.{label}.support={support}")
        for label, (p, r, support) in sorted(self.per_intent.items()):
            lines.append(f"intent.{label}.precision={p:.6f}")
            lines.append(f"intent.{label}.recall={r:.6f}")
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        out = [
            f"utterances        {self.n}",
            f"intent accuracy   {100 * self.intent_accuracy:6.2f}",
            f"slot F1           {100 * self.slot_f1:6.2f}  (P {100 * self.slot_precision:.2f} / R {100 * self.slot_recall:.2f})",
            f"overall accuracy  {100 * self.overall_accuracy:6.2f}",
        ]
        if self.per_slot:
            width = max(len(k) for k in self.per_slot)
            out += ["", f"{'slot':<{width}}  {'P':>6} {'R':>6} {'F1':>6} {'gold':>5}"]
            for label, (p, r, f, support) in sorted(self.per_slot.items()):
                out.append(f"{label:<{width}}  {100 * p:6.2f} {100 * r:6.2f} {100 * f:6.2f} {support:5d}")
        return "\n".join(out) + "\n"


def evaluate(pred_intents, gold_intents, pred_tags, gold_tags) -> EvalReport:
    p, r, f = slot_f1(pred_tags, gold_tags)
    tp, npred, ngold = Counter(), Counter(), Counter()
    for pt, gt in zip(pred_tags, gold_tags):
        ps, gs = extract_spans(pt), extract_spans(gt)
        for s in ps:
            npred[s[2]] += 1
        for s in gs:
            ngold[s[2]] += 1
        for s in ps & gs:
            tp[s[2]] += 1
    per_slot = {lab: (*_prf(tp[lab], npred[lab], ngold[lab]), ngold[lab]) for lab in set(npred) | set(ngold)}
    itp, ipred, igold = Counter(), Counter(), Counter()
    for pi, gi in zip(pred_intents, gold_intents):
        pi, gi = set(pi), set(gi)
        ipred.update(pi)
        igold.update(gi)
        itp.update(pi & gi)
    per_intent = {}
    for lab in set(ipred) | set(igold):
        ip, ir, _ = _prf(itp[lab], ipred[lab], igold[lab])
        per_intent[lab] = (ip, ir, igold[lab])
    return EvalReport(
        intent_accuracy=intent_accuracy(pred_intents, gold_intents),
        slot_precision=p,
        slot_recall=r,
        slot_f1=f,
        overall_accuracy=overall_accuracy(pred_intents, gold_intents, pred_tags, gold_tags),
        sequence_accuracy=sequence_accuracy(pred_tags, gold_tags),
        n=len(gold_intents),
        per_slot=per_slot,
        per_intent=per_intent,
    )


def parse_kv(text: str) -> Dict[str, str]:
    return dict(line.split("=", 1) for line in text.splitlines() if "=" in line)
