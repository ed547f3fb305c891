"""Corpus reading, label hierarchy, vocabularies and batching.

On-disk format (MixATIS/MixSNIPS "clean" style)::

    show O
    flights O
    from O
    boston B-fromloc.city_name
    atis_flight#atis_airfare
    <blank line>

One ``token tag`` line per token (space or tab separated), then one line with
the intents joined by ``#``.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import torch

logger = logging.getLogger(__name__)

PAD = "<pad>"
UNK = "<unk>"
SPLITS = ("train", "dev", "test")

_TAG_RE = re.compile(r"^(?:O|[BI]-.+)$")


class CorpusError(ValueError):
    """Malformed corpus file; message carries ``path:line``."""


@dataclass(frozen=True)
class Sample:
    tokens: Tuple[str, ...]
    slot_tags: Tuple[str, ...]
    intents: Tuple[str, ...]

    def __post_init__(self):
        if len(self.tokens) != len(self.slot_tags) or not self.tokens:
            raise ValueError(f"{len(self.tokens)} tokens vs {len(self.slot_tags)} tags")
        if not self.intents:
            raise ValueError("sample needs at least one intent")
        for tag in self.slot_tags:
            if not _TAG_RE.match(tag):
                raise ValueError(f"invalid BIO tag {tag!r}")

    @property
    def intent_set(self) -> frozenset:
        return frozenset(self.intents)


def slot_label(tag: str) -> Optional[str]:
    return None if tag == "O" else tag[2:]


def repair_bio(tags: Sequence[str]) -> Tuple[Tuple[str, ...], int]:
    """Rewrite every ``I-x`` that does not continue an ``x`` span to ``B-x``."""
    out: List[str] = []
    fixed = 0
    prev: Optional[str] = None
    for tag in tags:
        if tag.startswith("I-") and prev != tag[2:]:
            tag = "B-" + tag[2:]
            fixed += 1
        out.append(tag)
        prev = slot_label(tag)
    return tuple(out), fixed


def _split_line(line: str) -> List[str]:
    if "\t" in line:
        return line.split("\t")
    return line.split(" ")


def iter_blocks(lines: Iterable[str]) -> Iterator[Tuple[int, List[str]]]:
    block: List[str] = []
    start = 0
    for lineno, raw in enumerate(lines, 1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            if block:
                yield start, block
                block = []
            continue
        if not block:
            start = lineno
        block.append(line)
    if block:
        yield start, block


def parse_lines(lines: Iterable[str], source: str = "<string>") -> List[Sample]:
    samples: List[Sample] = []
    repaired = 0
    for start, block in iter_blocks(lines):
        *token_lines, intent_line = block
        end = start + len(block) - 1
        if not token_lines:
            raise CorpusError(f"{source}:{start}: block has no token lines")
        if len(_split_line(intent_line.strip())) != 1:
            raise CorpusError(f"{source}:{end}: missing intent line (got {intent_line!r})")
        tokens, tags = [], []
        for offset, line in enumerate(token_lines):
            parts = _split_line(line.strip())
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise CorpusError(f"{source}:{start + offset}: expected 'token tag', got {line!r}")
            if not _TAG_RE.match(parts[1]):
                raise CorpusError(f"{source}:{start + offset}: invalid BIO tag {parts[1]!r}")
            tokens.append(parts[0])
            tags.append(parts[1])
        intents = tuple(i for i in intent_line.strip().split("#") if i)
        if not intents:
            raise CorpusError(f"{source}:{end}: empty intent line")
        fixed_tags, fixed = repair_bio(tags)
        repaired += fixed
        samples.append(Sample(tuple(tokens), fixed_tags, intents))
    if repaired:
        logger.info("%s: repaired %d orphan I- tags", source, repaired)
    return samples


def parse_corpus(path) -> List[Sample]:
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        return parse_lines(fh, str(path))


def format_sample(sample: Sample) -> str:
    lines = [f"{tok} {tag}" for tok, tag in zip(sample.tokens, sample.slot_tags)]
    lines.append("#".join(sample.intents))
    return "\n".join(lines) + "\n"


def write_corpus(samples: Iterable[Sample], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("\n".join(format_sample(s) for s in samples))


def split_path(dataset_dir, split: str) -> Path:
    """``<dir>/<split>.txt``; ``dev`` also accepts ``valid``/``validation`` names."""
    d = Path(dataset_dir)
    names = {"dev": ["dev", "valid", "validation"]}.get(split, [split])
    for name in names:
        p = d / f"{name}.txt"
        if p.exists():
            return p
    raise FileNotFoundError(f"no {split} split under {d} (tried {', '.join(n + '.txt' for n in names)})")


def load_splits(dataset_dir, splits: Sequence[str] = SPLITS) -> Dict[str, List[Sample]]:
    return {s: parse_corpus(split_path(dataset_dir, s)) for s in splits}


# ---------------------------------------------------------------------------
# labels


@dataclass
class LabelHierarchy:
    intent_labels: List[str]
    slot_levels: List[List[str]]
    parent: Dict[str, str] = field(default_factory=dict)
    max_intents: int = 1

    @property
    def levels(self) -> int:
        return len(self.slot_levels)

    @property
    def fine_labels(self) -> List[str]:
        return self.slot_levels[-1]

    @property
    def tags(self) -> List[str]:
        """BIO tag inventory: ``O`` then ``B-x``, ``I-x`` per fine label."""
        out = ["O"]
        for label in self.fine_labels:
            out += [f"B-{label}", f"I-{label}"]
        return out

    @property
    def bio_tag_count(self) -> int:
        return 2 * len(self.fine_labels) + 1

    def ancestor(self, label: str, level: int) -> str:
        """Label of ``label`` (a fine label) at 1-based hierarchy ``level``."""
        k = self.levels
        while k > level:
            label = self.parent[label]
            k -= 1
        return label

    def to_lines(self) -> List[str]:
        lines = [f"max_intents\t{self.max_intents}"]
        lines += [f"intent\t{label}" for label in self.intent_labels]
        for k, labels in enumerate(self.slot_levels, 1):
            for label in labels:
                if k > 1:
                    lines.append(f"slot{k}\t{label}\t{self.parent[label]}")
                else:
                    lines.append(f"slot{k}\t{label}")
        return lines

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> "LabelHierarchy":
        intents: List[str] = []
        levels: Dict[int, List[str]] = {}
        parent: Dict[str, str] = {}
        z = 1
        for line in lines:
            line = line.rstrip("\n")
            if not line:
                continue
            kind, label, *rest = line.split("\t")
            if kind == "max_intents":
                z = int(label)
            elif kind == "intent":
                intents.append(label)
            elif kind.startswith("slot"):
                k = int(kind[4:])
                levels.setdefault(k, []).append(label)
                if rest:
                    parent[label] = rest[0]
            else:
                raise ValueError(f"unknown hierarchy line {line!r}")
        slot_levels = [levels[k] for k in sorted(levels)]
        return cls(intents, slot_levels, parent, z)


def coarse_label(label: str) -> str:
    return label.split(".", 1)[0]


def build_hierarchy(train: Sequence[Sample], levels: int = 1) -> LabelHierarchy:
    if levels not in (1, 2):
        raise ValueError(f"levels must be 1 or 2, got {levels}")
    intents = sorted({i for s in train for i in s.intents})
    fine = sorted({slot_label(t) for s in train for t in s.slot_tags} - {None})
    z = max((len(s.intent_set) for s in train), default=1)
    if levels == 1:
        return LabelHierarchy(intents, [fine], {}, z)
    parent = {f: coarse_label(f) for f in fine}
    coarse = sorted(set(parent.values()))
    if coarse == fine:
        logger.warning("levels=2 requested but no slot label has a '.' prefix; coarse level equals fine level")
    return LabelHierarchy(intents, [coarse, fine], parent, z)


def dump_hierarchy(h: LabelHierarchy, path) -> None:
    Path(path).write_text("\n".join(h.to_lines()) + "\n", encoding="utf-8")


def load_hierarchy(path) -> LabelHierarchy:
    return LabelHierarchy.from_lines(Path(path).read_text(encoding="utf-8").splitlines())


# ---------------------------------------------------------------------------
# vocabularies and batches


class Vocab:
    def __init__(self, itos: Sequence[str]):
        self.itos = list(itos)
        self.stoi = {s: i for i, s in enumerate(self.itos)}

    @classmethod
    def build(cls, items: Iterable[str]) -> "Vocab":
        return cls([PAD, UNK] + sorted(set(items) - {PAD, UNK}))

    def __len__(self):
        return len(self.itos)

    def __contains__(self, item):
        return item in self.stoi

    def __getitem__(self, item: str) -> int:
        return self.stoi.get(item, 1)


@dataclass
class Vocabularies:
    words: Vocab
    chars: Vocab

    @classmethod
    def build(cls, train: Sequence[Sample]) -> "Vocabularies":
        words = Vocab.build(t.lower() for s in train for t in s.tokens)
        chars = Vocab.build(c for s in train for t in s.tokens for c in t)
        return cls(words, chars)

    def to_dict(self) -> Dict[str, List[str]]:
        return {"words": self.words.itos, "chars": self.chars.itos}

    @classmethod
    def from_dict(cls, d) -> "Vocabularies":
        return cls(Vocab(d["words"]), Vocab(d["chars"]))


@dataclass
class Batch:
    samples: List[Sample]
    token_ids: torch.Tensor  # (b, n) long
    char_ids: torch.Tensor  # (b, n, w) long
    mask: torch.Tensor  # (b, n) float, 1 for real tokens
    gold_tags: torch.Tensor  # (b, n) long, 0 ("O") at pads
    gold_intents: torch.Tensor  # (b, |L^I|) float multi-hot
    gold_intent_count: torch.Tensor  # (b,) long, in [1, z]

    @property
    def lengths(self) -> List[int]:
        return [len(s.tokens) for s in self.samples]

    def __len__(self):
        return len(self.samples)


def encode_batch(samples: Sequence[Sample], vocabs: Vocabularies, hierarchy: LabelHierarchy) -> Batch:
    b = len(samples)
    n = max(len(s.tokens) for s in samples)
    w = max(len(t) for s in samples for t in s.tokens)
    token_ids = torch.zeros(b, n, dtype=torch.long)
    char_ids = torch.zeros(b, n, w, dtype=torch.long)
    mask = torch.zeros(b, n)
    gold_tags = torch.zeros(b, n, dtype=torch.long)
    gold_intents = torch.zeros(b, len(hierarchy.intent_labels))
    count = torch.ones(b, dtype=torch.long)
    tag_index = {t: i for i, t in enumerate(hierarchy.tags)}
    intent_index = {t: i for i, t in enumerate(hierarchy.intent_labels)}
    for r, s in enumerate(samples):
        for i, (tok, tag) in enumerate(zip(s.tokens, s.slot_tags)):
            token_ids[r, i] = vocabs.words[tok.lower()]
            for c, ch in enumerate(tok):
                char_ids[r, i, c] = vocabs.chars[ch]
            mask[r, i] = 1.0
            gold_tags[r, i] = tag_index.get(tag, 0)
        for intent in s.intent_set:
            if intent in intent_index:
                gold_intents[r, intent_index[intent]] = 1.0
        count[r] = min(max(int(gold_intents[r].sum()), 1), hierarchy.max_intents)
    return Batch(list(samples), token_ids, char_ids, mask, gold_tags, gold_intents, count)


def make_batches(
    samples: Sequence[Sample],
    vocabs: Vocabularies,
    hierarchy: LabelHierarchy,
    batch_size: int = 32,
    shuffle_seed: Optional[int] = None,
) -> List[Batch]:
    """Split into padded batches; ``shuffle_seed=None`` keeps corpus order."""
    if not samples:
        return []
    order = np.arange(len(samples))
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(len(samples))
    return [
        encode_batch([samples[i] for i in order[k : k + batch_size]], vocabs, hierarchy)
        for k in range(0, len(samples), batch_size)
    ]
