"""Small generated multi-intent corpus for smoke training and demos.

Three intents and four fine slot labels under two coarse prefixes
(``loc.city``/``loc.state`` and ``time.day``/``time.period``). Multi-intent
utterances join two clauses with "and" and their intents with '#'.

Run ``python -m misca.synthetic OUT_DIR`` to write train/dev/test files.
"""
from __future__ import annotations

import argparse
import itertools
import random
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

from .corpus import Sample, write_corpus

SLOT_VALUES: Dict[str, List[str]] = {
    "loc.city": ["boston", "denver", "san francisco"],
    "loc.state": ["utah", "texas"],
    "time.day": ["monday", "friday"],
    "time.period": ["morning", "evening"],
}

# {loc} draws a city or a state, {day}/{period} a value of that label;
# one keyword per intent
TEMPLATES: Dict[str, List[str]] = {
    "atis_flight": ["flights to {loc}", "flights on {day}", "flights to {loc} in the {period}"],
    "atis_airfare": ["fares to {loc}", "fares on {day}", "fares to {loc} on {day}"],
    "atis_ground_service": ["ground service in {loc}", "ground service in the {period}", "ground service in {loc} on {day}"],
}


class _Values:
    """Round-robin slot values so every value and label shows up evenly."""

    def __init__(self, rng: random.Random):
        self.rng = rng
        self.cycles: Dict[str, Iterator[str]] = {}

    def next(self, key: str, choices: Sequence[str]) -> str:
        if key not in self.cycles:
            order = list(choices)
            self.rng.shuffle(order)
            self.cycles[key] = itertools.cycle(order)
        return next(self.cycles[key])


def _fill(template: str, values: _Values) -> Tuple[List[str], List[str]]:
    tokens: List[str] = []
    tags: List[str] = []
    for word in template.split():
        if word.startswith("{"):
            slot = word[1:-1]
            label = values.next("loc", ["loc.city", "loc.state"]) if slot == "loc" else f"time.{slot}"
            for i, part in enumerate(values.next(label, SLOT_VALUES[label]).split()):
                tokens.append(part)
                tags.append(("B-" if i == 0 else "I-") + label)
        else:
            tokens.append(word)
            tags.append("O")
    return tokens, tags


Clause = Tuple[Tuple[str, ...], Tuple[str, ...], str]


def make_clause(intent: str, values: _Values) -> Clause:
    tokens, tags = _fill(values.next(intent, TEMPLATES[intent]), values)
    return tuple(tokens), tuple(tags), intent


def join_clauses(clauses: Sequence[Clause]) -> Sample:
    tokens: List[str] = []
    tags: List[str] = []
    for j, (t, g, _) in enumerate(clauses):
        if j:
            tokens.append("and")
            tags.append("O")
        tokens += t
        tags += g
    return Sample(tuple(tokens), tuple(tags), tuple(c[2] for c in clauses))


def generate(
    n_train: int = 20, n_dev: int = 10, n_test: int = 10, seed: int = 0
) -> Dict[str, List[Sample]]:
    """Train, dev and test splits.

    Every held-out utterance reuses the template skeleton (clause templates
    and intents, in order) of some training utterance with freshly drawn slot
    values, so words, values and intent combinations have all been seen; what
    is new is the assignment of values to positions. Exact copies of training
    utterances are avoided when possible.
    """
    rng = random.Random(seed)
    values = _Values(rng)
    names = sorted(TEMPLATES)
    # every single intent and every ordered pair, cycled so the training
    # split covers all intent combinations
    compositions = [(i,) for i in names] + list(itertools.permutations(names, 2))
    rng.shuffle(compositions)
    skeletons: List[Tuple[Tuple[str, str], ...]] = []
    for k in range(n_train):
        skeletons.append(tuple((i, values.next(i, TEMPLATES[i])) for i in compositions[k % len(compositions)]))
    train = [_realize(sk, values) for sk in skeletons]
    seen = set(train)

    def held_out(n: int) -> List[Sample]:
        out: List[Sample] = []
        for attempt in range(100 * n + 100):
            if len(out) == n:
                break
            s = _realize(rng.choice(skeletons), values)
            if s not in seen or attempt >= 100 * n:
                out.append(s)
        return out

    return {"train": train, "dev": held_out(n_dev), "test": held_out(n_test)}


def _realize(skeleton: Sequence[Tuple[str, str]], values: _Values) -> Sample:
    clauses = []
    for intent, template in skeleton:
        tokens, tags = _fill(template, values)
        clauses.append((tuple(tokens), tuple(tags), intent))
    return join_clauses(clauses)


def tiny_corpus() -> List[Sample]:
    """Three two-token utterances: 2 intents, 3 fine slot labels under 2 coarse ones."""
    return [
        Sample(("fly", "boston"), ("O", "B-toloc.city_name"), ("atis_flight",)),
        Sample(("fare", "dallas"), ("O", "B-fromloc.city_name"), ("atis_airfare",)),
        Sample(("go", "utah"), ("O", "B-toloc.state_name"), ("atis_flight", "atis_airfare")),
    ]


def write_splits(out_dir, splits: Dict[str, Sequence[Sample]]) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, samples in splits.items():
        write_corpus(samples, out / f"{name}.txt")


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = argparse.ArgumentParser(description="Write a small synthetic multi-intent corpus.")
    ap.add_argument("out_dir")
    ap.add_argument("--train", type=int, default=20)
    ap.add_argument("--dev", type=int, default=10)
    ap.add_argument("--test", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    write_splits(args.out_dir, generate(args.train, args.dev, args.test, args.seed))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
