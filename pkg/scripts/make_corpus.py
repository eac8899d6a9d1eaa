#!/usr/bin/env python3
"""Regenerate the shipped benchmark corpus (data/train.txt, data/eval.txt).

The text is deterministic, templated pseudo-prose with heavy phrase reuse so
that suffix-copy drafting has real matches and n-gram drafters of different
orders form a meaningful quality gradient.
"""
import random
from pathlib import Path

SUBJECTS = [
    "the scheduler", "the cache layer", "the batch planner", "the router",
    "the token stream", "the draft queue", "the review loop", "the worker pool",
]
VERBS = [
    "accepts", "rejects", "rebuilds", "reorders", "flushes", "inspects",
    "replays", "merges",
]
OBJECTS = [
    "the pending batch", "the longest prefix", "every cached entry",
    "the draft tokens", "the final sequence", "the shared buffer",
    "the cost table", "the next window",
]
TAILS = [
    "before the deadline expires", "whenever the budget allows",
    "and records the outcome", "until the queue drains",
    "without touching the cache", "and the cycle repeats",
]

REFRAINS = [
    "the review loop accepts the draft tokens and the cycle repeats",
    "the scheduler flushes the pending batch before the deadline expires",
    "the cache layer replays the longest prefix whenever the budget allows",
]


def sentence(rng: random.Random) -> str:
    if rng.random() < 0.35:
        return rng.choice(REFRAINS)
    return (f"{rng.choice(SUBJECTS)} {rng.choice(VERBS)} {rng.choice(OBJECTS)} "
            f"{rng.choice(TAILS)}")


def line(rng: random.Random, n_sentences: int) -> str:
    parts = []
    for _ in range(n_sentences):
        s = sentence(rng)
        parts.append(s)
        # copy-heavy: occasionally repeat the sentence verbatim
        if rng.random() < 0.3:
            parts.append(s)
    return ". ".join(parts) + "."


def main() -> None:
    data = Path(__file__).resolve().parent.parent / "data"
    data.mkdir(exist_ok=True)
    rng = random.Random(20240117)
    train = [line(rng, rng.randint(3, 6)) for _ in range(400)]
    evals = [line(rng, rng.randint(2, 4)) for _ in range(120)]
    (data / "train.txt").write_text("\n".join(train) + "\n", encoding="utf-8")
    (data / "eval.txt").write_text("\n".join(evals) + "\n", encoding="utf-8")
    print(f"train: {sum(len(l) for l in train)} chars over {len(train)} lines")
    print(f"eval: {sum(len(l) for l in evals)} chars over {len(evals)} lines")


if __name__ == "__main__":
    main()
