"""Small generated slot-filling corpora in the style of flight queries.

The grammar uses eight tags (``O`` plus B/I for departure, arrival and date,
and ``B-airline``). City names repeat across the departure and arrival
roles, so tagging them needs the surrounding words.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import seeding
from .corpus import Pair, make_pair

CITIES = (
    "boston", "denver", "dallas", "atlanta", "seattle", "chicago", "oakland", "phoenix",
    "new york", "los angeles", "san francisco", "salt lake city", "las vegas", "st. louis",
)
DATES = ("today", "tomorrow", "monday", "friday", "sunday", "next tuesday", "next week",
         "april first", "this evening")
AIRLINES = ("delta", "united", "american", "continental", "alaska")

TAGS = ("O", "B-fromloc", "I-fromloc", "B-toloc", "I-toloc", "B-date", "I-date", "B-airline")

# Slot placeholders: {from} {to} {date} {airline}
TEMPLATES = (
    "show flights from {from} to {to} {date}",
    "show me flights from {from} to {to}",
    "i want to fly from {from} to {to} {date}",
    "list {airline} flights from {from} to {to}",
    "what flights go to {to} from {from}",
    "flights to {to} from {from} {date}",
    "are there any {airline} flights to {to} {date}",
    "i need a flight {date} from {from} to {to}",
    "which {airline} flights leave {from} {date}",
    "book a ticket to {to} leaving {from}",
    "fares from {from} to {to} on {airline}",
    "what is the cheapest flight to {to}",
)

_SLOT_TAG = {"from": "fromloc", "to": "toloc", "date": "date", "airline": "airline"}


def _render(template: str, rng: np.random.Generator, cities: Sequence[str]) -> Pair:
    tokens: list[str] = []
    tags: list[str] = []
    for word in template.split():
        if word.startswith("{") and word.endswith("}"):
            slot = word[1:-1]
            pool = {"from": cities, "to": cities, "date": DATES, "airline": AIRLINES}[slot]
            value = pool[rng.integers(len(pool))].split()
            kind = _SLOT_TAG[slot]
            tokens.extend(value)
            tags.extend([f"B-{kind}"] + [f"I-{kind}"] * (len(value) - 1))
        else:
            tokens.append(word)
            tags.append("O")
    return make_pair(tokens, tags)


def toy_slot_corpus(n: int, seed: int = 0, templates: Sequence[str] = TEMPLATES,
                    cities: Sequence[str] = CITIES) -> list[Pair]:
    """``n`` sentences drawn uniformly from the templates."""
    rng = seeding.stream(seed, "synthetic")
    return [_render(templates[rng.integers(len(templates))], rng, cities) for _ in range(n)]


def random_tag_sequence(rng: np.random.Generator, length: int,
                        kinds: Sequence[str] = ("a", "b", "c"), p_outside: float = 0.4) -> list[str]:
    """Arbitrary (possibly IOB-invalid) tag sequence for scorer tests."""
    out = []
    for _ in range(length):
        if rng.random() < p_outside:
            out.append("O")
        else:
            prefix = "B" if rng.random() < 0.5 else "I"
            out.append(f"{prefix}-{kinds[rng.integers(len(kinds))]}")
    return out
