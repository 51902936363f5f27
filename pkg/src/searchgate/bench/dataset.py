"""Deterministic synthetic geographic dataset.

Documents mirror the benchmark schema: a pseudo-word place name (a seeded
1% of which contain the exact phrase "Sankt Georgen"), an ISO-3166-style
2-letter country code drawn uniformly from a fixed 30-code list, a
log-uniform population, and coordinate/elevation floats. The same seed
always yields the byte-identical stream.
"""

from __future__ import annotations

import random
from typing import Iterator

COUNTRY_CODES: tuple[str, ...] = (
    "AT", "BE", "BG", "CH", "CZ", "DE", "DK", "EE", "ES", "FI",
    "FR", "GB", "GR", "HR", "HU", "IE", "IS", "IT", "LT", "LU",
    "LV", "MT", "NL", "NO", "PL", "PT", "RO", "SE", "SI", "SK",
)

PHRASE = "Sankt Georgen"
PHRASE_FRACTION = 0.01

POPULATION_MAX = 10_000_000
LONGITUDE_RANGE = (-180.0, 180.0)
LATITUDE_RANGE = (-90.0, 90.0)
ELEVATION_RANGE = (-400.0, 8800.0)


def _build_vocabulary() -> tuple[str, ...]:
    # fixed internal seed: the vocabulary is a constant, independent of the
    # caller's dataset seed
    rng = random.Random(0x5EED)
    consonants = "bcdfghklmnprstvz"
    vowels = "aeiou"
    words = set()
    while len(words) < 400:
        length = rng.randint(2, 4)
        word = "".join(
            rng.choice(consonants) + rng.choice(vowels) for _ in range(length)
        )
        if word not in ("sankt", "georgen"):
            words.add(word)
    return tuple(sorted(words))


VOCABULARY = _build_vocabulary()


def generate_dataset(n: int, seed: int, tenant_ids: tuple[int, ...] | None = None) -> Iterator[dict]:
    """Yield *n* documents deterministically for *seed*.

    Each record carries ``_id`` plus the schema fields; with
    ``tenant_ids`` every document also gets a ``tenant_id`` drawn
    uniformly from the given values.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = random.Random(seed)
    for i in range(n):
        words = [
            VOCABULARY[rng.randrange(len(VOCABULARY))].capitalize()
            for _ in range(rng.randint(2, 4))
        ]
        if rng.random() < PHRASE_FRACTION:
            at = rng.randint(0, len(words))
            words[at:at] = PHRASE.split()
        doc = {
            "_id": f"g{i:08d}",
            "name": " ".join(words),
            "country_code": COUNTRY_CODES[rng.randrange(len(COUNTRY_CODES))],
            "population": int(10 ** rng.uniform(0.0, 7.0)) - 1,
            "longitude": rng.uniform(*LONGITUDE_RANGE),
            "latitude": rng.uniform(*LATITUDE_RANGE),
            "elevation": rng.uniform(*ELEVATION_RANGE),
        }
        if tenant_ids is not None:
            doc["tenant_id"] = tenant_ids[rng.randrange(len(tenant_ids))]
        yield doc


def doc_pairs(records) -> Iterator[tuple[str, dict]]:
    """Split generator records into (doc_id, fields) pairs for the store."""
    for record in records:
        fields = dict(record)
        doc_id = fields.pop("_id")
        yield doc_id, fields
