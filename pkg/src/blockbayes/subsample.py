"""Subset-of-data history subsampling by farthest point clustering."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .seqspace import Sequence


class EvalRecord(NamedTuple):
    seq: Sequence
    value: float


def dedupe(history: list[EvalRecord]) -> list[EvalRecord]:
    """One record per sequence, at its first position, carrying the latest value."""
    latest: dict[Sequence, float] = {}
    for rec in history:
        latest[rec.seq] = rec.value
    return [EvalRecord(seq, val) for seq, val in latest.items()]


def sod_fpc(history: list[EvalRecord], n: int, rng: np.random.Generator) -> list[EvalRecord]:
    """Pick ``n`` records: a random seed, then greedily the record farthest
    (in Hamming distance over full sequences) from those already picked.

    Histories smaller than ``n`` are returned whole. Ties go to the earliest
    record.
    """
    if n < 1:
        raise ValueError("subset size must be at least 1")
    records = dedupe(history)
    if len(records) < n:
        return records
    X = np.asarray([r.seq for r in records])
    first = int(rng.integers(len(records)))
    chosen = [first]
    mind = np.sum(X != X[first], axis=1)
    mind[first] = -1
    while len(chosen) < n:
        j = int(np.argmax(mind))
        chosen.append(j)
        mind = np.minimum(mind, np.sum(X != X[j], axis=1))
        mind[chosen] = -1
    return [records[j] for j in chosen]
