"""Sequences, candidate sets and Hamming geometry over the attack space.

A sequence is a tuple of non-negative token ids. The attack space is the
Cartesian product of the per-position candidate lists.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence as SeqLike

import numpy as np

Sequence = tuple[int, ...]


def as_sequence(tokens: Iterable[int]) -> Sequence:
    return tuple(int(t) for t in tokens)


@dataclass(frozen=True)
class CandidateSets:
    """Allowed substitutes for every position of one original sequence."""

    options: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        for i, opts in enumerate(self.options):
            if len(opts) == 0:
                raise ValueError(f"position {i}: empty candidate list")
            if len(set(opts)) != len(opts):
                raise ValueError(f"position {i}: duplicate candidates {list(opts)}")

    @classmethod
    def from_lists(cls, lists: SeqLike[SeqLike[int]], original: SeqLike[int] | None = None):
        cands = cls(tuple(tuple(int(t) for t in opts) for opts in lists))
        if original is not None:
            cands.check_original(original)
        return cands

    def __len__(self) -> int:
        return len(self.options)

    def __getitem__(self, i: int) -> tuple[int, ...]:
        return self.options[i]

    def check_original(self, original: SeqLike[int]) -> None:
        if len(original) != len(self.options):
            raise ValueError(
                f"candidate sets cover {len(self.options)} positions, sequence has {len(original)}"
            )
        for i, (w, opts) in enumerate(zip(original, self.options)):
            if w not in opts:
                raise ValueError(f"position {i}: original token {w} missing from its candidates")

    def sizes(self) -> np.ndarray:
        return np.array([len(o) for o in self.options], dtype=int)

    def modifiable(self) -> list[int]:
        return [i for i, o in enumerate(self.options) if len(o) >= 2]

    def contains(self, seq: SeqLike[int]) -> bool:
        return len(seq) == len(self.options) and all(t in o for t, o in zip(seq, self.options))

    def space_size(self, positions: Iterable[int] | None = None) -> int:
        idx = range(len(self.options)) if positions is None else positions
        return math.prod(len(self.options[i]) for i in idx)


def hamming_distance(a: SeqLike[int], b: SeqLike[int]) -> int:
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    return sum(x != y for x, y in zip(a, b))


def differing_positions(a: SeqLike[int], b: SeqLike[int]) -> list[int]:
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    return [i for i, (x, y) in enumerate(zip(a, b)) if x != y]


def _check_positions(positions: Iterable[int], length: int) -> list[int]:
    pos = sorted(set(int(p) for p in positions))
    if pos and (pos[0] < 0 or pos[-1] >= length):
        raise ValueError(f"positions {pos} out of range for length {length}")
    return pos


def one_ball(center: SeqLike[int], cands: CandidateSets, positions: Iterable[int]) -> list[Sequence]:
    """All single substitutions of ``center`` at ``positions``.

    Ordered by ascending position, then ascending replacement token.
    """
    center = as_sequence(center)
    out = []
    for i in _check_positions(positions, len(center)):
        for tok in sorted(cands[i]):
            if tok != center[i]:
                out.append(center[:i] + (tok,) + center[i + 1:])
    return out


def sample_space(
    center: SeqLike[int],
    cands: CandidateSets,
    positions: Iterable[int],
    count: int,
    rng: np.random.Generator,
    exclude: set[Sequence] | frozenset[Sequence] = frozenset(),
) -> list[Sequence]:
    """Distinct uniform samples from the subspace that varies only ``positions``.

    Sequences in ``exclude`` are never returned. Fewer than ``count``
    sequences come back once the subspace is exhausted.
    """
    if count < 0:
        raise ValueError("count must be non-negative")
    center = as_sequence(center)
    pos = _check_positions(positions, len(center))
    if count == 0:
        return []
    options = [sorted(cands[i]) for i in pos]
    card = math.prod(len(o) for o in options)

    def build(choice) -> Sequence:
        seq = list(center)
        for i, tok in zip(pos, choice):
            seq[i] = tok
        return tuple(seq)

    if card <= 4 * (count + len(exclude)):
        pool = [s for s in (build(c) for c in itertools.product(*options)) if s not in exclude]
        if not pool:
            return []
        order = rng.permutation(len(pool))[:count]
        return [pool[j] for j in order]

    out: list[Sequence] = []
    seen = set(exclude)
    # subspace is at least 4x larger than everything excluded, so this terminates quickly
    while len(out) < count:
        seq = build(opts[rng.integers(len(opts))] for opts in options)
        if seq not in seen:
            seen.add(seq)
            out.append(seq)
    return out


def mask_block(s: SeqLike[int], block: Iterable[int]) -> Sequence:
    """Delete the ``block`` positions from ``s``, yielding a shorter sequence."""
    s = as_sequence(s)
    drop = set(_check_positions(block, len(s)))
    if len(drop) == len(s):
        raise ValueError("masking every position leaves an empty sequence")
    return tuple(t for i, t in enumerate(s) if i not in drop)


def within_balls(
    x: SeqLike[int], constraints: Iterable[tuple[SeqLike[int], int]]
) -> bool:
    """True if ``x`` lies within every (center, radius) Hamming ball."""
    return all(hamming_distance(x, c) <= r for c, r in constraints)
