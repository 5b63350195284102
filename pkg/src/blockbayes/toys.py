"""Seeded toy problems for tests and demos."""

from __future__ import annotations

import itertools

import numpy as np

from .harness import InstanceRecord, build_victim, DatasetHeader
from .victim import Victim, attack_criteria


def toy_victim(spec: dict, vocab: int, classes: int = 2) -> Victim:
    return build_victim(spec, DatasetHeader(classes=classes, vocab=vocab))


def adversarial_fraction(victim: Victim, inst: InstanceRecord) -> float:
    """Share of the whole attack space on which the victim is fooled."""
    space = [tuple(p) for p in itertools.product(*inst.candidates)]
    values = attack_criteria(victim.logits(space), inst.label)
    return float(np.mean(values >= 0))


def synth_instances(
    victim: Victim,
    n: int,
    length: int,
    n_cands: int,
    vocab: int,
    rng: np.random.Generator,
    max_adv_fraction: float = 1.0,
    feasible_only: bool = True,
    prefix: str = "toy",
    max_tries: int = 100_000,
) -> list[InstanceRecord]:
    """Random instances labeled with the victim's own prediction.

    Each position offers its original token plus ``n_cands - 1`` random
    alternatives. With ``feasible_only`` an instance is kept only when some
    point of its attack space is adversarial, and at most ``max_adv_fraction``
    of the space is.
    """
    out = []
    for _ in range(max_tries):
        if len(out) == n:
            break
        tokens = rng.integers(vocab, size=length).tolist()
        cands = []
        for t in tokens:
            others = rng.choice([v for v in range(vocab) if v != t], size=n_cands - 1, replace=False)
            cands.append(sorted([t, *others.tolist()]))
        label = int(np.argmax(victim.logits([tuple(tokens)])[0]))
        inst = InstanceRecord(f"{prefix}-{len(out)}", tokens, label, cands)
        if attack_criteria(victim.logits([tuple(tokens)]), label)[0] >= 0:
            continue
        if feasible_only:
            frac = adversarial_fraction(victim, inst)
            if not 0 < frac <= max_adv_fraction:
                continue
        out.append(inst)
    if len(out) < n:
        raise RuntimeError(f"only {len(out)} of {n} instances met the constraints")
    return out
