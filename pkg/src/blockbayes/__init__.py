"""Blockwise Bayesian optimization for minimal adversarial substitutions in token sequences."""

from .blockopt import AttackConfig, AttackOutcome, run_attack
from .seqspace import CandidateSets, hamming_distance
from .victim import (
    CountingVictim,
    KeywordToyVictim,
    LinearToyVictim,
    QueryLedger,
    RemoteVictim,
    attack_criterion,
)

__all__ = [
    "AttackConfig",
    "AttackOutcome",
    "CandidateSets",
    "CountingVictim",
    "KeywordToyVictim",
    "LinearToyVictim",
    "QueryLedger",
    "RemoteVictim",
    "attack_criterion",
    "hamming_distance",
    "run_attack",
]
