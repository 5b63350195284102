"""Mutable per-attack state shared by the block loop and post-optimization."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .gp import GpModel, GpParams
from .seqspace import CandidateSets, Sequence
from .subsample import EvalRecord
from .victim import BudgetExceeded, QueryLedger, Victim, attack_criteria, query


class FitEvent(NamedTuple):
    block: int | None  # None for fits spanning all positions
    size: int
    budget: int | None


@dataclass
class AttackContext:
    s: Sequence
    y: int
    cands: CandidateSets
    victim: Victim
    ledger: QueryLedger
    rng: np.random.Generator
    standardize: bool = True
    evaluated: dict[Sequence, float] = field(default_factory=dict)
    best: EvalRecord | None = None
    params: GpParams | None = None
    fit_log: list[FitEvent] = field(default_factory=list)
    fit_seconds: float = 0.0
    degraded_fits: int = 0

    def __post_init__(self):
        if self.params is None:
            self.params = GpParams.initial(len(self.s))

    def evaluate(self, seqs: list[Sequence], phase: str) -> list[EvalRecord]:
        """Query the victim on ``seqs``, truncated to the remaining budget.

        Raises BudgetExceeded only when nothing at all can be queried.
        """
        if not seqs:
            return []
        room = self.ledger.remaining
        if room <= 0:
            raise BudgetExceeded(f"query budget of {self.ledger.cap} exhausted")
        seqs = list(seqs[: int(min(room, len(seqs)))])
        values = attack_criteria(query(self.victim, seqs, self.ledger, phase), self.y)
        recs = [EvalRecord(seq, float(v)) for seq, v in zip(seqs, values)]
        for rec in recs:
            self.evaluated[rec.seq] = rec.value
            if self.best is None or rec.value > self.best.value:
                self.best = rec
        return recs

    def fit(self, records: list[EvalRecord], positions: list[int], block: int | None = None,
            budget: int | None = None) -> GpModel:
        """Build a GP on ``records`` over ``positions``, warm-started from the
        shared parameter store, and write the fitted values back."""
        t0 = time.perf_counter()
        p = self.params
        local = GpParams(p.mean, p.lengthscales[positions], p.signal_var, p.noise_var)
        model = GpModel.from_sequences(
            [r.seq for r in records], [r.value for r in records], positions, local, standardize=self.standardize
        )
        if len(records) >= 2 and positions:
            fitted = model.fit_map()
            if model.degraded:
                self.degraded_fits += 1
            lengthscales = p.lengthscales.copy()
            lengthscales[positions] = fitted.lengthscales
            self.params = GpParams(fitted.mean, lengthscales, fitted.signal_var, fitted.noise_var)
        self.fit_seconds += time.perf_counter() - t0
        self.fit_log.append(FitEvent(block, len(records), budget))
        return model
