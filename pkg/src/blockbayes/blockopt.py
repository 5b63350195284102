"""Blockwise Bayesian optimization loop.

Positions are split into contiguous blocks that are optimized one at a
time, most important first, each with its own evaluation history and a
query budget equal to the size of its 1-Hamming neighbourhood. The first
adversarial sequence found is handed to post-optimization.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .acquisition import dpp_greedy_batch, select_top_t
from .context import AttackContext, FitEvent
from .gp import GpParams, NumericalFailure
from .postopt import DATA_CAP, post_optimize
from .seqspace import CandidateSets, Sequence, as_sequence, differing_positions, mask_block, one_ball, sample_space
from .subsample import EvalRecord, dedupe, sod_fpc
from .victim import (
    BudgetExceeded,
    QueryLedger,
    Victim,
    VictimProtocolError,
    attack_criteria,
    query,
)

log = logging.getLogger(__name__)


class NothingToAttack(ValueError):
    """No position has an alternative candidate."""


@dataclass
class AttackConfig:
    m: int = 40
    R: int = 4
    n_b: int = 4
    t: int = 100
    n_post: int = 50
    r: int = 2
    global_budget: int | None = None
    seed: int = 0
    standardize_targets: bool = True
    subsample: bool = True
    explore: int | None = None  # overrides min(N_k, 2 * n_b)

    def __post_init__(self):
        if self.m < 1 or self.R < 1 or self.r < 1:
            raise ValueError("m, R and r must be at least 1")
        if not 1 <= self.n_b <= self.t:
            raise ValueError("need 1 <= n_b <= t")


@dataclass
class Block:
    index: int
    positions: list[int]
    budget: int
    history: list[EvalRecord] = field(default_factory=list)
    importance: float = 0.0

    def explore_budget(self, config: AttackConfig) -> int:
        e = min(self.budget, 2 * config.n_b) if config.explore is None else config.explore
        return min(e, self.budget)


@dataclass
class AttackOutcome:
    success: bool
    adv: Sequence
    queries: int
    hamming: int
    modified: list[int]
    phase_queries: dict[str, int]
    skipped: bool = False
    error: str | None = None
    first_adv: Sequence | None = None
    post_trajectory: list[int] = field(default_factory=list)
    fit_log: list[FitEvent] = field(default_factory=list)
    fit_seconds: float = 0.0

    @property
    def first_hamming(self) -> int | None:
        return self.post_trajectory[0] if self.post_trajectory else None


def decompose(cands: CandidateSets, m: int) -> list[Block]:
    """Contiguous blocks of ``m`` positions, dropping positions with a single candidate."""
    if m < 1:
        raise ValueError("block size must be at least 1")
    sizes = cands.sizes()
    blocks = []
    for start in range(0, len(cands), m):
        pos = [i for i in range(start, min(start + m, len(cands))) if sizes[i] >= 2]
        if pos:
            blocks.append(Block(len(blocks), pos, int(sum(sizes[i] - 1 for i in pos))))
    if not blocks:
        raise NothingToAttack("no position admits a substitution")
    return blocks


def init_importance(
    s: Sequence, y: int, blocks: list[Block], victim: Victim, ledger: QueryLedger, base: float | None = None
) -> list[float]:
    """Score each block by how much deleting it moves the criterion.

    ``base`` is the criterion of ``s`` when it has already been queried.
    With a single block there is nothing to order and no query is spent.
    """
    if base is None:
        base = float(attack_criteria(query(victim, [as_sequence(s)], ledger, "init"), y)[0])
    if len(blocks) == 1:
        scores = [0.0]
    else:
        masked = [mask_block(s, b.positions) for b in blocks]
        values = attack_criteria(query(victim, masked, ledger, "init"), y)
        scores = [abs(base - float(v)) for v in values]
    for b, a in zip(blocks, scores):
        b.importance = a
    return scores


def update_importance(params: GpParams, blocks: list[Block]) -> list[float]:
    """Score each block by the summed inverse length-scales of its positions."""
    inv = 1.0 / params.lengthscales
    scores = [float(inv[b.positions].sum()) for b in blocks]
    for b, a in zip(blocks, scores):
        b.importance = a
    return scores


def block_order(blocks: list[Block]) -> list[int]:
    return sorted(range(len(blocks)), key=lambda k: (-blocks[k].importance, k))


def optimize_block(block: Block, ctx: AttackContext, config: AttackConfig) -> bool:
    """One pass of Bayesian optimization restricted to ``block``.

    Returns True as soon as the best evaluated sequence is adversarial.
    """
    if ctx.best.value >= 0:
        return True
    if config.subsample:
        data = sod_fpc(block.history, block.budget, ctx.rng) if block.history else []
    else:
        data = dedupe(block.history)
    s_cur = ctx.best.seq
    # exploration only tops the block's own data up to E_k points
    n_explore = max(0, block.explore_budget(config) - len(data))
    samples = sample_space(s_cur, ctx.cands, block.positions, n_explore, ctx.rng, exclude=ctx.evaluated)
    recs = ctx.evaluate(samples, "block")
    data += recs
    block.history += recs
    remaining = block.budget - len(recs)

    while remaining > 0:
        if ctx.best.value >= 0:
            return True
        s_cur = ctx.best.seq
        model = ctx.fit(data or [ctx.best], block.positions, block.index, block.budget)
        best_y = max(rec.value for rec in (data or [ctx.best]))
        pool = [x for x in one_ball(s_cur, ctx.cands, block.positions) if x not in ctx.evaluated]
        if not pool:
            # s_cur's neighbourhood is used up: screen fresh points of the block subspace instead
            pool = sample_space(s_cur, ctx.cands, block.positions, config.t, ctx.rng, exclude=ctx.evaluated)
        if not pool:
            break
        top = select_top_t(pool, model, best_y, config.t)
        batch = dpp_greedy_batch(top, model, min(config.n_b, remaining))
        recs = ctx.evaluate(batch, "block")
        data += recs
        block.history += recs
        remaining -= len(recs)
    return ctx.best.value >= 0


def _outcome(ctx: AttackContext, success: bool, adv: Sequence, **kw) -> AttackOutcome:
    diff = differing_positions(ctx.s, adv)
    return AttackOutcome(
        success=success,
        adv=adv,
        queries=ctx.ledger.total,
        hamming=len(diff),
        modified=diff,
        phase_queries={p: ctx.ledger.phases.get(p, 0) for p in ("init", "block", "post")},
        fit_log=ctx.fit_log,
        fit_seconds=ctx.fit_seconds,
        **kw,
    )


def _post_phase(ctx: AttackContext, block: Block, config: AttackConfig) -> AttackOutcome:
    s_adv = ctx.best.seq
    dataset = sod_fpc(block.history, block.budget, ctx.rng) if config.subsample else dedupe(block.history)
    if s_adv not in {rec.seq for rec in dataset}:
        dataset.append(ctx.best)
    final, trajectory = post_optimize(ctx, s_adv, dataset, config.n_post, config.n_b, config.r, config.t,
                                      cap=DATA_CAP)
    return _outcome(ctx, True, final, first_adv=s_adv, post_trajectory=trajectory)


def run_attack(
    s,
    y: int,
    cands: CandidateSets,
    victim: Victim,
    config: AttackConfig,
    rng: np.random.Generator | None = None,
    ledger: QueryLedger | None = None,
) -> AttackOutcome:
    """Attack ``s`` (true label ``y``) within the candidate space ``cands``."""
    s = as_sequence(s)
    cands.check_original(s)
    ctx = AttackContext(
        s=s,
        y=y,
        cands=cands,
        victim=victim,
        ledger=ledger if ledger is not None else QueryLedger(config.global_budget),
        rng=rng if rng is not None else np.random.default_rng(config.seed),
        standardize=config.standardize_targets,
    )
    block: Block | None = None
    try:
        ctx.evaluate([s], "init")
        if ctx.best.value >= 0:
            return _outcome(ctx, True, s, skipped=True)
        try:
            blocks = decompose(cands, config.m)
        except NothingToAttack as exc:
            return _outcome(ctx, False, s, error=f"nothing to attack: {exc}")
        init_importance(s, y, blocks, victim, ctx.ledger, base=ctx.best.value)

        modifiable = cands.modifiable()
        for _ in range(config.R):
            spent = ctx.ledger.total
            for k in block_order(blocks):
                block = blocks[k]
                if optimize_block(block, ctx, config):
                    return _post_phase(ctx, block, config)
            block = None
            if config.subsample:
                union = [rec for b in blocks for rec in sod_fpc(b.history, b.budget, ctx.rng)]
            else:
                union = [rec for b in blocks for rec in dedupe(b.history)]
            if len(union) >= 2:
                ctx.fit(union, modifiable)
            update_importance(ctx.params, blocks)
            if ctx.ledger.total == spent:
                break  # every block subspace is exhausted
    except BudgetExceeded:
        if ctx.best is not None and ctx.best.value >= 0:
            adv = ctx.best.seq
            return _outcome(ctx, True, adv, first_adv=adv, post_trajectory=[len(differing_positions(s, adv))])
        return _outcome(ctx, False, ctx.best.seq if ctx.best else s, error="query budget exhausted")
    except VictimProtocolError as exc:
        return _outcome(ctx, False, ctx.best.seq if ctx.best else s, error=f"victim error: {exc}")
    except NumericalFailure as exc:
        log.warning("numerical failure: %s", exc)
        return _outcome(ctx, False, ctx.best.seq, error=f"numerical failure: {exc}")

    if ctx.best.value >= 0:
        return _outcome(ctx, True, ctx.best.seq, first_adv=ctx.best.seq,
                        post_trajectory=[len(differing_positions(s, ctx.best.seq))])
    return _outcome(ctx, False, ctx.best.seq)
