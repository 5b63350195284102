"""Shrinking the perturbation of an adversarial sequence while keeping it adversarial."""

from __future__ import annotations

import itertools
import math

import numpy as np

from .acquisition import dpp_greedy_batch, expected_improvement, select_top_t
from .context import AttackContext
from .seqspace import CandidateSets, Sequence, differing_positions, hamming_distance, one_ball
from .subsample import EvalRecord, sod_fpc
from .victim import BudgetExceeded

N_SAMPLES = 300
DATA_CAP = 512


def sample_reduced_space(
    s: Sequence, s_adv: Sequence, cands: CandidateSets, r: int, count: int, rng: np.random.Generator
) -> list[Sequence]:
    """Distinct random members of B(s_adv, r) ∩ B(s, d - r), d = d_H(s, s_adv).

    A point within r substitutions of ``s_adv`` that is also d - r close to
    ``s`` must restore exactly r of the differing positions to their original
    tokens and touch nothing else, so the set is enumerated as r-subsets of
    the differing positions.
    """
    diff = differing_positions(s, s_adv)
    d = len(diff)
    if count <= 0 or r > d or r < 0:
        return []

    def revert(subset) -> Sequence:
        seq = list(s_adv)
        for i in subset:
            seq[i] = s[i]
        return tuple(seq)

    total = math.comb(d, r)
    if total <= 4 * count:
        combos = list(itertools.combinations(diff, r))
        order = rng.permutation(len(combos))[:count]
        return [revert(combos[j]) for j in order]
    seen: set[tuple[int, ...]] = set()
    out = []
    while len(out) < count:
        subset = tuple(sorted(rng.choice(diff, size=r, replace=False).tolist()))
        if subset not in seen:
            seen.add(subset)
            out.append(revert(subset))
    return out


def _proposal_pool(ctx: AttackContext, model, s_adv: Sequence, r: int, best: float) -> list[Sequence]:
    """Candidates around the EI-best random sample, restricted to the reduced space."""
    s, cands = ctx.s, ctx.cands
    d = hamming_distance(s, s_adv)
    positions = cands.modifiable()
    samples = sample_reduced_space(s, s_adv, cands, r, N_SAMPLES, ctx.rng)
    anchors = []
    if samples:
        mean, var, _ = model.posterior_sequences(samples)
        ei = np.atleast_1d(expected_improvement(mean, var, best))
        anchors = [samples[j] for j in np.argsort(-ei, kind="stable")]
    anchors.append(s_adv)

    def reduced(x: Sequence) -> bool:
        return hamming_distance(s, x) <= d - 1 and hamming_distance(s_adv, x) <= r

    fresh_samples = [x for x in samples if x not in ctx.evaluated]
    for anchor in anchors:
        ball = [x for x in one_ball(anchor, cands, positions) if x not in ctx.evaluated and reduced(x)]
        pool = list(dict.fromkeys(ball + fresh_samples))
        if pool:
            return pool
    return []


def post_optimize(
    ctx: AttackContext,
    s_adv: Sequence,
    dataset: list[EvalRecord],
    n_post: int,
    n_b: int,
    r: int = 2,
    t: int = 100,
    cap: int = DATA_CAP,
) -> tuple[Sequence, list[int]]:
    """Search B(s, d - 1) ∩ B(s_adv, r) for closer adversarial sequences.

    Every hit restarts the ``n_post`` budget; the loop ends once a full
    budget passes without one. Returns the final adversarial sequence and
    the Hamming distances of every accepted sequence, starting with the input.
    """
    s = ctx.s
    positions = ctx.cands.modifiable()
    data = list(dataset)
    trajectory = [hamming_distance(s, s_adv)]
    remaining = n_post
    try:
        while remaining > 0 and trajectory[-1] > 1:
            if len(data) > cap:
                data = sod_fpc(data, cap, ctx.rng)
            model = ctx.fit(data, positions)
            best = max(rec.value for rec in data)
            pool = _proposal_pool(ctx, model, s_adv, r, best)
            top = select_top_t(pool, model, best, t, exclude=ctx.evaluated) if pool else []
            if not top:
                break
            batch = dpp_greedy_batch(top, model, min(n_b, remaining))
            recs = ctx.evaluate(batch, "post")
            data.extend(recs)
            remaining -= len(recs)
            hits = [rec for rec in recs if rec.value >= 0]
            if hits:
                pick = min(hits, key=lambda rec: (hamming_distance(s, rec.seq), -rec.value))
                s_adv = pick.seq
                trajectory.append(hamming_distance(s, s_adv))
                remaining = n_post
    except BudgetExceeded:
        pass
    return s_adv, trajectory
