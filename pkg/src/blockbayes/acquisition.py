"""Expected improvement screening and DPP-greedy batch selection."""

from __future__ import annotations

from typing import Iterable

import numpy as np
from scipy.linalg import solve_triangular
from scipy.stats import norm

from .gp import GpModel
from .seqspace import Sequence

SIGMA_MIN = 1e-9
# conditional variances below this fraction of the largest prior variance count as degenerate
DEGENERATE_RTOL = 1e-12


def expected_improvement(mean, variance, best: float):
    """Closed-form E[max(g - best, 0)] for g ~ N(mean, variance). Vectorized."""
    mean = np.asarray(mean, dtype=float)
    variance = np.asarray(variance, dtype=float)
    if np.any(variance < 0):
        raise ValueError("variance must be non-negative")
    sigma = np.sqrt(variance)
    diff = mean - best
    safe = np.where(sigma > SIGMA_MIN, sigma, 1.0)
    z = diff / safe
    ei = np.where(sigma > SIGMA_MIN, diff * norm.cdf(z) + sigma * norm.pdf(z), np.maximum(diff, 0.0))
    ei = np.maximum(ei, 0.0)
    return float(ei) if ei.ndim == 0 else ei


def select_top_t(
    candidates: list[Sequence],
    model: GpModel,
    best: float,
    T: int,
    exclude: Iterable[Sequence] = (),
) -> list[Sequence]:
    """Up to ``T`` not-yet-evaluated candidates, highest EI first.

    Ties keep the enumeration order of ``candidates``.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    excluded = exclude if isinstance(exclude, (set, frozenset, dict)) else set(exclude)
    pool = [c for c in candidates if c not in excluded]
    if not pool:
        return []
    mean, var, _ = model.posterior_sequences(pool)
    ei = expected_improvement(mean, var, best)
    order = np.argsort(-np.atleast_1d(ei), kind="stable")[:T]
    return [pool[j] for j in order]


def dpp_greedy_batch(top: list[Sequence], model: GpModel, n_b: int) -> list[Sequence]:
    """Greedy batch maximizing the determinant of the posterior covariance.

    Starts from ``top[0]`` and repeatedly appends the candidate with the
    largest gain det(Var[B + s]) - det(Var[B]). Since det(Var[B + s]) =
    det(Var[B]) * c(s) with c(s) the variance of s conditioned on B, the
    argmax is taken over c(s), updating a Cholesky factor of Var[B].
    """
    if not top:
        raise ValueError("need at least one candidate")
    size = min(n_b, len(top))
    if size <= 0:
        return []
    _, _, cov = model.posterior_sequences(top)
    floor = DEGENERATE_RTOL * max(float(np.max(np.diag(cov))), np.finfo(float).tiny)

    chosen = [0]
    L = np.array([[np.sqrt(max(cov[0, 0], 0.0))]])
    degenerate = cov[0, 0] <= floor
    while len(chosen) < size and not degenerate:
        rest = [j for j in range(len(top)) if j not in chosen]
        V = solve_triangular(L, cov[np.ix_(chosen, rest)], lower=True)
        cond = cov[rest, rest] - np.sum(V * V, axis=0)
        k = int(np.argmax(cond))
        if cond[k] <= floor:
            degenerate = True
            break
        j = rest[k]
        L = np.block([[L, np.zeros((len(chosen), 1))], [V[:, k][None, :], np.array([[np.sqrt(cond[k])]])]])
        chosen.append(j)

    batch = [top[j] for j in chosen]
    if degenerate:
        # rank-deficient covariance: top up by EI order, skipping repeats
        for seq in top:
            if len(batch) >= size:
                break
            if seq not in batch:
                batch.append(seq)
    return batch

