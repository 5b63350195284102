"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

The lines are printed in pytest's terminal summary (see conftest.py) and
when this file is run directly with ``python tests/test_acceptance.py``.
"""

from __future__ import annotations

import itertools
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np
import pytest

from blockbayes.acquisition import dpp_greedy_batch, expected_improvement
from blockbayes.blockopt import AttackConfig, AttackOutcome, run_attack
from blockbayes.gp import GpModel, GpParams, kernel_matrix
from blockbayes.harness import (
    DatasetHeader,
    exhaustive_oracle,
    random_search_baseline,
    run_benchmark,
    write_dataset,
)
from blockbayes.seqspace import CandidateSets, hamming_distance
from blockbayes.subsample import EvalRecord, sod_fpc
from blockbayes.toys import synth_instances, toy_victim
from blockbayes.victim import CountingVictim, LinearToyVictim, attack_criteria

RESULTS: dict[int, str] = {}


def record(number: int, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
    RESULTS[number] = line
    print(line)
    assert ok, line


# --- 1. GP correctness -----------------------------------------------------

def _dense_kernel(A, B, beta, sf2):
    K = np.empty((len(A), len(B)))
    for i, a in enumerate(A):
        for j, b in enumerate(B):
            K[i, j] = sf2 * math.exp(-sum(1.0 / bt for x, z, bt in zip(a, b, beta) if x != z))
    return K


def _random_gp_problem(rng):
    l, n = int(rng.integers(1, 11)), int(rng.integers(1, 21))
    X = rng.integers(3, size=(n, l))
    y = rng.standard_normal(n)
    p = GpParams(float(rng.normal()), np.exp(rng.uniform(-1, 1.5, l)), float(np.exp(rng.uniform(-1, 1))),
                 float(np.exp(rng.uniform(-3, 0))))
    return X, y, p


def test_criterion_1_gp_correctness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst_post = worst_eig = 0.0
    for _ in range(100):
        X, y, p = _random_gp_problem(rng)
        Z = rng.integers(3, size=(int(rng.integers(1, 8)), X.shape[1]))
        mean, var, cov = GpModel(X, y, p, standardize=False).posterior(Z)
        Kxx = _dense_kernel(X, X, p.lengthscales, p.signal_var) + p.noise_var * np.eye(len(X))
        Kxz = _dense_kernel(X, Z, p.lengthscales, p.signal_var)
        inv = np.linalg.inv(Kxx)
        m_ref = p.mean + Kxz.T @ inv @ (y - p.mean)
        c_ref = _dense_kernel(Z, Z, p.lengthscales, p.signal_var) - Kxz.T @ inv @ Kxz
        worst_post = max(worst_post, np.abs(mean - m_ref).max(), np.abs(cov - c_ref).max(),
                         np.abs(var - np.diag(c_ref)).max())
        K = kernel_matrix(X, X, p.lengthscales, p.signal_var)
        worst_eig = min(worst_eig, np.linalg.eigvalsh(K).min())

    worst_grad = 0.0
    h = 1e-5
    for _ in range(50):
        X, y, p = _random_gp_problem(rng)
        model = GpModel(X, y, p)
        theta = p.to_vector()
        _, grad = model.objective(theta)
        for k in range(theta.size):
            e = np.zeros_like(theta)
            e[k] = h
            fd = (model.objective(theta + e)[0] - model.objective(theta - e)[0]) / (2 * h)
            worst_grad = max(worst_grad, abs(grad[k] - fd) / max(abs(fd), 1e-3))
    elapsed = time.perf_counter() - t0
    ok = worst_post <= 1e-8 and worst_eig >= -1e-8 and worst_grad <= 1e-4 and elapsed < 10
    record(1, ok, f"posterior max err {worst_post:.1e} (<=1e-8), min eig {worst_eig:.1e} (>=-1e-8), "
                  f"grad rel err {worst_grad:.1e} (<=1e-4), {elapsed:.1f}s (<10s)")


# --- 2. EI vs Monte Carlo ---------------------------------------------------

def test_criterion_2_ei_monte_carlo():
    rng = np.random.default_rng(202)
    triples = [(0.0, 1.0, 0.0), (1.0, 0.0, 0.0), (0.0, 0.0, 1.0), (0.5, 0.0, 0.5), (0.0, 1e-6, 0.0),
               (1e-3, 1e-6, 0.0), (0.0, 1e-4, 2e-4), (2.0, 1e-3, 1.0)]
    while len(triples) < 20:
        # keep y* within a few sigma of mu so 10^6 draws resolve the improvement tail
        mu, sigma = float(rng.normal(0, 2)), float(np.exp(rng.uniform(-3, 1.5)))
        triples.append((mu, sigma, mu + sigma * float(rng.uniform(-2.5, 2.5))))
    z = np.random.default_rng(7).standard_normal(10**6)
    worst = 0.0
    for mu, sigma, best in triples:
        gain = np.maximum(mu + sigma * z - best, 0.0)
        mc, se = gain.mean(), gain.std(ddof=1) / math.sqrt(z.size)
        err = abs(expected_improvement(mu, sigma**2, best) - mc)
        worst = max(worst, err / se if se > 0 else (0.0 if err <= 1e-15 else math.inf))
    record(2, worst <= 3.0, f"max |EI - MC| = {worst:.2f} standard errors over {len(triples)} triples (<=3)")


# --- 3. FPC fidelity ---------------------------------------------------------

def _brute_fpc(seqs, seed_idx, n):
    chosen = [seed_idx]
    while len(chosen) < n:
        best, arg = -1, None
        for j, x in enumerate(seqs):
            if j in chosen:
                continue
            d = min(sum(a != b for a, b in zip(x, seqs[c])) for c in chosen)
            if d > best:
                best, arg = d, j
        chosen.append(arg)
    return chosen


def test_criterion_3_fpc_fidelity():
    rng = np.random.default_rng(303)
    mismatches = size_errors = 0
    for case in range(200):
        size = int(rng.integers(1, 51))
        l = int(rng.integers(2, 9))
        pool = {tuple(rng.integers(3, size=l).tolist()) for _ in range(size)}
        seqs = list(pool)
        hist = [EvalRecord(s, float(i)) for i, s in enumerate(seqs)]
        n = int(rng.integers(1, 60))
        out = sod_fpc(hist, n, np.random.default_rng(case))
        if len(out) != min(n, len(hist)):
            size_errors += 1
        if len(hist) >= n:
            seed_idx = seqs.index(out[0].seq)
            if [seqs[j] for j in _brute_fpc(seqs, seed_idx, n)] != [r.seq for r in out]:
                mismatches += 1
        elif out != hist:
            mismatches += 1
    record(3, mismatches == 0 and size_errors == 0,
           f"{200 - mismatches}/200 traces match brute force, {size_errors} size errors")


# --- 4. DPP fidelity ----------------------------------------------------------

def test_criterion_4_dpp_fidelity():
    rng = np.random.default_rng(404)
    bad_picks = dup_pairs = 0
    for _ in range(100):
        l = int(rng.integers(2, 6))
        n = int(rng.integers(2, 12))
        X = [tuple(x) for x in rng.integers(3, size=(n, l))]
        model = GpModel.from_sequences(X, rng.standard_normal(n), list(range(l)),
                                       GpParams(0.0, np.exp(rng.uniform(-1, 1, l)), 1.0, 0.05))
        size = int(rng.integers(1, 9))
        top = [tuple(x) for x in rng.integers(3, size=(size, l))]
        if size > 2 and rng.random() < 0.3:
            top[int(rng.integers(1, size))] = top[0]
        n_b = int(rng.integers(1, 5))
        batch = dpp_greedy_batch(top, model, n_b)
        if len(set(batch)) != len(batch):
            dup_pairs += 1
        _, _, cov = model.posterior_sequences(top)
        chosen = [0]
        for seq in batch[1:]:
            rest = [j for j in range(len(top)) if j not in chosen]
            base = np.linalg.det(cov[np.ix_(chosen, chosen)])
            gains = {j: np.linalg.det(cov[np.ix_(chosen + [j], chosen + [j])]) - base for j in rest}
            pick = next(j for j in rest if top[j] == seq)
            if gains[pick] < max(gains.values()) - 1e-12 * max(1.0, abs(base)):
                bad_picks += 1
            chosen.append(pick)
    record(4, bad_picks == 0 and dup_pairs == 0,
           f"{bad_picks} greedy picks off the exhaustive argmax, {dup_pairs} batches with duplicates")


# --- shared end-to-end run (criteria 5, 6, 8, 9) ------------------------------

CONFIG = AttackConfig(m=6, R=4, n_b=4, t=100, r=2, n_post=50, global_budget=500)
VOCAB = 30


def _victim_specs():
    rng = np.random.default_rng(505)
    specs = [{"kind": "linear", "seed": j} for j in range(5)]
    for j in range(5):
        triggers = sorted(rng.choice(VOCAB, size=6, replace=False).tolist())
        specs.append({"kind": "keyword", "triggers": triggers, "threshold": 1 + j % 3})
    return specs


@dataclass
class EndToEnd:
    specs: list
    problems: list  # (spec index, instance)
    outcomes: list[AttackOutcome] = field(default_factory=list)
    calls: list[int] = field(default_factory=list)
    oracle: list = field(default_factory=list)
    seconds: float = 0.0


@pytest.fixture(scope="module")
def end_to_end() -> EndToEnd:
    specs = _victim_specs()
    rng = np.random.default_rng(2024)
    problems = []
    for k, spec in enumerate(specs):
        victim = toy_victim(spec, vocab=VOCAB)
        insts = synth_instances(victim, 10, 6, 3, VOCAB, rng, max_adv_fraction=0.05, prefix=f"v{k}")
        problems += [(k, inst) for inst in insts]
    run = EndToEnd(specs, problems)
    t0 = time.perf_counter()
    for idx, (k, inst) in enumerate(problems):
        victim = CountingVictim(toy_victim(specs[k], vocab=VOCAB))
        cands = inst.candidate_sets()
        run.outcomes.append(run_attack(inst.seq, inst.label, cands, victim, CONFIG, rng=np.random.default_rng(idx)))
        run.calls.append(victim.calls)
        run.oracle.append(exhaustive_oracle(inst.seq, inst.label, cands, victim.inner))
    run.seconds = time.perf_counter() - t0
    return run


def test_criterion_5_oracle_comparison(end_to_end):
    run = end_to_end
    feasible = sum(o.feasible for o in run.oracle)
    wins = sum(o.success for o in run.outcomes)
    verified = beats = matches = 0
    for (k, inst), out, orc in zip(run.problems, run.outcomes, run.oracle):
        victim = toy_victim(run.specs[k], vocab=VOCAB)
        if out.success and attack_criteria(victim.logits([out.adv]), inst.label)[0] >= 0:
            verified += 1
        if out.success and orc.feasible:
            beats += out.hamming < orc.hamming
            matches += out.hamming == orc.hamming
    n = len(run.problems)
    ok = feasible == n == wins == verified and beats == 0 and matches >= 0.7 * n and run.seconds < 300
    record(5, ok, f"ASR {wins}/{n}, re-verified {verified}/{n}, oracle-optimal d_H {matches}/{n} (>=70), "
                  f"{beats} beat the oracle, attacks + oracle {run.seconds:.1f}s (<300s)")


def test_criterion_6_query_efficiency(end_to_end):
    run = end_to_end
    bba = float(np.mean([o.queries for o in run.outcomes]))
    rand = []
    for idx, (k, inst) in enumerate(run.problems):
        victim = toy_victim(run.specs[k], vocab=VOCAB)
        cands = inst.candidate_sets()
        rand.append(np.mean([
            random_search_baseline(inst.seq, inst.label, cands, victim, 500, np.random.default_rng([idx, seed])).queries
            for seed in range(50)
        ]))
    rand_mean = float(np.mean(rand))
    wins = [o for o in run.outcomes if o.success and o.first_hamming is not None]
    mr_first = float(np.mean([100 * o.first_hamming / 6 for o in wins]))
    mr_final = float(np.mean([100 * o.hamming / 6 for o in wins]))
    ok = bba < rand_mean and mr_final < mr_first
    record(6, ok, f"Qrs BBA {bba:.1f} < random {rand_mean:.1f}; MR before post-opt {mr_first:.1f}% "
                  f"-> after {mr_final:.1f}%")


def test_criterion_7_scalability():
    rng = np.random.default_rng(707)
    vocab, l = 60, 200
    w = rng.standard_normal((2, vocab))
    w[0] += 5.0  # class 0 wins everywhere: nothing in the space is adversarial
    s = tuple(rng.integers(vocab, size=l).tolist())
    cands = CandidateSets.from_lists(
        [sorted({t, *rng.choice([u for u in range(vocab) if u != t], size=2, replace=False).tolist()}) for t in s], s)
    runs = {}
    for sub in (True, False):
        victim = CountingVictim(LinearToyVictim(w))
        cfg = AttackConfig(m=40, R=1000, global_budget=2000, subsample=sub)
        runs[sub] = run_attack(s, 0, cands, victim, cfg, rng=np.random.default_rng(1))
        assert runs[sub].queries == victim.calls == 2000 and not runs[sub].success
    block_fits = [e for e in runs[True].fit_log if e.block is not None]
    worst = max(e.size / (2 * e.budget) for e in block_fits)
    ratio = runs[True].fit_seconds / runs[False].fit_seconds
    record(7, worst <= 1.0 and ratio <= 0.5,
           f"max block fit size / 2N_k = {worst:.2f} (<=1) over {len(block_fits)} fits; fit time "
           f"{runs[True].fit_seconds:.1f}s vs {runs[False].fit_seconds:.1f}s, ratio {ratio:.2f} (<=0.5)")


def test_criterion_8_accounting(end_to_end, tmp_path):
    run = end_to_end
    count_ok = all(o.queries == c == sum(o.phase_queries.values()) for o, c in zip(run.outcomes, run.calls))
    cap_ok = all(o.queries <= CONFIG.global_budget for o in run.outcomes)
    config = {"m": 6, "R": 4, "n_b": 4, "t": 100, "r": 2, "n_post": 50, "global_budget": 500, "seed": 11}
    identical = 0
    for k, spec in enumerate(run.specs):
        data = tmp_path / f"v{k}.jsonl"
        write_dataset(data, DatasetHeader(2, VOCAB), [inst for j, inst in run.problems if j == k])
        cfg = tmp_path / f"v{k}.json"
        cfg.write_text(json.dumps({**config, "victim": spec}))
        a, b = tmp_path / f"a{k}.jsonl", tmp_path / f"b{k}.jsonl"
        rows = run_benchmark(data, cfg, a).rows
        run_benchmark(data, cfg, b, workers=3)
        identical += a.read_bytes() == b.read_bytes()
        cap_ok &= all(r["queries"] <= 500 for r in rows)
    record(8, count_ok and cap_ok and identical == len(run.specs),
           f"Qrs == instrumented count: {count_ok}; caps respected: {cap_ok}; "
           f"byte-identical reruns {identical}/{len(run.specs)}")


def test_criterion_9_post_opt_safety(end_to_end):
    run = end_to_end
    bad = 0
    checked = 0
    for (k, inst), out in zip(run.problems, run.outcomes):
        if not out.success or out.skipped:
            continue
        checked += 1
        victim = toy_victim(run.specs[k], vocab=VOCAB)
        traj = out.post_trajectory
        fine = (
            attack_criteria(victim.logits([out.adv]), inst.label)[0] >= 0
            and attack_criteria(victim.logits([out.first_adv]), inst.label)[0] >= 0
            and all(a > b for a, b in zip(traj, traj[1:]))
            and traj[0] == hamming_distance(inst.seq, out.first_adv)
            and traj[-1] == out.hamming <= traj[0]
            and out.phase_queries["post"] <= CONFIG.n_post * traj[0]
        )
        bad += not fine
    record(9, bad == 0 and checked > 0, f"{checked - bad}/{checked} post-optimized results adversarial with "
                                        f"strictly decreasing d_H")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
