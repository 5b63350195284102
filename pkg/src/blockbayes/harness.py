"""Dataset ingestion, configuration, baselines, metrics and benchmark runs."""

from __future__ import annotations

import itertools
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, astuple, dataclass, field, fields
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from .blockopt import AttackConfig, AttackOutcome, run_attack
from .seqspace import CandidateSets, Sequence, as_sequence, differing_positions
from .victim import (
    BudgetExceeded,
    KeywordToyVictim,
    LinearToyVictim,
    QueryLedger,
    RemoteVictim,
    Victim,
    VictimProtocolError,
    attack_criteria,
    query,
)

log = logging.getLogger(__name__)

MAX_ORACLE_SPACE = 10**6
METHODS = ("bba", "random", "oracle")


class DatasetError(ValueError):
    pass


class UndefinedASR(ValueError):
    """No instance was originally classified correctly."""


@dataclass
class DatasetHeader:
    classes: int
    vocab: int


@dataclass
class InstanceRecord:
    id: str
    tokens: list[int]
    label: int
    candidates: list[list[int]]

    @property
    def seq(self) -> Sequence:
        return as_sequence(self.tokens)

    def candidate_sets(self) -> CandidateSets:
        return CandidateSets.from_lists(self.candidates, self.tokens)


def _parse_instance(obj: Any, header: DatasetHeader) -> InstanceRecord:
    if not isinstance(obj, dict):
        raise ValueError("expected a JSON object")
    missing = {"id", "tokens", "label", "candidates"} - obj.keys()
    if missing:
        raise ValueError(f"missing keys {sorted(missing)}")
    inst = InstanceRecord(str(obj["id"]), [int(t) for t in obj["tokens"]], int(obj["label"]),
                          [[int(t) for t in c] for c in obj["candidates"]])
    if not inst.tokens:
        raise ValueError("empty token list")
    if len(inst.candidates) != len(inst.tokens):
        raise ValueError(f"{len(inst.candidates)} candidate lists for {len(inst.tokens)} tokens")
    if not 0 <= inst.label < header.classes:
        raise ValueError(f"label {inst.label} outside {header.classes} classes")
    for t in itertools.chain(inst.tokens, *inst.candidates):
        if not 0 <= t < header.vocab:
            raise ValueError(f"token {t} outside vocabulary of size {header.vocab}")
    inst.candidate_sets()
    return inst


def load_dataset(path) -> tuple[DatasetHeader, list[InstanceRecord]]:
    header = None
    instances = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                if header is None:
                    header = DatasetHeader(classes=int(obj["classes"]), vocab=int(obj["vocab"]))
                    if header.classes < 2:
                        raise ValueError("need at least two classes")
                else:
                    instances.append(_parse_instance(obj, header))
            except (ValueError, KeyError, TypeError) as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from exc
    if header is None:
        raise DatasetError(f"{path}: missing header line")
    return header, instances


def write_dataset(path, header: DatasetHeader, instances: Iterable[InstanceRecord]) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps(asdict(header)) + "\n")
        for inst in instances:
            fh.write(json.dumps(asdict(inst)) + "\n")


@dataclass
class RunConfig:
    m: int = 40
    R: int = 4
    n_b: int = 4
    t: int = 100
    n_post: int = 50
    r: int = 2
    global_budget: int | None = None
    seed: int = 0
    method: str = "bba"
    victim: Any = None
    standardize_targets: bool = True
    subsample: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}, expected one of {METHODS}")

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            raw = json.load(fh)
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"{path}: unknown config keys {sorted(unknown)}")
        return cls(**raw)

    def attack_config(self) -> AttackConfig:
        return AttackConfig(m=self.m, R=self.R, n_b=self.n_b, t=self.t, n_post=self.n_post, r=self.r,
                            global_budget=self.global_budget, seed=self.seed,
                            standardize_targets=self.standardize_targets, subsample=self.subsample)


def build_victim(spec: Any, header: DatasetHeader) -> Victim:
    """Victim from a config entry: a URL string or a toy description.

    Toy descriptions are ``{"kind": "linear", "weights": [[...]], "bias": [...]}``,
    ``{"kind": "linear", "seed": int, "scale": float}`` or
    ``{"kind": "keyword", "triggers": [...], "base_class": 0, "trigger_class": 1, "threshold": 1}``.
    """
    if isinstance(spec, str):
        if not spec.startswith(("http://", "https://")):
            raise ValueError(f"victim string must be an http(s) URL, got {spec!r}")
        return RemoteVictim(spec, header.classes)
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ValueError("victim must be a URL or an object with a 'kind'")
    kind = spec["kind"]
    if kind == "linear":
        if "weights" in spec:
            victim = LinearToyVictim(spec["weights"], spec.get("bias"))
        else:
            rng = np.random.default_rng(spec.get("seed", 0))
            victim = LinearToyVictim(spec.get("scale", 1.0) * rng.standard_normal((header.classes, header.vocab)))
        if victim.n_classes != header.classes or victim.vocab < header.vocab:
            raise ValueError("linear victim does not match the dataset header")
        return victim
    if kind == "keyword":
        if header.classes != 2:
            raise ValueError("keyword victim needs a two-class dataset")
        return KeywordToyVictim(spec["triggers"], spec.get("base_class", 0), spec.get("trigger_class", 1),
                                spec.get("threshold", 1))
    raise ValueError(f"unknown victim kind {kind!r}")


def random_search_baseline(
    s, y: int, cands: CandidateSets, victim: Victim, budget: int, rng: np.random.Generator
) -> AttackOutcome:
    """Query distinct uniform samples of the attack space until one is adversarial."""
    s = as_sequence(s)
    ledger = QueryLedger(budget)
    seen = {s}
    positions = list(range(len(s)))
    card = cands.space_size()

    def outcome(success, adv, error=None, skipped=False):
        diff = differing_positions(s, adv)
        return AttackOutcome(success, adv, ledger.total, len(diff), diff,
                             {"init": ledger.phases.get("init", 0), "block": ledger.phases.get("block", 0),
                              "post": 0},
                             skipped=skipped, error=error, first_adv=adv if success else None,
                             post_trajectory=[len(diff)] if success else [])

    best, best_val = s, -math.inf
    try:
        if attack_criteria(query(victim, [s], ledger, "init"), y)[0] >= 0:
            return outcome(True, s, skipped=True)
        while len(seen) < card:
            seq = tuple(cands[i][rng.integers(len(cands[i]))] for i in positions)
            if seq in seen:
                continue
            seen.add(seq)
            val = attack_criteria(query(victim, [seq], ledger, "block"), y)[0]
            if val >= 0:
                return outcome(True, seq)
            if val > best_val:
                best, best_val = seq, val
        return outcome(False, best)
    except BudgetExceeded:
        return outcome(False, best, error="query budget exhausted")
    except VictimProtocolError as exc:
        return outcome(False, s, error=f"victim error: {exc}")


@dataclass
class OracleResult:
    feasible: bool
    adv: Sequence | None
    hamming: int | None
    queries: int


def exhaustive_oracle(s, y: int, cands: CandidateSets, victim: Victim,
                      max_space: int = MAX_ORACLE_SPACE) -> OracleResult:
    """Minimum-Hamming adversarial sequence, by enumeration in order of distance.

    Within the first distance that contains adversarial sequences the one
    with the largest criterion wins.
    """
    s = as_sequence(s)
    size = cands.space_size()
    if size > max_space:
        raise ValueError(f"attack space of {size} sequences exceeds the oracle limit of {max_space}")
    ledger = QueryLedger()
    alts = [[t for t in cands[i] if t != s[i]] for i in range(len(s))]
    positions = [i for i in range(len(s)) if alts[i]]
    for d in range(len(positions) + 1):
        layer = []
        for subset in itertools.combinations(positions, d):
            for toks in itertools.product(*(alts[i] for i in subset)):
                seq = list(s)
                for i, t in zip(subset, toks):
                    seq[i] = t
                layer.append(tuple(seq))
        values = attack_criteria(query(victim, layer, ledger, "oracle"), y)
        if np.any(values >= 0):
            j = int(np.argmax(values))
            return OracleResult(True, layer[j], d, ledger.total)
    return OracleResult(False, None, None, ledger.total)


def outcome_row(inst: InstanceRecord, outcome: AttackOutcome) -> dict:
    length = len(inst.tokens)
    return {
        "id": inst.id,
        "success": bool(outcome.success),
        "queries": int(outcome.queries),
        "hamming": int(outcome.hamming),
        "modification_rate": 100.0 * outcome.hamming / length,
        "adv_tokens": [int(t) for t in outcome.adv],
        "phase_queries": {k: int(outcome.phase_queries.get(k, 0)) for k in ("init", "block", "post")},
        "error": outcome.error,
        "skipped": bool(outcome.skipped),
        "first_hamming": outcome.first_hamming,
    }


@dataclass
class Metrics:
    asr: float
    mr: float
    qrs: float
    n: int


def compute_metrics(rows: list[dict]) -> Metrics:
    """ASR over originally-correct instances, MR over their successes, Qrs over all.

    Rows flagged ``skipped`` were misclassified before any perturbation.
    """
    if not rows:
        raise ValueError("no outcomes")
    attacked = [r for r in rows if not r.get("skipped")]
    if not attacked:
        raise UndefinedASR("no instance was originally classified correctly")
    wins = [r for r in attacked if r["success"]]
    asr = 100.0 * len(wins) / len(attacked)
    mr = float(np.mean([r["modification_rate"] for r in wins])) if wins else 0.0
    qrs = float(np.mean([r["queries"] for r in rows]))
    return Metrics(asr=asr, mr=mr, qrs=qrs, n=len(rows))


@dataclass
class RunReport:
    rows: list[dict]
    metrics: Metrics
    query_counts: list[int] = field(default_factory=list)

    def check(self) -> None:
        again = compute_metrics(self.rows)
        if not all(math.isclose(a, b, abs_tol=1e-9) for a, b in zip(astuple(again), astuple(self.metrics))):
            raise ValueError(f"aggregates {self.metrics} disagree with rows {again}")


def _run_one(args) -> dict:
    index, inst, header, cfg = args
    rng = np.random.default_rng([cfg.seed, index])
    victim = None
    try:
        victim = build_victim(cfg.victim, header)
        cands = inst.candidate_sets()
        if cfg.method == "bba":
            outcome = run_attack(inst.seq, inst.label, cands, victim, cfg.attack_config(), rng=rng)
        elif cfg.method == "random":
            if cfg.global_budget is None:
                raise ValueError("random search needs a global_budget")
            outcome = random_search_baseline(inst.seq, inst.label, cands, victim, cfg.global_budget, rng)
        else:
            return _oracle_row(inst, victim)
        return outcome_row(inst, outcome)
    except (ValueError, VictimProtocolError) as exc:
        return {"id": inst.id, "success": False, "queries": 0, "hamming": 0, "modification_rate": 0.0,
                "adv_tokens": list(inst.tokens), "phase_queries": {"init": 0, "block": 0, "post": 0},
                "error": f"{type(exc).__name__}: {exc}", "skipped": False, "first_hamming": None}
    finally:
        if isinstance(victim, RemoteVictim):
            victim.close()


def _oracle_row(inst: InstanceRecord, victim: Victim) -> dict:
    s = inst.seq
    base = attack_criteria(victim.logits([s]), inst.label)[0]
    res = exhaustive_oracle(s, inst.label, inst.candidate_sets(), victim)
    adv = res.adv if res.feasible else s
    return {"id": inst.id, "feasible": res.feasible, "success": res.feasible, "queries": res.queries,
            "hamming": res.hamming if res.feasible else 0,
            "modification_rate": 100.0 * (res.hamming or 0) / len(s),
            "adv_tokens": [int(t) for t in adv], "phase_queries": {"init": 0, "block": 0, "post": 0},
            "error": None, "skipped": bool(base >= 0), "first_hamming": res.hamming}


def run_rows(header: DatasetHeader, instances: list[InstanceRecord], cfg: RunConfig, workers: int = 1) -> list[dict]:
    """Attack every instance; rows come back in input order."""
    tasks = [(i, inst, header, cfg) for i, inst in enumerate(instances)]
    if workers <= 1:
        return [_run_one(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, tasks))


def aggregate_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.stem + ".aggregate.json")


def write_rows(path, rows: list[dict]) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_rows(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def run_benchmark(dataset_path, config_path, out_path, workers: int = 1, seed: int | None = None,
                  method: str | None = None) -> RunReport:
    header, instances = load_dataset(dataset_path)
    cfg = RunConfig.load(config_path)
    if seed is not None:
        cfg.seed = seed
    if method is not None:
        cfg.method = method
    rows = run_rows(header, instances, cfg, workers)
    write_rows(out_path, rows)
    if cfg.method == "oracle":
        metrics = Metrics(asr=float("nan"), mr=float("nan"), qrs=float("nan"), n=len(rows))
        try:
            metrics = compute_metrics(rows)
        except UndefinedASR:
            pass
    else:
        metrics = compute_metrics(rows)
    with open(aggregate_path(out_path), "w") as fh:
        json.dump(asdict(metrics), fh, sort_keys=True)
        fh.write("\n")
    return RunReport(rows, metrics, [r["queries"] for r in rows])
