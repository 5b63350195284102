"""Black-box victims, the attack criterion and query accounting."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Protocol, Sequence as SeqLike

import httpx
import numpy as np

log = logging.getLogger(__name__)


class BudgetExceeded(RuntimeError):
    """Raised when a query would push the ledger past its cap."""


class VictimProtocolError(RuntimeError):
    """A remote victim replied with something other than valid logits."""


class Victim(Protocol):
    n_classes: int

    def logits(self, batch: list[tuple[int, ...]]) -> np.ndarray:
        """Return an array of shape (len(batch), n_classes)."""
        ...


def attack_criterion(logits: SeqLike[float], y: int) -> float:
    """Largest wrong-class logit minus the true-class logit.

    Non-negative values mean the prediction is not ``y`` (ties included).
    """
    z = np.asarray(logits, dtype=float)
    if z.ndim != 1 or z.size < 2:
        raise ValueError("need a 1-d logit vector with at least two classes")
    if not 0 <= y < z.size:
        raise ValueError(f"label {y} out of range for {z.size} classes")
    return float(np.max(np.delete(z, y)) - z[y])


def attack_criteria(logits: np.ndarray, y: int) -> np.ndarray:
    """Row-wise :func:`attack_criterion`."""
    z = np.array(logits, dtype=float, ndmin=2)
    if z.shape[1] < 2 or not 0 <= y < z.shape[1]:
        raise ValueError(f"label {y} out of range for {z.shape[1]} classes")
    true = z[:, y].copy()
    z[:, y] = -np.inf
    return z.max(axis=1) - true


@dataclass
class QueryLedger:
    cap: int | None = None
    phases: Counter = field(default_factory=Counter)

    @property
    def total(self) -> int:
        return sum(self.phases.values())

    @property
    def remaining(self) -> float:
        return float("inf") if self.cap is None else self.cap - self.total

    def charge(self, n: int, phase: str) -> None:
        if n < 0:
            raise ValueError("cannot charge a negative number of queries")
        if self.cap is not None and self.total + n > self.cap:
            raise BudgetExceeded(f"{n} more queries would exceed the cap of {self.cap} (used {self.total})")
        self.phases[phase] += n


def query(victim: Victim, batch: list[tuple[int, ...]], ledger: QueryLedger, phase: str = "block") -> np.ndarray:
    """Score ``batch`` on ``victim``, charging one query per sequence."""
    if not batch:
        return np.zeros((0, victim.n_classes))
    ledger.charge(len(batch), phase)
    out = np.asarray(victim.logits(list(batch)), dtype=float)
    if out.shape != (len(batch), victim.n_classes):
        raise VictimProtocolError(f"expected logits of shape {(len(batch), victim.n_classes)}, got {out.shape}")
    if not np.all(np.isfinite(out)):
        raise VictimProtocolError("victim returned non-finite logits")
    return out


class LinearToyVictim:
    """Bag-of-tokens linear classifier: logit_c(s) = sum_i weights[c, s_i] + bias[c]."""

    def __init__(self, weights, bias=None):
        self.weights = np.asarray(weights, dtype=float)
        if self.weights.ndim != 2 or self.weights.shape[0] < 2:
            raise ValueError("weights must have shape (n_classes >= 2, vocab)")
        self.n_classes, self.vocab = self.weights.shape
        self.bias = np.zeros(self.n_classes) if bias is None else np.asarray(bias, dtype=float)

    def logits(self, batch):
        if not batch:
            return np.zeros((0, self.n_classes))
        rows = [np.asarray(seq, dtype=int) for seq in batch]
        if any(idx.size == 0 for idx in rows):
            raise ValueError("cannot score an empty sequence")
        flat = np.concatenate(rows)
        if flat.min() < 0 or flat.max() >= self.vocab:
            raise ValueError(f"token id outside vocabulary of size {self.vocab}")
        if len({idx.size for idx in rows}) == 1:
            return self.weights[:, np.stack(rows)].sum(axis=2).T + self.bias
        return np.stack([self.weights[:, idx].sum(axis=1) for idx in rows]) + self.bias


class KeywordToyVictim:
    """Binary classifier that flips once enough trigger tokens are present.

    The trigger-class logit equals the trigger count, while the base-class
    logit sits at ``threshold - 0.5``, so ``threshold`` triggers are needed.
    """

    n_classes = 2

    def __init__(self, triggers: Iterable[int], base_class: int = 0, trigger_class: int = 1, threshold: int = 1):
        if {base_class, trigger_class} != {0, 1}:
            raise ValueError("base and trigger classes must be 0 and 1")
        self.triggers = frozenset(int(t) for t in triggers)
        self.base_class = base_class
        self.trigger_class = trigger_class
        self.threshold = threshold

    def logits(self, batch):
        out = np.empty((len(batch), 2))
        if any(len(seq) == 0 for seq in batch):
            raise ValueError("cannot score an empty sequence")
        trig = self.triggers
        out[:, self.trigger_class] = [sum(int(t) in trig for t in seq) for seq in batch]
        out[:, self.base_class] = self.threshold - 0.5
        return out


class CountingVictim:
    """Wraps a victim and counts every sequence it scores."""

    def __init__(self, inner: Victim):
        self.inner = inner
        self.n_classes = inner.n_classes
        self.calls = 0

    def logits(self, batch):
        self.calls += len(batch)
        return self.inner.logits(batch)


class RemoteVictim:
    """HTTP client for a victim served at ``{url}/v1/logits``."""

    def __init__(self, url: str, n_classes: int, timeout: float = 30.0, client: httpx.Client | None = None):
        self.endpoint = url.rstrip("/") + "/v1/logits"
        self.n_classes = n_classes
        self._client = client or httpx.Client(timeout=timeout)

    def logits(self, batch):
        payload = {"sequences": [[int(t) for t in seq] for seq in batch]}
        try:
            resp = self._client.post(self.endpoint, json=payload)
        except httpx.HTTPError as exc:
            raise VictimProtocolError(f"request to {self.endpoint} failed: {exc}") from exc
        if resp.status_code != 200:
            raise VictimProtocolError(f"{self.endpoint} answered HTTP {resp.status_code}")
        try:
            logits = resp.json()["logits"]
            arr = np.asarray(logits, dtype=float)
        except (ValueError, KeyError, TypeError) as exc:
            raise VictimProtocolError(f"malformed reply from {self.endpoint}: {exc}") from exc
        if arr.ndim != 2 or arr.shape[0] != len(batch):
            raise VictimProtocolError(
                f"{self.endpoint} returned {arr.shape[0] if arr.ndim else 0} logit rows for {len(batch)} sequences"
            )
        if arr.shape[1] != self.n_classes:
            raise VictimProtocolError(f"expected {self.n_classes} classes, got {arr.shape[1]}")
        return arr

    def close(self):
        self._client.close()
