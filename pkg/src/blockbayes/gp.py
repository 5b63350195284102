"""Gaussian-process surrogate with an ARD categorical kernel.

The kernel between two sequences restricted to the modeled positions is

    k(a, b) = signal_var * prod_i exp(-[a_i != b_i] / lengthscale_i)

Hyperparameters are fit by a few warm-started Adam steps on the log
posterior (log marginal likelihood plus gamma priors on the inverse
length-scales and on the noise variance), optimized in log space.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Sequence as SeqLike

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import gammaln

log = logging.getLogger(__name__)

# Gamma(shape, rate) priors
INV_LENGTHSCALE_PRIOR = (3.0, 6.0)
NOISE_PRIOR = (0.9, 10.0)

JITTERS = (0.0, 1e-8, 1e-6, 1e-4)
ADAM_LR = 0.1
ADAM_STEPS = 3
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
LOG_PARAM_BOUND = 10.0
LOG_2PI = math.log(2.0 * math.pi)


class NumericalFailure(RuntimeError):
    """Covariance stayed non positive definite after the largest jitter."""


@dataclass
class GpParams:
    mean: float
    lengthscales: np.ndarray
    signal_var: float
    noise_var: float

    def __post_init__(self):
        self.lengthscales = np.asarray(self.lengthscales, dtype=float)
        if np.any(self.lengthscales <= 0) or self.signal_var <= 0 or self.noise_var <= 0:
            raise ValueError("length-scales and variances must be strictly positive")

    @classmethod
    def initial(cls, n_positions: int) -> "GpParams":
        return cls(mean=0.0, lengthscales=np.full(n_positions, 2.0), signal_var=1.0, noise_var=0.09)

    def to_vector(self) -> np.ndarray:
        return np.concatenate(
            [[self.mean], np.log(self.lengthscales), [math.log(self.signal_var), math.log(self.noise_var)]]
        )

    @classmethod
    def from_vector(cls, theta: np.ndarray) -> "GpParams":
        theta = np.asarray(theta, dtype=float)
        return cls(
            mean=float(theta[0]),
            lengthscales=np.exp(theta[1:-2]),
            signal_var=float(math.exp(theta[-2])),
            noise_var=float(math.exp(theta[-1])),
        )

    def copy(self) -> "GpParams":
        return replace(self, lengthscales=self.lengthscales.copy())


def kernel_eval(a: SeqLike[int], b: SeqLike[int], params: GpParams, positions: SeqLike[int]) -> float:
    """Kernel value between two full sequences, looking only at ``positions``.

    ``params.lengthscales[j]`` belongs to ``positions[j]``.
    """
    out = params.signal_var
    for j, i in enumerate(positions):
        if a[i] != b[i]:
            out *= math.exp(-1.0 / params.lengthscales[j])
    return out


class _OneHot:
    """Joint one-hot encoding of (position, token) pairs for two row sets.

    Turns the weighted match count sum_i w_i [a_i == b_i] into a matmul.
    """

    def __init__(self, A: np.ndarray, B: np.ndarray | None = None):
        rows = A if B is None else np.vstack([A, B])
        n_pos = rows.shape[1]
        self.n_a = A.shape[0]
        if n_pos == 0:
            self.col_pos = np.zeros(0, dtype=int)
            self.onehot = np.zeros((rows.shape[0], 0))
            return
        span = int(rows.max()) + 1
        keys = np.arange(n_pos, dtype=np.int64) * span + rows.astype(np.int64)
        uniq, inv = np.unique(keys, return_inverse=True)
        inv = inv.reshape(keys.shape)
        self.col_pos = (uniq // span).astype(int)
        self.onehot = np.zeros((rows.shape[0], uniq.size))
        self.onehot[np.repeat(np.arange(rows.shape[0]), n_pos), inv.ravel()] = 1.0

    @property
    def a(self) -> np.ndarray:
        return self.onehot[: self.n_a]

    @property
    def b(self) -> np.ndarray:
        return self.onehot[self.n_a:]

    def matches(self, weights: np.ndarray, other: np.ndarray | None = None) -> np.ndarray:
        left = self.a * weights[self.col_pos]
        return left @ (self.a if other is None else other).T


def kernel_matrix(A: np.ndarray, B: np.ndarray, lengthscales: np.ndarray, signal_var: float) -> np.ndarray:
    """Kernel matrix between rows of ``A`` and ``B`` (token arrays over the modeled positions)."""
    A = np.asarray(A, dtype=np.int64).reshape(len(A), -1)
    B = np.asarray(B, dtype=np.int64).reshape(len(B), -1)
    w = 1.0 / np.asarray(lengthscales, dtype=float)
    enc = _OneHot(A, B)
    return signal_var * np.exp(enc.matches(w, enc.b) - w.sum())


def _gamma_logpdf(x, shape: float, rate: float):
    return shape * math.log(rate) - gammaln(shape) + (shape - 1.0) * np.log(x) - rate * x


class GpModel:
    """GP conditioned on token rows ``X`` (already restricted to the modeled positions)."""

    def __init__(self, X, y, params: GpParams, standardize: bool = True, positions=None):
        self.positions = None if positions is None else [int(i) for i in positions]
        self.X = np.asarray(X, dtype=np.int64)
        if self.X.ndim != 2:
            raise ValueError("X must be a 2-d array of tokens")
        self.y = np.asarray(y, dtype=float)
        if self.X.shape[0] != self.y.size:
            raise ValueError("X and y disagree on the number of training points")
        if self.X.shape[0] < 1:
            raise ValueError("GP needs at least one training point")
        if params.lengthscales.size != self.X.shape[1]:
            raise ValueError(
                f"{params.lengthscales.size} length-scales for {self.X.shape[1]} modeled positions"
            )
        self.standardize = standardize
        if standardize:
            self.y_shift = float(self.y.mean())
            sd = float(self.y.std())
            self.y_scale = sd if sd > 1e-12 else 1.0
        else:
            self.y_shift, self.y_scale = 0.0, 1.0
        self.ys = (self.y - self.y_shift) / self.y_scale
        self._enc = _OneHot(self.X)
        self.degraded = False
        self.set_params(params)

    @classmethod
    def from_sequences(cls, seqs, values, positions, params: GpParams, standardize: bool = True):
        X = np.asarray([[s[i] for i in positions] for s in seqs], dtype=np.int64).reshape(len(seqs), len(positions))
        return cls(X, values, params, standardize=standardize, positions=positions)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def n_positions(self) -> int:
        return self.X.shape[1]

    def set_params(self, params: GpParams) -> None:
        self.params = params.copy()
        self._cache = None

    def _train_kernel(self, w: np.ndarray, signal_var: float) -> np.ndarray:
        return signal_var * np.exp(self._enc.matches(w) - w.sum())

    @staticmethod
    def _cholesky(K: np.ndarray, noise_var: float) -> tuple[np.ndarray, float]:
        eye = np.eye(K.shape[0])
        for jitter in JITTERS:
            try:
                return np.linalg.cholesky(K + (noise_var + jitter) * eye), jitter
            except np.linalg.LinAlgError:
                continue
        raise NumericalFailure(f"covariance not positive definite even with jitter {JITTERS[-1]}")

    def _factor(self):
        if self._cache is None:
            p = self.params
            K = self._train_kernel(1.0 / p.lengthscales, p.signal_var)
            L, _ = self._cholesky(K, p.noise_var)
            alpha = cho_solve((L, True), self.ys - p.mean)
            self._cache = (L, alpha)
        return self._cache

    def _rows(self, seqs) -> np.ndarray:
        Z = np.asarray(seqs, dtype=np.int64)
        return Z.reshape(len(seqs), self.n_positions)

    def posterior(self, Z) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Predictive mean, marginal variance and covariance of the latent function at rows ``Z``."""
        Z = self._rows(Z)
        p = self.params
        L, alpha = self._factor()
        w = 1.0 / p.lengthscales
        enc = _OneHot(self.X, Z)
        Kxz = p.signal_var * np.exp(enc.matches(w, enc.b) - w.sum())
        zz = _OneHot(Z)
        Kzz = p.signal_var * np.exp(zz.matches(w) - w.sum())
        mean = p.mean + Kxz.T @ alpha
        V = solve_triangular(L, Kxz, lower=True)
        cov = Kzz - V.T @ V
        cov = 0.5 * (cov + cov.T)
        np.fill_diagonal(cov, np.maximum(np.diag(cov), 0.0))
        scale = self.y_scale
        return self.y_shift + scale * mean, np.diag(cov) * scale**2, cov * scale**2

    def posterior_sequences(self, seqs) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Like :meth:`posterior` but takes full sequences and restricts them to ``positions``."""
        if self.positions is None:
            raise ValueError("model was built from raw rows; use posterior()")
        return self.posterior([[s[i] for i in self.positions] for s in seqs])

    def objective(self, theta: np.ndarray | None = None, jacobian: bool = True) -> tuple[float, np.ndarray]:
        """Log posterior and its gradient with respect to the log-space vector.

        With ``jacobian`` the log-density of the log-parameters is returned
        (change-of-variables terms included), which is what the fit maximizes.
        """
        theta = self.params.to_vector() if theta is None else np.asarray(theta, dtype=float)
        n, npos = self.n, self.n_positions
        eta = theta[0]
        w = np.exp(-theta[1:-2])
        sf2 = math.exp(theta[-2])
        sn2 = math.exp(theta[-1])

        K = self._train_kernel(w, sf2)
        L, _ = self._cholesky(K, sn2)
        r = self.ys - eta
        alpha = cho_solve((L, True), r)
        loglik = -0.5 * r @ alpha - np.log(np.diag(L)).sum() - 0.5 * n * LOG_2PI

        a_l, b_l = INV_LENGTHSCALE_PRIOR
        a_n, b_n = NOISE_PRIOR
        value = loglik + _gamma_logpdf(w, a_l, b_l).sum() + float(_gamma_logpdf(sn2, a_n, b_n))

        Ainv = cho_solve((L, True), np.eye(n))
        W = np.outer(alpha, alpha) - Ainv
        M = W * K
        grad = np.empty(npos + 3)
        grad[0] = alpha.sum()
        if npos:
            O = self._enc.a
            diag = np.einsum("ac,ac->c", O, M @ O)
            same = np.bincount(self._enc.col_pos, weights=diag, minlength=npos)
            grad[1:-2] = 0.5 * w * (M.sum() - same)
        grad[-2] = 0.5 * M.sum()
        grad[-1] = 0.5 * np.trace(W) * sn2
        # prior terms, d/dlog(lengthscale) of log p(1/lengthscale) and d/dlog(noise) of log p(noise)
        grad[1:-2] += -(a_l - 1.0) + b_l * w
        grad[-1] += (a_n - 1.0) - b_n * sn2
        if jacobian:
            value += np.log(w).sum() + math.log(sn2)
            grad[1:-2] -= 1.0
            grad[-1] += 1.0
        return float(value), grad

    def log_posterior(self) -> float:
        return self.objective(jacobian=False)[0]

    def fit_map(self) -> GpParams:
        """Run the warm-started Adam schedule and install the result."""
        if self.n_positions == 0:
            raise ValueError("cannot fit a GP with no modeled positions")
        if self.n < 2:
            raise ValueError("fitting needs at least two training points")
        start = self.params.to_vector()
        theta = start.copy()
        m = np.zeros_like(theta)
        v = np.zeros_like(theta)
        b1, b2 = ADAM_BETAS
        try:
            for t in range(1, ADAM_STEPS + 1):
                _, grad = self.objective(theta)
                if not np.all(np.isfinite(grad)):
                    raise FloatingPointError("non-finite gradient")
                g = -grad
                m = b1 * m + (1 - b1) * g
                v = b2 * v + (1 - b2) * g * g
                step = (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + ADAM_EPS)
                theta = theta - ADAM_LR * step
                theta[1:] = np.clip(theta[1:], -LOG_PARAM_BOUND, LOG_PARAM_BOUND)
            new = GpParams.from_vector(theta)
            self.set_params(new)
            self._factor()
        except (FloatingPointError, NumericalFailure) as exc:
            log.warning("GP fit degraded, keeping previous parameters: %s", exc)
            self.degraded = True
            self.set_params(GpParams.from_vector(start))
        return self.params.copy()


def posterior(model: GpModel, Z) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return model.posterior(Z)


def log_posterior(model: GpModel) -> float:
    return model.log_posterior()


def fit_map(model: GpModel) -> GpParams:
    return model.fit_map()
