"""Shared numerics: squared-exponential kernels, Cholesky solves, closed-form
leave-one-out moments, labelled datasets and splittable random streams."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, lapack


class InputError(ValueError):
    """Raised on malformed arguments (shapes, ranges, non-finite entries)."""


class NumericalError(ArithmeticError):
    """Base class for numerical failures (divergence, non-PD systems, ...)."""


class CholeskyError(NumericalError):
    def __init__(self, pivot: int, message: str | None = None):
        self.pivot = pivot
        super().__init__(message or f"matrix not positive definite at pivot {pivot}")


class Provenance(enum.IntEnum):
    REAL = 0
    SIMULATED = 1


@dataclass(frozen=True)
class Dataset:
    """Labelled sample matrix with a real/simulated flag per row."""

    inputs: np.ndarray
    targets: np.ndarray
    provenance: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        y = np.asarray(self.targets, dtype=float).ravel()
        p = np.asarray(self.provenance, dtype=np.int8).ravel()
        if p.size == 1 and y.size > 1:
            p = np.full(y.size, p[0], dtype=np.int8)
        if not (X.shape[0] == y.size == p.size):
            raise InputError(
                f"row counts differ: inputs {X.shape[0]}, targets {y.size}, provenance {p.size}"
            )
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise InputError("dataset contains NaN or Inf")
        if not np.all(np.isin(p, [Provenance.REAL, Provenance.SIMULATED])):
            raise InputError("unknown provenance flag")
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "targets", y)
        object.__setattr__(self, "provenance", p)

    @classmethod
    def empty(cls, d: int, provenance: Provenance = Provenance.SIMULATED) -> Dataset:
        ds = object.__new__(cls)
        object.__setattr__(ds, "inputs", np.empty((0, d)))
        object.__setattr__(ds, "targets", np.empty(0))
        object.__setattr__(ds, "provenance", np.empty(0, dtype=np.int8))
        return ds

    def __len__(self) -> int:
        return self.targets.size

    @property
    def n_features(self) -> int:
        return self.inputs.shape[1]

    @property
    def is_real(self) -> np.ndarray:
        return self.provenance == Provenance.REAL

    def subset(self, idx) -> Dataset:
        return Dataset(self.inputs[idx], self.targets[idx], self.provenance[idx])

    @staticmethod
    def concat(*parts: Dataset) -> Dataset:
        parts = [p for p in parts if len(p)]
        if not parts:
            raise InputError("nothing to concatenate")
        return Dataset(
            np.vstack([p.inputs for p in parts]),
            np.concatenate([p.targets for p in parts]),
            np.concatenate([p.provenance for p in parts]),
        )


@dataclass(frozen=True)
class KernelConfig:
    """Squared-exponential kernel with per-dimension lengthscales."""

    lengthscales: np.ndarray
    signal_variance: float = 1.0
    family: str = "squared_exponential"

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        if ls.ndim != 1 or not np.all(ls > 0) or not np.all(np.isfinite(ls)):
            raise InputError("lengthscales must be a vector of positive numbers")
        if not (self.signal_variance > 0 and np.isfinite(self.signal_variance)):
            raise InputError("signal_variance must be positive")
        if self.family != "squared_exponential":
            raise InputError(f"unsupported kernel family {self.family!r}")
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "signal_variance", float(self.signal_variance))

    @classmethod
    def isotropic(cls, lengthscale: float, d: int = 1, signal_variance: float = 1.0):
        return cls(np.full(d, float(lengthscale)), signal_variance)

    @property
    def dim(self) -> int:
        return self.lengthscales.size

    def with_signal(self, signal_variance: float) -> KernelConfig:
        return KernelConfig(self.lengthscales, signal_variance, self.family)


def _as_rows(X, d: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None] if d == 1 else X[None, :]
    if X.ndim != 2 or X.shape[1] != d:
        raise InputError(f"expected {d} columns, got shape {X.shape}")
    return X


def sq_dist(X, X2, lengthscales) -> np.ndarray:
    """Pairwise squared distances after scaling each column by its lengthscale."""
    A = X / lengthscales
    B = X2 / lengthscales
    d2 = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.maximum(d2, 0.0)


def kernel_eval(cfg: KernelConfig, x, x2) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    if x.shape != (cfg.dim,) or x2.shape != (cfg.dim,):
        raise InputError(f"kernel of dimension {cfg.dim} got {x.shape} and {x2.shape}")
    r = (x - x2) / cfg.lengthscales
    return cfg.signal_variance * float(np.exp(-0.5 * r @ r))


def gram(cfg: KernelConfig, X, X2=None) -> np.ndarray:
    """Kernel matrix between the rows of ``X`` and ``X2`` (``X2=None`` means ``X``)."""
    X = _as_rows(X, cfg.dim)
    if X2 is None:
        K = cfg.signal_variance * np.exp(-0.5 * sq_dist(X, X, cfg.lengthscales))
        # exact symmetry; the expansion above leaves ~1 ulp asymmetry
        return 0.5 * (K + K.T)
    X2 = _as_rows(X2, cfg.dim)
    return cfg.signal_variance * np.exp(-0.5 * sq_dist(X, X2, cfg.lengthscales))


def default_jitter(A: np.ndarray) -> float:
    n = A.shape[0]
    return 1e-8 * float(np.trace(A)) / max(n, 1)


def cholesky(A, jitter: float | None = None) -> np.ndarray:
    """Lower Cholesky factor of ``A + jitter*I``.

    Raises
    ------
    CholeskyError
        If the jittered matrix is not positive definite. ``pivot`` is the
        zero-based index of the first failing leading minor.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InputError(f"expected a square matrix, got {A.shape}")
    if not np.all(np.isfinite(A)):
        raise CholeskyError(0, "matrix has non-finite entries")
    if jitter is None:
        jitter = default_jitter(A)
    M = A + jitter * np.eye(A.shape[0]) if jitter else A.copy()
    L, info = lapack.dpotrf(M, lower=1, clean=1, overwrite_a=0)
    if info > 0:
        raise CholeskyError(info - 1)
    if info < 0:
        raise InputError(f"dpotrf rejected argument {-info}")
    return L


def chol_solve(A, B, jitter: float | None = None) -> np.ndarray:
    """Solve ``(A + jitter*I) X = B`` through a Cholesky factorization."""
    L = cholesky(A, jitter)
    return cho_solve((L, True), np.asarray(B, dtype=float))


def loo_predictive(K, noise, y) -> tuple[np.ndarray, np.ndarray]:
    """Leave-one-out predictive means and variances of a zero-mean GP.

    With ``C = K + diag(noise)`` the held-out moments are
    ``mu_i = y_i - [C^-1 y]_i / [C^-1]_ii`` and ``var_i = 1 / [C^-1]_ii``.
    Variances are those of the noisy observation ``y_i``.
    """
    K = np.asarray(K, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    noise = np.broadcast_to(np.asarray(noise, dtype=float), y.shape)
    if np.any(noise <= 0):
        raise InputError("noise variances must be positive")
    C = K + np.diag(noise)
    L = cholesky(C, jitter=0.0)
    Cinv = cho_solve((L, True), np.eye(y.size))
    alpha = Cinv @ y
    diag = np.diag(Cinv)
    return y - alpha / diag, 1.0 / diag


def loo_log_density(K, noise, y, mask=None) -> float:
    """Sum of leave-one-out Gaussian log densities, optionally over ``mask`` rows."""
    mu, var = loo_predictive(K, noise, y)
    y = np.asarray(y, dtype=float).ravel()
    terms = -0.5 * np.log(2 * np.pi * var) - 0.5 * (y - mu) ** 2 / var
    if mask is not None:
        terms = terms[mask]
    return float(terms.sum())


def gp_log_marginal(K, noise, y) -> float:
    y = np.asarray(y, dtype=float).ravel()
    C = K + np.diag(np.broadcast_to(noise, y.shape))
    L = cholesky(C, jitter=0.0)
    a = cho_solve((L, True), y)
    return float(-0.5 * y @ a - np.log(np.diag(L)).sum() - 0.5 * y.size * np.log(2 * np.pi))


def gp_posterior(Kxx, noise, y, Kqx, kqq_diag):
    """Predictive mean and latent variance for a zero-mean GP."""
    y = np.asarray(y, dtype=float).ravel()
    C = Kxx + np.diag(np.broadcast_to(noise, y.shape))
    L = cholesky(C, jitter=0.0)
    alpha = cho_solve((L, True), y)
    mean = Kqx @ alpha
    V = np.linalg.solve(L, Kqx.T) if Kqx.size else np.zeros((y.size, 0))
    var = np.asarray(kqq_diag, dtype=float) - (V * V).sum(0)
    return mean, var, alpha


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream addressed by ``(master_seed, stream_index)``.

    Streams with the same address replay bit-identical sequences; distinct
    addresses are statistically independent (Philox keyed by SeedSequence).
    """

    master_seed: int
    stream_index: int = 0
    path: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if not 0 <= int(self.master_seed) < 2**64:
            raise InputError("master_seed must fit in 64 unsigned bits")
        if self.stream_index < 0:
            raise InputError("stream_index must be >= 0")

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(
            int(self.master_seed), spawn_key=(int(self.stream_index), *self.path)
        )
        return np.random.Generator(np.random.Philox(ss))

    def child(self, i: int) -> RngStream:
        """Independent sub-stream, e.g. one per trial or restart."""
        return RngStream(self.master_seed, self.stream_index, (*self.path, int(i)))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise InputError(f"expected RngStream or Generator, got {type(rng).__name__}")
