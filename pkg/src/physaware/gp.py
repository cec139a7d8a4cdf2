"""Plain exact GP regression with type-II maximum likelihood.

Used as the baseline model throughout (real-only / simulated-only / stacked
GPs, single-output gap filling). Inputs are scaled per column so one shared
lengthscale multiplier covers all dimensions unless ``ard=True``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .core import (
    CholeskyError,
    InputError,
    KernelConfig,
    RngStream,
    as_generator,
    cholesky,
    gram,
)
from scipy.linalg import cho_solve


@dataclass(frozen=True)
class GPModel:
    kernel: KernelConfig
    noise: float
    X: np.ndarray
    y_mean: float
    alpha: np.ndarray
    chol: np.ndarray

    def predict(self, Xq) -> tuple[np.ndarray, np.ndarray]:
        """Predictive mean and latent variance (noise excluded)."""
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        if Xq.shape[1] != self.X.shape[1]:
            raise InputError(f"query has {Xq.shape[1]} columns, model expects {self.X.shape[1]}")
        Ks = gram(self.kernel, Xq, self.X)
        mean = self.y_mean + Ks @ self.alpha
        V = np.linalg.solve(self.chol, Ks.T)
        var = self.kernel.signal_variance - (V * V).sum(0)
        return mean, np.maximum(var, 1e-12 * self.kernel.signal_variance)


def column_scales(X) -> np.ndarray:
    s = np.std(X, axis=0)
    return np.where(s > 0, s, 1.0)


def start_points(rng, n_starts: int, centre: np.ndarray, spread: float = 1.0) -> list[np.ndarray]:
    """First start at ``centre``, the rest jittered around it."""
    g = as_generator(rng)
    pts = [np.asarray(centre, dtype=float)]
    for _ in range(n_starts - 1):
        pts.append(centre + spread * g.standard_normal(centre.size))
    return pts


def multistart_minimize(fun, starts, budget: int, method: str = "Nelder-Mead"):
    """Derivative-free local search from each start, ``budget`` evaluations split evenly.

    Returns ``(x_best, f_best, f_at_starts)``.
    """
    per = max(budget // len(starts), 2 * starts[0].size + 2)
    best_x, best_f, f0 = None, np.inf, []
    for x0 in starts:
        f_start = fun(x0)
        f0.append(f_start)
        if f_start < best_f:
            best_x, best_f = np.array(x0, dtype=float), f_start
        if method == "L-BFGS-B":
            # gradients by finite differences, so only function values are used
            opts = {"maxfun": per - 1, "ftol": 1e-12, "gtol": 1e-6}
        elif method == "Powell":
            opts = {"maxfev": per - 1, "xtol": 1e-4, "ftol": 1e-9}
        else:
            opts = {"maxfev": per - 1, "xatol": 1e-6, "fatol": 1e-9}
        res = minimize(fun, x0, method=method, options=opts)
        if res.fun < best_f:
            best_x, best_f = res.x, float(res.fun)
    return best_x, best_f, np.array(f0)


def _unpack(theta, scales, ard):
    d = scales.size
    if ard:
        ls = np.exp(theta[:d]) * scales
        rest = theta[d:]
    else:
        ls = np.exp(theta[0]) * scales
        rest = theta[1:]
    return KernelConfig(ls, np.exp(rest[0])), np.exp(rest[1])


def fit_gp(X, y, rng=None, budget: int = 400, n_starts: int = 4, ard: bool = False,
           noise_floor: float = 1e-6) -> GPModel:
    """Exact GP with constant mean ``mean(y)``, hyperparameters by marginal likelihood."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] != y.size or y.size < 2:
        raise InputError("need matching X, y with at least two rows")
    rng = rng if rng is not None else RngStream(0)
    y_mean = float(y.mean())
    yc = y - y_mean
    vy = max(float(yc.var()), 1e-12)
    scales = column_scales(X)
    d = X.shape[1]

    def nll(theta):
        try:
            kern, noise = _unpack(theta, scales, ard)
        except InputError:
            return 1e25
        noise = noise + noise_floor * vy
        K = gram(kern, X)
        K[np.diag_indices_from(K)] += noise
        try:
            L = cholesky(K, jitter=0.0)
        except CholeskyError:
            return 1e25
        a = cho_solve((L, True), yc)
        return float(0.5 * yc @ a + np.log(np.diag(L)).sum())

    n_ls = d if ard else 1
    centre = np.concatenate([np.zeros(n_ls), [np.log(vy), np.log(0.1 * vy)]])
    theta, _, _ = multistart_minimize(nll, start_points(rng, n_starts, centre), budget)
    kern, noise = _unpack(theta, scales, ard)
    noise = noise + noise_floor * vy
    K = gram(kern, X)
    K[np.diag_indices_from(K)] += noise
    L = cholesky(K, jitter=0.0)
    return GPModel(kern, float(noise), X, y_mean, cho_solve((L, True), yc), L)


def gp_with_params(X, y, kernel: KernelConfig, noise: float, y_mean: float | None = None) -> GPModel:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    y_mean = float(y.mean()) if y_mean is None else y_mean
    K = gram(kernel, X)
    K[np.diag_indices_from(K)] += noise
    L = cholesky(K, jitter=0.0)
    return GPModel(kernel, float(noise), X, y_mean, cho_solve((L, True), y - y_mean), L)
