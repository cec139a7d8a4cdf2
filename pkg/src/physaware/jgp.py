"""Joint GP over pooled real and simulated rows.

Simulated rows get noise ``noise_real / w`` where ``w`` in [0, 1] is a learned
fidelity weight; ``w -> 0`` removes their influence. Hyperparameters maximise
the leave-one-out log predictive density of the *real* rows only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve

from .core import (
    CholeskyError,
    Dataset,
    InputError,
    KernelConfig,
    NumericalError,
    RngStream,
    cholesky,
    gram,
    loo_predictive,
)
from .gp import column_scales, fit_gp, multistart_minimize, start_points

FIDELITY_EPS = 1e-12
MAX_ROWS = 2000


class FitError(NumericalError):
    pass


@dataclass(frozen=True)
class JgpModel:
    kernel: KernelConfig
    noise_real: float
    fidelity_w: float
    dual_weights: np.ndarray
    train: Dataset
    y_mean: float
    pseudo_loglik: float = float("nan")

    def noise_diagonal(self) -> np.ndarray:
        return noise_diagonal(self.train, self.noise_real, self.fidelity_w)


def noise_diagonal(train: Dataset, noise_real: float, fidelity_w: float) -> np.ndarray:
    sim_noise = noise_real / max(fidelity_w, FIDELITY_EPS)
    return np.where(train.is_real, noise_real, sim_noise)


def pseudo_loglik(kernel: KernelConfig, noise_real: float, fidelity_w: float,
                  train: Dataset, y_mean: float) -> float:
    """Sum of real-row leave-one-out log densities on the pooled system."""
    K = gram(kernel, train.inputs)
    mu, var = loo_predictive(K, noise_diagonal(train, noise_real, fidelity_w),
                             train.targets - y_mean)
    r = train.is_real
    resid = train.targets[r] - y_mean - mu[r]
    return float(np.sum(-0.5 * np.log(2 * np.pi * var[r]) - 0.5 * resid**2 / var[r]))


def build_model(train: Dataset, kernel: KernelConfig, noise_real: float, fidelity_w: float,
                y_mean: float) -> JgpModel:
    C = gram(kernel, train.inputs) + np.diag(noise_diagonal(train, noise_real, fidelity_w))
    L = cholesky(C, jitter=0.0)
    alpha = cho_solve((L, True), train.targets - y_mean)
    return JgpModel(kernel, float(noise_real), float(fidelity_w), alpha, train, y_mean)


DEFAULT_FIDELITY_GRID = tuple(np.concatenate([[1e-6, 1e-4], np.logspace(-3, 0, 10)]))


def pooled_nll(kernel: KernelConfig, noise_real: float, fidelity_w: float, train: Dataset,
               y_mean: float) -> float:
    """Negative log marginal likelihood of all rows under the fidelity noise model."""
    C = gram(kernel, train.inputs) + np.diag(noise_diagonal(train, noise_real, fidelity_w))
    L = cholesky(C, jitter=0.0)
    yc = train.targets - y_mean
    return float(0.5 * yc @ cho_solve((L, True), yc) + np.log(np.diag(L)).sum())


def jgp_fit(real: Dataset, sim: Dataset | None, opt_budget: int = 2000, rng=None,
            fidelity_grid=DEFAULT_FIDELITY_GRID, n_starts: int = 4,
            loo_tolerance: float = 0.0) -> JgpModel:
    """Fit the fidelity weight and the kernel hyperparameters.

    Every candidate weight on ``fidelity_grid`` gets kernel lengthscale,
    signal and real-row noise from the pooled marginal likelihood (multi-start
    Nelder-Mead in log space, warm-started along the grid); the weight whose
    model has the highest real-row leave-one-out log density is kept.
    ``opt_budget`` bounds the total number of marginal-likelihood calls.
    """
    if len(real) < 5:
        raise InputError("JGP needs at least 5 real rows")
    if np.var(real.targets) <= 0:
        raise FitError("real targets have zero variance")
    train = Dataset.concat(real, sim) if sim is not None and len(sim) else real
    if len(train) > MAX_ROWS:
        raise InputError(f"pooled data has {len(train)} rows; limit is {MAX_ROWS}")
    rng = rng if rng is not None else RngStream(0)
    # constant prior mean over the pooled targets, as for the stacked GP
    y_mean = float(train.targets.mean())
    vy = float(train.targets.var())
    scales = column_scales(train.inputs)
    has_sim = not bool(np.all(train.is_real))
    grid = sorted(fidelity_grid, reverse=True) if has_sim else [1.0]
    # the first (largest) weight gets a proper multi-start search, the rest
    # are warm-started from their neighbour on the grid
    first_share = opt_budget // 4 if len(grid) > 1 else opt_budget
    per_w = max((opt_budget - first_share) // max(len(grid) - 1, 1), 30)

    def unpack(theta):
        return KernelConfig(np.exp(theta[0]) * scales, np.exp(theta[1])), float(np.exp(theta[2]))

    cands = []
    warm = np.array([0.0, np.log(vy), np.log(0.05 * vy)])
    for i, w in enumerate(grid):
        def nll(theta):
            if not np.all(np.abs(theta) < 30):
                return 1e25
            try:
                return pooled_nll(*unpack(theta), w, train, y_mean)
            except CholeskyError:
                return 1e25

        if i == 0:
            starts, budget = start_points(rng, n_starts, warm), first_share
        else:
            starts, budget = [warm], per_w
        theta, f, _ = multistart_minimize(nll, starts, budget)
        if f >= 1e24:
            continue
        warm = theta
        kern, noise = unpack(theta)
        try:
            pl = pseudo_loglik(kern, noise, w, train, y_mean)
        except CholeskyError:
            continue
        cands.append((pl, kern, noise, w))
    if not cands:
        raise FitError("no admissible hyperparameters found")
    top = max(c[0] for c in cands)
    # grid is in decreasing w, so this is the largest weight within tolerance
    pl, kern, noise, w = next(c for c in cands if c[0] >= top - loo_tolerance)
    model = build_model(train, kern, noise, w, y_mean)
    return JgpModel(model.kernel, model.noise_real, model.fidelity_w, model.dual_weights,
                    train, y_mean, pl)


def jgp_predict(m: JgpModel, Xq) -> tuple[np.ndarray, np.ndarray]:
    """Predictive mean and latent variance at query rows."""
    Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
    if Xq.shape[1] != m.train.n_features:
        raise InputError(f"query has {Xq.shape[1]} columns, model expects {m.train.n_features}")
    Ks = gram(m.kernel, Xq, m.train.inputs)
    mean = m.y_mean + Ks @ m.dual_weights
    C = gram(m.kernel, m.train.inputs) + np.diag(m.noise_diagonal())
    L = cholesky(C, jitter=0.0)
    V = np.linalg.solve(L, Ks.T)
    var = m.kernel.signal_variance - (V * V).sum(0)
    return mean, np.maximum(var, 1e-12 * m.kernel.signal_variance)


def rmse(a, b) -> float:
    return float(np.sqrt(np.mean((np.asarray(a) - np.asarray(b)) ** 2)))


def jgp_benchmark(real: Dataset, sim: Dataset, test: Dataset, opt_budget: int = 600,
                  rng=None, return_predictions: bool = False, **jgp_kw):
    """Test RMSE of the real-only, sim-only, stacked and joint GPs.

    With ``return_predictions`` the test-set predictive means are returned as
    a second dict keyed like the first.
    """
    rng = rng if rng is not None else RngStream(0)
    budget = max(opt_budget // 2, 100)
    preds = {}
    gp_r = fit_gp(real.inputs, real.targets, rng.child(0), budget=budget)
    preds["GP_R"] = gp_r.predict(test.inputs)[0]
    gp_s = fit_gp(sim.inputs, sim.targets, rng.child(1), budget=budget)
    preds["GP_S"] = gp_s.predict(test.inputs)[0]
    stacked = Dataset.concat(real, sim)
    gp_rs = fit_gp(stacked.inputs, stacked.targets, rng.child(2), budget=budget)
    preds["GP_R+S"] = gp_rs.predict(test.inputs)[0]
    jgp = jgp_fit(real, sim, opt_budget, rng.child(3), **jgp_kw)
    preds["JGP"] = jgp_predict(jgp, test.inputs)[0]
    out = {k: rmse(v, test.targets) for k, v in preds.items()}
    return (out, preds) if return_predictions else out
