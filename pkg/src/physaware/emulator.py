"""Active GP emulation of the synthetic canopy model.

One GP per band on causes rescaled to the unit square. Bands share
lengthscales and nugget (fitted jointly by profiled marginal likelihood) and
each band gets its own closed-form signal variance, so a refit is one
Cholesky per likelihood evaluation regardless of the band count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize
from scipy.stats import qmc

from .core import CholeskyError, InputError, KernelConfig, as_generator, cholesky, gram
from .synth import CAUSE_BOX, SyntheticRtm, rtm_forward

NUGGET = 1e-8
# weak log-normal hyperprior on unit-box lengthscales; damps jumps between
# likelihood modes as points are added
LS_PRIOR_MEAN = np.log(0.3)
LS_PRIOR_SD = 1.0


def lhs_sample(n: int, box, rng) -> np.ndarray:
    """Latin hypercube: one point per stratum per axis, random pairing."""
    if n < 1:
        raise InputError("n must be >= 1")
    box = np.asarray(box, dtype=float)
    u = qmc.LatinHypercube(box.shape[0], seed=as_generator(rng)).random(n)
    return qmc.scale(u, box[:, 0], box[:, 1])


@dataclass(frozen=True)
class AcquisitionConfig:
    beta: float = 1.0
    candidate_pool: int = 2000
    max_points: int = 60
    stop_rmse: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise InputError("beta must lie in [0, 1]")
        if self.candidate_pool < 100:
            raise InputError("candidate_pool must be >= 100")


@dataclass
class EmulatorState:
    """Training set plus the fitted per-band GPs (in unit-box coordinates)."""

    train_inputs: np.ndarray
    train_outputs: np.ndarray
    box: np.ndarray = field(default_factory=lambda: CAUSE_BOX.copy())
    log_lengthscales: np.ndarray = field(default_factory=lambda: np.log([0.3, 0.3]))
    iteration: int = 0
    gp_per_band: list = field(default_factory=list)
    _chol: np.ndarray | None = None
    _alpha: np.ndarray | None = None
    _mean: np.ndarray | None = None

    def unit(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return (X - self.box[:, 0]) / (self.box[:, 1] - self.box[:, 0])

    @property
    def signal_variances(self) -> np.ndarray:
        return np.array([k.signal_variance for k in self.gp_per_band])

    def refit(self, maxiter: int = 60) -> EmulatorState:
        U = self.unit(self.train_inputs)
        Y = self.train_outputs
        n, B = Y.shape
        if n < 2:
            raise InputError("need at least two training points")
        mean = Y.mean(0)
        Yc = Y - mean
        # per-axis squared differences, reused by every likelihood evaluation
        D = (U[:, None, :] - U[None, :, :]) ** 2
        eye = NUGGET * np.eye(n)

        def profile_nll(log_ls):
            if np.any(np.abs(log_ls) > 8):
                return 1e25
            K = np.exp(-0.5 * D @ np.exp(-2.0 * log_ls)) + eye
            try:
                L = cholesky(K, jitter=0.0)
            except CholeskyError:
                return 1e25
            quad = (Yc * cho_solve((L, True), Yc)).sum(0) / n
            return float(0.5 * n * np.log(np.maximum(quad, 1e-300)).sum()
                         + B * np.log(np.diag(L)).sum()
                         + 0.5 * (((log_ls - LS_PRIOR_MEAN) / LS_PRIOR_SD) ** 2).sum())

        x0 = np.clip(self.log_lengthscales, -4, 2)
        res = minimize(profile_nll, x0, method="Nelder-Mead",
                       options={"maxfev": maxiter, "xatol": 1e-3, "fatol": 1e-6})
        log_ls = res.x if res.fun < profile_nll(x0) else x0
        ls = np.exp(log_ls)
        K = gram(KernelConfig(ls, 1.0), U)
        K[np.diag_indices_from(K)] += NUGGET
        L = cholesky(K, jitter=0.0)
        alpha = cho_solve((L, True), Yc)
        sig = np.maximum((Yc * alpha).sum(0) / n, 1e-300)
        self.log_lengthscales = log_ls
        self.gp_per_band = [KernelConfig(ls, s) for s in sig]
        self._chol, self._alpha, self._mean = L, alpha, mean
        return self

    def predict(self, X, mean_only: bool = False):
        """Per-band means ``(m, B)`` and band-mean predictive standard deviation ``(m,)``."""
        U = self.unit(X)
        Ks = gram(KernelConfig(np.exp(self.log_lengthscales), 1.0), U, self.unit(self.train_inputs))
        mean = self._mean + Ks @ self._alpha
        if mean_only:
            return mean
        V = solve_triangular(self._chol, Ks.T, lower=True, check_finite=False)
        v = np.maximum(1.0 - (V * V).sum(0), 0.0)
        sd = np.sqrt(self.signal_variances).mean() * np.sqrt(v)
        return mean, sd

    def add(self, x, y) -> None:
        self.train_inputs = np.vstack([self.train_inputs, np.atleast_2d(x)])
        self.train_outputs = np.vstack([self.train_outputs, np.atleast_2d(y)])
        self.iteration += 1


def nearest_distance(state: EmulatorState, X) -> np.ndarray:
    """Distance (unit-box coordinates) from each query to its nearest training input."""
    U = state.unit(X)
    T = state.unit(state.train_inputs)
    d2 = ((U[:, None, :] - T[None, :, :]) ** 2).sum(-1)
    return np.sqrt(d2.min(1))


def acquisition_values(s: EmulatorState, cfg: AcquisitionConfig, X) -> np.ndarray:
    _, sd = s.predict(X)
    d = nearest_distance(s, X)
    return sd * d**cfg.beta if cfg.beta > 0 else sd


def acquisition_value(s: EmulatorState, cfg: AcquisitionConfig, x) -> float:
    """Uncertainty times distance-to-data: ``sd(x) * d_min(x)^beta``."""
    return float(acquisition_values(s, cfg, np.atleast_2d(x))[0])


class NoInformativeCandidate(RuntimeError):
    pass


def select_next(s: EmulatorState, cfg: AcquisitionConfig, rng, candidates=None) -> np.ndarray:
    """Best of ``candidate_pool`` uniform draws (first index wins ties)."""
    g = as_generator(rng)
    for attempt in range(2):
        if candidates is None or attempt:
            C = s.box[:, 0] + g.uniform(size=(cfg.candidate_pool, s.box.shape[0])) * (
                s.box[:, 1] - s.box[:, 0])
        else:
            C = np.atleast_2d(candidates)
        a = acquisition_values(s, cfg, C)
        i = int(np.argmax(a))
        if a[i] > 0:
            return C[i]
    raise NoInformativeCandidate("no informative candidate after resampling")


def eval_grid(n_per_axis: int = 70, box=CAUSE_BOX) -> np.ndarray:
    box = np.asarray(box)
    axes = [np.linspace(lo, hi, n_per_axis) for lo, hi in box]
    return np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, len(axes))


def emulator_rmse(state: EmulatorState, grid: np.ndarray, truth: np.ndarray) -> float:
    mean = state.predict(grid, mean_only=True)
    return float(np.sqrt(np.mean((mean - truth) ** 2)))


def _simulate(rtm, X):
    return rtm_forward(rtm, X[:, 0], X[:, 1])


def run_active_loop(rtm: SyntheticRtm, cfg: AcquisitionConfig, init_n: int, max_points: int,
                    grid: np.ndarray, rng, method: str = "amogape") -> list[tuple[int, float]]:
    """RMSE-versus-size curve for one emulator-building run.

    ``method`` is ``"amogape"`` (acquisition-driven), ``"random"`` (uniform
    sequential additions) or ``"lhs"`` (a fresh Latin hypercube of each size).
    The loop starts from an ``init_n``-point Latin hypercube drawn first from
    ``rng``, so methods sharing a seed share the initial design.
    """
    if init_n < 4:
        raise InputError("init_n must be >= 4")
    g = as_generator(rng)
    truth = _simulate(rtm, grid)
    X0 = lhs_sample(init_n, CAUSE_BOX, g)
    state = EmulatorState(X0, _simulate(rtm, X0)).refit()
    curve = [(init_n, emulator_rmse(state, grid, truth))]
    n = init_n
    while n < max_points:
        if cfg.stop_rmse is not None and curve[-1][1] <= cfg.stop_rmse:
            break
        n += 1
        if method == "amogape":
            x = select_next(state, cfg, g)
            state.add(x, _simulate(rtm, x[None, :]))
        elif method == "random":
            x = CAUSE_BOX[:, 0] + g.uniform(size=2) * (CAUSE_BOX[:, 1] - CAUSE_BOX[:, 0])
            state.add(x, _simulate(rtm, x[None, :]))
        elif method == "lhs":
            X = lhs_sample(n, CAUSE_BOX, g)
            state = EmulatorState(X, _simulate(rtm, X), log_lengthscales=state.log_lengthscales)
        else:
            raise InputError(f"unknown method {method!r}")
        state.refit()
        curve.append((n, emulator_rmse(state, grid, truth)))
    return curve


def points_to_target(curve, target: float, max_points: int) -> int:
    """First size whose RMSE reaches ``target``; ``max_points + 1`` if never."""
    for n, r in curve:
        if r <= target:
            return n
    return max_points + 1


METHODS = ("amogape", "lhs", "random")


def emulator_benchmark(runs: int = 50, seed: int = 0, init_n: int = 5, max_points: int = 60,
                       target_rmse: float = 2e-3, cfg: AcquisitionConfig | None = None,
                       rtm: SyntheticRtm | None = None, n_per_axis: int = 70) -> dict:
    """RMSE curves of every method over ``runs`` repetitions.

    Returns ``{"curves": [(method, run, n_points, rmse), ...],
    "points_to_target": {method: mean points}}``.
    """
    from .core import RngStream

    cfg = cfg or AcquisitionConfig(max_points=max_points)
    rtm = rtm or SyntheticRtm()
    grid = eval_grid(n_per_axis)
    rows, reach = [], {m: [] for m in METHODS}
    for r in range(runs):
        for m in METHODS:
            curve = run_active_loop(rtm, cfg, init_n, max_points, grid, RngStream(seed, r), m)
            rows.extend((m, r, n, e) for n, e in curve)
            reach[m].append(points_to_target(curve, target_rmse, max_points))
    return {"curves": rows, "points_to_target": {m: float(np.mean(v)) for m, v in reach.items()}}
