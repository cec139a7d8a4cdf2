"""Sparse identification of polynomial ODEs by thresholded least squares."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import InputError, as_generator
from .synth import OdeSystem, mexico_system, ode_simulate, rk4
from .terms import TermLibrary, build_library


@dataclass(frozen=True)
class SparseOdeModel:
    xi: np.ndarray  # (n_terms, state_dim)
    library: TermLibrary
    threshold: float
    fit_r: float
    empty_columns: tuple = ()

    def rhs(self, x) -> np.ndarray:
        return build_library(np.atleast_2d(x), self.library) @ self.xi

    def support(self) -> np.ndarray:
        return self.xi != 0

    def equations(self, variables=None, digits: int = 1) -> list[str]:
        names = self.library.names(variables)
        lhs = variables or [f"x{i + 1}" for i in range(self.library.state_dim)]
        out = []
        for j, v in enumerate(lhs):
            terms = [f"{self.xi[i, j]:+.{digits}f}*{n}" if n != "1" else f"{self.xi[i, j]:+.{digits}f}"
                     for i, n in enumerate(names) if self.xi[i, j] != 0]
            out.append(f"d{v}/dt = " + (" ".join(terms) if terms else "0"))
        return out


def moving_average(x, window: int) -> np.ndarray:
    """Centred moving average with the window shrunk symmetrically at the ends."""
    x = np.asarray(x, dtype=float)
    if window < 1 or window % 2 == 0:
        raise InputError("smoothing window must be a positive odd integer")
    if window == 1:
        return x.copy()
    h = window // 2
    T = x.shape[0]
    c = np.vstack([np.zeros((1,) + x.shape[1:]), np.cumsum(x, axis=0)])
    out = np.empty_like(x)
    for i in range(T):
        k = min(h, i, T - 1 - i)
        out[i] = (c[i + k + 1] - c[i - k]) / (2 * k + 1)
    return out


def estimate_derivatives(traj, dt: float, smoothing_window: int = 1) -> np.ndarray:
    """Second-order differences: centred inside, one-sided three-point at the ends."""
    X = np.asarray(traj, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] < 5:
        raise InputError("need at least 5 samples to estimate derivatives")
    if not dt > 0:
        raise InputError("dt must be positive")
    X = moving_average(X, smoothing_window)
    D = np.empty_like(X)
    D[1:-1] = (X[2:] - X[:-2]) / (2 * dt)
    D[0] = (-3 * X[0] + 4 * X[1] - X[2]) / (2 * dt)
    D[-1] = (3 * X[-1] - 4 * X[-2] + X[-3]) / (2 * dt)
    return D


def stlsq(Theta, Xdot, threshold: float, ridge: float = 0.0, max_iters: int = 20):
    """Sequentially thresholded (ridge) least squares.

    Returns ``(xi, empty)`` where ``empty`` lists state columns whose active
    set became empty (their coefficients are all zero).
    """
    if threshold < 0 or ridge < 0:
        raise InputError("threshold and ridge must be non-negative")
    Theta = np.asarray(Theta, dtype=float)
    Xdot = np.asarray(Xdot, dtype=float)
    if Xdot.ndim == 1:
        Xdot = Xdot[:, None]
    p = Theta.shape[1]

    def solve(active, y):
        A = Theta[:, active]
        if ridge:
            return np.linalg.solve(A.T @ A + ridge * np.eye(A.shape[1]), A.T @ y)
        return np.linalg.lstsq(A, y, rcond=None)[0]

    xi = np.zeros((p, Xdot.shape[1]))
    empty = []
    for j in range(Xdot.shape[1]):
        active = np.ones(p, bool)
        coef = solve(active, Xdot[:, j])
        for _ in range(max_iters):
            keep = active.copy()
            keep[active] = np.abs(coef) >= threshold
            if not keep.any():
                active = keep
                break
            if np.array_equal(keep, active):
                break
            active = keep
            coef = solve(active, Xdot[:, j])
        if active.any():
            # final magnitude pass keeps the invariant |xi| >= threshold or 0
            col = np.zeros(p)
            col[active] = coef
            col[np.abs(col) < threshold] = 0.0
            xi[:, j] = col
        else:
            empty.append(j)
    return xi, tuple(empty)


def _pooled_r(a, b) -> float:
    a, b = np.ravel(a), np.ravel(b)
    if np.std(a) == 0 or np.std(b) == 0:
        return 0.0
    return float(np.corrcoef(a, b)[0, 1])


def discover(traj, dt: float, lib: TermLibrary | None = None, threshold: float = 1.0,
             ridge: float = 0.0, smoothing_window: int = 1, max_iters: int = 20) -> SparseOdeModel:
    """Library, derivative estimates and STLSQ in one call.

    ``traj`` may be one ``(T, d)`` array or a list of them (pooled rows).
    """
    trajs = [np.atleast_2d(traj)] if not isinstance(traj, (list, tuple)) else [np.atleast_2d(t) for t in traj]
    lib = lib or TermLibrary(trajs[0].shape[1], 2)
    Theta = np.vstack([build_library(moving_average(t, smoothing_window), lib) for t in trajs])
    Xdot = np.vstack([estimate_derivatives(t, dt, smoothing_window) for t in trajs])
    xi, empty = stlsq(Theta, Xdot, threshold, ridge, max_iters)
    return SparseOdeModel(xi, lib, threshold, _pooled_r(Theta @ xi, Xdot), empty)


def phase_portrait(model: SparseOdeModel, grid, initial_conditions, t1: float = 1.0,
                   dt: float = 1e-3, bound: float | None = None):
    """Vector field on ``grid`` (m x 2) and RK4 trajectories from each start.

    Returns ``(field, trajectories)`` with ``field`` of shape ``(m, 4)``
    (x1, x2, dx1, dx2) and a list of ``(n_steps + 1, 2)`` arrays. With
    ``bound`` set, a trajectory leaving the box ``|x| <= bound`` is NaN-padded.
    """
    if model.library.state_dim != 2:
        raise InputError("phase portraits need a 2-D model")
    G = np.atleast_2d(np.asarray(grid, dtype=float))
    field = np.hstack([G, model.rhs(G)])
    n_steps = int(round(t1 / dt))
    trajs = [rk4(model.rhs, x0, dt, n_steps, bound) for x0 in np.atleast_2d(initial_conditions)]
    return field, trajs


def mexico_rediscovery(rng=None, noise_frac: float = 0.0, smoothing_window: int = 1,
                       threshold: float = 5.0, x0s=((-0.1, 0.1),), sys: OdeSystem | None = None):
    """Simulate the planted system, optionally add noise, and rediscover it.

    Noise is Gaussian with standard deviation ``noise_frac`` times each
    component's standard deviation along the trajectory.
    """
    sys = sys or mexico_system()
    trajs = []
    g = as_generator(rng) if noise_frac > 0 else None
    for x0 in x0s:
        X = ode_simulate(sys, x0)
        if g is not None:
            X = X + noise_frac * X.std(0) * g.standard_normal(X.shape)
        trajs.append(X)
    model = discover(trajs, sys.dt, sys.library, threshold, 0.0, smoothing_window)
    truth = sys.coefficients
    support_ok = bool(np.array_equal(model.support(), truth != 0))
    nz = truth != 0
    rel = np.abs(model.xi[nz] - truth[nz]) / np.abs(truth[nz])
    return {"model": model, "support_exact": support_ok, "max_rel_err": float(rel.max()),
            "trajectories": trajs}
