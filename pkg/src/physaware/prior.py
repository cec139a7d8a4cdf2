"""Gaussian prior over causes learned from effects by Monte-Carlo EM.

Effects follow ``e = f(c) + eps`` with ``eps ~ N(0, sigma^2 I)`` and
``c ~ N(m, S)`` restricted to the cause box. The E-step draws posterior
samples for every observation with a component-wise random-walk Metropolis
sampler (all observations advanced together as one vectorised chain); the
M-step sets ``m`` and ``S`` to the pooled moments of the draws.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import CholeskyError, InputError, NumericalError, as_generator, cholesky
from .synth import CAUSE_BOX, SyntheticRtm, rtm_forward_unchecked

COV_RIDGE = 1e-6


class SamplerHealthError(NumericalError):
    pass


class DegeneratePriorWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class ObservationModel:
    """Forward model, effect noise and the admissible cause box.

    ``forward`` maps an ``(n, d_c)`` array of causes to ``(n, d_e)`` effects;
    when omitted the synthetic canopy model ``rtm`` is used.
    """

    rtm: SyntheticRtm = field(default_factory=SyntheticRtm)
    sigma: float = 0.01
    box: np.ndarray = field(default_factory=lambda: CAUSE_BOX.copy())
    forward: Callable | None = None

    def __post_init__(self):
        if not self.sigma > 0:
            raise InputError("sigma must be positive")

    def f(self, causes) -> np.ndarray:
        causes = np.atleast_2d(causes)
        if self.forward is not None:
            return np.atleast_2d(self.forward(causes))
        return rtm_forward_unchecked(self.rtm, causes)

    @property
    def d_c(self) -> int:
        return np.asarray(self.box).shape[0]

    def in_box(self, causes) -> np.ndarray:
        b = np.asarray(self.box)
        return np.all((causes >= b[:, 0]) & (causes <= b[:, 1]), axis=-1)


@dataclass(frozen=True)
class CausePrior:
    m: np.ndarray
    S: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=float)
        S = np.asarray(self.S, dtype=float)
        if S.shape != (m.size, m.size) or not np.all(np.isfinite(S)) or not np.all(np.isfinite(m)):
            raise InputError("prior needs finite m (d,) and S (d, d)")
        if not np.allclose(S, S.T):
            raise InputError("S must be symmetric")
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "S", S)

    def chol(self) -> np.ndarray:
        try:
            return cholesky(self.S, jitter=0.0)
        except CholeskyError as exc:
            raise InputError("prior covariance is not positive definite") from exc


@dataclass(frozen=True)
class PosteriorSamples:
    draws: np.ndarray  # (K, d_c) for one observation, (J, K, d_c) for several
    acceptance_rate: float
    last: np.ndarray | None = None


def _log_post_batch(C, E, om: ObservationModel, m, L):
    """Unnormalised log posterior for matched rows of causes ``C`` and effects ``E``."""
    r = E - om.f(C)
    z = np.linalg.solve(L, (C - m).T)
    return -0.5 * (r * r).sum(-1) / om.sigma**2 - 0.5 * (z * z).sum(0)


def log_posterior_unnorm(c, e, om: ObservationModel, prior: CausePrior) -> float:
    """``log N(e | f(c), sigma^2 I) + log N(c | m, S)`` with c-independent constants dropped."""
    c = np.asarray(c, dtype=float).ravel()
    e = np.asarray(e, dtype=float).ravel()
    if c.size != prior.m.size:
        raise InputError("cause dimension does not match the prior")
    return float(_log_post_batch(c[None, :], e[None, :], om, prior.m, prior.chol())[0])


def _grid_init(E, om, m, L, n_axis=25):
    b = np.asarray(om.box, dtype=float)
    axes = [np.linspace(lo, hi, n_axis) for lo, hi in b]
    G = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, b.shape[0])
    FG = om.f(G)
    z = np.linalg.solve(L, (G - m).T)
    lp_prior = -0.5 * (z * z).sum(0)
    d2 = ((E[:, None, :] - FG[None, :, :]) ** 2).sum(-1)
    return G[np.argmax(-0.5 * d2 / om.sigma**2 + lp_prior[None, :], axis=1)]


def sample_posterior(e, om: ObservationModel, prior: CausePrior, K: int = 200, burn_in: int = 300,
                     rng=None, init=None, step=None) -> PosteriorSamples:
    """Component-wise random-walk Metropolis draws from ``p(c | e)``.

    ``e`` may be one effect vector or a ``(J, d_e)`` batch; the J chains run
    in lock-step. Per-chain, per-component step sizes are adapted during
    burn-in towards an acceptance rate of 0.2-0.5. Proposals outside the
    cause box are rejected.
    """
    if K < 100:
        raise InputError("K must be >= 100")
    g = as_generator(rng)
    E = np.atleast_2d(np.asarray(e, dtype=float))
    single = np.asarray(e).ndim == 1
    J, d = E.shape[0], prior.m.size
    L = prior.chol()
    b = np.asarray(om.box, dtype=float)
    C = _grid_init(E, om, prior.m, L) if init is None else np.array(np.atleast_2d(init), dtype=float)
    if step is None:
        step = np.tile(0.05 * (b[:, 1] - b[:, 0]), (J, 1))
    else:
        step = np.array(np.broadcast_to(step, (J, d)), dtype=float)
    lp = _log_post_batch(C, E, om, prior.m, L)
    draws = np.empty((J, K, d))
    acc_win = np.zeros((J, d))
    n_acc = 0
    window = 25
    for it in range(burn_in + K):
        for j in range(d):
            prop = C.copy()
            prop[:, j] += step[:, j] * g.standard_normal(J)
            ok = om.in_box(prop)
            lp_prop = np.full(J, -np.inf)
            if ok.any():
                lp_prop[ok] = _log_post_batch(prop[ok], E[ok], om, prior.m, L)
            accept = np.log(g.uniform(size=J)) < lp_prop - lp
            C[accept] = prop[accept]
            lp[accept] = lp_prop[accept]
            if it < burn_in:
                acc_win[:, j] += accept
            else:
                n_acc += int(accept.sum())
        if it < burn_in and (it + 1) % window == 0:
            rate = acc_win / window
            step *= np.where(rate < 0.2, 0.6, np.where(rate > 0.5, 1.6, 1.0))
            acc_win[:] = 0
        if it >= burn_in:
            draws[:, it - burn_in] = C
    acc = n_acc / (K * J * d)
    if not 0.05 < acc < 0.95:
        raise SamplerHealthError(f"acceptance rate {acc:.3f} outside (0.05, 0.95) after adaptation")
    return PosteriorSamples(draws[0] if single else draws, acc, C.copy())


@dataclass
class McemResult:
    prior: CausePrior
    trace: list  # per iteration: (m, S, q_estimate)
    degenerate: bool = False
    samples: PosteriorSamples | None = None


def mcem_fit(effects, om: ObservationModel, init: CausePrior, iters: int = 30, K: int = 200,
             rng=None, burn_in: int = 200) -> McemResult:
    """Monte-Carlo EM for the Gaussian cause prior.

    Chains are warm-started from the previous iteration's final states. The
    recorded objective is the Monte-Carlo estimate of the expected
    complete-data log density under the updated prior.
    """
    E = np.atleast_2d(np.asarray(effects, dtype=float))
    if E.shape[0] < 10:
        raise InputError("need at least 10 observations")
    g = as_generator(rng)
    prior = init
    prior.chol()
    state, step, trace, degenerate = None, None, [], False
    samples = None
    for _ in range(iters):
        samples = sample_posterior(E, om, prior, K, burn_in if state is None else burn_in // 2,
                                   g, init=state, step=step)
        state = samples.last
        flat = samples.draws.reshape(-1, prior.m.size)
        m = flat.mean(0)
        S = np.cov(flat, rowvar=False, bias=True).reshape(m.size, m.size)
        if np.linalg.eigvalsh(S).min() < 1e-10:
            degenerate = True
            warnings.warn("prior covariance collapsed; ridge applied", DegeneratePriorWarning)
        prior = CausePrior(m, 0.5 * (S + S.T) + COV_RIDGE * np.eye(m.size))
        Lp = prior.chol()
        Erep = np.repeat(E, samples.draws.shape[1], axis=0)
        q = _log_post_batch(flat, Erep, om, prior.m, Lp).mean() - np.log(np.diag(Lp)).sum()
        trace.append((prior.m.copy(), prior.S.copy(), float(q)))
    return McemResult(prior, trace, degenerate, samples)


def prior_recovery_experiment(rng, J: int = 200, K: int = 200, iters: int = 30,
                              sigma: float = 0.005, m_true=(40.0, 3.0),
                              S_true=((100.0, 4.0), (4.0, 1.0))) -> dict:
    """Plant ``(m*, S*)``, simulate effects and run MC-EM from a broad start."""
    g = as_generator(rng)
    om = ObservationModel(SyntheticRtm(), sigma)
    m_true = np.asarray(m_true, dtype=float)
    S_true = np.asarray(S_true, dtype=float)
    Ls = cholesky(S_true, jitter=0.0)
    causes = np.empty((0, 2))
    while causes.shape[0] < J:  # draws outside the box are discarded (truncated prior)
        c = m_true + g.standard_normal((2 * J, 2)) @ Ls.T
        causes = np.vstack([causes, c[om.in_box(c)]])
    causes = causes[:J]
    effects = om.f(causes) + sigma * g.standard_normal((J, om.rtm.n_bands))
    b = np.asarray(om.box, dtype=float)
    width = b[:, 1] - b[:, 0]
    init = CausePrior(b.mean(1), np.diag((width / 4) ** 2))
    res = mcem_fit(effects, om, init, iters, K, g)
    m_err = float(np.max(np.abs(res.prior.m - m_true) / width))
    S_err = float(np.linalg.norm(res.prior.S - S_true) / np.linalg.norm(S_true))
    return {"result": res, "causes": causes, "effects": effects, "m_true": m_true,
            "S_true": S_true, "m_rel_err": m_err, "S_rel_err": S_err}
