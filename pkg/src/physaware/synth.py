"""Synthetic forward models and dataset generators.

Everything here is a closed-form stand-in: a two-cause canopy reflectance
model, four band-ratio chlorophyll models, the noisy logistic map, polynomial
ODE systems, and the planted rainfall/soil-moisture series used by the latent
force experiments.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfc, erfcx

from .core import Dataset, InputError, NumericalError, Provenance, RngStream, as_generator
from .terms import TermLibrary, build_library

CHL_BOX = (0.0, 80.0)
LAI_BOX = (0.0, 10.0)
CAUSE_BOX = np.array([CHL_BOX, LAI_BOX])


class DivergenceError(NumericalError):
    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"trajectory diverged at step {step}")


# ---------------------------------------------------------------------------
# canopy reflectance stand-in
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticRtm:
    n_bands: int = 8
    noise_sd: float = 0.0

    def __post_init__(self):
        if self.n_bands < 2:
            raise InputError("n_bands must be >= 2")
        if self.noise_sd < 0:
            raise InputError("noise_sd must be >= 0")

    def coefficients(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        b = np.arange(1, self.n_bands + 1, dtype=float)
        return 0.30 + 0.05 * np.sin(b), 0.5 + 0.1 * b, 0.20 + 0.02 * b


def _check_causes(chl, lai):
    chl = np.asarray(chl, dtype=float)
    lai = np.asarray(lai, dtype=float)
    if np.any(~np.isfinite(chl)) or np.any((chl < CHL_BOX[0]) | (chl > CHL_BOX[1])):
        raise InputError(f"chlorophyll outside {CHL_BOX}")
    if np.any(~np.isfinite(lai)) or np.any((lai < LAI_BOX[0]) | (lai > LAI_BOX[1])):
        raise InputError(f"LAI outside {LAI_BOX}")
    return chl, lai


def rtm_forward(rtm: SyntheticRtm, chl, lai, rng=None) -> np.ndarray:
    """Band reflectances for scalar or array causes.

    Scalar causes give a ``(B,)`` vector; arrays of shape ``(n,)`` give
    ``(n, B)``. Noise is added only when ``rng`` is supplied.
    """
    chl, lai = _check_causes(chl, lai)
    a, beta, g = rtm.coefficients()
    c = chl[..., None]
    l = lai[..., None]
    r = a * np.exp(-beta * c / 100.0) + g * l / (1.0 + l)
    if rng is not None and rtm.noise_sd > 0:
        r = r + rtm.noise_sd * as_generator(rng).standard_normal(r.shape)
    return r


def rtm_forward_unchecked(rtm: SyntheticRtm, causes: np.ndarray) -> np.ndarray:
    """Noiseless forward on an ``(n, 2)`` cause array without range checks."""
    a, beta, g = rtm.coefficients()
    c = causes[..., 0:1]
    l = causes[..., 1:2]
    return a * np.exp(-beta * c / 100.0) + g * l / (1.0 + l)


# ---------------------------------------------------------------------------
# ocean colour band-ratio models
# ---------------------------------------------------------------------------

# log10(chl) = polynomial in log10(ratio), constant term first
OCEAN_LOG_LINEAR = (0.30, -2.2)
OCEAN_LINEAR = (3.2, -0.95)  # chl = c0 + c1 * ratio
OCEAN_CUBIC = (0.35, -2.9, 1.6, -1.9)
OCEAN_QUARTIC = (0.42, -2.0, -1.8, 0.5, 1.5)
OCEAN_MODEL_NAMES = ("log_linear", "linear_2band", "cubic_log", "quartic_log")


def ocean_color_models(radiance_ratio) -> np.ndarray:
    """Chlorophyll predicted by the four band-ratio models.

    Returns shape ``(4,)`` for a scalar ratio, ``(n, 4)`` for an array.
    """
    r = np.asarray(radiance_ratio, dtype=float)
    if np.any(~np.isfinite(r)) or np.any(r <= 0):
        raise InputError("band ratio must be positive")
    x = np.log10(r)
    out = np.stack(
        [
            10.0 ** np.polynomial.polynomial.polyval(x, OCEAN_LOG_LINEAR),
            OCEAN_LINEAR[0] + OCEAN_LINEAR[1] * r,
            10.0 ** np.polynomial.polynomial.polyval(x, OCEAN_CUBIC),
            10.0 ** np.polynomial.polynomial.polyval(x, OCEAN_QUARTIC),
        ],
        axis=-1,
    )
    return out


def make_ocean_dataset(rng, n: int, generating_model: int = 2, ratio_noise: float = 0.05,
                       target_noise: float = 0.1):
    """Band-ratio regression data whose targets follow one of the four models.

    Returns ``(dataset, model_outputs)``. Inputs are ``[log10 ratio, nuisance]``
    measured with noise; targets are log10 chlorophyll of the generating model
    plus Gaussian noise; ``model_outputs`` (n x 4) holds log10 chlorophyll of
    every candidate model on the measured ratio.
    """
    g = as_generator(rng)
    log_ratio = g.uniform(np.log10(0.3), np.log10(3.0), n)
    truth = np.log10(ocean_color_models(10.0**log_ratio))[:, generating_model]
    measured = log_ratio + ratio_noise * g.standard_normal(n)
    measured = np.clip(measured, np.log10(0.3), np.log10(3.0))
    nuisance = g.uniform(-1.0, 1.0, n)
    y = truth + target_noise * g.standard_normal(n)
    outputs = np.log10(ocean_color_models(10.0**measured))
    ds = Dataset(np.column_stack([measured, nuisance]), y, np.zeros(n))
    return ds, outputs, truth


# ---------------------------------------------------------------------------
# noisy logistic map
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LogisticMapParams:
    R: float = 3.7
    Omega: float = 1.0
    lambda_noise: float = 0.01
    T: int = 100
    y1: float | None = None

    def __post_init__(self):
        if not (self.R > 0 and self.Omega > 0):
            raise InputError("R and Omega must be positive")
        if self.lambda_noise < 0 or self.T < 2:
            raise InputError("lambda_noise >= 0 and T >= 2 required")
        if self.y1 is not None and not 0.0 <= self.y1 <= 1.0:
            raise InputError("y1 must lie in [0, 1]")


def logistic_step(y, R, Omega):
    return R * y * (1.0 - y / Omega)


def logistic_simulate(p: LogisticMapParams, rng) -> np.ndarray:
    g = as_generator(rng)
    y = np.empty(p.T)
    y[0] = g.uniform(0.0, 1.0) if p.y1 is None else p.y1
    eps = p.lambda_noise * g.standard_normal(p.T - 1)
    upper = 10.0 * p.Omega
    for t in range(p.T - 1):
        y[t + 1] = logistic_step(y[t], p.R, p.Omega) * np.exp(eps[t])
        if not (0.0 <= y[t + 1] <= upper):
            raise DivergenceError(t + 1, f"logistic map left [0, {upper:g}] at step {t + 1}")
    return y


# ---------------------------------------------------------------------------
# polynomial ODE systems
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OdeSystem:
    """``dx/dt = Theta(x) @ coefficients`` on the grid ``t0, t0+dt, ..., t1``."""

    coefficients: np.ndarray
    library: TermLibrary
    t0: float = 0.0
    t1: float = 1.0
    dt: float = 1e-3

    def __post_init__(self):
        xi = np.asarray(self.coefficients, dtype=float)
        if xi.shape != (len(self.library), self.library.state_dim):
            raise InputError(
                f"coefficients must be {len(self.library)} x {self.library.state_dim}, got {xi.shape}"
            )
        if not self.dt > 0 or not self.t1 > self.t0:
            raise InputError("need dt > 0 and t1 > t0")
        object.__setattr__(self, "coefficients", xi)

    @property
    def state_dim(self) -> int:
        return self.library.state_dim

    @property
    def n_steps(self) -> int:
        return int(round((self.t1 - self.t0) / self.dt))

    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    def rhs(self, x) -> np.ndarray:
        return build_library(np.atleast_2d(x), self.library) @ self.coefficients


def rk4(rhs, x0, dt: float, n_steps: int, bound: float | None = None) -> np.ndarray:
    """Fixed-step classical Runge-Kutta; returns ``(n_steps + 1, d)``.

    ``rhs`` maps an ``(m, d)`` batch of states to derivatives. When ``bound``
    is given the trajectory is cut short (NaN-padded) once any coordinate
    exceeds it; otherwise a non-finite state raises ``DivergenceError``.
    """
    x = np.atleast_2d(np.asarray(x0, dtype=float))
    out = np.full((n_steps + 1, x.shape[1]), np.nan)
    out[0] = x[0]
    for i in range(n_steps):
        k1 = rhs(x)
        k2 = rhs(x + 0.5 * dt * k1)
        k3 = rhs(x + 0.5 * dt * k2)
        k4 = rhs(x + dt * k3)
        x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if bound is not None and not np.all(np.abs(x) <= bound):
            break
        if not np.all(np.isfinite(x)):
            raise DivergenceError(i + 1)
        out[i + 1] = x[0]
    return out


def ode_simulate(sys: OdeSystem, x0) -> np.ndarray:
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.size != sys.state_dim:
        raise InputError(f"x0 has {x0.size} entries, system has {sys.state_dim}")
    return rk4(sys.rhs, x0, sys.dt, sys.n_steps)


def mexico_system(t1: float = 0.3, dt: float = 1e-3) -> OdeSystem:
    """The two-component productivity/water system with a cross term."""
    lib = TermLibrary(2, 2)
    xi = np.zeros((len(lib), 2))
    xi[lib.index((1, 0))] = (-37.5, 67.2)
    xi[lib.index((0, 1))] = (-55.6, 44.8)
    xi[lib.index((1, 1))] = (-31.9, -74.0)
    return OdeSystem(xi, lib, 0.0, t1, dt)


# ---------------------------------------------------------------------------
# LAI datasets
# ---------------------------------------------------------------------------


def _truncated_exponential(g: np.random.Generator, n: int, scale: float, upper: float):
    u = g.uniform(0.0, 1.0, n)
    return -scale * np.log1p(-u * (1.0 - np.exp(-upper / scale)))


def lai_discrepancy(lai) -> np.ndarray:
    return 0.02 * np.sin(3.0 * np.asarray(lai, dtype=float))


def make_biased_lai_dataset(rng, n_real: int, n_sim: int, n_test: int = 200,
                            rtm: SyntheticRtm | None = None, real_scale: float = 1.0,
                            target_noise: float = 0.0):
    """Real rows skewed to low LAI, simulated rows over the full range.

    Simulated spectra carry an additive model discrepancy ``0.02 sin(3 LAI)``
    on every band; the test rows are real spectra with LAI in [3, 10].
    """
    if n_real < 10 or n_sim < 10:
        raise InputError("n_real and n_sim must be >= 10")
    rtm = rtm or SyntheticRtm(noise_sd=0.005)
    g = as_generator(rng)

    def spectra(chl, lai, discrepancy):
        r = rtm_forward(rtm, chl, lai, g)
        if discrepancy:
            r = r + lai_discrepancy(lai)[:, None]
        return r

    lai_r = _truncated_exponential(g, n_real, real_scale, 3.0)
    chl_r = g.uniform(*CHL_BOX, n_real)
    lai_s = g.uniform(*LAI_BOX, n_sim)
    chl_s = g.uniform(*CHL_BOX, n_sim)
    lai_t = g.uniform(3.0, 10.0, n_test)
    chl_t = g.uniform(*CHL_BOX, n_test)
    # field LAI measurements are noisy; simulated and test labels are exact
    y_r = lai_r + target_noise * g.standard_normal(n_real)
    real = Dataset(spectra(chl_r, lai_r, False), y_r, np.full(n_real, Provenance.REAL))
    sim = Dataset(spectra(chl_s, lai_s, True), lai_s, np.full(n_sim, Provenance.SIMULATED))
    test = Dataset(spectra(chl_t, lai_t, False), lai_t, np.full(n_test, Provenance.REAL))
    return real, sim, test


def make_shift_dataset(rng, n_real: int = 30, n_sim: int = 150, n_test: int = 300,
                       rtm: SyntheticRtm | None = None, real_scale: float = 1.5,
                       real_upper: float = 6.5, target_noise: float = 0.3):
    """Distribution-shift variant: few noisy low-LAI real rows, test over the full range.

    Returns ``(real, sim, test, reference)`` where ``reference`` is the
    simulated target sample used as the distributional anchor.
    """
    if n_real < 10 or n_sim < 10 or n_test < 1:
        raise InputError("n_real and n_sim must be >= 10, n_test >= 1")
    rtm = rtm or SyntheticRtm(noise_sd=0.005)
    g = as_generator(rng)
    lai_r = _truncated_exponential(g, n_real, real_scale, real_upper)
    chl_r = g.uniform(*CHL_BOX, n_real)
    lai_s = g.uniform(*LAI_BOX, n_sim)
    chl_s = g.uniform(*CHL_BOX, n_sim)
    lai_t = g.uniform(*LAI_BOX, n_test)
    chl_t = g.uniform(*CHL_BOX, n_test)
    y_r = lai_r + target_noise * g.standard_normal(n_real)
    real = Dataset(rtm_forward(rtm, chl_r, lai_r, g), y_r, np.full(n_real, Provenance.REAL))
    sim_x = rtm_forward(rtm, chl_s, lai_s, g) + lai_discrepancy(lai_s)[:, None]
    sim = Dataset(sim_x, lai_s, np.full(n_sim, Provenance.SIMULATED))
    test = Dataset(rtm_forward(rtm, chl_t, lai_t, g), lai_t, np.full(n_test, Provenance.REAL))
    return real, sim, test, lai_s.copy()


# ---------------------------------------------------------------------------
# planted latent-force series
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RainfallForce:
    """Sum of Gaussian bumps ``sum_k h_k exp(-(t - c_k)^2 / (2 w^2))``."""

    centers: np.ndarray
    heights: np.ndarray
    width: float

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)[..., None]
        return (self.heights * np.exp(-0.5 * ((t - self.centers) / self.width) ** 2)).sum(-1)

    def response(self, t, gamma: float) -> np.ndarray:
        """Exact ``x(t) = int_{-inf}^t exp(-gamma (t - s)) u(s) ds``."""
        t = np.asarray(t, dtype=float)[..., None]
        w = self.width
        d = t - self.centers
        z = (d - gamma * w * w) / (np.sqrt(2.0) * w)
        # 1 + erf(z) = erfc(-z); use erfcx before the bump peak to avoid inf*0
        with np.errstate(over="ignore", invalid="ignore"):
            early = np.exp(-0.5 * (d / w) ** 2) * erfcx(-z)
            late = np.exp(-gamma * d + 0.5 * (gamma * w) ** 2) * erfc(-z)
        val = w * np.sqrt(np.pi / 2.0) * np.where(z < 0, early, late)
        return (self.heights * val).sum(-1)


def make_rainfall_force(rng, t_min: float, t_max: float, rate: float = 0.08,
                        width: float = 2.5) -> RainfallForce:
    g = as_generator(rng)
    n = max(1, g.poisson(rate * (t_max - t_min)))
    centers = np.sort(g.uniform(t_min, t_max, n))
    heights = g.exponential(1.0, n)
    return RainfallForce(centers, heights, width)
