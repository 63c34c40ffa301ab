"""Dynamic conditional-quantile duration model.

The q-th conditional quantile of duration x_t follows, on the log-link
scale,

    log(psi_t) = omega + sum_j alpha_j * log(psi_{t-j})
                       + sum_j beta_j * (x_{t-j} / psi_{t-j})

with the observation density given by the static quantile-parameterized
log-symmetric law of :mod:`qlsacd.lsdist` evaluated at psi_t.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import _recursions
from .errors import DomainError, FilterDivergenceError
from .lsdist import (
    GeneratorSpec,
    log_g,
    normalizing_constant,
    sample_standard,
    score_weight_zv,
    standard_quantile,
)

__all__ = [
    "Link",
    "AcdModelSpec",
    "AcdParams",
    "FilterOutput",
    "Presample",
    "acd_filter",
    "loglik_kernel",
    "loglik_full",
    "loglik_constant",
    "score",
    "loglik_and_score",
    "simulate",
    "SimulationResult",
]


class Link(str, Enum):
    """Link functions for the quantile recursion (only log is implemented)."""

    LOG = "log"


@dataclass(frozen=True)
class AcdModelSpec:
    """Model orders, quantile level and kernel family."""

    r: int
    s: int
    q: float
    gen: GeneratorSpec
    link: Link = Link.LOG

    def __post_init__(self):
        object.__setattr__(self, "link", Link(self.link))
        if self.r < 0 or self.s < 0:
            raise DomainError(f"orders must be nonnegative, got r={self.r} s={self.s}")
        if not 0.0 < self.q < 1.0:
            raise DomainError(f"q must lie in (0, 1), got {self.q}")

    @property
    def n_params(self) -> int:
        return 2 + self.r + self.s

    @property
    def param_names(self) -> tuple:
        return (
            ("phi", "omega")
            + tuple(f"alpha_{j}" for j in range(1, self.r + 1))
            + tuple(f"beta_{j}" for j in range(1, self.s + 1))
        )

    @property
    def z_q(self) -> float:
        return standard_quantile(self.gen, self.q)


@dataclass(frozen=True)
class AcdParams:
    """Parameter vector theta = (phi, omega, alpha, beta)."""

    phi: float
    omega: float
    alpha: tuple = ()
    beta: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "alpha", tuple(float(a) for a in np.atleast_1d(np.asarray(self.alpha, float))))
        object.__setattr__(self, "beta", tuple(float(b) for b in np.atleast_1d(np.asarray(self.beta, float))))
        if self.phi <= 0:
            raise DomainError(f"phi must be positive, got {self.phi}")

    @property
    def stationarity_warning(self) -> bool:
        """Heuristic flag: sum of |alpha_j| at or beyond 1."""
        return sum(abs(a) for a in self.alpha) >= 1.0

    def to_vector(self) -> np.ndarray:
        return np.concatenate(([self.phi, self.omega], self.alpha, self.beta))

    @classmethod
    def from_vector(cls, theta, r: int, s: int) -> "AcdParams":
        theta = np.asarray(theta, dtype=float)
        if theta.shape[0] != 2 + r + s:
            raise DomainError(
                f"parameter vector has length {theta.shape[0]}, expected {2 + r + s}"
            )
        return cls(
            phi=float(theta[0]),
            omega=float(theta[1]),
            alpha=tuple(theta[2 : 2 + r]),
            beta=tuple(theta[2 + r :]),
        )


@dataclass
class FilterOutput:
    """Filtered conditional-quantile path and standardized residual inputs."""

    psi: np.ndarray
    z: np.ndarray
    eta: np.ndarray


@dataclass(frozen=True)
class Presample:
    """Pre-sample lag values, most recent first (index 0 is t = -1)."""

    x: tuple
    psi: tuple

    @classmethod
    def from_data(cls, spec: AcdModelSpec, x: np.ndarray) -> "Presample":
        # paper is silent on initialization; sample mean for lagged durations
        # and the empirical q-quantile for lagged psi keep ratio terms O(1)
        depth = max(spec.r, spec.s, 1)
        x_fill = float(np.mean(x))
        psi_fill = float(np.quantile(x, spec.q))
        return cls(x=(x_fill,) * depth, psi=(psi_fill,) * depth)

    def arrays(self, spec: AcdModelSpec):
        depth = max(spec.r, spec.s, 1)
        x_pre = np.asarray(self.x, dtype=float)
        psi_pre = np.asarray(self.psi, dtype=float)
        if x_pre.shape[0] < spec.s or psi_pre.shape[0] < depth:
            raise DomainError("presample does not cover the model orders")
        if np.any(psi_pre <= 0) or np.any(x_pre <= 0):
            raise DomainError("presample values must be positive")
        return x_pre, psi_pre


def _check_inputs(spec: AcdModelSpec, params: AcdParams, x) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] < max(spec.r, spec.s, 1):
        raise DomainError("duration series shorter than the model order")
    if np.any(x <= 0) or not np.all(np.isfinite(x)):
        raise DomainError("durations must be finite and strictly positive")
    if len(params.alpha) != spec.r or len(params.beta) != spec.s:
        raise DomainError(
            f"parameter dimensions (r={len(params.alpha)}, s={len(params.beta)}) "
            f"do not match the model spec (r={spec.r}, s={spec.s})"
        )
    return x


def acd_filter(spec: AcdModelSpec, params: AcdParams, x, presample: Presample | None = None) -> FilterOutput:
    """Run the conditional-quantile recursion over a duration series.

    Raises :class:`FilterDivergenceError` when the link-scale value
    overflows the exp boundary.
    """
    x = _check_inputs(spec, params, x)
    pre = presample if presample is not None else Presample.from_data(spec, x)
    x_pre, psi_pre = pre.arrays(spec)
    eta, psi, t_div, eta_div = _recursions.filter_path(
        x,
        params.omega,
        np.asarray(params.alpha, float),
        np.asarray(params.beta, float),
        x_pre,
        psi_pre,
    )
    if t_div >= 0:
        raise FilterDivergenceError(t_div, eta_div)
    sphi = math.sqrt(params.phi)
    z = (np.log(x) - np.log(psi)) / sphi + spec.z_q
    return FilterOutput(psi=psi, z=z, eta=eta)


def loglik_kernel(spec: AcdModelSpec, params: AcdParams, x, presample=None) -> float:
    """Log-likelihood without the parameter-free normalization terms.

    Returns -inf when the kernel density vanishes at some observation.
    """
    out = acd_filter(spec, params, x, presample)
    n = out.z.shape[0]
    return float(np.sum(log_g(spec.gen, out.z**2)) - 0.5 * n * math.log(params.phi))


def loglik_constant(spec: AcdModelSpec, x) -> float:
    """n*log(delta_nc) - sum(log x): the terms dropped from the kernel form."""
    x = np.asarray(x, dtype=float)
    return float(
        x.shape[0] * math.log(normalizing_constant(spec.gen)) - np.sum(np.log(x))
    )


def loglik_full(spec: AcdModelSpec, params: AcdParams, x, presample=None) -> float:
    """Exact log-likelihood; comparable across kernel families."""
    return loglik_kernel(spec, params, x, presample) + loglik_constant(spec, x)


def _score_from_filter(spec: AcdModelSpec, params: AcdParams, x, out: FilterOutput, presample: Presample):
    x_pre, psi_pre = presample.arrays(spec)
    D = _recursions.derivative_paths(
        np.asarray(x, float),
        out.psi,
        np.asarray(params.alpha, float),
        np.asarray(params.beta, float),
        x_pre,
        psi_pre,
    )
    z = out.z
    n = z.shape[0]
    phi = params.phi
    sphi = math.sqrt(phi)
    zv = score_weight_zv(spec.gen, z)
    grad = np.empty(2 + spec.r + spec.s)
    grad[0] = 0.5 / phi * float(np.sum(zv * (z - spec.z_q))) - 0.5 * n / phi
    grad[1:] = D.T @ (zv / (sphi * out.psi))
    return grad


def score(spec: AcdModelSpec, params: AcdParams, x, presample=None) -> np.ndarray:
    """Analytic gradient of :func:`loglik_kernel` in (phi, omega, alpha, beta) order."""
    x = _check_inputs(spec, params, x)
    pre = presample if presample is not None else Presample.from_data(spec, x)
    out = acd_filter(spec, params, x, pre)
    return _score_from_filter(spec, params, x, out, pre)


def loglik_and_score(spec: AcdModelSpec, params: AcdParams, x, presample=None):
    """Kernel log-likelihood and its gradient from one filter pass."""
    x = _check_inputs(spec, params, x)
    pre = presample if presample is not None else Presample.from_data(spec, x)
    out = acd_filter(spec, params, x, pre)
    n = out.z.shape[0]
    value = float(
        np.sum(log_g(spec.gen, out.z**2)) - 0.5 * n * math.log(params.phi)
    )
    grad = _score_from_filter(spec, params, x, out, pre)
    return value, grad


@dataclass
class SimulationResult:
    """Simulated durations plus the state needed to replay the filter."""

    x: np.ndarray
    psi: np.ndarray
    presample: Presample


def _simulation_presample(spec: AcdModelSpec, params: AcdParams) -> Presample:
    alpha_sum = sum(params.alpha)
    if alpha_sum < 1.0:
        psi0 = math.exp(params.omega / (1.0 - alpha_sum))
    else:
        psi0 = math.exp(params.omega)
    depth = max(spec.r, spec.s, 1)
    return Presample(x=(psi0,) * depth, psi=(psi0,) * depth)


def simulate(
    spec: AcdModelSpec,
    params: AcdParams,
    n: int,
    seed=None,
    burn_in: int = 500,
    return_state: bool = False,
):
    """Draw a duration series of length n from the model.

    A burn-in prefix is generated and discarded so the retained segment no
    longer reflects the startup state.  With ``return_state=True`` the
    conditional-quantile path and the pre-sample lags at the start of the
    retained segment are returned as well, which lets
    :func:`acd_filter` reproduce the exact psi path.
    """
    if n < 1:
        raise DomainError(f"sample size must be >= 1, got {n}")
    if len(params.alpha) != spec.r or len(params.beta) != spec.s:
        raise DomainError("parameter dimensions do not match the model spec")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    total = n + burn_in
    z = sample_standard(spec.gen, total, rng)
    mult = np.exp(math.sqrt(params.phi) * (z - spec.z_q))
    pre = _simulation_presample(spec, params)
    x_pre, psi_pre = pre.arrays(spec)
    x, psi, t_div, eta_div = _recursions.simulate_path(
        mult,
        params.omega,
        np.asarray(params.alpha, float),
        np.asarray(params.beta, float),
        x_pre,
        psi_pre,
    )
    if t_div >= 0:
        raise FilterDivergenceError(t_div, eta_div)
    if not return_state:
        return x[burn_in:].copy()
    depth = max(spec.r, spec.s, 1)
    lags_x, lags_psi = [], []
    for j in range(depth):
        idx = burn_in - 1 - j
        if idx >= 0:
            lags_x.append(float(x[idx]))
            lags_psi.append(float(psi[idx]))
        else:
            lags_x.append(pre.x[-idx - 1])
            lags_psi.append(pre.psi[-idx - 1])
    state = Presample(x=tuple(lags_x), psi=tuple(lags_psi))
    return SimulationResult(x=x[burn_in:].copy(), psi=psi[burn_in:].copy(), presample=state)
