"""Discrete forward-noising schedule.

The forward chain is x_t = sqrt(1 - beta_t) x_{t-1} + sqrt(beta_t) z_t with
z_t ~ N(0, I) and t = 1..T, so the marginal given x_0 is

    x_t | x_0  ~  N( sqrt(abar_t) x_0, (1 - abar_t) I ),
    abar_t = prod_{r<=t} (1 - beta_r).

The stationary law of the chain is N(0, I) (sigma = 1).  Time integrals
elsewhere in the package use unit-step Riemann sums over t = 1..T, matching
this discrete timeline.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .errors import ConfigError


@dataclasses.dataclass
class NoiseSchedule:
    beta: np.ndarray        # (T,) beta_1..beta_T
    alpha_bar: np.ndarray   # (T,) abar_1..abar_T
    sigma: float = 1.0

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float)
        self.alpha_bar = np.asarray(self.alpha_bar, dtype=float)
        if self.beta.shape != self.alpha_bar.shape or self.beta.ndim != 1:
            raise ConfigError("beta and alpha_bar must be 1-d arrays of equal length")
        if self.sigma <= 0:
            raise ConfigError(f"sigma must be positive, got {self.sigma}")

    @property
    def T(self) -> int:
        return len(self.beta)


def build_sigmoid_schedule(T: int, beta1: float = 1e-5, betaT: float = 1e-2) -> NoiseSchedule:
    """Logistic ramp over [-6, 6], affinely rescaled so the endpoints are exact.

    The raw logistic never reaches 0 or 1, so beta is renormalized to hit
    beta1 and betaT exactly at t = 1 and t = T.  That renormalization needs
    two distinct grid points, hence T >= 2.
    """
    if not (0.0 < beta1 < betaT < 1.0):
        raise ConfigError(f"need 0 < beta1 < betaT < 1, got {beta1}, {betaT}")
    if T < 2:
        raise ConfigError(f"need T >= 2 to pin both endpoints, got T={T}")
    u = np.linspace(-6.0, 6.0, T)
    s = 1.0 / (1.0 + np.exp(-u))
    ramp = (s - s[0]) / (s[-1] - s[0])
    beta = beta1 + (betaT - beta1) * ramp
    alpha_bar = np.cumprod(1.0 - beta)
    return NoiseSchedule(beta=beta, alpha_bar=alpha_bar)


def marginal_params(sch: NoiseSchedule, t: int) -> tuple[float, float]:
    """(scale, variance) of x_t | x_0, i.e. (sqrt(abar_t), 1 - abar_t)."""
    _check_t(sch, t)
    ab = sch.alpha_bar[t - 1]
    return float(np.sqrt(ab)), float(1.0 - ab)


def conditional_score(sch: NoiseSchedule, t: int, x: np.ndarray, x0: np.ndarray) -> np.ndarray:
    """Gradient in x of log N(x; sqrt(abar_t) x_0, (1 - abar_t) I)."""
    scale, var = marginal_params(sch, t)
    return -(np.asarray(x) - scale * np.asarray(x0)) / var


def lipschitz_Lf(sch: NoiseSchedule, t: int) -> float:
    """One-sided Lipschitz constant of the reversed drift x -> beta_t x / 2.

    Generation runs the chain backwards, so the drift -beta_t x / 2 enters
    the contraction analysis with its sign flipped; this is the rate that
    feeds the integrating factor.
    """
    _check_t(sch, t)
    return float(sch.beta[t - 1] / 2.0)


def to_csv(sch: NoiseSchedule, path: str) -> None:
    with open(path, "w", newline="\n") as f:
        f.write("t,beta,alpha_bar\n")
        for t in range(sch.T):
            f.write(f"{t + 1},{float(sch.beta[t])!r},{float(sch.alpha_bar[t])!r}\n")


def _check_t(sch: NoiseSchedule, t: int) -> None:
    if not 1 <= t <= sch.T:
        raise ConfigError(f"timestep {t} outside 1..{sch.T}")
