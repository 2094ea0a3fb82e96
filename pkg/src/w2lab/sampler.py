"""Forward diffusion and ancestral reverse sampling.

Reverse update, for t = T..1 with z ~ N(0, I) and z = 0 at the last step:

    x_{t-1} = ( x_t + beta_t * s(x_t, t) ) / sqrt(1 - beta_t) + sqrt(beta_t) * z

Two ways to seed the reverse chain:

  shared terminal:  diffuse the given data batch to x_T and reverse exactly
                    that batch, which ties the generative terminal law to the
                    forward one (terminal W2 is identically zero);
  fresh terminal:   reverse a fresh N(0, I) batch and report the empirical W2
                    between the diffused batch and that fresh terminal.
"""

from __future__ import annotations

import enum

import numpy as np

from . import ot
from .errors import DivergenceError
from .schedule import NoiseSchedule, marginal_params
from .scorenet import as_score_fn
from .synthdata import SampleSet


class ReverseMode(enum.Enum):
    SHARED_TERMINAL = "shared_terminal"
    FRESH_TERMINAL = "fresh_terminal"


def _score_fn(net):
    return net if callable(net) else as_score_fn(net)


def forward_diffuse(sch: NoiseSchedule, x0_batch: np.ndarray, t: int,
                    rng: np.random.Generator) -> np.ndarray:
    """One-shot draw of x_t | x_0 for every row of the batch."""
    x0 = np.atleast_2d(np.asarray(x0_batch, dtype=np.float64))
    scale, var = marginal_params(sch, t)
    return scale * x0 + np.sqrt(var) * rng.standard_normal(x0.shape)


def reverse_ancestral(net, sch: NoiseSchedule, xT_batch: np.ndarray,
                      rng: np.random.Generator) -> np.ndarray:
    """Run the reverse chain from x_T down to x_0.  T = 0 is the identity."""
    fn = _score_fn(net)
    x = np.atleast_2d(np.asarray(xT_batch, dtype=np.float64)).copy()
    for t in range(sch.T, 0, -1):
        beta = sch.beta[t - 1]
        x = (x + beta * fn(x, t)) / np.sqrt(1.0 - beta)
        if t > 1:
            x = x + np.sqrt(beta) * rng.standard_normal(x.shape)
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"non-finite state in reverse chain at t={t}")
    return x


def generate(net, sch: NoiseSchedule, mode: ReverseMode, p0_samples,
             rng: np.random.Generator) -> tuple[SampleSet, float]:
    """Generate one batch; returns (q0, terminal W2).

    The batch size and dimension follow ``p0_samples``.  With a shared
    terminal the terminal W2 is exactly 0.0 by construction; with a fresh
    terminal it is the empirical W2 between the diffused batch and the fresh
    N(0, I) draw that seeds the reverse chain.
    """
    p0 = np.atleast_2d(np.asarray(getattr(p0_samples, "points", p0_samples),
                                  dtype=np.float64))
    xT = forward_diffuse(sch, p0, sch.T, rng)
    if mode is ReverseMode.SHARED_TERMINAL:
        w2_terminal = 0.0
        start = xT
    elif mode is ReverseMode.FRESH_TERMINAL:
        start = rng.standard_normal(p0.shape)
        w2_terminal, _ = ot.w2_empirical(xT, start)
    else:
        raise ValueError(f"unknown reverse mode: {mode!r}")
    q0 = reverse_ancestral(net, sch, start, rng)
    return SampleSet(points=q0), w2_terminal
