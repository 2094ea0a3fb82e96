"""Nonparametric estimators used by the bound reports.

Three jobs live here:

* Gaussian kernel density estimates, with scores taken as central finite
  differences of the estimated log density.  Plugging the KDE score into the
  weighted score-matching objective gives a model-free estimate of the
  marginal score-matching loss, per timestep and summed with weight
  beta_t / 2 over the discrete timeline.

* Grid estimation of one-sided Lipschitz constants of a vector field:
  max over ordered grid pairs of (F(x) - F(y)) . (x - y) / ||x - y||^2.
  Unlike an ordinary Lipschitz constant this can be negative, and for score
  fields it is exactly the contraction rate the integrating factor needs.

* Closed-form diagnostics for isotropic Gaussian initial data: the exact
  one-sided constant of the marginal score, and the L2(phi) distance of the
  marginal-to-stationary density ratio from 1, computed by adaptive
  quadrature, which quantifies how fast the forward chain forgets the data.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
from scipy.integrate import quad
from scipy.special import logsumexp

from .errors import ConfigError
from .sampler import forward_diffuse
from .schedule import NoiseSchedule
from .scorenet import as_score_fn

GRID_POINTS_PER_AXIS = 41
PAIR_DISTANCE_CAP = 2.0


@dataclasses.dataclass
class KdeModel:
    """Equal-weight Gaussian mixture centered on the support points."""

    support: np.ndarray  # (n, d)
    bandwidth: float

    def __post_init__(self) -> None:
        self.support = np.atleast_2d(np.asarray(self.support, dtype=np.float64))
        if self.bandwidth <= 0:
            raise ConfigError(f"bandwidth must be > 0, got {self.bandwidth}")


def kde_log_density(model: KdeModel, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n, d = model.support.shape
    h2 = model.bandwidth ** 2
    sq = ((X[:, None, :] - model.support[None, :, :]) ** 2).sum(axis=2)
    return (logsumexp(-sq / (2.0 * h2), axis=1)
            - math.log(n) - 0.5 * d * math.log(2.0 * math.pi * h2))


def kde_density(model: KdeModel, x: np.ndarray):
    """Density at a point (or at each row of a batch)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim <= 1
    dens = np.exp(kde_log_density(model, x))
    return float(dens[0]) if single else dens


def kde_score(model: KdeModel, x: np.ndarray, fd_step: float = 0.01):
    """Central-difference gradient of the log density.

    The two one-sided evaluations per coordinate reuse the unshifted pairwise
    distances: ||x + s e_j - c||^2 = ||x - c||^2 + 2 s (x_j - c_j) + s^2.
    """
    if fd_step <= 0:
        raise ConfigError(f"fd_step must be > 0, got {fd_step}")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim <= 1
    X = np.atleast_2d(x)
    n, d = model.support.shape
    h2 = model.bandwidth ** 2
    deltas = X[:, None, :] - model.support[None, :, :]  # (q, n, d)
    sq = (deltas ** 2).sum(axis=2)
    score = np.empty_like(X)
    for j in range(d):
        plus = logsumexp(-(sq + 2.0 * fd_step * deltas[:, :, j] + fd_step ** 2) / (2.0 * h2), axis=1)
        minus = logsumexp(-(sq - 2.0 * fd_step * deltas[:, :, j] + fd_step ** 2) / (2.0 * h2), axis=1)
        score[:, j] = (plus - minus) / (2.0 * fd_step)
    return score[0] if single else score


def estimate_jsm_terms(net, sch: NoiseSchedule, p0_samples, n_per_t: int,
                       bandwidth: float, fd_step: float,
                       rng: np.random.Generator) -> tuple[float, np.ndarray]:
    """Per-timestep mean squared score error against the KDE score.

    For each t the batch is diffused one-shot, a KDE is fit on it, and the
    mean of ||kde_score - s(x, t)||^2 over n_per_t query points drawn from
    the batch is recorded.  Returns (sum over t of beta_t/2 * mse_t, mse array).
    """
    fn = net if callable(net) else as_score_fn(net)
    p0 = np.atleast_2d(np.asarray(getattr(p0_samples, "points", p0_samples),
                                  dtype=np.float64))
    mse = np.empty(sch.T)
    for t in range(1, sch.T + 1):
        xt = forward_diffuse(sch, p0, t, rng)
        model = KdeModel(support=xt, bandwidth=bandwidth)
        if n_per_t < xt.shape[0]:
            queries = xt[rng.choice(xt.shape[0], size=n_per_t, replace=False)]
        else:
            queries = xt
        err = kde_score(model, queries, fd_step) - fn(queries, t)
        mse[t - 1] = float((err ** 2).sum(axis=1).mean())
    total = float((0.5 * sch.beta * mse).sum())
    return total, mse


def estimate_jsm(net, sch: NoiseSchedule, p0_samples, n_per_t: int,
                 bandwidth: float, fd_step: float, rng: np.random.Generator) -> float:
    total, _ = estimate_jsm_terms(net, sch, p0_samples, n_per_t, bandwidth, fd_step, rng)
    return total


def one_sided_lipschitz_grid(fn, box, step: float, dist_cap: float | None = None) -> float:
    """Max of (F(x) - F(y)) . (x - y) / ||x - y||^2 over distinct grid pairs.

    ``box`` is a (lo, hi) pair of per-coordinate bounds.  ``dist_cap``, when
    given, restricts the maximization to pairs with ||x - y|| <= dist_cap.
    """
    lo = np.atleast_1d(np.asarray(box[0], dtype=np.float64))
    hi = np.atleast_1d(np.asarray(box[1], dtype=np.float64))
    if lo.shape != hi.shape or np.any(hi < lo):
        raise ConfigError(f"bad box: lo={lo}, hi={hi}")
    if step <= 0:
        raise ConfigError(f"step must be > 0, got {step}")
    axes = [np.arange(a, b + step * 1e-9, step) for a, b in zip(lo, hi)]
    grid = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    m = grid.shape[0]
    if m < 2:
        raise ConfigError(f"grid has {m} point(s); need at least 2")
    F = np.atleast_2d(np.asarray(fn(grid), dtype=np.float64))
    cap_sq = None if dist_cap is None else float(dist_cap) ** 2
    best = -math.inf
    block = max(1, int(2e6 // m))
    for i0 in range(0, m, block):
        i1 = min(i0 + block, m)
        dx = grid[i0:i1, None, :] - grid[None, :, :]
        df = F[i0:i1, None, :] - F[None, :, :]
        den = (dx ** 2).sum(axis=2)
        num = (df * dx).sum(axis=2)
        ok = den > 0
        if cap_sq is not None:
            ok &= den <= cap_sq
        if ok.any():
            best = max(best, float((num[ok] / den[ok]).max()))
    return best


def score_field_box(sch: NoiseSchedule, t: int, data_points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Evaluation box at time t: data bounding box widened by 3 forward stds."""
    pts = np.atleast_2d(np.asarray(data_points, dtype=np.float64))
    pad = 3.0 * math.sqrt(1.0 - sch.alpha_bar[t - 1]) * sch.sigma
    return pts.min(axis=0) - pad, pts.max(axis=0) + pad


def score_field_lipschitz(net, sch: NoiseSchedule, t: int, data_points,
                          points_per_axis: int = GRID_POINTS_PER_AXIS,
                          dist_cap: float = PAIR_DISTANCE_CAP) -> float:
    """Grid one-sided Lipschitz estimate of the score field at one timestep."""
    fn = net if callable(net) else as_score_fn(net)
    pts = np.atleast_2d(np.asarray(getattr(data_points, "points", data_points),
                                   dtype=np.float64))
    lo, hi = score_field_box(sch, t, pts)
    step = float((hi - lo).max()) / (points_per_axis - 1)
    return one_sided_lipschitz_grid(lambda X: fn(X, t), (lo, hi), step, dist_cap=dist_cap)


def ls_series(net, sch: NoiseSchedule, data_points,
              points_per_axis: int = GRID_POINTS_PER_AXIS,
              dist_cap: float = PAIR_DISTANCE_CAP) -> np.ndarray:
    """Grid L_s estimate at every timestep t = 1..T."""
    return np.array([score_field_lipschitz(net, sch, t, data_points,
                                           points_per_axis, dist_cap)
                     for t in range(1, sch.T + 1)])


def gaussian_score_onesided(sch: NoiseSchedule, t: int, sigma0: float) -> float:
    """Exact one-sided constant of the marginal score for N(0, sigma0^2 I) data.

    The marginal at t is N(0, (abar_t sigma0^2 + 1 - abar_t) I), whose score
    is linear, so the constant is -1 / (abar_t sigma0^2 + 1 - abar_t).
    """
    ab = sch.alpha_bar[t - 1]
    return float(-1.0 / (ab * sigma0 ** 2 + (1.0 - ab)))


def h_decay(sch: NoiseSchedule, sigma0: float, t_list=None) -> np.ndarray:
    """|| p_t / phi - 1 ||_{L2(phi)} for 1D N(0, sigma0^2) data, by quadrature.

    phi = N(0, 1) is the stationary law.  The ratio h_t = p_t / phi tends to 1
    as the forward chain mixes; this returns the norm for each requested t.
    """
    if t_list is None:
        t_list = range(1, sch.T + 1)
    out = np.empty(len(list(t_list)))
    ts = list(t_list)
    for k, t in enumerate(ts):
        ab = sch.alpha_bar[t - 1]
        v = ab * sigma0 ** 2 + (1.0 - ab)
        if v >= 2.0:
            raise ConfigError(f"density ratio not square-integrable at t={t} "
                              f"(marginal variance {v} >= 2)")

        def integrand(x: float, v: float = v) -> float:
            # (r - 1)^2 phi expanded as r^2 phi - 2 r phi + phi, each term
            # exponentiated from its log so the far tail never hits 0/0.
            log_phi = -0.5 * x * x - 0.5 * math.log(2.0 * math.pi)
            log_r = 0.5 * x * x * (1.0 - 1.0 / v) - 0.5 * math.log(v)
            return (math.exp(2.0 * log_r + log_phi)
                    - 2.0 * math.exp(log_r + log_phi)
                    + math.exp(log_phi))

        val, _ = quad(integrand, -np.inf, np.inf, epsabs=1e-12, epsrel=1e-10)
        out[k] = math.sqrt(max(val, 0.0))
    return out
