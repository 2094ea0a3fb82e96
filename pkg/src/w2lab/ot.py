"""Exact 2-Wasserstein distance between equal-size empirical measures.

With uniform weights on n points each side, the optimal coupling is a
permutation, so W2 reduces to a minimum-cost assignment under squared
Euclidean cost.  In one dimension the monotone (sorted) pairing is optimal
and costs O(n log n); in higher dimension we solve the dense assignment
problem exactly with a shortest-augmenting-path solver.  A factorial-time
enumerator over all permutations is kept as an independent oracle for
small n.
"""

from __future__ import annotations

import dataclasses
import itertools
import math

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ConfigError, DivergenceError

# Enumerating permutations beyond this size is pointless (9! = 362880 plans).
BRUTEFORCE_MAX_N = 9


@dataclasses.dataclass
class TransportPlan:
    """Optimal pairing i -> pairing[i] and its mean squared cost (= W2^2)."""

    pairing: np.ndarray  # (n,) int, a permutation of 0..n-1
    cost: float


def _as_points(a) -> np.ndarray:
    pts = np.asarray(getattr(a, "points", a), dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    return pts


def _check_pair(A: np.ndarray, B: np.ndarray) -> None:
    if A.shape != B.shape:
        raise ConfigError(f"point sets must match in shape, got {A.shape} vs {B.shape}")
    if A.shape[0] == 0:
        raise ConfigError("empty point sets")


def w2_empirical(a, b) -> tuple[float, TransportPlan]:
    """Exact empirical W2 and the optimal pairing.

    Accepts SampleSets or plain arrays; 1D inputs may be flat vectors.
    Pair costs are accumulated with exact (compensated) summation before
    the square root.
    """
    A, B = _as_points(a), _as_points(b)
    _check_pair(A, B)
    n, d = A.shape
    if d == 1:
        # Monotone coupling is optimal in 1D for convex costs.
        ia = np.argsort(A[:, 0], kind="stable")
        ib = np.argsort(B[:, 0], kind="stable")
        pairing = np.empty(n, dtype=np.int64)
        pairing[ia] = ib
    else:
        with np.errstate(over="ignore"):
            cost_matrix = ((A[:, None, :] - B[None, :, :]) ** 2).sum(axis=2)
        if not np.all(np.isfinite(cost_matrix)):
            raise DivergenceError("pair costs are not finite; "
                                  "point magnitudes overflow the pairing")
        rows, cols = linear_sum_assignment(cost_matrix)
        pairing = np.empty(n, dtype=np.int64)
        pairing[rows] = cols
    with np.errstate(over="ignore"):
        sq = ((A - B[pairing]) ** 2).sum(axis=1)
    try:
        mean_cost = math.fsum(sq.tolist()) / n
    except OverflowError:
        mean_cost = math.inf
    if not math.isfinite(mean_cost):
        raise DivergenceError("pair costs are not finite; "
                              "point magnitudes overflow the pairing")
    return math.sqrt(mean_cost), TransportPlan(pairing=pairing, cost=mean_cost)


def w2_bruteforce(a, b) -> float:
    """Reference W2 by enumerating every permutation (n <= 9 only)."""
    A, B = _as_points(a), _as_points(b)
    _check_pair(A, B)
    n = A.shape[0]
    if n > BRUTEFORCE_MAX_N:
        raise ConfigError(f"brute force capped at n={BRUTEFORCE_MAX_N}, got {n}")
    sq = ((A[:, None, :] - B[None, :, :]) ** 2).sum(axis=2)
    best = math.inf
    for perm in itertools.permutations(range(n)):
        c = math.fsum(sq[i][j] for i, j in enumerate(perm))
        if c < best:
            best = c
    return math.sqrt(best / n)


def w2_gaussian_isotropic(mu1, s1: float, mu2, s2: float, d: int | None = None) -> float:
    """Closed-form W2 between N(mu1, s1^2 I) and N(mu2, s2^2 I).

    ``s1``/``s2`` are standard deviations.  Means may be vectors, or scalars
    repeated across ``d`` coordinates when ``d`` is given.
    """
    mu1 = np.atleast_1d(np.asarray(mu1, dtype=np.float64))
    mu2 = np.atleast_1d(np.asarray(mu2, dtype=np.float64))
    if d is not None and mu1.size == 1 and mu2.size == 1:
        mu1 = np.full(d, mu1[0])
        mu2 = np.full(d, mu2[0])
    if mu1.shape != mu2.shape:
        raise ConfigError("mean vectors must have equal length")
    dim = mu1.size if d is None else d
    if dim != mu1.size:
        raise ConfigError(f"d={d} inconsistent with mean vectors of length {mu1.size}")
    mean_term = float(((mu1 - mu2) ** 2).sum())
    return math.sqrt(mean_term + dim * (s1 - s2) ** 2)
