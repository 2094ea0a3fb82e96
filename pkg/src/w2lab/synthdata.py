"""Synthetic 1D/2D datasets used throughout the experiments.

Every generator is a small mixture with equal component weights:

    gauss1d-1cluster   N(0, 0.1)
    gauss1d-2cluster   N(0, 0.1) and N(0.5, 0.1)
    gauss2d-1cluster   N(0, 0.1 I)
    gauss2d-4cluster   N((+-0.5, +-0.5), 0.01 I)
    two-moons          two interleaved half circles (radius 1, vertical
                       offset 0.5) plus isotropic Gaussian jitter

Variances above are variances, not standard deviations.  Generation is
bit-deterministic for a given spec: the component assignment is drawn from
the seeded stream first, then the coordinates, so the interleaving of draws
is fixed.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .errors import ConfigError

DATASET_KINDS = (
    "gauss1d-1cluster",
    "gauss1d-2cluster",
    "gauss2d-1cluster",
    "gauss2d-4cluster",
    "two-moons",
)

_DIMS = {
    "gauss1d-1cluster": 1,
    "gauss1d-2cluster": 1,
    "gauss2d-1cluster": 2,
    "gauss2d-4cluster": 2,
    "two-moons": 2,
}

# (means, per-component isotropic variance) for the Gaussian-mixture kinds.
_GAUSS_PARAMS = {
    "gauss1d-1cluster": (np.array([[0.0]]), 0.1),
    "gauss1d-2cluster": (np.array([[0.0], [0.5]]), 0.1),
    "gauss2d-1cluster": (np.array([[0.0, 0.0]]), 0.1),
    "gauss2d-4cluster": (
        np.array([[0.5, 0.5], [0.5, -0.5], [-0.5, 0.5], [-0.5, -0.5]]),
        0.01,
    ),
}

MOON_RADIUS = 1.0
MOON_OFFSET = 0.5


def dataset_dim(kind: str) -> int:
    if kind not in _DIMS:
        raise ConfigError(f"unknown dataset kind: {kind!r}")
    return _DIMS[kind]


@dataclasses.dataclass(frozen=True)
class DatasetSpec:
    """Recipe for one synthetic sample set.

    ``noise`` is the jitter standard deviation and only affects two-moons.
    """

    kind: str
    n: int
    seed: int
    noise: float = 0.05

    def __post_init__(self) -> None:
        dataset_dim(self.kind)
        if self.n < 1:
            raise ConfigError(f"dataset size must be >= 1, got {self.n}")
        if self.noise < 0:
            raise ConfigError(f"noise must be >= 0, got {self.noise}")

    @property
    def dim(self) -> int:
        return dataset_dim(self.kind)


@dataclasses.dataclass
class SampleSet:
    """A finite point cloud, with the parameters that produced it when known."""

    points: np.ndarray  # shape (n, dim)
    spec: DatasetSpec | None = None

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def to_csv(self, path: str) -> None:
        write_points_csv(self.points, path)

    @classmethod
    def from_csv(cls, path: str) -> "SampleSet":
        return cls(points=read_points_csv(path))


def generate(spec: DatasetSpec) -> SampleSet:
    """Draw ``spec.n`` i.i.d. points from the named mixture."""
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "two-moons":
        pts = _two_moons(rng, spec.n, spec.noise)
    else:
        means, var = _GAUSS_PARAMS[spec.kind]
        k, d = means.shape
        # Component labels first, then coordinates: fixed interleaving.
        comp = rng.integers(0, k, size=spec.n)
        pts = means[comp] + math.sqrt(var) * rng.standard_normal((spec.n, d))
    return SampleSet(points=pts, spec=spec)


def _two_moons(rng: np.random.Generator, n: int, noise: float) -> np.ndarray:
    comp = rng.integers(0, 2, size=n)
    theta = rng.uniform(0.0, math.pi, size=n)
    x = np.where(comp == 0, MOON_RADIUS * np.cos(theta),
                 MOON_RADIUS * (1.0 - np.cos(theta)))
    y = np.where(comp == 0, MOON_RADIUS * np.sin(theta),
                 MOON_OFFSET - MOON_RADIUS * np.sin(theta))
    pts = np.stack([x, y], axis=1)
    if noise > 0:
        pts = pts + noise * rng.standard_normal((n, 2))
    return pts


def perturb(s: SampleSet, eps: float, seed: int) -> SampleSet:
    """Add i.i.d. N(0, eps^2) noise to every coordinate of every point."""
    if eps < 0:
        raise ConfigError(f"perturbation scale must be >= 0, got {eps}")
    rng = np.random.default_rng(seed)
    pts = s.points + eps * rng.standard_normal(s.points.shape)
    return SampleSet(points=pts, spec=s.spec)


def write_points_csv(points: np.ndarray, path: str) -> None:
    d = points.shape[1]
    with open(path, "w", newline="\n") as f:
        f.write(",".join(f"x{j}" for j in range(d)) + "\n")
        for row in points:
            f.write(",".join(repr(float(v)) for v in row) + "\n")


def read_points_csv(path: str) -> np.ndarray:
    with open(path) as f:
        header = f.readline().strip().split(",")
        d = len(header)
        rows = [[float(v) for v in line.strip().split(",")] for line in f if line.strip()]
    pts = np.array(rows, dtype=np.float64).reshape(len(rows), d)
    return pts
