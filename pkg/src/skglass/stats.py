"""Shared numerical statistics: Gauss-Hermite rules, bootstrap moments, KS.

The quadrature convention is the probabilists' one: a rule of order n has
nodes z_i and positive weights w_i with sum(w) = 1 such that

    E[f(Z)] = integral f(z) phi_{0,1}(z) dz  ~=  sum_i w_i f(z_i)

for Z standard normal, exact for polynomials of degree <= 2n - 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

if TYPE_CHECKING:  # pragma: no cover
    from .gibbs_exact import DiscreteFieldLaw

MAX_QUAD_ORDER = 200


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Nodes/weights for expectations against the standard normal.

    Nodes come in exact +- pairs (odd orders include 0.0) and the matching
    weights are bitwise equal, so symmetric integrands cancel cleanly.
    """

    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        z, w = np.asarray(self.nodes), np.asarray(self.weights)
        if z.ndim != 1 or z.shape != w.shape:
            raise ValueError("nodes and weights must be matching 1-D arrays")
        if np.any(w <= 0):
            raise ValueError("weights must be positive")
        if abs(w.sum() - 1.0) > 1e-14:
            raise ValueError("weights must sum to 1 within 1e-14")
        z.setflags(write=False)
        w.setflags(write=False)

    @property
    def order(self) -> int:
        return self.nodes.size

    def expect(self, f: Callable[[np.ndarray], np.ndarray]) -> float:
        """E[f(Z)] for Z standard normal."""
        return float(self.weights @ np.asarray(f(self.nodes), dtype=np.float64))


def gauss_hermite(order: int) -> QuadratureRule:
    """Gauss-Hermite rule of the given order, normalized to the standard normal.

    Built from the probabilists' Hermite nodes (weight exp(-z^2/2)), weights
    divided by sqrt(2*pi).  Node/weight arrays are symmetrized so the +- node
    pairs are exactly opposite and their weights exactly equal.
    """
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    if order > MAX_QUAD_ORDER:
        raise ValueError(
            f"order {order} > {MAX_QUAD_ORDER}: the Hermite eigenproblem is "
            "too ill-conditioned beyond that"
        )
    z, w = hermegauss(order)
    w = w / math.sqrt(2.0 * math.pi)
    # enforce exact symmetry: z antisymmetric, w symmetric under reversal
    z = 0.5 * (z - z[::-1])
    w = 0.5 * (w + w[::-1])
    w = w / w.sum()
    return QuadratureRule(nodes=z, weights=w)


@dataclass(frozen=True)
class MomentEstimate:
    """Empirical moment with percentile-bootstrap uncertainty."""

    estimate: float
    ci_low: float
    ci_high: float
    se: float
    n_samples: int


def empirical_moment(
    samples,
    order_2k: int,
    n_boot: int = 1000,
    seed: int = 0,
    ci_level: float = 0.95,
) -> MomentEstimate:
    """Mean of x**order_2k with a percentile bootstrap CI.

    ``se`` is the standard deviation of the bootstrap replicates.  The whole
    computation is a pure function of (samples, order_2k, n_boot, seed).
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1 or x.size < 20:
        raise ValueError(f"need >= 20 samples in a 1-D array, got shape {x.shape}")
    if n_boot < 200:
        raise ValueError(f"need >= 200 bootstrap resamples, got {n_boot}")
    powered = x**order_2k
    estimate = float(powered.mean())
    rng = np.random.Generator(np.random.PCG64(seed))
    idx = rng.integers(0, x.size, size=(n_boot, x.size))
    replicates = powered[idx].mean(axis=1)
    alpha = 1.0 - ci_level
    lo, hi = np.quantile(replicates, [alpha / 2.0, 1.0 - alpha / 2.0])
    return MomentEstimate(
        estimate=estimate,
        ci_low=float(lo),
        ci_high=float(hi),
        se=float(replicates.std(ddof=1)),
        n_samples=x.size,
    )


def bootstrap_mean(
    samples, n_boot: int = 1000, seed: int = 0, ci_level: float = 0.95
) -> MomentEstimate:
    """Plain mean with percentile-bootstrap CI (order_2k = 1 convenience)."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1 or x.size < 20:
        raise ValueError(f"need >= 20 samples in a 1-D array, got shape {x.shape}")
    if n_boot < 200:
        raise ValueError(f"need >= 200 bootstrap resamples, got {n_boot}")
    rng = np.random.Generator(np.random.PCG64(seed))
    idx = rng.integers(0, x.size, size=(n_boot, x.size))
    replicates = x[idx].mean(axis=1)
    alpha = 1.0 - ci_level
    lo, hi = np.quantile(replicates, [alpha / 2.0, 1.0 - alpha / 2.0])
    return MomentEstimate(
        estimate=float(x.mean()),
        ci_low=float(lo),
        ci_high=float(hi),
        se=float(replicates.std(ddof=1)),
        n_samples=x.size,
    )


def ks_distance(law: "DiscreteFieldLaw", cdf: Callable[[np.ndarray], np.ndarray]) -> float:
    """Kolmogorov-Smirnov distance between a discrete law and a continuous CDF.

    Two-sided sup over the atoms x of max(|F(x-) - cdf(x)|, |F(x) - cdf(x)|)
    with F the discrete law's CDF; ``cdf`` must be nondecreasing over the
    atom range.
    """
    if law.values.size == 0:
        raise ValueError("empty law")
    f_right = np.cumsum(law.weights)
    f_left = f_right - law.weights
    c = np.asarray(cdf(law.values), dtype=np.float64)
    return float(np.maximum(np.abs(f_right - c), np.abs(f_left - c)).max())
