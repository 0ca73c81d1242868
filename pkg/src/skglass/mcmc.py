"""Glauber (heat-bath) dynamics targeting the Gibbs measure.

One sweep visits sites 1..N in order; at each visit the spin is redrawn from
its exact single-site conditional

    P(sigma_i = +1 | rest) = (1 + tanh(beta * l_i + h)) / 2,

with l_i the local field.  A cached vector of raw fields sum_j g_ij sigma_j
is updated in O(N) per accepted flip, so a sweep costs O(N^2) worst case and
O(N) per site visit.  Chains are a pure function of their seed; replicas use
seeds derived with distinct stream indices.

The single-site kernels satisfy detailed balance with respect to the Gibbs
measure; ``single_site_transition_matrix`` materializes them so tests can
verify that and stationarity exactly at tiny N.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from numba import njit

from .core_model import (
    Disorder,
    ModelParams,
    SpinConfig,
    _check_site,
    derive_seed,
    local_field,
)

N_BATCHES = 20  # batch-means groups for standard errors
_SWEEP_BLOCK = 2048  # sweeps of uniforms generated per kernel call


@dataclass(frozen=True)
class ChainConfig:
    """Sampler schedule: burn-in, thinning, retained samples, seed.

    ``burnin_sweeps=None`` means the conservative default of 10 * N sweeps.
    """

    n_samples: int
    burnin_sweeps: Optional[int] = None
    thinning: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be positive")
        if self.burnin_sweeps is not None and self.burnin_sweeps < 1:
            raise ValueError("burnin_sweeps must be positive (or None for default)")
        if self.thinning < 1:
            raise ValueError("thinning must be >= 1")


@dataclass(frozen=True, eq=False)
class ChainEstimate:
    """Magnetization estimates with batch-means standard errors.

    ``samples`` (when retained) is the (n_samples, N) int8 matrix of +-1
    spin rows, in sampling order.
    """

    magnetizations: np.ndarray
    standard_errors: np.ndarray
    samples: Optional[np.ndarray] = None


def heat_bath_probability(
    params: ModelParams, disorder: Disorder, config: SpinConfig, site: int
) -> float:
    """P(sigma_site = +1 | all other spins) = (1 + tanh(beta * l_i + h)) / 2."""
    x = params.beta * local_field(disorder, config, site) + params.h
    return 0.5 * (1.0 + math.tanh(x))


@njit(cache=True)
def _sweep_kernel(couplings, scale, h, spins, local, uniforms):  # pragma: no cover
    n_sweeps, n = uniforms.shape
    for sweep in range(n_sweeps):
        for site in range(n):
            p_plus = 0.5 * (1.0 + math.tanh(scale * local[site] + h))
            new = 1.0 if uniforms[sweep, site] < p_plus else -1.0
            if new != spins[site]:
                spins[site] = new
                delta = 2.0 * new
                for j in range(n):
                    local[j] += delta * couplings[j, site]


class _ChainState:
    """Mutable spins + cached fields driven by a seeded uniform stream."""

    def __init__(self, params: ModelParams, disorder: Disorder, seed: int):
        self.params = params
        self.disorder = disorder
        self.rng = np.random.Generator(np.random.PCG64(seed))
        n = params.n_spins
        self.spins = np.where(self.rng.random(n) < 0.5, -1.0, 1.0)
        self.local = disorder.couplings @ self.spins
        self.scale = params.beta / math.sqrt(n)

    def sweep(self, n_sweeps: int) -> None:
        n = self.params.n_spins
        done = 0
        while done < n_sweeps:
            block = min(_SWEEP_BLOCK, n_sweeps - done)
            uniforms = self.rng.random((block, n))
            _sweep_kernel(
                self.disorder.couplings, self.scale, self.params.h,
                self.spins, self.local, uniforms,
            )
            done += block


def run_chain(
    params: ModelParams,
    disorder: Disorder,
    chain: ChainConfig,
    keep_samples: bool = False,
) -> ChainEstimate:
    """Run one Glauber chain; deterministic for a fixed seed.

    Standard errors come from batch means over 20 equal batches, so at least
    20 retained samples are required.
    """
    if disorder.n_spins != params.n_spins:
        raise ValueError("params and disorder sizes disagree")
    if chain.n_samples < N_BATCHES:
        raise ValueError(
            f"need at least {N_BATCHES} samples for batch-means errors, "
            f"got {chain.n_samples}"
        )
    n = params.n_spins
    burnin = 10 * n if chain.burnin_sweeps is None else chain.burnin_sweeps
    state = _ChainState(params, disorder, chain.seed)
    state.sweep(burnin)
    samples = np.empty((chain.n_samples, n), dtype=np.int8)
    for s in range(chain.n_samples):
        state.sweep(chain.thinning)
        samples[s] = state.spins
    m_hat = samples.mean(axis=0)
    batch_size = chain.n_samples // N_BATCHES
    trimmed = samples[: N_BATCHES * batch_size].reshape(N_BATCHES, batch_size, n)
    batch_means = trimmed.mean(axis=1)
    se = batch_means.std(axis=0, ddof=1) / math.sqrt(N_BATCHES)
    return ChainEstimate(
        magnetizations=m_hat,
        standard_errors=se,
        samples=samples if keep_samples else None,
    )


def sample_replicas(
    params: ModelParams,
    disorder: Disorder,
    chain: ChainConfig,
    n_replicas: int,
) -> List[ChainEstimate]:
    """Independent chains on the same disorder, one per replica.

    Replica seeds are derived from the chain seed with distinct indices, so
    the streams never collide; samples are always retained (they are the
    point of replicas).
    """
    if n_replicas < 1:
        raise ValueError("n_replicas must be >= 1")
    out = []
    for idx in range(n_replicas):
        seed = derive_seed(chain.seed, "replica", idx)
        cfg = ChainConfig(
            n_samples=chain.n_samples,
            burnin_sweeps=chain.burnin_sweeps,
            thinning=chain.thinning,
            seed=seed,
        )
        out.append(run_chain(params, disorder, cfg, keep_samples=True))
    return out


def single_site_transition_matrix(
    params: ModelParams, disorder: Disorder, site: int
) -> np.ndarray:
    """Dense 2^N x 2^N heat-bath kernel for one site (1-based), for tiny N.

    Row = current packed configuration, column = next.  Each row has mass on
    the two configurations agreeing with it off ``site``.
    """
    n = params.n_spins
    _check_site(site, n)
    if n > 12:
        raise ValueError("dense transition matrices are for small N only")
    bit = 1 << (site - 1)
    size = 1 << n
    t = np.zeros((size, size))
    for code in range(size):
        config = SpinConfig(n, code | bit)  # spin at `site` fixed to +1
        p_plus = heat_bath_probability(params, disorder, config, site)
        t[code, code | bit] = p_plus
        t[code, code & ~bit] = 1.0 - p_plus
    return t


def sweep_transition_matrix(params: ModelParams, disorder: Disorder) -> np.ndarray:
    """Kernel of one full systematic sweep: product of the site kernels 1..N."""
    t = single_site_transition_matrix(params, disorder, 1)
    for site in range(2, params.n_spins + 1):
        t = t @ single_site_transition_matrix(params, disorder, site)
    return t
