"""Static objects of the Sherrington-Kirkpatrick (SK) model.

An SK system of N spins sigma in {-1,+1}^N with inverse temperature beta,
external field h and symmetric Gaussian couplings g_ij has energy

    -H(sigma) = (beta / sqrt(N)) * sum_{i<j} g_ij sigma_i sigma_j + h * sum_i sigma_i.

Removing one spin i produces an (N-1)-spin system at the reduced temperature
beta_minus = beta * sqrt((N-1)/N), and the two energies are tied together by

    -H_N(sigma) = -H_{N-1}(rho) + sigma_i * (beta * l_i + h),

where l_i = (1/sqrt(N)) * sum_{j != i} g_ij sigma_j is the local field at i
and rho is sigma with spin i dropped.

This module owns the parameter / disorder / configuration types, the field
and energy formulas, and the seed-derivation scheme that keeps every random
stream reproducible and mutually independent.

Conventions:
  * ``site`` arguments are 1-based (as in the physics literature); array data
    uses ordinary 0-based numpy indexing.
  * Spin configurations are packed into an integer bit vector; bit b set
    means spin 2*b - 1 = +1.
All types are immutable after construction and safe to share across workers.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri


def derive_seed(master_seed: int, stream_tag: str, index: int = 0) -> int:
    """Derive an independent 64-bit stream seed from a master seed.

    Pure mixing function of ``(master_seed, stream_tag, index)`` (BLAKE2b of
    their decimal/text encoding), so distinct tags or indices give
    statistically independent PRNG streams and the same triple always yields
    the same seed.
    """
    payload = f"{master_seed}:{stream_tag}:{index}".encode()
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


def standard_normals(seed: int, size) -> np.ndarray:
    """I.i.d. standard normals, reproducible as a pure function of ``seed``.

    Drawn by inverse-CDF transform of PCG64 uniforms: u = (k + 0.5) / 2**53
    with k a uniform 53-bit integer, so u lies strictly inside (0, 1) and
    ``ndtri`` never sees an endpoint.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    k = rng.integers(0, 1 << 53, size=size, dtype=np.int64)
    return ndtri((k + 0.5) / float(1 << 53))


@dataclass(frozen=True)
class ModelParams:
    """System size, inverse temperature and external field."""

    n_spins: int
    beta: float
    h: float

    def __post_init__(self):
        if self.n_spins < 1:
            raise ValueError(f"n_spins must be >= 1, got {self.n_spins}")
        if not (self.beta >= 0.0 and math.isfinite(self.beta)):
            raise ValueError(f"beta must be finite and >= 0, got {self.beta}")
        if not math.isfinite(self.h):
            raise ValueError(f"h must be finite, got {self.h}")


@dataclass(frozen=True, eq=False)
class Disorder:
    """Symmetric zero-diagonal matrix of Gaussian couplings g_ij."""

    couplings: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.couplings, dtype=np.float64)
        if g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise ValueError(f"couplings must be a square matrix, got shape {g.shape}")
        if not np.array_equal(g, g.T):
            raise ValueError("couplings must be exactly symmetric")
        if np.any(np.diagonal(g) != 0.0):
            raise ValueError("couplings must have zero diagonal")
        object.__setattr__(self, "couplings", g)
        g.setflags(write=False)

    @property
    def n_spins(self) -> int:
        return self.couplings.shape[0]


@dataclass(frozen=True)
class SpinConfig:
    """One configuration of N spins, packed as a bit vector.

    Bit b of ``bits`` set means spin b is +1, cleared means -1, so bit value
    b maps to the spin 2*b - 1.  The packing makes Gray-code walks over all
    configurations a single-bit toggle per step.
    """

    n_spins: int
    bits: int

    def __post_init__(self):
        if self.n_spins < 1:
            raise ValueError("n_spins must be >= 1")
        if not 0 <= self.bits < (1 << self.n_spins):
            raise ValueError(f"bits out of range for {self.n_spins} spins")

    @classmethod
    def from_spins(cls, spins) -> "SpinConfig":
        """Pack a +-1 sequence into a SpinConfig."""
        arr = np.asarray(spins)
        if arr.ndim != 1 or not np.all(np.abs(arr) == 1):
            raise ValueError("spins must be a 1-D sequence of +-1 values")
        bits = 0
        for b, s in enumerate(arr):
            if s > 0:
                bits |= 1 << b
        return cls(n_spins=arr.size, bits=bits)

    def to_spins(self) -> np.ndarray:
        """Unpack into an int8 array of +-1 values."""
        out = np.empty(self.n_spins, dtype=np.int8)
        for b in range(self.n_spins):
            out[b] = 1 if (self.bits >> b) & 1 else -1
        return out

    def spin(self, site: int) -> int:
        """Spin value at a 1-based site."""
        _check_site(site, self.n_spins)
        return 1 if (self.bits >> (site - 1)) & 1 else -1

    def flipped(self, site: int) -> "SpinConfig":
        """Copy with the spin at a 1-based site reversed."""
        _check_site(site, self.n_spins)
        return SpinConfig(self.n_spins, self.bits ^ (1 << (site - 1)))


@dataclass(frozen=True, eq=False)
class AuxGaussians:
    """Auxiliary i.i.d. standard Gaussians g_1..g_N for the cavity field.

    Independent of the coupling disorder by construction: sample them from a
    seed derived with a different stream tag.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size < 1:
            raise ValueError("values must be a non-empty 1-D array")
        object.__setattr__(self, "values", v)
        v.setflags(write=False)

    @property
    def n_spins(self) -> int:
        return self.values.size


@dataclass(frozen=True, eq=False)
class ReducedSystem:
    """(N-1)-spin system obtained by removing one spin.

    ``beta_minus = beta * sqrt((N-1)/N)`` and ``sub_disorder`` is the original
    coupling matrix with the removed site's row and column deleted.  Original
    1-based site j maps to j in the reduced system for j < site and to j - 1
    for j > site.
    """

    site: int
    beta_minus: float
    sub_disorder: Disorder

    def reduced_index(self, original_site: int) -> int:
        """Map an original 1-based site (!= removed site) to the reduced one."""
        if original_site == self.site:
            raise ValueError("the removed site has no reduced index")
        return original_site if original_site < self.site else original_site - 1


def _check_site(site: int, n_spins: int) -> None:
    if not 1 <= site <= n_spins:
        raise ValueError(f"site must be in 1..{n_spins}, got {site}")


def sample_disorder(params: ModelParams, seed: int) -> Disorder:
    """Sample a coupling matrix: g_ij i.i.d. standard normal for i < j,
    mirrored below the diagonal, zero on it.  Deterministic in (N, seed)."""
    n = params.n_spins
    g = np.zeros((n, n))
    iu = np.triu_indices(n, k=1)
    g[iu] = standard_normals(seed, iu[0].size)
    g = g + g.T
    return Disorder(couplings=g)


def sample_aux_gaussians(params: ModelParams, seed: int) -> AuxGaussians:
    """Sample the cavity Gaussians g_1..g_N.  Use a seed derived with a
    stream tag distinct from the disorder's so the two are independent."""
    return AuxGaussians(values=standard_normals(seed, params.n_spins))


def energy(params: ModelParams, disorder: Disorder, config: SpinConfig) -> float:
    """Energy -H(sigma) = (beta/sqrt(N)) sum_{i<j} g_ij s_i s_j + h sum_i s_i."""
    n = params.n_spins
    if disorder.n_spins != n or config.n_spins != n:
        raise ValueError(
            f"dimension mismatch: params N={n}, disorder N={disorder.n_spins}, "
            f"config N={config.n_spins}"
        )
    s = config.to_spins().astype(np.float64)
    coupling = 0.5 * (s @ (disorder.couplings @ s)) / math.sqrt(n)
    return params.beta * coupling + params.h * float(s.sum())


def local_field(disorder: Disorder, config: SpinConfig, site: int) -> float:
    """Local field l_i = (1/sqrt(N)) sum_{j != i} g_ij sigma_j at a 1-based site."""
    n = disorder.n_spins
    if config.n_spins != n:
        raise ValueError("disorder and config sizes disagree")
    _check_site(site, n)
    s = config.to_spins().astype(np.float64)
    # zero diagonal makes the full row product skip j == i automatically
    return float(disorder.couplings[site - 1] @ s) / math.sqrt(n)


def cavity_field(config: SpinConfig, aux: AuxGaussians) -> float:
    """Cavity field l = (1/sqrt(N)) sum_j g_j sigma_j with auxiliary Gaussians."""
    if aux.n_spins != config.n_spins:
        raise ValueError("aux and config sizes disagree")
    s = config.to_spins().astype(np.float64)
    return float(aux.values @ s) / math.sqrt(config.n_spins)


def reduce(params: ModelParams, disorder: Disorder, site: int) -> ReducedSystem:
    """Remove one spin: reduced temperature beta * sqrt((N-1)/N) and the
    coupling matrix without the removed site's row/column.

    The index map is j -> j for j < site and j -> j - 1 for j > site
    (1-based sites on both sides).
    """
    n = params.n_spins
    if disorder.n_spins != n:
        raise ValueError("params and disorder sizes disagree")
    if n < 2:
        raise ValueError("cannot remove a spin from a single-spin system")
    _check_site(site, n)
    keep = np.delete(np.arange(n), site - 1)
    sub = disorder.couplings[np.ix_(keep, keep)].copy()
    beta_minus = params.beta * math.sqrt((n - 1) / n)
    return ReducedSystem(site=site, beta_minus=beta_minus, sub_disorder=Disorder(sub))


def drop_site(config: SpinConfig, site: int) -> SpinConfig:
    """The (N-1)-spin configuration rho: ``config`` with a 1-based site removed."""
    _check_site(site, config.n_spins)
    if config.n_spins < 2:
        raise ValueError("cannot drop the only spin")
    return SpinConfig.from_spins(np.delete(config.to_spins(), site - 1))
