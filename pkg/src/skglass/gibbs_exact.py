"""Exact Gibbs-measure quantities by exhaustive enumeration at small N.

The Gibbs measure on {-1,+1}^N is G(sigma) = exp(-H(sigma)) / Z.  For
N <= 24 every quantity is computed exactly: the 2^N energies come from a
Gray-code walk that flips one spin per step and maintains the vector of raw
local fields f_j = sum_k g_jk sigma_k, so each step costs O(N) instead of
O(N^2).  Energies are indexed by the packed configuration integer (bit b set
means spin b is +1), which lets vectorized passes regenerate configuration
blocks with bit arithmetic.

Quenched averages over replicas reduce to contractions of the exact
magnetizations m_j = <sigma_j> and pair correlations C_jk = <sigma_j sigma_k>:
with sdot_j = sigma_j - m_j and two independent replicas,

    <(R_12 - q)^2>  = (1/N^2) sum_jk C_jk^2 - (2q/N) sum_j m_j^2 + q^2,
    <T_1^2>         = (1/N^2) sum_jk (C_jk - m_j m_k) m_j m_k,
    <T_{1,2}^2>     = (1/N^2) sum_jk (C_jk - m_j m_k)^2,

where R_12 is the replica overlap, T_i = (1/N) sum_j sdot_j^i m_j and
T_{i,j} = (1/N) sum_j sdot_j^i sdot_j^j.  The one-replica statistic
T_{1,1} = (1/N) sum_j sdot_j^2 - (1-q) needs fourth spin moments, but
sigma_j^2 = 1 collapses them to C and m as well:
T_{1,1} = c0 - (2/N) sum_j sigma_j m_j with c0 = q + (1/N) sum_j m_j^2, so

    <T_{1,1}^2> = c0^2 - (4 c0/N) sum_j m_j^2 + (4/N^2) m^T C m.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
from numba import njit
from scipy.special import logsumexp

from .core_model import Disorder, ModelParams

ENUMERATION_CAP = 24
_CHUNK = 1 << 16
_REFRESH_INTERVAL = 1 << 15  # recompute energy/fields from scratch this often


class EnumerationCapacityError(ValueError):
    """Raised when N is too large to enumerate; use the mcmc sampler instead."""


def _check_capacity(n_spins: int, cap: int = ENUMERATION_CAP) -> None:
    if n_spins > cap:
        raise EnumerationCapacityError(
            f"N = {n_spins} exceeds the enumeration cap {cap}; "
            "use skglass.mcmc.run_chain for larger systems"
        )


@dataclass(frozen=True, eq=False)
class GibbsSummary:
    """Exact log partition function, magnetizations and pair correlations."""

    log_z: float
    magnetizations: np.ndarray
    pair_correlations: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class DiscreteFieldLaw:
    """Exact law of a scalar observable under the Gibbs measure.

    ``values`` strictly increasing (equal atoms merged), ``weights`` positive
    and summing to 1.
    """

    values: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        v, w = np.asarray(self.values), np.asarray(self.weights)
        if v.ndim != 1 or v.shape != w.shape or v.size == 0:
            raise ValueError("values and weights must be matching non-empty 1-D arrays")
        if np.any(np.diff(v) <= 0):
            raise ValueError("values must be strictly increasing")
        if np.any(w <= 0):
            raise ValueError("weights must be positive")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1 within 1e-12")
        v.setflags(write=False)
        w.setflags(write=False)

    @classmethod
    def from_samples(cls, values, weights) -> "DiscreteFieldLaw":
        """Sort, merge equal values, drop zero-weight atoms."""
        v = np.asarray(values, dtype=np.float64)
        w = np.asarray(weights, dtype=np.float64)
        order = np.argsort(v, kind="stable")
        v, w = v[order], w[order]
        new_group = np.empty(v.size, dtype=bool)
        new_group[0] = True
        np.not_equal(v[1:], v[:-1], out=new_group[1:])
        group = np.cumsum(new_group) - 1
        merged_w = np.bincount(group, weights=w)
        merged_v = v[new_group]
        keep = merged_w > 0
        return cls(values=merged_v[keep], weights=merged_w[keep])

    def mean(self) -> float:
        return float(self.values @ self.weights)

    def expectation(self, f: Callable[[np.ndarray], np.ndarray]) -> float:
        return float(np.asarray(f(self.values), dtype=np.float64) @ self.weights)


@dataclass(frozen=True)
class TStatisticMoments:
    """Exact quenched second moments of the replica statistics."""

    m_ti: float
    m_tii: float
    m_tij: float

    def __post_init__(self):
        for name in ("m_ti", "m_tii", "m_tij"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@njit(cache=True)
def _gray_energy_table(couplings, coupling_scale, h):  # pragma: no cover - jitted
    n = couplings.shape[0]
    n_conf = 1 << n
    energies = np.empty(n_conf, dtype=np.float64)
    spins = np.full(n, -1.0)
    local = np.zeros(n)
    for j in range(n):
        acc = 0.0
        for k in range(n):
            acc += couplings[j, k] * spins[k]
        local[j] = acc
    e = 0.0
    for j in range(n):
        e += 0.5 * coupling_scale * spins[j] * local[j] + h * spins[j]
    energies[0] = e
    code = 0
    for step in range(1, n_conf):
        if step & (_REFRESH_INTERVAL - 1) == 0:
            # periodic exact refresh bounds the incremental rounding drift
            for j in range(n):
                acc = 0.0
                for k in range(n):
                    acc += couplings[j, k] * spins[k]
                local[j] = acc
            e = 0.0
            for j in range(n):
                e += 0.5 * coupling_scale * spins[j] * local[j] + h * spins[j]
        b = 0
        kk = step
        while kk & 1 == 0:
            kk >>= 1
            b += 1
        code ^= 1 << b
        old = spins[b]
        e -= 2.0 * old * (coupling_scale * local[b] + h)
        new = -old
        spins[b] = new
        two_new = 2.0 * new
        for j in range(n):
            local[j] += two_new * couplings[j, b]
        energies[code] = e
    return energies


def energy_table(params: ModelParams, disorder: Disorder) -> np.ndarray:
    """Energies -H(sigma) of all 2^N configurations, indexed by packed bits."""
    n = params.n_spins
    if disorder.n_spins != n:
        raise ValueError("params and disorder sizes disagree")
    _check_capacity(n)
    scale = params.beta / math.sqrt(n)
    return _gray_energy_table(disorder.couplings, scale, params.h)


def gibbs_weights(params: ModelParams, disorder: Disorder) -> Tuple[float, np.ndarray]:
    """(log Z, normalized Gibbs weights over all 2^N configurations)."""
    e = energy_table(params, disorder)
    log_z = float(logsumexp(e))
    return log_z, np.exp(e - log_z)


def config_batch(n_spins: int, start: int, stop: int) -> np.ndarray:
    """Spin matrix (stop-start, N) of +-1 int8 for packed configs start..stop-1."""
    idx = np.arange(start, stop, dtype=np.int64)
    bits = (idx[:, None] >> np.arange(n_spins, dtype=np.int64)[None, :]) & 1
    return (2 * bits - 1).astype(np.int8)


def linear_field_table(coefficients: np.ndarray) -> np.ndarray:
    """Values of sum_j a_j sigma_j for all 2^N configurations (packed order).

    Built by doubling: appending spin j maps the table v to [v, v + 2 a_j].
    """
    a = np.asarray(coefficients, dtype=np.float64)
    _check_capacity(a.size)
    table = np.array([-a.sum()])
    for aj in a:
        table = np.concatenate([table, table + 2.0 * aj])
    return table


def magnetizations_from_weights(weights: np.ndarray, n_spins: int) -> np.ndarray:
    m = np.empty(n_spins)
    for j in range(n_spins):
        by_bit = weights.reshape(1 << (n_spins - 1 - j), 2, 1 << j)
        m[j] = by_bit[:, 1, :].sum() - by_bit[:, 0, :].sum()
    return m


def enumerate_gibbs(
    params: ModelParams, disorder: Disorder, include_pairs: bool = True
) -> GibbsSummary:
    """Exact log Z, m_j = <sigma_j> and (optionally) C_jk = <sigma_j sigma_k>.

    The diagonal of C is set to exactly 1 (sigma_j^2 = 1) and the matrix is
    symmetrized, so the type's invariants hold bitwise.
    """
    n = params.n_spins
    log_z, w = gibbs_weights(params, disorder)
    m = magnetizations_from_weights(w, n)
    pairs = None
    if include_pairs:
        pairs = np.zeros((n, n))
        for start in range(0, 1 << n, _CHUNK):
            stop = min(start + _CHUNK, 1 << n)
            s = config_batch(n, start, stop).astype(np.float64)
            pairs += (s * w[start:stop, None]).T @ s
        pairs = 0.5 * (pairs + pairs.T)
        np.fill_diagonal(pairs, 1.0)
    return GibbsSummary(log_z=log_z, magnetizations=m, pair_correlations=pairs)


def quenched_average(
    params: ModelParams,
    disorder: Disorder,
    observable: Callable[[np.ndarray], np.ndarray],
) -> float:
    """Exact <observable> = sum_sigma observable(sigma) G(sigma).

    ``observable`` is evaluated on configuration blocks: it receives a
    (B, N) int8 matrix of +-1 spins and must return B values.
    """
    n = params.n_spins
    _, w = gibbs_weights(params, disorder)
    acc = 0.0
    for start in range(0, 1 << n, _CHUNK):
        stop = min(start + _CHUNK, 1 << n)
        vals = np.asarray(observable(config_batch(n, start, stop)), dtype=np.float64)
        acc += float(vals @ w[start:stop])
    return acc


def field_law(
    params: ModelParams,
    disorder: Disorder,
    field: Callable[[np.ndarray], np.ndarray],
) -> DiscreteFieldLaw:
    """Exact law of a scalar field under the Gibbs measure.

    ``field`` follows the same block contract as ``quenched_average``.
    """
    n = params.n_spins
    _, w = gibbs_weights(params, disorder)
    values = np.empty(1 << n)
    for start in range(0, 1 << n, _CHUNK):
        stop = min(start + _CHUNK, 1 << n)
        values[start:stop] = np.asarray(
            field(config_batch(n, start, stop)), dtype=np.float64
        )
    return DiscreteFieldLaw.from_samples(values, w)


def replica_second_moments(
    params: ModelParams, disorder: Disorder, q: float
) -> Tuple[float, TStatisticMoments]:
    """Exact <(R_12 - q)^2> and second moments of T_1, T_{1,1}, T_{1,2}.

    ``q`` should be the solved fixed point for (beta, h); the formulas are
    the marginal contractions quoted in the module docstring.
    """
    if not 0.0 <= q < 1.0:
        raise ValueError(f"q must be in [0, 1), got {q}")
    n = params.n_spins
    summary = enumerate_gibbs(params, disorder, include_pairs=True)
    m = summary.magnetizations
    c = summary.pair_correlations
    m2_sum = float(m @ m)
    overlap_m2 = float((c**2).sum()) / n**2 - (2.0 * q / n) * m2_sum + q * q
    centered = c - np.outer(m, m)
    m_ti = float((centered * np.outer(m, m)).sum()) / n**2
    m_tij = float((centered**2).sum()) / n**2
    c0 = q + m2_sum / n
    m_tii = c0 * c0 - (4.0 * c0 / n) * m2_sum + (4.0 / n**2) * float(m @ (c @ m))
    # clip tiny negative rounding residue on exactly-zero cases
    tiny = 1e-15 * max(1.0, abs(c0))
    stats = TStatisticMoments(
        m_ti=max(m_ti, 0.0) if m_ti > -tiny else m_ti,
        m_tii=max(m_tii, 0.0) if m_tii > -tiny else m_tii,
        m_tij=max(m_tij, 0.0) if m_tij > -tiny else m_tij,
    )
    return overlap_m2, stats
