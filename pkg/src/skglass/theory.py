"""Closed-form and quadrature evaluation of the high-temperature limit laws.

Everything the asymptotic theory predicts for beta < 1/2 lives here:

  * the fixed point q = E tanh^2(beta * z * sqrt(q) + h), z standard normal;
  * Gaussian density/CDF helpers and E[U(X)] for X ~ N(mean, variance);
  * the two-Gaussian mixture law predicted for the local field at site i,

        p_i * phi_{gamma_i + beta(1-q), 1-q} + (1-p_i) * phi_{gamma_i - beta(1-q), 1-q},

    with gamma_i = (1/sqrt(N)) sum_{j != i} g_ij m_j - beta (1-q) m_i and
    p_i = e^{beta gamma_i + h} / (e^{beta gamma_i + h} + e^{-beta gamma_i - h});
  * the TAP right-hand side tanh(beta * gamma_i + h);
  * the smoothed ratio

        E_xi[U(xi + r) cosh(beta (xi + r) + h)]
        ---------------------------------------- ,   xi ~ N(0, 1 - q),
        exp(beta^2 (1-q) / 2) cosh(beta r + h)

    which equals the mixture expectation with gamma := r (complete the
    square in the numerator's Gaussian integral to see it).

Expectations are Gauss-Hermite quadratures of default order 40; the
integrands in scope are entire or analytic in a wide strip, so order 40 is
already converged far below 1e-12.  Polynomial test functions integrate
against Gaussians in closed form instead (exact Gaussian moments).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.special import expit, ndtr

from .core_model import Disorder, ModelParams, _check_site
from .stats import gauss_hermite

MAX_BETA = 0.5  # the fixed point is guaranteed unique below this


class FixedPointError(RuntimeError):
    """Fixed-point iteration failed to converge; carries the last iterate."""

    def __init__(self, message: str, last_iterate: float):
        super().__init__(message)
        self.last_iterate = last_iterate


def log_cosh(x) -> np.ndarray:
    """log(cosh(x)), overflow-safe for any |x|."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    return x + np.log1p(np.exp(-2.0 * x)) - math.log(2.0)


# ---------------------------------------------------------------------------
# test functions: smooth, all derivatives of sub-Gaussian-beating growth
# ---------------------------------------------------------------------------


class TestFunction:
    """A smooth scalar test function with first and second derivatives.

    Implementations evaluate vectorized over numpy arrays.  ``to_dict`` /
    ``from_dict`` give a JSON-friendly tagged encoding for config files.
    """

    kind: str = ""

    def value(self, x):
        raise NotImplementedError

    def d1(self, x):
        raise NotImplementedError

    def d2(self, x):
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    @staticmethod
    def from_dict(spec: dict) -> "TestFunction":
        kinds = {
            "polynomial": lambda d: Polynomial(tuple(d["coefficients"])),
            "cosine": lambda d: Cosine(d.get("frequency", 1.0)),
            "sine": lambda d: Sine(d.get("frequency", 1.0)),
            "exp_linear": lambda d: ExpLinear(d["rate"]),
            "tanh_affine": lambda d: TanhAffine(d["a"], d["b"]),
        }
        kind = spec.get("kind")
        if kind not in kinds:
            raise ValueError(f"unknown test function kind: {kind!r}")
        return kinds[kind](spec)


@dataclass(frozen=True)
class Polynomial(TestFunction):
    coefficients: Tuple[float, ...]
    kind = "polynomial"

    def value(self, x):
        return np.polynomial.polynomial.polyval(x, self.coefficients)

    def d1(self, x):
        der = np.polynomial.polynomial.polyder(self.coefficients)
        return np.polynomial.polynomial.polyval(x, der)

    def d2(self, x):
        der2 = np.polynomial.polynomial.polyder(self.coefficients, m=2)
        return np.polynomial.polynomial.polyval(x, der2)

    def to_dict(self):
        return {"kind": self.kind, "coefficients": list(self.coefficients)}


@dataclass(frozen=True)
class Cosine(TestFunction):
    frequency: float = 1.0
    kind = "cosine"

    def value(self, x):
        return np.cos(self.frequency * np.asarray(x, dtype=np.float64))

    def d1(self, x):
        return -self.frequency * np.sin(self.frequency * np.asarray(x, dtype=np.float64))

    def d2(self, x):
        return -self.frequency**2 * self.value(x)

    def to_dict(self):
        return {"kind": self.kind, "frequency": self.frequency}


@dataclass(frozen=True)
class Sine(TestFunction):
    frequency: float = 1.0
    kind = "sine"

    def value(self, x):
        return np.sin(self.frequency * np.asarray(x, dtype=np.float64))

    def d1(self, x):
        return self.frequency * np.cos(self.frequency * np.asarray(x, dtype=np.float64))

    def d2(self, x):
        return -self.frequency**2 * self.value(x)

    def to_dict(self):
        return {"kind": self.kind, "frequency": self.frequency}


@dataclass(frozen=True)
class ExpLinear(TestFunction):
    """exp(rate * x) with |rate| <= 1 to keep moments comfortably bounded."""

    rate: float
    kind = "exp_linear"

    def __post_init__(self):
        if abs(self.rate) > 1.0:
            raise ValueError("|rate| must be <= 1")

    def value(self, x):
        return np.exp(self.rate * np.asarray(x, dtype=np.float64))

    def d1(self, x):
        return self.rate * self.value(x)

    def d2(self, x):
        return self.rate**2 * self.value(x)

    def to_dict(self):
        return {"kind": self.kind, "rate": self.rate}


@dataclass(frozen=True)
class TanhAffine(TestFunction):
    a: float
    b: float
    kind = "tanh_affine"

    def value(self, x):
        return np.tanh(self.a * np.asarray(x, dtype=np.float64) + self.b)

    def d1(self, x):
        t = self.value(x)
        return self.a * (1.0 - t * t)

    def d2(self, x):
        t = self.value(x)
        return -2.0 * self.a**2 * t * (1.0 - t * t)

    def to_dict(self):
        return {"kind": self.kind, "a": self.a, "b": self.b}


# ---------------------------------------------------------------------------
# fixed point q(beta, h)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TheoryConstants:
    """Solved fixed point q for (beta, h) with its convergence defect."""

    q: float
    beta: float
    h: float
    residual: float


def solve_q(
    beta: float,
    h: float,
    tol: float = 1e-13,
    max_iter: int = 200,
    quad_order: int = 40,
) -> TheoryConstants:
    """Solve q = E tanh^2(beta * z * sqrt(q) + h) by fixed-point iteration.

    The map is a contraction for beta < 1/2, so plain iteration from
    q0 = tanh(h)^2 (exact at beta = 0) converges linearly; iteration stops
    when successive iterates differ by less than ``tol`` and the reported
    residual is |F(q) - q| at the returned q.
    """
    if not 0.0 <= beta < MAX_BETA:
        raise ValueError(
            f"beta must be in [0, {MAX_BETA}) for a unique fixed point, got {beta}"
        )
    if tol <= 0:
        raise ValueError("tol must be > 0")
    rule = gauss_hermite(quad_order)
    z, w = rule.nodes, rule.weights

    def step(q: float) -> float:
        t = np.tanh(beta * z * math.sqrt(q) + h)
        return float(w @ (t * t))

    q = math.tanh(h) ** 2
    for _ in range(max_iter):
        q_next = step(q)
        done = abs(q_next - q) < tol
        q = q_next
        if done:
            return TheoryConstants(q=q, beta=beta, h=h, residual=abs(step(q) - q))
    raise FixedPointError(
        f"no convergence within {max_iter} iterations (last iterate {q})", q
    )


# ---------------------------------------------------------------------------
# Gaussian helpers
# ---------------------------------------------------------------------------


def gaussian_pdf(x, mean: float, variance: float):
    if variance <= 0:
        raise ValueError("variance must be > 0")
    x = np.asarray(x, dtype=np.float64)
    return np.exp(-((x - mean) ** 2) / (2.0 * variance)) / math.sqrt(
        2.0 * math.pi * variance
    )


def gaussian_cdf(x, mean: float, variance: float):
    """Gaussian CDF via scipy's erf-based ``ndtr`` (machine-precision)."""
    if variance <= 0:
        raise ValueError("variance must be > 0")
    x = np.asarray(x, dtype=np.float64)
    return ndtr((x - mean) / math.sqrt(variance))


def _gaussian_polynomial_expectation(
    coefficients: Tuple[float, ...], mean: float, std: float
) -> float:
    # E[(mean + std Z)^k] expanded with E Z^j = (j-1)!! for even j
    total = 0.0
    for k, c in enumerate(coefficients):
        if c == 0.0:
            continue
        term = 0.0
        for j in range(0, k + 1, 2):
            term += (
                math.comb(k, j)
                * mean ** (k - j)
                * std**j
                * _double_factorial(j - 1)
            )
        total += c * term
    return total


def _double_factorial(n: int) -> int:
    out = 1
    while n > 1:
        out *= n
        n -= 2
    return out


def gaussian_expectation(
    U: TestFunction, mean: float, variance: float, quad_order: int = 40
) -> float:
    """E[U(X)] for X ~ N(mean, variance).

    Polynomials use exact Gaussian moments; everything else goes through the
    Gauss-Hermite rule (exact for polynomials anyway, so the two paths agree).
    """
    if variance <= 0:
        raise ValueError("variance must be > 0")
    if quad_order < 2:
        raise ValueError("quad_order must be >= 2")
    if isinstance(U, Polynomial):
        return _gaussian_polynomial_expectation(U.coefficients, mean, math.sqrt(variance))
    rule = gauss_hermite(quad_order)
    x = mean + math.sqrt(variance) * rule.nodes
    return float(rule.weights @ np.asarray(U.value(x), dtype=np.float64))


# ---------------------------------------------------------------------------
# local-field mixture law
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MixturePrediction:
    """Parameters (gamma, p, q, beta, h) of the predicted two-Gaussian law.

    Components N(gamma + beta(1-q), 1-q) and N(gamma - beta(1-q), 1-q) with
    weights p and 1-p; p must equal the logistic value
    e^{beta gamma + h} / (e^{beta gamma + h} + e^{-beta gamma - h}).
    """

    gamma: float
    p: float
    q: float
    beta: float
    h: float

    def __post_init__(self):
        if not 0.0 <= self.q < 1.0:
            raise ValueError(f"q must be in [0, 1), got {self.q}")
        if not 0.0 < self.p < 1.0:
            raise ValueError(f"p must be in (0, 1), got {self.p}")
        expected_p = p_of_gamma(self.gamma, self.beta, self.h)
        if abs(self.p - expected_p) > 1e-12:
            raise ValueError(
                f"inconsistent mixture weight: p={self.p} but gamma/beta/h give {expected_p}"
            )

    @property
    def variance(self) -> float:
        return 1.0 - self.q

    @property
    def means(self) -> Tuple[float, float]:
        shift = self.beta * (1.0 - self.q)
        return self.gamma + shift, self.gamma - shift

    @property
    def mean(self) -> float:
        """First moment p*mu1 + (1-p)*mu2 = gamma + (2p-1) beta (1-q)."""
        return self.gamma + (2.0 * self.p - 1.0) * self.beta * (1.0 - self.q)


def p_of_gamma(gamma: float, beta: float, h: float) -> float:
    """Mixture weight p = e^{beta*gamma+h} / (e^{beta*gamma+h} + e^{-beta*gamma-h})."""
    return float(expit(2.0 * (beta * gamma + h)))


def mixture_prediction(gamma: float, beta: float, h: float, q: float) -> MixturePrediction:
    """Build a consistent MixturePrediction from (gamma, beta, h, q)."""
    return MixturePrediction(gamma=gamma, p=p_of_gamma(gamma, beta, h), q=q, beta=beta, h=h)


def gamma_of_site(
    params: ModelParams,
    disorder: Disorder,
    magnetizations: np.ndarray,
    q: float,
    site: int,
) -> float:
    """gamma_i = (1/sqrt(N)) sum_{j != i} g_ij m_j - beta (1-q) m_i (1-based site)."""
    n = params.n_spins
    m = np.asarray(magnetizations, dtype=np.float64)
    if m.shape != (n,):
        raise ValueError("magnetizations must have length N")
    if not 0.0 <= q < 1.0:
        raise ValueError(f"q must be in [0, 1), got {q}")
    _check_site(site, n)
    i = site - 1
    field_part = float(disorder.couplings[i] @ m) / math.sqrt(n)
    return field_part - params.beta * (1.0 - q) * float(m[i])


def mixture_density(x, mp: MixturePrediction):
    mu1, mu2 = mp.means
    return mp.p * gaussian_pdf(x, mu1, mp.variance) + (1.0 - mp.p) * gaussian_pdf(
        x, mu2, mp.variance
    )


def mixture_cdf(x, mp: MixturePrediction):
    mu1, mu2 = mp.means
    return mp.p * gaussian_cdf(x, mu1, mp.variance) + (1.0 - mp.p) * gaussian_cdf(
        x, mu2, mp.variance
    )


def mixture_expectation(U: TestFunction, mp: MixturePrediction, quad_order: int = 40) -> float:
    """integral U d(mixture): per-component Gaussian expectations, weighted."""
    if quad_order < 2:
        raise ValueError("quad_order must be >= 2")
    mu1, mu2 = mp.means
    e1 = gaussian_expectation(U, mu1, mp.variance, quad_order)
    e2 = gaussian_expectation(U, mu2, mp.variance, quad_order)
    return mp.p * e1 + (1.0 - mp.p) * e2


@dataclass(frozen=True)
class MixtureTanhIdentity:
    """E[tanh(aX + b)] for X following the mixture, in closed form.

    With mu1 > mu2 the two components and sigma^2 their common variance,

        a = (mu1 - mu2) / (2 sigma^2),
        b = log(p/(1-p))/2 - (mu1^2 - mu2^2) / (4 sigma^2),

    E[tanh(aX + b)] = tanh(a E[X] + b - (2p - 1) a^2 sigma^2).  For a
    mixture built from (gamma, beta, h, q) these derived (a, b) come out
    equal to (beta, h).
    """

    a: float
    b: float
    value: float


def mixture_tanh_closed_form(mp: MixturePrediction) -> MixtureTanhIdentity:
    """Derive the (a, b) matched to the mixture and evaluate the identity."""
    if not 0.0 < mp.p < 1.0:
        raise ValueError("p in {0, 1} has no defined log-odds")
    mu1, mu2 = mp.means
    sig2 = mp.variance
    a = (mu1 - mu2) / (2.0 * sig2)
    b = 0.5 * math.log(mp.p / (1.0 - mp.p)) - (mu1**2 - mu2**2) / (4.0 * sig2)
    value = math.tanh(a * mp.mean + b - (2.0 * mp.p - 1.0) * a**2 * sig2)
    return MixtureTanhIdentity(a=a, b=b, value=value)


def tap_rhs(
    params: ModelParams,
    disorder: Disorder,
    magnetizations: np.ndarray,
    q: float,
    site: int,
) -> float:
    """tanh((beta/sqrt(N)) sum_{j != i} g_ij m_j + h - beta^2 (1-q) m_i).

    Equals tanh(beta * gamma_i + h) by construction.
    """
    gamma = gamma_of_site(params, disorder, magnetizations, q, site)
    return math.tanh(params.beta * gamma + params.h)


def smoothed_ratio(
    U: TestFunction,
    r: float,
    beta: float,
    h: float,
    q: float,
    quad_order: int = 40,
) -> float:
    """E_xi[U(xi+r) cosh(beta(xi+r)+h)] / (e^{beta^2(1-q)/2} cosh(beta r + h)).

    xi ~ N(0, 1-q).  Evaluated with cosh factors in log space so large
    |beta*r + h| cannot overflow; equals the mixture expectation with
    gamma := r.
    """
    if not 0.0 <= q < 1.0:
        raise ValueError(f"q must be in [0, 1), got {q}")
    if quad_order < 2:
        raise ValueError("quad_order must be >= 2")
    rule = gauss_hermite(quad_order)
    x = r + math.sqrt(1.0 - q) * rule.nodes
    log_gain = log_cosh(beta * x + h) - float(log_cosh(beta * r + h)) - 0.5 * beta**2 * (1.0 - q)
    vals = np.asarray(U.value(x), dtype=np.float64)
    return float(rule.weights @ (vals * np.exp(log_gain)))
