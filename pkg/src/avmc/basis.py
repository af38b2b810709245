"""Orthonormal polynomial families, triple products and weighted Gramians.

Two families are supported: normalised Legendre polynomials, orthonormal on
``[-1, 1]`` with density ``1/2``, and normalised probabilists' Hermite
polynomials, orthonormal for the standard Gaussian.  A scaled Hermite family
evaluates ``H_j(y / s)`` with one scale ``s`` per mode and is orthonormal for
``N(0, s^2)``.

Mode indices are zero based throughout the package.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from math import factorial, isqrt

import numpy as np

LEGENDRE = "legendre"
HERMITE = "hermite"
SCALED_HERMITE = "scaled_hermite"
_KINDS = (LEGENDRE, HERMITE, SCALED_HERMITE)


@dataclass(frozen=True)
class PolyFamily:
    """Polynomial family shared by all stochastic modes.

    Parameters
    ----------
    kind : str
        ``"legendre"``, ``"hermite"`` or ``"scaled_hermite"``.
    scales : tuple of float
        Per-mode scales for the scaled Hermite family.  Modes beyond the
        tuple use scale one.
    """

    kind: str
    scales: tuple = field(default=())

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown polynomial family {self.kind!r}")
        scales = tuple(float(s) for s in self.scales)
        if any(not np.isfinite(s) or s <= 0 for s in scales):
            raise ValueError("scales must be positive and finite")
        object.__setattr__(self, "scales", scales)

    @property
    def triple_kind(self) -> str:
        """Family label that determines the triple product values."""
        return LEGENDRE if self.kind == LEGENDRE else HERMITE

    def scale(self, mode: int) -> float:
        if self.kind != SCALED_HERMITE or mode >= len(self.scales):
            return 1.0
        return self.scales[mode]

    def linear_coefficient(self, mode: int) -> float:
        """Coefficient ``c`` with ``y = c * P_1(y)`` in the given mode."""
        if self.kind == LEGENDRE:
            return 1.0 / np.sqrt(3.0)
        return self.scale(mode)


def legendre() -> PolyFamily:
    return PolyFamily(LEGENDRE)


def hermite(scales=()) -> PolyFamily:
    if len(scales):
        return PolyFamily(SCALED_HERMITE, tuple(scales))
    return PolyFamily(HERMITE)


def eval_basis(family: PolyFamily, mode: int, dim: int, y) -> np.ndarray:
    """Evaluate the first ``dim`` basis polynomials of one mode.

    Returns an array of shape ``y.shape + (dim,)``.
    """
    if dim < 1:
        raise ValueError("dim must be positive")
    y = np.asarray(y, dtype=float)
    out = np.empty(y.shape + (dim,))
    if family.kind == LEGENDRE:
        # unnormalised recurrence, scaled at the end
        out[..., 0] = 1.0
        if dim > 1:
            out[..., 1] = y
        for j in range(1, dim - 1):
            out[..., j + 1] = ((2 * j + 1) * y * out[..., j] - j * out[..., j - 1]) / (j + 1)
        out *= np.sqrt(2.0 * np.arange(dim) + 1.0)
        return out
    t = y / family.scale(mode)
    out[..., 0] = 1.0
    if dim > 1:
        out[..., 1] = t
    # normalised three-term recurrence keeps magnitudes moderate
    for j in range(1, dim - 1):
        out[..., j + 1] = (t * out[..., j] - np.sqrt(j) * out[..., j - 1]) / np.sqrt(j + 1)
    return out


def eval_poly(family: PolyFamily, mode: int, degree: int, y):
    """Evaluate a single normalised polynomial of the given degree."""
    if degree < 0:
        raise ValueError("degree must be non-negative")
    values = eval_basis(family, mode, degree + 1, y)[..., degree]
    return values if np.ndim(values) else float(values)


def _sqrt_fraction(value: Fraction) -> float:
    """Correctly rounded square root of a non-negative rational."""
    if value == 0:
        return 0.0
    p, q = value.numerator, value.denominator
    shift = 2 * (max(p.bit_length(), q.bit_length()) + 80)
    root = isqrt((p << shift) // q)
    return float(Fraction(root, 1 << (shift // 2)))


def _legendre_moment(n: int) -> Fraction:
    return Fraction(factorial(2 * n), 2**n * factorial(n) ** 2)


@lru_cache(maxsize=None)
def _triple(kind: str, i: int, j: int, k: int) -> float:
    total = i + j + k
    if total % 2:
        return 0.0
    s = total // 2
    if s < max(i, j, k):
        return 0.0
    if kind == LEGENDRE:
        ratio = (_legendre_moment(s - i) * _legendre_moment(s - j) * _legendre_moment(s - k)
                 / (_legendre_moment(s) * (2 * s + 1)))
        return _sqrt_fraction((2 * i + 1) * (2 * j + 1) * (2 * k + 1) * ratio**2)
    square = Fraction(factorial(i) * factorial(j) * factorial(k),
                      (factorial(s - i) * factorial(s - j) * factorial(s - k)) ** 2)
    return _sqrt_fraction(square)


def triple_product(family: PolyFamily, i: int, j: int, k: int) -> float:
    """Expectation of the product of three normalised basis polynomials.

    Values are computed in exact rational arithmetic and rounded once, so no
    overflow occurs for large degrees.
    """
    if min(i, j, k) < 0:
        raise ValueError("degrees must be non-negative")
    return _triple(family.triple_kind, int(i), int(j), int(k))


@lru_cache(maxsize=256)
def _triple_tensor(kind: str, out_dim: int, dim_a: int, dim_b: int) -> np.ndarray:
    tensor = np.zeros((out_dim, dim_a, dim_b))
    for lam in range(out_dim):
        for mu in range(dim_a):
            # parity and triangle inequality prune most entries
            lo = abs(lam - mu)
            for nu in range(lo, min(dim_b, lam + mu + 1), 2):
                tensor[lam, mu, nu] = _triple(kind, lam, mu, nu)
    tensor.flags.writeable = False
    return tensor


def triple_tensor(family: PolyFamily, out_dim: int, dim_a: int, dim_b: int) -> np.ndarray:
    """Dense triple product tensor of shape ``(out_dim, dim_a, dim_b)``.

    Entry ``[l, m, n]`` is the expectation of ``P_l P_m P_n``.  The product
    ``(sum_m a_m P_m)(sum_n b_n P_n)`` has coefficients
    ``sum_{m,n} a_m b_n T[l, m, n]``, exactly when ``out_dim`` covers the
    degree sum.
    """
    return _triple_tensor(family.triple_kind, int(out_dim), int(dim_a), int(dim_b))


def matrix_inv_sqrt(matrix) -> np.ndarray:
    """Inverse square root of a symmetric positive definite matrix."""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError("matrix must be square")
    if not np.allclose(matrix, matrix.T, rtol=1e-12, atol=1e-14 * np.abs(matrix).max(initial=1.0)):
        raise ValueError("matrix must be symmetric")
    vals, vecs = np.linalg.eigh(0.5 * (matrix + matrix.T))
    if vals.min(initial=np.inf) <= 0:
        raise ValueError("matrix is not positive definite")
    return (vecs / np.sqrt(vals)) @ vecs.T


@dataclass(frozen=True)
class MeasureSpec:
    """Sampling and weighting measures of the parametric coefficient.

    ``kind="uniform"`` describes the affine case: uniform parameters on
    ``[-1, 1]`` with the Legendre basis and unit weights.  ``kind="gaussian"``
    describes the lognormal case.  Samples are drawn from ``N(0, s_m(rho)^2)``
    and the expansion basis is scaled Hermite with ``s_m(theta * rho)``, where
    ``s_m(t) = exp(t * amplitude_m)``.  Residual norms are weighted by the
    density ratio ``zeta_m`` of ``N(0, s_m(theta*rho)^2)`` against ``N(0, 1)``.
    """

    kind: str
    amplitudes: tuple = ()
    rho: float = 1.0
    theta: float = 0.1

    def __post_init__(self):
        if self.kind not in ("uniform", "gaussian"):
            raise ValueError(f"unknown measure kind {self.kind!r}")
        object.__setattr__(self, "amplitudes", tuple(float(a) for a in self.amplitudes))
        if self.kind == "gaussian":
            if self.rho <= 0 or not 0 < self.theta <= 1:
                raise ValueError("need rho > 0 and 0 < theta <= 1")

    @property
    def n_modes(self) -> int:
        return len(self.amplitudes)

    def sigma(self, mode: int, param: float) -> float:
        return float(np.exp(param * self.amplitudes[mode]))

    def sampling_family(self) -> PolyFamily:
        """Family orthonormal for the sampling measure."""
        if self.kind == "uniform":
            return legendre()
        return hermite([self.sigma(m, self.rho) for m in range(self.n_modes)])

    def expansion_family(self) -> PolyFamily:
        """Family in which all tensor trains are expanded."""
        if self.kind == "uniform":
            return legendre()
        return hermite([self.sigma(m, self.theta * self.rho) for m in range(self.n_modes)])

    def reference_family(self) -> PolyFamily:
        """Family orthonormal for the measure defining the energy norm."""
        return self.expansion_family()

    def draw(self, rng: np.random.Generator, n: int, modes: int | None = None) -> np.ndarray:
        """Draw ``n`` parameter vectors from the sampling measure."""
        modes = self.n_modes if modes is None else modes
        if self.kind == "uniform":
            return rng.uniform(-1.0, 1.0, size=(n, modes))
        scales = np.array([self.sigma(m, self.rho) for m in range(modes)])
        return rng.standard_normal((n, modes)) * scales

    def draw_reference(self, rng: np.random.Generator, n: int, modes: int | None = None) -> np.ndarray:
        """Draw from the measure for which the expansion family is orthonormal."""
        modes = self.n_modes if modes is None else modes
        if self.kind == "uniform":
            return rng.uniform(-1.0, 1.0, size=(n, modes))
        scales = np.array([self.sigma(m, self.theta * self.rho) for m in range(modes)])
        return rng.standard_normal((n, modes)) * scales

    def draw_law(self, rng: np.random.Generator, n: int, modes: int | None = None) -> np.ndarray:
        """Draw from the parameter distribution of the model itself."""
        modes = self.n_modes if modes is None else modes
        if self.kind == "uniform":
            return rng.uniform(-1.0, 1.0, size=(n, modes))
        return rng.standard_normal((n, modes))

    def zeta(self, mode: int, y) -> np.ndarray:
        """Weight function of one mode."""
        y = np.asarray(y, dtype=float)
        if self.kind == "uniform":
            return np.ones_like(y)
        s = self.sigma(mode, self.theta * self.rho)
        return np.exp((0.5 - 0.5 / s**2) * y**2) / s

    def check_integrable(self, weight_power: float = 2.0) -> None:
        """Raise if ``zeta_m^p`` is not integrable against ``N(0, 1)``."""
        if self.kind == "uniform":
            return
        for m in range(self.n_modes):
            s2 = self.sigma(m, self.theta * self.rho) ** 2
            if weight_power + (1.0 - weight_power) * s2 <= 0:
                raise ValueError(
                    f"weight power {weight_power} is not integrable for mode {m} "
                    f"(scale {np.sqrt(s2):.4g}); reduce theta or rho")


def gauss_nodes(kind: str, count: int):
    """Quadrature nodes and probability weights for ``uniform`` or ``gaussian``."""
    if kind == "uniform":
        x, w = np.polynomial.legendre.leggauss(count)
        return x, w / 2.0
    x, w = np.polynomial.hermite_e.hermegauss(count)
    return x, w / np.sqrt(2.0 * np.pi)


def weighted_gramian(measure: MeasureSpec, mode: int, dim: int, weight_power: float = 2.0) -> np.ndarray:
    """Gramian of the expansion basis against ``zeta_m^p`` times ``N(0, 1)``.

    The weighted Gaussian is absorbed analytically: ``zeta^p N(0,1)`` equals
    ``mass * N(0, v)`` with ``v = s^2 / (p + (1 - p) s^2)`` and
    ``mass = s^(1-p) / sqrt(p + (1 - p) s^2)``, so Gauss-Hermite quadrature
    with ``dim + 8`` nodes integrates every entry exactly.

    ``weight_power=2`` gives the Gramian of the weighted residual norms and
    ``weight_power=0`` the base change of the expansion basis to ``N(0, 1)``.
    In the uniform case the result is the identity.
    """
    if dim < 1:
        raise ValueError("dim must be positive")
    family = measure.expansion_family()
    if measure.kind == "uniform":
        x, w = gauss_nodes("uniform", dim + 8)
        mass = 1.0
    else:
        s = measure.sigma(mode, measure.theta * measure.rho)
        denom = weight_power + (1.0 - weight_power) * s**2
        if denom <= 0:
            raise ValueError(f"weight power {weight_power} not integrable for mode {mode}")
        var = s**2 / denom
        mass = s ** (1.0 - weight_power) / np.sqrt(denom)
        x, w = gauss_nodes("gaussian", dim + 8)
        x = x * np.sqrt(var)
    values = eval_basis(family, mode, dim, x)
    gram = mass * (values.T * w) @ values
    gram = 0.5 * (gram + gram.T)
    if np.linalg.eigvalsh(gram).min() <= 0:
        raise ValueError("weighted Gramian is not positive definite")
    return gram
