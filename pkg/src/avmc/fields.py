"""Parametric diffusion coefficients and their tensor-train representations."""
from __future__ import annotations

from dataclasses import dataclass
from math import isqrt

import numpy as np
from scipy.special import zeta

from .basis import MeasureSpec, PolyFamily, triple_tensor
from .tt import (TensorTrain, rank_one, tt_add, tt_eval_param, tt_hadamard_pce,
                 tt_hadamard_pce_rounded, tt_round, tt_scale)

# product cores above this many entries are compressed while they are formed
_EXACT_PRODUCT_LIMIT = 4_000_000


def fourier_index(mode: int) -> tuple:
    """Frequency pair ``(b1, b2)`` of the 1-based expansion index ``mode``.

    Modes enumerate the pairs along anti-diagonals: 1 -> (0, 1),
    2 -> (1, 0), 3 -> (0, 2), ...
    """
    if mode < 1:
        raise ValueError("expansion modes are numbered from 1")
    k = (isqrt(1 + 8 * mode) - 1) // 2
    b1 = mode - k * (k + 1) // 2
    return b1, k - b1


@dataclass(frozen=True)
class CoefficientField:
    """Affine or lognormal coefficient built from planar Fourier modes.

    The expansion functions are
    ``g_l(x) = scale / zeta(decay) * l^(-decay) * cos(2 pi b1 x1) cos(2 pi b2 x2)``
    for ``l = 1..n_modes``.  The affine field is ``mean + sum_l g_l y_l``, the
    lognormal field ``exp(sum_l g_l y_l)``.
    """

    kind: str
    n_modes: int
    decay: float = 2.0
    scale: float = 0.9
    mean: float = 1.0

    def __post_init__(self):
        if self.kind not in ("affine", "lognormal"):
            raise ValueError(f"unknown field kind {self.kind!r}")
        if self.n_modes < 1:
            raise ValueError("need at least one expansion mode")
        if self.decay <= 1:
            raise ValueError("decay must exceed one")

    @property
    def amplitudes(self) -> np.ndarray:
        ell = np.arange(1, self.n_modes + 1, dtype=float)
        return self.scale / zeta(self.decay, 1) * ell ** (-self.decay)

    def expansion_functions(self, points) -> np.ndarray:
        """Values of ``g_1 .. g_L`` at points, shape ``(npts, L)``."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        freqs = np.array([fourier_index(l) for l in range(1, self.n_modes + 1)], dtype=float)
        c1 = np.cos(2 * np.pi * points[:, :1] * freqs[:, 0])
        c2 = np.cos(2 * np.pi * points[:, 1:2] * freqs[:, 1])
        return c1 * c2 * self.amplitudes

    def _exponent(self, gamma, params):
        params = np.atleast_2d(np.asarray(params, dtype=float))
        if params.shape[1] < self.n_modes:
            pad = np.zeros((params.shape[0], self.n_modes - params.shape[1]))
            params = np.hstack([params, pad])
        return params[:, : self.n_modes] @ gamma.T

    def evaluate(self, points, params) -> np.ndarray:
        """Field values, shape ``(n_params, npts)``.  Missing modes are zero."""
        gamma = self.expansion_functions(points)
        s = self._exponent(gamma, params)
        return self.mean + s if self.kind == "affine" else np.exp(s)

    def triangle_coefficients(self, mesh, params) -> np.ndarray:
        """Per-triangle means by the edge-midpoint rule, ``(n, nt)``."""
        mids = mesh.edge_midpoints.reshape(-1, 2)
        values = self.evaluate(mids, params)
        return values.reshape(values.shape[0], mesh.n_triangles, 3).mean(axis=2)

    def measure(self, rho: float = 1.0, theta: float = 0.1) -> MeasureSpec:
        kind = "uniform" if self.kind == "affine" else "gaussian"
        return MeasureSpec(kind, tuple(self.amplitudes), rho, theta)

    def check_elliptic(self) -> None:
        if self.kind == "affine" and self.mean - self.amplitudes.sum() <= 0:
            raise ValueError("affine field is not uniformly positive")


def univariate_tt(constant, components, dims) -> TensorTrain:
    """Exact train of ``w_0(x) + sum_{l, j} w_{l,j}(x) P_j(y_l)``.

    Parameters
    ----------
    constant : (J,) array
        Coefficient of the constant polynomial.
    components : dict
        Maps ``(mode, degree)`` with ``1 <= degree < dims[mode]`` to a
        ``(J,)`` array.  Missing entries are zero.
    dims : sequence of int
        Stochastic mode sizes.

    The physical component stacks one column per univariate index; all
    internal ranks equal ``1 + sum_l (dims[l] - 1)``.  A rank index that
    belongs to mode ``l`` selects its own degree in core ``l`` and the
    constant polynomial in every other core.
    """
    dims = [int(d) for d in dims]
    if any(d < 1 for d in dims):
        raise ValueError("mode sizes must be positive")
    constant = np.asarray(constant, dtype=float)
    n_phys = constant.shape[0]
    owner = [(-1, 0)]
    for m, d in enumerate(dims):
        owner.extend((m, j) for j in range(1, d))
    rank = len(owner)
    physical = np.zeros((n_phys, rank))
    physical[:, 0] = constant
    for (m, j), values in components.items():
        if not 0 <= m < len(dims) or not 1 <= j < dims[m]:
            raise ValueError(f"component {(m, j)} outside the index set")
        physical[:, owner.index((m, j))] = values
    cores = [physical[None]]
    for m, d in enumerate(dims):
        last = m == len(dims) - 1
        core = np.zeros((rank, d, 1 if last else rank))
        for k, (mode, j) in enumerate(owner):
            col = 0 if last else k
            core[k, j if mode == m else 0, col] = 1.0
        cores.append(core)
    return TensorTrain(cores)


def constant_tt(values, dims) -> TensorTrain:
    """Rank-one train with a physical vector and the constant polynomial."""
    vectors = [np.asarray(values, dtype=float)]
    for d in dims:
        e = np.zeros(int(d))
        e[0] = 1.0
        vectors.append(e)
    return rank_one(vectors)


def affine_tt(field: CoefficientField, mesh, family: PolyFamily, tol: float = 1e-14) -> TensorTrain:
    """Nodal train of the affine coefficient over all expansion modes."""
    gamma = field.expansion_functions(mesh.vertices)
    comps = {(m, 1): gamma[:, m] * family.linear_coefficient(m) for m in range(field.n_modes)}
    tt = univariate_tt(np.full(mesh.n_vertices, field.mean), comps, [2] * field.n_modes)
    return tt_round(tt, tol)


def _product(x, y, family, out_dims, tol):
    triples = [triple_tensor(family, o, a, b) for o, a, b in zip(out_dims, x.dims, y.dims)]
    rx = list(x.ranks) + [1]
    ry = list(y.ranks) + [1]
    biggest = max(rx[m] * ry[m] * o * rx[m + 1] * ry[m + 1] for m, o in enumerate(out_dims))
    if biggest <= _EXACT_PRODUCT_LIMIT:
        return tt_round(tt_hadamard_pce(x, y, triples), tol)
    return tt_hadamard_pce_rounded(x, y, triples, tol)


def lognormal_tt(field: CoefficientField, mesh, family: PolyFamily, squarings: int = 4,
                 series_terms: int = 8, tol: float = 1e-6, degree_cap: int = 10) -> TensorTrain:
    """Nodal train of ``exp(sum_l g_l y_l)`` by scaling and squaring.

    The exponent scaled by ``2^-squarings`` is exponentiated with a truncated
    Taylor series evaluated by Horner's rule, then squared ``squarings``
    times.  Every product is a polynomial chaos product with nodal spatial
    multiplication, truncated to ``degree_cap`` per mode and rounded to
    ``tol``.
    """
    if squarings < 0 or series_terms < 1 or degree_cap < 1:
        raise ValueError("invalid exponential parameters")
    L = field.n_modes
    gamma = field.expansion_functions(mesh.vertices) * 2.0**-squarings
    comps = {(m, 1): gamma[:, m] * family.linear_coefficient(m) for m in range(L)}
    z = tt_round(univariate_tt(np.zeros(mesh.n_vertices), comps, [2] * L), 1e-14)
    one = constant_tt(np.ones(mesh.n_vertices), [1] * L)
    cap = degree_cap + 1
    series_tol = 0.1 * tol
    s = one
    for k in range(series_terms, 0, -1):
        out_dims = [min(a + b - 1, cap) for a, b in zip(z.dims, s.dims)]
        prod = _product(z, s, family, out_dims, series_tol)
        one_padded = constant_tt(np.ones(mesh.n_vertices), out_dims)
        s = tt_round(tt_add(one_padded, tt_scale(prod, 1.0 / k)), series_tol)
    for _ in range(squarings):
        out_dims = [min(2 * d - 1, cap) for d in s.dims]
        s = _product(s, s, family, out_dims, tol)
    return s


def coefficient_tt(field: CoefficientField, mesh, measure: MeasureSpec, **options) -> TensorTrain:
    family = measure.expansion_family()
    if field.kind == "affine":
        return affine_tt(field, mesh, family)
    return lognormal_tt(field, mesh, family, **options)


def field_error_linf(field: CoefficientField, tt: TensorTrain, mesh, measure: MeasureSpec,
                     n_samples: int = 250, rng=None) -> float:
    """Relative sampled error in the mean-square maximum norm over vertices.

    Parameters are drawn from the measure for which the expansion basis is
    orthonormal.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    params = measure.draw_reference(rng, n_samples, field.n_modes)
    exact = field.evaluate(mesh.vertices, params)
    approx = tt_eval_param(tt, measure.expansion_family(), params)
    num = np.sum(np.max(np.abs(exact - approx), axis=1) ** 2)
    den = np.sum(np.max(np.abs(exact), axis=1) ** 2)
    return float(np.sqrt(num / den))
