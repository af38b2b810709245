"""Reliable residual error estimator for a tensor-train surrogate.

Given a surrogate ``w`` over the active index set ``Lambda_d`` and a
coefficient train ``a`` with mode sizes ``q``, the flux ``a grad w`` is
expanded exactly over ``Lambda_{d+q-1}`` by triple products.  Three
contributions are reported:

* deterministic: element residuals and normal flux jumps of the active part,
* stochastic: the flux part outside ``Lambda_d``,
* algebraic: the dual norm of the discrete residual ``B w - f``.

All stochastic norms use the weighted Gramians of :mod:`avmc.basis`; in the
affine case they are identities.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse.linalg as spla

from .basis import MeasureSpec, matrix_inv_sqrt, triple_tensor, weighted_gramian
from .fem import TriMesh, assemble_load, assemble_stiffness, nodal_gradients
from .fields import constant_tt
from .tt import (TensorTrain, TTOperator, append_modes, apply_mode_matrices, orthogonalize,
                 pad_dims, slice_modes, tt_add, tt_apply, tt_hadamard_pce, tt_inner,
                 tt_norm, tt_round, with_physical)


@dataclass
class EstimatorConfig:
    """Options of :func:`estimate`."""

    round_tol: float = 1e-10
    lookahead: int = 1
    c_det: float = 1.0
    c_int: float = 1.0
    source: float = 1.0


@dataclass
class EstimatorReport:
    eta_det: float
    eta_sto: float
    eta_alg: float
    eta: float
    local_det: np.ndarray
    local_sto: np.ndarray
    dims: tuple
    ranks: tuple
    n_dofs: int
    n_triangles: int
    n_samples: int = 0
    extras: dict = field(default_factory=dict)


def eta_total(eta_det: float, eta_sto: float, eta_alg: float, c_det: float = 1.0,
              c_int: float = 1.0) -> float:
    """Combined bound ``sqrt((c_det det + sto + c_int alg)^2 + alg^2)``."""
    if min(eta_det, eta_sto, eta_alg) < 0:
        raise ValueError("estimator contributions must be non-negative")
    return float(np.hypot(c_det * eta_det + eta_sto + c_int * eta_alg, eta_alg))


@lru_cache(maxsize=1024)
def _gram(measure: MeasureSpec, mode: int, dim: int, power: float) -> np.ndarray:
    return weighted_gramian(measure, mode, dim, power)


def _gram_factor(measure, mode, indices, power=2.0):
    """Upper factor ``F`` with ``F^T F`` equal to the Gramian block."""
    if measure.kind == "uniform":
        return None
    indices = np.asarray(indices)
    full = _gram(measure, mode, int(indices.max()) + 1, power)
    block = full[np.ix_(indices, indices)]
    return np.linalg.cholesky(block).T


@dataclass
class Flux:
    """Flux ``a grad w`` and its derived residual parts over ``Lambda_{d+q-1}``.

    All three trains share the stochastic cores.  Physical rows are per
    triangle and component (``flux``), per triangle (``divergence``) and per
    interior edge (``jump``).
    """

    mesh: TriMesh
    active_dims: tuple
    flux: TensorTrain
    divergence: TensorTrain
    jump: TensorTrain

    @property
    def dims(self) -> tuple:
        return self.flux.dims


def _extend(w: TensorTrain, n_modes: int) -> TensorTrain:
    if w.n_modes > n_modes:
        raise ValueError("surrogate has more modes than the coefficient")
    return append_modes(w, n_modes - w.n_modes)


def flux_tt(w: TensorTrain, a: TensorTrain, mesh: TriMesh, family, round_tol: float = 1e-10) -> Flux:
    """Expand the flux of ``w`` under coefficient ``a``.

    The coefficient is taken at triangle centroids for the flux and its
    gradient is used for the element divergence ``grad a . grad w``.
    """
    if w.shape[0] != mesh.n_vertices or a.shape[0] != mesh.n_vertices:
        raise ValueError("physical components must be nodal on the mesh")
    active = w.dims
    wx = _extend(w, a.n_modes)
    triples = [triple_tensor(family, q + d - 1, q, d) for q, d in zip(a.dims, wx.dims)]
    prod = tt_hadamard_pce(a, wx, triples)
    stoch = list(prod.cores[1:])
    an, wn = a.physical, wx.physical
    s, r = an.shape[1], wn.shape[1]
    abar = an[mesh.triangles].mean(axis=1)  # (nt, s)
    ga = nodal_gradients(mesh, an)  # (nt, 2, s)
    gw = nodal_gradients(mesh, wn)  # (nt, 2, r)
    flux = np.einsum("ti,tcj->tcij", abar, gw)  # (nt, 2, s, r)
    div = np.einsum("tci,tcj->tij", ga, gw).reshape(mesh.n_triangles, s * r)
    edges = mesh.interior_edges
    t12 = mesh.edge_triangles[edges]
    diff = flux[t12[:, 0]] - flux[t12[:, 1]]
    jump = np.einsum("ecij,ec->eij", diff, mesh.edge_normals[edges]).reshape(len(edges), s * r)
    flux = flux.reshape(2 * mesh.n_triangles, s * r)

    def build(phys):
        tt = TensorTrain([phys[None]] + stoch)
        return tt_round(tt, round_tol) if round_tol is not None else tt

    return Flux(mesh, tuple(active) + (1,) * (a.n_modes - w.n_modes),
                build(flux), build(div), build(jump))


def _weighted_row_norms(tt: TensorTrain, measure, index_sets) -> np.ndarray:
    """Squared weighted norms of every physical row over the given index sets."""
    sliced = slice_modes(tt, index_sets)
    factors = [_gram_factor(measure, m, np.arange(tt.dims[m])[idx])
               for m, idx in enumerate(index_sets)]
    sliced = apply_mode_matrices(sliced, factors)
    phys = orthogonalize(sliced, 0).physical
    return np.einsum("ij,ij->i", phys, phys)


def eta_det(w: TensorTrain, a: TensorTrain, mesh: TriMesh, measure: MeasureSpec,
            config: EstimatorConfig | None = None, flux: Flux | None = None):
    """Deterministic estimator: global value and per-triangle contributions.

    The squared contribution of every interior edge is split evenly between
    its two triangles, so the local squares sum to the global square.
    """
    config = config or EstimatorConfig()
    family = measure.expansion_family()
    flux = flux or flux_tt(w, a, mesh, family, config.round_tol)
    dims = flux.active_dims
    nt, ne = mesh.n_triangles, len(mesh.interior_edges)
    index_sets = [slice(0, d) for d in dims]
    div = slice_modes(flux.divergence, index_sets)
    jump = slice_modes(flux.jump, index_sets)
    volume = with_physical(div, np.vstack([div.physical, np.zeros((ne, div.ranks[0]))]))
    jumps = with_physical(jump, np.vstack([np.zeros((nt, jump.ranks[0])), jump.physical]))
    src = constant_tt(np.concatenate([np.full(nt, config.source), np.zeros(ne)]), dims)
    residual = tt_add(tt_add(volume, src), jumps)
    if config.round_tol is not None:
        residual = tt_round(residual, config.round_tol)
    rows = _weighted_row_norms(residual, measure, [slice(None)] * len(dims))
    vol_sq = mesh.diameters**2 * mesh.areas * rows[:nt]
    lengths = mesh.edge_lengths[mesh.interior_edges]
    jump_sq = lengths**2 * rows[nt:]
    local = vol_sq.copy()
    t12 = mesh.edge_triangles[mesh.interior_edges]
    np.add.at(local, t12[:, 0], 0.5 * jump_sq)
    np.add.at(local, t12[:, 1], 0.5 * jump_sq)
    total = float(np.sqrt(vol_sq.sum() + jump_sq.sum()))
    return total, np.sqrt(local)


def _area_weighted(tt: TensorTrain, mesh: TriMesh) -> TensorTrain:
    weights = np.repeat(np.sqrt(mesh.areas), 2)
    return with_physical(tt, tt.physical * weights[:, None])


def eta_sto(w: TensorTrain, a: TensorTrain, mesh: TriMesh, measure: MeasureSpec,
            config: EstimatorConfig | None = None, flux: Flux | None = None):
    """Stochastic estimator: global value and per-mode look-ahead values.

    The local list has one entry per active mode plus one for the first
    inactive mode.  Entry ``l`` measures the flux on degrees
    ``d_l .. d_l + lookahead - 1`` of mode ``l`` with all other modes active.
    """
    config = config or EstimatorConfig()
    family = measure.expansion_family()
    flux = flux or flux_tt(w, a, mesh, family, config.round_tol)
    dims, full = flux.active_dims, flux.dims
    g = _area_weighted(flux.flux, mesh)
    inner = pad_dims(slice_modes(g, [slice(0, d) for d in dims]), full)
    outside = tt_add(g, inner, 1.0, -1.0)
    if config.round_tol is not None:
        outside = tt_round(outside, config.round_tol)
    factors = [_gram_factor(measure, m, np.arange(n)) for m, n in enumerate(full)]
    total = tt_norm(apply_mode_matrices(outside, factors))

    local = np.zeros(w.n_modes + 1)
    for ell in range(w.n_modes + 1):
        if ell >= len(full):
            continue
        stop = min(dims[ell] + config.lookahead, full[ell])
        if stop <= dims[ell]:
            continue
        index_sets = [np.arange(d) for d in dims]
        index_sets[ell] = np.arange(dims[ell], stop)
        piece = slice_modes(g, index_sets)
        facs = [_gram_factor(measure, m, idx) for m, idx in enumerate(index_sets)]
        local[ell] = tt_norm(apply_mode_matrices(piece, facs))
    return float(total), local


def galerkin_operator(a: TensorTrain, mesh: TriMesh, family, dims) -> TTOperator:
    """Discrete operator on ``Lambda_d`` with Dirichlet dofs removed.

    ``dims`` covers every mode of ``a``; inactive modes have size one.
    """
    phys = [assemble_stiffness(mesh, a.physical[:, k], check_positive=False)
            for k in range(a.ranks[0] if a.n_modes else 1)]
    cores = []
    for core, d in zip(a.cores[1:], dims):
        tau = triple_tensor(family, core.shape[1], d, d)
        cores.append(np.einsum("kal,aij->kijl", core, tau, optimize=True))
    return TTOperator(phys, cores, symmetric=True)


def eta_alg(w: TensorTrain, a: TensorTrain, mesh: TriMesh, measure: MeasureSpec,
            config: EstimatorConfig | None = None) -> float:
    """Dual norm of ``B w - f`` for the energy inner product of the mean field.

    The physical mode is weighted with the inverse unit-coefficient stiffness
    matrix and every stochastic mode with the inverse base change Gramian.
    """
    config = config or EstimatorConfig()
    family = measure.expansion_family()
    wx = _extend(w, a.n_modes)
    dims = wx.dims
    free = mesh.free_dofs
    wf = with_physical(wx, wx.physical[free])
    op = galerkin_operator(a, mesh, family, dims)
    rhs = constant_tt(assemble_load(mesh, config.source), dims)
    res = tt_add(tt_apply(op, wf), rhs, 1.0, -1.0)
    if config.round_tol is not None:
        res = tt_round(res, config.round_tol)
    if measure.kind != "uniform":
        res = apply_mode_matrices(res, [matrix_inv_sqrt(_gram(measure, m, d, 0.0))
                                        for m, d in enumerate(dims)])
    stiffness = assemble_stiffness(mesh, 1.0)
    if stiffness.shape[0] == 0:
        return 0.0
    lu = spla.splu(stiffness.tocsc())
    solved = with_physical(res, lu.solve(np.asarray(res.physical)))
    return float(np.sqrt(max(tt_inner(res, solved), 0.0)))


def estimate(w: TensorTrain, a: TensorTrain, mesh: TriMesh, measure: MeasureSpec,
             config: EstimatorConfig | None = None, n_samples: int = 0) -> EstimatorReport:
    """Evaluate all estimator contributions for one surrogate."""
    config = config or EstimatorConfig()
    flux = flux_tt(w, a, mesh, measure.expansion_family(), config.round_tol)
    det, local_det = eta_det(w, a, mesh, measure, config, flux)
    sto, local_sto = eta_sto(w, a, mesh, measure, config, flux)
    alg = eta_alg(w, a, mesh, measure, config)
    return EstimatorReport(
        eta_det=det, eta_sto=sto, eta_alg=alg,
        eta=eta_total(det, sto, alg, config.c_det, config.c_int),
        local_det=local_det, local_sto=local_sto, dims=tuple(w.dims), ranks=tuple(w.ranks),
        n_dofs=len(mesh.free_dofs), n_triangles=mesh.n_triangles, n_samples=n_samples,
    )
