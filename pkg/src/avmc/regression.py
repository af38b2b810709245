"""Variational Monte Carlo regression of snapshots into a tensor train.

The fit minimises the empirical mean of ``|w(y_i) - u_i|^2`` in the
``H^1_0`` seminorm by alternating least squares.  The physical component is
kept orthonormal for the stiffness Gramian, which turns every stochastic
core update into a small Euclidean least-squares problem.
"""
from __future__ import annotations

import hashlib
import logging
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .basis import PolyFamily, eval_basis
from .fem import TriMesh, assemble_stiffness, h1_seminorm, solve_batch
from .tt import TensorTrain

log = logging.getLogger(__name__)

GRAMIAN_CAP = 4096


class SampleCeilingReached(RuntimeError):
    """Raised when the sample count would exceed its configured ceiling."""


@dataclass
class DiscreteSpace:
    """Mesh, stochastic mode sizes and polynomial family of a surrogate."""

    mesh: TriMesh
    dims: tuple
    family: PolyFamily

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if any(d < 1 for d in self.dims):
            raise ValueError("mode sizes must be positive")

    @property
    def n_modes(self) -> int:
        return len(self.dims)


@dataclass
class SampleSet:
    """Parameter draws with optional snapshots on a mesh.

    ``params`` always carries every expansion mode of the coefficient, so
    snapshots are exact draws of the full model and stay valid when more
    modes become active in the surrogate.
    """

    params: np.ndarray
    snapshots: np.ndarray | None = None
    mesh: TriMesh | None = None

    def __post_init__(self):
        self.params = np.atleast_2d(np.asarray(self.params, dtype=float))
        if self.snapshots is not None:
            self.snapshots = np.asarray(self.snapshots, dtype=float)
            if self.mesh is None or self.snapshots.shape != (len(self.params), self.mesh.n_vertices):
                raise ValueError("snapshots do not match parameters and mesh")

    @property
    def n(self) -> int:
        return len(self.params)

    def merged(self, other: "SampleSet") -> "SampleSet":
        if (self.snapshots is None) != (other.snapshots is None):
            raise ValueError("cannot merge solved and unsolved samples")
        snaps = None
        if self.snapshots is not None:
            if other.mesh is not self.mesh:
                raise ValueError("snapshots live on different meshes")
            snaps = np.vstack([self.snapshots, other.snapshots])
        return SampleSet(np.vstack([self.params, other.params]), snaps, self.mesh)


def draw_samples(measure, n: int, rng: np.random.Generator, modes: int | None = None) -> SampleSet:
    return SampleSet(measure.draw(rng, n, modes))


def extend_samples_mode(samples: SampleSet, n_modes: int, measure, rng) -> SampleSet:
    """Append fresh i.i.d. coordinates until ``n_modes`` columns exist.

    Existing coordinates are never redrawn.
    """
    have = samples.params.shape[1]
    if n_modes <= have:
        return samples
    extra = measure.draw(rng, samples.n, n_modes)[:, have:]
    return SampleSet(np.hstack([samples.params, extra]), None, None)


class SnapshotCache:
    """On-disk snapshot store keyed by mesh and parameter vector."""

    def __init__(self, root):
        self.root = os.fspath(root)
        os.makedirs(self.root, exist_ok=True)

    def _path(self, mesh: TriMesh, y) -> str:
        key = hashlib.sha1(np.ascontiguousarray(y, dtype="<f8").tobytes()).hexdigest()[:20]
        return os.path.join(self.root, f"{mesh.mesh_id}_{key}.bin")

    def get(self, mesh: TriMesh, y):
        path = self._path(mesh, y)
        if not os.path.exists(path):
            return None
        values = np.fromfile(path, dtype="<f8")
        return values if values.size == mesh.n_vertices else None

    def put(self, mesh: TriMesh, y, values) -> None:
        np.ascontiguousarray(values, dtype="<f8").tofile(self._path(mesh, y))


def compute_snapshots(samples: SampleSet, mesh: TriMesh, field, f=1.0, threads: int = 1,
                      cache: SnapshotCache | None = None) -> SampleSet:
    """Solve the model at every parameter of ``samples`` on ``mesh``."""
    params = samples.params
    out = np.zeros((len(params), mesh.n_vertices))
    todo = []
    for i, y in enumerate(params):
        hit = cache.get(mesh, y) if cache is not None else None
        if hit is None:
            todo.append(i)
        else:
            out[i] = hit
    if todo:
        out[todo] = solve_batch(mesh, field, params[todo], f, threads)
        if cache is not None:
            for i in todo:
                cache.put(mesh, params[i], out[i])
    return SampleSet(params, out, mesh)


def empirical_norm(mesh: TriMesh, snapshots) -> float:
    """Root mean square of the ``H^1_0`` seminorms of the snapshots."""
    snapshots = np.atleast_2d(snapshots)
    return float(np.sqrt(np.mean([h1_seminorm(mesh, u) ** 2 for u in snapshots])))


def _basis_matrix(params, dims, family):
    n = params.shape[0]
    phi = np.ones((n, 1))
    for m, d in enumerate(dims):
        pm = eval_basis(family, m, d, params[:, m])
        phi = (phi[:, :, None] * pm[:, None, :]).reshape(n, -1)
    return phi


def min_gramian_eig(params, dims, family: PolyFamily, cap: int = GRAMIAN_CAP) -> float:
    """Smallest eigenvalue of the empirical Gramian of the full tensor basis."""
    params = np.atleast_2d(np.asarray(params, dtype=float))
    dims = tuple(int(d) for d in dims)
    size = int(np.prod(dims)) if dims else 1
    if size > cap:
        raise ValueError(f"tensor basis of size {size} exceeds the cap {cap}; "
                         "use min_gramian_eig_factored")
    n = params.shape[0]
    if n < size:
        return 0.0
    phi = _basis_matrix(params, dims, family)
    gram = phi.T @ phi / n
    return float(max(np.linalg.eigvalsh(gram)[0], 0.0))


def min_gramian_eig_factored(params, dims, family: PolyFamily) -> float:
    """Product of the smallest eigenvalues of the per-mode Gramians."""
    params = np.atleast_2d(np.asarray(params, dtype=float))
    n = params.shape[0]
    value = 1.0
    for m, d in enumerate(dims):
        if n < d:
            return 0.0
        pm = eval_basis(family, m, int(d), params[:, m])
        value *= max(np.linalg.eigvalsh(pm.T @ pm / n)[0], 0.0)
    return float(value)


def gramian_criterion(params, dims, family: PolyFamily, cap: int = GRAMIAN_CAP) -> float:
    """Full-basis eigenvalue when affordable, the factored estimate otherwise."""
    if int(np.prod(dims)) <= cap:
        return min_gramian_eig(params, dims, family, cap)
    return min_gramian_eig_factored(params, dims, family)


def update_samples(samples: SampleSet, dims, family: PolyFamily, measure, rng, solve,
                   growth: float = 0.3, threshold: float = 0.5, n_max: int = 1_000_000,
                   cap: int = GRAMIAN_CAP) -> SampleSet:
    """Draw and solve new samples until the Gramian criterion holds.

    ``solve`` maps an unsolved :class:`SampleSet` to a solved one.  Raises
    :class:`SampleCeilingReached` when ``n_max`` would be exceeded.
    """
    dims = tuple(dims)
    while gramian_criterion(samples.params[:, : len(dims)], dims, family, cap) < threshold:
        extra = max(1, int(np.floor(growth * samples.n)))
        if samples.n + extra > n_max:
            raise SampleCeilingReached(f"sample ceiling {n_max} reached at n={samples.n}")
        fresh = SampleSet(measure.draw(rng, extra, samples.params.shape[1]))
        samples = samples.merged(solve(fresh))
    return samples


@dataclass
class FitConfig:
    """Options of :func:`vmc_fit`."""

    initial_rank: int = 1
    max_rank: int = 10
    max_sweeps: int = 400
    phase_sweeps: int = 60
    stagnation_tol: float = 1e-4
    validation_fraction: float = 0.2
    ridge: float = 1e-12
    probe_sweeps: int = 2
    patience: int = 2
    rank_improvement: float = 1e-2
    rank_adapt: bool = True
    seed: int = 0


@dataclass
class FitResult:
    tt: TensorTrain
    train_error: float
    validation_error: float
    sweeps: int
    history: list = field(default_factory=list)


class _Problem:
    """Training or validation data in stiffness-weighted coordinates."""

    def __init__(self, snapshots, stiff_snaps, bases):
        self.u = snapshots
        self.su = stiff_snaps
        self.norm2 = np.einsum("ij,ij->i", snapshots, stiff_snaps)
        self.bases = bases

    @property
    def n(self):
        return self.u.shape[0]


def _features(cores, bases):
    n = bases[0].shape[0] if bases else 1
    right = np.ones((n, 1))
    for core, pm in zip(reversed(cores), reversed(bases)):
        tmp = np.einsum("adb,nb->nad", core, right)
        right = np.einsum("nad,nd->na", tmp, pm)
    return right


def _spd_solve(mat, rhs, ridge):
    shift = ridge * max(np.trace(mat), np.finfo(float).tiny)
    mat = mat + shift * np.eye(mat.shape[0])
    try:
        return sla.cho_solve(sla.cho_factor(mat, lower=True, check_finite=False), rhs,
                             check_finite=False)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(mat, rhs, rcond=None)[0]


class _ALS:
    def __init__(self, train: _Problem, valid: _Problem | None, stiffness, config: FitConfig):
        self.train = train
        self.valid = valid
        self.stiffness = stiffness
        self.config = config
        self.total = max(train.norm2.sum(), np.finfo(float).tiny)

    def physical_step(self, cores):
        data = self.train
        feats = _features(cores, data.bases)
        gram = feats.T @ feats
        rhs = feats.T @ data.u  # (r1, J)
        phys = _spd_solve(gram, rhs, self.config.ridge).T  # (J, r1)
        # orthonormalise in the stiffness inner product (Cholesky QR twice)
        for _ in range(2):
            g = phys.T @ (self.stiffness @ phys)
            g = 0.5 * (g + g.T)
            g += 1e-15 * max(np.trace(g), np.finfo(float).tiny) * np.eye(len(g))
            r = np.linalg.cholesky(g).T
            phys = sla.solve_triangular(r, phys.T, trans="T", lower=False).T
            cores = [np.tensordot(r, cores[0], axes=(1, 0))] + cores[1:]
        return phys, cores

    def residual_constant(self, phys, data):
        """Part of each snapshot orthogonal to the physical span."""
        targets = data.su @ phys
        diff = data.u - targets @ phys.T
        sdiff = data.su - targets @ (self.stiffness @ phys).T
        return targets, np.maximum(np.einsum("ij,ij->i", diff, sdiff), 0.0)

    def sweep(self, phys, cores):
        """One physical update followed by a forward sweep over the cores."""
        phys, cores = self.physical_step(cores)
        data = self.train
        targets, const = self.residual_constant(phys, data)
        cores = list(cores)
        n, r1 = targets.shape
        M = len(cores)
        rights = [None] * M
        right = np.ones((n, 1))
        for m in range(M - 1, -1, -1):
            rights[m] = right
            tmp = np.einsum("adb,nb->nad", cores[m], right)
            right = np.einsum("nad,nd->na", tmp, data.bases[m])
        left = np.broadcast_to(np.eye(r1), (n, r1, r1))
        pred = None
        for m in range(M):
            ra, d, rb = cores[m].shape
            q = (data.bases[m][:, :, None] * rights[m][:, None, :]).reshape(n, d * rb)
            phi = np.einsum("nka,nq->nkaq", left, q).reshape(n * r1, ra * d * rb)
            x = _spd_solve(phi.T @ phi, phi.T @ targets.reshape(-1), self.config.ridge)
            core = x.reshape(ra, d, rb)
            if m < M - 1:
                qmat, rmat = np.linalg.qr(core.reshape(ra * d, rb))
                core = qmat.reshape(ra, d, qmat.shape[1])
                cores[m + 1] = np.tensordot(rmat, cores[m + 1], axes=(1, 0))
            else:
                pred = (phi @ x).reshape(n, r1)
            cores[m] = core
            local = np.einsum("adb,nd->nab", core, data.bases[m])
            left = np.einsum("nka,nab->nkb", left, local)
        loss = const.sum() + np.sum((targets - pred) ** 2)
        return phys, cores, float(np.sqrt(max(loss, 0.0) / self.total))

    def validation_error(self, phys, cores):
        data = self.valid
        if data is None or data.n == 0:
            return np.nan
        targets, const = self.residual_constant(phys, data)
        pred = _features(cores, data.bases)
        err = const + np.sum((targets - pred) ** 2, axis=1)
        return float(np.sqrt(err.sum() / max(data.norm2.sum(), np.finfo(float).tiny)))


def _random_cores(dims, ranks, rng):
    full = list(ranks) + [1]
    cores = []
    for m, d in enumerate(dims):
        core = 0.1 * rng.standard_normal((full[m], d, full[m + 1]))
        core[:, 0, :] += np.eye(full[m], full[m + 1])
        cores.append(core)
    return cores


def _grow_bond(phys, cores, bond, rng):
    """Increase one internal rank without changing the represented function."""
    cores = [c.copy() for c in cores]
    if bond == 0:
        phys = np.hstack([phys, np.zeros((phys.shape[0], 1))])
    else:
        c = cores[bond - 1]
        cores[bond - 1] = np.concatenate([c, np.zeros(c.shape[:2] + (1,))], axis=2)
    c = cores[bond]
    row = rng.standard_normal((1,) + c.shape[1:])
    row *= np.linalg.norm(c) / max(np.linalg.norm(row), np.finfo(float).tiny)
    cores[bond] = np.concatenate([c, row], axis=0)
    return phys, cores


def _max_bond_ranks(n_phys, dims):
    out = []
    for k in range(len(dims)):
        left = n_phys * int(np.prod(dims[:k]))
        right = int(np.prod(dims[k:]))
        out.append(min(left, right))
    return out


def vmc_fit_detailed(space: DiscreteSpace, samples: SampleSet, config: FitConfig | None = None,
                     init: TensorTrain | None = None) -> FitResult:
    """Fit a surrogate train to solved samples; see :func:`vmc_fit`."""
    config = config or FitConfig()
    mesh, dims, family = space.mesh, space.dims, space.family
    M = len(dims)
    if M < 1:
        raise ValueError("the surrogate needs at least one stochastic mode")
    if samples.snapshots is None or samples.mesh is not mesh:
        raise ValueError("samples must be solved on the space's mesh")
    if samples.params.shape[1] < M:
        raise ValueError("samples carry fewer coordinates than active modes")
    rng = np.random.default_rng(config.seed)
    free = mesh.free_dofs
    u = samples.snapshots[:, free]
    n = samples.n

    if init is not None:
        if init.dims != dims:
            raise ValueError(f"initial train has dims {init.dims}, expected {dims}")
        cores = [c.copy() for c in init.cores[1:]]
    else:
        ranks = [config.initial_rank] * M
        cores = _random_cores(dims, ranks, rng)
    bond_caps = [min(c, config.max_rank) for c in _max_bond_ranks(len(free), dims)]
    for k in range(M):
        # clip infeasible initial ranks
        if cores[k].shape[0] > bond_caps[k]:
            raise ValueError(f"initial rank {cores[k].shape[0]} exceeds feasible {bond_caps[k]}")
    if n < cores[0].shape[0]:
        raise ValueError(f"need at least {cores[0].shape[0]} samples for the initial ranks")

    def zero_result():
        out = [np.zeros((1, mesh.n_vertices, 1))] + [np.zeros((1, d, 1)) for d in dims]
        return FitResult(TensorTrain(out), 0.0, 0.0, 0)

    if not np.any(u):
        return zero_result()

    stiffness = assemble_stiffness(mesh, 1.0)
    su = np.asarray((stiffness @ u.T).T)
    bases = [eval_basis(family, m, d, samples.params[:, m]) for m, d in enumerate(dims)]
    n_val = int(np.floor(config.validation_fraction * n)) if config.validation_fraction > 0 else 0
    stride = int(round(1.0 / config.validation_fraction)) if n_val else 0
    is_val = np.zeros(n, dtype=bool)
    if n_val:
        is_val[::stride] = True
        if is_val.sum() >= n:
            is_val[:] = False
    tr, va = ~is_val, is_val
    train = _Problem(u[tr], su[tr], [b[tr] for b in bases])
    valid = _Problem(u[va], su[va], [b[va] for b in bases]) if va.any() else None
    als = _ALS(train, valid, stiffness, config)

    history = []
    budget = [config.max_sweeps]
    phys = np.zeros((len(free), cores[0].shape[0]))

    def run(phys, cores, max_sweeps):
        err = np.inf
        for _ in range(max_sweeps):
            if budget[0] <= 0:
                break
            budget[0] -= 1
            phys, cores, new = als.sweep(phys, cores)
            history.append(new)
            stalled = err < np.inf and (err - new) <= config.stagnation_tol * err
            err = new
            if new < 1e-14 or stalled:
                break
        return phys, cores, err

    phys, cores, err = run(phys, cores, config.phase_sweeps)
    val = als.validation_error(phys, cores)
    best = (val if valid is not None else err, phys, cores, err, val)
    fails = 0
    while config.rank_adapt and valid is not None and fails < config.patience and budget[0] > 0:
        ranks = [c.shape[0] for c in cores]
        bonds = [k for k in range(M) if ranks[k] < bond_caps[k]]
        if not bonds:
            break
        probes = []
        for k in bonds:
            p, c = _grow_bond(phys, cores, k, rng)
            p, c, _ = run(p, c, config.probe_sweeps)
            probes.append((als.validation_error(p, c), k, p, c))
        probes.sort(key=lambda item: (item[0], item[1]))
        _, _, phys, cores = probes[0]
        phys, cores, err = run(phys, cores, config.phase_sweeps)
        val = als.validation_error(phys, cores)
        if val < best[0] * (1.0 - config.rank_improvement):
            best = (val, phys, cores, err, val)
            fails = 0
        else:
            fails += 1
        log.debug("rank probe: ranks=%s val=%.3e", [c.shape[0] for c in cores], val)
    _, phys, cores, err, val = best
    full_phys = np.zeros((mesh.n_vertices, phys.shape[1]))
    full_phys[free] = phys
    tt = TensorTrain([full_phys[None]] + list(cores))
    return FitResult(tt, err, val, len(history), history)


def vmc_fit(space: DiscreteSpace, samples: SampleSet, config: FitConfig | None = None,
            init: TensorTrain | None = None) -> TensorTrain:
    """Empirical best approximation of the snapshots in a low-rank train.

    Ranks grow greedily: after the sweeps stagnate, every bond is probed with
    one extra rank and the probe with the lowest validation error is kept.
    The fit stops after ``patience`` rounds without validation improvement
    and returns the validation-best iterate.
    """
    return vmc_fit_detailed(space, samples, config, init).tt


def relative_empirical_error(tt: TensorTrain, space: DiscreteSpace, samples: SampleSet) -> float:
    from .tt import tt_eval_param

    pred = tt_eval_param(tt, space.family, samples.params[:, : space.n_modes])
    diff = [h1_seminorm(space.mesh, p - s) ** 2 for p, s in zip(pred, samples.snapshots)]
    norm = [h1_seminorm(space.mesh, s) ** 2 for s in samples.snapshots]
    return float(np.sqrt(np.sum(diff) / np.sum(norm)))
