"""Tensor trains with one physical mode followed by stochastic modes.

A :class:`TensorTrain` stores every core as a 3-way array
``(r_left, n, r_right)``.  The first core is the physical component and has
``r_left = 1``; the last core has ``r_right = 1``.  Its 2-D view is available
as :attr:`TensorTrain.physical`.

Rounding follows the classical sweep: orthogonalise right to left, then
truncate singular values left to right with a per-step threshold of
``tol / sqrt(order - 1)`` times the norm.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .basis import eval_basis

DEFAULT_MAX_RANK = 200
_MAGIC = b"TTRN"
_VERSION = 1


@dataclass(frozen=True, eq=False)
class TensorTrain:
    """Tensor train ``T[j, mu_1, ..., mu_M]``.

    Parameters
    ----------
    cores : sequence of ndarray
        Cores of shape ``(r_{k-1}, n_k, r_k)`` with ``r_0 = r_{order} = 1``.
        A 2-D first core of shape ``(J, r_1)`` is accepted as well.
    ortho : int or None
        Orthogonality centre.  Cores left of it are left-orthogonal and cores
        right of it are right-orthogonal.  ``None`` means no guarantee.
    """

    cores: tuple
    ortho: int | None = None

    def __post_init__(self):
        cores = [np.asarray(c, dtype=float) for c in self.cores]
        if not cores:
            raise ValueError("a tensor train needs at least the physical core")
        if cores[0].ndim == 2:
            cores[0] = cores[0][None]
        for k, c in enumerate(cores):
            if c.ndim != 3:
                raise ValueError(f"core {k} must be 3-way")
            if min(c.shape) < 1:
                raise ValueError(f"core {k} has an empty dimension")
        if cores[0].shape[0] != 1 or cores[-1].shape[2] != 1:
            raise ValueError("boundary ranks must be one")
        for k in range(1, len(cores)):
            if cores[k - 1].shape[2] != cores[k].shape[0]:
                raise ValueError(f"rank mismatch between cores {k - 1} and {k}")
        if self.ortho is not None and not 0 <= self.ortho < len(cores):
            raise ValueError("orthogonality centre out of range")
        object.__setattr__(self, "cores", tuple(cores))

    @property
    def order(self) -> int:
        return len(self.cores)

    @property
    def n_modes(self) -> int:
        """Number of stochastic modes."""
        return len(self.cores) - 1

    @property
    def shape(self) -> tuple:
        return tuple(c.shape[1] for c in self.cores)

    @property
    def dims(self) -> tuple:
        """Stochastic mode sizes."""
        return self.shape[1:]

    @property
    def ranks(self) -> tuple:
        """Internal ranks ``(r_1, ..., r_M)``."""
        return tuple(c.shape[2] for c in self.cores[:-1])

    @property
    def physical(self) -> np.ndarray:
        return self.cores[0][0]

    def full(self) -> np.ndarray:
        """Dense tensor; only for small trains."""
        out = self.cores[0][0]
        for c in self.cores[1:]:
            out = np.tensordot(out, c, axes=(-1, 0))
        return out[..., 0] if self.order > 1 else out[:, 0]

    def copy(self) -> "TensorTrain":
        return TensorTrain([c.copy() for c in self.cores], self.ortho)


def _boundary_ranks(tt: TensorTrain) -> list:
    return [1] + list(tt.ranks) + [1]


def zeros_tt(shape) -> TensorTrain:
    return TensorTrain([np.zeros((1, n, 1)) for n in shape])


def rank_one(vectors) -> TensorTrain:
    """Rank-one train from one vector per mode."""
    return TensorTrain([np.asarray(v, dtype=float)[None, :, None] for v in vectors])


def tt_dofs(tt_or_shape, ranks=None) -> int:
    """Dimension of the manifold of trains with the given ranks.

    Counts core entries minus the ``r_k^2`` gauge freedom at each internal
    bond.
    """
    if isinstance(tt_or_shape, TensorTrain):
        shape, ranks = tt_or_shape.shape, tt_or_shape.ranks
    else:
        shape = tuple(tt_or_shape)
        ranks = tuple(ranks)
    if len(ranks) != len(shape) - 1:
        raise ValueError("need one rank per internal bond")
    full = [1] + list(ranks) + [1]
    entries = sum(full[k] * shape[k] * full[k + 1] for k in range(len(shape)))
    return int(entries - sum(r * r for r in ranks))


def _truncation_rank(s: np.ndarray, delta: float, max_rank: int | None) -> int:
    """Smallest rank whose discarded tail has norm at most ``delta``."""
    if s.size == 0 or s[0] == 0:
        return 1
    # tail[r] = norm of s[r:]
    tail = np.sqrt(np.cumsum((s**2)[::-1]))[::-1]
    tail = np.append(tail, 0.0)
    # floating point floor so that tol = 0 still drops numerical noise
    floor = np.finfo(float).eps * s[0] * max(len(s), 1)
    threshold = max(delta, floor)
    rank = int(np.argmax(tail <= threshold))
    rank = max(rank, 1)
    if max_rank is not None:
        rank = min(rank, max_rank)
    return rank


def _svd(mat: np.ndarray):
    try:
        return np.linalg.svd(mat, full_matrices=False)
    except np.linalg.LinAlgError:
        import scipy.linalg

        return scipy.linalg.svd(mat, full_matrices=False, lapack_driver="gesvd")


def tt_from_dense(dense, tol: float = 0.0, max_rank: int | None = DEFAULT_MAX_RANK) -> TensorTrain:
    """Decompose a dense tensor by successive truncated SVDs.

    The first axis is the physical mode.  The relative Frobenius error is at
    most ``tol``.
    """
    dense = np.asarray(dense, dtype=float)
    if dense.ndim < 1:
        raise ValueError("need at least a physical axis")
    if not np.all(np.isfinite(dense)):
        raise ValueError("dense tensor has non-finite entries")
    if tol < 0:
        raise ValueError("tol must be non-negative")
    shape = dense.shape
    order = len(shape)
    if order == 1:
        return TensorTrain([dense[None, :, None]], ortho=0)
    delta = tol / np.sqrt(order - 1) * np.linalg.norm(dense)
    cores = []
    rank = 1
    rest = dense.reshape(1, -1)
    for k in range(order - 1):
        mat = rest.reshape(rank * shape[k], -1)
        u, s, vt = _svd(mat)
        new_rank = _truncation_rank(s, delta, max_rank)
        cores.append(u[:, :new_rank].reshape(rank, shape[k], new_rank))
        rest = s[:new_rank, None] * vt[:new_rank]
        rank = new_rank
    cores.append(rest.reshape(rank, shape[-1], 1))
    return TensorTrain(cores, ortho=order - 1)


def _qr(mat: np.ndarray):
    q, r = np.linalg.qr(mat)
    return q, r


def orthogonalize(tt: TensorTrain, center: int) -> TensorTrain:
    """Move the orthogonality centre to ``center`` by QR sweeps."""
    cores = list(tt.cores)
    order = len(cores)
    if not 0 <= center < order:
        raise ValueError("centre out of range")
    start_left = 0
    start_right = order - 1
    if tt.ortho is not None:
        start_left = tt.ortho if tt.ortho <= center else center
        start_right = tt.ortho if tt.ortho >= center else center
    for k in range(start_left, center):
        r0, n, r1 = cores[k].shape
        q, r = _qr(cores[k].reshape(r0 * n, r1))
        cores[k] = q.reshape(r0, n, q.shape[1])
        cores[k + 1] = np.tensordot(r, cores[k + 1], axes=(1, 0))
    for k in range(start_right, center, -1):
        r0, n, r1 = cores[k].shape
        q, r = _qr(cores[k].reshape(r0, n * r1).T)
        cores[k] = q.T.reshape(q.shape[1], n, r1)
        cores[k - 1] = np.tensordot(cores[k - 1], r.T, axes=(2, 0))
    return TensorTrain(cores, ortho=center)


def tt_norm(tt: TensorTrain) -> float:
    if tt.ortho is not None:
        return float(np.linalg.norm(tt.cores[tt.ortho]))
    return float(np.linalg.norm(orthogonalize(tt, tt.order - 1).cores[-1]))


def _round_sweep(tt: TensorTrain, tol: float, max_rank: int | None):
    order = tt.order
    if order == 1:
        return TensorTrain(tt.cores, ortho=0), 0.0
    work = orthogonalize(tt, 0)
    cores = list(work.cores)
    norm = np.linalg.norm(cores[0])
    delta = tol / np.sqrt(order - 1) * norm
    discarded = 0.0
    for k in range(order - 1):
        r0, n, r1 = cores[k].shape
        u, s, vt = _svd(cores[k].reshape(r0 * n, r1))
        rank = _truncation_rank(s, delta, max_rank)
        discarded += float(np.sum(s[rank:] ** 2))
        cores[k] = u[:, :rank].reshape(r0, n, rank)
        cores[k + 1] = np.tensordot(s[:rank, None] * vt[:rank], cores[k + 1], axes=(1, 0))
    return TensorTrain(cores, ortho=order - 1), float(np.sqrt(discarded))


def tt_round(tt: TensorTrain, tol: float, max_rank: int | None = DEFAULT_MAX_RANK,
             return_error: bool = False):
    """Round a train to relative accuracy ``tol``.

    The result is left-orthogonal.  With ``return_error=True`` the Frobenius
    norm of the discarded part is returned as well; it equals the actual
    rounding error because the discarded pieces are mutually orthogonal.
    """
    if tol < 0:
        raise ValueError("tol must be non-negative")
    if max_rank is not None and max_rank < 1:
        raise ValueError("max_rank must be positive")
    out, err = _round_sweep(tt, tol, max_rank)
    return (out, err) if return_error else out


def tt_add(x: TensorTrain, y: TensorTrain, alpha: float = 1.0, beta: float = 1.0) -> TensorTrain:
    """``alpha * x + beta * y`` by block concatenation; ranks add."""
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    order = x.order
    if order == 1:
        return TensorTrain([alpha * x.cores[0] + beta * y.cores[0]])
    cores = []
    for k, (a, b) in enumerate(zip(x.cores, y.cores)):
        if k == 0:
            cores.append(np.concatenate([alpha * a, beta * b], axis=2))
        elif k == order - 1:
            cores.append(np.concatenate([a, b], axis=0))
        else:
            ra0, n, ra1 = a.shape
            rb0, _, rb1 = b.shape
            c = np.zeros((ra0 + rb0, n, ra1 + rb1))
            c[:ra0, :, :ra1] = a
            c[ra0:, :, ra1:] = b
            cores.append(c)
    return TensorTrain(cores)


def tt_axpy(alpha: float, x: TensorTrain, y: TensorTrain) -> TensorTrain:
    """``alpha * x + y`` without rounding."""
    return tt_add(x, y, alpha, 1.0)


def tt_scale(tt: TensorTrain, alpha: float) -> TensorTrain:
    cores = list(tt.cores)
    k = tt.ortho if tt.ortho is not None else 0
    cores[k] = alpha * cores[k]
    return TensorTrain(cores, tt.ortho)


def tt_inner(x: TensorTrain, y: TensorTrain) -> float:
    """Euclidean inner product of the full coefficient tensors."""
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    env = np.ones((1, 1))
    for a, b in zip(x.cores, y.cores):
        tmp = np.tensordot(env, a, axes=(0, 0))  # (ry, n, rx')
        env = np.tensordot(tmp, b, axes=([0, 1], [0, 1]))  # (rx', ry')
    return float(env[0, 0])


def tt_eval(tt: TensorTrain, j: int, mu) -> float:
    """Single entry ``T[j, mu]``."""
    mu = tuple(int(m) for m in mu)
    if len(mu) != tt.n_modes:
        raise ValueError("multi-index length does not match the number of modes")
    if not 0 <= j < tt.shape[0] or any(not 0 <= m < n for m, n in zip(mu, tt.dims)):
        raise IndexError("index out of range")
    vec = tt.cores[0][0, j]
    for c, m in zip(tt.cores[1:], mu):
        vec = vec @ c[:, m, :]
    return float(vec[0])


def stochastic_features(tt: TensorTrain, family, params) -> np.ndarray:
    """Contract all stochastic cores with the basis at each parameter.

    Returns an array of shape ``(n, r_1)``.
    """
    params = np.atleast_2d(np.asarray(params, dtype=float))
    n = params.shape[0]
    if params.shape[1] < tt.n_modes:
        raise ValueError("parameter vectors are shorter than the number of modes")
    right = np.ones((n, 1))
    for m in range(tt.n_modes - 1, -1, -1):
        core = tt.cores[m + 1]
        basis = eval_basis(family, m, core.shape[1], params[:, m])
        # (n, r, d, r') x (n, d) x (n, r') -> (n, r)
        tmp = np.einsum("adb,nb->nad", core, right)
        right = np.einsum("nad,nd->na", tmp, basis)
    return right


def tt_eval_param(tt: TensorTrain, family, y) -> np.ndarray:
    """Physical vector ``sum_mu T[:, mu] P_mu(y)``.

    A 2-D ``y`` of shape ``(n, M)`` gives an ``(n, J)`` array.
    """
    y = np.asarray(y, dtype=float)
    feats = stochastic_features(tt, family, np.atleast_2d(y))
    values = feats @ tt.physical.T
    return values[0] if y.ndim == 1 else values


def tt_hadamard_pce(x: TensorTrain, y: TensorTrain, triples) -> TensorTrain:
    """Product of two polynomial chaos trains.

    Physical components multiply entrywise (nodal product).  Stochastic mode
    ``m`` uses ``triples[m]`` of shape ``(out_m, dx_m, dy_m)``: the output
    coefficient is ``sum_{a,b} x_a y_b triples[m][out, a, b]``.  Ranks
    multiply; round afterwards.
    """
    if x.n_modes != y.n_modes:
        raise ValueError("trains have different numbers of modes")
    if x.shape[0] != y.shape[0]:
        raise ValueError("physical sizes differ")
    if len(triples) != x.n_modes:
        raise ValueError("need one triple tensor per stochastic mode")
    px, py = x.physical, y.physical
    phys = (px[:, :, None] * py[:, None, :]).reshape(px.shape[0], -1)
    cores = [phys[None]]
    for m in range(x.n_modes):
        a, b, t = x.cores[m + 1], y.cores[m + 1], np.asarray(triples[m])
        if t.ndim != 3 or t.shape[1] != a.shape[1] or t.shape[2] != b.shape[1]:
            raise ValueError(f"triple tensor of mode {m} has shape {t.shape}, "
                             f"expected (*, {a.shape[1]}, {b.shape[1]})")
        tmp = np.einsum("lab,iaj->lbij", t, a, optimize=True)
        core = np.einsum("lbij,kbq->ikljq", tmp, b, optimize=True)
        ra0, rb0 = a.shape[0], b.shape[0]
        ra1, rb1 = a.shape[2], b.shape[2]
        cores.append(core.reshape(ra0 * rb0, t.shape[0], ra1 * rb1))
    return TensorTrain(cores)


def tt_hadamard_pce_rounded(x: TensorTrain, y: TensorTrain, triples, tol: float,
                            max_rank: int | None = DEFAULT_MAX_RANK) -> TensorTrain:
    """Product of two trains, compressed core by core while it is formed.

    Avoids materialising cores with product ranks.  A left-to-right sweep
    truncates each product core far below ``tol`` because the unformed right
    part is not orthogonal; a final rounding at ``tol`` sets the ranks.
    """
    if x.n_modes != y.n_modes or len(triples) != x.n_modes:
        raise ValueError("mode count mismatch")
    px, py = x.physical, y.physical
    phys = (px[:, :, None] * py[:, None, :]).reshape(px.shape[0], -1)
    order = x.order
    if order == 1:
        return TensorTrain([phys[None]])
    local_tol = 1e-3 * tol / np.sqrt(order - 1)
    cores = []
    q, r = _qr(phys)
    cores.append(q[None])
    carry = r  # (k, ra*rb)
    for m in range(x.n_modes):
        a, b, t = x.cores[m + 1], y.cores[m + 1], np.asarray(triples[m])
        k = carry.shape[0]
        ra0, dx, ra1 = a.shape
        rb0, dy, rb1 = b.shape
        left = carry.reshape(k, ra0, rb0)
        xa = np.einsum("kab,aic->kcbi", left, a, optimize=True).reshape(k * ra1, rb0 * dx)
        yb = np.einsum("lij,bjd->bild", t, b, optimize=True).reshape(rb0 * dx, -1)
        core = (xa @ yb).reshape(k, ra1, t.shape[0], rb1).transpose(0, 2, 1, 3)
        mat = core.reshape(k * t.shape[0], ra1 * rb1)
        if m == x.n_modes - 1:
            cores.append(mat.reshape(k, t.shape[0], 1))
            break
        u, s, vt = _svd(mat)
        norm = np.linalg.norm(s)
        rank = _truncation_rank(s, local_tol * norm, None)
        cores.append(u[:, :rank].reshape(k, t.shape[0], rank))
        carry = s[:rank, None] * vt[:rank]
    return tt_round(TensorTrain(cores, ortho=order - 1), tol, max_rank)


def pad_dims(tt: TensorTrain, dims) -> TensorTrain:
    """Zero-pad or truncate the stochastic mode sizes to ``dims``."""
    dims = tuple(int(d) for d in dims)
    if len(dims) != tt.n_modes:
        raise ValueError("need one size per stochastic mode")
    cores = [tt.cores[0]]
    for c, d in zip(tt.cores[1:], dims):
        if d < 1:
            raise ValueError("mode sizes must be positive")
        new = np.zeros((c.shape[0], d, c.shape[2]))
        keep = min(d, c.shape[1])
        new[:, :keep] = c[:, :keep]
        cores.append(new)
    return TensorTrain(cores)


def slice_modes(tt: TensorTrain, index_sets) -> TensorTrain:
    """Restrict each stochastic mode to the given index array or slice."""
    if len(index_sets) != tt.n_modes:
        raise ValueError("need one index set per stochastic mode")
    cores = [tt.cores[0]]
    for c, idx in zip(tt.cores[1:], index_sets):
        cores.append(c[:, idx, :])
    return TensorTrain(cores)


def append_modes(tt: TensorTrain, count: int, dim: int = 1) -> TensorTrain:
    """Append stochastic modes that carry the constant polynomial only."""
    cores = list(tt.cores)
    for _ in range(count):
        c = np.zeros((1, dim, 1))
        c[0, 0, 0] = 1.0
        cores.append(c)
    return TensorTrain(cores)


def apply_mode_matrices(tt: TensorTrain, matrices) -> TensorTrain:
    """Multiply stochastic mode ``m`` by ``matrices[m]`` (``None`` skips)."""
    cores = [tt.cores[0]]
    for c, mat in zip(tt.cores[1:], matrices):
        if mat is None:
            cores.append(c)
        else:
            cores.append(np.einsum("ij,ajb->aib", np.asarray(mat), c))
    return TensorTrain(cores)


def with_physical(tt: TensorTrain, physical) -> TensorTrain:
    """Replace the physical component (2-D ``(J, r_1)``)."""
    physical = np.asarray(physical, dtype=float)
    if physical.ndim != 2 or physical.shape[1] != tt.cores[0].shape[2]:
        raise ValueError("physical component has the wrong rank")
    return TensorTrain([physical[None]] + list(tt.cores[1:]))


def right_orthogonal_physical(tt: TensorTrain) -> np.ndarray:
    """Physical component after making all stochastic cores right-orthogonal.

    Row norms of the result equal the norms of the physical slices
    ``T[j, :]``.
    """
    return orthogonalize(tt, 0).physical


class TTOperator:
    """Operator train acting on a :class:`TensorTrain`.

    Parameters
    ----------
    physical : sequence of sparse or dense matrices
        One ``(J_out, J_in)`` matrix per first rank index.
    cores : sequence of ndarray
        Stochastic cores of shape ``(r, q_out, d_in, r')``.
    """

    def __init__(self, physical, cores, symmetric: bool = False):
        self.physical = [sp.csr_matrix(p) if sp.issparse(p) else np.asarray(p, dtype=float)
                         for p in physical]
        self.cores = [np.asarray(c, dtype=float) for c in cores]
        self.symmetric = symmetric
        if not self.physical:
            raise ValueError("operator needs at least one physical slice")
        shapes = {p.shape for p in self.physical}
        if len(shapes) != 1:
            raise ValueError("physical slices must share one shape")
        ranks = [len(self.physical)] + [c.shape[3] for c in self.cores]
        for k, c in enumerate(self.cores):
            if c.ndim != 4 or c.shape[0] != ranks[k]:
                raise ValueError(f"operator core {k} has inconsistent rank")
        if ranks[-1] != 1:
            raise ValueError("last operator rank must be one")
        if symmetric:
            for p in self.physical:
                asym = abs(p - p.T).max() if sp.issparse(p) else np.abs(p - p.T).max()
                if asym > 1e-12 * max(abs(p).max(), np.finfo(float).tiny):
                    raise ValueError("symmetric operator needs symmetric physical slices")

    @property
    def n_modes(self) -> int:
        return len(self.cores)

    @property
    def in_shape(self) -> tuple:
        return (self.physical[0].shape[1],) + tuple(c.shape[2] for c in self.cores)

    @property
    def out_shape(self) -> tuple:
        return (self.physical[0].shape[0],) + tuple(c.shape[1] for c in self.cores)

    @property
    def ranks(self) -> tuple:
        return (len(self.physical),) + tuple(c.shape[3] for c in self.cores[:-1])


def identity_operator(shape) -> TTOperator:
    cores = [np.eye(n)[None, :, :, None] for n in shape[1:]]
    return TTOperator([sp.identity(shape[0], format="csr")], cores, symmetric=True)


def tt_apply(op: TTOperator, x: TensorTrain) -> TensorTrain:
    """Matrix-vector product; ranks multiply."""
    if op.in_shape != x.shape:
        raise ValueError(f"operator input shape {op.in_shape} does not match {x.shape}")
    px = x.physical
    blocks = [np.asarray(p @ px) for p in op.physical]
    phys = np.stack(blocks, axis=1).reshape(op.out_shape[0], -1)
    cores = [phys[None]]
    for w, c in zip(op.cores, x.cores[1:]):
        core = np.einsum("aqdc,bde->abqce", w, c, optimize=True)
        rw0, q, rw1 = w.shape[0], w.shape[1], w.shape[3]
        cores.append(core.reshape(rw0 * c.shape[0], q, rw1 * c.shape[2]))
    return TensorTrain(cores)


def save_tt(tt: TensorTrain, path) -> None:
    """Write the binary ``TTRN`` format.

    Layout: magic ``TTRN``, version (u32), order (u32), mode sizes
    (``order`` x u64), ranks including both boundary ones
    (``order + 1`` x u64), then every core as little-endian float64 in
    row-major order.
    """
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, tt.order))
        fh.write(struct.pack(f"<{tt.order}Q", *tt.shape))
        ranks = _boundary_ranks(tt)
        fh.write(struct.pack(f"<{len(ranks)}Q", *ranks))
        for c in tt.cores:
            fh.write(np.ascontiguousarray(c, dtype="<f8").tobytes())


def load_tt(path) -> TensorTrain:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _MAGIC:
        raise ValueError("not a TTRN file")
    version, order = struct.unpack_from("<II", data, 4)
    if version != _VERSION:
        raise ValueError(f"unsupported TTRN version {version}")
    offset = 12
    shape = struct.unpack_from(f"<{order}Q", data, offset)
    offset += 8 * order
    ranks = struct.unpack_from(f"<{order + 1}Q", data, offset)
    offset += 8 * (order + 1)
    cores = []
    for k in range(order):
        count = ranks[k] * shape[k] * ranks[k + 1]
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset)
        cores.append(arr.reshape(ranks[k], shape[k], ranks[k + 1]).astype(float))
        offset += 8 * count
    if offset != len(data):
        raise ValueError("trailing bytes in TTRN file")
    return TensorTrain(cores)
