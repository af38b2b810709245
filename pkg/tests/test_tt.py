import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from avmc.basis import hermite, legendre, triple_tensor
from avmc.tt import (TensorTrain, TTOperator, append_modes, identity_operator, load_tt,
                     orthogonalize, pad_dims, rank_one, save_tt, slice_modes, stochastic_features,
                     tt_add, tt_apply, tt_axpy, tt_dofs, tt_eval, tt_eval_param, tt_from_dense,
                     tt_hadamard_pce, tt_hadamard_pce_rounded, tt_inner, tt_norm, tt_round,
                     tt_scale, zeros_tt)


def random_tt(rng, shape, ranks, scale=1.0):
    r = [1] + list(ranks) + [1]
    return TensorTrain([scale * rng.standard_normal((r[k], n, r[k + 1]))
                        for k, n in enumerate(shape)])


def jacobian_rank(shape, ranks, rng):
    """Rank of the derivative of the core-to-tensor map at a random point."""
    tt = random_tt(rng, shape, ranks)
    cols = []
    for k, core in enumerate(tt.cores):
        for idx in np.ndindex(core.shape):
            cores = [c.copy() for c in tt.cores]
            cores[k] = np.zeros_like(core)
            cores[k][idx] = 1.0
            # the map is linear in each core, so this is the partial derivative
            cols.append(TensorTrain(cores).full().ravel())
    return np.linalg.matrix_rank(np.array(cols).T, tol=1e-8)


# construction and counting

def test_tt_dofs_examples():
    assert tt_dofs((10, 3, 3), (2, 2)) == 30
    assert tt_dofs((2, 2), (1,)) == 3
    J0, delta, M = 7, 4, 3
    assert tt_dofs((J0,) + (delta,) * M, (1,) * M) == J0 - 1 + (M - 1) * (delta - 1) + delta


@pytest.mark.parametrize("seed", range(20))
def test_tt_dofs_matches_manifold_dimension(seed):
    rng = np.random.default_rng(seed)
    order = rng.integers(2, 4)
    shape = tuple(int(s) for s in rng.integers(2, 4, size=order))
    ranks = []
    for k in range(order - 1):
        cap = min(int(np.prod(shape[: k + 1])), int(np.prod(shape[k + 1:])))
        ranks.append(int(rng.integers(1, cap + 1)))
    # ranks must be feasible so that the random point is generic
    for k in range(1, order - 1):
        ranks[k] = min(ranks[k], ranks[k - 1] * shape[k])
    for k in range(order - 3, -1, -1):
        ranks[k] = min(ranks[k], ranks[k + 1] * shape[k + 1])
    assert tt_dofs(shape, ranks) == jacobian_rank(shape, ranks, rng)


def test_from_dense_rank_one_outer_product():
    rng = np.random.default_rng(0)
    u, v, w = rng.standard_normal(4), rng.standard_normal(3), rng.standard_normal(5)
    tt = tt_from_dense(np.einsum("i,j,k->ijk", u, v, w))
    assert tt.ranks == (1, 1)


def test_from_dense_reconstruction():
    rng = np.random.default_rng(1)
    dense = rng.standard_normal((4, 3, 3))
    tt = tt_from_dense(dense)
    assert np.linalg.norm(tt.full() - dense) <= 1e-12 * np.linalg.norm(dense)


def test_from_dense_zero_tensor():
    tt = tt_from_dense(np.zeros((3, 2, 4)), tol=1e-3)
    assert tt.ranks == (1, 1)
    assert tt_norm(tt) == 0.0


def test_from_dense_rejects_empty_mode():
    with pytest.raises(ValueError):
        tt_from_dense(np.zeros((3, 0, 2)))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 5), min_size=2, max_size=5), st.integers(0, 2**31))
def test_from_dense_round_trip(shape, seed):
    if np.prod(shape) > 4096:
        return
    dense = np.random.default_rng(seed).standard_normal(shape)
    tt = tt_from_dense(dense)
    assert np.linalg.norm(tt.full() - dense) <= 1e-12 * max(np.linalg.norm(dense), 1e-300)


def test_invalid_chain_rejected():
    with pytest.raises(ValueError):
        TensorTrain([np.zeros((1, 3, 2)), np.zeros((3, 2, 1))])


# orthogonalisation and rounding

def test_orthogonalize_preserves_tensor_and_gauge():
    rng = np.random.default_rng(2)
    tt = random_tt(rng, (5, 3, 4, 2), (3, 4, 2))
    for center in range(tt.order):
        ot = orthogonalize(tt, center)
        assert ot.ortho == center
        assert np.allclose(ot.full(), tt.full(), atol=1e-12 * np.abs(tt.full()).max())
        for k in range(center):
            c = ot.cores[k]
            mat = c.reshape(-1, c.shape[2])
            assert np.linalg.norm(mat.T @ mat - np.eye(mat.shape[1])) <= 1e-12
        for k in range(center + 1, tt.order):
            c = ot.cores[k]
            mat = c.reshape(c.shape[0], -1)
            assert np.linalg.norm(mat @ mat.T - np.eye(mat.shape[0])) <= 1e-12


def test_round_padded_rank_one_collapses():
    rng = np.random.default_rng(3)
    base = rank_one([rng.standard_normal(4), rng.standard_normal(3), rng.standard_normal(2)])
    padded = tt_add(base, zeros_tt((4, 3, 2)))
    padded = tt_add(padded, zeros_tt((4, 3, 2)))
    assert padded.ranks == (3, 3)
    assert tt_round(padded, 1e-14).ranks == (1, 1)


def test_round_sum_of_rank_one():
    rng = np.random.default_rng(4)
    a = rank_one([rng.standard_normal(n) for n in (5, 4, 3)])
    b = rank_one([rng.standard_normal(n) for n in (5, 4, 3)])
    assert max(tt_round(tt_add(a, b), 1e-12).ranks) <= 2


def test_round_with_rank_cap_reports_tail_error():
    rng = np.random.default_rng(5)
    tt = random_tt(rng, (6, 5), (5,))
    rounded, err = tt_round(tt, 0.0, max_rank=3, return_error=True)
    assert rounded.ranks == (3,)
    s = np.linalg.svd(tt.full(), compute_uv=False)
    assert err == pytest.approx(np.sqrt(np.sum(s[3:] ** 2)), rel=1e-10)
    assert np.linalg.norm(tt.full() - rounded.full()) == pytest.approx(err, rel=1e-8)


def test_round_zero_tolerance_returns_orthogonal_copy():
    rng = np.random.default_rng(6)
    tt = random_tt(rng, (4, 3, 3), (2, 2))
    rounded = tt_round(tt, 0.0)
    assert rounded.ortho is not None
    assert np.allclose(rounded.full(), tt.full(), atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31), st.floats(1e-8, 0.9))
def test_round_error_contract(seed, tol):
    rng = np.random.default_rng(seed)
    order = int(rng.integers(2, 5))
    shape = tuple(int(s) for s in rng.integers(2, 5, size=order))
    ranks = tuple(int(r) for r in rng.integers(1, 5, size=order - 1))
    tt = random_tt(rng, shape, ranks)
    rounded = tt_round(tt, tol)
    dense = tt.full()
    assert np.linalg.norm(dense - rounded.full()) <= tol * np.linalg.norm(dense) * (1 + 1e-10)
    assert all(a <= b for a, b in zip(rounded.ranks, tt_round(tt, 0.0).ranks))


# arithmetic

def test_axpy_cancellation():
    rng = np.random.default_rng(7)
    x = random_tt(rng, (4, 3, 2), (2, 2))
    diff = tt_axpy(1.0, x, tt_scale(tt_scale(x, -1.0), 1.0))
    assert tt_norm(tt_round(diff, 1e-14)) <= 1e-12 * tt_norm(x)


def test_inner_of_unit_tensors():
    def unit(idx, shape):
        return rank_one([np.eye(n)[i] for i, n in zip(idx, shape)])

    shape = (3, 2, 2)
    for mu in np.ndindex(shape):
        for nu in np.ndindex(shape):
            assert tt_inner(unit(mu, shape), unit(nu, shape)) == float(mu == nu)


def test_arithmetic_against_dense():
    rng = np.random.default_rng(8)
    x = random_tt(rng, (5, 3, 4), (2, 3))
    y = random_tt(rng, (5, 3, 4), (3, 2))
    X, Y = x.full(), y.full()
    assert np.allclose(tt_add(x, y, 2.0, -0.5).full(), 2 * X - 0.5 * Y, atol=1e-12)
    assert tt_inner(x, y) == pytest.approx(np.sum(X * Y), rel=1e-12)
    assert tt_norm(x) == pytest.approx(np.linalg.norm(X), rel=1e-12)
    assert tt_add(x, y).ranks == (5, 5)


def test_mismatched_shapes_rejected():
    rng = np.random.default_rng(9)
    with pytest.raises(ValueError):
        tt_add(random_tt(rng, (3, 2), (1,)), random_tt(rng, (3, 3), (1,)))
    with pytest.raises(ValueError):
        tt_inner(random_tt(rng, (3, 2), (1,)), random_tt(rng, (3, 3), (1,)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_norm_consistency(seed):
    rng = np.random.default_rng(seed)
    x = random_tt(rng, (4, 3, 3, 2), tuple(int(r) for r in rng.integers(1, 4, size=3)))
    n = tt_norm(x)
    assert abs(n**2 - tt_inner(x, x)) <= 1e-10 * n**2


def test_mode_manipulation():
    rng = np.random.default_rng(10)
    x = random_tt(rng, (4, 3, 2), (2, 2))
    X = x.full()
    padded = pad_dims(x, (5, 3))
    assert padded.shape == (4, 5, 3)
    assert np.allclose(padded.full()[:, :3, :2], X) and not padded.full()[:, 3:].any()
    assert np.allclose(slice_modes(x, [slice(1, 3), [0]]).full(), X[:, 1:3, :1])
    grown = append_modes(x, 2, dim=3)
    assert grown.shape == (4, 3, 2, 3, 3)
    assert np.allclose(grown.full()[..., 0, 0], X)


# evaluation

def test_eval_entry_and_parameter():
    rng = np.random.default_rng(11)
    x = random_tt(rng, (6, 3, 4), (2, 3))
    X = x.full()
    assert tt_eval(x, 4, (2, 1)) == pytest.approx(X[4, 2, 1], rel=1e-13)
    with pytest.raises(IndexError):
        tt_eval(x, 6, (0, 0))
    fam = legendre()
    y = rng.uniform(-1, 1, size=(7, 2))
    from avmc.basis import eval_basis
    b0, b1 = eval_basis(fam, 0, 3, y[:, 0]), eval_basis(fam, 1, 4, y[:, 1])
    expected = np.einsum("jab,na,nb->nj", X, b0, b1)
    assert np.allclose(tt_eval_param(x, fam, y), expected, atol=1e-12)
    assert np.allclose(tt_eval_param(x, fam, y[0]), expected[0], atol=1e-12)
    feats = stochastic_features(x, fam, y)
    assert np.allclose(feats @ x.physical.T, expected, atol=1e-12)


def test_eval_constant_function():
    tt = rank_one([np.ones(5), np.eye(3)[0], np.eye(2)[0]])
    y = np.random.default_rng(0).standard_normal((4, 2))
    assert np.allclose(tt_eval_param(tt, hermite(), y), 1.0)


# products

def test_hadamard_with_constant_is_truncation():
    rng = np.random.default_rng(12)
    fam = hermite()
    one = rank_one([np.ones(5), np.eye(1)[0], np.eye(1)[0]])
    y = random_tt(rng, (5, 4, 3), (2, 2))
    out_dims = (3, 3)
    triples = [triple_tensor(fam, o, 1, d) for o, d in zip(out_dims, y.dims)]
    prod = tt_hadamard_pce(one, y, triples)
    assert np.allclose(prod.full(), y.full()[:, :3, :3], atol=1e-13)


def test_hadamard_square_of_linear_hermite():
    tt = rank_one([np.ones(1), np.eye(2)[1]])
    triples = [triple_tensor(hermite(), 3, 2, 2)]
    sq = tt_hadamard_pce(tt, tt, triples).full()[0]
    assert np.allclose(sq, [1.0, 0.0, np.sqrt(2.0)], atol=1e-14)


def test_hadamard_against_dense_oracle():
    rng = np.random.default_rng(13)
    fam = legendre()
    x = random_tt(rng, (4, 3, 2), (2, 2))
    y = random_tt(rng, (4, 2, 3), (3, 2))
    out_dims = (4, 4)
    t0, t1 = (triple_tensor(fam, o, a, b) for o, a, b in zip(out_dims, x.dims, y.dims))
    expected = np.einsum("jab,jcd,lac,mbd->jlm", x.full(), y.full(), t0, t1)
    prod = tt_hadamard_pce(x, y, [t0, t1])
    assert prod.ranks == (6, 4)
    assert np.allclose(prod.full(), expected, atol=1e-12)
    rounded = tt_hadamard_pce_rounded(x, y, [t0, t1], tol=1e-12)
    assert np.linalg.norm(rounded.full() - expected) <= 1e-10 * np.linalg.norm(expected)


# operators

def test_identity_operator():
    rng = np.random.default_rng(14)
    x = random_tt(rng, (5, 3, 2), (2, 2))
    assert np.allclose(tt_apply(identity_operator(x.shape), x).full(), x.full())


def dense_operator(op):
    mats = [p.toarray() if hasattr(p, "toarray") else np.asarray(p) for p in op.physical]
    full = np.stack(mats, axis=-1)[None]  # (1, J, J, r)
    for core in op.cores:
        full = np.einsum("xabk,kcdl->xacbdl", full, core)
        s = full.shape
        full = full.reshape(1, s[1] * s[2], s[3] * s[4], s[5])
    return full[0, :, :, 0]


def test_apply_against_dense():
    rng = np.random.default_rng(15)
    J, d = 4, (3, 2)
    phys = [rng.standard_normal((J, J)) for _ in range(2)]
    cores = [rng.standard_normal((2, 2, 3, 3)), rng.standard_normal((3, 3, 2, 1))]
    op = TTOperator(phys, cores)
    x = random_tt(rng, (J,) + d, (2, 2))
    out = tt_apply(op, x)
    assert out.shape == (J, 2, 3)
    assert out.ranks == (4, 6)
    expected = dense_operator(op) @ x.full().ravel()
    assert np.allclose(out.full().ravel(), expected, atol=1e-11 * np.abs(expected).max())


def test_apply_separable_physical_slice():
    rng = np.random.default_rng(16)
    K = rng.standard_normal((5, 5))
    op = TTOperator([K], [np.eye(3)[None, :, :, None]])
    x = random_tt(rng, (5, 3), (2,))
    out = tt_apply(op, x)
    assert np.allclose(out.physical, K @ x.physical)


def test_apply_shape_mismatch():
    rng = np.random.default_rng(17)
    with pytest.raises(ValueError):
        tt_apply(identity_operator((4, 3)), random_tt(rng, (4, 2), (1,)))


def test_symmetric_operator_requires_symmetric_slices():
    with pytest.raises(ValueError):
        TTOperator([np.array([[1.0, 2.0], [0.0, 1.0]])], [np.ones((1, 1, 1, 1))], symmetric=True)


# serialisation

def test_save_load_bit_exact(tmp_path):
    rng = np.random.default_rng(18)
    tt = random_tt(rng, (10, 3, 3), (2, 2))
    path = tmp_path / "x.ttrn"
    save_tt(tt, path)
    data = path.read_bytes()
    assert data[:4] == b"TTRN"
    version, order = struct.unpack_from("<II", data, 4)
    assert (version, order) == (1, 3)
    assert struct.unpack_from("<3Q", data, 12) == (10, 3, 3)
    assert struct.unpack_from("<4Q", data, 36) == (1, 2, 2, 1)
    back = load_tt(path)
    for a, b in zip(tt.cores, back.cores):
        assert a.tobytes() == b.tobytes()


def test_load_rejects_garbage(tmp_path):
    path = tmp_path / "bad.ttrn"
    path.write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(ValueError):
        load_tt(path)
