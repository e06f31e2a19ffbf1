import numpy as np
import pytest
import scipy.sparse as sp

from bimatern.sparse import (
    IndexOutOfBounds,
    NotPositiveDefinite,
    assemble,
    block_diag,
    kron,
    spd_factorize,
)


def random_spd(n, seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, n))
    return sp.csc_matrix(a.T @ a + n * np.eye(n))


def test_assemble_sums_duplicates():
    m = assemble([(0, 0, 1.0), (0, 0, 2.0)], 1, 1)
    assert m.toarray().tolist() == [[3.0]]


def test_assemble_empty_is_zero():
    m = assemble([], 2, 2)
    assert m.toarray() == pytest.approx(np.zeros((2, 2)))


def test_assemble_symmetric_offdiag():
    m = assemble([(0, 1, 5.0), (1, 0, 5.0)], 2, 2)
    assert m.toarray().tolist() == [[0, 5], [5, 0]]


def test_assemble_out_of_bounds():
    with pytest.raises(IndexOutOfBounds):
        assemble([(2, 0, 1.0)], 2, 2)


def test_assemble_order_invariant():
    trips = [(0, 1, 2.0), (1, 1, -1.0), (0, 0, 3.0), (0, 1, 1.0)]
    m1 = assemble(trips, 2, 2).toarray()
    m2 = assemble(trips[::-1], 2, 2).toarray()
    assert m1 == pytest.approx(m2)


def test_factor_identity_logdet():
    f = spd_factorize(sp.identity(3, format="csc"))
    assert f.logdet == pytest.approx(0.0)


def test_factor_diag_logdet():
    f = spd_factorize(sp.diags([2.0, 2.0]).tocsc())
    assert f.logdet == pytest.approx(2 * np.log(2.0))


def test_factor_logdet_matches_dense_eigvals():
    q = random_spd(50, seed=7)
    f = spd_factorize(q)
    dense_logdet = float(np.sum(np.log(np.linalg.eigvalsh(q.toarray()))))
    assert f.logdet == pytest.approx(dense_logdet, abs=1e-8)


def test_factor_reconstruction():
    q = random_spd(40, seed=3)
    f = spd_factorize(q)
    recon = (f.lower @ f.lower.T).toarray()
    qd = q.toarray()[np.ix_(f.perm, f.perm)]
    scale = np.abs(q.toarray()).max()
    assert np.abs(recon - qd).max() <= 1e-8 * scale


def test_factor_logdet_diag_identity():
    q = random_spd(20, seed=5)
    f = spd_factorize(q)
    ld = 2.0 * np.sum(np.log(f.lower.diagonal()))
    assert ld == pytest.approx(f.logdet)


def test_not_positive_definite():
    q = sp.diags([1.0, -1.0]).tocsc()
    with pytest.raises(NotPositiveDefinite):
        spd_factorize(q)


def test_solve_identity():
    f = spd_factorize(sp.identity(3, format="csc"))
    assert f.solve(np.array([1.0, 2.0, 3.0])) == pytest.approx([1, 2, 3])


def test_solve_diag():
    f = spd_factorize(sp.diags([2.0, 4.0]).tocsc())
    assert f.solve(np.array([2.0, 4.0])) == pytest.approx([1, 1])


def test_solve_matches_dense():
    q = random_spd(30, seed=11)
    f = spd_factorize(q)
    rng = np.random.default_rng(0)
    b = rng.standard_normal(30)
    assert f.solve(b) == pytest.approx(np.linalg.solve(q.toarray(), b), abs=1e-8)


def test_solve_residual_bound():
    q = random_spd(30, seed=13)
    f = spd_factorize(q)
    b = np.ones(30)
    x = f.solve(b)
    resid = np.abs(q @ x - b).max()
    assert resid <= 1e-8 * (1 + np.abs(b).max())


def test_solve_matrix_rhs():
    q = random_spd(10, seed=2)
    f = spd_factorize(q)
    b = np.eye(10)
    x = f.solve(b)
    assert x == pytest.approx(np.linalg.inv(q.toarray()), abs=1e-8)


def test_kron_identity_blockdiag():
    rng = np.random.default_rng(4)
    l = sp.csc_matrix(rng.standard_normal((3, 3)))
    k = kron(np.eye(2), l)
    expect = block_diag([l, l])
    assert (k - expect).nnz == 0 or np.abs((k - expect).toarray()).max() == 0


def test_kron_swap_blocks():
    d = np.array([[0.0, 1.0], [1.0, 0.0]])
    k = kron(d, np.eye(2)).toarray()
    expect = np.kron(d, np.eye(2))
    assert k == pytest.approx(expect)


def test_kron_matches_dense():
    rng = np.random.default_rng(9)
    a = rng.standard_normal((2, 2))
    b = rng.standard_normal((3, 3))
    assert kron(a, b).toarray() == pytest.approx(np.kron(a, b))


def test_exp_logdet_matches_eigenvalue_product():
    for seed in range(5):
        q = random_spd(12, seed=seed)
        f = spd_factorize(q)
        eig_prod = float(np.prod(np.linalg.eigvalsh(q.toarray())))
        assert np.exp(f.logdet) == pytest.approx(eig_prod, rel=1e-6)


def test_sample_transform_covariance():
    # x with x[perm] = L^{-T} z has covariance Q^{-1}
    q = random_spd(6, seed=21)
    f = spd_factorize(q)
    linv = np.linalg.inv(f.lower.toarray())
    cov = np.zeros((6, 6))
    t = linv.T @ linv  # L^{-T} L^{-1}
    cov[np.ix_(f.perm, f.perm)] = t
    assert cov == pytest.approx(np.linalg.inv(q.toarray()), abs=1e-10)
