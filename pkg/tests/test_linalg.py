import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fairwin import linalg
from fairwin.errors import ConvergenceError, NumericalError, RankError, ShapeError


def triple_loop(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            acc = 0.0
            for t in range(a.shape[1]):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def charpoly_eigenvalues(g):
    """Eigenvalues of a symmetric matrix via Faddeev-LeVerrier and polynomial roots."""
    n = g.shape[0]
    coeffs = [1.0]
    m = np.zeros_like(g)
    for k in range(1, n + 1):
        m = g @ m + coeffs[-1] * np.eye(n)
        coeffs.append(-np.trace(g @ m) / k)
    return np.sort(np.real(np.roots(coeffs)))[::-1]


# matmul

def test_matmul_identity():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(linalg.matmul(a, np.eye(2)), a)


def test_matmul_row_by_column():
    assert linalg.matmul([[1.0, 2.0]], [[3.0], [4.0]]).tolist() == [[11.0]]


def test_matmul_matches_triple_loop(rng):
    a, b = rng.normal(size=(5, 3)), rng.normal(size=(3, 4))
    np.testing.assert_allclose(linalg.matmul(a, b), triple_loop(a, b), atol=1e-12, rtol=0)


def test_matmul_shape_error():
    with pytest.raises(ShapeError):
        linalg.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_non_finite_rejected():
    with pytest.raises(NumericalError):
        linalg.svd(np.array([[np.nan, 1.0]]))


# scale_rows

def test_scale_rows_identity_and_hand_case(rng):
    m = rng.normal(size=(3, 2))
    np.testing.assert_array_equal(linalg.scale_rows(np.ones(3), m), m)
    assert linalg.scale_rows([2.0, 0.0], np.ones((2, 2))).tolist() == [[2.0, 2.0], [0.0, 0.0]]


def test_scale_rows_matches_loop_and_expansion(rng):
    d, m = rng.uniform(0, 3, size=6), rng.normal(size=(6, 4))
    loop = np.array([[d[i] * m[i, j] for j in range(4)] for i in range(6)])
    out = linalg.scale_rows(d, m)
    np.testing.assert_allclose(out, loop, atol=1e-14, rtol=0)
    np.testing.assert_allclose(out, linalg.matmul(np.diag(d), m), atol=1e-14, rtol=0)


def test_scale_rows_shape_error():
    with pytest.raises(ShapeError):
        linalg.scale_rows(np.ones(3), np.ones((2, 2)))


def test_scale_rows_does_not_mutate(rng):
    d, m = rng.uniform(size=3), rng.normal(size=(3, 3))
    d0, m0 = d.copy(), m.copy()
    linalg.scale_rows(d, m)
    np.testing.assert_array_equal(d, d0)
    np.testing.assert_array_equal(m, m0)


# svd

def test_svd_diagonal(backend):
    res = linalg.svd(np.diag([3.0, 2.0]))
    np.testing.assert_allclose(res.s, [3.0, 2.0])
    np.testing.assert_allclose(res.u, np.eye(2))
    np.testing.assert_allclose(res.v, np.eye(2))


def test_svd_zero_matrix(backend):
    res = linalg.svd(np.zeros((2, 2)))
    np.testing.assert_array_equal(res.s, [0.0, 0.0])
    np.testing.assert_allclose(res.u.T @ res.u, np.eye(2), atol=1e-12)


def test_svd_against_gram_charpoly(backend, rng):
    m = rng.normal(size=(6, 4))
    res = linalg.svd(m)
    assert np.linalg.norm(res.reconstruct() - m) < 1e-8
    np.testing.assert_allclose(np.square(res.s), charpoly_eigenvalues(m.T @ m), rtol=1e-8, atol=1e-10)


def _check_invariants(m, res):
    p = min(m.shape)
    assert res.u.shape == (m.shape[0], p) and res.v.shape == (m.shape[1], p)
    assert np.all(np.diff(res.s) <= 0) and np.all(res.s >= 0)
    np.testing.assert_allclose(res.u.T @ res.u, np.eye(p), atol=1e-8)
    np.testing.assert_allclose(res.v.T @ res.v, np.eye(p), atol=1e-8)
    scale = max(np.linalg.norm(m), 1.0)
    assert np.linalg.norm(res.reconstruct() - m) / scale < 1e-8
    idx = np.argmax(np.abs(res.u), axis=0)
    assert np.all(res.u[idx, np.arange(p)] >= 0)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 7), st.integers(1, 7)),
              elements=st.one_of(st.integers(-3, 3).map(float), st.floats(-1e150, 1e150, allow_nan=False))))
def test_svd_invariants_property(m):
    _check_invariants(m, linalg.svd(m))


@pytest.mark.parametrize("shape", [(1, 1), (1, 5), (5, 1), (3, 7), (9, 4)])
def test_svd_shapes(backend, rng, shape):
    m = rng.normal(size=shape)
    _check_invariants(m, linalg.svd(m))


def test_svd_rank_deficient(backend, rng):
    m = rng.normal(size=(6, 1)) @ rng.normal(size=(1, 4))
    res = linalg.svd(m)
    _check_invariants(m, res)
    assert np.all(res.s[1:] < 1e-10 * res.s[0])


def test_svd_deterministic(rng):
    m = rng.normal(size=(5, 3))
    a, b = linalg.svd(m), linalg.svd(m)
    assert a.u.tobytes() == b.u.tobytes() and a.s.tobytes() == b.s.tobytes()


def test_svd_convergence_error_carries_iterations(rng):
    with pytest.raises(ConvergenceError) as info:
        linalg.svd(rng.normal(size=(6, 4)), max_sweeps=1)
    assert info.value.iterations == 1


def test_svd_does_not_mutate(rng):
    m = rng.normal(size=(4, 3))
    m0 = m.copy()
    linalg.svd(m)
    np.testing.assert_array_equal(m, m0)


# truncate

def test_truncate_full_rank_is_noop(rng):
    res = linalg.svd(rng.normal(size=(5, 3)))
    t = linalg.truncate(res, 3)
    np.testing.assert_array_equal(t.u, res.u)
    np.testing.assert_array_equal(t.s, res.s)


def test_truncate_diag_keeps_dominant():
    assert linalg.truncate(linalg.svd(np.diag([3.0, 2.0, 1.0])), 1).s.tolist() == [3.0]


def test_truncate_out_of_range(rng):
    res = linalg.svd(rng.normal(size=(4, 3)))
    for r in (0, 4):
        with pytest.raises(RankError):
            linalg.truncate(res, r)


def test_eckart_young_residual(rng):
    m = rng.normal(size=(8, 4))
    full = linalg.svd(m)
    err = np.linalg.norm(m - linalg.truncate(full, 2).reconstruct())
    assert err == pytest.approx(np.sqrt(full.s[2] ** 2 + full.s[3] ** 2), abs=1e-10)


def test_eckart_young_random_candidates(rng):
    m = rng.normal(size=(8, 5))
    r = 2
    best = np.linalg.norm(m - linalg.truncate(linalg.svd(m), r).reconstruct())
    for _ in range(1000):
        q = rng.normal(size=(8, r)) @ rng.normal(size=(r, 5))
        assert best <= np.linalg.norm(m - q) + 1e-12
