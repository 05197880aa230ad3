"""Solver handles, refinement gate, and the dense elimination oracle."""

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from elwave import fem, linalg
from elwave.mesh import build_rect_mesh


def _random_spd(n, rng, scale=1.0):
    b = rng.standard_normal((n, n))
    return b @ b.T + n * scale * np.eye(n)


def test_dense_oracle_matches_closed_form():
    a = np.array([[2.0, 1.0], [1.0, 3.0]])
    b = np.array([5.0, 10.0])
    # by hand: det = 5, x = (A^-1 b) = ([3,-1;-1,2] b)/5 = (5, 15)/5
    x = linalg.dense_oracle_solve(a, b)
    assert np.allclose(x, [1.0, 3.0], atol=1e-14)


def test_dense_oracle_pivots():
    # zero leading pivot forces a row swap
    a = np.array([[0.0, 1.0], [1.0, 0.0]])
    x = linalg.dense_oracle_solve(a, np.array([2.0, 3.0]))
    assert np.allclose(x, [3.0, 2.0], atol=1e-15)


def test_dense_oracle_guards():
    with pytest.raises(np.linalg.LinAlgError):
        linalg.dense_oracle_solve(np.zeros((2, 2)), np.ones(2))
    with pytest.raises(ValueError, match="capped"):
        linalg.dense_oracle_solve(np.eye(201), np.ones(201))
    with pytest.raises(ValueError, match="shapes"):
        linalg.dense_oracle_solve(np.eye(3), np.ones(4))


def test_prepare_rejects_nonsymmetric():
    a = sp.csr_matrix(np.array([[2.0, 1.0], [0.9, 2.0]]))
    with pytest.raises(ValueError, match="symmetric"):
        linalg.prepare_spd(a)


def test_prepare_rejects_nonsquare():
    with pytest.raises(ValueError, match="square"):
        linalg.prepare_spd(sp.csr_matrix(np.ones((2, 3))))


def test_solve_matches_dense_oracle(rng):
    a = _random_spd(40, rng)
    handle = linalg.prepare_spd(sp.csr_matrix(a))
    b = rng.standard_normal(40)
    x = linalg.solve(handle, b)
    x_ref = linalg.dense_oracle_solve(a, b)
    assert np.linalg.norm(x - x_ref) <= 1e-10 * np.linalg.norm(x_ref)


def test_solve_zero_rhs_and_shape_guard(rng):
    handle = linalg.prepare_spd(sp.csr_matrix(_random_spd(5, rng)))
    assert np.array_equal(linalg.solve(handle, np.zeros(5)), np.zeros(5))
    with pytest.raises(ValueError, match="shape"):
        linalg.solve(handle, np.zeros(6))


def test_backward_error_gate_on_assembled_stiffness(rng):
    dm = fem.make_dofmap(build_rect_mesh((-1.0, 1.0, -1.0, 1.0), 16, 16))
    a = fem.apply_dirichlet(fem.assemble_elasticity(dm, 1.0, 1.0), dm.constrained)
    handle = linalg.prepare_spd(a)
    b = rng.standard_normal(dm.n_dofs)
    b[dm.constrained] = 0.0
    x = linalg.solve(handle, b)
    r = b - a @ x
    norm1 = np.max(np.abs(a).sum(axis=0))
    bwe = np.linalg.norm(r) / (norm1 * np.linalg.norm(x) + np.linalg.norm(b))
    assert bwe <= linalg.RESIDUAL_TOL


def test_handle_records_one_norm(rng):
    a = sp.csr_matrix(_random_spd(7, rng))
    handle = linalg.prepare_spd(a)
    assert handle.norm1 == pytest.approx(np.max(np.abs(a.toarray()).sum(axis=0)), rel=1e-15)
    assert handle.n == 7


@given(seed=st.integers(min_value=0, max_value=2**31), n=st.integers(min_value=1, max_value=25))
def test_property_solve_agrees_with_oracle(seed, n):
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, 0], dtype=np.uint64)))
    a = _random_spd(n, rng)
    b = rng.standard_normal(n)
    handle = linalg.prepare_spd(sp.csr_matrix(a))
    x = linalg.solve(handle, b)
    x_ref = linalg.dense_oracle_solve(a, b)
    assert np.linalg.norm(x - x_ref) <= 1e-9 * max(1.0, np.linalg.norm(x_ref))
