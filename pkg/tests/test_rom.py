import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from romtopo.rom import (RomConfig, RomUnavailable, reduced_operator, rom_residual_norm,
                         rom_solve, rom_threshold)

from conftest import random_spd


def test_exact_subspace_recovers_solution(rng):
    A = random_spd(30, rng)
    Phi, _ = np.linalg.qr(rng.standard_normal((30, 4)))
    x_star = Phi @ rng.standard_normal(4)
    x, _ = rom_solve(A, A @ x_star, Phi)
    assert np.linalg.norm(x - x_star) <= 1e-12 * np.linalg.norm(x_star) * np.linalg.cond(A)
    assert rom_residual_norm(A, A @ x_star, x) <= 1e-12


def test_single_column_diagonal():
    A = sp.diags([4.0, 2.0, 1.0]).tocsr()
    b = np.array([2.0, 1.0, 1.0])
    x, xhat = rom_solve(A, b, np.eye(3)[:, :1])
    np.testing.assert_allclose(xhat, [0.5])
    np.testing.assert_allclose(x, [0.5, 0.0, 0.0])


def test_rom_is_a_norm_optimal(rng):
    A = random_spd(40, rng, cond=1e2)
    Phi, _ = np.linalg.qr(rng.standard_normal((40, 5)))
    b = rng.standard_normal(40)
    x_ref = rng.standard_normal(40)
    x_star = np.linalg.solve(A, b)
    x, _ = rom_solve(A, b, Phi, x_ref)

    def anorm(v):
        return np.sqrt(v @ A @ v)

    # dense oracle: minimise ||x* - x_ref - Phi y||_A by least squares in the A-inner product
    L = np.linalg.cholesky(A)
    y, *_ = np.linalg.lstsq(L.T @ Phi, L.T @ (x_star - x_ref), rcond=None)
    np.testing.assert_allclose(x, x_ref + Phi @ y, rtol=1e-10, atol=1e-10)
    for _ in range(50):
        v = Phi @ rng.standard_normal(5)
        assert anorm(x_star - x) <= anorm(x_star - (x_ref + v)) + 1e-10
    # Galerkin condition
    assert np.linalg.norm(Phi.T @ (b - A @ x)) <= 1e-10 * np.linalg.norm(b)


def test_residual_norm_examples(rng):
    A = random_spd(20, rng)
    b = rng.standard_normal(20)
    assert rom_residual_norm(A, b, np.zeros(20)) == 1.0
    x = rng.standard_normal(20)
    assert rom_residual_norm(A, b, x) == pytest.approx(
        np.linalg.norm(b - A @ x) / np.linalg.norm(b), rel=1e-14)
    assert rom_residual_norm(A, np.zeros(20), np.zeros(20)) == 0.0


def test_threshold_examples():
    assert rom_threshold(1e-2, 0.5) == pytest.approx(5e-3, rel=1e-15)
    assert rom_threshold(1e-2, 0.0) == 0.0
    assert rom_threshold(1e-3, 1e-3) == pytest.approx(1e-6, rel=1e-15)
    with pytest.raises(ValueError):
        rom_threshold(1e-2, -1.0)


@given(st.floats(1e-6, 0.99), st.floats(1e-6, 0.99), st.floats(0.0, 10.0), st.floats(0.0, 1.0))
def test_acceptance_monotone_in_kappa(k1, k2, r_kkt, r_rom):
    lo, hi = min(k1, k2), max(k1, k2)
    if r_rom < rom_threshold(lo, r_kkt):
        assert r_rom < rom_threshold(hi, r_kkt)


def test_unavailable_cases(rng):
    A = random_spd(5, rng)
    with pytest.raises(RomUnavailable):
        rom_solve(A, np.ones(5), np.zeros((5, 0)))
    Phi = np.column_stack([np.eye(5)[:, 0], np.eye(5)[:, 0]])  # singular reduced operator
    with pytest.raises(RomUnavailable):
        rom_solve(A, np.ones(5), Phi)


def test_reduced_operator_symmetric(rng):
    A = sp.csr_matrix(random_spd(15, rng))
    Phi, _ = np.linalg.qr(rng.standard_normal((15, 3)))
    G, _ = reduced_operator(A, Phi)
    np.testing.assert_array_equal(G, G.T)


def test_config_validation():
    with pytest.raises(ValueError):
        RomConfig(kappa_rom=1.0)
    with pytest.raises(ValueError):
        RomConfig(x_ref="random")
