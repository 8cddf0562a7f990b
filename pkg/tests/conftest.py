import numpy as np
import pytest
import scipy.sparse as sp


def laplacian_2d(m: int) -> sp.csr_matrix:
    """Five-point Dirichlet Laplacian on an m-by-m interior grid."""
    T = sp.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(m, m))
    I = sp.identity(m)
    A = (sp.kron(I, T) + sp.kron(T, I)).tocsr()
    A.sort_indices()
    return A


def random_spd(n: int, rng, cond: float = 1e3) -> np.ndarray:
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return (Q * np.geomspace(1.0, cond, n)) @ Q.T


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
