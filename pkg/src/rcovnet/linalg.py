"""Dense symmetric / SPD linear algebra and matrix-variate sampling.

Matrices are plain ``(d, d)`` float64 ndarrays.  Functions that require a
symmetric input symmetrize it first, ``(m + m.T) / 2``, which absorbs the
rounding noise of predicted or accumulated matrices.
"""
from typing import NamedTuple

import numpy as np
from scipy.linalg import solve_triangular

from rcovnet._backend import kernels
from rcovnet.errors import (
    DimensionMismatch,
    InvalidDegreesOfFreedom,
    NoConvergence,
    NotPositiveDefinite,
)

CHOLESKY_REL_TOL = 1e-12
JACOBI_REL_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100


class EigenPair(NamedTuple):
    values: np.ndarray   # (d,), descending
    vectors: np.ndarray  # (d, d), column k pairs with values[k]


def as_square(m):
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise DimensionMismatch(f"expected a non-empty square matrix, got shape {a.shape}")
    return a


def symmetrize(m):
    a = as_square(m)
    return np.ascontiguousarray(0.5 * (a + a.T))


def cholesky(m):
    """Lower-triangular L with L @ L.T == m and a strictly positive diagonal.

    Raises
    ------
    NotPositiveDefinite
        If some pivot is not above ``1e-12 * max(diag(m))``.
    """
    a = symmetrize(m)
    L, bad = kernels.cholesky(a, CHOLESKY_REL_TOL)
    if bad >= 0:
        raise NotPositiveDefinite(f"Cholesky pivot {bad} is not positive")
    return L


def is_spd(m):
    try:
        cholesky(m)
    except (NotPositiveDefinite, DimensionMismatch):
        return False
    return bool(np.all(np.isfinite(m)))


def sym_eig(m, rel_tol=JACOBI_REL_TOL, max_sweeps=JACOBI_MAX_SWEEPS):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Iterates until the off-diagonal Frobenius norm falls below
    ``rel_tol * ||m||_F``.  Eigenvalues are returned in descending order.
    """
    a = symmetrize(m)
    values, vectors, _, converged = kernels.jacobi_eig(a, float(rel_tol), int(max_sweeps))
    if not converged:
        raise NoConvergence(f"Jacobi did not converge in {max_sweeps} sweeps")
    order = np.argsort(-values, kind="stable")
    return EigenPair(values[order], np.ascontiguousarray(vectors[:, order]))


def spd_sqrt(m):
    """Symmetric square root O with O @ O == m."""
    vals, vecs = sym_eig(m)
    if vals[-1] < 0.0:
        # SPD inputs only lose sign through rounding
        if vals[-1] < -1e-10 * max(abs(vals[0]), 1e-300):
            raise NotPositiveDefinite("negative eigenvalue in spd_sqrt")
        vals = np.clip(vals, 0.0, None)
    root = (vecs * np.sqrt(vals)) @ vecs.T
    return symmetrize(root)


def _vech_index(d):
    rows, cols = np.triu_indices(d)
    # column-major lower triangle == row-major upper triangle with (i, j) swapped
    return cols, rows


def vech(m):
    """Stack the lower triangle (diagonal included) column by column."""
    a = as_square(m)
    i, j = _vech_index(a.shape[0])
    return a[i, j].copy()


def vech_len(d):
    return d * (d + 1) // 2


def unvech(v, d):
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] != vech_len(d):
        raise DimensionMismatch(f"vech of a {d}x{d} matrix has length {vech_len(d)}, got {v.shape}")
    out = np.zeros((d, d))
    i, j = _vech_index(d)
    out[i, j] = v
    out[j, i] = v
    return out


class Rng:
    """Seeded random stream; one instance per thread.

    Wraps a PCG64 ``numpy.random.Generator`` so identical seeds produce
    bit-identical draws.
    """

    def __init__(self, seed=0):
        self.seed = int(seed)
        self._seq = np.random.SeedSequence(self.seed)
        self.gen = np.random.Generator(np.random.PCG64(self._seq))

    def spawn(self, n):
        """Independent child streams, e.g. one per replication."""
        children = []
        for child_seq in self._seq.spawn(n):
            r = Rng.__new__(Rng)
            r.seed = self.seed
            r._seq = child_seq
            r.gen = np.random.Generator(np.random.PCG64(child_seq))
            children.append(r)
        return children

    def normal(self, size=None):
        return self.gen.standard_normal(size)

    def gamma(self, shape, size=None):
        return self.gen.standard_gamma(shape, size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.gen.uniform(low, high, size)

    def permutation(self, n):
        return self.gen.permutation(n)


def _bartlett_factor(df, d, rng):
    A = np.tril(rng.normal((d, d)), -1)
    # chi^2_k == 2 * Gamma(k / 2)
    chi2 = 2.0 * rng.gamma((df - np.arange(d)) / 2.0)
    A[np.diag_indices(d)] = np.sqrt(chi2)
    return A


def sample_wishart(df, scale, rng):
    """Draw from Wishart(df, scale) via the Bartlett decomposition.

    Real-valued ``df > d - 1`` is supported; E[draw] = df * scale.
    """
    scale = symmetrize(scale)
    d = scale.shape[0]
    if not df > d - 1:
        raise InvalidDegreesOfFreedom(f"Wishart needs df > {d - 1}, got {df}")
    L = cholesky(scale)
    LA = L @ _bartlett_factor(df, d, rng)
    return symmetrize(LA @ LA.T)


def sample_matrix_f(nu1, nu2, s, rng):
    """Matrix-F draw with mean ``s``.

    Returns ``((nu2 - d - 1) / nu1) * s^1/2 L^1/2 R^-1 L^1/2 s^1/2`` with
    independent L ~ W(nu1, I) and R ~ W(nu2, I).
    """
    s = symmetrize(s)
    d = s.shape[0]
    if not nu1 > d - 1:
        raise InvalidDegreesOfFreedom(f"nu1 must exceed {d - 1}, got {nu1}")
    if not nu2 > d + 1:
        raise InvalidDegreesOfFreedom(f"nu2 must exceed {d + 1} for the mean to exist, got {nu2}")
    eye = np.eye(d)
    lw = sample_wishart(nu1, eye, rng)
    rw = sample_wishart(nu2, eye, rng)
    lh = spd_sqrt(lw)
    y = solve_triangular(cholesky(rw), lh, lower=True)
    core = y.T @ y
    sh = spd_sqrt(s)
    return symmetrize(((nu2 - d - 1) / nu1) * (sh @ core @ sh))
