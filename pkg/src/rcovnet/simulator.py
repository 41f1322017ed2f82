"""Synthetic realized-covariance series from a CAW process with BEKK scales.

The latent ``r x r`` factor matrices follow

    Sigma_f(t) | past  ~  Wishart(nu, S_f(t) / nu)     or a matrix-F law with mean S_f(t)
    S_f(t) = C C' + sum_i B_i S_f(t-i) B_i' + sum_j A_j Sigma_f(t-j) A_j'

and are embedded in ``d`` dimensions as ``A Sigma_f(t) A' + Sigma_0``.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple

import numpy as np

from rcovnet import linalg as la
from rcovnet.errors import DimensionMismatch, InvalidDegreesOfFreedom, NumericalError
from rcovnet.transforms import RCovSeries

DEFAULT_BURN_IN = 100
# Fixed so the default embedding is reproducible across runs and machines.
DEFAULT_EMBEDDING_SEED = 20200815


class Innovation(str, Enum):
    WISHART = "wishart"
    MATRIX_F = "matrix-f"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        return cls({"w": "wishart", "f": "matrix-f", "matrixf": "matrix-f"}.get(key, key))


def _as_mats(mats, r, what):
    out = tuple(np.asarray(m, dtype=np.float64) for m in mats)
    for m in out:
        if m.shape != (r, r):
            raise DimensionMismatch(f"{what} must be {r}x{r}, got {m.shape}")
    return out


@dataclass
class CawParams:
    """Coefficients of the CAW / BEKK process.

    ``A`` holds A_1..A_q (innovation loadings) and ``B`` holds B_1..B_p
    (scale persistence).  ``nu`` is used for Wishart innovations and
    ``(nu1, nu2)`` for matrix-F innovations.
    """

    C: np.ndarray
    A: tuple
    B: tuple
    nu: float = 5.0
    nu1: float = 10.0
    nu2: float = 8.0
    diagonal: bool = False

    def __post_init__(self):
        self.C = np.asarray(self.C, dtype=np.float64)
        r = self.C.shape[0]
        if self.C.shape != (r, r) or r < 1:
            raise DimensionMismatch(f"C must be square, got {self.C.shape}")
        self.A = _as_mats(self.A, r, "A_j")
        self.B = _as_mats(self.B, r, "B_i")
        if self.diagonal:
            self.C = np.diag(np.diag(self.C))
            self.A = tuple(np.diag(np.diag(a)) for a in self.A)
            self.B = tuple(np.diag(np.diag(b)) for b in self.B)
        if not la.is_spd(self.cc):
            raise NumericalError("C C' must be positive definite")

    @property
    def r(self):
        return self.C.shape[0]

    @property
    def p(self):
        return len(self.B)

    @property
    def q(self):
        return len(self.A)

    @property
    def cc(self):
        return self.C @ self.C.T

    @classmethod
    def paper(cls):
        """The r=3, (p, q)=(2, 2) coefficients of the simulation study."""
        C = np.array([[0.5, 0.2, 0.3], [0.2, 0.5, 0.25], [0.3, 0.25, 0.5]])
        A = (np.diag([0.2, 0.4, 0.5]), np.diag([0.3, 0.5, 0.2]))
        B = (np.diag([0.2, 0.5, 0.4]), np.diag([0.3, 0.5, 0.2]))
        return cls(C=C, A=A, B=B, nu=5.0, nu1=10.0, nu2=8.0)

    @classmethod
    def from_diagonals(cls, c, a, b, nu, **kw):
        """Diagonal CAW from vectors: ``a`` is (q, r), ``b`` is (p, r)."""
        a = np.atleast_2d(np.asarray(a, dtype=np.float64))
        b = np.atleast_2d(np.asarray(b, dtype=np.float64))
        return cls(C=np.diag(c), A=tuple(np.diag(x) for x in a), B=tuple(np.diag(x) for x in b),
                   nu=nu, diagonal=True, **kw)

    def check_innovation(self, innovation):
        innovation = Innovation.parse(innovation)
        r = self.r
        if innovation is Innovation.WISHART and not self.nu > r - 1:
            raise InvalidDegreesOfFreedom(f"nu must exceed {r - 1}, got {self.nu}")
        if innovation is Innovation.MATRIX_F and not (self.nu1 > r - 1 and self.nu2 > r + 1):
            raise InvalidDegreesOfFreedom(f"need nu1 > {r - 1} and nu2 > {r + 1}, got {self.nu1}, {self.nu2}")
        return innovation

    def persistence_operator(self):
        """Matrix M with vec(E S(t)) = vec(CC') + M vec(E S(t-1)) at the fixed point."""
        r = self.r
        M = np.zeros((r * r, r * r))
        for m in self.A + self.B:
            M += np.kron(m, m)
        return M

    def stationary_mean(self):
        """Fixed point of the expected recursion, E S = CC' + sum B E S B' + sum A E S A'."""
        M = self.persistence_operator()
        if np.max(np.abs(np.linalg.eigvals(M))) >= 1.0:
            raise NumericalError("BEKK recursion is not covariance stationary")
        r = self.r
        vec = np.linalg.solve(np.eye(r * r) - M, self.cc.reshape(-1))
        return la.symmetrize(vec.reshape(r, r))


def bekk_step(params, s_hist, sigma_hist):
    """One BEKK update.

    ``s_hist[i]`` is S(t-1-i) (most recent first, length p) and
    ``sigma_hist[j]`` is Sigma(t-1-j) (length q).
    """
    if len(s_hist) < params.p or len(sigma_hist) < params.q:
        raise DimensionMismatch(f"need {params.p} scale and {params.q} realized lags")
    s = params.cc.copy()
    for Bi, Si in zip(params.B, s_hist):
        if Si.shape != Bi.shape:
            raise DimensionMismatch("scale history has the wrong dimension")
        s += Bi @ Si @ Bi.T
    for Aj, Xj in zip(params.A, sigma_hist):
        if Xj.shape != Aj.shape:
            raise DimensionMismatch("realized history has the wrong dimension")
        s += Aj @ Xj @ Aj.T
    return la.symmetrize(s)


def draw_innovation(params, scale, innovation, rng):
    if innovation is Innovation.WISHART:
        return la.sample_wishart(params.nu, scale / params.nu, rng)
    return la.sample_matrix_f(params.nu1, params.nu2, scale, rng)


class CawPath(NamedTuple):
    factors: np.ndarray  # (L, r, r) realized factor matrices Sigma_f(t)
    scales: np.ndarray   # (L, r, r) conditional means S_f(t)


def simulate_caw(params, length, innovation, rng, init=None, burn_in=DEFAULT_BURN_IN):
    """Simulate ``length`` factor matrices after ``burn_in`` discarded steps.

    ``init`` gives S_f(0)..S_f(n0-1) with n0 = max(p, q); it defaults to the
    stationary mean.
    """
    innovation = params.check_innovation(innovation)
    n0 = max(params.p, params.q, 1)
    if length < n0 + 1:
        raise DimensionMismatch(f"length must be at least {n0 + 1}")
    if init is None:
        init = [params.stationary_mean()] * n0
    init = [la.symmetrize(s) for s in init]
    if len(init) != n0 or any(s.shape != (params.r, params.r) for s in init):
        raise DimensionMismatch(f"need {n0} initial {params.r}x{params.r} scale matrices")
    total = length + burn_in
    S = np.empty((total, params.r, params.r))
    X = np.empty_like(S)
    for t in range(total):
        if t < n0:
            S[t] = init[t]
        else:
            S[t] = bekk_step(params,
                             [S[t - 1 - i] for i in range(params.p)],
                             [X[t - 1 - j] for j in range(params.q)])
        X[t] = draw_innovation(params, S[t], innovation, rng)
    return CawPath(X[burn_in:].copy(), S[burn_in:].copy())


@dataclass
class MfaEmbedding:
    """Loading matrix with orthonormal columns plus a static part."""

    loading: np.ndarray
    sigma0: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.loading = np.asarray(self.loading, dtype=np.float64)
        self.sigma0 = la.symmetrize(self.sigma0)
        d, r = self.loading.shape
        if self.sigma0.shape != (d, d):
            raise DimensionMismatch(f"sigma0 must be {d}x{d}")
        if np.linalg.norm(self.loading.T @ self.loading - np.eye(r)) > 1e-10:
            raise DimensionMismatch("loading columns must be orthonormal")

    @property
    def d(self):
        return self.loading.shape[0]

    @property
    def r(self):
        return self.loading.shape[1]

    def compose(self, factors):
        """A F A' + Sigma_0 for one (r, r) or many (n, r, r) factor matrices."""
        f = np.asarray(factors, dtype=np.float64)
        if f.shape[-2:] != (self.r, self.r):
            raise DimensionMismatch(f"factor matrices must be {self.r}x{self.r}, got {f.shape}")
        A = self.loading
        out = A @ f @ A.T + self.sigma0
        return 0.5 * (out + np.swapaxes(out, -1, -2))

    def project(self, matrices):
        """A' X A for one or many d x d matrices."""
        A = self.loading
        out = A.T @ np.asarray(matrices, dtype=np.float64) @ A
        return 0.5 * (out + np.swapaxes(out, -1, -2))


def embed_factors(factors, emb, labels=None, assets=None, note=""):
    return RCovSeries(emb.compose(factors), labels, assets, note)


class MfaMoments(NamedTuple):
    mean: np.ndarray       # time average of the matrices
    spread: np.ndarray     # time average of squared deviations from the mean
    loading: np.ndarray    # top-r eigenvectors of ``spread``
    sigma0: np.ndarray     # mean - P mean P with P the loading projector
    eigenvalues: np.ndarray


def mfa_decompose(matrices, r):
    """Matrix-factor decomposition of a (T, d, d) stack."""
    X = np.asarray(matrices, dtype=np.float64)
    if X.ndim != 3 or X.shape[0] < 1:
        raise DimensionMismatch("expected a (T, d, d) stack")
    d = X.shape[1]
    if not 1 <= r < d:
        raise DimensionMismatch(f"factor dimension must satisfy 1 <= r < d = {d}, got {r}")
    mean = la.symmetrize(X.mean(axis=0))
    dev = X - mean
    spread = la.symmetrize(np.mean(dev @ dev, axis=0))
    vals, vecs = la.sym_eig(spread)
    A = vecs[:, :r]
    P = A @ A.T
    sigma0 = la.symmetrize(mean - P @ mean @ P)
    return MfaMoments(mean, spread, np.ascontiguousarray(A), sigma0, vals)


def make_embedding(d, r, source="random", seed=DEFAULT_EMBEDDING_SEED, series=None, sigma0_scale=0.1):
    """Build an embedding from a random orthonormal basis or from a series.

    ``source="random"`` draws A by QR of a Gaussian matrix (signs fixed so the
    result is a deterministic function of the seed) and uses
    ``Sigma_0 = sigma0_scale * I``.  ``source="series"`` takes A and Sigma_0
    from the matrix-factor decomposition of ``series``.
    """
    if not 1 <= r < d:
        raise DimensionMismatch(f"need 1 <= r < d, got r={r}, d={d}")
    if source == "random":
        g = la.Rng(seed).normal((d, r))
        Q, R = np.linalg.qr(g)
        Q = Q * np.sign(np.diag(R))
        return MfaEmbedding(Q, sigma0_scale * np.eye(d), {"source": "random", "seed": int(seed)})
    if source == "series":
        if series is None:
            raise ValueError("source='series' needs a series")
        mats = series.matrices if isinstance(series, RCovSeries) else series
        if mats.shape[1] != d:
            raise DimensionMismatch(f"series has dimension {mats.shape[1]}, expected {d}")
        mom = mfa_decompose(mats, r)
        return MfaEmbedding(mom.loading, mom.sigma0, {"source": "series"})
    raise ValueError(f"unknown embedding source {source!r}")
