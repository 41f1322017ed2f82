"""Classical covariance forecasters: MA, EMA, MFA-VAR and MFA-DCAW.

Every forecaster exposes ``predict(history) -> (d, d)`` where ``history`` is
the ``(t, d, d)`` stack of all matrices observed so far; none of them keeps
state between calls.
"""
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.optimize import minimize
from scipy.special import multigammaln

from rcovnet import linalg as la
from rcovnet._backend import kernels
from rcovnet.errors import (
    DimensionMismatch,
    InvalidDegreesOfFreedom,
    NonFiniteLikelihood,
    SeriesTooShort,
    SingularDesign,
)
from rcovnet.simulator import CawParams, MfaEmbedding, mfa_decompose
from rcovnet.transforms import RCovSeries

DCAW_MIN_OBS = 50


def _stack(series):
    if isinstance(series, RCovSeries):
        return series.matrices
    return np.asarray(series, dtype=np.float64)


# -- moving averages ---------------------------------------------------------

def ma_forecast(history, n):
    """Arithmetic mean of the last ``n`` matrices."""
    X = _stack(history)
    if n < 1 or X.shape[0] < n:
        raise SeriesTooShort(f"MA({n}) needs {n} observations, got {X.shape[0]}")
    return X[-n:].mean(axis=0)


def ema_weights(T, n):
    alpha = 2.0 / (n + 1.0)
    w = alpha * (1.0 - alpha) ** np.arange(T - 1, -1, -1, dtype=np.float64)
    w[0] = (1.0 - alpha) ** (T - 1)
    return w


def ema_forecast(history, n):
    """E_t = a X_t + (1 - a) E_{t-1} with a = 2 / (n + 1) and E_1 = X_1."""
    X = _stack(history)
    if X.shape[0] < 1:
        raise SeriesTooShort("EMA needs at least one observation")
    return np.tensordot(ema_weights(X.shape[0], n), X, axes=1)


# -- matrix factor analysis ---------------------------------------------------

class MfaFit(NamedTuple):
    embedding: MfaEmbedding
    factors: np.ndarray
    degenerate: bool


def mfa_fit(series, r):
    """Loadings from the top-r eigenvectors of the squared-deviation average.

    Factor matrices are ``A' X(t) A``.  ``degenerate`` flags a series with no
    time variation, for which the loadings are an arbitrary orthonormal set.
    """
    X = _stack(series)
    if X.shape[0] < 2:
        raise SeriesTooShort("MFA needs at least two observations")
    mom = mfa_decompose(X, r)
    degenerate = bool(np.abs(mom.spread).max() <= 1e-14 * max(np.abs(mom.mean).max() ** 2, 1e-300))
    emb = MfaEmbedding(mom.loading, mom.sigma0, {"source": "mfa_fit"})
    return MfaFit(emb, emb.project(X), degenerate)


def compose_forecast(emb, factor_forecast):
    return emb.compose(factor_forecast)


# -- VAR on vech factors -----------------------------------------------------

@dataclass
class VarParams:
    q: int
    alpha0: np.ndarray   # (k,)
    alphas: np.ndarray   # (q, k, k); alphas[j-1] multiplies vech(F(t-j))
    resid_cov: np.ndarray
    nobs: int
    r: int

    @property
    def k(self):
        return self.alpha0.shape[0]

    @property
    def n_params(self):
        return self.k + self.q * self.k * self.k

    def loglik(self):
        """Gaussian log-likelihood at the MLE residual covariance."""
        sign, logdet = np.linalg.slogdet(self.resid_cov)
        if sign <= 0:
            return math.inf
        return -0.5 * self.nobs * (self.k * math.log(2 * math.pi) + logdet + self.k)

    def bic(self):
        return -2.0 * self.loglik() + self.n_params * math.log(self.nobs)


def _vech_stack(factors):
    F = np.asarray(factors, dtype=np.float64)
    if F.ndim == 2:
        return F
    i, j = np.triu_indices(F.shape[1])
    return F[:, j, i]


def var_fit(factors, q):
    """Least squares VAR(q) with intercept on vech of the factor matrices.

    ``factors`` is either ``(T, r, r)`` matrices or an already vectorised
    ``(T, k)`` array.
    """
    if q < 1:
        raise ValueError("VAR order q must be at least 1")
    F = np.asarray(factors, dtype=np.float64)
    r = F.shape[1] if F.ndim == 3 else int((math.isqrt(8 * F.shape[1] + 1) - 1) // 2)
    Y = _vech_stack(F)
    T, k = Y.shape
    n = T - q
    if n < k * q + 1:
        raise SeriesTooShort(f"VAR({q}) on k={k} needs more than {k * q + q} observations, got {T}")
    Z = np.empty((n, 1 + k * q))
    Z[:, 0] = 1.0
    for j in range(1, q + 1):
        Z[:, 1 + (j - 1) * k:1 + j * k] = Y[q - j:T - j]
    if np.linalg.matrix_rank(Z) < Z.shape[1]:
        raise SingularDesign("VAR design matrix is rank deficient")
    coef, *_ = np.linalg.lstsq(Z, Y[q:], rcond=None)
    resid = Y[q:] - Z @ coef
    alpha0 = coef[0].copy()
    alphas = np.stack([coef[1 + (j - 1) * k:1 + j * k].T for j in range(1, q + 1)])
    return VarParams(q, alpha0, alphas, resid.T @ resid / n, n, r)


def var_forecast(params, history):
    """One-step mean forecast, unvech'd.  Not guaranteed positive definite."""
    Y = _vech_stack(history)
    if Y.shape[0] < params.q:
        raise SeriesTooShort(f"need {params.q} lags")
    v = params.alpha0.copy()
    for j in range(1, params.q + 1):
        v += params.alphas[j - 1] @ Y[-j]
    return la.unvech(v, params.r)


# -- diagonal CAW ------------------------------------------------------------

def wishart_logpdf_batch(X, S, nu):
    """Log density of X[t] under Wishart(nu, S[t] / nu), summed over t."""
    r = X.shape[-1]
    try:
        LS = np.linalg.cholesky(S)
        LX = np.linalg.cholesky(X)
    except np.linalg.LinAlgError as exc:
        raise NonFiniteLikelihood("scale or data matrix is not positive definite") from exc
    logdet_s = 2.0 * np.log(np.diagonal(LS, axis1=-2, axis2=-1)).sum(axis=-1)
    logdet_x = 2.0 * np.log(np.diagonal(LX, axis1=-2, axis2=-1)).sum(axis=-1)
    trace = np.trace(np.linalg.solve(S, X), axis1=-2, axis2=-1)
    n = X.shape[0]
    val = (0.5 * (nu - r - 1) * logdet_x.sum()
           - 0.5 * nu * trace.sum()
           - 0.5 * nu * logdet_s.sum()
           + n * (0.5 * nu * r * math.log(nu / 2.0) - multigammaln(0.5 * nu, r)))
    if not np.isfinite(val):
        raise NonFiniteLikelihood("log-likelihood is not finite")
    return float(val)


def _diag_vectors(params):
    a = np.array([np.diag(m) for m in params.A]).reshape(params.q, params.r)
    b = np.array([np.diag(m) for m in params.B]).reshape(params.p, params.r)
    return a, b


def dcaw_scales(params, factors, s_init=None):
    """Scale path S(t) of a diagonal CAW; the first max(p, q) are ``s_init``."""
    F = np.ascontiguousarray(factors, dtype=np.float64)
    n0 = max(params.p, params.q, 1)
    if s_init is None:
        s_init = F.mean(axis=0)
    init = np.ascontiguousarray(np.broadcast_to(s_init, (n0,) + s_init.shape[-2:]))
    a, b = _diag_vectors(params)
    return kernels.dcaw_filter(F, np.ascontiguousarray(params.cc), np.ascontiguousarray(a),
                               np.ascontiguousarray(b), init)


def dcaw_loglik(params, factors, s_init=None):
    """Sum over t >= max(p, q) of the Wishart(nu, S(t)/nu) log density."""
    F = np.asarray(factors, dtype=np.float64)
    r = F.shape[-1]
    if params.r != r:
        raise DimensionMismatch(f"parameters are for r={params.r}, data has r={r}")
    if not params.nu > r - 1:
        raise InvalidDegreesOfFreedom(f"nu must exceed {r - 1}, got {params.nu}")
    n0 = max(params.p, params.q, 1)
    S = dcaw_scales(params, F, s_init)
    return wishart_logpdf_batch(F[n0:], S[n0:], params.nu)


@dataclass
class DcawFit:
    nu: float
    c: np.ndarray        # (r,) diagonal of C
    a: np.ndarray        # (q, r) diagonals of A_1..A_q
    b: np.ndarray        # (p, r) diagonals of B_1..B_p
    loglik: float
    converged: bool
    s_init: np.ndarray
    nobs: int
    n_iter: int = 0
    message: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def r(self):
        return self.c.shape[0]

    @property
    def p(self):
        return self.b.shape[0]

    @property
    def q(self):
        return self.a.shape[0]

    @property
    def n_params(self):
        return (self.p + self.q + 1) * self.r + 1

    @property
    def params(self):
        return CawParams.from_diagonals(self.c, self.a, self.b, self.nu)

    def bic(self):
        return -2.0 * self.loglik + self.n_params * math.log(self.nobs)


def _unpack(theta, r, p, q):
    nu = (r - 1) + math.exp(theta[0])
    c = np.exp(theta[1:1 + r])
    b = np.exp(theta[1 + r:1 + r + p * r]).reshape(p, r)
    a = np.exp(theta[1 + r + p * r:]).reshape(q, r)
    return nu, c, a, b


def _pack(nu, c, a, b, r):
    return np.concatenate([[math.log(nu - (r - 1))], np.log(c), np.log(b).ravel(), np.log(a).ravel()])


def central_gradient(f, theta, rel_step=1e-6):
    """Central differences with step h_i = rel_step * (1 + |theta_i|)."""
    g = np.empty_like(theta)
    for i in range(theta.size):
        h = rel_step * (1.0 + abs(theta[i]))
        tp = theta.copy()
        tm = theta.copy()
        tp[i] += h
        tm[i] -= h
        g[i] = (f(tp) - f(tm)) / (2.0 * h)
    return g


def _start_values(F, p, q):
    r = F.shape[-1]
    a = np.full((q, r), 0.1)
    b = np.full((p, r), 0.1)
    a[0] = 0.3
    if p:
        b[0] = 0.7
    persistence = (a ** 2).sum(axis=0) + (b ** 2).sum(axis=0)
    mean_diag = np.diag(F.mean(axis=0))
    c = np.sqrt(np.maximum(mean_diag * (1.0 - persistence), 1e-12))
    return r + 4.0, c, a, b


def dcaw_fit(factors, p=1, q=1, max_iter=500, gtol=1e-5, start=None):
    """Maximum likelihood for a diagonal CAW(p, q) by BFGS.

    Optimises the mean log-likelihood over ``log(nu - (r - 1))`` and the logs
    of the diagonal coefficients, with central finite-difference gradients.
    When BFGS stops early the best point found is returned with
    ``converged=False``.
    """
    F = np.ascontiguousarray(factors, dtype=np.float64)
    if F.ndim != 3:
        raise DimensionMismatch("expected (T, r, r) factor matrices")
    T, r = F.shape[0], F.shape[1]
    if T < DCAW_MIN_OBS:
        raise SeriesTooShort(f"DCAW fitting needs at least {DCAW_MIN_OBS} observations, got {T}")
    if p < 1 or q < 1:
        raise ValueError("DCAW orders must be at least 1")
    s_init = F.mean(axis=0)
    n0 = max(p, q)
    nobs = T - n0

    def objective(theta):
        nu, c, a, b = _unpack(theta, r, p, q)
        try:
            ll = dcaw_loglik(CawParams.from_diagonals(c, a, b, nu), F, s_init)
        except Exception:
            return 1e10
        return -ll / nobs

    nu0, c0, a0, b0 = start if start is not None else _start_values(F, p, q)
    theta0 = _pack(nu0, np.asarray(c0), np.asarray(a0).reshape(q, r), np.asarray(b0).reshape(p, r), r)
    best = {"f": objective(theta0), "x": theta0.copy()}

    def tracked(theta):
        val = objective(theta)
        if val < best["f"]:
            best["f"], best["x"] = val, theta.copy()
        return val

    res = minimize(tracked, theta0, jac=lambda th: central_gradient(objective, th), method="BFGS",
                   options={"gtol": gtol, "maxiter": max_iter, "norm": np.inf})
    theta = res.x if res.fun <= best["f"] else best["x"]
    nu, c, a, b = _unpack(theta, r, p, q)
    grad = central_gradient(objective, theta)
    converged = bool(np.max(np.abs(grad)) < gtol)
    ll = -objective(theta) * nobs
    return DcawFit(nu, c, a, b, ll, converged, s_init, nobs, int(res.nit), str(res.message),
                   {"grad_inf_norm": float(np.max(np.abs(grad)))})


def dcaw_forecast(fit, history):
    """Conditional mean S(t+1) of the fitted recursion given the history."""
    F = np.asarray(history, dtype=np.float64)
    n0 = max(fit.p, fit.q)
    if F.shape[0] < n0:
        raise SeriesTooShort(f"need at least {n0} observations")
    padded = np.concatenate([F, np.zeros((1,) + F.shape[1:])])
    S = dcaw_scales(fit.params, padded, fit.s_init)
    return la.symmetrize(S[-1])


# -- forecaster objects for rolling evaluation --------------------------------

class MovingAverage:
    def __init__(self, n):
        self.n = int(n)
        self.name = "MA"
        self.params_label = f"({self.n})"

    def predict(self, history):
        return ma_forecast(history, self.n)


class ExponentialMovingAverage:
    def __init__(self, n):
        self.n = int(n)
        self.name = "EMA"
        self.params_label = f"({self.n})"

    def predict(self, history):
        return ema_forecast(history, self.n)


class MfaVar:
    """MFA loadings and VAR(q) coefficients fitted once on a training stack."""

    def __init__(self, train, r, q):
        self.mfa = mfa_fit(train, r)
        self.var = var_fit(self.mfa.factors, q)
        self.name = "MFA-VAR"
        self.params_label = f"({q}, {r})"

    def predict(self, history):
        X = _stack(history)
        factors = self.mfa.embedding.project(X[-self.var.q:])
        return compose_forecast(self.mfa.embedding, var_forecast(self.var, factors))


class MfaDcaw:
    """MFA loadings and a diagonal CAW(p, q) fitted once on a training stack."""

    def __init__(self, train, r, p=1, q=1, **fit_kw):
        self.mfa = mfa_fit(train, r)
        self.fit = dcaw_fit(self.mfa.factors, p, q, **fit_kw)
        self.name = "MFA-DCAW"
        self.params_label = f"({p}, {q}, {r})"

    def predict(self, history):
        factors = self.mfa.embedding.project(_stack(history))
        return compose_forecast(self.mfa.embedding, dcaw_forecast(self.fit, factors))


def select_var_by_bic(train, r_grid=(1, 2, 3), q_grid=(1, 2, 3)):
    """(bic, r, q) minimising BIC of the VAR fitted on the training factors."""
    best = None
    for r in r_grid:
        factors = mfa_fit(train, r).factors
        for q in q_grid:
            try:
                bic = var_fit(factors, q).bic()
            except (SeriesTooShort, SingularDesign):
                continue
            if best is None or bic < best[0]:
                best = (bic, r, q)
    if best is None:
        raise SeriesTooShort("no VAR order could be fitted")
    return best


def select_dcaw_by_bic(train, r_grid=(1, 2, 3), pq_grid=((1, 1),), **fit_kw):
    """(bic, r, p, q) minimising BIC of the DCAW fitted on the training factors."""
    best = None
    for r in r_grid:
        factors = mfa_fit(train, r).factors
        for p, q in pq_grid:
            bic = dcaw_fit(factors, p, q, **fit_kw).bic()
            if best is None or bic < best[0]:
                best = (bic, r, p, q)
    return best
