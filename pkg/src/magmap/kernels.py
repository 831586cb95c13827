"""Closed-form covariance functions and the dense (exact) GP solvers.

The dense solvers cost O(n^3) and exist as the reference against which the
reduced-rank estimators are checked. Three field models are supported:

``"independent"``
    Each field component is its own GP with kernel ``const + SE`` and its
    own hyperparameters.
``"shared"``
    Same kernels, one set of hyperparameters, a single n x n factorization
    reused for the three components.
``"potential"``
    The field is the gradient of a latent potential with kernel
    ``linear + SE``. Observed-field form: block kernel
    ``sigma2_lin * I3 + K_curl``.
"""

from __future__ import annotations

from typing import Callable, Sequence, Union

import numpy as np
from scipy.linalg import solve_triangular

from ._linalg import chol_logdet, chol_solve, jittered_cholesky
from .types import FieldPrediction, Hyperparameters, ParameterError, as_dataset

MODELS = ("independent", "shared", "potential")
DEFAULT_MAX_OBS = 2000


def _check_positive(**kw):
    for k, v in kw.items():
        if not (np.isfinite(v) and v > 0):
            raise ParameterError(f"{k} must be positive, got {v}")


def k_se(x, x2, sigma2: float, ell: float) -> float:
    """Squared exponential covariance between two points."""
    _check_positive(sigma2=sigma2, ell=ell)
    r = np.asarray(x, float) - np.asarray(x2, float)
    return float(sigma2 * np.exp(-np.dot(r, r) / (2 * ell**2)))


def k_const(x, x2, sigma2: float) -> float:
    _check_positive(sigma2=sigma2)
    return float(sigma2)


def k_lin(x, x2, sigma2: float) -> float:
    _check_positive(sigma2=sigma2)
    return float(sigma2 * np.dot(np.asarray(x, float), np.asarray(x2, float)))


def k_ou(t, t2, ell_time: float) -> float:
    """Exponential (Ornstein-Uhlenbeck) covariance in time, unit variance."""
    _check_positive(ell_time=ell_time)
    return float(np.exp(-abs(float(t) - float(t2)) / ell_time))


def k_curlfree(x, x2, sigma2: float, ell: float) -> np.ndarray:
    """3x3 curl-free covariance: the cross-Hessian of the SE potential kernel.

    ``(sigma2 / ell**2) * (I - r r^T / ell**2) * exp(-|r|^2 / (2 ell**2))``
    with ``r = x - x2``.
    """
    _check_positive(sigma2=sigma2, ell=ell)
    r = np.asarray(x, float) - np.asarray(x2, float)
    e = np.exp(-np.dot(r, r) / (2 * ell**2))
    return (sigma2 / ell**2) * (np.eye(3) - np.outer(r, r) / ell**2) * e


# Gram builders -------------------------------------------------------------


def se_gram(X1, X2, sigma2: float, ell: float) -> np.ndarray:
    X1 = np.asarray(X1, float).reshape(-1, 3)
    X2 = np.asarray(X2, float).reshape(-1, 3)
    d2 = ((X1[:, None, :] - X2[None, :, :]) ** 2).sum(-1)
    return sigma2 * np.exp(-d2 / (2 * ell**2))


def curlfree_gram(X1, X2, sigma2: float, ell: float) -> np.ndarray:
    """(3 n1, 3 n2) curl-free Gram matrix, sample-major blocks."""
    X1 = np.asarray(X1, float).reshape(-1, 3)
    X2 = np.asarray(X2, float).reshape(-1, 3)
    R = X1[:, None, :] - X2[None, :, :]
    e = np.exp(-(R**2).sum(-1) / (2 * ell**2))
    K = np.eye(3)[None, None] - R[..., :, None] * R[..., None, :] / ell**2
    K *= (sigma2 / ell**2) * e[..., None, None]
    n1, n2 = len(X1), len(X2)
    return K.transpose(0, 2, 1, 3).reshape(3 * n1, 3 * n2)


def potential_field_gram(X1, X2, theta: Hyperparameters, curl: Callable = curlfree_gram) -> np.ndarray:
    """Field covariance of the potential model: ``sigma2_lin I3 + K_curl``."""
    n1 = np.asarray(X1).reshape(-1, 3).shape[0]
    n2 = np.asarray(X2).reshape(-1, 3).shape[0]
    K = curl(X1, X2, theta.sigma2_se, theta.ell_se)
    K = K + theta.sigma2_lin * np.tile(np.eye(3), (n1, n2))
    return K


# dense solvers -------------------------------------------------------------


def _scalar_gp(X, y, Xs, sigma2_const, sigma2_se, ell, noise):
    """Exact posterior of ``const + SE`` GPs sharing inputs; y is (n, k)."""
    n = X.shape[0]
    kss = sigma2_const + sigma2_se
    if n == 0:
        return np.zeros((Xs.shape[0], y.shape[1])), np.full(Xs.shape[0], kss)
    K = sigma2_const + se_gram(X, X, sigma2_se, ell) + noise * np.eye(n)
    L, _ = jittered_cholesky(K)
    Ks = sigma2_const + se_gram(Xs, X, sigma2_se, ell)
    mean = Ks @ chol_solve(L, y)
    V = solve_triangular(L, Ks.T, lower=True)
    var = kss - (V**2).sum(0)
    return mean, var


def dense_gp_fit_predict(
    model: str,
    train,
    theta: Union[Hyperparameters, Sequence[Hyperparameters]],
    test,
    max_obs: int = DEFAULT_MAX_OBS,
    curl: Callable = curlfree_gram,
) -> FieldPrediction:
    """Exact GP posterior of the field at ``test`` positions.

    Parameters
    ----------
    model : {"independent", "shared", "potential"}
    train : Dataset or iterable of MagneticSample
    theta : Hyperparameters, or three of them for ``"independent"``.
        For the component models ``sigma2_lin`` is the constant-kernel variance.
    test : (k, 3) array
    max_obs : int
        Refuse problems with more scalar observations than this.
    curl : callable
        Builder of the curl-free Gram block; swappable so alternative
        derivations of the same kernel can be cross-checked.
    """
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}; expected one of {MODELS}")
    data = as_dataset(train)
    X, Y = data.x, data.y
    Xs = np.asarray(test, float).reshape(-1, 3)
    n, k = len(X), len(Xs)
    n_obs = 3 * n if model == "potential" else n
    if n_obs > max_obs:
        raise ValueError(f"dense solver capped at {max_obs} observations, got {n_obs}")

    if model == "independent":
        thetas = [theta] * 3 if isinstance(theta, Hyperparameters) else list(theta)
        if len(thetas) != 3:
            raise ValueError("independent model needs three hyperparameter sets")
        mean = np.empty((k, 3))
        cov = np.zeros((k, 3, 3))
        for d, th in enumerate(thetas):
            mu, var = _scalar_gp(
                X, Y[:, [d]], Xs, th.sigma2_lin, th.sigma2_se, th.ell_se, th.sigma2_noise
            )
            mean[:, d] = mu[:, 0]
            cov[:, d, d] = var
        return FieldPrediction(mean, cov)

    if not isinstance(theta, Hyperparameters):
        raise ValueError(f"{model} model takes a single Hyperparameters")

    if model == "shared":
        mu, var = _scalar_gp(
            X, Y, Xs, theta.sigma2_lin, theta.sigma2_se, theta.ell_se, theta.sigma2_noise
        )
        cov = var[:, None, None] * np.eye(3)
        return FieldPrediction(mu, cov)

    prior = (theta.sigma2_lin + theta.sigma2_se / theta.ell_se**2) * np.eye(3)
    if n == 0:
        return FieldPrediction(np.zeros((k, 3)), np.broadcast_to(prior, (k, 3, 3)).copy())
    K = potential_field_gram(X, X, theta, curl) + theta.sigma2_noise * np.eye(3 * n)
    L, _ = jittered_cholesky(K)
    alpha = chol_solve(L, Y.reshape(-1))
    kss = potential_field_gram(np.zeros(3), np.zeros(3), theta, curl)
    mean = np.empty((k, 3))
    cov = np.empty((k, 3, 3))
    for lo in range(0, k, 512):
        hi = min(lo + 512, k)
        Ks = potential_field_gram(Xs[lo:hi], X, theta, curl)
        mean[lo:hi] = (Ks @ alpha).reshape(-1, 3)
        # only the 3x3 diagonal blocks of Kss - Ks K^-1 Ks^T are needed
        V = solve_triangular(L, Ks.T, lower=True).reshape(3 * n, hi - lo, 3)
        cov[lo:hi] = kss[None] - np.einsum("pki,pkj->kij", V, V)
    return FieldPrediction(mean, 0.5 * (cov + cov.transpose(0, 2, 1)))


def _gaussian_nll(L: np.ndarray, Y: np.ndarray) -> float:
    """-log N(Y | 0, K) summed over the columns of Y, with ``K = L L^T``."""
    n, k = Y.shape
    alpha = chol_solve(L, Y)
    return 0.5 * k * chol_logdet(L) + 0.5 * float(np.sum(Y * alpha)) + 0.5 * n * k * np.log(2 * np.pi)


def shared_loglik(train, theta: Hyperparameters) -> float:
    """Negative log marginal likelihood of the shared-hyperparameter model.

    ``3/2 log|K + s I| + 1/2 tr[y (K + s I)^-1 y^T] + 3n/2 log 2 pi`` using a
    single n x n factorization for all three components.
    """
    data = as_dataset(train)
    n = len(data)
    if n < 1:
        raise ValueError("need at least one sample")
    K = theta.sigma2_lin + se_gram(data.x, data.x, theta.sigma2_se, theta.ell_se)
    L, _ = jittered_cholesky(K + theta.sigma2_noise * np.eye(n))
    return _gaussian_nll(L, data.y)


def component_nll(x, y, theta: Hyperparameters) -> float:
    """Dense NLL of one field component under ``const + SE`` plus noise."""
    x = np.asarray(x, float).reshape(-1, 3)
    y = np.asarray(y, float).reshape(-1, 1)
    n = len(x)
    K = theta.sigma2_lin + se_gram(x, x, theta.sigma2_se, theta.ell_se)
    L, _ = jittered_cholesky(K + theta.sigma2_noise * np.eye(n))
    return _gaussian_nll(L, y)


def potential_nll(train, theta: Hyperparameters, curl: Callable = curlfree_gram) -> float:
    """Dense NLL of the potential model on the stacked 3n field readings."""
    data = as_dataset(train)
    n = len(data)
    K = potential_field_gram(data.x, data.x, theta, curl)
    L, _ = jittered_cholesky(K + theta.sigma2_noise * np.eye(3 * n))
    return _gaussian_nll(L, data.y.reshape(-1, 1))
