"""Reduced-rank baselines that model each field component as a scalar GP.

Each component gets the kernel ``const + SE`` approximated on the same
Dirichlet eigenbasis as the potential model: one constant basis function with
variance ``sigma2_lin`` (read as the constant-kernel variance) followed by the
``m`` eigenfunctions weighted by the SE spectral density.

``"independent"`` learns one hyperparameter set per component;
``"shared"`` learns a single set for all three and solves once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import solve_triangular

from ._linalg import chol_solve, jittered_cholesky
from .basis import BasisIndexSet, build_index_set, log_spectral_density_se, phi_matrix
from .batch import (
    GramCache,
    OptimizeOptions,
    OptimizeResult,
    _bound_hits,
    _LOG_LAM_FLOOR,
    minimize_log_params,
    rr_nlml,
    theta_from_log,
)
from .types import THETA_NAMES, Domain, FieldPrediction, Hyperparameters, as_dataset, require_inside

_PRED_CHUNK = 4096


def component_design(x, index_set: BasisIndexSet) -> np.ndarray:
    """(n, 1 + m) rows ``(1, phi_1(x), ..., phi_m(x))``."""
    x = np.asarray(x, float).reshape(-1, 3)
    return np.hstack([np.ones((len(x), 1)), phi_matrix(x, index_set)])


def component_log_lambda(index_set: BasisIndexSet, theta: Hyperparameters) -> np.ndarray:
    return np.concatenate(
        [
            [math.log(theta.sigma2_lin)],
            log_spectral_density_se(index_set.eigenvalues, theta.sigma2_se, theta.ell_se),
        ]
    )


def component_nlml(theta: Hyperparameters, cache: GramCache, index_set: BasisIndexSet, grad=False):
    """Reduced-rank NLML for ``cache.n_out`` components sharing ``theta``."""
    out = rr_nlml(component_log_lambda(index_set, theta), theta.sigma2_noise, cache, grad)
    if not grad:
        return out
    value, g_lam, g_noise = out
    lam2 = index_set.eigenvalues
    g = np.array(
        [
            g_lam[0],
            g_lam[1:].sum(),
            float(np.sum(g_lam[1:] * (3.0 - lam2 * theta.ell_se**2))),
            g_noise,
        ]
    )
    return value, g


@dataclass(frozen=True)
class ComponentModel:
    """Posterior coefficients for three component GPs.

    ``means`` is (1 + m, 3). ``chols[d]`` factors ``Z_d`` so the coefficient
    covariance of component ``d`` is ``thetas[d].sigma2_noise * Z_d^-1``.
    """

    kind: str
    index_set: BasisIndexSet
    thetas: Tuple[Hyperparameters, Hyperparameters, Hyperparameters]
    means: np.ndarray
    chols: Tuple[np.ndarray, ...]
    n: int

    @property
    def domain(self) -> Domain:
        return self.index_set.domain


def _caches(data, index_set: BasisIndexSet, kind: str):
    require_inside(data.x, index_set.domain)
    P = component_design(data.x, index_set)
    if kind == "shared":
        return [GramCache.from_design(P, data.y)]
    A = P.T @ P
    return [
        GramCache(A, P.T @ data.y[:, [d]], float(data.y[:, d] @ data.y[:, d]), len(data), 1)
        for d in range(3)
    ]


def _solve(cache: GramCache, index_set: BasisIndexSet, theta: Hyperparameters):
    lam = np.maximum(component_log_lambda(index_set, theta), _LOG_LAM_FLOOR)
    Z = cache.A.copy()
    Z[np.diag_indices(cache.p)] += theta.sigma2_noise * np.exp(-lam)
    L, _ = jittered_cholesky(Z, "component information matrix")
    return chol_solve(L, cache.B), L


def _as_three(theta) -> Tuple[Hyperparameters, Hyperparameters, Hyperparameters]:
    if isinstance(theta, Hyperparameters):
        return (theta, theta, theta)
    theta = tuple(theta)
    if len(theta) != 3:
        raise ValueError("expected one or three hyperparameter sets")
    return theta


def fit_components(
    kind: str,
    samples,
    domain: Domain,
    m,
    theta: Union[Hyperparameters, Sequence[Hyperparameters]],
) -> ComponentModel:
    """Posterior of the ``"independent"`` or ``"shared"`` baseline."""
    if kind not in ("independent", "shared"):
        raise ValueError(f"unknown component model {kind!r}")
    data = as_dataset(samples)
    index_set = m if isinstance(m, BasisIndexSet) else build_index_set(m, domain)
    thetas = _as_three(theta)
    if kind == "shared" and len(set(thetas)) != 1:
        raise ValueError("shared model takes a single hyperparameter set")
    caches = _caches(data, index_set, kind)
    return _fit_from_caches(kind, caches, index_set, thetas, len(data))


def _fit_from_caches(kind, caches, index_set, thetas, n) -> ComponentModel:
    if kind == "shared":
        means, L = _solve(caches[0], index_set, thetas[0])
        return ComponentModel(kind, index_set, thetas, means, (L, L, L), n)
    cols, chols = [], []
    for d in range(3):
        mu, L = _solve(caches[d], index_set, thetas[d])
        cols.append(mu[:, 0])
        chols.append(L)
    return ComponentModel(kind, index_set, thetas, np.stack(cols, axis=1), tuple(chols), n)


def predict_components(model: ComponentModel, x_star) -> FieldPrediction:
    """Per-component posterior mean and variance; off-diagonal covariance is zero."""
    X = np.asarray(x_star, float).reshape(-1, 3)
    k = len(X)
    mean = np.empty((k, 3))
    cov = np.zeros((k, 3, 3))
    for lo in range(0, k, _PRED_CHUNK):
        P = component_design(X[lo : lo + _PRED_CHUNK], model.index_set)
        mean[lo : lo + len(P)] = P @ model.means
        done = {}
        for d in range(3):
            key = id(model.chols[d])
            if key not in done:
                V = solve_triangular(model.chols[d], P.T, lower=True)
                done[key] = model.thetas[d].sigma2_noise * np.sum(V**2, axis=0)
            cov[lo : lo + len(P), d, d] = done[key]
    return FieldPrediction(mean, cov, outside=~model.domain.contains(X))


def _optimize_cache(cache, index_set, theta0: Hyperparameters, opts: OptimizeOptions) -> OptimizeResult:
    def objective(x):
        return component_nlml(Hyperparameters.from_array(np.exp(x)), cache, index_set, grad=True)

    x, f, nit, ok, msg, trace = minimize_log_params(
        objective, np.log(theta0.as_array()), THETA_NAMES, opts
    )
    theta = theta_from_log(x, theta0, opts)
    return OptimizeResult(theta, f, nit, ok, msg, _bound_hits(x, THETA_NAMES, opts), tuple(trace))


def optimize_components(
    kind: str,
    samples,
    domain: Domain,
    m,
    theta0: Union[Hyperparameters, Sequence[Hyperparameters]],
    opts: Optional[OptimizeOptions] = None,
):
    """Learn baseline hyperparameters by maximizing the marginal likelihood.

    Returns ``(model, results)``: for ``"shared"`` a single joint result,
    for ``"independent"`` one result per component, each optimized
    separately.
    """
    opts = opts or OptimizeOptions()
    data = as_dataset(samples)
    index_set = m if isinstance(m, BasisIndexSet) else build_index_set(m, domain)
    caches = _caches(data, index_set, kind)
    inits = _as_three(theta0)
    if kind == "shared":
        res = _optimize_cache(caches[0], index_set, inits[0], opts)
        results = (res,)
        thetas = (res.theta,) * 3
    else:
        results = tuple(_optimize_cache(caches[d], index_set, inits[d], opts) for d in range(3))
        thetas = tuple(r.theta for r in results)
    return _fit_from_caches(kind, caches, index_set, thetas, len(data)), results


def mean_theta(thetas: Sequence[Hyperparameters]) -> Hyperparameters:
    """Element-wise arithmetic mean of several hyperparameter sets."""
    return Hyperparameters.from_array(np.mean([t.as_array() for t in thetas], axis=0))
