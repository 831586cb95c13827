"""Reduced-rank batch estimation of the scalar-potential field model.

With ``G = grad Phi`` (3n x (3+m)), ``Lambda`` the prior coefficient
variances and ``s`` the noise variance, the posterior over coefficients is

    mean = Z^-1 G^T vec(y),   cov = s Z^-1,   Z = G^T G + s Lambda^-1.

Everything that touches the data is collected once in a :class:`GramCache`;
the marginal likelihood and its gradient then cost O(m^3) per evaluation,
independent of n.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import solve_triangular
from scipy.optimize import minimize

from ._linalg import chol_logdet, chol_solve, jittered_cholesky
from .basis import (
    BasisIndexSet,
    build_index_set,
    gradient_design,
    log_lambda_diag,
    potential_design,
)
from .types import (
    THETA_NAMES,
    Dataset,
    Domain,
    FieldPrediction,
    Hyperparameters,
    MagmapError,
    NumericalError,
    as_dataset,
    require_inside,
)

log = logging.getLogger(__name__)

_LOG_LAM_FLOOR = -250.0
_PRED_CHUNK = 2048


class OptimizationError(MagmapError):
    """Hyperparameter search produced no finite objective."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


# ---------------------------------------------------------------------------
# Gram cache and the reduced-rank marginal likelihood
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GramCache:
    """Data-dependent cross products of a linear-Gaussian basis model.

    ``A = G^T G`` and ``B = G^T Y`` where ``Y`` has ``n_out`` columns of
    ``n_obs`` observations each; ``yty`` is the total sum of squares.
    """

    A: np.ndarray
    B: np.ndarray
    yty: float
    n_obs: int
    n_out: int = 1

    @classmethod
    def from_design(cls, G: np.ndarray, Y: np.ndarray) -> "GramCache":
        Y = np.asarray(Y, float)
        if Y.ndim == 1:
            Y = Y[:, None]
        return cls(G.T @ G, G.T @ Y, float(np.sum(Y * Y)), G.shape[0], Y.shape[1])

    @property
    def p(self) -> int:
        return self.A.shape[0]


def rr_nlml(log_lam: np.ndarray, noise: float, cache: GramCache, grad: bool = False):
    """Negative log marginal likelihood of ``Y = G w + e``, ``w ~ N(0, Lambda)``.

    Uses the determinant lemma ``log|G Lambda G^T + s I| = (N - p) log s +
    sum log Lambda + log|Z|`` and the matching Woodbury quadratic form, with
    ``p`` the total number of basis functions (linear ones included).

    Returns the value, or ``(value, d/dlog_lam, d/dlog_noise)`` when ``grad``.
    """
    log_lam = np.asarray(log_lam, float)
    clipped = log_lam < _LOG_LAM_FLOOR
    log_lam = np.maximum(log_lam, _LOG_LAM_FLOOR)
    lam_inv = np.exp(-log_lam)
    k, N, p = cache.n_out, cache.n_obs, cache.p

    Z = cache.A.copy()
    Z[np.diag_indices(p)] += noise * lam_inv
    L, _ = jittered_cholesky(Z, "reduced-rank information matrix")
    alpha = chol_solve(L, cache.B)
    fit_term = float(np.sum(cache.B * alpha))

    logdet = (N - p) * math.log(noise) + float(log_lam.sum()) + chol_logdet(L)
    resid = cache.yty - fit_term
    value = 0.5 * k * logdet + 0.5 * resid / noise + 0.5 * N * k * math.log(2 * math.pi)
    if not grad:
        return value

    Zinv_diag = np.sum(solve_triangular(L, np.eye(p), lower=True) ** 2, axis=0)
    a2 = np.sum(alpha**2, axis=1)
    g_lam = 0.5 * k * (1.0 - noise * Zinv_diag * lam_inv) - 0.5 * a2 * lam_inv
    g_lam[clipped] = 0.0
    d_noise = 0.5 * k * ((N - p) / noise + float(np.sum(Zinv_diag * lam_inv)))
    d_noise += 0.5 * (-resid / noise**2 + float(np.sum(a2 * lam_inv)) / noise)
    return value, g_lam, noise * d_noise


def potential_cache(data: Dataset, index_set: BasisIndexSet) -> GramCache:
    require_inside(data.x, index_set.domain)
    G = gradient_design(data.x, index_set)
    return GramCache.from_design(G, data.y.reshape(-1))


def nlml(theta: Hyperparameters, cache: GramCache, index_set: BasisIndexSet, grad: bool = False):
    """Approximate NLML of the potential model from cached cross products.

    With ``grad=True`` also returns the gradient with respect to
    ``log(sigma2_lin, sigma2_se, ell_se, sigma2_noise)``.
    """
    out = rr_nlml(log_lambda_diag(index_set, theta), theta.sigma2_noise, cache, grad)
    if not grad:
        return out
    value, g_lam, g_noise = out
    lam2 = index_set.eigenvalues
    g = np.array(
        [
            g_lam[:3].sum(),
            g_lam[3:].sum(),
            float(np.sum(g_lam[3:] * (3.0 - lam2 * theta.ell_se**2))),
            g_noise,
        ]
    )
    return value, g


# ---------------------------------------------------------------------------
# Fitting and prediction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BatchModel:
    """Posterior over the 3 + m coefficients of the potential model.

    The covariance is kept factorized: ``cov = noise * Z^-1`` with
    ``Z = chol @ chol.T``.
    """

    index_set: BasisIndexSet
    theta: Hyperparameters
    mean: np.ndarray
    chol: np.ndarray
    n: int
    nlml: Optional[float] = None

    @property
    def domain(self) -> Domain:
        return self.index_set.domain

    @property
    def m(self) -> int:
        return self.index_set.m

    @property
    def covariance(self) -> np.ndarray:
        p = self.chol.shape[0]
        Linv = solve_triangular(self.chol, np.eye(p), lower=True)
        return self.theta.sigma2_noise * (Linv.T @ Linv)

    @property
    def linear_coefficients(self) -> np.ndarray:
        """Constant background field (uT) carried by the linear basis."""
        return self.mean[:3].copy()


def fit_cache(cache: GramCache, index_set: BasisIndexSet, theta: Hyperparameters, n: int) -> BatchModel:
    lam = np.maximum(log_lambda_diag(index_set, theta), _LOG_LAM_FLOOR)
    Z = cache.A.copy()
    Z[np.diag_indices(cache.p)] += theta.sigma2_noise * np.exp(-lam)
    L, _ = jittered_cholesky(Z, "reduced-rank information matrix")
    mean = chol_solve(L, cache.B[:, 0])
    return BatchModel(index_set, theta, mean, L, n)


def fit(samples, domain: Domain, m, theta: Hyperparameters) -> BatchModel:
    """Reduced-rank posterior for the potential model.

    ``m`` is a mode count or a prebuilt index set. Cost is O(n m^2) to
    assemble ``G^T G`` plus one O(m^3) Cholesky.
    """
    data = as_dataset(samples)
    index_set = m if isinstance(m, BasisIndexSet) else build_index_set(m, domain)
    cache = potential_cache(data, index_set)
    model = fit_cache(cache, index_set, theta, len(data))
    return _with_nlml(model, cache)


def _with_nlml(model: BatchModel, cache: GramCache) -> BatchModel:
    try:
        value = nlml(model.theta, cache, model.index_set)
    except NumericalError:
        value = None
    return BatchModel(model.index_set, model.theta, model.mean, model.chol, model.n, value)


def predict(model: BatchModel, x_star, potential: bool = False, covariance: bool = True) -> FieldPrediction:
    """Posterior field mean and 3x3 covariance at each query point.

    Points outside the domain are evaluated anyway and flagged in
    ``outside``; there the anomaly basis vanishes and only the linear part
    remains.
    """
    X = np.asarray(x_star, float).reshape(-1, 3)
    if not covariance:
        return project(model.index_set, model.mean, None, X, potential, mean_only=True)
    return project(model.index_set, model.mean, _cov_root(model), X, potential)


def _cov_root(model: BatchModel):
    # cov = R^T R with R = sqrt(s) L^-1
    p = model.chol.shape[0]
    Linv = solve_triangular(model.chol, np.eye(p), lower=True)
    return math.sqrt(model.theta.sigma2_noise) * Linv


def project(
    index_set: BasisIndexSet, mean, cov_root, X, potential: bool = False, cov=None, mean_only: bool = False
) -> FieldPrediction:
    """Push a coefficient posterior through the basis at points ``X``.

    Either ``cov_root`` (with ``cov = cov_root.T @ cov_root``) or ``cov``
    must be supplied unless ``mean_only``, in which case the returned
    covariances are NaN.
    """
    k = X.shape[0]
    out_mean = np.empty((k, 3))
    out_cov = np.empty((k, 3, 3))
    pot_mean = np.empty(k) if potential else None
    pot_var = np.empty(k) if potential else None
    for lo in range(0, k, _PRED_CHUNK):
        xs = X[lo : lo + _PRED_CHUNK]
        G = gradient_design(xs, index_set)
        out_mean[lo : lo + len(xs)] = (G @ mean).reshape(-1, 3)
        if mean_only:
            out_cov[lo : lo + len(xs)] = np.nan
        elif cov_root is not None:
            V = (cov_root @ G.T).reshape(-1, len(xs), 3)
            out_cov[lo : lo + len(xs)] = np.einsum("pki,pkj->kij", V, V)
        else:
            Gb = G.reshape(len(xs), 3, -1)
            M = (G @ cov).reshape(len(xs), 3, -1)
            out_cov[lo : lo + len(xs)] = M @ Gb.transpose(0, 2, 1)
        if potential:
            P = potential_design(xs, index_set)
            pot_mean[lo : lo + len(xs)] = P @ mean
            if mean_only:
                pot_var[lo : lo + len(xs)] = np.nan
            elif cov_root is not None:
                pot_var[lo : lo + len(xs)] = np.sum((cov_root @ P.T) ** 2, axis=0)
            else:
                pot_var[lo : lo + len(xs)] = np.sum((P @ cov) * P, axis=1)
    out_cov = 0.5 * (out_cov + out_cov.transpose(0, 2, 1))
    outside = ~index_set.domain.contains(X)
    return FieldPrediction(out_mean, out_cov, pot_mean, pot_var, outside)


def prior_model(index_set: BasisIndexSet, theta: Hyperparameters) -> BatchModel:
    """The n = 0 posterior: zero mean, covariance Lambda."""
    cache = GramCache(np.zeros((index_set.m + 3,) * 2), np.zeros((index_set.m + 3, 1)), 0.0, 0)
    return fit_cache(cache, index_set, theta, 0)


# ---------------------------------------------------------------------------
# Hyperparameter optimization
# ---------------------------------------------------------------------------

DEFAULT_BOUNDS = {
    "sigma2_lin": (1e-6, 1e6),
    "sigma2_se": (1e-6, 1e6),
    "ell_se": (1e-6, 1e6),
    "sigma2_noise": (1e-6, 1e6),
}


@dataclass
class OptimizeOptions:
    """Settings for :func:`optimize_hyperparameters`.

    ``bounds`` maps parameter names to (low, high) in natural units;
    ``fixed`` names parameters held at their initial value.
    """

    bounds: Dict[str, Tuple[float, float]] = field(default_factory=dict)
    fixed: Sequence[str] = ()
    maxiter: int = 200
    gtol: float = 1e-6
    max_step: float = math.log(10.0)
    max_rounds: int = 20

    def bound(self, name: str) -> Tuple[float, float]:
        return self.bounds.get(name, DEFAULT_BOUNDS[name])


@dataclass(frozen=True)
class OptimizeResult:
    theta: Hyperparameters
    nlml: float
    n_iter: int
    converged: bool
    message: str
    at_bounds: Tuple[str, ...]
    trace: Tuple[Tuple[np.ndarray, float], ...]


def minimize_log_params(
    objective: Callable[[np.ndarray], Tuple[float, np.ndarray]],
    x0: np.ndarray,
    names: Sequence[str],
    opts: OptimizeOptions,
):
    """L-BFGS-B over log-parameters with box bounds and fixed entries.

    Each round runs L-BFGS-B inside a box of half-width ``opts.max_step``
    (log units) around the current point, intersected with the global
    bounds, and re-centres until the solution lies strictly inside its box.
    Without this, the first quasi-Newton step from a poor start can land on
    the all-noise plateau (tiny length-scale) where the gradient vanishes.

    ``objective`` maps the full log-parameter vector to (value, gradient).
    Non-finite evaluations are answered with a penalty so that the line
    search backs off; if no evaluation is finite an OptimizationError is
    raised. Returns ``(x_best, f_best, n_iter, converged, message, trace)``;
    ``converged`` also holds when the gradient is below ``gtol`` relative to
    ``|f|``, which is where L-BFGS-B line searches stall in double precision.
    """
    x0 = np.asarray(x0, float)
    free = np.array([n not in opts.fixed for n in names])
    lo = np.log([opts.bound(n)[0] for n in names])
    hi = np.log([opts.bound(n)[1] for n in names])
    x0 = np.where(free, np.clip(x0, lo, hi), x0)
    trace: List[Tuple[np.ndarray, float]] = []
    best = {"f": np.inf, "x": x0.copy(), "g": np.zeros(free.sum())}

    def fun(z):
        x = best["x"].copy()
        x[free] = z
        try:
            f, g = objective(x)
        except (NumericalError, FloatingPointError, OverflowError):
            f, g = np.nan, None
        if g is None or not np.isfinite(f) or not np.all(np.isfinite(g)):
            trace.append((np.exp(x), float("nan")))
            base = best["f"] if np.isfinite(best["f"]) else 1e100
            return base + 1e6 + float(np.sum((z - best["x"][free]) ** 2)), -best["g"]
        trace.append((np.exp(x), float(f)))
        if f < best["f"]:
            best.update(f=float(f), x=x.copy(), g=g[free])
        return f, g[free]

    if not free.any():
        f, _ = objective(x0)
        return x0, float(f), 0, True, "all parameters fixed", trace
    n_iter, res = 0, None
    for _ in range(opts.max_rounds):
        centre = best["x"][free].copy()
        blo = np.maximum(lo[free], centre - opts.max_step)
        bhi = np.minimum(hi[free], centre + opts.max_step)
        res = minimize(
            fun,
            centre,
            jac=True,
            method="L-BFGS-B",
            bounds=list(zip(blo, bhi)),
            options={"maxiter": max(opts.maxiter - n_iter, 1), "gtol": opts.gtol, "ftol": 1e-13},
        )
        n_iter += int(res.nit)
        if not np.isfinite(best["f"]):
            raise OptimizationError("no finite objective value during optimization", trace)
        z = best["x"][free]
        tol = 1e-8
        on_box = ((z <= blo + tol) & (blo > lo[free])) | ((z >= bhi - tol) & (bhi < hi[free]))
        if not on_box.any() or n_iter >= opts.maxiter:
            break
    # a line-search stall at the roundoff floor of f still counts as converged
    g_inf = float(np.max(np.abs(best["g"]))) if best["g"].size else 0.0
    converged = bool(res.success) or g_inf <= opts.gtol * max(1.0, abs(best["f"]))
    return best["x"], best["f"], n_iter, converged, str(res.message), trace


def theta_from_log(x: np.ndarray, theta0: Hyperparameters, opts: OptimizeOptions) -> Hyperparameters:
    """Map optimizer output back, keeping fixed parameters bit-identical to ``theta0``."""
    vals = np.exp(x)
    for i, n in enumerate(THETA_NAMES):
        if n in opts.fixed:
            vals[i] = getattr(theta0, n)
    return Hyperparameters.from_array(vals, ell_time=theta0.ell_time)


def _bound_hits(x: np.ndarray, names: Sequence[str], opts: OptimizeOptions) -> Tuple[str, ...]:
    hits = []
    for v, n in zip(x, names):
        if n in opts.fixed:
            continue
        lo, hi = np.log(opts.bound(n))
        if v <= lo + 1e-6 or v >= hi - 1e-6:
            hits.append(n)
    return tuple(hits)


def optimize_cache(
    cache: GramCache,
    index_set: BasisIndexSet,
    theta0: Hyperparameters,
    opts: Optional[OptimizeOptions] = None,
) -> OptimizeResult:
    opts = opts or OptimizeOptions()

    def objective(x):
        th = Hyperparameters.from_array(np.exp(x))
        return nlml(th, cache, index_set, grad=True)

    x, f, nit, ok, msg, trace = minimize_log_params(
        objective, np.log(theta0.as_array()), THETA_NAMES, opts
    )
    theta = theta_from_log(x, theta0, opts)
    hits = _bound_hits(x, THETA_NAMES, opts)
    if hits:
        log.info("hyperparameters at bounds: %s", ", ".join(hits))
    return OptimizeResult(theta, f, nit, ok, msg, hits, tuple(trace))


def optimize_hyperparameters(
    samples,
    domain: Domain,
    m,
    theta0: Hyperparameters,
    opts: Optional[OptimizeOptions] = None,
) -> OptimizeResult:
    """Maximize the reduced-rank marginal likelihood over log-parameters.

    The cross products are computed once; each iteration then costs O(m^3).
    Parameters ending on a bound are listed in ``at_bounds``.
    """
    data = as_dataset(samples)
    index_set = m if isinstance(m, BasisIndexSet) else build_index_set(m, domain)
    cache = potential_cache(data, index_set)
    return optimize_cache(cache, index_set, theta0, opts)


def fit_optimized(
    samples,
    domain: Domain,
    m,
    theta0: Hyperparameters,
    opts: Optional[OptimizeOptions] = None,
) -> Tuple[BatchModel, OptimizeResult]:
    """Optimize theta on the cached Gram, then solve once at the optimum."""
    data = as_dataset(samples)
    index_set = m if isinstance(m, BasisIndexSet) else build_index_set(m, domain)
    cache = potential_cache(data, index_set)
    res = optimize_cache(cache, index_set, theta0, opts)
    model = fit_cache(cache, index_set, res.theta, len(data))
    return _with_nlml(model, cache), res
