from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from .types import NumericalError


def jittered_cholesky(K: np.ndarray, what: str = "Gram matrix"):
    """Lower Cholesky factor of ``K``, adding diagonal jitter if needed.

    Jitter starts at ``1e-10 * trace / n`` and grows tenfold, three attempts
    in total. Returns ``(L, jitter)``.
    """
    n = K.shape[0]
    if n == 0:
        return np.zeros((0, 0)), 0.0
    if not np.isfinite(K).all():
        raise NumericalError(f"{what} has non-finite entries")
    try:
        return sla.cholesky(K, lower=True, check_finite=False), 0.0
    except (np.linalg.LinAlgError, sla.LinAlgError):
        pass
    jitter = 1e-10 * max(float(np.trace(K)), np.finfo(float).tiny) / n
    for _ in range(3):
        try:
            L = sla.cholesky(K + jitter * np.eye(n), lower=True, check_finite=False)
            return L, jitter
        except (np.linalg.LinAlgError, sla.LinAlgError):
            jitter *= 10
    raise NumericalError(f"{what} is not positive definite after jitter escalation")


def chol_solve(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    return sla.cho_solve((L, True), b, check_finite=False)


def chol_logdet(L: np.ndarray) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def symmetrize(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + A.T)
