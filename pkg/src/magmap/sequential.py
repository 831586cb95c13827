"""Sequential (Kalman) updating of the reduced-rank coefficients.

Static mode processes one sample at a time and reproduces the batch
posterior. Spatio-temporal mode puts an Ornstein-Uhlenbeck prior in time on
the anomaly coefficients: between samples they decay by
``a = exp(-dt / ell_time)`` and gain process noise ``S_j * (1 - a**2)``, which
keeps the prior ``Lambda`` stationary. The three linear coefficients are
static.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np

from .basis import BasisIndexSet, gradient_design, lambda_diag
from .batch import BatchModel, project
from .types import (
    FieldPrediction,
    Hyperparameters,
    NumericalError,
    OrderingError,
    as_dataset,
    require_inside,
)


@dataclass(frozen=True)
class SequentialState:
    """Coefficient mean and covariance after ``samples_seen`` updates."""

    index_set: BasisIndexSet
    theta: Hyperparameters
    mu: np.ndarray
    Sigma: np.ndarray
    t_last: Optional[float] = None
    samples_seen: int = 0

    @property
    def prior_diag(self) -> np.ndarray:
        return lambda_diag(self.index_set, self.theta)


def init(index_set: BasisIndexSet, theta: Hyperparameters) -> SequentialState:
    """Prior state: zero mean, covariance ``Lambda``."""
    lam = lambda_diag(index_set, theta)
    return SequentialState(index_set, theta, np.zeros(lam.size), np.diag(lam))


def from_batch(model: BatchModel, t_last: Optional[float] = None) -> SequentialState:
    """Continue streaming from a batch posterior."""
    return SequentialState(
        model.index_set, model.theta, model.mean.copy(), model.covariance, t_last, model.n
    )


def _measurement_update(mu, Sigma, H, y, noise):
    """In-place Kalman update with a 3-row measurement matrix ``H``.

    Joseph form expanded in rank-3 terms, O(p^2):
    ``Sigma - K P^T - P K^T + K S K^T`` with ``P = Sigma H^T``.
    """
    P = Sigma @ H.T
    S = H @ P
    S[np.diag_indices(3)] += noise
    try:
        K = np.linalg.solve(S, P.T).T
    except np.linalg.LinAlgError as exc:
        raise NumericalError("innovation covariance is singular") from exc
    mu += K @ (y - H @ mu)
    KS = K @ S
    Sigma -= K @ P.T
    Sigma -= P @ K.T
    Sigma += KS @ K.T
    Sigma += Sigma.T
    Sigma *= 0.5


def _propagate_inplace(mu, Sigma, lam_se, dt, ell_time):
    if dt == 0.0:
        return
    a = math.exp(-dt / ell_time)
    q = -math.expm1(-2.0 * dt / ell_time)
    mu[3:] *= a
    Sigma[3:, 3:] *= a * a
    Sigma[:3, 3:] *= a
    Sigma[3:, :3] *= a
    idx = np.arange(3, Sigma.shape[0])
    Sigma[idx, idx] += lam_se * q


def update_static(state: SequentialState, sample) -> SequentialState:
    """Absorb one sample assuming a time-invariant field."""
    x, y = np.asarray(sample.x, float), np.asarray(sample.y, float)
    require_inside(x, state.index_set.domain)
    H = gradient_design(x, state.index_set)
    mu, Sigma = state.mu.copy(), state.Sigma.copy()
    _measurement_update(mu, Sigma, H, y, state.theta.sigma2_noise)
    t = state.t_last if getattr(sample, "t", None) is None else float(sample.t)
    return SequentialState(state.index_set, state.theta, mu, Sigma, t, state.samples_seen + 1)


def propagate(state: SequentialState, t_new: float, ell_time: Optional[float] = None) -> SequentialState:
    """Time update to ``t_new`` under the OU prior on anomaly coefficients.

    ``ell_time`` defaults to ``state.theta.ell_time``; ``inf`` freezes the
    field. A zero time step returns the state unchanged.
    """
    ell_time = state.theta.ell_time if ell_time is None else ell_time
    if ell_time is None:
        raise ValueError("spatio-temporal propagation needs ell_time")
    t_new = float(t_new)
    if state.t_last is None:
        return SequentialState(state.index_set, state.theta, state.mu, state.Sigma, t_new, state.samples_seen)
    dt = t_new - state.t_last
    if dt < 0:
        raise OrderingError(f"time went backwards: {t_new} < {state.t_last}")
    if dt == 0.0:
        return state
    mu, Sigma = state.mu.copy(), state.Sigma.copy()
    _propagate_inplace(mu, Sigma, state.prior_diag[3:], dt, ell_time)
    return SequentialState(state.index_set, state.theta, mu, Sigma, t_new, state.samples_seen)


def update_spatiotemporal(state: SequentialState, sample, ell_time: Optional[float] = None) -> SequentialState:
    """Propagate to the sample time, then apply the measurement update."""
    if sample.t is None:
        raise ValueError("spatio-temporal update needs timestamped samples")
    return update_static(propagate(state, sample.t, ell_time), sample)


def predict_at(state: SequentialState, x_star, potential: bool = False) -> FieldPrediction:
    """Field mean ``H mu`` and covariance ``H Sigma H^T`` at query points."""
    X = np.asarray(x_star, float).reshape(-1, 3)
    return project(state.index_set, state.mu, None, X, potential, cov=state.Sigma)


class SequentialFilter:
    """Mutable single-writer wrapper used for long streams.

    Updates happen in place; :meth:`snapshot` returns an immutable
    :class:`SequentialState` copy that is safe to hand to readers.
    """

    def __init__(self, state: SequentialState, mode: str = "static"):
        if mode not in ("static", "spatiotemporal"):
            raise ValueError(f"unknown mode {mode!r}")
        if mode == "spatiotemporal" and state.theta.ell_time is None:
            raise ValueError("spatio-temporal mode needs theta.ell_time")
        self.mode = mode
        self.index_set = state.index_set
        self.theta = state.theta
        self.mu = state.mu.copy()
        self.Sigma = state.Sigma.copy()
        self.t_last = state.t_last
        self.samples_seen = state.samples_seen
        self._lam_se = state.prior_diag[3:]

    def update(self, x, y, t: Optional[float] = None) -> None:
        x = np.asarray(x, float)
        require_inside(x, self.index_set.domain)
        if self.mode == "spatiotemporal":
            if t is None:
                raise ValueError("spatio-temporal mode needs timestamps")
            if self.t_last is not None:
                dt = float(t) - self.t_last
                if dt < 0:
                    raise OrderingError(f"time went backwards: {t} < {self.t_last}")
                _propagate_inplace(self.mu, self.Sigma, self._lam_se, dt, self.theta.ell_time)
        H = gradient_design(x, self.index_set)
        _measurement_update(self.mu, self.Sigma, H, np.asarray(y, float), self.theta.sigma2_noise)
        if t is not None:
            self.t_last = float(t)
        self.samples_seen += 1

    def run(self, samples, callback: Optional[Callable[[int, "SequentialFilter"], None]] = None) -> None:
        """Feed a dataset in order; ``callback(i, self)`` after each sample."""
        data = as_dataset(samples)
        ts = data.t if data.t is not None else [None] * len(data)
        for i in range(len(data)):
            self.update(data.x[i], data.y[i], ts[i])
            if callback is not None:
                callback(i, self)

    def snapshot(self) -> SequentialState:
        return SequentialState(
            self.index_set, self.theta, self.mu.copy(), self.Sigma.copy(), self.t_last, self.samples_seen
        )

    def predict(self, x_star, potential: bool = False) -> FieldPrediction:
        X = np.asarray(x_star, float).reshape(-1, 3)
        return project(self.index_set, self.mu, None, X, potential, cov=self.Sigma)


def run_static(state: SequentialState, samples: Iterable) -> SequentialState:
    f = SequentialFilter(state, "static")
    f.run(samples)
    return f.snapshot()


def run_spatiotemporal(state: SequentialState, samples: Iterable) -> SequentialState:
    f = SequentialFilter(state, "spatiotemporal")
    f.run(samples)
    return f.snapshot()
