"""Shared value types: samples, datasets, the cuboid domain and hyperparameters.

Units are fixed throughout the package: positions in meters, magnetic field
in microtesla (uT), time in seconds.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np


class MagmapError(Exception):
    """Base class for all package errors."""


class ParameterError(MagmapError, ValueError):
    """A hyperparameter or argument is outside its admissible range."""


class DomainError(MagmapError, ValueError):
    """Training data falls outside the modelling domain."""


class NumericalError(MagmapError, ArithmeticError):
    """A factorization failed even after jitter escalation."""


class OrderingError(MagmapError, ValueError):
    """Timestamps regressed in a stream that requires monotone time."""


@dataclass(frozen=True)
class MagneticSample:
    """One vector magnetometer reading at a known position."""

    x: tuple
    y: tuple
    t: Optional[float] = None

    def __post_init__(self):
        x = tuple(float(v) for v in self.x)
        y = tuple(float(v) for v in self.y)
        if len(x) != 3 or len(y) != 3:
            raise ValueError("position and field must have 3 components")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        if self.t is not None:
            object.__setattr__(self, "t", float(self.t))


@dataclass(frozen=True)
class Dataset:
    """Column-stacked samples.

    Attributes
    ----------
    x : (n, 3) array
        Positions in meters.
    y : (n, 3) array
        Field readings in uT.
    t : (n,) array or None
        Timestamps in seconds; ``None`` for static data.
    """

    x: np.ndarray
    y: np.ndarray
    t: Optional[np.ndarray] = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).reshape(-1, 3)
        y = np.asarray(self.y, dtype=float).reshape(-1, 3)
        if x.shape != y.shape:
            raise ValueError(f"x has {len(x)} rows but y has {len(y)}")
        t = self.t
        if t is not None:
            t = np.asarray(t, dtype=float).reshape(-1)
            if t.shape[0] != x.shape[0]:
                raise ValueError("t must have one entry per sample")
        x.setflags(write=False)
        y.setflags(write=False)
        if t is not None:
            t.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "t", t)

    def __len__(self) -> int:
        return self.x.shape[0]

    def __iter__(self) -> Iterator[MagneticSample]:
        for i in range(len(self)):
            t = None if self.t is None else self.t[i]
            yield MagneticSample(tuple(self.x[i]), tuple(self.y[i]), t)

    def __getitem__(self, index) -> "Dataset":
        if isinstance(index, (int, np.integer)):
            index = [int(index)]
        t = None if self.t is None else self.t[index]
        return Dataset(self.x[index], self.y[index], t)

    @classmethod
    def from_samples(cls, samples: Iterable[MagneticSample]) -> "Dataset":
        samples = list(samples)
        if not samples:
            return cls(np.empty((0, 3)), np.empty((0, 3)))
        x = np.array([s.x for s in samples])
        y = np.array([s.y for s in samples])
        ts = [s.t for s in samples]
        t = None if any(v is None for v in ts) else np.array(ts)
        return cls(x, y, t)

    @classmethod
    def empty(cls) -> "Dataset":
        return cls(np.empty((0, 3)), np.empty((0, 3)))


def as_dataset(data) -> Dataset:
    if isinstance(data, Dataset):
        return data
    return Dataset.from_samples(data)


@dataclass(frozen=True)
class Domain:
    """Axis-aligned cuboid ``center +/- half_lengths``.

    All basis evaluations translate inputs by ``center`` first, so the
    cuboid need not be centred at the origin.
    """

    half_lengths: tuple
    center: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        hl = tuple(float(v) for v in np.broadcast_to(self.half_lengths, 3))
        c = tuple(float(v) for v in np.broadcast_to(self.center, 3))
        if not all(np.isfinite(hl)) or min(hl) <= 0:
            raise ParameterError(f"half_lengths must be positive, got {hl}")
        if not all(np.isfinite(c)):
            raise ParameterError("center must be finite")
        object.__setattr__(self, "half_lengths", hl)
        object.__setattr__(self, "center", c)

    @property
    def L(self) -> np.ndarray:
        return np.array(self.half_lengths)

    @property
    def c(self) -> np.ndarray:
        return np.array(self.center)

    def contains(self, x) -> np.ndarray:
        """Boolean mask of points inside the closed cuboid.

        Faces are widened by a few ulps so that points computed as
        ``c +/- L`` in floating point count as inside.
        """
        x = np.asarray(x, dtype=float)
        slack = 4 * np.finfo(float).eps * (self.L + np.abs(self.c))
        return np.all(np.abs(x - self.c) <= self.L + slack, axis=-1)

    def translate(self, offset) -> "Domain":
        return Domain(self.half_lengths, tuple(self.c + np.asarray(offset, float)))

    def to_dict(self) -> dict:
        return {"center": list(self.center), "half_lengths": list(self.half_lengths)}

    @classmethod
    def from_dict(cls, d: dict) -> "Domain":
        return cls(tuple(d["half_lengths"]), tuple(d.get("center", (0.0, 0.0, 0.0))))


def auto_domain(x, ell_se: Optional[float] = None, margin: Optional[float] = None) -> Domain:
    """Bounding box of ``x`` padded on every side.

    The pad per axis is ``margin`` when given, otherwise the larger of
    ``2 * ell_se`` and 20% of the extent along that axis. Flat axes (planar
    trajectories) still get a positive pad.
    """
    x = np.asarray(x, dtype=float).reshape(-1, 3)
    if len(x) == 0:
        raise DomainError("cannot derive a domain from zero samples")
    lo, hi = x.min(axis=0), x.max(axis=0)
    extent = hi - lo
    if margin is not None:
        pad = np.full(3, float(margin))
    else:
        pad = 0.2 * extent
        if ell_se is not None:
            pad = np.maximum(pad, 2.0 * ell_se)
    floor = 0.1 * max(float(extent.max()), 1e-3)
    pad = np.maximum(pad, floor)
    return Domain(tuple(extent / 2 + pad), tuple((lo + hi) / 2))


_THETA_NAMES = ("sigma2_lin", "sigma2_se", "ell_se", "sigma2_noise")


@dataclass(frozen=True)
class Hyperparameters:
    """Covariance hyperparameters.

    For the scalar-potential model ``sigma2_lin`` scales the linear potential
    kernel; for the component-wise baselines the same slot holds the constant
    kernel variance. ``ell_time`` is only used by the spatio-temporal filter.
    """

    sigma2_lin: float
    sigma2_se: float
    ell_se: float
    sigma2_noise: float
    ell_time: Optional[float] = None

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            v = float(v)
            # an infinite time scale is the static-field limit
            ok = v > 0 and (np.isfinite(v) or (f.name == "ell_time" and v == np.inf))
            if not ok:
                raise ParameterError(f"{f.name} must be positive and finite, got {v}")
            object.__setattr__(self, f.name, v)

    @property
    def field_magnitude(self) -> float:
        """Anomaly magnitude in (uT)^2, i.e. sigma2_se / ell_se**2."""
        return self.sigma2_se / self.ell_se**2

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in _THETA_NAMES])

    @classmethod
    def from_array(cls, values, ell_time: Optional[float] = None) -> "Hyperparameters":
        return cls(*(float(v) for v in values), ell_time=ell_time)

    def replace(self, **kw) -> "Hyperparameters":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        d = {n: getattr(self, n) for n in _THETA_NAMES}
        if self.ell_time is not None:
            d["ell_time"] = self.ell_time
        d["field_magnitude"] = self.field_magnitude
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparameters":
        if "sigma2_se" not in d and "field_magnitude" in d:
            d = dict(d, sigma2_se=d["field_magnitude"] * d["ell_se"] ** 2)
        return cls(
            d["sigma2_lin"], d["sigma2_se"], d["ell_se"], d["sigma2_noise"], d.get("ell_time")
        )


THETA_NAMES = _THETA_NAMES


@dataclass(frozen=True)
class FieldPrediction:
    """Posterior marginals of the field at ``k`` query points.

    ``mean`` is (k, 3), ``covariance`` is (k, 3, 3). The potential entries
    refer to the latent potential whose *positive* gradient is the field.
    ``outside`` flags query points outside the domain, where the anomaly
    part of the model has reverted to zero.
    """

    mean: np.ndarray
    covariance: np.ndarray
    potential_mean: Optional[np.ndarray] = None
    potential_variance: Optional[np.ndarray] = None
    outside: Optional[np.ndarray] = None

    @property
    def variance(self) -> np.ndarray:
        return np.diagonal(self.covariance, axis1=-2, axis2=-1)

    @property
    def magnitude(self) -> np.ndarray:
        return np.linalg.norm(self.mean, axis=-1)

    def __len__(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class ValidationReport:
    n: int
    inside_count: int
    outside_count: int
    outside_rows: tuple = ()
    nonfinite_rows: tuple = ()
    timestamp_regressions: tuple = ()

    @property
    def ok(self) -> bool:
        return not (self.outside_rows or self.nonfinite_rows or self.timestamp_regressions)


def validate_dataset(samples, domain: Domain) -> ValidationReport:
    """Describe problems with a dataset without raising.

    Rows with non-finite entries count as neither inside nor outside.
    Timestamp regressions list the row index ``i`` where ``t[i] < t[i-1]``.
    """
    data = as_dataset(samples)
    n = len(data)
    finite = np.isfinite(data.x).all(axis=1) & np.isfinite(data.y).all(axis=1)
    if data.t is not None:
        finite &= np.isfinite(data.t)
    inside = domain.contains(data.x) & finite
    outside = ~inside & finite
    regress: Sequence[int] = ()
    if data.t is not None and n > 1:
        regress = tuple(int(i) + 1 for i in np.flatnonzero(np.diff(data.t) < 0))
    return ValidationReport(
        n=n,
        inside_count=int(inside.sum()),
        outside_count=int(outside.sum()),
        outside_rows=tuple(int(i) for i in np.flatnonzero(outside)),
        nonfinite_rows=tuple(int(i) for i in np.flatnonzero(~finite)),
        timestamp_regressions=tuple(regress),
    )


def require_inside(x, domain: Domain) -> None:
    """Raise DomainError naming the first training row outside ``domain``."""
    x = np.asarray(x, dtype=float).reshape(-1, 3)
    if not np.isfinite(x).all():
        row = int(np.flatnonzero(~np.isfinite(x).all(axis=1))[0])
        raise DomainError(f"row {row}: non-finite position")
    bad = np.flatnonzero(~domain.contains(x))
    if bad.size:
        row = int(bad[0])
        raise DomainError(
            f"row {row}: position {x[row].tolist()} is outside the domain "
            f"(center {list(domain.center)}, half-lengths {list(domain.half_lengths)}); "
            f"{bad.size} row(s) outside in total"
        )
