"""Dirichlet Laplace eigenbasis on a cuboid and the reduced-rank design matrices.

The anomaly part of the potential is expanded in the eigenfunctions of the
negative Laplacian on the domain with zero boundary values,

    phi_j(x) = prod_d L_d**-0.5 * sin(pi * n_jd * (x_d - c_d + L_d) / (2 L_d)),

with eigenvalues ``lambda_j**2 = sum_d (pi * n_jd / (2 L_d))**2``. The three
linear basis functions (the translated coordinates) carry the linear
potential kernel, so every coefficient vector has length ``3 + m``.

Design-matrix convention: the measurement matrix is ``+grad Phi``. The
exposed potential is therefore the negative of the magnetic scalar potential.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .types import Dataset, Domain, Hyperparameters, as_dataset, require_inside

INDEX_FORMAT_VERSION = 1
_CHUNK = 4096


@dataclass(frozen=True)
class BasisIndexSet:
    """The ``m`` lowest Dirichlet modes of a domain.

    ``indices`` is an (m, 3) integer array of mode numbers (all >= 1) and
    ``eigenvalues`` holds the matching ``lambda_j**2`` in ascending order.
    """

    domain: Domain
    indices: np.ndarray
    eigenvalues: np.ndarray

    def __post_init__(self):
        self.indices.setflags(write=False)
        self.eigenvalues.setflags(write=False)

    @property
    def m(self) -> int:
        return self.indices.shape[0]

    @property
    def frequencies(self) -> np.ndarray:
        return np.sqrt(self.eigenvalues)


def _eigenvalues(indices: np.ndarray, L: np.ndarray) -> np.ndarray:
    terms = (np.pi * indices / (2.0 * L)) ** 2
    # summing the sorted terms makes permuted modes of a cube bitwise equal
    terms.sort(axis=1)
    return terms[:, 0] + terms[:, 1] + terms[:, 2]


def build_index_set(m: int, domain: Domain) -> BasisIndexSet:
    """Select the ``m`` modes with the smallest eigenvalues.

    Ties are broken lexicographically on ``(n1, n2, n3)``. The candidate grid
    is widened until the m-th selected eigenvalue lies below every excluded
    single-axis mode, which guarantees global optimality of the selection.
    """
    m = int(m)
    if m < 1:
        raise ValueError("m must be at least 1")
    L = domain.L
    cap = math.ceil(m ** (1 / 3)) * math.ceil(L.max() / L.min()) + 2
    while True:
        r = np.arange(1, cap + 1)
        grid = np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1).reshape(-1, 3)
        lam2 = _eigenvalues(grid, L)
        order = np.lexsort((grid[:, 2], grid[:, 1], grid[:, 0], lam2))[:m]
        if len(order) == m:
            base = (np.pi / (2 * L)) ** 2
            # cheapest mode with one index beyond the cap
            excluded = base.sum() + base * ((cap + 1) ** 2 - 1)
            if lam2[order[-1]] < excluded.min():
                break
        cap *= 2
    idx = grid[order].astype(np.int64)
    return BasisIndexSet(domain, idx, lam2[order].copy())


def eval_phi(x, index, domain: Domain) -> float:
    """Single eigenfunction at a single point."""
    x = np.asarray(x, dtype=float) - domain.c
    n = np.asarray(index, dtype=float)
    L = domain.L
    return float(np.prod(np.sin(np.pi * n * (x + L) / (2 * L)) / np.sqrt(L)))


def eval_grad_phi(x, index, domain: Domain) -> np.ndarray:
    """Analytic gradient of :func:`eval_phi`."""
    x = np.asarray(x, dtype=float) - domain.c
    n = np.asarray(index, dtype=float)
    L = domain.L
    k = np.pi * n / (2 * L)
    s = np.sin(k * (x + L)) / np.sqrt(L)
    c = k * np.cos(k * (x + L)) / np.sqrt(L)
    return np.array([c[0] * s[1] * s[2], s[0] * c[1] * s[2], s[0] * s[1] * c[2]])


def _axis_tables(x: np.ndarray, index_set: BasisIndexSet, grad: bool):
    """Per-axis sine (and scaled cosine) factors gathered onto the modes."""
    L = index_set.domain.L
    xt = x - index_set.domain.c
    sins, coss = [], []
    for d in range(3):
        nd = index_set.indices[:, d]
        nmax = int(nd.max())
        k = np.pi * np.arange(1, nmax + 1) / (2 * L[d])
        arg = np.outer(xt[:, d] + L[d], k)
        scale = 1.0 / math.sqrt(L[d])
        sins.append((np.sin(arg) * scale)[:, nd - 1])
        if grad:
            coss.append((np.cos(arg) * (k * scale))[:, nd - 1])
    return sins, coss


def phi_matrix(x, index_set: BasisIndexSet) -> np.ndarray:
    """(n, m) eigenfunction values, without the linear columns."""
    x = np.asarray(x, dtype=float).reshape(-1, 3)
    out = np.empty((x.shape[0], index_set.m))
    for lo in range(0, x.shape[0], _CHUNK):
        s, _ = _axis_tables(x[lo : lo + _CHUNK], index_set, grad=False)
        out[lo : lo + _CHUNK] = s[0] * s[1] * s[2]
    return out


def grad_phi_tensor(x, index_set: BasisIndexSet) -> np.ndarray:
    """(n, 3, m) eigenfunction gradients, without the linear columns."""
    x = np.asarray(x, dtype=float).reshape(-1, 3)
    out = np.empty((x.shape[0], 3, index_set.m))
    for lo in range(0, x.shape[0], _CHUNK):
        s, c = _axis_tables(x[lo : lo + _CHUNK], index_set, grad=True)
        blk = out[lo : lo + _CHUNK]
        blk[:, 0] = c[0] * s[1] * s[2]
        blk[:, 1] = s[0] * c[1] * s[2]
        blk[:, 2] = s[0] * s[1] * c[2]
    return out


def potential_design(x, index_set: BasisIndexSet) -> np.ndarray:
    """Rows ``(x - c, phi_1(x), ..., phi_m(x))``, shape (n, 3 + m)."""
    x = np.asarray(x, dtype=float).reshape(-1, 3)
    return np.hstack([x - index_set.domain.c, phi_matrix(x, index_set)])


def gradient_design(x, index_set: BasisIndexSet) -> np.ndarray:
    """Stacked 3x(3+m) gradient blocks, shape (3n, 3 + m), sample-major.

    Row ``3*i + d`` is the derivative along axis ``d`` at sample ``i``, so a
    coefficient product reshaped to (n, 3) gives the field per sample.
    """
    x = np.asarray(x, dtype=float).reshape(-1, 3)
    n = x.shape[0]
    out = np.zeros((n, 3, 3 + index_set.m))
    out[:, :, :3] = np.eye(3)
    out[:, :, 3:] = grad_phi_tensor(x, index_set)
    return out.reshape(3 * n, 3 + index_set.m)


def spectral_density_se(omega, sigma2_se: float, ell_se: float):
    """Spectral density of the 3-D squared exponential kernel."""
    omega = np.asarray(omega, dtype=float)
    return sigma2_se * (2 * np.pi * ell_se**2) ** 1.5 * np.exp(-(omega**2) * ell_se**2 / 2)


def log_spectral_density_se(lam2, sigma2_se: float, ell_se: float):
    """``log S(lambda)`` from squared frequencies; finite where S underflows."""
    lam2 = np.asarray(lam2, dtype=float)
    return math.log(sigma2_se) + 1.5 * math.log(2 * np.pi * ell_se**2) - lam2 * ell_se**2 / 2


def lambda_diag(index_set: BasisIndexSet, theta: Hyperparameters) -> np.ndarray:
    """Prior variances of the 3 + m coefficients."""
    lam = np.exp(log_lambda_diag(index_set, theta))
    lam[:3] = theta.sigma2_lin
    return lam


def log_lambda_diag(index_set: BasisIndexSet, theta: Hyperparameters) -> np.ndarray:
    return np.concatenate(
        [
            np.full(3, math.log(theta.sigma2_lin)),
            log_spectral_density_se(index_set.eigenvalues, theta.sigma2_se, theta.ell_se),
        ]
    )


@dataclass(frozen=True)
class BasisWorkspace:
    """Design matrices for one dataset plus the prior variances for one theta."""

    domain: Domain
    index_set: BasisIndexSet
    Phi: np.ndarray
    GradPhi: np.ndarray
    Lambda_diag: np.ndarray

    @property
    def m(self) -> int:
        return self.index_set.m

    @property
    def n(self) -> int:
        return self.Phi.shape[0]

    def with_theta(self, theta: Hyperparameters) -> "BasisWorkspace":
        """Same design matrices (shared, not copied) under new hyperparameters."""
        return BasisWorkspace(
            self.domain, self.index_set, self.Phi, self.GradPhi, lambda_diag(self.index_set, theta)
        )


def build_workspace(
    samples,
    domain: Domain,
    m,
    theta: Hyperparameters,
) -> BasisWorkspace:
    """Evaluate Phi, grad Phi and Lambda for ``samples``.

    ``m`` may be a mode count or a prebuilt :class:`BasisIndexSet`.
    Raises DomainError naming the first sample outside ``domain``.
    """
    data = as_dataset(samples)
    require_inside(data.x, domain)
    index_set = m if isinstance(m, BasisIndexSet) else build_index_set(m, domain)
    Phi = potential_design(data.x, index_set)
    GradPhi = gradient_design(data.x, index_set)
    for a in (Phi, GradPhi):
        a.setflags(write=False)
    return BasisWorkspace(domain, index_set, Phi, GradPhi, lambda_diag(index_set, theta))


# index-set cache -----------------------------------------------------------


def index_set_key(domain: Domain, m: int) -> str:
    payload = repr((INDEX_FORMAT_VERSION, domain.half_lengths, domain.center, int(m)))
    return hashlib.sha1(payload.encode()).hexdigest()[:16]


def save_index_set(index_set: BasisIndexSet, path) -> None:
    """CSV dump: comment header with version and domain, then n1,n2,n3,lambda2."""
    path = Path(path)
    d = index_set.domain
    with path.open("w", newline="") as fh:
        fh.write(f"# magmap-index-set v{INDEX_FORMAT_VERSION}\n")
        fh.write("# half_lengths=" + ",".join(repr(v) for v in d.half_lengths) + "\n")
        fh.write("# center=" + ",".join(repr(v) for v in d.center) + "\n")
        w = csv.writer(fh)
        w.writerow(["n1", "n2", "n3", "lambda2"])
        for row, lam2 in zip(index_set.indices, index_set.eigenvalues):
            w.writerow([int(row[0]), int(row[1]), int(row[2]), repr(float(lam2))])


def load_index_set(path) -> BasisIndexSet:
    lines = Path(path).read_text().splitlines()
    head = "# magmap-index-set v"
    if not lines or not lines[0].startswith(head):
        raise ValueError(f"{path}: not an index-set file")
    if int(lines[0][len(head):]) != INDEX_FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported index-set version {lines[0][len(head):]}")
    meta = {}
    body = []
    for line in lines[1:]:
        if line.startswith("#"):
            k, v = line[1:].strip().split("=", 1)
            meta[k] = tuple(float(s) for s in v.split(","))
        else:
            body.append(line)
    rows = list(csv.reader(body))[1:]
    domain = Domain(meta["half_lengths"], meta["center"])
    idx = np.array([[int(r[0]), int(r[1]), int(r[2])] for r in rows], dtype=np.int64).reshape(-1, 3)
    lam2 = np.array([float(r[3]) for r in rows])
    return BasisIndexSet(domain, idx, lam2)


def cached_index_set(m: int, domain: Domain, cache_dir: Optional[Path] = None) -> BasisIndexSet:
    """:func:`build_index_set` backed by an on-disk cache keyed by (domain, m)."""
    if cache_dir is None:
        return build_index_set(m, domain)
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    path = cache_dir / f"index-{index_set_key(domain, m)}.csv"
    if path.exists():
        return load_index_set(path)
    index_set = build_index_set(m, domain)
    save_index_set(index_set, path)
    return index_set


def workspace_for(data: Dataset, index_set: BasisIndexSet, theta: Hyperparameters) -> BasisWorkspace:
    return build_workspace(data, index_set.domain, index_set, theta)
