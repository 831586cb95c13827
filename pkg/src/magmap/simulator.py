"""Synthetic ground truth and Monte Carlo studies.

Ground-truth fields are draws from the potential-model prior on a large
eigenbasis, so they are exactly curl-free. Studies report the joint RMSE

    sqrt(mean over points and the 3 components of squared error)

against a ``k**3`` validation grid, plus per-component RMSE columns.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import batch, componentwise
from .basis import BasisIndexSet, build_index_set, gradient_design, lambda_diag, potential_design
from .kernels import dense_gp_fit_predict
from .types import Dataset, Domain, Hyperparameters, MagmapError, require_inside

log = logging.getLogger(__name__)

REFERENCE_THETA = Hyperparameters(sigma2_lin=0.3, sigma2_se=1.0, ell_se=0.1, sigma2_noise=0.04)
MODEL_NAMES = ("independent", "shared", "potential")


# ---------------------------------------------------------------------------
# Fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticField:
    """A prior draw ``f(x) = grad Phi(x) @ w`` with ``w ~ N(0, Lambda)``."""

    index_set: BasisIndexSet
    weights: np.ndarray
    theta: Hyperparameters
    seed: int

    @property
    def domain(self) -> Domain:
        return self.index_set.domain

    def __call__(self, x, t=None) -> np.ndarray:
        x = np.asarray(x, float).reshape(-1, 3)
        out = np.empty((len(x), 3))
        for lo in range(0, len(x), 2048):
            G = gradient_design(x[lo : lo + 2048], self.index_set)
            out[lo : lo + 2048] = (G @ self.weights).reshape(-1, 3)
        return out

    def potential(self, x) -> np.ndarray:
        return potential_design(x, self.index_set) @ self.weights


def sample_field(domain: Domain, theta: Hyperparameters, m_sim: int, seed: int) -> SyntheticField:
    """Draw a ground-truth field; identical seeds give identical fields."""
    index_set = build_index_set(m_sim, domain)
    rng = np.random.default_rng(seed)
    w = np.sqrt(lambda_diag(index_set, theta)) * rng.standard_normal(3 + index_set.m)
    w.setflags(write=False)
    return SyntheticField(index_set, w, theta, int(seed))


@dataclass(frozen=True)
class FieldEvent:
    """A localized field change switched on at ``t_on``.

    The change is the gradient of ``(v . r) exp(-|r|^2 / (2 radius^2))`` with
    ``r = x - center``: curl-free, equal to ``v`` at ``center`` and decaying
    like a Gaussian away from it.
    """

    t_on: float
    center: Tuple[float, float, float]
    vector: Tuple[float, float, float]
    radius: float

    def delta(self, x) -> np.ndarray:
        x = np.asarray(x, float).reshape(-1, 3)
        v = np.asarray(self.vector, float)
        r = x - np.asarray(self.center, float)
        e = np.exp(-np.sum(r * r, axis=1) / (2 * self.radius**2))
        return (v[None] - (r @ v)[:, None] * r / self.radius**2) * e[:, None]

    @property
    def magnitude(self) -> float:
        return float(np.linalg.norm(self.vector))


@dataclass(frozen=True)
class TimeVaryingField:
    base: Callable
    events: Tuple[FieldEvent, ...]

    def __call__(self, x, t) -> np.ndarray:
        x = np.asarray(x, float).reshape(-1, 3)
        t = np.broadcast_to(np.asarray(t, float), (len(x),))
        out = np.asarray(self.base(x), float).copy()
        for ev in self.events:
            on = t >= ev.t_on
            if on.any():
                out[on] += ev.delta(x[on])
        return out


def apply_field_event(field, event: FieldEvent) -> TimeVaryingField:
    """Base field before ``event.t_on``, base plus the localized change after."""
    if isinstance(field, TimeVaryingField):
        return TimeVaryingField(field.base, field.events + (event,))
    return TimeVaryingField(field, (event,))


def simulate_trajectory(
    field,
    waypoints,
    rate: float,
    sigma_noise: float,
    times=None,
    speed: Optional[float] = None,
    seed: int = 0,
    domain: Optional[Domain] = None,
) -> Dataset:
    """Noisy readings along a piecewise-linear path sampled at ``rate`` Hz.

    Waypoint times come from ``times`` or from a constant ``speed``. The
    sample count is ``ceil(duration * rate) + 1``; the last sample sits at
    the final waypoint. ``field`` is called as ``field(x)`` or, for
    time-varying fields, ``field(x, t)``.
    """
    P = np.asarray(waypoints, float).reshape(-1, 3)
    dom = domain if domain is not None else getattr(field, "domain", None)
    if dom is None and isinstance(field, TimeVaryingField):
        dom = getattr(field.base, "domain", None)
    if dom is not None:
        require_inside(P, dom)
    if times is None:
        if speed is None:
            raise ValueError("give waypoint times or a speed")
        seg = np.linalg.norm(np.diff(P, axis=0), axis=1)
        times = np.concatenate([[0.0], np.cumsum(seg) / speed])
    times = np.asarray(times, float)
    duration = float(times[-1] - times[0])
    count = math.ceil(round(duration * rate, 9)) + 1
    t = times[0] + np.arange(count) / rate
    t[-1] = min(t[-1], times[-1]) if count > 1 else times[0]
    x = np.column_stack([np.interp(t, times, P[:, d]) for d in range(3)])
    if isinstance(field, TimeVaryingField):
        f = field(x, t)
    else:
        f = field(x)
    rng = np.random.default_rng(seed)
    y = f + sigma_noise * rng.standard_normal(f.shape)
    return Dataset(x, y, t)


def validation_grid(half_width: float = 0.4, k: int = 21, center=(0.0, 0.0, 0.0)) -> np.ndarray:
    """``k**3`` points on a regular grid over the cube ``center +/- half_width``."""
    g = np.linspace(-half_width, half_width, k)
    X = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)
    return X + np.asarray(center, float)


def rmse(pred: np.ndarray, truth: np.ndarray) -> float:
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def rmse_components(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    return np.sqrt(np.mean((pred - truth) ** 2, axis=0))


# ---------------------------------------------------------------------------
# Model fitting shared by the studies
# ---------------------------------------------------------------------------


def baseline_theta(theta: Hyperparameters) -> Hyperparameters:
    """Component-model analogue of potential-model hyperparameters.

    The constant variance equals the linear one; the SE magnitude is the
    field-unit magnitude ``sigma2_se / ell_se**2``.
    """
    return Hyperparameters(theta.sigma2_lin, theta.field_magnitude, theta.ell_se, theta.sigma2_noise)


def fit_model(
    name: str,
    data: Dataset,
    index_set: BasisIndexSet,
    theta0,
    optimize: bool = True,
    opts: Optional[batch.OptimizeOptions] = None,
):
    """Fit one of the three models; returns ``(predict_fn, learned_theta)``.

    ``learned_theta`` is a Hyperparameters, or a 3-tuple for ``independent``.
    """
    if name == "potential":
        if optimize:
            model, res = batch.fit_optimized(data, index_set.domain, index_set, theta0, opts)
            theta = res.theta
        else:
            model = batch.fit(data, index_set.domain, index_set, theta0)
            theta = theta0
        return (lambda X: batch.predict(model, X, covariance=False).mean), theta
    if name in ("independent", "shared"):
        if optimize:
            model, results = componentwise.optimize_components(
                name, data, index_set.domain, index_set, theta0, opts
            )
        else:
            model = componentwise.fit_components(name, data, index_set.domain, index_set, theta0)
        theta = model.thetas if name == "independent" else model.thetas[0]
        return (lambda X: componentwise.predict_components(model, X).mean), theta
    raise ValueError(f"unknown model {name!r}")


def true_init(name: str, theta: Hyperparameters):
    return theta if name == "potential" else baseline_theta(theta)


def randomize_theta(theta: Hyperparameters, rng: np.random.Generator, spread: float = 0.7) -> Hyperparameters:
    """``theta * (1 + spread * U(-1, 1))`` element-wise."""
    arr = theta.as_array()
    return Hyperparameters.from_array(arr * (1 + spread * rng.uniform(-1, 1, arr.size)))


def _reference_theta(name: str, learned) -> Hyperparameters:
    if isinstance(learned, tuple):
        return componentwise.mean_theta(learned)
    return learned


# ---------------------------------------------------------------------------
# Monte Carlo RMSE study
# ---------------------------------------------------------------------------


@dataclass
class StudyConfig:
    """Settings of the model-comparison study (desk-scale defaults)."""

    n_train: Tuple[int, ...] = (500, 2000, 8000)
    n_mc: int = 5
    m_fit: int = 512
    m_sim: int = 2048
    models: Tuple[str, ...] = MODEL_NAMES
    init_mode: str = "true_theta"
    theta: Dict[str, float] = field(default_factory=lambda: REFERENCE_THETA.to_dict())
    half_length: float = 0.5
    train_half_width: float = 0.4
    grid_k: int = 21
    seed0: int = 0
    optimize: bool = True
    n_ref: int = 8000

    def __post_init__(self):
        if self.init_mode not in ("true_theta", "randomized"):
            raise ValueError(f"unknown init_mode {self.init_mode!r}")
        for mname in self.models:
            if mname not in MODEL_NAMES:
                raise ValueError(f"unknown model {mname!r}")
        self.n_train = tuple(int(v) for v in self.n_train)
        self.models = tuple(self.models)

    @property
    def hyperparameters(self) -> Hyperparameters:
        return Hyperparameters.from_dict(self.theta)

    @property
    def domain(self) -> Domain:
        return Domain((self.half_length,) * 3)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["n_train"] = list(self.n_train)
        d["models"] = list(self.models)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StudyConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items() if k in known})


@dataclass
class RunRecord:
    seed: int
    n_train: int
    model: str
    rmse: float
    rmse_xyz: Tuple[float, float, float]
    seconds: float
    error: Optional[str] = None


@dataclass
class StudyResult:
    config: StudyConfig
    records: List[RunRecord]

    def table(self) -> List[dict]:
        rows = []
        for n in self.config.n_train:
            for mname in self.config.models:
                recs = [r for r in self.records if r.n_train == n and r.model == mname]
                ok = [r for r in recs if r.error is None]
                vals = np.array([r.rmse for r in ok]) if ok else np.array([np.nan])
                xyz = np.array([r.rmse_xyz for r in ok]) if ok else np.full((1, 3), np.nan)
                rows.append(
                    {
                        "n_train": n,
                        "model": mname,
                        "rmse_mean": float(vals.mean()),
                        "rmse_std": float(vals.std(ddof=1)) if len(vals) > 1 else 0.0,
                        "n_mc": len(ok),
                        "seed0": self.config.seed0,
                        "rmse_x": float(xyz[:, 0].mean()),
                        "rmse_y": float(xyz[:, 1].mean()),
                        "rmse_z": float(xyz[:, 2].mean()),
                        "n_failed": len(recs) - len(ok),
                    }
                )
        return rows

    def mean_rmse(self, model: str, n_train: int) -> float:
        for row in self.table():
            if row["model"] == model and row["n_train"] == n_train:
                return row["rmse_mean"]
        raise KeyError((model, n_train))


def _training_data(fld: SyntheticField, n: int, half_width: float, noise: float, seed: int) -> Dataset:
    rng = np.random.default_rng([seed, 1])
    x = rng.uniform(-half_width, half_width, (n, 3))
    y = fld(x) + math.sqrt(noise) * rng.standard_normal((n, 3))
    return Dataset(x, y)


def run_rmse_study(config: StudyConfig, progress: Optional[Callable[[RunRecord], None]] = None) -> StudyResult:
    """Average validation RMSE per (n_train, model) over ``n_mc`` seeds.

    Training sets for different sizes are nested prefixes of one draw, so
    the curves over ``n_train`` are paired. A failing run is recorded with
    its error message and excluded from the averages.
    """
    theta = config.hyperparameters
    domain = config.domain
    grid = validation_grid(config.train_half_width, config.grid_k)
    fit_set = build_index_set(config.m_fit, domain)
    records: List[RunRecord] = []
    for i in range(config.n_mc):
        seed = config.seed0 + i
        fld = sample_field(domain, theta, config.m_sim, seed)
        truth = fld(grid)
        n_max = max(max(config.n_train), config.n_ref if config.init_mode == "randomized" else 0)
        data = _training_data(fld, n_max, config.train_half_width, theta.sigma2_noise, seed)
        for mname in config.models:
            init = true_init(mname, theta)
            if config.init_mode == "randomized":
                _, learned = fit_model(mname, data[: config.n_ref], fit_set, init)
                rng = np.random.default_rng([seed, 2, MODEL_NAMES.index(mname)])
                init = randomize_theta(_reference_theta(mname, learned), rng)
            for n in config.n_train:
                t0 = time.perf_counter()
                try:
                    pred_fn, _ = fit_model(mname, data[:n], fit_set, init, config.optimize)
                    pred = pred_fn(grid)
                    rec = RunRecord(
                        seed, n, mname, rmse(pred, truth), tuple(rmse_components(pred, truth)),
                        time.perf_counter() - t0,
                    )
                except MagmapError as exc:
                    rec = RunRecord(seed, n, mname, float("nan"), (float("nan"),) * 3,
                                    time.perf_counter() - t0, repr(exc))
                records.append(rec)
                log.info("seed=%d n=%d model=%s rmse=%.4f", seed, n, mname, rec.rmse)
                if progress is not None:
                    progress(rec)
    return StudyResult(config, records)


TABLE_COLUMNS = ("n_train", "model", "rmse_mean", "rmse_std", "n_mc", "seed0",
                 "rmse_x", "rmse_y", "rmse_z", "n_failed")


def write_table(rows: Sequence[dict], path, columns: Sequence[str] = TABLE_COLUMNS) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def write_study(result: StudyResult, out_dir, name: str = "rmse_study") -> Tuple[Path, Path]:
    """CSV table plus a JSON manifest holding the full config."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = out / f"{name}.csv"
    manifest = out / f"{name}.manifest.json"
    write_table(result.table(), table)
    manifest.write_text(
        json.dumps({"kind": "rmse_study", "version": 1, "config": result.config.to_dict(),
                    "table": table.name}, indent=2)
    )
    return table, manifest


# ---------------------------------------------------------------------------
# Basis-count sweep against the dense solver
# ---------------------------------------------------------------------------


@dataclass
class SweepConfig:
    m_values: Tuple[int, ...] = (64, 128, 256, 512, 1024)
    n: int = 500
    m_sim: int = 2048
    theta: Dict[str, float] = field(default_factory=lambda: REFERENCE_THETA.to_dict())
    half_length: float = 0.5
    train_half_width: float = 0.4
    grid_k: int = 11
    seed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["m_values"] = list(self.m_values)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SweepConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items() if k in known})


def basis_sweep(config: SweepConfig) -> List[dict]:
    """Reduced-rank predictions at increasing m versus the dense solution.

    Hyperparameters are held at the generating values so the comparison
    isolates the approximation error. ``gap`` is the RMS difference to the
    dense mean relative to the RMS of the dense mean.
    """
    theta = Hyperparameters.from_dict(config.theta)
    domain = Domain((config.half_length,) * 3)
    fld = sample_field(domain, theta, config.m_sim, config.seed)
    data = _training_data(fld, config.n, config.train_half_width, theta.sigma2_noise, config.seed)
    grid = validation_grid(config.train_half_width, config.grid_k)
    truth = fld(grid)
    dense = dense_gp_fit_predict("potential", data, theta, grid).mean
    dense_rms = float(np.sqrt(np.mean(dense**2)))
    rows = []
    for m in config.m_values:
        model = batch.fit(data, domain, int(m), theta)
        pred = batch.predict(model, grid, covariance=False).mean
        diff = rmse(pred, dense)
        rows.append(
            {
                "m": int(m),
                "rmse_vs_dense": diff,
                "gap": diff / dense_rms,
                "rmse_vs_truth": rmse(pred, truth),
                "dense_rmse_vs_truth": rmse(dense, truth),
                "seed": config.seed,
            }
        )
    return rows


SWEEP_COLUMNS = ("m", "rmse_vs_dense", "gap", "rmse_vs_truth", "dense_rmse_vs_truth", "seed")


def write_sweep(rows: Sequence[dict], config: SweepConfig, out_dir, name: str = "basis_sweep") -> Tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = out / f"{name}.csv"
    manifest = out / f"{name}.manifest.json"
    write_table(rows, table, SWEEP_COLUMNS)
    manifest.write_text(
        json.dumps({"kind": "basis_sweep", "version": 1, "config": config.to_dict(), "table": table.name}, indent=2)
    )
    return table, manifest


def run_from_manifest(path, out_dir=None) -> Path:
    """Re-run the study recorded in a manifest; returns the new table path.

    Output goes next to the manifest unless ``out_dir`` is given, under the
    table name suffixed with ``.rerun``.
    """
    path = Path(path)
    meta = json.loads(path.read_text())
    out = Path(out_dir) if out_dir is not None else path.parent
    stem = Path(meta["table"]).stem + ".rerun"
    if meta["kind"] == "rmse_study":
        result = run_rmse_study(StudyConfig.from_dict(meta["config"]))
        table, _ = write_study(result, out, stem)
    elif meta["kind"] == "basis_sweep":
        cfg = SweepConfig.from_dict(meta["config"])
        table, _ = write_sweep(basis_sweep(cfg), cfg, out, stem)
    else:
        raise ValueError(f"unknown manifest kind {meta['kind']!r}")
    return table


# ---------------------------------------------------------------------------
# Initialization robustness
# ---------------------------------------------------------------------------


@dataclass
class RobustnessConfig:
    n: int = 2000
    n_ref: int = 8000
    n_restarts: int = 30
    m_fit: int = 512
    m_sim: int = 2048
    models: Tuple[str, ...] = ("independent", "shared", "potential")
    theta: Dict[str, float] = field(default_factory=lambda: REFERENCE_THETA.to_dict())
    half_length: float = 0.5
    train_half_width: float = 0.4
    grid_k: int = 21
    spread: float = 0.7
    tolerance: float = 1.5
    seed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["models"] = list(self.models)
        return d


@dataclass
class RobustnessResult:
    config: RobustnessConfig
    reference_theta: Dict[str, Hyperparameters]
    well_initialized: Dict[str, float]
    restarts: Dict[str, List[float]]

    def success_rate(self, model: str) -> float:
        ref = self.well_initialized[model]
        vals = np.array(self.restarts[model])
        return float(np.mean(np.isfinite(vals) & (vals <= self.config.tolerance * ref)))


def robustness_study(config: RobustnessConfig, progress: Optional[Callable[[str, int, float], None]] = None) -> RobustnessResult:
    """Sensitivity of each model to randomized hyperparameter initialization.

    One dataset is drawn. Reference hyperparameters per model come from
    optimizing on ``n_ref`` samples started at the generating values (for the
    independent model, the mean of its three component sets). Each restart
    then starts from ``reference * (1 + spread * U(-1, 1))`` on the first
    ``n`` samples, and its RMSE is compared to the run started at the
    reference itself.
    """
    theta = Hyperparameters.from_dict(config.theta)
    domain = Domain((config.half_length,) * 3)
    fld = sample_field(domain, theta, config.m_sim, config.seed)
    grid = validation_grid(config.train_half_width, config.grid_k)
    truth = fld(grid)
    data = _training_data(fld, max(config.n, config.n_ref), config.train_half_width,
                          theta.sigma2_noise, config.seed)
    fit_set = build_index_set(config.m_fit, domain)
    refs, well, restarts = {}, {}, {}
    for mname in config.models:
        _, learned = fit_model(mname, data[: config.n_ref], fit_set, true_init(mname, theta))
        ref = _reference_theta(mname, learned)
        refs[mname] = ref
        pred_fn, _ = fit_model(mname, data[: config.n], fit_set, ref)
        well[mname] = rmse(pred_fn(grid), truth)
        rng = np.random.default_rng([config.seed, 3, MODEL_NAMES.index(mname)])
        vals = []
        for r in range(config.n_restarts):
            init = randomize_theta(ref, rng, config.spread)
            try:
                pred_fn, _ = fit_model(mname, data[: config.n], fit_set, init)
                vals.append(rmse(pred_fn(grid), truth))
            except MagmapError:
                vals.append(float("nan"))
            if progress is not None:
                progress(mname, r, vals[-1])
        restarts[mname] = vals
    return RobustnessResult(config, refs, well, restarts)


# ---------------------------------------------------------------------------
# Spatio-temporal tracking scenario
# ---------------------------------------------------------------------------


TRACKING_THETA = Hyperparameters(
    sigma2_lin=500.0, sigma2_se=287.0 * 0.32**2, ell_se=0.32, sigma2_noise=3.27, ell_time=3600.0
)


def lawnmower(half_width: float, spacing: float, z: float = 0.0) -> np.ndarray:
    """Back-and-forth sweep over the square ``[-half_width, half_width]^2``."""
    ys = np.arange(-half_width, half_width + 1e-9, spacing)
    pts = []
    for i, yv in enumerate(ys):
        xs = (-half_width, half_width) if i % 2 == 0 else (half_width, -half_width)
        pts += [(xs[0], yv, z), (xs[1], yv, z)]
    return np.array(pts)


@dataclass
class TrackingConfig:
    """A mapped area, an abrupt local change, then a pass over the change."""

    theta: Dict[str, float] = field(default_factory=lambda: TRACKING_THETA.to_dict())
    half_lengths: Tuple[float, float, float] = (2.5, 2.5, 0.5)
    m: int = 1024
    sweep_half_width: float = 2.0
    sweep_spacing: float = 0.5
    speed: float = 0.5
    rate: float = 10.0
    probe: Tuple[float, float, float] = (-1.0, -1.0, 0.0)
    change: Tuple[float, float, float] = (2.0, 0.0, 0.0)
    change_radius: float = 0.2
    approach_start: Tuple[float, float, float] = (1.5, -1.0, 0.0)
    approach_end: Tuple[float, float, float] = (-2.0, -1.0, 0.0)
    settle: float = 5.0
    seed: int = 0


@dataclass
class TrackingResult:
    """Probe estimates from a run with the change and from its unchanged twin.

    Both runs share the trajectory and the noise draw, so ``response`` (the
    difference of the two estimates) is the part of the estimate caused by
    the change alone.
    """

    config: TrackingConfig
    t: np.ndarray
    distance: np.ndarray
    probe_estimate: np.ndarray
    baseline_estimate: np.ndarray
    probe_truth: np.ndarray
    t_on: float

    @property
    def response(self) -> np.ndarray:
        return self.probe_estimate - self.baseline_estimate

    @property
    def onset_index(self) -> int:
        return int(np.searchsorted(self.t, self.t_on))

    @property
    def pass_index(self) -> int:
        """First post-change sample within ``2 ell_se`` of the probe."""
        ell = Hyperparameters.from_dict(self.config.theta).ell_se
        idx = np.flatnonzero((self.t >= self.t_on) & (self.distance <= 2 * ell))
        return int(idx[0]) if idx.size else len(self.t)

    def change_before_pass(self, paired: bool = True) -> float:
        """Largest change of the probe estimate between onset and the pass."""
        est = self.response if paired else self.probe_estimate
        on = self.onset_index
        seg = est[on : self.pass_index]
        return float(np.max(np.linalg.norm(seg - est[on - 1], axis=1))) if len(seg) else 0.0

    def change_after_pass(self, paired: bool = True) -> float:
        """Change of the probe estimate from onset to the end of the run."""
        est = self.response if paired else self.probe_estimate
        return float(np.linalg.norm(est[-1] - est[self.onset_index - 1]))


def tracking_scenario(config: TrackingConfig) -> TrackingResult:
    """Run the spatio-temporal filter through a scripted field change.

    The platform first sweeps the area while the field is static. The
    change switches on ``settle`` seconds after the sweep, during a transit
    leg that stays away from the probe, and the platform then drives along a
    straight line through the probe. The filter runs twice, with and without
    the change, on identical positions and noise; the probe estimate is
    recorded after every sample.
    """
    from .sequential import SequentialFilter, init

    theta = Hyperparameters.from_dict(config.theta)
    domain = Domain(config.half_lengths)
    base = sample_field(domain, theta, config.m, config.seed)
    sweep = lawnmower(config.sweep_half_width, config.sweep_spacing)
    path = np.vstack([sweep, [config.approach_start, config.approach_end]])
    seg = np.linalg.norm(np.diff(path, axis=0), axis=1)
    times = np.concatenate([[0.0], np.cumsum(seg) / config.speed])
    t_on = times[len(sweep) - 1] + config.settle
    if t_on >= times[len(sweep)]:
        raise ValueError("change must switch on before the approach leg starts")
    probe = np.asarray(config.probe, float)
    event = FieldEvent(t_on, tuple(probe), tuple(config.change), config.change_radius)
    fld = apply_field_event(base, event)
    noise = math.sqrt(theta.sigma2_noise)
    data = simulate_trajectory(fld, path, config.rate, noise, times=times, seed=config.seed, domain=domain)
    twin = simulate_trajectory(base, path, config.rate, noise, times=times, seed=config.seed, domain=domain)
    index_set = build_index_set(config.m, domain)
    H = gradient_design(probe, index_set)

    def run(ds):
        filt = SequentialFilter(init(index_set, theta), "spatiotemporal")
        est = np.empty((len(ds), 3))
        filt.run(ds, lambda i, f: est.__setitem__(i, H @ f.mu))
        return est

    truth = fld(np.repeat(probe[None], len(data), axis=0), data.t)
    dist = np.linalg.norm(data.x - probe, axis=1)
    return TrackingResult(config, np.asarray(data.t), dist, run(data), run(twin), truth, t_on)
