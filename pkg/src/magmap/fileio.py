"""Sample CSV, configuration, model files and grid export.

Sample CSV
    Header ``t,x,y,z,bx,by,bz``; the ``t`` column may be omitted for static
    data. Floats are written with ``repr`` so a write/read cycle is exact.
Model file
    ``.npz`` archive with a ``format`` tag and integer ``version``.
Grid export
    ``x,y,z,mean_x,mean_y,mean_z,var_x,var_y,var_z[,potential,pot_var,magnitude]``
    as CSV, or the same columns as JSON.
"""

from __future__ import annotations

import csv
import io
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .basis import BasisIndexSet
from .batch import BatchModel, predict
from .sequential import SequentialState, predict_at
from .types import Dataset, Domain, FieldPrediction, Hyperparameters, MagmapError, MagneticSample

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

PathLike = Union[str, Path]

SAMPLE_COLUMNS = ("t", "x", "y", "z", "bx", "by", "bz")
MODEL_FORMAT = "magmap-model"
MODEL_VERSION = 1


class InputError(MagmapError, ValueError):
    """Malformed or empty input data or configuration."""


class ModelFileError(MagmapError):
    """A model file is missing, unreadable or of an unknown version."""


# ---------------------------------------------------------------------------
# samples
# ---------------------------------------------------------------------------


def _header_map(header: Sequence[str], source: str) -> Tuple[dict, bool]:
    names = [h.strip().lower() for h in header]
    missing = [c for c in SAMPLE_COLUMNS[1:] if c not in names]
    if missing:
        raise InputError(f"{source}: header lacks column(s) {', '.join(missing)}")
    return {c: names.index(c) for c in SAMPLE_COLUMNS if c in names}, "t" in names


def _parse_row(row, cols, has_t, source, line) -> MagneticSample:
    try:
        vals = {c: float(row[i]) for c, i in cols.items()}
    except (ValueError, IndexError) as exc:
        raise InputError(f"{source}, line {line}: cannot parse {row!r}") from exc
    return MagneticSample(
        (vals["x"], vals["y"], vals["z"]),
        (vals["bx"], vals["by"], vals["bz"]),
        vals["t"] if has_t else None,
    )


def iter_samples(stream: IO[str], source: str = "<stream>") -> Iterator[Tuple[int, MagneticSample]]:
    """Yield ``(line_number, sample)`` from an open CSV stream, lazily.

    Blank lines and lines starting with ``#`` are skipped.
    """
    reader = csv.reader(stream)
    cols, has_t = None, False
    for row in reader:
        line = reader.line_num
        if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
            continue
        if cols is None:
            cols, has_t = _header_map(row, source)
            continue
        yield line, _parse_row(row, cols, has_t, source, line)
    if cols is None:
        raise InputError(f"{source}: no samples (missing header)")


def read_samples(path: PathLike) -> Dataset:
    """Read a sample CSV into a Dataset; an empty file raises InputError."""
    try:
        with open(path, newline="") as fh:
            samples = [s for _, s in iter_samples(fh, str(path))]
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from exc
    if not samples:
        raise InputError(f"{path}: no samples")
    return Dataset.from_samples(samples)


def write_samples(path: PathLike, data: Dataset) -> None:
    cols = SAMPLE_COLUMNS if data.t is not None else SAMPLE_COLUMNS[1:]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for i in range(len(data)):
            row = [*data.x[i], *data.y[i]]
            if data.t is not None:
                row.insert(0, data.t[i])
            w.writerow([repr(float(v)) for v in row])


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def load_config(path: Optional[PathLike]) -> dict:
    """Parse a ``.toml`` or ``.json`` configuration file (``None`` gives ``{}``)."""
    if path is None:
        return {}
    p = Path(path)
    try:
        raw = p.read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read config {p}: {exc.strerror}") from exc
    try:
        if p.suffix.lower() == ".json":
            cfg = json.loads(raw.decode())
        else:
            cfg = tomllib.loads(raw.decode())
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise InputError(f"cannot parse config {p}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise InputError(f"config {p} must be a table/object")
    return cfg


def config_domain(cfg: dict) -> Optional[Domain]:
    d = cfg.get("domain")
    if d is None:
        return None
    try:
        return Domain.from_dict(d)
    except (KeyError, TypeError) as exc:
        raise InputError(f"bad [domain] section: {exc}") from exc


def config_theta(cfg: dict) -> Optional[Hyperparameters]:
    th = cfg.get("theta", cfg.get("hyperparameters"))
    if th is None:
        return None
    try:
        return Hyperparameters.from_dict(th)
    except (KeyError, TypeError) as exc:
        raise InputError(f"bad [theta] section: {exc}") from exc


# ---------------------------------------------------------------------------
# model files
# ---------------------------------------------------------------------------

Model = Union[BatchModel, SequentialState]


def _theta_arrays(theta: Hyperparameters) -> np.ndarray:
    et = np.nan if theta.ell_time is None else theta.ell_time
    return np.append(theta.as_array(), et)


def _theta_from(arr: np.ndarray) -> Hyperparameters:
    et = None if np.isnan(arr[4]) else float(arr[4])
    return Hyperparameters.from_array(arr[:4], ell_time=et)


def save_model(path: PathLike, model: Model) -> None:
    """Write a batch or sequential posterior to a versioned ``.npz`` file.

    Batch models store the Cholesky factor of the information matrix ``Z``
    (coefficient covariance ``noise * Z^-1``); sequential states store the
    lower Cholesky factor of the covariance itself.
    """
    idx = model.index_set
    common = dict(
        format=np.array(MODEL_FORMAT),
        version=np.array(MODEL_VERSION),
        half_lengths=idx.domain.L,
        center=idx.domain.c,
        indices=idx.indices,
        eigenvalues=idx.eigenvalues,
        theta=_theta_arrays(model.theta),
        mean=model.mean if isinstance(model, BatchModel) else model.mu,
    )
    if isinstance(model, BatchModel):
        extra = dict(
            kind=np.array("batch"),
            chol=model.chol,
            n=np.array(model.n),
            nlml=np.array(np.nan if model.nlml is None else model.nlml),
        )
    else:
        from ._linalg import jittered_cholesky

        L, _ = jittered_cholesky(model.Sigma, "state covariance")
        extra = dict(
            kind=np.array("sequential"),
            chol=L,
            n=np.array(model.samples_seen),
            t_last=np.array(np.nan if model.t_last is None else model.t_last),
        )
    with open(path, "wb") as fh:
        np.savez(fh, **common, **extra)


def load_model(path: PathLike) -> Model:
    """Inverse of :func:`save_model`; raises ModelFileError on any defect."""
    try:
        with np.load(path, allow_pickle=False) as z:
            f = {k: z[k] for k in z.files}
    except (OSError, ValueError, EOFError) as exc:
        raise ModelFileError(f"cannot read model file {path}: {exc}") from exc
    except Exception as exc:  # zipfile.BadZipFile and friends
        raise ModelFileError(f"cannot read model file {path}: {exc}") from exc
    try:
        if str(f["format"]) != MODEL_FORMAT:
            raise ModelFileError(f"{path} is not a magmap model file")
        if int(f["version"]) != MODEL_VERSION:
            raise ModelFileError(f"{path}: unsupported model file version {int(f['version'])}")
        domain = Domain(tuple(f["half_lengths"]), tuple(f["center"]))
        idx = BasisIndexSet(domain, f["indices"].astype(np.int64), f["eigenvalues"])
        theta = _theta_from(f["theta"])
        p = 3 + idx.m
        mean, chol = f["mean"], f["chol"]
        if mean.shape != (p,) or chol.shape != (p, p):
            raise ModelFileError(f"{path}: array shapes do not match m={idx.m}")
        if str(f["kind"]) == "batch":
            nl = float(f["nlml"])
            return BatchModel(idx, theta, mean, chol, int(f["n"]), None if math.isnan(nl) else nl)
        if str(f["kind"]) == "sequential":
            t_last = float(f["t_last"])
            return SequentialState(
                idx, theta, mean.copy(), chol @ chol.T, None if math.isnan(t_last) else t_last, int(f["n"])
            )
        raise ModelFileError(f"{path}: unknown model kind {str(f['kind'])!r}")
    except KeyError as exc:
        raise ModelFileError(f"{path}: missing entry {exc}") from exc
    except (ValueError, TypeError) as exc:
        raise ModelFileError(f"{path}: {exc}") from exc


def predict_model(model: Model, X, potential: bool = False) -> FieldPrediction:
    if isinstance(model, BatchModel):
        return predict(model, X, potential=potential)
    return predict_at(model, X, potential=potential)


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    """Regular grid over a box, or over a plane of fixed ``z`` when ``z_slice`` is set.

    ``resolution`` counts points per axis; the z entry is ignored for slices.
    """

    bounds: Tuple[Tuple[float, float], Tuple[float, float], Tuple[float, float]]
    resolution: Tuple[int, int, int]
    z_slice: Optional[float] = None

    def __post_init__(self):
        if len(self.bounds) != 3 or len(self.resolution) != 3:
            raise InputError("grid needs three bounds and three resolutions")
        active = (0, 1) if self.z_slice is not None else (0, 1, 2)
        for a in active:
            lo, hi = self.bounds[a]
            if not hi >= lo:
                raise InputError(f"grid axis {a}: upper bound below lower bound")
            if int(self.resolution[a]) < 2:
                raise InputError(f"grid axis {a}: resolution must be at least 2")

    @property
    def shape(self) -> Tuple[int, ...]:
        if self.z_slice is not None:
            return (int(self.resolution[0]), int(self.resolution[1]))
        return tuple(int(r) for r in self.resolution)

    def points(self) -> np.ndarray:
        axes = [np.linspace(lo, hi, int(r)) for (lo, hi), r in zip(self.bounds, self.resolution)]
        if self.z_slice is not None:
            axes[2] = np.array([float(self.z_slice)])
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)

    def check_against(self, domain: Domain) -> None:
        """The grid box must intersect the domain."""
        lo = np.array([b[0] for b in self.bounds], float)
        hi = np.array([b[1] for b in self.bounds], float)
        if self.z_slice is not None:
            lo[2] = hi[2] = self.z_slice
        dlo, dhi = domain.c - domain.L, domain.c + domain.L
        if np.any(hi < dlo) or np.any(lo > dhi):
            raise InputError("grid does not intersect the model domain")

    @classmethod
    def parse(cls, text: str, z_slice: Optional[float] = None) -> "GridSpec":
        """From ``"x0:x1:nx,y0:y1:ny,z0:z1:nz"``; with a slice the z part may be omitted."""
        parts = [p for p in text.replace(" ", "").split(",") if p]
        if z_slice is not None and len(parts) == 2:
            parts.append(f"{z_slice}:{z_slice}:1")
        if len(parts) != 3:
            raise InputError(f"grid {text!r}: expected three 'lo:hi:n' parts")
        bounds, res = [], []
        for p in parts:
            try:
                lo, hi, n = p.split(":")
                bounds.append((float(lo), float(hi)))
                res.append(int(n))
            except ValueError as exc:
                raise InputError(f"grid part {p!r} is not 'lo:hi:n'") from exc
        return cls(tuple(bounds), tuple(res), z_slice)

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        try:
            z = d.get("z_slice")
            bounds = [tuple(b) for b in d["bounds"]]
            res = list(d["resolution"])
            if z is not None and len(bounds) == 2:
                bounds.append((z, z))
                res.append(1)
            return cls(tuple(bounds), tuple(res), z)
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"bad [grid] section: {exc}") from exc


WHAT_CHOICES = ("field", "variance", "potential", "magnitude")


def grid_columns(what: Sequence[str]) -> List[str]:
    cols = ["x", "y", "z"]
    if "field" in what:
        cols += ["mean_x", "mean_y", "mean_z"]
    if "variance" in what:
        cols += ["var_x", "var_y", "var_z"]
    if "potential" in what:
        cols += ["potential", "pot_var"]
    if "magnitude" in what:
        cols += ["magnitude"]
    return cols


def grid_table(X: np.ndarray, pred: FieldPrediction, what: Sequence[str]) -> Tuple[List[str], np.ndarray]:
    """Column names and an (k, ncol) array in the export column order."""
    blocks = [X]
    if "field" in what:
        blocks.append(pred.mean)
    if "variance" in what:
        blocks.append(pred.variance)
    if "potential" in what:
        if pred.potential_mean is None:
            raise ValueError("prediction carries no potential")
        blocks += [pred.potential_mean[:, None], pred.potential_variance[:, None]]
    if "magnitude" in what:
        blocks.append(pred.magnitude[:, None])
    return grid_columns(what), np.hstack(blocks)


def format_table(columns: Sequence[str], values: np.ndarray, fmt: str = "csv") -> str:
    if fmt == "json":
        return json.dumps({"columns": list(columns), "rows": values.tolist()})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in values:
        w.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def write_table(path: PathLike, columns: Sequence[str], values: np.ndarray) -> None:
    fmt = "json" if str(path).lower().endswith(".json") else "csv"
    Path(path).write_text(format_table(columns, values, fmt))


def read_grid_csv(path: PathLike) -> Tuple[List[str], np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array([[float(v) for v in r] for r in rows[1:]], float).reshape(-1, len(rows[0]))
