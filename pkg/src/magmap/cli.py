"""``magmap`` command line.

Exit codes: 0 success, 2 input error, 3 model-file error, 4 stream-order
error, 5 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__, batch
from .basis import build_index_set
from .batch import OptimizationError, OptimizeOptions
from .fileio import (
    WHAT_CHOICES,
    GridSpec,
    InputError,
    ModelFileError,
    config_domain,
    config_theta,
    format_table,
    grid_table,
    iter_samples,
    load_config,
    load_model,
    predict_model,
    read_samples,
    save_model,
    write_samples,
    write_table,
)
from .sequential import SequentialFilter, SequentialState, from_batch, init
from .types import (
    Dataset,
    Domain,
    DomainError,
    Hyperparameters,
    NumericalError,
    OrderingError,
    ParameterError,
    auto_domain,
)

log = logging.getLogger("magmap")

EXIT_OK, EXIT_INPUT, EXIT_MODEL, EXIT_ORDER, EXIT_NUMERIC = 0, 2, 3, 4, 5
WARMUP_SAMPLES = 5000
DEFAULT_ELL_TIME = 3600.0


class StreamOrderError(InputError):
    pass


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def parse_theta(text: str) -> Hyperparameters:
    """``"sigma2_lin=575,field_magnitude=373,ell_se=1.87,sigma2_noise=5.53"``."""
    try:
        d = {}
        for part in text.split(","):
            k, v = part.split("=")
            d[k.strip()] = float(v)
        return Hyperparameters.from_dict(d)
    except (ValueError, KeyError) as exc:
        raise InputError(f"cannot parse --theta {text!r}: {exc}") from exc


def default_theta(y: np.ndarray, x: np.ndarray) -> Hyperparameters:
    """Data-scaled starting point for hyperparameter optimization."""
    mean = y.mean(axis=0)
    var = float(np.mean(y.var(axis=0))) if len(y) > 1 else 1.0
    var = max(var, 1e-6)
    extent = float(np.ptp(x, axis=0).max()) if len(x) > 1 else 1.0
    ell = max(0.1 * extent, 1e-3)
    return Hyperparameters(
        sigma2_lin=max(float(np.mean(mean**2)), 1.0),
        sigma2_se=0.5 * var * ell**2,
        ell_se=ell,
        sigma2_noise=0.1 * var,
    )


def _resolve_theta(args, cfg) -> Optional[Hyperparameters]:
    if getattr(args, "theta", None):
        return parse_theta(args.theta)
    th = config_theta(cfg)
    if th is not None:
        return th
    if getattr(args, "init_from", None):
        return load_model(args.init_from).theta
    return None


def _optimize_options(cfg: dict) -> OptimizeOptions:
    o = cfg.get("optimize", {})
    return OptimizeOptions(
        bounds={k: tuple(v) for k, v in o.get("bounds", {}).items()},
        fixed=tuple(o.get("fixed", ())),
        maxiter=int(o.get("maxiter", 200)),
        gtol=float(o.get("gtol", 1e-6)),
    )


def _grid(args, cfg) -> Optional[GridSpec]:
    if getattr(args, "grid", None):
        return GridSpec.parse(args.grid, getattr(args, "slice_z", None))
    if "grid" in cfg:
        return GridSpec.from_dict(cfg["grid"])
    return None


def _emit(text: str, out: Optional[str]) -> None:
    if out in (None, "-"):
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        Path(out).write_text(text)


def _report(model, theta: Hyperparameters, wall: float, result=None) -> dict:
    d = model.domain
    rep = {
        "theta": theta.to_dict(),
        "linear_coefficients": [round(float(v), 3) for v in model.linear_coefficients],
        "n": model.n,
        "m": model.m,
        "nlml": model.nlml,
        "wall_time_s": round(wall, 4),
        "domain": {"half_lengths": d.L.tolist(), "center": d.c.tolist()},
    }
    if result is not None:
        rep["optimizer"] = {
            "converged": result.converged,
            "iterations": result.n_iter,
            "at_bounds": list(result.at_bounds),
            "message": result.message,
        }
    return rep


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_fit(args) -> int:
    t0 = time.perf_counter()
    cfg = load_config(args.config)
    data = read_samples(args.data)
    theta = _resolve_theta(args, cfg)
    if theta is None and not args.optimize:
        raise InputError("no hyperparameters: pass --theta, a config [theta] section, --init-from or --optimize")
    domain = config_domain(cfg)
    if domain is None and args.init_from:
        domain = load_model(args.init_from).domain
    if domain is None:
        ell = theta.ell_se if theta is not None else None
        domain = auto_domain(data.x, ell, args.domain_margin)
    m = args.m or int(cfg.get("m", 512))
    index_set = build_index_set(m, domain)
    result = None
    if args.optimize:
        theta0 = theta if theta is not None else default_theta(data.y, data.x)
        model, result = batch.fit_optimized(data, domain, index_set, theta0, _optimize_options(cfg))
        theta = result.theta
    else:
        model = batch.fit(data, domain, index_set, theta)
    save_model(args.output, model)
    _emit(json.dumps(_report(model, theta, time.perf_counter() - t0, result), indent=2), args.report)
    return EXIT_OK


def cmd_predict(args) -> int:
    cfg = load_config(args.config)
    model = load_model(args.model)
    grid = _grid(args, cfg)
    if grid is None:
        raise InputError("no grid: pass --grid or a config [grid] section")
    grid.check_against(model.index_set.domain)
    what = args.what or ["field", "variance"]
    X = grid.points()
    pred = predict_model(model, X, potential="potential" in what)
    cols, vals = grid_table(X, pred, what)
    if args.output in (None, "-"):
        _emit(format_table(cols, vals, args.format), None)
    else:
        write_table(args.output, cols, vals)
    n_out = int(np.sum(pred.outside)) if pred.outside is not None else 0
    if n_out:
        log.warning("%d grid points lie outside the model domain", n_out)
    return EXIT_OK


def _open_stream(path: str):
    if path == "-":
        return sys.stdin, "<stdin>"
    try:
        return open(path, newline=""), path
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from exc


def cmd_stream(args) -> int:
    cfg = load_config(args.config)
    fh, source = _open_stream(args.input)
    samples = iter_samples(fh, source)
    buffered = []
    state: Optional[SequentialState] = None
    ell_time = args.ell_time
    if ell_time is None:
        ell_time = float(cfg.get("ell_time", (cfg.get("theta") or {}).get("ell_time", DEFAULT_ELL_TIME)))

    if args.model:
        loaded = load_model(args.model)
        state = loaded if isinstance(loaded, SequentialState) else from_batch(loaded)
        theta = state.theta
    else:
        theta = _resolve_theta(args, cfg)
        domain = config_domain(cfg)
        if theta is None or domain is None:
            # warm-up: the first samples fix the domain and, if needed, theta
            for item in samples:
                buffered.append(item)
                if len(buffered) >= args.warmup:
                    break
            if not buffered:
                raise InputError(f"{source}: no samples")
            x = np.array([s.x for _, s in buffered])
            y = np.array([s.y for _, s in buffered])
            if domain is None:
                ell = theta.ell_se if theta is not None else None
                domain = auto_domain(x, ell, args.domain_margin)
            if theta is None:
                theta = batch.optimize_hyperparameters(
                    Dataset(x, y), domain, args.m, default_theta(y, x), _optimize_options(cfg)
                ).theta
                log.info("warm-up hyperparameters: %s", theta.to_dict())
        state = init(build_index_set(args.m, domain), theta)
    if args.mode == "spatiotemporal":
        theta = theta.replace(ell_time=ell_time)
        state = SequentialState(state.index_set, theta, state.mu, state.Sigma, state.t_last, state.samples_seen)

    filt = SequentialFilter(state, args.mode)
    grid = _grid(args, cfg)
    snap_dir = Path(args.snapshot_dir) if args.snapshot_dir else None
    X = None
    if grid is not None:
        grid.check_against(filt.index_set.domain)
        X = grid.points()
        if snap_dir is None:
            snap_dir = Path(args.output).with_suffix("").parent / (Path(args.output).stem + "_snapshots")
        snap_dir.mkdir(parents=True, exist_ok=True)
    what = ["field", "variance", "magnitude"]
    n_snap = 0

    def snapshot(tag: str) -> None:
        nonlocal n_snap
        if X is None:
            return
        cols, vals = grid_table(X, filt.predict(X), what)
        write_table(snap_dir / f"snapshot_{n_snap:05d}_{tag}.csv", cols, vals)
        n_snap += 1

    def all_samples():
        yield from buffered
        yield from samples

    count = 0
    try:
        for line, s in all_samples():
            if args.mode == "spatiotemporal":
                if s.t is None:
                    raise InputError(f"{source}, line {line}: spatio-temporal mode needs a t column")
                if filt.t_last is not None and s.t < filt.t_last:
                    raise StreamOrderError(
                        f"{source}, line {line}: timestamp {s.t!r} precedes previous {filt.t_last!r}"
                    )
            try:
                filt.update(s.x, s.y, s.t)
            except DomainError as exc:
                raise DomainError(f"{source}, line {line}: {exc}") from exc
            count += 1
            if args.snapshot_every and count % args.snapshot_every == 0:
                snapshot(f"n{count}")
    finally:
        if fh is not sys.stdin:
            fh.close()
    if count == 0:
        raise InputError(f"{source}: no samples")
    if not (args.snapshot_every and count % args.snapshot_every == 0):
        snapshot("final")
    save_model(args.output, filt.snapshot())
    _emit(
        json.dumps(
            {"samples": count, "mode": args.mode, "snapshots": n_snap, "theta": filt.theta.to_dict(),
             "t_last": filt.t_last},
            indent=2,
        ),
        args.report,
    )
    return EXIT_OK


def _dataclass_from(cls, cfg: dict, section: str):
    d = dict(cfg.get(section, {}))
    return cls.from_dict(d) if hasattr(cls, "from_dict") else cls(**d)


def cmd_benchmark(args) -> int:
    from . import simulator as sim

    out = Path(args.out_dir)
    if args.manifest:
        table = sim.run_from_manifest(args.manifest, out)
        _emit(json.dumps({"table": str(table)}), None)
        return EXIT_OK
    cfg = load_config(args.config)
    written = {}
    if args.kind in ("rmse", "both"):
        study = _dataclass_from(sim.StudyConfig, cfg, "study")
        if args.seed is not None:
            study.seed0 = args.seed
        res = sim.run_rmse_study(study)
        table, manifest = sim.write_study(res, out)
        written["rmse_study"] = {"table": str(table), "manifest": str(manifest), "rows": res.table()}
    if args.kind in ("sweep", "both"):
        sweep = _dataclass_from(sim.SweepConfig, cfg, "sweep")
        if args.seed is not None:
            sweep.seed = args.seed
        rows = sim.basis_sweep(sweep)
        table, manifest = sim.write_sweep(rows, sweep, out)
        written["basis_sweep"] = {"table": str(table), "manifest": str(manifest), "rows": rows}
    _emit(json.dumps(written, indent=2), None)
    return EXIT_OK


def cmd_simulate(args) -> int:
    from . import simulator as sim

    cfg = load_config(args.config)
    theta = _resolve_theta(args, cfg) or sim.REFERENCE_THETA
    domain = config_domain(cfg) or Domain((args.half_length,) * 3)
    fld = sim.sample_field(domain, theta, args.m_sim, args.seed)
    rng = np.random.default_rng([args.seed, 7])
    hw = args.half_width if args.half_width is not None else 0.8 * float(domain.L.min())
    x = domain.c + rng.uniform(-hw, hw, (args.n, 3))
    y = fld(x) + math.sqrt(theta.sigma2_noise) * rng.standard_normal((args.n, 3))
    t = np.arange(args.n) / args.rate if args.rate else None
    write_samples(args.output, Dataset(x, y, t))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="magmap", description="Curl-free GP magnetic field maps.")
    p.add_argument("--version", action="version", version=f"magmap {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="batch fit a map from a sample CSV")
    f.add_argument("data")
    f.add_argument("-o", "--output", required=True, help="model file (.npz)")
    f.add_argument("-c", "--config")
    f.add_argument("-m", type=int, help="number of basis functions (default 512)")
    f.add_argument("--optimize", action="store_true", help="learn hyperparameters first")
    f.add_argument("--theta", help="hyperparameters as name=value,...")
    f.add_argument("--init-from", help="take theta (and domain) from an existing model file")
    f.add_argument("--domain-margin", type=float, help="pad (m) around the data box")
    f.add_argument("--report", help="write the JSON report here instead of stdout")
    f.set_defaults(func=cmd_fit)

    q = sub.add_parser("predict", help="evaluate a model on a grid")
    q.add_argument("model")
    q.add_argument("-c", "--config")
    q.add_argument("--grid", help="x0:x1:nx,y0:y1:ny[,z0:z1:nz]")
    q.add_argument("--slice-z", type=float, help="2D slice at this height")
    q.add_argument("--what", action="append", choices=WHAT_CHOICES)
    q.add_argument("-o", "--output", help="CSV or .json file; stdout if omitted")
    q.add_argument("--format", choices=("csv", "json"), default="csv", help="stdout format")
    q.set_defaults(func=cmd_predict)

    s = sub.add_parser("stream", help="sequential update from a CSV stream")
    s.add_argument("input", help="CSV file or - for stdin")
    s.add_argument("-o", "--output", required=True, help="final state model file")
    s.add_argument("-c", "--config")
    s.add_argument("--model", help="continue from a fitted model file")
    s.add_argument("--theta")
    s.add_argument("--init-from")
    s.add_argument("--mode", choices=("static", "spatiotemporal"), default="static")
    s.add_argument("--ell-time", type=float, help="temporal length-scale in seconds (default 3600)")
    s.add_argument("-m", type=int, default=512)
    s.add_argument("--domain-margin", type=float)
    s.add_argument("--warmup", type=int, default=WARMUP_SAMPLES, help="samples used to derive domain/theta")
    s.add_argument("--snapshot-every", type=int, default=0, help="0 writes only the final snapshot")
    s.add_argument("--snapshot-dir")
    s.add_argument("--grid")
    s.add_argument("--slice-z", type=float)
    s.add_argument("--report")
    s.set_defaults(func=cmd_stream)

    b = sub.add_parser("benchmark", help="Monte Carlo model comparison and basis sweep")
    b.add_argument("-c", "--config")
    b.add_argument("--kind", choices=("rmse", "sweep", "both"), default="both")
    b.add_argument("--out-dir", default="benchmark_out")
    b.add_argument("--seed", type=int)
    b.add_argument("--manifest", help="re-run the study recorded in this manifest")
    b.set_defaults(func=cmd_benchmark)

    g = sub.add_parser("simulate", help="write a synthetic sample CSV")
    g.add_argument("-o", "--output", required=True)
    g.add_argument("-c", "--config")
    g.add_argument("--theta")
    g.add_argument("--n", type=int, default=2000)
    g.add_argument("--m-sim", type=int, default=2048)
    g.add_argument("--half-length", type=float, default=0.5)
    g.add_argument("--half-width", type=float, help="sampling cube half-width (default 0.8 L)")
    g.add_argument("--rate", type=float, help="add timestamps at this rate (Hz)")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_simulate)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="magmap: %(levelname)s: %(message)s"
    )
    try:
        return args.func(args)
    except ModelFileError as exc:
        code, msg = EXIT_MODEL, str(exc)
    except (StreamOrderError, OrderingError) as exc:
        code, msg = EXIT_ORDER, str(exc)
    except (NumericalError, OptimizationError) as exc:
        code, msg = EXIT_NUMERIC, str(exc)
    except (InputError, DomainError, ParameterError, OSError, ValueError) as exc:
        code, msg = EXIT_INPUT, str(exc)
    print(f"magmap: error: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
