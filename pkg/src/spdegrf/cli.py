"""Batch command-line front end.

Usage::

    spdegrf <fit|predict|score|cv|simulate|variogram|detrend> --config run.cfg [options]

The configuration file is flat ``key = value`` text (``#`` comments). Keys:

=====================  ===================================================
``stations``           input CSV (header ``lon,lat,elev_km,value,year``)
``output_dir``         where results go (default: directory of the config)
``domain``             ``x_min, x_max, y_min, y_max``
``n_x``, ``n_y``       grid cells per axis
``basis_k``, ``basis_l``  spline functions per axis
``log_tau``            four RW2 log penalty precisions
``tau_beta``           fixed-effect prior precision (default 1e-4)
``region_split``       longitude threshold for two nugget regions, or ``single``
``years``              ``all`` (default), a year, or a range ``1971-1985``
``covariates``         ``none`` (default) or ``elevation`` (intercept + elevation)
``stationary``         ``true`` / ``false``
``seed``               random seed (default 0)
``max_iter``           optimizer budget (default 500)
``fit_file``           fit.json to reuse in predict/score/simulate
``elevation_grid``     per-cell CSV ``lon,lat,elev_km`` (predict with covariates)
``reference_points``   ``lon lat; lon lat; ...`` for correlation maps
``predict_year``       replicate shown by predict (default: first year)
``holdout``            test fraction for score (default 0.2)
``test_stations``      explicit test CSV for score
``cv_candidates``      ``a,b,c,d; ...`` (default: all of {2,4,6,8}^4)
``cv_folds``           default 5
``sim_params``         ``log_kappa2, log_gamma, v_x, v_y, log_tau[, log_tau2]``
``sim_n_stations``     default 500
``sim_years``          number of simulated years (default 1)
``sim_first_year``     default 2000
``variogram_bins``     default 30
``variogram_max_dist``  default half the data diagonal
=====================  ===================================================
"""
import argparse
import configparser
import csv
import json
import logging
import math
import os
import sys
import tempfile
import time
from dataclasses import dataclass

import numpy as np

from .basis import build_basis_2d
from .errors import DataFormatError, SpdeGrfError
from .geometry import build_grid, locate_cell
from .inference import (
    cov_summary,
    cv_penalty_search,
    detrend,
    holdout_split,
    predict_grid,
    score_holdout,
    simulate_dataset,
    variogram,
)
from .model import Dataset, ModelSpec, build_latent_system, fit, regions_by_longitude
from .spde import NonStatParams

log = logging.getLogger("spdegrf")

COMMANDS = ("fit", "predict", "score", "cv", "simulate", "variogram", "detrend")
HEADER = ["lon", "lat", "elev_km", "value", "year"]


@dataclass(frozen=True)
class StationRecord:
    lon: float
    lat: float
    elev_km: float
    value: float
    year: int


def load_stations(path, domain=None, skip_bad=False):
    """Read a station CSV.

    Malformed rows (and, if ``domain`` is given, rows outside it) are
    collected with their line numbers; unless ``skip_bad`` they abort the
    load with :class:`DataFormatError`.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"station file not found: {path}")
    problems = []
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != HEADER:
            raise DataFormatError(f"{path}: header must be {','.join(HEADER)}")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 5:
                problems.append((line, f"expected 5 fields, got {len(row)}"))
                continue
            try:
                lon, lat, elev, val = (float(c) for c in row[:4])
                year = int(row[4])
            except ValueError as exc:
                problems.append((line, str(exc)))
                continue
            if not all(math.isfinite(v) for v in (lon, lat, elev, val)):
                problems.append((line, "non-finite number"))
                continue
            if domain is not None:
                x0, x1, y0, y1 = domain
                if not (x0 <= lon <= x1 and y0 <= lat <= y1):
                    problems.append((line, f"location ({lon}, {lat}) outside the domain"))
                    continue
            out.append(StationRecord(lon, lat, elev, val, year))
    if problems:
        for line, msg in problems:
            log.warning("%s:%d: %s", path, line, msg)
        if not skip_bad:
            raise DataFormatError(f"{path}: {len(problems)} malformed line(s)", problems)
    return out


# ---------------------------------------------------------------- output


def _fmt(v):
    return format(float(v), ".17g")


def _json_text(obj):
    def enc(o, ind):
        pad = "  " * (ind + 1)
        if isinstance(o, dict):
            if not o:
                return "{}"
            items = [f'{pad}{json.dumps(str(k))}: {enc(v, ind + 1)}' for k, v in o.items()]
            return "{\n" + ",\n".join(items) + "\n" + "  " * ind + "}"
        if isinstance(o, (list, tuple, np.ndarray)):
            return "[" + ", ".join(enc(v, ind) for v in o) + "]"
        if isinstance(o, (bool, np.bool_)):
            return "true" if o else "false"
        if o is None:
            return "null"
        if isinstance(o, (int, np.integer)):
            return str(int(o))
        if isinstance(o, (float, np.floating)):
            return _fmt(o) if math.isfinite(o) else "null"
        return json.dumps(o)

    return enc(obj, 0) + "\n"


def _atomic_write(path, text):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header, rows):
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join(str(v) if isinstance(v, (int, np.integer, str)) else _fmt(v) for v in r))
    return "\n".join(lines) + "\n"


def _stations_text(loc, elev, y, years):
    return _csv_text(HEADER, [(a, b, c, d, int(e)) for (a, b), c, d, e in zip(loc, elev, y, years)])


# ---------------------------------------------------------------- config


class Config:
    def __init__(self, path, overrides=None):
        cp = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
        if not os.path.exists(path):
            raise FileNotFoundError(f"config file not found: {path}")
        with open(path, encoding="utf-8") as fh:
            cp.read_string("[run]\n" + fh.read())
        self.values = dict(cp["run"])
        for k, v in (overrides or {}).items():
            if v is not None:
                self.values[k] = str(v)
        self.base = os.path.dirname(os.path.abspath(path))

    def get(self, key, default=None):
        v = self.values.get(key)
        return default if v is None or v.strip() == "" else v.strip()

    def require(self, key):
        v = self.get(key)
        if v is None:
            raise SpdeGrfError(f"config key '{key}' is required")
        return v

    def floats(self, key, default=None):
        v = self.get(key)
        if v is None:
            return default
        return [float(t) for t in v.replace(";", ",").split(",") if t.strip()]

    def path(self, key, default=None):
        v = self.get(key, default)
        if v is None:
            return None
        return v if os.path.isabs(v) else os.path.join(self.base, v)

    def flag(self, key, default=False):
        v = self.get(key)
        if v is None:
            return default
        return v.lower() in ("1", "true", "yes", "on")

    @property
    def output_dir(self):
        return self.path("output_dir", ".")


def _grid(cfg):
    dom = cfg.floats("domain")
    if dom is None or len(dom) != 4:
        raise SpdeGrfError("config key 'domain' needs four numbers")
    return build_grid(dom, int(cfg.require("n_x")), int(cfg.require("n_y")))


def _spec(cfg, stationary=None):
    grid = _grid(cfg)
    stat = cfg.flag("stationary") if stationary is None else stationary
    basis = None
    if not stat or cfg.get("basis_k"):
        basis = build_basis_2d(int(cfg.get("basis_k", 2)), int(cfg.get("basis_l", 2)), grid.extents)
    log_tau = cfg.floats("log_tau", [0.0, 0.0, 0.0, 0.0])
    if len(log_tau) != 4:
        raise SpdeGrfError("log_tau needs four values")
    return ModelSpec.from_log_tau(grid, basis, log_tau, tau_beta=float(cfg.get("tau_beta", 1e-4)), stationary=stat)


def _region_split(cfg):
    v = cfg.get("region_split", "single")
    return None if v.lower() == "single" else float(v)


def _select_years(records, spec_years):
    years = sorted({r.year for r in records})
    if spec_years is None or spec_years.lower() == "all":
        return years
    if "-" in spec_years:
        lo, hi = (int(v) for v in spec_years.split("-", 1))
        return [y for y in years if lo <= y <= hi]
    y = int(spec_years)
    return [y] if y in years else []


@dataclass
class _Data:
    dataset: Dataset
    years: list
    elev: np.ndarray


def _dataset(cfg, records, grid):
    years = _select_years(records, cfg.get("years"))
    if not years:
        raise SpdeGrfError("no station records for the selected years")
    yidx = {y: i for i, y in enumerate(years)}
    recs = [r for r in records if r.year in yidx]
    loc = np.array([(r.lon, r.lat) for r in recs], dtype=float).reshape(-1, 2)
    y = np.array([r.value for r in recs], dtype=float)
    elev = np.array([r.elev_km for r in recs], dtype=float)
    rep = np.array([yidx[r.year] for r in recs], dtype=np.int64)
    split = _region_split(cfg)
    reg = regions_by_longitude(loc[:, 0], split) if split is not None else np.zeros(len(recs), np.int64)
    X = None
    cov = cfg.get("covariates", "none").lower()
    if cov == "elevation":
        X = np.column_stack([np.ones(len(recs)), elev])
    elif cov != "none":
        raise SpdeGrfError(f"unknown covariates setting '{cov}'")
    ds = Dataset(loc, y, X, rep, reg, len(years), 2 if split is not None else 1)
    return _Data(ds, years, elev)


def _load(cfg, grid):
    cfg.require("stations")
    return load_stations(cfg.path("stations"), grid.extents, cfg.flag("skip_bad"))


def _fit_json(spec, result, data, cfg):
    g = spec.grid
    b = spec.field_basis
    out = {
        "grid": {"domain": list(g.extents), "n_x": g.n_x, "n_y": g.n_y},
        "basis": {"k": b.k, "l": b.l, "stationary": spec.stationary},
        "log_tau_penalty": list(np.log(spec.tau)),
        "tau_beta": spec.tau_beta,
        "region_split": _region_split(cfg),
        "years": list(data.years),
        "covariates": cfg.get("covariates", "none"),
        "n_regions": result.params.n_regions,
        "theta": list(result.theta),
        "loglik": result.loglik,
        "grad_norm": result.grad_norm,
        "iterations": result.n_iter,
        "converged": result.converged,
    }
    if result.std_errors is not None:
        out["std_errors"] = list(result.std_errors)
    if data.dataset.p:
        out["beta"] = list(build_latent_system(spec, result.params, data.dataset).beta)
    return out


def load_fit(path):
    """Read a fit.json; returns (dict, ModelSpec, NonStatParams)."""
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    g = build_grid(d["grid"]["domain"], d["grid"]["n_x"], d["grid"]["n_y"])
    stat = d["basis"]["stationary"]
    basis = None if stat else build_basis_2d(d["basis"]["k"], d["basis"]["l"], g.extents)
    spec = ModelSpec.from_log_tau(g, basis, d["log_tau_penalty"], tau_beta=d["tau_beta"], stationary=stat)
    params = NonStatParams.from_vector(d["theta"], spec.n_alpha, d["n_regions"])
    return d, spec, params


def _do_fit(cfg, spec, data):
    t0 = time.perf_counter()
    res = fit(spec, data.dataset, max_iter=int(cfg.get("max_iter", 500)))
    if not res.converged:
        log.warning("optimizer stopped before convergence: %s", res.message)
    return res, time.perf_counter() - t0


def _fitted(cfg, spec, data):
    fpath = cfg.path("fit_file")
    if fpath and os.path.exists(fpath):
        _, spec2, params = load_fit(fpath)
        if spec2.n_alpha != spec.n_alpha or spec2.grid != spec.grid:
            raise SpdeGrfError("fit_file does not match the configured grid/basis")
        return params
    res, _ = _do_fit(cfg, spec, data)
    return res.params


# ---------------------------------------------------------------- commands


def cmd_fit(cfg, out):
    spec = _spec(cfg)
    data = _dataset(cfg, _load(cfg, spec.grid), spec.grid)
    res, elapsed = _do_fit(cfg, spec, data)
    _atomic_write(os.path.join(out, "fit.json"), _json_text(_fit_json(spec, res, data, cfg)))
    _atomic_write(os.path.join(out, "timing.json"), _json_text({"fit_seconds": elapsed, "evaluations": res.n_eval}))
    return 0


def _cell_regions(cfg, grid):
    split = _region_split(cfg)
    if split is None:
        return np.zeros(grid.n_cells, np.int64)
    return regions_by_longitude(grid.centers()[:, 0], split)


def _elevation_grid(cfg, grid):
    p = cfg.path("elevation_grid")
    if p is None:
        raise SpdeGrfError("predict with covariates needs 'elevation_grid'")
    elev = np.full(grid.n_cells, np.nan)
    with open(p, newline="", encoding="utf-8") as fh:
        rd = csv.DictReader(fh)
        for row in rd:
            c = locate_cell(grid, (float(row["lon"]), float(row["lat"])))
            elev[c] = float(row["elev_km"])
    if np.isnan(elev).any():
        raise SpdeGrfError("elevation grid does not cover every cell")
    return np.column_stack([np.ones(grid.n_cells), elev])


def cmd_predict(cfg, out):
    spec = _spec(cfg)
    data = _dataset(cfg, _load(cfg, spec.grid), spec.grid)
    params = _fitted(cfg, spec, data)
    g = spec.grid
    Xg = _elevation_grid(cfg, g) if data.dataset.p else None
    pg = predict_grid(params, spec, data.dataset, Xg, _cell_regions(cfg, g))
    py = cfg.get("predict_year")
    t = data.years.index(int(py)) if py is not None else 0
    C = g.centers()
    rows = zip(C[:, 0], C[:, 1], pg.mean[t], pg.sd_latent[t], pg.sd_obs[t])
    _atomic_write(os.path.join(out, "prediction.csv"), _csv_text(["lon", "lat", "mean", "sd_latent", "sd_obs"], rows))
    refs = []
    rp = cfg.get("reference_points")
    if rp:
        for item in rp.split(";"):
            if item.strip():
                x, y = (float(v) for v in item.replace(",", " ").split())
                refs.append(locate_cell(g, (x, y)))
    cs = cov_summary(spec, params, refs)
    cols = [C[:, 0], C[:, 1], cs.marginal_sd] + [cs.correlation[r] for r in range(len(refs))]
    header = ["lon", "lat", "marginal_sd"] + [f"corr_{r + 1}" for r in range(len(refs))]
    _atomic_write(os.path.join(out, "covsummary.csv"), _csv_text(header, zip(*cols)))
    return 0


def cmd_score(cfg, out):
    spec = _spec(cfg)
    data = _dataset(cfg, _load(cfg, spec.grid), spec.grid)
    ds = data.dataset
    test_path = cfg.path("test_stations")
    if test_path:
        tdata = _dataset(cfg, load_stations(test_path, spec.grid.extents, cfg.flag("skip_bad")), spec.grid)
        if tdata.years != data.years:
            raise SpdeGrfError("test stations must cover the same years as the training stations")
        train, test = ds, tdata.dataset
    else:
        frac = float(cfg.get("holdout", 0.2))
        if not 0 < frac < 1:
            raise SpdeGrfError("holdout fraction must lie strictly between 0 and 1")
        train, test = holdout_split(ds, frac, int(cfg.get("seed", 0)))
    tr = _Data(train, data.years, None)
    res, _ = _do_fit(cfg, spec, tr)
    rep = score_holdout(res, spec, train, test)
    out_d = {"crps": rep.crps, "log_score": rep.log_score, "rmse": rep.rmse, "n_train": train.N, "n_test": test.N}
    _atomic_write(os.path.join(out, "scores.json"), _json_text(out_d))
    return 0


def cmd_cv(cfg, out):
    spec = _spec(cfg)
    data = _dataset(cfg, _load(cfg, spec.grid), spec.grid)
    cands = None
    cv = cfg.get("cv_candidates")
    if cv:
        cands = [tuple(float(v) for v in c.split(",")) for c in cv.split(";") if c.strip()]
    res = cv_penalty_search(spec, data.dataset, cands, int(cfg.get("cv_folds", 5)), int(cfg.get("seed", 0)),
                            {"max_iter": int(cfg.get("max_iter", 500))})
    out_d = {"candidates": [list(c) for c in res.candidates], "scores": list(res.scores), "best": list(res.best)}
    _atomic_write(os.path.join(out, "cv.json"), _json_text(out_d))
    return 0


def cmd_simulate(cfg, out):
    fpath = cfg.path("fit_file")
    if fpath and os.path.exists(fpath):
        _, spec, params = load_fit(fpath)
    else:
        spec = _spec(cfg, stationary=True)
        sp_ = cfg.floats("sim_params")
        if sp_ is None or len(sp_) < 5:
            raise SpdeGrfError("simulate needs 'sim_params' (or a fit_file)")
        params = NonStatParams.constant(*sp_[:4], sp_[4:])
    split = _region_split(cfg)
    if params.n_regions > 1 and split is None:
        raise SpdeGrfError("two nugget precisions need a region_split")
    region = (lambda L: regions_by_longitude(L[:, 0], split)) if params.n_regions > 1 else None
    T = int(cfg.get("sim_years", 1))
    ds = simulate_dataset(spec, params, n_locations=int(cfg.get("sim_n_stations", 500)), T=T,
                          seed=int(cfg.get("seed", 0)), region=region)
    first = int(cfg.get("sim_first_year", 2000))
    text = _stations_text(ds.locations, np.zeros(ds.N), ds.y, first + ds.replicate)
    _atomic_write(os.path.join(out, "simulated_stations.csv"), text)
    return 0


def cmd_variogram(cfg, out):
    grid = _grid(cfg)
    data = _dataset(cfg, _load(cfg, grid), grid)
    kw = {"n_bins": int(cfg.get("variogram_bins", 30))}
    md = cfg.get("variogram_max_dist")
    if md is not None:
        kw["max_dist"] = float(md)
    split = _region_split(cfg)
    parts = [("variogram.csv", None)]
    if split is not None:
        parts = [("variogram_west.csv", (split, "west")), ("variogram_east.csv", (split, "east"))]
    for name, filt in parts:
        v = variogram(data.dataset, region_filter=filt, **kw)
        rows = [(c, s if np.isfinite(s) else "nan", int(n)) for c, s, n in zip(v.bin_centers, v.semivariance, v.count)]
        _atomic_write(os.path.join(out, name), _csv_text(["bin_center", "semivariance", "count"], rows))
    return 0


def cmd_detrend(cfg, out):
    spec = _spec(cfg, stationary=True)
    data = _dataset(cfg, _load(cfg, spec.grid), spec.grid)
    resid, mu = detrend(data.dataset, spec, {"max_iter": int(cfg.get("max_iter", 500))})
    years = np.asarray(data.years)[resid.replicate]
    _atomic_write(os.path.join(out, "residual_stations.csv"), _stations_text(resid.locations, data.elev, resid.y, years))
    C = spec.grid.centers()
    _atomic_write(os.path.join(out, "mean_field.csv"), _csv_text(["lon", "lat", "mean"], zip(C[:, 0], C[:, 1], mu)))
    return 0


_DISPATCH = {
    "fit": cmd_fit,
    "predict": cmd_predict,
    "score": cmd_score,
    "cv": cmd_cv,
    "simulate": cmd_simulate,
    "variogram": cmd_variogram,
    "detrend": cmd_detrend,
}


def run(subcommand, config):
    """Run one subcommand with a :class:`Config`; returns the exit status."""
    if subcommand not in _DISPATCH:
        raise SpdeGrfError(f"unknown subcommand {subcommand!r}")
    out = config.output_dir
    return _DISPATCH[subcommand](config, out)


def _parser():
    p = argparse.ArgumentParser(prog="spdegrf", description="Fit and evaluate SPDE-based Gaussian random fields.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="key = value configuration file")
    p.add_argument("--skip-bad", action="store_true", help="drop malformed station rows instead of failing")
    p.add_argument("--seed", type=int, help="random seed")
    p.add_argument("--holdout", type=float, help="test fraction for 'score'")
    p.add_argument("--region-split", type=float, help="longitude separating two nugget regions")
    p.add_argument("--stationary", action="store_true", help="fit the stationary model")
    p.add_argument("--output-dir", help="directory for results")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    overrides = {
        "seed": args.seed,
        "holdout": args.holdout,
        "region_split": args.region_split,
        "output_dir": os.path.abspath(args.output_dir) if args.output_dir else None,
        "skip_bad": "true" if args.skip_bad else None,
        "stationary": "true" if args.stationary else None,
    }
    try:
        cfg = Config(args.config, overrides)
        return run(args.command, cfg)
    except (SpdeGrfError, OSError, ValueError, KeyError) as exc:
        print(f"spdegrf {args.command}: error: {exc}", file=sys.stderr)
        if isinstance(exc, DataFormatError):
            for line, msg in exc.problems[:20]:
                print(f"  line {line}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
