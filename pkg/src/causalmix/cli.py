"""Batch front-end: every pipeline as a subcommand driven by a JSON config.

Shared config shape::

    {
      "input": "data.csv",            # not used by `gen`
      "columns": {...role -> name(s)...},
      "params": {...subcommand-specific settings...},
      "seed": 0,
      "parallelism": 1,
      "out": "results/",
      "formats": ["json", "csv"]
    }

Every run validates the full config against the module preconditions
before any sampling starts, then writes a ``result.json`` envelope
(config echo, seed, versions, per-phase timings, results; timestamps
live under the separate ``metadata`` key) plus long-format CSV files
ready for external plotting.  Exit codes: 0 success, 2 validation
failure, 3 runtime failure.  A runtime failure leaves a ``FAILED``
marker file next to any partial outputs.
"""

from __future__ import annotations

import argparse
import csv
import json
import platform
import sys
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy

from . import __version__
from .bart import (
    POLYNOMIAL,
    BartHyper,
    BartMcmc,
    fit_continuous_bart,
    fit_probit_bart,
    variable_importance,
)
from .datagen import dunson_example, mix_data, qte_example, three_normals
from .density import (
    CDF,
    MEAN_REG,
    PDF,
    GridSpec,
    conditional_estimate,
    credible_band,
    joint_density_average,
)
from .diagnostics import autocorrelation
from .dpm import BLOCKED, POLYA, DpmMcmc, default_hypers, run_mcmc
from .qte import QteConfig, estimate_qte
from .rng import RngStream

__all__ = ["RunConfig", "load_run_config", "validate_config", "run", "main"]

_SUBCOMMANDS = ("bart", "density", "cdensity", "qte", "diag", "gen")
_FORMATS = ("json", "csv")
_GENERATORS = ("mix", "three-normals", "dunson", "qte")
_FAILURE_MARKER = "FAILED"


@dataclass
class RunConfig:
    """One batch run: subcommand plus the parsed config file contents."""

    subcommand: str
    input: Optional[str] = None
    columns: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    seed: int = 0
    parallelism: int = 1
    out: str = "."
    formats: Tuple[str, ...] = _FORMATS


def load_run_config(subcommand: str, config_path: Optional[str],
                    seed: Optional[int] = None,
                    threads: Optional[int] = None,
                    out: Optional[str] = None) -> RunConfig:
    """Read the config file and apply the command-line overrides."""
    raw = {}
    if config_path is not None:
        with open(config_path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ValueError("config file must hold a JSON object")
    known = {"input", "columns", "params", "seed", "parallelism", "out",
             "formats"}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    cfg = RunConfig(subcommand=subcommand, **raw)
    cfg.formats = tuple(cfg.formats)
    if seed is not None:
        cfg.seed = seed
    if threads is not None:
        cfg.parallelism = threads
    if out is not None:
        cfg.out = out
    return cfg


# ------------------------------------------------------------- CSV I/O

def read_table(path: str) -> Tuple[List[str], np.ndarray]:
    """Read a numeric CSV with a required header row.

    UTF-8, '.' decimal separator.  Every cell must parse as a finite
    number; the models assume complete data, so missing values are
    rejected with the offending position.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file, header row required")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValueError(
                    f"{path}:{lineno}: expected {len(header)} fields, "
                    f"got {len(row)}"
                )
            parsed = []
            for name, cell in zip(header, row):
                cell = cell.strip()
                if cell == "":
                    raise ValueError(
                        f"{path}:{lineno}: missing value in column {name!r}"
                    )
                try:
                    value = float(cell)
                except ValueError:
                    raise ValueError(
                        f"{path}:{lineno}: non-numeric value {cell!r} in "
                        f"column {name!r}"
                    ) from None
                if not np.isfinite(value):
                    raise ValueError(
                        f"{path}:{lineno}: non-finite value in column "
                        f"{name!r}"
                    )
                parsed.append(value)
            rows.append(parsed)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return header, np.asarray(rows, dtype=np.float64)


def _write_csv(path: Path, header: Sequence[str], rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


# ---------------------------------------------------------- validation

def _columns_for(cfg: RunConfig, header: List[str]):
    """Resolve column roles to names, defaulting the 'rest' roles."""
    cols = dict(cfg.columns)
    if cfg.subcommand == "bart":
        response = cols.get("response")
        features = cols.get("features")
        if features is None and response is not None:
            features = [c for c in header if c != response]
        return {"response": response, "features": features}
    if cfg.subcommand in ("density", "diag"):
        coords = cols.get("coords")
        if coords is None:
            coords = list(header)
        return {"coords": coords}
    if cfg.subcommand == "cdensity":
        response = cols.get("response")
        covariates = cols.get("covariates")
        if covariates is None and response is not None:
            covariates = [c for c in header if c != response]
        return {"response": response, "covariates": covariates}
    if cfg.subcommand == "qte":
        response = cols.get("response")
        treatment = cols.get("treatment")
        confounders = cols.get("confounders")
        if confounders is None and response is not None and treatment is not None:
            confounders = [c for c in header
                           if c not in (response, treatment)]
        return {"response": response, "treatment": treatment,
                "confounders": confounders}
    return {}


def _check_columns(roles: dict, header: List[str], report: List[str]):
    for role, names in roles.items():
        if names is None:
            report.append(f"columns.{role} is required")
            continue
        wanted = [names] if isinstance(names, str) else list(names)
        for name in wanted:
            if name not in header:
                report.append(
                    f"columns.{role}: {name!r} not found in the input header"
                )


def _try(report: List[str], what: str, fn):
    try:
        fn()
    except ValueError as exc:
        report.append(f"{what}: {exc}")


def _bart_hyper(params: dict) -> BartHyper:
    return BartHyper(
        ntree=params.get("ntree", 200),
        split_kind=params.get("split_kind", POLYNOMIAL),
        base=params.get("base", 0.95),
        power=params.get("power", 2.0),
        k=params.get("k", 2.0),
        link="probit" if params.get("model") == "probit" else "identity",
    )


def _bart_mcmc(params: dict) -> BartMcmc:
    return BartMcmc(nskip=params.get("nskip", 100),
                    ndpost=params.get("ndpost", 1000),
                    keepevery=params.get("keepevery", 1))


def _dpm_mcmc(params: dict) -> DpmMcmc:
    return DpmMcmc(nskip=params.get("nskip", 500),
                   ndpost=params.get("ndpost", 500),
                   keepevery=params.get("keepevery", 1))


def _qte_config(cfg: RunConfig, xpred: Optional[np.ndarray]) -> QteConfig:
    p = cfg.params
    bart_block = p.get("bart", {})
    dpm_block = p.get("dpm", {})
    k_draws = p.get("k_draws", 5)
    l_draws = p.get("l_draws", 200)
    grid = p.get("grid", {})
    return QteConfig(
        probs=tuple(p.get("probs", (0.1, 0.25, 0.5, 0.75, 0.9))),
        rdist=p.get("rdist", "empirical"),
        xpred=xpred,
        k_draws=k_draws,
        l_draws=l_draws,
        grid_size=grid.get("npoints", 100),
        grid_pad=grid.get("pad", 0.25),
        band=p.get("type_band", "BCI"),
        levels=tuple(p.get("alphas", (0.05,))),
        parallelism=cfg.parallelism,
        sampler=p.get("method", BLOCKED),
        eps=p.get("eps", 0.01),
        nclusters=dpm_block.get("nclusters", 50),
        bart=BartHyper(
            ntree=bart_block.get("ntree", 200),
            split_kind=bart_block.get("split_kind", POLYNOMIAL),
            base=bart_block.get("base", 0.95),
            power=bart_block.get("power", 2.0),
            link="probit",
        ),
        bart_mcmc=BartMcmc(nskip=bart_block.get("nskip", 500),
                           ndpost=k_draws,
                           keepevery=bart_block.get("keepevery", 100)),
        dpm_mcmc=DpmMcmc(nskip=dpm_block.get("nskip", 500),
                         ndpost=l_draws,
                         keepevery=dpm_block.get("keepevery", 2)),
    )


def validate_config(cfg: RunConfig) -> List[str]:
    """Every violated precondition, without running anything."""
    report: List[str] = []
    if cfg.subcommand not in _SUBCOMMANDS:
        report.append(f"unknown subcommand {cfg.subcommand!r}")
        return report
    if cfg.parallelism < 1:
        report.append("parallelism must be >= 1")
    bad_formats = set(cfg.formats) - set(_FORMATS)
    if bad_formats:
        report.append(f"unknown output formats: {sorted(bad_formats)}")
    if not cfg.formats:
        report.append("at least one output format is required")
    if not isinstance(cfg.seed, int):
        report.append("seed must be an integer")
    params = cfg.params

    if cfg.subcommand == "gen":
        gen = params.get("generator")
        if gen not in _GENERATORS:
            report.append(f"params.generator must be one of {_GENERATORS}")
        n = params.get("n", 0)
        if not isinstance(n, int) or n < 1:
            report.append("params.n must be a positive integer")
        if gen == "mix" and params.get("p", 10) < 10:
            report.append("params.p must be >= 10 for the mix generator")
        if gen == "mix" and params.get("sigma", 1.0) <= 0:
            report.append("params.sigma must be positive")
        return report

    header: List[str] = []
    if cfg.input is None:
        report.append("input CSV path is required")
    else:
        try:
            with open(cfg.input, "r", encoding="utf-8", newline="") as fh:
                header = next(csv.reader(fh), [])
        except OSError as exc:
            report.append(f"input: {exc}")
    if header:
        roles = _columns_for(cfg, header)
        _check_columns(roles, header, report)

    method = params.get("method", BLOCKED)
    if cfg.subcommand in ("density", "cdensity", "diag", "qte"):
        if method not in (BLOCKED, POLYA):
            report.append(f"params.method must be {BLOCKED!r} or {POLYA!r}")
        nclusters = params.get("nclusters", 50)
        if method == BLOCKED and nclusters < 2:
            report.append("params.nclusters must be >= 2 for the blocked "
                          "sampler")
        if nclusters < 1:
            report.append("params.nclusters must be >= 1")
        if cfg.subcommand != "qte":
            _try(report, "params mcmc block", _dpm_mcmc(params).validate)

    if cfg.subcommand == "bart":
        if params.get("model", "continuous") not in ("continuous", "probit"):
            report.append("params.model must be 'continuous' or 'probit'")
        _try(report, "params", lambda: _bart_hyper(params).validate())
        _try(report, "params mcmc block", _bart_mcmc(params).validate)

    if cfg.subcommand == "cdensity":
        kinds = params.get("kinds", [PDF, CDF, MEAN_REG])
        for kind in kinds:
            if kind not in (PDF, CDF, MEAN_REG):
                report.append(f"params.kinds: unknown kind {kind!r}")
        if params.get("type_band", "HPD") not in ("HPD", "BCI"):
            report.append("params.type_band must be 'HPD' or 'BCI'")
        for a in params.get("alphas", [0.05]):
            if not 0.0 < a < 1.0:
                report.append(f"params.alphas: {a} outside (0, 1)")
        eps = params.get("eps", 0.01)
        if not 0.0 < eps < 1.0:
            report.append("params.eps must lie strictly inside (0, 1)")
        xpred = params.get("xpred", {})
        if "file" not in xpred and xpred.get("npoints", 51) < 1:
            report.append("params.xpred.npoints must be >= 1")
        if (params.get("compute_band", True)
                and params.get("ndpost", 500) < 20):
            report.append("credible bands need ndpost >= 20")

    if cfg.subcommand == "qte":
        for p in params.get("probs", [0.1, 0.25, 0.5, 0.75, 0.9]):
            if not 0.0 < p < 1.0:
                report.append(f"params.probs: {p} outside (0, 1)")
        rdist = params.get("rdist", "empirical")
        if rdist not in ("known", "empirical", "bootstrap"):
            report.append("params.rdist must be 'known', 'empirical', or "
                          "'bootstrap'")
        if rdist == "known" and "xpred" not in params:
            report.append("params.xpred file is required when rdist='known'")
        if rdist != "known" and "xpred" in params:
            report.append("params.xpred is only meaningful with "
                          "rdist='known'")
        for a in params.get("alphas", [0.05]):
            if not 0.0 < a < 1.0:
                report.append(f"params.alphas: {a} outside (0, 1)")
        if params.get("type_band", "BCI") not in ("HPD", "BCI"):
            report.append("params.type_band must be 'HPD' or 'BCI'")
        for key in ("k_draws", "l_draws"):
            if params.get(key, 1) < 1:
                report.append(f"params.{key} must be >= 1")

    if cfg.subcommand == "diag":
        if params.get("max_lag", 50) < 1:
            report.append("params.max_lag must be >= 1")

    return report


# -------------------------------------------------------------- phases

class _Phase:
    """Record one phase's wall-clock seconds under a monotone clock."""

    def __init__(self, timings: Dict[str, float], name: str):
        self.timings = timings
        self.name = name

    def __enter__(self):
        self.start = time.monotonic()
        return self

    def __exit__(self, exc_type, exc, tb):
        self.timings[self.name] = time.monotonic() - self.start
        if exc is not None and not isinstance(exc, _PhaseError):
            raise _PhaseError(f"[{self.name}] {exc}") from exc
        return False


class _PhaseError(RuntimeError):
    """Runtime failure annotated with the phase it happened in."""


def _pick(header: List[str], data: np.ndarray, names) -> np.ndarray:
    if isinstance(names, str):
        return data[:, header.index(names)]
    idx = [header.index(n) for n in names]
    return data[:, idx]


# -------------------------------------------------------------- runners

def _run_gen(cfg: RunConfig, outdir: Path, timings: Dict[str, float]) -> dict:
    params = cfg.params
    rng = RngStream(cfg.seed)
    gen = params["generator"]
    n = params["n"]
    with _Phase(timings, "generate"):
        if gen == "mix":
            data = mix_data(n, p=params.get("p", 10),
                            sigma=params.get("sigma", 1.0), rng=rng)
            header = [f"x{j + 1}" for j in range(data.x.shape[1])] + ["y"]
            table = np.column_stack([data.x, data.y])
        elif gen == "three-normals":
            data = three_normals(n, rng=rng)
            header = ["y1", "y2"]
            table = data.y
        elif gen == "dunson":
            data = dunson_example(n, rng=rng)
            header = ["x1", "y"]
            table = np.column_stack([data.x, data.y])
        else:
            data = qte_example(n, rng=rng)
            header = [f"x{j + 1}" for j in range(data.x.shape[1])]
            header += ["treatment", "y", "y0", "y1"]
            table = np.column_stack([data.x, data.treatment, data.y,
                                     data.y0, data.y1])
    with _Phase(timings, "write"):
        if "csv" in cfg.formats:
            _write_csv(outdir / "data.csv", header, table.tolist())
    return {"generator": gen, "n": n, "columns": header}


def _run_bart(cfg: RunConfig, outdir: Path, timings: Dict[str, float]) -> dict:
    header, data = read_table(cfg.input)
    roles = _columns_for(cfg, header)
    y = _pick(header, data, roles["response"])
    x = _pick(header, data, roles["features"])
    params = cfg.params
    model = params.get("model", "continuous")
    hyper = _bart_hyper(params)
    mcmc = _bart_mcmc(params)
    rng = RngStream(cfg.seed)
    with _Phase(timings, "bart fit"):
        if model == "probit":
            t = y.astype(np.int64)
            fit = fit_probit_bart(x, t, hyper=hyper, mcmc=mcmc, rng=rng)
            train_pred = fit.predict_prob(x).mean(axis=0)
            fit_stat = {"train_misclass":
                        float(np.mean((train_pred > 0.5) != (t == 1)))}
        else:
            fit = fit_continuous_bart(x, y, hyper=hyper, mcmc=mcmc, rng=rng)
            train_pred = fit.train_fits.mean(axis=0)
            fit_stat = {"train_rmse":
                        float(np.sqrt(np.mean((train_pred - y) ** 2)))}
    with _Phase(timings, "evaluate"):
        imp = variable_importance(fit)
        feats = roles["features"]
        results = {
            "model": model,
            **fit_stat,
            "vip": {f: float(v) for f, v in zip(feats, imp.vip)},
            "mi": {f: float(v) for f, v in zip(feats, imp.mi)},
        }
        if model == "continuous":
            results["sigma2_mean"] = float(fit.sigma2_draws.mean())
        xpred_path = params.get("xpred")
        pred_rows = None
        if xpred_path:
            ph, pdata = read_table(xpred_path)
            xnew = _pick(ph, pdata, feats)
            pred = (fit.predict_prob(xnew) if model == "probit"
                    else fit.predict(xnew)).mean(axis=0)
            pred_rows = pred
    with _Phase(timings, "write"):
        if "csv" in cfg.formats:
            _write_csv(outdir / "varimp.csv", ["variable", "vip", "mi"],
                       [[f, v, m] for f, v, m in
                        zip(feats, imp.vip, imp.mi)])
            _write_csv(outdir / "train_fit.csv", ["row", "fit_avg"],
                       list(enumerate(train_pred.tolist())))
            if model == "continuous":
                _write_csv(outdir / "sigma2_trace.csv", ["draw", "sigma2"],
                           list(enumerate(fit.sigma2_draws.tolist())))
            if pred_rows is not None:
                _write_csv(outdir / "predictions.csv", ["row", "pred_avg"],
                           list(enumerate(pred_rows.tolist())))
    return results


def _density_fit(cfg: RunConfig, z: np.ndarray, timings: Dict[str, float],
                 diag: bool = False):
    params = cfg.params
    method = params.get("method", BLOCKED)
    hyper = default_hypers(
        z,
        use_hyperpriors=params.get("hyperpriors", True),
        update_alpha=params.get("update_alpha", True),
        nclusters=params.get("nclusters", 50),
    )
    mcmc = _dpm_mcmc(params)
    rng = RngStream(cfg.seed)
    with _Phase(timings, "fit"):
        post = run_mcmc(z, hyper, mcmc, method, rng.substream("chain"),
                        diag=diag)
    return post, rng


def _run_density(cfg: RunConfig, outdir: Path,
                 timings: Dict[str, float]) -> dict:
    header, data = read_table(cfg.input)
    roles = _columns_for(cfg, header)
    z = _pick(header, data, roles["coords"])
    post, rng = _density_fit(cfg, z, timings)
    params = cfg.params
    gridspec = GridSpec.from_data(
        z, npoints=params.get("npoints", 50), pad=params.get("pad", 0.25)
    )
    with _Phase(timings, "evaluate"):
        avg = joint_density_average(post, gridspec,
                                    rng=rng.substream("evaluate"))
    with _Phase(timings, "write"):
        if "csv" in cfg.formats:
            points = gridspec.points()
            coord_names = [f"coord{j + 1}" for j in range(points.shape[1])]
            rows = np.column_stack([points, avg.reshape(-1)])
            _write_csv(outdir / "density_avg.csv",
                       coord_names + ["density"], rows.tolist())
    cell = np.prod([ax[1] - ax[0] for ax in gridspec.axes])
    return {
        "method": params.get("method", BLOCKED),
        "ndpost": post.ndpost,
        "grid_shape": list(avg.shape),
        "density_mass_on_grid": float(avg.sum() * cell),
        "density_max": float(avg.max()),
    }


def _run_cdensity(cfg: RunConfig, outdir: Path,
                  timings: Dict[str, float]) -> dict:
    header, data = read_table(cfg.input)
    roles = _columns_for(cfg, header)
    y = _pick(header, data, roles["response"])
    covs = roles["covariates"]
    xmat = _pick(header, data, covs)
    if xmat.ndim == 1:
        xmat = xmat[:, None]
    params = cfg.params
    z = np.column_stack([y, xmat])
    post, rng = _density_fit(cfg, z, timings)

    xpred_spec = params.get("xpred", {})
    if "file" in xpred_spec:
        ph, pdata = read_table(xpred_spec["file"])
        xpred = _pick(ph, pdata, covs)
        if xpred.ndim == 1:
            xpred = xpred[:, None]
    else:
        if xmat.shape[1] != 1:
            raise ValueError("xpred.npoints needs exactly one covariate; "
                             "pass an xpred file instead")
        xpred = np.linspace(xmat.min(), xmat.max(),
                            xpred_spec.get("npoints", 51))[:, None]
    ygrid_spec = params.get("ygrid", {})
    ygrid = GridSpec.from_data(y, npoints=ygrid_spec.get("npoints", 100),
                               pad=ygrid_spec.get("pad", 0.25)).axes[0]
    kinds = tuple(params.get("kinds", (PDF, CDF, MEAN_REG)))
    alphas = list(params.get("alphas", [0.05]))
    compute_band = params.get("compute_band", True)
    band = params.get("type_band", "HPD")
    with _Phase(timings, "evaluate"):
        est = conditional_estimate(
            post, xpred, ygrid, kinds=kinds, eps=params.get("eps", 0.01),
            rng=rng.substream("evaluate"),
            use_cache=params.get("cache", True),
            alpha=alphas[0], band=band if compute_band else None,
        )
        extra_bands = {}
        if compute_band:
            for kind in kinds:
                extra_bands[kind] = {
                    a: credible_band(est[kind].values, alpha=a, kind=band)
                    for a in alphas
                }
    with _Phase(timings, "write"):
        if "csv" in cfg.formats:
            for kind in kinds:
                ev = est[kind]
                rows = []
                if kind == MEAN_REG:
                    for i in range(xpred.shape[0]):
                        row = [i, xpred[i, 0], ev.avg[i]]
                        for a in alphas if compute_band else []:
                            lo, hi = extra_bands[kind][a]
                            row += [lo[i], hi[i]]
                        rows.append(row)
                    head = ["xpred_index", "xpred", "avg"]
                else:
                    for i in range(xpred.shape[0]):
                        for s, yv in enumerate(ygrid):
                            row = [i, xpred[i, 0], yv, ev.avg[i, s]]
                            for a in alphas if compute_band else []:
                                lo, hi = extra_bands[kind][a]
                                row += [lo[i, s], hi[i, s]]
                            rows.append(row)
                    head = ["xpred_index", "xpred", "y", "avg"]
                for a in alphas if compute_band else []:
                    head += [f"lower_{a}", f"upper_{a}"]
                _write_csv(outdir / f"{kind}_curves.csv", head, rows)
    return {
        "method": params.get("method", BLOCKED),
        "ndpost": post.ndpost,
        "kinds": list(kinds),
        "xpred_points": int(xpred.shape[0]),
        "ygrid_points": int(ygrid.size),
        "band": band if compute_band else None,
        "alphas": alphas if compute_band else [],
    }


def _run_qte(cfg: RunConfig, outdir: Path, timings: Dict[str, float]) -> dict:
    header, data = read_table(cfg.input)
    roles = _columns_for(cfg, header)
    y = _pick(header, data, roles["response"])
    treatment = _pick(header, data, roles["treatment"]).astype(np.int64)
    x = _pick(header, data, roles["confounders"])
    if x.ndim == 1:
        x = x[:, None]
    params = cfg.params
    xpred = None
    if "xpred" in params:
        ph, pdata = read_table(params["xpred"])
        xpred = _pick(ph, pdata, roles["confounders"])
        if xpred.ndim == 1:
            xpred = xpred[:, None]
    qcfg = _qte_config(cfg, xpred)
    with _Phase(timings, "pipeline"):
        res = estimate_qte(y, x, treatment, qcfg, RngStream(cfg.seed))
    timings.update(res.timings)
    with _Phase(timings, "write"):
        if "csv" in cfg.formats:
            head = ["prob", "avg"]
            for a in qcfg.levels:
                head += [f"lower_{a}", f"upper_{a}"]
            rows = []
            for j, p in enumerate(res.probs):
                row = [p, res.qte_avg[j]]
                for a in qcfg.levels:
                    if res.qte_ci is None:
                        row += ["", ""]
                    else:
                        row += [res.qte_ci[a][j, 0], res.qte_ci[a][j, 1]]
                rows.append(row)
            _write_csv(outdir / "qte.csv", head, rows)
            _write_csv(
                outdir / "qte_draws.csv", ["draw", "prob", "value"],
                [[d, p, res.qte_draws[d, j]]
                 for d in range(res.qte_draws.shape[0])
                 for j, p in enumerate(res.probs)],
            )
            _write_csv(
                outdir / "arm_cdf_avg.csv", ["arm", "y", "cdf"],
                [[t, yv, res.arms[t].cdf_avg[s]]
                 for t in (0, 1) for s, yv in enumerate(res.grid)],
            )
            _write_csv(
                outdir / "arm_pdf_avg.csv", ["arm", "y", "pdf"],
                [[t, yv, res.arms[t].pdf_avg[s]]
                 for t in (0, 1) for s, yv in enumerate(res.grid)],
            )
    return {
        "probs": res.probs.tolist(),
        "rdist": qcfg.rdist,
        "method": qcfg.sampler,
        "k_draws": int(res.propensity.train_latents.shape[0]),
        "l_draws": qcfg.l_draws,
        "qtes": {
            "avg": res.qte_avg.tolist(),
            "ci": {str(a): res.qte_ci[a].tolist() for a in qcfg.levels}
            if res.qte_ci is not None else None,
        },
        "quantiles": {
            str(t): res.arms[t].quantile_avg.tolist() for t in (0, 1)
        },
        "band": res.band,
    }


def _run_diag(cfg: RunConfig, outdir: Path, timings: Dict[str, float]) -> dict:
    header, data = read_table(cfg.input)
    roles = _columns_for(cfg, header)
    z = _pick(header, data, roles["coords"])
    post, _ = _density_fit(cfg, z, timings, diag=True)
    params = cfg.params
    max_lag = params.get("max_lag", 50)
    with _Phase(timings, "evaluate"):
        acf_alpha = autocorrelation(post.alpha, max_lag)
        acf_lam = autocorrelation(post.lam, max_lag)
    with _Phase(timings, "write"):
        if "csv" in cfg.formats:
            d = post.d
            head = ["draw", "loglik"]
            if post.logmpp is not None:
                head.append("logmpp")
            head += ["alpha", "lambda"]
            head += [f"m_{j}" for j in range(d)]
            head += [f"Psi_{i}{j}" for i in range(d) for j in range(d)]
            rows = []
            for l in range(post.ndpost):
                row = [l, post.loglik[l]]
                if post.logmpp is not None:
                    row.append(post.logmpp[l])
                row += [post.alpha[l], post.lam[l]]
                row += post.m[l].tolist()
                row += post.Psi[l].reshape(-1).tolist()
                rows.append(row)
            _write_csv(outdir / "trace.csv", head, rows)
            _write_csv(outdir / "acf.csv",
                       ["lag", "alpha_acf", "lambda_acf"],
                       [[lag, acf_alpha[lag], acf_lam[lag]]
                        for lag in range(max_lag + 1)])
    return {
        "method": params.get("method", BLOCKED),
        "ndpost": post.ndpost,
        "alpha_acf1": float(acf_alpha[1]),
        "lambda_acf1": float(acf_lam[1]),
        "loglik_mean": float(np.mean(post.loglik)),
    }


_RUNNERS = {
    "gen": _run_gen,
    "bart": _run_bart,
    "density": _run_density,
    "cdensity": _run_cdensity,
    "qte": _run_qte,
    "diag": _run_diag,
}


# ------------------------------------------------------------ the run op

def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def run(cfg: RunConfig) -> int:
    """Validate, execute, and write the result envelope.  Returns exit code."""
    report = validate_config(cfg)
    if report:
        for line in report:
            print(f"invalid: {line}", file=sys.stderr)
        return 2

    outdir = Path(cfg.out)
    outdir.mkdir(parents=True, exist_ok=True)
    marker = outdir / _FAILURE_MARKER
    if marker.exists():
        marker.unlink()

    timings: Dict[str, float] = {}
    started = _now()
    try:
        results = _RUNNERS[cfg.subcommand](cfg, outdir, timings)
    except Exception as exc:
        context = f"{cfg.subcommand}: {exc}"
        marker.write_text(context + "\n", encoding="utf-8")
        print(f"error: {context}", file=sys.stderr)
        return 3

    envelope = {
        "config": asdict(cfg),
        "seed": cfg.seed,
        "versions": {
            "causalmix": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
        "timings": timings,
        "results": results,
        "metadata": {"started": started, "finished": _now()},
    }
    if "json" in cfg.formats:
        with open(outdir / "result.json", "w", encoding="utf-8") as fh:
            json.dump(envelope, fh, sort_keys=True, indent=2)
            fh.write("\n")
    return 0


# ----------------------------------------------------------------- main

def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="causalmix",
        description="Batch pipelines: tree-ensemble fits, mixture "
                    "densities, conditional curves, and quantile "
                    "treatment effects.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in _SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", default=None,
                        help="JSON config file")
        sp.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
        sp.add_argument("--threads", type=int, default=None,
                        help="override the config parallelism")
        sp.add_argument("--out", default=None,
                        help="override the output directory")
        sp.add_argument("--validate-only", action="store_true",
                        help="report every violated precondition and exit")
    args = parser.parse_args(argv)

    try:
        cfg = load_run_config(args.subcommand, args.config, seed=args.seed,
                              threads=args.threads, out=args.out)
    except (OSError, ValueError, TypeError, json.JSONDecodeError) as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return 2

    if args.validate_only:
        report = validate_config(cfg)
        if report:
            for line in report:
                print(f"invalid: {line}", file=sys.stderr)
            return 2
        print("config ok")
        return 0

    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
