"""Quantile treatment effects from a propensity-score BART stage and
per-arm mixture models on (outcome, latent propensity) pairs.

The pipeline: a probit forest fit on treatment against the confounders
supplies ``K`` posterior draws of the latent-scale propensity score; for
each of those draws and each arm, a mixture model is fit on the pairs
``(Y_i, latent_i)`` within the arm; its conditional CDFs, evaluated at
the latent scores of the target population and weighted by a
distribution policy, marginalize into potential-outcome CDFs; quantiles
are read off each CDF draw and differenced into QTE draws.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from .bart import BartHyper, BartMcmc, fit_probit_bart
from .density import (
    CDF,
    PDF,
    GridSpec,
    conditional_curves_blocked,
    conditional_curves_polya,
    credible_band,
)
from .dpm import BLOCKED, POLYA, DpmHyper, DpmMcmc, default_hypers, run_mcmc
from .rng import RngStream

__all__ = [
    "KNOWN",
    "EMPIRICAL",
    "BOOTSTRAP",
    "QteConfig",
    "PropensityPosterior",
    "ArmEstimate",
    "QteResult",
    "QuantileSummary",
    "bayesian_bootstrap_weights",
    "marginal_cdf",
    "quantile_from_cdf",
    "estimate_qte",
    "predict_quantiles",
]

KNOWN = "known"
EMPIRICAL = "empirical"
BOOTSTRAP = "bootstrap"
_RDISTS = (KNOWN, EMPIRICAL, BOOTSTRAP)

# fixed evaluation block size: keeps per-process temporaries bounded and,
# because it never depends on the worker count, keeps float reduction
# order identical across parallelism degrees
_EVAL_CHUNK = 512


@dataclass
class QteConfig:
    """Settings for the full QTE pipeline."""

    probs: Tuple[float, ...] = (0.1, 0.25, 0.5, 0.75, 0.9)
    rdist: str = EMPIRICAL
    xpred: Optional[np.ndarray] = None
    k_draws: int = 5
    l_draws: int = 200
    grid_size: int = 100
    grid_pad: float = 0.25
    band: str = "BCI"
    levels: Tuple[float, ...] = (0.05,)
    parallelism: int = 1
    sampler: str = BLOCKED
    eps: float = 0.01
    nclusters: int = 50
    bart: Optional[BartHyper] = None
    bart_mcmc: Optional[BartMcmc] = None
    dpm: Optional[DpmHyper] = None
    dpm_mcmc: Optional[DpmMcmc] = None

    def validate(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.size == 0 or np.any(probs <= 0.0) or np.any(probs >= 1.0):
            raise ValueError("probs must lie strictly inside (0, 1)")
        if self.rdist not in _RDISTS:
            raise ValueError(f"rdist must be one of {_RDISTS}")
        if self.rdist == KNOWN and self.xpred is None:
            raise ValueError("rdist='known' needs xpred rows drawn from the "
                             "confounder distribution")
        if self.rdist != KNOWN and self.xpred is not None:
            raise ValueError("xpred is only meaningful with rdist='known'")
        if self.k_draws < 1 or self.l_draws < 1:
            raise ValueError("k_draws and l_draws must be positive")
        if self.grid_size < 2:
            raise ValueError("grid_size must be >= 2")
        if not self.grid_pad >= 0:
            raise ValueError("grid_pad must be nonnegative")
        levels = np.asarray(self.levels, dtype=np.float64)
        if levels.size == 0 or np.any(levels <= 0.0) or np.any(levels >= 1.0):
            raise ValueError("interval levels must lie strictly inside (0, 1)")
        if self.band not in ("HPD", "BCI"):
            raise ValueError("band must be 'HPD' or 'BCI'")
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        if self.sampler not in (BLOCKED, POLYA):
            raise ValueError(f"unknown sampler {self.sampler!r}")
        if not 0.0 < self.eps < 1.0:
            raise ValueError("eps must lie strictly inside (0, 1)")
        if self.nclusters < 1 or (self.sampler == BLOCKED
                                  and self.nclusters < 2):
            raise ValueError("nclusters too small for the chosen sampler")


@dataclass
class PropensityPosterior:
    """Latent-scale propensity draws for the training and target rows."""

    train_latents: np.ndarray    # (K, n)
    target_latents: np.ndarray   # (K, n_target)
    link: str = "probit"


@dataclass
class ArmEstimate:
    """Marginalized potential-outcome estimates for one arm."""

    cdf_draws: np.ndarray                 # (K*L, S)
    cdf_avg: np.ndarray                   # (S,)
    pdf_avg: np.ndarray                   # (S,)
    pdf_bands: Optional[Dict[float, Tuple[np.ndarray, np.ndarray]]]
    quantile_draws: np.ndarray            # (K*L, nprobs)
    quantile_avg: np.ndarray              # (nprobs,)


@dataclass
class QteResult:
    """Everything the pipeline estimated, with the raw CDF draws kept."""

    grid: np.ndarray
    probs: np.ndarray
    arms: Dict[int, ArmEstimate]
    qte_draws: np.ndarray                 # (K*L, nprobs)
    qte_avg: np.ndarray                   # (nprobs,)
    qte_ci: Optional[Dict[float, np.ndarray]]   # level -> (nprobs, 2)
    band: str
    levels: Tuple[float, ...]
    propensity: PropensityPosterior
    timings: Dict[str, float] = field(default_factory=dict)


@dataclass
class QuantileSummary:
    """Quantiles and QTEs re-read from stored CDF draws."""

    probs: np.ndarray
    quantile_avg: Dict[int, np.ndarray]
    qte_avg: np.ndarray
    qte_ci: Optional[Dict[float, np.ndarray]]


# ------------------------------------------------------------- primitives

def bayesian_bootstrap_weights(n: int, rng: RngStream) -> np.ndarray:
    """Uniform-Dirichlet weights over ``n`` rows (each marginally Beta(1, n-1))."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return rng.dirichlet(np.ones(n))


def marginal_cdf(conditional_cdfs, weights) -> np.ndarray:
    """Weighted row-average of conditional CDFs over the target rows."""
    conditional_cdfs = np.asarray(conditional_cdfs, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if conditional_cdfs.ndim != 2 or weights.ndim != 1:
        raise ValueError("expected a rows x gridpoints matrix and a weight vector")
    if conditional_cdfs.shape[0] != weights.size:
        raise ValueError(
            f"{conditional_cdfs.shape[0]} conditional rows but "
            f"{weights.size} weights"
        )
    if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-8:
        raise ValueError("weights must form a probability vector")
    return weights @ conditional_cdfs


def quantile_from_cdf(cdf, grid, p: float) -> float:
    """Smallest grid point whose CDF value reaches ``p``."""
    cdf = np.asarray(cdf, dtype=np.float64)
    grid = np.asarray(grid, dtype=np.float64)
    if cdf.shape != grid.shape or cdf.ndim != 1:
        raise ValueError("cdf and grid must be vectors of equal length")
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie strictly inside (0, 1)")
    idx = int(np.searchsorted(cdf, p, side="left"))
    if idx >= grid.size:
        raise ValueError(
            f"the CDF only reaches {cdf[-1]:.4f} at the grid maximum; widen "
            f"the grid to read the {p:g} quantile"
        )
    return float(grid[idx])


def _quantile_rows(cdf_draws, grid, probs) -> np.ndarray:
    """Per-draw generalized-inverse quantiles: (draws, nprobs)."""
    out = np.empty((cdf_draws.shape[0], probs.size))
    for i in range(cdf_draws.shape[0]):
        row = cdf_draws[i]
        idx = np.searchsorted(row, probs, side="left")
        if np.any(idx >= grid.size):
            bad = probs[idx >= grid.size].max()
            raise ValueError(
                f"the CDF only reaches {row[-1]:.4f} at the grid maximum; "
                f"widen the grid to read the {bad:g} quantile"
            )
        out[i] = grid[idx]
    return out


def _summarize(arms_cdf_draws: Dict[int, np.ndarray], grid, probs, levels,
               band: str):
    """Quantile draws, averages, QTE draws/averages/intervals from CDF draws."""
    probs = np.asarray(probs, dtype=np.float64)
    qdraws = {t: _quantile_rows(arms_cdf_draws[t], grid, probs)
              for t in (0, 1)}
    qavg = {t: qdraws[t].mean(axis=0) for t in (0, 1)}
    qte_draws = qdraws[1] - qdraws[0]
    qte_avg = qte_draws.mean(axis=0)
    if qte_draws.shape[0] >= 20:
        qte_ci = {}
        for level in levels:
            lower, upper = credible_band(qte_draws, alpha=level, kind=band)
            qte_ci[level] = np.column_stack([lower, upper])
    else:
        qte_ci = None
    return qdraws, qavg, qte_draws, qte_avg, qte_ci


def predict_quantiles(result: QteResult, probs) -> QuantileSummary:
    """Re-read quantiles and QTEs at new probabilities from stored draws."""
    probs = np.atleast_1d(np.asarray(probs, dtype=np.float64))
    if np.any(probs <= 0.0) or np.any(probs >= 1.0):
        raise ValueError("probs must lie strictly inside (0, 1)")
    arms = {t: result.arms[t].cdf_draws for t in (0, 1)}
    _, qavg, _, qte_avg, qte_ci = _summarize(
        arms, result.grid, probs, result.levels, result.band
    )
    return QuantileSummary(probs=probs, quantile_avg=qavg, qte_avg=qte_avg,
                           qte_ci=qte_ci)


# ---------------------------------------------------------- outcome jobs

def _conditional_marginals(post, targets, grid, u, sampler, eps, hyper, rng):
    """Marginalized CDF and pdf rows, one per kept mixture draw."""
    l_draws = post.ndpost
    cdf_rows = np.empty((l_draws, grid.size))
    pdf_rows = np.empty((l_draws, grid.size))
    xp = targets[:, None]
    for l in range(l_draws):
        draw = post.draw(l)
        if sampler == BLOCKED:
            acc_cdf = np.zeros(grid.size)
            acc_pdf = np.zeros(grid.size)
            for a in range(0, xp.shape[0], _EVAL_CHUNK):
                block = slice(a, a + _EVAL_CHUNK)
                curves = conditional_curves_blocked(
                    draw, xp[block], grid, kinds=(PDF, CDF)
                )
                acc_cdf += u[block] @ curves[CDF]
                acc_pdf += u[block] @ curves[PDF]
            cdf_rows[l] = acc_cdf
            pdf_rows[l] = acc_pdf
        else:
            curves = conditional_curves_polya(
                draw, xp, grid, kinds=(PDF, CDF), eps=eps,
                hyper=hyper, rng=rng,
            )
            cdf_rows[l] = u @ curves[CDF]
            pdf_rows[l] = u @ curves[PDF]
    return cdf_rows, pdf_rows


def _outcome_job(payload):
    """Fit one (propensity draw, arm) mixture and marginalize its curves."""
    (k, t, seed, spawn_key, z_fit, targets, grid, u, sampler, eps,
     hyper, mcmc_args, nclusters) = payload
    rng = RngStream(seed, spawn_key)
    if hyper is None:
        hyper = default_hypers(z_fit, nclusters=nclusters)
    mcmc = DpmMcmc(*mcmc_args)
    tic = time.monotonic()
    post = run_mcmc(z_fit, hyper, mcmc, sampler, rng)
    fit_seconds = time.monotonic() - tic
    tic = time.monotonic()
    cdf_rows, pdf_rows = _conditional_marginals(
        post, targets, grid, u, sampler, eps, hyper, rng
    )
    eval_seconds = time.monotonic() - tic
    return k, t, cdf_rows, pdf_rows, fit_seconds, eval_seconds


# ------------------------------------------------------------- pipeline

def _validate_inputs(y, x, treatment):
    y = np.asarray(y, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    treatment = np.asarray(treatment)
    if y.ndim != 1:
        raise ValueError("y must be a vector")
    if not np.all(np.isfinite(y)):
        raise ValueError("y must be finite")
    if x.ndim != 2 or x.shape[0] != y.size:
        raise ValueError("x must be a matrix with one row per outcome")
    if treatment.shape != y.shape:
        raise ValueError("treatment must align with y")
    tvals = np.unique(treatment)
    if not np.all(np.isin(tvals, (0, 1))):
        raise ValueError("treatment must be binary 0/1")
    if tvals.size < 2:
        raise ValueError("both treatment arms must be nonempty")
    return y, x, treatment.astype(np.int64)


def estimate_qte(y, x, treatment, config: QteConfig,
                 rng: RngStream) -> QteResult:
    """Run the full propensity-then-mixture pipeline."""
    config.validate()
    y, x, treatment = _validate_inputs(y, x, treatment)
    timings: Dict[str, float] = {}

    bart_mcmc = config.bart_mcmc or BartMcmc(
        nskip=500, ndpost=config.k_draws, keepevery=100
    )
    tic = time.monotonic()
    prop_fit = fit_probit_bart(x, treatment, hyper=config.bart,
                               mcmc=bart_mcmc, rng=rng.substream("propensity"))
    timings["propensity_fit"] = time.monotonic() - tic
    train_latents = prop_fit.train_fits
    if config.rdist == KNOWN:
        xpred = np.asarray(config.xpred, dtype=np.float64)
        if xpred.ndim != 2 or xpred.shape[1] != x.shape[1]:
            raise ValueError("xpred must be a matrix with the same columns as x")
        target_latents = prop_fit.predict(xpred)
    else:
        target_latents = train_latents
    propensity = PropensityPosterior(train_latents=train_latents,
                                     target_latents=target_latents)
    k_draws = train_latents.shape[0]
    n_target = target_latents.shape[1]

    grid = GridSpec.from_data(y, npoints=config.grid_size,
                              pad=config.grid_pad).axes[0]
    dpm_mcmc = config.dpm_mcmc or DpmMcmc(nskip=500, ndpost=config.l_draws,
                                          keepevery=2)
    mcmc_args = (dpm_mcmc.nskip, dpm_mcmc.ndpost, dpm_mcmc.keepevery)
    l_draws = dpm_mcmc.ndpost

    if config.rdist == BOOTSTRAP:
        weights = [bayesian_bootstrap_weights(n_target,
                                              rng.substream("weights", k))
                   for k in range(k_draws)]
    else:
        weights = [np.full(n_target, 1.0 / n_target) for _ in range(k_draws)]

    jobs = []
    for k in range(k_draws):
        for t in (0, 1):
            mask = treatment == t
            z_fit = np.column_stack([y[mask], train_latents[k][mask]])
            job_rng = rng.substream("outcome", k, t)
            jobs.append((
                k, t, job_rng.seed, job_rng.spawn_key, z_fit,
                target_latents[k], grid, weights[k], config.sampler,
                config.eps, config.dpm, mcmc_args, config.nclusters,
            ))

    results = {}
    if config.parallelism > 1:
        with ProcessPoolExecutor(max_workers=config.parallelism) as pool:
            job_results = list(pool.map(_outcome_job, jobs))
    else:
        job_results = [_outcome_job(payload) for payload in jobs]
    for k, t, cdf_rows, pdf_rows, fit_s, eval_s in job_results:
        results[(k, t)] = (cdf_rows, pdf_rows)
        timings[f"outcome_fit_k{k}_t{t}"] = fit_s
        timings[f"outcome_eval_k{k}_t{t}"] = eval_s

    total = k_draws * l_draws
    arms_cdf = {t: np.empty((total, grid.size)) for t in (0, 1)}
    arms_pdf = {t: np.empty((total, grid.size)) for t in (0, 1)}
    for k in range(k_draws):
        rows = slice(k * l_draws, (k + 1) * l_draws)
        for t in (0, 1):
            cdf_rows, pdf_rows = results[(k, t)]
            arms_cdf[t][rows] = cdf_rows
            arms_pdf[t][rows] = pdf_rows

    for t in (0, 1):
        draws = arms_cdf[t]
        if np.any(draws < -1e-10) or np.any(draws > 1.0 + 1e-10):
            raise RuntimeError("a marginalized CDF draw left [0, 1]")
        if np.any(np.diff(draws, axis=1) < -1e-10):
            raise RuntimeError("a marginalized CDF draw is not monotone")

    qdraws, qavg, qte_draws, qte_avg, qte_ci = _summarize(
        arms_cdf, grid, np.asarray(config.probs, dtype=np.float64),
        config.levels, config.band,
    )

    arms = {}
    for t in (0, 1):
        if total >= 20:
            bands = {}
            for level in config.levels:
                lower, upper = credible_band(arms_pdf[t], alpha=level,
                                             kind=config.band)
                bands[level] = (lower, upper)
        else:
            bands = None
        arms[t] = ArmEstimate(
            cdf_draws=arms_cdf[t],
            cdf_avg=arms_cdf[t].mean(axis=0),
            pdf_avg=arms_pdf[t].mean(axis=0),
            pdf_bands=bands,
            quantile_draws=qdraws[t],
            quantile_avg=qavg[t],
        )

    return QteResult(
        grid=grid,
        probs=np.asarray(config.probs, dtype=np.float64),
        arms=arms,
        qte_draws=qte_draws,
        qte_avg=qte_avg,
        qte_ci=qte_ci,
        band=config.band,
        levels=tuple(config.levels),
        propensity=propensity,
        timings=timings,
    )
