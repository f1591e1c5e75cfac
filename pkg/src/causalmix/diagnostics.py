"""Chain diagnostics for the mixture samplers.

Everything here is read-only: a call never touches chain state or random
streams, so diagnostics can be evaluated after the fact on recorded draws.
"""

import numpy as np
from scipy.special import gammaln

from .distributions import log_multivariate_gamma
from .dpm import _cluster_stats, _gd_params, _posterior_psi, _record_loglik


def log_likelihood(state, data) -> float:
    """Data log-likelihood under the state's allocations and components.

    Accepts a live chain state or a recorded draw; only the allocation
    vector and per-cluster parameters are read.
    """
    z = np.asarray(data, dtype=np.float64)
    k = getattr(state, "nactive", None)
    zeta, g, logdet = state.zeta, state.chol_prec, state.logdet
    if k is not None:
        zeta, g, logdet = zeta[:k], g[:k], logdet[:k]
    return _record_loglik(z, state.kappa, zeta, g, logdet)


def _niw_marginal_loglik(kappa, z, m, lam, nu, Psi) -> float:
    """Log marginal likelihood of the data given only the allocations.

    Component means and covariances are integrated out against the
    normal-inverse-Wishart base measure, one conjugate marginal per
    occupied cluster.
    """
    n, d = z.shape
    ncl = int(np.max(kappa)) + 1
    counts, sums, sq = _cluster_stats(z, kappa, ncl)
    occ = counts > 0
    nj = counts[occ].astype(np.float64)
    psi_star = _posterior_psi(counts[occ], sums[occ], sq[occ], m, lam, Psi)
    ell = np.linalg.cholesky(psi_star)
    logdet_star = 2.0 * np.sum(np.log(np.diagonal(ell, axis1=1, axis2=2)), axis=1)
    logdet_psi = float(np.linalg.slogdet(Psi)[1])
    kstar = nj.shape[0]
    out = (
        0.5 * kstar * nu * logdet_psi
        - 0.5 * n * d * np.log(np.pi)
        - kstar * log_multivariate_gamma(nu / 2.0, d)
    )
    for j in range(kstar):
        out += (
            log_multivariate_gamma((nu + nj[j]) / 2.0, d)
            + 0.5 * d * (np.log(lam) - np.log(lam + nj[j]))
            - 0.5 * (nu + nj[j]) * logdet_star[j]
        )
    return float(out)


def _allocation_log_prior(counts, alpha_star, n) -> float:
    """Log prior mass of an allocation under truncated stick-breaking,
    with the weights integrated out and the concentration fixed."""
    ncl = counts.shape[0]
    a, b = _gd_params(counts.astype(np.float64), alpha_star)
    return float(
        (ncl - 1) * np.log(alpha_star)
        + gammaln(b[-1])
        + np.sum(gammaln(a))
        - gammaln(n + alpha_star + 1.0)
        - np.sum(np.log(b[:-1]))
    )


def log_marginal_partition_posterior(kappa, data, hyper, alpha_star) -> float:
    """Unnormalized log posterior of the allocation vector alone.

    Component parameters and weights are integrated out; the base-measure
    values are taken from the hyper object's fixed data-scaled settings
    (not any hierarchical updates) so the series is comparable across
    draws, and the concentration is pinned at ``alpha_star``.  Only
    meaningful for blocked-sampler allocations, whose truncation level
    sets the integrated weight prior.
    """
    z = np.asarray(data, dtype=np.float64)
    n = z.shape[0]
    counts = np.bincount(kappa, minlength=hyper.nclusters)
    m = np.asarray(hyper.m, dtype=np.float64)
    psi = np.asarray(hyper.Psi, dtype=np.float64)
    return _niw_marginal_loglik(kappa, z, m, hyper.lam, hyper.nu, psi) + \
        _allocation_log_prior(counts, alpha_star, n)


def autocorrelation(series, max_lag: int) -> np.ndarray:
    """Sample autocorrelation at lags ``0..max_lag`` (divide-by-n form)."""
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("series must be 1-D")
    if x.shape[0] <= max_lag + 1:
        raise ValueError("series too short for the requested lags")
    centered = x - x.mean()
    denom = float(centered @ centered)
    if denom == 0.0:
        raise ValueError("constant series has no autocorrelation")
    out = np.empty(max_lag + 1)
    out[0] = 1.0
    for h in range(1, max_lag + 1):
        out[h] = float(centered[:-h] @ centered[h:]) / denom
    return out
