"""Grid estimators built on mixture posteriors: joint and conditional
densities, conditional CDFs, and conditional means, with credible bands.

The blocked sampler exposes its mixture weights directly, so its
estimators are finite mixtures over the truncation components.  The
Pólya-urn sampler does not: its joint estimator mixes the occupied
clusters with one fresh draw from the base measure, and its conditional
estimator rebuilds the weights by stick-breaking against the urn until
the undrawn mass falls below a tolerance, reusing per-cluster curves
computed once per posterior draw.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, NamedTuple, Optional, Tuple

import numpy as np
from scipy.special import logsumexp, ndtr

from .distributions import NotPositiveDefiniteError
from .dpm import (
    BLOCKED,
    POLYA,
    DpmDraw,
    DpmPosterior,
    _draw_niw_batch,
    _inv_chol_transpose,
    _log_norm_quad,
    covariances_from_factors,
)
from .rng import RngStream

__all__ = [
    "PDF",
    "CDF",
    "MEAN_REG",
    "GridSpec",
    "ConditionalComponents",
    "GridEvaluation",
    "joint_density_blocked",
    "joint_density_polya",
    "joint_density_average",
    "conditional_components",
    "conditional_curves_blocked",
    "conditional_curves_polya",
    "conditional_estimate",
    "credible_band",
]

_LOG_2PI = np.log(2.0 * np.pi)
_SQRT_2PI = np.sqrt(2.0 * np.pi)

PDF = "pdf"
CDF = "cdf"
MEAN_REG = "meanReg"
_KINDS = (PDF, CDF, MEAN_REG)


# ------------------------------------------------------------------ grids

@dataclass(frozen=True)
class GridSpec:
    """Evaluation grid: one strictly increasing vector per axis."""

    axes: Tuple[np.ndarray, ...]
    origin: str = "user"

    def __post_init__(self):
        axes = tuple(np.asarray(a, dtype=np.float64) for a in self.axes)
        if not axes:
            raise ValueError("grid needs at least one axis")
        for a in axes:
            if a.ndim != 1 or a.size < 2:
                raise ValueError("each grid axis must be a vector of >= 2 points")
            if not np.all(np.isfinite(a)):
                raise ValueError("grid axes must be finite")
            if np.any(np.diff(a) <= 0):
                raise ValueError("grid axes must be strictly increasing")
        object.__setattr__(self, "axes", axes)

    @classmethod
    def from_data(cls, data, npoints: int = 100, pad: float = 0.25) -> "GridSpec":
        """Equispaced axes spanning each column's range widened by ``pad``."""
        data = np.asarray(data, dtype=np.float64)
        if data.ndim == 1:
            data = data[:, None]
        if data.ndim != 2 or data.shape[0] < 2:
            raise ValueError("grid construction needs >= 2 data rows")
        if npoints < 2:
            raise ValueError("npoints must be >= 2")
        lo = data.min(axis=0)
        hi = data.max(axis=0)
        span = hi - lo
        if np.any(span <= 0):
            raise ValueError("grid construction needs non-constant columns")
        axes = tuple(
            np.linspace(lo[j] - pad * span[j], hi[j] + pad * span[j], npoints)
            for j in range(data.shape[1])
        )
        return cls(axes=axes, origin="data")

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(a.size for a in self.axes)

    def points(self) -> np.ndarray:
        """Cartesian product of the axes as rows, first axis slowest."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


# --------------------------------------------------------- joint density

def _mixture_log_density(points, log_weights, zeta, g, logdet):
    d = points.shape[1]
    quad = _log_norm_quad(points, zeta, g)
    log_comp = -0.5 * (quad + logdet[None, :] + d * _LOG_2PI)
    return logsumexp(log_weights[None, :] + log_comp, axis=1)


def joint_density_blocked(draw: DpmDraw, grid: GridSpec) -> np.ndarray:
    """Mixture density over the full truncation for one posterior draw."""
    if draw.sampler != BLOCKED:
        raise ValueError("draw does not come from the blocked sampler")
    pts = grid.points()
    out = _mixture_log_density(pts, draw.log_w, draw.zeta,
                               draw.chol_prec, draw.logdet)
    return np.exp(out).reshape(grid.shape)


def joint_density_polya(draw: DpmDraw, grid: GridSpec, hyper,
                        rng: RngStream) -> np.ndarray:
    """Urn predictive density for one Pólya draw.

    Mixes the occupied clusters, weighted by their occupancies, with a
    single fresh component drawn from the base measure under the draw's
    own concentration and base values.
    """
    if draw.sampler != POLYA:
        raise ValueError("draw does not come from the Pólya-urn sampler")
    n = draw.n
    root = _inv_chol_transpose(draw.Psi)
    zeta_new, g_new, ld_new = _draw_niw_batch(
        draw.m[None, :], draw.lam, hyper.nu, root, rng
    )
    zeta = np.vstack([draw.zeta, zeta_new])
    g = np.concatenate([draw.chol_prec, g_new], axis=0)
    logdet = np.concatenate([draw.logdet, ld_new])
    log_weights = np.log(
        np.concatenate([draw.counts, [draw.alpha]]) / (draw.alpha + n)
    )
    pts = grid.points()
    out = _mixture_log_density(pts, log_weights, zeta, g, logdet)
    return np.exp(out).reshape(grid.shape)


def joint_density_average(post: DpmPosterior, grid: GridSpec,
                          rng: Optional[RngStream] = None) -> np.ndarray:
    """Posterior-mean density surface over every kept draw."""
    if post.sampler == POLYA and rng is None:
        raise ValueError("the Pólya-urn estimator needs an rng for its "
                         "fresh base-measure draws")
    total = np.zeros(grid.shape)
    for l in range(post.ndpost):
        draw = post.draw(l)
        if post.sampler == BLOCKED:
            total += joint_density_blocked(draw, grid)
        else:
            total += joint_density_polya(draw, grid, post.hyper, rng)
    return total / post.ndpost


# ------------------------------------------------- conditional components

class ConditionalComponents(NamedTuple):
    """Per-cluster regression form of a joint normal, response first.

    ``beta0 + x @ beta`` is the conditional mean of the response given the
    covariates, ``sigma2`` the conditional variance, and ``(mean2,
    chol22, logdet22)`` the covariate-margin parameters used for the
    x-dependent weights.
    """

    beta0: np.ndarray        # (K,)
    beta: np.ndarray         # (K, q)
    sigma2: np.ndarray       # (K,)
    mean2: np.ndarray        # (K, q)
    chol22: np.ndarray       # (K, q, q) lower Cholesky of the covariate block
    logdet22: np.ndarray     # (K,)


def conditional_components(draw: DpmDraw) -> ConditionalComponents:
    """Split every component of a draw into response-on-covariates form."""
    zeta = draw.zeta
    omega = draw.omega_cov
    if zeta.shape[1] < 2:
        raise ValueError("conditional estimation needs >= 2 coordinates "
                         "(response first)")
    o11 = omega[:, 0, 0]
    o12 = omega[:, 0, 1:]
    o22 = omega[:, 1:, 1:]
    try:
        chol22 = np.linalg.cholesky(o22)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(
            "covariate block of a component covariance is singular", pivot=0
        ) from exc
    beta = np.linalg.solve(o22, o12[:, :, None])[:, :, 0]
    sigma2 = o11 - np.sum(beta * o12, axis=1)
    if np.any(sigma2 <= 0):
        raise NotPositiveDefiniteError(
            "conditional variance collapsed to zero", pivot=0
        )
    beta0 = zeta[:, 0] - np.sum(beta * zeta[:, 1:], axis=1)
    idx = np.arange(o22.shape[1])
    logdet22 = 2.0 * np.sum(np.log(chol22[:, idx, idx]), axis=1)
    return ConditionalComponents(beta0, beta, sigma2, zeta[:, 1:],
                                 chol22, logdet22)


def _check_kinds(kinds) -> Tuple[str, ...]:
    kinds = tuple(kinds)
    if not kinds:
        raise ValueError("at least one curve kind is required")
    for k in kinds:
        if k not in _KINDS:
            raise ValueError(f"unknown curve kind {k!r}; choose from {_KINDS}")
    return kinds


def _check_xpred(xpred, q):
    xpred = np.atleast_2d(np.asarray(xpred, dtype=np.float64))
    if xpred.shape[1] != q:
        raise ValueError(
            f"xpred has {xpred.shape[1]} columns; components expect {q}"
        )
    return xpred


def _marginal_log_density(comp: ConditionalComponents, xpred) -> np.ndarray:
    """Covariate-margin log densities, one row per xpred point."""
    q = comp.mean2.shape[1]
    diff = xpred[:, None, :] - comp.mean2[None, :, :]       # (mx, K, q)
    sol = np.linalg.solve(comp.chol22, diff.transpose(1, 2, 0))
    quad = np.sum(sol * sol, axis=1).T                      # (mx, K)
    return -0.5 * (quad + comp.logdet22[None, :] + q * _LOG_2PI)


def conditional_curves_blocked(draw: DpmDraw, xpred, ygrid,
                               kinds=(PDF, CDF, MEAN_REG)) -> Dict[str, np.ndarray]:
    """Conditional pdf/CDF/mean curves for one blocked draw.

    Weights are renormalized in log space per prediction point, so no
    row can underflow to an all-zero mixture.
    """
    if draw.sampler != BLOCKED:
        raise ValueError("draw does not come from the blocked sampler")
    kinds = _check_kinds(kinds)
    comp = conditional_components(draw)
    xpred = _check_xpred(xpred, comp.mean2.shape[1])
    ygrid = np.asarray(ygrid, dtype=np.float64)

    log_wx = draw.log_w[None, :] + _marginal_log_density(comp, xpred)
    log_wx = log_wx - logsumexp(log_wx, axis=1, keepdims=True)
    w = np.exp(log_wx)                                       # (mx, K)
    total = w.sum(axis=1)
    assert np.all(np.abs(total - 1.0) <= 1e-10), "weight rows must sum to 1"

    mu = comp.beta0[None, :] + xpred @ comp.beta.T           # (mx, K)
    sd = np.sqrt(comp.sigma2)
    out = {}
    if PDF in kinds or CDF in kinds:
        t = (ygrid[None, None, :] - mu[:, :, None]) / sd[None, :, None]
        if PDF in kinds:
            dens = np.exp(-0.5 * t * t) / (sd[None, :, None] * _SQRT_2PI)
            out[PDF] = np.einsum("mk,mks->ms", w, dens)
        if CDF in kinds:
            out[CDF] = np.einsum("mk,mks->ms", w, ndtr(t))
    if MEAN_REG in kinds:
        out[MEAN_REG] = np.sum(w * mu, axis=1)
    return out


# ------------------------------------------- Pólya-urn conditional curves

def _component_curves(beta0, beta_row, sigma2, mean2, chol22, logdet22,
                      xpred, ygrid, kinds, ref):
    """Scaled covariate-margin weights and curves for one component.

    ``ref`` is a per-x log offset shared by every component of the draw;
    it cancels in the final self-normalized ratio and keeps the linear
    accumulation well scaled.
    """
    q = mean2.shape[0]
    diff = xpred - mean2[None, :]                            # (mx, q)
    sol = np.linalg.solve(chol22, diff.T)                    # (q, mx)
    quad = np.sum(sol * sol, axis=0)
    logmarg = -0.5 * (quad + logdet22 + q * _LOG_2PI)
    marg = np.exp(logmarg - ref)
    mu = beta0 + xpred @ beta_row                            # (mx,)
    sd = np.sqrt(sigma2)
    curves = {}
    if PDF in kinds or CDF in kinds:
        t = (ygrid[None, :] - mu[:, None]) / sd
        if PDF in kinds:
            curves[PDF] = np.exp(-0.5 * t * t) / (sd * _SQRT_2PI)
        if CDF in kinds:
            curves[CDF] = ndtr(t)
    if MEAN_REG in kinds:
        curves[MEAN_REG] = mu
    return marg, curves


def _schur_single(zeta_row, omega_mat):
    o22 = omega_mat[1:, 1:]
    try:
        chol22 = np.linalg.cholesky(o22)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(
            "covariate block of a fresh component is singular", pivot=0
        ) from exc
    beta = np.linalg.solve(o22, omega_mat[0, 1:])
    sigma2 = float(omega_mat[0, 0] - beta @ omega_mat[0, 1:])
    if sigma2 <= 0:
        raise NotPositiveDefiniteError(
            "conditional variance collapsed to zero", pivot=0
        )
    beta0 = float(zeta_row[0] - beta @ zeta_row[1:])
    logdet22 = 2.0 * float(np.sum(np.log(np.diag(chol22))))
    return beta0, beta, sigma2, zeta_row[1:], chol22, logdet22


def conditional_curves_polya(draw: DpmDraw, xpred, ygrid,
                             kinds=(PDF, CDF, MEAN_REG), eps: float = 0.01,
                             *, hyper, rng: RngStream, use_cache: bool = True,
                             max_sticks: int = 100_000) -> Dict[str, np.ndarray]:
    """Conditional curves for one Pólya draw by truncated stick-breaking.

    Sticks are broken against Beta(1, alpha + n) until the undrawn mass
    drops to ``eps``; each stick points at an occupied cluster with
    probability proportional to its occupancy, or at a fresh component
    drawn from the base measure otherwise.  Per-cluster margins and
    curves are evaluated once up front and reused across sticks; pass
    ``use_cache=False`` to re-derive them per stick (same draws, same
    arithmetic -- a reference path for timing and verification).
    """
    if draw.sampler != POLYA:
        raise ValueError("draw does not come from the Pólya-urn sampler")
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie strictly inside (0, 1)")
    kinds = _check_kinds(kinds)
    comp = conditional_components(draw)
    xpred = _check_xpred(xpred, comp.mean2.shape[1])
    ygrid = np.asarray(ygrid, dtype=np.float64)
    mx = xpred.shape[0]
    nstar = comp.beta0.size
    n = draw.n
    alpha = draw.alpha

    # shared per-x scaling: the occupied margins bound the typical scale
    ref = _marginal_log_density(comp, xpred).max(axis=1)

    per_cluster = None
    if use_cache:
        per_cluster = [
            _component_curves(comp.beta0[k], comp.beta[k], comp.sigma2[k],
                              comp.mean2[k], comp.chol22[k], comp.logdet22[k],
                              xpred, ygrid, kinds, ref)
            for k in range(nstar)
        ]

    cum = np.cumsum(np.concatenate([draw.counts, [alpha]])) / (alpha + n)
    psi_root = _inv_chol_transpose(draw.Psi)

    den = np.zeros(mx)
    num = {k: np.zeros((mx, ygrid.size)) if k in (PDF, CDF) else np.zeros(mx)
           for k in kinds}
    remaining = 1.0
    sticks = 0
    while remaining > eps:
        sticks += 1
        if sticks > max_sticks:
            raise RuntimeError(
                f"stick-breaking failed to reach mass {1 - eps:g} within "
                f"{max_sticks} sticks"
            )
        v = float(rng.beta(1.0, alpha + n))
        w_j = v * remaining
        remaining *= 1.0 - v
        pick = int(np.searchsorted(cum, float(rng.uniform()), side="right"))
        if pick < nstar:
            if use_cache:
                marg, curves = per_cluster[pick]
            else:
                marg, curves = _component_curves(
                    comp.beta0[pick], comp.beta[pick], comp.sigma2[pick],
                    comp.mean2[pick], comp.chol22[pick], comp.logdet22[pick],
                    xpred, ygrid, kinds, ref,
                )
        else:
            zeta_new, g_new, _ = _draw_niw_batch(
                draw.m[None, :], draw.lam, hyper.nu, psi_root, rng
            )
            omega_new = covariances_from_factors(g_new)[0]
            marg, curves = _component_curves(
                *_schur_single(zeta_new[0], omega_new), xpred, ygrid, kinds, ref
            )
        wt = w_j * marg
        den += wt
        for kind in kinds:
            if kind == MEAN_REG:
                num[kind] += wt * curves[kind]
            else:
                num[kind] += wt[:, None] * curves[kind]
    if np.any(den == 0.0):
        raise RuntimeError(
            "every stick weight underflowed at some prediction point; "
            "the prediction grid lies too far outside the data"
        )
    out = {}
    for kind in kinds:
        out[kind] = num[kind] / (den if kind == MEAN_REG else den[:, None])
    return out


# --------------------------------------------------------- posterior API

@dataclass
class GridEvaluation:
    """Per-draw grid values with their posterior average and band."""

    kind: str
    values: np.ndarray       # (ndpost, ...) per-draw evaluations
    avg: np.ndarray
    lower: Optional[np.ndarray]
    upper: Optional[np.ndarray]


def conditional_estimate(post: DpmPosterior, xpred, ygrid,
                         kinds=(PDF, CDF, MEAN_REG), eps: float = 0.01,
                         rng: Optional[RngStream] = None,
                         use_cache: bool = True, alpha: float = 0.05,
                         band: Optional[str] = "HPD") -> Dict[str, GridEvaluation]:
    """Average conditional curves over every kept draw, with bands.

    ``band=None`` skips the bands (``lower``/``upper`` come back ``None``),
    which also lifts the 20-draw minimum they need.
    """
    kinds = _check_kinds(kinds)
    if post.sampler == POLYA and rng is None:
        raise ValueError("the Pólya-urn estimator needs an rng for its "
                         "stick-breaking draws")
    stacks = {k: [] for k in kinds}
    for l in range(post.ndpost):
        draw = post.draw(l)
        if post.sampler == BLOCKED:
            curves = conditional_curves_blocked(draw, xpred, ygrid, kinds)
        else:
            curves = conditional_curves_polya(
                draw, xpred, ygrid, kinds, eps,
                hyper=post.hyper, rng=rng, use_cache=use_cache,
            )
        for k in kinds:
            stacks[k].append(curves[k])
    out = {}
    for k in kinds:
        values = np.stack(stacks[k], axis=0)
        if band is None:
            lower = upper = None
        else:
            lower, upper = credible_band(values, alpha=alpha, kind=band)
        out[k] = GridEvaluation(k, values, values.mean(axis=0), lower, upper)
    return out


def credible_band(values, alpha: float = 0.05, kind: str = "HPD"):
    """Pointwise credible band across draws (first axis).

    ``BCI`` takes equal-tail empirical quantiles; ``HPD`` the shortest
    window of sorted draws holding ``ceil((1 - alpha) * ndraws)`` of them
    (Chen-Shao).
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim < 2:
        raise ValueError("values must be draws x gridpoints")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie strictly inside (0, 1)")
    ndraws = values.shape[0]
    if ndraws < 20:
        raise ValueError("credible bands need at least 20 draws")
    tail_shape = values.shape[1:]
    flat = values.reshape(ndraws, -1)
    if kind == "BCI":
        lower, upper = np.quantile(flat, [alpha / 2.0, 1.0 - alpha / 2.0],
                                   axis=0)
    elif kind == "HPD":
        sv = np.sort(flat, axis=0)
        width = int(np.ceil((1.0 - alpha) * ndraws))
        if width >= ndraws:
            lower, upper = sv[0], sv[-1]
        else:
            spans = sv[width - 1:] - sv[: ndraws - width + 1]
            j = np.argmin(spans, axis=0)
            cols = np.arange(flat.shape[1])
            lower = sv[j, cols]
            upper = sv[j + width - 1, cols]
    else:
        raise ValueError(f"unknown band kind {kind!r}; choose 'HPD' or 'BCI'")
    return lower.reshape(tail_shape), upper.reshape(tail_shape)
