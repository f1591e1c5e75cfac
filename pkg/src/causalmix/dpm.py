"""Dirichlet-process mixture of multivariate normals.

Two interchangeable Gibbs samplers drive the same model: a marginal
(Pólya-urn) sampler in the style of Neal's auxiliary-variable algorithm
with one auxiliary component, and a blocked sampler on the truncated
stick-breaking representation after Ishwaran and James.  The base measure
is normal-inverse-Wishart; optional hyperpriors put a normal on its mean,
a gamma on its precision scale, a Wishart on its scale matrix, and a
gamma on the concentration parameter.
"""

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy.special import gammaln

from .distributions import (
    NotPositiveDefiniteError,
    cholesky,
    log_multivariate_gamma,
    sample_gamma_rate,
    sample_generalized_dirichlet,
    sample_wishart,
    symmetrize,
)
from .rng import RngStream

_LOG_2PI = float(np.log(2.0 * np.pi))

POLYA = "polya"
BLOCKED = "blocked"


# --------------------------------------------------------- hyperparameters

@dataclass
class DpmHyper:
    """Base-measure and concentration settings for the mixture.

    ``update_alpha`` switches the concentration parameter between the
    fixed value ``alpha`` and a Gamma(``a0``, ``b0``) prior updated within
    the chain.  ``use_hyperpriors`` switches the base measure between the
    fixed triple (``m``, ``lam``, ``Psi``) and the hierarchical layer
    (``m0``, ``S0``, ``gamma1``, ``gamma2``, ``nu0``, ``Psi0``).  ``nu``
    is shared by both variants and ``nclusters`` only matters for the
    blocked sampler's truncation level.
    """

    update_alpha: bool = True
    use_hyperpriors: bool = True
    nu: float = 4.0
    alpha: float = 10.0
    m: Optional[np.ndarray] = None
    lam: float = 0.5
    Psi: Optional[np.ndarray] = None
    a0: float = 10.0
    b0: float = 1.0
    m0: Optional[np.ndarray] = None
    S0: Optional[np.ndarray] = None
    gamma1: float = 3.0
    gamma2: float = 2.0
    nu0: Optional[float] = None
    Psi0: Optional[np.ndarray] = None
    nclusters: int = 50

    def validate(self, d: int):
        if self.nu < d + 2:
            raise ValueError(f"nu must be at least d+2 = {d + 2}, got {self.nu}")
        if self.nclusters < 2:
            raise ValueError("nclusters must be at least 2")
        if self.update_alpha:
            if self.a0 <= 0 or self.b0 <= 0:
                raise ValueError("a0 and b0 must be positive")
        elif self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.use_hyperpriors:
            if self.gamma1 <= 0 or self.gamma2 <= 0:
                raise ValueError("gamma1 and gamma2 must be positive")
            if self.nu0 is None or self.nu0 < d:
                raise ValueError(f"nu0 must be at least d = {d}")
            for name in ("m0", "S0", "Psi0"):
                if getattr(self, name) is None:
                    raise ValueError(f"{name} is required with hyperpriors")
            _check_spd(self.S0, d, "S0")
            _check_spd(self.Psi0, d, "Psi0")
        else:
            if self.m is None or self.Psi is None:
                raise ValueError("m and Psi are required without hyperpriors")
            if self.lam <= 0:
                raise ValueError("lam must be positive")
            _check_spd(self.Psi, d, "Psi")


def _check_spd(mat, d, name):
    mat = np.asarray(mat)
    if mat.shape != (d, d):
        raise ValueError(f"{name} must be {d}x{d}, got {mat.shape}")
    try:
        cholesky(symmetrize(mat))
    except NotPositiveDefiniteError as err:
        raise ValueError(f"{name} is not positive-definite") from err


def default_hypers(data, use_hyperpriors: bool = True, update_alpha: bool = True,
                   nclusters: int = 50) -> DpmHyper:
    """Data-scaled defaults: diffuse, centered on column means.

    The base-measure mean sits at the column means and the scale matrix at
    ``diag((range/4)^2)``, so one prior standard deviation spans a quarter
    of each observed range.  The hierarchical layer inflates the prior
    variance of the component means by a factor of two.
    """
    z = np.asarray(data, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 2:
        raise ValueError("data must be a 2-D array with at least two rows")
    if not np.all(np.isfinite(z)):
        raise ValueError("data must be finite")
    d = z.shape[1]
    c = z.mean(axis=0)
    ranges = z.max(axis=0) - z.min(axis=0)
    if np.any(ranges <= 0):
        bad = int(np.flatnonzero(ranges <= 0)[0])
        raise ValueError(f"column {bad} is constant; cannot scale the base measure")
    r = np.diag((ranges / 4.0) ** 2)
    nu = float(d + 2)
    return DpmHyper(
        update_alpha=update_alpha,
        use_hyperpriors=use_hyperpriors,
        nu=nu,
        alpha=10.0,
        m=c,
        lam=0.5,
        Psi=r,
        a0=10.0,
        b0=1.0,
        m0=c.copy(),
        S0=r.copy(),
        gamma1=3.0,
        gamma2=2.0,
        nu0=nu,
        Psi0=r / nu,
        nclusters=nclusters,
    )


@dataclass
class DpmMcmc:
    """Chain length bookkeeping: burn-in, kept draws, thinning stride."""

    nskip: int = 500
    ndpost: int = 500
    keepevery: int = 1

    def validate(self):
        if self.nskip < 0 or self.ndpost < 1 or self.keepevery < 1:
            raise ValueError("need nskip >= 0, ndpost >= 1, keepevery >= 1")


# ----------------------------------------------------- conjugate machinery

def niw_posterior(m, lam, nu, Psi, z):
    """Normal-inverse-Wishart posterior update for one cluster's rows.

    Returns ``(m*, lam*, nu*, Psi*)``; with no rows the prior comes back
    unchanged.  ``Psi*`` picks up the centered scatter of the rows plus
    the rank-one term from the shrinkage of the cluster mean.
    """
    m = np.asarray(m, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if z.size == 0:
        return m.copy(), float(lam), float(nu), np.asarray(Psi, dtype=np.float64).copy()
    if z.ndim != 2 or z.shape[1] != m.shape[0]:
        raise ValueError("cluster data must be rows of the same dimension as m")
    nk = z.shape[0]
    zbar = z.mean(axis=0)
    centered = z - zbar
    scatter = centered.T @ centered
    diff = zbar - m
    m_star = (lam * m + nk * zbar) / (lam + nk)
    lam_star = lam + nk
    nu_star = nu + nk
    psi_star = Psi + scatter + (lam * nk / (lam + nk)) * np.outer(diff, diff)
    return m_star, lam_star, nu_star, symmetrize(psi_star)


def multivariate_t_logpdf(z, df, loc, scale):
    """Log density of a multivariate Student-t at one point or row-stack."""
    loc = np.asarray(loc, dtype=np.float64)
    scale = np.asarray(scale, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    d = loc.shape[0]
    ell = cholesky(symmetrize(scale))
    half_logdet = float(np.sum(np.log(np.diag(ell))))
    single = z.ndim == 1
    rows = z[None, :] if single else z
    sol = np.linalg.solve(ell, (rows - loc).T)
    quad = np.sum(sol ** 2, axis=0)
    out = (
        gammaln((df + d) / 2.0)
        - gammaln(df / 2.0)
        - 0.5 * d * np.log(df * np.pi)
        - half_logdet
        - 0.5 * (df + d) * np.log1p(quad / df)
    )
    return float(out[0]) if single else out


def niw_predictive_logpdf(m, lam, nu, Psi, z):
    """Marginal (Student-t) log density of new rows under an NIW prior."""
    m = np.asarray(m, dtype=np.float64)
    d = m.shape[0]
    df = nu - d + 1
    if df <= 0:
        raise ValueError("predictive needs nu > d - 1")
    scale = np.asarray(Psi, dtype=np.float64) * (lam + 1.0) / (lam * df)
    return multivariate_t_logpdf(z, df, m, scale)


def _cluster_stats(z, kappa, ncl):
    """Counts, per-cluster sums and raw second moments via bincount."""
    n, d = z.shape
    counts = np.bincount(kappa, minlength=ncl)
    sums = np.empty((ncl, d))
    for j in range(d):
        sums[:, j] = np.bincount(kappa, weights=z[:, j], minlength=ncl)
    sq = np.empty((ncl, d, d))
    for a in range(d):
        for b in range(a, d):
            col = np.bincount(kappa, weights=z[:, a] * z[:, b], minlength=ncl)
            sq[:, a, b] = col
            sq[:, b, a] = col
    return counts, sums, sq


def _posterior_psi(counts, sums, sq, m, lam, Psi):
    """Batched ``Psi*`` for the clusters indexed by the rows of the stats."""
    nk = counts[:, None]
    zbar = sums / nk
    scatter = sq - nk[:, :, None] * zbar[:, :, None] * zbar[:, None, :]
    diff = zbar - m
    cross = (lam * counts / (lam + counts))[:, None, None] * (
        diff[:, :, None] * diff[:, None, :]
    )
    return symmetrize(Psi[None, :, :] + scatter + cross)


def _wishart_factor_batch(df, dim, count, rng):
    """Bartlett factors: lower-triangular ``A`` with ``A A^T ~ Wishart(df, I)``."""
    df = np.broadcast_to(np.asarray(df, dtype=np.float64), (count,))
    shape = df[:, None] - np.arange(dim)[None, :]
    chi = rng.chisquare(shape)
    a = np.zeros((count, dim, dim))
    idx = np.arange(dim)
    a[:, idx, idx] = np.sqrt(chi)
    if dim > 1:
        tr, tc = np.tril_indices(dim, -1)
        a[:, tr, tc] = rng.standard_normal((count, tr.size))
    return a


def _draw_niw_batch(mean, lam, nu, root, rng):
    """Batched draws from normal-inverse-Wishart measures.

    ``root`` holds per-cluster triangular matrices with
    ``root @ root.T = Psi^{-1}``.  Returns the component means, the factors
    ``G`` with ``G G^T`` equal to the precision of each covariance draw,
    and the log-determinants of the covariance draws.  Rows whose Bartlett
    diagonal degenerates are redrawn once before giving up.
    """
    mean = np.atleast_2d(mean)
    count, dim = mean.shape
    lam = np.broadcast_to(np.asarray(lam, dtype=np.float64), (count,))
    root = np.broadcast_to(root, (count, dim, dim))
    a = _wishart_factor_batch(nu, dim, count, rng)
    idx = np.arange(dim)
    diag = a[:, idx, idx]
    bad = ~np.all((diag > 0) & np.isfinite(diag), axis=1)
    if np.any(bad):
        redo = _wishart_factor_batch(
            np.broadcast_to(np.asarray(nu, dtype=np.float64), (count,))[bad],
            dim, int(bad.sum()), rng,
        )
        a[bad] = redo
        diag = a[:, idx, idx]
        still = ~np.all((diag > 0) & np.isfinite(diag), axis=1)
        if np.any(still):
            raise NotPositiveDefiniteError(
                "covariance draw degenerate after one redraw", pivot=0
            )
    g = root @ a
    logdet = -2.0 * (
        np.sum(np.log(np.abs(root[:, idx, idx])), axis=1)
        + np.sum(np.log(diag), axis=1)
    )
    eps = rng.standard_normal((count, dim))
    shift = np.linalg.solve(np.swapaxes(g, 1, 2), eps[:, :, None])[:, :, 0]
    zeta = mean + shift / np.sqrt(lam)[:, None]
    return zeta, g, logdet


def _inv_chol_transpose(mats):
    """Upper-triangular ``root`` with ``root @ root.T`` inverting each matrix."""
    ell = np.linalg.cholesky(mats)
    return np.swapaxes(np.linalg.inv(ell), -1, -2)


def _log_norm_quad(z, zeta, g):
    """Squared Mahalanobis transforms ``||G^T (z - zeta)||^2``, batched."""
    if z.ndim == 1:
        diff = zeta - z
        t = np.einsum("kd,kde->ke", diff, g)
    else:
        diff = z[:, None, :] - zeta[None, :, :]
        t = np.einsum("nkd,kde->nke", diff, g)
    return np.sum(t * t, axis=-1)


def covariances_from_factors(g):
    """Explicit covariance matrices from the precision factors ``G``."""
    h = np.linalg.inv(g)
    return np.einsum("kji,kjl->kil", h, h)


# ------------------------------------------------------------------ state

class DpmState:
    """Mutable chain state shared by both samplers.

    The Pólya-urn variant keeps parameters for exactly the occupied
    clusters (labels compacted to ``0..K*-1``) inside capacity-``n+1``
    buffers; the blocked variant keeps all ``nclusters`` components plus
    the stick-breaking log-weights.
    """

    def __init__(self, sampler, kappa, zeta, chol_prec, logdet, counts,
                 alpha, m, lam, Psi, log_w=None):
        self.sampler = sampler
        self.kappa = kappa
        self.zeta = zeta
        self.chol_prec = chol_prec
        self.logdet = logdet
        self.counts = counts
        self.alpha = float(alpha)
        self.m = np.asarray(m, dtype=np.float64)
        self.lam = float(lam)
        self.Psi = np.asarray(Psi, dtype=np.float64)
        self.chol_Psi_inv = _inv_chol_transpose(symmetrize(self.Psi))
        self.log_w = log_w
        self.nactive = zeta.shape[0] if sampler == BLOCKED else int(
            np.max(kappa) + 1
        )

    @property
    def n(self) -> int:
        return self.kappa.shape[0]

    @property
    def d(self) -> int:
        return self.zeta.shape[1]

    @property
    def n_occupied(self) -> int:
        if self.sampler == POLYA:
            return self.nactive
        return int(np.count_nonzero(self.counts))

    def refresh_psi_factor(self):
        self.chol_Psi_inv = _inv_chol_transpose(symmetrize(self.Psi))

    def to_dict(self) -> dict:
        k = self.nactive
        out = {
            "sampler": self.sampler,
            "kappa": self.kappa.tolist(),
            "zeta": self.zeta[:k].tolist(),
            "chol_prec": self.chol_prec[:k].tolist(),
            "logdet": self.logdet[:k].tolist(),
            "counts": self.counts[:k].tolist(),
            "alpha": self.alpha,
            "m": self.m.tolist(),
            "lam": self.lam,
            "Psi": self.Psi.tolist(),
        }
        if self.log_w is not None:
            out["log_w"] = self.log_w.tolist()
        return out

    @classmethod
    def from_dict(cls, payload: dict) -> "DpmState":
        sampler = payload["sampler"]
        kappa = np.asarray(payload["kappa"], dtype=np.int64)
        zeta = np.asarray(payload["zeta"], dtype=np.float64)
        chol_prec = np.asarray(payload["chol_prec"], dtype=np.float64)
        logdet = np.asarray(payload["logdet"], dtype=np.float64)
        counts = np.asarray(payload["counts"], dtype=np.int64)
        log_w = payload.get("log_w")
        if log_w is not None:
            log_w = np.asarray(log_w, dtype=np.float64)
        if sampler == POLYA:
            n, d = kappa.shape[0], zeta.shape[1]
            k = zeta.shape[0]
            full = lambda arr, shape: np.concatenate(
                [arr, np.zeros((n + 1 - k,) + shape)], axis=0
            )
            zeta = full(zeta, (d,))
            chol_prec = full(chol_prec, (d, d))
            logdet = np.concatenate([logdet, np.zeros(n + 1 - k)])
            counts = np.concatenate([counts, np.zeros(n + 1 - k, dtype=np.int64)])
        return cls(sampler, kappa, zeta, chol_prec, logdet, counts,
                   payload["alpha"], payload["m"], payload["lam"],
                   payload["Psi"], log_w=log_w)


def _initial_base_values(hyper: DpmHyper, d: int):
    if hyper.use_hyperpriors:
        m = np.asarray(hyper.m0, dtype=np.float64).copy()
        lam = 1.0  # calibration center of the Gamma(gamma1, gamma2) layer
        psi = hyper.nu0 * np.asarray(hyper.Psi0, dtype=np.float64)
    else:
        m = np.asarray(hyper.m, dtype=np.float64).copy()
        lam = hyper.lam
        psi = np.asarray(hyper.Psi, dtype=np.float64).copy()
    alpha = hyper.a0 / hyper.b0 if hyper.update_alpha else hyper.alpha
    return alpha, m, lam, symmetrize(psi)


def init_state(data, hyper: DpmHyper, sampler: str, rng: RngStream) -> DpmState:
    """Single-cluster start with component parameters off the base measure."""
    z = np.asarray(data, dtype=np.float64)
    n, d = z.shape
    alpha, m, lam, psi = _initial_base_values(hyper, d)
    root = _inv_chol_transpose(psi)
    if sampler == BLOCKED:
        ncl = hyper.nclusters
        zeta, g, logdet = _draw_niw_batch(
            np.broadcast_to(m, (ncl, d)), lam, hyper.nu, root, rng
        )
        kappa = np.zeros(n, dtype=np.int64)
        counts = np.bincount(kappa, minlength=ncl)
        log_w = np.full(ncl, -np.log(ncl))
        return DpmState(BLOCKED, kappa, zeta, g, logdet, counts,
                        alpha, m, lam, psi, log_w=log_w)
    if sampler != POLYA:
        raise ValueError(f"unknown sampler {sampler!r}")
    zeta = np.zeros((n + 1, d))
    g = np.zeros((n + 1, d, d))
    logdet = np.zeros(n + 1)
    z0, g0, ld0 = _draw_niw_batch(m[None, :], lam, hyper.nu, root, rng)
    zeta[0], g[0], logdet[0] = z0[0], g0[0], ld0[0]
    counts = np.zeros(n + 1, dtype=np.int64)
    counts[0] = n
    kappa = np.zeros(n, dtype=np.int64)
    return DpmState(POLYA, kappa, zeta, g, logdet, counts, alpha, m, lam, psi)


# --------------------------------------------------------- full conditionals

def _gd_params(counts, alpha):
    """Stick-breaking Beta parameters given allocation counts."""
    rev = np.cumsum(counts[::-1])[::-1]
    a = counts[:-1] + 1.0
    b = rev[1:] + alpha
    return a, b


def _m_full_conditional(zeta, prec, lam, m0, S0_inv):
    """Gaussian full conditional of the base mean: returns (mean, precision)."""
    prec_sum = prec.sum(axis=0)
    prec_z = np.einsum("kde,ke->d", prec, zeta)
    post_prec = lam * prec_sum + S0_inv
    mean = np.linalg.solve(post_prec, lam * prec_z + S0_inv @ m0)
    return mean, symmetrize(post_prec)


def _lambda_full_conditional(zeta, prec, m, gamma1, gamma2, d):
    """Gamma full conditional of the base scale: returns (shape, rate)."""
    kprime = zeta.shape[0]
    diff = zeta - m
    quad = np.einsum("kd,kde,ke->", diff, prec, diff)
    return gamma1 + 0.5 * d * kprime, gamma2 + 0.5 * quad


def _psi_full_conditional(prec, nu, nu0, Psi0_inv):
    """Wishart full conditional of the base scale matrix: (df, scale)."""
    kprime = prec.shape[0]
    df = nu * kprime + nu0
    scale = np.linalg.inv(symmetrize(Psi0_inv + prec.sum(axis=0)))
    return df, symmetrize(scale)


def update_base_hypers(state: DpmState, hyper: DpmHyper, rng: RngStream):
    """Refresh (m, lam, Psi) from their full conditionals, in that order.

    The conditioning set is the occupied components for the Pólya-urn
    sampler and every truncation component for the blocked sampler; the
    later updates see the earlier ones' new values.
    """
    k = state.nactive
    g = state.chol_prec[:k]
    zeta = state.zeta[:k]
    prec = g @ np.swapaxes(g, 1, 2)
    d = state.d
    s0_inv = np.linalg.inv(symmetrize(np.asarray(hyper.S0, dtype=np.float64)))
    mean, post_prec = _m_full_conditional(zeta, prec, state.lam, hyper.m0, s0_inv)
    ell = np.linalg.cholesky(post_prec)
    state.m = mean + np.linalg.solve(ell.T, rng.standard_normal(d))
    shape, rate = _lambda_full_conditional(zeta, prec, state.m,
                                           hyper.gamma1, hyper.gamma2, d)
    state.lam = float(sample_gamma_rate(shape, rate, rng))
    psi0_inv = np.linalg.inv(symmetrize(np.asarray(hyper.Psi0, dtype=np.float64)))
    df, scale = _psi_full_conditional(prec, hyper.nu, hyper.nu0, psi0_inv)
    state.Psi = symmetrize(sample_wishart(df, scale, rng))
    state.refresh_psi_factor()


def _escobar_west_weight(a0, k, n, rate):
    odds = (a0 + k - 1.0) / (n * rate)
    return odds / (1.0 + odds)


def update_alpha_escobar_west(state: DpmState, a0, b0, rng: RngStream):
    """Two-step concentration update via the beta-augmented gamma mixture."""
    n = state.n
    k = state.n_occupied
    eta = float(rng.beta(state.alpha + 1.0, n))
    rate = b0 - np.log(eta)
    pi = _escobar_west_weight(a0, k, n, rate)
    shape = a0 + k if rng.uniform() < pi else a0 + k - 1.0
    state.alpha = float(sample_gamma_rate(shape, rate, rng))


def _redraw_occupied(state: DpmState, z, hyper: DpmHyper, rng: RngStream,
                     ncl: int):
    """Posterior component draws for occupied clusters, prior for the rest.

    Returns stacked (zeta, G, logdet) over ``ncl`` clusters in label order.
    """
    counts, sums, sq = _cluster_stats(z, state.kappa, ncl)
    d = z.shape[1]
    occ = counts > 0
    mean = np.broadcast_to(state.m, (ncl, d)).copy()
    lam = np.full(ncl, state.lam)
    nu = np.full(ncl, hyper.nu)
    root = np.broadcast_to(state.chol_Psi_inv, (ncl, d, d)).copy()
    if np.any(occ):
        nk = counts[occ]
        psi_star = _posterior_psi(nk, sums[occ], sq[occ], state.m, state.lam,
                                  state.Psi)
        try:
            root[occ] = _inv_chol_transpose(psi_star)
        except np.linalg.LinAlgError as err:
            raise NotPositiveDefiniteError(
                "posterior scale matrix lost positive-definiteness", pivot=0
            ) from err
        mean[occ] = (state.lam * state.m + sums[occ]) / (state.lam + nk)[:, None]
        lam[occ] = state.lam + nk
        nu[occ] = hyper.nu + nk
    zeta, g, logdet = _draw_niw_batch(mean, lam, nu, root, rng)
    return counts, zeta, g, logdet


def blocked_step(state: DpmState, data, hyper: DpmHyper, rng: RngStream) -> DpmState:
    """One sweep of the truncated-model Gibbs sampler.

    Order: component parameters, stick-breaking weights, allocations,
    concentration, then base-measure hyperparameters (when enabled).
    """
    z = np.asarray(data, dtype=np.float64)
    ncl = state.zeta.shape[0]
    counts, zeta, g, logdet = _redraw_occupied(state, z, hyper, rng, ncl)
    state.zeta, state.chol_prec, state.logdet = zeta, g, logdet

    a, b = _gd_params(counts.astype(np.float64), state.alpha)
    _, _, log_w = sample_generalized_dirichlet(a, b, rng, return_sticks=True)
    state.log_w = log_w

    quad = _log_norm_quad(z, zeta, g)
    logp = log_w[None, :] - 0.5 * (quad + logdet[None, :])
    gum = rng.gumbel(size=logp.shape)
    state.kappa = np.argmax(logp + gum, axis=1).astype(np.int64)
    state.counts = np.bincount(state.kappa, minlength=ncl)

    if hyper.update_alpha:
        state.alpha = float(sample_gamma_rate(
            hyper.a0 + ncl - 1.0, hyper.b0 - log_w[-1], rng
        ))
    if hyper.use_hyperpriors:
        update_base_hypers(state, hyper, rng)
    return state


def polya_step(state: DpmState, data, hyper: DpmHyper, rng: RngStream) -> DpmState:
    """One sweep of the marginal sampler with one auxiliary component.

    Each observation leaves its cluster, faces the occupied components
    weighted by their remaining sizes plus one auxiliary component
    weighted by the concentration parameter, and is reallocated by a
    Gumbel-max draw.  A departing singleton donates its own parameters to
    the auxiliary slot; otherwise the auxiliary is a fresh base-measure
    draw.  Occupied components and hyperparameters are then refreshed.
    """
    z = np.asarray(data, dtype=np.float64)
    n, d = z.shape
    zeta, g, logdet, counts = state.zeta, state.chol_prec, state.logdet, state.counts
    kappa = state.kappa
    k = state.nactive
    # One pooled batch of auxiliary candidates; entry i is consumed only if
    # observation i needs a fresh auxiliary, so each use is independent.
    pool_zeta, pool_g, pool_ld = _draw_niw_batch(
        np.broadcast_to(state.m, (n, d)), state.lam, hyper.nu,
        state.chol_Psi_inv, rng,
    )
    log_alpha = np.log(state.alpha)
    for i in range(n):
        old = kappa[i]
        counts[old] -= 1
        if counts[old] == 0:
            # departing singleton: recycle its parameters as the auxiliary
            aux_zeta = zeta[old].copy()
            aux_g = g[old].copy()
            aux_ld = logdet[old]
            last = k - 1
            if old != last:
                zeta[old] = zeta[last]
                g[old] = g[last]
                logdet[old] = logdet[last]
                counts[old] = counts[last]
                kappa[kappa == last] = old
            k = last
            zeta[k], g[k], logdet[k] = aux_zeta, aux_g, aux_ld
        else:
            zeta[k], g[k], logdet[k] = pool_zeta[i], pool_g[i], pool_ld[i]
        quad = _log_norm_quad(z[i], zeta[: k + 1], g[: k + 1])
        logw = -0.5 * (quad + logdet[: k + 1])
        logw[:k] += np.log(counts[:k])
        logw[k] += log_alpha
        choice = int(np.argmax(logw + rng.gumbel(size=k + 1)))
        kappa[i] = choice
        if choice == k:
            counts[k] = 1
            k += 1
        else:
            counts[choice] += 1
    state.nactive = k

    new_counts, zeta_new, g_new, ld_new = _redraw_occupied(state, z, hyper, rng, k)
    state.zeta[:k], state.chol_prec[:k], state.logdet[:k] = zeta_new, g_new, ld_new
    state.counts[:k] = new_counts
    state.counts[k:] = 0

    if hyper.update_alpha:
        update_alpha_escobar_west(state, hyper.a0, hyper.b0, rng)
    if hyper.use_hyperpriors:
        update_base_hypers(state, hyper, rng)
    return state


# -------------------------------------------------------------- posterior

class DpmDraw(NamedTuple):
    """One kept draw, with enough context to evaluate densities."""

    sampler: str
    n: int
    zeta: np.ndarray
    omega_cov: np.ndarray
    chol_prec: np.ndarray
    logdet: np.ndarray
    counts: np.ndarray
    log_w: Optional[np.ndarray]
    kappa: np.ndarray
    alpha: float
    m: np.ndarray
    lam: float
    Psi: np.ndarray


@dataclass
class DpmPosterior:
    """Kept draws from one chain plus diagnostics and the final state."""

    sampler: str
    n: int
    d: int
    hyper: DpmHyper
    zeta: list
    omega_cov: list
    chol_prec: list
    logdet: list
    counts: list
    log_w: Optional[list]
    kappa: list
    alpha: np.ndarray
    m: np.ndarray
    lam: np.ndarray
    Psi: np.ndarray
    loglik: Optional[np.ndarray]
    logmpp: Optional[np.ndarray]
    final_state: DpmState

    @property
    def ndpost(self) -> int:
        return len(self.zeta)

    def draw(self, l: int) -> DpmDraw:
        return DpmDraw(
            sampler=self.sampler,
            n=self.n,
            zeta=self.zeta[l],
            omega_cov=self.omega_cov[l],
            chol_prec=self.chol_prec[l],
            logdet=self.logdet[l],
            counts=self.counts[l],
            log_w=None if self.log_w is None else self.log_w[l],
            kappa=self.kappa[l],
            alpha=float(self.alpha[l]),
            m=self.m[l],
            lam=float(self.lam[l]),
            Psi=self.Psi[l],
        )

    def n_clusters(self) -> np.ndarray:
        """Occupied-cluster count per kept draw."""
        return np.array([int(np.count_nonzero(c)) for c in self.counts])


def _record_loglik(z, kappa, zeta, g, logdet):
    diff = z - zeta[kappa]
    t = np.einsum("nd,nde->ne", diff, g[kappa])
    quad = np.sum(t * t, axis=1)
    n, d = z.shape
    return float(-0.5 * np.sum(quad + logdet[kappa]) - 0.5 * n * d * _LOG_2PI)


def run_mcmc(data, hyper: DpmHyper, mcmc: DpmMcmc, sampler: str,
             rng: RngStream, diag: bool = False) -> DpmPosterior:
    """Run one chain and collect every ``keepevery``-th post-burn-in draw."""
    z = np.ascontiguousarray(data, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 2:
        raise ValueError("data must be a 2-D array with at least two rows")
    if not np.all(np.isfinite(z)):
        raise ValueError("data must be finite")
    n, d = z.shape
    hyper.validate(d)
    mcmc.validate()
    if sampler not in (POLYA, BLOCKED):
        raise ValueError(f"unknown sampler {sampler!r}")
    step = blocked_step if sampler == BLOCKED else polya_step

    # diagnostics of the marginal partition posterior use the fixed
    # data-scaled base values, so the series is comparable across draws
    from .diagnostics import log_marginal_partition_posterior

    state = init_state(z, hyper, sampler, rng)
    zeta_list, omega_list, prec_list, logdet_list = [], [], [], []
    counts_list, kappa_list = [], []
    log_w_list = [] if sampler == BLOCKED else None
    alpha_tr, lam_tr = [], []
    m_tr, psi_tr = [], []
    loglik_tr = [] if diag else None
    logmpp_tr = [] if (diag and sampler == BLOCKED) else None
    alpha_running = 0.0

    total = mcmc.nskip + mcmc.ndpost * mcmc.keepevery
    for it in range(total):
        try:
            step(state, z, hyper, rng)
        except Exception as exc:
            raise RuntimeError(
                f"{sampler} sampler failed during sweep {it + 1}/{total}: "
                f"{exc}"
            ) from exc
        if it < mcmc.nskip or (it - mcmc.nskip + 1) % mcmc.keepevery != 0:
            continue
        k = state.nactive
        zeta_k = state.zeta[:k].copy()
        g_k = state.chol_prec[:k].copy()
        ld_k = state.logdet[:k].copy()
        zeta_list.append(zeta_k)
        prec_list.append(g_k)
        logdet_list.append(ld_k)
        omega_list.append(covariances_from_factors(g_k))
        counts_list.append(state.counts[:k].copy())
        kappa_list.append(state.kappa.astype(np.int32))
        if log_w_list is not None:
            log_w_list.append(state.log_w.copy())
        alpha_tr.append(state.alpha)
        lam_tr.append(state.lam)
        m_tr.append(state.m.copy())
        psi_tr.append(state.Psi.copy())
        if diag:
            loglik_tr.append(_record_loglik(z, state.kappa, zeta_k, g_k, ld_k))
            if logmpp_tr is not None:
                alpha_running += state.alpha
                alpha_star = alpha_running / len(alpha_tr)
                logmpp_tr.append(log_marginal_partition_posterior(
                    state.kappa, z, hyper, alpha_star
                ))

    return DpmPosterior(
        sampler=sampler,
        n=n,
        d=d,
        hyper=hyper,
        zeta=zeta_list,
        omega_cov=omega_list,
        chol_prec=prec_list,
        logdet=logdet_list,
        counts=counts_list,
        log_w=log_w_list,
        kappa=kappa_list,
        alpha=np.array(alpha_tr),
        m=np.array(m_tr),
        lam=np.array(lam_tr),
        Psi=np.array(psi_tr),
        loglik=None if loglik_tr is None else np.array(loglik_tr),
        logmpp=None if logmpp_tr is None else np.array(logmpp_tr),
        final_state=state,
    )
