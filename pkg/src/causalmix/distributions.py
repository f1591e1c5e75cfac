"""Dense linear-algebra and sampling primitives shared by the samplers.

Log-space discipline: density work returns log values, and categorical
selection goes through the Gumbel-max trick on log weights, so nothing
here exponentiates an unnormalized weight vector.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import lapack, solve_triangular
from scipy.special import multigammaln, ndtr, ndtri

__all__ = [
    "NotPositiveDefiniteError",
    "symmetrize",
    "check_symmetric",
    "cholesky",
    "mvnormal_logpdf",
    "log_multivariate_gamma",
    "sample_wishart",
    "sample_inverse_wishart",
    "sample_gamma_rate",
    "sample_generalized_dirichlet",
    "sample_truncated_normal",
    "gumbel_max_categorical",
]

_LOG_2PI = np.log(2.0 * np.pi)

# Standardized truncation bound beyond which inverse-CDF sampling gives way
# to exponential rejection (tail mass under ~3e-5; ndtri still fine there,
# but the rejection sampler stays exact arbitrarily far out).
_TAIL_BOUND = 4.0


class NotPositiveDefiniteError(ValueError):
    """A matrix required to be positive definite is not.

    Attributes
    ----------
    pivot : int
        1-based index of the leading minor where the factorization failed,
        when known; 0 otherwise.
    """

    def __init__(self, message: str, pivot: int = 0):
        super().__init__(message)
        self.pivot = int(pivot)


def symmetrize(a: np.ndarray) -> np.ndarray:
    """Return ``(a + a.T) / 2`` (batched: transposes the last two axes)."""
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def check_symmetric(a: np.ndarray, tol: float = 1e-8) -> None:
    """Raise ``ValueError`` unless ``a`` is square and symmetric within ``tol``."""
    a = np.asarray(a)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.abs(a - np.swapaxes(a, -1, -2)) <= tol):
        raise ValueError("matrix is not symmetric within tolerance")


def cholesky(a: np.ndarray) -> np.ndarray:
    """Lower-triangular Cholesky factor of a symmetric positive-definite matrix.

    Raises
    ------
    NotPositiveDefiniteError
        If the factorization breaks down; ``pivot`` holds the 1-based index
        of the offending leading minor.
    """
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    c, info = lapack.dpotrf(a, lower=1, clean=1, overwrite_a=0)
    if info > 0:
        raise NotPositiveDefiniteError(
            f"matrix is not positive definite (leading minor {info})", pivot=info
        )
    if info < 0:
        raise ValueError(f"illegal value in argument {-info} of dpotrf")
    return c


def mvnormal_logpdf(z: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Log density of ``Normal(mean, cov)`` at one point or a row-stack of points.

    Parameters
    ----------
    z : (d,) or (n, d) array
    mean : (d,) array
    cov : (d, d) symmetric positive-definite array

    Returns
    -------
    float or (n,) array
    """
    z = np.asarray(z, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    single = z.ndim == 1
    pts = np.atleast_2d(z)
    d = mean.shape[0]
    if pts.shape[1] != d:
        raise ValueError(f"points have dimension {pts.shape[1]}, mean has {d}")
    chol = cholesky(cov)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    w = solve_triangular(chol, (pts - mean).T, lower=True, check_finite=False)
    quad = np.sum(w * w, axis=0)
    out = -0.5 * (d * _LOG_2PI + logdet + quad)
    return out[0] if single else out


def log_multivariate_gamma(a: float, d: int) -> float:
    """``log`` of the d-dimensional multivariate gamma function at ``a``.

    Requires ``a > (d - 1) / 2``.
    """
    if d < 1:
        raise ValueError("dimension must be >= 1")
    if not a > (d - 1) / 2.0:
        raise ValueError(f"argument {a} not above (d-1)/2 = {(d - 1) / 2.0}")
    return float(multigammaln(a, d))


def _bartlett_factor(df: float, d: int, rng) -> np.ndarray:
    """Lower-triangular Bartlett factor A with A @ A.T ~ Wishart(df, I)."""
    diag = np.sqrt(rng.chisquare(df - np.arange(d)))
    a = np.zeros((d, d))
    a[np.diag_indices(d)] = diag
    if d > 1:
        a[np.tril_indices(d, -1)] = rng.standard_normal(d * (d - 1) // 2)
    return a


def sample_wishart(df: float, scale: np.ndarray, rng) -> np.ndarray:
    """One draw from ``Wishart(df, scale)`` with mean ``df * scale``.

    ``df`` must exceed ``d - 1``; ``scale`` must be symmetric positive
    definite.  Uses the Bartlett decomposition; the result is symmetrized.
    """
    scale = np.asarray(scale, dtype=np.float64)
    d = scale.shape[0]
    if not df > d - 1:
        raise ValueError(f"df {df} must exceed d - 1 = {d - 1}")
    check_symmetric(scale)
    ell = cholesky(scale)
    a = _bartlett_factor(df, d, rng)
    f = ell @ a
    return symmetrize(f @ f.T)


def sample_inverse_wishart(df: float, scale: np.ndarray, rng) -> np.ndarray:
    """One draw from the inverse-Wishart with mean ``scale / (df - d - 1)``.

    Drawn as the Cholesky-based inverse of a ``Wishart(df, scale^{-1})``
    variate: with F the lower-triangular factor of that Wishart draw, the
    result is ``(F^{-1})' F^{-1}``, formed by a triangular solve rather than
    a general inverse.  The result is symmetrized.
    """
    scale = np.asarray(scale, dtype=np.float64)
    d = scale.shape[0]
    if not df > d - 1:
        raise ValueError(f"df {df} must exceed d - 1 = {d - 1}")
    check_symmetric(scale)
    ell = cholesky(scale)
    ell_inv = solve_triangular(ell, np.eye(d), lower=True, check_finite=False)
    inv_scale = ell_inv.T @ ell_inv
    c = cholesky(symmetrize(inv_scale))
    a = _bartlett_factor(df, d, rng)
    f = c @ a
    g = solve_triangular(f, np.eye(d), lower=True, check_finite=False)
    return symmetrize(g.T @ g)


def sample_gamma_rate(shape: float, rate: float, rng, size=None):
    """Gamma draw(s) in the (shape, rate) parameterization, mean ``shape/rate``."""
    if not (shape > 0 and rate > 0):
        raise ValueError("gamma shape and rate must be positive")
    return rng.gen.gamma(shape, 1.0 / rate, size=size)


def sample_generalized_dirichlet(a, b, rng, return_sticks: bool = False):
    """Generalized-Dirichlet weights by stick breaking.

    ``V_k ~ Beta(a_k, b_k)`` for ``k < N`` and ``V_N = 1``; the weights are
    ``w_k = V_k * prod_{j<k} (1 - V_j)``.  ``a`` and ``b`` have length
    ``N - 1``.  Returns weights on the simplex (renormalized only against
    float rounding); with ``return_sticks=True`` also returns ``V`` and the
    running ``log(1 - V)`` sums so callers can keep ``log w_N`` exactly.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("a and b must be 1-D arrays of equal length")
    if np.any(a <= 0) or np.any(b <= 0):
        raise ValueError("stick-breaking Beta parameters must be positive")
    n = a.shape[0] + 1
    v = rng.beta(a, b)
    # Beta draws can round to exactly 1.0 when b is tiny; keep log(1-V) finite.
    v = np.minimum(v, 1.0 - 1e-16)
    log_one_minus = np.log1p(-v)
    log_tail = np.concatenate(([0.0], np.cumsum(log_one_minus)))
    log_w = np.empty(n)
    log_w[: n - 1] = np.log(np.maximum(v, 1e-300)) + log_tail[: n - 1]
    log_w[n - 1] = log_tail[n - 1]
    w = np.exp(log_w)
    w /= w.sum()
    if return_sticks:
        return w, v, log_w
    return w


def _robert_tail(lower: float, rng) -> float:
    """Standard normal truncated to (lower, inf) for large positive ``lower``."""
    lam = 0.5 * (lower + np.sqrt(lower * lower + 4.0))
    while True:
        x = lower + rng.gen.exponential(1.0 / lam)
        diff = x - lam
        if rng.gen.random() <= np.exp(-0.5 * diff * diff):
            return x


def _std_lower_truncated(alpha: np.ndarray, rng) -> np.ndarray:
    """Standard normal draws truncated to ``(alpha_i, inf)``, vectorized.

    Inverse-survival sampling where the bound is moderate, exponential
    rejection beyond ``_TAIL_BOUND`` standard deviations.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    out = np.empty(alpha.shape)
    mild = alpha <= _TAIL_BOUND
    if np.any(mild):
        a = alpha[mild]
        surv = ndtr(-a)
        u = rng.gen.random(a.shape)
        x = -ndtri(u * surv)
        # u*surv < surv guarantees x > alpha mathematically; enforce against
        # rounding at the boundary.
        bad = x <= a
        if np.any(bad):
            x[bad] = np.nextafter(a[bad], np.inf)
        out[mild] = x
    for idx in np.argwhere(~mild):
        out[tuple(idx)] = _robert_tail(float(alpha[tuple(idx)]), rng)
    return out


def sample_truncated_normal(mean, sd, lower, upper, rng):
    """Draw from ``Normal(mean, sd^2)`` truncated to the open interval.

    Scalar arguments give a float; array arguments broadcast elementwise.
    Bounds may be ``-inf``/``inf``.  Draws land strictly inside the
    interval.  Mild truncations use inverse-CDF sampling; truncation
    regions entirely beyond ``4`` standard deviations use exponential
    rejection (exact in the far tail where the inverse CDF saturates).
    """
    mean, sd, lower, upper = np.broadcast_arrays(
        *(np.asarray(x, dtype=np.float64) for x in (mean, sd, lower, upper))
    )
    if np.any(sd <= 0):
        raise ValueError("sd must be positive")
    if not np.all(lower < upper):
        raise ValueError("require lower < upper elementwise")
    scalar = mean.ndim == 0
    mean = np.atleast_1d(mean)
    sd = np.atleast_1d(sd)
    alpha = (np.atleast_1d(lower) - mean) / sd
    beta = (np.atleast_1d(upper) - mean) / sd

    z = np.empty(mean.shape)
    no_upper = np.isinf(beta) & (beta > 0)
    no_lower = np.isinf(alpha) & (alpha < 0)

    free = no_upper & no_lower
    lower_only = no_upper & ~no_lower
    upper_only = no_lower & ~no_upper
    two_sided = ~no_upper & ~no_lower

    if np.any(free):
        z[free] = rng.standard_normal(int(free.sum()))
    if np.any(lower_only):
        z[lower_only] = _std_lower_truncated(alpha[lower_only], rng)
    if np.any(upper_only):
        z[upper_only] = -_std_lower_truncated(-beta[upper_only], rng)
    if np.any(two_sided):
        a = alpha[two_sided]
        b = beta[two_sided]
        x = np.empty(a.shape)
        deep_hi = a >= _TAIL_BOUND
        deep_lo = b <= -_TAIL_BOUND
        mid = ~deep_hi & ~deep_lo
        if np.any(mid):
            pa = ndtr(a[mid])
            pb = ndtr(b[mid])
            u = rng.gen.random(int(mid.sum()))
            x[mid] = ndtri(pa + u * (pb - pa))
        for idx in np.argwhere(deep_hi):
            i = tuple(idx)
            while True:
                cand = _robert_tail(float(a[i]), rng)
                if cand < b[i]:
                    x[i] = cand
                    break
        for idx in np.argwhere(deep_lo):
            i = tuple(idx)
            while True:
                cand = -_robert_tail(float(-b[i]), rng)
                if cand > a[i]:
                    x[i] = cand
                    break
        # Clamp strictly inside against inverse-CDF rounding.
        x = np.clip(x, np.nextafter(a, np.inf), np.nextafter(b, -np.inf))
        z[two_sided] = x

    result = mean + sd * z
    # The standardized draw is strictly inside, but the affine map can round
    # onto a finite bound; nudge inward when it does.
    lo = np.atleast_1d(lower)
    hi = np.atleast_1d(upper)
    at_lo = np.isfinite(lo) & (result <= lo)
    at_hi = np.isfinite(hi) & (result >= hi)
    if np.any(at_lo):
        result[at_lo] = np.nextafter(lo[at_lo], np.inf)
    if np.any(at_hi):
        result[at_hi] = np.nextafter(hi[at_hi], -np.inf)
    return float(result[0]) if scalar else result


def gumbel_max_categorical(log_weights: np.ndarray, rng, axis: int = -1):
    """Categorical draw(s) proportional to ``exp(log_weights)`` along ``axis``.

    Adds independent Gumbel noise and takes an argmax, so unnormalized log
    weights are used directly.  ``-inf`` entries are admissible; a slice
    that is all ``-inf`` (or NaN) raises ``ValueError``.
    """
    lw = np.asarray(log_weights, dtype=np.float64)
    if lw.size == 0:
        raise ValueError("empty weight vector")
    if np.any(np.isnan(lw)):
        raise ValueError("NaN in log weights")
    finite_any = np.any(lw > -np.inf, axis=axis)
    if not np.all(finite_any):
        raise ValueError("all log weights are -inf")
    g = rng.gumbel(size=lw.shape)
    noisy = np.where(lw > -np.inf, lw + g, -np.inf)
    idx = np.argmax(noisy, axis=axis)
    if lw.ndim == 1:
        return int(idx)
    return idx
