"""Synthetic data generators used by the test-benches and the CLI.

Each generator returns a :class:`SyntheticDataset` bundling the draws with
callable ground-truth handles, so accuracy checks never re-derive truth
from the samples themselves.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import expit, ndtr

from .rng import RngStream

__all__ = ["SyntheticDataset", "mix_data", "three_normals", "dunson_example", "qte_example"]


@dataclass
class SyntheticDataset:
    """Draws plus ground truth for one synthetic design.

    Fields not applicable to a design are ``None``.  ``truth`` maps handle
    names (``"f0"``, ``"density"``, ``"cond_mean"`` ...) to callables.
    """

    x: Optional[np.ndarray] = None
    y: Optional[np.ndarray] = None
    treatment: Optional[np.ndarray] = None
    y0: Optional[np.ndarray] = None
    y1: Optional[np.ndarray] = None
    var_types: Optional[list] = None
    truth: dict = field(default_factory=dict)


def mix_data(n: int, p: int = 10, sigma: float = 1.0, rng: RngStream = None) -> SyntheticDataset:
    """Nonlinear regression surface over 5 binary and 5 continuous covariates.

    ``f0(x) = 10 sin(pi x1 x6) + 20 (x8 - 0.5)^2 + 10 x2 + 5 x7`` with
    ``x1..x5 ~ Bernoulli(0.5)``, ``x6..x10 ~ Uniform(0, 1)`` and Gaussian
    noise of standard deviation ``sigma``.  Columns beyond the tenth are
    irrelevant Uniform(0, 1) noise covariates.  Active covariates: binary
    x1, x2 and continuous x6, x7, x8; the rest are noise.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if p < 10:
        raise ValueError("p must be >= 10")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    x = np.empty((n, p))
    x[:, :5] = rng.bernoulli(0.5, size=(n, 5)).astype(float)
    x[:, 5:] = rng.uniform(size=(n, p - 5))

    def f0(xx):
        xx = np.atleast_2d(xx)
        return (
            10.0 * np.sin(np.pi * xx[:, 0] * xx[:, 5])
            + 20.0 * (xx[:, 7] - 0.5) ** 2
            + 10.0 * xx[:, 1]
            + 5.0 * xx[:, 6]
        )

    y = f0(x) + sigma * rng.standard_normal(n)
    var_types = ["categorical"] * 5 + ["continuous"] * (p - 5)
    return SyntheticDataset(x=x, y=y, var_types=var_types, truth={"f0": f0, "sigma": sigma})


_TN_MEANS = np.array([[2.0, -1.0], [1.0, 0.0], [-1.0, -1.0]])
_TN_COV = 0.5 * np.eye(2)


def three_normals(n: int, rng: RngStream = None) -> SyntheticDataset:
    """Equal-weight mixture of three bivariate normals with covariance 0.5 I."""
    if n < 1:
        raise ValueError("n must be >= 1")
    comp = rng.integers(0, 3, size=n)
    y = _TN_MEANS[comp] + np.sqrt(0.5) * rng.standard_normal((n, 2))

    def density(pts):
        pts = np.atleast_2d(pts)
        out = np.zeros(pts.shape[0])
        for mu in _TN_MEANS:
            diff = pts - mu
            quad = np.sum(diff * diff, axis=1) / 0.5
            out += np.exp(-0.5 * quad) / (2.0 * np.pi * 0.5)
        return out / 3.0

    return SyntheticDataset(y=y, truth={"density": density})


def dunson_example(n: int, rng: RngStream = None) -> SyntheticDataset:
    """Covariate-dependent two-component mixture with a smoothly shifting weight.

    ``x ~ Uniform(0, 1)``;  ``y | x`` is ``Normal(x, 0.01)`` with weight
    ``exp(-2x)`` and ``Normal(x^4, 0.04)`` otherwise.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    x = rng.uniform(size=n)
    w = np.exp(-2.0 * x)
    pick_first = rng.gen.random(n) < w
    sd = np.where(pick_first, 0.1, 0.2)
    mu = np.where(pick_first, x, x ** 4)
    y = mu + sd * rng.standard_normal(n)

    def _wmix(xx):
        xx = np.asarray(xx, dtype=float)
        return np.exp(-2.0 * xx)

    def density(yy, xx):
        yy = np.asarray(yy, dtype=float)
        xx = np.asarray(xx, dtype=float)
        w1 = _wmix(xx)
        d1 = np.exp(-0.5 * (yy - xx) ** 2 / 0.01) / np.sqrt(2.0 * np.pi * 0.01)
        d2 = np.exp(-0.5 * (yy - xx ** 4) ** 2 / 0.04) / np.sqrt(2.0 * np.pi * 0.04)
        return w1 * d1 + (1.0 - w1) * d2

    def cdf(yy, xx):
        yy = np.asarray(yy, dtype=float)
        xx = np.asarray(xx, dtype=float)
        w1 = _wmix(xx)
        return w1 * ndtr((yy - xx) / 0.1) + (1.0 - w1) * ndtr((yy - xx ** 4) / 0.2)

    def cond_mean(xx):
        xx = np.asarray(xx, dtype=float)
        w1 = _wmix(xx)
        return w1 * xx + (1.0 - w1) * xx ** 4

    return SyntheticDataset(
        x=x.reshape(-1, 1),
        y=y,
        var_types=["continuous"],
        truth={"density": density, "cdf": cdf, "cond_mean": cond_mean},
    )


def _qte_draw_y1(x: np.ndarray, rng: RngStream) -> np.ndarray:
    w = expit(0.5 * x[:, 2] * x[:, 3])
    pick = rng.gen.random(x.shape[0]) < w
    mu_a = 3.0 + 0.5 * x[:, 1] * x[:, 4] + 0.5 * x[:, 0] ** 2
    mu_b = -0.5 + 0.5 * x[:, 1] ** 2 - 0.5 * x[:, 0] * x[:, 2]
    mu = np.where(pick, mu_a, mu_b)
    sd = np.where(pick, 0.5, 0.8)
    return mu + sd * rng.standard_normal(x.shape[0])


def _qte_draw_y0(x: np.ndarray, rng: RngStream) -> np.ndarray:
    w = np.exp(-np.abs(x[:, 4]))
    pick = rng.gen.random(x.shape[0]) < w
    s = 0.2 * np.sum(x[:, :5], axis=1)
    mu_a = s ** 4
    mu_b = 2.0 + 0.2 * np.sum(x[:, :5] ** 2, axis=1)
    mu = np.where(pick, mu_a, mu_b)
    return mu + rng.standard_normal(x.shape[0])


def _qte_density(arm: int, yy, x: np.ndarray) -> np.ndarray:
    """Conditional density f(y | x, arm) for a vector of y at fixed x rows."""
    yy = np.atleast_1d(np.asarray(yy, dtype=float))
    if arm == 1:
        w = expit(0.5 * x[:, 2] * x[:, 3])
        mu_a = 3.0 + 0.5 * x[:, 1] * x[:, 4] + 0.5 * x[:, 0] ** 2
        mu_b = -0.5 + 0.5 * x[:, 1] ** 2 - 0.5 * x[:, 0] * x[:, 2]
        sd_a, sd_b = 0.5, 0.8
    else:
        w = np.exp(-np.abs(x[:, 4]))
        s = 0.2 * np.sum(x[:, :5], axis=1)
        mu_a = s ** 4
        mu_b = 2.0 + 0.2 * np.sum(x[:, :5] ** 2, axis=1)
        sd_a, sd_b = 1.0, 1.0
    da = np.exp(-0.5 * ((yy[:, None] - mu_a) / sd_a) ** 2) / (np.sqrt(2 * np.pi) * sd_a)
    db = np.exp(-0.5 * ((yy[:, None] - mu_b) / sd_b) ** 2) / (np.sqrt(2 * np.pi) * sd_b)
    return w * da + (1.0 - w) * db


def qte_example(n: int, rng: RngStream = None) -> SyntheticDataset:
    """Observational design with ten confounders and bimodal potential outcomes.

    ``x_j ~ Uniform(-2, 2)`` for ``j = 1..10``; treatment follows a logistic
    model ``T ~ Bernoulli(expit(0.3 sum_j x_j))``; each arm's outcome is a
    two-component normal mixture whose weights and means depend on the first
    five confounders.  Both potential outcomes are drawn for every unit;
    ``y`` reveals the one matching ``T``.

    ``truth["fy1"]``/``truth["fy0"]`` estimate the marginal potential-outcome
    densities by Monte-Carlo integration over fresh confounder draws:
    ``fy1(grid, mc_size)``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    x = rng.uniform(-2.0, 2.0, size=(n, 10))
    t = rng.bernoulli(expit(0.3 * np.sum(x, axis=1)))
    y1 = _qte_draw_y1(x, rng)
    y0 = _qte_draw_y0(x, rng)
    y = np.where(t == 1, y1, y0)

    mc_rng = rng.substream("qte-truth")

    def fy1(grid, mc_size: int = 10000):
        xs = mc_rng.uniform(-2.0, 2.0, size=(mc_size, 10))
        return _qte_density(1, grid, xs).mean(axis=1)

    def fy0(grid, mc_size: int = 10000):
        xs = mc_rng.uniform(-2.0, 2.0, size=(mc_size, 10))
        return _qte_density(0, grid, xs).mean(axis=1)

    return SyntheticDataset(
        x=x,
        y=y,
        treatment=t,
        y0=y0,
        y1=y1,
        var_types=["continuous"] * 10,
        truth={"fy1": fy1, "fy0": fy0, "propensity": lambda xx: expit(0.3 * np.sum(xx, axis=1))},
    )
