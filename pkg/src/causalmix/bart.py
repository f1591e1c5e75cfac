"""Sum-of-trees regression and probit classification by backfitting MCMC.

Continuous responses use the identity link with a conjugate inverse-gamma
error variance; binary responses use the probit link via truncated-normal
latent augmentation with the error variance fixed at 1.  Tree structures
move by grow/prune Metropolis proposals against partial residuals; leaf
values and the variance are Gibbs updates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import ndtr, ndtri
from scipy.stats import chi2

from .distributions import sample_gamma_rate, sample_truncated_normal
from .rng import RngStream
from .trees import CATEGORICAL, CONTINUOUS, DecisionTree, FrozenForest, SplitRule

__all__ = [
    "BartHyper",
    "BartMcmc",
    "BartPosterior",
    "VariableImportance",
    "split_probability",
    "fit_continuous_bart",
    "fit_probit_bart",
    "predict",
    "variable_importance",
]

POLYNOMIAL = "polynomial"
EXPONENTIAL = "exponential"


@dataclass
class BartHyper:
    """Prior and proposal settings for one forest.

    ``leaf_sd`` of ``None`` means data-calibrated: ``(ymax - ymin) /
    (2 k sqrt(M))`` for the identity link, ``3 / (k sqrt(M))`` for probit.
    The error-variance prior is inverse-gamma with ``sigma_df`` degrees of
    freedom, scaled so the sample standard deviation sits at the
    ``sigma_quant`` prior quantile.
    """

    ntree: int = 50
    split_kind: str = POLYNOMIAL
    base: float = 0.95
    power: float = 2.0
    leaf_sd: Optional[float] = None
    k: float = 2.0
    sigma_df: float = 3.0
    sigma_quant: float = 0.9
    link: str = "identity"
    p_grow: float = 0.5
    p_prune: float = 0.5

    def validate(self, n: Optional[int] = None):
        if self.ntree < 1:
            raise ValueError("ntree must be >= 1")
        if self.split_kind == POLYNOMIAL:
            if not (0.0 < self.base < 1.0):
                raise ValueError("polynomial split prior needs base in (0, 1)")
            if not self.power > 0:
                raise ValueError("polynomial split prior needs power > 0")
        elif self.split_kind == EXPONENTIAL:
            # theory wants base in [1/n, 1/2); 1/2 itself is admitted as the
            # conventional default
            if not (0.0 < self.base <= 0.5):
                raise ValueError("exponential split prior needs base in (0, 1/2]")
            if n is not None and self.base < 1.0 / n:
                raise ValueError("exponential split prior base below 1/n")
        else:
            raise ValueError(f"unknown split prior kind {self.split_kind!r}")
        if not abs(self.p_grow + self.p_prune - 1.0) < 1e-12:
            raise ValueError("grow/prune proposal probabilities must sum to 1")


@dataclass
class BartMcmc:
    nskip: int = 100
    ndpost: int = 1000
    keepevery: int = 1

    def validate(self):
        if self.nskip < 0 or self.ndpost < 1 or self.keepevery < 1:
            raise ValueError("need nskip >= 0, ndpost >= 1, keepevery >= 1")


def split_probability(depth: int, hyper: BartHyper) -> float:
    """Prior probability that a node at ``depth`` is split.

    Polynomial: ``base / (1 + depth)^power``.  Exponential: ``base^depth``
    (equal to 1 at the root, so regularization starts at depth 1).
    """
    if depth < 0:
        raise ValueError("depth must be >= 0")
    if hyper.split_kind == POLYNOMIAL:
        return hyper.base / (1.0 + depth) ** hyper.power
    return hyper.base ** depth


@dataclass
class VariableImportance:
    """Per-variable importance summaries over kept draws."""

    vip: np.ndarray
    within_type_vip: dict
    mi: np.ndarray
    empty: bool = False


class BartPosterior:
    """Kept draws of a forest chain plus importance accumulators."""

    def __init__(self, forests, sigma2_draws, train_fits, offset, var_types,
                 rule_counts, mi_sums, mi_counts, link):
        self.forests = forests
        self.sigma2_draws = sigma2_draws
        self.train_fits = train_fits
        self.offset = offset
        self.var_types = var_types
        self.rule_counts = rule_counts  # (ndpost, p) rules per variable per draw
        self.mi_sums = mi_sums
        self.mi_counts = mi_counts
        self.link = link

    @property
    def ndpost(self) -> int:
        return len(self.forests)

    def predict(self, xnew: np.ndarray) -> np.ndarray:
        return predict(self, xnew)

    def predict_prob(self, xnew: np.ndarray) -> np.ndarray:
        if self.link != "probit":
            raise ValueError("probability scale only defined for the probit link")
        return ndtr(self.predict(xnew))


def predict(posterior: BartPosterior, xnew: np.ndarray) -> np.ndarray:
    """Per-draw forest predictions on new rows (latent scale, offset included)."""
    xnew = np.asarray(xnew, dtype=np.float64)
    if xnew.ndim != 2 or xnew.shape[1] != len(posterior.var_types):
        raise ValueError(
            f"xnew must have {len(posterior.var_types)} columns, got shape {xnew.shape}"
        )
    out = np.empty((posterior.ndpost, xnew.shape[0]))
    for k, forest in enumerate(posterior.forests):
        out[k] = forest.predict(xnew) + posterior.offset
    return out


def variable_importance(posterior: BartPosterior, var_types=None) -> VariableImportance:
    """VIP, within-type VIP and MI summaries from a fitted chain.

    VIP is the per-draw share of splitting rules using each variable,
    averaged over draws; within-type VIP restricts the denominator to rules
    on variables of the same type; MI averages, over the rules standing in
    the kept forests, the capped Metropolis ratio of the grow move that
    installed each rule — rules worth keeping were accepted with high
    ratios, so the average separates signal from noise variables.
    """
    if posterior.ndpost < 1:
        raise ValueError("posterior has no kept draws")
    var_types = list(posterior.var_types if var_types is None else var_types)
    p = len(var_types)
    counts = posterior.rule_counts
    totals = counts.sum(axis=1)
    any_rules = totals > 0
    if not np.any(any_rules):
        return VariableImportance(
            vip=np.zeros(p), within_type_vip={}, mi=np.zeros(p), empty=True
        )
    shares = np.zeros_like(counts, dtype=np.float64)
    shares[any_rules] = counts[any_rules] / totals[any_rules, None]
    vip = shares[any_rules].mean(axis=0)

    within: dict = {}
    for kind in sorted(set(var_types)):
        sel = np.array([vt == kind for vt in var_types])
        sub = counts[:, sel]
        sub_tot = sub.sum(axis=1)
        rows = sub_tot > 0
        if not np.any(rows):
            continue
        within[kind] = (sub[rows] / sub_tot[rows, None]).mean(axis=0)

    mi = np.zeros(p)
    seen = posterior.mi_counts > 0
    mi[seen] = posterior.mi_sums[seen] / posterior.mi_counts[seen]
    return VariableImportance(vip=vip, within_type_vip=within, mi=mi)


# ----------------------------------------------------------------- internals

class _BartChain:
    """Mutable state of one backfitting chain."""

    def __init__(self, x, y, hyper: BartHyper, rng: RngStream, var_types=None):
        self.x = np.ascontiguousarray(x, dtype=np.float64)
        n, p = self.x.shape
        self.n, self.p = n, p
        self.y = np.asarray(y, dtype=np.float64)
        self.hyper = hyper
        self.rng = rng
        self.var_types = self._resolve_types(var_types)
        self.cat_mask = np.array([t == "categorical" for t in self.var_types])

        if hyper.link == "probit":
            self.offset = float(ndtri(np.clip(np.mean(y), 1e-3, 1 - 1e-3)))
            leaf_sd = hyper.leaf_sd if hyper.leaf_sd is not None else 3.0 / (
                hyper.k * np.sqrt(hyper.ntree)
            )
            self.sigma2 = 1.0
            self.nu = None
            self.lam = None
            self.targets = np.zeros(n)  # latent residual targets, set on augmentation
        else:
            self.offset = float(np.mean(self.y))
            spread = float(np.max(self.y) - np.min(self.y))
            if spread <= 0:
                raise ValueError("constant response: variance prior calibration degenerate")
            leaf_sd = hyper.leaf_sd if hyper.leaf_sd is not None else spread / (
                2.0 * hyper.k * np.sqrt(hyper.ntree)
            )
            sd_guess = float(np.std(self.y))
            self.nu = hyper.sigma_df
            self.lam = sd_guess ** 2 * chi2.ppf(1.0 - hyper.sigma_quant, self.nu) / self.nu
            self.sigma2 = sd_guess ** 2
            self.targets = self.y - self.offset
        self.leaf_var = leaf_sd ** 2

        m = hyper.ntree
        self.trees = [DecisionTree(n) for _ in range(m)]
        self.tree_fits = np.zeros((m, n))
        self.resid = self.targets - 0.0  # full-model residual (targets - sum of fits)

        self.mi_sums = np.zeros(p)
        self.mi_counts = np.zeros(p, dtype=np.int64)
        self._iters = 0

    def _resolve_types(self, var_types):
        if var_types is not None:
            types = list(var_types)
            if len(types) != self.p:
                raise ValueError("var_types length must match column count")
            bad = set(types) - {"continuous", "categorical"}
            if bad:
                raise ValueError(f"unknown variable types {bad}")
            return types
        types = []
        for j in range(self.p):
            vals = np.unique(self.x[:, j])
            if vals.size <= 10 and np.all(vals == np.round(vals)):
                types.append("categorical")
            else:
                types.append("continuous")
        return types

    # -- probit augmentation --------------------------------------------
    def augment_latents(self, t: np.ndarray):
        mean = self.offset + np.sum(self.tree_fits, axis=0)
        lower = np.where(t == 1, 0.0, -np.inf)
        upper = np.where(t == 1, np.inf, 0.0)
        z = sample_truncated_normal(mean, 1.0, lower, upper, self.rng)
        self.targets = z - self.offset
        self.resid = self.targets - np.sum(self.tree_fits, axis=0)

    # -- proposal helpers ------------------------------------------------
    def _valid_vars(self, members: np.ndarray) -> list:
        out = []
        sub = self.x[members]
        for j in range(self.p):
            col = sub[:, j]
            if col.size >= 2 and np.any(col != col[0]):
                out.append(j)
        return out

    def _draw_rule(self, members: np.ndarray, var: int) -> SplitRule:
        col = self.x[members, var]
        if self.cat_mask[var]:
            cats = np.unique(col)
            while True:
                bits = self.rng.integers(0, 2, size=cats.size).astype(bool)
                if bits.any() and not bits.all():
                    break
            return SplitRule(var, CATEGORICAL, left_cats=cats[bits])
        uniq = np.unique(col)
        cut = uniq[1 + self.rng.integers(0, uniq.size - 1)]
        return SplitRule(var, CONTINUOUS, cutoff=cut)

    def _log_marginal_gain(self, n, s, n_l, s_l, n_r, s_r) -> float:
        """Log marginal-likelihood ratio (split vs merged) for one leaf's data."""
        s2, lv = self.sigma2, self.leaf_var
        c, c_l, c_r = s2 + n * lv, s2 + n_l * lv, s2 + n_r * lv
        half_logs = 0.5 * (np.log(s2) + np.log(c) - np.log(c_l) - np.log(c_r))
        quad = (lv / (2.0 * s2)) * (s_l * s_l / c_l + s_r * s_r / c_r - s * s / c)
        return half_logs + quad

    def _grow_log_ratio(self, tree, node, partial, members, go_left):
        """Log MH ratio for growing ``node`` (rule already chosen).

        Rule-selection probabilities cancel between the proposal and the
        tree prior (both uniform over the node's valid rules), so only the
        depth prior, the move/pick probabilities, and the marginal
        likelihood remain.
        """
        d = node.depth
        p_d = split_probability(d, self.hyper)
        p_d1 = split_probability(d + 1, self.hyper)
        if p_d >= 1.0:
            log_prior = np.inf  # root split certain under the exponential prior
        else:
            log_prior = (
                np.log(p_d) + 2.0 * np.log1p(-p_d1) - np.log1p(-p_d)
            )
        r = partial[members]
        go = go_left
        n_all, s_all = r.size, float(r.sum())
        s_l = float(r[go].sum())
        n_l = int(go.sum())
        n_r, s_r = n_all - n_l, s_all - s_l
        log_lik = self._log_marginal_gain(n_all, s_all, n_l, s_l, n_r, s_r)

        p_grow_here = 1.0 if tree.is_stump else self.hyper.p_grow
        parent_prunable = (
            node.parent is not None
            and node.parent.left.is_leaf
            and node.parent.right.is_leaf
        )
        w2_after = tree.n_prunable + 1 - (1 if parent_prunable else 0)
        log_prop = (
            np.log(self.hyper.p_prune) + np.log(tree.n_leaves)
            - np.log(p_grow_here) - np.log(w2_after)
        )
        return log_prior + log_lik + log_prop

    def _prune_log_ratio(self, tree, node, partial):
        """Log MH ratio for pruning internal ``node`` (two leaf children)."""
        d = node.depth
        p_d = split_probability(d, self.hyper)
        p_d1 = split_probability(d + 1, self.hyper)
        if p_d >= 1.0:
            return -np.inf  # never collapse the certain root split
        log_prior = -(np.log(p_d) + 2.0 * np.log1p(-p_d1) - np.log1p(-p_d))

        slot_l, slot_r = node.left.slot, node.right.slot
        sel_l = tree.obs_slot == slot_l
        sel_r = tree.obs_slot == slot_r
        n_l, n_r = int(sel_l.sum()), int(sel_r.sum())
        s_l, s_r = float(partial[sel_l].sum()), float(partial[sel_r].sum())
        log_lik = -self._log_marginal_gain(n_l + n_r, s_l + s_r, n_l, s_l, n_r, s_r)

        will_be_stump = tree.n_leaves == 2
        p_grow_back = 1.0 if will_be_stump else self.hyper.p_grow
        log_prop = (
            np.log(p_grow_back) + np.log(tree.n_prunable)
            - np.log(self.hyper.p_prune) - np.log(tree.n_leaves - 1)
        )
        return log_prior + log_lik + log_prop

    def accumulate_standing_mi(self):
        """Credit every standing rule's creation ratio to its variable.

        Called once per kept draw so MI averages over the same rule
        population the VIP counts do.
        """
        for tree in self.trees:
            stack = [tree.root]
            while stack:
                nd = stack.pop()
                if nd.is_leaf:
                    continue
                self.mi_sums[nd.rule.var] += nd.rule.accept_ratio
                self.mi_counts[nd.rule.var] += 1
                stack.append(nd.left)
                stack.append(nd.right)

    # -- one tree update -------------------------------------------------
    def _update_tree(self, m: int):
        tree = self.trees[m]
        partial = self.resid + self.tree_fits[m]

        grow = tree.is_stump or self.rng.uniform() < self.hyper.p_grow
        if grow:
            leaves = tree.leaf_nodes()
            node = leaves[self.rng.integers(0, len(leaves))]
            members = np.flatnonzero(tree.obs_slot == node.slot)
            valid = self._valid_vars(members)
            if valid:
                var = valid[self.rng.integers(0, len(valid))]
                rule = self._draw_rule(members, var)
                go_left = rule.goes_left(self.x[members, rule.var])
                log_ratio = self._grow_log_ratio(tree, node, partial, members, go_left)
                if np.log(self.rng.uniform()) < log_ratio:
                    rule.accept_ratio = (
                        1.0 if log_ratio >= 0 else float(np.exp(log_ratio))
                    )
                    tree.grow(node, rule, members, go_left)
        else:
            prunable = tree.prunable_nodes()
            if prunable:
                node = prunable[self.rng.integers(0, len(prunable))]
                log_ratio = self._prune_log_ratio(tree, node, partial)
                if np.log(self.rng.uniform()) < log_ratio:
                    tree.prune(node)

        # refresh leaf values from their conjugate normal full conditional
        cap = len(tree.slots)
        counts = np.bincount(tree.obs_slot, minlength=cap).astype(np.float64)
        sums = np.bincount(tree.obs_slot, weights=partial, minlength=cap)
        active = np.array([nd is not None for nd in tree.slots])
        denom = self.sigma2 + counts[active] * self.leaf_var
        post_mean = self.leaf_var * sums[active] / denom
        post_sd = np.sqrt(self.sigma2 * self.leaf_var / denom)
        noise = self.rng.standard_normal(int(active.sum()))
        tree.leaf_values[: cap][active] = post_mean + post_sd * noise

        new_fit = tree.fits()
        self.resid += self.tree_fits[m] - new_fit
        self.tree_fits[m] = new_fit

    def iterate(self):
        for m in range(len(self.trees)):
            self._update_tree(m)
        self._iters += 1
        if self._iters % 200 == 0:
            # squash float drift from incremental residual updates
            self.resid = self.targets - np.sum(self.tree_fits, axis=0)
        if self.hyper.link != "probit":
            ssr = float(np.sum(self.resid ** 2))
            g = sample_gamma_rate(
                0.5 * (self.nu + self.n), 0.5 * (self.nu * self.lam + ssr), self.rng
            )
            self.sigma2 = 1.0 / g

    def snapshot_forest(self) -> FrozenForest:
        return FrozenForest([t.freeze() for t in self.trees])


def _run_chain(x, y, hyper, mcmc, rng, var_types, probit_t=None) -> BartPosterior:
    chain = _BartChain(x, y, hyper, rng, var_types)
    mcmc.validate()
    total = mcmc.nskip + mcmc.ndpost * mcmc.keepevery
    forests, sig_draws, fits, rule_counts = [], [], [], []
    for it in range(total):
        if probit_t is not None:
            chain.augment_latents(probit_t)
        chain.iterate()
        if it >= mcmc.nskip and (it - mcmc.nskip + 1) % mcmc.keepevery == 0:
            chain.accumulate_standing_mi()
            forest = chain.snapshot_forest()
            forests.append(forest)
            sig_draws.append(chain.sigma2)
            per_tree = np.stack([t.predict(chain.x) for t in forest.trees])
            fits.append(np.sum(per_tree, axis=0) + chain.offset)
            rule_counts.append(forest.rule_counts(chain.p))
    return BartPosterior(
        forests=forests,
        sigma2_draws=np.array(sig_draws) if probit_t is None else None,
        train_fits=np.stack(fits),
        offset=chain.offset,
        var_types=chain.var_types,
        rule_counts=np.stack(rule_counts),
        mi_sums=chain.mi_sums,
        mi_counts=chain.mi_counts,
        link=hyper.link,
    )


def fit_continuous_bart(x, y, hyper: BartHyper = None, mcmc: BartMcmc = None,
                        rng: RngStream = None, var_types=None) -> BartPosterior:
    """Fit the identity-link sum-of-trees model.

    Parameters
    ----------
    x : (n, p) array
        Covariates; categorical columns hold integer codes.
    y : (n,) array
        Continuous response.
    hyper, mcmc : settings, defaulted when ``None``.
    rng : RngStream
    var_types : optional list of {"continuous", "categorical"}
        Inferred from the data when omitted (few-valued integer columns
        are treated as categorical).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise ValueError("x must be (n, p) and y (n,) with matching n")
    if x.shape[0] < 10:
        raise ValueError("need n >= 10")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite values in inputs")
    hyper = hyper or BartHyper()
    if hyper.link != "identity":
        raise ValueError("fit_continuous_bart requires the identity link")
    hyper.validate(n=x.shape[0])
    mcmc = mcmc or BartMcmc()
    return _run_chain(x, y, hyper, mcmc, rng, var_types)


def fit_probit_bart(x, t, hyper: BartHyper = None, mcmc: BartMcmc = None,
                    rng: RngStream = None, var_types=None) -> BartPosterior:
    """Fit the probit-link model to a binary vector by latent augmentation."""
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(t)
    if x.ndim != 2 or t.ndim != 1 or x.shape[0] != t.shape[0]:
        raise ValueError("x must be (n, p) and t (n,) with matching n")
    if x.shape[0] < 10:
        raise ValueError("need n >= 10")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite values in x")
    uniq = set(np.unique(t).tolist())
    if not uniq <= {0, 1} or len(uniq) != 2:
        raise ValueError("t must contain both classes, coded 0/1")
    hyper = hyper or BartHyper(link="probit")
    if hyper.link != "probit":
        raise ValueError("fit_probit_bart requires the probit link")
    hyper.validate(n=x.shape[0])
    mcmc = mcmc or BartMcmc()
    return _run_chain(x, t.astype(np.float64), hyper, mcmc, rng, var_types,
                      probit_t=t.astype(np.int64))
