"""Training objectives for supervised, prediction-ranking and
uncertainty-ranking multi-view counting."""

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .scene import subset_mask

MODES = ("baseline1", "baseline2", "mvpr", "mvur")
VIOLATION_TOL = 1e-9


@dataclass(frozen=True)
class LossWeights:
    lambda_aux: float = 0.001
    beta: float = 0.001
    eta: float = 0.001
    gamma: float = 0.001
    aux_set: tuple | None = None  # default: 1..k-1
    rank_pairs: tuple | None = None  # default: consecutive (j, j+1)
    mean_over_mask: bool = False

    def __post_init__(self):
        for name in ("lambda_aux", "beta", "eta", "gamma"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be nonnegative")

    def resolve(self, k):
        """Concrete (aux_set, rank_pairs) for ``k`` views, validated."""
        aux = tuple(range(1, k)) if self.aux_set is None else tuple(self.aux_set)
        pairs = (tuple((j, j + 1) for j in range(1, k)) if self.rank_pairs is None
                 else tuple(tuple(p) for p in self.rank_pairs))
        for j in aux:
            if not 1 <= j <= k - 1:
                raise ValueError(f"auxiliary cardinality {j} outside 1..{k - 1}")
        for j1, j2 in pairs:
            if not 1 <= j1 < j2 <= k:
                raise ValueError(f"rank pair {(j1, j2)} must satisfy 1 <= j1 < j2 <= {k}")
        return aux, pairs


@dataclass
class LossReport:
    l_label: float = 0.0
    l_pre_rank: float = 0.0
    l_un_label: float = 0.0
    l_un_rank: float = 0.0
    total: float = 0.0
    violations: dict = field(default_factory=dict)
    objective: Tensor | None = field(default=None, repr=False)

    @property
    def has_gradient(self):
        return self.objective is not None

    def __add__(self, other):
        obj = self.objective
        if other.objective is not None:
            obj = other.objective if obj is None else ad.add(obj, other.objective)
        viol = dict(self.violations)
        viol.update({k: v for k, v in other.violations.items() if k not in viol})
        return LossReport(self.l_label + other.l_label, self.l_pre_rank + other.l_pre_rank,
                          self.l_un_label + other.l_un_label, self.l_un_rank + other.l_un_rank,
                          self.total + other.total, viol, obj)


def _const(arr, like):
    return Tensor(arr, dtype=like.dtype)


def masked_target(gt, coverage, subset):
    """Ground truth restricted to the region seen by a view subset."""
    return np.asarray(gt) * subset_mask(coverage, subset)


def _num_views(cache):
    return max(cache.subsets)


def loss_label(cache, gt, coverage, weights, aux_set=None):
    """MSE of the all-view map plus lambda-weighted masked MSE of smaller subsets."""
    k = _num_views(cache)
    if gt is None:
        raise ValueError("loss_label needs a labeled sample")
    if aux_set is None:
        aux_set, _ = weights.resolve(k)
    s_k = cache.density[k]
    total = ad.mse(s_k, _const(gt, s_k))
    if weights.lambda_aux > 0:
        for j in aux_set:
            s_j = cache.density[j]
            aux = ad.mse(s_j, _const(masked_target(gt, coverage, cache.subsets[j]), s_j))
            total = ad.add(total, ad.mul(aux, weights.lambda_aux))
    return total


def rank_penalty(a, b, mask=None):
    """Mean over cells of max(0, a - b).

    With ``mask`` the mean runs over the masked cells only.
    """
    if a.shape != b.shape:
        raise ad.ShapeError(f"rank_penalty: shapes {a.shape} and {b.shape} differ")
    hinge = ad.relu(ad.sub(a, b))
    if mask is None:
        return ad.mean(hinge)
    n = float(np.asarray(mask).sum())
    return ad.mul(ad.sum(hinge), 1.0 / n) if n > 0 else ad.mul(ad.sum(hinge), 0.0)


def loss_pre_rank(cache, weights, pairs=None):
    """Sum over rank pairs of the penalty for fewer-view maps exceeding more-view maps."""
    if pairs is None:
        _, pairs = weights.resolve(_num_views(cache))
    if not pairs:
        raise ValueError("loss_pre_rank needs at least one rank pair")
    total = None
    for j1, j2 in pairs:
        term = rank_penalty(cache.density[j1], cache.density[j2])
        total = term if total is None else ad.add(total, term)
    return total


def uncertainty_targets(cache, gt, coverage):
    """Absolute prediction error per cardinality, as constants."""
    if gt is None:
        raise ValueError("uncertainty targets need a labeled sample")
    return {j: np.abs(s.data - masked_target(gt, coverage, cache.subsets[j]).astype(s.dtype))
            for j, s in cache.density.items()}


def loss_un_label(cache, targets):
    total = None
    for j in sorted(targets):
        u = cache.uncertainty[j]
        term = ad.mse(u, _const(targets[j], u))
        total = term if total is None else ad.add(total, term)
    return total


def loss_un_rank(cache, coverage, weights, pairs=None):
    """Penalty for more-view uncertainty exceeding fewer-view uncertainty on
    the fewer-view set's covered area."""
    if pairs is None:
        _, pairs = weights.resolve(_num_views(cache))
    if not pairs:
        raise ValueError("loss_un_rank needs at least one rank pair")
    total = None
    for j1, j2 in pairs:
        m = subset_mask(coverage, cache.subsets[j1])
        mt = _const(m, cache.uncertainty[j1])
        term = rank_penalty(ad.mul(cache.uncertainty[j2], mt), ad.mul(cache.uncertainty[j1], mt),
                            mask=m if weights.mean_over_mask else None)
        total = term if total is None else ad.add(total, term)
    return total


def prediction_violations(cache, pairs):
    return {f"pre_{j1}_{j2}": float(np.mean(
        cache.density[j1].data - cache.density[j2].data > VIOLATION_TOL)) for j1, j2 in pairs}


def uncertainty_violations(cache, coverage, pairs):
    out = {}
    for j1, j2 in pairs:
        m = subset_mask(coverage, cache.subsets[j1])
        diff = (cache.uncertainty[j2].data - cache.uncertainty[j1].data) * m
        out[f"un_{j1}_{j2}"] = float(np.mean(diff > VIOLATION_TOL))
    return out


def normalize_mode(mode):
    m = str(mode).lower()
    if m not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    return m


def total_loss(cache, sample, weights, mode, un_targets=None):
    """Combined objective for one sample under a training mode.

    Labeled samples contribute the density loss (plus the uncertainty
    supervision for ``mvur``); unlabeled samples contribute only the mode's
    ranking term. Terms whose weight is zero are left out of the objective.
    ``un_targets`` overrides the (constant) uncertainty targets computed from
    the cache.
    """
    mode = normalize_mode(mode)
    k = _num_views(cache)
    aux, pairs = weights.resolve(k)
    rep = LossReport()
    rep.violations.update(prediction_violations(cache, pairs))
    if cache.uncertainty:
        rep.violations.update(uncertainty_violations(cache, sample.coverage, pairs))
    gt = sample.gt_density
    terms = []
    if sample.labeled:
        w = replace(weights, lambda_aux=0.0) if mode == "baseline1" else weights
        label = loss_label(cache, gt, sample.coverage, w, aux_set=aux)
        rep.l_label = label.item()
        terms.append(label)
        if mode == "mvur":
            if un_targets is None:
                un_targets = uncertainty_targets(cache, gt, sample.coverage)
            un = loss_un_label(cache, un_targets)
            rep.l_un_label = un.item()
            if weights.eta > 0:
                terms.append(ad.mul(un, weights.eta))
    elif mode == "mvpr":
        pre = loss_pre_rank(cache, weights, pairs)
        rep.l_pre_rank = pre.item()
        if weights.beta > 0:
            terms.append(ad.mul(pre, weights.beta))
    elif mode == "mvur":
        un = loss_un_rank(cache, sample.coverage, weights, pairs)
        rep.l_un_rank = un.item()
        if weights.gamma > 0:
            terms.append(ad.mul(un, weights.gamma))
    if terms:
        obj = terms[0]
        for t in terms[1:]:
            obj = ad.add(obj, t)
        rep.objective = obj
        rep.total = obj.item()
    return rep
