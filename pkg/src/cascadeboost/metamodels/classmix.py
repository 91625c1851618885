"""Class-conditional mixtures: the top model of a semi-supervised cascade.

The hidden variable is a flat component index ``j = y * K + c`` combining
the class label ``y`` and a per-class component ``c``. Emissions are
diagonal Gaussians for real inputs or independent Bernoullis for binary
inputs, so the joint m(h, y) and the class posterior are both exact.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import logsumexp

from ..core import LogLikEstimate, MetaModel, Space, check_finite
from ..errors import BadParams
from .config import TrainConfig
from .gmm import (
    VARIANCE_FLOOR,
    GmmParams,
    em_gaussian,
    gaussian_component_logpdf,
    kmeans_pp_init,
    sample_categorical,
    sample_from_log_probs,
    weighted_em,
    weighted_log_likelihood,
)

PROB_FLOOR = 1e-6


def bernoulli_component_logpdf(x, probs) -> np.ndarray:
    """(n, K) matrix of sum_j log Bernoulli(x_j; probs_kj)."""
    return x @ np.log(probs).T + (1.0 - x) @ np.log1p(-probs).T


class ClassMixture(MetaModel):
    family = "classmix"

    def __init__(self, weights, emission: str, n_classes: int, means=None, variances=None, probs=None):
        if emission not in ("gaussian", "bernoulli"):
            raise BadParams(f"unknown emission {emission!r}")
        w = np.asarray(weights, dtype=np.float64)
        if w.ndim != 1 or n_classes < 1 or w.size % n_classes:
            raise BadParams("weight vector length must be a multiple of the class count")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise BadParams("mixture weights must lie on the simplex")
        self.weights = w
        self.emission = emission
        self.n_classes = int(n_classes)
        self.per_class = w.size // n_classes
        if emission == "gaussian":
            self.gmm = GmmParams(w, means, variances)
            self.probs = None
            self.visible_space = Space.real(self.gmm.dim)
        else:
            p = np.asarray(probs, dtype=np.float64)
            if p.ndim != 2 or p.shape[0] != w.size or np.any(p <= 0) or np.any(p >= 1):
                raise BadParams("Bernoulli probabilities must be a (K, d) array inside (0, 1)")
            self.gmm = None
            self.probs = p
            self.visible_space = Space.binary(p.shape[1])
        self.hidden_space = Space.categorical(w.size)
        self.fit_history: list[float] = []

    @property
    def n_components(self) -> int:
        return self.weights.size

    @property
    def component_labels(self) -> np.ndarray:
        return np.arange(self.n_components) // self.per_class

    @property
    def class_prior(self) -> np.ndarray:
        return self.weights.reshape(self.n_classes, self.per_class).sum(axis=1)

    def _log_weights(self):
        with np.errstate(divide="ignore"):
            return np.log(self.weights)

    def emission_logpdf(self, xs) -> np.ndarray:
        if self.emission == "gaussian":
            return gaussian_component_logpdf(xs, self.gmm.means, self.gmm.variances)
        return bernoulli_component_logpdf(xs, self.probs)

    def component_log_joint(self, xs) -> np.ndarray:
        return self._log_weights() + self.emission_logpdf(xs)

    def class_log_joint(self, xs) -> np.ndarray:
        """(n, C) matrix of log m(h, y)."""
        lj = self.component_log_joint(self.visible_space.validate(xs))
        return logsumexp(lj.reshape(lj.shape[0], self.n_classes, self.per_class), axis=2)

    def log_joint_with_label(self, xs, ys) -> np.ndarray:
        ys = np.asarray(ys, dtype=np.int64)
        if ys.ndim != 1 or np.any(ys < 0) or np.any(ys >= self.n_classes):
            raise BadParams("labels out of range")
        return self.class_log_joint(xs)[np.arange(ys.size), ys]

    def class_posterior(self, xs) -> np.ndarray:
        lc = self.class_log_joint(xs)
        with np.errstate(invalid="ignore"):
            post = np.exp(lc - logsumexp(lc, axis=1, keepdims=True))
        return post / post.sum(axis=1, keepdims=True)

    def log_marginal_visible(self, xs, n_samples=1, rng=None):
        xs = self.visible_space.validate(xs)
        return LogLikEstimate.exact(logsumexp(self.component_log_joint(xs), axis=1))

    def sample_posterior(self, xs, rng):
        return sample_categorical(self.component_log_joint(self.visible_space.validate(xs)), rng)

    def sample_conditional_visible(self, hs, rng):
        hs = self.hidden_space.validate(hs)
        if self.emission == "gaussian":
            z = rng.standard_normal((hs.size, self.gmm.dim))
            return self.gmm.means[hs] + np.sqrt(self.gmm.variances[hs]) * z
        p = self.probs[hs]
        return (rng.random(p.shape) < p).astype(np.float64)

    def sample_prior_hidden(self, n, rng):
        return sample_from_log_probs(self._log_weights(), n, rng)

    def log_marginal_hidden(self, hs):
        return LogLikEstimate.exact(self._log_weights()[self.hidden_space.validate(hs)])

    def prior_neg_entropy(self) -> float:
        w = self.weights[self.weights > 0]
        return math.fsum(w * np.log(w))

    def exact_log_joint(self, cap=2**22):
        if self.emission != "bernoulli":
            return super().exact_log_joint(cap)
        states = self.visible_space.enumerate(cap / self.n_components)
        return self.component_log_joint(states)

    def get_params(self):
        if self.emission == "gaussian":
            return {"weights": self.weights, "means": self.gmm.means, "variances": self.gmm.variances}
        return {"weights": self.weights, "probs": self.probs}

    def get_meta(self):
        return {"emission": self.emission, "n_classes": self.n_classes}

    @classmethod
    def from_params(cls, meta, params):
        return cls(params["weights"], meta["emission"], int(meta["n_classes"]), means=params.get("means"),
                   variances=params.get("variances"), probs=params.get("probs"))


def _kmeanspp(x, p, K, rng, first=None):
    """k-means++ seeding; optional ``first`` centers are kept."""
    centers = [] if first is None else list(first)
    if not centers:
        centers.append(x[rng.choice(x.shape[0], p=p)])
    d2 = np.min([np.sum((x - c) ** 2, axis=1) for c in centers], axis=0)
    while len(centers) < K:
        score = p * d2
        idx = rng.choice(x.shape[0], p=p if score.sum() <= 0 else score / score.sum())
        centers.append(x[idx])
        d2 = np.minimum(d2, np.sum((x - x[idx]) ** 2, axis=1))
    return np.array(centers)


def _init_centers(x, w, labels, C, K, rng, init):
    if init == "unsupervised":
        return None
    centers = []
    for y in range(C):
        sel = (labels == y) & (w > 0)
        if not np.any(sel):
            raise BadParams(f"class {y} has no labeled rows to initialize from")
        xs = x[sel]
        distinct = np.unique(xs, axis=0)
        ps = w[sel] / w[sel].sum()
        own = _kmeanspp(xs, ps, min(K, distinct.shape[0]), rng)
        # too few distinct labeled points: continue seeding over all rows
        centers.append(_kmeanspp(x, w / w.sum(), K, rng, first=own) if own.shape[0] < K else own)
    return np.concatenate(centers)


def class_mixture_fit_em(
    data,
    labels,
    n_classes: int,
    per_class: int,
    cfg: TrainConfig,
    rng: np.random.Generator,
    weights=None,
    emission: str = "gaussian",
    init: str = "labels",
    clamp: bool = True,
) -> ClassMixture:
    """Weighted EM for a class-conditional mixture.

    ``labels`` holds a class per row, or -1 for unlabeled rows. With
    ``clamp`` the responsibilities of labeled rows are restricted to their
    class's components, so the objective is the weighted sum of log m(h)
    over unlabeled rows and log m(h, y) over labeled rows. ``init`` is
    ``"labels"`` (per-class seeding from labeled rows) or
    ``"unsupervised"`` (the same k-means++ seeding as a plain GMM fit).
    """
    x = np.asarray(data, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = x.shape[0]
    if x.ndim != 2 or labels.shape != (n,):
        raise BadParams("data must be (n, d) with one label per row")
    if np.any(labels >= n_classes) or np.any(labels < -1):
        raise BadParams("labels must be -1 or in [0, C)")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (n,) or np.any(w < 0) or not np.any(w > 0):
        raise BadParams("weights must be nonnegative, not all zero, one per row")
    K = n_classes * per_class
    if init not in ("labels", "unsupervised"):
        raise BadParams(f"unknown class-mixture init {init!r}")

    mask = None
    labeled = labels >= 0
    if clamp and np.any(labeled & (w > 0)):
        comp_class = np.arange(K) // per_class
        mask = np.ones((n, K), dtype=bool)
        mask[labeled] = comp_class[None, :] == labels[labeled, None]

    if emission == "gaussian":
        if init == "unsupervised":
            start = kmeans_pp_init(x, w, K, rng, cfg.variance_floor)
        else:
            centers = _init_centers(x, w, labels, n_classes, per_class, rng, init)
            p = w / w.sum()
            var = np.maximum(p @ (x - p @ x) ** 2, cfg.variance_floor)
            start = GmmParams(np.full(K, 1.0 / K), centers, np.tile(var, (K, 1)))
        params, history = em_gaussian(x, w, start, cfg, mask=mask, variance_floor=cfg.variance_floor)
        model = ClassMixture(params.weights, "gaussian", n_classes, means=params.means, variances=params.variances)
    elif emission == "bernoulli":
        if not np.all((x == 0) | (x == 1)):
            raise BadParams("Bernoulli emissions need binary data")
        if init == "unsupervised":
            centers = _kmeanspp(x, w / w.sum(), K, rng)
        else:
            centers = _init_centers(x, w, labels, n_classes, per_class, rng, init)
        state = {"probs": 0.25 + 0.5 * centers}

        def logpdf(x):
            return bernoulli_component_logpdf(x, state["probs"])

        def m_step(rw, nk):
            state["probs"] = np.clip((rw.T @ x) / nk[:, None], PROB_FLOOR, 1 - PROB_FLOOR)

        def reseed(dead, worst):
            state["probs"][dead] = 0.25 + 0.5 * x[worst]

        mix, history = weighted_em(x, w, np.full(K, 1.0 / K), logpdf, m_step, reseed, cfg, mask)
        check_finite("class-mixture parameters", state["probs"])
        model = ClassMixture(mix, "bernoulli", n_classes, probs=state["probs"])
    else:
        raise BadParams(f"unknown emission {emission!r}")
    model.fit_history = history
    return model


def clamped_objective(model: ClassMixture, x, labels, weights) -> float:
    """Weighted mean of log m(h) (unlabeled rows) and log m(h, y) (labeled rows)."""
    lj = model.component_log_joint(np.asarray(x, dtype=np.float64))
    labels = np.asarray(labels)
    labeled = labels >= 0
    comp_class = model.component_labels
    mask = np.ones_like(lj, dtype=bool)
    mask[labeled] = comp_class[None, :] == labels[labeled, None]
    return weighted_log_likelihood(np.where(mask, lj, -np.inf), np.asarray(weights, dtype=np.float64))


__all__ = [
    "ClassMixture",
    "PROB_FLOOR",
    "VARIANCE_FLOOR",
    "bernoulli_component_logpdf",
    "class_mixture_fit_em",
    "clamped_objective",
]
