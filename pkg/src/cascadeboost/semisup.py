"""Semi-supervised boosting: labels enter only through a class-conditional
top model, and classification falls out of the generative posterior."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cascade import (BoundReport, CascadeModel, CascadeOptions, _mc_mean_and_se, _tile, greedy_train,
                      term_samples)
from .core import LogLikEstimate
from .dataset import UNLABELED, Dataset, LabeledDataset
from .errors import BadParams, EmptyLabeledSet, IncompatibleSpaces
from .metamodels.classmix import ClassMixture
from .metamodels.config import TrainConfig
from .metamodels.specs import ClassMixSpec, ModelSpec


@dataclass(frozen=True)
class SemiSupConfig:
    """Weights of the unlabeled (alpha) and labeled (beta) objectives.

    Leaving both unset gives alpha = |D_u| / (|D_u| + |D_l|). With
    ``lower_on_unlabeled`` the lower models see only D_u instead of the
    weighted pool.
    """

    alpha: float | None = None
    beta: float | None = None
    lower_on_unlabeled: bool = False

    def resolve(self, n_unlabeled: int, n_labeled: int) -> tuple[float, float]:
        alpha, beta = self.alpha, self.beta
        if alpha is None and beta is None:
            alpha = n_unlabeled / (n_unlabeled + n_labeled)
            beta = 1.0 - alpha
        elif alpha is None:
            alpha = 1.0 - beta
        elif beta is None:
            beta = 1.0 - alpha
        if alpha < 0 or beta < 0 or abs(alpha + beta - 1.0) > 1e-12:
            raise BadParams(f"alpha={alpha}, beta={beta} must be nonnegative and sum to 1")
        if alpha > 0 and n_unlabeled == 0:
            raise BadParams("alpha > 0 needs unlabeled data")
        return float(alpha), float(beta)


def canonical_labeled(data: LabeledDataset) -> LabeledDataset:
    """Labeled pairs sorted by (point, label) so training is independent of
    the order they were supplied in."""
    if data.n_labeled == 0:
        return data
    keys = [data.labels] + [data.labeled[:, j] for j in range(data.labeled.shape[1] - 1, -1, -1)]
    order = np.lexsort(keys)
    return LabeledDataset(data.unlabeled, data.labeled[order], data.labels[order], data.n_classes, data.space)


def pooled_dataset(data: LabeledDataset, alpha: float, beta: float) -> Dataset:
    """D_u then D_l, weighted alpha/|D_u| and beta/|D_l|; labels -1 on D_u."""
    nu, nl = data.n_unlabeled, data.n_labeled
    points = np.concatenate([data.unlabeled, data.labeled]) if nu else data.labeled
    w = np.concatenate([np.full(nu, alpha / nu if nu else 0.0), np.full(nl, beta / nl)])
    labels = np.concatenate([np.full(nu, UNLABELED), data.labels])
    return Dataset(points, data.space, w, labels)


class SemiSupModel:
    """A cascade of n-1 unsupervised models under a class-conditional top."""

    def __init__(self, lower: CascadeModel, top: ClassMixture, alpha: float = 1.0, beta: float = 0.0):
        if top.visible_space != lower.top.hidden_space:
            raise IncompatibleSpaces("class-mixture top does not match the lower cascade")
        self.lower = lower
        self.top = top
        self.alpha = alpha
        self.beta = beta

    @property
    def n_classes(self) -> int:
        return self.top.n_classes

    @property
    def cascade(self) -> CascadeModel:
        return self.lower.append(self.top)

    @property
    def visible_space(self):
        return self.lower.visible_space


def semisup_train(data: LabeledDataset, recipe: Sequence[ModelSpec], cfg: TrainConfig, rng,
                  semi: SemiSupConfig = SemiSupConfig(), options: CascadeOptions = CascadeOptions()
                  ) -> tuple[SemiSupModel, list[BoundReport]]:
    """Train the lower models greedily on the pooled data, then fit the top
    by clamped EM on inferred representations."""
    if data.n_labeled == 0:
        raise EmptyLabeledSet("semi-supervised training needs labeled examples")
    if len(recipe) < 2 or not isinstance(recipe[-1], ClassMixSpec):
        raise BadParams("recipe needs at least one lower model and a class-mixture top")
    if recipe[-1].n_classes != data.n_classes:
        raise BadParams(f"top has {recipe[-1].n_classes} classes, data has {data.n_classes}")
    data = canonical_labeled(data)
    alpha, beta = semi.resolve(data.n_unlabeled, data.n_labeled)
    pooled = pooled_dataset(data, alpha, beta)
    lower_data = pooled
    if semi.lower_on_unlabeled:
        lower_data = Dataset(data.unlabeled, data.space)
    lower, reports = greedy_train(lower_data, recipe[:-1], cfg, rng, options)

    spec = recipe[-1]
    spec.check_visible(lower.top.hidden_space)
    reps = options.posterior_copies
    x_rep = _tile(pooled.space, pooled.points, reps)
    h = lower.infer(x_rep, rng)[-1]
    w = np.tile(pooled.weights, reps)
    labels = np.tile(pooled.labels, reps)
    if beta > 0:
        top = spec.fit(h, rng, cfg, weights=w, visible=lower.top.hidden_space, labels=labels, init="labels")
    else:
        # the labeled term vanishes: plain mixture fitting on the pool
        top = spec.fit(h, rng, cfg, weights=w, visible=lower.top.hidden_space, labels=None)
    model = SemiSupModel(lower, top, alpha, beta)
    reports.append(semisup_bound_terms(model, data, options.n_mc, rng, options.iw_samples))
    return model, reports


def semisup_bound_terms(model: SemiSupModel, data: LabeledDataset, n_mc: int = 1, rng=None,
                        iw_samples: int = 16) -> BoundReport:
    """J_1..J_n over the pooled distribution alpha p_{D_u} + beta p_{D_l}."""
    rng = np.random.default_rng(0) if rng is None else rng
    pooled = pooled_dataset(canonical_labeled(data), model.alpha, model.beta)
    p = pooled.probabilities
    samples, h = term_samples(model.lower, pooled.points, n_mc, rng, iw_samples, return_hidden=True)
    first = samples[0]
    v1 = math.fsum(p * np.asarray(first.value))
    if first.is_exact:
        terms = [LogLikEstimate(v1, 0.0, True)]
    else:
        terms = [LogLikEstimate(v1, math.sqrt(math.fsum(p * p * np.asarray(first.std_err) ** 2)), False)]
    for d in samples[1:]:
        terms.append(LogLikEstimate(*_mc_mean_and_se(d, p), False))
    n = len(pooled)
    labels = np.tile(pooled.labels, n_mc)
    class_lj = model.top.class_log_joint(h)
    labeled = labels >= 0
    up = np.logaddexp.reduce(class_lj, axis=1)
    up[labeled] = class_lj[labeled, labels[labeled]]
    down = np.asarray(model.lower.top.log_marginal_hidden(h).value)
    terms.append(LogLikEstimate(*_mc_mean_and_se((up - down).reshape(n_mc, n), p), False))
    return BoundReport(terms, n_mc)


def class_posterior(model: SemiSupModel, xs, n_mc: int = 1, rng=None) -> np.ndarray:
    """q(y | x) averaged over n_mc inferred h_{n-1} per example."""
    if n_mc < 1:
        raise BadParams("n_mc must be >= 1")
    rng = np.random.default_rng(0) if rng is None else rng
    xs = model.visible_space.validate(xs)
    n = xs.shape[0]
    h = model.lower.infer(_tile(model.visible_space, xs, n_mc), rng)[-1]
    post = model.top.class_posterior(h).reshape(n_mc, n, model.n_classes).mean(axis=0)
    return post / post.sum(axis=1, keepdims=True)


def classify(model: SemiSupModel, xs, n_mc: int = 1, rng=None) -> tuple[np.ndarray, np.ndarray]:
    """Argmax label (ties go to the lowest index) and the class posterior."""
    post = class_posterior(model, xs, n_mc, rng)
    return np.argmax(post, axis=1), post


def accuracy_eval(model: SemiSupModel, xs, ys, n_mc: int = 1, rng=None) -> float:
    ys = np.asarray(ys, dtype=np.int64)
    if ys.size == 0:
        raise BadParams("empty test set")
    pred, _ = classify(model, xs, n_mc, rng)
    return float(np.mean(pred == ys))


def classification_report(pred, ys, n_classes: int) -> str:
    """Per-class precision and recall plus overall accuracy, one line each."""
    pred, ys = np.asarray(pred), np.asarray(ys)
    lines = []
    for c in range(n_classes):
        tp = int(np.sum((pred == c) & (ys == c)))
        n_pred, n_true = int(np.sum(pred == c)), int(np.sum(ys == c))
        precision = tp / n_pred if n_pred else 0.0
        recall = tp / n_true if n_true else 0.0
        lines.append(f"class {c} precision {precision!r} recall {recall!r} support {n_true}")
    lines.append(f"accuracy {float(np.mean(pred == ys))!r}")
    return "\n".join(lines) + "\n"
