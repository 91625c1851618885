"""Cascaded meta-models: chained sampling and inference, the per-layer
lower bound, greedy layer-wise training and convergence diagnostics."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import LogLikEstimate, MetaModel, Space, SpaceKind
from .dataset import Dataset, as_dataset
from .errors import BadParams, IncompatibleSpaces
from .metamodels.config import TrainConfig
from .metamodels.specs import ModelSpec
from .serialize import cascade_from_bytes, cascade_to_bytes


def check_chain(models: Sequence[MetaModel]) -> None:
    """Raise IncompatibleSpaces unless the models form a valid cascade."""
    if not models:
        raise IncompatibleSpaces("a cascade needs at least one model")
    for i in range(1, len(models)):
        if models[i].visible_space != models[i - 1].hidden_space:
            raise IncompatibleSpaces(
                f"model {i} visible space {models[i].visible_space} != model {i - 1} hidden space "
                f"{models[i - 1].hidden_space}")
    seen_real = False
    for i, m in enumerate(models):
        if m.visible_space.kind is SpaceKind.REAL:
            seen_real = True
        elif seen_real and m.visible_space.kind is SpaceKind.BINARY:
            raise IncompatibleSpaces(f"binary-visible model {i} sits above a real-visible model")


class CascadeModel:
    """An ordered chain m_1, ..., m_k; m_i's visible variable is h_{i-1}."""

    def __init__(self, models: Sequence[MetaModel]):
        models = tuple(models)
        check_chain(models)
        self.models = models

    def __len__(self) -> int:
        return len(self.models)

    @property
    def visible_space(self) -> Space:
        return self.models[0].visible_space

    @property
    def top(self) -> MetaModel:
        return self.models[-1]

    @property
    def exact_visible(self) -> bool:
        return len(self.models) == 1 and self.models[0].exact_visible

    def append(self, model: MetaModel) -> "CascadeModel":
        return CascadeModel(self.models + (model,))

    def sample(self, n: int, rng, return_all: bool = False):
        """Top-down ancestral sampling; with ``return_all`` also h_1..h_k."""
        if n < 1:
            raise BadParams("n must be >= 1")
        h = self.top.sample_prior_hidden(n, rng)
        layers = [h]
        for m in reversed(self.models):
            h = m.sample_conditional_visible(h, rng)
            layers.append(h)
        layers.reverse()
        return (layers[0], layers[1:]) if return_all else layers[0]

    def infer(self, xs, rng, depth: int | None = None) -> list[np.ndarray]:
        """Bottom-up draws h_i ~ m_i(h_i | h_{i-1}) for i = 1..depth."""
        h = self.visible_space.validate(xs)
        out = []
        for m in self.models[: len(self.models) if depth is None else depth]:
            h = m.sample_posterior(h, rng)
            out.append(h)
        return out

    def to_bytes(self) -> bytes:
        return cascade_to_bytes(self.models)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "CascadeModel":
        return cls(cascade_from_bytes(buf))

    def log_marginal_visible(self, xs, n_samples: int = 1, rng=None, n_mc: int = 1) -> LogLikEstimate:
        """Per-example estimate of log p_k(x): exact for a single exact model,
        otherwise the per-example decomposed lower bound."""
        if len(self.models) == 1:
            return self.models[0].log_marginal_visible(xs, n_samples, rng)
        rng = np.random.default_rng(0) if rng is None else rng
        return per_example_bound(self, xs, n_mc, rng, n_samples)


def cascade_sample(model: CascadeModel, n: int, rng, return_all: bool = False):
    return model.sample(n, rng, return_all)


def cascade_infer(model: CascadeModel, x, rng) -> list[np.ndarray]:
    return model.infer(x, rng)


# ---------------------------------------------------------------------------
# the decomposed bound


@dataclass
class BoundReport:
    terms: list[LogLikEstimate]
    n_mc: int
    total: float = field(init=False)
    total_std_err: float = field(init=False)

    def __post_init__(self):
        self.total = math.fsum(float(t.value) for t in self.terms)
        self.total_std_err = math.sqrt(math.fsum(float(t.std_err) ** 2 for t in self.terms))

    @property
    def values(self) -> list[float]:
        return [float(t.value) for t in self.terms]

    def to_text(self) -> str:
        lines = [f"{i + 1} {float(t.value)!r} {float(t.std_err)!r}" for i, t in enumerate(self.terms)]
        lines.append(f"total {self.total!r} {self.total_std_err!r}")
        return "\n".join(lines) + "\n"


def _tile(space: Space, xs: np.ndarray, reps: int) -> np.ndarray:
    return np.tile(xs, reps) if space.kind is SpaceKind.CATEGORICAL else np.tile(xs, (reps, 1))


def term_samples(model: CascadeModel, xs, n_mc: int, rng, iw_samples: int = 16, return_hidden: bool = False):
    """Per-layer Monte Carlo draws of the bound terms.

    Returns a list whose first entry is the per-example estimate of
    log m_1(x) and whose entry i >= 1 is an ``(n_mc, n)`` array of paired
    differences log m_{i+1}(h_i) - log m_i(h_i) along one shared chain of
    posterior draws per replicate. With ``return_hidden`` the chain is
    continued through the top model and its h_k draws (``n_mc * n`` rows,
    replicate-major) are returned as well.
    """
    if n_mc < 1:
        raise BadParams("n_mc must be >= 1")
    xs = model.visible_space.validate(xs)
    n = xs.shape[0]
    first = model.models[0].log_marginal_visible(xs, iw_samples, rng)
    out: list = [first]
    h = _tile(model.visible_space, xs, n_mc)
    for i in range(1, len(model.models)):
        below, above = model.models[i - 1], model.models[i]
        h = below.sample_posterior(h, rng)
        up = above.log_marginal_visible(h, iw_samples, rng).value
        down = below.log_marginal_hidden(h).value
        out.append((np.asarray(up) - np.asarray(down)).reshape(n_mc, n))
    if return_hidden:
        return out, model.top.sample_posterior(h, rng)
    return out


def _mc_mean_and_se(d: np.ndarray, p: np.ndarray) -> tuple[float, float]:
    """Weighted mean over examples of the replicate mean, with MC error.

    With one replicate the within-example variance is not identifiable and
    the (conservative) between-example spread is used instead.
    """
    n_mc = d.shape[0]
    per_example = d.mean(axis=0)
    value = math.fsum(p * per_example)
    if n_mc > 1:
        var = d.var(axis=0, ddof=1)
        se = math.sqrt(math.fsum(p * p * var) / n_mc)
    else:
        se = math.sqrt(math.fsum(p * p * (per_example - value) ** 2))
    return value, se


def bound_terms(model: CascadeModel, data, n_mc: int = 1, rng=None, iw_samples: int = 16) -> BoundReport:
    """Estimate L_1..L_k over the (weighted) empirical distribution of ``data``."""
    ds = as_dataset(data, model.visible_space)
    rng = np.random.default_rng(0) if rng is None else rng
    p = ds.probabilities
    samples = term_samples(model, ds.points, n_mc, rng, iw_samples)
    first = samples[0]
    v1 = math.fsum(p * np.asarray(first.value))
    se1 = math.sqrt(math.fsum(p * p * np.asarray(first.std_err) ** 2))
    terms = [LogLikEstimate(v1, 0.0, True) if first.is_exact else LogLikEstimate(v1, se1, False)]
    for d in samples[1:]:
        value, se = _mc_mean_and_se(d, p)
        terms.append(LogLikEstimate(value, se, False))
    return BoundReport(terms, n_mc)


def per_example_bound(model: CascadeModel, xs, n_mc: int, rng, iw_samples: int = 16) -> LogLikEstimate:
    """Per-example lower bound on log p_k(x): L_1(x) + sum_i mean_r L_i(x)."""
    samples = term_samples(model, xs, n_mc, rng, iw_samples)
    value = np.asarray(samples[0].value, dtype=np.float64).copy()
    var = np.asarray(samples[0].std_err, dtype=np.float64) ** 2
    for d in samples[1:]:
        value += d.mean(axis=0)
        if d.shape[0] > 1:
            var = var + d.var(axis=0, ddof=1) / d.shape[0]
    return LogLikEstimate(value, np.sqrt(var), False)


# ---------------------------------------------------------------------------
# greedy training


@dataclass(frozen=True)
class CascadeOptions:
    """How a cascade is grown.

    ``resample_each_epoch`` redraws the posterior samples that stochastic
    trainers (RBM, VAE) see every epoch; turning it off trains on one fixed
    draw. EM-fitted models always use a fixed draw. ``posterior_copies``
    draws that many posterior samples per example for the training set.
    """

    n_mc: int = 1
    iw_samples: int = 16
    resample_each_epoch: bool = True
    posterior_copies: int = 1
    stop_on_plateau: bool = False

    def __post_init__(self):
        if self.n_mc < 1 or self.iw_samples < 1 or self.posterior_copies < 1:
            raise BadParams("n_mc, iw_samples and posterior_copies must be >= 1")


def train_first(data, spec: ModelSpec, cfg: TrainConfig, rng) -> CascadeModel:
    ds = as_dataset(data)
    spec.check_visible(ds.space)
    model = spec.fit(ds.points, rng, cfg, weights=ds.weights, visible=ds.space)
    return CascadeModel([model])


def _grow(model: CascadeModel, spec: ModelSpec, ds: Dataset, cfg: TrainConfig, rng,
          options: CascadeOptions) -> CascadeModel:
    visible = model.top.hidden_space
    try:
        spec.check_visible(visible)
    except IncompatibleSpaces as exc:
        raise IncompatibleSpaces(f"cannot stack {spec.family} on layer {len(model)}: {exc}") from None
    reps = options.posterior_copies
    x_rep = _tile(ds.space, ds.points, reps)
    w_rep = None if ds.weights is None else np.tile(ds.weights, reps)

    def draw(r):
        return model.infer(x_rep, r)[-1]

    fixed = spec.uses_fixed_samples or not options.resample_each_epoch
    h = draw(rng)
    new = spec.fit(h, rng, cfg, weights=w_rep, resample=None if fixed else draw, below=model.top,
                   visible=visible)
    return model.append(new)


def incorporate_next(model: CascadeModel, spec: ModelSpec, data, cfg: TrainConfig, rng,
                     options: CascadeOptions = CascadeOptions()) -> tuple[CascadeModel, LogLikEstimate]:
    """Train one more model on inferred samples from the frozen cascade.

    Returns the grown cascade and the estimate of the new term L_k.
    """
    ds = as_dataset(data, model.visible_space)
    grown = _grow(model, spec, ds, cfg, rng, options)
    report = bound_terms(grown, ds, options.n_mc, rng, options.iw_samples)
    return grown, report.terms[-1]


def greedy_train(data, recipe: Sequence[ModelSpec], cfg: TrainConfig, rng,
                 options: CascadeOptions = CascadeOptions(),
                 on_stage: Callable[[int, CascadeModel, BoundReport], None] | None = None,
                 ) -> tuple[CascadeModel, list[BoundReport]]:
    """Layer-wise training; one BoundReport after each incorporation."""
    if not recipe:
        raise BadParams("recipe must be nonempty")
    ds = as_dataset(data)
    model = train_first(ds, recipe[0], cfg, rng)
    reports = [bound_terms(model, ds, options.n_mc, rng, options.iw_samples)]
    if on_stage is not None:
        on_stage(1, model, reports[-1])
    thresholds = DiagnosisThresholds()
    quiet = 0
    for spec in recipe[1:]:
        model = _grow(model, spec, ds, cfg, rng, options)
        reports.append(bound_terms(model, ds, options.n_mc, rng, options.iw_samples))
        if on_stage is not None:
            on_stage(len(model), model, reports[-1])
        last = reports[-1].terms[-1]
        quiet = quiet + 1 if abs(float(last.value)) <= thresholds.zero_sigmas * float(last.std_err) else 0
        if options.stop_on_plateau and quiet >= 2:
            break
    return model, reports


# ---------------------------------------------------------------------------
# diagnostics


class Verdict(str, enum.Enum):
    HEALTHY = "Healthy"
    UNDERTRAINED = "Undertrained"
    NEAR_OPTIMAL = "NearOptimal"
    CONVERGED = "Converged"


@dataclass(frozen=True)
class DiagnosisThresholds:
    """Undertrained below -(neg_sigmas * se + neg_offset); NearOptimal
    within zero_sigmas * se of zero; Converged when |gap| <= gap."""

    neg_sigmas: float = 5.0
    neg_offset: float = 0.5
    zero_sigmas: float = 3.0
    gap: float = 0.05


@dataclass(frozen=True)
class TermDiagnosis:
    verdict: Verdict
    value: float
    std_err: float
    gap: float | None = None


def diagnose_term(term: LogLikEstimate, gap: float | None = None,
                  thresholds: DiagnosisThresholds = DiagnosisThresholds()) -> TermDiagnosis:
    value, se = float(term.value), float(term.std_err)
    if value < -(thresholds.neg_sigmas * se + thresholds.neg_offset):
        verdict = Verdict.UNDERTRAINED
    elif gap is not None and abs(gap) <= thresholds.gap:
        verdict = Verdict.CONVERGED
    elif abs(value) <= thresholds.zero_sigmas * se:
        verdict = Verdict.NEAR_OPTIMAL
    else:
        verdict = Verdict.HEALTHY
    return TermDiagnosis(verdict, value, se, gap)


@dataclass(frozen=True)
class GapReport:
    """``value`` is the magnitude of ``signed`` = data_term - prior_term;
    the signed difference has no fixed sign away from the optimum."""

    value: float
    std_err: float
    data_term: float
    prior_term: float
    signed: float


def convergence_gap(model: CascadeModel, data, n_mc: int = 1, rng=None) -> GapReport:
    """E_D E_q[log m_k(h_k)] - E_{m_k(h_k)}[log m_k(h_k)].

    The second term is the top prior's negative entropy (analytic for a VAE
    top, enumerated for discrete tops). The reported value is the absolute
    difference, so Converged means close to equality from either side.
    """
    prior_term = model.top.prior_neg_entropy()
    ds = as_dataset(data, model.visible_space)
    rng = np.random.default_rng(0) if rng is None else rng
    if n_mc < 1:
        raise BadParams("n_mc must be >= 1")
    h = model.infer(_tile(ds.space, ds.points, n_mc), rng)[-1]
    d = np.asarray(model.top.log_marginal_hidden(h).value).reshape(n_mc, len(ds))
    data_term, se = _mc_mean_and_se(d, ds.probabilities)
    signed = data_term - prior_term
    return GapReport(abs(signed), se, data_term, prior_term, signed)
