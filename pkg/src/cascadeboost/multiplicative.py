"""Multiplicative (parallel) boosting: geometric ensembles, importance
estimates of the partition function, reweighted training, an independence
Metropolis-Hastings sampler, and hybrids whose components are cascades."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .cascade import CascadeModel, CascadeOptions, greedy_train, per_example_bound
from .core import LogLikEstimate, MetaModel, Space
from .dataset import Dataset, as_dataset
from .errors import BadParams, DegenerateWeights, FormatError, IncompatibleSpaces, SizeTooLarge, Unsupported, \
    ZeroAcceptance
from .metamodels.config import TrainConfig
from .metamodels.specs import ModelSpec
from .serialize import cascade_from_bytes, cascade_to_bytes, model_from_bytes, model_to_bytes

MIN_ESS = 10.0
MIN_ACCEPTANCE = 1e-3


class DensityComponent:
    """One factor M_i^alpha_i of the ensemble.

    A cascade over discrete spaces is evaluated exactly by enumeration
    (the table is built once and cached); otherwise its decomposed bound
    is used as a plug-in log density and flagged as inexact.
    """

    def __init__(self, model: MetaModel | CascadeModel, alpha: float = 1.0):
        if not 0.0 <= alpha <= 1.0:
            raise BadParams(f"alpha must lie in [0, 1], got {alpha}")
        if isinstance(model, CascadeModel) and len(model) == 1:
            model = model.models[0]
        if not isinstance(model, (MetaModel, CascadeModel)):
            raise BadParams(f"unsupported component {type(model).__name__}")
        self.model = model
        self.alpha = float(alpha)
        self._table: np.ndarray | None = None
        if isinstance(model, CascadeModel):
            from .oracle import EnumerableCascade
            try:
                self._table = EnumerableCascade(model).log_marginal()
            except (Unsupported, SizeTooLarge):
                self._table = None

    @property
    def visible_space(self) -> Space:
        return self.model.visible_space

    @property
    def is_exact(self) -> bool:
        if isinstance(self.model, CascadeModel):
            return self._table is not None
        return bool(self.model.exact_visible)

    def log_density(self, xs, n_mc: int = 1, rng=None, iw_samples: int = 16) -> LogLikEstimate:
        rng = np.random.default_rng(0) if rng is None else rng
        if self._table is not None:
            return LogLikEstimate.exact(self._table[self.visible_space.index(xs)])
        if isinstance(self.model, CascadeModel):
            return per_example_bound(self.model, xs, n_mc, rng, iw_samples)
        return self.model.log_marginal_visible(xs, iw_samples, rng)

    def sample(self, n: int, rng) -> np.ndarray:
        if isinstance(self.model, CascadeModel):
            return self.model.sample(n, rng)
        return self.model.sample_visible(n, rng)


@dataclass(frozen=True)
class LogZEstimate:
    value: float
    std_err: float
    n: int
    proposal: int
    seed: int | None = None
    ess: float = math.nan

    def as_dict(self) -> dict:
        return {"value": self.value, "std_err": self.std_err, "n": self.n, "proposal": self.proposal,
                "seed": self.seed, "ess": self.ess}


@dataclass
class MultiplicativeEnsemble:
    components: list[DensityComponent]
    log_z: LogZEstimate | None = None
    timings: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.components:
            raise BadParams("an ensemble needs at least one component")
        space = self.components[0].visible_space
        for i, c in enumerate(self.components[1:], 1):
            if c.visible_space != space:
                raise IncompatibleSpaces(f"component {i} lives on {c.visible_space}, not {space}")

    @property
    def visible_space(self) -> Space:
        return self.components[0].visible_space

    @property
    def alphas(self) -> list[float]:
        return [c.alpha for c in self.components]

    @property
    def is_exact(self) -> bool:
        return all(c.is_exact for c in self.components)


def unnormalized_log_density(ens: MultiplicativeEnsemble, xs, n_mc: int = 1, rng=None,
                             iw_samples: int = 16) -> LogLikEstimate:
    """sum_i alpha_i log M_i(x) per example."""
    rng = np.random.default_rng(0) if rng is None else rng
    xs = ens.visible_space.validate(xs)
    value = np.zeros(xs.shape[0])
    var = np.zeros(xs.shape[0])
    exact = True
    for c in ens.components:
        if c.alpha == 0.0:
            continue
        est = c.log_density(xs, n_mc, rng, iw_samples)
        value = value + c.alpha * np.asarray(est.value)
        var = var + (c.alpha * np.asarray(est.std_err)) ** 2
        exact = exact and est.is_exact
    return LogLikEstimate.exact(value) if exact else LogLikEstimate(value, np.sqrt(var), False)


def effective_sample_size(log_w: np.ndarray) -> float:
    w = np.exp(log_w - log_w.max())
    return float(w.sum() ** 2 / (w * w).sum())


def _proposal(ens: MultiplicativeEnsemble, proposal) -> tuple[DensityComponent, int]:
    if proposal is None:
        return ens.components[0], 0
    if isinstance(proposal, int):
        return ens.components[proposal], proposal
    comp = proposal if isinstance(proposal, DensityComponent) else DensityComponent(proposal)
    if comp.visible_space != ens.visible_space:
        raise IncompatibleSpaces("proposal does not share the ensemble's visible space")
    return comp, -1


def importance_log_weights(ens: MultiplicativeEnsemble, xs, proposal: DensityComponent, n_mc: int = 1, rng=None,
                           iw_samples: int = 16) -> np.ndarray:
    log_u = unnormalized_log_density(ens, xs, n_mc, rng, iw_samples).value
    log_q = proposal.log_density(xs, n_mc, rng, iw_samples).value
    with np.errstate(invalid="ignore"):
        out = np.asarray(log_u) - np.asarray(log_q)
    if np.any(np.isnan(out)) or np.any(out == np.inf):
        raise DegenerateWeights("proposal does not cover the ensemble's support")
    return out


def estimate_log_partition(ens: MultiplicativeEnsemble, proposal=None, N: int = 10_000, rng=None,
                           n_mc: int = 1, iw_samples: int = 16, clip: bool = False,
                           seed: int | None = None) -> LogZEstimate:
    """Importance estimate of ln Z = ln E_q[exp(log u(x) - log q(x))].

    The standard error is the delta-method one, sd(w) / (sqrt(N) mean(w)).
    ``clip`` caps weights at their 99.9th percentile first.
    """
    if N < 2:
        raise BadParams("N must be >= 2")
    rng = np.random.default_rng(seed if seed is not None else 0) if rng is None else rng
    comp, pid = _proposal(ens, proposal)
    xs = comp.sample(N, rng)
    log_w = importance_log_weights(ens, xs, comp, n_mc, rng, iw_samples)
    if clip:
        log_w = np.minimum(log_w, np.quantile(log_w, 0.999))
    ess = effective_sample_size(log_w)
    if ess < MIN_ESS:
        raise DegenerateWeights(f"effective sample size {ess:.3g} < {MIN_ESS:g}")
    top = log_w.max()
    w = np.exp(log_w - top)
    mean = math.fsum(w) / N
    value = float(top + math.log(mean))
    se = float(np.std(w, ddof=1)) / (math.sqrt(N) * mean)
    return LogZEstimate(value, se, N, pid, seed, ess)


def normalized_log_likelihood(ens: MultiplicativeEnsemble, data, n_mc: int = 1, rng=None,
                              iw_samples: int = 16) -> LogLikEstimate:
    """E_D[log P(x)] = E_D[sum_i alpha_i log M_i(x)] - ln Z, with ln Z taken
    from the ensemble's stored estimate. The standard error combines the
    per-example estimator error with that of ln Z."""
    if ens.log_z is None:
        raise BadParams("ensemble has no ln Z estimate")
    ds = as_dataset(data, ens.visible_space)
    p = ds.probabilities
    est = unnormalized_log_density(ens, ds.points, n_mc, rng, iw_samples)
    value = math.fsum(p * np.asarray(est.value)) - ens.log_z.value
    var = math.fsum(p * p * np.asarray(est.std_err) ** 2) + ens.log_z.std_err ** 2
    return LogLikEstimate(value, math.sqrt(var), False)


def reweighting(log_density: np.ndarray, beta: float, base=None, clip: bool = False) -> np.ndarray:
    """Weights proportional to base * exp(-beta * log_density), mean 1."""
    if not 0.0 <= beta <= 1.0:
        raise BadParams(f"beta must lie in [0, 1], got {beta}")
    log_density = np.asarray(log_density, dtype=np.float64)
    n = log_density.size
    base = np.ones(n) if base is None else np.asarray(base, dtype=np.float64)
    with np.errstate(divide="ignore"):
        log_w = np.log(base) - beta * log_density
    if clip:
        finite = log_w[np.isfinite(log_w)]
        log_w = np.minimum(log_w, np.quantile(finite, 0.999))
    ess = effective_sample_size(log_w)
    if ess < min(MIN_ESS, float(np.count_nonzero(base))):
        raise DegenerateWeights(f"effective sample size {ess:.3g} of the reweighted data is below {MIN_ESS:g}")
    w = np.exp(log_w - logsumexp(log_w))
    return w * (n / math.fsum(w))


def reweighted_dataset(data, ens: MultiplicativeEnsemble, beta: float = 1.0, n_mc: int = 1, rng=None,
                       iw_samples: int = 16, clip: bool = False) -> Dataset:
    """The data restricted to its own points, weighted by P_{i-1}(x)^-beta."""
    ds = as_dataset(data, ens.visible_space)
    if len(ds) == 0:
        raise BadParams("data must be nonempty")
    if beta == 0.0:
        return ds.with_weights(ds.effective_weights * (len(ds) / math.fsum(ds.effective_weights)))
    log_u = unnormalized_log_density(ens, ds.points, n_mc, rng, iw_samples).value
    return ds.with_weights(reweighting(log_u, beta, ds.effective_weights, clip))


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class MultiplicativeOptions:
    """``n_partition`` proposal draws for ln Z (0 skips the estimate)."""

    n_partition: int = 10_000
    n_mc: int = 1
    iw_samples: int = 16
    clip: bool = False
    cascade: CascadeOptions = CascadeOptions()


def _train_component(spec, ds: Dataset, cfg: TrainConfig, rng, options: MultiplicativeOptions):
    if isinstance(spec, ModelSpec):
        spec.check_visible(ds.space)
        return spec.fit(ds.points, rng, cfg, weights=ds.weights, visible=ds.space)
    model, _ = greedy_train(ds, list(spec), cfg, rng, options.cascade)
    return model


def multiplicative_train(data, specs: Sequence, alphas: Sequence[float] | None = None,
                         betas: Sequence[float] | None = None, cfg: TrainConfig = TrainConfig(), rng=None,
                         options: MultiplicativeOptions = MultiplicativeOptions(), on_stage=None
                         ) -> MultiplicativeEnsemble:
    """M_0 on the data, then each M_i on the data reweighted by the
    ensemble so far. A spec that is a list of specs trains a cascade,
    giving a hybrid ensemble."""
    if not specs:
        raise BadParams("specs must be nonempty")
    n = len(specs)
    alphas = [1.0] * n if alphas is None else [float(a) for a in alphas]
    betas = [1.0] * n if betas is None else [float(b) for b in betas]
    if len(alphas) != n or len(betas) != n:
        raise BadParams("need one alpha and one beta per component")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    ds = as_dataset(data)
    comps: list[DensityComponent] = []
    for i, spec in enumerate(specs):
        if i == 0:
            train_ds = ds
        else:
            train_ds = reweighted_dataset(ds, MultiplicativeEnsemble(comps), betas[i], options.n_mc, rng,
                                          options.iw_samples, options.clip)
        comps.append(DensityComponent(_train_component(spec, train_ds, cfg, rng, options), alphas[i]))
        if on_stage is not None:
            on_stage(i, comps[-1], train_ds)
    ens = MultiplicativeEnsemble(comps)
    if options.n_partition:
        ens.log_z = estimate_log_partition(ens, None, options.n_partition, rng, options.n_mc, options.iw_samples,
                                           options.clip, seed=cfg.seed)
    return ens


def hybrid_build(components: Sequence, alphas: Sequence[float] | None = None) -> MultiplicativeEnsemble:
    """Wrap trained models or cascades as factors of one ensemble."""
    alphas = [1.0] * len(components) if alphas is None else list(alphas)
    if len(alphas) != len(components):
        raise BadParams("need one alpha per component")
    return MultiplicativeEnsemble([DensityComponent(m, a) for m, a in zip(components, alphas)])


# ---------------------------------------------------------------------------
# sampling


@dataclass(frozen=True)
class ChainConfig:
    burn_in: int = 1000
    thinning: int = 1
    proposal: int = 0
    n_chains: int = 1

    def __post_init__(self):
        if self.burn_in < 0 or self.thinning < 1 or self.n_chains < 1:
            raise BadParams("burn_in >= 0, thinning >= 1 and n_chains >= 1 are required")


@dataclass(frozen=True)
class McmcResult:
    samples: np.ndarray
    acceptance_rate: float
    burn_in_acceptance: float


def _accept_loop(log_w: np.ndarray, log_u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Independence MH over precomputed log weights; index of the state held
    after each step and whether each step accepted."""
    T = log_w.size
    state = np.empty(T, dtype=np.int64)
    accepted = np.zeros(T, dtype=bool)
    cur, cur_w = 0, log_w[0]
    log_r = np.log(log_u)
    for t in range(1, T):
        diff = log_w[t] - cur_w
        if diff >= 0 or log_r[t] < diff:
            cur, cur_w = t, log_w[t]
            accepted[t] = True
        state[t] = cur
    state[0] = 0
    return state, accepted


def _one_chain(ens, comp, n, chain: ChainConfig, rng, n_mc, iw_samples) -> tuple[np.ndarray, int, int, int]:
    # the chain starts at the first proposal draw, which counts as step 0
    T = 1 + chain.burn_in + n * chain.thinning
    xs = comp.sample(T, rng)
    log_w = importance_log_weights(ens, xs, comp, n_mc, rng, iw_samples)
    if np.isneginf(log_w[0]):
        raise DegenerateWeights("initial state has zero target density")
    state, accepted = _accept_loop(log_w, rng.random(T))
    keep = state[1 + chain.burn_in::chain.thinning][:n]
    burn = accepted[1:1 + chain.burn_in]
    return xs[keep], int(accepted[1:].sum()), int(burn.sum()), burn.size


def mcmc_sample(ens: MultiplicativeEnsemble, n: int, chain: ChainConfig = ChainConfig(), rng=None,
                n_mc: int = 1, iw_samples: int = 16, proposal=None) -> McmcResult:
    """Independence Metropolis-Hastings targeting the unnormalized density.

    Proposals and their weights are drawn in one batch, then a scalar
    accept loop runs over them. With several chains each one gets a spawned
    generator and an equal share of the n samples; outputs are concatenated.
    """
    if n < 1:
        raise BadParams("n must be >= 1")
    rng = np.random.default_rng(0) if rng is None else rng
    comp, _ = _proposal(ens, chain.proposal if proposal is None else proposal)
    rngs = [rng] if chain.n_chains == 1 else rng.spawn(chain.n_chains)
    shares = [n // chain.n_chains + (i < n % chain.n_chains) for i in range(chain.n_chains)]
    out, acc, burn_acc, burn_total, steps = [], 0, 0, 0, 0
    for r, m in zip(rngs, shares):
        if m == 0:
            continue
        xs, a, b, bt = _one_chain(ens, comp, m, chain, r, n_mc, iw_samples)
        out.append(xs)
        acc, burn_acc, burn_total = acc + a, burn_acc + b, burn_total + bt
        steps += chain.burn_in + m * chain.thinning
    burn_rate = burn_acc / burn_total if burn_total else 1.0
    if burn_total and burn_rate < MIN_ACCEPTANCE:
        raise ZeroAcceptance(f"acceptance rate {burn_rate:.3g} over burn-in is below {MIN_ACCEPTANCE:g}")
    return McmcResult(np.concatenate(out), acc / steps, burn_rate)


# ---------------------------------------------------------------------------
# manifests

MANIFEST = "ensemble.json"


def save_ensemble(ens: MultiplicativeEnsemble, directory) -> Path:
    """Write one record per component plus a JSON manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, c in enumerate(ens.components):
        if isinstance(c.model, CascadeModel):
            name, buf, kind = f"component_{i}.gbcs", cascade_to_bytes(c.model.models), "cascade"
        else:
            name, buf, kind = f"component_{i}.gbmr", model_to_bytes(c.model), "model"
        (directory / name).write_bytes(buf)
        entries.append({"file": name, "kind": kind, "alpha": c.alpha})
    manifest = {"format": "GBEN 1", "visible": str(ens.visible_space), "components": entries,
                "alphas": ens.alphas, "log_z": None if ens.log_z is None else ens.log_z.as_dict()}
    path = directory / MANIFEST
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def load_ensemble(directory) -> MultiplicativeEnsemble:
    directory = Path(directory)
    try:
        manifest = json.loads((directory / MANIFEST).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read ensemble manifest in {directory}: {exc}") from None
    if manifest.get("format") != "GBEN 1":
        raise FormatError("not an ensemble manifest")
    comps = []
    for entry in manifest["components"]:
        buf = (directory / entry["file"]).read_bytes()
        if entry["kind"] == "cascade":
            model = CascadeModel(cascade_from_bytes(buf))
        else:
            model = model_from_bytes(buf)
        comps.append(DensityComponent(model, entry["alpha"]))
    ens = MultiplicativeEnsemble(comps)
    if manifest.get("log_z") is not None:
        ens.log_z = LogZEstimate(**manifest["log_z"])
    return ens
