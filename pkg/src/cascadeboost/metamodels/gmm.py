"""Diagonal-covariance Gaussian mixtures fitted by weighted EM."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from ..core import LOG_2PI, LogLikEstimate, MetaModel, Space, check_finite
from ..errors import BadParams, DegenerateComponent
from .config import TrainConfig

VARIANCE_FLOOR = 1e-6


@dataclass(frozen=True)
class GmmParams:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, d)
    variances: np.ndarray  # (K, d)

    def __post_init__(self):
        w, mu, var = (np.asarray(a, dtype=np.float64) for a in (self.weights, self.means, self.variances))
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "variances", var)
        if w.ndim != 1 or mu.shape != (w.size, mu.shape[1]) or var.shape != mu.shape:
            raise BadParams("inconsistent GMM parameter shapes")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise BadParams("mixture weights must lie on the simplex")
        if np.any(var <= 0):
            raise BadParams("variances must be positive")

    @property
    def n_components(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.means.shape[1]


def sample_categorical(log_probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One draw per row of a (n, K) matrix of log-probabilities.

    Rows that are entirely -inf are treated as uniform.
    """
    top = log_probs.max(axis=1, keepdims=True)
    top[~np.isfinite(top)] = 0.0
    probs = np.exp(log_probs - top)
    probs[probs.sum(axis=1) == 0] = 1.0
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0]) * cdf[:, -1]
    idx = (cdf <= u[:, None]).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1).astype(np.int64)


def sample_from_log_probs(log_probs: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """n i.i.d. draws from a single categorical distribution."""
    probs = np.exp(log_probs - np.max(log_probs))
    cdf = np.cumsum(probs)
    idx = np.searchsorted(cdf, rng.random(n) * cdf[-1], side="right")
    return np.minimum(idx, probs.size - 1).astype(np.int64)


def gaussian_component_logpdf(x, means, variances) -> np.ndarray:
    """(n, K) matrix of log N(x_n; mean_k, diag(var_k))."""
    # direct differences: the expanded quadratic cancels badly at small variance
    logdet = np.sum(np.log(variances), axis=1)
    out = np.empty((x.shape[0], means.shape[0]))
    for k in range(means.shape[0]):
        diff = x - means[k]
        out[:, k] = np.sum(diff * diff / variances[k], axis=1)
    return -0.5 * (x.shape[1] * LOG_2PI + logdet + out)


class GMM(MetaModel):
    """Mixture of diagonal Gaussians; hidden variable is the component index."""

    family = "gmm"

    def __init__(self, params: GmmParams):
        self.params = params
        self.visible_space = Space.real(params.dim)
        self.hidden_space = Space.categorical(params.n_components)
        self.fit_history: list[float] = []

    def _log_weights(self):
        with np.errstate(divide="ignore"):
            return np.log(self.params.weights)

    def component_log_joint(self, xs) -> np.ndarray:
        p = self.params
        return self._log_weights() + gaussian_component_logpdf(xs, p.means, p.variances)

    def log_marginal_visible(self, xs, n_samples=1, rng=None):
        xs = self.visible_space.validate(xs)
        return LogLikEstimate.exact(logsumexp(self.component_log_joint(xs), axis=1))

    def responsibilities(self, xs) -> np.ndarray:
        xs = self.visible_space.validate(xs)
        lj = self.component_log_joint(xs)
        return np.exp(lj - logsumexp(lj, axis=1, keepdims=True))

    def sample_posterior(self, xs, rng):
        xs = self.visible_space.validate(xs)
        return sample_categorical(self.component_log_joint(xs), rng)

    def sample_conditional_visible(self, hs, rng):
        hs = self.hidden_space.validate(hs)
        p = self.params
        z = rng.standard_normal((hs.size, p.dim))
        return p.means[hs] + np.sqrt(p.variances[hs]) * z

    def sample_prior_hidden(self, n, rng):
        return sample_from_log_probs(self._log_weights(), n, rng)

    def log_marginal_hidden(self, hs):
        hs = self.hidden_space.validate(hs)
        return LogLikEstimate.exact(self._log_weights()[hs])

    def prior_neg_entropy(self) -> float:
        w = self.params.weights
        w = w[w > 0]
        return math.fsum(w * np.log(w))

    def get_params(self):
        p = self.params
        return {"weights": p.weights, "means": p.means, "variances": p.variances}

    @classmethod
    def from_params(cls, meta, params):
        return cls(GmmParams(params["weights"], params["means"], params["variances"]))


# ---------------------------------------------------------------------------
# weighted EM


def weighted_log_likelihood(log_joint: np.ndarray, weights: np.ndarray) -> float:
    """sum_n w_n log sum_k exp(log_joint[n, k]) / sum_n w_n, ignoring zero-weight rows."""
    active = weights > 0
    row = logsumexp(log_joint[active], axis=1)
    return float(np.dot(weights[active], row) / weights[active].sum())


def weighted_em(x, w, weights, logpdf, m_step, reseed, cfg: TrainConfig, mask=None):
    """Generic weighted EM over a mixture with per-component emissions.

    ``logpdf(x)`` gives the ``(n, K)`` component log-densities under the
    current emission parameters, ``m_step(rw, nk)`` refits them from the
    weighted responsibilities and ``reseed(dead, worst)`` moves dead
    components onto the given rows. ``mask`` optionally restricts which
    components each row may be assigned to (boolean ``(n, K)``); rows then
    contribute log sum over their allowed components. Returns the final
    mixture weights and the objective history (entry 0 is the objective
    at initialization).
    """
    w = np.asarray(w, dtype=np.float64)
    if np.any(w < 0) or not np.any(w > 0):
        raise BadParams("weights must be nonnegative and not all zero")
    log_mask = None if mask is None else np.where(mask, 0.0, -np.inf)
    total = w.sum()
    weights = np.asarray(weights, dtype=np.float64)
    with np.errstate(divide="ignore"):
        log_w = np.log(weights)

    def log_joint():
        lj = log_w + logpdf(x)
        return lj if log_mask is None else lj + log_mask

    lj = log_joint()
    history = [weighted_log_likelihood(lj, w)]
    reseeded: set[int] = set()
    for _ in range(cfg.em_max_iters):
        with np.errstate(invalid="ignore"):
            resp = np.exp(lj - logsumexp(lj, axis=1, keepdims=True))
        resp[w == 0] = 0.0
        rw = resp * w[:, None]
        nk = rw.sum(axis=0)
        dead = np.flatnonzero(nk <= 1e-12 * total)
        if dead.size:
            for k in dead:
                if k in reseeded:
                    raise DegenerateComponent(f"component {k} lost all responsibility mass twice")
                reseeded.add(int(k))
            # re-seed at the worst-explained points
            worst = np.argsort(np.where(w > 0, logsumexp(lj, axis=1), np.inf))[: dead.size]
            reseed(dead, worst)
            log_w = np.full_like(log_w, -math.log(log_w.size))
            lj = log_joint()
            history.append(weighted_log_likelihood(lj, w))
            continue
        m_step(rw, nk)
        with np.errstate(divide="ignore"):
            log_w = np.log(nk / nk.sum())
        lj = log_joint()
        history.append(weighted_log_likelihood(lj, w))
        if history[-1] - history[-2] < cfg.em_tol:
            break
    out = np.exp(log_w)
    return out / out.sum(), history


def em_gaussian(
    x: np.ndarray,
    w: np.ndarray,
    params: GmmParams,
    cfg: TrainConfig,
    mask: np.ndarray | None = None,
    variance_floor: float = VARIANCE_FLOOR,
) -> tuple[GmmParams, list[float]]:
    """Weighted EM for a diagonal GMM (see :func:`weighted_em`)."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    state = {"means": params.means.copy(), "var": params.variances.copy()}

    def logpdf(x):
        return gaussian_component_logpdf(x, state["means"], state["var"])

    def m_step(rw, nk):
        means = (rw.T @ x) / nk[:, None]
        var = np.empty_like(means)
        for k in range(means.shape[0]):
            diff = x - means[k]
            var[k] = rw[:, k] @ (diff * diff) / nk[k]
        state["means"], state["var"] = means, np.maximum(var, variance_floor)

    def reseed(dead, worst):
        total = w.sum()
        glob_mean = w @ x / total
        state["means"][dead] = x[worst]
        state["var"][dead] = np.maximum(w @ (x - glob_mean) ** 2 / total, variance_floor)

    weights, history = weighted_em(x, w, params.weights, logpdf, m_step, reseed, cfg, mask)
    check_finite("GMM parameters", state["means"], state["var"])
    return GmmParams(weights, state["means"], state["var"]), history


def kmeans_pp_init(x: np.ndarray, w: np.ndarray, K: int, rng: np.random.Generator,
                   variance_floor: float = VARIANCE_FLOOR) -> GmmParams:
    """Weighted k-means++ seeding of the means; shared global variance."""
    n = x.shape[0]
    p = w / w.sum()
    centers = [x[rng.choice(n, p=p)]]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for _ in range(1, K):
        score = p * d2
        if score.sum() <= 0:
            idx = rng.choice(n, p=p)
        else:
            idx = rng.choice(n, p=score / score.sum())
        centers.append(x[idx])
        d2 = np.minimum(d2, np.sum((x - x[idx]) ** 2, axis=1))
    mean = p @ x
    var = np.maximum(p @ (x - mean) ** 2, variance_floor)
    return GmmParams(np.full(K, 1.0 / K), np.array(centers), np.tile(var, (K, 1)))


def gmm_init_cover_standard_normal(K: int, d: int, jitter: float = 3e-5,
                                   rng: np.random.Generator | None = None) -> GmmParams:
    """K components that jointly reproduce N(0, I).

    Component 0 is exactly N(0, I); the others get mean jitter of scale
    ``jitter`` whose sum is zero (when K >= 3), so the mixture density
    deviates from N(0, I) only at second order in the jitter.
    """
    if K < 1:
        raise BadParams("K must be >= 1")
    rng = np.random.default_rng(20190312) if rng is None else rng
    means = np.zeros((K, d))
    if K > 1:
        j = rng.standard_normal((K - 1, d)) * jitter
        if K > 2:
            j -= j.mean(axis=0)
        means[1:] = j
    return GmmParams(np.full(K, 1.0 / K), means, np.ones((K, d)))


def gmm_fit_em(data, K: int, cfg: TrainConfig, rng: np.random.Generator,
               weights=None, init="kmeans++") -> GMM:
    """Fit a K-component diagonal GMM by weighted EM.

    ``init`` is ``"kmeans++"``, ``"cover"`` (see
    :func:`gmm_init_cover_standard_normal`) or a :class:`GmmParams`.
    """
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise BadParams("GMM data must be a nonempty (n, d) array")
    if K < 1:
        raise BadParams("K must be >= 1")
    w = np.ones(x.shape[0]) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (x.shape[0],) or np.any(w < 0) or not np.any(w > 0):
        raise BadParams("weights must be nonnegative, not all zero, one per row")
    if isinstance(init, GmmParams):
        start = init
    elif init == "cover":
        start = gmm_init_cover_standard_normal(K, x.shape[1])
    elif init == "kmeans++":
        start = kmeans_pp_init(x, w, K, rng, cfg.variance_floor)
    else:
        raise BadParams(f"unknown GMM init {init!r}")
    params, history = em_gaussian(x, w, start, cfg, variance_floor=cfg.variance_floor)
    model = GMM(params)
    model.fit_history = history
    return model
