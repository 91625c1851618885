"""Bernoulli-Bernoulli restricted Boltzmann machine with exact small-size
evaluation and CD-k training."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from ..core import ENUMERATION_CAP, LogLikEstimate, MetaModel, Space, check_finite, sigmoid, softplus
from ..errors import BadParams, SizeTooLarge
from .config import TrainConfig
from .gmm import sample_from_log_probs


@dataclass(frozen=True)
class RbmParams:
    W: np.ndarray  # (V, H)
    b_visible: np.ndarray  # (V,)
    c_hidden: np.ndarray  # (H,)

    def __post_init__(self):
        W = np.asarray(self.W, dtype=np.float64)
        b = np.asarray(self.b_visible, dtype=np.float64)
        c = np.asarray(self.c_hidden, dtype=np.float64)
        if W.ndim != 2 or b.shape != (W.shape[0],) or c.shape != (W.shape[1],):
            raise BadParams("inconsistent RBM parameter shapes")
        check_finite("RBM parameters", W, b, c)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b_visible", b)
        object.__setattr__(self, "c_hidden", c)

    @classmethod
    def zeros(cls, V: int, H: int) -> "RbmParams":
        return cls(np.zeros((V, H)), np.zeros(V), np.zeros(H))


def _binary_states(n: int) -> np.ndarray:
    idx = np.arange(2**n, dtype=np.int64)
    return ((idx[:, None] >> np.arange(n)) & 1).astype(np.float64)


class RBM(MetaModel):
    family = "rbm"

    def __init__(self, params: RbmParams):
        self.params = params
        V, H = params.W.shape
        self.visible_space = Space.binary(V)
        self.hidden_space = Space.binary(H)
        self._log_z: float | None = None

    @property
    def n_visible(self) -> int:
        return self.params.W.shape[0]

    @property
    def n_hidden(self) -> int:
        return self.params.W.shape[1]

    def free_energy(self, v: np.ndarray) -> np.ndarray:
        p = self.params
        return -(v @ p.b_visible) - softplus(p.c_hidden + v @ p.W).sum(axis=1)

    def hidden_free_energy(self, h: np.ndarray) -> np.ndarray:
        p = self.params
        return -(h @ p.c_hidden) - softplus(p.b_visible + h @ p.W.T).sum(axis=1)

    def log_partition(self, side: str | None = None) -> float:
        """ln Z by enumerating the smaller layer (or ``side`` if given)."""
        if side is None and self._log_z is not None:
            return self._log_z
        V, H = self.n_visible, self.n_hidden
        chosen = side or ("visible" if V <= H else "hidden")
        n = V if chosen == "visible" else H
        if 2**n > ENUMERATION_CAP:
            raise SizeTooLarge(f"exact partition needs 2^{n} states (cap 2^20)")
        states = _binary_states(n)
        energy = self.free_energy(states) if chosen == "visible" else self.hidden_free_energy(states)
        log_z = float(logsumexp(-energy))
        if side is None:
            self._log_z = log_z
        return log_z

    def log_marginal_visible(self, xs, n_samples=1, rng=None):
        xs = self.visible_space.validate(xs)
        return LogLikEstimate.exact(-self.free_energy(xs) - self.log_partition())

    def log_marginal_hidden(self, hs):
        hs = self.hidden_space.validate(hs)
        return LogLikEstimate.exact(-self.hidden_free_energy(hs) - self.log_partition())

    def hidden_probs(self, v: np.ndarray) -> np.ndarray:
        return sigmoid(self.params.c_hidden + v @ self.params.W)

    def visible_probs(self, h: np.ndarray) -> np.ndarray:
        return sigmoid(self.params.b_visible + h @ self.params.W.T)

    def sample_posterior(self, xs, rng):
        xs = self.visible_space.validate(xs)
        p = self.hidden_probs(xs)
        return (rng.random(p.shape) < p).astype(np.float64)

    def sample_conditional_visible(self, hs, rng):
        hs = self.hidden_space.validate(hs)
        p = self.visible_probs(hs)
        return (rng.random(p.shape) < p).astype(np.float64)

    def sample_prior_hidden(self, n, rng):
        """Exact draws from m(h): enumerate the hidden layer if it is small,
        otherwise draw v exactly from m(v) and then h | v."""
        V, H = self.n_visible, self.n_hidden
        if 2**H <= ENUMERATION_CAP:
            states = _binary_states(H)
            logp = -self.hidden_free_energy(states)
            return states[sample_from_log_probs(logp, n, rng)]
        if 2**V <= ENUMERATION_CAP:
            states = _binary_states(V)
            logp = -self.free_energy(states)
            v = states[sample_from_log_probs(logp, n, rng)]
            return self.sample_posterior(v, rng)
        raise SizeTooLarge("exact prior sampling needs min(V, H) <= 20")

    def prior_neg_entropy(self) -> float:
        if 2**self.n_hidden > ENUMERATION_CAP:
            raise SizeTooLarge("prior entropy needs H <= 20")
        logp = self.log_marginal_hidden(_binary_states(self.n_hidden)).value
        return math.fsum(np.exp(logp) * logp)

    def exact_log_joint(self, cap=2**22):
        V, H = self.n_visible, self.n_hidden
        if 2 ** (V + H) > cap:
            raise SizeTooLarge(f"joint table of 2^{V + H} cells exceeds cap")
        p = self.params
        v, h = _binary_states(V), _binary_states(H)
        return (v @ p.b_visible)[:, None] + (h @ p.c_hidden)[None, :] + v @ p.W @ h.T - self.log_partition()

    def get_params(self):
        p = self.params
        return {"W": p.W, "b_visible": p.b_visible, "c_hidden": p.c_hidden}

    @classmethod
    def from_params(cls, meta, params):
        return cls(RbmParams(params["W"], params["b_visible"], params["c_hidden"]))


def rbm_log_partition_exact(rbm: RBM) -> float:
    return rbm.log_partition()


def rbm_init(V: int, H: int, data: np.ndarray, weights: np.ndarray, rng: np.random.Generator) -> RbmParams:
    """Uniform(-1/sqrt(V), 1/sqrt(V)) weights; visible biases at the data log-odds."""
    bound = 1.0 / math.sqrt(V)
    W = rng.uniform(-bound, bound, size=(V, H))
    mean = np.clip(weights @ data / weights.sum(), 1e-3, 1 - 1e-3)
    return RbmParams(W, np.log(mean / (1 - mean)), np.zeros(H))


def rbm_train_cd(
    data,
    H: int,
    cfg: TrainConfig,
    rng: np.random.Generator,
    weights=None,
    resample: Callable[[np.random.Generator], np.ndarray] | None = None,
    init: RbmParams | None = None,
    callback: Callable[[int, RBM], None] | None = None,
) -> RBM:
    """CD-k stochastic gradient training.

    ``resample`` (if given) redraws the training points at the start of every
    epoch after the first; ``callback(epoch, model)`` observes progress.
    """
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2 or not np.all((x == 0) | (x == 1)):
        raise BadParams("RBM training data must be a binary (n, V) array")
    if H < 1:
        raise BadParams("H must be >= 1")
    n, V = x.shape
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    w = w * (n / w.sum())
    params = init if init is not None else rbm_init(V, H, x, w, rng)
    W, b, c = params.W.copy(), params.b_visible.copy(), params.c_hidden.copy()
    lr, k = cfg.learning_rate, cfg.cd_steps
    for epoch in range(cfg.epochs):
        if resample is not None and epoch > 0:
            x = resample(rng)
        with np.errstate(over="ignore", invalid="ignore"):  # divergence is reported below
            order = rng.permutation(n)
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                v0, wb = x[idx], w[idx][:, None]
                ph0 = sigmoid(c + v0 @ W)
                h = (rng.random(ph0.shape) < ph0).astype(np.float64)
                for _ in range(k):
                    pv = sigmoid(b + h @ W.T)
                    v = (rng.random(pv.shape) < pv).astype(np.float64)
                    ph = sigmoid(c + v @ W)
                    h = (rng.random(ph.shape) < ph).astype(np.float64)
                m = len(idx)
                W += lr * ((v0 * wb).T @ ph0 - (v * wb).T @ ph) / m
                b += lr * (wb * (v0 - v)).sum(axis=0) / m
                c += lr * (wb * (ph0 - ph)).sum(axis=0) / m
        check_finite("RBM parameters (training diverged)", W, b, c)
        if callback is not None:
            callback(epoch, RBM(RbmParams(W.copy(), b.copy(), c.copy())))
    return RBM(RbmParams(W, b, c))
