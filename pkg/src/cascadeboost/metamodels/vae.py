"""Diagonal-Gaussian VAE in plain numpy with hand-written backpropagation."""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from ..core import (LOG_2PI, LogLikEstimate, MetaModel, Space, SpaceKind, check_finite, sigmoid, softplus,
                    std_normal_logpdf)
from ..errors import BadParams
from .config import TrainConfig

_CHUNK = 1 << 16  # max rows pushed through the decoder at once


# ---------------------------------------------------------------------------
# multilayer perceptron pieces


def _mlp_forward(layers, a):
    """tanh hidden layers, linear output. Returns output and activations."""
    acts = [a]
    for i, (W, b) in enumerate(layers):
        z = a @ W + b
        a = z if i == len(layers) - 1 else np.tanh(z)
        acts.append(a)
    return a, acts


def _mlp_backward(layers, acts, dout):
    grads = [None] * len(layers)
    delta = dout
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        grads[i] = (acts[i].T @ delta, delta.sum(axis=0))
        da = delta @ W.T
        if i > 0:
            delta = da * (1.0 - acts[i] ** 2)
    return grads, da


def _init_layers(sizes: Sequence[int], rng: np.random.Generator):
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        layers.append((rng.uniform(-bound, bound, size=(fan_in, fan_out)), np.zeros(fan_out)))
    return layers


class VaeParams:
    """Encoder/decoder weights. Encoder maps x to (mu, log sigma^2); the
    decoder maps h to Bernoulli logits or a Gaussian mean."""

    def __init__(self, encoder, decoder, latent_dim: int, likelihood: str, decoder_var: float = 1.0):
        if likelihood not in ("bernoulli", "gaussian"):
            raise BadParams(f"unknown likelihood {likelihood!r}")
        if decoder_var <= 0:
            raise BadParams("decoder_var must be positive")
        self.encoder = [(np.asarray(W, dtype=np.float64), np.asarray(b, dtype=np.float64)) for W, b in encoder]
        self.decoder = [(np.asarray(W, dtype=np.float64), np.asarray(b, dtype=np.float64)) for W, b in decoder]
        self.latent_dim = int(latent_dim)
        self.likelihood = likelihood
        self.decoder_var = float(decoder_var)
        for layers in (self.encoder, self.decoder):
            for (W, b), (W2, _) in zip(layers[:-1], layers[1:]):
                if W.shape[1] != W2.shape[0] or b.shape != (W.shape[1],):
                    raise BadParams("layer shapes do not chain")
        if self.encoder[-1][0].shape[1] != 2 * latent_dim or self.decoder[0][0].shape[0] != latent_dim:
            raise BadParams("latent dimension does not match encoder/decoder")
        if self.encoder[0][0].shape[0] != self.decoder[-1][0].shape[1]:
            raise BadParams("encoder input and decoder output dimensions differ")
        check_finite("VAE parameters", *[a for W, b in self.encoder + self.decoder for a in (W, b)])

    @property
    def visible_dim(self) -> int:
        return self.encoder[0][0].shape[0]

    def arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for tag, layers in (("enc", self.encoder), ("dec", self.decoder)):
            for i, (W, b) in enumerate(layers):
                out[f"{tag}.W{i}"] = W
                out[f"{tag}.b{i}"] = b
        return out

    @classmethod
    def from_arrays(cls, arrays, latent_dim, likelihood, decoder_var=1.0) -> "VaeParams":
        def collect(tag):
            layers, i = [], 0
            while f"{tag}.W{i}" in arrays:
                layers.append((arrays[f"{tag}.W{i}"], arrays[f"{tag}.b{i}"]))
                i += 1
            return layers

        return cls(collect("enc"), collect("dec"), latent_dim, likelihood, decoder_var)

    def copy(self) -> "VaeParams":
        return VaeParams.from_arrays({k: v.copy() for k, v in self.arrays().items()},
                                     self.latent_dim, self.likelihood, self.decoder_var)


def vae_init(visible_dim: int, latent_dim: int, hidden: Sequence[int], likelihood: str,
             rng: np.random.Generator, decoder_var: float = 1.0) -> VaeParams:
    hidden = list(hidden)
    enc = _init_layers([visible_dim, *hidden, 2 * latent_dim], rng)
    dec = _init_layers([latent_dim, *reversed(hidden), visible_dim], rng)
    return VaeParams(enc, dec, latent_dim, likelihood, decoder_var)


def _log_lik(params: VaeParams, x, out):
    """log p(x | h) from decoder output (last axis summed)."""
    if params.likelihood == "bernoulli":
        return np.sum(x * out - softplus(out), axis=-1)
    diff = x - out
    return -0.5 * np.sum(diff * diff, axis=-1) / params.decoder_var - 0.5 * x.shape[-1] * (
        LOG_2PI + math.log(params.decoder_var))


def negative_elbo(params: VaeParams, x: np.ndarray, eps: np.ndarray, weights: np.ndarray | None = None):
    """Weighted mean of -ELBO (analytic KL) for fixed noise ``eps``, and its
    gradients as ``(encoder_grads, decoder_grads)`` lists of (dW, db)."""
    n = x.shape[0]
    w = np.full(n, 1.0 / n) if weights is None else weights / weights.sum()
    d = params.latent_dim
    enc_out, enc_acts = _mlp_forward(params.encoder, x)
    mu, logvar = enc_out[:, :d], enc_out[:, d:]
    std = np.exp(0.5 * logvar)
    z = mu + std * eps
    out, dec_acts = _mlp_forward(params.decoder, z)
    rec = -_log_lik(params, x, out)
    kl = 0.5 * np.sum(mu * mu + std * std - 1.0 - logvar, axis=1)
    loss = float(np.dot(w, rec + kl))

    if params.likelihood == "bernoulli":
        dout = (sigmoid(out) - x) * w[:, None]
    else:
        dout = (out - x) / params.decoder_var * w[:, None]
    dec_grads, dz = _mlp_backward(params.decoder, dec_acts, dout)
    dmu = dz + mu * w[:, None]
    dlogvar = dz * eps * 0.5 * std + 0.5 * (std * std - 1.0) * w[:, None]
    enc_grads, _ = _mlp_backward(params.encoder, enc_acts, np.concatenate([dmu, dlogvar], axis=1))
    return loss, enc_grads, dec_grads


class VAE(MetaModel):
    family = "vae"
    exact_visible = False

    def __init__(self, params: VaeParams):
        self.params = params
        kind = SpaceKind.BINARY if params.likelihood == "bernoulli" else SpaceKind.REAL
        self.visible_space = Space(kind, params.visible_dim)
        self.hidden_space = Space.real(params.latent_dim)
        self.fit_history: list[float] = []

    def encode(self, xs):
        out, _ = _mlp_forward(self.params.encoder, xs)
        d = self.params.latent_dim
        return out[:, :d], out[:, d:]

    def decode(self, hs):
        out, _ = _mlp_forward(self.params.decoder, hs)
        return out

    def log_lik_given_hidden(self, xs, hs):
        return _log_lik(self.params, xs, self.decode(hs))

    def importance_log_weights(self, xs, S: int, rng):
        """(S, n) log p(x, h_s) - log q(h_s | x) with h_s ~ q(h | x)."""
        n, d = xs.shape[0], self.params.latent_dim
        lw = np.empty((S, n))
        rows = max(1, _CHUNK // S)
        for start in range(0, n, rows):
            x = xs[start:start + rows]
            mu, logvar = self.encode(x)
            eps = rng.standard_normal((S, x.shape[0], d))
            h = mu + np.exp(0.5 * logvar) * eps
            out = self.decode(h.reshape(-1, d)).reshape(S, x.shape[0], -1)
            log_q = -0.5 * np.sum(LOG_2PI + logvar + eps * eps, axis=-1)
            lw[:, start:start + rows] = _log_lik(self.params, x, out) + std_normal_logpdf(h) - log_q
        return lw

    def iwae(self, xs, S: int, rng) -> LogLikEstimate:
        if S < 1:
            raise BadParams("S must be >= 1")
        xs = self.visible_space.validate(xs)
        lw = self.importance_log_weights(xs, S, rng)
        value = logsumexp(lw, axis=0) - math.log(S)
        if S > 1:
            w = np.exp(lw - lw.max(axis=0))
            se = w.std(axis=0, ddof=1) / (math.sqrt(S) * w.mean(axis=0))
        else:
            se = np.zeros(xs.shape[0])
        return LogLikEstimate(value, se, False)

    def elbo_estimate(self, xs, rng) -> np.ndarray:
        """Single-sample estimate log p(x, h) - log q(h | x)."""
        xs = self.visible_space.validate(xs)
        return self.importance_log_weights(xs, 1, rng)[0]

    def log_marginal_visible(self, xs, n_samples=1, rng=None):
        return self.iwae(xs, n_samples, np.random.default_rng(0) if rng is None else rng)

    def sample_posterior(self, xs, rng):
        xs = self.visible_space.validate(xs)
        mu, logvar = self.encode(xs)
        return mu + np.exp(0.5 * logvar) * rng.standard_normal(mu.shape)

    def sample_conditional_visible(self, hs, rng):
        hs = self.hidden_space.validate(hs)
        out = self.decode(hs)
        if self.params.likelihood == "bernoulli":
            p = sigmoid(out)
            return (rng.random(p.shape) < p).astype(np.float64)
        return out + math.sqrt(self.params.decoder_var) * rng.standard_normal(out.shape)

    def sample_prior_hidden(self, n, rng):
        return rng.standard_normal((n, self.params.latent_dim))

    def log_marginal_hidden(self, hs):
        hs = self.hidden_space.validate(hs)
        return LogLikEstimate.exact(std_normal_logpdf(hs))

    def prior_neg_entropy(self) -> float:
        d = self.params.latent_dim
        return -0.5 * d * (1.0 + LOG_2PI)

    def get_params(self):
        return self.params.arrays()

    def get_meta(self):
        p = self.params
        return {"latent_dim": p.latent_dim, "likelihood": p.likelihood, "decoder_var": p.decoder_var}

    @classmethod
    def from_params(cls, meta, params):
        return cls(VaeParams.from_arrays(params, meta["latent_dim"], meta["likelihood"], meta["decoder_var"]))


def vae_iwae_log_likelihood(vae: VAE, x, S: int, rng) -> LogLikEstimate:
    return vae.iwae(x, S, rng)


class _Adam:
    def __init__(self, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def step(self, key, param, grad):
        m = self.m.get(key, 0.0) * self.b1 + (1 - self.b1) * grad
        v = self.v.get(key, 0.0) * self.b2 + (1 - self.b2) * grad * grad
        self.m[key], self.v[key] = m, v
        mhat = m / (1 - self.b1**self.t)
        vhat = v / (1 - self.b2**self.t)
        param -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def vae_train(
    data,
    latent_dim: int,
    cfg: TrainConfig,
    rng: np.random.Generator,
    weights=None,
    resample: Callable[[np.random.Generator], np.ndarray] | None = None,
    hidden: Sequence[int] = (500, 500),
    visible_space: Space | None = None,
    decoder_var: float = 1.0,
    init: VaeParams | None = None,
    callback: Callable[[int, "VAE"], None] | None = None,
) -> VAE:
    """Minibatch training of the single-sample reparameterized ELBO."""
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise BadParams("VAE data must be a nonempty (n, d) array")
    if latent_dim < 1:
        raise BadParams("latent_dim must be >= 1")
    if visible_space is None:
        binary = bool(np.all((x == 0) | (x == 1)))
        visible_space = Space.binary(x.shape[1]) if binary else Space.real(x.shape[1])
    x = visible_space.validate(x)
    likelihood = "bernoulli" if visible_space.kind is SpaceKind.BINARY else "gaussian"
    n = x.shape[0]
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    params = init.copy() if init is not None else vae_init(x.shape[1], latent_dim, hidden, likelihood, rng, decoder_var)
    adam = _Adam(cfg.learning_rate) if cfg.optimizer == "adam" else None
    history = []
    for epoch in range(cfg.epochs):
        if resample is not None and epoch > 0:
            x = resample(rng)
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            if not np.any(w[idx] > 0):
                continue
            eps = rng.standard_normal((idx.size, latent_dim))
            loss, g_enc, g_dec = negative_elbo(params, x[idx], eps, w[idx])
            total += loss * w[idx].sum()
            if adam is not None:
                adam.t += 1
            for tag, layers, grads in (("e", params.encoder, g_enc), ("d", params.decoder, g_dec)):
                for i, ((W, b), (dW, db)) in enumerate(zip(layers, grads)):
                    if adam is None:
                        W -= cfg.learning_rate * dW
                        b -= cfg.learning_rate * db
                    else:
                        adam.step((tag, i, "W"), W, dW)
                        adam.step((tag, i, "b"), b, db)
        check_finite("VAE parameters (training diverged)", *params.arrays().values())
        history.append(total / w.sum())
        if callback is not None:
            callback(epoch, VAE(params.copy()))
    model = VAE(params)
    model.fit_history = history
    return model
