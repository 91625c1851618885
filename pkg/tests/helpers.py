"""Small constructors shared across test modules."""

import numpy as np

from cascadeboost.metamodels.gmm import GMM, GmmParams
from cascadeboost.metamodels.rbm import RBM, RbmParams
from cascadeboost.metamodels.vae import VAE, VaeParams, vae_init


def standard_normal_gmm(d=2):
    return GMM(GmmParams(np.ones(1), np.zeros((1, d)), np.ones((1, d))))


def zero_rbm(V, H):
    return RBM(RbmParams.zeros(V, H))


def random_rbm(V, H, rng, scale=1.0):
    return RBM(RbmParams(scale * rng.standard_normal((V, H)), scale * rng.standard_normal(V),
                         scale * rng.standard_normal(H)))


def prior_encoder_vae(d_visible, latent, likelihood="gaussian", decoder_bias=None):
    """Encoder outputs (0, 0) for all inputs, decoder ignores h."""
    enc = [(np.zeros((d_visible, 2 * latent)), np.zeros(2 * latent))]
    bias = np.zeros(d_visible) if decoder_bias is None else np.asarray(decoder_bias, dtype=float)
    dec = [(np.zeros((latent, d_visible)), bias)]
    return VAE(VaeParams(enc, dec, latent, likelihood))


def encoder_mean_vae(mu, d_visible=3):
    """Encoder outputs mean ``mu`` and log-variance 0 for every input."""
    mu = np.asarray(mu, dtype=float)
    latent = mu.size
    enc = [(np.zeros((d_visible, 2 * latent)), np.concatenate([mu, np.zeros(latent)]))]
    dec = [(np.zeros((latent, d_visible)), np.zeros(d_visible))]
    return VAE(VaeParams(enc, dec, latent, "gaussian"))


def small_vae(rng, d_visible=4, latent=2, hidden=(6,), likelihood="gaussian"):
    return VAE(vae_init(d_visible, latent, hidden, likelihood, rng))


def random_discrete_cascade(rng, max_states=2**14, max_depth=3):
    from cascadeboost.oracle import random_cascade

    return random_cascade(rng, max_states, max_depth)


def random_binary_data(rng, space, n=None):
    n = int(rng.integers(1, 12)) if n is None else n
    states = space.enumerate()
    return states[rng.integers(0, states.shape[0], n)]
