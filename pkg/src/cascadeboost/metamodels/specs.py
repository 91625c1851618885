"""Declarative descriptions of a meta-model to train.

A spec knows which visible spaces it accepts, which hidden space it will
produce, and how to train itself on (possibly weighted, possibly
resampled) points. Cascades and ensembles are built from lists of specs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..core import MetaModel, Space, SpaceKind
from ..errors import BadParams, IncompatibleSpaces
from .classmix import class_mixture_fit_em
from .config import TrainConfig
from .gmm import gmm_fit_em
from .rbm import RBM, RbmParams, rbm_train_cd
from .vae import VAE, vae_train

Resampler = Callable[[np.random.Generator], np.ndarray]


@dataclass(frozen=True)
class ModelSpec:
    cfg: TrainConfig | None = field(default=None, kw_only=True)

    family = ""

    def hidden_space(self, visible: Space) -> Space:
        raise NotImplementedError

    def check_visible(self, visible: Space) -> None:
        raise NotImplementedError

    def fit(self, data, rng, cfg: TrainConfig, weights=None, resample: Resampler | None = None,
            below: MetaModel | None = None, visible: Space | None = None) -> MetaModel:
        raise NotImplementedError

    def config(self, default: TrainConfig) -> TrainConfig:
        return self.cfg if self.cfg is not None else default

    # a GMM needs a fixed sample set for EM to have a fixed objective
    uses_fixed_samples = False


@dataclass(frozen=True)
class GmmSpec(ModelSpec):
    """``init="auto"`` covers N(0, I) when stacked on a VAE, else k-means++."""

    n_components: int = 10
    init: str = "auto"
    family = "gmm"
    uses_fixed_samples = True

    def __post_init__(self):
        if self.n_components < 1:
            raise BadParams("n_components must be >= 1")
        if self.init not in ("auto", "cover", "kmeans++"):
            raise BadParams(f"unknown GMM init {self.init!r}")

    def check_visible(self, visible):
        if visible.kind is not SpaceKind.REAL:
            raise IncompatibleSpaces(f"GMM needs a real visible space, got {visible}")

    def hidden_space(self, visible):
        self.check_visible(visible)
        return Space.categorical(self.n_components)

    def resolved_init(self, below):
        if self.init != "auto":
            return self.init
        return "cover" if isinstance(below, VAE) else "kmeans++"

    def fit(self, data, rng, cfg, weights=None, resample=None, below=None, visible=None):
        return gmm_fit_em(data, self.n_components, self.config(cfg), rng, weights=weights,
                          init=self.resolved_init(below))


@dataclass(frozen=True)
class RbmSpec(ModelSpec):
    """``init="transpose"`` starts a stacked RBM at the transpose of the one
    below it, so its initial marginal over its visible layer equals the
    lower model's hidden marginal."""

    n_hidden: int = 8
    init: str = "random"
    family = "rbm"

    def __post_init__(self):
        if self.n_hidden < 1:
            raise BadParams("n_hidden must be >= 1")
        if self.init not in ("random", "transpose"):
            raise BadParams(f"unknown RBM init {self.init!r}")

    def check_visible(self, visible):
        if visible.kind is not SpaceKind.BINARY:
            raise IncompatibleSpaces(f"RBM needs a binary visible space, got {visible}")

    def hidden_space(self, visible):
        self.check_visible(visible)
        return Space.binary(self.n_hidden)

    def fit(self, data, rng, cfg, weights=None, resample=None, below=None, visible=None):
        init = None
        if self.init == "transpose":
            if not isinstance(below, RBM) or below.n_visible != self.n_hidden:
                raise IncompatibleSpaces("transpose init needs an RBM below with V equal to this model's H")
            p = below.params
            init = RbmParams(p.W.T.copy(), p.c_hidden.copy(), p.b_visible.copy())
        return rbm_train_cd(data, self.n_hidden, self.config(cfg), rng, weights=weights, resample=resample,
                            init=init)


@dataclass(frozen=True)
class VaeSpec(ModelSpec):
    latent_dim: int = 2
    hidden: tuple[int, ...] = (500, 500)
    decoder_var: float = 1.0
    family = "vae"

    def __post_init__(self):
        if self.latent_dim < 1:
            raise BadParams("latent_dim must be >= 1")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def check_visible(self, visible):
        if visible.kind is SpaceKind.CATEGORICAL:
            raise IncompatibleSpaces("VAE cannot model a categorical visible space")

    def hidden_space(self, visible):
        self.check_visible(visible)
        return Space.real(self.latent_dim)

    def fit(self, data, rng, cfg, weights=None, resample=None, below=None, visible=None):
        return vae_train(data, self.latent_dim, self.config(cfg), rng, weights=weights, resample=resample,
                         hidden=self.hidden, visible_space=visible, decoder_var=self.decoder_var)


@dataclass(frozen=True)
class ClassMixSpec(ModelSpec):
    """Class-conditional top model; emission follows the visible space."""

    n_classes: int = 2
    per_class: int = 1
    family = "classmix"
    uses_fixed_samples = True

    def __post_init__(self):
        if self.n_classes < 1 or self.per_class < 1:
            raise BadParams("n_classes and per_class must be >= 1")

    def check_visible(self, visible):
        if visible.kind is SpaceKind.CATEGORICAL:
            raise IncompatibleSpaces("class mixture needs a binary or real visible space")

    def hidden_space(self, visible):
        self.check_visible(visible)
        return Space.categorical(self.n_classes * self.per_class)

    def fit(self, data, rng, cfg, weights=None, resample=None, below=None, visible=None, labels=None,
            init="labels", clamp=True):
        x = np.asarray(data, dtype=np.float64)
        emission = "bernoulli" if np.all((x == 0) | (x == 1)) and (
            visible is None or visible.kind is SpaceKind.BINARY) else "gaussian"
        if labels is None:
            labels = np.full(x.shape[0], -1)
            init = "unsupervised"
        return class_mixture_fit_em(x, labels, self.n_classes, self.per_class, self.config(cfg), rng,
                                    weights=weights, emission=emission, init=init, clamp=clamp)


SPEC_TYPES = {"gmm": GmmSpec, "rbm": RbmSpec, "vae": VaeSpec, "classmix": ClassMixSpec}
