"""Concrete meta-model families and their trainers."""

from .classmix import ClassMixture, class_mixture_fit_em
from .config import TrainConfig
from .gmm import GMM, GmmParams, gmm_fit_em, gmm_init_cover_standard_normal
from .rbm import RBM, RbmParams, rbm_log_partition_exact, rbm_train_cd
from .specs import ClassMixSpec, GmmSpec, ModelSpec, RbmSpec, VaeSpec
from .tabular import Tabular
from .vae import VAE, VaeParams, vae_init, vae_iwae_log_likelihood, vae_train

__all__ = [
    "ClassMixSpec", "ClassMixture", "GMM", "GmmParams", "GmmSpec", "ModelSpec", "RBM", "RbmParams", "RbmSpec",
    "Tabular", "TrainConfig", "VAE", "VaeParams", "VaeSpec", "class_mixture_fit_em", "gmm_fit_em",
    "gmm_init_cover_standard_normal", "rbm_log_partition_exact", "rbm_train_cd", "vae_init",
    "vae_iwae_log_likelihood", "vae_train",
]
