"""Boosting latent-variable generative models by cascading meta-models."""

from .cascade import (BoundReport, CascadeModel, CascadeOptions, DiagnosisThresholds, GapReport, TermDiagnosis,
                      Verdict, bound_terms, cascade_infer, cascade_sample, convergence_gap, diagnose_term,
                      greedy_train, incorporate_next)
from .core import (LogLikEstimate, MetaModel, Space, SpaceKind, log_marginal_hidden, log_marginal_visible,
                   sample_conditional_visible, sample_posterior, sample_prior_hidden)
from .dataset import Dataset, LabeledDataset
from .metamodels import *  # noqa: F401,F403
from .metamodels import __all__ as _metamodel_names
from .multiplicative import (ChainConfig, DensityComponent, LogZEstimate, MultiplicativeEnsemble,
                             estimate_log_partition, hybrid_build, mcmc_sample, multiplicative_train,
                             reweighted_dataset, unnormalized_log_density)
from .semisup import SemiSupConfig, SemiSupModel, accuracy_eval, classify, semisup_train

__version__ = "0.1.0"

__all__ = [
    "BoundReport", "CascadeModel", "CascadeOptions", "ChainConfig", "Dataset", "DensityComponent",
    "DiagnosisThresholds", "GapReport", "LabeledDataset", "LogLikEstimate", "LogZEstimate", "MetaModel",
    "MultiplicativeEnsemble", "SemiSupConfig", "SemiSupModel", "Space", "SpaceKind", "TermDiagnosis", "Verdict",
    "accuracy_eval", "bound_terms", "cascade_infer", "cascade_sample", "classify", "convergence_gap",
    "diagnose_term", "estimate_log_partition", "greedy_train", "hybrid_build", "incorporate_next",
    "log_marginal_hidden", "log_marginal_visible", "mcmc_sample", "multiplicative_train", "reweighted_dataset",
    "sample_conditional_visible", "sample_posterior", "sample_prior_hidden", "semisup_train",
    "unnormalized_log_density", *_metamodel_names,
]
