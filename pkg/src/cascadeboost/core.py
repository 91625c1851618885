"""The meta-model contract: variable spaces, log-likelihood carriers and the
abstract interface every model family implements."""

from __future__ import annotations

import enum
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any

import numpy as np
from scipy.special import logsumexp

from .errors import DimensionMismatch, NonFinite, SizeTooLarge, Unsupported

LOG_2PI = math.log(2.0 * math.pi)

# Exact RBM evaluations enumerate at most this many states on one side.
ENUMERATION_CAP = 2**20


class SpaceKind(str, enum.Enum):
    BINARY = "binary"
    REAL = "real"
    CATEGORICAL = "categorical"


@dataclass(frozen=True)
class Space:
    """Domain of a visible or hidden variable.

    ``size`` is the dimension for binary/real spaces and the cardinality for
    categorical ones. Binary and real points are length-``size`` vectors; a
    categorical point is a single integer.
    """

    kind: SpaceKind
    size: int

    def __post_init__(self):
        object.__setattr__(self, "kind", SpaceKind(self.kind))
        if self.kind is SpaceKind.CATEGORICAL:
            # cardinality 1 only arises for one-component mixtures
            if self.size < 1:
                raise ValueError("categorical cardinality must be >= 1")
        elif self.size < 1:
            raise ValueError("space dimension must be >= 1")

    @classmethod
    def binary(cls, dim: int) -> "Space":
        return cls(SpaceKind.BINARY, dim)

    @classmethod
    def real(cls, dim: int) -> "Space":
        return cls(SpaceKind.REAL, dim)

    @classmethod
    def categorical(cls, cardinality: int) -> "Space":
        return cls(SpaceKind.CATEGORICAL, cardinality)

    @property
    def is_discrete(self) -> bool:
        return self.kind is not SpaceKind.REAL

    @property
    def dim(self) -> int:
        return 1 if self.kind is SpaceKind.CATEGORICAL else self.size

    @property
    def n_states(self) -> float:
        if self.kind is SpaceKind.REAL:
            return math.inf
        if self.kind is SpaceKind.BINARY:
            return 2**self.size
        return self.size

    def __str__(self) -> str:
        return f"{self.kind.value}:{self.size}"

    @classmethod
    def parse(cls, text: str) -> "Space":
        kind, size = text.split(":")
        return cls(SpaceKind(kind), int(size))

    def validate(self, points) -> np.ndarray:
        """Coerce a batch of points to the canonical array layout.

        Binary/real batches become ``(n, dim)`` float64 arrays, categorical
        batches ``(n,)`` int64 arrays. A single point is promoted to a batch.
        """
        arr = np.asarray(points)
        if self.kind is SpaceKind.CATEGORICAL:
            if arr.ndim == 0:
                arr = arr.reshape(1)
            if arr.ndim != 1:
                raise DimensionMismatch(f"categorical batch must be 1-D, got shape {arr.shape}")
            out = arr.astype(np.int64)
            if out.size and (out.min() < 0 or out.max() >= self.size or np.any(out != arr)):
                raise DimensionMismatch(f"value outside {self}")
            return out
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2 or arr.shape[1] != self.size:
            raise DimensionMismatch(f"expected points of dimension {self.size}, got shape {arr.shape}")
        out = arr.astype(np.float64)
        if self.kind is SpaceKind.BINARY and out.size and not np.all((out == 0.0) | (out == 1.0)):
            raise DimensionMismatch(f"value outside {self}")
        return out

    def enumerate(self, cap: float = 2**22) -> np.ndarray:
        """All states in index order."""
        if not self.is_discrete:
            raise Unsupported(f"cannot enumerate {self}")
        if self.n_states > cap:
            raise SizeTooLarge(f"{self} has {self.n_states} states (cap {cap})")
        if self.kind is SpaceKind.CATEGORICAL:
            return np.arange(self.size, dtype=np.int64)
        idx = np.arange(2**self.size, dtype=np.int64)
        return ((idx[:, None] >> np.arange(self.size)) & 1).astype(np.float64)

    def index(self, points) -> np.ndarray:
        """State index of each point (bit j of a binary index is component j)."""
        pts = self.validate(points)
        if self.kind is SpaceKind.CATEGORICAL:
            return pts
        if self.kind is SpaceKind.REAL:
            raise Unsupported(f"cannot index {self}")
        return (pts.astype(np.int64) << np.arange(self.size)).sum(axis=1)


@dataclass
class LogLikEstimate:
    """Log-likelihood value(s) in nats with Monte Carlo standard error.

    ``value`` and ``std_err`` are scalars or per-example arrays.
    """

    value: Any
    std_err: Any
    is_exact: bool

    def __post_init__(self):
        if self.is_exact and np.any(np.asarray(self.std_err) != 0):
            raise ValueError("exact estimates carry zero standard error")
        if np.any(np.asarray(self.std_err) < 0):
            raise ValueError("std_err must be nonnegative")

    @classmethod
    def exact(cls, value) -> "LogLikEstimate":
        value = np.asarray(value, dtype=np.float64)
        return cls(value, np.zeros_like(value), True)


def check_finite(what: str, *arrays) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFinite(f"non-finite values in {what}")


def log_mean_exp(a: np.ndarray, axis: int = 0) -> np.ndarray:
    return logsumexp(a, axis=axis) - math.log(a.shape[axis])


def std_normal_logpdf(h: np.ndarray) -> np.ndarray:
    return -0.5 * (h.shape[-1] * LOG_2PI + np.sum(h * h, axis=-1))


def sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def softplus(a):
    return np.logaddexp(0.0, a)


class MetaModel(ABC):
    """A trained latent-variable model m(x, h).

    Concrete families implement likelihoods of both variables, posterior
    sampling and conditional generation. Instances are treated as immutable
    once training has returned them.
    """

    family: str = ""
    visible_space: Space
    hidden_space: Space

    #: log m(x) is computed exactly (no Monte Carlo).
    exact_visible: bool = True

    @abstractmethod
    def log_marginal_visible(self, xs, n_samples: int = 1, rng=None) -> LogLikEstimate:
        ...

    @abstractmethod
    def sample_posterior(self, xs, rng: np.random.Generator) -> np.ndarray:
        ...

    @abstractmethod
    def sample_conditional_visible(self, hs, rng: np.random.Generator) -> np.ndarray:
        ...

    @abstractmethod
    def sample_prior_hidden(self, n: int, rng: np.random.Generator) -> np.ndarray:
        ...

    @abstractmethod
    def log_marginal_hidden(self, hs) -> LogLikEstimate:
        ...

    def sample_visible(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.sample_conditional_visible(self.sample_prior_hidden(n, rng), rng)

    def prior_neg_entropy(self) -> float:
        """E_{m(h)}[log m(h)], where analytically or enumerably available."""
        raise Unsupported(f"{self.family} has no closed-form prior entropy")

    def exact_log_joint(self, cap: float = 2**22) -> np.ndarray:
        """Table of log m(v, h) over all (visible, hidden) state pairs."""
        raise Unsupported(f"{self.family} is not enumerable")

    # serialization hooks
    @abstractmethod
    def get_params(self) -> dict[str, np.ndarray]:
        ...

    def get_meta(self) -> dict:
        return {}

    @classmethod
    @abstractmethod
    def from_params(cls, meta: dict, params: dict[str, np.ndarray]) -> "MetaModel":
        ...


# Functional surface of the contract. These validate inputs and defer to the
# model's own implementation.


def log_marginal_visible(model: MetaModel, xs, n_samples: int = 1, rng=None) -> LogLikEstimate:
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    return model.log_marginal_visible(model.visible_space.validate(xs), n_samples, rng)


def sample_posterior(model: MetaModel, x, rng) -> np.ndarray:
    return model.sample_posterior(model.visible_space.validate(x), rng)


def sample_conditional_visible(model: MetaModel, h, rng) -> np.ndarray:
    return model.sample_conditional_visible(model.hidden_space.validate(h), rng)


def sample_prior_hidden(model: MetaModel, n: int, rng) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    return model.sample_prior_hidden(n, rng)


def log_marginal_hidden(model: MetaModel, hs) -> LogLikEstimate:
    return model.log_marginal_hidden(model.hidden_space.validate(hs))
