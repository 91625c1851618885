"""Full joint-table meta-models over two discrete spaces.

Used by the exact oracle: a table can represent any distribution, so it
plays the part of an arbitrarily powerful learner.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import logsumexp

from ..core import LogLikEstimate, MetaModel, Space
from ..errors import BadParams, SizeTooLarge
from .gmm import sample_categorical, sample_from_log_probs


class Tabular(MetaModel):
    family = "tabular"

    def __init__(self, log_table: np.ndarray, visible_space: Space, hidden_space: Space):
        if not (visible_space.is_discrete and hidden_space.is_discrete):
            raise BadParams("tabular models need discrete spaces")
        table = np.asarray(log_table, dtype=np.float64)
        if table.shape != (visible_space.n_states, hidden_space.n_states):
            raise BadParams(f"table shape {table.shape} does not match spaces")
        if np.any(np.isnan(table)) or np.any(table == np.inf):
            raise BadParams("table entries must be finite or -inf")
        total = logsumexp(table)
        if abs(total) > 1e-9:
            raise BadParams(f"joint table is not normalized (log total {total})")
        self.log_table = table
        self.visible_space = visible_space
        self.hidden_space = hidden_space
        self._v_states = visible_space.enumerate()
        self._h_states = hidden_space.enumerate()
        self._log_v = logsumexp(table, axis=1)
        self._log_h = logsumexp(table, axis=0)

    @classmethod
    def from_probs(cls, probs, visible_space, hidden_space) -> "Tabular":
        p = np.asarray(probs, dtype=np.float64)
        if np.any(p < 0):
            raise BadParams("probabilities must be nonnegative")
        with np.errstate(divide="ignore"):
            return cls(np.log(p / p.sum()), visible_space, hidden_space)

    @classmethod
    def random(cls, visible_space, hidden_space, rng, scale: float = 1.0) -> "Tabular":
        """Random strictly positive joint table, log-entries ~ scale * N(0, 1)."""
        n_cells = visible_space.n_states * hidden_space.n_states
        if n_cells > 2**22:
            raise SizeTooLarge("table too large")
        logits = scale * rng.standard_normal((visible_space.n_states, hidden_space.n_states))
        return cls(logits - logsumexp(logits), visible_space, hidden_space)

    @classmethod
    def from_marginal_and_conditional(cls, log_visible, log_conditional, visible_space, hidden_space) -> "Tabular":
        """Joint with the given visible marginal and hidden-given-visible rows."""
        lc = np.asarray(log_conditional, dtype=np.float64)
        lc = lc - logsumexp(lc, axis=1, keepdims=True)
        table = np.asarray(log_visible, dtype=np.float64)[:, None] + lc
        return cls(table - logsumexp(table), visible_space, hidden_space)

    def log_marginal_visible(self, xs, n_samples=1, rng=None):
        return LogLikEstimate.exact(self._log_v[self.visible_space.index(xs)])

    def log_marginal_hidden(self, hs):
        return LogLikEstimate.exact(self._log_h[self.hidden_space.index(hs)])

    def sample_posterior(self, xs, rng):
        idx = sample_categorical(self.log_table[self.visible_space.index(xs)], rng)
        return self._h_states[idx]

    def sample_conditional_visible(self, hs, rng):
        idx = sample_categorical(self.log_table[:, self.hidden_space.index(hs)].T, rng)
        return self._v_states[idx]

    def sample_prior_hidden(self, n, rng):
        return self._h_states[sample_from_log_probs(self._log_h, n, rng)]

    def prior_neg_entropy(self) -> float:
        finite = np.isfinite(self._log_h)
        return math.fsum(np.exp(self._log_h[finite]) * self._log_h[finite])

    def exact_log_joint(self, cap=2**22):
        return self.log_table

    def get_params(self):
        return {"log_table": self.log_table}

    def get_meta(self):
        return {"visible": str(self.visible_space), "hidden": str(self.hidden_space)}

    @classmethod
    def from_params(cls, meta, params):
        return cls(params["log_table"], Space.parse(meta["visible"]), Space.parse(meta["hidden"]))
