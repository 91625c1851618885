"""Exact brute-force answers on tiny discrete instances.

Chains only ever need the pairwise tables log m_i(h_{i-1}, h_i), so an
instance is enumerable when every table fits under the cap, even if the
full joint over (x, h_1, ..., h_k) is much larger. All functions are
deterministic and RNG-free.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from . import _exact
from .cascade import CascadeModel, check_chain
from .core import MetaModel, Space
from .dataset import LabeledDataset, as_dataset
from .errors import BadParams, SizeTooLarge, Unsupported
from .metamodels.classmix import ClassMixture
from .metamodels.tabular import Tabular

JOINT_CAP = 2**22


class EnumerableCascade:
    """Exact tables for a chain of discrete meta-models."""

    def __init__(self, models, cap: float = JOINT_CAP):
        models = tuple(models.models if isinstance(models, CascadeModel) else models)
        check_chain(models)
        for m in models:
            if not (m.visible_space.is_discrete and m.hidden_space.is_discrete):
                raise Unsupported(f"{m.family} model over {m.visible_space} -> {m.hidden_space} is not enumerable")
            if m.visible_space.n_states * m.hidden_space.n_states > cap:
                raise SizeTooLarge(f"table of {m.visible_space.n_states * m.hidden_space.n_states} cells exceeds cap")
        self.models = models
        self.tables = [np.asarray(m.exact_log_joint(cap), dtype=np.float64) for m in models]
        # log m_i(h_{i-1}), log m_i(h_i), log m_i(h_i | h_{i-1}), log m_i(h_{i-1} | h_i)
        self.log_visible = [_exact.logsumexp_rows(t) for t in self.tables]
        self.log_hidden = [_exact.logsumexp_rows(t.T) for t in self.tables]
        self.up = [_exact.conditional_rows(t) for t in self.tables]
        self.down = [_exact.conditional_rows(t.T).T for t in self.tables]

    def __len__(self) -> int:
        return len(self.models)

    @property
    def visible_space(self) -> Space:
        return self.models[0].visible_space

    @property
    def state_count(self) -> float:
        """Number of joint states of (x, h_1, ..., h_k)."""
        total = self.visible_space.n_states
        for m in self.models:
            total *= m.hidden_space.n_states
        return total

    def log_marginal(self) -> np.ndarray:
        """log p_k(x) for every visible state."""
        a = self.log_visible[-1]
        for i in range(len(self.models) - 2, -1, -1):
            a = _exact.log_push_down(self.down[i], a)
        return a

    def log_joint_tensor(self, cap: float = JOINT_CAP) -> np.ndarray:
        """Full log p_k(x, h_1, ..., h_k) as a (k+1)-axis array."""
        if self.state_count > cap:
            raise SizeTooLarge(f"full joint has {self.state_count} states (cap {cap})")
        k = len(self.models)
        joint = np.zeros([1] * (k + 1))
        for i, cond in enumerate(self.down[:-1]):
            shape = [1] * (k + 1)
            shape[i], shape[i + 1] = cond.shape
            joint = joint + cond.reshape(shape)
        shape = [1] * (k + 1)
        shape[k - 1], shape[k] = self.tables[-1].shape
        return joint + self.tables[-1].reshape(shape)

    def log_marginal_full_joint(self) -> np.ndarray:
        """log p_k(x) by summing the materialized joint over all hidden
        states at once; a second summation order for cross-checks."""
        joint = self.log_joint_tensor()
        return _exact.logsumexp_rows(joint.reshape(joint.shape[0], -1))

    def data_distribution(self, data) -> np.ndarray:
        ds = as_dataset(data, self.visible_space)
        return _exact.empirical(self.visible_space.index(ds.points), ds.effective_weights,
                                int(self.visible_space.n_states))

    def posterior_marginals(self, r0: np.ndarray) -> list[np.ndarray]:
        """r_0 = p_D and r_i(h_i) = sum r_{i-1}(h_{i-1}) q(h_i | h_{i-1})."""
        rs = [r0]
        for up in self.up:
            rs.append(_exact.push_forward(rs[-1], up))
        return rs

    def upward_matrix(self, depth: int) -> np.ndarray:
        """q(h_depth | x) as an (n_x, n_depth) probability matrix."""
        q = np.exp(self.up[0])
        for up in self.up[1:depth]:
            cond = np.exp(up)
            q = np.array([[math.fsum(row * col) for col in cond.T] for row in q])
        return q


def as_enumerable(inst) -> EnumerableCascade:
    return inst if isinstance(inst, EnumerableCascade) else EnumerableCascade(inst)


def exact_log_marginal(inst) -> np.ndarray:
    return as_enumerable(inst).log_marginal()


def exact_data_loglik(inst, data) -> float:
    """E_D[log p_k(x)]."""
    inst = as_enumerable(inst)
    return _exact.expectation(inst.data_distribution(data), inst.log_marginal())


def exact_bound_terms(inst, data) -> list[float]:
    """Exact L_1..L_k under the empirical data distribution."""
    inst = as_enumerable(inst)
    rs = inst.posterior_marginals(inst.data_distribution(data))
    terms = [_exact.expectation(rs[0], inst.log_visible[0])]
    for i in range(1, len(inst)):
        terms.append(_exact.expectation(rs[i], inst.log_visible[i] - inst.log_hidden[i - 1]))
    return terms


def exact_top_gap(inst, data) -> float:
    """E_D E_q[log m_k(h_k)] - E_{m_k}[log m_k(h_k)]."""
    inst = as_enumerable(inst)
    rs = inst.posterior_marginals(inst.data_distribution(data))
    log_top = inst.log_hidden[-1]
    return _exact.expectation(rs[-1], log_top) - _exact.expectation(np.exp(log_top), log_top)


def optimal_top_model(inst, data, k: int) -> Tabular:
    """The model at position ``k`` (1-based) whose visible marginal is exactly
    the aggregate posterior of h_{k-1} under p_D q.

    When the cascade already has a discrete model at position k its
    conditional m_k(h_k | h_{k-1}) is kept; otherwise h_k is a copy of
    h_{k-1} over a categorical space."""
    inst = as_enumerable(inst)
    if not 1 <= k <= len(inst) + 1:
        raise BadParams(f"position {k} outside 1..{len(inst) + 1}")
    rs = inst.posterior_marginals(inst.data_distribution(data))
    r = rs[k - 1]
    visible = inst.visible_space if k == 1 else inst.models[k - 2].hidden_space
    with np.errstate(divide="ignore"):
        log_r = np.log(r)
    if k <= len(inst):
        hidden = inst.models[k - 1].hidden_space
        log_cond = inst.up[k - 1]
    else:
        n = int(visible.n_states)
        hidden = Space.categorical(n)
        log_cond = np.where(np.eye(n, dtype=bool), 0.0, -np.inf)
    with np.errstate(invalid="ignore"):
        table = log_r[:, None] + log_cond
    table[r == 0] = -np.inf
    table -= _exact.logsumexp(table)
    return Tabular(table, visible, hidden)


def replace_model(inst, k: int, model: MetaModel) -> EnumerableCascade:
    """Cascade with position ``k`` replaced and everything above dropped."""
    inst = as_enumerable(inst)
    return EnumerableCascade(inst.models[: k - 1] + (model,))


def partial_sums(terms: Sequence[float], start: int) -> list[float]:
    """sum_{i=start+1}^{j} L_i for each j > start (1-based term indices)."""
    out, acc = [], []
    for t in terms[start:]:
        acc.append(t)
        out.append(math.fsum(acc))
    return out


def appended_gain(inst, appended: Sequence[MetaModel], data) -> float:
    """Maximum partial sum of the terms contributed by ``appended``."""
    inst = as_enumerable(inst)
    if not appended:
        raise BadParams("nothing appended")
    grown = EnumerableCascade(inst.models + tuple(appended))
    return max(partial_sums(exact_bound_terms(grown, data), len(inst)))


def kl_divergence(p: np.ndarray, log_q: np.ndarray) -> float:
    with np.errstate(divide="ignore"):
        log_p = np.log(p)
    return _exact.expectation(p, log_p - log_q)


# ---------------------------------------------------------------------------
# multiplicative ensembles


def _component_log_density(model, states) -> np.ndarray:
    if isinstance(model, CascadeModel):
        if len(model) == 1:
            model = model.models[0]
        else:
            return EnumerableCascade(model).log_marginal()
    if isinstance(model, MetaModel):
        if not model.exact_visible:
            raise Unsupported(f"{model.family} has no exact visible density")
        return np.asarray(model.log_marginal_visible(states).value, dtype=np.float64)
    raise BadParams(f"unsupported ensemble component {type(model).__name__}")


def exact_ensemble_log_density(ens, cap: float = JOINT_CAP) -> np.ndarray:
    """sum_i alpha_i log M_i(x) for every visible state."""
    space = ens.visible_space
    if not space.is_discrete:
        raise Unsupported("ensemble visible space is not discrete")
    states = space.enumerate(cap)
    total = np.zeros(states.shape[0])
    for comp in ens.components:
        total = total + comp.alpha * _component_log_density(comp.model, states)
    return total


def exact_partition(ens, cap: float = JOINT_CAP) -> float:
    """ln Z_n by summation over every visible state."""
    return _exact.logsumexp(exact_ensemble_log_density(ens, cap))


def exact_ensemble_distribution(ens) -> np.ndarray:
    log_u = exact_ensemble_log_density(ens)
    return np.exp(log_u - _exact.logsumexp(log_u))


# ---------------------------------------------------------------------------
# semi-supervised models


def _class_tables(lower: EnumerableCascade, top: ClassMixture):
    if not isinstance(top, ClassMixture) or top.emission != "bernoulli":
        raise Unsupported("exact semi-supervised evaluation needs a Bernoulli class-mixture top")
    if top.visible_space != lower.models[-1].hidden_space:
        raise BadParams("top visible space does not match the lower cascade")
    states = top.visible_space.enumerate()
    return top.class_log_joint(states)  # (n_h, C): log m_n(h_{n-1}, y)


def exact_class_posterior(lower, top: ClassMixture) -> np.ndarray:
    """q(y | x) = sum_h q(h_{n-1} | x) m_n(y | h_{n-1}) for every visible state."""
    lower = as_enumerable(lower)
    lj = _class_tables(lower, top)
    cond = np.exp(lj - _exact.logsumexp_rows(lj)[:, None])
    q = lower.upward_matrix(len(lower))
    return np.array([[math.fsum(row * col) for col in cond.T] for row in q])


def exact_log_joint_with_label(lower, top: ClassMixture) -> np.ndarray:
    """log p_n(x, y) for every visible state and class, shape (n_x, C)."""
    lower = as_enumerable(lower)
    lj = _class_tables(lower, top)
    out = []
    for y in range(top.n_classes):
        a = lj[:, y]
        for i in range(len(lower) - 1, -1, -1):
            a = _exact.log_push_down(lower.down[i], a)
        out.append(a)
    return np.stack(out, axis=1)


def _pooled(lower: EnumerableCascade, data: LabeledDataset, alpha: float, beta: float):
    space = lower.visible_space
    n_x = int(space.n_states)
    p_u = _exact.empirical(space.index(data.unlabeled), np.ones(data.n_unlabeled), n_x) \
        if data.n_unlabeled else np.zeros(n_x)
    idx_l = space.index(data.labeled) if data.n_labeled else np.zeros(0, dtype=np.int64)
    p_l = np.zeros((n_x, data.n_classes))
    if data.n_labeled:
        flat = idx_l * data.n_classes + data.labels
        p_l = _exact.empirical(flat, np.ones(data.n_labeled), n_x * data.n_classes).reshape(n_x, data.n_classes)
    return p_u, p_l


def exact_semisup_objective(lower, top: ClassMixture, data: LabeledDataset, alpha: float, beta: float) -> float:
    """alpha E_{D_u}[log p_n(x)] + beta E_{D_l}[log p_n(x, y)]."""
    lower = as_enumerable(lower)
    p_u, p_l = _pooled(lower, data, alpha, beta)
    lxy = exact_log_joint_with_label(lower, top)
    lx = np.array([_exact.logsumexp(row) for row in lxy])
    parts = []
    if alpha > 0:
        parts.append(alpha * _exact.expectation(p_u, lx))
    if beta > 0:
        parts.append(beta * _exact.expectation(p_l.ravel(), lxy.ravel()))
    return math.fsum(parts)


def exact_semisup_terms(lower, top: ClassMixture, data: LabeledDataset, alpha: float, beta: float) -> list[float]:
    """Exact J_1..J_n: cascade terms over the pooled data distribution, then
    the weighted top term."""
    lower = as_enumerable(lower)
    p_u, p_l = _pooled(lower, data, alpha, beta)
    pooled = alpha * p_u + beta * p_l.sum(axis=1)
    rs = lower.posterior_marginals(pooled)
    terms = [_exact.expectation(rs[0], lower.log_visible[0])]
    for i in range(1, len(lower)):
        terms.append(_exact.expectation(rs[i], lower.log_visible[i] - lower.log_hidden[i - 1]))
    lj = _class_tables(lower, top)
    log_h = np.array([_exact.logsumexp(row) for row in lj])
    q = lower.upward_matrix(len(lower))
    ru = np.array([math.fsum(p_u * col) for col in q.T])
    below = lower.log_hidden[-1]
    parts = []
    if alpha > 0:
        parts.append(alpha * _exact.expectation(ru, log_h - below))
    if beta > 0:
        for y in range(top.n_classes):
            rl = np.array([math.fsum(p_l[:, y] * col) for col in q.T])
            parts.append(beta * _exact.expectation(rl, lj[:, y] - below))
    terms.append(math.fsum(parts))
    return terms


# ---------------------------------------------------------------------------
# fuzz harness


def random_rbm(V: int, H: int, rng, scale: float = 1.0):
    from .metamodels.rbm import RBM, RbmParams

    return RBM(RbmParams(scale * rng.standard_normal((V, H)), scale * rng.standard_normal(V),
                         scale * rng.standard_normal(H)))


def random_cascade(rng, max_states: float = 2**14, max_depth: int = 3) -> list[MetaModel]:
    """A random chain of RBMs and tabular models over small discrete spaces
    whose full joint has at most ``max_states`` states."""
    while True:
        depth = int(rng.integers(1, max_depth + 1))
        spaces = [Space.binary(int(rng.integers(1, 5)))]
        for _ in range(depth):
            spaces.append(Space.binary(int(rng.integers(1, 5))) if rng.random() < 0.6
                          else Space.categorical(int(rng.integers(2, 6))))
        if math.prod(s.n_states for s in spaces) <= max_states:
            break
    models = []
    for v, h in zip(spaces[:-1], spaces[1:]):
        if v.kind.value == "binary" and h.kind.value == "binary" and rng.random() < 0.6:
            models.append(random_rbm(v.size, h.size, rng, scale=float(rng.uniform(0.2, 2.0))))
        else:
            models.append(Tabular.random(v, h, rng, scale=float(rng.uniform(0.2, 2.0))))
    return models


def random_points(rng, space: Space, n: int | None = None) -> np.ndarray:
    n = int(rng.integers(1, 12)) if n is None else n
    states = space.enumerate()
    return states[rng.integers(0, states.shape[0], n)]


def fuzz_lower_bound(trials: int, rng, max_states: float = 2**14) -> float:
    """Smallest exact E_D[log p_k(x)] - sum L_i seen over random chains."""
    worst = math.inf
    for _ in range(trials):
        models = random_cascade(rng, max_states)
        x = random_points(rng, models[0].visible_space)
        worst = min(worst, exact_data_loglik(models, x) - math.fsum(exact_bound_terms(models, x)))
    return worst


def fuzz_optimal_top(trials: int, rng, n_appended: int = 3) -> float:
    """Largest partial sum of terms appended above an optimal top."""
    worst = -math.inf
    for _ in range(trials):
        models = random_cascade(rng, max_states=2**10, max_depth=2)
        x = random_points(rng, models[0].visible_space)
        k = int(rng.integers(1, len(models) + 1))
        top = optimal_top_model(models, x, k)
        inst = replace_model(models, k, top)
        appended, visible = [], top.hidden_space
        for _ in range(n_appended):
            hidden = Space.categorical(int(rng.integers(2, 5)))
            appended.append(Tabular.random(visible, hidden, rng, scale=2.0))
            visible = hidden
        worst = max(worst, appended_gain(inst, appended, x))
    return worst


def non_optimal_improvement(rng) -> float:
    """Partial sum gained by stacking the optimal model on a random RBM;
    positive whenever the RBM's hidden marginal misses its aggregate
    posterior, which shows the appended-gain check can fail."""
    models = [random_rbm(3, 2, rng, scale=1.5)]
    x = random_points(rng, Space.binary(3), 8)
    return appended_gain(models, [optimal_top_model(models, x, 2)], x)


def fuzz_top_gap(trials: int, rng) -> float:
    """Largest |gap| with the top replaced by its optimum."""
    worst = 0.0
    for _ in range(trials):
        models = random_cascade(rng)
        x = random_points(rng, models[0].visible_space)
        k = int(rng.integers(1, len(models) + 1))
        inst = replace_model(models, k, optimal_top_model(models, x, k))
        worst = max(worst, abs(exact_top_gap(inst, x)))
    return worst
