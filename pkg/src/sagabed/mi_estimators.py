"""Variational mutual-information lower bounds and a nested Monte Carlo reference.

The critic scores joint pairs ``(theta_i, y_i)`` and product-of-marginals pairs
``(theta_i, y_perm[i])`` where ``perm`` is a derangement of the batch.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logsumexp

from ._validation import check_batch, check_positive_int, check_random_state, check_scores
from .exceptions import ShapeError, UnsupportedModelError
from .nn_core import ParamGrads, mlp_backward, mlp_forward

DEFAULT_TAU = 5.0


def clip(u, v, w):
    """``max(min(u, w), v)``; works elementwise on arrays."""
    if v > w:
        raise ValueError(f"clip lower bound {v} exceeds upper bound {w}")
    return np.maximum(np.minimum(u, w), v)


def log_mean_exp(x):
    """Max-shifted ``log(mean(exp(x)))``."""
    x = np.asarray(x, dtype=np.float64)
    m = np.max(x)
    if not np.isfinite(m):
        return float(m)
    return float(m + np.log(np.mean(np.exp(x - m))))


def mine_lower_bound(joint_scores, marg_scores):
    joint = check_scores(joint_scores, "joint_scores")
    marg = check_scores(marg_scores, "marg_scores")
    return float(np.mean(joint)) - log_mean_exp(marg)


def smile_partition_term(marg_scores, tau):
    """``log mean clip(exp(T), e^-tau, e^tau)``; always inside ``[-tau, tau]``."""
    if not tau > 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    marg = check_scores(marg_scores, "marg_scores")
    # exp is monotone, so clipping exp(T) equals exp of clipping T
    return log_mean_exp(clip(marg, -tau, tau))


def smile_lower_bound(joint_scores, marg_scores, tau=DEFAULT_TAU):
    joint = check_scores(joint_scores, "joint_scores")
    return float(np.mean(joint)) - smile_partition_term(marg_scores, tau)


def smile_score_grads(joint_scores, marg_scores, tau=DEFAULT_TAU):
    """Derivatives of the SMILE bound with respect to each individual score.

    Marginal scores sitting outside the open band ``(-tau, tau)`` get zero
    derivative.
    """
    joint = check_scores(joint_scores, "joint_scores")
    marg = check_scores(marg_scores, "marg_scores")
    clipped = clip(marg, -tau, tau)
    w = np.exp(clipped - np.max(clipped))
    in_band = (marg > -tau) & (marg < tau)
    d_joint = np.full(joint.shape, 1.0 / joint.size)
    d_marg = -np.where(in_band, w, 0.0) / np.sum(w)
    return d_joint, d_marg


def mine_score_grads(joint_scores, marg_scores):
    joint = check_scores(joint_scores, "joint_scores")
    marg = check_scores(marg_scores, "marg_scores")
    w = np.exp(marg - np.max(marg))
    return np.full(joint.shape, 1.0 / joint.size), -w / np.sum(w)


def js_lower_bound(joint_scores, marg_scores):
    """f-GAN Jensen-Shannon objective; its optimal critic is the log density ratio."""
    joint = check_scores(joint_scores, "joint_scores")
    marg = check_scores(marg_scores, "marg_scores")
    return float(-np.mean(np.logaddexp(0.0, -joint)) - np.mean(np.logaddexp(0.0, marg)))


def js_score_grads(joint_scores, marg_scores):
    joint = check_scores(joint_scores, "joint_scores")
    marg = check_scores(marg_scores, "marg_scores")
    return expit(-joint) / joint.size, -expit(marg) / marg.size


CRITIC_OBJECTIVES = ("smile", "mine", "js")


def critic_score_grads(joint_scores, marg_scores, objective="smile", tau=DEFAULT_TAU):
    """Per-score ascent directions for the chosen critic training objective."""
    if objective == "smile":
        return smile_score_grads(joint_scores, marg_scores, tau)
    if objective == "mine":
        return mine_score_grads(joint_scores, marg_scores)
    if objective == "js":
        return js_score_grads(joint_scores, marg_scores)
    raise ValueError(f"unknown critic objective '{objective}', choose from {CRITIC_OBJECTIVES}")


def marginal_pairing(n, seed=None):
    """Uniformly random derangement of ``range(n)`` (rejection sampling)."""
    if n < 2:
        raise ValueError(f"a derangement needs n >= 2, got {n}")
    rng = check_random_state(seed)
    idx = np.arange(n)
    while True:
        perm = rng.permutation(n)
        if not np.any(perm == idx):
            return perm


@dataclass
class MiBatch:
    thetas: np.ndarray
    ys: np.ndarray
    perm: np.ndarray

    def __post_init__(self):
        self.thetas = check_batch(self.thetas, name="thetas")
        self.ys = check_batch(self.ys, name="ys")
        n = self.thetas.shape[0]
        if self.ys.shape[0] != n:
            raise ShapeError(f"{n} thetas but {self.ys.shape[0]} outcomes")
        if n < 2:
            raise ValueError("an MI batch needs at least 2 pairs")
        perm = np.asarray(self.perm)
        if perm.shape != (n,) or not np.array_equal(np.sort(perm), np.arange(n)):
            raise ValueError("perm is not a permutation of the batch")
        if np.any(perm == np.arange(n)):
            raise ValueError("perm has fixed points; a derangement is required")
        self.perm = perm

    @classmethod
    def from_samples(cls, thetas, ys, seed=None):
        return cls(thetas, ys, marginal_pairing(len(thetas), seed))

    def __len__(self):
        return self.thetas.shape[0]

    def critic_inputs(self, transform=None):
        """Stack joint rows on top of shuffled rows: shape ``(2n, p + d)``."""
        joint = np.hstack([self.thetas, self.ys])
        marg = np.hstack([self.thetas, self.ys[self.perm]])
        x = np.vstack([joint, marg])
        return transform(x) if transform is not None else x


def critic_scores(mlp, batch, transform=None):
    """Split critic scores into ``(joint, marginal)`` halves."""
    scores, _ = mlp_forward(mlp, batch.critic_inputs(transform))
    n = len(batch)
    return scores[:n], scores[n:]


def smile_value_and_grads(mlp, batch, tau=DEFAULT_TAU, transform=None, objective="smile"):
    """SMILE value plus parameter and input gradients of the training objective.

    With ``objective="smile"`` the gradients are those of the SMILE bound
    itself; ``"mine"`` and ``"js"`` swap in the gradient of a bounded
    surrogate while the returned value is still the SMILE estimate.  Input
    gradients are with respect to the (possibly transformed) stacked rows of
    :meth:`MiBatch.critic_inputs`.
    """
    x = batch.critic_inputs(transform)
    if x.shape[1] != mlp.n_inputs:
        raise ShapeError(f"critic expects {mlp.n_inputs} inputs, batch has {x.shape[1]}")
    scores, cache = mlp_forward(mlp, x)
    n = len(batch)
    joint, marg = scores[:n], scores[n:]
    value = smile_lower_bound(joint, marg, tau)
    d_joint, d_marg = critic_score_grads(joint, marg, objective, tau)
    grads, input_grads = mlp_backward(mlp, cache, np.concatenate([d_joint, d_marg]))
    return value, grads, input_grads


def smile_grad_psi(mlp, batch, tau=DEFAULT_TAU, transform=None) -> ParamGrads:
    return smile_value_and_grads(mlp, batch, tau, transform)[1]


def nmc_terms(model, xi, n_outer=1000, n_inner=1000, seed=None, chunk=50):
    """Per-outer-sample log ratios of the nested Monte Carlo MI estimator.

    Inner prior samples are drawn independently for every outer sample.
    """
    if not getattr(model, "has_likelihood", False):
        raise UnsupportedModelError(f"model '{model.name}' has no tractable likelihood")
    n_outer = check_positive_int(n_outer, "n_outer")
    n_inner = check_positive_int(n_inner, "n_inner")
    rng = check_random_state(seed)
    xi = np.asarray(xi, dtype=np.float64)
    theta0 = model.sample_prior(n_outer, rng)
    ys = model.simulate(theta0, xi, rng)
    log_num = model.log_likelihood(ys, theta0, xi)
    terms = np.empty(n_outer)
    for start in range(0, n_outer, chunk):
        stop = min(start + chunk, n_outer)
        m = stop - start
        inner = model.sample_prior(m * n_inner, rng).reshape(m, n_inner, -1)
        ll = model.log_likelihood(ys[start:stop, None, :], inner, xi)
        log_evidence = logsumexp(ll, axis=1) - np.log(n_inner)
        terms[start:stop] = log_num[start:stop] - log_evidence
    return terms


def nmc_estimate(model, xi, n_outer=1000, n_inner=1000, seed=None):
    return float(np.mean(nmc_terms(model, xi, n_outer, n_inner, seed)))
