"""Posterior sampling from a trained critic.

The unnormalized posterior is ``clip(exp(T(theta, y*) - 1), e^-tau, e^tau) * p(theta)``.
Two samplers are provided: random-walk Metropolis in the model's unconstrained
sampler coordinates, and self-normalized importance resampling of a prior pool.
"""

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ._validation import check_batch, check_positive_int, check_random_state, check_vector
from .exceptions import DiagnosticsError, ShapeError
from .mi_estimators import DEFAULT_TAU, clip
from .nn_core import Critic

SAMPLERS = ("mh", "categorical")
DEFAULT_TARGET_ACCEPTANCE = 0.3
_ADAPT_WINDOW = 100


@dataclass
class PosteriorModel:
    critic: Critic
    y_star: np.ndarray
    model: object
    tau: float = DEFAULT_TAU

    def __post_init__(self):
        self.y_star = check_vector(self.y_star, name="y_star")
        if not self.tau > 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        expected = self.model.theta_dim + self.y_star.size
        if self.critic.n_inputs != expected:
            raise ShapeError(
                f"critic takes {self.critic.n_inputs} inputs but theta + y* has {expected} "
                f"({self.model.theta_dim} + {self.y_star.size})"
            )

    @property
    def theta_dim(self):
        return self.model.theta_dim

    def log_weight(self, thetas):
        """``clip(T - 1, -tau, tau)`` per row; always inside the clip band."""
        thetas = check_batch(thetas, self.theta_dim, name="thetas")
        rows = np.hstack([thetas, np.broadcast_to(self.y_star, (thetas.shape[0], self.y_star.size))])
        return clip(self.critic.scores(rows) - 1.0, -self.tau, self.tau)

    def logdensity(self, thetas):
        thetas = check_batch(thetas, self.theta_dim, name="thetas", allow_nonfinite=True)
        lp = np.asarray(self.model.log_prior(thetas), dtype=np.float64)
        out = np.full(thetas.shape[0], -np.inf)
        ok = np.isfinite(lp)
        if np.any(ok):
            out[ok] = self.log_weight(thetas[ok]) + lp[ok]
        return out

    def logdensity_sampler_space(self, phi):
        """Log density of the sampler coordinates (prior Jacobian included)."""
        phi = check_batch(phi, self.theta_dim, name="phi", allow_nonfinite=True)
        lp = np.asarray(self.model.log_prior_sampler_space(phi), dtype=np.float64)
        out = np.full(phi.shape[0], -np.inf)
        ok = np.isfinite(lp)
        if np.any(ok):
            out[ok] = self.log_weight(self.model.from_sampler_space(phi[ok])) + lp[ok]
        return out


def posterior_logdensity(pm, theta):
    """Unnormalized log posterior of one theta; ``-inf`` outside the prior support."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim == 1:
        return float(pm.logdensity(theta[None, :])[0])
    return pm.logdensity(theta)


def observe(model, xi, theta=None, seed=None):
    """One simulated experiment at ``xi``; ``theta`` defaults to the model's true value."""
    theta = model.theta_true if theta is None else theta
    thetas = np.asarray(theta, dtype=np.float64).reshape(1, -1)
    return model.simulate(thetas, np.asarray(xi, dtype=np.float64), seed)[0]


@dataclass
class ChainResult:
    samples: np.ndarray
    acceptance_rate: float
    n_accepted: int
    n_steps: int
    proposal_scale: np.ndarray = None


def random_walk_metropolis(
    logdensity, x0, chain_len, burn_in=0, proposal_scale=1.0, seed=None, thin=1, target_acceptance=None
):
    """Gaussian random-walk Metropolis for a log density over row vectors.

    ``logdensity`` maps an ``(1, d)`` array to a length-1 array.  Returns the
    post-burn-in draws (every ``thin``-th).  A chain that never moves raises
    :class:`DiagnosticsError`.

    With ``target_acceptance`` set, the proposal scale is multiplied by a
    common factor tuned during burn-in (every ``_ADAPT_WINDOW`` steps) toward
    that acceptance rate, then frozen, so the kept draws come from a fixed
    Metropolis kernel.
    """
    chain_len = check_positive_int(chain_len, "chain_len")
    burn_in = check_positive_int(burn_in, "burn_in", minimum=0)
    thin = check_positive_int(thin, "thin")
    if not chain_len > burn_in:
        raise ValueError(f"chain_len ({chain_len}) must exceed burn_in ({burn_in})")
    x = check_vector(x0, name="x0").copy()
    scale = np.broadcast_to(np.asarray(proposal_scale, dtype=np.float64), x.shape)
    if not np.all(scale > 0):
        raise ValueError(f"proposal_scale must be > 0 componentwise, got {proposal_scale}")
    rng = check_random_state(seed)
    steps = rng.standard_normal((chain_len, x.size)) * scale
    log_u = np.log(rng.uniform(size=chain_len))

    current = float(logdensity(x[None, :])[0])
    if not np.isfinite(current):
        raise DiagnosticsError(f"chain starts at a point of zero density: {x.tolist()}")
    kept = []
    accepted = kept_accepted = window = 0
    factor = 1.0
    for i in range(chain_len):
        proposal = x + factor * steps[i]
        value = float(logdensity(proposal[None, :])[0])
        moved = log_u[i] < value - current
        if moved:
            x, current = proposal, value
            accepted += 1
            window += 1
            if i >= burn_in:
                kept_accepted += 1
        if target_acceptance is not None and i < burn_in and (i + 1) % _ADAPT_WINDOW == 0:
            factor *= np.exp(2.0 * (window / _ADAPT_WINDOW - target_acceptance))
            window = 0
        if i >= burn_in and (i - burn_in) % thin == 0:
            kept.append(x)
    if accepted == 0:
        raise DiagnosticsError(f"no proposal accepted in {chain_len} steps; shrink proposal_scale")
    # the reported rate covers the kept (post-burn-in) part of the chain
    rate = kept_accepted / (chain_len - burn_in)
    return ChainResult(np.array(kept), rate, accepted, chain_len, factor * scale)


def _chain_start(pm, rng, pool_size=1000):
    # highest-weight draw of a small prior pool: inside the support and near the mode
    pool = pm.model.sample_prior(pool_size, rng)
    return pm.model.to_sampler_space(pool[np.argmax(pm.logdensity(pool))])


def mh_sample(
    pm,
    chain_len=50_000,
    burn_in=10_000,
    proposal_scale=None,
    seed=None,
    thin=1,
    return_info=False,
    target_acceptance=DEFAULT_TARGET_ACCEPTANCE,
):
    """Metropolis draws from the critic posterior.

    Proposals are Gaussian in the model's sampler coordinates (log-space for
    PK) starting from a per-coordinate scale of 10% of the prior std there.
    The scale is tuned during burn-in toward ``target_acceptance``; pass
    ``None`` to keep it fixed.
    """
    rng = check_random_state(seed)
    if proposal_scale is None:
        proposal_scale = 0.1 * pm.model.prior_scale_sampler_space()
    x0 = _chain_start(pm, rng)
    result = random_walk_metropolis(
        pm.logdensity_sampler_space, x0, chain_len, burn_in, proposal_scale, rng, thin, target_acceptance
    )
    result.samples = pm.model.from_sampler_space(result.samples)
    return result if return_info else result.samples


def categorical_sample(pm, prior_pool, m, seed=None):
    """Resample ``m`` rows of ``prior_pool`` with probability proportional to the clipped weights."""
    pool = check_batch(prior_pool, pm.theta_dim, name="prior_pool")
    m = check_positive_int(m, "m")
    logw = pm.log_weight(pool)
    p = np.exp(logw - logw.max())
    p /= p.sum()
    idx = check_random_state(seed).choice(pool.shape[0], size=m, replace=True, p=p)
    return pool[idx]


@dataclass
class PosteriorSummary:
    mean: np.ndarray
    std: np.ndarray
    n_samples: int
    sampler: str = ""
    seed: object = None
    names: tuple = field(default_factory=tuple)

    def to_dict(self):
        d = asdict(self)
        d["mean"] = [float(v) for v in self.mean]
        d["std"] = [float(v) for v in self.std]
        d["names"] = list(self.names)
        return d

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


def summarize(samples, sampler="", seed=None, names=()):
    samples = check_batch(samples, name="samples")
    if samples.shape[0] < 2:
        raise ValueError(f"need at least 2 samples to summarize, got {samples.shape[0]}")
    return PosteriorSummary(
        samples.mean(axis=0), samples.std(axis=0, ddof=1), samples.shape[0], sampler, seed, tuple(names)
    )


def write_samples_csv(path, samples, names=None):
    samples = check_batch(samples, name="samples")
    names = list(names) if names else [f"theta_{j}" for j in range(samples.shape[1])]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for row in samples:
            writer.writerow([repr(float(v)) for v in row])


def read_samples_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        names = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    return np.array(rows).reshape(-1, len(names)), names
