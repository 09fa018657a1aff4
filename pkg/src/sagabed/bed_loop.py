"""Joint ascent over the design and the critic.

Each epoch draws a fresh prior batch, simulates it at the current design,
scores the SMILE bound, estimates a design gradient (Guided ES, plain ES or
the pathwise chain rule), takes one projected ascent step on the design and
one Adam ascent step on the critic.

Gradient-free perturbations are drawn in normalized coordinates
``u = (xi - lo) / (hi - lo)`` so one smoothing scale serves domains of very
different size; the estimate is mapped back and the ascent step is taken in
raw design units.
"""

import csv
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from dataclasses import dataclass, field, replace

import numpy as np

from ._validation import check_positive_float, check_positive_int
from .exceptions import ConfigError, NumericError, UnsupportedModelError
from .grad_free import EsConfig, GesState, es_gradient, ges_gradient
from .mi_estimators import (
    CRITIC_OBJECTIVES,
    DEFAULT_TAU,
    MiBatch,
    critic_score_grads,
    critic_scores,
    marginal_pairing,
    smile_lower_bound,
    smile_score_grads,
    smile_value_and_grads,
)
from .models import DesignDomain, DesignVector, make_model
from .nn_core import AdamState, Critic, InputStandardizer, adam_step, mlp_backward, mlp_forward, mlp_init

logger = logging.getLogger(__name__)

DESIGN_GRADIENTS = ("ges", "es", "pathwise")

# seed-stream tags; each purpose gets an independent SeedSequence branch
_STREAM_INIT_DESIGN, _STREAM_INIT_CRITIC, _STREAM_EPOCH, _STREAM_ES = 0, 1, 2, 3


@dataclass
class BedConfig:
    model: str = "linear"
    n_measurements: int = 1
    n_epochs: int = 400
    n_samples: int = 10_000
    lr_psi: float = 1e-4
    lr_xi: float = 1e-2
    tau: float = DEFAULT_TAU
    hidden_layers: tuple = (100,)
    design_gradient: str = "ges"
    critic_objective: str = "js"
    es: EsConfig = None
    seed: int = 0
    model_options: dict = field(default_factory=dict)
    initial_design: tuple = None
    n_jobs: int = 1

    def __post_init__(self):
        check_positive_int(self.n_epochs, "n_epochs")
        check_positive_int(self.n_samples, "n_samples", minimum=2)
        check_positive_float(self.lr_psi, "lr_psi")
        # lr_xi == 0 freezes the design (pure MI estimation)
        if not (np.isfinite(self.lr_xi) and self.lr_xi >= 0):
            raise ConfigError(f"must be >= 0, got {self.lr_xi}", key="lr_xi")
        check_positive_float(self.tau, "tau", allow_inf=True)
        check_positive_int(self.n_jobs, "n_jobs")
        if self.critic_objective not in CRITIC_OBJECTIVES:
            raise ConfigError(f"must be one of {CRITIC_OBJECTIVES}", key="critic_objective")
        if self.design_gradient not in DESIGN_GRADIENTS:
            raise ConfigError(f"must be one of {DESIGN_GRADIENTS}", key="design_gradient")
        self.hidden_layers = tuple(int(h) for h in self.hidden_layers)

    def build_model(self, **extra):
        return make_model(self.model, self.n_measurements, **{**self.model_options, **extra})

    def es_config(self, design_dim):
        if self.es is None:
            return EsConfig.for_dimension(design_dim)
        return self.es

    def layer_sizes(self, model):
        return [model.theta_dim + model.y_dim, *self.hidden_layers, 1]


@dataclass
class BedTrace:
    epochs: list = field(default_factory=list)
    smile: list = field(default_factory=list)
    designs: list = field(default_factory=list)
    design_grads: list = field(default_factory=list)
    grad_norm_xi: list = field(default_factory=list)
    grad_norm_psi: list = field(default_factory=list)
    wall_clock: list = field(default_factory=list)
    final_design: np.ndarray = None

    def __len__(self):
        return len(self.epochs)

    def append(self, epoch, smile, design, design_grad, grad_norm_psi, wall):
        self.epochs.append(epoch)
        self.smile.append(float(smile))
        self.designs.append(np.array(design, dtype=float))
        self.design_grads.append(np.array(design_grad, dtype=float))
        self.grad_norm_xi.append(float(np.linalg.norm(design_grad)))
        self.grad_norm_psi.append(float(grad_norm_psi))
        self.wall_clock.append(float(wall))

    def plateau(self, last=50):
        return float(np.mean(self.smile[-last:]))

    def to_csv(self, path):
        dim = len(self.designs[0]) if self.designs else 0
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "smile", *[f"xi_{j}" for j in range(dim)], "grad_norm_xi", "grad_norm_psi"])
            for i, epoch in enumerate(self.epochs):
                writer.writerow(
                    [
                        epoch,
                        repr(self.smile[i]),
                        *(repr(float(v)) for v in self.designs[i]),
                        repr(self.grad_norm_xi[i]),
                        repr(self.grad_norm_psi[i]),
                    ]
                )


def project_design(xi, domain=None):
    """Clamp each coordinate into its interval; accepts a DesignVector or raw values."""
    if isinstance(xi, DesignVector):
        return DesignVector(xi.domain.project(xi.values), xi.domain)
    if domain is None:
        raise ValueError("raw design values need a domain")
    return domain.project(xi)


def _rng(seed, *stream):
    return np.random.default_rng([int(seed), *stream])


class _EpochObjective:
    """SMILE at a perturbed design with the epoch's theta, noise and pairing frozen."""

    def __init__(self, model, domain, critic, thetas, noise, perm, tau):
        self.model = model
        self.domain = domain
        self.critic = critic
        self.thetas = thetas
        self.noise = noise
        self.perm = perm
        self.tau = tau

    def __call__(self, u):
        # perturbed points can leave the box; evaluate at the projected design
        xi = self.domain.from_unit(np.clip(u, 0.0, 1.0))
        ys = self.model.simulate_from_noise(self.thetas, xi, self.noise)
        batch = MiBatch(self.thetas, ys, self.perm)
        joint, marg = critic_scores(self.critic.mlp, batch, self.critic.transform)
        return smile_lower_bound(joint, marg, self.tau)


def pathwise_design_gradient(model, critic, batch, xi, noise, tau, objective="smile"):
    """Chain-rule gradient of SMILE with respect to the raw design.

    Returns ``(design_grad, smile_value, critic_param_grads)`` where the
    parameter gradients belong to the critic training ``objective``.
    """
    if not model.has_pathwise:
        raise UnsupportedModelError(f"model '{model.name}' has no pathwise gradient")
    scores, cache = mlp_forward(critic.mlp, batch.critic_inputs(critic.transform))
    n = len(batch)
    joint, marg = scores[:n], scores[n:]
    value = smile_lower_bound(joint, marg, tau)
    grads, input_grads = mlp_backward(critic.mlp, cache, np.concatenate(smile_score_grads(joint, marg, tau)))
    if objective != "smile":
        grads, _ = mlp_backward(critic.mlp, cache, np.concatenate(critic_score_grads(joint, marg, objective, tau)))
    p = model.theta_dim
    scale = critic.standardizer.scale_[p:] if critic.standardizer is not None else 1.0
    g_y = input_grads[:, p:] / scale
    d_y = g_y[:n].copy()
    # marginal row i pairs theta_i with y_perm[i]
    d_y[batch.perm] += g_y[n:]
    jac = model.pathwise_jacobian(batch.thetas, xi, noise)
    return (d_y * jac).sum(axis=0), value, grads


def _run(config, model=None, callback=None):
    model = model if model is not None else config.build_model()
    domain: DesignDomain = model.domain
    dim = domain.dim
    seed = config.seed
    if config.design_gradient == "pathwise" and not model.has_pathwise:
        raise UnsupportedModelError(f"model '{model.name}' has no pathwise gradient")

    if config.initial_design is not None:
        xi = model.check_design(config.initial_design).copy()
    else:
        xi = domain.from_unit(_rng(seed, _STREAM_INIT_DESIGN).uniform(size=dim))
    mlp = mlp_init(config.layer_sizes(model), seed=[int(seed), _STREAM_INIT_CRITIC])
    critic = Critic(mlp, None)
    adam = AdamState.zeros_like(mlp)
    es_cfg = config.es_config(dim)
    ges_state = GesState(dim, es_cfg.k)
    trace = BedTrace()
    n = config.n_samples
    tau = config.tau

    pool = ThreadPoolExecutor(config.n_jobs) if config.n_jobs > 1 else nullcontext()
    with pool as executor:
        for epoch in range(config.n_epochs):
            tic = time.perf_counter()
            rng = _rng(seed, _STREAM_EPOCH, epoch)
            thetas = model.sample_prior(n, rng)
            noise = model.sample_noise(n, rng)
            ys = model.simulate_from_noise(thetas, xi, noise)
            perm = marginal_pairing(n, rng)
            if critic.standardizer is None:
                critic.standardizer = InputStandardizer().fit(np.hstack([thetas, ys]))
            batch = MiBatch(thetas, ys, perm)

            if config.design_gradient == "pathwise":
                g_xi, value, grads = pathwise_design_gradient(
                    model, critic, batch, xi, noise, tau, config.critic_objective
                )
            else:
                value, grads, _ = smile_value_and_grads(mlp, batch, tau, critic.transform, config.critic_objective)
                if config.lr_xi == 0:
                    g_xi = np.zeros(dim)
                else:
                    u = domain.to_unit(xi)
                    f = _EpochObjective(model, domain, critic, thetas, noise, perm, tau)
                    es_seed = _rng(seed, _STREAM_ES, epoch)
                    try:
                        if config.design_gradient == "ges":
                            g_u = ges_gradient(f, u, es_cfg, ges_state, es_seed, executor)
                        else:
                            g_u = es_gradient(f, u, es_cfg.sigma, es_cfg.num_pairs, es_seed, executor)
                    except NumericError as exc:
                        raise NumericError(f"epoch {epoch}: {exc}") from exc
                    g_xi = g_u / domain.width
            if not np.isfinite(value):
                raise NumericError(f"non-finite SMILE value {value} at epoch {epoch}")

            adam_step(mlp, grads, adam, config.lr_psi, maximize=True)
            trace.append(epoch, value, xi, g_xi, grads.norm(), time.perf_counter() - tic)
            xi = domain.project(xi + config.lr_xi * g_xi)
            if callback is not None:
                callback(epoch, trace)
            if epoch % 50 == 0:
                logger.debug("epoch %d smile %.4f |g_xi| %.3g", epoch, value, trace.grad_norm_xi[-1])

    xi_star = DesignVector(xi, domain)
    trace.final_design = xi_star.values.copy()
    return xi_star, critic, trace


def run_saga_bed(config, model=None, callback=None):
    """Run the gradient-free loop; returns ``(xi_star, critic, trace)``."""
    if config.design_gradient == "pathwise":
        raise ConfigError("use run_pathwise_baseline for the pathwise design gradient", key="design_gradient")
    return _run(config, model, callback)


def run_pathwise_baseline(config, model=None, callback=None):
    """Same loop with the exact chain-rule design gradient (linear and PK only)."""
    return _run(replace(config, design_gradient="pathwise"), model, callback)


def evaluate_smile(model, critic, xi, n_samples, tau=DEFAULT_TAU, seed=None):
    """SMILE of a frozen critic on a fresh batch at design ``xi``."""
    rng = np.random.default_rng(seed)
    thetas = model.sample_prior(n_samples, rng)
    ys = model.simulate(thetas, xi, rng)
    batch = MiBatch(thetas, ys, marginal_pairing(n_samples, rng))
    joint, marg = critic_scores(critic.mlp, batch, critic.transform)
    return smile_lower_bound(joint, marg, tau)
