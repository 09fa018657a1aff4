"""scikit-learn style wrappers around the design loop and the posterior samplers."""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .bed_loop import BedConfig, evaluate_smile, run_pathwise_baseline, run_saga_bed
from .grad_free import EsConfig
from .mi_estimators import DEFAULT_TAU
from .posterior import DEFAULT_TARGET_ACCEPTANCE, PosteriorModel, categorical_sample, mh_sample, observe, summarize


class SAGABED(BaseEstimator):
    """Optimize an experimental design for an implicit simulator.

    ``fit`` takes no data: the training set is simulated from the prior at
    every epoch.  After fitting, ``design_`` holds the optimized design,
    ``critic_`` the trained critic and ``trace_`` the per-epoch history.

    Examples
    --------
    >>> est = SAGABED(model="linear", n_epochs=5, n_samples=200)
    >>> est.fit().design_.shape
    (1,)
    """

    def __init__(
        self,
        model="linear",
        n_measurements=1,
        n_epochs=400,
        n_samples=10_000,
        lr_psi=1e-4,
        lr_xi=1e-2,
        tau=DEFAULT_TAU,
        hidden_layers=(100,),
        design_gradient="ges",
        critic_objective="js",
        sigma=None,
        num_pairs=None,
        alpha=None,
        k=None,
        initial_design=None,
        model_options=None,
        seed=0,
        n_jobs=1,
    ):
        self.model = model
        self.n_measurements = n_measurements
        self.n_epochs = n_epochs
        self.n_samples = n_samples
        self.lr_psi = lr_psi
        self.lr_xi = lr_xi
        self.tau = tau
        self.hidden_layers = hidden_layers
        self.design_gradient = design_gradient
        self.critic_objective = critic_objective
        self.sigma = sigma
        self.num_pairs = num_pairs
        self.alpha = alpha
        self.k = k
        self.initial_design = initial_design
        self.model_options = model_options
        self.seed = seed
        self.n_jobs = n_jobs

    def to_config(self):
        options = dict(self.model_options or {})
        probe = BedConfig(model=self.model, n_measurements=self.n_measurements, model_options=options).build_model()
        es = EsConfig.for_dimension(probe.design_dim, sigma=self.sigma, num_pairs=self.num_pairs, alpha=self.alpha, k=self.k)
        return BedConfig(
            model=self.model,
            n_measurements=self.n_measurements,
            n_epochs=self.n_epochs,
            n_samples=self.n_samples,
            lr_psi=self.lr_psi,
            lr_xi=self.lr_xi,
            tau=self.tau,
            hidden_layers=tuple(self.hidden_layers),
            design_gradient=self.design_gradient,
            critic_objective=self.critic_objective,
            es=es,
            seed=self.seed,
            model_options=options,
            initial_design=None if self.initial_design is None else tuple(np.ravel(self.initial_design)),
            n_jobs=self.n_jobs,
        )

    def fit(self, X=None, y=None, callback=None):
        """Run the loop.  ``X`` and ``y`` are ignored."""
        config = self.to_config()
        model = config.build_model()
        runner = run_pathwise_baseline if config.design_gradient == "pathwise" else run_saga_bed
        design, critic, trace = runner(config, model, callback)
        self.model_ = model
        self.design_ = design.values
        self.critic_ = critic
        self.trace_ = trace
        self.mi_lower_bound_ = trace.plateau()
        return self

    def transform(self, X, seed=None):
        """Simulate one outcome per parameter row of ``X`` at the fitted design."""
        check_is_fitted(self, "design_")
        return self.model_.simulate(self.model_.check_thetas(X), self.design_, seed)

    def predict(self, X):
        """Critic scores ``T(theta, y)`` for rows laid out as ``[theta, y]``."""
        check_is_fitted(self, "critic_")
        return self.critic_.scores(X)

    def score(self, X=None, y=None, n_samples=None, seed=None):
        """SMILE of the fitted critic on a fresh prior batch at ``design_``."""
        check_is_fitted(self, "critic_")
        n = n_samples or self.n_samples
        seed = self.seed + 1 if seed is None else seed
        return evaluate_smile(self.model_, self.critic_, self.design_, n, self.tau, seed)


class CriticPosterior(BaseEstimator):
    """Posterior over simulator parameters implied by a fitted :class:`SAGABED`.

    ``fit(y_star)`` samples the posterior for an observed outcome; with no
    argument the outcome is simulated once at the optimized design from the
    model's true parameters.
    """

    def __init__(
        self,
        estimator=None,
        sampler="mh",
        chain_len=50_000,
        burn_in=10_000,
        thin=1,
        proposal_scale=None,
        target_acceptance=DEFAULT_TARGET_ACCEPTANCE,
        pool_size=100_000,
        n_draws=10_000,
        seed=0,
    ):
        self.estimator = estimator
        self.sampler = sampler
        self.chain_len = chain_len
        self.burn_in = burn_in
        self.thin = thin
        self.proposal_scale = proposal_scale
        self.target_acceptance = target_acceptance
        self.pool_size = pool_size
        self.n_draws = n_draws
        self.seed = seed

    def _posterior_model(self, y_star):
        est = self.estimator
        check_is_fitted(est, "critic_")
        return PosteriorModel(est.critic_, y_star, est.model_, est.tau)

    def fit(self, X=None, y=None):
        est = self.estimator
        check_is_fitted(est, "critic_")
        rng = np.random.default_rng([int(self.seed), 0])
        y_star = observe(est.model_, est.design_, seed=rng) if X is None else np.ravel(np.asarray(X, dtype=float))
        self.posterior_ = pm = self._posterior_model(y_star)
        self.y_star_ = pm.y_star
        if self.sampler == "mh":
            info = mh_sample(
                pm,
                self.chain_len,
                self.burn_in,
                self.proposal_scale,
                rng,
                self.thin,
                return_info=True,
                target_acceptance=self.target_acceptance,
            )
            self.samples_ = info.samples
            self.acceptance_rate_ = info.acceptance_rate
        elif self.sampler == "categorical":
            pool = est.model_.sample_prior(self.pool_size, rng)
            self.samples_ = categorical_sample(pm, pool, self.n_draws, rng)
        else:
            raise ValueError(f"unknown sampler '{self.sampler}', choose 'mh' or 'categorical'")
        self.summary_ = summarize(self.samples_, self.sampler, self.seed, est.model_.theta_names)
        return self

    def score_samples(self, X):
        """Unnormalized log posterior density at each row of ``X``."""
        check_is_fitted(self, "posterior_")
        return self.posterior_.logdensity(X)
