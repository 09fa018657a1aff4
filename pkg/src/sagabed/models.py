"""Implicit simulators: noisy linear regression, one-compartment PK, Rabi tuning.

Each model separates noise drawing (``sample_noise``) from the deterministic
map ``simulate_from_noise`` so that a batch can be re-simulated at perturbed
designs with common random numbers.  ``noiseless=True`` is a test hook that
zeroes every noise source; nothing in the CLI can set it.
"""

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, roots_genlaguerre

from ._validation import check_batch, check_positive_int, check_random_state, check_vector
from .exceptions import ConfigError, DomainError, NumericError, SupportError, UnsupportedModelError

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class DesignDomain:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=np.float64).reshape(-1)
        hi = np.asarray(self.upper, dtype=np.float64).reshape(-1)
        if lo.shape != hi.shape or np.any(lo > hi):
            raise ConfigError("design domain needs lower <= upper with matching sizes", key="domain")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def box(cls, lo, hi, dim):
        return cls(np.full(dim, float(lo)), np.full(dim, float(hi)))

    @property
    def dim(self):
        return self.lower.size

    @property
    def width(self):
        return self.upper - self.lower

    def contains(self, xi, atol=0.0):
        xi = np.asarray(xi, dtype=np.float64)
        return bool(np.all(xi >= self.lower - atol) and np.all(xi <= self.upper + atol))

    def project(self, xi):
        return np.clip(np.asarray(xi, dtype=np.float64), self.lower, self.upper)

    def to_unit(self, xi):
        return (np.asarray(xi, dtype=np.float64) - self.lower) / self.width

    def from_unit(self, u):
        return self.lower + np.asarray(u, dtype=np.float64) * self.width

    def sample(self, rng):
        return self.from_unit(check_random_state(rng).uniform(size=self.dim))


@dataclass
class DesignVector:
    values: np.ndarray
    domain: DesignDomain

    def __post_init__(self):
        self.values = check_vector(self.values, self.domain.dim, name="design")

    @property
    def in_domain(self):
        return self.domain.contains(self.values)


@dataclass
class SimBatch:
    thetas: np.ndarray
    ys: np.ndarray
    design: np.ndarray
    seed: object = None

    def to_csv(self, path, theta_names=None):
        p, d = self.thetas.shape[1], self.ys.shape[1]
        names = list(theta_names or [f"theta_{i}" for i in range(p)])
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(names + [f"y_{j}" for j in range(d)])
            for th, y in zip(self.thetas, self.ys):
                writer.writerow([repr(float(v)) for v in (*th, *y)])


class ImplicitModel:
    """Shared plumbing; subclasses fill in priors, noise and the forward map."""

    name = "base"
    theta_names = ()
    has_likelihood = False
    has_pathwise = False
    theta_true = None

    def __init__(self, n_measurements, noiseless=False):
        self.n_measurements = check_positive_int(n_measurements, "n_measurements")
        self.noiseless = bool(noiseless)

    @property
    def theta_dim(self):
        return len(self.theta_names)

    @property
    def y_dim(self):
        return self.n_measurements

    @property
    def design_dim(self):
        return self.domain.dim

    def check_design(self, xi):
        xi = check_vector(xi, self.design_dim, name="design")
        if not self.domain.contains(xi):
            raise DomainError(
                f"{self.name} design outside [{self.domain.lower.min()}, {self.domain.upper.max()}]: {xi}"
            )
        return xi

    def check_thetas(self, thetas):
        return check_batch(thetas, self.theta_dim, name="thetas")

    def simulate(self, thetas, xi, seed=None):
        thetas = self.check_thetas(thetas)
        noise = self.sample_noise(thetas.shape[0], check_random_state(seed))
        return self.simulate_from_noise(thetas, xi, noise)

    def simulate_batch(self, n, xi, seed=None):
        rng = check_random_state(seed)
        thetas = self.sample_prior(n, rng)
        return SimBatch(thetas, self.simulate(thetas, xi, rng), np.asarray(xi, dtype=float).copy(), seed)

    def pathwise_jacobian(self, thetas, xi, noise):
        raise UnsupportedModelError(f"model '{self.name}' has no pathwise gradient")

    def log_likelihood(self, ys, thetas, xi):
        raise UnsupportedModelError(f"model '{self.name}' has no tractable likelihood")

    # The posterior sampler works in an unconstrained coordinate system.
    def to_sampler_space(self, thetas):
        return np.asarray(thetas, dtype=np.float64)

    def from_sampler_space(self, phi):
        return np.asarray(phi, dtype=np.float64)

    def log_prior_sampler_space(self, phi):
        return self.log_prior(self.from_sampler_space(phi))


class LinearModel(ImplicitModel):
    """``y_j = theta1 + theta2 * xi_j + eps_j + nu_j``, eps ~ N(0, 1), nu ~ Gamma.

    ``gamma_convention`` decides whether the second Gamma parameter is a rate
    (mean 1, variance 0.5 for Gamma(2, 2)) or a scale (mean 4, variance 8).
    """

    name = "linear"
    theta_names = ("theta1", "theta2")
    has_likelihood = True
    has_pathwise = True
    theta_true = (1.0, 4.0)
    prior_std = 3.0

    def __init__(
        self,
        n_measurements=1,
        gamma_shape=2.0,
        gamma_param=2.0,
        gamma_convention="rate",
        include_gamma=True,
        noise_std=1.0,
        design_bound=10.0,
        quadrature_order=None,
        noiseless=False,
    ):
        super().__init__(n_measurements, noiseless)
        if gamma_convention not in ("rate", "scale"):
            raise ConfigError("must be 'rate' or 'scale'", key="gamma_convention")
        self.gamma_shape = float(gamma_shape)
        self.gamma_rate = float(gamma_param) if gamma_convention == "rate" else 1.0 / float(gamma_param)
        self.gamma_convention = gamma_convention
        self.include_gamma = bool(include_gamma)
        self.noise_std = float(noise_std)
        self.domain = DesignDomain.box(-design_bound, design_bound, n_measurements)
        if quadrature_order is None:
            # a Gamma wider than the Gaussian needs a denser node set near the peak
            quadrature_order = 96 if self.gamma_rate * self.noise_std >= 1.0 else 300
        nodes, weights = roots_genlaguerre(quadrature_order, self.gamma_shape - 1.0)
        keep = weights > 0
        self._gamma_nodes = nodes[keep] / self.gamma_rate
        self._log_gamma_weights = np.log(weights[keep]) - gammaln(self.gamma_shape)

    @property
    def gamma_mean(self):
        return self.gamma_shape / self.gamma_rate if self.include_gamma else 0.0

    def sample_prior(self, n, seed=None):
        n = check_positive_int(n, "n")
        return check_random_state(seed).normal(0.0, self.prior_std, size=(n, 2))

    def log_prior(self, thetas):
        thetas = np.asarray(thetas, dtype=np.float64)
        s2 = self.prior_std**2
        return np.sum(-0.5 * thetas**2 / s2 - 0.5 * np.log(2 * np.pi * s2), axis=-1)

    def prior_scale_sampler_space(self):
        return np.full(2, self.prior_std)

    def sample_noise(self, n, rng):
        shape = (n, self.n_measurements)
        if self.noiseless:
            return np.zeros(shape), np.zeros(shape)
        eps = rng.normal(0.0, self.noise_std, size=shape)
        if self.include_gamma:
            nu = rng.gamma(self.gamma_shape, 1.0 / self.gamma_rate, size=shape)
        else:
            nu = np.zeros(shape)
        return eps, nu

    def mean_response(self, thetas, xi):
        return thetas[:, :1] + thetas[:, 1:2] * xi[None, :]

    def simulate_from_noise(self, thetas, xi, noise):
        xi = self.check_design(xi)
        thetas = self.check_thetas(thetas)
        eps, nu = noise
        return self.mean_response(thetas, xi) + eps + nu

    def pathwise_jacobian(self, thetas, xi, noise):
        thetas = self.check_thetas(thetas)
        return np.broadcast_to(thetas[:, 1:2], (thetas.shape[0], self.design_dim)).copy()

    def log_likelihood(self, ys, thetas, xi):
        """Sum over measurements of log[N(mean, noise_std^2) * Gamma](y).

        Broadcasts over leading axes of ``ys`` (``..., D``) and ``thetas``
        (``..., 2``).  The Gamma convolution uses generalized Gauss-Laguerre
        quadrature of fixed order.
        """
        xi = self.check_design(xi)
        ys = np.asarray(ys, dtype=np.float64)
        thetas = np.asarray(thetas, dtype=np.float64)
        mean = thetas[..., :1] + thetas[..., 1:2] * xi
        resid = ys - mean
        s = self.noise_std
        if not self.include_gamma:
            return np.sum(-0.5 * (resid / s) ** 2 - np.log(s) - 0.5 * LOG_2PI, axis=-1)
        z = (resid[..., None] - self._gamma_nodes) / s
        log_terms = self._log_gamma_weights - 0.5 * z * z - np.log(s) - 0.5 * LOG_2PI
        m = np.max(log_terms, axis=-1, keepdims=True)
        per_coord = m[..., 0] + np.log(np.sum(np.exp(log_terms - m), axis=-1))
        out = np.sum(per_coord, axis=-1)
        if not np.all(np.isfinite(out)):
            raise NumericError("linear likelihood quadrature produced non-finite values")
        return out


class PKModel(ImplicitModel):
    """One-compartment oral-dose model, one blood sample per patient.

    ``z(t) = dose/V * ka/(ka-ke) * (exp(-ke t) - exp(-ka t)) * (1 + e1) + e2``
    with ``e1 ~ N(0, 0.01)`` and ``e2 ~ N(0, 0.1)`` (variances).
    """

    name = "pk"
    theta_names = ("V", "ka", "ke")
    has_pathwise = True
    theta_true = (20.0, 2.0, 0.2)
    log_prior_mean = np.log([20.0, 1.0, 0.1])
    log_prior_var = 0.05

    def __init__(self, n_measurements=10, dose=400.0, mult_noise_var=0.01, add_noise_var=0.1, t_max=24.0, noiseless=False):
        super().__init__(n_measurements, noiseless)
        self.dose = float(dose)
        self.mult_noise_std = np.sqrt(mult_noise_var)
        self.add_noise_std = np.sqrt(add_noise_var)
        self.domain = DesignDomain.box(0.0, t_max, n_measurements)

    def sample_prior(self, n, seed=None):
        n = check_positive_int(n, "n")
        rng = check_random_state(seed)
        sd = np.sqrt(self.log_prior_var)
        out = np.empty((0, 3))
        while out.shape[0] < n:
            draw = np.exp(rng.normal(self.log_prior_mean, sd, size=(n - out.shape[0], 3)))
            out = np.vstack([out, draw[draw[:, 1] > draw[:, 2]]])
        return out

    def log_prior(self, thetas):
        thetas = np.asarray(thetas, dtype=np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            phi = np.log(thetas)
        return self.log_prior_sampler_space(phi) - np.sum(phi, axis=-1)

    def to_sampler_space(self, thetas):
        return np.log(np.asarray(thetas, dtype=np.float64))

    def from_sampler_space(self, phi):
        return np.exp(np.asarray(phi, dtype=np.float64))

    def log_prior_sampler_space(self, phi):
        # Jacobian of theta = exp(phi) folded in: a plain Gaussian in log space,
        # truncated to ka > ke.  The truncation mass (~1e-13) is ignored.
        phi = np.asarray(phi, dtype=np.float64)
        v = self.log_prior_var
        lp = np.sum(-0.5 * (phi - self.log_prior_mean) ** 2 / v - 0.5 * np.log(2 * np.pi * v), axis=-1)
        ok = np.all(np.isfinite(phi), axis=-1) & (phi[..., 1] > phi[..., 2])
        return np.where(ok, lp, -np.inf)

    def prior_scale_sampler_space(self):
        return np.full(3, np.sqrt(self.log_prior_var))

    def check_thetas(self, thetas):
        thetas = super().check_thetas(thetas)
        if np.any(thetas <= 0):
            raise SupportError("PK parameters must be positive")
        if np.any(thetas[:, 1] <= thetas[:, 2]):
            raise SupportError("PK model requires ka > ke")
        return thetas

    def sample_noise(self, n, rng):
        shape = (n, self.n_measurements)
        if self.noiseless:
            return np.zeros(shape), np.zeros(shape)
        return rng.normal(0.0, self.mult_noise_std, size=shape), rng.normal(0.0, self.add_noise_std, size=shape)

    def _amplitude(self, thetas):
        v, ka, ke = thetas[:, :1], thetas[:, 1:2], thetas[:, 2:3]
        return self.dose / v * ka / (ka - ke), ka, ke

    def concentration(self, thetas, t):
        amp, ka, ke = self._amplitude(thetas)
        return amp * (np.exp(-ke * t[None, :]) - np.exp(-ka * t[None, :]))

    def simulate_from_noise(self, thetas, xi, noise):
        t = self.check_design(xi)
        thetas = self.check_thetas(thetas)
        e1, e2 = noise
        return self.concentration(thetas, t) * (1.0 + e1) + e2

    def pathwise_jacobian(self, thetas, xi, noise):
        t = self.check_design(xi)
        thetas = self.check_thetas(thetas)
        amp, ka, ke = self._amplitude(thetas)
        e1 = noise[0]
        return amp * (ka * np.exp(-ka * t[None, :]) - ke * np.exp(-ke * t[None, :])) * (1.0 + e1)


class RabiModel(ImplicitModel):
    """Photon counts from a driven two-level system with Gaussian read-out noise.

    Design layout is ``[t_1..t_N, df_1..df_N]``; theta is (Rabi frequency,
    resonance offset).  Counts are ``A * theta1^2/Omega^2 * sin^2(t*Omega/2)``
    with ``Omega^2 = theta1^2 + (df - theta2)^2``.
    """

    name = "quantum"
    theta_names = ("rabi_freq", "resonance")
    theta_true = (3.85, 1.67)
    theta_lower = np.array([0.1, -10.0])
    theta_upper = np.array([10.0, 10.0])

    def __init__(self, n_measurements=1, amplitude=100.0, noise_std=1.0, t_max=1.0, detuning_bound=10.0, noiseless=False):
        super().__init__(n_measurements, noiseless)
        self.amplitude = float(amplitude)
        self.noise_std = float(noise_std)
        n = self.n_measurements
        self.domain = DesignDomain(
            np.concatenate([np.zeros(n), np.full(n, -detuning_bound)]),
            np.concatenate([np.full(n, t_max), np.full(n, detuning_bound)]),
        )

    def sample_prior(self, n, seed=None):
        n = check_positive_int(n, "n")
        return check_random_state(seed).uniform(self.theta_lower, self.theta_upper, size=(n, 2))

    def log_prior(self, thetas):
        thetas = np.asarray(thetas, dtype=np.float64)
        inside = np.all((thetas >= self.theta_lower) & (thetas <= self.theta_upper), axis=-1)
        return np.where(inside, -np.sum(np.log(self.theta_upper - self.theta_lower)), -np.inf)

    def prior_scale_sampler_space(self):
        return (self.theta_upper - self.theta_lower) / np.sqrt(12.0)

    def sample_noise(self, n, rng):
        shape = (n, self.n_measurements)
        if self.noiseless:
            return np.zeros(shape)
        return rng.normal(0.0, self.noise_std, size=shape)

    def signal(self, thetas, t, detuning):
        rabi = thetas[:, :1]
        delta = detuning[None, :] - thetas[:, 1:2]
        omega2 = rabi**2 + delta**2
        return self.amplitude * rabi**2 / omega2 * np.sin(0.5 * t[None, :] * np.sqrt(omega2)) ** 2

    def simulate_from_noise(self, thetas, xi, noise):
        xi = self.check_design(xi)
        thetas = self.check_thetas(thetas)
        n = self.n_measurements
        return self.signal(thetas, xi[:n], xi[n:]) + noise

    def contour(self, theta, resolution=101):
        """Noiseless counts on a ``resolution x resolution`` (t, detuning) grid."""
        t = np.linspace(self.domain.lower[0], self.domain.upper[0], resolution)
        df = np.linspace(self.domain.lower[-1], self.domain.upper[-1], resolution)
        tt, ff = np.meshgrid(t, df, indexing="ij")
        theta = np.asarray(theta, dtype=np.float64).reshape(1, 2)
        grid = self.signal(theta, tt.ravel(), ff.ravel()).reshape(resolution, resolution)
        return t, df, grid


MODELS = {"linear": LinearModel, "pk": PKModel, "quantum": RabiModel}


def make_model(name, n_measurements, **options):
    try:
        cls = MODELS[name]
    except KeyError:
        raise ConfigError(f"unknown model '{name}', choose from {sorted(MODELS)}", key="model") from None
    return cls(n_measurements, **options)


def _single(model, theta, xi, seed):
    theta = np.asarray(theta, dtype=np.float64).reshape(1, -1)
    return model.simulate(theta, xi, seed)[0]


def linear_simulate(theta, xi, seed=None, noiseless=False, **options):
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    return _single(LinearModel(xi.size, noiseless=noiseless, **options), theta, xi, seed)


def linear_prior_sample(n, seed=None):
    return LinearModel().sample_prior(n, seed)


def linear_loglik(y, theta, xi, **options):
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    return float(LinearModel(xi.size, **options).log_likelihood(y, theta, xi))


def pk_simulate(theta, times, dose=400.0, seed=None, noiseless=False):
    times = np.atleast_1d(np.asarray(times, dtype=float))
    return _single(PKModel(times.size, dose=dose, noiseless=noiseless), theta, times, seed)


def pk_prior_sample(n, seed=None):
    return PKModel().sample_prior(n, seed)


def pk_pathwise_grad(theta, t, eps1=0.0, dose=400.0):
    model = PKModel(1, dose=dose)
    theta = np.asarray(theta, dtype=np.float64).reshape(1, 3)
    return float(model.pathwise_jacobian(theta, [t], (np.array([[eps1]]), None))[0, 0])


def rabi_simulate(theta, design, seed=None, noiseless=False, **options):
    design = np.asarray(design, dtype=float)
    return _single(RabiModel(design.size // 2, noiseless=noiseless, **options), theta, design, seed)


def rabi_prior_sample(n, seed=None):
    return RabiModel().sample_prior(n, seed)
