import numpy as np
import pytest

from sagabed.bed_loop import (
    BedConfig,
    _EpochObjective,
    evaluate_smile,
    pathwise_design_gradient,
    project_design,
    run_pathwise_baseline,
    run_saga_bed,
)
from sagabed.exceptions import ConfigError, UnsupportedModelError
from sagabed.grad_free import EsConfig, GesState, ges_gradient
from sagabed.mi_estimators import MiBatch, marginal_pairing, smile_lower_bound, critic_scores
from sagabed.models import DesignDomain, DesignVector, LinearModel, PKModel, make_model
from sagabed.nn_core import Critic, InputStandardizer, mlp_init


def tiny(**kw):
    base = dict(model="linear", n_measurements=2, n_epochs=5, n_samples=64, lr_psi=1e-3, lr_xi=0.5, hidden_layers=(8,), seed=3)
    return BedConfig(**{**base, **kw})


def _critic(model, seed=0, n=200):
    rng = np.random.default_rng(seed)
    mlp = mlp_init([model.theta_dim + model.y_dim, 16, 1], seed=seed)
    for b in mlp.biases:
        b[...] = rng.normal(scale=0.1, size=b.shape)
    thetas = model.sample_prior(n, rng)
    ys = model.simulate(thetas, model.domain.sample(rng), rng)
    return Critic(mlp, InputStandardizer().fit(np.hstack([thetas, ys])))


@pytest.mark.parametrize(
    "kw",
    [dict(n_epochs=0), dict(n_samples=1), dict(lr_psi=0.0), dict(lr_xi=-1.0), dict(design_gradient="adam"), dict(critic_objective="nce")],
)
def test_config_rejects_bad_values(kw):
    with pytest.raises(ConfigError):
        tiny(**kw)


def test_project_design_examples():
    dom = DesignDomain.box(-10, 10, 3)
    inside = np.array([-3.0, 0.0, 9.9])
    np.testing.assert_array_equal(project_design(inside, dom), inside)
    once = project_design(np.array([12.0, -11.0, 0.5]), dom)
    np.testing.assert_array_equal(once, [10.0, -10.0, 0.5])
    np.testing.assert_array_equal(project_design(once, dom), once)
    vec = project_design(DesignVector(np.array([12.0, 0.0, 0.0]), dom))
    assert isinstance(vec, DesignVector) and vec.values[0] == 10.0
    with pytest.raises(ValueError):
        project_design(inside)


def test_single_epoch_is_one_projected_step():
    cfg = tiny(n_epochs=1, lr_xi=50.0)
    xi, _, trace = run_saga_bed(cfg)
    assert len(trace) == 1
    expected = LinearModel(2).domain.project(trace.designs[0] + 50.0 * trace.design_grads[0])
    np.testing.assert_array_equal(xi.values, expected)


def test_initial_design_is_used():
    _, _, trace = run_saga_bed(tiny(initial_design=(1.0, -2.0)))
    np.testing.assert_array_equal(trace.designs[0], [1.0, -2.0])


def test_trace_records_and_designs_stay_in_box():
    xi, _, trace = run_saga_bed(tiny(n_epochs=12, lr_xi=1e4))
    assert trace.epochs == list(range(12))
    dom = LinearModel(2).domain
    assert all(dom.contains(d) for d in trace.designs)
    assert xi.in_domain
    # huge steps must have pushed some snapshot onto the boundary
    assert np.any(np.abs(np.array(trace.designs)) == 10.0)


def test_run_is_deterministic(tmp_path):
    for design_gradient in ("ges", "es"):
        paths = []
        for i in range(2):
            _, critic, trace = run_saga_bed(tiny(design_gradient=design_gradient))
            paths.append(tmp_path / f"{design_gradient}{i}.csv")
            trace.to_csv(paths[-1])
            critic.save(tmp_path / f"{design_gradient}{i}.txt")
        assert paths[0].read_bytes() == paths[1].read_bytes()
        assert (tmp_path / f"{design_gradient}0.txt").read_bytes() == (tmp_path / f"{design_gradient}1.txt").read_bytes()


def test_threaded_run_matches_serial():
    a = run_saga_bed(tiny(n_jobs=3))[2]
    b = run_saga_bed(tiny())[2]
    np.testing.assert_array_equal(a.smile, b.smile)
    np.testing.assert_array_equal(a.designs, b.designs)


def test_different_seeds_differ():
    a = run_saga_bed(tiny(seed=1))[2]
    b = run_saga_bed(tiny(seed=2))[2]
    assert a.smile != b.smile


def test_trace_csv_layout(tmp_path):
    _, _, trace = run_saga_bed(tiny(n_epochs=3))
    trace.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "epoch,smile,xi_0,xi_1,grad_norm_xi,grad_norm_psi"
    assert len(lines) == 4
    # full round-trip precision
    assert float(lines[1].split(",")[1]) == trace.smile[0]


def test_run_saga_bed_refuses_pathwise():
    with pytest.raises(ConfigError):
        run_saga_bed(tiny(design_gradient="pathwise"))


def _frozen_objective(model, critic, thetas, noise, perm, tau):
    def f(xi):
        ys = model.simulate_from_noise(thetas, xi, noise)
        joint, marg = critic_scores(critic.mlp, MiBatch(thetas, ys, perm), critic.transform)
        return smile_lower_bound(joint, marg, tau)

    return f


@pytest.mark.parametrize("name,dim", [("linear", 3), ("pk", 3)])
def test_pathwise_gradient_matches_finite_differences(name, dim):
    model = make_model(name, dim)
    critic = _critic(model)
    rng = np.random.default_rng(7)
    n = 50
    thetas = model.sample_prior(n, rng)
    noise = model.sample_noise(n, rng)
    perm = marginal_pairing(n, rng)
    # keep clear of the box edges so central differences stay inside
    xi = model.domain.from_unit(rng.uniform(0.2, 0.8, size=dim))
    batch = MiBatch(thetas, model.simulate_from_noise(thetas, xi, noise), perm)
    g, value, _ = pathwise_design_gradient(model, critic, batch, xi, noise, tau=5.0)
    f = _frozen_objective(model, critic, thetas, noise, perm, 5.0)
    assert value == pytest.approx(f(xi), rel=1e-12)
    h = 1e-5
    fd = np.array([(f(xi + h * e) - f(xi - h * e)) / (2 * h) for e in np.eye(dim)])
    assert np.max(np.abs(g - fd)) / np.max(np.abs(fd)) < 1e-4


def test_pathwise_gradient_is_zero_when_slope_is_zero():
    model = LinearModel(2)
    critic = _critic(model)
    rng = np.random.default_rng(0)
    thetas = model.sample_prior(30, rng)
    thetas[:, 1] = 0.0
    noise = model.sample_noise(30, rng)
    xi = np.array([2.0, -5.0])
    batch = MiBatch(thetas, model.simulate_from_noise(thetas, xi, noise), marginal_pairing(30, rng))
    g, _, _ = pathwise_design_gradient(model, critic, batch, xi, noise, tau=5.0)
    assert np.all(g == 0.0)


def test_pathwise_unsupported_for_quantum():
    with pytest.raises(UnsupportedModelError):
        run_pathwise_baseline(tiny(model="quantum", n_measurements=1))


def test_pathwise_baseline_runs_and_is_deterministic():
    a = run_pathwise_baseline(tiny(model="pk", n_measurements=2, lr_xi=0.1))
    b = run_pathwise_baseline(tiny(model="pk", n_measurements=2, lr_xi=0.1))
    np.testing.assert_array_equal(a[2].smile, b[2].smile)
    assert PKModel(2).domain.contains(a[0].values)


def test_objective_closure_never_touches_critic():
    model = LinearModel(2)
    critic = _critic(model)
    before = [p.copy() for p in critic.mlp.parameters()]
    version = critic.mlp.version
    rng = np.random.default_rng(1)
    thetas = model.sample_prior(40, rng)
    f = _EpochObjective(model, model.domain, critic, thetas, model.sample_noise(40, rng), marginal_pairing(40, rng), 5.0)
    state = GesState(2, 2)
    for s in range(3):
        ges_gradient(f, np.array([0.3, 0.6]), EsConfig(k=2), state, seed=s)
    assert critic.mlp.version == version
    for a, b in zip(before, critic.mlp.parameters()):
        np.testing.assert_array_equal(a, b)


def test_objective_clips_out_of_box_perturbations():
    model = LinearModel(1)
    critic = _critic(model)
    rng = np.random.default_rng(2)
    thetas = model.sample_prior(20, rng)
    f = _EpochObjective(model, model.domain, critic, thetas, model.sample_noise(20, rng), marginal_pairing(20, rng), 5.0)
    assert f(np.array([1.3])) == f(np.array([1.0]))


def _block_means(values, width=50):
    values = np.asarray(values)
    blocks = values[: len(values) // width * width].reshape(-1, width)
    return blocks.mean(axis=1), blocks.std(axis=1, ddof=1) / np.sqrt(width)


@pytest.mark.parametrize("seed", range(3))
def test_frozen_design_smile_improves_with_training(seed):
    cfg = tiny(n_measurements=1, n_epochs=300, n_samples=500, lr_psi=2e-3, lr_xi=0.0, hidden_layers=(32,), seed=seed)
    xi, _, trace = run_saga_bed(cfg)
    np.testing.assert_array_equal(xi.values, trace.designs[0])
    means, ses = _block_means(trace.smile)
    # consecutive 50-epoch means may only dip by sampling noise
    slack = 3 * np.sqrt(ses[1:] ** 2 + ses[:-1] ** 2)
    assert np.all(np.diff(means) >= -slack), means
    assert means[-1] > means[0]


def test_evaluate_smile_deterministic_and_finite():
    model = LinearModel(1)
    critic = _critic(model)
    a = evaluate_smile(model, critic, np.array([5.0]), 200, seed=4)
    assert a == evaluate_smile(model, critic, np.array([5.0]), 200, seed=4)
    assert np.isfinite(a)
