import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sgfm import net
from sgfm.distributions import GuidanceLoss, log_density, make_distribution, sample
from sgfm.evaluation import wasserstein
from sgfm.flow import AffineField, ConstantField, DivergenceError, IntegrationConfig, LearnedField
from sgfm.guidance import (
    GuidanceProblem,
    SamplerConfig,
    WeightedSamples,
    guide,
    hamiltonian,
    leapfrog,
    mala_log_accept,
    modified_grad,
    modified_log_density,
    normalized_weights,
    project_shell,
    regularizer,
    resample,
    sample_hmc,
    sample_is,
    sample_mala,
    sample_opt,
    sample_ula,
)

IDENTITY = IntegrationConfig("euler", 1)


def gaussian_problem(loss="zero", scale=1.0):
    """q0 = N(0, I) with the identity transport map."""
    return GuidanceProblem(make_distribution("gaussian_std"), ConstantField(), GuidanceLoss(loss, scale), IDENTITY)


def learned_problem(loss="moon_task"):
    field = LearnedField(net.init_params((16, 16), seed=3))
    return GuidanceProblem(make_distribution("gaussian_std"), field, GuidanceLoss(loss), IntegrationConfig("rk4", 4))


# -- modified density -----------------------------------------------------


def test_zero_loss_leaves_source_density():
    p = learned_problem("zero")
    x = np.random.default_rng(0).normal(size=(10, 2))
    assert np.array_equal(modified_log_density(p, x), log_density(p.source, x))


def test_tilted_gaussian_density_ratio():
    p = gaussian_problem("quadratic_1d")
    diff = modified_log_density(p, np.zeros(2)) - modified_log_density(p, np.array([1.0, 0.0]))
    assert diff == pytest.approx(1.0)


def test_modified_grad_finite_differences():
    p = learned_problem("moon_task")
    x = np.random.default_rng(1).normal(size=(50, 2))
    g = modified_grad(p, x)
    h = 1e-5
    fd = np.stack([(modified_log_density(p, x + h * e) - modified_log_density(p, x - h * e)) / (2 * h) for e in np.eye(2)], 1)
    assert np.max(np.linalg.norm(g - fd, axis=1) / np.maximum(np.linalg.norm(fd, axis=1), 1e-6)) <= 1e-4


def test_single_point_shapes():
    p = learned_problem()
    assert np.ndim(modified_log_density(p, np.zeros(2))) == 0
    assert modified_grad(p, np.zeros(2)).shape == (2,)


# -- importance sampling --------------------------------------------------


def test_zero_loss_gives_uniform_weights():
    ws = sample_is(gaussian_problem(), 7, seed=0)
    assert np.allclose(ws.weights, 1 / 7)


def test_two_particle_weights():
    assert np.allclose(normalized_weights(-np.array([0.0, np.log(3.0)])), [0.75, 0.25])


def test_single_particle_weight_is_one():
    assert sample_is(learned_problem(), 1, seed=0).weights.tolist() == [1.0]


def test_overflowing_energy_asks_for_rescale():
    p = gaussian_problem("quadratic", scale=5e-324)
    with pytest.raises(FloatingPointError, match="λ"), np.errstate(over="ignore"):
        sample_is(p, 10, seed=0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=30), st.floats(-1e3, 1e3))
def test_weights_normalized_and_shift_invariant(energies, shift):
    e = np.array(energies)
    w = normalized_weights(-e)
    assert np.all(w >= 0) and w.sum() == pytest.approx(1.0)
    assert np.allclose(w, normalized_weights(-(e + shift)), rtol=1e-9, atol=1e-300)


def test_weighted_samples_validation():
    with pytest.raises(ValueError):
        WeightedSamples(np.zeros((2, 2)), [0.5, 0.6])
    with pytest.raises(ValueError):
        WeightedSamples(np.zeros((2, 2)), [1.0])
    ws = WeightedSamples.uniform(np.zeros((4, 2)))
    assert ws.ess() == pytest.approx(4.0)


@pytest.mark.parametrize("method", ["multinomial", "systematic"])
def test_resampling_frequencies(method):
    ws = WeightedSamples(np.zeros((3, 2)), [0.2, 0.5, 0.3])
    idx = resample(ws, 100_000, seed=1, method=method)
    freq = np.bincount(idx, minlength=3) / len(idx)
    assert np.allclose(freq, ws.weights, atol=5 * np.sqrt(0.25 / len(idx)))


def test_systematic_resampling_counts_are_tight():
    ws = WeightedSamples(np.zeros((3, 2)), [0.2, 0.5, 0.3])
    counts = np.bincount(resample(ws, 1000, seed=2, method="systematic"), minlength=3)
    assert np.all(np.abs(counts - 1000 * ws.weights) <= 1)


# -- Langevin ---------------------------------------------------------------


def test_ula_zero_gradient_is_pure_noise():
    p = GuidanceProblem(make_distribution("uniform_square"), ConstantField(), GuidanceLoss("zero"), IDENTITY)
    x = np.array([[0.5, -1.0], [2.0, 0.0]])
    eta = 0.04
    out = sample_ula(p, SamplerConfig("ula", iterations=1, step_size=eta, step_jitter="none"), x, seed=5)
    xi = np.random.default_rng(5).standard_normal(x.shape)
    assert np.allclose(out, x + np.sqrt(2 * eta) * xi, rtol=0, atol=1e-15)


@pytest.mark.slow
def test_ula_stationary_variance():
    p = gaussian_problem()
    x0 = sample(p.source, 10_000, seed=0)
    out = sample_ula(p, SamplerConfig("ula", iterations=500, step_size=1e-2, step_jitter="none"), x0, seed=1)
    assert np.all((out.var(0) >= 0.9) & (out.var(0) <= 1.1))


def test_ula_deterministic():
    p = learned_problem()
    cfg = SamplerConfig("ula", iterations=5, step_size=0.05)
    x0 = np.zeros((4, 2))
    assert np.array_equal(sample_ula(p, cfg, x0, seed=2), sample_ula(p, cfg, x0, seed=2))


def test_mala_identical_proposal_accepts():
    x = np.array([[0.3, 0.1]])
    u = np.array([1.7])
    g = np.zeros((1, 2))
    assert mala_log_accept(u, g, x, u, g, x, np.array([[0.1]])) == pytest.approx(0.0)


def test_mala_log_accept_matches_densities():
    # direct Gaussian transition densities for U = |x|^2 / 2
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=(5, 2)), rng.normal(size=(5, 2))
    eta = 0.3

    def log_q(to, frm):
        return -np.sum((to - frm + eta * frm) ** 2, axis=1) / (4 * eta)

    ux, uy = 0.5 * np.sum(x**2, 1), 0.5 * np.sum(y**2, 1)
    expected = -uy + ux + log_q(x, y) - log_q(y, x)
    assert np.allclose(mala_log_accept(ux, x, x, uy, y, y, eta), expected)


@pytest.mark.slow
def test_mala_gaussian_target():
    p = gaussian_problem()
    x0 = sample(p.source, 100_000, seed=0)
    out, acc = sample_mala(p, SamplerConfig("mala", iterations=50, step_size=0.5), x0, seed=1)
    assert 0.4 <= acc <= 0.8
    assert np.all(np.abs(out.mean(0)) <= 0.05)
    assert np.all((out.var(0) >= 0.9) & (out.var(0) <= 1.1))


def test_mala_never_leaves_support():
    box = make_distribution("uniform_square", low=(-1e-3, -1e-3), high=(1e-3, 1e-3))
    p = GuidanceProblem(box, ConstantField(), GuidanceLoss("zero"), IDENTITY)
    x0 = np.zeros((200, 2))
    out, acc = sample_mala(p, SamplerConfig("mala", iterations=20, step_size=1.0, tune=False), x0, seed=3)
    assert np.array_equal(out, x0) and acc == 0.0


# -- Hamiltonian ----------------------------------------------------------


def test_leapfrog_free_particle():
    p = GuidanceProblem(make_distribution("uniform_square"), ConstantField(), GuidanceLoss("zero"), IDENTITY)
    x, v = np.array([[0.1, 0.2]]), np.array([[1.0, -0.5]])
    xs, vs = leapfrog(p, x, v, 0.1, 7)
    assert np.allclose(xs, x + 0.7 * v) and np.array_equal(vs, v)


def test_leapfrog_reversible():
    p = learned_problem()
    rng = np.random.default_rng(4)
    x, v = rng.normal(size=(20, 2)), rng.normal(size=(20, 2))
    xs, vs = leapfrog(p, x, v, 0.05, 10)
    xb, vb = leapfrog(p, xs, -vs, 0.05, 10)
    assert np.max(np.abs(xb - x)) <= 1e-10 and np.max(np.abs(vb + v)) <= 1e-10


def test_leapfrog_volume_preserving():
    p = learned_problem()
    rng = np.random.default_rng(6)
    h = 1e-5
    for z in rng.normal(size=(20, 4)):

        def step(w):
            xs, vs = leapfrog(p, w[None, :2], w[None, 2:], 0.1, 3)
            return np.concatenate([xs[0], vs[0]])

        jac = np.stack([(step(z + h * e) - step(z - h * e)) / (2 * h) for e in np.eye(4)], 1)
        assert abs(np.linalg.det(jac) - 1) <= 1e-6


def test_hamiltonian_drift_is_second_order():
    p = gaussian_problem()
    rng = np.random.default_rng(0)
    x, v = rng.normal(size=(200, 2)), rng.normal(size=(200, 2))
    eps = [0.2, 0.1, 0.05]
    drift = []
    for e in eps:
        xs, vs = leapfrog(p, x, v, e, int(round(1 / e)))
        drift.append(np.mean(np.abs(hamiltonian(p, xs, vs) - hamiltonian(p, x, v))))
    slope = np.polyfit(np.log(eps), np.log(drift), 1)[0]
    assert abs(slope - 2) <= 0.2
    C = max(d / e**2 for d, e in zip(drift, eps))
    assert all(d <= C * e**2 for d, e in zip(drift, eps))


def test_hamiltonian_tiny_step_always_accepts():
    p = gaussian_problem()
    x0 = sample(p.source, 500, seed=0)
    cfg = SamplerConfig("hmc", iterations=20, step_size=1e-4, leapfrog_steps=1, tune=False, step_jitter="none")
    _, acc = sample_hmc(p, cfg, x0, seed=1)
    assert acc >= 0.999


@pytest.mark.slow
def test_hmc_gaussian_target():
    p = gaussian_problem()
    x0 = sample(p.source, 2000, seed=0)
    out, acc = sample_hmc(p, SamplerConfig("hmc", iterations=500, leapfrog_steps=5, step_size=0.5), x0, seed=1)
    assert 0.5 <= acc <= 0.8
    assert np.all((out.var(0) >= 0.9) & (out.var(0) <= 1.1))


@pytest.mark.parametrize("variant", ["mala", "hmc"])
def test_chains_started_at_target_stay_stationary(variant):
    p = gaussian_problem()
    n = 20_000
    x0 = sample(p.source, n, seed=0)
    cfg = SamplerConfig(variant, iterations=100, step_size=0.4, tune=False)
    run = sample_mala if variant == "mala" else sample_hmc
    out, _ = run(p, cfg, x0, seed=2)
    # 5-sigma bands on mean and variance of N(0, 1)
    assert np.all(np.abs(out.mean(0)) <= 5 / np.sqrt(n))
    assert np.all(np.abs(out.var(0) - 1) <= 5 * np.sqrt(2 / n))


def test_chi2_step_jitter_runs_and_is_seeded():
    p = gaussian_problem()
    cfg = SamplerConfig("hmc", iterations=10, step_jitter="chi2", warmup=5)
    x0 = np.zeros((10, 2))
    a = sample_hmc(p, cfg, x0, seed=3)
    b = sample_hmc(p, cfg, x0, seed=3)
    assert np.array_equal(a[0], b[0]) and a[1] == b[1]


def test_non_finite_hamiltonian_raises():
    p = gaussian_problem()
    with pytest.raises(DivergenceError), np.errstate(all="ignore"):
        sample_hmc(p, SamplerConfig("hmc", iterations=3, step_size=1e200, tune=False, step_jitter="none"), np.ones((2, 2)), seed=0)


# -- optimization ---------------------------------------------------------


def test_r2_reduces_to_half_square_in_2d():
    x = np.random.default_rng(0).normal(size=(6, 2))
    val, grad = regularizer("R2", x)
    assert np.allclose(val, 0.5 * np.sum(x**2, 1)) and np.allclose(grad, x)


def test_r2_singular_at_origin_in_higher_dims():
    with pytest.raises(ValueError):
        regularizer("R2", np.zeros((1, 3)))


@pytest.mark.parametrize("variant", ["R1", "R2", "R3", "R4", "R5"])
@pytest.mark.parametrize("d", [2, 4])
def test_regularizer_gradients(variant, d):
    x = np.random.default_rng(1).normal(size=(30, d)) * 2
    _, g = regularizer(variant, x)
    h = 1e-6
    fd = np.stack([(regularizer(variant, x + h * e)[0] - regularizer(variant, x - h * e)[0]) / (2 * h) for e in np.eye(d)], 1)
    assert np.allclose(g, fd, rtol=1e-5, atol=1e-6)


def test_r1_without_loss_collapses_to_origin():
    p = gaussian_problem()
    x0 = sample(p.source, 100, seed=0)
    out = sample_opt(p, SamplerConfig("opt", opt_variant="R1", opt_lr=0.05, iterations=200), x0)
    assert np.max(np.abs(out)) < 1e-6


def test_shell_projection_examples():
    assert np.allclose(np.linalg.norm(project_shell(np.array([3.0, 0, 0, 0]))), np.sqrt(4 + np.sqrt(8)))
    assert np.linalg.norm(project_shell(np.array([0.1, 0, 0, 0]))) == pytest.approx(np.sqrt(4 - np.sqrt(8)))
    assert np.linalg.norm(project_shell(np.array([0.1, 0, 0, 0]))) == pytest.approx(1.082, abs=1e-3)
    x = np.array([1.0, 1.0, 1.0, 1.0])
    assert np.array_equal(project_shell(x), x)
    assert np.allclose(project_shell(np.zeros(4)), [np.sqrt(4 - np.sqrt(8)), 0, 0, 0])
    with pytest.raises(ValueError):
        project_shell(np.ones(2), d=0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=2, max_size=5))
def test_projection_lands_in_shell(values):
    x = np.array(values)
    d = len(x)
    y = project_shell(x)
    r2 = np.sum(y**2)
    assert abs(r2 - d) <= np.sqrt(2 * d) * (1 + 1e-9)
    if abs(np.sum(x**2) - d) <= np.sqrt(2 * d):
        assert np.array_equal(y, x)


def test_projected_descent_stays_feasible():
    p = learned_problem("eight_gaussian_task")
    out = sample_opt(p, SamplerConfig("opt", opt_variant="projected", iterations=20), sample(p.source, 50, seed=1))
    assert np.all(np.abs(np.sum(out**2, 1) - 2) <= 2 * (1 + 1e-9))


# -- end to end ------------------------------------------------------------


@pytest.mark.parametrize("variant", ["is", "ula", "mala", "hmc", "opt"])
def test_guide_deterministic(variant):
    p = learned_problem()
    cfg = SamplerConfig(variant, iterations=5, warmup=3)
    a, b = guide(p, cfg, 20, seed=7), guide(p, cfg, 20, seed=7)
    assert np.array_equal(a.x1, b.x1)
    assert a.x1.shape == (20, 2)


def test_zero_guidance_matches_unguided_generation():
    field = AffineField(0.5, [1.0, 1.0])
    p = GuidanceProblem(make_distribution("gaussian_std"), field, GuidanceLoss("zero"), IntegrationConfig("euler", 5))
    n = 1000
    guided = guide(p, SamplerConfig("is"), n, seed=0).x1
    plain_a = field.exact_map(sample(p.source, n, seed=1))
    plain_b = field.exact_map(sample(p.source, n, seed=2))
    assert wasserstein(guided, plain_a, 1) <= 1.5 * wasserstein(plain_b, plain_a, 1)


def test_guide_rejects_empty_request():
    with pytest.raises(ValueError):
        guide(gaussian_problem(), SamplerConfig(), 0)


def test_sampler_config_validation():
    for bad in [dict(variant="nuts"), dict(iterations=0), dict(step_size=0.0), dict(leapfrog_steps=0),
                dict(opt_variant="R9"), dict(step_jitter="gamma"), dict(resampling="stratified")]:
        with pytest.raises(ValueError):
            SamplerConfig(**bad)
    assert SamplerConfig("opt").n_iterations == 60
    assert SamplerConfig("hmc").n_iterations == 100
    assert SamplerConfig("hmc").step_jitter == "chi2" and SamplerConfig("mala").step_jitter == "none"
