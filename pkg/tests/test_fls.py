"""Tests for the stopping-time discretization of surface Brownian motion.

The chain alternates first hits of an inner and an outer sphere around the
base orbit and thins outer exits by an acceptance probability proportional
to the reciprocal harmonic exit density, so that accepted exits land
uniformly on the outer sphere.  Expected values below are either closed
forms or frozen Monte Carlo measurements at the stated seeds.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from bifcurrent.brownian import sample_ball_exits
from bifcurrent.errors import ChainError, ConfigError
from bifcurrent.fls import (
    FLSConfig,
    empirical_mu,
    estimate_tau,
    harmonic_exit_density,
    max_acceptance_probability,
    radius_ratio,
    run_chain,
    run_chain_ensemble,
)
from bifcurrent.harness import derive_seed
from bifcurrent.lattice import free_reduce

M = 20260815


@pytest.fixture(scope="module")
def first_steps(surface):
    """2000 independent chains, one accepted step each."""
    return run_chain_ensemble(
        surface, FLSConfig(), n_steps=1, n_chains=2000, seed=derive_seed(M, "fls-ens")
    )


@pytest.fixture(scope="module")
def pair_steps(surface):
    """400 independent chains, two accepted steps each."""
    return run_chain_ensemble(
        surface, FLSConfig(), n_steps=2, n_chains=400, seed=derive_seed(M, "fls-ens2")
    )


@pytest.fixture(scope="module")
def long_run(surface):
    """One chain run for 120 accepted steps."""
    return run_chain(surface, FLSConfig(), n_steps=120, seed=derive_seed(M, "fls-smoke"))


# -- closed forms --------------------------------------------------------------


def test_radius_ratio_and_acceptance_bound_closed_forms():
    u = radius_ratio(0.15, 0.45)
    assert math.isclose(u, math.tanh(0.075) / math.tanh(0.225), rel_tol=1e-15)
    assert math.isclose(u, 0.33830535523165334, rel_tol=1e-12)
    bound = max_acceptance_probability(0.15, 0.45)
    assert math.isclose(bound, (1.0 - u) / (1.0 + u), rel_tol=1e-15)
    assert math.isclose(bound, 0.4944272562174804, rel_tol=1e-12)
    # the default config sits just under the bound
    cfg = FLSConfig()
    assert cfg.p == 0.49 < bound


def test_harmonic_density_is_uniform_from_the_center():
    theta = np.linspace(-math.pi, math.pi, 101)
    assert np.all(harmonic_exit_density(0.0, theta) == 1.0)
    assert harmonic_exit_density(0.0, 1.2345) == 1.0


def test_harmonic_density_normalization_extremes_and_symmetry():
    u = radius_ratio(0.15, 0.45)
    theta = np.linspace(-math.pi, math.pi, 1 << 14, endpoint=False)
    dens = harmonic_exit_density(u, theta)
    # uniform-grid average of a periodic analytic function is spectrally exact
    assert abs(dens.mean() - 1.0) < 1e-12
    assert math.isclose(
        harmonic_exit_density(u, math.pi), (1.0 - u) / (1.0 + u), rel_tol=1e-12
    )
    assert math.isclose(
        harmonic_exit_density(u, 0.0), (1.0 + u) / (1.0 - u), rel_tol=1e-12
    )
    assert np.allclose(dens, harmonic_exit_density(u, -theta), rtol=1e-12)


@settings(max_examples=60, deadline=None)
@given(
    u=st.floats(min_value=0.0, max_value=0.95),
    theta=st.floats(min_value=-10.0, max_value=10.0),
)
def test_harmonic_density_bounds_and_periodicity(u, theta):
    val = harmonic_exit_density(u, theta)
    lo = (1.0 - u) / (1.0 + u)
    hi = (1.0 + u) / (1.0 - u)
    assert lo - 1e-12 <= val <= hi + 1e-12
    assert math.isclose(val, harmonic_exit_density(u, -theta), rel_tol=1e-12)
    assert math.isclose(val, harmonic_exit_density(u, theta + 2.0 * math.pi), rel_tol=1e-9)


def test_harmonic_density_rejects_ratios_outside_the_disk():
    for bad in (-0.1, 1.0, 1.5):
        with pytest.raises(ConfigError):
            harmonic_exit_density(bad, 0.3)


def test_radius_ratio_rejects_bad_radii():
    with pytest.raises(ConfigError):
        radius_ratio(0.0, 0.4)
    with pytest.raises(ConfigError):
        radius_ratio(0.5, 0.4)


# -- configuration -------------------------------------------------------------


def test_config_validation(surface):
    FLSConfig().validate_for(surface)
    with pytest.raises(ConfigError):
        FLSConfig(r=0.45, R=0.15)
    with pytest.raises(ConfigError):
        FLSConfig(p=0.0)
    with pytest.raises(ConfigError):
        FLSConfig(p=1.0)
    with pytest.raises(ConfigError):
        FLSConfig(p=0.51)  # above the thinning bound for r=0.15, R=0.45
    with pytest.raises(ConfigError):
        FLSConfig(max_cycles=0)
    with pytest.raises(ConfigError):
        # 2R exceeds the systole, so translated outer balls would overlap
        FLSConfig(R=0.98).validate_for(surface)


def test_run_rejects_bad_sizes(surface):
    with pytest.raises(ConfigError):
        run_chain_ensemble(surface, FLSConfig(), n_steps=0, n_chains=5, seed=1)
    with pytest.raises(ConfigError):
        run_chain_ensemble(surface, FLSConfig(), n_steps=1, n_chains=0, seed=1)
    with pytest.raises(ConfigError):
        run_chain(surface, FLSConfig(), n_steps=1, seed=1, dt=0.0)
    with pytest.raises(ConfigError):
        run_chain(surface, FLSConfig(), n_steps=1, seed=1, dt=0.02)


def test_cycle_budget_error(surface):
    cfg = FLSConfig(p=1e-6, max_cycles=2)
    with pytest.raises(ChainError):
        run_chain(surface, cfg, n_steps=1, seed=derive_seed(M, "fls-budget"))


def test_single_chain_is_deterministic_in_the_seed(surface):
    a = run_chain(surface, FLSConfig(), n_steps=2, seed=derive_seed(M, "fls-det"))
    b = run_chain(surface, FLSConfig(), n_steps=2, seed=derive_seed(M, "fls-det"))
    c = run_chain(surface, FLSConfig(), n_steps=2, seed=derive_seed(M, "fls-det2"))
    assert a.increments == b.increments
    assert np.array_equal(a.stop_times, b.stop_times)
    assert np.array_equal(a.exit_angles, b.exit_angles)
    assert np.array_equal(a.rejected_cycles, b.rejected_cycles)
    assert not np.array_equal(a.stop_times, c.stop_times)


# -- exit law oracle -----------------------------------------------------------


def test_off_center_exits_follow_the_disk_kernel():
    # plain-chart oracle for the thinning density: Brownian exits through a
    # sphere of radius R, started at distance r from the center, land with
    # the harmonic density at ratio u = radius_ratio(r, R)
    r, R = 0.15, 0.45
    u = radius_ratio(r, R)
    w0 = math.tanh(r / 2.0)
    start = 1j * (1.0 + w0) / (1.0 - w0)
    exits = sample_ball_exits(
        10_000, R, dt=5e-4, seed=derive_seed(M, "poisson"), start=start
    )
    nb = 16
    edges = np.linspace(-math.pi, math.pi, nb + 1)
    counts, _ = np.histogram(exits.angles, bins=edges)
    theta = np.linspace(-math.pi, math.pi, 16 * 512 + 1)
    dens = harmonic_exit_density(u, theta)
    cum = np.concatenate(
        [[0.0], np.cumsum((dens[1:] + dens[:-1]) / 2.0 * np.diff(theta))]
    )
    cum /= cum[-1]
    expected = np.diff(np.interp(edges, theta, cum)) * counts.sum()
    chi2 = float(((counts - expected) ** 2 / expected).sum())
    p = 1.0 - stats.chi2.cdf(chi2, nb - 1)
    assert p > 0.01  # measured 0.67 at this seed
    # sanity: the same counts decisively reject a uniform law
    flat = counts.sum() / nb
    chi2_flat = float(((counts - flat) ** 2 / flat).sum())
    assert 1.0 - stats.chi2.cdf(chi2_flat, nb - 1) < 1e-6


# -- accepted-step law ---------------------------------------------------------


def test_every_chain_stops_on_the_outer_sphere(first_steps):
    cfg = first_steps[0].config
    radii = np.array([run.exit_radii[0] for run in first_steps])
    times = np.array([run.stop_times[0] for run in first_steps])
    assert all(run.n_steps == 1 for run in first_steps)
    assert np.abs(radii - cfg.R).max() < 5e-3  # measured max 3.1e-3
    assert (times > 0.0).all()


def test_accepted_exit_angles_are_uniform(first_steps):
    angles = np.array([run.exit_angles[0] for run in first_steps])
    counts, _ = np.histogram(angles, bins=20, range=(-math.pi, math.pi))
    expected = angles.size / 20.0
    chi2 = float(((counts - expected) ** 2 / expected).sum())
    p = 1.0 - stats.chi2.cdf(chi2, 19)
    assert p > 0.005  # measured 0.56


def test_acceptance_rate_matches_the_thinning_level(first_steps):
    cfg = first_steps[0].config
    rejected = sum(int(run.rejected_cycles.sum()) for run in first_steps)
    accepted = len(first_steps)
    rate = accepted / (accepted + rejected)
    assert abs(rate - cfg.p) < 0.02  # measured 0.488 against p = 0.49


def test_step_time_tail_is_log_linear(first_steps):
    times = np.sort(np.array([run.stop_times[0] for run in first_steps]))
    survival = 1.0 - np.arange(1, times.size + 1) / times.size
    keep = (survival > 1e-3) & (times > np.median(times))
    x, y = times[keep], np.log(survival[keep])
    slope, intercept = np.polyfit(x, y, 1)
    fit = slope * x + intercept
    r2 = 1.0 - float(((y - fit) ** 2).sum() / ((y - y.mean()) ** 2).sum())
    assert slope < 0.0  # measured -0.25
    assert r2 >= 0.95  # measured 0.990


def test_empirical_law_mass_and_generator_support(first_steps):
    mu = empirical_mu(first_steps)
    assert math.isclose(sum(mu.values()), 1.0, abs_tol=1e-9)
    assert all(f > 0.0 for f in mu.values())
    for letter in "aAbB":
        assert mu.get(letter, 0.0) > 0.01  # measured 0.035-0.054 each


def test_identity_increment_mass_reflects_ball_returns(first_steps):
    # an excursion that leaves the outer sphere may hit the inner sphere of
    # the same ball next, so the identity increment carries substantial mass
    mu = empirical_mu(first_steps)
    assert 0.2 < mu.get("", 0.0) < 0.5  # measured 0.351


def test_increment_norms_have_an_exponential_moment(surface, first_steps):
    mu = empirical_mu(first_steps)
    logs, freqs = [], []
    for word, freq in mu.items():
        mat = np.array(surface.exact_word_matrix(word), dtype=float)
        frob2 = float((mat * mat).sum())
        sigma = math.sqrt((frob2 + math.sqrt(max(frob2 * frob2 - 4.0, 0.0))) / 2.0)
        logs.append(math.log(sigma))
        freqs.append(freq)
    logs = np.array(logs)
    freqs = np.array(freqs)
    nb = 9
    edges = np.linspace(0.0, np.quantile(logs[logs > 0.0], 0.98), nb + 1)
    mass = np.zeros(nb)
    for x, f in zip(logs, freqs):
        k = int(np.searchsorted(edges, x)) - 1
        if 0 <= k < nb:
            mass[k] += f
    keep = mass > 0.0
    centers = 0.5 * (edges[:-1] + edges[1:])[keep]
    y = np.log(mass[keep] / np.diff(edges)[keep])
    slope = np.polyfit(centers, y, 1)[0]
    assert slope < -0.2  # measured -0.45: frequencies decay like a power of the norm


def test_empirical_law_needs_at_least_one_step():
    with pytest.raises(ConfigError):
        empirical_mu([])


# -- chain structure -----------------------------------------------------------


def test_stop_times_strictly_increase(pair_steps, long_run):
    for run in (*pair_steps, long_run):
        assert run.stop_times[0] > 0.0
        assert (np.diff(run.stop_times) > 0.0).all()


def test_consecutive_increments_share_one_law(pair_steps):
    deltas = np.diff(
        np.array([run.stop_times for run in pair_steps]), prepend=0.0, axis=1
    )
    assert stats.ks_2samp(deltas[:, 0], deltas[:, 1]).pvalue > 0.005  # measured 0.58
    cats = ["", "a", "A", "b", "B"]

    def bucket(words):
        counts = [sum(1 for w in words if w == c) for c in cats]
        return counts + [len(words) - sum(counts)]

    table = [
        bucket([run.increments[0] for run in pair_steps]),
        bucket([run.increments[1] for run in pair_steps]),
    ]
    assert stats.chi2_contingency(table).pvalue > 0.005  # measured 0.35


def test_rotating_every_start_angle_preserves_the_increment_law(surface):
    angles = np.random.default_rng(derive_seed(M, "fls-rot-angles")).uniform(
        -math.pi, math.pi, 350
    )
    shifted = np.mod(angles + 2.0 + math.pi, 2.0 * math.pi) - math.pi
    runs_a = run_chain_ensemble(
        surface, FLSConfig(), 1, 350, derive_seed(M, "fls-rot-a"), start_angles=angles
    )
    runs_b = run_chain_ensemble(
        surface, FLSConfig(), 1, 350, derive_seed(M, "fls-rot-b"), start_angles=shifted
    )
    times_a = np.array([run.stop_times[0] for run in runs_a])
    times_b = np.array([run.stop_times[0] for run in runs_b])
    assert stats.ks_2samp(times_a, times_b).pvalue > 0.005  # measured 0.94
    cats = ["", "a", "A", "b", "B"]

    def bucket(words):
        counts = [sum(1 for w in words if w == c) for c in cats]
        return counts + [len(words) - sum(counts)]

    table = [
        bucket([run.increments[0] for run in runs_a]),
        bucket([run.increments[0] for run in runs_b]),
    ]
    assert stats.chi2_contingency(table).pvalue > 0.005  # measured 0.85


def test_increment_words_are_reduced_and_displacements_finite(surface, long_run):
    for word in long_run.increments:
        assert free_reduce(word) == word
    disps = long_run.increment_displacements(surface)
    assert disps.shape == (long_run.n_steps,)
    assert np.isfinite(disps).all()
    for word, disp in zip(long_run.increments, disps):
        if word:
            assert disp > 0.1  # nontrivial deck motion displaces the base point
        else:
            assert disp < 1e-9


def test_exact_matrices_multiply_to_the_product_word(surface):
    run = run_chain(
        surface,
        FLSConfig(),
        n_steps=4,
        seed=derive_seed(M, "fls-mats"),
        rep_can_only=False,
    )
    assert run.matrices is not None and len(run.matrices) == 4
    prod = np.eye(2, dtype=object)
    for mat in run.matrices:
        prod = prod @ np.array(mat, dtype=object)
    whole = np.array(
        surface.exact_word_matrix(free_reduce("".join(run.increments))), dtype=object
    )
    assert np.array_equal(prod, whole)


def test_words_only_runs_skip_matrix_recording(long_run):
    assert long_run.matrices is None


# -- stopping-time statistics --------------------------------------------------


def test_tau_estimate_is_stable_across_seeds(surface, long_run):
    tau1, se1 = estimate_tau(long_run)
    other = run_chain(
        surface, FLSConfig(), n_steps=120, seed=derive_seed(M, "fls-seed2")
    )
    tau2, se2 = estimate_tau(other)
    assert 1.5 < tau1 < 4.5  # measured 2.77 +/- 0.28
    assert se1 > 0.0 and se2 > 0.0
    assert abs(tau1 - tau2) <= 3.0 * math.hypot(se1, se2)  # measured 0.56 joint sigma


def test_tau_estimate_requires_a_long_run(pair_steps):
    with pytest.raises(ConfigError):
        estimate_tau(pair_steps[0])


def test_single_cycle_dominates_when_acceptance_is_nearly_sure(surface):
    # a tiny inner sphere pushes the density ratio toward 1, so the thinning
    # bound allows p close to 1 and most steps accept their first excursion
    cfg = FLSConfig(r=0.03, R=0.45, p=0.85)
    run = run_chain(
        surface, cfg, n_steps=110, seed=derive_seed(M, "fls-degen"), dt=2e-3
    )
    tau_hat, _ = estimate_tau(run)
    cycles = run.n_steps + int(run.rejected_cycles.sum())
    mean_cycle = float(run.stop_times[-1]) / cycles
    assert (run.rejected_cycles == 0).mean() > 0.75  # measured 0.86
    assert 1.0 <= tau_hat / mean_cycle < 1.35  # measured 1.16


def test_time_per_step_concentrates_as_chains_lengthen(surface):
    runs = run_chain_ensemble(
        surface,
        FLSConfig(),
        n_steps=150,
        n_chains=100,
        seed=derive_seed(M, "fls-largedev"),
        dt=5e-3,
    )
    short = np.array([run.stop_times[49] / 50.0 for run in runs])
    full = np.array([run.stop_times[149] / 150.0 for run in runs])
    tau_ref = full.mean()
    eps = 0.35
    frac_short = float((np.abs(short - tau_ref) > eps).mean())
    frac_full = float((np.abs(full - tau_ref) > eps).mean())
    assert frac_short > frac_full
    assert frac_full <= 0.1
