import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from bifcurrent import brownian as br
from bifcurrent.errors import (
    InvalidPointError,
    ResourceLimitError,
    SamplerError,
    WordTrackingError,
)
from bifcurrent.harness import derive_seed
from bifcurrent.lattice import reduce_point, word_codes
from bifcurrent.moebius import BASE_POINT, distance_h2

M = 20260815

SYSTOLE = 2.0 * math.acosh(1.5)


def _radial(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.complex128)
    return np.arccosh(np.maximum((np.abs(z) ** 2 + 1.0) / (2.0 * z.imag), 1.0))


def _geodesic_points(z_end: complex, n: int) -> np.ndarray:
    """n+1 evenly spaced points on the geodesic from the base point to z_end."""
    u = (z_end - 1j) / (z_end + 1j)
    r = abs(u)
    if r == 0.0:
        return np.full(n + 1, 1j, dtype=np.complex128)
    unit = u / r
    s = np.linspace(0.0, 1.0, n + 1)
    w = np.tanh(s * np.arctanh(r)) * unit
    return 1j * (1.0 + w) / (1.0 - w)


def _brute_reduce(codes_seq) -> list:
    out: list = []
    for c in codes_seq:
        if out and out[-1] == (c ^ 1):
            out.pop()
        else:
            out.append(c)
    return out


# ---------------------------------------------------------- word chain

BLOCKS = [
    tuple(word_codes("aBAb")),
    tuple(word_codes("BabA")),
    tuple(word_codes("ab")),
    tuple(word_codes("BA")),
]


def test_chain_empty_root():
    ch = br._WordChain()
    assert ch.word(0) == ""
    assert ch.depth_of(0) == 0


def test_chain_extend_cancels_against_tail():
    ch = br._WordChain()
    n = ch.extend(0, word_codes("abA"))
    assert ch.word(n) == "abA"
    n = ch.extend(n, word_codes("aB"))
    assert ch.word(n) == "a"


def test_chain_power_run_merging_and_cancellation():
    ch = br._WordChain()
    blk = tuple(word_codes("aBAb"))
    inv = tuple(word_codes("BabA"))
    n = ch.extend_power(0, blk, 3)
    assert ch.word(n) == "aBAb" * 3 and ch.depth_of(n) == 12
    n = ch.extend_power(n, blk, 4)
    assert ch.depth_of(n) == 28
    n = ch.extend_power(n, inv, 2)
    assert ch.word(n) == "aBAb" * 5
    n = ch.extend_power(n, inv, 7)
    assert ch.word(n) == "BabA" * 2
    m = ch.extend_power(ch.extend_power(0, blk, 5), blk, -7)
    assert ch.word(m) == "BabA" * 2


def test_chain_letter_pops_into_power_run():
    ch = br._WordChain()
    blk = tuple(word_codes("aBAb"))
    n = ch.extend_power(0, blk, 3)
    n = ch.extend(n, word_codes("B"))
    assert ch.word(n) == "aBAb" * 2 + "aBA"
    assert ch.depth_of(n) == 11


def test_chain_huge_power_depth_and_guard():
    ch = br._WordChain()
    blk = tuple(word_codes("aBAb"))
    n = ch.extend_power(0, blk, 10**10)
    assert ch.depth_of(n) == 4 * 10**10
    with pytest.raises(ResourceLimitError):
        ch.codes(n)
    n = ch.extend_power(n, blk, -(10**10))
    assert ch.depth_of(n) == 0


@settings(max_examples=60, deadline=None)
@given(
    st.lists(
        st.one_of(
            st.integers(0, 3).map(lambda c: ("L", c)),
            st.tuples(st.integers(0, len(BLOCKS) - 1),
                      st.integers(-5, 5)).map(lambda t: ("P",) + t),
        ),
        max_size=40,
    )
)
def test_chain_matches_brute_force_free_reduction(ops):
    ch = br._WordChain()
    node, ref = 0, []
    for op in ops:
        if op[0] == "L":
            node = ch.extend(node, (op[1],))
            ref.append(op[1])
        else:
            blk = BLOCKS[op[1]]
            k = op[2]
            node = ch.extend_power(node, blk, k)
            use = blk if k >= 0 else tuple(c ^ 1 for c in reversed(blk))
            ref.extend(list(use) * abs(k))
        ref = _brute_reduce(ref)
        assert ch.codes(node) == ref
        assert ch.depth_of(node) == len(ref)


def test_exact_node_matrix_matches_letter_products(surface):
    letters_int = [tuple(int(e) for e in m.ravel())
                   for m in surface.letter_arrays]
    letters_f = surface.letter_arrays.astype(float)
    ch = br._WordChain()
    rng = np.random.default_rng(11)
    node = 0
    for c in rng.integers(0, 4, 120):
        node = ch.extend(node, (int(c),))
    node = ch.extend_power(node, tuple(word_codes("aBAb")), 6)
    node = ch.extend(node, word_codes("Ba"))
    quad = br._exact_node_matrix(ch, node, letters_int, {})
    mat = np.eye(2)
    for c in ch.codes(node):
        mat = mat @ letters_f[c]
    scale = np.abs(mat).max()
    assert np.allclose(np.array(quad, dtype=float).reshape(2, 2) / scale,
                       mat / scale, rtol=0.0, atol=1e-9)


# ---------------------------------------------------------- step plumbing

@settings(max_examples=80, deadline=None)
@given(st.floats(1e-6, 100.0), st.floats(1e-3, 0.01))
def test_tick_sizes_partition_the_horizon(t_max, dt):
    ticks = br._tick_sizes(t_max, dt)
    assert all(0.0 < h <= dt + 1e-12 for h in ticks)
    assert math.isclose(math.fsum(ticks), t_max, rel_tol=1e-9, abs_tol=1e-12)


def test_step_validation_errors():
    with pytest.raises(ValueError):
        br.sample_path(1j, 1.0, dt=0.02)
    with pytest.raises(ValueError):
        br.sample_path(1j, 1.0, dt=0.0)
    with pytest.raises(ValueError):
        br.sample_path(1j, 0.0)
    with pytest.raises(ValueError):
        br.sample_path(1j, 200.0)
    with pytest.raises(ValueError):
        br.sample_ensemble(0, 1.0)
    with pytest.raises(InvalidPointError):
        br.sample_path(1.0 - 1j, 1.0)


def test_walker_rejects_bad_start_points():
    rng = np.random.default_rng(0)
    with pytest.raises(InvalidPointError):
        br.BrownianWalker(np.array([1.0 + 0.0j]), rng)
    with pytest.raises(InvalidPointError):
        br.BrownianWalker(np.array([[1j, 2j]]), rng)


def test_mask_must_match_path_count():
    w = br.BrownianWalker(np.array([1j, 2j]), np.random.default_rng(0))
    with pytest.raises(ValueError):
        w.advance(0.01, mask=np.ones(3, dtype=bool))


# ---------------------------------------------------------- path structure

def test_sample_path_structure_and_displacement_cap():
    p = br.sample_path(1j, 1.0, dt=0.01, seed=derive_seed(M, "path-struct"))
    assert p.times[0] == 0.0
    assert np.all(np.diff(p.times) > 0.0)
    assert p.duration == pytest.approx(1.0, abs=1e-9)
    assert p.n_checkpoints >= 101
    sd = p.step_displacements()
    assert sd.size == p.n_checkpoints - 1
    assert np.all(sd <= br.DISPLACEMENT_CAP + 1e-12)
    assert p.base_displacements()[0] == 0.0
    # at modest radii the stable displacement matches the direct formula
    assert p.base_displacements()[-1] == pytest.approx(
        distance_h2(1j, complex(p.points[-1])), abs=1e-6)


def test_sample_path_determinism():
    a = br.sample_path(1j, 0.5, dt=0.01, seed=42)
    b = br.sample_path(1j, 0.5, dt=0.01, seed=42)
    assert np.array_equal(a.points, b.points)
    assert np.array_equal(a.times, b.times)
    c = br.sample_path(1j, 0.5, dt=0.01, seed=43)
    assert not np.array_equal(a.points, c.points)


def test_sample_path_on_surface_is_tracked(surface):
    p = br.sample_path(BASE_POINT, 2.0, dt=0.01,
                       seed=derive_seed(M, "path-surf"), surface=surface)
    assert p.tracked
    assert p.word_trace[0] == ""
    assert np.all(p.step_displacements() <= br.DISPLACEMENT_CAP + 1e-12)
    assert p.base_displacements()[0] == 0.0
    assert np.all(np.isfinite(p.deck_log_norms()))
    # reconstructed lift and deck/word data describe the same path
    q = br.sample_path(BASE_POINT, 2.0, dt=0.01,
                       seed=derive_seed(M, "path-surf"), surface=surface)
    assert q.word_trace == p.word_trace
    assert np.array_equal(q.reduced_points, p.reduced_points)


def test_untracked_path_has_no_word_queries():
    p = br.sample_path(1j, 0.1, dt=0.01, seed=1)
    assert p.word_trace is None
    with pytest.raises(WordTrackingError):
        p.word_at(0)
    with pytest.raises(WordTrackingError):
        p.word_lengths()
    with pytest.raises(WordTrackingError):
        p.deck_log_norms()


# ---------------------------------------------------------- word tracking

def test_track_word_constant_path_stays_identity(surface):
    pts = np.full(25, BASE_POINT, dtype=np.complex128)
    p = br.BrownianPathSample(np.linspace(0.0, 1.0, 25), pts, 0, 0.01)
    tracked = br.track_word(surface, p)
    assert all(w == "" for w in tracked.word_trace)


def test_track_word_single_generator_crossing(surface):
    # straight march along the axis through the base point into the
    # neighbouring translate: exactly one folding element is recorded
    target = complex(1.5, 0.5)  # image of the base point under letter a
    pts = _geodesic_points(target, 30)
    steps = np.array([distance_h2(pts[k], pts[k + 1]) for k in range(30)])
    assert np.all(steps <= br.DISPLACEMENT_CAP + 1e-12)
    p = br.BrownianPathSample(np.linspace(0.0, 1.0, 31), pts, 0, 0.01)
    tracked = br.track_word(surface, p)
    assert tracked.word_trace[0] == ""
    assert tracked.word_trace[-1] == "a"
    assert distance_h2(BASE_POINT, complex(tracked.reduced_points[-1])) < 1e-9


def test_track_word_two_letter_translate(surface):
    g = np.array([[2, 1], [1, 1]]) @ np.array([[1, 1], [1, 2]])
    target = complex((g[0, 0] * 1j + g[0, 1]) / (g[1, 0] * 1j + g[1, 1]))
    fresh = reduce_point(surface, target)
    assert fresh.word == "ab"  # oracle: the target sits in that translate
    pts = _geodesic_points(target, 60)
    p = br.BrownianPathSample(np.linspace(0.0, 1.0, 61), pts, 0, 0.01)
    tracked = br.track_word(surface, p)
    assert tracked.word_trace[-1] == "ab"


def test_closed_loop_element_at_time_zero(surface):
    p = br.sample_path(BASE_POINT, 0.5, dt=0.01,
                       seed=derive_seed(M, "loop-zero"), surface=surface)
    assert br.closed_loop_element(surface, p, 0.0) == ""
    with pytest.raises(ValueError):
        br.closed_loop_element(surface, p, 3.0)
    with pytest.raises(ValueError):
        br.closed_loop_element(surface, p, -0.2)


def test_folded_words_agree_with_scratch_reduction(surface):
    ens = br.sample_ensemble(200, 5.0, dt=0.01, seed=derive_seed(M, "agree5"),
                             surface=surface)
    reps = ens.reduced_points[-1]
    for rep in reps:
        assert reduce_point(surface, complex(rep)).word == ""
    # the deck word, the stable displacement and the folded representative
    # are three independently maintained columns; the translation-distance
    # identity 2 log||g|| = d(base, g base) couples them within rep radius
    gap = np.abs(2.0 * ens.word_log_norms[-1] - ens.displacements[-1])
    assert np.all(gap <= _radial(reps) + 1e-6)


def test_cusp_winding_unwinds_in_closed_form(surface):
    words, codes, mats, invs, parab = br._surface_data(surface)
    assert len(parab) >= 2  # puncture walls are in the candidate set
    j, s, n_mat, k_mat = parab[0]
    blk = len(codes[j])
    w = br.BrownianWalker(np.array([BASE_POINT]), np.random.default_rng(0),
                          surface=surface)
    z0 = complex(w.z[0])
    k_wind = 10**6
    g = s * (np.eye(2) + k_wind * n_mat)
    zd = (g[0, 0] * z0 + g[0, 1]) / (g[1, 0] * z0 + g[1, 1])
    w.z[0] = zd
    w._margin[0] = -1.0
    w._reduce(np.array([0]))
    assert w.folded_radial()[0] < 1.0
    depth = w._chain.depth_of(int(w._node[0]))
    assert abs(depth - blk * k_wind) <= 2 * blk
    lift = complex(w.lift_points()[0])
    assert abs(lift - zd) <= 1e-8 * abs(zd)
    w._full_check()  # exact integer rebuild validates the power run


# ---------------------------------------------------------- ensembles

def test_ensemble_checkpoints_snap_to_grid():
    ens = br.sample_ensemble(50, 1.0, dt=0.01, seed=7,
                             checkpoint_times=[0.5, 1.0])
    assert ens.times.shape == (2,)
    assert ens.times[0] == pytest.approx(0.5, abs=1e-9)
    assert ens.times[1] == pytest.approx(1.0, abs=1e-9)
    assert ens.displacements.shape == (2, 50)
    assert 0.0 < ens.displacements[0].mean() < ens.displacements[1].mean()


def test_ensemble_determinism_across_shards():
    a = br.sample_ensemble(70, 0.5, dt=0.01, seed=5, shard_size=16)
    b = br.sample_ensemble(70, 0.5, dt=0.01, seed=5, shard_size=16)
    assert np.array_equal(a.final_displacements, b.final_displacements)


def test_surface_ensemble_records_word_columns(surface):
    ens = br.sample_ensemble(20, 1.0, dt=0.01, seed=9, surface=surface,
                             record_words=True)
    assert ens.word_lengths.shape == (1, 20)
    assert ens.word_log_norms.shape == (1, 20)
    assert len(ens.words[0]) == 20
    for wl, wstr in zip(ens.word_lengths[0], ens.words[0]):
        assert wl == len(wstr)


# ---------------------------------------------------------- barriers, exits

def test_surface_barrier_must_embed(surface):
    w = br.BrownianWalker(np.array([BASE_POINT]), np.random.default_rng(3),
                          surface=surface)
    with pytest.raises(ValueError):
        w.advance_with_barrier(0.01, 0.5 * SYSTOLE, +1.0)
    w.advance_with_barrier(0.01, 0.9, +1.0)  # below half the systole: fine


def test_barrier_freezes_paths_at_the_sphere():
    w = br.BrownianWalker(np.full(50, 1j), np.random.default_rng(21))
    active = np.ones(50, dtype=bool)
    for _ in range(4000):
        hit = w.advance_with_barrier(1e-3, 0.3, +1.0, mask=active)
        active &= ~hit
        if not active.any():
            break
    assert not active.any()
    d = w.base_displacements()
    assert np.all(np.abs(d - 0.3) < 0.02)
    assert np.all(w.t > 0.0)


def test_exit_sample_validation():
    with pytest.raises(ValueError):
        br.sample_ball_exits(10, 0.0)
    with pytest.raises(ValueError):
        br.sample_ball_exits(10, 0.5, start=1j * math.exp(0.7))


def test_exit_angles_uniform_and_exit_time_calibrated():
    ex = br.sample_ball_exits(10000, 0.5, dt=1e-3, seed=derive_seed(M, "exits"))
    assert ex.angles.shape == (10000,)
    assert np.all((ex.angles >= -math.pi) & (ex.angles <= math.pi))
    assert np.all(ex.times > 0.0)
    counts, _ = np.histogram(ex.angles, bins=20, range=(-math.pi, math.pi))
    chi2 = float(((counts - 500.0) ** 2 / 500.0).sum())
    p = stats.chi2.sf(chi2, 19)
    assert p > 0.005  # frozen run: chi2 17.2, p 0.577
    # mean exit time: 2 log cosh(R_eff / 2) with the half-order boundary
    # overshoot R_eff = R + 0.5826 sqrt(2 dt); the uncorrected value
    # 0.06186 must be excluded, the corrected one 0.06840 covered
    assert 0.0655 < ex.times.mean() < 0.0705  # frozen run: 0.06770


# ---------------------------------------------------------- sampler law

def test_short_time_mean_displacement_matches_flat_gaussian():
    # over one tick the walk is Gaussian in the tangent plane:
    # E d = sqrt(pi t) at t = 1e-3  ->  0.056050
    ens = br.sample_ensemble(4000, 1e-3, dt=1e-3, seed=derive_seed(M, "tzero"))
    d = ens.final_displacements
    assert d.mean() == pytest.approx(math.sqrt(math.pi * 1e-3), abs=2e-3)
    assert d.max() < 0.35


def test_expected_cosh_displacement_matches_generator_rate():
    # cosh of the distance has constant multiplicative drift 2 under the
    # y^2-Laplacian normalization: E cosh r_t = e^{2t}, exactly
    ens = br.sample_ensemble(4000, 0.5, dt=0.0025,
                             seed=derive_seed(M, "cosh-fine"))
    ratio = float(np.cosh(ens.final_displacements).mean()) / math.exp(1.0)
    assert 0.95 < ratio < 1.08  # frozen: ~1.012 at this dt, se ~0.015


def test_radial_drift_rate_long_run():
    # unit linear drift plus the finite-horizon curvature excess
    # (E d_t = t + ~2.2 for t = 40), inflated ~0.4% by the dt = 0.01 bias
    ens = br.sample_ensemble(200, 40.0, dt=0.01,
                             seed=derive_seed(M, "drift-c1"))
    ratio = float(ens.final_displacements.mean()) / 40.0
    assert 1.00 < ratio < 1.13  # frozen: 1.0642, se 0.016


def test_radial_density_envelope_and_band():
    ens = br.sample_ensemble(2000, 20.0, dt=0.01, seed=derive_seed(M, "heat"))
    r = ens.final_displacements
    slope, err = br.radial_envelope_slope(r, 20.0)
    assert 0.45 < slope < 1.40  # frozen: 0.912 +- 0.14
    off, resid = br.HeatKernelModel(20.0).fitted_band(r)
    assert resid < 1.0  # frozen: 0.584


def test_markov_restart_invariance():
    one = br.sample_ensemble(800, 1.0, dt=0.01, seed=derive_seed(M, "restart-one"))
    w = br.BrownianWalker(np.full(800, 1j),
                          np.random.default_rng(derive_seed(M, "restart-two")))
    for _ in range(50):
        w.advance(0.01)
    mid = w.lift_points()
    w2 = br.BrownianWalker(mid, np.random.default_rng(derive_seed(M, "restart-three")))
    for _ in range(50):
        w2.advance(0.01)
    ks = stats.ks_2samp(one.final_displacements, w2.base_displacements())
    assert ks.pvalue > 0.005  # frozen: 0.359


def test_dt_refinement_consistency():
    a = br.sample_ensemble(1500, 2.0, dt=0.01, seed=derive_seed(M, "ks-a"))
    b = br.sample_ensemble(1500, 2.0, dt=0.0025, seed=derive_seed(M, "ks-b"))
    ks = stats.ks_2samp(a.final_displacements, b.final_displacements)
    assert ks.pvalue > 0.005  # frozen: 0.722


def test_folding_preserves_lift_law(surface):
    plain = br.sample_ensemble(500, 2.0, dt=0.01, seed=derive_seed(M, "lift-a"))
    folded = br.sample_ensemble(500, 2.0, dt=0.01, seed=derive_seed(M, "lift-b"),
                                surface=surface)
    ks = stats.ks_2samp(plain.final_displacements, folded.final_displacements)
    assert ks.pvalue > 0.005


def test_word_norm_tracks_half_displacement_on_long_paths(surface):
    # closing a long path with the word of its occupied translate changes
    # log||g|| by at most half the folded radius, so the per-time gap
    # between log||g|| and d/2 dies like 1/t
    ens = br.sample_ensemble(100, 40.0, dt=0.01,
                             seed=derive_seed(M, "loop40-test"), surface=surface)
    gap = np.abs(ens.word_log_norms[-1] - ens.displacements[-1] / 2.0) / 40.0
    assert gap.mean() < 0.03  # frozen: 0.010 at m=400
