import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qdbayes.bayesest import AveragedChannel, GaussianPrior, gauss_hermite_grid, prior_grid
from qdbayes.optimizer import (
    OptimizerConfig,
    align_phases,
    ansatz,
    bloch_vector,
    evaluate_fixed_state,
    fit_ghz_plus,
    g_from_amplitudes,
    ghz,
    ghz_plus_amplitudes,
    haar_random_state,
    iterate_once,
    optimize_on,
    optimize_state,
    random_product_baseline,
    regime_label,
    run_iteration,
    scan_ghz_plus,
    standard_ansatz_labels,
    state_fidelities,
)
from qdbayes.quantcore import KET0, KET_PLUS, dm_from_pure, tensor
from qdbayes.spinbath import make_bath

BATH = make_bath()
PRIOR = GaussianPrior.from_mT(7, 4)
FAST = OptimizerConfig(restarts=6)


def angle_deg(u, v):
    c = np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v))
    return np.degrees(np.arccos(np.clip(c, -1, 1)))


def test_config_validation():
    with pytest.raises(ValueError):
        OptimizerConfig(restarts=0)
    with pytest.raises(ValueError):
        OptimizerConfig(tol=0)
    assert OptimizerConfig.for_dots(3).restarts == 30
    assert OptimizerConfig.for_dots(4).restarts == 60


def test_haar_state_properties():
    rng = np.random.default_rng(0)
    psi = haar_random_state(8, rng)
    assert abs(np.linalg.norm(psi) - 1) < 1e-12
    a = haar_random_state(4, np.random.default_rng(42))
    b = haar_random_state(4, np.random.default_rng(42))
    assert np.array_equal(a, b)
    with pytest.raises(ValueError):
        haar_random_state(1, rng)


@pytest.mark.parametrize("dim", [2, 4, 16])
def test_haar_first_moment(dim):
    rng = np.random.default_rng(dim)
    w = np.array([abs(haar_random_state(dim, rng)[0]) ** 2 for _ in range(10_000)])
    assert abs(w.mean() - 1 / dim) < 3 * w.std() / np.sqrt(w.size)


def test_ansatz_families():
    for N in (1, 2, 3):
        assert np.allclose(ansatz("ghz_plus", N, 1.0), ghz(N))
        assert np.allclose(ansatz("ghz_plus", N, 0.0), tensor([KET_PLUS] * N))
        assert np.allclose(ansatz("mixed_product(0)", N), tensor([KET0] * N))
        assert np.allclose(ansatz("plus_product", N), ansatz(f"mixed_product({N})", N))
    assert np.allclose(ansatz("ghz_plus(0.25)", 2), ansatz("ghz_plus", 2, 0.25))
    assert standard_ansatz_labels(2) == ["ghz", "plus_product", "mixed_product(1)", "mixed_product(0)"]


@pytest.mark.parametrize("label,N,param", [
    ("ghz_plus", 2, 1.5), ("ghz_plus", 2, None), ("mixed_product", 2, 3), ("mixed_product", 2, 0.5),
    ("nonsense", 2, None), ("ghz", 6, None), ("ghz", 0, None),
])
def test_ansatz_rejects_out_of_range(label, N, param):
    with pytest.raises(ValueError):
        ansatz(label, N, param)


def test_ghz_plus_reference_amplitudes():
    a, b = 0.07071, 0.63640
    g = g_from_amplitudes(a, b)
    ra, rb = ghz_plus_amplitudes(g)
    assert abs(ra - a) < 1e-4 and abs(rb - b) < 1e-4
    # decompose the constructed state back onto GHZ and |++>
    psi = ansatz("ghz_plus", 2, g)
    basis = np.stack([ghz(2), tensor([KET_PLUS] * 2)], axis=1)
    x, *_ = np.linalg.lstsq(basis, psi, rcond=None)
    assert np.max(np.abs(basis @ x - psi)) < 1e-12
    assert abs(x[0].real / x[1].real - a / b) < 1e-4


def test_fit_ghz_plus_recovers_parameter():
    for g in (0.0, 0.1, 0.37, 0.8, 1.0):
        psi = ansatz("ghz_plus", 2, g)
        g_fit, fid = fit_ghz_plus(psi * np.exp(0.4j))
        assert fid == pytest.approx(1, abs=1e-9)
        assert g_fit == pytest.approx(g, abs=1e-3)


def test_align_phases_is_canonical():
    rng = np.random.default_rng(3)
    psi = haar_random_state(4, rng)
    phases = np.exp(1j * np.array([0.0, 0.3, 1.1, 1.4]))  # local z-rotations (0.3, 1.1)
    a, b = align_phases(psi), align_phases(psi * phases * np.exp(0.9j))
    assert np.allclose(a, b, atol=1e-9)


def test_state_fidelities_and_labels():
    f = state_fidelities(ghz(2))
    assert f["ghz"] == pytest.approx(1) and regime_label(f) == "ghz"
    f = state_fidelities(tensor([KET0, KET_PLUS]))
    assert regime_label(f) == "mixed_product(1)"
    f = state_fidelities(ansatz("ghz_plus", 2, 0.4))
    assert regime_label(f) == "ghz_plus" and f["ghz_plus_g"] == pytest.approx(0.4, abs=1e-3)
    f = state_fidelities(haar_random_state(8, np.random.default_rng(1)))
    assert regime_label(f) == "other"


def test_iterate_once_degenerate_at_t0():
    grid = gauss_hermite_grid(PRIOR, 16)
    psi = haar_random_state(4, np.random.default_rng(0))
    out = iterate_once(psi, BATH, 0.0, grid)
    assert np.allclose(out, np.eye(4)[0])
    ch = AveragedChannel(2, BATH, 0.0, PRIOR, grid)
    assert ch.ratio(out) == pytest.approx(1, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([1, 2, 3]), st.floats(0.2, 100))
def test_iteration_never_increases_ratio(seed, N, t):
    ch = AveragedChannel(N, BATH, t, PRIOR, prior_grid(PRIOR, 64, N, t))
    psi = haar_random_state(2**N, np.random.default_rng(seed))
    _, _, _, _, trace = run_iteration(ch, psi, tol=1e-12, max_iter=40)
    assert np.all(np.diff(trace) <= 1e-12)


@pytest.mark.parametrize("t", [0.2, 0.5, 2.0])
def test_single_dot_large_field_geometry(t):
    prior = GaussianPrior(1.0, 1e-3)
    s = optimize_state(1, BATH, t, prior, OptimizerConfig(restarts=3))
    r = bloch_vector(dm_from_pure(s.state))
    assert abs(90 - angle_deg(r, [0, 0, 1])) < 1
    # the field rotates the state, so compare L with the prior-averaged output state
    ch = AveragedChannel(1, BATH, t, prior, prior_grid(prior, 64, 1, t))
    out = bloch_vector(ch.mean_states(s.state)[0])
    lvec = bloch_vector(s.outcome.L)
    assert abs(90 - angle_deg(lvec, [0, 0, 1])) < 2
    assert abs(90 - angle_deg(lvec, out)) < 2


def test_iteration_from_random_start_goes_equatorial():
    prior = GaussianPrior(1.0, 1e-3)
    ch = AveragedChannel(1, BATH, 0.05, prior, gauss_hermite_grid(prior, 64))
    psi, *_ = run_iteration(ch, haar_random_state(2, np.random.default_rng(11)))
    r = bloch_vector(dm_from_pure(psi))
    assert abs(r[2]) < np.sin(np.radians(1))


def test_optimum_at_t0_is_uninformative():
    for N in (1, 2):
        s = optimize_state(N, BATH, 0.0, PRIOR, FAST)
        assert s.ratio == pytest.approx(1, abs=1e-12)


def test_single_dot_late_time_uses_populations():
    s = optimize_state(1, BATH, 30.0, PRIOR, FAST)
    assert abs(dm_from_pure(s.state)[0, 1]) < 0.02
    L = s.outcome.L
    assert np.linalg.norm(L - np.diag(np.diag(L))) < 1e-3 * np.linalg.norm(L)


def test_two_dots_early_time_is_ghz():
    s = optimize_state(2, BATH, 1.0, PRIOR, FAST)
    assert state_fidelities(s.state)["ghz"] > 0.99


def test_restart_dominance_and_determinism():
    for N, t in ((1, 6.0), (2, 3.0), (3, 12.0)):
        a = optimize_state(N, BATH, t, PRIOR, FAST)
        b = optimize_state(N, BATH, t, PRIOR, FAST)
        assert np.array_equal(a.state, b.state) and a.ratio == b.ratio
        ch = AveragedChannel(N, BATH, t, PRIOR, prior_grid(PRIOR, 64, N, t))
        if a.converged:
            for lbl in standard_ansatz_labels(N):
                assert a.ratio <= ch.ratio(ansatz(lbl, N)) + FAST.tol


def test_optimize_rejects_unsupported_dot_count():
    with pytest.raises(ValueError):
        optimize_state(6, BATH, 1.0, PRIOR)


def test_non_converged_run_is_flagged():
    ch = AveragedChannel(2, BATH, 3.0, PRIOR, gauss_hermite_grid(PRIOR, 64))
    s = optimize_on(ch, OptimizerConfig(restarts=1, max_iter=1, tol=1e-15), seed_ansatz=False)
    assert not s.converged
    assert 0 <= s.ratio <= 1


def test_fixed_state_examples():
    assert evaluate_fixed_state(tensor([KET0] * 2), BATH, 0.0, PRIOR).ratio == pytest.approx(1)
    G, P = ghz(2), tensor([KET_PLUS] * 2)
    early = [evaluate_fixed_state(v, BATH, 1.0, PRIOR).ratio for v in (G, P)]
    assert early[0] < early[1]
    late = [evaluate_fixed_state(v, BATH, 5.9, PRIOR).ratio for v in (G, P)]
    assert late[1] < late[0]
    for N in (1, 2):
        assert evaluate_fixed_state(tensor([KET0] * N), BATH, 1500.0, PRIOR).ratio < 1


def test_scan_ghz_plus():
    s = scan_ghz_plus(2, BATH, 0.5, PRIOR)
    g = float(s.label[len("ghz_plus("):-1])
    assert g > 0.95
    s = scan_ghz_plus(2, BATH, 3.5, PRIOR)
    g = float(s.label[len("ghz_plus("):-1])
    assert 0 < g < 1
    ch = AveragedChannel(2, BATH, 3.5, PRIOR, prior_grid(PRIOR, 64, 2, 3.5))
    assert s.ratio <= min(ch.ratio(ghz(2)), ch.ratio(tensor([KET_PLUS] * 2))) + 1e-12
    with pytest.raises(ValueError):
        scan_ghz_plus(2, BATH, 3.5, PRIOR, g_grid=[])


def test_product_baseline():
    opt = optimize_state(1, BATH, 6.0, PRIOR, FAST)
    base = random_product_baseline(1, BATH, 6.0, PRIOR, samples=500, seed=1)
    assert base.ratio <= opt.ratio * 1.02 and base.ratio >= opt.ratio - 1e-9
    few = random_product_baseline(2, BATH, 6.0, PRIOR, samples=20, seed=3)
    many = random_product_baseline(2, BATH, 6.0, PRIOR, samples=200, seed=3)
    assert many.ratio <= few.ratio
    with pytest.raises(ValueError):
        random_product_baseline(2, BATH, 6.0, PRIOR, samples=0)
