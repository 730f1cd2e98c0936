import numpy as np
import pytest

from latentrul import priors
from oracles import brute_force_transition


# ----- transition estimation -----------------------------------------------------


def test_estimate_alternating_sequence():
    result = priors.estimate_transition([0, 1, 0, 1], n_states=2)
    # state 0 has two visits with successors, state 1 only one (the final visit
    # has no successor)
    np.testing.assert_array_equal(result.probs, [[0.0, 1.0], [1.0, 0.0]])
    np.testing.assert_array_equal(result.visit_counts, [2.0, 1.0])


def test_estimate_self_loop_only():
    result = priors.estimate_transition([3, 3, 3], n_states=4)
    expected = np.zeros((4, 4))
    expected[3, 3] = 1.0
    np.testing.assert_array_equal(result.probs, expected)


def test_estimate_matches_brute_force_oracle(rng):
    for _ in range(200):
        n_states = int(rng.integers(2, 12))
        seq = rng.integers(0, n_states, size=int(rng.integers(2, 40)))
        fast = priors.estimate_transition(seq, n_states).probs
        slow = brute_force_transition(list(seq), n_states)
        np.testing.assert_array_equal(fast, slow)


def test_estimate_rows_with_data_are_stochastic(rng):
    seq = rng.integers(0, 5, size=100)
    result = priors.estimate_transition(seq, 5)
    sums = result.probs.sum(axis=1)
    observed = result.visit_counts > 0
    np.testing.assert_allclose(sums[observed], 1.0, atol=1e-12)
    np.testing.assert_array_equal(sums[~observed], 0.0)


def test_estimate_rejects_short_or_bad_sequences():
    with pytest.raises(ValueError):
        priors.estimate_transition([1], n_states=3)
    with pytest.raises(ValueError):
        priors.estimate_transition([0, 5], n_states=3)


# ----- EMA ------------------------------------------------------------------------


def test_ema_endpoints():
    prev = np.array([[0.5, 0.5], [0.2, 0.8]])
    new = np.array([[0.1, 0.9], [0.7, 0.3]])
    np.testing.assert_array_equal(priors.ema_update(prev, new, 0.0), new)
    np.testing.assert_array_equal(priors.ema_update(prev, new, 1.0), prev)


def test_ema_blend_arithmetic():
    blended = priors.ema_update(np.array([[0.5]]), np.array([[0.1]]), 0.9)
    assert blended[0, 0] == pytest.approx(0.46, abs=1e-12)


def test_ema_first_window_adopts_p():
    p = np.array([[0.3, 0.7], [0.6, 0.4]])
    np.testing.assert_array_equal(priors.ema_update(None, p, 0.9), p)


def test_ema_convexity(rng):
    prev = rng.random((4, 4))
    new = rng.random((4, 4))
    blended = priors.ema_update(prev, new, 0.37)
    low = np.minimum(prev, new)
    high = np.maximum(prev, new)
    assert np.all(blended >= low - 1e-12) and np.all(blended <= high + 1e-12)


def test_ema_validates_inputs():
    with pytest.raises(ValueError):
        priors.ema_update(None, np.eye(2), 1.5)
    with pytest.raises(ValueError):
        priors.ema_update(np.eye(3), np.eye(2), 0.5)


def test_smaller_lambda_tracks_latest_more_closely(rng):
    """On any fixed stream, a smaller lambda leaves M closer to the last P."""
    stream = [rng.dirichlet(np.ones(4), size=4) for _ in range(6)]
    distances = {}
    for lam in (0.2, 0.8):
        smoother = priors.TransitionSmoother(lam)
        for p in stream:
            m = smoother.update(p)
        distances[lam] = np.abs(m - stream[-1]).sum()
    assert distances[0.2] <= distances[0.8] + 1e-12


# ----- regularization ----------------------------------------------------------------


def test_regularize_zero_row_becomes_uniform():
    m = np.zeros((4, 4))
    m[0] = [1.0, 0.0, 0.0, 0.0]
    reg = priors.regularize(m, 1e-6)
    np.testing.assert_allclose(reg[1], [0.25] * 4, atol=1e-12)


def test_regularize_keeps_rows_stochastic_and_positive(rng):
    m = rng.dirichlet(np.ones(5), size=5)
    m[2] = 0.0
    reg = priors.regularize(m, 1e-6)
    assert np.all(reg > 0)
    np.testing.assert_allclose(reg.sum(axis=1), 1.0, atol=1e-12)
    # occupied rows move by O(eps) only
    assert np.abs(reg[0] - m[0]).max() < 1e-5


def test_regularize_rejects_nonpositive_eps():
    with pytest.raises(ValueError):
        priors.regularize(np.eye(2), 0.0)


# ----- steady state -------------------------------------------------------------------


def test_steady_state_symmetric_chain():
    ss = priors.steady_state(np.array([[0.5, 0.5], [0.5, 0.5]]))
    np.testing.assert_allclose(ss.pi, [0.5, 0.5], atol=1e-12)


def test_steady_state_analytic_two_state():
    # pi P = pi with P = [[0.9, 0.1], [0.5, 0.5]] solves to [5/6, 1/6]
    ss = priors.steady_state(np.array([[0.9, 0.1], [0.5, 0.5]]))
    np.testing.assert_allclose(ss.pi, [5.0 / 6.0, 1.0 / 6.0], atol=1e-10)


def test_steady_state_random_matrices_fixed_point(rng):
    for _ in range(20):
        n = int(rng.integers(2, 11))
        m = priors.regularize(rng.dirichlet(np.ones(n), size=n), 1e-6)
        ss = priors.steady_state(m)
        assert np.abs(ss.pi @ m - ss.pi).sum() <= 1e-10
        assert abs(ss.pi.sum() - 1.0) <= 1e-12
        assert np.all(ss.pi >= 0)


def test_steady_state_validates_input():
    with pytest.raises(ValueError):
        priors.steady_state(np.array([[1.0, 0.0], [0.5, 0.5]]))  # zero entry
    with pytest.raises(ValueError):
        priors.steady_state(np.array([[0.9, 0.3], [0.5, 0.5]]))  # rows not stochastic


def test_steady_state_slow_mixing_chain_still_converges():
    # nearly-absorbing asymmetric chain: power iteration alone moves toward the
    # stationary point at rate 1 - 4e-9 per step, so the direct solve takes over
    m = np.array([[1.0 - 1e-9, 1e-9], [3e-9, 1.0 - 3e-9]])
    ss = priors.steady_state(m, tol=1e-10)
    np.testing.assert_allclose(ss.pi, [0.75, 0.25], atol=1e-9)
    assert ss.residual <= 1e-10
    assert np.abs(ss.pi @ m - ss.pi).sum() <= 1e-10


# ----- folding -------------------------------------------------------------------------


def test_fold_single_window_equals_direct_computation(rng):
    seq = rng.integers(0, 4, size=10)
    folded = priors.fold_priors(seq[None, :], 4, lam=0.9, eps=1e-6)
    assert len(folded) == 1
    direct = priors.steady_state(
        priors.regularize(priors.estimate_transition(seq, 4).probs, 1e-6)
    )
    np.testing.assert_array_equal(folded[0].pi, direct.pi)


def test_fold_emits_one_prior_per_window(rng):
    seqs = rng.integers(0, 3, size=(7, 12))
    folded = priors.fold_priors(seqs, 3, lam=0.5)
    assert len(folded) == 7
    for ss in folded:
        assert abs(ss.pi.sum() - 1.0) <= 1e-12


def test_fold_lambda_one_freezes_prior(rng):
    seqs = rng.integers(0, 3, size=(5, 15))
    folded = priors.fold_priors(seqs, 3, lam=1.0)
    for ss in folded[1:]:
        np.testing.assert_array_equal(ss.pi, folded[0].pi)


def test_priors_for_system_uses_model_states(rng):
    class FakeModel:
        class config:
            codebook_size = 3

        def latent_states_batch(self, values):
            # deterministic pseudo-states derived from the data
            return (values.sum(axis=2) * 10).astype(int) % 3

    windows = []
    from latentrul.ingest import TimeWindow
    for i in range(4):
        windows.append(TimeWindow(unit_id=9, window_id=i + 1,
                                  values=rng.random((6, 2)), rul_target=50.0 - i))
    result = priors.priors_for_system(windows, FakeModel(), lam=0.9)
    assert [wid for wid, _ in result] == [1, 2, 3, 4]
    for _, ss in result:
        assert abs(ss.pi.sum() - 1.0) <= 1e-12
