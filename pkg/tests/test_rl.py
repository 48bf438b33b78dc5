import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mtkd_rl import tensor_core as tc
from mtkd_rl.agent import ActionWeights, PolicyNet, act
from mtkd_rl.distill import KDConfig, mtkd_loss
from mtkd_rl.errors import ParameterError, StateError
from mtkd_rl.rl import (
    EpisodeHistory,
    accumulate_surrogate_grad,
    compute_reward,
    gamma_objective_grad,
    normalize_rewards,
    pg_update,
    record_episode,
    surrogate_objective,
)
from mtkd_rl.state import build_state

from conftest import fd_check, random_teachers


class TestNormalize:
    def test_two_values(self):
        assert normalize_rewards([[1.0, 3.0]]).tolist() == [[-0.5, 0.5]]

    def test_three_values(self):
        assert normalize_rewards([[0.0, 1.0, 2.0]]).tolist() == [[-0.5, 0.0, 0.5]]

    @pytest.mark.parametrize("mode", ["rescaled-mean", "literal"])
    def test_all_equal_is_zero(self, mode):
        assert normalize_rewards([[-2.0, -2.0, -2.0]], mode).tolist() == [[0.0, 0.0, 0.0]]

    @settings(max_examples=150, deadline=None)
    @given(st.sampled_from([2, 3, 4, 8]), st.integers(1, 6), st.data())
    def test_zero_sum_and_order(self, M, B, data):
        raw = data.draw(arrays(np.float64, (B, M), elements=st.floats(-50, 0)))
        out = normalize_rewards(raw)
        assert np.allclose(out.sum(axis=1), 0.0, atol=1e-9)
        for r, o in zip(raw, out):
            span = r.max() - r.min()
            for a in range(M):
                for b in range(M):
                    if r[a] < r[b]:
                        assert o[a] <= o[b]
                        if r[b] - r[a] > 1e-9 * span:
                            assert o[a] < o[b]
                    elif r[a] == r[b]:
                        assert o[a] == o[b]
            assert r[np.argmax(o)] >= r.max() - 1e-9 * span

    def test_rescaled_in_unit_interval(self, rng):
        raw = rng.normal(size=(20, 4))
        out = normalize_rewards(raw)
        scaled = out - out.min(axis=1, keepdims=True)
        assert np.all(scaled >= 0) and np.all(scaled <= 1 + 1e-12)

    def test_literal_mode_subtracts_raw_mean(self):
        assert np.allclose(normalize_rewards([[1.0, 3.0]], "literal"), [[-2.0, -1.0]])

    def test_unknown_mode(self):
        with pytest.raises(ParameterError):
            normalize_rewards([[1.0, 2.0]], "zscore")


class TestReward:
    def test_perfect_match_is_minus_ce(self, rng):
        teachers, y = random_teachers(rng, B=3, dims=(4,))
        z = teachers.logits[0]
        R = compute_reward(z, [teachers.features[0]], teachers, y, KDConfig())
        assert np.allclose(R[:, 0], -tc.cross_entropy(z, y)[0], atol=1e-12)

    def test_pure_task_identical_across_teachers(self, rng):
        teachers, y = random_teachers(rng, dims=(3, 2, 5))
        s = rng.normal(size=(5, 4))
        reg = [rng.normal(size=(5, d)) for d in teachers.feature_dims]
        R = compute_reward(s, reg, teachers, y, KDConfig(0.0, 0.0))
        assert np.all(R == R[:, :1])

    def test_equals_single_teacher_loss_breakdown(self, rng):
        teachers, y = random_teachers(rng, dims=(3, 2))
        s = rng.normal(size=(5, 4))
        reg = [rng.normal(size=(5, d)) for d in teachers.feature_dims]
        cfg = KDConfig()
        R = compute_reward(s, reg, teachers, y, cfg)
        for m in range(2):
            onehot = np.zeros((5, 2))
            onehot[:, m] = 1.0
            res = mtkd_loss(s, reg, teachers, (onehot, onehot), y, cfg)
            assert np.allclose(R[:, m], -res.per_sample, atol=1e-12)
        assert np.all(R <= 0)


class TestPG:
    @pytest.mark.parametrize("surrogate", ["log", "linear"])
    def test_surrogate_grad_vs_finite_differences(self, rng, surrogate):
        pol = PolicyNet(5, 3, hidden=6, seed=2)
        states = rng.normal(size=(4, 5))
        R = normalize_rewards(rng.normal(size=(4, 3)))
        pol.zero_grad()
        accumulate_surrogate_grad(pol, states, R, surrogate, sign=1.0)
        analytic = [p.grad.copy() for p in pol.parameters()]
        fd_check(lambda: surrogate_objective(pol, states, R, surrogate), pol.parameters(), analytic)

    @pytest.mark.parametrize("surrogate", ["log", "linear"])
    def test_sign_property(self, rng, surrogate):
        M = 4
        pol = PolicyNet(6, M, hidden=12, seed=5)
        state = rng.normal(size=(1, 6))
        before = pol.forward(state, cache=False)
        hist = EpisodeHistory()
        hist.record(state, ActionWeights.uniform(1, M), np.array([[0.5, -0.5, 0.0, 0.0]]))
        pg_update(pol, hist, 1e-3, surrogate)
        after = pol.forward(state, cache=False)
        for b, a in zip(before, after):
            assert a[0, 0] > b[0, 0] and a[0, 1] < b[0, 1]

    def test_zero_rewards_leave_parameters(self, rng):
        pol = PolicyNet(4, 3, hidden=5, seed=1)
        before = pol.checksum()
        hist = EpisodeHistory()
        hist.record(rng.normal(size=(3, 4)), ActionWeights.uniform(3, 3), np.zeros((3, 3)))
        pg_update(pol, hist, 0.1)
        assert pol.checksum() == before

    def test_empty_history(self):
        with pytest.raises(StateError):
            pg_update(PolicyNet(2, 2), EpisodeHistory(), 0.1)

    def test_eta_positive(self, rng):
        hist = EpisodeHistory()
        hist.record(np.zeros((1, 2)), ActionWeights.uniform(1, 2), np.zeros((1, 2)))
        with pytest.raises(ParameterError):
            pg_update(PolicyNet(2, 2), hist, 0.0)

    def test_one_step_per_entry(self, rng):
        """Replaying two entries equals two single-entry updates in order."""
        s1, s2 = rng.normal(size=(2, 4)), rng.normal(size=(3, 4))
        r1, r2 = normalize_rewards(rng.normal(size=(2, 3))), normalize_rewards(rng.normal(size=(3, 3)))
        a, b = PolicyNet(4, 3, hidden=5, seed=3), PolicyNet(4, 3, hidden=5, seed=3)
        h = EpisodeHistory()
        h.record(s1, ActionWeights.uniform(2, 3), r1)
        h.record(s2, ActionWeights.uniform(3, 3), r2)
        pg_update(a, h, 0.01)
        for s, r in ((s1, r1), (s2, r2)):
            single = EpisodeHistory()
            single.record(s, ActionWeights.uniform(len(s), 3), r)
            pg_update(b, single, 0.01)
        assert a.checksum() == b.checksum()

    def test_learnable_gammas_are_updated_and_stay_normalized(self, rng):
        teachers, y = random_teachers(rng, B=6, dims=(3, 2))
        s = rng.normal(size=(6, 4))
        reg = [rng.normal(size=(6, d)) for d in teachers.feature_dims]
        state = build_state(s, reg, teachers)
        pol = PolicyNet(state.vector.shape[1], 2, hidden=8, seed=1, learnable_gammas=True)
        action = act(pol, state)
        # reward exactly the teacher the confidence rule prefers
        best = np.argmax(action.w_conf, axis=1)
        R = np.where(np.arange(2)[None] == best[:, None], 0.5, -0.5)
        h = EpisodeHistory()
        record_episode(h, state, action, R)
        before = pol.gammas
        pg_update(pol, h, 0.5)
        assert np.allclose(pol.gammas.sum(axis=1), 1.0)
        assert not np.allclose(pol.gammas, before)

    def test_gamma_grad_vs_finite_differences(self, rng):
        B, M = 4, 3
        w = [rng.dirichlet(np.ones(M), size=B) for _ in range(5)]
        action = ActionWeights(w[0], w[0], w[0], w[1], w[2], w[3], w[4], np.full((2, 3), 1 / 3))
        R = normalize_rewards(rng.normal(size=(B, M)))
        gam = rng.dirichlet([1, 1, 1], size=2)
        for surrogate in ("log", "linear"):
            _, g = gamma_objective_grad(gam, (w[0], w[1]), action, R, surrogate)
            fd_check(lambda: gamma_objective_grad(gam, (w[0], w[1]), action, R, surrogate)[0], [gam], [g])


class TestHistory:
    def test_round_trip_and_order(self, rng):
        h = EpisodeHistory()
        items = [(rng.normal(size=(2, 3)), ActionWeights.uniform(2, 2), rng.normal(size=(2, 2))) for _ in range(4)]
        for s, a, r in items:
            record_episode(h, s, a, r)
        assert len(h) == 4
        for ep, (s, a, r) in zip(h, items):
            assert np.array_equal(ep.states, s) and ep.action is a and np.array_equal(ep.rewards, r)

    def test_reset(self, rng):
        h = EpisodeHistory()
        h.record(np.zeros((1, 2)), ActionWeights.uniform(1, 2), np.zeros((1, 2)))
        h.reset()
        assert len(h) == 0

    def test_shape_check(self):
        with pytest.raises(ParameterError):
            EpisodeHistory().record(np.zeros((2, 2)), ActionWeights.uniform(2, 3), np.zeros((2, 2)))
