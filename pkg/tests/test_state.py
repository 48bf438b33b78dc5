import numpy as np
import pytest

from mtkd_rl import tensor_core as tc
from mtkd_rl.errors import DegenerateInputError, ParameterError, ShapeError
from mtkd_rl.state import COMPONENTS, PRESETS, StateMask, build_state, component_slices, state_dim

from conftest import random_teachers


def make(rng, B=5, C=4, dims=(8, 8)):
    teachers, y = random_teachers(rng, B=B, C=C, dims=dims)
    s = rng.normal(size=(B, C))
    reg = [rng.normal(size=(B, d)) for d in dims]
    return s, reg, teachers


class TestDims:
    def test_two_teachers_full_mask(self, rng):
        s, reg, t = make(rng)
        st = build_state(s, reg, t)
        assert st.vector.shape == (5, 30)
        assert state_dim(PRESETS["all"], [8, 8], 4) == 30

    def test_four_teachers(self):
        assert state_dim(PRESETS["all"], [16] * 4, 10) == 116

    def test_gaps_only(self):
        assert state_dim(PRESETS["gaps"], [16, 3, 7], 10) == 6

    def test_performance_only(self):
        assert state_dim(PRESETS["performance"], [16, 3], 10) == (16 + 10 + 1) + (3 + 10 + 1)

    def test_mixed_dims_match_vector(self, rng):
        s, reg, t = make(rng, dims=(3, 6, 2))
        for mask in PRESETS.values():
            assert build_state(s, reg, t, mask).vector.shape[1] == state_dim(mask, [3, 6, 2], 4)


class TestMask:
    def test_parse_presets_and_lists(self):
        assert StateMask.parse("Performance") == PRESETS["performance"]
        assert StateMask.parse("cos, kl") == PRESETS["gaps"]
        assert StateMask.parse("ce").enabled == ("ce",)

    def test_name_round_trip(self):
        for name, mask in PRESETS.items():
            assert StateMask.parse(mask.name()) == mask
        assert StateMask.parse(StateMask.parse("feature,kl").name()) == StateMask.parse("feature,kl")

    def test_unknown_component(self):
        with pytest.raises(ParameterError):
            StateMask.parse("feature,bogus")

    def test_empty_mask(self):
        with pytest.raises(ParameterError):
            StateMask(**{c: False for c in COMPONENTS})


class TestBuild:
    def test_perfect_match(self, rng):
        teachers, _ = random_teachers(rng, B=3, C=4, dims=(5,))
        st = build_state(teachers.logits[0], [teachers.features[0]], teachers)
        assert np.allclose(st.cos, 1.0) and np.allclose(st.kl, 0.0, atol=1e-12)

    def test_cos_component_oracle(self, rng):
        s, reg, t = make(rng, dims=(4, 3))
        st = build_state(s, reg, t)
        for m in range(2):
            for i in range(5):
                assert st.component(m, "cos")[i, 0] == pytest.approx(tc.cosine_similarity(reg[m][i], t.features[m][i]))

    def test_kl_component_temperature_one(self, rng):
        s, reg, t = make(rng)
        st = build_state(s, reg, t)
        for m in range(2):
            assert np.allclose(st.component(m, "kl")[:, 0], tc.kl_divergence(s, t.logits[m], 1.0)[0])

    def test_slicing_recovers_components(self, rng):
        s, reg, t = make(rng, dims=(4, 3))
        st = build_state(s, reg, t)
        for m in range(2):
            assert np.array_equal(st.component(m, "feature"), t.features[m])
            assert np.array_equal(st.component(m, "logits"), t.logits[m])
            assert np.array_equal(st.component(m, "ce")[:, 0], t.ce[:, m])
        assert sum(sl.stop - sl.start for sl in component_slices(st.mask, [4, 3], 4).values()) == st.vector.shape[1]

    def test_ranges_and_finiteness(self, rng):
        s, reg, t = make(rng, dims=(4, 3))
        st = build_state(s * 20, reg, t)
        assert np.all(np.isfinite(st.vector))
        assert np.all(np.abs(st.cos) <= 1 + 1e-12) and np.all(st.kl >= 0)

    def test_zero_feature_is_degenerate(self, rng):
        s, reg, t = make(rng)
        reg[0][2] = 0.0
        with pytest.raises(DegenerateInputError):
            build_state(s, reg, t)

    def test_regressor_mismatch(self, rng):
        s, reg, t = make(rng)
        with pytest.raises(ShapeError):
            build_state(s, [reg[0], reg[1][:, :3]], t)

    def test_gaps_state_ignores_logit_permutation(self, rng):
        """Permuting class order jointly in student and teacher logits keeps KL and
        cosines, so the gaps-only state must not change."""
        s, reg, t = make(rng)
        perm = [2, 0, 3, 1]
        t2 = type(t)(t.features, [z[:, perm] for z in t.logits], t.ce)
        a = build_state(s, reg, t, PRESETS["gaps"]).vector
        b = build_state(s[:, perm], reg, t2, PRESETS["gaps"]).vector
        assert np.allclose(a, b, atol=1e-12)

    def test_does_not_disturb_pending_backward(self, rng):
        from mtkd_rl.trainer import Student

        student = Student.build(6, 4, 5, [8, 8], seed=1)
        x = rng.normal(size=(5, 6))
        logits, reg = student.forward(x)
        _, _, t = make(rng)
        build_state(logits, reg, t)
        student.net.backward(np.ones_like(logits))  # cache still intact

    def test_standardize_columns(self, rng):
        s, reg, t = make(rng)
        v = build_state(s, reg, t, standardize=True).vector
        assert np.allclose(v.mean(axis=0), 0, atol=1e-12)
