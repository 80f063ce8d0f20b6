import math
from statistics import NormalDist

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import mimic_literal
from wola.aggregation import UpdateSet, agg_mean
from wola.attacks import (
    AttackContext,
    alie_z,
    attack_alie,
    attack_foe,
    attack_lf,
    attack_mimic,
    attack_sf,
    flip_map,
    get_attack,
    mimic_index,
    normal_quantile,
)
from wola.data import WorkerShard, generate_synthetic
from wola.model import ModelSpec, init_params, weighted_batch_gradient
from wola.numerics import InvalidInputError
from wola.worker import LocalWorker


def ctx(honest, f, **kw):
    honest = np.asarray(honest, dtype=float)
    return AttackContext(honest_updates=honest, n=honest.shape[0] + f, f=f, **kw)


class TestContext:
    def test_row_count_checked(self):
        with pytest.raises(InvalidInputError):
            AttackContext(honest_updates=np.zeros((3, 2)), n=5, f=1)


class TestAlie:
    def test_identical_rows_send_mean(self):
        out = attack_alie(ctx(np.tile([1.0, -2.0], (6, 1)), 2))
        np.testing.assert_array_equal(out, np.tile([1.0, -2.0], (2, 1)))

    def test_z_for_17_5(self):
        assert alie_z(17, 5) == pytest.approx(NormalDist().inv_cdf(2 / 3), abs=1e-9)
        assert alie_z(17, 5) == pytest.approx(0.4307, abs=1e-4)

    @pytest.mark.parametrize("p", [0.01, 0.3, 0.5, 0.77, 0.999])
    def test_quantile_oracle(self, p):
        assert normal_quantile(p) == pytest.approx(NormalDist().inv_cdf(p), abs=1e-9)

    def test_z_floored_at_zero(self):
        # n=17, f=8: s=1, level 8/9 -> positive; n=5, f=1: s=2, level 2/4 -> 0.
        assert alie_z(5, 1) == 0.0
        assert alie_z(17, 8) > 0

    def test_rows_identical_and_formula(self, rng):
        honest = rng.normal(size=(12, 3))
        out = attack_alie(ctx(honest, 5))
        assert out.shape == (5, 3)
        expected = honest.mean(axis=0) - alie_z(17, 5) * honest.std(axis=0, ddof=1)
        for row in out:
            np.testing.assert_allclose(row, expected, atol=1e-14)

    def test_z_override(self, rng):
        honest = rng.normal(size=(4, 2))
        out = attack_alie(ctx(honest, 1), z=2.0)
        np.testing.assert_allclose(out[0], honest.mean(axis=0) - 2.0 * honest.std(axis=0, ddof=1))

    def test_needs_two_honest(self):
        with pytest.raises(InvalidInputError):
            attack_alie(ctx([[1.0]], 1))


class TestFoeSf:
    def test_foe_zero_epsilon(self, rng):
        np.testing.assert_array_equal(attack_foe(ctx(rng.normal(size=(3, 2)), 2), 0.0), np.zeros((2, 2)))

    def test_foe_scaling(self):
        out = attack_foe(ctx([[1.0, -2.0], [1.0, -2.0]], 1), 1.1)
        np.testing.assert_allclose(out, [[-1.1, 2.2]])

    @pytest.mark.parametrize("f", [1, 3, 9, 11, 15])
    def test_foe_direction_under_mean(self, f, rng):
        # With n = 2f + 1 the mean is (1 - 0.1 f) mu / n: reversed only once f > 10.
        honest = rng.normal(loc=1.0, size=(f + 1, 3))
        byz = attack_foe(ctx(honest, f), 1.1)
        agg = agg_mean(UpdateSet(np.vstack([honest, byz])))
        mu = honest.mean(axis=0)
        assert (agg @ mu < 0) == (1.1 * f > f + 1)

    def test_sf_zero_mean(self):
        np.testing.assert_array_equal(attack_sf(ctx([[1.0], [-1.0]], 1)), [[0.0]])

    def test_sf_is_foe_one(self, rng):
        c = ctx(rng.normal(size=(5, 4)), 2)
        np.testing.assert_array_equal(attack_sf(c), attack_foe(c, 1.0))

    def test_sf_inner_product(self, rng):
        honest = rng.normal(size=(5, 4))
        mu = honest.mean(axis=0)
        assert attack_sf(ctx(honest, 1))[0] @ mu == pytest.approx(-(mu @ mu))


class TestLabelFlip:
    def setup_method(self):
        self.ds = generate_synthetic(2, 3, 8, 2.0, seed=0)
        self.spec = ModelSpec("softmax_regression", 3, 2)
        self.theta = init_params(self.spec, 0)

    def worker(self, mapping, seed=0):
        return LocalWorker(WorkerShard(self.ds), np.random.default_rng(seed), self.spec.num_params, label_map=mapping)

    def test_relabel_oracle(self):
        w = self.worker(flip_map(2))
        c = ctx(np.zeros((3, self.spec.num_params)), 1, spec=self.spec, theta=self.theta, byz_workers=[w],
                step_kwargs=dict(batch_size=None, beta=0.0, clip_c=math.inf, l2_reg=0.0))
        out = attack_lf(c)
        expected = weighted_batch_gradient(self.spec, self.theta, self.ds.features, 1 - self.ds.labels)
        np.testing.assert_allclose(out[0], expected, atol=1e-15)

    def test_single_class_map_is_identity(self):
        np.testing.assert_array_equal(flip_map(1), [0])
        np.testing.assert_array_equal(flip_map(4), [3, 2, 1, 0])

    def test_deterministic(self):
        kw = dict(batch_size=4, beta=0.9, clip_c=5.0, l2_reg=1e-4)
        outs = []
        for _ in range(2):
            ws = [self.worker(flip_map(2), seed=s) for s in (1, 2)]
            c = ctx(np.zeros((3, self.spec.num_params)), 2, spec=self.spec, theta=self.theta, byz_workers=ws, step_kwargs=kw)
            outs.append(np.vstack([attack_lf(c), attack_lf(c)]))
        np.testing.assert_array_equal(outs[0], outs[1])

    def test_missing_workers(self):
        with pytest.raises(InvalidInputError):
            attack_lf(ctx(np.zeros((2, 6)), 1, spec=self.spec, theta=self.theta))


class TestMimic:
    def test_two_rows_pick_first(self):
        assert mimic_index([[0.0, 0.0], [1.0, 1.0]], 3) == 0

    def test_four_rows_match_literal(self):
        rows = [[0.0], [1.0], [1.2], [5.0]]
        assert mimic_index(rows, 2) == mimic_literal(rows, 2)

    def test_identical_rows(self):
        out = attack_mimic(ctx(np.ones((4, 2)), 2))
        np.testing.assert_array_equal(out, np.ones((2, 2)))
        assert mimic_index(np.ones((4, 2)), 2) == 0

    @given(st.integers(2, 8), st.integers(1, 3), st.integers(1, 3), st.integers(0, 2**32 - 1), st.booleans())
    def test_matches_literal(self, h, f, d, seed, coarse):
        rng = np.random.default_rng(seed)
        rows = rng.integers(-2, 3, size=(h, d)).astype(float) if coarse else rng.normal(size=(h, d))
        assert mimic_index(rows, f) == mimic_literal(rows.tolist(), f)

    @given(st.integers(2, 8), st.integers(1, 3), st.integers(0, 2**32 - 1))
    def test_selects_honest_row_verbatim(self, h, f, seed):
        rows = np.random.default_rng(seed).normal(size=(h, 3))
        out = attack_mimic(ctx(rows, f))
        assert out.shape == (f, 3)
        assert any(np.array_equal(out[0], r) for r in rows)


@given(st.integers(2, 8), st.integers(1, 4), st.floats(0.1, 10.0), st.integers(-6, 6), st.integers(0, 2**32 - 1))
def test_uniform_scaling(h, f, lam, k, seed):
    honest = np.random.default_rng(seed).normal(size=(h, 3))
    a, b = ctx(honest, f), ctx(lam * honest, f)
    np.testing.assert_allclose(attack_alie(b, alie_z(h + f, f) if 2 * f < h + f else 0.0),
                               lam * attack_alie(a, alie_z(h + f, f) if 2 * f < h + f else 0.0), rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(attack_foe(b), lam * attack_foe(a), rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(attack_sf(b), lam * attack_sf(a), rtol=1e-12, atol=1e-12)
    # Powers of two scale exactly, so exact score ties stay exact.
    assert mimic_index(2.0**k * honest, f) == mimic_index(honest, f)


@pytest.mark.parametrize("name", ["alie", "foe", "sf", "mimic"])
def test_emits_f_rows_and_is_repeatable(name, rng):
    honest = rng.normal(size=(10, 4))
    attack = get_attack(name)
    a = attack(ctx(honest, 4))
    assert a.shape == (4, 4)
    np.testing.assert_array_equal(a, attack(ctx(honest.copy(), 4)))


def test_none_and_unknown():
    assert get_attack("none")(ctx(np.zeros((3, 2)), 0)).shape == (0, 2)
    with pytest.raises(InvalidInputError):
        get_attack("gaussian")
