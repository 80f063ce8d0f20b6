from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wola.data import LabeledDataset, WorkerShard, dirichlet_partition, generate_synthetic, global_distribution, label_distribution, load_iris
from wola.diagnostics import class_cosine_trace
from wola.model import ModelSpec, init_params, weighted_batch_gradient
from wola.numerics import InvalidInputError
from wola.objective import (
    aggregate_objective_gm,
    build_objective,
    class_gradient,
    cosine_similarity,
    honest_mean,
    objective_attack_worst,
    objective_deviation_bound,
    wola_weights,
)


def l1(a, b):
    return float(np.abs(np.asarray(a) - np.asarray(b)).sum())


class TestWeights:
    def test_fig2_weights(self):
        w = wola_weights(np.full(3, 1 / 3), [1 / 6, 1 / 6, 4 / 6], [0, 1, 2])
        np.testing.assert_allclose(w, [2, 2, 0.5], rtol=1e-12)

    def test_matched_distributions(self):
        p = np.array([0.2, 0.3, 0.5])
        np.testing.assert_array_equal(wola_weights(p, p, [0, 1, 2, 2]), np.ones(4))

    def test_sum_over_shard(self, rng):
        labels = rng.choice(4, size=40, p=[0.5, 0.3, 0.2, 0.0])
        counts = np.bincount(labels, minlength=4)
        q = np.array([0.1, 0.2, 0.3, 0.4])
        w = wola_weights(q, counts / 40, labels)
        assert w.sum() == pytest.approx(40 * q[counts > 0].sum(), rel=1e-12)

    def test_unseen_label(self):
        with pytest.raises(InvalidInputError):
            wola_weights([0.5, 0.5], [1.0, 0.0], [0, 1])

    def test_label_out_of_range(self):
        with pytest.raises(InvalidInputError):
            wola_weights([0.5, 0.5], [0.5, 0.5], [2])


class TestBuildObjective:
    def test_global_symmetric(self):
        np.testing.assert_array_equal(build_objective("global", [[1, 0], [0, 1]], [5, 5]), [0.5, 0.5])

    def test_uniform(self):
        np.testing.assert_array_equal(build_objective("uniform", num_classes=4), [0.25] * 4)

    def test_global_matches_partition(self):
        ds = generate_synthetic(4, 2, 30, 2.0, seed=0)
        shards = dirichlet_partition(ds, 5, 0.5, seed=1, equal_size=False)
        q = build_objective("global", [label_distribution(s) for s in shards], [s.size for s in shards])
        np.testing.assert_allclose(q, global_distribution(shards), atol=1e-15)

    def test_provided(self):
        np.testing.assert_array_equal(build_objective("provided", provided=[0.1, 0.9]), [0.1, 0.9])
        with pytest.raises(InvalidInputError):
            build_objective("provided", provided=[0.2, 0.9])
        with pytest.raises(InvalidInputError):
            build_objective("provided")

    def test_unknown_mode(self):
        with pytest.raises(InvalidInputError):
            build_objective("median", [[1.0]], [1])


class TestWorstAttack:
    def test_targets_rarest_class(self):
        subs = objective_attack_worst([[0.6, 0.3, 0.1]] * 3, None, 2, 5)
        assert len(subs) == 5
        for s in subs[3:]:
            np.testing.assert_array_equal(s, [0, 0, 1])

    def test_no_byzantines(self):
        honest = [np.array([0.5, 0.5]), np.array([0.2, 0.8])]
        subs = objective_attack_worst(honest, None, 0, 2)
        for a, b in zip(subs, honest):
            np.testing.assert_array_equal(a, b)

    def test_tie_goes_to_lowest_index(self):
        subs = objective_attack_worst([[0.4, 0.2, 0.2, 0.2]], None, 1, 2)
        np.testing.assert_array_equal(subs[-1], [0, 1, 0, 0])

    def test_equality_with_bound(self, rng):
        honest = list(rng.dirichlet(np.ones(5), size=7))
        subs = objective_attack_worst(honest, None, 3, 10)
        u = honest_mean(honest)
        assert l1(np.mean(subs, axis=0), u) == pytest.approx(objective_deviation_bound(u, 3, 10), abs=1e-12)

    def test_equality_in_exact_arithmetic(self):
        honest = [[Fraction(1, 2), Fraction(1, 3), Fraction(1, 6)], [Fraction(1, 4), Fraction(1, 4), Fraction(1, 2)]]
        n, f = 5, 3
        u = [sum(h[c] for h in honest) / 2 for c in range(3)]
        k = min(range(3), key=lambda c: (u[c], c))
        subs = honest + [[Fraction(int(c == k)) for c in range(3)]] * f
        mean = [sum(s[c] for s in subs) / n for c in range(3)]
        exact = sum(abs(mean[c] - u[c]) for c in range(3))
        assert exact == Fraction(f, n) * (2 - 2 * min(u))
        got = objective_deviation_bound([float(v) for v in u], f, n)
        assert got == pytest.approx(float(exact), abs=1e-12)

    def test_count_checks(self):
        with pytest.raises(InvalidInputError):
            objective_attack_worst([[1.0]], None, 2, 2)
        with pytest.raises(InvalidInputError):
            objective_attack_worst([[1.0]] * 2, None, 1, 4)


class TestBound:
    def test_two_classes(self):
        assert objective_deviation_bound([0.5, 0.5], 1, 2) == 0.5

    def test_no_byzantines(self):
        assert objective_deviation_bound([0.3, 0.7], 0, 5) == 0.0

    @given(st.integers(2, 20), st.data())
    def test_upper_bounds_random_attacks(self, n, data):
        f = data.draw(st.integers(0, n - 1))
        seed = data.draw(st.integers(0, 2**32 - 1))
        rng = np.random.default_rng(seed)
        honest = rng.dirichlet(np.ones(4), size=n - f)
        u = honest.mean(axis=0)
        bound = objective_deviation_bound(u, f, n)
        for _ in range(20):
            byz = rng.dirichlet(np.full(4, 0.2), size=f)
            assert l1(np.vstack([honest, byz]).mean(axis=0), u) <= bound + 1e-12

    def test_rejects_f_at_least_n(self):
        with pytest.raises(InvalidInputError):
            objective_deviation_bound([1.0], 2, 2)


class TestGMObjective:
    def test_identical(self):
        np.testing.assert_allclose(aggregate_objective_gm([[0.2, 0.8]] * 4), [0.2, 0.8], atol=1e-12)

    def test_collinear_middle(self):
        q = aggregate_objective_gm([[1, 0, 0], [0.5, 0.5, 0], [0, 1, 0]])
        np.testing.assert_allclose(q, [0.5, 0.5, 0], atol=1e-6)

    @pytest.mark.parametrize("seed", range(10))
    def test_beats_mean_under_worst_attack(self, seed):
        rng = np.random.default_rng(seed)
        honest = list(rng.dirichlet(np.ones(6), size=14))
        subs = objective_attack_worst(honest, None, 3, 17)
        u = honest_mean(honest)
        assert l1(aggregate_objective_gm(subs), u) < l1(np.mean(subs, axis=0), u)

    @given(st.integers(0, 2**32 - 1))
    def test_stays_on_simplex(self, seed):
        rng = np.random.default_rng(seed)
        q = aggregate_objective_gm(rng.dirichlet(np.full(5, 0.3), size=int(rng.integers(1, 9))))
        assert np.all(q >= 0) and abs(q.sum() - 1.0) <= 1e-9


class TestClassGradient:
    def setup_method(self):
        self.ds = generate_synthetic(3, 2, 10, 2.0, seed=0)
        self.spec = ModelSpec("mlp", 2, 3, hidden_dim=4)
        self.theta = init_params(self.spec, 1)

    def test_single_class_is_full_gradient(self):
        only = self.ds.subset(np.flatnonzero(self.ds.labels == 1))
        np.testing.assert_allclose(
            class_gradient(self.spec, self.theta, only, 1),
            weighted_batch_gradient(self.spec, self.theta, only.features, only.labels),
            atol=1e-15,
        )

    def test_recombines_to_full_gradient(self):
        p = self.ds.class_counts() / len(self.ds)
        mix = sum(p[c] * class_gradient(self.spec, self.theta, self.ds, c) for c in range(3))
        full = weighted_batch_gradient(self.spec, self.theta, self.ds.features, self.ds.labels)
        np.testing.assert_allclose(mix, full, atol=1e-10)

    def test_absent_class(self):
        ds = LabeledDataset(np.zeros((2, 2)), [0, 0], 3)
        with pytest.raises(InvalidInputError):
            class_gradient(self.spec, self.theta, ds, 2)

    def test_iris_versicolor_virginica_oppose(self):
        trace = class_cosine_trace(load_iris(), steps=100)
        assert min(s.cosines[(1, 2)] for s in trace) < 0


class TestWolaAlignment:
    def test_matched_shard_is_bit_identical(self):
        ds = generate_synthetic(3, 2, 4, 2.0, seed=3)
        s = WorkerShard(ds)
        q = label_distribution(s)
        spec = ModelSpec("softmax_regression", 2, 3)
        theta = init_params(spec, 0)
        w = wola_weights(q, q, ds.labels)
        np.testing.assert_array_equal(
            weighted_batch_gradient(spec, theta, ds.features, ds.labels, w),
            weighted_batch_gradient(spec, theta, ds.features, ds.labels),
        )

    def test_resampling_equivalence(self, rng):
        # Shard counts (1, 2, 3); q = (1/2, 1/3, 1/6) -> weights 3, 1, 1/3.
        labels = np.array([0, 1, 1, 2, 2, 2])
        x = rng.normal(size=(6, 2))
        q = np.array([1 / 2, 1 / 3, 1 / 6])
        spec = ModelSpec("mlp", 2, 3, hidden_dim=3)
        theta = rng.normal(size=spec.num_params)
        wola = weighted_batch_gradient(spec, theta, x, labels, wola_weights(q, np.bincount(labels) / 6, labels))
        # Replicate: class 0 x9, class 1 x3, class 2 x1 keeps the ratios 3 : 1 : 1/3.
        reps = np.array([9, 3, 3, 1, 1, 1])
        xr, yr = np.repeat(x, reps, axis=0), np.repeat(labels, reps)
        virtual = weighted_batch_gradient(spec, theta, xr, yr) * reps.sum() / (3 * 6)
        np.testing.assert_allclose(wola, virtual, atol=1e-10)


class TestCosine:
    def test_orthogonal(self):
        assert cosine_similarity([1, 0], [0, 1]) == 0.0

    def test_scaled(self):
        assert cosine_similarity([1, 2, 3], [3, 6, 9]) == pytest.approx(1.0)

    def test_antiparallel(self):
        assert cosine_similarity([1, -2], [-1, 2]) == pytest.approx(-1.0)

    def test_zero_vector(self):
        with pytest.raises(InvalidInputError):
            cosine_similarity([0, 0], [1, 0])
