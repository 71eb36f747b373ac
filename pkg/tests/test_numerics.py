"""Numeric kernel: normalization, similarity, softmax, KL, splittable RNG."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tbpslab.numerics import (
    DimMismatch,
    NonPositiveTemperature,
    Rng,
    ShapeMismatch,
    ZeroVector,
    kl_rows,
    l2_normalize,
    l2_normalize_rows,
    l2_normalize_rows_backward,
    log_softmax_rows,
    sim_matrix,
    softmax_rows,
)

finite_floats = st.floats(min_value=-50, max_value=50, allow_nan=False, allow_infinity=False)


def matrices(min_rows=1, max_rows=8, min_cols=1, max_cols=8):
    return st.integers(min_rows, max_rows).flatmap(
        lambda r: st.integers(min_cols, max_cols).flatmap(
            lambda c: st.lists(
                st.lists(finite_floats, min_size=c, max_size=c), min_size=r, max_size=r
            ).map(np.array)
        )
    )


class TestNormalize:
    def test_unit_norm(self):
        v = l2_normalize([3.0, 4.0])
        assert np.allclose(v, [0.6, 0.8])
        assert abs(np.linalg.norm(v) - 1.0) < 1e-12

    def test_zero_vector_rejected(self):
        with pytest.raises(ZeroVector):
            l2_normalize([0.0, 0.0, 0.0])
        with pytest.raises(ZeroVector):
            l2_normalize_rows(np.array([[1.0, 0.0], [0.0, 0.0]]))

    def test_rows_unit(self, rng):
        m = rng.normal(size=(6, 5))
        out = l2_normalize_rows(m)
        assert np.abs(np.linalg.norm(out, axis=1) - 1.0).max() < 1e-12

    def test_nan_rejected(self):
        with pytest.raises(ValueError):
            l2_normalize([np.nan, 1.0])

    def test_backward_matches_finite_differences(self, rng):
        raw = rng.normal(size=(4, 3))
        g = rng.normal(size=(4, 3))

        def scalar(x):
            return float(np.sum(l2_normalize_rows(x) * g))

        analytic = l2_normalize_rows_backward(raw, g)
        step = 1e-6
        numeric = np.zeros_like(raw)
        for i in range(raw.shape[0]):
            for j in range(raw.shape[1]):
                delta = np.zeros_like(raw)
                delta[i, j] = step
                numeric[i, j] = (scalar(raw + delta) - scalar(raw - delta)) / (2 * step)
        assert np.abs(analytic - numeric).max() < 1e-7


class TestSimMatrix:
    def test_brute_force(self, rng):
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(5, 4))
        s = sim_matrix(a, b)
        for i in range(3):
            for j in range(5):
                assert abs(s[i, j] - float(np.dot(a[i], b[j]))) < 1e-12

    @given(matrices(min_cols=2, max_cols=6), st.integers(0, 2**32))
    @settings(max_examples=40, deadline=None)
    def test_transpose_symmetry(self, a, seed):
        b = Rng(seed).normal(size=(4, a.shape[1]))
        assert np.abs(sim_matrix(a, b) - sim_matrix(b, a).T).max() < 1e-12

    def test_dim_mismatch(self):
        with pytest.raises(DimMismatch):
            sim_matrix(np.ones((2, 3)), np.ones((2, 4)))


class TestSoftmax:
    @given(matrices(), st.floats(0.01, 10))
    @settings(max_examples=60, deadline=None)
    def test_rows_sum_to_one(self, m, tau):
        p = softmax_rows(m, tau)
        assert np.abs(p.sum(axis=1) - 1.0).max() < 1e-9
        assert (p >= 0).all()

    @given(matrices(), st.floats(0.01, 10), finite_floats)
    @settings(max_examples=60, deadline=None)
    def test_row_shift_invariance(self, m, tau, c):
        shifted = m + c * tau  # shifting logits by a per-row constant
        assert np.abs(softmax_rows(m, tau) - softmax_rows(shifted, tau)).max() < 1e-12

    def test_scalar_oracle(self):
        m = np.array([[1.0, 2.0, 3.0]])
        tau = 0.5
        e = [np.exp(x / tau) for x in [1.0, 2.0, 3.0]]
        expected = np.array(e) / sum(e)
        assert np.abs(softmax_rows(m, tau)[0] - expected).max() < 1e-12

    def test_log_softmax_consistent(self, rng):
        m = rng.normal(size=(4, 6)) * 10
        assert np.abs(np.exp(log_softmax_rows(m, 0.07)) - softmax_rows(m, 0.07)).max() < 1e-12

    def test_extreme_logits_stable(self):
        m = np.array([[1000.0, -1000.0], [5000.0, 5000.0]])
        p = softmax_rows(m, 1.0)
        assert np.isfinite(p).all()
        assert np.abs(p.sum(axis=1) - 1.0).max() < 1e-9

    def test_non_positive_temperature(self):
        for tau in (0.0, -1.0):
            with pytest.raises(NonPositiveTemperature):
                softmax_rows(np.ones((2, 2)), tau)
            with pytest.raises(NonPositiveTemperature):
                log_softmax_rows(np.ones((2, 2)), tau)


class TestKl:
    def test_scalar_loop_oracle(self, rng):
        p = softmax_rows(rng.normal(size=(5, 7)), 1.0)
        q = softmax_rows(rng.normal(size=(5, 7)), 1.0)
        eps = 1e-8
        total = 0.0
        for i in range(5):
            row = 0.0
            for j in range(7):
                row += p[i, j] * (np.log(p[i, j]) - np.log(q[i, j] + eps))
            total += row
        assert abs(kl_rows(p, q, eps) - total / 5) < 1e-12

    @given(st.integers(0, 2**32), st.integers(1, 8), st.integers(1, 8))
    @settings(max_examples=40, deadline=None)
    def test_self_divergence_small(self, seed, n, m):
        p = softmax_rows(Rng(seed).normal(size=(n, m)), 1.0)
        eps = 1e-8
        assert abs(kl_rows(p, p, eps)) <= eps * m

    def test_zero_entries_finite(self):
        p = np.array([[1.0, 0.0], [0.5, 0.5]])
        q = np.array([[0.0, 1.0], [1.0, 0.0]])
        assert np.isfinite(kl_rows(p, q, 1e-8))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            kl_rows(np.ones((2, 2)) / 2, np.ones((2, 3)) / 3)


class TestRng:
    def test_same_seed_stream_identical(self):
        a = Rng(123, 45).uniform(size=10_000)
        b = Rng(123, 45).uniform(size=10_000)
        assert np.array_equal(a, b)

    def test_streams_differ(self):
        a = Rng(123, 0).uniform(size=100)
        b = Rng(123, 1).uniform(size=100)
        assert not np.array_equal(a, b)

    def test_child_deterministic_and_distinct(self):
        root = Rng(7)
        c1 = root.child(1)
        c2 = root.child(2)
        again = Rng(7).child(1)
        assert c1.stream == again.stream
        assert c1.stream != c2.stream
        assert np.array_equal(c1.uniform(size=50), again.uniform(size=50))

    def test_named_matches_rebuilt(self):
        assert Rng(7).named("augment").stream == Rng(7).named("augment").stream
        assert Rng(7).named("augment").stream != Rng(7).named("init").stream

    def test_split_independence_smoke(self):
        # Correlation between sibling streams should be statistically tiny.
        root = Rng(99)
        x = root.child(0).normal(size=20_000)
        y = root.child(1).normal(size=20_000)
        assert abs(np.corrcoef(x, y)[0, 1]) < 0.03

    def test_derivation_consumes_no_draws(self):
        a = Rng(5, 8)
        _ = a.child(3)  # deriving a child must not advance the parent
        b = Rng(5, 8)
        assert np.array_equal(a.uniform(size=20), b.uniform(size=20))

    def test_integers_half_open(self):
        draws = Rng(11).integers(0, 3, size=1000)
        assert set(np.unique(draws)) <= {0, 1, 2}

    def test_permutation_deterministic(self):
        assert np.array_equal(Rng(3).permutation(20), Rng(3).permutation(20))
