import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from claimsreg.causal import (draw_causal, ipw_weights, pooled_sd, positivity_count,
                              standardized_differences, unadjusted_balance, unadjusted_summary,
                              weighted_beta_params)
from claimsreg.errors import ValidationError
from claimsreg.ingest import AnalysisDataset, filter_by_prevalence
from conftest import make_dataset


def tiny(X, Y, B=None):
    n = len(X)
    B = np.zeros((n, 0)) if B is None else np.asarray(B, float)
    return AnalysisDataset([f"s{i}" for i in range(n)], np.asarray(X), {"y": np.asarray(Y)},
                           B, np.zeros((n, 0), np.int8), [f"b{k}" for k in range(B.shape[1])], [])


def naive_counts(pi, X, Y):
    """Loop-over-subjects oracle for one propensity vector."""
    a, b = [0.0, 0.0], [0.0, 0.0]
    n = [0, 0]
    E, F = [0.0, 0.0], [0.0, 0.0]
    for i in range(len(X)):
        g = int(X[i])
        w = 1 / pi[i] if g == 1 else 1 / (1 - pi[i])
        n[g] += 1
        if Y[i]:
            E[g] += w
        else:
            F[g] += w
    for g in (0, 1):
        gamma = n[g] / (E[g] + F[g])
        a[g] = 1 + gamma * E[g]
        b[g] = 1 + gamma * F[g]
    return np.array(a), np.array(b)


class TestWeights:
    def test_hand_values(self):
        np.testing.assert_allclose(ipw_weights([0.25, 0.8], [1, 0]), [4.0, 5.0])

    def test_out_of_range(self):
        with pytest.raises(ValidationError):
            ipw_weights([1.2, 0.5], [1, 0])
        with pytest.raises(ValidationError):
            ipw_weights([np.nan, 0.5], [1, 0])

    def test_extremes_are_clamped(self):
        w = ipw_weights([0.0, 1.0], [1, 0])
        assert np.all(np.isfinite(w))


class TestWeightedCounts:
    def test_half_propensity_cancels(self):
        X = np.array([0] * 8 + [1] * 9)
        Y = np.array([1] * 4 + [0] * 4 + [1] * 6 + [0] * 3)
        c = weighted_beta_params(np.full(17, 0.5), X, Y)
        np.testing.assert_allclose(c.a_star, [5.0, 7.0])
        np.testing.assert_allclose(c.b_star, [5.0, 4.0])
        np.testing.assert_allclose(c.gamma, [0.5, 0.5])

    def test_single_subject_arm(self):
        c = weighted_beta_params([0.3, 0.6, 0.4], [1, 0, 0], [1, 0, 1])
        assert c.a_star[1] + c.b_star[1] == pytest.approx(3.0)
        assert c.a_star[1] == pytest.approx(2.0)

    def test_empty_arm(self):
        with pytest.raises(ValidationError, match="non-empty"):
            weighted_beta_params([0.3, 0.6], [1, 1], [1, 0])

    def test_matches_naive_loop(self):
        rng = np.random.default_rng(0)
        n = 60
        X = rng.integers(0, 2, n)
        Y = rng.integers(0, 2, n)
        pis = rng.uniform(0.05, 0.95, (7, n))
        c = weighted_beta_params(pis, X, Y)
        for s in range(7):
            a, b = naive_counts(pis[s], X, Y)
            np.testing.assert_allclose(c.a_star[s], a, rtol=1e-12)
            np.testing.assert_allclose(c.b_star[s], b, rtol=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 80))
    def test_total_is_two_plus_n(self, seed, n):
        rng = np.random.default_rng(seed)
        X = np.r_[0, 1, rng.integers(0, 2, n - 2)]
        Y = rng.integers(0, 2, n)
        c = weighted_beta_params(rng.uniform(0.01, 0.99, (5, n)), X, Y)
        np.testing.assert_allclose(c.a_star + c.b_star, np.broadcast_to(2 + c.n_group, (5, 2)),
                                   rtol=1e-12)


class TestCausalDraws:
    def test_beta_mean(self):
        # control: 0 events in 10 -> Beta(1, 11), mean 1/12
        X = np.r_[np.zeros(10), np.ones(10)].astype(int)
        Y = np.r_[np.zeros(10), np.ones(5), np.zeros(5)].astype(int)
        res = draw_causal(np.full((100_000, 20), 0.5), tiny(X, Y), "y", rng_seed=1)
        assert res.p0.mean() == pytest.approx(1 / 12, abs=0.003)
        assert res.p1.mean() == pytest.approx(0.5, abs=0.003)

    def test_half_propensity_equals_unadjusted(self, small_dataset):
        res = draw_causal(np.full((300, small_dataset.n), 0.5), small_dataset, "y1", rng_seed=7)
        ref = unadjusted_summary(small_dataset, "y1", 300, rng_seed=7)
        np.testing.assert_allclose(res.delta, ref.delta, atol=1e-10)

    def test_deterministic(self, small_dataset):
        pi = np.random.default_rng(1).uniform(0.2, 0.8, (50, small_dataset.n))
        a = draw_causal(pi, small_dataset, "y1", rng_seed=3)
        b = draw_causal(pi, small_dataset, "y1", rng_seed=3)
        np.testing.assert_array_equal(a.delta, b.delta)

    def test_unknown_outcome(self, small_dataset):
        with pytest.raises(ValidationError, match="unknown outcome"):
            draw_causal(np.full(small_dataset.n, 0.5), small_dataset, "nope")

    def test_summary_formatting(self):
        X = np.r_[np.zeros(50), np.ones(50)].astype(int)
        Y = np.r_[np.ones(10), np.zeros(40), np.ones(20), np.zeros(30)].astype(int)
        res = unadjusted_summary(tiny(X, Y), "y", 2000)
        rec = res.to_json("y")
        assert rec["mean_delta"] == pytest.approx(100 * res.mean_delta)
        assert rec["ci_width"] == pytest.approx(rec["ci_high"] - rec["ci_low"])
        cell = res.table_cell()
        assert cell.startswith(f"{100 * res.mean_delta:.1f} (")

    def test_positivity_count(self):
        pi = np.array([[0.005, 0.5, 0.995], [0.02, 0.5, 0.999]])
        assert positivity_count(pi) == 1


class TestBalance:
    def test_classic_unweighted(self, small_dataset):
        ds = small_dataset
        Z = np.column_stack([ds.B, ds.C.astype(float)])
        g1, g0 = Z[ds.X == 1], Z[ds.X == 0]
        sd = np.sqrt((g1.var(0, ddof=1) + g0.var(0, ddof=1)) / 2)
        expected = 100 * (g1.mean(0) - g0.mean(0)) / sd
        np.testing.assert_allclose(unadjusted_balance(ds).mean_sd, expected, rtol=1e-10)
        np.testing.assert_allclose(pooled_sd(ds), sd, rtol=1e-12)

    def test_constant_covariate(self):
        X = np.array([0, 0, 1, 1, 0, 1])
        B = np.column_stack([np.full(6, 3.0), np.arange(6.0)])
        rep = standardized_differences(np.full((4, 6), 0.4), tiny(X, np.zeros(6, int), B))
        assert rep.constant.tolist() == [True, False]
        np.testing.assert_array_equal(rep.draws[:, 0], 0.0)

    def test_flags(self):
        X = np.array([0, 0, 0, 1, 1, 1])
        B = np.array([[0.0], [1.0], [2.0], [1.0], [2.0], [3.0]])
        rep = unadjusted_balance(tiny(X, np.zeros(6, int), B))
        assert rep.mean_sd[0] == pytest.approx(100.0)
        assert rep.n_mean_outside == 1
        assert rep.n_interval_outside == 1

    def test_csv(self, tmp_path, small_dataset):
        rep = standardized_differences(np.full((3, small_dataset.n), 0.5), small_dataset)
        rep.to_csv(tmp_path / "b.csv")
        lines = (tmp_path / "b.csv").read_text().splitlines()
        assert lines[0] == "covariate,mean_sd,q025,q975,flag_mean,flag_interval"
        assert len(lines) == 1 + small_dataset.B.shape[1] + small_dataset.C.shape[1]

    def test_true_propensity_improves_balance(self, desk_cohort):
        ds = filter_by_prevalence(desk_cohort.dataset, 10)
        raw = unadjusted_balance(ds)
        tru = standardized_differences(desk_cohort.truth.propensity[None, :], ds)
        assert tru.n_mean_outside < raw.n_mean_outside
        assert np.mean(np.abs(tru.mean_sd)) < np.mean(np.abs(raw.mean_sd))


def test_balance_uses_fixed_sd():
    # reweighting changes the means but not the denominator
    ds = make_dataset(n=100, seed=4)
    pi = np.random.default_rng(2).uniform(0.2, 0.8, (1, ds.n))
    rep = standardized_differences(pi, ds)
    Z = np.column_stack([ds.B, ds.C.astype(float)])
    w = ipw_weights(pi[0], ds.X)
    m1 = np.average(Z[ds.X == 1], axis=0, weights=w[ds.X == 1])
    m0 = np.average(Z[ds.X == 0], axis=0, weights=w[ds.X == 0])
    np.testing.assert_allclose(rep.draws[0], 100 * (m1 - m0) / pooled_sd(ds), rtol=1e-10)
