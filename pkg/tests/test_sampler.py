import numpy as np
import pytest

from claimsreg.errors import (DegenerateChainWarning, LayoutMismatchError, ModelError,
                              ValidationError)
from claimsreg.sampler import (PosteriorDraws, SamplerConfig, check_layout,
                               effective_sample_size, run_chains, split_rhat)


class Gaussian:
    def __init__(self, cov):
        self.cov = np.asarray(cov, float)
        self.prec = np.linalg.inv(self.cov)
        self.dim = self.cov.shape[0]

    def logp_and_grad(self, theta):
        g = -self.prec @ theta
        return 0.5 * theta @ g, g


class Nowhere:
    dim = 2

    def logp_and_grad(self, theta):
        raise ModelError("never finite")


@pytest.fixture(scope="module")
def normal_2d():
    return run_chains(Gaussian(np.eye(2)), SamplerConfig(chains=4, warmup=1000, samples=1000, seed=1))


def correlated_cov():
    # unit variances, correlation 0.5^|i-j|
    idx = np.arange(5)
    return 0.5 ** np.abs(np.subtract.outer(idx, idx))


class TestRunChains:
    def test_standard_normal_moments(self, normal_2d):
        flat = normal_2d.flat()
        np.testing.assert_allclose(flat.mean(axis=0), 0.0, atol=0.05)
        np.testing.assert_allclose(flat.std(axis=0), 1.0, atol=0.05)

    def test_shapes_and_names(self, normal_2d):
        assert normal_2d.draws.shape == (4, 1000, 2)
        assert normal_2d.names == ("theta[0]", "theta[1]")
        assert normal_2d.step_size.shape == (4,)
        assert normal_2d.inv_mass.shape == (4, 2)

    def test_acceptance_near_target(self, normal_2d):
        assert np.all(np.abs(normal_2d.accept_rate - 0.8) < 0.1)

    def test_converged(self, normal_2d):
        s = normal_2d.summary()
        assert s["max_rhat"] < 1.01
        assert s["divergences"] == 0
        assert not s["unreliable"]

    def test_deterministic(self):
        cfg = SamplerConfig(chains=2, warmup=100, samples=50, seed=9)
        a = run_chains(Gaussian(np.eye(3)), cfg)
        b = run_chains(Gaussian(np.eye(3)), cfg)
        np.testing.assert_array_equal(a.draws, b.draws)

    def test_parallel_equals_sequential(self):
        seq = run_chains(Gaussian(np.eye(3)), SamplerConfig(chains=2, warmup=100, samples=50, seed=4))
        par = run_chains(Gaussian(np.eye(3)),
                         SamplerConfig(chains=2, warmup=100, samples=50, seed=4, threads=2))
        np.testing.assert_array_equal(seq.draws, par.draws)

    def test_correlated_covariance(self):
        cov = correlated_cov()
        d = run_chains(Gaussian(cov), SamplerConfig(chains=4, warmup=1000, samples=2000, seed=2))
        emp = np.cov(d.flat(), rowvar=False)
        assert np.max(np.abs(emp - cov)) < 0.05

    def test_mass_adapts_to_scales(self):
        d = run_chains(Gaussian(np.diag([0.01, 100.0])),
                       SamplerConfig(chains=2, warmup=600, samples=400, seed=3))
        ratio = d.inv_mass[:, 1] / d.inv_mass[:, 0]
        assert np.all(ratio > 1000)

    def test_init_failure(self):
        with pytest.raises(ModelError, match="100 random initializations"):
            run_chains(Nowhere(), SamplerConfig(chains=1, warmup=10, samples=10))

    def test_config_validation(self):
        with pytest.raises(ValidationError):
            SamplerConfig(target_accept=1.0)
        with pytest.raises(ValidationError):
            SamplerConfig(samples=0)

    def test_unreliable_flag(self):
        d = PosteriorDraws(np.zeros((2, 10, 1)), ("a",), divergences=np.array([2, 1]))
        assert d.divergence_fraction == pytest.approx(0.15)
        assert d.unreliable


class TestDrawsCsv:
    def test_round_trip(self, tmp_path, normal_2d):
        normal_2d.to_csv(tmp_path / "d.csv")
        back = PosteriorDraws.from_csv(tmp_path / "d.csv", expected_names=normal_2d.names)
        np.testing.assert_array_equal(back.draws, normal_2d.draws)
        header = (tmp_path / "d.csv").read_text().splitlines()[0]
        assert header == "chain,iter,theta[0],theta[1]"

    def test_layout_mismatch_names_slot(self):
        with pytest.raises(LayoutMismatchError, match="slot 1"):
            check_layout(("beta0", "beta_C[4271]"), ("beta0", "z[4271]"))
        with pytest.raises(LayoutMismatchError, match="<missing>"):
            check_layout(("beta0",), ("beta0", "log_tau"))


class TestRhat:
    def test_iid(self):
        x = np.random.default_rng(0).standard_normal((4, 1000))
        r = split_rhat(x)
        assert 0.99 <= r[0] <= 1.02

    def test_stuck_chains(self):
        x = np.stack([np.zeros(100), np.ones(100)])
        with pytest.warns(DegenerateChainWarning):
            assert split_rhat(x)[0] == np.inf

    def test_disjoint_chains_with_noise(self):
        rng = np.random.default_rng(1)
        x = np.stack([rng.normal(0, 0.1, 200), rng.normal(1, 0.1, 200)])
        assert split_rhat(x)[0] > 1.1

    def test_identical_chains(self):
        c = np.random.default_rng(2).standard_normal(500)
        r = split_rhat(np.stack([c, c]))
        assert r[0] == pytest.approx(1.0, abs=0.02)

    def test_needs_samples(self):
        with pytest.raises(ValidationError):
            split_rhat(np.zeros((2, 3)))


def ar1(rho, n, chains, seed):
    rng = np.random.default_rng(seed)
    x = np.empty((chains, n))
    x[:, 0] = rng.standard_normal(chains) / np.sqrt(1 - rho * rho)
    for t in range(1, n):
        x[:, t] = rho * x[:, t - 1] + rng.standard_normal(chains)
    return x


class TestEss:
    def test_iid(self):
        x = np.random.default_rng(3).standard_normal((4, 1000))
        assert effective_sample_size(x)[0] == pytest.approx(4000, rel=0.1)

    def test_ar1(self):
        rho = 0.9
        x = ar1(rho, 5000, 4, seed=4)
        expected = x.size * (1 - rho) / (1 + rho)
        assert effective_sample_size(x)[0] == pytest.approx(expected, rel=0.25)

    def test_constant(self):
        with pytest.warns(DegenerateChainWarning):
            assert effective_sample_size(np.ones((2, 100)))[0] == 0.0
