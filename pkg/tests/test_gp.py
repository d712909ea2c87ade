import numpy as np
import pytest

from phylofunc import (
    GammaVector,
    IllConditionedKernelError,
    KernelMatrix,
    cholesky_with_jitter,
    gp_posterior,
    generate_random_tree,
    heritable_covariance,
    log_marginal_likelihood,
    ou_covariance,
    parse_newick,
    patristic_matrix,
)

CHERRY_PLUS_ONE = "((A:1.0,B:1.0):1.0,C:2.0);"


def dense_logpdf(y, k):
    # brute-force zero-mean Gaussian density with explicit inverse and det
    n = len(y)
    sign, logdet = np.linalg.slogdet(k)
    assert sign > 0
    return -0.5 * y @ np.linalg.inv(k) @ y - 0.5 * logdet - 0.5 * n * np.log(2 * np.pi)


def conditional_oracle(joint, y, n_train):
    # condition a joint zero-mean Gaussian on its first n_train coordinates
    s_tt = joint[:n_train, :n_train]
    s_qt = joint[n_train:, :n_train]
    s_qq = joint[n_train:, n_train:]
    sol = np.linalg.solve(s_tt, y)
    mean = s_qt @ sol
    cov = s_qq - s_qt @ np.linalg.solve(s_tt, s_qt.T)
    return mean, cov


def random_gamma(rng):
    return GammaVector(
        sigma_f=float(rng.uniform(0.5, 3.0)),
        ell=float(rng.uniform(0.3, 5.0)),
        sigma_n=float(rng.uniform(0.1, 1.0)),
    )


class TestGammaVector:
    def test_fields(self):
        g = GammaVector(sigma_f=2.5, ell=6.17, sigma_n=0.5)
        assert g.as_dict() == {"sigma_f": 2.5, "ell": 6.17, "sigma_n": 0.5}

    def test_pure_noise_form(self):
        g = GammaVector(sigma_f=0.0, ell=None, sigma_n=1.0)
        assert g.ell is None

    def test_negative_sigma_rejected(self):
        with pytest.raises(ValueError, match="non-negative"):
            GammaVector(sigma_f=-1.0, ell=1.0, sigma_n=0.5)

    def test_both_zero_rejected(self):
        with pytest.raises(ValueError, match="both"):
            GammaVector(sigma_f=0.0, ell=None, sigma_n=0.0)

    def test_ell_required_with_signal(self):
        with pytest.raises(ValueError, match="ell"):
            GammaVector(sigma_f=1.0, ell=None, sigma_n=0.5)
        with pytest.raises(ValueError, match="ell"):
            GammaVector(sigma_f=1.0, ell=0.0, sigma_n=0.5)

    def test_ell_forbidden_without_signal(self):
        with pytest.raises(ValueError, match="ell"):
            GammaVector(sigma_f=0.0, ell=1.0, sigma_n=0.5)


class TestOuCovariance:
    def test_diagonal_tip_vs_internal(self):
        g = GammaVector(sigma_f=2.0, ell=1.0, sigma_n=0.5)
        d = np.zeros((2, 2))
        k = ou_covariance(d, g, tip_flags=[True, False]).values
        assert k[0, 0] == pytest.approx(2.0 ** 2 + 0.5 ** 2)
        assert k[1, 1] == pytest.approx(2.0 ** 2)

    def test_cherry_kernel_exact(self):
        t = parse_newick(CHERRY_PLUS_ONE)
        d = patristic_matrix(t, [t.node(x) for x in "ABC"])
        g = GammaVector(sigma_f=1.0, ell=1.0, sigma_n=0.0)
        k = ou_covariance(d, g).values
        assert abs(k[0, 1] - np.exp(-2.0)) < 1e-12
        assert abs(k[0, 2] - np.exp(-4.0)) < 1e-12
        assert abs(k[0, 0] - 1.0) < 1e-12

    def test_long_range_entry(self):
        g = GammaVector(sigma_f=2.5, ell=6.17, sigma_n=0.5)
        d = np.array([[0.0, 8.22], [8.22, 0.0]])
        k = ou_covariance(d, g).values
        assert k[0, 0] == pytest.approx(6.5)
        assert k[0, 1] == pytest.approx(6.25 * np.exp(-8.22 / 6.17), abs=1e-12)
        assert k[0, 1] == pytest.approx(1.6493, abs=1e-3)

    def test_pure_noise_kernel_is_diagonal(self):
        g = GammaVector(sigma_f=0.0, ell=None, sigma_n=1.5)
        d = np.array([[0.0, 3.0], [3.0, 0.0]])
        k = ou_covariance(d, g).values
        np.testing.assert_allclose(k, np.eye(2) * 1.5 ** 2)

    def test_defaults_to_all_tips(self):
        g = GammaVector(sigma_f=1.0, ell=1.0, sigma_n=0.7)
        d = np.zeros((3, 3))
        k = ou_covariance(d, g).values
        np.testing.assert_allclose(np.diag(k), np.full(3, 1.0 + 0.49))

    def test_symmetry(self):
        t = generate_random_tree(25, seed=0)
        k = ou_covariance(patristic_matrix(t), random_gamma(np.random.default_rng(0))).values
        assert np.max(np.abs(k - k.T)) < 1e-12

    def test_negative_distance_rejected(self):
        g = GammaVector(sigma_f=1.0, ell=1.0, sigma_n=0.0)
        with pytest.raises(ValueError, match="symmetric|non-negative"):
            ou_covariance(np.array([[0.0, -1.0], [-1.0, 0.0]]), g)

    def test_shape_validation(self):
        g = GammaVector(sigma_f=1.0, ell=1.0, sigma_n=0.0)
        with pytest.raises(ValueError, match="square"):
            ou_covariance(np.zeros((2, 3)), g)
        with pytest.raises(ValueError, match="zero diagonal"):
            ou_covariance(np.eye(2), g)
        with pytest.raises(ValueError, match="tip_flags"):
            ou_covariance(np.zeros((2, 2)), g, tip_flags=[True])

    def test_rectangular_heritable_block(self):
        g = GammaVector(sigma_f=2.0, ell=3.0, sigma_n=0.9)
        d = np.array([[1.0, 2.0, 3.0]])
        np.testing.assert_allclose(
            heritable_covariance(d, g), 4.0 * np.exp(-d / 3.0)
        )


class TestCholeskyWithJitter:
    def test_no_jitter_when_well_conditioned(self):
        g = GammaVector(sigma_f=1.0, ell=1.0, sigma_n=0.5)
        t = generate_random_tree(20, seed=1)
        k = ou_covariance(patristic_matrix(t), g)
        low = cholesky_with_jitter(k)
        assert k.jitter_applied == 0.0
        np.testing.assert_allclose(low @ low.T, k.values, atol=1e-10)

    def test_jitter_recorded_for_singular_kernel(self):
        # two taxa at zero distance with no noise: rank-deficient but PSD
        g = GammaVector(sigma_f=1.0, ell=1.0, sigma_n=0.0)
        k = ou_covariance(np.zeros((2, 2)), g)
        cholesky_with_jitter(k)
        assert k.jitter_applied > 0.0

    def test_indefinite_matrix_raises(self):
        k = KernelMatrix(values=np.array([[1.0, 2.0], [2.0, 1.0]]))
        with pytest.raises(IllConditionedKernelError, match="jitter"):
            cholesky_with_jitter(k)

    def test_non_positive_diagonal_raises(self):
        k = KernelMatrix(values=np.array([[0.0, 0.0], [0.0, 0.0]]))
        with pytest.raises(IllConditionedKernelError, match="diagonal"):
            cholesky_with_jitter(k)


class TestLogMarginalLikelihood:
    def test_standard_normal_at_zero(self):
        lml = log_marginal_likelihood([0.0], KernelMatrix(np.eye(1)))
        assert lml == pytest.approx(-0.5 * np.log(2 * np.pi), abs=1e-12)
        assert lml == pytest.approx(-0.91894, abs=1e-5)

    def test_standard_normal_at_one(self):
        lml = log_marginal_likelihood([1.0], KernelMatrix(np.eye(1)))
        assert lml == pytest.approx(-0.5 - 0.5 * np.log(2 * np.pi), abs=1e-12)
        assert lml == pytest.approx(-1.41894, abs=1e-5)

    def test_matches_dense_inverse(self):
        rng = np.random.default_rng(42)
        for i in range(25):
            n = int(rng.integers(2, 21))
            t = generate_random_tree(n, seed=int(rng.integers(1 << 30)))
            g = random_gamma(rng)
            k = ou_covariance(patristic_matrix(t), g)
            y = rng.normal(size=n)
            assert log_marginal_likelihood(y, k) == pytest.approx(
                dense_logpdf(y, k.values), abs=1e-8
            )

    def test_permutation_invariance(self):
        rng = np.random.default_rng(3)
        t = generate_random_tree(15, seed=3)
        d = patristic_matrix(t)
        g = random_gamma(rng)
        y = rng.normal(size=15)
        ref = log_marginal_likelihood(y, ou_covariance(d, g))
        for _ in range(5):
            p = rng.permutation(15)
            lml = log_marginal_likelihood(y[p], ou_covariance(d[np.ix_(p, p)], g))
            assert lml == pytest.approx(ref, abs=1e-9)

    def test_size_mismatch(self):
        with pytest.raises(ValueError, match="sizes"):
            log_marginal_likelihood([1.0, 2.0], KernelMatrix(np.eye(3)))


class TestGpPosterior:
    def tree_blocks(self, t, query_nodes, gamma):
        tips = [int(i) for i in t.tips]
        full = patristic_matrix(t, tips + list(query_nodes))
        n = len(tips)
        return full[:n, :n], full[n:, :n], full[n:, n:]

    def test_interpolates_noiseless_training_tip(self):
        t = parse_newick(CHERRY_PLUS_ONE)
        g = GammaVector(sigma_f=1.3, ell=2.0, sigma_n=0.0)
        d = patristic_matrix(t)
        y = np.array([0.4, -1.1, 0.7])
        post = gp_posterior(d, d[:1, :], d[:1, :1], y, g)
        assert post.mean[0] == pytest.approx(y[0], abs=1e-6)
        assert post.variance[0] <= 1e-8

    def test_distant_query_reverts_to_prior(self):
        g = GammaVector(sigma_f=1.7, ell=1.0, sigma_n=0.3)
        train = np.array([[0.0, 1.0], [1.0, 0.0]])
        cross = np.full((1, 2), 1e6)
        post = gp_posterior(train, cross, np.zeros((1, 1)), [2.0, -1.0], g)
        assert post.mean[0] == pytest.approx(0.0, abs=1e-12)
        assert post.variance[0] == pytest.approx(1.7 ** 2, abs=1e-12)

    def test_cherry_root_matches_partition_oracle(self):
        t = parse_newick(CHERRY_PLUS_ONE)
        g = GammaVector(sigma_f=1.0, ell=1.0, sigma_n=0.5)
        train, cross, query = self.tree_blocks(t, [t.root], g)
        y = np.array([0.3, -0.2, 1.4])
        post = gp_posterior(train, cross, query, y, g)

        tips = [int(i) for i in t.tips]
        full_d = patristic_matrix(t, tips + [t.root])
        joint = heritable_covariance(full_d, g)
        joint[:3, :3] += np.eye(3) * g.sigma_n ** 2
        mean, cov = conditional_oracle(joint, y, 3)
        np.testing.assert_allclose(post.mean, mean, atol=1e-10)
        np.testing.assert_allclose(post.covariance, cov, atol=1e-10)

    def test_matches_joint_conditional_on_small_trees(self):
        rng = np.random.default_rng(7)
        for i in range(40):
            n = int(rng.integers(2, 7))
            t = generate_random_tree(n, seed=int(rng.integers(1 << 30)))
            g = random_gamma(rng)
            internals = [int(i) for i in np.flatnonzero(~t.tip_flags)]
            train, cross, query = self.tree_blocks(t, internals, g)
            y = rng.normal(size=n)
            post = gp_posterior(train, cross, query, y, g)

            tips = [int(i) for i in t.tips]
            full_d = patristic_matrix(t, tips + internals)
            joint = heritable_covariance(full_d, g)
            joint[:n, :n] += np.eye(n) * g.sigma_n ** 2
            mean, cov = conditional_oracle(joint, y, n)
            np.testing.assert_allclose(post.mean, mean, atol=1e-10)
            np.testing.assert_allclose(post.covariance, cov, atol=1e-10)

    def test_posterior_covariance_psd_and_bounded_by_prior(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            t = generate_random_tree(12, seed=int(rng.integers(1 << 30)))
            g = random_gamma(rng)
            internals = [int(i) for i in np.flatnonzero(~t.tip_flags)]
            train, cross, query = self.tree_blocks(t, internals, g)
            y = rng.normal(size=t.n_tips)
            post = gp_posterior(train, cross, query, y, g)
            assert np.max(np.abs(post.covariance - post.covariance.T)) < 1e-10
            assert np.min(np.linalg.eigvalsh(post.covariance)) > -1e-10
            prior_var = np.diag(heritable_covariance(query, g))
            assert np.all(post.variance <= prior_var + 1e-10)

    def test_added_observation_never_raises_variance(self):
        rng = np.random.default_rng(23)
        for _ in range(8):
            t = generate_random_tree(10, seed=int(rng.integers(1 << 30)))
            g = random_gamma(rng)
            tips = [int(i) for i in t.tips]
            full = patristic_matrix(t, tips + [t.root])
            y = rng.normal(size=len(tips))
            var = []
            for m in (5, 6, 7, 8, 9, 10):
                train = full[:m, :m]
                cross = full[-1:, :m]
                query = full[-1:, -1:]
                post = gp_posterior(train, cross, query, y[:m], g)
                var.append(post.variance[0])
            assert np.all(np.diff(var) <= 1e-10)

    def test_pure_noise_posterior_is_degenerate_prior(self):
        t = parse_newick(CHERRY_PLUS_ONE)
        g = GammaVector(sigma_f=0.0, ell=None, sigma_n=1.0)
        d = patristic_matrix(t)
        tips = [int(i) for i in t.tips]
        full = patristic_matrix(t, tips + [t.root])
        post = gp_posterior(d, full[-1:, :3], full[-1:, -1:], [1.0, 2.0, 3.0], g)
        assert post.mean[0] == 0.0
        assert post.variance[0] == 0.0

    def test_query_tip_flags_never_add_noise(self):
        t = parse_newick(CHERRY_PLUS_ONE)
        g = GammaVector(sigma_f=1.0, ell=1.0, sigma_n=0.5)
        tips = [int(i) for i in t.tips]
        full = patristic_matrix(t, tips + [t.root])
        args = (full[:3, :3], full[-1:, :3], full[-1:, -1:], [0.1, 0.2, 0.3], g)
        plain = gp_posterior(*args)
        flagged = gp_posterior(*args, query_tip_flags=[True])
        np.testing.assert_array_equal(plain.mean, flagged.mean)
        np.testing.assert_array_equal(plain.covariance, flagged.covariance)

    def test_shape_validation(self):
        g = GammaVector(sigma_f=1.0, ell=1.0, sigma_n=0.5)
        d = np.array([[0.0, 1.0], [1.0, 0.0]])
        with pytest.raises(ValueError, match="cross"):
            gp_posterior(d, np.zeros((1, 3)), np.zeros((1, 1)), [1.0, 2.0], g)
        with pytest.raises(ValueError, match="query distance"):
            gp_posterior(d, np.zeros((2, 2)), np.zeros((1, 1)), [1.0, 2.0], g)
        with pytest.raises(ValueError, match="query_tip_flags"):
            gp_posterior(d, np.zeros((1, 2)), np.zeros((1, 1)), [1.0, 2.0], g,
                         query_tip_flags=[True, False])
