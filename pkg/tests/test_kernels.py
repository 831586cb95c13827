import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from magmap import Dataset, Hyperparameters, ParameterError
from magmap.kernels import (
    component_nll,
    curlfree_gram,
    dense_gp_fit_predict,
    k_const,
    k_curlfree,
    k_lin,
    k_ou,
    k_se,
    potential_field_gram,
    potential_nll,
    se_gram,
    shared_loglik,
)

from .helpers import (
    SYMPY_CURL,
    cube_grid,
    curl_from_jacobian,
    fd_jacobian,
    mp_cross_hessian,
    random_dataset,
)


class TestScalarKernels:
    def test_se_values(self):
        x = np.array([0.1, 0.2, 0.3])
        assert k_se(x, x, 2.5, 0.1) == 2.5
        assert k_se([0, 0, 0], [0.1, 0, 0], 1.0, 0.1) == pytest.approx(0.60653066, abs=1e-8)
        d = [k_se([0, 0, 0], [r, 0, 0], 1.0, 0.1) for r in np.linspace(0, 2, 50)]
        assert np.all(np.diff(d) <= 0) and d[-1] < 1e-80

    def test_parameter_errors(self):
        with pytest.raises(ParameterError):
            k_se([0, 0, 0], [1, 0, 0], 1.0, 0.0)
        with pytest.raises(ParameterError):
            k_curlfree([0, 0, 0], [1, 0, 0], -1.0, 0.1)
        with pytest.raises(ParameterError):
            k_ou(0, 1, -3)

    def test_const_lin_ou(self):
        assert k_const([1, 2, 3], [4, 5, 6], 0.3) == 0.3
        assert k_lin([1, 2, 3], [4, 5, 6], 2.0) == 64.0
        assert k_ou(3.0, 1.0, 2.0) == pytest.approx(math.exp(-1.0))
        assert k_ou(1.0, 3.0, 2.0) == k_ou(3.0, 1.0, 2.0)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(2, 50), st.integers(0, 10**6))
    def test_se_gram_psd(self, n, seed):
        X = np.random.default_rng(seed).uniform(-1, 1, (n, 3))
        K = se_gram(X, X, 1.3, 0.4)
        np.testing.assert_allclose(K, K.T)
        jitter = 1e-10 * np.trace(K) / n
        assert np.linalg.eigvalsh(K + jitter * np.eye(n)).min() > -1e-12


class TestCurlFree:
    def test_at_zero_distance(self):
        np.testing.assert_allclose(k_curlfree([1, 2, 3], [1, 2, 3], 2.0, 0.5), 8.0 * np.eye(3))

    def test_transpose_symmetry(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            a, b = rng.normal(size=(2, 3))
            np.testing.assert_allclose(k_curlfree(a, b, 1.0, 0.7), k_curlfree(b, a, 1.0, 0.7).T)

    def test_matches_fd_hessian_of_se(self):
        rng = np.random.default_rng(0)
        ell, s2 = 0.1, 1.0
        for _ in range(25):
            x, x2 = rng.uniform(-0.2, 0.2, (2, 3))
            H = mp_cross_hessian(x, x2, s2, ell, 1e-5 * ell)
            K = k_curlfree(x, x2, s2, ell)
            np.testing.assert_allclose(H, K, rtol=1e-6, atol=1e-6 * np.abs(K).max())

    def test_matches_symbolic_hessian(self):
        rng = np.random.default_rng(1)
        X1, X2 = rng.uniform(-1, 1, (4, 3)), rng.uniform(-1, 1, (5, 3))
        np.testing.assert_allclose(curlfree_gram(X1, X2, 1.7, 0.6), SYMPY_CURL(X1, X2, 1.7, 0.6), rtol=1e-12, atol=1e-14)

    def test_gram_block_layout(self):
        rng = np.random.default_rng(2)
        X1, X2 = rng.normal(size=(3, 3)), rng.normal(size=(2, 3))
        G = curlfree_gram(X1, X2, 1.0, 0.9)
        np.testing.assert_allclose(G[3:6, 3:6], k_curlfree(X1[1], X2[1], 1.0, 0.9))

    @settings(max_examples=20, deadline=None)
    @given(st.integers(1, 20), st.integers(0, 10**6))
    def test_gram_psd(self, n, seed):
        X = np.random.default_rng(seed).uniform(-0.5, 0.5, (n, 3))
        K = curlfree_gram(X, X, 1.0, 0.2)
        np.testing.assert_allclose(K, K.T, atol=1e-12)
        jitter = 1e-10 * np.trace(K) / (3 * n)
        assert np.linalg.eigvalsh(K + jitter * np.eye(3 * n)).min() > -1e-9 * np.trace(K)


class TestDenseSolver:
    @pytest.mark.parametrize("model", ["independent", "shared", "potential"])
    def test_no_data_gives_prior(self, model, sim_theta):
        Xs = np.random.default_rng(0).uniform(-0.3, 0.3, (5, 3))
        pred = dense_gp_fit_predict(model, Dataset.empty(), sim_theta, Xs)
        np.testing.assert_array_equal(pred.mean, 0.0)
        if model == "potential":
            prior = (sim_theta.sigma2_lin + sim_theta.field_magnitude) * np.eye(3)
        else:
            prior = (sim_theta.sigma2_lin + sim_theta.sigma2_se) * np.eye(3)
        np.testing.assert_allclose(pred.covariance, np.broadcast_to(prior, (5, 3, 3)))

    @pytest.mark.parametrize("model", ["independent", "shared", "potential"])
    def test_interpolation_limit(self, model):
        th = Hyperparameters(0.3, 1.0, 0.1, 1e-10)
        data = Dataset(np.array([[0.1, -0.2, 0.05]]), np.array([[3.0, -1.0, 2.0]]))
        pred = dense_gp_fit_predict(model, data, th, data.x)
        np.testing.assert_allclose(pred.mean[0], data.y[0], rtol=1e-6)

    def test_potential_mean_is_curl_free(self, sim_theta):
        data = random_dataset(60, seed=4, half_width=0.3)
        f = lambda P: dense_gp_fit_predict("potential", data, sim_theta, P).mean
        X = cube_grid(0.25, 5)
        curl = curl_from_jacobian(fd_jacobian(f, X, h=1e-6))
        scale = np.linalg.norm(f(X), axis=1).max()
        assert np.linalg.norm(curl, axis=1).max() < 1e-6 * scale

    def test_translation_invariance(self, sim_theta):
        data = random_dataset(40, seed=5, half_width=0.3)
        Xs = np.random.default_rng(6).uniform(-0.3, 0.3, (10, 3))
        shift = np.array([12.0, -7.5, 3.25])
        a = dense_gp_fit_predict("potential", data, sim_theta, Xs).mean
        moved = Dataset(data.x + shift, data.y)
        b = dense_gp_fit_predict("potential", moved, sim_theta, Xs + shift).mean
        np.testing.assert_allclose(a, b, rtol=1e-8, atol=1e-8 * np.abs(a).max())

    def test_symbolic_route_agrees(self, sim_theta):
        data = random_dataset(50, seed=7, half_width=0.3)
        Xs = np.random.default_rng(8).uniform(-0.3, 0.3, (20, 3))
        a = dense_gp_fit_predict("potential", data, sim_theta, Xs)
        b = dense_gp_fit_predict("potential", data, sim_theta, Xs, curl=SYMPY_CURL)
        np.testing.assert_allclose(a.mean, b.mean, rtol=1e-8, atol=1e-8 * np.abs(a.mean).max())
        np.testing.assert_allclose(a.covariance, b.covariance, rtol=1e-8, atol=1e-10)

    def test_observation_cap(self, sim_theta):
        data = random_dataset(700)
        with pytest.raises(ValueError, match="capped"):
            dense_gp_fit_predict("potential", data, sim_theta, np.zeros((1, 3)))

    def test_independent_uses_per_component_theta(self):
        data = random_dataset(30, seed=9)
        ths = [Hyperparameters(0.3, s, 0.2, 0.1) for s in (1.0, 4.0, 9.0)]
        pred = dense_gp_fit_predict("independent", data, ths, data.x[:3])
        for d, th in enumerate(ths):
            single = dense_gp_fit_predict("shared", data, th, data.x[:3])
            np.testing.assert_allclose(pred.mean[:, d], single.mean[:, d])

    def test_covariance_psd(self, sim_theta):
        data = random_dataset(40, seed=10, half_width=0.3)
        pred = dense_gp_fit_predict("potential", data, sim_theta, cube_grid(0.3, 4))
        for C in pred.covariance:
            assert np.linalg.eigvalsh(C).min() >= -1e-9 * np.trace(C)


class TestLikelihoods:
    def test_shared_single_zero_sample(self, sim_theta):
        data = Dataset(np.zeros((1, 3)), np.zeros((1, 3)))
        k0 = sim_theta.sigma2_lin + sim_theta.sigma2_se
        expected = 1.5 * math.log(k0 + sim_theta.sigma2_noise) + 1.5 * math.log(2 * math.pi)
        assert shared_loglik(data, sim_theta) == pytest.approx(expected, rel=1e-12)

    def test_shared_equals_sum_of_components(self, sim_theta):
        data = random_dataset(40, seed=11)
        total = sum(component_nll(data.x, data.y[:, d], sim_theta) for d in range(3))
        assert shared_loglik(data, sim_theta) == pytest.approx(total, rel=1e-10)

    def test_shared_permutation_invariant(self, sim_theta):
        data = random_dataset(40, seed=12)
        perm = np.random.default_rng(0).permutation(40)
        assert shared_loglik(data[perm], sim_theta) == pytest.approx(shared_loglik(data, sim_theta), rel=1e-10)

    def test_potential_nll_matches_explicit_gaussian(self, sim_theta):
        data = random_dataset(15, seed=13)
        K = potential_field_gram(data.x, data.x, sim_theta) + sim_theta.sigma2_noise * np.eye(45)
        y = data.y.reshape(-1)
        sign, logdet = np.linalg.slogdet(K)
        expected = 0.5 * logdet + 0.5 * y @ np.linalg.solve(K, y) + 22.5 * math.log(2 * math.pi)
        assert potential_nll(data, sim_theta) == pytest.approx(expected, rel=1e-10)
