"""
Tests for the naive likelihood: kernel, full density, score, second-order
conditions and the closed-form MLE.
"""

import math

import numpy as np
import pytest
from scipy.stats import norm

from likelihood import (
    ThetaFull,
    hessian_blocks,
    log_density_full,
    log_likelihood_kernel,
    mle_closed_form,
    score,
    second_order_check,
    within_group_ss,
)
from model_core import Linear, derive_seed, generate_panel, make_spec, panel_from_array
from optimizer import finite_diff_gradient


def random_instance(rng, m=None, n=None):
    m = m or int(rng.integers(2, 6))
    n = n or int(rng.integers(1, 30))
    sigma2 = float(rng.uniform(0.2, 5.0))
    spec = make_spec(m, n, sigma2, Linear(float(rng.normal()), float(rng.normal())))
    panel = generate_panel(spec, int(rng.integers(0, 2 ** 63)))
    theta = ThetaFull(np.asarray(spec.mu) + rng.normal(0, 1, n), sigma2 * float(rng.uniform(0.5, 2.0)))
    return panel, theta


class TestKernel:
    def test_zero_data(self):
        panel = panel_from_array([[0.0], [0.0]])
        assert log_likelihood_kernel(ThetaFull([0.0], 1.0), panel) == 0.0

    def test_symmetric_data(self):
        panel = panel_from_array([[1.0], [-1.0]])
        assert log_likelihood_kernel(ThetaFull([0.0], 1.0), panel) == pytest.approx(-1.0)

    def test_two_replicate_form(self):
        # -n ln sigma2 - SS/(2 sigma2)
        panel = panel_from_array([[1.0, 2.0, 0.5], [3.0, -1.0, 0.0]])
        theta = ThetaFull([1.0, 0.0, 0.0], 2.0)
        ss = (0.0 + 4.0 + 0.25) + (4.0 + 1.0 + 0.0)
        expected = -3 * math.log(2.0) - ss / 4.0
        assert log_likelihood_kernel(theta, panel) == pytest.approx(expected, rel=1e-14)

    def test_kernel_vs_normal_logpdf(self):
        rng = np.random.default_rng(1)
        panel, theta = random_instance(rng, m=2, n=2)
        direct = norm.logpdf(panel.values, loc=theta.mu_hat[None, :], scale=math.sqrt(theta.sigma2)).sum()
        mn = panel.m * panel.n
        assert log_likelihood_kernel(theta, panel) == pytest.approx(direct + 0.5 * mn * math.log(2 * math.pi), rel=1e-12)

    def test_rejects_bad_theta(self):
        panel = panel_from_array([[0.0, 1.0], [1.0, 0.0]])
        with pytest.raises(ValueError, match="group means"):
            log_likelihood_kernel(ThetaFull([0.0], 1.0), panel)
        with pytest.raises(ValueError, match="sigma2 must be > 0"):
            log_likelihood_kernel(ThetaFull([0.0, 0.0], 0.0), panel)
        with pytest.raises(ValueError):
            ThetaFull([0.0, 0.0], -1.0)


class TestFullDensity:
    def test_zero_data(self):
        panel = panel_from_array([[0.0], [0.0]])
        assert log_density_full(ThetaFull([0.0], 1.0), panel) == pytest.approx(-math.log(2 * math.pi))

    def test_constant_offset(self):
        rng = np.random.default_rng(2)
        panel, _ = random_instance(rng, m=3, n=5)
        diffs = []
        for _ in range(5):
            theta = ThetaFull(rng.normal(0, 3, 5), float(rng.uniform(0.1, 10)))
            diffs.append(log_likelihood_kernel(theta, panel) - log_density_full(theta, panel))
        assert np.allclose(diffs, diffs[0], rtol=0, atol=1e-10)
        assert diffs[0] == pytest.approx(0.5 * 15 * math.log(2 * math.pi))

    def test_density_product(self):
        rng = np.random.default_rng(3)
        panel, theta = random_instance(rng, m=2, n=3)
        product = np.prod(norm.pdf(panel.values, loc=theta.mu_hat[None, :], scale=math.sqrt(theta.sigma2)))
        assert math.exp(log_density_full(theta, panel)) == pytest.approx(product, rel=1e-10)


class TestScore:
    def test_hand_value(self):
        panel = panel_from_array([[1.0], [3.0]])
        g = score(ThetaFull([0.0], 1.0), panel)
        assert g[0] == pytest.approx(4.0)
        # -(mn/2)/sigma2 + SS/(2 sigma2^2) = -1 + 10/2
        assert g[1] == pytest.approx(4.0)

    def test_zero_at_mle(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            panel, _ = random_instance(rng)
            theta, _ = mle_closed_form(panel)
            g = score(theta, panel)
            assert np.max(np.abs(g)) < 1e-9 * max(1.0, 1.0 / theta.sigma2)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            panel, theta = random_instance(rng, n=int(rng.integers(1, 8)))
            analytic = score(theta, panel)
            numeric = finite_diff_gradient(lambda th: log_likelihood_kernel(th, panel), theta, 1e-6)
            scale = max(1.0, np.max(np.abs(analytic)))
            assert np.max(np.abs(analytic - numeric)) <= 1e-5 * scale


class TestSecondOrder:
    def test_curvature_at_mle(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            panel, _ = random_instance(rng)
            theta, _ = mle_closed_form(panel)
            rep = second_order_check(theta, panel)
            m, n, s2 = panel.m, panel.n, theta.sigma2
            assert rep.d2_mu == pytest.approx(-m / s2, rel=1e-10)
            assert rep.d2_sigma2 == pytest.approx(-m * n / (2 * s2 * s2), rel=1e-10)
            assert rep.cross_max_abs < 1e-10 * max(1.0, np.abs(panel.values).max()) / s2 ** 2
            assert rep.at_stationary_point
            assert rep.is_maximum

    def test_two_replicate_exact(self):
        panel = generate_panel(make_spec(2, 5, 1.0), 17)
        theta, _ = mle_closed_form(panel)
        rep = second_order_check(theta, panel)
        assert rep.d2_mu == -2.0 / theta.sigma2
        assert rep.schur_complement < 0

    def test_matches_numerical_hessian(self):
        panel = generate_panel(make_spec(2, 5, 1.0), 18)
        theta, _ = mle_closed_form(panel)
        rep = second_order_check(theta, panel)
        x0 = theta.to_vector()
        h = 1e-5
        hess = np.zeros((6, 6))
        for i in range(6):
            e = np.zeros(6)
            e[i] = h
            g_plus = score(ThetaFull.from_vector(x0 + e), panel)
            g_minus = score(ThetaFull.from_vector(x0 - e), panel)
            hess[:, i] = (g_plus - g_minus) / (2 * h)
        assert np.allclose(np.diag(hess)[:5], rep.d2_mu, rtol=1e-6)
        assert hess[5, 5] == pytest.approx(rep.d2_sigma2, rel=1e-6)
        assert np.allclose(hess[:5, 5], 0.0, atol=1e-6)
        assert np.all(np.linalg.eigvalsh(0.5 * (hess + hess.T)) < 0)
        assert rep.is_maximum

    def test_flags_non_stationary_theta(self):
        panel = generate_panel(make_spec(2, 5, 1.0), 19)
        theta, _ = mle_closed_form(panel)
        moved = ThetaFull(theta.mu_hat + 0.3, theta.sigma2)
        rep = second_order_check(moved, panel)
        assert not rep.at_stationary_point
        assert rep.cross_max_abs > 1e-8

    def test_hessian_blocks_general_formula(self):
        panel = panel_from_array([[1.0, 2.0], [3.0, 5.0], [2.0, 2.0]])
        theta = ThetaFull([1.0, 2.0], 2.0)
        diag_mu, cross, d2 = hessian_blocks(theta, panel)
        assert np.allclose(diag_mu, -1.5)
        # residual sums: group 1: 0+2+1 = 3, group 2: 0+3+0 = 3
        assert np.allclose(cross, -3.0 / 4.0)
        ss = 0 + 4 + 1 + 0 + 9 + 0
        assert d2 == pytest.approx(3.0 / 4.0 - ss / 8.0)


class TestClosedForm:
    def test_single_group_by_hand(self):
        panel = panel_from_array([[1.0], [3.0]])
        theta, groups = mle_closed_form(panel)
        assert theta.mu_hat[0] == 2.0
        assert groups[0].s2_t == 1.0
        assert theta.sigma2 == 1.0
        assert not theta.degenerate

    def test_degenerate(self):
        panel = panel_from_array([[0.0, 0.0], [0.0, 0.0]])
        theta, groups = mle_closed_form(panel)
        assert theta.sigma2 == 0.0
        assert theta.degenerate
        assert [g.s2_t for g in groups] == [0.0, 0.0]
        with pytest.raises(ValueError):
            log_likelihood_kernel(theta, panel)

    def test_sigma2_is_mean_of_group_variances(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            panel, _ = random_instance(rng)
            theta, groups = mle_closed_form(panel)
            s2_t = np.array([g.s2_t for g in groups])
            assert len(groups) == panel.n
            assert theta.sigma2 == pytest.approx(s2_t.mean(), rel=1e-12)
            assert np.all(s2_t >= 0)
            assert theta.sigma2 == pytest.approx(within_group_ss(panel.values).sum() / (panel.m * panel.n), rel=1e-12)

    def test_no_nearby_point_beats_mle(self):
        rng = np.random.default_rng(8)
        panel = generate_panel(make_spec(2, 50, 1.0), 20)
        theta, _ = mle_closed_form(panel)
        best = log_likelihood_kernel(theta, panel)
        for _ in range(1000):
            mu = theta.mu_hat + rng.normal(0, 0.1, 50)
            s2 = theta.sigma2 * float(np.exp(rng.normal(0, 0.2)))
            assert log_likelihood_kernel(ThetaFull(mu, s2), panel) <= best


class TestSamplingMoments:
    R = 10 ** 4

    def _draws(self, m, n=5, sigma2=1.0, master=11):
        spec = make_spec(m, n, sigma2, Linear(0, 1))
        mu_hat = np.empty((self.R, n))
        s2_hat = np.empty(self.R)
        for r in range(self.R):
            theta, _ = mle_closed_form(generate_panel(spec, derive_seed(master, m, r)))
            mu_hat[r] = theta.mu_hat
            s2_hat[r] = theta.sigma2
        return spec, mu_hat, s2_hat

    def test_group_mean_moments(self):
        spec, mu_hat, _ = self._draws(2)
        err = mu_hat - np.asarray(spec.mu)
        se_mean = np.sqrt(0.5 / self.R)
        assert np.all(np.abs(err.mean(axis=0)) < 5 * se_mean)
        var = err.var(axis=0)
        se_var = 0.5 * np.sqrt(2.0 / self.R)
        assert np.all(np.abs(var - 0.5) < 5 * se_var)

    @pytest.mark.parametrize("m", [2, 3, 5])
    def test_naive_bias_law(self, m):
        _, _, s2_hat = self._draws(m)
        se = s2_hat.std() / np.sqrt(self.R)
        assert abs(s2_hat.mean() - (m - 1) / m) < 5 * se
