# Copyright 2025 The tailmap Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

import math

from absl.testing import absltest
from absl.testing import parameterized
import numpy as np
from scipy import stats

from tailmap import errors
from tailmap import evt

# rho=0.99, xi=0.1, sigma=0.5, mu=2 puts the 1e-3 outage at this phi.
_FIT = evt.TailFit(mu=2.0, xi=0.1, sigma=0.5, rho=0.99, n_exceed=1000)
_PHI_AT_1E3 = 3.294627


def _gpd_draws(xi, sigma, n, seed):
    return stats.genpareto(c=xi, scale=sigma).rvs(
        size=n, random_state=np.random.default_rng(seed))


class TransformTest(absltest.TestCase):

    def test_mirror_transform(self):
        self.assertEqual(evt.mirror_transform(1.0), 0.0)
        self.assertAlmostEqual(evt.mirror_transform(math.e), -1.0, places=15)
        gamma = np.random.default_rng(0).uniform(1e-6, 1e6, 100)
        np.testing.assert_allclose(np.exp(-evt.mirror_transform(gamma)), gamma,
                                   rtol=1e-12)

    def test_mirror_transform_rejects_nonpositive(self):
        with self.assertRaises(errors.DataError):
            evt.mirror_transform(np.array([1.0, 0.0]))


class ThresholdTest(parameterized.TestCase):

    @parameterized.parameters((0.99, 99.0, 1), (0.9, 90.0, 10))
    def test_dumouchel(self, rho, expected, n_exceed):
        samples = np.random.default_rng(1).permutation(np.arange(1.0, 101.0))
        mu = evt.dumouchel_threshold(samples, rho)
        self.assertEqual(mu, expected)
        self.assertLen(evt.excesses(samples, mu), n_exceed)

    def test_exceedance_count(self):
        samples = np.random.default_rng(2).standard_normal(100_000)
        mu = evt.dumouchel_threshold(samples, 0.99)
        self.assertLen(evt.excesses(samples, mu), 1000)

    def test_constant_samples(self):
        with self.assertRaises(errors.DataError):
            evt.dumouchel_threshold(np.full(500, 2.0), 0.99)

    def test_too_few_samples(self):
        with self.assertRaises(errors.DataError):
            evt.dumouchel_threshold(np.arange(99.0), 0.99)

    def test_excesses(self):
        np.testing.assert_array_equal(evt.excesses([1, 2, 3], 2), [1])
        np.testing.assert_array_equal(evt.excesses([3, 1, 2], 0.5),
                                      [2.5, 0.5, 1.5])
        with self.assertRaises(errors.DataError):
            evt.excesses([1, 2], 5)


class GpdTest(parameterized.TestCase):

    def test_cdf_values(self):
        self.assertEqual(evt.gpd_cdf(0.0, 0.3, 1.0), 0.0)
        self.assertAlmostEqual(evt.gpd_cdf(1.0, 1.0, 1.0), 0.5, places=15)
        self.assertAlmostEqual(evt.gpd_cdf(2.0, 1e-12, 2.0), 1 - math.exp(-1),
                               delta=1e-6)

    def test_cdf_beyond_endpoint(self):
        self.assertEqual(evt.gpd_cdf(2.0, -0.5, 1.0), 1.0)
        self.assertEqual(evt.gpd_cdf(5.0, -0.5, 1.0), 1.0)

    def test_cdf_continuous_at_zero_shape(self):
        z = np.linspace(0, 20, 201)
        at_zero = evt.gpd_cdf(z, 0.0, 1.5)
        for xi in (1e-9, -1e-9):
            np.testing.assert_allclose(evt.gpd_cdf(z, xi, 1.5), at_zero,
                                       atol=1e-6)
        self.assertTrue(np.all(np.diff(at_zero) >= 0))

    def test_cdf_matches_scipy(self):
        z = np.linspace(0, 3, 31)
        for xi in (-0.3, 0.2, 0.8):
            np.testing.assert_allclose(
                evt.gpd_cdf(z, xi, 0.7),
                stats.genpareto(c=xi, scale=0.7).cdf(z), atol=1e-12)

    def test_logpdf_matches_scipy(self):
        z = np.linspace(0, 2, 21)
        np.testing.assert_allclose(
            evt.gpd_logpdf(z, -0.2, 0.9),
            stats.genpareto(c=-0.2, scale=0.9).logpdf(z), rtol=1e-12,
            atol=1e-12)
        self.assertEqual(evt.gpd_logpdf(10.0, -0.2, 0.9), -np.inf)

    def test_pwm_estimate(self):
        xi, sigma = evt.pwm_estimate(_gpd_draws(0.2, 1.0, 50_000, seed=3))
        self.assertAlmostEqual(xi, 0.2, delta=0.05)
        self.assertAlmostEqual(sigma, 1.0, delta=0.05)


class FitTest(parameterized.TestCase):

    @parameterized.product(xi=(-0.2, 0.0, 0.3), sigma=(0.5, 2.0))
    def test_mle_recovery(self, xi, sigma):
        z = _gpd_draws(xi, sigma, 10_000, seed=11)
        xi_hat, sigma_hat, loglik = evt.fit_gpd_mle(z)
        self.assertLess(abs(xi_hat - xi), 0.05)
        self.assertLess(abs(sigma_hat / sigma - 1), 0.05)
        self.assertAlmostEqual(loglik, evt.gpd_loglik(z, xi_hat, sigma_hat))

    @parameterized.parameters((0.0, 2.0), (0.3, 1.0), (-0.2, 0.5))
    def test_mle_beats_grid_search(self, xi, sigma):
        z = _gpd_draws(xi, sigma, 10_000, seed=5)
        _, _, loglik = evt.fit_gpd_mle(z)
        best = -np.inf
        for xi_grid in np.linspace(-0.5, 1.0, 101):
            for log_sigma in np.linspace(math.log(0.1), math.log(10.0), 101):
                best = max(best, evt.gpd_loglik(z, xi_grid,
                                                math.exp(log_sigma)))
        self.assertGreaterEqual(loglik, best - 1e-6)

    def test_mle_consistency(self):
        errors_by_n = []
        for n in (100, 1000, 10_000):
            abs_errors = []
            for seed in range(15):
                xi_hat, _, _ = evt.fit_gpd_mle(_gpd_draws(0.1, 1.0, n, seed))
                abs_errors.append(abs(xi_hat - 0.1))
            errors_by_n.append(np.median(abs_errors))
        self.assertGreater(errors_by_n[0], errors_by_n[1])
        self.assertGreater(errors_by_n[1], errors_by_n[2])

    def test_mle_respects_support(self):
        z = _gpd_draws(-0.4, 1.0, 2000, seed=8)
        xi_hat, sigma_hat, loglik = evt.fit_gpd_mle(z)
        self.assertTrue(np.all(1 + xi_hat * z / sigma_hat > 0))
        self.assertTrue(math.isfinite(loglik))

    def test_mle_permutation_invariant(self):
        z = _gpd_draws(0.1, 1.0, 500, seed=4)
        shuffled = np.random.default_rng(0).permutation(z)
        self.assertEqual(evt.fit_gpd_mle(z), evt.fit_gpd_mle(shuffled))

    def test_mle_degenerate(self):
        with self.assertRaises(errors.DataError):
            evt.fit_gpd_mle([1.0])
        with self.assertRaises(errors.DataError):
            evt.fit_gpd_mle([2.0, 2.0, 2.0])

    def test_fit_tail(self):
        rng = np.random.default_rng(6)
        samples = rng.exponential(1.0, 100_000)
        fit = evt.fit_tail(samples, 0.99)
        self.assertEqual(fit.n_exceed, 1000)
        self.assertEqual(fit.rho, 0.99)
        self.assertGreater(fit.sigma, 0)
        # The -ln of an exponential variable has a Gumbel-type upper tail.
        self.assertAlmostEqual(fit.xi, 0.0, delta=0.15)


class OutageTest(parameterized.TestCase):

    def test_outage_at_threshold(self):
        self.assertEqual(evt.tail_outage(_FIT.mu, _FIT), 1 - _FIT.rho)

    def test_outage_value(self):
        self.assertAlmostEqual(evt.tail_outage(_PHI_AT_1E3, _FIT), 1e-3,
                               delta=1e-8)

    def test_outage_decreasing(self):
        phis = np.linspace(2.0, 10.0, 50)
        outages = [evt.tail_outage(p, _FIT) for p in phis]
        self.assertTrue(np.all(np.diff(outages) < 0))

    def test_outage_below_threshold(self):
        with self.assertRaises(errors.OutsideTailError):
            evt.tail_outage(1.5, _FIT)

    def test_inverse_values(self):
        self.assertAlmostEqual(evt.invert_tail_outage(0.01, _FIT), _FIT.mu,
                               places=12)
        self.assertAlmostEqual(evt.invert_tail_outage(1e-3, _FIT), _PHI_AT_1E3,
                               delta=1e-6)

    def test_inverse_exponential_limit(self):
        fit = evt.TailFit(mu=1.0, xi=1e-10, sigma=2.0, rho=0.99)
        self.assertAlmostEqual(evt.invert_tail_outage(1e-4, fit),
                               2.0 * math.log(0.01 / 1e-4) + 1.0, places=12)

    def test_inverse_round_trip(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            rho = rng.uniform(0.9, 0.999)
            fit = evt.TailFit(mu=rng.uniform(-5, 5), xi=rng.uniform(-0.5, 1.0),
                              sigma=rng.uniform(0.1, 5.0), rho=rho)
            zeta = (1 - rho) * 10**(-rng.uniform(0, 3))
            phi = evt.invert_tail_outage(zeta, fit)
            self.assertAlmostEqual(evt.tail_outage(phi, fit) / zeta, 1.0,
                                   delta=1e-10)

    def test_inverse_rejects_targets(self):
        with self.assertRaises(errors.TargetAboveTailError):
            evt.invert_tail_outage(0.02, _FIT)
        with self.assertRaises(errors.InfeasibleError):
            evt.invert_tail_outage(0.5, _FIT)
        with self.assertRaises(ValueError):
            evt.invert_tail_outage(0.0, _FIT)

    def test_vectorized_forms(self):
        xi = np.array([0.1, 0.0, -0.3])
        sigma = np.array([0.5, 1.0, 2.0])
        mu = np.array([2.0, 0.0, -1.0])
        phi = evt.outage_inverse(1e-4, 0.99, xi, sigma, mu)
        np.testing.assert_allclose(
            evt.outage_probability(phi, 0.99, xi, sigma, mu), 1e-4, rtol=1e-10)

    def test_rate_from_phi(self):
        self.assertEqual(evt.rate_from_phi(0.0), 1.0)
        self.assertGreater(evt.rate_from_phi(700.0), 0.0)
        self.assertLess(evt.rate_from_phi(50.0), 1e-20)
        self.assertAlmostEqual(evt.rate_from_phi(_PHI_AT_1E3), 0.05251,
                               delta=5e-5)
        rates = evt.rate_from_phi(np.linspace(-5, 5, 11))
        self.assertTrue(np.all(np.diff(rates) < 0))


class BhattacharyyaTest(absltest.TestCase):

    def test_identical_fits(self):
        for fit in (evt.TailFit(0.0, 0.2, 1.0, 0.99),
                    evt.TailFit(0.0, -0.3, 0.5, 0.99),
                    evt.TailFit(0.0, 0.0, 2.0, 0.99)):
            self.assertAlmostEqual(evt.bhattacharyya_gpd(fit, fit), 0.0,
                                   delta=1e-8)

    def test_exponential_closed_form(self):
        d = evt.bhattacharyya_gpd(evt.TailFit(0.0, 0.0, 1.0, 0.99),
                                  evt.TailFit(0.0, 0.0, 0.25, 0.99))
        self.assertAlmostEqual(d, -math.log(0.8), delta=1e-7)
        self.assertAlmostEqual(d, 0.22314, delta=1e-5)

    def test_symmetry(self):
        f = evt.TailFit(0.0, 0.3, 1.2, 0.99)
        g = evt.TailFit(0.0, -0.2, 0.6, 0.99)
        self.assertAlmostEqual(evt.bhattacharyya_gpd(f, g),
                               evt.bhattacharyya_gpd(g, f), delta=1e-8)
        self.assertGreater(evt.bhattacharyya_gpd(f, g), 0.0)


if __name__ == '__main__':
    absltest.main()
