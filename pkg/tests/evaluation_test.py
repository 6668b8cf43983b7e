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

from tailmap import allocator
from tailmap import config
from tailmap import errors
from tailmap import evaluation
from tailmap import evt
from tailmap import synth_env


def _scenario(n_samples=2000, n_test=2000, m_observed=20, seed=31):
    return config.ScenarioConfig(
        grid=config.GridSpec(width_m=40.0, height_m=40.0, nx=6, ny=6),
        m_observed=m_observed, n_samples=n_samples, n_test_samples=n_test,
        seed=seed)


def _report(method='evt', mean_rate=1.0, availability=90.0, digest='abc'):
    return evaluation.EvalReport(method=method, zeta=1e-3,
                                 availability=availability,
                                 mean_rate=mean_rate, rate_ecdf=[(1.0, 1.0)],
                                 dataset_hash=digest)


class EmpiricalOutageTest(parameterized.TestCase):

    def test_all_above_target(self):
        row = evaluation.empirical_outage([2.0, 3.0, 4.0], rate=1.0)
        self.assertAlmostEqual(row.gamma_tar, 1.0, places=15)
        self.assertEqual(row.empirical_outage, 0.0)

    def test_zero_rate(self):
        row = evaluation.empirical_outage([1e-9, 0.5], rate=0.0)
        self.assertEqual(row.gamma_tar, 0.0)
        self.assertEqual(row.empirical_outage, 0.0)

    def test_half_below(self):
        row = evaluation.empirical_outage([0.5, 0.9, 3.0, 4.0], rate=1.0)
        self.assertEqual(row.empirical_outage, 0.5)

    def test_strict_inequality(self):
        gamma_tar = float(evaluation.target_snr(1.0))
        row = evaluation.empirical_outage([gamma_tar, gamma_tar, 5.0],
                                          rate=1.0)
        self.assertEqual(row.empirical_outage, 0.0)

    def test_monotone_in_rate(self):
        samples = np.random.default_rng(0).exponential(size=1000)
        outages = [evaluation.empirical_outage(samples, r).empirical_outage
                   for r in np.linspace(0, 3, 30)]
        self.assertTrue(np.all(np.diff(outages) >= 0))

    def test_empty(self):
        with self.assertRaises(errors.DataError):
            evaluation.empirical_outage([], rate=1.0)


class AvailabilityTest(parameterized.TestCase):

    @parameterized.parameters(
        ([1e-4, 2e-3], 50.0),
        ([0.0, 1e-3, 5e-4], 100.0),
        ([0.1, 0.2], 0.0),
    )
    def test_examples(self, outages, expected):
        self.assertEqual(evaluation.availability(outages, 1e-3), expected)

    def test_monotone_in_zeta(self):
        outages = np.random.default_rng(1).uniform(0, 1e-2, 500)
        values = [evaluation.availability(outages, z)
                  for z in (1e-4, 1e-3, 5e-3, 1e-2)]
        self.assertTrue(np.all(np.diff(values) >= 0))
        self.assertEqual(values[-1], 100.0)


class EcdfTest(absltest.TestCase):

    def test_distinct(self):
        steps = evaluation.ecdf([3.0, 1.0, 2.0])
        self.assertEqual([v for v, _ in steps], [1.0, 2.0, 3.0])
        np.testing.assert_allclose([f for _, f in steps], [1 / 3, 2 / 3, 1])
        self.assertEqual(steps[-1][1], 1.0)

    def test_singleton(self):
        self.assertEqual(evaluation.ecdf([5.0]), [(5.0, 1.0)])

    def test_ties(self):
        steps = evaluation.ecdf([1.0, 1.0, 2.0])
        self.assertLen(steps, 2)
        self.assertAlmostEqual(steps[0][1], 2 / 3)
        self.assertEqual(steps[1], (2.0, 1.0))

    def test_empty(self):
        with self.assertRaises(errors.DataError):
            evaluation.ecdf([])


class ScoreOutageTest(absltest.TestCase):

    def test_scores_every_grid_point(self):
        dataset = synth_env.generate_dataset(_scenario(n_test=500))
        test = dataset.test
        rate = np.zeros(len(test))
        rate[0] = evt.rate_from_phi(-np.log(np.median(test.samples(0))))
        rate_map = allocator.RateMap(grid=dataset.grid,
                                     phi=np.zeros(len(test)), rate=rate,
                                     method=config.Method.EVT, zeta=1e-3)
        outages = evaluation.score_outage(test, rate_map, 1e-3)
        self.assertLen(outages, len(test))
        self.assertAlmostEqual(outages.empirical_outage[0], 0.5, delta=0.01)
        np.testing.assert_array_equal(outages.empirical_outage[1:], 0.0)
        self.assertFalse(outages.met[0])
        self.assertEqual(outages.n_test, 500)

        report, _ = evaluation.evaluate(rate_map, test, dataset_hash='h')
        self.assertAlmostEqual(report.availability,
                               100.0 * (len(test) - 1) / len(test))
        self.assertEqual(report.n_locations, len(test))
        self.assertEqual(evaluation.EvalReport.from_dict(report.to_dict()),
                         report)

    def test_length_mismatch(self):
        dataset = synth_env.generate_dataset(_scenario(n_test=100))
        rate_map = allocator.RateMap(grid=np.zeros((3, 2)), phi=np.zeros(3),
                                     rate=np.zeros(3),
                                     method=config.Method.EVT, zeta=1e-3)
        with self.assertRaises(errors.DataError):
            evaluation.score_outage(dataset.test, rate_map, 1e-3)


class TailDivergenceTest(absltest.TestCase):

    def test_identity_and_nonnegativity(self):
        dataset = synth_env.generate_dataset(_scenario(n_test=5000))
        test = dataset.test
        fits = [evt.fit_tail(test.samples(i), 0.99) for i in range(len(test))]
        n = len(test)
        exact = allocator.RadioMap(
            grid=dataset.grid, xi_hat=np.array([f.xi for f in fits]),
            sigma_hat=np.array([f.sigma for f in fits]),
            mu_mean=np.zeros(n), mu_var=np.zeros(n), mu_tau=np.zeros(n),
            rho=0.99, tau=1e-3, posteriors={})
        divergences = evaluation.tail_divergence_map(exact, test)
        self.assertEqual(divergences.n_missing, 0)
        np.testing.assert_allclose(divergences.d_bh, 0.0, atol=1e-8)

        exact.sigma_hat = exact.sigma_hat * 1.5
        shifted = evaluation.tail_divergence_map(exact, test)
        self.assertTrue(np.all(shifted.valid >= 0))
        self.assertGreater(np.median(shifted.valid), 1e-3)

    def test_missing_entries_counted(self):
        dataset = synth_env.generate_dataset(_scenario(n_test=50))
        n = len(dataset.test)
        radio_map = allocator.RadioMap(
            grid=dataset.grid, xi_hat=np.zeros(n), sigma_hat=np.ones(n),
            mu_mean=np.zeros(n), mu_var=np.zeros(n), mu_tau=np.zeros(n),
            rho=0.99, tau=1e-3, posteriors={})
        divergences = evaluation.tail_divergence_map(radio_map, dataset.test)
        self.assertEqual(divergences.n_missing, n)
        self.assertEqual(divergences.valid.size, 0)

    def test_more_samples_tighten_the_tail(self):
        request = allocator.AllocationRequest(zeta=1e-3, rho=0.99, tau=1e-3)
        medians = []
        for n_samples in (1000, 10_000):
            dataset = synth_env.generate_dataset(
                _scenario(n_samples=n_samples, n_test=20_000))
            radio_map = allocator.build_tail_maps(dataset.observed,
                                                  dataset.grid, request)
            divergences = evaluation.tail_divergence_map(radio_map,
                                                         dataset.test)
            medians.append(np.median(divergences.valid))
        self.assertLess(medians[1], medians[0])


class CompareReportTest(absltest.TestCase):

    def test_self_comparison(self):
        summary = evaluation.compare_report(_report(), _report('benchmark'),
                                            np.ones(4), np.ones(4))
        self.assertEqual(summary.rate_gain_percent, 0.0)
        self.assertEqual(summary.availability_diff, 0.0)
        self.assertEqual(summary.win_fraction, 0.0)

    def test_reported_gain(self):
        summary = evaluation.compare_report(
            _report(mean_rate=1.281, availability=99.0),
            _report('benchmark', mean_rate=1.0, availability=97.5))
        self.assertAlmostEqual(summary.rate_gain_percent, 28.1, places=9)
        self.assertAlmostEqual(summary.availability_diff, 1.5, places=9)
        self.assertIsNone(summary.win_fraction)

    def test_hash_mismatch(self):
        with self.assertRaises(errors.IntegrityError) as ctx:
            evaluation.compare_report(_report(digest='a'),
                                      _report('benchmark', digest='b'))
        self.assertEqual(ctx.exception.exit_code, errors.EXIT_INTEGRITY)

    def test_win_fraction(self):
        summary = evaluation.compare_report(
            _report(), _report('benchmark'), np.array([2.0, 1.0, 0.5, 3.0]),
            np.array([1.0, 1.0, 1.0, 1.0]))
        self.assertEqual(summary.win_fraction, 0.5)
        self.assertTrue(math.isfinite(summary.rate_gain_percent))


if __name__ == '__main__':
    absltest.main()
