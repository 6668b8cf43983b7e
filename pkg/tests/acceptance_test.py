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
"""Desk-preset runs of the whole method, a few minutes in total.

Outage is scored against the fading law of the ground truth, which is what
the empirical score converges to as the test set grows.
"""

import dataclasses
import functools
import os

from absl import logging
from absl.testing import absltest
import numpy as np

from tailmap import allocator
from tailmap import cli
from tailmap import config
from tailmap import errors
from tailmap import evaluation
from tailmap import storage
from tailmap import synth_env

Method = config.Method

_SEEDS = (0, 1, 2)


@functools.lru_cache(maxsize=None)
def _desk_dataset(seed: int, n_samples: int) -> synth_env.Dataset:
    scenario = dataclasses.replace(config.get_config_for_desk(seed),
                                   n_samples=n_samples)
    return synth_env.generate_dataset(scenario)


@functools.lru_cache(maxsize=None)
def _desk_tail_map(seed: int, n_samples: int) -> allocator.RadioMap:
    dataset = _desk_dataset(seed, n_samples)
    request = allocator.AllocationRequest.from_config(dataset.config)
    return allocator.build_tail_maps(dataset.observed, dataset.grid, request)


def _score(dataset, rate_map, zeta):
    report, _ = evaluation.evaluate(rate_map, dataset.test, zeta, exact=True)
    return report.availability, report.mean_rate


class TailDivergenceAcceptanceTest(absltest.TestCase):

    def test_more_samples_tighten_the_tails(self):
        dataset = _desk_dataset(0, 10_000)
        test = dataset.test.with_size(dataset.config.test_sample_count())
        truth = evaluation.fit_truth_tails(test, dataset.config.rho)
        self.assertEqual(truth.n_missing, 0)

        medians, below = {}, {}
        for n_samples in (1_000, 10_000):
            divergences = evaluation.tail_divergence_map(
                _desk_tail_map(0, n_samples), truth=truth)
            medians[n_samples] = np.median(divergences.valid)
            below[n_samples] = np.mean(divergences.d_bh < 0.1)
            logging.info('N=%d: median D_Bh %.4g, %.1f%% below 0.1',
                         n_samples, medians[n_samples],
                         100 * below[n_samples])
        self.assertLess(medians[10_000], medians[1_000])
        self.assertGreaterEqual(below[10_000], 0.95)


class DeskComparisonTest(absltest.TestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.scores = {}
        for seed in _SEEDS:
            dataset = _desk_dataset(seed, 10_000)
            radio_map = _desk_tail_map(seed, 10_000)
            for zeta in (1e-3, 1e-5):
                request = allocator.AllocationRequest.from_config(
                    dataset.config, zeta=zeta)
                rate_map = allocator.allocate_rates_evt(radio_map, request)
                cls.scores['evt', zeta, seed] = _score(dataset, rate_map,
                                                       zeta)
            rate_map = allocator.allocate_rates_benchmark(
                dataset.observed, dataset.grid, 1e-3, dataset.config.delta)
            cls.scores['benchmark', 1e-3, seed] = _score(dataset, rate_map,
                                                         1e-3)
        for key, (avail, rate) in sorted(cls.scores.items()):
            logging.info('%s: availability %.2f%%, mean rate %.4f', key,
                         avail, rate)

    def _seed_mean(self, method, zeta, index):
        return np.mean([self.scores[method, zeta, seed][index]
                        for seed in _SEEDS])

    def test_evt_availability(self):
        evt_availability = self._seed_mean('evt', 1e-3, 0)
        self.assertGreaterEqual(evt_availability,
                                self._seed_mean('benchmark', 1e-3, 0))
        self.assertGreaterEqual(evt_availability, 95.0)

    def test_evt_mean_rate(self):
        self.assertGreater(self._seed_mean('evt', 1e-3, 1),
                           self._seed_mean('benchmark', 1e-3, 1))

    def test_low_target_needs_the_tail_model(self):
        for seed in _SEEDS:
            dataset = _desk_dataset(seed, 10_000)
            with self.assertRaises(errors.InfeasibleError) as ctx:
                allocator.allocate_rates_benchmark(
                    dataset.observed, dataset.grid, 1e-5, dataset.config.delta)
            self.assertEqual(ctx.exception.exit_code, errors.EXIT_INFEASIBLE)
        self.assertGreaterEqual(self._seed_mean('evt', 1e-5, 0), 90.0)


class SampleSizeSweepTest(absltest.TestCase):

    def test_availability_and_rate_trend(self):
        table, summary = cli.cmd_sweep(
            config.get_config_for_desk(), zetas=(1e-3,),
            n_samples=(1_000, 10_000, 100_000), seeds=_SEEDS,
            out_dir=self.create_tempdir().full_path, methods=(Method.EVT,),
            exact=True)
        self.assertTrue((table['status'] == 'ok').all())
        summary = summary.sort_values('n_samples')
        logging.info('Sweep summary:\n%s', summary)
        availability = summary['availability'].to_numpy()
        rate = summary['mean_rate'].to_numpy()
        self.assertTrue(np.all(np.diff(availability) >= 0))
        self.assertGreaterEqual(rate[0], rate[1])
        self.assertLessEqual(abs(rate[2] - rate[1]), 0.05 * rate[1])


class DeskDeterminismTest(absltest.TestCase):

    def test_dataset_hash(self):
        again = synth_env.generate_dataset(config.get_config_for_desk(0))
        self.assertEqual(storage.dataset_hash(again),
                         storage.dataset_hash(_desk_dataset(0, 10_000)))
        other = synth_env.generate_dataset(config.get_config_for_desk(1))
        self.assertNotEqual(storage.dataset_hash(other),
                            storage.dataset_hash(again))

    def _run_pipeline(self, root):
        dirs = {name: os.path.join(root, name)
                for name in ('data', 'maps', 'rates', 'eval')}
        cli.cmd_generate(config.get_config_for_desk(0), dirs['data'])
        cli.cmd_fit_maps(dirs['data'], dirs['maps'])
        cli.cmd_allocate(dirs['rates'], Method.EVT, maps_dir=dirs['maps'],
                         dataset_dir=dirs['data'])
        cli.cmd_allocate(dirs['rates'], Method.BENCHMARK,
                         dataset_dir=dirs['data'])
        for method in Method:
            cli.cmd_evaluate(dirs['eval'], dirs['data'], dirs['rates'],
                             method, exact=True)
        return dirs

    def test_pipeline_csvs_are_byte_identical(self):
        first = self._run_pipeline(self.create_tempdir().full_path)
        second = self._run_pipeline(self.create_tempdir().full_path)
        n_compared = 0
        for name, directory in first.items():
            csvs = sorted(f for f in os.listdir(directory)
                          if f.endswith('.csv'))
            self.assertCountEqual(
                csvs, [f for f in os.listdir(second[name])
                       if f.endswith('.csv')])
            for csv in csvs:
                with open(os.path.join(directory, csv), 'rb') as f:
                    expected = f.read()
                with open(os.path.join(second[name], csv), 'rb') as f:
                    self.assertEqual(f.read(), expected, csv)
                n_compared += 1
        self.assertGreaterEqual(n_compared, 10)


if __name__ == '__main__':
    absltest.main()
