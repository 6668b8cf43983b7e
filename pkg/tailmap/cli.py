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
"""Subcommands of the batch front end.

Every subcommand reads its inputs from directories written by an earlier one,
writes its artifacts plus a manifest.json to its output directory, and
checks the dataset hash recorded upstream against the data it consumes.
"""

import contextlib
import dataclasses
import os
import time
from typing import Any, Optional, Sequence

from absl import logging
import numpy as np
import pandas as pd

from tailmap import allocator
from tailmap import config as tailmap_config
from tailmap import errors
from tailmap import evaluation
from tailmap import storage
from tailmap import synth_env

Method = tailmap_config.Method

MANIFEST_FILE = 'manifest.json'
RUN_REPORT_FILE = 'run_report.json'
COMPARE_FILE = 'compare.json'
DBH_FILE = 'dbh.csv'
SWEEP_FILE = 'sweep.csv'
SWEEP_SUMMARY_FILE = 'sweep_summary.csv'


def eval_file(method: Method) -> str:
    return f'eval_{method.value}.json'


def outage_file(method: Method) -> str:
    return f'outage_{method.value}.csv'


@dataclasses.dataclass
class RunManifest:
    subcommand: str
    config_path: str = ''
    seed: Optional[int] = None
    inputs: dict[str, str] = dataclasses.field(default_factory=dict)
    outputs: list[str] = dataclasses.field(default_factory=list)
    dataset_hash: str = ''
    # Wall-clock seconds per stage.
    timings: dict[str, float] = dataclasses.field(default_factory=dict)

    @contextlib.contextmanager
    def stage(self, name: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = time.perf_counter() - start
            logging.info('%s: %s took %.2f s', self.subcommand, name,
                         self.timings[name])

    def add_outputs(self, paths: Sequence[str]):
        self.outputs.extend(os.path.basename(p) for p in paths)

    def write(self, out_dir: str) -> str:
        path = os.path.join(out_dir, MANIFEST_FILE)
        self.add_outputs([path])
        storage.write_json(path, dataclasses.asdict(self))
        return path


def _recorded_hash(directory: str) -> Optional[str]:
    path = os.path.join(directory, MANIFEST_FILE)
    if not os.path.exists(path):
        return None
    return storage.read_json(path).get('dataset_hash') or None


def _check_hash(expected: Optional[str], actual: str, what: str):
    if expected is not None and expected != actual:
        raise errors.IntegrityError(
            f'{what} was produced from dataset {expected[:12]}, but the '
            f'dataset given hashes to {actual[:12]}')


def load_verified_dataset(dataset_dir: str
                          ) -> tuple[synth_env.Dataset, str]:
    """Loads a dataset and checks it against its generation manifest."""
    dataset = storage.load_dataset(dataset_dir)
    digest = storage.dataset_hash(dataset)
    _check_hash(_recorded_hash(dataset_dir), digest, dataset_dir)
    return dataset, digest


def cmd_generate(config: tailmap_config.ScenarioConfig, out_dir: str,
                 config_path: str = '') -> RunManifest:
    config.validate()
    manifest = RunManifest('generate', config_path=config_path,
                           seed=config.seed)
    with manifest.stage('generate'):
        dataset = synth_env.generate_dataset(config)
    with manifest.stage('write'):
        manifest.add_outputs(storage.write_dataset(dataset, out_dir))
        manifest.dataset_hash = storage.dataset_hash(dataset)
    manifest.write(out_dir)
    logging.info('Dataset %s written to %s', manifest.dataset_hash[:12],
                 out_dir)
    return manifest


def cmd_fit_maps(dataset_dir: str, out_dir: str,
                 rho: Optional[float] = None,
                 tau: Optional[float] = None) -> RunManifest:
    manifest = RunManifest('fit-maps', inputs={'dataset': dataset_dir})
    with manifest.stage('load'):
        dataset, digest = load_verified_dataset(dataset_dir)
    manifest.seed = dataset.config.seed
    manifest.dataset_hash = digest
    request = allocator.AllocationRequest.from_config(dataset.config, rho=rho,
                                                      tau=tau)
    with manifest.stage('fit'):
        radio_map = allocator.build_tail_maps(dataset.observed, dataset.grid,
                                              request)
    with manifest.stage('write'):
        manifest.add_outputs(storage.write_radio_map(radio_map, out_dir,
                                                     digest))
    manifest.write(out_dir)
    return manifest


def _update_run_report(out_dir: str, method: Method, entry: dict[str, Any]
                       ) -> str:
    path = os.path.join(out_dir, RUN_REPORT_FILE)
    report = storage.read_json(path) if os.path.exists(path) else {}
    report[method.value] = entry
    storage.write_json(path, report)
    return path


def cmd_allocate(out_dir: str, method: Method,
                 zeta: Optional[float] = None,
                 tau: Optional[float] = None,
                 maps_dir: Optional[str] = None,
                 dataset_dir: Optional[str] = None,
                 delta: Optional[float] = None) -> RunManifest:
    """Allocates rates with the EVT maps or the quantile benchmark.

    EVT needs maps_dir; the benchmark needs dataset_dir. Either may be given
    alongside to cross-check dataset hashes.
    """
    manifest = RunManifest(f'allocate-{method.value}')
    dataset, digest, fit_report, radio_map = None, None, None, None
    with manifest.stage('load'):
        if dataset_dir is not None:
            manifest.inputs['dataset'] = dataset_dir
            dataset, digest = load_verified_dataset(dataset_dir)
        if maps_dir is not None:
            manifest.inputs['maps'] = maps_dir
            radio_map, fit_report = storage.load_radio_map(maps_dir, tau)
            _check_hash(fit_report['dataset_hash'],
                        digest or fit_report['dataset_hash'], maps_dir)
            digest = fit_report['dataset_hash']
    scenario = dataset.config if dataset is not None else \
        tailmap_config.ScenarioConfig()
    manifest.seed = dataset.config.seed if dataset is not None else None
    manifest.dataset_hash = digest or ''

    entry: dict[str, Any] = {'dataset_hash': manifest.dataset_hash}
    if method == Method.EVT:
        if radio_map is None:
            raise errors.ConfigError('maps_dir',
                                     'EVT allocation needs fitted maps')
        request = allocator.AllocationRequest.from_config(
            scenario, zeta=zeta, rho=radio_map.rho,
            tau=radio_map.tau if tau is None else tau)
        with manifest.stage('allocate'):
            rate_map = allocator.allocate_rates_evt(radio_map, request)
        entry.update(request=request.to_dict(),
                     excluded_sites=list(radio_map.excluded),
                     sigma_clamped=radio_map.sigma_clamped)
    else:
        if dataset is None:
            raise errors.ConfigError('dataset_dir',
                                     'benchmark allocation needs the dataset')
        zeta = scenario.zeta if zeta is None else zeta
        delta = scenario.delta if delta is None else delta
        with manifest.stage('allocate'):
            rate_map = allocator.allocate_rates_benchmark(
                dataset.observed, dataset.grid, zeta, delta)
        entry.update(request={'zeta': zeta, 'delta': delta,
                              'kernel': 'exponential'},
                     excluded_sites=[], sigma_clamped=0)

    os.makedirs(out_dir, exist_ok=True)
    rates_path = os.path.join(out_dir, storage.rates_file(method))
    storage.write_rate_map(rate_map, rates_path)
    entry.update(mean_rate=rate_map.mean_rate, n_locations=len(rate_map),
                 timings=dict(manifest.timings))
    manifest.add_outputs([rates_path,
                          _update_run_report(out_dir, method, entry)])
    manifest.write(out_dir)
    logging.info('%s rates at zeta=%g: mean %.4f bps/Hz', method.value,
                 rate_map.zeta, rate_map.mean_rate)
    return manifest


def cmd_evaluate(out_dir: str, dataset_dir: str, rates_dir: str,
                 method: Method, zeta: Optional[float] = None,
                 maps_dir: Optional[str] = None,
                 exact: bool = False) -> RunManifest:
    """Scores a rate map.

    With maps_dir it also writes the test-fitted tail of every grid point and
    its divergence from the kriged tail. exact scores outage against the
    fading law instead of regenerated test samples.
    """
    manifest = RunManifest(f'evaluate-{method.value}',
                           inputs={'dataset': dataset_dir, 'rates': rates_dir})
    with manifest.stage('load'):
        dataset, digest = load_verified_dataset(dataset_dir)
        run_report = storage.read_json(
            os.path.join(rates_dir, RUN_REPORT_FILE))
        if method.value not in run_report:
            raise errors.DataError(f'No {method.value} rates in {rates_dir}')
        entry = run_report[method.value]
        _check_hash(entry['dataset_hash'], digest, rates_dir)
        zeta = entry['request']['zeta'] if zeta is None else zeta
        rate_map = storage.load_rate_map(
            os.path.join(rates_dir, storage.rates_file(method)), method, zeta)
    manifest.seed = dataset.config.seed
    manifest.dataset_hash = digest
    test = dataset.test.with_size(dataset.config.test_sample_count(zeta))

    os.makedirs(out_dir, exist_ok=True)
    divergences = None
    if maps_dir is not None:
        manifest.inputs['maps'] = maps_dir
        radio_map, fit_report = storage.load_radio_map(maps_dir)
        _check_hash(fit_report['dataset_hash'], digest, maps_dir)
        with manifest.stage('divergence'):
            divergences = evaluation.tail_divergence_map(radio_map, test)
        dbh_path = os.path.join(out_dir, DBH_FILE)
        storage.write_table(dbh_path, {
            'loc_id': np.arange(len(divergences.d_bh)),
            'd_bh': divergences.d_bh,
        })
        truth_path = os.path.join(out_dir, storage.TRUTH_TAILS_FILE)
        storage.write_truth_tails(divergences.truth, truth_path)
        manifest.add_outputs([dbh_path, truth_path])

    with manifest.stage('score'):
        report, outages = evaluation.evaluate(
            rate_map, test, zeta, divergences=divergences,
            dataset_hash=digest, request=entry['request'], exact=exact)
    eval_path = os.path.join(out_dir, eval_file(method))
    storage.write_json(eval_path, report.to_dict())
    outage_path = os.path.join(out_dir, outage_file(method))
    storage.write_table(outage_path, {
        'loc_id': np.arange(len(outages)),
        'x_m': rate_map.grid[:, 0],
        'y_m': rate_map.grid[:, 1],
        'gamma_tar': outages.gamma_tar,
        'empirical_outage': outages.empirical_outage,
        'met': outages.met,
    })
    manifest.add_outputs([eval_path, outage_path])
    manifest.write(out_dir)
    return manifest


def cmd_compare(eval_dir: str, out_dir: str,
                rates_dir: Optional[str] = None) -> RunManifest:
    manifest = RunManifest('compare', inputs={'eval': eval_dir})
    reports = {
        m: evaluation.EvalReport.from_dict(
            storage.read_json(os.path.join(eval_dir, eval_file(m))))
        for m in Method
    }
    rates = {m: None for m in Method}
    if rates_dir is not None:
        manifest.inputs['rates'] = rates_dir
        for m in Method:
            frame = storage.read_table(
                os.path.join(rates_dir, storage.rates_file(m)),
                ('rate_bpshz',))
            rates[m] = frame['rate_bpshz'].to_numpy(np.float64)
    summary = evaluation.compare_report(
        reports[Method.EVT], reports[Method.BENCHMARK],
        rates[Method.EVT], rates[Method.BENCHMARK])
    manifest.dataset_hash = summary.dataset_hash
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, COMPARE_FILE)
    storage.write_json(path, summary.to_dict())
    manifest.add_outputs([path])
    manifest.write(out_dir)
    logging.info('EVT vs benchmark: %+.1f%% mean rate, %+.2f points '
                 'availability', summary.rate_gain_percent,
                 summary.availability_diff)
    return manifest


def _sweep_cell(dataset: synth_env.Dataset,
                radio_map: Optional[allocator.RadioMap], method: Method,
                zeta: float, map_error: str = '',
                exact: bool = False) -> tuple[float, float]:
    config = dataset.config
    if method == Method.EVT:
        if radio_map is None:
            raise errors.DataError(f'Tail maps failed: {map_error}')
        request = allocator.AllocationRequest.from_config(config, zeta=zeta)
        rate_map = allocator.allocate_rates_evt(radio_map, request)
    else:
        rate_map = allocator.allocate_rates_benchmark(
            dataset.observed, dataset.grid, zeta, config.delta)
    if exact:
        outages = evaluation.score_outage_exact(dataset.truth, rate_map, zeta)
    else:
        test = dataset.test.with_size(config.test_sample_count(zeta))
        outages = evaluation.score_outage(test, rate_map, zeta)
    return evaluation.availability(outages, zeta), rate_map.mean_rate


def cmd_sweep(config: tailmap_config.ScenarioConfig, zetas: Sequence[float],
              n_samples: Sequence[int], seeds: Sequence[int], out_dir: str,
              methods: Sequence[Method] = tuple(Method),
              exact: bool = False) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Availability and mean rate over the (zeta, N, seed, method) grid.

    A failing cell is recorded with its error and the sweep continues.
    """
    if not (zetas and n_samples and seeds and methods):
        raise errors.ConfigError('sweep', 'zeta, N and seed lists must be '
                                 'nonempty')
    manifest = RunManifest('sweep', seed=seeds[0])
    rows = []
    for n in n_samples:
        for seed in seeds:
            scenario = dataclasses.replace(config, n_samples=n, seed=seed)
            with manifest.stage(f'n={n},seed={seed}'):
                dataset = synth_env.generate_dataset(scenario)
                radio_map, map_error = None, ''
                if Method.EVT in methods:
                    try:
                        radio_map = allocator.build_tail_maps(
                            dataset.observed, dataset.grid,
                            allocator.AllocationRequest.from_config(scenario))
                    except errors.TailmapError as e:
                        map_error = str(e)
                        logging.warning('Tail maps failed (N=%d, seed=%d): %s',
                                        n, seed, e)
                for zeta in zetas:
                    for method in methods:
                        row = dict(zeta=zeta, n_samples=n, seed=seed,
                                   method=method.value, availability=np.nan,
                                   mean_rate=np.nan, status='ok', error='')
                        try:
                            row['availability'], row['mean_rate'] = \
                                _sweep_cell(dataset, radio_map, method, zeta,
                                            map_error, exact)
                        except errors.TailmapError as e:
                            row['status'] = type(e).__name__
                            row['error'] = str(e)
                            logging.warning('Sweep cell %s failed: %s', row, e)
                        rows.append(row)
    table = pd.DataFrame(rows)
    ok = table[table['status'] == 'ok']
    summary = (ok.groupby(['zeta', 'n_samples', 'method'], as_index=False)
               .agg(availability=('availability', 'mean'),
                    mean_rate=('mean_rate', 'mean'),
                    n_seeds=('seed', 'count')))
    os.makedirs(out_dir, exist_ok=True)
    sweep_path = os.path.join(out_dir, SWEEP_FILE)
    summary_path = os.path.join(out_dir, SWEEP_SUMMARY_FILE)
    storage.write_table(sweep_path, table)
    storage.write_table(summary_path, summary)
    manifest.add_outputs([sweep_path, summary_path])
    manifest.write(out_dir)
    return table, summary
