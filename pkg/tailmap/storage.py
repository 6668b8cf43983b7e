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
"""Datasets and artifacts on disk.

Tables are UTF-8 CSV with a header row and floats in full double precision.
JSON is pretty-printed with sorted keys. Test data are never written: they
are regenerated from the ground truth and the scenario seed.
"""

import hashlib
import json
import os
from typing import Any, Mapping, Optional, Sequence

from absl import logging
import numpy as np
import pandas as pd

from tailmap import allocator
from tailmap import config as tailmap_config
from tailmap import errors
from tailmap import evaluation
from tailmap import evt
from tailmap import gp
from tailmap import synth_env

MapParameter = tailmap_config.MapParameter

CONFIG_FILE = 'config.json'
GRID_FILE = 'grid.csv'
MEASUREMENTS_FILE = 'measurements.csv'
SIDECAR_FILE = 'measurements.bin'
SIDECAR_INDEX_FILE = 'measurements_index.csv'
TAILFITS_FILE = 'tailfits.csv'
HYPERPARAMS_FILE = 'hyperparams.json'
FIT_REPORT_FILE = 'fit_report.json'
TRUTH_TAILS_FILE = 'truth_tails.csv'
# Above this many samples, measurements go to the binary sidecar.
SIDECAR_THRESHOLD = 10_000_000
_FLOAT_FORMAT = '%.17g'
_SIDECAR_DTYPE = np.dtype('<f8')


def map_file(param: MapParameter) -> str:
    return f'map_{param.value}.csv'


def rates_file(method: tailmap_config.Method) -> str:
    return f'rates_{method.value}.csv'


def write_json(path: str, payload: Any):
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write('\n')


def read_json(path: str) -> Any:
    try:
        with open(path, encoding='utf-8') as f:
            return json.load(f)
    except FileNotFoundError as e:
        raise errors.DataError(f'Missing file {path}') from e
    except json.JSONDecodeError as e:
        raise errors.DataError(f'Malformed JSON in {path}: {e}') from e


def write_table(path: str, columns: Mapping[str, Any]):
    pd.DataFrame(dict(columns)).to_csv(path, index=False,
                                       float_format=_FLOAT_FORMAT,
                                       encoding='utf-8')


def read_table(path: str, required: Sequence[str] = ()) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, encoding='utf-8',
                            float_precision='round_trip')
    except FileNotFoundError as e:
        raise errors.DataError(f'Missing file {path}') from e
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise errors.DataError(f'{path} lacks columns {missing}')
    return frame


def dataset_hash(dataset: synth_env.Dataset) -> str:
    """SHA-256 over the config, grid, ground truth and observed samples."""
    digest = hashlib.sha256()
    digest.update(json.dumps(dataset.config.to_dict(),
                             sort_keys=True).encode('utf-8'))
    for array in (dataset.grid, dataset.truth.mean_snr_db,
                  dataset.truth.k_factor, dataset.truth.shadowing_db):
        digest.update(np.ascontiguousarray(array, dtype=_SIDECAR_DTYPE)
                      .tobytes())
    digest.update(dataset.observed_ids.astype('<i8').tobytes())
    for site in dataset.observed:
        digest.update(np.ascontiguousarray(site.samples, dtype=_SIDECAR_DTYPE)
                      .tobytes())
    return digest.hexdigest()


def _write_measurements(dataset: synth_env.Dataset, out_dir: str
                        ) -> list[str]:
    total = sum(site.samples.size for site in dataset.observed)
    if total > SIDECAR_THRESHOLD:
        counts = np.array([s.samples.size for s in dataset.observed])
        offsets = np.concatenate([[0], np.cumsum(counts)[:-1]])
        index_path = os.path.join(out_dir, SIDECAR_INDEX_FILE)
        write_table(index_path, {
            'loc_id': dataset.observed_ids,
            'x_m': [s.location.x for s in dataset.observed],
            'y_m': [s.location.y for s in dataset.observed],
            'offset': offsets,
            'count': counts,
        })
        bin_path = os.path.join(out_dir, SIDECAR_FILE)
        with open(bin_path, 'wb') as f:
            for site in dataset.observed:
                f.write(site.samples.astype(_SIDECAR_DTYPE).tobytes())
        logging.info('Wrote %d samples to the binary sidecar %s', total,
                     bin_path)
        return [index_path, bin_path]

    path = os.path.join(out_dir, MEASUREMENTS_FILE)
    n = [s.samples.size for s in dataset.observed]
    write_table(path, {
        'loc_id': np.repeat(dataset.observed_ids, n),
        'x_m': np.repeat([s.location.x for s in dataset.observed], n),
        'y_m': np.repeat([s.location.y for s in dataset.observed], n),
        'sample_idx': np.concatenate([np.arange(k) for k in n]),
        'snr_linear': np.concatenate([s.samples for s in dataset.observed]),
    })
    return [path]


def write_dataset(dataset: synth_env.Dataset, out_dir: str) -> list[str]:
    """Writes config, grid with ground truth, and observed measurements."""
    os.makedirs(out_dir, exist_ok=True)
    config_path = os.path.join(out_dir, CONFIG_FILE)
    write_json(config_path, dataset.config.to_dict())
    grid_path = os.path.join(out_dir, GRID_FILE)
    write_table(grid_path, {
        'loc_id': np.arange(dataset.grid.shape[0]),
        'x_m': dataset.grid[:, 0],
        'y_m': dataset.grid[:, 1],
        'mean_snr_db': dataset.truth.mean_snr_db,
        'k_factor': dataset.truth.k_factor,
        'shadowing_db': dataset.truth.shadowing_db,
    })
    return [config_path, grid_path] + _write_measurements(dataset, out_dir)


def _read_sites(frame: pd.DataFrame, samples: list[np.ndarray]
                ) -> list[synth_env.MeasurementSet]:
    return [
        synth_env.MeasurementSet(synth_env.Location(float(x), float(y)), s,
                                 loc_id=int(loc_id))
        for loc_id, x, y, s in zip(frame['loc_id'], frame['x_m'],
                                   frame['y_m'], samples)
    ]


def _load_measurements(data_dir: str) -> list[synth_env.MeasurementSet]:
    index_path = os.path.join(data_dir, SIDECAR_INDEX_FILE)
    if os.path.exists(index_path):
        index = read_table(index_path,
                           ('loc_id', 'x_m', 'y_m', 'offset', 'count'))
        flat = np.fromfile(os.path.join(data_dir, SIDECAR_FILE),
                           dtype=_SIDECAR_DTYPE)
        if flat.size != int(index['count'].sum()):
            raise errors.DataError(f'Sidecar holds {flat.size} samples, index '
                                   f'expects {int(index["count"].sum())}')
        samples = [flat[o:o + c].astype(np.float64)
                   for o, c in zip(index['offset'], index['count'])]
        return _read_sites(index, samples)

    frame = read_table(os.path.join(data_dir, MEASUREMENTS_FILE),
                       ('loc_id', 'x_m', 'y_m', 'sample_idx', 'snr_linear'))
    frame = frame.sort_values(['loc_id', 'sample_idx'], kind='stable')
    groups = frame.groupby('loc_id', sort=True)
    firsts = groups.first().reset_index()
    samples = [g['snr_linear'].to_numpy(np.float64) for _, g in groups]
    return _read_sites(firsts, samples)


def load_dataset(data_dir: str) -> synth_env.Dataset:
    config = tailmap_config.ScenarioConfig.from_dict(
        read_json(os.path.join(data_dir, CONFIG_FILE)))
    grid = synth_env.build_grid(config.grid)
    table = read_table(os.path.join(data_dir, GRID_FILE),
                       ('loc_id', 'x_m', 'y_m', 'mean_snr_db', 'k_factor',
                        'shadowing_db'))
    if len(table) != grid.shape[0] or not np.array_equal(
            table[['x_m', 'y_m']].to_numpy(np.float64), grid):
        raise errors.DataError(f'{GRID_FILE} does not match the configured '
                               'grid')
    truth = synth_env.GroundTruthField(
        mean_snr_db=table['mean_snr_db'].to_numpy(np.float64),
        k_factor=table['k_factor'].to_numpy(np.float64),
        shadowing_db=table['shadowing_db'].to_numpy(np.float64),
    )
    observed = _load_measurements(data_dir)
    return synth_env.Dataset(
        config=config, grid=grid, truth=truth, observed=observed,
        test=synth_env.make_test_data(config, grid, truth))


def write_radio_map(radio_map: allocator.RadioMap, out_dir: str,
                    dataset_digest: str) -> list[str]:
    """Writes tailfits.csv, the three map CSVs, hyperparams and the report."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    fits_path = os.path.join(out_dir, TAILFITS_FILE)
    loc_ids = sorted(radio_map.site_fits)
    fits = [radio_map.site_fits[i] for i in loc_ids]
    write_table(fits_path, {
        'loc_id': loc_ids,
        'mu': [f.mu for f in fits],
        'xi': [f.xi for f in fits],
        'sigma': [f.sigma for f in fits],
        'rho': [f.rho for f in fits],
        'n_exceed': [f.n_exceed for f in fits],
    })
    paths.append(fits_path)
    for param, posterior in radio_map.posteriors.items():
        path = os.path.join(out_dir, map_file(param))
        write_table(path, {
            'loc_id': np.arange(len(radio_map)),
            'x_m': posterior.targets[:, 0],
            'y_m': posterior.targets[:, 1],
            'mean': posterior.mean,
            'var': posterior.var,
        })
        paths.append(path)
    hyper_path = os.path.join(out_dir, HYPERPARAMS_FILE)
    write_json(hyper_path, radio_map.hyperparams)
    report_path = os.path.join(out_dir, FIT_REPORT_FILE)
    write_json(report_path, {
        'dataset_hash': dataset_digest,
        'rho': radio_map.rho,
        'tau': radio_map.tau,
        'n_sites': radio_map.n_sites,
        'n_retained': len(radio_map.site_fits),
        'excluded_sites': list(radio_map.excluded),
        'sigma_clamped': radio_map.sigma_clamped,
    })
    return paths + [hyper_path, report_path]


def load_radio_map(maps_dir: str, tau: Optional[float] = None
                   ) -> tuple[allocator.RadioMap, dict[str, Any]]:
    """Rebuilds a RadioMap from its files; returns it with the fit report."""
    report = read_json(os.path.join(maps_dir, FIT_REPORT_FILE))
    hyper = read_json(os.path.join(maps_dir, HYPERPARAMS_FILE))
    posteriors = {}
    for param in MapParameter:
        frame = read_table(os.path.join(maps_dir, map_file(param)),
                           ('loc_id', 'x_m', 'y_m', 'mean', 'var'))
        posteriors[param] = gp.GpPosterior(
            targets=frame[['x_m', 'y_m']].to_numpy(np.float64),
            mean=frame['mean'].to_numpy(np.float64),
            var=frame['var'].to_numpy(np.float64),
            stats=gp.NormalizationStats(0.0, 1.0),
            spec=gp.CovarianceSpec.from_dict(hyper[param.value]),
            normalized=False)
    fits = read_table(os.path.join(maps_dir, TAILFITS_FILE),
                      ('loc_id', 'mu', 'xi', 'sigma', 'rho', 'n_exceed'))
    site_fits = {
        int(row.loc_id): evt.TailFit(float(row.mu), float(row.xi),
                                     float(row.sigma), float(row.rho),
                                     int(row.n_exceed))
        for row in fits.itertuples(index=False)
    }
    radio_map = allocator.RadioMap.from_posteriors(
        posteriors, report['rho'], report['tau'] if tau is None else tau,
        site_fits=site_fits, excluded=list(report['excluded_sites']))
    return radio_map, report


def write_rate_map(rate_map: allocator.RateMap, path: str):
    columns = {
        'loc_id': np.arange(len(rate_map)),
        'x_m': rate_map.grid[:, 0],
        'y_m': rate_map.grid[:, 1],
        'phi_or_theta': rate_map.phi_or_theta,
        'rate_bpshz': rate_map.rate,
    }
    if rate_map.theta is not None:
        columns['phi'] = rate_map.phi
    write_table(path, columns)


def _phi_from_rate(rate: np.ndarray) -> np.ndarray:
    """-ln(2^rate - 1), finite even where the rate underflowed to 0."""
    gamma = np.expm1(rate * np.log(2))
    return -np.log(np.maximum(gamma, np.finfo(np.float64).tiny))


def load_rate_map(path: str, method: tailmap_config.Method, zeta: float
                  ) -> allocator.RateMap:
    frame = read_table(path, ('loc_id', 'x_m', 'y_m', 'phi_or_theta',
                              'rate_bpshz'))
    rate = frame['rate_bpshz'].to_numpy(np.float64)
    column = frame['phi_or_theta'].to_numpy(np.float64)
    if method == tailmap_config.Method.EVT:
        phi, theta = column, None
    elif 'phi' in frame.columns:
        phi, theta = frame['phi'].to_numpy(np.float64), column
    else:
        phi, theta = _phi_from_rate(rate), column
    return allocator.RateMap(grid=frame[['x_m', 'y_m']].to_numpy(np.float64),
                             phi=phi, rate=rate, method=method, zeta=zeta,
                             theta=theta)


def write_truth_tails(truth: evaluation.TruthTails, path: str):
    """Writes the test-fitted (mu, xi, sigma) at every grid point."""
    write_table(path, {
        'loc_id': np.arange(len(truth)),
        'x_m': truth.grid[:, 0],
        'y_m': truth.grid[:, 1],
        'mu': truth.mu,
        'xi': truth.xi,
        'sigma': truth.sigma,
        'rho': np.full(len(truth), truth.rho),
        'n_test': np.full(len(truth), truth.n_test, dtype=np.int64),
    })


def load_truth_tails(path: str) -> evaluation.TruthTails:
    frame = read_table(path, ('loc_id', 'x_m', 'y_m', 'mu', 'xi', 'sigma',
                              'rho', 'n_test'))
    if frame.empty:
        raise errors.DataError(f'{path} has no rows')
    return evaluation.TruthTails(
        grid=frame[['x_m', 'y_m']].to_numpy(np.float64),
        mu=frame['mu'].to_numpy(np.float64),
        xi=frame['xi'].to_numpy(np.float64),
        sigma=frame['sigma'].to_numpy(np.float64),
        rho=float(frame['rho'].iloc[0]),
        n_test=int(frame['n_test'].iloc[0]))
