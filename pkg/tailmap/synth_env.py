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
"""Synthetic radio environment.

Ground truth is log-distance path loss, a Gaussian shadowing field with
exponential spatial correlation and Rician small-scale fading whose K-factor
is itself a spatially correlated field. Every draw is a pure function of the
scenario config and its seed.
"""

import dataclasses
import math
from typing import Iterator, NamedTuple, Sequence, Union

from absl import logging
import numpy as np
from scipy import stats
import torch

from tailmap import config as tailmap_config
from tailmap import errors
from tailmap import gp

SeedLike = Union[int, np.random.SeedSequence]

_SPEED_OF_LIGHT = 299_792_458.0
# Above this K the channel is taken as deterministic.
_K_DETERMINISTIC = 1e6
_JITTER_START = 1e-10
_JITTER_MAX = 1e-6


class Location(NamedTuple):
    x: float
    y: float


@dataclasses.dataclass
class MeasurementSet:
    location: Location
    # Linear SNR samples, all positive.
    samples: np.ndarray
    # Index of the location in the evaluation grid.
    loc_id: int = -1

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise errors.DataError('samples must be a nonempty 1-D array')
        if not np.all(self.samples > 0):
            raise errors.DataError(
                f'SNR samples at location {self.loc_id} must be positive')


@dataclasses.dataclass
class GroundTruthField:
    # Large-scale mean SNR per grid point, shadowing included, in dB.
    mean_snr_db: np.ndarray
    # Rician K-factor per grid point, linear.
    k_factor: np.ndarray
    # Shadowing realization per grid point, in dB.
    shadowing_db: np.ndarray

    def __len__(self) -> int:
        return self.mean_snr_db.shape[0]


@dataclasses.dataclass
class GridTestData:
    """Test measurement sets over the whole grid, regenerated on demand.

    The samples of grid point i only depend on the truth at i and its seed,
    so the full test set never has to be held in memory.
    """
    grid: np.ndarray
    truth: GroundTruthField
    site_seeds: Sequence[np.random.SeedSequence]
    n_samples: int

    def __len__(self) -> int:
        return len(self.truth)

    def samples(self, index: int) -> np.ndarray:
        return generate_test_samples(self.truth, index, self.n_samples,
                                     self.site_seeds[index])

    def __getitem__(self, index: int) -> MeasurementSet:
        return MeasurementSet(Location(*self.grid[index]),
                              self.samples(index), loc_id=index)

    def __iter__(self) -> Iterator[MeasurementSet]:
        for i in range(len(self)):
            yield self[i]

    def with_size(self, n_samples: int) -> 'GridTestData':
        return dataclasses.replace(self, n_samples=n_samples)


@dataclasses.dataclass
class Dataset:
    config: tailmap_config.ScenarioConfig
    # (nx * ny, 2) grid coordinates, row-major with x varying fastest.
    grid: np.ndarray
    truth: GroundTruthField
    observed: list[MeasurementSet]
    test: GridTestData

    @property
    def observed_ids(self) -> np.ndarray:
        return np.array([s.loc_id for s in self.observed], dtype=np.int64)


def build_grid(spec: tailmap_config.GridSpec) -> np.ndarray:
    """Builds the evaluation lattice as an (nx * ny, 2) array of (x, y)."""
    if spec.nx < 2 or spec.ny < 2:
        raise ValueError(f'Degenerate grid {spec.nx}x{spec.ny}; nx and ny '
                         'must be at least 2.')
    xs = np.linspace(0.0, spec.width_m, spec.nx)
    ys = np.linspace(0.0, spec.height_m, spec.ny)
    xx, yy = np.meshgrid(xs, ys)
    return np.stack([xx.ravel(), yy.ravel()], axis=-1)


def sample_correlated_field(locations: np.ndarray, variance: float,
                            decorrelation_m: float,
                            seed: SeedLike) -> np.ndarray:
    """Draws a zero-mean Gaussian field with exponential spatial correlation.

    Coincident locations receive identical values.
    """
    if decorrelation_m <= 0:
        raise ValueError(f'decorrelation_m must be positive, got '
                         f'{decorrelation_m}')
    if variance < 0:
        raise ValueError(f'variance must be nonnegative, got {variance}')
    locations = np.asarray(locations, dtype=np.float64).reshape(-1, 2)
    if variance == 0:
        return np.zeros(locations.shape[0])
    unique, inverse = np.unique(locations, axis=0, return_inverse=True)
    spec = gp.CovarianceSpec(tailmap_config.KernelKind.EXPONENTIAL,
                             variance=variance, range_m=decorrelation_m)
    cov = spec.kernel(gp.pairwise_distances(unique, unique))
    factor = gp.cholesky_with_jitter(cov, variance, _JITTER_START, _JITTER_MAX)
    rng = np.random.default_rng(seed)
    z = torch.as_tensor(rng.standard_normal(unique.shape[0]))
    values = (factor @ z).numpy()
    return values[inverse.reshape(-1)]


def distance_3d(location: Sequence[float],
                config: tailmap_config.ScenarioConfig) -> np.ndarray:
    loc = np.asarray(location, dtype=np.float64)
    bs_x, bs_y = config.bs_position
    dh = config.bs_height_m - config.ue_height_m
    return np.sqrt((loc[..., 0] - bs_x)**2 + (loc[..., 1] - bs_y)**2 + dh**2)


def mean_snr_db(location: Sequence[float],
                config: tailmap_config.ScenarioConfig):
    """Large-scale mean SNR without shadowing, in dB.

    Accepts one Location or an (n, 2) array of locations.
    """
    d = distance_3d(location, config)
    pl0 = 20.0 * math.log10(4 * math.pi * config.carrier_freq_hz
                            / _SPEED_OF_LIGHT)
    pathloss = pl0 + 10.0 * config.pathloss_exponent * np.log10(d)
    snr = 10.0 * math.log10(config.tx_power_mw) - pathloss \
        - config.noise_power_dbm
    return float(snr) if np.ndim(snr) == 0 else snr


def draw_snr_samples(mean_snr_linear: float, k_factor: float, n: int,
                     seed: SeedLike) -> np.ndarray:
    """Draws n linear SNR samples under unit-mean Rician power fading."""
    if not mean_snr_linear > 0:
        raise ValueError(f'mean_snr_linear must be positive, got '
                         f'{mean_snr_linear}')
    if n < 1:
        raise ValueError(f'n must be at least 1, got {n}')
    if k_factor >= _K_DETERMINISTIC:
        return np.full(n, float(mean_snr_linear))
    rng = np.random.default_rng(seed)
    los = math.sqrt(k_factor / (k_factor + 1))
    nlos_std = math.sqrt(0.5 / (k_factor + 1))
    scatter = rng.standard_normal((n, 2)) * nlos_std
    power = (los + scatter[:, 0])**2 + scatter[:, 1]**2
    power = np.maximum(power, np.finfo(np.float64).tiny)
    return mean_snr_linear * power


def generate_test_samples(truth: GroundTruthField, index: int, n: int,
                          seed: SeedLike) -> np.ndarray:
    mean_linear = 10.0**(truth.mean_snr_db[index] / 10.0)
    return draw_snr_samples(mean_linear, truth.k_factor[index], n, seed)


def snr_cdf(truth: GroundTruthField, gamma) -> np.ndarray:
    """Exact P(SNR < gamma) at every grid point.

    With unit-mean Rician power X of factor K, 2 (K + 1) X is noncentral
    chi-square with 2 degrees of freedom and noncentrality 2 K.
    """
    mean_linear = 10.0**(truth.mean_snr_db / 10.0)
    gamma = np.broadcast_to(np.asarray(gamma, dtype=np.float64),
                            mean_linear.shape)
    if np.any(gamma < 0):
        raise ValueError('gamma must be nonnegative')
    k = truth.k_factor
    deterministic = k >= _K_DETERMINISTIC
    k_fading = np.where(deterministic, 0.0, k)
    cdf = stats.ncx2.cdf(2 * (k_fading + 1) * gamma / mean_linear, df=2,
                         nc=2 * k_fading)
    return np.where(deterministic, (mean_linear < gamma).astype(np.float64),
                    cdf)


def build_truth(config: tailmap_config.ScenarioConfig, grid: np.ndarray,
                shadow_seed: SeedLike, kfactor_seed: SeedLike
                ) -> GroundTruthField:
    shadowing = sample_correlated_field(grid, config.shadowing_std_db**2,
                                        config.shadowing_decorrelation_m,
                                        shadow_seed)
    k_db = config.kfactor_mean_db + sample_correlated_field(
        grid, config.kfactor_std_db**2, config.kfactor_decorrelation_m,
        kfactor_seed)
    return GroundTruthField(
        mean_snr_db=mean_snr_db(grid, config) + shadowing,
        k_factor=10.0**(k_db / 10.0),
        shadowing_db=shadowing,
    )


def _seed_streams(seed: int) -> dict[str, np.random.SeedSequence]:
    names = ('shadowing', 'kfactor', 'placement', 'observed', 'test')
    return dict(zip(names, np.random.SeedSequence(seed).spawn(len(names))))


def make_test_data(config: tailmap_config.ScenarioConfig, grid: np.ndarray,
                   truth: GroundTruthField) -> GridTestData:
    site_seeds = _seed_streams(config.seed)['test'].spawn(grid.shape[0])
    return GridTestData(grid, truth, site_seeds, config.test_sample_count())


def generate_dataset(config: tailmap_config.ScenarioConfig) -> Dataset:
    """Generates observed measurements, test data and the ground truth."""
    config.validate()
    grid = build_grid(config.grid)
    if config.m_observed > grid.shape[0]:
        raise errors.ConfigError(
            'm_observed', f'{config.m_observed} exceeds the grid size '
            f'{grid.shape[0]}')
    streams = _seed_streams(config.seed)
    truth = build_truth(config, grid, streams['shadowing'], streams['kfactor'])

    placement = np.random.default_rng(streams['placement'])
    ids = np.sort(placement.choice(grid.shape[0], size=config.m_observed,
                                   replace=False))
    site_seeds = streams['observed'].spawn(config.m_observed)
    observed = []
    for loc_id, site_seed in zip(ids, site_seeds):
        samples = generate_test_samples(truth, loc_id, config.n_samples,
                                        site_seed)
        observed.append(MeasurementSet(Location(*grid[loc_id]), samples,
                                       loc_id=int(loc_id)))
    logging.info('Generated %d observed sites x %d samples on a %dx%d grid '
                 '(seed %d)', config.m_observed, config.n_samples,
                 config.grid.nx, config.grid.ny, config.seed)
    return Dataset(config=config, grid=grid, truth=truth, observed=observed,
                   test=make_test_data(config, grid, truth))
