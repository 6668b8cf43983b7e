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

"""Scenario config."""

import dataclasses
import enum
import math
import typing
from typing import Any, Mapping, Optional, Union

from tailmap import errors

# Thermal noise density at 290 K, in dBm/Hz.
THERMAL_NOISE_DBM_HZ = -173.8


class KernelKind(enum.Enum):
    EXPONENTIAL = 'exponential'
    MATERN = 'matern'


class MapParameter(enum.Enum):
    MU = 'mu'
    XI = 'xi'
    SIGMA = 'sigma'


class Method(enum.Enum):
    EVT = 'evt'
    BENCHMARK = 'benchmark'


@dataclasses.dataclass(frozen=True)
class GridSpec:
    # The extent of the coverage area along x, in meters.
    width_m: float = 100.0
    # The extent of the coverage area along y, in meters.
    height_m: float = 100.0
    # The number of grid points along x.
    nx: int = 120
    # The number of grid points along y.
    ny: int = 120

    @property
    def size(self) -> int:
        return self.nx * self.ny

    @property
    def spacing_x(self) -> float:
        return self.width_m / (self.nx - 1)

    @property
    def spacing_y(self) -> float:
        return self.height_m / (self.ny - 1)

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width_m, self.height_m)


@dataclasses.dataclass
class ScenarioConfig:
    # The evaluation lattice covering the service area.
    grid: GridSpec = dataclasses.field(default_factory=GridSpec)
    # The number of observed locations (M).
    m_observed: int = 500
    # The number of SNR samples per observed location (N).
    n_samples: int = 100_000
    # The number of test samples per grid point. None picks max(1e5, 100/zeta)
    # at scoring time.
    n_test_samples: Optional[int] = None
    # The BS transmit power, in mW.
    tx_power_mw: float = 1.0
    # The receiver bandwidth, in Hz.
    bandwidth_hz: float = 100e3
    # The receiver noise figure, in dB.
    noise_figure_db: float = 7.0
    # The carrier frequency, in Hz.
    carrier_freq_hz: float = 1.5e9
    # The BS antenna height, in meters.
    bs_height_m: float = 10.0
    # The UE antenna height, in meters.
    ue_height_m: float = 1.5
    # The BS position in the plane. None places it at the centre of the area.
    bs_x_m: Optional[float] = None
    bs_y_m: Optional[float] = None
    # The log-distance path loss exponent.
    pathloss_exponent: float = 2.1
    # The standard deviation of the shadowing field, in dB.
    shadowing_std_db: float = 4.0
    # The decorrelation distance of the shadowing field, in meters.
    shadowing_decorrelation_m: float = 10.0
    # The mean of the Rician K-factor field, in dB. Around 0 dB the 1%
    # SNR quantile sits where the fading CDF is still linear in the SNR.
    kfactor_mean_db: float = 0.0
    # The standard deviation of the Rician K-factor field, in dB.
    kfactor_std_db: float = 2.0
    # The decorrelation distance of the K-factor field, in meters.
    kfactor_decorrelation_m: float = 15.0
    # The tail fraction parameter used by the DuMouchel threshold.
    rho: float = 0.99
    # The target outage probability.
    zeta: float = 1e-3
    # The confidence level of the threshold margin.
    tau: float = 1e-3
    # The meta-probability of the quantile benchmark.
    delta: float = 1e-3
    # The master seed of every random draw in the scenario.
    seed: int = 0

    @property
    def noise_power_dbm(self) -> float:
        return (THERMAL_NOISE_DBM_HZ + 10.0 * math.log10(self.bandwidth_hz)
                + self.noise_figure_db)

    @property
    def bs_position(self) -> tuple[float, float]:
        x = self.grid.width_m / 2 if self.bs_x_m is None else self.bs_x_m
        y = self.grid.height_m / 2 if self.bs_y_m is None else self.bs_y_m
        return x, y

    def test_sample_count(self, zeta: Optional[float] = None) -> int:
        """Gets the test-set size that resolves outage at level zeta."""
        if self.n_test_samples is not None:
            return self.n_test_samples
        zeta = self.zeta if zeta is None else zeta
        return max(100_000, math.ceil(100 / zeta))

    def validate(self) -> 'ScenarioConfig':
        """Checks field ranges, raising ConfigError on the first violation."""
        grid = self.grid
        if grid.nx < 2 or grid.ny < 2:
            raise errors.ConfigError('grid.nx', 'nx and ny must be at least 2, '
                                     f'got {grid.nx}x{grid.ny}')
        if not (grid.width_m > 0 and grid.height_m > 0):
            raise errors.ConfigError('grid.width_m', 'area must be positive')
        if not 1 <= self.m_observed <= grid.size:
            raise errors.ConfigError(
                'm_observed',
                f'must lie in [1, {grid.size}], got {self.m_observed}')
        if self.n_samples < 1:
            raise errors.ConfigError('n_samples', 'must be at least 1')
        if self.n_test_samples is not None and self.n_test_samples < 1:
            raise errors.ConfigError('n_test_samples', 'must be at least 1')
        for name in ('tx_power_mw', 'bandwidth_hz', 'carrier_freq_hz',
                     'shadowing_decorrelation_m', 'kfactor_decorrelation_m',
                     'pathloss_exponent'):
            if not getattr(self, name) > 0:
                raise errors.ConfigError(name, 'must be positive')
        for name in ('shadowing_std_db', 'kfactor_std_db'):
            if not getattr(self, name) >= 0:
                raise errors.ConfigError(name, 'must be nonnegative')
        if self.bs_height_m == self.ue_height_m:
            raise errors.ConfigError(
                'bs_height_m', 'BS and UE heights must differ')
        if not 0 < self.rho < 1:
            raise errors.ConfigError('rho', 'must lie in (0, 1)')
        if not 0 < self.zeta < 1:
            raise errors.ConfigError('zeta', 'must lie in (0, 1)')
        if not 0 < self.tau <= 0.5:
            raise errors.ConfigError('tau', 'must lie in (0, 0.5]')
        if not 0 < self.delta < 0.5:
            raise errors.ConfigError('delta', 'must lie in (0, 0.5)')
        if self.seed < 0:
            raise errors.ConfigError('seed', 'must be nonnegative')
        return self

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> 'ScenarioConfig':
        """Builds a validated config from its JSON form.

        Numeric fields are coerced to their declared type; anything that does
        not coerce cleanly raises ConfigError naming the field.
        """
        if not isinstance(raw, Mapping):
            raise errors.ConfigError('config', 'must be a JSON object')
        fields = _coerce_fields(cls, raw)
        grid_raw = fields.pop('grid', {})
        if not isinstance(grid_raw, Mapping):
            raise errors.ConfigError('grid', 'must be a JSON object')
        grid = GridSpec(**_coerce_fields(GridSpec, grid_raw, prefix='grid.'))
        return cls(grid=grid, **fields).validate()


def _coerce_value(name: str, value: Any, hint: Any) -> Any:
    args = typing.get_args(hint)
    optional = typing.get_origin(hint) is Union and type(None) in args
    if value is None:
        if optional:
            return None
        raise errors.ConfigError(name, 'must not be null')
    base = next(a for a in args if a is not type(None)) if optional else hint
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise errors.ConfigError(
            name, f'must be a number, got {type(value).__name__} {value!r}')
    if base is int:
        if isinstance(value, float):
            if not value.is_integer():
                raise errors.ConfigError(
                    name, f'must be an integer, got {value!r}')
            value = int(value)
        return value
    if not math.isfinite(value):
        raise errors.ConfigError(name, f'must be finite, got {value!r}')
    return float(value)


def _coerce_fields(cls, raw: Mapping[str, Any], prefix: str = ''
                   ) -> dict[str, Any]:
    hints = typing.get_type_hints(cls)
    fields = {}
    for key, value in raw.items():
        if key not in hints:
            raise errors.ConfigError(f'{prefix}{key}', 'unknown config field')
        if hints[key] is GridSpec:
            fields[key] = value
        else:
            fields[key] = _coerce_value(f'{prefix}{key}', value, hints[key])
    return fields


def get_config_for_paper(seed: int = 0) -> ScenarioConfig:
    return ScenarioConfig(seed=seed)


def get_config_for_desk(seed: int = 0) -> ScenarioConfig:
    return ScenarioConfig(
        grid=GridSpec(width_m=100.0, height_m=100.0, nx=40, ny=40),
        m_observed=100,
        n_samples=10_000,
        seed=seed,
    )


def get_scenario_config(preset: str, seed: int = 0) -> ScenarioConfig:
    """Gets the ScenarioConfig for the desired preset."""
    if preset == 'paper':
        return get_config_for_paper(seed)
    elif preset == 'desk':
        return get_config_for_desk(seed)
    else:
        raise errors.ConfigError(
            'preset',
            f'Invalid preset {preset}. Supported presets are "desk" and '
            '"paper".'
        )
