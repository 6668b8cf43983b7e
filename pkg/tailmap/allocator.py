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
"""Outage-constrained rate selection over a grid.

The EVT allocator fits a GPD tail at every observed site, krigs the three
tail parameters over the grid, shifts the threshold map up by its Gaussian
tau-quantile margin and inverts the tail outage at every grid point. The
benchmark krigs the empirical zeta-quantile of ln-SNR instead.
"""

import dataclasses
import math
from typing import Mapping, Optional, Sequence, Union

from absl import logging
import numpy as np

from tailmap import config as tailmap_config
from tailmap import errors
from tailmap import evt
from tailmap import gp
from tailmap import special
from tailmap import synth_env

KernelKind = tailmap_config.KernelKind
MapParameter = tailmap_config.MapParameter
Method = tailmap_config.Method
KernelChoice = Union[KernelKind, gp.CovarianceSpec]

SIGMA_FLOOR = 1e-6


def default_kernels() -> dict[MapParameter, KernelChoice]:
    return {
        MapParameter.MU: KernelKind.EXPONENTIAL,
        MapParameter.XI: KernelKind.MATERN,
        MapParameter.SIGMA: KernelKind.MATERN,
    }


@dataclasses.dataclass(frozen=True)
class AllocationRequest:
    # The target outage probability.
    zeta: float = 1e-3
    # The tail fraction parameter of the threshold.
    rho: float = 0.99
    # The confidence level of the threshold margin.
    tau: float = 1e-3
    # The kernel of each parameter map: a kind to fit or a fixed spec.
    kernels: Mapping[MapParameter, KernelChoice] = dataclasses.field(
        default_factory=default_kernels)

    def validate(self) -> 'AllocationRequest':
        if not 0 < self.zeta < 1:
            raise errors.ConfigError('zeta', f'must lie in (0, 1), got '
                                     f'{self.zeta}')
        if not 0 < self.rho < 1:
            raise errors.ConfigError('rho', f'must lie in (0, 1), got '
                                     f'{self.rho}')
        if not 0 < self.tau <= 0.5:
            raise errors.ConfigError('tau', f'must lie in (0, 0.5], got '
                                     f'{self.tau}')
        missing = [p.value for p in MapParameter if p not in self.kernels]
        if missing:
            raise errors.ConfigError('kernels', f'no kernel for {missing}')
        return self

    def check_tail_target(self):
        if self.zeta > 1 - self.rho:
            raise errors.TargetAboveTailError(
                f'zeta={self.zeta} exceeds 1 - rho = {1 - self.rho:.3g}; the '
                'tail model only resolves targets below 1 - rho. Raise rho, '
                'which needs N >= 1 / (1 - rho) samples per site.')

    def to_dict(self) -> dict:
        return {
            'zeta': self.zeta,
            'rho': self.rho,
            'tau': self.tau,
            'kernels': {
                p.value: (k.to_dict() if isinstance(k, gp.CovarianceSpec)
                          else k.value) for p, k in self.kernels.items()
            },
        }

    @classmethod
    def from_config(cls, scenario: tailmap_config.ScenarioConfig,
                    **overrides) -> 'AllocationRequest':
        fields = dict(zeta=scenario.zeta, rho=scenario.rho, tau=scenario.tau)
        fields.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**fields).validate()


@dataclasses.dataclass
class RadioMap:
    # (G, 2) grid coordinates.
    grid: np.ndarray
    xi_hat: np.ndarray
    # Kriged scale, floored at SIGMA_FLOOR.
    sigma_hat: np.ndarray
    mu_mean: np.ndarray
    mu_var: np.ndarray
    # Threshold with its tau-quantile margin.
    mu_tau: np.ndarray
    rho: float
    tau: float
    # Denormalized posterior of each parameter map.
    posteriors: dict[MapParameter, gp.GpPosterior]
    # Grid index of each retained site, with its fit.
    site_fits: dict[int, evt.TailFit] = dataclasses.field(default_factory=dict)
    # Grid indices of observed sites whose tail fit failed.
    excluded: list[int] = dataclasses.field(default_factory=list)
    sigma_clamped: int = 0

    def __len__(self) -> int:
        return self.grid.shape[0]

    @property
    def n_sites(self) -> int:
        return len(self.site_fits) + len(self.excluded)

    @property
    def hyperparams(self) -> dict[str, dict]:
        return {p.value: post.spec.to_dict()
                for p, post in self.posteriors.items()}

    def with_tau(self, tau: float) -> 'RadioMap':
        """Recomputes the threshold margin at another confidence level."""
        if tau == self.tau:
            return self
        return dataclasses.replace(
            self, tau=tau,
            mu_tau=gp.gaussian_upper_quantile(tau, self.mu_mean, self.mu_var))

    @classmethod
    def from_posteriors(cls, posteriors: Mapping[MapParameter, gp.GpPosterior],
                        rho: float, tau: float, **bookkeeping) -> 'RadioMap':
        """Assembles a map from the three denormalized posteriors."""
        mu = posteriors[MapParameter.MU]
        sigma_raw = posteriors[MapParameter.SIGMA].mean
        clamped = int(np.count_nonzero(sigma_raw < SIGMA_FLOOR))
        if clamped:
            logging.warning('Clamped %d kriged sigma values to %g', clamped,
                            SIGMA_FLOOR)
        return cls(grid=mu.targets,
                   xi_hat=posteriors[MapParameter.XI].mean,
                   sigma_hat=np.maximum(sigma_raw, SIGMA_FLOOR),
                   mu_mean=mu.mean,
                   mu_var=mu.var,
                   mu_tau=gp.gaussian_upper_quantile(tau, mu.mean, mu.var),
                   rho=rho,
                   tau=tau,
                   posteriors=dict(posteriors),
                   sigma_clamped=clamped,
                   **bookkeeping)


@dataclasses.dataclass
class RateMap:
    grid: np.ndarray
    # Target in the -ln domain; rate = log2(1 + exp(-phi)).
    phi: np.ndarray
    # Rate per grid point, in bps/Hz.
    rate: np.ndarray
    method: Method
    zeta: float
    # Kriged ln-SNR quantile, set by the benchmark only.
    theta: Optional[np.ndarray] = None

    def __post_init__(self):
        if not np.all(np.isfinite(self.rate)) or np.any(self.rate < 0):
            raise errors.NumericalError(f'{self.method.value} rates must be '
                                        'finite and nonnegative')

    def __len__(self) -> int:
        return self.grid.shape[0]

    @property
    def phi_or_theta(self) -> np.ndarray:
        return self.phi if self.theta is None else self.theta

    @property
    def mean_rate(self) -> float:
        return float(np.mean(self.rate))


@dataclasses.dataclass
class BenchmarkPosterior:
    grid: np.ndarray
    # Predictive mean of the ln-SNR zeta-quantile.
    theta: np.ndarray
    # Predictive standard deviation of the same.
    alpha: np.ndarray
    delta: float
    spec: Optional[gp.CovarianceSpec] = None

    def __post_init__(self):
        if np.any(self.alpha < 0):
            raise ValueError('alpha must be nonnegative')
        if not 0 < self.delta <= 0.5:
            raise ValueError(f'delta must lie in (0, 0.5], got {self.delta}')


def canonical_order(observed: Sequence[synth_env.MeasurementSet]
                    ) -> list[synth_env.MeasurementSet]:
    """Sorts sites by (x, y) so results do not depend on input order."""
    return sorted(observed, key=lambda s: (s.location.x, s.location.y,
                                           s.loc_id))


def _site_locations(sites: Sequence[synth_env.MeasurementSet]) -> np.ndarray:
    return np.array([tuple(s.location) for s in sites],
                    dtype=np.float64).reshape(-1, 2)


def fit_sites(observed: Sequence[synth_env.MeasurementSet], rho: float
              ) -> tuple[list[synth_env.MeasurementSet], list[evt.TailFit],
                         list[int]]:
    """Fits the tail at every site; failures are logged and excluded."""
    sites, fits, excluded = [], [], []
    for site in canonical_order(observed):
        try:
            fit = evt.fit_tail(site.samples, rho)
        except (errors.DataError, errors.NumericalError) as e:
            logging.warning('Excluding site %d at (%.2f, %.2f): %s',
                            site.loc_id, site.location.x, site.location.y, e)
            excluded.append(site.loc_id)
            continue
        sites.append(site)
        fits.append(fit)
    return sites, fits, excluded


def build_tail_maps(observed: Sequence[synth_env.MeasurementSet],
                    grid: np.ndarray,
                    request: AllocationRequest) -> RadioMap:
    """Fits per-site tails and krigs (mu, xi, sigma) over the grid."""
    request.validate()
    sites, fits, excluded = fit_sites(observed, request.rho)
    if not fits:
        raise errors.DataError(
            f'No observed site out of {len(observed)} supports a tail fit at '
            f'rho={request.rho}')
    locs = _site_locations(sites)
    values = {
        MapParameter.MU: np.array([f.mu for f in fits]),
        MapParameter.XI: np.array([f.xi for f in fits]),
        MapParameter.SIGMA: np.array([f.sigma for f in fits]),
    }
    bounds = None
    if not all(isinstance(k, gp.CovarianceSpec)
               for k in request.kernels.values()):
        bounds = gp.range_bounds(grid)
    posteriors = {}
    for param in MapParameter:
        posteriors[param] = gp.krige(values[param], locs, grid,
                                     request.kernels[param], bounds)
        logging.info('Kriged %s map from %d sites: %s', param.value,
                     len(fits), posteriors[param].spec)
    if excluded:
        logging.warning('%d of %d observed sites excluded', len(excluded),
                        len(observed))
    return RadioMap.from_posteriors(
        posteriors, request.rho, request.tau,
        site_fits={s.loc_id: f for s, f in zip(sites, fits)},
        excluded=excluded)


def allocate_rates_evt(radio_map: RadioMap,
                       request: AllocationRequest) -> RateMap:
    """Largest rate per grid point whose predicted tail outage is zeta."""
    request.validate()
    if not math.isclose(request.rho, radio_map.rho):
        raise errors.ConfigError(
            'rho', f'request rho={request.rho} does not match the map fitted '
            f'at rho={radio_map.rho}')
    request.check_tail_target()
    radio_map = radio_map.with_tau(request.tau)
    phi = evt.outage_inverse(request.zeta, radio_map.rho, radio_map.xi_hat,
                             radio_map.sigma_hat, radio_map.mu_tau)
    return RateMap(grid=radio_map.grid, phi=phi, rate=evt.rate_from_phi(phi),
                   method=Method.EVT, zeta=request.zeta)


def predictive_outage(radio_map: RadioMap, phi) -> np.ndarray:
    """Tail outage at target phi with the margin threshold mu_tau.

    Targets below mu_tau are outside the tail; they get the bound 1 - rho.
    """
    phi = np.broadcast_to(np.asarray(phi, dtype=np.float64),
                          radio_map.mu_tau.shape)
    inside = np.maximum(phi, radio_map.mu_tau)
    outage = evt.outage_probability(inside, radio_map.rho, radio_map.xi_hat,
                                    radio_map.sigma_hat, radio_map.mu_tau)
    return np.where(phi < radio_map.mu_tau, 1.0 - radio_map.rho, outage)


def _order_statistic_index(n: int, zeta: float) -> int:
    return math.floor(round(n * zeta, 9))


def benchmark_quantile(samples, zeta: float) -> float:
    """The floor(N zeta)-th smallest ln-SNR sample."""
    if isinstance(samples, synth_env.MeasurementSet):
        samples = samples.samples
    samples = np.asarray(samples, dtype=np.float64).ravel()
    k = _order_statistic_index(samples.size, zeta)
    if k < 1:
        raise errors.InfeasibleError(
            f'The empirical {zeta:g}-quantile needs N >= 1/zeta = '
            f'{math.ceil(1 / zeta)} samples, got N={samples.size}')
    log_samples = np.log(samples)
    return float(np.partition(log_samples, k - 1)[k - 1])


def benchmark_rate(theta, alpha, delta: float):
    """log2(1 + exp(theta + sqrt(2) alpha erfinv(2 delta - 1)))."""
    margin = math.sqrt(2) * special.erfinv(2 * delta - 1)
    exponent = np.asarray(theta, dtype=np.float64) \
        + np.asarray(alpha, dtype=np.float64) * margin
    rate = np.logaddexp(0.0, exponent) / math.log(2)
    return float(rate) if rate.ndim == 0 else rate


def krige_benchmark(observed: Sequence[synth_env.MeasurementSet],
                    grid: np.ndarray, zeta: float, delta: float,
                    kernel: KernelChoice = KernelKind.EXPONENTIAL
                    ) -> BenchmarkPosterior:
    sites = canonical_order(observed)
    quantiles = np.array([benchmark_quantile(s, zeta) for s in sites])
    bounds = None if isinstance(kernel, gp.CovarianceSpec) \
        else gp.range_bounds(grid)
    posterior = gp.krige(quantiles, _site_locations(sites), grid, kernel,
                         bounds)
    logging.info('Kriged ln-SNR %.0e-quantile map from %d sites: %s', zeta,
                 len(sites), posterior.spec)
    return BenchmarkPosterior(grid=posterior.targets, theta=posterior.mean,
                              alpha=posterior.std, delta=delta,
                              spec=posterior.spec)


def allocate_rates_benchmark(observed: Sequence[synth_env.MeasurementSet],
                             grid: np.ndarray, zeta: float, delta: float,
                             kernel: KernelChoice = KernelKind.EXPONENTIAL
                             ) -> RateMap:
    """Rate from the kriged empirical zeta-quantile with a delta margin."""
    if not 0 < zeta < 1:
        raise errors.ConfigError('zeta', f'must lie in (0, 1), got {zeta}')
    if not 0 < delta <= 0.5:
        raise errors.ConfigError('delta', f'must lie in (0, 0.5], got {delta}')
    bench = krige_benchmark(observed, grid, zeta, delta, kernel)
    rate = benchmark_rate(bench.theta, bench.alpha, delta)
    phi = -(bench.theta + math.sqrt(2) * bench.alpha
            * special.erfinv(2 * delta - 1))
    return RateMap(grid=bench.grid, phi=phi, rate=rate,
                   method=Method.BENCHMARK, zeta=zeta, theta=bench.theta)
