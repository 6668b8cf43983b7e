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
"""Scoring of rate maps against the ground-truth test data."""

import dataclasses
import math
from typing import Any, NamedTuple, Optional

from absl import logging
import numpy as np

from tailmap import allocator
from tailmap import errors
from tailmap import evt
from tailmap import synth_env


class OutageRow(NamedTuple):
    gamma_tar: float
    empirical_outage: float


@dataclasses.dataclass
class OutageResult:
    gamma_tar: np.ndarray
    # Fraction of test samples strictly below gamma_tar, per grid point, or
    # the true outage when exact.
    empirical_outage: np.ndarray
    met: np.ndarray
    zeta: float
    # Test samples per grid point; 0 when exact.
    n_test: int
    exact: bool = False

    def __len__(self) -> int:
        return self.empirical_outage.shape[0]


@dataclasses.dataclass
class TruthTails:
    """Tail fits of the test samples at every grid point.

    Entries are NaN where the fit failed.
    """
    grid: np.ndarray
    mu: np.ndarray
    xi: np.ndarray
    sigma: np.ndarray
    rho: float
    n_test: int = 0

    def __len__(self) -> int:
        return self.mu.shape[0]

    @property
    def n_missing(self) -> int:
        return int(np.count_nonzero(np.isnan(self.mu)))

    def fit(self, index: int) -> Optional[evt.TailFit]:
        if np.isnan(self.mu[index]):
            return None
        return evt.TailFit(float(self.mu[index]), float(self.xi[index]),
                           float(self.sigma[index]), self.rho)


@dataclasses.dataclass
class DivergenceMap:
    # Bhattacharyya distance per grid point; NaN where the test fit failed.
    d_bh: np.ndarray
    truth: Optional[TruthTails] = None

    @property
    def n_missing(self) -> int:
        return int(np.count_nonzero(np.isnan(self.d_bh)))

    @property
    def valid(self) -> np.ndarray:
        return self.d_bh[~np.isnan(self.d_bh)]


@dataclasses.dataclass
class EvalReport:
    method: str
    zeta: float
    # Percent of grid points whose empirical outage meets zeta.
    availability: float
    mean_rate: float
    # (value, cumulative fraction) pairs.
    rate_ecdf: list[tuple[float, float]]
    bhattacharyya_ecdf: Optional[list[tuple[float, float]]] = None
    dbh_missing: int = 0
    n_locations: int = 0
    n_test: int = 0
    dataset_hash: str = ''
    request: dict[str, Any] = dataclasses.field(default_factory=dict)
    # Whether outage was computed from the ground-truth fading law.
    exact_outage: bool = False

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> 'EvalReport':
        fields = dict(raw)
        fields['rate_ecdf'] = [tuple(p) for p in fields['rate_ecdf']]
        if fields.get('bhattacharyya_ecdf') is not None:
            fields['bhattacharyya_ecdf'] = [
                tuple(p) for p in fields['bhattacharyya_ecdf']]
        return cls(**fields)


@dataclasses.dataclass
class ComparisonSummary:
    # 100 * (evt mean rate / benchmark mean rate - 1).
    rate_gain_percent: float
    # EVT availability minus benchmark availability, in percentage points.
    availability_diff: float
    # Fraction of grid points where the EVT rate is strictly higher.
    win_fraction: Optional[float]
    dataset_hash: str
    evt_mean_rate: float
    benchmark_mean_rate: float

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


def target_snr(rate):
    """Linear SNR 2^rate - 1 needed to decode at the given rate."""
    return np.expm1(np.asarray(rate, dtype=np.float64) * math.log(2))


def empirical_outage(test_samples, rate: float) -> OutageRow:
    samples = np.asarray(test_samples, dtype=np.float64).ravel()
    if samples.size == 0:
        raise errors.DataError('empirical_outage needs test samples')
    if not rate >= 0:
        raise ValueError(f'rate must be nonnegative, got {rate}')
    gamma_tar = float(target_snr(rate))
    outage = np.count_nonzero(samples < gamma_tar) / samples.size
    return OutageRow(gamma_tar, outage)


def score_outage(test: synth_env.GridTestData, rate_map: allocator.RateMap,
                 zeta: float) -> OutageResult:
    """Empirical outage of every grid point at its allocated rate."""
    if len(test) != len(rate_map):
        raise errors.DataError(f'{len(rate_map)} rates for {len(test)} test '
                               'locations')
    gamma_tar = np.empty(len(test))
    outage = np.empty(len(test))
    for i in range(len(test)):
        gamma_tar[i], outage[i] = empirical_outage(test.samples(i),
                                                   rate_map.rate[i])
    return OutageResult(gamma_tar=gamma_tar, empirical_outage=outage,
                        met=outage <= zeta, zeta=zeta, n_test=test.n_samples)


def score_outage_exact(truth: synth_env.GroundTruthField,
                       rate_map: allocator.RateMap, zeta: float
                       ) -> OutageResult:
    """True outage of every grid point under the ground-truth fading law."""
    if len(truth) != len(rate_map):
        raise errors.DataError(f'{len(rate_map)} rates for {len(truth)} grid '
                               'points')
    gamma_tar = target_snr(rate_map.rate)
    outage = synth_env.snr_cdf(truth, gamma_tar)
    return OutageResult(gamma_tar=gamma_tar, empirical_outage=outage,
                        met=outage <= zeta, zeta=zeta, n_test=0, exact=True)


def availability(results, zeta: float) -> float:
    """Percent of locations with empirical outage at most zeta."""
    if isinstance(results, OutageResult):
        results = results.empirical_outage
    outages = np.asarray(results, dtype=np.float64)
    if outages.size == 0:
        raise errors.DataError('availability needs at least one location')
    return 100.0 * np.count_nonzero(outages <= zeta) / outages.size


def ecdf(values) -> list[tuple[float, float]]:
    """Right-continuous empirical CDF as (value, fraction) steps."""
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise errors.DataError('ecdf needs at least one value')
    steps, counts = np.unique(values, return_counts=True)
    fractions = np.cumsum(counts) / values.size
    fractions[-1] = 1.0
    return [(float(v), float(f)) for v, f in zip(steps, fractions)]


def fit_truth_tails(test: synth_env.GridTestData, rho: float) -> TruthTails:
    """Fits the tail of the test samples at every grid point."""
    params = np.full((len(test), 3), np.nan)
    for i in range(len(test)):
        try:
            fit = evt.fit_tail(test.samples(i), rho)
        except (errors.DataError, errors.NumericalError) as e:
            logging.warning('No test tail at grid point %d: %s', i, e)
            continue
        params[i] = fit.mu, fit.xi, fit.sigma
    truth = TruthTails(grid=test.grid, mu=params[:, 0], xi=params[:, 1],
                       sigma=params[:, 2], rho=rho, n_test=test.n_samples)
    if truth.n_missing:
        logging.warning('%d of %d test tails missing', truth.n_missing,
                        len(test))
    return truth


def tail_divergence_map(radio_map: allocator.RadioMap,
                        test: Optional[synth_env.GridTestData] = None,
                        rho: Optional[float] = None,
                        truth: Optional[TruthTails] = None) -> DivergenceMap:
    """Bhattacharyya distance between predicted and test-fitted tails.

    Both tails are compared at a zero threshold, so only (xi, sigma) enter.
    Pass truth to reuse tails already fitted to the test data.
    """
    if truth is None:
        if test is None:
            raise ValueError('tail_divergence_map needs test data or truth')
        truth = fit_truth_tails(test, radio_map.rho if rho is None else rho)
    if len(truth) != len(radio_map):
        raise errors.DataError(f'{len(truth)} test tails for a map of '
                               f'{len(radio_map)} points')
    d_bh = np.full(len(truth), np.nan)
    for i in range(len(truth)):
        actual = truth.fit(i)
        if actual is None:
            continue
        try:
            d_bh[i] = evt.bhattacharyya_gpd(
                evt.TailFit(0.0, float(radio_map.xi_hat[i]),
                            float(radio_map.sigma_hat[i]), truth.rho),
                actual.with_threshold(0.0))
        except errors.NumericalError as e:
            logging.warning('No divergence at grid point %d: %s', i, e)
    result = DivergenceMap(d_bh, truth=truth)
    if result.n_missing:
        logging.warning('%d of %d divergences missing', result.n_missing,
                        len(truth))
    return result


def evaluate(rate_map: allocator.RateMap, test: synth_env.GridTestData,
             zeta: Optional[float] = None,
             divergences: Optional[DivergenceMap] = None,
             dataset_hash: str = '',
             request: Optional[dict[str, Any]] = None,
             exact: bool = False) -> tuple[EvalReport, OutageResult]:
    """Scores a rate map; exact scores against the fading law itself."""
    zeta = rate_map.zeta if zeta is None else zeta
    if exact:
        outages = score_outage_exact(test.truth, rate_map, zeta)
    else:
        outages = score_outage(test, rate_map, zeta)
    report = EvalReport(
        method=rate_map.method.value,
        zeta=zeta,
        availability=availability(outages, zeta),
        mean_rate=rate_map.mean_rate,
        rate_ecdf=ecdf(rate_map.rate),
        n_locations=len(rate_map),
        n_test=outages.n_test,
        dataset_hash=dataset_hash,
        request=dict(request or {}),
        exact_outage=outages.exact,
    )
    if divergences is not None and divergences.valid.size:
        report.bhattacharyya_ecdf = ecdf(divergences.valid)
        report.dbh_missing = divergences.n_missing
    logging.info('%s at zeta=%g: availability %.2f%%, mean rate %.4f bps/Hz',
                 report.method, zeta, report.availability, report.mean_rate)
    return report, outages


def compare_report(evt_report: EvalReport, bench_report: EvalReport,
                   evt_rates: Optional[np.ndarray] = None,
                   bench_rates: Optional[np.ndarray] = None
                   ) -> ComparisonSummary:
    if evt_report.dataset_hash != bench_report.dataset_hash:
        raise errors.IntegrityError(
            f'Reports come from different datasets: '
            f'{evt_report.dataset_hash!r} vs {bench_report.dataset_hash!r}')
    if not bench_report.mean_rate > 0:
        raise errors.DataError('Benchmark mean rate must be positive')
    win_fraction = None
    if evt_rates is not None and bench_rates is not None:
        evt_rates = np.asarray(evt_rates)
        bench_rates = np.asarray(bench_rates)
        if evt_rates.shape != bench_rates.shape:
            raise errors.IntegrityError('Rate maps cover different grids')
        win_fraction = float(np.mean(evt_rates > bench_rates))
    return ComparisonSummary(
        rate_gain_percent=100.0 * (evt_report.mean_rate
                                   / bench_report.mean_rate - 1.0),
        availability_diff=evt_report.availability - bench_report.availability,
        win_fraction=win_fraction,
        dataset_hash=evt_report.dataset_hash,
        evt_mean_rate=evt_report.mean_rate,
        benchmark_mean_rate=bench_report.mean_rate,
    )
