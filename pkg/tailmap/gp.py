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
"""Gaussian-process kriging of scalar fields over the plane.

Observations are normalized to zero mean and unit (Bessel-corrected) standard
deviation, modelled as a zero-mean GP plus white observation noise, and
predicted at target locations. Only the diagonal of the predictive covariance
is formed.
"""

import dataclasses
import math
from typing import Any, Optional, Sequence, Tuple, Union

from absl import logging
import numpy as np
from scipy import optimize
import torch

from tailmap import config as tailmap_config
from tailmap import errors
from tailmap import special

KernelKind = tailmap_config.KernelKind

MATERN_NUS = (0.5, 1.5, 2.5)
_JITTER_START = 1e-10
_JITTER_MAX = 1e-4
# Starting ranges and noise fractions for the hyperparameter search.
_START_RANGE_FRACTIONS = (0.2, 0.4, 0.6, 0.8)
_START_NOISE_FRACTIONS = (0.05, 0.5)
_LOW_SIGNAL_CORRELATION = 0.25
_PENALTY = 1e20


@dataclasses.dataclass(frozen=True)
class NormalizationStats:
    mean: float
    std: float

    def __post_init__(self):
        if not self.std > 0:
            raise ValueError(f'std must be positive, got {self.std}')


@dataclasses.dataclass(frozen=True)
class CovarianceSpec:
    kind: KernelKind
    # Process variance (omega^2).
    variance: float
    # Decorrelation distance r, in meters.
    range_m: float
    # Matern smoothness; ignored by the exponential kernel.
    nu: Optional[float] = None
    # Observation noise variance (lambda^2).
    noise: float = 0.0
    # Set by fit_hyperparams when neighbouring observations barely correlate.
    low_spatial_signal: bool = False
    # Log marginal likelihood attained by the fit, if fitted.
    loglik: Optional[float] = None

    def __post_init__(self):
        if not self.variance > 0:
            raise ValueError(f'variance must be positive, got {self.variance}')
        if not self.range_m > 0:
            raise ValueError(f'range_m must be positive, got {self.range_m}')
        if self.noise < 0:
            raise ValueError(f'noise must be nonnegative, got {self.noise}')
        if self.kind == KernelKind.MATERN and self.nu not in MATERN_NUS:
            raise ValueError(f'Matern nu must be one of {MATERN_NUS}, got '
                             f'{self.nu}')

    def correlation(self, d):
        """Kernel correlation at distance d, as a torch tensor."""
        d = torch.as_tensor(d, dtype=torch.float64)
        if self.kind == KernelKind.EXPONENTIAL:
            return torch.exp(-d / self.range_m)
        a = math.sqrt(self.nu) * d / self.range_m
        if self.nu == 0.5:
            poly = torch.ones_like(a)
        elif self.nu == 1.5:
            poly = 1 + a
        else:
            poly = 1 + a + a * a / 3
        return poly * torch.exp(-a)

    def kernel(self, d) -> torch.Tensor:
        return self.variance * self.correlation(d)

    def spatial_correlation(self, d: float) -> float:
        """Correlation of two noisy observations at distance d > 0."""
        signal = self.variance / (self.variance + self.noise)
        return signal * float(self.correlation(d))

    def to_dict(self) -> dict[str, Any]:
        return {
            'kind': self.kind.value,
            'omega2': self.variance,
            'range_m': self.range_m,
            'nu': self.nu,
            'noise2': self.noise,
            'low_spatial_signal': self.low_spatial_signal,
            'loglik': self.loglik,
        }

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> 'CovarianceSpec':
        return cls(kind=KernelKind(raw['kind']), variance=raw['omega2'],
                   range_m=raw['range_m'], nu=raw.get('nu'),
                   noise=raw.get('noise2', 0.0),
                   low_spatial_signal=raw.get('low_spatial_signal', False),
                   loglik=raw.get('loglik'))


@dataclasses.dataclass
class GpPosterior:
    # (T, 2) target locations.
    targets: np.ndarray
    mean: np.ndarray
    # Diagonal of the predictive covariance, nonnegative.
    var: np.ndarray
    stats: NormalizationStats
    spec: CovarianceSpec
    # Whether mean and var are still in normalized units.
    normalized: bool = True

    def __post_init__(self):
        if not (len(self.targets) == len(self.mean) == len(self.var)):
            raise ValueError('targets, mean and var must have equal lengths')

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.var)


def _as_locations(locs) -> torch.Tensor:
    return torch.as_tensor(np.asarray(locs, dtype=np.float64).reshape(-1, 2))


def pairwise_distances(locs_a, locs_b) -> torch.Tensor:
    """Euclidean 2-D distances; exactly 0 for coincident points."""
    return torch.cdist(_as_locations(locs_a), _as_locations(locs_b),
                       compute_mode='donot_use_mm_for_euclid_dist')


def covariance_matrix(locs_a, locs_b, spec: CovarianceSpec) -> np.ndarray:
    return spec.kernel(pairwise_distances(locs_a, locs_b)).numpy()


def cholesky_with_jitter(cov: torch.Tensor, scale: float,
                         start: float = _JITTER_START,
                         cap: float = _JITTER_MAX) -> torch.Tensor:
    """Lower Cholesky factor of cov, escalating diagonal jitter on failure.

    The plain factorization is tried first; jitter then starts at
    start * scale and grows tenfold up to cap * scale.
    """
    factor, info = torch.linalg.cholesky_ex(cov)
    if info.item() == 0:
        return factor
    eye = torch.eye(cov.shape[0], dtype=cov.dtype)
    jitter = start
    while jitter <= cap * (1 + 1e-9):
        factor, info = torch.linalg.cholesky_ex(cov + jitter * scale * eye)
        if info.item() == 0:
            logging.warning('Cholesky needed jitter %.1e x %.3g', jitter, scale)
            return factor
        jitter *= 10
    raise errors.NumericalError(
        f'Cholesky factorization failed with jitter up to {cap:.0e} x {scale}')


def normalize(values) -> Tuple[np.ndarray, NormalizationStats]:
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        raise errors.DataError(f'normalize needs at least 2 values, got '
                               f'{values.size}')
    std = float(np.std(values, ddof=1))
    if not std > 0:
        raise errors.DataError('normalize needs values that are not all equal')
    mean = float(np.mean(values))
    return (values - mean) / std, NormalizationStats(mean, std)


def denormalize(posterior: GpPosterior,
                stats: Optional[NormalizationStats] = None) -> GpPosterior:
    """Maps a normalized posterior back to physical units."""
    stats = posterior.stats if stats is None else stats
    return dataclasses.replace(posterior,
                               mean=posterior.mean * stats.std + stats.mean,
                               var=posterior.var * stats.std**2,
                               stats=stats, normalized=False)


def _gram(dist: torch.Tensor, spec: CovarianceSpec) -> torch.Tensor:
    gram = spec.kernel(dist)
    return gram + spec.noise * torch.eye(dist.shape[0], dtype=gram.dtype)


def _loglik_from_factor(y: torch.Tensor, factor: torch.Tensor) -> float:
    white = torch.linalg.solve_triangular(factor, y[:, None], upper=False)
    logdet = 2 * torch.log(torch.diagonal(factor)).sum()
    n = y.shape[0]
    return float(-0.5 * (white**2).sum() - 0.5 * logdet
                 - 0.5 * n * math.log(2 * math.pi))


def log_marginal_likelihood(obs, locs, spec: CovarianceSpec) -> float:
    """Gaussian log marginal likelihood of obs under the zero-mean model."""
    y = torch.as_tensor(np.asarray(obs, dtype=np.float64))
    factor = cholesky_with_jitter(_gram(pairwise_distances(locs, locs), spec),
                                  spec.variance)
    return _loglik_from_factor(y, factor)


@dataclasses.dataclass(frozen=True)
class _SearchBox:
    """Log-space bounds of (omega^2, r, lambda^2)."""
    lo: np.ndarray
    hi: np.ndarray

    def to_log(self, u: np.ndarray) -> np.ndarray:
        return self.lo + np.asarray(u) * (self.hi - self.lo)


def range_bounds(locations) -> Tuple[float, float]:
    """(0.1 x lattice spacing, 10 x diagonal) of the given locations."""
    locs = np.asarray(locations, dtype=np.float64).reshape(-1, 2)
    steps = np.concatenate([np.diff(np.unique(locs[:, 0])),
                            np.diff(np.unique(locs[:, 1]))])
    steps = steps[steps > 0]
    if steps.size == 0:
        raise errors.DataError('Range bounds need distinct locations')
    extent = np.ptp(locs, axis=0)
    diagonal = math.hypot(float(extent[0]), float(extent[1]))
    return 0.1 * float(steps.min()), 10.0 * diagonal


def _search_box(dist: torch.Tensor, sample_var: float,
                bounds: Optional[Tuple[float, float]] = None) -> _SearchBox:
    if bounds is None:
        d = dist.numpy()
        positive = d[d > 0]
        if positive.size == 0:
            raise errors.DataError(
                'Hyperparameter fit needs distinct locations')
        bounds = 0.1 * positive.min(), 10.0 * positive.max()
    r_lo, r_hi = bounds
    if not 0 < r_lo < r_hi:
        raise ValueError(f'Invalid range bounds {bounds}')
    lo = np.log([1e-4 * sample_var, r_lo, 1e-6 * sample_var])
    hi = np.log([10.0 * sample_var, r_hi, 10.0 * sample_var])
    return _SearchBox(lo, hi)


def _spec_at(u: np.ndarray, box: _SearchBox, kind: KernelKind,
             nu: Optional[float]) -> CovarianceSpec:
    log_var, log_r, log_noise = box.to_log(u)
    return CovarianceSpec(kind=kind, variance=math.exp(log_var),
                          range_m=math.exp(log_r), nu=nu,
                          noise=math.exp(log_noise))


def _neg_loglik(u: np.ndarray, y: torch.Tensor, dist: torch.Tensor,
                box: _SearchBox, kind: KernelKind,
                nu: Optional[float]) -> float:
    if np.any(u < 0) or np.any(u > 1):
        return _PENALTY
    spec = _spec_at(u, box, kind, nu)
    factor, info = torch.linalg.cholesky_ex(_gram(dist, spec))
    if info.item() != 0:
        return _PENALTY
    return -_loglik_from_factor(y, factor)


def _start_points(box: _SearchBox, sample_var: float) -> list[np.ndarray]:
    var_span = box.hi[0] - box.lo[0]
    noise_span = box.hi[2] - box.lo[2]
    starts = []
    for r_frac in _START_RANGE_FRACTIONS:
        for noise_frac in _START_NOISE_FRACTIONS:
            u_var = (math.log((1 - noise_frac) * sample_var) - box.lo[0]) \
                / var_span
            u_noise = (math.log(noise_frac * sample_var) - box.lo[2]) \
                / noise_span
            starts.append(np.array([u_var, r_frac, u_noise]))
    return starts


def _initial_simplex(u0: np.ndarray, step: float = 0.05) -> np.ndarray:
    simplex = [u0]
    for i in range(u0.size):
        vertex = u0.copy()
        vertex[i] += step if vertex[i] + step <= 1 else -step
        simplex.append(vertex)
    return np.stack(simplex)


def _median_nearest_neighbour(dist: torch.Tensor) -> float:
    d = dist.clone()
    d.fill_diagonal_(math.inf)
    d[d == 0] = math.inf
    nearest = d.min(dim=1).values
    nearest = nearest[torch.isfinite(nearest)]
    return float(nearest.median()) if nearest.numel() else math.inf


def fit_hyperparams(normalized_obs, locations,
                    kind: KernelKind,
                    nus: Sequence[float] = MATERN_NUS,
                    bounds: Optional[Tuple[float, float]] = None
                    ) -> CovarianceSpec:
    """Fits (omega^2, r, lambda^2), and nu for Matern, by marginal likelihood.

    The search runs the Nelder-Mead simplex in the unit cube spanned by the
    log-parameter bounds, from 8 starts. bounds limits the range r, usually
    to range_bounds of the prediction grid; without it the range spans
    [0.1 x smallest, 10 x largest] pairwise observation distance.
    """
    y = torch.as_tensor(np.asarray(normalized_obs, dtype=np.float64))
    if y.shape[0] < 10:
        raise errors.DataError(f'Hyperparameter fit needs at least 10 '
                               f'observations, got {y.shape[0]}')
    dist = pairwise_distances(locations, locations)
    sample_var = float(torch.var(y))
    if not sample_var > 0:
        raise errors.DataError('Hyperparameter fit needs varying observations')
    box = _search_box(dist, sample_var, bounds)
    candidate_nus = list(nus) if kind == KernelKind.MATERN else [None]

    best_u, best_nu, best_value = None, None, _PENALTY
    for nu in candidate_nus:
        for u0 in _start_points(box, sample_var):
            start_value = _neg_loglik(u0, y, dist, box, kind, nu)
            if start_value < best_value:
                best_u, best_nu, best_value = u0, nu, start_value
            result = optimize.minimize(
                _neg_loglik, u0, args=(y, dist, box, kind, nu),
                method='Nelder-Mead',
                options=dict(initial_simplex=_initial_simplex(u0),
                             xatol=1e-6, fatol=1e-8, maxiter=600))
            if result.fun < best_value:
                best_u, best_nu, best_value = result.x, nu, float(result.fun)
    if best_u is None:
        raise errors.NumericalError(
            f'Every {kind.value} hyperparameter candidate was singular')

    spec = _spec_at(best_u, box, kind, best_nu)
    d_nn = _median_nearest_neighbour(dist)
    low_signal = spec.spatial_correlation(d_nn) < _LOW_SIGNAL_CORRELATION
    if low_signal:
        logging.warning(
            'Low spatial signal in %s fit: correlation %.3f at the median '
            'nearest-neighbour distance %.3g m', kind.value,
            spec.spatial_correlation(d_nn), d_nn)
    return dataclasses.replace(spec, low_spatial_signal=low_signal,
                               loglik=-best_value)


def predict(normalized_obs, obs_locs, target_locs, spec: CovarianceSpec,
            stats: Optional[NormalizationStats] = None) -> GpPosterior:
    """Kriging mean and variance at the targets, in normalized units."""
    y = torch.as_tensor(np.asarray(normalized_obs, dtype=np.float64))
    targets = np.asarray(target_locs, dtype=np.float64).reshape(-1, 2)
    factor = cholesky_with_jitter(
        _gram(pairwise_distances(obs_locs, obs_locs), spec), spec.variance)
    alpha = torch.cholesky_solve(y[:, None], factor, upper=False)
    cross = spec.kernel(pairwise_distances(targets, obs_locs))
    mean = (cross @ alpha).squeeze(-1)
    v = torch.linalg.solve_triangular(factor, cross.T, upper=False)
    var = torch.clamp(spec.variance - (v**2).sum(dim=0), min=0.0)
    stats = NormalizationStats(0.0, 1.0) if stats is None else stats
    return GpPosterior(targets=targets, mean=mean.numpy(), var=var.numpy(),
                       stats=stats, spec=spec)


def krige(values, obs_locs, target_locs,
          kernel: Union[KernelKind, CovarianceSpec],
          bounds: Optional[Tuple[float, float]] = None) -> GpPosterior:
    """Normalizes, fits (unless a spec is given), predicts and denormalizes.

    A fixed CovarianceSpec also allows a single observation or a constant
    vector, normalized with std 1.
    """
    values = np.asarray(values, dtype=np.float64)
    if isinstance(kernel, CovarianceSpec):
        if values.size >= 2 and np.std(values, ddof=1) > 0:
            normalized, stats = normalize(values)
        else:
            stats = NormalizationStats(float(np.mean(values)), 1.0)
            normalized = values - stats.mean
        spec = kernel
    else:
        normalized, stats = normalize(values)
        spec = fit_hyperparams(normalized, obs_locs, kernel, bounds=bounds)
    return denormalize(predict(normalized, obs_locs, target_locs, spec, stats))


def gaussian_upper_quantile(tau, mean, var):
    """Value exceeded with probability tau under N(mean, var)."""
    tau = float(tau)
    if not 0 < tau <= 0.5:
        raise ValueError(f'tau must lie in (0, 0.5], got {tau}')
    var_arr = np.asarray(var, dtype=np.float64)
    if np.any(var_arr < 0):
        raise ValueError('var must be nonnegative')
    result = np.asarray(mean, dtype=np.float64) \
        - np.sqrt(var_arr) * special.ndtri(tau)
    return float(result) if result.ndim == 0 else result
