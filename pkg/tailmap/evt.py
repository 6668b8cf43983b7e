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
"""Peaks-over-threshold tail model of the SNR.

The lower SNR tail is mirrored into an upper tail with psi = -ln(gamma). The
excesses of psi over a fixed quantile threshold follow a generalized Pareto
distribution (GPD) with shape xi and scale sigma, which gives a closed-form
outage probability and its inverse.
"""

import dataclasses
import math
from typing import Tuple

import numpy as np
from scipy import integrate
from scipy import optimize

from tailmap import errors

# Below this |xi| the exponential limit of the GPD is used.
XI_EPS = 1e-8
# The likelihood is unbounded for xi <= -1.
_XI_MIN = -1.0
_MLE_MAX_ITER = 500
_PENALTY = 1e10


@dataclasses.dataclass(frozen=True)
class TailFit:
    # Threshold in the -ln domain.
    mu: float
    # GPD shape.
    xi: float
    # GPD scale, positive.
    sigma: float
    # Tail fraction parameter; the threshold is the rho-quantile.
    rho: float
    # Number of excesses used by the fit.
    n_exceed: int = 0

    @property
    def tail_mass(self) -> float:
        return 1.0 - self.rho

    def with_threshold(self, mu: float) -> 'TailFit':
        return dataclasses.replace(self, mu=mu)


def mirror_transform(gamma):
    """Maps linear SNR to psi = -ln(gamma)."""
    gamma_arr = np.asarray(gamma, dtype=np.float64)
    if np.any(~(gamma_arr > 0)):
        raise errors.DataError('mirror_transform needs positive SNR values')
    psi = -np.log(gamma_arr)
    return float(psi) if np.ndim(gamma) == 0 else psi


def dumouchel_threshold(psi_samples, rho: float) -> float:
    """Returns the empirical rho-quantile of psi.

    Samples are sorted ascending and the element at 1-based index
    ceil(rho * N) is returned, so exactly the samples strictly above it are
    exceedances.
    """
    if not 0 < rho < 1:
        raise ValueError(f'rho must lie in (0, 1), got {rho}')
    psi = np.sort(np.asarray(psi_samples, dtype=np.float64).ravel())
    n = psi.size
    min_n = math.ceil(round(1.0 / (1.0 - rho), 9))
    if n < min_n:
        raise errors.DataError(
            f'{n} samples leave no exceedance at rho={rho}; need {min_n}')
    k = math.ceil(round(rho * n, 9))
    mu = float(psi[k - 1])
    if not psi[-1] > mu:
        raise errors.DataError('No sample exceeds the threshold; the tail is '
                               'degenerate')
    return mu


def excesses(psi_samples, mu: float) -> np.ndarray:
    """Returns psi - mu for the samples strictly above mu, order kept."""
    if not math.isfinite(mu):
        raise ValueError(f'mu must be finite, got {mu}')
    psi = np.asarray(psi_samples, dtype=np.float64).ravel()
    z = psi[psi > mu] - mu
    if z.size == 0:
        raise errors.DataError(f'No exceedance above threshold {mu}')
    return z


def _log1p_ratio(z, xi, sigma):
    """log1p(xi * z / sigma) / xi, continued to z / sigma at xi = 0."""
    z = np.asarray(z, dtype=np.float64)
    xi = np.asarray(xi, dtype=np.float64)
    t = xi * z / sigma
    small = np.abs(xi) < XI_EPS
    safe_xi = np.where(small, 1.0, xi)
    with np.errstate(invalid='ignore', divide='ignore'):
        general = np.log1p(t) / safe_xi
    return np.where(small, z / sigma, general)


def gpd_cdf(z, xi: float, sigma: float):
    """GPD distribution function of an excess z >= 0.

    Beyond the finite endpoint -sigma / xi of a negative shape the CDF is 1.
    """
    z_arr = np.asarray(z, dtype=np.float64)
    if np.any(z_arr < 0):
        raise ValueError('gpd_cdf is defined for z >= 0')
    if not sigma > 0:
        raise ValueError(f'sigma must be positive, got {sigma}')
    beyond = (xi < 0) & (1 + xi * z_arr / sigma <= 0)
    inside = np.where(beyond, 0.0, z_arr)
    cdf = -np.expm1(-_log1p_ratio(inside, xi, sigma))
    cdf = np.where(beyond, 1.0, cdf)
    return float(cdf) if np.ndim(z) == 0 else cdf


def gpd_logpdf(z, xi: float, sigma: float):
    """GPD log density; -inf outside the support."""
    z_arr = np.asarray(z, dtype=np.float64)
    outside = (z_arr < 0) | (1 + xi * z_arr / sigma <= 0)
    inside = np.where(outside, 0.0, z_arr)
    if abs(xi) < XI_EPS:
        logpdf = -math.log(sigma) - inside / sigma
    else:
        logpdf = (-math.log(sigma)
                  - (1 + 1 / xi) * np.log1p(xi * inside / sigma))
    logpdf = np.where(outside, -np.inf, logpdf)
    return float(logpdf) if np.ndim(z) == 0 else logpdf


def gpd_loglik(z: np.ndarray, xi: float, sigma: float) -> float:
    """Total GPD log-likelihood of excesses z; -inf if any is unsupported."""
    if not sigma > 0:
        return -math.inf
    z = np.asarray(z, dtype=np.float64)
    if xi < 0 and np.any(1 + xi * z / sigma <= 0):
        return -math.inf
    return float(np.sum(gpd_logpdf(z, xi, sigma)))


def pwm_estimate(z: np.ndarray) -> Tuple[float, float]:
    """Probability-weighted-moments estimate of (xi, sigma).

    Valid for xi < 1/2; used as the starting point of the likelihood search.
    """
    z = np.sort(np.asarray(z, dtype=np.float64))
    n = z.size
    a0 = float(np.mean(z))
    p = (np.arange(1, n + 1) - 0.35) / n
    a1 = float(np.mean((1 - p) * z))
    denom = a0 - 2 * a1
    if denom <= 0:
        return 0.0, a0
    xi = 2 - a0 / denom
    sigma = 2 * a0 * a1 / denom
    return xi, sigma


def _neg_mean_loglik(params: np.ndarray, z: np.ndarray) -> float:
    xi, log_sigma = params
    if xi <= _XI_MIN:
        return _PENALTY
    ll = gpd_loglik(z, xi, math.exp(log_sigma))
    if not math.isfinite(ll):
        return _PENALTY
    return -ll / z.size


def _feasible_start(z: np.ndarray) -> np.ndarray:
    xi, sigma = pwm_estimate(z)
    if not (sigma > 0 and math.isfinite(xi) and _XI_MIN < xi < 1.0):
        xi, sigma = 0.0, float(np.mean(z))
    if xi < 0 and 1 + xi * z.max() / sigma <= 0:
        # Pull the endpoint just past the largest excess.
        xi = -0.9 * sigma / z.max()
    return np.array([xi, math.log(sigma)])


def fit_gpd_mle(z) -> Tuple[float, float, float]:
    """Maximum-likelihood GPD fit of excesses z.

    Maximizes the mean log-likelihood over (xi, ln sigma) with the
    Nelder-Mead simplex, starting from probability-weighted moments. A
    support violation is penalized. One restart from a perturbed start is
    made if the iteration budget runs out.

    Returns:
      (xi_hat, sigma_hat, loglik) with loglik the attained total.
    """
    z = np.sort(np.asarray(z, dtype=np.float64).ravel())
    if z.size < 2:
        raise errors.DataError(f'GPD fit needs at least 2 excesses, got '
                               f'{z.size}')
    if np.all(z == z[0]):
        raise errors.DataError('GPD fit needs excesses that are not all equal')
    start = _feasible_start(z)
    options = dict(maxiter=_MLE_MAX_ITER, xatol=1e-8, fatol=1e-12)
    result = optimize.minimize(_neg_mean_loglik, start, args=(z,),
                               method='Nelder-Mead', options=options)
    if not result.success:
        restart = result.x + np.array([0.05, 0.05])
        if _neg_mean_loglik(restart, z) >= _PENALTY:
            restart = start + np.array([0.0, 0.1])
        result = optimize.minimize(_neg_mean_loglik, restart, args=(z,),
                                   method='Nelder-Mead', options=options)
        if not result.success:
            raise errors.NumericalError(
                f'GPD likelihood search did not converge: {result.message}')
    xi, log_sigma = result.x
    sigma = math.exp(log_sigma)
    return float(xi), sigma, gpd_loglik(z, xi, sigma)


def fit_tail(samples, rho: float) -> TailFit:
    """Fits the lower SNR tail of linear samples."""
    psi = mirror_transform(np.asarray(samples, dtype=np.float64))
    mu = dumouchel_threshold(psi, rho)
    z = excesses(psi, mu)
    xi, sigma, _ = fit_gpd_mle(z)
    return TailFit(mu=mu, xi=xi, sigma=sigma, rho=rho, n_exceed=int(z.size))


def outage_probability(phi, rho, xi, sigma, mu):
    """Vectorized tail outage (1 - rho) * (1 + xi (phi - mu) / sigma)^(-1/xi).

    Targets below the threshold are not checked here; see tail_outage.
    """
    z = np.asarray(phi, dtype=np.float64) - mu
    xi = np.asarray(xi, dtype=np.float64)
    beyond = (xi < 0) & (1 + xi * z / sigma <= 0)
    inside = np.where(beyond, 0.0, z)
    survival = np.exp(-_log1p_ratio(inside, xi, sigma))
    return (1.0 - np.asarray(rho)) * np.where(beyond, 0.0, survival)


def tail_outage(phi: float, fit: TailFit) -> float:
    """Outage probability at the -ln domain target phi under a tail fit."""
    if phi < fit.mu:
        raise errors.OutsideTailError(
            f'phi={phi} lies below the threshold mu={fit.mu}; the outage is '
            f'at most {fit.tail_mass} but not resolvable by the tail model')
    return float(outage_probability(phi, fit.rho, fit.xi, fit.sigma, fit.mu))


def outage_inverse(zeta, rho, xi, sigma, mu):
    """Vectorized phi solving outage_probability(phi) = zeta.

    phi = (sigma / xi) [(zeta / (1 - rho))^(-xi) - 1] + mu, continued to
    sigma ln((1 - rho) / zeta) + mu at xi = 0.
    """
    log_ratio = np.log(np.asarray(zeta, dtype=np.float64)
                       / (1.0 - np.asarray(rho, dtype=np.float64)))
    xi = np.asarray(xi, dtype=np.float64)
    small = np.abs(xi) < XI_EPS
    safe_xi = np.where(small, 1.0, xi)
    general = sigma / safe_xi * np.expm1(-safe_xi * log_ratio)
    return np.where(small, -sigma * log_ratio, general) + mu


def invert_tail_outage(zeta: float, fit: TailFit) -> float:
    if not zeta > 0:
        raise ValueError(f'zeta must be positive, got {zeta}')
    if zeta > fit.tail_mass:
        raise errors.TargetAboveTailError(
            f'zeta={zeta} exceeds 1 - rho = {fit.tail_mass}; the target is met '
            'at the threshold itself')
    return float(outage_inverse(zeta, fit.rho, fit.xi, fit.sigma, fit.mu))


def rate_from_phi(phi):
    """Rate log2(1 + exp(-phi)) in bps/Hz, finite for any finite phi."""
    rate = np.logaddexp(0.0, -np.asarray(phi, dtype=np.float64)) / math.log(2)
    return float(rate) if np.ndim(phi) == 0 else rate


def _support_end(fit: TailFit) -> float:
    return -fit.sigma / fit.xi if fit.xi < -XI_EPS else math.inf


def bhattacharyya_gpd(fit1: TailFit, fit2: TailFit) -> float:
    """Bhattacharyya distance -ln of the integral of sqrt(g1 g2).

    Both fits are compared with a common zero threshold, integrating over the
    intersection of their supports.
    """
    upper = min(_support_end(fit1), _support_end(fit2))

    def integrand(z):
        return math.exp(0.5 * (gpd_logpdf(z, fit1.xi, fit1.sigma)
                               + gpd_logpdf(z, fit2.xi, fit2.sigma)))

    with np.errstate(all='ignore'):
        coefficient, _ = integrate.quad(integrand, 0.0, upper, epsabs=1e-10,
                                        epsrel=1e-10, limit=200)
    if not math.isfinite(coefficient) or coefficient <= 0:
        raise errors.DisjointSupportError(
            f'Bhattacharyya coefficient {coefficient} for {fit1} vs {fit2}')
    return max(0.0, -math.log(min(coefficient, 1.0)))
