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
"""Inverse normal CDF and inverse error function.

A rational approximation of the inverse normal CDF (relative error about
1e-9) is refined with one Newton step on the exact CDF, which brings the
result to double precision.
"""

import numpy as np
from scipy import special as sp_special

# Central region, |p - 0.5| <= 0.5 - _P_LOW.
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
# Tail region.
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425
_SQRT_2PI = np.sqrt(2 * np.pi)


def _polyval(coeffs, x):
    result = np.zeros_like(x)
    for c in coeffs:
        result = result * x + c
    return result


def _lower_half(p: np.ndarray) -> np.ndarray:
    """Inverse normal CDF for p in (0, 0.5]."""
    x = np.empty_like(p)
    tail = p < _P_LOW
    if tail.any():
        q = np.sqrt(-2 * np.log(p[tail]))
        x[tail] = (_polyval(_C, q) / (_polyval(_D, q) * q + 1))
    central = ~tail
    if central.any():
        q = p[central] - 0.5
        r = q * q
        x[central] = _polyval(_A, r) * q / (_polyval(_B, r) * r + 1)
    # Newton polish on Phi(x) - p.
    err = 0.5 * sp_special.erfc(-x / np.sqrt(2)) - p
    x = x - err * _SQRT_2PI * np.exp(0.5 * x * x)
    return x


def ndtri(p):
    """Returns x such that Phi(x) = p, for p in (0, 1).

    Upper-half probabilities are reflected, 1 - p being exact there, so the
    polish always runs where the CDF has full relative precision.
    """
    p_arr = np.asarray(p, dtype=np.float64)
    if np.any((p_arr <= 0) | (p_arr >= 1)):
        raise ValueError('ndtri is defined on (0, 1) only.')
    flat = np.atleast_1d(p_arr).ravel()
    upper = flat > 0.5
    lower = np.where(upper, 1.0 - flat, flat)
    x = _lower_half(lower)
    x = np.where(upper, -x, x).reshape(p_arr.shape)
    return float(x) if np.ndim(p) == 0 else x


def erfinv(y):
    """Returns x such that erf(x) = y, for y in (-1, 1)."""
    y_arr = np.asarray(y, dtype=np.float64)
    if np.any((y_arr <= -1) | (y_arr >= 1)):
        raise ValueError('erfinv is defined on (-1, 1) only.')
    x = np.asarray(ndtri(0.5 * (y_arr + 1.0))) / np.sqrt(2)
    return float(x) if np.ndim(y) == 0 else x
