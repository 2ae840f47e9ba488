"""Digamma function used by the degrees-of-freedom estimating equation."""

from __future__ import annotations

import numpy as np

from .errors import ParameterError

# Bernoulli-number coefficients B_2k / (2k) of the asymptotic expansion.
_ASYMPTOTIC = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
)
_SHIFT_THRESHOLD = 6.0


def digamma(x: float | np.ndarray) -> float | np.ndarray:
    """Evaluate psi(x) = d/dx log Gamma(x) for x > 0.

    The argument is shifted upward with psi(x) = psi(x + 1) - 1/x until it is at
    least 6, where the asymptotic series
    log x - 1/(2x) - sum_k B_2k / (2k x^2k) is accurate to about 1e-13.

    Raises:
        ParameterError: If any argument is not strictly positive.
    """

    values = np.array(x, dtype=float, copy=True)
    if np.any(~(values > 0)):
        raise ParameterError("digamma is only implemented for positive arguments")
    shift = np.zeros_like(values)
    small = values < _SHIFT_THRESHOLD
    while np.any(small):
        shift[small] -= 1.0 / values[small]
        values[small] += 1.0
        small = values < _SHIFT_THRESHOLD
    inverse_square = 1.0 / (values * values)
    series = np.zeros_like(values)
    for coefficient in reversed(_ASYMPTOTIC):
        series = (series + coefficient) * inverse_square
    result = shift + np.log(values) - 0.5 / values - series
    if result.ndim == 0:
        return float(result)
    return result
