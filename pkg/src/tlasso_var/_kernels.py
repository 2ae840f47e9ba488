"""Compiled inner loops for the coordinate-descent coefficient solver."""

from __future__ import annotations

import numpy as np
from numba import njit

_JIT_OPTIONS = {
    "nopython": True,
    "nogil": True,
    "cache": True,
    "fastmath": False,
    "boundscheck": False,
}


@njit(**_JIT_OPTIONS)
def soft_threshold(value: float, threshold: float) -> float:
    if value > threshold:
        return value - threshold
    if value < -threshold:
        return value + threshold
    return 0.0


@njit(**_JIT_OPTIONS)
def coordinate_descent(
    gram: np.ndarray,
    cross: np.ndarray,
    omega: np.ndarray,
    coef: np.ndarray,
    gradient: np.ndarray,
    penalty: float,
    tol: float,
    max_sweeps: int,
) -> int:
    """Minimise 1/2 tr(B' G B Omega) - tr(B' C) + penalty * |B|_1 in place.

    ``gram`` is X'X/N, ``cross`` is X'Y Omega / N and ``gradient`` must hold
    G B Omega for the starting ``coef``; both ``coef`` and ``gradient`` are
    updated in place. Sweeps alternate between the active set and full passes
    until no coordinate moves by more than ``tol`` in a full pass.

    Returns the number of sweeps performed.
    """

    n_features, n_targets = coef.shape
    sweeps = 0
    full_pass = True
    while sweeps < max_sweeps:
        max_move = 0.0
        for k in range(n_features):
            for j in range(n_targets):
                old = coef[k, j]
                if not full_pass and old == 0.0:
                    continue
                curvature = gram[k, k] * omega[j, j]
                if curvature <= 0.0:
                    continue
                partial = cross[k, j] - gradient[k, j] + curvature * old
                new = soft_threshold(partial, penalty) / curvature
                move = new - old
                if move == 0.0:
                    continue
                coef[k, j] = new
                for r in range(n_features):
                    scaled = gram[r, k] * move
                    if scaled == 0.0:
                        continue
                    for c in range(n_targets):
                        gradient[r, c] += scaled * omega[j, c]
                if abs(move) > max_move:
                    max_move = abs(move)
        sweeps += 1
        if max_move <= tol:
            if full_pass:
                break
            full_pass = True
        else:
            full_pass = False
    return sweeps
