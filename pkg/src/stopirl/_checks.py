"""Shared argument checks for the inverse solvers."""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch


def policies_indistinguishable(policies: np.ndarray, counts: np.ndarray, z: float = 4.0) -> bool:
    """Whether all environments' policies agree up to sampling noise.

    Every pair of environments and every (x, a) entry is compared with a
    two-proportion z statistic; the policies are declared indistinguishable
    when no statistic exceeds ``z``. With very large counts this reduces to
    exact equality.
    """
    p = np.asarray(policies, dtype=float)
    k = np.asarray(counts, dtype=float)
    M = p.shape[0]
    for m in range(M):
        for n in range(m + 1, M):
            diff = np.abs(p[m] - p[n])
            pooled = (p[m] * k[m][:, None] + p[n] * k[n][:, None]) / (k[m] + k[n])[:, None]
            se = np.sqrt(pooled * (1.0 - pooled) * (1.0 / k[m] + 1.0 / k[n])[:, None])
            if np.any(diff > z * se + 1e-12):
                return False
    return True


def as_cost_array(costs, shape) -> np.ndarray:
    """Stack per-environment cost matrices into an array of the expected shape."""
    arr = np.array([np.asarray(c, dtype=float) for c in costs])
    if arr.shape != tuple(shape):
        raise DimensionMismatch(f"costs have shape {arr.shape}, expected {tuple(shape)}")
    return arr
