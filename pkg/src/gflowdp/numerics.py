"""Log-space numeric helpers shared by the DP solvers and objectives.

Everything that sums flows, path counts, or probabilities goes through the
max-shifted logsumexp here; path counts overflow 64-bit integers long before
the grids get interesting, so linear-space arithmetic is never an option.
"""

from __future__ import annotations

import numpy as np

NEG_INF = float("-inf")


def logsumexp(values) -> float:
    """Stable log(sum(exp(values))) of a 1-D array; empty input gives -inf."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return NEG_INF
    m = float(arr.max())
    if not np.isfinite(m):
        # all -inf stays -inf; +inf/nan propagate
        return m
    return m + float(np.log(np.exp(arr - m).sum()))


def log_softmax(values) -> np.ndarray:
    """Log-probabilities proportional to exp(values); all -inf is an error."""
    arr = np.asarray(values, dtype=float)
    total = logsumexp(arr)
    if not np.isfinite(total):
        raise ValueError("log_softmax needs at least one finite entry")
    return arr - total


def softmax(values) -> np.ndarray:
    return np.exp(log_softmax(values))


def entropy_from_log_probs(log_p) -> float:
    """Shannon entropy -sum p*log(p) with the 0*log(0)=0 convention."""
    log_p = np.asarray(log_p, dtype=float)
    p = np.exp(log_p)
    mask = p > 0.0
    return float(-(p[mask] * log_p[mask]).sum())
