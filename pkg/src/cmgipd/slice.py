"""Univariate slice sampling with stepping out and shrinkage (Neal 2003)."""
from __future__ import annotations

import math


def slice_sample(x0, logf, rng, width=1.0, lower=-math.inf, upper=math.inf,
                 max_steps=32, logf0=None):
    """Return ``(x1, logf(x1))``, one slice-sampling transition from ``x0``.

    ``logf`` may return ``-inf`` outside the support; the bracket is also
    clipped to ``[lower, upper]`` so bounded supports never get evaluated
    outside.
    """
    fx = logf(x0) if logf0 is None else logf0
    log_y = fx - rng.standard_exponential()
    u = rng.random()
    left = x0 - width * u
    right = left + width
    j = int(max_steps * rng.random())
    k = max_steps - 1 - j
    while j > 0 and left > lower and logf(left) > log_y:
        left -= width
        j -= 1
    while k > 0 and right < upper and logf(right) > log_y:
        right += width
        k -= 1
    if left < lower:
        left = lower
    if right > upper:
        right = upper
    while True:
        x1 = left + rng.random() * (right - left)
        f1 = logf(x1)
        if f1 > log_y:
            return x1, f1
        if x1 < x0:
            left = x1
        else:
            right = x1
        if right - left <= 1e-14 * (1.0 + abs(x0)):
            return x0, fx
