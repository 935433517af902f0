"""Brute-force references kept independent of the library code paths."""

import math
from collections import Counter
from fractions import Fraction


def _h(counts):
    n = sum(counts)
    return -sum(c / n * math.log(c / n, 2) for c in counts if c)


def max_gain_midpoint(points, tol=1e-12):
    """Exhaustive search over every midpoint of adjacent distinct values.

    ``points`` are ``(value, is_covert)``. Ties go to the smallest midpoint.
    """
    values = sorted({Fraction(v) for v, _ in points})
    base = _h(Counter(c for _, c in points).values())
    best = None
    for a, b in zip(values, values[1:]):
        cut = (a + b) / 2
        left = Counter(c for v, c in points if Fraction(v) < cut)
        right = Counter(c for v, c in points if Fraction(v) >= cut)
        nl, nr = sum(left.values()), sum(right.values())
        n = nl + nr
        gain = base - nl / n * _h(left.values()) - nr / n * _h(right.values())
        if best is None or gain > best[1] + tol:
            best = (cut, gain)
    return best
