#!/usr/bin/env python3
"""Independent oracle for the bid screens and group allocation.

Evaluates every screen straight from its textbook definition using exact
rational arithmetic (fractions) and prints the values frozen into the C++
tests. Run: python3 tests/oracles/screens_oracle.py
"""
from fractions import Fraction
from itertools import product
import math


def sample_var(xs):
    xs = [Fraction(x) for x in xs]
    m = sum(xs) / len(xs)
    return sum((x - m) ** 2 for x in xs) / (len(xs) - 1)


def screens(bids):
    b = sorted(Fraction(x) for x in bids)
    n = len(b)
    mean = sum(b) / n
    cv = math.sqrt(sample_var(b)) / float(mean)
    spd = (b[-1] - b[0]) / b[0]
    diffp = (b[1] - b[0]) / b[0]
    losing = b[1:]
    rd = None
    if len(losing) >= 2 and sample_var(losing) != 0:
        rd = float(b[1] - b[0]) / math.sqrt(sample_var(losing))
    gaps = [b[i + 1] - b[i] for i in range(n - 1)]
    mean_gap = sum(gaps) / (n - 1)
    rdnorm = None if mean_gap == 0 else (b[1] - b[0]) / mean_gap
    return dict(cv=cv, spd=float(spd), diffp=float(diffp), rd=rd,
                rdnorm=None if rdnorm is None else float(rdnorm))


def partitions_3_4(n):
    """All (fours, threes) with 4*fours + 3*threes == n, by enumeration."""
    return [(f, t) for f, t in product(range(n // 4 + 1), range(n // 3 + 1))
            if 4 * f + 3 * t == n]


if __name__ == "__main__":
    for v in [(100, 102, 110, 120), (100, 101, 200), (50, 100), (80, 100),
              (100, 100, 100)]:
        print(v, {k: (repr(x) if x is not None else "missing")
                  for k, x in screens(v).items()})
    print("partitions of 5:", partitions_3_4(5))
    for n in range(6, 33):
        best = max(partitions_3_4(n))
        print(n, f"{best[0]}x4 + {best[1]}x3")
