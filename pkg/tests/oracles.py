"""Brute-force reference implementations shared by the tests.

Each one trades speed for obviousness: exact rationals, exhaustive search or
day-by-day accumulation.
"""

import itertools
import math
from datetime import timedelta
from fractions import Fraction


def per_day_oracle(start, end, amount):
    """Give each day its share of ``amount``, then bucket by month."""
    days = (end - start).days
    out = {}
    d = start
    while d < end:
        out[(d.year, d.month)] = out.get((d.year, d.month), 0.0) + amount / days
        d += timedelta(days=1)
    return out


def brute_ranks(values):
    """Rank by counting: 1 + smaller values + half the other equal values."""
    out = []
    for v in values:
        less = sum(1 for w in values if w < v)
        equal = sum(1 for w in values if w == v)
        out.append(Fraction(2 * less + equal + 1, 2))
    return out


def brute_metrics(est, ref):
    """(mse, mae, r2, rho, ranks_est, ranks_ref); r2/rho are None when undefined."""
    e = [Fraction(x) for x in est]
    r = [Fraction(x) for x in ref]
    n = len(e)
    mse = sum((a - b) ** 2 for a, b in zip(e, r)) / n
    mae = sum(abs(a - b) for a, b in zip(e, r)) / n
    mean_r = sum(r) / n
    ss_tot = sum((b - mean_r) ** 2 for b in r)
    r2 = 1 - mse * n / ss_tot if ss_tot else None
    rx, ry = brute_ranks(est), brute_ranks(ref)
    mx, my = sum(rx) / n, sum(ry) / n
    cov = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    vx = sum((a - mx) ** 2 for a in rx)
    vy = sum((b - my) ** 2 for b in ry)
    rho = float(cov) / math.sqrt(float(vx * vy)) if vx and vy else None
    return mse, mae, r2, rho, rx, ry


def exact_ssd(group):
    g = [Fraction(x) for x in group]
    m = sum(g) / len(g)
    return sum((x - m) ** 2 for x in g)


def brute_jenks(values, k):
    """Minimal within-class SSD over every contiguous k-partition, exactly."""
    xs = sorted(values)
    n = len(xs)
    best = None
    for cuts in itertools.combinations(range(1, n), k - 1):
        bounds = (0,) + cuts + (n,)
        cost = sum(exact_ssd(xs[a:b]) for a, b in zip(bounds, bounds[1:]))
        if best is None or cost < best:
            best = cost
    return best
