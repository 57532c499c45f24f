"""Exact-arithmetic partition oracles for cross-checking the fast recursions.

Everything here recomputes moment/cumulant/partial-coefficient sums by brute
force over explicitly enumerated non-crossing partitions, in Fraction
arithmetic.  It is factorially slow and exists only so the O(K^2)
generating-function recursions in rotamp.freeprob can be validated against an
independent construction.
"""

from fractions import Fraction
from functools import lru_cache
from itertools import combinations, product

# ---------------------------------------------------------------------------
# enumeration


@lru_cache(maxsize=None)
def _partitions_of(elems, even_only):
    # elems is an increasing tuple of integers occupying a contiguous run.
    # The block containing elems[0] is elems[0] plus any subset of the rest;
    # non-crossing forces the gaps between consecutive chosen members to be
    # partitioned independently of everything outside them.
    if not elems:
        return ((),)
    first, rest = elems[0], elems[1:]
    out = []
    for r in range(len(rest) + 1):
        if even_only and (r + 1) % 2:
            continue
        for members in combinations(range(len(rest)), r):
            block = (first,) + tuple(rest[i] for i in members)
            segs = []
            lo = 0
            ok = True
            for b in members + (len(rest),):
                seg = rest[lo:b]
                if even_only and len(seg) % 2:
                    ok = False
                    break
                segs.append(seg)
                lo = b + 1
            if not ok:
                continue
            for combo in product(*[_partitions_of(s, even_only) for s in segs]):
                merged = (block,)
                for sub in combo:
                    merged += sub
                out.append(merged)
    return tuple(out)


def noncrossing(n):
    """All non-crossing partitions of {1,..,n}, each a tuple of blocks."""
    return _partitions_of(tuple(range(1, n + 1)), False)


def noncrossing_even(n):
    """Non-crossing partitions of {1,..,n} with every block of even size."""
    assert n % 2 == 0
    return _partitions_of(tuple(range(1, n + 1)), True)


def restrict(parts, l):
    """Keep only partitions where no block is contained in {1,..,l}."""
    return [p for p in parts if all(max(b) > l for b in p)]


# ---------------------------------------------------------------------------
# square-case sums: weight of a partition is the product of kappa_{|S|}


def moment_nc(kappa, k):
    """m_k as the sum over NC(k) of prod kappa_{|S|}; kappa[0] is kappa_1."""
    if k == 0:
        return Fraction(1)
    total = Fraction(0)
    for part in noncrossing(k):
        w = Fraction(1)
        for block in part:
            w *= Fraction(kappa[len(block) - 1])
        total += w
    return total


def partial_coeff_nc(kappa, k, j):
    """c_{k,j}: same sum as moment_nc(k+j) but no block inside {1,..,j}."""
    if k == 0:
        return Fraction(1 if j == 0 else 0)
    total = Fraction(0)
    for part in restrict(noncrossing(k + j), j):
        w = Fraction(1)
        for block in part:
            w *= Fraction(kappa[len(block) - 1])
        total += w
    return total


# ---------------------------------------------------------------------------
# rectangular-case sums: even blocks only, gamma-weighted by the parity of
# each block's minimum (e counts even minima, o counts odd minima)


def _rect_weight(part, kappa_even, gamma):
    we = Fraction(1)
    wo = Fraction(1)
    for block in part:
        kap = Fraction(kappa_even[len(block) // 2 - 1])
        we *= kap
        wo *= kap
        if min(block) % 2 == 0:
            we *= Fraction(gamma)
        else:
            wo *= Fraction(gamma)
    return we, wo


def rect_moment_nc(kappa_even, gamma, two_k):
    """(m_{2k}, mbar_{2k}) by enumeration; kappa_even[0] is kappa_2."""
    if two_k == 0:
        return Fraction(1), Fraction(1)
    me = Fraction(0)
    mo = Fraction(0)
    for part in noncrossing_even(two_k):
        we, wo = _rect_weight(part, kappa_even, gamma)
        me += we
        mo += wo
    return me, mo


def rect_partial_coeff_nc(kappa_even, gamma, k, j):
    """(c_{k,j}, cbar_{k,j}) by enumeration over the restricted partitions.

    Even k=2p sums over even-block partitions of {1,..,2p+2j} avoiding
    {1,..,2j}; odd k=2p+1 sums over partitions of {1,..,2p+2j+2} avoiding
    {1,..,2j+1}.  c uses the even-minima gamma weight, cbar the odd-minima one.
    """
    if k == 0:
        v = Fraction(1 if j == 0 else 0)
        return v, v
    if k % 2 == 0:
        n, l = k + 2 * j, 2 * j
    else:
        n, l = k + 2 * j + 1, 2 * j + 1
    ce = Fraction(0)
    co = Fraction(0)
    for part in restrict(noncrossing_even(n), l):
        we, wo = _rect_weight(part, kappa_even, gamma)
        ce += we
        co += wo
    return ce, co
