"""Free-probability calculus used throughout the package.

Moment/cumulant conversion for square and rectangular ensembles,
partial-moment coefficient tables, and the series and integral transforms
built on top of them (R, S, Cauchy, and the rectangular phi/D family).

Conventions
-----------
Square sequences are indexed kappa_1..kappa_K and m_1..m_K.  Rectangular
sequences hold the even orders only, kappa_2, kappa_4, ..., kappa_{2K} and
m_2, ..., m_{2K}, together with an aspect ratio gamma = m/n; the barred
companions are kappa_bar_{2k} = gamma*kappa_{2k} and m_bar_{2k} =
gamma*m_{2k} (with m_bar_0 = 1).

All recursions here are dtype-generic: the same code path runs on floats,
Fractions, or gmpy2.mpfr values.  Extended precision matters because the
moment-to-cumulant recursion loses digits to cancellation at high order,
while several downstream series need a hundred or more cumulant terms.
"""

import math
from collections import namedtuple
from dataclasses import dataclass

import numpy as np

from .errors import (
    InsufficientCumulants,
    InverseOutOfRange,
    OutOfDomain,
    QuadratureFailure,
    RadiusExceeded,
)

__all__ = [
    "CumulantTable",
    "PartialMomentTable",
    "free_cumulants_from_moments",
    "moments_from_free_cumulants",
    "rect_cumulants_from_moments",
    "rect_moments_from_cumulants",
    "partial_moment_coeffs",
    "rect_partial_moment_coeffs",
    "r_transform",
    "r_transform_deriv",
    "s_transform",
    "SeriesValue",
    "cauchy_transform",
    "cauchy_transform_deriv",
    "cauchy_inverse",
    "phi_transform",
    "phibar_transform",
    "d_transform",
    "d_inverse",
    "t_of_z",
    "phi_transform_deriv",
    "d_transform_deriv",
    "r_transform_from_law",
    "r_transform_deriv_from_law",
]


# ---------------------------------------------------------------------------
# moment <-> free cumulant conversion, square case
#
# Both directions share one dynamic program over the coefficients
# C[j][i] = [z^i] H(z)^j where H(z) = z + m_1 z^2 + m_2 z^3 + ...; the moment
# of order k is sum_j kappa_j * C[j][k], and the j = k term is kappa_k itself,
# which is what makes the inverse direction a one-line rearrangement.


def _square_recursion(moments=None, cumulants=None):
    src = moments if moments is not None else cumulants
    K = len(src)
    zero = src[0] * 0
    one = zero + 1
    h = [zero, one]  # h[i] = [z^i] H(z); grows as moments are discovered
    C = {}
    mom = []
    kap = []
    for k in range(1, K + 1):
        C[(1, k)] = h[k]
        for j in range(2, k + 1):
            acc = zero
            for p in range(1, k - j + 2):
                acc = acc + h[p] * C[(j - 1, k - p)]
            C[(j, k)] = acc
        if moments is None:
            m_k = zero
            for j in range(1, k + 1):
                m_k = m_k + cumulants[j - 1] * C[(j, k)]
            mom.append(m_k)
        else:
            acc = zero
            for j in range(1, k):
                acc = acc + kap[j - 1] * C[(j, k)]
            kap.append(moments[k - 1] - acc)
            mom.append(moments[k - 1])
        h.append(mom[-1])
    return mom if moments is None else kap


def moments_from_free_cumulants(cumulants):
    """Moments m_1..m_K from free cumulants kappa_1..kappa_K.

    Evaluates the non-crossing moment-cumulant relations through their
    generating-function recursion (no partition enumeration), so the cost is
    O(K^3) coefficient operations.
    """
    if len(cumulants) == 0:
        return []
    return _square_recursion(cumulants=list(cumulants))


def free_cumulants_from_moments(moments):
    """Free cumulants kappa_1..kappa_K from moments m_1..m_K.

    Exact inverse of :func:`moments_from_free_cumulants` up to rounding in
    the working dtype.  High orders cancel severely; pass gmpy2.mpfr inputs
    when more than a few dozen orders are needed.
    """
    if len(moments) == 0:
        return []
    return _square_recursion(moments=list(moments))


# ---------------------------------------------------------------------------
# moment <-> cumulant conversion, rectangular case
#
# The even-moment generating function M(z) = sum_k m_{2k} z^k satisfies
# M(z) = R(z * Q(z)) with Q(z) = (gamma*M(z)+1)(M(z)+1) and R the rectangular
# cumulant series.  The dynamic program tracks QP[j][i] = [z^i] Q(z)^j, giving
# m_{2k} = sum_j kappa_{2j} * QP[j][k-j] with leading term kappa_{2k}.


def _rect_recursion(gamma, moments=None, cumulants=None):
    src = moments if moments is not None else cumulants
    K = len(src)
    zero = src[0] * 0
    one = zero + 1
    g = zero + gamma
    q = [one]  # q[i] = [z^i] Q(z)
    QP = {}
    mom = []
    kap = []
    for k in range(1, K + 1):
        for j in range(1, k + 1):
            i = k - j
            if j == 1:
                QP[(1, i)] = q[i]
            elif i == 0:
                QP[(j, 0)] = one
            else:
                acc = zero
                for p in range(0, i + 1):
                    acc = acc + q[p] * QP[(j - 1, i - p)]
                QP[(j, i)] = acc
        if moments is None:
            m_k = zero
            for j in range(1, k + 1):
                m_k = m_k + cumulants[j - 1] * QP[(j, k - j)]
            mom.append(m_k)
        else:
            acc = zero
            for j in range(1, k):
                acc = acc + kap[j - 1] * QP[(j, k - j)]
            kap.append(moments[k - 1] - acc)
            mom.append(moments[k - 1])
        # extend Q by one coefficient now that m_{2k} is known
        conv = zero
        for a in range(1, k):
            conv = conv + mom[a - 1] * mom[k - a - 1]
        q.append((one + g) * mom[k - 1] + g * conv)
    return mom if moments is None else kap


def rect_moments_from_cumulants(even_cumulants, gamma):
    """Even moments m_2..m_{2K} from rectangular free cumulants."""
    if len(even_cumulants) == 0:
        return []
    return _rect_recursion(gamma, cumulants=list(even_cumulants))


def rect_cumulants_from_moments(even_moments, gamma):
    """Rectangular free cumulants kappa_2..kappa_{2K} from even moments.

    gamma is the aspect ratio m/n of the underlying rectangular ensemble.
    The first two orders reduce to kappa_2 = m_2 and
    kappa_4 = m_4 - (1+gamma)*m_2^2.
    """
    if len(even_moments) == 0:
        return []
    return _rect_recursion(gamma, moments=list(even_moments))


# ---------------------------------------------------------------------------
# cumulant tables


@dataclass(frozen=True)
class CumulantTable:
    """Moments and free cumulants of one spectral law, kept side by side.

    kind is "square" or "rectangular".  For the rectangular kind, moments
    and cumulants hold the even orders 2,4,..,2K, gamma is the aspect ratio,
    bar_cumulants[k-1] = gamma*cumulants[k-1], and bar_moments has one extra
    leading entry for order zero: (1, gamma*m_2, gamma*m_4, ...).
    """

    kind: str
    moments: tuple
    cumulants: tuple
    gamma: object = None
    bar_moments: tuple = None
    bar_cumulants: tuple = None

    @classmethod
    def from_moments(cls, moments, kind="square", gamma=None):
        moments = tuple(moments)
        if kind == "square":
            return cls(kind, moments, tuple(free_cumulants_from_moments(moments)))
        if kind == "rectangular":
            if gamma is None:
                raise ValueError("rectangular tables need an aspect ratio gamma")
            kap = tuple(rect_cumulants_from_moments(moments, gamma))
            return cls(
                kind,
                moments,
                kap,
                gamma=gamma,
                bar_moments=(moments[0] * 0 + 1,) + tuple(gamma * m for m in moments),
                bar_cumulants=tuple(gamma * k for k in kap),
            )
        raise ValueError("kind must be 'square' or 'rectangular'")

    @classmethod
    def from_cumulants(cls, cumulants, kind="square", gamma=None):
        cumulants = tuple(cumulants)
        if kind == "square":
            return cls(kind, tuple(moments_from_free_cumulants(cumulants)), cumulants)
        if kind == "rectangular":
            if gamma is None:
                raise ValueError("rectangular tables need an aspect ratio gamma")
            mom = tuple(rect_moments_from_cumulants(cumulants, gamma))
            return cls(
                kind,
                mom,
                cumulants,
                gamma=gamma,
                bar_moments=(cumulants[0] * 0 + 1,) + tuple(gamma * m for m in mom),
                bar_cumulants=tuple(gamma * k for k in cumulants),
            )
        raise ValueError("kind must be 'square' or 'rectangular'")


def _to_table(rows, J):
    arr = [list(r[: J + 1]) for r in rows]
    plain = all(
        isinstance(v, (int, float, np.integer, np.floating)) for r in arr for v in r
    )
    if plain:
        return np.array(arr, dtype=float)
    # exact or extended-precision entries: keep them untouched
    out = np.empty((len(arr), J + 1), dtype=object)
    for i, r in enumerate(arr):
        out[i] = r
    return out


@dataclass(frozen=True)
class PartialMomentTable:
    """Coefficient table c[k, j] for 0 <= k <= K, 0 <= j <= J.

    c[k, j] sums the cumulant product over non-crossing partitions of k+j
    points in which no block sits entirely inside the first j points; row 0
    is (1, 0, 0, ...) and row k=1 is the shifted cumulant sequence.  The
    rectangular kind carries the companion table c_bar with the
    odd/even-minimum weighting swapped, and row indices alternate between
    the odd and even recursions.
    """

    kind: str
    c: np.ndarray
    c_bar: np.ndarray = None


def partial_moment_coeffs(cumulants, K, J):
    """Square-case table of partial-moment coefficients.

    Needs cumulants kappa_1..kappa_{K+J}.  Fills rows by the descent
    recursion c[k, j] = sum_{m=0}^{j+1} c[k-1, m] * kappa_{j+1-m} with the
    kappa_0 = 1 convention; interior rows are kept wide enough that the
    returned (K+1) x (J+1) block is exact.
    """
    kap = list(cumulants)
    if K < 0 or J < 0:
        raise ValueError("table extents must be nonnegative")
    if K > 0 and len(kap) < K + J:
        raise InsufficientCumulants(
            "need %d cumulants for a (%d, %d) table, got %d"
            % (K + J, K, J, len(kap))
        )
    zero = (kap[0] if kap else 0.0) * 0
    one = zero + 1
    kap0 = [one] + kap  # kap0[i] = kappa_i with kappa_0 = 1
    width = J + K  # row k is used up to column J + (K - k)
    row = [one] + [zero] * width
    rows = [row]
    for k in range(1, K + 1):
        prev = rows[-1]
        w = J + (K - k)
        cur = []
        for j in range(w + 1):
            acc = zero
            for m in range(j + 2):
                acc = acc + prev[m] * kap0[j + 1 - m]
            cur.append(acc)
        rows.append(cur)
    return PartialMomentTable(kind="square", c=_to_table(rows, J))


def rect_partial_moment_coeffs(even_cumulants, gamma, K, J):
    """Rectangular table of partial-moment coefficients c and c_bar.

    Row k of each table follows the parity-alternating recursions: odd rows
    consume one cumulant order and widen by one column, even rows convolve
    with the barred (respectively unbarred) sequence at the same width.
    Satisfies c_bar[k, j] = gamma * c[k, j] identically on odd rows,
    c[2k, 0] = m_{2k}, and c[1, j] = kappa_{2(j+1)}.
    """
    kap = list(even_cumulants)
    if K < 0 or J < 0:
        raise ValueError("table extents must be nonnegative")
    odd_rows_below = [0] * (K + 1)
    for k in range(K - 1, -1, -1):
        odd_rows_below[k] = odd_rows_below[k + 1] + ((k + 1) % 2)
    needed = J + odd_rows_below[0] if K > 0 else 0
    if K > 0 and len(kap) < needed:
        raise InsufficientCumulants(
            "need %d even cumulants for a (%d, %d) table, got %d"
            % (needed, K, J, len(kap))
        )
    zero = (kap[0] if kap else 0.0) * 0
    one = zero + 1
    g = zero + gamma
    kap0 = [one] + kap            # kappa_{2i} with order-0 term 1
    bkap0 = [one] + [g * v for v in kap]  # gamma-scaled companion
    width0 = J + odd_rows_below[0]
    c_rows = [[one] + [zero] * width0]
    b_rows = [[one] + [zero] * width0]
    for k in range(1, K + 1):
        w = J + odd_rows_below[k]
        pc, pb = c_rows[-1], b_rows[-1]
        cc, cb = [], []
        if k % 2 == 1:
            for j in range(w + 1):
                ac = zero
                ab = zero
                for m in range(j + 2):
                    ac = ac + pc[m] * kap0[j + 1 - m]
                    ab = ab + pb[m] * bkap0[j + 1 - m]
                cc.append(ac)
                cb.append(ab)
        else:
            for j in range(w + 1):
                ac = zero
                ab = zero
                for m in range(j + 1):
                    ac = ac + pc[m] * bkap0[j - m]
                    ab = ab + pb[m] * kap0[j - m]
                cc.append(ac)
                cb.append(ab)
        c_rows.append(cc)
        b_rows.append(cb)
    return PartialMomentTable(
        kind="rectangular", c=_to_table(c_rows, J), c_bar=_to_table(b_rows, J)
    )


# ---------------------------------------------------------------------------
# series transforms
#
# R(x) = sum_k kappa_k x^{k-1} (square) or sum_k kappa_{2k} x^k (rectangular).
# Truncation control: with a spectral bound M the cumulants obey
# |kappa_k| <= (16M)^k and |kappa_{2k}| <= max(gamma,1)^k (16M)^{2k}, giving a
# certified geometric tail.  Without M we fall back to a ratio test on the
# computed terms; SeriesValue.certified records which route was taken.

SeriesValue = namedtuple("SeriesValue", ["value", "tail_bound", "certified"])

_RATIO_MARGIN = 1.1  # safety factor on the empirical term ratio


def _geom_ratio(kind, gamma, spectral_bound, x_abs):
    b = 16.0 * float(spectral_bound)
    if kind == "square":
        return b * x_abs, b
    return max(float(gamma), 1.0) * b * b * x_abs, max(float(gamma), 1.0) * b * b


def _heuristic_tail(terms, tol):
    # geometric extrapolation from the trailing nonzero terms; per-step
    # ratios are gap-normalized so that series with structural zeros (every
    # odd coefficient of a symmetric law, say) still yield a usable rate
    mags = [abs(t) for t in terms]
    nz = [i for i, v in enumerate(mags) if v > 0]
    if not nz:
        return 0.0, True
    if len(mags) - 1 - nz[-1] >= 2:
        # at least two trailing zero terms: treat as a terminating series
        return 0.0, True
    steps = []
    for a, b in zip(nz, nz[1:]):
        steps.append(float(mags[b] / mags[a]) ** (1.0 / (b - a)))
    tail_steps = steps[-4:]
    if not tail_steps:
        return math.inf, False
    rho = max(tail_steps) * _RATIO_MARGIN
    if rho >= 1.0:
        return math.inf, False
    est = float(mags[nz[-1]]) * rho / (1.0 - rho)
    return est, est <= tol


def _series(coeff_of, n_terms, x, kind, gamma, spectral_bound, tol, tail_weight):
    """Shared evaluator: value, tail bound, certification flag.

    coeff_of(k) must return the k-th term of the series already including
    any derivative prefactor; tail_weight(k, rho, base) bounds the magnitude
    of the unseen k-th term under the certified cumulant growth bound.
    """
    zero = x * 0
    value = zero
    terms = []
    for k in range(1, n_terms + 1):
        t = coeff_of(k)
        terms.append(t)
        value = value + t
    x_abs = abs(float(x))
    if spectral_bound is not None:
        rho, base = _geom_ratio(kind, gamma, spectral_bound, x_abs)
        if rho >= 1.0:
            raise RadiusExceeded(
                "argument %g outside certified radius (geometric ratio %.3g >= 1)"
                % (float(x), rho)
            )
        tail = tail_weight(n_terms, rho, base)
        if tail > tol:
            raise RadiusExceeded(
                "certified tail %.3g exceeds tolerance %.3g; supply more "
                "cumulants or a tighter spectral bound" % (tail, tol)
            )
        return SeriesValue(value, tail, True)
    tail, ok = _heuristic_tail(terms, tol)
    if not ok:
        raise RadiusExceeded(
            "cannot certify series tail at x=%g from %d terms "
            "(heuristic ratio test failed)" % (float(x), n_terms)
        )
    return SeriesValue(value, tail, False)


def _pow(x, n):
    out = x * 0 + 1
    for _ in range(n):
        out = out * x
    return out


def r_transform(
    cumulants, x, kind="square", gamma=None, spectral_bound=None,
    tol=1e-12, full_output=False,
):
    """Evaluate the R-transform series at x from a finite cumulant list.

    Square kind sums kappa_k x^{k-1}; rectangular sums kappa_{2k} x^k.
    With spectral_bound=M the truncation error is certified from the
    cumulant growth bound; otherwise a ratio test on the computed terms is
    used and the result is flagged as heuristic.  Raises RadiusExceeded when
    neither route can push the tail bound below tol.
    """
    kap = list(cumulants)
    K = len(kap)
    if kind == "square":
        def coeff(k):
            return kap[k - 1] * _pow(x, k - 1)

        def tail_w(N, rho, base):
            return base * rho ** N / (1.0 - rho)
    else:
        def coeff(k):
            return kap[k - 1] * _pow(x, k)

        def tail_w(N, rho, base):
            return rho ** (N + 1) / (1.0 - rho)

    out = _series(coeff, K, x, kind, gamma, spectral_bound, tol, tail_w)
    return out if full_output else out.value


def r_transform_deriv(
    cumulants, x, kind="square", gamma=None, spectral_bound=None,
    tol=1e-12, full_output=False,
):
    """Derivative of the R-transform series at x; same contract as r_transform."""
    kap = list(cumulants)
    K = len(kap)
    if kind == "square":
        def coeff(k):
            if k == 1:
                return x * 0
            return kap[k - 1] * (k - 1) * _pow(x, k - 2)

        def tail_w(N, rho, base):
            # sum_{k > N} (k-1) base^2 rho^{k-2}
            return base * base * rho ** (N - 1) * (N * (1 - rho) + rho) / (1 - rho) ** 2
    else:
        def coeff(k):
            return kap[k - 1] * k * _pow(x, k - 1)

        def tail_w(N, rho, base):
            # sum_{k > N} k base rho^{k-1}
            return base * rho ** N * ((N + 1) * (1 - rho) + rho) / (1 - rho) ** 2

    out = _series(coeff, K, x, kind, gamma, spectral_bound, tol, tail_w)
    return out if full_output else out.value


def s_transform(
    even_cumulants, x, gamma=None, spectral_bound=None, tol=1e-12,
    full_output=False,
):
    """(R(x)/x)' for the rectangular series: sum_{k>=2} (k-1) kappa_{2k} x^{k-2}."""
    kap = list(even_cumulants)
    K = len(kap)

    def coeff(k):
        if k == 1:
            return x * 0
        return kap[k - 1] * (k - 1) * _pow(x, k - 2)

    def tail_w(N, rho, base):
        return base * base * rho ** (N - 1) * (N * (1 - rho) + rho) / (1 - rho) ** 2

    out = _series(coeff, K, x, "rectangular", gamma, spectral_bound, tol, tail_w)
    return out if full_output else out.value


# ---------------------------------------------------------------------------
# integral transforms of a spectral law
#
# `law` is duck-typed: it must provide support() -> (lo, hi) and
# expect(f) -> float evaluating E[f(Lambda)] to 1e-10 absolute.  All
# evaluations sit strictly outside the support, on the decreasing branch.

_BRACKET_START = 1e-9
_BRACKET_WIDTH = 1e6
_BRACKET_CAP = 1e15


def cauchy_transform(law, z):
    """G(z) = E[1/(z - Lambda)] for z strictly above the support."""
    lo, hi = law.support()
    if z <= hi:
        raise OutOfDomain("z=%g is not above the support sup %g" % (z, hi))
    return law.expect(lambda lam: 1.0 / (z - lam))


def cauchy_transform_deriv(law, z):
    """G'(z) = -E[1/(z - Lambda)^2] on the same branch as cauchy_transform."""
    lo, hi = law.support()
    if z <= hi:
        raise OutOfDomain("z=%g is not above the support sup %g" % (z, hi))
    return -law.expect(lambda lam: 1.0 / (z - lam) ** 2)


def _bisect_decreasing(fun, target, edge, label):
    """Solve fun(z) = target for a strictly decreasing fun on (edge, inf).

    Soft-edge laws cannot be integrated accurately arbitrarily close to the
    edge; a QuadratureFailure there is read as "above the target" (the
    branch is decreasing, so values at the edge dominate the whole branch),
    and the final residual check catches targets the branch never attains.
    """
    if target <= 0.0:
        raise InverseOutOfRange("%s target %g is not positive" % (label, target))

    def probe(z):
        try:
            return fun(z)
        except QuadratureFailure:
            return math.inf

    lo = edge + _BRACKET_START
    hi = edge + _BRACKET_WIDTH
    while probe(hi) > target:
        hi = edge + (hi - edge) * 4.0
        if hi - edge > _BRACKET_CAP:
            raise InverseOutOfRange(
                "%s target %g too small to bracket below z = edge + %g"
                % (label, target, _BRACKET_CAP)
            )
    while hi - lo > 1e-12:
        mid = 0.5 * (lo + hi)
        if probe(mid) > target:
            lo = mid
        else:
            hi = mid
    z = 0.5 * (lo + hi)
    val = probe(z)
    if not abs(val - target) <= 1e-6 * (1.0 + abs(target)):
        raise InverseOutOfRange(
            "%s target %g is not attained on the decreasing branch "
            "(closest value %g at z = %g)" % (label, target, val, z)
        )
    return z


def cauchy_inverse(law, g):
    """z with G(z) = g on the decreasing branch above the support."""
    _, hi = law.support()
    return _bisect_decreasing(lambda z: cauchy_transform(law, z), g, hi, "G^{-1}")


def phi_transform(law, z):
    """phi(z) = E[z/(z^2 - Lambda^2)] for a singular-value law, z above it."""
    lo, hi = law.support()
    if z <= hi:
        raise OutOfDomain("z=%g is not above the support sup %g" % (z, hi))
    return law.expect(lambda lam: z / (z * z - lam * lam))


def phibar_transform(law, z, gamma):
    """phibar(z) = gamma*phi(z) + (1-gamma)/z."""
    return gamma * phi_transform(law, z) + (1.0 - gamma) / z


def d_transform(law, z, gamma):
    """D(z) = phi(z)*phibar(z), the rectangular analogue of G for spikes."""
    p = phi_transform(law, z)
    return p * (gamma * p + (1.0 - gamma) / z)


def d_inverse(law, d, gamma):
    """z with D(z) = d on the decreasing branch above the support."""
    _, hi = law.support()
    return _bisect_decreasing(
        lambda z: d_transform(law, z, gamma), d, hi, "D^{-1}"
    )


def t_of_z(z, gamma):
    """T(z) = (1+z)(1+gamma z)."""
    return (1.0 + z) * (1.0 + gamma * z)


def phi_transform_deriv(law, z):
    """phi'(z) = -E[(z^2 + Lambda^2)/(z^2 - Lambda^2)^2]."""
    lo, hi = law.support()
    if z <= hi:
        raise OutOfDomain("z=%g is not above the support sup %g" % (z, hi))
    return -law.expect(lambda lam: (z * z + lam * lam) / (z * z - lam * lam) ** 2)


def d_transform_deriv(law, z, gamma):
    """D'(z) = phi'(z)*phibar(z) + phi(z)*phibar'(z)."""
    p = phi_transform(law, z)
    pd = phi_transform_deriv(law, z)
    pbar = gamma * p + (1.0 - gamma) / z
    pbard = gamma * pd - (1.0 - gamma) / (z * z)
    return pd * pbar + p * pbard


def r_transform_from_law(law, x, kind="square", gamma=None):
    """R(x) evaluated through the law's inverse transform, not the series.

    This reaches every argument strictly inside the transform's image (any
    point above the spectral transition), where a truncated cumulant series
    may be impossible to certify.  Square laws use R(x) = G^{-1}(x) - 1/x;
    singular-value laws use the quadratic relation T(R(D(z))) = z^2 D(z).
    Raises InverseOutOfRange when x falls outside the image.
    """
    if kind == "square":
        z = cauchy_inverse(law, x)
        return z - 1.0 / x
    if kind != "rectangular":
        raise ValueError("kind must be 'square' or 'rectangular'")
    if gamma is None:
        raise ValueError("rectangular transforms need the aspect ratio gamma")
    z = d_inverse(law, x, gamma)
    disc = (1.0 + gamma) ** 2 - 4.0 * gamma * (1.0 - x * z * z)
    return (-(1.0 + gamma) + math.sqrt(disc)) / (2.0 * gamma)


def r_transform_deriv_from_law(law, x, kind="square", gamma=None):
    """R'(x) through the law, on the same branch as r_transform_from_law."""
    if kind == "square":
        z = cauchy_inverse(law, x)
        return 1.0 / cauchy_transform_deriv(law, z) + 1.0 / (x * x)
    if kind != "rectangular":
        raise ValueError("kind must be 'square' or 'rectangular'")
    if gamma is None:
        raise ValueError("rectangular transforms need the aspect ratio gamma")
    z = d_inverse(law, x, gamma)
    disc = (1.0 + gamma) ** 2 - 4.0 * gamma * (1.0 - x * z * z)
    r = (-(1.0 + gamma) + math.sqrt(disc)) / (2.0 * gamma)
    dp = d_transform_deriv(law, z, gamma)
    return (z * z + 2.0 * x * z / dp) / (1.0 + gamma + 2.0 * gamma * r)
