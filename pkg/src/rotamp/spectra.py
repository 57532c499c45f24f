"""Spectral laws: moments, expectations, sampling, empirical extraction.

A law object represents the limiting eigenvalue law of a symmetric noise
matrix or the limiting singular-value law of a rectangular one (flagged by
``law.singular``).  Every law provides

* ``support()`` and ``support_bound`` (sup of the absolute support),
* ``expect(f)``, an adaptive quadrature/exact-sum expectation to 1e-10,
* ``moments(K)``, exact where a closed form exists,
* ``quantile(p)``, vectorized, used for deterministic spectrum sampling.

Continuous laws integrate with Gauss-Jacobi rules whose endpoint exponents
match the density (square-root edges for semicircle and Marchenko-Pastur,
the Beta exponents for affine Beta laws), doubling the order until two
consecutive evaluations agree.
"""

import math

import numpy as np
from scipy.special import betaln, roots_jacobi
from scipy.stats import beta as _beta_dist

from . import freeprob
from .errors import QuadratureFailure, QuantileUnavailable, TooFewEntries

__all__ = [
    "Semicircle",
    "MarchenkoPastur",
    "AffineBeta",
    "Atomic",
    "Empirical",
    "beta_mean0_var1",
    "beta_secondmoment1",
    "law_moments",
    "limit_cumulants",
    "sample_spectrum",
    "empirical_moments_excluding_top",
    "law_to_dict",
    "law_from_dict",
]

_QUAD_ORDERS = (60, 120, 240, 480, 960)
_QUAD_ATOL = 1e-11


class _ContinuousLaw:
    """Shared adaptive-expectation machinery; subclasses supply _rule()."""

    singular = False

    def expect(self, f):
        prev = None
        for order in _QUAD_ORDERS:
            nodes, weights = self._rule(order)
            val = float(np.dot(weights, f(nodes)))
            if prev is not None and abs(val - prev) <= _QUAD_ATOL * (1 + abs(val)):
                return val
            prev = val
        raise QuadratureFailure(
            "expectation did not stabilize to %g by order %d"
            % (_QUAD_ATOL, _QUAD_ORDERS[-1])
        )

    @property
    def support_bound(self):
        lo, hi = self.support()
        return max(abs(lo), abs(hi))


# ---------------------------------------------------------------------------
# semicircle


class Semicircle(_ContinuousLaw):
    """Wigner semicircle on [-2, 2]; unit variance, Catalan even moments."""

    variant = "semicircle"

    def support(self):
        return (-2.0, 2.0)

    def _rule(self, order):
        t, w = roots_jacobi(order, 0.5, 0.5)
        return 2.0 * t, (2.0 / math.pi) * w

    def moments(self, K, one=1.0):
        # odd moments vanish; even ones are the Catalan numbers
        out = [one * 0] * K
        cat = one
        for j in range(1, K // 2 + 1):
            cat = cat * (2 * (2 * j - 1)) / (j + 1)
            out[2 * j - 1] = cat
        return out

    def cdf(self, x):
        x = np.clip(np.asarray(x, dtype=float), -2.0, 2.0)
        return 0.5 + x * np.sqrt(4.0 - x * x) / (4.0 * math.pi) \
            + np.arcsin(x / 2.0) / math.pi

    def quantile(self, p):
        p = np.asarray(p, dtype=float)
        lo = np.full(p.shape, -2.0)
        hi = np.full(p.shape, 2.0)
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            below = self.cdf(mid) < p
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# Marchenko-Pastur singular values


class MarchenkoPastur(_ContinuousLaw):
    """Singular-value law of an i.i.d. rectangular matrix, aspect gamma <= 1.

    Normalized so the second moment is 1; the even moments are polynomials
    in gamma (1, 1+g, 1+3g+g^2, ...).  Density on s in [1-sqrt(g), 1+sqrt(g)]:
    sqrt((s_+^2 - s^2)(s^2 - s_-^2)) / (pi * g * s).

    Moments are defined for every gamma > 0 through the cumulant series; the
    density, expectations, and sampling require gamma <= 1 (the wide case is
    handled upstream by transposition).
    """

    variant = "marchenko_pastur"
    singular = True

    def __init__(self, gamma):
        if gamma <= 0:
            raise ValueError("aspect ratio gamma must be positive")
        self.gamma = float(gamma)

    def _require_narrow(self):
        if self.gamma > 1.0:
            raise ValueError(
                "Marchenko-Pastur density/sampling implemented for gamma <= 1; "
                "transpose the problem for gamma > 1"
            )

    def support(self):
        self._require_narrow()
        rg = math.sqrt(self.gamma)
        return (1.0 - rg, 1.0 + rg)

    def _rule(self, order):
        self._require_narrow()
        g = self.gamma
        lo, hi = self.support()
        if g == 1.0:
            # quarter-circle: density sqrt(4 - s^2)/pi on [0, 2]
            t, w = roots_jacobi(order, 0.5, 0.0)
            s = t + 1.0
            return s, w * np.sqrt(2.0 + s) / math.pi
        mid = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo)
        t, w = roots_jacobi(order, 0.5, 0.5)
        s = mid + half * t
        dens_smooth = np.sqrt((hi + s) * (s + lo)) / (math.pi * g * s)
        return s, w * dens_smooth * half * half

    def moments(self, K, one=1.0):
        kap = [one] + [one * 0] * (K - 1)
        return freeprob.rect_moments_from_cumulants(kap, one * 0 + self.gamma)

    def quantile(self, p):
        self._require_narrow()
        g = self.gamma
        lam_lo = (1.0 - math.sqrt(g)) ** 2
        lam_hi = (1.0 + math.sqrt(g)) ** 2
        # integrate the squared-singular-value density through u = s^2 with
        # the edge-regularizing substitution u = lam_lo + (lam_hi-lam_lo) sin^2
        phi = np.linspace(0.0, math.pi / 2.0, 20001)
        u = lam_lo + (lam_hi - lam_lo) * np.sin(phi) ** 2
        integ = (lam_hi - lam_lo) ** 2 * np.sin(2 * phi) ** 2 / (
            4.0 * math.pi * g * np.maximum(u, 1e-300)
        )
        F = np.concatenate(
            [[0.0], np.cumsum(0.5 * (integ[1:] + integ[:-1]) * np.diff(phi))]
        )
        F /= F[-1]
        p = np.asarray(p, dtype=float)
        return np.sqrt(np.interp(p, F, u))


# ---------------------------------------------------------------------------
# affine images of Beta laws


class AffineBeta(_ContinuousLaw):
    """Law of scale*B + shift with B ~ Beta(a, b) on [0, 1]."""

    variant = "affine_beta"

    def __init__(self, a, b, shift, scale, singular=False):
        if a <= 0 or b <= 0:
            raise ValueError("Beta exponents must be positive")
        if scale <= 0:
            raise ValueError("scale must be positive")
        self.a = float(a)
        self.b = float(b)
        self.shift = float(shift)
        self.scale = float(scale)
        self.singular = bool(singular)
        if self.singular and self.shift < 0:
            raise ValueError("a singular-value law cannot place mass below 0")

    def support(self):
        return (self.shift, self.shift + self.scale)

    def _rule(self, order):
        a, b = self.a, self.b
        t, w = roots_jacobi(order, b - 1.0, a - 1.0)
        x = 0.5 * (t + 1.0)
        norm = math.exp(betaln(a, b)) * 2.0 ** (a + b - 1.0)
        return self.scale * x + self.shift, w / norm

    def base_moments(self, K, one=1.0):
        # E[B^j] = prod_{i<j} (a+i)/(a+b+i)
        out = [one]
        cur = one
        for j in range(K):
            cur = cur * (self.a + j) / (self.a + self.b + j)
            out.append(cur)
        return out

    def moments(self, K, one=1.0):
        top = 2 * K if self.singular else K
        bm = self.base_moments(top, one=one)
        sc = one * 0 + self.scale
        sh = one * 0 + self.shift
        raw = []
        for k in range(1, top + 1):
            acc = one * 0
            for j in range(k + 1):
                acc = acc + math.comb(k, j) * sc ** j * bm[j] * sh ** (k - j)
            raw.append(acc)
        if self.singular:
            return raw[1::2]
        return raw

    def quantile(self, p):
        p = np.asarray(p, dtype=float)
        return self.scale * _beta_dist.ppf(p, self.a, self.b) + self.shift


def beta_mean0_var1(a, b, singular=False):
    """Affine Beta(a, b) standardized to mean 0 and variance 1."""
    mean = a / (a + b)
    var = a * b / ((a + b) ** 2 * (a + b + 1.0))
    scale = 1.0 / math.sqrt(var)
    return AffineBeta(a, b, shift=-mean * scale, scale=scale, singular=singular)


def beta_secondmoment1(a, b, singular=True):
    """Affine Beta(a, b) scaled (no shift) to second moment 1."""
    m2 = a * (a + 1.0) / ((a + b) * (a + b + 1.0))
    return AffineBeta(a, b, shift=0.0, scale=1.0 / math.sqrt(m2),
                      singular=singular)


# ---------------------------------------------------------------------------
# atomic and empirical laws


class Atomic:
    """Finitely supported law; expectations and moments are exact sums."""

    variant = "atomic"

    def __init__(self, values, weights, singular=False):
        values = np.asarray(values, dtype=float)
        weights = np.asarray(weights, dtype=float)
        if values.size == 0 or values.shape != weights.shape:
            raise ValueError("values and weights must be equal-length, nonempty")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")
        order = np.argsort(values)
        self.values = values[order]
        self.weights = weights[order]
        self.singular = bool(singular)

    def support(self):
        return (float(self.values[0]), float(self.values[-1]))

    @property
    def support_bound(self):
        return float(np.max(np.abs(self.values)))

    def expect(self, f):
        return float(np.dot(self.weights, f(self.values)))

    def moments(self, K, one=1.0):
        pows = [2 * k for k in range(1, K + 1)] if self.singular else \
            list(range(1, K + 1))
        return [one * 0 + float(np.dot(self.weights, self.values ** k))
                for k in pows]

    def quantile(self, p):
        p = np.asarray(p, dtype=float)
        cum = np.cumsum(self.weights)
        idx = np.searchsorted(cum, np.clip(p, 0.0, 1.0), side="left")
        return self.values[np.minimum(idx, len(self.values) - 1)]


class Empirical:
    """Law of a finite sample; moments and expectations are sample averages."""

    variant = "empirical"

    def __init__(self, samples, singular=False):
        samples = np.asarray(samples, dtype=float)
        if samples.size == 0:
            raise ValueError("empirical law needs at least one sample")
        self.samples = np.sort(samples)
        self.singular = bool(singular)

    def support(self):
        return (float(self.samples[0]), float(self.samples[-1]))

    @property
    def support_bound(self):
        return float(np.max(np.abs(self.samples)))

    def expect(self, f):
        return float(np.mean(f(self.samples)))

    def moments(self, K, one=1.0):
        pows = [2 * k for k in range(1, K + 1)] if self.singular else \
            list(range(1, K + 1))
        return [one * 0 + float(np.mean(self.samples ** k)) for k in pows]

    def quantile(self, p):
        return np.quantile(self.samples, np.asarray(p, dtype=float))


# ---------------------------------------------------------------------------
# module-level operations


def law_moments(law, K, one=1.0):
    """First K moments of the law: m_1..m_K, or m_2..m_{2K} when singular.

    Pass one=gmpy2.mpfr(1) (with the context precision already set) to get
    the closed-form moments in extended precision where the law supports it.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    return law.moments(K, one=one)


def limit_cumulants(law, K, gamma=None, precision=512):
    """First K free cumulants of the law, computed in extended precision.

    The moment-to-cumulant recursions cancel catastrophically in double
    precision beyond a few dozen orders, so the closed-form moments are
    propagated through gmpy2 at the given bit precision and only the final
    cumulants are rounded back to float.  Singular laws yield the even
    cumulants kappa_2..kappa_{2K} and require the aspect ratio gamma;
    symmetric laws yield kappa_1..kappa_K.

    Rectangular moments are normalised on the row side: when gamma exceeds
    1 the law's min-side moments are divided by gamma, which accounts for
    the zero singular values the wide side carries.
    """
    import gmpy2

    if K < 1:
        raise ValueError("K must be at least 1")
    ctx = gmpy2.get_context()
    saved = ctx.precision
    ctx.precision = int(precision)
    try:
        one = gmpy2.mpfr(1)
        moms = law.moments(K, one=one)
        if getattr(law, "singular", False):
            if gamma is None:
                raise ValueError("singular laws need the aspect ratio gamma")
            if gamma > 1.0:
                moms = [m / gamma for m in moms]
            kap = freeprob.rect_cumulants_from_moments(moms, one * gamma)
        else:
            if gamma is not None:
                raise ValueError("gamma only applies to singular laws")
            kap = freeprob.free_cumulants_from_moments(moms)
    finally:
        ctx.precision = saved
    return np.array([float(v) for v in kap])


def sample_spectrum(law, n, rng, mode="quantile"):
    """Draw n spectrum values from the law.

    quantile mode evaluates the quantile function on the deterministic grid
    (i - 1/2)/n, making every run with the same n identical; iid mode draws
    independently (inverse-cdf on uniforms for continuous laws, categorical
    or bootstrap draws for atomic/empirical ones).
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if mode == "quantile":
        if isinstance(law, Empirical) and n > law.samples.size:
            raise QuantileUnavailable(
                "quantile grid of size %d exceeds the %d stored samples"
                % (n, law.samples.size)
            )
        grid = (np.arange(n) + 0.5) / n
        return np.asarray(law.quantile(grid), dtype=float)
    if mode == "iid":
        if isinstance(law, Atomic):
            return rng.choice(law.values, size=n, p=law.weights)
        if isinstance(law, Empirical):
            return rng.choice(law.samples, size=n, replace=True)
        return np.asarray(law.quantile(rng.uniform(size=n)), dtype=float)
    raise ValueError("mode must be 'quantile' or 'iid'")


def empirical_moments_excluding_top(spectrum, K, normalization, kind="symmetric"):
    """Moments of a computed spectrum with its largest value removed.

    kind="symmetric": spectrum holds eigenvalues, returns
    (1/normalization) * sum lambda_i^k for k = 1..K over all but the largest
    eigenvalue.  kind="rectangular": spectrum holds singular values, returns
    the even moments (1/normalization) * sum s_i^{2k}; normalization is the
    row count m, so a wide matrix's implicit zero singular values cost
    nothing.
    """
    spec = np.asarray(spectrum, dtype=float)
    if spec.size < 2:
        raise TooFewEntries("need at least 2 spectrum entries, got %d" % spec.size)
    rest = np.delete(spec, int(np.argmax(spec)))
    if kind == "rectangular":
        base = rest * rest
    elif kind == "symmetric":
        base = None
    else:
        raise ValueError("kind must be 'symmetric' or 'rectangular'")
    out = []
    for k in range(1, K + 1):
        if base is None:
            out.append(float(np.sum(rest ** k)) / normalization)
        else:
            out.append(float(np.sum(base ** k)) / normalization)
    return out


# ---------------------------------------------------------------------------
# JSON round trip (consumed by the CLI config layer)

_STANDARDIZERS = {
    "mean0_var1": beta_mean0_var1,
    "secondmoment1": beta_secondmoment1,
}


def law_to_dict(law):
    d = {"variant": law.variant}
    if isinstance(law, MarchenkoPastur):
        d["gamma"] = law.gamma
    elif isinstance(law, AffineBeta):
        d.update(a=law.a, b=law.b, shift=law.shift, scale=law.scale,
                 singular=law.singular)
    elif isinstance(law, Atomic):
        d.update(values=list(map(float, law.values)),
                 weights=list(map(float, law.weights)), singular=law.singular)
    elif isinstance(law, Empirical):
        d.update(samples=list(map(float, law.samples)), singular=law.singular)
    return d


def law_from_dict(d):
    d = dict(d)
    variant = d.pop("variant", None)
    if variant == "semicircle":
        _reject_extra(d, ())
        return Semicircle()
    if variant == "marchenko_pastur":
        gamma = d.pop("gamma")
        _reject_extra(d, ())
        return MarchenkoPastur(gamma)
    if variant == "affine_beta":
        a, b = d.pop("a"), d.pop("b")
        singular = bool(d.pop("singular", False))
        std = d.pop("standardize", None)
        if std is not None:
            _reject_extra(d, ())
            if std not in _STANDARDIZERS:
                raise ValueError("unknown standardize mode %r" % std)
            return _STANDARDIZERS[std](a, b, singular=singular)
        shift, scale = d.pop("shift"), d.pop("scale")
        _reject_extra(d, ())
        return AffineBeta(a, b, shift, scale, singular=singular)
    if variant == "atomic":
        values, weights = d.pop("values"), d.pop("weights")
        singular = bool(d.pop("singular", False))
        _reject_extra(d, ())
        return Atomic(values, weights, singular=singular)
    if variant == "empirical":
        samples = d.pop("samples")
        singular = bool(d.pop("singular", False))
        _reject_extra(d, ())
        return Empirical(samples, singular=singular)
    raise ValueError("unknown law variant %r" % variant)


def _reject_extra(d, allowed):
    extra = set(d) - set(allowed)
    if extra:
        raise ValueError("unknown law keys: %s" % ", ".join(sorted(extra)))
