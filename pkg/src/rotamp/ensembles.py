"""Spiked-model instances: rotationally invariant noise, signals, inits.

Symmetric instances carry a data operator X = (alpha/n) u* u*^T + O^T diag(l) O
with O Haar-orthogonal; rectangular instances carry
X = (alpha/m) u* v*^T + O^T L Q with L the m-by-n diagonal embedding of the
singular values.  The dense matrix is never formed by the apply operations;
rotation factors are stored dense and everything else is matrix-free.

Construction consumes a single 64-bit seed.  Independent sub-streams for the
rotations, the signal draw, the initialization noise, and (in iid mode) the
spectrum are derived from counter-based generators keyed by fixed labels, so
an instance is reproducible from (seed, config) alone.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionMismatch
from .spectra import sample_spectrum

__all__ = [
    "Prior",
    "SpikedInstance",
    "apply_data_matrix",
    "apply_data_matrix_transpose",
    "build_rect_instance",
    "build_symmetric_instance",
    "dense_data_matrix",
    "haar_orthogonal",
    "prior_from_dict",
    "prior_to_dict",
]

_STREAM_LABELS = {
    "rotationL": 0,
    "rotationR": 1,
    "signal": 2,
    "init": 3,
    "spectrum": 4,
}


def _as_seed(seed):
    if isinstance(seed, np.random.Generator):
        return int(seed.integers(0, 2**63, dtype=np.uint64))
    s = int(seed)
    if not 0 <= s < 2**64:
        raise ValueError("seed must fit in 64 bits")
    return s


def _substream(seed, label):
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(_STREAM_LABELS[label],))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True, eq=False)
class Prior:
    """Signal prior with unit second moment.

    Variants: "rademacher" and "atomic_signed" store explicit atoms and
    weights; "standard_gaussian" is parameter-free.
    """

    variant: str
    values: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.variant == "standard_gaussian":
            if self.values is not None or self.weights is not None:
                raise ValueError("standard_gaussian takes no atoms")
            return
        if self.variant not in ("rademacher", "atomic_signed"):
            raise ValueError("unknown prior variant %r" % self.variant)
        values = np.asarray(self.values, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if values.ndim != 1 or values.shape != weights.shape or values.size == 0:
            raise ValueError("atoms and weights must be matching 1-d arrays")
        if np.any(weights < 0.0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")
        if abs(float(weights @ values**2) - 1.0) > 1e-12:
            raise ValueError("prior second moment must equal 1")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def rademacher(cls):
        return cls("rademacher", np.array([-1.0, 1.0]), np.array([0.5, 0.5]))

    @classmethod
    def atomic_signed(cls, values, weights):
        return cls("atomic_signed", values, weights)

    @classmethod
    def standard_gaussian(cls):
        return cls("standard_gaussian")

    @property
    def second_moment(self):
        return 1.0

    def sample(self, size, rng):
        if self.variant == "standard_gaussian":
            return rng.standard_normal(size)
        return rng.choice(self.values, size=size, p=self.weights)


def prior_to_dict(prior):
    d = {"variant": prior.variant}
    if prior.variant == "atomic_signed":
        d["values"] = list(map(float, prior.values))
        d["weights"] = list(map(float, prior.weights))
    return d


def prior_from_dict(d):
    d = dict(d)
    variant = d.pop("variant", None)
    if variant == "rademacher":
        extra = sorted(d)
    elif variant == "standard_gaussian":
        extra = sorted(d)
    elif variant == "atomic_signed":
        values = d.pop("values")
        weights = d.pop("weights")
        extra = sorted(d)
        if not extra:
            return Prior.atomic_signed(values, weights)
    else:
        raise ValueError("unknown prior variant %r" % variant)
    if extra:
        raise ValueError("unexpected prior fields: %s" % ", ".join(extra))
    if variant == "rademacher":
        return Prior.rademacher()
    return Prior.standard_gaussian()


@dataclass(frozen=True, eq=False)
class SpikedInstance:
    """Immutable spiked-model instance; safe to share across threads."""

    kind: str
    n: int
    m: int
    alpha: float
    gamma: Optional[float]
    u_star: np.ndarray
    v_star: Optional[np.ndarray]
    spectrum: np.ndarray
    rotationL: np.ndarray
    rotationR: Optional[np.ndarray]
    epsilon: float
    u1: np.ndarray
    seed: int
    u_rescale: float
    v_rescale: Optional[float]


def haar_orthogonal(dim, rng):
    """Haar-uniform orthogonal matrix via sign-fixed QR of a Gaussian."""
    if dim < 1:
        raise ValueError("dim must be at least 1")
    g = rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(g)
    d = np.sign(np.diag(r))
    d[d == 0.0] = 1.0
    return q * d


def _resolve_spectrum(law_or_spectrum, count, seed, mode):
    if isinstance(law_or_spectrum, (np.ndarray, list, tuple)):
        spectrum = np.asarray(law_or_spectrum, dtype=float)
        if spectrum.shape != (count,):
            raise DimensionMismatch(
                "spectrum has length %d, expected %d" % (spectrum.size, count)
            )
        return spectrum
    rng = _substream(seed, "spectrum")
    return sample_spectrum(law_or_spectrum, count, rng, mode=mode)


def _sample_signal(prior, dim, rng):
    draw = prior.sample(dim, rng).astype(float)
    nrm = float(np.linalg.norm(draw))
    if nrm == 0.0:
        raise ValueError("prior draw is identically zero; cannot normalize")
    rescale = math.sqrt(dim) / nrm
    return draw * rescale, rescale


def _init_vector(u_star, epsilon, rng):
    if not 0.0 < epsilon <= 1.0:
        raise ValueError("epsilon must lie in (0, 1]")
    g = rng.standard_normal(u_star.size)
    return epsilon * u_star + math.sqrt(1.0 - epsilon**2) * g


def build_symmetric_instance(
    law_or_spectrum, n, alpha, prior, epsilon, seed, spectrum_mode="quantile"
):
    """Spiked symmetric instance X = (alpha/n) u* u*^T + O^T diag(l) O.

    The initialization u1 = eps u* + sqrt(1 - eps^2) g has correlation eps
    with the signal; `seed` may be an integer or a Generator (an integer is
    drawn from it), and all randomness derives from labeled sub-streams.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    base = _as_seed(seed)
    spectrum = _resolve_spectrum(law_or_spectrum, n, base, spectrum_mode)
    rotation = haar_orthogonal(n, _substream(base, "rotationL"))
    u_star, u_rescale = _sample_signal(prior, n, _substream(base, "signal"))
    u1 = _init_vector(u_star, epsilon, _substream(base, "init"))
    return SpikedInstance(
        kind="symmetric",
        n=n,
        m=n,
        alpha=float(alpha),
        gamma=None,
        u_star=u_star,
        v_star=None,
        spectrum=spectrum,
        rotationL=rotation,
        rotationR=None,
        epsilon=float(epsilon),
        u1=u1,
        seed=base,
        u_rescale=u_rescale,
        v_rescale=None,
    )


def build_rect_instance(
    law_or_spectrum, m, n, alpha, prior_u, prior_v, epsilon, seed,
    spectrum_mode="quantile",
):
    """Spiked rectangular instance X = (alpha/m) u* v*^T + O^T L Q.

    The signal term has singular value alpha/sqrt(gamma) with gamma = m/n.
    The spectrum holds min(m, n) singular values; the diagonal embedding
    pads the rest with zeros.
    """
    if m < 2 or n < 2:
        raise ValueError("m and n must be at least 2")
    base = _as_seed(seed)
    spectrum = _resolve_spectrum(law_or_spectrum, min(m, n), base, spectrum_mode)
    rot_l = haar_orthogonal(m, _substream(base, "rotationL"))
    rot_r = haar_orthogonal(n, _substream(base, "rotationR"))
    signal_rng = _substream(base, "signal")
    u_star, u_rescale = _sample_signal(prior_u, m, signal_rng)
    v_star, v_rescale = _sample_signal(prior_v, n, signal_rng)
    u1 = _init_vector(u_star, epsilon, _substream(base, "init"))
    return SpikedInstance(
        kind="rectangular",
        n=n,
        m=m,
        alpha=float(alpha),
        gamma=m / n,
        u_star=u_star,
        v_star=v_star,
        spectrum=spectrum,
        rotationL=rot_l,
        rotationR=rot_r,
        epsilon=float(epsilon),
        u1=u1,
        seed=base,
        u_rescale=u_rescale,
        v_rescale=v_rescale,
    )


def _require_length(vec, length, what):
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (length,):
        raise DimensionMismatch("%s has shape %s, expected (%d,)" % (what, vec.shape, length))
    return vec


def _noise_symmetric(instance, v):
    return instance.rotationL.T @ (instance.spectrum * (instance.rotationL @ v))


def _noise_rect(instance, v):
    x = instance.rotationR @ v
    k = instance.spectrum.size
    y = np.zeros(instance.m)
    y[:k] = instance.spectrum * x[:k]
    return instance.rotationL.T @ y


def _noise_rect_transpose(instance, u):
    x = instance.rotationL @ u
    k = instance.spectrum.size
    y = np.zeros(instance.n)
    y[:k] = instance.spectrum * x[:k]
    return instance.rotationR.T @ y


def apply_data_matrix(instance, v):
    """X v without materializing X."""
    v = _require_length(v, instance.n, "v")
    if instance.kind == "symmetric":
        spike = (instance.alpha / instance.n) * instance.u_star * (instance.u_star @ v)
        return spike + _noise_symmetric(instance, v)
    spike = (instance.alpha / instance.m) * instance.u_star * (instance.v_star @ v)
    return spike + _noise_rect(instance, v)


def apply_data_matrix_transpose(instance, u):
    """X^T u; coincides with apply_data_matrix for symmetric instances."""
    if instance.kind == "symmetric":
        return apply_data_matrix(instance, u)
    u = _require_length(u, instance.m, "u")
    spike = (instance.alpha / instance.m) * instance.v_star * (instance.u_star @ u)
    return spike + _noise_rect_transpose(instance, u)


def dense_data_matrix(instance):
    """Materialize X for diagnostics and spectrum extraction."""
    if instance.kind == "symmetric":
        noise = (instance.rotationL.T * instance.spectrum) @ instance.rotationL
        spike = np.outer(instance.u_star, instance.u_star) * (
            instance.alpha / instance.n
        )
        return spike + noise
    k = instance.spectrum.size
    core = instance.spectrum[:, None] * instance.rotationR[:k, :]
    noise = instance.rotationL.T[:, :k] @ core
    spike = np.outer(instance.u_star, instance.v_star) * (instance.alpha / instance.m)
    return spike + noise
