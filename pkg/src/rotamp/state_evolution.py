"""Scalar channels, state evolution, fixed points, and PCA baselines.

In the large-dimension limit every AMP iterate decomposes row-wise into a
scalar channel F = mu*U + sigma*Z: a signal part proportional to the planted
spike and an independent Gaussian part.  This module provides the
posterior-mean denoisers of that channel for the supported priors, the
minimum mean-squared error they achieve, the deterministic covariance
recursions that predict every overlap of the AMP trajectory with the spike,
damped Picard solvers for the long-iteration limits of those recursions, and
the spectral-estimator overlap baselines the limits are compared against.
"""

import dataclasses
import math
from typing import Optional

import numpy as np
from scipy.special import roots_hermite

from . import freeprob
from .amp_engine import Denoiser
from .errors import (
    BelowTransition,
    DegenerateNoise,
    InsufficientCumulants,
    InverseOutOfRange,
    NoConvergence,
    OutOfDomain,
    QuadratureFailure,
    RadiusExceeded,
)

__all__ = [
    "SETrajectory",
    "FixedPoint",
    "posterior_mean",
    "posterior_mean_deriv",
    "posterior_denoiser",
    "mmse",
    "se_pca_symmetric",
    "se_pca_rect",
    "fixed_point_symmetric",
    "fixed_point_rect",
    "pca_baseline_symmetric",
    "pca_baseline_rect",
    "trajectory_denoisers",
]


# ---------------------------------------------------------------------------
# quadrature grids, shared read-only by every call

_GH_ORDER = 61
_gh_x, _gh_w = np.polynomial.hermite.hermgauss(_GH_ORDER)
# E[f(Z)] = sum(_norm_w * f(_norm_x)) for standard normal Z
_norm_x = math.sqrt(2.0) * _gh_x
_norm_w = _gh_w / math.sqrt(math.pi)

# The recursion-internal moments need far more accuracy than the mmse
# surface: overlap identities are checked at 1e-9 and Cauchy-Schwarz gets
# numerically tight as iterates converge, while order 61 carries ~1e-5
# error on saturating denoisers.  Order 601 keeps the worst case below
# 1e-12 for channel strengths up to ~8.
_SE_ORDER_1D = 601
_SE_ORDER_2D = 301
_se_x, _se_w = roots_hermite(_SE_ORDER_1D)
_se_x = math.sqrt(2.0) * _se_x
_se_w = _se_w / math.sqrt(math.pi)
_p_x, _p_w = roots_hermite(_SE_ORDER_2D)
_p_x = math.sqrt(2.0) * _p_x
_p_w = _p_w / math.sqrt(math.pi)
# flattened tensor grid for expectations over two independent normals
_pair_x1 = np.repeat(_p_x, _SE_ORDER_2D)
_pair_x2 = np.tile(_p_x, _SE_ORDER_2D)
_pair_w = np.outer(_p_w, _p_w).ravel()


def _prior_nodes(prior):
    # atoms are summed exactly; the Gaussian prior reuses the normal grid
    if prior.variant == "standard_gaussian":
        return _norm_x, _norm_w
    return prior.values, prior.weights


# ---------------------------------------------------------------------------
# posterior-mean denoiser of the scalar channel


def posterior_mean(prior, f, mu, sigma2):
    """Conditional mean E[U | mu*U + sqrt(sigma2)*Z = f] under the prior.

    Accepts scalar or array f and returns a matching shape.  Atomic priors
    go through a max-subtracted weighted-exponential ratio, so the value is
    stable for arbitrarily strong channels; the Gaussian prior uses the
    closed linear form mu*f/(sigma2 + mu^2).
    """
    if sigma2 <= 0.0:
        raise DegenerateNoise("channel variance must be positive, got %g" % sigma2)
    arr = np.asarray(f, dtype=float)
    if prior.variant == "standard_gaussian":
        out = (mu / (sigma2 + mu * mu)) * arr
        return float(out) if arr.ndim == 0 else out
    e, vals = _atom_scores(prior, arr, mu, sigma2)
    out = (e @ vals) / e.sum(axis=-1)
    return float(out) if arr.ndim == 0 else out


def posterior_mean_deriv(prior, f, mu, sigma2):
    """d/df of :func:`posterior_mean`: (mu/sigma2) times the posterior variance."""
    if sigma2 <= 0.0:
        raise DegenerateNoise("channel variance must be positive, got %g" % sigma2)
    arr = np.asarray(f, dtype=float)
    if prior.variant == "standard_gaussian":
        out = np.full(arr.shape, mu / (sigma2 + mu * mu))
        return float(out) if arr.ndim == 0 else out
    e, vals = _atom_scores(prior, arr, mu, sigma2)
    total = e.sum(axis=-1)
    m1 = (e @ vals) / total
    m2 = (e @ vals**2) / total
    out = (mu / sigma2) * (m2 - m1 * m1)
    return float(out) if arr.ndim == 0 else out


def _atom_scores(prior, arr, mu, sigma2):
    vals = prior.values
    # per-atom log posterior weight; the f^2/(2 sigma2) term cancels in ratios
    score = (arr[..., None] * (mu / sigma2)) * vals - (0.5 * mu * mu / sigma2) * vals**2
    with np.errstate(divide="ignore"):
        score = score + np.log(prior.weights)
    score -= score.max(axis=-1, keepdims=True)
    return np.exp(score), vals


def posterior_denoiser(prior, mu, sigma2):
    """Package the posterior-mean map at fixed channel parameters.

    Returns a :class:`rotamp.amp_engine.Denoiser` whose derivative is the
    analytic posterior-variance form rather than a finite difference.
    """
    if sigma2 <= 0.0:
        raise DegenerateNoise("channel variance must be positive, got %g" % sigma2)

    def fn(z):
        return posterior_mean(prior, z, mu, sigma2)

    def dfn(z):
        return posterior_mean_deriv(prior, z, mu, sigma2)

    return Denoiser(function=fn, derivative=dfn)


def mmse(prior, s):
    """Minimum mean-squared error of estimating U from sqrt(s)*U + Z.

    Evaluated literally as E[(U - eta(F))^2] on the Gauss-Hermite grid; the
    argument s is the squared channel strength mu^2/sigma^2.
    """
    if s < 0.0:
        raise OutOfDomain("mmse needs s >= 0, got %g" % s)
    u, wu = _prior_nodes(prior)
    root = math.sqrt(s)
    fgrid = root * u[:, None] + _norm_x[None, :]
    eta = posterior_mean(prior, fgrid, root, 1.0)
    err = (u[:, None] - eta) ** 2
    val = float(((wu[:, None] * _norm_w[None, :]) * err).sum())
    if not np.isfinite(val):
        raise QuadratureFailure("mmse quadrature produced a non-finite value")
    return val


# ---------------------------------------------------------------------------
# channel statistics entering the recursions


def _channel_stats(prior, mu, sigma2):
    """E[eta(F)^2] and E[U* eta(F)] for F = mu*U* + sqrt(sigma2)*Z."""
    if prior.variant == "standard_gaussian":
        # linear denoiser: both moments collapse to mu^2/(mu^2 + sigma2)
        val = mu * mu / (mu * mu + sigma2)
        return val, val
    u, wu = prior.values, prior.weights
    f = mu * u[:, None] + math.sqrt(sigma2) * _se_x[None, :]
    eta = posterior_mean(prior, f, mu, sigma2)
    w = wu[:, None] * _se_w[None, :]
    second = float((w * eta * eta).sum())
    cross = float((w * (u[:, None] * eta)).sum())
    if not (np.isfinite(second) and np.isfinite(cross)):
        raise QuadratureFailure("channel quadrature produced non-finite moments")
    return second, cross


def _repaired_offdiag(caa, cab, cbb):
    # 2x2 PSD repair: keep both variances, cap the covariance magnitude at
    # the Cauchy-Schwarz bound while preserving its sign
    cap = math.sqrt(max(caa, 0.0) * max(cbb, 0.0))
    return math.copysign(min(abs(cab), cap), cab)


def _pair_stat(prior, mu_a, mu_b, caa, cab, cbb):
    """E[eta_a(F_a) eta_b(F_b)] for jointly Gaussian channel noises.

    The 2x2 noise covariance is PSD-repaired before its Cholesky factor is
    taken; the diagonal entries, which define the two denoisers, are left
    untouched.
    """
    off = _repaired_offdiag(caa, cab, cbb)
    if prior.variant == "standard_gaussian":
        ca = mu_a / (caa + mu_a * mu_a)
        cb = mu_b / (cbb + mu_b * mu_b)
        return ca * cb * (mu_a * mu_b + off)
    l11 = math.sqrt(caa)
    l21 = off / l11
    l22 = math.sqrt(max(cbb - l21 * l21, 0.0))
    u, wu = prior.values, prior.weights
    fa = mu_a * u[:, None] + l11 * _pair_x1[None, :]
    fb = mu_b * u[:, None] + l21 * _pair_x1[None, :] + l22 * _pair_x2[None, :]
    ea = posterior_mean(prior, fa, mu_a, caa)
    eb = posterior_mean(prior, fb, mu_b, cbb)
    val = float(((wu[:, None] * _pair_w[None, :]) * ea * eb).sum())
    if not np.isfinite(val):
        raise QuadratureFailure("pair quadrature produced a non-finite overlap")
    return val


# ---------------------------------------------------------------------------
# state-evolution trajectories


@dataclasses.dataclass(frozen=True, eq=False)
class SETrajectory:
    """Deterministic predictions for a spiked-model AMP run.

    Arrays are indexed so that row/entry i corresponds to iterate i+1.  The
    channel arrays mu/sigma (and nu/omega on the rectangular v side) cover
    iterations 1..T; the iterate arrays delta/overlap_u/deriv_u additionally
    include the final denoiser output, iterate T+1.  deriv entries are NaN
    where the iterate is the initialization rather than a denoiser output.
    """

    kind: str
    alpha: float
    epsilon: float
    mu: np.ndarray
    sigma: np.ndarray
    delta: np.ndarray
    overlap_u: np.ndarray
    deriv_u: np.ndarray
    gamma: Optional[float] = None
    nu: Optional[np.ndarray] = None
    omega: Optional[np.ndarray] = None
    gamma_mat: Optional[np.ndarray] = None
    overlap_v: Optional[np.ndarray] = None
    deriv_v: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("symmetric", "rectangular"):
            raise ValueError("unknown trajectory kind %r" % self.kind)
        rect_only = (self.nu, self.omega, self.gamma_mat, self.overlap_v,
                     self.deriv_v, self.gamma)
        if self.kind == "symmetric" and any(x is not None for x in rect_only):
            raise ValueError("symmetric trajectory carries no v-side arrays")
        if self.kind == "rectangular" and any(x is None for x in rect_only):
            raise ValueError("rectangular trajectory is missing v-side arrays")

    @property
    def iterations(self):
        return self.mu.shape[0]

    def csv_rows(self):
        """Header and rows for the tabular export, one row per iteration.

        Row t pairs the iteration-t channel parameters with the predicted
        spike overlap of iterate t; rectangular trajectories append the
        v-side channel and overlap columns.  The overlap of the final
        iterate T+1 is carried by the JSON export only.
        """
        t_max = self.iterations
        if self.kind == "symmetric":
            header = ("t", "mu", "sigma_tt", "overlap_pred")
            rows = [
                (t, self.mu[t - 1], self.sigma[t - 1, t - 1], self.overlap_u[t - 1])
                for t in range(1, t_max + 1)
            ]
            return header, rows
        header = ("t", "mu", "sigma_tt", "overlap_pred",
                  "nu", "omega_tt", "overlap_pred_v")
        rows = [
            (t, self.mu[t - 1], self.sigma[t - 1, t - 1], self.overlap_u[t - 1],
             self.nu[t - 1], self.omega[t - 1, t - 1], self.overlap_v[t - 1])
            for t in range(1, t_max + 1)
        ]
        return header, rows

    def to_json_dict(self):
        def arr(a):
            return None if a is None else np.asarray(a).tolist()

        return {
            "kind": self.kind,
            "alpha": self.alpha,
            "epsilon": self.epsilon,
            "gamma": self.gamma,
            "mu": arr(self.mu),
            "sigma": arr(self.sigma),
            "delta": arr(self.delta),
            "overlap_u": arr(self.overlap_u),
            "deriv_u": arr(self.deriv_u),
            "nu": arr(self.nu),
            "omega": arr(self.omega),
            "gamma_mat": arr(self.gamma_mat),
            "overlap_v": arr(self.overlap_v),
            "deriv_v": arr(self.deriv_v),
        }


def _sym_sigma_entry(kappa, delta, deriv, s, t):
    # sigma_st = sum_{j<s} sum_{k<t} kappa_{j+k+2} P_s(j) P_t(k) delta_{s-j,t-k}
    # with P_s(j) the product of the last j derivative averages through s
    ps = np.concatenate(([1.0], np.cumprod(deriv[1:s][::-1])))
    pt = np.concatenate(([1.0], np.cumprod(deriv[1:t][::-1])))
    js = np.arange(s)
    ks = np.arange(t)
    kmat = kappa[js[:, None] + ks[None, :] + 2]
    dmat = delta[np.ix_(s - 1 - js, t - 1 - ks)]
    return float(ps @ (kmat * dmat) @ pt)


def se_pca_symmetric(prior, cumulants, alpha, epsilon, T):
    """Overlap predictions for T iterations on the symmetric spiked model.

    cumulants is the full sequence (kappa_1, kappa_2, ...) of the noise
    spectrum and must reach order 2T.  The initialization is the epsilon
    mixture: iterate 1 has unit second moment and spike overlap epsilon,
    and its Gaussian component is independent of every channel, so its
    cross-moments with later iterates reduce to epsilon times their spike
    overlaps.
    """
    kap = np.asarray(cumulants, dtype=float)
    if T < 1:
        raise ValueError("T must be at least 1")
    if kap.size < 2 * T:
        raise InsufficientCumulants(
            "need cumulants through order %d for T = %d, got %d"
            % (2 * T, T, kap.size)
        )
    if not 0.0 < epsilon <= 1.0:
        raise OutOfDomain("epsilon must lie in (0, 1], got %g" % epsilon)
    kappa = np.concatenate(([np.nan], kap[: 2 * T]))  # kappa[i] = kappa_i

    mu = np.zeros(T)
    sigma = np.zeros((T, T))
    delta = np.zeros((T + 1, T + 1))
    overlap = np.zeros(T + 1)
    deriv = np.full(T + 1, np.nan)
    delta[0, 0] = 1.0
    overlap[0] = epsilon

    for t in range(1, T + 1):
        mu[t - 1] = alpha * overlap[t - 1]
        if t == 1:
            sigma[0, 0] = kappa[2]
        else:
            for s in range(1, t + 1):
                val = _sym_sigma_entry(kappa, delta, deriv, s, t)
                sigma[s - 1, t - 1] = sigma[t - 1, s - 1] = val
        m_t = mu[t - 1]
        s_tt = sigma[t - 1, t - 1]
        if s_tt <= 0.0:
            raise DegenerateNoise(
                "predicted channel variance at iteration %d is %g" % (t, s_tt)
            )
        second, cross = _channel_stats(prior, m_t, s_tt)
        delta[t, t] = second
        overlap[t] = cross
        deriv[t] = (m_t / s_tt) * (1.0 - second)
        delta[0, t] = delta[t, 0] = epsilon * cross
        for s in range(2, t + 1):
            val = _pair_stat(prior, mu[s - 2], m_t,
                             sigma[s - 2, s - 2], sigma[s - 2, t - 1], s_tt)
            delta[s - 1, t] = delta[t, s - 1] = val

    return SETrajectory(
        kind="symmetric", alpha=float(alpha), epsilon=float(epsilon),
        mu=mu, sigma=sigma, delta=delta, overlap_u=overlap, deriv_u=deriv,
    )


def _rect_sigma_entry(kappa2, gmat, delta, du, dv, s, t):
    # u-side channel covariance; products run over whole v-then-u phases
    ps = np.concatenate(([1.0], np.cumprod((dv[1:s] * du[1:s])[::-1])))
    pt = np.concatenate(([1.0], np.cumprod((dv[1:t] * du[1:t])[::-1])))
    js = np.arange(s)
    ks = np.arange(t)
    k1 = kappa2[js[:, None] + ks[None, :] + 1]
    k2 = kappa2[js[:, None] + ks[None, :] + 2]
    gsub = gmat[np.ix_(s - 1 - js, t - 1 - ks)]
    dsub = delta[np.ix_(s - 1 - js, t - 1 - ks)]
    core = k1 * gsub + k2 * np.outer(dv[s - 1 - js], dv[t - 1 - ks]) * dsub
    return float(ps @ core @ pt)


def _rect_omega_entry(kappa2, gamma, gmat, delta, du, dv, s, t):
    # v-side channel covariance; the trailing term vanishes against the
    # zeroth v iterate, which is identically zero by convention
    ps = np.concatenate(([1.0], np.cumprod((du[1:s] * dv[: s - 1])[::-1])))
    pt = np.concatenate(([1.0], np.cumprod((du[1:t] * dv[: t - 1])[::-1])))
    js = np.arange(s)
    ks = np.arange(t)
    k1 = kappa2[js[:, None] + ks[None, :] + 1]
    k2 = kappa2[js[:, None] + ks[None, :] + 2]
    dsub = delta[np.ix_(s - 1 - js, t - 1 - ks)]
    g2 = np.zeros((s, t))
    vi = s - 2 - js >= 0
    vl = t - 2 - ks >= 0
    g2[np.ix_(vi, vl)] = gmat[np.ix_((s - 2 - js)[vi], (t - 2 - ks)[vl])]
    dus = np.where(s - 1 - js >= 1, du[s - 1 - js], 0.0)
    dut = np.where(t - 1 - ks >= 1, du[t - 1 - ks], 0.0)
    core = k1 * dsub + k2 * np.outer(dus, dut) * g2
    return gamma * float(ps @ core @ pt)


def se_pca_rect(prior_u, prior_v, cumulants, gamma, alpha, epsilon, T):
    """Overlap predictions for T full phases of the rectangular spiked model.

    cumulants is the even-order sequence (kappa_2, kappa_4, ...) and must
    hold 2T values.  Each phase runs the v channel first and the u channel
    second, exactly in the order the two covariance recursions consume each
    other's entries; iterates u_1..u_{T+1} and v_1..v_T are covered.
    """
    kap2 = np.asarray(cumulants, dtype=float)
    if T < 1:
        raise ValueError("T must be at least 1")
    if kap2.size < 2 * T:
        raise InsufficientCumulants(
            "need %d even-order cumulants for T = %d, got %d"
            % (2 * T, T, kap2.size)
        )
    if gamma <= 0.0:
        raise OutOfDomain("aspect ratio gamma must be positive, got %g" % gamma)
    if not 0.0 < epsilon <= 1.0:
        raise OutOfDomain("epsilon must lie in (0, 1], got %g" % epsilon)
    kappa2 = np.concatenate(([np.nan], kap2[: 2 * T]))  # kappa2[i] = kappa_{2i}

    nu = np.zeros(T)
    omega = np.zeros((T, T))
    mu = np.zeros(T)
    sigma = np.zeros((T, T))
    gmat = np.zeros((T, T))
    delta = np.zeros((T + 1, T + 1))
    overlap_u = np.zeros(T + 1)
    overlap_v = np.zeros(T)
    du = np.full(T + 1, np.nan)
    dv = np.full(T, np.nan)
    delta[0, 0] = 1.0
    overlap_u[0] = epsilon

    for t in range(1, T + 1):
        nu[t - 1] = alpha * overlap_u[t - 1]
        if t == 1:
            omega[0, 0] = gamma * kappa2[1]
        else:
            for s in range(1, t + 1):
                val = _rect_omega_entry(kappa2, gamma, gmat, delta, du, dv, s, t)
                omega[s - 1, t - 1] = omega[t - 1, s - 1] = val
        n_t = nu[t - 1]
        w_tt = omega[t - 1, t - 1]
        if w_tt <= 0.0:
            raise DegenerateNoise(
                "predicted v-channel variance at phase %d is %g" % (t, w_tt)
            )
        second, cross = _channel_stats(prior_v, n_t, w_tt)
        gmat[t - 1, t - 1] = second
        overlap_v[t - 1] = cross
        dv[t - 1] = (n_t / w_tt) * (1.0 - second)
        for s in range(1, t):
            val = _pair_stat(prior_v, nu[s - 1], n_t,
                             omega[s - 1, s - 1], omega[s - 1, t - 1], w_tt)
            gmat[s - 1, t - 1] = gmat[t - 1, s - 1] = val

        mu[t - 1] = (alpha / gamma) * cross
        for s in range(1, t + 1):
            val = _rect_sigma_entry(kappa2, gmat, delta, du, dv, s, t)
            sigma[s - 1, t - 1] = sigma[t - 1, s - 1] = val
        m_t = mu[t - 1]
        s_tt = sigma[t - 1, t - 1]
        if s_tt <= 0.0:
            raise DegenerateNoise(
                "predicted u-channel variance at phase %d is %g" % (t, s_tt)
            )
        second, cross = _channel_stats(prior_u, m_t, s_tt)
        delta[t, t] = second
        overlap_u[t] = cross
        du[t] = (m_t / s_tt) * (1.0 - second)
        delta[0, t] = delta[t, 0] = epsilon * cross
        for s in range(2, t + 1):
            val = _pair_stat(prior_u, mu[s - 2], m_t,
                             sigma[s - 2, s - 2], sigma[s - 2, t - 1], s_tt)
            delta[s - 1, t] = delta[t, s - 1] = val

    return SETrajectory(
        kind="rectangular", alpha=float(alpha), epsilon=float(epsilon),
        gamma=float(gamma), mu=mu, sigma=sigma, delta=delta,
        overlap_u=overlap_u, deriv_u=du, nu=nu, omega=omega, gamma_mat=gmat,
        overlap_v=overlap_v, deriv_v=dv,
    )


def trajectory_denoisers(traj, prior, side="u"):
    """Posterior-mean denoisers matched to each predicted channel.

    side selects the u or v channel sequence of a rectangular trajectory;
    symmetric trajectories have only the u side.
    """
    if side not in ("u", "v"):
        raise ValueError("side must be 'u' or 'v'")
    if side == "v":
        if traj.kind != "rectangular":
            raise ValueError("symmetric trajectories have no v side")
        pairs = zip(traj.nu, np.diag(traj.omega))
    else:
        pairs = zip(traj.mu, np.diag(traj.sigma))
    return [posterior_denoiser(prior, float(m), float(s2)) for m, s2 in pairs]


# ---------------------------------------------------------------------------
# long-iteration fixed points


@dataclasses.dataclass(frozen=True)
class FixedPoint:
    """Long-iteration limit of a state-evolution recursion.

    delta_pca/gamma_pca hold the spectral baselines when they could be
    evaluated from the supplied description of the noise, None otherwise.
    """

    kind: str
    delta_star: float
    sigma_star: float
    converged: bool
    residual: float
    iterations: int
    gamma_star: Optional[float] = None
    omega_star: Optional[float] = None
    x_star: Optional[float] = None
    delta_pca: Optional[float] = None
    gamma_pca: Optional[float] = None

    def to_json_dict(self):
        return {
            "kind": self.kind,
            "delta_star": self.delta_star,
            "sigma_star": self.sigma_star,
            "gamma_star": self.gamma_star,
            "omega_star": self.omega_star,
            "x_star": self.x_star,
            "delta_pca": self.delta_pca,
            "gamma_pca": self.gamma_pca,
            "converged": self.converged,
            "residual": self.residual,
        }


def _edge_cap(law, transform):
    """Largest argument the solvers hand to a law-route transform inverse.

    Soft-edge laws cannot be integrated accurately arbitrarily close to the
    spectral edge, so the cap is the transform value a hair above it;
    transient Picard iterates beyond the cap are evaluated at the cap and
    flagged, and a solution still flagged at convergence is rejected.
    """
    lo, hi = law.support()
    z_off = hi + max(1e-3, 1e-3 * abs(hi))
    return transform(z_off)


def fixed_point_symmetric(prior, cumulants, alpha, *, damping=0.5, tol=1e-10,
                          max_iter=10000, series_tol=1e-12, law=None):
    """Damped Picard solve of the two-equation long-iteration limit.

    The iteration starts from (1 - 1/alpha^2, kappa_2).  When the iterates
    collapse toward the uninformative point the solver raises NoConvergence
    rather than returning a guess; uniqueness is only guaranteed for large
    alpha.  law, when given, replaces the truncated cumulant series with the
    law's resolvent route, which reaches coupling arguments arbitrarily
    close to the spectral edge where no finite series can be certified.
    """
    kap = np.asarray(cumulants, dtype=float)
    if alpha <= 0.0:
        raise OutOfDomain("alpha must be positive, got %g" % alpha)
    if kap.size < 2:
        raise InsufficientCumulants("need cumulants at least through order 2")
    if law is None:
        def rprime(x):
            return freeprob.r_transform_deriv(
                kap, x, kind="square", tol=series_tol
            ), False
    else:
        cap = _edge_cap(law, lambda z: freeprob.cauchy_transform(law, z))

        def rprime(x):
            if x > cap:
                x = cap
                return freeprob.r_transform_deriv_from_law(law, x), True
            return freeprob.r_transform_deriv_from_law(law, x), False
    delta = 1.0 - 1.0 / alpha**2
    sig = float(kap[1])
    residual = math.inf
    clamped = False
    for it in range(1, max_iter + 1):
        if not (delta > 1e-12 and sig > 1e-300):
            raise NoConvergence(
                "iterates collapsed toward the uninformative point "
                "(delta=%g, sigma=%g); alpha may be below the transition"
                % (delta, sig)
            )
        m = mmse(prior, alpha**2 * delta**2 / sig)
        rp, clamped = rprime(alpha * delta * (1.0 - delta) / sig)
        t_delta = 1.0 - m
        t_sig = delta * rp
        residual = max(abs(t_delta - delta), abs(t_sig - sig))
        if residual <= tol:
            break
        delta = (1.0 - damping) * delta + damping * t_delta
        sig = (1.0 - damping) * sig + damping * t_sig
    else:
        raise NoConvergence(
            "no fixed point to tolerance %g within %d sweeps (residual %g)"
            % (tol, max_iter, residual)
        )
    if clamped:
        raise NoConvergence(
            "the solved coupling argument falls outside the law's resolvent "
            "image; the fixed point is not inside the spectral domain"
        )
    baseline = None
    try:
        baseline = pca_baseline_symmetric(
            kap if law is None else law, alpha,
            series_tol=max(series_tol, 1e-9),
        )
    except (BelowTransition, RadiusExceeded, OutOfDomain):
        pass
    return FixedPoint(
        kind="symmetric", delta_star=float(delta), sigma_star=float(sig),
        converged=True, residual=float(residual), iterations=it,
        delta_pca=baseline,
    )


def _flip_rect_cumulants(kap2, gamma):
    """Even cumulant sequence of the transposed rectangular problem.

    Row-side moments pick up a factor gamma under transposition and the
    recursion parameter becomes 1/gamma.  The moment round trip cancels
    catastrophically in double precision past a few dozen orders, so it
    runs through gmpy2 and only the result is rounded back to float.
    """
    import gmpy2

    ctx = gmpy2.get_context()
    saved = ctx.precision
    ctx.precision = 512
    try:
        g_hp = gmpy2.mpfr(gamma)
        kap_hp = [gmpy2.mpfr(float(v)) for v in np.asarray(kap2)]
        mom = freeprob.rect_moments_from_cumulants(kap_hp, g_hp)
        flipped = freeprob.rect_cumulants_from_moments(
            [g_hp * m for m in mom], 1 / g_hp
        )
        return np.array([float(v) for v in flipped])
    finally:
        ctx.precision = saved


def fixed_point_rect(prior_u, prior_v, cumulants, gamma, alpha, *,
                     damping=0.5, tol=1e-10, max_iter=10000,
                     series_tol=1e-12, law=None):
    """Damped Picard solve of the five-quantity rectangular limit.

    cumulants is the even-order sequence.  The coupling argument x is
    recomputed from its defining equation on every sweep, so the returned
    x_star is consistent with the other four limits by construction.  law,
    when given, replaces the series evaluation of R', S with the law's
    two-sided resolvent route (see fixed_point_symmetric).  Aspect ratios
    above 1 are solved on the transposed problem, whose coupling argument
    is unchanged, and mapped back by swapping the two sides.
    """
    kap2 = np.asarray(cumulants, dtype=float)
    if alpha <= 0.0:
        raise OutOfDomain("alpha must be positive, got %g" % alpha)
    if gamma <= 0.0:
        raise OutOfDomain("aspect ratio gamma must be positive, got %g" % gamma)
    if kap2.size < 1:
        raise InsufficientCumulants("need at least the order-2 cumulant")
    if gamma > 1.0:
        sub = fixed_point_rect(
            prior_v, prior_u, _flip_rect_cumulants(kap2, gamma),
            1.0 / gamma, alpha / gamma, damping=damping, tol=tol,
            max_iter=max_iter, series_tol=series_tol, law=law,
        )
        return FixedPoint(
            kind=sub.kind,
            delta_star=sub.gamma_star,
            sigma_star=sub.omega_star,
            gamma_star=sub.delta_star,
            omega_star=sub.sigma_star,
            x_star=sub.x_star,
            delta_pca=sub.gamma_pca,
            gamma_pca=sub.delta_pca,
            converged=sub.converged,
            residual=sub.residual,
            iterations=sub.iterations,
        )

    if law is None:
        def rp_and_s(x):
            rp = freeprob.r_transform_deriv(
                kap2, x, kind="rectangular", gamma=gamma, tol=series_tol
            )
            sp = freeprob.s_transform(kap2, x, gamma=gamma, tol=series_tol)
            return rp, sp, False
    else:
        cap = _edge_cap(law, lambda z: freeprob.d_transform(law, z, gamma))

        def rp_and_s(x):
            hit = x > cap
            x = min(x, cap)
            z = freeprob.d_inverse(law, x, gamma)
            disc = (1.0 + gamma) ** 2 - 4.0 * gamma * (1.0 - x * z * z)
            r = (-(1.0 + gamma) + math.sqrt(disc)) / (2.0 * gamma)
            dp = freeprob.d_transform_deriv(law, z, gamma)
            rp = (z * z + 2.0 * x * z / dp) / (1.0 + gamma + 2.0 * gamma * r)
            return rp, rp / x - r / (x * x), hit

    delta = gam = 1.0 - gamma / alpha**2
    sig = float(kap2[0])
    om = gamma * float(kap2[0])
    residual = math.inf
    clamped = False
    for it in range(1, max_iter + 1):
        ok = (delta > 1e-12 and gam > 1e-12 and sig > 1e-300 and om > 1e-300
              and delta <= 1.0 and gam <= 1.0)
        if not ok:
            raise NoConvergence(
                "iterates left the admissible region (delta=%g, gamma=%g, "
                "sigma=%g, omega=%g); alpha may be below the transition"
                % (delta, gam, sig, om)
            )
        x = alpha**2 * delta * gam * (1.0 - delta) * (1.0 - gam) / (gamma * sig * om)
        rp, sp, clamped = rp_and_s(x)
        t_delta = 1.0 - mmse(prior_u, alpha**2 * gam**2 / (gamma**2 * sig))
        t_gam = 1.0 - mmse(prior_v, alpha**2 * delta**2 / om)
        t_sig = gam * rp + alpha**2 * delta**3 * (1.0 - gam) ** 2 / om**2 * sp
        t_om = (gamma * delta * rp
                + alpha**2 * gam**3 * (1.0 - delta) ** 2 / (gamma * sig**2) * sp)
        residual = max(abs(t_delta - delta), abs(t_gam - gam),
                       abs(t_sig - sig), abs(t_om - om))
        if residual <= tol:
            break
        delta = (1.0 - damping) * delta + damping * t_delta
        gam = (1.0 - damping) * gam + damping * t_gam
        sig = (1.0 - damping) * sig + damping * t_sig
        om = (1.0 - damping) * om + damping * t_om
    else:
        raise NoConvergence(
            "no fixed point to tolerance %g within %d sweeps (residual %g)"
            % (tol, max_iter, residual)
        )
    if clamped:
        raise NoConvergence(
            "the solved coupling argument falls outside the law's resolvent "
            "image; the fixed point is not inside the spectral domain"
        )
    x_star = alpha**2 * delta * gam * (1.0 - delta) * (1.0 - gam) / (gamma * sig * om)
    d_pca = g_pca = None
    try:
        d_pca, g_pca = pca_baseline_rect(
            kap2 if law is None else law, gamma, alpha,
            series_tol=max(series_tol, 1e-9),
        )
    except (BelowTransition, RadiusExceeded, OutOfDomain):
        pass
    return FixedPoint(
        kind="rectangular", delta_star=float(delta), sigma_star=float(sig),
        gamma_star=float(gam), omega_star=float(om), x_star=float(x_star),
        converged=True, residual=float(residual), iterations=it,
        delta_pca=d_pca, gamma_pca=g_pca,
    )


# ---------------------------------------------------------------------------
# spectral-estimator baselines


def _is_law(obj):
    return hasattr(obj, "expect") and hasattr(obj, "support")


def pca_baseline_symmetric(law_or_cumulants, alpha, *, series_tol=1e-9):
    """Limiting squared overlap of the top eigenvector with the spike.

    A spectral law is evaluated through its resolvent: the overlap is
    -1/(alpha^2 G'(z)) at the point z where G(z) = 1/alpha.  A cumulant
    sequence goes through the equivalent derivative-series form
    1 - R'(1/alpha)/alpha^2.  Either route raises BelowTransition when
    1/alpha falls outside the admissible branch.
    """
    if alpha <= 0.0:
        raise OutOfDomain("alpha must be positive, got %g" % alpha)
    if _is_law(law_or_cumulants):
        law = law_or_cumulants
        try:
            z = freeprob.cauchy_inverse(law, 1.0 / alpha)
        except InverseOutOfRange as exc:
            raise BelowTransition(
                "1/alpha = %g is not attained by the resolvent above the "
                "spectrum" % (1.0 / alpha)
            ) from exc
        val = -1.0 / (alpha**2 * freeprob.cauchy_transform_deriv(law, z))
    else:
        kap = np.asarray(law_or_cumulants, dtype=float)
        try:
            rp = freeprob.r_transform_deriv(
                kap, 1.0 / alpha, kind="square", tol=series_tol
            )
        except RadiusExceeded as exc:
            raise BelowTransition(
                "cumulant series not certified at 1/alpha = %g: alpha is "
                "below the transition or the sequence is too short"
                % (1.0 / alpha)
            ) from exc
        val = 1.0 - rp / alpha**2
    if not val > 0.0:
        raise BelowTransition(
            "spectral overlap is not positive at alpha = %g" % alpha
        )
    return float(val)


def pca_baseline_rect(law_or_cumulants, gamma, alpha, *, series_tol=1e-9):
    """Limiting squared overlaps of the top singular vector pair.

    Returns (u side, v side).  A singular-value law is evaluated through
    the two-sided resolvent product D; a cumulant sequence goes through the
    even-order series route.  Aspect ratios above 1 are handled by
    transposing the problem and swapping the two outputs; a transposed
    cumulant sequence is rebuilt from moments rescaled by gamma.
    """
    if alpha <= 0.0:
        raise OutOfDomain("alpha must be positive, got %g" % alpha)
    if gamma <= 0.0:
        raise OutOfDomain("aspect ratio gamma must be positive, got %g" % gamma)
    if gamma > 1.0:
        if _is_law(law_or_cumulants):
            flipped = law_or_cumulants
        else:
            flipped = _flip_rect_cumulants(law_or_cumulants, gamma)
        d_t, g_t = pca_baseline_rect(
            flipped, 1.0 / gamma, alpha / gamma, series_tol=series_tol
        )
        return g_t, d_t
    x = gamma / alpha**2
    if _is_law(law_or_cumulants):
        law = law_or_cumulants
        try:
            z = freeprob.d_inverse(law, x, gamma)
        except InverseOutOfRange as exc:
            raise BelowTransition(
                "x = %g is not attained by the two-sided resolvent above "
                "the spectrum" % x
            ) from exc
        p = freeprob.phi_transform(law, z)
        pbar = gamma * p + (1.0 - gamma) / z
        dprime = freeprob.d_transform_deriv(law, z, gamma)
        d_pca = -2.0 * x * p / dprime
        g_pca = -2.0 * x * pbar / dprime
    else:
        kap2 = np.asarray(law_or_cumulants, dtype=float)
        try:
            r = freeprob.r_transform(
                kap2, x, kind="rectangular", gamma=gamma, tol=series_tol
            )
            rp = freeprob.r_transform_deriv(
                kap2, x, kind="rectangular", gamma=gamma, tol=series_tol
            )
        except RadiusExceeded as exc:
            raise BelowTransition(
                "cumulant series not certified at x = %g: alpha is below "
                "the transition or the sequence is too short" % x
            ) from exc
        tprime = 1.0 + gamma + 2.0 * gamma * r
        num = freeprob.t_of_z(r, gamma) - x * tprime * rp
        d_pca = num / (1.0 + gamma * r)
        g_pca = num / (1.0 + r)
    if not (d_pca > 0.0 and g_pca > 0.0):
        raise BelowTransition(
            "spectral overlaps are not positive at alpha = %g, gamma = %g"
            % (alpha, gamma)
        )
    return float(d_pca), float(g_pca)
