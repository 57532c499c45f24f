"""AMP iterations with cumulant-built Onsager corrections.

The debiasing matrices are finite series in the free cumulants of the noise
spectrum: for the symmetric square case

    B_t = (sum_j kappa_{j+1} Phi^j)^T,   Sigma_t = sum_j kappa_{j+2} Theta^(j),

and for the rectangular case the analogous series in the even rectangular
cumulants over the alternating products of Phi and Psi.  All series terminate
by nilpotency of the strictly-lower-triangular derivative ledgers.  The
partial-moment matrices computed here mirror the polynomial moment structure
of the iterates and exist as internal cross-check oracles.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import (
    DimensionMismatch,
    InsufficientCoefficients,
    InsufficientCumulants,
    NonFiniteIterate,
    ShapeMismatch,
)
from .freeprob import (
    CumulantTable,
    partial_moment_coeffs,
    rect_partial_moment_coeffs,
)
from .spectra import empirical_moments_excluding_top

__all__ = [
    "AmpTrajectory",
    "Denoiser",
    "OnsagerLedger",
    "identity_denoiser",
    "onsager_rectangular",
    "onsager_symmetric",
    "oracle_partial_moment_matrices",
    "rect_ledger_matrices",
    "run_rect_amp",
    "run_symmetric_amp",
    "theta_matrices",
]

_DIVERGENCE_BOUND = 1e6


_FD_STEP = 1e-6


@dataclass(frozen=True)
class Denoiser:
    """Row-wise nonlinearity with its analytic derivative.

    With memory "last-iterate" both callables map the newest iterate
    (an n-vector) to an n-vector.  With memory "full" they receive the
    n-by-t stack of all iterates so far; the derivative then returns the
    n-by-t matrix of partials.  Side information enters by closure.
    A missing derivative falls back to central finite differences.
    """

    function: Callable
    derivative: Optional[Callable] = None
    memory: str = "last-iterate"

    def __post_init__(self):
        if self.memory not in ("last-iterate", "full"):
            raise ValueError("memory must be 'last-iterate' or 'full'")

    def partials(self, arg):
        if self.derivative is not None:
            return self.derivative(arg)
        if self.memory == "last-iterate":
            return (self.function(arg + _FD_STEP)
                    - self.function(arg - _FD_STEP)) / (2.0 * _FD_STEP)
        out = np.zeros_like(np.asarray(arg, dtype=float))
        for c in range(arg.shape[1]):
            hi = np.array(arg, dtype=float, copy=True)
            lo = np.array(arg, dtype=float, copy=True)
            hi[:, c] += _FD_STEP
            lo[:, c] -= _FD_STEP
            out[:, c] = (self.function(hi) - self.function(lo)) / (2.0 * _FD_STEP)
        return out


def identity_denoiser():
    return Denoiser(lambda z: z, lambda z: np.ones_like(z))


def _check_square(name, a, t):
    a = np.asarray(a, dtype=float)
    if a.shape != (t, t):
        raise ShapeMismatch("%s has shape %s, expected (%d, %d)" % (name, a.shape, t, t))
    return a


@dataclass(frozen=True, eq=False)
class OnsagerLedger:
    """Correlation and derivative averages of the iterates at iteration T.

    delta holds <u_s u_t>, phi holds <d_s u_t> (strictly lower triangular);
    gamma_mat and psi are the v-side analogues for rectangular runs, with
    psi lower triangular including the diagonal.  cumulants is the full
    free-cumulant sequence (kappa_1, kappa_2, ...) for symmetric ledgers and
    the even sequence (kappa_2, kappa_4, ...) for rectangular ones.
    """

    kind: str
    T: int
    delta: np.ndarray
    phi: np.ndarray
    cumulants: np.ndarray
    source: str = "limit"
    gamma_mat: Optional[np.ndarray] = None
    psi: Optional[np.ndarray] = None
    gamma: Optional[float] = None

    def __post_init__(self):
        t = self.T
        if self.kind not in ("symmetric", "rectangular"):
            raise ValueError("unknown ledger kind %r" % self.kind)
        delta = _check_square("delta", self.delta, t)
        phi = _check_square("phi", self.phi, t)
        if not np.allclose(delta, delta.T, atol=1e-10):
            raise ShapeMismatch("delta must be symmetric")
        if np.any(np.triu(phi) != 0.0):
            raise ShapeMismatch("phi must be strictly lower triangular")
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "cumulants", np.asarray(self.cumulants, dtype=float))
        if self.kind == "rectangular":
            if self.gamma is None or not self.gamma > 0.0:
                raise ValueError("rectangular ledger needs a positive gamma")
            gm = _check_square("gamma_mat", self.gamma_mat, t)
            psi = _check_square("psi", self.psi, t)
            if not np.allclose(gm, gm.T, atol=1e-10):
                raise ShapeMismatch("gamma_mat must be symmetric")
            if np.any(np.triu(psi, 1) != 0.0):
                raise ShapeMismatch("psi must be lower triangular")
            object.__setattr__(self, "gamma_mat", gm)
            object.__setattr__(self, "psi", psi)
        elif self.gamma_mat is not None or self.psi is not None:
            raise ShapeMismatch("symmetric ledger carries no gamma_mat or psi")

    def leading(self, t):
        """The ledger restricted to its first t iterations."""
        if not 1 <= t <= self.T:
            raise ValueError("t out of range")
        sub = lambda a: None if a is None else a[:t, :t].copy()
        return OnsagerLedger(
            kind=self.kind,
            T=t,
            delta=self.delta[:t, :t].copy(),
            phi=self.phi[:t, :t].copy(),
            cumulants=self.cumulants,
            source=self.source,
            gamma_mat=sub(self.gamma_mat),
            psi=sub(self.psi),
            gamma=self.gamma,
        )


def _powers(mat, j_max):
    """[mat^0, ..., mat^j_max], truncated once a power vanishes exactly."""
    t = mat.shape[0]
    out = [np.eye(t)]
    for _ in range(j_max):
        nxt = out[-1] @ mat
        if not nxt.any():
            break
        out.append(nxt)
    return out


def _pow_or_zero(powers, j, t):
    return powers[j] if j < len(powers) else np.zeros((t, t))


def theta_matrices(delta, phi, j_max):
    """Theta^(j) = sum_{i<=j} Phi^i Delta (Phi^(j-i))^T for j = 0..j_max."""
    delta = np.asarray(delta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    t = delta.shape[0]
    if delta.shape != (t, t) or phi.shape != (t, t):
        raise ShapeMismatch(
            "delta %s and phi %s must be square of equal size"
            % (delta.shape, phi.shape)
        )
    pw = _powers(phi, j_max)
    out = []
    for j in range(j_max + 1):
        acc = np.zeros((t, t))
        for i in range(j + 1):
            if i < len(pw) and j - i < len(pw):
                acc += pw[i] @ delta @ pw[j - i].T
        out.append(acc)
    return out


def rect_ledger_matrices(delta, phi, gamma_mat, psi, j_max):
    """Rectangular Theta^(j), Xi^(j), X^(j) for j = 0..j_max.

    Theta^(j) = sum_{i<=j} (PhiPsi)^i Delta ((PhiPsi)^(j-i))^T
              + sum_{i<j}  (PhiPsi)^i Phi Gamma Phi^T ((PhiPsi)^(j-1-i))^T,
    Xi^(j) mirrors it with the roles of (Delta, Phi) and (Gamma, Psi)
    swapped, and X^(j) = sum_{i<=j} (PsiPhi)^i (Psi Delta + Gamma Phi^T)
    ((PhiPsi)^(j-i))^T.
    """
    t = delta.shape[0]
    for name, a in (("delta", delta), ("phi", phi),
                    ("gamma_mat", gamma_mat), ("psi", psi)):
        _check_square(name, a, t)
    fp = phi @ psi
    pf = psi @ phi
    fp_pw = _powers(fp, j_max + 1)
    pf_pw = _powers(pf, j_max + 1)
    core_theta = phi @ gamma_mat @ phi.T
    core_xi = psi @ delta @ psi.T
    core_x = psi @ delta + gamma_mat @ phi.T
    thetas, xis, xs = [], [], []
    for j in range(j_max + 1):
        th = np.zeros((t, t))
        xi = np.zeros((t, t))
        xx = np.zeros((t, t))
        for i in range(j + 1):
            th += _pow_or_zero(fp_pw, i, t) @ delta @ _pow_or_zero(fp_pw, j - i, t).T
            xi += _pow_or_zero(pf_pw, i, t) @ gamma_mat @ _pow_or_zero(pf_pw, j - i, t).T
            xx += _pow_or_zero(pf_pw, i, t) @ core_x @ _pow_or_zero(fp_pw, j - i, t).T
        for i in range(j):
            th += (_pow_or_zero(fp_pw, i, t) @ core_theta
                   @ _pow_or_zero(fp_pw, j - 1 - i, t).T)
            xi += (_pow_or_zero(pf_pw, i, t) @ core_xi
                   @ _pow_or_zero(pf_pw, j - 1 - i, t).T)
        thetas.append(th)
        xis.append(xi)
        xs.append(xx)
    return thetas, xis, xs


def _series(powers, coeffs, t):
    acc = np.zeros((t, t))
    for j, p in enumerate(powers):
        if j >= len(coeffs):
            break
        acc += coeffs[j] * p
    return acc


def onsager_symmetric(ledger):
    """(B_T, Sigma_T) from a symmetric ledger."""
    t = ledger.T
    kappa = ledger.cumulants
    if kappa.size < 2 * t:
        raise InsufficientCumulants(
            "need %d cumulants for T = %d, got %d" % (2 * t, t, kappa.size)
        )
    pw = _powers(ledger.phi, t - 1)
    b = _series(pw, kappa, t).T
    thetas = theta_matrices(ledger.delta, ledger.phi, 2 * t - 2)
    sigma = np.zeros((t, t))
    for j, th in enumerate(thetas):
        sigma += kappa[j + 1] * th
    return b, sigma


def onsager_rectangular(ledger):
    """(A_T, B_T, Sigma_T, Omega_T) from a rectangular ledger.

    B_T and Omega_T do not involve psi's last row or gamma_mat's last
    row and column, so they are valid before the final v iterate exists.
    """
    t = ledger.T
    kap = ledger.cumulants
    if kap.size < 2 * t:
        raise InsufficientCumulants(
            "need %d even cumulants for T = %d, got %d" % (2 * t, t, kap.size)
        )
    gamma = ledger.gamma
    phi, psi = ledger.phi, ledger.psi
    # A-terms Psi(PhiPsi)^j and B-terms Phi(PsiPhi)^j
    a_mat = np.zeros((t, t))
    b_mat = np.zeros((t, t))
    term_a, term_b = psi.copy(), phi.copy()
    for j in range(t + 1):
        if j > 0:
            term_a = term_a @ phi @ psi
            term_b = term_b @ psi @ phi
        if not (term_a.any() or term_b.any()):
            break
        a_mat += kap[j] * term_a
        b_mat += gamma * kap[j] * term_b
    thetas, xis, _ = rect_ledger_matrices(
        ledger.delta, phi, ledger.gamma_mat, psi, 2 * t - 1
    )
    sigma = np.zeros((t, t))
    omega = np.zeros((t, t))
    for j in range(2 * t):
        sigma += kap[j] * xis[j]
        omega += gamma * kap[j] * thetas[j]
    return a_mat.T, b_mat.T, sigma, omega


def oracle_partial_moment_matrices(ledger, k_max):
    """Partial-moment matrices of the iterates, by definition.

    Symmetric: {"L": [L^(0), ..., L^(k_max)]} with
    L^(k) = sum_j c_{k,j} Theta^(j).  Rectangular: families keyed "H", "I",
    "J", "L" where H[k] = H^(2k) = sum_j c_{2k,j} Theta^(j),
    I[k] = I^(2k+1) = sum_j c_{2k+1,j} X^(j), J[k] = gamma I[k]^T by the
    coefficient identity, and L[k] = L^(2k) = sum_j cbar_{2k,j} Xi^(j).
    """
    t = ledger.T
    if ledger.kind == "symmetric":
        j_top = 2 * t - 2
        try:
            table = partial_moment_coeffs(ledger.cumulants, k_max, j_top)
        except InsufficientCumulants as exc:
            raise InsufficientCoefficients(str(exc)) from None
        thetas = theta_matrices(ledger.delta, ledger.phi, j_top)
        out = []
        for k in range(k_max + 1):
            acc = np.zeros((t, t))
            for j, th in enumerate(thetas):
                acc += table.c[k][j] * th
            out.append(acc)
        return {"L": out}

    j_top = 2 * t
    try:
        table = rect_partial_moment_coeffs(
            ledger.cumulants, ledger.gamma, 2 * k_max + 1, j_top
        )
    except InsufficientCumulants as exc:
        raise InsufficientCoefficients(str(exc)) from None
    thetas, xis, xs = rect_ledger_matrices(
        ledger.delta, ledger.phi, ledger.gamma_mat, ledger.psi, j_top
    )
    fam_h, fam_i, fam_j, fam_l = [], [], [], []
    for k in range(k_max + 1):
        h = np.zeros((t, t))
        ii = np.zeros((t, t))
        ll = np.zeros((t, t))
        for j in range(j_top + 1):
            if j < len(table.c[2 * k]):
                h += table.c[2 * k][j] * thetas[j]
                ll += table.c_bar[2 * k][j] * xis[j]
            if 2 * k + 1 <= k_max * 2 + 1 and j < len(table.c[2 * k + 1]):
                ii += table.c[2 * k + 1][j] * xs[j]
        fam_h.append(h)
        fam_i.append(ii)
        fam_j.append(ledger.gamma * ii.T)
        fam_l.append(ll)
    return {"H": fam_h, "I": fam_i, "J": fam_j, "L": fam_l}


@dataclass(frozen=True, eq=False)
class AmpTrajectory:
    """Iterates and overlap records of one AMP run."""

    kind: str
    us: list
    zs: list
    overlap_u: np.ndarray
    norm_u: np.ndarray
    onsager: OnsagerLedger
    vs: list = field(default_factory=list)
    ys: list = field(default_factory=list)
    overlap_v: Optional[np.ndarray] = None
    norm_v: Optional[np.ndarray] = None

    def rows(self, run_id):
        """(run_id, t, overlap_u, norm_u, overlap_v, norm_v) per iteration."""
        out = []
        for i in range(len(self.us)):
            ov = self.overlap_v[i] if (
                self.overlap_v is not None and i < len(self.overlap_v)
            ) else float("nan")
            nv = self.norm_v[i] if (
                self.norm_v is not None and i < len(self.norm_v)
            ) else float("nan")
            out.append((run_id, i + 1, float(self.overlap_u[i]),
                        float(self.norm_u[i]), float(ov), float(nv)))
        return out


def _as_operator(operator, expect_kind):
    """Normalize the data input to (apply, apply_T, m, n, signal pair)."""
    from . import ensembles

    if isinstance(operator, ensembles.SpikedInstance):
        inst = operator
        if inst.kind != expect_kind:
            raise DimensionMismatch(
                "instance kind %r, expected %r" % (inst.kind, expect_kind)
            )
        return (
            lambda v: ensembles.apply_data_matrix(inst, v),
            lambda u: ensembles.apply_data_matrix_transpose(inst, u),
            inst.m,
            inst.n,
            inst,
        )
    if isinstance(operator, np.ndarray):
        mat = operator
        if mat.ndim != 2:
            raise DimensionMismatch("operator array must be 2-d")
        if expect_kind == "symmetric" and mat.shape[0] != mat.shape[1]:
            raise DimensionMismatch("symmetric operator must be square")
        return (
            lambda v: mat @ v,
            lambda u: mat.T @ u,
            mat.shape[0],
            mat.shape[1],
            None,
        )
    if callable(operator):
        return operator, None, None, None, None
    raise DimensionMismatch("operator must be an instance, array, or callable")


def _empirical_symmetric_cumulants(operator, inst, n, big_k):
    from . import ensembles

    if inst is not None:
        dense = ensembles.dense_data_matrix(inst)
    elif isinstance(operator, np.ndarray):
        dense = operator
    else:
        raise InsufficientCumulants(
            "empirical cumulants need an instance or dense operator"
        )
    eigs = np.linalg.eigvalsh(dense)
    moments = empirical_moments_excluding_top(eigs, big_k, n)
    return CumulantTable.from_moments(moments).cumulants


def _resolve_cumulants_symmetric(cumulant_source, operator, inst, n, t_max):
    if isinstance(cumulant_source, str):
        if cumulant_source != "empirical":
            raise ValueError("cumulant_source must be 'empirical' or a sequence")
        kappa = _empirical_symmetric_cumulants(operator, inst, n, 2 * t_max)
        return np.asarray(kappa, dtype=float), "empirical"
    kappa = np.asarray(cumulant_source, dtype=float)
    if kappa.size < 2 * t_max:
        raise InsufficientCumulants(
            "need %d cumulants for T = %d, got %d" % (2 * t_max, t_max, kappa.size)
        )
    return kappa, "limit"


def _guard_finite(vec, what, t):
    if not np.all(np.isfinite(vec)):
        raise NonFiniteIterate("%s at iteration %d is not finite" % (what, t))
    if np.mean(vec**2) > _DIVERGENCE_BOUND:
        raise NonFiniteIterate(
            "%s at iteration %d exceeds the divergence bound" % (what, t)
        )


def _apply_denoiser(denoiser, stack, t):
    """Evaluate the new iterate and its ledger derivative row."""
    if denoiser.memory == "last-iterate":
        new = denoiser.function(stack[:, t - 1])
        deriv_row = np.zeros(t)
        deriv_row[t - 1] = float(np.mean(denoiser.partials(stack[:, t - 1])))
    else:
        new = denoiser.function(stack[:, :t])
        partials = np.asarray(denoiser.partials(stack[:, :t]))
        if partials.shape != (stack.shape[0], t):
            raise ShapeMismatch(
                "full-memory derivative must return one column per iterate"
            )
        deriv_row = partials.mean(axis=0)
    return np.asarray(new, dtype=float), deriv_row


def run_symmetric_amp(operator, u1, denoisers, T, cumulant_source="empirical"):
    """Iterate z_t = (operator) u_t - sum_s b_ts u_s, u_{t+1} = denoiser(z).

    The b coefficients are the last column of B_t built from the running
    empirical ledger.  cumulant_source is "empirical" (spectrum of the data
    matrix with its top eigenvalue removed) or an explicit cumulant sequence
    (kappa_1, kappa_2, ...) treated as limit values.
    """
    apply_op, _, m, n, inst = _as_operator(operator, "symmetric")
    u1 = np.asarray(u1, dtype=float)
    if n is None:
        n = u1.size
    if u1.shape != (n,):
        raise DimensionMismatch("u1 has shape %s, expected (%d,)" % (u1.shape, n))
    if len(denoisers) < T:
        raise ValueError("need %d denoisers for T = %d" % (T, T))
    kappa, source = _resolve_cumulants_symmetric(
        cumulant_source, operator, inst, n, T
    )

    us = [u1]
    zs = []
    ustack = np.zeros((n, T + 1))
    zstack = np.zeros((n, T))
    ustack[:, 0] = u1
    delta = np.zeros((T + 1, T + 1))
    phi = np.zeros((T + 1, T + 1))
    delta[0, 0] = u1 @ u1 / n

    for t in range(1, T + 1):
        pw = _powers(phi[:t, :t], t - 1)
        bvec = _series(pw, kappa, t)[t - 1, :t]
        z = apply_op(us[t - 1]) - ustack[:, :t] @ bvec
        _guard_finite(z, "z", t)
        zs.append(z)
        zstack[:, t - 1] = z
        new, deriv_row = _apply_denoiser(denoisers[t - 1], zstack, t)
        if new.shape != (n,):
            raise DimensionMismatch("denoiser %d returned shape %s" % (t, new.shape))
        _guard_finite(new, "u", t + 1)
        us.append(new)
        ustack[:, t] = new
        phi[t, :t] = deriv_row
        for s in range(t + 1):
            delta[t, s] = delta[s, t] = ustack[:, s] @ new / n

    ledger = OnsagerLedger(
        kind="symmetric",
        T=T,
        delta=delta[:T, :T].copy(),
        phi=phi[:T, :T].copy(),
        cumulants=kappa,
        source=source,
    )
    if inst is not None:
        star = inst.u_star
        overlap = np.array([u @ star / n for u in us])
    else:
        overlap = np.full(len(us), np.nan)
    norm = np.array([u @ u / n for u in us])
    return AmpTrajectory(
        kind="symmetric",
        us=us,
        zs=zs,
        overlap_u=overlap,
        norm_u=norm,
        onsager=ledger,
    )


def run_rect_amp(operator, u1, denoisers_v, denoisers_u, T,
                 cumulant_source="empirical"):
    """Four-phase rectangular AMP.

    z_t = X^T u_t - sum_{s<t} b_ts v_s, v_t = denoiser_v(z_t),
    y_t = X v_t - sum_{s<=t} a_ts u_s, u_{t+1} = denoiser_u(y_t).
    The first iteration has z_1 = X^T u_1 exactly (B_1 = 0).  The b and
    Omega series never touch the not-yet-computed v_t: they are evaluated
    with psi's last row and gamma_mat's last row and column zeroed, which
    leaves them unchanged by construction.
    """
    from . import ensembles

    apply_op, apply_t, m, n, inst = _as_operator(operator, "rectangular")
    if apply_t is None:
        raise DimensionMismatch("rectangular runs need an instance or array")
    u1 = np.asarray(u1, dtype=float)
    if u1.shape != (m,):
        raise DimensionMismatch("u1 has shape %s, expected (%d,)" % (u1.shape, m))
    gamma = m / n
    if len(denoisers_v) < T or len(denoisers_u) < T:
        raise ValueError("need %d denoisers on each side for T = %d" % (T, T))

    if isinstance(cumulant_source, str):
        if cumulant_source != "empirical":
            raise ValueError("cumulant_source must be 'empirical' or a sequence")
        dense = ensembles.dense_data_matrix(inst) if inst is not None else operator
        svals = np.linalg.svd(dense, compute_uv=False)
        moments = empirical_moments_excluding_top(
            svals, 2 * T, m, kind="rectangular"
        )
        kap = CumulantTable.from_moments(
            moments, kind="rectangular", gamma=gamma
        ).cumulants
        source = "empirical"
    else:
        kap = np.asarray(cumulant_source, dtype=float)
        source = "limit"
    kap = np.asarray(kap, dtype=float)
    if kap.size < 2 * T:
        raise InsufficientCumulants(
            "need %d even cumulants for T = %d, got %d" % (2 * T, T, kap.size)
        )

    us, vs, zs, ys = [u1], [], [], []
    ustack = np.zeros((m, T + 1))
    vstack = np.zeros((n, T))
    zstack = np.zeros((n, T))
    ystack = np.zeros((m, T))
    ustack[:, 0] = u1
    delta = np.zeros((T + 1, T + 1))
    phi = np.zeros((T + 1, T + 1))
    gmat = np.zeros((T, T))
    psi = np.zeros((T, T))
    delta[0, 0] = u1 @ u1 / m

    for t in range(1, T + 1):
        # phase z: psi's last row is still zero here, as required
        term = phi[:t, :t].copy()
        brow = np.zeros(t)
        for j in range(t):
            if j > 0:
                term = term @ psi[:t, :t] @ phi[:t, :t]
            if not term.any():
                break
            brow += gamma * kap[j] * term[t - 1, :t]
        z = apply_t(us[t - 1]) - vstack[:, : t - 1] @ brow[: t - 1]
        _guard_finite(z, "z", t)
        zs.append(z)
        zstack[:, t - 1] = z

        v_new, psi_row = _apply_denoiser(denoisers_v[t - 1], zstack, t)
        if v_new.shape != (n,):
            raise DimensionMismatch("v denoiser %d returned shape %s" % (t, v_new.shape))
        _guard_finite(v_new, "v", t)
        vs.append(v_new)
        vstack[:, t - 1] = v_new
        psi[t - 1, :t] = psi_row
        for s in range(t):
            gmat[t - 1, s] = gmat[s, t - 1] = vstack[:, s] @ v_new / n

        # phase y: full psi up to t is now available
        term = psi[:t, :t].copy()
        arow = np.zeros(t)
        for j in range(t + 1):
            if j > 0:
                term = term @ phi[:t, :t] @ psi[:t, :t]
            if not term.any():
                break
            arow += kap[j] * term[t - 1, :t]
        y = apply_op(v_new) - ustack[:, :t] @ arow
        _guard_finite(y, "y", t)
        ys.append(y)
        ystack[:, t - 1] = y

        u_new, phi_row = _apply_denoiser(denoisers_u[t - 1], ystack, t)
        if u_new.shape != (m,):
            raise DimensionMismatch("u denoiser %d returned shape %s" % (t, u_new.shape))
        _guard_finite(u_new, "u", t + 1)
        us.append(u_new)
        ustack[:, t] = u_new
        phi[t, :t] = phi_row
        for s in range(t + 1):
            delta[t, s] = delta[s, t] = ustack[:, s] @ u_new / m

    ledger = OnsagerLedger(
        kind="rectangular",
        T=T,
        delta=delta[:T, :T].copy(),
        phi=phi[:T, :T].copy(),
        cumulants=kap,
        source=source,
        gamma_mat=gmat.copy(),
        psi=psi.copy(),
        gamma=gamma,
    )
    if inst is not None:
        overlap_u = np.array([u @ inst.u_star / m for u in us])
        overlap_v = np.array([v @ inst.v_star / n for v in vs])
    else:
        overlap_u = np.full(len(us), np.nan)
        overlap_v = np.full(len(vs), np.nan)
    return AmpTrajectory(
        kind="rectangular",
        us=us,
        zs=zs,
        vs=vs,
        ys=ys,
        overlap_u=overlap_u,
        norm_u=np.array([u @ u / m for u in us]),
        overlap_v=overlap_v,
        norm_v=np.array([v @ v / n for v in vs]),
        onsager=ledger,
    )
