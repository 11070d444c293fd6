"""Fisher information, CRB objective and its Wirtinger gradient.

The unknowns are ``eta = [q1, q2, q3, Re a_1..a_M, Re b_1..b_M, Im a_1..a_M,
Im b_1..b_M]`` with ``a``/``b`` the RIS-path and direct-path gains.  Every
``ds_m/d eta_i`` is a scalar multiple ``u_{m,i} * x`` of the pilot, so
``[J_m]_{ik} = (2 E_x / P_m) Re{conj(u_i) u_k}`` and no length-T vector is
ever formed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import DegenerateSceneError
from .scene import emi_quadratic, _checked_powers

COND_LIMIT = 1e12
GRADIENT_MODES = ("exact", "paper_qq_only")


def num_params(num_anchors):
    return 3 + 4 * num_anchors


def gain_indices(num_anchors, m):
    """Indices of ``(Re a_m, Re b_m, Im a_m, Im b_m)`` inside ``eta``."""
    M = num_anchors
    return 3 + m, 3 + M + m, 3 + 2 * M + m, 3 + 3 * M + m


@dataclass(frozen=True)
class SignalJacobian:
    """Scalar coefficients of ``ds_m/d eta`` (the pilot ``x`` factored out).

    ``A[m, n, i]`` and ``c[m, i]`` are the position coefficients, ``phase[m, n]``
    is ``exp(-j k0 (rho_n + d_mn))``.
    """

    A: np.ndarray  # (M, N, 3)
    c: np.ndarray  # (M, 3)
    phase: np.ndarray  # (M, N)
    g_alpha: np.ndarray  # (M,)
    g_beta: np.ndarray  # (M,)
    pilot_energy: float

    @property
    def num_anchors(self):
        return self.c.shape[0]

    def position_coefficients(self, w):
        """``sum_n w_n A_mni + c_mi`` for every anchor, shape (M, 3)."""
        return np.einsum("n,mni->mi", w, self.A) + self.c

    def coefficients(self, w):
        """Full coefficient matrix ``U[m, i]`` with ``ds_m/d eta_i = U[m, i] x``."""
        M = self.num_anchors
        U = np.zeros((M, num_params(M)), dtype=complex)
        U[:, :3] = self.position_coefficients(w)
        for m in range(M):
            ra, rb, ia, ib = gain_indices(M, m)
            U[m, ra] = self.g_alpha[m]
            U[m, ia] = 1j * self.g_alpha[m]
            U[m, rb] = self.g_beta[m]
            U[m, ib] = 1j * self.g_beta[m]
        return U


class _Static:
    """w-independent pieces of the signal derivatives, cached per scene."""

    def __init__(self, scene):
        k0 = scene.wavenumber
        ch, geom = scene.channels, scene.geom
        self.phase = np.exp(-1j * k0 * (geom.rho[None, :] + geom.d))
        self.A = (-1j * k0 * ch.alpha)[:, None, None] * self.phase[:, :, None] * geom.drho_dq[None, :, :]
        self.c = (-1j * k0 * ch.beta * np.exp(-1j * k0 * geom.r))[:, None] * geom.dr_dq
        self.g_beta = np.exp(-1j * k0 * geom.r)


def _static(scene):
    cached = scene.__dict__.get("_fisher_static")
    if cached is None:
        cached = _Static(scene)
        object.__setattr__(scene, "_fisher_static", cached)
    return cached


def signal_jacobian(w, scene):
    st = _static(scene)
    w = np.asarray(w, dtype=complex)
    return SignalJacobian(
        A=st.A,
        c=st.c,
        phase=st.phase,
        g_alpha=st.phase @ w,
        g_beta=st.g_beta,
        pilot_energy=scene.cfg.pilot_energy,
    )


def gain_prior(scene):
    """Diagonal prior information on the real gain components, shape (4M,)."""
    cfg, ch = scene.cfg, scene.channels
    mags = np.abs(np.concatenate([ch.alpha, ch.beta]))
    if np.any(mags == 0):
        raise DegenerateSceneError("gain_prior", mags, np.inf)
    info = 1.0 / (cfg.gain_prior_rel_std * mags) ** 2
    return np.concatenate([info, info])


@dataclass(frozen=True)
class FimBundle:
    """Fisher information over ``eta`` and the derived position bound.

    ``J`` includes the gain prior (zero unless ``nuisance == "prior"``);
    ``J_data`` is the plain sum of per-anchor terms and ``J_per_anchor`` holds
    those terms.  ``J_f`` is the Schur complement on the position block, or
    ``J_qq`` when the gains are treated as known.
    """

    J: np.ndarray
    J_data: np.ndarray
    J_per_anchor: np.ndarray
    J_f: np.ndarray
    crb: float
    noise_powers: np.ndarray
    coefficients: np.ndarray  # U, shape (M, 3 + 4M)
    nuisance: str

    @property
    def J_qq(self):
        return self.J[:3, :3]

    @property
    def J_qg(self):
        return self.J[:3, 3:]

    @property
    def J_gg(self):
        return self.J[3:, 3:]

    @property
    def rcrb(self):
        return float(np.sqrt(self.crb))


def _assemble(w, scene, emi_aware):
    jac = signal_jacobian(w, scene)
    U = jac.coefficients(w)
    if emi_aware:
        quad, v, Rv = emi_quadratic(w, scene.channels, scene.emi)
        P = _checked_powers(quad, scene.sigma2)
    else:
        v = Rv = None
        P = scene.sigma2.copy()
    weight = 2.0 * jac.pilot_energy / P
    J_m = weight[:, None, None] * np.real(U.conj()[:, :, None] * U[:, None, :])
    J_m = 0.5 * (J_m + J_m.transpose(0, 2, 1))
    return jac, U, P, J_m, v, Rv


def _whitened_rows(U, weight):
    """Real matrix ``A`` with ``A^T A = sum_m weight_m Re{conj(u_m) u_m^T}``."""
    root = np.sqrt(weight)[:, None]
    return np.vstack([root * U.real, root * U.imag])


def _check_triangular(R, name):
    """Raise when the column-equilibrated triangular factor is too ill-conditioned."""
    norms = np.linalg.norm(R, axis=0)
    if R.size == 0 or np.any(~np.isfinite(R)) or np.any(norms == 0):
        raise DegenerateSceneError(name, R, np.inf)
    sv = linalg.svdvals(R / norms)
    cond = (sv[0] / sv[-1]) ** 2 if sv[-1] > 0 else np.inf
    if cond > COND_LIMIT:
        raise DegenerateSceneError(name, R, cond)


def _position_bound(A, prior, nuisance):
    """Return ``(J_f, X)`` with ``X = J^-1 E`` restricted to the active unknowns.

    ``A`` holds whitened real Jacobian rows over ``eta`` and ``prior`` the
    diagonal gain information.  The Schur complement is read off a QR
    factorization with the gain columns first, which avoids forming and
    differencing the badly scaled normal equations.
    """
    K = A.shape[1]
    if nuisance == "known":
        R = linalg.qr(A[:, :3], mode="r")[0][:3]
        _check_triangular(R, "J_f")
        Rinv = linalg.solve_triangular(R, np.eye(3))
        X = np.zeros((K, 3))
        X[:3] = Rinv @ Rinv.T
        return R.T @ R, X
    G = A[:, 3:]
    if prior is not None:
        G = np.vstack([G, np.diag(np.sqrt(prior))])
    Aq = np.vstack([A[:, :3], np.zeros((G.shape[0] - A.shape[0], 3))])
    if G.shape[0] < K:
        raise DegenerateSceneError("J_gg", G, np.inf)
    R = linalg.qr(np.hstack([G, Aq]), mode="r")[0][:K]
    ng = K - 3
    _check_triangular(R[:ng, :ng], "J_gg")
    R22 = R[ng:, ng:]
    _check_triangular(R22, "J_f")
    # J^-1 e_q in (gain, position) order: R^-1 R^-T e_q, where R^-T e_q = [0; R22^-T]
    rhs = np.zeros((K, 3))
    rhs[ng:] = linalg.solve_triangular(R22, np.eye(3), trans="T")
    Y = linalg.solve_triangular(R, rhs)
    X = np.vstack([Y[ng:], Y[:ng]])
    return R22.T @ R22, X


def _evaluate(w, scene, emi_aware):
    jac, U, P, J_m, v, Rv = _assemble(w, scene, emi_aware)
    J_data = J_m.sum(axis=0)
    nuisance = scene.cfg.nuisance
    J = J_data.copy()
    prior = None
    if nuisance == "prior":
        prior = gain_prior(scene)
        idx = np.arange(3, J.shape[0])
        J[idx, idx] += prior
    A = _whitened_rows(U, 2.0 * jac.pilot_energy / P)
    J_f, X = _position_bound(A, prior, nuisance)
    crb_value = float(np.trace(X[:3]))
    bundle = FimBundle(
        J=J,
        J_data=J_data,
        J_per_anchor=J_m,
        J_f=J_f,
        crb=crb_value,
        noise_powers=P,
        coefficients=U,
        nuisance=nuisance,
    )
    return bundle, jac, X, v, Rv


def fim(w, scene, emi_aware=True):
    """Fisher information bundle for reflection coefficients ``w``.

    ``emi_aware=False`` replaces every ``P_m`` by the thermal variance alone.
    """
    return _evaluate(np.asarray(w, dtype=complex), scene, emi_aware)[0]


def crb(w, scene, emi_aware=True):
    """Trace of the inverse effective FIM (m^2)."""
    return fim(w, scene, emi_aware).crb


def rcrb(w, scene, emi_aware=True):
    return float(np.sqrt(crb(w, scene, emi_aware)))


def _gradient_from(bundle, jac, B, w, scene, v, Rv):
    """``-sum_{ik} B_ik dJ_ik / dw*`` for symmetric ``B``."""
    M = jac.num_anchors
    U = bundle.coefficients
    P = bundle.noise_powers
    Y = U @ B  # row m is (B u_m)^T since B is symmetric
    grad = np.zeros(w.shape[0], dtype=complex)
    for m in range(M):
        ra, _, ia, _ = gain_indices(M, m)
        # conj(D_m) B u_m with D_m = du_m/dw over the position and a_m columns
        term = jac.A[m].conj() @ Y[m, :3] + jac.phase[m].conj() * (Y[m, ra] - 1j * Y[m, ia])
        grad -= (2.0 * jac.pilot_energy / P[m]) * term
        if v is not None:
            dP = (scene.channels.h2[m] * Rv[m]).conj()
            grad += (np.sum(B * bundle.J_per_anchor[m]) / P[m]) * dP
    return grad


def value_and_gradient(w, scene, emi_aware=True, mode="exact"):
    """Return ``(crb, grad)`` with ``grad = d crb / d w^*`` (Wirtinger).

    ``mode="exact"`` differentiates every block of ``J`` through the Schur
    complement.  ``mode="paper_qq_only"`` keeps only the derivative of the
    position block ``J_qq`` with ``J_f^-1`` on both sides; it coincides with
    the exact gradient when the gains are known and is kept for comparison.
    """
    if mode not in GRADIENT_MODES:
        raise ValueError(f"mode must be one of {GRADIENT_MODES}")
    w = np.asarray(w, dtype=complex)
    bundle, jac, X, v, Rv = _evaluate(w, scene, emi_aware)
    if mode == "exact":
        B = X @ X.T
    else:
        Jf_inv = np.linalg.inv(bundle.J_f)
        B = np.zeros_like(bundle.J)
        B[:3, :3] = Jf_inv @ Jf_inv
    grad = _gradient_from(bundle, jac, B, w, scene, v, Rv)
    return bundle.crb, grad


def wirtinger_gradient(w, scene, emi_aware=True, mode="exact"):
    return value_and_gradient(w, scene, emi_aware, mode)[1]


class CrbObjective:
    """Objective/gradient evaluator handed to the optimizer.

    Calls are pure functions of ``w``; the instance only carries options.
    """

    def __init__(self, scene, emi_aware=True, mode="exact"):
        if mode not in GRADIENT_MODES:
            raise ValueError(f"mode must be one of {GRADIENT_MODES}")
        self.scene = scene
        self.emi_aware = emi_aware
        self.mode = mode

    def value(self, w):
        return crb(w, self.scene, self.emi_aware)

    def value_and_gradient(self, w):
        return value_and_gradient(w, self.scene, self.emi_aware, self.mode)
