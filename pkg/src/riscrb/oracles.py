"""Independent numerical oracles for the Fisher and gradient code paths.

Nothing here reuses :mod:`riscrb.fisher`: signals are rebuilt from raw
positions and gains as explicit length-T vectors, derivatives come from
central differences and the FIM is formed by brute force.
"""

from __future__ import annotations

import numpy as np

from . import manifold
from .scene import SceneConfig, db_to_linear


def random_config(seed, rows=4, cols=4, num_anchors=3, **overrides):
    """Small randomized scene used by ``validate`` and the test-suite."""
    rng = np.random.default_rng(seed)
    anchors = np.column_stack([
        rng.uniform(-30, 30, num_anchors),
        rng.uniform(20, 70, num_anchors),
        rng.uniform(20, 50, num_anchors),
    ])
    agent = (rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(5, 30))
    kw = dict(
        anchor_positions=tuple(map(tuple, anchors)),
        agent_position=agent,
        ris_rows=rows,
        ris_cols=cols,
        pilot_count=8,
        sigma2=(float(db_to_linear(-124.0)),) * num_anchors,
    )
    kw.update(overrides)
    return SceneConfig(**kw)


def signal_vectors(eta, w, scene):
    """Noise-free receptions ``s_m`` (M x T) for parameter vector ``eta``."""
    cfg = scene.cfg
    M = cfg.num_anchors
    q = np.asarray(eta[:3], dtype=float)
    gains = np.asarray(eta[3:3 + 2 * M]) + 1j * np.asarray(eta[3 + 2 * M:])
    alpha, beta = gains[:M], gains[M:]
    k0 = 2 * np.pi * cfg.frequency / 3e8
    t, u = scene.grid.element_centers.T
    rho = np.sqrt((q[0] - t) ** 2 + (q[1] - u) ** 2 + q[2] ** 2)
    x = np.full(cfg.pilot_count, np.sqrt(cfg.pilot_energy_per_sample), dtype=complex)
    out = np.empty((M, cfg.pilot_count), dtype=complex)
    for m, p in enumerate(np.asarray(cfg.anchor_positions)):
        r = np.sqrt(np.sum((q - p) ** 2))
        d = np.sqrt((p[0] - t) ** 2 + (p[1] - u) ** 2 + p[2] ** 2)
        h_ris = alpha[m] * np.exp(-1j * k0 * rho) * np.exp(-1j * k0 * d)
        h_dp = beta[m] * np.exp(-1j * k0 * r)
        out[m] = (h_ris @ w + h_dp) * x
    return out


def true_eta(scene):
    ch = scene.channels
    gains = np.concatenate([ch.alpha, ch.beta])
    return np.concatenate([scene.cfg.agent_position, gains.real, gains.imag])


def fd_signal_jacobian(w, scene, step=1e-7):
    """``ds_m / d eta_i`` as (M, K, T) from central differences."""
    eta = true_eta(scene)
    K = eta.size
    cols = []
    for i in range(K):
        e = np.zeros(K)
        e[i] = step
        cols.append((signal_vectors(eta + e, w, scene) - signal_vectors(eta - e, w, scene)) / (2 * step))
    return np.stack(cols, axis=1)


def direct_noise_powers(w, scene):
    """``P_m`` from the explicit matrices ``H2^T R H2^*``."""
    out = []
    for m in range(scene.num_anchors):
        H2 = np.diag(scene.channels.h2[m])
        Q = H2.T @ scene.emi.R @ H2.conj()
        out.append(np.real(w @ Q @ w.conj()) + scene.sigma2[m])
    return np.array(out)


def brute_force_fim(w, scene, step=1e-7):
    """Data FIM from numerically differentiated T-vectors."""
    D = fd_signal_jacobian(w, scene, step)
    P = direct_noise_powers(w, scene)
    K = D.shape[1]
    J = np.zeros((K, K))
    for m in range(D.shape[0]):
        J += (2.0 / P[m]) * np.real(D[m].conj() @ D[m].T)
    return J


def normalized_entry_error(J, J_ref):
    """Largest ``|J - J_ref|_ik / sqrt(J_ref_ii J_ref_kk)`` over all entries."""
    d = np.sqrt(np.abs(np.diag(J_ref)))
    scale = np.outer(d, d)
    scale[scale == 0] = 1.0
    return float(np.max(np.abs(J - J_ref) / scale))


def directional_gradient_errors(f, grad, w, rng, count=20, eps=1e-6):
    """Errors of ``2 Re <grad, delta>`` against central differences.

    ``delta`` ranges over ``count`` random ambient directions (unit norm).
    Each error is scaled by ``2 ||grad||``, the largest directional
    derivative, so directions nearly orthogonal to the gradient do not turn
    rounding noise into huge ratios.
    """
    scale = 2.0 * np.linalg.norm(grad)
    errs = []
    for _ in range(count):
        delta = rng.standard_normal(w.size) + 1j * rng.standard_normal(w.size)
        delta /= np.linalg.norm(delta)
        fd = (f(w + eps * delta) - f(w - eps * delta)) / (2 * eps)
        an = 2.0 * np.real(np.vdot(grad, delta))
        errs.append(abs(fd - an) / scale)
    return np.array(errs)


def random_unit_profile(n, rng):
    return manifold.random_point(n, rng)
