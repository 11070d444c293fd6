"""Complex circle manifold ``{w in C^N : |w_n| = 1}``.

Points and tangent vectors are plain complex numpy arrays.  The metric is
``Re <u, v>`` on ``C^N``, so :func:`project` is an orthogonal projection.
"""

from __future__ import annotations

import csv

import numpy as np

from .errors import InjectivityError, RetractionError

TANGENCY_TOL = 1e-10
INJECTIVITY_MARGIN = 1e-6


def normalize(w):
    """Return ``w`` rescaled entrywise to unit modulus."""
    w = np.asarray(w, dtype=complex)
    mag = np.abs(w)
    if np.any(mag == 0):
        raise RetractionError("cannot normalize a zero entry")
    return w / mag


def random_point(n, rng):
    return np.exp(1j * rng.uniform(0.0, 2 * np.pi, n))


def random_tangent(w, rng, scale=1.0):
    """Tangent vector ``j w t`` with i.i.d. normal ``t``."""
    return 1j * w * (scale * rng.standard_normal(w.shape[0]))


def inner(u, v):
    return float(np.real(np.vdot(u, v)))


def norm(v):
    return float(np.linalg.norm(v))


def modulus_error(w):
    return float(np.max(np.abs(np.abs(w) - 1.0)))


def tangency_error(w, v):
    return float(np.max(np.abs(np.real(v * np.conj(w)))))


def is_tangent(w, v, tol=TANGENCY_TOL):
    return tangency_error(w, v) < tol


def project(w, v):
    """Orthogonal projection of ambient ``v`` onto the tangent space at ``w``."""
    return v - np.real(v * np.conj(w)) * w


def riemannian_grad(w, egrad):
    """Riemannian gradient from the Wirtinger gradient ``d f / d w^*``."""
    return project(w, egrad)


def retract(w, v):
    """``(w + v) / |w + v|`` entrywise."""
    s = w + v
    mag = np.abs(s)
    if np.any(mag < 1e-14):
        raise RetractionError("w + v vanishes; step too large")
    return s / mag


def phase_difference(w, w_next):
    """Entrywise ``arg(w_next) - arg(w)`` wrapped to ``(-pi, pi]``."""
    return np.angle(w_next * np.conj(w))


def inverse_retract(w, w_next):
    """Tangent ``v`` at ``w`` with ``retract(w, v) == w_next``."""
    delta = phase_difference(w, w_next)
    worst = float(np.max(np.abs(delta))) if delta.size else 0.0
    if worst >= np.pi / 2 - INJECTIVITY_MARGIN:
        raise InjectivityError(f"phase step {worst:.6f} rad outside the injectivity range")
    return 1j * w * np.tan(delta)


def write_csv(w, path):
    """Write ``w`` as ``index, re, im, phase_rad`` rows."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["index", "re", "im", "phase_rad"])
        for n, z in enumerate(np.asarray(w)):
            out.writerow([n, repr(float(z.real)), repr(float(z.imag)), repr(float(np.angle(z)))])


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    w = np.array([complex(float(r["re"]), float(r["im"])) for r in rows])
    return normalize(w)
