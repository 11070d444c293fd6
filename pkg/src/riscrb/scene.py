"""RIS localization scene: grid layout, geometry, channels and EMI statistics.

Coordinates are metres, the RIS occupies the ``z = 0`` plane centred at the
origin, and element ``n = row * cols + col`` sits at ``(t_n, u_n, 0)`` with
rows running along ``y`` and columns along ``x``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .errors import CoincidentPointError, ConfigError, NonPsdEmiError

SPEED_OF_LIGHT = 3e8
PATHLOSS_MODELS = ("free_space_amplitude", "unit_gain", "user_table")
NUISANCE_MODES = ("prior", "known", "unknown")

# Reference simulation values.
REFERENCE_ANCHORS = ((-20.0, 50.0, 30.0), (-15.0, 35.0, 40.0), (-15.0, 60.0, 35.0))
REFERENCE_SIGMA2_DBW = -124.0
REFERENCE_EMI_DBW = -70.0


def db_to_linear(value_db):
    return 10.0 ** (np.asarray(value_db, dtype=float) / 10.0)


def elements_along(length, element_len, spacing):
    """Number of elements of a given pitch that fit along a plate edge."""
    return int(math.floor(length / (element_len + spacing) + 1e-9))


@dataclass(frozen=True)
class SceneConfig:
    """Physical description of one localization scene.

    ``sigma2`` holds linear per-anchor noise variances in W; a scalar is
    broadcast to every anchor.  ``pathloss_table`` is only read when
    ``pathloss_model == "user_table"`` and maps ``alpha``/``beta``/``zeta`` to
    per-anchor complex amplitudes.

    ``nuisance`` selects how the unknown channel gains enter the Fisher
    information: ``"prior"`` adds a Gaussian prior with relative standard
    deviation ``gain_prior_rel_std`` to every real gain component,
    ``"known"`` drops the gains from the unknowns, and ``"unknown"`` keeps
    them fully unknown (the per-anchor observation then cannot separate the
    gains from the position and every FIM is singular).
    """

    frequency: float = 30e9
    anchor_positions: tuple = REFERENCE_ANCHORS
    agent_position: tuple = (0.0, 0.0, 20.0)
    ris_rows: int = 40
    ris_cols: int = 40
    element_len_y: float = 0.01
    element_len_x: float = 0.01
    element_spacing: float = 0.01
    pilot_count: int = 64
    pilot_energy_per_sample: float = 1.0
    sigma2: tuple = (float(db_to_linear(REFERENCE_SIGMA2_DBW)),) * 3
    emi_flux_dbw_per_m2: float = REFERENCE_EMI_DBW
    pathloss_model: str = "free_space_amplitude"
    pathloss_table: Mapping | None = None
    nuisance: str = "prior"
    gain_prior_rel_std: float = 0.01

    def __post_init__(self):
        anchors = tuple(tuple(float(c) for c in p) for p in self.anchor_positions)
        object.__setattr__(self, "anchor_positions", anchors)
        object.__setattr__(self, "agent_position", tuple(float(c) for c in self.agent_position))
        sigma2 = np.atleast_1d(np.asarray(self.sigma2, dtype=float))
        if sigma2.size == 1 and len(anchors) > 1:
            sigma2 = np.repeat(sigma2, len(anchors))
        object.__setattr__(self, "sigma2", tuple(float(s) for s in sigma2))
        self.validate()

    def validate(self):
        if not self.anchor_positions:
            raise ConfigError("at least one anchor is required")
        if any(len(p) != 3 for p in self.anchor_positions) or len(self.agent_position) != 3:
            raise ConfigError("positions must be 3-vectors")
        if self.agent_position[2] <= 0:
            raise ConfigError("agent must lie in front of the RIS plane (q3 > 0)")
        if self.frequency <= 0:
            raise ConfigError("frequency must be positive")
        if int(self.ris_rows) != self.ris_rows or int(self.ris_cols) != self.ris_cols:
            raise ConfigError("ris_rows and ris_cols must be integers")
        if self.ris_rows < 1 or self.ris_cols < 1:
            raise ConfigError("ris_rows and ris_cols must be positive")
        for name in ("element_len_y", "element_len_x"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.element_spacing < 0:
            raise ConfigError("element_spacing must be non-negative")
        if self.pilot_count < 1 or self.pilot_energy_per_sample <= 0:
            raise ConfigError("pilot_count must be >= 1 and pilot energy positive")
        if len(self.sigma2) != len(self.anchor_positions):
            raise ConfigError("sigma2 needs one entry per anchor")
        if any(s <= 0 for s in self.sigma2):
            raise ConfigError("noise variances must be positive")
        if self.pathloss_model not in PATHLOSS_MODELS:
            raise ConfigError(f"pathloss_model must be one of {PATHLOSS_MODELS}")
        if self.pathloss_model == "user_table" and not self.pathloss_table:
            raise ConfigError("user_table pathloss needs pathloss_table")
        if self.nuisance not in NUISANCE_MODES:
            raise ConfigError(f"nuisance must be one of {NUISANCE_MODES}")
        if self.nuisance == "prior" and not self.gain_prior_rel_std > 0:
            raise ConfigError("gain_prior_rel_std must be positive")

    @property
    def num_anchors(self):
        return len(self.anchor_positions)

    @property
    def num_elements(self):
        return self.ris_rows * self.ris_cols

    @property
    def wavelength(self):
        return SPEED_OF_LIGHT / self.frequency

    @property
    def wavenumber(self):
        return 2 * math.pi / self.wavelength

    @property
    def pilot_energy(self):
        """Total pilot energy ``sum_t |x_t|^2``."""
        return self.pilot_count * self.pilot_energy_per_sample

    def with_plate(self, a, b=None):
        """Copy with rows/cols recomputed from a plate of ``a`` (y) by ``b`` (x) metres."""
        b = a if b is None else b
        rows = elements_along(a, self.element_len_y, self.element_spacing)
        cols = elements_along(b, self.element_len_x, self.element_spacing)
        if rows < 1 or cols < 1:
            raise ConfigError(f"plate {a} x {b} m holds no element")
        return replace(self, ris_rows=rows, ris_cols=cols)

    def with_agent(self, position):
        return replace(self, agent_position=tuple(position))

    def scaled_noise(self, factor):
        """Copy with thermal noise and EMI flux both multiplied by ``factor``."""
        return replace(
            self,
            sigma2=tuple(s * factor for s in self.sigma2),
            emi_flux_dbw_per_m2=self.emi_flux_dbw_per_m2 + 10 * math.log10(factor),
        )

    @classmethod
    def reference(cls, plate=0.8, agent=(0.0, 0.0, 20.0), **overrides):
        """Reference simulation setup, optionally resized to a square plate of side ``plate``."""
        return cls(agent_position=tuple(agent), **overrides).with_plate(plate)


@dataclass(frozen=True)
class RisGrid:
    element_centers: np.ndarray  # (N, 2): columns t (x) and u (y)
    pitch_x: float
    pitch_y: float
    rows: int
    cols: int

    @property
    def num_elements(self):
        return self.element_centers.shape[0]


@dataclass(frozen=True)
class GeometryTables:
    rho: np.ndarray  # (N,) element -> agent
    r: np.ndarray  # (M,) anchor -> agent
    d: np.ndarray  # (M, N) anchor -> element
    drho_dq: np.ndarray  # (N, 3)
    dr_dq: np.ndarray  # (M, 3)
    rho_centroid: float  # agent -> RIS centroid
    d_centroid: np.ndarray  # (M,) anchor -> RIS centroid


@dataclass(frozen=True)
class ChannelSet:
    alpha: np.ndarray  # (M,) complex
    beta: np.ndarray
    zeta: np.ndarray
    a1: np.ndarray  # (M, N) exp(-j k0 rho_n); identical rows
    a2: np.ndarray  # (M, N) exp(-j k0 d_mn)
    h_ris: np.ndarray  # (M, N)
    h_dp: np.ndarray  # (M,)
    h2: np.ndarray  # (M, N) zeta_m * a2_m


@dataclass(frozen=True)
class EmiModel:
    R: np.ndarray  # (N, N) real symmetric
    emi_flux_linear: float
    effective_area: float

    @property
    def element_power(self):
        return self.emi_flux_linear * self.effective_area

    def min_eigenvalue(self):
        return float(np.linalg.eigvalsh(self.R)[0])

    def is_psd(self):
        n = self.R.shape[0]
        return self.min_eigenvalue() >= -1e-10 * np.trace(self.R) / n


@dataclass(frozen=True)
class Scene:
    """Everything derived from a :class:`SceneConfig`, built once and shared."""

    cfg: SceneConfig
    grid: RisGrid
    geom: GeometryTables
    channels: ChannelSet
    emi: EmiModel
    sigma2: np.ndarray = field(repr=False)

    @property
    def wavenumber(self):
        return self.cfg.wavenumber

    @property
    def num_elements(self):
        return self.grid.num_elements

    @property
    def num_anchors(self):
        return self.cfg.num_anchors


def build_grid(cfg):
    rows, cols = int(cfg.ris_rows), int(cfg.ris_cols)
    if rows < 1 or cols < 1 or cfg.element_len_x <= 0 or cfg.element_len_y <= 0:
        raise ConfigError("grid needs positive rows, cols and element lengths")
    pitch_x = cfg.element_len_x + cfg.element_spacing
    pitch_y = cfg.element_len_y + cfg.element_spacing
    row, col = np.divmod(np.arange(rows * cols), cols)
    t = (col - (cols - 1) / 2.0) * pitch_x
    u = (row - (rows - 1) / 2.0) * pitch_y
    return RisGrid(np.column_stack([t, u]), pitch_x, pitch_y, rows, cols)


def geometry(cfg, grid):
    q = np.asarray(cfg.agent_position, dtype=float)
    anchors = np.asarray(cfg.anchor_positions, dtype=float)
    elems = np.column_stack([grid.element_centers, np.zeros(grid.num_elements)])

    diff_rho = q[None, :] - elems
    rho = np.linalg.norm(diff_rho, axis=1)
    diff_r = q[None, :] - anchors
    r = np.linalg.norm(diff_r, axis=1)
    d = np.linalg.norm(anchors[:, None, :] - elems[None, :, :], axis=2)
    closest = min(rho.min(), r.min(), d.min())
    if closest < 1e-9:
        raise CoincidentPointError(f"points coincide (distance {closest:.3e} m)")
    return GeometryTables(
        rho=rho,
        r=r,
        d=d,
        drho_dq=diff_rho / rho[:, None],
        dr_dq=diff_r / r[:, None],
        rho_centroid=float(np.linalg.norm(q)),
        d_centroid=np.linalg.norm(anchors, axis=1),
    )


def _table_entry(table, key, m):
    vals = table[key]
    if len(vals) != m:
        raise ConfigError(f"pathloss_table[{key!r}] needs {m} entries")
    out = []
    for v in vals:
        if isinstance(v, (list, tuple)):
            out.append(complex(v[0], v[1]))
        else:
            out.append(complex(v))
    return np.array(out)


def pathloss(cfg, geom):
    """Return ``(alpha, beta, zeta)`` complex amplitudes for every anchor."""
    m = cfg.num_anchors
    if cfg.pathloss_model == "unit_gain":
        ones = np.ones(m, dtype=complex)
        return ones, ones.copy(), ones.copy()
    if cfg.pathloss_model == "user_table":
        t = cfg.pathloss_table
        return tuple(_table_entry(t, key, m) for key in ("alpha", "beta", "zeta"))
    lam = cfg.wavelength
    beta = lam / (4 * np.pi * geom.r)
    zeta = lam / (4 * np.pi * geom.d_centroid)
    aperture = math.sqrt(cfg.element_len_y * cfg.element_len_x) / lam
    alpha = zeta * lam / (4 * np.pi * geom.rho_centroid) * aperture
    return alpha.astype(complex), beta.astype(complex), zeta.astype(complex)


def channels(cfg, grid, geom):
    k0 = cfg.wavenumber
    m = cfg.num_anchors
    alpha, beta, zeta = pathloss(cfg, geom)
    a1 = np.tile(np.exp(-1j * k0 * geom.rho), (m, 1))
    a2 = np.exp(-1j * k0 * geom.d)
    return ChannelSet(
        alpha=alpha,
        beta=beta,
        zeta=zeta,
        a1=a1,
        a2=a2,
        h_ris=alpha[:, None] * a1 * a2,
        h_dp=beta * np.exp(-1j * k0 * geom.r),
        h2=zeta[:, None] * a2,
    )


def emi_correlation(cfg, grid):
    flux = float(db_to_linear(cfg.emi_flux_dbw_per_m2))
    area = cfg.element_len_y * cfg.element_len_x
    c = grid.element_centers
    dist = np.sqrt(
        (c[:, None, 0] - c[None, :, 0]) ** 2 + (c[:, None, 1] - c[None, :, 1]) ** 2
    )
    R = flux * area * np.sinc(2.0 * dist / cfg.wavelength)
    return EmiModel(R=R, emi_flux_linear=flux, effective_area=area)


def build_scene(cfg):
    grid = build_grid(cfg)
    geom = geometry(cfg, grid)
    return Scene(
        cfg=cfg,
        grid=grid,
        geom=geom,
        channels=channels(cfg, grid, geom),
        emi=emi_correlation(cfg, grid),
        sigma2=np.asarray(cfg.sigma2, dtype=float),
    )


def emi_quadratic(w, channels, emi):
    """EMI power ``w^T H2^T R H2^* w^*`` reaching every anchor, shape (M,).

    Also returns ``v = h2 * w`` per anchor so callers can reuse ``R v^*``.
    """
    v = channels.h2 * np.asarray(w)[None, :]
    Rv = v.conj() @ emi.R  # R symmetric, so row m is (R v_m^*)^T
    quad = np.einsum("mn,mn->m", v, Rv)
    return quad, v, Rv


def noise_powers(w, scene, emi_aware=True):
    """General noise power ``P_m`` at every anchor, shape (M,)."""
    if not emi_aware:
        return scene.sigma2.copy()
    quad, _, _ = emi_quadratic(w, scene.channels, scene.emi)
    return _checked_powers(quad, scene.sigma2)


def _checked_powers(quad, sigma2):
    re = quad.real
    if np.any(re < -1e-10 * sigma2):
        raise NonPsdEmiError(f"EMI quadratic form is negative: {re.min():.3e}")
    return np.maximum(re, 0.0) + sigma2


def noise_power(w, channels, emi, m, sigma2):
    """General noise power at anchor ``m`` (thermal plus reflected EMI)."""
    if not 0 <= m < channels.h2.shape[0]:
        raise IndexError(f"anchor index {m} out of range")
    v = channels.h2[m] * np.asarray(w)
    quad = v @ emi.R @ v.conj()
    return float(_checked_powers(np.array([quad]), np.array([sigma2]))[0])


def describe(scene):
    """Plain-text audit summary used by ``scene dump``."""
    g, cfg = scene.geom, scene.cfg
    lines = [
        f"N = {scene.num_elements} ({scene.grid.rows} x {scene.grid.cols})",
        f"M = {scene.num_anchors}",
        f"pitch_x = {scene.grid.pitch_x:.6g} m, pitch_y = {scene.grid.pitch_y:.6g} m",
        f"lambda0 = {cfg.wavelength:.6g} m, k0 = {cfg.wavenumber:.6g} rad/m",
        f"rho: min {g.rho.min():.6g} m, max {g.rho.max():.6g} m",
    ]
    for m in range(scene.num_anchors):
        lines.append(
            f"anchor {m}: r = {g.r[m]:.6g} m, d in [{g.d[m].min():.6g}, {g.d[m].max():.6g}] m, "
            f"|alpha| = {abs(scene.channels.alpha[m]):.4e}, |beta| = {abs(scene.channels.beta[m]):.4e}"
        )
    lines.append(f"EMI element power = {scene.emi.element_power:.4e} W")
    return "\n".join(lines)
