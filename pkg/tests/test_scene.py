import math

import numpy as np
import pytest

from riscrb import oracles
from riscrb.errors import CoincidentPointError, ConfigError
from riscrb.scene import (
    SceneConfig,
    build_grid,
    build_scene,
    emi_quadratic,
    geometry,
    noise_power,
    noise_powers,
)


def test_single_element_grid_is_centered():
    grid = build_grid(SceneConfig(ris_rows=1, ris_cols=1))
    np.testing.assert_allclose(grid.element_centers, [[0.0, 0.0]])


def test_two_column_grid():
    grid = build_grid(SceneConfig(ris_rows=1, ris_cols=2))
    np.testing.assert_allclose(grid.element_centers, [[-0.01, 0.0], [0.01, 0.0]], atol=1e-15)
    assert grid.pitch_x == pytest.approx(0.02)


def test_row_major_ordering():
    grid = build_grid(SceneConfig(ris_rows=2, ris_cols=3))
    t, u = grid.element_centers.T
    # columns advance along x within a row, rows advance along y
    assert t[0] < t[1] < t[2] and u[0] == u[1] == u[2]
    assert u[3] > u[0]


@pytest.mark.parametrize("plate, n", [(0.8, 1600), (0.6, 900), (0.4, 400), (0.2, 100)])
def test_plate_element_count(plate, n):
    cfg = SceneConfig.reference(plate=plate)
    assert cfg.num_elements == n
    side = math.isqrt(n)
    # one more element per side would not fit on the plate
    assert side * 0.02 <= plate + 1e-12 < (side + 1) * 0.02


def test_reference_anchor_distance():
    sc = build_scene(SceneConfig.reference())
    assert sc.geom.r[0] == pytest.approx(math.sqrt(3000.0), rel=1e-12)
    assert sc.geom.r[0] == pytest.approx(54.772, abs=5e-4)


def test_direct_path_free_space_amplitude():
    sc = build_scene(SceneConfig.reference())
    lam = sc.cfg.wavelength
    assert lam == pytest.approx(0.01)
    assert abs(sc.channels.beta[0]) == pytest.approx(lam / (4 * math.pi * math.sqrt(3000.0)), rel=1e-12)
    # the four-digit figure 1.4527e-5 is a rounded approximation
    assert abs(sc.channels.beta[0]) == pytest.approx(1.4527e-5, rel=2e-4)


def test_vertical_displacement_partials():
    cfg = SceneConfig(ris_rows=1, ris_cols=1)
    g = geometry(cfg, build_grid(cfg))
    assert g.rho[0] == pytest.approx(20.0)
    np.testing.assert_allclose(g.drho_dq[0], [0, 0, 1])


def test_partials_are_unit_vectors(small_scene):
    g = small_scene.geom
    np.testing.assert_allclose(np.linalg.norm(g.drho_dq, axis=1), 1.0, rtol=1e-14)
    np.testing.assert_allclose(np.linalg.norm(g.dr_dq, axis=1), 1.0, rtol=1e-14)


def test_partials_match_finite_differences(small_scene):
    cfg, grid, h = small_scene.cfg, small_scene.grid, 1e-6
    q = np.array(cfg.agent_position)
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        up = geometry(cfg.with_agent(q + e), grid)
        dn = geometry(cfg.with_agent(q - e), grid)
        fd_rho = (up.rho - dn.rho) / (2 * h)
        fd_r = (up.r - dn.r) / (2 * h)
        # relative to the unit-norm partial vector
        assert np.max(np.abs(fd_rho - small_scene.geom.drho_dq[:, i])) < 1e-6
        assert np.max(np.abs(fd_r - small_scene.geom.dr_dq[:, i])) < 1e-6


def test_coincident_agent_rejected():
    cfg = SceneConfig(ris_rows=1, ris_cols=1, agent_position=(-20.0, 50.0, 30.0))
    with pytest.raises(CoincidentPointError):
        build_scene(cfg)


@pytest.mark.parametrize(
    "kw",
    [
        {"agent_position": (0, 0, -1)},
        {"frequency": 0.0},
        {"ris_rows": 0},
        {"pilot_count": 0},
        {"sigma2": (1e-12, -1.0, 1e-12)},
        {"anchor_positions": ()},
        {"pathloss_model": "bogus"},
        {"nuisance": "bogus"},
    ],
)
def test_invalid_config_rejected(kw):
    with pytest.raises(ConfigError):
        SceneConfig(**kw)


def test_unit_gain_model():
    sc = build_scene(SceneConfig(ris_rows=2, ris_cols=2, pathloss_model="unit_gain"))
    for arr in (sc.channels.alpha, sc.channels.beta, sc.channels.zeta):
        np.testing.assert_allclose(arr, 1.0)
    np.testing.assert_allclose(np.abs(sc.channels.h_dp), 1.0)


def test_user_table_model():
    table = {"alpha": [[1e-6, 0.0]] * 3, "beta": [[2e-5, 1e-5]] * 3, "zeta": [[3e-4, 0.0]] * 3}
    sc = build_scene(SceneConfig(ris_rows=2, ris_cols=2, pathloss_model="user_table", pathloss_table=table))
    np.testing.assert_allclose(sc.channels.beta, 2e-5 + 1e-5j)


def test_steering_vectors_unit_modulus(small_scene):
    ch = small_scene.channels
    assert np.max(np.abs(np.abs(ch.a1) - 1)) < 1e-12
    assert np.max(np.abs(np.abs(ch.a2) - 1)) < 1e-12
    np.testing.assert_allclose(ch.h_ris, ch.alpha[:, None] * ch.a1 * ch.a2, rtol=1e-14)
    np.testing.assert_allclose(ch.h2, ch.zeta[:, None] * ch.a2, rtol=1e-14)


def test_full_wavelength_phase_wrap():
    # agent exactly one wavelength above a single element
    cfg = SceneConfig(ris_rows=1, ris_cols=1, agent_position=(0.0, 0.0, 0.01))
    sc = build_scene(cfg)
    assert abs(sc.channels.a1[0, 0] - 1.0) < 1e-12


def test_emi_diagonal_and_symmetry(small_scene):
    emi = small_scene.emi
    Pe = emi.element_power
    assert Pe == pytest.approx(10 ** (-70 / 10) * 1e-4)
    np.testing.assert_allclose(np.diag(emi.R), Pe, rtol=1e-15)
    assert np.max(np.abs(emi.R - emi.R.T)) < 1e-14 * Pe
    assert emi.is_psd


def test_emi_reference_neighbours():
    sc = build_scene(SceneConfig.reference(plate=0.1))
    R, Pe = sc.emi.R, sc.emi.element_power
    cols = sc.grid.cols
    # axis neighbours at 0.02 m = 2 wavelengths: sinc(4) = 0
    assert abs(R[0, 1]) < 1e-15 * Pe * 1e3
    x = 4 * math.sqrt(2)
    expected = math.sin(math.pi * x) / (math.pi * x)
    assert R[0, cols + 1] / Pe == pytest.approx(expected, rel=1e-12)
    # independent evaluation of sin(pi x) / (pi x) at x = 4 sqrt 2
    assert expected == pytest.approx(-0.0495751, abs=1e-7)


def test_emi_half_wavelength_is_uncorrelated():
    # pitch of half a wavelength
    cfg = SceneConfig(ris_rows=1, ris_cols=2, element_len_x=0.004, element_spacing=0.001)
    sc = build_scene(cfg)
    assert abs(sc.emi.R[0, 1]) < 1e-16 * sc.emi.element_power * 1e3


def test_noise_power_without_emi(small_scene, rng):
    cfg = small_scene.cfg
    quiet = build_scene(SceneConfig(**{**cfg.__dict__, "emi_flux_dbw_per_m2": -1000.0}))
    w = np.exp(1j * rng.uniform(0, 2 * np.pi, quiet.num_elements))
    np.testing.assert_allclose(noise_powers(w, quiet), quiet.sigma2, rtol=1e-12)
    np.testing.assert_allclose(noise_powers(w, small_scene, emi_aware=False), small_scene.sigma2)


def test_noise_power_single_element():
    sc = build_scene(SceneConfig(ris_rows=1, ris_cols=1))
    w = np.array([1.0 + 0j])
    for m in range(3):
        expected = abs(sc.channels.zeta[m]) ** 2 * sc.emi.element_power + sc.sigma2[m]
        assert noise_power(w, sc.channels, sc.emi, m, sc.sigma2[m]) == pytest.approx(expected, rel=1e-12)


def test_noise_power_matches_explicit_matrices(small_scene, rng):
    w = np.exp(1j * rng.uniform(0, 2 * np.pi, small_scene.num_elements))
    np.testing.assert_allclose(noise_powers(w, small_scene), oracles.direct_noise_powers(w, small_scene), rtol=1e-12)


def test_noise_power_monte_carlo():
    cfg = oracles.random_config(3, rows=3, cols=3, emi_flux_dbw_per_m2=-20.0)
    sc = build_scene(cfg)
    rng = np.random.default_rng(5)
    w = np.exp(1j * rng.uniform(0, 2 * np.pi, sc.num_elements))
    draws = 1_000_000
    L = np.linalg.cholesky(sc.emi.R + 1e-30 * np.eye(sc.num_elements))
    z = L @ (rng.standard_normal((sc.num_elements, draws)) + 1j * rng.standard_normal((sc.num_elements, draws))) / np.sqrt(2)
    P = noise_powers(w, sc)
    for m in range(sc.num_anchors):
        sample = np.mean(np.abs((sc.channels.h2[m] * w) @ z) ** 2) + sc.sigma2[m]
        assert sample == pytest.approx(P[m], rel=0.01)


def test_noise_power_global_phase_invariance(small_scene, rng):
    w = np.exp(1j * rng.uniform(0, 2 * np.pi, small_scene.num_elements))
    base = noise_powers(w, small_scene)
    for phi in rng.uniform(0, 2 * np.pi, 5):
        np.testing.assert_allclose(noise_powers(np.exp(1j * phi) * w, small_scene), base, rtol=1e-12)


def test_noise_scaling_doubles_power(small_scene, rng):
    w = np.exp(1j * rng.uniform(0, 2 * np.pi, small_scene.num_elements))
    doubled = build_scene(small_scene.cfg.scaled_noise(2.0))
    np.testing.assert_allclose(noise_powers(w, doubled), 2 * noise_powers(w, small_scene), rtol=1e-12)


def test_emi_quadratic_real_and_nonnegative(small_scene, rng):
    w = np.exp(1j * rng.uniform(0, 2 * np.pi, small_scene.num_elements))
    quad, _, _ = emi_quadratic(w, small_scene.channels, small_scene.emi)
    assert np.all(np.real(quad) >= 0)
