"""Acceptance gate: one test per criterion, each at its stated tolerance."""

import time
from dataclasses import replace

import numpy as np
import pytest
from click.testing import CliRunner

from conftest import record_criterion
from riscrb import fisher, harness, manifold, oracles
from riscrb.cli import main
from riscrb.optimizer import OptimizerConfig, kkt_residual, rgd, rna_weights
from riscrb.scene import SceneConfig, build_scene


def check(number, passed, detail):
    record_criterion(number, passed, detail)
    assert passed, detail


@pytest.fixture(scope="module")
def distance_rows():
    return harness.run_sweep(harness.default_spec("sweep_distance"))


@pytest.fixture(scope="module")
def size_rows():
    return harness.run_sweep(harness.default_spec("sweep_size"))


def test_criterion_01_gradient_oracle():
    t0 = time.perf_counter()
    sc = build_scene(oracles.random_config(2024))
    assert (sc.num_elements, sc.num_anchors) == (16, 3)
    rng = np.random.default_rng(2024)
    w = manifold.random_point(sc.num_elements, rng)
    _, g = fisher.value_and_gradient(w, sc)
    errs = oracles.directional_gradient_errors(lambda z: fisher.crb(z, sc), g, w, rng, count=20, eps=1e-6)
    elapsed = time.perf_counter() - t0
    check(1, errs.max() < 1e-5 and elapsed < 5.0, f"max rel err {errs.max():.2e} (< 1e-5), {elapsed:.2f} s (< 5 s)")


def test_criterion_02_fim_oracle():
    sc = build_scene(oracles.random_config(2024))
    assert (sc.num_elements, sc.num_anchors, sc.cfg.pilot_count) == (16, 3, 8)
    w = manifold.random_point(sc.num_elements, np.random.default_rng(1))
    err = oracles.normalized_entry_error(fisher.fim(w, sc).J_data, oracles.brute_force_fim(w, sc))
    check(2, err < 1e-5, f"max entrywise rel err {err:.2e} (< 1e-5)")


def test_criterion_03_schur_identity():
    worst = 0.0
    for seed in range(100):
        sc = build_scene(oracles.random_config(seed))
        b = fisher.fim(manifold.random_point(sc.num_elements, np.random.default_rng(seed)), sc)
        full = np.trace(np.linalg.inv(b.J)[:3, :3])
        worst = max(worst, abs(full - b.crb) / b.crb)
    check(3, worst < 1e-10, f"worst rel err over 100 scenes {worst:.2e} (< 1e-10)")


def test_criterion_04_manifold_suite():
    rng = np.random.default_rng(4)
    idem = tang = modulus = trip = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 64))
        w = manifold.random_point(n, rng)
        v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        p = manifold.project(w, v)
        idem = max(idem, np.max(np.abs(manifold.project(w, p) - p)))
        tang = max(tang, manifold.tangency_error(w, p))
        modulus = max(modulus, manifold.modulus_error(manifold.retract(w, 3.0 * p)))
        t = 1j * w * rng.uniform(-0.5, 0.5, n)
        trip = max(trip, np.max(np.abs(manifold.inverse_retract(w, manifold.retract(w, t)) - t)))
    ok = idem < 1e-12 and tang < 1e-10 and modulus < 1e-12 and trip < 1e-10
    check(4, ok, f"idempotence {idem:.1e}, tangency {tang:.1e}, modulus {modulus:.1e}, round-trip {trip:.1e}")


def test_criterion_05_kkt_suite():
    rng = np.random.default_rng(5)
    worst, sums = 0.0, 0.0
    for depth in (1, 2, 5, 8):
        for _ in range(200):
            # residual norms around the unit-length steps the optimizer produces
            scale = 10.0 ** rng.uniform(-3, 1)
            r = (rng.standard_normal((depth, 40)) + 1j * rng.standard_normal((depth, 40))) * scale
            c, gram = rna_weights(r, 1e-7)
            resid, constraint, _ = kkt_residual(gram, 1e-7, c)
            worst = max(worst, resid / np.linalg.norm(gram))
            sums = max(sums, constraint)
    check(5, worst < 1e-10 and sums <= 1e-15,
          f"worst stationarity residual / ||R|| {worst:.1e} (< 1e-10), |sum c - 1| {sums:.1e}")


class _Recorder(fisher.CrbObjective):
    """Objective that remembers the modulus error of every accepted iterate."""

    def __init__(self, scene):
        super().__init__(scene)
        self.modulus = []

    def value_and_gradient(self, w):
        self.modulus.append(manifold.modulus_error(w))
        return super().value_and_gradient(w)


def test_criterion_06_monotone_descent(reference_scene):
    obj = _Recorder(reference_scene)
    w0 = harness.initial_profile(reference_scene.num_elements, 0)
    res = rgd(w0, obj, OptimizerConfig(acceleration_enabled=False))
    f = res.trace.f
    strict = bool(np.all(np.diff(f) < 0))
    worst = max(obj.modulus)
    check(6, strict and worst < 1e-12 and len(f) > 1,
          f"{len(f) - 1} iterations, strictly decreasing: {strict}, worst modulus error {worst:.1e}")


def test_criterion_07_acceleration_speedup():
    t0 = time.perf_counter()
    ratios = []
    for seed in range(1, 11):
        s = harness.run_trace(harness.default_spec("trace", seed=seed)).summary
        ratios.append(s["ratio"] if s["ratio"] is not None else np.inf)
    elapsed = time.perf_counter() - t0
    wins = sum(r <= 0.7 for r in ratios)
    detail = f"{wins}/10 seeds at ratio <= 0.7 (ratios {', '.join(f'{r:.2f}' for r in ratios)}), {elapsed:.0f} s"
    check(7, wins >= 8 and elapsed <= 600, detail)


def test_criterion_08_distance_trend(distance_rows):
    xs = [r.x for r in distance_rows]
    aware = [r.rcrb_emi_aware for r in distance_rows]
    rho = harness.spearman(xs, aware)
    ordered = all(r.rcrb_emi_aware <= 1.01 * r.rcrb_emi_unaware for r in distance_rows)
    detail = (f"Spearman {rho:+.3f} (need > 0.95), EMI-aware <= 1.01 x unaware at every d: {ordered}; "
              f"rcrb {', '.join(f'{a:.4e}' for a in aware)}")
    check(8, rho > 0.95 and ordered, detail)


def test_criterion_09_size_trend(size_rows):
    xs = [r.x for r in size_rows]
    aware = [r.rcrb_emi_aware for r in size_rows]
    rho = harness.spearman(xs, aware)
    check(9, rho < -0.95, f"Spearman {rho:+.3f} (need < -0.95); rcrb {', '.join(f'{a:.4e}' for a in aware)}")


def test_criterion_10_beats_random(distance_rows, size_rows):
    rows = list(distance_rows) + list(size_rows)
    worst = max(r.rcrb_emi_aware / r.rcrb_random for r in rows)
    check(10, worst <= 1.01, f"worst optimized / best-of-50 random ratio {worst:.4f} over {len(rows)} rows (<= 1.01)")


def test_criterion_11_mle_sanity():
    rep = harness.mle_check(harness.default_spec("mle_check", mc_trials=500))
    check(11, rep.trials >= 500 and rep.ratio >= 0.9,
          f"RMSE {rep.rmse:.4e} vs RCRB {rep.rcrb:.4e}, ratio {rep.ratio:.3f} (>= 0.9), clipped {rep.clipped}")


def test_criterion_12_determinism(tmp_path):
    cfg = tmp_path / "small.toml"
    cfg.write_text("[scene]\nplate_len_y = 0.2\nplate_len_x = 0.2\n\n[experiment]\nrandom_k = 5\nmc_trials = 30\n")
    verbs = ["solve", "trace", "sweep-distance", "sweep-size", "mle-check"]
    differing = []
    for verb in verbs:
        outs = []
        for k in range(2):
            out = tmp_path / f"{verb}-{k}"
            res = CliRunner().invoke(main, [verb, "--config", str(cfg), "--seed", "7", "--out", str(out)])
            assert res.exit_code == 0, res.output
            outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
        if outs[0] != outs[1]:
            differing.append(verb)
    check(12, not differing, f"byte-identical outputs for {', '.join(verbs)}; differing: {differing or 'none'}")
