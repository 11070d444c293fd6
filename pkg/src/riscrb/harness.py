"""Experiment drivers: convergence traces, parameter sweeps, Monte-Carlo checks.

Absolute RCRB values depend on the pathloss and pilot-energy assumptions in
:class:`~riscrb.scene.SceneConfig`; the drivers are meant for trends and
orderings between methods, not for matching published numbers.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__, fisher, manifold, oracles
from .errors import ConfigError, DegenerateSceneError, RiscrbError
from .fisher import CrbObjective
from .optimizer import OptimizerConfig, solve
from .scene import SceneConfig, build_scene, emi_quadratic

log = logging.getLogger(__name__)

KINDS = ("trace", "sweep_distance", "sweep_size", "validate", "mle_check", "solve")
DEFAULT_SWEEPS = {
    "sweep_distance": (10.0, 15.0, 20.0, 25.0, 30.0),
    "sweep_size": (0.2, 0.4, 0.6, 0.8),
}
MAX_DESK_ELEMENTS = 1600


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str = "trace"
    scene: SceneConfig = field(default_factory=SceneConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    sweep_values: tuple = ()
    random_phase: bool = True
    emi_unaware: bool = True
    emi_free_reference: bool = False
    random_k: int = 50
    mc_trials: int = 500
    seed: int = 0
    warm_start: bool = True
    gradient_mode: str = "exact"
    design_emi_aware: bool = True
    allow_large: bool = False
    jobs: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}")
        vals = tuple(float(v) for v in self.sweep_values)
        object.__setattr__(self, "sweep_values", vals)
        if self.kind in DEFAULT_SWEEPS:
            if not vals:
                raise ConfigError("sweep needs at least one value")
            if any(b <= a for a, b in zip(vals, vals[1:])):
                raise ConfigError("sweep values must be strictly increasing")
        if self.mc_trials < 1 or self.random_k < 1:
            raise ConfigError("mc_trials and random_k must be >= 1")
        if self.gradient_mode not in fisher.GRADIENT_MODES:
            raise ConfigError(f"gradient_mode must be one of {fisher.GRADIENT_MODES}")

    def to_dict(self):
        return dataclasses.asdict(self)

    def config_hash(self):
        # the worker count never changes results
        data = self.to_dict()
        data.pop("jobs")
        blob = json.dumps(data, sort_keys=True, default=repr)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def default_spec(kind, **kw):
    """Reference experiment for ``kind``: a = b = 0.6 m for distance sweeps, 0.8 m otherwise."""
    if kind == "sweep_distance":
        scene = SceneConfig.reference(plate=0.6)
    else:
        scene = SceneConfig.reference(plate=0.8)
    kw.setdefault("sweep_values", DEFAULT_SWEEPS.get(kind, ()))
    kw.setdefault("scene", scene)
    return ExperimentSpec(kind=kind, **kw)


def initial_profile(n, seed):
    return manifold.random_point(n, np.random.default_rng(seed))


def _check_size(cfg, spec):
    if cfg.num_elements > MAX_DESK_ELEMENTS and not spec.allow_large:
        raise ConfigError(
            f"N = {cfg.num_elements} exceeds {MAX_DESK_ELEMENTS}; set allow_large to run it"
        )


# -- single runs -------------------------------------------------------------


@dataclass
class SolveResult:
    scene: object
    run: object
    rcrb: float


def run_solve(spec, w0=None):
    """One optimization; ``rcrb`` is always evaluated under EMI."""
    _check_size(spec.scene, spec)
    sc = build_scene(spec.scene)
    if w0 is None:
        w0 = initial_profile(sc.num_elements, spec.seed)
    res = solve(w0, CrbObjective(sc, spec.design_emi_aware, spec.gradient_mode), spec.optimizer)
    try:
        value = fisher.rcrb(res.w, sc)
    except DegenerateSceneError:
        value = math.inf
    return SolveResult(sc, res, value)


@dataclass
class TraceResult:
    accelerated: object
    plain: object
    summary: dict


def run_trace(spec):
    """Plain and accelerated runs from the same random start.

    The plain run stops on its own tolerance; the accelerated run then gets
    exactly the same iteration budget with the gradient test switched off,
    so both traces cover the same horizon and the summary can report when
    the accelerated run first reaches the plain final objective.
    """
    _check_size(spec.scene, spec)
    sc = build_scene(spec.scene)
    w0 = initial_profile(sc.num_elements, spec.seed)
    obj = CrbObjective(sc, spec.design_emi_aware, spec.gradient_mode)
    plain = solve(w0, obj, replace(spec.optimizer, acceleration_enabled=False))
    paired = replace(
        spec.optimizer,
        max_outer_iters=plain.iterations,
        tolerance="absolute",
        epsilon=np.finfo(float).tiny,
    )
    acc = solve(w0, obj, paired)
    reach = acc.trace.first_iteration_reaching(plain.f)
    summary = {
        "plain_iterations": plain.iterations,
        "plain_final_rcrb": math.sqrt(plain.f),
        "plain_status": plain.status,
        "accelerated_final_rcrb": math.sqrt(acc.f),
        "accelerated_status": acc.status,
        "accelerated_iterations_to_plain_rcrb": reach,
        "ratio": (reach / plain.iterations) if reach is not None and plain.iterations else None,
    }
    return TraceResult(acc, plain, summary)


# -- sweeps ------------------------------------------------------------------


@dataclass
class SweepRow:
    x: float
    n_elements: int
    rcrb_emi_aware: float = math.nan
    rcrb_emi_unaware: float = math.nan
    rcrb_random: float = math.nan
    rcrb_emi_free: float = math.nan
    iterations: int = 0
    status: str = ""
    w: np.ndarray | None = field(default=None, repr=False)

    CSV_FIELDS = ("x", "n_elements", "rcrb_emi_aware", "rcrb_emi_unaware", "rcrb_random",
                  "rcrb_emi_free", "iterations", "status")

    def as_record(self):
        return {k: getattr(self, k) for k in self.CSV_FIELDS}


def row_config(spec, x):
    if spec.kind == "sweep_distance":
        q = spec.scene.agent_position
        return spec.scene.with_agent((q[0], q[1], x))
    if spec.kind == "sweep_size":
        return spec.scene.with_plate(x)
    raise ConfigError(f"{spec.kind} is not a sweep")


def best_random_crb(sc, k, seed):
    rng = np.random.default_rng([seed, 1])
    best = math.inf
    for _ in range(k):
        w = manifold.random_point(sc.num_elements, rng)
        try:
            best = min(best, fisher.crb(w, sc))
        except DegenerateSceneError:
            continue
    return best


def sweep_row(spec, x, w_start=None):
    cfg = row_config(spec, x)
    _check_size(cfg, spec)
    row = SweepRow(x=float(x), n_elements=cfg.num_elements)
    try:
        sc = build_scene(cfg)
        w0 = initial_profile(sc.num_elements, spec.seed)
        start = w_start if w_start is not None and w_start.shape == w0.shape else w0
        aware = solve(start, CrbObjective(sc, True, spec.gradient_mode), spec.optimizer)
        row.status = aware.status
        row.iterations = aware.iterations
        row.w = aware.w
        row.rcrb_emi_aware = math.sqrt(aware.f)
        if spec.emi_unaware or spec.emi_free_reference:
            unaware = solve(w0, CrbObjective(sc, False, spec.gradient_mode), spec.optimizer)
            row.rcrb_emi_unaware = math.sqrt(fisher.crb(unaware.w, sc, emi_aware=True))
            if spec.emi_free_reference:
                row.rcrb_emi_free = math.sqrt(unaware.f)
            if row.rcrb_emi_aware > 1.01 * row.rcrb_emi_unaware:
                log.warning("x=%g: EMI-aware design is worse than EMI-unaware (local minimum)", x)
        if spec.random_phase:
            row.rcrb_random = math.sqrt(best_random_crb(sc, spec.random_k, spec.seed))
    except DegenerateSceneError as exc:
        row.status = "degenerate_scene"
        log.warning("x=%g: %s", x, exc)
    return row


def _row_task(args):
    spec, x = args
    return sweep_row(spec, x)


def run_sweep(spec):
    """Rows for a distance or size sweep, in sweep order."""
    if spec.kind not in DEFAULT_SWEEPS:
        raise ConfigError(f"{spec.kind} is not a sweep")
    warm = spec.warm_start and spec.kind == "sweep_distance"
    if warm or spec.jobs <= 1:
        rows, prev = [], None
        for x in spec.sweep_values:
            row = sweep_row(spec, x, prev if warm else None)
            prev = row.w
            rows.append(row)
        return rows
    with ProcessPoolExecutor(max_workers=spec.jobs) as pool:
        return list(pool.map(_row_task, [(spec, x) for x in spec.sweep_values]))


def run_sweep_distance(spec):
    return run_sweep(replace(spec, kind="sweep_distance"))


def run_sweep_size(spec):
    return run_sweep(replace(spec, kind="sweep_size"))


def spearman(xs, ys):
    return float(stats.spearmanr(xs, ys)[0])


# -- Monte-Carlo estimator check --------------------------------------------


class _LikelihoodModel:
    """Concentrated negative log-likelihood of the agent position.

    Geometry and reflection coefficients are known; the gains are either
    known or profiled out under the same Gaussian prior the FIM uses.
    """

    def __init__(self, sc, w, P):
        self.sc = sc
        self.w = w
        cfg = sc.cfg
        self.k0 = cfg.wavenumber
        self.t, self.u = sc.grid.element_centers.T
        self.anchors = np.asarray(cfg.anchor_positions)
        self.d_phase = np.exp(-1j * self.k0 * sc.geom.d) * w[None, :]  # (M, N)
        self.weight = cfg.pilot_energy / P  # (M,)
        self.alpha0, self.beta0 = sc.channels.alpha, sc.channels.beta
        self.nuisance = cfg.nuisance
        if self.nuisance == "prior":
            kappa = cfg.gain_prior_rel_std
            # complex prior precision: 1 / (2 var) per complex gain
            self.prec_a = 1.0 / (2 * (kappa * np.abs(self.alpha0)) ** 2)
            self.prec_b = 1.0 / (2 * (kappa * np.abs(self.beta0)) ** 2)

    def basis(self, qs):
        """Per-candidate RIS sum ``G`` and direct phase ``b``, both (Q, M)."""
        qs = np.atleast_2d(qs)
        rho = np.sqrt((qs[:, None, 0] - self.t) ** 2 + (qs[:, None, 1] - self.u) ** 2 + qs[:, None, 2] ** 2)
        a1 = np.exp(-1j * self.k0 * rho)  # (Q, N)
        G = a1 @ self.d_phase.T
        r = np.linalg.norm(qs[:, None, :] - self.anchors[None, :, :], axis=2)
        return G, np.exp(-1j * self.k0 * r)

    def cost(self, z_hat, G, b):
        """Cost for observations ``z_hat`` (trials, M) on candidates (Q, M) -> (trials, Q)."""
        wgt = self.weight
        if self.nuisance != "prior":
            z = self.alpha0 * G + self.beta0 * b
            return np.sum(wgt * np.abs(z_hat[:, None, :] - z[None]) ** 2, axis=2)
        # minimize wgt|z - aG - bb|^2 + pa|a - a0|^2 + pb|b - b0|^2 over complex (a, b)
        pa, pb = self.prec_a, self.prec_b
        H11 = wgt * np.abs(G) ** 2 + pa
        H22 = wgt * np.abs(b) ** 2 + pb
        H12 = wgt * np.conj(G) * b
        det = H11 * H22 - np.abs(H12) ** 2
        r1 = wgt * np.conj(G)[None] * z_hat[:, None, :] + (pa * self.alpha0)
        r2 = wgt * np.conj(b)[None] * z_hat[:, None, :] + (pb * self.beta0)
        a = (H22 * r1 - H12 * r2) / det
        bb = (H11 * r2 - np.conj(H12) * r1) / det
        resid = z_hat[:, None, :] - a * G - bb * b
        total = wgt * np.abs(resid) ** 2 + pa * np.abs(a - self.alpha0) ** 2 + pb * np.abs(bb - self.beta0) ** 2
        return np.sum(total, axis=2)


def _quadratic_vertex(offsets, values):
    """Stationary point of the least-squares quadratic through 3-D samples."""
    x, y, z = offsets.T
    A = np.column_stack([np.ones_like(x), x, y, z, x * x, y * y, z * z, x * y, x * z, y * z])
    coef = np.linalg.lstsq(A, values, rcond=None)[0]
    H = np.array([
        [2 * coef[4], coef[7], coef[8]],
        [coef[7], 2 * coef[5], coef[9]],
        [coef[8], coef[9], 2 * coef[6]],
    ])
    try:
        step = -np.linalg.solve(H, coef[1:4])
    except np.linalg.LinAlgError:
        return None
    if np.any(np.linalg.eigvalsh(H) <= 0):
        return None
    return step


@dataclass
class MleReport:
    rmse: float
    rcrb: float
    ratio: float
    rmse_ci_halfwidth: float
    trials: int
    clipped: int
    max_error: float

    def as_record(self):
        return dataclasses.asdict(self)


def mle_check(spec, w=None, noise_scale=1.0, grid_points=7, grid_halfwidth=5.0, refine_rounds=3):
    """Monte-Carlo RMSE of a grid-plus-quadratic-refinement estimator.

    Each trial draws fresh thermal noise, EMI reflected through the RIS
    (shared by all anchors), and, in ``prior`` nuisance mode, channel gains
    from the prior.  The search grid lives in the whitened coordinates of
    the position CRB, ``grid_halfwidth`` standard deviations wide.
    ``noise_scale`` multiplies every random term; ``0`` gives noiseless
    observations with the true gains.
    """
    _check_size(spec.scene, spec)
    sc = build_scene(spec.scene)
    cfg = sc.cfg
    if w is None:
        obj = CrbObjective(sc, spec.design_emi_aware, spec.gradient_mode)
        w = solve(initial_profile(sc.num_elements, spec.seed), obj, spec.optimizer).w
    bundle = fisher.fim(w, sc)
    cov = np.linalg.inv(bundle.J_f)
    L = np.linalg.cholesky(0.5 * (cov + cov.T))
    q_true = np.asarray(cfg.agent_position)
    model = _LikelihoodModel(sc, w, bundle.noise_powers)
    rng = np.random.default_rng([spec.seed, 2])
    M, T, trials = cfg.num_anchors, cfg.pilot_count, spec.mc_trials

    # observations reduced to z_hat = x^H y / E_x
    G0, b0 = model.basis(q_true)
    if cfg.nuisance == "prior":
        kappa = cfg.gain_prior_rel_std
        def draw(g):
            s = kappa * np.abs(g) * (rng.standard_normal((trials, M)) + 1j * rng.standard_normal((trials, M)))
            return g + noise_scale * s
        alpha, beta = draw(model.alpha0), draw(model.beta0)
    else:
        alpha = np.broadcast_to(model.alpha0, (trials, M))
        beta = np.broadcast_to(model.beta0, (trials, M))
    z_true = alpha * G0[0] + beta * b0[0]
    # EMI at the anchors: e = V n with V rows h2_m * w and n ~ CN(0, R); cov V R V^H
    _, v, _ = emi_quadratic(w, sc.channels, sc.emi)
    C = v @ sc.emi.R @ v.conj().T
    C = 0.5 * (C + C.conj().T)
    evals, evecs = np.linalg.eigh(C)
    root = evecs * np.sqrt(np.clip(evals, 0, None))
    amp = math.sqrt(cfg.pilot_energy_per_sample)
    emi = (root @ (rng.standard_normal((M, trials * T)) + 1j * rng.standard_normal((M, trials * T))) / math.sqrt(2))
    emi = emi.T.reshape(trials, T, M)
    thermal = np.sqrt(sc.sigma2 / 2) * (rng.standard_normal((trials, T, M)) + 1j * rng.standard_normal((trials, T, M)))
    noise = noise_scale * (emi + thermal)
    z_hat = z_true + amp * noise.sum(axis=1) / cfg.pilot_energy

    ticks = np.linspace(-grid_halfwidth, grid_halfwidth, grid_points)
    U = np.stack(np.meshgrid(ticks, ticks, ticks, indexing="ij"), axis=-1).reshape(-1, 3)
    cands = q_true + U @ L.T
    Gg, bg = model.basis(cands)
    costs = model.cost(z_hat, Gg, bg)
    best = np.argmin(costs, axis=1)
    clipped = int(np.sum(np.any(np.abs(U[best]) >= grid_halfwidth - 1e-12, axis=1)))
    if clipped:
        log.warning("%d of %d estimates hit the search-grid boundary", clipped, trials)
    u_hat = U[best].copy()

    spacing = ticks[1] - ticks[0]
    stencil = np.stack(np.meshgrid(*([np.array([-1.0, 0.0, 1.0])] * 3), indexing="ij"), axis=-1).reshape(-1, 3)
    for rnd in range(refine_rounds):
        h = spacing / (4 ** rnd)
        for k in range(trials):
            pts = u_hat[k] + h * stencil
            Gs, bs = model.basis(q_true + pts @ L.T)
            vals = model.cost(z_hat[k:k + 1], Gs, bs)[0]
            step = _quadratic_vertex(h * stencil, vals)
            if step is None or np.max(np.abs(step)) > 2 * h:
                step = h * stencil[np.argmin(vals)]
            u_hat[k] = u_hat[k] + step
    q_hat = q_true + u_hat @ L.T
    sq = np.sum((q_hat - q_true) ** 2, axis=1)
    rmse = float(np.sqrt(sq.mean()))
    ci = float(1.96 * sq.std(ddof=1) / (2 * rmse * math.sqrt(trials))) if trials > 1 and rmse > 0 else math.nan
    return MleReport(
        rmse=rmse,
        rcrb=bundle.rcrb,
        ratio=rmse / bundle.rcrb,
        rmse_ci_halfwidth=ci,
        trials=trials,
        clipped=clipped,
        max_error=float(np.sqrt(sq.max())),
    )


# -- oracle pre-flight ----------------------------------------------------------


VALIDATION_TOLERANCES = {
    "jacobian": 1e-5,
    "fim": 1e-5,
    "gradient": 1e-5,
    "schur": 1e-10,
}


def validate(seed=0, rows=4, cols=4, num_anchors=3):
    """Run the finite-difference and brute-force oracles on a random scene.

    Returns a dict mapping check name to ``(max_error, tolerance, passed)``.
    """
    cfg = oracles.random_config(seed, rows, cols, num_anchors)
    sc = build_scene(cfg)
    rng = np.random.default_rng([seed, 3])
    w = manifold.random_point(sc.num_elements, rng)

    U = fisher.signal_jacobian(w, sc).coefficients(w)
    D = oracles.fd_signal_jacobian(w, sc)
    x = np.full(cfg.pilot_count, math.sqrt(cfg.pilot_energy_per_sample))
    expect = U[:, :, None] * x[None, None, :]
    scale = np.max(np.abs(D), axis=2, keepdims=True)
    scale[scale == 0] = 1.0
    jac_err = float(np.max(np.abs(expect - D) / scale))

    bundle = fisher.fim(w, sc)
    fim_err = oracles.normalized_entry_error(bundle.J_data, oracles.brute_force_fim(w, sc))

    f0, g = fisher.value_and_gradient(w, sc)
    grad_err = float(oracles.directional_gradient_errors(lambda z: fisher.crb(z, sc), g, w, rng).max())

    full_inv = np.linalg.inv(bundle.J)
    schur_err = abs(np.trace(full_inv[:3, :3]) - bundle.crb) / bundle.crb

    found = {"jacobian": jac_err, "fim": fim_err, "gradient": grad_err, "schur": schur_err}
    return {k: (v, VALIDATION_TOLERANCES[k], v < VALIDATION_TOLERANCES[k]) for k, v in found.items()}


# -- CSV output ----------------------------------------------------------------


TRACE_FIELDS = ("iteration", "f", "rcrb", "grad_norm", "step", "accel_flag")


def trace_records(run):
    for r in run.trace.rows:
        yield {
            "iteration": r.iteration,
            "f": r.f,
            "rcrb": math.sqrt(r.f) if r.f >= 0 else math.nan,
            "grad_norm": r.grad_norm,
            "step": r.step,
            "accel_flag": r.accel,
        }


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "" if v is None else str(v)


def render_csv(records, fields, meta):
    buf = io.StringIO()
    for key, value in meta.items():
        buf.write(f"# {key}: {value}\n")
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(fields)
    for rec in records:
        out.writerow([_fmt(rec.get(k)) for k in fields])
    return buf.getvalue()


def emit(records, fields, path, spec=None, extra_meta=None, gnuplot=None):
    """Write a deterministic CSV with a provenance header.

    ``gnuplot`` optionally names ``(x_column, [y_columns])`` for a companion
    ``.gp`` script written next to the CSV.
    """
    meta = {"generator": f"riscrb {__version__}"}
    if spec is not None:
        meta["kind"] = spec.kind
        meta["config_hash"] = spec.config_hash()
        meta["seed"] = spec.seed
    meta.update(extra_meta or {})
    path = Path(path)
    text = render_csv(list(records), fields, meta)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        if gnuplot:
            xcol, ycols = gnuplot
            path.with_suffix(".gp").write_text(_gnuplot_script(path.name, fields, xcol, ycols))
    except OSError as exc:
        raise RiscrbError(f"cannot write {path}: {exc}") from exc
    return path


def _gnuplot_script(name, fields, xcol, ycols):
    idx = {f: i + 1 for i, f in enumerate(fields)}
    plots = ", ".join(
        f"'{name}' using {idx[xcol]}:{idx[y]} with linespoints title '{y}'" for y in ycols
    )
    return (
        "set datafile separator ','\n"
        "set datafile commentschars '#'\n"
        "set key autotitle columnhead\n"
        f"set xlabel '{xcol}'\n"
        "set logscale y\n"
        f"plot {plots}\n"
    )


def _parse(value):
    if value == "":
        return None
    for conv in (int, float):
        try:
            return conv(value)
        except ValueError:
            pass
    return value


def read_csv(path):
    """Inverse of :func:`emit`: returns ``(meta, rows)``."""
    meta, body = {}, []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("# "):
                key, _, value = line[2:].rstrip("\n").partition(": ")
                meta[key] = value
            else:
                body.append(line)
    rows = [{k: _parse(v) for k, v in r.items()} for r in csv.DictReader(body)]
    return meta, rows
