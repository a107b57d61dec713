"""Desk-scale validation suite.

Each criterion is a pure function returning a CriterionResult; the CLI
``validate`` subcommand and the acceptance test module both run these.
Tolerances are fixed here, not configurable.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import meshgen
from .curvature import CurvatureField, curvature_field
from .energy import (
    helfrich_energy,
    lower_bound_certificate,
    lower_bound_value,
    multiplicity_bound,
    optimal_sphere,
    sphere_energy,
    sphere_radius,
    willmore_energy,
)
from .flow import (
    Constraints,
    FlowConfig,
    OptimizerConfig,
    diameter,
    diameter_bounds,
    restore_constraints,
    run_flow,
)
from .transport import TransportConfig, cost_matrix, wasserstein, wasserstein_spatial
from .varifold import (
    HelfrichParams,
    Isometry,
    MeshVarifold,
    ParticleVarifold,
    mass,
)

M0 = 4.0 * math.pi
EXACT2 = TransportConfig(p=2.0, solver="exact")


@dataclass
class CriterionResult:
    name: str
    passed: bool
    seconds: float
    budget: float
    detail: str

    @property
    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name} [{self.seconds:.1f}s / budget {self.budget:.0f}s] {self.detail}"


def _field(mesh: MeshVarifold, corrupt_sign: bool) -> CurvatureField:
    field = curvature_field(mesh)
    if corrupt_sign:
        # test hook: breaks the sign convention that couples H to the
        # spontaneous-curvature term
        field = CurvatureField(
            hbar=field.hbar, h=-field.h, k=field.k, area=field.area, normal=field.normal
        )
    return field


def _corpus() -> list[tuple[str, MeshVarifold]]:
    return [
        ("icosphere2_k1", meshgen.icosphere(2)),
        ("icosphere3_k1", meshgen.icosphere(3)),
        ("icosphere3_k2", meshgen.icosphere(3, theta_plus=2)),
        ("icosphere2_k3", meshgen.icosphere(2, theta_plus=3)),
        ("ellipsoid_112_k1", meshgen.ellipsoid((1.0, 1.0, 2.0), 3)),
        ("ellipsoid_123_k2", meshgen.ellipsoid((1.0, 2.0, 3.0), 3, theta_plus=2)),
        ("torus_k1", meshgen.torus()),
        ("torus_fine_k2", meshgen.torus(segments_major=64, segments_minor=32, theta_plus=2)),
        ("smooth_perturbed_k1", meshgen.smooth_perturbed_sphere(3, amplitude=0.1, seed=0)),
        ("smooth_perturbed_k3", meshgen.smooth_perturbed_sphere(3, amplitude=0.05, seed=1,
                                                                theta_plus=3)),
        ("perturbed_k1", meshgen.perturbed_sphere(3, amplitude=0.1, seed=2)),
        ("bumpy_k1", meshgen.bumpy_sphere(3, amplitude=0.08)),
    ]


def _result(name: str, budget: float, started: float, failures: list[str],
            detail_ok: str) -> CriterionResult:
    elapsed = time.perf_counter() - started
    if elapsed > budget:
        failures.append(f"runtime {elapsed:.1f}s exceeded budget {budget:.0f}s")
    if failures:
        return CriterionResult(name, False, elapsed, budget, "; ".join(failures[:4]))
    return CriterionResult(name, True, elapsed, budget, detail_ok)


# ---------------------------------------------------------------------------


def criterion_1_sphere_energies(corrupt_sign: bool = False) -> CriterionResult:
    """Discrete k-covered sphere energies match the closed form within 2%."""
    started = time.perf_counter()
    failures: list[str] = []
    worst = 0.0
    for k in (1, 2, 3):
        radius = sphere_radius(k, M0)
        mesh = restore_constraints(meshgen.icosphere(4, radius=radius, theta_plus=k), M0)
        field = _field(mesh, corrupt_sign)
        for beta, gamma, h0 in ((1.0, 0.0, 0.0), (1.0, -0.5, -1.0), (0.5, 0.0, 0.0)):
            params = HelfrichParams(beta=beta, gamma=gamma, h0=h0, m0=M0)
            total = helfrich_energy(mesh, field, params).total
            closed = sphere_energy(k, params)
            # (1, -0.5, -1) at k = 1 has exactly zero closed-form energy (the
            # global minimizer); the relative gap is measured against a unit
            # floor there
            rel = abs(total - closed) / max(abs(closed), 1.0)
            worst = max(worst, rel)
            if rel > 0.02:
                failures.append(
                    f"k={k} params=({beta},{gamma},{h0}): discrete {total:.6g} vs "
                    f"closed form {closed:.6g} (rel {rel:.2e})"
                )
            if (beta, gamma, h0) == (0.5, 0.0, 0.0) and k == 1:
                if abs(total - 4.0 * math.pi) > 0.02 * 4.0 * math.pi:
                    failures.append(f"willmore case k=1: {total:.6g} not 4*pi within 2%")
    return _result("criterion 1 (sphere energies vs closed form)", 10.0, started,
                   failures, f"worst relative gap {worst:.2e}")


def criterion_2_gauss_bonnet() -> CriterionResult:
    started = time.perf_counter()
    failures: list[str] = []
    sphere = meshgen.icosphere(3)
    field = curvature_field(sphere)
    total = float((field.k * field.area).sum())
    if abs(total - 4.0 * math.pi) > 1e-9 * 4.0 * math.pi:
        failures.append(f"genus 0: integral {total!r} not 4*pi at 1e-9 relative")
    torus = meshgen.torus()
    field_t = curvature_field(torus)
    total_t = float((field_t.k * field_t.area).sum())
    if abs(total_t) > 1e-9 * 4.0 * math.pi:
        failures.append(f"genus 1: integral {total_t!r} not 0 at 1e-9*4*pi absolute")
    return _result("criterion 2 (Gauss-Bonnet)", 1.0, started, failures,
                   f"sphere gap {total - 4.0 * math.pi:.2e}, torus integral {total_t:.2e}")


def criterion_3_li_yau(corrupt_sign: bool = False) -> CriterionResult:
    started = time.perf_counter()
    failures: list[str] = []
    worst_margin = math.inf
    for name, mesh in _corpus():
        field = _field(mesh, corrupt_sign)
        k_total = mesh.multiplicity
        w = willmore_energy(mesh, field)
        bound = 4.0 * math.pi * k_total
        if w < bound * (1.0 - 0.02):
            failures.append(f"{name}: willmore {w:.6g} below 4*pi*k = {bound:.6g} - 2%")
        worst_margin = min(worst_margin, w / bound)
        for h0 in (0.0, -0.5):
            params = HelfrichParams(beta=1.0, gamma=-0.5, h0=h0, m0=mass(mesh))
            energy = helfrich_energy(mesh, field, params).total
            kbar = multiplicity_bound(energy, params, genus=mesh.genus)
            if k_total > kbar:
                failures.append(f"{name}: k={k_total} exceeds bound {kbar} (h0={h0})")
    return _result("criterion 3 (Li-Yau and multiplicity bound on corpus)", 30.0,
                   started, failures, f"min willmore/(4 pi k) = {worst_margin:.4f}")


def criterion_4_lower_bound(corrupt_sign: bool = False) -> CriterionResult:
    started = time.perf_counter()
    failures: list[str] = []
    rng = np.random.default_rng(20260810)
    grid = []
    for _ in range(20):
        beta = float(rng.uniform(0.3, 2.0))
        gamma = float(rng.uniform(-1.9, 0.0) * beta)
        h0 = float(rng.uniform(-2.0, 2.0))
        grid.append((beta, gamma, h0))
    worst = math.inf
    fields = [(name, mesh, _field(mesh, corrupt_sign)) for name, mesh in _corpus()]
    for name, mesh, field in fields:
        for beta, gamma, h0 in grid:
            params = HelfrichParams(beta=beta, gamma=gamma, h0=h0, m0=mass(mesh))
            total = helfrich_energy(mesh, field, params).total
            bound = lower_bound_certificate(mesh, field, params)
            gap = total - bound
            worst = min(worst, gap)
            if gap < -1e-9 * abs(total):
                failures.append(
                    f"{name} params=({beta:.3g},{gamma:.3g},{h0:.3g}): "
                    f"certificate violated by {gap:.3e}"
                )
    # equality case on analytic round spheres (closed forms on both sides)
    for k in (1, 2, 3):
        r_k = sphere_radius(k, M0)
        for gamma in (0.0, -0.5):
            for h0 in (0.0, -1.0 / r_k, -2.0 / r_k):
                params = HelfrichParams(beta=1.0, gamma=gamma, h0=h0, m0=M0)
                energy = sphere_energy(k, params)
                bound = lower_bound_value(4.0 * math.pi * k, 4.0 * math.pi * k, M0,
                                          1.0, gamma, h0)
                if abs(energy - bound) > 1e-9 * max(1.0, abs(energy)):
                    failures.append(
                        f"analytic equality k={k} gamma={gamma} h0={h0:.3g}: "
                        f"{energy!r} vs {bound!r}"
                    )
    return _result("criterion 4 (lower-bound certificate)", 30.0, started, failures,
                   f"min discrete slack {worst:.3e}")


def criterion_5_optimal_sphere() -> CriterionResult:
    started = time.perf_counter()
    failures: list[str] = []
    rng = np.random.default_rng(5)
    # 200 random admissible tuples against brute force over k = 1..1000
    for trial in range(200):
        beta = float(rng.uniform(0.2, 2.0))
        gamma = float(rng.uniform(-1.9, 0.0) * beta)
        m0 = float(rng.uniform(0.5, 200.0))
        h0 = -float(rng.uniform(0.0, 1.0)) * math.sqrt(16.0 * math.pi / m0)
        params = HelfrichParams(beta=beta, gamma=gamma, h0=h0, m0=m0)
        analytics = optimal_sphere(params)
        energies = np.array([sphere_energy(k, params) for k in range(1, 1001)])
        best = int(energies.argmin()) + 1
        picked = analytics.argmin_k if analytics.is_tie else (analytics.argmin_k,)
        tol = 1e-9 * max(1.0, abs(energies[best - 1]))
        if not any(energies[c - 1] <= energies[best - 1] + tol for c in picked):
            failures.append(f"trial {trial}: selector {analytics.argmin_k} vs brute {best}")
    # constructed tie: energies of S_1 and S_2 coincide
    ratio = 0.75
    tie_params = HelfrichParams(
        beta=1.0, gamma=2.0 * (ratio - 1.0),
        h0=math.sqrt(4.0 * math.pi / M0) * ratio / (1.0 - math.sqrt(2.0)), m0=M0,
    )
    tie = optimal_sphere(tie_params)
    if not (tie.is_tie and tie.argmin_k == (1, 2)):
        failures.append(f"constructed tie not detected: {tie.argmin_k} (y* = {tie.y_star!r})")
    # single-cover region always returns k = 1
    for _ in range(50):
        beta = float(rng.uniform(0.2, 2.0))
        gamma = float(rng.uniform(-1.9, 0.0) * beta)
        m0 = float(rng.uniform(0.5, 100.0))
        ratio = 1.0 + gamma / (2.0 * beta)
        cap = min(
            math.sqrt(4.0 * math.pi / m0) * ratio * (1.0 + math.sqrt(2.0)),
            math.sqrt(16.0 * math.pi / m0),
        )
        h0 = -float(rng.uniform(0.0, 0.999)) * cap
        analytics = optimal_sphere(HelfrichParams(beta=beta, gamma=gamma, h0=h0, m0=m0))
        if analytics.is_tie or analytics.first_argmin != 1:
            failures.append(
                f"single-cover region returned {analytics.argmin_k} "
                f"(beta={beta:.3g}, gamma={gamma:.3g}, h0={h0:.3g}, m0={m0:.3g})"
            )
    return _result("criterion 5 (optimal-sphere selector vs brute force)", 5.0,
                   started, failures, "200 tuples, tie, and single-cover region agree")


def criterion_6_transport() -> CriterionResult:
    from . import _oracle_transport

    started = time.perf_counter()
    failures: list[str] = []
    rng = np.random.default_rng(6)

    def random_pv(count, mass_total=None):
        pos = rng.normal(size=(count, 3))
        nrm = rng.normal(size=(count, 3))
        nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
        w = rng.uniform(0.5, 2.0, size=count)
        if mass_total is not None:
            w *= mass_total / w.sum()
        return ParticleVarifold(pos, nrm, w)

    # exact solver vs basic-solution enumeration, <= 4 atoms per side
    for trial in range(50):
        n, m = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        v = random_pv(n)
        w = random_pv(m, mass_total=float(v.weights.sum()))
        p = float(rng.choice([1.0, 2.0]))
        _, plan = wasserstein(v, w, TransportConfig(p=p, solver="exact"))
        reference = _oracle_transport.brute_force_transport(
            v.weights, w.weights, cost_matrix(v, w, p)
        )
        if abs(plan.cost - reference) > 1e-12:
            failures.append(f"enumeration mismatch on trial {trial}: "
                            f"{plan.cost!r} vs {reference!r}")
    # entropic epsilon schedule on a fixed 10x10 instance
    v10 = random_pv(10, 3.0)
    w10 = random_pv(10, 3.0)
    _, exact_plan = wasserstein(v10, w10, EXACT2)
    errors = []
    for eps in (1.0, 0.1, 0.01, 0.001):
        cfg = TransportConfig(p=2.0, solver="entropic", epsilon=eps, tol=1e-10,
                              max_iter=200_000)
        _, plan = wasserstein(v10, w10, cfg)
        errors.append(abs(plan.cost - exact_plan.cost))
    if not all(a >= b - 1e-15 for a, b in zip(errors, errors[1:])):
        failures.append(f"entropic error not non-increasing: {errors}")
    if errors[-1] > 1e-3 * exact_plan.cost:
        failures.append(f"entropic error at eps=0.001 is {errors[-1]:.3e} "
                        f"> 1e-3 * exact {exact_plan.cost:.3e}")
    # spatial marginal metric never exceeds the full metric
    for _ in range(50):
        v = random_pv(7, 2.0)
        w = random_pv(9, 2.0)
        full, _ = wasserstein(v, w, EXACT2)
        spatial = wasserstein_spatial(v, w, EXACT2)
        if spatial > full + 1e-9 * max(1.0, full):
            failures.append(f"spatial {spatial!r} exceeds full {full!r}")
    # triangle inequality on random triples
    for _ in range(50):
        u, v, w = (random_pv(5, 3.0) for _ in range(3))
        duv, _ = wasserstein(u, v, EXACT2)
        dvw, _ = wasserstein(v, w, EXACT2)
        duw, _ = wasserstein(u, w, EXACT2)
        if duw > duv + dvw + 1e-9 * max(1.0, duw):
            failures.append(f"triangle inequality violated: {duw} > {duv} + {dvw}")
    return _result("criterion 6 (transport correctness)", 60.0, started, failures,
                   f"entropic errors along schedule: {['%.1e' % e for e in errors]}")


def _dissipation_flow(corrupt_sign: bool = False):
    mesh = restore_constraints(
        meshgen.smooth_perturbed_sphere(3, amplitude=0.10, seed=11), M0
    )
    params = HelfrichParams(beta=1.0, gamma=-0.5, h0=0.0, m0=M0)
    cfg = FlowConfig(
        tau=1e-3,
        steps=50,
        snapshot_stride=5,
        optimizer=OptimizerConfig(max_inner_iter=12),
    )
    trace = run_flow(mesh, cfg, params)
    return trace, params, cfg


def criterion_7_flow_dissipation(cache: dict | None = None) -> CriterionResult:
    started = time.perf_counter()
    failures: list[str] = []
    trace, params, cfg = _dissipation_flow()
    if cache is not None:
        cache["dissipation"] = (trace, params, cfg)
    energies = trace.energies
    increments = trace.increments
    tol = 1e-10 * (1.0 + abs(energies[0]))
    for n in range(1, len(energies)):
        if energies[n] + increments[n] ** 2 / (2.0 * cfg.tau) > energies[n - 1] + tol:
            failures.append(f"step {n}: acceptance inequality violated")
    if not np.all(np.diff(energies) <= tol):
        failures.append("energy column is not non-increasing within tol_accept")
    final_mesh = trace.snapshots[-1][1]
    field = curvature_field(final_mesh)
    certificate = lower_bound_certificate(final_mesh, field, params)
    if energies[-1] < certificate - 1e-9 * abs(energies[-1]):
        failures.append(
            f"final energy {energies[-1]:.6g} below certificate {certificate:.6g}"
        )
    moved = energies[0] - energies[-1]
    return _result("criterion 7 (flow dissipation, 50 steps)", 600.0, started, failures,
                   f"energy {energies[0]:.4f} -> {energies[-1]:.4f} "
                   f"(drop {moved:.3g}), certificate {certificate:.4f}")


def criterion_8_stationarity() -> CriterionResult:
    started = time.perf_counter()
    failures: list[str] = []
    params = HelfrichParams(beta=1.0, gamma=-0.5, h0=0.0, m0=M0)
    analytics = optimal_sphere(params)
    k = analytics.first_argmin
    mesh = restore_constraints(
        meshgen.icosphere(3, radius=analytics.r_k, theta_plus=k), M0
    )
    cfg = FlowConfig(tau=1e-4, steps=10, snapshot_stride=10,
                     optimizer=OptimizerConfig(max_inner_iter=12))
    trace = run_flow(mesh, cfg, params)
    energies = trace.energies
    drift = np.abs(energies - energies[0]).max()
    if drift > 1e-6 * abs(energies[0]):
        failures.append(f"energy drift {drift:.3e} exceeds 1e-6 relative")
    bound = 1e-6 * math.sqrt(M0) * trace.column("diameter")
    if not np.all(trace.increments <= bound):
        failures.append("some step increment exceeds 1e-6 * sqrt(m0) * diam")
    return _result("criterion 8 (stationarity at the optimal sphere)", 120.0, started,
                   failures,
                   f"k*={k}, drift {drift:.2e}, max increment {trace.increments.max():.2e}")


def criterion_9_diameter_sandwich(cache: dict | None = None) -> CriterionResult:
    started = time.perf_counter()
    failures: list[str] = []
    if cache is not None and "dissipation" in cache:
        trace, params, cfg = cache["dissipation"]
    else:
        trace, params, cfg = _dissipation_flow()
        started = time.perf_counter()  # the flow itself belongs to criterion 7
    slack = 0.03
    worst_low, worst_high = math.inf, math.inf
    for step, mesh in trace.snapshots:
        field = curvature_field(mesh)
        lower, upper = diameter_bounds(mesh, field)
        diam = diameter(mesh)
        worst_low = min(worst_low, diam - lower * (1.0 - slack))
        worst_high = min(worst_high, upper * (1.0 + slack) - diam)
        if diam < lower * (1.0 - slack) or diam > upper * (1.0 + slack):
            failures.append(
                f"snapshot {step}: diameter {diam:.4f} outside "
                f"[{lower:.4f}, {upper:.4f}] with 3% slack"
            )
    return _result("criterion 9 (diameter sandwich along the trajectory)", 5.0, started,
                   failures, f"min margins: lower {worst_low:.3g}, upper {worst_high:.3g}")


def criterion_10_constraints() -> CriterionResult:
    started = time.perf_counter()
    failures: list[str] = []
    # volume-constrained run
    base = restore_constraints(meshgen.smooth_perturbed_sphere(2, amplitude=0.06, seed=3), M0)
    from .varifold import enclosed_volume

    v_target = 0.9 * enclosed_volume(base)
    params = HelfrichParams(beta=1.0, gamma=-0.5, h0=0.0, m0=M0, v0=v_target)
    cfg = FlowConfig(tau=1e-3, steps=20, constraints=Constraints(volume=v_target),
                     optimizer=OptimizerConfig(max_inner_iter=10), snapshot_stride=20)
    trace = run_flow(base, cfg, params)
    residuals = trace.column("volume_residual")
    if not np.all(residuals <= 1e-4 * abs(v_target)):
        failures.append(f"volume residual max {residuals.max():.3e} exceeds 1e-4*v0")
    energies_v = trace.energies
    tol = 1e-10 * (1.0 + abs(energies_v[0]))
    if not np.all(np.diff(energies_v) <= tol):
        failures.append("volume-constrained energy column not non-increasing")
    # reflection-symmetric run
    sphere = restore_constraints(meshgen.icosphere(2), M0)
    params_s = HelfrichParams(beta=1.0, gamma=-0.5, h0=0.0, m0=M0)
    cfg_s = FlowConfig(
        tau=1e-3, steps=20,
        constraints=Constraints(symmetry=(Isometry.reflection([0.0, 0.0, 1.0]),)),
        optimizer=OptimizerConfig(max_inner_iter=10), snapshot_stride=20,
    )
    trace_s = run_flow(sphere, cfg_s, params_s)
    defect = trace_s.column("symmetry_defect")
    bound = 1e-6 * math.sqrt(M0) * trace_s.column("diameter")
    if not np.all(defect <= bound):
        failures.append(f"symmetry defect max {defect.max():.3e} exceeds 1e-6*sqrt(m0)*diam")
    return _result("criterion 10 (constraint residuals)", 600.0, started, failures,
                   f"max volume residual {residuals.max():.2e}, "
                   f"max symmetry defect {defect.max():.2e}")


def criterion_11_multiplicity() -> CriterionResult:
    started = time.perf_counter()
    failures: list[str] = []
    params = HelfrichParams(beta=1.0, gamma=-0.5, h0=0.0, m0=M0)
    if not sphere_energy(1, params) < sphere_energy(2, params):
        failures.append("test parameters do not favour the single cover")
    base = restore_constraints(
        meshgen.icosphere(2, radius=sphere_radius(2, M0), theta_plus=2), M0
    )
    tau_small = 1e-5
    cfg_small = FlowConfig(tau=tau_small, steps=20, multiplicity_search=(1, 2, 3),
                           optimizer=OptimizerConfig(max_inner_iter=8),
                           candidate_inner_iter=3, snapshot_stride=20)
    trace = run_flow(base, cfg_small, params)
    ks = trace.column("multiplicity")
    if not np.all(ks == 2):
        failures.append(f"multiplicity not conserved at tau={tau_small}: {ks}")
    thresholds = trace.column("tau_threshold")[1:]
    finite = thresholds[np.isfinite(thresholds)]
    if len(finite) and finite.min() <= tau_small:
        failures.append(
            f"recorded tau threshold {finite.min():.3e} not above tau={tau_small}"
        )
    # inflate tau by 1e6: the energy-favourable jump to k = 1 must happen
    cfg_big = FlowConfig(tau=tau_small * 1e6, steps=3, multiplicity_search=(1, 2, 3),
                         optimizer=OptimizerConfig(max_inner_iter=8),
                         candidate_inner_iter=3, snapshot_stride=3)
    trace_big = run_flow(base, cfg_big, params)
    ks_big = trace_big.column("multiplicity")
    if not np.any(ks_big[1:] == 1):
        failures.append(f"no jump to k=1 within 3 steps at tau={tau_small * 1e6}: {ks_big}")
    detail = (
        f"k constant at 2 for 20 steps (thresholds > {tau_small:g}); "
        f"jump path {[int(k) for k in ks_big]}"
    )
    return _result("criterion 11 (multiplicity conservation and jump)", 600.0, started,
                   failures, detail)


CRITERIA = {
    1: criterion_1_sphere_energies,
    2: criterion_2_gauss_bonnet,
    3: criterion_3_li_yau,
    4: criterion_4_lower_bound,
    5: criterion_5_optimal_sphere,
    6: criterion_6_transport,
    7: criterion_7_flow_dissipation,
    8: criterion_8_stationarity,
    9: criterion_9_diameter_sandwich,
    10: criterion_10_constraints,
    11: criterion_11_multiplicity,
}

QUICK_SUBSET = (1, 2, 4, 5)


def run_criteria(numbers=None, quick: bool = False,
                 corrupt_sign: bool = False) -> list[CriterionResult]:
    selected = list(numbers) if numbers else (list(QUICK_SUBSET) if quick
                                              else sorted(CRITERIA))
    cache: dict = {}
    results = []
    for number in selected:
        fn = CRITERIA[number]
        kwargs = {}
        if number in (1, 3, 4) and corrupt_sign:
            kwargs["corrupt_sign"] = True
        if number in (7, 9):
            kwargs["cache"] = cache
        results.append(fn(**kwargs))
    return results
