"""Minimizing-movements driver for the bending-energy flow.

Each step minimizes the incremental objective

    J(V) = energy(V) + penalties(V) + (1 / 2 tau) * W_p(V, V_prev)^2

over vertex positions at fixed connectivity (optionally also over the
covering multiplicity), then applies exact constraint restoration and an
acceptance check

    energy(V_new) + (1 / 2 tau) * W^2 <= energy(V_prev) + tol_accept

computed with one exact transport solve.  The previous state is always an
admissible candidate, so an accepted trajectory never increases the
incremental objective and the energy column is non-increasing up to
tol_accept.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from ._objective import PlanTerm, StepObjective
from .curvature import CurvatureField, curvature_field, vertex_normals
from .energy import helfrich_energy, multiplicity_bound, willmore_energy
from .errors import DomainError, FlowStepError
from .transport import TransportConfig, wasserstein
from .varifold import (
    HelfrichParams,
    Isometry,
    MeshVarifold,
    ParticleVarifold,
    enclosed_volume,
    mass,
    pushforward,
    sample_particles,
    with_multiplicity,
    with_vertices,
)

logger = logging.getLogger("helfrichflow")

MASS_RESIDUAL_TOL = 1e-6
VOLUME_RESIDUAL_TOL = 1e-4
SYMMETRY_DEFECT_FACTOR = 1e-6


@dataclass(frozen=True)
class OptimizerConfig:
    max_inner_iter: int = 25
    grad_tol: float = 1e-8
    step_rule: str = "backtracking"
    initial_step: float | None = None
    max_backtracks: int = 40
    gradient: str = "auto"  # auto | autodiff | fd

    def __post_init__(self):
        if self.step_rule != "backtracking":
            raise DomainError(f"unknown step rule {self.step_rule!r}")
        if self.gradient not in ("auto", "autodiff", "fd"):
            raise DomainError(f"gradient mode must be auto/autodiff/fd, got {self.gradient!r}")


@dataclass(frozen=True)
class PenaltyWeights:
    """Quadratic penalty weights; None selects an energy-scaled default."""

    mass: float | None = None
    volume: float | None = None
    symmetry: float | None = None

    def __post_init__(self):
        for name in ("mass", "volume", "symmetry"):
            v = getattr(self, name)
            if v is not None and not v > 0.0:
                raise DomainError(f"penalty weight {name} must be > 0 when set, got {v}")


@dataclass(frozen=True)
class Constraints:
    volume: float | None = None
    symmetry: tuple[Isometry, ...] = ()


@dataclass(frozen=True)
class FlowConfig:
    tau: float
    steps: int
    transport: TransportConfig = TransportConfig(p=2.0, solver="exact")
    constraints: Constraints = Constraints()
    multiplicity_search: tuple[int, ...] = ()
    optimizer: OptimizerConfig = OptimizerConfig()
    penalty_weights: PenaltyWeights = PenaltyWeights()
    quadrature: str = "centroid"
    increment_power: str = "squared"  # squared -> W_p^2, p -> W_p^p (doubly nonlinear)
    snapshot_stride: int = 10
    candidate_inner_iter: int | None = None
    curvature_bound: float | None = None  # uniform C^{1,1} bound L; warn-only check

    def __post_init__(self):
        if not self.tau > 0.0:
            raise DomainError(f"tau must be > 0, got {self.tau}")
        if self.curvature_bound is not None and not self.curvature_bound > 0.0:
            raise DomainError(
                f"curvature_bound must be > 0 when set, got {self.curvature_bound}"
            )
        if self.steps < 0:
            raise DomainError(f"steps must be >= 0, got {self.steps}")
        if self.increment_power not in ("squared", "p"):
            raise DomainError(
                f"increment_power must be 'squared' or 'p', got {self.increment_power!r}"
            )
        if any(int(k) != k or k < 1 for k in self.multiplicity_search):
            raise DomainError("multiplicity_search entries must be positive integers")


@dataclass
class StepRecord:
    step: int
    energy: float
    increment: float
    metric_derivative: float
    diameter: float
    multiplicity: int
    mass_residual: float
    volume_residual: float
    symmetry_defect: float
    inner_iterations: int
    stalled: bool
    tau_threshold: float = math.nan
    candidate_gap: float = math.nan
    wall_time: float = 0.0

    # wall_time stays out of the CSV so reruns are bit-for-bit reproducible
    COLUMNS = (
        "step", "energy", "increment", "metric_derivative", "diameter",
        "multiplicity", "mass_residual", "volume_residual", "symmetry_defect",
        "inner_iterations", "stalled", "tau_threshold", "candidate_gap",
    )

    def row(self):
        return [
            self.step, repr(self.energy), repr(self.increment),
            repr(self.metric_derivative), repr(self.diameter), self.multiplicity,
            repr(self.mass_residual), repr(self.volume_residual),
            repr(self.symmetry_defect), self.inner_iterations, int(self.stalled),
            repr(self.tau_threshold), repr(self.candidate_gap),
        ]


@dataclass
class FlowTrace:
    """Per-step diagnostics of a trajectory plus mesh snapshots."""

    tau: float
    records: list[StepRecord] = field(default_factory=list)
    snapshots: list[tuple[int, MeshVarifold]] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    @property
    def energies(self) -> np.ndarray:
        return self.column("energy")

    @property
    def increments(self) -> np.ndarray:
        return self.column("increment")

    def to_csv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(StepRecord.COLUMNS)
            for record in self.records:
                writer.writerow(record.row())


def estimate_metric_derivative(trace: FlowTrace) -> tuple[np.ndarray, np.ndarray]:
    """Per-step speed W_p / tau and the running dissipation sum
    sum_{m <= n} W_p^2 / (2 tau), the discrete counterpart of the
    energy-dissipation inequality."""
    if len(trace.records) < 1:
        raise DomainError("trace has no records")
    increments = trace.increments
    speeds = increments / trace.tau
    cumulative = np.cumsum(increments**2) / (2.0 * trace.tau)
    return speeds, cumulative


# ---------------------------------------------------------------------------
# diameter


def diameter(v) -> float:
    """Exact max pairwise distance over mesh vertices or atoms."""
    if isinstance(v, MeshVarifold):
        pts = v.vertices
    elif isinstance(v, ParticleVarifold):
        pts = v.positions
    else:
        pts = np.asarray(v, dtype=float)
    n = len(pts)
    if n <= 1:
        return 0.0
    best = 0.0
    step = 1024
    for start in range(0, n, step):
        block = pts[start : start + step]
        best = max(best, float(cdist(block, pts).max()))
    return best


def diameter_bounds(mesh: MeshVarifold, curv: CurvatureField) -> tuple[float, float]:
    """Willmore-based diameter sandwich sqrt(mass/W) <= diam <= (2/pi) sqrt(mass W),
    valid for closed (boundary-free) varifolds."""
    w = willmore_energy(mesh, curv)
    if w <= 0.0:
        raise DomainError(f"diameter bounds need positive Willmore energy, got {w}")
    m = mass(mesh)
    return math.sqrt(m / w), (2.0 / math.pi) * math.sqrt(m * w)


# ---------------------------------------------------------------------------
# symmetry handling


class SymmetryProjector:
    """Group-orbit averaging onto the symmetric configuration space.

    Generators must generate a finite group (closure capped at 64 elements)
    mapping the mesh onto itself up to vertex permutation.
    """

    MAX_GROUP = 64

    def __init__(self, mesh: MeshVarifold, generators):
        if not generators:
            raise DomainError("symmetry projector needs at least one generator")
        self.generators = tuple(generators)
        elements = self._closure([(g.linear, g.translation) for g in generators])
        verts = mesh.vertices
        scale = max(1.0, diameter(mesh))
        tree = cKDTree(verts)
        self._perms = []
        self._linears = []
        self._translations = []
        face_key = {tuple(sorted(f)) for f in mesh.faces.tolist()}
        for lin, tr in elements:
            mapped = verts @ lin.T + tr
            dist, idx = tree.query(mapped)
            if dist.max() > 1e-6 * scale:
                raise DomainError(
                    "mesh is not symmetric under the requested group: vertex "
                    f"{int(dist.argmax())} maps {dist.max():.3e} away from the mesh"
                )
            if len(set(idx.tolist())) != len(verts):
                raise DomainError("symmetry map is not a vertex bijection")
            permuted_faces = {tuple(sorted(idx[f].tolist())) for f in mesh.faces}
            if permuted_faces != face_key:
                raise DomainError("symmetry map does not preserve the face complex")
            self._perms.append(idx)
            self._linears.append(lin)
            self._translations.append(tr)
        self._torch_cache = None

    @classmethod
    def _closure(cls, generators):
        def key(lin, tr):
            return tuple(np.round(np.concatenate([lin.ravel(), tr]), 9))

        elements = {key(np.eye(3), np.zeros(3)): (np.eye(3), np.zeros(3))}
        frontier = list(elements.values())
        while frontier:
            new_frontier = []
            for lin_a, tr_a in frontier:
                for lin_g, tr_g in generators:
                    lin = lin_g @ lin_a
                    tr = lin_g @ tr_a + tr_g
                    k = key(lin, tr)
                    if k not in elements:
                        if len(elements) >= cls.MAX_GROUP:
                            raise DomainError(
                                f"symmetry generators exceed {cls.MAX_GROUP} group elements"
                            )
                        elements[k] = (lin, tr)
                        new_frontier.append((lin, tr))
            frontier = new_frontier
        return list(elements.values())

    @property
    def group_order(self) -> int:
        return len(self._perms)

    def project(self, verts: np.ndarray) -> np.ndarray:
        """Average over the group orbit; a fixed point of every group map."""
        acc = np.zeros_like(verts)
        for lin, tr, perm in zip(self._linears, self._translations, self._perms):
            acc += (verts[perm] - tr) @ lin  # (lin^T applied from the right)
        return acc / len(self._perms)

    def misfit(self, verts: np.ndarray) -> float:
        """Sum of squared vertex-matching errors over the whole group."""
        total = 0.0
        for lin, tr, perm in zip(self._linears, self._translations, self._perms):
            mapped = verts @ lin.T + tr
            total += float(np.sum((mapped - verts[perm]) ** 2))
        return total

    def misfit_torch(self, x):
        import torch

        if self._torch_cache is None:
            self._torch_cache = [
                (
                    torch.from_numpy(np.ascontiguousarray(lin)),
                    torch.from_numpy(np.ascontiguousarray(tr)),
                    torch.from_numpy(np.ascontiguousarray(perm)),
                )
                for lin, tr, perm in zip(self._linears, self._translations, self._perms)
            ]
        total = x.new_zeros(())
        for lin, tr, perm in self._torch_cache:
            mapped = x @ lin.T + tr
            total = total + ((mapped - x[perm]) ** 2).sum()
        return total

    def defect(self, mesh: MeshVarifold, quadrature: str, p: float) -> float:
        """Transport distance between the sampled varifold and its worst
        generator pushforward."""
        atoms = sample_particles(mesh, quadrature)
        cfg = TransportConfig(p=p, solver="exact")
        worst = 0.0
        for g in self.generators:
            d, _ = wasserstein(pushforward(atoms, g), atoms, cfg)
            worst = max(worst, d)
        return worst


# ---------------------------------------------------------------------------
# constraint restoration


def _area_centroid(verts: np.ndarray, faces: np.ndarray) -> np.ndarray:
    p0, p1, p2 = verts[faces[:, 0]], verts[faces[:, 1]], verts[faces[:, 2]]
    areas = 0.5 * np.linalg.norm(np.cross(p1 - p0, p2 - p0), axis=1)
    centroids = (p0 + p1 + p2) / 3.0
    return (areas[:, None] * centroids).sum(axis=0) / areas.sum()


def _mass_volume_of(verts, mesh: MeshVarifold):
    shaped = with_vertices(mesh, verts)
    return mass(shaped), enclosed_volume(shaped)


def restore_constraints(mesh: MeshVarifold, m0: float,
                        v0: float | None = None) -> MeshVarifold:
    """Exact constraint restoration.

    Mass alone: uniform rescale about the area centroid (exact).  With a
    volume target: two-parameter Newton on (scale, normal offset); when that
    family is degenerate (exact spheres: both directions are radial) an
    axis-anisotropic scaling family is used instead.
    """
    verts = mesh.vertices
    faces = mesh.faces
    c = _area_centroid(verts, faces)
    if v0 is None:
        s = math.sqrt(m0 / mass(mesh))
        return with_vertices(mesh, c + s * (verts - c))

    normals = vertex_normals(mesh)

    def family_sh(params_vec):
        s, h = params_vec
        return c + s * (verts - c) + h * normals

    def family_aniso(params_vec):
        mu, lam = params_vec
        centered = verts - c
        return c + np.column_stack([mu * centered[:, 0], mu * centered[:, 1],
                                    lam * centered[:, 2]])

    target = np.array([m0, v0])
    scale = np.array([m0, max(abs(v0), m0**1.5)])

    def newton(apply_map, start):
        x = np.array(start, dtype=float)
        for _ in range(40):
            m_cur, v_cur = _mass_volume_of(apply_map(x), mesh)
            residual = np.array([m_cur - m0, v_cur - v0])
            if np.all(np.abs(residual) <= 1e-12 * scale):
                return apply_map(x)
            jac = np.empty((2, 2))
            for k in range(2):
                dx = np.zeros(2)
                dx[k] = 1e-7 * max(abs(x[k]), 1.0)
                mp, vp = _mass_volume_of(apply_map(x + dx), mesh)
                jac[:, k] = (np.array([mp, vp]) - np.array([m_cur, v_cur])) / dx[k]
            if abs(np.linalg.det(jac)) < 1e-14 * np.abs(jac).max() ** 2:
                return None
            x = x - np.linalg.solve(jac, residual)
            if not np.isfinite(x).all():
                return None
        return None

    restored = newton(family_sh, [1.0, 0.0])
    if restored is None:
        restored = newton(family_aniso, [1.0, 1.0])
    if restored is None:
        raise FlowStepError(
            "volume restoration failed: Newton did not converge in either family",
            {"m0": m0, "v0": v0},
        )
    # final exact mass polish; perturbs volume at the 1e-12 level only
    shaped = with_vertices(mesh, restored)
    s = math.sqrt(m0 / mass(shaped))
    c2 = _area_centroid(restored, faces)
    return with_vertices(mesh, c2 + s * (restored - c2))


# ---------------------------------------------------------------------------
# the incremental step


@dataclass
class _FlowContext:
    tol_accept: float
    kappa_mass: float
    kappa_volume: float
    kappa_symmetry: float
    projector: SymmetryProjector | None
    exact_cfg: TransportConfig
    multiplicity_cap: int | None


def _increment_term(w: float, tau: float, p: float, power: str) -> float:
    return (w**2 if power == "squared" else w**p) / (2.0 * tau)


def _make_context(v0: MeshVarifold, cfg: FlowConfig, params: HelfrichParams) -> _FlowContext:
    g0 = helfrich_energy(v0, curvature_field(v0), params).total
    tol_accept = 1e-10 * (1.0 + abs(g0))
    energy_scale = 1.0 + abs(g0)
    pw = cfg.penalty_weights
    kappa_mass = pw.mass if pw.mass is not None else 100.0 * energy_scale / params.m0**2
    kappa_volume = 0.0
    if cfg.constraints.volume is not None:
        v_ref = max(abs(cfg.constraints.volume), params.m0**1.5 / 100.0)
        kappa_volume = pw.volume if pw.volume is not None else 100.0 * energy_scale / v_ref**2
    kappa_symmetry = 0.0
    projector = None
    if cfg.constraints.symmetry:
        projector = SymmetryProjector(v0, cfg.constraints.symmetry)
        d = max(diameter(v0), 1e-12)
        kappa_symmetry = (
            pw.symmetry if pw.symmetry is not None else energy_scale / d**2
        )
    cap = None
    if cfg.multiplicity_search:
        try:
            cap = multiplicity_bound(g0, params, genus=v0.genus)
        except DomainError:
            cap = None  # bound hypotheses not met; honor the configured range
    exact_cfg = TransportConfig(p=cfg.transport.p, solver="exact")
    if not params.convexity_flag:
        logger.warning(
            "parameters outside the convexity range -(6/5) beta < gamma < 0 "
            "(beta=%g, gamma=%g): existence theory does not cover this flow",
            params.beta, params.gamma,
        )
    return _FlowContext(tol_accept, kappa_mass, kappa_volume, kappa_symmetry,
                        projector, exact_cfg, cap)


def _build_objective(template: MeshVarifold, cfg: FlowConfig, params: HelfrichParams,
                     ctx: _FlowContext) -> StepObjective:
    return StepObjective(
        template,
        params,
        quadrature=cfg.quadrature,
        kappa_mass=ctx.kappa_mass,
        volume_target=cfg.constraints.volume,
        kappa_volume=ctx.kappa_volume,
        symmetry=ctx.projector,
        kappa_symmetry=ctx.kappa_symmetry,
        gradient=cfg.optimizer.gradient,
    )


def _solve_plan(current: MeshVarifold, prev_atoms: ParticleVarifold, cfg: FlowConfig,
                warm: dict):
    """One transport solve for the inner loop; entropic keeps warm potentials.

    Mid-iteration the iterate's mass drifts from m0 (the penalty, not a hard
    projection, holds it); transport is only defined between equal masses, so
    the iterate's weights are renormalized to the previous mass for the solve.
    """
    atoms = sample_particles(current, cfg.quadrature)
    m_prev = float(prev_atoms.weights.sum())
    m_cur = float(atoms.weights.sum())
    if abs(m_cur - m_prev) > 1e-15 * m_prev:
        atoms = ParticleVarifold(
            atoms.positions, atoms.normals, atoms.weights * (m_prev / m_cur)
        )
    if cfg.transport.solver == "entropic":
        from .transport import entropic_plan

        plan, value, f, g, _ = entropic_plan(
            atoms, prev_atoms, cfg.transport,
            f_init=warm.get("f"), g_init=warm.get("g"),
        )
        warm["f"], warm["g"] = f, g
        entries, potentials = plan, f
    else:
        _, tplan = wasserstein(atoms, prev_atoms, cfg.transport)
        entries, potentials = tplan.entries, tplan.row_potentials
    return PlanTerm.from_plan(entries, prev_atoms, cfg.transport.p, cfg.tau,
                              cfg.increment_power,
                              src_potentials=potentials, ref_weights=atoms.weights)


def _inner_optimize(template: MeshVarifold, start_verts: np.ndarray,
                    prev_atoms: ParticleVarifold, objective: StepObjective,
                    cfg: FlowConfig, ctx: _FlowContext, budget: int):
    """Projected gradient descent with backtracking on the fixed-plan
    surrogate; re-solves transport every inner iteration."""
    opt = cfg.optimizer
    verts = start_verts.copy()
    if ctx.projector is not None:
        verts = ctx.projector.project(verts)
    scale = max(diameter(template), 1e-12)
    edge = _mean_edge_length(template)
    warm: dict = {}
    radius = opt.initial_step if opt.initial_step is not None else 0.1 * edge
    radius_min = 1e-10 * scale

    def measure(x):
        plan = _solve_plan(with_vertices(template, x), prev_atoms, cfg, warm)
        # at the iterate itself the fixed-plan model (plan + potentials both
        # optimal there) coincides with the true incremental objective
        return plan, *objective.value_and_grad(x, plan)

    plan, value, grad = measure(verts)
    if not math.isfinite(value):
        raise FlowStepError("objective is non-finite at the start of a step",
                            {"value": value})
    area_proj = _AreaProjection(template.faces, template.vertex_count)
    use_projected = True
    iterations = 0
    for _ in range(budget):
        gnorm = float(np.linalg.norm(grad))
        if gnorm * scale <= opt.grad_tol * (1.0 + abs(value)):
            break
        # area-preserving directions dodge the first-order weight-shuffle
        # cost of the discrete metric; the raw gradient is kept in rotation
        # for motions that need area redistribution
        direction = area_proj.project(verts, grad) if use_projected else grad
        dnorm = float(np.linalg.norm(direction))
        if dnorm <= 1e-12 * gnorm:
            direction, dnorm = grad, gnorm
        slope = float(np.sum(direction * grad))
        # model line search: largest backtracked step within the trust radius
        # that decreases the fixed-plan model
        row_max = float(np.max(np.linalg.norm(direction, axis=1)))
        trial = radius / max(row_max, 1e-300)
        candidate = None
        for _ in range(opt.max_backtracks):
            attempt = verts - trial * direction
            if ctx.projector is not None:
                attempt = ctx.projector.project(attempt)
            model_value = objective.value(attempt, plan)
            if model_value <= value - 1e-4 * trial * slope:
                candidate = attempt
                break
            trial *= 0.5
        iterations += 1
        if candidate is None:
            use_projected = not use_projected
            radius *= 0.5
            if radius < radius_min:
                break
            continue
        # true acceptance: one fresh transport solve at the candidate
        plan_new, value_new, grad_new = measure(candidate)
        if math.isfinite(value_new) and value_new < value:
            verts, plan, value, grad = candidate, plan_new, value_new, grad_new
            radius = min(radius * 2.0, 10.0 * edge)
        else:
            use_projected = not use_projected
            radius *= 0.5
            if radius < radius_min:
                break
    return verts, iterations


class _AreaProjection:
    """Projects descent directions onto the first-order area-preserving
    subspace (d area_f = 0 for every face).

    Atom weights are face areas, and the discrete transport cost of weight
    redistribution between neighbouring atoms is first order in the vertex
    displacement; directions in this null space pay only the quadratic
    (position and normal motion) part of the metric, which is what makes
    small-time-step descent possible on coarse meshes.
    """

    def __init__(self, faces: np.ndarray, n_vertices: int):
        self.faces = faces
        self.n = n_vertices
        m = len(faces)
        self._rows = np.concatenate([np.arange(m)] * 9)
        cols = []
        for k in range(3):
            for c in range(3):
                cols.append(faces[:, k] * 3 + c)
        self._cols = np.concatenate(cols)

    def project(self, verts: np.ndarray, grad: np.ndarray) -> np.ndarray:
        from scipy import sparse
        from scipy.sparse.linalg import lsmr

        f = self.faces
        p0, p1, p2 = verts[f[:, 0]], verts[f[:, 1]], verts[f[:, 2]]
        cross = np.cross(p1 - p0, p2 - p0)
        nf = cross / np.linalg.norm(cross, axis=1, keepdims=True)
        grads = (
            0.5 * np.cross(nf, p2 - p1),
            0.5 * np.cross(nf, p0 - p2),
            0.5 * np.cross(nf, p1 - p0),
        )
        vals = np.concatenate([grads[k][:, c] for k in range(3) for c in range(3)])
        jac = sparse.coo_matrix(
            (vals, (self._rows, self._cols)), shape=(len(f), 3 * self.n)
        ).tocsr()
        g = grad.ravel()
        lam = lsmr(jac.T, g, damp=1e-10, atol=1e-10, btol=1e-10)[0]
        return (g - jac.T @ lam).reshape(-1, 3)


def _mean_edge_length(mesh: MeshVarifold) -> float:
    v, f = mesh.vertices, mesh.faces
    total = 0.0
    for k in range(3):
        i, j = k, (k + 1) % 3
        total += float(np.linalg.norm(v[f[:, j]] - v[f[:, i]], axis=1).sum())
    return total / (3 * len(f))


def _residuals(mesh: MeshVarifold, cfg: FlowConfig, params: HelfrichParams,
               ctx: _FlowContext) -> tuple[float, float, float]:
    mass_res = abs(mass(mesh) - params.m0)
    vol_res = (
        abs(enclosed_volume(mesh) - cfg.constraints.volume)
        if cfg.constraints.volume is not None
        else 0.0
    )
    sym = (
        ctx.projector.defect(mesh, cfg.quadrature, cfg.transport.p)
        if ctx.projector is not None
        else 0.0
    )
    return mass_res, vol_res, sym


def _residuals_ok(mesh: MeshVarifold, cfg: FlowConfig, params: HelfrichParams,
                  ctx: _FlowContext, residuals) -> bool:
    mass_res, vol_res, sym = residuals
    if mass_res > MASS_RESIDUAL_TOL * params.m0:
        return False
    if cfg.constraints.volume is not None:
        if vol_res > VOLUME_RESIDUAL_TOL * abs(cfg.constraints.volume):
            return False
    if ctx.projector is not None:
        if sym > SYMMETRY_DEFECT_FACTOR * math.sqrt(params.m0) * max(diameter(mesh), 1e-12):
            return False
    return True


def _evaluate_candidate(candidate: MeshVarifold, prev_atoms: ParticleVarifold,
                        cfg: FlowConfig, params: HelfrichParams, ctx: _FlowContext):
    """Energy, exact increment, and incremental objective of a candidate."""
    g_new = helfrich_energy(candidate, curvature_field(candidate), params).total
    atoms = sample_particles(candidate, cfg.quadrature)
    if atoms.atom_count == prev_atoms.atom_count and np.array_equal(
        atoms.positions, prev_atoms.positions
    ) and np.array_equal(atoms.normals, prev_atoms.normals) and np.array_equal(
        atoms.weights, prev_atoms.weights
    ):
        w = 0.0
    else:
        w, _ = wasserstein(atoms, prev_atoms, ctx.exact_cfg)
    return g_new, w, g_new + _increment_term(w, cfg.tau, cfg.transport.p, cfg.increment_power)


def _finish_candidate(template: MeshVarifold, verts: np.ndarray, cfg: FlowConfig,
                      params: HelfrichParams, ctx: _FlowContext) -> MeshVarifold:
    shaped = with_vertices(template, verts)
    shaped = restore_constraints(shaped, params.m0, cfg.constraints.volume)
    if ctx.projector is not None:
        shaped = with_vertices(shaped, ctx.projector.project(shaped.vertices))
    return shaped


def incremental_step(prev: MeshVarifold, cfg: FlowConfig, params: HelfrichParams,
                     _ctx: _FlowContext | None = None) -> tuple[MeshVarifold, StepRecord]:
    """One minimizing movement: optimize vertex positions against the
    incremental objective, restore constraints, and accept only if the
    incremental inequality holds (falling back to the previous state)."""
    t0 = time.perf_counter()
    ctx = _ctx if _ctx is not None else _make_context(prev, cfg, params)
    prev_atoms = sample_particles(prev, cfg.quadrature)
    g_prev = helfrich_energy(prev, curvature_field(prev), params).total

    objective = _build_objective(prev, cfg, params, ctx)
    verts, inner_iters = _inner_optimize(
        prev, prev.vertices.copy(), prev_atoms, objective, cfg, ctx,
        cfg.optimizer.max_inner_iter,
    )
    candidate = _finish_candidate(prev, verts, cfg, params, ctx)
    g_new, w, j_new = _evaluate_candidate(candidate, prev_atoms, cfg, params, ctx)
    residuals = _residuals(candidate, cfg, params, ctx)

    stalled = False
    if j_new > g_prev + ctx.tol_accept or not _residuals_ok(candidate, cfg, params, ctx, residuals):
        candidate, g_new, w = prev, g_prev, 0.0
        residuals = _residuals(prev, cfg, params, ctx)
        stalled = True

    record = StepRecord(
        step=-1,
        energy=g_new,
        increment=w,
        metric_derivative=w / cfg.tau,
        diameter=diameter(candidate),
        multiplicity=candidate.multiplicity,
        mass_residual=residuals[0],
        volume_residual=residuals[1],
        symmetry_defect=residuals[2],
        inner_iterations=inner_iters,
        stalled=stalled,
        wall_time=time.perf_counter() - t0,
    )
    return candidate, record


def _rescaled_candidate(prev: MeshVarifold, k: int, m0: float) -> MeshVarifold:
    """Mesh rescaled about its area centroid so that k * area = m0, carried
    with covering number k."""
    base = with_multiplicity(prev, k, 0)
    area_needed = m0 / k
    from .varifold import total_area

    s = math.sqrt(area_needed / total_area(prev))
    c = _area_centroid(prev.vertices, prev.faces)
    return with_vertices(base, c + s * (prev.vertices - c))


def multiplicity_step(prev: MeshVarifold, cfg: FlowConfig, params: HelfrichParams,
                      _ctx: _FlowContext | None = None) -> tuple[MeshVarifold, StepRecord]:
    """Incremental step searching over covering numbers: every candidate k is
    realized by uniform rescaling to mass m0, vertex-optimized on a reduced
    budget, and the winner of the incremental objective is refined fully."""
    if prev.theta_minus != 0:
        raise DomainError("multiplicity search requires theta_minus = 0")
    t0 = time.perf_counter()
    ctx = _ctx if _ctx is not None else _make_context(prev, cfg, params)
    candidates = list(cfg.multiplicity_search) or [prev.theta_plus]
    if ctx.multiplicity_cap is not None:
        kept = [k for k in candidates if k <= ctx.multiplicity_cap]
        candidates = kept or candidates[:1]
    if len(candidates) == 1 and candidates[0] == prev.theta_plus:
        mesh, record = incremental_step(prev, cfg, params, ctx)
        record.wall_time = time.perf_counter() - t0
        return mesh, record

    prev_atoms = sample_particles(prev, cfg.quadrature)
    g_prev = helfrich_energy(prev, curvature_field(prev), params).total
    budget = cfg.candidate_inner_iter or max(2, cfg.optimizer.max_inner_iter // 4)

    results = {}
    for k in candidates:
        template = _rescaled_candidate(prev, k, params.m0)
        objective = _build_objective(template, cfg, params, ctx)
        verts, inner = _inner_optimize(
            template, template.vertices.copy(), prev_atoms, objective, cfg, ctx, budget
        )
        shaped = _finish_candidate(template, verts, cfg, params, ctx)
        g_k, w_k, j_k = _evaluate_candidate(shaped, prev_atoms, cfg, params, ctx)
        results[k] = {"mesh": shaped, "g": g_k, "w": w_k, "j": j_k, "inner": inner}

    best_k = min(results, key=lambda k: (results[k]["j"], k))
    # full-budget refinement of the winner
    winner = results[best_k]["mesh"]
    objective = _build_objective(winner, cfg, params, ctx)
    verts, extra = _inner_optimize(
        winner, winner.vertices.copy(), prev_atoms, objective, cfg, ctx,
        cfg.optimizer.max_inner_iter,
    )
    refined = _finish_candidate(winner, verts, cfg, params, ctx)
    g_best, w_best, j_best = _evaluate_candidate(refined, prev_atoms, cfg, params, ctx)
    if j_best <= results[best_k]["j"]:
        results[best_k] = {
            "mesh": refined, "g": g_best, "w": w_best, "j": j_best,
            "inner": results[best_k]["inner"] + extra,
        }

    ordered = sorted(results, key=lambda k: results[k]["j"])
    best_k = ordered[0]
    gap = (
        results[ordered[1]]["j"] - results[ordered[0]]["j"]
        if len(ordered) > 1
        else math.nan
    )

    # empirical tau threshold: smallest tau at which an energy-favorable
    # jump away from the current multiplicity would win the objective
    stay = results.get(prev.theta_plus)
    tau_threshold = math.inf
    if stay is not None:
        q = 2.0 if cfg.increment_power == "squared" else cfg.transport.p
        for k, res in results.items():
            if k == prev.theta_plus or res["g"] >= stay["g"]:
                continue
            tau_threshold = min(
                tau_threshold,
                (res["w"] ** q - stay["w"] ** q) / (2.0 * (stay["g"] - res["g"])),
            )

    chosen = results[best_k]
    candidate, g_new, w = chosen["mesh"], chosen["g"], chosen["w"]
    residuals = _residuals(candidate, cfg, params, ctx)
    stalled = False
    if chosen["j"] > g_prev + ctx.tol_accept or not _residuals_ok(
        candidate, cfg, params, ctx, residuals
    ):
        candidate, g_new, w = prev, g_prev, 0.0
        residuals = _residuals(prev, cfg, params, ctx)
        stalled = True

    record = StepRecord(
        step=-1,
        energy=g_new,
        increment=w,
        metric_derivative=w / cfg.tau,
        diameter=diameter(candidate),
        multiplicity=candidate.multiplicity,
        mass_residual=residuals[0],
        volume_residual=residuals[1],
        symmetry_defect=residuals[2],
        inner_iterations=sum(r["inner"] for r in results.values()),
        stalled=stalled,
        tau_threshold=tau_threshold,
        candidate_gap=gap,
        wall_time=time.perf_counter() - t0,
    )
    return candidate, record


def run_flow(v0: MeshVarifold, cfg: FlowConfig, params: HelfrichParams) -> FlowTrace:
    """Iterate the incremental minimization for cfg.steps steps.

    The initial state must carry mass m0 (1e-6 relative); when a volume
    constraint is active the initial state is first restored onto the
    constraint manifold, and the energy baseline is measured there.
    """
    m_init = mass(v0)
    if abs(m_init - params.m0) > MASS_RESIDUAL_TOL * params.m0:
        raise DomainError(
            f"initial mass {m_init!r} does not match m0 = {params.m0!r}; "
            "rescale the mesh (restore_constraints) before running"
        )
    if cfg.constraints.volume is not None:
        v0 = restore_constraints(v0, params.m0, cfg.constraints.volume)
    ctx = _make_context(v0, cfg, params)
    if ctx.projector is not None:
        v0 = with_vertices(v0, ctx.projector.project(v0.vertices))

    trace = FlowTrace(tau=cfg.tau)
    g0 = helfrich_energy(v0, curvature_field(v0), params).total
    residuals = _residuals(v0, cfg, params, ctx)
    trace.records.append(
        StepRecord(
            step=0,
            energy=g0,
            increment=0.0,
            metric_derivative=0.0,
            diameter=diameter(v0),
            multiplicity=v0.multiplicity,
            mass_residual=residuals[0],
            volume_residual=residuals[1],
            symmetry_defect=residuals[2],
            inner_iterations=0,
            stalled=False,
        )
    )
    trace.snapshots.append((0, v0))

    current = v0
    step_fn = multiplicity_step if cfg.multiplicity_search else incremental_step
    for n in range(1, cfg.steps + 1):
        try:
            current, record = step_fn(current, cfg, params, ctx)
        except FlowStepError as err:
            err.diagnostics["trace"] = trace  # trajectory up to the failure
            err.diagnostics["failed_step"] = n
            raise
        record.step = n
        trace.records.append(record)
        if n % cfg.snapshot_stride == 0 or n == cfg.steps:
            trace.snapshots.append((n, current))
        _step_diagnostics(current, record, cfg)
        logger.info(
            "step %d: energy=%.10g increment=%.3e k=%d inner=%d%s",
            n, record.energy, record.increment, record.multiplicity,
            record.inner_iterations, " (stalled)" if record.stalled else "",
        )
    return trace


def _step_diagnostics(mesh: MeshVarifold, record: StepRecord, cfg: FlowConfig) -> None:
    """Warn-only checks: the Willmore diameter sandwich (no bounding compact
    is enforced, so a violated upper bound flags a runaway trajectory) and
    the optional uniform curvature bound."""
    curv = curvature_field(mesh)
    try:
        lower, upper = diameter_bounds(mesh, curv)
    except DomainError:
        return
    if record.diameter > upper * 1.03 or record.diameter < lower * 0.97:
        logger.warning(
            "step %d: diameter %.6g outside the Willmore sandwich [%.6g, %.6g]",
            record.step, record.diameter, lower, upper,
        )
    if cfg.curvature_bound is not None:
        from .curvature import second_form_quantities

        ii_sq, _ = second_form_quantities(curv)
        worst = float(np.sqrt(ii_sq.max()))
        if worst > cfg.curvature_bound:
            logger.warning(
                "step %d: max second-fundamental-form norm %.6g exceeds the "
                "configured uniform bound %.6g",
                record.step, worst, cfg.curvature_bound,
            )
