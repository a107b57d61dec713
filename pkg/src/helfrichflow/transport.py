"""p-Wasserstein distances between particle varifolds on R^3 x S^2.

Ground metric: d((x, nu), (y, mu)) = |x - y| + |nu - mu|.  Two solvers:

* ``exact`` -- LP optimum over the transport polytope via HiGHS.  Above a
  dense size limit a column-generation loop restricts the LP to candidate
  pairs and certifies global optimality by checking every reduced cost
  against the duals, so the result stays the exact LP optimum.
* ``entropic`` -- log-domain Sinkhorn with stepped epsilon reduction and
  warm-startable potentials; the returned plan is rounded onto the
  transport polytope, so its cost is a true upper bound of the optimum.

Masses must agree to 1e-9 relative; weights are renormalized to the common
(arithmetic mean) mass before solving, which keeps the distance symmetric.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from .errors import DomainError, TransportConvergenceError, TransportError
from .varifold import ParticleVarifold

MASS_TOL = 1e-9
DENSE_LP_LIMIT = 40_000  # entries; above this the column-generation path runs
_CERT_TOL = 1e-9


@dataclass(frozen=True)
class TransportConfig:
    """Solver selection and controls.

    epsilon is the entropic regularization expressed relative to the mean
    ground cost of the instance, so configurations transfer across scales.
    """

    p: float = 2.0
    solver: str = "exact"
    epsilon: float = 0.01
    max_iter: int = 20_000
    tol: float = 1e-9

    def __post_init__(self):
        if not self.p >= 1.0:
            raise DomainError(f"transport order p must be >= 1, got {self.p}")
        if self.solver not in ("exact", "entropic"):
            raise DomainError(f"solver must be 'exact' or 'entropic', got {self.solver!r}")
        if self.solver == "entropic" and not self.epsilon > 0.0:
            raise DomainError(f"entropic epsilon must be > 0, got {self.epsilon}")


@dataclass(frozen=True)
class TransportPlan:
    """Coupling between two atom families with its total cost.

    cost is the p-th power of the distance: sum_ij entries_ij * d_ij^p.
    row_potentials / col_potentials are the dual (Kantorovich) potentials:
    exact LP duals for the exact solver, converged Sinkhorn potentials for
    the entropic one.  They measure the sensitivity of cost to the marginal
    weights.
    """

    rows: int
    cols: int
    entries: np.ndarray
    cost: float
    row_potentials: np.ndarray | None = None
    col_potentials: np.ndarray | None = None

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=float)
        if e.shape != (self.rows, self.cols):
            raise DomainError(f"plan shape {e.shape} inconsistent with ({self.rows}, {self.cols})")
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)

    def marginal_residual(self, source_weights, target_weights) -> float:
        """Largest relative marginal defect against the given weights."""
        a = np.asarray(source_weights, dtype=float)
        b = np.asarray(target_weights, dtype=float)
        total = a.sum()
        row = np.abs(self.entries.sum(axis=1) - a).max() if self.rows else 0.0
        col = np.abs(self.entries.sum(axis=0) - b).max() if self.cols else 0.0
        return max(row, col) / total

    def support(self, threshold: float = 0.0):
        """Indices (i, j) of entries above threshold."""
        return np.argwhere(self.entries > threshold)


def ground_cost(x, nu, x_other, nu_other, p: float = 1.0) -> float:
    """(|x - x'| + |nu - nu'|)^p for a single pair of atoms."""
    x = np.asarray(x, dtype=float)
    nu = np.asarray(nu, dtype=float)
    d = float(np.linalg.norm(x - np.asarray(x_other, dtype=float)))
    d += float(np.linalg.norm(nu - np.asarray(nu_other, dtype=float)))
    return d**p


def cost_matrix(v: ParticleVarifold, w: ParticleVarifold, p: float) -> np.ndarray:
    d = cdist(v.positions, w.positions) + cdist(v.normals, w.normals)
    return d if p == 1.0 else d**p


def _common_mass_weights(v, w):
    mv = float(v.weights.sum())
    mw = float(w.weights.sum())
    if abs(mv - mw) > MASS_TOL * max(mv, mw):
        raise DomainError(
            f"unequal masses: source {mv!r} vs target {mw!r} "
            f"(relative gap {abs(mv - mw) / max(mv, mw):.3e} exceeds {MASS_TOL:g})"
        )
    common = 0.5 * (mv + mw)
    return v.weights * (common / mv), w.weights * (common / mw), common


def wasserstein(v: ParticleVarifold, w: ParticleVarifold,
                config: TransportConfig = TransportConfig()) -> tuple[float, TransportPlan]:
    """W_p distance and an optimal (or entropic) coupling between equal-mass
    particle varifolds."""
    a, b, common = _common_mass_weights(v, w)
    cost = cost_matrix(v, w, config.p)
    if config.solver == "exact":
        plan, value, pot_u, pot_v = _solve_exact(a, b, cost)
    else:
        plan, value, pot_u, pot_v, _ = _sinkhorn(a, b, cost, config)
    plan = _round_feasible(plan, a, b)
    value = float(np.sum(plan * cost))
    tp = TransportPlan(rows=len(a), cols=len(b), entries=plan, cost=value,
                       row_potentials=pot_u, col_potentials=pot_v)
    residual = tp.marginal_residual(a, b)
    if residual > 1e-9:
        raise TransportError(f"plan marginals off by {residual:.3e} relative")
    return value ** (1.0 / config.p), tp


def wasserstein_spatial(v: ParticleVarifold, w: ParticleVarifold,
                        config: TransportConfig = TransportConfig()) -> float:
    """Wasserstein distance between the spatial marginals (positions only,
    cost |x - y|^p); never exceeds the full metric."""
    pa, wa = _spatial_marginal(v)
    pb, wb = _spatial_marginal(w)
    ma, mb = wa.sum(), wb.sum()
    if abs(ma - mb) > MASS_TOL * max(ma, mb):
        raise DomainError(f"unequal masses: source {ma!r} vs target {mb!r}")
    common = 0.5 * (ma + mb)
    a = wa * (common / ma)
    b = wb * (common / mb)
    d = cdist(pa, pb)
    cost = d if config.p == 1.0 else d**config.p
    if config.solver == "exact":
        _, value, _, _ = _solve_exact(a, b, cost)
    else:
        plan, value, _, _, _ = _sinkhorn(a, b, cost, config)
        value = float(np.sum(_round_feasible(plan, a, b) * cost))
    return value ** (1.0 / config.p)


def _spatial_marginal(v: ParticleVarifold):
    """Collapse atoms to positions, merging weights of coincident positions
    (1e-12 spatial hash, scaled by the coordinate magnitude)."""
    pos = v.positions
    tol = 1e-12 * max(1.0, float(np.abs(pos).max()))
    keys = np.round(pos / tol).astype(np.int64)
    _, index, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    weights = np.bincount(inverse, weights=v.weights)
    return pos[index], weights


def dual_certificate_w1(v: ParticleVarifold, w: ParticleVarifold, test_function) -> float:
    """Kantorovich-Rubinshtein lower bound: integral of f against (V - W)
    for a caller-supplied f that is 1-Lipschitz on the atom set.

    The Lipschitz property is certified pairwise on the union of atoms;
    a violating pair raises with its indices.  The returned value is a
    lower bound for W_1 (the supremum over all admissible f).
    """
    pos = np.vstack([v.positions, w.positions])
    nrm = np.vstack([v.normals, w.normals])
    values = np.array([float(test_function(pos[i], nrm[i])) for i in range(len(pos))])
    if not np.isfinite(values).all():
        raise DomainError("test function returned a non-finite value")
    dmat = cdist(pos, pos) + cdist(nrm, nrm)
    gaps = np.abs(values[:, None] - values[None, :])
    scale = max(1.0, float(np.abs(values).max()))
    bad = gaps > dmat * (1.0 + 1e-12) + 1e-9 * scale
    np.fill_diagonal(bad, False)
    if bad.any():
        i, j = map(int, np.argwhere(bad)[0])
        raise DomainError(
            f"test function is not 1-Lipschitz on the atoms: "
            f"|f[{i}] - f[{j}]| = {gaps[i, j]!r} > d = {dmat[i, j]!r}"
        )
    nv = v.atom_count
    return float(np.sum(v.weights * values[:nv]) - np.sum(w.weights * values[nv:]))


# ---------------------------------------------------------------------------
# exact solver


def _solve_exact(a: np.ndarray, b: np.ndarray, cost: np.ndarray):
    """Returns (plan, cost value, row duals, column duals)."""
    n, m = cost.shape
    if n == 1 or m == 1:
        plan = np.outer(a, b) / a.sum()
        if n == 1:
            u, v = np.zeros(1), cost[0, :].copy()
        else:
            u, v = cost[:, 0].copy(), np.zeros(1)
        return plan, float(np.sum(plan * cost)), u, v
    if n * m <= DENSE_LP_LIMIT:
        rows = np.repeat(np.arange(n), m)
        cols = np.tile(np.arange(m), n)
        x, u, v = _lp_on_pairs(a, b, cost[rows, cols], rows, cols)
        plan = x.reshape(n, m)
        return plan, float(np.sum(plan * cost)), u, v
    return _solve_colgen(a, b, cost)


def _lp_on_pairs(a, b, cvals, rows, cols):
    """Transportation LP restricted to the variables (rows[k], cols[k])."""
    n, m = len(a), len(b)
    nv = len(cvals)
    ones = np.ones(nv)
    arange = np.arange(nv)
    a_eq = sparse.vstack(
        [
            sparse.coo_matrix((ones, (rows, arange)), shape=(n, nv)),
            sparse.coo_matrix((ones, (cols, arange)), shape=(m, nv)),
        ]
    ).tocsc()
    res = linprog(cvals, A_eq=a_eq, b_eq=np.concatenate([a, b]),
                  bounds=(0, None), method="highs")
    if res.status != 0:
        raise TransportError(f"LP solver failed with status {res.status}: {res.message}")
    return res.x, res.eqlin.marginals[:n], res.eqlin.marginals[n:]


def _northwest_support(a, b):
    """Support of the northwest-corner feasible plan; guarantees the
    restricted LP is feasible."""
    i = j = 0
    ra, rb = a.copy(), b.copy()
    rows, cols = [], []
    while i < len(a) and j < len(b):
        rows.append(i)
        cols.append(j)
        move = min(ra[i], rb[j])
        ra[i] -= move
        rb[j] -= move
        if ra[i] <= rb[j] and i + 1 < len(a):
            i += 1
        elif j + 1 < len(b):
            j += 1
        else:
            i += 1
    return np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64)


def _solve_colgen(a, b, cost, knn: int = 12, max_rounds: int = 60):
    """Exact LP via column generation with a dual-feasibility certificate.

    Starts from k-nearest candidate pairs plus a feasible support, solves
    the restricted LP, and adds every pair whose reduced cost violates the
    duals until none remains; the final solution is then optimal for the
    full dense problem.
    """
    n, m = cost.shape
    mask = np.zeros((n, m), dtype=bool)
    kr = min(knn, m)
    kc = min(knn, n)
    near_cols = np.argpartition(cost, kr - 1, axis=1)[:, :kr]
    mask[np.repeat(np.arange(n), kr), near_cols.ravel()] = True
    near_rows = np.argpartition(cost, kc - 1, axis=0)[:kc, :]
    mask[near_rows.ravel(), np.tile(np.arange(m), kc)] = True
    nw_r, nw_c = _northwest_support(a, b)
    mask[nw_r, nw_c] = True

    tol = _CERT_TOL * max(1.0, float(cost.max()))
    batch = 8 * (n + m)
    for _ in range(max_rounds):
        rows, cols = np.nonzero(mask)
        x, u, v = _lp_on_pairs(a, b, cost[rows, cols], rows, cols)
        reduced = cost - u[:, None] - v[None, :]
        violated = (reduced < -tol) & ~mask
        count = int(violated.sum())
        if count == 0:
            plan = np.zeros((n, m))
            plan[rows, cols] = x
            return plan, float(np.sum(x * cost[rows, cols])), u, v
        flat = np.flatnonzero(violated.ravel())
        if count > batch:
            order = np.argsort(reduced.ravel()[flat])[:batch]
            flat = flat[order]
        mask.ravel()[flat] = True
    raise TransportError(f"column generation did not certify optimality in {max_rounds} rounds")


# ---------------------------------------------------------------------------
# entropic solver


def _round_feasible(plan, a, b):
    """Project a nonnegative matrix onto the transport polytope (scale rows,
    scale columns, rank-one correction); exact marginals up to fp."""
    rs = plan.sum(axis=1)
    plan = plan * np.minimum(1.0, np.divide(a, rs, out=np.ones_like(a), where=rs > 0))[:, None]
    cs = plan.sum(axis=0)
    plan = plan * np.minimum(1.0, np.divide(b, cs, out=np.ones_like(b), where=cs > 0))[None, :]
    res_a = a - plan.sum(axis=1)
    res_b = b - plan.sum(axis=0)
    total = res_a.sum()
    if total > 0.0:
        plan = plan + np.outer(res_a, res_b) / total
    return plan


def _sinkhorn(a, b, cost, config: TransportConfig, f_init=None, g_init=None):
    """Log-domain Sinkhorn with stepped epsilon reduction.

    Returns (plan, primal cost of the rounded plan, f, g, iterations).
    epsilon in the config is relative to the mean ground cost.
    """
    n, m = cost.shape
    total = a.sum()
    mean_cost = float(cost.mean())
    eps_target = config.epsilon * mean_cost if mean_cost > 0 else config.epsilon
    if eps_target <= 0.0:
        raise DomainError("entropic epsilon must be positive")
    loga = np.log(a)
    logb = np.log(b)
    f = np.zeros(n) if f_init is None else np.array(f_init, dtype=float)
    g = np.zeros(m) if g_init is None else np.array(g_init, dtype=float)

    schedule = [eps_target]
    while schedule[-1] < 0.25 * mean_cost:
        schedule.append(schedule[-1] * 4.0)
    schedule.reverse()

    iterations = 0
    residual = math.inf
    for eps in schedule:
        final_stage = eps == eps_target
        # warm-up stages only pre-shape the potentials; tight tolerance is
        # enforced at the target epsilon alone
        stage_tol = config.tol if final_stage else max(config.tol, 1e-3)
        stage_cap = config.max_iter if final_stage else min(200, config.max_iter)
        stage_iters = 0
        while iterations < config.max_iter and stage_iters < stage_cap:
            f = -eps * logsumexp((g[None, :] - cost) / eps + logb[None, :], axis=1)
            g = -eps * logsumexp((f[:, None] - cost) / eps + loga[:, None], axis=0)
            iterations += 1
            stage_iters += 1
            # column marginals are exact after the g-update; row defect remains
            log_plan = (f[:, None] + g[None, :] - cost) / eps + loga[:, None] + logb[None, :]
            row_sums = np.exp(logsumexp(log_plan, axis=1))
            residual = float(np.abs(row_sums - a).sum() / total)
            if residual <= stage_tol:
                break
        if final_stage and residual > config.tol:
            raise TransportConvergenceError(
                f"Sinkhorn did not converge: residual {residual:.3e} after "
                f"{iterations} iterations (tol {config.tol:g})",
                residual=residual,
                iterations=iterations,
            )
    plan = np.exp((f[:, None] + g[None, :] - cost) / eps_target + loga[:, None] + logb[None, :])
    rounded = _round_feasible(plan, a, b)
    value = float(np.sum(rounded * cost))
    return rounded, value, f, g, iterations


def entropic_plan(v: ParticleVarifold, w: ParticleVarifold, config: TransportConfig,
                  f_init=None, g_init=None):
    """Entropic coupling with warm-startable potentials, for callers that
    re-solve nearby instances repeatedly (the flow inner loop)."""
    a, b, _ = _common_mass_weights(v, w)
    cost = cost_matrix(v, w, config.p)
    plan, value, f, g, iters = _sinkhorn(a, b, cost, config, f_init, g_init)
    return plan, value, f, g, iters
