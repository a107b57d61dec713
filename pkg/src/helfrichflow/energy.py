"""Bending energies on discrete varifolds and closed-form sphere analytics.

The quadrature convention: every energy is a vertex sum with mixed-area
weights, multiplied by the covering number ``theta_plus + theta_minus``;
the orientation-sensitive spontaneous-curvature term carries
``theta_plus - theta_minus`` instead.  All sums use a fixed order so runs
are bit-stable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .curvature import CurvatureField
from .errors import DomainError
from .varifold import HelfrichParams, MeshVarifold, mass


@dataclass(frozen=True)
class EnergyBreakdown:
    """Componentwise value of the bending energy.

    total = bending + gauss + cross;
    willmore is reported alongside (it is not a summand of total).
    """

    total: float
    bending: float
    gauss: float
    cross: float
    willmore: float

    def as_dict(self) -> dict:
        return {
            "total": self.total,
            "bending": self.bending,
            "gauss": self.gauss,
            "cross": self.cross,
            "willmore": self.willmore,
        }


def helfrich_energy(mesh: MeshVarifold, curv: CurvatureField,
                    params: HelfrichParams) -> EnergyBreakdown:
    """Bending energy of a mesh varifold from its curvature field.

    bending = (beta/2) * sum a * (H^2 + h0^2) * (tp + tm)
    gauss   = gamma   * sum a * K             * (tp + tm)
    cross   = -beta * h0 * (tp - tm) * sum a * H

    For tm = 0, tp = k the total telescopes to
    k * sum a * ((beta/2)(H - h0)^2 + gamma K) exactly.
    """
    if curv.vertex_count != mesh.vertex_count:
        raise DomainError(
            f"curvature field has {curv.vertex_count} vertices, mesh has {mesh.vertex_count}"
        )
    mult = mesh.multiplicity
    diff = mesh.theta_plus - mesh.theta_minus
    a, h, k = curv.area, curv.h, curv.k
    sum_ah2 = float(np.sum(a * h * h))
    sum_ah = float(np.sum(a * h))
    sum_ak = float(np.sum(a * k))
    area = float(np.sum(a))

    bending = 0.5 * params.beta * mult * (sum_ah2 + params.h0**2 * area)
    gauss = params.gamma * mult * sum_ak
    cross = -params.beta * params.h0 * diff * sum_ah
    willmore = 0.25 * mult * sum_ah2
    return EnergyBreakdown(
        total=bending + gauss + cross,
        bending=bending,
        gauss=gauss,
        cross=cross,
        willmore=willmore,
    )


def willmore_energy(mesh: MeshVarifold, curv: CurvatureField) -> float:
    """(1/4) * sum a * H^2 * (theta_plus + theta_minus).

    Bounded below by 4*pi*(theta_plus + theta_minus) up to discretization
    error (Li-Yau), with equality exactly on round spheres.
    """
    return 0.25 * mesh.multiplicity * float(np.sum(curv.area * curv.h * curv.h))


def lower_bound_value(willmore: float, gauss_integral: float, mass_value: float,
                      beta: float, gamma: float, h0: float) -> float:
    """Energy lower bound 2*beta*(sqrt(W/m) - |h0|/2)^2 * m + gamma * int K.

    ``gauss_integral`` is the multiplicity-weighted integral of K (without
    the gamma factor).  The bound is tight on round spheres whenever
    h0 <= 0 and |h0| <= 2/R.
    """
    if mass_value <= 0.0:
        raise DomainError(f"mass must be positive, got {mass_value}")
    if willmore < 0.0:
        raise DomainError(f"willmore energy must be non-negative, got {willmore}")
    root = math.sqrt(willmore / mass_value) - abs(h0) / 2.0
    return 2.0 * beta * root * root * mass_value + gamma * gauss_integral


def lower_bound_certificate(mesh: MeshVarifold, curv: CurvatureField,
                            params: HelfrichParams) -> float:
    """Certified lower bound for the bending energy of this varifold,
    computed from the same discrete fields (mass(V) plays the role of m0).

    The inequality helfrich_energy(...).total >= certificate holds exactly
    for the discrete sums: it only uses Cauchy-Schwarz on the vertex
    quadrature, which is as valid for sums as for integrals.
    """
    w = willmore_energy(mesh, curv)
    gauss_integral = mesh.multiplicity * float(np.sum(curv.area * curv.k))
    return lower_bound_value(w, gauss_integral, mass(mesh), params.beta, params.gamma, params.h0)


# ---------------------------------------------------------------------------
# closed-form sphere analytics


def sphere_radius(k: int, m0: float) -> float:
    """Radius R_k = sqrt(m0 / (4 pi k)) of the k-covered sphere of mass m0."""
    if k <= 0:
        raise DomainError(f"multiplicity must be >= 1, got {k}")
    return math.sqrt(m0 / (4.0 * math.pi * k))


def _sphere_energy_continuous(r: float, params: HelfrichParams) -> float:
    r1 = math.sqrt(params.m0 / (4.0 * math.pi))
    gamma_ratio = 1.0 + params.gamma / (2.0 * params.beta)
    return 2.0 * params.beta * params.m0 * (
        gamma_ratio * r / r1**2 + params.h0 * math.sqrt(r) / r1 + params.h0**2 / 4.0
    )


def sphere_energy(k: int, params: HelfrichParams) -> float:
    """Bending energy of the k-covered round sphere at mass m0,

        2*beta*m0*((1 + gamma/(2*beta))/R1^2 * k + h0*sqrt(k)/R1 + h0^2/4),

    with R1 = sqrt(m0/(4*pi)).  For beta = 1/2, gamma = 0, h0 = 0 this is
    the Willmore energy 4*pi*k of the k-covered sphere.
    """
    if int(k) != k or k <= 0:
        raise DomainError(f"multiplicity must be a positive integer, got {k!r}")
    return _sphere_energy_continuous(float(k), params)


@dataclass(frozen=True)
class SphereAnalytics:
    """Outcome of the optimal-multiplicity search over round spheres.

    argmin_k is an int, or a (floor, ceil) pair on an exact tie.
    """

    k_star: float
    y_star: float
    argmin_k: int | tuple[int, int]
    r_k: float
    energies: dict[int, float] = field(default_factory=dict)
    method: str = "closed_form"
    warning: str | None = None

    @property
    def first_argmin(self) -> int:
        return self.argmin_k[0] if isinstance(self.argmin_k, tuple) else self.argmin_k

    @property
    def is_tie(self) -> bool:
        return isinstance(self.argmin_k, tuple)

    def as_dict(self) -> dict:
        return {
            "k_star": self.k_star,
            "y_star": self.y_star,
            "argmin_k": list(self.argmin_k) if self.is_tie else self.argmin_k,
            "r_k": self.r_k,
            "energies": {str(k): v for k, v in sorted(self.energies.items())},
            "method": self.method,
            "warning": self.warning,
        }


_INTEGER_SNAP_REL = 1e-9
_TIE_REL = 1e-12


def _y_star(k_star: float, params: HelfrichParams) -> tuple[float, float, float]:
    lo = math.floor(k_star)
    hi = math.ceil(k_star)
    t1 = (math.sqrt(lo) - math.sqrt(hi)) * params.h0
    t2 = math.sqrt(4.0 * math.pi / params.m0) * (1.0 + params.gamma / (2.0 * params.beta))
    return t1 - t2, abs(t1), abs(t2)


def optimal_sphere(params: HelfrichParams, brute_force_cap: int = 1000) -> SphereAnalytics:
    """Multiplicity of the minimal-energy covered sphere at fixed mass.

    Inside the hypotheses -2*beta < gamma <= 0 and 0 <= -h0 <= sqrt(16*pi/m0)
    the selector is closed form:

        k_star = m0*h0^2 / (16*pi) / (1 + gamma/(2*beta))^2

    with the integer decided by the sign of y_star; y_star = 0 (within
    1e-12 of its terms) reports the tie pair.  Outside the hypotheses the
    result is a brute-force scan of sphere_energy with a warning attached.
    """
    beta, gamma, h0, m0 = params.beta, params.gamma, params.h0, params.m0
    hypotheses = (-2.0 * beta < gamma <= 0.0) and (
        0.0 <= -h0 <= math.sqrt(16.0 * math.pi / m0) * (1.0 + 1e-12)
    )
    if hypotheses:
        gamma_ratio = 1.0 + gamma / (2.0 * beta)
        k_star = m0 * h0**2 / (16.0 * math.pi) / gamma_ratio**2
        y_star, t1, t2 = _y_star(k_star, params)
        nearest = round(k_star)
        if nearest >= 1 and abs(k_star - nearest) <= _INTEGER_SNAP_REL * max(1.0, k_star):
            argmin: int | tuple[int, int] = int(nearest)
        elif k_star <= 1.0:
            argmin = 1
        elif abs(y_star) < _TIE_REL * (t1 + t2):
            argmin = (math.floor(k_star), math.ceil(k_star))
        elif y_star < 0.0:
            argmin = math.floor(k_star)
        else:
            argmin = math.ceil(k_star)
        first = argmin[0] if isinstance(argmin, tuple) else argmin
        ks = range(1, max(10, math.ceil(k_star) + 2) + 1)
        energies = {k: sphere_energy(k, params) for k in ks}
        return SphereAnalytics(
            k_star=k_star,
            y_star=y_star,
            argmin_k=argmin,
            r_k=sphere_radius(first, m0),
            energies=energies,
        )

    # brute-force fallback; the closed-form selector is not claimed here
    warning = (
        "parameters outside the optimal-sphere hypotheses "
        "(-2*beta < gamma <= 0 and 0 <= -h0 <= sqrt(16*pi/m0)); using brute force"
    )
    cap = brute_force_cap
    if 2.0 * beta + gamma > 0.0:
        # strictly convex in sqrt(k): extend the scan past the continuous argmin
        bq = 2.0 * beta * math.sqrt(4.0 * math.pi * m0) * h0
        aq = 4.0 * math.pi * (2.0 * beta + gamma)
        if bq < 0.0:
            cap = max(cap, math.ceil((bq / (-2.0 * aq)) ** 2) + 2)
    else:
        warning += "; energy is unbounded below in k (2*beta + gamma <= 0), scan capped"
    energies = {k: sphere_energy(k, params) for k in range(1, cap + 1)}
    best = min(energies, key=lambda k: (energies[k], k))
    ties = [
        k for k in energies
        if k != best and abs(energies[k] - energies[best]) <= 1e-12 * max(1.0, abs(energies[best]))
    ]
    argmin = (best, ties[0]) if ties else best
    k_star_report = float(best)
    y_star, _, _ = _y_star(k_star_report, params)
    return SphereAnalytics(
        k_star=k_star_report,
        y_star=y_star,
        argmin_k=argmin,
        r_k=sphere_radius(best, m0),
        energies=energies,
        method="brute_force",
        warning=warning,
    )


def multiplicity_bound(energy_value: float, params: HelfrichParams,
                       genus: int | None = None) -> int:
    """Upper bound on the covering number from the bending energy.

    With F the energy, m0 the mass and g the genus:

        kbar0 = (2F/(2b+g') + b(2b-g') h0^2 m0 / (2b+g')^2) / (4 pi)   (g = 0)
        kbar1 = (F/b + h0^2 m0 / 2) / (4 pi)                           (g = 1)
        kbar2 = -F / (4 pi g')                                         (g >= 2)

    writing b = beta, g' = gamma.  When the genus is unknown the bound is
    the ceiling of the max over all three branches, which requires
    -2*beta < gamma < 0; a supplied genus uses only its branch.  The bound
    is non-decreasing in F.
    """
    beta, gamma, h0, m0 = params.beta, params.gamma, params.h0, params.m0
    if not gamma < 0.0:
        raise DomainError(f"multiplicity bound requires gamma < 0, got gamma = {gamma}")

    def kbar0() -> float:
        if not -2.0 * beta < gamma:
            raise DomainError(
                f"multiplicity bound at genus 0 requires -2*beta < gamma, "
                f"got -2*beta = {-2.0 * beta}, gamma = {gamma}"
            )
        denom = 2.0 * beta + gamma
        return (
            2.0 * energy_value / denom
            + beta * (2.0 * beta - gamma) * h0**2 * m0 / denom**2
        ) / (4.0 * math.pi)

    def kbar1() -> float:
        return (energy_value / beta + h0**2 * m0 / 2.0) / (4.0 * math.pi)

    def kbar2() -> float:
        return -energy_value / (4.0 * math.pi * gamma)

    if genus is None:
        value = max(kbar0(), kbar1(), kbar2())
    elif genus == 0:
        value = kbar0()
    elif genus == 1:
        value = kbar1()
    elif genus >= 2:
        value = kbar2()
    else:
        raise DomainError(f"genus must be >= 0, got {genus}")
    return max(1, math.ceil(value))


def generic_energy(mesh: MeshVarifold, curv: CurvatureField, integrand) -> float:
    """Curvature functional (tp + tm) * sum_v a_v * f(x_v, nu_v, H_v, K_v)
    for a per-vertex integrand callback f."""
    values = np.empty(mesh.vertex_count)
    for i in range(mesh.vertex_count):
        values[i] = integrand(mesh.vertices[i], curv.normal[i], curv.h[i], curv.k[i])
        if not np.isfinite(values[i]):
            raise DomainError(f"integrand returned non-finite value at vertex {i}")
    return mesh.multiplicity * float(np.sum(curv.area * values))
