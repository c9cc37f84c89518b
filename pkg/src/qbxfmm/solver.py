"""Exterior Dirichlet (sound-soft) scattering solver.

The scattered field is represented as u_sc = D[sigma] + i*omega*S[sigma];
imposing u_sc = -u_inc on the boundary and taking the exterior one-sided
limit yields a second-kind integral equation for sigma, which is applied
matrix-free (each application is one fast evaluation at the density nodes)
and solved with restarted GMRES.  With outward normals the exterior
one-sided double layer already contains the +sigma/2 jump, so the operator
value is exactly sigma/2 + D*sigma + i*omega*S*sigma.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .association import VERDICT_DIRECT, associate_targets
from .geometry import resolution_metric, split_all
from .layerpot import (
    KIND_COMBINED,
    LayerPotentialJob,
    _source_batch,
    evaluate,
    point_source_field,
)
from .qbxfmm import build_plan, eval_at_targets, run_fmm


@dataclass
class PlaneWave:
    """Incident plane wave exp(i*omega*x.direction); direction is unit-norm."""

    direction: np.ndarray

    def __post_init__(self):
        self.direction = np.asarray(self.direction, dtype=float)
        if not np.isclose(np.linalg.norm(self.direction), 1.0):
            raise ValueError("plane-wave direction must be unit-norm")

    def field(self, points, omega):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return np.exp(1j * omega * points @ self.direction)


@dataclass
class PointSources:
    """Incident field radiated by point sources (inside the obstacles)."""

    points: np.ndarray
    charges: np.ndarray

    def field(self, points, omega):
        return point_source_field(points, self.points, self.charges, omega)


@dataclass
class ScatterProblem:
    discretization: object          # must already satisfy the panel conditions
    omega: float
    incident: object                # PlaneWave or PointSources
    eps: float = 5e-7
    p: int = 4
    tol: float = 1e-5
    restart: int = 200
    max_iters: int = 1000


@dataclass
class ScatterSolution:
    sigma: np.ndarray               # density on the (subdivided) density grid
    discretization: object          # the grid sigma lives on
    omega: float
    eps: float
    p: int
    iterations: int
    residuals: np.ndarray
    eps_sigma: float                # resolution of sigma on its grid


class CombinedFieldOperator:
    """Matrix-free application of sigma/2 + D*sigma + i*omega*S*sigma.

    The target association, tree, interaction lists, and translation
    matrices are built once and shared by every application.
    """

    def __init__(self, d, omega, eps, p):
        self.d = d
        self.omega = omega
        self.eps = eps
        self.p = p
        self.nodes = d.density_nodes
        self.assoc = associate_targets(d, self.nodes, side="exterior")
        if not self.assoc.ok:
            raise ValueError(
                f"association failed for boundary nodes {list(self.assoc.failed_targets)}"
            )
        self.centers = d.centers()[0]
        direct = self.assoc.verdict == VERDICT_DIRECT
        self.plan = build_plan(
            d.source_nodes, self.nodes[direct], self.centers, omega, eps, p
        )

    def apply(self, sigma):
        batch = _source_batch(self.d, KIND_COMBINED, sigma, self.omega)
        out = run_fmm(self.plan, batch)
        return eval_at_targets(out, self.assoc, self.nodes, self.centers)


def apply_operator(d, sigma, omega, eps=5e-7, p=4):
    """One-shot combined-field operator application at the density nodes."""
    return CombinedFieldOperator(d, omega, eps, p).apply(sigma)


def solve_scatter(problem):
    """Solve the exterior Dirichlet problem for the scattering density.

    The discretization is first subdivided uniformly once so the unknown
    density is resolved beyond the geometry's own resolution requirement.
    Raises RuntimeError (with the residual history attached) if GMRES does
    not reach the requested tolerance.
    """
    d = split_all(problem.discretization)
    op = CombinedFieldOperator(d, problem.omega, problem.eps, problem.p)
    rhs = -problem.incident.field(d.density_nodes, problem.omega)
    n = d.n_density
    mat = LinearOperator((n, n), matvec=op.apply, dtype=complex)
    residuals = []
    x, info = gmres(
        mat,
        rhs,
        rtol=problem.tol,
        atol=0.0,
        restart=problem.restart,
        maxiter=problem.max_iters,
        callback=residuals.append,
        callback_type="pr_norm",
    )
    residuals = np.asarray(residuals, dtype=float)
    if info != 0:
        err = RuntimeError(
            f"GMRES did not converge to {problem.tol:g} within "
            f"{problem.max_iters} iterations "
            f"(last residual {residuals[-1] if len(residuals) else np.nan:.3e})"
        )
        err.residuals = residuals
        raise err
    return ScatterSolution(
        sigma=x,
        discretization=d,
        omega=problem.omega,
        eps=problem.eps,
        p=problem.p,
        iterations=len(residuals),
        residuals=residuals,
        eps_sigma=resolution_metric(d, x),
    )


def scattered_field(solution, targets, side="exterior", on_failure="raise"):
    """Evaluate the scattered field D[sigma] + i*omega*S[sigma] anywhere."""
    job = LayerPotentialJob(
        KIND_COMBINED,
        solution.discretization,
        solution.sigma,
        targets,
        side=side,
        eps=solution.eps,
        p=solution.p,
        omega=solution.omega,
    )
    return evaluate(job, on_failure=on_failure)
