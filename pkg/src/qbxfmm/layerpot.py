"""User-facing evaluation of Helmholtz layer potentials at arbitrary targets.

Given a conforming discretization and a density on the density grid, this
module oversamples the density to the source grid, associates each target
with an expansion center (or marks it far enough for plain quadrature),
runs the fast evaluator, and combines the results.  On-surface values are
the one-sided limits from the requested side: the expansion about an
off-surface center converges to the limit, so the double layer's +-sigma/2
jump is captured without an explicit jump term.

Also provided: the field of free-space point sources and its normal
derivative (for manufactured solutions), a residual check of the
representation u = D[u] - S[du/dn] for fields radiating from inside the
obstacles, accuracy/order presets, and a CSV grid writer.
"""

from collections import namedtuple
from dataclasses import dataclass

import numpy as np
from scipy.special import hankel1

from .association import VERDICT_DIRECT, VERDICT_FAILED, VERDICT_QBX, associate_targets
from .expansions import SourceBatch
from .qbxfmm import build_plan, eval_at_targets, run_fmm

KIND_SLP = "slp"
KIND_DLP = "dlp"
KIND_COMBINED = "combined"  # D + i*omega*S

Preset = namedtuple("Preset", ["eps", "q", "p"])

#: Accuracy profiles: requested tolerance with matching panel and expansion
#: orders, from coarse (~1e-4) to near machine precision.
PRESETS = {
    "e4": Preset(5e-4, 2, 2),
    "e7": Preset(5e-7, 4, 4),
    "e10": Preset(5e-10, 8, 6),
    "e13": Preset(5e-13, 16, 8),
}

_FLAG_NAMES = {VERDICT_DIRECT: "direct", VERDICT_QBX: "qbx", VERDICT_FAILED: "failed"}


@dataclass
class LayerPotentialJob:
    """One evaluation request: which operator, on what data, where.

    kind is one of "slp", "dlp", "combined" (D + i*omega*S).  density lives
    on the density grid (length n_density).  side selects the one-sided
    limit for targets on or near the boundary ("exterior", "interior", or
    "any" for nearest-center association).
    """

    kind: str
    discretization: object
    density: np.ndarray
    targets: np.ndarray
    side: str = "exterior"
    eps: float = 5e-7
    p: int = 4
    omega: float = 1.0


def _source_batch(d, kind, density, omega):
    density = np.asarray(density, dtype=complex)
    if density.shape != (d.n_density,):
        raise ValueError(
            f"density must have length {d.n_density}, got shape {density.shape}"
        )
    dens_hat = d.oversample(density)
    slp = dlp = None
    if kind == KIND_SLP:
        slp = dens_hat
    elif kind == KIND_DLP:
        dlp = dens_hat
    elif kind == KIND_COMBINED:
        slp = 1j * omega * dens_hat
        dlp = dens_hat
    else:
        raise ValueError(f"unknown layer-potential kind {kind!r}")
    return SourceBatch(
        points=d.source_nodes,
        weights=d.source_weights,
        slp_density=slp,
        dlp_density=dlp,
        normals=d.source_normals,
    )


def evaluate(job, on_failure="raise", return_flags=False):
    """Evaluate the requested layer potential at every target.

    on_failure: "raise" aborts if any near-boundary target cannot be
    associated with a center; "nan" records NaN for such targets instead.
    With return_flags the per-target verdicts ("direct"/"qbx"/"failed")
    are returned alongside the values.
    """
    if on_failure not in ("raise", "nan"):
        raise ValueError("on_failure must be 'raise' or 'nan'")
    d = job.discretization
    targets = np.atleast_2d(np.asarray(job.targets, dtype=float))
    batch = _source_batch(d, job.kind, job.density, job.omega)
    assoc = associate_targets(d, targets, side=job.side)
    if not assoc.ok and on_failure == "raise":
        raise ValueError(
            f"association failed for targets {list(assoc.failed_targets)}"
        )
    center_locs = d.centers()[0]
    direct = assoc.verdict == VERDICT_DIRECT
    plan = build_plan(
        d.source_nodes, targets[direct], center_locs, job.omega, job.eps, job.p
    )
    out = run_fmm(plan, batch)

    values = np.full(len(targets), np.nan + 1j * np.nan)
    live = assoc.verdict != VERDICT_FAILED
    if np.any(live):
        sub = type(assoc)(
            verdict=assoc.verdict[live],
            center=assoc.center[live],
            needs_qbx=assoc.needs_qbx[live],
            side=assoc.side,
        )
        values[live] = eval_at_targets(out, sub, targets[live], center_locs)
    if return_flags:
        flags = [_FLAG_NAMES[v] for v in assoc.verdict]
        return values, flags
    return values


# ------------------------------------------------------- point-source fields


def point_source_field(points, source_points, charges, omega):
    """u(x) = sum_j q_j H_0^(1)(omega |x - x_j|)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    source_points = np.atleast_2d(np.asarray(source_points, dtype=float))
    charges = np.atleast_1d(np.asarray(charges, dtype=complex))
    r = np.linalg.norm(points[:, None, :] - source_points[None, :, :], axis=2)
    return hankel1(0, omega * r) @ charges


def point_source_normal_derivative(points, normals, source_points, charges, omega):
    """Directional derivative of point_source_field along unit normals."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    normals = np.atleast_2d(np.asarray(normals, dtype=float))
    source_points = np.atleast_2d(np.asarray(source_points, dtype=float))
    charges = np.atleast_1d(np.asarray(charges, dtype=complex))
    diff = points[:, None, :] - source_points[None, :, :]
    r = np.linalg.norm(diff, axis=2)
    rdotn = np.einsum("tsk,tk->ts", diff, normals) / r
    return (-omega * hankel1(1, omega * r) * rdotn) @ charges


def greens_identity_errors(
    d,
    omega,
    source_points,
    charges,
    eps,
    p,
    targets_on_boundary=None,
    targets_in_volume=None,
    p_add=None,
    return_fields=False,
):
    """Weighted relative l2 residual of u = D[u] - S[du/dn] for a field
    radiating from point sources placed inside the obstacles.

    Returns (boundary_error, volume_error).  Boundary targets default to
    the density nodes, weighted by their quadrature weights; explicitly
    given boundary targets are weighted uniformly.  volume_error is None
    when no volume targets are given.  Zero charges give (0, 0) exactly.

    p_add overrides the tabulated extra translation order (calibration
    experiments).  With return_fields the computed and reference fields at
    all targets are returned as a third element (values, reference, flags).
    """
    charges = np.atleast_1d(np.asarray(charges, dtype=complex))
    if targets_on_boundary is None:
        tb = d.density_nodes
        wb = d.density_weights
    else:
        tb = np.atleast_2d(np.asarray(targets_on_boundary, dtype=float))
        wb = np.ones(len(tb))
    tv = (
        None
        if targets_in_volume is None
        else np.atleast_2d(np.asarray(targets_in_volume, dtype=float))
    )
    if not np.any(charges) and not return_fields:
        return 0.0, (None if tv is None else 0.0)

    nodes = d.density_nodes
    u_nodes = point_source_field(nodes, source_points, charges, omega)
    dudn_nodes = point_source_normal_derivative(
        nodes, d.density_normals, source_points, charges, omega
    )

    targets = tb if tv is None else np.vstack([tb, tv])
    # one pass: dipoles carry u, charges carry -du/dn
    batch_d = _source_batch(d, KIND_DLP, u_nodes, omega)
    batch_s = _source_batch(d, KIND_SLP, -dudn_nodes, omega)
    batch = SourceBatch(
        points=d.source_nodes,
        weights=d.source_weights,
        slp_density=batch_s.slp_density,
        dlp_density=batch_d.dlp_density,
        normals=d.source_normals,
    )
    assoc = associate_targets(d, targets, side="exterior")
    if not assoc.ok:
        raise ValueError(
            f"association failed for targets {list(assoc.failed_targets)}"
        )
    center_locs = d.centers()[0]
    direct = assoc.verdict == VERDICT_DIRECT
    plan = build_plan(
        d.source_nodes, targets[direct], center_locs, omega, eps, p, p_add=p_add
    )
    out = run_fmm(plan, batch)
    u_qbx = eval_at_targets(out, assoc, targets, center_locs)

    u_true = point_source_field(targets, source_points, charges, omega)

    def _werr(got, want, w):
        denom = np.sum(np.abs(want) ** 2 * w)
        if denom == 0.0:
            return 0.0
        return float(np.sqrt(np.sum(np.abs(got - want) ** 2 * w) / denom))

    nb = len(tb)
    err_b = _werr(u_qbx[:nb], u_true[:nb], wb)
    err_v = None if tv is None else _werr(u_qbx[nb:], u_true[nb:], 1.0)
    if return_fields:
        flags = [_FLAG_NAMES[v] for v in assoc.verdict]
        return err_b, err_v, (u_qbx, u_true, flags)
    return err_b, err_v


def write_grid_csv(stream, targets, values, flags):
    """Rows "x,y,Re u,Im u,flag" with flag in {direct,qbx,failed}."""
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    stream.write("x,y,Re u,Im u,flag\n")
    for (x, y), v, f in zip(targets, values, flags):
        stream.write(f"{x:.17g},{y:.17g},{v.real:.17g},{v.imag:.17g},{f}\n")
