"""Fast multipole evaluation with embedded QBX local expansions.

One tree traversal produces (a) potentials at targets that plain quadrature
handles, and (b) local (J) expansion coefficients, orders -p..p, at every
QBX center.  Box expansions carry extra terms beyond the point-FMM order
(p_qbx = p_fmm + p_add per level) so that translating them onto centers
keeps the first p coefficients accurate.  Eight stages: upward multipole
pass, direct/U interactions, multipole-to-local for well-separated boxes,
far multipole evaluation (W), source-to-local for oversized neighbors (X),
downward local pass, and leaf evaluation; centers receive contributions from
the same three mechanisms (direct formation, W conversion, local shift) so
every source-center pair is covered exactly once.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import hankel1 as _sp_hankel1, j0 as _sp_j0

from .expansions import (
    Expansion,
    SourceBatch,
    direct_potential,
    eval_expansion,
    l2l_matrix,
    m2l_matrix,
    m2m_matrix,
    p2l,
    p2m,
    p2qbx,
    l2qbx,
    m2qbx,
)
from .quadtree import build_tree, interaction_lists

_PADD_TABLE = {2: 5, 4: 5, 6: 15, 8: 20}
_PFMM_CAP = 400
_PFMM_FLOOR = 4


def lookup_padd(p):
    """Extra box-expansion terms needed to feed order-p QBX expansions."""
    if p < 1:
        raise ValueError("p must be >= 1")
    if p > 8:
        return 20 + (p - 8)
    for pt in (2, 4, 6, 8):
        if p <= pt:
            return _PADD_TABLE[pt]


def _bessel_j_abs_ratios(x, nmax):
    """|J_{n+1}(x) / J_n(x)| for n = 0..nmax-1, by downward recurrence."""
    start = nmax + max(30, int(np.ceil(1.5 * x)) + 30)
    ratios = np.empty(start + 1)
    a, b = 1e-30, 0.0  # (J~_{k}, J~_{k+1}) unnormalized
    for k in range(start, 0, -1):
        c = (2.0 * k / x) * a - b
        ratios[k - 1] = abs(a / c) if c != 0.0 else np.inf
        b, a = a, c
        if abs(a) > 1e250:
            a *= 1e-250
            b *= 1e-250
    return ratios[:nmax]


def _hankel1_abs_ratios(x, nmax):
    """|H_{n+1}(x) / H_n(x)| for n = 0..nmax-1, by upward recurrence."""
    a, b = _sp_hankel1(0, x), _sp_hankel1(1, x)
    ratios = np.empty(nmax)
    ratios[0] = abs(b) / abs(a)
    for n in range(1, nmax):
        c = (2.0 * n / x) * b - a
        ratios[n] = abs(c) / abs(b)
        m = abs(c)
        a, b = b / m, c / m
    return ratios


def estimate_pfmm(omega, box_radius, eps, cap=_PFMM_CAP):
    """Smallest truncation order for outgoing/local box expansions.

    Worst case over the admissible geometry: the translation kernel factor
    |H_n(3 omega R) J_n(sqrt(2) omega R)| must fall below eps for all
    orders beyond the returned p.  Magnitudes are tracked in log space so
    deep-tree (tiny omega R) levels do not overflow.
    """
    if box_radius <= 0 or eps <= 0:
        raise ValueError("box radius and eps must be positive")
    x_h = 3.0 * omega * box_radius
    x_j = np.sqrt(2.0) * omega * box_radius
    t0 = abs(_sp_hankel1(0, x_h)) * abs(_sp_j0(x_j))
    logs = np.empty(cap + 2)
    logs[0] = np.log(t0)
    rj = _bessel_j_abs_ratios(x_j, cap + 1)
    rh = _hankel1_abs_ratios(x_h, cap + 1)
    logs[1:] = logs[0] + np.cumsum(np.log(rj) + np.log(rh))
    # tail_max[p] = max over n > p of log t_n
    tail = np.maximum.accumulate(logs[::-1])[::-1]
    ok = np.nonzero(tail[1:] <= np.log(eps))[0]
    if len(ok) == 0:
        raise RuntimeError("required expansion order exceeds cap; frequency too high")
    return int(ok[0])


@dataclass
class FmmPlan:
    """Tree, interaction lists, and per-level truncation orders."""

    tree: object
    lists: object
    sources: np.ndarray
    targets: np.ndarray
    centers: np.ndarray
    omega: float
    eps: float
    p: int
    p_add: int
    p_fmm: np.ndarray   # per level
    p_qbx: np.ndarray   # per level
    scales: np.ndarray  # per level
    matrix_cache: object = None  # translation matrices, reused across runs


def build_plan(sources, targets, centers, omega, eps, p, n_max=30, depth_cap=40,
               p_add=None):
    """Prepare the spatial data structures and truncation orders.

    targets here are only those evaluated by plain quadrature; near-boundary
    targets are served by the QBX centers instead.
    """
    sources = np.atleast_2d(np.asarray(sources, dtype=float))
    targets = np.atleast_2d(np.asarray(targets, dtype=float)) if len(targets) else np.empty((0, 2))
    centers = np.atleast_2d(np.asarray(centers, dtype=float)) if len(centers) else np.empty((0, 2))
    pts = {"sources": sources, "targets": targets, "centers": centers}
    tree = build_tree(
        {k: v for k, v in pts.items() if len(v)},
        n_max,
        tuple(k for k in ("sources", "targets") if len(pts[k])),
        level_restrict=True,
        depth_cap=depth_cap,
    )
    lists = interaction_lists(tree)
    if p_add is None:
        p_add = lookup_padd(p)
    n_lev = tree.n_levels
    radii = tree.root.radius * 0.5 ** np.arange(n_lev)
    # each translation is accurate to its truncation tolerance, but a large
    # tree accumulates thousands of them; pick per-level orders against a
    # tightened tolerance so the summed error stays near the requested eps
    eps_trunc = max(eps * 1e-3, 1e-16)
    p_fmm = np.array(
        [max(_PFMM_FLOOR, estimate_pfmm(omega, r, eps_trunc)) for r in radii]
    )
    p_qbx = p_fmm + p_add
    scales = np.minimum(1.0, omega * radii)
    return FmmPlan(
        tree=tree,
        lists=lists,
        sources=sources,
        targets=targets,
        centers=centers,
        omega=omega,
        eps=eps,
        p=p,
        p_add=p_add,
        p_fmm=p_fmm,
        p_qbx=p_qbx,
        scales=scales,
    )


@dataclass
class FmmOutput:
    """Potentials at plain-quadrature targets plus center coefficient table."""

    target_potentials: np.ndarray  # (n_targets,) complex
    center_coeffs: np.ndarray      # (n_centers, 2p+1) complex
    p: int
    omega: float
    audit: dict = field(default_factory=dict)


def _idx(box, cat):
    return box.indices.get(cat, np.empty(0, dtype=int))


class _MatrixCache:
    """Per-level translation matrices keyed by quantized box offsets."""

    def __init__(self, plan):
        self.plan = plan
        self.cache = {}

    def get(self, kind, level_in, level_out, delta):
        side = 2.0 * self.plan.tree.root.radius * 0.5 ** max(level_in, level_out)
        key = (
            kind,
            level_in,
            level_out,
            int(round(2.0 * delta[0] / side)),
            int(round(2.0 * delta[1] / side)),
        )
        mat = self.cache.get(key)
        if mat is None:
            plan = self.plan
            fn = {"m2m": m2m_matrix, "m2l": m2l_matrix, "l2l": l2l_matrix}[kind]
            mat = fn(
                plan.omega,
                delta,
                plan.p_qbx[level_out],
                plan.p_qbx[level_in],
                plan.scales[level_in],
                plan.scales[level_out],
            )
            self.cache[key] = mat
        return mat


def run_fmm(plan, batch):
    """Execute the eight-stage traversal for one source density batch."""
    if batch.points.shape != plan.sources.shape or not np.array_equal(
        batch.points, plan.sources
    ):
        raise ValueError("source batch does not match the plan's source points")
    tree, lists = plan.tree, plan.lists
    omega, p = plan.omega, plan.p
    boxes = tree.boxes
    if plan.matrix_cache is None:
        plan.matrix_cache = _MatrixCache(plan)
    mats = plan.matrix_cache
    audit = {"U": 0, "V": 0, "W_eval": 0, "W_center": 0, "X": 0, "far_eval": 0, "far_center": 0}

    def sub_batch(idx):
        return SourceBatch(
            points=batch.points[idx],
            weights=batch.weights[idx],
            slp_density=None if batch.slp_density is None else batch.slp_density[idx],
            dlp_density=None if batch.dlp_density is None else batch.dlp_density[idx],
            normals=None if batch.normals is None else batch.normals[idx],
        )

    # stage 2: multipole expansions, leaves then upward
    phi = [None] * len(boxes)
    order = sorted(range(len(boxes)), key=lambda i: -boxes[i].level)
    for bid in order:
        b = boxes[bid]
        si = _idx(b, "sources")
        if len(si) == 0:
            continue
        if b.is_leaf:
            phi[bid] = p2m(
                sub_batch(si), b.center, plan.p_qbx[b.level], omega, plan.scales[b.level]
            )
        else:
            acc = np.zeros(2 * plan.p_qbx[b.level] + 1, dtype=complex)
            for cid in b.children:
                if phi[cid] is None:
                    continue
                m = mats.get("m2m", boxes[cid].level, b.level, boxes[cid].center - b.center)
                acc += m @ phi[cid].coeffs
            phi[bid] = Expansion(
                "outgoing", b.center, plan.p_qbx[b.level], acc, omega, plan.scales[b.level]
            )

    pot = np.zeros(len(plan.targets), dtype=complex)
    coeffs = np.zeros((len(plan.centers), 2 * p + 1), dtype=complex)

    # stage 3: direct interactions with the U list
    for b in tree.leaves():
        ti = _idx(b, "targets")
        ci = _idx(b, "centers")
        if len(ti) == 0 and len(ci) == 0:
            continue
        usrc = np.concatenate([_idx(boxes[u], "sources") for u in lists.U[b.id]]) if lists.U[
            b.id
        ] else np.empty(0, dtype=int)
        if len(usrc) == 0:
            continue
        ub = sub_batch(usrc)
        if len(ti):
            pot[ti] += direct_potential(ub, plan.targets[ti], omega)
            audit["U"] += len(usrc) * len(ti)
        for c in ci:
            coeffs[c] += p2qbx(ub, plan.centers[c], p, omega).coeffs
            audit["U"] += len(usrc)

    # stages 4 and 6: local expansions from well-separated boxes (V) and
    # from oversized leaf neighbors (X); both accumulate into one local
    # expansion per box that the downward pass will push to the leaves
    local = [None] * len(boxes)

    def local_acc(bid):
        if local[bid] is None:
            b = boxes[bid]
            local[bid] = Expansion(
                "local",
                b.center,
                plan.p_qbx[b.level],
                np.zeros(2 * plan.p_qbx[b.level] + 1, dtype=complex),
                omega,
                plan.scales[b.level],
            )
        return local[bid]

    for bid, b in enumerate(boxes):
        for vid in lists.V[bid]:
            if phi[vid] is None:
                continue
            m = mats.get("m2l", boxes[vid].level, b.level, boxes[vid].center - b.center)
            local_acc(bid).coeffs += m @ phi[vid].coeffs
            audit["V"] += 1
        for xid in lists.X[bid]:
            si = _idx(boxes[xid], "sources")
            if len(si) == 0:
                continue
            local_acc(bid).coeffs += p2l(
                sub_batch(si), b.center, plan.p_qbx[b.level], omega, plan.scales[b.level]
            ).coeffs
            audit["X"] += len(si)

    # stage 5: evaluate multipoles of the W list at leaf particles
    for b in tree.leaves():
        if not lists.W[b.id]:
            continue
        ti = _idx(b, "targets")
        ci = _idx(b, "centers")
        if len(ti) == 0 and len(ci) == 0:
            continue
        for wid in lists.W[b.id]:
            if phi[wid] is None:
                continue
            if len(ti):
                pot[ti] += eval_expansion(phi[wid], plan.targets[ti])
                audit["W_eval"] += len(ti)
            for c in ci:
                coeffs[c] += m2qbx(phi[wid], plan.centers[c], p).coeffs
                audit["W_center"] += 1

    # stage 7: downward pass, shifting parent locals onto children
    for bid in sorted(range(len(boxes)), key=lambda i: boxes[i].level):
        if local[bid] is None:
            continue
        b = boxes[bid]
        for cid in b.children:
            m = mats.get("l2l", b.level, boxes[cid].level, b.center - boxes[cid].center)
            local_acc(cid).coeffs += m @ local[bid].coeffs

    # stage 8: evaluate leaf locals at targets, shift onto centers
    for b in tree.leaves():
        if local[b.id] is None:
            continue
        ti = _idx(b, "targets")
        ci = _idx(b, "centers")
        if len(ti):
            pot[ti] += eval_expansion(local[b.id], plan.targets[ti])
            audit["far_eval"] += len(ti)
        for c in ci:
            coeffs[c] += l2qbx(local[b.id], plan.centers[c], p).coeffs
            audit["far_center"] += 1

    return FmmOutput(
        target_potentials=pot, center_coeffs=coeffs, p=p, omega=omega, audit=audit
    )


def eval_at_targets(output, assoc, targets, centers):
    """Combine plain-quadrature potentials and QBX expansions per verdict."""
    from .association import VERDICT_DIRECT, VERDICT_FAILED, VERDICT_QBX

    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    if np.any(assoc.verdict == VERDICT_FAILED):
        raise ValueError(
            f"association failed for targets {list(assoc.failed_targets)}"
        )
    res = np.empty(len(targets), dtype=complex)
    direct = np.nonzero(assoc.verdict == VERDICT_DIRECT)[0]
    if len(direct) != len(output.target_potentials):
        raise ValueError("plan targets do not match the association's direct set")
    res[direct] = output.target_potentials
    qbx = np.nonzero(assoc.verdict == VERDICT_QBX)[0]
    for ci in np.unique(assoc.center[qbx]):
        sel = qbx[assoc.center[qbx] == ci]
        exp = Expansion(
            "local", centers[ci], output.p, output.center_coeffs[ci], output.omega, 1.0
        )
        res[sel] = eval_expansion(exp, targets[sel])
    return res
