"""Panel refinement driven by geometric accuracy conditions.

Given a discretization, a wavenumber, and an expansion order, panels are
bisected until four conditions hold: source quadrature resolves the kernel
seen from every expansion center (its own and foreign ones), expansion disks
stay clear of non-neighboring geometry, and panels stay short relative to
the wavelength.  The oversampled ("source") node count is looked up from a
calibrated table indexed by density order q and accuracy target.
"""

from dataclasses import dataclass

import numpy as np

from .geometry import panel_distance, split_panels
from .quadtree import area_query, build_tree

# source-node counts qhat, rows indexed by density order q, columns by the
# accuracy bucket the requested eps falls into: 1e-3, 1e-6, 1e-9, 1e-12
_EPS_BUCKETS = (1e-3, 1e-6, 1e-9, 1e-12)
_QHAT_TABLE = {
    2: (8, 16, 24, 32),
    4: (12, 24, 32, 40),
    8: (16, 32, 40, 48),
    16: (32, 48, 64, 64),
}


def lookup_qhat(q, eps):
    """Calibrated oversampled quadrature size for density order q at accuracy eps."""
    if q not in _QHAT_TABLE:
        raise ValueError("q must be one of 2, 4, 8, 16")
    if not (0.0 < eps < 1.0):
        raise ValueError("eps must lie in (0, 1)")
    row = _QHAT_TABLE[q]
    for bucket, qhat in zip(_EPS_BUCKETS, row):
        if eps >= bucket:
            return qhat
    return row[-1]


@dataclass
class ConditionReport:
    """Outcome of a conformance check: flags per condition, rounds taken."""

    flagged: dict
    iterations: int

    @property
    def all_pass(self):
        return all(len(v) == 0 for v in self.flagged.values())


def refinement_tree(d, n_max=10):
    """Quad-tree over QBX centers and panel centers of mass."""
    locs = d.centers()[0]
    cm = np.array([p.center_of_mass for p in d.panels])
    return build_tree({"centers": locs, "panel_cm": cm}, n_max, "centers")


def _panels_by_leaf(d, tree):
    """S(b): ids of panels whose bounding square overlaps leaf box b."""
    s = {}
    for k, p in enumerate(d.panels):
        for bid in area_query(tree, p.center_of_mass, p.bounding_radius):
            s.setdefault(bid, []).append(k)
    return s


_SQRT2 = np.sqrt(2.0)


def _possibly_within(d, k, point, r):
    """Cheap exact prefilter: can d(point, panel k) <= r at all?

    The panel lies in the l-inf square of radius r_k about its center of
    mass, hence within Euclidean distance sqrt(2) r_k of it.
    """
    p = d.panels[k]
    return np.linalg.norm(point - p.center_of_mass) <= r + _SQRT2 * p.bounding_radius


def check_condition1(d, tree=None):
    """Panels whose expansion disks are disturbed by foreign geometry.

    Panel n is flagged when some center c owned by n comes within h_n/2 of
    another panel.  Candidate panels are discovered with an area query of
    radius h_n/2 around each center, matched against panel bounding squares.
    """
    if tree is None:
        tree = refinement_tree(d)
    s = _panels_by_leaf(d, tree)
    locs, radii, owner, _, _ = d.centers()
    flagged = set()
    for c, r, n in zip(locs, radii, owner):
        if n in flagged:
            continue
        cand = set()
        for bid in area_query(tree, c, r):
            cand.update(s.get(bid, ()))
        cand.discard(n)
        for m in cand:
            if _possibly_within(d, m, c, r) and panel_distance(d, m, c) <= r:
                flagged.add(int(n))
                break
    return sorted(flagged)


def check_condition2(d):
    """Adjacent panels out of the 2:1 arclength ratio; the longer is flagged."""
    h = d.panel_h
    flagged = set()
    for k in range(d.n_panels):
        for m in d.neighbors(k):
            if h[k] > 2.0 * h[m] * (1 + 1e-9):
                flagged.add(k)
    return sorted(flagged)


def check_condition3(d, tree=None):
    """Source panels too coarse as seen from foreign expansion centers.

    Panel l is flagged when a center owned by a non-adjacent panel k != l
    lies in the tube {x : d(x, Gamma_l) <= h_l/4}.  Candidate centers come
    from an area query over the tube's bounding square.
    """
    if tree is None:
        tree = refinement_tree(d)
    locs, _, owner, _, _ = d.centers()
    flagged = []
    for l, p in enumerate(d.panels):
        excluded = {l, *d.neighbors(l)}
        rq = p.bounding_radius + 0.25 * p.h
        hit = False
        for bid in area_query(tree, p.center_of_mass, rq):
            for ci in tree.boxes[bid].indices.get("centers", ()):
                k = int(owner[ci])
                if k in excluded or not _possibly_within(d, l, locs[ci], 0.25 * p.h):
                    continue
                if panel_distance(d, l, locs[ci]) <= 0.25 * p.h:
                    hit = True
                    break
            if hit:
                break
        if hit:
            flagged.append(l)
    return flagged


def check_condition4(d, omega):
    """Panels longer than the wavelength bound omega * h <= 5."""
    if omega <= 0:
        raise ValueError("omega must be positive")
    return [k for k in range(d.n_panels) if omega * d.panel_h[k] > 5.0]


def refine_to_conditions(d, omega, max_iters=50):
    """Split flagged panels and recheck until all four conditions pass."""
    for it in range(max_iters + 1):
        flags = {"condition4": check_condition4(d, omega), "condition2": check_condition2(d)}
        tree = refinement_tree(d)
        flags["condition1"] = check_condition1(d, tree)
        flags["condition3"] = check_condition3(d, tree)
        report = ConditionReport(flagged=flags, iterations=it)
        todo = sorted({k for v in flags.values() for k in v})
        if not todo:
            return d, report
        if it == max_iters:
            raise RuntimeError(f"refinement did not converge; surviving flags: {flags}")
        d = split_panels(d, todo)
