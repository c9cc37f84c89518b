"""Associate evaluation targets with QBX expansion centers.

Targets inside the near region (within h_k/4 of some panel) must be
evaluated through a QBX expansion; other targets may use plain quadrature.
Each target picks the closest center whose expansion disk (relaxed by a
small tolerance) contains it, optionally restricted to centers on one side
of the curve.  Candidate centers and panels are discovered through area
queries so the whole pass runs in near-linear time; a brute-force scan over
all centers gives the same verdicts.
"""

from dataclasses import dataclass

import numpy as np

from .geometry import panel_distance
from .quadtree import area_query, build_tree

VERDICT_DIRECT = 0
VERDICT_QBX = 1
VERDICT_FAILED = 2

_SQRT2 = np.sqrt(2.0)


@dataclass
class TargetAssociation:
    """Per-target verdicts: 0 direct quadrature, 1 QBX, 2 failed."""

    verdict: np.ndarray
    center: np.ndarray  # index into Discretization.centers() order, or -1
    needs_qbx: np.ndarray
    side: str

    @property
    def ok(self):
        return not np.any(self.verdict == VERDICT_FAILED)

    @property
    def failed_targets(self):
        return np.nonzero(self.verdict == VERDICT_FAILED)[0]


def gamma_near_test(d, t):
    """True iff t lies within h_k/4 of some panel k (closest-point distance)."""
    t = np.asarray(t, dtype=float)
    for k, p in enumerate(d.panels):
        reach = 0.25 * p.h
        if np.linalg.norm(t - p.center_of_mass) > reach + _SQRT2 * p.bounding_radius:
            continue
        if panel_distance(d, k, t) <= reach:
            return True
    return False


def _eligible_side(side, center_sides):
    if side == "any":
        return np.ones(len(center_sides), dtype=bool)
    if side == "exterior":
        return center_sides == 1
    if side == "interior":
        return center_sides == -1
    raise ValueError(f"side must be 'any', 'exterior' or 'interior', not {side!r}")


def associate_targets(d, targets, side="any", eps_assoc=1e-6, eps_assoc_gap=0.5, n_max=30):
    """Classify each target as direct, QBX (with chosen center), or failed.

    The primary eligibility radius is (h/2)(1 + eps_assoc).  Near-region
    targets falling in the gaps between expansion disks retry with the
    relaxed radius (h/2)(1 + eps_assoc_gap) before failing.
    """
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    locs, radii, owner_panel, _, center_sides = d.centers()
    allowed = _eligible_side(side, center_sides)
    cm = np.array([p.center_of_mass for p in d.panels])
    br = np.array([p.bounding_radius for p in d.panels])
    hh = d.panel_h

    tree = build_tree(
        {"targets": targets, "centers": locs, "panel_cm": cm}, n_max, "targets"
    )
    leaf_of_target = np.full(len(targets), -1)
    for b in tree.leaves():
        leaf_of_target[b.indices.get("targets", np.empty(0, int))] = b.id

    # mark leaves reachable from each center's (relaxed) expansion disk and
    # from each panel's near tube, so every target sees all its candidates
    cand_centers = {}
    reach = radii * (1.0 + eps_assoc_gap)
    for ci in range(len(locs)):
        if not allowed[ci]:
            continue
        for bid in area_query(tree, locs[ci], reach[ci]):
            cand_centers.setdefault(bid, []).append(ci)
    cand_panels = {}
    for k in range(d.n_panels):
        for bid in area_query(tree, cm[k], br[k] + 0.25 * hh[k]):
            cand_panels.setdefault(bid, []).append(k)

    verdict = np.full(len(targets), VERDICT_DIRECT)
    center = np.full(len(targets), -1)
    needs = np.zeros(len(targets), dtype=bool)
    for ti, t in enumerate(targets):
        bid = leaf_of_target[ti]
        for k in cand_panels.get(bid, ()):
            lim = 0.25 * hh[k]
            if np.linalg.norm(t - cm[k]) <= lim + _SQRT2 * br[k] and panel_distance(
                d, k, t
            ) <= lim:
                needs[ti] = True
                break
        cands = cand_centers.get(bid)
        best = -1
        if cands:
            cands = np.asarray(cands)
            dist = np.linalg.norm(locs[cands] - t, axis=1)
            ok = dist <= radii[cands] * (1.0 + eps_assoc)
            if not np.any(ok) and needs[ti]:
                ok = dist <= radii[cands] * (1.0 + eps_assoc_gap)
            if np.any(ok):
                dist = np.where(ok, dist, np.inf)
                best = int(cands[np.argmin(dist)])
        if best >= 0:
            verdict[ti] = VERDICT_QBX
            center[ti] = best
        elif needs[ti]:
            verdict[ti] = VERDICT_FAILED
    return TargetAssociation(verdict=verdict, center=center, needs_qbx=needs, side=side)
