"""Adaptive, prunable, optionally level-restricted quad-trees.

The tree is built over "particles" of several named categories (sources,
targets, expansion centers, panel centers of mass, ...) stored as separate
index permutations over the input arrays.  Only one designated category
counts toward the leaf-capacity subdivision criterion.  Besides the usual
FMM interaction lists (U/V/W/X), the tree supports *area queries*: given a
square C_r(c) = {x : |x - c|_inf <= r}, report every leaf box intersecting
it, in time proportional to tree depth plus output size.  Queries are routed
through the *guiding box* (the smallest box containing c whose peers cover
C_r(c)) and the *peers* of a box (adjacent boxes at the same or coarser
level, none of whose children are also adjacent at admissible levels).
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Box:
    """One node of the quad-tree; `indices` cover the whole subtree."""

    id: int
    level: int
    center: np.ndarray
    radius: float
    parent: int
    children: list = field(default_factory=list)
    indices: dict = field(default_factory=dict)

    @property
    def is_leaf(self):
        return not self.children

    def count(self, category):
        idx = self.indices.get(category)
        return 0 if idx is None else len(idx)


@dataclass
class Tree:
    points: dict
    boxes: list
    n_max: int
    subdivision_category: str
    level_restricted: bool

    @property
    def root(self):
        return self.boxes[0]

    @property
    def n_levels(self):
        return 1 + max(b.level for b in self.boxes)

    def leaves(self):
        return [b for b in self.boxes if b.is_leaf]

    def dump(self, stream):
        for b in self.boxes:
            counts = " ".join(f"{k}:{len(v)}" for k, v in sorted(b.indices.items()))
            stream.write(
                f"{b.id} {b.level} {b.center[0]:.17g} {b.center[1]:.17g} "
                f"{b.radius:.17g} {b.parent} {len(b.children)} {counts}\n"
            )


_CHILD_OFFSETS = np.array([[-1, -1], [1, -1], [-1, 1], [1, 1]], dtype=float)


def _adjacent(a, b):
    """Closed squares touch or overlap (shared point counts)."""
    gap = np.max(np.abs(a.center - b.center)) - (a.radius + b.radius)
    return gap <= 1e-9 * max(a.radius, b.radius)


def build_tree(points, n_max, subdivision_category, level_restrict=False, depth_cap=40):
    """Quad-tree over categorized points; leaves hold <= n_max of one category.

    points maps category name -> (n, 2) float array.  Empty boxes are pruned,
    so every non-root box contains at least one particle of some category.
    With level_restrict, adjacent leaves differ by at most one level.
    """
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    points = {k: np.atleast_2d(np.asarray(v, dtype=float)) for k, v in points.items()}
    if isinstance(subdivision_category, str):
        subdivision_category = (subdivision_category,)
    else:
        subdivision_category = tuple(subdivision_category)
    for cat in subdivision_category:
        if cat not in points:
            raise ValueError(f"unknown subdivision category {cat!r}")
    total = sum(len(v) for v in points.values())
    if total < 1:
        raise ValueError("need at least one particle")
    r0 = max(np.max(np.abs(v)) if len(v) else 0.0 for v in points.values())
    r0 = max(r0 * (1.0 + 1e-9), 1e-30)

    root = Box(
        id=0,
        level=0,
        center=np.zeros(2),
        radius=r0,
        parent=-1,
        indices={k: np.arange(len(v)) for k, v in points.items() if len(v)},
    )
    boxes = [root]
    stack = [0]
    while stack:
        bid = stack.pop()
        b = boxes[bid]
        if sum(b.count(cat) for cat in subdivision_category) <= n_max:
            continue
        if b.level >= depth_cap:
            raise RuntimeError(
                "quad-tree depth cap exceeded (coincident points beyond leaf capacity?)"
            )
        _subdivide(points, boxes, b)
        stack.extend(b.children)

    tree = Tree(
        points=points,
        boxes=boxes,
        n_max=n_max,
        subdivision_category=subdivision_category,
        level_restricted=bool(level_restrict),
    )
    if level_restrict:
        _enforce_level_restriction(tree, depth_cap)
    return tree


def _subdivide(points, boxes, b):
    half = 0.5 * b.radius
    for off in _CHILD_OFFSETS:
        cc = b.center + half * off
        idx = {}
        for k, parent_idx in b.indices.items():
            pts = points[k][parent_idx]
            east = pts[:, 0] >= b.center[0]
            north = pts[:, 1] >= b.center[1]
            mask = (east == (off[0] > 0)) & (north == (off[1] > 0))
            if np.any(mask):
                idx[k] = parent_idx[mask]
        if idx:
            child = Box(
                id=len(boxes),
                level=b.level + 1,
                center=cc,
                radius=half,
                parent=b.id,
                indices=idx,
            )
            boxes.append(child)
            b.children.append(child.id)


def peers(tree, b):
    """Boxes adjacent to b, at b's level or coarser, with no adjacent child
    at an admissible level.  Includes b itself; at most nine entries."""
    if isinstance(b, int):
        b = tree.boxes[b]
    out = []
    stack = [tree.root]
    while stack:
        c = stack.pop()
        if c.level > b.level or not _adjacent(c, b):
            continue
        finer = [tree.boxes[i] for i in c.children if tree.boxes[i].level <= b.level]
        finer = [ch for ch in finer if _adjacent(ch, b)]
        if finer:
            stack.extend(finer)
        else:
            out.append(c.id)
    return sorted(out)


def area_query(tree, c, r, visit_counter=None):
    """Ids of all leaf boxes intersecting the square {|x - c|_inf <= r}.

    c must lie inside the root box.  visit_counter, if given, is a one-entry
    list accumulating the number of boxes examined (for cost assertions).
    """
    c = np.asarray(c, dtype=float)
    if np.max(np.abs(c)) > tree.root.radius:
        raise ValueError("query center lies outside the computational domain")
    if r <= 0:
        raise ValueError("query radius must be positive")
    visited = 0
    g = tree.root
    while True:
        visited += 1
        # stop when the box is commensurate with the query extent; queries
        # larger than the whole domain are guided by the root itself
        if 0.5 * g.radius < r:
            break
        nxt = None
        for i in g.children:
            ch = tree.boxes[i]
            if np.max(np.abs(c - ch.center)) <= ch.radius:
                nxt = ch
                break
        if nxt is None:
            break
        g = nxt

    out = []
    stack = [tree.root]
    # enumerate peers of the guiding box, then scan their leaf descendants
    peer_ids = peers(tree, g)
    visited += len(peer_ids)
    stack = [tree.boxes[i] for i in peer_ids]
    while stack:
        b = stack.pop()
        visited += 1
        overlap = np.max(np.abs(c - b.center)) <= r + b.radius * (1 + 1e-12)
        if not overlap:
            continue
        if b.is_leaf:
            out.append(b.id)
        else:
            stack.extend(tree.boxes[i] for i in b.children)
    if visit_counter is not None:
        visit_counter[0] += visited
    return sorted(out)


def area_query_batch(tree, centers, radii):
    """area_query for many (center, radius) pairs; returns a list of id lists."""
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    radii = np.atleast_1d(np.asarray(radii, dtype=float))
    return [area_query(tree, c, r) for c, r in zip(centers, radii)]


def _enforce_level_restriction(tree, depth_cap):
    points, boxes = tree.points, tree.boxes
    while True:
        marked = set()
        for u in tree.leaves():
            for pid in peers(tree, u):
                p = boxes[pid]
                if p.is_leaf and p.level <= u.level - 2:
                    marked.add(pid)
        if not marked:
            return
        for bid in sorted(marked):
            b = boxes[bid]
            if b.level >= depth_cap:
                raise RuntimeError("quad-tree depth cap exceeded during balancing")
            _subdivide(points, boxes, b)


@dataclass
class InteractionLists:
    """Per-box FMM lists, each a list of box-id lists indexed by box id."""

    colleagues: list
    U: list
    V: list
    W: list
    X: list


def _well_separated(tree, a, b):
    side = 2.0 * a.radius
    return np.max(np.abs(a.center - b.center)) >= 2.0 * side - 0.25 * side


def interaction_lists(tree):
    """Colleague/U/V/W/X lists for every box of a level-restricted tree."""
    if not tree.level_restricted:
        raise ValueError("interaction lists require a level-restricted tree")
    boxes = tree.boxes
    n = len(boxes)
    colleagues = [[] for _ in range(n)]
    U = [[] for _ in range(n)]
    V = [[] for _ in range(n)]
    W = [[] for _ in range(n)]
    X = [[] for _ in range(n)]

    order = sorted(range(n), key=lambda i: boxes[i].level)
    colleagues[0] = [0]
    for bid in order:
        b = boxes[bid]
        if b.parent < 0:
            continue
        cols = []
        for pc in colleagues[b.parent]:
            for cid in boxes[pc].children:
                c = boxes[cid]
                if _adjacent(c, b):
                    cols.append(cid)
                elif _well_separated(tree, b, c):
                    V[bid].append(cid)
        colleagues[bid] = sorted(cols)
        V[bid].sort()

    for bid in range(n):
        b = boxes[bid]
        if not b.is_leaf:
            continue
        # U: adjacent leaves at any level, self included
        ul = {p for p in peers(tree, bid) if boxes[p].is_leaf}
        for col in colleagues[bid]:
            for cid in boxes[col].children:
                c = boxes[cid]
                if c.is_leaf and _adjacent(c, b):
                    ul.add(cid)
        U[bid] = sorted(ul)
        # W: descendants of colleagues with adjacent parents, not adjacent
        stack = [cid for col in colleagues[bid] if col != bid for cid in boxes[col].children]
        wl = []
        while stack:
            cid = stack.pop()
            c = boxes[cid]
            if _adjacent(c, b):
                stack.extend(c.children)
            else:
                wl.append(cid)
        W[bid] = sorted(wl)
    for bid in range(n):
        for wid in W[bid]:
            X[wid].append(bid)
    for bid in range(n):
        X[bid].sort()
    return InteractionLists(colleagues=colleagues, U=U, V=V, W=W, X=X)
