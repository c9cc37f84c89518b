"""Boundary representation and panel discretization.

A closed curve is split into Gauss-Legendre panels parametrized by arclength.
Each panel carries a q-point density grid (where unknowns live), a qhat-point
oversampled source grid (where coefficient quadratures are computed), unit
outward normals, arclength weights, and the geometric summaries (center of
mass, bounding radius) used by the refinement and association machinery.
"""

import importlib.resources
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.polynomial import legendre as npleg

TWO_PI = 2.0 * np.pi

# number of trailing Legendre coefficients counted as "tail" in the
# resolution metric, keyed by the panel order q
N_TAIL = {2: 1, 4: 1, 8: 2, 16: 3}


class FourierCurve:
    """Closed curve x_i(t) = Re(c_{i,0}) + 2 Re(sum_{j>=1} c_{i,j} e^{2 pi i j t})."""

    def __init__(self, coeffs_x1, coeffs_x2):
        self.coeffs_x1 = np.asarray(coeffs_x1, dtype=complex)
        self.coeffs_x2 = np.asarray(coeffs_x2, dtype=complex)
        if self.coeffs_x1.ndim != 1 or self.coeffs_x2.ndim != 1:
            raise ValueError("coefficient sequences must be 1-d")
        n = max(len(self.coeffs_x1), len(self.coeffs_x2))
        self.coeffs_x1 = np.pad(self.coeffs_x1, (0, n - len(self.coeffs_x1)))
        self.coeffs_x2 = np.pad(self.coeffs_x2, (0, n - len(self.coeffs_x2)))

    def _eval(self, t, deriv):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        j = np.arange(len(self.coeffs_x1))
        ph = np.exp(2j * np.pi * np.outer(t, j))  # (n, J+1)
        fac = (2j * np.pi * j) ** deriv
        c1 = fac * self.coeffs_x1
        c2 = fac * self.coeffs_x2
        c1 = np.concatenate([[c1[0] * (0.5 if deriv == 0 else 1.0)], c1[1:]])
        c2 = np.concatenate([[c2[0] * (0.5 if deriv == 0 else 1.0)], c2[1:]])
        x1 = 2.0 * (ph @ c1).real
        x2 = 2.0 * (ph @ c2).real
        return np.column_stack([x1, x2])

    def point(self, t):
        return self._eval(t, 0)

    def d1(self, t):
        return self._eval(t, 1)

    def d2(self, t):
        return self._eval(t, 2)

    def is_closed(self):
        return True

    def transformed(self, matrix=None, shift=None):
        """Affine image of the curve (rotation/scaling matrix plus shift)."""
        a = np.eye(2) if matrix is None else np.asarray(matrix, dtype=float)
        b = np.zeros(2) if shift is None else np.asarray(shift, dtype=float)
        c1 = a[0, 0] * self.coeffs_x1 + a[0, 1] * self.coeffs_x2
        c2 = a[1, 0] * self.coeffs_x1 + a[1, 1] * self.coeffs_x2
        c1 = c1.copy()
        c2 = c2.copy()
        c1[0] += b[0]
        c2[0] += b[1]
        return FourierCurve(c1, c2)


class RadialSineCurve:
    """Star-shaped curve r(theta) = r0 + sum_j delta_j sin(j theta), theta = 2 pi t."""

    def __init__(self, r0, deltas):
        self.r0 = float(r0)
        self.deltas = np.asarray(deltas, dtype=float)

    def _r(self, th, deriv):
        j = np.arange(1, len(self.deltas) + 1)
        arg = np.outer(th, j)
        if deriv == 0:
            return self.r0 + np.sin(arg) @ self.deltas
        if deriv == 1:
            return np.cos(arg) @ (j * self.deltas)
        return -np.sin(arg) @ (j * j * self.deltas)

    def point(self, t):
        th = TWO_PI * np.atleast_1d(np.asarray(t, dtype=float))
        r = self._r(th, 0)
        return np.column_stack([r * np.cos(th), r * np.sin(th)])

    def d1(self, t):
        th = TWO_PI * np.atleast_1d(np.asarray(t, dtype=float))
        r, r1 = self._r(th, 0), self._r(th, 1)
        x1 = r1 * np.cos(th) - r * np.sin(th)
        x2 = r1 * np.sin(th) + r * np.cos(th)
        return TWO_PI * np.column_stack([x1, x2])

    def d2(self, t):
        th = TWO_PI * np.atleast_1d(np.asarray(t, dtype=float))
        r, r1, r2 = self._r(th, 0), self._r(th, 1), self._r(th, 2)
        x1 = (r2 - r) * np.cos(th) - 2 * r1 * np.sin(th)
        x2 = (r2 - r) * np.sin(th) + 2 * r1 * np.cos(th)
        return TWO_PI**2 * np.column_stack([x1, x2])

    def is_closed(self):
        return True


class ReversedCurve:
    """The same curve traversed backwards: gamma_rev(t) = gamma(1 - t)."""

    def __init__(self, curve):
        self.curve = curve

    def point(self, t):
        return self.curve.point(1.0 - np.asarray(t, dtype=float))

    def d1(self, t):
        return -self.curve.d1(1.0 - np.asarray(t, dtype=float))

    def d2(self, t):
        return self.curve.d2(1.0 - np.asarray(t, dtype=float))

    def is_closed(self):
        return True


def unit_circle():
    return FourierCurve([0.0, 0.5], [0.0, -0.5j])


def load_curve_file(path):
    """Parse 'j  Re x1  Im x1  Re x2  Im x2' lines into a FourierCurve."""
    rows = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 5:
                raise ValueError(f"malformed curve line: {line!r}")
            j = int(parts[0])
            vals = [float(p) for p in parts[1:]]
            rows[j] = (vals[0] + 1j * vals[1], vals[2] + 1j * vals[3])
    if sorted(rows) != list(range(len(rows))):
        raise ValueError("curve file must list coefficients j = 0..J contiguously")
    c1 = [rows[j][0] for j in sorted(rows)]
    c2 = [rows[j][1] for j in sorted(rows)]
    return FourierCurve(c1, c2)


def fish_curve():
    """The fish-shaped test geometry shipped with the package."""
    path = importlib.resources.files("qbxfmm.data") / "fish.txt"
    return load_curve_file(str(path))


# ----------------------------------------------------------------- quadrature

_GL_CACHE = {}


def gauss_legendre(n):
    if n not in _GL_CACHE:
        _GL_CACHE[n] = npleg.leggauss(n)
    return _GL_CACHE[n]


def legendre_coeff_matrix(q):
    """Matrix mapping samples at q Gauss nodes to q Legendre coefficients."""
    x, w = gauss_legendre(q)
    v = npleg.legvander(x, q - 1)  # (q, q)
    scal = (2 * np.arange(q) + 1) / 2.0
    return scal[:, None] * (v * w[:, None]).T


def interp_matrix(q, qhat):
    """Legendre interpolation from q Gauss nodes to qhat Gauss nodes."""
    xq, _ = gauss_legendre(q)
    xh, _ = gauss_legendre(qhat)
    vq = npleg.legvander(xq, q - 1)
    vh = npleg.legvander(xh, q - 1)
    return vh @ np.linalg.inv(vq)


# --------------------------------------------------------------------- panels

_ARC_RULE = 32


@dataclass(frozen=True)
class Panel:
    """One Gauss-Legendre boundary segment, parametrized by arclength."""

    component: int
    t0: float
    t1: float
    h: float                      # arclength
    density_t: np.ndarray         # (q,) parameter values of density nodes
    density_nodes: np.ndarray     # (q, 2)
    density_normals: np.ndarray   # (q, 2)
    density_weights: np.ndarray   # (q,)
    source_t: np.ndarray          # (qhat,)
    source_nodes: np.ndarray      # (qhat, 2)
    source_normals: np.ndarray    # (qhat, 2)
    source_weights: np.ndarray    # (qhat,)
    legendre_coeffs: np.ndarray   # (2, q) Legendre coeffs of gamma(u)
    center_of_mass: np.ndarray    # (2,)
    bounding_radius: float        # l-infinity radius about center_of_mass


def _arc_poly(curve, t0, t1):
    """Legendre coefficients of cumulative arclength s(u), u in [-1, 1]."""
    x, w = gauss_legendre(_ARC_RULE)
    t = t0 + (x + 1) * 0.5 * (t1 - t0)
    speed = np.linalg.norm(curve.d1(t), axis=1) * 0.5 * (t1 - t0)
    coeff = legendre_coeff_matrix(_ARC_RULE)
    c = npleg.legint(coeff @ speed)
    c[0] -= npleg.legval(-1.0, c)  # s(-1) = 0
    return c


def _panel_arclength(curve, t0, t1):
    return float(npleg.legval(1.0, _arc_poly(curve, t0, t1)))


def _arclength_params(curve, t0, t1, h, targets, arc=None):
    """Invert s(t) = target for each target arclength in (0, h); Newton."""
    targets = np.asarray(targets, dtype=float)
    c = _arc_poly(curve, t0, t1) if arc is None else arc
    dc = npleg.legder(c)
    u = 2.0 * targets / h - 1.0
    for _ in range(60):
        resid = npleg.legval(u, c) - targets
        step = resid / npleg.legval(u, dc)
        u = np.clip(u - step, -1.0, 1.0)
        if np.max(np.abs(resid)) < 1e-14 * max(h, 1e-30):
            break
    return t0 + (u + 1.0) * 0.5 * (t1 - t0)


def _outward_normals(curve, t):
    d1 = curve.d1(t)
    speed = np.linalg.norm(d1, axis=1)
    # counterclockwise parametrization: outward normal is (y', -x')/|gamma'|
    return np.column_stack([d1[:, 1], -d1[:, 0]]) / speed[:, None]


def _make_panel(curve, component, t0, t1, q, qhat):
    arc = _arc_poly(curve, t0, t1)
    h = float(npleg.legval(1.0, arc))
    xq, wq = gauss_legendre(q)
    xh, wh = gauss_legendre(qhat)
    td = _arclength_params(curve, t0, t1, h, (xq + 1) * 0.5 * h, arc=arc)
    ts = _arclength_params(curve, t0, t1, h, (xh + 1) * 0.5 * h, arc=arc)
    dn = curve.point(td)
    sn = curve.point(ts)
    coeff = legendre_coeff_matrix(q)
    lc = np.stack([coeff @ dn[:, 0], coeff @ dn[:, 1]])
    # bounding radius from a dense parameter sample, with a small inflation
    tdense = np.linspace(t0, t1, 65)
    pdense = curve.point(tdense)
    com = np.mean(pdense, axis=0)
    r = np.max(np.abs(pdense - com)) * (1.0 + 1e-6) + 1e-15
    return Panel(
        component=component,
        t0=t0,
        t1=t1,
        h=h,
        density_t=td,
        density_nodes=dn,
        density_normals=_outward_normals(curve, td),
        density_weights=0.5 * h * wq,
        source_t=ts,
        source_nodes=sn,
        source_normals=_outward_normals(curve, ts),
        source_weights=0.5 * h * wh,
        legendre_coeffs=lc,
        center_of_mass=com,
        bounding_radius=r,
    )


def _panel_resolved(curve, t0, t1, q, eps):
    """Spectral-tail test of gamma(u) and its first two u-derivatives."""
    arc = _arc_poly(curve, t0, t1)
    h = float(npleg.legval(1.0, arc))
    xq, _ = gauss_legendre(q)
    t = _arclength_params(curve, t0, t1, h, (xq + 1) * 0.5 * h, arc=arc)
    g1 = curve.d1(t)
    g2 = curve.d2(t)
    speed = np.linalg.norm(g1, axis=1)
    dtdu = 0.5 * h / speed
    d2tdu2 = -((0.5 * h) ** 2) * np.sum(g1 * g2, axis=1) / speed**4
    gamma = curve.point(t)
    gamma_u = g1 * dtdu[:, None]
    gamma_uu = g2 * dtdu[:, None] ** 2 + g1 * d2tdu2[:, None]
    coeff = legendre_coeff_matrix(q)
    ntail = N_TAIL[q]
    for f in (gamma, gamma_u, gamma_uu):
        for i in (0, 1):
            a = coeff @ f[:, i]
            full = np.sum(np.abs(a) ** 2)
            if full < 1e-300:
                continue
            tail = np.sum(np.abs(a[q - ntail :]) ** 2)
            if np.sqrt(tail / full * h) > eps:
                return False
    return True


@dataclass(frozen=True)
class Discretization:
    """The discretized boundary: panels plus grids and expansion centers."""

    curves: tuple                # one curve object per component
    q: int
    qhat: int
    panels: tuple                # Panel, ordered; cyclic within a component
    interp: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.interp is None:
            object.__setattr__(self, "interp", interp_matrix(self.q, self.qhat))

    # ------------------------------------------------------------ structure

    @property
    def n_panels(self):
        return len(self.panels)

    @property
    def n_density(self):
        return len(self.panels) * self.q

    @property
    def n_source(self):
        return len(self.panels) * self.qhat

    def component_ranges(self):
        """[(first panel index, one past last)] per component."""
        out = []
        start = 0
        for k in range(1, len(self.panels) + 1):
            if k == len(self.panels) or self.panels[k].component != self.panels[start].component:
                out.append((start, k))
                start = k
        return out

    def neighbors(self, k):
        """Indices of the two panels adjacent to panel k along its component."""
        for lo, hi in self.component_ranges():
            if lo <= k < hi:
                n = hi - lo
                return ((k - lo - 1) % n + lo, (k - lo + 1) % n + lo)
        raise IndexError(k)

    # ----------------------------------------------------------- node arrays

    @property
    def density_nodes(self):
        return np.concatenate([p.density_nodes for p in self.panels])

    @property
    def density_normals(self):
        return np.concatenate([p.density_normals for p in self.panels])

    @property
    def density_weights(self):
        return np.concatenate([p.density_weights for p in self.panels])

    @property
    def source_nodes(self):
        return np.concatenate([p.source_nodes for p in self.panels])

    @property
    def source_normals(self):
        return np.concatenate([p.source_normals for p in self.panels])

    @property
    def source_weights(self):
        return np.concatenate([p.source_weights for p in self.panels])

    @property
    def panel_h(self):
        return np.array([p.h for p in self.panels])

    def panel_of_density_node(self):
        return np.repeat(np.arange(self.n_panels), self.q)

    def panel_of_source_node(self):
        return np.repeat(np.arange(self.n_panels), self.qhat)

    # --------------------------------------------------------------- centers

    def centers(self, sides=(1, -1)):
        """QBX centers, one per density node per side.

        Returns (locations (m,2), radii (m,), owner_panel (m,), owner_node (m,),
        side (m,)); ordering is all side=+1 centers then all side=-1.
        """
        nodes = self.density_nodes
        normals = self.density_normals
        hh = np.repeat(self.panel_h, self.q)
        owner_panel = self.panel_of_density_node()
        owner_node = np.arange(self.n_density)
        locs, rads, pans, nods, sds = [], [], [], [], []
        for side in sides:
            locs.append(nodes + 0.5 * side * hh[:, None] * normals)
            rads.append(0.5 * hh)
            pans.append(owner_panel)
            nods.append(owner_node)
            sds.append(np.full(self.n_density, side, dtype=int))
        return (
            np.concatenate(locs),
            np.concatenate(rads),
            np.concatenate(pans),
            np.concatenate(nods),
            np.concatenate(sds),
        )

    # ------------------------------------------------------------ operations

    def oversample(self, values):
        values = np.asarray(values)
        if values.shape != (self.n_density,):
            raise ValueError("density-grid values have wrong length")
        per_panel = values.reshape(self.n_panels, self.q)
        return (per_panel @ self.interp.T).ravel()

    def panel_legendre_coeffs(self, values):
        """Per-panel Legendre coefficients of density-grid data, (N, q)."""
        values = np.asarray(values)
        coeff = legendre_coeff_matrix(self.q)
        return values.reshape(self.n_panels, self.q) @ coeff.T

    def dump_nodes_csv(self, path):
        nodes = self.density_nodes
        normals = self.density_normals
        w = self.density_weights
        with open(path, "w") as f:
            f.write("x,y,nx,ny,w,panel\n")
            pan = self.panel_of_density_node()
            for i in range(self.n_density):
                f.write(
                    f"{nodes[i,0]:.17g},{nodes[i,1]:.17g},{normals[i,0]:.17g},"
                    f"{normals[i,1]:.17g},{w[i]:.17g},{pan[i]}\n"
                )


def resolution_metric(d, f_on_density_grid):
    """max over panels of sqrt(tail-energy fraction * h_k) for grid data f."""
    a = d.panel_legendre_coeffs(f_on_density_grid)
    ntail = N_TAIL[d.q]
    full = np.sum(np.abs(a) ** 2, axis=1)
    tail = np.sum(np.abs(a[:, d.q - ntail :]) ** 2, axis=1)
    h = d.panel_h
    ok = full >= 1e-300
    if not np.any(ok):
        return 0.0
    return float(np.sqrt(np.max(tail[ok] / full[ok] * h[ok])))


def build_panels(curve, q, eps, qhat=None, depth_cap=30, initial=8):
    """Split a closed curve into panels until the geometry is resolved."""
    if q not in N_TAIL:
        raise ValueError("q must be one of 2, 4, 8, 16")
    if not (0.0 < eps < 1.0):
        raise ValueError("eps must lie in (0, 1)")
    p0 = curve.point(np.array([0.0]))[0]
    p1 = curve.point(np.array([1.0]))[0]
    scale = np.max(np.abs(curve.point(np.linspace(0, 1, 64))))
    if np.linalg.norm(p0 - p1) > 1e-10 * max(scale, 1.0):
        raise ValueError("curve is not closed")
    # nodes are ordered counterclockwise; flip the traversal direction if the
    # input parametrization runs clockwise so outward normals stay outward
    tt = np.linspace(0.0, 1.0, 257)[:-1]
    pts = curve.point(tt)
    area = 0.5 * np.sum(pts[:, 0] * np.roll(pts[:, 1], -1) - np.roll(pts[:, 0], -1) * pts[:, 1])
    if area < 0.0:
        curve = ReversedCurve(curve)
    if qhat is None:
        from .refinement import lookup_qhat

        qhat = lookup_qhat(q, eps)
    intervals = [(k / initial, (k + 1) / initial, 0) for k in range(initial)]
    resolved = []
    while intervals:
        t0, t1, depth = intervals.pop()
        if _panel_resolved(curve, t0, t1, q, eps):
            resolved.append((t0, t1))
            continue
        if depth >= depth_cap:
            raise RuntimeError("panel refinement failed to resolve the geometry")
        tm = 0.5 * (t0 + t1)
        intervals.append((t0, tm, depth + 1))
        intervals.append((tm, t1, depth + 1))
    resolved.sort()
    panels = tuple(_make_panel(curve, 0, t0, t1, q, qhat) for t0, t1 in resolved)
    return Discretization(curves=(curve,), q=q, qhat=qhat, panels=panels)


def merge_discretizations(ds):
    """Union of single-curve discretizations into one multi-component one."""
    q = ds[0].q
    qhat = ds[0].qhat
    if any(d.q != q or d.qhat != qhat for d in ds):
        raise ValueError("mismatched orders")
    panels = []
    curves = []
    for ci, d in enumerate(ds):
        for p in d.panels:
            panels.append(replace(p, component=ci))
        curves.extend(d.curves)
    return Discretization(curves=tuple(curves), q=q, qhat=qhat, panels=tuple(panels))


def split_panel(d, k):
    """Replace panel k by two panels of equal arclength."""
    return split_panels(d, [k])


def split_panels(d, ks):
    """Split several panels at once (each into two equal-arclength halves)."""
    ks = set(int(k) for k in ks)
    new_panels = []
    for idx, p in enumerate(d.panels):
        curve = d.curves[p.component]
        if idx in ks:
            tm = _arclength_params(curve, p.t0, p.t1, p.h, [0.5 * p.h])[0]
            new_panels.append(_make_panel(curve, p.component, p.t0, tm, d.q, d.qhat))
            new_panels.append(_make_panel(curve, p.component, tm, p.t1, d.q, d.qhat))
        else:
            new_panels.append(p)
    return Discretization(curves=d.curves, q=d.q, qhat=d.qhat, panels=tuple(new_panels))


def split_all(d):
    return split_panels(d, range(d.n_panels))


# -------------------------------------------------------- point/panel distance


def panel_distance(d, k, point):
    """Distance from a point to panel k (closest point by Newton in t)."""
    p = d.panels[k]
    curve = d.curves[p.component]
    point = np.asarray(point, dtype=float)
    # initialize at the nearest source node, then Newton on the squared
    # distance in the curve parameter, clamped to the panel interval
    d2 = np.sum((p.source_nodes - point) ** 2, axis=1)
    j = int(np.argmin(d2))
    t = p.source_t[j]
    for _ in range(30):
        g = curve.point(np.array([t]))[0]
        g1 = curve.d1(np.array([t]))[0]
        g2 = curve.d2(np.array([t]))[0]
        r = g - point
        f1 = np.dot(r, g1)
        f2 = np.dot(g1, g1) + np.dot(r, g2)
        if f2 <= 0:
            break
        t_new = t - f1 / f2
        t_new = min(max(t_new, p.t0), p.t1)
        if abs(t_new - t) < 1e-15:
            t = t_new
            break
        t = t_new
    best = np.linalg.norm(curve.point(np.array([t]))[0] - point)
    for te in (p.t0, p.t1):
        best = min(best, np.linalg.norm(curve.point(np.array([te]))[0] - point))
    return best
