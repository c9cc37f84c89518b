"""Fourier-Bessel expansion arithmetic for the 2D Helmholtz kernel.

Conventions used throughout (kernel G(x,x') = (i/4) H^(1)_0(omega |x-x'|)):

  outgoing (H-type) about c:  u(x) = sum_k  b_k H_k(omega rho) e^{+i k theta}
  local    (J-type) about c:  u(x) = sum_m  a_m J_m(omega rho) e^{-i m theta}

with (rho, theta) the polar coordinates of x - c.  Formation routines fold in
the quadrature weights, densities, and the i/4 kernel prefactor, so an
expansion always represents the potential itself.

Coefficients may be stored with a geometric scale s <= 1 to keep high-order
translations inside double-precision range: an outgoing expansion stores
b_k s^{-|k|} (basis H_k s^{|k|}), a local one stores a_m s^{+|m|}
(basis J_m s^{-|m|}).  scale=1.0 is plain storage.
"""

from dataclasses import dataclass, field

import numpy as np

from .specfun import h1_table, j_table

KERNEL_PREF = 0.25j


@dataclass
class SourceBatch:
    """Quadrature sources: points, weights, and SLP/DLP density channels."""

    points: np.ndarray                 # (n, 2)
    weights: np.ndarray                # (n,)
    slp_density: np.ndarray = None     # (n,) complex or None
    dlp_density: np.ndarray = None     # (n,) complex or None
    normals: np.ndarray = None         # (n, 2), required when dlp_density set

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float)
        n = self.points.shape[0]
        if self.weights.shape != (n,):
            raise ValueError("weights misaligned with points")
        if self.slp_density is not None:
            self.slp_density = np.asarray(self.slp_density, dtype=complex)
            if self.slp_density.shape != (n,):
                raise ValueError("slp_density misaligned with points")
        if self.dlp_density is not None:
            self.dlp_density = np.asarray(self.dlp_density, dtype=complex)
            if self.dlp_density.shape != (n,):
                raise ValueError("dlp_density misaligned with points")
            if self.normals is None:
                raise ValueError("dlp_density requires normals")
            self.normals = np.atleast_2d(np.asarray(self.normals, dtype=float))


@dataclass
class Expansion:
    """Truncated Fourier-Bessel series; coeffs indexed -p..p, offset p."""

    kind: str                  # 'outgoing' (H) or 'local' (J)
    center: np.ndarray
    order: int
    coeffs: np.ndarray         # (2p+1,) complex, scaled storage
    omega: float
    scale: float = 1.0

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        if self.kind not in ("outgoing", "local"):
            raise ValueError("kind must be 'outgoing' or 'local'")
        if len(self.coeffs) != 2 * self.order + 1:
            raise ValueError("coefficient vector must have length 2p+1")

    @property
    def coefficients(self):
        """Unscaled coefficient view indexed -p..p."""
        m = np.abs(np.arange(-self.order, self.order + 1))
        if self.kind == "outgoing":
            return self.coeffs * self.scale**m
        return self.coeffs / self.scale**m


def _check_same_omega(a_omega, b_omega):
    if abs(a_omega - b_omega) > 1e-14 * max(abs(a_omega), 1.0):
        raise ValueError("mixing expansions with different omega")


def _polar(points, center):
    dz = (points[:, 0] - center[0]) + 1j * (points[:, 1] - center[1])
    rho = np.abs(dz)
    safe = np.where(rho > 0.0, rho, 1.0)
    eith = np.where(rho > 0.0, dz / safe, 1.0 + 0j)
    return rho, eith


def _deriv_table(table, sigma):
    """F'_k * sigma^k for k=0..p given F_k * sigma^k for k=0..p+1.

    Uses F'_k = (F_{k-1} - F_{k+1}) / 2 and F_{-1} = -F_1 (J and H alike).
    """
    p = table.shape[0] - 2
    out = np.empty((p + 1,) + table.shape[1:], dtype=table.dtype)
    out[0] = -table[1] / sigma
    if p >= 1:
        out[1:] = 0.5 * (table[0:p] * sigma - table[2 : p + 2] / sigma)
    return out


def _formation(batch, center, p, omega, kind, scale=1.0):
    """Shared source-to-expansion formation for both expansion kinds."""
    center = np.asarray(center, dtype=float)
    rho, eith = _polar(batch.points, center)
    at_center = rho == 0.0
    if np.any(at_center) and kind == "local":
        raise ValueError("source coincides with local expansion center")
    x = np.where(at_center, 1.0, omega * rho)
    if kind == "outgoing":
        sigma = 1.0 / scale
        table = j_table(x, p + 1, scale=sigma)
        if np.any(at_center):
            table[:, at_center] = 0.0
            table[0, at_center] = 1.0
    else:
        sigma = scale
        table = h1_table(x, p + 1, scale=sigma)
    ks = np.arange(p + 1)

    # phase powers e^{i k theta}, k = 0..p
    phase = np.empty((p + 1, len(rho)), dtype=complex)
    phase[0] = 1.0
    for k in range(1, p + 1):
        phase[k] = phase[k - 1] * eith

    c = np.zeros(len(rho), dtype=complex)
    if batch.slp_density is not None:
        c = batch.weights * batch.slp_density
    base_pos = c[None, :] * table[: p + 1]
    base_neg = base_pos.copy()

    if batch.dlp_density is not None:
        d = batch.weights * batch.dlp_density
        er = eith.real * batch.normals[:, 0] + eith.imag * batch.normals[:, 1]
        et = -eith.imag * batch.normals[:, 0] + eith.real * batch.normals[:, 1]
        dtab = _deriv_table(table, sigma)
        safe_rho = np.where(at_center, 1.0, rho)
        angular = 1j * ks[:, None] / safe_rho[None, :] * table[: p + 1] * et[None, :]
        if np.any(at_center) and kind == "outgoing" and p >= 1:
            # smooth limit of J_k(w rho) e^{-ik theta} at the center: only the
            # first-order terms carry a gradient, J'_1(0) = 1/2, J_1/rho -> w/2
            dtab[:, at_center] = 0.0
            dtab[1, at_center] = 0.5 * sigma
            angular[:, at_center] = 0.0
            angular[1, at_center] = 1j * 0.5 * omega * sigma * et[at_center]
        radial = omega * dtab * er[None, :]
        base_pos = base_pos + d[None, :] * (radial + angular)
        base_neg = base_neg + d[None, :] * (radial - angular)

    signs = np.where(ks % 2 == 0, 1.0, -1.0)
    if kind == "outgoing":
        pos = np.sum(base_neg * phase.conj(), axis=1)
        neg = signs * np.sum(base_pos * phase, axis=1)
    else:
        pos = np.sum(base_pos * phase, axis=1)
        neg = signs * np.sum(base_neg * phase.conj(), axis=1)

    coeffs = np.empty(2 * p + 1, dtype=complex)
    coeffs[p:] = KERNEL_PREF * pos
    coeffs[:p] = KERNEL_PREF * neg[1:][::-1]
    return Expansion(kind, center, p, coeffs, omega, scale)


def p2m(batch, center, p, omega, scale=1.0):
    """Outgoing expansion about a box center from enclosed sources."""
    return _formation(batch, center, p, omega, "outgoing", scale)


def p2qbx(batch, center, p, omega, radius=None):
    """Local expansion about an off-surface center from exterior sources.

    With radius given, any source strictly inside the disk is a hard error
    (violated placement should have been caught by refinement).
    """
    if radius is not None:
        rho, _ = _polar(np.atleast_2d(batch.points), np.asarray(center, float))
        if np.any(rho < radius * (1.0 - 1e-12)):
            raise ValueError("source inside the expansion disk")
    return _formation(batch, center, p, omega, "local")


def p2l(batch, center, p, omega, scale=1.0):
    """Local expansion about a box center from well-separated sources."""
    return _formation(batch, center, p, omega, "local", scale)


def m2m_matrix(omega, delta, p_out, p_in, s_in=1.0, s_out=1.0):
    """Translation matrix for outgoing -> outgoing over offset delta = c_in - c_out."""
    dz = delta[0] + 1j * delta[1]
    d = abs(dz)
    nmax = p_in + p_out
    jt = j_table(np.array([omega * d]), nmax, scale=1.0 / s_out)[:, 0]
    eiphi = dz / d
    ls = np.arange(-p_out, p_out + 1)[:, None]
    ks = np.arange(-p_in, p_in + 1)[None, :]
    n = np.abs(ls - ks)
    sgn = np.where((ls - ks < 0) & (n % 2 == 1), -1.0, 1.0)
    e1 = n - np.abs(ls) + np.abs(ks)
    ratio = (s_in / s_out) ** np.abs(ks)
    phases = eiphi ** (-(ls - ks))
    return sgn * jt[n] * s_out**e1 * ratio * phases


def l2l_matrix(omega, delta, p_out, p_in, s_in=1.0, s_out=1.0):
    """Translation matrix for local -> local over offset delta = c_in - c_out."""
    dz = delta[0] + 1j * delta[1]
    d = abs(dz)
    nmax = p_in + p_out
    jt = j_table(np.array([omega * d]), nmax, scale=1.0 / s_in)[:, 0]
    eiphi = dz / d
    ls = np.arange(-p_out, p_out + 1)[:, None]
    ks = np.arange(-p_in, p_in + 1)[None, :]
    n = np.abs(ls - ks)
    sgn = np.where((ls - ks < 0) & (n % 2 == 1), -1.0, 1.0)
    e1 = n + np.abs(ls) - np.abs(ks)
    ratio = (s_out / s_in) ** np.abs(ls)
    phases = eiphi ** (ls - ks)
    return sgn * jt[n] * s_in**e1 * ratio * phases


def m2l_matrix(omega, delta, p_out, p_in, s_in=1.0, s_out=1.0):
    """Translation matrix for outgoing -> local; delta = c_in - c_out must be != 0."""
    dz = delta[0] + 1j * delta[1]
    d = abs(dz)
    if d == 0.0:
        raise ValueError("m2l requires separated centers")
    nmax = p_in + p_out
    ht = h1_table(np.array([omega * d]), nmax, scale=s_in)[:, 0]
    # the Graf phase is referenced to the vector from the source center to
    # the new local center, i.e. -delta
    eiphi = -dz / d
    ms = np.arange(-p_out, p_out + 1)[:, None]
    ks = np.arange(-p_in, p_in + 1)[None, :]
    n = np.abs(ks + ms)
    sgn = np.where((ks + ms < 0) & (n % 2 == 1), -1.0, 1.0)
    msign = np.where(ms % 2 == 0, 1.0, -1.0)
    if s_in == s_out:
        scale_fac = s_in ** (np.abs(ks) + np.abs(ms) - n)
    else:
        scale_fac = s_in ** (np.abs(ks) - n) * s_out ** np.abs(ms)
    phases = eiphi ** (ks + ms)
    return msign * sgn * ht[n] * scale_fac * phases


def _translate(exp, new_center, p_out, scale_out, matrix_fn, out_kind, flip=False):
    new_center = np.asarray(new_center, dtype=float)
    delta = exp.center - new_center
    if np.hypot(*delta) < 1e-300:
        if matrix_fn is m2l_matrix:
            raise ValueError("m2l requires separated centers")
        # zero-offset translation: pure truncation / rescale
        p = min(p_out, exp.order)
        ms = np.arange(-p, p + 1)
        src = exp.coeffs[exp.order + ms]
        if exp.kind == "outgoing":
            fac = (exp.scale / scale_out) ** np.abs(ms)
        else:
            fac = (scale_out / exp.scale) ** np.abs(ms)
        coeffs = np.zeros(2 * p_out + 1, dtype=complex)
        coeffs[p_out + ms] = src * fac
        return Expansion(out_kind, new_center, p_out, coeffs, exp.omega, scale_out)
    mat = matrix_fn(exp.omega, delta, p_out, exp.order, exp.scale, scale_out)
    return Expansion(out_kind, new_center, p_out, mat @ exp.coeffs, exp.omega, scale_out)


def m2m(exp, new_center, p_out=None, scale_out=None):
    if exp.kind != "outgoing":
        raise ValueError("m2m needs an outgoing expansion")
    p_out = exp.order if p_out is None else p_out
    scale_out = exp.scale if scale_out is None else scale_out
    return _translate(exp, new_center, p_out, scale_out, m2m_matrix, "outgoing")


def m2l(exp, new_center, p_out, scale_out=None):
    if exp.kind != "outgoing":
        raise ValueError("m2l needs an outgoing expansion")
    scale_out = exp.scale if scale_out is None else scale_out
    return _translate(exp, new_center, p_out, scale_out, m2l_matrix, "local")


def l2l(exp, new_center, p_out, scale_out=None):
    if exp.kind != "local":
        raise ValueError("l2l needs a local expansion")
    scale_out = exp.scale if scale_out is None else scale_out
    return _translate(exp, new_center, p_out, scale_out, l2l_matrix, "local")


def l2qbx(box_local, qbx_center, p):
    """Shift a box J-expansion onto a QBX center, truncated at order p."""
    return l2l(box_local, qbx_center, p, scale_out=1.0)


def m2qbx(outgoing, qbx_center, p):
    """Convert a W-list box H-expansion to QBX local coefficients."""
    return m2l(outgoing, qbx_center, p, scale_out=1.0)


def eval_expansion(exp, x):
    """Evaluate at points x (n,2) -> complex (n,)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    rho, eith = _polar(x, exp.center)
    at_center = rho == 0.0
    arg = np.where(at_center, 1.0, exp.omega * rho)
    p = exp.order
    if exp.kind == "local":
        table = j_table(arg, p, scale=1.0 / exp.scale)
        if np.any(at_center):
            table[:, at_center] = 0.0
            table[0, at_center] = 1.0
    else:
        if np.any(at_center):
            raise ValueError("outgoing expansion evaluated at its center")
        table = h1_table(arg, p, scale=exp.scale)
    phase = np.empty((p + 1, len(rho)), dtype=complex)
    phase[0] = 1.0
    for k in range(1, p + 1):
        phase[k] = phase[k - 1] * eith
    pos = exp.coeffs[p:]
    neg = exp.coeffs[:p][::-1]  # neg[k-1] = coeff of order -k
    signs = (-1.0) ** np.arange(1, p + 1)
    if exp.kind == "local":
        # sum a_m J_m e^{-im theta}; order -m gives (-1)^m a_{-m} Jhat_m e^{+im theta}
        acc = pos[0] * table[0]
        if p >= 1:
            acc = acc + np.sum(pos[1:, None] * table[1:] * phase[1:].conj(), axis=0)
            acc = acc + np.sum(
                (signs * neg)[:, None] * table[1:] * phase[1:], axis=0
            )
    else:
        acc = pos[0] * table[0]
        if p >= 1:
            acc = acc + np.sum(pos[1:, None] * table[1:] * phase[1:], axis=0)
            acc = acc + np.sum(
                (signs * neg)[:, None] * table[1:] * phase[1:].conj(), axis=0
            )
    return acc


def direct_potential(batch, targets, omega):
    """O(n^2) reference summation of the layer-potential kernel."""
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    out = np.zeros(targets.shape[0], dtype=complex)
    dx = targets[:, 0][:, None] - batch.points[:, 0][None, :]
    dy = targets[:, 1][:, None] - batch.points[:, 1][None, :]
    r = np.hypot(dx, dy)
    ht = h1_table(omega * r.ravel(), 1)
    h0 = ht[0].reshape(r.shape)
    h1 = ht[1].reshape(r.shape)
    if batch.slp_density is not None:
        out += KERNEL_PREF * h0 @ (batch.weights * batch.slp_density)
    if batch.dlp_density is not None:
        # d/dn' H_0(omega r) = -omega H_1(omega r) (n' . (x'-x)) / r
        ndot = (
            batch.normals[:, 0][None, :] * (-dx) + batch.normals[:, 1][None, :] * (-dy)
        ) / r
        out += KERNEL_PREF * (-omega * h1 * ndot) @ (batch.weights * batch.dlp_density)
    return out
