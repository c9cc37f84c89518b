"""Sequences of cylinder functions J_l and H^(1)_l for real positive argument.

Translation operators and expansion formation need whole sequences of orders
0..nmax at once, frequently multiplied by powers of a per-level geometric
scale to keep intermediates representable in double precision.  J sequences
are computed by Miller's downward recurrence with Wronskian normalization;
Y sequences by upward recurrence seeded from y0, y1.  Negative orders are
always obtained from the symmetry J_{-l} = (-1)^l J_l, H_{-l} = (-1)^l H_l
and are never stored.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import j0 as _sp_j0, y0 as _sp_y0, y1 as _sp_y1

_RENORM_THRESHOLD = 1e250
_RENORM_FACTOR = 1e-250


@dataclass
class CylFunSeq:
    """Values of a cylinder function for orders 0..order_max at one argument."""

    order_max: int
    values: np.ndarray
    argument: float


def _check_argument(x):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)) or np.any(x <= 0.0):
        raise ValueError("argument must be finite and positive")
    return x


def _j_table_scalar(x, nmax, scale):
    """Single-argument j_table in plain Python floats.

    The recurrence is identical IEEE arithmetic to the array code path, but
    avoids per-iteration numpy dispatch; translation operators call this in
    tight loops with one argument at a time.
    """
    mstart = nmax + max(30, int(np.ceil(1.5 * x)) + 30)
    vals = [0.0] * (nmax + 1)
    a, b = 1e-30, 0.0
    inv_x = 1.0 / x
    s2 = scale * scale
    for k in range(mstart, -1, -1):
        if k <= nmax:
            vals[k] = a
        c = (2.0 * k) * inv_x * a / scale - b / s2
        b = a
        a = c
        if abs(a) > _RENORM_THRESHOLD:
            a *= _RENORM_FACTOR
            b *= _RENORM_FACTOR
            for i in range(min(k, nmax + 1), nmax + 1):
                vals[i] *= _RENORM_FACTOR
    j0_un = b
    if nmax == 0:
        j1_un = -a * scale
    else:
        j1_un = vals[1] / scale
    w = j1_un * _sp_y0(x) - j0_un * _sp_y1(x)
    norm = (2.0 / (np.pi * x)) / w
    out = np.array(vals)
    out *= norm
    return out.reshape(nmax + 1, 1)


def j_table(x, nmax, scale=1.0):
    """Table of J_l(x) * scale**l, shape (nmax+1, len(x)).

    Downward (Miller) recurrence started at order nmax + max(20, ceil(1.5 x)),
    normalized through the Wronskian J_1 Y_0 - J_0 Y_1 = 2/(pi x).  The scale
    factor multiplies both branches of the recurrence identically, so the
    minimal-solution property that makes the downward sweep stable is kept.
    """
    x = np.atleast_1d(_check_argument(x))
    if nmax >= 0 and x.shape[0] == 1:
        return _j_table_scalar(float(x[0]), nmax, float(scale))
    if nmax < 0:
        raise ValueError("nmax must be >= 0")
    n = x.shape[0]
    # start well above both nmax and the turning point at l ~ x; the +30
    # buffer keeps full double precision for arguments around 10..30 where
    # 1.5x alone is not far enough into the decaying regime
    mstart = nmax + max(30, int(np.ceil(1.5 * np.max(x))) + 30)

    vals = np.zeros((nmax + 1, n))
    # running pair (b, a) = (unnormalized scaled J at order k+1, at order k)
    a = np.full(n, 1e-30)
    b = np.zeros(n)
    inv_x = 1.0 / x
    for k in range(mstart, -1, -1):
        if k <= nmax:
            vals[k] = a
        # J_{k-1} = (2k/x) J_k - J_{k+1}, with u_l = J_l scale**l:
        # u_{k-1} = (2k/x) u_k / scale - u_{k+1} / scale**2
        c = (2.0 * k) * inv_x * a / scale - b / (scale * scale)
        b = a
        a = c
        big = np.abs(a) > _RENORM_THRESHOLD
        if np.any(big):
            a[big] *= _RENORM_FACTOR
            b[big] *= _RENORM_FACTOR
            lo = min(k, nmax + 1)
            vals[lo:, big] *= _RENORM_FACTOR
    # after the loop, a holds unnormalized u_{-1}; b holds u_0, and the last
    # stored rows give u_0 = J~_0, u_1 = J~_1 * scale
    j0_un = b
    j1_un = (vals[1] / scale) if nmax >= 1 else ((2.0 * 0) * inv_x * b - a)
    if nmax == 0:
        # recover unnormalized J~_1 from the final step:
        # u_{-1} = -u_1 / scale**2  =>  J~_1 = u_1 / scale = -u_{-1} * scale
        j1_un = -a * scale
    w = j1_un * _sp_y0(x) - j0_un * _sp_y1(x)
    norm = (2.0 / (np.pi * x)) / w
    return vals * norm


def _y_table_scalar(x, nmax, scale):
    """Single-argument y_table in plain Python floats (see _j_table_scalar)."""
    vals = [0.0] * (nmax + 1)
    vals[0] = float(_sp_y0(x))
    if nmax >= 1:
        vals[1] = float(_sp_y1(x)) * scale
    inv_x = 1.0 / x
    s2 = scale * scale
    for k in range(1, nmax):
        vals[k + 1] = (2.0 * k) * inv_x * scale * vals[k] - s2 * vals[k - 1]
    return np.array(vals).reshape(nmax + 1, 1)


def y_table(x, nmax, scale=1.0):
    """Table of Y_l(x) * scale**l, shape (nmax+1, len(x)); upward recurrence."""
    x = np.atleast_1d(_check_argument(x))
    if nmax < 0:
        raise ValueError("nmax must be >= 0")
    if x.shape[0] == 1:
        return _y_table_scalar(float(x[0]), nmax, float(scale))
    n = x.shape[0]
    vals = np.empty((nmax + 1, n))
    vals[0] = _sp_y0(x)
    if nmax >= 1:
        vals[1] = _sp_y1(x) * scale
    inv_x = 1.0 / x
    for k in range(1, nmax):
        # Y_{k+1} = (2k/x) Y_k - Y_{k-1}, scaled variant
        vals[k + 1] = (2.0 * k) * inv_x * scale * vals[k] - (scale * scale) * vals[k - 1]
    return vals


def h1_table(x, nmax, scale=1.0):
    """Table of H^(1)_l(x) * scale**l, shape (nmax+1, len(x)), complex."""
    with np.errstate(over="ignore", invalid="ignore"):
        jt = j_table(x, nmax, scale)
        yt = y_table(x, nmax, scale)
        out = jt + 1j * yt
    if not np.all(np.isfinite(yt)):
        raise OverflowError("Hankel sequence overflow: order too large for argument/scale")
    return out


def bessel_j_seq(x, nmax):
    """J_0(x)..J_nmax(x) for a single real positive x."""
    x = float(x)
    vals = j_table(np.array([x]), nmax)[:, 0]
    return CylFunSeq(order_max=nmax, values=vals.astype(complex), argument=x)


def hankel1_seq(x, nmax):
    """H^(1)_0(x)..H^(1)_nmax(x) for a single real positive x."""
    x = float(x)
    vals = h1_table(np.array([x]), nmax)[:, 0]
    return CylFunSeq(order_max=nmax, values=vals, argument=x)
