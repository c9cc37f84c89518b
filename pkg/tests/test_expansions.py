import numpy as np
import pytest

from qbxfmm.expansions import (
    Expansion,
    SourceBatch,
    direct_potential,
    eval_expansion,
    l2l,
    l2qbx,
    m2l,
    m2m,
    m2qbx,
    p2l,
    p2m,
    p2qbx,
)
from qbxfmm.specfun import hankel1_seq

OMEGA = 5.0


def random_batch(rng, n, center, radius, dipoles=True):
    ang = rng.uniform(0, 2 * np.pi, n)
    rad = radius * np.sqrt(rng.uniform(0.05, 1.0, n))
    pts = center + np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])
    w = rng.uniform(0.5, 1.5, n)
    slp = rng.normal(size=n) + 1j * rng.normal(size=n)
    if dipoles:
        dlp = rng.normal(size=n) + 1j * rng.normal(size=n)
        nrm = rng.normal(size=(n, 2))
        nrm /= np.linalg.norm(nrm, axis=1)[:, None]
        return SourceBatch(pts, w, slp, dlp, nrm)
    return SourceBatch(pts, w, slp)


def kernel(x, s):
    return 0.25j * hankel1_seq(OMEGA * np.linalg.norm(x - s), 0).values[0]


# ---------------------------------------------------------------- direct oracle


def test_direct_potential_monopole_matches_kernel():
    s = np.array([0.2, -0.1])
    t = np.array([[1.5, 2.0]])
    b = SourceBatch(s, np.array([1.0]), np.array([1.0 + 0j]))
    assert abs(direct_potential(b, t, OMEGA)[0] - kernel(t[0], s)) < 1e-14


def test_direct_potential_dipole_matches_finite_difference():
    # dual-route check: analytic dipole kernel vs centered difference of G
    s = np.array([0.2, -0.1])
    n = np.array([0.6, 0.8])
    t = np.array([[1.1, 0.7]])
    b = SourceBatch(s, np.array([1.0]), None, np.array([1.0 + 0j]), n)
    val = direct_potential(b, t, OMEGA)[0]
    h = 1e-6
    fd = (kernel(t[0], s + h * n) - kernel(t[0], s - h * n)) / (2 * h)
    assert abs(val - fd) < 1e-7 * max(1.0, abs(val))


# ------------------------------------------------------------------ formations


def test_p2m_unit_charge_at_center():
    # coefficients carry the i/4 kernel prefactor; only order 0 survives
    c = np.array([0.0, 0.0])
    b = SourceBatch(c, np.array([1.0]), np.array([1.0 + 0j]))
    e = p2m(b, c, 6, OMEGA)
    assert abs(e.coeffs[6] - 0.25j) < 1e-15
    assert np.max(np.abs(np.delete(e.coeffs, 6))) < 1e-15


def test_p2m_single_charge_far_eval():
    rng = np.random.default_rng(0)
    c = np.array([0.3, 0.4])
    s = c + np.array([0.2, -0.3])
    b = SourceBatch(s, np.array([1.0]), np.array([1.0 + 0j]))
    e = p2m(b, c, 40, OMEGA)
    R = np.linalg.norm(s - c)
    for _ in range(5):
        ang = rng.uniform(0, 2 * np.pi)
        t = c + 5 * R * np.array([np.cos(ang), np.sin(ang)])
        ref = kernel(t, s)
        assert abs(eval_expansion(e, t[None, :])[0] - ref) < 1e-12


def test_p2m_random_batch_far_eval():
    rng = np.random.default_rng(1)
    c = np.array([-0.2, 0.1])
    b = random_batch(rng, 50, c, 0.4)
    e = p2m(b, c, 45, OMEGA)
    t = c + np.array([[2.4, 1.0], [-3.0, 0.3], [0.1, 2.9]])
    ref = direct_potential(b, t, OMEGA)
    got = eval_expansion(e, t)
    assert np.max(np.abs(got - ref)) < 1e-12 * np.max(np.abs(ref) + 1)


def test_p2m_scaled_matches_unscaled():
    rng = np.random.default_rng(2)
    c = np.zeros(2)
    b = random_batch(rng, 20, c, 0.05)
    e1 = p2m(b, c, 25, OMEGA)
    e2 = p2m(b, c, 25, OMEGA, scale=OMEGA * 0.05)
    t = np.array([[0.4, 0.2]])
    assert abs(eval_expansion(e1, t)[0] - eval_expansion(e2, t)[0]) < 1e-13


def test_p2qbx_single_far_charge():
    c = np.array([0.0, 0.0])
    s = np.array([1.3, 0.7])
    x = np.array([0.05, -0.08])  # inside the disk
    b = SourceBatch(s, np.array([1.0]), np.array([1.0 + 0j]))
    e = p2qbx(b, c, 30, OMEGA)
    assert abs(eval_expansion(e, x[None, :])[0] - kernel(x, s)) < 1e-12


def test_p2qbx_zero_density_and_inside_error():
    c = np.zeros(2)
    s = np.array([[1.0, 0.0], [0.0, 2.0]])
    b = SourceBatch(s, np.ones(2), np.zeros(2, dtype=complex))
    e = p2qbx(b, c, 10, OMEGA)
    assert np.max(np.abs(e.coeffs)) == 0.0
    with pytest.raises(ValueError):
        p2qbx(SourceBatch(np.array([[0.1, 0.0]]), np.ones(1), np.ones(1)), c, 5, OMEGA, radius=0.5)


def test_p2qbx_dipole_dual_oracle():
    # analytic normal-derivative formation vs finite differences of monopole p2qbx
    c = np.zeros(2)
    s = np.array([0.9, -0.6])
    n = np.array([-0.8, 0.6])
    x = np.array([[0.07, 0.11]])
    b = SourceBatch(s, np.array([1.0]), None, np.array([1.0 + 0j]), n)
    e = p2qbx(b, c, 35, OMEGA)
    got = eval_expansion(e, x)[0]
    h = 1e-5 * np.linalg.norm(s)
    fd = (kernel(x[0], s + h * n) - kernel(x[0], s - h * n)) / (2 * h)
    assert abs(got - fd) < 1e-7 * max(1.0, abs(got))
    ref = direct_potential(b, x, OMEGA)[0]
    assert abs(got - ref) < 1e-12 * max(1.0, abs(ref))


# ------------------------------------------------------------------ translations


def test_zero_offset_translations_are_identity():
    rng = np.random.default_rng(3)
    c = np.array([0.4, -0.2])
    b = random_batch(rng, 10, c, 0.3)
    e = p2m(b, c, 12, OMEGA)
    e2 = m2m(e, c)
    assert np.allclose(e2.coeffs, e.coeffs, rtol=0, atol=1e-15)
    loc = p2l(b, c + np.array([5.0, 0.0]), 12, OMEGA)
    loc2 = l2l(loc, loc.center, 12)
    assert np.allclose(loc2.coeffs, loc.coeffs, rtol=0, atol=1e-15)
    with pytest.raises(ValueError):
        m2l(e, c, 8)


def test_m2m_preserves_far_field():
    rng = np.random.default_rng(4)
    c1 = np.array([0.1, 0.1])
    b = random_batch(rng, 30, c1, 0.3)
    e = p2m(b, c1, 45, OMEGA)
    c2 = c1 + np.array([0.25, -0.15])
    e2 = m2m(e, c2, 50)
    t = np.array([[3.0, 1.5], [-2.5, 2.0]])
    ref = direct_potential(b, t, OMEGA)
    got = eval_expansion(e2, t)
    assert np.max(np.abs(got - ref)) < 1e-12 * np.max(np.abs(ref) + 1)


def test_full_chain_matches_direct():
    # p2m -> m2m -> m2l -> l2l -> eval, the classic four-operator pipeline
    rng = np.random.default_rng(5)
    c1 = np.array([0.0, 0.0])
    b = random_batch(rng, 25, c1, 0.25)
    e = p2m(b, c1, 50, OMEGA)
    e = m2m(e, np.array([0.15, -0.1]), 50)
    loc = m2l(e, np.array([2.5, 1.8]), 50)
    loc = l2l(loc, np.array([2.3, 1.7]), 45)
    t = np.array([[2.35, 1.62], [2.2, 1.75]])
    ref = direct_potential(b, t, OMEGA)
    got = eval_expansion(loc, t)
    assert np.max(np.abs(got - ref)) < 1e-11 * np.max(np.abs(ref) + 1)


def test_scaled_chain_matches_direct():
    # same chain but with per-stage geometric scales, small boxes
    rng = np.random.default_rng(6)
    r1 = 0.01
    c1 = np.array([0.0, 0.0])
    b = random_batch(rng, 25, c1, r1)
    s1 = min(1.0, OMEGA * r1)
    e = p2m(b, c1, 60, OMEGA, scale=s1)
    c2 = np.array([0.01, -0.01])
    s2 = min(1.0, OMEGA * 0.02)
    e = m2m(e, c2, 60, scale_out=s2)
    c3 = np.array([0.10, 0.06])
    loc = m2l(e, c3, 60, scale_out=s2)
    c4 = np.array([0.105, 0.055])
    loc = l2l(loc, c4, 55, scale_out=s1)
    t = c4 + np.array([[0.004, -0.002], [-0.003, 0.001]])
    ref = direct_potential(b, t, OMEGA)
    got = eval_expansion(loc, t)
    assert np.max(np.abs(got - ref)) < 1e-11 * np.max(np.abs(ref) + 1)


def test_l2qbx_and_m2qbx_match_p2qbx():
    rng = np.random.default_rng(7)
    src_center = np.array([4.0, 0.0])
    b = random_batch(rng, 20, src_center, 0.2)
    qbx_c = np.array([0.02, -0.03])
    p = 8
    ref = p2qbx(b, qbx_c, p, OMEGA)

    out = p2m(b, src_center, 50, OMEGA)
    via_m = m2qbx(out, qbx_c, p)
    assert np.max(np.abs(via_m.coeffs - ref.coeffs)) < 1e-11 * max(
        1.0, np.max(np.abs(ref.coeffs))
    )

    box_local = m2l(out, np.zeros(2), 50)
    via_l = l2qbx(box_local, qbx_c, p)
    assert np.max(np.abs(via_l.coeffs - ref.coeffs)) < 1e-10 * max(
        1.0, np.max(np.abs(ref.coeffs))
    )


def test_translation_linearity():
    rng = np.random.default_rng(8)
    c = np.zeros(2)
    coeffs1 = rng.normal(size=21) + 1j * rng.normal(size=21)
    coeffs2 = rng.normal(size=21) + 1j * rng.normal(size=21)
    a, bb = 1.7 - 0.3j, -0.4 + 2.1j
    tgt = np.array([3.0, -1.0])
    for kind, op in (("outgoing", lambda e: m2l(e, tgt, 10)), ("local", lambda e: l2l(e, c + 0.1, 10))):
        e1 = Expansion(kind, c, 10, coeffs1, OMEGA)
        e2 = Expansion(kind, c, 10, coeffs2, OMEGA)
        e3 = Expansion(kind, c, 10, a * coeffs1 + bb * coeffs2, OMEGA)
        lhs = op(e3).coeffs
        rhs = a * op(e1).coeffs + bb * op(e2).coeffs
        assert np.max(np.abs(lhs - rhs)) < 1e-13 * np.max(np.abs(lhs) + 1)


def test_truncation_error_decays_geometrically():
    rng = np.random.default_rng(9)
    c1 = np.zeros(2)
    b = random_batch(rng, 15, c1, 0.3)
    t = np.array([[2.0, 1.0]])
    ref = direct_potential(b, t, OMEGA)[0]
    errs = []
    for p in (10, 15, 20, 25):
        e = p2m(b, c1, p, OMEGA)
        errs.append(abs(eval_expansion(e, t)[0] - ref))
    for lo, hi in zip(errs[1:], errs[:-1]):
        assert lo < 0.5 * hi or lo < 1e-14


def test_eval_expansion_basics():
    c = np.array([1.0, 2.0])
    coeffs = np.zeros(1, dtype=complex)
    coeffs[0] = 1.0
    e = Expansion("local", c, 0, coeffs, OMEGA)
    assert abs(eval_expansion(e, c[None, :])[0] - 1.0) < 1e-15  # J_0(0) = 1


def test_omega_mixing_guard():
    from qbxfmm.expansions import _check_same_omega

    with pytest.raises(ValueError):
        _check_same_omega(5.0, 5.1)
