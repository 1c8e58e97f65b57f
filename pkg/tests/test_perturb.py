from __future__ import annotations

import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from sloshlab.errors import AmplitudeTooLarge, InvalidSupport, MeshFolded, UnsupportedOperation
from sloshlab.geometry import build_disk, build_rectangle
from sloshlab.perturb import (Affine, InteriorBump, VertexTable, bump_profile, c2_norm_estimate,
                              dilation, eval_field, field_from_dict, normal_bump, transplant,
                              translation, zero_field)


def _profile_c2_sup(amplitude, radius):
    """sup of |alpha|, |alpha'| and the Hessian norm max(|alpha''|, |alpha'/r|)
    for alpha = A (1 - r^2/R^2)^3, computed symbolically."""
    r = sp.symbols("r", nonnegative=True)
    A, R = sp.Rational(str(amplitude)), sp.Rational(str(radius))
    alpha = A * (1 - r**2 / R**2) ** 3
    d1 = sp.diff(alpha, r)
    d2 = sp.diff(alpha, r, 2)
    tang = sp.simplify(d1 / r)

    def sup(expr):
        cands = [sp.Integer(0), R] + [c for c in sp.solve(sp.diff(expr, r), r)
                                      if c.is_real and 0 <= c <= R]
        return max(abs(float(expr.subs(r, c))) if c != 0 else abs(float(sp.limit(expr, r, 0)))
                   for c in cands)

    return max(sup(alpha), sup(d1), sup(d2), sup(tang))


def test_identity_field():
    v, J, d = eval_field(dilation(), np.array([0.3, -0.7]))
    assert np.allclose(v, [0.3, -0.7]) and np.allclose(J, np.eye(2)) and d == 2.0


def test_translation_field():
    v, J, d = eval_field(translation((0.2, -0.1)), np.array([[1.0, 2.0], [3.0, 4.0]]))
    assert np.allclose(v, [[0.2, -0.1]] * 2) and not J.any() and not d.any()


def test_vertex_table_not_evaluable():
    with pytest.raises(UnsupportedOperation):
        eval_field(VertexTable(np.zeros((3, 2))), np.zeros(2))


def test_bump_outside_support_is_zero():
    disk = build_disk(6, 24)
    b = normal_bump(disk, (1.0, 0.0), 0.3, 0.01, "S")
    v, J, d = eval_field(b, np.array([-1.0, 0.0]))
    assert not v.any() and not J.any() and d == 0.0


def test_bump_normal_component_at_anchor():
    disk = build_disk(6, 24)
    b = normal_bump(disk, (1.0, 0.0), 0.3, 0.01, "S")
    v, _, _ = eval_field(b, np.array([1.0, 0.0]))
    assert math.isclose(v @ np.array([1.0, 0.0]), 0.01, rel_tol=1e-12)


def test_bump_tag_mismatch(rect_coarse):
    with pytest.raises(InvalidSupport):
        normal_bump(rect_coarse, (1.5, 0.0), 0.2, 0.01, "W")


def test_bump_near_interface(rect_coarse):
    with pytest.raises(InvalidSupport):
        normal_bump(rect_coarse, (0.1, 0.0), 0.2, 0.01, "S")


def test_bump_vanishes_on_other_side(rect_coarse):
    for anchor, side, other in [((1.5, 0.0), "S", "W"), ((1.5, -1.0), "W", "S")]:
        b = normal_bump(rect_coarse, anchor, 0.6, 0.05, side)
        vals = b.values(rect_coarse.vertices)
        assert not vals[rect_coarse.vertices_on(other)].any()
        assert vals[rect_coarse.vertices_on(side)].any()


@given(x=st.floats(-1.5, 1.5), y=st.floats(-1.5, 1.5))
@settings(max_examples=60, deadline=None)
def test_jacobian_matches_finite_differences(x, y):
    fields = [InteriorBump((0.1, -0.2), 0.7, 0.3, (1.0, 2.0)),
              normal_bump(build_disk(4, 16), (0.0, 1.0), 0.5, 0.2, "S"),
              Affine([[1.0, 2.0], [-0.5, 0.3]], [0.1, 0.0])]
    p = np.array([x, y])
    h = 1e-6
    for f in fields:
        _, J, div = eval_field(f, p)
        fd = np.column_stack([(f.values((p + h * e)[None])[0] - f.values((p - h * e)[None])[0]) / (2 * h)
                              for e in np.eye(2)])
        assert np.allclose(J, fd, atol=1e-6)
        assert math.isclose(div, np.trace(J), abs_tol=1e-15)


def test_profile_is_c2_at_support_edge():
    R = 0.4
    r = np.array([[R - 1e-5, 0.0], [R + 1e-5, 0.0]])
    a, g = bump_profile(r, (0.0, 0.0), R, 1.0)
    assert np.all(np.abs(a) < 1e-12) and np.all(np.abs(g) < 1e-7)


def test_c2_affine_translation_exact():
    assert c2_norm_estimate(translation((0.1, 0.0))) == 0.1
    assert c2_norm_estimate(zero_field()) == 0.0


def test_c2_normal_bump_against_symbolic_sup(rect_coarse):
    b = normal_bump(rect_coarse, (1.5, 0.0), 0.3, 0.01, "S")
    est = c2_norm_estimate(b)
    exact = _profile_c2_sup(0.01, 0.3)
    assert est >= 0.01 and math.isfinite(est)
    assert 0.95 * exact <= est <= 1.01 * exact


def test_c2_disk_bump_finite():
    est = c2_norm_estimate(normal_bump(build_disk(8, 32), (1.0, 0.0), 0.3, 0.01, "S"))
    assert est >= 0.01 and math.isfinite(est)


def test_c2_monotone_in_density(rect_coarse):
    b = normal_bump(rect_coarse, (1.2, 0.0), 0.35, 0.02, "S")
    vals = [c2_norm_estimate(b, density=d) for d in (2, 5, 9, 17, 33)]
    assert all(x <= y for x, y in zip(vals, vals[1:]))


def test_transplant_t0_bitwise(disk_coarse):
    rec = transplant(disk_coarse, dilation(), 0.0)
    assert np.array_equal(rec.mesh.vertices, disk_coarse.vertices)


def test_transplant_translation(disk_coarse):
    rec = transplant(disk_coarse, translation((0.3, -0.2)), 1.0, guard=False)
    assert np.allclose(rec.mesh.vertices - disk_coarse.vertices, [0.3, -0.2], atol=1e-15)
    assert np.array_equal(rec.mesh.triangles, disk_coarse.triangles)


def test_transplant_dilation_radius(disk_coarse):
    rec = transplant(disk_coarse, dilation(), 0.1, guard=False)
    b = rec.mesh.vertices[np.unique(disk_coarse.boundary_edges)]
    assert np.allclose(np.linalg.norm(b, axis=1), 1.1, atol=1e-14)


def test_transplant_guard(disk_coarse):
    with pytest.raises(AmplitudeTooLarge):
        transplant(disk_coarse, dilation(), 0.6)


def test_transplant_fold_detected():
    m = build_rectangle(1.0, 1.0, 4, 4)
    disp = np.zeros_like(m.vertices)
    centre = np.argmin(np.linalg.norm(m.vertices - [0.5, -0.5], axis=1))
    disp[centre] = [0.6, 0.0]
    with pytest.raises(MeshFolded):
        transplant(m, VertexTable(disp), 1.0, guard=False)


def test_interior_transplant_fixes_boundary(disk_coarse):
    f = InteriorBump((0.1, 0.0), 0.5, 0.05, (1.0, 1.0))
    rec = transplant(disk_coarse, f, 0.3)
    b = np.unique(disk_coarse.boundary_edges)
    assert np.array_equal(rec.mesh.vertices[b], disk_coarse.vertices[b])


@given(t=st.floats(-0.2, 0.2))
@settings(max_examples=25, deadline=None)
def test_transplant_linear_in_t(t):
    m = build_disk(3, 12)
    f = InteriorBump((0.0, 0.2), 0.6, 0.3, (0.0, 1.0))
    rec = transplant(m, f, t, guard=False)
    assert np.allclose(rec.mesh.vertices, m.vertices + t * f.values(m.vertices), atol=1e-15)


def test_field_description_roundtrip(disk_coarse):
    fields = [dilation(), translation((1.0, 2.0)), InteriorBump((0.1, 0.1), 0.3, 0.2, (0.0, 1.0)),
              normal_bump(disk_coarse, (0.0, -1.0), 0.4, 0.01, "S"),
              dilation() + 2.0 * translation((0.1, 0.0))]
    pts = np.random.default_rng(1).uniform(-1, 1, (20, 2))
    for f in fields:
        g = field_from_dict(f.describe())
        assert g.id == f.id
        assert np.array_equal(g.values(pts), f.values(pts))
