from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sloshlab.errors import InvalidArgument
from sloshlab.geometry import (MeshDomain, ProblemKind, build_disk, build_half_disk,
                               build_rectangle, mesh_from_text, mesh_to_text, permute_vertices,
                               read_mesh, refine, refine_n, validate_mesh, write_mesh)


def test_rectangle_counts():
    m = build_rectangle(1.0, 1.0, 2, 2)
    assert len(m.vertices) == 9
    assert len(m.triangles) == 8
    assert len(m.edges_with("S")) == 2
    assert len(m.edges_with("W")) == 6
    gamma = sorted(map(tuple, m.vertices[m.interface_vertices].tolist()))
    assert gamma == [(0.0, 0.0), (1.0, 0.0)]


@pytest.mark.parametrize("args", [(1.0, 0.0, 2, 2), (0.0, 1.0, 2, 2), (1.0, 1.0, 1, 2),
                                  (1.0, -1.0, 2, 2)])
def test_rectangle_rejects_degenerate(args):
    with pytest.raises(InvalidArgument):
        build_rectangle(*args)


@given(a=st.floats(0.1, 10), h=st.floats(0.1, 10), nx=st.integers(2, 12), ny=st.integers(2, 12))
@settings(max_examples=30, deadline=None)
def test_rectangle_perimeter_and_validity(a, h, nx, ny):
    m = build_rectangle(a, h, nx, ny)
    assert len(m.vertices) == (nx + 1) * (ny + 1)
    assert math.isclose(m.boundary_length(), 2 * a + 2 * h, rel_tol=1e-13)
    assert math.isclose(m.boundary_length("S"), a, rel_tol=1e-13)
    assert validate_mesh(m).ok
    assert np.all(m.signed_areas > 0)


def test_smallest_disk():
    m = build_disk(1, 3)
    assert (len(m.vertices), len(m.triangles), len(m.edges_with("S"))) == (4, 3, 3)
    assert len(m.interface_vertices) == 0
    assert len(m.edges_with("W")) == 0


@pytest.mark.parametrize("args", [(0, 8), (2, 2)])
def test_disk_rejects_small_counts(args):
    with pytest.raises(InvalidArgument):
        build_disk(*args)
    with pytest.raises(InvalidArgument):
        build_half_disk(*args)


def test_half_disk_interface():
    m = build_half_disk(1, 4)
    assert len(m.interface_vertices) == 2
    pts = sorted(map(tuple, np.round(m.vertices[m.interface_vertices], 12).tolist()))
    assert pts == [(-1.0, 0.0), (1.0, 0.0)]
    assert np.all(m.vertices[:, 1] <= 1e-15)
    s = m.vertices[m.vertices_on("S")]
    assert np.allclose(s[:, 1], 0.0)


def test_kind_compatibility(rect_coarse, disk_coarse):
    assert rect_coarse.kind_compatible("sd") and rect_coarse.kind_compatible("sn")
    assert not rect_coarse.kind_compatible("steklov")
    assert disk_coarse.kind_compatible(ProblemKind.PURE_STEKLOV)
    with pytest.raises(InvalidArgument):
        disk_coarse.check_kind("sd")


def test_disk_perimeter_rate():
    # polygonal perimeter 2n sin(pi/n) -> 2 pi with error ~ pi^3/(3 n^2)
    errs = []
    for n in (16, 32, 64, 128):
        m = build_disk(2, n)
        errs.append(2 * math.pi - m.boundary_length())
        assert math.isclose(m.boundary_length(), 2 * n * math.sin(math.pi / n), rel_tol=1e-12)
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.allclose(ratios, 4.0, rtol=0.02)


def test_refine_counts():
    m = build_rectangle(1.0, 1.0, 2, 2)
    r = refine(m)
    assert len(r.triangles) == 32
    n_edges = len(m.unique_edges[0])
    assert len(r.vertices) == len(m.vertices) + n_edges


@pytest.mark.parametrize("builder", [lambda: build_rectangle(2.0, 1.0, 4, 3),
                                     lambda: build_disk(3, 12), lambda: build_half_disk(3, 12)])
def test_refine_preserves_invariants(builder):
    m = builder()
    r = refine_n(m, 2)
    assert validate_mesh(r).ok
    assert len(r.interface_vertices) == len(m.interface_vertices)
    for tag in ("S", "W"):
        # arcs only grow toward the true length under midpoint projection
        assert r.boundary_length(tag) >= m.boundary_length(tag) - 1e-12
    if not len(m.edges_with("W")):
        return
    # straight pieces keep their length exactly
    s_len = m.boundary_length("S")
    assert math.isclose(r.boundary_length("S"), s_len, rel_tol=1e-12)


def test_refined_disk_vertices_on_circle():
    r = refine_n(build_disk(2, 8), 2)
    b = r.vertices[np.unique(r.boundary_edges)]
    assert np.allclose(np.linalg.norm(b, axis=1), 1.0, atol=1e-14)


def test_validate_flags_flipped_triangle():
    m = build_rectangle(1.0, 1.0, 2, 2)
    t = m.triangles.copy()
    t[3] = t[3][[0, 2, 1]]
    bad = MeshDomain(m.vertices, t, m.boundary_edges, m.tags)
    rep = validate_mesh(bad)
    assert not rep.ok
    assert [i.index for i in rep.of_kind("orientation")] == [3]


def test_validate_flags_untagged_edge():
    m = build_rectangle(1.0, 1.0, 2, 2)
    bad = MeshDomain(m.vertices, m.triangles, m.boundary_edges[1:], m.tags[1:])
    rep = validate_mesh(bad)
    assert len(rep.of_kind("untagged-boundary-edge")) == 1


def test_mesh_text_roundtrip(tmp_path, halfdisk_coarse):
    text = mesh_to_text(halfdisk_coarse)
    assert text.startswith("mesh2d v1\n")
    back = mesh_from_text(text)
    assert np.array_equal(back.vertices, halfdisk_coarse.vertices)
    assert np.array_equal(back.triangles, halfdisk_coarse.triangles)
    assert np.array_equal(back.tags, halfdisk_coarse.tags)
    path = tmp_path / "m.txt"
    write_mesh(halfdisk_coarse, path)
    assert mesh_to_text(read_mesh(path)) == text


def test_mesh_text_rejects_garbage():
    with pytest.raises(InvalidArgument):
        mesh_from_text("mesh2d v1\nv 0 0\nq 1 2 3\n")
    with pytest.raises(InvalidArgument):
        mesh_from_text("not a mesh\n")


def test_permutation_changes_id_not_geometry(rect_coarse, rng):
    perm = rng.permutation(len(rect_coarse.vertices))
    p = permute_vertices(rect_coarse, perm)
    assert validate_mesh(p).ok
    assert math.isclose(p.area, rect_coarse.area, rel_tol=1e-13)
    assert p.id != rect_coarse.id
