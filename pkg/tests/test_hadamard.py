from __future__ import annotations

import json
import math

import numpy as np
import pytest
from scipy.integrate import quad

from sloshlab.assembly import _GAUSS2
from sloshlab.errors import (IllConditionedClusterWarning, InvalidArgument, InvalidCase,
                             TrackingFailure, UndefinedForSimple)
from sloshlab.geometry import build_disk, build_rectangle, refine
from sloshlab.hadamard import (cluster_matrix, fd_slopes, gauge_discrepancy, no_splitting_score,
                               predicted_slopes, reduced_matrix)
from sloshlab.perturb import InteriorBump, dilation, eval_field, normal_bump, translation
from sloshlab.spectral import make_cluster, solve


@pytest.fixture(scope="module")
def rect():
    return build_rectangle(math.pi, 1.0, 24, 12)


def test_score_examples():
    assert no_splitting_score(3 * np.eye(3)) == 0.0
    assert math.isclose(no_splitting_score(np.diag([1.0, -1.0])), 1.0, rel_tol=1e-13)
    assert no_splitting_score(np.zeros((2, 2))) == 0.0
    with pytest.raises(UndefinedForSimple):
        no_splitting_score([[2.0]])
    with pytest.raises(InvalidArgument):
        no_splitting_score(np.zeros((2, 3)))


def test_score_scale_invariant(rng):
    M = rng.standard_normal((3, 3))
    M = M + M.T
    assert math.isclose(no_splitting_score(M), no_splitting_score(7.5 * M), rel_tol=1e-12)
    assert math.isclose(no_splitting_score(M), no_splitting_score(M + 4 * np.eye(3)) *
                        np.linalg.norm(M + 4 * np.eye(3)) / np.linalg.norm(M), rel_tol=1e-9)


def test_translation_gives_zero(disk_coarse, disk_spectrum):
    cd = cluster_matrix(disk_coarse, disk_spectrum, make_cluster(disk_spectrum, 1, 2),
                        translation((0.2, -0.4)))
    assert np.abs(cd.matrix).max() < 1e-13
    assert cd.score == 0.0


@pytest.mark.parametrize("kind,start", [("sd", 0), ("sn", 1)])
def test_dilation_simple_mode(rect, kind, start):
    sp = solve(rect, kind, 3)
    cl = make_cluster(sp, start, 1)
    cd = cluster_matrix(rect, sp, cl, dilation())
    mu = sp.mu[start]
    expected = mu if kind == "sd" else (1 - mu) * mu
    assert math.isclose(cd.matrix[0, 0], expected, rel_tol=1e-10)
    assert cd.score is None
    assert math.isclose(predicted_slopes(cd)[0], -sp.lam[start], rel_tol=1e-10)


def test_dilation_steklov_pair_is_scalar(disk_coarse, disk_spectrum):
    cd = cluster_matrix(disk_coarse, disk_spectrum, make_cluster(disk_spectrum, 3, 2), dilation())
    assert np.allclose(cd.lam_slopes, -disk_spectrum.lam[3:5], rtol=1e-10)
    assert cd.score < 1e-10


def test_constant_steklov_mode_rejected(disk_coarse, disk_spectrum):
    with pytest.raises(InvalidArgument):
        cluster_matrix(disk_coarse, disk_spectrum, make_cluster(disk_spectrum, 0, 1), dilation())


def test_kind_and_mesh_mismatch(rect, disk_coarse, disk_spectrum):
    with pytest.raises(InvalidArgument):
        cluster_matrix(disk_coarse, disk_spectrum, make_cluster(disk_spectrum, 1, 2), dilation(),
                       kind="sn")
    with pytest.raises(InvalidArgument):
        cluster_matrix(rect, disk_spectrum, make_cluster(disk_spectrum, 1, 2), dilation())


def test_wide_cluster_warns(rect):
    sp = solve(rect, "sd", 3)
    with pytest.warns(IllConditionedClusterWarning):
        cluster_matrix(rect, sp, make_cluster(sp, 0, 2), dilation())


def test_linear_in_field(disk_coarse, disk_spectrum):
    cl = make_cluster(disk_spectrum, 3, 2)
    p1 = normal_bump(disk_coarse, (1.0, 0.0), 0.4, 0.01, "S")
    p2 = InteriorBump((0.2, 0.1), 0.5, 0.02, (1.0, -1.0))
    m1 = cluster_matrix(disk_coarse, disk_spectrum, cl, p1).matrix
    m2 = cluster_matrix(disk_coarse, disk_spectrum, cl, p2).matrix
    m12 = cluster_matrix(disk_coarse, disk_spectrum, cl, p1 + (-2.5) * p2).matrix
    assert np.allclose(m12, m1 - 2.5 * m2, atol=1e-14)


def test_json_export(disk_coarse, disk_spectrum):
    cd = cluster_matrix(disk_coarse, disk_spectrum, make_cluster(disk_spectrum, 1, 2),
                        normal_bump(disk_coarse, (0.0, 1.0), 0.5, 0.01, "S"))
    d = json.loads(cd.to_json())
    assert d["kind"] == "steklov" and d["cluster"]["m"] == 2
    assert np.allclose(d["matrix"], cd.matrix) and d["field"]["kind"] == "normal_bump"
    assert d["lambda_slopes"] == sorted(d["lambda_slopes"])


# ------------------------------------------------------------- FD oracle


def test_fd_translation_zero(disk_coarse):
    fd = fd_slopes(disk_coarse, translation((0.3, 0.1)), make_cluster(np.arange(4.0), 1, 2),
                   "steklov", (1e-3, 2e-3, 4e-3))
    assert np.abs(fd.lam_slopes).max() < 1e-9


def test_fd_dilation_matches_scaling(rect):
    sp = solve(rect, "sn", 3)
    fd = fd_slopes(rect, dilation(), make_cluster(sp, 1, 1), "sn", (1e-4, 2e-4, 4e-4))
    assert math.isclose(fd.lam_slopes[0], -sp.lam[1], rel_tol=1e-6)
    assert fd.r2[0] > 0.999999


def test_fd_tracking_failure(disk_coarse):
    cl = make_cluster(np.array([0.0, 1.0, 1.0, 2.0, 2.0]), 1, 2)
    with pytest.raises(TrackingFailure) as info:
        fd_slopes(disk_coarse, dilation(), cl, "steklov", (0.5, 1.5), norm=0.1)
    assert info.value.t == 1.5


def test_fd_rejects_duplicate_t(disk_coarse):
    with pytest.raises(InvalidArgument):
        fd_slopes(disk_coarse, dilation(), make_cluster(np.arange(3.0), 1, 1), "steklov",
                  (1e-3, 1e-3))


# ------------------------------------------------------- reduced formulas


def test_reduced_unknown_and_mismatched_case(rect):
    sp = solve(rect, "sd", 2)
    cl = make_cluster(sp, 0, 1)
    s_bump = normal_bump(rect, (1.5, 0.0), 0.4, 0.01, "S")
    with pytest.raises(InvalidCase):
        reduced_matrix("SX-W", rect, sp, cl, s_bump)
    with pytest.raises(InvalidCase):
        reduced_matrix("SN-S", rect, sp, cl, s_bump)
    with pytest.raises(InvalidCase):
        reduced_matrix("SD-W", rect, sp, cl, s_bump)


def test_reduced_vanishes_for_interior_field(rect):
    sp = solve(rect, "sd", 2)
    R = reduced_matrix("SD-W", rect, sp, make_cluster(sp, 0, 1),
                       InteriorBump((1.5, -0.5), 0.3, 0.1, (1.0, 0.0)))
    assert not R.any()


def test_sn_w_constant_mode(rect):
    sp = solve(rect, "sn", 2)
    R = reduced_matrix("SN-W", rect, sp, make_cluster(sp, 0, 1),
                       normal_bump(rect, (1.5, -1.0), 0.6, 0.05, "W"))
    assert abs(R[0, 0]) < 1e-12


def _sd_w_analytic(k, anchor, radius, amp):
    """mu int_W alpha (d_nu e)^2 for the a-normalised mode sin(kx) sinh(k(y+1))
    on the pi x 1 tank, with a bottom bump."""
    lam = k / math.tanh(k)
    norm2 = lam * math.pi / 2 * math.sinh(k) ** 2

    def integrand(x):
        alpha = amp * (1 - (x - anchor) ** 2 / radius**2) ** 3
        return alpha * (k * math.sin(k * x)) ** 2 / norm2

    val, _ = quad(integrand, anchor - radius, anchor + radius, epsabs=1e-14)
    return val / lam


def test_sd_w_matches_analytic_mode():
    m = build_rectangle(math.pi, 1.0, 16, 8)
    exact = _sd_w_analytic(1, 1.2, 0.6, 0.05)
    errs = []
    for _ in range(3):
        sp = solve(m, "sd", 2)
        R = reduced_matrix("SD-W", m, sp, make_cluster(sp, 0, 1),
                           normal_bump(m, (1.2, -1.0), 0.6, 0.05, "W"))
        errs.append(abs(R[0, 0] - exact) / exact)
        m = refine(m)
    assert errs[-1] < 2e-3
    assert errs[0] > errs[1] > errs[2]


def _side_integral(mesh, E, psi, weight):
    """int_S e_r e_s weight(div psi, psi.nu) with 2-point Gauss and exact field data."""
    idx = mesh.edges_with("S")
    b = mesh.boundary_edges[idx]
    length = mesh.edge_lengths[idx]
    pa, pb = mesh.vertices[b[:, 0]], mesh.vertices[b[:, 1]]
    out = 0.0
    for s in _GAUSS2:
        v, _, div = eval_field(psi, pa + s * (pb - pa))
        alpha = np.einsum("ei,ei->e", v, mesh.edge_normals[idx])
        Eq = (1 - s) * E[b[:, 0]] + s * E[b[:, 1]]
        out = out + np.einsum("e,er,es->rs", 0.5 * length * weight(div, alpha), Eq, Eq)
    return out


@pytest.mark.parametrize("kind", ["sd", "sn"])
def test_surface_cases_differ_by_closed_form_term(kind):
    """For an S-side field the reduced surface formulas differ from the cluster
    matrix by int_S e e (div psi + 2 lam alpha) (SD) and
    (1 - mu) int_S e e div psi + 2 mu lam^2 int_S alpha e e (SN)."""
    m = build_rectangle(math.pi, 1.0, 16, 8)
    start = 0 if kind == "sd" else 1
    errs = []
    for _ in range(3):
        sp = solve(m, kind, 3)
        cl = make_cluster(sp, start, 1)
        psi = normal_bump(m, (1.3, 0.0), 0.5, 0.01, "S")
        M = cluster_matrix(m, sp, cl, psi, field_data="exact").matrix
        R = reduced_matrix(kind.upper() + "-S", m, sp, cl, psi, field_data="exact")
        E = sp.vectors[:, cl.indices]
        lam, mu = sp.lam[start], sp.mu[start]
        if kind == "sd":
            corr = _side_integral(m, E, psi, lambda d, a: d + 2 * lam * a)
        else:
            corr = ((1 - mu) * _side_integral(m, E, psi, lambda d, a: d)
                    + 2 * mu * lam**2 * _side_integral(m, E, psi, lambda d, a: a))
        errs.append(abs((M - R - corr)[0, 0]) / abs(M[0, 0]))
        m = refine(m)
    assert errs[-1] < 1e-3
    assert errs[-1] < errs[0]


def test_gauge_discrepancy_ignores_scalar_shift():
    A = np.array([[1.0, 0.2], [0.2, -0.5]])
    g = gauge_discrepancy(A, A - 3 * np.eye(2))
    assert g["offdiag"] == 0.0 and g["diag"] == 0.0 and g["shift"] == 3.0
    g = gauge_discrepancy(A, A + np.diag([0.1, -0.1]))
    assert math.isclose(g["diag"], 0.1 / 1.1, rel_tol=1e-12)
