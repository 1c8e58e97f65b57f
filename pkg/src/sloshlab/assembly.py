"""P1 Galerkin matrices and the first-order shape-derivative forms.

The derivative forms come in two flavours selected by ``field_data``:

``"nodal"`` (default)
    The field enters through its P1 interpolant. The forms are then the
    exact t-derivatives at t=0 of the assembled matrices on the transplanted
    mesh x + t psi(x), which is what finite differences on transplanted
    meshes measure.
``"exact"``
    The analytic Jacobian of psi is integrated with a 3-point triangle rule
    (volume forms) or 2-point Gauss on edges (boundary form).
"""
from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import InvalidArgument, UnsupportedOperation
from .geometry import MeshDomain, ProblemKind
from .perturb import Field, VertexTable, eval_field

TRI_RULE = "3-point interior rule (degree 2)"
EDGE_RULE = "2-point Gauss"
EXACT_EDGE_MASS = "exact P1 edge mass"

_TRI_BARY = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
_GAUSS2 = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])


@dataclass(frozen=True, eq=False)
class FormMatrix:
    matrix: sp.csr_matrix
    tag: str
    mesh_id: str
    quadrature: str = ""

    def __matmul__(self, x):
        return self.matrix @ x

    def to_coo_text(self) -> str:
        coo = self.matrix.tocoo()
        out = io.StringIO()
        for i, j, v in zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist()):
            out.write(f"{i} {j} {v:.17g}\n")
        return out.getvalue()


def p1_gradients(mesh: MeshDomain):
    """Per-triangle gradients of the three hat functions, shape (T, 3, 2),
    and the triangle areas."""
    p = mesh.vertices[mesh.triangles]
    x, y = p[..., 0], p[..., 1]
    two_a = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    g = np.empty((len(p), 3, 2))
    g[:, 0, 0], g[:, 0, 1] = y[:, 1] - y[:, 2], x[:, 2] - x[:, 1]
    g[:, 1, 0], g[:, 1, 1] = y[:, 2] - y[:, 0], x[:, 0] - x[:, 2]
    g[:, 2, 0], g[:, 2, 1] = y[:, 0] - y[:, 1], x[:, 1] - x[:, 0]
    g /= two_a[:, None, None]
    return g, 0.5 * two_a


def _assemble(n, rows, cols, vals):
    m = sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n)).tocsr()
    m.sum_duplicates()
    return m


def stiffness(mesh: MeshDomain) -> FormMatrix:
    g, area = p1_gradients(mesh)
    ke = area[:, None, None] * np.einsum("tak,tbk->tab", g, g)
    t = mesh.triangles
    rows = np.repeat(t[:, :, None], 3, axis=2)
    cols = np.repeat(t[:, None, :], 3, axis=1)
    return FormMatrix(_assemble(mesh.n_vertices, rows, cols, ke), "Stiffness", mesh.id, "exact")


def boundary_mass(mesh: MeshDomain, tag: str | None = "S") -> FormMatrix:
    idx = mesh.edges_with(tag)
    b = mesh.boundary_edges[idx]
    length = mesh.edge_lengths[idx]
    local = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
    me = length[:, None, None] * local
    rows = np.repeat(b[:, :, None], 2, axis=2)
    cols = np.repeat(b[:, None, :], 2, axis=1)
    label = "BoundaryMassS" if tag == "S" else f"BoundaryMass{tag or ''}"
    return FormMatrix(_assemble(mesh.n_vertices, rows, cols, me), label, mesh.id, EXACT_EDGE_MASS)


def boundary_mass_S(mesh: MeshDomain) -> FormMatrix:
    return boundary_mass(mesh, "S")


def robin_matrix(mesh: MeshDomain) -> FormMatrix:
    k = stiffness(mesh).matrix + boundary_mass_S(mesh).matrix
    return FormMatrix(k.tocsr(), "Robin", mesh.id, EXACT_EDGE_MASS)


def mass(mesh: MeshDomain) -> FormMatrix:
    _, area = p1_gradients(mesh)
    local = (np.ones((3, 3)) + np.eye(3)) / 12.0
    me = area[:, None, None] * local
    t = mesh.triangles
    rows = np.repeat(t[:, :, None], 3, axis=2)
    cols = np.repeat(t[:, None, :], 3, axis=1)
    return FormMatrix(_assemble(mesh.n_vertices, rows, cols, me), "Mass", mesh.id, "exact")


# ----------------------------------------------------------------- dofs


@dataclass(frozen=True, eq=False)
class DofMap:
    free: np.ndarray
    n_full: int

    @property
    def n_free(self) -> int:
        return len(self.free)

    def expand(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        out = np.zeros((self.n_full,) + x.shape[1:], dtype=x.dtype)
        out[self.free] = x
        return out

    def restrict(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x)[self.free]


def dof_map(mesh: MeshDomain, kind) -> DofMap:
    kind = ProblemKind.parse(kind)
    if kind is ProblemKind.STEKLOV_DIRICHLET:
        w = mesh.vertices_on("W")
        free = np.setdiff1d(np.arange(mesh.n_vertices), w)
    else:
        free = np.arange(mesh.n_vertices)
    return DofMap(free, mesh.n_vertices)


def dirichlet_restrict(matrix: FormMatrix | sp.spmatrix, mesh: MeshDomain):
    """Delete rows and columns of every vertex on a W edge (Γ included)."""
    if not np.any(mesh.tags == "W"):
        raise UnsupportedOperation("mesh has no W boundary to restrict on")
    dm = dof_map(mesh, ProblemKind.STEKLOV_DIRICHLET)
    m = matrix.matrix if isinstance(matrix, FormMatrix) else sp.csr_matrix(matrix)
    return m[dm.free][:, dm.free].tocsr(), dm


# ---------------------------------------------------------- derivative forms


def _as_columns(u):
    u = np.asarray(u, float)
    return (u[:, None], True) if u.ndim == 1 else (u, False)


def _finish(m, u_vec, v_vec):
    if u_vec and v_vec:
        return float(m[0, 0])
    if u_vec:
        return m[0]
    if v_vec:
        return m[:, 0]
    return m


def _check_field(psi):
    if isinstance(psi, VertexTable):
        raise UnsupportedOperation("derivative forms need an evaluable field")


def _triangle_jacobians(mesh: MeshDomain, psi: Field, field_data: str, g=None):
    """Per-triangle (T, 3 quadrature points, 2, 2) Jacobians of psi."""
    if field_data == "nodal":
        if g is None:
            g, _ = p1_gradients(mesh)
        vals = psi.values(mesh.vertices)[mesh.triangles]
        jac = np.einsum("tai,taj->tij", vals, g)
        return np.repeat(jac[:, None], 3, axis=1)
    if field_data == "exact":
        p = mesh.vertices[mesh.triangles]
        q = np.einsum("qa,tai->tqi", _TRI_BARY, p).reshape(-1, 2)
        _, jac, _ = eval_field(psi, q)
        return jac.reshape(len(p), 3, 2, 2)
    raise InvalidArgument(f"field_data must be 'nodal' or 'exact', got {field_data!r}")


def form_dA(mesh: MeshDomain, psi: Field, u, v, field_data: str = "nodal"):
    """Derivative of the Dirichlet form under the deformation psi:
    int div(psi) grad u . grad v - grad u^T (D psi + D psi^T) grad v.

    ``u`` and ``v`` may be nodal vectors or (n, m) column stacks, in which
    case the m_u x m_v matrix of values is returned.
    """
    _check_field(psi)
    U, u_vec = _as_columns(u)
    V, v_vec = _as_columns(v)
    g, area = p1_gradients(mesh)
    jac = _triangle_jacobians(mesh, psi, field_data, g).mean(axis=1)
    t = mesh.triangles
    gu = np.einsum("tak,tam->tkm", g, U[t])
    gv = np.einsum("tak,tam->tkm", g, V[t])
    div = jac[:, 0, 0] + jac[:, 1, 1]
    sym = jac + jac.transpose(0, 2, 1)
    tensor = area[:, None, None] * (div[:, None, None] * np.eye(2) - sym)
    m = np.einsum("tkr,tkl,tls->rs", gu, tensor, gv)
    return _finish(m, u_vec, v_vec)


def _edge_selection(mesh: MeshDomain, region):
    if region in (None, "all", "boundary"):
        return mesh.edges_with(None)
    if region not in ("S", "W"):
        raise InvalidArgument(f"region must be 'S', 'W' or None, got {region!r}")
    return mesh.edges_with(region)


def tangential_divergence(mesh: MeshDomain, psi: Field, region="S", field_data: str = "nodal"):
    """div psi - nu . (D psi) nu per edge, as (E, 2) values at the Gauss
    points (nodal data gives the same constant at both points)."""
    idx = _edge_selection(mesh, region)
    b = mesh.boundary_edges[idx]
    length = mesh.edge_lengths[idx]
    if field_data == "nodal":
        vals = psi.values(mesh.vertices)
        tau = mesh.edge_vectors[idx] / length[:, None]
        kappa = np.einsum("ei,ei->e", tau, vals[b[:, 1]] - vals[b[:, 0]]) / length
        return idx, np.repeat(kappa[:, None], 2, axis=1)
    if field_data == "exact":
        pa, pb = mesh.vertices[b[:, 0]], mesh.vertices[b[:, 1]]
        q = pa[:, None] + _GAUSS2[None, :, None] * (pb - pa)[:, None]
        _, jac, div = eval_field(psi, q.reshape(-1, 2))
        nu = np.repeat(mesh.edge_normals[idx], 2, axis=0)
        nn = np.einsum("ni,nij,nj->n", nu, jac, nu)
        return idx, (div - nn).reshape(-1, 2)
    raise InvalidArgument(f"field_data must be 'nodal' or 'exact', got {field_data!r}")


def form_dB(mesh: MeshDomain, psi: Field, u, v, region="S", field_data: str = "nodal"):
    """Derivative of the boundary mass: int_region u v (div psi - nu.(D psi)nu)."""
    _check_field(psi)
    U, u_vec = _as_columns(u)
    V, v_vec = _as_columns(v)
    idx, factor = tangential_divergence(mesh, psi, region, field_data)
    b = mesh.boundary_edges[idx]
    length = mesh.edge_lengths[idx]
    ua, ub, va, vb = U[b[:, 0]], U[b[:, 1]], V[b[:, 0]], V[b[:, 1]]
    m = np.zeros((U.shape[1], V.shape[1]))
    for q, s in enumerate(_GAUSS2):
        uq = (1 - s) * ua + s * ub
        vq = (1 - s) * va + s * vb
        m += np.einsum("e,er,es->rs", 0.5 * length * factor[:, q], uq, vq)
    return _finish(m, u_vec, v_vec)


def form_dV(mesh: MeshDomain, psi: Field, u, v, field_data: str = "nodal"):
    """Derivative of the volume integral of u v: int u v div psi."""
    _check_field(psi)
    U, u_vec = _as_columns(u)
    V, v_vec = _as_columns(v)
    g, area = p1_gradients(mesh)
    jac = _triangle_jacobians(mesh, psi, field_data, g)
    div = jac[..., 0, 0] + jac[..., 1, 1]
    t = mesh.triangles
    uq = np.einsum("qa,tam->tqm", _TRI_BARY, U[t])
    vq = np.einsum("qa,tam->tqm", _TRI_BARY, V[t])
    if field_data == "nodal":
        # exact P1 mass weighted by the constant divergence
        local = (np.ones((3, 3)) + np.eye(3)) / 12.0
        m = np.einsum("t,ab,tar,tbs->rs", area * div[:, 0], local, U[t], V[t])
    else:
        m = np.einsum("t,tq,tqr,tqs->rs", area / 3.0, div, uq, vq)
    return _finish(m, u_vec, v_vec)


# ------------------------------------------------------------ flux recovery


@dataclass(frozen=True, eq=False)
class Flux:
    """Recovered normal derivative on one boundary portion."""

    region: str
    vertices: np.ndarray
    nodal: np.ndarray      # (n_vertices,) or (n_vertices, m); zero off-region
    edges: np.ndarray
    edge_values: np.ndarray

    def at_gauss_points(self, mesh: MeshDomain) -> np.ndarray:
        b = mesh.boundary_edges[self.edges]
        ga, gb = self.nodal[b[:, 0]], self.nodal[b[:, 1]]
        return np.stack([(1 - s) * ga + s * gb for s in _GAUSS2], axis=1)


def flux_recovery(mesh: MeshDomain, e, region: str = "W", lam=None) -> Flux:
    """Variational normal flux: solve M_region g = K e - lam M_S e on the
    vertices of ``region``. ``lam`` defaults to the Rayleigh quotient."""
    E, vec = _as_columns(e)
    idx = _edge_selection(mesh, region)
    if len(idx) == 0 or mesh.edge_lengths[idx].sum() <= 0:
        raise InvalidArgument(f"region {region!r} has zero measure")
    K = stiffness(mesh).matrix
    Ms = boundary_mass_S(mesh).matrix
    KE, ME = K @ E, Ms @ E
    if lam is None:
        num = np.einsum("nm,nm->m", E, KE)
        den = np.einsum("nm,nm->m", E, ME)
        lam = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    lam = np.broadcast_to(np.asarray(lam, float), (E.shape[1],))
    rhs = KE - ME * lam[None, :]
    verts = np.unique(mesh.boundary_edges[idx])
    Mr = boundary_mass(mesh, None if region in (None, "all", "boundary") else region).matrix
    Mr = Mr[verts][:, verts].tocsc()
    g = splu(Mr).solve(np.ascontiguousarray(rhs[verts]))
    nodal = np.zeros_like(E)
    nodal[verts] = g
    b = mesh.boundary_edges[idx]
    edge_vals = 0.5 * (nodal[b[:, 0]] + nodal[b[:, 1]])
    if vec:
        nodal, edge_vals = nodal[:, 0], edge_vals[:, 0]
    return Flux(str(region), verts, nodal, idx, edge_vals)
