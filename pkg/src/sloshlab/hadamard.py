"""First-order cluster analysis under a deformation x -> x + t psi(x).

Sign table (positive mu-slope means mu grows along +t psi):

    kind       normalisation     mu          M_rs
    sd         a(e_r, e_s)=d     1/lambda    dB_S - mu dA
    sn         â(e_r, e_s)=d     1/(lam+1)   (1 - mu) dB_S - mu dA
    steklov    a(e_r, e_s)=d     1/lambda    dB_S - mu dA

lambda-slopes are -nu/mu^2 for every kind (for sn the shift by one does not
change derivatives). With the default nodal field data the matrices are the
exact derivatives of the discrete pencil, so finite differences on
transplanted meshes reproduce them up to O(t).
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .assembly import (_GAUSS2, _as_columns, flux_recovery, form_dA, form_dB,
                       p1_gradients, stiffness)
from .errors import (IllConditionedClusterWarning, InvalidArgument, InvalidCase,
                     TrackingFailure, UndefinedForSimple)
from .geometry import MeshDomain, ProblemKind
from .perturb import Field, c2_norm_estimate, eval_field, mesh_bbox, transplant
from .spectral import Cluster, Spectrum, solve

VERIFY_WIDTH = 1e-4


@dataclass
class ClusterDerivative:
    cluster: Cluster
    kind: ProblemKind
    field_id: str
    field: dict
    mu: float
    matrix: np.ndarray
    mu_slopes: np.ndarray          # descending
    lam_slopes: np.ndarray         # ascending, one per lambda branch
    score: float | None
    asymmetry: float = 0.0
    floor: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return self.cluster.m

    @property
    def spread(self) -> float:
        """Difference of the extreme lambda-slopes."""
        return float(self.lam_slopes[-1] - self.lam_slopes[0])

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "cluster": {"start": self.cluster.start, "m": self.cluster.m,
                        "center": self.cluster.center, "width": self.cluster.width},
            "field_id": self.field_id,
            "field": self.field,
            "mu": self.mu,
            "matrix": self.matrix.tolist(),
            "mu_slopes": self.mu_slopes.tolist(),
            "lambda_slopes": self.lam_slopes.tolist(),
            "score": self.score,
            "asymmetry": self.asymmetry,
            "floor": self.floor,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _cluster_basis(spectrum: Spectrum, cluster: Cluster):
    """Cluster vectors in the normalisation of the sign table, and mu."""
    if cluster.stop > spectrum.count:
        raise InvalidArgument("cluster extends past the computed spectrum")
    idx = cluster.indices
    E = spectrum.vectors[:, idx]
    lam = spectrum.lam[idx]
    if spectrum.kind is ProblemKind.PURE_STEKLOV:
        if np.any(lam <= 1e-10):
            raise InvalidArgument("the constant Steklov mode has no derivative")
        K = stiffness(spectrum.mesh).matrix
        w, V = np.linalg.eigh(E.T @ (K @ E))
        E = E @ (V / np.sqrt(w)) @ V.T
        return E, float(np.mean(1.0 / lam))
    return E, float(np.mean(spectrum.mu[idx]))


def no_splitting_score(M) -> float:
    """|M - (tr M / m) I|_F / (|M|_F + 1e-14); zero iff M is a scalar matrix."""
    M = np.atleast_2d(np.asarray(M, float))
    if M.shape[0] != M.shape[1]:
        raise InvalidArgument("matrix must be square")
    m = M.shape[0]
    if m < 2:
        raise UndefinedForSimple("the score needs a cluster of multiplicity at least 2")
    dev = M - np.trace(M) / m * np.eye(m)
    return float(np.linalg.norm(dev) / (np.linalg.norm(M) + 1e-14))


def _raw_matrix(mesh, kind, E, mu, psi, field_data):
    dA = np.atleast_2d(form_dA(mesh, psi, E, E, field_data=field_data))
    dB = np.atleast_2d(form_dB(mesh, psi, E, E, region="S", field_data=field_data))
    if kind is ProblemKind.STEKLOV_NEUMANN:
        return (1.0 - mu) * dB - mu * dA
    return dB - mu * dA


def cluster_matrix(mesh: MeshDomain, spectrum: Spectrum, cluster: Cluster, psi: Field,
                   kind=None, field_data: str = "nodal") -> ClusterDerivative:
    """m x m matrix <T'(0)[psi] e_r, e_s> over the cluster's eigenvectors."""
    kind = spectrum.kind if kind is None else ProblemKind.parse(kind)
    if kind is not spectrum.kind:
        raise InvalidArgument(f"spectrum is {spectrum.kind.value}, not {kind.value}")
    if mesh is not spectrum.mesh and mesh.id != spectrum.mesh_id:
        raise InvalidArgument("mesh does not match the spectrum")
    if cluster.m > 1 and cluster.width > VERIFY_WIDTH:
        warnings.warn(f"cluster width {cluster.width:.2e} exceeds {VERIFY_WIDTH:g}",
                      IllConditionedClusterWarning, stacklevel=2)
    E, mu = _cluster_basis(spectrum, cluster)
    raw = _raw_matrix(spectrum.mesh, kind, E, mu, psi, field_data)
    M = 0.5 * (raw + raw.T)
    asym = float(np.linalg.norm(raw - raw.T) / (2 * np.linalg.norm(raw) + 1e-300))
    return _derivative(cluster, kind, psi, mu, M, asym, _noise_level(spectrum.mesh, psi, mu))


def _noise_level(mesh, psi, mu):
    """Round-off size of M: entries are bounded by about 3 (1 + mu) |D psi|
    for normalised eigenvectors, and the computed D psi carries cancellation
    error of order sum_a |psi_a| |grad phi_a| (a translation gives pure noise)."""
    g, _ = p1_gradients(mesh)
    vals = np.linalg.norm(psi.values(mesh.vertices), axis=1)[mesh.triangles]
    bound = np.einsum("ta,ta->t", vals, np.linalg.norm(g, axis=2))
    return 1e-12 * 3.0 * (1.0 + mu) * float(bound.max(initial=0.0))


def _derivative(cluster, kind, psi, mu, M, asym=0.0, noise=0.0):
    nu = np.linalg.eigvalsh(M)[::-1]
    score = None
    if cluster.m > 1:
        # a matrix at round-off level carries no direction information
        score = 0.0 if np.linalg.norm(M) <= noise else no_splitting_score(M)
    return ClusterDerivative(cluster, kind, psi.id, psi.describe(), mu, M, nu,
                             -nu / mu**2, score, asym, {"noise": noise})


def predicted_slopes(cd: ClusterDerivative) -> np.ndarray:
    """lambda-slopes of the cluster branches, ascending."""
    return cd.lam_slopes.copy()


# ------------------------------------------------------------- FD oracle


@dataclass
class FDSlopes:
    t: np.ndarray
    lam: np.ndarray           # (len(t), m), each row sorted ascending
    mu: np.ndarray
    lam_slopes: np.ndarray    # derivative at t=0 (quadratic fit when possible)
    mu_slopes: np.ndarray
    linear_slopes: np.ndarray
    r2: np.ndarray            # of the linear fit of lambda_k(t)
    fit_residual: np.ndarray


def _lin_fit(t, y):
    """Least-squares line through (t, y); returns slope, R^2, rms residual."""
    A = np.column_stack([t, np.ones_like(t)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    res = y - A @ coef
    ss_res = (res**2).sum(axis=0)
    ss_tot = ((y - y.mean(axis=0)) ** 2).sum(axis=0)
    scale = np.maximum(np.abs(y).max(axis=0), 1.0)
    tiny = ss_tot <= (1e-13 * scale) ** 2 * len(t)
    r2 = np.where(tiny, 1.0, 1.0 - ss_res / np.where(tiny, 1.0, ss_tot))
    return coef[0], r2, np.sqrt(ss_res / len(t))


def _derivative_at_zero(t, y):
    if len(t) >= 3:
        return np.polyfit(t, y, 2)[1]
    return _lin_fit(t, y)[0]


def _tracked_spectrum(mesh, psi, cluster, kind, t_grid, method="auto", norm=None):
    kind = ProblemKind.parse(kind)
    t = np.concatenate([[0.0], np.asarray(t_grid, float)])
    if np.any(np.diff(np.sort(t)) == 0):
        raise InvalidArgument("t_grid must be distinct and nonzero")
    count = cluster.stop + 1
    if norm is None and np.any(t != 0):
        norm = c2_norm_estimate(psi, mesh=mesh, bbox=mesh_bbox(mesh))
    lam = []
    base = None
    for tk in t:
        moved = transplant(mesh, psi, tk, norm=norm).mesh
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            spec = solve(moved, kind, count, method=method)
        vals = spec.lam
        if base is None:
            base = vals
            lo = base[cluster.start] - base[cluster.start - 1] if cluster.start > 0 else np.inf
            hi = base[cluster.stop] - base[cluster.stop - 1] if cluster.stop < len(base) else np.inf
            allowed = 0.5 * min(lo, hi)
        cur = np.sort(vals[cluster.start:cluster.stop])
        if len(vals) < cluster.stop:
            raise TrackingFailure("spectrum truncated below the cluster", t=tk)
        drift = np.abs(cur - base[cluster.start:cluster.stop]).max()
        if drift >= allowed:
            raise TrackingFailure(f"cluster drifted by {drift:.3g} at t={tk:g}, "
                                  f"half the neighbour gap is {allowed:.3g}", t=float(tk))
        lam.append(cur)
    return t, np.array(lam)


def fd_slopes(mesh: MeshDomain, psi: Field, cluster: Cluster, kind, t_grid,
              method: str = "auto", norm: float | None = None) -> FDSlopes:
    """Finite-difference slopes of the cluster's sorted eigenvalues."""
    kind = ProblemKind.parse(kind)
    t, lam = _tracked_spectrum(mesh, psi, cluster, kind, t_grid, method, norm)
    if kind is ProblemKind.PURE_STEKLOV and np.any(lam[0] <= 1e-10):
        mu = np.full_like(lam, np.inf)
    else:
        mu = 1.0 / (lam + 1.0) if kind.robin else 1.0 / lam
    slope = _derivative_at_zero(t, lam)
    mu_slope = _derivative_at_zero(t, mu) if np.all(np.isfinite(mu)) else np.full(lam.shape[1], np.nan)
    lin, r2, res = _lin_fit(t, lam)
    return FDSlopes(t, lam, mu, np.atleast_1d(slope), np.atleast_1d(mu_slope),
                    np.atleast_1d(lin), np.atleast_1d(r2), np.atleast_1d(res))


# -------------------------------------------------------- reduced formulas

CASES = {"SD-W": (ProblemKind.STEKLOV_DIRICHLET, "W"),
         "SD-S": (ProblemKind.STEKLOV_DIRICHLET, "S"),
         "SN-S": (ProblemKind.STEKLOV_NEUMANN, "S"),
         "SN-W": (ProblemKind.STEKLOV_NEUMANN, "W")}


def _edge_quantities(mesh, idx, psi, field_data):
    """alpha = psi.nu and nu.(D psi)nu at the two Gauss points of each edge."""
    b = mesh.boundary_edges[idx]
    nu = mesh.edge_normals[idx]
    vals = psi.values(mesh.vertices)
    va, vb = vals[b[:, 0]], vals[b[:, 1]]
    alpha = np.stack([np.einsum("ei,ei->e", (1 - s) * va + s * vb, nu) for s in _GAUSS2], axis=1)
    if field_data == "nodal":
        g, _ = p1_gradients(mesh)
        tri = mesh.edge_triangles[idx]
        jac = np.einsum("tai,taj->tij", vals[mesh.triangles[tri]], g[tri])
        nn = np.einsum("ei,eij,ej->e", nu, jac, nu)
        return alpha, np.repeat(nn[:, None], 2, axis=1)
    if field_data == "exact":
        pa, pb = mesh.vertices[b[:, 0]], mesh.vertices[b[:, 1]]
        q = (pa[:, None] + _GAUSS2[None, :, None] * (pb - pa)[:, None]).reshape(-1, 2)
        v, jac, _ = eval_field(psi, q)
        nu2 = np.repeat(nu, 2, axis=0)
        alpha = np.einsum("ni,ni->n", v, nu2).reshape(-1, 2)
        nn = np.einsum("ni,nij,nj->n", nu2, jac, nu2).reshape(-1, 2)
        return alpha, nn
    raise InvalidArgument(f"field_data must be 'nodal' or 'exact', got {field_data!r}")


def _edge_integral(length, weight, fa, fb):
    """sum_e |e|/2 sum_q weight_eq f_r(q) f_s(q), with f linear on the edge."""
    m = np.zeros((fa[0].shape[1], fb[0].shape[1]))
    for q, s in enumerate(_GAUSS2):
        m += np.einsum("e,er,es->rs", 0.5 * length * weight[:, q], fa[q], fb[q])
    return m


def reduced_matrix(case: str, mesh: MeshDomain, spectrum: Spectrum, cluster: Cluster,
                   psi: Field, field_data: str = "nodal") -> np.ndarray:
    """Boundary-only form of the cluster matrix for a field acting on one
    side. Cases: SD-W, SD-S, SN-S, SN-W."""
    if case not in CASES:
        raise InvalidCase(f"unknown case {case!r}; expected one of {sorted(CASES)}")
    kind, side = CASES[case]
    if spectrum.kind is not kind:
        raise InvalidCase(f"case {case} needs a {kind.value} spectrum")
    other = "S" if side == "W" else "W"
    vals = psi.values(mesh.vertices)
    if np.any(vals[mesh.vertices_on(other)]):
        raise InvalidCase(f"field does not vanish on {other}")

    E, mu = _cluster_basis(spectrum, cluster)
    lam = spectrum.lam[cluster.indices]
    idx = mesh.edges_with(side)
    b = mesh.boundary_edges[idx]
    length = mesh.edge_lengths[idx]
    alpha, nn = _edge_quantities(mesh, idx, psi, field_data)

    def at_gauss(F):
        return [(1 - s) * F[b[:, 0]] + s * F[b[:, 1]] for s in _GAUSS2]

    # tangential derivative, constant on each edge
    dtau = (E[b[:, 1]] - E[b[:, 0]]) / length[:, None]
    tang = np.einsum("e,er,es->rs", length * alpha.mean(axis=1), dtau, dtau)

    if case == "SD-W":
        flux = flux_recovery(mesh, E, "W", lam=lam)
        g = flux.nodal if flux.nodal.ndim == 2 else flux.nodal[:, None]
        G = at_gauss(g)
        return mu * _edge_integral(length, alpha, G, G)
    if case == "SN-W":
        return -mu * tang
    ev = at_gauss(E)
    lam_c = float(np.mean(lam))
    grad2 = tang + lam_c**2 * _edge_integral(length, alpha, ev, ev)
    ee_nn = _edge_integral(length, nn, ev, ev)
    if case == "SD-S":
        return -mu * grad2 - ee_nn
    lam_hat = lam_c + 1.0
    return -(1.0 / lam_hat) * grad2 - ((lam_hat - 1.0) / lam_hat) * ee_nn


def gauge_discrepancy(A, B) -> dict:
    """Compare two matrices modulo scalar*I: off-diagonal and centred
    diagonal differences relative to the larger matrix scale."""
    A, B = np.atleast_2d(A), np.atleast_2d(B)
    D = A - B
    m = len(D)
    off = D - np.diag(np.diag(D))
    diag = np.diag(D) - np.diag(D).mean()
    scale = max(np.abs(A).max(), np.abs(B).max(), 1e-300)
    return {"offdiag": float(np.abs(off).max(initial=0.0) / scale) if m > 1 else 0.0,
            "diag": float(np.abs(diag).max() / scale),
            "shift": float(np.diag(D).mean()),
            "scale": float(scale)}
