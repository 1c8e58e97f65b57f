"""Discrete sloshing spectra through the compact solution operator.

For the Steklov-Dirichlet problem the operator is f -> K_free^{-1} M_S f
(its eigenvalues are mu = 1/lambda); for the Steklov-Neumann and pure
Steklov problems the Robin-shifted matrix K + M_S replaces K, giving
mu = 1/(lambda + 1). Either way the matrix being factored is symmetric
positive definite and M_S's null space never enters the iteration.
"""
from __future__ import annotations

import io
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
from scipy.sparse.linalg import splu

from .assembly import DofMap, boundary_mass_S, dof_map, robin_matrix, stiffness
from .errors import InvalidArgument, SingularSystem, TruncatedSpectrumWarning
from .geometry import MeshDomain, ProblemKind

DENSE_LIMIT = 3000


def operator_matrices(mesh: MeshDomain, kind):
    """(A, B, dofmap): the definite matrix and the S-mass on free dofs."""
    kind = mesh.check_kind(kind)
    dm = dof_map(mesh, kind)
    A = robin_matrix(mesh).matrix if kind.robin else stiffness(mesh).matrix
    B = boundary_mass_S(mesh).matrix
    if kind is ProblemKind.STEKLOV_DIRICHLET:
        A = A[dm.free][:, dm.free]
        B = B[dm.free][:, dm.free]
    return A.tocsc(), B.tocsr(), dm


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Ascending eigenvalues with eigenvectors orthonormal in a (SD) or in
    a + S-mass (SN and pure Steklov). ``mu`` holds the operator eigenvalues,
    ``vectors`` full nodal vectors (zero on W for SD)."""

    kind: ProblemKind
    mesh: MeshDomain
    lam: np.ndarray
    mu: np.ndarray
    vectors: np.ndarray
    residuals: np.ndarray
    dofmap: DofMap
    method: str = ""
    iterations: int = 0
    info: dict = field(default_factory=dict)

    @property
    def mesh_id(self) -> str:
        return self.mesh.id

    @property
    def count(self) -> int:
        return len(self.lam)

    @property
    def lam_hat(self):
        return self.lam + 1.0 if self.kind.robin else None

    @property
    def operator_lam(self) -> np.ndarray:
        """lambda for SD, lambda + 1 for the Robin-shifted kinds."""
        return 1.0 / self.mu

    def inner(self, x, y) -> np.ndarray:
        A, _, dm = operator_matrices(self.mesh, self.kind)
        return dm.restrict(x).T @ (A @ dm.restrict(y))


def _relative_residuals(A, B, X, lam_op):
    AX, BX = A @ X, B @ X
    R = AX - BX * lam_op[None, :]
    den = np.linalg.norm(AX, axis=0) + np.abs(lam_op) * np.linalg.norm(BX, axis=0)
    return np.linalg.norm(R, axis=0) / np.where(den > 0, den, 1.0)


def _mgs(A, X, passes=2):
    X = np.array(X, float, copy=True)
    for _ in range(passes):
        for j in range(X.shape[1]):
            for i in range(j):
                X[:, j] -= (X[:, i] @ (A @ X[:, j])) * X[:, i]
            X[:, j] /= np.sqrt(X[:, j] @ (A @ X[:, j]))
    return X


def _fix_signs(X):
    for j in range(X.shape[1]):
        k = np.argmax(np.abs(X[:, j]))
        if X[k, j] < 0:
            X[:, j] = -X[:, j]
    return X


def _factor(A):
    try:
        lu = splu(A.tocsc())
    except RuntimeError as exc:
        raise SingularSystem(f"factorization failed: {exc}") from None
    if not np.all(np.isfinite(lu.U.diagonal())) or np.any(lu.U.diagonal() == 0):
        raise SingularSystem("factorization produced a zero pivot")
    return lu


def _dense_top(A, B, count):
    n = A.shape[0]
    mu, X = la.eigh(B.toarray(), A.toarray(), subset_by_index=[n - count, n - 1])
    return mu[::-1], X[:, ::-1], 1


def _subspace_top(A, B, count, seed, tol, max_iter, rank):
    lu = _factor(A)
    rng = np.random.default_rng(seed)
    n = A.shape[0]
    b = int(min(rank, max(2 * count, count + 8)))
    X = lu.solve(np.ascontiguousarray(B @ rng.standard_normal((n, b))))
    theta = np.ones(b)
    for it in range(1, max_iter + 1):
        Y = lu.solve(np.ascontiguousarray(B @ X))
        H = Y.T @ (B @ Y)
        G = Y.T @ (A @ Y)
        theta, C = la.eigh(0.5 * (H + H.T), 0.5 * (G + G.T))
        theta, C = theta[::-1], C[:, ::-1]
        X = Y @ C
        res = _relative_residuals(A, B, X[:, :count], 1.0 / theta[:count])
        if res.max() < tol:
            break
    else:
        warnings.warn(f"subspace iteration stopped at {max_iter} iterations "
                      f"(residual {res.max():.2e})", RuntimeWarning, stacklevel=3)
    return theta[:count], X[:, :count], it


def solve(mesh: MeshDomain, kind, count: int, *, method: str = "auto", seed: int = 0,
          tol: float = 1e-11, max_iter: int = 2000) -> Spectrum:
    """Lowest ``count`` eigenpairs of the chosen sloshing problem.

    ``method`` is "iterate" (factor once, block subspace iteration on the
    solution operator), "dense" (generalized dense eigensolve; the test
    oracle) or "auto" (dense below DENSE_LIMIT free dofs).
    """
    kind = ProblemKind.parse(kind)
    if not isinstance(count, (int, np.integer)) or count < 1:
        raise InvalidArgument("count must be a positive integer")
    A, B, dm = operator_matrices(mesh, kind)
    rank = int(np.count_nonzero(B.diagonal() > 0))
    if count > rank:
        warnings.warn(f"only {rank} S-boundary dofs; returning {rank} eigenpairs",
                      TruncatedSpectrumWarning, stacklevel=2)
        count = rank
    if method == "auto":
        method = "dense" if A.shape[0] < DENSE_LIMIT else "iterate"
    if method == "dense":
        try:
            mu, X, iters = _dense_top(A, B, count)
        except la.LinAlgError as exc:
            raise SingularSystem(str(exc)) from None
    elif method == "iterate":
        mu, X, iters = _subspace_top(A, B, count, seed, tol, max_iter, rank)
    else:
        raise InvalidArgument(f"unknown method {method!r}")

    X = _fix_signs(_mgs(A, X))
    lam = 1.0 / mu - (1.0 if kind.robin else 0.0)
    order = np.argsort(lam, kind="stable")
    lam, mu, X = lam[order], mu[order], X[:, order]
    res = _relative_residuals(A, B, X, 1.0 / mu)
    return Spectrum(kind, mesh, lam, mu, dm.expand(X), res, dm, method, iters)


def residual(spectrum: Spectrum) -> np.ndarray:
    """Relative residual |A e - lam B e| / (|A e| + |lam| |B e|) per pair."""
    return np.array([pair_residual(spectrum.mesh, spectrum.kind, spectrum.lam[k],
                                   spectrum.vectors[:, k]) for k in range(spectrum.count)])


def pair_residual(mesh: MeshDomain, kind, lam: float, vector) -> float:
    kind = ProblemKind.parse(kind)
    A, B, dm = operator_matrices(mesh, kind)
    x = dm.restrict(np.asarray(vector, float))
    if not np.any(x):
        raise InvalidArgument("the zero vector is not an eigenvector")
    lam_op = lam + 1.0 if kind.robin else lam
    return float(_relative_residuals(A, B, x[:, None], np.array([lam_op]))[0])


# ----------------------------------------------------------------- clusters


@dataclass(frozen=True)
class Cluster:
    start: int
    m: int
    center: float
    width: float

    @property
    def indices(self) -> np.ndarray:
        return np.arange(self.start, self.start + self.m)

    @property
    def stop(self) -> int:
        return self.start + self.m


def make_cluster(values, start: int, m: int = 1) -> Cluster:
    lam = values.lam if isinstance(values, Spectrum) else np.asarray(values, float)
    if start < 0 or m < 1 or start + m > len(lam):
        raise InvalidArgument(f"cluster [{start}, {start + m}) outside the spectrum")
    sub = lam[start:start + m]
    center = float(sub.mean())
    return Cluster(int(start), int(m), center, float(np.ptp(sub) / max(1.0, abs(center))))


def detect_clusters(values, tol_cluster: float = 1e-2) -> list[Cluster]:
    """Maximal runs of eigenvalues whose consecutive relative spacing is at
    most ``tol_cluster``; singletons are dropped."""
    lam = values.lam if isinstance(values, Spectrum) else np.asarray(values, float)
    out = []
    start = 0
    for k in range(1, len(lam) + 1):
        close = (k < len(lam)
                 and lam[k] - lam[k - 1] <= tol_cluster * max(1.0, abs(lam[k - 1])))
        if not close:
            if k - start > 1:
                out.append(make_cluster(lam, start, k - start))
            start = k
    return out


# ------------------------------------------------------------------ min-max


@dataclass
class MinMaxReport:
    n_trials: int
    violations: int
    worst_margin: float
    attainment_error: float
    mu1: float
    second_mode_ok: bool
    tol: float

    @property
    def ok(self) -> bool:
        return self.violations == 0 and self.attainment_error <= self.tol and self.second_mode_ok


def minmax_check(spectrum: Spectrum, n_trials: int = 100, seed: int = 0,
                 tol: float = 1e-8) -> MinMaxReport:
    """Check int_S phi^2 <= mu_1 over random unit-norm phi (norm of the
    kind's inner product) and equality at the first eigenvector."""
    A, B, dm = operator_matrices(spectrum.mesh, spectrum.kind)
    rng = np.random.default_rng(seed)
    E = dm.restrict(spectrum.vectors)
    mu1 = float(spectrum.mu[0])
    n = A.shape[0]
    phi = rng.standard_normal((n, n_trials))
    # half the trials sit close to the maximiser, where violations would show
    near = n_trials // 2
    if near:
        scales = 10.0 ** rng.uniform(-6, 0, near)
        phi[:, :near] = E[:, [0]] + scales[None, :] * phi[:, :near] / np.sqrt(n)
    norms = np.sqrt(np.einsum("nk,nk->k", phi, A @ phi))
    phi = phi / norms
    values = np.einsum("nk,nk->k", phi, B @ phi)
    margins = values - mu1
    e1 = E[:, 0]
    att = abs(e1 @ (B @ e1) / (e1 @ (A @ e1)) - mu1)
    second = True
    if spectrum.count > 1:
        e2 = E[:, 1]
        second = bool(e2 @ (B @ e2) <= mu1 + tol)
    return MinMaxReport(n_trials, int(np.sum(margins > tol)), float(margins.max(initial=-np.inf)),
                        float(att), mu1, second, tol)


# ------------------------------------------------------------------- export


def spectrum_csv(spectrum: Spectrum, header: dict | None = None) -> str:
    out = io.StringIO()
    for key, value in (header or {}).items():
        out.write(f"# {key}={value}\n")
    out.write("k,lambda,residual\n")
    for k, (lam, r) in enumerate(zip(spectrum.lam.tolist(), spectrum.residuals.tolist()), 1):
        out.write(f"{k},{lam:.12g},{r:.3e}\n")
    return out.getvalue()


def eigenvectors_csv(spectrum: Spectrum) -> str:
    out = io.StringIO()
    out.write("k,vertex,value\n")
    for k in range(spectrum.count):
        for i, v in enumerate(spectrum.vectors[:, k].tolist()):
            out.write(f"{k + 1},{i},{v:.12g}\n")
    return out.getvalue()
