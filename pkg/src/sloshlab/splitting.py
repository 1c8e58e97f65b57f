"""Search, verification and the iterative driver that splits clusters.

Every candidate is a normal bump on one boundary side, scaled so that its
sampled C^2 norm is just below the current budget; the permanent step
moves the mesh by t psi with t <= 1, so each step spends at most its
budget and the halving budgets sum to less than twice the first one.
"""
from __future__ import annotations

import json
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, InvalidSupport, NoCandidateFound, SloshError
from .geometry import MeshDomain, ProblemKind
from .hadamard import ClusterDerivative, _lin_fit, _tracked_spectrum, cluster_matrix
from .perturb import (Field, InteriorBump, boundary_points, c2_norm_estimate, mesh_bbox,
                      normal_bump, transplant)
from .spectral import Cluster, Spectrum, detect_clusters, make_cluster, solve

DEFAULT_T_GRID = (0.125, 0.25, 0.5, 1.0)
SCORE_FLOOR = 1e-8


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("SLOSHLAB_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class Candidate:
    field: Field
    norm: float
    derivative: ClusterDerivative

    @property
    def score(self) -> float:
        return self.derivative.score or 0.0


def _side_length(mesh: MeshDomain, side: str) -> float:
    return mesh.boundary_length(side)


def _normal_candidates(mesh, side, n, rng):
    length = _side_length(mesh, side)
    if length <= 0:
        raise InvalidArgument(f"mesh has no {side!r} boundary")
    fractions = (np.arange(n) + rng.uniform(0.0, 1.0, n)) / n
    radii = rng.uniform(0.05, 0.12, n) * length
    anchors = boundary_points(mesh, side, fractions)
    out = []
    for p, r in zip(anchors, radii):
        for _ in range(8):
            try:
                out.append(normal_bump(mesh, p, r, 1.0, side))
                break
            except InvalidSupport:
                r *= 0.7
    return out


def _interior_candidates(mesh, n, rng):
    length = mesh.boundary_length(None)
    bnd = mesh.vertices[np.unique(mesh.boundary_edges)]
    centroids = mesh.vertices[mesh.triangles].mean(axis=1)
    dist = np.min(np.linalg.norm(centroids[:, None] - bnd[None], axis=2), axis=1)
    out = []
    for _ in range(n):
        r = rng.uniform(0.05, 0.12) * length
        ok = np.flatnonzero(dist > 1.05 * r)
        while len(ok) == 0 and r > 1e-6:
            r *= 0.7
            ok = np.flatnonzero(dist > 1.05 * r)
        c = centroids[rng.choice(ok)]
        ang = rng.uniform(0, 2 * np.pi)
        out.append(InteriorBump(tuple(c), float(r), 1.0, (np.cos(ang), np.sin(ang))))
    return out


def rank_candidates(mesh: MeshDomain, spectrum: Spectrum, cluster: Cluster, side: str = "S",
                    eps: float = 0.05, n_candidates: int = 16, seed: int = 0,
                    family: str = "normal") -> list[Candidate]:
    """Sampled candidates scaled to the budget, best score first."""
    if cluster.m < 2:
        raise InvalidArgument("splitting needs a cluster of multiplicity at least 2")
    if not eps > 0:
        raise InvalidArgument("budget must be positive")
    if family == "normal":
        if side not in ("S", "W"):
            raise InvalidArgument(f"side must be 'S' or 'W', got {side!r}")
        if side == "W" and spectrum.kind is ProblemKind.PURE_STEKLOV:
            raise InvalidArgument("pure Steklov domains have no W side")
    rng = np.random.default_rng(seed)
    if family == "normal":
        units = _normal_candidates(mesh, side, n_candidates, rng)
    elif family == "interior":
        units = _interior_candidates(mesh, n_candidates, rng)
    else:
        raise InvalidArgument(f"unknown candidate family {family!r}")
    bbox = mesh_bbox(mesh)

    def build(unit):
        c2 = c2_norm_estimate(unit, bbox=bbox)
        amp = 0.99 * eps / c2
        psi = unit.scaled(amp) if hasattr(unit, "scaled") else InteriorBump(
            unit.center, unit.radius, amp, unit.direction)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            cd = cluster_matrix(mesh, spectrum, cluster, psi)
        return Candidate(psi, c2 * amp, cd)

    workers = min(_threads(), max(1, len(units)))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            cands = list(pool.map(build, units))
    else:
        cands = [build(u) for u in units]
    order = sorted(range(len(cands)), key=lambda i: (-cands[i].score, i))
    return [cands[i] for i in order]


def find_splitting(mesh: MeshDomain, spectrum: Spectrum, cluster: Cluster, kind=None,
                   side: str = "S", eps: float = 0.05, n_candidates: int = 16, seed: int = 0,
                   family: str = "normal") -> tuple[Field, ClusterDerivative]:
    """Best-scoring admissible bump for splitting ``cluster``."""
    if kind is not None and ProblemKind.parse(kind) is not spectrum.kind:
        raise InvalidArgument("kind does not match the spectrum")
    ranked = rank_candidates(mesh, spectrum, cluster, side, eps, n_candidates, seed, family)
    best = ranked[0].score if ranked else 0.0
    if best < SCORE_FLOOR:
        raise NoCandidateFound(f"best no-splitting score {best:.3g} is below {SCORE_FLOOR:g}",
                               best_score=best)
    return ranked[0].field, ranked[0].derivative


# -------------------------------------------------------------- verification


@dataclass
class SplitReport:
    cluster: Cluster
    field_id: str
    field: dict
    t: np.ndarray
    lam: np.ndarray
    gaps: np.ndarray          # adjacent gaps inside the cluster, per t
    width: np.ndarray         # lambda_max - lambda_min, per t
    slope: float
    intercept: float
    r2: float
    predicted_spread: float
    rel_error: float
    verdict: str
    tolerance: float = 0.1

    @property
    def confirmed(self) -> bool:
        return self.verdict == "split-confirmed"

    def to_dict(self) -> dict:
        return {
            "cluster": {"start": self.cluster.start, "m": self.cluster.m,
                        "center": self.cluster.center, "width": self.cluster.width},
            "field_id": self.field_id,
            "field": self.field,
            "t": self.t.tolist(),
            "lambda": self.lam.tolist(),
            "gaps": self.gaps.tolist(),
            "width": self.width.tolist(),
            "slope": self.slope,
            "intercept": self.intercept,
            "r2": self.r2,
            "predicted_spread": self.predicted_spread,
            "rel_error": self.rel_error,
            "verdict": self.verdict,
            "tolerance": self.tolerance,
        }


def verify_split(mesh: MeshDomain, psi: Field, cluster: Cluster, kind, t_grid=DEFAULT_T_GRID,
                 derivative: ClusterDerivative | None = None, spectrum: Spectrum | None = None,
                 tol: float = 0.1, r2_min: float = 0.99, gap_floor: float = 1e-9,
                 norm: float | None = None) -> SplitReport:
    """Measure how the cluster opens along t psi and compare with the
    first-order prediction."""
    kind = ProblemKind.parse(kind)
    if derivative is None:
        if spectrum is None:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                spectrum = solve(mesh, kind, cluster.stop + 1)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            derivative = cluster_matrix(mesh, spectrum, cluster, psi)
    t, lam = _tracked_spectrum(mesh, psi, cluster, kind, t_grid, norm=norm)
    gaps = np.diff(lam, axis=1)
    width = lam[:, -1] - lam[:, 0]
    slope, r2, _ = _lin_fit(t, width[:, None])
    slope, r2 = float(slope[0]), float(r2[0])
    intercept = float(np.mean(width - slope * t))
    spread = derivative.spread
    rel = abs(slope - spread) / max(abs(spread), 1e-300)
    growth = width[-1] - width[0]
    significant = growth > gap_floor * max(1.0, abs(cluster.center))
    scalar = (derivative.score or 0.0) < SCORE_FLOOR
    if significant and r2 >= r2_min and rel <= tol:
        verdict = "split-confirmed"
    elif scalar:
        verdict = "no-split" if not np.any(derivative.matrix) else "inconclusive"
    elif not significant:
        verdict = "no-split"
    else:
        verdict = "inconclusive"
    return SplitReport(cluster, psi.id, psi.describe(), t, lam, gaps, width, slope, intercept,
                       r2, spread, float(rel), verdict, tol)


# -------------------------------------------------------------------- driver


@dataclass
class Step:
    index: int
    cluster: Cluster
    field: Field
    amplitude: float
    budget: float
    norm: float
    score: float
    gaps_before: list
    gaps_after: list
    report: SplitReport

    @property
    def spent(self) -> float:
        return self.amplitude * self.norm

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "cluster": {"start": self.cluster.start, "m": self.cluster.m,
                        "center": self.cluster.center},
            "field": self.field.describe(),
            "field_id": self.field.id,
            "amplitude": self.amplitude,
            "budget": self.budget,
            "norm": self.norm,
            "spent": self.spent,
            "score": self.score,
            "gaps_before": self.gaps_before,
            "gaps_after": self.gaps_after,
            "verdict": self.report.verdict,
            "r2": self.report.r2,
            "fitted_slope": self.report.slope,
            "predicted_spread": self.report.predicted_spread,
        }


@dataclass
class SimplificationTrace:
    kind: ProblemKind
    K: int
    eps: float
    side: str
    seed: int
    steps: list = field(default_factory=list)
    initial: Spectrum | None = None
    final: Spectrum | None = None
    status: str = "running"
    note: str = ""

    @property
    def final_mesh(self) -> MeshDomain | None:
        return None if self.final is None else self.final.mesh

    @property
    def budgets(self) -> list[float]:
        return [s.budget for s in self.steps]

    @property
    def total_spent(self) -> float:
        return float(sum(s.spent for s in self.steps))

    @property
    def flagged(self) -> bool:
        return self.status not in ("simple",)

    def final_gaps(self) -> np.ndarray:
        lam = self.final.lam[: self.K]
        return np.diff(lam)

    def to_dict(self) -> dict:
        out = {
            "kind": self.kind.value,
            "K": self.K,
            "eps": self.eps,
            "side": self.side,
            "seed": self.seed,
            "status": self.status,
            "note": self.note,
            "budgets": self.budgets,
            "total_spent": self.total_spent,
            "steps": [s.to_dict() for s in self.steps],
        }
        if self.initial is not None:
            out["initial_lambda"] = self.initial.lam[: self.K].tolist()
        if self.final is not None:
            out["final_lambda"] = self.final.lam[: self.K].tolist()
            out["final_gaps"] = self.final_gaps().tolist()
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _solve_quiet(mesh, kind, count, method):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return solve(mesh, kind, count, method=method)


def simplify_spectrum(mesh: MeshDomain, kind, K: int, eps: float, side: str = "S",
                      seed: int = 0, n_candidates: int = 16, t_grid=DEFAULT_T_GRID,
                      tol_simple: float = 1e-4, max_iter: int = 12, retries: int = 3,
                      method: str = "auto") -> SimplificationTrace:
    """Split every cluster among lambda_1..lambda_K by composing small bumps
    with halving budgets eps, eps/2, eps/4, ..."""
    kind = ProblemKind.parse(kind)
    mesh.check_kind(kind)
    if K < 1:
        raise InvalidArgument("K must be positive")
    t_grid = tuple(sorted(float(t) for t in t_grid))
    if not t_grid or t_grid[0] <= 0 or t_grid[-1] > 1:
        raise InvalidArgument("t_grid must lie in (0, 1]")
    trace = SimplificationTrace(kind, K, float(eps), side, seed)
    current = mesh
    budget = float(eps)
    for ell in range(1, max_iter + 1):
        spec = _solve_quiet(current, kind, K + 1, method)
        if trace.initial is None:
            trace.initial = spec
        clusters = detect_clusters(spec.lam[:K], tol_simple)
        if not clusters:
            trace.final, trace.status = spec, "simple"
            return trace
        cl = clusters[0]
        try:
            ranked = rank_candidates(current, spec, cl, side, budget, n_candidates,
                                     seed + ell - 1)
        except SloshError as exc:
            exc.trace = trace
            trace.final, trace.status = spec, "failed"
            raise
        if not ranked or ranked[0].score < SCORE_FLOOR:
            trace.final, trace.status = spec, "no-candidate"
            raise NoCandidateFound("no admissible field splits the cluster",
                                   best_score=ranked[0].score if ranked else 0.0, trace=trace)
        best = ranked[0]
        # halving budgets add at most twice the first predicted opening
        predicted = abs(best.derivative.spread) * t_grid[-1]
        reachable = (spec.lam[cl.stop - 1] - spec.lam[cl.start]) + 2.0 * predicted
        if reachable < tol_simple * max(1.0, abs(cl.center)):
            trace.final, trace.status = spec, "inconclusive"
            trace.note = (f"predicted gap {predicted:.2e} at t={t_grid[-1]:g} cannot reach "
                          f"tol_simple even with every halved budget; budget too small")
            return trace
        report = None
        for cand in ranked[:retries]:
            if cand.score < SCORE_FLOOR:
                break
            report = verify_split(current, cand.field, cl, kind, t_grid, cand.derivative,
                                  norm=cand.norm)
            if report.confirmed:
                best = cand
                break
        if report is None or not report.confirmed:
            trace.final, trace.status = spec, "inconclusive"
            trace.note = f"no candidate verified for cluster at {cl.center:.6g}"
            return trace
        t_perm = float(report.t[-1])
        current = transplant(current, best.field, t_perm, norm=best.norm).mesh
        trace.steps.append(Step(ell, cl, best.field, t_perm, budget, best.norm, best.score,
                                np.diff(spec.lam[cl.start:cl.stop]).tolist(),
                                report.gaps[-1].tolist(), report))
        budget /= 2.0
    trace.final = _solve_quiet(current, kind, K + 1, method)
    trace.status = ("simple" if not detect_clusters(trace.final.lam[:K], tol_simple)
                    else "max-iterations")
    return trace
