"""C^2 perturbation fields and mesh transplanting by x -> x + t psi(x)."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import AmplitudeTooLarge, InvalidArgument, InvalidSupport, MeshFolded, UnsupportedOperation
from .geometry import Arc, MeshDomain, Segment

DEFAULT_DENSITY = 64


def bump_profile(x: np.ndarray, center, radius: float, amplitude: float):
    """amplitude * (1 - r^2/R^2)^3 inside the ball, with its gradient."""
    d = np.asarray(x, float) - np.asarray(center, float)
    s = np.einsum("ij,ij->i", d, d) / radius**2
    inside = s < 1.0
    w = np.where(inside, 1.0 - s, 0.0)
    alpha = amplitude * w**3
    grad = (-6.0 * amplitude / radius**2) * (w**2)[:, None] * d
    return alpha, grad


class Field:
    """Base class; subclasses implement ``_evaluate(points) -> (values, jac)``
    with ``jac[n, i, j] = d psi_i / d x_j``."""

    kind = "field"

    def _evaluate(self, x: np.ndarray):
        raise NotImplementedError

    def values(self, x) -> np.ndarray:
        return self._evaluate(np.atleast_2d(np.asarray(x, float)))[0]

    def describe(self) -> dict:
        raise NotImplementedError

    @property
    def id(self) -> str:
        text = json.dumps(self.describe(), sort_keys=True)
        return hashlib.sha1(text.encode()).hexdigest()[:12]

    def support_box(self):
        """(lo, hi) corners of a box containing the support, or None."""
        return None

    def __add__(self, other):
        return Combination(((1.0, self), (1.0, other)))

    def __mul__(self, c):
        return Combination(((float(c), self),))

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class Affine(Field):
    A: np.ndarray
    b: np.ndarray

    kind = "affine"

    def __post_init__(self):
        object.__setattr__(self, "A", np.asarray(self.A, float).reshape(2, 2))
        object.__setattr__(self, "b", np.asarray(self.b, float).reshape(2))

    def _evaluate(self, x):
        return x @ self.A.T + self.b, np.broadcast_to(self.A, (len(x), 2, 2)).copy()

    def describe(self):
        return {"kind": "affine", "A": self.A.tolist(), "b": self.b.tolist()}


def translation(c) -> Affine:
    return Affine(np.zeros((2, 2)), c)


def dilation(scale: float = 1.0) -> Affine:
    return Affine(scale * np.eye(2), np.zeros(2))


def zero_field() -> Affine:
    return Affine(np.zeros((2, 2)), np.zeros(2))


@dataclass(frozen=True, eq=False)
class InteriorBump(Field):
    center: tuple
    radius: float
    amplitude: float
    direction: tuple = (1.0, 0.0)

    kind = "interior_bump"

    def _evaluate(self, x):
        d = np.asarray(self.direction, float)
        d = d / np.linalg.norm(d)
        alpha, grad = bump_profile(x, self.center, self.radius, self.amplitude)
        return alpha[:, None] * d, d[None, :, None] * grad[:, None, :]

    def support_box(self):
        c = np.asarray(self.center, float)
        return c - self.radius, c + self.radius

    def describe(self):
        return {"kind": "interior_bump", "center": list(map(float, self.center)),
                "radius": float(self.radius), "amplitude": float(self.amplitude),
                "direction": list(map(float, self.direction))}


@dataclass(frozen=True, eq=False)
class NormalBump(Field):
    """psi = alpha(|x - anchor|) N(x).

    N is either a constant unit vector (straight boundary piece, or a
    boundary with no analytic description) or the radial unit field of a
    circle, which is the nearest-point normal of that circle.
    """

    anchor: tuple
    radius: float
    amplitude: float
    side: str
    normal: tuple = (0.0, 1.0)
    arc_center: tuple | None = None
    arc_sign: float = 1.0

    kind = "normal_bump"

    def _normal(self, x):
        if self.arc_center is None:
            n = np.asarray(self.normal, float)
            return np.broadcast_to(n, x.shape).copy(), np.zeros((len(x), 2, 2))
        d = x - np.asarray(self.arc_center, float)
        rho = np.linalg.norm(d, axis=1)
        rho = np.where(rho > 0, rho, 1.0)
        n = d / rho[:, None]
        dn = (np.eye(2)[None] - n[:, :, None] * n[:, None, :]) / rho[:, None, None]
        return self.arc_sign * n, self.arc_sign * dn

    def _evaluate(self, x):
        alpha, grad = bump_profile(x, self.anchor, self.radius, self.amplitude)
        vals = np.zeros_like(x)
        jac = np.zeros((len(x), 2, 2))
        on = alpha != 0
        if np.any(on):
            n, dn = self._normal(x[on])
            vals[on] = alpha[on, None] * n
            jac[on] = n[:, :, None] * grad[on][:, None, :] + alpha[on, None, None] * dn
        return vals, jac

    def support_box(self):
        c = np.asarray(self.anchor, float)
        return c - self.radius, c + self.radius

    def describe(self):
        out = {"kind": "normal_bump", "anchor": list(map(float, self.anchor)),
               "radius": float(self.radius), "amplitude": float(self.amplitude),
               "side": self.side}
        if self.arc_center is None:
            out["normal"] = list(map(float, self.normal))
        else:
            out["arc_center"] = list(map(float, self.arc_center))
            out["arc_sign"] = float(self.arc_sign)
        return out

    def scaled(self, amplitude: float) -> "NormalBump":
        return NormalBump(self.anchor, self.radius, amplitude, self.side, self.normal,
                          self.arc_center, self.arc_sign)


@dataclass(frozen=True, eq=False)
class VertexTable(Field):
    """Per-vertex displacements; only usable for transplanting."""

    displacements: np.ndarray

    kind = "vertex_table"

    def _evaluate(self, x):
        raise UnsupportedOperation("VertexTable fields have no pointwise evaluator")

    def describe(self):
        return {"kind": "vertex_table",
                "sha1": hashlib.sha1(np.ascontiguousarray(self.displacements).tobytes()).hexdigest()}


@dataclass(frozen=True, eq=False)
class Combination(Field):
    terms: tuple

    kind = "combination"

    def _evaluate(self, x):
        vals = np.zeros_like(x)
        jac = np.zeros((len(x), 2, 2))
        for c, f in self.terms:
            v, j = f._evaluate(x)
            vals += c * v
            jac += c * j
        return vals, jac

    def support_box(self):
        boxes = [f.support_box() for _, f in self.terms]
        if any(b is None for b in boxes):
            return None
        return (np.min([b[0] for b in boxes], axis=0), np.max([b[1] for b in boxes], axis=0))

    def describe(self):
        return {"kind": "combination",
                "terms": [[float(c), f.describe()] for c, f in self.terms]}


def eval_field(psi: Field, x):
    """Value, Jacobian and divergence of ``psi`` at one point or an (n, 2)
    array of points."""
    if isinstance(psi, VertexTable):
        raise UnsupportedOperation("VertexTable fields cannot be evaluated pointwise")
    x = np.asarray(x, float)
    single = x.ndim == 1
    vals, jac = psi._evaluate(np.atleast_2d(x))
    div = jac[:, 0, 0] + jac[:, 1, 1]
    if single:
        return vals[0], jac[0], div[0]
    return vals, jac, div


def field_from_dict(d: dict, mesh: MeshDomain | None = None) -> Field:
    kind = d.get("kind")
    if kind == "affine":
        return Affine(d["A"], d["b"])
    if kind == "translation":
        return translation(d["b"])
    if kind == "dilation":
        return dilation(d.get("scale", 1.0))
    if kind == "interior_bump":
        return InteriorBump(tuple(d["center"]), float(d["radius"]), float(d["amplitude"]),
                            tuple(d.get("direction", (1.0, 0.0))))
    if kind == "normal_bump":
        if "normal" in d or "arc_center" in d:
            return NormalBump(tuple(d["anchor"]), float(d["radius"]), float(d["amplitude"]),
                              d["side"], tuple(d.get("normal", (0.0, 1.0))),
                              tuple(d["arc_center"]) if "arc_center" in d else None,
                              float(d.get("arc_sign", 1.0)))
        if mesh is None:
            raise InvalidArgument("a normal bump without a normal needs a mesh")
        return normal_bump(mesh, d["anchor"], float(d["radius"]), float(d["amplitude"]), d["side"])
    if kind == "combination":
        return Combination(tuple((float(c), field_from_dict(f, mesh)) for c, f in d["terms"]))
    raise InvalidArgument(f"unknown field kind {kind!r}")


# ----------------------------------------------------------------- bumps


def _point_segment_distance(p, a, b):
    ab = b - a
    s = np.clip(((p - a) * ab).sum(axis=-1) / (ab * ab).sum(axis=-1), 0.0, 1.0)
    q = a + s[..., None] * ab
    return np.linalg.norm(p - q, axis=-1), q, s


def normal_bump(mesh: MeshDomain, anchor, radius: float, amplitude: float, side: str,
                margin: float = 0.05) -> NormalBump:
    """Bump of ``amplitude`` along the outward normal at the boundary point
    nearest to ``anchor``; its support must not reach the other tag or Γ."""
    if side not in ("S", "W"):
        raise InvalidArgument(f"side must be 'S' or 'W', got {side!r}")
    if not radius > 0:
        raise InvalidArgument("bump radius must be positive")
    b = mesh.boundary_edges
    pa, pb = mesh.vertices[b[:, 0]], mesh.vertices[b[:, 1]]
    p = np.asarray(anchor, float)
    dist, q, _ = _point_segment_distance(p[None], pa, pb)
    e = int(np.argmin(dist))
    if mesh.tags[e] != side:
        raise InvalidSupport(f"anchor lies on a {mesh.tags[e]}-tagged edge, not {side}")
    x0 = q[e]

    reach = radius * (1.0 + margin)
    other = mesh.tags != side
    if np.any(other):
        d_other, _, _ = _point_segment_distance(x0[None], pa[other], pb[other])
        if np.min(d_other) < reach:
            raise InvalidSupport("bump support reaches the opposite boundary portion")
    gamma = mesh.vertices[mesh.interface_vertices]
    if len(gamma) and np.min(np.linalg.norm(gamma - x0, axis=1)) < reach:
        raise InvalidSupport("bump support touches the interface Γ")

    edge_normal = mesh.edge_normals[e]
    c = int(mesh.edge_curves[e])
    curve = mesh.curves[c] if c >= 0 else None
    if isinstance(curve, Arc) and radius < 0.9 * curve.radius:
        n0 = curve.normal(x0[None])[0]
        sign = 1.0 if n0 @ edge_normal > 0 else -1.0
        x0 = curve.project(x0[None])[0]
        return NormalBump(tuple(x0), float(radius), float(amplitude), side,
                          tuple(sign * n0), tuple(map(float, curve.center)), sign)
    if isinstance(curve, Segment):
        n = curve.normal(x0)
        n = n if n @ edge_normal > 0 else -n
    else:
        n = edge_normal
    return NormalBump(tuple(x0), float(radius), float(amplitude), side, tuple(map(float, n)))


# ------------------------------------------------------------------ norms


def _spectral_norm_2x2(m: np.ndarray) -> np.ndarray:
    # largest singular value from |m|_F^2 and det m (closed form, no SVD)
    fro2 = np.einsum("...ij,...ij->...", m, m)
    det = m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
    disc = np.sqrt(np.maximum(fro2**2 - 4.0 * det**2, 0.0))
    return np.sqrt(0.5 * (fro2 + disc))


def _sample_norms(psi: Field, pts: np.ndarray, h: float):
    vals, jac = psi._evaluate(pts)
    n0 = np.linalg.norm(vals, axis=1).max(initial=0.0)
    n1 = _spectral_norm_2x2(jac).max(initial=0.0)
    hess = np.zeros((len(pts), 2, 2, 2))
    for k in range(2):
        step = np.zeros(2)
        step[k] = h
        jp = psi._evaluate(pts + step)[1]
        jm = psi._evaluate(pts - step)[1]
        hess[:, :, :, k] = (jp - jm) / (2 * h)
    hess = 0.5 * (hess + hess.transpose(0, 1, 3, 2))
    per_comp = _spectral_norm_2x2(hess)
    n2 = np.sqrt((per_comp**2).sum(axis=1)).max(initial=0.0)
    return n0, n1, n2


def c2_norm_parts(psi: Field, density: int = DEFAULT_DENSITY, bbox=None,
                  mesh: MeshDomain | None = None) -> tuple[float, float, float]:
    """Sampled sup of |psi|, |D psi| and |D^2 psi| (finite differences of
    the Jacobian). Nested over every grid size up to ``density`` so the
    result never decreases as density grows."""
    density = int(density)
    if density < 2:
        raise InvalidArgument("sampling density must be at least 2")
    if isinstance(psi, VertexTable):
        d = np.asarray(psi.displacements, float)
        n0 = float(np.linalg.norm(d, axis=1).max(initial=0.0))
        n1 = 0.0
        if mesh is not None:
            from .assembly import p1_gradients
            g, _ = p1_gradients(mesh)
            jac = np.einsum("tai,tak->tik", d[mesh.triangles], g)
            n1 = float(_spectral_norm_2x2(jac).max(initial=0.0))
        return n0, n1, 0.0
    if isinstance(psi, Affine):
        if bbox is None:
            bbox = mesh_bbox(mesh) if mesh is not None else None
        if bbox is None:
            n0 = float(np.linalg.norm(psi.b)) if not np.any(psi.A) else math.inf
        else:
            lo, hi = np.asarray(bbox[0], float), np.asarray(bbox[1], float)
            corners = np.array([[lo[0], lo[1]], [hi[0], lo[1]], [lo[0], hi[1]], [hi[0], hi[1]]])
            n0 = float(np.linalg.norm(psi.values(corners), axis=1).max())
        return n0, float(np.linalg.norm(psi.A, 2)), 0.0

    box = psi.support_box()
    if box is None:
        box = bbox if bbox is not None else mesh_bbox(mesh)
    if box is None:
        return math.inf, math.inf, math.inf
    lo, hi = np.asarray(box[0], float), np.asarray(box[1], float)
    h = 1e-4 * float(np.max(hi - lo))
    parts = np.zeros(3)
    for g in range(2, density + 1):
        xs = np.linspace(lo[0], hi[0], g)
        ys = np.linspace(lo[1], hi[1], g)
        X, Y = np.meshgrid(xs, ys)
        pts = np.column_stack([X.ravel(), Y.ravel()])
        parts = np.maximum(parts, _sample_norms(psi, pts, h))
    return tuple(float(p) for p in parts)


def c2_norm_estimate(psi: Field, density: int = DEFAULT_DENSITY, bbox=None,
                     mesh: MeshDomain | None = None) -> float:
    return max(c2_norm_parts(psi, density, bbox, mesh))


def mesh_bbox(mesh: MeshDomain | None):
    if mesh is None:
        return None
    return mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)


# -------------------------------------------------------------- transplant


@dataclass(frozen=True, eq=False)
class TransplantRecord:
    source_id: str
    field_id: str
    t: float
    mesh: MeshDomain
    norm_estimate: float = 0.0


def nodal_values(mesh: MeshDomain, psi: Field) -> np.ndarray:
    if isinstance(psi, VertexTable):
        d = np.asarray(psi.displacements, float)
        if d.shape != mesh.vertices.shape:
            raise InvalidArgument("VertexTable size does not match the mesh")
        return d
    return psi.values(mesh.vertices)


def transplant(mesh: MeshDomain, psi: Field, t: float, guard: bool = True,
               norm: float | None = None) -> TransplantRecord:
    """Move every vertex by t psi(x); connectivity and tags are kept."""
    t = float(t)
    if t == 0.0:
        return TransplantRecord(mesh.id, psi.id, 0.0, mesh, 0.0)
    if norm is None:
        norm = c2_norm_estimate(psi, mesh=mesh, bbox=mesh_bbox(mesh))
    if guard and not abs(t) * norm < 0.5:
        raise AmplitudeTooLarge(f"|t| * ||psi|| = {abs(t) * norm:.3g} is not below 1/2")
    disp = nodal_values(mesh, psi)
    moved = mesh.vertices + t * disp
    boundary = np.unique(mesh.boundary_edges)
    keep = not np.any(disp[boundary])
    new = mesh.with_vertices(moved, keep_curves=keep,
                             name=f"{mesh.name or mesh.id}@{psi.id}:{t:g}")
    if np.any(new.signed_areas <= 0):
        bad = np.flatnonzero(new.signed_areas <= 0)
        raise MeshFolded(f"{len(bad)} triangles inverted (first: {bad[0]})")
    return TransplantRecord(mesh.id, psi.id, t, new, norm)


def boundary_points(mesh: MeshDomain, side: str, fractions: Sequence[float]) -> np.ndarray:
    """Points at the given arclength fractions along the ``side`` edges, in
    edge order."""
    idx = mesh.edges_with(side)
    if len(idx) == 0:
        raise InvalidArgument(f"mesh has no {side}-tagged edges")
    lengths = mesh.edge_lengths[idx]
    cum = np.concatenate([[0.0], np.cumsum(lengths)])
    s = np.asarray(fractions, float) * cum[-1]
    k = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(idx) - 1)
    frac = (s - cum[k]) / lengths[k]
    b = mesh.boundary_edges[idx[k]]
    return mesh.vertices[b[:, 0]] + frac[:, None] * (mesh.vertices[b[:, 1]] - mesh.vertices[b[:, 0]])
