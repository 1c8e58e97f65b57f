"""Tagged triangulations of the reference tanks and the mesh text format.

Boundary edges carry a tag, ``"S"`` for the free surface and ``"W"`` for the
walls. Edges are stored oriented so that the domain lies to their left, which
makes ``(dy, -dx) / L`` the outward normal.
"""
from __future__ import annotations

import enum
import hashlib
import io
import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidArgument

TAGS = ("S", "W")


class ProblemKind(enum.Enum):
    STEKLOV_DIRICHLET = "sd"
    STEKLOV_NEUMANN = "sn"
    PURE_STEKLOV = "steklov"

    @classmethod
    def parse(cls, value: "str | ProblemKind") -> "ProblemKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {
            "sd": cls.STEKLOV_DIRICHLET,
            "steklov_dirichlet": cls.STEKLOV_DIRICHLET,
            "sn": cls.STEKLOV_NEUMANN,
            "steklov_neumann": cls.STEKLOV_NEUMANN,
            "sloshing": cls.STEKLOV_NEUMANN,
            "steklov": cls.PURE_STEKLOV,
            "pure": cls.PURE_STEKLOV,
            "pure_steklov": cls.PURE_STEKLOV,
        }
        try:
            return aliases[key]
        except KeyError:
            raise InvalidArgument(f"unknown problem kind {value!r}") from None

    @property
    def robin(self) -> bool:
        """True when the solve uses the shifted form a + (S-mass)."""
        return self is not ProblemKind.STEKLOV_DIRICHLET


@dataclass(frozen=True)
class Segment:
    p0: tuple[float, float]
    p1: tuple[float, float]

    def normal(self, x: np.ndarray) -> np.ndarray:
        d = np.subtract(self.p1, self.p0)
        n = np.array([d[1], -d[0]]) / math.hypot(*d)
        return np.broadcast_to(n, np.shape(x)).copy()

    def project(self, x: np.ndarray) -> np.ndarray:
        p0 = np.asarray(self.p0, float)
        d = np.subtract(self.p1, self.p0)
        s = np.clip(((x - p0) @ d) / (d @ d), 0.0, 1.0)
        return p0 + s[..., None] * d


@dataclass(frozen=True)
class Arc:
    """Piece of a circle; the outward normal points away from the centre
    when ``convex`` is true."""

    center: tuple[float, float]
    radius: float
    convex: bool = True

    def normal(self, x: np.ndarray) -> np.ndarray:
        d = np.asarray(x, float) - np.asarray(self.center)
        n = d / np.linalg.norm(d, axis=-1, keepdims=True)
        return n if self.convex else -n

    def project(self, x: np.ndarray) -> np.ndarray:
        c = np.asarray(self.center, float)
        d = np.asarray(x, float) - c
        return c + self.radius * d / np.linalg.norm(d, axis=-1, keepdims=True)


Curve = "Segment | Arc"


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class MeshDomain:
    """2D triangulation with S/W-tagged boundary edges.

    ``edge_curves[i]`` indexes ``curves`` for boundary edge ``i`` (or -1 when
    the edge has no analytic description, e.g. after a transplant).
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    tags: np.ndarray
    curves: tuple = ()
    edge_curves: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 2)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        b = np.asarray(self.boundary_edges, dtype=np.int64).reshape(-1, 2).copy()
        tags = np.asarray(self.tags, dtype="<U1").reshape(-1)
        if len(tags) != len(b):
            raise InvalidArgument("one tag per boundary edge is required")
        ec = (np.full(len(b), -1, dtype=np.int64) if self.edge_curves is None
              else np.asarray(self.edge_curves, dtype=np.int64).reshape(-1))
        # orient boundary edges along their owning triangle
        if len(t) and len(b) and t.min() >= 0 and t.max() < len(v):
            directed = {}
            for k, (i, j, l) in enumerate(t.tolist()):
                directed[(i, j)] = k
                directed[(j, l)] = k
                directed[(l, i)] = k
            for e, (i, j) in enumerate(b.tolist()):
                if (i, j) not in directed and (j, i) in directed:
                    b[e] = (j, i)
        object.__setattr__(self, "vertices", _readonly(v))
        object.__setattr__(self, "triangles", _readonly(t))
        object.__setattr__(self, "boundary_edges", _readonly(b))
        object.__setattr__(self, "tags", _readonly(tags))
        object.__setattr__(self, "edge_curves", _readonly(ec))
        object.__setattr__(self, "curves", tuple(self.curves))

    @cached_property
    def id(self) -> str:
        h = hashlib.sha1()
        for a in (self.vertices, self.triangles, self.boundary_edges):
            h.update(a.tobytes())
        h.update("".join(self.tags.tolist()).encode())
        return h.hexdigest()[:12]

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def edge_vectors(self) -> np.ndarray:
        b = self.boundary_edges
        return self.vertices[b[:, 1]] - self.vertices[b[:, 0]]

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        return np.linalg.norm(self.edge_vectors, axis=1)

    @cached_property
    def edge_normals(self) -> np.ndarray:
        d = self.edge_vectors
        return np.column_stack([d[:, 1], -d[:, 0]]) / self.edge_lengths[:, None]

    @cached_property
    def edge_triangles(self) -> np.ndarray:
        """Index of the triangle owning each boundary edge (-1 if none)."""
        lookup = {}
        for k, tri in enumerate(self.triangles.tolist()):
            for a, b in ((0, 1), (1, 2), (2, 0)):
                lookup[(min(tri[a], tri[b]), max(tri[a], tri[b]))] = k
        return np.array([lookup.get((min(i, j), max(i, j)), -1)
                         for i, j in self.boundary_edges.tolist()], dtype=np.int64)

    def edges_with(self, tag: str | None) -> np.ndarray:
        """Indices of boundary edges carrying ``tag`` (all edges for None)."""
        if tag is None:
            return np.arange(len(self.boundary_edges))
        return np.flatnonzero(self.tags == tag)

    def vertices_on(self, tag: str | None) -> np.ndarray:
        return np.unique(self.boundary_edges[self.edges_with(tag)])

    @cached_property
    def interface_vertices(self) -> np.ndarray:
        return np.intersect1d(self.vertices_on("S"), self.vertices_on("W"))

    def boundary_length(self, tag: str | None = None) -> float:
        return math.fsum(self.edge_lengths[self.edges_with(tag)].tolist())

    @cached_property
    def area(self) -> float:
        return math.fsum(self.signed_areas.tolist())

    @cached_property
    def unique_edges(self) -> tuple[np.ndarray, np.ndarray]:
        """(edges, tri_edge): sorted vertex pairs and, per triangle, the
        indices of its local edges (01, 12, 20)."""
        t = self.triangles
        pairs = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        pairs.sort(axis=1)
        edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
        tri_edge = inverse.reshape(3, -1).T
        return edges, tri_edge

    def with_vertices(self, vertices: np.ndarray, keep_curves: bool = False,
                      name: str | None = None) -> "MeshDomain":
        return MeshDomain(vertices, self.triangles, self.boundary_edges, self.tags,
                          self.curves if keep_curves else (),
                          self.edge_curves if keep_curves else None,
                          name=self.name if name is None else name)

    def kind_compatible(self, kind) -> bool:
        kind = ProblemKind.parse(kind)
        has_w = bool(np.any(self.tags == "W"))
        has_s = bool(np.any(self.tags == "S"))
        if not has_s:
            return False
        return has_w if kind is not ProblemKind.PURE_STEKLOV else not has_w

    def check_kind(self, kind) -> ProblemKind:
        kind = ProblemKind.parse(kind)
        if not self.kind_compatible(kind):
            need = "an empty" if kind is ProblemKind.PURE_STEKLOV else "a nonempty"
            raise InvalidArgument(f"{kind.name} requires {need} W boundary and a nonempty S")
        return kind

    def __repr__(self):
        return (f"MeshDomain({self.name or self.id!r}, vertices={len(self.vertices)}, "
                f"triangles={len(self.triangles)}, boundary_edges={len(self.boundary_edges)})")


# ---------------------------------------------------------------- builders


def _graded(n: int, ratio: float, ends: str) -> np.ndarray:
    """n+1 nodes on [0, 1]; cells shrink geometrically by ``ratio`` toward
    the requested end(s) ("both", "hi" or "lo")."""
    if ratio == 1.0:
        return np.linspace(0.0, 1.0, n + 1)
    i = np.arange(n)
    if ends == "both":
        d = np.minimum(i, n - 1 - i)
    elif ends == "hi":
        d = n - 1 - i
    else:
        d = i
    w = float(ratio) ** d
    nodes = np.concatenate([[0.0], np.cumsum(w)])
    return nodes / nodes[-1]


def _check_counts(**counts):
    for name, (value, low) in counts.items():
        if not isinstance(value, (int, np.integer)) or value < low:
            raise InvalidArgument(f"{name} must be an integer >= {low}, got {value!r}")


def build_rectangle(a: float, h: float, nx: int, ny: int, grading: float = 1.0) -> MeshDomain:
    """Tank [0, a] x [-h, 0]; the top edge is the free surface S."""
    if not (a > 0 and h > 0 and math.isfinite(a) and math.isfinite(h)):
        raise InvalidArgument(f"rectangle needs positive width and depth, got a={a}, h={h}")
    _check_counts(nx=(nx, 2), ny=(ny, 2))
    if grading <= 0:
        raise InvalidArgument("grading ratio must be positive")
    xs = a * _graded(nx, grading, "both")
    ys = -h + h * _graded(ny, grading, "hi")
    X, Y = np.meshgrid(xs, ys)
    verts = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (nx + 1) + i

    I, J = np.meshgrid(np.arange(nx), np.arange(ny))
    I, J = I.ravel(), J.ravel()
    v00, v10, v01, v11 = vid(I, J), vid(I + 1, J), vid(I, J + 1), vid(I + 1, J + 1)
    tris = np.concatenate([np.column_stack([v00, v10, v11]),
                           np.column_stack([v00, v11, v01])])

    i = np.arange(nx)
    j = np.arange(ny)
    bottom = np.column_stack([vid(i, 0), vid(i + 1, 0)])
    right = np.column_stack([vid(nx, j), vid(nx, j + 1)])
    top = np.column_stack([vid(i + 1, ny), vid(i, ny)])[::-1]
    left = np.column_stack([vid(0, j + 1), vid(0, j)])[::-1]
    edges = np.concatenate([bottom, right, top, left])
    tags = ["W"] * nx + ["W"] * ny + ["S"] * nx + ["W"] * ny
    curves = (Segment((0.0, -h), (a, -h)), Segment((a, -h), (a, 0.0)),
              Segment((a, 0.0), (0.0, 0.0)), Segment((0.0, 0.0), (0.0, -h)))
    ec = [0] * nx + [1] * ny + [2] * nx + [3] * ny
    return MeshDomain(verts, tris, edges, tags, curves, ec,
                      name=f"rect:{a:g},{h:g},{nx},{ny}")


def _polar_rings(n_rings: int, grading: float) -> np.ndarray:
    return _graded(n_rings, grading, "hi")[1:]


def build_disk(n_rings: int, n_sectors: int, grading: float = 1.0) -> MeshDomain:
    """Unit disk as a polar grid; the whole boundary is S.

    Every ring carries ``n_sectors`` equally spaced points, so the mesh is
    invariant under rotation by 2*pi/n_sectors and the discrete cos/sin
    Steklov pairs stay exactly degenerate.
    """
    _check_counts(n_rings=(n_rings, 1), n_sectors=(n_sectors, 3))
    radii = _polar_rings(n_rings, grading)
    theta = 2 * np.pi * np.arange(n_sectors) / n_sectors
    R, T = np.meshgrid(radii, theta, indexing="ij")
    verts = np.vstack([[0.0, 0.0], np.column_stack([(R * np.cos(T)).ravel(),
                                                    (R * np.sin(T)).ravel()])])

    def vid(j, k):
        return 1 + j * n_sectors + np.mod(k, n_sectors)

    k = np.arange(n_sectors)
    tris = [np.column_stack([np.zeros_like(k), vid(0, k), vid(0, k + 1)])]
    for j in range(n_rings - 1):
        tris.append(np.column_stack([vid(j, k), vid(j + 1, k), vid(j + 1, k + 1)]))
        tris.append(np.column_stack([vid(j, k), vid(j + 1, k + 1), vid(j, k + 1)]))
    edges = np.column_stack([vid(n_rings - 1, k), vid(n_rings - 1, k + 1)])
    return MeshDomain(verts, np.concatenate(tris), edges, ["S"] * n_sectors,
                      (Arc((0.0, 0.0), 1.0),), [0] * n_sectors,
                      name=f"disk:{n_rings},{n_sectors}")


def build_half_disk(n_rings: int, n_sectors: int, grading: float = 1.0) -> MeshDomain:
    """Lower half of the unit disk: flat top y=0 is S, the arc is W."""
    _check_counts(n_rings=(n_rings, 1), n_sectors=(n_sectors, 3))
    radii = _polar_rings(n_rings, grading)
    theta = np.pi + np.pi * _graded(n_sectors, grading, "both")
    R, T = np.meshgrid(radii, theta, indexing="ij")
    X, Y = R * np.cos(T), R * np.sin(T)
    Y[:, 0] = 0.0
    Y[:, -1] = 0.0
    verts = np.vstack([[0.0, 0.0], np.column_stack([X.ravel(), Y.ravel()])])
    m = n_sectors + 1

    def vid(j, k):
        return 1 + j * m + k

    k = np.arange(n_sectors)
    tris = [np.column_stack([np.zeros_like(k), vid(0, k), vid(0, k + 1)])]
    for j in range(n_rings - 1):
        tris.append(np.column_stack([vid(j, k), vid(j + 1, k), vid(j + 1, k + 1)]))
        tris.append(np.column_stack([vid(j, k), vid(j + 1, k + 1), vid(j, k + 1)]))
    arc = np.column_stack([vid(n_rings - 1, k), vid(n_rings - 1, k + 1)])
    # free surface from (1, 0) back to (-1, 0) through the centre
    right = [vid(j, n_sectors) for j in range(n_rings - 1, -1, -1)] + [0]
    left = [0] + [vid(j, 0) for j in range(n_rings)]
    chain = right + left[1:]
    top = np.column_stack([chain[:-1], chain[1:]])
    edges = np.concatenate([arc, top])
    tags = ["W"] * n_sectors + ["S"] * len(top)
    curves = (Arc((0.0, 0.0), 1.0), Segment((1.0, 0.0), (-1.0, 0.0)))
    ec = [0] * n_sectors + [1] * len(top)
    return MeshDomain(verts, np.concatenate(tris), edges, tags, curves, ec,
                      name=f"halfdisk:{n_rings},{n_sectors}")


def refine(mesh: MeshDomain) -> MeshDomain:
    """Split every triangle into four; arc midpoints go back on the circle."""
    edges, tri_edge = mesh.unique_edges
    nv = mesh.n_vertices
    mids = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
    edge_index = {(int(a), int(b)): k for k, (a, b) in enumerate(edges)}

    new_b, new_tags, new_ec = [], [], []
    for e, (a, b) in enumerate(mesh.boundary_edges.tolist()):
        k = edge_index[(min(a, b), max(a, b))]
        c = int(mesh.edge_curves[e])
        if c >= 0 and isinstance(mesh.curves[c], Arc):
            mids[k] = mesh.curves[c].project(mids[k])
        m = nv + k
        new_b += [(a, m), (m, b)]
        new_tags += [mesh.tags[e]] * 2
        new_ec += [c, c]

    t = mesh.triangles
    m01, m12, m20 = (nv + tri_edge[:, 0], nv + tri_edge[:, 1], nv + tri_edge[:, 2])
    tris = np.concatenate([
        np.column_stack([t[:, 0], m01, m20]),
        np.column_stack([m01, t[:, 1], m12]),
        np.column_stack([m20, m12, t[:, 2]]),
        np.column_stack([m01, m12, m20]),
    ])
    return MeshDomain(np.vstack([mesh.vertices, mids]), tris, new_b, new_tags,
                      mesh.curves, new_ec, name=mesh.name + "+r" if mesh.name else "")


def refine_n(mesh: MeshDomain, times: int) -> MeshDomain:
    for _ in range(times):
        mesh = refine(mesh)
    return mesh


def permute_vertices(mesh: MeshDomain, perm: Sequence[int]) -> MeshDomain:
    """Renumber vertices: new vertex ``i`` is old vertex ``perm[i]``."""
    perm = np.asarray(perm)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(len(perm))
    return MeshDomain(mesh.vertices[perm], inv[mesh.triangles], inv[mesh.boundary_edges],
                      mesh.tags, mesh.curves, mesh.edge_curves, name=mesh.name)


# -------------------------------------------------------------- validation


@dataclass(frozen=True)
class Issue:
    kind: str
    index: int
    message: str


@dataclass
class MeshReport:
    issues: list[Issue] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues

    def __bool__(self):
        return bool(self.issues)

    def __len__(self):
        return len(self.issues)

    def of_kind(self, kind: str) -> list[Issue]:
        return [i for i in self.issues if i.kind == kind]

    def summary(self) -> dict:
        out: dict[str, int] = {}
        for i in self.issues:
            out[i.kind] = out.get(i.kind, 0) + 1
        return out


def validate_mesh(mesh: MeshDomain) -> MeshReport:
    """Collect every invariant violation; an empty report means valid."""
    rep = MeshReport()
    nv = mesh.n_vertices
    t = mesh.triangles
    bad_index = np.flatnonzero((t < 0).any(axis=1) | (t >= nv).any(axis=1))
    for k in bad_index:
        rep.issues.append(Issue("bad-index", int(k), f"triangle {k} references a missing vertex"))
    good = np.setdiff1d(np.arange(len(t)), bad_index)
    if not np.all(np.isfinite(mesh.vertices)):
        rep.issues.append(Issue("non-finite", -1, "vertex coordinates contain NaN/Inf"))

    if len(good):
        p = mesh.vertices[t[good]]
        d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        area = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        scale = max(np.ptp(mesh.vertices, axis=0).max(), 1e-300) ** 2
        for k, a in zip(good, area):
            if abs(a) <= 1e-14 * scale:
                rep.issues.append(Issue("zero-area", int(k), f"triangle {k} is degenerate"))
            elif a < 0:
                rep.issues.append(Issue("orientation", int(k),
                                        f"triangle {k} is clockwise (signed area {a:.3g})"))

    counts: dict[tuple[int, int], int] = {}
    for tri in t[good].tolist():
        for a, b in ((0, 1), (1, 2), (2, 0)):
            key = (min(tri[a], tri[b]), max(tri[a], tri[b]))
            counts[key] = counts.get(key, 0) + 1
    for key, c in counts.items():
        if c > 2:
            rep.issues.append(Issue("nonmanifold-edge", -1, f"edge {key} shared by {c} triangles"))

    tagged: dict[tuple[int, int], int] = {}
    for e, (a, b) in enumerate(mesh.boundary_edges.tolist()):
        key = (min(a, b), max(a, b))
        if key in tagged:
            rep.issues.append(Issue("duplicate-tagged-edge", e, f"boundary edge {key} tagged twice"))
        tagged[key] = e
        if mesh.tags[e] not in TAGS:
            rep.issues.append(Issue("bad-tag", e, f"boundary edge {e} has tag {mesh.tags[e]!r}"))
        c = counts.get(key, 0)
        if c == 0:
            rep.issues.append(Issue("dangling-edge", e, f"tagged edge {key} belongs to no triangle"))
        elif c == 2:
            rep.issues.append(Issue("interior-edge-tagged", e, f"tagged edge {key} is interior"))
    for key, c in counts.items():
        if c == 1 and key not in tagged:
            rep.issues.append(Issue("untagged-boundary-edge", -1, f"boundary edge {key} has no tag"))

    used = np.zeros(nv, bool)
    used[t[good].ravel()] = True
    for k in np.flatnonzero(~used):
        rep.issues.append(Issue("isolated-vertex", int(k), f"vertex {k} is in no triangle"))
    return rep


# --------------------------------------------------------------- text I/O


def mesh_to_text(mesh: MeshDomain) -> str:
    out = io.StringIO()
    out.write("mesh2d v1\n")
    for x, y in mesh.vertices.tolist():
        out.write(f"v {x:.17g} {y:.17g}\n")
    for i, j, k in mesh.triangles.tolist():
        out.write(f"t {i} {j} {k}\n")
    for (i, j), tag in zip(mesh.boundary_edges.tolist(), mesh.tags.tolist()):
        out.write(f"b {i} {j} {tag}\n")
    return out.getvalue()


def mesh_from_text(text: str | Iterable[str], name: str = "") -> MeshDomain:
    lines = text.splitlines() if isinstance(text, str) else list(text)
    lines = [ln.strip() for ln in lines]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines or lines[0] != "mesh2d v1":
        raise InvalidArgument("mesh text must start with 'mesh2d v1'")
    verts, tris, edges, tags = [], [], [], []
    for n, ln in enumerate(lines[1:], start=2):
        parts = ln.split()
        try:
            if parts[0] == "v" and len(parts) == 3:
                verts.append((float(parts[1]), float(parts[2])))
            elif parts[0] == "t" and len(parts) == 4:
                tris.append(tuple(int(p) for p in parts[1:]))
            elif parts[0] == "b" and len(parts) == 4:
                edges.append((int(parts[1]), int(parts[2])))
                tags.append(parts[3])
            else:
                raise ValueError
        except ValueError:
            raise InvalidArgument(f"malformed mesh line {n}: {ln!r}") from None
    bad = sorted(set(tags) - set(TAGS))
    if bad:
        raise InvalidArgument(f"unknown boundary tags {bad}")
    return MeshDomain(np.array(verts, float).reshape(-1, 2), np.array(tris, int).reshape(-1, 3),
                      np.array(edges, int).reshape(-1, 2), tags, name=name)


def write_mesh(mesh: MeshDomain, path: str | os.PathLike) -> None:
    with open(path, "w") as fh:
        fh.write(mesh_to_text(mesh))


def read_mesh(path: str | os.PathLike) -> MeshDomain:
    with open(path) as fh:
        return mesh_from_text(fh.read(), name=os.path.basename(str(path)))
