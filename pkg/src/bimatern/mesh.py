"""Triangulated domains and piecewise-linear finite element assembly.

Provides structured rectangle meshes, JSON mesh import/export, lumped mass
and stiffness matrices, the dual-cell weight vector h, and barycentric
observation projector matrices.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .sparse import assemble


class MeshError(Exception):
    pass


class LocationOutsideMesh(MeshError):
    def __init__(self, index, location):
        self.index = index
        self.location = location
        super().__init__(f"location {index} at {tuple(location)} is outside the mesh")


@dataclass(frozen=True)
class TriMesh:
    """Planar triangulation with (n, 2) vertices and (m, 3) triangle indices."""

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64))
        t = np.ascontiguousarray(np.asarray(self.triangles, dtype=np.int64))
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        if v.ndim != 2 or v.shape[1] != 2:
            raise MeshError("vertices must be (n, 2)")
        if t.ndim != 2 or t.shape[1] != 3:
            raise MeshError("triangles must be (m, 3)")
        if t.min(initial=0) < 0 or t.max(initial=-1) >= len(v):
            raise MeshError("triangle index out of range")
        # orient all triangles counter-clockwise
        areas = _signed_areas(v, t)
        if np.any(np.abs(areas) < 1e-14):
            raise MeshError("zero-area triangle in mesh")
        flip = areas < 0
        if np.any(flip):
            t = t.copy()
            t[flip] = t[flip][:, [0, 2, 1]]
            object.__setattr__(self, "triangles", t)
        used = np.zeros(len(v), dtype=bool)
        used[t.ravel()] = True
        if not used.all():
            raise MeshError("mesh contains vertices not referenced by any triangle")

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    def area(self):
        return float(np.sum(_signed_areas(self.vertices, self.triangles)))

    def to_json(self):
        return json.dumps(
            {"vertices": self.vertices.tolist(), "triangles": self.triangles.tolist()}
        )

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        return cls(np.asarray(data["vertices"]), np.asarray(data["triangles"]))


def _signed_areas(vertices, triangles):
    p0 = vertices[triangles[:, 0]]
    p1 = vertices[triangles[:, 1]]
    p2 = vertices[triangles[:, 2]]
    u = p1 - p0
    v = p2 - p0
    return 0.5 * (u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0])


def make_rect_mesh(x_range, y_range, nx, ny):
    """Structured triangulation of a rectangle.

    Vertices form an nx-by-ny grid in row-major order (x fastest); each grid
    cell is split into two triangles along its lower-left/upper-right
    diagonal.
    """
    x0, x1 = float(x_range[0]), float(x_range[1])
    y0, y1 = float(y_range[0]), float(y_range[1])
    if nx < 2 or ny < 2:
        raise MeshError("nx and ny must both be at least 2")
    if not (x1 > x0 and y1 > y0):
        raise MeshError("degenerate coordinate range")
    xs = np.linspace(x0, x1, nx)
    ys = np.linspace(y0, y1, ny)
    xx, yy = np.meshgrid(xs, ys)
    vertices = np.column_stack([xx.ravel(), yy.ravel()])
    tris = []
    for j in range(ny - 1):
        for i in range(nx - 1):
            v00 = j * nx + i
            v10 = v00 + 1
            v01 = v00 + nx
            v11 = v01 + 1
            tris.append((v00, v10, v11))
            tris.append((v00, v11, v01))
    return TriMesh(vertices, np.asarray(tris))


@dataclass(frozen=True)
class FemMatrices:
    """Lumped mass diagonal h, stiffness matrix G, and vertex count."""

    h: np.ndarray
    G: sp.csc_matrix
    n: int

    @property
    def c_lumped(self):
        return sp.diags(self.h, format="csc")


def assemble_fem(mesh):
    """Assemble lumped mass and stiffness matrices for linear elements.

    Stiffness uses the exact per-triangle gradient formulas; the mass matrix
    is lumped to its row sums so that h_i is the dual-cell area of vertex i.
    """
    v = mesh.vertices
    t = mesh.triangles
    n = mesh.n_vertices
    areas = _signed_areas(v, t)
    h = np.zeros(n)
    trip = []
    for k in range(len(t)):
        idx = t[k]
        area = areas[k]
        p = v[idx]
        # edge vectors opposite each vertex
        b = np.array([p[1, 1] - p[2, 1], p[2, 1] - p[0, 1], p[0, 1] - p[1, 1]])
        c = np.array([p[2, 0] - p[1, 0], p[0, 0] - p[2, 0], p[1, 0] - p[0, 0]])
        ke = (np.outer(b, b) + np.outer(c, c)) / (4.0 * area)
        for a in range(3):
            h[idx[a]] += area / 3.0
            for bb in range(3):
                trip.append((idx[a], idx[bb], ke[a, bb]))
    G = assemble(trip, n, n)
    return FemMatrices(h=h, G=G, n=n)


def _barycentric(p, tri_pts):
    p0, p1, p2 = tri_pts
    m = np.array([[p1[0] - p0[0], p2[0] - p0[0]], [p1[1] - p0[1], p2[1] - p0[1]]])
    rhs = np.array([p[0] - p0[0], p[1] - p0[1]])
    lam12 = np.linalg.solve(m, rhs)
    return np.array([1.0 - lam12.sum(), lam12[0], lam12[1]])


class _TriLocator:
    """Vectorized point location by scanning all triangles per query point."""

    def __init__(self, mesh):
        v = mesh.vertices
        t = mesh.triangles
        p0 = v[t[:, 0]]
        d1 = v[t[:, 1]] - p0
        d2 = v[t[:, 2]] - p0
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        self.p0 = p0
        # rows of the inverse affine map, per triangle
        self.inv11 = d2[:, 1] / det
        self.inv12 = -d2[:, 0] / det
        self.inv21 = -d1[:, 1] / det
        self.inv22 = d1[:, 0] / det

    def locate(self, p, tol):
        rx = p[0] - self.p0[:, 0]
        ry = p[1] - self.p0[:, 1]
        l1 = self.inv11 * rx + self.inv12 * ry
        l2 = self.inv21 * rx + self.inv22 * ry
        l0 = 1.0 - l1 - l2
        viol = -np.minimum(np.minimum(l0, l1), l2)
        k = int(np.argmin(viol))
        if viol[k] > tol:
            return None
        lam = np.clip(np.array([l0[k], l1[k], l2[k]]), 0.0, None)
        return k, lam / lam.sum()


def locate(mesh, location, tol=1e-9):
    """Find the triangle containing a point; returns (tri_index, bary weights).

    Returns None if the point is outside every triangle beyond tolerance.
    """
    return _TriLocator(mesh).locate(np.asarray(location, dtype=np.float64), tol)


def projector(mesh, locations, tol=1e-9):
    """Sparse matrix of basis function evaluations at the given locations.

    Row j holds the barycentric weights of location j within its containing
    triangle; rows sum to one.
    """
    locations = np.atleast_2d(np.asarray(locations, dtype=np.float64))
    loc_index = _TriLocator(mesh)
    trip = []
    for j, p in enumerate(locations):
        hit = loc_index.locate(p, tol)
        if hit is None:
            raise LocationOutsideMesh(j, p)
        k, lam = hit
        for a in range(3):
            if lam[a] != 0.0:
                trip.append((j, int(mesh.triangles[k][a]), float(lam[a])))
    return assemble(trip, len(locations), mesh.n_vertices)
