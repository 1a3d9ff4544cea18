"""Structured simplicial meshes on axis-aligned boxes.

Boxes are split into 2 triangles per square (2D) or 6 Kuhn tetrahedra per
cube (3D).  Both splits share the main diagonal of every box, so a mesh with
``2n`` subdivisions is a nested refinement of the one with ``n``.
"""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

__all__ = [
    "BoundaryTag",
    "Mesh",
    "MeshError",
    "build_box_mesh",
    "classify_footing_boundary",
    "footing_mesh",
    "mesh_from_arrays",
    "write_mesh_text",
]

COORD_TOL = 1e-10


class MeshError(ValueError):
    """Invalid domain, subdivision count or boundary classification."""


class BoundaryTag(enum.IntEnum):
    BASE = 0
    TOP_LOADED = 1
    TOP_FREE = 2
    LATERAL = 3


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    """Simplicial mesh with its boundary facets.

    Attributes
    ----------
    dim : int
        Spatial dimension, 2 or 3.
    vertices : ndarray, shape (nv, dim)
    cells : ndarray, shape (nc, dim + 1)
        Vertex indices, positively oriented.
    boundary_facets : ndarray, shape (nf, dim)
        Sorted vertex indices of each facet owned by exactly one cell.
    boundary_tags : ndarray of int or None
        One :class:`BoundaryTag` per boundary facet, ``None`` if unclassified.
    h : float
        Maximum edge length.
    """

    dim: int
    vertices: np.ndarray
    cells: np.ndarray
    boundary_facets: np.ndarray
    boundary_tags: Optional[np.ndarray]
    h: float
    lo: tuple
    hi: tuple
    subdivisions: tuple

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def is_tagged(self) -> bool:
        return self.boundary_tags is not None

    def signed_volumes(self) -> np.ndarray:
        x = self.vertices[self.cells]
        jac = x[:, 1:, :] - x[:, :1, :]
        fact = 2.0 if self.dim == 2 else 6.0
        return np.linalg.det(jac) / fact

    def facet_measures(self, facets: Optional[np.ndarray] = None) -> np.ndarray:
        """Length (2D) or area (3D) of the given facets (default: boundary)."""
        if facets is None:
            facets = self.boundary_facets
        x = self.vertices[facets]
        if self.dim == 2:
            return np.linalg.norm(x[:, 1] - x[:, 0], axis=1)
        return 0.5 * np.linalg.norm(np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]), axis=1)

    def facets_with_tag(self, *tags: BoundaryTag) -> np.ndarray:
        if self.boundary_tags is None:
            raise MeshError("mesh boundary is not classified")
        mask = np.isin(self.boundary_tags, [int(t) for t in tags])
        return self.boundary_facets[mask]

    def vertices_with_tag(self, *tags: BoundaryTag) -> np.ndarray:
        return np.unique(self.facets_with_tag(*tags))


def _as_tuple(v, dim, name) -> tuple:
    if np.isscalar(v):
        return (v,) * dim
    v = tuple(v)
    if len(v) != dim:
        raise MeshError(f"{name} has {len(v)} entries, expected {dim}")
    return v


def _cell_facets(cells: np.ndarray) -> np.ndarray:
    k = cells.shape[1]
    facets = [np.delete(cells, i, axis=1) for i in range(k)]
    return np.sort(np.concatenate(facets, axis=0), axis=1)


def _boundary_facets(cells: np.ndarray) -> np.ndarray:
    facets = _cell_facets(cells)
    uniq, counts = np.unique(facets, axis=0, return_counts=True)
    if np.any(counts > 2):
        raise MeshError("non-manifold mesh: facet shared by more than two cells")
    return uniq[counts == 1]


def _max_edge(vertices: np.ndarray, cells: np.ndarray) -> float:
    h = 0.0
    for i, j in itertools.combinations(range(cells.shape[1]), 2):
        d = np.linalg.norm(vertices[cells[:, i]] - vertices[cells[:, j]], axis=1)
        h = max(h, float(d.max()))
    return h


def build_box_mesh(
    lo: Sequence[float],
    hi: Sequence[float],
    n: Union[int, Sequence[int]],
    dim: Optional[int] = None,
) -> Mesh:
    """Structured simplicial mesh of the box ``[lo, hi]``.

    Parameters
    ----------
    lo, hi : sequence of float
        Opposite corners of the box.
    n : int or sequence of int
        Subdivisions per axis.
    dim : {2, 3}, optional
        Defaults to ``len(lo)``.
    """
    if dim is None:
        dim = len(lo)
    if dim not in (2, 3):
        raise MeshError(f"dim must be 2 or 3, got {dim}")
    lo = tuple(float(v) for v in _as_tuple(lo, dim, "lo"))
    hi = tuple(float(v) for v in _as_tuple(hi, dim, "hi"))
    n = tuple(int(v) for v in _as_tuple(n, dim, "n"))
    if any(b <= a for a, b in zip(lo, hi)):
        raise MeshError(f"degenerate box: lo={lo}, hi={hi}")
    if any(k < 1 for k in n):
        raise MeshError(f"invalid subdivision count {n}")

    axes = [np.linspace(a, b, k + 1) for a, b, k in zip(lo, hi, n)]
    grid = np.meshgrid(*axes, indexing="ij")
    vertices = np.stack([g.ravel() for g in grid], axis=1)
    shape = tuple(k + 1 for k in n)

    # lower corner index of every box
    corners = np.stack(
        np.meshgrid(*[np.arange(k) for k in n], indexing="ij"), axis=-1
    ).reshape(-1, dim)

    cells = []
    for perm in itertools.permutations(range(dim)):
        # Kuhn path from the lower corner to the upper corner
        path = [np.zeros(dim, dtype=int)]
        for ax in perm:
            step = path[-1].copy()
            step[ax] += 1
            path.append(step)
        simplex = [np.ravel_multi_index(tuple((corners + off).T), shape) for off in path]
        cells.append(np.stack(simplex, axis=1))
    cells = np.concatenate(cells, axis=0)
    # box-major ordering keeps neighbouring cells close in memory
    nbox = corners.shape[0]
    nperm = cells.shape[0] // nbox
    cells = cells.reshape(nperm, nbox, dim + 1).transpose(1, 0, 2).reshape(-1, dim + 1)

    x = vertices[cells]
    vol = np.linalg.det(x[:, 1:, :] - x[:, :1, :])
    flip = vol < 0
    cells[flip, 0], cells[flip, 1] = cells[flip, 1].copy(), cells[flip, 0].copy()

    return Mesh(
        dim=dim,
        vertices=_frozen(vertices),
        cells=_frozen(cells.astype(np.int64)),
        boundary_facets=_frozen(_boundary_facets(cells)),
        boundary_tags=None,
        h=_max_edge(vertices, cells),
        lo=lo,
        hi=hi,
        subdivisions=n,
    )


def mesh_from_arrays(vertices, cells) -> Mesh:
    """Mesh from explicit vertex coordinates and cell connectivity."""
    vertices = np.asarray(vertices, dtype=float)
    cells = np.array(cells, dtype=np.int64)
    if vertices.ndim != 2 or vertices.shape[1] not in (2, 3):
        raise MeshError("vertices must have shape (nv, 2) or (nv, 3)")
    dim = vertices.shape[1]
    if cells.ndim != 2 or cells.shape[1] != dim + 1:
        raise MeshError(f"cells must have {dim + 1} vertices each")
    if cells.min() < 0 or cells.max() >= len(vertices):
        raise MeshError("cell vertex index out of range")
    if np.any(np.sort(cells, axis=1)[:, 1:] == np.sort(cells, axis=1)[:, :-1]):
        raise MeshError("cell with repeated vertex")
    x = vertices[cells]
    vol = np.linalg.det(x[:, 1:, :] - x[:, :1, :])
    flip = vol < 0
    cells[flip, 0], cells[flip, 1] = cells[flip, 1].copy(), cells[flip, 0].copy()
    return Mesh(
        dim=dim,
        vertices=_frozen(vertices.copy()),
        cells=_frozen(cells),
        boundary_facets=_frozen(_boundary_facets(cells)),
        boundary_tags=None,
        h=_max_edge(vertices, cells),
        lo=tuple(vertices.min(axis=0)),
        hi=tuple(vertices.max(axis=0)),
        subdivisions=None,
    )


def classify_footing_boundary(
    mesh: Mesh, load_extent: float, center: Optional[Sequence[float]] = None
) -> Mesh:
    """Tag the boundary of a box mesh for the footing problem.

    The last axis is vertical.  Facets on its lower face are ``BASE``; facets
    on its upper face are ``TOP_LOADED`` when their centroid lies in the open
    square of half-width `load_extent` around `center` (default: the origin
    of the horizontal coordinates), else ``TOP_FREE``; the remaining facets
    must lie on a lateral face and are tagged ``LATERAL``.
    """
    if load_extent <= 0:
        raise MeshError("load_extent must be positive")
    d = mesh.dim
    if center is None:
        center = np.zeros(d - 1)
    center = np.asarray(center, dtype=float)
    x = mesh.vertices[mesh.boundary_facets]  # (nf, d, d)
    z = x[:, :, -1]
    on = lambda vals, c: np.all(np.abs(vals - c) <= COORD_TOL, axis=1)

    tags = np.full(len(x), -1, dtype=np.int64)
    base = on(z, mesh.lo[-1])
    top = on(z, mesh.hi[-1])
    centroid = x[:, :, :-1].mean(axis=1)
    inside = np.all(np.abs(centroid - center) < load_extent, axis=1)
    lateral = np.zeros(len(x), dtype=bool)
    for ax in range(d - 1):
        lateral |= on(x[:, :, ax], mesh.lo[ax]) | on(x[:, :, ax], mesh.hi[ax])

    tags[lateral] = BoundaryTag.LATERAL
    tags[top & ~inside] = BoundaryTag.TOP_FREE
    tags[top & inside] = BoundaryTag.TOP_LOADED
    tags[base] = BoundaryTag.BASE
    if np.any(tags < 0):
        bad = mesh.boundary_facets[np.flatnonzero(tags < 0)[0]]
        raise MeshError(f"boundary facet {tuple(bad)} does not lie on a box face")
    return replace(mesh, boundary_tags=_frozen(tags))


def footing_mesh(dim: int, n: Union[int, Sequence[int]], load_extent: float = 16.0) -> Mesh:
    """Tagged mesh of the footing block: (-32, 32)^(dim-1) x (0, 64)."""
    lo = (-32.0,) * (dim - 1) + (0.0,)
    hi = (32.0,) * (dim - 1) + (64.0,)
    return classify_footing_boundary(build_box_mesh(lo, hi, n, dim), load_extent)


def write_mesh_text(mesh: Mesh, path: Union[str, Path]) -> None:
    """Debug dump: one vertex or cell per line."""
    lines = [f"# dim {mesh.dim} vertices {mesh.num_vertices} cells {mesh.num_cells} h {mesh.h!r}"]
    lines += ["v " + " ".join(repr(float(c)) for c in v) for v in mesh.vertices]
    lines += ["c " + " ".join(str(int(i)) for i in c) for c in mesh.cells]
    if mesh.boundary_tags is not None:
        lines += [
            "f " + " ".join(str(int(i)) for i in f) + f" {BoundaryTag(t).name}"
            for f, t in zip(mesh.boundary_facets, mesh.boundary_tags)
        ]
    Path(path).write_text("\n".join(lines) + "\n")
