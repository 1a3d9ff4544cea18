import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from biotprec.mesh import (
    BoundaryTag,
    MeshError,
    build_box_mesh,
    classify_footing_boundary,
    footing_mesh,
    mesh_from_arrays,
    write_mesh_text,
)


def test_unit_square_counts():
    m = build_box_mesh((0, 0), (1, 1), (1, 1), 2)
    assert (m.num_vertices, m.num_cells, len(m.boundary_facets)) == (4, 2, 4)


def test_unit_cube_kuhn_split():
    m = build_box_mesh((0, 0, 0), (1, 1, 1), (1, 1, 1), 3)
    assert (m.num_vertices, m.num_cells, len(m.boundary_facets)) == (8, 6, 12)
    # each Kuhn simplex has volume 1/3! = 1/6
    np.testing.assert_allclose(m.signed_volumes(), np.full(6, 1 / 6), rtol=1e-14)
    # all six contain the main diagonal (0,0,0)-(1,1,1)
    for c in m.cells:
        assert 0 in c and 7 in c


def test_footing_mesh_3d_n4():
    m = build_box_mesh((-32, -32, 0), (32, 32, 64), (4, 4, 4), 3)
    assert m.num_vertices == 125
    assert m.num_cells == 384
    assert m.h == pytest.approx(16 * np.sqrt(3), rel=1e-14)


@pytest.mark.parametrize("lo,hi,n", [((0, 0), (0, 1), 2), ((0, 0), (1, 1), 0), ((1, 0, 0), (0, 1, 1), 1)])
def test_invalid_boxes(lo, hi, n):
    with pytest.raises(MeshError):
        build_box_mesh(lo, hi, n)


@settings(max_examples=25, deadline=None)
@given(
    dim=st.sampled_from([2, 3]),
    n=st.integers(1, 4),
    ext=st.floats(0.5, 5.0),
)
def test_mesh_invariants(dim, n, ext):
    hi = tuple(ext * (k + 1) for k in range(dim))
    m = build_box_mesh((0.0,) * dim, hi, n, dim)
    assert np.all(m.signed_volumes() > 0)
    assert m.signed_volumes().sum() == pytest.approx(np.prod(hi), rel=1e-12)
    assert np.all(np.sort(m.cells, axis=1)[:, 1:] != np.sort(m.cells, axis=1)[:, :-1])
    # facet sharing: interior twice, boundary once
    facets = np.sort(np.concatenate([np.delete(m.cells, i, axis=1) for i in range(dim + 1)]), axis=1)
    _, counts = np.unique(facets, axis=0, return_counts=True)
    assert set(counts) <= {1, 2}
    assert (counts == 1).sum() == len(m.boundary_facets)
    # h is the longest edge
    edges = [np.linalg.norm(m.vertices[m.cells[:, i]] - m.vertices[m.cells[:, j]], axis=1).max()
             for i, j in itertools.combinations(range(dim + 1), 2)]
    assert m.h == max(edges)
    # boundary measure equals the box surface
    if dim == 2:
        surf = 2 * (hi[0] + hi[1])
    else:
        surf = 2 * (hi[0] * hi[1] + hi[1] * hi[2] + hi[0] * hi[2])
    assert m.facet_measures().sum() == pytest.approx(surf, rel=1e-12)


@pytest.mark.parametrize("dim", [2, 3])
def test_refinement_halves_h(dim):
    lo, hi = (0.0,) * dim, (1.0,) * dim
    assert build_box_mesh(lo, hi, 6, dim).h == pytest.approx(build_box_mesh(lo, hi, 3, dim).h / 2, rel=1e-15)


def test_footing_tags_3d():
    m = footing_mesh(3, 4)
    loaded = m.facets_with_tag(BoundaryTag.TOP_LOADED)
    cent = m.vertices[loaded].mean(axis=1)
    assert np.all(np.abs(cent[:, :2]) < 16) and np.allclose(cent[:, 2], 64)
    # every top facet with centroid in the patch is loaded
    top = m.facets_with_tag(BoundaryTag.TOP_LOADED, BoundaryTag.TOP_FREE)
    c = m.vertices[top].mean(axis=1)
    assert (np.all(np.abs(c[:, :2]) < 16, axis=1)).sum() == len(loaded) == 8
    counts = [len(m.facets_with_tag(t)) for t in BoundaryTag]
    assert counts == [32, 8, 24, 128]
    # loaded area is the 32 x 32 patch
    assert m.facet_measures(loaded).sum() == pytest.approx(1024.0)


def test_large_extent_loads_whole_top():
    m = footing_mesh(2, 4, load_extent=100.0)
    assert len(m.facets_with_tag(BoundaryTag.TOP_FREE)) == 0
    assert len(m.facets_with_tag(BoundaryTag.TOP_LOADED)) == 4


def test_unit_cube_small_patch_has_no_loaded_facet():
    cube = build_box_mesh((0, 0, 0), (1, 1, 1), 1, 3)
    m = classify_footing_boundary(cube, 0.25)
    assert len(m.facets_with_tag(BoundaryTag.TOP_LOADED)) == 0
    assert len(m.facets_with_tag(BoundaryTag.TOP_FREE)) == 2


def test_orphan_facet_rejected():
    # an L-shaped region made of two triangles is not a box
    m = mesh_from_arrays([[0, 0], [1, 0], [0, 1], [1, 1], [2, 0]], [[0, 1, 2], [1, 4, 3]])
    with pytest.raises(MeshError):
        classify_footing_boundary(m, 0.5)


def test_untagged_lookup_raises():
    with pytest.raises(MeshError):
        build_box_mesh((0, 0), (1, 1), 1).facets_with_tag(BoundaryTag.BASE)


def test_mesh_from_arrays_orients_cells():
    m = mesh_from_arrays([[0, 0], [1, 0], [0, 1]], [[0, 2, 1]])
    assert m.signed_volumes()[0] == pytest.approx(0.5)


def test_write_mesh_text(tmp_path):
    m = footing_mesh(2, 2)
    path = tmp_path / "m.txt"
    write_mesh_text(m, path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# dim 2 vertices 9 cells 8")
    assert sum(l.startswith("f ") for l in lines) == len(m.boundary_facets)
