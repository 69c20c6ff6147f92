import numpy as np
import pytest

from chns.mesh import (BoundarySpec, GeometryError, PlaneSelector, SpecError, Tag, annulus_mask,
                       build_voxel_mesh, classify_boundary, face_measure, microstructure_mask,
                       read_mask, torus_mask, write_mask)


def test_single_cell():
    m = build_voxel_mesh(np.ones((1, 1), bool), h=1.0)
    assert m.n_elements == 1
    assert m.n_interior_faces == 0
    assert m.n_boundary_faces == 4
    assert m.cell_volume == 1.0


def test_two_cell_strip():
    m = build_voxel_mesh(np.ones((2, 1), bool), h=0.5)
    assert m.n_interior_faces == 1
    assert m.n_boundary_faces == 6
    np.testing.assert_array_equal(m.interior_face_normal(0), [1.0, 0.0])
    # normal points from the left cell into the right one
    assert m.cells[m.if_minus[0]][0] == 0 and m.cells[m.if_plus[0]][0] == 1
    assert m.cell_volume == 0.25


def test_empty_mask():
    with pytest.raises(GeometryError):
        build_voxel_mesh(np.zeros((3, 3), bool))
    with pytest.raises(GeometryError):
        build_voxel_mesh(np.ones((2, 2), bool), dim=3)


def test_isolated_cell_allowed():
    mask = np.zeros((3, 3), bool)
    mask[0, 0] = mask[2, 2] = True
    m = build_voxel_mesh(mask)
    assert m.n_interior_faces == 0
    assert m.n_boundary_faces == 8


def test_face_counts_against_enumeration():
    rng = np.random.default_rng(3)
    mask = rng.random((6, 5, 4)) < 0.6
    m = build_voxel_mesh(mask, h=0.1)
    interior = boundary = 0
    for idx in np.argwhere(mask):
        for a in range(3):
            for s in (-1, 1):
                j = idx.copy()
                j[a] += s
                inside = 0 <= j[a] < mask.shape[a] and mask[tuple(j)]
                if inside:
                    interior += 1
                else:
                    boundary += 1
    assert m.n_interior_faces == interior // 2
    assert m.n_boundary_faces == boundary
    # every element: 2 * dim faces in total
    count = (np.bincount(m.if_minus, minlength=m.n_elements) + np.bincount(m.if_plus, minlength=m.n_elements)
             + np.bincount(m.bf_elem, minlength=m.n_elements))
    np.testing.assert_array_equal(count, 6)
    assert np.all(m.if_minus < m.if_plus)


def test_neighbor_consistent_with_faces():
    mask = np.ones((3, 4), bool)
    mask[1, 2] = False
    m = build_voxel_mesh(mask)
    for f in range(m.n_interior_faces):
        assert m.neighbor(int(m.if_minus[f]), int(m.if_axis[f]), +1) == m.if_plus[f]
    for f in range(m.n_boundary_faces):
        assert m.neighbor(int(m.bf_elem[f]), int(m.bf_axis[f]), int(m.bf_side[f])) == -1


def test_torus_matches_brute_force():
    n = 32
    mask = torus_mask(n)
    count = 0
    for i in range(n):
        for j in range(n):
            for k in range(n):
                x, y, z = (i + 0.5) / n, (j + 0.5) / n, (k + 0.5) / n
                r = np.hypot(x - 0.5, y - 0.5)
                count += (r - 0.35) ** 2 + (z - 0.5) ** 2 < 0.15 ** 2
    assert build_voxel_mesh(mask, h=1 / n).n_elements == count


def test_annulus_is_symmetric():
    a = annulus_mask(40)
    np.testing.assert_array_equal(a, a.T)
    np.testing.assert_array_equal(a, a[::-1])
    assert not a[20, 20] and a[20, 2]


def test_closed_spec_tags_all_walls():
    m = classify_boundary(build_voxel_mesh(np.ones((4, 4), bool), h=0.25), BoundarySpec())
    assert m.closed
    assert m.tag_counts() == {"wall": 16, "inflow": 0, "outflow": 0}


def test_channel_tags():
    m = build_voxel_mesh(np.ones((4, 3), bool), h=0.25)
    m = classify_boundary(m, BoundarySpec((PlaneSelector.parse("x=0"),), (PlaneSelector.parse("x=1"),)))
    assert m.tag_counts() == {"wall": 8, "inflow": 3, "outflow": 3}
    inflow = m.bf_tag == Tag.INFLOW
    assert np.all(m.bf_axis[inflow] == 0) and np.all(m.bf_side[inflow] == -1)
    np.testing.assert_array_equal(m.boundary_face_normal(int(np.flatnonzero(inflow)[0])), [-1.0, 0.0])


def test_microstructure_inflow_count():
    n = 16
    mask = microstructure_mask(n)
    m = classify_boundary(build_voxel_mesh(mask, h=1 / n), BoundarySpec((PlaneSelector(0, 0.0),)))
    assert m.tag_counts()["inflow"] == int(mask[0].sum())
    # obstacles leave holes, so there are walls inside the domain
    assert m.tag_counts()["wall"] > 2 * mask.shape[0] + 2 * n


def test_selector_errors():
    m = build_voxel_mesh(np.ones((4, 4), bool), h=0.25)
    with pytest.raises(SpecError):
        PlaneSelector.parse("w=1")
    with pytest.raises(SpecError):
        classify_boundary(m, BoundarySpec((PlaneSelector(0, 0.5),)))  # interior plane
    with pytest.raises(SpecError):
        classify_boundary(m, BoundarySpec((PlaneSelector(0, 0.1),)))  # off lattice
    with pytest.raises(SpecError):
        classify_boundary(m, BoundarySpec((PlaneSelector(2, 0.0),)))  # no z axis in 2D
    with pytest.raises(SpecError):
        classify_boundary(m, BoundarySpec((PlaneSelector(0, 0.0),), (PlaneSelector(0, 0.0),)))


def test_face_measure():
    assert face_measure(build_voxel_mesh(np.ones((2, 2), bool), h=0.25)) == 0.25
    assert face_measure(build_voxel_mesh(np.ones((2, 2, 2), bool), h=0.1)) == pytest.approx(0.01)
    assert face_measure(build_voxel_mesh(np.ones((1, 1, 1), bool), h=1 / 64)) == 1 / 4096


def test_mask_file_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    mask = rng.random((5, 4, 3)) < 0.5
    mask[0, 0, 0] = True
    path = tmp_path / "m.txt"
    write_mask(path, mask, 0.125)
    back, h = read_mask(path)
    np.testing.assert_array_equal(back, mask)
    assert h == 0.125


def test_mask_file_errors(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("2 2 2 0.5\n101\n")
    with pytest.raises(GeometryError):
        read_mask(p)
    p.write_text("")
    with pytest.raises(GeometryError):
        read_mask(p)
