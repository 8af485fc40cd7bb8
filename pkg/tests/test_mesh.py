import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coldplasma.mesh import build_mesh, intersect_segment_with_faces, segment_moves


def test_counts_and_geometry():
    mesh = build_mesh([-1, -1, -1], [1, 1, 1], (4, 4, 4))
    assert mesh.n_cells == 64
    assert mesh.cell_volume == pytest.approx(0.125)
    assert mesh.volume == pytest.approx(8.0)
    # 3 directions x 3 internal planes x 16 faces per plane
    assert mesh.n_interior_faces == 144


def test_periodic_faces_wrap_around():
    mesh = build_mesh([0, 0, 0], [1, 1, 1], (3, 2, 2), periodic=(True, False, False))
    s1, s2 = mesh.interior_faces(0)
    assert len(s1) == 12
    ijk1, ijk2 = mesh.cell_multi_index(s1), mesh.cell_multi_index(s2)
    assert np.all((ijk1[:, 0] + 1) % 3 == ijk2[:, 0])
    assert len(mesh.interior_faces(1)[0]) == 6


def test_cell_index_roundtrip():
    mesh = build_mesh([0, 0, 0], [1, 2, 3], (3, 4, 5))
    cells = np.arange(mesh.n_cells)
    assert np.array_equal(mesh.cell_index(mesh.cell_multi_index(cells)), cells)


def test_locate_points_inside_and_outside():
    mesh = build_mesh([-1, -1, -1], [1, 1, 1], (4, 4, 4))
    cells, ref, inside = mesh.locate_points([[0.1, -0.6, 0.9], [1.5, 0, 0]])
    assert inside.tolist() == [True, False]
    assert cells[1] == -1
    x = mesh.ref_to_physical(cells[0], ref[0])
    assert np.allclose(x, [0.1, -0.6, 0.9])
    assert mesh.locate_point([2.0, 0.0, 0.0]) is None


def test_locate_wraps_periodic_axes():
    mesh = build_mesh([0, 0, 0], [1, 1, 1], (2, 2, 2), periodic=(True, True, True))
    a = mesh.locate_point([1.25, -0.25, 0.5 + 3.0])
    b = mesh.locate_point([0.25, 0.75, 0.5])
    assert a.cell == b.cell
    assert np.allclose(a.ref, b.ref)


def test_invalid_mesh_rejected():
    with pytest.raises(ValueError):
        build_mesh([0, 0, 0], [1, 1, 1], (0, 1, 1))
    with pytest.raises(ValueError):
        build_mesh([0, 0, 0], [1, 0, 1], (1, 1, 1))


def test_intersections_of_a_diagonal_move():
    mesh = build_mesh([0, 0, 0], [2, 2, 2], (2, 2, 2))
    pts = intersect_segment_with_faces(mesh, [0.25, 0.5, 0.5], [1.75, 0.5, 0.5])
    assert np.allclose(np.array(pts)[:, 0], [0.25, 1.0, 1.75])


def test_corner_crossing_has_no_empty_segment():
    mesh = build_mesh([0, 0, 0], [2, 2, 2], (2, 2, 2))
    segs = segment_moves(mesh, [[0.5, 0.5, 0.5]], [[1.5, 1.5, 1.5]])
    assert segs.counts[0] == 2
    assert np.allclose(segs.end[0], [1, 1, 1])


def test_stationary_move_gives_one_segment():
    mesh = build_mesh([0, 0, 0], [1, 1, 1], (3, 3, 3))
    segs = segment_moves(mesh, [[0.2, 0.3, 0.4]], [[0.2, 0.3, 0.4]])
    assert segs.counts.tolist() == [1]


coords = st.floats(-0.999, 0.999)
moves = st.floats(-1.5, 1.5)


@settings(max_examples=60, deadline=None)
@given(st.tuples(coords, coords, coords), st.tuples(moves, moves, moves),
       st.tuples(st.booleans(), st.booleans(), st.booleans()))
def test_segments_partition_the_move(a, d, periodic):
    mesh = build_mesh([-1, -1, -1], [1, 1, 1], (4, 3, 5), periodic)
    a = np.array(a)
    b = a + np.array(d)
    for ax in range(3):
        if not periodic[ax]:
            b[ax] = np.clip(b[ax], -1.0, 1.0)
    segs = segment_moves(mesh, a[None], b[None])
    assert np.allclose((segs.end - segs.start).sum(axis=0), b - a, atol=1e-13)
    # consecutive pieces are joined and each lies inside its cell
    assert np.allclose(segs.end[:-1], segs.start[1:])
    assert segs.ref_start.min() > -1e-9 and segs.ref_start.max() < 1 + 1e-9
    assert segs.ref_end.min() > -1e-9 and segs.ref_end.max() < 1 + 1e-9
    crossings = sum(abs(np.floor((b[i] + 1) / mesh.h[i]) - np.floor((a[i] + 1) / mesh.h[i]))
                    for i in range(3))
    assert segs.counts[0] <= crossings + 1
