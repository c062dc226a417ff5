import io
import math

import numpy as np
import pytest

from ihdg.mesh import build_structured_mesh, dump, face_geometry

CASES = [(2, 1), (2, 2), (2, 4), (2, 8), (3, 1), (3, 2), (3, 3)]


@pytest.mark.parametrize("dim,n,count", [(2, 8, 256), (3, 2, 48), (2, 1, 4)])
def test_element_counts(dim, n, count):
    mesh = build_structured_mesh(dim, n)
    assert mesh.n_elements == count


def test_single_cell_entities():
    # One criss-cross cell: 4 triangles, 5 vertices, 8 faces, 4 on the boundary.
    mesh = build_structured_mesh(2, 1)
    assert mesh.n_elements == 4
    assert len(mesh.vertices) == 5
    assert mesh.n_faces == 8
    assert mesh.boundary_mask.sum() == 4


def test_rejects_bad_args():
    with pytest.raises(ValueError):
        build_structured_mesh(2, 0)
    with pytest.raises(ValueError):
        build_structured_mesh(4, 2)


@pytest.mark.parametrize("dim,n", CASES)
def test_volume_partition(dim, n):
    mesh = build_structured_mesh(dim, n)
    vol = (mesh.detB / math.factorial(dim)).sum()
    assert abs(vol - 1.0) < 1e-12
    assert mesh.detB.min() > 0


@pytest.mark.parametrize("dim,n", CASES)
def test_face_incidence_counts(dim, n):
    mesh = build_structured_mesh(dim, n)
    interior = (~mesh.boundary_mask).sum()
    boundary = mesh.boundary_mask.sum()
    assert mesh.n_elements * (dim + 1) == 2 * interior + boundary
    sides = (mesh.face_elements >= 0).sum(axis=1)
    assert (sides[mesh.boundary_mask] == 1).all()
    assert (sides[~mesh.boundary_mask] == 2).all()


@pytest.mark.parametrize("dim", [2, 3])
def test_refinement_count_nesting(dim):
    factor = 4 if dim == 2 else 8
    c2 = build_structured_mesh(dim, 2).n_elements
    c4 = build_structured_mesh(dim, 4).n_elements
    assert c4 == factor * c2


@pytest.mark.parametrize("dim,n", CASES)
def test_opposite_normals_and_unit_length(dim, n):
    mesh = build_structured_mesh(dim, n)
    assert np.abs(np.linalg.norm(mesh.normals, axis=2) - 1.0).max() < 1e-12
    for f in np.flatnonzero(~mesh.boundary_mask):
        n0, m0 = face_geometry(mesh, f, 0)
        n1, m1 = face_geometry(mesh, f, 1)
        assert np.abs(n0 + n1).max() < 1e-12
        assert m0 == m1 > 0


def test_boundary_normal_axis_aligned():
    mesh = build_structured_mesh(2, 1)
    # The face on {x=0} must have outward normal (-1, 0).
    for f in np.flatnonzero(mesh.boundary_mask):
        pts = mesh.vertices[mesh.faces[f]]
        if np.abs(pts[:, 0]).max() < 1e-14:
            nrm, measure = face_geometry(mesh, f, 0)
            assert np.allclose(nrm, [-1.0, 0.0])
            assert abs(measure - 1.0) < 1e-14
            break
    else:
        pytest.fail("no face on x=0")


def test_diagonal_face_geometry():
    # Half-diagonal faces of the single criss-cross cell: normal parallel
    # to (+-1, +-1)/sqrt(2), measure sqrt(2)/2.
    mesh = build_structured_mesh(2, 1)
    for f in np.flatnonzero(~mesh.boundary_mask):
        nrm, measure = face_geometry(mesh, f, 0)
        assert abs(measure - math.sqrt(2) / 2) < 1e-14
        assert abs(abs(nrm[0]) - 1 / math.sqrt(2)) < 1e-14
        assert abs(abs(nrm[1]) - 1 / math.sqrt(2)) < 1e-14
    # Hand value: the face {(0,0),(.5,.5)} seen from triangle 0 (the one
    # containing (1,0)) has outward normal (-1,1)/sqrt(2).
    face_row = np.flatnonzero([set(mesh.faces[f]) == {0, len(mesh.vertices) - 1}
                               for f in range(mesh.n_faces)])[0]
    sides = mesh.face_elements[face_row]
    nrm0, _ = face_geometry(mesh, face_row, 0)
    assert sides[0] == 0
    assert np.allclose(nrm0, [-1 / math.sqrt(2), 1 / math.sqrt(2)])


def test_face_geometry_rejects_bad_index():
    mesh = build_structured_mesh(2, 1)
    with pytest.raises(IndexError):
        face_geometry(mesh, mesh.n_faces, 0)
    bf = int(np.flatnonzero(mesh.boundary_mask)[0])
    with pytest.raises(IndexError):
        face_geometry(mesh, bf, 1)


@pytest.mark.parametrize("dim,n", [(2, 3), (3, 2)])
def test_affine_maps_reproduce_vertices(dim, n):
    mesh = build_structured_mesh(dim, n)
    ref = np.vstack([np.zeros(dim), np.eye(dim)])
    mapped = np.einsum("eij,vj->evi", mesh.B, ref) + mesh.offset[:, None, :]
    assert np.abs(mapped - mesh.vertices[mesh.elements]).max() < 1e-14


def test_element_diameters():
    mesh = build_structured_mesh(2, 2)
    # Criss-cross triangles at n=2: longest edge is the cell edge, 1/2.
    assert np.abs(mesh.element_diameter - 0.5).max() < 1e-14


def test_dump_roundtrip_lines():
    mesh = build_structured_mesh(2, 1)
    buf = io.StringIO()
    dump(mesh, buf)
    lines = buf.getvalue().strip().splitlines()
    assert len(lines) == 1 + 5 + 4 + 8
    assert lines[0].startswith("mesh dim=2")
