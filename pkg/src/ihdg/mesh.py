"""Structured simplicial meshes of the unit square and unit cube.

The 2D mesh splits each cell of an n-by-n grid into four triangles by
both diagonals through the cell center (4 n^2 elements). The 3D mesh
splits each cube of an n-cubed grid into six tetrahedra sharing the main
diagonal (6 n^3 elements). Both constructions give consistently oriented
elements (det B > 0) and conforming faces.

Faces are stored with sorted vertex tuples for deduplication; local face
i of an element is the face opposite its vertex i. The structured size
parameter n defines h = 1/n (the cell edge) for time-step selection;
per-element diameters are stored separately.
"""

import itertools
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Mesh:
    """Immutable simplicial mesh of [0,1]^dim with face adjacency."""

    dim: int
    n: int                      # structured resolution, h = 1/n
    vertices: np.ndarray        # (n_vertices, dim)
    elements: np.ndarray        # (n_elements, dim+1) vertex indices
    faces: np.ndarray           # (n_faces, dim) sorted vertex indices
    face_elements: np.ndarray   # (n_faces, 2) incident elements, -1 if none
    face_local: np.ndarray      # (n_faces, 2) local face index per side
    element_faces: np.ndarray   # (n_elements, dim+1) global face ids
    boundary_mask: np.ndarray   # (n_faces,) bool
    B: np.ndarray               # (n_elements, dim, dim) affine map matrix
    offset: np.ndarray          # (n_elements, dim) affine map offset
    detB: np.ndarray            # (n_elements,)
    invBT: np.ndarray           # (n_elements, dim, dim) inverse transpose of B
    element_diameter: np.ndarray  # (n_elements,)
    face_measure: np.ndarray    # (n_faces,)
    normals: np.ndarray         # (n_elements, dim+1, dim) outward unit normals

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def n_faces(self) -> int:
        return self.faces.shape[0]

    @property
    def h(self) -> float:
        return 1.0 / self.n


def _cells_2d(n):
    """Vertex coordinates and element connectivity of the criss-cross mesh."""
    grid = np.array([[i / n, j / n] for j in range(n + 1) for i in range(n + 1)])
    centers = np.array([[(i + 0.5) / n, (j + 0.5) / n]
                        for j in range(n) for i in range(n)])
    vertices = np.vstack([grid, centers])
    ngrid = (n + 1) ** 2
    gid = lambda i, j: j * (n + 1) + i
    cid = lambda i, j: ngrid + j * n + i
    elements = []
    for j in range(n):
        for i in range(n):
            v00, v10 = gid(i, j), gid(i + 1, j)
            v01, v11 = gid(i, j + 1), gid(i + 1, j + 1)
            c = cid(i, j)
            # Four triangles per cell, all counterclockwise.
            elements += [(v00, v10, c), (v10, v11, c), (v11, v01, c), (v01, v00, c)]
    return vertices, np.array(elements, dtype=np.int64)


_PERM_PARITY = {p: parity for p, parity in zip(
    itertools.permutations(range(3)), (1, -1, -1, 1, 1, -1))}


def _cells_3d(n):
    """Kuhn subdivision: six tetrahedra per cube along the main diagonal."""
    vertices = np.array([[i / n, j / n, k / n]
                         for k in range(n + 1) for j in range(n + 1)
                         for i in range(n + 1)])
    gid = lambda i, j, k: (k * (n + 1) + j) * (n + 1) + i
    eye = np.eye(3, dtype=np.int64)
    elements = []
    for k in range(n):
        for j in range(n):
            for i in range(n):
                base = np.array([i, j, k])
                for perm, parity in _PERM_PARITY.items():
                    path = [base]
                    for axis in perm:
                        path.append(path[-1] + eye[axis])
                    ids = [gid(*p) for p in path]
                    if parity < 0:
                        # Swap the two middle vertices to keep det B > 0.
                        ids[1], ids[2] = ids[2], ids[1]
                    elements.append(tuple(ids))
    return vertices, np.array(elements, dtype=np.int64)


def build_structured_mesh(dim: int, n: int) -> Mesh:
    """Build the structured simplicial mesh of [0,1]^dim with n cells per side.

    Parameters
    ----------
    dim : int
        Space dimension, 2 or 3.
    n : int
        Cells per side, n >= 1. Yields 4 n^2 triangles or 6 n^3 tetrahedra.
    """
    if dim not in (2, 3):
        raise ValueError(f"unsupported dimension {dim}")
    if n < 1:
        raise ValueError("n must be a positive integer")
    vertices, elements = _cells_2d(n) if dim == 2 else _cells_3d(n)
    ne = len(elements)

    # Affine maps x = B xi + offset sending reference vertex m to element vertex m.
    coords = vertices[elements]                     # (ne, dim+1, dim)
    offset = coords[:, 0, :]
    B = np.transpose(coords[:, 1:, :] - coords[:, :1, :], (0, 2, 1))
    detB = np.linalg.det(B)
    if detB.min() <= 0:
        raise RuntimeError("inconsistent element orientation")
    invBT = np.transpose(np.linalg.inv(B), (0, 2, 1))

    diffs = coords[:, :, None, :] - coords[:, None, :, :]
    element_diameter = np.sqrt((diffs ** 2).sum(-1)).max(axis=(1, 2))

    # Dedup faces by sorted vertex tuple; local face i is opposite vertex i.
    face_ids = {}
    faces = []
    face_elements = []
    face_local = []
    element_faces = np.empty((ne, dim + 1), dtype=np.int64)
    for e, elem in enumerate(elements):
        for lf in range(dim + 1):
            fverts = tuple(sorted(v for m, v in enumerate(elem) if m != lf))
            fid = face_ids.get(fverts)
            if fid is None:
                fid = len(faces)
                face_ids[fverts] = fid
                faces.append(fverts)
                face_elements.append([e, -1])
                face_local.append([lf, -1])
            else:
                if face_elements[fid][1] != -1:
                    raise RuntimeError("face with more than two incidences")
                face_elements[fid][1] = e
                face_local[fid][1] = lf
            element_faces[e, lf] = fid
    faces = np.array(faces, dtype=np.int64)
    face_elements = np.array(face_elements, dtype=np.int64)
    face_local = np.array(face_local, dtype=np.int64)
    boundary_mask = face_elements[:, 1] == -1

    fcoords = vertices[faces]                       # (nf, dim, dim)
    if dim == 2:
        tang = fcoords[:, 1] - fcoords[:, 0]
        face_measure = np.linalg.norm(tang, axis=1)
    else:
        cross = np.cross(fcoords[:, 1] - fcoords[:, 0], fcoords[:, 2] - fcoords[:, 0])
        face_measure = 0.5 * np.linalg.norm(cross, axis=1)

    # Outward normals per (element, local face): orthogonal to the face,
    # pointing away from the opposite vertex.
    normals = np.empty((ne, dim + 1, dim))
    for lf in range(dim + 1):
        fc = vertices[faces[element_faces[:, lf]]]  # (ne, dim, dim)
        if dim == 2:
            t = fc[:, 1] - fc[:, 0]
            nrm = np.column_stack([t[:, 1], -t[:, 0]])
        else:
            nrm = np.cross(fc[:, 1] - fc[:, 0], fc[:, 2] - fc[:, 0])
        nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
        opp = vertices[elements[:, lf]]
        outward = ((fc.mean(axis=1) - opp) * nrm).sum(axis=1)
        normals[:, lf, :] = nrm * np.sign(outward)[:, None]

    return Mesh(dim=dim, n=n, vertices=vertices, elements=elements, faces=faces,
                face_elements=face_elements, face_local=face_local,
                element_faces=element_faces, boundary_mask=boundary_mask,
                B=B, offset=offset, detB=detB, invBT=invBT,
                element_diameter=element_diameter, face_measure=face_measure,
                normals=normals)


def face_geometry(mesh: Mesh, face_id: int, side: int):
    """Outward unit normal and measure of a face as seen from one side.

    `side` indexes the face's incidences (0, or 1 for the second element
    of an interior face). Returns (normal, measure).
    """
    if not 0 <= face_id < mesh.n_faces:
        raise IndexError(f"face {face_id} out of range")
    if side not in (0, 1) or mesh.face_elements[face_id, side] < 0:
        raise IndexError(f"face {face_id} has no side {side}")
    e = mesh.face_elements[face_id, side]
    lf = mesh.face_local[face_id, side]
    return mesh.normals[e, lf].copy(), float(mesh.face_measure[face_id])


def dump(mesh: Mesh, stream) -> None:
    """Plain-text mesh listing for debugging; not a stable format."""
    stream.write(f"mesh dim={mesh.dim} n={mesh.n} elements={mesh.n_elements} "
                 f"faces={mesh.n_faces}\n")
    for i, v in enumerate(mesh.vertices):
        stream.write("v %d %s\n" % (i, " ".join(f"{c:.12g}" for c in v)))
    for i, e in enumerate(mesh.elements):
        stream.write("e %d %s\n" % (i, " ".join(str(int(v)) for v in e)))
    for i, f in enumerate(mesh.faces):
        tag = "b" if mesh.boundary_mask[i] else "i"
        stream.write("f %d %s %s\n" % (i, tag, " ".join(str(int(v)) for v in f)))
