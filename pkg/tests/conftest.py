import math

import numpy as np

from ihdg.mesh import Mesh


def reference_triangle_mesh() -> Mesh:
    """Hand-assembled one-element mesh: the reference triangle itself.

    Every geometric quantity below is written out from coordinate
    geometry, independent of the mesh builder, so assembled matrices on
    this mesh can be compared against symbolically integrated values.
    """
    s = 1.0 / math.sqrt(2.0)
    return Mesh(
        dim=2, n=1,
        vertices=np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
        elements=np.array([[0, 1, 2]]),
        faces=np.array([[1, 2], [0, 2], [0, 1]]),
        face_elements=np.array([[0, -1], [0, -1], [0, -1]]),
        face_local=np.array([[0, -1], [1, -1], [2, -1]]),
        element_faces=np.array([[0, 1, 2]]),
        boundary_mask=np.ones(3, dtype=bool),
        B=np.eye(2)[None, :, :],
        offset=np.zeros((1, 2)),
        detB=np.ones(1),
        invBT=np.eye(2)[None, :, :],
        element_diameter=np.array([math.sqrt(2.0)]),
        face_measure=np.array([math.sqrt(2.0), 1.0, 1.0]),
        normals=np.array([[[s, s], [-1.0, 0.0], [0.0, -1.0]]]),
    )
