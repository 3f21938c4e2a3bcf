"""Trilinear hexahedron shape functions on axis-aligned boxes, 2x2x2 Gauss rule.

The structured mesh contains only a handful of distinct box sizes, so shape
data is computed once per size class and shared by every element in the class.
"""

from __future__ import annotations

import numpy as np

# Local node order matches the VTK hexahedron: bottom face counterclockwise,
# then the top face.
REF_NODES = np.array([
    [-1.0, -1.0, -1.0],
    [1.0, -1.0, -1.0],
    [1.0, 1.0, -1.0],
    [-1.0, 1.0, -1.0],
    [-1.0, -1.0, 1.0],
    [1.0, -1.0, 1.0],
    [1.0, 1.0, 1.0],
    [-1.0, 1.0, 1.0],
])

_G = 1.0 / np.sqrt(3.0)
GAUSS_POINTS = np.array([
    [sx * _G, sy * _G, sz * _G]
    for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)
], dtype=float)
N_GP = 8


def shape_values(points=GAUSS_POINTS) -> np.ndarray:
    """N with shape (n_points, 8)."""
    xi, eta, zeta = points[:, 0:1], points[:, 1:2], points[:, 2:3]
    rx, ry, rz = REF_NODES[:, 0], REF_NODES[:, 1], REF_NODES[:, 2]
    return 0.125 * (1.0 + xi * rx) * (1.0 + eta * ry) * (1.0 + zeta * rz)


def shape_gradients_ref(points=GAUSS_POINTS) -> np.ndarray:
    """dN/d(xi, eta, zeta) with shape (n_points, 8, 3)."""
    xi, eta, zeta = points[:, 0:1], points[:, 1:2], points[:, 2:3]
    rx, ry, rz = REF_NODES[:, 0], REF_NODES[:, 1], REF_NODES[:, 2]
    g = np.empty((points.shape[0], 8, 3))
    g[:, :, 0] = 0.125 * rx * (1.0 + eta * ry) * (1.0 + zeta * rz)
    g[:, :, 1] = 0.125 * ry * (1.0 + xi * rx) * (1.0 + zeta * rz)
    g[:, :, 2] = 0.125 * rz * (1.0 + xi * rx) * (1.0 + eta * ry)
    return g


class BoxClass:
    """Shape data for one box size (dx, dy, dz), shared across its elements."""

    def __init__(self, dims: np.ndarray, elem_ids: np.ndarray):
        self.dims = dims
        self.elem_ids = elem_ids
        dx, dy, dz = dims
        self.detw = dx * dy * dz / 8.0  # constant Jacobian, unit Gauss weights
        self.N = shape_values()  # (8gp, 8)
        ref = shape_gradients_ref()
        self.dN = ref * (2.0 / dims)  # (8gp, 8, 3) physical gradients

    def strain_displacement(self) -> np.ndarray:
        """B with shape (8gp, 6, 24); Voigt order (xx, yy, zz, yz, xz, xy)."""
        B = np.zeros((N_GP, 6, 24))
        dN = self.dN
        for a in range(8):
            c = 3 * a
            B[:, 0, c + 0] = dN[:, a, 0]
            B[:, 1, c + 1] = dN[:, a, 1]
            B[:, 2, c + 2] = dN[:, a, 2]
            B[:, 3, c + 1] = dN[:, a, 2]
            B[:, 3, c + 2] = dN[:, a, 1]
            B[:, 4, c + 0] = dN[:, a, 2]
            B[:, 4, c + 2] = dN[:, a, 0]
            B[:, 5, c + 0] = dN[:, a, 1]
            B[:, 5, c + 1] = dN[:, a, 0]
        return B


def box_classes(mesh, elem_mask=None):
    """Group (selected) elements by box size; cached on the mesh."""
    key = ("box_classes", None if elem_mask is None else elem_mask.tobytes())
    if key in mesh._cache:
        return mesh._cache[key]
    ids = np.arange(mesh.n_elems) if elem_mask is None else np.flatnonzero(elem_mask)
    sizes = mesh.elem_sizes[ids]
    rounded = np.round(sizes / sizes.max() * 1e12).astype(np.int64)
    _, inverse = np.unique(rounded, axis=0, return_inverse=True)
    classes = []
    for c in range(inverse.max() + 1):
        members = ids[inverse == c]
        classes.append(BoxClass(sizes[np.flatnonzero(inverse == c)[0]], members))
    mesh._cache[key] = classes
    return classes
