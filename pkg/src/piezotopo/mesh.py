"""Structured hexahedral mesh of the harvester design domain.

The fixed domain is a tensor-product grid in meters (config lengths are given
in millimeters). Along each axis the grid is built from segments whose
boundaries coincide with every region interface, so the five tagged regions
(piezoelectric and substrate design layers, the clamped nondesign strip made of
silicon below and PZT above, and the end weight block) always conform without
hanging nodes. Nodes are numbered z-fastest so each node's neighbor below is
its immediate predecessor inside a column.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

MM = 1e-3  # config lengths are millimeters


class Tag(IntEnum):
    PE_DESIGN = 0
    SB_DESIGN = 1
    PE_NONDESIGN = 2
    SB_NONDESIGN = 3
    WEIGHT = 4


@dataclass(frozen=True)
class Resolution:
    """Element counts per axis segment.

    x segments: clamp strip, design span, weight span.
    y segments: side strips (both, symmetric), weight square.
    z segments: lower substrate, transition layer under the film interface
    (one film-element thickness tall per count), piezoelectric film.
    """

    nx_clamp: int = 2
    nx_span: int = 24
    nx_weight: int = 1
    ny_side: int = 24
    ny_weight: int = 2
    nz_sb_lower: int = 4
    nz_sb_upper: int = 1
    nz_pe: int = 2

    def __post_init__(self):
        counts = {
            "nx_clamp": self.nx_clamp,
            "nx_span": self.nx_span,
            "nx_weight": self.nx_weight,
            "ny_side": self.ny_side,
            "ny_weight": self.ny_weight,
            "nz_sb_lower": self.nz_sb_lower,
            "nz_pe": self.nz_pe,
        }
        for name, n in counts.items():
            if n < 1:
                raise ValueError(f"resolution {name} must be at least 1, got {n}")
        if self.nz_sb_upper < 0:
            raise ValueError(f"resolution nz_sb_upper must be nonnegative, got {self.nz_sb_upper}")


@dataclass(frozen=True)
class DomainConfig:
    """Benchmark geometry, lengths in millimeters."""

    plate_side_length: float = 500.0
    pe_thickness: float = 4.0
    sb_thickness: float = 36.0
    clamp_strip_width: float = 20.0
    weight_square_side: float = 20.0
    weight_thickness: float = 40.0
    weight_density_factor: float = 100.0
    resolution: Resolution = field(default_factory=Resolution)

    def __post_init__(self):
        lengths = {
            "plate_side_length": self.plate_side_length,
            "pe_thickness": self.pe_thickness,
            "sb_thickness": self.sb_thickness,
            "clamp_strip_width": self.clamp_strip_width,
            "weight_square_side": self.weight_square_side,
            "weight_thickness": self.weight_thickness,
        }
        for name, val in lengths.items():
            if val <= 0.0:
                raise ValueError(f"{name} must be positive, got {val}")
        if self.weight_square_side >= self.plate_side_length:
            raise ValueError("weight_square_side must be smaller than plate_side_length")
        if self.weight_thickness > self.sb_thickness + self.pe_thickness:
            raise ValueError("weight_thickness exceeds the total stack thickness")
        if self.weight_density_factor <= 0.0:
            raise ValueError("weight_density_factor must be positive")


@dataclass(eq=False)
class Mesh:
    """Immutable structured hex mesh with region tags and node sets."""

    coords: np.ndarray  # (nn, 3) meters
    elems: np.ndarray  # (ne, 8) VTK hexahedron node order
    tags: np.ndarray  # (ne,) Tag values
    node_grid: np.ndarray  # (nn, 3) lattice indices (ix, iy, iz)
    elem_grid: np.ndarray  # (ne, 3)
    grid_shape: tuple  # node counts per axis (NX, NY, NZ)
    clamp_nodes: np.ndarray
    gamma_xi_nodes: np.ndarray
    pzt_ground_nodes: np.ndarray
    z_interface: float  # meters
    pe_thickness: float  # meters
    weight_density_factor: float = 1.0
    _cache: dict = field(default_factory=dict, repr=False)

    # ---- derived lattice helpers -------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return self.coords.shape[0]

    @property
    def n_elems(self) -> int:
        return self.elems.shape[0]

    @property
    def column_index(self) -> np.ndarray:
        """Same (x, y) lattice position -> same column id."""
        ny = self.grid_shape[1]
        return self.node_grid[:, 0] * ny + self.node_grid[:, 1]

    @property
    def neighbor_below_array(self) -> np.ndarray:
        """Per node, the node one z-layer down in its column, -1 at the bottom."""
        below = np.where(self.node_grid[:, 2] > 0, np.arange(self.n_nodes) - 1, -1)
        return below

    @property
    def elem_volumes(self) -> np.ndarray:
        if "elem_volumes" not in self._cache:
            lo = self.coords[self.elems[:, 0]]
            hi = self.coords[self.elems[:, 6]]
            self._cache["elem_volumes"] = np.prod(hi - lo, axis=1)
        return self._cache["elem_volumes"]

    @property
    def elem_sizes(self) -> np.ndarray:
        """(ne, 3) box edge lengths."""
        if "elem_sizes" not in self._cache:
            lo = self.coords[self.elems[:, 0]]
            hi = self.coords[self.elems[:, 6]]
            self._cache["elem_sizes"] = hi - lo
        return self._cache["elem_sizes"]

    @property
    def pe_slab_elements(self) -> np.ndarray:
        """Mask of elements lying at or above the film/substrate interface."""
        if "pe_slab" not in self._cache:
            z_lo = self.coords[self.elems[:, 0], 2]
            self._cache["pe_slab"] = z_lo >= self.z_interface - 1e-12
        return self._cache["pe_slab"]

    @property
    def potential_nodes(self) -> np.ndarray:
        """Sorted node ids carrying an electric potential degree of freedom."""
        if "potential_nodes" not in self._cache:
            els = self.elems[self.pe_slab_elements]
            self._cache["potential_nodes"] = np.unique(els)
        return self._cache["potential_nodes"]

    def nodes_touching(self, *tags: Tag) -> np.ndarray:
        """Sorted node ids belonging to at least one element with any given tag."""
        mask = np.isin(self.tags, [int(t) for t in tags])
        if not mask.any():
            return np.empty(0, dtype=int)
        return np.unique(self.elems[mask])

    def lumped_node_volumes(self, elem_mask: np.ndarray) -> np.ndarray:
        """Row-sum lumped nodal volumes over the selected elements."""
        vols = np.zeros(self.n_nodes)
        np.add.at(vols, self.elems[elem_mask].ravel(),
                  np.repeat(self.elem_volumes[elem_mask] / 8.0, 8))
        return vols

    def design_node_volumes(self) -> np.ndarray:
        if "design_node_volumes" not in self._cache:
            mask = np.isin(self.tags, [int(Tag.PE_DESIGN), int(Tag.SB_DESIGN)])
            self._cache["design_node_volumes"] = self.lumped_node_volumes(mask)
        return self._cache["design_node_volumes"]


def neighbor_below(mesh: Mesh, node: int):
    """The node one layer down in the same column, or None at the bottom."""
    if not 0 <= node < mesh.n_nodes:
        raise IndexError(f"node {node} not in mesh with {mesh.n_nodes} nodes")
    below = mesh.neighbor_below_array[node]
    return None if below < 0 else int(below)


def _segment_lines(segments):
    """Grid lines from (start, stop, count) segments sharing endpoints."""
    lines = [segments[0][0]]
    for start, stop, count in segments:
        lines.extend(np.linspace(start, stop, count + 1)[1:])
    return np.asarray(lines)


def _build_lattice(xs, ys, zs):
    nx, ny, nz = len(xs), len(ys), len(zs)
    ix, iy, iz = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    node_grid = np.column_stack([ix.ravel(), iy.ravel(), iz.ravel()])
    coords = np.column_stack([xs[node_grid[:, 0]], ys[node_grid[:, 1]], zs[node_grid[:, 2]]])

    ex, ey, ez = np.meshgrid(
        np.arange(nx - 1), np.arange(ny - 1), np.arange(nz - 1), indexing="ij"
    )
    elem_grid = np.column_stack([ex.ravel(), ey.ravel(), ez.ravel()])

    def nid(i, j, k):
        return (i * ny + j) * nz + k

    i, j, k = elem_grid[:, 0], elem_grid[:, 1], elem_grid[:, 2]
    elems = np.column_stack([
        nid(i, j, k), nid(i + 1, j, k), nid(i + 1, j + 1, k), nid(i, j + 1, k),
        nid(i, j, k + 1), nid(i + 1, j, k + 1), nid(i + 1, j + 1, k + 1), nid(i, j + 1, k + 1),
    ])
    return coords, elems, node_grid, elem_grid, (nx, ny, nz)


def build_benchmark_mesh(config: DomainConfig) -> Mesh:
    """Benchmark layout: clamp strip at x=0, design plate, weight at the free end."""
    res = config.resolution
    L = config.plate_side_length * MM
    cw = config.clamp_strip_width * MM
    ws = config.weight_square_side * MM
    t_sb = config.sb_thickness * MM
    t_pe = config.pe_thickness * MM
    t_w = config.weight_thickness * MM

    x_segments = [
        (0.0, cw, res.nx_clamp),
        (cw, cw + L - ws, res.nx_span),
        (cw + L - ws, cw + L, res.nx_weight),
    ]
    y_lo = (L - ws) / 2.0
    y_segments = [
        (0.0, y_lo, res.ny_side),
        (y_lo, y_lo + ws, res.ny_weight),
        (y_lo + ws, L, res.ny_side),
    ]
    layer = t_pe / res.nz_pe
    z_mid = t_sb - res.nz_sb_upper * layer
    if z_mid <= 0.0:
        raise ValueError(
            "transition layers under the film interface consume the whole substrate; "
            "reduce nz_sb_upper or nz_pe"
        )
    z_segments = [(0.0, z_mid, res.nz_sb_lower)]
    if res.nz_sb_upper > 0:
        z_segments.append((z_mid, t_sb, res.nz_sb_upper))
    z_segments.append((t_sb, t_sb + t_pe, res.nz_pe))

    xs = _segment_lines(x_segments)
    ys = _segment_lines(y_segments)
    zs = _segment_lines(z_segments)

    tol = 1e-9 * (t_sb + t_pe)
    if not np.any(np.abs(zs - t_w) < tol):
        raise ValueError(
            f"weight top face at z = {config.weight_thickness} mm does not conform to the "
            f"z grid lines {np.round(zs / MM, 6).tolist()} mm at the weight/design interface"
        )

    coords, elems, node_grid, elem_grid, grid_shape = _build_lattice(xs, ys, zs)

    centers = 0.5 * (coords[elems[:, 0]] + coords[elems[:, 6]])
    cx, cy, cz = centers[:, 0], centers[:, 1], centers[:, 2]
    in_weight_plan = (cx > cw + L - ws) & (np.abs(cy - L / 2.0) < ws / 2.0)

    tags = np.empty(elems.shape[0], dtype=np.int64)
    tags[:] = Tag.SB_DESIGN
    tags[cz > t_sb] = Tag.PE_DESIGN
    clamp_cols = cx < cw
    tags[clamp_cols & (cz < t_sb)] = Tag.SB_NONDESIGN
    tags[clamp_cols & (cz > t_sb)] = Tag.PE_NONDESIGN
    tags[in_weight_plan & (cz < t_w)] = Tag.WEIGHT

    z = coords[:, 2]
    x = coords[:, 0]
    clamp_nodes = np.flatnonzero((x < tol) & (z <= t_sb + tol))
    pzt_ground_nodes = np.flatnonzero(np.abs(z - t_sb) < tol)

    mesh = Mesh(
        coords=coords,
        elems=elems,
        tags=tags,
        node_grid=node_grid,
        elem_grid=elem_grid,
        grid_shape=grid_shape,
        clamp_nodes=clamp_nodes,
        gamma_xi_nodes=np.empty(0, dtype=int),
        pzt_ground_nodes=pzt_ground_nodes,
        z_interface=t_sb,
        pe_thickness=t_pe,
        weight_density_factor=config.weight_density_factor,
    )
    bottom = np.flatnonzero(z < tol)
    sb_design_nodes = mesh.nodes_touching(Tag.SB_DESIGN)
    mesh.gamma_xi_nodes = np.intersect1d(bottom, sb_design_nodes)
    return mesh


def build_beam_mesh(length: float, width: float, thickness: float,
                    nx: int, ny: int, nz: int) -> Mesh:
    """Plain solid cantilever (all substrate material), clamped at x=0.

    Lengths in millimeters. Used as an eigensolver oracle against the
    Euler-Bernoulli closed form; there is no film, weight, or potential DOF.
    """
    xs = np.linspace(0.0, length * MM, nx + 1)
    ys = np.linspace(0.0, width * MM, ny + 1)
    zs = np.linspace(0.0, thickness * MM, nz + 1)
    coords, elems, node_grid, elem_grid, grid_shape = _build_lattice(xs, ys, zs)
    tags = np.full(elems.shape[0], int(Tag.SB_NONDESIGN), dtype=np.int64)
    clamp_nodes = np.flatnonzero(coords[:, 0] < 1e-12)
    return Mesh(
        coords=coords,
        elems=elems,
        tags=tags,
        node_grid=node_grid,
        elem_grid=elem_grid,
        grid_shape=grid_shape,
        clamp_nodes=clamp_nodes,
        gamma_xi_nodes=np.empty(0, dtype=int),
        pzt_ground_nodes=np.empty(0, dtype=int),
        z_interface=thickness * MM + 1.0,  # above the box: no film slab
        pe_thickness=0.0,
    )
