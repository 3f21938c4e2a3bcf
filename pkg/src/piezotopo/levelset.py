"""Level-set fields, their reaction-diffusion update, and cross-section metrics.

Each designable region carries a nodal field in [-1, 1]. Nodes shared with
nondesign material are frozen at +1, nodes outside the field's own region at
-1. One update step treats the anisotropic diffusion implicitly (zero-flux
boundary, frozen nodes as Dirichlet data) and the normalized reaction
explicitly, then clamps back to [-1, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from . import _hex
from .materials import HeavisideParams, smoothed_heaviside
from .mesh import Mesh, Tag


@dataclass(frozen=True)
class RegularizationTensor:
    """Direction-dependent diffusion coefficients of the update."""

    tau_x: float
    tau_y: float
    tau_z: float

    def __post_init__(self):
        taus = (self.tau_x, self.tau_y, self.tau_z)
        if any(t < 0.0 for t in taus):
            raise ValueError(f"regularization coefficients must be nonnegative, got {taus}")


@dataclass(frozen=True)
class UpdateParams:
    K_coeff: float = 1.0
    c_norm: float = 2.0
    dt: float = 1.0

    def __post_init__(self):
        if self.K_coeff <= 0.0 or self.c_norm <= 0.0 or self.dt <= 0.0:
            raise ValueError("K_coeff, c_norm and dt must all be positive")


@dataclass(frozen=True)
class LevelSetField:
    """Nodal level-set values with a design mask and frozen complement."""

    values: np.ndarray
    design_mask: np.ndarray
    frozen_values: np.ndarray
    region: str  # "pe", "sb" or "both"; selects the diffusion domain
    region_elements: np.ndarray

    def __post_init__(self):
        vals = np.where(self.design_mask, self.values, self.frozen_values)
        if np.max(np.abs(vals)) > 1.0 + 1e-12:
            raise ValueError("level-set values must lie in [-1, 1]")
        object.__setattr__(self, "values", vals)

    def with_values(self, values: np.ndarray) -> "LevelSetField":
        return replace(self, values=values)


_REGION_TAGS = {
    "pe": ((Tag.PE_DESIGN,), (Tag.PE_NONDESIGN, Tag.WEIGHT)),
    "sb": ((Tag.SB_DESIGN,), (Tag.SB_NONDESIGN, Tag.WEIGHT)),
    "both": ((Tag.PE_DESIGN, Tag.SB_DESIGN),
             (Tag.PE_NONDESIGN, Tag.SB_NONDESIGN, Tag.WEIGHT)),
}


def make_design_field(mesh: Mesh, region: str, initial: float = 1.0) -> LevelSetField:
    """Field over one design region, frozen +1 against nondesign material.

    A node is designable when it belongs to at least one design element of the
    region and to no nondesign element of the same material slab (including
    the weight block). Frozen nodes default to -1 outside the region.
    """
    if region not in _REGION_TAGS:
        raise ValueError(f"region must be one of {sorted(_REGION_TAGS)}, got {region!r}")
    design_tags, nondesign_tags = _REGION_TAGS[region]
    on_design = np.zeros(mesh.n_nodes, dtype=bool)
    on_design[mesh.nodes_touching(*design_tags)] = True
    on_nondesign = np.zeros(mesh.n_nodes, dtype=bool)
    on_nondesign[mesh.nodes_touching(*nondesign_tags)] = True

    design_mask = on_design & ~on_nondesign
    frozen = np.where(on_nondesign, 1.0, -1.0)
    values = np.where(design_mask, float(initial), frozen)
    region_elements = np.flatnonzero(np.isin(mesh.tags, [int(t) for t in design_tags]))
    return LevelSetField(
        values=values,
        design_mask=design_mask,
        frozen_values=frozen,
        region=region,
        region_elements=region_elements,
    )


def characteristic(field: LevelSetField, params: HeavisideParams) -> np.ndarray:
    """Relaxed characteristic function h(phi) per node."""
    return smoothed_heaviside(field.values, params)


def normalize_sensitivity(raw: np.ndarray, mesh: Mesh, c_norm: float,
                          mask: np.ndarray | None = None) -> np.ndarray:
    """Scale to c_norm * (integral of 1) / (integral of |raw|), lumped nodal quadrature."""
    vols = mesh.design_node_volumes()
    if mask is not None:
        vols = np.where(mask, vols, 0.0)
    denom = float(vols @ np.abs(raw))
    if denom == 0.0:
        raise ValueError("sensitivity field vanished; nothing to normalize")
    c_tilde = c_norm * float(vols.sum()) / denom
    return c_tilde * raw


def directional_operators(mesh: Mesh, elem_mask: np.ndarray, cache_tag: str):
    """Unit-coefficient directional Laplacians and lumped mass on a subdomain.

    Gradients are sampled at element corners rather than Gauss points, which
    collapses each directional stiffness to edge differences. The resulting
    operator is an M-matrix, so penalized diffusion solves built from it obey
    the discrete maximum principle even on high-aspect elements.
    """
    key = ("dir_ops", cache_tag)
    if key in mesh._cache:
        return mesh._cache[key]
    mask = elem_mask
    nn = mesh.n_nodes
    dN_corner_ref = _hex.shape_gradients_ref(_hex.REF_NODES)
    lap = []
    for k in range(3):
        rows, cols, data = [], [], []
        for cls in _hex.box_classes(mesh, mask):
            conn = mesh.elems[cls.elem_ids]
            dNk = dN_corner_ref[:, :, k] * (2.0 / cls.dims[k])
            ke = cls.detw * np.einsum("ga,gb->ab", dNk, dNk)
            rows.append(np.repeat(conn, 8, axis=1).ravel())
            cols.append(np.tile(conn, (1, 8)).ravel())
            data.append(np.broadcast_to(ke.ravel(), (len(cls.elem_ids), 64)).ravel())
        lap.append(sparse.coo_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
            shape=(nn, nn)).tocsr())
    lumped = mesh.lumped_node_volumes(mask)
    mesh._cache[key] = (lap, lumped)
    return mesh._cache[key]


def _region_operators(mesh: Mesh, field: LevelSetField):
    mask = np.zeros(mesh.n_elems, dtype=bool)
    mask[field.region_elements] = True
    return directional_operators(mesh, mask, field.region)


def update_field(field: LevelSetField, sensitivity: np.ndarray,
                 tau: RegularizationTensor, params: UpdateParams,
                 mesh: Mesh) -> LevelSetField:
    """One semi-implicit reaction-diffusion step.

    The reaction enters explicitly as + K * dt * sensitivity (the caller passes
    the normalized field oriented so that positive values grow material); the
    anisotropic diffusion is implicit, with frozen nodes as Dirichlet data and
    natural zero-flux conditions elsewhere. The result is clamped to [-1, 1].
    """
    (lap_x, lap_y, lap_z), lumped = _region_operators(mesh, field)
    region_nodes = np.flatnonzero(lumped > 0.0)
    free = region_nodes[field.design_mask[region_nodes]]
    fixed = region_nodes[~field.design_mask[region_nodes]]
    if free.size == 0:
        return field.with_values(field.values.copy())
    if np.any(lumped[free] <= 0.0):
        raise ValueError("degenerate update system: designable node with zero lumped volume")

    A = tau.tau_x * lap_x + tau.tau_y * lap_y + tau.tau_z * lap_z
    dtk = params.dt * params.K_coeff
    rhs_full = lumped * (field.values + dtk * sensitivity)

    key = ("ls_factor", field.region, tau.tau_x, tau.tau_y, tau.tau_z, dtk)
    if key not in mesh._cache:
        M = sparse.diags(lumped[free])
        system = (M + dtk * A[free][:, free]).tocsc()
        mesh._cache[key] = splu(system)
    lu = mesh._cache[key]

    rhs = rhs_full[free] - dtk * (A[free][:, fixed] @ field.values[fixed])
    phi_new = field.values.copy()
    phi_new[free] = np.clip(lu.solve(rhs), -1.0, 1.0)
    phi_new[~field.design_mask] = field.frozen_values[~field.design_mask]
    return field.with_values(phi_new)


def manufacturability_metrics(field_p: LevelSetField, field_s: LevelSetField,
                              mesh: Mesh) -> tuple[float, float]:
    """Fractions of vertically adjacent node pairs with opposite sign.

    The effective value is phi_p above the film/substrate interface and phi_s
    at or below it. The second metric drops pairs straddling that interface.
    Both are normalized by the total node count; zeros count as nonnegative.
    """
    z = mesh.coords[:, 2]
    tol = 1e-12 + 1e-9 * mesh.z_interface
    in_pe = z > mesh.z_interface + tol
    eff = np.where(in_pe, field_p.values, field_s.values)

    below = mesh.neighbor_below_array
    has_below = below >= 0
    n = np.flatnonzero(has_below)
    b = below[n]
    flips = eff[n] * eff[b] < 0.0
    straddle = in_pe[n] & ~in_pe[b]

    total = mesh.n_nodes
    n_phi1 = float(np.count_nonzero(flips)) / total
    n_phi2 = float(np.count_nonzero(flips & ~straddle)) / total
    return n_phi1, n_phi2
