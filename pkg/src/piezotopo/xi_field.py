"""Fictitious anisotropic diffusion field marking substrate-supported columns.

The field xi diffuses strongly through-thickness and weakly in-plane, is held
at -xi_sink on the bottom inlet boundary, and is pulled by a penalty source
toward +xi_source where the substrate level set is solid and toward
-xi_source where it is void. Its sign above the substrate tells whether a
film column would survive a bottom-up release etch; the effective film
characteristic multiplies h(phi_p) by h of the rescaled xi.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .levelset import LevelSetField, directional_operators
from .materials import HeavisideParams, smoothed_heaviside
from .mesh import Mesh, Tag


@dataclass(frozen=True)
class XiConfig:
    kappa_x: float = 1e-4
    kappa_y: float = 1e-4
    kappa_z: float = 1.0
    xi_source: float = 1.0
    xi_sink: float = 1.0
    penalty: float | None = None  # default 1e2 * kappa_z / stack_thickness^2

    def __post_init__(self):
        if self.kappa_z <= 0.0:
            raise ValueError("kappa_z must be positive")
        if self.kappa_x < 0.0 or self.kappa_y < 0.0:
            raise ValueError("in-plane conductivities must be nonnegative")
        if self.xi_source <= 0.0 or self.xi_sink <= 0.0:
            raise ValueError("xi_source and xi_sink must be positive")
        if self.penalty is not None and self.penalty < 0.0:
            raise ValueError("penalty must be nonnegative")

    def resolved_penalty(self, mesh: Mesh) -> float:
        if self.penalty is not None:
            return self.penalty
        span = mesh.coords[:, 2].max() - mesh.coords[:, 2].min()
        return 1e2 * self.kappa_z / span**2


@dataclass(frozen=True)
class XiField:
    """Nodal xi over the whole mesh; outside the design region it defaults
    to xi_source (nondesign material is never etched)."""

    values: np.ndarray
    config: XiConfig

    def __post_init__(self):
        tol = 1e-6 * (self.config.xi_source + self.config.xi_sink)
        lo, hi = self.values.min(), self.values.max()
        if lo < -self.config.xi_sink - tol or hi > self.config.xi_source + tol:
            raise ValueError(
                f"xi range [{lo:.6g}, {hi:.6g}] violates the discrete maximum "
                f"principle bounds [{-self.config.xi_sink:.6g}, {self.config.xi_source:.6g}]")

    def scaled(self) -> np.ndarray:
        """Affine rescale to the level-set range for the Heaviside."""
        return np.clip(self.values / self.config.xi_source, -1.0, 1.0)


def constant_xi(mesh: Mesh, config: XiConfig | None = None) -> XiField:
    """Saturated field used when the etch constraint is disabled."""
    cfg = config or XiConfig()
    return XiField(values=np.full(mesh.n_nodes, cfg.xi_source), config=cfg)


def solve_xi(mesh: Mesh, field_s: LevelSetField, config: XiConfig,
             heaviside: HeavisideParams | None = None) -> XiField:
    """Solve the penalized anisotropic diffusion problem on the design region.

    Discrete form: (sum_k kappa_k L_k + penalty * diag(w v)) xi
                   = penalty * (w v) * xi_source * (2 h(phi_s) - 1)
    with w = 1 on substrate design elements and d on film design elements,
    v the lumped nodal volumes, and xi = -xi_sink on the inlet boundary.
    """
    hp = heaviside or HeavisideParams()
    design = np.isin(mesh.tags, (int(Tag.PE_DESIGN), int(Tag.SB_DESIGN)))
    if not design.any():
        raise ValueError("mesh has no design elements to solve xi on")
    (lap_x, lap_y, lap_z), _ = directional_operators(mesh, design, "design_both")

    # region-weighted lumped volumes: film-slab design elements carry d
    w_elem = np.where(mesh.tags == Tag.PE_DESIGN, hp.d, 1.0)
    w_elem[~design] = 0.0
    wv = np.zeros(mesh.n_nodes)
    vols = mesh.elem_volumes
    for e in np.flatnonzero(design):
        wv[mesh.elems[e]] += w_elem[e] * vols[e] / 8.0

    penalty = config.resolved_penalty(mesh)
    A = (config.kappa_x * lap_x + config.kappa_y * lap_y
         + config.kappa_z * lap_z + sparse.diags(penalty * wv)).tocsr()

    target = config.xi_source * (2.0 * smoothed_heaviside(field_s.values, hp) - 1.0)
    rhs = penalty * wv * target

    region_nodes = np.flatnonzero(wv > 0.0)
    dirichlet = np.intersect1d(region_nodes, mesh.gamma_xi_nodes)
    free = np.setdiff1d(region_nodes, dirichlet)

    xi = np.full(mesh.n_nodes, config.xi_source)
    xi[dirichlet] = -config.xi_sink
    if len(free):
        A_ff = A[free][:, free].tocsc()
        b = rhs[free] - A[free][:, dirichlet] @ xi[dirichlet]
        try:
            lu = splu(A_ff)
        except RuntimeError as exc:
            raise ValueError(
                "xi system is singular; with zero penalty the in-plane "
                "conductivities leave part of the design region floating") from exc
        xi[free] = lu.solve(b)

    return XiField(values=xi, config=config)


def effective_pe_characteristic(field_p: LevelSetField, xi: XiField,
                                params: HeavisideParams) -> np.ndarray:
    """Nodal h(phi_p) * h(xi'), the substrate-constrained film characteristic."""
    if len(field_p.values) != len(xi.values):
        raise ValueError("field_p and xi live on different meshes")
    return (smoothed_heaviside(field_p.values, params)
            * smoothed_heaviside(xi.scaled(), params))


def substrate_dependence_fraction(mesh: Mesh, field_p: LevelSetField,
                                  field_s: LevelSetField, xi: XiField,
                                  params: HeavisideParams) -> float:
    """Fraction of film design elements carrying material with no substrate below.

    An element counts when its average effective film characteristic exceeds
    0.5 while every substrate element sharing its (x, y) column averages
    h(phi_s) below 0.5.
    """
    chi_p = effective_pe_characteristic(field_p, xi, params)
    h_s = smoothed_heaviside(field_s.values, params)

    pe = np.flatnonzero(mesh.tags == Tag.PE_DESIGN)
    if len(pe) == 0:
        return 0.0
    sb = np.flatnonzero(np.isin(mesh.tags, [int(Tag.SB_DESIGN), int(Tag.SB_NONDESIGN)]))

    # per-column flag: any substrate element averaging solid
    nx, ny = mesh.grid_shape[0] - 1, mesh.grid_shape[1] - 1
    col_of = mesh.elem_grid[:, 0] * ny + mesh.elem_grid[:, 1]
    supported = np.zeros(nx * ny, dtype=bool)
    sb_avg = h_s[mesh.elems[sb]].mean(axis=1)
    np.logical_or.at(supported, col_of[sb], sb_avg >= 0.5)

    pe_avg = chi_p[mesh.elems[pe]].mean(axis=1)
    bad = (pe_avg > 0.5) & ~supported[col_of[pe]]
    return float(bad.sum()) / float(len(pe))
