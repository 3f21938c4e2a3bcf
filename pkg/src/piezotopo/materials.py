"""Material constants, the smoothed Heaviside, and ersatz property interpolation.

All quantities are SI. The design domain is never remeshed: every element keeps
both candidate materials and the point properties blend them with weights built
from smoothed Heaviside values of the level-set fields. Void is represented by
the Heaviside floor d, so a single knob controls both the characteristic
function relaxation and the ersatz stiffness/density floor.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EPS_VACUUM = 8.8541878128e-12  # F/m


@dataclass(frozen=True)
class IsotropicElastic:
    """Isotropic linear elastic constants."""

    youngs_modulus: float
    poisson_ratio: float
    density: float

    def __post_init__(self):
        if self.youngs_modulus <= 0.0:
            raise ValueError(f"youngs_modulus must be positive, got {self.youngs_modulus}")
        if not 0.0 <= self.poisson_ratio < 0.5:
            raise ValueError(f"poisson_ratio must lie in [0, 0.5), got {self.poisson_ratio}")
        if self.density <= 0.0:
            raise ValueError(f"density must be positive, got {self.density}")


def _default_e_matrix() -> np.ndarray:
    # PZT-5A-class stress constants, poling along +z.
    # Voigt strain order (xx, yy, zz, yz, xz, xy) with engineering shears.
    e31, e33, e15 = -5.4, 15.8, 12.3
    e = np.zeros((3, 6))
    e[0, 4] = e15
    e[1, 3] = e15
    e[2, 0] = e31
    e[2, 1] = e31
    e[2, 2] = e33
    return e


def _default_eps_s() -> np.ndarray:
    return np.diag([1730.0, 1730.0, 1700.0]) * EPS_VACUUM


@dataclass(frozen=True)
class PiezoCoupling:
    """Piezoelectric stress constants and clamped permittivity, poling along +z."""

    e_matrix: np.ndarray = field(default_factory=_default_e_matrix)
    eps_S: np.ndarray = field(default_factory=_default_eps_s)
    eps_vacuum: float = EPS_VACUUM
    polarization_axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))

    def __post_init__(self):
        e = np.asarray(self.e_matrix, dtype=float)
        eps = np.asarray(self.eps_S, dtype=float)
        if e.shape != (3, 6):
            raise ValueError(f"e_matrix must be 3x6, got {e.shape}")
        if eps.shape != (3, 3):
            raise ValueError(f"eps_S must be 3x3, got {eps.shape}")
        if np.any(np.diag(eps) <= 0.0):
            raise ValueError("eps_S diagonal entries must be positive")
        object.__setattr__(self, "e_matrix", e)
        object.__setattr__(self, "eps_S", eps)

    @classmethod
    def from_constants(cls, e31: float, e33: float, e15: float,
                       eps_r11: float, eps_r33: float) -> "PiezoCoupling":
        """Build the z-poled coupling set from the five usual constants."""
        e = np.zeros((3, 6))
        e[0, 4] = e15
        e[1, 3] = e15
        e[2, 0] = e31
        e[2, 1] = e31
        e[2, 2] = e33
        eps = np.diag([eps_r11, eps_r11, eps_r33]) * EPS_VACUUM
        return cls(e_matrix=e, eps_S=eps)


@dataclass(frozen=True)
class HeavisideParams:
    """Transition half-width w and floor d of the smoothed Heaviside."""

    w: float = 0.9
    d: float = 0.01

    def __post_init__(self):
        if not 0.0 < self.w <= 1.0:
            raise ValueError(f"w must lie in (0, 1], got {self.w}")
        if not 0.0 < self.d < 1.0:
            raise ValueError(f"d must lie in (0, 1), got {self.d}")


@dataclass(frozen=True)
class MaterialSet:
    """The two candidate materials plus coupling constants and Heaviside knobs."""

    pe: IsotropicElastic = field(
        default_factory=lambda: IsotropicElastic(60e9, 0.31, 7750.0)
    )
    sb: IsotropicElastic = field(
        default_factory=lambda: IsotropicElastic(169e9, 0.28, 2329.0)
    )
    coupling: PiezoCoupling = field(default_factory=PiezoCoupling)
    heaviside: HeavisideParams = field(default_factory=HeavisideParams)


@dataclass(frozen=True)
class PointProperties:
    """Effective constitutive set at one quadrature point."""

    C_eff: np.ndarray
    e_eff: np.ndarray
    eps_eff: np.ndarray
    rho_eff: float


def elasticity_matrix(mat: IsotropicElastic) -> np.ndarray:
    """Standard 6x6 isotropic Voigt elasticity matrix (engineering shears)."""
    E, nu = mat.youngs_modulus, mat.poisson_ratio
    if nu >= 0.5:
        raise ValueError("poisson_ratio must be below the incompressible limit 0.5")
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    mu = E / (2.0 * (1.0 + nu))
    C = np.zeros((6, 6))
    C[:3, :3] = lam
    C[np.arange(3), np.arange(3)] = lam + 2.0 * mu
    C[np.arange(3, 6), np.arange(3, 6)] = mu
    return C


def smoothed_heaviside(phi, params: HeavisideParams):
    """Quintic smoothed Heaviside: d below -w, 1 above w, C1 across the band.

    Accepts scalars or arrays.
    """
    phi = np.asarray(phi, dtype=float)
    r = np.clip(phi / params.w, -1.0, 1.0)
    poly = 0.5 + r * (15.0 / 16.0 - r * r * (5.0 / 8.0 - (3.0 / 16.0) * r * r))
    h = poly * (1.0 - params.d) + params.d
    if h.ndim == 0:
        return float(h)
    return h


def smoothed_heaviside_derivative(phi, params: HeavisideParams):
    """dh/dphi: (1-d)(15/16)(1-(phi/w)^2)^2 / w inside the band, 0 outside."""
    phi = np.asarray(phi, dtype=float)
    r = phi / params.w
    inside = np.abs(r) < 1.0
    g = np.where(inside, 1.0 - r * r, 0.0)
    dh = (1.0 - params.d) * (15.0 / 16.0) * g * g / params.w
    if dh.ndim == 0:
        return float(dh)
    return dh


def interpolation_weights(h_p, h_s, h_xi, h_ps):
    """Piezo and substrate weights W_p = h_ps h_p h_xi and W_s = (1 - h_ps) h_s."""
    W_p = h_ps * h_p * h_xi
    W_s = (1.0 - h_ps) * h_s
    return W_p, W_s


def interpolate_properties(
    h_p: float, h_s: float, h_xi: float, h_ps: float, mats: MaterialSet
) -> PointProperties:
    """Blend both candidate materials into one effective constitutive set.

    C_eff = C_pe W_p + C_sb W_s, e_eff = e W_p,
    eps_eff = eps0 I (1 - (W_p + W_s)) + eps_S W_p, rho_eff likewise,
    with W_p = h_ps h_p h_xi and W_s = (1 - h_ps) h_s. Void keeps the eps0
    background so the dielectric operator never degenerates.
    """
    W_p, W_s = interpolation_weights(h_p, h_s, h_xi, h_ps)
    C_pe = elasticity_matrix(mats.pe)
    C_sb = elasticity_matrix(mats.sb)
    eps0 = mats.coupling.eps_vacuum
    C_eff = C_pe * W_p + C_sb * W_s
    e_eff = mats.coupling.e_matrix * W_p
    eps_eff = eps0 * np.eye(3) * (1.0 - (W_p + W_s)) + mats.coupling.eps_S * W_p
    rho_eff = mats.pe.density * W_p + mats.sb.density * W_s
    return PointProperties(C_eff=C_eff, e_eff=e_eff, eps_eff=eps_eff, rho_eff=rho_eff)
