"""Coupling-coefficient and frequency-tracking objectives with adjoint
sensitivities.

Both level-set fields share the same modal data but weight it differently:
the film field mixes the coupling objective F_k and the tracking objective
F_omega with alpha_pe, the substrate field with alpha_sb. The adjoint
solutions collapse to scaled eigen-solutions, so the sensitivity densities
are built from per-mode eigenvalue-derivative densities with closed-form
coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fem import AssemblyData, GlobalSystem, ModeSet, eigenvalue_derivative_density
from .levelset import LevelSetField
from .mesh import Tag


@dataclass(frozen=True)
class ObjectiveConfig:
    n_modes: int = 4
    target_frequencies: tuple = tuple(2.0 * np.pi * f for f in (70.0, 435.0, 450.0, 500.0))
    alpha_pe: float = 0.95
    alpha_sb: float = 0.95

    def __post_init__(self):
        if self.n_modes < 1:
            raise ValueError("n_modes must be at least 1")
        if len(self.target_frequencies) != self.n_modes:
            raise ValueError("need one target frequency per mode")
        if any(w <= 0.0 for w in self.target_frequencies):
            raise ValueError("target frequencies must be positive")
        for name in ("alpha_pe", "alpha_sb"):
            a = getattr(self, name)
            if not 0.0 <= a <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")


@dataclass(frozen=True)
class ObjectiveReport:
    k2_per_mode: np.ndarray
    F_k: float
    F_omega: float
    F_pe: float
    F_sb: float
    G_V: float
    lam: float

    def __post_init__(self):
        if np.any(self.k2_per_mode < 0.0) or np.any(self.k2_per_mode >= 1.0):
            raise ValueError("coupling coefficients must lie in [0, 1)")
        if self.F_k < 0.0 or self.F_omega < 0.0:
            raise ValueError("objectives must be nonnegative")


@dataclass(frozen=True)
class SensitivityFields:
    Fprime_pe: np.ndarray
    Fprime_sb: np.ndarray
    c_ocpe: np.ndarray
    c_scpe: np.ndarray
    c_ocsb: np.ndarray
    c_scsb: np.ndarray

    def __post_init__(self):
        for name in ("Fprime_pe", "Fprime_sb"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains nonfinite entries")


def coupling_coefficient(omega_oc: float, omega_sc: float) -> float:
    if omega_sc <= 0.0:
        raise ValueError("omega_sc must be positive")
    if omega_oc < omega_sc:
        # the two families are solved independently, so an uncoupled mode can
        # come back a few ulps below its partner
        if omega_sc - omega_oc <= 1e-9 * omega_sc:
            return 0.0
        raise ValueError(
            f"omega_oc {omega_oc:.6g} < omega_sc {omega_sc:.6g}; pairing defect upstream")
    return (omega_oc**2 - omega_sc**2) / omega_oc**2


def objective_F_omega(modes: ModeSet, cfg: ObjectiveConfig) -> float:
    om = modes.omega_oc[: cfg.n_modes]
    targets = np.asarray(cfg.target_frequencies)
    return float((np.abs(om - targets) ** 2 / targets**2).sum())


def objective_F_k(modes: ModeSet, cfg: ObjectiveConfig) -> float:
    om_oc = modes.omega_oc[: cfg.n_modes]
    om_sc = modes.omega_sc[: cfg.n_modes]
    targets = np.asarray(cfg.target_frequencies)
    gap = om_oc**2 - om_sc**2
    if np.any(gap <= 0.0):
        i = int(np.argmax(gap <= 0.0))
        raise ValueError(f"mode {i + 1} has zero coupling (omega_oc = omega_sc); "
                         "objective unbounded")
    return float((om_oc**2 / (gap * targets**2)).sum())


def combined_objectives(F_k: float, F_omega: float,
                        cfg: ObjectiveConfig) -> tuple[float, float]:
    F_pe = cfg.alpha_pe * F_k + (1.0 - cfg.alpha_pe) * F_omega
    F_sb = cfg.alpha_sb * F_k + (1.0 - cfg.alpha_sb) * F_omega
    return F_pe, F_sb


def adjoint_coefficients(modes: ModeSet, cfg: ObjectiveConfig):
    """Per-mode weights multiplying the open/short eigenvalue derivatives."""
    om_oc = modes.omega_oc[: cfg.n_modes]
    om_sc = modes.omega_sc[: cfg.n_modes]
    targets = np.asarray(cfg.target_frequencies)
    gap = om_oc**2 - om_sc**2
    if np.any(gap == 0.0):
        i = int(np.argmax(gap == 0.0))
        raise ValueError(f"mode {i + 1}: omega_oc equals omega_sc; "
                         "adjoint coefficient singular")
    tracking = (om_oc - targets) / (om_oc * targets**2)
    c_ocpe = -cfg.alpha_pe * om_sc**2 / gap**2 + (1.0 - cfg.alpha_pe) * tracking
    c_scpe = cfg.alpha_pe * om_oc**2 / gap**2
    c_ocsb = -cfg.alpha_sb * om_sc**2 / gap**2 + (1.0 - cfg.alpha_sb) * tracking
    c_scsb = cfg.alpha_sb * om_oc**2 / gap**2
    return c_ocpe, c_scpe, c_ocsb, c_scsb


def sensitivity_fields(modes: ModeSet, coeffs, system: GlobalSystem,
                       lam: float = 0.0,
                       sensitivity_mode: str = "gateaux") -> SensitivityFields:
    """Nodal F'_pe and F'_sb densities, volume-projected, plus the lambda term.

    The raw per-node integrals accumulate c_oc * d(lambda_oc)/d(phi_j) +
    c_sc * d(lambda_sc)/d(phi_j) over the paired modes, then divide by the
    lumped design-node volumes. lambda is added uniformly on film design
    nodes (the volume-constraint term).
    """
    data: AssemblyData = system.data
    if data is None:
        raise ValueError("system was built without staging data")
    c_ocpe, c_scpe, c_ocsb, c_scsb = coeffs
    mesh = data.mesh
    n = len(c_ocpe)

    raw_pe = np.zeros(mesh.n_nodes)
    raw_sb = np.zeros(mesh.n_nodes)
    for i in range(n):
        d_oc_pe = eigenvalue_derivative_density(
            data, system, modes.u_oc[:, i], modes.omega_oc[i]**2,
            phi=modes.phi_oc[:, i], which_field="pe", sensitivity_mode=sensitivity_mode)
        d_sc_pe = eigenvalue_derivative_density(
            data, system, modes.u_sc[:, i], modes.omega_sc[i]**2,
            which_field="pe", sensitivity_mode=sensitivity_mode)
        raw_pe += c_ocpe[i] * d_oc_pe + c_scpe[i] * d_sc_pe

        d_oc_sb = eigenvalue_derivative_density(
            data, system, modes.u_oc[:, i], modes.omega_oc[i]**2,
            phi=modes.phi_oc[:, i], which_field="sb", sensitivity_mode=sensitivity_mode)
        d_sc_sb = eigenvalue_derivative_density(
            data, system, modes.u_sc[:, i], modes.omega_sc[i]**2,
            which_field="sb", sensitivity_mode=sensitivity_mode)
        raw_sb += c_ocsb[i] * d_oc_sb + c_scsb[i] * d_sc_sb

    vols = mesh.design_node_volumes()
    with np.errstate(divide="ignore", invalid="ignore"):
        Fp = np.where(vols > 0.0, raw_pe / np.where(vols > 0.0, vols, 1.0), 0.0)
        Fs = np.where(vols > 0.0, raw_sb / np.where(vols > 0.0, vols, 1.0), 0.0)

    pe_nodes = mesh.nodes_touching(Tag.PE_DESIGN)
    Fp[pe_nodes] += lam

    return SensitivityFields(Fprime_pe=Fp, Fprime_sb=Fs,
                             c_ocpe=np.asarray(c_ocpe), c_scpe=np.asarray(c_scpe),
                             c_ocsb=np.asarray(c_ocsb), c_scsb=np.asarray(c_scsb))


def evaluate_objectives(modes: ModeSet, cfg: ObjectiveConfig,
                        G_V: float = 0.0, lam: float = 0.0) -> ObjectiveReport:
    k2 = np.array([coupling_coefficient(o, s) for o, s in
                   zip(modes.omega_oc[: cfg.n_modes], modes.omega_sc[: cfg.n_modes])])
    F_k = objective_F_k(modes, cfg)
    F_om = objective_F_omega(modes, cfg)
    F_pe, F_sb = combined_objectives(F_k, F_om, cfg)
    return ObjectiveReport(k2_per_mode=k2, F_k=F_k, F_omega=F_om,
                           F_pe=F_pe, F_sb=F_sb, G_V=G_V, lam=lam)


def update_lambda(G_V: float, lam: float, penalty_rate: float,
                  volume_pe_region: float) -> float:
    """Projected ascent on the voltage-constraint multiplier."""
    if penalty_rate <= 0.0:
        raise ValueError("penalty_rate must be positive")
    if volume_pe_region <= 0.0:
        raise ValueError("film region volume must be positive")
    return max(0.0, lam + penalty_rate * G_V / volume_pe_region)
