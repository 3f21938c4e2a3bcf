"""Coupled piezoelectric FEM: assembly, eigenproblems, mode pairing.

Displacements carry three DOFs per node over the whole mesh; electric
potential DOFs exist only on nodes of the film slab (at or above the
film/substrate interface). The element operators are built per box-size class
with full 2x2x2 Gauss quadrature and combined with per-Gauss-point ersatz
weights, so reassembling after a level-set update reuses all geometry kernels.

Open circuit solves (K + P G^-1 P^T) u = omega^2 M u with the top electrode
floating and the interface plane grounded; short circuit grounds every
potential DOF, removing the electrical terms entirely.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, sparse
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh, splu

from . import _hex
from .levelset import LevelSetField
from .materials import (MaterialSet, elasticity_matrix, smoothed_heaviside,
                        smoothed_heaviside_derivative)
from .mesh import Mesh, Tag

DENSE_CUTOFF = 600  # free displacement DOFs below which "auto" goes dense


class SolverError(RuntimeError):
    pass


@dataclass
class ClassData:
    """Per box-size-class staging shared by assembly and sensitivities."""

    cls: _hex.BoxClass
    conn: np.ndarray  # (ne_c, 8)
    tags: np.ndarray  # (ne_c,)
    W_p: np.ndarray  # (ne_c, 8 gp)
    W_s: np.ndarray
    rho: np.ndarray  # mass coefficient, weight factor applied
    eps_iso: np.ndarray  # isotropic permittivity coefficient (absolute)
    in_pe_slab: np.ndarray  # (ne_c,) bool
    h_xi: np.ndarray  # (ne_c, 8 gp)
    dh_p: np.ndarray  # h'(phi_p) at Gauss points
    dh_s: np.ndarray
    h_ps: np.ndarray  # (ne_c,) region constant: 1 in the film, d in the substrate
    B: np.ndarray  # (8 gp, 6, 24)
    u_dofs: np.ndarray  # (ne_c, 24)


@dataclass
class AssemblyData:
    mesh: Mesh
    mats: MaterialSet
    classes: list

    @property
    def heaviside(self):
        return self.mats.heaviside


def _gp_interp(N: np.ndarray, nodal: np.ndarray, conn: np.ndarray) -> np.ndarray:
    return np.einsum("ga,ea->eg", N, nodal[conn])


def stage(mesh: Mesh, field_p: LevelSetField, field_s: LevelSetField,
          xi_scaled: np.ndarray, mats: MaterialSet) -> AssemblyData:
    """Evaluate the ersatz weights of every element at its Gauss points.

    Design elements interpolate the nodal fields; nondesign elements are
    exact single-material (the weight block keeps substrate stiffness, the
    configured density factor, and the vacuum permittivity background).
    """
    hp = mats.heaviside
    d = hp.d
    classes = []
    pe_slab = mesh.pe_slab_elements
    for cls in _hex.box_classes(mesh):
        ids = cls.elem_ids
        conn = mesh.elems[ids]
        tags = mesh.tags[ids]
        ne_c = len(ids)

        phi_p_gp = _gp_interp(cls.N, field_p.values, conn)
        phi_s_gp = _gp_interp(cls.N, field_s.values, conn)
        xi_gp = _gp_interp(cls.N, xi_scaled, conn)
        h_p = smoothed_heaviside(phi_p_gp, hp)
        h_s = smoothed_heaviside(phi_s_gp, hp)
        h_xi = smoothed_heaviside(xi_gp, hp)
        dh_p = smoothed_heaviside_derivative(phi_p_gp, hp)
        dh_s = smoothed_heaviside_derivative(phi_s_gp, hp)

        h_ps = np.zeros(ne_c)
        h_ps[tags == Tag.PE_DESIGN] = 1.0
        h_ps[tags == Tag.SB_DESIGN] = d

        W_p = h_ps[:, None] * h_p * h_xi
        W_s = (1.0 - h_ps[:, None]) * h_s
        # nondesign elements: exact single material
        for tag, wp, ws in ((Tag.PE_NONDESIGN, 1.0, 0.0),
                            (Tag.SB_NONDESIGN, 0.0, 1.0),
                            (Tag.WEIGHT, 0.0, 1.0)):
            sel = tags == tag
            W_p[sel] = wp
            W_s[sel] = ws
            dh_p[sel] = 0.0
            dh_s[sel] = 0.0
            h_xi[sel] = 1.0

        rho = mats.pe.density * W_p + mats.sb.density * W_s
        rho[tags == Tag.WEIGHT] *= mesh.weight_density_factor

        eps0 = mats.coupling.eps_vacuum
        eps_iso = eps0 * (1.0 - W_p - W_s)
        eps_iso[tags == Tag.WEIGHT] = eps0

        u_dofs = (3 * conn[:, :, None] + np.arange(3)).reshape(ne_c, 24)
        classes.append(ClassData(
            cls=cls, conn=conn, tags=tags, W_p=W_p, W_s=W_s, rho=rho,
            eps_iso=eps_iso, in_pe_slab=pe_slab[ids], h_xi=h_xi,
            dh_p=dh_p, dh_s=dh_s, h_ps=h_ps, B=cls.strain_displacement(),
            u_dofs=u_dofs,
        ))
    return AssemblyData(mesh=mesh, mats=mats, classes=classes)


@dataclass(eq=False)
class GlobalSystem:
    """Sparse operators plus DOF bookkeeping; constraints recorded, not eliminated."""

    K: sparse.csr_matrix
    M: sparse.csr_matrix
    P: sparse.csr_matrix
    G: sparse.csr_matrix
    potential_nodes: np.ndarray
    phi_dof_of_node: np.ndarray  # -1 where a node has no potential DOF
    fixed_u_dofs: np.ndarray
    ground_phi_dofs: np.ndarray  # open-circuit grounding (interface plane)
    data: AssemblyData | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def ndof_u(self) -> int:
        return self.K.shape[0]

    @property
    def ndof_phi(self) -> int:
        return self.G.shape[0]

    @property
    def free_u_dofs(self) -> np.ndarray:
        if "free_u" not in self._cache:
            self._cache["free_u"] = np.setdiff1d(np.arange(self.ndof_u), self.fixed_u_dofs)
        return self._cache["free_u"]

    @property
    def free_phi_dofs(self) -> np.ndarray:
        if "free_phi" not in self._cache:
            self._cache["free_phi"] = np.setdiff1d(np.arange(self.ndof_phi),
                                                   self.ground_phi_dofs)
        return self._cache["free_phi"]

    def reduced(self):
        if "reduced" not in self._cache:
            fu, fp = self.free_u_dofs, self.free_phi_dofs
            self._cache["reduced"] = (
                self.K[fu][:, fu].tocsr(),
                self.M[fu][:, fu].tocsr(),
                self.P[fu][:, fp].tocsr(),
                self.G[fp][:, fp].tocsr(),
            )
        return self._cache["reduced"]

    def dump(self, path_prefix: str) -> None:
        """Write K, M, P, G as 'row col value' triplet text files."""
        for name, mat in (("K", self.K), ("M", self.M), ("P", self.P), ("G", self.G)):
            coo = mat.tocoo()
            with open(f"{path_prefix}_{name}.txt", "w") as f:
                f.write(f"# {mat.shape[0]} {mat.shape[1]} {coo.nnz}\n")
                for r, c, v in zip(coo.row, coo.col, coo.data):
                    f.write(f"{r} {c} {float(v)!r}\n")


def _accumulate(rows, cols, data, conn_rows, conn_cols, elem_mats):
    rows.append(np.repeat(conn_rows, conn_cols.shape[1], axis=1).ravel())
    cols.append(np.tile(conn_cols, (1, conn_rows.shape[1])).ravel())
    data.append(elem_mats.ravel())


def assemble(mesh: Mesh, field_p: LevelSetField, field_s: LevelSetField,
             xi_scaled: np.ndarray, mats: MaterialSet) -> GlobalSystem:
    """Build K, M, P, G over the ersatz-interpolated domain."""
    if np.any(mesh.elem_volumes <= 0.0):
        bad = int(np.argmax(mesh.elem_volumes <= 0.0))
        raise ValueError(f"element {bad} has non-positive volume")

    data = stage(mesh, field_p, field_s, xi_scaled, mats)
    C_pe = elasticity_matrix(mats.pe)
    C_sb = elasticity_matrix(mats.sb)
    e_mat = mats.coupling.e_matrix
    eps_S = mats.coupling.eps_S

    ndof_u = 3 * mesh.n_nodes
    potential_nodes = mesh.potential_nodes
    phi_dof_of_node = np.full(mesh.n_nodes, -1, dtype=int)
    phi_dof_of_node[potential_nodes] = np.arange(len(potential_nodes))
    nphi = len(potential_nodes)

    kr, kc, kd = [], [], []
    mr, mc, md = [], [], []
    pr, pc, pd = [], [], []
    gr, gc, gd = [], [], []

    eye3 = np.eye(3)
    for cd in data.classes:
        B, N, detw = cd.B, cd.cls.N, cd.cls.detw
        ke_pe = detw * np.einsum("gsa,st,gtb->gab", B, C_pe, B)
        ke_sb = detw * np.einsum("gsa,st,gtb->gab", B, C_sb, B)
        k_el = (np.einsum("eg,gab->eab", cd.W_p, ke_pe)
                + np.einsum("eg,gab->eab", cd.W_s, ke_sb))
        _accumulate(kr, kc, kd, cd.u_dofs, cd.u_dofs, k_el)

        m_unit = detw * np.einsum("ga,gb->gab", N, N)  # (8gp, 8, 8)
        m_small = np.einsum("eg,gab->eab", cd.rho, m_unit)
        m_el = np.einsum("eab,cd->eacbd", m_small, eye3).reshape(-1, 24, 24)
        _accumulate(mr, mc, md, cd.u_dofs, cd.u_dofs, m_el)

        slab = cd.in_pe_slab
        if slab.any():
            conn_s = cd.conn[slab]
            udof_s = cd.u_dofs[slab]
            pdof_s = phi_dof_of_node[conn_s]
            pe_kernel = detw * np.einsum("gsa,ks,gbk->gab", B, e_mat, cd.cls.dN)
            p_el = np.einsum("eg,gab->eab", cd.W_p[slab], pe_kernel)
            _accumulate(pr, pc, pd, udof_s, pdof_s, p_el)

            g_iso = detw * np.einsum("gak,gbk->gab", cd.cls.dN, cd.cls.dN)
            g_pz = detw * np.einsum("gak,kl,gbl->gab", cd.cls.dN, eps_S, cd.cls.dN)
            g_el = (np.einsum("eg,gab->eab", cd.eps_iso[slab], g_iso)
                    + np.einsum("eg,gab->eab", cd.W_p[slab], g_pz))
            _accumulate(gr, gc, gd, pdof_s, pdof_s, g_el)

    def build(rows, cols, vals, shape):
        if not rows:
            return sparse.csr_matrix(shape)
        return sparse.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=shape).tocsr()

    K = build(kr, kc, kd, (ndof_u, ndof_u))
    M = build(mr, mc, md, (ndof_u, ndof_u))
    P = build(pr, pc, pd, (ndof_u, nphi))
    G = build(gr, gc, gd, (nphi, nphi))

    fixed_u = (3 * mesh.clamp_nodes[:, None] + np.arange(3)).ravel()
    ground = phi_dof_of_node[mesh.pzt_ground_nodes]
    ground = np.sort(ground[ground >= 0])

    return GlobalSystem(
        K=K, M=M, P=P, G=G,
        potential_nodes=potential_nodes,
        phi_dof_of_node=phi_dof_of_node,
        fixed_u_dofs=np.sort(fixed_u),
        ground_phi_dofs=ground,
        data=data,
    )


@dataclass
class EigenFamily:
    """One family of modes (open or short circuit), full-length vectors."""

    omegas: np.ndarray  # rad/s, nondecreasing
    U: np.ndarray  # (ndof_u, n), zeros at fixed DOFs, M-orthonormal
    Phi: np.ndarray | None = None  # (ndof_phi, n) recovered potentials


@dataclass
class ModeSet:
    """Paired open/short-circuit modes; index i of each family corresponds."""

    omega_oc: np.ndarray
    u_oc: np.ndarray
    phi_oc: np.ndarray
    omega_sc: np.ndarray
    u_sc: np.ndarray
    pairing: np.ndarray  # sc index paired with oc mode i
    pairing_warnings: list


def _v0(n: int) -> np.ndarray:
    return np.linspace(1.0, 2.0, n)


def _postprocess(lams, vecs, M_red, free, ndof, n):
    order = np.argsort(lams)[:n]
    lams = lams[order]
    vecs = vecs[:, order]
    if np.any(lams <= 0.0):
        raise SolverError(f"nonpositive eigenvalue {lams.min():.3e}; system not clamped?")
    U = np.zeros((ndof, n))
    for i in range(n):
        v = vecs[:, i]
        v = v / np.sqrt(v @ (M_red @ v))
        if v[np.argmax(np.abs(v))] < 0.0:
            v = -v
        U[free, i] = v
    return np.sqrt(lams), U


def _check_residuals(A_mv, M_mv, omegas, U, free, label):
    for i, w in enumerate(omegas):
        u = U[free, i]
        r = A_mv(u) - w * w * M_mv(u)
        denom = np.linalg.norm(A_mv(u))
        if denom > 0 and np.linalg.norm(r) / denom > 1e-6:
            raise SolverError(
                f"{label} mode {i}: residual {np.linalg.norm(r) / denom:.2e} exceeds 1e-6")


def solve_short_circuit_modes(system: GlobalSystem, n: int,
                              method: str = "auto") -> EigenFamily:
    """n smallest eigenpairs of K u = omega^2 M u with all potentials grounded."""
    if n < 1:
        raise ValueError("n must be at least 1")
    Kff, Mff, _, _ = system.reduced()
    nf = Kff.shape[0]
    use_dense = method == "dense" or (method == "auto" and (nf <= DENSE_CUTOFF or n >= nf - 1))
    if method not in ("auto", "dense", "sparse"):
        raise ValueError(f"unknown method {method!r}")
    if use_dense:
        lams, vecs = linalg.eigh(Kff.toarray(), Mff.toarray())
        lams, vecs = lams[:n], vecs[:, :n]
    else:
        try:
            lams, vecs = eigsh(Kff, k=n, M=Mff, sigma=0.0, which="LM", v0=_v0(nf))
        except ArpackNoConvergence as exc:
            raise SolverError(f"short-circuit eigensolver failed to converge: {exc}") from exc
    omegas, U = _postprocess(lams, vecs, Mff, system.free_u_dofs, system.ndof_u, n)
    _check_residuals(lambda x: Kff @ x, lambda x: Mff @ x, omegas, U,
                     system.free_u_dofs, "short-circuit")
    return EigenFamily(omegas=omegas, U=U)


def solve_open_circuit_modes(system: GlobalSystem, n: int,
                             method: str = "auto") -> EigenFamily:
    """n smallest eigenpairs of (K + P G^-1 P^T) u = omega^2 M u.

    G^-1 is applied through sparse solves; the shift-invert inner solve uses a
    factorization of the symmetric indefinite block [[K, P], [P^T, -G]], whose
    u-component equals the Schur complement solve.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    Kff, Mff, Pf, Gf = system.reduced()
    nf = Kff.shape[0]
    nphi = Gf.shape[0]
    if nphi == 0:
        fam = solve_short_circuit_modes(system, n, method=method)
        return EigenFamily(omegas=fam.omegas, U=fam.U,
                           Phi=np.zeros((system.ndof_phi, n)))

    try:
        G_lu = splu(Gf.tocsc())
    except RuntimeError as exc:
        raise SolverError(f"dielectric matrix is singular: {exc}") from exc

    def schur_mv(x):
        return Kff @ x + Pf @ G_lu.solve(Pf.T @ x)

    use_dense = method == "dense" or (method == "auto" and (nf <= DENSE_CUTOFF or n >= nf - 1))
    if method not in ("auto", "dense", "sparse"):
        raise ValueError(f"unknown method {method!r}")
    if use_dense:
        Ginv_Pt = G_lu.solve(Pf.T.toarray())
        A = Kff.toarray() + Pf.toarray() @ Ginv_Pt
        A = 0.5 * (A + A.T)
        lams, vecs = linalg.eigh(A, Mff.toarray())
        lams, vecs = lams[:n], vecs[:, :n]
    else:
        # rescale potential DOFs so the electrical block is commensurate with
        # the mechanical one (raw K ~ 1e9, raw G ~ 1e-10); the u-component of
        # the block solve is invariant under this scaling
        sc_phi = np.sqrt(abs(Kff.diagonal()).mean() / abs(Gf.diagonal()).mean())
        block = sparse.bmat([[Kff, sc_phi * Pf], [sc_phi * Pf.T, -(sc_phi**2) * Gf]],
                            format="csc")
        block_lu = splu(block)

        def opinv_mv(b):
            rhs = np.concatenate([b, np.zeros(nphi)])
            return block_lu.solve(rhs)[:nf]

        A_op = LinearOperator((nf, nf), matvec=schur_mv)
        OPinv = LinearOperator((nf, nf), matvec=opinv_mv)
        try:
            lams, vecs = eigsh(A_op, k=n, M=Mff, sigma=0.0, which="LM",
                               OPinv=OPinv, v0=_v0(nf))
        except ArpackNoConvergence as exc:
            raise SolverError(f"open-circuit eigensolver failed to converge: {exc}") from exc

    omegas, U = _postprocess(lams, vecs, Mff, system.free_u_dofs, system.ndof_u, n)
    _check_residuals(schur_mv, lambda x: Mff @ x, omegas, U,
                     system.free_u_dofs, "open-circuit")

    Phi = np.zeros((system.ndof_phi, n))
    fp = system.free_phi_dofs
    fu = system.free_u_dofs
    for i in range(n):
        Phi[fp, i] = G_lu.solve(Pf.T @ U[fu, i])
    return EigenFamily(omegas=omegas, U=U, Phi=Phi)


def pair_modes(sc: EigenFamily, oc: EigenFamily, system: GlobalSystem) -> ModeSet:
    """Pair families by greedy best modal assurance; fall back to index order."""
    n = len(oc.omegas)
    if len(sc.omegas) != n:
        raise ValueError("both families must be solved with the same mode count")
    MU_sc = system.M @ sc.U
    cross = oc.U.T @ MU_sc  # M-orthonormal families: MAC = cross^2
    diag_oc = np.einsum("ki,ki->i", oc.U, system.M @ oc.U)
    diag_sc = np.einsum("ki,ki->i", sc.U, MU_sc)
    mac = cross**2 / np.outer(diag_oc, diag_sc)

    notes = []
    pairing = np.full(n, -1, dtype=int)
    if mac.max(axis=1).max() < 0.5:
        notes.append("all candidate MAC values below 0.5; using index pairing")
        pairing = np.arange(n)
    else:
        taken = np.zeros(n, dtype=bool)
        ambiguous = False
        for i in range(n):
            row = np.where(taken, -np.inf, mac[i])
            j = int(np.argmax(row))
            if n - taken.sum() > 1:
                row2 = row.copy()
                row2[j] = -np.inf
                if row[j] - row2.max() < 1e-6:  # two candidates for one mode
                    ambiguous = True
                    break
            pairing[i] = j
            taken[j] = True
        if ambiguous:
            notes.append("ambiguous modal pairing (MAC gap below 1e-6); using index order")
            pairing = np.arange(n)

    for msg in notes:
        warnings.warn(msg, stacklevel=2)

    phi_oc = oc.Phi if oc.Phi is not None else np.zeros((system.ndof_phi, n))
    return ModeSet(
        omega_oc=oc.omegas.copy(),
        u_oc=oc.U.copy(),
        phi_oc=phi_oc.copy(),
        omega_sc=sc.omegas[pairing],
        u_sc=sc.U[:, pairing],
        pairing=pairing,
        pairing_warnings=notes,
    )


def eigenvalue_derivative_density(data: AssemblyData, system: GlobalSystem,
                                  u: np.ndarray, omega2: float,
                                  phi: np.ndarray | None = None,
                                  which_field: str = "pe",
                                  sensitivity_mode: str = "gateaux") -> np.ndarray:
    """Per-node density of d(omega^2)/d(phi_j) for an M-normalized mode.

    For the open circuit pass phi = G^-1 P^T u; the density then carries the
    coupling and dielectric terms 2 u' dP phi - phi' dG phi in addition to
    u' dK u - omega^2 u' dM u. Returns raw integrals (not volume-normalized).
    """
    if which_field not in ("pe", "sb"):
        raise ValueError(f"which_field must be 'pe' or 'sb', got {which_field!r}")
    if sensitivity_mode not in ("gateaux", "printed"):
        raise ValueError(f"unknown sensitivity_mode {sensitivity_mode!r}")
    mats = data.mats
    C = elasticity_matrix(mats.pe if which_field == "pe" else mats.sb)
    rho = mats.pe.density if which_field == "pe" else mats.sb.density
    e_mat = mats.coupling.e_matrix
    eps0 = mats.coupling.eps_vacuum
    if sensitivity_mode == "gateaux":
        eps_d = mats.coupling.eps_S - eps0 * np.eye(3)
    else:
        eps_d = mats.coupling.eps_S

    out = np.zeros(data.mesh.n_nodes)
    for cd in data.classes:
        if which_field == "pe":
            base = cd.h_ps[:, None] * cd.h_xi
            dh = cd.dh_p
        else:
            base = np.broadcast_to((1.0 - cd.h_ps)[:, None], cd.dh_s.shape)
            dh = cd.dh_s
        factor = base * dh if sensitivity_mode == "gateaux" else base
        design = np.isin(cd.tags, (int(Tag.PE_DESIGN), int(Tag.SB_DESIGN)))
        factor = np.where(design[:, None], factor, 0.0)
        if not factor.any():
            continue

        detw = cd.cls.detw
        u_e = u[cd.u_dofs]
        strain = np.einsum("gsk,ek->egs", cd.B, u_e)
        s = detw * np.einsum("egs,st,egt->eg", strain, C, strain)
        disp = np.einsum("ga,eac->egc", cd.cls.N, u_e.reshape(len(cd.conn), 8, 3))
        s -= omega2 * rho * detw * np.einsum("egc,egc->eg", disp, disp)

        if phi is not None and which_field == "pe" and cd.in_pe_slab.any():
            slab = cd.in_pe_slab
            pdofs = system.phi_dof_of_node[cd.conn[slab]]
            phi_e = phi[pdofs]
            gradphi = np.einsum("gak,ea->egk", cd.cls.dN, phi_e)
            s_slab = 2.0 * detw * np.einsum("egk,ks,egs->eg",
                                            gradphi, e_mat, strain[slab])
            s_slab -= detw * np.einsum("egk,kl,egl->eg", gradphi, eps_d, gradphi)
            s[slab] += s_slab

        contrib = np.einsum("eg,ga->ea", s * factor, cd.cls.N)
        np.add.at(out, cd.conn, contrib)
    return out
