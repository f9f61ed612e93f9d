"""Semi-implicit staggered space-time DG time stepper.

Each time slab runs a fixed number of Picard passes.  A pass solves the
implicit momentum system (upwind-in-time space-time operator plus interior
penalty viscosity) with the convective flux lagged to the previous pass and
the pressure of the previous pass, then solves the pressure Poisson system
obtained by substituting the mass-lumped-in-operator momentum update into
the discrete divergence constraint, and finally corrects the velocity.  The
corrected velocity is discretely divergence free up to the pressure solver
tolerance after every pass.

Operator layout (spatial index major, temporal minor): the velocity
unknowns per dual element and component form an (N_psi, N_gamma) block, the
pressure unknowns per triangle an (N_phi, N_gamma) block.  The pressure
operator sum_c G_c^T M^-1 G_c (tensored with the temporal mass) is symmetric
positive semi-definite with one constant-in-space mode per temporal node;
those modes are projected in the CG solve.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import basis, linsys, quadrature
from .kernels import ElementAssembler, precompute_reference_tensors
from .mesh import build_dual_grid, compute_geometry


@dataclass
class FluidParams:
    """Normalized fluid data: kinematic viscosity and an optional momentum
    source S(x, y, t) -> (Sx, Sy) (vectorized over points)."""

    nu: float
    source: object = None

    def __post_init__(self):
        if self.nu < 0:
            raise ValueError(f"kinematic viscosity must be >= 0, got {self.nu}")


@dataclass
class PicardConfig:
    n_pic: int
    log_residuals: bool = False

    def __post_init__(self):
        if self.n_pic < 1:
            raise ValueError("at least one Picard iteration is required")


@dataclass
class TimeStepControl:
    cfl: float = 0.4
    dt_max: float = None


@dataclass
class SpaceTimeState:
    """Space-time polynomial coefficients for one time slab."""

    pressure: np.ndarray   # (NT, N_phi, N_gamma)
    velocity: np.ndarray   # (NQ, 2, N_psi, N_gamma)
    t_start: float
    t_end: float


@dataclass
class StepDiagnostics:
    t_end: float
    dt: float
    s_max: float
    picard_deltas: list
    momentum_iterations: list
    pressure_iterations: list
    div_inf: float
    kinetic_energy: float


class SolverError(RuntimeError):
    pass


class StaggeredSolver:
    """Owns the meshes, reference tensors, assembled operators and the time
    loop for one discretization order."""

    def __init__(self, mesh, order, params, picard=None, control=None,
                 tensors=None, eta_penalty=10.0,
                 momentum_tol=1e-12, pressure_tol=1e-10):
        self.mesh = mesh
        self.order = order
        self.params = params
        self.picard = picard or PicardConfig(n_pic=order.p_gamma + 1)
        self.control = control or TimeStepControl()
        self.momentum_tol = momentum_tol
        self.pressure_tol = pressure_tol

        self.dual = build_dual_grid(mesh, periodic=True)
        self.geom = compute_geometry(mesh, self.dual)
        self.tensors = tensors or precompute_reference_tensors(order)
        if (self.tensors.p, self.tensors.p_gamma) != (order.p, order.p_gamma):
            raise SolverError("reference tensors do not match the order")
        self.assembler = ElementAssembler(
            self.tensors, mesh, self.dual, self.geom, eta_penalty)

        t = self.tensors
        self.n_phi = t.tri_mass.shape[0]
        self.n_psi = t.sq_mass.shape[1]
        self.n_gamma = t.tau_mass.shape[0]
        self.nt = mesh.n_triangles
        self.nq = self.dual.n_quads
        self._build_pressure_system()
        self._momentum_struct = (self.assembler.visc_indptr,
                                 self.assembler.visc_indices)
        self._mom_diag_pos = self.assembler.visc_diag_pos

    # ------------------------------------------------------------------
    # constant operators
    # ------------------------------------------------------------------

    def _build_pressure_system(self):
        a = self.assembler
        grad = a.grad_blocks                       # (NQ, side, comp, psi, phi)
        minv = a.mass_spatial_inv
        tris = self.dual.quad_tris
        entries = {}
        for q in range(self.nq):
            for sa in range(2):
                ga = grad[q, sa]
                for sb in range(2):
                    gb = grad[q, sb]
                    block = sum(ga[c].T @ minv[q] @ gb[c] for c in range(2))
                    key = (int(tris[q, sa]), int(tris[q, sb]))
                    if key in entries:
                        entries[key] += block
                    else:
                        entries[key] = block
        self.pressure_matrix = linsys.BlockSparseMatrix.from_block_dict(
            self.nt, self.n_phi, entries)
        self.pressure_precond = linsys.BlockJacobi(self.pressure_matrix)
        self.pressure_nullspace = np.ones((1, self.nt * self.n_phi))
        # temporal factors of the exact block-diagonal substitution
        # (mass (x) upwind time operator); the pressure solve decouples into
        # one spatial SPD solve per temporal node after these transforms
        taum = self.tensors.tau_mass
        ktau = self.tensors.tau_kup
        taum_inv = np.linalg.inv(taum)
        self._rhs_tau = taum_inv @ ktau.T @ taum_inv   # right factor for rhs
        self._corr_tau = taum @ np.linalg.inv(ktau).T  # right factor for dv

    def _momentum_matrix(self, mats):
        blocks = mats.visc_blocks.copy()
        blocks[self._mom_diag_pos] += mats.time_op
        indptr, indices = self._momentum_struct
        bq = self.n_psi * self.n_gamma
        return linsys.BlockSparseMatrix(self.nq, bq, indptr, indices, blocks)

    # ------------------------------------------------------------------
    # projections and measurements
    # ------------------------------------------------------------------

    def project_initial_condition(self, fields, t0=0.0):
        """Element-wise L2 projection of (u, v, p)(x, y) onto the spatial
        bases, replicated across the temporal nodes of the first slab."""
        p = self.order.p
        deg = 2 * p + 2
        ref_pts, ref_w = quadrature.triangle_rule(deg)

        tri_vals = basis.tri_batch_eval(p, ref_pts)       # (nq, N_phi)
        pressure = np.zeros((self.nt, self.n_phi, self.n_gamma))
        geom = self.geom
        phys = (ref_pts @ geom.tri_jac.transpose(0, 2, 1)
                + geom.tri_shift[:, None, :])              # (NT, nq, 2)
        u, v, pr = fields(phys[..., 0], phys[..., 1])
        rhs = np.einsum("tn,nk,n->tk", np.asarray(pr, dtype=float)
                        * geom.tri_det[:, None], tri_vals, ref_w)
        coef = np.linalg.solve(
            geom.tri_det[:, None, None] * self.tensors.tri_mass[None],
            rhs[:, :, None])[:, :, 0]
        pressure[:] = coef[:, :, None]

        velocity = np.zeros((self.nq, 2, self.n_psi, self.n_gamma))
        rhs_v = np.zeros((self.nq, 2, self.n_psi))
        for s in range(2):
            side_pts = ref_pts if s == 0 else 1.0 - ref_pts[:, ::-1]
            vals = basis.square_batch_eval(p, side_pts, s)  # (nq, N_psi)
            jac = geom.side_jac[:, s]
            phys = (side_pts @ jac.transpose(0, 2, 1)
                    + geom.side_shift[:, s][:, None, :])
            u, v, pr = fields(phys[..., 0], phys[..., 1])
            det = geom.side_det[:, s]
            for c, comp in enumerate((u, v)):
                rhs_v[:, c] += np.einsum(
                    "qn,na,n->qa", np.asarray(comp, dtype=float)
                    * det[:, None], vals, ref_w)
        coef_v = np.linalg.solve(
            self.assembler.mass_spatial[:, None], rhs_v[..., None])[..., 0]
        velocity[:] = coef_v[..., None]
        return SpaceTimeState(pressure, velocity, t0, t0)

    def velocity_end_trace(self, state):
        return np.einsum("qcab,b->qca", state.velocity, self.tensors.tau_g1)

    def pressure_end_trace(self, state):
        return np.einsum("tkb,b->tk", state.pressure, self.tensors.tau_g1)

    def kinetic_energy(self, state):
        tr = self.velocity_end_trace(state)
        return 0.5 * float(np.einsum(
            "qca,qab,qcb->", tr, self.assembler.mass_spatial, tr))

    def divergence_inf_norm(self, velocity):
        """Max-norm of the discrete divergence residual of a velocity
        coefficient array (NQ, 2, N_psi, N_gamma)."""
        r = self._pressure_rhs(velocity)
        return float(np.abs(r).max())

    def max_signal_speed(self, velocity_trace):
        """Brute scan of 2 max(|v+ . n|, |v- . n|) over all segment nodes."""
        a = self.assembler
        dual = self.dual
        va = np.einsum("sqa,sca->sqc", a.seg_trace_a,
                       velocity_trace[dual.seg_quads[:, 0]])
        vb = np.einsum("sqa,sca->sqc", a.seg_trace_b,
                       velocity_trace[dual.seg_quads[:, 1]])
        n = dual.seg_normal
        una = np.einsum("sqc,sc->sq", va, n)
        unb = np.einsum("sqc,sc->sq", vb, n)
        return 2.0 * max(np.abs(una).max(), np.abs(unb).max())

    def compute_timestep(self, state, t_final):
        """CFL step from the end-of-slab velocity trace, clamped to land
        exactly on the final time."""
        ctrl = self.control
        s_max = self.max_signal_speed(self.velocity_end_trace(state))
        dt_max = ctrl.dt_max
        if dt_max is None:
            dt_max = (t_final - state.t_end) / 10.0 if t_final > state.t_end \
                else 1.0
        if s_max < 1e-14:
            dt = dt_max
        else:
            dt = ctrl.cfl / (2 * self.order.p + 1) \
                * self.geom.h_min / s_max
        remaining = t_final - state.t_end
        if dt >= remaining - 1e-13 * max(1.0, abs(t_final)):
            dt = remaining
        return dt, s_max

    # ------------------------------------------------------------------
    # per-pass operators
    # ------------------------------------------------------------------

    def _apply_gradient(self, pressure):
        """(G p) per quad/component, spatial only: (NQ, 2, N_psi, N_gamma)."""
        grad = self.assembler.grad_blocks
        tris = self.dual.quad_tris
        out = np.einsum("qcak,qkd->qcad", grad[:, 0], pressure[tris[:, 0]])
        out += np.einsum("qcak,qkd->qcad", grad[:, 1], pressure[tris[:, 1]])
        return out

    def _apply_gradient_transpose(self, y):
        """Scatter G^T y into triangle blocks: (NT, N_phi, N_gamma)."""
        grad = self.assembler.grad_blocks
        tris = self.dual.quad_tris
        out = np.zeros((self.nt, self.n_phi, self.n_gamma))
        for s in range(2):
            contrib = np.einsum("qcak,qcad->qkd", grad[:, s], y)
            np.add.at(out, tris[:, s], contrib)
        return out

    def _pressure_rhs(self, velocity):
        """(G^T (x) M_tau) v as triangle blocks."""
        y = np.einsum("qcad,db->qcab", velocity, self.tensors.tau_mass)
        return self._apply_gradient_transpose(y)

    def _convective_residual(self, vel):
        """Space-time residual of div(v (x) v) tested with the dual basis,
        without the dt factor: volume term plus Rusanov interface fluxes.
        Also returns the largest interface signal speed encountered."""
        a = self.assembler
        dual = self.dual
        taum = self.tensors.tau_mass
        u = vel[:, 0]
        v = vel[:, 1]
        fxx = u * u
        fxy = u * v
        fyy = v * v
        res = np.empty_like(vel)
        res[:, 0] = -(np.einsum("qac,qcd->qad", a.dvol[:, 0], fxx)
                      + np.einsum("qac,qcd->qad", a.dvol[:, 1], fxy))
        res[:, 1] = -(np.einsum("qac,qcd->qad", a.dvol[:, 0], fxy)
                      + np.einsum("qac,qcd->qad", a.dvol[:, 1], fyy))

        qa = dual.seg_quads[:, 0]
        qb = dual.seg_quads[:, 1]
        va = np.einsum("sqa,scad->sqcd", a.seg_trace_a, vel[qa])
        vb = np.einsum("sqa,scad->sqcd", a.seg_trace_b, vel[qb])
        n = dual.seg_normal
        una = np.einsum("sqcd,sc->sqd", va, n)
        unb = np.einsum("sqcd,sc->sqd", vb, n)
        speed = 2.0 * np.maximum(
            np.abs(una).max(axis=(1, 2)), np.abs(unb).max(axis=(1, 2)))
        s_half = 0.5 * speed[:, None, None, None]
        fn = 0.5 * (una[:, :, None, :] * va + unb[:, :, None, :] * vb) \
            - s_half * (vb - va)
        lw = dual.seg_length[:, None, None] * self.tensors.line_mass[None]
        fwn = np.einsum("sqr,srcd->sqcd", lw, fn)
        contrib_a = np.einsum("sqa,sqcd->scad", a.seg_trace_a, fwn)
        contrib_b = np.einsum("sqa,sqcd->scad", a.seg_trace_b, fwn)
        np.add.at(res, qa, contrib_a)
        np.add.at(res, qb, -contrib_b)
        res[:] = np.einsum("qcad,db->qcab", res, taum)
        return res, float(speed.max())

    def _source_term(self, t0, dt):
        if self.params.source is None:
            return None
        a = self.assembler
        xy = a.quad_node_xy
        taus = self.tensors.tau_nodes
        out = np.zeros((self.nq, 2, self.n_psi, self.n_gamma))
        for d, tau in enumerate(taus):
            sx, sy = self.params.source(xy[..., 0], xy[..., 1], t0 + dt * tau)
            out[:, 0, :, d] = sx
            out[:, 1, :, d] = sy
        out = np.einsum("qab,qcbd->qcad", a.mass_spatial, out)
        return np.einsum("qcad,db->qcab", out, self.tensors.tau_mass)

    # ------------------------------------------------------------------
    # Picard pieces (the per-slab scheme)
    # ------------------------------------------------------------------

    def momentum_predictor(self, prev_trace, pressure, matrices, flux_velocity,
                           momentum_matrix=None, precond=None, t0=0.0):
        """Solve the implicit momentum system for the half-step velocity,
        with the convective flux evaluated from `flux_velocity` and the
        pressure gradient from `pressure`.  Returns (v_star, diagnostics)."""
        a = self.assembler
        dt = matrices.dt
        if momentum_matrix is None:
            momentum_matrix = self._momentum_matrix(matrices)
        if precond is None:
            precond = linsys.BlockJacobi(momentum_matrix)
        conv, _ = self._convective_residual(flux_velocity)
        gp = np.einsum("qcad,db->qcab",
                       self._apply_gradient(pressure), self.tensors.tau_mass)
        rhs = -dt * (conv + gp)
        rhs += np.einsum("qab,qcb,d->qcad", a.mass_spatial, prev_trace,
                         self.tensors.tau_g0)
        src = self._source_term(t0, dt)
        if src is not None:
            rhs += dt * src
        v_star = np.empty_like(rhs)
        iters = []
        for c in range(2):
            x, rep = linsys.bicgstab_solve(
                momentum_matrix, rhs[:, c].reshape(-1),
                tol=self.momentum_tol, precond=precond)
            if not rep.converged:
                raise SolverError(
                    f"momentum solve failed: residual {rep.relative_residual:.2e} "
                    f"after {rep.iterations} iterations")
            v_star[:, c] = x.reshape(self.nq, self.n_psi, self.n_gamma)
            iters.append(rep.iterations)
        return v_star, iters

    def assemble_pressure_system(self, matrices, v_star):
        """Pressure Poisson system for the scaled correction y = dt * dp.

        Substituting the momentum update through the block-diagonal
        space-time operator (dual mass tensored with the upwind time
        operator) into the divergence constraint decouples temporally; the
        returned right-hand side (NT, N_phi, N_gamma) holds one spatial SPD
        system per temporal node for the matrix returned alongside it."""
        rhs = self._pressure_rhs(v_star) @ self._rhs_tau
        return self.pressure_matrix, rhs

    def _solve_pressure(self, rhs):
        y = np.empty_like(rhs)
        iters = 0
        flat = rhs.reshape(self.nt * self.n_phi, self.n_gamma)
        for d in range(self.n_gamma):
            yd, rep = linsys.cg_solve(
                self.pressure_matrix, flat[:, d],
                tol=self.pressure_tol,
                nullspace=self.pressure_nullspace,
                precond=self.pressure_precond)
            if not rep.converged:
                raise SolverError(
                    f"pressure solve failed: residual "
                    f"{rep.relative_residual:.2e} after {rep.iterations} "
                    "iterations")
            y.reshape(self.nt * self.n_phi, self.n_gamma)[:, d] = yd
            iters += rep.iterations
        return y, iters

    def velocity_correction(self, v_star, y):
        """v_new = v_star - (M^-1 G (x) K_tau^-1 M_tau) y for the solved
        scaled correction y = dt * dp."""
        gy = self._apply_gradient(y @ self._corr_tau)
        return v_star - np.einsum(
            "qab,qcbd->qcad", self.assembler.mass_spatial_inv, gy)

    def advance_time_step(self, state, t_final, dt=None):
        """One slab: CFL step, N_pic Picard passes, commit."""
        if dt is None:
            dt, s_max = self.compute_timestep(state, t_final)
        else:
            s_max = self.max_signal_speed(self.velocity_end_trace(state))
        if dt <= 0:
            raise SolverError(f"non-positive time step {dt}")
        t0 = state.t_end
        mats = self.assembler.matrices(self.params.nu, dt)
        momentum_matrix = self._momentum_matrix(mats)
        precond = linsys.BlockJacobi(momentum_matrix)

        extrap = self.tensors.tau_extrap
        vel_k = np.einsum("qcab,db->qcad", state.velocity, extrap)
        prs_k = np.einsum("tkb,db->tkd", state.pressure, extrap)
        prev_trace = self.velocity_end_trace(state)
        flux_velocity = vel_k

        deltas = []
        mom_iters = []
        prs_iters = []
        vel_prev_pass = vel_k
        for _ in range(self.picard.n_pic):
            v_star, it_m = self.momentum_predictor(
                prev_trace, prs_k, mats, flux_velocity,
                momentum_matrix=momentum_matrix, precond=precond, t0=t0)
            mom_iters.extend(it_m)
            _, rhs = self.assemble_pressure_system(mats, v_star)
            y, it_p = self._solve_pressure(rhs)
            prs_iters.append(it_p)
            vel_new = self.velocity_correction(v_star, y)
            prs_k = prs_k + y / dt
            deltas.append(float(np.linalg.norm(vel_new - vel_prev_pass)))
            vel_prev_pass = vel_new
            flux_velocity = v_star
        new_state = SpaceTimeState(prs_k, vel_new, t0, t0 + dt)
        diag = StepDiagnostics(
            t_end=t0 + dt, dt=dt, s_max=s_max,
            picard_deltas=deltas,
            momentum_iterations=mom_iters,
            pressure_iterations=prs_iters,
            div_inf=self.divergence_inf_norm(vel_new),
            kinetic_energy=self.kinetic_energy(new_state))
        return new_state, diag

    def run(self, state, t_final, max_steps=100000, callback=None):
        """Advance until t_final; returns (state, [StepDiagnostics])."""
        history = []
        steps = 0
        while state.t_end < t_final - 1e-12 * max(1.0, abs(t_final)):
            state, diag = self.advance_time_step(state, t_final)
            history.append(diag)
            if callback is not None:
                callback(state, diag)
            steps += 1
            if steps >= max_steps:
                raise SolverError(f"exceeded {max_steps} time steps")
        return state, history
