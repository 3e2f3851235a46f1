# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled integration kernel.

Same closed loop as the pure-Python backend in ``simulate``: flat RK4 over
plant + reference + both estimators + filter layers + oracle channels, with
the excitation monitor advanced once per completed step.  All per-step work
runs as plain C loops over preallocated buffers; no allocation or Python
object traffic happens inside the step loop.

The state layout mirrors ``simulate.StateLayout`` exactly (same block order,
row-major matrix flattening).  Results agree with the Python backend to
integration roundoff, not bit-for-bit: summation order differs.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, fabs, isfinite, pow, sin, sqrt

cnp.import_array()


class KernelDiverged(RuntimeError):
    """State norm blow-up inside the compiled loop; ``t`` is the abort time."""

    def __init__(self, t):
        self.t = t
        super().__init__(f"trajectory diverged at t={t:.6g}")


cdef class _Kernel:
    # dimensions and mode switches
    cdef int n, n_u, n_w, n_r, n_k, reg_kind, ref_kind, policy, disable_proj
    cdef long n_steps, log_every
    # scalar gains / parameters
    cdef double sigma, g1, g2, g3, p_f, p_ff, eps, eps_s, alpha, alpha_s
    cdef double dt, t0, step_time, gamma_ie, T_ie
    # matrices
    cdef double[:, ::1] A, B, A_m, B_m, K_x, K_r, PB, b_bar, G_w, G_ws
    cdef double[:, ::1] W_star, d_amp, d_freq, ref_amp, ref_freq, ref_phase, expo
    cdef double[::1] sweep, e0
    # monitor
    cdef int s
    cdef double T, lam_min
    cdef double[::1] snap_phi, snap_u
    # offsets into the flat state
    cdef int ox, oxm, oW, oWs, oef, ouf, opf, oP, ouff, oDf, oDff, dim
    # scratch
    cdef double[::1] phi, r, e, u, u_ad, epb, gv, tmp_n, hvec, hu
    cdef double[::1] wtrue, delta, yraw, gy, grad, ggrad, jac
    cdef double[::1] y, k1, k2, k3, k4, ystage

    def __init__(self, cfg, y0, e0, b_bar):
        plant, ref, truth, gains = cfg.plant, cfg.reference, cfg.truth, cfg.gains
        self.n = plant.n
        self.n_u = plant.n_u
        self.n_w = plant.n_w
        self.n_r = ref.n_r
        self.reg_kind = {"identity": 0, "wing_rock_basis": 1, "custom_polynomial": 2}[
            plant.regressor_kind
        ]
        self.ref_kind = {"step": 0, "sum_of_sinusoids": 1, "chirp": 2}[ref.kind]
        self.policy = 0 if cfg.ie_policy.kind == "fixed_window" else 1
        self.disable_proj = 1 if cfg.disable_projection else 0
        self.n_steps = cfg.n_steps
        self.log_every = cfg.log_every

        self.sigma = gains.sigma
        self.g1, self.g2, self.g3 = gains.gamma1, gains.gamma2, gains.gamma3
        self.p_f, self.p_ff = gains.p_f, gains.p_ff
        self.eps, self.eps_s = gains.epsilon, gains.epsilon_star
        self.alpha, self.alpha_s = gains.alpha, gains.alpha_star
        self.dt, self.t0 = cfg.dt, cfg.t0
        self.step_time = ref.step_time
        self.gamma_ie = cfg.ie_policy.gamma_ie
        self.T_ie = cfg.ie_policy.T_ie

        def c2(a):
            return np.ascontiguousarray(a, dtype=np.float64)

        self.A = c2(plant.A)
        self.B = c2(plant.B)
        self.A_m = c2(ref.A_m)
        self.B_m = c2(ref.B_m)
        self.K_x = c2(gains.K_x)
        self.K_r = c2(gains.K_r)
        self.PB = c2(gains.PB)
        self.b_bar = c2(b_bar)
        self.G_w = c2(gains.Gamma_W)
        self.G_ws = c2(gains.Gamma_W_star)
        self.W_star = c2(truth.W_star)
        self.d_amp = c2(truth.delta_amplitudes)
        self.d_freq = c2(truth.delta_frequencies)
        self.ref_amp = c2(ref.amplitudes)
        self.n_k = self.ref_amp.shape[1]
        self.ref_freq = c2(
            ref.frequencies if ref.frequencies is not None
            else np.zeros((self.n_r, self.n_k))
        )
        self.ref_phase = c2(
            ref.phases if ref.phases is not None else np.zeros((self.n_r, self.n_k))
        )
        self.sweep = c2(
            np.reshape(
                ref.sweep_rates if ref.sweep_rates is not None else np.zeros(self.n_r),
                -1,
            )
        )
        self.expo = c2(
            plant.exponents if plant.exponents is not None
            else np.zeros((self.n_w, self.n))
        )
        self.e0 = c2(np.reshape(e0, -1))

        self.s = 0
        self.T = 0.0
        self.lam_min = 0.0
        self.snap_phi = np.zeros(self.n_w * self.n_w)
        self.snap_u = np.zeros(self.n_u * self.n_w)

        cdef int n = self.n, n_u = self.n_u, n_w = self.n_w
        cdef int wu = n_w * n_u
        self.ox = 0
        self.oxm = n
        self.oW = 2 * n
        self.oWs = self.oW + wu
        self.oef = self.oWs + wu
        self.ouf = self.oef + n
        self.opf = self.ouf + n_u
        self.oP = self.opf + n_w
        self.ouff = self.oP + n_w * n_w
        self.oDf = self.ouff + n_u * n_w
        self.oDff = self.oDf + n_u
        self.dim = self.oDff + n_u * n_w
        if y0.shape[0] != self.dim:
            raise ValueError("state vector length mismatch against kernel layout")

        self.phi = np.zeros(n_w)
        self.r = np.zeros(self.n_r)
        self.e = np.zeros(n)
        self.u = np.zeros(n_u)
        self.u_ad = np.zeros(n_u)
        self.epb = np.zeros(n_u)
        self.gv = np.zeros(n)
        self.tmp_n = np.zeros(n)
        self.hvec = np.zeros(n_u)
        self.hu = np.zeros(n_u)
        self.wtrue = np.zeros(wu)
        self.delta = np.zeros(wu)
        self.yraw = np.zeros(wu)
        self.gy = np.zeros(wu)
        self.grad = np.zeros(wu)
        self.ggrad = np.zeros(wu)
        self.jac = np.zeros(n_w * n_w)
        self.y = c2(np.reshape(y0, -1)).copy()
        self.k1 = np.zeros(self.dim)
        self.k2 = np.zeros(self.dim)
        self.k3 = np.zeros(self.dim)
        self.k4 = np.zeros(self.dim)
        self.ystage = np.zeros(self.dim)

    # -- building blocks -----------------------------------------------------

    cdef void _regressor(self, double[::1] y, int off, double[::1] out) noexcept:
        cdef int k, j
        cdef double acc
        if self.reg_kind == 0:
            for k in range(self.n_w):
                out[k] = y[off + k]
        elif self.reg_kind == 1:
            out[0] = 1.0
            out[1] = y[off + 0]
            out[2] = y[off + 1]
            out[3] = fabs(y[off + 0]) * y[off + 1]
            out[4] = fabs(y[off + 1]) * y[off + 1]
            out[5] = y[off + 0] * y[off + 0] * y[off + 0]
        else:
            for k in range(self.n_w):
                acc = 1.0
                for j in range(self.n):
                    acc *= pow(y[off + j], self.expo[k, j])
                out[k] = acc

    cdef void _reference(self, double t, double[::1] out) noexcept:
        cdef int i, k
        cdef double acc
        if self.ref_kind == 0:
            for i in range(self.n_r):
                out[i] = self.ref_amp[i, 0] if t >= self.step_time else 0.0
        elif self.ref_kind == 1:
            for i in range(self.n_r):
                acc = 0.0
                for k in range(self.n_k):
                    acc += self.ref_amp[i, k] * sin(
                        self.ref_freq[i, k] * t + self.ref_phase[i, k]
                    )
                out[i] = acc
        else:
            for i in range(self.n_r):
                out[i] = self.ref_amp[i, 0] * sin(
                    self.ref_freq[i, 0] * t + 0.5 * self.sweep[i] * t * t
                )

    cdef void _project(
        self,
        double[::1] y,
        int off_theta,
        double[:, ::1] gam,
        double alpha,
        double eps,
        double[::1] dy,
        int off_out,
    ) noexcept:
        """Projected, gain-weighted drive of one (n_w, n_u) estimate block.

        Reads the raw drive from ``self.yraw`` and writes into dy[off_out:].
        """
        cdef int n_w = self.n_w, n_u = self.n_u
        cdef int i, j, k
        cdef double den = 2.0 * alpha * eps + eps * eps
        cdef double sq = 0.0, f, inner, denom, scale, acc
        for i in range(n_w):
            for j in range(n_u):
                acc = 0.0
                for k in range(n_w):
                    acc += gam[i, k] * self.yraw[k * n_u + j]
                self.gy[i * n_u + j] = acc
        if not self.disable_proj:
            for i in range(n_w * n_u):
                sq += y[off_theta + i] * y[off_theta + i]
            f = (sq - alpha * alpha) / den
            if f > 0.0:
                for i in range(n_w * n_u):
                    self.grad[i] = 2.0 * y[off_theta + i] / den
                inner = 0.0
                for i in range(n_w * n_u):
                    inner += self.grad[i] * self.gy[i]
                if inner > 0.0:
                    for i in range(n_w):
                        for j in range(n_u):
                            acc = 0.0
                            for k in range(n_w):
                                acc += gam[i, k] * self.grad[k * n_u + j]
                            self.ggrad[i * n_u + j] = acc
                    denom = 0.0
                    for i in range(n_w * n_u):
                        denom += self.grad[i] * self.ggrad[i]
                    scale = f * inner / denom
                    for i in range(n_w * n_u):
                        dy[off_out + i] = self.gy[i] - self.ggrad[i] * scale
                    return
        for i in range(n_w * n_u):
            dy[off_out + i] = self.gy[i]

    cdef void _rhs(self, double t, double[::1] y, double[::1] dy) noexcept:
        cdef int n = self.n, n_u = self.n_u, n_w = self.n_w, n_r = self.n_r
        cdef int i, j, k
        cdef double acc, decay, ph

        self._regressor(y, self.ox, self.phi)
        self._reference(t, self.r)
        for i in range(n):
            self.e[i] = y[self.ox + i] - y[self.oxm + i]
        # control law
        for j in range(n_u):
            acc = 0.0
            for i in range(n_w):
                acc += y[self.oW + i * n_u + j] * self.phi[i]
            self.u_ad[j] = acc
        for j in range(n_u):
            acc = 0.0
            for i in range(n):
                acc += self.K_x[i, j] * y[self.ox + i]
            for k in range(n_r):
                acc += self.K_r[k, j] * self.r[k]
            self.u[j] = acc - self.u_ad[j]
        # true parameter at t
        for i in range(n_w):
            for j in range(n_u):
                ph = self.d_freq[i, j] * t
                self.delta[i * n_u + j] = self.d_amp[i, j] * sin(ph)
                self.wtrue[i * n_u + j] = self.W_star[i, j] + self.delta[i * n_u + j]
        # plant / reference model
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc += self.A[i, j] * y[self.ox + j]
            for j in range(n_u):
                ph = self.u[j]
                for k in range(n_w):
                    ph += self.wtrue[k * n_u + j] * self.phi[k]
                acc += self.B[i, j] * ph
            dy[self.ox + i] = acc
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc += self.A_m[i, j] * y[self.oxm + j]
            for k in range(n_r):
                acc += self.B_m[i, k] * self.r[k]
            dy[self.oxm + i] = acc
        # tracking estimator
        for j in range(n_u):
            acc = 0.0
            for i in range(n):
                acc += self.e[i] * self.PB[i, j]
            self.epb[j] = acc
        for i in range(n_w):
            for j in range(n_u):
                self.yraw[i * n_u + j] = self.phi[i] * self.epb[j] - self.sigma * (
                    y[self.oW + i * n_u + j] - y[self.oWs + i * n_u + j]
                )
        self._project(y, self.oW, self.G_w, self.alpha, self.eps, dy, self.oW)
        # first filter layer
        for i in range(n):
            dy[self.oef + i] = -self.p_f * y[self.oef + i] + self.e[i]
        for j in range(n_u):
            dy[self.ouf + j] = -self.p_f * y[self.ouf + j] + self.u_ad[j]
        for i in range(n_w):
            dy[self.opf + i] = -self.p_f * y[self.opf + i] + self.phi[i]
        # reconstructed derivative channel
        decay = exp(-self.p_f * (t - self.t0))
        for i in range(n):
            self.gv[i] = self.e[i] - decay * self.e0[i] - self.p_f * y[self.oef + i]
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc += self.A_m[i, j] * y[self.oef + j]
            self.tmp_n[i] = self.gv[i] - acc
        for j in range(n_u):
            acc = 0.0
            for i in range(n):
                acc += self.b_bar[j, i] * self.tmp_n[i]
            self.hvec[j] = acc
            self.hu[j] = acc + y[self.ouf + j]
        # second filter layer
        for i in range(n_w):
            for j in range(n_w):
                dy[self.oP + i * n_w + j] = (
                    -self.p_ff * y[self.oP + i * n_w + j]
                    + y[self.opf + i] * y[self.opf + j]
                )
        for j in range(n_u):
            for i in range(n_w):
                dy[self.ouff + j * n_w + i] = (
                    -self.p_ff * y[self.ouff + j * n_w + i]
                    + self.hu[j] * y[self.opf + i]
                )
        # identification estimator drive
        for i in range(n_w * n_u):
            self.yraw[i] = 0.0
        for j in range(n_u):
            acc = 0.0
            for i in range(n_w):
                acc += y[self.oWs + i * n_u + j] * y[self.opf + i]
            acc -= self.hu[j]
            for i in range(n_w):
                self.yraw[i * n_u + j] -= self.g1 * y[self.opf + i] * acc
        for j in range(n_u):
            for i in range(n_w):
                acc = 0.0
                for k in range(n_w):
                    acc += y[self.oWs + k * n_u + j] * y[self.oP + k * n_w + i]
                acc -= y[self.ouff + j * n_w + i]
                self.yraw[i * n_u + j] -= self.g2 * acc
        if self.s:
            for j in range(n_u):
                for i in range(n_w):
                    acc = 0.0
                    for k in range(n_w):
                        acc += y[self.oWs + k * n_u + j] * self.snap_phi[k * n_w + i]
                    acc -= self.snap_u[j * n_w + i]
                    self.yraw[i * n_u + j] -= self.g3 * acc
        self._project(y, self.oWs, self.G_ws, self.alpha_s, self.eps_s, dy, self.oWs)
        # oracle channels
        for j in range(n_u):
            acc = 0.0
            for k in range(n_w):
                acc += self.delta[k * n_u + j] * self.phi[k]
            dy[self.oDf + j] = -self.p_f * y[self.oDf + j] + acc
        for j in range(n_u):
            for i in range(n_w):
                dy[self.oDff + j * n_w + i] = (
                    -self.p_ff * y[self.oDff + j * n_w + i]
                    + y[self.oDf + j] * y[self.opf + i]
                )

    cdef double _jacobi_min_eig(self) noexcept:
        """Smallest eigenvalue of sym(Phi_ff) by cyclic Jacobi rotations."""
        cdef int n_w = self.n_w
        cdef int i, p, q, sweep
        cdef double app, aqq, apq, theta, tt, c, s_, aip, aiq, off, scale, lam
        for p in range(n_w):
            for q in range(n_w):
                self.jac[p * n_w + q] = 0.5 * (
                    self.y[self.oP + p * n_w + q] + self.y[self.oP + q * n_w + p]
                )
        scale = 0.0
        for i in range(n_w * n_w):
            scale += self.jac[i] * self.jac[i]
        if scale == 0.0:
            return 0.0
        for sweep in range(50):
            off = 0.0
            for p in range(n_w - 1):
                for q in range(p + 1, n_w):
                    off += self.jac[p * n_w + q] * self.jac[p * n_w + q]
            if off <= 1e-28 * scale:
                break
            for p in range(n_w - 1):
                for q in range(p + 1, n_w):
                    apq = self.jac[p * n_w + q]
                    if apq == 0.0:
                        continue
                    app = self.jac[p * n_w + p]
                    aqq = self.jac[q * n_w + q]
                    theta = 0.5 * (aqq - app) / apq
                    tt = 1.0 / (fabs(theta) + sqrt(theta * theta + 1.0))
                    if theta < 0.0:
                        tt = -tt
                    c = 1.0 / sqrt(tt * tt + 1.0)
                    s_ = tt * c
                    for i in range(n_w):
                        aip = self.jac[i * n_w + p]
                        aiq = self.jac[i * n_w + q]
                        self.jac[i * n_w + p] = c * aip - s_ * aiq
                        self.jac[i * n_w + q] = s_ * aip + c * aiq
                    for i in range(n_w):
                        aip = self.jac[p * n_w + i]
                        aiq = self.jac[q * n_w + i]
                        self.jac[p * n_w + i] = c * aip - s_ * aiq
                        self.jac[q * n_w + i] = s_ * aip + c * aiq
        lam = self.jac[0]
        for i in range(1, n_w):
            if self.jac[i * n_w + i] < lam:
                lam = self.jac[i * n_w + i]
        return lam

    cdef int _monitor(self, double t) noexcept:
        """Advance the excitation monitor; returns 1 on the activation step."""
        cdef int i
        cdef bint fire
        self.lam_min = self._jacobi_min_eig()
        if self.s:
            return 0
        if self.policy == 0:
            fire = t >= self.t0 + self.T_ie - 1e-12
        else:
            fire = self.lam_min >= self.gamma_ie
        if fire:
            self.s = 1
            self.T = t
            for i in range(self.n_w * self.n_w):
                self.snap_phi[i] = self.y[self.oP + i]
            for i in range(self.n_u * self.n_w):
                self.snap_u[i] = self.y[self.ouff + i]
            return 1
        return 0

    cdef int _first_bad_index(self, double[::1] kv) noexcept:
        cdef int i
        for i in range(self.dim):
            if not isfinite(kv[i]):
                return i
        return -1

    def run(self):
        cdef long n_steps = self.n_steps, every = self.log_every
        cdef long m = n_steps // every + 1
        t_log_arr = np.empty(m)
        states_arr = np.empty((m, self.dim))
        cdef double[::1] t_log = t_log_arr
        cdef double[:, ::1] states = states_arr
        cdef long k, row
        cdef int i, bad
        cdef double t, t_prev, half = 0.5 * self.dt, sixth = self.dt / 6.0
        cdef double worst

        t = self.t0
        self._monitor(t)
        t_log[0] = t
        for i in range(self.dim):
            states[0, i] = self.y[i]
        row = 1
        for k in range(1, n_steps + 1):
            t_prev = self.t0 + (k - 1) * self.dt
            self._rhs(t_prev, self.y, self.k1)
            bad = self._first_bad_index(self.k1)
            if bad >= 0:
                raise FloatingPointError(
                    f"non-finite derivative at t={t_prev:.9g} (stage 1), "
                    f"state index {bad}"
                )
            for i in range(self.dim):
                self.ystage[i] = self.y[i] + half * self.k1[i]
            self._rhs(t_prev + half, self.ystage, self.k2)
            bad = self._first_bad_index(self.k2)
            if bad >= 0:
                raise FloatingPointError(
                    f"non-finite derivative at t={t_prev + half:.9g} (stage 2), "
                    f"state index {bad}"
                )
            for i in range(self.dim):
                self.ystage[i] = self.y[i] + half * self.k2[i]
            self._rhs(t_prev + half, self.ystage, self.k3)
            bad = self._first_bad_index(self.k3)
            if bad >= 0:
                raise FloatingPointError(
                    f"non-finite derivative at t={t_prev + half:.9g} (stage 3), "
                    f"state index {bad}"
                )
            for i in range(self.dim):
                self.ystage[i] = self.y[i] + self.dt * self.k3[i]
            self._rhs(t_prev + self.dt, self.ystage, self.k4)
            bad = self._first_bad_index(self.k4)
            if bad >= 0:
                raise FloatingPointError(
                    f"non-finite derivative at t={t_prev + self.dt:.9g} (stage 4), "
                    f"state index {bad}"
                )
            for i in range(self.dim):
                self.y[i] = self.y[i] + sixth * (
                    self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]
                )
            t = self.t0 + k * self.dt
            worst = 0.0
            for i in range(self.dim):
                if not isfinite(self.y[i]):
                    raise KernelDiverged(t)
                if fabs(self.y[i]) > worst:
                    worst = fabs(self.y[i])
            if worst > 1e9:
                raise KernelDiverged(t)
            self._monitor(t)
            if k % every == 0:
                t_log[row] = t
                for i in range(self.dim):
                    states[row, i] = self.y[i]
                row += 1
        snap_phi = np.asarray(self.snap_phi).reshape(self.n_w, self.n_w).copy()
        snap_u = np.asarray(self.snap_u).reshape(self.n_u, self.n_w).copy()
        return (
            t_log_arr,
            states_arr,
            bool(self.s),
            self.T if self.s else None,
            snap_phi if self.s else None,
            snap_u if self.s else None,
            self.lam_min,
        )


def integrate(cfg, y0, e0, b_bar):
    """Entry point used by ``simulate._integrate_compiled``."""
    kern = _Kernel(
        cfg,
        np.ascontiguousarray(y0, dtype=np.float64),
        np.ascontiguousarray(e0, dtype=np.float64),
        np.ascontiguousarray(b_bar, dtype=np.float64),
    )
    return kern.run()
