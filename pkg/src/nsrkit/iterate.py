"""One convex-integration step for the Navier-Stokes-Reynolds system.

Fields are sampled on a uniform time grid covering B_{2s}(t0). Every quadratic
term is the same dealiased bilinear form Q, so the algebra that closes the new
system holds exactly on the grid and the residual of the output is round-off.
Time derivatives travel with the fields: analytic for jets and cutoffs, passed
exactly through the discrete time mollifier, and fourth-order differences only
where the input carries no derivative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.special import expit

from . import field as F
from . import jets as J
from .geometry import DirectionSet, linear_coordinates
from .params import Interval, LevelSchedule, ParameterConfig

VOL = (2.0 * math.pi) ** 3


class StageError(RuntimeError):
    """A precondition of one stage of the step failed."""

    def __init__(self, stage, message, **info):
        super().__init__(f"{stage}: {message}")
        self.stage = stage
        self.info = info


# -- packed symmetric tensors --------------------------------------------------------


def ptrace(P):
    return P[0] + P[1] + P[2]


def ptraceless(P):
    out = P.copy()
    tr = ptrace(P) / 3.0
    for c in range(3):
        out[c] -= tr
    return out


def pnorm(P):
    """Pointwise Frobenius magnitude of a packed tensor."""
    return np.sqrt(P[0] ** 2 + P[1] ** 2 + P[2] ** 2 + 2.0 * (P[3] ** 2 + P[4] ** 2 + P[5] ** 2))


def pinner(P, Q):
    return P[0] * Q[0] + P[1] * Q[1] + P[2] * Q[2] + 2.0 * (P[3] * Q[3] + P[4] * Q[4] + P[5] * Q[5])


def pdiv(grid, P):
    return F.div_tensor(grid, F.sym_unpack(P))


def preynolds(grid, v):
    return F.sym_pack(F.reynolds(grid, v))


def xi_outer_packed(xi):
    return np.array([xi[i] * xi[j] for i, j in F.SYM_INDEX])


def q_sym(grid, u, w=None):
    """Packed Q(u, u) or Q(u, w) + Q(w, u)."""
    U = grid.pad(u)
    if w is None:
        out = [U[i] * U[j] for i, j in F.SYM_INDEX]
    else:
        Wp = grid.pad(w)
        out = [U[i] * Wp[j] + Wp[i] * U[j] for i, j in F.SYM_INDEX]
    return grid.unpad(np.stack(out))


def q_cross(grid, u, w):
    return grid.unpad(np.cross(grid.pad(u), grid.pad(w), axis=0))


def integral(f):
    return float(np.mean(f) * VOL)


def l2_sq(u):
    return float(np.mean(np.sum(u * u, axis=0)) * VOL)


# -- time grid and differences ----------------------------------------------------------


def time_grid(schedule: LevelSchedule, nt):
    """Uniform samples of B_{2s}(t0); nt - 1 must be a multiple of 8 so t0 +- s/2 are samples."""
    if nt < 9 or (nt - 1) % 8:
        raise StageError("time-grid", f"nt - 1 must be a positive multiple of 8, got nt={nt}")
    return np.linspace(float(schedule.window.lo), float(schedule.window.hi), nt)


def energy_interval(schedule: LevelSchedule):
    """I_0 = [t0 - s/2, t0 + s/2]."""
    return Interval(schedule.window.center, schedule.window.half / 4)


def fd_derivative(samples, dt):
    """Fourth-order finite differences (one-sided near the ends); None entries mean zero."""
    nt = len(samples)
    if nt < 5:
        raise StageError("time-derivative", f"need at least 5 time samples, got {nt}")
    ref = next((s for s in samples if s is not None), None)
    if ref is None:
        return [None] * nt
    z = np.zeros_like(ref)
    f = [z if s is None else s for s in samples]
    out = []
    for k in range(nt):
        if 2 <= k <= nt - 3:
            d = (f[k - 2] - 8 * f[k - 1] + 8 * f[k + 1] - f[k + 2]) / (12 * dt)
        elif k < 2:
            d = (-25 * f[k] + 48 * f[k + 1] - 36 * f[k + 2] + 16 * f[k + 3] - 3 * f[k + 4]) / (12 * dt)
        else:
            d = (25 * f[k] - 48 * f[k - 1] + 36 * f[k - 2] - 16 * f[k - 3] + 3 * f[k - 4]) / (12 * dt)
        out.append(d)
    return out


# -- state ---------------------------------------------------------------------------------


@dataclass
class NSRState:
    grid: F.Grid
    times: np.ndarray
    v: list
    p: list
    R: list
    schedule: LevelSchedule | None
    q: int = 0
    dv_dt: list | None = None
    dR_dt: list | None = None
    v0_l2: float | None = None

    @property
    def nt(self):
        return len(self.times)

    @property
    def dt(self):
        return float(self.times[1] - self.times[0])

    def p_at(self, k):
        return np.zeros(self.grid.shape) if self.p[k] is None else self.p[k]

    def R_at(self, k):
        return np.zeros((6,) + self.grid.shape) if self.R[k] is None else self.R[k]

    def velocity_derivative(self):
        return self.dv_dt if self.dv_dt is not None else fd_derivative(self.v, self.dt)

    def stress_derivative(self):
        if self.dR_dt is not None:
            return self.dR_dt
        if all(r is None for r in self.R):
            return [None] * self.nt
        return fd_derivative(self.R, self.dt)

    def check(self, tol=1e-10):
        """Divergence, mean and symmetry/trace invariants of the samples."""
        g = self.grid
        worst_div = 0.0
        worst_tr = 0.0
        for k in range(self.nt):
            v = self.v[k]
            scale = max(F.sup_norm(F.grad(g, v)), 1e-300)
            worst_div = max(worst_div, F.sup_norm(F.div(g, v)) / scale)
            if self.R[k] is not None:
                worst_tr = max(worst_tr, float(np.max(np.abs(ptrace(self.R[k])))) / max(float(np.max(pnorm(self.R[k]))), 1e-300))
        return {"div_v": worst_div, "trace_R": worst_tr, "ok": worst_div <= tol and worst_tr <= tol}


def shear_flow_state(schedule, n, nt, amplitude=1.0):
    """v = amplitude (sin x3 e^{-t}, 0, 0), p = 0, R = 0: an exact Navier-Stokes solution."""
    g = F.Grid(n)
    times = time_grid(schedule, nt)
    _, _, z = g.coords()
    base = np.sin(z)
    v, dv = [], []
    for t in times:
        u = np.zeros((3,) + g.shape)
        u[0] = amplitude * base * math.exp(-t)
        v.append(u)
        dv.append(-u)
    st = NSRState(g, times, v, [None] * nt, [None] * nt, schedule, q=schedule.q, dv_dt=dv)
    st.v0_l2 = max(math.sqrt(l2_sq(u)) for u in v)
    return st


def zero_state(schedule, n, nt):
    g = F.Grid(n)
    times = time_grid(schedule, nt)
    v = [np.zeros((3,) + g.shape) for _ in times]
    st = NSRState(g, times, v, [None] * nt, [None] * nt, schedule, q=schedule.q, dv_dt=[np.zeros_like(u) for u in v])
    st.v0_l2 = 0.0
    return st


# -- cutoffs ----------------------------------------------------------------------------------


def _bump_exp(t):
    t = np.asarray(t, dtype=float)
    pos = t > 0
    with np.errstate(over="ignore"):
        return np.where(pos, np.exp(-1.0 / np.where(pos, t, 1.0)), 0.0)


def smooth_step(tau):
    """S(tau) = f(tau) / (f(tau) + f(1 - tau)) with f(t) = exp(-1/t); S = 0 for tau <= 0, 1 for tau >= 1."""
    a, b = _bump_exp(tau), _bump_exp(1.0 - np.asarray(tau, dtype=float))
    return a / (a + b)


def smooth_step_prime(tau):
    tau = np.asarray(tau, dtype=float)
    a, b = _bump_exp(tau), _bump_exp(1.0 - tau)
    # below 1e-3 exp(-1/t)/t^2 underflows to zero, while t^2 alone may underflow and give 0/0
    lo, hi = tau > 1e-3, 1.0 - tau > 1e-3
    da = np.where(lo, a / np.where(lo, tau, 1.0) ** 2, 0.0)
    db = np.where(hi, b / np.where(hi, 1.0 - tau, 1.0) ** 2, 0.0)
    return (da * b + a * db) / (a + b) ** 2


@dataclass(frozen=True)
class Cutoff:
    """1 on |t - center| <= plateau, 0 beyond plateau + width."""

    center: float
    plateau: float
    width: float

    def _tau(self, t):
        return (np.abs(np.asarray(t, dtype=float) - self.center) - self.plateau) / self.width

    def __call__(self, t):
        return 1.0 - smooth_step(self._tau(t))

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        return -smooth_step_prime(self._tau(t)) * np.sign(t - self.center) / self.width

    @property
    def support(self):
        return (self.center - self.plateau - self.width, self.center + self.plateau + self.width)

    def c_norms(self, n_max=2, samples=40001):
        lo, hi = self.support
        t = np.linspace(lo - self.width, hi + self.width, samples)
        d1 = self.derivative(t)
        out = {0: float(np.max(self(t))), 1: float(np.max(np.abs(d1)))}
        if n_max >= 2:
            out[2] = float(np.max(np.abs(np.gradient(d1, t))))
        return out


@dataclass(frozen=True)
class CutoffPair:
    eta: Cutoff
    eta_tilde: Cutoff

    def invariants(self, schedule: LevelSchedule):
        """Plateau and support inclusions, exact in Fraction arithmetic on the construction data."""
        c = schedule.I_q.center
        fr = Fraction
        return {
            "eta_one_on_I_q": fr(self.eta.plateau) >= schedule.I_q.half - fr(1, 10**12),
            "eta_support_in_Itilde_q": fr(self.eta.plateau) + fr(self.eta.width) < schedule.Itilde_q.half,
            "eta_tilde_one_on_Itilde_q": fr(self.eta_tilde.plateau) >= schedule.Itilde_q.half - fr(1, 10**12),
            "eta_tilde_support_in_I_q1": fr(self.eta_tilde.plateau) + fr(self.eta_tilde.width) < schedule.I_q1.half,
            "centered": abs(fr(self.eta.center) - c) < fr(1, 10**12),
        }


def build_cutoffs(schedule: LevelSchedule, fraction=0.9):
    c = float(schedule.I_q.center)
    w = fraction * schedule.s_q1 / 2.0
    eta = Cutoff(c, schedule.S_q, w)
    eta_t = Cutoff(c, schedule.S_q + schedule.s_q1 / 2.0, w)
    return CutoffPair(eta, eta_t)


# -- chi -----------------------------------------------------------------------------------------


def chi(z):
    """1 on [0, 1], z on [2, oo), quintic smoothstep blend of the two in between."""
    z = np.asarray(z, dtype=float)
    u = np.clip(z - 1.0, 0.0, 1.0)
    h = u**3 * (10.0 - 15.0 * u + 6.0 * u * u)
    return (1.0 - h) + h * z


def chi_prime(z):
    z = np.asarray(z, dtype=float)
    u = np.clip(z - 1.0, 0.0, 1.0)
    h = u**3 * (10.0 - 15.0 * u + 6.0 * u * u)
    dh = 30.0 * u * u * (1.0 - u) ** 2
    return dh * (z - 1.0) + h


def chi_check(samples=200001):
    z = np.linspace(0.0, 4.0, samples)
    c = chi(z)
    mid = (z > 1) & (z < 2)
    return {
        "chi_ge_one": bool(np.all(c >= 1.0)),
        "chi_blend_bounds": bool(np.all(z[mid] <= 2 * c[mid]) and np.all(2 * c[mid] <= 4 * z[mid])),
        "chi_one_on_unit": bool(np.all(c[z <= 1] == 1.0)),
        "chi_identity_beyond_two": bool(np.all(c[z >= 2] == z[z >= 2])),
    }


# -- energy profile ----------------------------------------------------------------------------


@dataclass(frozen=True)
class EnergyProfile:
    times: np.ndarray
    kinetic: np.ndarray
    dkinetic: np.ndarray
    eps1: float
    t0: float
    slope: float
    bound: float

    def g(self, t):
        return self.eps1 / 2.0 + self.eps1 / 2.0 * expit(self.slope * (np.asarray(t) - self.t0))

    def dg(self, t):
        s = expit(self.slope * (np.asarray(t) - self.t0))
        return self.eps1 / 2.0 * self.slope * s * (1.0 - s)

    def e(self, k):
        return float(self.kinetic[k] + self.g(self.times[k]))

    def de(self, k):
        return float(self.dkinetic[k] + self.dg(self.times[k]))

    def to_json(self):
        return {"eps1": self.eps1, "t0": self.t0, "slope": self.slope, "kinetic_slope_bound": self.bound, "g_prime_t0": float(self.dg(self.t0))}


def energy_profile(state: NSRState, eps1, s_half=None):
    """e(t) = int |v|^2 + g(t) with a logistic g from eps1/2 to eps1; g'(t0) = 2 sup|d/dt int |v|^2|."""
    dv = state.velocity_derivative()
    kin = np.array([l2_sq(u) for u in state.v])
    dkin = np.array([2.0 * integral(np.sum(u * d, axis=0)) for u, d in zip(state.v, dv)])
    bound = float(np.max(np.abs(dkin)))
    t0 = float(state.schedule.window.center)
    if bound > 0:
        slope = 16.0 * bound / eps1
    else:
        s = float(state.schedule.window.half) / 2.0 if s_half is None else s_half
        slope = 1.0 / s
    return EnergyProfile(state.times.copy(), kin, dkin, float(eps1), t0, slope, bound)


# -- mollification ------------------------------------------------------------------------------


@dataclass(frozen=True)
class Mollifier:
    ell: float
    space: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    @property
    def reach(self):
        return (len(self.weights) - 1) // 2

    def apply_space(self, grid, f):
        return grid.ifft(grid.fft(f) * self.space)


def _radial_bump(r):
    r = np.asarray(r, dtype=float)
    inside = r < 1
    return np.where(inside, np.exp(-1.0 / (1.0 - np.where(inside, r, 0.0) ** 2)), 0.0)


def build_mollifier(grid: F.Grid, dt, ell, nodes=256):
    if ell < 2 * grid.dx or ell < 2 * dt:
        raise StageError("mollify", f"under-resolved mollification: ell={ell:.4g} needs >= 2 dx ({2 * grid.dx:.4g}) and >= 2 dt ({2 * dt:.4g})")
    x, w = np.polynomial.legendre.leggauss(nodes)
    r, wr = 0.5 * (x + 1.0), 0.5 * w
    prof = _radial_bump(r) * r * r * wr
    k2 = np.rint(grid.k2).astype(np.int64)
    uniq, inv = np.unique(k2, return_inverse=True)
    kappa = np.sqrt(uniq.astype(float)) * ell
    # 4 pi int theta(r) r^2 sinc(kappa r) dr, normalized at kappa = 0
    vals = (np.sinc(np.outer(kappa, r) / math.pi) * prof).sum(axis=1)
    vals = vals / prof.sum()
    space = vals[inv].reshape(grid.k2.shape) * grid.mask
    m = int(math.floor(ell / dt))
    if m * dt >= ell:
        m -= 1
    j = np.arange(-m, m + 1)
    wt = _radial_bump(np.abs(j * dt / ell))
    return Mollifier(ell, space, wt / wt.sum())


@dataclass
class Mollified:
    v_bar: dict
    dv_bar: dict
    p_ell: dict
    R_bar: dict
    dR_bar: dict
    R_com_bar: dict


def mollify(state: NSRState, moll: Mollifier, indices):
    """Space-time mollification at the requested samples; v is extended by zero outside the window."""
    g = state.grid
    nt = state.nt
    m = moll.reach
    dv = state.velocity_derivative()
    dR = state.stress_derivative()
    need = sorted({j for k in indices for j in range(k - m, k + m + 1) if 0 <= j < nt})
    cache = {}
    for j in need:
        v = state.v[j]
        cache[j] = {
            "v": moll.apply_space(g, v),
            "dv": moll.apply_space(g, dv[j]),
            "p": moll.apply_space(g, state.p_at(j)),
            "R": None if state.R[j] is None else moll.apply_space(g, state.R[j]),
            "dR": None if dR[j] is None else moll.apply_space(g, dR[j]),
            "vv": moll.apply_space(g, q_sym(g, v)),
        }
    out = Mollified({}, {}, {}, {}, {}, {})
    for k in indices:
        acc = {key: 0.0 for key in ("v", "dv", "p", "R", "dR", "vv")}
        for i, wgt in enumerate(moll.weights):
            j = k + i - m
            if not (0 <= j < nt):
                continue
            for key in acc:
                val = cache[j][key]
                if val is not None:
                    acc[key] = acc[key] + wgt * val
        zero6 = np.zeros((6,) + g.shape)
        vb = acc["v"] if isinstance(acc["v"], np.ndarray) else np.zeros((3,) + g.shape)
        com_full = q_sym(g, vb) - (acc["vv"] if isinstance(acc["vv"], np.ndarray) else zero6)
        out.v_bar[k] = vb
        out.dv_bar[k] = acc["dv"] if isinstance(acc["dv"], np.ndarray) else np.zeros_like(vb)
        p_bar = acc["p"] if isinstance(acc["p"], np.ndarray) else np.zeros(g.shape)
        out.p_ell[k] = p_bar - ptrace(com_full) / 3.0
        out.R_bar[k] = acc["R"] if isinstance(acc["R"], np.ndarray) else zero6
        out.dR_bar[k] = acc["dR"] if isinstance(acc["dR"], np.ndarray) else zero6
        out.R_com_bar[k] = ptraceless(com_full)
    return out


# -- gluing -------------------------------------------------------------------------------------


@dataclass
class Glued:
    v_tilde: dict
    dv_tilde: dict
    R_ell: dict
    dR_ell: dict
    R_com: dict
    R_loc: dict
    pi_ell: dict
    eta: dict
    deta: dict


def glue(state: NSRState, moll: Mollified, cutoffs: CutoffPair, indices):
    g = state.grid
    bad = [k for k in range(state.nt) if state.R[k] is not None and float(cutoffs.eta(state.times[k])) < 1.0 and np.any(state.R[k] != 0)]
    if bad:
        raise StageError("glue", "stress is nonzero where the cutoff is below one", indices=bad)
    dv = state.velocity_derivative()
    out = Glued({}, {}, {}, {}, {}, {}, {}, {}, {})
    for k in indices:
        t = state.times[k]
        eta = float(cutoffs.eta(t))
        deta = float(cutoffs.eta.derivative(t))
        v = state.v[k]
        vb = moll.v_bar[k]
        delta = vb - v
        out.v_tilde[k] = eta * vb + (1.0 - eta) * v
        out.dv_tilde[k] = deta * delta + eta * moll.dv_bar[k] + (1.0 - eta) * dv[k]
        out.R_ell[k] = eta * moll.R_bar[k]
        out.dR_ell[k] = deta * moll.R_bar[k] + eta * moll.dR_bar[k]
        out.R_com[k] = eta * moll.R_com_bar[k]
        dd = q_sym(g, delta)
        loc = -eta * (1.0 - eta) * ptraceless(dd)
        if deta != 0.0:
            loc = loc + preynolds(g, deta * delta)
        out.R_loc[k] = loc
        out.pi_ell[k] = eta * moll.p_ell[k] + (1.0 - eta) * state.p_at(k) + eta * (1.0 - eta) * ptrace(dd) / 3.0
        out.eta[k] = eta
        out.deta[k] = deta
    return out


# -- amplitudes ------------------------------------------------------------------------------


@dataclass
class AmplitudeField:
    rho: dict
    drho: dict
    A: dict
    dA: dict
    a: dict
    da: dict
    rho_bar: dict
    drho_bar: dict
    chi_integral: dict
    quotient: dict
    identity_linear: dict
    identity_pointwise: dict
    eta_tilde: dict


def _rho_bar_parts(k, energy, glued, chi_scale, delta_q2):
    vt = glued.v_tilde[k]
    R = glued.R_ell[k]
    nR = pnorm(R)
    z = nR * chi_scale
    Z = integral(chi(z))
    N = energy.e(k) - l2_sq(vt) - delta_q2 / 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        zdot = np.where(nR > 0, chi_scale * pinner(R, glued.dR_ell[k]) / np.where(nR > 0, nR, 1.0), 0.0)
    dZ = integral(chi_prime(z) * zdot)
    dN = energy.de(k) - 2.0 * integral(np.sum(vt * glued.dv_tilde[k], axis=0))
    return N, dN, Z, dZ, z, zdot


def amplitudes(state: NSRState, glued: Glued, energy: EnergyProfile, dset: DirectionSet, cutoffs: CutoffPair, indices):
    g = state.grid
    sch = state.schedule
    I0 = energy_interval(sch)
    times = state.times
    k_lo = int(np.argmin(np.abs(times - float(I0.lo))))
    k_hi = int(np.argmin(np.abs(times - float(I0.hi))))
    chi_scale = 4.0 * sch.lambda_q**sch.zeta * sch.delta_1 / sch.delta_q1
    parts = {}
    for k in sorted(set(indices) | {k_lo, k_hi}):
        if k not in glued.v_tilde:
            raise StageError("amplitudes", f"energy interval endpoint sample {k} is not active")
        parts[k] = _rho_bar_parts(k, energy, glued, chi_scale, sch.delta_q2)
    for k in range(k_lo, k_hi + 1):
        if k in parts and parts[k][0] <= 0:
            raise StageError("amplitudes", f"e - int|v_tilde|^2 - delta_(q+2)/2 = {parts[k][0]:.4g} <= 0 at t={times[k]:.6g}", index=k)
    xis = dset.xi_floats()
    idc = np.asarray(dset.id_coordinates, dtype=float)
    out = AmplitudeField(*[{} for _ in range(13)])
    for k in indices:
        t = times[k]
        kk = min(max(k, k_lo), k_hi)
        N, dN, Z, dZ, _, _ = parts[kk]
        rb = N / (3.0 * Z)
        drb = (dN / (3.0 * Z) - N * dZ / (3.0 * Z * Z)) if k_lo <= k <= k_hi else 0.0
        _, _, Zk, _, z, zdot = parts[k]
        et = float(cutoffs.eta_tilde(t))
        det = float(cutoffs.eta_tilde.derivative(t))
        cz = chi(z)
        rho_raw = et * et * rb * cz
        drho_raw = 2 * et * det * rb * cz + et * et * drb * cz + et * et * rb * chi_prime(z) * zdot
        rho = F.truncate(g, rho_raw)
        drho = F.truncate(g, drho_raw)
        R = glued.R_ell[k]
        cR = linear_coordinates(dset, R)
        cdR = linear_coordinates(dset, glued.dR_ell[k])
        A = idc[:, None, None, None] * rho[None] - cR
        dA = idc[:, None, None, None] * drho[None] - cdR
        scale = max(float(np.max(np.abs(rho))), 1e-300)
        if float(np.min(A)) < -1e-13 * scale:
            where = np.unravel_index(int(np.argmin(A)), A.shape)
            with np.errstate(divide="ignore", invalid="ignore"):
                quo = float(np.max(np.where(rho > 0, pnorm(R) / np.where(rho > 0, rho, 1.0), 0.0)))
            raise StageError("amplitudes", f"gamma domain violation at t={t:.6g}, location {where[1:]}, |R_ell/rho| max {quo:.4g}", index=k, location=where)
        A = np.maximum(A, 0.0)
        root = np.sqrt(A)
        with np.errstate(divide="ignore", invalid="ignore"):
            droot = np.where(root > 0, dA / (2.0 * np.where(root > 0, root, 1.0)), 0.0)
        a = F.truncate(g, root)
        da = F.truncate(g, droot)
        target = np.stack([rho, rho, rho, 0 * rho, 0 * rho, 0 * rho]) - R
        outer6 = np.stack([xi_outer_packed(x) for x in xis])
        lin = np.tensordot(outer6.T, A, axes=(1, 0))
        pw = np.tensordot(outer6.T, a * a, axes=(1, 0))
        with np.errstate(divide="ignore", invalid="ignore"):
            quo = float(np.max(np.where(rho > 0, pnorm(R) / np.where(rho > 0, rho, 1.0), 0.0)))
        out.rho[k], out.drho[k], out.A[k], out.dA[k], out.a[k], out.da[k] = rho, drho, A, dA, a, da
        out.rho_bar[k], out.drho_bar[k], out.chi_integral[k] = rb, drb, Zk
        out.quotient[k] = quo
        out.identity_linear[k] = float(np.max(pnorm(target - lin))) / scale
        out.identity_pointwise[k] = float(np.max(pnorm(target - pw))) / scale
        out.eta_tilde[k] = et
    return out


# -- perturbation ---------------------------------------------------------------------------


@dataclass
class Perturbation:
    w_p: np.ndarray
    w_c: np.ndarray
    w_t: np.ndarray
    dw_pc: np.ndarray
    dw_t: np.ndarray
    P: np.ndarray
    curlcurl_error: float
    div_pc: float
    div_t: float
    osc_vector: np.ndarray
    mean_flux_tensor: np.ndarray

    @property
    def w(self):
        return self.w_p + self.w_c + self.w_t

    @property
    def dw(self):
        return self.dw_pc + self.dw_t


def perturbation(grid: F.Grid, amp: AmplitudeField, k, family: J.JetFamily, t):
    """w_p, w_c, w_t at one time sample, with exact time derivatives."""
    g = grid
    zero = np.zeros((3,) + g.shape)
    w_p, w_c, pot, dpot, flux, dflux, osc = (zero.copy() for _ in range(7))
    mean_part = np.zeros((6,) + g.shape)
    mu = family.mu
    for i in range(len(family)):
        xi = family.xi(i)
        xcol = xi[:, None, None, None]
        a, da = amp.a[k][i], amp.da[k][i]
        A, dA = amp.A[k][i], amp.dA[k][i]
        s = family.scalar_w(i, t)
        ds = family.dpsi_dt(i, t) * family.phi(i)
        V = family.v(i, t)
        dV = family.dv_dt(i, t)
        ga = F.grad(g, a)
        w_p += xcol * F.product(g, a, s)
        w_c += F.curl(g, q_cross(g, ga, V)) + q_cross(g, ga, F.curl(g, V)) + F.product(g, a, family.wc(i, t))
        pot += F.product(g, a, V)
        dpot += F.product(g, da, V) + F.product(g, a, dV)
        Fi = F.product(g, s, s)
        dFi = 2.0 * F.product(g, s, ds)
        Fm = float(np.mean(Fi))
        flux += xcol * F.product(g, A, Fi)
        dflux += xcol * (F.product(g, dA, Fi) + F.product(g, A, dFi))
        xgA = sum(xi[j] * F.partial(g, A, j) for j in range(3))
        osc += xcol * F.product(g, xgA, Fi - Fm) - xcol * F.product(g, dA, Fi) / mu
        mean_part += xi_outer_packed(xi)[:, None, None, None] * (A + F.product(g, A, Fi - Fm))[None]
    w_t = -F.helmholtz(g, F.project_nonzero(g, flux)) / mu
    X = F.project_nonzero(g, dflux) / mu
    dw_t = -F.helmholtz(g, X)
    P = F.inv_laplacian(g, F.div(g, X))
    cc = F.curl(g, F.curl(g, pot))
    scale = max(F.sup_norm(w_p), 1e-300)
    return Perturbation(
        w_p=w_p,
        w_c=w_c,
        w_t=w_t,
        dw_pc=F.curl(g, F.curl(g, dpot)),
        dw_t=dw_t,
        P=P,
        curlcurl_error=F.sup_norm(w_p + w_c - cc) / scale,
        div_pc=F.sup_norm(F.div(g, w_p + w_c)) / scale,
        div_t=F.sup_norm(F.div(g, w_t)) / max(F.sup_norm(w_t), 1e-300),
        osc_vector=osc,
        mean_flux_tensor=mean_part,
    )


# -- new stress ----------------------------------------------------------------------------


@dataclass
class StressBreakdown:
    R_lin: np.ndarray
    R_cor: np.ndarray
    R_osc: np.ndarray
    R_com: np.ndarray
    R_loc: np.ndarray
    p_lin: np.ndarray
    p_cor: np.ndarray
    p_osc: np.ndarray
    P_q1: np.ndarray
    defect: np.ndarray
    oscillation_identity: float

    def total(self):
        return self.R_lin + self.R_cor + self.R_osc + self.R_com + self.R_loc


def new_stress(grid, k, glued: Glued, amp: AmplitudeField, pert: Perturbation):
    g = grid
    vt = glued.v_tilde[k]
    w = pert.w
    S = q_sym(g, vt, w)
    R_lin = preynolds(g, -F.laplacian(g, w) + pert.dw_pc) + ptraceless(S)
    p_lin = ptrace(S) / 3.0
    QPP = q_sym(g, pert.w_p)
    C = q_sym(g, w) - QPP
    R_cor = ptraceless(C)
    p_cor = ptrace(C) / 3.0
    E = QPP - pert.mean_flux_tensor
    R_osc = preynolds(g, pert.osc_vector) + ptraceless(E)
    p_osc = amp.rho[k] + pert.P + ptrace(E) / 3.0
    # div(Q(w_p, w_p) + R_ell) + d_t w_t = div R_osc + grad p_osc
    lhs = pdiv(g, QPP + glued.R_ell[k]) + pert.dw_t
    rhs = pdiv(g, R_osc) + F.grad(g, p_osc)
    scale = max(F.sup_norm(lhs), F.sup_norm(pdiv(g, QPP)), F.sup_norm(pert.dw_t), 1e-300)
    return StressBreakdown(
        R_lin=R_lin,
        R_cor=R_cor,
        R_osc=R_osc,
        R_com=glued.R_com[k],
        R_loc=glued.R_loc[k],
        p_lin=p_lin,
        p_cor=p_cor,
        p_osc=p_osc,
        P_q1=pert.P,
        defect=E,
        oscillation_identity=F.sup_norm(lhs - rhs) / scale,
    )


# -- residual -------------------------------------------------------------------------------


@dataclass
class ResidualResult:
    residual_linf: float
    residual_l2: float
    per_sample: list

    def to_json(self):
        return {"residual_linf": self.residual_linf, "residual_l2": self.residual_l2, "per_sample": self.per_sample}


def residual_check(grid, v, p, R, dt, dv_dt=None, indices=None):
    """Relative residual of d_t v + div Q(v, v) + grad p - lap v - div R.

    Each sample is normalized by the largest sup norm among the terms.
    Without supplied derivatives only interior samples are checked.
    """
    nt = len(v)
    if nt < 5:
        raise StageError("residual", f"need at least 5 time samples, got {nt}")
    if dv_dt is None:
        d = fd_derivative(v, dt)
        ks = range(2, nt - 2)
    else:
        d = dv_dt
        ks = range(nt)
    if indices is not None:
        ks = [k for k in ks if k in set(indices)]
    rows = []
    for k in ks:
        terms = [d[k], pdiv(grid, q_sym(grid, v[k])), -F.laplacian(grid, v[k])]
        if p[k] is not None:
            terms.append(F.grad(grid, p[k]))
        if R[k] is not None:
            terms.append(-pdiv(grid, R[k]))
        res = sum(terms)
        scale = max(F.sup_norm(x) for x in terms)
        sup = F.sup_norm(res) / scale if scale > 0 else 0.0
        l2 = math.sqrt(l2_sq(res)) / max(max(math.sqrt(l2_sq(x)) for x in terms), 1e-300) if scale > 0 else 0.0
        rows.append({"index": int(k), "linf": sup, "l2": l2})
    return ResidualResult(
        residual_linf=max((r["linf"] for r in rows), default=0.0),
        residual_l2=float(np.mean([r["l2"] for r in rows])) if rows else 0.0,
        per_sample=rows,
    )


# -- the step ------------------------------------------------------------------------------


@dataclass
class StepResult:
    state: NSRState
    report: object
    family: J.JetFamily
    ell: float
    active: list
    residual: ResidualResult


def _sup_over(values):
    return max(values) if values else 0.0


def effective_ell(schedule: LevelSchedule, grid: F.Grid, dt):
    """Mollification scale: the schedule value, raised to two grid spacings in space and time."""
    return max(schedule.ell, 2.0 * grid.dx, 2.0 * dt)


def _inductive_checks(rep, state_v, state_R, state_dv, grid, times, energy, sch, config, v0_l2, level, I0_idx, delta_next, lam, delta_this):
    """The inductive inequalities at one level, reported and never asserted."""
    eps = config.eps
    l2 = [math.sqrt(l2_sq(u)) for u in state_v]
    rep.add(f"v_L2_bound_q{level}", _sup_over(l2), 2 * v0_l2 - eps / (4 * math.pi) * math.sqrt(delta_this), "inductive", "inductive", level=level)
    rl1 = [0.0 if r is None else integral(pnorm(r)) for r in state_R]
    rep.add(f"R_L1_bound_q{level}", _sup_over(rl1), lam ** (-3 * config.zeta) * delta_next, "inductive", "inductive", level=level)
    c1 = []
    for u, du in zip(state_v, state_dv):
        c1.append(max(F.sup_norm(u), F.sup_norm(F.grad(grid, u)), F.sup_norm(du)))
    rep.add(f"v_C1_bound_q{level}", _sup_over(c1), lam**4, "inductive", "inductive", level=level, note="grid sup of value, space and time gradients")
    gaps = [energy.e(k) - l2_sq(state_v[k]) for k in I0_idx]
    d1 = sch.delta_1
    rep.add(f"energy_gap_upper_q{level}", _sup_over(gaps), delta_next * energy.eps1 / d1, "inductive", "inductive", level=level)
    rep.add(f"energy_gap_lower_q{level}", min(gaps), delta_next / (d1 * lam ** (config.zeta / 2)), "inductive", "inductive", relation=">=", level=level)
    rep.add(f"energy_gap_lower_quarter_q{level}", min(gaps), delta_next / (d1 * lam ** (config.zeta / 4)), "inductive", "inductive", relation=">=", level=level)
    return l2, rl1, gaps


def step(state: NSRState, energy: EnergyProfile, dset: DirectionSet, profiles: J.ProfileSet, config: ParameterConfig, *, cutoffs=None, ell=None, sigma=None, family=None):
    """One iteration (v_q, p_q, R_q) -> (v_{q+1}, p_{q+1}, R_{q+1}) with its diagnostics."""
    from .diagnostics import DiagnosticsReport
    from .params import schedule as make_schedule

    g = state.grid
    sch = state.schedule
    q = sch.q
    times = state.times
    rep = DiagnosticsReport()
    cutoffs = cutoffs or build_cutoffs(sch)
    inv = cutoffs.invariants(sch)
    for name, ok in inv.items():
        rep.add(f"cutoff_{name}", float(ok), 1.0, "support", "cutoffs", relation="==", level=q)
    for key, ok in chi_check().items():
        rep.add(key, float(ok), 1.0, "identity", "amplitudes", relation="==")
    for which, cut in (("eta", cutoffs.eta), ("eta_tilde", cutoffs.eta_tilde)):
        norms = cut.c_norms()
        for order, val in norms.items():
            rep.add(f"{which}_C{order}_norm", val, (2.0 / sch.s_q) ** (order * q) if q else (2.0 / sch.s_q1) ** order, "lemma", "cutoffs", note="constant taken as 1")

    if ell is None:
        ell = effective_ell(sch, g, state.dt)
    rep.add("mollifier_ell", ell, sch.ell, "info", "mollify", relation=">=", note="raised to resolve on the grid" if ell > sch.ell else "")
    moll = build_mollifier(g, state.dt, ell)

    active = [k for k in range(state.nt) if float(cutoffs.eta_tilde(times[k])) > 0.0]
    I0 = energy_interval(sch)
    I0_idx = [k for k in range(state.nt) if float(I0.lo) - 1e-12 <= times[k] <= float(I0.hi) + 1e-12]

    molled = mollify(state, moll, active)
    glued = glue(state, molled, cutoffs, active)
    amp = amplitudes(state, glued, energy, dset, cutoffs, active)

    if family is None:
        family = J.build_family(J.JetScales.from_schedule(sch), dset, profiles, g, sigma=sigma)

    dv_in = state.velocity_derivative()
    v_new, dv_new, p_new, R_new = list(state.v), list(dv_in), list(state.p), list(state.R)
    worst = {key: 0.0 for key in ("div_vtilde", "curl_curl", "div_wpc", "div_wt", "osc_identity", "trace_R", "div_v", "mean_p", "identity_linear", "identity_pointwise", "energy_decomposition", "defect")}
    traces = {}
    energy_dir = []
    pieces = {}
    for k in active:
        t = float(times[k])
        vt = glued.v_tilde[k]
        scale_g = max(F.sup_norm(F.grad(g, vt)), 1e-300)
        worst["div_vtilde"] = max(worst["div_vtilde"], F.sup_norm(F.div(g, vt)) / scale_g)
        worst["identity_linear"] = max(worst["identity_linear"], amp.identity_linear[k])
        worst["identity_pointwise"] = max(worst["identity_pointwise"], amp.identity_pointwise[k])
        pert = perturbation(g, amp, k, family, t)
        worst["curl_curl"] = max(worst["curl_curl"], pert.curlcurl_error)
        worst["div_wpc"] = max(worst["div_wpc"], pert.div_pc)
        worst["div_wt"] = max(worst["div_wt"], pert.div_t)
        st = new_stress(g, k, glued, amp, pert)
        worst["osc_identity"] = max(worst["osc_identity"], st.oscillation_identity)
        w = pert.w
        v1 = vt + w
        R1 = st.total()
        p1 = F.project_nonzero(g, glued.pi_ell[k] - st.p_lin - st.p_cor - st.p_osc)
        v_new[k], dv_new[k], p_new[k], R_new[k] = v1, glued.dv_tilde[k] + pert.dw, p1, R1
        nR = max(float(np.max(pnorm(R1))), 1e-300)
        worst["trace_R"] = max(worst["trace_R"], float(np.max(np.abs(ptrace(R1)))) / nR)
        worst["div_v"] = max(worst["div_v"], F.sup_norm(F.div(g, v1)) / max(F.sup_norm(F.grad(g, v1)), 1e-300))
        worst["mean_p"] = max(worst["mean_p"], abs(float(np.mean(p1))) / max(F.sup_norm(p1), 1e-300))
        worst["defect"] = max(worst["defect"], float(np.max(pnorm(st.defect))) / max(float(np.max(np.abs(amp.rho[k]))), 1e-300))
        # energy decomposition
        e = energy.e(k)
        wp, wct = pert.w_p, pert.w_c + pert.w_t
        kin_t, kin_p, kin1 = l2_sq(vt), l2_sq(wp), l2_sq(v1)
        G1 = e - kin_t - kin_p
        G2 = l2_sq(wct) + 2.0 * integral(np.sum(vt * w, axis=0))
        G3 = 2.0 * integral(np.sum(wp * wct, axis=0))
        lhs = e - kin1
        dec = abs(lhs - (G1 - G2 - G3)) / max(abs(e), kin_t, kin_p, kin1, 1e-300)
        worst["energy_decomposition"] = max(worst["energy_decomposition"], dec)
        rho_int = integral(amp.rho[k])
        kin_q = l2_sq(state.v[k])
        gap_dir = abs((kin1 - kin_q) - 3.0 * rho_int)
        slack = abs(kin_t - kin_q) + abs(kin_p - 3.0 * rho_int) + abs(G2) + abs(G3)
        energy_dir.append((gap_dir, slack))
        pieces[k] = {"G1": G1, "G2": G2, "G3": G3, "rho_int": rho_int, "kin_p": kin_p, "w_l2": math.sqrt(l2_sq(w)),
                     "wp_l2": math.sqrt(kin_p), "wc_l2": math.sqrt(l2_sq(pert.w_c)), "wt_l2": math.sqrt(l2_sq(pert.w_t)),
                     "a_l2": max(math.sqrt(integral(a * a)) for a in amp.a[k]),
                     "R_lin": integral(pnorm(st.R_lin)), "R_cor": integral(pnorm(st.R_cor)), "R_osc": integral(pnorm(st.R_osc)),
                     "R_com": integral(pnorm(st.R_com)), "R_loc": integral(pnorm(st.R_loc))}
        del pert, st

    # hard identities
    rep.add("glue_div_v_tilde", worst["div_vtilde"], 1e-9, "identity", "glue")
    rep.add("amplitude_identity_linear", worst["identity_linear"], 1e-9, "identity", "amplitudes")
    rep.add("amplitude_identity_pointwise", worst["identity_pointwise"], 1e-9, "identity", "amplitudes", note="rho Id - R_ell vs sum a^2 xi xi on samples")
    rep.add("perturbation_curl_curl", worst["curl_curl"], 1e-8, "identity", "perturbation")
    rep.add("perturbation_div_w_pc", worst["div_wpc"], 1e-9, "identity", "perturbation")
    rep.add("perturbation_div_w_t", worst["div_wt"], 1e-9, "identity", "perturbation")
    rep.add("oscillation_identity", worst["osc_identity"], 1e-7, "identity", "stress")
    rep.add("R_q1_traceless", worst["trace_R"], 1e-9, "identity", "stress", note="symmetric by packed storage")
    rep.add("R_q1_symmetric", 0.0, 1e-9, "identity", "stress", note="packed storage")
    rep.add("div_v_q1", worst["div_v"], 1e-9, "identity", "stress")
    rep.add("mean_p_q1", worst["mean_p"], 1e-9, "identity", "stress")
    rep.add("energy_decomposition", worst["energy_decomposition"], 1e-8, "identity", "energy")
    rep.add("truncation_defect_rel", worst["defect"], float("inf"), "info", "stress", note="absorbed into R_osc and p_osc")

    res = residual_check(g, v_new, p_new, R_new, state.dt, dv_dt=dv_new)
    rep.add("residual_linf", res.residual_linf, 1e-6, "identity", "residual")
    rep.add("residual_l2", res.residual_l2, 1e-6, "identity", "residual")

    # supports
    lo1, hi1 = float(sch.I_q1.lo), float(sch.I_q1.hi)
    bad_R = [k for k in range(state.nt) if R_new[k] is not None and np.any(R_new[k] != 0) and not (lo1 < times[k] < hi1)]
    bad_v = [k for k in range(state.nt) if v_new[k] is not state.v[k] and not (lo1 < times[k] < hi1)]
    rep.add("support_R_q1_in_I_q1", len(bad_R), 0, "support", "support", level=q + 1)
    rep.add("support_v_diff_in_I_q1", len(bad_v), 0, "support", "support", level=q + 1)
    inact = [k for k in range(state.nt) if k not in set(active)]
    rep.add("inactive_samples_unchanged", sum(1 for k in inact if v_new[k] is not state.v[k]), 0, "support", "support")

    # inductive inequalities
    v0 = state.v0_l2 if state.v0_l2 is not None else max(math.sqrt(l2_sq(u)) for u in state.v)
    _inductive_checks(rep, state.v, state.R, dv_in, g, times, energy, sch, config, v0, q, I0_idx, sch.delta_q1, sch.lambda_q, sch.delta_q)
    _inductive_checks(rep, v_new, R_new, dv_new, g, times, energy, sch, config, v0, q + 1, I0_idx, sch.delta_q2, sch.lambda_q1, sch.delta_q1)
    diffs = [math.sqrt(l2_sq(v_new[k] - state.v[k])) for k in active]
    rep.add("v_difference_L2", _sup_over(diffs), config.eps * math.sqrt(sch.delta_q1) / (math.sqrt(sch.delta_1) * 4 * math.pi), "inductive", "inductive", level=q + 1)

    # lemma-level bounds
    rb = [amp.rho_bar[k] for k in I0_idx]
    d1 = sch.delta_1
    rep.add("rho_bar_lower", min(rb), sch.delta_q1 / (d1 * 12 * VOL * sch.lambda_q ** (config.zeta / 2)), "lemma", "amplitudes", relation=">=")
    rep.add("rho_bar_upper", max(rb), sch.delta_q1 * energy.eps1 / (d1 * 3 * VOL), "lemma", "amplitudes")
    rep.add("quotient_R_over_rho", _sup_over([amp.quotient[k] for k in active]), 0.5, "lemma", "amplitudes")
    chis = [amp.chi_integral[k] for k in active]
    rep.add("chi_integral_lower", min(chis), VOL, "lemma", "amplitudes", relation=">=")
    rep.add("chi_integral_upper", max(chis), 2 * VOL, "lemma", "amplitudes")
    rep.add("rho_L1", _sup_over([pieces[k]["rho_int"] for k in active]), 16 * math.pi**3 * energy.eps1 * sch.delta_q1 / d1, "lemma", "amplitudes")
    rep.add("a_xi_L2", _sup_over([pieces[k]["a_l2"] for k in active]), math.sqrt(sch.delta_q1) / (2 * config.c0 * len(dset)) * config.eps / (4 * math.pi * math.sqrt(d1)), "lemma", "amplitudes")
    lam1 = sch.lambda_q1
    inter = [energy.e(k) - l2_sq(glued.v_tilde[k]) - pieces[k]["kin_p"] for k in I0_idx]
    rep.add("energy_intermediate_lower", min(inter), sch.delta_q2 / lam1 ** (config.zeta / 4), "lemma", "energy", relation=">=")
    rep.add("energy_intermediate_upper", max(inter), 2 * sch.delta_q2 / 3, "lemma", "energy")
    rep.add("energy_cross_G2", _sup_over([abs(pieces[k]["G2"]) for k in I0_idx]), sch.delta_q2 / lam1 ** (config.zeta / 3), "lemma", "energy")
    rep.add("energy_cross_G3", _sup_over([abs(pieces[k]["G3"]) for k in I0_idx]), sch.delta_q2 / lam1 ** (config.zeta / 3), "lemma", "energy")
    gap_d = _sup_over([a - b for a, b in energy_dir])
    rep.add("energy_direction_3rho", gap_d, 1e-9, "lemma", "energy", note="|d kinetic - 3 int rho| minus its predicted slack")
    moll_err = _sup_over([math.sqrt(l2_sq(molled.v_bar[k] - state.v[k])) for k in active])
    rep.add("mollification_L2_error", moll_err, ell * _sup_over([max(F.sup_norm(F.grad(g, state.v[k])), F.sup_norm(dv_in[k])) for k in active]) * math.sqrt(VOL) * 2, "lemma", "mollify")

    for k in range(state.nt):
        t = float(times[k])
        row = {
            "index": k,
            "t": t,
            "eta": float(cutoffs.eta(t)),
            "eta_tilde": float(cutoffs.eta_tilde(t)),
            "active": int(k in glued.v_tilde),
            "e": energy.e(k),
            "kinetic_q": l2_sq(state.v[k]),
            "kinetic_q1": l2_sq(v_new[k]),
            "R_q1_L1": 0.0 if R_new[k] is None else integral(pnorm(R_new[k])),
            "rho_bar": float(amp.rho_bar.get(k, 0.0)),
            "rho_int": float(pieces.get(k, {}).get("rho_int", 0.0)),
        }
        row["gap_q"] = row["e"] - row["kinetic_q"]
        row["gap_q1"] = row["e"] - row["kinetic_q1"]
        for name in ("wp_l2", "wc_l2", "wt_l2", "R_lin", "R_cor", "R_osc", "R_com", "R_loc"):
            row[name] = float(pieces.get(k, {}).get(name, 0.0))
        row["residual"] = next((r["linf"] for r in res.per_sample if r["index"] == k), 0.0)
        rep.traces.append(row)

    rep.meta = {
        "q": q,
        "n": g.n,
        "nt": state.nt,
        "ell": ell,
        "sigma": family.sigma,
        "truncation": [family.m_psi, family.m_phi],
        "placement_margin": family.placement_margin,
        "active_samples": active,
        "energy": energy.to_json(),
        "schedule": {k: v for k, v in sch.to_json().items()},
    }

    try:
        next_sched = make_schedule(config, q + 1)
    except Exception:  # noqa: BLE001
        next_sched = None
    new_state = NSRState(g, times, v_new, p_new, R_new, next_sched, q=q + 1, dv_dt=dv_new, v0_l2=v0)
    return StepResult(new_state, rep, family, ell, active, res)
