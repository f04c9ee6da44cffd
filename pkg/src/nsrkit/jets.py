"""Intermittent jets: profiles, band-limited realization on a grid, identities and scaling.

A jet in direction xi is W = xi psi_xi phi_xi, where psi_xi is a 1D profile
translating along xi at speed mu and phi_xi a 2D profile concentrated on thin
tubes parallel to xi. On a grid the profiles are realized by their Fourier
series on the profile torus, truncated to the modes the grid can carry and
renormalized so that the averages of psi^2 and phi^2 are exactly one.
Because every mode of W is an integer vector, W is a trigonometric polynomial
and all identities hold to round-off.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy import integrate, special

from . import field as F
from .geometry import DirectionSet

TWO_PI = 2.0 * math.pi


class UnderResolved(F.GridError):
    """The grid cannot carry the requested jets."""


class PlacementError(ValueError):
    """No disjoint placement of the tube families was found."""


# -- profiles -------------------------------------------------------------------------


@dataclass(frozen=True)
class ProfileSet:
    c_Phi: float
    c_psi: float
    funcs: dict = field(repr=False)

    def __getattr__(self, name):
        funcs = object.__getattribute__(self, "funcs")
        if name in funcs:
            return funcs[name]
        raise AttributeError(name)


def _compact(expr_fn):
    def wrapped(x):
        x = np.asarray(x, dtype=float)
        inside = np.abs(x) < 1.0
        xs = np.where(inside, x, 0.0)
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            val = np.asarray(expr_fn(xs), dtype=float) * np.ones_like(xs)
        return np.where(inside, np.nan_to_num(val, nan=0.0, posinf=0.0, neginf=0.0), 0.0)

    return wrapped


@lru_cache(maxsize=1)
def _symbolic_profiles():
    import sympy as sp

    r = sp.symbols("r", real=True)
    bump = sp.exp(-1 / (1 - r**2))
    d1 = sp.diff(bump, r)
    # radial Laplacian in the plane; f'/r simplifies to a smooth expression at r = 0
    lap = sp.diff(bump, r, 2) + sp.cancel(d1 / r)
    phi = sp.simplify(-lap)
    psi = d1
    exprs = {
        "Phi": bump,
        "dPhi": d1,
        "d2Phi": sp.diff(bump, r, 2),
        "phi": phi,
        "dphi": sp.diff(phi, r),
        "psi": psi,
        "dpsi": sp.diff(psi, r),
        "d2psi": sp.diff(psi, r, 2),
        "d3psi": sp.diff(psi, r, 3),
    }
    return {k: sp.lambdify(r, v, "numpy") for k, v in exprs.items()}


def make_profiles():
    """Normalized bump profiles: Phi, phi = -lap Phi (radial in the plane) and psi on the line."""
    raw = {k: _compact(f) for k, f in _symbolic_profiles().items()}
    opts = dict(epsabs=1e-15, epsrel=1e-13, limit=400)
    phi_sq, err1 = integrate.quad(lambda r: raw["phi"](r) ** 2 * r, 0.0, 1.0, **opts)
    psi_sq, err2 = integrate.quad(lambda y: raw["psi"](y) ** 2, -1.0, 1.0, **opts)
    if not (np.isfinite(phi_sq) and np.isfinite(psi_sq)) or err1 > 1e-10 * phi_sq or err2 > 1e-10 * psi_sq:
        raise ArithmeticError("profile normalization quadrature did not converge")
    # (1/4pi^2) * 2pi * int phi^2 r dr = 1 and (1/2pi) int psi^2 = 1
    c_Phi = math.sqrt(TWO_PI / phi_sq)
    c_psi = math.sqrt(TWO_PI / psi_sq)
    funcs = {}
    for k, f in raw.items():
        c = c_psi if k.endswith("psi") else c_Phi
        funcs[k] = (lambda g, cc: (lambda x: cc * g(x)))(f, c)
    return ProfileSet(c_Phi=c_Phi, c_psi=c_psi, funcs=funcs)


def profile_integrals(profiles: ProfileSet):
    """Quadrature values used by the profile invariants."""
    opts = dict(epsabs=1e-15, epsrel=1e-13, limit=400)
    with warnings.catch_warnings():
        # the first two integrals vanish, so the relative tolerance is unattainable
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        return _profile_integrals(profiles, opts)


def _profile_integrals(profiles, opts):
    return {
        "int_phi": TWO_PI * integrate.quad(lambda r: profiles.phi(r) * r, 0, 1, **opts)[0],
        "int_psi": integrate.quad(profiles.psi, -1, 1, **opts)[0],
        "phi_sq_avg": integrate.quad(lambda r: profiles.phi(r) ** 2 * r, 0, 1, **opts)[0] / TWO_PI,
        "psi_sq_avg": integrate.quad(lambda y: profiles.psi(y) ** 2, -1, 1, **opts)[0] / TWO_PI,
    }


# -- scales -----------------------------------------------------------------------------


@dataclass(frozen=True)
class JetScales:
    lam: float
    r_perp: float
    r_par: float
    mu: float

    @classmethod
    def from_lambda(cls, lam):
        return cls(
            lam=lam,
            r_perp=lam ** (-6 / 7) * TWO_PI ** (-1 / 7),
            r_par=lam ** (-4 / 7),
            mu=lam ** (9 / 7) * TWO_PI ** (1 / 7),
        )

    @classmethod
    def from_schedule(cls, sched):
        return cls(lam=sched.lambda_q1, r_perp=sched.r_perp, r_par=sched.r_par, mu=sched.mu)


def psi_sine_coefficients(profiles: ProfileSet, r_par, count):
    """b_m with psi_bar(y) = sum b_m sin(m y) for the periodized r_par-rescaled psi."""
    out = np.empty(count)
    for m in range(1, count + 1):
        w = m * r_par
        val, _ = integrate.quad(profiles.psi, 0.0, 1.0, weight="sin", wvar=w, epsabs=1e-16, limit=400)
        out[m - 1] = 2.0 / math.pi * math.sqrt(r_par) * val
    return out


def Phi_hat(profiles: ProfileSet, r_perp, kappa):
    """Fourier coefficient of the periodized r_perp-rescaled Phi at |m| = kappa."""
    f = lambda rho: profiles.Phi(rho) * special.j0(r_perp * kappa * rho) * rho  # noqa: E731
    val, _ = integrate.quad(f, 0.0, 1.0, epsabs=1e-16, epsrel=1e-13, limit=400)
    return r_perp / TWO_PI * val


def _disk_modes(M):
    return [(a, b) for a in range(-M, M + 1) for b in range(-M, M + 1) if a * a + b * b <= M * M]


def _frame_bandwidth(frame, sigma, m_psi, m_phi):
    nxi, nA, nC = frame
    disk = np.array(_disk_modes(m_phi))
    trans = np.abs(disk[:, :1] * nA[None, :] + disk[:, 1:] * nC[None, :]).max(axis=0)
    return int(np.max(sigma * (m_psi * np.abs(nxi) + trans)))


def choose_truncation(dset: DirectionSet, sigma, n, cap=12):
    """Largest (m_psi, m_phi) such that every W has bandwidth < n/2."""
    frames = [d.integer_frame(dset.n_star) for d in dset.directions]
    limit = n // 2 - 1
    best = None
    for mp, mf in itertools.product(range(1, cap + 1), repeat=2):
        bw = max(_frame_bandwidth(fr, sigma, mp, mf) for fr in frames)
        if bw <= limit:
            key = (min(mp, mf), mf, mp)
            if best is None or key > best[0]:
                best = (key, mp, mf)
    if best is None:
        need = max(_frame_bandwidth(fr, sigma, 1, 1) for fr in frames)
        raise UnderResolved(f"under-resolution: jets need bandwidth {need} but the grid carries at most {limit} (n={n})")
    return best[1], best[2]


# -- shifts --------------------------------------------------------------------------------


def _frac_gcd(values):
    vals = [abs(v) for v in values if v != 0]
    if not vals:
        return Fraction(0)
    den = 1
    for v in vals:
        den = den * v.denominator // math.gcd(den, v.denominator)
    g = 0
    for v in vals:
        g = math.gcd(g, int(v * den))
    return Fraction(g, den)


def _pair_geometry(d1, d2):
    w = (
        d1.xi[1] * d2.xi[2] - d1.xi[2] * d2.xi[1],
        d1.xi[2] * d2.xi[0] - d1.xi[0] * d2.xi[2],
        d1.xi[0] * d2.xi[1] - d1.xi[1] * d2.xi[0],
    )
    dot = lambda u, v: sum(a * b for a, b in zip(u, v))  # noqa: E731
    g = _frac_gcd([dot(d1.A, w), dot(d1.cross, w), dot(d2.A, w), dot(d2.cross, w)])
    norm_w = math.sqrt(float(dot(w, w)))
    return np.array([float(x) for x in w]), float(g), norm_w


def tube_separation(d1, d2, beta1, beta2):
    """Distance between the tube axes of two families, in units of 2 pi / K."""
    w, g, norm_w = _pair_geometry(d1, d2)
    off = float(np.dot(np.asarray(beta1) - np.asarray(beta2), w))
    if g == 0:
        return abs(off) / norm_w
    r = off % g
    return min(r, g - r) / norm_w


def place_shifts(dset: DirectionSet, r_perp, grid_q=8):
    """Greedy placement of the offsets beta_xi (alpha_xi = 2 pi beta_xi / K).

    Tubes of radius r_perp / K are disjoint when the axis separation exceeds
    2 r_perp / K, i.e. r_perp / pi in the units returned by ``tube_separation``.
    """
    need = r_perp / math.pi
    cands = [np.array(c) / grid_q for c in itertools.product(range(grid_q), repeat=3)]
    placed = []
    margins = []
    for k, d in enumerate(dset.directions):
        for c in cands:
            seps = [tube_separation(d, dset.directions[j], c, placed[j]) for j in range(len(placed))]
            if all(s > need for s in seps):
                placed.append(c)
                if seps:
                    margins.append(min(seps) / need)
                break
        else:
            raise PlacementError(f"r_perp too large: no disjoint placement for direction {k} (r_perp={r_perp:.4g})")
    return placed, (min(margins) if margins else math.inf)


# -- the band-limited family ----------------------------------------------------------------


@dataclass
class JetFamily:
    grid: F.Grid
    dset: DirectionSet
    profiles: ProfileSet
    scales: JetScales
    lam: float
    r_perp: float
    r_par: float
    mu: float
    sigma: int
    K: int
    n_star: int
    r_perp_raw: float
    m_psi: int
    m_phi: int
    psi_coeffs: np.ndarray
    phi_modes: list
    shifts: list
    placement_margin: float
    psi_energy_fraction: float
    phi_energy_fraction: float
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def omega(self):
        """Temporal frequency of the unit psi mode, K mu."""
        return self.K * self.mu

    @property
    def potential_scale(self):
        return 1.0 / (self.n_star**2 * self.lam**2)

    def __len__(self):
        return len(self.dset.directions)

    def xi(self, i):
        return self.dset.directions[i].as_float()[0]

    def _phases(self, i):
        key = ("phase", i)
        if key not in self._cache:
            n = self.grid.n
            nxi, nA, nC = self.dset.directions[i].integer_frame(self.n_star)
            idx = np.arange(n)
            beta = self.shifts[i]
            A, C = self.dset.directions[i].as_float()[1:]

            def phase(vec, offset):
                ints = (self.sigma * (vec[0] * idx[:, None, None] + vec[1] * idx[None, :, None] + vec[2] * idx[None, None, :])) % n
                return TWO_PI * ints / n - offset

            th0 = phase(nxi, 0.0)
            th1 = phase(nA, TWO_PI * float(np.dot(beta, A)))
            th2 = phase(nC, TWO_PI * float(np.dot(beta, C)))
            self._cache[key] = (th0, th1, th2)
        return self._cache[key]

    def _time_phase(self, t):
        return math.fmod(self.omega * t, TWO_PI)

    def psi(self, i, t):
        th0 = self._phases(i)[0] + self._time_phase(t)
        return sum(b * np.sin((m + 1) * th0) for m, b in enumerate(self.psi_coeffs))

    def dpsi_dt(self, i, t):
        th0 = self._phases(i)[0] + self._time_phase(t)
        return sum(b * (m + 1) * self.omega * np.cos((m + 1) * th0) for m, b in enumerate(self.psi_coeffs))

    def _transverse(self, i, which):
        key = (which, i)
        if key not in self._cache:
            _, th1, th2 = self._phases(i)
            col = 2 if which == "Phi" else 3
            acc = np.zeros(self.grid.shape)
            for mode in self.phi_modes:
                if mode[col] != 0.0:
                    acc += mode[col] * np.cos(mode[0] * th1 + mode[1] * th2)
            self._cache[key] = acc
        return self._cache[key]

    def Phi(self, i):
        return self._transverse(i, "Phi")

    def phi(self, i):
        return self._transverse(i, "phi")

    def scalar_w(self, i, t):
        return self.psi(i, t) * self.phi(i)

    def w(self, i, t):
        return self.xi(i)[:, None, None, None] * self.scalar_w(i, t)

    def dw_dt(self, i, t):
        return self.xi(i)[:, None, None, None] * (self.dpsi_dt(i, t) * self.phi(i))

    def v(self, i, t):
        return self.potential_scale * self.xi(i)[:, None, None, None] * (self.psi(i, t) * self.Phi(i))

    def dv_dt(self, i, t):
        return self.potential_scale * self.xi(i)[:, None, None, None] * (self.dpsi_dt(i, t) * self.Phi(i))

    def _wc_from(self, psi_like, i):
        g = self.grid
        grad_psi = F.grad(g, psi_like)
        curl_phi_xi = np.cross(F.grad(g, self.Phi(i)), self.xi(i)[:, None, None, None], axis=0)
        return self.potential_scale * np.cross(grad_psi, curl_phi_xi, axis=0)

    def wc(self, i, t):
        return self._wc_from(self.psi(i, t), i)

    def dwc_dt(self, i, t):
        return self._wc_from(self.dpsi_dt(i, t), i)

    def flux(self, i, t):
        """phi^2 psi^2 (dealiased)."""
        s = self.scalar_w(i, t)
        return F.product(self.grid, s, s)

    def dflux_dt(self, i, t):
        return 2.0 * F.product(self.grid, self.scalar_w(i, t), self.dpsi_dt(i, t) * self.phi(i))

    def wt(self, i, t):
        g = self.grid
        field_ = self.xi(i)[:, None, None, None] * F.project_nonzero(g, self.flux(i, t))
        return -F.helmholtz(g, field_) / self.mu

    def support_indicator(self, i):
        """Grid indicator of the support of the exact (untruncated) Phi_xi."""
        _, th1, th2 = self._phases(i)
        w1 = np.mod(th1 + math.pi, TWO_PI) - math.pi
        w2 = np.mod(th2 + math.pi, TWO_PI) - math.pi
        return (w1**2 + w2**2) < self.r_perp**2

    def Phi_exact(self, i):
        """The exact compactly supported Phi_xi sampled on the grid."""
        _, th1, th2 = self._phases(i)
        w1 = np.mod(th1 + math.pi, TWO_PI) - math.pi
        w2 = np.mod(th2 + math.pi, TWO_PI) - math.pi
        rho = np.sqrt(w1**2 + w2**2) / self.r_perp
        return self.profiles.Phi(rho) / self.r_perp

    def describe(self):
        return {
            "lambda": self.lam,
            "sigma": self.sigma,
            "K": self.K,
            "n_star": self.n_star,
            "r_perp": self.r_perp,
            "r_perp_unsnapped": self.r_perp_raw,
            "r_par": self.r_par,
            "mu": self.mu,
            "m_psi": self.m_psi,
            "m_phi": self.m_phi,
            "psi_energy_fraction": self.psi_energy_fraction,
            "phi_energy_fraction": self.phi_energy_fraction,
            "placement_margin": self.placement_margin,
            "shifts": [[float(x) for x in b] for b in self.shifts],
        }


def snap_sigma(lam, r_perp):
    raw = lam * r_perp
    return max(2, int(round(raw)))


def build_family(scales, dset: DirectionSet, profiles: ProfileSet, grid: F.Grid, sigma=None, truncation=None):
    """Band-limited jets on ``grid`` for the given scales.

    sigma = lambda r_perp is snapped to an integer >= 2 and r_perp is reset to
    sigma / lambda, so that K = n_star sigma is an integer.
    """
    if not isinstance(scales, JetScales):
        scales = JetScales.from_schedule(scales)
    lam = scales.lam
    if sigma is None:
        sigma = snap_sigma(lam, scales.r_perp)
    sigma = int(sigma)
    if sigma < 2:
        raise UnderResolved("sigma must be >= 2")
    r_perp = sigma / lam
    if not (0 < r_perp < 1 and 0 < scales.r_par < 1):
        raise UnderResolved(f"profile radii out of range: r_perp={r_perp:.4g}, r_par={scales.r_par:.4g}")
    n_star = dset.n_star
    m_psi, m_phi = truncation if truncation is not None else choose_truncation(dset, sigma, grid.n)
    for d in dset.directions:
        bw = _frame_bandwidth(d.integer_frame(n_star), sigma, m_psi, m_phi)
        if bw >= grid.n // 2:
            raise UnderResolved(f"under-resolution: bandwidth {bw} >= n/2 = {grid.n // 2}")
    b = psi_sine_coefficients(profiles, scales.r_par, m_psi)
    psi_frac = float(np.sum(b**2) / 2.0)
    b = b / math.sqrt(psi_frac)
    modes = []
    cache = {}
    for m1, m2 in _disk_modes(m_phi):
        k2 = m1 * m1 + m2 * m2
        if k2 not in cache:
            ph = Phi_hat(profiles, r_perp, math.sqrt(k2))
            cache[k2] = (ph, r_perp**2 * k2 * ph)
        modes.append([m1, m2, *cache[k2]])
    phi_frac = float(sum(m[3] ** 2 for m in modes))
    scale = 1.0 / math.sqrt(phi_frac)
    for m in modes:
        m[2] *= scale
        m[3] *= scale
    shifts, margin = place_shifts(dset, r_perp)
    return JetFamily(
        grid=grid,
        dset=dset,
        profiles=profiles,
        scales=scales,
        lam=lam,
        r_perp=r_perp,
        r_par=scales.r_par,
        mu=scales.mu,
        sigma=sigma,
        K=n_star * sigma,
        n_star=n_star,
        r_perp_raw=scales.r_perp,
        m_psi=m_psi,
        m_phi=m_phi,
        psi_coeffs=b,
        phi_modes=[tuple(m) for m in modes],
        shifts=shifts,
        placement_margin=margin,
        psi_energy_fraction=psi_frac,
        phi_energy_fraction=phi_frac,
    )


def jet_w(family, i, t):
    return family.w(i, t)


def jet_v(family, i, t):
    return family.v(i, t)


def jet_wc(family, i, t):
    return family.wc(i, t)


def jet_wt(family, i, t):
    return family.wt(i, t)


# -- identity checks ----------------------------------------------------------------------


def _rel(num, den):
    return float(num / den) if den > 0 else float(num)


def verify_family(family: JetFamily, t=0.0, directions=None):
    """Evaluate every jet identity; returns per-direction errors and pairwise overlap data.

    Quadratic identities are checked on exact samples: W has bandwidth below
    n/2, so spectral derivatives of W are exact and pointwise products of
    samples are samples of the true products.
    """
    g = family.grid
    out = {"directions": [], "pairs": []}
    idxs = range(len(family)) if directions is None else directions
    indicators = {}
    vol = float(np.prod(g.shape))
    for i in idxs:
        xi = family.xi(i)
        psi = family.psi(i, t)
        dpsi = family.dpsi_dt(i, t)
        phi = family.phi(i)
        s = psi * phi
        W = xi[:, None, None, None] * s
        Wc = family.wc(i, t)
        V = family.v(i, t)
        mean_ww = np.tensordot(W, W, axes=([1, 2, 3], [1, 2, 3])) / vol
        gradW = F.grad(g, W)
        divW = F.div(g, W)
        grad_w = F.sup_norm(gradW)
        div_total = F.sup_norm(F.div(g, W + Wc))
        curlcurl = F.curl(g, F.curl(g, V))
        lhs = np.einsum("ij...,j...->i...", gradW, W) + W * divW
        rhs = xi[:, None, None, None] * (2.0 * psi * dpsi * phi * phi) / family.mu
        Wt = family.wt(i, t)
        fub = {}
        for p in (1, 2):
            joint = F.lp_norm(g, s * s, p, average=True)
            sep = F.lp_norm(g, phi * phi, p, average=True) * F.lp_norm(g, psi * psi, p, average=True)
            fub[p] = abs(joint - sep) / sep
        out["directions"].append(
            {
                "index": i,
                "mean_ww_error": float(np.max(np.abs(mean_ww - np.outer(xi, xi)))),
                "l2_avg": F.lp_norm(g, W, 2, average=True),
                "mean_w": float(np.max(np.abs(F.mean(g, W)))),
                "div_w_plus_wc": _rel(div_total, grad_w),
                "curl_curl": _rel(F.sup_norm(W + Wc - curlcurl), F.sup_norm(W)),
                "flux_identity": _rel(F.sup_norm(lhs - rhs), F.sup_norm(lhs)),
                "div_wt": _rel(F.sup_norm(F.div(g, Wt)), max(F.sup_norm(Wt), 1e-300)),
                "mean_wt": float(np.max(np.abs(F.mean(g, Wt)))),
                "sublattice_leak": F.sublattice_leak(g, W, family.sigma),
                "fubini_l1": fub[1],
                "fubini_l2": fub[2],
            }
        )
        indicators[i] = family.support_indicator(i)
    keys = list(indicators)
    ws = {i: family.scalar_w(i, t) for i in keys}
    for a, b in itertools.combinations(keys, 2):
        overlap = int(np.count_nonzero(indicators[a] & indicators[b]))
        prod = float(np.max(np.abs(ws[a] * ws[b])) / (np.max(np.abs(ws[a])) * np.max(np.abs(ws[b]))))
        out["pairs"].append({"pair": [a, b], "support_overlap_points": overlap, "truncated_overlap": prod})
    out["support_points"] = {int(i): int(np.count_nonzero(indicators[i])) for i in keys}
    out["family"] = family.describe()
    return out


# -- scaling of the untruncated jets ---------------------------------------------------------


def _gl(nodes, a, b):
    x, w = np.polynomial.legendre.leggauss(nodes)
    return 0.5 * (b - a) * x + 0.5 * (b + a), 0.5 * (b - a) * w


def _jet_frame_norms(profiles: ProfileSet, scales: JetScales, n_star, p_list, nodes=400):
    """Average L^p norms of the exact jets, computed on the profile torus.

    The map x -> (profile coordinates) is measure preserving, so averages over
    the box equal averages over the profile torus; radial symmetry reduces the
    transverse integral to one dimension.
    """
    lam, rp, rl, mu = scales.lam, scales.r_perp, scales.r_par, scales.mu
    K = n_star * lam * rp
    y, wy = _gl(nodes, -rl, rl)
    rho, wr = _gl(nodes, 0.0, rp)
    u = y / rl
    s = rho / rp
    psi0 = profiles.psi(u) * rl**-0.5
    dpsi = profiles.dpsi(u) * rl**-1.5
    d2psi = profiles.d2psi(u) * rl**-2.5
    d3psi = profiles.d3psi(u) * rl**-3.5
    Phi0 = profiles.Phi(s) / rp
    dPhi = profiles.dPhi(s) / rp**2
    d2Phi = profiles.d2Phi(s) / rp**3
    with np.errstate(divide="ignore", invalid="ignore"):
        dPhi_over = np.where(s > 0, profiles.dPhi(s) / np.where(s > 0, s, 1.0), 0.0) / rp**3
    phi0 = profiles.phi(s) / rp
    dphi = profiles.dphi(s) / rp**2
    hess_phi = np.sqrt(d2Phi**2 + dPhi_over**2)
    P = lambda a: a[:, None]  # noqa: E731
    Q = lambda a: a[None, :]  # noqa: E731
    pot = 1.0 / (n_star**2 * lam**2)
    fields = {
        ("W", 0, 0): P(psi0) * Q(phi0),
        ("W", 1, 0): K * np.sqrt(P(dpsi) ** 2 * Q(phi0) ** 2 + P(psi0) ** 2 * Q(dphi) ** 2),
        ("W", 0, 1): K * mu * P(dpsi) * Q(phi0),
        ("W", 1, 1): K * K * mu * np.sqrt(P(d2psi) ** 2 * Q(phi0) ** 2 + P(dpsi) ** 2 * Q(dphi) ** 2),
        ("Wc", 0, 0): rp**2 * P(dpsi) * Q(dPhi),
        ("Wc", 1, 0): K * rp**2 * np.sqrt(P(d2psi) ** 2 * Q(dPhi) ** 2 + P(dpsi) ** 2 * Q(hess_phi) ** 2),
        ("Wc", 0, 1): K * mu * rp**2 * P(d2psi) * Q(dPhi),
        ("Wc", 1, 1): K * K * mu * rp**2 * np.sqrt(P(d3psi) ** 2 * Q(dPhi) ** 2 + P(d2psi) ** 2 * Q(hess_phi) ** 2),
        ("V", 0, 0): pot * P(psi0) * Q(Phi0),
        ("V", 1, 0): pot * K * np.sqrt(P(dpsi) ** 2 * Q(Phi0) ** 2 + P(psi0) ** 2 * Q(dPhi) ** 2),
        ("V", 0, 1): pot * K * mu * P(dpsi) * Q(Phi0),
        ("V", 1, 1): pot * K * K * mu * np.sqrt(P(d2psi) ** 2 * Q(Phi0) ** 2 + P(dpsi) ** 2 * Q(dPhi) ** 2),
    }
    # profile-torus measure: dy/(2pi) on the line, 2 pi rho d rho/(4 pi^2) in the plane
    weight = P(wy / TWO_PI) * Q(wr * rho / TWO_PI)
    line = {
        ("psi", 0, 0): psi0,
        ("psi", 1, 0): K * np.abs(dpsi),
        ("psi", 0, 1): K * mu * np.abs(dpsi),
    }
    plane = {
        ("phi", 0, 0): phi0,
        ("phi", 1, 0): K * np.abs(dphi),
    }
    out = {}
    for p in p_list:
        for key, val in line.items():
            out[key + (p,)] = float(np.sum(wy / TWO_PI * np.abs(val) ** p) ** (1.0 / p))
        for key, val in plane.items():
            out[key + (p,)] = float(np.sum(wr * rho / TWO_PI * np.abs(val) ** p) ** (1.0 / p))
        for key, val in fields.items():
            out[key + (p,)] = float(np.sum(weight * np.abs(val) ** p) ** (1.0 / p))
    return out


def predicted_exponent(name, N, M, p):
    """Exponent of lambda in the jet estimates after substituting the scale laws."""
    rp, rl, mu = -6.0 / 7.0, -4.0 / 7.0, 9.0 / 7.0
    base = (2.0 / p - 1.0) * rp + (1.0 / p - 0.5) * rl
    time = (rp + 1.0 + mu - rl) * M
    if name == "W":
        return base + N + time
    if name == "Wc":
        return base + (rp - rl) + N + time
    if name == "V":
        return base - 2.0 + N + time
    if name == "psi":
        return (1.0 / p - 0.5) * rl + (rp + 1.0 - rl) * N + time
    if name == "phi":
        return (2.0 / p - 1.0) * rp + N
    raise KeyError(name)


@dataclass
class ExponentFit:
    rows: list
    fits: list

    def to_json(self):
        return {"fits": self.fits}

    def csv_lines(self):
        head = "field,N,M,p,lambda,measured,predicted_exponent,fitted_exponent"
        fit_map = {(f["field"], f["N"], f["M"], f["p"]): f for f in self.fits}
        lines = [head]
        for r in self.rows:
            f = fit_map[(r["field"], r["N"], r["M"], r["p"])]
            lines.append(
                f"{r['field']},{r['N']},{r['M']},{r['p']:g},{r['lambda']:.17g},{r['measured']:.17g},"
                f"{f['predicted_exponent']:.17g},{f['fitted_exponent']:.17g}"
            )
        return lines


def exponent_ok(fitted, predicted, rel=0.05, abs_zero=0.02):
    if predicted == 0:
        return abs(fitted) <= abs_zero
    return abs(fitted - predicted) <= rel * abs(predicted)


def scaling_report(profiles: ProfileSet, dset: DirectionSet, lambda_sweep, p_list=(1, 2), nodes=400):
    """Log-log fits of the jet norms against lambda."""
    usable = []
    skipped = []
    for lam in lambda_sweep:
        sc = JetScales.from_lambda(float(lam))
        if 0 < sc.r_perp < sc.r_par < 1:
            usable.append(sc)
        else:
            skipped.append(float(lam))
    if len(usable) < 2:
        raise ValueError("degenerate fit: fewer than two usable sweep points")
    measured = [_jet_frame_norms(profiles, sc, dset.n_star, p_list, nodes) for sc in usable]
    rows, fits = [], []
    logl = np.log([sc.lam for sc in usable])
    for key in measured[0]:
        name, N, M, p = key
        vals = np.array([m[key] for m in measured])
        slope = float(np.polyfit(logl, np.log(vals), 1)[0])
        pred = predicted_exponent(name, N, M, p)
        fits.append(
            {
                "field": name,
                "N": N,
                "M": M,
                "p": p,
                "predicted_exponent": pred,
                "fitted_exponent": slope,
                "ok": bool(exponent_ok(slope, pred)),
            }
        )
        for sc, v in zip(usable, vals):
            rows.append({"field": name, "N": N, "M": M, "p": p, "lambda": sc.lam, "measured": float(v)})
    rep = ExponentFit(rows=rows, fits=fits)
    rep.skipped = skipped
    return rep
