"""Pseudo-spectral calculus on the periodic box [0, 2pi)^3.

Fields are real-space numpy arrays sampled on an n^3 grid. Leading axes are
components: a scalar has shape (n, n, n), a vector (3, n, n, n) and a
symmetric tensor (3, 3, n, n, n). Spectral work goes through ``Grid``.

Every derivative output has its Nyquist modes removed, so the operators act
on the Nyquist-free band |k_i| < n/2. Products go through ``product``, which
evaluates on a 3/2-padded grid and truncates back; for Nyquist-free inputs the
result is the exact truncation of the true product.
"""

from __future__ import annotations

import itertools
import math
import struct
from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

TWO_PI = 2.0 * np.pi
AXES = (-3, -2, -1)


class GridError(ValueError):
    """Raised for malformed grids or mismatched field shapes."""


class HypothesisError(ValueError):
    """Raised when the input violates a lemma's hypothesis."""


class Grid:
    """Uniform periodic grid with cached wavenumbers."""

    def __init__(self, n: int):
        if n < 8 or n & (n - 1):
            raise GridError(f"n must be a power of two >= 8, got {n}")
        self.n = n
        self.shape = (n, n, n)
        self.dx = TWO_PI / n
        self.volume = TWO_PI**3
        k = np.fft.fftfreq(n, 1.0 / n)
        kr = np.fft.rfftfreq(n, 1.0 / n)
        nyq = n // 2
        self.k_raw = (k[:, None, None], k[None, :, None], kr[None, None, :])
        self.k = tuple(np.where(np.abs(kk) == nyq, 0.0, kk) for kk in self.k_raw)
        kx, ky, kz = self.k
        self.k2 = kx**2 + ky**2 + kz**2
        self.mask = (
            (np.abs(self.k_raw[0]) < nyq) & (np.abs(self.k_raw[1]) < nyq) & (np.abs(self.k_raw[2]) < nyq)
        ).astype(float)
        self.inv_k2 = np.where(self.k2 > 0, 1.0 / np.where(self.k2 > 0, self.k2, 1.0), 0.0)
        # rfft halves the last axis; these weights count each stored mode's conjugate twin
        w = np.full(kr.shape, 2.0)
        w[0] = 1.0
        w[-1] = 1.0
        self.parseval_weight = w[None, None, :]
        self.pad_n = 3 * n // 2

    def __eq__(self, other):
        return isinstance(other, Grid) and other.n == self.n

    def __hash__(self):
        return hash(("Grid", self.n))

    def __repr__(self):
        return f"Grid(n={self.n})"

    def coords(self):
        x = np.arange(self.n) * self.dx
        return np.meshgrid(x, x, x, indexing="ij")

    def check(self, f):
        if f.shape[-3:] != self.shape:
            raise GridError(f"field shape {f.shape} does not match grid {self.shape}")

    def fft(self, f):
        self.check(f)
        return sfft.rfftn(f, axes=AXES)

    def ifft(self, fh, n=None):
        n = self.n if n is None else n
        return sfft.irfftn(fh, s=(n, n, n), axes=AXES)

    # -- padding and truncation between the n-grid and an m-grid -------------------

    def _resize(self, fh, m):
        """Copy Nyquist-free modes of an n-grid spectrum into an m-grid spectrum."""
        n = self.n
        h = n // 2
        out = np.zeros(fh.shape[:-3] + (m, m, m // 2 + 1), dtype=complex)
        lo = slice(0, h)
        src_neg = slice(n - h + 1, n)
        dst_neg = slice(m - h + 1, m)
        for sx, dx in ((lo, lo), (src_neg, dst_neg)):
            for sy, dy in ((lo, lo), (src_neg, dst_neg)):
                out[..., dx, dy, :h] = fh[..., sx, sy, :h]
        return out * (m / n) ** 3

    def _shrink(self, Fh, m):
        n = self.n
        h = n // 2
        out = np.zeros(Fh.shape[:-3] + (n, n, n // 2 + 1), dtype=complex)
        lo = slice(0, h)
        src_neg = slice(m - h + 1, m)
        dst_neg = slice(n - h + 1, n)
        for dx, sx in ((lo, lo), (dst_neg, src_neg)):
            for dy, sy in ((lo, lo), (dst_neg, src_neg)):
                out[..., dx, dy, :h] = Fh[..., sx, sy, :h]
        return out * (n / m) ** 3

    def pad(self, f, m=None):
        """Spectral interpolation of a field onto an m^3 grid (default 3n/2)."""
        m = self.pad_n if m is None else m
        return self.ifft(self._resize(self.fft(f), m), n=m)

    def unpad(self, F):
        """Truncate an m^3-grid field to the Nyquist-free band of this grid."""
        m = F.shape[-1]
        return self.ifft(self._shrink(sfft.rfftn(F, axes=AXES), m))


def _require_same(grid, *fields):
    for f in fields:
        grid.check(f)


def truncate(grid: Grid, f):
    """Remove Nyquist content."""
    return grid.ifft(grid.fft(f) * grid.mask)


def mean(grid: Grid, f):
    grid.check(f)
    return f.mean(axis=AXES)


def product(grid: Grid, a, b):
    """Dealiased pointwise product with numpy broadcasting over component axes."""
    _require_same(grid, a, b)
    return grid.unpad(grid.pad(a) * grid.pad(b))


def outer(grid: Grid, u, v):
    """Dealiased u (x) v for vector fields u, v."""
    return product(grid, u[:, None], v[None, :])


def dot(grid: Grid, u, v):
    """Dealiased u . v, summed over the leading component axis."""
    return product(grid, u, v).sum(axis=0)


def traceless(S):
    tr = np.trace(S, axis1=0, axis2=1)
    out = S.copy()
    for i in range(3):
        out[i, i] -= tr / 3.0
    return out


def trace(S):
    return np.trace(S, axis1=0, axis2=1)


def symmetrize(S):
    return 0.5 * (S + S.swapaxes(0, 1))


SYM_INDEX = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))


def sym_pack(S):
    """Full (3, 3, ...) symmetric tensor to its 6 independent components."""
    return np.stack([S[i, j] for i, j in SYM_INDEX])


def sym_unpack(P):
    S = np.empty((3, 3) + P.shape[1:], dtype=P.dtype)
    for c, (i, j) in enumerate(SYM_INDEX):
        S[i, j] = P[c]
        S[j, i] = P[c]
    return S


# -- differential operators ---------------------------------------------------------


def _ik(grid, j):
    return 1j * grid.k[j]


def grad(grid: Grid, f):
    """Gradient; for a vector field returns out[i, j] = d_j f_i."""
    fh = grid.fft(f)
    return np.stack([grid.ifft(_ik(grid, j) * fh * grid.mask) for j in range(3)], axis=f.ndim - 3)


def partial(grid: Grid, f, j):
    return grid.ifft(_ik(grid, j) * grid.fft(f) * grid.mask)


def div(grid: Grid, v):
    vh = grid.fft(v)
    return grid.ifft(sum(_ik(grid, j) * vh[j] for j in range(3)) * grid.mask)


def div_tensor(grid: Grid, S):
    """(div S)_i = sum_j d_j S_ij."""
    Sh = grid.fft(S)
    return grid.ifft(np.stack([sum(_ik(grid, j) * Sh[i, j] for j in range(3)) for i in range(3)]) * grid.mask)


def curl(grid: Grid, v):
    vh = grid.fft(v)
    k = [_ik(grid, j) for j in range(3)]
    ch = np.stack(
        [
            k[1] * vh[2] - k[2] * vh[1],
            k[2] * vh[0] - k[0] * vh[2],
            k[0] * vh[1] - k[1] * vh[0],
        ]
    )
    return grid.ifft(ch * grid.mask)


def laplacian(grid: Grid, f):
    return grid.ifft(-grid.k2 * grid.fft(f) * grid.mask)


def project_nonzero(grid: Grid, f):
    """Remove the mean of each component."""
    m = mean(grid, f)
    return f - np.asarray(m)[(...,) + (None,) * 3]


def inv_laplacian(grid: Grid, f, tol=1e-12):
    m = np.max(np.abs(mean(grid, f)))
    scale = np.max(np.abs(f)) if f.size else 0.0
    if m > tol * max(scale, 1e-300) and m > 0:
        raise HypothesisError(f"inv_laplacian needs a zero-mean input (mean {m:.3e})")
    return grid.ifft(-grid.inv_k2 * grid.fft(f))


def _helmholtz_hat(grid, vh):
    kdotv = sum(grid.k[j] * vh[j] for j in range(3)) * grid.inv_k2
    return np.stack([vh[i] - grid.k[i] * kdotv for i in range(3)])


def helmholtz(grid: Grid, v):
    """Leray projection onto divergence-free fields; the mean passes through."""
    return grid.ifft(_helmholtz_hat(grid, grid.fft(v)))


def reynolds(grid: Grid, v):
    """Symmetric traceless right inverse of the divergence (mean removed first)."""
    vh = grid.fft(v) * grid.mask
    uh = -vh * grid.inv_k2  # inverse Laplacian, kills the mean
    ph = _helmholtz_hat(grid, uh)
    ik = [_ik(grid, j) for j in range(3)]
    divu = sum(ik[j] * uh[j] for j in range(3))
    m = 0.25 * ph + 0.75 * uh
    packed = []
    for i, j in SYM_INDEX:
        val = ik[j] * m[i] + ik[i] * m[j]
        if i == j:
            val = val - 0.5 * divu
        packed.append(val)
    return sym_unpack(grid.ifft(np.stack(packed)))


def pressure_from_velocity(grid: Grid, v):
    """Zero-mean p with -lap p = div div(v (x) v)."""
    M = outer(grid, v, v)
    Mh = grid.fft(M)
    dd = sum(grid.k[i] * grid.k[j] * Mh[i, j] for i in range(3) for j in range(3))
    return grid.ifft(-dd * grid.inv_k2 * grid.mask)


def inv_abs_grad(grid: Grid, f):
    """|grad|^{-1} f, with the mean dropped."""
    return grid.ifft(grid.fft(f) * np.sqrt(grid.inv_k2))


# -- norms --------------------------------------------------------------------------


def magnitude(f, ncomp_axes=None):
    """Pointwise Euclidean (Frobenius) magnitude over leading component axes."""
    extra = f.ndim - 3 if ncomp_axes is None else ncomp_axes
    if extra == 0:
        return np.abs(f)
    return np.sqrt(np.sum(f**2, axis=tuple(range(extra))))


def lp_norm(grid: Grid, f, p, average=False):
    """L^p norm by uniform-grid quadrature; p = inf uses a 2x refined grid.

    A leading time axis is allowed when ``f.ndim`` exceeds the component
    layout; pass a list of samples to take the sup over time.
    """
    if isinstance(f, (list, tuple)):
        return max(lp_norm(grid, g, p, average) for g in f)
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    grid.check(f)
    if math.isinf(p):
        return float(np.max(magnitude(grid.pad(f, 2 * grid.n)))) if f.size else 0.0
    m = magnitude(f)
    avg = np.mean(m**p)
    if not average:
        avg = avg * grid.volume
    return float(avg ** (1.0 / p))


def sup_norm(f):
    """Grid maximum of the pointwise magnitude (no refinement)."""
    return float(np.max(magnitude(f)))


def _multi_indices(order):
    return [c for c in itertools.product(range(order + 1), repeat=3) if sum(c) == order]


def derivative(grid: Grid, f, alpha):
    fh = grid.fft(f)
    mult = np.ones_like(grid.k2, dtype=complex)
    for j, a in enumerate(alpha):
        mult = mult * _ik(grid, j) ** a
    return grid.ifft(fh * mult * grid.mask if any(alpha) else fh)


def c_norm(grid: Grid, f, N):
    """max over |beta| <= N of the refined-grid sup of D^beta f."""
    best = 0.0
    for order in range(N + 1):
        for alpha in _multi_indices(order):
            best = max(best, lp_norm(grid, derivative(grid, f, alpha), math.inf))
    return best


def gradient_power_norm(grid: Grid, f, j, p, average=True):
    """L^p norm of the full j-th derivative tensor of f (Frobenius magnitude)."""
    if j == 0:
        return lp_norm(grid, f, p, average)
    acc = None
    fh = grid.fft(f) * grid.mask
    for alpha in _multi_indices(j):
        weight = math.factorial(j) / math.prod(math.factorial(a) for a in alpha)
        mult = np.ones_like(grid.k2, dtype=complex)
        for i, a in enumerate(alpha):
            mult = mult * _ik(grid, i) ** a
        d = grid.ifft(fh * mult)
        term = weight * np.sum(d**2, axis=tuple(range(d.ndim - 3))) if d.ndim > 3 else weight * d**2
        acc = term if acc is None else acc + term
    root = np.sqrt(acc)
    return lp_norm(grid, root, p, average)


# -- appendix-style estimates ------------------------------------------------------


@dataclass(frozen=True)
class DecorrelationResult:
    ratio: float
    bound_ok: bool
    hypothesis_ok: bool
    frequency_condition: bool
    c_f: float
    lhs: float
    rhs_unit: float
    message: str = ""


def sublattice_leak(grid: Grid, g, sigma):
    """Relative spectral mass of g off the sigma-multiple sublattice."""
    gh = grid.fft(g)
    on = np.ones_like(grid.k2, dtype=bool)
    for kk in grid.k_raw:
        on = on & (np.mod(kk, sigma) == 0)
    tot = np.max(np.abs(gh))
    if tot == 0:
        return 0.0
    off = np.abs(gh) * (~on)
    return float(np.max(off) / tot)


def f_constant(grid: Grid, f, p, freq_bound=1.0, n_derivs=2):
    """C_f = max over j <= n_derivs + 4 of ||grad^j f||_p / freq_bound^j (average-normalized)."""
    return max(gradient_power_norm(grid, f, j, p) / freq_bound**j for j in range(n_derivs + 5))


def decorrelation_check(grid: Grid, f, g_sigma, sigma, p, freq_bound=1.0, c0=2.0, n_derivs=2, c_f=None):
    """Measure ||f g_sigma||_p / (C_f ||g_sigma||_p) with average-normalized norms.

    ``g_sigma`` must already be (2pi/sigma)-periodic. C_f is the largest
    ||grad^j f||_p / freq_bound^j for j <= n_derivs + 4; pass ``c_f`` to reuse
    a value measured elsewhere (e.g. on a coarser grid for a low-band f).
    """
    sigma = int(sigma)
    leak = sublattice_leak(grid, g_sigma, sigma) if sigma >= 1 else 1.0
    hypothesis_ok = sigma >= 2 and leak <= 1e-12
    if c_f is None:
        c_f = f_constant(grid, f, p, freq_bound, n_derivs)
    if _bandwidth(grid, grid.fft(f)) + _bandwidth(grid, grid.fft(g_sigma)) < grid.n // 2:
        fg = f * g_sigma  # no aliasing: pointwise samples are the exact product
    else:
        fg = product(grid, f, g_sigma)
    lhs = lp_norm(grid, fg, p, average=True)
    gnorm = lp_norm(grid, g_sigma, p, average=True)
    ratio = lhs / (c_f * gnorm) if gnorm > 0 and c_f > 0 else 0.0
    freq_ok = 2 * np.pi * math.sqrt(3) * freq_bound / max(sigma, 1) <= 1.0 / 3.0 and freq_bound > 1
    if not hypothesis_ok:
        msg = "hypothesis-failure: g is not sigma-periodic with sigma >= 2"
    elif ratio > c0:
        msg = "bound-failure"
    else:
        msg = "ok"
    return DecorrelationResult(
        ratio=float(ratio),
        bound_ok=bool(hypothesis_ok and ratio <= c0),
        hypothesis_ok=bool(hypothesis_ok),
        frequency_condition=bool(freq_ok),
        c_f=float(c_f),
        lhs=float(lhs),
        rhs_unit=float(c_f * gnorm),
        message=msg,
    )


def compose_sigma(grid: Grid, g, sigma):
    """Sample g(sigma x) on the same grid by index arithmetic (exact)."""
    sigma = int(sigma)
    idx = (np.arange(grid.n) * sigma) % grid.n
    out = g[..., idx, :, :][..., :, idx, :][..., :, :, idx]
    gh = grid.fft(g)
    band = _bandwidth(grid, gh)
    if band * sigma >= grid.n // 2:
        raise GridError(f"g composed at sigma={sigma} has bandwidth {band * sigma} >= n/2")
    return out


def _bandwidth(grid, fh, rel=1e-13):
    a = np.abs(fh)
    if a.ndim > 3:
        a = a.max(axis=tuple(range(a.ndim - 3)))
    top = a.max()
    if top == 0:
        return 0
    sig = a > rel * top
    b = 0
    for kk in grid.k_raw:
        b = max(b, int(np.max(np.abs(np.broadcast_to(kk, a.shape)[sig]))))
    return b


def bandwidth(grid: Grid, f, rel=1e-13):
    """Largest |k_i| carrying relative spectral weight above ``rel``."""
    return _bandwidth(grid, grid.fft(f), rel)


@dataclass(frozen=True)
class MeanSmallnessResult:
    lhs: float
    rhs: float
    flagged: bool


def mean_smallness_check(grid: Grid, f, g, sigma, K=1.0, grad_sup=None):
    """Return |int g_sigma f| and ||grad f||_C0 ||g_sigma||_L1 / sigma.

    ``grad_sup`` reuses a previously measured ||grad f||_C0.
    """
    gm = np.max(np.abs(mean(grid, g)))
    if gm > 1e-12 * max(np.max(np.abs(g)), 1e-300):
        raise HypothesisError(f"g must have zero mean (mean {gm:.3e})")
    gs = compose_sigma(grid, g, sigma)
    prod = product(grid, f, gs)
    lhs = abs(float(np.sum(mean(grid, prod)))) * grid.volume
    gradf = grad_sup if grad_sup is not None else max(lp_norm(grid, partial(grid, f, j), math.inf) for j in range(3))
    rhs = gradf * lp_norm(grid, gs, 1) / sigma
    return MeanSmallnessResult(lhs=lhs, rhs=float(rhs), flagged=bool(lhs > K * rhs))


@dataclass(frozen=True)
class InvGradResult:
    lhs: float
    rhs: float
    ratio: float
    c_a: float
    lam: float


def high_pass(grid: Grid, f, kappa):
    keep = (np.sqrt(grid.k2) >= kappa).astype(float)
    return grid.ifft(grid.fft(f) * keep)


def inv_grad_product_check(grid: Grid, a, f, kappa, p, L=4, lam=None, tol=1e-10):
    """Compare || |grad|^{-1}(a P_{>=kappa} f) ||_p with C_a (1 + lam^L/kappa^(L-2)) ||f||_p / kappa."""
    fk = high_pass(grid, f, kappa)
    prod = product(grid, a, fk)
    integral = float(np.sum(mean(grid, prod))) * grid.volume
    scale = lp_norm(grid, a, 2) * lp_norm(grid, fk, 2)
    if abs(integral) > tol * max(scale, 1e-300) and abs(integral) > 1e-300:
        raise HypothesisError(f"int a P_k f = {integral:.3e} is not zero")
    if lam is None:
        lam = max(1.0, float(bandwidth(grid, a - np.mean(a))))
    c_a = max(c_norm_order(grid, a, j) / lam**j for j in range(L + 1))
    lhs = lp_norm(grid, inv_abs_grad(grid, prod), p)
    rhs = c_a * (1 + lam**L / kappa ** (L - 2)) * lp_norm(grid, f, p) / kappa
    return InvGradResult(lhs=lhs, rhs=float(rhs), ratio=float(lhs / rhs) if rhs > 0 else 0.0, c_a=float(c_a), lam=float(lam))


def c_norm_order(grid: Grid, f, j):
    """max over |beta| = j of the refined sup of D^beta f."""
    return max(lp_norm(grid, derivative(grid, f, al), math.inf) for al in _multi_indices(j))


# -- serialization ------------------------------------------------------------------

MAGIC = b"NSRF"
HEADER = struct.Struct("<4sIIIIIq")
VERSION = 1


def write_field(path, f, time_index=0):
    """Binary container: header then little-endian float64, components interleaved."""
    ncomp_shape = f.shape[:-3]
    ncomp = int(np.prod(ncomp_shape)) if ncomp_shape else 1
    n1, n2, n3 = f.shape[-3:]
    data = np.ascontiguousarray(np.moveaxis(f.reshape((ncomp,) + f.shape[-3:]), 0, -1), dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, n1, n2, n3, ncomp, int(time_index)))
        fh.write(data.tobytes())


def read_field(path):
    with open(path, "rb") as fh:
        head = fh.read(HEADER.size)
        magic, version, n1, n2, n3, ncomp, tidx = HEADER.unpack(head)
        if magic != MAGIC:
            raise GridError("not a field container")
        data = np.frombuffer(fh.read(), dtype="<f8")
    arr = np.moveaxis(data.reshape(n1, n2, n3, ncomp), -1, 0)
    if ncomp == 1:
        arr = arr[0]
    return np.array(arr), {"shape": (n1, n2, n3), "components": ncomp, "time_index": tidx, "version": version}


def write_slice_csv(path, grid: Grid, f, axis=2, index=0):
    """Write a 2D slice; one row per grid point, one column per component."""
    comps = f.reshape((-1,) + f.shape[-3:]) if f.ndim > 3 else f[None]
    sl = np.take(comps, index, axis=1 + axis)
    x = np.arange(grid.n) * grid.dx
    lines = ["i,j,x,y," + ",".join(f"c{c}" for c in range(comps.shape[0]))]
    for i in range(grid.n):
        for j in range(grid.n):
            vals = ",".join(f"{sl[c, i, j]:.17g}" for c in range(comps.shape[0]))
            lines.append(f"{i},{j},{x[i]:.17g},{x[j]:.17g},{vals}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def random_field(grid: Grid, ncomp=None, band=None, rng=None):
    """Random real field with spectral support in |k| < band (default n/4)."""
    rng = np.random.default_rng(rng)
    band = grid.n // 4 if band is None else band
    n = grid.n
    b = int(min(math.ceil(band), n // 2))
    lead = () if ncomp is None else (ncomp,)
    # complex Gaussian coefficients on the block |k_i| < b only; irfftn keeps the
    # Hermitian part of the k3 = 0 plane
    idx = np.r_[0:b, n - b + 1 : n]
    block = lead + (len(idx), len(idx), b)
    coef = rng.standard_normal(block) + 1j * rng.standard_normal(block)
    fh = np.zeros(lead + (n, n, n // 2 + 1), dtype=complex)
    fh[..., idx[:, None], idx[None, :], :b] = coef
    kr2 = sum(kk**2 for kk in grid.k_raw)
    return grid.ifft(fh * (np.sqrt(kr2) < band)) * n**1.5
