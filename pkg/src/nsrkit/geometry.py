"""Rational direction set and the coefficient functions gamma_xi.

Symmetric matrices near the identity are written as sum_xi gamma_xi(R)^2 xi (x) xi
over six rational unit directions. Since six rank-one matrices form a basis of
the symmetric 3x3 matrices, gamma_xi^2 is simply the xi-coordinate of R.

For the default set those coordinates stay positive only on a Frobenius ball
of radius about 0.463 around Id, so gamma is evaluated on the ball of radius
``domain_radius`` (0.45) rather than 1/2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

SYM_INDEX = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))
BALL_RADIUS = 0.5

CANDIDATES = (
    ((3, 4, 0), (4, -3, 0)),
    ((3, -4, 0), (4, 3, 0)),
    ((0, 3, 4), (0, 4, -3)),
    ((0, 3, -4), (0, 4, 3)),
    ((4, 0, 3), (3, 0, -4)),
    ((-4, 0, 3), (3, 0, 4)),
)
CANDIDATE_DENOMINATOR = 5


class GeometryError(ValueError):
    """A direction set failed one of its construction checks."""


class DomainError(ValueError):
    """A matrix lies outside the ball where the decomposition is valid."""


def _frac_vec(v, den=1):
    return tuple(Fraction(x, den) for x in v)


def _fdot(u, v):
    return sum(a * b for a, b in zip(u, v))


def _fcross(u, v):
    return (u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0])


@dataclass(frozen=True)
class Direction:
    xi: tuple
    A: tuple
    cross: tuple
    alpha_shift: tuple | None = None

    def as_float(self):
        return (
            np.array([float(x) for x in self.xi]),
            np.array([float(x) for x in self.A]),
            np.array([float(x) for x in self.cross]),
        )

    def integer_frame(self, n_star):
        """n_star times the triad, as integer vectors."""
        out = []
        for vec in (self.xi, self.A, self.cross):
            scaled = [x * n_star for x in vec]
            if any(s.denominator != 1 for s in scaled):
                raise GeometryError("n_star does not clear the triad denominators")
            out.append(np.array([int(s) for s in scaled]))
        return tuple(out)

    def to_json(self):
        def enc(v):
            return [[x.numerator, x.denominator] for x in v]

        out = {"xi": enc(self.xi), "A": enc(self.A), "cross": enc(self.cross)}
        if self.alpha_shift is not None:
            out["alpha_shift"] = [float(a) for a in self.alpha_shift]
        return out


def sym_vec(R):
    """(..., 3, 3) symmetric matrices to (..., 6) coordinates xx, yy, zz, xy, xz, yz."""
    R = np.asarray(R, dtype=float)
    return np.stack([R[..., i, j] for i, j in SYM_INDEX], axis=-1)


def _frac_solve(M, b):
    """Exact Gauss-Jordan solve over the rationals; returns None when singular."""
    n = len(M)
    aug = [list(row) + [rhs] for row, rhs in zip(M, b)]
    for col in range(n):
        piv = next((r for r in range(col, n) if aug[r][col] != 0), None)
        if piv is None:
            return None
        aug[col], aug[piv] = aug[piv], aug[col]
        pv = aug[col][col]
        aug[col] = [x / pv for x in aug[col]]
        for r in range(n):
            if r != col and aug[r][col] != 0:
                fac = aug[r][col]
                aug[r] = [x - fac * y for x, y in zip(aug[r], aug[col])]
    return [aug[r][n] for r in range(n)]


def _frac_det(M):
    M = [list(r) for r in M]
    n = len(M)
    det = Fraction(1)
    for col in range(n):
        piv = next((r for r in range(col, n) if M[r][col] != 0), None)
        if piv is None:
            return Fraction(0)
        if piv != col:
            M[col], M[piv] = M[piv], M[col]
            det = -det
        det *= M[col][col]
        for r in range(col + 1, n):
            fac = M[r][col] / M[col][col]
            M[r] = [x - fac * y for x, y in zip(M[r], M[col])]
    return det


@dataclass(frozen=True)
class DirectionSet:
    directions: tuple
    n_star: int
    gram: np.ndarray = field(repr=False)
    basis: np.ndarray = field(repr=False)
    basis_inv: np.ndarray = field(repr=False)
    id_coordinates: tuple = ()
    sup_gamma_c0: float = 0.0
    min_gamma_sample: float = 0.0
    ball_norm: str = "frobenius"
    valid_radius: float = 0.0
    domain_radius: float = 0.0
    half_ball_min_coordinate: float = 0.0

    def __len__(self):
        return len(self.directions)

    def xi_floats(self):
        return np.array([d.as_float()[0] for d in self.directions])

    def with_directions(self, directions):
        return replace(self, directions=tuple(directions))

    def to_json(self):
        return {
            "n_star": self.n_star,
            "cardinality": len(self.directions),
            "ball_norm": self.ball_norm,
            "sup_gamma_c0": self.sup_gamma_c0,
            "min_gamma_sample": self.min_gamma_sample,
            "valid_radius": self.valid_radius,
            "domain_radius": self.domain_radius,
            "half_ball_min_coordinate": self.half_ball_min_coordinate,
            "id_coordinates": [[c.numerator, c.denominator] for c in self.id_coordinates],
            "directions": [d.to_json() for d in self.directions],
        }


def _directions_from(candidates, den):
    dirs = []
    for xi_int, a_int in candidates:
        xi = _frac_vec(xi_int, den)
        A = _frac_vec(a_int, den)
        dirs.append(Direction(xi=xi, A=A, cross=_fcross(xi, A)))
    return dirs


def _check_triads(dirs):
    for d in dirs:
        for name, v in (("xi", d.xi), ("A", d.A), ("cross", d.cross)):
            if _fdot(v, v) != 1:
                raise GeometryError(f"triad check failed: |{name}| != 1 for xi={d.xi}")
        if _fdot(d.xi, d.A) != 0 or _fdot(d.xi, d.cross) != 0 or _fdot(d.A, d.cross) != 0:
            raise GeometryError(f"triad check failed: not orthogonal for xi={d.xi}")


def _lcm_denominators(dirs):
    n = 1
    for d in dirs:
        for v in (d.xi, d.A, d.cross):
            for x in v:
                n = n * x.denominator // math.gcd(n, x.denominator)
    return n


def ball_sample(count, rng, radius=BALL_RADIUS):
    """Uniform sample of symmetric R with |R - Id|_F <= radius."""
    rng = np.random.default_rng(rng)
    u = rng.standard_normal((count, 6))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    u *= radius * rng.random(count)[:, None] ** (1.0 / 6.0)
    E = np.zeros((count, 3, 3))
    for c, (i, j) in enumerate(SYM_INDEX):
        val = u[:, c] if i == j else u[:, c] / math.sqrt(2.0)
        E[:, i, j] = val
        E[:, j, i] = val
    return np.eye(3) + E


def _coordinate_extremes(basis_inv, radius=BALL_RADIUS):
    """Exact max and min of each coordinate over the Frobenius ball around Id."""
    # coordinate c(Id + E) = c(Id) + r . vec(E); off-diagonals count twice in |E|_F
    weights = np.array([1.0, 1.0, 1.0, 0.5, 0.5, 0.5])
    dual = np.sqrt(np.sum(basis_inv**2 * weights, axis=1))
    c_id = basis_inv @ sym_vec(np.eye(3))
    return c_id + radius * dual, c_id - radius * dual, dual


def build_direction_set(candidates=CANDIDATES, denominator=CANDIDATE_DENOMINATOR, samples=10_000, seed=0):
    """Build and verify the six-direction set."""
    dirs = _directions_from(candidates, denominator)
    _check_triads(dirs)
    if len(dirs) != 6:
        raise GeometryError("gram check failed: need exactly six directions")
    n_star = _lcm_denominators(dirs)
    cols = [[d.xi[i] * d.xi[j] for i, j in SYM_INDEX] for d in dirs]
    B_frac = [[cols[c][r] for c in range(6)] for r in range(6)]
    gram_frac = [[_fdot(dirs[a].xi, dirs[b].xi) ** 2 for b in range(6)] for a in range(6)]
    if _frac_det(gram_frac) == 0:
        raise GeometryError("gram check failed: rank-one matrices are dependent")
    id_vec = [Fraction(1), Fraction(1), Fraction(1), Fraction(0), Fraction(0), Fraction(0)]
    id_coords = _frac_solve(B_frac, id_vec)
    if id_coords is None or any(c <= 0 for c in id_coords):
        raise GeometryError("identity check failed: coordinates of Id are not all positive")
    basis = np.array([[float(x) for x in row] for row in B_frac])
    basis_inv = np.linalg.inv(basis)
    c_id = np.array([float(c) for c in id_coords])
    _, half_lo, dual = _coordinate_extremes(basis_inv, BALL_RADIUS)
    valid_radius = float(np.min(c_id / dual))
    # coordinates stay positive on the Frobenius ball of radius valid_radius; the
    # working domain is the largest multiple of 1/20 strictly inside it
    domain_radius = min(BALL_RADIUS, math.floor(20 * valid_radius * (1 - 1e-9)) / 20)
    if domain_radius <= 0:
        raise GeometryError("positivity check failed: no ball around Id keeps all coordinates positive")
    sample = ball_sample(samples, seed, radius=domain_radius)
    coords = sym_vec(sample) @ basis_inv.T
    hi, lo, _ = _coordinate_extremes(basis_inv, domain_radius)
    if coords.min() <= 0 or lo.min() <= 0:
        raise GeometryError("positivity check failed: some gamma is not real on the domain ball")
    min_sample = float(np.sqrt(coords.min()))
    if min_sample <= 1e-3:
        raise GeometryError(f"positivity check failed: min gamma {min_sample:.3e} <= 1e-3")
    sup = float(np.sqrt(max(coords.max(), hi.max())))
    return DirectionSet(
        directions=tuple(dirs),
        n_star=n_star,
        gram=np.array([[float(x) for x in row] for row in gram_frac]),
        basis=basis,
        basis_inv=basis_inv,
        id_coordinates=tuple(id_coords),
        sup_gamma_c0=sup,
        min_gamma_sample=min_sample,
        valid_radius=valid_radius,
        domain_radius=domain_radius,
        half_ball_min_coordinate=float(half_lo.min()),
    )


def _index(dset, xi):
    if isinstance(xi, (int, np.integer)):
        return int(xi)
    for k, d in enumerate(dset.directions):
        if d.xi == xi.xi:
            return k
    raise KeyError(xi)


def coordinates(dset: DirectionSet, R, radius=None):
    """Linear coordinates c_xi(R) = gamma_xi(R)^2, shape (..., 6).

    These are defined for every symmetric R; ``radius`` (if given) enforces
    |R - Id|_F <= radius.
    """
    R = np.asarray(R, dtype=float)
    if radius is not None:
        dist = np.sqrt(np.sum((R - np.eye(3)) ** 2, axis=(-2, -1)))
        if np.any(dist > radius * (1 + 1e-12)):
            raise DomainError(f"|R - Id|_F = {float(np.max(dist)):.6g} exceeds {radius}")
    return sym_vec(R) @ dset.basis_inv.T


def linear_coordinates(dset: DirectionSet, R_vec):
    """Coordinates of matrices given as (6, ...) component stacks, no domain check."""
    return np.tensordot(dset.basis_inv, R_vec, axes=(1, 0))


def gamma(dset: DirectionSet, xi, R):
    """gamma_xi(R) = sqrt(c_xi(R)) on the certified ball around Id."""
    c = coordinates(dset, R, dset.domain_radius)[..., _index(dset, xi)]
    if np.any(c <= 0):
        raise GeometryError("negative coordinate inside the ball")
    return np.sqrt(c)


def gamma_all(dset: DirectionSet, R):
    c = coordinates(dset, R, dset.domain_radius)
    if np.any(c <= 0):
        raise GeometryError("negative coordinate inside the ball")
    return np.sqrt(c)


def reconstruct(dset: DirectionSet, gammas):
    """sum_xi gamma_xi^2 xi (x) xi for gammas of shape (..., 6)."""
    xis = dset.xi_floats()
    outer = np.einsum("ki,kj->kij", xis, xis)
    return np.einsum("...k,kij->...ij", gammas**2, outer)


def measure_constants(dset: DirectionSet, samples=10_000, seed=0):
    sample = ball_sample(samples, seed, radius=dset.domain_radius)
    g = gamma_all(dset, sample)
    hi, _, _ = _coordinate_extremes(dset.basis_inv, dset.domain_radius)
    return {
        "sup_gamma_c0": float(max(g.max(), np.sqrt(hi.max()))),
        "sample_sup_gamma": float(g.max()),
        "gamma_at_identity": float(gamma_all(dset, np.eye(3)).max()),
        "cardinality": len(dset.directions),
        "domain_radius": dset.domain_radius,
        "valid_radius": dset.valid_radius,
    }
