import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nsrkit import geometry as G


def test_cardinality_and_n_star(dset):
    assert len(dset) == 6
    assert dset.n_star == 5


def test_identity_coordinates_are_half(dset):
    assert all(c == Fraction(1, 2) for c in dset.id_coordinates)
    xis = dset.xi_floats()
    assert np.allclose(0.5 * np.einsum("ki,kj->ij", xis, xis), np.eye(3), atol=1e-15)


def test_triads_orthonormal_exactly(dset):
    for d in dset.directions:
        vecs = (d.xi, d.A, d.cross)
        for i in range(3):
            for j in range(3):
                dot = sum(a * b for a, b in zip(vecs[i], vecs[j]))
                assert dot == (1 if i == j else 0)
    first = dset.directions[0]
    assert first.xi == tuple(Fraction(x, 5) for x in (3, 4, 0))
    assert first.A == tuple(Fraction(x, 5) for x in (4, -3, 0))


def test_gamma_at_identity(dset):
    assert np.max(np.abs(G.gamma_all(dset, np.eye(3)) - 1 / math.sqrt(2))) < 1e-15
    consts = G.measure_constants(dset, samples=2000)
    assert consts["gamma_at_identity"] == pytest.approx(1 / math.sqrt(2), abs=1e-15)
    assert consts["sup_gamma_c0"] >= consts["gamma_at_identity"]
    assert consts["cardinality"] == 6


def test_reconstruction_on_domain_ball(dset):
    R = G.ball_sample(10_000, 3, radius=dset.domain_radius)
    rec = G.reconstruct(dset, G.gamma_all(dset, R))
    assert np.max(np.sqrt(np.sum((rec - R) ** 2, axis=(-2, -1)))) <= 1e-12


def test_linear_identity_on_half_ball(dset):
    R = G.ball_sample(10_000, 4, radius=0.5)
    c = G.coordinates(dset, R)
    xis = dset.xi_floats()
    lin = np.einsum("...k,ki,kj->...ij", c, xis, xis)
    assert np.max(np.abs(lin - R)) <= 1e-12


def test_valid_radius_between_domain_and_half(dset):
    # coordinates of the default set turn negative before the 1/2 ball
    assert dset.domain_radius <= dset.valid_radius < 0.5
    assert dset.half_ball_min_coordinate < 0


def test_domain_error_outside_ball(dset):
    with pytest.raises(G.DomainError):
        G.gamma_all(dset, 2 * np.eye(3))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=6, max_size=6), st.floats(-0.3, 0.3))
def test_squares_affine_in_t(e, t):
    E = np.array([[e[0], e[3], e[4]], [e[3], e[1], e[5]], [e[4], e[5], e[2]]])
    nrm = np.linalg.norm(E)
    if nrm == 0:
        return
    E = E / nrm
    c0 = G.coordinates(G.build_direction_set(), np.eye(3))
    ct = G.coordinates(G.build_direction_set(), np.eye(3) + t * E)
    c1 = G.coordinates(G.build_direction_set(), np.eye(3) + 0.1 * E)
    assert np.allclose(ct, c0 + (t / 0.1) * (c1 - c0), atol=1e-12)


def test_linear_coordinates_match_packed(dset, rng):
    R = G.ball_sample(20, rng, radius=0.4)
    packed = np.stack([R[:, i, j] for i, j in G.SYM_INDEX])
    lin = G.linear_coordinates(dset, packed)
    assert np.allclose(lin.T, G.coordinates(dset, R), atol=1e-14)
