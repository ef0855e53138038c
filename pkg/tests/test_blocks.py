import numpy as np
import pytest

from boussinesq_ci.convex_integration import ResolutionError, build_blocks, default_directions
from boussinesq_ci.convex_integration.blocks import BuildingBlockProfile, pair_null_vector
from boussinesq_ci.spectral_core import TorusGrid


@pytest.fixture(scope="module")
def blocks():
    return build_blocks()


def test_profile_normalization(blocks):
    p = blocks.profile
    assert abs(p.l2sq() - 1.0) < 1e-9
    assert abs(p.mean()) < 1e-9
    x = np.linspace(0, 1, 20001)
    assert np.all(p.phi(x[x > p.s + 1e-12]) == 0.0)
    assert np.all(p.Phi1(x[x > p.s + 1e-12]) == 0.0)


def test_profile_tail_recorded(blocks):
    p = blocks.profile
    assert p.tail <= 1e-4
    assert 0 < p.tail_fixed < 1


def test_supports_disjoint(blocks, rng):
    assert blocks.min_slack > 0
    pts = rng.uniform(0, 1, size=(3, 200000))
    assert blocks.overlap_max(pts) == 0.0


def test_null_vector_certificate():
    P = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1]])
    n = pair_null_vector(P)
    assert not np.any(n @ P)
    assert np.gcd.reduce(np.abs(n)) == 1


def test_fourier_support_orthogonal_to_direction(blocks):
    # every frequency of a block lies in the plane normal to its direction,
    # hence so does every pairwise sum j + j'
    for kind, idx in blocks.families:
        js, _, _, _ = blocks.index_set(kind, idx, J=4)
        d = blocks.direction(kind, idx)
        assert np.abs(js @ d).max() < 1e-12


def test_fourier_truncation_error_matches_tail(blocks):
    # the block is phi(u) phi(v), so the 1-D partial sum controls the series error
    u = np.arange(2**16) / 2**16
    p1 = blocks._partial_sum(u, blocks.profile.J_trunc).real
    err2 = np.mean((p1 - blocks.profile.phi(u)) ** 2)
    assert err2 <= 1.01 * blocks.profile.tail * blocks.profile.l2sq()


def test_potential_curl_pointwise(blocks, rng):
    h = 1e-6
    for kind, idx in (("theta", 1), ("v", 4)):
        pts = rng.uniform(0, 1, size=(3, 400000))
        W = blocks.W(kind, idx, pts)
        pts = pts[:, np.abs(W) > 0.2 * np.abs(W).max()][:, :20]
        J = np.zeros((3, 3, pts.shape[1]))
        for b in range(3):
            e = np.zeros((3, 1))
            e[b] = h
            J[:, b] = (blocks.potential(kind, idx, pts + e) - blocks.potential(kind, idx, pts - e)) / (2 * h)
        curl = np.stack([J[2, 1] - J[1, 2], J[0, 2] - J[2, 0], J[1, 0] - J[0, 1]])
        ref = blocks.direction(kind, idx)[:, None] * blocks.W(kind, idx, pts)[None]
        assert np.abs(curl - ref).max() < 1e-4 * np.abs(ref).max()


def test_resolution_error_reports_required_n():
    with pytest.raises(ResolutionError) as exc:
        build_blocks(lam=1, grid=TorusGrid(32))
    assert exc.value.required_n > 32
    b = build_blocks(lam=1, grid=TorusGrid(32), allow_underresolved=True)
    assert b.underresolved


def test_coefficient_bound_constant_finite(blocks):
    js, b, _, _ = blocks.index_set("theta", 0, J=64)
    r = np.linalg.norm(js, axis=1) / blocks.dirs.N
    C = float(np.max(np.abs(b) * r**6))
    assert np.isfinite(C)


def test_coefficient_decay_exponent(blocks):
    # required: log-log fit of |b_j| over 2 <= |j| <= J_trunc has slope <= -6
    assert blocks.decay_fit() >= 6.0
