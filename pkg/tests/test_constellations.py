import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy.stats import special_ortho_group

from quadmod.constellations import (
    DEEP_HOLE,
    Constellation,
    DetectionMode,
    LatticeCarveSpec,
    PackingParams,
    Symbol4D,
    biorthogonal_subsets,
    carve_d4,
    classic_2d,
    d4_nodes_in_ball,
    distance_spectrum,
    generate_biorthogonal,
    generate_classic_dual,
    generate_d4_lam,
    generate_hex_cylinder_psk,
    generate_sphere_4dpsk,
    min_distance,
    optimize_sphere_packing,
    project_constituents,
    read_constellation,
    shell_populations,
    write_constellation,
)
from quadmod.errors import CountUnreachable, InvalidCount


def brute_min_dist(points):
    best = math.inf
    for a, b in itertools.combinations(points, 2):
        best = min(best, float(np.sqrt(np.sum((a - b) ** 2))))
    return best


# ---------------------------------------------------------------------------
# D4 carve
# ---------------------------------------------------------------------------


def test_shell_populations_with_deep_hole():
    shells = shell_populations(DEEP_HOLE, max_norm=9.0)
    assert [(n, p) for n, p, _ in shells[:3]] == [(1.0, 8), (3.0, 32), (5.0, 48)]
    assert shells[2][2] == 88


@pytest.mark.parametrize("m", [1, 8, 40, 88, 100, 256])
def test_carve_is_d4_and_optimal(m):
    nodes = carve_d4(LatticeCarveSpec(m))
    assert nodes.shape == (m, 4)
    v = nodes - np.asarray(DEEP_HOLE)
    # D4 membership: integer coordinates with even sum
    assert_allclose(v, np.round(v), atol=1e-12)
    assert np.all(np.round(v).sum(axis=1) % 2 == 0)
    assert len(np.unique(nodes, axis=0)) == m
    # no omitted node is strictly closer to the origin than a kept one
    norms = np.sum(nodes**2, axis=1)
    everything = d4_nodes_in_ball(DEEP_HOLE, math.sqrt(norms.max()) + 1e-9)
    inside = np.sum(everything**2, axis=1) < norms.max() - 1e-9
    assert inside.sum() <= m
    kept = {tuple(r) for r in np.round(nodes, 9)}
    assert all(tuple(r) in kept for r in np.round(everything[inside], 9))


def test_carve_single_point_is_closest_node():
    node = carve_d4(LatticeCarveSpec(1, offset=(0.3, 0.1, 0.0, 0.2)))[0]
    allnodes = d4_nodes_in_ball((0.3, 0.1, 0.0, 0.2), 3.0)
    assert math.isclose(np.sum(node**2), np.min(np.sum(allnodes**2, axis=1)))


def test_carve_88_min_squared_distance_is_2():
    nodes = carve_d4(LatticeCarveSpec(88))
    assert math.isclose(brute_min_dist(nodes) ** 2, 2.0, rel_tol=1e-12)


def test_carve_reject_partial_shell():
    with pytest.raises(CountUnreachable) as err:
        carve_d4(LatticeCarveSpec(100, partial_shell="reject"))
    assert (5.0, 48) in err.value.shells
    # whole shells are accepted
    assert len(carve_d4(LatticeCarveSpec(88, partial_shell="reject"))) == 88


@pytest.mark.parametrize("m", [88, 256])
def test_lam_normalized_and_min_distance(m):
    c = generate_d4_lam(m)
    assert len(c) == m
    assert abs(c.avg_energy - 1.0) < 1e-12
    raw = carve_d4(LatticeCarveSpec(m))
    scale = math.sqrt(np.mean(np.sum(raw**2, axis=1)))
    assert_allclose(min_distance(c) * scale, math.sqrt(2), rtol=1e-12)
    assert_allclose(min_distance(c), brute_min_dist(c.points), rtol=1e-12)


def test_lam_256_projection_favours_inner_elements():
    (elems, counts), _ = project_constituents(generate_d4_lam(256))
    energy = np.round(np.abs(elems) ** 2, 9)
    levels = np.unique(energy)
    mean_count = [counts[energy == e].mean() for e in levels]
    assert all(a >= b for a, b in zip(mean_count, mean_count[1:]))
    assert mean_count[0] > mean_count[-1]


# ---------------------------------------------------------------------------
# Sphere packing
# ---------------------------------------------------------------------------


def test_sphere_two_points_antipodal():
    c = generate_sphere_4dpsk(2)
    assert_allclose(c.energies, 1.0, atol=1e-12)
    assert_allclose(min_distance(c), 2.0, atol=1e-6)


def test_sphere_five_points_is_simplex():
    c = generate_sphere_4dpsk(5)
    spec = distance_spectrum(c, decimals=4)
    assert list(spec.values()) == [10]
    assert_allclose(list(spec.keys())[0], math.sqrt(2 * 5 / 4), atol=1e-4)


def test_sphere_64_converges_and_beats_lattice():
    res = optimize_sphere_packing(64)
    assert res.converged
    assert_allclose(res.constellation.energies, 1.0, atol=1e-12)
    hist = res.min_distance_history
    assert np.all(np.diff(hist) >= 0)
    assert min_distance(res.constellation) > 0.71


def test_sphere_is_deterministic_in_seed():
    a = generate_sphere_4dpsk(16, PackingParams(seed=3))
    b = generate_sphere_4dpsk(16, PackingParams(seed=3))
    assert np.array_equal(a.points, b.points)


# ---------------------------------------------------------------------------
# Constant-amplitude sets
# ---------------------------------------------------------------------------


def test_hex_cylinder_small_constant_amplitude():
    c = generate_hex_cylinder_psk(4)
    assert_allclose(np.abs(c.cx), 1 / math.sqrt(2), atol=1e-12)
    assert_allclose(np.abs(c.cy), 1 / math.sqrt(2), atol=1e-12)


def test_hex_cylinder_64_vs_dual_8psk():
    hexc = generate_hex_cylinder_psk(64)
    psk = generate_classic_dual("PSK8")
    assert abs(hexc.avg_energy - 1) < 1e-12
    dh, dp = min_distance(hexc), min_distance(psk)
    # the hexagonal arrangement keeps d_min and halves the nearest-neighbour count
    assert dh >= dp - 1e-12
    nh = distance_spectrum(hexc)[round(dh, 9)]
    np_ = distance_spectrum(psk)[round(dp, 9)]
    assert nh < np_


def test_hex_cylinder_bad_count():
    with pytest.raises(InvalidCount):
        generate_hex_cylinder_psk(7)


def test_biorthogonal_unrotated_distances():
    c = generate_biorthogonal(rotated=False)
    a = 1.0  # unit energy: amplitude 1 on one axis
    spec = distance_spectrum(c)
    assert_allclose(sorted(spec), [math.sqrt(2) * a, 2 * a], atol=1e-9)
    assert_allclose(min_distance(c), math.sqrt(2), rtol=1e-12)


def test_biorthogonal_rotated_is_half_of_dual_qpsk():
    c = generate_biorthogonal(rotated=True)
    q = generate_classic_dual("QPSK")
    assert_allclose(np.abs(c.cx), np.abs(c.cx[0]), atol=1e-12)
    assert_allclose(np.abs(c.cy), np.abs(c.cy[0]), atol=1e-12)
    even, odd = biorthogonal_subsets()
    assert len(even) == len(odd) == 8
    assert not set(even) & set(odd)
    qrows = {tuple(r) for r in np.round(q.points, 9)}
    assert all(tuple(r) in qrows for r in np.round(c.points, 9))
    assert_allclose(min_distance(c) / min_distance(q), math.sqrt(2), rtol=1e-12)
    # rotated and axis versions are congruent
    assert distance_spectrum(c) == distance_spectrum(generate_biorthogonal(rotated=False))


# ---------------------------------------------------------------------------
# Classic dual sets
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "kind, m", [("QPSK", 16), ("PSK8", 64), ("PSK3", 9), ("QAM16", 256), ("APSK16", 256), ("HEXQAM8", 64)]
)
def test_classic_dual_sizes(kind, m):
    c = generate_classic_dual(kind)
    assert len(c) == m
    assert c.detection_mode is DetectionMode.PER_POL
    assert abs(c.avg_energy - 1) < 1e-12
    assert_allclose(c.bits_per_symbol, math.log2(m))


def test_dual_qpsk_min_distance_is_one():
    assert_allclose(min_distance(generate_classic_dual("QPSK")), 1.0, rtol=1e-12)


def test_psk3_bits():
    assert round(generate_classic_dual("PSK3").bits_per_symbol, 2) == 3.17


def test_hexqam8_factor():
    d = 2.0
    s3 = math.sqrt(3)
    ref = {complex(round(z.real, 9), round(z.imag, 9)) for z in
           np.array([1, -1, 1j * s3, -1j * s3, -2 + 1j * s3, -2 - 1j * s3, 2 + 1j * s3, 2 - 1j * s3]) * d / 2}
    got = {complex(round(z.real, 9), round(z.imag, 9)) for z in classic_2d("HEXQAM8", d)}
    assert got == ref
    # nearest neighbours of the hexagonal set are at distance d
    pts = classic_2d("HEXQAM8", d)
    dist = np.abs(pts[:, None] - pts[None, :])[np.triu_indices(8, 1)]
    assert_allclose(dist.min(), d)


def test_apsk_ring_ratio():
    r = np.unique(np.round(np.abs(classic_2d("APSK16")), 9))
    assert_allclose(r[1] / r[0], 2.5)


def test_dual_ordering_is_cartesian():
    c = generate_classic_dual("PSK3")
    k = len(c.factor_y)
    for i in range(len(c.factor_x)):
        for j in range(k):
            assert_allclose(c.cx[i * k + j], c.factor_x[i])
            assert_allclose(c.cy[i * k + j], c.factor_y[j])


def test_per_pol_rejects_non_product():
    pts = generate_classic_dual("QPSK").points[:15]
    with pytest.raises(ValueError):
        Constellation(pts, "broken", DetectionMode.PER_POL)


def test_project_dual_qpsk_and_biorthogonal():
    for (elems, counts) in project_constituents(generate_classic_dual("QPSK")):
        assert len(elems) == 4 and np.all(counts == 4)
    for (elems, counts) in project_constituents(generate_biorthogonal(rotated=True)):
        assert len(elems) == 4 and np.all(counts == 2)


# ---------------------------------------------------------------------------
# Container behaviour and interchange
# ---------------------------------------------------------------------------


def test_symbol_roundtrip_and_energy():
    s = Symbol4D.from_real(1.0, -2.0, 0.5, 0.25)
    assert s.to_real() == (1.0, -2.0, 0.5, 0.25)
    assert_allclose(s.energy, 1 + 4 + 0.25 + 0.0625)
    c = generate_classic_dual("QPSK")
    assert_allclose(c[3].to_real(), c.points[3])


def test_points_read_only():
    c = generate_classic_dual("QPSK")
    with pytest.raises(ValueError):
        c.points[0, 0] = 5.0


@given(st.floats(0.01, 100.0), st.integers(0, 2**31 - 1))
@settings(max_examples=25, deadline=None)
def test_normalization_property(scale, seed):
    rng = np.random.default_rng(seed)
    c = Constellation(scale * rng.standard_normal((13, 4))).normalize()
    assert abs(c.avg_energy - 1.0) < 1e-12


@pytest.mark.parametrize("name", ["QPSK", "HEXQAM8"])
def test_interchange_roundtrip(tmp_path, name):
    c = generate_classic_dual(name)
    p = tmp_path / "c.txt"
    write_constellation(c, p)
    back = read_constellation(p)
    assert back.name == c.name
    assert back.detection_mode is c.detection_mode
    assert np.array_equal(back.points, c.points)


def test_interchange_errors(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("# x 2 1 Joint4D\n0 0 0 0\n")
    with pytest.raises(ValueError, match="announces 2"):
        read_constellation(p)
    p.write_text("0 0 0 0\n")
    with pytest.raises(ValueError, match="header"):
        read_constellation(p)


def test_rotation_preserves_distances():
    c = generate_d4_lam(88)
    r = special_ortho_group.rvs(4, random_state=7)
    assert_allclose(min_distance(c.rotated(r)), min_distance(c), rtol=1e-12)
    assert c.rotated(r).detection_mode is DetectionMode.JOINT
