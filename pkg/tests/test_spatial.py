import numpy as np
import pytest

from pdmp_limits.spatial import (
    Grid,
    PartitionError,
    PiecewiseConstantField,
    SpectralField,
    aligned_grid,
    build_partition,
    compartment_average,
    coordinate_function,
    dual_norm,
    indicator_dual_norms_sq,
    integration_matrix,
    scale_norm,
    sine_basis,
    sine_integrals,
    to_spectral,
)


def test_uniform_partition_extremes():
    P = build_partition(1.0, 4, 10)
    np.testing.assert_allclose(P.boundaries, [0, 0.25, 0.5, 0.75, 1])
    np.testing.assert_allclose(P.measures, 0.25)
    assert P.ell_plus == P.ell_minus == 10
    assert P.heterogeneity == pytest.approx(1.0)


def test_single_compartment():
    P = build_partition(1.0, 1, 7)
    assert P.p == 1
    assert P.nu_plus == P.nu_minus == 1.0


def test_explicit_boundaries_extremes():
    P = build_partition(2.0, 2, [5, 20], boundaries=[0, 0.5, 2])
    assert (P.nu_minus, P.nu_plus) == (0.5, 1.5)
    assert (P.ell_minus, P.ell_plus) == (5, 20)
    assert P.delta_plus == 1.5


def test_channel_density_rule():
    P = build_partition(1.0, 4, lambda lo, hi: int(round(40 * (hi - lo))))
    assert list(P.channel_counts) == [10, 10, 10, 10]


def test_partition_errors():
    with pytest.raises(PartitionError, match="boundaries not increasing"):
        build_partition(1.0, 3, 5, boundaries=[0, 0.5, 0.4, 1])
    with pytest.raises(PartitionError, match="zero channel count"):
        build_partition(1.0, 2, [3, 0])


def test_coordinate_function_examples():
    P = build_partition(1.0, 2, 10)
    z = coordinate_function([5, 0], P)
    np.testing.assert_allclose(z([0.0, 0.3, 0.49, 0.5, 0.9, 1.0]), [0.5, 0.5, 0.5, 0, 0, 0])
    assert np.all(coordinate_function([0, 0], P).values == 0)
    np.testing.assert_allclose(coordinate_function([10, 10], P).values, 1.0)
    with pytest.raises(PartitionError):
        coordinate_function([1, 2, 3], P)


def test_compartment_average_examples():
    P2 = build_partition(1.0, 2, 10)
    g = aligned_grid(1.0, 2)
    x = g.nodes
    assert compartment_average(np.full(x.size, 3.0), 1, P2, g) == pytest.approx(3.0)
    assert compartment_average(x, 0, P2, g) == pytest.approx(0.25, abs=1e-14)
    assert compartment_average(x, 1, P2, g) == pytest.approx(0.75, abs=1e-14)
    # sqrt(2) sin(pi x) averages to 2 sqrt(2)/pi; trapezoid error O(h^2)
    P1 = build_partition(1.0, 1, 10)
    g = Grid(1.0, 1023)
    phi1 = sine_basis(g, 1)[0]
    assert compartment_average(phi1, 0, P1, g) == pytest.approx(2 * np.sqrt(2) / np.pi, rel=1e-6)


def test_misaligned_grid():
    P = build_partition(1.0, 3, 10)
    with pytest.raises(PartitionError, match="misaligned"):
        compartment_average(np.zeros(66), 0, P, Grid(1.0, 64))


def test_to_spectral_examples():
    g = Grid(1.0, 511)
    c = to_spectral(sine_basis(g, 3)[2], 10, grid=g).coeffs
    expect = np.zeros(10)
    expect[2] = 1.0
    np.testing.assert_allclose(c, expect, atol=1e-6)
    assert np.all(to_spectral(np.zeros(g.m + 2), 8, grid=g).coeffs == 0)
    # f = 1 on [0, 1]: exact antiderivative on the single compartment
    one = PiecewiseConstantField([1.0], build_partition(1.0, 1, 1))
    c = to_spectral(one, 9).coeffs
    i = np.arange(1, 10)
    np.testing.assert_allclose(c, np.where(i % 2 == 1, 2 * np.sqrt(2) / (np.pi * i), 0.0), atol=1e-14)
    # cross-check against quadrature on a fine grid
    cq = to_spectral(np.ones(g.m + 2), 9, grid=g).coeffs
    # trapezoid error grows like (pi i h)^2 / 12
    np.testing.assert_allclose(cq[::2], c[::2], rtol=1e-3)
    np.testing.assert_allclose(cq[1::2], 0.0, atol=1e-12)


def test_scale_norm_examples():
    e1 = SpectralField(np.array([1.0, 0, 0]), 1.0)
    assert scale_norm(e1, -1.0) == pytest.approx((1 + np.pi ** 2) ** -0.5)
    assert scale_norm(e1, -1.0) == pytest.approx(0.3033, abs=1e-4)
    rng = np.random.default_rng(0)
    c = rng.normal(size=20)
    assert scale_norm(SpectralField(c, 2.0), 0.0) == pytest.approx(np.linalg.norm(c))


def test_scale_norm_truncation_refinement():
    one = PiecewiseConstantField([1.0], build_partition(1.0, 1, 1))
    coarse = scale_norm(to_spectral(one, 10_000), -1.0)
    ref = scale_norm(to_spectral(one, 100_000), -1.0)
    assert abs(coarse / ref - 1) <= 1e-4


def test_dual_norm_self_check_refines(caplog):
    P = build_partition(1.0, 64, 1)
    field = PiecewiseConstantField(np.eye(64)[3], P)
    with caplog.at_level("WARNING"):
        val = dual_norm(field, 0.1, n_spec=8)
    assert "drift" in caplog.text
    assert val == pytest.approx(scale_norm(to_spectral(field, 16), -0.1))


def test_indicator_norms_shrink_with_compartment_size():
    n4 = indicator_dual_norms_sq(build_partition(1.0, 4, 1), 1.0)
    n16 = indicator_dual_norms_sq(build_partition(1.0, 16, 1), 1.0)
    # H_-1 norms of indicators are bounded by their L2 norms |D_k|
    assert np.all(n4 <= 0.25 + 1e-12) and np.all(n16 <= 1 / 16 + 1e-12)
    assert n16.max() < n4.min()


def test_sine_integrals_match_quadrature():
    P = build_partition(1.0, 8, 1)
    g = aligned_grid(1.0, 8, min_cells=2048)
    quad = integration_matrix(P, g) @ sine_basis(g, 5).T
    np.testing.assert_allclose(sine_integrals(P, 5), quad, atol=1e-6)


def test_discrete_orthonormality():
    g = Grid(1.0, 63)
    B = sine_basis(g, 20)
    np.testing.assert_allclose((B * g.weights) @ B.T, np.eye(20), atol=1e-12)
