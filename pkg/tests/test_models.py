import numpy as np
import pytest
from scipy.integrate import quad

from pdmp_limits.engine import HybridState
from pdmp_limits.models import (
    CompartmentalSpec,
    GaussianKernel,
    ModelError,
    NeuralFieldSpec,
    ScalarFunction,
    default_compartmental,
    default_neural_field,
    dirichlet_laplacian,
    drift_F,
    drift_jacobians,
    generator_drift,
    limit_covariance_form,
    quad_var_form,
    reaction_rates,
)
from pdmp_limits.spatial import Grid, aligned_grid, build_partition, sine_basis

C = ScalarFunction.constant


def const_comp(p=1, l=10, a=1.0, b=2.0, cells=64):
    P = build_partition(1.0, p, l)
    return CompartmentalSpec(C(a), C(b), 1.0, P, aligned_grid(1.0, p, min_cells=cells))


def flat_nf(p=1, l=10, f0=0.4):
    P = build_partition(1.0, p, l)
    return NeuralFieldSpec(C(f0), GaussianKernel(0.0, 0.2), P, aligned_grid(1.0, p))


def state(spec, theta, u=None):
    if spec.has_potential and u is None:
        u = np.zeros(spec.grid.m + 2)
    return HybridState(0.0, u, np.asarray(theta))


def test_compartmental_rates_plug_in():
    spec = const_comp()
    np.testing.assert_allclose(reaction_rates(state(spec, [5]), spec), [5.0, 10.0])


def test_saturated_compartments_have_no_openings():
    spec = default_compartmental(build_partition(1.0, 4, 12), aligned_grid(1.0, 4))
    u = np.sin(np.pi * spec.grid.nodes) * 0.7
    r = reaction_rates(state(spec, [12] * 4, u), spec)
    np.testing.assert_array_equal(r[:4], 0.0)
    r = reaction_rates(state(spec, [0] * 4, u), spec)
    np.testing.assert_array_equal(r[4:], 0.0)


def test_neural_field_rates_decoupled():
    spec = flat_nf()
    np.testing.assert_allclose(reaction_rates(state(spec, [3]), spec), [4.0, 3.0])


def test_negative_rate_aborts():
    spec = CompartmentalSpec(C(1.0), C(2.0), 1.0, build_partition(1.0, 1, 10), Grid(1.0, 3))
    # bypass the construction-time probe to reach the evaluation guard
    spec.a = C(-1.0)
    with pytest.raises(ModelError, match="negative transition rate"):
        reaction_rates(state(spec, [5]), spec)
    with pytest.raises(ModelError):
        CompartmentalSpec(C(-1.0), C(2.0), 1.0, build_partition(1.0, 1, 10), Grid(1.0, 3))


def test_generator_drift_examples():
    spec = const_comp()
    assert generator_drift(state(spec, [5]), spec).values == pytest.approx([-0.5])
    nf = flat_nf()
    assert generator_drift(state(nf, [4]), nf).values == pytest.approx([0.0])


@pytest.mark.parametrize("kind", ["compartmental", "neural_field"])
def test_generator_drift_matches_reaction_enumeration(kind):
    P = build_partition(1.0, 4, [5, 9, 13, 7])
    g = aligned_grid(1.0, 4)
    spec = default_compartmental(P, g) if kind == "compartmental" else default_neural_field(P, g)
    u = 0.8 * np.sin(np.pi * g.nodes) if spec.has_potential else None
    theta = np.array([2, 9, 4, 6])
    rates = reaction_rates(state(spec, theta, u), spec)
    # brute force: sum over reactions of rate * change of z
    expect = np.zeros(4)
    for j, r in enumerate(rates):
        k, sign = j % 4, (1 if j < 4 else -1)
        jump = np.zeros(4)
        jump[k] = sign / P.channel_counts[k]
        expect += r * jump
    np.testing.assert_allclose(generator_drift(state(spec, theta, u), spec).values, expect, rtol=1e-14)


def test_drift_F_examples():
    spec = const_comp()
    n = spec.grid.m + 2
    np.testing.assert_allclose(drift_F(np.zeros(n), np.full(n, 1 / 3), spec), 0.0, atol=1e-15)
    nf = flat_nf(f0=0.3)
    p = np.linspace(0, 1, nf.grid.m + 2)
    np.testing.assert_allclose(drift_F(None, p, nf), -p + 0.3)
    # compartment vectors are expanded to the grid
    np.testing.assert_allclose(drift_F(np.zeros(n), [1 / 3], spec), 0.0, atol=1e-15)


def test_neural_field_kernel_quadrature_against_adaptive_oracle():
    P = build_partition(1.0, 4, 10)
    g = aligned_grid(1.0, 4, min_cells=2048)
    spec = default_neural_field(P, g)
    prof = lambda y: 0.5 + 0.3 * np.sin(np.pi * y) * np.cos(2 * y)  # noqa: E731
    s = spec.field_input(prof(g.nodes))
    w = spec.w
    for j in [0, 300, 1024, 1700, 2048]:
        x = g.nodes[j]
        ref, _ = quad(lambda y: float(w(x, y)) * prof(y), 0.0, 1.0, epsabs=1e-13, epsrel=1e-13, limit=200)
        assert abs(s[j] - ref) <= 1e-6


def test_quad_var_form_examples():
    spec = const_comp()
    one = np.ones(spec.grid.m + 2)
    st = state(spec, [5])
    assert quad_var_form(st, spec, one, one) == pytest.approx(0.15)
    assert quad_var_form(st, spec, 0 * one, one) == 0.0
    rng = np.random.default_rng(1)
    phi = rng.normal(size=one.size)
    assert quad_var_form(st, spec, 2 * phi, 2 * phi) == pytest.approx(4 * quad_var_form(st, spec, phi, phi))


def test_quad_var_form_brute_force_and_trace_identity():
    P = build_partition(1.0, 4, [5, 9, 13, 7])
    g = aligned_grid(1.0, 4)
    spec = default_compartmental(P, g)
    u = 0.5 * np.sin(np.pi * g.nodes)
    st = state(spec, [1, 3, 12, 7], u)
    rates = reaction_rates(st, spec)
    w = g.weights
    # jump of z under reaction j, sampled on the grid (interfaces shared half/half)
    jumps = []
    for j in range(8):
        k, sign = j % 4, (1 if j < 4 else -1)
        jumps.append(sign * spec.expansion[:, k] / P.channel_counts[k])
    rng = np.random.default_rng(2)
    phi, psi = rng.normal(size=(2, g.m + 2))
    brute = sum(r * (w * dz) @ phi * ((w * dz) @ psi) for r, dz in zip(rates, jumps))
    assert quad_var_form(st, spec, phi, psi) == pytest.approx(brute, rel=1e-12)
    # trace over a w-orthonormal basis equals sum_j rate_j ||dz_j||^2
    Q, _ = np.linalg.qr(rng.normal(size=(g.m + 2, g.m + 2)))
    basis = Q.T / np.sqrt(w)
    tr = sum(quad_var_form(st, spec, b, b) for b in basis)
    direct = sum(r * (w * dz) @ dz for r, dz in zip(rates, jumps))
    assert tr == pytest.approx(direct, rel=1e-10)


def test_limit_covariance_form_examples():
    spec = const_comp()
    n = spec.grid.m + 2
    one = np.ones(n)
    assert limit_covariance_form(np.zeros(n), np.full(n, 0.5), spec, one, one) == pytest.approx(1.5)
    zero = const_comp(a=0.0, b=0.0)
    assert limit_covariance_form(np.zeros(n), np.full(n, 0.5), zero, one, one) == 0.0


def test_jacobian_examples():
    spec = const_comp(p=2)
    g = spec.grid
    n = g.m + 2
    J = drift_jacobians(np.zeros(n), np.full(n, 0.4), spec)
    assert np.all(J.pu == 0)
    np.testing.assert_allclose(J.pp, -3.0 * np.eye(n))
    # the sampled first sine mode is an exact eigenvector of the discrete Laplacian
    phi1 = sine_basis(g, 1)[0]
    lam = -(2 / g.h ** 2) * (1 - np.cos(np.pi * g.h))
    np.testing.assert_allclose(dirichlet_laplacian(g) @ phi1, lam * phi1, atol=1e-9)
    assert abs(lam + np.pi ** 2) <= np.pi ** 4 * g.h ** 2 / 12 * 1.01
    nf = flat_nf()
    np.testing.assert_allclose(drift_jacobians(None, np.full(nf.grid.m + 2, 0.2), nf).pp,
                               -np.eye(nf.grid.m + 2))


def _fd_check(fun, jac, x, rng, eps=1e-5):
    for _ in range(20):
        d = rng.normal(size=x.size)
        fd = (fun(x + eps * d) - fun(x - eps * d)) / (2 * eps)
        an = jac @ d
        assert np.linalg.norm(fd - an) <= 1e-4 * np.linalg.norm(an)


def test_jacobians_match_finite_differences():
    rng = np.random.default_rng(3)
    P = build_partition(1.0, 4, 10)
    g = aligned_grid(1.0, 4, min_cells=16)
    spec = default_compartmental(P, g)
    n = g.m + 2
    L = dirichlet_laplacian(g)
    u = rng.normal(size=n) * 0.5
    u[[0, -1]] = 0
    p = rng.uniform(0.1, 0.9, size=n)
    J = drift_jacobians(u, p, spec)
    full = np.block([[J.uu, J.up], [J.pu, J.pp]])

    def drift(x):
        uu, pp = x[:n], x[n:]
        return np.concatenate([L @ uu + spec.drift_B(uu, pp), spec.drift_F(uu, pp)])

    _fd_check(drift, full, np.concatenate([u, p]), rng)
    nf = default_neural_field(P, g)
    Jn = drift_jacobians(None, p, nf).pp
    _fd_check(lambda q: nf.drift_F(None, q), Jn, p, rng)


def test_neural_field_coupling_bound():
    P = build_partition(1.0, 8, 10)
    spec = default_neural_field(P, aligned_grid(1.0, 8))
    assert np.all(np.abs(spec.W_bar) <= spec.w.sup * P.measures[None, :] + 1e-12)


def test_negative_limit_variance_detected():
    spec = const_comp(a=1.0, b=2.0)
    n = spec.grid.m + 2
    with pytest.raises(ModelError, match="negative limit variance"):
        spec.sigma2(np.zeros(n), np.full(n, -2.0))
    # roundoff-sized negatives are clamped
    tiny = CompartmentalSpec(C(0.0), C(1e-13), 1.0, spec.partition, spec.grid)
    assert np.all(tiny.sigma2(np.zeros(n), np.full(n, -1.0)) == 0.0)
