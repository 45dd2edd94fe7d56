"""Property tests for the function-space layer."""
import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pdmp_limits.spatial import (
    SpectralField,
    aligned_grid,
    build_partition,
    compartment_average,
    coordinate_function,
    scale_norm,
    to_spectral,
)

coeffs = arrays(np.float64, st.integers(1, 64), elements=st.floats(-10, 10, allow_nan=False))
lengths = st.sampled_from([0.5, 1.0, 3.0])


@settings(max_examples=100)
@given(coeffs, lengths)
def test_scale_norm_monotone_in_alpha(c, l):
    f = SpectralField(c, l)
    norms = [scale_norm(f, a) for a in (-2, -1, 0, 1)]
    for lo, hi in zip(norms, norms[1:]):
        assert lo <= hi * (1 + 1e-12)


@settings(max_examples=100)
@given(coeffs, lengths, st.floats(0, 3))
def test_negative_scale_embeds_into_l2(c, l, alpha):
    f = SpectralField(c, l)
    assert scale_norm(f, -alpha) <= scale_norm(f, 0) * (1 + 1e-12)
    assert np.isclose(scale_norm(f, 0), np.linalg.norm(c), rtol=1e-14)


@st.composite
def partitions_with_states(draw):
    p = draw(st.integers(1, 8))
    l = draw(lengths)
    counts = draw(st.lists(st.integers(1, 50), min_size=p, max_size=p))
    P = build_partition(l, p, counts)
    th = [np.array([draw(st.integers(0, c)) for c in counts]) for _ in range(2)]
    return P, th[0], th[1]


@settings(max_examples=100, deadline=None)
@given(partitions_with_states())
def test_coordinate_function_isometry(args):
    P, a, b = args
    g = aligned_grid(P.l, P.p, min_cells=256)
    mid = 0.5 * (g.nodes[:-1] + g.nodes[1:])
    diff = coordinate_function(a, P)(mid) - coordinate_function(b, P)(mid)
    direct = g.h * np.sum(diff ** 2)
    exact = np.sum(P.measures * ((a - b) / P.channel_counts) ** 2)
    assert np.isclose(direct, exact, rtol=1e-12, atol=1e-15)
    # the sine coefficients see the same L2 distance up to truncation
    spec = to_spectral(coordinate_function(a - b, P), 4096)
    assert scale_norm(spec, 0) ** 2 <= exact * (1 + 1e-9)


@settings(max_examples=100, deadline=None)
@given(partitions_with_states())
def test_average_of_coordinate_function(args):
    P, a, _ = args
    g = aligned_grid(P.l, P.p)
    z = coordinate_function(a, P)
    frac = a / P.channel_counts
    vec = z.on_grid(g)
    for k in range(P.p):
        assert compartment_average(z, k, P, g) == frac[k]
        # sampled on nodes, only the two half-weighted interface nodes differ
        left = frac[k - 1] if k > 0 else frac[k]
        right = frac[k + 1] if k + 1 < P.p else frac[k]
        blur = g.h * (abs(left - frac[k]) + abs(right - frac[k])) / (4 * P.measures[k])
        assert abs(compartment_average(vec, k, P, g) - frac[k]) <= blur + 1e-14
