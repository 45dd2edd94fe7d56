"""Spatial domain, compartment partitions and Hilbert-scale norms.

Everything lives on the interval [0, l] with Dirichlet boundary.  Grid
vectors are stored on all ``m + 2`` nodes ``x_j = j*h`` (boundary nodes
included) so that quadratures of functions which do not vanish at the
boundary, such as channel fractions, are exact trapezoid sums.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_N_SPEC = 256


class PartitionError(ValueError):
    """Invalid partition or grid/partition mismatch."""


@dataclass(frozen=True)
class Partition:
    """Decomposition of [0, l] into compartments holding ``channel_counts`` units."""

    l: float
    boundaries: np.ndarray
    channel_counts: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.boundaries, dtype=float)
        c = np.asarray(self.channel_counts)
        if b.ndim != 1 or b.size < 2:
            raise PartitionError("boundaries need at least two entries")
        if np.any(np.diff(b) <= 0):
            raise PartitionError("boundaries not increasing")
        if abs(b[0]) > 1e-12 or abs(b[-1] - self.l) > 1e-12 * max(1.0, self.l):
            raise PartitionError("boundaries must start at 0 and end at l")
        if c.size != b.size - 1:
            raise PartitionError("one channel count per compartment required")
        if np.any(c != np.round(c)) or np.any(c < 1):
            raise PartitionError("channel counts must be positive integers")
        b = b.copy()
        b[0], b[-1] = 0.0, float(self.l)
        b.setflags(write=False)
        c = c.astype(np.int64)
        c.setflags(write=False)
        object.__setattr__(self, "boundaries", b)
        object.__setattr__(self, "channel_counts", c)

    @property
    def p(self) -> int:
        return self.channel_counts.size

    @property
    def measures(self) -> np.ndarray:
        return np.diff(self.boundaries)

    # d = 1: diameter equals measure
    @property
    def diameters(self) -> np.ndarray:
        return self.measures

    @property
    def nu_plus(self) -> float:
        return float(self.measures.max())

    @property
    def nu_minus(self) -> float:
        return float(self.measures.min())

    @property
    def delta_plus(self) -> float:
        return float(self.diameters.max())

    @property
    def delta_minus(self) -> float:
        return float(self.diameters.min())

    @property
    def ell_plus(self) -> int:
        return int(self.channel_counts.max())

    @property
    def ell_minus(self) -> int:
        return int(self.channel_counts.min())

    @property
    def scaling(self) -> float:
        """Fluctuation rescaling factor ``ell_minus / nu_plus``."""
        return self.ell_minus / self.nu_plus

    @property
    def heterogeneity(self) -> float:
        """``ell_minus*nu_minus / (ell_plus*nu_plus)``; equals 1 for uniform partitions."""
        return (self.ell_minus * self.nu_minus) / (self.ell_plus * self.nu_plus)

    def locate(self, x) -> np.ndarray:
        """Compartment index containing ``x`` (right-continuous, ``x = l`` maps to the last)."""
        k = np.searchsorted(self.boundaries, np.asarray(x, dtype=float), side="right") - 1
        return np.clip(k, 0, self.p - 1)

    def to_dict(self) -> dict:
        return {
            "l": float(self.l),
            "boundaries": [float(v) for v in self.boundaries],
            "channel_counts": [int(v) for v in self.channel_counts],
        }


def build_partition(
    l: float,
    p: int,
    channels: int | Sequence[int] | Callable[[float, float], int],
    boundaries: Sequence[float] | None = None,
) -> Partition:
    """Build a partition of [0, l] into ``p`` compartments.

    ``channels`` is either one count for every compartment, one count per
    compartment, or a rule ``(left, right) -> count`` evaluated on each
    compartment.  Boundaries are uniform unless given explicitly.
    """
    if p < 1:
        raise PartitionError("p must be >= 1")
    if boundaries is None:
        b = np.linspace(0.0, l, p + 1)
    else:
        b = np.asarray(boundaries, dtype=float)
        if b.size != p + 1:
            raise PartitionError(f"expected {p + 1} boundaries, got {b.size}")
    if callable(channels):
        counts = [channels(float(lo), float(hi)) for lo, hi in zip(b[:-1], b[1:])]
    elif np.ndim(channels) == 0:
        counts = [channels] * p
    else:
        counts = list(channels)
    if any(int(c) < 1 for c in counts):
        raise PartitionError("zero channel count")
    return Partition(float(l), b, np.asarray(counts))


@dataclass(frozen=True)
class Grid:
    """Uniform grid with ``m`` interior nodes on [0, l]."""

    l: float
    m: int

    def __post_init__(self):
        if self.m < 1:
            raise PartitionError("grid needs m >= 1 interior nodes")

    @property
    def h(self) -> float:
        return self.l / (self.m + 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.m + 2) * self.h

    @property
    def weights(self) -> np.ndarray:
        """Composite trapezoid weights on all nodes."""
        w = np.full(self.m + 2, self.h)
        w[0] = w[-1] = 0.5 * self.h
        return w

    def integrate(self, f) -> np.ndarray:
        """Trapezoid integral along the last axis."""
        return np.asarray(f) @ self.weights

    def boundary_nodes(self, partition: Partition) -> np.ndarray:
        """Node indices of the compartment boundaries; raises if misaligned."""
        if abs(partition.l - self.l) > 1e-12 * max(1.0, self.l):
            raise PartitionError("grid and partition have different lengths")
        pos = partition.boundaries / self.h
        idx = np.round(pos).astype(np.int64)
        if np.any(np.abs(pos - idx) > 1e-8):
            raise PartitionError("misaligned grid: compartment boundaries must be grid nodes")
        if np.any(np.diff(idx) < 1):
            raise PartitionError("misaligned grid: every compartment needs a full grid cell")
        return idx

    def to_dict(self) -> dict:
        return {"l": float(self.l), "m": int(self.m)}


def aligned_grid(l: float, p: int, cells_per_compartment: int = 2, min_cells: int = 64) -> Grid:
    """Smallest uniform grid aligned with a uniform ``p``-partition and at least ``min_cells`` cells."""
    cells = p * cells_per_compartment
    while cells < min_cells:
        cells *= 2
    return Grid(l, cells - 1)


@dataclass(frozen=True)
class PiecewiseConstantField:
    values: np.ndarray
    partition: Partition

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape[-1:] != (self.partition.p,):
            raise PartitionError("field needs one value per compartment")
        object.__setattr__(self, "values", v)

    def __call__(self, x) -> np.ndarray:
        return self.values[..., self.partition.locate(x)]

    def on_grid(self, grid: Grid) -> np.ndarray:
        """Sample on grid nodes; interface nodes get the mean of both sides."""
        return self.values @ node_expansion(self.partition, grid).T


def coordinate_function(theta, partition: Partition) -> PiecewiseConstantField:
    """Fraction of open channels ``theta_k / l(k)`` on every compartment."""
    theta = np.asarray(theta)
    if theta.shape[-1] != partition.p:
        raise PartitionError(
            f"theta has {theta.shape[-1]} entries but the partition has {partition.p} compartments"
        )
    return PiecewiseConstantField(theta / partition.channel_counts, partition)


def averaging_matrix(partition: Partition, grid: Grid) -> np.ndarray:
    """Matrix ``W`` with ``(W @ u)[k] = |D_k|^-1 * trapezoid integral of u over D_k``."""
    return integration_matrix(partition, grid) / partition.measures[:, None]


def integration_matrix(partition: Partition, grid: Grid) -> np.ndarray:
    """Matrix ``C`` with ``(C @ f)[k]`` the trapezoid integral of ``f`` over ``D_k``."""
    idx = grid.boundary_nodes(partition)
    C = np.zeros((partition.p, grid.m + 2))
    h = grid.h
    for k in range(partition.p):
        a, b = idx[k], idx[k + 1]
        C[k, a : b + 1] = h
        C[k, a] = C[k, b] = 0.5 * h
    return C


def node_expansion(partition: Partition, grid: Grid) -> np.ndarray:
    """Matrix mapping compartment values to node values (interfaces averaged)."""
    idx = grid.boundary_nodes(partition)
    E = np.zeros((grid.m + 2, partition.p))
    for k in range(partition.p):
        E[idx[k] : idx[k + 1] + 1, k] = 1.0
    return E / E.sum(axis=1, keepdims=True)


def compartment_average(u, k: int, partition: Partition, grid: Grid) -> float:
    """Average of ``u`` over compartment ``k``.

    Grid vectors use the trapezoid rule.  A :class:`PiecewiseConstantField`
    on the same partition is averaged exactly; sampling it on the grid first
    would blur the interface nodes, which carry the mean of both sides.
    """
    if isinstance(u, PiecewiseConstantField):
        if u.partition is not partition and not np.array_equal(u.partition.boundaries, partition.boundaries):
            raise PartitionError("field lives on a different partition")
        return float(u.values[..., k])
    idx = grid.boundary_nodes(partition)
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != grid.m + 2:
        raise PartitionError("grid vector must include the boundary nodes")
    seg = u[idx[k] : idx[k + 1] + 1]
    return float(grid.h * (seg.sum() - 0.5 * (seg[0] + seg[-1])) / partition.measures[k])


def sine_basis(grid: Grid, n: int) -> np.ndarray:
    """Rows ``phi_i(x_j) = sqrt(2/l) sin(pi i x_j / l)`` for ``i = 1..n``."""
    i = np.arange(1, n + 1)[:, None]
    return np.sqrt(2.0 / grid.l) * np.sin(np.pi * i * grid.nodes[None, :] / grid.l)


def sine_integrals(partition: Partition, n: int) -> np.ndarray:
    """Exact integrals of ``phi_i`` over each compartment, shape ``(p, n)``."""
    l = partition.l
    i = np.arange(1, n + 1)[None, :]
    lo = partition.boundaries[:-1, None]
    hi = partition.boundaries[1:, None]
    return np.sqrt(2.0 / l) * l / (np.pi * i) * (
        np.cos(np.pi * i * lo / l) - np.cos(np.pi * i * hi / l)
    )


def laplacian_eigenvalues(l: float, n: int) -> np.ndarray:
    """Continuous Dirichlet eigenvalues ``pi^2 i^2 / l^2``, ``i = 1..n``."""
    i = np.arange(1, n + 1)
    return (np.pi * i / l) ** 2


@dataclass(frozen=True)
class SpectralField:
    """Coefficients of a function in the Dirichlet sine eigenbasis."""

    coeffs: np.ndarray
    l: float = 1.0
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def n(self) -> int:
        return self.coeffs.shape[-1]

    def weights(self, alpha: float) -> np.ndarray:
        return (1.0 + laplacian_eigenvalues(self.l, self.n)) ** alpha


def to_spectral(f, n_spec: int = DEFAULT_N_SPEC, grid: Grid | None = None) -> SpectralField:
    """Sine coefficients ``c_i = (f, phi_i)``.

    Piecewise-constant fields are integrated exactly; grid vectors need
    ``grid`` and use the trapezoid rule.
    """
    if n_spec < 1:
        raise ValueError("n_spec must be >= 1")
    if isinstance(f, PiecewiseConstantField):
        S = sine_integrals(f.partition, n_spec)
        return SpectralField(f.values @ S, f.partition.l)
    if grid is None:
        raise ValueError("a grid is required for grid vectors")
    f = np.asarray(f, dtype=float)
    if f.shape[-1] != grid.m + 2:
        raise PartitionError("grid vector must include the boundary nodes")
    B = sine_basis(grid, n_spec) * grid.weights
    return SpectralField(f @ B.T, grid.l)


def scale_norm(f: SpectralField, alpha: float) -> float | np.ndarray:
    """Norm in the Hilbert scale ``H_alpha`` built on the Dirichlet Laplacian."""
    return np.sqrt(np.sum(f.coeffs ** 2 * f.weights(alpha), axis=-1))


def dual_norm(
    field_: PiecewiseConstantField, alpha: float, n_spec: int = DEFAULT_N_SPEC, rtol: float = 1e-3
) -> float | np.ndarray:
    """``H_{-alpha}`` norm of a piecewise-constant field with a truncation self-check.

    The sum is recomputed with ``2*n_spec`` modes; a relative drift above
    ``rtol`` is logged and the refined value returned.
    """
    coarse = scale_norm(to_spectral(field_, n_spec), -alpha)
    fine = scale_norm(to_spectral(field_, 2 * n_spec), -alpha)
    drift = np.max(np.abs(fine - coarse) / np.maximum(np.abs(fine), 1e-300))
    if drift > rtol:
        log.warning("spectral truncation drift %.2e exceeds %.0e at N_spec=%d", drift, rtol, n_spec)
        return fine
    return coarse


def indicator_dual_norms_sq(partition: Partition, alpha: float, n_spec: int = DEFAULT_N_SPEC) -> np.ndarray:
    """Squared ``H_{-alpha}`` norms of the compartment indicators, shape ``(p,)``."""
    eye = PiecewiseConstantField(np.eye(partition.p), partition)
    return np.asarray(dual_norm(eye, alpha, n_spec)) ** 2
