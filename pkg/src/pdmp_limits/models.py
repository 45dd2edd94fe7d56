"""The two model families: compartmental excitable membrane and neural field.

Rates are stored as a length ``2p`` vector: entries ``0..p-1`` are the
opening (activation) rates of each compartment, entries ``p..2p-1`` the
closing (deactivation) rates.  All rate functions accept a leading batch
axis so a whole ensemble can be evaluated at once.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .spatial import (
    Grid,
    Partition,
    averaging_matrix,
    coordinate_function,
    integration_matrix,
    node_expansion,
)

COMPARTMENTAL = "compartmental"
NEURAL_FIELD = "neural_field"

NEGATIVE_VARIANCE_TOL = 1e-12


class ModelError(ValueError):
    """Model functions produced an invalid value (negative rate or variance)."""


@dataclass(frozen=True)
class ScalarFunction:
    """Constant or logistic ``scale / (1 + exp(-gain*(v - shift)))`` scalar function."""

    kind: str = "logistic"
    value: float = 0.0
    scale: float = 1.0
    gain: float = 1.0
    shift: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "logistic"):
            raise ValueError(f"unknown function kind {self.kind!r}")

    @classmethod
    def constant(cls, value: float) -> "ScalarFunction":
        return cls(kind="constant", value=float(value))

    @classmethod
    def logistic(cls, gain: float, shift: float = 0.0, scale: float = 1.0) -> "ScalarFunction":
        return cls(kind="logistic", gain=float(gain), shift=float(shift), scale=float(scale))

    def __call__(self, v):
        v = np.asarray(v, dtype=float)
        if self.kind == "constant":
            return np.full_like(v, self.value)
        return self.scale * _expit(self.gain * (v - self.shift))

    def derivative(self, v):
        v = np.asarray(v, dtype=float)
        if self.kind == "constant":
            return np.zeros_like(v)
        s = _expit(self.gain * (v - self.shift))
        return self.scale * self.gain * s * (1.0 - s)

    @property
    def sup(self) -> float:
        """Upper bound of the function over the real line."""
        return self.value if self.kind == "constant" else max(self.scale, 0.0)

    def to_dict(self) -> dict:
        if self.kind == "constant":
            return {"kind": "constant", "value": self.value}
        return {"kind": "logistic", "scale": self.scale, "gain": self.gain, "shift": self.shift}

    @classmethod
    def from_dict(cls, d: dict) -> "ScalarFunction":
        return cls(**d)


def _expit(x):
    # numerically safe logistic
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass(frozen=True)
class GaussianKernel:
    """Connectivity ``w(x, y) = amplitude * exp(-(x - y)^2 / (2 width^2))``."""

    amplitude: float = 2.0
    width: float = 0.2

    def __call__(self, x, y):
        d = np.subtract.outer(np.asarray(x, float), np.asarray(y, float))
        return self.amplitude * np.exp(-0.5 * (d / self.width) ** 2)

    @property
    def sup(self) -> float:
        return abs(self.amplitude)

    def to_dict(self) -> dict:
        return {"kind": "gaussian", "amplitude": self.amplitude, "width": self.width}


@dataclass(frozen=True)
class JacobianBlocks:
    """Grid-level linearisation of the drift; ``None`` blocks are absent."""

    uu: Optional[np.ndarray]
    up: Optional[np.ndarray]
    pu: Optional[np.ndarray]
    pp: np.ndarray


def dirichlet_laplacian(grid: Grid) -> np.ndarray:
    """Second-difference Laplacian on all nodes; boundary rows are zero."""
    n = grid.m + 2
    L = np.zeros((n, n))
    i = np.arange(1, n - 1)
    L[i, i] = -2.0
    L[i, i - 1] = 1.0
    L[i, i + 1] = 1.0
    L[:, 0] = 0.0
    L[:, -1] = 0.0
    return L / grid.h ** 2


class _ModelBase:
    partition: Partition
    grid: Grid
    kind: str

    def _setup(self):
        self.avg_matrix = averaging_matrix(self.partition, self.grid)
        self.int_matrix = integration_matrix(self.partition, self.grid)
        self.expansion = node_expansion(self.partition, self.grid)
        idx = self.grid.boundary_nodes(self.partition)
        # compartment owning each grid cell [x_j, x_{j+1}]
        self.cell_owner = np.repeat(np.arange(self.partition.p), np.diff(idx))

    @property
    def p(self) -> int:
        return self.partition.p

    @property
    def has_potential(self) -> bool:
        return self.kind == COMPARTMENTAL

    def _check_rates(self, up, down):
        if np.any(up < 0) or np.any(down < 0):
            bad = np.min(np.minimum(up, down))
            raise ModelError(f"negative transition rate {bad:.3e}: check the model functions")

    def generator_drift_values(self, rates) -> np.ndarray:
        """``(up_k - down_k) / l(k)`` per compartment."""
        p = self.p
        return (rates[..., :p] - rates[..., p:]) / self.partition.channel_counts

    def _cell_l2(self, g_left, g_right) -> np.ndarray:
        # trapezoid of a per-cell integrand sampled at left/right cell ends
        return 0.5 * self.grid.h * np.sum(g_left ** 2 + g_right ** 2, axis=-1)

    def _checked_sigma2(self, s2):
        if np.any(s2 < -NEGATIVE_VARIANCE_TOL):
            raise ModelError(f"negative limit variance density {s2.min():.3e}")
        return np.maximum(s2, 0.0)


@dataclass(eq=False)
class CompartmentalSpec(_ModelBase):
    """Excitable membrane: ``u' = Lap u + p (v_bar - u)``, ``p' = a(u)(1-p) - b(u)p``."""

    a: ScalarFunction
    b: ScalarFunction
    v_bar: float
    partition: Partition
    grid: Grid
    kind: str = field(default=COMPARTMENTAL, init=False)

    def __post_init__(self):
        self._setup()
        probe = np.linspace(-10.0, 10.0, 201)
        if np.any(self.a(probe) < 0) or np.any(self.b(probe) < 0):
            raise ModelError("rate functions a, b must be nonnegative")

    def potential_averages(self, u) -> np.ndarray:
        return np.asarray(u) @ self.avg_matrix.T

    def rates(self, u, theta) -> np.ndarray:
        ubar = self.potential_averages(u)
        counts = self.partition.channel_counts
        up = self.a(ubar) * (counts - theta)
        down = self.b(ubar) * theta
        self._check_rates(up, down)
        return np.concatenate([up, down], axis=-1)

    def rate_bound(self) -> float:
        return float(self.partition.channel_counts.sum() * max(self.a.sup, self.b.sup))

    def drift_F(self, u, p) -> np.ndarray:
        u = np.asarray(u, float)
        p = np.asarray(p, float)
        return self.a(u) * (1.0 - p) - self.b(u) * p

    def drift_B(self, u, p) -> np.ndarray:
        return np.asarray(p) * (self.v_bar - np.asarray(u))

    def sigma2(self, u, p) -> np.ndarray:
        u = np.asarray(u, float)
        p = np.asarray(p, float)
        return self._checked_sigma2(self.a(u) * (1.0 - p) + self.b(u) * p)

    def jacobians(self, u, p) -> JacobianBlocks:
        u = np.asarray(u, float)
        p = np.asarray(p, float)
        return JacobianBlocks(
            uu=dirichlet_laplacian(self.grid) - np.diag(p),
            up=np.diag(self.v_bar - u),
            pu=np.diag(self.a.derivative(u) * (1.0 - p) - self.b.derivative(u) * p),
            pp=-np.diag(self.a(u) + self.b(u)),
        )

    def residual_density(self, u, theta) -> np.ndarray:
        """Squared L2 distance between the generator drift and ``F(U, z(theta))``."""
        u = np.asarray(u, float)
        z = theta / self.partition.channel_counts
        ubar = self.potential_averages(u)
        own = self.cell_owner
        zc = z[..., own]
        a_bar = self.a(ubar)[..., own]
        b_bar = self.b(ubar)[..., own]

        def g(uu):
            return (a_bar - self.a(uu)) * (1.0 - zc) - (b_bar - self.b(uu)) * zc

        return self._cell_l2(g(u[..., :-1]), g(u[..., 1:]))

    def to_dict(self) -> dict:
        return {"model": COMPARTMENTAL, "a": self.a.to_dict(), "b": self.b.to_dict(), "v_bar": self.v_bar}


@dataclass(eq=False)
class NeuralFieldSpec(_ModelBase):
    """Wilson-Cowan field: ``p' = -p + f(int w(x, y) p(y) dy)``."""

    f: ScalarFunction
    w: GaussianKernel
    partition: Partition
    grid: Grid
    kind: str = field(default=NEURAL_FIELD, init=False)

    def __post_init__(self):
        self._setup()
        x = self.grid.nodes
        self.kernel_nodes = self.w(x, x)
        # quadrature kernel: (K @ p)[i] = trapezoid of w(x_i, .) p(.)
        self.kernel_matrix = self.kernel_nodes * self.grid.weights[None, :]
        C = self.int_matrix
        self.W_bar = (C @ self.kernel_nodes @ C.T) / self.partition.measures[:, None]
        # node-to-compartment coupling: sum_j z_j int_{D_j} w(x_i, y) dy
        self.compartment_kernel = self.kernel_nodes @ C.T

    def rates(self, u, theta) -> np.ndarray:
        counts = self.partition.channel_counts
        drive = (theta / counts) @ self.W_bar.T
        up = counts * self.f(drive)
        down = np.asarray(theta, float)
        self._check_rates(up, down)
        return np.concatenate([up, down], axis=-1)

    def rate_bound(self) -> float:
        return float("inf")

    def field_input(self, p) -> np.ndarray:
        return np.asarray(p, float) @ self.kernel_matrix.T

    def drift_F(self, u, p) -> np.ndarray:
        p = np.asarray(p, float)
        return -p + self.f(self.field_input(p))

    def sigma2(self, u, p) -> np.ndarray:
        p = np.asarray(p, float)
        return self._checked_sigma2(p + self.f(self.field_input(p)))

    def jacobians(self, u, p) -> JacobianBlocks:
        n = self.grid.m + 2
        gain = self.f.derivative(self.field_input(p))
        return JacobianBlocks(None, None, None, -np.eye(n) + gain[:, None] * self.kernel_matrix)

    def residual_density(self, u, theta) -> np.ndarray:
        z = theta / self.partition.channel_counts
        own = self.cell_owner
        f_bar = self.f(z @ self.W_bar.T)[..., own]
        f_pt = self.f(z @ self.compartment_kernel.T)
        return self._cell_l2(f_bar - f_pt[..., :-1], f_bar - f_pt[..., 1:])

    def to_dict(self) -> dict:
        return {"model": NEURAL_FIELD, "f": self.f.to_dict(), "w": self.w.to_dict()}


ModelSpec = CompartmentalSpec | NeuralFieldSpec


def default_compartmental(partition: Partition, grid: Grid, kappa_a=2.0, kappa_b=2.0, v_bar=1.0):
    return CompartmentalSpec(
        ScalarFunction.logistic(kappa_a), ScalarFunction.logistic(-kappa_b), v_bar, partition, grid
    )


def default_neural_field(partition: Partition, grid: Grid, beta=4.0, s0=0.5, w0=2.0, rho=0.2):
    return NeuralFieldSpec(ScalarFunction.logistic(beta, s0), GaussianKernel(w0, rho), partition, grid)


# -- operation-level API ---------------------------------------------------


def reaction_rates(state, spec: ModelSpec) -> np.ndarray:
    """Length ``2p`` rate vector (openings, then closings) at a hybrid state."""
    return spec.rates(state.u, np.asarray(state.theta))


def generator_drift(state, spec: ModelSpec):
    """Generator applied to the coordinate function, as a piecewise-constant field."""
    from .spatial import PiecewiseConstantField

    return PiecewiseConstantField(spec.generator_drift_values(reaction_rates(state, spec)), spec.partition)


def drift_F(u, p_field, spec: ModelSpec) -> np.ndarray:
    """Limit drift of the fraction field, evaluated on the grid."""
    p_field = np.asarray(p_field, float)
    if p_field.shape[-1] == spec.p and p_field.shape[-1] != spec.grid.m + 2:
        p_field = p_field @ spec.expansion.T
    return spec.drift_F(u, p_field)


def quad_var_form(state, spec: ModelSpec, Phi, Psi) -> float:
    """``<G^n Phi, Psi>``: rate-weighted products of the projected jump sizes."""
    rates = reaction_rates(state, spec)
    counts = spec.partition.channel_counts
    ip = spec.int_matrix @ np.asarray(Phi, float) / counts
    iq = spec.int_matrix @ np.asarray(Psi, float) / counts
    total = rates[: spec.p] + rates[spec.p :]
    return float(np.sum(total * ip * iq))


def limit_covariance_form(u, p_field, spec: ModelSpec, Phi, Psi) -> float:
    """``<G(u, p) Phi, Psi> = int sigma^2 Phi Psi``."""
    s2 = spec.sigma2(u, p_field)
    return float(spec.grid.integrate(s2 * np.asarray(Phi, float) * np.asarray(Psi, float)))


def drift_jacobians(u, p_field, spec: ModelSpec, t: float | None = None) -> JacobianBlocks:
    """Linearisation of (B, F) around ``(u, p)``; ``t`` is accepted for bookkeeping only."""
    return spec.jacobians(u, p_field)


__all__ = [
    "COMPARTMENTAL",
    "NEURAL_FIELD",
    "CompartmentalSpec",
    "GaussianKernel",
    "JacobianBlocks",
    "ModelError",
    "ModelSpec",
    "NeuralFieldSpec",
    "ScalarFunction",
    "coordinate_function",
    "default_compartmental",
    "default_neural_field",
    "dirichlet_laplacian",
    "drift_F",
    "drift_jacobians",
    "generator_drift",
    "limit_covariance_form",
    "quad_var_form",
    "reaction_rates",
]
