"""Deterministic limits, Galerkin mean/covariance ODEs and the Langevin SPDE.

The Galerkin state uses the first ``N`` sine modes for the potential
block followed by the first ``N`` for the fraction block (fraction block
only for neural fields).  Ensemble simulations draw their noise from the
per-replica streams of :mod:`pdmp_limits.rng`.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .engine import SimulationAbort, imex_step
from .models import ModelSpec
from .rng import INITIAL, LANGEVIN, replica_generator
from .spatial import laplacian_eigenvalues, sine_basis

BLOWUP = 1e6
PSD_CLAMP = 1e-10
COV_GROWTH = 1e6
NOISE_BLOCK = 256


class NotPSDError(ValueError):
    pass


@dataclass
class DeterministicSolution:
    """Dense output of the deterministic limit, linear in time between stored steps."""

    times: np.ndarray
    u: Optional[np.ndarray]
    p: np.ndarray

    def at(self, t: float):
        times = self.times
        if t < times[0] - 1e-12 or t > times[-1] + 1e-9 * max(1.0, times[-1]):
            raise ValueError(f"t={t} outside the solved interval")
        k = int(np.clip(np.searchsorted(times, t, side="right") - 1, 0, times.size - 2))
        w = (t - times[k]) / (times[k + 1] - times[k])
        w = min(max(w, 0.0), 1.0)
        p = (1.0 - w) * self.p[k] + w * self.p[k + 1]
        u = None if self.u is None else (1.0 - w) * self.u[k] + w * self.u[k + 1]
        return u, p


def solve_deterministic(spec: ModelSpec, u0, p0, T: float, dt: float = 1e-3,
                        store_every: int = 1) -> DeterministicSolution:
    """Solve the deterministic limit on the grid.

    Compartmental: IMEX step for ``u`` (same scheme as the PDMP flow) and
    Heun for ``p`` using the already advanced ``u``.  Neural field: Heun on
    the integro-ODE with the trapezoid kernel.
    """
    n = max(1, int(round(T / dt)))
    dt = T / n
    p = np.asarray(p0, dtype=float).copy()
    if spec.has_potential:
        u = np.asarray(u0, dtype=float).copy()
        if p.min() < -1e-12 or p.max() > 1 + 1e-12:
            raise ValueError("initial fraction must lie in [0, 1]")
    else:
        u = None
    times, us, ps = [0.0], [None if u is None else u.copy()], [p.copy()]
    for k in range(1, n + 1):
        k1 = spec.drift_F(u, p)
        if spec.has_potential:
            u_new = imex_step(u, p, spec.v_bar, dt, spec.grid)
            if not np.all(np.isfinite(u_new)) or np.abs(u_new).max() > BLOWUP:
                raise SimulationAbort("deterministic solution blew up")
        else:
            u_new = None
        k2 = spec.drift_F(u_new, p + dt * k1)
        p = p + 0.5 * dt * (k1 + k2)
        u = u_new
        if k % store_every == 0 or k == n:
            times.append(k * dt)
            us.append(None if u is None else u.copy())
            ps.append(p.copy())
    times = np.array(times)
    times[-1] = T
    return DeterministicSolution(times, None if u is None else np.array(us), np.array(ps))


# -- Galerkin projection ----------------------------------------------------------------


class _Projector:
    def __init__(self, spec: ModelSpec, N: int):
        self.spec = spec
        self.N = N
        self.basis = sine_basis(spec.grid, N)
        self.wbasis = self.basis * spec.grid.weights
        self.lam = laplacian_eigenvalues(spec.grid.l, N)

    def form(self, density) -> np.ndarray:
        """Matrix of ``(phi_i, density * phi_j)`` by trapezoid quadrature."""
        return (self.wbasis * density) @ self.basis.T

    def __call__(self, u, p):
        spec = self.spec
        G = self.form(spec.sigma2(u, p))
        if spec.has_potential:
            a, b = spec.a, spec.b
            J = np.block([
                [-np.diag(self.lam) - self.form(p), self.form(spec.v_bar - u)],
                [self.form(a.derivative(u) * (1 - p) - b.derivative(u) * p), -self.form(a(u) + b(u))],
            ])
        else:
            gain = spec.f.derivative(spec.field_input(p))
            J = -np.eye(self.N) + (self.wbasis * gain) @ spec.kernel_matrix @ self.basis.T
        return J, 0.5 * (G + G.T)


def project_operators(solution: DeterministicSolution, spec: ModelSpec, t: float, N: int):
    """Galerkin drift matrix ``J(t)`` and noise covariance ``G(t)`` in the first ``N`` modes."""
    return _Projector(spec, N)(*solution.at(t))


def state_dim(spec: ModelSpec, N: int) -> int:
    return 2 * N if spec.has_potential else N


def noise_embed(spec: ModelSpec, G: np.ndarray) -> np.ndarray:
    """Place the fraction-block noise covariance inside the full Galerkin state."""
    N = G.shape[0]
    if not spec.has_potential:
        return G
    out = np.zeros((2 * N, 2 * N))
    out[N:, N:] = G
    return out


@dataclass
class GalerkinGaussian:
    """Mean and covariance series of the Galerkin-truncated Gaussian limit."""

    times: np.ndarray
    mean: np.ndarray
    cov: np.ndarray
    N: int
    blocks: tuple

    def at_index(self, k: int):
        return self.mean[k], self.cov[k]

    def index_of(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"time {t} not on the output grid")
        return k


def solve_mean_cov(spec: ModelSpec, solution: DeterministicSolution, m0, R0, N: int,
                   T: float, dt: float = 1e-3, store_every: int = 1, operators=None) -> GalerkinGaussian:
    """RK4 for ``m' = J m`` and ``R' = J R + R J^T + diag(0, G)``; R is symmetrised every step.

    ``operators`` optionally replaces the Galerkin projection by a callable
    ``t -> (J, Q)`` returning the drift matrix and the full noise covariance.
    """
    d = state_dim(spec, N) if operators is None else np.asarray(operators(0.0)[0]).shape[0]
    m = np.zeros(d) if m0 is None else np.asarray(m0, float).copy()
    R = np.zeros((d, d)) if R0 is None else np.asarray(R0, float).copy()
    if m.shape != (d,) or R.shape != (d, d):
        raise ValueError(f"initial mean/covariance must have dimension {d}")
    if not np.allclose(R, R.T, atol=1e-12):
        raise ValueError("initial covariance must be symmetric")
    n = max(1, int(round(T / dt)))
    dt = T / n
    cache: dict = {}
    if operators is None:
        proj = _Projector(spec, N)

        def operators(t):
            J, G = proj(*solution.at(t))
            return J, noise_embed(spec, G)

    def ops(t):
        key = round(t / dt * 2)
        if key not in cache:
            cache[key] = operators(t)
        return cache[key]

    def rhs(t, m, R):
        J, Q = ops(t)
        JR = J @ R
        return J @ m, JR + JR.T + Q

    times, means, covs = [0.0], [m.copy()], [R.copy()]
    for k in range(n):
        t = k * dt
        a1, b1 = rhs(t, m, R)
        a2, b2 = rhs(t + 0.5 * dt, m + 0.5 * dt * a1, R + 0.5 * dt * b1)
        a3, b3 = rhs(t + 0.5 * dt, m + 0.5 * dt * a2, R + 0.5 * dt * b2)
        a4, b4 = rhs(t + dt, m + dt * a3, R + dt * b3)
        m_new = m + dt / 6.0 * (a1 + 2 * a2 + 2 * a3 + a4)
        R_new = R + dt / 6.0 * (b1 + 2 * b2 + 2 * b3 + b4)
        R_new = 0.5 * (R_new + R_new.T)
        scale = max(np.linalg.norm(R), dt * np.linalg.norm(ops(t)[1]), 1e-12)
        if not np.all(np.isfinite(R_new)) or np.linalg.norm(R_new) > COV_GROWTH * scale:
            raise SimulationAbort("covariance step rejected: growth above 1e6 (check N or dt)")
        m, R = m_new, R_new
        for key in [kk for kk in cache if kk < round(t / dt * 2)]:
            del cache[key]
        if (k + 1) % store_every == 0 or k + 1 == n:
            times.append((k + 1) * dt)
            means.append(m.copy())
            covs.append(R.copy())
    times = np.array(times)
    times[-1] = T
    if spec is None:
        blocks = ("X",)
    else:
        blocks = ("U", "P") if spec.has_potential else ("P",)
    return GalerkinGaussian(times, np.array(means), np.array(covs), N, blocks)


def sqrt_psd(M) -> np.ndarray:
    """Symmetric square root of a positive semidefinite matrix.

    Eigenvalues down to ``-1e-10 * ||M||`` are treated as roundoff and
    clamped to zero; anything more negative raises :class:`NotPSDError`.
    """
    M = np.asarray(M, dtype=float)
    M = 0.5 * (M + M.T)
    lam, V = np.linalg.eigh(M)
    scale = np.max(np.abs(lam)) if lam.size else 0.0
    if lam.size and lam.min() < -PSD_CLAMP * max(scale, 1e-300):
        raise NotPSDError(f"not PSD: eigenvalue {lam.min():.3e}")
    lam = np.clip(lam, 0.0, None)
    S = (V * np.sqrt(lam)) @ V.T
    return 0.5 * (S + S.T)


# -- Langevin (Euler-Maruyama) ------------------------------------------------------------


@dataclass
class LangevinPath:
    times: np.ndarray
    X: np.ndarray
    seed: int
    replica: int = 0


@dataclass
class LangevinEnsemble:
    times: np.ndarray
    X: np.ndarray
    seed: int
    replicas: np.ndarray

    def path(self, i: int) -> LangevinPath:
        return LangevinPath(self.times, self.X[i], self.seed, int(self.replicas[i]))


@dataclass
class LangevinCoefficients:
    """Drift matrices and noise factors on the Euler-Maruyama time grid."""

    dt: float
    J: np.ndarray
    S: np.ndarray
    dim: int
    noise_offset: int


def langevin_coefficients(spec: ModelSpec, solution: DeterministicSolution, N: int,
                          T: float, dt: float) -> LangevinCoefficients:
    n = max(1, int(round(T / dt)))
    dt = T / n
    proj = _Projector(spec, N)
    Js, Ss = [], []
    for k in range(n):
        J, G = proj(*solution.at(k * dt))
        Js.append(J)
        Ss.append(sqrt_psd(G))
    d = state_dim(spec, N)
    return LangevinCoefficients(dt, np.array(Js), np.array(Ss), d, d - N)


def simulate_langevin_ensemble(spec: ModelSpec, solution: DeterministicSolution, N: int,
                               T: float, dt: float, seed: int, replicas: Sequence[int],
                               save_times=None, initial=None,
                               coefficients: LangevinCoefficients | None = None) -> LangevinEnsemble:
    """Euler-Maruyama for the Galerkin coefficients with ``Q = I`` and ``g = G^{1/2}``.

    ``initial`` is ``None`` (start at 0), a fixed vector, or a pair
    ``(m0, R0)`` from which each replica samples its own start.
    """
    co = coefficients or langevin_coefficients(spec, solution, N, T, dt)
    n = co.J.shape[0]
    dt = co.dt
    replicas = np.asarray(replicas, dtype=np.int64)
    R = replicas.size
    d = co.dim
    if save_times is None:
        save_steps = np.arange(n + 1)
    else:
        save_steps = np.round(np.asarray(save_times, float) / dt).astype(int)
        if np.any(np.abs(save_steps * dt - np.asarray(save_times)) > 1e-9 * max(1.0, T)):
            raise ValueError("save times must lie on the time grid")
    if initial is None:
        X = np.zeros((R, d))
    elif isinstance(initial, tuple):
        m0, R0 = (np.asarray(v, float) for v in initial)
        root = sqrt_psd(R0)
        xi = np.array([replica_generator(seed, r, INITIAL).standard_normal(d) for r in replicas])
        X = m0 + xi @ root.T
    else:
        X = np.tile(np.asarray(initial, float), (R, 1))
    gens = [replica_generator(seed, r, LANGEVIN) for r in replicas]
    out = np.zeros((R, save_steps.size, d))
    which = {s: i for i, s in enumerate(save_steps)}
    if 0 in which:
        out[:, which[0]] = X
    sq = np.sqrt(dt)
    off = co.noise_offset
    for k in range(n):
        if k % NOISE_BLOCK == 0:
            # each replica consumes its own stream in step order
            noise = np.stack([g.standard_normal((min(NOISE_BLOCK, n - k), N)) for g in gens])
        inc = sq * (noise[:, k % NOISE_BLOCK] @ co.S[k].T)
        X = X + dt * (X @ co.J[k].T)
        X[:, off:] += inc
        if k + 1 in which:
            out[:, which[k + 1]] = X
    if not np.all(np.isfinite(out)):
        raise SimulationAbort("Langevin path became non-finite")
    return LangevinEnsemble(save_steps * dt, out, seed, replicas)


def simulate_langevin(spec: ModelSpec, solution: DeterministicSolution, N: int, T: float,
                      dt: float, seed: int, replica: int = 0, initial=None) -> LangevinPath:
    """One Langevin path saved at every Euler-Maruyama step."""
    ens = simulate_langevin_ensemble(spec, solution, N, T, dt, seed, [replica], initial=initial)
    return ens.path(0)
