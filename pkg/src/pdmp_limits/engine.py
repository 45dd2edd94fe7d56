"""Exact trajectory simulation of the hybrid (PDMP) process.

Replicas of one ensemble are advanced in lockstep: every round each live
replica either completes one flow substep or stops at its next jump.  All
arithmetic is elementwise per replica and every replica draws from its own
stream, so a replica's trajectory does not depend on which other replicas
share its batch.

Jump times use the integrated hazard: an Exp(1) threshold is compared to
the trapezoid integral of the total rate along the flow, the crossing is
located by solving the quadratic obtained from linear interpolation of
the rate inside the substep, and the flow is recomputed up to the crossing
(with one secant correction if the recomputed hazard misses the threshold
by more than ``1e-3 * dt`` in time).  For the neural field the rates are
constant between jumps and this reduces to Gillespie's direct method.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.fft import dst

from .models import ModelSpec
from .rng import PDMP, ReplicaStreams, RngStream
from .spatial import Grid, coordinate_function

DEFAULT_MAX_JUMPS = 10_000_000
BLOWUP = 1e6
REFINE_TOL = 1e-3


class SimulationAbort(RuntimeError):
    """Numerical abort: non-finite state or runaway jump count."""


@dataclass
class HybridState:
    """Time, potential on all grid nodes (``None`` for neural fields) and channel counts."""

    t: float
    u: Optional[np.ndarray]
    theta: np.ndarray

    def copy(self) -> "HybridState":
        return HybridState(self.t, None if self.u is None else self.u.copy(), self.theta.copy())


# -- continuous flow ---------------------------------------------------------


def _dirichlet_eigenvalues(grid: Grid) -> np.ndarray:
    j = np.arange(1, grid.m + 1)
    return -(4.0 / grid.h ** 2) * np.sin(j * np.pi / (2 * (grid.m + 1))) ** 2


def imex_step(u, z_nodes, v_bar: float, dt, grid: Grid, eig=None) -> np.ndarray:
    """One IMEX step: explicit reaction ``z (v_bar - u)``, backward-Euler diffusion.

    The implicit solve ``(I - dt Lap_h) x = rhs`` is done exactly in the
    discrete sine basis, which diagonalises the Dirichlet second-difference
    matrix.  ``dt`` may be a scalar or one value per batch row.
    """
    if eig is None:
        eig = _dirichlet_eigenvalues(grid)
    u = np.asarray(u, dtype=float)
    dt = np.asarray(dt, dtype=float)
    dtc = dt[..., None] if dt.ndim else dt
    rhs = u[..., 1:-1] + dtc * z_nodes[..., 1:-1] * (v_bar - u[..., 1:-1])
    coef = dst(rhs, type=1, norm="ortho", axis=-1) / (1.0 - dtc * eig)
    out = np.zeros_like(u)
    out[..., 1:-1] = dst(coef, type=1, norm="ortho", axis=-1)
    return out


def default_dt(grid: Grid, factor: float = 1.0) -> float:
    return min(5.0 * grid.h ** 2, 1e-3) * factor


def flow_step(state: HybridState, dt: float, spec: ModelSpec) -> HybridState:
    """Advance the continuous component by one IMEX step with ``theta`` frozen."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if not spec.has_potential:
        return HybridState(state.t + dt, None, state.theta.copy())
    z = coordinate_function(state.theta, spec.partition).values @ spec.expansion.T
    u = imex_step(state.u, z, spec.v_bar, dt, spec.grid)
    if not np.all(np.isfinite(u)):
        raise SimulationAbort("linear solve produced non-finite values (NaN input?)")
    return HybridState(state.t + dt, u, state.theta.copy())


# -- records -------------------------------------------------------------------


@dataclass
class EnsembleRecord:
    """Sampled output of a batch of replicas (leading axis = replica).

    Integrals are accumulated from the start of the run: ``drift`` holds
    ``int (up - down)/l ds``, ``activity`` holds ``int (up + down) ds`` and
    ``moment`` holds ``int theta (up - down) ds``, all per compartment.
    ``hazard``/``threshold``/``rng_counter`` are the sampler state at each
    sample time, enough to restart a replica bit-for-bit.
    """

    times: np.ndarray
    theta: np.ndarray
    u: Optional[np.ndarray]
    drift: np.ndarray
    activity: np.ndarray
    moment: np.ndarray
    residual: Optional[np.ndarray]
    hazard: np.ndarray
    threshold: np.ndarray
    rng_counter: np.ndarray
    n_jumps: np.ndarray
    seed: int
    replicas: np.ndarray
    channel_counts: np.ndarray
    jump_times: Optional[list] = None
    jump_reactions: Optional[list] = None

    @property
    def size(self) -> int:
        return self.replicas.size

    def trajectory(self, i: int) -> "TrajectoryRecord":
        return TrajectoryRecord(
            times=self.times,
            theta=self.theta[i],
            u=None if self.u is None else self.u[i],
            drift=self.drift[i],
            activity=self.activity[i],
            moment=self.moment[i],
            residual=None if self.residual is None else self.residual[i],
            hazard=self.hazard[i],
            threshold=self.threshold[i],
            rng_counter=self.rng_counter[i],
            n_jumps=int(self.n_jumps[i]),
            seed=self.seed,
            replica=int(self.replicas[i]),
            channel_counts=self.channel_counts,
            jump_times=None if self.jump_times is None else self.jump_times[i],
            jump_reactions=None if self.jump_reactions is None else self.jump_reactions[i],
        )


@dataclass
class TrajectoryRecord:
    times: np.ndarray
    theta: np.ndarray
    u: Optional[np.ndarray]
    drift: np.ndarray
    activity: np.ndarray
    moment: np.ndarray
    residual: Optional[np.ndarray]
    hazard: np.ndarray
    threshold: np.ndarray
    rng_counter: np.ndarray
    n_jumps: int
    seed: int
    replica: int
    channel_counts: np.ndarray
    jump_times: Optional[np.ndarray] = None
    jump_reactions: Optional[np.ndarray] = None

    def state(self, k: int) -> HybridState:
        return HybridState(
            float(self.times[k]), None if self.u is None else self.u[k].copy(), self.theta[k].copy()
        )

    def stream(self, k: int) -> RngStream:
        return RngStream(self.seed, self.replica, int(self.rng_counter[k]), PDMP)


def sample_times(T: float, dt_out: float, t0: float = 0.0) -> np.ndarray:
    n = int(round((T - t0) / dt_out))
    if n < 1 or abs(t0 + n * dt_out - T) > 1e-9 * max(1.0, T):
        raise ValueError("horizon must be a multiple of dt_out")
    times = t0 + np.arange(n + 1) * dt_out
    times[-1] = T
    return times


# -- lockstep runner ---------------------------------------------------------------


class _Runner:
    def __init__(
        self,
        spec: ModelSpec,
        initial,
        times: np.ndarray,
        seed: int,
        replicas,
        dt: float | None,
        record_u: bool,
        record_jumps: bool,
        track_residual: bool,
        max_jumps: int,
        resume: dict | None,
    ):
        self.spec = spec
        self.times = np.asarray(times, dtype=float)
        self.replicas = np.asarray(replicas, dtype=np.int64)
        n = self.replicas.size
        p = spec.p
        self.has_u = spec.has_potential
        self.dt = (dt if dt is not None else default_dt(spec.grid)) if self.has_u else np.inf
        self.eig = _dirichlet_eigenvalues(spec.grid)
        self.counts = spec.partition.channel_counts
        self.max_jumps = max_jumps
        self.track_residual = track_residual

        states = initial if isinstance(initial, (list, tuple)) else [initial] * n
        if len(states) != n:
            raise ValueError("one initial state per replica required")
        self.t = np.array([s.t for s in states], dtype=float)
        if np.any(np.abs(self.t - self.times[0]) > 1e-12 * max(1.0, abs(self.times[0]))):
            raise ValueError("initial time must equal the first sample time")
        self.t[:] = self.times[0]
        self.theta = np.array([np.asarray(s.theta) for s in states], dtype=np.int64).reshape(n, p)
        if self.has_u:
            self.u = np.array([np.asarray(s.u, float) for s in states]).reshape(n, spec.grid.m + 2)
            if np.any(np.abs(self.u[:, [0, -1]]) > 0):
                raise ValueError("potential must vanish at the boundary nodes")
        else:
            self.u = None
        self._check_theta(self.theta)

        counters = None if resume is None else resume["rng_counter"]
        self.rng = ReplicaStreams(seed, self.replicas, PDMP, counters)
        if resume is None:
            self.H = np.zeros(n)
            self.E = self.rng.exponential(np.arange(n))
        else:
            self.H = np.asarray(resume["hazard"], float).copy()
            self.E = np.asarray(resume["threshold"], float).copy()

        self.rates = spec.rates(self.u, self.theta)
        self.res = spec.residual_density(self.u, self.theta) if track_residual else None

        ns = self.times.size
        self.rec_theta = np.zeros((n, ns, p), dtype=np.int64)
        self.rec_u = np.zeros((n, ns, spec.grid.m + 2)) if (record_u and self.has_u) else None
        self.acc_drift = np.zeros((n, p))
        self.acc_act = np.zeros((n, p))
        self.acc_mom = np.zeros((n, p))
        self.acc_res = np.zeros(n)
        self.rec_drift = np.zeros((n, ns, p))
        self.rec_act = np.zeros((n, ns, p))
        self.rec_mom = np.zeros((n, ns, p))
        self.rec_res = np.zeros((n, ns)) if track_residual else None
        self.rec_H = np.zeros((n, ns))
        self.rec_E = np.zeros((n, ns))
        self.rec_ctr = np.zeros((n, ns), dtype=np.int64)
        self.n_jumps = np.zeros(n, dtype=np.int64)
        self.next_idx = np.zeros(n, dtype=np.int64)
        self.record_jumps = record_jumps
        self._jlog: list = []
        self.first_jump_time = np.full(n, np.inf)
        self.first_jump_reaction = np.full(n, -1, dtype=np.int64)
        self._record(np.arange(n))

    def _check_theta(self, theta):
        if np.any(theta < 0):
            raise SimulationAbort("negative channel count")
        if self.has_u and np.any(theta > self.counts):
            raise SimulationAbort("channel count above compartment capacity")

    def _flow(self, u, theta, step):
        z = (theta / self.counts) @ self.spec.expansion.T
        out = imex_step(u, z, self.spec.v_bar, step, self.spec.grid, self.eig)
        if not np.all(np.isfinite(out)) or np.any(np.abs(out) > BLOWUP):
            raise SimulationAbort("potential blew up or became non-finite")
        return out

    def _record(self, idx):
        k = self.next_idx[idx]
        self.rec_theta[idx, k] = self.theta[idx]
        if self.rec_u is not None:
            self.rec_u[idx, k] = self.u[idx]
        self.rec_drift[idx, k] = self.acc_drift[idx]
        self.rec_act[idx, k] = self.acc_act[idx]
        self.rec_mom[idx, k] = self.acc_mom[idx]
        if self.rec_res is not None:
            self.rec_res[idx, k] = self.acc_res[idx]
        self.rec_H[idx, k] = self.H[idx]
        self.rec_E[idx, k] = self.E[idx]
        self.rec_ctr[idx, k] = self.rng.counter[idx]
        self.next_idx[idx] += 1

    def _accumulate(self, idx, theta, r0, r1, s, res0=None, res1=None):
        p = self.spec.p
        d0 = r0[:, :p] - r0[:, p:]
        d1 = r1[:, :p] - r1[:, p:]
        hs = 0.5 * s[:, None]
        self.acc_drift[idx] += hs * (d0 + d1) / self.counts
        self.acc_act[idx] += hs * (r0[:, :p] + r0[:, p:] + r1[:, :p] + r1[:, p:])
        self.acc_mom[idx] += hs * theta * (d0 + d1)
        if res0 is not None:
            self.acc_res[idx] += 0.5 * s * (res0 + res1)

    def run(self, first_jump_only: bool = False):
        spec = self.spec
        times = self.times
        ns = times.size
        finite = times[np.isfinite(times)]
        tol = 1e-12 * max(1.0, float(np.abs(finite).max()))
        while True:
            act = np.nonzero(self.next_idx < ns)[0]
            if first_jump_only:
                act = act[self.first_jump_reaction[act] < 0]
            if act.size == 0:
                break
            t_a = self.t[act]
            tn = times[self.next_idx[act]]
            gap = tn - t_a
            step = np.minimum(gap, self.dt)
            th = self.theta[act]
            r0 = self.rates[act]
            L0 = r0.sum(axis=1)
            if self.has_u:
                u0 = self.u[act]
                u1 = self._flow(u0, th, step)
                r1 = spec.rates(u1, th)
            else:
                u0 = u1 = None
                r1 = r0
            L1 = r1.sum(axis=1)
            H0 = self.H[act]
            dH = 0.5 * (L0 + L1) * step
            cross = H0 + dH >= self.E[act]
            res0 = self.res[act] if self.track_residual else None
            res1 = spec.residual_density(u1, th) if self.track_residual else None

            # replicas completing the substep without a jump
            keep = ~cross
            if keep.any():
                idx = act[keep]
                sk = step[keep]
                self._accumulate(
                    idx, th[keep], r0[keep], r1[keep], sk,
                    None if res0 is None else res0[keep], None if res1 is None else res1[keep],
                )
                land = sk >= gap[keep]
                self.t[idx] = np.where(land, tn[keep], t_a[keep] + sk)
                if self.has_u:
                    self.u[idx] = u1[keep]
                self.rates[idx] = r1[keep]
                self.H[idx] = H0[keep] + dH[keep]
                if self.track_residual:
                    self.res[idx] = res1[keep]

            if cross.any():
                self._jump(act[cross], t_a[cross], step[cross], th[cross], r0[cross], L0[cross],
                           L1[cross], H0[cross],
                           None if u0 is None else u0[cross],
                           None if res0 is None else res0[cross])

            hit = act[self.t[act] >= times[self.next_idx[act]] - tol]
            if hit.size:
                self.t[hit] = times[self.next_idx[hit]]
                self._record(hit)
        return self

    def _jump(self, idx, t0, step, th, r0, L0, L1, H0, u0, res0):
        spec = self.spec
        p = spec.p
        need = self.E[idx] - H0
        slope = (L1 - L0) / step
        disc = np.maximum(L0 * L0 + 2.0 * slope * need, 0.0)
        denom = L0 + np.sqrt(disc)
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(denom > 0, 2.0 * need / denom, step)
        s = np.clip(s, 0.0, step)
        if self.has_u:
            u_tau = self._flow(u0, th, s)
            r_tau = spec.rates(u_tau, th)
            L_tau = r_tau.sum(axis=1)
            # one secant correction of the crossing time
            H_tau = H0 + 0.5 * (L0 + L_tau) * s
            with np.errstate(divide="ignore", invalid="ignore"):
                delta = np.where(L_tau > 0, (self.E[idx] - H_tau) / L_tau, 0.0)
            fix = np.abs(delta) > REFINE_TOL * self.dt
            if fix.any():
                s[fix] = np.clip(s[fix] + delta[fix], 0.0, step[fix])
                u_tau[fix] = self._flow(u0[fix], th[fix], s[fix])
                r_tau[fix] = spec.rates(u_tau[fix], th[fix])
                L_tau = r_tau.sum(axis=1)
        else:
            u_tau = None
            r_tau = r0
            L_tau = L0
        res_tau = spec.residual_density(u_tau, th) if self.track_residual else None
        self._accumulate(idx, th, r0, r_tau, s, res0, res_tau)

        cum = np.cumsum(r_tau, axis=1)
        target = self.rng.uniform(idx) * cum[:, -1]
        j = np.minimum((cum <= target[:, None]).sum(axis=1), 2 * p - 1)
        comp = j % p
        sign = np.where(j < p, 1, -1)
        theta = th.copy()
        theta[np.arange(idx.size), comp] += sign
        self._check_theta(theta)

        t_new = t0 + s
        self.t[idx] = t_new
        self.theta[idx] = theta
        if self.has_u:
            self.u[idx] = u_tau
        self.rates[idx] = spec.rates(u_tau, theta)
        if self.track_residual:
            self.res[idx] = spec.residual_density(u_tau, theta)
        self.H[idx] = 0.0
        self.E[idx] = self.rng.exponential(idx)
        self.n_jumps[idx] += 1
        if np.any(self.n_jumps[idx] > self.max_jumps):
            raise SimulationAbort("jump-count circuit breaker tripped: non-regular or rates misconfigured")
        first = self.first_jump_reaction[idx] < 0
        self.first_jump_time[idx[first]] = t_new[first]
        self.first_jump_reaction[idx[first]] = j[first]
        if self.record_jumps:
            self._jlog.append((idx, t_new, j))

    def record(self) -> EnsembleRecord:
        n = self.replicas.size
        jt = jr = None
        if self.record_jumps:
            if self._jlog:
                who = np.concatenate([e[0] for e in self._jlog])
                when = np.concatenate([e[1] for e in self._jlog])
                what = np.concatenate([e[2] for e in self._jlog])
                order = np.argsort(who, kind="stable")
                who, when, what = who[order], when[order], what[order]
                cuts = np.searchsorted(who, np.arange(n + 1))
                jt = [when[cuts[i] : cuts[i + 1]] for i in range(n)]
                jr = [what[cuts[i] : cuts[i + 1]] for i in range(n)]
            else:
                jt = [np.zeros(0) for _ in range(n)]
                jr = [np.zeros(0, dtype=np.int64) for _ in range(n)]
        return EnsembleRecord(
            times=self.times.copy(),
            theta=self.rec_theta,
            u=self.rec_u,
            drift=self.rec_drift,
            activity=self.rec_act,
            moment=self.rec_mom,
            residual=self.rec_res,
            hazard=self.rec_H,
            threshold=self.rec_E,
            rng_counter=self.rec_ctr,
            n_jumps=self.n_jumps.copy(),
            seed=self.rng.seed,
            replicas=self.replicas.copy(),
            channel_counts=self.counts,
            jump_times=jt,
            jump_reactions=jr,
        )


def simulate_ensemble(
    initial,
    spec: ModelSpec,
    T: float,
    dt_out: float,
    seed: int,
    replicas: Sequence[int],
    dt: float | None = None,
    record_u: bool = True,
    record_jumps: bool = False,
    track_residual: bool = False,
    max_jumps: int = DEFAULT_MAX_JUMPS,
    times: np.ndarray | None = None,
    resume: dict | None = None,
) -> EnsembleRecord:
    """Simulate the replicas listed in ``replicas`` from ``initial`` up to ``T``.

    ``initial`` is one :class:`HybridState` shared by all replicas or a list
    with one state per replica.  ``times`` overrides the sampling grid
    (its first entry must equal the initial time); ``resume`` restarts the
    sampler from a recorded checkpoint (keys ``hazard``, ``threshold``,
    ``rng_counter``, one entry per replica).
    """
    if T <= 0:
        raise ValueError("horizon must be positive")
    if times is None:
        t0 = initial[0].t if isinstance(initial, (list, tuple)) else initial.t
        times = sample_times(T, dt_out, t0)
    runner = _Runner(spec, initial, times, seed, replicas, dt, record_u, record_jumps,
                     track_residual, max_jumps, resume)
    return runner.run().record()


def simulate(
    initial: HybridState,
    spec: ModelSpec,
    T: float,
    dt_out: float,
    rng: RngStream,
    dt: float | None = None,
    record_jumps: bool = True,
    **kwargs,
) -> TrajectoryRecord:
    """Single trajectory; ``rng`` selects (seed, replica) and the starting draw counter."""
    resume = kwargs.pop("resume", None)
    if resume is None and rng.counter:
        raise ValueError("a nonzero stream counter requires a sampler checkpoint (resume=)")
    rec = simulate_ensemble(initial, spec, T, dt_out, rng.seed, [rng.replica], dt=dt,
                            record_jumps=record_jumps, resume=resume, **kwargs)
    return rec.trajectory(0)


def restart(record: TrajectoryRecord, k: int, spec: ModelSpec, T: float | None = None,
            dt: float | None = None, **kwargs) -> TrajectoryRecord:
    """Continue ``record`` from its ``k``-th sample with the same random substream."""
    times = record.times[k:] if T is None else record.times[k:][record.times[k:] <= T]
    resume = {
        "hazard": [record.hazard[k]],
        "threshold": [record.threshold[k]],
        "rng_counter": [record.rng_counter[k]],
    }
    rec = simulate_ensemble(record.state(k), spec, float(times[-1]), 0.0, record.seed,
                            [record.replica], dt=dt, times=times, resume=resume, **kwargs)
    return rec.trajectory(0)


def next_jump(state: HybridState, spec: ModelSpec, seed: int, replicas: Sequence[int],
              horizon: float, dt: float | None = None):
    """First jump time and reaction index for each replica started at ``state``.

    Replicas without a jump before ``horizon`` get time ``inf`` and index ``-1``.
    """
    runner = _Runner(spec, state, np.array([state.t, horizon]), seed, replicas, dt,
                     False, False, False, DEFAULT_MAX_JUMPS, None)
    runner.run(first_jump_only=True)
    return runner.first_jump_time, runner.first_jump_reaction


def thinning_first_jump(state: HybridState, spec: ModelSpec, seed: int, n: int,
                        horizon: float, dt: float | None = None):
    """First jump times by thinning against the global rate bound.

    Independent sampler used as a cross-check of the integrated-hazard
    method when the rate functions are bounded.
    """
    bound = spec.rate_bound()
    if not np.isfinite(bound) or bound <= 0:
        raise ValueError("thinning needs a finite positive rate bound")
    gens = [np.random.default_rng([seed, i, 7]) for i in range(n)]
    dtf = dt if dt is not None else default_dt(spec.grid)
    t = np.full(n, state.t, dtype=float)
    u = np.tile(state.u, (n, 1)) if spec.has_potential else None
    theta = np.tile(state.theta, (n, 1))
    out = np.full(n, np.inf)
    live = np.arange(n)
    eig = _dirichlet_eigenvalues(spec.grid)
    counts = spec.partition.channel_counts
    while live.size:
        gap = np.array([gens[i].exponential(1.0 / bound) for i in live])
        target = np.minimum(t[live] + gap, horizon)
        if spec.has_potential:
            z = (theta[live] / counts) @ spec.expansion.T
            uu = u[live]
            tt = t[live].copy()
            while np.any(tt < target):
                st = np.minimum(target - tt, dtf)
                uu = imex_step(uu, z, spec.v_bar, st, spec.grid, eig)
                tt = np.where(st >= target - tt, target, tt + st)
            u[live] = uu
        t[live] = target
        lam = spec.rates(None if u is None else u[live], theta[live]).sum(axis=1)
        acc = np.array([gens[i].random() for i in live]) * bound < lam
        acc &= target < horizon
        out[live[acc]] = target[acc]
        live = live[~acc & (target < horizon)]
    return out


# -- martingale and generator checks ----------------------------------------------------


def martingale_part(record) -> np.ndarray:
    """``M(t) = z(theta(t)) - z(theta(0)) - int generator drift``, per compartment.

    Accepts a trajectory record (shape ``(n_samples, p)``) or an ensemble
    record (shape ``(R, n_samples, p)``).
    """
    z = np.asarray(record.theta) / record.channel_counts
    return z - z[..., :1, :] - record.drift


@dataclass(frozen=True)
class QuadraticObservable:
    """``f(theta) = const + linear . theta + sum_k square_k theta_k^2``."""

    const: float = 0.0
    linear: np.ndarray | None = None
    square: np.ndarray | None = None

    def __call__(self, theta) -> np.ndarray:
        theta = np.asarray(theta, float)
        out = np.full(theta.shape[:-1], float(self.const))
        if self.linear is not None:
            out = out + theta @ np.asarray(self.linear, float)
        if self.square is not None:
            out = out + (theta ** 2) @ np.asarray(self.square, float)
        return out


def dynkin_residual(ensemble: EnsembleRecord, f: QuadraticObservable) -> tuple[float, float]:
    """Monte Carlo residual ``E f(Y_T) - f(Y_0) - E int A f ds`` and its standard error.

    For jumps of size +-1 in compartment ``k``, the generator of
    ``theta_k`` is ``up - down`` and that of ``theta_k^2`` is
    ``2 theta_k (up - down) + (up + down)``; their time integrals are read
    from the accumulated integrals of the record.
    """
    counts = np.asarray(ensemble.channel_counts, float)
    th0 = ensemble.theta[:, 0]
    thT = ensemble.theta[:, -1]
    gen = np.zeros(ensemble.size)
    net = ensemble.drift[:, -1] * counts
    if f.linear is not None:
        gen += net @ np.asarray(f.linear, float)
    if f.square is not None:
        q = np.asarray(f.square, float)
        gen += (2.0 * ensemble.moment[:, -1] + ensemble.activity[:, -1]) @ q
    samples = f(thT) - f(th0) - gen
    R = samples.size
    se = float(samples.std(ddof=1) / np.sqrt(R)) if R > 1 else 0.0
    return float(abs(samples.mean())), se
