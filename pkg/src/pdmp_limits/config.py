"""Run configuration: JSON schema, defaults, validation and round-trip.

A configuration is a nested JSON object with blocks ``model``,
``spatial``, ``ladder``, ``experiment`` and ``solver`` plus ``seed`` and
``output``.  Every block is optional; missing keys get defaults and the
fully expanded configuration is what gets written to the manifest, so
``parse(emit(cfg)) == cfg``.

Two error classes are distinguished.  :class:`ConfigError` is a schema
problem (unknown key, wrong type) and names the offending key.
:class:`ConstraintError` is a well-formed configuration that violates a
cross-field requirement, e.g. a refinement ladder along which
``ell_minus * delta_plus`` does not decrease.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Any, Optional

import numpy as np

from .models import (
    COMPARTMENTAL,
    NEURAL_FIELD,
    CompartmentalSpec,
    GaussianKernel,
    NeuralFieldSpec,
    ScalarFunction,
)
from .spatial import Grid, Partition, PartitionError, aligned_grid, build_partition


class ConfigError(ValueError):
    """Schema violation; ``key`` is the dotted path of the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class ConstraintError(ValueError):
    """Cross-field constraint violated by an otherwise well-formed config."""


LADDER_POLICIES = ("enforce", "report")


# -- small helpers ----------------------------------------------------------------------


def _check_keys(d: Any, allowed, where: str):
    if not isinstance(d, dict):
        raise ConfigError(where or "<root>", "expected a JSON object")
    for k in d:
        if k not in allowed:
            raise ConfigError(f"{where}.{k}" if where else k, "unknown key")


def _num(d: dict, key: str, default, where: str, kind=float, positive=False, allow_none=False):
    v = d.get(key, default)
    path = f"{where}.{key}" if where else key
    if v is None:
        if allow_none:
            return None
        raise ConfigError(path, "must not be null")
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(path, f"expected a number, got {type(v).__name__}")
    if kind is int:
        # float(v) would round integers above 2**53
        if isinstance(v, float) and not v.is_integer():
            raise ConfigError(path, "expected an integer")
        v = int(v)
    else:
        v = float(v)
    if positive and v <= 0:
        raise ConfigError(path, "must be positive")
    return v


def _int_list(v, path: str, positive=True) -> tuple:
    if not isinstance(v, list) or not v:
        raise ConfigError(path, "expected a non-empty list of integers")
    out = []
    for i, x in enumerate(v):
        if isinstance(x, bool) or not isinstance(x, (int, float)) or float(x) != int(x):
            raise ConfigError(f"{path}[{i}]", "expected an integer")
        if positive and x <= 0:
            raise ConfigError(f"{path}[{i}]", "must be positive")
        out.append(int(x))
    return tuple(out)


def _float_list(v, path: str) -> tuple:
    if not isinstance(v, list):
        raise ConfigError(path, "expected a list of numbers")
    for i, x in enumerate(v):
        if isinstance(x, bool) or not isinstance(x, (int, float)):
            raise ConfigError(f"{path}[{i}]", "expected a number")
    return tuple(float(x) for x in v)


def _scalar_function(v, default: ScalarFunction, path: str) -> ScalarFunction:
    if v is None:
        return default
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return ScalarFunction.constant(float(v))
    if not isinstance(v, dict):
        raise ConfigError(path, "expected a number or a function object")
    kind = v.get("kind", "logistic")
    if kind == "constant":
        _check_keys(v, ("kind", "value"), path)
        return ScalarFunction.constant(_num(v, "value", 0.0, path))
    if kind == "logistic":
        _check_keys(v, ("kind", "scale", "gain", "shift"), path)
        return ScalarFunction.logistic(
            _num(v, "gain", 1.0, path), _num(v, "shift", 0.0, path), _num(v, "scale", 1.0, path)
        )
    raise ConfigError(f"{path}.kind", f"unknown function kind {kind!r}")


# -- blocks ------------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelConfig:
    """Model family and its functions; unused fields of the other family are ignored."""

    kind: str = COMPARTMENTAL
    a: ScalarFunction = ScalarFunction.logistic(2.0)
    b: ScalarFunction = ScalarFunction.logistic(-2.0)
    v_bar: float = 1.0
    f: ScalarFunction = ScalarFunction.logistic(4.0, 0.5)
    kernel: GaussianKernel = GaussianKernel(2.0, 0.2)
    u0: float = 0.0
    p0: float = 0.5

    @classmethod
    def from_dict(cls, d) -> "ModelConfig":
        if isinstance(d, str):
            d = {"kind": d}
        where = "model"
        if not isinstance(d, dict):
            raise ConfigError(where, "expected a model name or object")
        kind = d.get("kind", COMPARTMENTAL)
        if kind == COMPARTMENTAL:
            _check_keys(d, ("kind", "a", "b", "v_bar", "u0", "p0"), where)
            base = cls()
            return cls(
                kind=kind,
                a=_scalar_function(d.get("a"), base.a, f"{where}.a"),
                b=_scalar_function(d.get("b"), base.b, f"{where}.b"),
                v_bar=_num(d, "v_bar", base.v_bar, where),
                u0=_num(d, "u0", base.u0, where),
                p0=_p0(d, where),
            )
        if kind == NEURAL_FIELD:
            _check_keys(d, ("kind", "f", "kernel", "p0"), where)
            base = cls()
            kd = d.get("kernel", {})
            _check_keys(kd, ("kind", "amplitude", "width"), f"{where}.kernel")
            if kd.get("kind", "gaussian") != "gaussian":
                raise ConfigError(f"{where}.kernel.kind", "only 'gaussian' kernels are supported")
            kernel = GaussianKernel(
                _num(kd, "amplitude", base.kernel.amplitude, f"{where}.kernel"),
                _num(kd, "width", base.kernel.width, f"{where}.kernel", positive=True),
            )
            return cls(kind=kind, f=_scalar_function(d.get("f"), base.f, f"{where}.f"),
                       kernel=kernel, p0=_p0(d, where))
        raise ConfigError(f"{where}.kind", f"unknown model {kind!r}")

    def to_dict(self) -> dict:
        if self.kind == COMPARTMENTAL:
            return {"kind": self.kind, "a": self.a.to_dict(), "b": self.b.to_dict(),
                    "v_bar": self.v_bar, "u0": self.u0, "p0": self.p0}
        return {"kind": self.kind, "f": self.f.to_dict(), "kernel": self.kernel.to_dict(), "p0": self.p0}

    def build(self, partition: Partition, grid: Grid):
        if self.kind == COMPARTMENTAL:
            return CompartmentalSpec(self.a, self.b, self.v_bar, partition, grid)
        return NeuralFieldSpec(self.f, self.kernel, partition, grid)


def _p0(d, where):
    p0 = _num(d, "p0", 0.5, where)
    if p0 < 0 or (d.get("kind", COMPARTMENTAL) == COMPARTMENTAL and p0 > 1):
        raise ConfigError(f"{where}.p0", "initial fraction out of range")
    return p0


@dataclass(frozen=True)
class SpatialConfig:
    l: float = 1.0
    min_cells: int = 64
    cells_per_compartment: int = 2
    alpha: float = 1.0

    @classmethod
    def from_dict(cls, d) -> "SpatialConfig":
        w = "spatial"
        _check_keys(d, ("l", "min_cells", "cells_per_compartment", "alpha"), w)
        return cls(
            l=_num(d, "l", 1.0, w, positive=True),
            min_cells=_num(d, "min_cells", 64, w, int, positive=True),
            cells_per_compartment=_num(d, "cells_per_compartment", 2, w, int, positive=True),
            alpha=_num(d, "alpha", 1.0, w),
        )

    def to_dict(self) -> dict:
        return {"l": self.l, "min_cells": self.min_cells,
                "cells_per_compartment": self.cells_per_compartment, "alpha": self.alpha}


@dataclass(frozen=True)
class LevelConfig:
    """One partition: ``p`` compartments, channel counts, optional explicit boundaries."""

    p: int
    channels: Any  # int or tuple of ints
    boundaries: Optional[tuple] = None

    @classmethod
    def from_dict(cls, d, where: str) -> "LevelConfig":
        _check_keys(d, ("p", "channels", "boundaries"), where)
        if "p" not in d or "channels" not in d:
            raise ConfigError(where, "levels need 'p' and 'channels'")
        p = _num(d, "p", None, where, int, positive=True)
        ch = d["channels"]
        if isinstance(ch, list):
            ch = _int_list(ch, f"{where}.channels", positive=False)
        else:
            ch = _num(d, "channels", None, where, int)
        b = d.get("boundaries")
        b = None if b is None else _float_list(b, f"{where}.boundaries")
        return cls(p, ch, b)

    def to_dict(self) -> dict:
        out = {"p": self.p, "channels": list(self.channels) if isinstance(self.channels, tuple) else self.channels}
        if self.boundaries is not None:
            out["boundaries"] = list(self.boundaries)
        return out

    def partition(self, l: float) -> Partition:
        ch = list(self.channels) if isinstance(self.channels, tuple) else self.channels
        b = None if self.boundaries is None else list(self.boundaries)
        try:
            return build_partition(l, self.p, ch, boundaries=b)
        except PartitionError as exc:
            raise ConstraintError(str(exc)) from exc

    def grid(self, spatial: SpatialConfig, min_cells: int | None = None) -> Grid:
        grid = aligned_grid(spatial.l, self.p, spatial.cells_per_compartment,
                            min_cells or spatial.min_cells)
        if self.boundaries is not None:
            # refine until every explicit boundary sits on a node
            part = self.partition(spatial.l)
            for _ in range(12):
                try:
                    grid.boundary_nodes(part)
                    break
                except PartitionError:
                    grid = Grid(grid.l, 2 * (grid.m + 1) - 1)
            else:
                raise ConstraintError("misaligned grid: boundaries do not fall on grid nodes")
        return grid


def ladder_hypothesis(partitions) -> dict:
    """Refinement-ladder checks: ell_minus up, delta_plus down, ell_minus*delta_plus down."""
    ell = np.array([P.ell_minus for P in partitions], float)
    dp = np.array([P.delta_plus for P in partitions], float)
    prod = ell * dp
    ratio = [P.ell_minus * P.nu_minus / (P.ell_plus * P.nu_plus) for P in partitions]
    return {
        "ell_increasing": bool(np.all(np.diff(ell) > 0)),
        "delta_decreasing": bool(np.all(np.diff(dp) < 0)),
        "ell_delta_decreasing": bool(np.all(np.diff(prod) < 0)),
        "ell_delta": prod.tolist(),
        "heterogeneity_ratio": ratio,
    }


@dataclass(frozen=True)
class LadderConfig:
    """Refinement ladder.

    ``policy`` decides what happens when ``ell_minus * delta_plus`` fails
    to decrease: ``"enforce"`` rejects the config, ``"report"`` runs it and
    records the diagnostics.  A user-supplied ladder defaults to
    ``"enforce"``; the built-in ladder (whose product grows) defaults to
    ``"report"`` so that a minimal config stays valid.
    """

    levels: tuple = (LevelConfig(8, 16), LevelConfig(16, 64), LevelConfig(32, 256))
    policy: str = "report"

    @classmethod
    def from_dict(cls, d) -> "LadderConfig":
        w = "ladder"
        if isinstance(d, list):
            d = {"levels": d}
        _check_keys(d, ("levels", "policy"), w)
        policy = d.get("policy", "enforce" if "levels" in d else "report")
        if policy not in LADDER_POLICIES:
            raise ConfigError(f"{w}.policy", f"expected one of {LADDER_POLICIES}")
        if "levels" not in d:
            return cls(policy=policy)
        lv = d["levels"]
        if not isinstance(lv, list) or not lv:
            raise ConfigError(f"{w}.levels", "expected a non-empty list")
        return cls(tuple(LevelConfig.from_dict(x, f"{w}.levels[{i}]") for i, x in enumerate(lv)), policy)

    def to_dict(self) -> dict:
        return {"levels": [x.to_dict() for x in self.levels], "policy": self.policy}


@dataclass(frozen=True)
class TestFunction:
    """Pair ``(psi, Phi)`` given by sine coefficients; ``psi`` is unused for neural fields."""

    psi: tuple = ()
    phi: tuple = (1.0,)

    @classmethod
    def from_dict(cls, d, where: str) -> "TestFunction":
        _check_keys(d, ("psi", "phi"), where)
        return cls(_float_list(d.get("psi", []), f"{where}.psi"), _float_list(d.get("phi", []), f"{where}.phi"))

    def to_dict(self) -> dict:
        return {"psi": list(self.psi), "phi": list(self.phi)}

    def vector(self, N: int, has_potential: bool) -> np.ndarray:
        """Coefficient vector in the Galerkin state (U block first when present)."""
        phi = np.zeros(N)
        phi[: len(self.phi)] = self.phi
        if not has_potential:
            return phi
        psi = np.zeros(N)
        psi[: len(self.psi)] = self.psi
        return np.concatenate([psi, phi])


def default_tests(kind: str) -> tuple:
    if kind == COMPARTMENTAL:
        return (TestFunction((1.0,), (1.0,)), TestFunction((0.0, 1.0), (0.0, 1.0)))
    return (TestFunction((), (1.0,)), TestFunction((), (0.0, 1.0)))


@dataclass(frozen=True)
class EllSweep:
    """Channel-count sweep at fixed ``p``."""

    p: int = 8
    channels: tuple = (16, 64, 256)
    replicas: int = 500

    def levels(self):
        return [LevelConfig(self.p, c) for c in self.channels]

    def to_dict(self):
        return {"p": self.p, "channels": list(self.channels), "replicas": self.replicas}


@dataclass(frozen=True)
class PSweep:
    """Compartment-count sweep at fixed channels per compartment on a finer grid."""

    channels: int = 64
    p: tuple = (4, 8, 16, 32)
    replicas: int = 100
    min_cells: int = 256

    def levels(self):
        return [LevelConfig(p, self.channels) for p in self.p]

    def to_dict(self):
        return {"channels": self.channels, "p": list(self.p), "replicas": self.replicas, "min_cells": self.min_cells}


def _sweep_from(d, where, cls, list_key, scalar_key):
    base = cls()
    _check_keys(d, (list_key, scalar_key, "replicas") + (("min_cells",) if cls is PSweep else ()), where)
    kwargs = {
        scalar_key: _num(d, scalar_key, getattr(base, scalar_key), where, int, positive=True),
        list_key: _int_list(d[list_key], f"{where}.{list_key}") if list_key in d else getattr(base, list_key),
        "replicas": _num(d, "replicas", base.replicas, where, int, positive=True),
    }
    if cls is PSweep:
        kwargs["min_cells"] = _num(d, "min_cells", base.min_cells, where, int, positive=True)
    return cls(**kwargs)


@dataclass(frozen=True)
class ExperimentConfig:
    horizon: float = 1.0
    dt_out: float = 0.01
    replicas: int = 500
    clt_replicas: int = 2000
    langevin_replicas: int = 4000
    batches: int = 20
    test_functions: tuple = ()
    ell_sweep: EllSweep = EllSweep()
    p_sweep: PSweep = PSweep()

    @classmethod
    def from_dict(cls, d, kind: str) -> "ExperimentConfig":
        w = "experiment"
        _check_keys(d, ("horizon", "dt_out", "replicas", "clt_replicas", "langevin_replicas",
                        "batches", "test_functions", "ell_sweep", "p_sweep"), w)
        base = cls()
        tf = d.get("test_functions")
        if tf is None:
            tests = default_tests(kind)
        else:
            if not isinstance(tf, list) or not tf:
                raise ConfigError(f"{w}.test_functions", "expected a non-empty list")
            tests = tuple(TestFunction.from_dict(x, f"{w}.test_functions[{i}]") for i, x in enumerate(tf))
        return cls(
            horizon=_num(d, "horizon", base.horizon, w, positive=True),
            dt_out=_num(d, "dt_out", base.dt_out, w, positive=True),
            replicas=_num(d, "replicas", base.replicas, w, int, positive=True),
            clt_replicas=_num(d, "clt_replicas", base.clt_replicas, w, int, positive=True),
            langevin_replicas=_num(d, "langevin_replicas", base.langevin_replicas, w, int, positive=True),
            batches=_num(d, "batches", base.batches, w, int, positive=True),
            test_functions=tests,
            ell_sweep=_sweep_from(d.get("ell_sweep", {}), f"{w}.ell_sweep", EllSweep, "channels", "p"),
            p_sweep=_sweep_from(d.get("p_sweep", {}), f"{w}.p_sweep", PSweep, "p", "channels"),
        )

    def to_dict(self) -> dict:
        return {
            "horizon": self.horizon, "dt_out": self.dt_out, "replicas": self.replicas,
            "clt_replicas": self.clt_replicas, "langevin_replicas": self.langevin_replicas,
            "batches": self.batches, "test_functions": [t.to_dict() for t in self.test_functions],
            "ell_sweep": self.ell_sweep.to_dict(), "p_sweep": self.p_sweep.to_dict(),
        }


@dataclass(frozen=True)
class SolverConfig:
    """Time steps (``None`` means the grid default), Galerkin size and engine limits."""

    dt: Optional[float] = None
    dt_det: Optional[float] = None
    dt_cov: float = 1e-3
    dt_langevin: float = 1e-4
    N: int = 8
    n_spec: int = 256
    max_jumps: int = 10_000_000
    chunk_size: int = 256

    @classmethod
    def from_dict(cls, d) -> "SolverConfig":
        w = "solver"
        _check_keys(d, ("dt", "dt_det", "dt_cov", "dt_langevin", "N", "n_spec", "max_jumps", "chunk_size"), w)
        base = cls()
        return cls(
            dt=_num(d, "dt", None, w, positive=True, allow_none=True),
            dt_det=_num(d, "dt_det", None, w, positive=True, allow_none=True),
            dt_cov=_num(d, "dt_cov", base.dt_cov, w, positive=True),
            dt_langevin=_num(d, "dt_langevin", base.dt_langevin, w, positive=True),
            N=_num(d, "N", base.N, w, int, positive=True),
            n_spec=_num(d, "n_spec", base.n_spec, w, int, positive=True),
            max_jumps=_num(d, "max_jumps", base.max_jumps, w, int, positive=True),
            chunk_size=_num(d, "chunk_size", base.chunk_size, w, int, positive=True),
        )

    def to_dict(self) -> dict:
        return {"dt": self.dt, "dt_det": self.dt_det, "dt_cov": self.dt_cov, "dt_langevin": self.dt_langevin,
                "N": self.N, "n_spec": self.n_spec, "max_jumps": self.max_jumps, "chunk_size": self.chunk_size}


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = ModelConfig()
    spatial: SpatialConfig = SpatialConfig()
    ladder: LadderConfig = LadderConfig()
    experiment: ExperimentConfig = field(default_factory=lambda: ExperimentConfig(test_functions=default_tests(COMPARTMENTAL)))
    solver: SolverConfig = SolverConfig()
    seed: int = 12345
    output: str = "runs/out"

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "spatial": self.spatial.to_dict(),
            "ladder": self.ladder.to_dict(),
            "experiment": self.experiment.to_dict(),
            "solver": self.solver.to_dict(),
            "seed": self.seed,
            "output": self.output,
        }

    def with_overrides(self, seed=None, replicas=None, output=None) -> "RunConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seed=int(seed))
        if output is not None:
            cfg = replace(cfg, output=str(output))
        if replicas is not None:
            r = int(replicas)
            e = cfg.experiment
            cfg = replace(cfg, experiment=replace(
                e, replicas=r, clt_replicas=r, langevin_replicas=r,
                ell_sweep=replace(e.ell_sweep, replicas=r), p_sweep=replace(e.p_sweep, replicas=r)))
        return cfg


def from_dict(d: dict) -> RunConfig:
    _check_keys(d, ("model", "spatial", "ladder", "experiment", "solver", "seed", "output"), "")
    model = ModelConfig.from_dict(d.get("model", COMPARTMENTAL))
    seed = _num(d, "seed", 12345, "", int)
    if seed < 0:
        raise ConfigError("seed", "must be nonnegative")
    out = d.get("output", "runs/out")
    if not isinstance(out, str):
        raise ConfigError("output", "expected a string path")
    cfg = RunConfig(
        model=model,
        spatial=SpatialConfig.from_dict(d.get("spatial", {})),
        ladder=LadderConfig.from_dict(d.get("ladder", {})),
        experiment=ExperimentConfig.from_dict(d.get("experiment", {}), model.kind),
        solver=SolverConfig.from_dict(d.get("solver", {})),
        seed=seed,
        output=out,
    )
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> dict:
    """Cross-field checks; raises :class:`ConstraintError`, returns the ladder diagnostics."""
    sp, ex, so = cfg.spatial, cfg.experiment, cfg.solver
    n = ex.horizon / ex.dt_out
    if abs(n - round(n)) > 1e-9 * max(1.0, n):
        raise ConstraintError("experiment.horizon must be a multiple of experiment.dt_out")
    for i in (4, 2):
        m = ex.horizon / i / ex.dt_out
        if abs(m - round(m)) > 1e-9 * max(1.0, m):
            raise ConstraintError("horizon/4 and horizon/2 must be multiples of dt_out")
    if ex.replicas < ex.batches or ex.clt_replicas < ex.batches:
        raise ConstraintError("replica counts must be at least the number of batches")
    for t in ex.test_functions:
        if len(t.phi) > so.N or len(t.psi) > so.N:
            raise ConstraintError("test functions use more sine modes than solver.N")
        if cfg.model.kind == NEURAL_FIELD and any(t.psi):
            raise ConstraintError("neural field test functions have no potential part (psi)")
    levels = list(cfg.ladder.levels)
    parts = [lv.partition(sp.l) for lv in levels]
    for lv in levels + ex.ell_sweep.levels():
        lv.grid(sp)
    for lv in ex.p_sweep.levels():
        lv.grid(sp, ex.p_sweep.min_cells)
    diag = ladder_hypothesis(parts)
    if len(levels) > 1:
        if not (diag["ell_increasing"] and diag["delta_decreasing"]):
            raise ConstraintError("ladder must have increasing channel counts and decreasing diameters")
        if cfg.ladder.policy == "enforce" and not diag["ell_delta_decreasing"]:
            raise ConstraintError(
                f"ladder violates ell_minus*delta_plus -> 0 (values {diag['ell_delta']}); "
                "set ladder.policy='report' to run it anyway"
            )
    return diag


def parse_config(source) -> RunConfig:
    """Parse a path, JSON text or dict into a validated :class:`RunConfig`."""
    if isinstance(source, dict):
        return from_dict(source)
    text = str(source)
    if not text.lstrip().startswith("{"):
        with open(text, encoding="utf-8") as fh:
            text = fh.read()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<json>", f"invalid JSON: {exc}") from exc
    return from_dict(d)


def emit(cfg: RunConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True)
