"""Time-stepping for the 2D conformal Ricci flow, the coupled forward heat
equation, and the backward conjugate heat equation, plus the closed-form
shrinking round sphere in any dimension.

In conformal gauge g = e^{2f}δ the flows reduce to

    Ricci flow:      ∂_t f = e^{-2f} Δ₀ f
    heat equation:   ∂_t u = e^{-2f} Δ₀ u
    conjugate heat:  ∂_t u = -Δ_g u + R u   (solved forward in s = T - t)

All stepping is classical four-stage Runge-Kutta under the explicit
parabolic stability bound dt ≤ 0.2·h²·min(e^{2f}).
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from .errors import BlowupError, CflViolationError, DomainError, GridError
from .grid_geometry import (
    ConformalMetric,
    GridSpec,
    ScalarField,
    flat_laplacian,
    integrate,
)

#: Hard CFL factor; steps with dt above this fraction of h²·min(e^{2f}) are rejected.
CFL_FACTOR = 0.2

_TRAJ_MAGIC = b"RHLTRJ01"


class Snapshot(NamedTuple):
    t: float
    metric: ConformalMetric
    u: ScalarField


def cfl_limit(metric: ConformalMetric) -> float:
    """Largest admissible dt for explicit stepping on this metric."""
    h = min(metric.spec.hx, metric.spec.hy)
    return CFL_FACTOR * h * h * float(np.exp(2.0 * metric.f.min()))


def _require_cfl(metric: ConformalMetric, dt: float):
    limit = cfl_limit(metric)
    if not 0.0 < dt <= limit * (1.0 + 1e-12):
        raise CflViolationError(
            f"dt = {dt:.3e} violates the stability bound {limit:.3e} "
            f"(0.2·h²·min e^{{2f}})"
        )


def _ricci_rhs(f: np.ndarray, spec: GridSpec) -> np.ndarray:
    return np.exp(-2.0 * f) * flat_laplacian(f, spec)


def _heat_rhs(u: np.ndarray, f: np.ndarray, spec: GridSpec) -> np.ndarray:
    return np.exp(-2.0 * f) * flat_laplacian(u, spec)


def _rk4(y: np.ndarray, rhs: Callable[[np.ndarray], np.ndarray], dt: float) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore"):
        k1 = rhs(y)
        k2 = rhs(y + 0.5 * dt * k1)
        k3 = rhs(y + 0.5 * dt * k2)
        k4 = rhs(y + dt * k3)
        return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def ricci_step(metric: ConformalMetric, dt: float) -> ConformalMetric:
    """One RK4 step of the conformal Ricci flow; time stamp advances by dt."""
    _require_cfl(metric, dt)
    spec = metric.spec
    f_new = _rk4(metric.f, lambda f: _ricci_rhs(f, spec), dt)
    return ConformalMetric(spec, f_new, metric.t + dt)


def heat_step(metric: ConformalMetric, u: ScalarField, dt: float) -> ScalarField:
    """One RK4 step of ∂_t u = Δ_g u with the supplied metric held fixed.

    For the flow-coupled problem use `coupled_step`, which advances metric
    and solution with matched stages.
    """
    _require_cfl(metric, dt)
    spec = metric.spec
    if u.spec != spec:
        raise GridError("scalar field grid does not match metric grid")
    values = _rk4(u.values, lambda w: _heat_rhs(w, metric.f, spec), dt)
    return ScalarField(spec, values)


def coupled_step(
    metric: ConformalMetric, u: ScalarField, dt: float
) -> tuple[ConformalMetric, ScalarField]:
    """One joint RK4 step of Ricci flow and heat equation with matched stages."""
    _require_cfl(metric, dt)
    spec = metric.spec
    if u.spec != spec:
        raise GridError("scalar field grid does not match metric grid")
    f0, u0 = metric.f, u.values

    with np.errstate(over="ignore", invalid="ignore"):
        k1f = _ricci_rhs(f0, spec)
        k1u = _heat_rhs(u0, f0, spec)
        f1 = f0 + 0.5 * dt * k1f
        k2f = _ricci_rhs(f1, spec)
        k2u = _heat_rhs(u0 + 0.5 * dt * k1u, f1, spec)
        f2 = f0 + 0.5 * dt * k2f
        k3f = _ricci_rhs(f2, spec)
        k3u = _heat_rhs(u0 + 0.5 * dt * k2u, f2, spec)
        f3 = f0 + dt * k3f
        k4f = _ricci_rhs(f3, spec)
        k4u = _heat_rhs(u0 + dt * k3u, f3, spec)

        f_new = f0 + (dt / 6.0) * (k1f + 2.0 * k2f + 2.0 * k3f + k4f)
        u_new = u0 + (dt / 6.0) * (k1u + 2.0 * k2u + 2.0 * k3u + k4u)
    if not (np.isfinite(f_new).all() and np.isfinite(u_new).all()):
        raise BlowupError(f"non-finite values after step from t = {metric.t:.6g}")
    return ConformalMetric(spec, f_new, metric.t + dt), ScalarField(spec, u_new)


@dataclass
class FlowTrajectory:
    """Time-ordered snapshots of a coupled run.

    `dt` is the uniform snapshot spacing; the integrator advanced with
    `step_dt = dt / store_every` internally.
    """

    snapshots: list[Snapshot]
    dt: float
    T: float
    store_every: int = 1
    log: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.snapshots) < 2:
            raise GridError("a trajectory needs at least two snapshots")
        spec = self.snapshots[0].metric.spec
        times = np.array([s.t for s in self.snapshots])
        gaps = np.diff(times)
        if not np.all(gaps > 0.0):
            raise GridError("snapshot times must be strictly increasing")
        if not np.allclose(gaps, self.dt, rtol=1e-9, atol=1e-12):
            raise GridError("snapshot spacing is not uniform")
        for snap in self.snapshots:
            if snap.metric.spec != spec:
                raise GridError("all snapshots must share one grid")
            if not np.isfinite(snap.u.values).all():
                raise GridError("trajectory contains non-finite solution values")

    @property
    def spec(self) -> GridSpec:
        return self.snapshots[0].metric.spec

    @property
    def step_dt(self) -> float:
        return self.dt / self.store_every

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.snapshots])

    def with_solution(self, solutions: list[ScalarField]) -> "FlowTrajectory":
        """Same geometry, different solution samples (e.g. a conjugate solve)."""
        if len(solutions) != len(self.snapshots):
            raise GridError("solution count does not match snapshot count")
        snaps = [
            Snapshot(s.t, s.metric, u) for s, u in zip(self.snapshots, solutions)
        ]
        return FlowTrajectory(snaps, self.dt, self.T, self.store_every, dict(self.log))


@dataclass
class RunConfig:
    """Inputs for one coupled run; dt = None derives the step from the CFL bound."""

    spec: GridSpec
    f0: np.ndarray
    u0: np.ndarray
    T: float
    dt: float | None = None
    cfl_fraction: float = 0.18
    store_every: int = 1
    scenario: str = ""
    out_dir: Path | None = None

    def __post_init__(self):
        self.f0 = np.asarray(self.f0, dtype=float)
        self.u0 = np.asarray(self.u0, dtype=float)
        if self.f0.shape != self.spec.shape or self.u0.shape != self.spec.shape:
            raise GridError("initial fields must match the grid shape")
        if not self.T > 0.0:
            raise GridError("final time T must be positive")
        if self.store_every < 1:
            raise GridError("store_every must be >= 1")
        if not 0.0 < self.cfl_fraction < CFL_FACTOR + 1e-15:
            raise CflViolationError(
                f"cfl_fraction {self.cfl_fraction} outside (0, {CFL_FACTOR}]"
            )
        if self.dt is not None:
            _require_cfl(ConformalMetric(self.spec, self.f0), self.dt)

    def resolve_steps(self) -> tuple[float, int]:
        """Concrete (dt, n_steps) with n_steps a multiple of store_every."""
        if self.dt is None:
            target = (
                self.cfl_fraction
                * min(self.spec.hx, self.spec.hy) ** 2
                * float(np.exp(2.0 * self.f0.min()))
            )
            n = math.ceil(self.T / target)
        else:
            n = round(self.T / self.dt)
            if n < 1 or abs(n * self.dt - self.T) > 1e-9 * self.T:
                raise GridError("T must be an integer multiple of dt")
        n = self.store_every * math.ceil(n / self.store_every)
        return self.T / n, n


def run_coupled_flow(config: RunConfig) -> FlowTrajectory:
    """Advance the coupled system on [0, T], storing every store_every-th step.

    Raises BlowupError (carrying the partial trajectory) if values go
    non-finite, CflViolationError if the evolving metric tightens the
    stability bound below the chosen dt.
    """
    dt, n_steps = config.resolve_steps()
    metric = ConformalMetric(config.spec, config.f0, 0.0)
    u = ScalarField(config.spec, config.u0)
    snapshots = [Snapshot(0.0, metric, u)]

    u0_max = float(np.abs(config.u0).max())
    max_seen = u0_max
    hi_drift = 0.0
    lo_drift = 0.0
    prev_max = float(config.u0.max())
    prev_min = float(config.u0.min())

    for step in range(1, n_steps + 1):
        try:
            metric, u = coupled_step(metric, u, dt)
        except BlowupError:
            partial = (
                FlowTrajectory(
                    snapshots, dt * config.store_every, snapshots[-1].t,
                    config.store_every,
                )
                if len(snapshots) >= 2
                else None
            )
            raise BlowupError(
                f"non-finite values at t = {step * dt:.6g}; aborting", partial
            ) from None
        cur_max = float(u.values.max())
        cur_min = float(u.values.min())
        hi_drift = max(hi_drift, cur_max - prev_max)
        lo_drift = max(lo_drift, prev_min - cur_min)
        prev_max, prev_min = cur_max, cur_min
        max_seen = max(max_seen, float(np.abs(u.values).max()))
        if step % config.store_every == 0:
            # re-anchor the time stamp to avoid accumulated rounding
            t = step * dt
            metric = ConformalMetric(metric.spec, metric.f, t)
            snapshots.append(Snapshot(t, metric, u))

    traj = FlowTrajectory(
        snapshots, dt * config.store_every, config.T, config.store_every
    )
    lap_scale = float(
        np.abs(flat_laplacian(config.u0, config.spec)).max()
        * np.exp(-2.0 * config.f0.min())
    )
    advisory_tol = 10.0 * dt * lap_scale
    traj.log["max_principle_ok"] = bool(
        max_seen <= u0_max + advisory_tol
        and hi_drift <= advisory_tol
        and lo_drift <= advisory_tol
    )
    traj.log["max_principle_drift"] = max(hi_drift, lo_drift)
    traj.log["max_abs_u"] = max_seen
    traj.log["scenario"] = config.scenario
    return traj


def _conjugate_rhs(u: np.ndarray, f: np.ndarray, spec: GridSpec) -> np.ndarray:
    # forward-parabolic form in s = T - t: ∂_s u = Δ_g u - R u
    lap = np.exp(-2.0 * f) * flat_laplacian(u, spec)
    ricci_scalar = -2.0 * np.exp(-2.0 * f) * flat_laplacian(f, spec)
    return lap - ricci_scalar * u


def conjugate_heat_solve(trajectory: FlowTrajectory, uT: ScalarField) -> FlowTrajectory:
    """Solve the conjugate heat equation backward from t = T to t = 0.

    Substituting s = T - t makes the equation forward-parabolic; the stored
    metric snapshots are reused, interpolating f linearly between snapshots
    for the Runge-Kutta stages. Mass ∫u dg per snapshot lands in log["mass"].
    """
    spec = trajectory.spec
    if uT.spec != spec:
        raise GridError("terminal data grid does not match trajectory grid")
    substeps = trajectory.store_every
    dt_sub = trajectory.step_dt
    snaps = trajectory.snapshots

    u = uT.values.copy()
    solutions = [ScalarField(spec, u)]
    for i in range(len(snaps) - 1, 0, -1):
        f_hi, f_lo = snaps[i].metric.f, snaps[i - 1].metric.f
        _require_cfl(snaps[i - 1].metric, dt_sub)
        gap = snaps[i].t - snaps[i - 1].t

        for m in range(substeps):
            # linear interpolation of f inside the snapshot interval,
            # parametrized by distance s already marched from t_i
            s_base = m * dt_sub

            def f_at(offset: float) -> np.ndarray:
                theta = min((s_base + offset) / gap, 1.0)
                return f_hi + theta * (f_lo - f_hi)

            k1 = _conjugate_rhs(u, f_at(0.0), spec)
            f_mid = f_at(0.5 * dt_sub)
            k2 = _conjugate_rhs(u + 0.5 * dt_sub * k1, f_mid, spec)
            k3 = _conjugate_rhs(u + 0.5 * dt_sub * k2, f_mid, spec)
            k4 = _conjugate_rhs(u + dt_sub * k3, f_at(dt_sub), spec)
            u = u + (dt_sub / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

        if not np.isfinite(u).all():
            raise BlowupError(f"conjugate solve went non-finite at t = {snaps[i-1].t:.6g}")
        solutions.append(ScalarField(spec, u))

    solutions.reverse()
    out = trajectory.with_solution(solutions)
    masses = [integrate(s.metric, s.u.values) for s in out.snapshots]
    out.log["mass"] = masses
    mass_scale = max(abs(m) for m in masses) or 1.0
    out.log["mass_rel_drift"] = (max(masses) - min(masses)) / mass_scale
    return out


def mass_series(trajectory: FlowTrajectory) -> np.ndarray:
    """∫ u dg per snapshot (cell-area element e^{2f}·hx·hy)."""
    return np.array([integrate(s.metric, s.u.values) for s in trajectory.snapshots])


def area_series(trajectory: FlowTrajectory) -> np.ndarray:
    """Total metric area per snapshot."""
    return np.array(
        [integrate(s.metric, np.ones(s.metric.spec.shape)) for s in trajectory.snapshots]
    )


# ---------------------------------------------------------------------------
# Closed-form shrinking round sphere


def unit_sphere_volume(n: int) -> float:
    """Volume of the unit round S^n."""
    return 2.0 * math.pi ** ((n + 1) / 2.0) / math.gamma((n + 1) / 2.0)


class SphereState(NamedTuple):
    scale: float
    R: float
    lambda1: float
    volume: float
    heat_amplitude: float
    conjugate_constant: float


@dataclass(frozen=True)
class SphereModel:
    """Exact shrinking sphere g(t) = (1 - 2(n-1)t)·g_{S^n}, blowup at T*."""

    n: int = 2

    def __post_init__(self):
        if self.n < 2:
            raise GridError("sphere dimension must be >= 2")

    @property
    def T_star(self) -> float:
        return 1.0 / (2.0 * (self.n - 1))

    def scale(self, t: float) -> float:
        if not 0.0 <= t < self.T_star:
            raise DomainError(f"t = {t} outside [0, T*) with T* = {self.T_star}")
        return 1.0 - 2.0 * (self.n - 1) * t

    def distance(self, theta: float | np.ndarray, t: float) -> float | np.ndarray:
        """d_t(pole, θ) = sqrt(scale)·θ for polar angle θ of the unit sphere."""
        return np.sqrt(self.scale(t)) * theta


def sphere_exact(model: SphereModel, t: float) -> SphereState:
    """Closed-form state of the shrinking sphere at time t < T*.

    heat_amplitude solves a' = -λ₁(t)·a with a(0) = 1: the first spherical
    harmonic times this amplitude is an exact coupled heat solution.
    conjugate_constant is the spatially constant conjugate solution
    normalized so ∫ u dg(t) = 1 for all t.
    """
    n = model.n
    scale = model.scale(t)
    vol_unit = unit_sphere_volume(n)
    return SphereState(
        scale=scale,
        R=n * (n - 1) / scale,
        lambda1=n / scale,
        volume=vol_unit * scale ** (n / 2.0),
        heat_amplitude=scale ** (n / (2.0 * (n - 1))),
        conjugate_constant=scale ** (-n / 2.0) / vol_unit,
    )


# ---------------------------------------------------------------------------
# Trajectory persistence (little-endian layout documented in FORMATS.md)


def write_trajectory(path: Path | str, trajectory: FlowTrajectory, config_echo: dict | None = None):
    """One file per run: header, config echo, then per-snapshot t, f, u."""
    spec = trajectory.spec
    echo = dict(config_echo or {})
    echo.setdefault("step_dt", trajectory.step_dt)
    echo.setdefault("store_every", trajectory.store_every)
    blob = json.dumps(echo, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_TRAJ_MAGIC)
        fh.write(
            struct.pack(
                "<IIdddII",
                spec.nx,
                spec.ny,
                spec.Lx,
                spec.Ly,
                trajectory.dt,
                len(trajectory.snapshots),
                len(blob),
            )
        )
        fh.write(blob)
        for snap in trajectory.snapshots:
            fh.write(struct.pack("<d", snap.t))
            fh.write(snap.metric.f.astype("<f8").tobytes(order="C"))
            fh.write(snap.u.values.astype("<f8").tobytes(order="C"))


def read_trajectory(path: Path | str) -> tuple[FlowTrajectory, dict]:
    """Inverse of write_trajectory; validates the magic and array sizes."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_TRAJ_MAGIC))
        if magic != _TRAJ_MAGIC:
            raise GridError(f"{path}: not a trajectory file (bad magic {magic!r})")
        header = struct.calcsize("<IIdddII")
        nx, ny, lx, ly, dt, count, blob_len = struct.unpack("<IIdddII", fh.read(header))
        echo = json.loads(fh.read(blob_len).decode("utf-8"))
        spec = GridSpec(nx, ny, lx, ly)
        cells = nx * ny
        snaps = []
        for _ in range(count):
            (t,) = struct.unpack("<d", fh.read(8))
            f = np.frombuffer(fh.read(8 * cells), dtype="<f8").reshape(nx, ny).copy()
            u = np.frombuffer(fh.read(8 * cells), dtype="<f8").reshape(nx, ny).copy()
            snaps.append(Snapshot(t, ConformalMetric(spec, f, t), ScalarField(spec, u)))
        if fh.read(1):
            raise GridError(f"{path}: trailing bytes after {count} snapshots")
    store_every = int(echo.get("store_every", 1))
    traj = FlowTrajectory(snaps, dt, snaps[-1].t, store_every)
    return traj, echo
