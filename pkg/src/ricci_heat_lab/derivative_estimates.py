"""Parabolic balls on evolving geometry and sup-ratio checks of the local
derivative estimates: gradient, Hessian, and higher orders with rates
a(1/r^k + 1/t^{k/2}), curvature-derivative rates, the log-gradient bound for
positive solutions, and the time-weighted Laplacian bound.

Every checker reports the measured supremum of |quantity| / rate over the
checked region (the empirical constant), the ratio against the constant it
was given, and hypothesis flags recomputed from raw fields.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GridError, UnsupportedRankError
from .flows import FlowTrajectory
from .grid_geometry import (
    DIMENSION,
    K_MAX,
    ConformalMetric,
    ScalarField,
    curvature_derivative_norm,
    derivative_norm,
    geodesic_distance,
    laplace_beltrami,
    scalar_curvature,
)


@dataclass
class ParabolicBall:
    """Per-snapshot geodesic distance fields from x0, up to time T.

    The mask at radius q and snapshot i is `distances[i] <= q`; each mask
    contains x0, and the masks realize the spacetime ball under the
    snapshot's own metric.
    """

    x0: tuple[int, int]
    r: float
    T: float
    times: list[float]
    distances: list[np.ndarray]
    flags: list[str] = field(default_factory=list)

    def mask(self, i: int, radius: float | None = None) -> np.ndarray:
        q = self.r if radius is None else radius
        return self.distances[i] <= q

    @property
    def n_slices(self) -> int:
        return len(self.times)


def _loop_systole_estimate(metric: ConformalMetric) -> float:
    """Shortest coordinate loop of the torus: a cheap upper bound surrogate
    for the systole, used only to flag balls that may wrap around."""
    spec = metric.spec
    f = metric.f
    col = np.exp(0.5 * (f + np.roll(f, -1, axis=1))).sum(axis=1) * spec.hy
    row = np.exp(0.5 * (f + np.roll(f, -1, axis=0))).sum(axis=0) * spec.hx
    return float(min(col.min(), row.min()))


def parabolic_ball(
    trajectory: FlowTrajectory, x0: tuple[int, int], r: float, T: float
) -> ParabolicBall:
    """Distance fields d_{t_i}(x0, ·) for every snapshot with t_i ≤ T.

    Flags "ball-wraps" when 2r reaches the coordinate-loop systole estimate
    (the compact-closure surrogate fails) and "covers-grid" when some slice
    ball is the whole torus.
    """
    if not r > 0.0:
        raise GridError("ball radius must be positive")
    if T > trajectory.snapshots[-1].t * (1.0 + 1e-12):
        raise GridError(f"ball horizon T = {T} beyond trajectory end")

    times: list[float] = []
    distances: list[np.ndarray] = []
    flags: list[str] = []
    prev_f = None
    prev_d = None
    for snap in trajectory.snapshots:
        if snap.t > T * (1.0 + 1e-12):
            break
        if prev_f is not None and np.array_equal(prev_f, snap.metric.f):
            d = prev_d
        else:
            d = geodesic_distance(snap.metric, x0).values
            prev_f, prev_d = snap.metric.f, d
        times.append(snap.t)
        distances.append(d)
        if 2.0 * r >= _loop_systole_estimate(snap.metric) and "ball-wraps" not in flags:
            flags.append("ball-wraps")
        if (d <= r).all() and "covers-grid" not in flags:
            flags.append("covers-grid")
    if len(times) < 2:
        raise GridError("parabolic ball needs at least two snapshots within [0, T]")
    return ParabolicBall(tuple(x0), r, T, times, distances, flags)


@dataclass
class EstimateReport:
    """Outcome of one sup-ratio check.

    `empirical` is the measured sup of |quantity|/rate (the smallest constant
    making the bound hold on this trajectory); `sup_ratio` divides it by
    `constant_used`, so pass ⇔ sup_ratio ≤ 1.
    """

    estimate_id: str
    sup_ratio: float
    empirical: float
    constant_used: float
    passed: bool
    hypothesis_ok: bool
    flags: list[str]
    r: float
    a: float
    k: int
    t_min: float
    argmax_t: float
    argmax_x: int
    argmax_y: int

    def as_row(self, scenario: str = "") -> dict:
        return {
            "scenario": scenario,
            "estimate": self.estimate_id,
            "r": self.r,
            "a": self.a,
            "k": self.k,
            "sup_ratio": self.sup_ratio,
            "constant_used": self.constant_used,
            "empirical": self.empirical,
            "pass": self.passed,
            "flags": ";".join(self.flags),
            "argmax_t": self.argmax_t,
            "argmax_x": self.argmax_x,
            "argmax_y": self.argmax_y,
        }


def _ricci_upper_hypothesis(ball: ParabolicBall, trajectory: FlowTrajectory) -> bool:
    """Ric ≤ (n-1)/r² on PB_r; in 2D Ric = (R/2)g, so max R/2 ≤ 1/r²."""
    bound = (DIMENSION - 1) / ball.r**2
    for i, t in enumerate(ball.times):
        snap = trajectory.snapshots[i]
        r_val = scalar_curvature(snap.metric).values
        if (0.5 * r_val[ball.mask(i)]).max() > bound * (1.0 + 1e-9):
            return False
    return True


def _curvature_norm_hypothesis(ball: ParabolicBall, trajectory: FlowTrajectory) -> bool:
    """|Rm| ≤ 1/r² on PB_r; in 2D |Rm| = |R|."""
    bound = 1.0 / ball.r**2
    for i, t in enumerate(ball.times):
        snap = trajectory.snapshots[i]
        rm = curvature_derivative_norm(snap.metric, 0).values
        if rm[ball.mask(i)].max() > bound * (1.0 + 1e-9):
            return False
    return True


def _solution_bound_hypothesis(
    ball: ParabolicBall, trajectory: FlowTrajectory, a: float
) -> bool:
    for i in range(ball.n_slices):
        u = trajectory.snapshots[i].u.values
        if np.abs(u[ball.mask(i)]).max() > a * (1.0 + 1e-12):
            return False
    return True


def _scan_sup(
    trajectory: FlowTrajectory,
    ball: ParabolicBall,
    radius: float,
    field_of: "callable",
    rate_of: "callable",
    include_t0: bool = False,
):
    """Sup of field/rate over masked points and admissible snapshot times."""
    best = 0.0
    arg = (0.0, ball.x0[0], ball.x0[1])
    t_min = None
    for i, t in enumerate(ball.times):
        if t <= 0.0 and not include_t0:
            continue
        if t_min is None:
            t_min = t
        mask = ball.mask(i, radius)
        if not mask.any():
            continue
        values = field_of(trajectory.snapshots[i]) / rate_of(t)
        values = np.where(mask, values, -np.inf)
        flat_idx = int(np.argmax(values))
        ix, iy = np.unravel_index(flat_idx, values.shape)
        if values[ix, iy] > best:
            best = float(values[ix, iy])
            arg = (t, int(ix), int(iy))
    return best, arg, (0.0 if t_min is None else t_min)


def _finish(
    estimate_id, empirical, constant, hypothesis_ok, flags, r, a, k, t_min, arg
) -> EstimateReport:
    sup_ratio = empirical / constant if constant > 0 else np.inf
    sup_ratio = max(sup_ratio, 0.0)
    return EstimateReport(
        estimate_id=estimate_id,
        sup_ratio=sup_ratio,
        empirical=empirical,
        constant_used=constant,
        passed=bool(sup_ratio <= 1.0),
        hypothesis_ok=hypothesis_ok,
        flags=flags,
        r=r,
        a=a,
        k=k,
        t_min=t_min,
        argmax_t=arg[0],
        argmax_x=arg[1],
        argmax_y=arg[2],
    )


def check_gradient_estimate(
    trajectory: FlowTrajectory,
    ball: ParabolicBall,
    a: float,
    C1: float,
    time_uniform: bool = False,
) -> EstimateReport:
    """|∇u| ≤ C₁·a·(1/r + 1/√t) on the half ball, t > 0.

    Hypotheses checked on PB_r: Ric ≤ (n-1)/r² and |u| ≤ a. In time-uniform
    mode the initial slice must satisfy |∇u| ≤ a/r on the closed r-ball, and
    the time-independent bound |∇u| ≤ C₁·a/r is verified including t = 0.
    """
    if not a > 0:
        raise GridError("solution bound a must be positive")
    flags = list(ball.flags)
    hyp = _ricci_upper_hypothesis(ball, trajectory) and _solution_bound_hypothesis(
        ball, trajectory, a
    )
    if not hyp:
        flags.append("hypothesis-violated")

    def grad_field(snap):
        return derivative_norm(snap.metric, snap.u, 1).values

    r = ball.r
    if time_uniform:
        initial = grad_field(trajectory.snapshots[0])
        if initial[ball.mask(0)].max() > (a / r) * (1.0 + 1e-9):
            hyp = False
            flags.append("initial-gradient-hypothesis-violated")
        sup, arg, t_min = _scan_sup(
            trajectory, ball, r / 2, grad_field, lambda t: a / r, include_t0=True
        )
        return _finish("gradient-time-uniform", sup, C1, hyp, flags, r, a, 1, t_min, arg)

    sup, arg, t_min = _scan_sup(
        trajectory, ball, r / 2, grad_field,
        lambda t: a * (1.0 / r + 1.0 / np.sqrt(t)),
    )
    return _finish("gradient", sup, C1, hyp, flags, r, a, 1, t_min, arg)


def check_hessian_estimate(
    trajectory: FlowTrajectory,
    ball: ParabolicBall,
    a: float,
    C2: float,
    time_uniform: bool = False,
) -> EstimateReport:
    """|∇²u| ≤ C₂·a·(1/r² + 1/t) on the quarter ball, t > 0.

    Hypotheses on PB_r: |Rm| ≤ 1/r² and |u| ≤ a. Time-uniform mode needs
    both |∇u| ≤ a/r and |∇²u| ≤ a/r² initially and checks C₂·a/r².
    """
    if not a > 0:
        raise GridError("solution bound a must be positive")
    flags = list(ball.flags)
    hyp = _curvature_norm_hypothesis(ball, trajectory) and _solution_bound_hypothesis(
        ball, trajectory, a
    )
    if not hyp:
        flags.append("hypothesis-violated")

    def hess_field(snap):
        return derivative_norm(snap.metric, snap.u, 2).values

    r = ball.r
    if time_uniform:
        grad0 = derivative_norm(
            trajectory.snapshots[0].metric, trajectory.snapshots[0].u, 1
        ).values
        hess0 = hess_field(trajectory.snapshots[0])
        m0 = ball.mask(0)
        if (
            grad0[m0].max() > (a / r) * (1.0 + 1e-9)
            or hess0[m0].max() > (a / r**2) * (1.0 + 1e-9)
        ):
            hyp = False
            flags.append("initial-derivative-hypothesis-violated")
        sup, arg, t_min = _scan_sup(
            trajectory, ball, r / 4, hess_field, lambda t: a / r**2, include_t0=True
        )
        return _finish("hessian-time-uniform", sup, C2, hyp, flags, r, a, 2, t_min, arg)

    sup, arg, t_min = _scan_sup(
        trajectory, ball, r / 4, hess_field,
        lambda t: a * (1.0 / r**2 + 1.0 / t),
    )
    return _finish("hessian", sup, C2, hyp, flags, r, a, 2, t_min, arg)


def check_higher_estimate(
    trajectory: FlowTrajectory, ball: ParabolicBall, a: float, k: int, Ck: float
) -> EstimateReport:
    """|∇^k u| ≤ C_k·a·(1/r^k + 1/t^{k/2}) on the 2^{-k}-scaled ball, t > 0."""
    if not 2 <= k <= K_MAX - 1:
        raise UnsupportedRankError(f"higher estimate order k = {k} outside [2, {K_MAX - 1}]")
    if not a > 0:
        raise GridError("solution bound a must be positive")
    flags = list(ball.flags)
    hyp = _curvature_norm_hypothesis(ball, trajectory) and _solution_bound_hypothesis(
        ball, trajectory, a
    )
    if not hyp:
        flags.append("hypothesis-violated")
    r = ball.r
    sup, arg, t_min = _scan_sup(
        trajectory,
        ball,
        r / 2**k,
        lambda snap: derivative_norm(snap.metric, snap.u, k).values,
        lambda t: a * (1.0 / r**k + 1.0 / t ** (k / 2.0)),
    )
    return _finish(f"higher-{k}", sup, Ck, hyp, flags, r, a, k, t_min, arg)


def check_shi_curvature(
    trajectory: FlowTrajectory, ball: ParabolicBall, i: int, Cprime: float
) -> EstimateReport:
    """|∇^i Rm| ≤ C'_i·(1/r²)·(1/r^i + 1/t^{i/2}) on the 2^{-i}-scaled ball."""
    if not 1 <= i <= K_MAX - 2:
        raise UnsupportedRankError(f"curvature derivative order {i} outside [1, {K_MAX - 2}]")
    flags = list(ball.flags)
    hyp = _curvature_norm_hypothesis(ball, trajectory)
    if not hyp:
        flags.append("hypothesis-violated")
    r = ball.r
    sup, arg, t_min = _scan_sup(
        trajectory,
        ball,
        r / 2**i,
        lambda snap: curvature_derivative_norm(snap.metric, i).values,
        lambda t: (1.0 / r**2) * (1.0 / r**i + 1.0 / t ** (i / 2.0)),
    )
    return _finish(f"shi-{i}", sup, Cprime, hyp, flags, r, 0.0, i, t_min, arg)


def empirical_constant(
    trajectory: FlowTrajectory, ball: ParabolicBall, a: float, k: int
) -> float:
    """Smallest constant making the order-k derivative bound hold on this run."""
    if k == 1:
        report = check_gradient_estimate(trajectory, ball, a, C1=1.0)
    else:
        report = check_higher_estimate(trajectory, ball, a, k, Ck=1.0)
    return report.empirical


def check_zhang_log_gradient(trajectory: FlowTrajectory, a: float) -> EstimateReport:
    """|∇u|/u ≤ sqrt(1/t)·sqrt(ln(a/u)) on M × (t_min, T], for 0 < u ≤ a.

    Points with u = a and ∇u = 0 use the 0/0 → 0 convention (interior
    maximum); nonpositive u anywhere flags the hypothesis.
    """
    flags: list[str] = []
    hyp = True
    for snap in trajectory.snapshots:
        if snap.u.values.min() <= 0.0:
            hyp = False
            flags.append("nonpositive-u")
            break
        if snap.u.values.max() > a * (1.0 + 1e-12):
            hyp = False
            flags.append("u-exceeds-a")
            break

    best, arg, t_min = 0.0, (0.0, 0, 0), None
    if hyp:
        for snap in trajectory.snapshots:
            if snap.t <= 0.0:
                continue
            if t_min is None:
                t_min = snap.t
            u = snap.u.values
            grad = derivative_norm(snap.metric, snap.u, 1).values
            num = grad / u
            with np.errstate(divide="ignore", invalid="ignore"):
                log_term = np.log(np.maximum(a / u, 1.0))
                den = np.sqrt(1.0 / snap.t) * np.sqrt(log_term)
                ratio = np.where((den == 0.0) & (num == 0.0), 0.0, num / den)
            flat_idx = int(np.argmax(ratio))
            ix, iy = np.unravel_index(flat_idx, ratio.shape)
            if ratio[ix, iy] > best:
                best = float(ratio[ix, iy])
                arg = (snap.t, int(ix), int(iy))
    return _finish(
        "zhang-log-gradient", best, 1.0, hyp, flags,
        0.0, a, 1, 0.0 if t_min is None else t_min, arg,
    )


def check_laplacian_bound(trajectory: FlowTrajectory, a: float, B: float) -> EstimateReport:
    """(|Δu| + |∇u|²/u - aR)·t ≤ B·a on M × (t_min, T], for 0 < u ≤ a."""
    flags: list[str] = []
    hyp = True
    for snap in trajectory.snapshots:
        if snap.u.values.min() <= 0.0:
            hyp = False
            flags.append("nonpositive-u")
            break
        if snap.u.values.max() > a * (1.0 + 1e-12):
            hyp = False
            flags.append("u-exceeds-a")
            break

    best, arg, t_min = 0.0, (0.0, 0, 0), None
    if hyp:
        for snap in trajectory.snapshots:
            if snap.t <= 0.0:
                continue
            if t_min is None:
                t_min = snap.t
            u = snap.u.values
            lap = np.abs(laplace_beltrami(snap.metric, snap.u).values)
            grad = derivative_norm(snap.metric, snap.u, 1).values
            curv = scalar_curvature(snap.metric).values
            expr = (lap + grad**2 / u - a * curv) * (snap.t / a)
            flat_idx = int(np.argmax(expr))
            ix, iy = np.unravel_index(flat_idx, expr.shape)
            if expr[ix, iy] > best:
                best = float(expr[ix, iy])
                arg = (snap.t, int(ix), int(iy))
    return _finish(
        "laplacian-bound", best, B, hyp, flags,
        0.0, a, 2, 0.0 if t_min is None else t_min, arg,
    )
