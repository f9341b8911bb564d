"""Fixed-step explicit integration of flow fields and the drift-vs-h study."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DivergenceError
from .flows import FlowField
from .geometry import Diffeomorphism, OptimizerState, pushforward_state

SCHEMES = ("euler", "rk4")


@dataclass(frozen=True)
class Trajectory:
    """States of one fixed-step integration, including the initial state."""

    scheme: str
    step: float
    states: tuple

    @property
    def steps(self) -> list:
        return [(s.time, s) for s in self.states]

    @property
    def final(self) -> OptimizerState:
        return self.states[-1]


def _unpack(state: OptimizerState):
    return state.time, state.as_vector(), state.order, state.theta.shape[0]


def _pack(time, vec, order, dim) -> OptimizerState:
    derivs = tuple(vec[i * dim : (i + 1) * dim] for i in range(order))
    return OptimizerState(time, derivs)


def integrate(
    flow: FlowField,
    start: OptimizerState,
    h: float,
    steps: int,
    scheme: str = "euler",
) -> Trajectory:
    """Integrate `flow` for `steps` fixed steps of size `h`.

    Nonautonomous flows advance xi together with the state.  Raises
    `DivergenceError` with the offending step index if the state leaves the
    finite domain.
    """
    if h <= 0.0:
        raise ConfigurationError(f"step size must be positive, got {h}")
    if steps < 1:
        raise ConfigurationError(f"step count must be >= 1, got {steps}")
    if scheme not in SCHEMES:
        raise ConfigurationError(f"unknown scheme {scheme!r}")
    if start.order != flow.order:
        raise ConfigurationError("initial state order does not match flow order")

    time, vec, order, dim = _unpack(start)

    def rhs(t, y):
        return flow(_pack(t, y, order, dim)).as_vector()

    states = [start]
    for k in range(steps):
        try:
            if scheme == "euler":
                vec = vec + h * rhs(time, vec)
            else:
                k1 = rhs(time, vec)
                k2 = rhs(time + 0.5 * h, vec + 0.5 * h * k1)
                k3 = rhs(time + 0.5 * h, vec + 0.5 * h * k2)
                k4 = rhs(time + h, vec + h * k3)
                vec = vec + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        except (FloatingPointError, OverflowError) as exc:
            raise DivergenceError(f"flow evaluation diverged: {exc}", step_index=k) from exc
        time = time + h
        if not np.all(np.isfinite(vec)):
            raise DivergenceError(
                f"non-finite state after step {k + 1}", step_index=k + 1
            )
        states.append(_pack(time, vec, order, dim))
    return Trajectory(scheme, h, tuple(states))


def trajectory_csv_text(trajectory: Trajectory) -> str:
    """Columns: xi, theta_1..theta_N and, for order-2 states, u_1..u_N."""
    first = trajectory.states[0]
    dim = first.theta.shape[0]
    header = ["xi"] + [f"theta_{i + 1}" for i in range(dim)]
    if first.order == 2:
        header += [f"u_{i + 1}" for i in range(dim)]
    lines = [",".join(header)]
    for state in trajectory.states:
        row = [repr(float(state.time))] + [repr(float(v)) for v in state.as_vector()]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def write_trajectory_csv(trajectory: Trajectory, path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(trajectory_csv_text(trajectory))


@dataclass(frozen=True)
class DriftResult:
    """Equivariance defect per step size, plus the fitted log-log slope."""

    scheme: str
    points: tuple  # (h, defect) for completed integrations
    diverged: tuple  # h values excluded from the fit
    slope: float


def equivariance_drift(
    flow_builder,
    g: Diffeomorphism,
    start: OptimizerState,
    h_list: Sequence[float],
    horizon: float = 1.0,
    scheme: str = "euler",
) -> DriftResult:
    """How discretization breaks naturality as the step size shrinks.

    Integrates the base-chart flow from `start` and the intrinsically built
    barred flow from the pushed-forward start over a fixed horizon, then
    measures the final-state mismatch in the barred chart.  The per-step
    count is horizon/h, so a p-th order scheme shows slope ~ p.
    """
    if horizon <= 0.0:
        raise ConfigurationError(f"horizon must be positive, got {horizon}")
    base_flow = flow_builder.build()
    barred_flow = flow_builder.build(g)
    start_barred = pushforward_state(g, start)

    points = []
    diverged = []
    for h in h_list:
        steps = max(1, round(horizon / h))
        try:
            base = integrate(base_flow, start, h, steps, scheme=scheme)
            barred = integrate(barred_flow, start_barred, h, steps, scheme=scheme)
        except DivergenceError:
            diverged.append(float(h))
            continue
        mapped = pushforward_state(g, base.final)
        defect = float(np.linalg.norm(mapped.as_vector() - barred.final.as_vector()))
        points.append((float(h), defect))

    usable = [(h, d) for h, d in points if d > 0.0]
    if len(usable) >= 2:
        log_h = np.log([h for h, _ in usable])
        log_d = np.log([d for _, d in usable])
        slope = float(np.polyfit(log_h, log_d, 1)[0])
    else:
        slope = float("nan")
    return DriftResult(scheme, tuple(points), tuple(diverged), slope)
